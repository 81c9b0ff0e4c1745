//! The compiler environment on the shipped corpus, through the shim.

mod support;

use aware_core::env::{EnvError, EnvStatus, Environment, LlvmEnv, OptLevel};
use aware_core::features::idx;
use aware_core::passes::PassCatalog;
use support::{corpus, llvm_available, llvm_env};

macro_rules! require_llvm {
    () => {
        if !llvm_available() {
            eprintln!("skipping: libLLVM not loadable");
            return;
        }
    };
}

#[test]
fn printed_counts_match_the_parser() {
    require_llvm!();
    let m = corpus();
    let work = tempfile::tempdir().unwrap();
    let env = llvm_env(&m, work.path());
    for p in m.programs() {
        let via_opt = env.count_instructions(&p.ir_path).unwrap();
        let fv = env.features(&p.id).unwrap();
        assert_eq!(via_opt, fv.get(idx::TOTAL_INSTS), "{}", p.id);
        assert_eq!(LlvmEnv::count_instructions_internal(&p.ir_path).unwrap(), via_opt);
        assert_eq!(env.unoptimized(&p.id).unwrap(), via_opt);
    }
}

#[test]
fn single_passes_and_baselines() {
    require_llvm!();
    let m = corpus();
    let work = tempfile::tempdir().unwrap();
    let env = llvm_env(&m, work.path());
    let before = env.unoptimized("fib").unwrap();
    assert!(env.measure("fib", &["--dce".into(), "--mem2reg".into()]).unwrap() < before);
    let oz = env.instrcount("fib", &["-Oz".into()]).unwrap();
    assert_eq!(oz.status, EnvStatus::Success);
    assert_eq!(oz.improvement_over_oz, 0.0);
    assert_eq!(oz.ic_after, env.baseline("fib", OptLevel::Oz).unwrap());
    assert!(oz.delta_ic > 0.0);
}

#[test]
fn bad_flag_is_an_in_band_failure() {
    require_llvm!();
    let m = corpus();
    let work = tempfile::tempdir().unwrap();
    let env = llvm_env(&m, work.path());
    let r = env.instrcount("gcd", &["--not-a-pass".into()]).unwrap();
    assert_eq!(r.status, EnvStatus::CompileError);
    assert!(!r.stderr_excerpt.is_empty());
    assert!(matches!(env.instrcount("nope", &[]), Err(EnvError::UnknownProgram(_))));
    assert_eq!(std::fs::read_dir(work.path()).unwrap().count(), 0);
}

#[test]
fn cache_hits_on_repeats() {
    require_llvm!();
    let m = corpus();
    let work = tempfile::tempdir().unwrap();
    let env = llvm_env(&m, work.path());
    let flags = vec!["--sroa".to_string(), "--gvn".to_string()];
    let a = env.measure("dot", &flags).unwrap();
    let misses = env.cache_stats().misses;
    assert_eq!(env.measure("dot", &flags).unwrap(), a);
    assert_eq!(env.cache_stats().misses, misses);
    assert!(env.cache_stats().hits >= 1);
}

#[test]
fn missing_file_is_a_compile_error() {
    require_llvm!();
    let dir = tempfile::tempdir().unwrap();
    let ir = dir.path().join("gone.ll");
    std::fs::copy(support::root().join("corpus/gcd.ll"), &ir).unwrap();
    let mut reg = aware_core::env::ProgramRegistry::new();
    reg.insert("gone", &ir);
    let env = LlvmEnv::new(
        aware_core::env::CompilerConfig::new(support::SHIM, dir.path().join("work")).unwrap(),
        reg,
    );
    assert!(env.unoptimized("gone").is_ok());
    std::fs::remove_file(&ir).unwrap();
    let r = env.instrcount("gone", &["--gvn".into()]).unwrap();
    assert_eq!(r.status, EnvStatus::CompileError);
}

/// Every catalog pass either transforms the program into IR this crate can
/// read back, or is reported as unavailable by the shim.
#[test]
fn every_pass_output_is_parseable() {
    require_llvm!();
    let m = corpus();
    let work = tempfile::tempdir().unwrap();
    let env = llvm_env(&m, work.path());
    let ir = &m.programs().find(|p| p.id == "qsort").unwrap().ir_path;
    let mut unavailable = Vec::new();
    for p in PassCatalog::production().passes() {
        let flag = p.flag.clone();
        match env.apply_passes(ir, std::slice::from_ref(&flag)) {
            Ok(t) => {
                LlvmEnv::count_instructions_internal(&t.path).unwrap_or_else(|e| panic!("{flag}: {e}"));
            }
            Err(EnvError::CompileError { .. }) => unavailable.push(flag),
            Err(e) => panic!("{flag}: {e}"),
        }
    }
    // Passes missing from the LLVM 14 legacy pipeline.
    assert!(unavailable.len() <= 2, "{unavailable:?}");
}
