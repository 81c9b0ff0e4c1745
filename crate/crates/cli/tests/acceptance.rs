//! Acceptance checks, one line per criterion. Runs without the libtest
//! harness so the lines always reach the output.

#[path = "../../core/tests/common/mod.rs"]
mod common;
mod support;

use std::sync::{Arc, RwLock};
use std::time::{Duration, Instant};

use aware_core::agent::{
    run_episode, CaseStudyPolicy, EpisodeConfig, Policy, RetrievalPolicy, ScriptedPolicy, Termination,
};
use aware_core::dataset::trajectory_to_record;
use aware_core::env::{Environment, OptLevel};
use aware_core::features::{extract_features, feature_index, NUM_FEATURES};
use aware_core::harness::{evaluate_method, EvalOptions, Method};
use aware_core::ir::parse_ir;
use aware_core::kb::{EmpiricalEntry, KbError, KnowledgeBase};
use aware_core::passes::{validate_sequence, PassCatalog, PassSequence};
use aware_core::reward::{score_answer, score_format, score_performance, total_reward, RewardInputs, RewardWeights};
use proptest::prelude::*;
use proptest::test_runner::{Config, RngAlgorithm, TestRng, TestRunner};

enum Verdict {
    Pass(String),
    Fail(String),
    Skip(String),
}

fn verdict(ok: bool, detail: String) -> Verdict {
    if ok {
        Verdict::Pass(detail)
    } else {
        Verdict::Fail(detail)
    }
}

fn runner(cases: u32) -> TestRunner {
    TestRunner::new_with_rng(
        Config {
            cases,
            failure_persistence: None,
            ..Config::default()
        },
        TestRng::deterministic_rng(RngAlgorithm::ChaCha),
    )
}

fn validator_oracle() -> Verdict {
    let start = Instant::now();
    let strategy = (common::arb_catalog(), prop::collection::vec(0usize..9, 0..=12));
    let result = runner(1000).run(&strategy, |(c, seq)| {
        let report = validate_sequence(&PassSequence::new(seq.clone()), &c);
        prop_assert_eq!(report.valid, common::brute_force_valid(&seq, &c));
        Ok(())
    });
    let t = start.elapsed();
    match result {
        Ok(()) => verdict(t < Duration::from_secs(5), format!("1000 sequences agree, {t:.2?}")),
        Err(e) => Verdict::Fail(e.to_string()),
    }
}

fn feature_oracle() -> Verdict {
    let dir = common::core_dir().join("tests/data/features");
    let table: std::collections::BTreeMap<String, std::collections::BTreeMap<String, u64>> =
        serde_json::from_str(&std::fs::read_to_string(dir.join("expected.json")).unwrap()).unwrap();
    let texts: Vec<(String, String)> = table
        .keys()
        .map(|n| (n.clone(), std::fs::read_to_string(dir.join(format!("{n}.ll"))).unwrap()))
        .collect();
    let start = Instant::now();
    let mut mismatches = 0;
    let mut saw_empty = false;
    for (name, text) in &texts {
        let got = extract_features(&parse_ir(text).unwrap());
        let mut want = [0u64; NUM_FEATURES];
        for (k, v) in &table[name] {
            want[feature_index(k).unwrap()] = *v;
        }
        saw_empty |= want.iter().all(|&v| v == 0) && got.values().iter().all(|&v| v == 0);
        mismatches += (0..NUM_FEATURES).filter(|&i| got.get(i) != want[i]).count();
    }
    let t = start.elapsed();
    verdict(
        mismatches == 0 && saw_empty && texts.len() >= 20 && t < Duration::from_secs(1),
        format!("{} snippets, {mismatches} mismatched values, empty module covered: {saw_empty}, {t:.2?}", texts.len()),
    )
}

fn reward_exactness() -> Verdict {
    let cases = common::delta_cases();
    let exact = cases.iter().filter(|c| {
        let (v, d) = score_performance(c.before, c.after);
        v.to_bits() == c.expected.to_bits() && d == c.degenerate
    });
    let exact = exact.count();
    let catalog = PassCatalog::production();
    let transcripts = common::transcripts();
    let mut ordered = 0;
    let mut labelled = 0;
    let mut exemplar = 0;
    for t in &transcripts {
        let turns = t.parsed();
        let format = score_format(&turns);
        let env = t.env_result();
        let b = total_reward(
            RewardInputs {
                format,
                answer: score_answer(&common::Transcript::answered_flags(&turns), catalog, &env),
                performance: env.is_success().then_some(env.delta_ic),
                improvement_over_oz: env.improvement_over_oz,
                degenerate: false,
            },
            RewardWeights::default(),
        );
        ordered += usize::from(b.answer <= b.format);
        labelled += usize::from(b.format == t.format && b.answer == t.answer);
        if t.name == "exemplar" {
            exemplar = format;
        }
    }
    verdict(
        cases.len() == 50 && exact == 50 && transcripts.len() == 50 && ordered == 50 && labelled == 50 && exemplar == 1,
        format!(
            "{exact}/{} exact deltas, answer <= format on {ordered}/{} transcripts, {labelled} labels match, exemplar format {exemplar}",
            cases.len(),
            transcripts.len()
        ),
    )
}

fn retrieval_correctness() -> Verdict {
    let strategy = (
        prop::collection::vec(common::arb_entry(), 1..=100),
        prop::collection::vec(prop::collection::vec(0usize..6, 1..3), 10),
        common::arb_features(),
        1usize..=20,
    );
    let leaked = std::cell::Cell::new(0usize);
    let result = runner(200).run(&strategy, |(raw, negs, q, k)| {
        let mut kb = KnowledgeBase::new(Arc::new(PassCatalog::production().clone()));
        for (f, s, e) in &raw {
            let _ = kb.insert_empirical(EmpiricalEntry {
                features: *f,
                sequence: s.clone().into(),
                effect: *e,
                provenance: String::new(),
                note: String::new(),
            });
        }
        let neg: Vec<PassSequence> = negs.into_iter().map(PassSequence::from).collect();
        for n in &neg {
            kb.insert_negative(n.clone(), -0.5).unwrap();
        }
        let store: Vec<_> = kb.empirical().iter().map(|e| (e.features, e.sequence.clone(), e.effect)).collect();
        match kb.retrieve(&q, k) {
            Ok(r) => {
                let got: Vec<usize> = r.ranked.iter().map(|x| x.position).collect();
                if r.ranked.iter().any(|x| neg.contains(&x.entry.sequence)) {
                    leaked.set(leaked.get() + 1);
                }
                prop_assert_eq!(got, common::retrieval_oracle(&store, &neg, &q, k));
            }
            Err(KbError::EmptyStore) => prop_assert!(store.is_empty()),
            Err(e) => prop_assert!(false, "{}", e),
        }
        Ok(())
    });
    match result {
        Ok(()) => verdict(leaked.get() == 0, format!("200 instances match brute force, {} black-listed returned", leaked.get())),
        Err(e) => Verdict::Fail(e.to_string()),
    }
}

fn mock_episode() -> Verdict {
    let env = common::fib_env();
    let kb = common::fib_kb();
    let mut policy = ScriptedPolicy::example_exchange(&common::example_flags());
    let t = run_episode("fib", &mut policy, &kb, &env, &EpisodeConfig::default()).unwrap();
    let record = trajectory_to_record(&t).map(|r| serde_json::to_value(r).unwrap());
    let pct = record
        .as_ref()
        .ok()
        .and_then(|v| v["Optimization Effect"]["Improvement (over_oz)"].as_str().map(str::to_string));
    let shaped = pct.as_deref().is_some_and(|p| {
        regex_like_percent(p)
    });
    verdict(
        t.rewards.format == 1 && t.rewards.answer == 1 && t.terminated_by == Termination::Answer && shaped,
        format!(
            "format {}, answer {}, ended by {:?}, improvement {}",
            t.rewards.format,
            t.rewards.answer,
            t.terminated_by,
            pct.unwrap_or_else(|| "missing".into())
        ),
    )
}

/// `-?digits.dd%`
fn regex_like_percent(s: &str) -> bool {
    let Some(body) = s.strip_suffix('%') else { return false };
    let body = body.strip_prefix('-').unwrap_or(body);
    let Some((int, frac)) = body.split_once('.') else { return false };
    !int.is_empty() && int.bytes().all(|b| b.is_ascii_digit()) && frac.len() == 2 && frac.bytes().all(|b| b.is_ascii_digit())
}

fn llvm_integration() -> Verdict {
    if !support::llvm_available() {
        return Verdict::Skip("libLLVM could not be loaded by the shim".into());
    }
    let start = Instant::now();
    let m = support::corpus();
    let work = tempfile::tempdir().unwrap();
    let env = support::llvm_env(&m, work.path());
    let n = m.programs().count();

    let counts_agree = m
        .programs()
        .filter(|p| {
            let fv = env.features(&p.id).unwrap();
            env.count_instructions(&p.ir_path).ok() == Some(fv.total_insts())
        })
        .count();

    let kb = RwLock::new(KnowledgeBase::seeded());
    let opts = EvalOptions::default();
    let oz = evaluate_method(&m, &Method::Baseline(OptLevel::Oz), &env, &kb, &opts).unwrap();
    let oz_nonneg = oz.rows().filter(|(_, r)| r.success && r.reduction >= 0.0).count();
    let oz_pos = oz.rows().filter(|(_, r)| r.success && r.reduction > 0.0).count();

    let agent = Method::Agent(Arc::new(|| Box::new(RetrievalPolicy) as Box<dyn Policy>));
    let ag = evaluate_method(&m, &agent, &env, &kb, &opts).unwrap();
    let from_kb = ag.trajectories.iter().filter(|t| t.answer_from_retrieval).count();
    let at_least_oz = ag.rows().filter(|(_, r)| r.improvement_over_oz.is_some_and(|v| v >= 0.0)).count();
    let t = start.elapsed();
    verdict(
        counts_agree == n && oz_nonneg == n && 2 * oz_pos >= n && at_least_oz >= 3 && t < Duration::from_secs(120),
        format!(
            "(a) counts agree {counts_agree}/{n}; (b) -Oz >= 0 on {oz_nonneg}/{n}, > 0 on {oz_pos}/{n}; \
             (c) top-1 retrieval >= -Oz on {at_least_oz}/{n} ({from_kb} answers retrieved); {t:.1?}"
        ),
    )
}

fn case_study() -> Verdict {
    if !support::llvm_available() {
        return Verdict::Skip("libLLVM could not be loaded by the shim".into());
    }
    let m = support::corpus();
    let work = tempfile::tempdir().unwrap();
    let env = support::llvm_env(&m, work.path());
    let kb = RwLock::new(KnowledgeBase::seeded());
    let cfg = EpisodeConfig {
        write_back: false,
        ..EpisodeConfig::default()
    };
    let mut wins = Vec::new();
    for p in m.programs() {
        let mut policy = CaseStudyPolicy::default();
        let t = run_episode(&p.id, &mut policy, &kb, &env, &cfg).unwrap();
        let first = t.env_results.first().map(|r| r.improvement_over_oz);
        let last = t.final_result.as_ref().filter(|r| r.is_success()).map(|r| r.improvement_over_oz);
        if let (true, Some(f), Some(l)) = (t.answer_from_retrieval, first, last) {
            if l > f {
                wins.push(format!("{} {:+.2}% -> {:+.2}%", p.id, f * 100.0, l * 100.0));
            }
        }
    }
    verdict(
        !wins.is_empty(),
        format!("retrieved sequence beat the first heuristic on {}: {}", wins.len(), wins.join(", ")),
    )
}

fn success_rate_metric() -> Verdict {
    let dir = tempfile::tempdir().unwrap();
    let (m, env) = common::four_programs(dir.path());
    let agent = Method::Agent(Arc::new(|| {
        Box::new(common::OneBadAnswer {
            bad_program: "p2".into(),
        }) as Box<dyn Policy>
    }));
    let r = evaluate_method(&m, &agent, &env, &common::empty_kb(), &EvalOptions::default()).unwrap();
    let rate = r.suites[0].success_rate;
    verdict(rate == Some(0.75), format!("success rate {rate:?}"))
}

type Check = fn() -> Verdict;

fn main() {
    let criteria: [(&str, Check); 8] = [
        ("validator oracle equivalence", validator_oracle),
        ("feature extraction oracle", feature_oracle),
        ("reward exactness", reward_exactness),
        ("retrieval correctness", retrieval_correctness),
        ("end-to-end mock episode", mock_episode),
        ("LLVM integration", llvm_integration),
        ("case-study shape", case_study),
        ("success-rate metric", success_rate_metric),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let v = std::panic::catch_unwind(check).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Verdict::Fail(format!("panicked: {msg}"))
        });
        match v {
            Verdict::Pass(d) => println!("PASS {} {name}: {d}", i + 1),
            Verdict::Fail(d) => {
                failed += 1;
                println!("FAIL {} {name}: {d}", i + 1);
            }
            Verdict::Skip(d) => println!("SKIP {} {name}: {d}", i + 1),
        }
    }
    if failed > 0 {
        std::process::exit(1);
    }
}
