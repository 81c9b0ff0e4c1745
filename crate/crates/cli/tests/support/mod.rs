//! Helpers for tests that drive the real compiler through the bundled
//! `aware-llvm-opt` shim.
#![allow(dead_code)]

use std::path::PathBuf;
use std::process::Command;

use aware_core::env::{CompilerConfig, LlvmEnv};
use aware_core::harness::BenchmarkManifest;

pub const SHIM: &str = env!("CARGO_BIN_EXE_aware-llvm-opt");
pub const CLI: &str = env!("CARGO_BIN_EXE_aware-opt");

pub fn root() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../..")
}

/// The shim answers `--version` only when libLLVM loads.
pub fn llvm_available() -> bool {
    Command::new(SHIM).arg("--version").output().is_ok_and(|o| o.status.success())
}

pub fn corpus() -> BenchmarkManifest {
    BenchmarkManifest::load(&root().join("corpus/manifest.json")).unwrap()
}

/// Environment over `manifest` with its own work directory.
pub fn llvm_env(manifest: &BenchmarkManifest, work: &std::path::Path) -> LlvmEnv {
    LlvmEnv::new(CompilerConfig::new(SHIM, work).unwrap(), manifest.registry())
}
