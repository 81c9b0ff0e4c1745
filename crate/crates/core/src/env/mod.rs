//! The compiler environment: apply pass sequences to IR and measure code size.
//!
//! [`LlvmEnv`] drives a real `opt` binary. [`StaticEnv`] answers from a fixed
//! table and exists so that agent and harness logic can run without LLVM.

mod llvm;
mod static_env;

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::features::FeatureVector;

pub use llvm::{CacheStats, CompilerConfig, FlagStyle, LlvmEnv, TransformedIr};
pub use static_env::{StaticEnv, StaticOutcome, StaticProgram};

#[derive(Debug, thiserror::Error)]
pub enum EnvError {
    #[error("compile error: {stderr}")]
    CompileError { stderr: String },
    #[error("timed out after {0:?}")]
    Timeout(std::time::Duration),
    #[error("unknown program '{0}'")]
    UnknownProgram(String),
    #[error("no usable opt binary: {0}")]
    MissingBinary(String),
    #[error("environment I/O: {0}")]
    Io(#[from] std::io::Error),
}

impl EnvError {
    fn status(&self) -> EnvStatus {
        match self {
            EnvError::Timeout(_) => EnvStatus::Timeout,
            _ => EnvStatus::CompileError,
        }
    }

    fn excerpt(&self) -> String {
        let s = match self {
            EnvError::CompileError { stderr } => stderr.clone(),
            other => other.to_string(),
        };
        excerpt(&s)
    }
}

/// Keeps the tail of a long diagnostic.
pub(crate) fn excerpt(s: &str) -> String {
    const MAX: usize = 1024;
    let s = s.trim();
    if s.len() <= MAX {
        return s.to_string();
    }
    let mut start = s.len() - MAX;
    while !s.is_char_boundary(start) {
        start += 1;
    }
    format!("...{}", &s[start..])
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnvStatus {
    Success,
    CompileError,
    Timeout,
}

impl fmt::Display for EnvStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EnvStatus::Success => "success",
            EnvStatus::CompileError => "compile_error",
            EnvStatus::Timeout => "timeout",
        })
    }
}

/// Standard pipelines used as baselines.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum OptLevel {
    O1,
    O2,
    O3,
    Oz,
}

impl OptLevel {
    pub const ALL: [OptLevel; 4] = [OptLevel::O1, OptLevel::O2, OptLevel::O3, OptLevel::Oz];

    pub fn flag(self) -> &'static str {
        match self {
            OptLevel::O1 => "-O1",
            OptLevel::O2 => "-O2",
            OptLevel::O3 => "-O3",
            OptLevel::Oz => "-Oz",
        }
    }

    pub fn parse(s: &str) -> Option<OptLevel> {
        match s.trim_start_matches('-').to_ascii_lowercase().as_str() {
            "o1" => Some(OptLevel::O1),
            "o2" => Some(OptLevel::O2),
            "o3" => Some(OptLevel::O3),
            "oz" => Some(OptLevel::Oz),
            _ => None,
        }
    }
}

/// `(before - after) / before`, or `(0, true)` when `before` is zero.
pub fn reduction_ratio(before: u64, after: u64) -> (f64, bool) {
    if before == 0 {
        (0.0, true)
    } else {
        ((before as f64 - after as f64) / before as f64, false)
    }
}

/// Outcome of one `instrcount` tool call.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstrCountResult {
    pub status: EnvStatus,
    pub ic_unopt: u64,
    pub ic_after: u64,
    pub ic_oz: u64,
    /// Reduction relative to the input IR.
    pub delta_ic: f64,
    pub improvement_over_oz: f64,
    /// Set when `ic_unopt` is zero and `delta_ic` is reported as 0.
    #[serde(default)]
    pub delta_degenerate: bool,
    /// Set when `ic_oz` is zero and `improvement_over_oz` is reported as 0.
    #[serde(default)]
    pub oz_degenerate: bool,
    #[serde(default)]
    pub stderr_excerpt: String,
}

impl InstrCountResult {
    pub fn from_counts(ic_unopt: u64, ic_after: u64, ic_oz: u64) -> Self {
        let (delta_ic, delta_degenerate) = reduction_ratio(ic_unopt, ic_after);
        let (improvement_over_oz, oz_degenerate) = reduction_ratio(ic_oz, ic_after);
        InstrCountResult {
            status: EnvStatus::Success,
            ic_unopt,
            ic_after,
            ic_oz,
            delta_ic,
            improvement_over_oz,
            delta_degenerate,
            oz_degenerate,
            stderr_excerpt: String::new(),
        }
    }

    pub fn failed(status: EnvStatus, ic_unopt: u64, ic_oz: u64, stderr: String) -> Self {
        InstrCountResult {
            status,
            ic_unopt,
            ic_after: 0,
            ic_oz,
            delta_ic: 0.0,
            improvement_over_oz: 0.0,
            delta_degenerate: false,
            oz_degenerate: false,
            stderr_excerpt: stderr,
        }
    }

    pub fn is_success(&self) -> bool {
        self.status == EnvStatus::Success
    }

    /// The JSON object the agent sees as the tool response.
    pub fn to_tool_response(&self) -> serde_json::Value {
        let mut v = serde_json::json!({
            "status": self.status.to_string(),
            "improvement_over_oz": self.improvement_over_oz,
        });
        if !self.is_success() {
            v["reason"] = self.stderr_excerpt.clone().into();
        }
        v
    }
}

/// Maps program ids to IR files.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProgramRegistry {
    programs: BTreeMap<String, PathBuf>,
}

impl ProgramRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    /// Returns the previous path if `id` was already registered.
    pub fn insert(&mut self, id: impl Into<String>, path: impl Into<PathBuf>) -> Option<PathBuf> {
        self.programs.insert(id.into(), path.into())
    }

    pub fn get(&self, id: &str) -> Option<&Path> {
        self.programs.get(id).map(PathBuf::as_path)
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.programs.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.programs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.programs.is_empty()
    }
}

/// Anything that can measure the instruction count of a registered program
/// after a flag sequence.
pub trait Environment: Send + Sync {
    /// Instruction count after `flags`. An empty list measures the input.
    fn measure(&self, program_id: &str, flags: &[String]) -> Result<u64, EnvError>;

    /// Static features of the unoptimized program.
    fn features(&self, program_id: &str) -> Result<FeatureVector, EnvError>;

    fn unoptimized(&self, program_id: &str) -> Result<u64, EnvError> {
        self.measure(program_id, &[])
    }

    fn baseline(&self, program_id: &str, level: OptLevel) -> Result<u64, EnvError> {
        self.measure(program_id, &[level.flag().to_string()])
    }

    /// Failures other than an unknown program come back in-band as the
    /// result's status.
    fn instrcount(&self, program_id: &str, flags: &[String]) -> Result<InstrCountResult, EnvError> {
        let in_band = |e: EnvError, unopt: u64, oz: u64| match e {
            EnvError::UnknownProgram(_) => Err(e),
            e => Ok(InstrCountResult::failed(e.status(), unopt, oz, e.excerpt())),
        };
        let unopt = match self.unoptimized(program_id) {
            Ok(v) => v,
            Err(e) => return in_band(e, 0, 0),
        };
        let oz = match self.baseline(program_id, OptLevel::Oz) {
            Ok(v) => v,
            Err(e) => return in_band(e, unopt, 0),
        };
        match self.measure(program_id, flags) {
            Ok(after) => Ok(InstrCountResult::from_counts(unopt, after, oz)),
            Err(e) => in_band(e, unopt, oz),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ratios() {
        let r = InstrCountResult::from_counts(1000, 800, 900);
        assert_eq!(r.delta_ic, 0.2);
        assert!((r.improvement_over_oz - 1.0 / 9.0).abs() < 1e-15);
        let z = InstrCountResult::from_counts(0, 0, 0);
        assert!(z.delta_degenerate && z.oz_degenerate);
        assert_eq!((z.delta_ic, z.improvement_over_oz), (0.0, 0.0));
        let same = InstrCountResult::from_counts(10, 7, 7);
        assert_eq!(same.improvement_over_oz, 0.0);
    }

    #[test]
    fn tool_response_shape() {
        let r = InstrCountResult::from_counts(100, 58, 100);
        assert_eq!(
            r.to_tool_response(),
            serde_json::json!({"status": "success", "improvement_over_oz": 0.42})
        );
        let f = InstrCountResult::failed(EnvStatus::CompileError, 1, 1, "bad flag".into());
        assert_eq!(f.to_tool_response()["status"], "compile_error");
    }

    #[test]
    fn opt_levels() {
        assert_eq!(OptLevel::parse("oz"), Some(OptLevel::Oz));
        assert_eq!(OptLevel::parse("-O2"), Some(OptLevel::O2));
        assert_eq!(OptLevel::parse("O4"), None);
        assert_eq!(OptLevel::Oz.flag(), "-Oz");
    }

    #[test]
    fn long_diagnostics_keep_their_tail() {
        let long = "x".repeat(5000) + "END";
        let e = excerpt(&long);
        assert!(e.starts_with("...") && e.ends_with("END") && e.len() < 1100);
    }
}
