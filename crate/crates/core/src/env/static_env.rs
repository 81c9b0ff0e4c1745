use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{EnvError, Environment, OptLevel};
use crate::features::{idx, FeatureVector};
use crate::passes::PassCatalog;

/// Canned answer for one flag sequence.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StaticOutcome {
    Count(u64),
    CompileError(String),
    Timeout,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StaticProgram {
    pub ic_unopt: u64,
    #[serde(default)]
    pub features: FeatureVector,
    #[serde(default)]
    pub baselines: BTreeMap<OptLevel, u64>,
    /// Keyed by the flags joined with single spaces.
    #[serde(default)]
    pub sequences: BTreeMap<String, StaticOutcome>,
}

/// Table-driven environment. Sequences missing from the table leave the
/// count unchanged; flags outside the production catalog fail to compile.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StaticEnv {
    pub programs: BTreeMap<String, StaticProgram>,
}

impl StaticEnv {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_program(mut self, id: &str, program: StaticProgram) -> Self {
        self.programs.insert(id.to_string(), program);
        self
    }
}

impl StaticProgram {
    /// A program whose only known feature is its instruction count.
    pub fn new(ic_unopt: u64) -> Self {
        let mut features = FeatureVector::default();
        features.set(idx::TOTAL_INSTS, ic_unopt);
        StaticProgram {
            ic_unopt,
            features,
            baselines: BTreeMap::new(),
            sequences: BTreeMap::new(),
        }
    }

    pub fn features(mut self, features: FeatureVector) -> Self {
        self.features = features;
        self
    }

    pub fn baseline(mut self, level: OptLevel, ic: u64) -> Self {
        self.baselines.insert(level, ic);
        self
    }

    pub fn sequence<S: AsRef<str>>(mut self, flags: &[S], outcome: StaticOutcome) -> Self {
        self.sequences.insert(key(flags), outcome);
        self
    }
}

fn key<S: AsRef<str>>(flags: &[S]) -> String {
    flags.iter().map(|f| f.as_ref()).collect::<Vec<_>>().join(" ")
}

impl StaticEnv {
    fn program(&self, id: &str) -> Result<&StaticProgram, EnvError> {
        self.programs
            .get(id)
            .ok_or_else(|| EnvError::UnknownProgram(id.to_string()))
    }
}

impl Environment for StaticEnv {
    fn features(&self, program_id: &str) -> Result<FeatureVector, EnvError> {
        Ok(self.program(program_id)?.features)
    }

    fn measure(&self, program_id: &str, flags: &[String]) -> Result<u64, EnvError> {
        let p = self.program(program_id)?;
        if flags.is_empty() {
            return Ok(p.ic_unopt);
        }
        if let [only] = flags {
            if let Some(level) = OptLevel::parse(only) {
                if let Some(&v) = p.baselines.get(&level) {
                    return Ok(v);
                }
            }
        }
        match p.sequences.get(&key(flags)) {
            Some(StaticOutcome::Count(v)) => Ok(*v),
            Some(StaticOutcome::CompileError(e)) => Err(EnvError::CompileError { stderr: e.clone() }),
            Some(StaticOutcome::Timeout) => Err(EnvError::Timeout(super::llvm::DEFAULT_TIMEOUT)),
            None => {
                let catalog = PassCatalog::production();
                match flags.iter().find(|f| catalog.index_of(f).is_none()) {
                    Some(bad) => Err(EnvError::CompileError {
                        stderr: format!("unknown pass name '{bad}'"),
                    }),
                    None => Ok(p.ic_unopt),
                }
            }
        }
    }
}
