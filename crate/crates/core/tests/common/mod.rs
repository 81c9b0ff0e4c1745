//! Oracles and fixtures shared by the property tests and the acceptance
//! suite. Included by path from other test targets, so not every item is
//! used everywhere.
#![allow(dead_code)]

use std::path::PathBuf;

use aware_core::agent::{parse_tool_turn, parse_turn, AgentTurn};
use aware_core::env::{EnvStatus, InstrCountResult};
use aware_core::features::{FeatureVector, NUM_FEATURES};
use aware_core::passes::{PassCatalog, PassDescriptor, PassSequence};
use proptest::prelude::*;
use serde::Deserialize;

/// `crates/core`, whichever crate includes this file.
pub fn core_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../core")
}

/// Random 8-pass catalog. Deps only point at lower indices, so the graph is
/// acyclic by construction.
pub fn arb_catalog() -> impl Strategy<Value = PassCatalog> {
    (
        prop::collection::vec(prop::bool::weighted(0.2), 64),
        prop::collection::vec(prop::bool::weighted(0.1), 64),
    )
        .prop_map(|(dep_bits, conf_bits)| {
            let n = 8;
            let mut passes: Vec<PassDescriptor> = (0..n)
                .map(|i| PassDescriptor {
                    index: i,
                    flag: format!("--s{i}"),
                    semantics: String::new(),
                    deps: Default::default(),
                    conflicts: Default::default(),
                })
                .collect();
            for i in 0..n {
                for j in 0..i {
                    if dep_bits[i * n + j] {
                        passes[i].deps.insert(j);
                    }
                    if conf_bits[i * n + j] {
                        passes[i].conflicts.insert(j);
                        passes[j].conflicts.insert(i);
                    }
                }
            }
            PassCatalog::new(passes).unwrap()
        })
}

/// Pairwise check over positions: every occurrence needs each dependency at
/// some earlier position, and no two positions may hold conflicting passes.
pub fn brute_force_valid(seq: &[usize], c: &PassCatalog) -> bool {
    if seq.iter().any(|&p| p >= c.len()) {
        return false;
    }
    for y in 0..seq.len() {
        let py = c.get(seq[y]).unwrap();
        for &d in &py.deps {
            if !(0..y).any(|x| seq[x] == d) {
                return false;
            }
        }
        for (x, px) in seq.iter().enumerate() {
            if x != y && py.conflicts.contains(px) {
                return false;
            }
        }
    }
    true
}

pub fn arb_features() -> impl Strategy<Value = FeatureVector> {
    prop::collection::vec(prop_oneof![3 => Just(0u64), 2 => 0u64..4, 1 => 0u64..500], NUM_FEATURES)
        .prop_map(|v| FeatureVector::from_array(v.try_into().unwrap()))
}

pub fn arb_entry() -> impl Strategy<Value = (FeatureVector, Vec<usize>, f64)> {
    (
        arb_features(),
        prop::collection::vec(0usize..6, 1..3),
        prop_oneof![Just(0.1), Just(-0.2), -1.0f64..1.0],
    )
}

/// Independent scorer: plain loops, explicit tie-break on insertion
/// position, alpha fixed at 0.5.
pub fn retrieval_oracle(
    store: &[(FeatureVector, PassSequence, f64)],
    neg: &[PassSequence],
    q: &FeatureVector,
    k: usize,
) -> Vec<usize> {
    let live: Vec<usize> = (0..store.len()).filter(|&i| !neg.contains(&store[i].1)).collect();
    let mut lo = f64::MAX;
    let mut hi = f64::MIN;
    for &i in &live {
        lo = lo.min(store[i].2);
        hi = hi.max(store[i].2);
    }
    let mut scored: Vec<(f64, usize)> = live
        .iter()
        .map(|&i| {
            let (f, _, e) = &store[i];
            let mut dot = 0.0;
            let mut na = 0.0;
            let mut nb = 0.0;
            for j in 0..NUM_FEATURES {
                let a = (q.get(j) as f64).ln_1p();
                let b = (f.get(j) as f64).ln_1p();
                dot += a * b;
                na += a * a;
                nb += b * b;
            }
            let cos = if na == 0.0 && nb == 0.0 {
                1.0
            } else if na == 0.0 || nb == 0.0 {
                0.0
            } else {
                (dot / (na.sqrt() * nb.sqrt())).clamp(-1.0, 1.0)
            };
            let sim = (cos + 1.0) / 2.0;
            let norm = if hi > lo { (e - lo) / (hi - lo) } else { 0.5 };
            (0.5 * sim + 0.5 * norm, i)
        })
        .collect();
    scored.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)));
    scored.into_iter().take(k).map(|(_, i)| i).collect()
}

/// One row of `data/reward/delta_ic.json`. Expected values were computed
/// with exact rationals and rounded once.
#[derive(Debug, Deserialize)]
pub struct DeltaCase {
    pub before: u64,
    pub after: u64,
    pub expected: f64,
    pub degenerate: bool,
}

pub fn delta_cases() -> Vec<DeltaCase> {
    let text = std::fs::read_to_string(core_dir().join("tests/data/reward/delta_ic.json")).unwrap();
    serde_json::from_str(&text).unwrap()
}

#[derive(Debug, Deserialize)]
pub struct RawTurn {
    pub role: String,
    pub raw: String,
}

/// One row of `data/reward/transcripts.json`, labelled by hand.
#[derive(Debug, Deserialize)]
pub struct Transcript {
    pub name: String,
    pub turns: Vec<RawTurn>,
    /// Status of the compile that follows the answer.
    pub status: EnvStatus,
    pub format: u8,
    pub answer: u8,
}

impl Transcript {
    pub fn parsed(&self) -> Vec<AgentTurn> {
        self.turns
            .iter()
            .map(|t| match t.role.as_str() {
                "assistant" => parse_turn(&t.raw),
                "tool" => parse_tool_turn(&t.raw),
                r => panic!("{}: role {r}", self.name),
            })
            .collect()
    }

    pub fn answered_flags(turns: &[AgentTurn]) -> Vec<String> {
        turns.iter().rev().find_map(|t| t.answer()).unwrap_or_default()
    }

    pub fn env_result(&self) -> InstrCountResult {
        match self.status {
            EnvStatus::Success => InstrCountResult::from_counts(100, 80, 90),
            s => InstrCountResult::failed(s, 100, 90, "error: scripted failure".into()),
        }
    }
}

pub fn transcripts() -> Vec<Transcript> {
    let text = std::fs::read_to_string(core_dir().join("tests/data/reward/transcripts.json")).unwrap();
    serde_json::from_str(&text).unwrap()
}

/// The flags the exemplar exchange retrieves, verifies and answers.
pub const EXAMPLE_FLAGS: [&str; 4] = ["--inferattrs", "--dse", "--mldst-motion", "--mergefunc"];
pub const FIB_OZ: u64 = 23;
pub const FIB_EXAMPLE: u64 = 20;
pub const FIB_REGRESSION: u64 = 30;

pub fn example_flags() -> Vec<String> {
    EXAMPLE_FLAGS.iter().map(|s| s.to_string()).collect()
}

pub fn fib_features() -> FeatureVector {
    let text = std::fs::read_to_string(core_dir().join("../../corpus/fib.ll")).unwrap();
    aware_core::features::extract_features(&aware_core::ir::parse_ir(&text).unwrap())
}

/// Table-driven stand-in for `fib`: the example flags beat `-Oz`, `--gvn`
/// alone loses to it.
pub fn fib_env() -> aware_core::env::StaticEnv {
    use aware_core::env::{OptLevel, StaticEnv, StaticOutcome, StaticProgram};
    let fv = fib_features();
    StaticEnv::new().with_program(
        "fib",
        StaticProgram::new(fv.total_insts())
            .features(fv)
            .baseline(OptLevel::Oz, FIB_OZ)
            .sequence(&EXAMPLE_FLAGS, StaticOutcome::Count(FIB_EXAMPLE))
            .sequence(&["--gvn"], StaticOutcome::Count(FIB_REGRESSION))
            .sequence(&["--slow"], StaticOutcome::Timeout),
    )
}

/// Knowledge base holding the example flags as the only entry.
pub fn fib_kb() -> std::sync::RwLock<aware_core::kb::KnowledgeBase> {
    use aware_core::kb::{EmpiricalEntry, KnowledgeBase};
    let catalog = std::sync::Arc::new(PassCatalog::production().clone());
    let mut kb = KnowledgeBase::new(catalog.clone());
    kb.insert_empirical(EmpiricalEntry {
        features: fib_features(),
        sequence: aware_core::passes::parse_flags(&EXAMPLE_FLAGS, &catalog).unwrap(),
        effect: (FIB_OZ - FIB_EXAMPLE) as f64 / FIB_OZ as f64,
        provenance: "fixture".into(),
        note: "fib".into(),
    })
    .unwrap();
    std::sync::RwLock::new(kb)
}

/// Four programs `p1`..`p4` in one suite, backed by empty files in `dir`.
pub fn four_programs(dir: &std::path::Path) -> (aware_core::harness::BenchmarkManifest, aware_core::env::StaticEnv) {
    use aware_core::env::{OptLevel, StaticEnv, StaticOutcome, StaticProgram};
    let mut env = StaticEnv::new();
    let mut programs = Vec::new();
    for (i, ic) in [100u64, 200, 300, 400].into_iter().enumerate() {
        let id = format!("p{}", i + 1);
        std::fs::write(dir.join(format!("{id}.ll")), "").unwrap();
        programs.push(json_program(&id));
        env = env.with_program(
            &id,
            StaticProgram::new(ic)
                .baseline(OptLevel::Oz, ic / 2)
                .sequence(&["--gvn"], StaticOutcome::Count(ic * 3 / 4)),
        );
    }
    let text = serde_json::json!({"suites": [{"name": "s", "programs": programs}]}).to_string();
    let manifest = aware_core::harness::BenchmarkManifest::from_json(&text, dir).unwrap();
    (manifest, env)
}

fn json_program(id: &str) -> serde_json::Value {
    serde_json::json!({"id": id, "ir_path": format!("{id}.ll")})
}

/// Answers `--gvn`, except on `bad_program` where it answers a flag outside
/// the catalog.
pub struct OneBadAnswer {
    pub bad_program: String,
}

impl aware_core::agent::Policy for OneBadAnswer {
    fn name(&self) -> String {
        "one_bad".into()
    }

    fn respond(&mut self, ctx: &aware_core::agent::PolicyContext<'_>) -> Result<String, aware_core::agent::AgentError> {
        let flag = if ctx.program_id == self.bad_program { "--no-such-pass" } else { "--gvn" };
        Ok(format!("<think>one pass</think><answer>[\"{flag}\"]</answer>"))
    }
}

pub fn empty_kb() -> std::sync::RwLock<aware_core::kb::KnowledgeBase> {
    std::sync::RwLock::new(aware_core::kb::KnowledgeBase::new(std::sync::Arc::new(
        PassCatalog::production().clone(),
    )))
}
