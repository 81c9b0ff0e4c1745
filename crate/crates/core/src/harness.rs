//! Benchmark manifests, method evaluation and report comparison.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::{self, Write as _};
use std::path::{Path, PathBuf};
use std::sync::{Arc, RwLock};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::agent::{run_episode, EpisodeConfig, Policy, Trajectory};
use crate::env::{reduction_ratio, Environment, OptLevel, ProgramRegistry};
use crate::kb::KnowledgeBase;
use crate::passes::{parse_flags, split_flag_list, validate_sequence};

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error("manifest I/O: {0}")]
    Io(#[from] std::io::Error),
    #[error("manifest JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error("program id '{0}' appears more than once")]
    DuplicateId(String),
    #[error("program '{id}': no file at {path}")]
    MissingFile { id: String, path: PathBuf },
    #[error("reports cover different programs (only in a: {only_a:?}; only in b: {only_b:?})")]
    MismatchedPrograms { only_a: Vec<String>, only_b: Vec<String> },
    #[error("unknown method '{0}'")]
    UnknownMethod(String),
    #[error("could not build worker pool: {0}")]
    Pool(String),
    #[error("CSV: {0}")]
    Csv(#[from] csv::Error),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProgramEntry {
    pub id: String,
    pub ir_path: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SuiteSpec {
    pub name: String,
    pub programs: Vec<ProgramEntry>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BenchmarkManifest {
    pub suites: Vec<SuiteSpec>,
}

impl BenchmarkManifest {
    /// Loads a manifest. Relative paths resolve against its directory.
    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path)?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::from_json(&text, base)
    }

    pub fn from_json(text: &str, base: &Path) -> Result<Self, HarnessError> {
        let mut m: BenchmarkManifest = serde_json::from_str(text)?;
        for p in m.suites.iter_mut().flat_map(|s| s.programs.iter_mut()) {
            if p.ir_path.is_relative() {
                p.ir_path = base.join(&p.ir_path);
            }
        }
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let mut seen = BTreeSet::new();
        for p in self.programs() {
            if !seen.insert(p.id.as_str()) {
                return Err(HarnessError::DuplicateId(p.id.clone()));
            }
            if !p.ir_path.is_file() {
                return Err(HarnessError::MissingFile {
                    id: p.id.clone(),
                    path: p.ir_path.clone(),
                });
            }
        }
        Ok(())
    }

    pub fn programs(&self) -> impl Iterator<Item = &ProgramEntry> {
        self.suites.iter().flat_map(|s| s.programs.iter())
    }

    pub fn registry(&self) -> ProgramRegistry {
        let mut r = ProgramRegistry::new();
        for p in self.programs() {
            r.insert(p.id.clone(), p.ir_path.clone());
        }
        r
    }
}

pub type PolicyFactory = Arc<dyn Fn() -> Box<dyn Policy> + Send + Sync>;

/// What produces the optimized program.
#[derive(Clone)]
pub enum Method {
    Baseline(OptLevel),
    Fixed(Vec<String>),
    Agent(PolicyFactory),
}

impl fmt::Debug for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.label())
    }
}

impl Method {
    /// `oz`, `o1`, `o2`, `o3` or `flags:<comma separated flags>`. Agent
    /// methods need a policy and are built directly.
    pub fn parse(s: &str) -> Result<Method, HarnessError> {
        if let Some(csv) = s.strip_prefix("flags:") {
            return Ok(Method::Fixed(split_flag_list(csv)));
        }
        OptLevel::parse(s)
            .map(Method::Baseline)
            .ok_or_else(|| HarnessError::UnknownMethod(s.to_string()))
    }

    pub fn label(&self) -> String {
        match self {
            Method::Baseline(l) => l.flag().to_string(),
            Method::Fixed(f) => format!("flags:{}", f.join(",")),
            Method::Agent(factory) => format!("agent:{}", factory().name()),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aggregation {
    /// Mean of per-program reductions.
    #[default]
    Arithmetic,
    /// One minus the geometric mean of `ic_method / ic_unopt`.
    Geometric,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalOptions {
    pub workers: usize,
    pub aggregation: Aggregation,
    pub episode: EpisodeConfig,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions {
            workers: 4,
            aggregation: Aggregation::Arithmetic,
            // Evaluation reads the knowledge base but leaves it alone, so
            // reruns give the same report.
            episode: EpisodeConfig {
                write_back: false,
                ..EpisodeConfig::default()
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProgramRow {
    pub id: String,
    pub ic_unopt: Option<u64>,
    pub ic_method: Option<u64>,
    /// 0 when no count could be measured.
    pub reduction: f64,
    pub improvement_over_oz: Option<f64>,
    /// Valid sequence and successful compile.
    pub success: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sequence: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl ProgramRow {
    fn failed(id: &str, ic_unopt: Option<u64>, error: String) -> Self {
        ProgramRow {
            id: id.to_string(),
            ic_unopt,
            ic_method: None,
            reduction: 0.0,
            improvement_over_oz: None,
            success: false,
            sequence: None,
            error: Some(error),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteReport {
    pub name: String,
    pub per_program: Vec<ProgramRow>,
    /// Absent for an empty suite.
    pub average_reduction: Option<f64>,
    pub success_rate: Option<f64>,
}

impl SuiteReport {
    pub fn new(name: &str, per_program: Vec<ProgramRow>, aggregation: Aggregation) -> Self {
        SuiteReport {
            name: name.to_string(),
            average_reduction: aggregate(&per_program, aggregation),
            success_rate: success_rate(&per_program),
            per_program,
        }
    }
}

/// Fraction of rows marked successful. `None` for no rows.
pub fn success_rate(rows: &[ProgramRow]) -> Option<f64> {
    if rows.is_empty() {
        return None;
    }
    Some(rows.iter().filter(|r| r.success).count() as f64 / rows.len() as f64)
}

pub fn aggregate(rows: &[ProgramRow], aggregation: Aggregation) -> Option<f64> {
    if rows.is_empty() {
        return None;
    }
    let n = rows.len() as f64;
    Some(match aggregation {
        Aggregation::Arithmetic => rows.iter().map(|r| r.reduction).sum::<f64>() / n,
        Aggregation::Geometric => {
            let log_sum: f64 = rows.iter().map(|r| (1.0 - r.reduction).ln()).sum();
            1.0 - (log_sum / n).exp()
        }
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub method: String,
    pub aggregation: Aggregation,
    pub suites: Vec<SuiteReport>,
    /// Mean over suites of the suite averages.
    pub average_reduction: Option<f64>,
    #[serde(skip)]
    pub trajectories: Vec<Trajectory>,
}

impl EvalReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("reports serialize")
    }

    pub fn save(&self, path: &Path) -> Result<(), HarnessError> {
        std::fs::write(path, self.to_json() + "\n")?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }

    pub fn rows(&self) -> impl Iterator<Item = (&str, &ProgramRow)> {
        self.suites
            .iter()
            .flat_map(|s| s.per_program.iter().map(move |r| (s.name.as_str(), r)))
    }

    /// Broken report invariants, as messages. Empty when the report is sound.
    pub fn invariant_violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        for s in &self.suites {
            if s.success_rate != success_rate(&s.per_program) {
                out.push(format!("suite {}: success rate does not match its rows", s.name));
            }
            let expected = aggregate(&s.per_program, self.aggregation);
            let close = match (s.average_reduction, expected) {
                (Some(a), Some(b)) => (a - b).abs() <= 1e-12 || (a.is_nan() && b.is_nan()),
                (a, b) => a == b,
            };
            if !close {
                out.push(format!("suite {}: average does not match its rows", s.name));
            }
            for r in &s.per_program {
                if r.success && r.ic_method.is_none() {
                    out.push(format!("program {}: success without a count", r.id));
                }
                if let Some(sr) = s.success_rate {
                    if !(0.0..=1.0).contains(&sr) {
                        out.push(format!("suite {}: success rate {sr} outside [0, 1]", s.name));
                    }
                }
            }
        }
        out
    }
}

fn evaluate_program(
    id: &str,
    method: &Method,
    env: &dyn Environment,
    kb: &RwLock<KnowledgeBase>,
    opts: &EvalOptions,
) -> (ProgramRow, Option<Trajectory>) {
    let ic_unopt = match env.unoptimized(id) {
        Ok(v) => v,
        Err(e) => return (ProgramRow::failed(id, None, e.to_string()), None),
    };
    let (flags, valid) = match method {
        Method::Baseline(level) => (vec![level.flag().to_string()], true),
        Method::Fixed(flags) => {
            let catalog = kb.read().unwrap_or_else(|e| e.into_inner()).symbolic().clone();
            let valid = parse_flags(flags, &catalog).is_ok_and(|s| validate_sequence(&s, &catalog).valid);
            (flags.clone(), valid)
        }
        Method::Agent(factory) => {
            let mut policy = factory();
            return match run_episode(id, policy.as_mut(), kb, env, &opts.episode) {
                Ok(t) => (agent_row(id, ic_unopt, &t), Some(t)),
                Err(e) => (ProgramRow::failed(id, Some(ic_unopt), e.to_string()), None),
            };
        }
    };
    let result = match env.instrcount(id, &flags) {
        Ok(r) => r,
        Err(e) => return (ProgramRow::failed(id, Some(ic_unopt), e.to_string()), None),
    };
    if !result.is_success() {
        let mut row = ProgramRow::failed(id, Some(ic_unopt), result.stderr_excerpt.clone());
        row.sequence = Some(flags);
        return (row, None);
    }
    let row = ProgramRow {
        id: id.to_string(),
        ic_unopt: Some(ic_unopt),
        ic_method: Some(result.ic_after),
        reduction: reduction_ratio(ic_unopt, result.ic_after).0,
        improvement_over_oz: Some(result.improvement_over_oz),
        success: valid,
        sequence: Some(flags),
        error: None,
    };
    (row, None)
}

fn agent_row(id: &str, ic_unopt: u64, t: &Trajectory) -> ProgramRow {
    let measured = t.final_result.as_ref().filter(|r| r.is_success());
    ProgramRow {
        id: id.to_string(),
        ic_unopt: Some(ic_unopt),
        ic_method: measured.map(|r| r.ic_after),
        reduction: measured.map_or(0.0, |r| reduction_ratio(ic_unopt, r.ic_after).0),
        improvement_over_oz: measured.map(|r| r.improvement_over_oz),
        success: t.rewards.answer == 1,
        sequence: t.final_sequence.clone(),
        error: match (&t.final_result, measured) {
            (_, Some(_)) => None,
            (Some(r), None) => Some(r.stderr_excerpt.clone()),
            (None, None) => Some(format!("episode ended by {:?}", t.terminated_by)),
        },
    }
}

/// Evaluates `method` on every program. Per-program failures are recorded
/// in their rows.
pub fn evaluate_method(
    manifest: &BenchmarkManifest,
    method: &Method,
    env: &dyn Environment,
    kb: &RwLock<KnowledgeBase>,
    opts: &EvalOptions,
) -> Result<EvalReport, HarnessError> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(opts.workers.max(1))
        .build()
        .map_err(|e| HarnessError::Pool(e.to_string()))?;
    let mut suites = Vec::new();
    let mut trajectories = Vec::new();
    for suite in &manifest.suites {
        let results: Vec<(ProgramRow, Option<Trajectory>)> = pool.install(|| {
            suite
                .programs
                .par_iter()
                .map(|p| evaluate_program(&p.id, method, env, kb, opts))
                .collect()
        });
        let mut rows = Vec::with_capacity(results.len());
        for (row, t) in results {
            rows.push(row);
            trajectories.extend(t);
        }
        suites.push(SuiteReport::new(&suite.name, rows, opts.aggregation));
    }
    let averages: Vec<f64> = suites.iter().filter_map(|s| s.average_reduction).collect();
    Ok(EvalReport {
        method: method.label(),
        aggregation: opts.aggregation,
        average_reduction: (!averages.is_empty()).then(|| averages.iter().sum::<f64>() / averages.len() as f64),
        suites,
        trajectories,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompareRow {
    pub suite: String,
    pub id: String,
    pub a: f64,
    pub b: f64,
    /// `a - b`.
    pub delta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub method_a: String,
    pub method_b: String,
    pub rows: Vec<CompareRow>,
    /// Per suite: name and the averages of `a` and `b`.
    pub suites: Vec<(String, Option<f64>, Option<f64>)>,
    pub overall: (Option<f64>, Option<f64>),
}

fn delta(a: Option<f64>, b: Option<f64>) -> Option<f64> {
    Some(a? - b?)
}

fn pct(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".to_string(), |x| format!("{:.2}%", x * 100.0))
}

impl Comparison {
    pub fn to_text(&self) -> String {
        let id_w = self.rows.iter().map(|r| r.id.len()).chain([7]).max().unwrap_or(7);
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:<id_w$}  {:>12}  {:>12}  {:>9}",
            "program", self.method_a, self.method_b, "delta"
        );
        for (name, a, b) in &self.suites {
            let _ = writeln!(out, "[{name}]");
            for r in self.rows.iter().filter(|r| &r.suite == name) {
                let _ = writeln!(
                    out,
                    "{:<id_w$}  {:>12}  {:>12}  {:>9}",
                    r.id,
                    pct(Some(r.a)),
                    pct(Some(r.b)),
                    pct(Some(r.delta))
                );
            }
            let _ = writeln!(out, "{:<id_w$}  {:>12}  {:>12}  {:>9}", "avg", pct(*a), pct(*b), pct(delta(*a, *b)));
        }
        let (a, b) = self.overall;
        let _ = writeln!(out, "{:<id_w$}  {:>12}  {:>12}  {:>9}", "Avg.", pct(a), pct(b), pct(delta(a, b)));
        out
    }

    pub fn to_csv(&self) -> Result<String, HarnessError> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["suite", "program", &self.method_a, &self.method_b, "delta"])?;
        let num = |v: Option<f64>| v.map_or_else(String::new, |x| x.to_string());
        for (name, a, b) in &self.suites {
            for r in self.rows.iter().filter(|r| &r.suite == name) {
                w.write_record([&r.suite, &r.id, &num(Some(r.a)), &num(Some(r.b)), &num(Some(r.delta))])?;
            }
            w.write_record([name.as_str(), "avg", &num(*a), &num(*b), &num(delta(*a, *b))])?;
        }
        let (a, b) = self.overall;
        w.write_record(["", "Avg.", &num(a), &num(b), &num(delta(a, b))])?;
        let bytes = w.into_inner().map_err(|e| HarnessError::Io(e.into_error()))?;
        Ok(String::from_utf8(bytes).expect("CSV of UTF-8 fields is UTF-8"))
    }
}

/// Lines up two reports program by program. Both must cover the same
/// programs in the same suites.
pub fn compare_report(a: &EvalReport, b: &EvalReport) -> Result<Comparison, HarnessError> {
    let keys = |r: &EvalReport| -> BTreeMap<(String, String), f64> {
        r.rows().map(|(s, row)| ((s.to_string(), row.id.clone()), row.reduction)).collect()
    };
    let (ka, kb) = (keys(a), keys(b));
    let only = |x: &BTreeMap<(String, String), f64>, y: &BTreeMap<(String, String), f64>| -> Vec<String> {
        x.keys().filter(|k| !y.contains_key(k)).map(|(s, id)| format!("{s}/{id}")).collect()
    };
    let (only_a, only_b) = (only(&ka, &kb), only(&kb, &ka));
    if !only_a.is_empty() || !only_b.is_empty() {
        return Err(HarnessError::MismatchedPrograms { only_a, only_b });
    }
    let rows = a
        .rows()
        .map(|(suite, row)| {
            let other = kb[&(suite.to_string(), row.id.clone())];
            CompareRow {
                suite: suite.to_string(),
                id: row.id.clone(),
                a: row.reduction,
                b: other,
                delta: row.reduction - other,
            }
        })
        .collect();
    let suites = a
        .suites
        .iter()
        .map(|s| {
            let other = b.suites.iter().find(|t| t.name == s.name).and_then(|t| t.average_reduction);
            (s.name.clone(), s.average_reduction, other)
        })
        .collect();
    Ok(Comparison {
        method_a: a.method.clone(),
        method_b: b.method.clone(),
        rows,
        suites,
        overall: (a.average_reduction, b.average_reduction),
    })
}
