//! Knowledge base: empirical entries, the symbolic constraint table, and
//! black-listed sequences, with rank-fused Top-K retrieval.

use std::collections::BTreeSet;
use std::io::Write;
use std::path::Path;
use std::sync::{Arc, LazyLock};

use serde::{Deserialize, Serialize};

use crate::features::FeatureVector;
use crate::passes::{
    parse_flags, render_flags, validate_sequence, PassCatalog, PassError, PassSequence,
    Violation,
};

pub const KB_SCHEMA_VERSION: u32 = 1;
pub const DEFAULT_ALPHA: f64 = 0.5;
pub const DEFAULT_EPSILON: f64 = 0.0;

#[derive(Debug, Clone, PartialEq)]
pub struct EmpiricalEntry {
    pub features: FeatureVector,
    pub sequence: PassSequence,
    /// Observed improvement, e.g. over `-Oz`, as a signed ratio in [-1, 1].
    pub effect: f64,
    pub provenance: String,
    pub note: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NegativeEntry {
    pub sequence: PassSequence,
    pub score: f64,
    pub threshold_at_insert: f64,
}

#[derive(Debug, thiserror::Error)]
pub enum KbError {
    #[error("sequence violates the constraint table: {}", list(.0))]
    InvalidSequence(Vec<Violation>),
    #[error("sequence is black-listed")]
    NegativeCollision,
    #[error("score {score} is not below epsilon {epsilon}")]
    NotNegative { score: f64, epsilon: f64 },
    #[error("effect {0} is outside [-1, 1]")]
    EffectOutOfRange(f64),
    #[error("no empirical entries to retrieve from")]
    EmptyStore,
    #[error("k must be at least 1")]
    InvalidK,
    #[error(transparent)]
    Pass(#[from] PassError),
    #[error("knowledge base I/O: {0}")]
    Io(#[from] std::io::Error),
    #[error("knowledge base JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error("knowledge base schema version {found}, expected {expected}")]
    SchemaVersionMismatch { found: u32, expected: u32 },
}

fn list(v: &[Violation]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join("; ")
}

/// What [`KnowledgeBase::insert_empirical`] did with the entry.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InsertOutcome {
    Appended,
    Replaced,
    KeptExisting,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RankedEntry {
    pub entry: EmpiricalEntry,
    /// Insertion position in the empirical store.
    pub position: usize,
    pub similarity: f64,
    pub rank_score: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RetrievalResult {
    pub ranked: Vec<RankedEntry>,
    pub k: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct KbStats {
    pub empirical: usize,
    pub negative: usize,
    pub epsilon: f64,
    pub min_effect: Option<f64>,
    pub max_effect: Option<f64>,
    pub mean_effect: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct KnowledgeBase {
    pub epsilon: f64,
    pub alpha: f64,
    symbolic: Arc<PassCatalog>,
    empirical: Vec<EmpiricalEntry>,
    negative: Vec<NegativeEntry>,
}

static SEED: LazyLock<String> = LazyLock::new(|| include_str!("../data/seed_kb.json").to_string());

impl KnowledgeBase {
    pub fn new(symbolic: Arc<PassCatalog>) -> Self {
        KnowledgeBase {
            epsilon: DEFAULT_EPSILON,
            alpha: DEFAULT_ALPHA,
            symbolic,
            empirical: Vec::new(),
            negative: Vec::new(),
        }
    }

    /// The starter knowledge base shipped with the crate.
    pub fn seeded() -> Self {
        Self::from_json(&SEED, Arc::new(PassCatalog::production().clone()))
            .expect("shipped seed knowledge base is valid")
    }

    pub fn symbolic(&self) -> &PassCatalog {
        &self.symbolic
    }

    pub fn empirical(&self) -> &[EmpiricalEntry] {
        &self.empirical
    }

    pub fn negative(&self) -> &[NegativeEntry] {
        &self.negative
    }

    pub fn is_negative(&self, seq: &PassSequence) -> bool {
        self.negative.iter().any(|n| &n.sequence == seq)
    }

    pub fn insert_empirical(&mut self, entry: EmpiricalEntry) -> Result<InsertOutcome, KbError> {
        if !entry.effect.is_finite() || !(-1.0..=1.0).contains(&entry.effect) {
            return Err(KbError::EffectOutOfRange(entry.effect));
        }
        let report = validate_sequence(&entry.sequence, &self.symbolic);
        if !report.valid {
            return Err(KbError::InvalidSequence(report.violations));
        }
        if self.is_negative(&entry.sequence) {
            return Err(KbError::NegativeCollision);
        }
        let existing = self
            .empirical
            .iter_mut()
            .find(|e| e.features == entry.features && e.sequence == entry.sequence);
        Ok(match existing {
            Some(e) if entry.effect > e.effect => {
                *e = entry;
                InsertOutcome::Replaced
            }
            Some(_) => InsertOutcome::KeptExisting,
            None => {
                self.empirical.push(entry);
                InsertOutcome::Appended
            }
        })
    }

    /// Black-lists `seq` and drops any empirical entries that use it.
    /// Returns how many empirical entries were removed.
    pub fn insert_negative(&mut self, seq: PassSequence, score: f64) -> Result<usize, KbError> {
        if score.is_nan() || score >= self.epsilon {
            return Err(KbError::NotNegative {
                score,
                epsilon: self.epsilon,
            });
        }
        if let Some(&p) = seq.items().iter().find(|&&p| p >= self.symbolic.len()) {
            return Err(PassError::UnknownPass(p).into());
        }
        let before = self.empirical.len();
        self.empirical.retain(|e| e.sequence != seq);
        if !self.is_negative(&seq) {
            self.negative.push(NegativeEntry {
                sequence: seq,
                score,
                threshold_at_insert: self.epsilon,
            });
        }
        Ok(before - self.empirical.len())
    }

    /// Top-`k` entries by `alpha * similarity + (1 - alpha) * normalized effect`.
    pub fn retrieve(&self, query: &FeatureVector, k: usize) -> Result<RetrievalResult, KbError> {
        if k == 0 {
            return Err(KbError::InvalidK);
        }
        let negative: BTreeSet<&PassSequence> = self.negative.iter().map(|n| &n.sequence).collect();
        let live: Vec<(usize, &EmpiricalEntry)> = self
            .empirical
            .iter()
            .enumerate()
            .filter(|(_, e)| !negative.contains(&e.sequence))
            .collect();
        if live.is_empty() {
            return Err(KbError::EmptyStore);
        }
        let (lo, hi) = live.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), (_, e)| {
            (lo.min(e.effect), hi.max(e.effect))
        });
        let mut ranked: Vec<RankedEntry> = live
            .into_iter()
            .map(|(position, e)| {
                let similarity = similarity(query, &e.features);
                let norm = normalized_effect(e.effect, lo, hi);
                RankedEntry {
                    entry: e.clone(),
                    position,
                    similarity,
                    rank_score: rank_score(self.alpha, similarity, norm),
                }
            })
            .collect();
        // Stable sort keeps insertion order among ties.
        ranked.sort_by(|a, b| b.rank_score.total_cmp(&a.rank_score));
        ranked.truncate(k);
        Ok(RetrievalResult { ranked, k })
    }

    pub fn stats(&self) -> KbStats {
        let effects: Vec<f64> = self.empirical.iter().map(|e| e.effect).collect();
        let n = effects.len() as f64;
        KbStats {
            empirical: self.empirical.len(),
            negative: self.negative.len(),
            epsilon: self.epsilon,
            min_effect: effects.iter().copied().reduce(f64::min),
            max_effect: effects.iter().copied().reduce(f64::max),
            mean_effect: (!effects.is_empty()).then(|| effects.iter().sum::<f64>() / n),
        }
    }

    pub fn to_json(&self) -> Result<String, KbError> {
        let file = KbFile {
            version: KB_SCHEMA_VERSION,
            epsilon: self.epsilon,
            empirical: self
                .empirical
                .iter()
                .map(|e| {
                    Ok(FileEmpirical {
                        features: e.features,
                        sequence: render_flags(&e.sequence, &self.symbolic)?,
                        effect: e.effect,
                        provenance: e.provenance.clone(),
                        note: e.note.clone(),
                    })
                })
                .collect::<Result<_, PassError>>()?,
            negative: self
                .negative
                .iter()
                .map(|n| {
                    Ok(FileNegative {
                        sequence: render_flags(&n.sequence, &self.symbolic)?,
                        score: n.score,
                        threshold_at_insert: n.threshold_at_insert,
                    })
                })
                .collect::<Result<_, PassError>>()?,
        };
        Ok(serde_json::to_string_pretty(&file)?)
    }

    /// Rebuilds a knowledge base from its file form. Entries are re-checked
    /// against `symbolic` on the way in.
    pub fn from_json(text: &str, symbolic: Arc<PassCatalog>) -> Result<Self, KbError> {
        let probe: VersionProbe = serde_json::from_str(text)?;
        if probe.version != KB_SCHEMA_VERSION {
            return Err(KbError::SchemaVersionMismatch {
                found: probe.version,
                expected: KB_SCHEMA_VERSION,
            });
        }
        let file: KbFile = serde_json::from_str(text)?;
        let mut kb = KnowledgeBase::new(symbolic);
        kb.epsilon = file.epsilon;
        for n in file.negative {
            let sequence = parse_flags(&n.sequence, &kb.symbolic)?;
            kb.negative.push(NegativeEntry {
                sequence,
                score: n.score,
                threshold_at_insert: n.threshold_at_insert,
            });
        }
        for e in file.empirical {
            let sequence = parse_flags(&e.sequence, &kb.symbolic)?;
            kb.insert_empirical(EmpiricalEntry {
                features: e.features,
                sequence,
                effect: e.effect,
                provenance: e.provenance,
                note: e.note,
            })?;
        }
        Ok(kb)
    }

    pub fn persist(&self, path: &Path) -> Result<(), KbError> {
        let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
        let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
        tmp.write_all(self.to_json()?.as_bytes())?;
        tmp.persist(path).map_err(|e| e.error)?;
        Ok(())
    }

    pub fn load(path: &Path, symbolic: Arc<PassCatalog>) -> Result<Self, KbError> {
        Self::from_json(&std::fs::read_to_string(path)?, symbolic)
    }
}

#[derive(Deserialize)]
struct VersionProbe {
    version: u32,
}

#[derive(Serialize, Deserialize)]
struct KbFile {
    version: u32,
    epsilon: f64,
    empirical: Vec<FileEmpirical>,
    negative: Vec<FileNegative>,
}

#[derive(Serialize, Deserialize)]
struct FileEmpirical {
    features: FeatureVector,
    sequence: Vec<String>,
    effect: f64,
    provenance: String,
    #[serde(default)]
    note: String,
}

#[derive(Serialize, Deserialize)]
struct FileNegative {
    sequence: Vec<String>,
    score: f64,
    threshold_at_insert: f64,
}

/// Cosine similarity of `log1p` counts, mapped from [-1, 1] onto [0, 1].
pub fn similarity(a: &FeatureVector, b: &FeatureVector) -> f64 {
    let la = a.values().map(|v| (v as f64).ln_1p());
    let lb = b.values().map(|v| (v as f64).ln_1p());
    let dot: f64 = la.iter().zip(&lb).map(|(x, y)| x * y).sum();
    let na = la.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = lb.iter().map(|x| x * x).sum::<f64>().sqrt();
    let cos = match (na == 0.0, nb == 0.0) {
        (true, true) => 1.0,
        (true, false) | (false, true) => 0.0,
        _ => (dot / (na * nb)).clamp(-1.0, 1.0),
    };
    ((cos + 1.0) / 2.0).clamp(0.0, 1.0)
}

pub fn normalized_effect(effect: f64, min: f64, max: f64) -> f64 {
    if max > min {
        (effect - min) / (max - min)
    } else {
        0.5
    }
}

pub fn rank_score(alpha: f64, similarity: f64, normalized_effect: f64) -> f64 {
    alpha * similarity + (1.0 - alpha) * normalized_effect
}
