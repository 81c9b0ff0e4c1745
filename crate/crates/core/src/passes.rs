//! The optimization action space: pass catalog, sequence validation and repair.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::path::Path;
use std::sync::LazyLock;

use serde::{Deserialize, Serialize};

/// Index of the `-Oz` meta-action in the shipped catalogs.
pub const OZ_INDEX: usize = 124;
pub const CATALOG_SIZE: usize = 125;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PassDescriptor {
    pub index: usize,
    pub flag: String,
    #[serde(default)]
    pub semantics: String,
    #[serde(default)]
    pub deps: BTreeSet<usize>,
    #[serde(default)]
    pub conflicts: BTreeSet<usize>,
}

impl PassDescriptor {
    /// Flag without leading dashes, e.g. `gvn` or `Oz`.
    pub fn name(&self) -> &str {
        self.flag.trim_start_matches('-')
    }
}

#[derive(Debug, thiserror::Error)]
pub enum CatalogError {
    #[error("catalog I/O: {0}")]
    Io(#[from] std::io::Error),
    #[error("catalog JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error("invalid catalog: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum PassError {
    #[error("unknown pass index {0}")]
    UnknownPass(usize),
    #[error("unknown pass flag '{0}'")]
    UnknownFlag(String),
    #[error("repair impossible: {0}")]
    RepairImpossible(String),
}

/// An immutable, validated set of passes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PassCatalog {
    passes: Vec<PassDescriptor>,
    by_name: HashMap<String, usize>,
}

static PRODUCTION: LazyLock<PassCatalog> = LazyLock::new(|| {
    PassCatalog::from_json(include_str!("../data/passes.json")).expect("shipped catalog is valid")
});

static CURATED: LazyLock<PassCatalog> = LazyLock::new(|| {
    PassCatalog::from_json(include_str!("../data/passes_curated.json"))
        .expect("shipped curated catalog is valid")
});

impl PassCatalog {
    /// The shipped 125-action catalog with no ordering constraints.
    pub fn production() -> &'static PassCatalog {
        &PRODUCTION
    }

    /// The shipped catalog with hand-picked dependency and conflict tables.
    pub fn curated() -> &'static PassCatalog {
        &CURATED
    }

    pub fn load(path: &Path) -> Result<PassCatalog, CatalogError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn from_json(text: &str) -> Result<PassCatalog, CatalogError> {
        Self::new(serde_json::from_str(text)?)
    }

    /// Checks every structural invariant and builds the flag index.
    pub fn new(mut passes: Vec<PassDescriptor>) -> Result<PassCatalog, CatalogError> {
        let bad = |m: String| Err(CatalogError::Invalid(m));
        passes.sort_by_key(|p| p.index);
        let n = passes.len();
        let mut by_name = HashMap::new();
        for (i, p) in passes.iter().enumerate() {
            if p.index != i {
                return if i > 0 && passes[i - 1].index == p.index {
                    bad(format!("duplicate index {}", p.index))
                } else {
                    bad(format!("missing index {i}"))
                };
            }
            if p.name().is_empty() {
                return bad(format!("pass {i} has no flag"));
            }
            if by_name.insert(p.name().to_string(), i).is_some() {
                return bad(format!("duplicate flag '{}'", p.flag));
            }
            if p.deps.contains(&i) || p.conflicts.contains(&i) {
                return bad(format!("pass {i} references itself"));
            }
            if let Some(j) = p.deps.iter().chain(&p.conflicts).find(|&&j| j >= n) {
                return bad(format!("pass {i} references unknown index {j}"));
            }
            for &j in &p.conflicts {
                if !passes[j].conflicts.contains(&i) {
                    return bad(format!("conflict {i}->{j} is not symmetric"));
                }
            }
        }
        let catalog = PassCatalog { passes, by_name };
        if let Some(cycle) = catalog.find_dep_cycle() {
            return bad(format!("dependency cycle through pass {cycle}"));
        }
        Ok(catalog)
    }

    fn find_dep_cycle(&self) -> Option<usize> {
        // 0 = unvisited, 1 = on stack, 2 = done
        let mut state = vec![0u8; self.passes.len()];
        fn visit(c: &PassCatalog, i: usize, state: &mut [u8]) -> Option<usize> {
            match state[i] {
                1 => return Some(i),
                2 => return None,
                _ => {}
            }
            state[i] = 1;
            for &d in &c.passes[i].deps {
                if let Some(x) = visit(c, d, state) {
                    return Some(x);
                }
            }
            state[i] = 2;
            None
        }
        (0..self.passes.len()).find_map(|i| visit(self, i, &mut state))
    }

    pub fn len(&self) -> usize {
        self.passes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.passes.is_empty()
    }

    pub fn passes(&self) -> &[PassDescriptor] {
        &self.passes
    }

    pub fn get(&self, index: usize) -> Option<&PassDescriptor> {
        self.passes.get(index)
    }

    /// Looks up a flag, tolerating `-name`, `--name` and bare `name`.
    pub fn index_of(&self, flag: &str) -> Option<usize> {
        self.by_name.get(flag.trim().trim_start_matches('-')).copied()
    }

    pub fn has_constraints(&self) -> bool {
        self.passes
            .iter()
            .any(|p| !p.deps.is_empty() || !p.conflicts.is_empty())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.passes).expect("catalog serializes")
    }

    /// Dependencies of `index`, transitively closed, in an order where each
    /// pass follows its own dependencies.
    pub fn transitive_deps(&self, index: usize) -> Vec<usize> {
        fn walk(c: &PassCatalog, i: usize, seen: &mut BTreeSet<usize>, out: &mut Vec<usize>) {
            for &d in &c.passes[i].deps {
                if seen.insert(d) {
                    walk(c, d, seen, out);
                    out.push(d);
                }
            }
        }
        let mut out = Vec::new();
        walk(self, index, &mut BTreeSet::new(), &mut out);
        out
    }
}

/// An ordered list of catalog indices. Repeats are allowed.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PassSequence(pub Vec<usize>);

impl PassSequence {
    pub fn new(items: Vec<usize>) -> Self {
        PassSequence(items)
    }

    pub fn items(&self) -> &[usize] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Position of the first occurrence of each pass.
    pub fn first_positions(&self) -> BTreeMap<usize, usize> {
        let mut first = BTreeMap::new();
        for (pos, &p) in self.0.iter().enumerate() {
            first.entry(p).or_insert(pos);
        }
        first
    }
}

impl From<Vec<usize>> for PassSequence {
    fn from(v: Vec<usize>) -> Self {
        PassSequence(v)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ViolationKind {
    DependencyViolation,
    ConflictViolation,
    UnknownPass,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub kind: ViolationKind,
    pub positions: Vec<usize>,
    pub passes: Vec<usize>,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?} at {:?} involving {:?}", self.kind, self.positions, self.passes)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub valid: bool,
    pub violations: Vec<Violation>,
}

/// Reports every constraint violation in `seq`.
///
/// A dependency is satisfied when its first occurrence comes before the first
/// occurrence of the dependent pass. Two conflicting passes may not both
/// appear, whatever their order.
pub fn validate_sequence(seq: &PassSequence, catalog: &PassCatalog) -> ValidationReport {
    let mut violations = Vec::new();
    for (pos, &p) in seq.0.iter().enumerate() {
        if p >= catalog.len() {
            violations.push(Violation {
                kind: ViolationKind::UnknownPass,
                positions: vec![pos],
                passes: vec![p],
            });
        }
    }
    let first = seq.first_positions();
    for (&p, &pos) in first.iter().filter(|(&p, _)| p < catalog.len()) {
        let desc = &catalog.passes[p];
        for &d in &desc.deps {
            match first.get(&d) {
                Some(&dpos) if dpos < pos => {}
                Some(&dpos) => violations.push(Violation {
                    kind: ViolationKind::DependencyViolation,
                    positions: vec![dpos, pos],
                    passes: vec![d, p],
                }),
                None => violations.push(Violation {
                    kind: ViolationKind::DependencyViolation,
                    positions: vec![pos],
                    passes: vec![d, p],
                }),
            }
        }
        for &c in desc.conflicts.range(p + 1..) {
            if let Some(&cpos) = first.get(&c) {
                let (a, b) = if pos < cpos { ((pos, p), (cpos, c)) } else { ((cpos, c), (pos, p)) };
                violations.push(Violation {
                    kind: ViolationKind::ConflictViolation,
                    positions: vec![a.0, b.0],
                    passes: vec![a.1, b.1],
                });
            }
        }
    }
    ValidationReport {
        valid: violations.is_empty(),
        violations,
    }
}

/// A repaired sequence plus what was changed to get there.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RepairOutcome {
    pub sequence: PassSequence,
    /// `(original position, pass)` of every dropped item.
    pub dropped: Vec<(usize, usize)>,
    /// Dependencies added that were absent from the input.
    pub inserted: Vec<usize>,
    pub reordered: bool,
    /// Whether the output is a subsequence of the input.
    pub is_subsequence: bool,
}

/// Turns `seq` into a valid sequence by dropping the later member of each
/// conflicting pair, inserting missing dependencies before their first
/// dependent, and reordering only if dependency order is still broken.
pub fn repair_sequence(
    seq: &PassSequence,
    catalog: &PassCatalog,
) -> Result<RepairOutcome, PassError> {
    if let Some(&p) = seq.0.iter().find(|&&p| p >= catalog.len()) {
        return Err(PassError::UnknownPass(p));
    }

    let mut kept: Vec<usize> = Vec::with_capacity(seq.len());
    let mut present = BTreeSet::new();
    let mut dropped = Vec::new();
    for (pos, &p) in seq.0.iter().enumerate() {
        if catalog.passes[p].conflicts.iter().any(|c| present.contains(c)) {
            dropped.push((pos, p));
        } else {
            kept.push(p);
            present.insert(p);
        }
    }

    let mut inserted = Vec::new();
    let mut out: Vec<usize> = Vec::with_capacity(kept.len());
    let mut emitted = BTreeSet::new();
    for &p in &kept {
        if emitted.insert(p) {
            for d in catalog.transitive_deps(p) {
                if present.contains(&d) {
                    continue;
                }
                if let Some(c) = catalog.passes[d].conflicts.iter().find(|c| present.contains(c)) {
                    return Err(PassError::RepairImpossible(format!(
                        "{} is required by {} but conflicts with {}",
                        catalog.passes[d].flag, catalog.passes[p].flag, catalog.passes[*c].flag
                    )));
                }
                present.insert(d);
                emitted.insert(d);
                inserted.push(d);
                out.push(d);
            }
        }
        out.push(p);
    }

    let mut reordered = false;
    let mut candidate = PassSequence(out);
    if !validate_sequence(&candidate, catalog).valid {
        candidate = stable_topological(&candidate, catalog);
        reordered = true;
    }
    let report = validate_sequence(&candidate, catalog);
    if !report.valid {
        return Err(PassError::RepairImpossible(
            report.violations.iter().map(|v| v.to_string()).collect::<Vec<_>>().join("; "),
        ));
    }
    let is_subsequence = is_subsequence(&candidate.0, &seq.0);
    Ok(RepairOutcome {
        sequence: candidate,
        dropped,
        inserted,
        reordered,
        is_subsequence,
    })
}

/// Emits, at each step, the earliest remaining item whose dependencies have
/// all been emitted. Every dependency must be present somewhere in `seq`.
fn stable_topological(seq: &PassSequence, catalog: &PassCatalog) -> PassSequence {
    let mut remaining: Vec<usize> = seq.0.clone();
    let mut emitted = BTreeSet::new();
    let mut out = Vec::with_capacity(remaining.len());
    while !remaining.is_empty() {
        let ready = remaining
            .iter()
            .position(|&p| catalog.passes[p].deps.iter().all(|d| emitted.contains(d)))
            .unwrap_or(0);
        let p = remaining.remove(ready);
        emitted.insert(p);
        out.push(p);
    }
    PassSequence(out)
}

fn is_subsequence(needle: &[usize], hay: &[usize]) -> bool {
    let mut it = hay.iter();
    needle.iter().all(|n| it.any(|h| h == n))
}

/// Wire form of a sequence: `--name` flags, with `-Oz` for the meta-action.
pub fn render_flags(seq: &PassSequence, catalog: &PassCatalog) -> Result<Vec<String>, PassError> {
    seq.0
        .iter()
        .map(|&p| {
            catalog
                .get(p)
                .map(|d| d.flag.clone())
                .ok_or(PassError::UnknownPass(p))
        })
        .collect()
}

pub fn parse_flags<S: AsRef<str>>(
    flags: &[S],
    catalog: &PassCatalog,
) -> Result<PassSequence, PassError> {
    flags
        .iter()
        .map(|f| {
            catalog
                .index_of(f.as_ref())
                .ok_or_else(|| PassError::UnknownFlag(f.as_ref().to_string()))
        })
        .collect::<Result<Vec<_>, _>>()
        .map(PassSequence)
}

/// Legacy flag spellings whose new pass manager pipeline name differs.
pub const NEW_PM_ALIASES: &[(&str, &str)] = &[
    ("early-cse-memssa", "early-cse<memssa>"),
    ("functionattrs", "function-attrs"),
    ("rpo-functionattrs", "rpo-function-attrs"),
    ("die", "dce"),
    ("constprop", "instsimplify"),
    ("ipconstprop", "ipsccp"),
    ("post-inline-ee-instrument", "ee-instrument<post-inline>"),
    ("loop-unswitch", "simple-loop-unswitch"),
    ("sancov", "sancov-module"),
    ("barrier", "no-op-module"),
];

/// New pass manager pipeline element for a legacy flag such as `--gvn` or
/// `-Oz`.
pub fn new_pm_name(flag: &str) -> String {
    let name = flag.trim().trim_start_matches('-');
    if let Some(level) = name.strip_prefix('O') {
        if matches!(level, "0" | "1" | "2" | "3" | "s" | "z") {
            return format!("default<O{level}>");
        }
    }
    NEW_PM_ALIASES
        .iter()
        .find(|(legacy, _)| *legacy == name)
        .map_or_else(|| name.to_string(), |(_, new)| new.to_string())
}

/// Splits a comma-separated flag list, ignoring blanks.
pub fn split_flag_list(csv: &str) -> Vec<String> {
    csv.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(str::to_string)
        .collect()
}
