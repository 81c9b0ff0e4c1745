//! Black-box search over flag sequences, used to seed the knowledge base.

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::env::{EnvError, Environment};
use crate::kb::{EmpiricalEntry, KbError, KnowledgeBase};
use crate::passes::{render_flags, PassCatalog, PassSequence};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SearchConfig {
    pub population: usize,
    pub generations: usize,
    pub max_len: usize,
    pub mutation_rate: f64,
    pub tournament: usize,
    pub elite: usize,
    pub seed: u64,
}

impl Default for SearchConfig {
    fn default() -> Self {
        SearchConfig {
            population: 24,
            generations: 10,
            max_len: 12,
            mutation_rate: 0.3,
            tournament: 3,
            elite: 2,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub sequence: PassSequence,
    pub flags: Vec<String>,
    /// `None` when the sequence failed to compile.
    pub improvement_over_oz: Option<f64>,
}

impl Candidate {
    fn fitness(&self) -> f64 {
        self.improvement_over_oz.unwrap_or(f64::NEG_INFINITY)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SearchResult {
    /// Distinct sequences, best first.
    pub ranked: Vec<Candidate>,
    pub evaluations: usize,
}

fn random_sequence(rng: &mut ChaCha8Rng, catalog: &PassCatalog, max_len: usize) -> Vec<usize> {
    let len = rng.gen_range(1..=max_len.max(1));
    (0..len).map(|_| rng.gen_range(0..catalog.len())).collect()
}

struct Evaluator<'a> {
    env: &'a dyn Environment,
    program: &'a str,
    catalog: &'a PassCatalog,
    seen: Vec<Candidate>,
}

impl Evaluator<'_> {
    fn eval(&mut self, seq: Vec<usize>) -> Result<Candidate, EnvError> {
        if let Some(c) = self.seen.iter().find(|c| c.sequence.0 == seq) {
            return Ok(c.clone());
        }
        let sequence = PassSequence(seq);
        let flags = render_flags(&sequence, self.catalog).expect("indices come from the catalog");
        let r = self.env.instrcount(self.program, &flags)?;
        let c = Candidate {
            improvement_over_oz: r.is_success().then_some(r.improvement_over_oz),
            sequence,
            flags,
        };
        self.seen.push(c.clone());
        Ok(c)
    }

    fn finish(mut self) -> SearchResult {
        let evaluations = self.seen.len();
        // Stable: earlier discoveries win ties.
        self.seen.sort_by(|a, b| b.fitness().total_cmp(&a.fitness()));
        SearchResult {
            ranked: self.seen,
            evaluations,
        }
    }
}

/// Uniformly random sequences of length `1..=max_len`.
pub fn random_search(
    env: &dyn Environment,
    program: &str,
    catalog: &PassCatalog,
    samples: usize,
    max_len: usize,
    seed: u64,
) -> Result<SearchResult, EnvError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut ev = Evaluator {
        env,
        program,
        catalog,
        seen: Vec::new(),
    };
    for _ in 0..samples {
        let seq = random_sequence(&mut rng, catalog, max_len);
        ev.eval(seq)?;
    }
    Ok(ev.finish())
}

fn mutate(rng: &mut ChaCha8Rng, seq: &mut Vec<usize>, catalog: &PassCatalog, max_len: usize) {
    let gene = rng.gen_range(0..catalog.len());
    match rng.gen_range(0..3) {
        0 if !seq.is_empty() => {
            let i = rng.gen_range(0..seq.len());
            seq[i] = gene;
        }
        1 if seq.len() < max_len => {
            let i = rng.gen_range(0..=seq.len());
            seq.insert(i, gene);
        }
        _ if seq.len() > 1 => {
            let i = rng.gen_range(0..seq.len());
            seq.remove(i);
        }
        _ => seq.push(gene),
    }
}

/// Tournament selection, one-point crossover, point mutation and elitism.
pub fn genetic_search(
    env: &dyn Environment,
    program: &str,
    catalog: &PassCatalog,
    cfg: &SearchConfig,
) -> Result<SearchResult, EnvError> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut ev = Evaluator {
        env,
        program,
        catalog,
        seen: Vec::new(),
    };
    let size = cfg.population.max(2);
    let mut pop = Vec::with_capacity(size);
    for _ in 0..size {
        let seq = random_sequence(&mut rng, catalog, cfg.max_len);
        pop.push(ev.eval(seq)?);
    }
    for _ in 0..cfg.generations {
        pop.sort_by(|a, b| b.fitness().total_cmp(&a.fitness()));
        let mut next: Vec<Candidate> = pop.iter().take(cfg.elite.min(size)).cloned().collect();
        while next.len() < size {
            let pick = |rng: &mut ChaCha8Rng| {
                pop.choose_multiple(rng, cfg.tournament.clamp(1, size))
                    .max_by(|a, b| a.fitness().total_cmp(&b.fitness()))
                    .expect("population is not empty")
                    .sequence
                    .0
                    .clone()
            };
            let (a, b) = (pick(&mut rng), pick(&mut rng));
            let cut_a = rng.gen_range(0..=a.len());
            let cut_b = rng.gen_range(0..=b.len());
            let mut child: Vec<usize> = a[..cut_a].iter().chain(&b[cut_b..]).copied().collect();
            child.truncate(cfg.max_len.max(1));
            if child.is_empty() || rng.gen_bool(cfg.mutation_rate.clamp(0.0, 1.0)) {
                mutate(&mut rng, &mut child, catalog, cfg.max_len.max(1));
            }
            next.push(ev.eval(child)?);
        }
        pop = next;
    }
    Ok(ev.finish())
}

/// Jaccard overlap of the pass sets of two sequences.
fn overlap(a: &PassSequence, b: &PassSequence) -> f64 {
    let a: BTreeSet<usize> = a.0.iter().copied().collect();
    let b: BTreeSet<usize> = b.0.iter().copied().collect();
    let union = a.union(&b).count();
    if union == 0 {
        return 1.0;
    }
    a.intersection(&b).count() as f64 / union as f64
}

/// Sequences sharing at least this much of their pass set count as variants
/// of one another.
pub const SEED_OVERLAP_LIMIT: f64 = 0.5;

/// Adds up to `per_program` of the best sequences that beat `-Oz` on each
/// program, skipping variants of sequences already taken. Returns how many
/// entries were added or improved.
pub fn seed_from_search(
    kb: &mut KnowledgeBase,
    env: &dyn Environment,
    program: &str,
    result: &SearchResult,
    per_program: usize,
    provenance: &str,
) -> Result<usize, EnvError> {
    let features = env.features(program)?;
    let mut taken: Vec<&PassSequence> = Vec::new();
    for c in result.ranked.iter().filter(|c| c.fitness() > 0.0) {
        if taken.len() == per_program {
            break;
        }
        if taken.iter().all(|t| overlap(t, &c.sequence) < SEED_OVERLAP_LIMIT) {
            taken.push(&c.sequence);
        }
    }
    let mut added = 0;
    for c in result.ranked.iter().filter(|c| taken.contains(&&c.sequence)) {
        let entry = EmpiricalEntry {
            features,
            sequence: c.sequence.clone(),
            effect: c.fitness().min(1.0),
            provenance: provenance.to_string(),
            note: program.to_string(),
        };
        match kb.insert_empirical(entry) {
            Ok(_) => added += 1,
            Err(KbError::NegativeCollision) | Err(KbError::InvalidSequence(_)) => {}
            Err(e) => log::warn!("{program}: {e}"),
        }
    }
    Ok(added)
}
