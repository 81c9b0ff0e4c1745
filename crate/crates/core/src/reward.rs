//! Composite reward: protocol format, answer validity and code-size
//! reduction, plus the discounted return over a per-turn reward stream.

use serde::{Deserialize, Serialize};

use crate::agent::protocol::{AgentTurn, BlockKind, Role, ToolCall, TOOL_NAMES};
use crate::env::{reduction_ratio, InstrCountResult};
use crate::passes::{parse_flags, validate_sequence, PassCatalog};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardWeights {
    pub format: f64,
    pub answer: f64,
    pub performance: f64,
}

impl Default for RewardWeights {
    fn default() -> Self {
        RewardWeights {
            format: 0.1,
            answer: 0.2,
            performance: 0.7,
        }
    }
}

impl RewardWeights {
    pub fn is_valid(&self) -> bool {
        [self.format, self.answer, self.performance]
            .iter()
            .all(|w| w.is_finite() && *w >= 0.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardBreakdown {
    pub format: u8,
    pub answer: u8,
    /// Reduction relative to the unoptimized input.
    pub performance: f64,
    /// Logged next to `performance`; not part of `total`.
    pub improvement_over_oz: f64,
    /// Set when the input had no instructions.
    #[serde(default)]
    pub degenerate: bool,
    pub total: f64,
    pub weights: RewardWeights,
}

/// 1 when every assistant turn is a clean run of tagged blocks, every tool
/// call names a known tool, and the transcript ends in exactly one answer
/// holding a JSON list of strings.
pub fn score_format(turns: &[AgentTurn]) -> u8 {
    let assistant: Vec<&AgentTurn> = turns.iter().filter(|t| t.role == Role::Assistant).collect();
    let Some(last) = assistant.last() else {
        return 0;
    };
    if !assistant.iter().all(|t| t.is_well_formed()) {
        return 0;
    }
    let known_tools = assistant.iter().all(|t| {
        t.blocks
            .iter()
            .filter(|b| b.kind == BlockKind::ToolCall)
            .all(|b| {
                b.json
                    .clone()
                    .and_then(|v| serde_json::from_value::<ToolCall>(v).ok())
                    .is_some_and(|c| TOOL_NAMES.contains(&c.name.as_str()))
            })
    });
    let answers: usize = assistant
        .iter()
        .map(|t| t.blocks.iter().filter(|b| b.kind == BlockKind::Answer).count())
        .sum();
    let final_answer = last.blocks.last().is_some_and(|b| b.kind == BlockKind::Answer);
    u8::from(known_tools && answers == 1 && final_answer && last.answer().is_some())
}

/// 1 when every flag is in the catalog, the sequence satisfies the
/// catalog's constraints, and the final compile succeeded.
pub fn score_answer<S: AsRef<str>>(flags: &[S], catalog: &PassCatalog, env_result: &InstrCountResult) -> u8 {
    let Ok(seq) = parse_flags(flags, catalog) else {
        return 0;
    };
    u8::from(validate_sequence(&seq, catalog).valid && env_result.is_success())
}

/// `(before - after) / before`. A zero `before` gives 0 and sets the flag.
pub fn score_performance(ic_before: u64, ic_after: u64) -> (f64, bool) {
    reduction_ratio(ic_before, ic_after)
}

/// Inputs to [`total_reward`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RewardInputs {
    pub format: u8,
    pub answer: u8,
    /// `None` when no successful compile produced a count.
    pub performance: Option<f64>,
    pub improvement_over_oz: f64,
    pub degenerate: bool,
}

pub fn total_reward(inputs: RewardInputs, weights: RewardWeights) -> RewardBreakdown {
    debug_assert!(weights.is_valid(), "reward weights must be nonnegative");
    let format = inputs.format.min(1);
    // No parseable transcript, no answer to credit.
    let answer = if format == 1 { inputs.answer.min(1) } else { 0 };
    let performance = inputs.performance.unwrap_or(0.0);
    let total =
        weights.format * f64::from(format) + weights.answer * f64::from(answer) + weights.performance * performance;
    RewardBreakdown {
        format,
        answer,
        performance,
        improvement_over_oz: inputs.improvement_over_oz,
        degenerate: inputs.degenerate,
        total,
        weights,
    }
}

/// `sum_t gamma^t * r_t`.
pub fn discounted_return(rewards: &[f64], gamma: f64) -> f64 {
    debug_assert!(gamma > 0.0 && gamma <= 1.0, "gamma must be in (0, 1]");
    let mut acc = 0.0;
    let mut discount = 1.0;
    for r in rewards {
        acc += discount * r;
        discount *= gamma;
    }
    acc
}
