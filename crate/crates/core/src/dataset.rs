//! Training data from trajectories: reward-annotated records and chat
//! samples for supervised fine-tuning.

use serde::{Deserialize, Serialize};

use crate::agent::{Role, Termination, Trajectory};
use crate::features::FeatureVector;

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum DatasetError {
    #[error("trajectory for {program} ended by {terminated_by:?}, not an answer")]
    IncompleteTrajectory {
        program: String,
        terminated_by: Termination,
    },
    #[error("rejected sample for {program}: {reason}")]
    RejectedSample { program: String, reason: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizationEffect {
    #[serde(rename = "Status")]
    pub status: String,
    /// Two decimals and a percent sign, e.g. `17.72%`.
    #[serde(rename = "Improvement (over_oz)")]
    pub improvement_pct: String,
    pub improvement_over_oz: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetRecord {
    #[serde(rename = "Program Representation")]
    pub program_representation: FeatureVector,
    #[serde(rename = "Reasoning Process")]
    pub reasoning_process: String,
    #[serde(rename = "Pass Sequence")]
    pub pass_sequence: Vec<String>,
    #[serde(rename = "Optimization Effect")]
    pub optimization_effect: OptimizationEffect,
    pub program_id: String,
    /// Which policy produced the sequence.
    pub provenance: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SftMessage {
    pub role: String,
    pub content: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SftSample {
    pub messages: Vec<SftMessage>,
    /// Indices into `messages` of the assistant turns.
    pub weightable_turns: Vec<usize>,
}

/// `0.1772` becomes `17.72%`.
pub fn format_percent(ratio: f64) -> String {
    let s = format!("{:.2}", ratio * 100.0);
    if s == "-0.00" {
        "0.00%".to_string()
    } else {
        format!("{s}%")
    }
}

pub fn trajectory_to_record(t: &Trajectory) -> Result<DatasetRecord, DatasetError> {
    let incomplete = || DatasetError::IncompleteTrajectory {
        program: t.program_id.clone(),
        terminated_by: t.terminated_by,
    };
    if t.terminated_by != Termination::Answer {
        return Err(incomplete());
    }
    let (Some(flags), Some(result)) = (&t.final_sequence, &t.final_result) else {
        return Err(incomplete());
    };
    Ok(DatasetRecord {
        program_representation: t.features,
        reasoning_process: t.reasoning().join("\n"),
        pass_sequence: flags.clone(),
        optimization_effect: OptimizationEffect {
            status: result.status.to_string(),
            improvement_pct: format_percent(result.improvement_over_oz),
            improvement_over_oz: result.improvement_over_oz,
        },
        program_id: t.program_id.clone(),
        provenance: t.policy.clone(),
    })
}

/// Chat replay of a clean episode. Tool output becomes `tool` messages.
pub fn trajectory_to_sft(t: &Trajectory) -> Result<SftSample, DatasetError> {
    let reject = |reason: &str| DatasetError::RejectedSample {
        program: t.program_id.clone(),
        reason: reason.to_string(),
    };
    if t.rewards.format != 1 {
        return Err(reject("format reward is 0"));
    }
    if t.rewards.answer != 1 {
        return Err(reject("answer reward is 0"));
    }
    let mut messages = vec![SftMessage {
        role: "system".into(),
        content: t.prompt.clone(),
    }];
    let mut weightable_turns = Vec::new();
    for turn in &t.turns {
        let role = match turn.role {
            Role::Assistant => {
                weightable_turns.push(messages.len());
                "assistant"
            }
            Role::Tool => "tool",
        };
        messages.push(SftMessage {
            role: role.into(),
            content: turn.raw.clone(),
        });
    }
    Ok(SftSample {
        messages,
        weightable_turns,
    })
}

/// Keeps records whose improvement over `-Oz` is at least `min_effect`,
/// in their original order.
pub fn filter_dataset(records: Vec<DatasetRecord>, min_effect: f64) -> Vec<DatasetRecord> {
    debug_assert!((-1.0..=1.0).contains(&min_effect));
    records
        .into_iter()
        .filter(|r| r.optimization_effect.improvement_over_oz >= min_effect)
        .collect()
}

/// Result of converting a batch of trajectories.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct BuildSummary {
    pub records: Vec<DatasetRecord>,
    pub samples: Vec<SftSample>,
    pub rejected_records: usize,
    pub rejected_samples: usize,
    pub filtered_out: usize,
}

pub fn build_dataset(trajectories: &[Trajectory], min_effect: f64) -> BuildSummary {
    let mut s = BuildSummary::default();
    let mut records = Vec::new();
    for t in trajectories {
        match trajectory_to_record(t) {
            Ok(r) => records.push(r),
            Err(e) => {
                log::debug!("{e}");
                s.rejected_records += 1;
            }
        }
        match trajectory_to_sft(t) {
            Ok(x) => s.samples.push(x),
            Err(e) => {
                log::debug!("{e}");
                s.rejected_samples += 1;
            }
        }
    }
    let before = records.len();
    s.records = filter_dataset(records, min_effect);
    s.filtered_out = before - s.records.len();
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn percentages() {
        assert_eq!(format_percent(0.1772), "17.72%");
        assert_eq!(format_percent(0.0), "0.00%");
        assert_eq!(format_percent(-0.00001), "0.00%");
        assert_eq!(format_percent(-0.125), "-12.50%");
        assert_eq!(format_percent(1.0), "100.00%");
    }

    fn record(imp: f64) -> DatasetRecord {
        DatasetRecord {
            program_representation: FeatureVector::default(),
            reasoning_process: String::new(),
            pass_sequence: vec![],
            optimization_effect: OptimizationEffect {
                status: "success".into(),
                improvement_pct: format_percent(imp),
                improvement_over_oz: imp,
            },
            program_id: format!("{imp}"),
            provenance: "test".into(),
        }
    }

    #[test]
    fn filtering() {
        let recs: Vec<_> = [-0.1, 0.0, 0.2].into_iter().map(record).collect();
        let kept: Vec<f64> = filter_dataset(recs.clone(), 0.0)
            .iter()
            .map(|r| r.optimization_effect.improvement_over_oz)
            .collect();
        assert_eq!(kept, vec![0.0, 0.2]);
        assert_eq!(filter_dataset(recs.clone(), -1.0), recs);
        assert!(filter_dataset(vec![], 0.5).is_empty());
    }

    #[test]
    fn record_field_names() {
        let v = serde_json::to_value(record(0.1772)).unwrap();
        for key in [
            "Program Representation",
            "Reasoning Process",
            "Pass Sequence",
            "Optimization Effect",
        ] {
            assert!(v.get(key).is_some(), "{key}");
        }
        assert_eq!(v["Optimization Effect"]["Improvement (over_oz)"], "17.72%");
        assert_eq!(v["Optimization Effect"]["Status"], "success");
        let back: DatasetRecord = serde_json::from_value(v).unwrap();
        assert_eq!(back, record(0.1772));
    }
}
