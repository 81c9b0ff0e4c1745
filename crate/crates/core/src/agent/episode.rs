use std::sync::RwLock;

use serde::{Deserialize, Serialize};

use super::policy::{ChatMessage, Policy, PolicyContext};
use super::prompt::PromptTemplate;
use super::protocol::{parse_turn, AgentTurn, Role};
use super::tools::{dispatch_tool, ToolContext};
use super::AgentError;
use crate::env::{EnvStatus, Environment, InstrCountResult};
use crate::features::FeatureVector;
use crate::kb::{EmpiricalEntry, InsertOutcome, KnowledgeBase};
use crate::passes::{parse_flags, render_flags, repair_sequence};
use crate::reward::{
    discounted_return, score_answer, score_format, score_performance, total_reward, RewardBreakdown, RewardInputs,
    RewardWeights,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EpisodeConfig {
    pub max_turns: usize,
    pub weights: RewardWeights,
    pub gamma: f64,
    /// Repair the answer before compiling it. Off for scoring runs.
    pub repair: bool,
    pub retrieval_k: usize,
    /// Feed the outcome back into the knowledge base.
    pub write_back: bool,
}

impl Default for EpisodeConfig {
    fn default() -> Self {
        EpisodeConfig {
            max_turns: super::remote::DEFAULT_MAX_TURNS,
            weights: RewardWeights::default(),
            gamma: 1.0,
            repair: false,
            retrieval_k: 1,
            write_back: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    Answer,
    MaxTurns,
    ProtocolError,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum WriteBack {
    Empirical { outcome: InsertOutcome },
    Negative { removed: usize },
    Rejected { reason: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub program_id: String,
    pub policy: String,
    pub prompt: String,
    pub features: FeatureVector,
    pub turns: Vec<AgentTurn>,
    /// The answered flags, present exactly when the episode ended on an answer.
    pub final_sequence: Option<Vec<String>>,
    /// What was compiled instead, when repair changed the answer.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub repaired_sequence: Option<Vec<String>>,
    /// The answer equals a sequence the knowledge base recommended.
    pub answer_from_retrieval: bool,
    /// Every `instrcount` tool result, in call order.
    pub env_results: Vec<InstrCountResult>,
    /// The measurement of the final answer.
    pub final_result: Option<InstrCountResult>,
    pub rewards: RewardBreakdown,
    /// One entry per assistant turn; all but the last are zero.
    pub turn_rewards: Vec<f64>,
    pub discounted_return: f64,
    pub terminated_by: Termination,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub write_back: Option<WriteBack>,
}

impl Trajectory {
    pub fn assistant_turns(&self) -> usize {
        self.turns.iter().filter(|t| t.role == Role::Assistant).count()
    }

    /// Think blocks of all assistant turns, in order.
    pub fn reasoning(&self) -> Vec<&str> {
        self.turns.iter().flat_map(|t| t.think_text()).collect()
    }
}

/// The conversation sent to the policy. Tool output goes back as a user
/// message, the way chat templates without a tool role expect it.
pub fn wire_messages(prompt: &str, turns: &[AgentTurn]) -> Vec<ChatMessage> {
    let mut out = vec![ChatMessage::new("system", prompt)];
    out.extend(turns.iter().map(|t| match t.role {
        Role::Assistant => ChatMessage::new("assistant", t.raw.clone()),
        Role::Tool => ChatMessage::new("user", t.raw.clone()),
    }));
    out
}

/// Runs one episode on `program_id`.
pub fn run_episode(
    program_id: &str,
    policy: &mut dyn Policy,
    kb: &RwLock<KnowledgeBase>,
    env: &dyn Environment,
    cfg: &EpisodeConfig,
) -> Result<Trajectory, AgentError> {
    run_episode_with(program_id, policy, kb, env, cfg, &PromptTemplate::builtin())
}

pub fn run_episode_with(
    program_id: &str,
    policy: &mut dyn Policy,
    kb: &RwLock<KnowledgeBase>,
    env: &dyn Environment,
    cfg: &EpisodeConfig,
    template: &PromptTemplate,
) -> Result<Trajectory, AgentError> {
    let features = env.features(program_id)?;
    let prompt = template.render(&features, features.total_insts(), program_id)?;
    let mut turns: Vec<AgentTurn> = Vec::new();
    let mut env_results = Vec::new();
    let mut recommended: Vec<Vec<String>> = Vec::new();
    let mut assistant = 0;
    let terminated_by = loop {
        if assistant >= cfg.max_turns {
            break Termination::MaxTurns;
        }
        let messages = wire_messages(&prompt, &turns);
        let raw = policy.respond(&PolicyContext {
            program_id,
            features: &features,
            messages: &messages,
            turns: &turns,
        })?;
        let turn = parse_turn(&raw);
        assistant += 1;
        let ok = turn.is_well_formed();
        let answered = turn.has_answer_block();
        let calls = turn.tool_calls();
        turns.push(turn);
        if !ok {
            break Termination::ProtocolError;
        }
        if answered {
            break Termination::Answer;
        }
        let ctx = ToolContext {
            program_id,
            features: &features,
            kb,
            env,
            retrieval_k: cfg.retrieval_k,
        };
        for call in calls {
            let out = dispatch_tool(&call, &ctx);
            env_results.extend(out.env_result);
            recommended.extend(out.recommended);
            turns.push(AgentTurn::tool_response(&out.response));
        }
    };

    let format = score_format(&turns);
    let mut t = Trajectory {
        program_id: program_id.to_string(),
        policy: policy.name(),
        prompt,
        features,
        final_sequence: None,
        repaired_sequence: None,
        answer_from_retrieval: false,
        env_results,
        final_result: None,
        rewards: total_reward(
            RewardInputs {
                format,
                answer: 0,
                performance: None,
                improvement_over_oz: 0.0,
                degenerate: false,
            },
            cfg.weights,
        ),
        turn_rewards: Vec::new(),
        discounted_return: 0.0,
        terminated_by,
        write_back: None,
        turns,
    };
    if terminated_by == Termination::Answer {
        finish_answer(&mut t, &recommended, kb, env, cfg)?;
    }
    t.turn_rewards = vec![0.0; assistant];
    if let Some(last) = t.turn_rewards.last_mut() {
        *last = t.rewards.total;
    }
    t.discounted_return = discounted_return(&t.turn_rewards, cfg.gamma);
    Ok(t)
}

fn finish_answer(
    t: &mut Trajectory,
    recommended: &[Vec<String>],
    kb: &RwLock<KnowledgeBase>,
    env: &dyn Environment,
    cfg: &EpisodeConfig,
) -> Result<(), AgentError> {
    let last = t.turns.last().expect("an answer turn exists");
    let flags = last.answer().unwrap_or_default();
    t.answer_from_retrieval = recommended.contains(&flags);
    let catalog = kb.read().unwrap_or_else(|e| e.into_inner()).symbolic().clone();
    let mut compiled = flags.clone();
    if cfg.repair {
        if let Ok(seq) = parse_flags(&flags, &catalog) {
            if let Ok(fixed) = repair_sequence(&seq, &catalog) {
                compiled = render_flags(&fixed.sequence, &catalog).expect("repair keeps catalog indices");
            }
        }
        if compiled != flags {
            t.repaired_sequence = Some(compiled.clone());
        }
    }
    let result = env.instrcount(&t.program_id, &compiled)?;
    let format = t.rewards.format;
    let answer = score_answer(&compiled, &catalog, &result);
    let (performance, degenerate) = match result.status {
        EnvStatus::Success => {
            let (p, d) = score_performance(result.ic_unopt, result.ic_after);
            (Some(p), d)
        }
        _ => (None, false),
    };
    t.rewards = total_reward(
        RewardInputs {
            format,
            answer,
            performance,
            improvement_over_oz: result.improvement_over_oz,
            degenerate,
        },
        cfg.weights,
    );
    if cfg.write_back && result.is_success() {
        t.write_back = Some(write_back(t, &compiled, result.improvement_over_oz, kb));
    }
    t.final_sequence = Some(flags);
    t.final_result = Some(result);
    Ok(())
}

fn write_back(t: &Trajectory, flags: &[String], improvement: f64, kb: &RwLock<KnowledgeBase>) -> WriteBack {
    let mut kb = kb.write().unwrap_or_else(|e| e.into_inner());
    let seq = match parse_flags(flags, kb.symbolic()) {
        Ok(s) => s,
        Err(e) => return WriteBack::Rejected { reason: e.to_string() },
    };
    let result = if improvement < kb.epsilon {
        kb.insert_negative(seq, improvement)
            .map(|removed| WriteBack::Negative { removed })
    } else if improvement > 0.0 {
        kb.insert_empirical(EmpiricalEntry {
            features: t.features,
            sequence: seq,
            effect: improvement.clamp(-1.0, 1.0),
            provenance: format!("agent:{}", t.policy),
            note: t.program_id.clone(),
        })
        .map(|outcome| WriteBack::Empirical { outcome })
    } else {
        return WriteBack::Rejected {
            reason: "no change over -Oz".into(),
        };
    };
    result.unwrap_or_else(|e| WriteBack::Rejected { reason: e.to_string() })
}
