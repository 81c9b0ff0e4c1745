//! Tool dispatch. Every failure is returned as a JSON response the agent
//! can read, never as an error.

use std::sync::RwLock;

use serde_json::{json, Value};

use super::protocol::{ToolCall, TOOL_INSTRCOUNT, TOOL_KB};
use crate::env::{EnvError, Environment, InstrCountResult};
use crate::features::FeatureVector;
use crate::kb::{KbError, KnowledgeBase};
use crate::passes::render_flags;

/// What a tool call needs to see.
pub struct ToolContext<'a> {
    pub program_id: &'a str,
    pub features: &'a FeatureVector,
    pub kb: &'a RwLock<KnowledgeBase>,
    pub env: &'a dyn Environment,
    pub retrieval_k: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ToolOutcome {
    pub response: Value,
    /// Set for `instrcount` calls that reached the compiler.
    pub env_result: Option<InstrCountResult>,
    /// Every sequence a retrieval returned, best first.
    pub recommended: Vec<Vec<String>>,
}

impl ToolOutcome {
    fn error(reason: &str) -> ToolOutcome {
        ToolOutcome {
            response: json!({"status": "error", "reason": reason}),
            env_result: None,
            recommended: Vec::new(),
        }
    }
}

pub fn dispatch_tool(call: &ToolCall, ctx: &ToolContext<'_>) -> ToolOutcome {
    match call.name.as_str() {
        TOOL_KB => retrieve(call, ctx),
        TOOL_INSTRCOUNT => instrcount(call, ctx),
        _ => ToolOutcome::error("unknown_tool"),
    }
}

/// The query may be the feature JSON as a string or as an object. Anything
/// else falls back to the episode's own program.
fn query_features(arguments: &Value, fallback: &FeatureVector) -> FeatureVector {
    let parsed = match arguments.get("query") {
        Some(Value::String(s)) => FeatureVector::from_json(s).ok(),
        Some(v @ Value::Object(_)) => serde_json::from_value(v.clone()).ok(),
        _ => None,
    };
    parsed.unwrap_or_else(|| {
        log::debug!("retrieval query is not a feature vector; using the current program");
        *fallback
    })
}

/// Upper bound on the `k` argument of a retrieval.
pub const MAX_RETRIEVAL_K: usize = 8;

fn retrieve(call: &ToolCall, ctx: &ToolContext<'_>) -> ToolOutcome {
    let query = query_features(&call.arguments, ctx.features);
    let k = match call.arguments.get("k").and_then(Value::as_u64) {
        Some(k) => (k as usize).clamp(1, MAX_RETRIEVAL_K),
        None => ctx.retrieval_k.max(1),
    };
    let kb = ctx.kb.read().unwrap_or_else(|e| e.into_inner());
    let result = match kb.retrieve(&query, k) {
        Ok(r) => r,
        Err(KbError::EmptyStore) => return ToolOutcome::error("empty_knowledge_base"),
        Err(e) => return ToolOutcome::error(&e.to_string()),
    };
    let mut rendered = Vec::with_capacity(result.ranked.len());
    for r in &result.ranked {
        match render_flags(&r.entry.sequence, kb.symbolic()) {
            Ok(flags) => rendered.push((flags, r.entry.effect)),
            Err(e) => return ToolOutcome::error(&e.to_string()),
        }
    }
    let Some((best, effect)) = rendered.first().cloned() else {
        return ToolOutcome::error("empty_knowledge_base");
    };
    let mut response = json!({
        "recommended_pass_sequence": best,
        "performance_improvement": effect,
    });
    if rendered.len() > 1 {
        response["alternatives"] = rendered[1..]
            .iter()
            .map(|(f, e)| json!({"pass_sequence": f, "performance_improvement": e}))
            .collect();
    }
    ToolOutcome {
        response,
        env_result: None,
        recommended: rendered.into_iter().map(|(f, _)| f).collect(),
    }
}

/// Accepts a program id, or a file name whose stem is one.
fn program_id(filename: &str) -> String {
    let base = filename.rsplit('/').next().unwrap_or(filename);
    base.strip_suffix(".ll").unwrap_or(base).to_string()
}

fn instrcount(call: &ToolCall, ctx: &ToolContext<'_>) -> ToolOutcome {
    let args = &call.arguments;
    let id = match args.get("filename") {
        Some(Value::String(s)) => program_id(s),
        None => ctx.program_id.to_string(),
        Some(_) => return ToolOutcome::error("bad_arguments"),
    };
    let flags: Vec<String> = match args.get("optimization_flags").map(|v| serde_json::from_value(v.clone())) {
        Some(Ok(f)) => f,
        _ => return ToolOutcome::error("bad_arguments"),
    };
    match ctx.env.instrcount(&id, &flags) {
        Ok(r) => ToolOutcome {
            response: r.to_tool_response(),
            env_result: Some(r),
            recommended: Vec::new(),
        },
        Err(EnvError::UnknownProgram(_)) => ToolOutcome::error("unknown_program"),
        Err(e) => ToolOutcome::error(&e.to_string()),
    }
}
