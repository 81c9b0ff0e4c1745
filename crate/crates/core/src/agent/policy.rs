//! Sources of assistant turns. Mock policies read the conversation so far
//! and answer deterministically.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::protocol::{AgentTurn, Role, TOOL_INSTRCOUNT, TOOL_KB};
use super::AgentError;
use crate::features::FeatureVector;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: String,
    pub content: String,
}

impl ChatMessage {
    pub fn new(role: &str, content: impl Into<String>) -> Self {
        ChatMessage {
            role: role.to_string(),
            content: content.into(),
        }
    }
}

/// What a policy sees before producing the next turn.
pub struct PolicyContext<'a> {
    pub program_id: &'a str,
    pub features: &'a FeatureVector,
    /// The chat as sent over the wire, prompt first.
    pub messages: &'a [ChatMessage],
    pub turns: &'a [AgentTurn],
}

impl PolicyContext<'_> {
    /// JSON bodies of the tool responses so far.
    pub fn tool_responses(&self) -> Vec<&Value> {
        self.turns
            .iter()
            .filter(|t| t.role == Role::Tool)
            .filter_map(|t| t.blocks.first()?.json.as_ref())
            .collect()
    }
}

pub trait Policy: Send {
    fn name(&self) -> String;
    fn respond(&mut self, ctx: &PolicyContext<'_>) -> Result<String, AgentError>;
}

fn tool_call(think: &str, name: &str, arguments: Value) -> String {
    let call = json!({"name": name, "arguments": arguments});
    format!("<think> {think} </think>\n<tool_call>\n{call}\n</tool_call>")
}

fn answer(think: &str, flags: &[String]) -> String {
    let body = serde_json::to_string(flags).expect("strings serialize");
    format!("<think> {think} </think>\n<answer>\n{body}\n</answer>")
}

fn query_args(ctx: &PolicyContext<'_>) -> Value {
    json!({"query": ctx.features.to_json()})
}

fn instrcount_args(ctx: &PolicyContext<'_>, flags: &[String]) -> Value {
    json!({"filename": ctx.program_id, "optimization_flags": flags})
}

fn improvement(v: &Value) -> Option<f64> {
    (v.get("status")? == "success").then(|| v.get("improvement_over_oz")?.as_f64())?
}

/// Replays fixed messages. `{program_id}` is substituted as is and
/// `{formatted_features}` with its quotes escaped, so it can sit inside a
/// JSON string. Once the script runs out every reply is empty.
#[derive(Debug, Clone)]
pub struct ScriptedPolicy {
    replies: VecDeque<String>,
}

impl ScriptedPolicy {
    pub fn new<S: Into<String>>(replies: impl IntoIterator<Item = S>) -> Self {
        ScriptedPolicy {
            replies: replies.into_iter().map(Into::into).collect(),
        }
    }

    /// The three-message exchange of the shipped prompt's example: retrieve,
    /// verify `flags`, answer `flags`.
    pub fn example_exchange(flags: &[String]) -> Self {
        let list = serde_json::to_string(flags).expect("strings serialize");
        ScriptedPolicy::new([
            "<|im_start|>assistant\n<think> Memory and branch counts dominate this program, so memory and \
             control-flow passes come first. \n</think>\n<tool_call>\n\
             {\"name\": \"lightrag_compiler_optimization\", \"arguments\": {\"query\": \"{formatted_features}\"}}\n\
             </tool_call>\n<|im_end|>"
                .to_string(),
            format!(
                "<|im_start|>assistant\n<think> Checking the suggested sequence with instrcount. \n</think>\n\
                 <tool_call>\n{{\"name\": \"instrcount\", \"arguments\": {{\"filename\": \"{{program_id}}\", \
                 \"optimization_flags\": {list}}}}} </tool_call>\n<|im_end|>"
            ),
            format!("<|im_start|>assistant\n<answer>\n{list}\n</answer>\n<|im_end|>"),
        ])
    }
}

impl Policy for ScriptedPolicy {
    fn name(&self) -> String {
        "scripted".into()
    }

    fn respond(&mut self, ctx: &PolicyContext<'_>) -> Result<String, AgentError> {
        Ok(self
            .replies
            .pop_front()
            .unwrap_or_default()
            .replace("{program_id}", ctx.program_id)
            .replace("{formatted_features}", &ctx.features.to_json().replace('"', "\\\"")))
    }
}

/// Asks the knowledge base, checks its top answer, then submits it. With
/// nothing to retrieve it submits `-Oz`.
#[derive(Debug, Clone, Default)]
pub struct RetrievalPolicy;

impl Policy for RetrievalPolicy {
    fn name(&self) -> String {
        "retrieval".into()
    }

    fn respond(&mut self, ctx: &PolicyContext<'_>) -> Result<String, AgentError> {
        let responses = ctx.tool_responses();
        let recommended: Option<Vec<String>> = responses
            .first()
            .and_then(|r| serde_json::from_value(r.get("recommended_pass_sequence")?.clone()).ok());
        Ok(match (responses.len(), recommended) {
            (0, _) => tool_call("Looking up sequences that worked on similar programs.", TOOL_KB, query_args(ctx)),
            (1, Some(flags)) => tool_call(
                "Measuring the retrieved sequence.",
                TOOL_INSTRCOUNT,
                instrcount_args(ctx, &flags),
            ),
            (_, Some(flags)) => answer("Submitting the retrieved sequence.", &flags),
            (_, None) => answer("Nothing retrieved; falling back to -Oz.", &["-Oz".to_string()]),
        })
    }
}

/// Tries fixed heuristics first and consults the knowledge base only once
/// none of them beats `-Oz`. Measures up to `candidates` retrieved sequences
/// and answers with the best measured one.
#[derive(Debug, Clone)]
pub struct CaseStudyPolicy {
    heuristics: Vec<Vec<String>>,
    candidates: usize,
}

impl CaseStudyPolicy {
    pub fn new(heuristics: Vec<Vec<String>>) -> Self {
        CaseStudyPolicy {
            heuristics,
            candidates: 3,
        }
    }

    pub fn with_candidates(mut self, candidates: usize) -> Self {
        self.candidates = candidates.max(1);
        self
    }

    pub fn default_heuristics() -> Vec<Vec<String>> {
        let seq = |s: &[&str]| s.iter().map(|f| f.to_string()).collect();
        vec![
            seq(&["--mem2reg", "--instcombine", "--simplifycfg"]),
            seq(&["--sroa", "--early-cse", "--dce"]),
        ]
    }
}

impl Default for CaseStudyPolicy {
    fn default() -> Self {
        Self::new(Self::default_heuristics())
    }
}

/// Sequences listed in a retrieval response, best first.
fn retrieved(v: &Value) -> Vec<Vec<String>> {
    let mut out: Vec<Vec<String>> = Vec::new();
    if let Some(Ok(best)) = v.get("recommended_pass_sequence").map(|x| serde_json::from_value(x.clone())) {
        out.push(best);
    }
    for alt in v.get("alternatives").and_then(Value::as_array).into_iter().flatten() {
        if let Some(Ok(f)) = alt.get("pass_sequence").map(|x| serde_json::from_value(x.clone())) {
            out.push(f);
        }
    }
    out
}

impl Policy for CaseStudyPolicy {
    fn name(&self) -> String {
        "case_study".into()
    }

    fn respond(&mut self, ctx: &PolicyContext<'_>) -> Result<String, AgentError> {
        let responses = ctx.tool_responses();
        let n = self.heuristics.len();
        let done = responses.len();
        let measured = |seqs: &[Vec<String>], from: usize| -> Option<(Vec<String>, f64)> {
            seqs.iter()
                .zip(responses.iter().skip(from).map(|r| improvement(r)))
                .filter_map(|(s, imp)| Some((s.clone(), imp?)))
                .fold(None, |acc: Option<(Vec<String>, f64)>, x| match acc {
                    Some(a) if a.1 >= x.1 => Some(a),
                    _ => Some(x),
                })
        };
        let best = measured(&self.heuristics, 0);
        if let Some((h, imp)) = &best {
            if *imp > 0.0 && done <= n {
                return Ok(answer("This heuristic already beats -Oz.", h));
            }
        }
        if done < n {
            let think = if done == 0 {
                "Starting from a generic size heuristic."
            } else {
                "No gain over -Oz yet; trying the next heuristic."
            };
            return Ok(tool_call(think, TOOL_INSTRCOUNT, instrcount_args(ctx, &self.heuristics[done])));
        }
        let fallback = best.clone().map(|(h, _)| h).unwrap_or_else(|| vec!["-Oz".to_string()]);
        if done == n {
            let mut args = query_args(ctx);
            args["k"] = json!(self.candidates);
            return Ok(tool_call("The heuristics did not help here. Asking the knowledge base.", TOOL_KB, args));
        }
        let mut seqs = retrieved(responses[n]);
        seqs.truncate(self.candidates);
        if seqs.is_empty() {
            return Ok(answer("Retrieval failed; keeping the best heuristic.", &fallback));
        }
        let checked = done - n - 1;
        if checked < seqs.len() {
            let think = if checked == 0 {
                "Measuring the recommended sequence."
            } else {
                "Measuring the next retrieved sequence."
            };
            return Ok(tool_call(think, TOOL_INSTRCOUNT, instrcount_args(ctx, &seqs[checked])));
        }
        Ok(match (measured(&seqs, n + 1), best) {
            (Some((_, r)), Some((_, b))) if r <= b => answer("The heuristic measured better.", &fallback),
            (None, _) => answer("The retrieved sequences failed to compile.", &fallback),
            (Some((s, _)), _) => answer("Using the best retrieved sequence.", &s),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agent::protocol::parse_turn;

    fn ctx<'a>(turns: &'a [AgentTurn], fv: &'a FeatureVector) -> PolicyContext<'a> {
        PolicyContext {
            program_id: "p",
            features: fv,
            messages: &[],
            turns,
        }
    }

    #[test]
    fn scripted_substitutes_and_runs_dry() {
        let fv = FeatureVector::default();
        let mut p = ScriptedPolicy::example_exchange(&["--gvn".to_string()]);
        let first = p.respond(&ctx(&[], &fv)).unwrap();
        let t = parse_turn(&first);
        assert!(t.is_well_formed(), "{:?}", t.all_errors());
        let q = t.tool_calls()[0].arguments["query"].as_str().unwrap().to_string();
        assert_eq!(FeatureVector::from_json(&q).unwrap(), fv);
        let second = parse_turn(&p.respond(&ctx(&[], &fv)).unwrap());
        assert_eq!(second.tool_calls()[0].arguments["filename"], "p");
        let third = parse_turn(&p.respond(&ctx(&[], &fv)).unwrap());
        assert_eq!(third.answer(), Some(vec!["--gvn".to_string()]));
        assert_eq!(p.respond(&ctx(&[], &fv)).unwrap(), "");
    }

    #[test]
    fn retrieval_policy_steps() {
        let fv = FeatureVector::default();
        let mut p = RetrievalPolicy;
        let mut turns = vec![parse_turn(&p.respond(&ctx(&[], &fv)).unwrap())];
        assert_eq!(turns[0].tool_calls()[0].name, TOOL_KB);
        turns.push(AgentTurn::tool_response(
            &json!({"recommended_pass_sequence": ["--dce"], "performance_improvement": 0.1}),
        ));
        turns.push(parse_turn(&p.respond(&ctx(&turns, &fv)).unwrap()));
        assert_eq!(turns[2].tool_calls()[0].arguments["optimization_flags"], json!(["--dce"]));
        turns.push(AgentTurn::tool_response(&json!({"status": "success", "improvement_over_oz": -0.2})));
        let last = parse_turn(&p.respond(&ctx(&turns, &fv)).unwrap());
        assert_eq!(last.answer(), Some(vec!["--dce".to_string()]));

        let empty = [AgentTurn::tool_response(&json!({"status": "error", "reason": "empty_knowledge_base"}))];
        let last = parse_turn(&p.respond(&ctx(&empty, &fv)).unwrap());
        assert_eq!(last.answer(), Some(vec!["-Oz".to_string()]));
    }

    #[test]
    fn case_study_consults_after_heuristics_fail() {
        let fv = FeatureVector::default();
        let mut p = CaseStudyPolicy::new(vec![vec!["--dce".into()]]);
        let mut turns = Vec::new();
        let mut step = |turns: &mut Vec<AgentTurn>, reply: Option<Value>| {
            let t = parse_turn(&p.respond(&ctx(turns, &fv)).unwrap());
            turns.push(t.clone());
            if let Some(r) = reply {
                turns.push(AgentTurn::tool_response(&r));
            }
            t
        };
        let t = step(&mut turns, Some(json!({"status": "success", "improvement_over_oz": 0.0})));
        assert_eq!(t.tool_calls()[0].name, TOOL_INSTRCOUNT);
        let t = step(
            &mut turns,
            Some(json!({"recommended_pass_sequence": ["--gvn"], "performance_improvement": 0.1})),
        );
        assert_eq!(t.tool_calls()[0].name, TOOL_KB);
        let t = step(&mut turns, Some(json!({"status": "success", "improvement_over_oz": 0.03})));
        assert_eq!(t.tool_calls()[0].arguments["optimization_flags"], json!(["--gvn"]));
        let t = step(&mut turns, None);
        assert_eq!(t.answer(), Some(vec!["--gvn".to_string()]));
    }

    #[test]
    fn case_study_measures_alternatives() {
        let fv = FeatureVector::default();
        let mut p = CaseStudyPolicy::new(vec![vec!["--dce".into()]]).with_candidates(2);
        let replies = [
            json!({"status": "success", "improvement_over_oz": -0.1}),
            json!({
                "recommended_pass_sequence": ["--gvn"],
                "performance_improvement": 0.2,
                "alternatives": [
                    {"pass_sequence": ["--licm"], "performance_improvement": 0.1},
                    {"pass_sequence": ["--adce"], "performance_improvement": 0.0}
                ]
            }),
            json!({"status": "success", "improvement_over_oz": -0.3}),
            json!({"status": "success", "improvement_over_oz": 0.05}),
        ];
        let mut turns = Vec::new();
        for r in &replies {
            turns.push(parse_turn(&p.respond(&ctx(&turns, &fv)).unwrap()));
            turns.push(AgentTurn::tool_response(r));
        }
        assert_eq!(turns[2].tool_calls()[0].arguments["k"], 2);
        assert_eq!(turns[6].tool_calls()[0].arguments["optimization_flags"], json!(["--licm"]));
        let last = parse_turn(&p.respond(&ctx(&turns, &fv)).unwrap());
        assert_eq!(last.answer(), Some(vec!["--licm".to_string()]));
    }

    #[test]
    fn case_study_stops_on_a_winning_heuristic() {
        let fv = FeatureVector::default();
        let mut p = CaseStudyPolicy::new(vec![vec!["--dce".into()], vec!["--gvn".into()]]);
        let turns = vec![
            parse_turn(&p.respond(&ctx(&[], &fv)).unwrap()),
            AgentTurn::tool_response(&json!({"status": "success", "improvement_over_oz": 0.01})),
        ];
        let t = parse_turn(&p.respond(&ctx(&turns, &fv)).unwrap());
        assert_eq!(t.answer(), Some(vec!["--dce".to_string()]));
    }
}
