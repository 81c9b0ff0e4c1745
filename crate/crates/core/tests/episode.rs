//! Whole episodes against the table-driven environment.

mod common;

use aware_core::agent::{
    parse_tool_turn, parse_turn, run_episode, wire_messages, EpisodeConfig, RetrievalPolicy, ScriptedPolicy,
    Termination, WriteBack,
};
use aware_core::dataset::{build_dataset, format_percent, trajectory_to_record, trajectory_to_sft, DatasetError};
use aware_core::kb::InsertOutcome;
use aware_core::reward::score_format;
use common::{example_flags, fib_env, fib_kb, FIB_EXAMPLE, FIB_OZ, FIB_REGRESSION};

fn answer_only(flags: &[&str]) -> ScriptedPolicy {
    ScriptedPolicy::new([format!("<answer>{}</answer>", serde_json::to_string(flags).unwrap())])
}

#[test]
fn example_exchange_scores_fully() {
    let env = fib_env();
    let kb = fib_kb();
    let ic = common::fib_features().total_insts();
    let mut policy = ScriptedPolicy::example_exchange(&example_flags());
    let t = run_episode("fib", &mut policy, &kb, &env, &EpisodeConfig::default()).unwrap();

    assert_eq!(t.terminated_by, Termination::Answer);
    assert_eq!(t.rewards.format, 1);
    assert_eq!(t.rewards.answer, 1);
    assert_eq!(t.assistant_turns(), 3);
    assert_eq!(t.final_sequence.as_deref(), Some(&example_flags()[..]));
    assert!(t.answer_from_retrieval);
    let r = t.final_result.as_ref().unwrap();
    assert_eq!(r.improvement_over_oz, (FIB_OZ - FIB_EXAMPLE) as f64 / FIB_OZ as f64);
    assert_eq!(t.rewards.performance, (ic - FIB_EXAMPLE) as f64 / ic as f64);
    let total = 0.1 + 0.2 + 0.7 * t.rewards.performance;
    assert!((t.rewards.total - total).abs() < 1e-12);
    assert_eq!(t.turn_rewards, vec![0.0, 0.0, t.rewards.total]);
    assert_eq!(t.discounted_return, t.rewards.total);
    assert_eq!(t.env_results.len(), 1);
    // The retrieved sequence is already stored, so write-back only refreshes it.
    assert!(matches!(t.write_back, Some(WriteBack::Empirical { .. })));
    assert_eq!(kb.read().unwrap().empirical().len(), 1);
}

#[test]
fn record_and_sample_from_the_exchange() {
    let env = fib_env();
    let kb = fib_kb();
    let mut policy = ScriptedPolicy::example_exchange(&example_flags());
    let t = run_episode("fib", &mut policy, &kb, &env, &EpisodeConfig::default()).unwrap();

    let rec = trajectory_to_record(&t).unwrap();
    assert_eq!(rec.optimization_effect.improvement_pct, "13.04%");
    assert_eq!(rec.optimization_effect.improvement_pct, format_percent(3.0 / 23.0));
    assert_eq!(rec.pass_sequence, example_flags());
    assert_eq!(rec.provenance, "scripted");
    assert!(rec.reasoning_process.contains("instrcount"));
    let v = serde_json::to_value(&rec).unwrap();
    assert_eq!(v["Optimization Effect"]["Improvement (over_oz)"], "13.04%");

    // Replaying the sample through the parser passes the format gate.
    let sample = trajectory_to_sft(&t).unwrap();
    assert_eq!(sample.messages[0].role, "system");
    assert_eq!(sample.messages[0].content, t.prompt);
    let turns: Vec<_> = sample.messages[1..]
        .iter()
        .map(|m| match m.role.as_str() {
            "assistant" => parse_turn(&m.content),
            "tool" => parse_tool_turn(&m.content),
            r => panic!("role {r}"),
        })
        .collect();
    assert_eq!(score_format(&turns), 1);
    assert_eq!(sample.weightable_turns, vec![1, 3, 5]);
}

#[test]
fn junk_reply_ends_on_protocol_error() {
    let env = fib_env();
    let kb = fib_kb();
    let mut policy = ScriptedPolicy::new(["I think you should use -O2."]);
    let t = run_episode("fib", &mut policy, &kb, &env, &EpisodeConfig::default()).unwrap();
    assert_eq!(t.terminated_by, Termination::ProtocolError);
    assert_eq!((t.rewards.format, t.rewards.answer), (0, 0));
    assert_eq!(t.rewards.total, 0.0);
    assert!(t.final_sequence.is_none() && t.write_back.is_none());
    assert!(matches!(trajectory_to_record(&t), Err(DatasetError::IncompleteTrajectory { .. })));
    assert!(trajectory_to_sft(&t).is_err());
}

#[test]
fn oz_answer_scores_the_oz_reduction() {
    let env = fib_env();
    let kb = fib_kb();
    let ic = common::fib_features().total_insts();
    let t = run_episode("fib", &mut answer_only(&["-Oz"]), &kb, &env, &EpisodeConfig::default()).unwrap();
    assert_eq!(t.rewards.answer, 1);
    assert_eq!(t.rewards.performance, (ic - FIB_OZ) as f64 / ic as f64);
    assert_eq!(t.final_result.unwrap().improvement_over_oz, 0.0);
    assert!(matches!(t.write_back, Some(WriteBack::Rejected { .. })));
}

#[test]
fn regression_is_black_listed() {
    let env = fib_env();
    let kb = fib_kb();
    let t = run_episode("fib", &mut answer_only(&["--gvn"]), &kb, &env, &EpisodeConfig::default()).unwrap();
    let imp = t.final_result.as_ref().unwrap().improvement_over_oz;
    assert_eq!(imp, (FIB_OZ as f64 - FIB_REGRESSION as f64) / FIB_OZ as f64);
    assert_eq!(t.write_back, Some(WriteBack::Negative { removed: 0 }));
    let kb = kb.read().unwrap();
    assert_eq!(kb.negative().len(), 1);
    assert_eq!(kb.empirical().len(), 1);
}

#[test]
fn improvement_is_written_back_once() {
    let env = fib_env();
    let kb = std::sync::RwLock::new(aware_core::kb::KnowledgeBase::new(std::sync::Arc::new(
        aware_core::passes::PassCatalog::production().clone(),
    )));
    let flags: Vec<&str> = common::EXAMPLE_FLAGS.to_vec();
    let t = run_episode("fib", &mut answer_only(&flags), &kb, &env, &EpisodeConfig::default()).unwrap();
    assert_eq!(
        t.write_back,
        Some(WriteBack::Empirical {
            outcome: InsertOutcome::Appended
        })
    );
    let kb = kb.read().unwrap();
    assert_eq!(kb.empirical()[0].provenance, "agent:scripted");
    assert_eq!(kb.empirical()[0].note, "fib");
}

#[test]
fn evaluation_mode_leaves_the_store_alone() {
    let env = fib_env();
    let kb = fib_kb();
    let cfg = EpisodeConfig {
        write_back: false,
        ..EpisodeConfig::default()
    };
    let t = run_episode("fib", &mut answer_only(&["--gvn"]), &kb, &env, &cfg).unwrap();
    assert!(t.write_back.is_none());
    assert!(kb.read().unwrap().negative().is_empty());
}

#[test]
fn episodes_are_deterministic() {
    let env = fib_env();
    let run = || {
        let kb = fib_kb();
        run_episode("fib", &mut RetrievalPolicy, &kb, &env, &EpisodeConfig::default()).unwrap()
    };
    let (a, b) = (run(), run());
    assert_eq!(a, b);
    assert_eq!(a.final_sequence.as_deref(), Some(&example_flags()[..]));
    assert_eq!(a.rewards.format, 1);
}

#[test]
fn turn_budget_is_enforced() {
    let env = fib_env();
    let kb = fib_kb();
    let cfg = EpisodeConfig {
        max_turns: 3,
        gamma: 0.5,
        ..EpisodeConfig::default()
    };
    let mut policy = ScriptedPolicy::new(vec!["<think>still thinking</think>"; 10]);
    let t = run_episode("fib", &mut policy, &kb, &env, &cfg).unwrap();
    assert_eq!(t.terminated_by, Termination::MaxTurns);
    assert_eq!(t.assistant_turns(), 3);
    assert_eq!(t.rewards.format, 0);
    assert_eq!(t.turn_rewards.len(), 3);
}

#[test]
fn discounting_applies_to_the_last_turn() {
    let env = fib_env();
    let kb = fib_kb();
    let cfg = EpisodeConfig {
        gamma: 0.5,
        ..EpisodeConfig::default()
    };
    let mut policy = ScriptedPolicy::example_exchange(&example_flags());
    let t = run_episode("fib", &mut policy, &kb, &env, &cfg).unwrap();
    assert_eq!(t.discounted_return, 0.25 * t.rewards.total);
}

#[test]
fn tool_errors_are_readable_and_cost_the_format_reward() {
    let env = fib_env();
    let kb = fib_kb();
    let mut policy = ScriptedPolicy::new([
        r#"<tool_call>{"name": "search_web", "arguments": {}}</tool_call>"#,
        r#"<tool_call>{"name": "instrcount", "arguments": {"filename": "nope", "optimization_flags": ["--gvn"]}}</tool_call>"#,
        r#"<tool_call>{"name": "instrcount", "arguments": {"filename": "fib.ll", "optimization_flags": ["--slow"]}}</tool_call>"#,
        r#"<answer>["--gvn"]</answer>"#,
    ]);
    let t = run_episode("fib", &mut policy, &kb, &env, &EpisodeConfig::default()).unwrap();
    assert_eq!(t.terminated_by, Termination::Answer);
    let responses: Vec<serde_json::Value> = t
        .turns
        .iter()
        .filter(|x| x.role == aware_core::agent::Role::Tool)
        .map(|x| x.blocks[0].json.clone().unwrap())
        .collect();
    assert_eq!(responses[0]["reason"], "unknown_tool");
    assert_eq!(responses[1]["reason"], "unknown_program");
    assert_eq!(responses[2]["status"], "timeout");
    assert_eq!(t.rewards.format, 0);
    assert_eq!(t.rewards.answer, 0);
}

#[test]
fn wire_format() {
    let env = fib_env();
    let kb = fib_kb();
    let mut policy = ScriptedPolicy::example_exchange(&example_flags());
    let t = run_episode("fib", &mut policy, &kb, &env, &EpisodeConfig::default()).unwrap();
    let wire = wire_messages(&t.prompt, &t.turns);
    let roles: Vec<&str> = wire.iter().map(|m| m.role.as_str()).collect();
    assert_eq!(roles, ["system", "assistant", "user", "assistant", "user", "assistant"]);
    assert!(wire[2].content.contains("<tool_response>"));
    assert!(t.prompt.contains("Initial instruction count: "));
}

#[test]
fn dataset_build_counts() {
    let env = fib_env();
    let kb = fib_kb();
    let good = run_episode("fib", &mut ScriptedPolicy::example_exchange(&example_flags()), &kb, &env, &EpisodeConfig::default()).unwrap();
    let bad = run_episode("fib", &mut ScriptedPolicy::new(["junk"]), &kb, &env, &EpisodeConfig::default()).unwrap();
    let worse = run_episode("fib", &mut answer_only(&["--gvn"]), &kb, &env, &EpisodeConfig::default()).unwrap();
    let s = build_dataset(&[good, bad, worse], 0.0);
    assert_eq!(s.records.len(), 1);
    assert_eq!(s.rejected_records, 1);
    assert_eq!(s.filtered_out, 1);
    assert_eq!(s.samples.len(), 2);
    assert_eq!(s.rejected_samples, 1);
}
