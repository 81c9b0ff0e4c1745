//! Reward scoring against the fixed tables in `data/reward`.

mod common;

use aware_core::passes::PassCatalog;
use aware_core::reward::{score_answer, score_format, score_performance, total_reward, RewardInputs, RewardWeights};

#[test]
fn delta_ic_table() {
    let cases = common::delta_cases();
    assert_eq!(cases.len(), 50);
    assert!(cases.iter().any(|c| c.expected < 0.0));
    assert!(cases.iter().any(|c| c.expected == 0.0 && !c.degenerate));
    for c in &cases {
        let (got, degenerate) = score_performance(c.before, c.after);
        assert_eq!(got.to_bits(), c.expected.to_bits(), "{} -> {}", c.before, c.after);
        assert_eq!(degenerate, c.degenerate);
    }
}

#[test]
fn transcript_labels() {
    let catalog = PassCatalog::production();
    let cases = common::transcripts();
    assert_eq!(cases.len(), 50);
    for t in &cases {
        let turns = t.parsed();
        let format = score_format(&turns);
        assert_eq!(format, t.format, "{}: format", t.name);
        let env = t.env_result();
        let flags = common::Transcript::answered_flags(&turns);
        let b = total_reward(
            RewardInputs {
                format,
                answer: score_answer(&flags, catalog, &env),
                performance: env.is_success().then_some(env.delta_ic),
                improvement_over_oz: env.improvement_over_oz,
                degenerate: false,
            },
            RewardWeights::default(),
        );
        assert!(b.answer <= b.format, "{}", t.name);
        assert_eq!(b.answer, t.answer, "{}: answer", t.name);
    }
}

#[test]
fn exemplar_is_well_formed() {
    let cases = common::transcripts();
    let ex = cases.iter().find(|t| t.name == "exemplar").unwrap();
    let turns = ex.parsed();
    assert_eq!(score_format(&turns), 1);
    assert_eq!(
        common::Transcript::answered_flags(&turns),
        ["--inferattrs", "--dse", "--mldst-motion", "--mergefunc"]
    );
}
