pub mod features;
pub mod ir;
pub mod passes;
pub mod kb;
pub mod env;
pub mod agent;
pub mod reward;
pub mod dataset;
pub mod harness;
pub mod search;
pub mod config;

// Runs the guide's snippets as doc-tests, one module per chapter.
#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/features.md")]
    mod features {}
    #[doc = include_str!("../../../book/src/passes.md")]
    mod passes {}
    #[doc = include_str!("../../../book/src/knowledge_base.md")]
    mod knowledge_base {}
    #[doc = include_str!("../../../book/src/environment.md")]
    mod environment {}
    #[doc = include_str!("../../../book/src/rewards.md")]
    mod rewards {}
    #[doc = include_str!("../../../book/src/agent.md")]
    mod agent {}
    #[doc = include_str!("../../../book/src/dataset.md")]
    mod dataset {}
    #[doc = include_str!("../../../book/src/harness.md")]
    mod harness {}
}
