//! The tool-calling agent loop: prompt, parse, dispatch, score.

mod episode;
pub mod policy;
pub mod prompt;
pub mod protocol;
pub mod remote;
pub mod tools;

pub use episode::{run_episode, run_episode_with, wire_messages, EpisodeConfig, Termination, Trajectory, WriteBack};
pub use policy::{CaseStudyPolicy, ChatMessage, Policy, PolicyContext, RetrievalPolicy, ScriptedPolicy};
pub use prompt::{render_prompt, PromptTemplate, TemplateError};
pub use protocol::{parse_tool_turn, parse_turn, AgentTurn, Block, BlockKind, ProtocolError, Role, ToolCall};
pub use remote::{ChatClient, PolicyEndpoint, PolicyKind, RemotePolicy};
pub use tools::{dispatch_tool, ToolContext, ToolOutcome};

use crate::env::EnvError;

#[derive(Debug, thiserror::Error)]
pub enum AgentError {
    #[error("policy unreachable: {0}")]
    PolicyUnreachable(String),
    #[error("malformed policy response: {0}")]
    MalformedResponse(String),
    #[error("policy endpoint answered {status}: {body}")]
    Rejected { status: u16, body: String },
    #[error("policy configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Template(#[from] TemplateError),
    #[error(transparent)]
    Env(#[from] EnvError),
}
