//! The tag protocol spoken by the policy: `<think>`, `<tool_call>`,
//! `<answer>` from the assistant and `<tool_response>` back from tools.
//!
//! Parsing is total. Malformed regions are kept and annotated so that the
//! format reward can see them.

use std::fmt;

use serde::{Deserialize, Serialize};
use serde_json::Value;

pub const TOOL_KB: &str = "lightrag_compiler_optimization";
pub const TOOL_INSTRCOUNT: &str = "instrcount";
/// Tools the runtime knows how to dispatch.
pub const TOOL_NAMES: [&str; 2] = [TOOL_KB, TOOL_INSTRCOUNT];

/// Chat-template markers that may surround a message and carry no content.
const TEMPLATE_MARKERS: [&str; 4] = [
    "<|im_start|>assistant",
    "<|im_start|>user",
    "<|im_start|>",
    "<|im_end|>",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Assistant,
    Tool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BlockKind {
    Think,
    ToolCall,
    ToolResponse,
    Answer,
}

impl BlockKind {
    const ALL: [BlockKind; 4] = [
        BlockKind::Think,
        BlockKind::ToolCall,
        BlockKind::ToolResponse,
        BlockKind::Answer,
    ];

    pub fn tag(self) -> &'static str {
        match self {
            BlockKind::Think => "think",
            BlockKind::ToolCall => "tool_call",
            BlockKind::ToolResponse => "tool_response",
            BlockKind::Answer => "answer",
        }
    }
}

/// Something wrong with a turn or one of its blocks.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ProtocolError {
    StrayText { text: String },
    Unclosed { tag: String },
    NestedTag { tag: String },
    UnexpectedBlock { tag: String },
    BadJson { message: String },
    BadToolCall { message: String },
    BadAnswer { message: String },
    MultipleToolCalls,
    AnswerWithToolCall,
    Empty,
}

impl fmt::Display for ProtocolError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ProtocolError::StrayText { text } => write!(f, "text outside tags: {text:?}"),
            ProtocolError::Unclosed { tag } => write!(f, "<{tag}> is never closed"),
            ProtocolError::NestedTag { tag } => write!(f, "<{tag}> opened inside another block"),
            ProtocolError::UnexpectedBlock { tag } => write!(f, "<{tag}> is not allowed here"),
            ProtocolError::BadJson { message } => write!(f, "invalid JSON: {message}"),
            ProtocolError::BadToolCall { message } => write!(f, "bad tool call: {message}"),
            ProtocolError::BadAnswer { message } => write!(f, "bad answer: {message}"),
            ProtocolError::MultipleToolCalls => f.write_str("more than one tool call in a turn"),
            ProtocolError::AnswerWithToolCall => f.write_str("answer and tool call in one turn"),
            ProtocolError::Empty => f.write_str("no tagged blocks"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolCall {
    pub name: String,
    #[serde(default)]
    pub arguments: Value,
}

/// One tagged region.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Block {
    pub kind: BlockKind,
    /// Inner text, trimmed.
    pub text: String,
    /// Parsed body for tool calls, tool responses and answers.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub json: Option<Value>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<ProtocolError>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentTurn {
    pub role: Role,
    /// The message exactly as received or sent.
    pub raw: String,
    pub blocks: Vec<Block>,
    /// Problems that do not belong to a single block.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub errors: Vec<ProtocolError>,
}

impl AgentTurn {
    /// Builds the tool turn that carries `response`.
    pub fn tool_response(response: &Value) -> AgentTurn {
        let body = response.to_string();
        AgentTurn {
            role: Role::Tool,
            raw: format!("<tool_response>\n{body}\n</tool_response>"),
            blocks: vec![Block {
                kind: BlockKind::ToolResponse,
                text: body,
                json: Some(response.clone()),
                error: None,
            }],
            errors: Vec::new(),
        }
    }

    pub fn is_well_formed(&self) -> bool {
        self.errors.is_empty() && self.blocks.iter().all(|b| b.error.is_none())
    }

    /// Every problem in the turn, block-level ones included.
    pub fn all_errors(&self) -> Vec<&ProtocolError> {
        self.errors
            .iter()
            .chain(self.blocks.iter().filter_map(|b| b.error.as_ref()))
            .collect()
    }

    pub fn think_text(&self) -> Vec<&str> {
        self.blocks
            .iter()
            .filter(|b| b.kind == BlockKind::Think)
            .map(|b| b.text.as_str())
            .collect()
    }

    /// Well-formed tool calls, in order.
    pub fn tool_calls(&self) -> Vec<ToolCall> {
        self.blocks
            .iter()
            .filter(|b| b.kind == BlockKind::ToolCall && b.error.is_none())
            .filter_map(|b| b.json.clone())
            .filter_map(|v| serde_json::from_value(v).ok())
            .collect()
    }

    /// The flags of a well-formed answer block, if there is one.
    pub fn answer(&self) -> Option<Vec<String>> {
        self.blocks
            .iter()
            .find(|b| b.kind == BlockKind::Answer && b.error.is_none())
            .and_then(|b| b.json.clone())
            .and_then(|v| serde_json::from_value(v).ok())
    }

    pub fn has_answer_block(&self) -> bool {
        self.blocks.iter().any(|b| b.kind == BlockKind::Answer)
    }
}

fn strip_markers(raw: &str) -> String {
    let mut s = raw.to_string();
    for m in TEMPLATE_MARKERS {
        s = s.replace(m, " ");
    }
    s
}

fn next_open(s: &str, from: usize) -> Option<(usize, BlockKind)> {
    BlockKind::ALL
        .iter()
        .filter_map(|&k| s[from..].find(&format!("<{}>", k.tag())).map(|i| (from + i, k)))
        .min_by_key(|&(i, _)| i)
}

fn shorten(s: &str) -> String {
    const MAX: usize = 80;
    match s.char_indices().nth(MAX) {
        Some((i, _)) => format!("{}...", &s[..i]),
        None => s.to_string(),
    }
}

fn parse_body(kind: BlockKind, text: &str) -> (Option<Value>, Option<ProtocolError>) {
    if kind == BlockKind::Think {
        return (None, None);
    }
    let value: Value = match serde_json::from_str(text) {
        Ok(v) => v,
        Err(e) => {
            let message = e.to_string();
            let err = match kind {
                BlockKind::Answer => ProtocolError::BadAnswer { message },
                _ => ProtocolError::BadJson { message },
            };
            return (None, Some(err));
        }
    };
    let err = match kind {
        BlockKind::ToolCall => match serde_json::from_value::<ToolCall>(value.clone()) {
            Ok(call) if !call.arguments.is_object() && !call.arguments.is_null() => {
                Some(ProtocolError::BadToolCall {
                    message: "arguments must be an object".into(),
                })
            }
            Ok(_) => None,
            Err(e) => Some(ProtocolError::BadToolCall { message: e.to_string() }),
        },
        BlockKind::Answer => match value.as_array() {
            Some(items) if items.iter().all(Value::is_string) => None,
            _ => Some(ProtocolError::BadAnswer {
                message: "expected a JSON list of strings".into(),
            }),
        },
        _ => None,
    };
    (Some(value), err)
}

/// Splits a message into tagged blocks.
fn parse_blocks(raw: &str) -> (Vec<Block>, Vec<ProtocolError>) {
    let s = strip_markers(raw);
    let mut blocks = Vec::new();
    let mut errors = Vec::new();
    let mut pos = 0;
    while pos < s.len() {
        let Some((start, kind)) = next_open(&s, pos) else {
            let rest = s[pos..].trim();
            if !rest.is_empty() {
                errors.push(ProtocolError::StrayText { text: shorten(rest) });
            }
            break;
        };
        let stray = s[pos..start].trim();
        if !stray.is_empty() {
            errors.push(ProtocolError::StrayText { text: shorten(stray) });
        }
        let open = format!("<{}>", kind.tag());
        let close = format!("</{}>", kind.tag());
        let body_start = start + open.len();
        let Some(rel_end) = s[body_start..].find(&close) else {
            errors.push(ProtocolError::Unclosed { tag: kind.tag().into() });
            break;
        };
        let body_end = body_start + rel_end;
        let text = s[body_start..body_end].trim().to_string();
        let (json, mut error) = parse_body(kind, &text);
        if let Some((_, inner)) = next_open(&s[..body_end], body_start) {
            error = Some(ProtocolError::NestedTag { tag: inner.tag().into() });
        }
        blocks.push(Block { kind, text, json, error });
        pos = body_end + close.len();
    }
    (blocks, errors)
}

/// Parses one assistant message. Never fails; problems are annotated.
pub fn parse_turn(raw: &str) -> AgentTurn {
    let (mut blocks, mut errors) = parse_blocks(raw);
    for b in &mut blocks {
        if b.kind == BlockKind::ToolResponse && b.error.is_none() {
            b.error = Some(ProtocolError::UnexpectedBlock { tag: b.kind.tag().into() });
        }
    }
    if blocks.is_empty() && errors.is_empty() {
        errors.push(ProtocolError::Empty);
    }
    let calls = blocks.iter().filter(|b| b.kind == BlockKind::ToolCall).count();
    if calls > 1 {
        errors.push(ProtocolError::MultipleToolCalls);
    }
    if calls > 0 && blocks.iter().any(|b| b.kind == BlockKind::Answer) {
        errors.push(ProtocolError::AnswerWithToolCall);
    }
    AgentTurn {
        role: Role::Assistant,
        raw: raw.to_string(),
        blocks,
        errors,
    }
}

/// Parses a tool message. It must hold exactly one `<tool_response>`.
pub fn parse_tool_turn(raw: &str) -> AgentTurn {
    let (mut blocks, mut errors) = parse_blocks(raw);
    for b in &mut blocks {
        if b.kind != BlockKind::ToolResponse && b.error.is_none() {
            b.error = Some(ProtocolError::UnexpectedBlock { tag: b.kind.tag().into() });
        }
    }
    let responses = blocks.iter().filter(|b| b.kind == BlockKind::ToolResponse).count();
    if responses != 1 {
        errors.push(ProtocolError::UnexpectedBlock {
            tag: format!("{responses} tool_response blocks"),
        });
    }
    AgentTurn {
        role: Role::Tool,
        raw: raw.to_string(),
        blocks,
        errors,
    }
}
