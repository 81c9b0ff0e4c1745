//! Prompt rendering from a versioned template asset.
//!
//! Templates use `{name}` placeholders and `{{` / `}}` for literal braces.

use std::path::Path;

use crate::features::FeatureVector;

pub const PROMPT_TEMPLATE_VERSION: &str = "awarecompiler_v1";
const DEFAULT_TEMPLATE: &str = include_str!("../../data/prompts/awarecompiler_v1.txt");

/// Placeholders every template must use.
pub const REQUIRED_PLACEHOLDERS: [&str; 3] = ["formatted_features", "TotalInsts", "program_id"];

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum TemplateError {
    #[error("template never uses {{{0}}}")]
    MissingPlaceholder(String),
    #[error("template uses unknown placeholder {{{0}}}")]
    UnknownPlaceholder(String),
    #[error("unbalanced brace at byte {0}")]
    UnbalancedBrace(usize),
    #[error("total instruction count {given} does not match the feature vector ({expected})")]
    CountMismatch { given: u64, expected: u64 },
    #[error("reading template: {0}")]
    Io(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Piece {
    Text(String),
    Slot(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTemplate {
    pieces: Vec<Piece>,
}

impl PromptTemplate {
    /// The template shipped with the crate.
    pub fn builtin() -> PromptTemplate {
        Self::parse(DEFAULT_TEMPLATE).expect("shipped template is valid")
    }

    pub fn load(path: &Path) -> Result<PromptTemplate, TemplateError> {
        let text = std::fs::read_to_string(path).map_err(|e| TemplateError::Io(e.to_string()))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<PromptTemplate, TemplateError> {
        let mut pieces = Vec::new();
        let mut buf = String::new();
        let mut chars = text.char_indices().peekable();
        while let Some((i, c)) = chars.next() {
            match c {
                '{' if chars.peek().map(|&(_, n)| n) == Some('{') => {
                    chars.next();
                    buf.push('{');
                }
                '}' if chars.peek().map(|&(_, n)| n) == Some('}') => {
                    chars.next();
                    buf.push('}');
                }
                '{' => {
                    let rest = &text[i + 1..];
                    let end = rest.find('}').ok_or(TemplateError::UnbalancedBrace(i))?;
                    let name = &rest[..end];
                    if !REQUIRED_PLACEHOLDERS.contains(&name) {
                        return Err(TemplateError::UnknownPlaceholder(name.to_string()));
                    }
                    pieces.push(Piece::Text(std::mem::take(&mut buf)));
                    pieces.push(Piece::Slot(name.to_string()));
                    for _ in 0..=name.chars().count() {
                        chars.next();
                    }
                }
                '}' => return Err(TemplateError::UnbalancedBrace(i)),
                c => buf.push(c),
            }
        }
        pieces.push(Piece::Text(buf));
        for name in REQUIRED_PLACEHOLDERS {
            if !pieces.iter().any(|p| matches!(p, Piece::Slot(s) if s == name)) {
                return Err(TemplateError::MissingPlaceholder(name.to_string()));
            }
        }
        Ok(PromptTemplate { pieces })
    }

    pub fn render(&self, fv: &FeatureVector, total_insts: u64, program_id: &str) -> Result<String, TemplateError> {
        if total_insts != fv.total_insts() {
            return Err(TemplateError::CountMismatch {
                given: total_insts,
                expected: fv.total_insts(),
            });
        }
        let features = fv.to_json();
        let total = total_insts.to_string();
        let mut out = String::new();
        for p in &self.pieces {
            out.push_str(match p {
                Piece::Text(t) => t,
                Piece::Slot(s) if s == "formatted_features" => &features,
                Piece::Slot(s) if s == "TotalInsts" => &total,
                Piece::Slot(_) => program_id,
            });
        }
        Ok(out)
    }
}

/// Renders the built-in template.
pub fn render_prompt(fv: &FeatureVector, total_insts: u64, program_id: &str) -> Result<String, TemplateError> {
    PromptTemplate::builtin().render(fv, total_insts, program_id)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::idx;

    fn fv() -> FeatureVector {
        let mut fv = FeatureVector::default();
        fv.set(idx::TOTAL_INSTS, 42);
        fv.set(idx::NUM_EDGES, 7);
        fv
    }

    #[test]
    fn builtin_renders_stably() {
        let a = render_prompt(&fv(), 42, "crc32").unwrap();
        let b = render_prompt(&fv(), 42, "crc32").unwrap();
        assert_eq!(a, b);
        assert!(a.starts_with("Act as a compiler optimization expert"));
        assert!(a.contains(&fv().to_json()));
        assert!(a.contains("Initial instruction count: 42\n"));
        assert!(a.contains("using instrcount with crc32."));
        // Escaped braces come out single.
        assert!(a.contains("{\"name\": \"instrcount\""));
        assert!(!a.contains("{{"));
    }

    #[test]
    fn template_errors() {
        assert_eq!(
            PromptTemplate::parse("{formatted_features} {TotalInsts}"),
            Err(TemplateError::MissingPlaceholder("program_id".into()))
        );
        assert_eq!(
            PromptTemplate::parse("{formatted_features} {TotalInsts} {program_id} {other}"),
            Err(TemplateError::UnknownPlaceholder("other".into()))
        );
        assert!(matches!(PromptTemplate::parse("{program_id"), Err(TemplateError::UnbalancedBrace(_))));
        assert!(matches!(render_prompt(&fv(), 41, "p"), Err(TemplateError::CountMismatch { .. })));
    }

    #[test]
    fn custom_template() {
        let t = PromptTemplate::parse("{program_id}:{TotalInsts}:{{x}}:{formatted_features}").unwrap();
        let out = t.render(&FeatureVector::default(), 0, "é").unwrap();
        assert!(out.starts_with("é:0:{x}:{\"BBNumArgsHi\": 0"));
    }
}
