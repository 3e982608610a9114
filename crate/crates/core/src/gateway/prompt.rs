//! The two shipped prompts and a small `{placeholder}` renderer.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::TermList;

const IDENTIFY_SYSTEM: &str = include_str!("templates/identify_system.txt");
const IDENTIFY_USER: &str = include_str!("templates/identify_user.txt");
const FILTER_SYSTEM: &str = include_str!("templates/filter_system.txt");
const FILTER_USER: &str = include_str!("templates/filter_user.txt");

/// Rendered system and user messages for one completion call.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ChatMessages {
    pub system: String,
    pub user: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PromptError {
    #[error("no binding for placeholder {{{0}}}")]
    MissingBinding(String),
    #[error("transcript is empty")]
    EmptyTranscript,
    #[error("glossary is empty")]
    EmptyGlossary,
    #[error("background is empty")]
    EmptyBackground,
}

/// A system message and a user message, either of which may contain
/// `{name}` placeholders (`name` is lowercase ASCII letters and underscores).
///
/// Braces that do not enclose such a name, like the JSON examples inside the
/// shipped prompts, are copied through untouched.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTemplate {
    pub system_message: String,
    pub user_template: String,
}

impl PromptTemplate {
    pub fn new(system_message: impl Into<String>, user_template: impl Into<String>) -> Self {
        Self {
            system_message: system_message.into(),
            user_template: user_template.into(),
        }
    }

    /// Combined jargon identification and explanation prompt.
    pub fn identify() -> Self {
        Self::new(IDENTIFY_SYSTEM, IDENTIFY_USER)
    }

    /// Background-based filtering prompt.
    pub fn filter() -> Self {
        Self::new(FILTER_SYSTEM, FILTER_USER)
    }

    /// Placeholder names in order of appearance (system first), with repeats.
    pub fn placeholders(&self) -> Vec<&str> {
        let mut names = Vec::new();
        for text in [&self.system_message, &self.user_template] {
            for piece in scan(text) {
                if let Piece::Placeholder(name) = piece {
                    names.push(name);
                }
            }
        }
        names
    }

    pub fn render(&self, bindings: &[(&str, &str)]) -> Result<ChatMessages, PromptError> {
        Ok(ChatMessages {
            system: substitute(&self.system_message, bindings)?,
            user: substitute(&self.user_template, bindings)?,
        })
    }
}

enum Piece<'a> {
    Literal(&'a str),
    Placeholder(&'a str),
}

fn scan(text: &str) -> Vec<Piece<'_>> {
    let mut pieces = Vec::new();
    let mut rest = text;
    while let Some(open) = rest.find('{') {
        let after = &rest[open + 1..];
        let name_len = after
            .bytes()
            .take_while(|b| b.is_ascii_lowercase() || *b == b'_')
            .count();
        if name_len > 0 && after.as_bytes().get(name_len) == Some(&b'}') {
            pieces.push(Piece::Literal(&rest[..open]));
            pieces.push(Piece::Placeholder(&after[..name_len]));
            rest = &after[name_len + 1..];
        } else {
            pieces.push(Piece::Literal(&rest[..=open]));
            rest = after;
        }
    }
    pieces.push(Piece::Literal(rest));
    pieces
}

fn substitute(template: &str, bindings: &[(&str, &str)]) -> Result<String, PromptError> {
    let mut out = String::with_capacity(template.len());
    for piece in scan(template) {
        match piece {
            Piece::Literal(s) => out.push_str(s),
            Piece::Placeholder(name) => {
                let value = bindings
                    .iter()
                    .find(|(k, _)| *k == name)
                    .map(|(_, v)| *v)
                    .ok_or_else(|| PromptError::MissingBinding(name.to_string()))?;
                out.push_str(value);
            }
        }
    }
    Ok(out)
}

/// Renders liked/disliked preferences as `liked: [a, b]; disliked: [c]`,
/// or `none` when both are empty.
pub fn render_preferences<S: AsRef<str>>(liked: &[S], disliked: &[S]) -> String {
    if liked.is_empty() && disliked.is_empty() {
        return "none".to_string();
    }
    let join = |items: &[S]| {
        items
            .iter()
            .map(|s| s.as_ref())
            .collect::<Vec<_>>()
            .join(", ")
    };
    format!("liked: [{}]; disliked: [{}]", join(liked), join(disliked))
}

/// Renders the identification prompt for one transcript sentence.
///
/// `defined_terms` is embedded as a JSON array of strings; `preferences` is a
/// summary from [`render_preferences`].
pub fn render_identify_prompt<S: AsRef<str>>(
    transcript: &str,
    defined_terms: &[S],
    preferences: &str,
) -> Result<ChatMessages, PromptError> {
    if transcript.trim().is_empty() {
        return Err(PromptError::EmptyTranscript);
    }
    let defined: Vec<&str> = defined_terms.iter().map(|s| s.as_ref()).collect();
    let defined = serde_json::to_string(&defined).expect("string array serializes");
    PromptTemplate::identify().render(&[
        ("transcript", transcript),
        ("defined_terms", &defined),
        ("preferences", preferences),
    ])
}

/// Renders the filtering prompt for a listener background and candidate glossary.
pub fn render_filter_prompt(
    background: &str,
    glossary: &TermList,
) -> Result<ChatMessages, PromptError> {
    if glossary.is_empty() {
        return Err(PromptError::EmptyGlossary);
    }
    if background.trim().is_empty() {
        return Err(PromptError::EmptyBackground);
    }
    let glossary = glossary.to_prompt_json();
    PromptTemplate::filter().render(&[("background", background), ("glossary", &glossary)])
}
