//! Tolerant parsing of model output.
//!
//! Providers decorate JSON with Markdown fences and prose. Parsing strips
//! fences, then tries each bracket-balanced candidate in order of its opening
//! position until one has the expected shape.

use std::collections::HashSet;

use serde_json::Value;
use thiserror::Error;

use super::{FilterResult, TermList, TermPair};
use crate::pipeline::normalize_term;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ParseError {
    #[error("malformed term list: {0}")]
    MalformedTermList(String),
    #[error("malformed filter result: {0}")]
    MalformedFilterResult(String),
}

/// Replaces Markdown code fence markers (and their language tags) with spaces.
pub fn strip_code_fences(raw: &str) -> String {
    let mut out = String::with_capacity(raw.len());
    let mut rest = raw;
    while let Some(pos) = rest.find("```") {
        out.push_str(&rest[..pos]);
        out.push(' ');
        rest = rest[pos + 3..].trim_start_matches(|c: char| c.is_ascii_alphanumeric());
    }
    out.push_str(rest);
    out
}

/// Every balanced `open`…`close` slice of `text`, by opening position.
/// Bracket characters inside JSON string literals are ignored.
fn balanced_candidates(text: &str, open: u8) -> impl Iterator<Item = &str> {
    let bytes = text.as_bytes();
    bytes
        .iter()
        .enumerate()
        .filter(move |(_, b)| **b == open)
        .filter_map(move |(start, _)| balanced_end(bytes, start).map(|end| &text[start..end]))
}

/// The first balanced candidate accepted by `accept`. The raw text is tried
/// before the fence-stripped text so backticks inside strings survive.
fn first_json<T>(raw: &str, open: u8, accept: impl Fn(Value) -> Option<T>) -> Option<T> {
    let scan = |text: &str| {
        balanced_candidates(text, open)
            .filter_map(|c| serde_json::from_str::<Value>(c).ok())
            .find_map(&accept)
    };
    scan(raw).or_else(|| scan(&strip_code_fences(raw)))
}

fn balanced_end(bytes: &[u8], start: usize) -> Option<usize> {
    let mut stack: Vec<u8> = Vec::new();
    let mut in_string = false;
    let mut escaped = false;
    for (i, &b) in bytes.iter().enumerate().skip(start) {
        if in_string {
            match b {
                _ if escaped => escaped = false,
                b'\\' => escaped = true,
                b'"' => in_string = false,
                _ => {}
            }
            continue;
        }
        match b {
            b'"' => in_string = true,
            b'[' => stack.push(b']'),
            b'{' => stack.push(b'}'),
            b']' | b'}' => {
                if stack.pop() != Some(b) {
                    return None;
                }
                if stack.is_empty() {
                    return Some(i + 1);
                }
            }
            _ => {}
        }
    }
    None
}

/// Parses identification output: a JSON array of one-key `{"term": "definition"}`
/// objects, possibly wrapped in fences or prose.
pub fn parse_term_list(raw: &str) -> Result<TermList, ParseError> {
    let array = first_json(raw, b'[', |v| match v {
        Value::Array(items) => Some(items),
        _ => None,
    })
    .ok_or_else(|| ParseError::MalformedTermList("no JSON array found".into()))?;

    let mut pairs = Vec::with_capacity(array.len());
    for (idx, item) in array.into_iter().enumerate() {
        let Value::Object(map) = item else {
            return Err(ParseError::MalformedTermList(format!(
                "entry {idx} is not an object"
            )));
        };
        if map.len() != 1 {
            return Err(ParseError::MalformedTermList(format!(
                "entry {idx} has {} keys, expected 1",
                map.len()
            )));
        }
        let (term, definition) = map.into_iter().next().expect("one key");
        let Value::String(definition) = definition else {
            return Err(ParseError::MalformedTermList(format!(
                "definition of {term:?} is not a string"
            )));
        };
        let term = term.trim().to_string();
        if term.is_empty() {
            return Err(ParseError::MalformedTermList(format!(
                "entry {idx} has an empty term"
            )));
        }
        pairs.push(TermPair {
            term,
            definition: definition.trim().to_string(),
        });
    }
    Ok(TermList(pairs))
}

fn is_filter_object(value: &Value) -> bool {
    value
        .as_object()
        .is_some_and(|m| m.contains_key("understood_terms") || m.contains_key("refined_glossary"))
}

fn glossary_terms(value: Option<&Value>) -> Vec<String> {
    match value {
        Some(Value::Array(items)) => items
            .iter()
            .flat_map(|item| match item {
                Value::Object(map) => map.keys().cloned().collect(),
                Value::String(s) => vec![s.clone()],
                _ => Vec::new(),
            })
            .collect(),
        Some(Value::Object(map)) => map.keys().cloned().collect(),
        _ => Vec::new(),
    }
}

/// Parses filtering output and repairs it into a partition of `input`.
///
/// Terms not in `input` are dropped, input terms the model left out of both
/// lists are kept in the refined glossary, a term claimed by both lists stays
/// refined, and every definition comes from `input`. Terms are matched under
/// [`normalize_term`] and reported with their `input` spelling.
pub fn parse_filter_result(raw: &str, input: &TermList) -> Result<FilterResult, ParseError> {
    let object = first_json(raw, b'{', |v| Some(v).filter(is_filter_object)).ok_or_else(|| {
        ParseError::MalformedFilterResult(
            "no object with understood_terms or refined_glossary".into(),
        )
    })?;

    let by_key: Vec<(String, &TermPair)> = input
        .iter()
        .map(|pair| (normalize_term(&pair.term), pair))
        .collect();
    let lookup = |term: &str| {
        let key = normalize_term(term);
        by_key
            .iter()
            .find(|(k, _)| *k == key)
            .map(|(k, p)| (k.clone(), *p))
    };

    let mut refined = Vec::new();
    let mut placed: HashSet<String> = HashSet::new();
    for term in glossary_terms(object.get("refined_glossary")) {
        if let Some((key, pair)) = lookup(&term) {
            if placed.insert(key) {
                refined.push(pair.clone());
            }
        }
    }

    let mut understood = Vec::new();
    if let Some(Value::Array(items)) = object.get("understood_terms") {
        for term in items.iter().filter_map(Value::as_str) {
            if let Some((key, pair)) = lookup(term) {
                if placed.insert(key) {
                    understood.push(pair.term.clone());
                }
            }
        }
    }

    for (key, pair) in &by_key {
        if placed.insert(key.clone()) {
            refined.push((*pair).clone());
        }
    }

    Ok(FilterResult {
        understood_terms: understood,
        refined_glossary: TermList(refined),
    })
}
