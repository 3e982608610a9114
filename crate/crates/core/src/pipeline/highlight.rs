use serde::{Deserialize, Serialize};

use super::normalize_term;
use crate::ingest::normalize_whitespace;

/// A key occurrence in a caption, as half-open `char` offsets.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TermMatch {
    pub start: usize,
    pub end: usize,
    pub key: String,
}

/// Finds glossary keys in `text`.
///
/// Offsets index the `char`s of the whitespace-normalized text (transcript
/// segments are already normalized). Matching is case-insensitive and anchored
/// at word boundaries; longer keys claim text first and matches never overlap.
pub fn highlight_terms<'a>(text: &str, keys: impl IntoIterator<Item = &'a str>) -> Vec<TermMatch> {
    let text = normalize_whitespace(text);
    let original: Vec<char> = text.chars().collect();

    // Case folding may expand a char ('ß' -> "ss"), so keep the owner of
    // every folded char to map matches back.
    let mut folded: Vec<char> = Vec::with_capacity(original.len());
    let mut owner: Vec<usize> = Vec::with_capacity(original.len());
    for (idx, c) in original.iter().enumerate() {
        let mut buf = [0u8; 4];
        for f in caseless::default_case_fold_str(c.encode_utf8(&mut buf)).chars() {
            folded.push(f);
            owner.push(idx);
        }
    }

    let mut keys: Vec<(String, Vec<char>)> = keys
        .into_iter()
        .map(normalize_term)
        .filter(|k| !k.is_empty())
        .map(|k| {
            let chars = k.chars().collect();
            (k, chars)
        })
        .collect();
    keys.sort_by(|a, b| b.1.len().cmp(&a.1.len()).then_with(|| a.0.cmp(&b.0)));
    keys.dedup_by(|a, b| a.0 == b.0);

    let is_word = |i: usize| original.get(i).is_some_and(|c| c.is_alphanumeric());
    let mut claimed = vec![false; original.len()];
    let mut matches = Vec::new();

    for (key, pattern) in &keys {
        let k = pattern.len();
        let mut p = 0;
        while p + k <= folded.len() {
            let aligned_start = p == 0 || owner[p - 1] != owner[p];
            let aligned_end = p + k == folded.len() || owner[p + k] != owner[p + k - 1];
            if aligned_start && aligned_end && folded[p..p + k] == pattern[..] {
                let start = owner[p];
                let end = owner[p + k - 1] + 1;
                let bounded = (start == 0 || !is_word(start - 1)) && !is_word(end);
                if bounded && !claimed[start..end].iter().any(|c| *c) {
                    claimed[start..end].iter_mut().for_each(|c| *c = true);
                    matches.push(TermMatch {
                        start,
                        end,
                        key: key.clone(),
                    });
                    p += k;
                    continue;
                }
            }
            p += 1;
        }
    }
    matches.sort_by_key(|m| m.start);
    matches
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spans(text: &str, keys: &[&str]) -> Vec<(usize, usize, String)> {
        highlight_terms(text, keys.iter().copied())
            .into_iter()
            .map(|m| (m.start, m.end, m.key))
            .collect()
    }

    #[test]
    fn finds_multiword_key() {
        assert_eq!(
            spans("We use remote sensing data", &["remote sensing"]),
            [(7, 21, "remote sensing".to_string())]
        );
    }

    #[test]
    fn longest_match_wins() {
        assert_eq!(
            spans("We use remote sensing data", &["sensing", "remote sensing"]),
            [(7, 21, "remote sensing".to_string())]
        );
    }

    #[test]
    fn no_keys_no_spans() {
        assert!(spans("We use remote sensing data", &[]).is_empty());
    }

    #[test]
    fn case_insensitive_and_word_bounded() {
        let found = spans("FNO models beat fno-like and FNOs.", &["fno"]);
        assert_eq!(
            found.iter().map(|s| (s.0, s.1)).collect::<Vec<_>>(),
            [(0, 3), (16, 19)]
        );
    }

    #[test]
    fn every_occurrence_is_marked() {
        let found = spans("GPU here, GPU there.", &["GPU"]);
        assert_eq!(found.len(), 2);
        assert_eq!((found[1].0, found[1].1), (10, 13));
    }

    #[test]
    fn offsets_count_chars_not_bytes() {
        let found = spans("Die Straße nutzt Lidar", &["lidar", "straße"]);
        assert_eq!(
            found.iter().map(|s| (s.0, s.1)).collect::<Vec<_>>(),
            [(4, 10), (17, 22)]
        );
    }
}
