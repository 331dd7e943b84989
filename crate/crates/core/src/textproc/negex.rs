//! NegEx-style polarity assignment.
//!
//! A mention is negated when a pre-negation trigger ends within `window`
//! tokens before it, or a post-negation trigger starts within `window`
//! tokens after it. The scope stops at termination phrases, sentence
//! boundaries and other mentions. Pseudo-negation phrases are matched (so
//! their words cannot act as triggers) but never negate.

use std::collections::{HashMap, HashSet};
use std::fs;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::tokenize::{canonical_surface, tokenize, TokenStream};
use super::{EntityMention, Polarity};
use crate::error::{Error, Result};
use crate::resources;

pub const DEFAULT_WINDOW: usize = 6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TriggerRole {
    PreNegation,
    PostNegation,
    PseudoNegation,
    Termination,
}

impl FromStr for TriggerRole {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "pre_negation" => Ok(TriggerRole::PreNegation),
            "post_negation" => Ok(TriggerRole::PostNegation),
            "pseudo_negation" => Ok(TriggerRole::PseudoNegation),
            "termination" => Ok(TriggerRole::Termination),
            other => Err(format!("unknown trigger role {other:?}")),
        }
    }
}

#[derive(Debug, Clone)]
pub struct NegationTriggerSet {
    entries: Vec<(String, TriggerRole)>,
    by_key: HashMap<String, TriggerRole>,
    max_tokens: usize,
}

impl NegationTriggerSet {
    pub fn new(entries: Vec<(String, TriggerRole)>) -> Result<Self> {
        let mut seen = HashSet::new();
        let mut by_key = HashMap::new();
        let mut max_tokens = 0;
        let mut normalized = Vec::with_capacity(entries.len());
        for (phrase, role) in entries {
            let phrase = canonical_surface(&phrase);
            if !seen.insert(phrase.clone()) {
                return Err(Error::Resource {
                    name: "negation triggers".into(),
                    reason: format!("duplicate phrase {phrase:?}"),
                });
            }
            let stream = tokenize(&phrase);
            if stream.is_empty() {
                continue;
            }
            max_tokens = max_tokens.max(stream.len());
            by_key.insert(stream.key(0, stream.len()), role);
            normalized.push((phrase, role));
        }
        Ok(Self {
            entries: normalized,
            by_key,
            max_tokens,
        })
    }

    /// `phrase<TAB>role` rows; blank lines and `#` comments are skipped.
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let (phrase, role) = line.split_once('\t').ok_or_else(|| Error::Parse {
                source_name: "negation triggers".into(),
                line: i + 1,
                reason: "expected phrase<TAB>role".into(),
            })?;
            let role = role.parse().map_err(|reason| Error::Parse {
                source_name: "negation triggers".into(),
                line: i + 1,
                reason,
            })?;
            entries.push((phrase.to_string(), role));
        }
        Self::new(entries)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn entries(&self) -> &[(String, TriggerRole)] {
        &self.entries
    }
}

impl Default for NegationTriggerSet {
    fn default() -> Self {
        Self::parse(resources::NEGATION_TRIGGERS_TSV).expect("shipped triggers are valid")
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Slot {
    Plain,
    Mention(usize),
    Trigger(TriggerRole),
}

/// Token index range `[first, last]` covered by a character span.
fn token_range(stream: &TokenStream, start: usize, end: usize) -> Option<(usize, usize)> {
    let mut range: Option<(usize, usize)> = None;
    for (i, tok) in stream.tokens.iter().enumerate() {
        if tok.start < end && tok.end > start {
            range = Some(match range {
                None => (i, i),
                Some((a, _)) => (a, i),
            });
        }
    }
    range
}

pub fn detect_negations(
    text: &str,
    mut mentions: Vec<EntityMention>,
    triggers: &NegationTriggerSet,
    window: usize,
) -> Vec<EntityMention> {
    let stream = tokenize(text);
    let n = stream.len();
    let mut slots = vec![Slot::Plain; n];
    let ranges: Vec<Option<(usize, usize)>> = mentions
        .iter()
        .map(|m| token_range(&stream, m.start, m.end))
        .collect();
    for (id, range) in ranges.iter().enumerate() {
        if let Some((a, b)) = range {
            for slot in &mut slots[*a..=*b] {
                *slot = Slot::Mention(id);
            }
        }
    }

    // Longest-match trigger scan over tokens outside mentions.
    let mut i = 0;
    while i < n {
        if slots[i] != Slot::Plain {
            i += 1;
            continue;
        }
        let mut matched = 0;
        for len in (1..=triggers.max_tokens.min(n - i)).rev() {
            let end = i + len;
            if slots[i..end].iter().any(|s| *s != Slot::Plain) || !stream.same_sentence(i, end) {
                continue;
            }
            if let Some(&role) = triggers.by_key.get(&stream.key(i, end)) {
                for slot in &mut slots[i..end] {
                    *slot = Slot::Trigger(role);
                }
                matched = len;
                break;
            }
        }
        i += matched.max(1);
    }

    for (id, mention) in mentions.iter_mut().enumerate() {
        let Some((first, last)) = ranges[id] else {
            continue;
        };
        if scope_has(&stream, &slots, first, last, id, window, Direction::Backward)
            || scope_has(&stream, &slots, first, last, id, window, Direction::Forward)
        {
            mention.polarity = Polarity::Negative;
        }
    }
    mentions
}

#[derive(Clone, Copy)]
enum Direction {
    Backward,
    Forward,
}

fn scope_has(
    stream: &TokenStream,
    slots: &[Slot],
    first: usize,
    last: usize,
    id: usize,
    window: usize,
    direction: Direction,
) -> bool {
    let (negating, mut pos) = match direction {
        Direction::Backward => (TriggerRole::PreNegation, first),
        Direction::Forward => (TriggerRole::PostNegation, last),
    };
    for _ in 0..window {
        let next = match direction {
            Direction::Backward => {
                if pos == 0 || stream.boundary_after[pos - 1] {
                    return false;
                }
                pos - 1
            }
            Direction::Forward => {
                if pos + 1 >= stream.len() || stream.boundary_after[pos] {
                    return false;
                }
                pos + 1
            }
        };
        pos = next;
        match slots[pos] {
            Slot::Plain => {}
            Slot::Mention(other) if other == id => {}
            Slot::Mention(_) => return false,
            Slot::Trigger(TriggerRole::Termination) => return false,
            Slot::Trigger(role) if role == negating => return true,
            Slot::Trigger(_) => {}
        }
    }
    false
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::textproc::{extract_entities, ConceptLexicon};

    fn polarities(text: &str) -> Vec<(String, Polarity)> {
        let lex = ConceptLexicon::default();
        let mentions = extract_entities(text, &lex);
        detect_negations(text, mentions, &NegationTriggerSet::default(), DEFAULT_WINDOW)
            .into_iter()
            .map(|m| (m.surface.to_lowercase(), m.polarity))
            .collect()
    }

    #[test]
    fn worked_example() {
        assert_eq!(
            polarities("The patient has shortness of breath but denies any chest pain"),
            [
                ("shortness of breath".to_string(), Polarity::Positive),
                ("chest pain".to_string(), Polarity::Negative)
            ]
        );
    }

    #[test]
    fn adjacent_pre_trigger() {
        assert_eq!(polarities("no fever"), [("fever".to_string(), Polarity::Negative)]);
    }

    #[test]
    fn termination_cuts_scope() {
        assert_eq!(
            polarities("denies nausea but reports vomiting"),
            [
                ("nausea".to_string(), Polarity::Negative),
                ("vomiting".to_string(), Polarity::Positive)
            ]
        );
    }

    #[test]
    fn pseudo_negation_never_negates() {
        assert_eq!(
            polarities("no increase in pain"),
            [("pain".to_string(), Polarity::Positive)]
        );
        assert_eq!(
            polarities("pneumonia not ruled out"),
            [("pneumonia".to_string(), Polarity::Positive)]
        );
    }

    #[test]
    fn post_trigger() {
        assert_eq!(polarities("fever resolved."), [("fever".to_string(), Polarity::Negative)]);
        assert_eq!(polarities("Edema absent"), [("edema".to_string(), Polarity::Negative)]);
    }

    #[test]
    fn sentence_boundary_cuts_scope() {
        assert_eq!(polarities("Denies pain. Fever"), [
            ("pain".to_string(), Polarity::Negative),
            ("fever".to_string(), Polarity::Positive)
        ]);
        assert_eq!(polarities("No\nfever"), [("fever".to_string(), Polarity::Positive)]);
    }

    #[test]
    fn window_limits_scope() {
        let within = "no a b c d e fever";
        let beyond = "no a b c d e f fever";
        assert_eq!(polarities(within)[0].1, Polarity::Negative);
        assert_eq!(polarities(beyond)[0].1, Polarity::Positive);
    }

    #[test]
    fn other_mentions_cut_scope() {
        assert_eq!(
            polarities("denies cough fever"),
            [
                ("cough".to_string(), Polarity::Negative),
                ("fever".to_string(), Polarity::Positive)
            ]
        );
    }

    #[test]
    fn only_polarity_changes() {
        let text = "The patient has shortness of breath but denies any chest pain";
        let lex = ConceptLexicon::default();
        let before = extract_entities(text, &lex);
        let after = detect_negations(text, before.clone(), &NegationTriggerSet::default(), 6);
        assert_eq!(before.len(), after.len());
        for (b, a) in before.iter().zip(&after) {
            assert_eq!((b.start, b.end, &b.surface, b.semantic_type), (a.start, a.end, &a.surface, a.semantic_type));
        }
    }

    #[test]
    fn duplicate_trigger_rejected() {
        assert!(NegationTriggerSet::parse("no\tpre_negation\nNo\tpost_negation\n").is_err());
    }
}
