//! Note text to polarity-tagged concept identifiers.
//!
//! `extract_entities` → `detect_negations` → `normalize` → deduplication.
//! Pre-computed annotations from an external tagger can replace the first
//! step via [`process_annotated_note`].

mod annotations;
mod lexicon;
mod negex;
mod normalize;
mod tokenize;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

pub use annotations::{load_annotations, parse_annotations, Annotation, NoteAnnotations};
pub use lexicon::{
    parse_concept_tsv, ConceptDictionary, ConceptLexicon, LexiconEntry, SemanticType, MAX_NGRAM,
};
pub use negex::{detect_negations, NegationTriggerSet, TriggerRole, DEFAULT_WINDOW};
pub use normalize::{
    levenshtein, local_id, normalize, normalized_levenshtein, LOCAL_PREFIX,
};
pub use tokenize::{canonical_surface, tokenize, Token, TokenStream};

use crate::corpus::ClinicalNote;
use crate::error::{Error, Result};

pub const DEFAULT_THETA: f64 = 0.2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Polarity {
    Positive,
    Negative,
}

impl Polarity {
    /// Conflict resolution: an affirmed finding wins over a negation.
    pub fn merge(self, other: Polarity) -> Polarity {
        if self == Polarity::Positive || other == Polarity::Positive {
            Polarity::Positive
        } else {
            Polarity::Negative
        }
    }
}

/// Inserts `(cui, polarity)` into a condition map under positive-wins.
pub fn merge_into(map: &mut BTreeMap<String, Polarity>, cui: &str, polarity: Polarity) {
    match map.get_mut(cui) {
        Some(existing) => *existing = existing.merge(polarity),
        None => {
            map.insert(cui.to_string(), polarity);
        }
    }
}

/// A concept mention. `start`/`end` are character offsets into the note text.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EntityMention {
    pub start: usize,
    pub end: usize,
    pub surface: String,
    pub semantic_type: SemanticType,
    pub polarity: Polarity,
    pub cui: Option<String>,
}

/// Greedy longest-match scan over token n-grams (up to [`MAX_NGRAM`]).
/// Matches never cross a sentence boundary and never overlap.
pub fn extract_entities(text: &str, lexicon: &ConceptLexicon) -> Vec<EntityMention> {
    let stream = tokenize(text);
    let n = stream.len();
    let mut mentions = Vec::new();
    let mut i = 0;
    while i < n {
        let mut matched = 0;
        for len in (1..=MAX_NGRAM.min(n - i)).rev() {
            if !stream.same_sentence(i, i + len) {
                continue;
            }
            if let Some(entry) = lexicon.lookup(&stream.key(i, i + len)) {
                let first = &stream.tokens[i];
                let last = &stream.tokens[i + len - 1];
                mentions.push(EntityMention {
                    start: first.start,
                    end: last.end,
                    surface: text[first.byte_start..last.byte_end].to_string(),
                    semantic_type: entry.semantic_type,
                    polarity: Polarity::Positive,
                    cui: None,
                });
                matched = len;
                break;
            }
        }
        i += matched.max(1);
    }
    mentions
}

/// One note reduced to concept identifiers with a single polarity each.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StructuredNote {
    pub patient_id: String,
    pub note_id: String,
    pub day_index: i64,
    pub concepts: BTreeMap<String, Polarity>,
}

/// Immutable resources shared by every note.
#[derive(Debug, Clone)]
pub struct TextResources {
    pub lexicon: ConceptLexicon,
    pub triggers: NegationTriggerSet,
    pub dictionary: ConceptDictionary,
    pub theta: f64,
    pub window: usize,
}

impl Default for TextResources {
    fn default() -> Self {
        Self {
            lexicon: ConceptLexicon::default(),
            triggers: NegationTriggerSet::default(),
            dictionary: ConceptDictionary::default(),
            theta: DEFAULT_THETA,
            window: DEFAULT_WINDOW,
        }
    }
}

fn finish(
    note: &ClinicalNote,
    day_index: i64,
    mentions: Vec<EntityMention>,
    resources: &TextResources,
) -> StructuredNote {
    let mentions = detect_negations(&note.text, mentions, &resources.triggers, resources.window);
    let mut concepts = BTreeMap::new();
    for mention in mentions {
        let cui = normalize(&mention.surface, &resources.dictionary, resources.theta);
        merge_into(&mut concepts, &cui, mention.polarity);
    }
    StructuredNote {
        patient_id: note.patient_id.clone(),
        note_id: note.note_id.clone(),
        day_index,
        concepts,
    }
}

/// Normalized mentions of a note with polarity and CUI filled in.
pub fn annotate_mentions(text: &str, resources: &TextResources) -> Vec<EntityMention> {
    let mentions = extract_entities(text, &resources.lexicon);
    detect_negations(text, mentions, &resources.triggers, resources.window)
        .into_iter()
        .map(|mut m| {
            m.cui = Some(normalize(&m.surface, &resources.dictionary, resources.theta));
            m
        })
        .collect()
}

pub fn process_note(note: &ClinicalNote, day_index: i64, resources: &TextResources) -> StructuredNote {
    let mentions = extract_entities(&note.text, &resources.lexicon);
    finish(note, day_index, mentions, resources)
}

/// Same as [`process_note`] but with mentions supplied by an external
/// tagger instead of the lexicon matcher.
pub fn process_annotated_note(
    note: &ClinicalNote,
    day_index: i64,
    annotations: &NoteAnnotations,
    resources: &TextResources,
) -> Result<StructuredNote> {
    let n_chars = note.text.chars().count();
    let mut spans: Vec<&Annotation> = annotations.annotations.iter().collect();
    spans.sort_by_key(|a| (a.start, a.end));
    for pair in spans.windows(2) {
        if pair[1].start < pair[0].end {
            return Err(Error::InvalidInput(format!(
                "note {}: overlapping annotations at {}..{} and {}..{}",
                note.note_id, pair[0].start, pair[0].end, pair[1].start, pair[1].end
            )));
        }
    }
    let mut mentions = Vec::with_capacity(spans.len());
    for a in spans {
        if a.start >= a.end || a.end > n_chars {
            return Err(Error::InvalidInput(format!(
                "note {}: annotation span {}..{} outside text of {n_chars} chars",
                note.note_id, a.start, a.end
            )));
        }
        mentions.push(EntityMention {
            start: a.start,
            end: a.end,
            surface: a.surface.clone(),
            semantic_type: a.semantic_type,
            polarity: Polarity::Positive,
            cui: None,
        });
    }
    Ok(finish(note, day_index, mentions, resources))
}
