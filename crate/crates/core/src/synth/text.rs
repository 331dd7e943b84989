//! Sentence templates for synthetic notes.

use std::collections::BTreeMap;

use rand::seq::IndexedRandom;
use rand::Rng;

use crate::resources;
use crate::textproc::{parse_concept_tsv, Polarity};

const POSITIVE: &[&str] = &[
    "Patient has {}.",
    "Reports {}.",
    "Ongoing {}.",
    "Continues to have {}.",
    "Exam notable for {}.",
    "No change in {}.",
];

const NEGATIVE_PRE: &[&str] = &[
    "Denies {}.",
    "No {}.",
    "Negative for {}.",
    "No evidence of {}.",
    "No signs of {}.",
];

const NEGATIVE_POST: &[&str] = &["{} resolved.", "{} ruled out."];

/// Lexicon surfaces per CUI, in lexicon order.
#[derive(Debug, Clone)]
pub struct SurfaceBank {
    by_cui: BTreeMap<String, Vec<String>>,
}

impl Default for SurfaceBank {
    fn default() -> Self {
        let mut by_cui: BTreeMap<String, Vec<String>> = BTreeMap::new();
        for e in parse_concept_tsv(resources::LEXICON_TSV, "lexicon").expect("shipped lexicon is valid") {
            by_cui.entry(e.cui).or_default().push(e.surface_term);
        }
        Self { by_cui }
    }
}

impl SurfaceBank {
    pub fn contains(&self, cui: &str) -> bool {
        self.by_cui.contains_key(cui)
    }

    pub fn surface<R: Rng + ?Sized>(&self, cui: &str, rng: &mut R) -> &str {
        self.by_cui[cui].choose(rng).expect("every CUI has a surface")
    }
}

fn fill(template: &str, surface: &str) -> String {
    let s = template.replacen("{}", surface, 1);
    let mut chars = s.chars();
    match chars.next() {
        Some(c) => c.to_uppercase().chain(chars).collect(),
        None => s,
    }
}

/// One sentence stating `cui` with `polarity`.
pub fn sentence<R: Rng + ?Sized>(bank: &SurfaceBank, cui: &str, polarity: Polarity, rng: &mut R) -> String {
    let surface = bank.surface(cui, rng);
    let template = match polarity {
        Polarity::Positive => *POSITIVE.choose(rng).expect("non-empty"),
        Polarity::Negative if rng.random_bool(0.75) => *NEGATIVE_PRE.choose(rng).expect("non-empty"),
        Polarity::Negative => *NEGATIVE_POST.choose(rng).expect("non-empty"),
    };
    fill(template, surface)
}

/// A positive and a negative mention joined by a scope-breaking "but".
pub fn contrast<R: Rng + ?Sized>(bank: &SurfaceBank, positive: &str, negative: &str, rng: &mut R) -> String {
    let p = bank.surface(positive, rng);
    let n = bank.surface(negative, rng);
    fill(&format!("Patient has {p} but denies {n}."), "")
}

/// Renders mentions into note text. Pairs of opposite polarity are
/// sometimes joined into a single contrast sentence.
pub fn render_note<R: Rng + ?Sized>(
    bank: &SurfaceBank,
    mentions: &[(String, Polarity)],
    rng: &mut R,
) -> String {
    let mut positives: Vec<&str> = Vec::new();
    let mut negatives: Vec<&str> = Vec::new();
    for (cui, p) in mentions {
        match p {
            Polarity::Positive => positives.push(cui),
            Polarity::Negative => negatives.push(cui),
        }
    }
    let mut sentences = Vec::with_capacity(mentions.len());
    while let (Some(&p), Some(&n)) = (positives.last(), negatives.last()) {
        if !rng.random_bool(0.3) {
            break;
        }
        positives.pop();
        negatives.pop();
        sentences.push(contrast(bank, p, n, rng));
    }
    sentences.extend(positives.iter().map(|c| sentence(bank, c, Polarity::Positive, rng)));
    sentences.extend(negatives.iter().map(|c| sentence(bank, c, Polarity::Negative, rng)));
    // Fisher-Yates over sentence order keeps the text varied without
    // affecting polarity, since every sentence is self-contained.
    for i in (1..sentences.len()).rev() {
        let j = rng.random_range(0..=i);
        sentences.swap(i, j);
    }
    sentences.join(" ")
}
