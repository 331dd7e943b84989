use std::collections::{HashMap, HashSet};
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::tokenize::{canonical_surface, tokenize};
use crate::error::{Error, Result};
use crate::resources;

/// Longest lexicon phrase, in tokens, that the matcher will try.
pub const MAX_NGRAM: usize = 6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum SemanticType {
    /// Disease mention from an NER-style tagger.
    #[serde(rename = "Disease")]
    Disease,
    #[serde(rename = "Sign or Symptom")]
    SignOrSymptom,
    #[serde(rename = "Disease or Syndrome")]
    DiseaseOrSyndrome,
    #[serde(rename = "Acquired Abnormality")]
    AcquiredAbnormality,
    #[serde(rename = "Anatomical Abnormality")]
    AnatomicalAbnormality,
    #[serde(rename = "Congenital Abnormality")]
    CongenitalAbnormality,
    #[serde(rename = "Injury or Poisoning")]
    InjuryOrPoisoning,
    #[serde(rename = "Mental Process")]
    MentalProcess,
    #[serde(rename = "Mental or Behavioral Dysfunction")]
    MentalOrBehavioralDysfunction,
}

impl SemanticType {
    pub const ALL: [SemanticType; 9] = [
        SemanticType::Disease,
        SemanticType::SignOrSymptom,
        SemanticType::DiseaseOrSyndrome,
        SemanticType::AcquiredAbnormality,
        SemanticType::AnatomicalAbnormality,
        SemanticType::CongenitalAbnormality,
        SemanticType::InjuryOrPoisoning,
        SemanticType::MentalProcess,
        SemanticType::MentalOrBehavioralDysfunction,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            SemanticType::Disease => "Disease",
            SemanticType::SignOrSymptom => "Sign or Symptom",
            SemanticType::DiseaseOrSyndrome => "Disease or Syndrome",
            SemanticType::AcquiredAbnormality => "Acquired Abnormality",
            SemanticType::AnatomicalAbnormality => "Anatomical Abnormality",
            SemanticType::CongenitalAbnormality => "Congenital Abnormality",
            SemanticType::InjuryOrPoisoning => "Injury or Poisoning",
            SemanticType::MentalProcess => "Mental Process",
            SemanticType::MentalOrBehavioralDysfunction => "Mental or Behavioral Dysfunction",
        }
    }
}

impl fmt::Display for SemanticType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SemanticType {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        SemanticType::ALL
            .into_iter()
            .find(|t| t.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| format!("unknown semantic type {s:?}"))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LexiconEntry {
    pub surface_term: String,
    pub cui: String,
    pub semantic_type: SemanticType,
    pub preferred_name: String,
}

/// Parses `surface_term<TAB>cui<TAB>semantic_type<TAB>preferred_name` rows.
/// Blank lines and lines starting with `#` are skipped.
pub fn parse_concept_tsv(text: &str, name: &str) -> Result<Vec<LexiconEntry>> {
    let mut entries = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 4 {
            return Err(Error::Parse {
                source_name: name.to_string(),
                line: i + 1,
                reason: format!("expected 4 tab-separated fields, found {}", fields.len()),
            });
        }
        let semantic_type = fields[2].parse().map_err(|reason| Error::Parse {
            source_name: name.to_string(),
            line: i + 1,
            reason,
        })?;
        let surface_term = canonical_surface(fields[0]);
        if surface_term.is_empty() || fields[1].trim().is_empty() {
            return Err(Error::Parse {
                source_name: name.to_string(),
                line: i + 1,
                reason: "empty surface term or cui".into(),
            });
        }
        entries.push(LexiconEntry {
            surface_term,
            cui: fields[1].trim().to_string(),
            semantic_type,
            preferred_name: fields[3].trim().to_string(),
        });
    }
    Ok(entries)
}

/// Surface terms the entity matcher looks for.
#[derive(Debug, Clone)]
pub struct ConceptLexicon {
    entries: Vec<LexiconEntry>,
    /// token key → index of the first entry (lexicon order) with that key
    by_key: HashMap<String, usize>,
}

impl ConceptLexicon {
    pub fn new(entries: Vec<LexiconEntry>) -> Result<Self> {
        let mut seen = HashSet::new();
        let mut by_key = HashMap::new();
        for (i, entry) in entries.iter().enumerate() {
            if !seen.insert(entry.surface_term.clone()) {
                return Err(Error::Resource {
                    name: "lexicon".into(),
                    reason: format!("duplicate surface term {:?}", entry.surface_term),
                });
            }
            let stream = tokenize(&entry.surface_term);
            if stream.is_empty() {
                continue;
            }
            if stream.len() > MAX_NGRAM {
                log::warn!(
                    "lexicon term {:?} has more than {MAX_NGRAM} tokens and can never match",
                    entry.surface_term
                );
                continue;
            }
            by_key.entry(stream.key(0, stream.len())).or_insert(i);
        }
        Ok(Self { entries, by_key })
    }

    pub fn parse(text: &str) -> Result<Self> {
        Self::new(parse_concept_tsv(text, "lexicon")?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::new(parse_concept_tsv(&text, &path.display().to_string())?)
    }

    pub fn entries(&self) -> &[LexiconEntry] {
        &self.entries
    }

    pub fn lookup(&self, key: &str) -> Option<&LexiconEntry> {
        self.by_key.get(key).map(|&i| &self.entries[i])
    }
}

impl Default for ConceptLexicon {
    fn default() -> Self {
        Self::parse(resources::LEXICON_TSV).expect("shipped lexicon is valid")
    }
}

/// Reference thesaurus used for normalization. May be a superset of the
/// lexicon.
#[derive(Debug, Clone)]
pub struct ConceptDictionary {
    entries: Vec<LexiconEntry>,
    exact: HashMap<String, String>,
    /// (surface as chars, cui) for approximate matching
    terms: Vec<(Vec<char>, String)>,
    preferred: HashMap<String, String>,
}

impl ConceptDictionary {
    pub fn new(entries: Vec<LexiconEntry>) -> Result<Self> {
        let mut exact: HashMap<String, String> = HashMap::new();
        let mut preferred: HashMap<String, String> = HashMap::new();
        for entry in &entries {
            if let Some(prev) = exact.insert(entry.surface_term.clone(), entry.cui.clone()) {
                if prev != entry.cui {
                    return Err(Error::Resource {
                        name: "concept dictionary".into(),
                        reason: format!(
                            "surface {:?} maps to both {prev} and {}",
                            entry.surface_term, entry.cui
                        ),
                    });
                }
            }
            preferred
                .entry(entry.cui.clone())
                .or_insert_with(|| entry.preferred_name.clone());
        }
        // Preferred names always resolve to their own concept.
        for entry in &entries {
            let key = canonical_surface(&entry.preferred_name);
            match exact.get(&key) {
                Some(cui) if *cui != entry.cui => {
                    return Err(Error::Resource {
                        name: "concept dictionary".into(),
                        reason: format!(
                            "preferred name {:?} of {} is a surface of {cui}",
                            entry.preferred_name, entry.cui
                        ),
                    })
                }
                Some(_) => {}
                None => {
                    exact.insert(key, entry.cui.clone());
                }
            }
        }
        let mut terms: Vec<(Vec<char>, String)> = exact
            .iter()
            .map(|(s, c)| (s.chars().collect(), c.clone()))
            .collect();
        terms.sort();
        Ok(Self {
            entries,
            exact,
            terms,
            preferred,
        })
    }

    pub fn parse(text: &str) -> Result<Self> {
        Self::new(parse_concept_tsv(text, "concept dictionary")?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::new(parse_concept_tsv(&text, &path.display().to_string())?)
    }

    pub fn entries(&self) -> &[LexiconEntry] {
        &self.entries
    }

    pub fn exact(&self, canonical: &str) -> Option<&str> {
        self.exact.get(canonical).map(String::as_str)
    }

    pub fn terms(&self) -> &[(Vec<char>, String)] {
        &self.terms
    }

    pub fn preferred_name(&self, cui: &str) -> Option<&str> {
        self.preferred.get(cui).map(String::as_str)
    }
}

impl Default for ConceptDictionary {
    fn default() -> Self {
        Self::parse(resources::CONCEPT_DICTIONARY_TSV).expect("shipped dictionary is valid")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shipped_resources_load() {
        let lex = ConceptLexicon::default();
        assert!(lex.lookup("shortness of breath").is_some());
        let dict = ConceptDictionary::default();
        assert_eq!(dict.exact("bleeding"), dict.exact("hemorrhage"));
        assert_eq!(dict.exact("oozing of blood"), Some("C0019080"));
        assert_eq!(dict.preferred_name("C0019080"), Some("Hemorrhage"));
    }

    #[test]
    fn duplicate_surface_rejected() {
        let text = "fever\tC1\tSign or Symptom\tFever\nFever\tC2\tSign or Symptom\tFever\n";
        assert!(ConceptLexicon::parse(text).is_err());
    }

    #[test]
    fn bad_semantic_type_rejected() {
        let text = "fever\tC1\tDrug\tFever\n";
        let err = ConceptLexicon::parse(text).unwrap_err();
        assert!(err.to_string().contains("unknown semantic type"));
    }

    #[test]
    fn semantic_type_round_trips_through_names() {
        for t in SemanticType::ALL {
            assert_eq!(t.as_str().parse::<SemanticType>().unwrap(), t);
        }
    }
}
