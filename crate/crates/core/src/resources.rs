//! Fixture resources shipped with the crate. Each one is also a plain file
//! under `resources/` so it can be audited or replaced through configuration.

pub const LEXICON_TSV: &str = include_str!("../resources/lexicon.tsv");
pub const CONCEPT_DICTIONARY_TSV: &str = include_str!("../resources/concept_dictionary.tsv");
pub const NEGATION_TRIGGERS_TSV: &str = include_str!("../resources/negation_triggers.tsv");
pub const DECEASE_PATTERNS_TXT: &str = include_str!("../resources/decease_patterns.txt");
pub const FLAGS_JSON: &str = include_str!("../resources/flags.json");
