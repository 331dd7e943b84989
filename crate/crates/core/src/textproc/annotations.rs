use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, Read};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::lexicon::SemanticType;
use crate::error::{Error, Result};

/// A mention found by an external tagger; offsets are character offsets.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Annotation {
    pub start: usize,
    pub end: usize,
    pub surface: String,
    pub semantic_type: SemanticType,
}

/// One line of `annotations.jsonl`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NoteAnnotations {
    pub note_id: String,
    pub annotations: Vec<Annotation>,
}

/// Annotations keyed by note id.
pub fn parse_annotations<R: Read>(
    reader: R,
    source_name: &str,
) -> Result<BTreeMap<String, NoteAnnotations>> {
    let mut out = BTreeMap::new();
    for (i, line) in BufReader::new(reader).lines().enumerate() {
        let line = line.map_err(|e| Error::io(source_name, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: NoteAnnotations = serde_json::from_str(&line).map_err(|e| Error::Parse {
            source_name: source_name.to_string(),
            line: i + 1,
            reason: e.to_string(),
        })?;
        out.insert(rec.note_id.clone(), rec);
    }
    Ok(out)
}

pub fn load_annotations(path: &Path) -> Result<BTreeMap<String, NoteAnnotations>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    parse_annotations(file, &path.display().to_string())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_lines() {
        let input = r#"{"note_id":"n1","annotations":[{"start":0,"end":5,"surface":"fever","semantic_type":"Sign or Symptom"}]}"#;
        let a = parse_annotations(input.as_bytes(), "annotations.jsonl").unwrap();
        assert_eq!(a["n1"].annotations[0].semantic_type, SemanticType::SignOrSymptom);
        assert!(parse_annotations("{".as_bytes(), "annotations.jsonl").is_err());
    }
}
