use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, Read};
use std::path::Path;

use serde::Deserialize;

use super::{parse_timestamp, ClinicalNote, Demographics, RejectedRow, Sex};
use crate::error::{Error, Result};

/// Notes grouped by patient, each group in ascending chart time.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct NoteCorpus {
    pub by_patient: BTreeMap<String, Vec<ClinicalNote>>,
    pub rejected: Vec<RejectedRow>,
}

impl NoteCorpus {
    pub fn from_notes(notes: impl IntoIterator<Item = ClinicalNote>) -> Self {
        let mut by_patient: BTreeMap<String, Vec<ClinicalNote>> = BTreeMap::new();
        for note in notes {
            by_patient.entry(note.patient_id.clone()).or_default().push(note);
        }
        for group in by_patient.values_mut() {
            group.sort_by(|a, b| (a.chart_time, &a.note_id).cmp(&(b.chart_time, &b.note_id)));
        }
        Self {
            by_patient,
            rejected: Vec::new(),
        }
    }

    pub fn n_notes(&self) -> usize {
        self.by_patient.values().map(Vec::len).sum()
    }
}

#[derive(Deserialize)]
struct RawNote {
    patient_id: String,
    note_id: String,
    category: String,
    chart_time: String,
    text: String,
}

fn parse_note_line(line: &str) -> Result<ClinicalNote, String> {
    let raw: RawNote = serde_json::from_str(line).map_err(|e| format!("malformed record: {e}"))?;
    let category = raw.category.parse()?;
    let chart_time = parse_timestamp(&raw.chart_time)?;
    if raw.text.trim().is_empty() {
        return Err("empty text".to_string());
    }
    if raw.patient_id.is_empty() {
        return Err("empty patient_id".to_string());
    }
    Ok(ClinicalNote {
        patient_id: raw.patient_id,
        note_id: raw.note_id,
        category,
        chart_time,
        text: raw.text,
    })
}

/// Parses notes JSONL. Malformed lines become rejected rows; an input with
/// no valid record at all is an error.
pub fn parse_notes<R: Read>(reader: R, source_name: &str) -> Result<NoteCorpus> {
    let mut notes = Vec::new();
    let mut rejected = Vec::new();
    for (i, line) in BufReader::new(reader).lines().enumerate() {
        let line = line.map_err(|e| Error::io(source_name, e))?;
        if line.trim().is_empty() {
            continue;
        }
        match parse_note_line(&line) {
            Ok(note) => notes.push(note),
            Err(reason) => {
                log::warn!("{source_name}:{}: {reason}", i + 1);
                rejected.push(RejectedRow {
                    source: source_name.to_string(),
                    line: i + 1,
                    reason,
                });
            }
        }
    }
    if notes.is_empty() {
        return Err(Error::NoRecords {
            source_name: source_name.to_string(),
        });
    }
    let mut corpus = NoteCorpus::from_notes(notes);
    corpus.rejected = rejected;
    Ok(corpus)
}

pub fn load_notes(path: &Path) -> Result<NoteCorpus> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    parse_notes(file, &path.display().to_string())
}

#[derive(Deserialize)]
struct RawDemographics {
    patient_id: String,
    sex: String,
    age_years: i64,
}

pub fn parse_demographics<R: Read>(
    reader: R,
    source_name: &str,
) -> Result<(BTreeMap<String, Demographics>, Vec<RejectedRow>)> {
    let mut out = BTreeMap::new();
    let mut rejected = Vec::new();
    for (i, line) in BufReader::new(reader).lines().enumerate() {
        let line = line.map_err(|e| Error::io(source_name, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed = serde_json::from_str::<RawDemographics>(&line)
            .map_err(|e| format!("malformed record: {e}"))
            .and_then(|raw| {
                let sex = match raw.sex.as_str() {
                    "M" => Sex::M,
                    "F" => Sex::F,
                    other => return Err(format!("unknown sex {other:?}")),
                };
                let age_years = u32::try_from(raw.age_years)
                    .map_err(|_| format!("invalid age {}", raw.age_years))?;
                Ok(Demographics {
                    patient_id: raw.patient_id,
                    sex,
                    age_years,
                })
            });
        match parsed {
            Ok(d) => {
                out.insert(d.patient_id.clone(), d);
            }
            Err(reason) => rejected.push(RejectedRow {
                source: source_name.to_string(),
                line: i + 1,
                reason,
            }),
        }
    }
    Ok((out, rejected))
}

pub fn load_demographics(
    path: &Path,
) -> Result<(BTreeMap<String, Demographics>, Vec<RejectedRow>)> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    parse_demographics(file, &path.display().to_string())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::NoteCategory;

    #[test]
    fn empty_input_is_fatal() {
        let err = parse_notes("".as_bytes(), "notes.jsonl").unwrap_err();
        assert!(matches!(err, Error::NoRecords { .. }));
    }

    #[test]
    fn single_nursing_note() {
        let line = r#"{"patient_id":"p1","note_id":"n1","category":"nursing","chart_time":"2101-01-01T08:00:00Z","text":"No fever."}"#;
        let corpus = parse_notes(line.as_bytes(), "notes.jsonl").unwrap();
        assert_eq!(corpus.by_patient.len(), 1);
        assert_eq!(corpus.n_notes(), 1);
        assert_eq!(corpus.by_patient["p1"][0].category, NoteCategory::Nursing);
    }

    #[test]
    fn shuffled_notes_come_back_in_time_order() {
        let input = [
            r#"{"patient_id":"p1","note_id":"n3","category":"nursing","chart_time":"2101-01-03T08:00:00Z","text":"c"}"#,
            r#"{"patient_id":"p1","note_id":"n1","category":"radiology","chart_time":"2101-01-01T08:00:00Z","text":"a"}"#,
            r#"{"patient_id":"p1","note_id":"n2","category":"ecg","chart_time":"2101-01-02T08:00:00Z","text":"b"}"#,
        ]
        .join("\n");
        let corpus = parse_notes(input.as_bytes(), "notes.jsonl").unwrap();
        let ids: Vec<&str> = corpus.by_patient["p1"].iter().map(|n| n.note_id.as_str()).collect();
        assert_eq!(ids, ["n1", "n2", "n3"]);
    }

    #[test]
    fn malformed_lines_are_logged_and_skipped() {
        let input = [
            r#"{"patient_id":"p1","note_id":"n1","category":"nursing","chart_time":"2101-01-01T08:00:00Z","text":"a"}"#,
            r#"not json"#,
            r#"{"patient_id":"p1","note_id":"n2","category":"memo","chart_time":"2101-01-01T08:00:00Z","text":"a"}"#,
            r#"{"patient_id":"p1","note_id":"n3","category":"nursing","chart_time":"2101-01-01T08:00:00Z","text":"  "}"#,
        ]
        .join("\n");
        let corpus = parse_notes(input.as_bytes(), "notes.jsonl").unwrap();
        assert_eq!(corpus.n_notes(), 1);
        let lines: Vec<usize> = corpus.rejected.iter().map(|r| r.line).collect();
        assert_eq!(lines, [2, 3, 4]);
    }

    #[test]
    fn demographics_parse() {
        let input = "{\"patient_id\":\"p1\",\"sex\":\"F\",\"age_years\":70}\n{\"patient_id\":\"p2\",\"sex\":\"X\",\"age_years\":1}";
        let (d, rejected) = parse_demographics(input.as_bytes(), "demographics.jsonl").unwrap();
        assert_eq!(d["p1"].sex, Sex::F);
        assert_eq!(rejected.len(), 1);
    }
}
