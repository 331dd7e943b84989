use std::fs;
use std::path::Path;

use chrono::NaiveDate;
use regex::Regex;

use super::{day_index, ClinicalNote, Disposition, DispositionStatus, NoteCategory};
use crate::error::{Error, Result};
use crate::resources;

/// Whole-word, case-insensitive phrases marking an in-hospital death in a
/// discharge summary.
#[derive(Debug, Clone)]
pub struct DeceasePatterns {
    phrases: Vec<String>,
    regex: Option<Regex>,
}

impl DeceasePatterns {
    pub fn new<S: AsRef<str>>(phrases: &[S]) -> Result<Self> {
        let phrases: Vec<String> = phrases
            .iter()
            .map(|p| p.as_ref().trim().to_lowercase())
            .filter(|p| !p.is_empty())
            .collect();
        let regex = if phrases.is_empty() {
            None
        } else {
            let alternatives: Vec<String> = phrases
                .iter()
                .map(|p| {
                    p.split_whitespace()
                        .map(regex::escape)
                        .collect::<Vec<_>>()
                        .join(r"\s+")
                })
                .collect();
            let pattern = format!(r"(?i)\b(?:{})\b", alternatives.join("|"));
            Some(Regex::new(&pattern).map_err(|e| Error::Resource {
                name: "decease patterns".into(),
                reason: e.to_string(),
            })?)
        };
        Ok(Self { phrases, regex })
    }

    /// One phrase per line; blank lines and `#` comments are skipped.
    pub fn parse(text: &str) -> Result<Self> {
        let phrases: Vec<&str> = text
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty() && !l.starts_with('#'))
            .collect();
        Self::new(&phrases)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn phrases(&self) -> &[String] {
        &self.phrases
    }

    pub fn matches(&self, text: &str) -> bool {
        self.regex.as_ref().is_some_and(|r| r.is_match(text))
    }
}

impl Default for DeceasePatterns {
    fn default() -> Self {
        Self::parse(resources::DECEASE_PATTERNS_TXT).expect("shipped decease patterns are valid")
    }
}

pub fn extract_disposition(
    note: &ClinicalNote,
    admit_date: NaiveDate,
    patterns: &DeceasePatterns,
) -> Result<Disposition> {
    if note.category != NoteCategory::DischargeSummary {
        return Err(Error::InvalidInput(format!(
            "note {} is not a discharge summary",
            note.note_id
        )));
    }
    let status = if patterns.matches(&note.text) {
        DispositionStatus::Decease
    } else {
        DispositionStatus::Discharge
    };
    Ok(Disposition {
        patient_id: note.patient_id.clone(),
        status,
        discharge_day: day_index(admit_date, note.chart_time).max(1) as u32,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::parse_timestamp;

    fn summary(text: &str) -> ClinicalNote {
        ClinicalNote {
            patient_id: "p1".into(),
            note_id: "d1".into(),
            category: NoteCategory::DischargeSummary,
            chart_time: parse_timestamp("2101-01-05T10:00:00Z").unwrap(),
            text: text.into(),
        }
    }

    fn status(text: &str) -> DispositionStatus {
        let admit = NaiveDate::from_ymd_opt(2101, 1, 1).unwrap();
        extract_disposition(&summary(text), admit, &DeceasePatterns::default())
            .unwrap()
            .status
    }

    #[test]
    fn keyword_matches() {
        assert_eq!(status("Patient expired at 0310."), DispositionStatus::Decease);
        assert_eq!(status("Discharged home in stable condition."), DispositionStatus::Discharge);
        assert_eq!(
            status("Family meeting held; patient deceased peacefully."),
            DispositionStatus::Decease
        );
        assert_eq!(status("Patient PASSED   AWAY overnight."), DispositionStatus::Decease);
    }

    #[test]
    fn partial_words_do_not_match() {
        assert_eq!(status("Prescription unexpiredx renewed."), DispositionStatus::Discharge);
        assert_eq!(status("Deathly afraid of needles."), DispositionStatus::Discharge);
    }

    #[test]
    fn discharge_day_is_relative_to_admission() {
        let admit = NaiveDate::from_ymd_opt(2101, 1, 1).unwrap();
        let d = extract_disposition(&summary("home"), admit, &DeceasePatterns::default()).unwrap();
        assert_eq!(d.discharge_day, 5);
    }

    #[test]
    fn non_summary_is_rejected() {
        let mut note = summary("expired");
        note.category = NoteCategory::Nursing;
        let admit = NaiveDate::from_ymd_opt(2101, 1, 1).unwrap();
        assert!(extract_disposition(&note, admit, &DeceasePatterns::default()).is_err());
    }

    #[test]
    fn custom_pattern_list() {
        let patterns = DeceasePatterns::parse("# comment\n\nmorte\n").unwrap();
        assert_eq!(patterns.phrases(), ["morte"]);
        assert!(patterns.matches("Morte."));
        assert!(!patterns.matches("expired"));
    }
}
