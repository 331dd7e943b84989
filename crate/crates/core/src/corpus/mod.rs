//! Raw input ingestion: notes, vitals, demographics and discharge dispositions.

mod disposition;
mod notes;
mod stats;
mod vitals;

use std::collections::BTreeMap;
use std::fmt;
use std::io::Write;
use std::str::FromStr;

use chrono::{DateTime, NaiveDate, NaiveDateTime, Utc};
use serde::{Deserialize, Serialize};

pub use disposition::{extract_disposition, DeceasePatterns};
pub use notes::{load_demographics, load_notes, parse_demographics, parse_notes, NoteCorpus};
pub use stats::{cohort_stats, CohortSummary, PatientFacts};
pub use vitals::{load_vitals, parse_vitals, VitalsCorpus};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoteCategory {
    Nursing,
    Radiology,
    Ecg,
    DischargeSummary,
}

impl FromStr for NoteCategory {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "nursing" => Ok(NoteCategory::Nursing),
            "radiology" => Ok(NoteCategory::Radiology),
            "ecg" => Ok(NoteCategory::Ecg),
            "discharge_summary" => Ok(NoteCategory::DischargeSummary),
            other => Err(format!("unknown note category {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClinicalNote {
    pub patient_id: String,
    pub note_id: String,
    pub category: NoteCategory,
    pub chart_time: DateTime<Utc>,
    pub text: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VitalItem {
    TempC,
    HeartRate,
    RespRate,
    Wbc,
    SystolicBp,
    MeanArterialPressure,
}

impl VitalItem {
    pub const ALL: [VitalItem; 6] = [
        VitalItem::TempC,
        VitalItem::HeartRate,
        VitalItem::RespRate,
        VitalItem::Wbc,
        VitalItem::SystolicBp,
        VitalItem::MeanArterialPressure,
    ];

    /// Inclusive plausible range; rows outside it are rejected at load time.
    pub fn plausible_range(self) -> (f64, f64) {
        match self {
            VitalItem::TempC => (25.0, 45.0),
            VitalItem::HeartRate => (0.0, 300.0),
            VitalItem::RespRate => (0.0, 80.0),
            VitalItem::Wbc => (0.0, 200.0),
            VitalItem::SystolicBp | VitalItem::MeanArterialPressure => (0.0, 300.0),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            VitalItem::TempC => "temp_c",
            VitalItem::HeartRate => "heart_rate",
            VitalItem::RespRate => "resp_rate",
            VitalItem::Wbc => "wbc",
            VitalItem::SystolicBp => "systolic_bp",
            VitalItem::MeanArterialPressure => "mean_arterial_pressure",
        }
    }
}

impl fmt::Display for VitalItem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for VitalItem {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        VitalItem::ALL
            .into_iter()
            .find(|item| item.as_str() == s)
            .ok_or_else(|| format!("unknown item {s:?}"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VitalsRecord {
    pub patient_id: String,
    pub chart_time: DateTime<Utc>,
    pub item: VitalItem,
    pub value: f64,
}

impl VitalsRecord {
    pub fn validate(&self) -> Result<(), String> {
        if !self.value.is_finite() {
            return Err("non-finite value".to_string());
        }
        let (lo, hi) = self.item.plausible_range();
        if self.value < lo || self.value > hi {
            return Err(format!(
                "out of range: {} = {} not in [{lo}, {hi}]",
                self.item, self.value
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum DispositionStatus {
    Decease,
    Discharge,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Disposition {
    pub patient_id: String,
    pub status: DispositionStatus,
    /// Day index of the discharge summary; day 1 is the admission day.
    pub discharge_day: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Sex {
    M,
    F,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Demographics {
    pub patient_id: String,
    pub sex: Sex,
    pub age_years: u32,
}

/// One line of the rejected-row log.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RejectedRow {
    pub source: String,
    pub line: usize,
    pub reason: String,
}

pub fn write_rejected_csv<W: Write>(rows: &[RejectedRow], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["source", "line", "reason"])?;
    for row in rows {
        w.write_record([row.source.as_str(), &row.line.to_string(), row.reason.as_str()])?;
    }
    w.flush().map_err(|e| Error::io("rejected.csv", e))?;
    Ok(())
}

/// Parses an ISO-8601 timestamp. Offsets are honoured; naive timestamps and
/// bare dates are taken as UTC.
pub fn parse_timestamp(s: &str) -> Result<DateTime<Utc>, String> {
    let s = s.trim();
    if let Ok(t) = DateTime::parse_from_rfc3339(s) {
        return Ok(t.with_timezone(&Utc));
    }
    for fmt in ["%Y-%m-%dT%H:%M:%S%.f", "%Y-%m-%d %H:%M:%S%.f", "%Y-%m-%dT%H:%M"] {
        if let Ok(t) = NaiveDateTime::parse_from_str(s, fmt) {
            return Ok(t.and_utc());
        }
    }
    if let Ok(d) = NaiveDate::parse_from_str(s, "%Y-%m-%d") {
        return Ok(d.and_hms_opt(0, 0, 0).expect("midnight").and_utc());
    }
    Err(format!("invalid ISO-8601 timestamp {s:?}"))
}

/// Day index of `t` relative to `admit_date` (day 1 = admission day).
pub fn day_index(admit_date: NaiveDate, t: DateTime<Utc>) -> i64 {
    (t.date_naive() - admit_date).num_days() + 1
}

/// A patient's first admission with all of its events.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Admission {
    pub patient_id: String,
    /// Calendar date of day 1.
    pub admit_date: NaiveDate,
    pub los_days: u32,
    pub notes: Vec<ClinicalNote>,
    pub vitals: Vec<VitalsRecord>,
    pub disposition: Option<Disposition>,
    pub demographics: Option<Demographics>,
}

impl Admission {
    pub fn day_of(&self, t: DateTime<Utc>) -> i64 {
        day_index(self.admit_date, t)
    }

    /// Fraction of days 1..=LOS that carry at least one note.
    pub fn note_day_coverage(&self) -> f64 {
        if self.los_days == 0 {
            return 0.0;
        }
        let mut seen = vec![false; self.los_days as usize];
        for note in &self.notes {
            let d = self.day_of(note.chart_time);
            if d >= 1 && d <= self.los_days as i64 {
                seen[(d - 1) as usize] = true;
            }
        }
        seen.iter().filter(|&&s| s).count() as f64 / self.los_days as f64
    }

    pub fn facts(&self) -> PatientFacts {
        PatientFacts {
            sex: self.demographics.as_ref().map(|d| d.sex),
            age_years: self.demographics.as_ref().map(|d| d.age_years),
            los_days: Some(self.los_days),
        }
    }
}

/// Cohort-level inclusion rules.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CohortFilter {
    /// Minimum fraction of hospital days with at least one note.
    pub min_note_day_fraction: f64,
}

impl Default for CohortFilter {
    fn default() -> Self {
        Self {
            min_note_day_fraction: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExcludedPatient {
    pub patient_id: String,
    pub reason: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Cohort {
    pub admissions: Vec<Admission>,
    pub excluded: Vec<ExcludedPatient>,
}

/// Groups notes and vitals into first admissions.
///
/// Day 1 is the calendar day of the patient's first note or vitals record.
/// The first discharge summary closes the admission: events on later days
/// belong to readmissions and are dropped.
pub fn assemble_admissions(
    notes: &NoteCorpus,
    vitals: &VitalsCorpus,
    demographics: &BTreeMap<String, Demographics>,
    patterns: &DeceasePatterns,
    filter: &CohortFilter,
) -> Cohort {
    let mut patient_ids: Vec<&String> = notes.by_patient.keys().collect();
    patient_ids.extend(vitals.by_patient.keys());
    patient_ids.sort();
    patient_ids.dedup();

    let empty_notes = Vec::new();
    let empty_vitals = Vec::new();
    let mut cohort = Cohort::default();
    for pid in patient_ids {
        let p_notes = notes.by_patient.get(pid).unwrap_or(&empty_notes);
        let p_vitals = vitals.by_patient.get(pid).unwrap_or(&empty_vitals);
        let first_time = p_notes
            .iter()
            .map(|n| n.chart_time)
            .chain(p_vitals.iter().map(|v| v.chart_time))
            .min();
        let Some(first_time) = first_time else {
            continue;
        };
        let admit_date = first_time.date_naive();

        let summary = p_notes
            .iter()
            .find(|n| n.category == NoteCategory::DischargeSummary);
        let disposition = summary.map(|n| {
            extract_disposition(n, admit_date, patterns)
                .expect("note category checked above")
        });
        let last_day = match &disposition {
            Some(d) => d.discharge_day as i64,
            None => p_notes
                .iter()
                .map(|n| day_index(admit_date, n.chart_time))
                .chain(p_vitals.iter().map(|v| day_index(admit_date, v.chart_time)))
                .max()
                .unwrap_or(1),
        };

        let mut kept_notes: Vec<ClinicalNote> = p_notes
            .iter()
            .filter(|n| day_index(admit_date, n.chart_time) <= last_day)
            .cloned()
            .collect();
        // A same-day note written after the summary still belongs to this stay.
        kept_notes.sort_by(|a, b| (a.chart_time, &a.note_id).cmp(&(b.chart_time, &b.note_id)));
        let kept_vitals: Vec<VitalsRecord> = p_vitals
            .iter()
            .filter(|v| day_index(admit_date, v.chart_time) <= last_day)
            .cloned()
            .collect();

        let admission = Admission {
            patient_id: pid.clone(),
            admit_date,
            los_days: last_day.max(1) as u32,
            notes: kept_notes,
            vitals: kept_vitals,
            disposition,
            demographics: demographics.get(pid).cloned(),
        };
        let coverage = admission.note_day_coverage();
        if coverage < filter.min_note_day_fraction {
            cohort.excluded.push(ExcludedPatient {
                patient_id: pid.clone(),
                reason: format!(
                    "note coverage {coverage:.3} below {}",
                    filter.min_note_day_fraction
                ),
            });
            continue;
        }
        cohort.admissions.push(admission);
    }
    cohort
}
