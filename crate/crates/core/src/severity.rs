//! Per-stage sepsis state from worst-case vitals and note-derived flags.

use std::collections::BTreeSet;
use std::fmt;
use std::fs;
use std::io::Write;
use std::path::Path;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::corpus::{day_index, Disposition, VitalItem, VitalsRecord};
use crate::error::{Error, Result};
use crate::resources;
use crate::textproc::Polarity;
use crate::timeline::{ConditionMap, StageSeries};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SeverityThresholds {
    pub temp_high: f64,
    pub temp_low: f64,
    pub heart_rate: f64,
    pub resp_rate: f64,
    pub wbc_high: f64,
    pub wbc_low: f64,
    pub systolic_bp: f64,
    pub mean_arterial_pressure: f64,
}

impl Default for SeverityThresholds {
    fn default() -> Self {
        Self {
            temp_high: 38.0,
            temp_low: 36.0,
            heart_rate: 90.0,
            resp_rate: 20.0,
            wbc_high: 12.0,
            wbc_low: 4.0,
            systolic_bp: 90.0,
            mean_arterial_pressure: 65.0,
        }
    }
}

impl SeverityThresholds {
    pub fn validate(&self) -> Result<(), String> {
        let all = [
            self.temp_high,
            self.temp_low,
            self.heart_rate,
            self.resp_rate,
            self.wbc_high,
            self.wbc_low,
            self.systolic_bp,
            self.mean_arterial_pressure,
        ];
        if all.iter().any(|v| !v.is_finite()) {
            return Err("severity thresholds must be finite".into());
        }
        if self.temp_low >= self.temp_high || self.wbc_low >= self.wbc_high {
            return Err("severity low thresholds must be below high thresholds".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClinicalFlags {
    pub infection_suspected: bool,
    pub organ_dysfunction: bool,
    pub hypotension_documented: bool,
    pub iv_fluids_given: bool,
}

/// CUIs that set each flag when recorded Positive.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FlagConfig {
    pub infection_suspected: BTreeSet<String>,
    pub organ_dysfunction: BTreeSet<String>,
    pub hypotension_documented: BTreeSet<String>,
    pub iv_fluids_given: BTreeSet<String>,
}

impl FlagConfig {
    pub fn parse(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Resource {
            name: "flags config".into(),
            reason: e.to_string(),
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    /// Negative mentions never set a flag.
    pub fn flags(&self, conditions: &ConditionMap) -> ClinicalFlags {
        let any = |set: &BTreeSet<String>| {
            conditions
                .iter()
                .any(|(cui, p)| *p == Polarity::Positive && set.contains(cui))
        };
        ClinicalFlags {
            infection_suspected: any(&self.infection_suspected),
            organ_dysfunction: any(&self.organ_dysfunction),
            hypotension_documented: any(&self.hypotension_documented),
            iv_fluids_given: any(&self.iv_fluids_given),
        }
    }
}

pub fn default_flag_config() -> FlagConfig {
    FlagConfig::parse(resources::FLAGS_JSON).expect("shipped flags config is valid")
}

/// Worst-case vitals over a stage plus note flags.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct StageClinicalFeatures {
    pub max_temp: Option<f64>,
    pub min_temp: Option<f64>,
    pub max_heart_rate: Option<f64>,
    pub max_resp_rate: Option<f64>,
    pub max_wbc: Option<f64>,
    pub min_wbc: Option<f64>,
    pub min_systolic_bp: Option<f64>,
    pub min_mean_arterial_pressure: Option<f64>,
    pub flags: ClinicalFlags,
}

impl StageClinicalFeatures {
    pub fn observe(&mut self, item: VitalItem, value: f64) {
        fn hi(slot: &mut Option<f64>, v: f64) {
            *slot = Some(slot.map_or(v, |s| s.max(v)));
        }
        fn lo(slot: &mut Option<f64>, v: f64) {
            *slot = Some(slot.map_or(v, |s| s.min(v)));
        }
        match item {
            VitalItem::TempC => {
                hi(&mut self.max_temp, value);
                lo(&mut self.min_temp, value);
            }
            VitalItem::HeartRate => hi(&mut self.max_heart_rate, value),
            VitalItem::RespRate => hi(&mut self.max_resp_rate, value),
            VitalItem::Wbc => {
                hi(&mut self.max_wbc, value);
                lo(&mut self.min_wbc, value);
            }
            VitalItem::SystolicBp => lo(&mut self.min_systolic_bp, value),
            VitalItem::MeanArterialPressure => lo(&mut self.min_mean_arterial_pressure, value),
        }
    }

    pub fn hypotensive_vitals(&self, t: &SeverityThresholds) -> bool {
        self.min_systolic_bp.is_some_and(|v| v < t.systolic_bp)
            || self
                .min_mean_arterial_pressure
                .is_some_and(|v| v < t.mean_arterial_pressure)
    }
}

/// Number of SIRS criteria met, or `None` when temperature, heart rate,
/// respiratory rate and WBC are all missing.
pub fn sirs_count(f: &StageClinicalFeatures, t: &SeverityThresholds) -> Option<u8> {
    let temp_seen = f.max_temp.is_some() || f.min_temp.is_some();
    let wbc_seen = f.max_wbc.is_some() || f.min_wbc.is_some();
    if !temp_seen && f.max_heart_rate.is_none() && f.max_resp_rate.is_none() && !wbc_seen {
        return None;
    }
    let temp = f.max_temp.is_some_and(|v| v > t.temp_high) || f.min_temp.is_some_and(|v| v < t.temp_low);
    let hr = f.max_heart_rate.is_some_and(|v| v > t.heart_rate);
    let rr = f.max_resp_rate.is_some_and(|v| v > t.resp_rate);
    let wbc = f.max_wbc.is_some_and(|v| v > t.wbc_high) || f.min_wbc.is_some_and(|v| v < t.wbc_low);
    Some([temp, hr, rr, wbc].into_iter().filter(|&b| b).count() as u8)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum SepsisState {
    #[serde(rename = "SIRS")]
    Sirs,
    Sepsis,
    SevereSepsis,
    SepticShock,
    Unknown,
}

impl SepsisState {
    pub fn score(self) -> Option<u8> {
        match self {
            SepsisState::Sirs => Some(1),
            SepsisState::Sepsis => Some(2),
            SepsisState::SevereSepsis => Some(3),
            SepsisState::SepticShock => Some(4),
            SepsisState::Unknown => None,
        }
    }

    pub fn from_score(score: u8) -> Option<Self> {
        match score {
            1 => Some(SepsisState::Sirs),
            2 => Some(SepsisState::Sepsis),
            3 => Some(SepsisState::SevereSepsis),
            4 => Some(SepsisState::SepticShock),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            SepsisState::Sirs => "SIRS",
            SepsisState::Sepsis => "Sepsis",
            SepsisState::SevereSepsis => "SevereSepsis",
            SepsisState::SepticShock => "SepticShock",
            SepsisState::Unknown => "Unknown",
        }
    }
}

impl fmt::Display for SepsisState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

pub fn classify_severity(f: &StageClinicalFeatures, t: &SeverityThresholds) -> SepsisState {
    let sirs = sirs_count(f, t).unwrap_or(0);
    let fl = f.flags;
    let hypotension = fl.hypotension_documented || f.hypotensive_vitals(t);
    if fl.infection_suspected && fl.organ_dysfunction && hypotension && fl.iv_fluids_given {
        SepsisState::SepticShock
    } else if fl.infection_suspected && fl.organ_dysfunction {
        SepsisState::SevereSepsis
    } else if fl.infection_suspected && sirs >= 2 {
        SepsisState::Sepsis
    } else if sirs >= 2 {
        SepsisState::Sirs
    } else {
        SepsisState::Unknown
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageSeverity {
    pub stage: u32,
    pub state: SepsisState,
    pub features: StageClinicalFeatures,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeverityTimeline {
    pub patient_id: String,
    pub stages: Vec<StageSeverity>,
    pub disposition: Option<Disposition>,
}

impl SeverityTimeline {
    pub fn scores(&self) -> Vec<Option<u8>> {
        self.stages.iter().map(|s| s.state.score()).collect()
    }
}

/// Features for every stage: vitals are bucketed by day index relative to
/// `admit_date`, flags come from the stage condition map.
pub fn stage_features(
    series: &StageSeries,
    vitals: &[VitalsRecord],
    admit_date: NaiveDate,
    flags: &FlagConfig,
) -> Vec<StageClinicalFeatures> {
    let mut out: Vec<StageClinicalFeatures> = series
        .stages
        .iter()
        .map(|s| StageClinicalFeatures {
            flags: flags.flags(&s.conditions),
            ..Default::default()
        })
        .collect();
    for v in vitals {
        let d = day_index(admit_date, v.chart_time);
        if let Some(k) = series
            .stages
            .iter()
            .position(|s| d >= s.day_range.0 as i64 && d <= s.day_range.1 as i64)
        {
            out[k].observe(v.item, v.value);
        }
    }
    out
}

pub fn severity_timeline(
    series: &StageSeries,
    vitals: &[VitalsRecord],
    admit_date: NaiveDate,
    flags: &FlagConfig,
    thresholds: &SeverityThresholds,
) -> SeverityTimeline {
    let stages = stage_features(series, vitals, admit_date, flags)
        .into_iter()
        .zip(&series.stages)
        .map(|(features, s)| StageSeverity {
            stage: s.index,
            state: classify_severity(&features, thresholds),
            features,
        })
        .collect();
    SeverityTimeline {
        patient_id: series.patient_id.clone(),
        stages,
        disposition: series.disposition.clone(),
    }
}

/// `patient_id,stage,state,score`; score is empty for Unknown.
pub fn write_severity_csv<W: Write>(timelines: &[SeverityTimeline], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["patient_id", "stage", "state", "score"])?;
    for t in timelines {
        for s in &t.stages {
            w.write_record([
                t.patient_id.clone(),
                s.stage.to_string(),
                s.state.to_string(),
                s.state.score().map_or_else(String::new, |v| v.to_string()),
            ])?;
        }
    }
    w.flush().map_err(|e| Error::io("severity.csv", e))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vitals(temp: f64, hr: f64, rr: Option<f64>, wbc: Option<f64>) -> StageClinicalFeatures {
        StageClinicalFeatures {
            max_temp: Some(temp),
            min_temp: Some(temp),
            max_heart_rate: Some(hr),
            max_resp_rate: rr,
            max_wbc: wbc,
            min_wbc: wbc,
            ..Default::default()
        }
    }

    /// Features with exactly `k` SIRS criteria met and optional low blood pressure.
    fn grid_features(k: u8, low_bp: bool, flags: ClinicalFlags) -> StageClinicalFeatures {
        let abnormal = |i: u8| i < k;
        StageClinicalFeatures {
            max_temp: Some(if abnormal(0) { 39.0 } else { 37.0 }),
            min_temp: Some(if abnormal(0) { 39.0 } else { 37.0 }),
            max_heart_rate: Some(if abnormal(1) { 110.0 } else { 70.0 }),
            max_resp_rate: Some(if abnormal(2) { 25.0 } else { 14.0 }),
            max_wbc: Some(if abnormal(3) { 15.0 } else { 8.0 }),
            min_wbc: Some(if abnormal(3) { 15.0 } else { 8.0 }),
            min_systolic_bp: Some(if low_bp { 85.0 } else { 120.0 }),
            min_mean_arterial_pressure: Some(80.0),
            flags,
        }
    }

    /// Hand-written truth table: the highest rung whose conditions all hold.
    fn oracle(k: u8, low_bp: bool, f: ClinicalFlags) -> Option<u8> {
        let mut rungs = vec![];
        if k >= 2 {
            rungs.push(1);
        }
        if f.infection_suspected && k >= 2 {
            rungs.push(2);
        }
        if f.infection_suspected && f.organ_dysfunction {
            rungs.push(3);
        }
        if f.infection_suspected
            && f.organ_dysfunction
            && f.iv_fluids_given
            && (f.hypotension_documented || low_bp)
        {
            rungs.push(4);
        }
        rungs.into_iter().max()
    }

    fn all_flags() -> Vec<ClinicalFlags> {
        (0u8..16)
            .map(|m| ClinicalFlags {
                infection_suspected: m & 1 != 0,
                organ_dysfunction: m & 2 != 0,
                hypotension_documented: m & 4 != 0,
                iv_fluids_given: m & 8 != 0,
            })
            .collect()
    }

    #[test]
    fn sirs_examples() {
        let t = SeverityThresholds::default();
        assert_eq!(sirs_count(&vitals(39.0, 120.0, Some(24.0), Some(15.0)), &t), Some(4));
        assert_eq!(sirs_count(&vitals(37.0, 80.0, Some(14.0), Some(8.0)), &t), Some(0));
        assert_eq!(sirs_count(&vitals(36.5, 95.0, None, None), &t), Some(1));
        assert_eq!(sirs_count(&StageClinicalFeatures::default(), &t), None);
    }

    #[test]
    fn ladder_examples() {
        let t = SeverityThresholds::default();
        let inf = ClinicalFlags { infection_suspected: true, ..Default::default() };
        let f = StageClinicalFeatures { flags: inf, ..vitals(39.0, 120.0, Some(24.0), None) };
        assert_eq!(classify_severity(&f, &t), SepsisState::Sepsis);
        assert_eq!(classify_severity(&f, &t).score(), Some(2));

        let shock = ClinicalFlags {
            infection_suspected: true,
            organ_dysfunction: true,
            hypotension_documented: true,
            iv_fluids_given: true,
        };
        let f = StageClinicalFeatures { flags: shock, ..Default::default() };
        assert_eq!(classify_severity(&f, &t).score(), Some(4));

        let f = vitals(39.0, 120.0, Some(14.0), Some(8.0));
        assert_eq!(classify_severity(&f, &t), SepsisState::Sirs);
        assert_eq!(classify_severity(&StageClinicalFeatures::default(), &t), SepsisState::Unknown);
    }

    #[test]
    fn matches_truth_table_over_full_grid() {
        let t = SeverityThresholds::default();
        for flags in all_flags() {
            for k in 0..=4 {
                for low_bp in [false, true] {
                    let got = classify_severity(&grid_features(k, low_bp, flags), &t).score();
                    assert_eq!(got, oracle(k, low_bp, flags), "k={k} low_bp={low_bp} {flags:?}");
                }
            }
        }
    }

    #[test]
    fn single_increments_never_lower_the_score() {
        let t = SeverityThresholds::default();
        let score = |k, bp, f| classify_severity(&grid_features(k, bp, f), &t).score().unwrap_or(0);
        for f in all_flags() {
            for k in 0..=4u8 {
                for bp in [false, true] {
                    let s = score(k, bp, f);
                    if k < 4 {
                        assert!(score(k + 1, bp, f) >= s);
                    }
                    if !bp {
                        assert!(score(k, true, f) >= s);
                    }
                    let bumps = [
                        ClinicalFlags { infection_suspected: true, ..f },
                        ClinicalFlags { organ_dysfunction: true, ..f },
                        ClinicalFlags { hypotension_documented: true, ..f },
                        ClinicalFlags { iv_fluids_given: true, ..f },
                    ];
                    for g in bumps {
                        assert!(score(k, bp, g) >= s);
                    }
                }
            }
        }
    }

    #[test]
    fn negative_mentions_do_not_set_flags() {
        let cfg = default_flag_config();
        let map: ConditionMap = [("C0020649".to_string(), Polarity::Negative)].into();
        assert!(!cfg.flags(&map).hypotension_documented);
        let map: ConditionMap = [("C0020649".to_string(), Polarity::Positive)].into();
        assert!(cfg.flags(&map).hypotension_documented);
    }

    #[test]
    fn score_state_correspondence() {
        for s in 1..=4 {
            assert_eq!(SepsisState::from_score(s).unwrap().score(), Some(s));
        }
        assert_eq!(SepsisState::Unknown.score(), None);
    }
}
