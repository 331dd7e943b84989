//! Synthetic cohorts with planted clusters, severity dynamics and
//! treated/emerging conditions.

mod fixtures;
mod text;

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;

use chrono::{Duration, NaiveDate, NaiveTime};
use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng;
use serde::{Deserialize, Serialize};

pub use fixtures::{gaussian_blobs, rank2_ternary};
pub use text::{render_note, sentence, SurfaceBank};

use crate::corpus::{
    ClinicalNote, Demographics, DispositionStatus, NoteCategory, Sex, VitalItem, VitalsRecord,
};
use crate::error::{Error, Result};
use crate::pathways::{estimate_transitions, FromState, OutcomeSequence, TransitionMatrix, TransitionOutcome};
use crate::rng;
use crate::textproc::Polarity;
use crate::timeline::{stage_ranges, ConditionMap};

/// Symptoms used for cluster signatures and background noise. None of them
/// belongs to a severity flag set.
pub const DEFAULT_SYMPTOM_POOL: [&str; 36] = [
    "C0015967", "C0008031", "C0013404", "C0039231", "C0231835", "C0013604", "C0011849",
    "C0001122", "C0027497", "C0042963", "C0010200", "C0004238", "C0027051", "C0041834",
    "C0020538", "C0034642", "C0151636", "C0006384", "C0018802", "C0024117", "C0016169",
    "C0011127", "C0018817", "C0022922", "C0003467", "C0085631", "C0003123", "C0015672",
    "C0018681", "C0000737", "C0020461", "C0002871", "C0011991", "C0019080",
    "C0030193", "C0017181",
];

const INFECTION_CUIS: [&str; 4] = ["C0032285", "C0042029", "C0007642", "C0004610"];
const ORGAN_CUIS: [&str; 5] = ["C0022660", "C0001125", "C0028961", "C0040034", "C0009676"];
const HYPOTENSION_CUI: &str = "C0020649";
const FLUIDS_CUI: &str = "C9000001";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sampling {
    /// Outcome counts per (cluster, stage, source) group are allocated in
    /// exact proportion to the planted row, then shuffled.
    Quota,
    /// Every outcome is drawn independently.
    Iid,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantedRow {
    pub from: FromState,
    pub probabilities: BTreeMap<TransitionOutcome, f64>,
}

/// Planted transitions into `stage` for one cluster.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantedMatrix {
    pub cluster: usize,
    pub stage: u32,
    pub rows: Vec<PlantedRow>,
}

impl PlantedMatrix {
    pub fn row(&self, from: FromState) -> Option<&PlantedRow> {
        self.rows.iter().find(|r| r.from == from)
    }
}

/// Conditions cleared on Improve edges and introduced on Deteriorate
/// edges into `stage` for one cluster.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlantedShift {
    pub cluster: usize,
    pub stage: u32,
    pub treated: String,
    pub emerging: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeneratorConfig {
    pub n_patients: usize,
    pub n_clusters: usize,
    pub seed: u64,
    pub sampling: Sampling,
    /// Longest stay in stages, 2..=5; the last boundary is always terminal.
    pub max_stages: u32,
    pub signature_size: usize,
    pub signature_prevalence: f64,
    pub background_prevalence: f64,
    /// Chance that an unmentioned symptom is explicitly negated in stage 1.
    pub negated_rate: f64,
    /// Chance that the middle day of a three-day stage has no note.
    pub gap_rate: f64,
    pub symptom_pool: Option<Vec<String>>,
    /// `[cluster][symptom]`, over the symptom pool.
    pub prevalences: Option<Vec<Vec<f64>>>,
    pub transitions: Option<Vec<PlantedMatrix>>,
    pub shifts: Option<Vec<PlantedShift>>,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            n_patients: 400,
            n_clusters: 4,
            seed: 11,
            sampling: Sampling::Quota,
            max_stages: 5,
            signature_size: 5,
            signature_prevalence: 0.85,
            background_prevalence: 0.05,
            negated_rate: 0.1,
            gap_rate: 0.25,
            symptom_pool: None,
            prevalences: None,
            transitions: None,
            shifts: None,
        }
    }
}

/// Fully specified generator parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantedModel {
    pub symptom_pool: Vec<String>,
    pub prevalences: Vec<Vec<f64>>,
    pub transitions: Vec<PlantedMatrix>,
    pub shifts: Vec<PlantedShift>,
}

impl PlantedModel {
    pub fn shift(&self, cluster: usize, stage: u32) -> Option<&PlantedShift> {
        self.shifts.iter().find(|s| s.cluster == cluster && s.stage == stage)
    }
}

fn row(from: FromState, p: [f64; 5]) -> PlantedRow {
    PlantedRow {
        from,
        probabilities: TransitionOutcome::KNOWN
            .iter()
            .zip(p)
            .filter(|(_, v)| *v > 0.0)
            .map(|(&o, v)| (o, v))
            .collect(),
    }
}

/// Default dynamics: risk rises with the cluster index.
pub fn default_transitions(n_clusters: usize, max_stages: u32) -> Vec<PlantedMatrix> {
    let mut out = Vec::new();
    for c in 0..n_clusters {
        let r = if n_clusters > 1 { c as f64 / (n_clusters - 1) as f64 } else { 0.0 };
        for stage in 2..=max_stages {
            let rows = if stage == max_stages {
                let terminal = |from, dec: f64| row(from, [1.0 - dec, 0.0, 0.0, 0.0, dec]);
                if stage == 2 {
                    vec![terminal(FromState::Start, 0.1 + 0.1 * r)]
                } else {
                    vec![
                        terminal(FromState::Improve, 0.1),
                        terminal(FromState::Persistent, 0.25),
                        terminal(FromState::Deteriorate, 0.4 + 0.2 * r),
                    ]
                }
            } else if stage == 2 {
                vec![row(
                    FromState::Start,
                    [0.10 - 0.05 * r, 0.35 - 0.15 * r, 0.30, 0.20 + 0.15 * r, 0.05 + 0.05 * r],
                )]
            } else {
                vec![
                    row(FromState::Improve, [0.45 - 0.1 * r, 0.2, 0.2, 0.1 + 0.1 * r, 0.05]),
                    row(FromState::Persistent, [0.25, 0.25 - 0.1 * r, 0.25, 0.15 + 0.05 * r, 0.10 + 0.05 * r]),
                    row(FromState::Deteriorate, [0.15 - 0.05 * r, 0.2, 0.2, 0.2, 0.25 + 0.05 * r]),
                ]
            };
            out.push(PlantedMatrix { cluster: c, stage, rows });
        }
    }
    out
}

impl GeneratorConfig {
    /// Fills unspecified parts with the built-in scheme and validates.
    pub fn resolve(&self) -> Result<PlantedModel> {
        let bad = |m: String| Err(Error::GeneratorConfig(m));
        let k = self.n_clusters;
        if self.n_patients == 0 || k == 0 {
            return bad("need at least one patient and one cluster".into());
        }
        if !(2..=5).contains(&self.max_stages) {
            return bad(format!("max_stages must be in 2..=5, got {}", self.max_stages));
        }
        for (name, v) in [
            ("signature_prevalence", self.signature_prevalence),
            ("background_prevalence", self.background_prevalence),
            ("negated_rate", self.negated_rate),
            ("gap_rate", self.gap_rate),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return bad(format!("{name} must be in [0, 1], got {v}"));
            }
        }
        let bank = SurfaceBank::default();
        let pool: Vec<String> = match &self.symptom_pool {
            Some(p) => p.clone(),
            None => DEFAULT_SYMPTOM_POOL.iter().map(|s| s.to_string()).collect(),
        };
        if let Some(c) = pool.iter().find(|c| !bank.contains(c)) {
            return bad(format!("symptom {c} has no lexicon surface"));
        }
        if pool.iter().collect::<BTreeSet<_>>().len() != pool.len() {
            return bad("symptom pool has duplicates".into());
        }

        let prevalences = match &self.prevalences {
            Some(p) => p.clone(),
            None => {
                if k * self.signature_size > pool.len() {
                    return bad(format!(
                        "{k} clusters of {} signature symptoms need {} symptoms, pool has {}",
                        self.signature_size,
                        k * self.signature_size,
                        pool.len()
                    ));
                }
                (0..k)
                    .map(|c| {
                        (0..pool.len())
                            .map(|j| {
                                if j / self.signature_size.max(1) == c && self.signature_size > 0 {
                                    self.signature_prevalence
                                } else {
                                    self.background_prevalence
                                }
                            })
                            .collect()
                    })
                    .collect()
            }
        };
        if prevalences.len() != k || prevalences.iter().any(|r| r.len() != pool.len()) {
            return bad(format!("prevalences must be {k} rows of {} values", pool.len()));
        }
        if prevalences.iter().flatten().any(|p| !(0.0..=1.0).contains(p)) {
            return bad("prevalences must lie in [0, 1]".into());
        }

        let shifts = match &self.shifts {
            Some(s) => s.clone(),
            None => {
                // Two pairs per cluster, alternating by stage parity, so
                // back-to-back edges of one kind never reuse a condition.
                let used = k * self.signature_size;
                if used + 4 * k > pool.len() {
                    return bad(format!("not enough non-signature symptoms to plant shifts for {k} clusters"));
                }
                let at = |j: usize| pool[pool.len() - 1 - j].clone();
                (0..k)
                    .flat_map(|c| {
                        let at = &at;
                        (2..=self.max_stages).map(move |stage| {
                            let base = 4 * c + 2 * (stage as usize % 2);
                            PlantedShift { cluster: c, stage, treated: at(base), emerging: at(base + 1) }
                        })
                    })
                    .collect()
            }
        };
        for c in 0..k {
            for stage in 2..=self.max_stages {
                let here = shifts.iter().filter(|s| s.cluster == c && s.stage == stage).collect::<Vec<_>>();
                let [s] = here.as_slice() else {
                    return bad(format!("cluster {c} stage {stage} needs exactly one planted shift"));
                };
                if s.treated == s.emerging || !bank.contains(&s.treated) || !bank.contains(&s.emerging) {
                    return bad(format!("invalid planted shift for cluster {c} stage {stage}"));
                }
                if let Some(prev) = shifts.iter().find(|p| p.cluster == c && p.stage + 1 == stage) {
                    if prev.treated == s.treated || prev.emerging == s.emerging {
                        return bad(format!("cluster {c}: shifts into stages {} and {stage} must differ", stage - 1));
                    }
                }
            }
        }

        let transitions = match &self.transitions {
            Some(t) => t.clone(),
            None => default_transitions(k, self.max_stages),
        };
        for c in 0..k {
            for stage in 2..=self.max_stages {
                let m = transitions
                    .iter()
                    .find(|m| m.cluster == c && m.stage == stage)
                    .ok_or_else(|| Error::GeneratorConfig(format!("missing matrix for cluster {c} stage {stage}")))?;
                let needed: &[FromState] = if stage == 2 {
                    &[FromState::Start]
                } else {
                    &[FromState::Improve, FromState::Persistent, FromState::Deteriorate]
                };
                for &from in needed {
                    let r = m.row(from).ok_or_else(|| {
                        Error::GeneratorConfig(format!("cluster {c} stage {stage} lacks row {from}"))
                    })?;
                    let sum: f64 = r.probabilities.values().sum();
                    if (sum - 1.0).abs() > 1e-9 || r.probabilities.values().any(|p| *p < 0.0) {
                        return bad(format!("cluster {c} stage {stage} row {from} is not a distribution"));
                    }
                    if r.probabilities.contains_key(&TransitionOutcome::Unknown) {
                        return bad("planted rows cannot contain Unknown".into());
                    }
                    if stage == self.max_stages
                        && r.probabilities.iter().any(|(o, p)| !o.is_terminal() && *p > 0.0)
                    {
                        return bad(format!("last stage {stage} must only lead to Discharge or Decease"));
                    }
                }
            }
        }
        Ok(PlantedModel { symptom_pool: pool, prevalences, transitions, shifts })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatientTruth {
    pub patient_id: String,
    pub cluster: usize,
    pub los_days: u32,
    /// One score per stage.
    pub stage_scores: Vec<u8>,
    pub outcomes: Vec<TransitionOutcome>,
    pub disposition: DispositionStatus,
    /// Stage condition maps as planted; days without a note are filled in
    /// by imputation downstream.
    pub stage_conditions: Vec<ConditionMap>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub seed: u64,
    pub n_clusters: usize,
    pub sampling: Sampling,
    pub cluster_labels: Vec<usize>,
    pub patients: Vec<PatientTruth>,
    pub planted: PlantedModel,
}

impl GroundTruth {
    /// The generator's own counts, estimated with the true clusters.
    pub fn empirical_transitions(&self) -> Vec<TransitionMatrix> {
        let seqs: Vec<OutcomeSequence> = self
            .patients
            .iter()
            .map(|p| OutcomeSequence { patient_id: p.patient_id.clone(), outcomes: p.outcomes.clone() })
            .collect();
        estimate_transitions(&seqs, &self.subgroups())
    }

    pub fn subgroups(&self) -> BTreeMap<String, usize> {
        self.patients.iter().map(|p| (p.patient_id.clone(), p.cluster)).collect()
    }

    pub fn planted_matrix(&self, cluster: usize, stage: u32) -> Option<&PlantedMatrix> {
        self.planted.transitions.iter().find(|m| m.cluster == cluster && m.stage == stage)
    }
}

pub fn ground_truth_report(truth: &GroundTruth) -> Result<String> {
    let mut s = serde_json::to_string_pretty(truth)?;
    s.push('\n');
    Ok(s)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticCohort {
    pub notes: Vec<ClinicalNote>,
    pub vitals: Vec<VitalsRecord>,
    pub demographics: Vec<Demographics>,
    pub truth: GroundTruth,
}

/// Counts proportional to `p` summing to `n`; remainders go to the largest
/// fractional parts, ties to the earlier entry.
fn largest_remainder(p: &[f64], n: usize) -> Vec<usize> {
    let raw: Vec<f64> = p.iter().map(|x| x * n as f64).collect();
    let mut counts: Vec<usize> = raw.iter().map(|x| x.floor() as usize).collect();
    let mut left = n.saturating_sub(counts.iter().sum());
    let mut order: Vec<usize> = (0..p.len()).collect();
    order.sort_by(|&a, &b| (raw[b] - raw[b].floor()).total_cmp(&(raw[a] - raw[a].floor())).then(a.cmp(&b)));
    for &j in order.iter().cycle() {
        if left == 0 {
            break;
        }
        counts[j] += 1;
        left -= 1;
    }
    counts
}

fn sample_row<R: Rng + ?Sized>(row: &PlantedRow, rng: &mut R) -> TransitionOutcome {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    let mut last = TransitionOutcome::Discharge;
    for (&o, &p) in &row.probabilities {
        acc += p;
        last = o;
        if u < acc {
            return o;
        }
    }
    last
}

fn assign_clusters<R: Rng + ?Sized>(n: usize, k: usize, sampling: Sampling, rng: &mut R) -> Vec<usize> {
    match sampling {
        Sampling::Quota => {
            let mut labels: Vec<usize> = (0..n).map(|i| i % k).collect();
            labels.shuffle(rng);
            labels
        }
        Sampling::Iid => (0..n).map(|_| rng.random_range(0..k)).collect(),
    }
}

/// Outcome sequences for the whole cohort, boundary by boundary.
fn sample_outcomes<R: Rng + ?Sized>(
    clusters: &[usize],
    model: &PlantedModel,
    max_stages: u32,
    sampling: Sampling,
    rng: &mut R,
) -> Vec<Vec<TransitionOutcome>> {
    let n = clusters.len();
    let mut outcomes: Vec<Vec<TransitionOutcome>> = vec![Vec::new(); n];
    for stage in 2..=max_stages {
        let mut groups: BTreeMap<(usize, FromState), Vec<usize>> = BTreeMap::new();
        for i in 0..n {
            let from = match outcomes[i].last() {
                None if stage == 2 => FromState::Start,
                Some(&o) => match FromState::of(o) {
                    Some(f) => f,
                    None => continue,
                },
                None => continue,
            };
            groups.entry((clusters[i], from)).or_default().push(i);
        }
        for ((c, from), members) in groups {
            let m = model
                .transitions
                .iter()
                .find(|m| m.cluster == c && m.stage == stage)
                .expect("validated");
            let row = m.row(from).expect("validated");
            match sampling {
                Sampling::Quota => {
                    let keys: Vec<TransitionOutcome> = row.probabilities.keys().copied().collect();
                    let p: Vec<f64> = row.probabilities.values().copied().collect();
                    let counts = largest_remainder(&p, members.len());
                    let mut bag: Vec<TransitionOutcome> = keys
                        .iter()
                        .zip(counts)
                        .flat_map(|(&o, c)| std::iter::repeat_n(o, c))
                        .collect();
                    bag.shuffle(rng);
                    for (&i, o) in members.iter().zip(bag) {
                        outcomes[i].push(o);
                    }
                }
                Sampling::Iid => {
                    for &i in &members {
                        outcomes[i].push(sample_row(row, rng));
                    }
                }
            }
        }
    }
    outcomes
}

/// Per-stage scores consistent with the outcome sequence; the start score
/// is drawn uniformly among the feasible ones.
fn scores_for<R: Rng + ?Sized>(outcomes: &[TransitionOutcome], rng: &mut R) -> Vec<u8> {
    let mut prefix = vec![0i32];
    for o in outcomes {
        let d = match o {
            TransitionOutcome::Improve => -1,
            TransitionOutcome::Deteriorate => 1,
            _ => 0,
        };
        prefix.push(prefix.last().unwrap() + d);
    }
    let lo = 1 - prefix.iter().min().unwrap();
    let hi = 4 - prefix.iter().max().unwrap();
    let start = rng.random_range(lo..=hi);
    prefix.iter().map(|p| (start + p) as u8).collect()
}

/// Days in stage `k` of a stay of `los` days.
fn stage_days(los: u32) -> Vec<(u32, u32)> {
    stage_ranges(los).expect("generated stays are at least two days")
}

fn los_for_stages<R: Rng + ?Sized>(n_stages: usize, rng: &mut R) -> u32 {
    match n_stages {
        2 => rng.random_range(2..=3),
        n => {
            let base = 3 * (n as u32 - 2);
            rng.random_range(base + 1..=base + 3)
        }
    }
}

struct PatientPlan {
    stage_conditions: Vec<ConditionMap>,
}

fn plan_conditions<R: Rng + ?Sized>(
    cluster: usize,
    scores: &[u8],
    outcomes: &[TransitionOutcome],
    model: &PlantedModel,
    cfg: &GeneratorConfig,
    rng: &mut R,
) -> PatientPlan {
    let infection = *INFECTION_CUIS.choose(rng).expect("non-empty");
    let organ = *ORGAN_CUIS.choose(rng).expect("non-empty");
    let n_stages = scores.len();
    let mut stages: Vec<ConditionMap> = Vec::with_capacity(n_stages);

    let mut first = ConditionMap::new();
    for (j, cui) in model.symptom_pool.iter().enumerate() {
        let u: f64 = rng.random();
        let p = model.prevalences[cluster][j];
        if u < p {
            first.insert(cui.clone(), Polarity::Positive);
        } else if u < p + cfg.negated_rate * (1.0 - p) {
            first.insert(cui.clone(), Polarity::Negative);
        }
    }
    stages.push(first);
    for _ in 1..n_stages {
        let prev = stages.last().expect("non-empty");
        let mut next = ConditionMap::new();
        for cui in &model.symptom_pool {
            match prev.get(cui) {
                Some(Polarity::Positive) => {
                    let p = if rng.random_bool(0.75) { Polarity::Positive } else { Polarity::Negative };
                    next.insert(cui.clone(), p);
                }
                Some(Polarity::Negative) => {
                    if rng.random_bool(0.6) {
                        next.insert(cui.clone(), Polarity::Negative);
                    }
                }
                None => {
                    if rng.random_bool(0.02) {
                        next.insert(cui.clone(), Polarity::Positive);
                    }
                }
            }
        }
        stages.push(next);
    }

    // Planted shifts on non-terminal edges.
    for (t, o) in outcomes.iter().enumerate() {
        let shift = model.shift(cluster, t as u32 + 2).expect("validated");
        match o {
            TransitionOutcome::Improve => {
                stages[t].insert(shift.treated.clone(), Polarity::Positive);
                stages[t + 1].insert(shift.treated.clone(), Polarity::Negative);
            }
            TransitionOutcome::Deteriorate => {
                stages[t].insert(shift.emerging.clone(), Polarity::Negative);
                stages[t + 1].insert(shift.emerging.clone(), Polarity::Positive);
            }
            _ => {}
        }
    }

    for (map, &s) in stages.iter_mut().zip(scores) {
        let flag = |on: bool| if on { Polarity::Positive } else { Polarity::Negative };
        map.insert(infection.to_string(), flag(s >= 2));
        map.insert(organ.to_string(), flag(s >= 3));
        map.insert(HYPOTENSION_CUI.to_string(), flag(s >= 4));
        // Fluids without hypotension keep a severe stage below shock.
        let fluids = s >= 4 || (s == 3 && rng.random_bool(0.3));
        map.insert(FLUIDS_CUI.to_string(), flag(fluids));
    }
    PatientPlan { stage_conditions: stages }
}

fn round1(v: f64) -> f64 {
    (v * 10.0).round() / 10.0
}

/// Vitals for one day of a stage with `score`; `abnormal` picks which SIRS
/// criteria are violated.
fn day_vitals<R: Rng + ?Sized>(score: u8, abnormal: &[bool; 4], rng: &mut R) -> Vec<(VitalItem, f64)> {
    let mut v = Vec::new();
    let temp = if abnormal[0] {
        if rng.random_bool(0.8) { rng.random_range(38.4..39.8) } else { rng.random_range(34.8..35.7) }
    } else {
        rng.random_range(36.4..37.6)
    };
    let hr: f64 = if abnormal[1] { rng.random_range(98.0..135.0) } else { rng.random_range(62.0..86.0) };
    let rr: f64 = if abnormal[2] { rng.random_range(22.5..32.0) } else { rng.random_range(12.0..18.5) };
    let wbc = if abnormal[3] {
        if rng.random_bool(0.8) { rng.random_range(12.8..22.0) } else { rng.random_range(1.5..3.5) }
    } else {
        rng.random_range(4.8..10.5)
    };
    let (sbp, map): (f64, f64) = if score >= 4 {
        (rng.random_range(72.0..88.0), rng.random_range(50.0..63.0))
    } else {
        (rng.random_range(105.0..135.0), rng.random_range(72.0..95.0))
    };
    v.push((VitalItem::TempC, round1(temp)));
    v.push((VitalItem::HeartRate, hr.round()));
    v.push((VitalItem::RespRate, rr.round()));
    v.push((VitalItem::Wbc, round1(wbc)));
    v.push((VitalItem::SystolicBp, sbp.round()));
    v.push((VitalItem::MeanArterialPressure, map.round()));
    v
}

fn at(date: NaiveDate, day: u32, hour: u32, minute: u32) -> chrono::DateTime<chrono::Utc> {
    (date + Duration::days(i64::from(day) - 1))
        .and_time(NaiveTime::from_hms_opt(hour, minute, 0).expect("valid time"))
        .and_utc()
}

/// Generates a cohort. Deterministic per seed.
pub fn generate_cohort(cfg: &GeneratorConfig) -> Result<SyntheticCohort> {
    let model = cfg.resolve()?;
    let bank = SurfaceBank::default();
    let n = cfg.n_patients;
    let k = cfg.n_clusters;
    let mut cohort_rng = rng::derived(cfg.seed, 0);
    let clusters = assign_clusters(n, k, cfg.sampling, &mut cohort_rng);
    let outcomes = sample_outcomes(&clusters, &model, cfg.max_stages, cfg.sampling, &mut cohort_rng);

    let epoch = NaiveDate::from_ymd_opt(2101, 1, 1).expect("valid date");
    let width = n.to_string().len().max(4);
    let mut notes = Vec::new();
    let mut vitals = Vec::new();
    let mut demographics = Vec::with_capacity(n);
    let mut patients = Vec::with_capacity(n);

    for i in 0..n {
        let mut r = rng::derived(cfg.seed, 1000 + i as u64);
        let pid = format!("S{:0width$}", i + 1);
        let outs = &outcomes[i];
        let n_stages = outs.len() + 1;
        let los = los_for_stages(n_stages, &mut r);
        let scores = scores_for(outs, &mut r);
        let disposition = match outs.last() {
            Some(TransitionOutcome::Decease) => DispositionStatus::Decease,
            _ => DispositionStatus::Discharge,
        };
        let plan = plan_conditions(clusters[i], &scores, outs, &model, cfg, &mut r);
        let admit = epoch + Duration::days(r.random_range(0..730));
        let ranges = stage_days(los);
        debug_assert_eq!(ranges.len(), n_stages);

        let mut note_no = 0;
        for (s, &(lo, hi)) in ranges.iter().enumerate() {
            let map = &plan.stage_conditions[s];
            let gap = if hi - lo == 2 && r.random_bool(cfg.gap_rate) { Some(lo + 1) } else { None };
            let mut abnormal = [false; 4];
            let n_abnormal = r.random_range(2..=4);
            for j in rand::seq::index::sample(&mut r, 4, n_abnormal) {
                abnormal[j] = true;
            }
            for day in lo..=hi {
                for (hour, minute) in [(6, r.random_range(0..60)), (18, r.random_range(0..60))] {
                    for (item, value) in day_vitals(scores[s], &abnormal, &mut r) {
                        vitals.push(VitalsRecord { patient_id: pid.clone(), chart_time: at(admit, day, hour, minute), item, value });
                    }
                }
                if Some(day) == gap {
                    continue;
                }
                let mut mentions: Vec<(String, Polarity)> = map.iter().map(|(c, p)| (c.clone(), *p)).collect();
                // Symptoms that clear may already read as resolved on the last day.
                if hi > lo && day == hi {
                    for (cui, p) in mentions.iter_mut() {
                        if *p == Polarity::Positive && model.symptom_pool.contains(cui) && r.random_bool(0.1) {
                            let next = plan.stage_conditions.get(s + 1).and_then(|m| m.get(cui));
                            if next != Some(&Polarity::Positive) {
                                *p = Polarity::Negative;
                            }
                        }
                    }
                }
                if r.random_bool(0.03) {
                    mentions.push(("LOCAL".into(), Polarity::Positive));
                }
                let text = render_with_local(&bank, &mentions, &mut r);
                note_no += 1;
                notes.push(ClinicalNote {
                    patient_id: pid.clone(),
                    note_id: format!("{pid}-n{note_no:02}"),
                    category: if r.random_bool(0.85) { NoteCategory::Nursing } else { NoteCategory::Radiology },
                    chart_time: at(admit, day, 8 + r.random_range(0..10), r.random_range(0..60)),
                    text,
                });
            }
        }
        let summary = match disposition {
            DispositionStatus::Discharge => "Discharge summary. Patient discharged home in stable condition.".to_string(),
            DispositionStatus::Decease => format!("Discharge summary. Patient expired on hospital day {los}."),
        };
        note_no += 1;
        notes.push(ClinicalNote {
            patient_id: pid.clone(),
            note_id: format!("{pid}-n{note_no:02}"),
            category: NoteCategory::DischargeSummary,
            chart_time: at(admit, los, 20, r.random_range(0..60)),
            text: summary,
        });

        demographics.push(Demographics {
            patient_id: pid.clone(),
            sex: if r.random_bool(0.55) { Sex::M } else { Sex::F },
            age_years: r.random_range(18..=95),
        });
        patients.push(PatientTruth {
            patient_id: pid,
            cluster: clusters[i],
            los_days: los,
            stage_scores: scores,
            outcomes: outs.clone(),
            disposition,
            stage_conditions: plan.stage_conditions,
        });
    }

    Ok(SyntheticCohort {
        notes,
        vitals,
        demographics,
        truth: GroundTruth {
            seed: cfg.seed,
            n_clusters: k,
            sampling: cfg.sampling,
            cluster_labels: clusters,
            patients,
            planted: model,
        },
    })
}

fn render_with_local<R: Rng + ?Sized>(bank: &SurfaceBank, mentions: &[(String, Polarity)], rng: &mut R) -> String {
    let (local, known): (Vec<_>, Vec<_>) = mentions.iter().cloned().partition(|(c, _)| c == "LOCAL");
    let mut text = render_note(bank, &known, rng);
    if !local.is_empty() {
        text.push_str(" Reports port site tenderness.");
    }
    text
}

pub fn write_notes_jsonl<W: Write>(notes: &[ClinicalNote], mut writer: W) -> Result<()> {
    for n in notes {
        serde_json::to_writer(&mut writer, n)?;
        writer.write_all(b"\n").map_err(|e| Error::io("notes.jsonl", e))?;
    }
    Ok(())
}

pub fn write_vitals_csv<W: Write>(vitals: &[VitalsRecord], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["patient_id", "chart_time", "item", "value"])?;
    for v in vitals {
        w.write_record([
            v.patient_id.as_str(),
            &v.chart_time.to_rfc3339_opts(chrono::SecondsFormat::Secs, true),
            v.item.as_str(),
            &v.value.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io("vitals.csv", e))?;
    Ok(())
}

pub fn write_demographics_jsonl<W: Write>(rows: &[Demographics], mut writer: W) -> Result<()> {
    for d in rows {
        serde_json::to_writer(&mut writer, d)?;
        writer.write_all(b"\n").map_err(|e| Error::io("demographics.jsonl", e))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{assemble_admissions, CohortFilter, DeceasePatterns, NoteCorpus, VitalsCorpus};
    use crate::pathways::label_transitions;
    use crate::pipeline::{admission_severity, admission_stages, structure_admission};
    use crate::timeline::impute_missing;
    use crate::severity::{default_flag_config, SeverityThresholds};
    use crate::textproc::TextResources;

    fn small(n: usize, seed: u64) -> GeneratorConfig {
        GeneratorConfig { n_patients: n, seed, ..Default::default() }
    }

    #[test]
    fn largest_remainder_is_exact() {
        assert_eq!(largest_remainder(&[0.6, 0.3, 0.1], 10), vec![6, 3, 1]);
        assert_eq!(largest_remainder(&[0.5, 0.5], 3), vec![2, 1]);
        assert_eq!(largest_remainder(&[1.0 / 3.0; 3], 100).iter().sum::<usize>(), 100);
    }

    #[test]
    fn scores_stay_on_the_ladder() {
        use TransitionOutcome::*;
        let mut r = rng::seeded(3);
        for _ in 0..200 {
            let s = scores_for(&[Deteriorate, Deteriorate, Deteriorate, Decease], &mut r);
            assert_eq!(s, vec![1, 2, 3, 4, 4]);
            let s = scores_for(&[Improve, Persistent, Discharge], &mut r);
            assert!(s[0] >= 2 && s[1] == s[0] - 1 && s[2] == s[1] && s[3] == s[2]);
        }
    }

    #[test]
    fn stay_lengths_match_stage_counts() {
        let mut r = rng::seeded(4);
        for n_stages in 2..=5 {
            for _ in 0..20 {
                let los = los_for_stages(n_stages, &mut r);
                assert_eq!(stage_ranges(los).unwrap().len(), n_stages, "los {los}");
            }
        }
    }

    #[test]
    fn default_matrices_are_valid() {
        let cfg = GeneratorConfig::default();
        let model = cfg.resolve().unwrap();
        assert_eq!(model.transitions.len(), 4 * 4);
        assert!(GeneratorConfig { n_clusters: 0, ..Default::default() }.resolve().is_err());
        assert!(GeneratorConfig { n_clusters: 7, ..Default::default() }.resolve().is_err());
    }

    #[test]
    fn single_patient_three_days() {
        // Start row forced to Discharge so the stay has two stages.
        let mut transitions = default_transitions(1, 2);
        transitions[0].rows[0].probabilities = BTreeMap::from([(TransitionOutcome::Discharge, 1.0)]);
        let cfg = GeneratorConfig { n_patients: 1, n_clusters: 1, max_stages: 2, transitions: Some(transitions), ..Default::default() };
        let mut seed = 0;
        let cohort = loop {
            let c = generate_cohort(&GeneratorConfig { seed, ..cfg.clone() }).unwrap();
            if c.truth.patients[0].los_days == 3 {
                break c;
            }
            seed += 1;
        };
        let days: BTreeSet<_> = cohort.notes.iter().map(|n| n.chart_time.date_naive()).collect();
        assert_eq!(days.len(), 3);
        let summaries = cohort.notes.iter().filter(|n| n.category == NoteCategory::DischargeSummary).count();
        assert_eq!(summaries, 1);
    }

    #[test]
    fn deterministic_bytes() {
        let bytes = |c: &SyntheticCohort| {
            let mut a = Vec::new();
            write_notes_jsonl(&c.notes, &mut a).unwrap();
            write_vitals_csv(&c.vitals, &mut a).unwrap();
            write_demographics_jsonl(&c.demographics, &mut a).unwrap();
            a.extend(ground_truth_report(&c.truth).unwrap().into_bytes());
            a
        };
        let a = generate_cohort(&small(30, 5)).unwrap();
        let b = generate_cohort(&small(30, 5)).unwrap();
        assert_eq!(bytes(&a), bytes(&b));
        let c = generate_cohort(&small(30, 6)).unwrap();
        assert_ne!(bytes(&a), bytes(&c));
    }

    #[test]
    fn ground_truth_round_trips() {
        let c = generate_cohort(&small(20, 8)).unwrap();
        let json = ground_truth_report(&c.truth).unwrap();
        let back: GroundTruth = serde_json::from_str(&json).unwrap();
        assert_eq!(back, c.truth);
        assert_eq!(back.cluster_labels.len(), 20);
    }

    #[test]
    fn quota_counters_track_planted_rows() {
        let c = generate_cohort(&small(2000, 9)).unwrap();
        for m in c.truth.empirical_transitions() {
            let planted = c.truth.planted_matrix(m.subgroup, m.stage).unwrap();
            for row in m.rows.iter().filter(|r| r.total > 0) {
                let p = planted.row(row.from).unwrap();
                for o in TransitionOutcome::KNOWN {
                    let want = p.probabilities.get(&o).copied().unwrap_or(0.0);
                    let got = row.probabilities.get(&o).copied().unwrap_or(0.0);
                    assert!((want - got).abs() <= 1.0 / row.total as f64 + 1e-12, "{m:?}");
                }
            }
        }
    }

    #[test]
    fn iid_counters_converge_on_large_rows() {
        let cfg = GeneratorConfig { sampling: Sampling::Iid, ..small(2000, 10) };
        let c = generate_cohort(&cfg).unwrap();
        for m in c.truth.empirical_transitions().iter().filter(|m| m.stage == 2) {
            let planted = c.truth.planted_matrix(m.subgroup, 2).unwrap();
            let row = m.row(FromState::Start).unwrap();
            for (o, p) in &planted.row(FromState::Start).unwrap().probabilities {
                assert!((row.probabilities.get(o).copied().unwrap_or(0.0) - p).abs() <= 0.05);
            }
        }
    }

    #[test]
    fn custom_row_frequencies_under_iid_draws() {
        let mut transitions = default_transitions(1, 3);
        transitions[0].rows[0].probabilities = BTreeMap::from([
            (TransitionOutcome::Improve, 0.6),
            (TransitionOutcome::Persistent, 0.3),
            (TransitionOutcome::Deteriorate, 0.1),
        ]);
        let cfg = GeneratorConfig {
            n_clusters: 1,
            max_stages: 3,
            sampling: Sampling::Iid,
            transitions: Some(transitions),
            ..small(2000, 14)
        };
        let c = generate_cohort(&cfg).unwrap();
        let m = c.truth.empirical_transitions().into_iter().find(|m| m.stage == 2).unwrap();
        let row = m.row(FromState::Start).unwrap();
        assert_eq!(row.total, 2000);
        for (o, want) in [(TransitionOutcome::Improve, 0.6), (TransitionOutcome::Persistent, 0.3), (TransitionOutcome::Deteriorate, 0.1)] {
            assert!((row.probabilities[&o] - want).abs() <= 0.05);
        }
    }

    #[test]
    fn rejects_non_stochastic_rows() {
        let mut transitions = default_transitions(4, 5);
        transitions[0].rows[0].probabilities.insert(TransitionOutcome::Discharge, 0.5);
        let cfg = GeneratorConfig { transitions: Some(transitions), ..Default::default() };
        assert!(matches!(cfg.resolve(), Err(Error::GeneratorConfig(_))));
        let mut transitions = default_transitions(4, 5);
        let last = transitions.iter_mut().find(|m| m.stage == 5).unwrap();
        last.rows[0].probabilities = BTreeMap::from([(TransitionOutcome::Improve, 1.0)]);
        let cfg = GeneratorConfig { transitions: Some(transitions), ..Default::default() };
        assert!(cfg.resolve().is_err());
    }

    #[test]
    fn pipeline_recovers_planted_severity() {
        let c = generate_cohort(&small(80, 12)).unwrap();
        let notes = NoteCorpus::from_notes(c.notes.clone());
        let vitals = VitalsCorpus::from_records(c.vitals.clone());
        let cohort = assemble_admissions(&notes, &vitals, &BTreeMap::new(), &DeceasePatterns::default(), &CohortFilter::default());
        assert_eq!(cohort.admissions.len(), 80);
        let res = TextResources::default();
        let flags = default_flag_config();
        let th = SeverityThresholds::default();
        let (mut agree, mut total) = (0, 0);
        for (adm, truth) in cohort.admissions.iter().zip(&c.truth.patients) {
            assert_eq!(adm.patient_id, truth.patient_id);
            assert_eq!(adm.los_days, truth.los_days);
            let (series, tl) = admission_severity(adm, &res, &flags, &th).unwrap();
            let (daily, _) = admission_stages(adm, &structure_admission(adm, &res)).unwrap();
            assert_eq!(impute_missing(&daily), daily);
            assert_eq!(series.stages.len(), truth.stage_scores.len());
            for (s, &want) in tl.stages.iter().zip(&truth.stage_scores) {
                total += 1;
                agree += usize::from(s.state.score() == Some(want));
            }
            assert_eq!(label_transitions(&tl), truth.outcomes, "{}", truth.patient_id);
            // Planted shifts survive text processing and imputation.
            for (t, o) in truth.outcomes.iter().enumerate() {
                let shift = c.truth.planted.shift(truth.cluster, t as u32 + 2).unwrap();
                let before = &series.stages[t].conditions;
                let after = &series.stages[t + 1].conditions;
                if *o == TransitionOutcome::Improve {
                    assert_eq!(before.get(&shift.treated), Some(&Polarity::Positive));
                    assert_ne!(after.get(&shift.treated), Some(&Polarity::Positive));
                }
                if *o == TransitionOutcome::Deteriorate {
                    assert_ne!(before.get(&shift.emerging), Some(&Polarity::Positive));
                    assert_eq!(after.get(&shift.emerging), Some(&Polarity::Positive));
                }
            }
        }
        assert_eq!(agree, total);
    }
}
