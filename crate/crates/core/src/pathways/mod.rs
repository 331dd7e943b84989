//! Stage-to-stage outcomes, per-subgroup transition networks and their
//! treated/emerging disease annotations.

mod export;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use export::{
    edge_color, export_network, network_documents, write_stage2_heatmap_csv, EdgeColor,
    NetworkDocument, NetworkEdge, NetworkFormat, NetworkNode,
};

use crate::corpus::DispositionStatus;
use crate::severity::SeverityTimeline;
use crate::textproc::Polarity;
use crate::timeline::ConditionMap;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum TransitionOutcome {
    Discharge,
    Improve,
    Persistent,
    Deteriorate,
    Decease,
    Unknown,
}

impl TransitionOutcome {
    pub const ALL: [TransitionOutcome; 6] = [
        TransitionOutcome::Discharge,
        TransitionOutcome::Improve,
        TransitionOutcome::Persistent,
        TransitionOutcome::Deteriorate,
        TransitionOutcome::Decease,
        TransitionOutcome::Unknown,
    ];

    /// Everything except Unknown.
    pub const KNOWN: [TransitionOutcome; 5] = [
        TransitionOutcome::Discharge,
        TransitionOutcome::Improve,
        TransitionOutcome::Persistent,
        TransitionOutcome::Deteriorate,
        TransitionOutcome::Decease,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            TransitionOutcome::Discharge => "Discharge",
            TransitionOutcome::Improve => "Improve",
            TransitionOutcome::Persistent => "Persistent",
            TransitionOutcome::Deteriorate => "Deteriorate",
            TransitionOutcome::Decease => "Decease",
            TransitionOutcome::Unknown => "Unknown",
        }
    }

    pub fn is_terminal(self) -> bool {
        matches!(self, TransitionOutcome::Discharge | TransitionOutcome::Decease)
    }
}

impl fmt::Display for TransitionOutcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TransitionOutcome {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        TransitionOutcome::ALL
            .into_iter()
            .find(|o| o.as_str() == s)
            .ok_or_else(|| format!("unknown outcome {s:?}"))
    }
}

/// Outcome of one boundary from the two stage scores and, when the stay
/// ends at the later stage, the disposition.
pub fn transition_outcome(
    score: Option<u8>,
    next_score: Option<u8>,
    ends_with: Option<DispositionStatus>,
) -> TransitionOutcome {
    match ends_with {
        Some(DispositionStatus::Discharge) => return TransitionOutcome::Discharge,
        Some(DispositionStatus::Decease) => return TransitionOutcome::Decease,
        None => {}
    }
    match (score, next_score) {
        (Some(a), Some(b)) if b < a => TransitionOutcome::Improve,
        (Some(a), Some(b)) if b == a => TransitionOutcome::Persistent,
        (Some(_), Some(_)) => TransitionOutcome::Deteriorate,
        _ => TransitionOutcome::Unknown,
    }
}

/// One outcome per boundary; entry `t` covers stage `t+1` → `t+2`.
pub fn label_transitions(timeline: &SeverityTimeline) -> Vec<TransitionOutcome> {
    let n = timeline.stages.len();
    let status = timeline.disposition.as_ref().map(|d| d.status);
    (0..n.saturating_sub(1))
        .map(|t| {
            let ends = if t + 2 == n { status } else { None };
            transition_outcome(
                timeline.stages[t].state.score(),
                timeline.stages[t + 1].state.score(),
                ends,
            )
        })
        .collect()
}

/// Conditioning state of a transition row.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum FromState {
    /// Virtual source for the first boundary.
    Start,
    Improve,
    Persistent,
    Deteriorate,
}

impl FromState {
    pub fn of(outcome: TransitionOutcome) -> Option<Self> {
        match outcome {
            TransitionOutcome::Improve => Some(FromState::Improve),
            TransitionOutcome::Persistent => Some(FromState::Persistent),
            TransitionOutcome::Deteriorate => Some(FromState::Deteriorate),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            FromState::Start => "Start",
            FromState::Improve => "Improve",
            FromState::Persistent => "Persistent",
            FromState::Deteriorate => "Deteriorate",
        }
    }
}

impl fmt::Display for FromState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutcomeSequence {
    pub patient_id: String,
    pub outcomes: Vec<TransitionOutcome>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransitionRow {
    pub from: FromState,
    /// Patients in `from` with a known next outcome.
    pub total: u64,
    /// Patients in `from` whose next outcome is Unknown.
    pub unknown: u64,
    pub counts: BTreeMap<TransitionOutcome, u64>,
    /// Empty when `total` is zero.
    pub probabilities: BTreeMap<TransitionOutcome, f64>,
}

/// Transitions into stage `stage` (≥ 2) for one subgroup.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransitionMatrix {
    pub subgroup: usize,
    pub stage: u32,
    pub rows: Vec<TransitionRow>,
}

impl TransitionMatrix {
    pub fn row(&self, from: FromState) -> Option<&TransitionRow> {
        self.rows.iter().find(|r| r.from == from)
    }

    pub fn probability(&self, from: FromState, to: TransitionOutcome) -> f64 {
        self.row(from)
            .and_then(|r| r.probabilities.get(&to).copied())
            .unwrap_or(0.0)
    }
}

/// Source state of each boundary: Start for the first, then the previous
/// outcome. `None` once the previous outcome is Unknown or terminal.
fn sources(outcomes: &[TransitionOutcome]) -> impl Iterator<Item = (usize, Option<FromState>)> + '_ {
    (0..outcomes.len()).map(move |t| {
        let from = if t == 0 {
            Some(FromState::Start)
        } else {
            FromState::of(outcomes[t - 1])
        };
        (t, from)
    })
}

/// Maximum-likelihood transition probabilities per (subgroup, stage).
/// Unknown outcomes are left out of numerators and denominators; patients
/// without a subgroup are ignored.
pub fn estimate_transitions(
    sequences: &[OutcomeSequence],
    subgroups: &BTreeMap<String, usize>,
) -> Vec<TransitionMatrix> {
    let mut counts: BTreeMap<(usize, u32, FromState), (u64, BTreeMap<TransitionOutcome, u64>)> =
        BTreeMap::new();
    let mut max_stage: BTreeMap<usize, u32> = BTreeMap::new();
    for seq in sequences {
        let Some(&g) = subgroups.get(&seq.patient_id) else {
            continue;
        };
        if !seq.outcomes.is_empty() {
            let last = seq.outcomes.len() as u32 + 1;
            let m = max_stage.entry(g).or_insert(2);
            *m = (*m).max(last);
        }
        for (t, from) in sources(&seq.outcomes) {
            let Some(from) = from else { continue };
            let entry = counts.entry((g, t as u32 + 2, from)).or_default();
            match seq.outcomes[t] {
                TransitionOutcome::Unknown => entry.0 += 1,
                o => *entry.1.entry(o).or_insert(0) += 1,
            }
        }
    }

    let mut out = Vec::new();
    for (&g, &last) in &max_stage {
        for stage in 2..=last {
            let froms: &[FromState] = if stage == 2 {
                &[FromState::Start]
            } else {
                &[FromState::Improve, FromState::Persistent, FromState::Deteriorate]
            };
            let rows = froms
                .iter()
                .map(|&from| {
                    let (unknown, c) = counts.remove(&(g, stage, from)).unwrap_or_default();
                    let total: u64 = c.values().sum();
                    let probabilities = if total == 0 {
                        BTreeMap::new()
                    } else {
                        c.iter().map(|(&o, &n)| (o, n as f64 / total as f64)).collect()
                    };
                    TransitionRow { from, total, unknown, counts: c, probabilities }
                })
                .collect();
            out.push(TransitionMatrix { subgroup: g, stage, rows });
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stage2Distribution {
    pub subgroup: usize,
    pub n_patients: u64,
    /// Empty for a subgroup with no known first-boundary outcome.
    pub probabilities: BTreeMap<TransitionOutcome, f64>,
}

/// Distribution of first-boundary outcomes per subgroup, Unknown excluded.
/// Every subgroup label in `subgroups` gets a row.
pub fn stage2_distribution(
    sequences: &[OutcomeSequence],
    subgroups: &BTreeMap<String, usize>,
) -> Vec<Stage2Distribution> {
    let labels: BTreeSet<usize> = subgroups.values().copied().collect();
    let mut counts: BTreeMap<usize, BTreeMap<TransitionOutcome, u64>> =
        labels.iter().map(|&g| (g, BTreeMap::new())).collect();
    for seq in sequences {
        let (Some(g), Some(&first)) = (subgroups.get(&seq.patient_id), seq.outcomes.first()) else {
            continue;
        };
        if first != TransitionOutcome::Unknown {
            *counts.entry(*g).or_default().entry(first).or_insert(0) += 1;
        }
    }
    counts
        .into_iter()
        .map(|(subgroup, c)| {
            let n: u64 = c.values().sum();
            Stage2Distribution {
                subgroup,
                n_patients: n,
                probabilities: c.into_iter().map(|(o, k)| (o, k as f64 / n as f64)).collect(),
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionShift {
    pub cui: String,
    pub fraction: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TransitionAnnotation {
    pub treated: Vec<ConditionShift>,
    pub emerging: Vec<ConditionShift>,
}

fn positive(map: &ConditionMap, cui: &str) -> bool {
    map.get(cui) == Some(&Polarity::Positive)
}

/// Treated: Positive before, Negative or absent after. Emerging: the
/// reverse. Ranked by fraction of edge patients, ties by CUI.
pub fn annotate_transition(
    edge: &[(&ConditionMap, &ConditionMap)],
    top_m: usize,
) -> TransitionAnnotation {
    if edge.is_empty() {
        return TransitionAnnotation::default();
    }
    let mut treated: BTreeMap<&str, usize> = BTreeMap::new();
    let mut emerging: BTreeMap<&str, usize> = BTreeMap::new();
    for (prev, next) in edge {
        let cuis: BTreeSet<&str> = prev.keys().chain(next.keys()).map(String::as_str).collect();
        for cui in cuis {
            match (positive(prev, cui), positive(next, cui)) {
                (true, false) => *treated.entry(cui).or_insert(0) += 1,
                (false, true) => *emerging.entry(cui).or_insert(0) += 1,
                _ => {}
            }
        }
    }
    let rank = |m: BTreeMap<&str, usize>| {
        let mut v: Vec<(&str, usize)> = m.into_iter().collect();
        // BTreeMap order already sorts by CUI; a stable sort keeps it for ties.
        v.sort_by(|a, b| b.1.cmp(&a.1));
        v.into_iter()
            .take(top_m)
            .map(|(cui, n)| ConditionShift {
                cui: cui.to_string(),
                fraction: n as f64 / edge.len() as f64,
            })
            .collect()
    };
    TransitionAnnotation {
        treated: rank(treated),
        emerging: rank(emerging),
    }
}

/// Everything the network builder needs about one patient.
#[derive(Debug, Clone, Copy)]
pub struct PatientPath<'a> {
    pub subgroup: usize,
    pub outcomes: &'a [TransitionOutcome],
    /// Stage condition maps, index 0 is stage 1.
    pub stages: &'a [ConditionMap],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EdgeAnnotation {
    pub subgroup: usize,
    pub stage: u32,
    pub from: FromState,
    pub to: TransitionOutcome,
    pub n_patients: usize,
    pub annotation: TransitionAnnotation,
}

/// Annotates every observed edge except those into Discharge, Decease or
/// Unknown.
pub fn annotate_edges(paths: &[PatientPath<'_>], top_m: usize) -> Vec<EdgeAnnotation> {
    type Key = (usize, u32, FromState, TransitionOutcome);
    let mut edges: BTreeMap<Key, Vec<(&ConditionMap, &ConditionMap)>> = BTreeMap::new();
    for p in paths {
        for (t, from) in sources(p.outcomes) {
            let to = p.outcomes[t];
            let Some(from) = from else { continue };
            if to.is_terminal() || to == TransitionOutcome::Unknown || t + 1 >= p.stages.len() {
                continue;
            }
            edges
                .entry((p.subgroup, t as u32 + 2, from, to))
                .or_default()
                .push((&p.stages[t], &p.stages[t + 1]));
        }
    }
    edges
        .into_iter()
        .map(|((subgroup, stage, from, to), pairs)| EdgeAnnotation {
            subgroup,
            stage,
            from,
            to,
            n_patients: pairs.len(),
            annotation: annotate_transition(&pairs, top_m),
        })
        .collect()
}
