//! Day alignment, missing-day imputation and stage segmentation.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::corpus::Disposition;
use crate::error::{Error, Result};
use crate::textproc::{merge_into, Polarity, StructuredNote};

pub type ConditionMap = BTreeMap<String, Polarity>;

/// Per-day condition maps for one stay; `days[0]` is day 1.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DailyConditionMap {
    pub patient_id: String,
    pub days: Vec<ConditionMap>,
}

impl DailyConditionMap {
    pub fn los(&self) -> u32 {
        self.days.len() as u32
    }

    pub fn day(&self, d: u32) -> &ConditionMap {
        &self.days[(d - 1) as usize]
    }

    pub fn cuis(&self) -> BTreeSet<&str> {
        self.days
            .iter()
            .flat_map(|m| m.keys().map(String::as_str))
            .collect()
    }
}

/// Union of note concepts per day under positive-wins. Notes dated outside
/// `1..=los` are ignored.
pub fn align_days(patient_id: &str, los: u32, notes: &[StructuredNote]) -> DailyConditionMap {
    let mut days = vec![ConditionMap::new(); los as usize];
    for note in notes {
        if note.day_index < 1 || note.day_index > los as i64 {
            log::debug!(
                "note {} on day {} lies outside 1..={los}",
                note.note_id,
                note.day_index
            );
            continue;
        }
        let day = &mut days[(note.day_index - 1) as usize];
        for (cui, &polarity) in &note.concepts {
            merge_into(day, cui, polarity);
        }
    }
    DailyConditionMap {
        patient_id: patient_id.to_string(),
        days,
    }
}

/// Fills gaps in one concept's day sequence.
///
/// Pass A looks only at single-day gaps between two recorded neighbours:
/// P _ P and P _ N become P, N _ N becomes N. N _ P stays unset. Pass B
/// marks every unset day after the first Negative that is followed by no
/// Positive as Negative. Recorded values are never changed.
pub fn impute_sequence(seq: &[Option<Polarity>]) -> Vec<Option<Polarity>> {
    use Polarity::{Negative, Positive};
    let mut out = seq.to_vec();
    for n in 1..seq.len().saturating_sub(1) {
        if seq[n].is_some() {
            continue;
        }
        out[n] = match (seq[n - 1], seq[n + 1]) {
            (Some(Positive), Some(Positive)) => Some(Positive),
            (Some(Negative), Some(Negative)) => Some(Negative),
            (Some(Positive), Some(Negative)) => Some(Positive),
            _ => None,
        };
    }
    let after_last_positive = out
        .iter()
        .rposition(|p| *p == Some(Positive))
        .map_or(0, |i| i + 1);
    if let Some(first_neg) = out[after_last_positive..]
        .iter()
        .position(|p| *p == Some(Negative))
    {
        for slot in &mut out[after_last_positive + first_neg + 1..] {
            slot.get_or_insert(Negative);
        }
    }
    out
}

pub fn impute_missing(map: &DailyConditionMap) -> DailyConditionMap {
    let mut days = map.days.clone();
    for cui in map.cuis() {
        let seq: Vec<Option<Polarity>> = map.days.iter().map(|d| d.get(cui).copied()).collect();
        for (day, value) in days.iter_mut().zip(impute_sequence(&seq)) {
            if let Some(p) = value {
                day.entry(cui.to_string()).or_insert(p);
            }
        }
    }
    DailyConditionMap {
        patient_id: map.patient_id.clone(),
        days,
    }
}

/// Inclusive day ranges of each stage for a stay of `los` days.
///
/// Stage 1 is days 1–2, the last stage is the discharge day alone and the
/// days between are cut into 3-day windows (the last may be shorter). A
/// two-day stay has no room for both, so it becomes [1,1], [2,2].
pub fn stage_ranges(los: u32) -> Result<Vec<(u32, u32)>> {
    match los {
        0 | 1 => Err(Error::InvalidInput(format!(
            "length of stay {los} is too short to segment"
        ))),
        2 => Ok(vec![(1, 1), (2, 2)]),
        _ => {
            let mut ranges = vec![(1, 2)];
            let mut start = 3;
            while start < los {
                let end = (start + 2).min(los - 1);
                ranges.push((start, end));
                start = end + 1;
            }
            ranges.push((los, los));
            Ok(ranges)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Stage {
    /// 1-based stage index.
    pub index: u32,
    pub day_range: (u32, u32),
    pub conditions: ConditionMap,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageSeries {
    pub patient_id: String,
    pub stages: Vec<Stage>,
    pub disposition: Option<Disposition>,
}

pub fn segment_stages(
    map: &DailyConditionMap,
    disposition: Option<&Disposition>,
) -> Result<StageSeries> {
    let ranges = stage_ranges(map.los()).map_err(|e| match e {
        Error::InvalidInput(msg) => Error::InvalidInput(format!("{}: {msg}", map.patient_id)),
        other => other,
    })?;
    let stages = ranges
        .into_iter()
        .enumerate()
        .map(|(i, (a, b))| {
            let mut conditions = ConditionMap::new();
            for d in a..=b {
                for (cui, &p) in map.day(d) {
                    merge_into(&mut conditions, cui, p);
                }
            }
            Stage {
                index: i as u32 + 1,
                day_range: (a, b),
                conditions,
            }
        })
        .collect();
    Ok(StageSeries {
        patient_id: map.patient_id.clone(),
        stages,
        disposition: disposition.cloned(),
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageRecord {
    pub patient_id: String,
    pub stage: u32,
    pub day_range: [u32; 2],
    pub positives: Vec<String>,
    pub negatives: Vec<String>,
}

impl StageRecord {
    pub fn from_stage(patient_id: &str, stage: &Stage) -> Self {
        let pick = |want: Polarity| {
            stage
                .conditions
                .iter()
                .filter(|(_, &p)| p == want)
                .map(|(c, _)| c.clone())
                .collect()
        };
        Self {
            patient_id: patient_id.to_string(),
            stage: stage.index,
            day_range: [stage.day_range.0, stage.day_range.1],
            positives: pick(Polarity::Positive),
            negatives: pick(Polarity::Negative),
        }
    }
}

/// One JSON line per patient stage.
pub fn write_stages_jsonl<W: Write>(series: &[StageSeries], mut writer: W) -> Result<()> {
    for s in series {
        for stage in &s.stages {
            serde_json::to_writer(&mut writer, &StageRecord::from_stage(&s.patient_id, stage))?;
            writer
                .write_all(b"\n")
                .map_err(|e| Error::io("stages.jsonl", e))?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use Polarity::{Negative as N, Positive as P};

    fn snote(day: i64, concepts: &[(&str, Polarity)]) -> StructuredNote {
        StructuredNote {
            patient_id: "p".into(),
            note_id: format!("n{day}"),
            day_index: day,
            concepts: concepts.iter().map(|(c, p)| (c.to_string(), *p)).collect(),
        }
    }

    fn daily(per_day: &[&[(&str, Polarity)]]) -> DailyConditionMap {
        DailyConditionMap {
            patient_id: "p".into(),
            days: per_day
                .iter()
                .map(|d| d.iter().map(|(c, p)| (c.to_string(), *p)).collect())
                .collect(),
        }
    }

    #[test]
    fn align_unions_and_resolves_conflicts() {
        let notes = [
            snote(1, &[("a", P)]),
            snote(1, &[("b", N)]),
            snote(2, &[("a", N)]),
            snote(2, &[("a", P)]),
            snote(9, &[("z", P)]),
        ];
        let m = align_days("p", 4, &notes);
        assert_eq!(m.days.len(), 4);
        assert_eq!(m.day(1).len(), 2);
        assert_eq!(m.day(2)["a"], P);
        assert!(m.day(3).is_empty());
    }

    #[test]
    fn rule_one_fills_between_positives() {
        assert_eq!(impute_sequence(&[Some(P), None, Some(P)]), [Some(P); 3]);
    }

    #[test]
    fn rule_two_fills_between_negatives() {
        assert_eq!(impute_sequence(&[Some(N), None, Some(N)]), [Some(N); 3]);
    }

    #[test]
    fn rule_three_assumes_positive() {
        assert_eq!(
            impute_sequence(&[Some(P), None, Some(N)]),
            [Some(P), Some(P), Some(N)]
        );
    }

    #[test]
    fn mirror_of_rule_three_stays_unset() {
        assert_eq!(
            impute_sequence(&[Some(N), None, Some(P)]),
            [Some(N), None, Some(P)]
        );
    }

    #[test]
    fn rule_four_forward_fills_negative() {
        assert_eq!(
            impute_sequence(&[None, Some(N), None, None, None]),
            [None, Some(N), Some(N), Some(N), Some(N)]
        );
        // A later positive blocks the fill before it.
        assert_eq!(
            impute_sequence(&[Some(N), None, None, Some(P), None]),
            [Some(N), None, None, Some(P), None]
        );
    }

    #[test]
    fn long_gaps_are_not_bridged() {
        assert_eq!(
            impute_sequence(&[Some(P), None, None, Some(P)]),
            [Some(P), None, None, Some(P)]
        );
    }

    #[test]
    fn imputation_examples_on_maps() {
        let m = daily(&[
            &[("fever", P), ("uti", P)],
            &[],
            &[("fever", P), ("uti", N)],
        ]);
        let out = impute_missing(&m);
        assert_eq!(out.day(2)["fever"], P);
        assert_eq!(out.day(2)["uti"], P);

        let m = daily(&[&[], &[("edema", N)], &[], &[], &[]]);
        let out = impute_missing(&m);
        for d in 3..=5 {
            assert_eq!(out.day(d)["edema"], N);
        }
        assert!(out.day(1).is_empty());
    }

    #[test]
    fn known_segmentations() {
        assert_eq!(
            stage_ranges(12).unwrap(),
            [(1, 2), (3, 5), (6, 8), (9, 11), (12, 12)]
        );
        assert_eq!(stage_ranges(3).unwrap(), [(1, 2), (3, 3)]);
        assert_eq!(stage_ranges(2).unwrap(), [(1, 1), (2, 2)]);
        assert_eq!(stage_ranges(30).unwrap().len(), 11);
        assert_eq!(stage_ranges(5).unwrap(), [(1, 2), (3, 4), (5, 5)]);
        assert!(stage_ranges(1).is_err());
    }

    #[test]
    fn stage_maps_fold_days() {
        let m = daily(&[&[("a", N)], &[("a", P)], &[("b", N)]]);
        let s = segment_stages(&m, None).unwrap();
        assert_eq!(s.stages.len(), 2);
        assert_eq!(s.stages[0].conditions["a"], P);
        assert_eq!(s.stages[1].conditions["b"], N);
        let mut buf = Vec::new();
        write_stages_jsonl(&[s], &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 2);
        assert!(text.starts_with(r#"{"patient_id":"p","stage":1,"day_range":[1,2],"positives":["a"],"negatives":[]}"#));
    }

    fn polarity() -> impl Strategy<Value = Option<Polarity>> {
        prop_oneof![Just(None), Just(Some(P)), Just(Some(N))]
    }

    proptest! {
        #[test]
        fn imputation_is_idempotent_and_keeps_records(seq in prop::collection::vec(polarity(), 0..20)) {
            let once = impute_sequence(&seq);
            prop_assert_eq!(impute_sequence(&once), once.clone());
            for (a, b) in seq.iter().zip(&once) {
                if a.is_some() {
                    prop_assert_eq!(a, b);
                }
            }
        }

        #[test]
        fn stages_partition_the_stay(los in 2u32..200) {
            let r = stage_ranges(los).unwrap();
            prop_assert_eq!(r[0].0, 1);
            prop_assert_eq!(*r.last().unwrap(), (los, los));
            for w in r.windows(2) {
                prop_assert_eq!(w[1].0, w[0].1 + 1);
            }
            for (i, (a, b)) in r.iter().enumerate() {
                prop_assert!(a <= b);
                if i > 0 && i + 1 < r.len() {
                    prop_assert!(b - a < 3);
                }
            }
        }

        #[test]
        fn stage_polarity_is_a_positive_wins_fold(
            days in prop::collection::vec(prop::collection::vec((0u8..4, prop::bool::ANY), 0..4), 2..15)
        ) {
            let map = DailyConditionMap {
                patient_id: "p".into(),
                days: days.iter().map(|d| {
                    let mut m = ConditionMap::new();
                    for (c, pos) in d {
                        m.insert(format!("c{c}"), if *pos { P } else { N });
                    }
                    m
                }).collect(),
            };
            let s = segment_stages(&map, None).unwrap();
            for stage in &s.stages {
                for c in 0u8..4 {
                    let cui = format!("c{c}");
                    let vals: Vec<Polarity> = (stage.day_range.0..=stage.day_range.1)
                        .filter_map(|d| map.day(d).get(&cui).copied())
                        .collect();
                    let expected = if vals.is_empty() {
                        None
                    } else if vals.contains(&P) {
                        Some(P)
                    } else {
                        Some(N)
                    };
                    prop_assert_eq!(stage.conditions.get(&cui).copied(), expected);
                }
            }
        }
    }
}
