//! Text-to-network runs over generated cohorts, checked against the
//! generator's planted truth.

use std::collections::BTreeMap;

use sepsis_core::corpus::{assemble_admissions, CohortFilter, DeceasePatterns, NoteCorpus, VitalsCorpus};
use sepsis_core::pathways::{
    annotate_edges, estimate_transitions, label_transitions, OutcomeSequence, PatientPath, TransitionOutcome,
};
use sepsis_core::pipeline::admission_severity;
use sepsis_core::predict::{state_ablation, train_subgroup_classifier, StateClassifierConfig, SubgroupClassifierConfig};
use sepsis_core::severity::{default_flag_config, SeverityThresholds};
use sepsis_core::subgroups::{adjusted_rand_index, select_k, KMeansConfig};
use sepsis_core::synth::{generate_cohort, GeneratorConfig, SyntheticCohort};
use sepsis_core::textproc::TextResources;
use sepsis_core::timeline::{ConditionMap, StageSeries};
use sepsis_core::vectors::{build_vocabulary, encode_all, stage_vectors, train_autoencoder, AutoencoderConfig};

struct Run {
    series: Vec<StageSeries>,
    outcomes: Vec<Vec<TransitionOutcome>>,
}

fn run(c: &SyntheticCohort) -> Run {
    let cohort = assemble_admissions(
        &NoteCorpus::from_notes(c.notes.clone()),
        &VitalsCorpus::from_records(c.vitals.clone()),
        &BTreeMap::new(),
        &DeceasePatterns::default(),
        &CohortFilter::default(),
    );
    assert!(cohort.excluded.is_empty());
    let res = TextResources::default();
    let flags = default_flag_config();
    let th = SeverityThresholds::default();
    let mut series = Vec::new();
    let mut outcomes = Vec::new();
    for adm in &cohort.admissions {
        let (s, tl) = admission_severity(adm, &res, &flags, &th).unwrap();
        outcomes.push(label_transitions(&tl));
        series.push(s);
    }
    Run { series, outcomes }
}

#[test]
fn subgroups_and_classifiers_recover_planted_clusters() {
    let c = generate_cohort(&GeneratorConfig { n_patients: 400, ..Default::default() }).unwrap();
    let r = run(&c);
    let vocab = build_vocabulary(&r.series).unwrap();
    let tv = stage_vectors(&r.series, &vocab).unwrap();
    let all: Vec<Vec<f64>> = tv.iter().map(|v| v.to_dense()).collect();
    let ae = train_autoencoder(&all, &AutoencoderConfig::default()).unwrap();
    assert!(ae.final_loss().unwrap() < ae.loss_curve[0]);

    let stage1: Vec<_> = tv.into_iter().filter(|v| v.stage == 1).collect();
    let x: Vec<Vec<f64>> = encode_all(&ae, &stage1).unwrap().into_iter().map(|d| d.values).collect();
    let (report, fits) = select_k(&x, 2..=12, 7, &KMeansConfig::default()).unwrap();
    assert_eq!(report.best_k, 4);
    let labels = &fits.iter().find(|f| f.k == 4).unwrap().labels;
    assert!(adjusted_rand_index(labels, &c.truth.cluster_labels) >= 0.9);

    let ternary: Vec<Vec<f64>> = stage1.iter().map(|v| v.to_dense()).collect();
    let clf = train_subgroup_classifier(&ternary, labels, 4, &SubgroupClassifierConfig::default()).unwrap();
    assert!(clf.evaluation.accuracy >= 0.85);

    let first: Vec<TransitionOutcome> = r.outcomes.iter().map(|o| o[0]).collect();
    let ab = state_ablation(&ternary, &first, labels, 4, &StateClassifierConfig::default()).unwrap();
    assert!(ab.with_subgroup.evaluation.accuracy >= ab.without_subgroup.evaluation.accuracy - 0.02);
}

#[test]
fn planted_shifts_top_the_edge_annotations() {
    let c = generate_cohort(&GeneratorConfig { n_patients: 600, seed: 21, ..Default::default() }).unwrap();
    let r = run(&c);
    let stage_maps: Vec<Vec<ConditionMap>> = r
        .series
        .iter()
        .map(|s| s.stages.iter().map(|st| st.conditions.clone()).collect())
        .collect();
    let paths: Vec<PatientPath> = c
        .truth
        .patients
        .iter()
        .enumerate()
        .map(|(i, p)| PatientPath { subgroup: p.cluster, outcomes: &r.outcomes[i], stages: &stage_maps[i] })
        .collect();
    let mut checked = 0;
    for edge in annotate_edges(&paths, 2).iter().filter(|e| e.n_patients >= 20) {
        let shift = c.truth.planted.shift(edge.subgroup, edge.stage).unwrap();
        match edge.to {
            TransitionOutcome::Improve => {
                assert_eq!(edge.annotation.treated[0].cui, shift.treated, "{edge:?}");
                assert_eq!(edge.annotation.treated[0].fraction, 1.0);
                checked += 1;
            }
            TransitionOutcome::Deteriorate => {
                assert_eq!(edge.annotation.emerging[0].cui, shift.emerging, "{edge:?}");
                assert_eq!(edge.annotation.emerging[0].fraction, 1.0);
                checked += 1;
            }
            _ => {}
        }
    }
    assert!(checked >= 8, "only {checked} edges checked");
}

#[test]
fn estimated_networks_match_planted_rows() {
    let c = generate_cohort(&GeneratorConfig { n_patients: 800, seed: 5, ..Default::default() }).unwrap();
    let r = run(&c);
    let seqs: Vec<OutcomeSequence> = r
        .series
        .iter()
        .zip(&r.outcomes)
        .map(|(s, o)| OutcomeSequence { patient_id: s.patient_id.clone(), outcomes: o.clone() })
        .collect();
    let matrices = estimate_transitions(&seqs, &c.truth.subgroups());
    assert_eq!(matrices, c.truth.empirical_transitions());
    for m in &matrices {
        let planted = c.truth.planted_matrix(m.subgroup, m.stage).unwrap();
        for row in m.rows.iter().filter(|r| r.total >= 50) {
            let want = &planted.row(row.from).unwrap().probabilities;
            for o in TransitionOutcome::KNOWN {
                let got = row.probabilities.get(&o).copied().unwrap_or(0.0);
                assert!((got - want.get(&o).copied().unwrap_or(0.0)).abs() <= 0.05);
            }
        }
    }
}
