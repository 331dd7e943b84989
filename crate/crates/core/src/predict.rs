//! Subgroup and next-state classifiers for new patients.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{self, Activation, Loss, Mlp, Targets, TrainConfig};
use crate::pathways::{TransitionMatrix, TransitionOutcome};
use crate::rng;
use crate::subgroups::{argmax, train_forest, ForestConfig, ForestModel};
use crate::vectors::OptimizerKind;

/// Stratified train/test split: within every class the shuffled members
/// are cut so that `round(test_fraction * size)` go to test. Both index
/// lists are sorted.
pub fn stratified_split(labels: &[usize], test_fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut by_class: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, &l) in labels.iter().enumerate() {
        by_class.entry(l).or_default().push(i);
    }
    let mut r = rng::seeded(seed);
    let (mut train, mut test) = (Vec::new(), Vec::new());
    for (_, mut members) in by_class {
        members.shuffle(&mut r);
        let n_test = (test_fraction * members.len() as f64).round() as usize;
        let n_test = n_test.min(members.len().saturating_sub(1));
        test.extend_from_slice(&members[..n_test]);
        train.extend_from_slice(&members[n_test..]);
    }
    train.sort_unstable();
    test.sort_unstable();
    (train, test)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub class: usize,
    pub precision: f64,
    pub recall: f64,
    pub support: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassificationMetrics {
    pub n: usize,
    pub accuracy: f64,
    pub per_class: Vec<ClassMetrics>,
    /// `confusion[true][predicted]`.
    pub confusion: Vec<Vec<u64>>,
}

/// Precision and recall are 0 for classes that are never predicted or
/// never present.
pub fn evaluate(y_true: &[usize], y_pred: &[usize], n_classes: usize) -> ClassificationMetrics {
    let mut confusion = vec![vec![0u64; n_classes]; n_classes];
    for (&t, &p) in y_true.iter().zip(y_pred) {
        confusion[t][p] += 1;
    }
    let correct: u64 = (0..n_classes).map(|c| confusion[c][c]).sum();
    let per_class = (0..n_classes)
        .map(|c| {
            let tp = confusion[c][c] as f64;
            let predicted: u64 = (0..n_classes).map(|r| confusion[r][c]).sum();
            let support: u64 = confusion[c].iter().sum();
            ClassMetrics {
                class: c,
                precision: if predicted == 0 { 0.0 } else { tp / predicted as f64 },
                recall: if support == 0 { 0.0 } else { tp / support as f64 },
                support,
            }
        })
        .collect();
    ClassificationMetrics {
        n: y_true.len(),
        accuracy: if y_true.is_empty() { 0.0 } else { correct as f64 / y_true.len() as f64 },
        per_class,
        confusion,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SubgroupModelKind {
    DecisionTree,
    RandomForest,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SubgroupClassifierConfig {
    pub kind: SubgroupModelKind,
    pub forest: ForestConfig,
    pub test_fraction: f64,
    pub seed: u64,
}

impl Default for SubgroupClassifierConfig {
    fn default() -> Self {
        Self {
            kind: SubgroupModelKind::RandomForest,
            forest: ForestConfig { n_trees: 100, ..ForestConfig::default() },
            test_fraction: 0.2,
            seed: 23,
        }
    }
}

impl SubgroupClassifierConfig {
    fn model_config(&self) -> ForestConfig {
        match self.kind {
            SubgroupModelKind::RandomForest => ForestConfig { seed: self.seed, ..self.forest.clone() },
            SubgroupModelKind::DecisionTree => {
                ForestConfig::single_tree(self.forest.max_depth, self.forest.min_leaf, self.seed)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubgroupClassifier {
    pub kind: SubgroupModelKind,
    pub k: usize,
    pub model: ForestModel,
    pub train_indices: Vec<usize>,
    pub test_indices: Vec<usize>,
    pub evaluation: ClassificationMetrics,
}

impl SubgroupClassifier {
    /// Probabilities over all `k` subgroups.
    pub fn predict_proba(&self, x: &[f64]) -> Result<Vec<f64>> {
        let mut p = self.model.predict_proba(x)?;
        p.resize(self.k, 0.0);
        Ok(p)
    }

    pub fn predict(&self, x: &[f64]) -> Result<usize> {
        Ok(argmax(&self.predict_proba(x)?))
    }
}

/// Fits on a stratified 80/20 split and reports held-out metrics.
pub fn train_subgroup_classifier(
    x: &[Vec<f64>],
    labels: &[usize],
    k: usize,
    config: &SubgroupClassifierConfig,
) -> Result<SubgroupClassifier> {
    if k < 2 {
        return Err(Error::InvalidInput(format!("subgroup classifier needs k >= 2, got {k}")));
    }
    if x.len() != labels.len() || x.is_empty() {
        return Err(Error::DimensionMismatch { expected: x.len(), actual: labels.len() });
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
        return Err(Error::InvalidInput(format!("label {bad} outside 0..{k}")));
    }
    let (train_idx, test_idx) = stratified_split(labels, config.test_fraction, config.seed);
    let xt: Vec<Vec<f64>> = train_idx.iter().map(|&i| x[i].clone()).collect();
    let yt: Vec<usize> = train_idx.iter().map(|&i| labels[i]).collect();
    let model = train_forest(&xt, &yt, &config.model_config())?;
    let mut clf = SubgroupClassifier {
        kind: config.kind,
        k,
        model,
        train_indices: train_idx,
        test_indices: test_idx,
        evaluation: evaluate(&[], &[], k),
    };
    let y_true: Vec<usize> = clf.test_indices.iter().map(|&i| labels[i]).collect();
    let y_pred = clf
        .test_indices
        .iter()
        .map(|&i| clf.predict(&x[i]))
        .collect::<Result<Vec<_>>>()?;
    clf.evaluation = evaluate(&y_true, &y_pred, k);
    Ok(clf)
}

/// Classes of the next-state task.
pub const STATE_CLASSES: [TransitionOutcome; 3] = [
    TransitionOutcome::Improve,
    TransitionOutcome::Persistent,
    TransitionOutcome::Deteriorate,
];

pub fn state_class(o: TransitionOutcome) -> Option<usize> {
    STATE_CLASSES.iter().position(|&c| c == o)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StateClassifierConfig {
    pub hidden_sizes: Vec<usize>,
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub optimizer: OptimizerKind,
    pub test_fraction: f64,
    pub seed: u64,
}

impl Default for StateClassifierConfig {
    fn default() -> Self {
        Self {
            hidden_sizes: vec![64],
            epochs: 200,
            learning_rate: 0.001,
            batch_size: 32,
            optimizer: OptimizerKind::Adam,
            test_fraction: 0.2,
            seed: 29,
        }
    }
}

impl StateClassifierConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.hidden_sizes.contains(&0) {
            return Err("state classifier hidden sizes must be positive".into());
        }
        if self.batch_size == 0 || self.epochs == 0 {
            return Err("state classifier needs positive epochs and batch size".into());
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err("state classifier learning rate must be positive".into());
        }
        if !(0.0..1.0).contains(&self.test_fraction) {
            return Err("test fraction must be in [0, 1)".into());
        }
        Ok(())
    }

    fn train_config(&self) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            batch_size: self.batch_size,
            optimizer: match self.optimizer {
                OptimizerKind::Adam => nn::Optimizer::adam(self.learning_rate),
                OptimizerKind::Sgd => nn::Optimizer::Sgd { learning_rate: self.learning_rate },
            },
        }
    }
}

/// Input row, optionally followed by a one-hot subgroup block of width `k`.
pub fn state_features(base: &[f64], subgroup: Option<(usize, usize)>) -> Vec<f64> {
    let mut v = base.to_vec();
    if let Some((g, k)) = subgroup {
        v.extend((0..k).map(|j| if j == g { 1.0 } else { 0.0 }));
    }
    v
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateClassifier {
    pub network: Mlp,
    /// Width of the one-hot subgroup block, if used.
    pub subgroup_width: Option<usize>,
    pub base_dim: usize,
    pub train_indices: Vec<usize>,
    pub test_indices: Vec<usize>,
    pub n_excluded: usize,
    pub loss_curve: Vec<f64>,
    pub evaluation: ClassificationMetrics,
}

impl StateClassifier {
    pub fn predict_proba(&self, base: &[f64], subgroup: Option<usize>) -> Result<Vec<f64>> {
        if base.len() != self.base_dim {
            return Err(Error::DimensionMismatch { expected: self.base_dim, actual: base.len() });
        }
        let sg = match (self.subgroup_width, subgroup) {
            (Some(k), Some(g)) if g < k => Some((g, k)),
            (Some(k), _) => {
                return Err(Error::InvalidInput(format!("state classifier needs a subgroup in 0..{k}")))
            }
            (None, _) => None,
        };
        Ok(nn::softmax(&self.network.forward(&state_features(base, sg))?))
    }

    pub fn predict(&self, base: &[f64], subgroup: Option<usize>) -> Result<TransitionOutcome> {
        Ok(STATE_CLASSES[argmax(&self.predict_proba(base, subgroup)?)])
    }
}

/// Trains the three-class next-state network. Rows whose outcome is not
/// Improve, Persistent or Deteriorate are left out and counted.
/// `subgroups` adds the one-hot block when given as `(labels, k)`.
pub fn train_state_classifier(
    features: &[Vec<f64>],
    outcomes: &[TransitionOutcome],
    subgroups: Option<(&[usize], usize)>,
    config: &StateClassifierConfig,
) -> Result<StateClassifier> {
    config.validate().map_err(Error::InvalidInput)?;
    if features.len() != outcomes.len() || features.is_empty() {
        return Err(Error::DimensionMismatch { expected: features.len(), actual: outcomes.len() });
    }
    if let Some((labels, _)) = subgroups {
        if labels.len() != features.len() {
            return Err(Error::DimensionMismatch { expected: features.len(), actual: labels.len() });
        }
    }
    let base_dim = features[0].len();
    let kept: Vec<usize> = (0..outcomes.len()).filter(|&i| state_class(outcomes[i]).is_some()).collect();
    let n_excluded = outcomes.len() - kept.len();
    if n_excluded > 0 {
        log::info!("state classifier: {n_excluded} rows without a three-class outcome excluded");
    }
    let classes: Vec<usize> = kept.iter().map(|&i| state_class(outcomes[i]).expect("filtered")).collect();
    let (train_pos, test_pos) = stratified_split(&classes, config.test_fraction, config.seed);

    let mut counts = [0usize; 3];
    for &p in &train_pos {
        counts[classes[p]] += 1;
    }
    if counts.contains(&0) {
        let listing: Vec<String> = STATE_CLASSES
            .iter()
            .zip(counts)
            .map(|(c, n)| format!("{c}={n}"))
            .collect();
        return Err(Error::InvalidInput(format!(
            "state classifier training data lacks a class ({})",
            listing.join(", ")
        )));
    }

    let row = |i: usize| {
        let sg = subgroups.map(|(labels, k)| (labels[i], k));
        state_features(&features[i], sg)
    };
    let x_train: Vec<Vec<f64>> = train_pos.iter().map(|&p| row(kept[p])).collect();
    let y_train: Vec<usize> = train_pos.iter().map(|&p| classes[p]).collect();
    let mut sizes = vec![x_train[0].len()];
    sizes.extend(&config.hidden_sizes);
    sizes.push(STATE_CLASSES.len());
    let mut init = rng::derived(config.seed, 0);
    let mut network = Mlp::new(&sizes, Activation::Tanh, Activation::Linear, &mut init)?;
    let mut shuffle = rng::derived(config.seed, 1);
    let loss_curve = nn::train(
        &mut network,
        &x_train,
        Targets::Classes(&y_train),
        Loss::SoftmaxCrossEntropy,
        &config.train_config(),
        &mut shuffle,
    )?;

    let mut clf = StateClassifier {
        network,
        subgroup_width: subgroups.map(|(_, k)| k),
        base_dim,
        train_indices: train_pos.iter().map(|&p| kept[p]).collect(),
        test_indices: test_pos.iter().map(|&p| kept[p]).collect(),
        n_excluded,
        loss_curve,
        evaluation: evaluate(&[], &[], 3),
    };
    let mut y_true = Vec::new();
    let mut y_pred = Vec::new();
    for &p in &test_pos {
        let i = kept[p];
        let probs = clf.predict_proba(&features[i], subgroups.map(|(l, _)| l[i]))?;
        y_true.push(classes[p]);
        y_pred.push(argmax(&probs));
    }
    clf.evaluation = evaluate(&y_true, &y_pred, 3);
    Ok(clf)
}

/// The same split and seed with and without the subgroup block.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateAblation {
    pub with_subgroup: StateClassifier,
    pub without_subgroup: StateClassifier,
}

pub fn state_ablation(
    features: &[Vec<f64>],
    outcomes: &[TransitionOutcome],
    subgroups: &[usize],
    k: usize,
    config: &StateClassifierConfig,
) -> Result<StateAblation> {
    Ok(StateAblation {
        with_subgroup: train_state_classifier(features, outcomes, Some((subgroups, k)), config)?,
        without_subgroup: train_state_classifier(features, outcomes, None, config)?,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathwayPrediction {
    pub subgroup: usize,
    pub subgroup_probabilities: Vec<f64>,
    pub state_distribution: BTreeMap<TransitionOutcome, f64>,
    /// Subgroup whose networks apply; always equal to `subgroup`.
    pub network_subgroup: usize,
    /// Stages of that subgroup's transition matrices.
    pub network_stages: Vec<u32>,
}

/// Subgroup from the ternary stage-1 vector, then the next-state
/// distribution from `state_input`, then the matching networks.
pub fn predict_pathway(
    ternary: &[f64],
    state_input: &[f64],
    subgroup_model: &SubgroupClassifier,
    state_model: &StateClassifier,
    networks: &[TransitionMatrix],
) -> Result<PathwayPrediction> {
    if subgroup_model.model.trees.is_empty() || state_model.network.layers.is_empty() {
        return Err(Error::InvalidInput("prediction models are not trained".into()));
    }
    let subgroup_probabilities = subgroup_model.predict_proba(ternary)?;
    let subgroup = argmax(&subgroup_probabilities);
    let sg = state_model.subgroup_width.map(|_| subgroup);
    let probs = state_model.predict_proba(state_input, sg)?;
    Ok(PathwayPrediction {
        subgroup,
        subgroup_probabilities,
        state_distribution: STATE_CLASSES.iter().copied().zip(probs).collect(),
        network_subgroup: subgroup,
        network_stages: networks.iter().filter(|m| m.subgroup == subgroup).map(|m| m.stage).collect(),
    })
}

/// `patient_id` followed by numeric feature columns.
pub fn read_external_features<R: Read>(reader: R) -> Result<BTreeMap<String, Vec<f64>>> {
    let mut r = csv::Reader::from_reader(reader);
    let width = r.headers()?.len();
    if width < 2 {
        return Err(Error::Parse {
            source_name: "external_features.csv".into(),
            line: 1,
            reason: "expected patient_id and at least one feature column".into(),
        });
    }
    let mut out = BTreeMap::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec?;
        let values = rec
            .iter()
            .skip(1)
            .map(|s| s.trim().parse::<f64>())
            .collect::<std::result::Result<Vec<f64>, _>>()
            .map_err(|e| Error::Parse {
                source_name: "external_features.csv".into(),
                line: i + 2,
                reason: e.to_string(),
            })?;
        if values.len() != width - 1 || values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Parse {
                source_name: "external_features.csv".into(),
                line: i + 2,
                reason: format!("expected {} finite features", width - 1),
            });
        }
        out.insert(rec[0].to_string(), values);
    }
    Ok(out)
}

pub fn write_external_features<W: Write>(rows: &BTreeMap<String, Vec<f64>>, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let width = rows.values().next().map_or(0, Vec::len);
    let mut header = vec!["patient_id".to_string()];
    header.extend((1..=width).map(|j| format!("f_{j}")));
    w.write_record(&header)?;
    for (id, v) in rows {
        let mut rec = vec![id.clone()];
        rec.extend(v.iter().map(|x| x.to_string()));
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| Error::io("external_features.csv", e))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use std::collections::BTreeSet;

    /// Three well separated groups in a 12-dimensional ternary space.
    fn planted(n: usize, seed: u64) -> (Vec<Vec<f64>>, Vec<usize>) {
        let mut r = rng::seeded(seed);
        let mut x = Vec::new();
        let mut y = Vec::new();
        for i in 0..n {
            let g = i % 3;
            let row: Vec<f64> = (0..12)
                .map(|j| {
                    let signal = j / 4 == g;
                    if signal && r.random_bool(0.9) {
                        1.0
                    } else {
                        f64::from(r.random_range(-1i8..=0))
                    }
                })
                .collect();
            x.push(row);
            y.push(g);
        }
        (x, y)
    }

    #[test]
    fn split_is_stratified_and_disjoint() {
        let labels: Vec<usize> = (0..100).map(|i| usize::from(i % 4 == 0)).collect();
        let (train, test) = stratified_split(&labels, 0.2, 1);
        let a: BTreeSet<_> = train.iter().collect();
        let b: BTreeSet<_> = test.iter().collect();
        assert!(a.is_disjoint(&b));
        assert_eq!(a.len() + b.len(), 100);
        assert_eq!(test.iter().filter(|&&i| labels[i] == 1).count(), 5);
        assert_eq!(test.len(), 20);
        assert_eq!(stratified_split(&labels, 0.2, 1), (train, test));
    }

    #[test]
    fn metrics_by_hand() {
        let m = evaluate(&[0, 0, 1, 1, 2], &[0, 1, 1, 1, 0], 3);
        assert_eq!(m.accuracy, 0.6);
        assert_eq!(m.confusion, vec![vec![1, 1, 0], vec![0, 2, 0], vec![1, 0, 0]]);
        assert_eq!(m.per_class[1].precision, 2.0 / 3.0);
        assert_eq!(m.per_class[0].recall, 0.5);
        assert_eq!(m.per_class[2].precision, 0.0);
    }

    #[test]
    fn separable_subgroups_are_recovered() {
        let (x, y) = planted(300, 4);
        let clf = train_subgroup_classifier(&x, &y, 3, &SubgroupClassifierConfig::default()).unwrap();
        assert!(clf.evaluation.accuracy >= 0.85, "{}", clf.evaluation.accuracy);
        let train: BTreeSet<_> = clf.train_indices.iter().collect();
        assert!(clf.test_indices.iter().all(|i| !train.contains(i)));
    }

    #[test]
    fn deep_tree_memorizes_tiny_set() {
        let (x, y) = planted(10, 9);
        let cfg = SubgroupClassifierConfig {
            kind: SubgroupModelKind::DecisionTree,
            forest: ForestConfig { max_depth: 30, min_leaf: 1, ..Default::default() },
            test_fraction: 0.0,
            seed: 3,
        };
        let clf = train_subgroup_classifier(&x, &y, 3, &cfg).unwrap();
        for (xi, &yi) in x.iter().zip(&y) {
            assert_eq!(clf.predict(xi).unwrap(), yi);
        }
    }

    #[test]
    fn constant_labels_and_small_k() {
        let (x, _) = planted(30, 2);
        let y = vec![1; 30];
        let clf = train_subgroup_classifier(&x, &y, 2, &SubgroupClassifierConfig::default()).unwrap();
        assert!(x.iter().all(|xi| clf.predict(xi).unwrap() == 1));
        assert!(train_subgroup_classifier(&x, &y, 1, &SubgroupClassifierConfig::default()).is_err());
    }

    fn small_state_config() -> StateClassifierConfig {
        StateClassifierConfig { hidden_sizes: vec![8], epochs: 40, learning_rate: 0.01, ..Default::default() }
    }

    #[test]
    fn missing_class_lists_counts() {
        let x: Vec<Vec<f64>> = (0..20).map(|i| vec![i as f64 / 20.0]).collect();
        let o: Vec<TransitionOutcome> = (0..20)
            .map(|i| if i % 2 == 0 { TransitionOutcome::Improve } else { TransitionOutcome::Persistent })
            .collect();
        let err = train_state_classifier(&x, &o, None, &small_state_config()).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("Deteriorate=0"), "{msg}");
    }

    #[test]
    fn terminal_outcomes_are_excluded() {
        let (x, y) = planted(90, 5);
        let mut o: Vec<TransitionOutcome> = y.iter().map(|&g| STATE_CLASSES[g]).collect();
        o[0] = TransitionOutcome::Discharge;
        o[1] = TransitionOutcome::Decease;
        let clf = train_state_classifier(&x, &o, None, &small_state_config()).unwrap();
        assert_eq!(clf.n_excluded, 2);
        assert!(!clf.train_indices.contains(&0) && !clf.test_indices.contains(&1));
        let p = clf.predict_proba(&x[5], None).unwrap();
        assert!((p.iter().sum::<f64>() - 1.0).abs() <= 1e-9);
        assert!(clf.evaluation.accuracy > 0.8, "{}", clf.evaluation.accuracy);
    }

    #[test]
    fn gradients_match_finite_differences() {
        let (x, y) = planted(12, 6);
        let x: Vec<Vec<f64>> = x.into_iter().map(|r| state_features(&r, Some((1, 3)))).collect();
        let mut init = rng::seeded(2);
        let net = Mlp::new(&[15, 5, 3], Activation::Tanh, Activation::Linear, &mut init).unwrap();
        let err = nn::gradient_check(&net, &x, Targets::Classes(&y), Loss::SoftmaxCrossEntropy, 1e-5).unwrap();
        assert!(err <= 1e-4, "{err}");
    }

    #[test]
    fn training_is_deterministic() {
        let (x, y) = planted(60, 8);
        let o: Vec<TransitionOutcome> = y.iter().map(|&g| STATE_CLASSES[g]).collect();
        let a = state_ablation(&x, &o, &y, 3, &small_state_config()).unwrap();
        let b = state_ablation(&x, &o, &y, 3, &small_state_config()).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.with_subgroup.test_indices, a.without_subgroup.test_indices);
    }

    #[test]
    fn pathway_prediction_follows_subgroup() {
        let (x, y) = planted(150, 10);
        let sub = train_subgroup_classifier(&x, &y, 3, &SubgroupClassifierConfig::default()).unwrap();
        let o: Vec<TransitionOutcome> = y.iter().map(|&g| STATE_CLASSES[g]).collect();
        let state = train_state_classifier(&x, &o, Some((&y, 3)), &small_state_config()).unwrap();
        let networks = vec![
            TransitionMatrix { subgroup: 2, stage: 2, rows: vec![] },
            TransitionMatrix { subgroup: 2, stage: 3, rows: vec![] },
            TransitionMatrix { subgroup: 0, stage: 2, rows: vec![] },
        ];
        // Exemplar of group 2: all its signal features present, everything else negated.
        let exemplar: Vec<f64> = (0..12).map(|j| if j / 4 == 2 { 1.0 } else { -1.0 }).collect();
        let p = predict_pathway(&exemplar, &exemplar, &sub, &state, &networks).unwrap();
        assert_eq!(p.subgroup, 2);
        assert_eq!(p.network_subgroup, p.subgroup);
        assert_eq!(p.network_stages, vec![2, 3]);
        assert!((p.state_distribution.values().sum::<f64>() - 1.0).abs() <= 1e-9);
    }

    #[test]
    fn external_features_round_trip() {
        let rows = BTreeMap::from([("a".to_string(), vec![0.5, -1.0]), ("b".to_string(), vec![2.0, 0.0])]);
        let mut buf = Vec::new();
        write_external_features(&rows, &mut buf).unwrap();
        assert_eq!(read_external_features(buf.as_slice()).unwrap(), rows);
        assert!(read_external_features("patient_id,f\na,x\n".as_bytes()).is_err());
    }
}
