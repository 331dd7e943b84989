//! Ternary stage vectors over the concept vocabulary and their autoencoder
//! compression.

use std::collections::{BTreeSet, HashMap};
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{self, Activation, Loss, Mlp, Optimizer, Targets, TrainConfig};
use crate::rng;
use crate::textproc::Polarity;
use crate::timeline::{ConditionMap, StageSeries};

/// Sorted, duplicate-free list of concept identifiers.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "Vec<String>", into = "Vec<String>")]
pub struct ConceptVocabulary {
    cuis: Vec<String>,
    index: HashMap<String, usize>,
}

impl From<Vec<String>> for ConceptVocabulary {
    fn from(cuis: Vec<String>) -> Self {
        let set: BTreeSet<String> = cuis.into_iter().collect();
        Self::from_sorted(set.into_iter().collect())
    }
}

impl From<ConceptVocabulary> for Vec<String> {
    fn from(v: ConceptVocabulary) -> Self {
        v.cuis
    }
}

impl ConceptVocabulary {
    fn from_sorted(cuis: Vec<String>) -> Self {
        let index = cuis.iter().enumerate().map(|(i, c)| (c.clone(), i)).collect();
        Self { cuis, index }
    }

    pub fn new<I, S>(cuis: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        Self::from(cuis.into_iter().map(Into::into).collect::<Vec<String>>())
    }

    pub fn len(&self) -> usize {
        self.cuis.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cuis.is_empty()
    }

    pub fn cuis(&self) -> &[String] {
        &self.cuis
    }

    pub fn position(&self, cui: &str) -> Option<usize> {
        self.index.get(cui).copied()
    }
}

/// Every concept seen with either polarity in any stage.
pub fn build_vocabulary(series: &[StageSeries]) -> Result<ConceptVocabulary> {
    let set: BTreeSet<&str> = series
        .iter()
        .flat_map(|s| s.stages.iter())
        .flat_map(|st| st.conditions.keys().map(String::as_str))
        .collect();
    if set.is_empty() {
        return Err(Error::InvalidInput(
            "no concepts in any stage; cannot build a vocabulary".into(),
        ));
    }
    Ok(ConceptVocabulary::from_sorted(
        set.into_iter().map(str::to_string).collect(),
    ))
}

/// Stage condition vector stored as sorted `(index, ±1)` pairs; every other
/// entry is 0.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TernaryVector {
    pub patient_id: String,
    pub stage: u32,
    pub dim: usize,
    pub entries: Vec<(u32, i8)>,
}

impl TernaryVector {
    pub fn to_dense(&self) -> Vec<f64> {
        let mut v = vec![0.0; self.dim];
        for &(i, x) in &self.entries {
            v[i as usize] = f64::from(x);
        }
        v
    }

    pub fn get(&self, i: usize) -> i8 {
        self.entries
            .binary_search_by_key(&(i as u32), |e| e.0)
            .map_or(0, |k| self.entries[k].1)
    }
}

pub fn build_ternary_vector(
    patient_id: &str,
    stage: u32,
    conditions: &ConditionMap,
    vocabulary: &ConceptVocabulary,
) -> Result<TernaryVector> {
    let mut entries = Vec::with_capacity(conditions.len());
    for (cui, polarity) in conditions {
        let i = vocabulary
            .position(cui)
            .ok_or_else(|| Error::UnknownConcept(cui.clone()))?;
        let v = match polarity {
            Polarity::Positive => 1,
            Polarity::Negative => -1,
        };
        entries.push((i as u32, v));
    }
    entries.sort_unstable();
    Ok(TernaryVector {
        patient_id: patient_id.to_string(),
        stage,
        dim: vocabulary.len(),
        entries,
    })
}

/// Ternary vectors for every stage of every patient, in input order.
pub fn stage_vectors(series: &[StageSeries], vocabulary: &ConceptVocabulary) -> Result<Vec<TernaryVector>> {
    let mut out = Vec::new();
    for s in series {
        for st in &s.stages {
            out.push(build_ternary_vector(&s.patient_id, st.index, &st.conditions, vocabulary)?);
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AutoencoderConfig {
    pub latent_dim: usize,
    /// Encoder hidden sizes between input and latent; mirrored in the
    /// decoder. `None` means a single layer of `4 × latent_dim`.
    pub hidden_sizes: Option<Vec<usize>>,
    pub hidden_activation: Activation,
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub optimizer: OptimizerKind,
    pub seed: u64,
}

impl Default for AutoencoderConfig {
    fn default() -> Self {
        Self {
            latent_dim: 16,
            hidden_sizes: None,
            hidden_activation: Activation::Tanh,
            epochs: 50,
            learning_rate: 0.005,
            batch_size: 64,
            optimizer: OptimizerKind::Adam,
            seed: 7,
        }
    }
}

impl AutoencoderConfig {
    pub fn layer_sizes(&self, input: usize) -> Vec<usize> {
        let hidden = self
            .hidden_sizes
            .clone()
            .unwrap_or_else(|| vec![4 * self.latent_dim]);
        let mut sizes = vec![input];
        sizes.extend(&hidden);
        sizes.push(self.latent_dim);
        sizes.extend(hidden.iter().rev());
        sizes.push(input);
        sizes
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.latent_dim == 0 {
            return Err("autoencoder.latent_dim must be positive".into());
        }
        if self.batch_size == 0 {
            return Err("autoencoder.batch_size must be positive".into());
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err("autoencoder.learning_rate must be a positive number".into());
        }
        if self.hidden_sizes.as_ref().is_some_and(|h| h.contains(&0)) {
            return Err("autoencoder.hidden_sizes must be positive".into());
        }
        Ok(())
    }

    fn optimizer(&self) -> Optimizer {
        match self.optimizer {
            OptimizerKind::Sgd => Optimizer::Sgd {
                learning_rate: self.learning_rate,
            },
            OptimizerKind::Adam => Optimizer::adam(self.learning_rate),
        }
    }
}

pub const MODEL_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AutoencoderModel {
    pub format_version: u32,
    pub layer_sizes: Vec<usize>,
    pub network: Mlp,
    /// Number of layers in the encoder half.
    pub encoder_layers: usize,
    pub seed: u64,
    pub epochs: usize,
    pub loss_curve: Vec<f64>,
}

impl AutoencoderModel {
    /// Untrained model with seeded initial weights.
    pub fn initialize(input: usize, config: &AutoencoderConfig) -> Result<Self> {
        config.validate().map_err(Error::InvalidInput)?;
        let sizes = config.layer_sizes(input);
        let mut rng = rng::derived(config.seed, 0);
        let network = Mlp::new(&sizes, config.hidden_activation, Activation::Linear, &mut rng)?;
        Ok(Self {
            format_version: MODEL_FORMAT_VERSION,
            encoder_layers: (sizes.len() - 1) / 2,
            layer_sizes: sizes,
            network,
            seed: config.seed,
            epochs: 0,
            loss_curve: Vec::new(),
        })
    }

    pub fn input_size(&self) -> usize {
        self.network.input_size()
    }

    pub fn latent_size(&self) -> usize {
        self.network.layers[self.encoder_layers - 1].n_out
    }

    pub fn final_loss(&self) -> Option<f64> {
        self.loss_curve.last().copied()
    }

    pub fn encode(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.network.forward_range(x, 0, self.encoder_layers)
    }

    pub fn reconstruct(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.network.forward(x)
    }

    pub fn mse(&self, data: &[Vec<f64>]) -> Result<f64> {
        self.network.loss(data, Targets::Dense(data), Loss::Mse)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let model: Self = serde_json::from_str(text)?;
        if model.format_version != MODEL_FORMAT_VERSION {
            return Err(Error::UnsupportedFormat(format!(
                "autoencoder model version {}",
                model.format_version
            )));
        }
        if !model.network.all_finite() {
            return Err(Error::InvalidInput("model has non-finite parameters".into()));
        }
        Ok(model)
    }
}

/// Fits an autoencoder to `data` (rows of equal length).
pub fn train_autoencoder(data: &[Vec<f64>], config: &AutoencoderConfig) -> Result<AutoencoderModel> {
    let Some(first) = data.first() else {
        return Err(Error::InvalidInput("autoencoder needs at least one vector".into()));
    };
    let input = first.len();
    if let Some(bad) = data.iter().find(|v| v.len() != input) {
        return Err(Error::DimensionMismatch {
            expected: input,
            actual: bad.len(),
        });
    }
    let mut model = AutoencoderModel::initialize(input, config)?;
    let mut rng = rng::derived(config.seed, 1);
    let train_cfg = TrainConfig {
        epochs: config.epochs,
        batch_size: config.batch_size,
        optimizer: config.optimizer(),
    };
    model.loss_curve = nn::train(
        &mut model.network,
        data,
        Targets::Dense(data),
        Loss::Mse,
        &train_cfg,
        &mut rng,
    )?;
    model.epochs = config.epochs;
    Ok(model)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseVector {
    pub patient_id: String,
    pub stage: u32,
    pub values: Vec<f64>,
}

pub fn encode_all(model: &AutoencoderModel, vectors: &[TernaryVector]) -> Result<Vec<DenseVector>> {
    use rayon::prelude::*;
    vectors
        .par_iter()
        .map(|v| {
            Ok(DenseVector {
                patient_id: v.patient_id.clone(),
                stage: v.stage,
                values: model.encode(&v.to_dense())?,
            })
        })
        .collect()
}

/// `patient_id,stage,v_1..v_L`; values use Rust's shortest round-trip
/// formatting so files are exact.
pub fn write_dense_csv<W: Write>(vectors: &[DenseVector], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let dim = vectors.first().map_or(0, |v| v.values.len());
    let mut header = vec!["patient_id".to_string(), "stage".to_string()];
    header.extend((1..=dim).map(|i| format!("v_{i}")));
    w.write_record(&header)?;
    for v in vectors {
        let mut row = vec![v.patient_id.clone(), v.stage.to_string()];
        row.extend(v.values.iter().map(|x| x.to_string()));
        w.write_record(&row)?;
    }
    w.flush().map_err(|e| Error::io("dense vectors", e))?;
    Ok(())
}

pub fn read_dense_csv<R: std::io::Read>(reader: R) -> Result<Vec<DenseVector>> {
    let mut r = csv::Reader::from_reader(reader);
    let mut out = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec?;
        let parse_err = |reason: String| Error::Parse {
            source_name: "dense vectors".into(),
            line: i + 2,
            reason,
        };
        let stage = rec
            .get(1)
            .unwrap_or("")
            .parse()
            .map_err(|e| parse_err(format!("stage: {e}")))?;
        let values = rec
            .iter()
            .skip(2)
            .map(|s| s.parse::<f64>().map_err(|e| parse_err(format!("value: {e}"))))
            .collect::<Result<Vec<_>>>()?;
        out.push(DenseVector {
            patient_id: rec.get(0).unwrap_or("").to_string(),
            stage,
            values,
        });
    }
    Ok(out)
}

#[derive(Serialize, Deserialize)]
struct SparseRecord {
    patient_id: String,
    stage: u32,
    entries: Vec<(u32, i8)>,
}

/// One JSON object per line: `{patient_id, stage, entries: [[index, value], …]}`.
pub fn write_ternary_jsonl<W: Write>(vectors: &[TernaryVector], mut writer: W) -> Result<()> {
    for v in vectors {
        let rec = SparseRecord {
            patient_id: v.patient_id.clone(),
            stage: v.stage,
            entries: v.entries.clone(),
        };
        serde_json::to_writer(&mut writer, &rec)?;
        writer.write_all(b"\n").map_err(|e| Error::io("ternary vectors", e))?;
    }
    Ok(())
}

pub fn read_ternary_jsonl<R: BufRead>(reader: R, dim: usize) -> Result<Vec<TernaryVector>> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io("ternary vectors", e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: SparseRecord = serde_json::from_str(&line).map_err(|e| Error::Parse {
            source_name: "ternary vectors".into(),
            line: i + 1,
            reason: e.to_string(),
        })?;
        if let Some(&(idx, v)) = rec
            .entries
            .iter()
            .find(|(idx, v)| *idx as usize >= dim || !matches!(v, -1 | 1))
        {
            return Err(Error::Parse {
                source_name: "ternary vectors".into(),
                line: i + 1,
                reason: format!("entry ({idx}, {v}) invalid for dimension {dim}"),
            });
        }
        out.push(TernaryVector {
            patient_id: rec.patient_id,
            stage: rec.stage,
            dim,
            entries: rec.entries,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;
    use crate::timeline::Stage;
    use rand::Rng;
    use Polarity::{Negative as N, Positive as P};

    fn series(pid: &str, maps: &[&[(&str, Polarity)]]) -> StageSeries {
        StageSeries {
            patient_id: pid.into(),
            stages: maps
                .iter()
                .enumerate()
                .map(|(i, m)| Stage {
                    index: i as u32 + 1,
                    day_range: (i as u32 + 1, i as u32 + 1),
                    conditions: m.iter().map(|(c, p)| (c.to_string(), *p)).collect(),
                })
                .collect(),
            disposition: None,
        }
    }

    #[test]
    fn vocabulary_ignores_polarity() {
        let s = series("p", &[&[("fever", P)], &[("fever", N), ("uti", P)]]);
        let v = build_vocabulary(&[s]).unwrap();
        assert_eq!(v.cuis(), ["fever", "uti"]);
        let a = series("a", &[&[("c1", P), ("c2", P), ("c3", P)]]);
        let b = series("b", &[&[("d1", P), ("d2", N), ("d3", P), ("d4", P)]]);
        assert_eq!(build_vocabulary(&[a, b]).unwrap().len(), 7);
        assert!(build_vocabulary(&[series("e", &[&[]])]).is_err());
    }

    #[test]
    fn ternary_encoding() {
        let vocab = ConceptVocabulary::new(["chest pain", "fever", "uti"]);
        let map: ConditionMap = [("fever".to_string(), P), ("chest pain".to_string(), N)].into();
        let v = build_ternary_vector("p", 1, &map, &vocab).unwrap();
        assert_eq!(v.to_dense(), [-1.0, 1.0, 0.0]);
        assert_eq!(v.get(0), -1);
        let empty = build_ternary_vector("p", 1, &ConditionMap::new(), &vocab).unwrap();
        assert_eq!(empty.to_dense(), [0.0; 3]);
        let unknown: ConditionMap = [("zzz".to_string(), P)].into();
        assert!(build_ternary_vector("p", 1, &unknown, &vocab).is_err());
    }

    #[test]
    fn vocabulary_serializes_as_list() {
        let vocab = ConceptVocabulary::new(["b", "a"]);
        let json = serde_json::to_string(&vocab).unwrap();
        assert_eq!(json, r#"["a","b"]"#);
        let back: ConceptVocabulary = serde_json::from_str(&json).unwrap();
        assert_eq!(back, vocab);
    }

    #[test]
    fn identity_is_learnable_with_linear_units() {
        let mut rng = seeded(21);
        let data: Vec<Vec<f64>> = (0..10)
            .map(|_| (0..5).map(|_| f64::from(rng.random_range(-1i8..=1))).collect())
            .collect();
        let cfg = AutoencoderConfig {
            latent_dim: 5,
            hidden_sizes: Some(vec![]),
            hidden_activation: Activation::Linear,
            epochs: 2000,
            learning_rate: 0.01,
            batch_size: 10,
            optimizer: OptimizerKind::Adam,
            seed: 3,
        };
        let model = train_autoencoder(&data, &cfg).unwrap();
        assert!(model.final_loss().unwrap() < 1e-3, "{:?}", model.final_loss());
    }

    #[test]
    fn zero_encoder_maps_zero_to_zero() {
        let cfg = AutoencoderConfig {
            latent_dim: 2,
            hidden_sizes: Some(vec![]),
            hidden_activation: Activation::Linear,
            ..Default::default()
        };
        let mut model = AutoencoderModel::initialize(4, &cfg).unwrap();
        let zeros = vec![0.0; model.network.n_parameters()];
        model.network.set_parameters(&zeros).unwrap();
        assert_eq!(model.encode(&[0.0; 4]).unwrap(), [0.0, 0.0]);
    }

    #[test]
    fn encode_shapes_and_purity() {
        let model = AutoencoderModel::initialize(6, &AutoencoderConfig { latent_dim: 2, ..Default::default() }).unwrap();
        assert_eq!(model.layer_sizes, [6, 8, 2, 8, 6]);
        let x = [1.0, 0.0, -1.0, 0.0, 1.0, 1.0];
        let a = model.encode(&x).unwrap();
        assert_eq!(a.len(), 2);
        assert_eq!(a, model.encode(&x).unwrap());
        assert!(model.encode(&[0.0; 5]).is_err());
        assert!(model.reconstruct(&[0.0; 6]).unwrap().iter().all(|v| v.is_finite()));
    }

    #[test]
    fn model_json_round_trip() {
        let data = vec![vec![1.0, 0.0, -1.0, 1.0]; 4];
        let cfg = AutoencoderConfig { latent_dim: 2, epochs: 3, ..Default::default() };
        let model = train_autoencoder(&data, &cfg).unwrap();
        assert_eq!(model.loss_curve.len(), 4);
        let back = AutoencoderModel::from_json(&model.to_json().unwrap()).unwrap();
        assert_eq!(back, model);
    }

    #[test]
    fn csv_and_jsonl_round_trip() {
        let dense = vec![DenseVector { patient_id: "p".into(), stage: 1, values: vec![0.1, -2.5e-7] }];
        let mut buf = Vec::new();
        write_dense_csv(&dense, &mut buf).unwrap();
        assert_eq!(read_dense_csv(buf.as_slice()).unwrap(), dense);

        let t = vec![TernaryVector { patient_id: "p".into(), stage: 2, dim: 5, entries: vec![(0, 1), (4, -1)] }];
        let mut buf = Vec::new();
        write_ternary_jsonl(&t, &mut buf).unwrap();
        assert_eq!(read_ternary_jsonl(buf.as_slice(), 5).unwrap(), t);
        assert!(read_ternary_jsonl(buf.as_slice(), 3).is_err());
    }
}
