//! Patient subgroups: k-means over initial-stage dense vectors, then a
//! random forest on ternary vectors explained with TreeSHAP.

mod forest;
mod kmeans;
mod shap;

use std::collections::BTreeMap;
use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use forest::{argmax, train_forest, ForestConfig, ForestModel, Node, Tree};
pub use kmeans::{
    adjusted_rand_index, centroid, kmeans, select_k, silhouette, silhouette_samples,
    squared_distance, Clustering, KMeansConfig, SilhouetteReport,
};
pub use shap::{conditional_expectation, tree_shap, tree_shap_single, ShapAttribution};

use crate::error::{Error, Result};
use crate::textproc::ConceptDictionary;
use crate::vectors::ConceptVocabulary;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    /// The concept is recorded Positive in members and pushes toward the cluster.
    Presence,
    /// The concept is Negative or unmentioned in members and that pushes
    /// toward the cluster.
    Absence,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedConcept {
    pub cui: String,
    pub preferred_name: String,
    /// Ranking score: summed SHAP toward the cluster over the members in
    /// this direction, divided by the cluster size.
    pub score: f64,
    pub mean_abs_shap: f64,
    pub direction: Direction,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubgroupProfile {
    pub cluster: usize,
    pub n_patients: usize,
    pub presence: Vec<RankedConcept>,
    pub absence: Vec<RankedConcept>,
}

/// Ranks concepts per cluster by their SHAP contribution toward that
/// cluster's class among its members.
///
/// For member i and feature j, φ_ij goes to the presence score when
/// x_ij = +1 and to the absence score otherwise. Only positive scores are
/// reported, top `top_m` of each.
pub fn explain_subgroups(
    shap: &[ShapAttribution],
    vectors: &[Vec<f64>],
    labels: &[usize],
    k: usize,
    vocabulary: &ConceptVocabulary,
    dictionary: &ConceptDictionary,
    top_m: usize,
) -> Result<Vec<SubgroupProfile>> {
    if shap.len() != vectors.len() || shap.len() != labels.len() {
        return Err(Error::DimensionMismatch {
            expected: vectors.len(),
            actual: shap.len(),
        });
    }
    let d = vocabulary.len();
    let mut profiles = Vec::with_capacity(k);
    for c in 0..k {
        let members: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == c).collect();
        let n_c = members.len();
        let mut presence = vec![0.0; d];
        let mut absence = vec![0.0; d];
        let mut abs = vec![0.0; d];
        for &i in &members {
            for j in 0..d {
                let phi = shap[i].values[j].get(c).copied().unwrap_or(0.0);
                abs[j] += phi.abs();
                if vectors[i][j] > 0.0 {
                    presence[j] += phi;
                } else {
                    absence[j] += phi;
                }
            }
        }
        let denom = n_c.max(1) as f64;
        let rank = |scores: &[f64], direction: Direction| {
            let mut idx: Vec<usize> = (0..d).filter(|&j| scores[j] > 0.0).collect();
            idx.sort_by(|&a, &b| {
                scores[b]
                    .total_cmp(&scores[a])
                    .then_with(|| vocabulary.cuis()[a].cmp(&vocabulary.cuis()[b]))
            });
            idx.into_iter()
                .take(top_m)
                .map(|j| {
                    let cui = &vocabulary.cuis()[j];
                    RankedConcept {
                        cui: cui.clone(),
                        preferred_name: dictionary
                            .preferred_name(cui)
                            .map_or_else(|| cui.clone(), str::to_string),
                        score: scores[j] / denom,
                        mean_abs_shap: abs[j] / denom,
                        direction,
                    }
                })
                .collect::<Vec<_>>()
        };
        profiles.push(SubgroupProfile {
            cluster: c,
            n_patients: n_c,
            presence: rank(&presence, Direction::Presence),
            absence: rank(&absence, Direction::Absence),
        });
    }
    Ok(profiles)
}

/// SHAP attributions for many instances.
pub fn shap_all(forest: &ForestModel, vectors: &[Vec<f64>]) -> Result<Vec<ShapAttribution>> {
    vectors.par_iter().map(|x| tree_shap(forest, x)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureContribution {
    pub cui: String,
    pub value: f64,
    pub shap: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Misclassification {
    pub patient_id: String,
    pub cluster: usize,
    pub predicted: usize,
    pub probabilities: Vec<f64>,
    /// Largest |SHAP| toward the true cluster.
    pub toward_cluster: Vec<FeatureContribution>,
    /// Largest |SHAP| toward the predicted class.
    pub toward_predicted: Vec<FeatureContribution>,
}

/// Patients whose forest prediction differs from their cluster label.
pub fn misclassifications(
    forest: &ForestModel,
    patient_ids: &[String],
    vectors: &[Vec<f64>],
    labels: &[usize],
    shap: &[ShapAttribution],
    vocabulary: &ConceptVocabulary,
    top: usize,
) -> Result<Vec<Misclassification>> {
    let mut out = Vec::new();
    for i in 0..vectors.len() {
        let probabilities = forest.predict_proba(&vectors[i])?;
        let predicted = argmax(&probabilities);
        if predicted == labels[i] {
            continue;
        }
        let contributions = |class: usize| {
            let mut idx: Vec<usize> = (0..vocabulary.len()).collect();
            idx.sort_by(|&a, &b| {
                shap[i].values[b][class]
                    .abs()
                    .total_cmp(&shap[i].values[a][class].abs())
                    .then(a.cmp(&b))
            });
            idx.into_iter()
                .take(top)
                .map(|j| FeatureContribution {
                    cui: vocabulary.cuis()[j].clone(),
                    value: vectors[i][j],
                    shap: shap[i].values[j][class],
                })
                .collect()
        };
        out.push(Misclassification {
            patient_id: patient_ids[i].clone(),
            cluster: labels[i],
            predicted,
            toward_cluster: contributions(labels[i]),
            toward_predicted: contributions(predicted),
            probabilities,
        });
    }
    Ok(out)
}

pub fn write_clusters_csv<W: Write>(patient_ids: &[String], labels: &[usize], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["patient_id", "cluster"])?;
    for (p, l) in patient_ids.iter().zip(labels) {
        w.write_record([p.as_str(), &l.to_string()])?;
    }
    w.flush().map_err(|e| Error::io("clusters.csv", e))?;
    Ok(())
}

pub fn read_clusters_csv<R: std::io::Read>(reader: R) -> Result<BTreeMap<String, usize>> {
    let mut r = csv::Reader::from_reader(reader);
    let mut out = BTreeMap::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec?;
        let label = rec.get(1).unwrap_or("").parse().map_err(|e| Error::Parse {
            source_name: "clusters.csv".into(),
            line: i + 2,
            reason: format!("cluster: {e}"),
        })?;
        out.insert(rec.get(0).unwrap_or("").to_string(), label);
    }
    Ok(out)
}

pub fn write_silhouette_csv<W: Write>(report: &SilhouetteReport, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["k", "score"])?;
    for (k, s) in &report.scores {
        w.write_record([k.to_string(), s.to_string()])?;
    }
    w.flush().map_err(|e| Error::io("silhouette.csv", e))?;
    Ok(())
}
