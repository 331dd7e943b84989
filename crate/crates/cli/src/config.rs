//! The single JSON configuration shared by every subcommand.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use sepsis_core::predict::{StateClassifierConfig, SubgroupClassifierConfig};
use sepsis_core::rng;
use sepsis_core::severity::SeverityThresholds;
use sepsis_core::subgroups::{ForestConfig, KMeansConfig};
use sepsis_core::synth::GeneratorConfig;
use sepsis_core::textproc::{DEFAULT_THETA, DEFAULT_WINDOW};
use sepsis_core::vectors::AutoencoderConfig;

use crate::ConfigError;

/// Input and resource locations. Unset inputs point at the synthetic
/// cohort under `<output_dir>/synth/`; unset resources use the shipped ones.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub notes: Option<PathBuf>,
    pub vitals: Option<PathBuf>,
    pub demographics: Option<PathBuf>,
    pub annotations: Option<PathBuf>,
    pub lexicon: Option<PathBuf>,
    pub concept_dictionary: Option<PathBuf>,
    pub negation_triggers: Option<PathBuf>,
    pub decease_patterns: Option<PathBuf>,
    pub flags: Option<PathBuf>,
    pub external_features: Option<PathBuf>,
    pub output_dir: PathBuf,
}

impl Default for Paths {
    fn default() -> Self {
        Self {
            notes: None,
            vitals: None,
            demographics: None,
            annotations: None,
            lexicon: None,
            concept_dictionary: None,
            negation_triggers: None,
            decease_patterns: None,
            flags: None,
            external_features: None,
            output_dir: PathBuf::from("out"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorpusParams {
    pub min_note_day_fraction: f64,
}

impl Default for CorpusParams {
    fn default() -> Self {
        Self { min_note_day_fraction: 0.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TextParams {
    /// Normalized Levenshtein cut-off for dictionary normalization.
    pub theta: f64,
    /// NegEx scope window in tokens.
    pub window: usize,
}

impl Default for TextParams {
    fn default() -> Self {
        Self { theta: DEFAULT_THETA, window: DEFAULT_WINDOW }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClusteringParams {
    pub k_min: usize,
    pub k_max: usize,
    pub seed: u64,
    pub kmeans: KMeansConfig,
}

impl Default for ClusteringParams {
    fn default() -> Self {
        Self { k_min: 2, k_max: 12, seed: 7, kmeans: KMeansConfig::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExplainParams {
    pub forest: ForestConfig,
    pub top_m: usize,
    /// Features listed per misclassified patient.
    pub misclassified_top: usize,
}

impl Default for ExplainParams {
    fn default() -> Self {
        Self { forest: ForestConfig::default(), top_m: 5, misclassified_top: 5 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathwayParams {
    /// Edges seen in fewer patients are left out of the DOT render.
    pub min_support: u64,
    pub top_m: usize,
}

impl Default for PathwayParams {
    fn default() -> Self {
        Self { min_support: 1, top_m: 2 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureSource {
    Ternary,
    Dense,
    /// Rows of `paths.external_features`, keyed by patient id.
    External,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PredictParams {
    /// Stage-1 representation fed to the state classifier.
    pub features: FeatureSource,
    pub subgroup: SubgroupClassifierConfig,
    pub state: StateClassifierConfig,
}

impl Default for PredictParams {
    fn default() -> Self {
        Self {
            features: FeatureSource::Ternary,
            subgroup: SubgroupClassifierConfig::default(),
            state: StateClassifierConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// Master seed; when set, every stage seed below is derived from it.
    pub seed: Option<u64>,
    pub paths: Paths,
    pub corpus: CorpusParams,
    pub textproc: TextParams,
    pub autoencoder: AutoencoderConfig,
    pub clustering: ClusteringParams,
    pub explain: ExplainParams,
    pub severity: SeverityThresholds,
    pub pathways: PathwayParams,
    pub predict: PredictParams,
    pub synth: GeneratorConfig,
}

/// Stage seeds after master-seed derivation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Seeds {
    pub master: Option<u64>,
    pub autoencoder: u64,
    pub clustering: u64,
    pub forest: u64,
    pub subgroup_classifier: u64,
    pub state_classifier: u64,
    pub synth: u64,
}

impl PipelineConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = fs::read_to_string(path)
            .map_err(|e| ConfigError::new(format!("cannot read config {}: {e}", path.display())))?;
        serde_json::from_str(&text)
            .map_err(|e| ConfigError::new(format!("config {}: {e}", path.display())))
    }

    /// Applies the master seed, if any, to every stage seed.
    pub fn with_derived_seeds(mut self) -> Self {
        if let Some(s) = self.seed {
            self.autoencoder.seed = rng::mix(s, 1);
            self.clustering.seed = rng::mix(s, 2);
            self.explain.forest.seed = rng::mix(s, 3);
            self.predict.subgroup.seed = rng::mix(s, 4);
            self.predict.state.seed = rng::mix(s, 5);
            self.synth.seed = rng::mix(s, 6);
        }
        self
    }

    pub fn seeds(&self) -> Seeds {
        Seeds {
            master: self.seed,
            autoencoder: self.autoencoder.seed,
            clustering: self.clustering.seed,
            forest: self.explain.forest.seed,
            subgroup_classifier: self.predict.subgroup.seed,
            state_classifier: self.predict.state.seed,
            synth: self.synth.seed,
        }
    }

    /// Digest of every parameter except locations; inputs are covered by
    /// their own digests in the manifest.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.paths = Paths::default();
        let bytes = serde_json::to_vec(&c).expect("config serializes");
        hex::encode(Sha256::digest(&bytes))
    }

    /// Collects every problem instead of stopping at the first.
    pub fn validate(&self, check_files: bool) -> Result<(), ConfigError> {
        let mut issues = Vec::new();
        let mut check = |r: Result<(), String>| {
            if let Err(e) = r {
                issues.push(e);
            }
        };
        let f = self.corpus.min_note_day_fraction;
        check(if (0.0..=1.0).contains(&f) { Ok(()) } else { Err(format!("corpus.min_note_day_fraction must be in [0, 1], got {f}")) });
        let t = self.textproc.theta;
        check(if (0.0..=1.0).contains(&t) { Ok(()) } else { Err(format!("textproc.theta must be in [0, 1], got {t}")) });
        check(if self.textproc.window > 0 { Ok(()) } else { Err("textproc.window must be positive".into()) });
        check(self.autoencoder.validate());
        let c = &self.clustering;
        check(if c.k_min >= 2 && c.k_min <= c.k_max {
            Ok(())
        } else {
            Err(format!("clustering needs 2 <= k_min <= k_max, got {}..{}", c.k_min, c.k_max))
        });
        check(if c.kmeans.max_iter > 0 && c.kmeans.n_init > 0 {
            Ok(())
        } else {
            Err("clustering.kmeans.max_iter and n_init must be positive".into())
        });
        check(self.explain.forest.validate());
        check(if self.explain.top_m > 0 { Ok(()) } else { Err("explain.top_m must be positive".into()) });
        check(self.severity.validate());
        check(if self.pathways.top_m > 0 { Ok(()) } else { Err("pathways.top_m must be positive".into()) });
        check(self.predict.subgroup.forest.validate());
        let tf = self.predict.subgroup.test_fraction;
        check(if tf > 0.0 && tf < 1.0 { Ok(()) } else { Err(format!("predict.subgroup.test_fraction must be in (0, 1), got {tf}")) });
        check(self.predict.state.validate());
        check(if self.predict.features != FeatureSource::External || self.paths.external_features.is_some() {
            Ok(())
        } else {
            Err("predict.features = external needs paths.external_features".into())
        });
        check(self.synth.resolve().map(|_| ()).map_err(|e| format!("synth: {e}")));
        if check_files {
            let p = &self.paths;
            for (name, path) in [
                ("notes", &p.notes),
                ("vitals", &p.vitals),
                ("demographics", &p.demographics),
                ("annotations", &p.annotations),
                ("lexicon", &p.lexicon),
                ("concept_dictionary", &p.concept_dictionary),
                ("negation_triggers", &p.negation_triggers),
                ("decease_patterns", &p.decease_patterns),
                ("flags", &p.flags),
                ("external_features", &p.external_features),
            ] {
                if let Some(path) = path {
                    if !path.is_file() {
                        issues.push(format!("paths.{name}: {} does not exist", path.display()));
                    }
                }
            }
        }
        if issues.is_empty() {
            Ok(())
        } else {
            Err(ConfigError { issues })
        }
    }

    /// Makes relative paths relative to `base`.
    pub fn resolve_paths(&mut self, base: &Path) {
        let p = &mut self.paths;
        for path in [
            &mut p.notes,
            &mut p.vitals,
            &mut p.demographics,
            &mut p.annotations,
            &mut p.lexicon,
            &mut p.concept_dictionary,
            &mut p.negation_triggers,
            &mut p.decease_patterns,
            &mut p.flags,
            &mut p.external_features,
        ]
        .into_iter()
        .flatten()
        {
            if path.is_relative() {
                *path = base.join(&*path);
            }
        }
        if p.output_dir.is_relative() {
            p.output_dir = base.join(&p.output_dir);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        PipelineConfig::default().validate(true).unwrap();
    }

    #[test]
    fn defaults_round_trip() {
        let c = PipelineConfig::default();
        let text = serde_json::to_string_pretty(&c).unwrap();
        assert_eq!(serde_json::from_str::<PipelineConfig>(&text).unwrap(), c);
        assert_eq!(serde_json::from_str::<PipelineConfig>("{}").unwrap(), c);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(serde_json::from_str::<PipelineConfig>(r#"{"textproc": {"thet": 0.3}}"#).is_err());
    }

    #[test]
    fn every_issue_is_reported() {
        let mut c = PipelineConfig::default();
        c.textproc.theta = 2.0;
        c.clustering.k_min = 1;
        c.paths.notes = Some("/nonexistent/notes.jsonl".into());
        let err = c.validate(true).unwrap_err();
        assert_eq!(err.issues.len(), 3, "{err}");
    }

    #[test]
    fn master_seed_changes_every_stage_seed() {
        let a = PipelineConfig { seed: Some(1), ..Default::default() }.with_derived_seeds();
        let b = PipelineConfig { seed: Some(2), ..Default::default() }.with_derived_seeds();
        let (sa, sb) = (a.seeds(), b.seeds());
        assert_ne!(sa.autoencoder, sb.autoencoder);
        assert_ne!(sa.synth, sb.synth);
        assert_ne!(a.hash(), b.hash());
    }

    #[test]
    fn hash_ignores_locations() {
        let a = PipelineConfig::default();
        let mut b = a.clone();
        b.paths.output_dir = "/elsewhere".into();
        assert_eq!(a.hash(), b.hash());
    }
}
