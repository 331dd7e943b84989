//! One function per subcommand. Each reads its upstream artifacts from the
//! output directory and writes its own through the [`Store`].

use std::collections::{BTreeMap, BTreeSet};
use std::io::Cursor;
use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use serde::Serialize;

use sepsis_core::corpus::{
    assemble_admissions, cohort_stats, load_demographics, load_notes, load_vitals, write_rejected_csv, Admission,
    CohortFilter, DeceasePatterns, ExcludedPatient,
};
use sepsis_core::pathways::{
    annotate_edges, estimate_transitions, export_network, label_transitions, stage2_distribution,
    write_stage2_heatmap_csv, EdgeAnnotation, OutcomeSequence, PatientPath, TransitionMatrix, TransitionOutcome,
};
use sepsis_core::pipeline::admission_stages;
use sepsis_core::predict::{
    predict_pathway, read_external_features, state_ablation, train_subgroup_classifier, ClassificationMetrics,
    PathwayPrediction, StateClassifier,
};
use sepsis_core::severity::{default_flag_config, severity_timeline, write_severity_csv, FlagConfig, SeverityTimeline};
use sepsis_core::subgroups::{
    explain_subgroups, misclassifications, read_clusters_csv, select_k, shap_all, train_forest, write_clusters_csv,
    write_silhouette_csv, Clustering,
};
use sepsis_core::synth::{
    generate_cohort, ground_truth_report, write_demographics_jsonl, write_notes_jsonl, write_vitals_csv,
};
use sepsis_core::textproc::{
    load_annotations, process_annotated_note, process_note, ConceptDictionary, ConceptLexicon, NegationTriggerSet,
    StructuredNote, TextResources,
};
use sepsis_core::timeline::{write_stages_jsonl, ConditionMap, StageSeries};
use sepsis_core::vectors::{
    build_vocabulary, encode_all, read_dense_csv, read_ternary_jsonl, stage_vectors, train_autoencoder,
    write_dense_csv, write_ternary_jsonl, ConceptVocabulary, TernaryVector,
};

use crate::config::{FeatureSource, PipelineConfig};
use crate::store::{parse_jsonl, Manifest, MissingArtifact, Store};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Step {
    Ingest,
    Structure,
    Stages,
    Vectors,
    Cluster,
    Explain,
    Severity,
    Pathways,
    Predict,
    Synth,
    All,
}

impl Step {
    /// The chain `all` runs, in order.
    pub const CHAIN: [Step; 9] = [
        Step::Ingest,
        Step::Structure,
        Step::Stages,
        Step::Vectors,
        Step::Cluster,
        Step::Explain,
        Step::Severity,
        Step::Pathways,
        Step::Predict,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Step::Ingest => "ingest",
            Step::Structure => "structure",
            Step::Stages => "stages",
            Step::Vectors => "vectors",
            Step::Cluster => "cluster",
            Step::Explain => "explain",
            Step::Severity => "severity",
            Step::Pathways => "pathways",
            Step::Predict => "predict",
            Step::Synth => "synth",
            Step::All => "all",
        }
    }
}

/// Runs one subcommand and returns the manifests it wrote.
pub fn run(step: Step, config: &PipelineConfig) -> Result<Vec<Manifest>> {
    config.validate(step != Step::Synth)?;
    let steps: Vec<Step> = if step == Step::All { Step::CHAIN.to_vec() } else { vec![step] };
    let mut manifests = Vec::new();
    for s in steps {
        let mut store = Store::new(&config.paths.output_dir, s.as_str(), config.hash(), config.seeds());
        match s {
            Step::Ingest => ingest(config, &mut store),
            Step::Structure => structure(config, &mut store),
            Step::Stages => stages(&mut store),
            Step::Vectors => vectors(config, &mut store),
            Step::Cluster => cluster(config, &mut store),
            Step::Explain => explain(config, &mut store),
            Step::Severity => severity(config, &mut store),
            Step::Pathways => pathways(config, &mut store),
            Step::Predict => predict(config, &mut store),
            Step::Synth => synth(config, &mut store),
            Step::All => unreachable!("expanded above"),
        }
        .with_context(|| format!("{} failed", s.as_str()))?;
        log::info!("{}: wrote {} artifacts", s.as_str(), store.manifest().outputs.len());
        manifests.push(store.finish()?);
    }
    if step == Step::All {
        let mut store = Store::new(&config.paths.output_dir, "all", config.hash(), config.seeds());
        let mut inputs = BTreeMap::new();
        let mut outputs = BTreeMap::new();
        for m in &manifests {
            for (k, v) in &m.inputs {
                if !outputs.contains_key(k) {
                    inputs.insert(k.clone(), v.clone());
                }
            }
            outputs.extend(m.outputs.clone());
        }
        let all = store_with(&mut store, inputs, outputs);
        manifests.push(all);
        store.finish()?;
    }
    Ok(manifests)
}

fn store_with(store: &mut Store, inputs: BTreeMap<String, String>, outputs: BTreeMap<String, String>) -> Manifest {
    store.set_digests(inputs, outputs);
    store.manifest().clone()
}

const SYNTH_DIR: &str = "synth";

/// A configured input, or the synthetic cohort's file when unset.
fn input_path(config: &PipelineConfig, configured: &Option<PathBuf>, synth_name: &str) -> Result<PathBuf> {
    if let Some(p) = configured {
        return Ok(p.clone());
    }
    let p = config.paths.output_dir.join(SYNTH_DIR).join(synth_name);
    if !p.is_file() {
        return Err(MissingArtifact { artifact: format!("{SYNTH_DIR}/{synth_name}"), producer: "synth" }.into());
    }
    Ok(p)
}

fn ingest(config: &PipelineConfig, store: &mut Store) -> Result<()> {
    let paths = &config.paths;
    let notes_path = input_path(config, &paths.notes, "notes.jsonl")?;
    let vitals_path = input_path(config, &paths.vitals, "vitals.csv")?;
    let demographics_path = match &paths.demographics {
        Some(p) => Some(p.clone()),
        None => {
            let p = paths.output_dir.join(SYNTH_DIR).join("demographics.jsonl");
            p.is_file().then_some(p)
        }
    };
    store.note_input("notes", &notes_path)?;
    store.note_input("vitals", &vitals_path)?;
    let notes = load_notes(&notes_path)?;
    let vitals = load_vitals(&vitals_path)?;
    let (demographics, demographics_rejected) = match &demographics_path {
        Some(p) => {
            store.note_input("demographics", p)?;
            load_demographics(p)?
        }
        None => (BTreeMap::new(), Vec::new()),
    };
    let patterns = match &paths.decease_patterns {
        Some(p) => {
            store.note_input("decease_patterns", p)?;
            DeceasePatterns::load(p)?
        }
        None => DeceasePatterns::default(),
    };
    let filter = CohortFilter { min_note_day_fraction: config.corpus.min_note_day_fraction };
    let cohort = assemble_admissions(&notes, &vitals, &demographics, &patterns, &filter);
    if cohort.admissions.is_empty() {
        bail!("no admissions left after ingest ({} patients excluded)", cohort.excluded.len());
    }
    let mut rejected = notes.rejected.clone();
    rejected.extend(vitals.rejected.iter().cloned());
    rejected.extend(demographics_rejected);
    if !rejected.is_empty() {
        log::warn!("{} input rows rejected, see rejected.csv", rejected.len());
    }
    let facts: Vec<_> = cohort.admissions.iter().map(Admission::facts).collect();
    store.write_jsonl("admissions.jsonl", &cohort.admissions)?;
    store.write_with("rejected.csv", |w| write_rejected_csv(&rejected, w))?;
    store.write_json("excluded.json", &cohort.excluded)?;
    store.write_json("cohort_summary.json", &cohort_stats(&facts)?)?;
    Ok(())
}

fn read_admissions(store: &mut Store) -> Result<Vec<Admission>> {
    parse_jsonl(&store.read("admissions.jsonl", "ingest")?, "admissions.jsonl")
}

fn text_resources(config: &PipelineConfig, store: &mut Store) -> Result<TextResources> {
    let paths = &config.paths;
    let mut res = TextResources::default();
    if let Some(p) = &paths.lexicon {
        store.note_input("lexicon", p)?;
        res.lexicon = ConceptLexicon::load(p)?;
    }
    if let Some(p) = &paths.concept_dictionary {
        store.note_input("concept_dictionary", p)?;
        res.dictionary = ConceptDictionary::load(p)?;
    }
    if let Some(p) = &paths.negation_triggers {
        store.note_input("negation_triggers", p)?;
        res.triggers = NegationTriggerSet::load(p)?;
    }
    res.theta = config.textproc.theta;
    res.window = config.textproc.window;
    Ok(res)
}

fn structure(config: &PipelineConfig, store: &mut Store) -> Result<()> {
    let admissions = read_admissions(store)?;
    let res = text_resources(config, store)?;
    let annotations = match &config.paths.annotations {
        Some(p) => {
            store.note_input("annotations", p)?;
            load_annotations(p)?
        }
        None => BTreeMap::new(),
    };
    let mut out = Vec::new();
    for adm in &admissions {
        for note in &adm.notes {
            let day = adm.day_of(note.chart_time);
            out.push(match annotations.get(&note.note_id) {
                Some(a) => process_annotated_note(note, day, a, &res)?,
                None => process_note(note, day, &res),
            });
        }
    }
    store.write_jsonl("structured_notes.jsonl", &out)
}

fn stages(store: &mut Store) -> Result<()> {
    let admissions = read_admissions(store)?;
    let notes: Vec<StructuredNote> =
        parse_jsonl(&store.read("structured_notes.jsonl", "structure")?, "structured_notes.jsonl")?;
    let mut by_patient: BTreeMap<&str, Vec<StructuredNote>> = BTreeMap::new();
    for n in &notes {
        by_patient.entry(n.patient_id.as_str()).or_default().push(n.clone());
    }
    let mut series = Vec::new();
    let mut excluded = Vec::new();
    for adm in &admissions {
        let own = by_patient.get(adm.patient_id.as_str()).map_or(&[][..], Vec::as_slice);
        match admission_stages(adm, own) {
            Ok((_, s)) => series.push(s),
            Err(e) => excluded.push(ExcludedPatient { patient_id: adm.patient_id.clone(), reason: e.to_string() }),
        }
    }
    if !excluded.is_empty() {
        log::warn!("{} admissions could not be segmented", excluded.len());
    }
    if series.is_empty() {
        bail!("no admission could be segmented into stages");
    }
    store.write_jsonl("stage_series.jsonl", &series)?;
    store.write_with("stages.jsonl", |w| write_stages_jsonl(&series, w))?;
    store.write_json("stage_excluded.json", &excluded)
}

fn read_series(store: &mut Store) -> Result<Vec<StageSeries>> {
    parse_jsonl(&store.read("stage_series.jsonl", "stages")?, "stage_series.jsonl")
}

fn vectors(config: &PipelineConfig, store: &mut Store) -> Result<()> {
    let series = read_series(store)?;
    let vocab = build_vocabulary(&series)?;
    let tv = stage_vectors(&series, &vocab)?;
    if config.autoencoder.latent_dim >= vocab.len() {
        log::warn!("latent size {} is not below |V| = {}", config.autoencoder.latent_dim, vocab.len());
    }
    let data: Vec<Vec<f64>> = tv.iter().map(TernaryVector::to_dense).collect();
    let model = train_autoencoder(&data, &config.autoencoder)?;
    log::info!(
        "autoencoder: |V| = {}, loss {:.4} -> {:.4}",
        vocab.len(),
        model.loss_curve.first().copied().unwrap_or(f64::NAN),
        model.final_loss().unwrap_or(f64::NAN)
    );
    let dense = encode_all(&model, &tv)?;
    store.write_json("vocabulary.json", &vocab)?;
    store.write_with("ternary.jsonl", |w| write_ternary_jsonl(&tv, w))?;
    let mut model_json = model.to_json()?.into_bytes();
    model_json.push(b'\n');
    store.write("autoencoder.json", &model_json)?;
    store.write_with("dense.csv", |w| write_dense_csv(&dense, w))
}

fn cluster(config: &PipelineConfig, store: &mut Store) -> Result<()> {
    let dense = read_dense_csv(Cursor::new(store.read("dense.csv", "vectors")?))?;
    let (ids, x): (Vec<String>, Vec<Vec<f64>>) =
        dense.into_iter().filter(|d| d.stage == 1).map(|d| (d.patient_id, d.values)).unzip();
    let c = &config.clustering;
    let (report, fits) = select_k(&x, c.k_min..=c.k_max, c.seed, &c.kmeans)?;
    let fit = fits.into_iter().find(|f| f.k == report.best_k).expect("best k was fitted");
    log::info!("cluster: k* = {} over {} patients", fit.k, ids.len());
    store.write_with("clusters.csv", |w| write_clusters_csv(&ids, &fit.labels, w))?;
    store.write_with("silhouette.csv", |w| write_silhouette_csv(&report, w))?;
    store.write_json("clustering.json", &fit)
}

/// Stage-1 ternary rows of clustered patients, in vector order.
struct Stage1 {
    vocab: ConceptVocabulary,
    ids: Vec<String>,
    x: Vec<Vec<f64>>,
    labels: Vec<usize>,
    k: usize,
}

fn read_stage1(store: &mut Store) -> Result<Stage1> {
    let vocab: ConceptVocabulary =
        serde_json::from_slice(&store.read("vocabulary.json", "vectors")?).context("vocabulary.json")?;
    let tv = read_ternary_jsonl(Cursor::new(store.read("ternary.jsonl", "vectors")?), vocab.len())?;
    let clusters = read_clusters_csv(Cursor::new(store.read("clusters.csv", "cluster")?))?;
    let clustering: Clustering =
        serde_json::from_slice(&store.read("clustering.json", "cluster")?).context("clustering.json")?;
    let mut s = Stage1 { vocab, ids: Vec::new(), x: Vec::new(), labels: Vec::new(), k: clustering.k };
    for v in tv.iter().filter(|v| v.stage == 1) {
        if let Some(&label) = clusters.get(&v.patient_id) {
            s.ids.push(v.patient_id.clone());
            s.x.push(v.to_dense());
            s.labels.push(label);
        }
    }
    if s.ids.is_empty() {
        bail!("no clustered patient has a stage-1 vector");
    }
    Ok(s)
}

fn explain(config: &PipelineConfig, store: &mut Store) -> Result<()> {
    let s = read_stage1(store)?;
    let res = text_resources(config, store)?;
    let p = &config.explain;
    let forest = train_forest(&s.x, &s.labels, &p.forest)?;
    let shap = shap_all(&forest, &s.x)?;
    let profiles = explain_subgroups(&shap, &s.x, &s.labels, s.k, &s.vocab, &res.dictionary, p.top_m)?;
    let missed = misclassifications(&forest, &s.ids, &s.x, &s.labels, &shap, &s.vocab, p.misclassified_top)?;
    log::info!("explain: {} of {} patients misclassified by the forest", missed.len(), s.ids.len());
    store.write_json("shap_summary.json", &profiles)?;
    store.write_json("misclassified.json", &missed)?;
    store.write_json("forest.json", &forest)
}

fn flag_config(config: &PipelineConfig, store: &mut Store) -> Result<FlagConfig> {
    Ok(match &config.paths.flags {
        Some(p) => {
            store.note_input("flags", p)?;
            FlagConfig::load(p)?
        }
        None => default_flag_config(),
    })
}

fn severity(config: &PipelineConfig, store: &mut Store) -> Result<()> {
    let admissions = read_admissions(store)?;
    let series = read_series(store)?;
    let flags = flag_config(config, store)?;
    let by_id: BTreeMap<&str, &Admission> = admissions.iter().map(|a| (a.patient_id.as_str(), a)).collect();
    let mut timelines = Vec::with_capacity(series.len());
    let mut outcomes = Vec::with_capacity(series.len());
    for s in &series {
        let adm = by_id
            .get(s.patient_id.as_str())
            .with_context(|| format!("stage series for unknown admission {}", s.patient_id))?;
        let tl = severity_timeline(s, &adm.vitals, adm.admit_date, &flags, &config.severity);
        outcomes.push(OutcomeSequence { patient_id: s.patient_id.clone(), outcomes: label_transitions(&tl) });
        timelines.push(tl);
    }
    store.write_with("severity.csv", |w| write_severity_csv(&timelines, w))?;
    store.write_jsonl::<SeverityTimeline>("severity.jsonl", &timelines)?;
    store.write_jsonl("outcomes.jsonl", &outcomes)
}

fn read_outcomes(store: &mut Store) -> Result<Vec<OutcomeSequence>> {
    parse_jsonl(&store.read("outcomes.jsonl", "severity")?, "outcomes.jsonl")
}

fn pathways(config: &PipelineConfig, store: &mut Store) -> Result<()> {
    let outcomes = read_outcomes(store)?;
    let clusters = read_clusters_csv(Cursor::new(store.read("clusters.csv", "cluster")?))?;
    let series = read_series(store)?;
    let maps: BTreeMap<&str, Vec<ConditionMap>> = series
        .iter()
        .map(|s| (s.patient_id.as_str(), s.stages.iter().map(|st| st.conditions.clone()).collect()))
        .collect();
    let matrices = estimate_transitions(&outcomes, &clusters);
    let stage2 = stage2_distribution(&outcomes, &clusters);
    let paths: Vec<PatientPath> = outcomes
        .iter()
        .filter_map(|o| {
            Some(PatientPath {
                subgroup: *clusters.get(&o.patient_id)?,
                outcomes: &o.outcomes,
                stages: maps.get(o.patient_id.as_str())?,
            })
        })
        .collect();
    let annotations: Vec<EdgeAnnotation> = annotate_edges(&paths, config.pathways.top_m);
    let dot = export_network(&matrices, &annotations, "dot", config.pathways.min_support)?;
    let json = export_network(&matrices, &annotations, "json", config.pathways.min_support)?;
    store.write_json("transitions.json", &matrices)?;
    store.write_json("edge_annotations.json", &annotations)?;
    store.write_with("stage2_heatmap.csv", |w| write_stage2_heatmap_csv(&stage2, w))?;
    store.write("network.dot", dot.as_bytes())?;
    store.write("network.json", json.as_bytes())
}

#[derive(Serialize)]
struct ModelReport<'a, C: Serialize> {
    model: &'a str,
    seed: u64,
    #[serde(flatten)]
    metrics: &'a ClassificationMetrics,
    train_size: usize,
    test_size: usize,
    config: &'a C,
}

#[derive(Serialize)]
struct Metrics<'a> {
    n_patients: usize,
    k: usize,
    state_features: FeatureSource,
    state_excluded: usize,
    subgroup_classifier: ModelReport<'a, sepsis_core::predict::SubgroupClassifierConfig>,
    state_with_subgroup: ModelReport<'a, sepsis_core::predict::StateClassifierConfig>,
    state_without_subgroup: ModelReport<'a, sepsis_core::predict::StateClassifierConfig>,
}

#[derive(Serialize)]
struct PatientPrediction<'a> {
    patient_id: &'a str,
    #[serde(flatten)]
    prediction: PathwayPrediction,
}

fn state_report<'a>(
    name: &'a str,
    m: &'a StateClassifier,
    config: &'a sepsis_core::predict::StateClassifierConfig,
) -> ModelReport<'a, sepsis_core::predict::StateClassifierConfig> {
    ModelReport {
        model: name,
        seed: config.seed,
        metrics: &m.evaluation,
        train_size: m.train_indices.len(),
        test_size: m.test_indices.len(),
        config,
    }
}

fn predict(config: &PipelineConfig, store: &mut Store) -> Result<()> {
    let s = read_stage1(store)?;
    let outcomes = read_outcomes(store)?;
    let matrices: Vec<TransitionMatrix> =
        serde_json::from_slice(&store.read("transitions.json", "pathways")?).context("transitions.json")?;
    let first: BTreeMap<&str, TransitionOutcome> = outcomes
        .iter()
        .filter_map(|o| Some((o.patient_id.as_str(), *o.outcomes.first()?)))
        .collect();

    let base: BTreeMap<String, Vec<f64>> = match config.predict.features {
        FeatureSource::Ternary => s.ids.iter().cloned().zip(s.x.iter().cloned()).collect(),
        FeatureSource::Dense => read_dense_csv(Cursor::new(store.read("dense.csv", "vectors")?))?
            .into_iter()
            .filter(|d| d.stage == 1)
            .map(|d| (d.patient_id, d.values))
            .collect(),
        FeatureSource::External => {
            let p = config.paths.external_features.as_ref().expect("validated");
            store.note_input("external_features", p)?;
            read_external_features(std::fs::File::open(p).with_context(|| p.display().to_string())?)?
        }
    };

    let keep: Vec<usize> = (0..s.ids.len())
        .filter(|&i| first.contains_key(s.ids[i].as_str()) && base.contains_key(&s.ids[i]))
        .collect();
    let dropped: BTreeSet<&str> = (0..s.ids.len()).filter(|i| !keep.contains(i)).map(|i| s.ids[i].as_str()).collect();
    if !dropped.is_empty() {
        log::warn!("predict: {} patients lack an outcome or features and are skipped", dropped.len());
    }
    let ids: Vec<&str> = keep.iter().map(|&i| s.ids[i].as_str()).collect();
    let x: Vec<Vec<f64>> = keep.iter().map(|&i| s.x[i].clone()).collect();
    let labels: Vec<usize> = keep.iter().map(|&i| s.labels[i]).collect();
    let y: Vec<TransitionOutcome> = ids.iter().map(|id| first[id]).collect();
    let features: Vec<Vec<f64>> = ids.iter().map(|id| base[*id].clone()).collect();

    let p = &config.predict;
    let subgroup = train_subgroup_classifier(&x, &labels, s.k, &p.subgroup)?;
    let ablation = state_ablation(&features, &y, &labels, s.k, &p.state)?;
    log::info!(
        "predict: subgroup accuracy {:.3}, state accuracy {:.3} with subgroup / {:.3} without",
        subgroup.evaluation.accuracy,
        ablation.with_subgroup.evaluation.accuracy,
        ablation.without_subgroup.evaluation.accuracy
    );
    let mut predictions = Vec::with_capacity(subgroup.test_indices.len());
    for &i in &subgroup.test_indices {
        let prediction = predict_pathway(&x[i], &features[i], &subgroup, &ablation.with_subgroup, &matrices)?;
        predictions.push(PatientPrediction { patient_id: ids[i], prediction });
    }
    let metrics = Metrics {
        n_patients: ids.len(),
        k: s.k,
        state_features: p.features,
        state_excluded: ablation.with_subgroup.n_excluded,
        subgroup_classifier: ModelReport {
            model: match p.subgroup.kind {
                sepsis_core::predict::SubgroupModelKind::DecisionTree => "decision_tree",
                sepsis_core::predict::SubgroupModelKind::RandomForest => "random_forest",
            },
            seed: p.subgroup.seed,
            metrics: &subgroup.evaluation,
            train_size: subgroup.train_indices.len(),
            test_size: subgroup.test_indices.len(),
            config: &p.subgroup,
        },
        state_with_subgroup: state_report("nn_with_subgroup", &ablation.with_subgroup, &p.state),
        state_without_subgroup: state_report("nn_without_subgroup", &ablation.without_subgroup, &p.state),
    };
    store.write_json("metrics.json", &metrics)?;
    store.write_json("subgroup_model.json", &subgroup)?;
    store.write_json("state_model.json", &ablation.with_subgroup)?;
    store.write_jsonl("predictions.jsonl", &predictions)
}

fn synth(config: &PipelineConfig, store: &mut Store) -> Result<()> {
    let cohort = generate_cohort(&config.synth)?;
    log::info!(
        "synth: {} patients, {} notes, {} vitals",
        cohort.truth.patients.len(),
        cohort.notes.len(),
        cohort.vitals.len()
    );
    store.write_with("synth/notes.jsonl", |w| write_notes_jsonl(&cohort.notes, w))?;
    store.write_with("synth/vitals.csv", |w| write_vitals_csv(&cohort.vitals, w))?;
    store.write_with("synth/demographics.jsonl", |w| write_demographics_jsonl(&cohort.demographics, w))?;
    store.write("synth/ground_truth.json", ground_truth_report(&cohort.truth)?.as_bytes())
}
