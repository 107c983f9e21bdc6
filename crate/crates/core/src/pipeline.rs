//! End-to-end runs: inputs → KG → dataset → training → evaluation →
//! optional explanation, with every artifact and a manifest of input
//! hashes under one output directory.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use log::{info, warn};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::attribution::rank_entities;
use crate::dataset::{
    assemble_split, build_samples, read_adr_records, read_synergy, split_drugs, DatasetSplit,
    LabelVector, Polarity, SampleMode, SplitStats, Triplet,
};
use crate::error::{Error, Result};
use crate::features::FeatureTable;
use crate::kg::{EntityKind, KgVariant, KnowledgeGraph, RelationCatalog};
use crate::metrics::MetricsReport;
use crate::model::{load_association_matrix, Model, ModelConfig, ModelVariant};
use crate::synthetic::{self, SyntheticConfig};
use crate::train::{epoch_log_tsv, score_triplets, train_loop, TrainConfig};

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Paths {
    pub edges: Option<PathBuf>,
    /// Base relation catalog JSON; the built-in 27-row table otherwise.
    pub relations: Option<PathBuf>,
    pub features: Option<PathBuf>,
    pub adr_records: Option<PathBuf>,
    pub synergy: Option<PathBuf>,
    /// 15×15 association matrix for the fixed-matrix variant.
    pub assoc: Option<PathBuf>,
    pub out_dir: PathBuf,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DatasetConfig {
    pub mode: SampleMode,
    pub seed: u64,
    pub ratios: (u32, u32, u32),
    pub swap_valid_test: bool,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            mode: SampleMode::D,
            seed: 10,
            ratios: (8, 1, 1),
            swap_valid_test: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExplainConfig {
    /// Pairs to explain; empty means the first positive test pair.
    pub pairs: Vec<(String, String)>,
    pub top_k: usize,
    pub kind: Option<EntityKind>,
}

impl Default for ExplainConfig {
    fn default() -> Self {
        Self {
            pairs: Vec::new(),
            top_k: 8,
            kind: Some(EntityKind::GeneProtein),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub paths: Paths,
    /// Generate planted-signal inputs instead of reading `paths`.
    pub synthetic: Option<SyntheticConfig>,
    pub kg_variant: KgVariant,
    pub dataset: DatasetConfig,
    pub model: ModelConfig,
    pub model_seed: u64,
    pub train: TrainConfig,
    pub explain: Option<ExplainConfig>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            paths: Paths {
                out_dir: PathBuf::from("out"),
                ..Default::default()
            },
            synthetic: None,
            kg_variant: KgVariant::Basic,
            dataset: DatasetConfig::default(),
            model: ModelConfig::default(),
            model_seed: 0,
            train: TrainConfig::default(),
            explain: None,
        }
    }
}

impl RunConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }

    /// Sets every seed (synthetic data, split, model, training) at once.
    pub fn set_seed(&mut self, seed: u64) {
        self.dataset.seed = seed;
        self.model_seed = seed;
        self.train.seed = seed;
        if let Some(s) = &mut self.synthetic {
            s.seed = seed;
        }
    }

    /// Desk-scale settings for planted-signal runs.
    pub fn synthetic_defaults(seed: u64) -> Self {
        let mut cfg = Self {
            synthetic: Some(SyntheticConfig::default()),
            dataset: DatasetConfig {
                mode: SampleMode::R,
                ..Default::default()
            },
            model: ModelConfig {
                layers: 3,
                hidden: 16,
                organ_dim: 16,
                heads: 4,
                ..Default::default()
            },
            train: TrainConfig {
                learning_rate: 1e-2,
                batch_size: 32,
                max_epochs: 50,
                patience: 50,
                ..Default::default()
            },
            ..Default::default()
        };
        cfg.set_seed(seed);
        cfg
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FailureKind {
    Validation,
    Stage,
}

/// A stage failure with its stage name.
#[derive(Debug)]
pub struct PipelineError {
    pub stage: &'static str,
    pub kind: FailureKind,
    pub source: Error,
}

impl std::fmt::Display for PipelineError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "stage `{}` failed: {}", self.stage, self.source)
    }
}

impl std::error::Error for PipelineError {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        Some(&self.source)
    }
}

impl PipelineError {
    /// 2 for validation errors, 3 for stage failures.
    pub fn exit_code(&self) -> i32 {
        match self.kind {
            FailureKind::Validation => 2,
            FailureKind::Stage => 3,
        }
    }
}

/// Whether an error is a validation problem (exit 2) or a stage failure (exit 3).
pub fn classify(e: &Error) -> FailureKind {
    match e {
        Error::Config(_)
        | Error::Parse { .. }
        | Error::UnknownRelation { .. }
        | Error::KindMismatch { .. } => FailureKind::Validation,
        Error::SynergyRelation { .. } | Error::EntityKindConflict { .. } | Error::Dimension(_) => {
            FailureKind::Validation
        }
        Error::Io { source, .. } if source.kind() == std::io::ErrorKind::NotFound => {
            FailureKind::Validation
        }
        _ => FailureKind::Stage,
    }
}

trait StageExt<T> {
    fn stage(self, stage: &'static str) -> std::result::Result<T, PipelineError>;
}

impl<T> StageExt<T> for Result<T> {
    fn stage(self, stage: &'static str) -> std::result::Result<T, PipelineError> {
        self.map_err(|source| PipelineError {
            stage,
            kind: classify(&source),
            source,
        })
    }
}

pub fn sha256_file(path: impl AsRef<Path>) -> Result<String> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FileHash {
    pub path: String,
    pub sha256: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KgSummary {
    pub entities: usize,
    pub edges: usize,
    pub removed_edges: usize,
    pub finalized_edges: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub kg_variant: KgVariant,
    pub model_variant: ModelVariant,
    pub dataset_mode: SampleMode,
    pub dataset_seed: u64,
    pub model_seed: u64,
    pub train_seed: u64,
    pub swap_valid_test: bool,
    pub inputs: BTreeMap<String, FileHash>,
    pub kg: KgSummary,
    pub dataset: SplitStats,
    pub best_epoch: usize,
    pub best_valid_roc_auc: Option<f64>,
    /// Output files relative to the run directory, with hashes.
    pub artifacts: BTreeMap<String, String>,
}

#[derive(Clone, Debug)]
pub struct RunSummary {
    pub out_dir: PathBuf,
    pub manifest: Manifest,
    pub test_report: MetricsReport,
}

fn write(path: &Path, text: &str) -> Result<()> {
    crate::error::write_file(path, text)
}

fn require(p: &Option<PathBuf>, what: &str) -> Result<PathBuf> {
    let p = p
        .clone()
        .ok_or_else(|| Error::Config(format!("missing path for {what}")))?;
    if !p.exists() {
        return Err(Error::Config(format!(
            "{what} file not found: {}",
            p.display()
        )));
    }
    Ok(p)
}

/// Loads the edge file and applies the KG variant. Returns the graph and
/// the number of removed edges.
pub fn build_kg(
    edges: &Path,
    relations: Option<&Path>,
    variant: KgVariant,
) -> Result<(KnowledgeGraph, usize)> {
    let catalog = match relations {
        Some(p) => RelationCatalog::from_json_file(p)?,
        None => RelationCatalog::primekg(),
    };
    let g = KnowledgeGraph::load_edges(edges, &catalog)?;
    let (g, removed) = g.ablate(variant);
    info!(
        "kg {}: {} entities, {} edges ({} removed)",
        variant.as_str(),
        g.num_entities(),
        g.edges().len(),
        removed.len()
    );
    Ok((g, removed.len()))
}

/// Drugs that have both features and a node in the graph.
pub fn drug_pool(graph: &KnowledgeGraph, features: &FeatureTable) -> BTreeSet<String> {
    graph
        .entities()
        .iter()
        .filter(|e| e.kind == EntityKind::Drug && features.get(&e.id).is_some())
        .map(|e| e.id.clone())
        .collect()
}

pub fn build_dataset(
    records: &Path,
    synergy: Option<&Path>,
    pool: &BTreeSet<String>,
    cfg: &DatasetConfig,
) -> Result<DatasetSplit> {
    let records = read_adr_records(records)?;
    let synergy = match synergy {
        Some(p) => read_synergy(p)?,
        None if cfg.mode == SampleMode::D => {
            return Err(Error::Config("mode D needs a synergy file".into()));
        }
        None => BTreeSet::new(),
    };
    let (pos, neg) = build_samples(&records, &synergy, cfg.mode, pool, cfg.seed)?;
    let part = split_drugs(pool, cfg.ratios, cfg.seed)?;
    let mut split = assemble_split(&pos, &neg, &part, cfg.mode, cfg.seed);
    for w in &split.warnings {
        warn!("{w}");
    }
    if cfg.swap_valid_test {
        split = split.swap_valid_test();
    }
    Ok(split)
}

pub fn evaluate(
    model: &Model,
    graph: &KnowledgeGraph,
    features: &FeatureTable,
    samples: &[crate::dataset::Triplet],
) -> Result<MetricsReport> {
    let scores = score_triplets(model, graph, features, samples)?;
    let truth: Vec<_> = samples.iter().map(|t| t.labels).collect();
    MetricsReport::compute(&scores, &truth)
}

/// Runs every stage. Artifacts land in `cfg.paths.out_dir`.
pub fn run_pipeline(cfg: &RunConfig) -> std::result::Result<RunSummary, PipelineError> {
    let mut cfg = cfg.clone();
    let out = cfg.paths.out_dir.clone();
    cfg.model.validate().stage("config")?;
    cfg.train.validate().stage("config")?;
    std::fs::create_dir_all(&out)
        .map_err(|e| Error::io(&out, e))
        .stage("config")?;

    if let Some(syn) = &cfg.synthetic {
        let dir = out.join("inputs");
        let data = synthetic::generate(syn).stage("synthetic")?;
        data.write_dir(&dir).stage("synthetic")?;
        cfg.paths.edges = Some(dir.join(synthetic::EDGES_FILE));
        cfg.paths.features = Some(dir.join(synthetic::FEATURES_FILE));
        cfg.paths.adr_records = Some(dir.join(synthetic::RECORDS_FILE));
        cfg.paths.synergy = Some(dir.join(synthetic::SYNERGY_FILE));
        if cfg.paths.assoc.is_none() {
            cfg.paths.assoc = Some(dir.join(synthetic::ASSOC_FILE));
        }
    }
    let edges = require(&cfg.paths.edges, "edges").stage("inputs")?;
    let feats_path = require(&cfg.paths.features, "features").stage("inputs")?;
    let records_path = require(&cfg.paths.adr_records, "adr_records").stage("inputs")?;
    let synergy_path = match &cfg.paths.synergy {
        Some(_) => Some(require(&cfg.paths.synergy, "synergy").stage("inputs")?),
        None => None,
    };
    let assoc = if cfg.model.variant == ModelVariant::Ablated1FixedMatrix {
        let p = require(&cfg.paths.assoc, "association matrix").stage("inputs")?;
        Some(load_association_matrix(&p).stage("inputs")?)
    } else {
        None
    };

    let features = FeatureTable::load(&feats_path, None).stage("inputs")?;
    cfg.model.input_dim = features.spec.total();
    write(
        &out.join("config.resolved.json"),
        &cfg.to_json().stage("config")?,
    )
    .stage("config")?;

    let mut inputs = BTreeMap::new();
    let mut hash_input = |name: &str, p: &Path| -> std::result::Result<(), PipelineError> {
        inputs.insert(
            name.to_string(),
            FileHash {
                path: p.display().to_string(),
                sha256: sha256_file(p).stage("inputs")?,
            },
        );
        Ok(())
    };
    hash_input("edges", &edges)?;
    hash_input("features", &feats_path)?;
    hash_input("adr_records", &records_path)?;
    if let Some(p) = &synergy_path {
        hash_input("synergy", p)?;
    }
    if let Some(p) = &cfg.paths.relations {
        hash_input("relations", p)?;
    }
    if assoc.is_some() {
        hash_input("assoc", cfg.paths.assoc.as_ref().expect("checked"))?;
    }

    let (graph, removed) =
        build_kg(&edges, cfg.paths.relations.as_deref(), cfg.kg_variant).stage("build-kg")?;
    write(
        &out.join("kg/stats.tsv"),
        &(graph.stats_lines().join("\n") + "\n"),
    )
    .stage("build-kg")?;

    let pool = drug_pool(&graph, &features);
    let split = build_dataset(&records_path, synergy_path.as_deref(), &pool, &cfg.dataset)
        .stage("build-dataset")?;
    split
        .write_dir(out.join("dataset"))
        .stage("build-dataset")?;

    let final_graph = graph.finalize_for_training(&split.train).stage("train")?;
    final_graph
        .save(out.join("kg/graph.json"))
        .stage("build-kg")?;
    let model = Model::new(
        cfg.model.clone(),
        features.spec,
        final_graph.catalog().len(),
        assoc,
        cfg.model_seed,
    )
    .stage("train")?;
    let outcome = train_loop(model, &split, &final_graph, &features, &cfg.train).stage("train")?;
    outcome
        .best
        .save(out.join("train/checkpoint.json"))
        .stage("train")?;
    write(
        &out.join("train/epoch_log.tsv"),
        &epoch_log_tsv(&outcome.log),
    )
    .stage("train")?;

    let test_report =
        evaluate(&outcome.best, &final_graph, &features, &split.test).stage("evaluate")?;
    let valid_report =
        evaluate(&outcome.best, &final_graph, &features, &split.valid).stage("evaluate")?;
    write(
        &out.join("eval/report.json"),
        &(test_report.to_json().stage("evaluate")? + "\n"),
    )
    .stage("evaluate")?;
    write(&out.join("eval/radar.tsv"), &test_report.radar_tsv()).stage("evaluate")?;
    write(
        &out.join("eval/valid_report.json"),
        &(valid_report.to_json().stage("evaluate")? + "\n"),
    )
    .stage("evaluate")?;

    if let Some(ex) = &cfg.explain {
        let pairs = if ex.pairs.is_empty() {
            split
                .test
                .iter()
                .find(|t| t.labels.any())
                .map(|t| t.pair())
                .into_iter()
                .collect()
        } else {
            ex.pairs.clone()
        };
        for (p, q) in pairs {
            let r = rank_entities(
                &outcome.best,
                &final_graph,
                &features,
                &p,
                &q,
                ex.top_k,
                ex.kind,
            )
            .stage("explain")?;
            let stem = format!("explain/{}_{}", r.pair.0, r.pair.1);
            write(&out.join(format!("{stem}.ranking.tsv")), &r.to_tsv()).stage("explain")?;
            write(
                &out.join(format!("{stem}.edges.tsv")),
                &r.induced_edges_tsv(&final_graph),
            )
            .stage("explain")?;
        }
    }

    let mut manifest = Manifest {
        tool: format!("crossadr {}", env!("CARGO_PKG_VERSION")),
        kg_variant: cfg.kg_variant,
        model_variant: cfg.model.variant,
        dataset_mode: cfg.dataset.mode,
        dataset_seed: cfg.dataset.seed,
        model_seed: cfg.model_seed,
        train_seed: cfg.train.seed,
        swap_valid_test: cfg.dataset.swap_valid_test,
        inputs,
        kg: KgSummary {
            entities: graph.num_entities(),
            edges: graph.edges().len(),
            removed_edges: removed,
            finalized_edges: final_graph.edges().len(),
        },
        dataset: split.stats(),
        best_epoch: outcome.best_epoch,
        best_valid_roc_auc: outcome.best_valid_roc_auc,
        artifacts: BTreeMap::new(),
    };
    manifest.artifacts = collect_artifacts(&out).stage("manifest")?;
    write(
        &out.join("manifest.json"),
        &(serde_json::to_string_pretty(&manifest)
            .map_err(Error::from)
            .stage("manifest")?
            + "\n"),
    )
    .stage("manifest")?;
    Ok(RunSummary {
        out_dir: out,
        manifest,
        test_report,
    })
}

fn collect_artifacts(root: &Path) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in std::fs::read_dir(&dir).map_err(|e| Error::io(&dir, e))? {
            let path = entry.map_err(|e| Error::io(&dir, e))?.path();
            if path.is_dir() {
                stack.push(path);
            } else if path.file_name().is_some_and(|n| n != "manifest.json") {
                let rel = path
                    .strip_prefix(root)
                    .unwrap_or(&path)
                    .to_string_lossy()
                    .replace('\\', "/");
                out.insert(rel, sha256_file(&path)?);
            }
        }
    }
    Ok(out)
}

/// Settings for the `gradcheck` command.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GradcheckConfig {
    pub model: ModelConfig,
    pub seeds: Vec<u64>,
    pub step: f64,
    /// Entries probed per tensor; tensors of the fixture are small enough
    /// that the default checks every entry.
    pub max_per_tensor: usize,
}

impl Default for GradcheckConfig {
    fn default() -> Self {
        Self {
            model: ModelConfig {
                layers: 2,
                hidden: 4,
                organ_dim: 4,
                heads: 2,
                ..Default::default()
            },
            seeds: vec![1, 2, 3],
            step: 1e-5,
            max_per_tensor: usize::MAX,
        }
    }
}

/// Six-entity graph for the gradient check: drugs D0–D2, proteins G0–G1 and
/// one phenotype, finalized with the training pair (D0, D2). Returns the
/// graph, random features for the drugs and a three-sample batch that covers
/// a reachable pair, the masked training pair and a negative.
pub fn gradcheck_fixture(
    feature_seed: u64,
) -> Result<(KnowledgeGraph, FeatureTable, Vec<Triplet>)> {
    use EntityKind::*;
    let catalog = RelationCatalog::primekg();
    let mut g = KnowledgeGraph::new(catalog.clone());
    for (id, kind) in [
        ("D0", Drug),
        ("D1", Drug),
        ("D2", Drug),
        ("G0", GeneProtein),
        ("G1", GeneProtein),
        ("E0", EffectPhenotype),
    ] {
        g.add_entity(id, kind)?;
    }
    let target = catalog.lookup("target", Drug, GeneProtein, 0)?;
    let targeted = catalog.lookup("target", GeneProtein, Drug, 0)?;
    let ppi = catalog.lookup("ppi", GeneProtein, GeneProtein, 0)?;
    let assoc = catalog.lookup("associated with", GeneProtein, EffectPhenotype, 0)?;
    for (h, r, t) in [
        (0, target, 3),
        (3, targeted, 1),
        (1, target, 4),
        (4, targeted, 2),
        (3, ppi, 4),
        (4, ppi, 3),
        (4, assoc, 5),
        (2, target, 3),
        (3, targeted, 0),
    ] {
        g.add_edge(h, r, t)?;
    }
    let mut l01 = LabelVector::zeros();
    for o in [0, 2, 14] {
        l01.set(o, true);
    }
    let mut l02 = LabelVector::zeros();
    for o in [1, 3] {
        l02.set(o, true);
    }
    let batch = vec![
        Triplet::new("D0", "D1", l01, Polarity::Positive)?,
        Triplet::new("D0", "D2", l02, Polarity::Positive)?,
        Triplet::new("D1", "D2", LabelVector::zeros(), Polarity::Negative)?,
    ];
    let graph = g.finalize_for_training(&batch[1..2])?;
    let features = synthetic::random_features_for(
        &graph,
        crate::features::SegmentSpec::new(3, 2, 3, 2),
        feature_seed,
    )?;
    Ok((graph, features, batch))
}

/// One report per seed on [`gradcheck_fixture`]; the seed drives both the
/// parameters and the features.
pub fn run_gradcheck(cfg: &GradcheckConfig) -> Result<Vec<crate::train::GradCheckReport>> {
    cfg.seeds
        .iter()
        .map(|&seed| {
            let (graph, features, batch) = gradcheck_fixture(seed)?;
            let mut model_cfg = cfg.model.clone();
            model_cfg.input_dim = features.spec.total();
            let assoc = (model_cfg.variant == ModelVariant::Ablated1FixedMatrix)
                .then(|| crate::linalg::Matrix::identity(crate::NUM_ORGANS));
            let model = Model::new(model_cfg, features.spec, graph.catalog().len(), assoc, seed)?;
            crate::train::gradcheck(
                &model,
                &graph,
                &features,
                &batch,
                cfg.step,
                cfg.max_per_tensor,
                seed,
            )
        })
        .collect()
}
