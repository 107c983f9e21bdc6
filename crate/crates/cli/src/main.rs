use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use log::info;

use crossadr::dataset::{read_triplets, DatasetSplit, SampleMode};
use crossadr::features::{FeatureTable, SegmentSpec};
use crossadr::kg::{EntityKind, KgVariant, KnowledgeGraph};
use crossadr::metrics::{compare_runs, read_runs};
use crossadr::model::{load_association_matrix, Model, ModelVariant};
use crossadr::pipeline::{
    build_dataset, build_kg, classify, drug_pool, evaluate, run_gradcheck, run_pipeline,
    DatasetConfig, FailureKind, GradcheckConfig, PipelineError, RunConfig,
};
use crossadr::synthetic::{generate, random_features_for, SyntheticConfig};
use crossadr::train::{epoch_log_tsv, train_loop};

#[derive(Parser)]
#[command(
    name = "crossadr",
    version,
    about = "Organ-level ADR prediction over a biomedical knowledge graph"
)]
struct Cli {
    /// Seed for every random choice the subcommand makes.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Log level (error, warn, info, debug).
    #[arg(long, global = true, default_value = "info")]
    log: String,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Load an edge TSV, apply a KG variant and save the graph as JSON.
    BuildKg {
        #[arg(long)]
        edges: PathBuf,
        #[arg(long)]
        relations: Option<PathBuf>,
        #[arg(long, default_value = "basic")]
        variant: KgVariant,
        #[arg(long)]
        out: PathBuf,
    },
    /// Build a drug-disjoint train/valid/test split.
    BuildDataset {
        #[arg(long)]
        records: PathBuf,
        #[arg(long)]
        synergy: Option<PathBuf>,
        #[arg(long)]
        features: PathBuf,
        /// Graph JSON from `build-kg`; restricts the drug pool to graph drugs.
        #[arg(long)]
        graph: PathBuf,
        #[arg(long, default_value = "d")]
        mode: SampleMode,
        #[arg(long, default_value = "8:1:1")]
        ratios: String,
        #[arg(long)]
        swap_valid_test: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Random feature vectors for every drug of a graph.
    GenSyntheticFeatures {
        #[arg(long)]
        graph: PathBuf,
        /// Segment lengths desc,path,maccs,morgan.
        #[arg(long, default_value = "210,512,167,135")]
        segments: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Planted-signal KG, features, records and ground truth.
    GenSynthetic {
        #[arg(long, default_value_t = 200)]
        n_drugs: usize,
        #[arg(long, default_value_t = 120)]
        n_proteins: usize,
        #[arg(long, default_value_t = 30)]
        n_phenotypes: usize,
        #[arg(long, default_value_t = 20)]
        n_diseases: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train from a run config; writes checkpoint, epoch log and resolved config.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Use an existing split directory instead of building one.
        #[arg(long)]
        split: Option<PathBuf>,
        #[command(flatten)]
        overrides: Overrides,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score a split with a checkpoint and write a metrics report.
    Evaluate {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Split directory (uses its test set) or a triplet TSV.
        #[arg(long)]
        split: PathBuf,
        /// Finalized graph JSON written by `train` or `run`.
        #[arg(long)]
        graph: PathBuf,
        #[arg(long)]
        features: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Radar TSV path; defaults to the report path with `.radar.tsv`.
        #[arg(long)]
        radar: Option<PathBuf>,
    },
    /// Welch t-test and Cohen's d between two run files.
    Compare {
        #[arg(long)]
        a: PathBuf,
        #[arg(long)]
        b: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Rank graph entities by influence on one pair's prediction.
    Explain {
        /// Two drug ids separated by a comma.
        #[arg(long)]
        pair: String,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        graph: PathBuf,
        #[arg(long)]
        features: PathBuf,
        #[arg(long, default_value_t = 8)]
        top_k: usize,
        #[arg(long)]
        kind: Option<EntityKind>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compare analytic gradients with central differences.
    Gradcheck {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Full pipeline.
    Run {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Generate planted-signal inputs.
        #[arg(long)]
        synthetic: bool,
        /// Explain the first positive test pair after evaluation.
        #[arg(long)]
        explain: bool,
        #[command(flatten)]
        overrides: Overrides,
        #[arg(long)]
        out: PathBuf,
    },
}

/// Flags that override the JSON config.
#[derive(Args, Default)]
struct Overrides {
    #[arg(long)]
    variant: Option<ModelVariant>,
    #[arg(long)]
    kg_variant: Option<KgVariant>,
    #[arg(long)]
    mode: Option<SampleMode>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    swap_valid_test: bool,
    #[arg(long)]
    edges: Option<PathBuf>,
    #[arg(long)]
    features: Option<PathBuf>,
    #[arg(long)]
    records: Option<PathBuf>,
    #[arg(long)]
    synergy: Option<PathBuf>,
    #[arg(long)]
    assoc: Option<PathBuf>,
}

impl Overrides {
    fn apply(&self, cfg: &mut RunConfig) {
        if let Some(v) = self.variant {
            cfg.model.variant = v;
        }
        if let Some(v) = self.kg_variant {
            cfg.kg_variant = v;
        }
        if let Some(m) = self.mode {
            cfg.dataset.mode = m;
        }
        if let Some(e) = self.epochs {
            cfg.train.max_epochs = e;
            cfg.train.patience = cfg.train.patience.min(e);
        }
        if self.swap_valid_test {
            cfg.dataset.swap_valid_test = true;
        }
        let set = |slot: &mut Option<PathBuf>, v: &Option<PathBuf>| {
            if v.is_some() {
                slot.clone_from(v);
            }
        };
        set(&mut cfg.paths.edges, &self.edges);
        set(&mut cfg.paths.features, &self.features);
        set(&mut cfg.paths.adr_records, &self.records);
        set(&mut cfg.paths.synergy, &self.synergy);
        set(&mut cfg.paths.assoc, &self.assoc);
    }
}

fn write(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn parse_segments(s: &str) -> Result<SegmentSpec> {
    let v: Vec<usize> = s
        .split(',')
        .map(|x| x.trim().parse())
        .collect::<std::result::Result<_, _>>()
        .with_context(|| format!("segments must be four integers, got `{s}`"))?;
    if v.len() != 4 {
        bail!(crossadr::Error::Config(format!(
            "segments must be four integers, got `{s}`"
        )));
    }
    Ok(SegmentSpec::new(v[0], v[1], v[2], v[3]))
}

fn run(cli: Cli) -> Result<()> {
    let seed = cli.seed;
    match cli.command {
        Command::BuildKg {
            edges,
            relations,
            variant,
            out,
        } => {
            let (g, removed) = build_kg(&edges, relations.as_deref(), variant)?;
            g.save(&out)?;
            write(
                &out.with_extension("stats.tsv"),
                &(g.stats_lines().join("\n") + "\n"),
            )?;
            println!(
                "{} entities, {} edges, {removed} removed",
                g.num_entities(),
                g.edges().len()
            );
        }
        Command::BuildDataset {
            records,
            synergy,
            features,
            graph,
            mode,
            ratios,
            swap_valid_test,
            out,
        } => {
            let g = KnowledgeGraph::load(&graph)?;
            let feats = FeatureTable::load(&features, None)?;
            let cfg = DatasetConfig {
                mode,
                seed: seed.unwrap_or(DatasetConfig::default().seed),
                ratios: crossadr::dataset::parse_ratios(&ratios)?,
                swap_valid_test,
            };
            let split = build_dataset(&records, synergy.as_deref(), &drug_pool(&g, &feats), &cfg)?;
            split.write_dir(&out)?;
            println!("{}", serde_json::to_string(&split.stats())?);
        }
        Command::GenSyntheticFeatures {
            graph,
            segments,
            out,
        } => {
            let g = KnowledgeGraph::load(&graph)?;
            let t = random_features_for(&g, parse_segments(&segments)?, seed.unwrap_or(0))?;
            t.save(&out)?;
            println!("{} drugs", t.len());
        }
        Command::GenSynthetic {
            n_drugs,
            n_proteins,
            n_phenotypes,
            n_diseases,
            out,
        } => {
            let cfg = SyntheticConfig {
                n_drugs,
                n_proteins,
                n_phenotypes,
                n_diseases,
                seed: seed.unwrap_or(SyntheticConfig::default().seed),
                ..Default::default()
            };
            let data = generate(&cfg)?;
            data.write_dir(&out)?;
            println!("{} drugs, {} recorded pairs", n_drugs, data.records.len());
        }
        Command::Train {
            config,
            split,
            overrides,
            out,
        } => {
            let mut cfg = RunConfig::load(&config)?;
            overrides.apply(&mut cfg);
            if let Some(s) = seed {
                cfg.set_seed(s);
            }
            cfg.paths.out_dir = out.clone();
            train_command(cfg, split.as_deref())?;
        }
        Command::Evaluate {
            checkpoint,
            split,
            graph,
            features,
            out,
            radar,
        } => {
            let model = Model::load(&checkpoint)?;
            let g = KnowledgeGraph::load(&graph)?;
            let feats = FeatureTable::load(&features, Some(model.segments))?;
            let samples = if split.is_dir() {
                DatasetSplit::read_dir(&split)?.test
            } else {
                read_triplets(&split)?
            };
            let report = evaluate(&model, &g, &feats, &samples)?;
            write(&out, &(report.to_json()? + "\n"))?;
            let radar = radar.unwrap_or_else(|| out.with_extension("radar.tsv"));
            write(&radar, &report.radar_tsv())?;
            println!("{}", serde_json::to_string(&report.micro)?);
        }
        Command::Compare { a, b, out } => {
            let r = compare_runs(&read_runs(&a)?, &read_runs(&b)?)?;
            let json = serde_json::to_string_pretty(&r)?;
            if let Some(out) = out {
                write(&out, &(json.clone() + "\n"))?;
            }
            println!(
                "mean_a={:.6} mean_b={:.6} p={:.3e} d={:.4} {}",
                r.mean_1,
                r.mean_2,
                r.p_value,
                r.cohens_d,
                r.tier.as_str()
            );
        }
        Command::Explain {
            pair,
            checkpoint,
            graph,
            features,
            top_k,
            kind,
            out,
        } => {
            let Some((p, q)) = pair.split_once(',') else {
                bail!(crossadr::Error::Config(format!(
                    "--pair must be `DRUG1,DRUG2`, got `{pair}`"
                )));
            };
            let model = Model::load(&checkpoint)?;
            let g = KnowledgeGraph::load(&graph)?;
            let feats = FeatureTable::load(&features, Some(model.segments))?;
            let r = crossadr::attribution::rank_entities(
                &model,
                &g,
                &feats,
                p.trim(),
                q.trim(),
                top_k,
                kind,
            )?;
            write(&out.join("ranking.tsv"), &r.to_tsv())?;
            write(&out.join("edges.tsv"), &r.induced_edges_tsv(&g))?;
            print!("{}", r.to_tsv());
        }
        Command::Gradcheck { config, out } => {
            let mut cfg = match config {
                Some(p) => {
                    let text = std::fs::read_to_string(&p)
                        .with_context(|| format!("reading {}", p.display()))?;
                    serde_json::from_str(&text)
                        .map_err(|e| crossadr::Error::Config(format!("{}: {e}", p.display())))?
                }
                None => GradcheckConfig::default(),
            };
            if let Some(s) = seed {
                cfg.seeds = vec![s];
            }
            let reports = run_gradcheck(&cfg)?;
            let text: String = reports.iter().map(|r| r.to_tsv()).collect();
            write(&out, &text)?;
            let worst = reports
                .iter()
                .map(|r| r.max_rel_error())
                .fold(0.0, f64::max);
            println!("max relative error {worst:e}");
            if worst >= 1e-4 {
                bail!("gradient check failed: max relative error {worst:e}");
            }
        }
        Command::Run {
            config,
            synthetic,
            explain,
            overrides,
            out,
        } => {
            let mut cfg = match config {
                Some(p) => RunConfig::load(p)?,
                None if synthetic => RunConfig::synthetic_defaults(seed.unwrap_or(10)),
                None => RunConfig::default(),
            };
            if synthetic && cfg.synthetic.is_none() {
                cfg.synthetic = Some(SyntheticConfig::default());
            }
            overrides.apply(&mut cfg);
            if let Some(s) = seed {
                cfg.set_seed(s);
            }
            if explain && cfg.explain.is_none() {
                cfg.explain = Some(Default::default());
            }
            cfg.paths.out_dir = out;
            let summary = run_pipeline(&cfg)?;
            println!(
                "best epoch {} valid micro roc_auc {}; test micro roc_auc {}",
                summary.manifest.best_epoch,
                fmt_opt(summary.manifest.best_valid_roc_auc),
                fmt_opt(summary.test_report.micro.roc_auc)
            );
        }
    }
    Ok(())
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".into(), |v| format!("{v:.4}"))
}

fn train_command(mut cfg: RunConfig, split_dir: Option<&Path>) -> Result<()> {
    let out = cfg.paths.out_dir.clone();
    let need = |p: &Option<PathBuf>, what: &str| -> Result<PathBuf> {
        let p = p
            .clone()
            .ok_or_else(|| crossadr::Error::Config(format!("config lacks a path for {what}")))?;
        if !p.exists() {
            bail!(crossadr::Error::Config(format!(
                "{what} file not found: {}",
                p.display()
            )));
        }
        Ok(p)
    };
    let edges = need(&cfg.paths.edges, "edges")?;
    let features = FeatureTable::load(need(&cfg.paths.features, "features")?, None)?;
    cfg.model.input_dim = features.spec.total();
    let (graph, _) = build_kg(&edges, cfg.paths.relations.as_deref(), cfg.kg_variant)?;
    let split = match split_dir {
        Some(d) => DatasetSplit::read_dir(d)?,
        None => build_dataset(
            &need(&cfg.paths.adr_records, "adr_records")?,
            cfg.paths.synergy.as_deref(),
            &drug_pool(&graph, &features),
            &cfg.dataset,
        )?,
    };
    let assoc = match cfg.model.variant {
        ModelVariant::Ablated1FixedMatrix => {
            Some(load_association_matrix(need(&cfg.paths.assoc, "assoc")?)?)
        }
        _ => None,
    };
    write(&out.join("config.resolved.json"), &cfg.to_json()?)?;
    let graph = graph.finalize_for_training(&split.train)?;
    graph.save(out.join("graph.json"))?;
    if split_dir.is_none() {
        split.write_dir(out.join("dataset"))?;
    }
    let model = Model::new(
        cfg.model.clone(),
        features.spec,
        graph.catalog().len(),
        assoc,
        cfg.model_seed,
    )?;
    let outcome = train_loop(model, &split, &graph, &features, &cfg.train)?;
    outcome.best.save(out.join("checkpoint.json"))?;
    write(&out.join("epoch_log.tsv"), &epoch_log_tsv(&outcome.log))?;
    info!("best epoch {}", outcome.best_epoch);
    println!(
        "best epoch {} valid micro roc_auc {}",
        outcome.best_epoch,
        fmt_opt(outcome.best_valid_roc_auc)
    );
    Ok(())
}

fn exit_code(err: &anyhow::Error) -> u8 {
    if let Some(p) = err.downcast_ref::<PipelineError>() {
        return p.exit_code() as u8;
    }
    if let Some(e) = err.downcast_ref::<crossadr::Error>() {
        return match classify(e) {
            FailureKind::Validation => 2,
            FailureKind::Stage => 3,
        };
    }
    3
}

/// Error chain with causes already quoted by their parent left out.
fn render(err: &anyhow::Error) -> String {
    let mut out = err.to_string();
    for cause in err.chain().skip(1) {
        let c = cause.to_string();
        if !out.contains(&c) {
            out.push_str(": ");
            out.push_str(&c);
        }
    }
    out
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    env_logger::Builder::new()
        .parse_filters(&cli.log)
        .format_timestamp(None)
        .init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", render(&e));
            ExitCode::from(exit_code(&e))
        }
    }
}
