//! Loss, optimizer, gradient check and the training loop.

use std::collections::BTreeSet;
use std::fmt::Write as _;

use log::{debug, info};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{DatasetSplit, LabelVector, Triplet};
use crate::error::{Error, Result};
use crate::features::FeatureTable;
use crate::kg::KnowledgeGraph;
use crate::metrics::roc_auc;
use crate::model::{Model, ModelParams};
use crate::NUM_ORGANS;

const CLAMP: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Epochs without validation improvement before stopping.
    pub patience: usize,
    pub seed: u64,
    /// Threads for per-sample gradients. Results do not depend on it.
    pub workers: usize,
    /// Tensor names excluded from optimization.
    pub frozen: Vec<String>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            batch_size: 64,
            max_epochs: 100,
            patience: 10,
            seed: 0,
            workers: 1,
            frozen: Vec::new(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let rates_ok = self.learning_rate > 0.0 && self.epsilon > 0.0;
        let betas_ok = (0.0..1.0).contains(&self.beta1) && (0.0..1.0).contains(&self.beta2);
        if !rates_ok
            || !betas_ok
            || self.batch_size == 0
            || self.max_epochs == 0
            || self.workers == 0
        {
            return Err(Error::Config(
                "training hyperparameters must be positive".into(),
            ));
        }
        if self.patience > self.max_epochs {
            return Err(Error::Config(format!(
                "patience {} exceeds max_epochs {}",
                self.patience, self.max_epochs
            )));
        }
        Ok(())
    }
}

/// Mean per-organ binary cross-entropy with scores clamped to
/// `[1e-12, 1 − 1e-12]`.
pub fn bce_loss(s: &[f64], a: &LabelVector) -> f64 {
    let sum: f64 = s
        .iter()
        .zip(a.bits())
        .map(|(&si, &ai)| {
            let si = si.clamp(CLAMP, 1.0 - CLAMP);
            if ai {
                -si.ln()
            } else {
                -(1.0 - si).ln()
            }
        })
        .sum();
    sum / NUM_ORGANS as f64
}

/// `∂L/∂o` for the pre-sigmoid logits: `(S − a)/15`, zero where the clamp
/// is active.
pub fn bce_logit_grad(s: &[f64], a: &LabelVector) -> Vec<f64> {
    s.iter()
        .zip(a.bits())
        .map(|(&si, &ai)| {
            if !(CLAMP..=1.0 - CLAMP).contains(&si) {
                0.0
            } else {
                (si - if ai { 1.0 } else { 0.0 }) / NUM_ORGANS as f64
            }
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub m: ModelParams,
    pub v: ModelParams,
    pub t: u64,
}

impl AdamState {
    pub fn new(params: &ModelParams) -> Self {
        Self {
            m: params.zeros_like(),
            v: params.zeros_like(),
            t: 0,
        }
    }
}

/// One bias-corrected Adam update over every tensor.
pub fn adam_step(
    params: &mut ModelParams,
    grads: &ModelParams,
    state: &mut AdamState,
    cfg: &TrainConfig,
) {
    state.t += 1;
    let bc1 = 1.0 - cfg.beta1.powi(state.t as i32);
    let bc2 = 1.0 - cfg.beta2.powi(state.t as i32);
    let ps = params.tensors_mut();
    let gs = grads.tensors();
    let ms = state.m.tensors_mut();
    let vs = state.v.tensors_mut();
    for ((((_, p), (_, g)), (_, m)), (_, v)) in ps.into_iter().zip(gs).zip(ms).zip(vs) {
        for i in 0..p.data.len() {
            let gi = g.data[i];
            m.data[i] = cfg.beta1 * m.data[i] + (1.0 - cfg.beta1) * gi;
            v.data[i] = cfg.beta2 * v.data[i] + (1.0 - cfg.beta2) * gi * gi;
            let mh = m.data[i] / bc1;
            let vh = v.data[i] / bc2;
            p.data[i] -= cfg.learning_rate * mh / (vh.sqrt() + cfg.epsilon);
        }
    }
}

/// Entity indices and feature rows for one triplet.
struct Resolved<'a> {
    p: usize,
    q: usize,
    xp: &'a [f64],
    xq: &'a [f64],
    labels: LabelVector,
}

fn resolve<'a>(
    graph: &KnowledgeGraph,
    features: &'a FeatureTable,
    t: &Triplet,
) -> Result<Resolved<'a>> {
    Ok(Resolved {
        p: graph
            .entity_index(&t.p)
            .ok_or_else(|| Error::UnknownEntity(t.p.clone()))?,
        q: graph
            .entity_index(&t.q)
            .ok_or_else(|| Error::UnknownEntity(t.q.clone()))?,
        xp: &features.require(&t.p)?.values,
        xq: &features.require(&t.q)?.values,
        labels: t.labels,
    })
}

fn sample_grad(
    model: &Model,
    graph: &KnowledgeGraph,
    r: &Resolved,
    grads: &mut ModelParams,
) -> f64 {
    let fw = model.forward_raw(graph, r.xp, r.xq, r.p, r.q);
    let loss = bce_loss(&fw.s, &r.labels);
    model.backward(graph, &fw, &bce_logit_grad(&fw.s, &r.labels), grads);
    loss
}

/// Mean loss and mean gradient over `batch`. Per-sample gradients are
/// reduced in batch order whatever the worker count.
pub fn batch_gradient(
    model: &Model,
    graph: &KnowledgeGraph,
    features: &FeatureTable,
    batch: &[Triplet],
    workers: usize,
) -> Result<(f64, ModelParams)> {
    if batch.is_empty() {
        return Err(Error::Invalid("empty batch".into()));
    }
    let resolved: Vec<Resolved> = batch
        .iter()
        .map(|t| resolve(graph, features, t))
        .collect::<Result<_>>()?;
    let mut total = model.params.zeros_like();
    let mut loss = 0.0;
    let workers = workers.max(1);
    if workers == 1 {
        let mut scratch = model.params.zeros_like();
        for r in &resolved {
            scratch.scale(0.0);
            loss += sample_grad(model, graph, r, &mut scratch);
            total.add_assign(&scratch);
        }
    } else {
        for wave in resolved.chunks(workers) {
            let results: Vec<(f64, ModelParams)> = std::thread::scope(|s| {
                let handles: Vec<_> = wave
                    .iter()
                    .map(|r| {
                        s.spawn(move || {
                            let mut g = model.params.zeros_like();
                            let l = sample_grad(model, graph, r, &mut g);
                            (l, g)
                        })
                    })
                    .collect();
                handles
                    .into_iter()
                    .map(|h| h.join().expect("worker panicked"))
                    .collect()
            });
            for (l, g) in results {
                loss += l;
                total.add_assign(&g);
            }
        }
    }
    let n = batch.len() as f64;
    total.scale(1.0 / n);
    Ok((loss / n, total))
}

/// Mean loss over `samples` without gradients.
pub fn mean_loss(
    model: &Model,
    graph: &KnowledgeGraph,
    features: &FeatureTable,
    samples: &[Triplet],
) -> Result<f64> {
    let mut sum = 0.0;
    for t in samples {
        let r = resolve(graph, features, t)?;
        let fw = model.forward_raw(graph, r.xp, r.xq, r.p, r.q);
        sum += bce_loss(&fw.s, &r.labels);
    }
    Ok(sum / samples.len().max(1) as f64)
}

/// Organ scores for every triplet, in input order.
pub fn score_triplets(
    model: &Model,
    graph: &KnowledgeGraph,
    features: &FeatureTable,
    samples: &[Triplet],
) -> Result<Vec<Vec<f64>>> {
    samples
        .iter()
        .map(|t| {
            let r = resolve(graph, features, t)?;
            Ok(model.forward_raw(graph, r.xp, r.xq, r.p, r.q).s)
        })
        .collect()
}

/// Micro ROC-AUC over the flattened score matrix, `None` if single-class.
pub fn micro_roc_auc(scores: &[Vec<f64>], samples: &[Triplet]) -> Option<f64> {
    let s: Vec<f64> = scores.iter().flatten().copied().collect();
    let l: Vec<bool> = samples
        .iter()
        .flat_map(|t| t.labels.bits().iter().copied())
        .collect();
    roc_auc(&s, &l)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorCheck {
    pub name: String,
    pub checked: usize,
    pub max_rel_error: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradCheckReport {
    pub seed: u64,
    pub step: f64,
    pub tensors: Vec<TensorCheck>,
}

impl GradCheckReport {
    pub fn max_rel_error(&self) -> f64 {
        self.tensors
            .iter()
            .map(|t| t.max_rel_error)
            .fold(0.0, f64::max)
    }

    pub fn to_tsv(&self) -> String {
        let mut out = format!(
            "# seed={} step={}\ntensor\tchecked\tmax_rel_error\n",
            self.seed, self.step
        );
        for t in &self.tensors {
            let _ = writeln!(out, "{}\t{}\t{:e}", t.name, t.checked, t.max_rel_error);
        }
        out
    }
}

/// `|a − n| / max(1, |a|, |n|)`
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / 1f64.max(analytic.abs()).max(numeric.abs())
}

/// Compares analytic gradients of the mean batch loss with central
/// differences. Tensors larger than `max_per_tensor` are sampled at
/// seeded positions; unused tensors of the variant are skipped.
pub fn gradcheck(
    model: &Model,
    graph: &KnowledgeGraph,
    features: &FeatureTable,
    batch: &[Triplet],
    step: f64,
    max_per_tensor: usize,
    seed: u64,
) -> Result<GradCheckReport> {
    let (_, analytic) = batch_gradient(model, graph, features, batch, 1)?;
    let unused = crate::model::unused_tensors(model.config.variant);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut probe = model.clone();
    let mut tensors = Vec::new();
    let names: Vec<(String, usize)> = model
        .params
        .tensors()
        .iter()
        .map(|(n, m)| (n.clone(), m.data.len()))
        .collect();
    let grads = analytic.tensors();
    for (ti, (name, len)) in names.iter().enumerate() {
        if unused.contains(&name.as_str()) || *len == 0 {
            continue;
        }
        let idx: Vec<usize> = if *len <= max_per_tensor {
            (0..*len).collect()
        } else {
            (0..max_per_tensor)
                .map(|_| rng.random_range(0..*len))
                .collect()
        };
        let mut worst: f64 = 0.0;
        for &i in &idx {
            let orig = model.params.tensors()[ti].1.data[i];
            set_param(&mut probe, ti, i, orig + step);
            let up = mean_loss(&probe, graph, features, batch)?;
            set_param(&mut probe, ti, i, orig - step);
            let down = mean_loss(&probe, graph, features, batch)?;
            set_param(&mut probe, ti, i, orig);
            let numeric = (up - down) / (2.0 * step);
            worst = worst.max(relative_error(grads[ti].1.data[i], numeric));
        }
        debug!(
            "gradcheck {name}: {} entries, max rel err {worst:e}",
            idx.len()
        );
        tensors.push(TensorCheck {
            name: name.clone(),
            checked: idx.len(),
            max_rel_error: worst,
        });
    }
    Ok(GradCheckReport {
        seed,
        step,
        tensors,
    })
}

fn set_param(model: &mut Model, tensor: usize, i: usize, v: f64) {
    model
        .params
        .tensors_mut()
        .into_iter()
        .nth(tensor)
        .expect("tensor index")
        .1
        .data[i] = v;
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub valid_roc_auc: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub best: Model,
    pub best_epoch: usize,
    pub best_valid_roc_auc: Option<f64>,
    pub log: Vec<EpochRecord>,
}

pub fn epoch_log_tsv(log: &[EpochRecord]) -> String {
    let mut out = String::from("epoch\ttrain_loss\tvalid_roc_auc\n");
    for r in log {
        let auc = r
            .valid_roc_auc
            .map_or_else(|| "NA".to_string(), |v| format!("{v:.10}"));
        let _ = writeln!(out, "{}\t{:.10}\t{auc}", r.epoch, r.train_loss);
    }
    out
}

/// Mini-batch Adam with seeded shuffling, best-by-validation selection and
/// early stopping after `patience` epochs without improvement.
pub fn train_loop(
    mut model: Model,
    split: &DatasetSplit,
    graph: &KnowledgeGraph,
    features: &FeatureTable,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if split.train.is_empty() {
        return Err(Error::Invalid("training split is empty".into()));
    }
    if !graph.is_finalized() {
        return Err(Error::Invalid(
            "graph must be finalized with training triplets before training".into(),
        ));
    }
    let unknown: Vec<&String> = {
        let names: BTreeSet<String> = model.params.tensors().into_iter().map(|(n, _)| n).collect();
        cfg.frozen.iter().filter(|f| !names.contains(*f)).collect()
    };
    if !unknown.is_empty() {
        return Err(Error::Config(format!(
            "unknown frozen tensors: {unknown:?}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut adam = AdamState::new(&model.params);
    let mut order: Vec<usize> = (0..split.train.len()).collect();
    let mut log = Vec::new();
    let mut best: Option<(Model, usize, Option<f64>)> = None;
    let mut since_best = 0usize;

    for epoch in 1..=cfg.max_epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<Triplet> = chunk.iter().map(|&i| split.train[i].clone()).collect();
            let (loss, mut grads) = batch_gradient(&model, graph, features, &batch, cfg.workers)?;
            for (name, g) in grads.tensors_mut() {
                if cfg.frozen.contains(&name) {
                    g.fill(0.0);
                }
            }
            adam_step(&mut model.params, &grads, &mut adam, cfg);
            loss_sum += loss * batch.len() as f64;
        }
        let train_loss = loss_sum / split.train.len() as f64;
        let valid_auc = if split.valid.is_empty() {
            None
        } else {
            micro_roc_auc(
                &score_triplets(&model, graph, features, &split.valid)?,
                &split.valid,
            )
        };
        info!(
            "epoch {epoch}: train_loss {train_loss:.6} valid_roc_auc {}",
            valid_auc.map_or("NA".into(), |v| format!("{v:.4}"))
        );
        log.push(EpochRecord {
            epoch,
            train_loss,
            valid_roc_auc: valid_auc,
        });
        let improved = match (&best, valid_auc) {
            (None, _) => true,
            (Some((_, _, None)), Some(_)) => true,
            (Some((_, _, Some(b))), Some(v)) => v > *b,
            (Some(_), None) => false,
        };
        if improved {
            best = Some((model.clone(), epoch, valid_auc));
            since_best = 0;
        } else {
            since_best += 1;
        }
        if since_best >= cfg.patience {
            if epoch < cfg.max_epochs {
                info!("early stop after epoch {epoch}");
            }
            break;
        }
    }
    let (best, best_epoch, best_valid_roc_auc) = best.expect("at least one epoch");
    Ok(TrainOutcome {
        best,
        best_epoch,
        best_valid_roc_auc,
        log,
    })
}
