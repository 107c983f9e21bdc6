//! The prediction model.
//!
//! For a drug pair `(p, q)` the model runs two message-passing flows over the
//! knowledge graph, one seeded at each drug, reads out the partner drug's
//! state at every layer, fuses the two layer sequences with bi-directional
//! cross-attention, maps the result into a learnable positive/negative organ
//! embedding space, and combines molecular- and organ-level features into
//! 15 organ scores.
//!
//! All tensors live in [`ModelParams`]; the forward pass records whatever the
//! hand-written backward pass in [`backward`] needs.

mod backward;
mod forward;

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{FeatureAttentionParams, SegmentSpec};
use crate::linalg::Matrix;
use crate::NUM_ORGANS;

pub use forward::{FlowTrace, PairForward, PredictionScores};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ModelVariant {
    Full,
    /// Organ block replaced by a fixed association matrix applied to `S1`.
    Ablated1FixedMatrix,
    /// Fusion bypassed: only the last-layer readouts feed `h_out1`.
    Ablated2LastLayerOnly,
}

impl std::str::FromStr for ModelVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "full" => Ok(ModelVariant::Full),
            "ablated1" | "fixed-matrix" => Ok(ModelVariant::Ablated1FixedMatrix),
            "ablated2" | "last-layer" => Ok(ModelVariant::Ablated2LastLayerOnly),
            other => Err(Error::Invalid(format!("unknown model variant `{other}`"))),
        }
    }
}

impl ModelVariant {
    pub fn as_str(self) -> &'static str {
        match self {
            ModelVariant::Full => "full",
            ModelVariant::Ablated1FixedMatrix => "ablated1",
            ModelVariant::Ablated2LastLayerOnly => "ablated2",
        }
    }
}

/// Which entities mix toward the source drug's projected features in the
/// gated residual.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum AnchorScope {
    /// Every supported entity uses `W_in f_src`.
    #[default]
    AllSupported,
    /// Only the source entity has a nonzero anchor.
    SourceOnly,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum GateKind {
    /// One gate per hidden dimension.
    #[default]
    Vector,
    Scalar,
}

/// Test hook pinning the residual gate to one endpoint.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum GateOverride {
    #[default]
    Learned,
    Open,
    Closed,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub layers: usize,
    pub hidden: usize,
    pub organ_dim: usize,
    pub heads: usize,
    pub input_dim: usize,
    pub variant: ModelVariant,
    pub anchor: AnchorScope,
    pub gate: GateKind,
    pub gate_override: GateOverride,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            layers: 3,
            hidden: 32,
            organ_dim: 32,
            heads: 4,
            input_dim: 1024,
            variant: ModelVariant::Full,
            anchor: AnchorScope::AllSupported,
            gate: GateKind::Vector,
            gate_override: GateOverride::Learned,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.layers == 0
            || self.hidden == 0
            || self.organ_dim == 0
            || self.heads == 0
            || self.input_dim == 0
        {
            return Err(Error::Config(
                "model widths and layer count must be positive".into(),
            ));
        }
        if !self.organ_dim.is_multiple_of(self.heads) {
            return Err(Error::Config(format!(
                "organ_dim {} is not divisible by heads {}",
                self.organ_dim, self.heads
            )));
        }
        Ok(())
    }

    /// Length of `h_out1`, `2·L·d`.
    pub fn flow_width(&self) -> usize {
        2 * self.layers * self.hidden
    }

    /// Length of `E = [h_out1; h_out2; h_out3]`, `4·L·d + d2`.
    pub fn head_width(&self) -> usize {
        2 * self.flow_width() + self.organ_dim
    }

    fn gate_rows(&self) -> usize {
        match self.gate {
            GateKind::Vector => self.hidden,
            GateKind::Scalar => 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerParams {
    /// Relation embeddings, one row per relation id.
    pub rel_emb: Matrix,
    /// First layer of the relation-attention stack, over `[f_p; f_q]`.
    pub w_rel: Matrix,
    /// Second layer, producing one logit per relation.
    pub w_attn: Matrix,
    pub w_msg: Matrix,
    /// Residual gate over `[h̃; anchor]`.
    pub w_gate: Matrix,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub feat: FeatureAttentionParams,
    pub w_in: Matrix,
    pub layers: Vec<LayerParams>,
    pub w_cross: Matrix,
    pub w_rel1: Matrix,
    pub b_rel1: Matrix,
    pub e_plus: Matrix,
    pub e_minus: Matrix,
    pub attn_q: Matrix,
    pub attn_k: Matrix,
    pub attn_v: Matrix,
    pub attn_o: Matrix,
    /// Projection of `M·S1` into the organ width (fixed-matrix variant only).
    pub w_assoc: Matrix,
    pub w_t: Matrix,
    pub w_out: Matrix,
    pub b_out: Matrix,
}

impl ModelParams {
    /// Correctly shaped all-zero tensors.
    pub fn zeros(cfg: &ModelConfig, spec: &SegmentSpec, num_relations: usize) -> Self {
        let (d, d2, din) = (cfg.hidden, cfg.organ_dim, cfg.input_dim);
        Self {
            feat: FeatureAttentionParams::zeros(spec),
            w_in: Matrix::zeros(d, din),
            layers: (0..cfg.layers)
                .map(|_| LayerParams {
                    rel_emb: Matrix::zeros(num_relations, d),
                    w_rel: Matrix::zeros(d, 2 * din),
                    w_attn: Matrix::zeros(num_relations, d),
                    w_msg: Matrix::zeros(d, d),
                    w_gate: Matrix::zeros(cfg.gate_rows(), 2 * d),
                })
                .collect(),
            w_cross: Matrix::zeros(d, d),
            w_rel1: Matrix::zeros(NUM_ORGANS, cfg.flow_width()),
            b_rel1: Matrix::zeros(NUM_ORGANS, 1),
            e_plus: Matrix::zeros(NUM_ORGANS, d2),
            e_minus: Matrix::zeros(NUM_ORGANS, d2),
            attn_q: Matrix::zeros(d2, d2),
            attn_k: Matrix::zeros(d2, d2),
            attn_v: Matrix::zeros(d2, d2),
            attn_o: Matrix::zeros(d2, d2),
            w_assoc: Matrix::zeros(d2, NUM_ORGANS),
            w_t: Matrix::zeros(cfg.flow_width(), d2),
            w_out: Matrix::zeros(NUM_ORGANS, cfg.head_width()),
            b_out: Matrix::zeros(NUM_ORGANS, 1),
        }
    }

    /// Glorot-uniform matrices, zero biases, `N(0, 0.02)` organ embeddings.
    pub fn init(cfg: &ModelConfig, spec: &SegmentSpec, num_relations: usize, seed: u64) -> Self {
        let mut p = Self::zeros(cfg, spec, num_relations);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for (name, m) in p.tensors_mut() {
            let (r, c) = m.shape();
            *m = if name.starts_with("b_") {
                Matrix::zeros(r, c)
            } else if name.starts_with("e_") {
                Matrix::normal(r, c, 0.02, &mut rng)
            } else {
                Matrix::glorot(r, c, &mut rng)
            };
        }
        p
    }

    pub fn tensors(&self) -> Vec<(String, &Matrix)> {
        let mut v: Vec<(String, &Matrix)> = vec![
            ("feat.w_desc".into(), &self.feat.w_desc),
            ("feat.w_keys".into(), &self.feat.w_keys),
            ("w_in".into(), &self.w_in),
        ];
        for (l, lp) in self.layers.iter().enumerate() {
            v.push((format!("layer{l}.rel_emb"), &lp.rel_emb));
            v.push((format!("layer{l}.w_rel"), &lp.w_rel));
            v.push((format!("layer{l}.w_attn"), &lp.w_attn));
            v.push((format!("layer{l}.w_msg"), &lp.w_msg));
            v.push((format!("layer{l}.w_gate"), &lp.w_gate));
        }
        v.extend([
            ("w_cross".to_string(), &self.w_cross),
            ("w_rel1".to_string(), &self.w_rel1),
            ("b_rel1".to_string(), &self.b_rel1),
            ("e_plus".to_string(), &self.e_plus),
            ("e_minus".to_string(), &self.e_minus),
            ("attn_q".to_string(), &self.attn_q),
            ("attn_k".to_string(), &self.attn_k),
            ("attn_v".to_string(), &self.attn_v),
            ("attn_o".to_string(), &self.attn_o),
            ("w_assoc".to_string(), &self.w_assoc),
            ("w_t".to_string(), &self.w_t),
            ("w_out".to_string(), &self.w_out),
            ("b_out".to_string(), &self.b_out),
        ]);
        v
    }

    pub fn tensors_mut(&mut self) -> Vec<(String, &mut Matrix)> {
        let mut v: Vec<(String, &mut Matrix)> = vec![
            ("feat.w_desc".into(), &mut self.feat.w_desc),
            ("feat.w_keys".into(), &mut self.feat.w_keys),
            ("w_in".into(), &mut self.w_in),
        ];
        for (l, lp) in self.layers.iter_mut().enumerate() {
            v.push((format!("layer{l}.rel_emb"), &mut lp.rel_emb));
            v.push((format!("layer{l}.w_rel"), &mut lp.w_rel));
            v.push((format!("layer{l}.w_attn"), &mut lp.w_attn));
            v.push((format!("layer{l}.w_msg"), &mut lp.w_msg));
            v.push((format!("layer{l}.w_gate"), &mut lp.w_gate));
        }
        v.extend([
            ("w_cross".to_string(), &mut self.w_cross),
            ("w_rel1".to_string(), &mut self.w_rel1),
            ("b_rel1".to_string(), &mut self.b_rel1),
            ("e_plus".to_string(), &mut self.e_plus),
            ("e_minus".to_string(), &mut self.e_minus),
            ("attn_q".to_string(), &mut self.attn_q),
            ("attn_k".to_string(), &mut self.attn_k),
            ("attn_v".to_string(), &mut self.attn_v),
            ("attn_o".to_string(), &mut self.attn_o),
            ("w_assoc".to_string(), &mut self.w_assoc),
            ("w_t".to_string(), &mut self.w_t),
            ("w_out".to_string(), &mut self.w_out),
            ("b_out".to_string(), &mut self.b_out),
        ]);
        v
    }

    pub fn tensor_mut(&mut self, name: &str) -> Option<&mut Matrix> {
        self.tensors_mut()
            .into_iter()
            .find(|(n, _)| n == name)
            .map(|(_, m)| m)
    }

    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        for (_, m) in z.tensors_mut() {
            m.fill(0.0);
        }
        z
    }

    pub fn num_elements(&self) -> usize {
        self.tensors().iter().map(|(_, m)| m.data.len()).sum()
    }

    pub fn add_assign(&mut self, other: &ModelParams) {
        for ((_, a), (_, b)) in self.tensors_mut().into_iter().zip(other.tensors()) {
            a.add_assign(b);
        }
    }

    pub fn scale(&mut self, s: f64) {
        for (_, m) in self.tensors_mut() {
            m.scale(s);
        }
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|(_, m)| m.is_finite())
    }
}

/// Tensors a variant never reads. They receive zero gradient.
pub fn unused_tensors(variant: ModelVariant) -> &'static [&'static str] {
    match variant {
        ModelVariant::Full => &["w_assoc"],
        ModelVariant::Ablated1FixedMatrix => {
            &["e_plus", "e_minus", "attn_q", "attn_k", "attn_v", "attn_o"]
        }
        ModelVariant::Ablated2LastLayerOnly => &["w_cross", "w_assoc"],
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    pub segments: SegmentSpec,
    pub num_relations: usize,
    /// Fixed 15×15 organ association matrix (fixed-matrix variant).
    pub assoc: Option<Matrix>,
    pub params: ModelParams,
}

impl Model {
    pub fn new(
        config: ModelConfig,
        segments: SegmentSpec,
        num_relations: usize,
        assoc: Option<Matrix>,
        seed: u64,
    ) -> Result<Self> {
        config.validate()?;
        if config.input_dim != segments.total() {
            return Err(Error::Config(format!(
                "input_dim {} does not match feature width {}",
                config.input_dim,
                segments.total()
            )));
        }
        if config.variant == ModelVariant::Ablated1FixedMatrix {
            match &assoc {
                None => {
                    return Err(Error::Config(
                        "the fixed-matrix variant needs an association matrix file".into(),
                    ))
                }
                Some(m) if m.shape() != (NUM_ORGANS, NUM_ORGANS) => {
                    return Err(Error::Dimension(format!(
                        "association matrix must be {NUM_ORGANS}x{NUM_ORGANS}, got {:?}",
                        m.shape()
                    )))
                }
                _ => {}
            }
        }
        let params = ModelParams::init(&config, &segments, num_relations, seed);
        Ok(Self {
            config,
            segments,
            num_relations,
            assoc,
            params,
        })
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        Checkpoint {
            format: CHECKPOINT_FORMAT.to_string(),
            version: CHECKPOINT_VERSION,
            config: self.config.clone(),
            segments: self.segments,
            num_relations: self.num_relations,
            assoc: self.assoc.clone(),
            tensors: self
                .params
                .tensors()
                .into_iter()
                .map(|(name, m)| NamedTensor {
                    name,
                    rows: m.rows,
                    cols: m.cols,
                    data: m.data.clone(),
                })
                .collect(),
        }
    }

    pub fn from_checkpoint(ck: Checkpoint) -> Result<Self> {
        if ck.format != CHECKPOINT_FORMAT || ck.version != CHECKPOINT_VERSION {
            return Err(Error::Invalid(format!(
                "unsupported checkpoint {} v{}",
                ck.format, ck.version
            )));
        }
        ck.config.validate()?;
        let mut params = ModelParams::zeros(&ck.config, &ck.segments, ck.num_relations);
        let mut by_name: std::collections::HashMap<String, NamedTensor> = ck
            .tensors
            .into_iter()
            .map(|t| (t.name.clone(), t))
            .collect();
        for (name, m) in params.tensors_mut() {
            let t = by_name
                .remove(&name)
                .ok_or_else(|| Error::Invalid(format!("checkpoint lacks tensor `{name}`")))?;
            if (t.rows, t.cols) != m.shape() || t.data.len() != t.rows * t.cols {
                return Err(Error::Dimension(format!(
                    "tensor `{name}` is {}x{}, expected {:?}",
                    t.rows,
                    t.cols,
                    m.shape()
                )));
            }
            m.data = t.data;
        }
        if let Some(extra) = by_name.keys().next() {
            return Err(Error::Invalid(format!(
                "unexpected tensor `{extra}` in checkpoint"
            )));
        }
        let model = Self {
            config: ck.config,
            segments: ck.segments,
            num_relations: ck.num_relations,
            assoc: ck.assoc,
            params,
        };
        if model.config.variant == ModelVariant::Ablated1FixedMatrix && model.assoc.is_none() {
            return Err(Error::Config(
                "fixed-matrix checkpoint without association matrix".into(),
            ));
        }
        Ok(model)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string(&self.to_checkpoint())?;
        crate::error::write_file(path, text)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_checkpoint(serde_json::from_str(&text)?)
    }
}

pub const CHECKPOINT_FORMAT: &str = "crossadr-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NamedTensor {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub config: ModelConfig,
    pub segments: SegmentSpec,
    pub num_relations: usize,
    pub assoc: Option<Matrix>,
    pub tensors: Vec<NamedTensor>,
}

/// Reads a 15×15 whitespace/tab separated association matrix.
pub fn load_association_matrix(path: impl AsRef<Path>) -> Result<Matrix> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut data = Vec::with_capacity(NUM_ORGANS * NUM_ORGANS);
    let mut rows = 0;
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let vals: Vec<f64> = line
            .split_whitespace()
            .map(str::parse)
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::parse(path, i + 1, format!("bad number: {e}")))?;
        if vals.len() != NUM_ORGANS {
            return Err(Error::parse(
                path,
                i + 1,
                format!("expected {NUM_ORGANS} values"),
            ));
        }
        data.extend(vals);
        rows += 1;
    }
    if rows != NUM_ORGANS {
        return Err(Error::Dimension(format!(
            "association matrix has {rows} rows, expected {NUM_ORGANS}"
        )));
    }
    Ok(Matrix::from_vec(NUM_ORGANS, NUM_ORGANS, data))
}

pub fn write_association_matrix(path: impl AsRef<Path>, m: &Matrix) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::new();
    for r in 0..m.rows {
        let row: Vec<String> = m.row(r).iter().map(|v| v.to_string()).collect();
        out.push_str(&row.join("\t"));
        out.push('\n');
    }
    crate::error::write_file(path, out)
}

/// Organ co-occurrence `P(j | i)` over positive label vectors; rows of
/// organs that never occur are left as the identity row.
pub fn association_from_labels<'a>(
    labels: impl IntoIterator<Item = &'a crate::dataset::LabelVector>,
) -> Matrix {
    let mut counts = Matrix::zeros(NUM_ORGANS, NUM_ORGANS);
    for l in labels {
        for i in l.positive_organs() {
            for j in l.positive_organs() {
                *counts.at_mut(i, j) += 1.0;
            }
        }
    }
    for i in 0..NUM_ORGANS {
        let diag = counts.at(i, i);
        if diag > 0.0 {
            counts.row_mut(i).iter_mut().for_each(|v| *v /= diag);
        } else {
            *counts.at_mut(i, i) = 1.0;
        }
    }
    counts
}

/// `â_i = 1` iff `S_i ≥ 0.5`.
pub fn predict_labels(s: &[f64]) -> crate::dataset::LabelVector {
    let mut l = crate::dataset::LabelVector::zeros();
    for (i, &v) in s.iter().enumerate().take(NUM_ORGANS) {
        l.set(i, v >= 0.5);
    }
    l
}
