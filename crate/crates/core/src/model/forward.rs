use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::features::{attend_raw, AttendCache, FeatureTable};
use crate::kg::{KnowledgeGraph, RelationRole};
use crate::linalg::{dot, relu, sigmoid, softmax, Matrix};
use crate::NUM_ORGANS;

use super::{AnchorScope, GateOverride, Model, ModelVariant};

/// States of one flow layer, restricted to its support.
#[derive(Clone, Debug)]
pub struct FlowLayer {
    /// Supported entities in ascending index order.
    pub members: Vec<usize>,
    pub slot: HashMap<usize, usize>,
    /// `members.len() × d`, row-major.
    pub h: Vec<f64>,
    pub(crate) m: Vec<f64>,
    pub(crate) t: Vec<f64>,
    pub(crate) ht: Vec<f64>,
    pub(crate) g: Vec<f64>,
}

impl FlowLayer {
    pub fn state(&self, entity: usize, d: usize) -> Option<&[f64]> {
        self.slot.get(&entity).map(|&s| &self.h[s * d..(s + 1) * d])
    }
}

/// One directed flow from `src` toward `dst`.
#[derive(Clone, Debug)]
pub struct FlowTrace {
    pub src: usize,
    pub dst: usize,
    /// Relation attention, one vector of length `R` per layer.
    pub alpha: Vec<Vec<f64>>,
    /// Layer 0 holds only the source; layers `1..=L` follow.
    pub layers: Vec<FlowLayer>,
    /// `h^l_dst` for `l = 1..=L`; zero where `dst` is unsupported.
    pub readout: Vec<Vec<f64>>,
    pub(crate) ctx: Vec<f64>,
    pub(crate) z: Vec<Vec<f64>>,
    pub(crate) u: Vec<Vec<f64>>,
    pub(crate) rel_hat: Vec<Matrix>,
}

#[derive(Clone, Debug)]
pub(crate) enum AdrTrace {
    Organ {
        g: Vec<f64>,
        h_init: Matrix,
        q: Matrix,
        k: Matrix,
        v: Matrix,
        probs: Vec<Matrix>,
        o: Matrix,
        h_ref: Matrix,
        w_pool: Vec<f64>,
    },
    Fixed {
        ms1: Vec<f64>,
    },
}

/// Everything the backward pass needs for one pair.
#[derive(Clone, Debug)]
pub struct PairForward {
    pub p: usize,
    pub q: usize,
    pub(crate) x_p: Vec<f64>,
    pub(crate) x_q: Vec<f64>,
    pub(crate) att_p: AttendCache,
    pub(crate) att_q: AttendCache,
    pub(crate) e_p: Vec<f64>,
    pub(crate) e_q: Vec<f64>,
    pub(crate) anchor_p: Vec<f64>,
    pub(crate) anchor_q: Vec<f64>,
    pub flow_pq: FlowTrace,
    pub flow_qp: FlowTrace,
    pub(crate) qp: Vec<Vec<f64>>,
    pub(crate) fusion: Option<Matrix>,
    pub h1: Vec<f64>,
    pub s1: Vec<f64>,
    pub(crate) adr: AdrTrace,
    pub h2: Vec<f64>,
    pub(crate) h2p: Vec<f64>,
    pub(crate) a_weights: Vec<f64>,
    pub h3: Vec<f64>,
    pub(crate) head_in: Vec<f64>,
    pub s: Vec<f64>,
}

/// Public view of one prediction.
#[derive(Clone, Debug, PartialEq)]
pub struct PredictionScores {
    pub s: Vec<f64>,
    pub s1: Vec<f64>,
    pub h_out1: Vec<f64>,
    pub h_out2: Vec<f64>,
    pub h_out3: Vec<f64>,
    /// `H_initial`, 15 × d2 (organ-embedding variant only).
    pub h_initial: Option<Matrix>,
    pub h_refined: Option<Matrix>,
    pub w_pool: Option<Vec<f64>>,
}

impl PairForward {
    pub fn scores(&self) -> PredictionScores {
        let (h_initial, h_refined, w_pool) = match &self.adr {
            AdrTrace::Organ {
                h_init,
                h_ref,
                w_pool,
                ..
            } => (
                Some(h_init.clone()),
                Some(h_ref.clone()),
                Some(w_pool.clone()),
            ),
            AdrTrace::Fixed { .. } => (None, None, None),
        };
        PredictionScores {
            s: self.s.clone(),
            s1: self.s1.clone(),
            h_out1: self.h1.clone(),
            h_out2: self.h2.clone(),
            h_out3: self.h3.clone(),
            h_initial,
            h_refined,
            w_pool,
        }
    }
}

pub(crate) fn is_masked(
    graph: &KnowledgeGraph,
    head: usize,
    rel: usize,
    tail: usize,
    pair: (usize, usize),
) -> bool {
    matches!(graph.catalog().get(rel).role, RelationRole::Adr(_))
        && ((head == pair.0 && tail == pair.1) || (head == pair.1 && tail == pair.0))
}

impl Model {
    fn check_inputs(&self, graph: &KnowledgeGraph, features: &FeatureTable) -> Result<()> {
        if graph.catalog().len() != self.num_relations {
            return Err(Error::Dimension(format!(
                "graph has {} relations, model was built for {}",
                graph.catalog().len(),
                self.num_relations
            )));
        }
        if features.spec != self.segments {
            return Err(Error::Dimension(format!(
                "feature segments {:?} differ from the model's {:?}",
                features.spec, self.segments
            )));
        }
        Ok(())
    }

    /// Runs the model on the ordered pair `(p, q)`.
    pub fn forward(
        &self,
        graph: &KnowledgeGraph,
        features: &FeatureTable,
        p: &str,
        q: &str,
    ) -> Result<PairForward> {
        self.check_inputs(graph, features)?;
        let pi = graph
            .entity_index(p)
            .ok_or_else(|| Error::UnknownEntity(p.to_string()))?;
        let qi = graph
            .entity_index(q)
            .ok_or_else(|| Error::UnknownEntity(q.to_string()))?;
        let xp = &features.require(p)?.values;
        let xq = &features.require(q)?.values;
        Ok(self.forward_raw(graph, xp, xq, pi, qi))
    }

    /// Scores an unordered pair; the pair is canonicalized first so the
    /// result does not depend on argument order.
    pub fn predict(
        &self,
        graph: &KnowledgeGraph,
        features: &FeatureTable,
        a: &str,
        b: &str,
    ) -> Result<PredictionScores> {
        let (p, q) = crate::dataset::canonical_pair(a, b);
        Ok(self.forward(graph, features, &p, &q)?.scores())
    }

    pub(crate) fn forward_raw(
        &self,
        graph: &KnowledgeGraph,
        xp: &[f64],
        xq: &[f64],
        pi: usize,
        qi: usize,
    ) -> PairForward {
        let cfg = &self.config;
        let (e_p, att_p) = attend_raw(xp, &self.segments, &self.params.feat);
        let (e_q, att_q) = attend_raw(xq, &self.segments, &self.params.feat);
        let anchor_p = self.params.w_in.matvec(&e_p);
        let anchor_q = self.params.w_in.matvec(&e_q);
        let pair = (pi, qi);
        let flow_pq = self.run_flow(graph, pi, qi, &e_p, &e_q, &anchor_p, pair);
        let flow_qp = self.run_flow(graph, qi, pi, &e_q, &e_p, &anchor_q, pair);

        let d = cfg.hidden;
        let l_count = cfg.layers;
        let hp = &flow_pq.readout;
        let hq = &flow_qp.readout;
        let mut h1 = vec![0.0; cfg.flow_width()];
        let (qp, fusion) = if cfg.variant == ModelVariant::Ablated2LastLayerOnly {
            h1[..d].copy_from_slice(&hp[l_count - 1]);
            h1[d..2 * d].copy_from_slice(&hq[l_count - 1]);
            (Vec::new(), None)
        } else {
            let scale = (d as f64).sqrt();
            let qp: Vec<Vec<f64>> = hp.iter().map(|h| self.params.w_cross.matvec(h)).collect();
            let mut a = Matrix::zeros(l_count, l_count);
            for i in 0..l_count {
                let logits: Vec<f64> = hq.iter().map(|hj| dot(&qp[i], hj) / scale).collect();
                a.row_mut(i).copy_from_slice(&softmax(&logits));
            }
            let (hp_hat, hq_hat) = h1.split_at_mut(l_count * d);
            for i in 0..l_count {
                for j in 0..l_count {
                    let w = a.at(i, j);
                    for k in 0..d {
                        hp_hat[i * d + k] += w * hq[j][k];
                        hq_hat[j * d + k] += w * hp[i][k];
                    }
                }
            }
            (qp, Some(a))
        };

        let pre = {
            let mut v = self.params.w_rel1.matvec(&h1);
            for (vi, b) in v.iter_mut().zip(&self.params.b_rel1.data) {
                *vi += b;
            }
            v
        };
        let s1: Vec<f64> = pre.iter().map(|&v| sigmoid(v)).collect();
        let (adr, h2) = self.organ_space(&s1);

        let h2p = self.params.w_t.matvec(&h2);
        let a_score: Vec<f64> = h1.iter().zip(&h2p).map(|(a, b)| a * b).collect();
        let a_weights = softmax(&a_score);
        let h3: Vec<f64> = a_weights.iter().zip(&h1).map(|(a, b)| a * b).collect();
        let head_in: Vec<f64> = [h1.as_slice(), h2.as_slice(), h3.as_slice()].concat();
        let s: Vec<f64> = self
            .params
            .w_out
            .matvec(&head_in)
            .iter()
            .zip(&self.params.b_out.data)
            .map(|(o, b)| sigmoid(o + b))
            .collect();

        PairForward {
            p: pi,
            q: qi,
            x_p: xp.to_vec(),
            x_q: xq.to_vec(),
            att_p,
            att_q,
            e_p,
            e_q,
            anchor_p,
            anchor_q,
            flow_pq,
            flow_qp,
            qp,
            fusion,
            h1,
            s1,
            adr,
            h2,
            h2p,
            a_weights,
            h3,
            head_in,
            s,
        }
    }

    fn organ_space(&self, s1: &[f64]) -> (AdrTrace, Vec<f64>) {
        let d2 = self.config.organ_dim;
        let pm = &self.params;
        if self.config.variant == ModelVariant::Ablated1FixedMatrix {
            let m = self.assoc.as_ref().expect("checked at construction");
            let ms1 = m.matvec(s1);
            let h2 = pm.w_assoc.matvec(&ms1);
            return (AdrTrace::Fixed { ms1 }, h2);
        }
        let g: Vec<f64> = s1.iter().map(|&v| sigmoid(v)).collect();
        let mut h_init = Matrix::zeros(NUM_ORGANS, d2);
        for i in 0..NUM_ORGANS {
            for k in 0..d2 {
                *h_init.at_mut(i, k) =
                    g[i] * pm.e_plus.at(i, k) + (1.0 - g[i]) * pm.e_minus.at(i, k);
            }
        }
        let project = |w: &Matrix| {
            let mut out = Matrix::zeros(NUM_ORGANS, d2);
            for i in 0..NUM_ORGANS {
                out.row_mut(i).copy_from_slice(&w.matvec(h_init.row(i)));
            }
            out
        };
        let (q, k, v) = (
            project(&pm.attn_q),
            project(&pm.attn_k),
            project(&pm.attn_v),
        );
        let heads = self.config.heads;
        let dh = d2 / heads;
        let scale = (dh as f64).sqrt();
        let mut o = Matrix::zeros(NUM_ORGANS, d2);
        let mut probs = Vec::with_capacity(heads);
        for hd in 0..heads {
            let c = hd * dh..(hd + 1) * dh;
            let mut p = Matrix::zeros(NUM_ORGANS, NUM_ORGANS);
            for i in 0..NUM_ORGANS {
                let logits: Vec<f64> = (0..NUM_ORGANS)
                    .map(|j| dot(&q.row(i)[c.clone()], &k.row(j)[c.clone()]) / scale)
                    .collect();
                p.row_mut(i).copy_from_slice(&softmax(&logits));
                for j in 0..NUM_ORGANS {
                    let w = p.at(i, j);
                    for col in c.clone() {
                        *o.at_mut(i, col) += w * v.at(j, col);
                    }
                }
            }
            probs.push(p);
        }
        let mut h_ref = Matrix::zeros(NUM_ORGANS, d2);
        for i in 0..NUM_ORGANS {
            let attn = pm.attn_o.matvec(o.row(i));
            for kk in 0..d2 {
                *h_ref.at_mut(i, kk) = (h_init.at(i, kk) + attn[kk]).tanh();
            }
        }
        let w_pool = softmax(s1);
        let mut h2 = vec![0.0; d2];
        for i in 0..NUM_ORGANS {
            for kk in 0..d2 {
                h2[kk] += w_pool[i] * h_ref.at(i, kk) + h_init.at(i, kk) / NUM_ORGANS as f64;
            }
        }
        (
            AdrTrace::Organ {
                g,
                h_init,
                q,
                k,
                v,
                probs,
                o,
                h_ref,
                w_pool,
            },
            h2,
        )
    }

    #[allow(clippy::too_many_arguments)]
    fn run_flow(
        &self,
        graph: &KnowledgeGraph,
        src: usize,
        dst: usize,
        e_src: &[f64],
        e_dst: &[f64],
        anchor: &[f64],
        pair: (usize, usize),
    ) -> FlowTrace {
        let cfg = &self.config;
        let d = cfg.hidden;
        let gd = cfg.gate_rows();
        let ctx: Vec<f64> = [e_src, e_dst].concat();
        let mut alpha = Vec::with_capacity(cfg.layers);
        let mut zs = Vec::with_capacity(cfg.layers);
        let mut us = Vec::with_capacity(cfg.layers);
        let mut rel_hat = Vec::with_capacity(cfg.layers);
        for lp in &self.params.layers {
            let z = lp.w_rel.matvec(&ctx);
            let u = relu(&z);
            let a: Vec<f64> = lp.w_attn.matvec(&u).into_iter().map(sigmoid).collect();
            let mut rh = lp.rel_emb.clone();
            for (r, &ar) in a.iter().enumerate() {
                rh.row_mut(r).iter_mut().for_each(|v| *v *= ar);
            }
            alpha.push(a);
            zs.push(z);
            us.push(u);
            rel_hat.push(rh);
        }

        let zero = vec![0.0; d];
        let mut layers = vec![FlowLayer {
            members: vec![src],
            slot: HashMap::from([(src, 0)]),
            h: anchor.to_vec(),
            m: Vec::new(),
            t: Vec::new(),
            ht: Vec::new(),
            g: Vec::new(),
        }];
        for l in 1..=cfg.layers {
            let prev = &layers[l - 1];
            let lp = &self.params.layers[l - 1];
            let rh = &rel_hat[l - 1];
            let mut cand: Vec<usize> = prev
                .members
                .iter()
                .flat_map(|&e| graph.out_neighbors(e).iter().copied())
                .collect();
            cand.sort_unstable();
            cand.dedup();
            let mut next = FlowLayer {
                members: Vec::new(),
                slot: HashMap::new(),
                h: Vec::new(),
                m: Vec::new(),
                t: Vec::new(),
                ht: Vec::new(),
                g: Vec::new(),
            };
            for e in cand {
                let mut m = vec![0.0; d];
                let mut any = false;
                for &(h, r) in graph.in_edges(e) {
                    let Some(&s) = prev.slot.get(&h) else {
                        continue;
                    };
                    if is_masked(graph, h, r, e, pair) {
                        continue;
                    }
                    any = true;
                    let hv = &prev.h[s * d..(s + 1) * d];
                    for (mk, (hk, rk)) in m.iter_mut().zip(hv.iter().zip(rh.row(r))) {
                        *mk += hk * rk;
                    }
                }
                if !any {
                    continue;
                }
                let t = lp.w_msg.matvec(&m);
                let ht = relu(&t);
                let a: &[f64] = if cfg.anchor == AnchorScope::AllSupported || e == src {
                    anchor
                } else {
                    &zero
                };
                let g: Vec<f64> = match cfg.gate_override {
                    GateOverride::Open => vec![1.0; gd],
                    GateOverride::Closed => vec![0.0; gd],
                    GateOverride::Learned => {
                        let gin = [ht.as_slice(), a].concat();
                        lp.w_gate.matvec(&gin).into_iter().map(sigmoid).collect()
                    }
                };
                next.slot.insert(e, next.members.len());
                next.members.push(e);
                for k in 0..d {
                    let gk = g[if gd == 1 { 0 } else { k }];
                    next.h.push(gk * ht[k] + (1.0 - gk) * a[k]);
                }
                next.m.extend(m);
                next.t.extend(t);
                next.ht.extend(ht);
                next.g.extend(g);
            }
            layers.push(next);
        }
        let readout = (1..=cfg.layers)
            .map(|l| {
                layers[l]
                    .state(dst, d)
                    .map_or_else(|| zero.clone(), <[f64]>::to_vec)
            })
            .collect();
        FlowTrace {
            src,
            dst,
            alpha,
            layers,
            readout,
            ctx,
            z: zs,
            u: us,
            rel_hat,
        }
    }
}
