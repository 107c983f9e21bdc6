use crate::features::attend_backward;
use crate::kg::KnowledgeGraph;
use crate::linalg::{axpy, dot, softmax_backward, Matrix};
use crate::NUM_ORGANS;

use super::forward::{is_masked, AdrTrace, FlowTrace, PairForward};
use super::{AnchorScope, GateOverride, Model, ModelParams, ModelVariant};

impl Model {
    /// Accumulates parameter gradients into `grads` given `∂L/∂o`, the
    /// gradient with respect to the pre-sigmoid organ logits.
    pub fn backward(
        &self,
        graph: &KnowledgeGraph,
        fw: &PairForward,
        d_logits: &[f64],
        grads: &mut ModelParams,
    ) {
        assert_eq!(d_logits.len(), NUM_ORGANS);
        let cfg = &self.config;
        let pm = &self.params;
        let n1 = cfg.flow_width();
        let d2 = cfg.organ_dim;

        grads.w_out.add_outer(d_logits, &fw.head_in);
        axpy(1.0, d_logits, &mut grads.b_out.data);
        let d_head = pm.w_out.matvec_t(d_logits);
        let mut dh1 = d_head[..n1].to_vec();
        let mut dh2 = d_head[n1..n1 + d2].to_vec();
        let dh3 = &d_head[n1 + d2..];

        // h3 = softmax(h1 ⊙ W_t h2) ⊙ h1
        let mut d_aw = vec![0.0; n1];
        for i in 0..n1 {
            dh1[i] += dh3[i] * fw.a_weights[i];
            d_aw[i] = dh3[i] * fw.h1[i];
        }
        let d_score = softmax_backward(&fw.a_weights, &d_aw);
        let mut dh2p = vec![0.0; n1];
        for i in 0..n1 {
            dh1[i] += d_score[i] * fw.h2p[i];
            dh2p[i] = d_score[i] * fw.h1[i];
        }
        grads.w_t.add_outer(&dh2p, &fw.h2);
        pm.w_t.matvec_t_acc(&dh2p, &mut dh2);

        let ds1 = self.organ_space_backward(fw, &dh2, grads);
        let d_pre: Vec<f64> = ds1
            .iter()
            .zip(&fw.s1)
            .map(|(d, s)| d * s * (1.0 - s))
            .collect();
        grads.w_rel1.add_outer(&d_pre, &fw.h1);
        axpy(1.0, &d_pre, &mut grads.b_rel1.data);
        pm.w_rel1.matvec_t_acc(&d_pre, &mut dh1);

        let (d_hp, d_hq) = self.fusion_backward(fw, &dh1, grads);

        let din = cfg.input_dim;
        let (da_p, dctx_pq) =
            self.flow_backward(graph, &fw.flow_pq, &d_hp, &fw.anchor_p, (fw.p, fw.q), grads);
        let (da_q, dctx_qp) =
            self.flow_backward(graph, &fw.flow_qp, &d_hq, &fw.anchor_q, (fw.p, fw.q), grads);
        grads.w_in.add_outer(&da_p, &fw.e_p);
        grads.w_in.add_outer(&da_q, &fw.e_q);
        let mut de_p = pm.w_in.matvec_t(&da_p);
        let mut de_q = pm.w_in.matvec_t(&da_q);
        axpy(1.0, &dctx_pq[..din], &mut de_p);
        axpy(1.0, &dctx_pq[din..], &mut de_q);
        axpy(1.0, &dctx_qp[..din], &mut de_q);
        axpy(1.0, &dctx_qp[din..], &mut de_p);
        attend_backward(&fw.x_p, &self.segments, &fw.att_p, &de_p, &mut grads.feat);
        attend_backward(&fw.x_q, &self.segments, &fw.att_q, &de_q, &mut grads.feat);
    }

    /// Returns `∂L/∂S1`.
    fn organ_space_backward(
        &self,
        fw: &PairForward,
        dh2: &[f64],
        grads: &mut ModelParams,
    ) -> Vec<f64> {
        let pm = &self.params;
        let d2 = self.config.organ_dim;
        match &fw.adr {
            AdrTrace::Fixed { ms1 } => {
                grads.w_assoc.add_outer(dh2, ms1);
                let dv = pm.w_assoc.matvec_t(dh2);
                self.assoc
                    .as_ref()
                    .expect("checked at construction")
                    .matvec_t(&dv)
            }
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
            } => {
                let mut d_w = vec![0.0; NUM_ORGANS];
                let mut d_init = Matrix::zeros(NUM_ORGANS, d2);
                let mut d_o = Matrix::zeros(NUM_ORGANS, d2);
                for i in 0..NUM_ORGANS {
                    d_w[i] = dot(dh2, h_ref.row(i));
                    let mut dx = vec![0.0; d2];
                    for kk in 0..d2 {
                        let r = h_ref.at(i, kk);
                        dx[kk] = w_pool[i] * dh2[kk] * (1.0 - r * r);
                        *d_init.at_mut(i, kk) += dh2[kk] / NUM_ORGANS as f64 + dx[kk];
                    }
                    grads.attn_o.add_outer(&dx, o.row(i));
                    d_o.row_mut(i).copy_from_slice(&pm.attn_o.matvec_t(&dx));
                }
                let heads = self.config.heads;
                let dh = d2 / heads;
                let scale = (dh as f64).sqrt();
                let mut dq = Matrix::zeros(NUM_ORGANS, d2);
                let mut dk = Matrix::zeros(NUM_ORGANS, d2);
                let mut dv = Matrix::zeros(NUM_ORGANS, d2);
                for (hd, p) in probs.iter().enumerate() {
                    let c = hd * dh..(hd + 1) * dh;
                    for i in 0..NUM_ORGANS {
                        let doi = &d_o.row(i)[c.clone()];
                        let dp: Vec<f64> = (0..NUM_ORGANS)
                            .map(|j| dot(doi, &v.row(j)[c.clone()]))
                            .collect();
                        for j in 0..NUM_ORGANS {
                            let pij = p.at(i, j);
                            for (col, dval) in c.clone().zip(doi) {
                                *dv.at_mut(j, col) += pij * dval;
                            }
                        }
                        let ds = softmax_backward(p.row(i), &dp);
                        for j in 0..NUM_ORGANS {
                            let s = ds[j] / scale;
                            if s == 0.0 {
                                continue;
                            }
                            for col in c.clone() {
                                *dq.at_mut(i, col) += s * k.at(j, col);
                                *dk.at_mut(j, col) += s * q.at(i, col);
                            }
                        }
                    }
                }
                for i in 0..NUM_ORGANS {
                    let hi = h_init.row(i).to_vec();
                    grads.attn_q.add_outer(dq.row(i), &hi);
                    grads.attn_k.add_outer(dk.row(i), &hi);
                    grads.attn_v.add_outer(dv.row(i), &hi);
                    let row = d_init.row_mut(i);
                    pm.attn_q.matvec_t_acc(dq.row(i), row);
                    pm.attn_k.matvec_t_acc(dk.row(i), row);
                    pm.attn_v.matvec_t_acc(dv.row(i), row);
                }
                let mut ds1 = softmax_backward(w_pool, &d_w);
                for i in 0..NUM_ORGANS {
                    let di = d_init.row(i);
                    axpy(g[i], di, grads.e_plus.row_mut(i));
                    axpy(1.0 - g[i], di, grads.e_minus.row_mut(i));
                    let dg: f64 = (0..d2)
                        .map(|kk| di[kk] * (pm.e_plus.at(i, kk) - pm.e_minus.at(i, kk)))
                        .sum();
                    ds1[i] += dg * g[i] * (1.0 - g[i]);
                }
                ds1
            }
        }
    }

    /// Splits `∂L/∂h_out1` into per-layer readout gradients of both flows.
    fn fusion_backward(
        &self,
        fw: &PairForward,
        dh1: &[f64],
        grads: &mut ModelParams,
    ) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
        let d = self.config.hidden;
        let lc = self.config.layers;
        let mut d_hp = vec![vec![0.0; d]; lc];
        let mut d_hq = vec![vec![0.0; d]; lc];
        if self.config.variant == ModelVariant::Ablated2LastLayerOnly {
            d_hp[lc - 1].copy_from_slice(&dh1[..d]);
            d_hq[lc - 1].copy_from_slice(&dh1[d..2 * d]);
            return (d_hp, d_hq);
        }
        let a = fw.fusion.as_ref().expect("fusion trace");
        let hp = &fw.flow_pq.readout;
        let hq = &fw.flow_qp.readout;
        let (d_hat_p, d_hat_q) = dh1.split_at(lc * d);
        let scale = (d as f64).sqrt();
        for i in 0..lc {
            let dpi = &d_hat_p[i * d..(i + 1) * d];
            let mut da = vec![0.0; lc];
            for j in 0..lc {
                let dqj = &d_hat_q[j * d..(j + 1) * d];
                da[j] = dot(dpi, &hq[j]) + dot(dqj, &hp[i]);
                axpy(a.at(i, j), dpi, &mut d_hq[j]);
                axpy(a.at(i, j), dqj, &mut d_hp[i]);
            }
            let dz = softmax_backward(a.row(i), &da);
            let mut dqp = vec![0.0; d];
            for j in 0..lc {
                axpy(dz[j] / scale, &hq[j], &mut dqp);
                axpy(dz[j] / scale, &fw.qp[i], &mut d_hq[j]);
            }
            grads.w_cross.add_outer(&dqp, &hp[i]);
            self.params.w_cross.matvec_t_acc(&dqp, &mut d_hp[i]);
        }
        (d_hp, d_hq)
    }

    /// Backpropagates readout gradients through one flow. Returns the
    /// gradient of the anchor vector and of the relation-attention context.
    fn flow_backward(
        &self,
        graph: &KnowledgeGraph,
        tr: &FlowTrace,
        d_read: &[Vec<f64>],
        anchor: &[f64],
        pair: (usize, usize),
        grads: &mut ModelParams,
    ) -> (Vec<f64>, Vec<f64>) {
        let cfg = &self.config;
        let d = cfg.hidden;
        let gd = cfg.gate_rows();
        let lc = cfg.layers;
        let zero = vec![0.0; d];
        let mut dh: Vec<Vec<f64>> = tr
            .layers
            .iter()
            .map(|l| vec![0.0; l.members.len() * d])
            .collect();
        for l in 1..=lc {
            if let Some(&s) = tr.layers[l].slot.get(&tr.dst) {
                axpy(1.0, &d_read[l - 1], &mut dh[l][s * d..(s + 1) * d]);
            }
        }
        let mut d_anchor = vec![0.0; d];
        let mut d_rel_hat: Vec<Matrix> = tr
            .rel_hat
            .iter()
            .map(|m| Matrix::zeros(m.rows, m.cols))
            .collect();

        for l in (1..=lc).rev() {
            let lay = &tr.layers[l];
            let prev = &tr.layers[l - 1];
            let lp = &self.params.layers[l - 1];
            let rh = &tr.rel_hat[l - 1];
            let (lo, hi) = dh.split_at_mut(l);
            let dprev = &mut lo[l - 1];
            let dcur = &hi[0];
            for (i, &e) in lay.members.iter().enumerate() {
                let dhi = &dcur[i * d..(i + 1) * d];
                if dhi.iter().all(|&v| v == 0.0) {
                    continue;
                }
                let ht = &lay.ht[i * d..(i + 1) * d];
                let g = &lay.g[i * gd..(i + 1) * gd];
                let use_anchor = cfg.anchor == AnchorScope::AllSupported || e == tr.src;
                let a: &[f64] = if use_anchor { anchor } else { &zero };
                let gk = |k: usize| g[if gd == 1 { 0 } else { k }];
                let mut dht: Vec<f64> = (0..d).map(|k| dhi[k] * gk(k)).collect();
                let mut da: Vec<f64> = (0..d).map(|k| dhi[k] * (1.0 - gk(k))).collect();
                if cfg.gate_override == GateOverride::Learned {
                    let mut dz = vec![0.0; gd];
                    for k in 0..d {
                        dz[if gd == 1 { 0 } else { k }] += dhi[k] * (ht[k] - a[k]);
                    }
                    for (z, gv) in dz.iter_mut().zip(g) {
                        *z *= gv * (1.0 - gv);
                    }
                    let gin = [ht, a].concat();
                    grads.layers[l - 1].w_gate.add_outer(&dz, &gin);
                    let dgin = lp.w_gate.matvec_t(&dz);
                    axpy(1.0, &dgin[..d], &mut dht);
                    axpy(1.0, &dgin[d..], &mut da);
                }
                if use_anchor {
                    axpy(1.0, &da, &mut d_anchor);
                }
                let t = &lay.t[i * d..(i + 1) * d];
                let dt: Vec<f64> = dht
                    .iter()
                    .zip(t)
                    .map(|(g, &tv)| if tv > 0.0 { *g } else { 0.0 })
                    .collect();
                if dt.iter().all(|&v| v == 0.0) {
                    continue;
                }
                grads.layers[l - 1]
                    .w_msg
                    .add_outer(&dt, &lay.m[i * d..(i + 1) * d]);
                let dm = lp.w_msg.matvec_t(&dt);
                for &(h, r) in graph.in_edges(e) {
                    let Some(&s) = prev.slot.get(&h) else {
                        continue;
                    };
                    if is_masked(graph, h, r, e, pair) {
                        continue;
                    }
                    let hv = &prev.h[s * d..(s + 1) * d];
                    let dpv = &mut dprev[s * d..(s + 1) * d];
                    let drh = d_rel_hat[l - 1].row_mut(r);
                    let rr = rh.row(r);
                    for k in 0..d {
                        dpv[k] += dm[k] * rr[k];
                        drh[k] += dm[k] * hv[k];
                    }
                }
            }
        }
        axpy(1.0, &dh[0], &mut d_anchor);

        let mut d_ctx = vec![0.0; tr.ctx.len()];
        for l in 0..lc {
            let lp = &self.params.layers[l];
            let gl = &mut grads.layers[l];
            let alpha = &tr.alpha[l];
            let drh = &d_rel_hat[l];
            let mut ds = vec![0.0; alpha.len()];
            for (r, &ar) in alpha.iter().enumerate() {
                let row = drh.row(r);
                if row.iter().all(|&v| v == 0.0) {
                    continue;
                }
                axpy(ar, row, gl.rel_emb.row_mut(r));
                ds[r] = dot(row, lp.rel_emb.row(r)) * ar * (1.0 - ar);
            }
            gl.w_attn.add_outer(&ds, &tr.u[l]);
            let du = lp.w_attn.matvec_t(&ds);
            let dz: Vec<f64> = du
                .iter()
                .zip(&tr.z[l])
                .map(|(g, &z)| if z > 0.0 { *g } else { 0.0 })
                .collect();
            gl.w_rel.add_outer(&dz, &tr.ctx);
            lp.w_rel.matvec_t_acc(&dz, &mut d_ctx);
        }
        (d_anchor, d_ctx)
    }
}
