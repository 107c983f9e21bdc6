//! Entity importance for one drug pair.
//!
//! `score(e) = Σ_flows Σ_l ‖h_e^(l)‖₂ · mean_r α_r^(l)`, the mean running
//! over the distinct relation kinds of the in-edges that carried a message
//! into `e` at layer `l`. Entities outside both supports score 0 and are
//! never reported.

use std::collections::{BTreeSet, HashSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::FeatureTable;
use crate::kg::{EntityKind, KnowledgeGraph, RelationRole};
use crate::linalg::norm2;
use crate::model::{FlowTrace, Model};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankedEntity {
    pub entity_id: String,
    pub kind: EntityKind,
    pub score: f64,
    /// Contribution per layer `1..=L`, both flows summed.
    pub per_layer: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImportanceRanking {
    pub pair: (String, String),
    pub entries: Vec<RankedEntity>,
}

fn flow_contributions(
    graph: &KnowledgeGraph,
    tr: &FlowTrace,
    d: usize,
    pair: (usize, usize),
    acc: &mut [Vec<f64>],
) {
    for l in 1..tr.layers.len() {
        let lay = &tr.layers[l];
        let prev = &tr.layers[l - 1];
        for (i, &e) in lay.members.iter().enumerate() {
            let kinds: BTreeSet<usize> = graph
                .in_edges(e)
                .iter()
                .filter(|&&(h, r)| {
                    prev.slot.contains_key(&h)
                        && !(matches!(graph.catalog().get(r).role, RelationRole::Adr(_))
                            && ((h == pair.0 && e == pair.1) || (h == pair.1 && e == pair.0)))
                })
                .map(|&(_, r)| r)
                .collect();
            if kinds.is_empty() {
                continue;
            }
            let mean_alpha =
                kinds.iter().map(|&r| tr.alpha[l - 1][r]).sum::<f64>() / kinds.len() as f64;
            acc[e][l - 1] += norm2(&lay.h[i * d..(i + 1) * d]) * mean_alpha;
        }
    }
}

/// Top `top_k` entities for the pair, query drugs excluded, optionally
/// restricted to one entity kind.
pub fn rank_entities(
    model: &Model,
    graph: &KnowledgeGraph,
    features: &FeatureTable,
    a: &str,
    b: &str,
    top_k: usize,
    kind: Option<EntityKind>,
) -> Result<ImportanceRanking> {
    if top_k < 1 {
        return Err(Error::Invalid("top_k must be at least 1".into()));
    }
    let (p, q) = crate::dataset::canonical_pair(a, b);
    let fw = model.forward(graph, features, &p, &q)?;
    let d = model.config.hidden;
    let mut acc = vec![vec![0.0; model.config.layers]; graph.num_entities()];
    flow_contributions(graph, &fw.flow_pq, d, (fw.p, fw.q), &mut acc);
    flow_contributions(graph, &fw.flow_qp, d, (fw.p, fw.q), &mut acc);
    let mut entries: Vec<RankedEntity> = acc
        .into_iter()
        .enumerate()
        .filter(|&(e, _)| e != fw.p && e != fw.q)
        .filter(|&(e, _)| kind.is_none_or(|k| graph.entity(e).kind == k))
        .filter_map(|(e, per_layer)| {
            let score: f64 = per_layer.iter().sum();
            (score > 0.0).then(|| RankedEntity {
                entity_id: graph.entity(e).id.clone(),
                kind: graph.entity(e).kind,
                score,
                per_layer,
            })
        })
        .collect();
    entries.sort_by(|x, y| {
        y.score
            .total_cmp(&x.score)
            .then_with(|| x.entity_id.cmp(&y.entity_id))
    });
    entries.truncate(top_k);
    Ok(ImportanceRanking {
        pair: (p, q),
        entries,
    })
}

impl ImportanceRanking {
    pub fn to_tsv(&self) -> String {
        let layers = self.entries.first().map_or(0, |e| e.per_layer.len());
        let mut out = String::from("rank\tentity_id\tkind\tscore");
        for l in 1..=layers {
            let _ = write!(out, "\tlayer{l}");
        }
        out.push('\n');
        for (i, e) in self.entries.iter().enumerate() {
            let _ = write!(
                out,
                "{}\t{}\t{}\t{:.10e}",
                i + 1,
                e.entity_id,
                e.kind,
                e.score
            );
            for v in &e.per_layer {
                let _ = write!(out, "\t{v:.10e}");
            }
            out.push('\n');
        }
        out
    }

    /// Edges of `graph` whose endpoints are both ranked, self-loops and
    /// ADR channels left out.
    pub fn induced_edges_tsv(&self, graph: &KnowledgeGraph) -> String {
        let ranked: HashSet<&str> = self.entries.iter().map(|e| e.entity_id.as_str()).collect();
        let mut out = String::from("head_id\trelation\ttail_id\n");
        for e in graph.edges() {
            let rel = graph.catalog().get(e.relation);
            if rel.role != RelationRole::Base {
                continue;
            }
            let (h, t) = (&graph.entity(e.head).id, &graph.entity(e.tail).id);
            if ranked.contains(h.as_str()) && ranked.contains(t.as_str()) {
                let _ = writeln!(out, "{h}\t{}\t{t}", rel.name);
            }
        }
        out
    }
}
