mod common;

use common::*;
use crossadr::attribution::rank_entities;
use crossadr::features::FeatureTable;
use crossadr::kg::{EntityKind, KnowledgeGraph};
use crossadr::linalg::sigmoid;
use crossadr::model::{GateOverride, Model, ModelVariant};
use proptest::prelude::*;

fn model(seed: u64) -> Model {
    tiny_model(tiny_config(ModelVariant::Full), seed)
}

/// The tiny graph plus a drug D3 and protein G9 that only see each other.
fn graph_with_island() -> KnowledgeGraph {
    let mut g = tiny_graph();
    let cat = g.catalog().clone();
    let d3 = g.add_entity("D3", EntityKind::Drug).unwrap();
    let g9 = g.add_entity("G9", EntityKind::GeneProtein).unwrap();
    use EntityKind::*;
    g.add_edge(d3, cat.lookup("targets", Drug, GeneProtein, 0).unwrap(), g9)
        .unwrap();
    g.add_edge(
        g9,
        cat.lookup("targeted by", GeneProtein, Drug, 0).unwrap(),
        d3,
    )
    .unwrap();
    g.finalize_for_training(&[]).unwrap()
}

fn island_features(seed: u64) -> FeatureTable {
    random_features(&["D0", "D1", "D2", "D3"], tiny_spec(), seed)
}

#[test]
fn argument_order_does_not_matter() {
    let (g, f, m) = (tiny_graph(), tiny_features(4), model(4));
    let a = m.predict(&g, &f, "D0", "D2").unwrap();
    let b = m.predict(&g, &f, "D2", "D0").unwrap();
    assert_eq!(a, b);
    for (x, y) in a.s.iter().zip(&b.s) {
        assert_eq!(x.to_bits(), y.to_bits());
    }
}

#[test]
fn zero_attention_weights_give_half_alpha() {
    let (g, f) = (tiny_graph(), tiny_features(1));
    let mut m = model(1);
    for lp in &mut m.params.layers {
        lp.w_attn.fill(0.0);
    }
    let fw = m.forward(&g, &f, "D0", "D1").unwrap();
    for a in fw.flow_pq.alpha.iter().chain(&fw.flow_qp.alpha) {
        assert!(a.iter().all(|&v| v == 0.5));
    }
}

#[test]
fn alpha_depends_on_flow_direction() {
    let (g, f, m) = (tiny_graph(), tiny_features(2), model(2));
    let fw = m.forward(&g, &f, "D0", "D1").unwrap();
    assert_ne!(fw.flow_pq.alpha, fw.flow_qp.alpha);
}

#[test]
fn zero_organ_projection_gives_half_s1() {
    let (g, f) = (tiny_graph(), tiny_features(3));
    let mut m = model(3);
    m.params.w_rel1.fill(0.0);
    m.params.b_rel1.fill(0.0);
    let sc = m.predict(&g, &f, "D0", "D1").unwrap();
    assert!(sc.s1.iter().all(|&v| v == 0.5));
    let gate = sigmoid(0.5);
    assert!((gate - 0.622_459_331_201_854_6).abs() < 1e-15);
    let h = sc.h_initial.unwrap();
    for i in 0..15 {
        for k in 0..m.config.organ_dim {
            let want = gate * m.params.e_plus.at(i, k) + (1.0 - gate) * m.params.e_minus.at(i, k);
            assert!((h.at(i, k) - want).abs() < 1e-15);
        }
    }
}

#[test]
fn single_layer_fusion_swaps_the_flows() {
    let (g, f) = (tiny_graph(), tiny_features(5));
    let mut cfg = tiny_config(ModelVariant::Full);
    cfg.layers = 1;
    let m = tiny_model(cfg, 5);
    let fw = m.forward(&g, &f, "D0", "D1").unwrap();
    let want = [
        fw.flow_qp.readout[0].as_slice(),
        fw.flow_pq.readout[0].as_slice(),
    ]
    .concat();
    assert_eq!(fw.h1, want);
}

#[test]
fn closed_gate_keeps_the_anchor() {
    let (g, f) = (tiny_graph(), tiny_features(6));
    let mut cfg = tiny_config(ModelVariant::Full);
    cfg.gate_override = GateOverride::Closed;
    let m = tiny_model(cfg, 6);
    let fw = m.forward(&g, &f, "D0", "D1").unwrap();
    let d = m.config.hidden;
    for tr in [&fw.flow_pq, &fw.flow_qp] {
        let anchor = &tr.layers[0].h;
        for lay in &tr.layers[1..] {
            for row in lay.h.chunks(d) {
                assert_eq!(row, anchor.as_slice());
            }
        }
    }
}

#[test]
fn open_gate_states_are_relu_outputs() {
    let (g, f) = (tiny_graph(), tiny_features(7));
    let mut cfg = tiny_config(ModelVariant::Full);
    cfg.gate_override = GateOverride::Open;
    let m = tiny_model(cfg, 7);
    let fw = m.forward(&g, &f, "D0", "D1").unwrap();
    for tr in [&fw.flow_pq, &fw.flow_qp] {
        for lay in &tr.layers[1..] {
            assert!(lay.h.iter().all(|&v| v >= 0.0));
        }
    }
}

#[test]
fn unreachable_destination_reads_zero() {
    let (g, f, m) = (graph_with_island(), island_features(8), model(8));
    let fw = m.forward(&g, &f, "D0", "D3").unwrap();
    for tr in [&fw.flow_pq, &fw.flow_qp] {
        assert!(tr.readout.iter().flatten().all(|&v| v == 0.0));
    }
    assert!(fw.h1.iter().all(|&v| v == 0.0));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn support_only_grows(seed in 0u64..1000, pair in 0usize..3) {
        let (p, q) = [("D0", "D1"), ("D0", "D2"), ("D1", "D2")][pair];
        let (g, f, m) = (tiny_graph(), tiny_features(seed), model(seed));
        let fw = m.forward(&g, &f, p, q).unwrap();
        for tr in [&fw.flow_pq, &fw.flow_qp] {
            for w in tr.layers.windows(2) {
                prop_assert!(w[0].members.iter().all(|e| w[1].slot.contains_key(e)));
            }
        }
    }

    #[test]
    fn outputs_are_probabilities(seed in 0u64..1000) {
        let (g, f, m) = (tiny_graph(), tiny_features(seed), model(seed));
        let sc = m.predict(&g, &f, "D1", "D2").unwrap();
        prop_assert!(sc.s.iter().chain(&sc.s1).all(|&v| v > 0.0 && v < 1.0));
        let w = sc.w_pool.unwrap();
        prop_assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }
}

/// D0 and D1 are joined only through the first protein. The second one
/// hangs off D0 and leads nowhere.
fn single_path_graph(names: [&str; 2]) -> KnowledgeGraph {
    let cat = tiny_catalog();
    let mut g = KnowledgeGraph::new(cat.clone());
    use EntityKind::*;
    let d0 = g.add_entity("D0", Drug).unwrap();
    let d1 = g.add_entity("D1", Drug).unwrap();
    let x = g.add_entity(names[0], GeneProtein).unwrap();
    let y = g.add_entity(names[1], GeneProtein).unwrap();
    let t = cat.lookup("targets", Drug, GeneProtein, 0).unwrap();
    let tb = cat.lookup("targeted by", GeneProtein, Drug, 0).unwrap();
    for (drug, protein) in [(d0, x), (d1, x), (d0, y)] {
        g.add_edge(drug, t, protein).unwrap();
        g.add_edge(protein, tb, drug).unwrap();
    }
    g.finalize_for_training(&[]).unwrap()
}

fn two_drug_features(seed: u64) -> FeatureTable {
    random_features(&["D0", "D1"], tiny_spec(), seed)
}

#[test]
fn sole_path_protein_ranks_first() {
    // The decoy sorts first by id, so a tie would fail too.
    let g = single_path_graph(["G1", "G0"]);
    for seed in 0..8 {
        let r = rank_entities(
            &model(seed),
            &g,
            &two_drug_features(seed),
            "D0",
            "D1",
            8,
            Some(EntityKind::GeneProtein),
        )
        .unwrap();
        assert_eq!(r.entries[0].entity_id, "G1", "seed {seed}: {:?}", r.entries);
    }
}

#[test]
fn ranking_ignores_entity_names() {
    let (a, b) = (
        single_path_graph(["G0", "G1"]),
        single_path_graph(["PZ", "PA"]),
    );
    let (m, f) = (model(9), two_drug_features(9));
    let ra = rank_entities(&m, &a, &f, "D0", "D1", 8, None).unwrap();
    let rb = rank_entities(&m, &b, &f, "D0", "D1", 8, None).unwrap();
    let rename = |id: &str| match id {
        "G0" => "PZ".to_string(),
        "G1" => "PA".to_string(),
        other => other.to_string(),
    };
    assert_eq!(ra.entries.len(), rb.entries.len());
    for x in &ra.entries {
        let y = rb
            .entries
            .iter()
            .find(|y| y.entity_id == rename(&x.entity_id))
            .unwrap();
        assert_eq!(x.score, y.score);
    }
    assert_eq!(rename(&ra.entries[0].entity_id), rb.entries[0].entity_id);
}

#[test]
fn isolated_entities_are_not_ranked() {
    let (g, f, m) = (graph_with_island(), island_features(10), model(10));
    let r = rank_entities(&m, &g, &f, "D0", "D1", 100, None).unwrap();
    assert!(r
        .entries
        .iter()
        .all(|e| e.entity_id != "G9" && e.entity_id != "D3"));
    assert!(r
        .entries
        .iter()
        .all(|e| e.entity_id != "D0" && e.entity_id != "D1"));
    assert!(r.entries.iter().all(|e| e.score > 0.0));
}

#[test]
fn large_top_k_returns_whole_support() {
    let (g, f, m) = (graph_with_island(), island_features(11), model(11));
    let all = rank_entities(&m, &g, &f, "D0", "D1", 1000, None).unwrap();
    // G0, G1, D2 and E0 are reachable from D0 or D1 within two hops.
    let mut ids: Vec<&str> = all.entries.iter().map(|e| e.entity_id.as_str()).collect();
    ids.sort_unstable();
    assert_eq!(ids, ["D2", "E0", "G0", "G1"]);
    let top2 = rank_entities(&m, &g, &f, "D0", "D1", 2, None).unwrap();
    assert_eq!(top2.entries, all.entries[..2]);
    assert!(rank_entities(&m, &g, &f, "D0", "D1", 0, None).is_err());
}

#[test]
fn deleting_an_unscored_entity_leaves_scores() {
    let (g, f, m) = (graph_with_island(), island_features(12), model(12));
    let g9 = g.entity_index("G9").unwrap();
    let smaller = g.without_entities(&[g9]);
    let before = m.predict(&g, &f, "D0", "D1").unwrap();
    let after = m.predict(&smaller, &f, "D0", "D1").unwrap();
    for (x, y) in before.s.iter().zip(&after.s) {
        assert!((x - y).abs() < 1e-10);
    }
}
