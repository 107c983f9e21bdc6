#![allow(dead_code)]

use crossadr::dataset::{LabelVector, Polarity, Triplet};
use crossadr::features::{DrugFeatureVector, FeatureTable, SegmentSpec};
use crossadr::kg::{EntityKind, KnowledgeGraph, RelationCatalog};
use crossadr::linalg::Matrix;
use crossadr::model::{Model, ModelConfig, ModelVariant};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn tiny_spec() -> SegmentSpec {
    SegmentSpec::new(3, 2, 3, 2)
}

pub fn tiny_catalog() -> RelationCatalog {
    use EntityKind::*;
    RelationCatalog::from_base(vec![
        ("targets".into(), Drug, GeneProtein),
        ("targeted by".into(), GeneProtein, Drug),
        ("ppi".into(), GeneProtein, GeneProtein),
        ("associated".into(), GeneProtein, EffectPhenotype),
    ])
    .unwrap()
}

pub fn labels(organs: &[usize]) -> LabelVector {
    let mut l = LabelVector::zeros();
    for &o in organs {
        l.set(o, true);
    }
    l
}

pub fn pos(p: &str, q: &str, organs: &[usize]) -> Triplet {
    Triplet::new(p, q, labels(organs), Polarity::Positive).unwrap()
}

pub fn neg(p: &str, q: &str) -> Triplet {
    Triplet::new(p, q, LabelVector::zeros(), Polarity::Negative).unwrap()
}

/// Six entities: three drugs, two proteins and one phenotype, finalized
/// with a single training pair (D0, D2).
pub fn tiny_graph() -> KnowledgeGraph {
    let cat = tiny_catalog();
    let mut g = KnowledgeGraph::new(cat.clone());
    let ids = [
        ("D0", EntityKind::Drug),
        ("D1", EntityKind::Drug),
        ("D2", EntityKind::Drug),
        ("G0", EntityKind::GeneProtein),
        ("G1", EntityKind::GeneProtein),
        ("E0", EntityKind::EffectPhenotype),
    ];
    for (id, k) in ids {
        g.add_entity(id, k).unwrap();
    }
    let rel = |name: &str, h, t| cat.lookup(name, h, t, 0).unwrap();
    use EntityKind::*;
    let edges = [
        (0, rel("targets", Drug, GeneProtein), 3),
        (3, rel("targeted by", GeneProtein, Drug), 1),
        (1, rel("targets", Drug, GeneProtein), 4),
        (4, rel("targeted by", GeneProtein, Drug), 2),
        (3, rel("ppi", GeneProtein, GeneProtein), 4),
        (4, rel("ppi", GeneProtein, GeneProtein), 3),
        (4, rel("associated", GeneProtein, EffectPhenotype), 5),
        (2, rel("targets", Drug, GeneProtein), 3),
        (3, rel("targeted by", GeneProtein, Drug), 0),
    ];
    for (h, r, t) in edges {
        g.add_edge(h, r, t).unwrap();
    }
    g.finalize_for_training(&[pos("D0", "D2", &[1, 3])])
        .unwrap()
}

pub fn random_features(ids: &[&str], spec: SegmentSpec, seed: u64) -> FeatureTable {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut t = FeatureTable::new(spec);
    for id in ids {
        let mut v = Vec::with_capacity(spec.total());
        v.extend((0..spec.desc).map(|_| rng.random_range(-1.0..1.0)));
        v.extend((0..spec.path).map(|_| f64::from(rng.random_bool(0.5))));
        v.extend((0..spec.maccs).map(|_| f64::from(rng.random_bool(0.5))));
        v.extend((0..spec.morgan).map(|_| f64::from(rng.random_bool(0.5))));
        t.insert(DrugFeatureVector::new(*id, spec, v).unwrap())
            .unwrap();
    }
    t
}

pub fn tiny_features(seed: u64) -> FeatureTable {
    random_features(&["D0", "D1", "D2"], tiny_spec(), seed)
}

pub fn tiny_config(variant: ModelVariant) -> ModelConfig {
    ModelConfig {
        layers: 2,
        hidden: 4,
        organ_dim: 4,
        heads: 2,
        input_dim: tiny_spec().total(),
        variant,
        ..Default::default()
    }
}

pub fn tiny_model(cfg: ModelConfig, seed: u64) -> Model {
    let assoc = (cfg.variant == ModelVariant::Ablated1FixedMatrix).then(|| Matrix::identity(15));
    Model::new(cfg, tiny_spec(), tiny_catalog().len(), assoc, seed).unwrap()
}

/// Pairs touching every flow situation of the tiny graph, including the
/// masked training pair.
pub fn tiny_batch() -> Vec<Triplet> {
    vec![
        pos("D0", "D1", &[0, 2, 14]),
        pos("D0", "D2", &[1, 3]),
        neg("D1", "D2"),
    ]
}
