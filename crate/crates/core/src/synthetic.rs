//! Planted-signal synthetic data.
//!
//! Each drug targets 1–3 proteins. Organ `i` of a pair is labelled 1 iff the
//! two drugs share a target protein whose index is `≡ i (mod 15)`. Drug
//! fingerprints carry the residue classes of their targets in the first 15
//! circular-fingerprint bits, everything else is noise.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::dataset::{canonical_pair, write_adr_records, write_synergy, LabelVector, Pair};
use crate::error::{Error, Result};
use crate::features::{DrugFeatureVector, FeatureTable, Segment, SegmentSpec};
use crate::kg::{EntityKind, KnowledgeGraph, RelationCatalog};
use crate::model::{association_from_labels, write_association_matrix};
use crate::NUM_ORGANS;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticConfig {
    pub n_drugs: usize,
    pub n_proteins: usize,
    pub n_phenotypes: usize,
    pub n_diseases: usize,
    /// Extra random ppi partners per protein.
    pub ppi_per_protein: usize,
    pub seed: u64,
    pub segments: SegmentSpec,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            n_drugs: 200,
            n_proteins: 120,
            n_phenotypes: 30,
            n_diseases: 20,
            ppi_per_protein: 1,
            seed: 10,
            segments: SegmentSpec::new(8, 16, 16, 24),
        }
    }
}

pub fn drug_id(i: usize) -> String {
    format!("D{i:04}")
}

pub fn protein_id(k: usize) -> String {
    format!("G{k:04}")
}

/// Organ labels implied by two target sets.
pub fn planted_labels(a: &BTreeSet<usize>, b: &BTreeSet<usize>) -> LabelVector {
    let mut l = LabelVector::zeros();
    for k in a.intersection(b) {
        l.set(k % NUM_ORGANS, true);
    }
    l
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub rule: String,
    pub config: SyntheticConfig,
    /// Target protein indices per drug id.
    pub targets: BTreeMap<String, BTreeSet<usize>>,
}

#[derive(Clone, Debug)]
pub struct SyntheticData {
    pub graph: KnowledgeGraph,
    pub features: FeatureTable,
    pub records: BTreeMap<Pair, LabelVector>,
    pub synergy: BTreeSet<Pair>,
    pub truth: GroundTruth,
}

pub fn generate(cfg: &SyntheticConfig) -> Result<SyntheticData> {
    if cfg.n_drugs < 10 {
        return Err(Error::Invalid(format!(
            "need at least 10 drugs, got {}",
            cfg.n_drugs
        )));
    }
    if cfg.n_proteins < 3 {
        return Err(Error::Invalid("need at least 3 proteins".into()));
    }
    if cfg.segments.morgan < NUM_ORGANS {
        return Err(Error::Invalid(format!(
            "circular fingerprint segment must hold {NUM_ORGANS} class bits"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let catalog = RelationCatalog::primekg();
    let mut g = KnowledgeGraph::new(catalog.clone());
    use EntityKind::*;
    let rel = |name: &str, h: EntityKind, t: EntityKind| catalog.lookup(name, h, t, 0);

    let drugs: Vec<usize> = (0..cfg.n_drugs)
        .map(|i| g.add_entity(&drug_id(i), Drug))
        .collect::<Result<_>>()?;
    let proteins: Vec<usize> = (0..cfg.n_proteins)
        .map(|k| g.add_entity(&protein_id(k), GeneProtein))
        .collect::<Result<_>>()?;
    let phenos: Vec<usize> = (0..cfg.n_phenotypes)
        .map(|i| g.add_entity(&format!("E{i:04}"), EffectPhenotype))
        .collect::<Result<_>>()?;
    let diseases: Vec<usize> = (0..cfg.n_diseases)
        .map(|i| g.add_entity(&format!("X{i:04}"), Disease))
        .collect::<Result<_>>()?;

    let (t_fwd, t_rev) = (
        rel("target", Drug, GeneProtein)?,
        rel("target", GeneProtein, Drug)?,
    );
    let mut targets: BTreeMap<String, BTreeSet<usize>> = BTreeMap::new();
    for (i, &d) in drugs.iter().enumerate() {
        let n = rng.random_range(1..=3usize).min(cfg.n_proteins);
        let picked: BTreeSet<usize> = index::sample(&mut rng, cfg.n_proteins, n)
            .into_iter()
            .collect();
        for &k in &picked {
            g.add_edge(d, t_fwd, proteins[k])?;
            g.add_edge(proteins[k], t_rev, d)?;
        }
        targets.insert(drug_id(i), picked);
    }

    let ppi = rel("ppi", GeneProtein, GeneProtein)?;
    let mut seen = BTreeSet::new();
    for a in 0..cfg.n_proteins {
        for _ in 0..cfg.ppi_per_protein {
            let b = rng.random_range(0..cfg.n_proteins);
            if a != b && seen.insert((a.min(b), a.max(b))) {
                g.add_edge(proteins[a], ppi, proteins[b])?;
                g.add_edge(proteins[b], ppi, proteins[a])?;
            }
        }
    }
    let (pa, pb) = (
        rel("associated with", GeneProtein, EffectPhenotype)?,
        rel("associated with", EffectPhenotype, GeneProtein)?,
    );
    for &e in &phenos {
        let k = rng.random_range(0..cfg.n_proteins);
        g.add_edge(proteins[k], pa, e)?;
        g.add_edge(e, pb, proteins[k])?;
    }
    let (da, db) = (
        rel("associated with", GeneProtein, Disease)?,
        rel("associated with", Disease, GeneProtein)?,
    );
    for &x in &diseases {
        let k = rng.random_range(0..cfg.n_proteins);
        g.add_edge(proteins[k], da, x)?;
        g.add_edge(x, db, proteins[k])?;
    }

    let spec = cfg.segments;
    let mut features = FeatureTable::new(spec);
    for (id, tset) in &targets {
        let mut v = vec![0.0; spec.total()];
        for x in &mut v[spec.range(Segment::Descriptors)] {
            let z: f64 = StandardNormal.sample(&mut rng);
            *x = 0.1 * z;
        }
        for seg in [Segment::PathFp, Segment::SubstructureKeys] {
            for x in &mut v[spec.range(seg)] {
                *x = f64::from(rng.random_bool(0.05));
            }
        }
        let morgan = spec.range(Segment::CircularFp);
        for x in &mut v[morgan.start + NUM_ORGANS..morgan.end] {
            *x = f64::from(rng.random_bool(0.05));
        }
        for &k in tset {
            v[morgan.start + k % NUM_ORGANS] = 1.0;
        }
        features.insert(DrugFeatureVector::new(id.clone(), spec, v)?)?;
    }

    let ids: Vec<&String> = targets.keys().collect();
    let mut records = BTreeMap::new();
    let mut unrelated = Vec::new();
    for i in 0..ids.len() {
        for j in (i + 1)..ids.len() {
            let l = planted_labels(&targets[ids[i]], &targets[ids[j]]);
            let pair = canonical_pair(ids[i], ids[j]);
            if l.any() {
                records.insert(pair, l);
            } else {
                unrelated.push(pair);
            }
        }
    }
    let n_syn = records.len().min(unrelated.len());
    let synergy: BTreeSet<Pair> = index::sample(&mut rng, unrelated.len(), n_syn)
        .into_iter()
        .map(|i| unrelated[i].clone())
        .collect();

    Ok(SyntheticData {
        graph: g,
        features,
        records,
        synergy,
        truth: GroundTruth {
            rule: format!(
                "organ i (0-based) is positive iff the drugs share a target protein G<k> with k mod {NUM_ORGANS} = i"
            ),
            config: cfg.clone(),
            targets,
        },
    })
}

/// File names written by [`SyntheticData::write_dir`].
pub const EDGES_FILE: &str = "edges.tsv";
pub const FEATURES_FILE: &str = "features.tsv";
pub const RECORDS_FILE: &str = "adr_records.tsv";
pub const SYNERGY_FILE: &str = "synergy.tsv";
pub const TRUTH_FILE: &str = "ground_truth.json";
pub const ASSOC_FILE: &str = "assoc.tsv";

impl SyntheticData {
    pub fn write_dir(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let edges = dir.join(EDGES_FILE);
        std::fs::write(&edges, self.graph.base_edges_tsv()).map_err(|e| Error::io(&edges, e))?;
        self.features.save(dir.join(FEATURES_FILE))?;
        write_adr_records(dir.join(RECORDS_FILE), &self.records)?;
        write_synergy(dir.join(SYNERGY_FILE), &self.synergy)?;
        let truth = dir.join(TRUTH_FILE);
        std::fs::write(&truth, serde_json::to_string_pretty(&self.truth)?)
            .map_err(|e| Error::io(&truth, e))?;
        write_association_matrix(
            dir.join(ASSOC_FILE),
            &association_from_labels(self.records.values()),
        )
    }
}

/// Random but well-formed features for every drug in `graph`: Gaussian
/// descriptors, Bernoulli(0.3) bits elsewhere.
pub fn random_features_for(
    graph: &KnowledgeGraph,
    spec: SegmentSpec,
    seed: u64,
) -> Result<FeatureTable> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut ids: Vec<&str> = graph
        .entities()
        .iter()
        .filter(|e| e.kind == EntityKind::Drug)
        .map(|e| e.id.as_str())
        .collect();
    ids.sort_unstable();
    let mut t = FeatureTable::new(spec);
    for id in ids {
        let mut v = vec![0.0; spec.total()];
        for seg in Segment::ALL {
            for x in &mut v[spec.range(seg)] {
                *x = if seg.is_binary() {
                    f64::from(rng.random_bool(0.3))
                } else {
                    StandardNormal.sample(&mut rng)
                };
            }
        }
        t.insert(DrugFeatureVector::new(id, spec, v)?)?;
    }
    Ok(t)
}
