//! Typed biomedical knowledge graph.
//!
//! Entities carry one of four kinds and are connected by relation-typed
//! directed edges. The relation space is a [`RelationCatalog`]: the 27 base
//! biomedical relations, followed by one ADR channel per organ and a single
//! self-loop relation. Relation ids are positions in the catalog and are the
//! row indices of the per-layer relation embeddings in the model.
//!
//! Graphs are built from an edge TSV, optionally reduced to one of the three
//! ablated topologies, and finally augmented with training-only ADR edges
//! and self-loops by [`KnowledgeGraph::finalize_for_training`].

use std::collections::HashMap;
use std::fmt;
use std::io::{BufRead, BufReader};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::dataset::Triplet;
use crate::error::{Error, Result};
use crate::NUM_ORGANS;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum EntityKind {
    Drug,
    GeneProtein,
    EffectPhenotype,
    Disease,
}

impl EntityKind {
    pub const ALL: [EntityKind; 4] = [
        EntityKind::Drug,
        EntityKind::GeneProtein,
        EntityKind::EffectPhenotype,
        EntityKind::Disease,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            EntityKind::Drug => "drug",
            EntityKind::GeneProtein => "gene/protein",
            EntityKind::EffectPhenotype => "effect/phenotype",
            EntityKind::Disease => "disease",
        }
    }
}

impl fmt::Display for EntityKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for EntityKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "drug" => Ok(EntityKind::Drug),
            "gene/protein" | "protein" | "gene" => Ok(EntityKind::GeneProtein),
            "effect/phenotype" | "phenotype" | "effect" => Ok(EntityKind::EffectPhenotype),
            "disease" => Ok(EntityKind::Disease),
            other => Err(Error::Invalid(format!("unknown entity kind `{other}`"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum RelationRole {
    /// One of the biomedical relations loaded from edge files.
    Base,
    /// Training-label channel for the zero-based organ index.
    Adr(usize),
    SelfLoop,
}

/// A relation type. Self-loops connect an entity to itself whatever its
/// kind, so their endpoint kinds are `None`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RelationKind {
    pub name: String,
    pub source_kind: Option<EntityKind>,
    pub target_kind: Option<EntityKind>,
    pub role: RelationRole,
}

/// Checkmark columns of the KG edge table: Basic, Ablation 1, 2, 3.
const EDGE_TABLE: [(&str, EntityKind, EntityKind, [bool; 4]); 27] = {
    use EntityKind::*;
    [
        ("ppi", GeneProtein, GeneProtein, [true, true, false, true]),
        (
            "associated with",
            EffectPhenotype,
            GeneProtein,
            [true, true, false, false],
        ),
        (
            "associated with",
            GeneProtein,
            EffectPhenotype,
            [true, true, false, false],
        ),
        (
            "parent-child",
            EffectPhenotype,
            EffectPhenotype,
            [true, false, false, false],
        ),
        ("target", Drug, GeneProtein, [true, true, false, true]),
        ("target", GeneProtein, Drug, [true, true, false, true]),
        ("enzyme", Drug, GeneProtein, [true, true, false, true]),
        ("enzyme", GeneProtein, Drug, [true, true, false, true]),
        ("transporter", Drug, GeneProtein, [true, true, false, true]),
        ("transporter", GeneProtein, Drug, [true, true, false, true]),
        ("carrier", Drug, GeneProtein, [true, true, false, true]),
        ("carrier", GeneProtein, Drug, [true, true, false, true]),
        (
            "side effect",
            Drug,
            EffectPhenotype,
            [true, true, true, false],
        ),
        (
            "side effect",
            EffectPhenotype,
            Drug,
            [true, true, true, false],
        ),
        (
            "associated with",
            Disease,
            GeneProtein,
            [true, false, false, true],
        ),
        (
            "associated with",
            GeneProtein,
            Disease,
            [true, false, false, true],
        ),
        (
            "phenotype present",
            Disease,
            EffectPhenotype,
            [true, false, true, false],
        ),
        (
            "phenotype present",
            EffectPhenotype,
            Disease,
            [true, false, true, false],
        ),
        (
            "phenotype absent",
            Disease,
            EffectPhenotype,
            [true, false, true, false],
        ),
        (
            "phenotype absent",
            EffectPhenotype,
            Disease,
            [true, false, true, false],
        ),
        ("contraindication", Disease, Drug, [true, false, true, true]),
        ("contraindication", Drug, Disease, [true, false, true, true]),
        ("indication", Disease, Drug, [true, false, true, true]),
        ("indication", Drug, Disease, [true, false, true, true]),
        ("off-label use", Disease, Drug, [true, false, true, true]),
        ("off-label use", Drug, Disease, [true, false, true, true]),
        ("parent-child", Disease, Disease, [true, false, true, true]),
    ]
};

pub const SELF_LOOP_NAME: &str = "self-loop";

pub fn adr_channel_name(organ: usize) -> String {
    format!("adr organ {}", organ + 1)
}

#[derive(Serialize, Deserialize)]
struct BaseRelationEntry {
    name: String,
    source: EntityKind,
    target: EntityKind,
}

/// Ordered relation space: base relations, then `NUM_ORGANS` ADR channels,
/// then the self-loop relation.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RelationCatalog {
    relations: Vec<RelationKind>,
}

impl Default for RelationCatalog {
    fn default() -> Self {
        Self::primekg()
    }
}

impl RelationCatalog {
    /// The 27 base relations of the four-kind biomedical graph.
    pub fn primekg() -> Self {
        Self::from_base(
            EDGE_TABLE
                .iter()
                .map(|(name, s, t, _)| (name.to_string(), *s, *t))
                .collect(),
        )
        .expect("built-in catalog is valid")
    }

    pub fn from_base(base: Vec<(String, EntityKind, EntityKind)>) -> Result<Self> {
        let mut relations: Vec<RelationKind> = Vec::with_capacity(base.len() + NUM_ORGANS + 1);
        for (name, s, t) in base {
            if is_synergy(&name) {
                return Err(Error::Invalid(format!(
                    "catalog may not contain synergy relation `{name}`"
                )));
            }
            if relations
                .iter()
                .any(|r| r.name == name && r.source_kind == Some(s) && r.target_kind == Some(t))
            {
                return Err(Error::Invalid(format!(
                    "duplicate relation `{name}` ({s} -> {t})"
                )));
            }
            relations.push(RelationKind {
                name,
                source_kind: Some(s),
                target_kind: Some(t),
                role: RelationRole::Base,
            });
        }
        for organ in 0..NUM_ORGANS {
            relations.push(RelationKind {
                name: adr_channel_name(organ),
                source_kind: Some(EntityKind::Drug),
                target_kind: Some(EntityKind::Drug),
                role: RelationRole::Adr(organ),
            });
        }
        relations.push(RelationKind {
            name: SELF_LOOP_NAME.to_string(),
            source_kind: None,
            target_kind: None,
            role: RelationRole::SelfLoop,
        });
        Ok(Self { relations })
    }

    /// Reads a JSON list of `{"name", "source", "target"}` base relations.
    pub fn from_json_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let entries: Vec<BaseRelationEntry> = serde_json::from_str(&text)?;
        Self::from_base(
            entries
                .into_iter()
                .map(|e| (e.name, e.source, e.target))
                .collect(),
        )
    }

    pub fn base_to_json(&self) -> Result<String> {
        let entries: Vec<BaseRelationEntry> = self
            .base()
            .iter()
            .map(|r| BaseRelationEntry {
                name: r.name.clone(),
                source: r.source_kind.unwrap(),
                target: r.target_kind.unwrap(),
            })
            .collect();
        Ok(serde_json::to_string_pretty(&entries)?)
    }

    pub fn len(&self) -> usize {
        self.relations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.relations.is_empty()
    }

    pub fn get(&self, id: usize) -> &RelationKind {
        &self.relations[id]
    }

    pub fn iter(&self) -> impl Iterator<Item = &RelationKind> {
        self.relations.iter()
    }

    pub fn base_count(&self) -> usize {
        self.relations.len() - NUM_ORGANS - 1
    }

    pub fn base(&self) -> &[RelationKind] {
        &self.relations[..self.base_count()]
    }

    pub fn adr_channel(&self, organ: usize) -> usize {
        assert!(organ < NUM_ORGANS);
        self.base_count() + organ
    }

    pub fn self_loop(&self) -> usize {
        self.relations.len() - 1
    }

    /// Resolves a base relation by name and endpoint kinds.
    pub fn lookup(
        &self,
        name: &str,
        head: EntityKind,
        tail: EntityKind,
        line: usize,
    ) -> Result<usize> {
        let mut known = false;
        for (i, r) in self.base().iter().enumerate() {
            if r.name == name {
                known = true;
                if r.source_kind == Some(head) && r.target_kind == Some(tail) {
                    return Ok(i);
                }
            }
        }
        if known {
            Err(Error::KindMismatch {
                name: name.to_string(),
                head: head.to_string(),
                tail: tail.to_string(),
                line,
            })
        } else {
            Err(Error::UnknownRelation {
                name: name.to_string(),
                line,
            })
        }
    }
}

fn is_synergy(name: &str) -> bool {
    name.to_ascii_lowercase().contains("synerg")
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum KgVariant {
    Basic,
    Ablation1,
    Ablation2,
    Ablation3,
}

impl KgVariant {
    pub const ALL: [KgVariant; 4] = [
        KgVariant::Basic,
        KgVariant::Ablation1,
        KgVariant::Ablation2,
        KgVariant::Ablation3,
    ];

    fn column(self) -> usize {
        match self {
            KgVariant::Basic => 0,
            KgVariant::Ablation1 => 1,
            KgVariant::Ablation2 => 2,
            KgVariant::Ablation3 => 3,
        }
    }

    /// Entity kind whose nodes this variant deletes.
    pub fn removed_kind(self) -> Option<EntityKind> {
        match self {
            KgVariant::Basic => None,
            KgVariant::Ablation1 => Some(EntityKind::Disease),
            KgVariant::Ablation2 => Some(EntityKind::GeneProtein),
            KgVariant::Ablation3 => Some(EntityKind::EffectPhenotype),
        }
    }

    /// Whether a relation row is checked in this variant's column. Relations
    /// outside the edge table are kept whenever their endpoints survive.
    pub fn keeps(self, relation: &RelationKind) -> bool {
        if relation.role != RelationRole::Base {
            return true;
        }
        EDGE_TABLE
            .iter()
            .find(|(name, s, t, _)| {
                *name == relation.name
                    && Some(*s) == relation.source_kind
                    && Some(*t) == relation.target_kind
            })
            .map(|row| row.3[self.column()])
            .unwrap_or(true)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            KgVariant::Basic => "basic",
            KgVariant::Ablation1 => "abl1",
            KgVariant::Ablation2 => "abl2",
            KgVariant::Ablation3 => "abl3",
        }
    }
}

impl FromStr for KgVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "basic" => Ok(KgVariant::Basic),
            "abl1" | "ablation1" => Ok(KgVariant::Ablation1),
            "abl2" | "ablation2" => Ok(KgVariant::Ablation2),
            "abl3" | "ablation3" => Ok(KgVariant::Ablation3),
            other => Err(Error::Invalid(format!("unknown KG variant `{other}`"))),
        }
    }
}

/// Rows of the edge table checked under `variant`, as `(name, source, target)`.
pub fn table_column(variant: KgVariant) -> Vec<(&'static str, EntityKind, EntityKind)> {
    EDGE_TABLE
        .iter()
        .filter(|row| row.3[variant.column()])
        .map(|(n, s, t, _)| (*n, *s, *t))
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct KgConfig {
    pub variant: KgVariant,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Entity {
    pub id: String,
    pub kind: EntityKind,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Edge {
    pub head: usize,
    pub relation: usize,
    pub tail: usize,
}

#[derive(Serialize, Deserialize)]
struct GraphFile {
    catalog: RelationCatalog,
    entities: Vec<Entity>,
    edges: Vec<Edge>,
}

/// Directed multigraph with dense entity indices in first-seen order.
#[derive(Clone, Debug)]
pub struct KnowledgeGraph {
    catalog: RelationCatalog,
    entities: Vec<Entity>,
    edges: Vec<Edge>,
    index: HashMap<String, usize>,
    /// `(head, relation)` pairs per tail, in edge insertion order.
    in_adj: Vec<Vec<(usize, usize)>>,
    out_adj: Vec<Vec<usize>>,
}

impl PartialEq for KnowledgeGraph {
    fn eq(&self, other: &Self) -> bool {
        self.catalog == other.catalog
            && self.entities == other.entities
            && self.edges == other.edges
    }
}

const EDGE_HEADER: [&str; 5] = ["head_id", "relation", "tail_id", "head_kind", "tail_kind"];

impl KnowledgeGraph {
    pub fn new(catalog: RelationCatalog) -> Self {
        Self {
            catalog,
            entities: Vec::new(),
            edges: Vec::new(),
            index: HashMap::new(),
            in_adj: Vec::new(),
            out_adj: Vec::new(),
        }
    }

    /// Loads an edge TSV with header
    /// `head_id relation tail_id head_kind tail_kind`.
    pub fn load_edges(path: impl AsRef<Path>, catalog: &RelationCatalog) -> Result<Self> {
        let path = path.as_ref();
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_edges(BufReader::new(file), catalog, path)
    }

    pub fn read_edges<R: BufRead>(
        reader: R,
        catalog: &RelationCatalog,
        origin: &Path,
    ) -> Result<Self> {
        let mut g = Self::new(catalog.clone());
        let mut saw_header = false;
        for (i, line) in reader.lines().enumerate() {
            let lineno = i + 1;
            let line = line.map_err(|e| Error::io(origin, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let cols: Vec<&str> = line.split('\t').map(str::trim).collect();
            if !saw_header {
                if cols != EDGE_HEADER {
                    return Err(Error::parse(
                        origin,
                        lineno,
                        format!("expected header `{}`", EDGE_HEADER.join("\\t")),
                    ));
                }
                saw_header = true;
                continue;
            }
            if cols.len() != 5 {
                return Err(Error::parse(
                    origin,
                    lineno,
                    format!("expected 5 tab-separated columns, found {}", cols.len()),
                ));
            }
            let (head_id, rel, tail_id) = (cols[0], cols[1], cols[2]);
            if head_id.is_empty() || tail_id.is_empty() {
                return Err(Error::parse(origin, lineno, "empty entity id"));
            }
            if is_synergy(rel) {
                return Err(Error::SynergyRelation {
                    name: rel.to_string(),
                    line: lineno,
                });
            }
            let head_kind: EntityKind = cols[3]
                .parse()
                .map_err(|e: Error| Error::parse(origin, lineno, e.to_string()))?;
            let tail_kind: EntityKind = cols[4]
                .parse()
                .map_err(|e: Error| Error::parse(origin, lineno, e.to_string()))?;
            let relation = catalog.lookup(rel, head_kind, tail_kind, lineno)?;
            let head = g.add_entity(head_id, head_kind)?;
            let tail = g.add_entity(tail_id, tail_kind)?;
            g.push_edge(Edge {
                head,
                relation,
                tail,
            });
        }
        Ok(g)
    }

    /// Returns the dense index of `id`, inserting it if new.
    pub fn add_entity(&mut self, id: &str, kind: EntityKind) -> Result<usize> {
        if let Some(&idx) = self.index.get(id) {
            let existing = self.entities[idx].kind;
            if existing != kind {
                return Err(Error::EntityKindConflict {
                    id: id.to_string(),
                    first: existing.to_string(),
                    second: kind.to_string(),
                });
            }
            return Ok(idx);
        }
        let idx = self.entities.len();
        self.entities.push(Entity {
            id: id.to_string(),
            kind,
        });
        self.index.insert(id.to_string(), idx);
        self.in_adj.push(Vec::new());
        self.out_adj.push(Vec::new());
        Ok(idx)
    }

    /// Adds an edge after checking it against the relation's declared kinds.
    pub fn add_edge(&mut self, head: usize, relation: usize, tail: usize) -> Result<()> {
        if head >= self.entities.len() || tail >= self.entities.len() {
            return Err(Error::Invalid(format!(
                "edge endpoint out of range ({head}, {tail})"
            )));
        }
        if relation >= self.catalog.len() {
            return Err(Error::Invalid(format!(
                "relation id {relation} out of range"
            )));
        }
        let r = self.catalog.get(relation);
        let (hk, tk) = (self.entities[head].kind, self.entities[tail].kind);
        let ok = match r.role {
            RelationRole::SelfLoop => head == tail,
            _ => r.source_kind == Some(hk) && r.target_kind == Some(tk),
        };
        if !ok {
            return Err(Error::KindMismatch {
                name: r.name.clone(),
                head: hk.to_string(),
                tail: tk.to_string(),
                line: 0,
            });
        }
        self.push_edge(Edge {
            head,
            relation,
            tail,
        });
        Ok(())
    }

    fn push_edge(&mut self, e: Edge) {
        self.in_adj[e.tail].push((e.head, e.relation));
        self.out_adj[e.head].push(e.tail);
        self.edges.push(e);
    }

    fn from_parts(
        catalog: RelationCatalog,
        entities: Vec<Entity>,
        edges: Vec<Edge>,
    ) -> Result<Self> {
        let mut g = Self::new(catalog);
        for e in &entities {
            if g.index.contains_key(&e.id) {
                return Err(Error::Invalid(format!("duplicate entity `{}`", e.id)));
            }
            g.add_entity(&e.id, e.kind)?;
        }
        for e in edges {
            g.add_edge(e.head, e.relation, e.tail)?;
        }
        Ok(g)
    }

    pub fn catalog(&self) -> &RelationCatalog {
        &self.catalog
    }

    pub fn entities(&self) -> &[Entity] {
        &self.entities
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn num_entities(&self) -> usize {
        self.entities.len()
    }

    pub fn entity_index(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    pub fn entity(&self, idx: usize) -> &Entity {
        &self.entities[idx]
    }

    /// In-edges of `tail` as `(head, relation)`.
    pub fn in_edges(&self, tail: usize) -> &[(usize, usize)] {
        &self.in_adj[tail]
    }

    pub fn out_neighbors(&self, head: usize) -> &[usize] {
        &self.out_adj[head]
    }

    /// Edge count per relation id.
    pub fn relation_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.catalog.len()];
        for e in &self.edges {
            counts[e.relation] += 1;
        }
        counts
    }

    /// One `name<TAB>source<TAB>target<TAB>count` line per relation present.
    pub fn stats_lines(&self) -> Vec<String> {
        self.relation_counts()
            .iter()
            .enumerate()
            .filter(|(_, &c)| c > 0)
            .map(|(id, c)| {
                let r = self.catalog.get(id);
                let kind = |k: Option<EntityKind>| k.map_or("*", |k| k.as_str());
                format!(
                    "{}\t{}\t{}\t{}",
                    r.name,
                    kind(r.source_kind),
                    kind(r.target_kind),
                    c
                )
            })
            .collect()
    }

    /// Reduces a basic graph to one of the ablated topologies. Entities of
    /// the removed kind disappear with all their edges; base edges whose
    /// relation is unchecked in the variant's column are dropped.
    pub fn apply_ablation(&self, cfg: KgConfig) -> KnowledgeGraph {
        self.ablate(cfg.variant).0
    }

    /// Like [`apply_ablation`](Self::apply_ablation), also returning the
    /// removed edges (in original index space).
    pub fn ablate(&self, variant: KgVariant) -> (KnowledgeGraph, Vec<Edge>) {
        let removed_kind = variant.removed_kind();
        let mut remap = vec![None; self.entities.len()];
        let mut out = Self::new(self.catalog.clone());
        for (i, e) in self.entities.iter().enumerate() {
            if Some(e.kind) != removed_kind {
                remap[i] = Some(out.add_entity(&e.id, e.kind).expect("unique ids"));
            }
        }
        let mut removed = Vec::new();
        for e in &self.edges {
            let keep_rel = variant.keeps(self.catalog.get(e.relation));
            match (remap[e.head], remap[e.tail]) {
                (Some(h), Some(t)) if keep_rel => out.push_edge(Edge {
                    head: h,
                    relation: e.relation,
                    tail: t,
                }),
                _ => removed.push(*e),
            }
        }
        (out, removed)
    }

    pub fn has_self_loop(&self, entity: usize) -> bool {
        let sl = self.catalog.self_loop();
        self.in_adj[entity]
            .iter()
            .any(|&(h, r)| r == sl && h == entity)
    }

    pub fn is_finalized(&self) -> bool {
        (0..self.entities.len()).all(|e| self.has_self_loop(e))
    }

    /// Adds forward and reverse ADR-channel edges for each positive organ of
    /// each training triplet, then one self-loop per entity that lacks one.
    /// Only training triplets may be passed here.
    pub fn finalize_for_training(&self, train: &[Triplet]) -> Result<KnowledgeGraph> {
        let mut g = self.clone();
        for t in train {
            let p = g
                .entity_index(&t.p)
                .ok_or_else(|| Error::UnknownEntity(t.p.clone()))?;
            let q = g
                .entity_index(&t.q)
                .ok_or_else(|| Error::UnknownEntity(t.q.clone()))?;
            for organ in t.labels.positive_organs() {
                let ch = g.catalog.adr_channel(organ);
                g.add_edge(p, ch, q)?;
                g.add_edge(q, ch, p)?;
            }
        }
        let sl = g.catalog.self_loop();
        for e in 0..g.entities.len() {
            if !g.has_self_loop(e) {
                g.push_edge(Edge {
                    head: e,
                    relation: sl,
                    tail: e,
                });
            }
        }
        Ok(g)
    }

    /// Returns a copy without the given entities (and their edges).
    pub fn without_entities(&self, drop: &[usize]) -> KnowledgeGraph {
        let mut keep = vec![true; self.entities.len()];
        for &d in drop {
            keep[d] = false;
        }
        let mut remap = vec![None; self.entities.len()];
        let mut out = Self::new(self.catalog.clone());
        for (i, e) in self.entities.iter().enumerate() {
            if keep[i] {
                remap[i] = Some(out.add_entity(&e.id, e.kind).expect("unique ids"));
            }
        }
        for e in &self.edges {
            if let (Some(h), Some(t)) = (remap[e.head], remap[e.tail]) {
                out.push_edge(Edge {
                    head: h,
                    relation: e.relation,
                    tail: t,
                });
            }
        }
        out
    }

    pub fn to_json(&self) -> Result<String> {
        let file = GraphFile {
            catalog: self.catalog.clone(),
            entities: self.entities.clone(),
            edges: self.edges.clone(),
        };
        Ok(serde_json::to_string(&file)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: GraphFile = serde_json::from_str(text)?;
        Self::from_parts(file.catalog, file.entities, file.edges)
    }

    /// Base-relation edges in the loader's TSV format. ADR channels and
    /// self-loops are derived at finalization and not written.
    pub fn base_edges_tsv(&self) -> String {
        let mut out = EDGE_HEADER.join("\t");
        out.push('\n');
        for e in &self.edges {
            let rel = self.catalog.get(e.relation);
            if rel.role != RelationRole::Base {
                continue;
            }
            let (h, t) = (&self.entities[e.head], &self.entities[e.tail]);
            out.push_str(&format!(
                "{}\t{}\t{}\t{}\t{}\n",
                h.id, rel.name, t.id, h.kind, t.kind
            ));
        }
        out
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        crate::error::write_file(path, self.to_json()?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}
