//! Drug-pair samples and drug-disjoint dataset splits.
//!
//! A sample is a triplet `(p, labels, q)` over an unordered drug pair with a
//! 15-organ binary label vector. Positive samples come from ADR records;
//! negatives either from curated synergy pairs (mode D) or from a seeded
//! uniform draw over unrecorded pairs (mode R). The drug pool is cut into
//! disjoint train/valid/test drug sets and a pair is only ever used by the
//! split that owns both of its drugs.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::str::FromStr;

use log::warn;
use rand::seq::{index, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::NUM_ORGANS;

/// Number of unordered pairs of distinct drugs, `n(n-1)/2`.
pub fn combination_count(n: u64) -> u64 {
    n * n.saturating_sub(1) / 2
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct LabelVector {
    bits: [bool; NUM_ORGANS],
}

impl LabelVector {
    pub fn zeros() -> Self {
        Self {
            bits: [false; NUM_ORGANS],
        }
    }

    pub fn from_bits(bits: [bool; NUM_ORGANS]) -> Self {
        Self { bits }
    }

    pub fn get(&self, organ: usize) -> bool {
        self.bits[organ]
    }

    pub fn set(&mut self, organ: usize, value: bool) {
        self.bits[organ] = value;
    }

    pub fn bits(&self) -> &[bool; NUM_ORGANS] {
        &self.bits
    }

    pub fn any(&self) -> bool {
        self.bits.iter().any(|&b| b)
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn positive_organs(&self) -> impl Iterator<Item = usize> + '_ {
        self.bits
            .iter()
            .enumerate()
            .filter(|(_, &b)| b)
            .map(|(i, _)| i)
    }

    pub fn union(&self, other: &LabelVector) -> LabelVector {
        let mut out = *self;
        for i in 0..NUM_ORGANS {
            out.bits[i] |= other.bits[i];
        }
        out
    }

    pub fn as_f64(&self) -> [f64; NUM_ORGANS] {
        self.bits.map(|b| if b { 1.0 } else { 0.0 })
    }

    fn parse_columns(cols: &[&str]) -> std::result::Result<Self, String> {
        if cols.len() != NUM_ORGANS {
            return Err(format!(
                "expected {NUM_ORGANS} label columns, found {}",
                cols.len()
            ));
        }
        let mut bits = [false; NUM_ORGANS];
        for (i, c) in cols.iter().enumerate() {
            bits[i] = match *c {
                "0" => false,
                "1" => true,
                other => return Err(format!("label b{} must be 0 or 1, got `{other}`", i + 1)),
            };
        }
        Ok(Self { bits })
    }

    fn write_columns(&self, out: &mut String) {
        for b in self.bits {
            out.push('\t');
            out.push(if b { '1' } else { '0' });
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Polarity {
    Positive,
    Negative,
}

impl Polarity {
    fn as_str(self) -> &'static str {
        match self {
            Polarity::Positive => "positive",
            Polarity::Negative => "negative",
        }
    }
}

/// Where a sample's label came from. Audit only; never a model input.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum SampleSource {
    AdrRecord,
    Synergy,
    RandomNegative,
    Unknown,
}

impl SampleSource {
    fn as_str(self) -> &'static str {
        match self {
            SampleSource::AdrRecord => "adr_record",
            SampleSource::Synergy => "synergy",
            SampleSource::RandomNegative => "random",
            SampleSource::Unknown => "unknown",
        }
    }

    fn parse(s: &str) -> Self {
        match s {
            "adr_record" => SampleSource::AdrRecord,
            "synergy" => SampleSource::Synergy,
            "random" => SampleSource::RandomNegative,
            _ => SampleSource::Unknown,
        }
    }
}

/// Orders a pair by id so `(p, q)` and `(q, p)` coincide.
pub fn canonical_pair(a: &str, b: &str) -> (String, String) {
    if a <= b {
        (a.to_string(), b.to_string())
    } else {
        (b.to_string(), a.to_string())
    }
}

pub type Pair = (String, String);

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Triplet {
    pub p: String,
    pub q: String,
    pub labels: LabelVector,
    pub polarity: Polarity,
    pub source: SampleSource,
}

impl Triplet {
    pub fn new(p: &str, q: &str, labels: LabelVector, polarity: Polarity) -> Result<Self> {
        if p == q {
            return Err(Error::Invalid(format!("self-pair `{p}`")));
        }
        if polarity == Polarity::Negative && labels.any() {
            return Err(Error::Invalid(format!(
                "negative sample ({p}, {q}) carries positive labels"
            )));
        }
        let (p, q) = canonical_pair(p, q);
        Ok(Self {
            p,
            q,
            labels,
            polarity,
            source: SampleSource::Unknown,
        })
    }

    pub fn with_source(mut self, source: SampleSource) -> Self {
        self.source = source;
        self
    }

    pub fn pair(&self) -> Pair {
        (self.p.clone(), self.q.clone())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum SampleMode {
    /// Negatives are curated synergy pairs.
    D,
    /// Negatives are a seeded random draw from unrecorded pairs.
    R,
}

impl FromStr for SampleMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "d" => Ok(SampleMode::D),
            "r" => Ok(SampleMode::R),
            other => Err(Error::Invalid(format!("unknown dataset mode `{other}`"))),
        }
    }
}

impl fmt::Display for SampleMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SampleMode::D => "d",
            SampleMode::R => "r",
        })
    }
}

/// Canonicalized ADR records. Duplicate pairs (in either order) have their
/// labels OR-ed together.
pub fn canonical_records<'a, I>(records: I) -> BTreeMap<Pair, LabelVector>
where
    I: IntoIterator<Item = (&'a Pair, &'a LabelVector)>,
{
    let mut out: BTreeMap<Pair, LabelVector> = BTreeMap::new();
    for ((a, b), labels) in records {
        let key = canonical_pair(a, b);
        out.entry(key)
            .and_modify(|l| *l = l.union(labels))
            .or_insert(*labels);
    }
    out
}

/// Builds the positive and negative sample supersets.
pub fn build_samples(
    adr_records: &BTreeMap<Pair, LabelVector>,
    synergy_pairs: &BTreeSet<Pair>,
    mode: SampleMode,
    pool: &BTreeSet<String>,
    seed: u64,
) -> Result<(Vec<Triplet>, Vec<Triplet>)> {
    let records = canonical_records(adr_records);
    let synergy: BTreeSet<Pair> = synergy_pairs
        .iter()
        .filter(|(a, b)| a != b)
        .map(|(a, b)| canonical_pair(a, b))
        .collect();
    let in_pool = |(a, b): &Pair| pool.contains(a) && pool.contains(b);

    let mut positives = Vec::new();
    for (pair, labels) in &records {
        if pair.0 == pair.1 || !labels.any() || !in_pool(pair) {
            continue;
        }
        if mode == SampleMode::D && synergy.contains(pair) {
            continue;
        }
        positives.push(
            Triplet::new(&pair.0, &pair.1, *labels, Polarity::Positive)?
                .with_source(SampleSource::AdrRecord),
        );
    }

    let negatives = match mode {
        SampleMode::D => {
            let negs: Vec<Triplet> = synergy
                .iter()
                .filter(|p| in_pool(p))
                .map(|(a, b)| {
                    Triplet::new(a, b, LabelVector::zeros(), Polarity::Negative)
                        .map(|t| t.with_source(SampleSource::Synergy))
                })
                .collect::<Result<_>>()?;
            if negs.is_empty() && !positives.is_empty() {
                return Err(Error::NoNegatives(
                    "mode D requires synergy pairs inside the drug pool".into(),
                ));
            }
            negs
        }
        SampleMode::R => {
            let drugs: Vec<&String> = pool.iter().collect();
            let mut complement = Vec::new();
            for i in 0..drugs.len() {
                for j in (i + 1)..drugs.len() {
                    let pair = (drugs[i].clone(), drugs[j].clone());
                    if !records.contains_key(&pair) {
                        complement.push(pair);
                    }
                }
            }
            let want = positives.len();
            if complement.len() < want {
                warn!(
                    "only {} unrecorded pairs available for {} positives",
                    complement.len(),
                    want
                );
            }
            let take = want.min(complement.len());
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut picked = index::sample(&mut rng, complement.len(), take).into_vec();
            picked.sort_unstable();
            picked
                .into_iter()
                .map(|i| {
                    let (a, b) = &complement[i];
                    Triplet::new(a, b, LabelVector::zeros(), Polarity::Negative)
                        .map(|t| t.with_source(SampleSource::RandomNegative))
                })
                .collect::<Result<_>>()?
        }
    };
    Ok((positives, negatives))
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DrugPartition {
    pub train: BTreeSet<String>,
    pub valid: BTreeSet<String>,
    pub test: BTreeSet<String>,
}

impl DrugPartition {
    pub fn sizes(&self) -> (usize, usize, usize) {
        (self.train.len(), self.valid.len(), self.test.len())
    }
}

/// Seeded shuffle of the pool followed by contiguous cuts. With ratios
/// `a:b:c` over `n` drugs the train set gets `floor(n*a/s)` drugs, valid
/// gets `floor(n*b/s)`, and test takes the remainder (`s = a+b+c`).
pub fn split_drugs(
    pool: &BTreeSet<String>,
    ratios: (u32, u32, u32),
    seed: u64,
) -> Result<DrugPartition> {
    let n = pool.len();
    if n < 3 {
        return Err(Error::Invalid(format!(
            "drug pool of {n} is too small to split"
        )));
    }
    let total = (ratios.0 + ratios.1 + ratios.2) as usize;
    if total == 0 {
        return Err(Error::Invalid("split ratios sum to zero".into()));
    }
    let n_train = n * ratios.0 as usize / total;
    let n_valid = n * ratios.1 as usize / total;
    let mut drugs: Vec<String> = pool.iter().cloned().collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    drugs.shuffle(&mut rng);
    let test = drugs.split_off(n_train + n_valid);
    let valid = drugs.split_off(n_train);
    Ok(DrugPartition {
        train: drugs.into_iter().collect(),
        valid: valid.into_iter().collect(),
        test: test.into_iter().collect(),
    })
}

pub fn parse_ratios(s: &str) -> Result<(u32, u32, u32)> {
    let parts: Vec<&str> = s.split(':').collect();
    let bad = || Error::Invalid(format!("ratios must look like 8:1:1, got `{s}`"));
    if parts.len() != 3 {
        return Err(bad());
    }
    let p = |x: &str| x.trim().parse::<u32>().map_err(|_| bad());
    Ok((p(parts[0])?, p(parts[1])?, p(parts[2])?))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum SplitName {
    Train,
    Valid,
    Test,
}

impl SplitName {
    pub const ALL: [SplitName; 3] = [SplitName::Train, SplitName::Valid, SplitName::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            SplitName::Train => "train",
            SplitName::Valid => "valid",
            SplitName::Test => "test",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetSplit {
    pub mode: SampleMode,
    pub seed: u64,
    pub drugs: DrugPartition,
    pub train: Vec<Triplet>,
    pub valid: Vec<Triplet>,
    pub test: Vec<Triplet>,
    #[serde(default)]
    pub warnings: Vec<String>,
}

/// Table-1 style counts.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitStats {
    pub mode: String,
    pub seed: u64,
    pub train_drugs: usize,
    pub valid_drugs: usize,
    pub test_drugs: usize,
    pub train_triplets: usize,
    pub valid_triplets: usize,
    pub test_triplets: usize,
}

/// Keeps only triplets whose drugs both fall in the same drug set, then
/// down-samples the majority polarity of each split to a 1:1 balance.
pub fn assemble_split(
    positives: &[Triplet],
    negatives: &[Triplet],
    partition: &DrugPartition,
    mode: SampleMode,
    seed: u64,
) -> DatasetSplit {
    let mut warnings = Vec::new();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_ba1a_2ce0_0001);
    let mut pick = |name: SplitName, drugs: &BTreeSet<String>| -> Vec<Triplet> {
        let inside = |t: &&Triplet| drugs.contains(&t.p) && drugs.contains(&t.q);
        let mut pos: Vec<Triplet> = positives.iter().filter(inside).cloned().collect();
        let mut neg: Vec<Triplet> = negatives.iter().filter(inside).cloned().collect();
        pos.sort();
        pos.dedup();
        neg.sort();
        neg.dedup();
        let keep = pos.len().min(neg.len());
        let pos = downsample(pos, keep, &mut rng);
        let neg = downsample(neg, keep, &mut rng);
        if keep == 0 {
            let msg = format!(
                "split `{}` is empty after filtering and balancing",
                name.as_str()
            );
            warn!("{msg}");
            warnings.push(msg);
        }
        pos.into_iter().chain(neg).collect()
    };
    let train = pick(SplitName::Train, &partition.train);
    let valid = pick(SplitName::Valid, &partition.valid);
    let test = pick(SplitName::Test, &partition.test);
    DatasetSplit {
        mode,
        seed,
        drugs: partition.clone(),
        train,
        valid,
        test,
        warnings,
    }
}

fn downsample(items: Vec<Triplet>, keep: usize, rng: &mut ChaCha8Rng) -> Vec<Triplet> {
    if items.len() <= keep {
        return items;
    }
    let mut idx = index::sample(rng, items.len(), keep).into_vec();
    idx.sort_unstable();
    idx.into_iter().map(|i| items[i].clone()).collect()
}

impl DatasetSplit {
    pub fn get(&self, name: SplitName) -> &[Triplet] {
        match name {
            SplitName::Train => &self.train,
            SplitName::Valid => &self.valid,
            SplitName::Test => &self.test,
        }
    }

    pub fn stats(&self) -> SplitStats {
        SplitStats {
            mode: self.mode.to_string(),
            seed: self.seed,
            train_drugs: self.drugs.train.len(),
            valid_drugs: self.drugs.valid.len(),
            test_drugs: self.drugs.test.len(),
            train_triplets: self.train.len(),
            valid_triplets: self.valid.len(),
            test_triplets: self.test.len(),
        }
    }

    /// Exchanges the roles of the validation and test sets.
    pub fn swap_valid_test(mut self) -> Self {
        std::mem::swap(&mut self.valid, &mut self.test);
        std::mem::swap(&mut self.drugs.valid, &mut self.drugs.test);
        self
    }

    /// Writes `train.tsv`, `valid.tsv`, `test.tsv`, `stats.json` and the
    /// drug partition to `dir`.
    pub fn write_dir(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        for name in SplitName::ALL {
            write_triplets(dir.join(format!("{}.tsv", name.as_str())), self.get(name))?;
        }
        let stats = serde_json::to_string_pretty(&self.stats())?;
        let p = dir.join("stats.json");
        std::fs::write(&p, stats + "\n").map_err(|e| Error::io(&p, e))?;
        let p = dir.join("drugs.json");
        std::fs::write(&p, serde_json::to_string_pretty(&self.drugs)? + "\n")
            .map_err(|e| Error::io(&p, e))?;
        Ok(())
    }

    /// Inverse of [`DatasetSplit::write_dir`]. Warnings are not persisted.
    pub fn read_dir(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let read_json = |name: &str| -> Result<String> {
            let p = dir.join(name);
            std::fs::read_to_string(&p).map_err(|e| Error::io(&p, e))
        };
        let stats: SplitStats = serde_json::from_str(&read_json("stats.json")?)?;
        let drugs: DrugPartition = serde_json::from_str(&read_json("drugs.json")?)?;
        Ok(Self {
            mode: stats.mode.parse()?,
            seed: stats.seed,
            drugs,
            train: read_triplets(dir.join("train.tsv"))?,
            valid: read_triplets(dir.join("valid.tsv"))?,
            test: read_triplets(dir.join("test.tsv"))?,
            warnings: Vec::new(),
        })
    }
}

const TRIPLET_HEADER: &str =
    "p\tq\tb1\tb2\tb3\tb4\tb5\tb6\tb7\tb8\tb9\tb10\tb11\tb12\tb13\tb14\tb15\tpolarity\tsource";

pub fn write_triplets(path: impl AsRef<Path>, triplets: &[Triplet]) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::with_capacity(64 * (triplets.len() + 1));
    out.push_str(TRIPLET_HEADER);
    out.push('\n');
    for t in triplets {
        out.push_str(&t.p);
        out.push('\t');
        out.push_str(&t.q);
        t.labels.write_columns(&mut out);
        out.push('\t');
        out.push_str(t.polarity.as_str());
        out.push('\t');
        out.push_str(t.source.as_str());
        out.push('\n');
    }
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(out.as_bytes()).map_err(|e| Error::io(path, e))
}

/// Reads a split TSV (`p q b1..b15 polarity [source]`).
pub fn read_triplets(path: impl AsRef<Path>) -> Result<Vec<Triplet>> {
    let path = path.as_ref();
    let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() || line.starts_with("p\t") {
            continue;
        }
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() < 3 + NUM_ORGANS {
            return Err(Error::parse(path, i + 1, "too few columns"));
        }
        let labels = LabelVector::parse_columns(&cols[2..2 + NUM_ORGANS])
            .map_err(|m| Error::parse(path, i + 1, m))?;
        let polarity = match cols[2 + NUM_ORGANS] {
            "positive" => Polarity::Positive,
            "negative" => Polarity::Negative,
            other => return Err(Error::parse(path, i + 1, format!("bad polarity `{other}`"))),
        };
        let source = cols
            .get(3 + NUM_ORGANS)
            .map_or(SampleSource::Unknown, |s| SampleSource::parse(s));
        let t = Triplet::new(cols[0], cols[1], labels, polarity)
            .map_err(|e| Error::parse(path, i + 1, e.to_string()))?;
        out.push(t.with_source(source));
    }
    Ok(out)
}

/// Reads ADR records `drug1 drug2 b1..b15`; a leading header line starting
/// with `drug1` is skipped.
pub fn read_adr_records(path: impl AsRef<Path>) -> Result<BTreeMap<Pair, LabelVector>> {
    let path = path.as_ref();
    let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out: BTreeMap<Pair, LabelVector> = BTreeMap::new();
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() || line.starts_with("drug1") {
            continue;
        }
        let cols: Vec<&str> = line.split('\t').map(str::trim).collect();
        if cols.len() != 2 + NUM_ORGANS {
            return Err(Error::parse(
                path,
                i + 1,
                format!("expected {} columns, found {}", 2 + NUM_ORGANS, cols.len()),
            ));
        }
        if cols[0] == cols[1] {
            return Err(Error::parse(path, i + 1, "self-pair"));
        }
        let labels =
            LabelVector::parse_columns(&cols[2..]).map_err(|m| Error::parse(path, i + 1, m))?;
        let key = canonical_pair(cols[0], cols[1]);
        out.entry(key)
            .and_modify(|l| *l = l.union(&labels))
            .or_insert(labels);
    }
    Ok(out)
}

pub fn write_adr_records(
    path: impl AsRef<Path>,
    records: &BTreeMap<Pair, LabelVector>,
) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::from("drug1\tdrug2");
    for i in 1..=NUM_ORGANS {
        out.push_str(&format!("\tb{i}"));
    }
    out.push('\n');
    for ((a, b), l) in records {
        out.push_str(a);
        out.push('\t');
        out.push_str(b);
        l.write_columns(&mut out);
        out.push('\n');
    }
    crate::error::write_file(path, out)
}

/// Reads synergy pairs `drug1 drug2`.
pub fn read_synergy(path: impl AsRef<Path>) -> Result<BTreeSet<Pair>> {
    let path = path.as_ref();
    let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = BTreeSet::new();
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() || line.starts_with("drug1") {
            continue;
        }
        let cols: Vec<&str> = line.split('\t').map(str::trim).collect();
        if cols.len() != 2 {
            return Err(Error::parse(path, i + 1, "expected 2 columns"));
        }
        out.insert(canonical_pair(cols[0], cols[1]));
    }
    Ok(out)
}

pub fn write_synergy(path: impl AsRef<Path>, pairs: &BTreeSet<Pair>) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::from("drug1\tdrug2\n");
    for (a, b) in pairs {
        out.push_str(&format!("{a}\t{b}\n"));
    }
    crate::error::write_file(path, out)
}
