//! Per-drug molecular feature vectors.
//!
//! A vector is four segments concatenated in a fixed order: continuous
//! descriptors, a path fingerprint, substructure keys, and a circular
//! fingerprint. The descriptor and substructure-key segments are reweighted
//! per dimension by a trainable softmax attention, `x ⊙ softmax(W x)`; the two
//! fingerprints pass through untouched.

use std::collections::BTreeMap;
use std::io::{BufRead, BufReader};
use std::ops::Range;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{softmax, softmax_backward, Matrix};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Segment {
    Descriptors,
    PathFp,
    SubstructureKeys,
    CircularFp,
}

impl Segment {
    pub const ALL: [Segment; 4] = [
        Segment::Descriptors,
        Segment::PathFp,
        Segment::SubstructureKeys,
        Segment::CircularFp,
    ];

    pub fn header_key(self) -> &'static str {
        match self {
            Segment::Descriptors => "desc",
            Segment::PathFp => "path",
            Segment::SubstructureKeys => "maccs",
            Segment::CircularFp => "morgan",
        }
    }

    pub fn is_binary(self) -> bool {
        !matches!(self, Segment::Descriptors)
    }
}

/// Segment lengths, in declaration order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SegmentSpec {
    pub desc: usize,
    pub path: usize,
    pub maccs: usize,
    pub morgan: usize,
}

impl Default for SegmentSpec {
    fn default() -> Self {
        Self {
            desc: 210,
            path: 512,
            maccs: 167,
            morgan: 135,
        }
    }
}

impl SegmentSpec {
    pub fn new(desc: usize, path: usize, maccs: usize, morgan: usize) -> Self {
        Self {
            desc,
            path,
            maccs,
            morgan,
        }
    }

    pub fn total(&self) -> usize {
        self.desc + self.path + self.maccs + self.morgan
    }

    pub fn len(&self, seg: Segment) -> usize {
        match seg {
            Segment::Descriptors => self.desc,
            Segment::PathFp => self.path,
            Segment::SubstructureKeys => self.maccs,
            Segment::CircularFp => self.morgan,
        }
    }

    pub fn range(&self, seg: Segment) -> Range<usize> {
        let mut start = 0;
        for s in Segment::ALL {
            if s == seg {
                return start..start + self.len(s);
            }
            start += self.len(s);
        }
        unreachable!()
    }

    pub fn header(&self) -> String {
        format!(
            "#segments desc={},path={},maccs={},morgan={}",
            self.desc, self.path, self.maccs, self.morgan
        )
    }

    /// Parses `#segments desc=<n>,path=<n>,maccs=<n>,morgan=<n>`.
    pub fn parse_header(line: &str) -> std::result::Result<Self, String> {
        let body = line
            .trim()
            .strip_prefix("#segments")
            .ok_or_else(|| "missing `#segments` header".to_string())?
            .trim();
        let mut lens = [None; 4];
        for part in body.split(',') {
            let (k, v) = part
                .split_once('=')
                .ok_or_else(|| format!("bad segment entry `{part}`"))?;
            let idx = Segment::ALL
                .iter()
                .position(|s| s.header_key() == k.trim())
                .ok_or_else(|| format!("unknown segment `{}`", k.trim()))?;
            let n: usize = v
                .trim()
                .parse()
                .map_err(|_| format!("bad length `{}` for segment {}", v.trim(), k.trim()))?;
            lens[idx] = Some(n);
        }
        let get = |i: usize| {
            lens[i]
                .ok_or_else(|| format!("segment `{}` not declared", Segment::ALL[i].header_key()))
        };
        let spec = Self::new(get(0)?, get(1)?, get(2)?, get(3)?);
        if spec.total() == 0 {
            return Err("total feature dimension is zero".into());
        }
        Ok(spec)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DrugFeatureVector {
    pub drug_id: String,
    pub spec: SegmentSpec,
    pub values: Vec<f64>,
}

impl DrugFeatureVector {
    pub fn new(drug_id: impl Into<String>, spec: SegmentSpec, values: Vec<f64>) -> Result<Self> {
        let drug_id = drug_id.into();
        if values.len() != spec.total() {
            return Err(Error::Dimension(format!(
                "drug `{drug_id}` has {} values, expected {}",
                values.len(),
                spec.total()
            )));
        }
        for seg in Segment::ALL.into_iter().filter(|s| s.is_binary()) {
            let r = spec.range(seg);
            if let Some(col) = r.clone().find(|&c| values[c] != 0.0 && values[c] != 1.0) {
                return Err(Error::Invalid(format!(
                    "drug `{drug_id}`: value {} in binary segment `{}` at column {}",
                    values[col],
                    seg.header_key(),
                    col + 1
                )));
            }
        }
        if let Some(v) = values.iter().find(|v| !v.is_finite()) {
            return Err(Error::Invalid(format!(
                "drug `{drug_id}`: non-finite value {v}"
            )));
        }
        Ok(Self {
            drug_id,
            spec,
            values,
        })
    }

    pub fn total_dim(&self) -> usize {
        self.values.len()
    }

    pub fn segment(&self, seg: Segment) -> &[f64] {
        &self.values[self.spec.range(seg)]
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureTable {
    pub spec: SegmentSpec,
    vectors: BTreeMap<String, DrugFeatureVector>,
}

impl FeatureTable {
    pub fn new(spec: SegmentSpec) -> Self {
        Self {
            spec,
            vectors: BTreeMap::new(),
        }
    }

    pub fn insert(&mut self, v: DrugFeatureVector) -> Result<()> {
        if v.spec != self.spec {
            return Err(Error::Dimension(format!(
                "drug `{}` uses a different segment layout",
                v.drug_id
            )));
        }
        if self.vectors.contains_key(&v.drug_id) {
            return Err(Error::Invalid(format!("duplicate drug_id `{}`", v.drug_id)));
        }
        self.vectors.insert(v.drug_id.clone(), v);
        Ok(())
    }

    pub fn get(&self, drug: &str) -> Option<&DrugFeatureVector> {
        self.vectors.get(drug)
    }

    pub fn require(&self, drug: &str) -> Result<&DrugFeatureVector> {
        self.get(drug)
            .ok_or_else(|| Error::UnknownEntity(format!("no feature vector for drug `{drug}`")))
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &DrugFeatureVector> {
        self.vectors.values()
    }

    /// Loads a feature TSV. When `expected` is given the header must match it.
    pub fn load(path: impl AsRef<Path>, expected: Option<SegmentSpec>) -> Result<Self> {
        let path = path.as_ref();
        let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read(BufReader::new(f), expected, path)
    }

    pub fn read<R: BufRead>(
        reader: R,
        expected: Option<SegmentSpec>,
        origin: &Path,
    ) -> Result<Self> {
        let mut lines = reader.lines().enumerate();
        let spec = loop {
            match lines.next() {
                None => return Err(Error::parse(origin, 1, "missing `#segments` header")),
                Some((i, line)) => {
                    let line = line.map_err(|e| Error::io(origin, e))?;
                    if line.trim().is_empty() {
                        continue;
                    }
                    break SegmentSpec::parse_header(&line)
                        .map_err(|m| Error::parse(origin, i + 1, m))?;
                }
            }
        };
        if let Some(exp) = expected {
            if exp != spec {
                return Err(Error::Dimension(format!(
                    "feature header declares {} but {} was expected",
                    spec.header(),
                    exp.header()
                )));
            }
        }
        let mut table = Self::new(spec);
        for (i, line) in lines {
            let lineno = i + 1;
            let line = line.map_err(|e| Error::io(origin, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let mut cols = line.split('\t');
            let id = cols.next().unwrap_or("").trim().to_string();
            if id.is_empty() {
                return Err(Error::parse(origin, lineno, "empty drug_id"));
            }
            let values: Vec<f64> = cols
                .map(|c| c.trim().parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::parse(origin, lineno, format!("bad number: {e}")))?;
            if values.len() != spec.total() {
                return Err(Error::parse(
                    origin,
                    lineno,
                    format!("expected {} values, found {}", spec.total(), values.len()),
                ));
            }
            let v = DrugFeatureVector::new(id, spec, values)
                .map_err(|e| Error::parse(origin, lineno, e.to_string()))?;
            table
                .insert(v)
                .map_err(|e| Error::parse(origin, lineno, e.to_string()))?;
        }
        Ok(table)
    }

    pub fn to_tsv(&self) -> String {
        let mut out = self.spec.header();
        out.push('\n');
        for v in self.vectors.values() {
            out.push_str(&v.drug_id);
            for x in &v.values {
                out.push('\t');
                out.push_str(&x.to_string());
            }
            out.push('\n');
        }
        out
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        crate::error::write_file(path, self.to_tsv())
    }
}

/// Trainable square matrices for the two attended segments.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureAttentionParams {
    pub w_desc: Matrix,
    pub w_keys: Matrix,
}

impl FeatureAttentionParams {
    pub fn zeros(spec: &SegmentSpec) -> Self {
        Self {
            w_desc: Matrix::zeros(spec.desc, spec.desc),
            w_keys: Matrix::zeros(spec.maccs, spec.maccs),
        }
    }

    fn check(&self, spec: &SegmentSpec) -> Result<()> {
        if self.w_desc.shape() != (spec.desc, spec.desc)
            || self.w_keys.shape() != (spec.maccs, spec.maccs)
        {
            return Err(Error::Dimension(format!(
                "attention matrices {:?}/{:?} do not fit segments desc={} maccs={}",
                self.w_desc.shape(),
                self.w_keys.shape(),
                spec.desc,
                spec.maccs
            )));
        }
        Ok(())
    }
}

/// Softmax weights of both attended segments, kept for the backward pass.
#[derive(Clone, Debug, Default)]
pub struct AttendCache {
    pub desc_weights: Vec<f64>,
    pub keys_weights: Vec<f64>,
}

/// `x_k ⊙ softmax(W_k x_k)` on the descriptor and key segments; other
/// segments are copied. Output has the input's dimension.
pub fn attend_features(v: &DrugFeatureVector, p: &FeatureAttentionParams) -> Result<Vec<f64>> {
    p.check(&v.spec)?;
    Ok(attend_raw(&v.values, &v.spec, p).0)
}

pub(crate) fn attend_raw(
    x: &[f64],
    spec: &SegmentSpec,
    p: &FeatureAttentionParams,
) -> (Vec<f64>, AttendCache) {
    let mut out = x.to_vec();
    let mut cache = AttendCache::default();
    for (seg, w, slot) in [
        (Segment::Descriptors, &p.w_desc, &mut cache.desc_weights),
        (
            Segment::SubstructureKeys,
            &p.w_keys,
            &mut cache.keys_weights,
        ),
    ] {
        let r = spec.range(seg);
        if r.is_empty() {
            continue;
        }
        let xs = &x[r.clone()];
        let weights = softmax(&w.matvec(xs));
        for (o, (xi, wi)) in out[r].iter_mut().zip(xs.iter().zip(&weights)) {
            *o = xi * wi;
        }
        *slot = weights;
    }
    (out, cache)
}

/// Accumulates `∂L/∂W_desc`, `∂L/∂W_keys` given `∂L/∂e` for one drug.
pub(crate) fn attend_backward(
    x: &[f64],
    spec: &SegmentSpec,
    cache: &AttendCache,
    d_out: &[f64],
    grads: &mut FeatureAttentionParams,
) {
    for (seg, weights, g) in [
        (Segment::Descriptors, &cache.desc_weights, &mut grads.w_desc),
        (
            Segment::SubstructureKeys,
            &cache.keys_weights,
            &mut grads.w_keys,
        ),
    ] {
        let r = spec.range(seg);
        if r.is_empty() {
            continue;
        }
        let xs = &x[r.clone()];
        let d_w: Vec<f64> = d_out[r].iter().zip(xs).map(|(d, xi)| d * xi).collect();
        let d_logits = softmax_backward(weights, &d_w);
        g.add_outer(&d_logits, xs);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    const HDR: &str = "#segments desc=4,path=4,maccs=4,morgan=4\n";

    fn read(text: &str) -> Result<FeatureTable> {
        FeatureTable::read(text.as_bytes(), None, Path::new("mem"))
    }

    #[test]
    fn parses_sixteen_values() {
        let t = read(&format!(
            "{HDR}D1\t0.5\t-1\t2\t3\t1\t0\t1\t0\t0\t0\t1\t1\t1\t1\t1\t0\n"
        ))
        .unwrap();
        let v = t.get("D1").unwrap();
        assert_eq!(v.total_dim(), 16);
        for s in Segment::ALL {
            assert_eq!(v.segment(s).len(), 4);
        }
        assert_eq!(v.segment(Segment::PathFp), &[1.0, 0.0, 1.0, 0.0]);
        assert!(t.get("D2").is_none());
    }

    #[test]
    fn length_and_binary_errors() {
        let err = read(&format!("{HDR}D1{}\n", "\t0".repeat(15))).unwrap_err();
        assert!(err.to_string().contains("expected 16"), "{err}");
        let err = read(&format!("{HDR}D1\t0\t0\t0\t0\t0.5{}\n", "\t0".repeat(11))).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("path") && msg.contains("column 5"), "{msg}");
        let err = read(&format!("{HDR}D1{z}\nD1{z}\n", z = "\t0".repeat(16))).unwrap_err();
        assert!(err.to_string().contains("duplicate"));
    }

    #[test]
    fn default_spec_is_1024() {
        assert_eq!(SegmentSpec::default().total(), 1024);
        let s = SegmentSpec::parse_header(&SegmentSpec::default().header()).unwrap();
        assert_eq!(s, SegmentSpec::default());
    }

    fn vector(desc: &[f64], path: &[f64], keys: &[f64], morgan: &[f64]) -> DrugFeatureVector {
        let spec = SegmentSpec::new(desc.len(), path.len(), keys.len(), morgan.len());
        let values = [desc, path, keys, morgan].concat();
        DrugFeatureVector::new("x", spec, values).unwrap()
    }

    #[test]
    fn zero_matrix_gives_uniform_weights() {
        let v = vector(&[2.0, 4.0], &[1.0, 0.0, 1.0, 0.0], &[1.0], &[0.0, 1.0]);
        let p = FeatureAttentionParams::zeros(&v.spec);
        let e = attend_features(&v, &p).unwrap();
        assert_eq!(&e[0..2], &[1.0, 2.0]);
        assert_eq!(&e[2..6], &[1.0, 0.0, 1.0, 0.0]);
        assert_eq!(e[6], 1.0);
        assert_eq!(&e[7..], &[0.0, 1.0]);
    }

    #[test]
    fn singleton_descriptor_unchanged() {
        let v = vector(&[3.5], &[1.0], &[0.0, 1.0], &[1.0]);
        let mut p = FeatureAttentionParams::zeros(&v.spec);
        p.w_desc = Matrix::from_vec(1, 1, vec![-7.0]);
        assert_eq!(attend_features(&v, &p).unwrap()[0], 3.5);
    }

    #[test]
    fn mismatched_params() {
        let v = vector(&[1.0, 2.0], &[1.0], &[1.0], &[1.0]);
        let p = FeatureAttentionParams::zeros(&SegmentSpec::new(3, 1, 1, 1));
        assert!(matches!(attend_features(&v, &p), Err(Error::Dimension(_))));
    }

    #[test]
    fn weights_sum_to_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let spec = SegmentSpec::new(6, 2, 5, 2);
        let p = FeatureAttentionParams {
            w_desc: Matrix::glorot(6, 6, &mut rng),
            w_keys: Matrix::glorot(5, 5, &mut rng),
        };
        let x: Vec<f64> = vec![
            0.3, -1.2, 2.0, 0.1, 0.0, 5.0, 1.0, 0.0, 1.0, 1.0, 0.0, 0.0, 1.0, 0.0, 1.0,
        ];
        let (out, cache) = attend_raw(&x, &spec, &p);
        assert_eq!(out.len(), spec.total());
        assert!((cache.desc_weights.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!((cache.keys_weights.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn gradient_matches_central_differences() {
        let spec = SegmentSpec::new(5, 2, 4, 2);
        for seed in 0..3u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let p = FeatureAttentionParams {
                w_desc: Matrix::glorot(5, 5, &mut rng),
                w_keys: Matrix::glorot(4, 4, &mut rng),
            };
            let x = vec![
                0.7, -1.1, 0.4, 2.2, -0.3, 1.0, 0.0, 1.0, 1.0, 0.0, 1.0, 0.0, 1.0,
            ];
            let upstream: Vec<f64> = (0..spec.total())
                .map(|i| ((i * 7 + 3) % 5) as f64 - 2.0)
                .collect();
            let objective = |p: &FeatureAttentionParams| -> f64 {
                let (e, _) = attend_raw(&x, &spec, p);
                e.iter().zip(&upstream).map(|(a, b)| a * b).sum()
            };
            let (_, cache) = attend_raw(&x, &spec, &p);
            let mut g = FeatureAttentionParams::zeros(&spec);
            attend_backward(&x, &spec, &cache, &upstream, &mut g);
            let h = 1e-5;
            for which in 0..2 {
                let n = if which == 0 { 25 } else { 16 };
                for k in 0..n {
                    let mut plus = p.clone();
                    let mut minus = p.clone();
                    let (mp, mm, ga) = if which == 0 {
                        (&mut plus.w_desc, &mut minus.w_desc, g.w_desc.data[k])
                    } else {
                        (&mut plus.w_keys, &mut minus.w_keys, g.w_keys.data[k])
                    };
                    mp.data[k] += h;
                    mm.data[k] -= h;
                    let gn = (objective(&plus) - objective(&minus)) / (2.0 * h);
                    let rel = (ga - gn).abs() / 1f64.max(ga.abs()).max(gn.abs());
                    assert!(
                        rel < 1e-4,
                        "seed {seed} tensor {which} elem {k}: {ga} vs {gn}"
                    );
                }
            }
        }
    }
}
