//! Binary code sets with bounded pairwise overlap and the data distribution
//! built on top of them.
//!
//! A code of dimension `d` (a multiple of 16) satisfies
//! `v1·v2 <= 5d/16` for distinct members and `v·v >= 7d/16` for every member.
//! The cardinality guarantee for a uniformly random code is `e^{d/260}` in one
//! statement of the construction and `e^{d/258}` in another; neither is usable
//! at desk scale, so the size is an explicit parameter.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const WORD: usize = 64;
const FORMAT_VERSION: u32 = 1;

/// An ordered list of distinct 0/1 vectors of a common dimension.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryCode {
    dimension: usize,
    rows: Vec<Vec<u64>>,
    max_pair_dot: usize,
    min_self_dot: usize,
}

/// Result of the exhaustive pair/self certificate.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CertReport {
    pub pass: bool,
    pub pair_ok: bool,
    pub norm_ok: bool,
    /// Largest `v1·v2` over distinct indices, with the pair attaining it.
    pub max_pair_dot: Option<usize>,
    pub worst_pair: Option<(usize, usize)>,
    /// Smallest `v·v`, with the index attaining it.
    pub min_self_dot: Option<usize>,
    pub worst_vector: Option<usize>,
}

/// A random subset of code indices, kept sorted and duplicate-free.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct DataPoint {
    pub included: Vec<usize>,
}

/// `m` independent data points drawn with inclusion probability `epsilon`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub points: Vec<DataPoint>,
    pub epsilon: f64,
    pub seed: u64,
}

#[derive(Serialize, Deserialize)]
struct CodeDocument {
    version: u32,
    dimension: usize,
    rows: Vec<String>,
}

fn words_for(d: usize) -> usize {
    d.div_ceil(WORD)
}

fn popcount_and(a: &[u64], b: &[u64]) -> usize {
    a.iter().zip(b).map(|(x, y)| (x & y).count_ones() as usize).sum()
}

fn pair_bound_ok(dot: usize, d: usize) -> bool {
    16 * dot <= 5 * d
}

fn norm_bound_ok(dot: usize, d: usize) -> bool {
    16 * dot >= 7 * d
}

impl DataPoint {
    pub fn new(mut included: Vec<usize>) -> Self {
        included.sort_unstable();
        included.dedup();
        Self { included }
    }

    pub fn empty() -> Self {
        Self { included: Vec::new() }
    }

    pub fn contains(&self, index: usize) -> bool {
        self.included.binary_search(&index).is_ok()
    }
}

impl BinaryCode {
    /// Builds a code from explicit boolean rows; no geometric constraint is enforced.
    pub fn from_rows(d: usize, rows: &[Vec<bool>]) -> Result<Self> {
        let mut packed = Vec::with_capacity(rows.len());
        for row in rows {
            if row.len() != d {
                return Err(Error::DimensionMismatch { expected: d, got: row.len() });
            }
            let mut words = vec![0u64; words_for(d)];
            for (i, &bit) in row.iter().enumerate() {
                if bit {
                    words[i / WORD] |= 1u64 << (i % WORD);
                }
            }
            packed.push(words);
        }
        Ok(Self::from_packed(d, packed))
    }

    fn from_packed(d: usize, rows: Vec<Vec<u64>>) -> Self {
        let mut max_pair_dot = 0;
        let mut min_self_dot = if rows.is_empty() { 0 } else { usize::MAX };
        for (i, a) in rows.iter().enumerate() {
            min_self_dot = min_self_dot.min(popcount_and(a, a));
            for b in &rows[i + 1..] {
                max_pair_dot = max_pair_dot.max(popcount_and(a, b));
            }
        }
        Self { dimension: d, rows, max_pair_dot, min_self_dot }
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Cached `max v1·v2` over distinct members (0 for fewer than two members).
    pub fn max_pair_dot(&self) -> usize {
        self.max_pair_dot
    }

    /// Cached `min v·v` (0 for the empty code).
    pub fn min_self_dot(&self) -> usize {
        self.min_self_dot
    }

    pub fn bit(&self, index: usize, coord: usize) -> bool {
        self.rows[index][coord / WORD] >> (coord % WORD) & 1 == 1
    }

    /// Sorted coordinates where member `index` equals one.
    pub fn support(&self, index: usize) -> Vec<usize> {
        (0..self.dimension).filter(|&c| self.bit(index, c)).collect()
    }

    pub fn dense(&self, index: usize) -> Vec<f64> {
        (0..self.dimension).map(|c| if self.bit(index, c) { 1.0 } else { 0.0 }).collect()
    }

    /// Integer inner product of two members.
    pub fn dot(&self, a: usize, b: usize) -> usize {
        popcount_and(&self.rows[a], &self.rows[b])
    }

    /// `w·v` for member `index`.
    pub fn correlation(&self, w: &[f64], index: usize) -> f64 {
        let row = &self.rows[index];
        let mut acc = 0.0;
        for (wi, &word) in row.iter().enumerate() {
            let mut bits = word;
            while bits != 0 {
                let b = bits.trailing_zeros() as usize;
                acc += w[wi * WORD + b];
                bits &= bits - 1;
            }
        }
        acc
    }

    /// `w·v` for every member, in index order.
    pub fn correlations(&self, w: &[f64]) -> Result<Vec<f64>> {
        self.check_dim(w.len())?;
        Ok((0..self.len()).map(|i| self.correlation(w, i)).collect())
    }

    pub(crate) fn check_dim(&self, got: usize) -> Result<()> {
        if got != self.dimension {
            return Err(Error::DimensionMismatch { expected: self.dimension, got });
        }
        Ok(())
    }

    /// Serializes to the versioned JSON document with hex-packed rows.
    pub fn to_json(&self) -> Result<String> {
        let rows = self
            .rows
            .iter()
            .map(|r| hex::encode(r.iter().flat_map(|w| w.to_le_bytes()).collect::<Vec<u8>>()))
            .collect();
        let doc = CodeDocument { version: FORMAT_VERSION, dimension: self.dimension, rows };
        Ok(serde_json::to_string(&doc)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: CodeDocument = serde_json::from_str(text)?;
        if doc.version != FORMAT_VERSION {
            return Err(Error::InvalidParameter(format!("unsupported code version {}", doc.version)));
        }
        let words = words_for(doc.dimension);
        let mut rows = Vec::with_capacity(doc.rows.len());
        for row in &doc.rows {
            let bytes = hex::decode(row)
                .map_err(|e| Error::InvalidParameter(format!("bad hex row: {e}")))?;
            if bytes.len() != words * 8 {
                return Err(Error::DimensionMismatch { expected: words * 8, got: bytes.len() });
            }
            let packed: Vec<u64> = bytes
                .chunks_exact(8)
                .map(|c| u64::from_le_bytes(c.try_into().expect("chunk of eight bytes")))
                .collect();
            rows.push(packed);
        }
        Ok(Self::from_packed(doc.dimension, rows))
    }
}

/// Draws `target_size` i.i.d. uniform vectors and resamples offending members
/// until the code certificate holds. Deterministic given `seed`.
pub fn build_code(d: usize, target_size: usize, seed: u64, max_rounds: usize) -> Result<BinaryCode> {
    if d < 16 || !d.is_multiple_of(16) {
        return Err(Error::InvalidParameter(format!("dimension {d} must be a positive multiple of 16")));
    }
    if target_size == 0 {
        return Err(Error::InvalidParameter("target size must be positive".into()));
    }
    let fail = Error::ConstructionFailed { d, target: target_size, rounds: max_rounds };
    // Members are distinct, so more than 2^d of them cannot exist.
    if d < usize::BITS as usize && target_size > (1usize << d) {
        return Err(fail);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let words = words_for(d);
    let draw = |rng: &mut ChaCha8Rng| -> Vec<u64> {
        let mut row: Vec<u64> = (0..words).map(|_| rng.gen::<u64>()).collect();
        let tail = d % WORD;
        if tail != 0 {
            row[words - 1] &= (1u64 << tail) - 1;
        }
        row
    };
    let mut rows: Vec<Vec<u64>> = (0..target_size).map(|_| draw(&mut rng)).collect();
    for _ in 0..max_rounds {
        let mut offending = vec![false; target_size];
        for i in 0..target_size {
            if !norm_bound_ok(popcount_and(&rows[i], &rows[i]), d) {
                offending[i] = true;
            }
        }
        for j in 0..target_size {
            if offending[j] {
                continue;
            }
            for i in 0..j {
                if !offending[i] && !pair_bound_ok(popcount_and(&rows[i], &rows[j]), d) {
                    offending[j] = true;
                    break;
                }
            }
        }
        if !offending.contains(&true) {
            return Ok(BinaryCode::from_packed(d, rows));
        }
        for (row, bad) in rows.iter_mut().zip(&offending) {
            if *bad {
                *row = draw(&mut rng);
            }
        }
    }
    Err(fail)
}

/// Exhaustive `O(|V|^2 d)` certificate of the pair and norm bounds.
pub fn verify_code(code: &BinaryCode) -> CertReport {
    let d = code.dimension();
    let mut report = CertReport {
        pass: true,
        pair_ok: true,
        norm_ok: true,
        max_pair_dot: None,
        worst_pair: None,
        min_self_dot: None,
        worst_vector: None,
    };
    for i in 0..code.len() {
        let own = code.dot(i, i);
        if report.min_self_dot.is_none_or(|m| own < m) {
            report.min_self_dot = Some(own);
            report.worst_vector = Some(i);
        }
        report.norm_ok &= norm_bound_ok(own, d);
        for j in i + 1..code.len() {
            let pair = code.dot(i, j);
            if report.max_pair_dot.is_none_or(|m| pair > m) {
                report.max_pair_dot = Some(pair);
                report.worst_pair = Some((i, j));
            }
            report.pair_ok &= pair_bound_ok(pair, d);
        }
    }
    report.pass = report.pair_ok && report.norm_ok;
    report
}

/// `min{d/(520 m), 1/4}`.
pub fn choose_epsilon(d: usize, m: usize) -> f64 {
    (d as f64 / (520.0 * m as f64)).min(0.25)
}

/// Draws `m` points, each including every code index independently with probability `epsilon`.
pub fn draw_sample(code: &BinaryCode, m: usize, epsilon: f64, seed: u64) -> Result<Sample> {
    if !(epsilon > 0.0 && epsilon <= 1.0) {
        return Err(Error::InvalidParameter(format!("epsilon {epsilon} outside (0, 1]")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let points = (0..m)
        .map(|_| DataPoint {
            included: (0..code.len()).filter(|_| rng.gen_bool(epsilon)).collect(),
        })
        .collect();
    Ok(Sample { points, epsilon, seed })
}

/// Least code index contained in no point of the sample.
pub fn find_uncovered(code: &BinaryCode, sample: &Sample) -> Option<usize> {
    let mut covered = vec![false; code.len()];
    for p in &sample.points {
        for &i in &p.included {
            if i < covered.len() {
                covered[i] = true;
            }
        }
    }
    covered.iter().position(|c| !c)
}

/// `(1/sqrt d) max{tau, max_{v in V} w·v}`; the empty point evaluates to `tau/sqrt d`.
pub fn feldman_loss(w: &[f64], point: &DataPoint, code: &BinaryCode, tau: f64) -> Result<f64> {
    code.check_dim(w.len())?;
    let best = point.included.iter().map(|&i| code.correlation(w, i)).fold(tau, f64::max);
    Ok(best / (code.dimension() as f64).sqrt())
}

/// Exact expectation of [`feldman_loss`] when every member is included
/// independently with probability `epsilon`.
///
/// Members are ranked by `w·v` descending with ties broken by ascending index;
/// a member above `tau` is the maximum iff it is drawn and every higher-ranked
/// member is not.
pub fn population_g(w: &[f64], code: &BinaryCode, epsilon: f64, tau: f64) -> Result<f64> {
    let corr = code.correlations(w)?;
    let mut order: Vec<usize> = (0..corr.len()).collect();
    order.sort_by(|&a, &b| corr[b].total_cmp(&corr[a]).then(a.cmp(&b)));
    let mut total = 0.0;
    let mut none_above = 1.0;
    for &i in &order {
        if corr[i] <= tau {
            break;
        }
        total += corr[i] * epsilon * none_above;
        none_above *= 1.0 - epsilon;
    }
    total += tau * none_above;
    Ok(total / (code.dimension() as f64).sqrt())
}

/// Probability that at least one member is missed by all `m` points.
pub fn coverage_probability(epsilon: f64, m: usize, code_size: usize) -> f64 {
    let missed = (1.0 - epsilon).powi(m as i32);
    1.0 - (1.0 - missed).powi(code_size as i32)
}
