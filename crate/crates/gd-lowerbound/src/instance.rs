//! The adversarial loss `f(w, V) = g(w, V) + alpha * N(w)` and its
//! sample-dependent subgradient oracle.
//!
//! Block values are `w(I) = (1/sqrt k) * sum_{i in I} w(i)`, and `e_I` is the
//! matching unit direction, so a step of `eta*alpha*e_I` moves `w(I)` by exactly
//! `eta*alpha`. Along the nominal trajectory every block value is an integer
//! multiple of `eta*alpha`; [`lattice_oracle_step`] runs the oracle on those
//! integers directly.

use serde::{Deserialize, Serialize};

use crate::code::{choose_epsilon, feldman_loss, population_g, BinaryCode, DataPoint};
use crate::error::{Error, Result};

/// Relative width of the equality band used by the floating oracle, in units of `eta*alpha`.
pub const LATTICE_TOLERANCE: f64 = 1e-9;

/// Every parameter of one hard instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceParams {
    pub d: usize,
    pub m: usize,
    /// Iteration budget the instance is built for (after capping).
    pub horizon: usize,
    pub eta: f64,
    pub alpha: f64,
    pub k: usize,
    pub tau: f64,
    pub epsilon: f64,
    /// The oracle returns zero for every step past this index.
    pub oracle_cutoff: Option<usize>,
}

/// Result of the block-width rule.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockWidth {
    pub k: usize,
    /// Horizon the instance is built at; smaller than the request iff capped.
    pub horizon: usize,
    pub capped: bool,
}

/// Which rule picks the block width for a requested `(d, T)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum BlockRule {
    /// Smallest power of two with `d <= k (T/17)^{1/3}`.
    Literal,
    /// Smallest power of two whose staircase finishes within `T/17` steps.
    #[default]
    Fitted,
}

/// Disjoint ordered blocks `I_1 < I_2 < ...` of equal width.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockStructure {
    pub dimension: usize,
    pub vstar: Option<usize>,
    pub width: usize,
    pub dprime: usize,
    pub blocks: Vec<Vec<usize>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CaseTag {
    Swap,
    Raise,
    Zero,
    Outside,
}

/// One affine piece of the block Nemirovski function.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Term {
    Constant,
    /// `-w(I_j)`.
    Negative(usize),
    /// `w(I_j) - w(I_i)` with `i < j`.
    Difference(usize, usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Subgradient {
    pub vector: Vec<f64>,
    pub case_tag: CaseTag,
}

/// A move on integer block values (units of `eta*alpha`) produced by the lattice oracle.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LatticeMove {
    /// Block `j` gains one unit and block `j+1` loses one.
    Swap(usize),
    /// Block `j` gains one unit.
    Raise(usize),
    Zero,
    /// Off-trajectory: the step `-grad` of the given term.
    Outside(Term),
}

/// `min{1/(eta sqrt(2T)), 1}`.
pub fn alpha_for(eta: f64, horizon: usize) -> f64 {
    (1.0 / (eta * (2.0 * horizon as f64).sqrt())).min(1.0)
}

/// `45 eta alpha d^2 / (2 * 16^2 * k^{1.5})`.
pub fn threshold_for(eta: f64, alpha: f64, d: usize, k: usize) -> f64 {
    45.0 * eta * alpha * (d * d) as f64 / (2.0 * 256.0 * (k as f64).powf(1.5))
}

/// `1 + sum_{j=1}^{n} j(j+1)/2`: the step at which the staircase over `n` blocks completes.
pub fn terminal_time(n: usize) -> usize {
    1 + n * (n + 1) * (n + 2) / 6
}

/// Number of blocks of width `k` that fit into `7d/16` coordinates.
pub fn block_count(d: usize, k: usize) -> usize {
    (7 * d / 16) / k
}

/// Smallest power of two `k` with `d <= k (T/17)^{1/3}`, clamped to `[1, d]`.
///
/// If `T > d^3/136` the instance is built at `floor(d^3/136)`; the width is
/// still read off the requested horizon.
pub fn block_width(d: usize, horizon: usize) -> BlockWidth {
    let cap = (d * d * d) / 136;
    let capped = horizon > cap && cap > 0;
    let t = horizon as u128;
    let d3 = (d as u128).pow(3);
    let mut k = 1usize;
    while k < d && 17 * d3 > (k as u128).pow(3) * t {
        k *= 2;
    }
    BlockWidth { k: k.min(d).max(1), horizon: if capped { cap } else { horizon }, capped }
}

/// Smallest power of two `k <= d` leaving at least one block whose staircase
/// completes within `T/17` steps; if none does, the widest width that still
/// leaves one block.
pub fn fitted_block_width(d: usize, horizon: usize) -> BlockWidth {
    let mut widest = 1;
    let mut k = 1;
    while k <= d {
        let n = block_count(d, k);
        if n >= 1 {
            widest = k;
            if 17 * terminal_time(n) <= horizon {
                return BlockWidth { k, horizon, capped: false };
            }
        }
        k *= 2;
    }
    BlockWidth { k: widest, horizon, capped: false }
}

fn is_power_of_two(k: usize) -> bool {
    k >= 1 && k & (k - 1) == 0
}

impl InstanceParams {
    /// Parameters for an explicit block width; no horizon capping.
    pub fn with_block_width(d: usize, m: usize, horizon: usize, eta: f64, k: usize) -> Result<Self> {
        if d < 16 || !d.is_multiple_of(16) {
            return Err(Error::InvalidParameter(format!("dimension {d} must be a positive multiple of 16")));
        }
        if !is_power_of_two(k) || !d.is_multiple_of(k) {
            return Err(Error::InvalidParameter(format!("block width {k} must be a power of two dividing {d}")));
        }
        if !(eta > 0.0 && eta.is_finite()) || horizon == 0 || m == 0 {
            return Err(Error::InvalidParameter("eta, T and m must be positive".into()));
        }
        let alpha = alpha_for(eta, horizon);
        Ok(Self {
            d,
            m,
            horizon,
            eta,
            alpha,
            k,
            tau: threshold_for(eta, alpha, d, k),
            epsilon: choose_epsilon(d, m),
            oracle_cutoff: None,
        })
    }

    /// Parameters for a requested horizon, with the block width from `rule`.
    pub fn for_horizon(d: usize, m: usize, horizon: usize, eta: f64, rule: BlockRule) -> Result<Self> {
        let width = match rule {
            BlockRule::Literal => block_width(d, horizon),
            BlockRule::Fitted => fitted_block_width(d, horizon),
        };
        let mut params = Self::with_block_width(d, m, width.horizon, eta, width.k)?;
        if width.capped {
            params.oracle_cutoff = Some(width.horizon);
        }
        Ok(params)
    }

    /// Size of one lattice unit on a single coordinate: `eta*alpha/sqrt k`.
    pub fn coordinate_unit(&self) -> f64 {
        self.eta * self.alpha / (self.k as f64).sqrt()
    }

    pub fn with_epsilon(mut self, epsilon: f64) -> Self {
        self.epsilon = epsilon;
        self
    }
}

impl BlockStructure {
    /// Blocks of width `k` over the first `d'` support coordinates of `v*`,
    /// `d' = 7d/16` truncated down to a multiple of `k`.
    pub fn from_code(code: &BinaryCode, vstar: usize, k: usize) -> Result<Self> {
        let d = code.dimension();
        if vstar >= code.len() {
            return Err(Error::InvalidParameter(format!("code index {vstar} out of range")));
        }
        let support = code.support(vstar);
        let dprime = block_count(d, k) * k;
        if support.len() < dprime {
            return Err(Error::InvalidParameter(format!(
                "support of member {vstar} has {} coordinates, need {dprime}",
                support.len()
            )));
        }
        let blocks = support[..dprime].chunks(k).map(<[usize]>::to_vec).collect();
        Ok(Self { dimension: d, vstar: Some(vstar), width: k, dprime, blocks })
    }

    /// Contiguous blocks of width `k` covering all of `[d]`.
    pub fn contiguous(d: usize, k: usize) -> Result<Self> {
        if k == 0 || !d.is_multiple_of(k) {
            return Err(Error::InvalidParameter(format!("width {k} does not divide {d}")));
        }
        let blocks = (0..d / k).map(|j| (j * k..(j + 1) * k).collect()).collect();
        Ok(Self { dimension: d, vstar: None, width: k, dprime: d, blocks })
    }

    pub fn len(&self) -> usize {
        self.blocks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }

    /// `w(I_j)` for every block.
    pub fn block_values(&self, w: &[f64]) -> Result<Vec<f64>> {
        if w.len() != self.dimension {
            return Err(Error::DimensionMismatch { expected: self.dimension, got: w.len() });
        }
        let scale = 1.0 / (self.width as f64).sqrt();
        Ok(self.blocks.iter().map(|b| scale * b.iter().map(|&i| w[i]).sum::<f64>()).collect())
    }

    /// Adds `coeff * e_{I_j}` to `out`.
    pub fn add_direction(&self, out: &mut [f64], j: usize, coeff: f64) {
        let share = coeff / (self.width as f64).sqrt();
        for &i in &self.blocks[j] {
            out[i] += share;
        }
    }

    /// Gradient of one affine piece of `N`.
    pub fn term_gradient(&self, term: Term) -> Vec<f64> {
        let mut g = vec![0.0; self.dimension];
        match term {
            Term::Constant => {}
            Term::Negative(j) => self.add_direction(&mut g, j, -1.0),
            Term::Difference(i, j) => {
                self.add_direction(&mut g, j, 1.0);
                self.add_direction(&mut g, i, -1.0);
            }
        }
        g
    }

    /// Dense iterate whose block values are `units[j] * unit` and zero elsewhere.
    pub fn embed(&self, units: &[i64], unit_block_value: f64) -> Vec<f64> {
        let mut w = vec![0.0; self.dimension];
        for (j, &u) in units.iter().enumerate() {
            self.add_direction(&mut w, j, u as f64 * unit_block_value);
        }
        w
    }
}

fn term_value(values: &[f64], term: Term) -> f64 {
    match term {
        Term::Constant => 0.0,
        Term::Negative(j) => -values[j],
        Term::Difference(i, j) => values[j] - values[i],
    }
}

/// `max{0, max_j -w(I_j), max_{i<j} w(I_j) - w(I_i)}` in one pass.
pub fn nemirovski_from_values(values: &[f64]) -> f64 {
    let mut best = 0.0f64;
    let mut lowest = f64::INFINITY;
    for &v in values {
        best = best.max(-v).max(v - lowest);
        lowest = lowest.min(v);
    }
    best
}

pub fn nemirovski_value(w: &[f64], blocks: &BlockStructure) -> Result<f64> {
    Ok(nemirovski_from_values(&blocks.block_values(w)?))
}

/// Lexicographically first affine piece attaining the maximum:
/// the constant, then `-w(I_j)` by `j`, then differences by `(i, j)`.
pub fn first_maximizing_term(values: &[f64]) -> Term {
    let best = nemirovski_from_values(values);
    let n = values.len();
    let candidates = std::iter::once(Term::Constant)
        .chain((0..n).map(Term::Negative))
        .chain((0..n).flat_map(|i| (i + 1..n).map(move |j| Term::Difference(i, j))));
    let mut chosen = Term::Constant;
    let mut chosen_value = f64::NEG_INFINITY;
    for term in candidates {
        let v = term_value(values, term);
        if v >= best {
            return term;
        }
        if v > chosen_value {
            chosen = term;
            chosen_value = v;
        }
    }
    chosen
}

/// Oracle decision on integer block values.
///
/// `t = 1` at the origin returns zero; on the minimizing set of `N` the swap
/// case fires for the least `j` with `b_j = b_{j+1} >= 1`, then the raise case
/// for the least `j` with `b_j = 0`; otherwise zero. Off the minimizing set the
/// first maximizing term is followed.
pub fn lattice_oracle_step(t: usize, units: &[i64]) -> (LatticeMove, CaseTag) {
    if t == 1 && units.iter().all(|&u| u == 0) {
        return (LatticeMove::Zero, CaseTag::Zero);
    }
    let values: Vec<f64> = units.iter().map(|&u| u as f64).collect();
    if nemirovski_from_values(&values) > 0.0 {
        return (LatticeMove::Outside(first_maximizing_term(&values)), CaseTag::Outside);
    }
    if let Some(j) = units.windows(2).position(|p| p[0] == p[1] && p[0] >= 1) {
        return (LatticeMove::Swap(j), CaseTag::Swap);
    }
    if let Some(j) = units.iter().position(|&u| u == 0) {
        return (LatticeMove::Raise(j), CaseTag::Raise);
    }
    (LatticeMove::Zero, CaseTag::Zero)
}

/// Applies one gradient step `w - eta*g` to integer block values.
pub fn apply_lattice_move(units: &mut [i64], mv: LatticeMove) {
    match mv {
        LatticeMove::Swap(j) => {
            units[j] += 1;
            units[j + 1] -= 1;
        }
        LatticeMove::Raise(j) => units[j] += 1,
        LatticeMove::Zero | LatticeMove::Outside(Term::Constant) => {}
        LatticeMove::Outside(Term::Negative(j)) => units[j] += 1,
        LatticeMove::Outside(Term::Difference(i, j)) => {
            units[j] -= 1;
            units[i] += 1;
        }
    }
}

/// Three-case oracle for `alpha*N` at step `t`, verified to lie in `d(alpha N)(w)`.
pub fn oracle_step(t: usize, w: &[f64], blocks: &BlockStructure, params: &InstanceParams) -> Result<Subgradient> {
    let values = blocks.block_values(w)?;
    let d = blocks.dimension;
    let zero = || Subgradient { vector: vec![0.0; d], case_tag: CaseTag::Zero };
    if params.oracle_cutoff.is_some_and(|cut| t > cut) {
        return Ok(zero());
    }
    if t == 1 && w.iter().all(|&x| x == 0.0) {
        return Ok(zero());
    }
    let unit = params.eta * params.alpha;
    let tol = unit * LATTICE_TOLERANCE;
    let n_value = nemirovski_from_values(&values);
    let (term, tag) = if n_value > tol {
        (first_maximizing_term(&values), CaseTag::Outside)
    } else if let Some(j) =
        values.windows(2).position(|p| (p[0] - p[1]).abs() <= tol && p[0] >= unit - tol)
    {
        (Term::Difference(j, j + 1), CaseTag::Swap)
    } else if let Some(j) = values.iter().position(|v| v.abs() <= tol) {
        (Term::Negative(j), CaseTag::Raise)
    } else {
        (Term::Constant, CaseTag::Zero)
    };
    if term_value(&values, term) < n_value - tol {
        return Err(Error::NotASubgradient {
            step: t,
            reason: format!("term {term:?} is not active (N = {n_value})"),
        });
    }
    let mut vector = blocks.term_gradient(term);
    vector.iter_mut().for_each(|x| *x *= params.alpha);
    Ok(Subgradient { vector, case_tag: tag })
}

/// Checks `f(p) >= f(w) + g·(p - w)` at every probe, with relative tolerance `1e-9`.
/// Returns the index and slack of the worst violation.
pub fn check_subgradient_inequality<F: Fn(&[f64]) -> f64>(
    f: F,
    w: &[f64],
    g: &[f64],
    probes: &[Vec<f64>],
) -> std::result::Result<(), (usize, f64)> {
    let fw = f(w);
    let mut worst: Option<(usize, f64)> = None;
    for (idx, p) in probes.iter().enumerate() {
        let fp = f(p);
        let lin: f64 = g.iter().zip(p.iter().zip(w)).map(|(gi, (pi, wi))| gi * (pi - wi)).sum();
        let slack = fp - fw - lin;
        if slack < -1e-9 * (1.0 + fp.abs() + fw.abs()) && worst.is_none_or(|(_, s)| slack < s) {
            worst = Some((idx, slack));
        }
    }
    worst.map_or(Ok(()), Err)
}

/// A code, its instance parameters and the block structure of one sample.
#[derive(Debug, Clone)]
pub struct HardInstance {
    pub params: InstanceParams,
    pub code: BinaryCode,
    pub blocks: BlockStructure,
}

impl HardInstance {
    pub fn new(params: InstanceParams, code: BinaryCode, blocks: BlockStructure) -> Result<Self> {
        if code.dimension() != params.d || blocks.dimension != params.d {
            return Err(Error::DimensionMismatch { expected: params.d, got: code.dimension() });
        }
        Ok(Self { params, code, blocks })
    }

    pub fn g_value(&self, w: &[f64], point: &DataPoint) -> Result<f64> {
        g_value(w, point, &self.params, &self.code)
    }

    pub fn nemirovski(&self, w: &[f64]) -> Result<f64> {
        nemirovski_value(w, &self.blocks)
    }

    pub fn f_value(&self, w: &[f64], point: &DataPoint) -> Result<f64> {
        Ok(self.g_value(w, point)? + self.params.alpha * self.nemirovski(w)?)
    }

    /// Population loss `E_V g(w, V) + alpha N(w)`, evaluated exactly.
    pub fn population_loss(&self, w: &[f64]) -> Result<f64> {
        Ok(population_g(w, &self.code, self.params.epsilon, self.params.tau)?
            + self.params.alpha * self.nemirovski(w)?)
    }

    pub fn oracle_step(&self, t: usize, w: &[f64]) -> Result<Subgradient> {
        oracle_step(t, w, &self.blocks, &self.params)
    }

    /// A subgradient of `f(., point)`: the oracle output for `alpha N` plus,
    /// when the threshold is not attained, `v/sqrt d` for the first maximizing member.
    /// The flag reports whether the `g` part was nonzero.
    pub fn f_subgradient(&self, t: usize, w: &[f64], point: &DataPoint) -> Result<(Subgradient, bool)> {
        let mut sub = self.oracle_step(t, w)?;
        let mut best: Option<(usize, f64)> = None;
        for &i in &point.included {
            let c = self.code.correlation(w, i);
            if best.is_none_or(|(_, b)| c > b) {
                best = Some((i, c));
            }
        }
        match best {
            Some((i, c)) if c > self.params.tau => {
                let scale = 1.0 / (self.params.d as f64).sqrt();
                for coord in self.code.support(i) {
                    sub.vector[coord] += scale;
                }
                Ok((sub, true))
            }
            _ => Ok((sub, false)),
        }
    }

    /// `tau sqrt(d) - max_{v != v*} w·v`.
    pub fn g_inactivity_margin(&self, w: &[f64]) -> Result<f64> {
        g_inactivity_margin(w, &self.blocks, &self.code, &self.params)
    }

    /// `tau - max_{v != v*} w·v`; nonnegative iff the threshold branch of `g`
    /// is attained for every point that misses `v*`.
    pub fn threshold_slack(&self, w: &[f64]) -> Result<f64> {
        Ok(self.params.tau - max_other_correlation(w, &self.blocks, &self.code)?)
    }
}

fn max_other_correlation(w: &[f64], blocks: &BlockStructure, code: &BinaryCode) -> Result<f64> {
    let corr = code.correlations(w)?;
    Ok(corr
        .iter()
        .enumerate()
        .filter(|(i, _)| Some(*i) != blocks.vstar)
        .map(|(_, &c)| c)
        .fold(f64::NEG_INFINITY, f64::max))
}

pub fn g_value(w: &[f64], point: &DataPoint, params: &InstanceParams, code: &BinaryCode) -> Result<f64> {
    feldman_loss(w, point, code, params.tau)
}

/// `tau sqrt(d) - max_{v != v*} w·v` (infinite when the code has no other member).
pub fn g_inactivity_margin(
    w: &[f64],
    blocks: &BlockStructure,
    code: &BinaryCode,
    params: &InstanceParams,
) -> Result<f64> {
    Ok(params.tau * (params.d as f64).sqrt() - max_other_correlation(w, blocks, code)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::code::build_code;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn brute_nemirovski(values: &[f64]) -> f64 {
        let mut terms = vec![0.0];
        terms.extend(values.iter().map(|v| -v));
        for i in 0..values.len() {
            for j in i + 1..values.len() {
                terms.push(values[j] - values[i]);
            }
        }
        terms.into_iter().fold(f64::NEG_INFINITY, f64::max)
    }

    fn params(d: usize, k: usize) -> InstanceParams {
        InstanceParams::with_block_width(d, 4, 400, 0.05, k).unwrap()
    }

    #[test]
    fn block_width_examples() {
        assert_eq!(block_width(8, 17 * 512).k, 1);
        assert_eq!(block_width(64, 136).k, 32);
        let capped = block_width(16, 1_000_000_000);
        assert!(capped.capped);
        assert_eq!(capped.horizon, 16 * 16 * 16 / 136);
    }

    #[test]
    fn fitted_width_at_desk_scale() {
        let w = fitted_block_width(128, 1000);
        assert_eq!(w.k, 16);
        assert!(17 * terminal_time(block_count(128, 16)) <= 1000);
        assert!(17 * terminal_time(block_count(128, 8)) > 1000);
    }

    #[test]
    fn nemirovski_examples() {
        let blocks = BlockStructure::contiguous(3, 1).unwrap();
        assert_eq!(nemirovski_value(&[0.0; 3], &blocks).unwrap(), 0.0);
        let v = nemirovski_value(&[-0.5, 0.2, 0.1], &blocks).unwrap();
        assert!((v - 0.7).abs() < 1e-15);
        assert_eq!(nemirovski_value(&[0.3; 3], &blocks).unwrap(), 0.0);
        assert!(nemirovski_value(&[0.0; 4], &blocks).is_err());
    }

    #[test]
    fn alpha_and_tau_recompute_exactly() {
        let p = InstanceParams::with_block_width(64, 3, 500, 0.3, 4).unwrap();
        assert_eq!(p.alpha.to_bits(), alpha_for(0.3, 500).to_bits());
        assert_eq!(p.tau.to_bits(), threshold_for(0.3, p.alpha, 64, 4).to_bits());
        assert_eq!(
            threshold_for(1.0, 1.0, 16, 1).to_bits(),
            (45.0 * 256.0 / 512.0f64).to_bits()
        );
    }

    #[test]
    fn oracle_cases() {
        let p = params(16, 1);
        let blocks = BlockStructure::contiguous(16, 1).unwrap();
        let unit = p.eta * p.alpha;
        let first = oracle_step(1, &[0.0; 16], &blocks, &p).unwrap();
        assert_eq!(first.case_tag, CaseTag::Zero);
        let raise = oracle_step(2, &[0.0; 16], &blocks, &p).unwrap();
        assert_eq!(raise.case_tag, CaseTag::Raise);
        assert_eq!(raise.vector[0], -p.alpha);
        let mut w = vec![0.0; 16];
        w[0] = 2.0 * unit;
        w[1] = 2.0 * unit;
        let swap = oracle_step(5, &w, &blocks, &p).unwrap();
        assert_eq!(swap.case_tag, CaseTag::Swap);
        assert_eq!((swap.vector[0], swap.vector[1]), (-p.alpha, p.alpha));
        let staircase: Vec<f64> = (0..16).map(|j| unit * (16 - j) as f64).collect();
        assert_eq!(oracle_step(9, &staircase, &blocks, &p).unwrap().case_tag, CaseTag::Zero);
        let mut off = vec![0.0; 16];
        off[3] = 0.5;
        let outside = oracle_step(4, &off, &blocks, &p).unwrap();
        assert_eq!(outside.case_tag, CaseTag::Outside);
        assert_eq!(outside.vector[3], p.alpha);
        assert_eq!(outside.vector[0], -p.alpha);
    }

    #[test]
    fn capped_oracle_returns_zero_after_cutoff() {
        let mut p = params(16, 1);
        p.oracle_cutoff = Some(5);
        let blocks = BlockStructure::contiguous(16, 1).unwrap();
        assert_eq!(oracle_step(6, &[0.0; 16], &blocks, &p).unwrap().case_tag, CaseTag::Zero);
    }

    #[test]
    fn g_value_examples() {
        let code = build_code(64, 4, 2, 1000).unwrap();
        let p = InstanceParams::with_block_width(64, 4, 400, 0.001, 1).unwrap();
        let blocks = BlockStructure::from_code(&code, 0, 1).unwrap();
        let inst = HardInstance::new(p.clone(), code.clone(), blocks).unwrap();
        let tau_scaled = p.tau / 8.0;
        assert!((inst.g_value(&[0.0; 64], &DataPoint::new(vec![0, 1])).unwrap() - tau_scaled).abs() < 1e-15);
        assert!((inst.g_value(&[0.5; 64], &DataPoint::empty()).unwrap() - tau_scaled).abs() < 1e-15);
        let norm = (code.dot(1, 1) as f64).sqrt();
        let w: Vec<f64> = code.dense(1).iter().map(|x| x / norm).collect();
        assert!(p.tau < norm);
        let g = inst.g_value(&w, &DataPoint::new(vec![1])).unwrap();
        assert!((g - norm / 8.0).abs() < 1e-12);
        assert!((inst.f_value(&[0.0; 64], &DataPoint::empty()).unwrap() - tau_scaled).abs() < 1e-15);
        assert!((inst.g_inactivity_margin(&[0.0; 64]).unwrap() - p.tau * 8.0).abs() < 1e-12);
    }

    #[test]
    fn zero_alpha_reduces_to_g() {
        let code = build_code(32, 3, 4, 1000).unwrap();
        let mut p = params(32, 2);
        p.alpha = 0.0;
        let blocks = BlockStructure::from_code(&code, 1, 2).unwrap();
        let inst = HardInstance::new(p, code, blocks).unwrap();
        let w: Vec<f64> = (0..32).map(|i| (i as f64 - 16.0) / 40.0).collect();
        let pt = DataPoint::new(vec![0, 2]);
        assert_eq!(inst.f_value(&w, &pt).unwrap(), inst.g_value(&w, &pt).unwrap());
    }

    #[test]
    fn margin_negative_off_trajectory() {
        let code = build_code(64, 6, 9, 1000).unwrap();
        let p = params(64, 1);
        let blocks = BlockStructure::from_code(&code, 0, 1).unwrap();
        let inst = HardInstance::new(p.clone(), code.clone(), blocks).unwrap();
        let w: Vec<f64> = code.dense(1).iter().map(|x| 100.0 * x).collect();
        assert!(inst.g_inactivity_margin(&w).unwrap() < 0.0);
    }

    #[test]
    fn lipschitz_probe_of_f() {
        let code = build_code(64, 6, 11, 1000).unwrap();
        let p = params(64, 2);
        let blocks = BlockStructure::from_code(&code, 0, 2).unwrap();
        let inst = HardInstance::new(p, code, blocks).unwrap();
        let pt = DataPoint::new(vec![1, 2, 3]);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..10_000 {
            let a: Vec<f64> = (0..64).map(|_| rng.gen_range(-0.2..0.2)).collect();
            let b: Vec<f64> = (0..64).map(|_| rng.gen_range(-0.2..0.2)).collect();
            let dist = a.iter().zip(&b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
            let diff = (inst.f_value(&a, &pt).unwrap() - inst.f_value(&b, &pt).unwrap()).abs();
            assert!(diff <= 3.0 * dist + 1e-12);
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn nemirovski_matches_enumeration(k_pow in 0u32..3, seed in 0u64..100_000, blocks_n in 1usize..16) {
            let k = 1usize << k_pow;
            let d = k * blocks_n;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let w: Vec<f64> = (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let blocks = BlockStructure::contiguous(d, k).unwrap();
            let values = blocks.block_values(&w).unwrap();
            prop_assert_eq!(nemirovski_value(&w, &blocks).unwrap(), brute_nemirovski(&values));
        }

        #[test]
        fn oracle_output_satisfies_subgradient_inequality(seed in 0u64..100_000, t in 1usize..50) {
            let code = build_code(32, 4, seed, 2000).unwrap();
            let p = params(32, 2);
            let blocks = BlockStructure::from_code(&code, 0, 2).unwrap();
            let inst = HardInstance::new(p, code, blocks).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let w: Vec<f64> = (0..32).map(|_| rng.gen_range(-0.1..0.1)).collect();
            let point = DataPoint::new(vec![1, 3]);
            let (sub, _) = inst.f_subgradient(t, &w, &point).unwrap();
            let probes: Vec<Vec<f64>> = (0..50)
                .map(|_| (0..32).map(|_| rng.gen_range(-0.5..0.5)).collect())
                .collect();
            let f = |x: &[f64]| inst.f_value(x, &point).unwrap();
            prop_assert!(check_subgradient_inequality(f, &w, &sub.vector, &probes).is_ok());
        }
    }
}
