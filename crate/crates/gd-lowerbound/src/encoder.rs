//! The auxiliary encoding coordinate.
//!
//! Under `h_z(x) = ½γ(x² − 2α(z)x)` a gradient step on the sample `S_t` gives
//! `x_t = (1 − γη) x_{t−1} − γη α(S_t)` with `α(S)` the mean over the multiset
//! `S`. Unrolled, `x_t = −γη Σ_z α(z) P_z(1 − γη)` where
//! `P_z(X) = Σ_{n<t} (count(z, S_{t−n}) / |S_{t−n}|) X^n`.
//!
//! The tuple `(P_z)_z` is the symbolic state. Two prefixes give equal tuples
//! iff they are equal, and `r = γη` is chosen so that evaluation at `1 − r`
//! keeps every pair of distinct polynomials apart.

use std::collections::{HashMap, HashSet};

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::interpolation::{ratio_str, ratio_vec};

pub type Rational = BigRational;

/// Halvings tried by [`choose_r`] before giving up.
pub const CANDIDATE_CAP: usize = 256;

pub fn rational(numer: i64, denom: i64) -> Rational {
    Rational::new(BigInt::from(numer), BigInt::from(denom))
}

/// Polynomial with exact coefficients in ascending degree, trailing zeros trimmed.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RationalPoly {
    #[serde(with = "ratio_vec")]
    coefficients: Vec<Rational>,
}

impl RationalPoly {
    pub fn zero() -> Self {
        Self { coefficients: Vec::new() }
    }

    pub fn new(mut coefficients: Vec<Rational>) -> Self {
        while coefficients.last().is_some_and(Zero::is_zero) {
            coefficients.pop();
        }
        Self { coefficients }
    }

    pub fn coefficients(&self) -> &[Rational] {
        &self.coefficients
    }

    pub fn coefficient(&self, degree: usize) -> Rational {
        self.coefficients.get(degree).cloned().unwrap_or_else(Rational::zero)
    }

    pub fn is_zero(&self) -> bool {
        self.coefficients.is_empty()
    }

    /// `None` for the zero polynomial.
    pub fn degree(&self) -> Option<usize> {
        self.coefficients.len().checked_sub(1)
    }

    /// Horner evaluation.
    pub fn eval(&self, x: &Rational) -> Rational {
        self.coefficients.iter().rev().fold(Rational::zero(), |acc, c| acc * x + c)
    }

    pub fn eval_f64(&self, x: f64) -> f64 {
        self.coefficients
            .iter()
            .rev()
            .fold(0.0, |acc, c| acc * x + c.to_f64().unwrap_or(f64::NAN))
    }

    /// `X · self + constant`.
    pub fn shift_add(&self, constant: Rational) -> Self {
        let mut coefficients = Vec::with_capacity(self.coefficients.len() + 1);
        coefficients.push(constant);
        coefficients.extend(self.coefficients.iter().cloned());
        Self::new(coefficients)
    }

    pub fn add_scaled(&self, other: &Self, scale: &Rational) -> Self {
        let len = self.coefficients.len().max(other.coefficients.len());
        Self::new((0..len).map(|n| self.coefficient(n) + other.coefficient(n) * scale).collect())
    }

    pub fn sub(&self, other: &Self) -> Self {
        self.add_scaled(other, &-Rational::one())
    }
}

/// A sample drawn from a finite domain, as domain indices with multiplicity.
pub type IndexSample = Vec<usize>;

fn count_fraction(z: usize, sample: &[usize]) -> Rational {
    let count = sample.iter().filter(|&&p| p == z).count();
    rational(count as i64, sample.len() as i64)
}

/// Values of `α` on the domain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum AlphaMap {
    /// One formal symbol per domain point; only polynomial tuples are compared.
    Symbolic(usize),
    /// `α(z) = frac(√p_z)` for the `z`-th prime.
    Numeric(Vec<f64>),
}

impl AlphaMap {
    pub fn domain_size(&self) -> usize {
        match self {
            AlphaMap::Symbolic(n) => *n,
            AlphaMap::Numeric(values) => values.len(),
        }
    }

    pub fn numeric(&self) -> Option<&[f64]> {
        match self {
            AlphaMap::Symbolic(_) => None,
            AlphaMap::Numeric(values) => Some(values),
        }
    }

    /// Mean of `α` over the multiset `sample`.
    pub fn mean(&self, sample: &[usize]) -> Option<f64> {
        let values = self.numeric()?;
        Some(sample.iter().map(|&z| values[z]).sum::<f64>() / sample.len() as f64)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AlphaMode {
    Symbolic,
    Numeric,
}

/// First `count` primes by trial division.
pub fn first_primes(count: usize) -> Vec<u64> {
    let mut primes: Vec<u64> = Vec::with_capacity(count);
    let mut candidate = 2u64;
    while primes.len() < count {
        if primes.iter().take_while(|&&p| p * p <= candidate).all(|&p| !candidate.is_multiple_of(p)) {
            primes.push(candidate);
        }
        candidate += 1;
    }
    primes
}

pub fn assign_alpha(domain_size: usize, mode: AlphaMode) -> AlphaMap {
    match mode {
        AlphaMode::Symbolic => AlphaMap::Symbolic(domain_size),
        AlphaMode::Numeric => AlphaMap::Numeric(
            first_primes(domain_size)
                .into_iter()
                .map(|p| {
                    let root = (p as f64).sqrt();
                    root - root.floor()
                })
                .collect(),
        ),
    }
}

/// Symbolic polynomial tuple plus, for numeric `α`, the real coordinate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncodedState {
    pub symbolic: Vec<RationalPoly>,
    pub numeric: Option<f64>,
}

impl EncodedState {
    pub fn origin(alpha: &AlphaMap) -> Self {
        Self {
            symbolic: vec![RationalPoly::zero(); alpha.domain_size()],
            numeric: alpha.numeric().map(|_| 0.0),
        }
    }

    /// `−r Σ_z α(z) P_z(1 − r)` in floating point.
    pub fn evaluate_numeric(&self, alpha: &[f64], r: f64) -> f64 {
        -r * self
            .symbolic
            .iter()
            .zip(alpha)
            .map(|(p, a)| a * p.eval_f64(1.0 - r))
            .sum::<f64>()
    }

    /// `−r Σ_z α(z) P_z(1 − r)` exactly, for rational `α`.
    pub fn evaluate_exact(&self, alpha: &[Rational], r: &Rational) -> Rational {
        let point = Rational::one() - r;
        let sum = self
            .symbolic
            .iter()
            .zip(alpha)
            .fold(Rational::zero(), |acc, (p, a)| acc + a * p.eval(&point));
        -(r * sum)
    }
}

/// One gradient step of the encoding coordinate on `sample`.
pub fn step(state: &EncodedState, sample: &[usize], gamma: &Rational, eta: &Rational, alpha: &AlphaMap) -> Result<EncodedState> {
    let r = gamma * eta;
    if !(r.is_positive() && r < Rational::one()) {
        return Err(Error::InvalidParameter(format!("gamma * eta = {r} must lie in (0, 1)")));
    }
    if sample.is_empty() {
        return Err(Error::InvalidParameter("empty sample".into()));
    }
    if let Some(&z) = sample.iter().find(|&&z| z >= alpha.domain_size()) {
        return Err(Error::InvalidParameter(format!("point {z} outside the domain")));
    }
    let symbolic = state
        .symbolic
        .iter()
        .enumerate()
        .map(|(z, p)| p.shift_add(count_fraction(z, sample)))
        .collect();
    let numeric = match (state.numeric, alpha.mean(sample)) {
        (Some(x), Some(mean)) => {
            let rf = r.to_f64().unwrap_or(f64::NAN);
            Some((1.0 - rf) * x - rf * mean)
        }
        _ => None,
    };
    Ok(EncodedState { symbolic, numeric })
}

/// Runs [`step`] over the first `t` samples of `sequence`.
pub fn encode_prefix(sequence: &[IndexSample], t: usize, gamma: &Rational, eta: &Rational, alpha: &AlphaMap) -> Result<EncodedState> {
    check_prefix(sequence, t)?;
    sequence[..t]
        .iter()
        .try_fold(EncodedState::origin(alpha), |state, sample| step(&state, sample, gamma, eta, alpha))
}

fn check_prefix(sequence: &[IndexSample], t: usize) -> Result<()> {
    if t > sequence.len() {
        return Err(Error::InvalidParameter(format!("prefix {t} longer than sequence of {}", sequence.len())));
    }
    Ok(())
}

/// `Σ_{n<t} (count(z, S_{t−n}) / |S_{t−n}|) X^n`, built directly from the definition.
pub fn polynomial_of(sequence: &[IndexSample], t: usize, z: usize) -> Result<RationalPoly> {
    check_prefix(sequence, t)?;
    Ok(RationalPoly::new((0..t).map(|n| count_fraction(z, &sequence[t - 1 - n])).collect()))
}

/// `x_t` from the unrolled sum, independent of [`step`].
pub fn closed_form_x(sequence: &[IndexSample], t: usize, r: f64, alpha: &[f64]) -> Result<f64> {
    check_prefix(sequence, t)?;
    let mut total = 0.0;
    for (z, a) in alpha.iter().enumerate() {
        for (index, sample) in sequence[..t].iter().enumerate() {
            let count = sample.iter().filter(|&&p| p == z).count();
            if count > 0 {
                let lag = (t - 1 - index) as i32;
                total += a * (1.0 - r).powi(lag) * count as f64 / sample.len() as f64;
            }
        }
    }
    Ok(-r * total)
}

/// Largest `r = bound / 2^j`, `j ≥ 1`, at which distinct polynomials of each
/// group take distinct values at `1 − r`.
pub fn choose_r(groups: &[Vec<RationalPoly>], bound: &Rational) -> Result<Rational> {
    if !bound.is_positive() {
        return Err(Error::InvalidParameter(format!("bound {bound} must be positive")));
    }
    let distinct: Vec<Vec<&RationalPoly>> = groups
        .iter()
        .map(|group| {
            let mut seen = HashSet::new();
            group.iter().filter(|p| seen.insert(*p)).collect()
        })
        .collect();
    let mut candidate = bound / rational(2, 1);
    for _ in 0..CANDIDATE_CAP {
        if separates(&distinct, &candidate) {
            return Ok(candidate);
        }
        candidate /= rational(2, 1);
    }
    Err(Error::Exhausted(CANDIDATE_CAP))
}

fn separates(groups: &[Vec<&RationalPoly>], r: &Rational) -> bool {
    let point = Rational::one() - r;
    groups.iter().all(|group| {
        let mut values = HashSet::with_capacity(group.len());
        group.iter().all(|p| values.insert(p.eval(&point)))
    })
}

/// All multisets of size `m` over `0..domain_size`, as sorted index lists.
pub fn multisets(domain_size: usize, m: usize) -> Vec<IndexSample> {
    fn extend(start: usize, domain_size: usize, left: usize, current: &mut Vec<usize>, out: &mut Vec<IndexSample>) {
        if left == 0 {
            out.push(current.clone());
            return;
        }
        for z in start..domain_size {
            current.push(z);
            extend(z, domain_size, left - 1, current, out);
            current.pop();
        }
    }
    let mut out = Vec::new();
    extend(0, domain_size, m, &mut Vec::with_capacity(m), &mut out);
    out
}

/// Number of nonempty prefixes of sequences of length `horizon` over `choices` samples.
pub fn prefix_count(choices: usize, horizon: usize) -> Option<usize> {
    let mut total: usize = 0;
    let mut level: usize = 1;
    for _ in 0..horizon {
        level = level.checked_mul(choices)?;
        total = total.checked_add(level)?;
    }
    Some(total)
}

/// Every sequence of length `horizon` over `choices`, in lexicographic order.
pub fn all_sequences(choices: &[IndexSample], horizon: usize) -> Vec<Vec<IndexSample>> {
    let mut out: Vec<Vec<IndexSample>> = vec![Vec::new()];
    for _ in 0..horizon {
        out = out
            .into_iter()
            .flat_map(|prefix| {
                choices.iter().map(move |s| {
                    let mut next = prefix.clone();
                    next.push(s.clone());
                    next
                })
            })
            .collect();
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InjectivityReport {
    pub domain_size: usize,
    pub m: usize,
    pub horizon: usize,
    #[serde(with = "ratio_vec")]
    pub weights: Vec<Rational>,
    /// Nonempty prefixes enumerated.
    pub prefix_states: usize,
    /// Distinct symbolic tuples among them.
    pub distinct_states: usize,
    /// Full-length sequences whose weighted output was checked.
    pub outputs: usize,
    #[serde(with = "ratio_str")]
    pub r: Rational,
    pub item1_symbolic: bool,
    pub item1_evaluated: bool,
    pub item2_symbolic: bool,
    pub item2_evaluated: bool,
    /// Smallest gap between distinct numeric states under the prime-surd `α`.
    pub numeric_min_gap: f64,
    /// Largest relative gap between the recursion and the unrolled sum.
    pub closed_form_max_rel_error: f64,
}

impl InjectivityReport {
    pub fn pass(&self) -> bool {
        self.item1_symbolic && self.item1_evaluated && self.item2_symbolic && self.item2_evaluated
    }
}

type StateTuple = Vec<RationalPoly>;

/// Exhaustive check that prefix states are pairwise distinct and that no
/// intermediate state before the last weighted step equals a weighted output.
///
/// `weights[t − 1]` is the weight of `x_t`; `bound` caps `r`.
pub fn check_injectivity(
    m: usize,
    horizon: usize,
    domain_size: usize,
    weights: &[Rational],
    bound: &Rational,
    budget: usize,
) -> Result<InjectivityReport> {
    if m == 0 || horizon == 0 || domain_size == 0 {
        return Err(Error::InvalidParameter("m, horizon and domain size must be positive".into()));
    }
    if weights.len() != horizon {
        return Err(Error::DimensionMismatch { expected: horizon, got: weights.len() });
    }
    let choices = multisets(domain_size, m);
    let required = prefix_count(choices.len(), horizon).unwrap_or(usize::MAX);
    if required > budget {
        return Err(Error::BudgetExceeded { required, budget });
    }
    let last_weighted = weights.iter().rposition(|q| !q.is_zero()).map_or(0, |i| i + 1);

    // Depth-first walk carrying the tuple of each prefix.
    let mut prefix_tuples: Vec<(usize, StateTuple, Vec<IndexSample>)> = Vec::with_capacity(required);
    let mut outputs: Vec<StateTuple> = Vec::new();
    let mut stack: Vec<(Vec<IndexSample>, StateTuple, StateTuple)> =
        vec![(Vec::new(), vec![RationalPoly::zero(); domain_size], vec![RationalPoly::zero(); domain_size])];
    while let Some((prefix, tuple, weighted)) = stack.pop() {
        let t = prefix.len();
        if t == horizon {
            outputs.push(weighted);
            continue;
        }
        for sample in choices.iter().rev() {
            let next: StateTuple =
                tuple.iter().enumerate().map(|(z, p)| p.shift_add(count_fraction(z, sample))).collect();
            let next_weighted: StateTuple =
                weighted.iter().zip(&next).map(|(acc, p)| acc.add_scaled(p, &weights[t])).collect();
            let mut next_prefix = prefix.clone();
            next_prefix.push(sample.clone());
            prefix_tuples.push((t + 1, next.clone(), next_prefix.clone()));
            stack.push((next_prefix, next, next_weighted));
        }
    }

    let origin: StateTuple = vec![RationalPoly::zero(); domain_size];
    let state_set: HashSet<&StateTuple> = prefix_tuples.iter().map(|(_, s, _)| s).collect();
    let item1_symbolic = state_set.len() == prefix_tuples.len() && !state_set.contains(&origin);
    let mut early: HashSet<&StateTuple> =
        prefix_tuples.iter().filter(|(t, _, _)| *t < last_weighted).map(|(_, s, _)| s).collect();
    early.insert(&origin);
    let item2_symbolic = outputs.iter().all(|o| !early.contains(o));

    let mut groups: Vec<Vec<RationalPoly>> = vec![Vec::new(); domain_size];
    for tuple in prefix_tuples.iter().map(|(_, s, _)| s).chain(outputs.iter()) {
        for (z, p) in tuple.iter().enumerate() {
            groups[z].push(p.clone());
        }
    }
    let r = choose_r(&groups, bound)?;
    let point = Rational::one() - &r;
    let evaluate = |tuple: &StateTuple| -> Vec<Rational> { tuple.iter().map(|p| p.eval(&point)).collect() };
    let mut evaluated_states: HashMap<Vec<Rational>, usize> = HashMap::new();
    for (_, s, _) in &prefix_tuples {
        *evaluated_states.entry(evaluate(s)).or_default() += 1;
    }
    let origin_values = evaluate(&origin);
    let item1_evaluated =
        evaluated_states.len() == prefix_tuples.len() && !evaluated_states.contains_key(&origin_values);
    let mut early_values: HashSet<Vec<Rational>> =
        prefix_tuples.iter().filter(|(t, _, _)| *t < last_weighted).map(|(_, s, _)| evaluate(s)).collect();
    early_values.insert(origin_values);
    let item2_evaluated = outputs.iter().all(|o| !early_values.contains(&evaluate(o)));

    let alpha = assign_alpha(domain_size, AlphaMode::Numeric);
    let alpha_values = alpha.numeric().expect("numeric mode").to_vec();
    let rf = r.to_f64().unwrap_or(f64::NAN);
    let gamma = r.clone();
    let eta = Rational::one();
    let mut numeric: Vec<f64> = Vec::with_capacity(prefix_tuples.len());
    let mut max_rel: f64 = 0.0;
    for (t, _, prefix) in &prefix_tuples {
        let state = encode_prefix(prefix, *t, &gamma, &eta, &alpha)?;
        let recursed = state.numeric.expect("numeric mode");
        let unrolled = closed_form_x(prefix, *t, rf, &alpha_values)?;
        max_rel = max_rel.max((recursed - unrolled).abs() / unrolled.abs().max(f64::MIN_POSITIVE));
        numeric.push(recursed);
    }
    numeric.sort_by(f64::total_cmp);
    let numeric_min_gap = numeric.windows(2).map(|w| w[1] - w[0]).fold(f64::INFINITY, f64::min);

    Ok(InjectivityReport {
        domain_size,
        m,
        horizon,
        weights: weights.to_vec(),
        prefix_states: prefix_tuples.len(),
        distinct_states: state_set.len(),
        outputs: outputs.len(),
        r,
        item1_symbolic,
        item1_evaluated,
        item2_symbolic,
        item2_evaluated,
        numeric_min_gap,
        closed_form_max_rel_error: max_rel,
    })
}

/// Uniform weights `1/T`.
pub fn uniform_weights(horizon: usize) -> Vec<Rational> {
    vec![rational(1, horizon as i64); horizon]
}

/// Weights `1/(T − s)` on `t > s`, zero before.
pub fn suffix_weights(horizon: usize, s: usize) -> Result<Vec<Rational>> {
    if s >= horizon {
        return Err(Error::InvalidParameter(format!("suffix start {s} must be below {horizon}")));
    }
    Ok((1..=horizon)
        .map(|t| if t > s { rational(1, (horizon - s) as i64) } else { Rational::zero() })
        .collect())
}

/// `γ = r / η`, with `r` already capped so that `γ ≤ ε / (ηT)`.
pub fn gamma_from(r: &Rational, eta: &Rational) -> Rational {
    r / eta
}
