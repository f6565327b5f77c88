//! Standard-oracle functions built from triplet sets.
//!
//! For every point `z`, `G(z)` collects `(f(w,z) + h_z(x), (O(w), h_z'(x)), (w, x))`
//! over the states of every sequence in scope, plus the origin and the weighted
//! output. The max-of-affine extension `f̄(·, z)` of `G(z)` is convex, agrees
//! with `f + h_z` on `G(z)`, and is differentiable at every state before the
//! last one, so any first-order oracle for `f̄` replays the nominal trajectory.
//!
//! All arithmetic is exact.

use std::collections::HashMap;

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::code::{build_code, find_uncovered, BinaryCode, DataPoint, Sample};
use crate::encoder::{all_sequences, choose_r, multisets, polynomial_of, prefix_count, IndexSample, RationalPoly};
use crate::error::{Error, Result};
use crate::instance::{BlockStructure, HardInstance, InstanceParams, Term};
use crate::interpolation::{certify, certify_exact, ExactModel, ExactTriplet, Triplet};

pub type Rational = BigRational;

fn int(n: i64) -> Rational {
    Rational::from_integer(BigInt::from(n))
}

fn exact_float(x: f64) -> Result<Rational> {
    Rational::from_float(x).ok_or_else(|| Error::InvalidParameter(format!("{x} is not finite")))
}

/// `1/√n`, exact when `n` is a perfect square.
fn inverse_sqrt(n: usize) -> Result<Rational> {
    let root = (n as f64).sqrt().round() as usize;
    if root * root == n {
        Ok(Rational::new(BigInt::one(), BigInt::from(root)))
    } else {
        exact_float(1.0 / (n as f64).sqrt())
    }
}

fn to_f64(r: &Rational) -> f64 {
    r.to_f64().unwrap_or(f64::NAN)
}

pub fn h_value(x: f64, z: usize, gamma: f64, alpha: &[f64]) -> f64 {
    0.5 * gamma * (x * x - 2.0 * alpha[z] * x)
}

pub fn h_grad(x: f64, z: usize, gamma: f64, alpha: &[f64]) -> f64 {
    gamma * (x - alpha[z])
}

pub fn h_value_exact(x: &Rational, alpha_z: &Rational, gamma: &Rational) -> Rational {
    gamma * (x * x - int(2) * alpha_z * x) / int(2)
}

pub fn h_grad_exact(x: &Rational, alpha_z: &Rational, gamma: &Rational) -> Rational {
    gamma * (x - alpha_z)
}

/// A convex loss with a sample-dependent oracle, in exact arithmetic.
pub trait ExactLoss: Sync {
    fn dimension(&self) -> usize;
    fn domain_size(&self) -> usize;
    fn value(&self, w: &[Rational], z: usize) -> Result<Rational>;
    /// `O_{S,t,z}(w)`; must be a subgradient of `value(·, z)` at `w`.
    fn oracle(&self, sequence: &[IndexSample], t: usize, w: &[Rational], z: usize) -> Result<Vec<Rational>>;
}

/// The hard instance `g + αN` over a fixed block structure, with every
/// constant converted to an exact rational.
#[derive(Debug, Clone)]
pub struct ExactHardLoss {
    pub code: BinaryCode,
    pub points: Vec<DataPoint>,
    pub blocks: BlockStructure,
    pub eta: Rational,
    pub alpha: Rational,
    pub tau: Rational,
    /// `1/√k`.
    pub block_scale: Rational,
    /// `1/√d`.
    pub correlation_scale: Rational,
    pub cutoff: Option<usize>,
}

impl ExactHardLoss {
    /// Exact counterpart of `instance` on the domain `points`.
    pub fn from_instance(instance: &HardInstance, points: Vec<DataPoint>) -> Result<Self> {
        let params = &instance.params;
        Ok(Self {
            code: instance.code.clone(),
            points,
            blocks: instance.blocks.clone(),
            eta: exact_float(params.eta)?,
            alpha: exact_float(params.alpha)?,
            tau: exact_float(params.tau)?,
            block_scale: inverse_sqrt(params.k)?,
            correlation_scale: inverse_sqrt(params.d)?,
            cutoff: params.oracle_cutoff,
        })
    }

    pub fn block_values(&self, w: &[Rational]) -> Vec<Rational> {
        self.blocks
            .blocks
            .iter()
            .map(|b| &self.block_scale * b.iter().fold(Rational::zero(), |acc, &i| acc + &w[i]))
            .collect()
    }

    /// Block value of one step `ηα e_I`.
    pub fn lattice_unit(&self) -> Rational {
        &self.eta * &self.alpha * &self.block_scale * &self.block_scale * int(self.blocks.width as i64)
    }

    fn term_gradient(&self, term: Term) -> Vec<Rational> {
        let mut g = vec![Rational::zero(); self.dimension()];
        let mut add = |j: usize, sign: i64| {
            for &i in &self.blocks.blocks[j] {
                g[i] += &self.alpha * &self.block_scale * int(sign);
            }
        };
        match term {
            Term::Constant => {}
            Term::Negative(j) => add(j, -1),
            Term::Difference(i, j) => {
                add(j, 1);
                add(i, -1);
            }
        }
        g
    }

    fn correlation(&self, w: &[Rational], member: usize) -> Rational {
        self.code.support(member).into_iter().fold(Rational::zero(), |acc, i| acc + &w[i])
    }

    fn check(&self, w: &[Rational], z: usize) -> Result<()> {
        if w.len() != self.dimension() {
            return Err(Error::DimensionMismatch { expected: self.dimension(), got: w.len() });
        }
        if z >= self.points.len() {
            return Err(Error::InvalidParameter(format!("point {z} outside the domain")));
        }
        Ok(())
    }
}

fn exact_term_value(values: &[Rational], term: Term) -> Rational {
    match term {
        Term::Constant => Rational::zero(),
        Term::Negative(j) => -&values[j],
        Term::Difference(i, j) => &values[j] - &values[i],
    }
}

/// `max{0, max_j −b_j, max_{i<j} b_j − b_i}`.
pub fn nemirovski_exact(values: &[Rational]) -> Rational {
    let mut best = Rational::zero();
    let mut lowest: Option<&Rational> = None;
    for v in values {
        best = best.max(-v);
        if let Some(low) = lowest {
            best = best.max(v - low);
        }
        if lowest.is_none_or(|low| v < low) {
            lowest = Some(v);
        }
    }
    best
}

/// First piece attaining the maximum: the constant, then `−b_j`, then `(i, j)` lexicographically.
pub fn first_maximizing_term_exact(values: &[Rational]) -> Term {
    let best = nemirovski_exact(values);
    let n = values.len();
    std::iter::once(Term::Constant)
        .chain((0..n).map(Term::Negative))
        .chain((0..n).flat_map(|i| (i + 1..n).map(move |j| Term::Difference(i, j))))
        .find(|&term| exact_term_value(values, term) == best)
        .expect("the maximum is attained by some piece")
}

impl ExactLoss for ExactHardLoss {
    fn dimension(&self) -> usize {
        self.code.dimension()
    }

    fn domain_size(&self) -> usize {
        self.points.len()
    }

    fn value(&self, w: &[Rational], z: usize) -> Result<Rational> {
        self.check(w, z)?;
        let best = self.points[z]
            .included
            .iter()
            .map(|&i| self.correlation(w, i))
            .fold(self.tau.clone(), Rational::max);
        Ok(&self.correlation_scale * best + &self.alpha * nemirovski_exact(&self.block_values(w)))
    }

    fn oracle(&self, _sequence: &[IndexSample], t: usize, w: &[Rational], z: usize) -> Result<Vec<Rational>> {
        self.check(w, z)?;
        let values = self.block_values(w);
        let n_value = nemirovski_exact(&values);
        let unit = self.lattice_unit();
        let term = if self.cutoff.is_some_and(|cut| t > cut) || (t == 1 && w.iter().all(Zero::is_zero)) {
            Term::Constant
        } else if n_value.is_positive() {
            first_maximizing_term_exact(&values)
        } else if let Some(j) = values.windows(2).position(|p| p[0] == p[1] && p[0] >= unit) {
            Term::Difference(j, j + 1)
        } else if let Some(j) = values.iter().position(Zero::is_zero) {
            Term::Negative(j)
        } else {
            Term::Constant
        };
        if exact_term_value(&values, term) != n_value {
            return Err(Error::NotASubgradient { step: t, reason: format!("term {term:?} is not active") });
        }
        let mut g = self.term_gradient(term);
        let mut best: Option<(usize, Rational)> = None;
        for &i in &self.points[z].included {
            let c = self.correlation(w, i);
            if best.as_ref().is_none_or(|(_, b)| c > *b) {
                best = Some((i, c));
            }
        }
        if let Some((member, c)) = best {
            if c > self.tau {
                for i in self.code.support(member) {
                    g[i] += &self.correlation_scale;
                }
            }
        }
        Ok(g)
    }
}

/// Which sequences a triplet set covers.
#[derive(Debug, Clone, PartialEq)]
pub enum EnumerationScope {
    /// Every sequence of size-`m` multisets over the domain, if within `budget`.
    Exhaustive { m: usize, budget: usize },
    Realized(Vec<Vec<IndexSample>>),
}

impl EnumerationScope {
    pub fn sequences(&self, domain_size: usize, horizon: usize) -> Result<Vec<Vec<IndexSample>>> {
        match self {
            EnumerationScope::Exhaustive { m, budget } => {
                let choices = multisets(domain_size, *m);
                let required = prefix_count(choices.len(), horizon).unwrap_or(usize::MAX);
                if required > *budget {
                    return Err(Error::BudgetExceeded { required, budget: *budget });
                }
                Ok(all_sequences(&choices, horizon))
            }
            EnumerationScope::Realized(sequences) => {
                if let Some(s) = sequences.iter().find(|s| s.len() != horizon) {
                    return Err(Error::DimensionMismatch { expected: horizon, got: s.len() });
                }
                Ok(sequences.clone())
            }
        }
    }
}

/// Step size, encoding curvature, rational `α` and output weights.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderSetup {
    pub eta: Rational,
    pub gamma: Rational,
    pub alpha: Vec<Rational>,
    pub weights: Vec<Rational>,
}

impl EncoderSetup {
    /// Chooses `γ = r/η` with `r ≤ ε/(2T)` separating every polynomial of the
    /// sequences, and `α(z)` the exact binary value of `frac(√p_z)`.
    pub fn choose(
        eta: Rational,
        epsilon: &Rational,
        weights: Vec<Rational>,
        domain_size: usize,
        sequences: &[Vec<IndexSample>],
    ) -> Result<Self> {
        let horizon = weights.len();
        let mut groups: Vec<Vec<RationalPoly>> = vec![Vec::new(); domain_size];
        for sequence in sequences {
            for (z, group) in groups.iter_mut().enumerate() {
                let mut output = RationalPoly::zero();
                for t in 0..=horizon {
                    let p = polynomial_of(sequence, t, z)?;
                    if t >= 1 {
                        output = output.add_scaled(&p, &weights[t - 1]);
                    }
                    group.push(p);
                }
                group.push(output);
            }
        }
        let r = choose_r(&groups, &(epsilon / int(horizon as i64)))?;
        let alpha = crate::encoder::assign_alpha(domain_size, crate::encoder::AlphaMode::Numeric)
            .numeric()
            .expect("numeric mode")
            .iter()
            .map(|&a| exact_float(a))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { gamma: &r / &eta, eta, alpha, weights })
    }
}

/// One sequence's exact trajectory in `d + 1` dimensions.
#[derive(Debug, Clone, PartialEq)]
pub struct NominalRun {
    pub sequence: Vec<IndexSample>,
    /// `w_0..=w_T`.
    pub w: Vec<Vec<Rational>>,
    /// `x_0..=x_T`.
    pub x: Vec<Rational>,
    /// `oracle_at[t][z] = O_{S,t+1,z}(w_t)` for `t = 0..=T`.
    pub oracle_at: Vec<Vec<Vec<Rational>>>,
    pub w_output: Vec<Rational>,
    pub x_output: Rational,
    /// `O_{S,T+1,z}(w_q)` per `z`.
    pub output_oracle: Vec<Vec<Rational>>,
}

fn mean_of<'a>(vectors: impl Iterator<Item = &'a Vec<Rational>>, dim: usize, count: usize) -> Vec<Rational> {
    let mut total = vec![Rational::zero(); dim];
    for v in vectors {
        for (acc, x) in total.iter_mut().zip(v) {
            *acc += x;
        }
    }
    let n = int(count as i64);
    total.into_iter().map(|x| x / &n).collect()
}

fn squared_norm(w: &[Rational], x: &Rational) -> Rational {
    w.iter().fold(x * x, |acc, v| acc + v * v)
}

/// Exact gradient descent with the sample-dependent oracle and `h`.
pub fn nominal_run<L: ExactLoss>(loss: &L, sequence: &[IndexSample], setup: &EncoderSetup) -> Result<NominalRun> {
    let horizon = setup.weights.len();
    if sequence.len() != horizon {
        return Err(Error::DimensionMismatch { expected: horizon, got: sequence.len() });
    }
    let dim = loss.dimension();
    let nz = loss.domain_size();
    let oracle_row = |t: usize, w: &[Rational]| -> Result<Vec<Vec<Rational>>> {
        (0..nz).map(|z| loss.oracle(sequence, t + 1, w, z)).collect()
    };
    let mut w = vec![vec![Rational::zero(); dim]];
    let mut x = vec![Rational::zero()];
    let mut oracle_at = vec![oracle_row(0, &w[0])?];
    for t in 1..=horizon {
        let sample = &sequence[t - 1];
        if sample.is_empty() || sample.iter().any(|&z| z >= nz) {
            return Err(Error::InvalidParameter(format!("sample {t} is empty or outside the domain")));
        }
        let step = mean_of(sample.iter().map(|&z| &oracle_at[t - 1][z]), dim, sample.len());
        let h_step = sample
            .iter()
            .fold(Rational::zero(), |acc, &z| acc + h_grad_exact(&x[t - 1], &setup.alpha[z], &setup.gamma))
            / int(sample.len() as i64);
        let next_w: Vec<Rational> = w[t - 1].iter().zip(&step).map(|(a, g)| a - &setup.eta * g).collect();
        let next_x = &x[t - 1] - &setup.eta * h_step;
        if squared_norm(&next_w, &next_x) > Rational::one() {
            return Err(Error::OracleFailure { step: t, reason: "iterate left the unit ball".into() });
        }
        oracle_at.push(oracle_row(t, &next_w)?);
        w.push(next_w);
        x.push(next_x);
    }
    let mut w_output = vec![Rational::zero(); dim];
    let mut x_output = Rational::zero();
    for t in 1..=horizon {
        let q = &setup.weights[t - 1];
        for (acc, v) in w_output.iter_mut().zip(&w[t]) {
            *acc += q * v;
        }
        x_output += q * &x[t];
    }
    let output_oracle = (0..nz).map(|z| loss.oracle(sequence, horizon + 1, &w_output, z)).collect::<Result<_>>()?;
    Ok(NominalRun { sequence: sequence.to_vec(), w, x, oracle_at, w_output, x_output, output_oracle })
}

/// Position of a triplet: 0 for the origin, `t` for `w_t`, `T + 1` for the output.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize)]
pub enum TripletRole {
    Origin,
    State(usize),
    Output,
}

impl TripletRole {
    fn time(self, horizon: usize) -> usize {
        match self {
            TripletRole::Origin => 0,
            TripletRole::State(t) => t,
            TripletRole::Output => horizon + 1,
        }
    }
}

#[derive(Debug, Clone)]
pub struct TripletSetG {
    pub horizon: usize,
    pub setup: EncoderSetup,
    /// Distinct triplets per `z`, each with its earliest role.
    pub per_z: Vec<Vec<(TripletRole, ExactTriplet)>>,
    pub runs: Vec<NominalRun>,
}

fn lifted<L: ExactLoss>(
    loss: &L,
    setup: &EncoderSetup,
    z: usize,
    w: &[Rational],
    x: &Rational,
    oracle: &[Rational],
) -> Result<ExactTriplet> {
    let mut gradient = oracle.to_vec();
    gradient.push(h_grad_exact(x, &setup.alpha[z], &setup.gamma));
    let mut point = w.to_vec();
    point.push(x.clone());
    Ok(ExactTriplet { value: loss.value(w, z)? + h_value_exact(x, &setup.alpha[z], &setup.gamma), gradient, point })
}

pub fn build_g<L: ExactLoss>(loss: &L, scope: &EnumerationScope, setup: &EncoderSetup) -> Result<TripletSetG> {
    let horizon = setup.weights.len();
    let nz = loss.domain_size();
    let sequences = scope.sequences(nz, horizon)?;
    let runs: Vec<NominalRun> = sequences.par_iter().map(|s| nominal_run(loss, s, setup)).collect::<Result<_>>()?;
    let mut per_z = Vec::with_capacity(nz);
    for z in 0..nz {
        let mut roles: HashMap<ExactTriplet, TripletRole> = HashMap::new();
        let mut order: Vec<ExactTriplet> = Vec::new();
        let mut insert = |role: TripletRole, triplet: ExactTriplet| match roles.get_mut(&triplet) {
            Some(existing) => *existing = (*existing).min(role),
            None => {
                roles.insert(triplet.clone(), role);
                order.push(triplet);
            }
        };
        let origin = vec![Rational::zero(); loss.dimension()];
        let zero_oracle = vec![Rational::zero(); loss.dimension()];
        insert(TripletRole::Origin, lifted(loss, setup, z, &origin, &Rational::zero(), &zero_oracle)?);
        for run in &runs {
            for t in 0..=horizon {
                insert(TripletRole::State(t), lifted(loss, setup, z, &run.w[t], &run.x[t], &run.oracle_at[t][z])?);
            }
            insert(
                TripletRole::Output,
                lifted(loss, setup, z, &run.w_output, &run.x_output, &run.output_oracle[z])?,
            );
        }
        per_z.push(order.into_iter().map(|t| (roles[&t], t)).collect());
    }
    Ok(TripletSetG { horizon, setup: setup.clone(), per_z, runs })
}

#[derive(Debug, Clone, PartialEq)]
pub struct StrictnessReport {
    /// Minimum slack over ordered pairs with distinct gradients whose first member precedes `T`.
    pub before_last: Option<Rational>,
    /// The same minimum for first members at `t = T`.
    pub at_last: Option<Rational>,
    /// Every counted pair has slack at least `½γ(x_i − x_j)²`.
    pub bregman_bound_holds: bool,
}

/// Slack `v_i − v_j − g_j·(u_i − u_j)` over pairs with `g_i ≠ g_j`.
pub fn strictness_margin(g: &TripletSetG, z: usize) -> StrictnessReport {
    let triplets = &g.per_z[z];
    let half_gamma = &g.setup.gamma / int(2);
    let mut report = StrictnessReport { before_last: None, at_last: None, bregman_bound_holds: true };
    for (role_i, ti) in triplets {
        let time = role_i.time(g.horizon);
        if time > g.horizon {
            continue;
        }
        for (_, tj) in triplets {
            if ti.gradient == tj.gradient {
                continue;
            }
            let slack = crate::interpolation::exact_slack(ti, tj);
            let dx = ti.point.last().expect("lifted") - tj.point.last().expect("lifted");
            report.bregman_bound_holds &= slack >= &half_gamma * &dx * &dx;
            let slot = if time < g.horizon { &mut report.before_last } else { &mut report.at_last };
            if slot.as_ref().is_none_or(|m| slack < *m) {
                *slot = Some(slack);
            }
        }
    }
    report
}

/// One certified max-of-affine model per `z`.
pub fn build_bar_f(g: &TripletSetG) -> Result<Vec<ExactModel>> {
    g.per_z.iter().map(|ts| certify_exact(ts.iter().map(|(_, t)| t.clone()).collect())).collect()
}

/// Output of one replay: every visited point and the weighted output.
#[derive(Debug, Clone, PartialEq)]
pub struct Replay {
    pub points: Vec<Vec<Rational>>,
    pub output: Vec<Rational>,
}

/// Gradient descent on `f̄` where each query returns a random convex
/// combination of the active gradients; fails at the first step that leaves
/// the nominal trajectory.
pub fn adversarial_replay(models: &[ExactModel], nominal: &NominalRun, setup: &EncoderSetup, seed: u64) -> Result<Replay> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let horizon = setup.weights.len();
    let dim = nominal.w[0].len() + 1;
    let mut point = vec![Rational::zero(); dim];
    let mut points = vec![point.clone()];
    for t in 1..=horizon {
        let sample = &nominal.sequence[t - 1];
        let mut total = vec![Rational::zero(); dim];
        for &z in sample {
            let active = models[z].active_gradients(&point);
            let raw: Vec<i64> = active.iter().map(|_| rng.gen_range(1..=16)).collect();
            let norm = int(raw.iter().sum());
            for (g, &c) in active.iter().zip(&raw) {
                let weight = int(c) / &norm;
                for (acc, gi) in total.iter_mut().zip(g) {
                    *acc += &weight * gi;
                }
            }
        }
        let n = int(sample.len() as i64);
        point = point.iter().zip(&total).map(|(p, g)| p - &setup.eta * g / &n).collect();
        let on_track = point[..dim - 1] == nominal.w[t][..] && point[dim - 1] == nominal.x[t];
        if !on_track {
            return Err(Error::TrajectoryDiverged(t));
        }
        points.push(point.clone());
    }
    let mut output = vec![Rational::zero(); dim];
    for t in 1..=horizon {
        for (acc, v) in output.iter_mut().zip(&points[t]) {
            *acc += &setup.weights[t - 1] * v;
        }
    }
    let expected_output = nominal.w_output.iter().chain(std::iter::once(&nominal.x_output));
    if !output.iter().zip(expected_output).all(|(a, b)| a == b) {
        return Err(Error::TrajectoryDiverged(horizon + 1));
    }
    Ok(Replay { points, output })
}

/// Everything checked for one reduction instance.
#[derive(Debug, Clone, Serialize)]
pub struct ReductionReport {
    pub sequences: usize,
    pub triplets_per_point: Vec<usize>,
    pub gamma: String,
    pub margin_before_last: Option<String>,
    pub margin_before_last_positive: bool,
    pub margin_at_last: Option<String>,
    pub bregman_bound_holds: bool,
    /// Every state with `t < T` lies in the differentiability set.
    pub differentiable_before_last: bool,
    /// Reported only: every state with `t = T` lies in the differentiability set.
    pub differentiable_at_last: bool,
    pub values_exact: bool,
    /// `max_z |f̄((0,0),z) − f(0,z)|`.
    pub origin_gap: f64,
    pub origin_gap_within: bool,
    /// `max |f̄((w_q,x_q),z) − f(w_q,z)|` over outputs and points.
    pub output_value_gap: f64,
    pub output_value_within: bool,
    pub replays: usize,
    pub replay_failures: usize,
    pub first_divergence: Option<usize>,
    /// Largest coordinate gap between replayed and nominal outputs.
    pub max_output_deviation: f64,
    pub lipschitz_probe: f64,
    pub lipschitz_budget: f64,
}

impl ReductionReport {
    pub fn pass(&self) -> bool {
        self.margin_before_last_positive
            && self.bregman_bound_holds
            && self.differentiable_before_last
            && self.values_exact
            && self.origin_gap_within
            && self.output_value_within
            && self.replay_failures == 0
            && self.max_output_deviation <= 1e-10
            && self.lipschitz_probe <= self.lipschitz_budget + 1e-9
    }
}

fn float_model(model: &ExactModel) -> Result<crate::interpolation::InterpolationModel> {
    let triplets: Vec<Triplet> = model
        .triplets
        .iter()
        .map(|t| Triplet {
            value: to_f64(&t.value),
            gradient: t.gradient.iter().map(to_f64).collect(),
            point: t.point.iter().map(to_f64).collect(),
        })
        .collect();
    let lipschitz = triplets
        .iter()
        .map(|t| t.gradient.iter().map(|g| g * g).sum::<f64>().sqrt())
        .fold(0.0, f64::max);
    certify(triplets, lipschitz)
}

/// Builds `G` and `f̄`, then replays every sequence in scope under each seed.
pub fn check_reduction<L: ExactLoss>(
    loss: &L,
    scope: &EnumerationScope,
    setup: &EncoderSetup,
    epsilon: &Rational,
    seeds: &[u64],
    probe_pairs: usize,
) -> Result<ReductionReport> {
    let g = build_g(loss, scope, setup)?;
    let models = build_bar_f(&g)?;
    let horizon = g.horizon;
    let nz = loss.domain_size();

    let mut before_last: Option<Rational> = None;
    let mut at_last: Option<Rational> = None;
    let mut bregman = true;
    let mut diff_before = true;
    let mut diff_last = true;
    let mut values_exact = true;
    for z in 0..nz {
        let strict = strictness_margin(&g, z);
        bregman &= strict.bregman_bound_holds;
        for (slot, value) in [(&mut before_last, strict.before_last), (&mut at_last, strict.at_last)] {
            if let Some(v) = value {
                if slot.as_ref().is_none_or(|m| v < *m) {
                    *slot = Some(v);
                }
            }
        }
        for (index, (role, triplet)) in g.per_z[z].iter().enumerate() {
            let in_diff = models[z].diff_set.contains(&index);
            let time = role.time(horizon);
            if time < horizon {
                diff_before &= in_diff;
            } else if time == horizon {
                diff_last &= in_diff;
            }
            values_exact &= models[z].evaluate(&triplet.point).0 == triplet.value;
        }
    }

    let origin = vec![Rational::zero(); loss.dimension() + 1];
    let origin_bound = &setup.gamma * &setup.gamma * &setup.eta * int(horizon as i64);
    let mut origin_gap = Rational::zero();
    let mut output_gap = Rational::zero();
    for z in 0..nz {
        let gap = (models[z].evaluate(&origin).0 - loss.value(&origin[..origin.len() - 1], z)?).abs();
        origin_gap = origin_gap.max(gap);
        for run in &g.runs {
            let mut point = run.w_output.clone();
            point.push(run.x_output.clone());
            let gap = (models[z].evaluate(&point).0 - loss.value(&run.w_output, z)?).abs();
            output_gap = output_gap.max(gap);
        }
    }

    let jobs: Vec<(usize, u64)> = (0..g.runs.len()).flat_map(|r| seeds.iter().map(move |&s| (r, s))).collect();
    let outcomes: Vec<std::result::Result<Replay, usize>> = jobs
        .par_iter()
        .map(|&(r, seed)| match adversarial_replay(&models, &g.runs[r], setup, seed) {
            Ok(replay) => Ok(replay),
            Err(Error::TrajectoryDiverged(t)) => Err(t),
            Err(_) => Err(0),
        })
        .collect();
    let mut failures = 0;
    let mut first_divergence: Option<usize> = None;
    let mut max_dev: f64 = 0.0;
    for (&(r, _), outcome) in jobs.iter().zip(&outcomes) {
        match outcome {
            Ok(replay) => {
                let run = &g.runs[r];
                let expected = run.w_output.iter().chain(std::iter::once(&run.x_output));
                for (a, b) in replay.output.iter().zip(expected) {
                    max_dev = max_dev.max((to_f64(a) - to_f64(b)).abs());
                }
            }
            Err(t) => {
                failures += 1;
                first_divergence = Some(first_divergence.map_or(*t, |f| f.min(*t)));
            }
        }
    }

    let mut probe: f64 = 0.0;
    let mut f_lipschitz: f64 = 0.0;
    for model in &models {
        let float = float_model(model)?;
        probe = probe.max(float.lipschitz_probe(probe_pairs, 7));
        for t in &model.triplets {
            let dim = t.gradient.len() - 1;
            let norm = t.gradient[..dim].iter().map(|g| to_f64(g).powi(2)).sum::<f64>().sqrt();
            f_lipschitz = f_lipschitz.max(norm);
        }
    }

    Ok(ReductionReport {
        sequences: g.runs.len(),
        triplets_per_point: g.per_z.iter().map(Vec::len).collect(),
        gamma: setup.gamma.to_string(),
        margin_before_last_positive: before_last.as_ref().is_none_or(Signed::is_positive),
        margin_before_last: before_last.map(|m| m.to_string()),
        margin_at_last: at_last.map(|m| m.to_string()),
        bregman_bound_holds: bregman,
        differentiable_before_last: diff_before,
        differentiable_at_last: diff_last,
        values_exact,
        origin_gap_within: origin_gap <= origin_bound,
        origin_gap: to_f64(&origin_gap),
        output_value_within: output_gap <= *epsilon,
        output_value_gap: to_f64(&output_gap),
        replays: jobs.len(),
        replay_failures: failures,
        first_divergence,
        max_output_deviation: max_dev,
        lipschitz_probe: probe,
        lipschitz_budget: f_lipschitz + 1.0,
    })
}

/// Two-point hard instance at `d = 16`, `k = 1`, `η = 1/4`: one point holds
/// the second code member, the other is empty, so the first member is always
/// uncovered and fixes the blocks.
pub fn tiny_hard_loss(horizon: usize, code_seed: u64) -> Result<ExactHardLoss> {
    let code = build_code(16, 2, code_seed, 10_000)?;
    let points = vec![DataPoint::new(vec![1]), DataPoint::empty()];
    let sample = Sample { points: points.clone(), epsilon: 0.25, seed: code_seed };
    let vstar = find_uncovered(&code, &sample).ok_or_else(|| Error::InvalidParameter("no uncovered member".into()))?;
    let params = InstanceParams::with_block_width(16, 1, horizon, 0.25, 1)?;
    let blocks = BlockStructure::from_code(&code, vstar, 1)?;
    let instance = HardInstance::new(params, code, blocks)?;
    ExactHardLoss::from_instance(&instance, points)
}

/// `min{d/(520 m), 1/4}` as an exact rational.
pub fn epsilon_exact(d: usize, m: usize) -> Rational {
    Rational::new(BigInt::from(d), BigInt::from(520 * m)).min(Rational::new(BigInt::one(), BigInt::from(4)))
}
