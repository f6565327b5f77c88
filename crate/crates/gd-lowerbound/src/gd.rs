//! Projected full-batch (sub)gradient descent and the certificates attached to
//! its trajectory on the hard instance.

use std::io::Write;

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Signed, Zero};
use serde::Serialize;

use crate::code::DataPoint;
use crate::error::{Error, Result};
use crate::instance::{
    apply_lattice_move, lattice_oracle_step, terminal_time, BlockStructure, CaseTag, HardInstance, InstanceParams,
};

/// Step size, horizon, projection radius and output weights `q(1..=T)`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GdConfig {
    pub eta: f64,
    pub horizon: usize,
    pub radius: f64,
    pub weights: Vec<f64>,
}

impl GdConfig {
    /// Uniform averaging `q(t) = 1/T`.
    pub fn uniform(eta: f64, horizon: usize) -> Result<Self> {
        Self::with_weights(eta, vec![1.0 / horizon as f64; horizon])
    }

    /// Suffix averaging `q(t) = 1/(T - s)` for `t > s`.
    pub fn suffix(eta: f64, horizon: usize, s: usize) -> Result<Self> {
        if s >= horizon {
            return Err(Error::InvalidParameter(format!("suffix start {s} must be below T = {horizon}")));
        }
        let share = 1.0 / (horizon - s) as f64;
        Self::with_weights(eta, (1..=horizon).map(|t| if t > s { share } else { 0.0 }).collect())
    }

    /// Arbitrary weights with `max |q(t)| <= 1`.
    pub fn with_weights(eta: f64, weights: Vec<f64>) -> Result<Self> {
        if !(eta > 0.0 && eta.is_finite()) {
            return Err(Error::InvalidParameter(format!("step size {eta} must be positive")));
        }
        if weights.is_empty() {
            return Err(Error::InvalidParameter("horizon must be at least 1".into()));
        }
        if weights.iter().any(|q| !(q.abs() <= 1.0)) {
            return Err(Error::InvalidParameter("weights must satisfy |q(t)| <= 1".into()));
        }
        Ok(Self { eta, horizon: weights.len(), radius: 1.0, weights })
    }
}

/// Iterates `w_0..=w_T`, averaged subgradients used at steps `1..=T`, and projection flags.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Trajectory {
    pub iterates: Vec<Vec<f64>>,
    pub steps: Vec<Vec<f64>>,
    pub projected: Vec<bool>,
    pub weighted_output: Vec<f64>,
}

/// Standard first-order oracle: a subgradient of `f(., z)` at `w`.
pub trait FirstOrderOracle<P> {
    fn subgradient(&self, w: &[f64], point: &P) -> Result<Vec<f64>>;
}

impl<P, F> FirstOrderOracle<P> for F
where
    F: Fn(&[f64], &P) -> Result<Vec<f64>>,
{
    fn subgradient(&self, w: &[f64], point: &P) -> Result<Vec<f64>> {
        self(w, point)
    }
}

/// Oracle that may inspect the step index and the samples used so far.
pub trait SampleDependentOracle<P> {
    fn subgradient(&self, t: usize, history: &[Vec<P>], w: &[f64], point: &P) -> Result<Vec<f64>>;
}

/// Any standard oracle is a sample-dependent one that ignores its context.
pub struct Standard<O>(pub O);

impl<P, O: FirstOrderOracle<P>> SampleDependentOracle<P> for Standard<O> {
    fn subgradient(&self, _t: usize, _history: &[Vec<P>], w: &[f64], point: &P) -> Result<Vec<f64>> {
        self.0.subgradient(w, point)
    }
}

/// Oracle of the hard instance: the three-case `alpha N` subgradient plus the
/// `g` part whenever the threshold is exceeded.
pub struct HardOracle<'a>(pub &'a HardInstance);

impl SampleDependentOracle<DataPoint> for HardOracle<'_> {
    fn subgradient(&self, t: usize, _history: &[Vec<DataPoint>], w: &[f64], point: &DataPoint) -> Result<Vec<f64>> {
        Ok(self.0.f_subgradient(t, w, point)?.0.vector)
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn weighted_sum(weights: &[f64], iterates: &[Vec<f64>], dim: usize) -> Vec<f64> {
    let mut out = vec![0.0; dim];
    for (q, w) in weights.iter().zip(&iterates[1..]) {
        if *q != 0.0 {
            out.iter_mut().zip(w).for_each(|(o, x)| *o += q * x);
        }
    }
    out
}

/// `w_t = Pi[w_{t-1} - eta * mean_{z in S} O_z(w_{t-1})]` from `w_0 = 0`.
pub fn run_gd<P, O: FirstOrderOracle<P>>(oracle: &O, sample: &[P], dim: usize, config: &GdConfig) -> Result<Trajectory> {
    let sequence: Vec<&[P]> = vec![sample; config.horizon];
    run_inner(&Borrowed(oracle), &sequence, dim, config)
}

/// The same recursion with step `t` averaging the time-indexed oracle over `S_t`.
pub fn run_gd_sample_dependent<P: Clone, O: SampleDependentOracle<P>>(
    oracle: &O,
    sequence: &[Vec<P>],
    dim: usize,
    config: &GdConfig,
) -> Result<Trajectory> {
    if sequence.len() != config.horizon {
        return Err(Error::InvalidParameter(format!(
            "sample sequence has length {}, expected {}",
            sequence.len(),
            config.horizon
        )));
    }
    let borrowed: Vec<&[P]> = sequence.iter().map(Vec::as_slice).collect();
    run_inner(&History { oracle, owned: sequence }, &borrowed, dim, config)
}

struct Borrowed<'a, O>(&'a O);

impl<P, O: FirstOrderOracle<P>> StepOracle<P> for Borrowed<'_, O> {
    fn query(&self, _t: usize, w: &[f64], point: &P) -> Result<Vec<f64>> {
        self.0.subgradient(w, point)
    }
}

struct History<'a, P, O> {
    oracle: &'a O,
    owned: &'a [Vec<P>],
}

trait StepOracle<P> {
    fn query(&self, t: usize, w: &[f64], point: &P) -> Result<Vec<f64>>;
}

impl<P, O: SampleDependentOracle<P>> StepOracle<P> for History<'_, P, O> {
    fn query(&self, t: usize, w: &[f64], point: &P) -> Result<Vec<f64>> {
        self.oracle.subgradient(t, &self.owned[..t - 1], w, point)
    }
}

fn run_inner<P, O: StepOracle<P>>(oracle: &O, sequence: &[&[P]], dim: usize, config: &GdConfig) -> Result<Trajectory> {
    let mut iterates = Vec::with_capacity(config.horizon + 1);
    let mut steps = Vec::with_capacity(config.horizon);
    let mut projected = Vec::with_capacity(config.horizon);
    iterates.push(vec![0.0; dim]);
    for t in 1..=config.horizon {
        let prev = &iterates[t - 1];
        let batch = sequence[t - 1];
        let mut avg = vec![0.0; dim];
        for z in batch {
            let g = oracle.query(t, prev, z)?;
            if g.len() != dim {
                return Err(Error::DimensionMismatch { expected: dim, got: g.len() });
            }
            avg.iter_mut().zip(&g).for_each(|(a, x)| *a += x);
        }
        if !batch.is_empty() {
            let inv = 1.0 / batch.len() as f64;
            avg.iter_mut().for_each(|a| *a *= inv);
        }
        let mut next: Vec<f64> = prev.iter().zip(&avg).map(|(w, g)| w - config.eta * g).collect();
        let n = norm(&next);
        let flag = n > config.radius;
        if flag {
            let scale = config.radius / n;
            next.iter_mut().for_each(|x| *x *= scale);
        }
        iterates.push(next);
        steps.push(avg);
        projected.push(flag);
    }
    let weighted_output = weighted_sum(&config.weights, &iterates, dim);
    Ok(Trajectory { iterates, steps, projected, weighted_output })
}

impl Trajectory {
    /// Re-weights the stored iterates.
    pub fn output_for(&self, weights: &[f64]) -> Vec<f64> {
        weighted_sum(weights, &self.iterates, self.iterates[0].len())
    }
}

/// Integer block values `b_t` (units of `eta*alpha`) of the nominal trajectory,
/// together with the oracle case used at each step `1..=steps`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LatticeTrajectory {
    pub units: Vec<Vec<i64>>,
    pub tags: Vec<CaseTag>,
}

/// Runs the oracle on integer block values for `steps` steps.
pub fn simulate_lattice(n_blocks: usize, steps: usize) -> LatticeTrajectory {
    let mut units = Vec::with_capacity(steps + 1);
    let mut tags = Vec::with_capacity(steps);
    units.push(vec![0i64; n_blocks]);
    for t in 1..=steps {
        let mut next = units[t - 1].clone();
        let (mv, tag) = lattice_oracle_step(t, &next);
        apply_lattice_move(&mut next, mv);
        units.push(next);
        tags.push(tag);
    }
    LatticeTrajectory { units, tags }
}

/// Predicted integer block values at step `t` from the phase structure alone.
///
/// With `T_a = terminal_time(a)` the staircase over `a` blocks holds at `T_a`.
/// Between `T_a` and `T_{a+1}` the sub-phase `c` starts at
/// `T_a + sum_{j<c} (a + 1 - j)`, where the first `c` blocks already carry
/// `a + 2 - j`; inside it, step `r >= 1` has raised block `a+1` and carried the
/// new unit up to block `a + 2 - r`.
pub fn closed_form_units(n_blocks: usize, t: usize) -> Result<Vec<i64>> {
    let terminal = terminal_time(n_blocks);
    if t > terminal {
        return Err(Error::OutOfPhase { t, terminal });
    }
    let mut units = vec![0i64; n_blocks];
    if t <= 1 {
        return Ok(units);
    }
    let mut a = 0;
    while a < n_blocks && terminal_time(a + 1) <= t {
        a += 1;
    }
    if a == n_blocks {
        for (j, u) in units.iter_mut().enumerate() {
            *u = (n_blocks - j) as i64;
        }
        return Ok(units);
    }
    let mut start = terminal_time(a);
    let mut c = 0;
    while c < a && start + (a + 1 - c) <= t {
        start += a + 1 - c;
        c += 1;
    }
    let r = t - start;
    // Blocks are 1-indexed in the comments; `j` below is 0-indexed.
    for (j, u) in units.iter_mut().enumerate().take(a) {
        let idx = j + 1;
        *u = if idx <= c { (a + 2 - idx) as i64 } else { (a + 1 - idx) as i64 };
    }
    if r >= 1 {
        let pos = a + 2 - r;
        units[pos - 1] += 1;
    }
    Ok(units)
}

/// Dense iterate predicted at step `t` by [`closed_form_units`].
pub fn closed_form_state(params: &InstanceParams, blocks: &BlockStructure, t: usize) -> Result<Vec<f64>> {
    let units = closed_form_units(blocks.len(), t)?;
    Ok(blocks.embed(&units, params.eta * params.alpha))
}

/// Outcome of the no-projection certificate.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NoProjectionReport {
    pub pass: bool,
    pub first_violation: Option<usize>,
}

/// No projection fired and `||w_t||^2 <= 2 eta^2 alpha^2 t` for every `t >= 1`.
pub fn check_no_projection(traj: &Trajectory, params: &InstanceParams) -> NoProjectionReport {
    let unit2 = (params.eta * params.alpha).powi(2);
    for t in 1..traj.iterates.len() {
        let n2: f64 = traj.iterates[t].iter().map(|x| x * x).sum();
        let bound = 2.0 * unit2 * t as f64;
        if traj.projected[t - 1] || n2 > bound * (1.0 + 1e-12) {
            return NoProjectionReport { pass: false, first_violation: Some(t) };
        }
    }
    NoProjectionReport { pass: true, first_violation: None }
}

/// Integer form of the norm bound: `sum_j b_j^2 <= 2t`.
pub fn check_no_projection_lattice(traj: &LatticeTrajectory) -> NoProjectionReport {
    for (t, units) in traj.units.iter().enumerate().skip(1) {
        let n2: i64 = units.iter().map(|b| b * b).sum();
        if n2 > 2 * t as i64 {
            return NoProjectionReport { pass: false, first_violation: Some(t) };
        }
    }
    NoProjectionReport { pass: true, first_violation: None }
}

fn top_sum(mut values: Vec<f64>, b: usize) -> f64 {
    values.sort_by(|x, y| y.total_cmp(x));
    values.iter().take(b).sum()
}

/// `X_t = max_{|I_B| = B} sum_{i in I_B} w_t(i)` over block coordinates is non-decreasing.
pub fn partial_sum_monotone(traj: &Trajectory, blocks: &BlockStructure, b: usize) -> bool {
    let coords: Vec<usize> = blocks.blocks.iter().flatten().copied().collect();
    let mut prev = f64::NEG_INFINITY;
    for w in &traj.iterates {
        let x = top_sum(coords.iter().map(|&i| w[i]).collect(), b);
        if x < prev - 1e-12 * (1.0 + prev.abs()) {
            return false;
        }
        prev = x;
    }
    true
}

/// Exact form of [`partial_sum_monotone`]: each block value is repeated on its
/// `k` coordinates, so the top-`B` sum is an integer up to the common factor.
pub fn partial_sum_monotone_lattice(traj: &LatticeTrajectory, width: usize, b: usize) -> bool {
    let mut prev = i64::MIN;
    for units in &traj.units {
        let mut coords: Vec<i64> = units.iter().flat_map(|&u| std::iter::repeat_n(u, width)).collect();
        coords.sort_unstable_by(|x, y| y.cmp(x));
        let x: i64 = coords.iter().take(b).sum();
        if x < prev {
            return false;
        }
        prev = x;
    }
    true
}

/// Which one-dimensional construction a step size falls under.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum OplowCase {
    /// `eta^2 T >= 1`: `f(x) = |x - gamma|`, bound `eta/4 + 1/(2 eta T)`.
    Kink,
    /// `eta^2 T < 1`: `f(x) = beta x`, bound `1/(3 T eta)`.
    Linear,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OplowReport {
    pub case: OplowCase,
    #[serde(serialize_with = "ser_rational")]
    pub gap: BigRational,
    #[serde(serialize_with = "ser_rational")]
    pub bound: BigRational,
    pub pass: bool,
}

fn ser_rational<S: serde::Serializer>(r: &BigRational, s: S) -> std::result::Result<S::Ok, S::Error> {
    s.serialize_str(&r.to_string())
}

fn rat(n: i64, d: i64) -> BigRational {
    BigRational::new(BigInt::from(n), BigInt::from(d))
}

/// Exact projected GD on a one-dimensional function given by its subgradient;
/// returns the uniform average of `x_1..=x_T`.
fn run_1d_exact<F: Fn(&BigRational) -> BigRational>(subgrad: F, eta: &BigRational, horizon: usize) -> BigRational {
    let one = BigRational::one();
    let mut x = BigRational::zero();
    let mut total = BigRational::zero();
    for _ in 0..horizon {
        x = &x - eta * subgrad(&x);
        if x > one {
            x = one.clone();
        } else if x < -&one {
            x = -&one;
        }
        total += &x;
    }
    total / BigRational::from_integer(BigInt::from(horizon))
}

/// Optimization error of GD on the kink construction `|x - gamma|`.
pub fn oplow_kink(eta: &BigRational, horizon: usize) -> OplowReport {
    let t = BigRational::from_integer(BigInt::from(horizon));
    let gamma = eta / (&t * rat(1000, 1));
    let g2 = gamma.clone();
    let out = run_1d_exact(move |x| if *x < g2 { -BigRational::one() } else { BigRational::one() }, eta, horizon);
    let gap = (&out - &gamma).abs();
    let bound = eta / rat(4, 1) + (rat(2, 1) * eta * &t).recip();
    let pass = gap >= bound;
    OplowReport { case: OplowCase::Kink, gap, bound, pass }
}

/// Optimization error of GD on the linear construction `beta x`, `beta = 1/((T+1) eta)`.
pub fn oplow_linear(eta: &BigRational, horizon: usize) -> OplowReport {
    let t = BigRational::from_integer(BigInt::from(horizon));
    let beta = ((&t + BigRational::one()) * eta).recip();
    let b2 = beta.clone();
    let out = run_1d_exact(move |_| b2.clone(), eta, horizon);
    // The minimum over the unit interval sits at -1.
    let gap = &beta * (&out + BigRational::one());
    let bound = (rat(3, 1) * &t * eta).recip();
    let pass = gap >= bound;
    OplowReport { case: OplowCase::Linear, gap, bound, pass }
}

/// Runs the construction matching the case of `eta`.
pub fn oplow_bound_check(eta: &BigRational, horizon: usize) -> OplowReport {
    let t = BigRational::from_integer(BigInt::from(horizon));
    if eta * eta * t >= BigRational::one() {
        oplow_kink(eta, horizon)
    } else {
        oplow_linear(eta, horizon)
    }
}

/// Both constructions and the larger realized gap.
pub fn oplow_both(eta: &BigRational, horizon: usize) -> (OplowReport, OplowReport, BigRational) {
    let kink = oplow_kink(eta, horizon);
    let linear = oplow_linear(eta, horizon);
    let best = kink.gap.clone().max(linear.gap.clone());
    (kink, linear, best)
}

#[derive(Serialize)]
struct DumpLine<'a> {
    step: usize,
    iterate: Vec<(usize, f64)>,
    case_tag: Option<CaseTag>,
    norm: f64,
    projected: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    note: Option<&'a str>,
}

/// One JSON object per iterate: step, sparse iterate, case tag and norm.
pub fn write_trajectory_jsonl<W: Write>(traj: &Trajectory, tags: Option<&[CaseTag]>, mut out: W) -> Result<()> {
    for (t, w) in traj.iterates.iter().enumerate() {
        let line = DumpLine {
            step: t,
            iterate: w.iter().enumerate().filter(|(_, x)| **x != 0.0).map(|(i, x)| (i, *x)).collect(),
            case_tag: if t == 0 { None } else { tags.and_then(|s| s.get(t - 1).copied()) },
            norm: norm(w),
            projected: t > 0 && traj.projected[t - 1],
            note: None,
        };
        serde_json::to_writer(&mut out, &line)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::code::build_code;
    use crate::instance::{BlockStructure, HardInstance, InstanceParams};
    use proptest::prelude::*;

    fn zero_oracle(_: &[f64], _: &()) -> Result<Vec<f64>> {
        Ok(vec![0.0; 3])
    }

    #[test]
    fn zero_oracle_is_a_fixed_point() {
        let cfg = GdConfig::uniform(0.1, 10).unwrap();
        let traj = run_gd(&zero_oracle, &[(), ()], 3, &cfg).unwrap();
        assert!(traj.iterates.iter().all(|w| w.iter().all(|&x| x == 0.0)));
        assert_eq!(traj.weighted_output, vec![0.0; 3]);
    }

    #[test]
    fn kink_alternates() {
        let gamma = 1e-9;
        let eta = 0.25;
        let oracle = move |w: &[f64], _: &()| -> Result<Vec<f64>> { Ok(vec![if w[0] < gamma { -1.0 } else { 1.0 }]) };
        let traj = run_gd(&oracle, &[()], 1, &GdConfig::uniform(eta, 10).unwrap()).unwrap();
        for (t, w) in traj.iterates.iter().enumerate() {
            assert_eq!(w[0], if t % 2 == 1 { eta } else { 0.0 });
        }
        assert!((traj.weighted_output[0] - eta / 2.0).abs() < 1e-15);
    }

    #[test]
    fn linear_output() {
        let horizon = 20;
        let eta = 0.01;
        let beta = 1.0 / ((horizon as f64 + 1.0) * eta);
        let oracle = move |_: &[f64], _: &()| -> Result<Vec<f64>> { Ok(vec![beta]) };
        let traj = run_gd(&oracle, &[()], 1, &GdConfig::uniform(eta, horizon).unwrap()).unwrap();
        let expected = -(horizon as f64 + 1.0) * eta * beta / 2.0;
        assert!((traj.weighted_output[0] - expected).abs() < 1e-12);
    }

    #[test]
    fn projection_fires_on_big_steps() {
        let oracle = |_: &[f64], _: &()| -> Result<Vec<f64>> { Ok(vec![-1.0, 0.0]) };
        let traj = run_gd(&oracle, &[()], 2, &GdConfig::uniform(10.0, 3).unwrap()).unwrap();
        assert!(traj.projected.iter().all(|&p| p));
        assert!((norm(&traj.iterates[3]) - 1.0).abs() < 1e-15);
        let params = InstanceParams::with_block_width(16, 1, 3, 10.0, 1).unwrap();
        let report = check_no_projection(&traj, &params);
        assert_eq!(report.first_violation, Some(1));
    }

    #[test]
    fn three_block_staircase_at_eleven() {
        let lat = simulate_lattice(3, 11);
        assert_eq!(lat.units[11], vec![3, 2, 1]);
        assert_eq!(terminal_time(3), 11);
        assert_eq!(closed_form_units(3, 11).unwrap(), vec![3, 2, 1]);
        assert_eq!(closed_form_units(3, 1).unwrap(), vec![0, 0, 0]);
        assert!(matches!(closed_form_units(3, 12), Err(Error::OutOfPhase { .. })));
    }

    #[test]
    fn closed_form_matches_lattice_for_small_counts() {
        for n in 0..=6 {
            let end = terminal_time(n);
            let lat = simulate_lattice(n, end + 5);
            for t in 0..=end {
                assert_eq!(closed_form_units(n, t).unwrap(), lat.units[t], "n={n} t={t}");
            }
            for t in end..=end + 5 {
                assert_eq!(lat.units[t], lat.units[end]);
            }
        }
    }

    #[test]
    fn float_run_matches_closed_form() {
        let code = build_code(32, 4, 3, 1000).unwrap();
        let params = InstanceParams::with_block_width(32, 4, 200, 0.3, 2).unwrap();
        let blocks = BlockStructure::from_code(&code, 0, 2).unwrap();
        let inst = HardInstance::new(params.clone(), code, blocks.clone()).unwrap();
        let n = blocks.len();
        let horizon = terminal_time(n) + 3;
        let sample = vec![vec![DataPoint::empty()]; horizon];
        let cfg = GdConfig::uniform(params.eta, horizon).unwrap();
        let traj = run_gd_sample_dependent(&HardOracle(&inst), &sample, 32, &cfg).unwrap();
        for t in 0..=terminal_time(n) {
            let cf = closed_form_state(&params, &blocks, t).unwrap();
            let err = cf.iter().zip(&traj.iterates[t]).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            assert!(err <= 1e-10, "t={t} err={err}");
        }
        assert!(check_no_projection(&traj, &params).pass);
        assert!(partial_sum_monotone(&traj, &blocks, 1));
    }

    #[test]
    fn terminal_norm_below_bound() {
        for n in 1..20usize {
            let sum_sq: usize = (1..=n).map(|j| (n + 1 - j).pow(2)).sum();
            assert!(sum_sq <= 2 * terminal_time(n));
        }
    }

    #[test]
    fn decreasing_sequence_detected() {
        let blocks = BlockStructure::contiguous(2, 1).unwrap();
        let traj = Trajectory {
            iterates: vec![vec![0.0, 0.0], vec![0.5, 0.0], vec![0.2, 0.0]],
            steps: vec![vec![0.0; 2]; 2],
            projected: vec![false; 2],
            weighted_output: vec![0.0; 2],
        };
        assert!(!partial_sum_monotone(&traj, &blocks, 1));
        let zero = Trajectory { iterates: vec![vec![0.0; 2]; 3], ..traj };
        assert!(partial_sum_monotone(&zero, &blocks, 1));
    }

    #[test]
    fn oplow_examples() {
        let r = oplow_bound_check(&rat(1, 2), 100);
        assert_eq!(r.case, OplowCase::Kink);
        assert!(r.pass);
        assert!(r.bound == rat(1, 8) + rat(1, 100));
        let r = oplow_bound_check(&rat(1, 1000), 100);
        assert_eq!(r.case, OplowCase::Linear);
        assert!(r.pass);
        let (kink, linear, best) = oplow_both(&rat(1, 10), 100);
        assert_eq!(best, kink.gap.clone().max(linear.gap.clone()));
    }

    #[test]
    fn jsonl_dump_has_one_line_per_iterate() {
        let cfg = GdConfig::uniform(0.1, 4).unwrap();
        let traj = run_gd(&zero_oracle, &[()], 3, &cfg).unwrap();
        let mut buf = Vec::new();
        write_trajectory_jsonl(&traj, None, &mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap().lines().count(), 5);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn weighted_output_is_linear(split in 1usize..15, scale in 0.1f64..1.0) {
            let horizon = 16;
            let oracle = |w: &[f64], _: &()| -> Result<Vec<f64>> { Ok(vec![w[0] - 0.3, w[1] + 0.2]) };
            let cfg = GdConfig::uniform(0.1, horizon).unwrap();
            let traj = run_gd(&oracle, &[()], 2, &cfg).unwrap();
            let q1: Vec<f64> = (1..=horizon).map(|t| if t <= split { scale } else { 0.0 }).collect();
            let q2: Vec<f64> = (1..=horizon).map(|t| if t > split { scale / 2.0 } else { 0.0 }).collect();
            let sum: Vec<f64> = q1.iter().zip(&q2).map(|(a, b)| a + b).collect();
            let lhs = traj.output_for(&sum);
            let a = traj.output_for(&q1);
            let b = traj.output_for(&q2);
            for i in 0..2 {
                prop_assert!((lhs[i] - a[i] - b[i]).abs() < 1e-12);
            }
        }

        #[test]
        fn lattice_runs_keep_certificates(n in 1usize..12, extra in 0usize..5) {
            let lat = simulate_lattice(n, terminal_time(n) + extra);
            prop_assert!(check_no_projection_lattice(&lat).pass);
            for width in [1usize, 2, 4] {
                prop_assert!(partial_sum_monotone_lattice(&lat, width, 1));
                prop_assert!(partial_sum_monotone_lattice(&lat, width, (n * width).div_ceil(2)));
            }
        }

        #[test]
        fn gd_is_deterministic(eta in 0.01f64..0.5, horizon in 1usize..40) {
            let oracle = |w: &[f64], z: &f64| -> Result<Vec<f64>> { Ok(vec![(w[0] - z).signum()]) };
            let cfg = GdConfig::uniform(eta, horizon).unwrap();
            let a = run_gd(&oracle, &[0.1, -0.2], 1, &cfg).unwrap();
            let b = run_gd(&oracle, &[0.1, -0.2], 1, &cfg).unwrap();
            prop_assert_eq!(a, b);
        }
    }
}
