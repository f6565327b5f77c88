//! Max-of-affine convex extension of a set of (value, gradient, point) triplets.
//!
//! A triplet set is interpolable iff `f_i >= f_j + g_j·(w_i - w_j)` for all
//! `i, j`; the extension is then `max_j { f_j + g_j·(w - w_j) }`. An index `i`
//! is in the differentiability set iff every `j` attaining equality at `w_i`
//! carries the gradient `g_i`.
//!
//! Floating triplets use the slack tolerance `1e-9 (1 + |f_i| + |f_j|)`;
//! rational triplets are compared exactly.

use num_rational::BigRational;
use num_traits::{ToPrimitive, Zero};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const SLACK_TOLERANCE: f64 = 1e-9;
const GRADIENT_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Triplet {
    pub value: f64,
    pub gradient: Vec<f64>,
    pub point: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InterpolationModel {
    pub triplets: Vec<Triplet>,
    pub lipschitz: f64,
    pub diff_set: Vec<usize>,
    /// Smallest slack over all ordered pairs `i != j`.
    pub min_slack: f64,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ExactTriplet {
    #[serde(with = "ratio_str")]
    pub value: BigRational,
    #[serde(with = "ratio_vec")]
    pub gradient: Vec<BigRational>,
    #[serde(with = "ratio_vec")]
    pub point: Vec<BigRational>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExactModel {
    pub triplets: Vec<ExactTriplet>,
    pub diff_set: Vec<usize>,
}

fn dot_diff(g: &[f64], a: &[f64], b: &[f64]) -> f64 {
    g.iter().zip(a.iter().zip(b)).map(|(gi, (ai, bi))| gi * (ai - bi)).sum()
}

fn same_gradient(a: &[f64], b: &[f64]) -> bool {
    a.iter().zip(b).all(|(x, y)| (x - y).abs() <= GRADIENT_TOLERANCE * (1.0 + x.abs().max(y.abs())))
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn check_shapes(dims: impl Iterator<Item = (usize, usize)>) -> Result<usize> {
    let mut expected = None;
    for (g, w) in dims {
        let e = *expected.get_or_insert(w);
        if g != e || w != e {
            return Err(Error::DimensionMismatch { expected: e, got: if g != e { g } else { w } });
        }
    }
    expected.ok_or_else(|| Error::InvalidParameter("triplet list is empty".into()))
}

/// Checks every pairwise inequality and computes the differentiability set.
pub fn certify(triplets: Vec<Triplet>, lipschitz: f64) -> Result<InterpolationModel> {
    check_shapes(triplets.iter().map(|t| (t.gradient.len(), t.point.len())))?;
    if let Some(t) = triplets.iter().find(|t| norm(&t.gradient) > lipschitz * (1.0 + 1e-12)) {
        return Err(Error::InvalidParameter(format!(
            "gradient norm {} exceeds the declared constant {lipschitz}",
            norm(&t.gradient)
        )));
    }
    let n = triplets.len();
    let mut worst: Option<(usize, usize, f64)> = None;
    let mut min_slack = f64::INFINITY;
    let mut in_diff = vec![true; n];
    for i in 0..n {
        for j in 0..n {
            if i == j {
                continue;
            }
            let (ti, tj) = (&triplets[i], &triplets[j]);
            let slack = ti.value - tj.value - dot_diff(&tj.gradient, &ti.point, &tj.point);
            let tol = SLACK_TOLERANCE * (1.0 + ti.value.abs() + tj.value.abs());
            min_slack = min_slack.min(slack);
            if slack < -tol && worst.is_none_or(|(_, _, s)| slack < s) {
                worst = Some((i, j, slack));
            }
            if slack.abs() <= tol && !same_gradient(&ti.gradient, &tj.gradient) {
                in_diff[i] = false;
            }
        }
    }
    if let Some((i, j, slack)) = worst {
        return Err(Error::NotInterpolable { i, j, slack });
    }
    let diff_set = (0..n).filter(|&i| in_diff[i]).collect();
    Ok(InterpolationModel { triplets, lipschitz, diff_set, min_slack })
}

impl InterpolationModel {
    pub fn dimension(&self) -> usize {
        self.triplets[0].point.len()
    }

    /// Value of the extension and every index within tolerance of the maximum.
    pub fn evaluate(&self, w: &[f64]) -> (f64, Vec<usize>) {
        let pieces: Vec<f64> = self
            .triplets
            .iter()
            .map(|t| t.value + dot_diff(&t.gradient, w, &t.point))
            .collect();
        let best = pieces.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let tol = SLACK_TOLERANCE * (1.0 + best.abs());
        let active = (0..pieces.len()).filter(|&j| pieces[j] >= best - tol).collect();
        (best, active)
    }

    pub fn value(&self, w: &[f64]) -> f64 {
        self.evaluate(w).0
    }

    /// The common gradient of all active pieces, or `None` at a kink.
    pub fn gradient_at(&self, w: &[f64]) -> Option<Vec<f64>> {
        let (_, active) = self.evaluate(w);
        let first = &self.triplets[active[0]].gradient;
        active
            .iter()
            .all(|&j| same_gradient(first, &self.triplets[j].gradient))
            .then(|| first.clone())
    }

    /// Largest observed `|f(a) - f(b)| / ||a - b||` over random pairs in the unit ball.
    pub fn lipschitz_probe(&self, pairs: usize, seed: u64) -> f64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let dim = self.dimension();
        let mut best = 0.0f64;
        for _ in 0..pairs {
            let a = unit_ball_point(&mut rng, dim);
            let b = unit_ball_point(&mut rng, dim);
            let dist = a.iter().zip(&b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
            if dist > 0.0 {
                best = best.max((self.value(&a) - self.value(&b)).abs() / dist);
            }
        }
        best
    }
}

/// A point of the closed unit ball: uniform direction in the cube, radius `U^{1/d}`.
pub fn unit_ball_point<R: Rng>(rng: &mut R, dim: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let n = norm(&v);
        if n > 1e-12 {
            let r: f64 = rng.gen::<f64>().powf(1.0 / dim as f64);
            return v.into_iter().map(|x| x * r / n).collect();
        }
    }
}

fn dot_diff_exact(g: &[BigRational], a: &[BigRational], b: &[BigRational]) -> BigRational {
    g.iter().zip(a.iter().zip(b)).fold(BigRational::zero(), |acc, (gi, (ai, bi))| acc + gi * (ai - bi))
}

/// Slack `f_i - f_j - g_j·(w_i - w_j)` in exact arithmetic.
pub fn exact_slack(ti: &ExactTriplet, tj: &ExactTriplet) -> BigRational {
    &ti.value - &tj.value - dot_diff_exact(&tj.gradient, &ti.point, &tj.point)
}

/// Exact counterpart of [`certify`]; the reported slack is rounded to `f64`.
pub fn certify_exact(triplets: Vec<ExactTriplet>) -> Result<ExactModel> {
    check_shapes(triplets.iter().map(|t| (t.gradient.len(), t.point.len())))?;
    let n = triplets.len();
    let mut worst: Option<(usize, usize, BigRational)> = None;
    let mut in_diff = vec![true; n];
    for i in 0..n {
        for j in 0..n {
            if i == j {
                continue;
            }
            let slack = exact_slack(&triplets[i], &triplets[j]);
            if slack.is_zero() && triplets[i].gradient != triplets[j].gradient {
                in_diff[i] = false;
            }
            if slack < BigRational::zero() && worst.as_ref().is_none_or(|(_, _, s)| slack < *s) {
                worst = Some((i, j, slack));
            }
        }
    }
    if let Some((i, j, slack)) = worst {
        return Err(Error::NotInterpolable { i, j, slack: slack.to_f64().unwrap_or(f64::NEG_INFINITY) });
    }
    let diff_set = (0..n).filter(|&i| in_diff[i]).collect();
    Ok(ExactModel { triplets, diff_set })
}

impl ExactModel {
    pub fn dimension(&self) -> usize {
        self.triplets[0].point.len()
    }

    /// Exact value and the indices attaining it.
    pub fn evaluate(&self, w: &[BigRational]) -> (BigRational, Vec<usize>) {
        let pieces: Vec<BigRational> = self
            .triplets
            .iter()
            .map(|t| &t.value + dot_diff_exact(&t.gradient, w, &t.point))
            .collect();
        let best = pieces.iter().max().expect("certified models are nonempty").clone();
        let active = (0..pieces.len()).filter(|&j| pieces[j] == best).collect();
        (best, active)
    }

    /// Distinct gradients among the active pieces at `w`.
    pub fn active_gradients(&self, w: &[BigRational]) -> Vec<Vec<BigRational>> {
        let (_, active) = self.evaluate(w);
        let mut grads: Vec<Vec<BigRational>> = Vec::new();
        for j in active {
            let g = &self.triplets[j].gradient;
            if !grads.contains(g) {
                grads.push(g.clone());
            }
        }
        grads
    }

    pub fn gradient_at(&self, w: &[BigRational]) -> Option<Vec<BigRational>> {
        let mut grads = self.active_gradients(w);
        (grads.len() == 1).then(|| grads.remove(0))
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }
}

/// Rationals as `"p/q"` decimal strings.
pub mod ratio_str {
    use num_rational::BigRational;
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(r: &BigRational, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&r.to_string())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<BigRational, D::Error> {
        let text = String::deserialize(d)?;
        text.parse().map_err(serde::de::Error::custom)
    }
}

/// Vectors of rationals as lists of `"p/q"` strings.
pub mod ratio_vec {
    use num_rational::BigRational;
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &[BigRational], s: S) -> Result<S::Ok, S::Error> {
        s.collect_seq(v.iter().map(|r| r.to_string()))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<BigRational>, D::Error> {
        let text = Vec::<String>::deserialize(d)?;
        text.iter().map(|t| t.parse().map_err(serde::de::Error::custom)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use num_bigint::BigInt;
    use proptest::prelude::*;
    use rand::Rng;

    fn quadratic_triplets(points: &[Vec<f64>]) -> Vec<Triplet> {
        points
            .iter()
            .map(|p| Triplet { value: p.iter().map(|x| x * x).sum::<f64>() / 2.0, gradient: p.clone(), point: p.clone() })
            .collect()
    }

    fn rat(n: i64, d: i64) -> BigRational {
        BigRational::new(BigInt::from(n), BigInt::from(d))
    }

    #[test]
    fn strictly_convex_source_is_fully_differentiable() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let pts: Vec<Vec<f64>> = (0..5).map(|_| unit_ball_point(&mut rng, 3)).collect();
        let model = certify(quadratic_triplets(&pts), 1.0).unwrap();
        assert_eq!(model.diff_set, vec![0, 1, 2, 3, 4]);
        for (j, p) in pts.iter().enumerate() {
            let (v, active) = model.evaluate(p);
            assert_eq!(v, model.triplets[j].value);
            assert!(active.contains(&j));
            assert_eq!(model.gradient_at(p).unwrap(), pts[j]);
        }
    }

    #[test]
    fn same_point_different_gradients() {
        let t = |g: f64| Triplet { value: 0.0, gradient: vec![g], point: vec![0.0] };
        let model = certify(vec![t(1.0), t(-1.0)], 1.0).unwrap();
        assert!(model.diff_set.is_empty());
    }

    #[test]
    fn absolute_value_samples() {
        let t = |x: f64, g: f64| Triplet { value: x.abs(), gradient: vec![g], point: vec![x] };
        let model = certify(vec![t(-1.0, -1.0), t(0.0, 0.0), t(1.0, 1.0)], 1.0).unwrap();
        // Both outer pieces are tight at the origin with slopes -1 and 1.
        assert_eq!(model.diff_set, vec![0, 2]);
        assert_eq!(model.gradient_at(&[0.0]), None);
        assert_eq!(model.gradient_at(&[0.5]), Some(vec![1.0]));
    }

    #[test]
    fn violation_reports_worst_pair() {
        let a = Triplet { value: 0.0, gradient: vec![1.0], point: vec![0.0] };
        let b = Triplet { value: -1.0, gradient: vec![0.0], point: vec![1.0] };
        match certify(vec![a, b], 1.0) {
            Err(Error::NotInterpolable { i, j, slack }) => {
                assert_eq!((i, j), (1, 0));
                assert!((slack + 2.0).abs() < 1e-12);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn far_points_follow_steepest_direction() {
        let t = |g: Vec<f64>| Triplet { value: 0.0, gradient: g, point: vec![0.0, 0.0] };
        let model = certify(vec![t(vec![0.5, 0.0]), t(vec![0.0, 0.5]), t(vec![-0.2, 0.1])], 1.0).unwrap();
        let (_, active) = model.evaluate(&[100.0, 1.0]);
        assert_eq!(active, vec![0]);
    }

    #[test]
    fn single_piece_lipschitz() {
        let model = certify(vec![Triplet { value: 1.0, gradient: vec![0.3, 0.4], point: vec![0.0, 0.0] }], 0.5).unwrap();
        assert!(model.lipschitz_probe(2000, 1) <= 0.5 + 1e-12);
        let model2 = certify(
            vec![
                Triplet { value: 0.0, gradient: vec![0.6, 0.0], point: vec![0.0, 0.0] },
                Triplet { value: 0.0, gradient: vec![-0.2, 0.0], point: vec![0.0, 0.0] },
            ],
            0.6,
        )
        .unwrap();
        let along = (model2.value(&[0.9, 0.0]) - model2.value(&[0.1, 0.0])) / 0.8;
        assert!((along - 0.6).abs() < 1e-12);
    }

    #[test]
    fn exact_mode_separates_tiny_slack() {
        let eps = rat(1, 1_000_000_000_000);
        let a = ExactTriplet { value: BigRational::zero(), gradient: vec![BigRational::zero()], point: vec![BigRational::zero()] };
        // b lies on a parabola of curvature eps, slack eps/2 against a.
        let b = ExactTriplet { value: &eps / rat(2, 1), gradient: vec![eps.clone()], point: vec![rat(1, 1)] };
        let model = certify_exact(vec![a.clone(), b.clone()]).unwrap();
        assert_eq!(model.diff_set, vec![0, 1]);
        assert_eq!(exact_slack(&b, &a), &eps / rat(2, 1));
        assert_eq!(model.gradient_at(&[rat(1, 1)]), Some(vec![eps]));
        let text = model.to_json().unwrap();
        let back: ExactModel = serde_json::from_str(&text).unwrap();
        assert_eq!(back, model);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn certified_models_are_convex_and_exact_at_points(seed in 0u64..100_000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let pts: Vec<Vec<f64>> = (0..6).map(|_| unit_ball_point(&mut rng, 4)).collect();
            let model = certify(quadratic_triplets(&pts), 1.0).unwrap();
            for (j, p) in pts.iter().enumerate() {
                prop_assert_eq!(model.value(p), model.triplets[j].value);
            }
            for _ in 0..200 {
                let a = unit_ball_point(&mut rng, 4);
                let b = unit_ball_point(&mut rng, 4);
                let lam: f64 = rng.gen();
                let mid: Vec<f64> = a.iter().zip(&b).map(|(x, y)| lam * x + (1.0 - lam) * y).collect();
                prop_assert!(model.value(&mid) <= lam * model.value(&a) + (1.0 - lam) * model.value(&b) + 1e-9);
            }
        }

        #[test]
        fn evaluate_matches_enumeration(seed in 0u64..100_000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let pts: Vec<Vec<f64>> = (0..5).map(|_| unit_ball_point(&mut rng, 3)).collect();
            let model = certify(quadratic_triplets(&pts), 1.0).unwrap();
            let w = unit_ball_point(&mut rng, 3);
            let brute = model
                .triplets
                .iter()
                .map(|t| t.value + t.gradient.iter().zip(w.iter().zip(&t.point)).map(|(g, (a, b))| g * (a - b)).sum::<f64>())
                .fold(f64::NEG_INFINITY, f64::max);
            prop_assert_eq!(model.value(&w), brute);
        }
    }
}
