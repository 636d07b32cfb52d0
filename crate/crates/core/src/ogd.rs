//! Online gradient descent for binary classification, read as a Bayesian
//! predictive rule.
//!
//! The coefficient recursion is
//! `beta_n = beta_{n-1} + (1 / (n * scale)) (y_n - g(x_n' beta_{n-1})) x_n`
//! with `g` the logistic link and `scale = ln 2` for the cross-entropy loss
//! in bits. `beta_n` is a martingale converging to a random limit; the
//! scaled-update covariance `V_n` calibrates Gaussian credible sets for that
//! limit without knowing the covariate distribution.

use std::f64::consts::LN_2;

use crate::asymptotics::{credible_interval, whitening, CredibleInterval, UpdateAccumulator};
use crate::engine::PredictiveRule;
use crate::error::{Error, Result};
use crate::measure::{DiscreteDistribution, Predictive};
use crate::point::{Point, SpaceKind};
use crate::random::RandomSource;

/// Overflow-safe logistic link `e^z / (1 + e^z)` at `z = x' beta`.
pub fn logistic(x: &[f64], beta: &[f64]) -> Result<f64> {
    if x.len() != beta.len() {
        return Err(Error::Config(format!(
            "covariate dimension {} does not match coefficient dimension {}",
            x.len(),
            beta.len()
        )));
    }
    let z: f64 = x.iter().zip(beta.iter()).map(|(a, b)| a * b).sum();
    Ok(sigmoid(z))
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Loss driving the descent direction. Cross-entropy (in bits, hence the
/// `ln 2` scale) is the default; the quadratic option changes the residual
/// to `(y - g) g (1 - g)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OgdLoss {
    CrossEntropy,
    Quadratic,
}

impl OgdLoss {
    fn residual(&self, y: f64, g: f64) -> f64 {
        match self {
            OgdLoss::CrossEntropy => y - g,
            OgdLoss::Quadratic => (y - g) * g * (1.0 - g),
        }
    }
}

/// Streaming state of the descent: current coefficients, the pair count,
/// and the scaled-update accumulator for `V_n`. Serializes to JSON;
/// resuming a deserialized state is bit-identical to one uninterrupted run.
#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct OgdState {
    beta: Vec<f64>,
    n: usize,
    acc: UpdateAccumulator,
    loss_scale: f64,
    loss: OgdLoss,
    max_covariate: f64,
}

impl OgdState {
    /// Start at the given coefficients with the default bits-scale
    /// cross-entropy loss.
    pub fn new(beta0: Vec<f64>) -> Result<Self> {
        Self::with_loss(beta0, OgdLoss::CrossEntropy, LN_2)
    }

    /// Zero initial coefficients in dimension `d`.
    pub fn zeros(d: usize) -> Result<Self> {
        Self::new(vec![0.0; d])
    }

    /// Gaussian-random initial coefficients.
    pub fn random_init(d: usize, sd: f64, rng: &mut RandomSource) -> Result<Self> {
        let beta0 = (0..d).map(|_| rng.normal(0.0, sd)).collect::<Result<Vec<f64>>>()?;
        Self::new(beta0)
    }

    pub fn with_loss(beta0: Vec<f64>, loss: OgdLoss, loss_scale: f64) -> Result<Self> {
        if beta0.is_empty() {
            return Err(Error::Config("coefficient vector must be nonempty".into()));
        }
        if beta0.iter().any(|b| !b.is_finite()) {
            return Err(Error::Numeric("non-finite initial coefficients".into()));
        }
        if !loss_scale.is_finite() || loss_scale <= 0.0 {
            return Err(Error::Config(format!("loss scale must be positive, got {loss_scale}")));
        }
        let acc = UpdateAccumulator::new(beta0.clone(), false)?;
        Ok(OgdState { beta: beta0, n: 0, acc, loss_scale, loss, max_covariate: 0.0 })
    }

    pub fn beta(&self) -> &[f64] {
        &self.beta
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn dim(&self) -> usize {
        self.beta.len()
    }

    pub fn loss_scale(&self) -> f64 {
        self.loss_scale
    }

    /// Largest sup-norm covariate seen; the normal asymptotics assume a
    /// bounded covariate law, which streaming callers may want to monitor.
    pub fn max_covariate(&self) -> f64 {
        self.max_covariate
    }

    /// Probability of label 1 at covariate `x` under the current
    /// coefficients.
    pub fn predict_prob(&self, x: &[f64]) -> Result<f64> {
        logistic(x, &self.beta)
    }
}

/// One descent step on the pair `(x, y)`.
pub fn ogd_update(s: &mut OgdState, x: &[f64], y: u8) -> Result<()> {
    if y > 1 {
        return Err(Error::Config(format!("label must be 0 or 1, got {y}")));
    }
    if x.len() != s.beta.len() {
        return Err(Error::Config(format!(
            "covariate dimension {} does not match coefficient dimension {}",
            x.len(),
            s.beta.len()
        )));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric(format!("non-finite covariate at step {}", s.n + 1)));
    }
    let g = logistic(x, &s.beta)?;
    let m = (s.n + 1) as f64;
    let coef = s.loss.residual(y as f64, g) / (m * s.loss_scale);
    for (b, &xi) in s.beta.iter_mut().zip(x.iter()) {
        *b += coef * xi;
    }
    s.n += 1;
    let OgdState { acc, beta, .. } = s;
    acc.record_update(beta)?;
    for &xi in x {
        s.max_covariate = s.max_covariate.max(xi.abs());
    }
    Ok(())
}

/// The scaled-update covariance `V_n = (1/n) sum_k k^2 Db_k Db_k'`.
pub fn ogd_vn(s: &OgdState) -> Result<Vec<f64>> {
    s.acc.vn()
}

/// Per-coordinate credible intervals plus the whitening matrix `V_n^{-1/2}`
/// for joint (ellipsoidal) sets.
#[derive(Clone, Debug, serde::Serialize, serde::Deserialize)]
pub struct OgdCredible {
    pub intervals: Vec<CredibleInterval>,
    /// Row-major `d x d` inverse square root of `V_n`.
    pub whitening: Vec<f64>,
    /// True when `V_n` had directions at or below the eigenvalue floor.
    pub degenerate: bool,
    pub level: f64,
    pub n: usize,
}

/// Credible sets for the random limit of the coefficients: coordinate `i`
/// gets `beta_n[i] +/- z sqrt(V_n[i,i] / n)`.
pub fn ogd_credible(s: &OgdState, level: f64) -> Result<OgdCredible> {
    let d = s.dim();
    let mut intervals = Vec::with_capacity(d);
    for i in 0..d {
        intervals.push(credible_interval(&s.acc, s.beta[i], i, level)?);
    }
    let vn = ogd_vn(s)?;
    let (w, degenerate) = whitening(&vn, d)?;
    Ok(OgdCredible { intervals, whitening: w, degenerate, level, n: s.n })
}

// ---------------------------------------------------------------------------
// Covariate laws and the plug-in information matrix
// ---------------------------------------------------------------------------

/// A finite-support covariate distribution.
#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct CovariateLaw {
    support: Vec<Vec<f64>>,
    probs: Vec<f64>,
}

impl CovariateLaw {
    pub fn new(support: Vec<Vec<f64>>, probs: Vec<f64>) -> Result<Self> {
        if support.is_empty() || support.len() != probs.len() {
            return Err(Error::Config("covariate support and probabilities must match".into()));
        }
        let d = support[0].len();
        if d == 0 || support.iter().any(|x| x.len() != d) {
            return Err(Error::Config("covariate support points must share a dimension".into()));
        }
        if support.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("non-finite covariate support".into()));
        }
        let sum: f64 = probs.iter().sum();
        if probs.iter().any(|p| !(0.0..=1.0).contains(p)) || (sum - 1.0).abs() > 1e-12 {
            return Err(Error::Config(format!(
                "covariate probabilities sum to {sum}, not 1"
            )));
        }
        Ok(CovariateLaw { support, probs })
    }

    /// Uniform law on the given points.
    pub fn uniform(support: Vec<Vec<f64>>) -> Result<Self> {
        let k = support.len();
        if k == 0 {
            return Err(Error::Config("covariate support must be nonempty".into()));
        }
        let p = 1.0 / k as f64;
        Self::new(support, vec![p; k])
    }

    pub fn dim(&self) -> usize {
        self.support[0].len()
    }

    pub fn support(&self) -> &[Vec<f64>] {
        &self.support
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn sample<'a>(&'a self, rng: &mut RandomSource) -> &'a [f64] {
        let r = rng.uniform();
        let mut cum = 0.0;
        for (x, &p) in self.support.iter().zip(self.probs.iter()) {
            cum += p;
            if r < cum {
                return x;
            }
        }
        self.support.last().expect("nonempty support")
    }
}

/// Covariate input for the plug-in information matrix: an exact finite law
/// or a bag of Monte Carlo draws.
pub enum PxInput<'a> {
    Finite(&'a CovariateLaw),
    Samples(&'a [Vec<f64>]),
}

/// The plug-in estimate of `U = scale^{-2} E[x x' g (1 - g)]` at the current
/// coefficients, with per-entry Monte Carlo standard errors when estimated
/// from samples.
#[derive(Clone, Debug)]
pub struct UPlugin {
    pub matrix: Vec<f64>,
    pub dim: usize,
    pub std_err: Option<Vec<f64>>,
}

pub fn ogd_u_plugin(s: &OgdState, px: PxInput<'_>) -> Result<UPlugin> {
    let d = s.dim();
    let scale2 = s.loss_scale * s.loss_scale;
    let term = |x: &[f64], out: &mut [f64]| -> Result<()> {
        let g = logistic(x, &s.beta)?;
        let w = g * (1.0 - g) / scale2;
        for i in 0..d {
            for j in 0..d {
                out[i * d + j] = w * x[i] * x[j];
            }
        }
        Ok(())
    };
    match px {
        PxInput::Finite(law) => {
            if law.dim() != d {
                return Err(Error::Config(format!(
                    "covariate law dimension {} does not match coefficients ({d})",
                    law.dim()
                )));
            }
            let mut u = vec![0.0; d * d];
            let mut buf = vec![0.0; d * d];
            for (x, &p) in law.support().iter().zip(law.probs().iter()) {
                term(x, &mut buf)?;
                for (a, b) in u.iter_mut().zip(buf.iter()) {
                    *a += p * b;
                }
            }
            Ok(UPlugin { matrix: u, dim: d, std_err: None })
        }
        PxInput::Samples(samples) => {
            if samples.is_empty() {
                return Err(Error::Config("need at least one covariate sample".into()));
            }
            let n = samples.len() as f64;
            let mut mean = vec![0.0; d * d];
            let mut sq = vec![0.0; d * d];
            let mut buf = vec![0.0; d * d];
            for x in samples {
                if x.len() != d {
                    return Err(Error::Config(format!(
                        "covariate sample dimension {} does not match coefficients ({d})",
                        x.len()
                    )));
                }
                term(x, &mut buf)?;
                for k in 0..d * d {
                    mean[k] += buf[k];
                    sq[k] += buf[k] * buf[k];
                }
            }
            for m in mean.iter_mut() {
                *m /= n;
            }
            let std_err: Vec<f64> = (0..d * d)
                .map(|k| {
                    let var = (sq[k] / n - mean[k] * mean[k]).max(0.0);
                    (var / n).sqrt()
                })
                .collect();
            Ok(UPlugin { matrix: mean, dim: d, std_err: Some(std_err) })
        }
    }
}

// ---------------------------------------------------------------------------
// The joint predictive rule
// ---------------------------------------------------------------------------

/// The descent as a predictive rule for pairs `(x, y)`: predict draws
/// `x ~ P_X` and `y ~ Bernoulli(g(x' beta_n))`; update is the descent step.
/// Observations are `(d+1)`-vectors with the label (0 or 1) in the last
/// coordinate.
#[derive(Clone, Debug)]
pub struct OgdRule {
    beta0: Vec<f64>,
    loss: OgdLoss,
    loss_scale: f64,
    px: CovariateLaw,
}

impl OgdRule {
    pub fn new(beta0: Vec<f64>, px: CovariateLaw) -> Result<Self> {
        Self::with_loss(beta0, px, OgdLoss::CrossEntropy, LN_2)
    }

    pub fn with_loss(
        beta0: Vec<f64>,
        px: CovariateLaw,
        loss: OgdLoss,
        loss_scale: f64,
    ) -> Result<Self> {
        if px.dim() != beta0.len() {
            return Err(Error::Config(format!(
                "covariate law dimension {} does not match coefficients ({})",
                px.dim(),
                beta0.len()
            )));
        }
        OgdState::with_loss(beta0.clone(), loss, loss_scale)?;
        Ok(OgdRule { beta0, loss, loss_scale, px })
    }

    pub fn covariates(&self) -> &CovariateLaw {
        &self.px
    }

    fn split(&self, p: &Point) -> Result<(Vec<f64>, u8)> {
        let d = self.beta0.len();
        let v = p
            .as_vector()
            .ok_or_else(|| Error::Domain(format!("expected a vector pair, got {}", p.describe())))?;
        if v.len() != d + 1 {
            return Err(Error::Config(format!(
                "pair vector has length {}, expected {} covariates plus a label",
                v.len(),
                d
            )));
        }
        let y = v[d];
        if y != 0.0 && y != 1.0 {
            return Err(Error::Config(format!("label coordinate must be 0 or 1, got {y}")));
        }
        Ok((v[..d].to_vec(), y as u8))
    }

    fn pair_point(x: &[f64], y: u8) -> Point {
        let mut v = x.to_vec();
        v.push(y as f64);
        Point::Vector(v)
    }
}

impl PredictiveRule for OgdRule {
    type Summary = OgdState;

    fn name(&self) -> String {
        "ogd-logistic".into()
    }

    fn space(&self) -> SpaceKind {
        SpaceKind::RealVector { dim: self.beta0.len() + 1 }
    }

    fn initial_summary(&self) -> Self::Summary {
        OgdState::with_loss(self.beta0.clone(), self.loss, self.loss_scale)
            .expect("validated at construction")
    }

    fn update(&self, summary: &Self::Summary, p: &Point) -> Result<Self::Summary> {
        let mut next = summary.clone();
        self.update_in_place(&mut next, p)?;
        Ok(next)
    }

    fn update_in_place(&self, summary: &mut Self::Summary, p: &Point) -> Result<()> {
        let (x, y) = self.split(p)?;
        ogd_update(summary, &x, y)
    }

    fn predict(&self, summary: &Self::Summary) -> Result<Predictive> {
        let mut points = Vec::with_capacity(2 * self.px.support().len());
        let mut probs = Vec::with_capacity(2 * self.px.support().len());
        for (x, &p) in self.px.support().iter().zip(self.px.probs().iter()) {
            let g = logistic(x, summary.beta())?;
            points.push(Self::pair_point(x, 0));
            probs.push(p * (1.0 - g));
            points.push(Self::pair_point(x, 1));
            probs.push(p * g);
        }
        Ok(Predictive::Finite(DiscreteDistribution::new(points, probs)?))
    }

    fn sample_next(&self, summary: &Self::Summary, rng: &mut RandomSource) -> Result<Point> {
        let x = self.px.sample(rng).to_vec();
        let g = logistic(&x, summary.beta())?;
        let y = u8::from(rng.bernoulli(g));
        Ok(Self::pair_point(&x, y))
    }
}

// ---------------------------------------------------------------------------
// Tests
// ---------------------------------------------------------------------------

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::{initial_state, step};

    const TOL: f64 = 1e-12;

    fn assert_close(a: f64, b: f64, tol: f64) {
        assert!((a - b).abs() <= tol, "{a} vs {b} (tol {tol:e})");
    }

    // ---------- the link ----------

    #[test]
    fn zero_score_gives_one_half() {
        assert_close(logistic(&[1.0, -2.0], &[0.0, 0.0]).unwrap(), 0.5, TOL);
    }

    #[test]
    fn saturation_is_overflow_safe() {
        assert_close(logistic(&[40.0], &[1.0]).unwrap(), 1.0, TOL);
        assert_close(logistic(&[-40.0], &[1.0]).unwrap(), 0.0, TOL);
        assert!(logistic(&[1e6], &[1e6]).unwrap().is_finite());
    }

    #[test]
    fn sign_flip_antisymmetry() {
        let mut rng = RandomSource::new(51);
        for _ in 0..200 {
            let x: Vec<f64> = (0..3).map(|_| rng.normal(0.0, 2.0).unwrap()).collect();
            let beta: Vec<f64> = (0..3).map(|_| rng.normal(0.0, 2.0).unwrap()).collect();
            let neg: Vec<f64> = beta.iter().map(|b| -b).collect();
            let total = logistic(&x, &beta).unwrap() + logistic(&x, &neg).unwrap();
            assert_close(total, 1.0, TOL);
        }
    }

    #[test]
    fn dimension_mismatch_is_rejected() {
        assert!(matches!(logistic(&[1.0], &[1.0, 2.0]), Err(Error::Config(_))));
    }

    // ---------- the recursion ----------

    #[test]
    fn first_step_worked_value() {
        let mut s = OgdState::zeros(1).unwrap();
        ogd_update(&mut s, &[1.0], 1).unwrap();
        assert_close(s.beta()[0], 0.5 / LN_2, TOL);
        assert_close(s.beta()[0], 0.72135, 1e-5);
    }

    #[test]
    fn quadratic_loss_scales_the_residual_by_the_variance_term() {
        let mut s = OgdState::with_loss(vec![0.0], OgdLoss::Quadratic, LN_2).unwrap();
        ogd_update(&mut s, &[1.0], 1).unwrap();
        assert_close(s.beta()[0], 0.5 * 0.25 / LN_2, TOL);
    }

    #[test]
    fn zero_covariate_leaves_the_coefficients_unchanged() {
        let mut s = OgdState::zeros(2).unwrap();
        ogd_update(&mut s, &[0.0, 0.0], 1).unwrap();
        assert_eq!(s.beta(), &[0.0, 0.0]);
        assert_eq!(s.n(), 1);
        // V after one zero update is the zero matrix.
        assert_eq!(ogd_vn(&s).unwrap(), vec![0.0; 4]);
    }

    #[test]
    fn labels_beyond_one_are_rejected() {
        let mut s = OgdState::zeros(1).unwrap();
        assert!(matches!(ogd_update(&mut s, &[1.0], 2), Err(Error::Config(_))));
    }

    #[test]
    fn one_step_expected_update_is_zero() {
        // Over y ~ Bernoulli(g) and x ~ P_X (finite), E[beta_{n+1}] equals
        // beta_n exactly.
        let law = CovariateLaw::new(
            vec![vec![1.0, 0.0], vec![0.0, 1.0], vec![1.0, 1.0]],
            vec![0.3, 0.45, 0.25],
        )
        .unwrap();
        let mut s = OgdState::new(vec![0.4, -0.7]).unwrap();
        // Push the state somewhere non-trivial first.
        ogd_update(&mut s, &[1.0, 1.0], 0).unwrap();
        ogd_update(&mut s, &[1.0, 0.0], 1).unwrap();
        let mut expected = vec![0.0; 2];
        for (x, &p) in law.support().iter().zip(law.probs().iter()) {
            let g = logistic(x, s.beta()).unwrap();
            for (y, w) in [(1u8, g), (0u8, 1.0 - g)] {
                let mut branch = s.clone();
                ogd_update(&mut branch, x, y).unwrap();
                for i in 0..2 {
                    expected[i] += p * w * branch.beta()[i];
                }
            }
        }
        for i in 0..2 {
            assert_close(expected[i], s.beta()[i], TOL);
        }
    }

    #[test]
    fn update_norms_respect_the_learning_rate_decay() {
        // Covariates in [-1,1]^d: n * ||Db_n|| <= sqrt(d)/ln 2.
        let d = 3usize;
        let bound = (d as f64).sqrt() / LN_2;
        let mut rng = RandomSource::new(60);
        let mut s = OgdState::zeros(d).unwrap();
        let mut prev = s.beta().to_vec();
        for n in 1..=500usize {
            let x: Vec<f64> = (0..d).map(|_| rng.uniform() * 2.0 - 1.0).collect();
            let y = u8::from(rng.bernoulli(0.5));
            ogd_update(&mut s, &x, y).unwrap();
            let norm: f64 = s
                .beta()
                .iter()
                .zip(prev.iter())
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt();
            assert!(n as f64 * norm <= bound + 1e-12, "step {n}: {}", n as f64 * norm);
            prev = s.beta().to_vec();
        }
    }

    #[test]
    fn vn_first_step_is_the_outer_product() {
        let mut s = OgdState::zeros(2).unwrap();
        ogd_update(&mut s, &[1.0, -1.0], 1).unwrap();
        let delta = 0.5 / LN_2;
        let v = ogd_vn(&s).unwrap();
        assert_close(v[0], delta * delta, TOL);
        assert_close(v[1], -delta * delta, TOL);
        assert_close(v[3], delta * delta, TOL);
    }

    #[test]
    fn vn_of_an_empty_state_is_a_domain_error() {
        let s = OgdState::zeros(2).unwrap();
        assert!(matches!(ogd_vn(&s), Err(Error::Domain(_))));
    }

    // ---------- credible sets ----------

    #[test]
    fn scalar_credible_interval_reduces_to_the_formula() {
        let mut s = OgdState::zeros(1).unwrap();
        let mut rng = RandomSource::new(61);
        for _ in 0..50 {
            ogd_update(&mut s, &[1.0], u8::from(rng.bernoulli(0.7))).unwrap();
        }
        let cred = ogd_credible(&s, 0.95).unwrap();
        let v = ogd_vn(&s).unwrap()[0];
        let z = crate::asymptotics::normal_quantile(0.975).unwrap();
        let half = z * (v / s.n() as f64).sqrt();
        assert_close(cred.intervals[0].lo, s.beta()[0] - half, TOL);
        assert_close(cred.intervals[0].hi, s.beta()[0] + half, TOL);
        assert!(!cred.degenerate);
    }

    #[test]
    fn untouched_coordinates_flag_degeneracy() {
        // Second coordinate never receives signal: V is singular.
        let mut s = OgdState::zeros(2).unwrap();
        let mut rng = RandomSource::new(62);
        for _ in 0..30 {
            ogd_update(&mut s, &[1.0, 0.0], u8::from(rng.bernoulli(0.5))).unwrap();
        }
        let cred = ogd_credible(&s, 0.9).unwrap();
        assert!(cred.degenerate);
        assert!(cred.intervals[1].degenerate);
        assert_eq!(cred.intervals[1].lo, cred.intervals[1].hi);
    }

    // ---------- plug-in information matrix ----------

    #[test]
    fn point_mass_covariates_give_the_closed_form() {
        let law = CovariateLaw::new(vec![vec![2.0, 1.0]], vec![1.0]).unwrap();
        let s = OgdState::zeros(2).unwrap();
        let u = ogd_u_plugin(&s, PxInput::Finite(&law)).unwrap();
        let c = 0.25 / (LN_2 * LN_2);
        assert_close(u.matrix[0], c * 4.0, TOL);
        assert_close(u.matrix[1], c * 2.0, TOL);
        assert_close(u.matrix[3], c * 1.0, TOL);
        assert!(u.std_err.is_none());
    }

    #[test]
    fn monte_carlo_u_matches_the_exact_sum() {
        let law = CovariateLaw::new(
            vec![vec![1.0, 0.0], vec![0.0, 1.0], vec![1.0, 1.0]],
            vec![0.25, 0.25, 0.5],
        )
        .unwrap();
        let mut s = OgdState::new(vec![0.3, -0.2]).unwrap();
        ogd_update(&mut s, &[1.0, 1.0], 1).unwrap();
        let exact = ogd_u_plugin(&s, PxInput::Finite(&law)).unwrap();
        let mut rng = RandomSource::new(63);
        let samples: Vec<Vec<f64>> =
            (0..100_000).map(|_| law.sample(&mut rng).to_vec()).collect();
        let mc = ogd_u_plugin(&s, PxInput::Samples(&samples)).unwrap();
        let se = mc.std_err.as_ref().unwrap();
        for k in 0..4 {
            let gap = (mc.matrix[k] - exact.matrix[k]).abs();
            assert!(gap <= 3.0 * se[k].max(1e-12), "entry {k}: gap {gap}, se {}", se[k]);
        }
    }

    // ---------- the rule ----------

    #[test]
    fn zero_coefficients_predict_one_half_everywhere() {
        let law = CovariateLaw::uniform(vec![vec![1.0], vec![-1.0]]).unwrap();
        let rule = OgdRule::new(vec![0.0], law).unwrap();
        let state = initial_state(&rule);
        let pred = rule.predict(&state.summary).unwrap();
        for x in [1.0, -1.0] {
            let of = |y: u8| pred.point_mass(&Point::Vector(vec![x, y as f64]));
            assert_close(of(1), 0.25, TOL); // 0.5 (covariate) * 0.5 (label)
            assert_close(of(0), 0.25, TOL);
        }
    }

    #[test]
    fn trajectories_settle_down() {
        let law = CovariateLaw::uniform(vec![vec![1.0, 0.0], vec![0.0, 1.0], vec![1.0, 1.0]])
            .unwrap();
        let rule = OgdRule::new(vec![0.0, 0.0], law).unwrap();
        let mut rng = RandomSource::new(64);
        let mut state = initial_state(&rule);
        let mut checkpoints = Vec::new();
        for n in 1..=40_000usize {
            let p = rule.sample_next(&state.summary, &mut rng).unwrap();
            step(&rule, &mut state, &p).unwrap();
            if n == 1_000 || n == 2_000 || n == 10_000 || n == 20_000 || n == 40_000 {
                checkpoints.push(state.summary.beta().to_vec());
            }
        }
        let dist = |a: &[f64], b: &[f64]| -> f64 {
            a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
        };
        let hop1 = dist(&checkpoints[0], &checkpoints[1]); // 1k -> 2k
        let hop2 = dist(&checkpoints[2], &checkpoints[3]); // 10k -> 20k
        let hop3 = dist(&checkpoints[3], &checkpoints[4]); // 20k -> 40k
        assert!(hop2 < hop1, "doubling hops should shrink: {hop1} then {hop2}");
        assert!(hop3 < hop1, "doubling hops should shrink: {hop1} then {hop3}");
    }

    #[test]
    fn late_windows_have_matching_joint_frequencies() {
        // Asymptotic-exchangeability proxy: (x, y) cell frequencies over two
        // disjoint late windows agree (chi-square at 1%, 2x2 cells, binary
        // covariate).
        let law = CovariateLaw::uniform(vec![vec![1.0], vec![-1.0]]).unwrap();
        let rule = OgdRule::new(vec![0.0], law).unwrap();
        let mut rng = RandomSource::new(65);
        let mut state = initial_state(&rule);
        let mut window_a = [0usize; 4];
        let mut window_b = [0usize; 4];
        for n in 1..=20_000usize {
            let p = rule.sample_next(&state.summary, &mut rng).unwrap();
            if n > 10_000 {
                let v = p.as_vector().unwrap();
                let cell = 2 * usize::from(v[0] > 0.0) + usize::from(v[1] > 0.5);
                if n <= 15_000 {
                    window_a[cell] += 1;
                } else {
                    window_b[cell] += 1;
                }
            }
            step(&rule, &mut state, &p).unwrap();
        }
        let mut chi2 = 0.0;
        for c in 0..4 {
            let col = (window_a[c] + window_b[c]) as f64;
            let expected = col / 2.0;
            chi2 += (window_a[c] as f64 - expected).powi(2) / expected;
            chi2 += (window_b[c] as f64 - expected).powi(2) / expected;
        }
        use statrs::distribution::{ChiSquared, ContinuousCDF};
        let critical = ChiSquared::new(3.0).unwrap().inverse_cdf(0.99);
        assert!(chi2 <= critical, "chi2 {chi2} over critical {critical}");
    }

    #[test]
    fn engine_update_matches_direct_descent() {
        let law = CovariateLaw::uniform(vec![vec![1.0, -1.0]]).unwrap();
        let rule = OgdRule::new(vec![0.1, 0.2], law).unwrap();
        let state = initial_state(&rule);
        let next = rule
            .update(&state.summary, &Point::Vector(vec![1.0, -1.0, 1.0]))
            .unwrap();
        let mut direct = OgdState::new(vec![0.1, 0.2]).unwrap();
        ogd_update(&mut direct, &[1.0, -1.0], 1).unwrap();
        assert_eq!(next, direct);
    }

    #[test]
    fn malformed_pairs_are_rejected() {
        let law = CovariateLaw::uniform(vec![vec![1.0]]).unwrap();
        let rule = OgdRule::new(vec![0.0], law).unwrap();
        let s = initial_state(&rule).summary;
        assert!(rule.update(&s, &Point::Vector(vec![1.0, 0.5])).is_err()); // label 0.5
        assert!(rule.update(&s, &Point::Vector(vec![1.0])).is_err()); // too short
        assert!(rule.update(&s, &Point::Real(1.0)).is_err()); // not a vector
    }

    #[test]
    fn checkpointed_stream_resumes_bit_exactly() {
        let mut rng = RandomSource::new(66);
        let pairs: Vec<(Vec<f64>, u8)> = (0..200)
            .map(|_| {
                let x = vec![rng.uniform() * 2.0 - 1.0, rng.uniform() * 2.0 - 1.0];
                let y = u8::from(rng.bernoulli(0.6));
                (x, y)
            })
            .collect();
        let mut one_pass = OgdState::zeros(2).unwrap();
        for (x, y) in &pairs {
            ogd_update(&mut one_pass, x, *y).unwrap();
        }
        let mut first_half = OgdState::zeros(2).unwrap();
        for (x, y) in &pairs[..100] {
            ogd_update(&mut first_half, x, *y).unwrap();
        }
        let json = serde_json::to_string(&first_half).unwrap();
        let mut resumed: OgdState = serde_json::from_str(&json).unwrap();
        for (x, y) in &pairs[100..] {
            ogd_update(&mut resumed, x, *y).unwrap();
        }
        assert_eq!(one_pass, resumed);
        assert_eq!(ogd_vn(&one_pass).unwrap(), ogd_vn(&resumed).unwrap());
    }

    #[test]
    fn covariate_magnitude_is_tracked_for_boundedness_warnings() {
        let mut s = OgdState::zeros(1).unwrap();
        ogd_update(&mut s, &[0.5], 1).unwrap();
        ogd_update(&mut s, &[-3.0], 0).unwrap();
        assert_eq!(s.max_covariate(), 3.0);
    }
}
