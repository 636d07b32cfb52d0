//! Newton's recursive estimate of a mixing distribution.
//!
//! The mixing distribution lives on a fixed finite grid of parameter
//! values. Each observation `x` produces the one-step Bayes posterior of
//! the grid weights, and the estimate moves a step of size `a_n` toward it:
//! `G_n = (1 - a_n) G_{n-1} + a_n G_{n-1}(. | x_n)`, by default
//! `a_n = 1 / (alpha + n)`. The induced predictive density
//! `f_n(x) = sum_i k(x | theta_i) G_n(theta_i)` is a martingale in `n`
//! (the sequence is conditionally identically distributed) but not
//! exchangeable.

use crate::engine::PredictiveRule;
use crate::error::{Error, Result};
use crate::measure::{AtomicMixture, BaseMeasure, DiscreteDistribution, Predictive};
use crate::point::{Point, SpaceKind};
use crate::random::RandomSource;

/// Mixture component density `k(x | theta)`.
#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MixKernel {
    /// `k(1 | theta) = theta` on labels {0, 1}; grid values must lie in [0,1].
    Bernoulli,
    /// `x | theta ~ Normal(theta, sd)` on the real line.
    Gaussian { sd: f64 },
}

impl MixKernel {
    pub fn name(&self) -> String {
        match self {
            MixKernel::Bernoulli => "bernoulli".into(),
            MixKernel::Gaussian { sd } => format!("gaussian(sd={sd})"),
        }
    }

    fn validate_theta(&self, theta: f64) -> Result<()> {
        if !theta.is_finite() {
            return Err(Error::Config(format!("non-finite grid point {theta}")));
        }
        if matches!(self, MixKernel::Bernoulli) && !(0.0..=1.0).contains(&theta) {
            return Err(Error::Config(format!(
                "Bernoulli kernel needs grid points in [0,1], got {theta}"
            )));
        }
        Ok(())
    }

    /// `ln k(x | theta)`; negative infinity encodes a zero density.
    pub fn log_density(&self, x: &Point, theta: f64) -> Result<f64> {
        match self {
            MixKernel::Bernoulli => {
                let p = match x.as_label() {
                    Some(1) => theta,
                    Some(0) => 1.0 - theta,
                    _ => {
                        return Err(Error::Domain(format!(
                            "Bernoulli kernel evaluated at {}, expects labels 0 or 1",
                            x.describe()
                        )))
                    }
                };
                Ok(p.ln())
            }
            MixKernel::Gaussian { sd } => {
                let x = x.as_real().ok_or_else(|| {
                    Error::Domain(format!(
                        "Gaussian kernel evaluated at {}, expects a real value",
                        x.describe()
                    ))
                })?;
                let z = (x - theta) / sd;
                Ok(-0.5 * z * z - sd.ln() - 0.5 * (2.0 * std::f64::consts::PI).ln())
            }
        }
    }

    pub fn sample(&self, theta: f64, rng: &mut RandomSource) -> Result<Point> {
        match self {
            MixKernel::Bernoulli => Ok(Point::Label(u32::from(rng.bernoulli(theta)))),
            MixKernel::Gaussian { sd } => Ok(Point::Real(rng.normal(theta, *sd)?)),
        }
    }

    /// The sample space when it is finite.
    pub fn finite_support(&self) -> Option<Vec<Point>> {
        match self {
            MixKernel::Bernoulli => Some(vec![Point::Label(0), Point::Label(1)]),
            MixKernel::Gaussian { .. } => None,
        }
    }

    pub fn space(&self) -> SpaceKind {
        match self {
            MixKernel::Bernoulli => SpaceKind::Categorical { size: 2 },
            MixKernel::Gaussian { .. } => SpaceKind::RealLine,
        }
    }
}

/// The recursive mixing-distribution estimate: grid values, their current
/// probabilities, the component kernel, and the weight-schedule parameter.
#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct MixingGrid {
    thetas: Vec<f64>,
    probs: Vec<f64>,
    kernel: MixKernel,
    alpha: f64,
    n: usize,
}

impl MixingGrid {
    pub fn new(thetas: Vec<f64>, probs: Vec<f64>, kernel: MixKernel, alpha: f64) -> Result<Self> {
        if thetas.is_empty() {
            return Err(Error::Config("mixing grid needs at least one point".into()));
        }
        if thetas.len() != probs.len() {
            return Err(Error::Config(format!(
                "{} grid points but {} probabilities",
                thetas.len(),
                probs.len()
            )));
        }
        for &t in &thetas {
            kernel.validate_theta(t)?;
        }
        let mut sum = 0.0;
        for &p in &probs {
            if !p.is_finite() || p < 0.0 {
                return Err(Error::Config(format!("grid probability {p} is not in [0,1]")));
            }
            sum += p;
        }
        if (sum - 1.0).abs() > crate::measure::MASS_TOL {
            return Err(Error::Config(format!("grid probabilities sum to {sum}, not 1")));
        }
        if !alpha.is_finite() || alpha <= 0.0 {
            return Err(Error::Config(format!(
                "weight-schedule parameter must be positive, got {alpha}"
            )));
        }
        Ok(MixingGrid { thetas, probs, kernel, alpha, n: 0 })
    }

    /// Uniform initial estimate on the given grid points.
    pub fn uniform(thetas: Vec<f64>, kernel: MixKernel, alpha: f64) -> Result<Self> {
        let k = thetas.len();
        if k == 0 {
            return Err(Error::Config("mixing grid needs at least one point".into()));
        }
        let p = 1.0 / k as f64;
        Self::new(thetas, vec![p; k], kernel, alpha)
    }

    pub fn thetas(&self) -> &[f64] {
        &self.thetas
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn kernel(&self) -> &MixKernel {
        &self.kernel
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// The step size the next observation will get: `1 / (alpha + n + 1)`.
    pub fn next_weight(&self) -> f64 {
        1.0 / (self.alpha + (self.n + 1) as f64)
    }

    /// Mean of the current estimate.
    pub fn mean(&self) -> f64 {
        self.thetas.iter().zip(self.probs.iter()).map(|(t, p)| t * p).sum()
    }

    /// Variance of the current estimate.
    pub fn variance(&self) -> f64 {
        let m = self.mean();
        self.thetas
            .iter()
            .zip(self.probs.iter())
            .map(|(t, p)| (t - m) * (t - m) * p)
            .sum()
    }

    /// One-step Bayes posterior of the grid weights given `x`, computed in
    /// log space with max subtraction.
    pub fn posterior_given(&self, x: &Point) -> Result<Vec<f64>> {
        let mut log_w = Vec::with_capacity(self.thetas.len());
        let mut max = f64::NEG_INFINITY;
        for (&t, &p) in self.thetas.iter().zip(self.probs.iter()) {
            let lw = if p > 0.0 {
                self.kernel.log_density(x, t)? + p.ln()
            } else {
                f64::NEG_INFINITY
            };
            max = max.max(lw);
            log_w.push(lw);
        }
        if max == f64::NEG_INFINITY {
            return Err(Error::NullConditioning(format!(
                "predictive density vanishes at {}",
                x.describe()
            )));
        }
        let mut total = 0.0;
        let mut weights: Vec<f64> = log_w
            .iter()
            .map(|&lw| {
                let w = (lw - max).exp();
                total += w;
                w
            })
            .collect();
        for w in &mut weights {
            *w /= total;
        }
        Ok(weights)
    }

    /// Predictive density `f(x) = sum_i k(x | theta_i) G(theta_i)`.
    pub fn density(&self, x: &Point) -> Result<f64> {
        let mut f = 0.0;
        for (&t, &p) in self.thetas.iter().zip(self.probs.iter()) {
            if p > 0.0 {
                f += self.kernel.log_density(x, t)?.exp() * p;
            }
        }
        Ok(f)
    }
}

/// One recursion step with the default weight `1 / (alpha + n + 1)`.
pub fn newton_update(g: &MixingGrid, x: &Point) -> Result<MixingGrid> {
    newton_update_weighted(g, x, g.next_weight())
}

/// One recursion step with an explicit weight in [0, 1]; the observation
/// count still advances. Weight 0 leaves the estimate unchanged, weight 1
/// jumps to the one-step Bayes posterior.
pub fn newton_update_weighted(g: &MixingGrid, x: &Point, weight: f64) -> Result<MixingGrid> {
    if !(0.0..=1.0).contains(&weight) {
        return Err(Error::Config(format!("recursion weight must lie in [0,1], got {weight}")));
    }
    let posterior = g.posterior_given(x)?;
    let mut next = g.clone();
    for (p, post) in next.probs.iter_mut().zip(posterior.iter()) {
        *p = (1.0 - weight) * *p + weight * post;
    }
    next.n += 1;
    Ok(next)
}

/// The predictive distribution induced by the current estimate: a mixture
/// of the kernel over the grid. Finite for the Bernoulli kernel, a Gaussian
/// mixture for the Gaussian kernel.
pub fn newton_predict(g: &MixingGrid) -> Result<Predictive> {
    match g.kernel {
        MixKernel::Bernoulli => {
            let f1: f64 = g.thetas.iter().zip(g.probs.iter()).map(|(t, p)| t * p).sum();
            let f0: f64 =
                g.thetas.iter().zip(g.probs.iter()).map(|(t, p)| (1.0 - t) * p).sum();
            Ok(Predictive::Finite(DiscreteDistribution::new(
                vec![Point::Label(0), Point::Label(1)],
                vec![f0, f1],
            )?))
        }
        MixKernel::Gaussian { sd } => {
            let base = BaseMeasure::GaussianMixture {
                means: g.thetas.clone(),
                sd,
                weights: g.probs.clone(),
            };
            Ok(Predictive::Mixture(AtomicMixture::from_base(base)?))
        }
    }
}

/// The recursion as a predictive rule; the summary is the grid itself.
#[derive(Clone, Debug)]
pub struct NewtonRule {
    initial: MixingGrid,
}

impl NewtonRule {
    pub fn new(initial: MixingGrid) -> Self {
        NewtonRule { initial }
    }

    pub fn initial_grid(&self) -> &MixingGrid {
        &self.initial
    }
}

impl PredictiveRule for NewtonRule {
    type Summary = MixingGrid;

    fn name(&self) -> String {
        format!("newton[{}]", self.initial.kernel.name())
    }

    fn space(&self) -> SpaceKind {
        self.initial.kernel.space()
    }

    fn initial_summary(&self) -> Self::Summary {
        self.initial.clone()
    }

    fn update(&self, summary: &Self::Summary, x: &Point) -> Result<Self::Summary> {
        newton_update(summary, x)
    }

    fn predict(&self, summary: &Self::Summary) -> Result<Predictive> {
        newton_predict(summary)
    }

    fn sample_next(&self, summary: &Self::Summary, rng: &mut RandomSource) -> Result<Point> {
        // Draw theta from the estimate, then x from the kernel.
        let r = rng.uniform();
        let mut cum = 0.0;
        let mut chosen = *summary.thetas.last().expect("nonempty grid");
        for (&t, &p) in summary.thetas.iter().zip(summary.probs.iter()) {
            cum += p;
            if r < cum {
                chosen = t;
                break;
            }
        }
        summary.kernel.sample(chosen, rng)
    }
}

// ---------------------------------------------------------------------------
// Tests
// ---------------------------------------------------------------------------

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::{initial_state, joint_prob, step};

    const TOL: f64 = 1e-12;

    fn assert_close(a: f64, b: f64, tol: f64) {
        assert!((a - b).abs() <= tol, "{a} vs {b} (tol {tol:e})");
    }

    fn two_point_grid() -> MixingGrid {
        MixingGrid::uniform(vec![0.2, 0.8], MixKernel::Bernoulli, 1.0).unwrap()
    }

    fn lab(v: u32) -> Point {
        Point::Label(v)
    }

    // ---------- update arithmetic ----------

    #[test]
    fn zero_weight_leaves_the_estimate_unchanged() {
        let g = two_point_grid();
        let g1 = newton_update_weighted(&g, &lab(1), 0.0).unwrap();
        assert_eq!(g1.probs(), g.probs());
        assert_eq!(g1.n(), 1);
    }

    #[test]
    fn unit_weight_jumps_to_the_bayes_posterior() {
        let g = two_point_grid();
        let g1 = newton_update_weighted(&g, &lab(1), 1.0).unwrap();
        assert_eq!(g1.probs(), g.posterior_given(&lab(1)).unwrap().as_slice());
    }

    #[test]
    fn worked_two_point_update() {
        // Uniform start on {0.2, 0.8}, observe 1 with default alpha = 1, so
        // the first step size is 1/2. Posterior: (0.1, 0.4)/0.5 = (0.2, 0.8);
        // estimate: 0.5*(0.5, 0.5) + 0.5*(0.2, 0.8) = (0.35, 0.65).
        let g = two_point_grid();
        assert_close(g.next_weight(), 0.5, TOL);
        let posterior = g.posterior_given(&lab(1)).unwrap();
        assert_close(posterior[0], 0.2, TOL);
        assert_close(posterior[1], 0.8, TOL);
        let g1 = newton_update(&g, &lab(1)).unwrap();
        assert_close(g1.probs()[0], 0.35, TOL);
        assert_close(g1.probs()[1], 0.65, TOL);
    }

    #[test]
    fn step_sizes_follow_the_default_schedule() {
        let mut g = two_point_grid();
        for n in 1..=20usize {
            assert_close(g.next_weight(), 1.0 / (1.0 + n as f64), TOL);
            g = newton_update(&g, &lab((n % 2) as u32)).unwrap();
        }
    }

    #[test]
    fn impossible_observations_raise_null_conditioning() {
        // All mass on theta = 1 makes x = 0 impossible.
        let g = MixingGrid::new(vec![1.0], vec![1.0], MixKernel::Bernoulli, 1.0).unwrap();
        let err = newton_update(&g, &lab(0));
        match err {
            Err(Error::NullConditioning(msg)) => {
                assert!(msg.contains(&lab(0).describe()), "{msg}")
            }
            other => panic!("expected null-conditioning, got {other:?}"),
        }
    }

    #[test]
    fn grid_validation_rejects_bad_configurations() {
        assert!(MixingGrid::uniform(vec![], MixKernel::Bernoulli, 1.0).is_err());
        assert!(MixingGrid::uniform(vec![1.2], MixKernel::Bernoulli, 1.0).is_err());
        assert!(MixingGrid::new(vec![0.5], vec![0.9], MixKernel::Bernoulli, 1.0).is_err());
        assert!(MixingGrid::uniform(vec![0.5], MixKernel::Bernoulli, 0.0).is_err());
        // A Gaussian kernel accepts any finite grid point.
        assert!(MixingGrid::uniform(vec![-3.0, 4.5], MixKernel::Gaussian { sd: 1.0 }, 1.0).is_ok());
    }

    // ---------- predictive ----------

    #[test]
    fn single_atom_grid_predicts_the_kernel_itself() {
        let g = MixingGrid::new(vec![0.3], vec![1.0], MixKernel::Bernoulli, 1.0).unwrap();
        let p = newton_predict(&g).unwrap();
        assert_close(p.point_mass(&lab(1)), 0.3, TOL);
        assert_close(p.point_mass(&lab(0)), 0.7, TOL);
    }

    #[test]
    fn uniform_two_point_grid_predicts_one_half() {
        let p = newton_predict(&two_point_grid()).unwrap();
        assert_close(p.point_mass(&lab(1)), 0.5, TOL);
    }

    #[test]
    fn predictive_mass_stays_normalized_along_a_long_chain() {
        let rule = NewtonRule::new(two_point_grid());
        let mut rng = crate::random::RandomSource::new(21);
        let mut state = initial_state(&rule);
        for _ in 0..500 {
            let x = rule.sample_next(&state.summary, &mut rng).unwrap();
            step(&rule, &mut state, &x).unwrap();
            let p = newton_predict(&state.summary).unwrap();
            let total = p.point_mass(&lab(0)) + p.point_mass(&lab(1));
            assert_close(total, 1.0, TOL);
            let grid_mass: f64 = state.summary.probs().iter().sum();
            assert_close(grid_mass, 1.0, TOL);
        }
    }

    #[test]
    fn gaussian_kernel_gives_a_mixture_predictive() {
        let g = MixingGrid::uniform(vec![-1.0, 1.0], MixKernel::Gaussian { sd: 0.5 }, 1.0).unwrap();
        let p = newton_predict(&g).unwrap();
        // CDF at 0 is exactly 1/2 by symmetry.
        assert_close(p.eval_cdf(0.0).unwrap(), 0.5, 1e-9);
        // Sampling means average the grid.
        let rule = NewtonRule::new(g);
        let mut rng = crate::random::RandomSource::new(33);
        let state = initial_state(&rule);
        let reps = 20_000usize;
        let mut total = 0.0;
        for _ in 0..reps {
            match rule.sample_next(&state.summary, &mut rng).unwrap() {
                Point::Real(v) => total += v,
                other => panic!("unexpected sample {other:?}"),
            }
        }
        let mean = total / reps as f64;
        // Var = mixture variance = 1 + 0.25; 3 sigma band.
        let band = 3.0 * (1.25f64 / reps as f64).sqrt();
        assert!(mean.abs() <= band, "mean {mean}, band {band}");
    }

    #[test]
    fn concentrated_kernels_survive_log_space_updates() {
        // sd = 0.01 with an observation far from both grid points would
        // underflow in linear space; max subtraction keeps the posterior
        // normalized.
        let g = MixingGrid::uniform(vec![0.0, 10.0], MixKernel::Gaussian { sd: 0.01 }, 1.0).unwrap();
        let post = g.posterior_given(&Point::Real(4.0)).unwrap();
        assert!(post.iter().all(|p| p.is_finite()));
        assert_close(post.iter().sum::<f64>(), 1.0, TOL);
        // Closer to 0 than to 10, overwhelmingly.
        assert!(post[0] > 0.999999);
    }

    // ---------- the c.i.d. martingale ----------

    #[test]
    fn predictive_is_an_exact_martingale_on_the_binary_space() {
        // sum_x f_n(x) f_{n+1}^{(x)}(y) = f_n(y) for every y, along a chain.
        let rule = NewtonRule::new(two_point_grid());
        let mut rng = crate::random::RandomSource::new(40);
        let mut state = initial_state(&rule);
        for _ in 0..50 {
            let now = newton_predict(&state.summary).unwrap();
            for y in [lab(0), lab(1)] {
                let mut expected = 0.0;
                for x in [lab(0), lab(1)] {
                    let next = newton_update(&state.summary, &x).unwrap();
                    expected +=
                        now.point_mass(&x) * newton_predict(&next).unwrap().point_mass(&y);
                }
                assert_close(expected, now.point_mass(&y), TOL);
            }
            let x = rule.sample_next(&state.summary, &mut rng).unwrap();
            step(&rule, &mut state, &x).unwrap();
        }
    }

    #[test]
    fn data_order_changes_the_estimate() {
        // The rule is c.i.d. but not exchangeable: a permutation of the data
        // must move G_n by a visible margin somewhere.
        let g = MixingGrid::new(vec![0.3, 0.9], vec![0.7, 0.3], MixKernel::Bernoulli, 1.0).unwrap();
        let data = [lab(1), lab(0), lab(1)];
        let swapped = [lab(0), lab(1), lab(1)];
        let run = |seq: &[Point]| {
            let mut grid = g.clone();
            for x in seq {
                grid = newton_update(&grid, x).unwrap();
            }
            grid.probs().to_vec()
        };
        let a = run(&data);
        let b = run(&swapped);
        let diff = a
            .iter()
            .zip(b.iter())
            .map(|(x, y)| (x - y).abs())
            .fold(0.0f64, f64::max);
        assert!(diff > 1e-6, "permuted runs differ by only {diff}");
    }

    #[test]
    fn joint_probabilities_witness_non_exchangeability_at_length_three() {
        let rule = NewtonRule::new(
            MixingGrid::new(vec![0.3, 0.9], vec![0.7, 0.3], MixKernel::Bernoulli, 1.0).unwrap(),
        );
        let p_a = joint_prob(&rule, &[lab(1), lab(0), lab(1)]).unwrap();
        let p_b = joint_prob(&rule, &[lab(0), lab(1), lab(1)]).unwrap();
        assert!(
            (p_a - p_b).abs() > 1e-6,
            "length-3 permutations coincide: {p_a} vs {p_b}"
        );
    }

    #[test]
    fn length_two_sequences_are_still_order_free() {
        // A two-term chain cannot expose the asymmetry: p(a,b) = p(b,a)
        // algebraically for this rule.
        let rule = NewtonRule::new(
            MixingGrid::new(vec![0.3, 0.9], vec![0.7, 0.3], MixKernel::Bernoulli, 1.0).unwrap(),
        );
        let p_10 = joint_prob(&rule, &[lab(1), lab(0)]).unwrap();
        let p_01 = joint_prob(&rule, &[lab(0), lab(1)]).unwrap();
        assert_close(p_10, p_01, TOL);
    }

    #[test]
    fn joint_probabilities_normalize_over_length_three() {
        let rule = NewtonRule::new(two_point_grid());
        let mut total = 0.0;
        for code in 0..8u32 {
            let seq: Vec<Point> = (0..3).map(|i| lab((code >> i) & 1)).collect();
            total += joint_prob(&rule, &seq).unwrap();
        }
        assert_close(total, 1.0, TOL);
    }

    #[test]
    fn grid_state_round_trips_through_json() {
        let mut g = two_point_grid();
        g = newton_update(&g, &lab(1)).unwrap();
        g = newton_update(&g, &lab(0)).unwrap();
        let json = serde_json::to_string(&g).unwrap();
        let back: MixingGrid = serde_json::from_str(&json).unwrap();
        assert_eq!(g, back);
    }
}
