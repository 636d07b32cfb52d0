//! Predictive-update asymptotics.
//!
//! Tracking the one-step updates `D_n = P_n - P_{n-1}` of a predictive rule
//! on a fixed evaluation grid yields the covariance estimator
//! `V_n = (1/n) * sum_{m<=n} m^2 D_m D_m^T`, which calibrates Gaussian
//! approximations `N(P_n, V_n / n)` for the random limit of the chain and
//! the marginal credible intervals built from its diagonal.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::measure::{BaseMeasure, EvalGrid};
use crate::point::Point;

/// Eigenvalues below this floor are treated as zero when inverting or
/// whitening a covariance estimate, so near-null directions cannot blow up.
pub const EIGEN_FLOOR: f64 = 1e-14;

// ---------------------------------------------------------------------------
// The accumulator
// ---------------------------------------------------------------------------

/// Running scaled-update covariance on a fixed grid: after `n` recorded
/// predictive vectors the accumulator holds `sum_{m<=n} m^2 D_m D_m^T`
/// together with the latest predictive values.
///
/// Serializes losslessly; resuming a deserialized accumulator reproduces the
/// one-pass result bit for bit.
#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct UpdateAccumulator {
    n: usize,
    dim: usize,
    prev: Vec<f64>,
    /// Row-major `dim x dim` running sum.
    sum: Vec<f64>,
    /// Whether the tracked values are probabilities (intervals clip to [0,1]).
    bounded01: bool,
}

impl UpdateAccumulator {
    /// Start from the predictive values before any data (the prior values on
    /// the grid).
    pub fn new(initial: Vec<f64>, bounded01: bool) -> Result<Self> {
        if initial.is_empty() {
            return Err(Error::Config("accumulator needs a nonempty grid".into()));
        }
        if initial.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("non-finite initial predictive values".into()));
        }
        let dim = initial.len();
        Ok(UpdateAccumulator { n: 0, dim, prev: initial, sum: vec![0.0; dim * dim], bounded01 })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn bounded01(&self) -> bool {
        self.bounded01
    }

    /// Latest recorded predictive values.
    pub fn current(&self) -> &[f64] {
        &self.prev
    }

    /// Record the predictive values after one more observation; the update
    /// against the stored previous values enters the running sum with weight
    /// `(n+1)^2`.
    pub fn record_update(&mut self, values: &[f64]) -> Result<()> {
        if values.len() != self.dim {
            return Err(Error::Config(format!(
                "predictive vector has length {} on a grid of size {}",
                values.len(),
                self.dim
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!(
                "non-finite predictive value at step {}",
                self.n + 1
            )));
        }
        let m = (self.n + 1) as f64;
        let m2 = m * m;
        let delta: Vec<f64> = values.iter().zip(self.prev.iter()).map(|(a, b)| a - b).collect();
        for i in 0..self.dim {
            let w = m2 * delta[i];
            for j in 0..self.dim {
                self.sum[i * self.dim + j] += w * delta[j];
            }
        }
        self.prev.copy_from_slice(values);
        self.n += 1;
        Ok(())
    }

    /// The covariance estimate `V_n`: running sum over `n`, symmetrized.
    pub fn vn(&self) -> Result<Vec<f64>> {
        if self.n == 0 {
            return Err(Error::Domain("covariance of zero recorded updates".into()));
        }
        let n = self.n as f64;
        let d = self.dim;
        let mut v = vec![0.0; d * d];
        for i in 0..d {
            for j in 0..d {
                v[i * d + j] = (self.sum[i * d + j] + self.sum[j * d + i]) / (2.0 * n);
            }
        }
        Ok(v)
    }

    /// Pool with an accumulator from an independent replicate; the running
    /// sums add (in either order), the grid must match.
    pub fn merge(&mut self, other: &UpdateAccumulator) -> Result<()> {
        if other.dim != self.dim || other.bounded01 != self.bounded01 {
            return Err(Error::Config("cannot merge accumulators on different grids".into()));
        }
        for (a, b) in self.sum.iter_mut().zip(other.sum.iter()) {
            *a += *b;
        }
        self.n += other.n;
        self.prev.copy_from_slice(&other.prev);
        Ok(())
    }
}

/// Reject evaluation thresholds that the base measure hits with positive
/// probability: the normal asymptotics for distribution-function grids
/// require `P(X_1 = t) = 0` at every threshold, and for predictive rules
/// built over a base measure that is checkable only through the base's
/// atoms.
pub fn validate_grid_against_base(grid: &EvalGrid, base: &BaseMeasure) -> Result<()> {
    if let EvalGrid::Cdf(thresholds) = grid {
        for &t in thresholds {
            let mass = base.point_mass(&Point::Real(t));
            if mass > 0.0 {
                return Err(Error::Config(format!(
                    "grid point {t} carries base-measure mass {mass}; distribution-function \
                     asymptotics need atom-free thresholds"
                )));
            }
        }
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Intervals and Gaussian approximations
// ---------------------------------------------------------------------------

/// A marginal credible interval. `degenerate` flags a zero variance entry,
/// in which case the interval collapses to the center.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct CredibleInterval {
    pub lo: f64,
    pub hi: f64,
    pub degenerate: bool,
}

impl CredibleInterval {
    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }

    pub fn contains(&self, x: f64) -> bool {
        self.lo <= x && x <= self.hi
    }
}

/// Standard normal quantile at probability `p`.
pub fn normal_quantile(p: f64) -> Result<f64> {
    if !(0.0..1.0).contains(&p) || p == 0.0 {
        return Err(Error::Domain(format!("quantile probability must lie in (0,1), got {p}")));
    }
    use statrs::distribution::{ContinuousCDF, Normal};
    Ok(Normal::new(0.0, 1.0).expect("standard normal").inverse_cdf(p))
}

/// The marginal credible interval `center ± z_{(1+level)/2} sqrt(V[t,t]/n)`.
/// Clips to [0,1] when the accumulator tracks probabilities.
pub fn credible_interval(
    acc: &UpdateAccumulator,
    center: f64,
    t_index: usize,
    level: f64,
) -> Result<CredibleInterval> {
    if !(0.0 < level && level < 1.0) {
        return Err(Error::Domain(format!("credible level must lie in (0,1), got {level}")));
    }
    if t_index >= acc.dim() {
        return Err(Error::Config(format!(
            "grid index {t_index} on a grid of size {}",
            acc.dim()
        )));
    }
    let v = acc.vn()?[t_index * acc.dim() + t_index];
    if v <= 0.0 {
        return Ok(CredibleInterval { lo: center, hi: center, degenerate: true });
    }
    let z = normal_quantile(0.5 + level / 2.0)?;
    let half = z * (v / acc.n() as f64).sqrt();
    let (mut lo, mut hi) = (center - half, center + half);
    if acc.bounded01() {
        lo = lo.max(0.0);
        hi = hi.min(1.0);
    }
    Ok(CredibleInterval { lo, hi, degenerate: false })
}

/// A Gaussian approximation to the posterior of the chain's random limit on
/// the grid: mean `center`, covariance `V_n / n`.
#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct GaussianApprox {
    pub center: Vec<f64>,
    /// Row-major `dim x dim`.
    pub covariance: Vec<f64>,
    pub dim: usize,
    pub n: usize,
    /// True when the covariance needed eigenvalue flooring (singular or
    /// near-singular directions handled by pseudo-inverse).
    pub degenerate: bool,
}

/// Build the Gaussian approximation with covariance `vn / n`.
pub fn gaussian_posterior(acc: &UpdateAccumulator, center: &[f64]) -> Result<GaussianApprox> {
    if center.len() != acc.dim() {
        return Err(Error::Config(format!(
            "center has dimension {} on a grid of size {}",
            center.len(),
            acc.dim()
        )));
    }
    let n = acc.n() as f64;
    let covariance: Vec<f64> = acc.vn()?.iter().map(|v| v / n).collect();
    let (_, floored) = whitening(&covariance, acc.dim())?;
    Ok(GaussianApprox {
        center: center.to_vec(),
        covariance,
        dim: acc.dim(),
        n: acc.n(),
        degenerate: floored,
    })
}

impl GaussianApprox {
    /// Marginal credible interval for coordinate `i`, clipping left to the
    /// caller.
    pub fn marginal(&self, i: usize, level: f64) -> Result<CredibleInterval> {
        if i >= self.dim {
            return Err(Error::Config(format!("coordinate {i} of a {}-dim approximation", self.dim)));
        }
        if !(0.0 < level && level < 1.0) {
            return Err(Error::Domain(format!("credible level must lie in (0,1), got {level}")));
        }
        let v = self.covariance[i * self.dim + i];
        if v <= 0.0 {
            return Ok(CredibleInterval { lo: self.center[i], hi: self.center[i], degenerate: true });
        }
        let z = normal_quantile(0.5 + level / 2.0)?;
        let half = z * v.sqrt();
        Ok(CredibleInterval { lo: self.center[i] - half, hi: self.center[i] + half, degenerate: false })
    }

    /// The whitening transform `C^{-1/2}` (pseudo-inverse on floored
    /// directions) and whether flooring occurred.
    pub fn whitener(&self) -> Result<(Vec<f64>, bool)> {
        whitening(&self.covariance, self.dim)
    }
}

/// Inverse symmetric square root of a covariance matrix via symmetric
/// eigendecomposition. Eigenvalues below [`EIGEN_FLOOR`] contribute zero
/// (pseudo-inverse); the flag reports whether any were floored.
pub fn whitening(matrix: &[f64], dim: usize) -> Result<(Vec<f64>, bool)> {
    if matrix.len() != dim * dim {
        return Err(Error::Config(format!(
            "matrix of length {} is not {dim}x{dim}",
            matrix.len()
        )));
    }
    let m = DMatrix::from_row_slice(dim, dim, matrix);
    let eig = m.symmetric_eigen();
    let mut floored = false;
    let mut inv_sqrt = Vec::with_capacity(dim);
    for &l in eig.eigenvalues.iter() {
        if l < EIGEN_FLOOR {
            floored = true;
            inv_sqrt.push(0.0);
        } else {
            inv_sqrt.push(1.0 / l.sqrt());
        }
    }
    let q = eig.eigenvectors;
    let mut w = vec![0.0; dim * dim];
    for i in 0..dim {
        for j in 0..dim {
            let mut acc = 0.0;
            for (k, g) in inv_sqrt.iter().enumerate() {
                acc += q[(i, k)] * g * q[(j, k)];
            }
            w[i * dim + j] = acc;
        }
    }
    Ok((w, floored))
}

// ---------------------------------------------------------------------------
// Driving an accumulator from a rule
// ---------------------------------------------------------------------------

/// Condition a rule on `data` while recording its predictive values on
/// `grid` after every observation. Returns the accumulator and the final
/// state.
pub fn accumulate_predictives<R: crate::engine::PredictiveRule + ?Sized>(
    rule: &R,
    data: &[Point],
    grid: &EvalGrid,
) -> Result<(UpdateAccumulator, crate::engine::RuleState<R::Summary>)> {
    grid.validate()?;
    let mut state = crate::engine::initial_state(rule);
    let initial = rule.predict(&state.summary)?.eval_on_grid(grid)?;
    let mut acc = UpdateAccumulator::new(initial, grid.bounded_unit())?;
    for (i, x) in data.iter().enumerate() {
        crate::engine::step(rule, &mut state, x)
            .map_err(|e| Error::Config(format!("observation {i}: {e}")))?;
        let values = rule.predict(&state.summary)?.eval_on_grid(grid)?;
        acc.record_update(&values)?;
    }
    Ok((acc, state))
}

// ---------------------------------------------------------------------------
// Tests
// ---------------------------------------------------------------------------

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::{initial_state, step, PredictiveRule};
    use crate::exchangeable::PolyaRule;
    use crate::measure::DiscreteDistribution;
    use crate::random::RandomSource;

    const TOL: f64 = 1e-12;

    fn assert_close(a: f64, b: f64, tol: f64) {
        assert!((a - b).abs() <= tol, "{a} vs {b} (tol {tol:e})");
    }

    fn binary_polya(alpha: f64, p_one: f64) -> PolyaRule {
        PolyaRule::new(
            alpha,
            BaseMeasure::Categorical(DiscreteDistribution::binary(p_one).unwrap()),
        )
        .unwrap()
    }

    // ---------- accumulator basics ----------

    #[test]
    fn identical_values_leave_the_sum_unchanged() {
        let mut acc = UpdateAccumulator::new(vec![0.25, 0.5], true).unwrap();
        acc.record_update(&[0.3, 0.6]).unwrap();
        let before = acc.vn().unwrap();
        acc.record_update(&[0.3, 0.6]).unwrap();
        // V halves (same sum over n=2) but the running sum is unchanged:
        let after = acc.vn().unwrap();
        for (a, b) in before.iter().zip(after.iter()) {
            assert_close(*a, 2.0 * *b, TOL);
        }
    }

    #[test]
    fn first_scalar_update_gives_delta_squared() {
        let mut acc = UpdateAccumulator::new(vec![0.5], true).unwrap();
        acc.record_update(&[0.75]).unwrap();
        let v = acc.vn().unwrap();
        assert_close(v[0], 0.25 * 0.25, TOL);
    }

    #[test]
    fn dimension_mismatch_is_a_configuration_error() {
        let mut acc = UpdateAccumulator::new(vec![0.5, 0.5], true).unwrap();
        assert!(matches!(acc.record_update(&[0.5]), Err(Error::Config(_))));
    }

    #[test]
    fn covariance_of_zero_updates_is_a_domain_error() {
        let acc = UpdateAccumulator::new(vec![0.5], true).unwrap();
        assert!(matches!(acc.vn(), Err(Error::Domain(_))));
    }

    #[test]
    fn polya_updates_match_the_closed_form() {
        // For the Polya rule, P_n({1}) - P_{n-1}({1}) must equal
        // (1{x_n = 1} - P_{n-1}({1})) / (alpha + n).
        let alpha = 1.5;
        let rule = binary_polya(alpha, 0.4);
        let mut rng = RandomSource::new(77);
        let mut state = initial_state(&rule);
        let one = Point::Label(1);
        for n in 1..=100usize {
            let before = rule.predict(&state.summary).unwrap().point_mass(&one);
            let x = rule.sample_next(&state.summary, &mut rng).unwrap();
            step(&rule, &mut state, &x).unwrap();
            let after = rule.predict(&state.summary).unwrap().point_mass(&one);
            let indicator = if x == one { 1.0 } else { 0.0 };
            let expected = (indicator - before) / (alpha + n as f64);
            assert_close(after - before, expected, TOL);
        }
    }

    #[test]
    fn scaled_polya_updates_stay_bounded() {
        // |n * D_n| <= 2 for alpha <= 1 on a probability grid.
        let rule = binary_polya(0.8, 0.3);
        let mut rng = RandomSource::new(78);
        let mut state = initial_state(&rule);
        let one = Point::Label(1);
        let mut prev = rule.predict(&state.summary).unwrap().point_mass(&one);
        for n in 1..=2000usize {
            let x = rule.sample_next(&state.summary, &mut rng).unwrap();
            step(&rule, &mut state, &x).unwrap();
            let cur = rule.predict(&state.summary).unwrap().point_mass(&one);
            assert!((n as f64 * (cur - prev)).abs() <= 2.0);
            prev = cur;
        }
    }

    #[test]
    fn constant_rule_accumulates_the_zero_matrix() {
        use crate::engine::IidRule;
        use crate::measure::Predictive;
        let rule = IidRule::new(
            Predictive::Finite(DiscreteDistribution::binary(0.3).unwrap()),
            crate::point::SpaceKind::Categorical { size: 2 },
        )
        .unwrap();
        let grid = EvalGrid::Mass(vec![Point::Label(1)]);
        let mut rng = RandomSource::new(5);
        let data: Vec<Point> = (0..50)
            .map(|_| rule.sample_next(&(), &mut rng).unwrap())
            .collect();
        let (acc, _) = accumulate_predictives(&rule, &data, &grid).unwrap();
        assert_eq!(acc.vn().unwrap(), vec![0.0]);
    }

    // ---------- V_n shape ----------

    #[test]
    fn vn_is_exactly_symmetric_and_psd() {
        let rule = PolyaRule::new(
            1.0,
            BaseMeasure::Categorical(
                DiscreteDistribution::uniform(vec![
                    Point::Label(0),
                    Point::Label(1),
                    Point::Label(2),
                ])
                .unwrap(),
            ),
        )
        .unwrap();
        let grid = EvalGrid::Mass(vec![Point::Label(0), Point::Label(1), Point::Label(2)]);
        let mut rng = RandomSource::new(9);
        let mut state = initial_state(&rule);
        let mut data = Vec::new();
        for _ in 0..200 {
            let x = rule.sample_next(&state.summary, &mut rng).unwrap();
            step(&rule, &mut state, &x).unwrap();
            data.push(x);
        }
        let (acc, _) = accumulate_predictives(&rule, &data, &grid).unwrap();
        let v = acc.vn().unwrap();
        let d = acc.dim();
        for i in 0..d {
            for j in 0..d {
                assert_eq!(v[i * d + j], v[j * d + i]);
            }
        }
        let eig = DMatrix::from_row_slice(d, d, &v).symmetric_eigen();
        for &l in eig.eigenvalues.iter() {
            assert!(l >= -1e-12, "negative eigenvalue {l}");
        }
    }

    #[test]
    fn checkpointed_accumulation_is_bit_identical() {
        let rule = binary_polya(2.0, 0.5);
        let grid = EvalGrid::Mass(vec![Point::Label(1)]);
        let mut rng = RandomSource::new(10);
        let mut state = initial_state(&rule);
        let mut data = Vec::new();
        for _ in 0..120 {
            let x = rule.sample_next(&state.summary, &mut rng).unwrap();
            step(&rule, &mut state, &x).unwrap();
            data.push(x);
        }
        let (one_pass, _) = accumulate_predictives(&rule, &data, &grid).unwrap();

        // Two-pass: accumulate 60, serialize, deserialize, continue.
        let (mut partial, mut mid_state) =
            accumulate_predictives(&rule, &data[..60], &grid).unwrap();
        let json = serde_json::to_string(&partial).unwrap();
        partial = serde_json::from_str(&json).unwrap();
        for x in &data[60..] {
            step(&rule, &mut mid_state, x).unwrap();
            let values = rule
                .predict(&mid_state.summary)
                .unwrap()
                .eval_on_grid(&grid)
                .unwrap();
            partial.record_update(&values).unwrap();
        }
        assert_eq!(one_pass, partial);
    }

    #[test]
    fn merged_accumulators_commute() {
        let mut a = UpdateAccumulator::new(vec![0.5], true).unwrap();
        let mut b = UpdateAccumulator::new(vec![0.5], true).unwrap();
        a.record_update(&[0.7]).unwrap();
        a.record_update(&[0.6]).unwrap();
        b.record_update(&[0.4]).unwrap();
        let mut ab = a.clone();
        ab.merge(&b).unwrap();
        let mut ba = b.clone();
        ba.merge(&a).unwrap();
        assert_eq!(ab.vn().unwrap(), ba.vn().unwrap());
        assert_eq!(ab.n(), 3);
    }

    // ---------- intervals ----------

    #[test]
    fn zero_variance_collapses_to_the_center() {
        let mut acc = UpdateAccumulator::new(vec![0.5, 0.2], true).unwrap();
        acc.record_update(&[0.6, 0.2]).unwrap(); // second coordinate never moves
        let ci = credible_interval(&acc, 0.2, 1, 0.9).unwrap();
        assert!(ci.degenerate);
        assert_eq!((ci.lo, ci.hi), (0.2, 0.2));
    }

    #[test]
    fn width_diverges_as_the_level_approaches_one() {
        let mut acc = UpdateAccumulator::new(vec![0.0], false).unwrap();
        acc.record_update(&[1.0]).unwrap();
        let widths: Vec<f64> = [0.9, 0.99, 0.999, 1.0 - 1e-9, 1.0 - 1e-12]
            .iter()
            .map(|&l| credible_interval(&acc, 1.0, 0, l).unwrap().width())
            .collect();
        assert!(widths.windows(2).all(|w| w[1] > w[0]), "{widths:?}");
        assert!(widths[4] > 4.0 * widths[0], "{widths:?}");
    }

    #[test]
    fn probability_intervals_clip_to_the_unit_interval() {
        let mut acc = UpdateAccumulator::new(vec![0.5], true).unwrap();
        acc.record_update(&[0.9]).unwrap();
        let ci = credible_interval(&acc, 0.9, 0, 0.999999).unwrap();
        assert!(ci.lo >= 0.0 && ci.hi <= 1.0);
    }

    #[test]
    fn invalid_levels_are_domain_errors() {
        let mut acc = UpdateAccumulator::new(vec![0.5], true).unwrap();
        acc.record_update(&[0.6]).unwrap();
        for level in [0.0, 1.0, -0.5, 2.0] {
            assert!(matches!(
                credible_interval(&acc, 0.6, 0, level),
                Err(Error::Domain(_))
            ));
        }
    }

    #[test]
    fn quantile_matches_tabulated_values() {
        assert_close(normal_quantile(0.975).unwrap(), 1.959963984540054, 1e-9);
        assert_close(normal_quantile(0.95).unwrap(), 1.6448536269514722, 1e-9);
        assert_close(normal_quantile(0.5).unwrap(), 0.0, 1e-12);
    }

    // ---------- Gaussian approximation ----------

    #[test]
    fn scalar_gaussian_marginal_matches_credible_interval() {
        let mut acc = UpdateAccumulator::new(vec![0.5], false).unwrap();
        acc.record_update(&[0.62]).unwrap();
        acc.record_update(&[0.58]).unwrap();
        acc.record_update(&[0.61]).unwrap();
        let g = gaussian_posterior(&acc, &[0.61]).unwrap();
        let from_g = g.marginal(0, 0.9).unwrap();
        let direct = credible_interval(&acc, 0.61, 0, 0.9).unwrap();
        assert_close(from_g.lo, direct.lo, TOL);
        assert_close(from_g.hi, direct.hi, TOL);
    }

    #[test]
    fn whitening_inverts_a_diagonal_covariance() {
        let (w, floored) = whitening(&[4.0, 0.0, 0.0, 9.0], 2).unwrap();
        assert!(!floored);
        assert_close(w[0], 0.5, TOL);
        assert_close(w[3], 1.0 / 3.0, TOL);
        assert_close(w[1], 0.0, TOL);
    }

    #[test]
    fn singular_directions_are_floored_and_flagged() {
        let (w, floored) = whitening(&[1.0, 0.0, 0.0, 0.0], 2).unwrap();
        assert!(floored);
        assert_close(w[0], 1.0, TOL);
        assert_close(w[3], 0.0, TOL);
    }

    #[test]
    fn whitener_really_whitens() {
        // W C W = I on the non-floored subspace.
        let c = [2.0, 0.5, 0.5, 1.0];
        let (w, floored) = whitening(&c, 2).unwrap();
        assert!(!floored);
        let wm = DMatrix::from_row_slice(2, 2, &w);
        let cm = DMatrix::from_row_slice(2, 2, &c);
        let prod = &wm * cm * &wm;
        for i in 0..2 {
            for j in 0..2 {
                let expected = if i == j { 1.0 } else { 0.0 };
                assert_close(prod[(i, j)], expected, 1e-12);
            }
        }
    }

    #[test]
    fn gaussian_approximation_round_trips_through_json() {
        let mut acc = UpdateAccumulator::new(vec![0.3, 0.6], true).unwrap();
        acc.record_update(&[0.4, 0.55]).unwrap();
        acc.record_update(&[0.35, 0.6]).unwrap();
        let g = gaussian_posterior(&acc, &[0.35, 0.6]).unwrap();
        let json = serde_json::to_string(&g).unwrap();
        let back: GaussianApprox = serde_json::from_str(&json).unwrap();
        assert_eq!(g, back);
    }

    // ---------- grid validation ----------

    #[test]
    fn atom_free_thresholds_pass_validation() {
        let base = BaseMeasure::Uniform { lo: 0.0, hi: 1.0 };
        let grid = EvalGrid::Cdf(vec![0.25, 0.5, 0.75]);
        assert!(validate_grid_against_base(&grid, &base).is_ok());
    }

    #[test]
    fn thresholds_on_base_atoms_are_rejected() {
        let base = BaseMeasure::Categorical(
            DiscreteDistribution::new(
                vec![Point::Real(0.5), Point::Real(1.5)],
                vec![0.4, 0.6],
            )
            .unwrap(),
        );
        let ok = EvalGrid::Cdf(vec![0.25, 1.0]);
        assert!(validate_grid_against_base(&ok, &base).is_ok());
        let bad = EvalGrid::Cdf(vec![0.25, 0.5]);
        assert!(matches!(
            validate_grid_against_base(&bad, &base),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn accumulate_on_cdf_grid_tracks_a_real_line_polya() {
        let rule = PolyaRule::new(1.0, BaseMeasure::Uniform { lo: 0.0, hi: 1.0 }).unwrap();
        let grid = EvalGrid::Cdf(vec![0.3, 0.7]);
        validate_grid_against_base(&grid, &BaseMeasure::Uniform { lo: 0.0, hi: 1.0 }).unwrap();
        let mut rng = RandomSource::new(12);
        let mut state = initial_state(&rule);
        let mut data = Vec::new();
        for _ in 0..100 {
            let x = rule.sample_next(&state.summary, &mut rng).unwrap();
            step(&rule, &mut state, &x).unwrap();
            data.push(x);
        }
        let (acc, final_state) = accumulate_predictives(&rule, &data, &grid).unwrap();
        assert_eq!(acc.n(), 100);
        // Current values equal the final state's predictive on the grid.
        let direct = rule
            .predict(&final_state.summary)
            .unwrap()
            .eval_on_grid(&grid)
            .unwrap();
        assert_eq!(acc.current(), &direct[..]);
        // Both V entries positive: the chain moved.
        let v = acc.vn().unwrap();
        assert!(v[0] > 0.0 && v[3] > 0.0);
    }
}
