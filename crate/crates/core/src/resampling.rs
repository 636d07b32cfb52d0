//! Sampling from the future: posterior draws obtained by running a
//! predictive rule forward.
//!
//! Conditioning a rule on data and simulating the chain to a long horizon
//! produces one draw of the terminal predictive (or empirical) distribution;
//! repeating with independent streams produces a sample that approximates
//! the posterior law of the rule's limit distribution. No likelihood or
//! prior is materialized anywhere — the predictive recursion is the whole
//! model.
//!
//! Replicates are keyed by index into independent generator streams, so
//! results are a pure function of the plan's seed: the worker count only
//! changes wall-clock time, never a single bit of output.

use crate::engine::{condition, step, PredictiveRule, RuleState};
use crate::error::{Error, Result};
use crate::measure::EvalGrid;
use crate::point::Point;
use crate::random::RandomSource;

/// What to evaluate on the grid at the end of each simulated path.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TerminalEstimator {
    /// The rule's predictive distribution at the horizon.
    Predictive,
    /// The empirical distribution of everything observed by the horizon,
    /// conditioning data included.
    Empirical,
}

/// A forward-simulation design: how far to run, how many independent
/// replicates to draw, where to read the terminal distribution, and the
/// seed that makes the whole sample reproducible.
#[derive(Clone, Debug, serde::Serialize, serde::Deserialize)]
pub struct ResamplingPlan {
    pub horizon: usize,
    pub replicates: usize,
    pub grid: EvalGrid,
    pub estimator: TerminalEstimator,
    pub seed: u64,
    /// Threads to spread replicates over; purely a throughput knob.
    pub workers: usize,
}

impl ResamplingPlan {
    pub fn validate(&self) -> Result<()> {
        if self.replicates == 0 {
            return Err(Error::Config("need at least one replicate".into()));
        }
        if self.grid.len() == 0 {
            return Err(Error::Config("evaluation grid is empty".into()));
        }
        self.grid.validate()
    }

    fn effective_workers(&self) -> usize {
        self.workers.max(1).min(self.replicates)
    }
}

/// Provenance of a posterior sample.
#[derive(Clone, Debug, serde::Serialize, serde::Deserialize)]
pub struct SampleMeta {
    pub rule: String,
    pub horizon: usize,
    pub replicates: usize,
    pub seed: u64,
    pub estimator: TerminalEstimator,
    /// Number of conditioning observations.
    pub conditioning: usize,
    /// FNV-1a digest of the conditioning data.
    pub data_digest: u64,
    pub columns: Vec<String>,
}

/// Posterior draws: one row per replicate, one column per grid entry.
#[derive(Clone, Debug, serde::Serialize, serde::Deserialize)]
pub struct PosteriorSample {
    pub values: Vec<Vec<f64>>,
    pub meta: SampleMeta,
}

impl PosteriorSample {
    pub fn replicates(&self) -> usize {
        self.values.len()
    }

    pub fn width(&self) -> usize {
        self.values.first().map(Vec::len).unwrap_or(0)
    }

    pub fn column(&self, i: usize) -> Vec<f64> {
        self.values.iter().map(|row| row[i]).collect()
    }

    /// Column means.
    pub fn mean(&self) -> Vec<f64> {
        let r = self.replicates() as f64;
        (0..self.width())
            .map(|i| self.values.iter().map(|row| row[i]).sum::<f64>() / r)
            .collect()
    }

    /// Column sample standard deviations (zero for a single replicate).
    pub fn sd(&self) -> Vec<f64> {
        let r = self.replicates();
        if r < 2 {
            return vec![0.0; self.width()];
        }
        let means = self.mean();
        (0..self.width())
            .map(|i| {
                let ss: f64 = self
                    .values
                    .iter()
                    .map(|row| (row[i] - means[i]).powi(2))
                    .sum();
                (ss / (r - 1) as f64).sqrt()
            })
            .collect()
    }

    /// Monte Carlo standard errors of the column means.
    pub fn std_err(&self) -> Vec<f64> {
        let r = (self.replicates() as f64).sqrt();
        self.sd().iter().map(|s| s / r).collect()
    }
}

/// FNV-1a digest of the conditioning points, for provenance records.
pub fn data_digest(points: &[Point]) -> u64 {
    const OFFSET: u64 = 0xcbf29ce484222325;
    const PRIME: u64 = 0x100000001b3;
    let mut h = OFFSET;
    for p in points {
        let encoded = serde_json::to_string(p).expect("points serialize");
        for b in encoded.as_bytes() {
            h ^= u64::from(*b);
            h = h.wrapping_mul(PRIME);
        }
        h ^= u64::from(b'\n');
        h = h.wrapping_mul(PRIME);
    }
    h
}

/// Empirical distribution of `points` read on the grid.
fn empirical_on_grid(points: &[Point], grid: &EvalGrid) -> Result<Vec<f64>> {
    if points.is_empty() {
        return Err(Error::Domain(
            "empirical estimator needs at least one observation by the horizon".into(),
        ));
    }
    let n = points.len() as f64;
    match grid {
        EvalGrid::Cdf(ts) => {
            let mut values: Vec<f64> = Vec::with_capacity(points.len());
            for p in points {
                match p {
                    Point::Real(v) => values.push(*v),
                    other => {
                        return Err(Error::Unsupported(format!(
                            "empirical distribution function needs scalar observations, got {}",
                            other.describe()
                        )))
                    }
                }
            }
            Ok(ts
                .iter()
                .map(|t| values.iter().filter(|v| **v <= *t).count() as f64 / n)
                .collect())
        }
        EvalGrid::Mass(targets) => Ok(targets
            .iter()
            .map(|q| points.iter().filter(|p| *p == q).count() as f64 / n)
            .collect()),
    }
}

/// Run `replicates` independent jobs, each producing one row, spread over
/// `workers` threads. Rows depend only on their replicate index, so the
/// result is identical for every worker count.
pub fn run_replicates<F>(replicates: usize, workers: usize, job: F) -> Result<Vec<Vec<f64>>>
where
    F: Fn(u64) -> Result<Vec<f64>> + Sync,
{
    if workers <= 1 {
        return (0..replicates).map(|r| job(r as u64)).collect();
    }
    let chunk = replicates.div_ceil(workers);
    let mut out: Vec<Vec<Vec<f64>>> = Vec::with_capacity(workers);
    std::thread::scope(|scope| -> Result<()> {
        let mut handles = Vec::with_capacity(workers);
        let mut start = 0usize;
        while start < replicates {
            let end = (start + chunk).min(replicates);
            let job = &job;
            handles.push(scope.spawn(move || -> Result<Vec<Vec<f64>>> {
                (start..end).map(|r| job(r as u64)).collect()
            }));
            start = end;
        }
        for h in handles {
            let rows = h.join().map_err(|_| Error::Numeric("worker thread panicked".into()))??;
            out.push(rows);
        }
        Ok(())
    })?;
    Ok(out.into_iter().flatten().collect())
}

fn assemble_meta<R: PredictiveRule + ?Sized>(
    rule: &R,
    data: &[Point],
    plan: &ResamplingPlan,
) -> SampleMeta {
    SampleMeta {
        rule: rule.name(),
        horizon: plan.horizon,
        replicates: plan.replicates,
        seed: plan.seed,
        estimator: plan.estimator,
        conditioning: data.len(),
        data_digest: data_digest(data),
        columns: plan.grid.column_names(),
    }
}

/// Draw from the posterior of the rule's limit distribution given `data`:
/// condition, then run each replicate forward to the horizon on its own
/// generator stream and read the terminal estimator off the plan's grid.
pub fn sample_posterior<R>(
    rule: &R,
    data: &[Point],
    plan: &ResamplingPlan,
) -> Result<PosteriorSample>
where
    R: PredictiveRule + Sync + ?Sized,
    R::Summary: Send + Sync,
{
    plan.validate()?;
    if plan.horizon < data.len() {
        return Err(Error::Config(format!(
            "horizon {} is shorter than the {} conditioning observations",
            plan.horizon,
            data.len()
        )));
    }
    let base = condition(rule, data)?;
    let root = RandomSource::new(plan.seed);
    let future = plan.horizon - base.n;
    let estimator = plan.estimator;
    let grid = &plan.grid;

    let values = run_replicates(plan.replicates, plan.effective_workers(), |r| {
        let mut rng = root.branch(r);
        let mut state = base.clone();
        let mut observed: Vec<Point> = match estimator {
            TerminalEstimator::Empirical => {
                let mut v = Vec::with_capacity(plan.horizon);
                v.extend_from_slice(data);
                v
            }
            TerminalEstimator::Predictive => Vec::new(),
        };
        for _ in 0..future {
            let x = rule.sample_next(&state.summary, &mut rng)?;
            step(rule, &mut state, &x)?;
            if estimator == TerminalEstimator::Empirical {
                observed.push(x);
            }
        }
        match estimator {
            TerminalEstimator::Predictive => rule.predict(&state.summary)?.eval_on_grid(grid),
            TerminalEstimator::Empirical => empirical_on_grid(&observed, grid),
        }
    })?;
    Ok(PosteriorSample { values, meta: assemble_meta(rule, data, plan) })
}

/// Posterior draws with no conditioning data: the prior law of the limit.
pub fn sample_prior<R>(rule: &R, plan: &ResamplingPlan) -> Result<PosteriorSample>
where
    R: PredictiveRule + Sync + ?Sized,
    R::Summary: Send + Sync,
{
    sample_posterior(rule, &[], plan)
}

/// Posterior draws of an arbitrary functional of the terminal state rather
/// than a grid readout; the plan's grid and estimator are ignored. The
/// extractor must return the same number of values on every call.
pub fn functional_posterior<R, F>(
    rule: &R,
    data: &[Point],
    plan: &ResamplingPlan,
    extractor: F,
) -> Result<PosteriorSample>
where
    R: PredictiveRule + Sync + ?Sized,
    R::Summary: Send + Sync,
    F: Fn(&RuleState<R::Summary>) -> Result<Vec<f64>> + Sync,
{
    if plan.replicates == 0 {
        return Err(Error::Config("need at least one replicate".into()));
    }
    if plan.horizon < data.len() {
        return Err(Error::Config(format!(
            "horizon {} is shorter than the {} conditioning observations",
            plan.horizon,
            data.len()
        )));
    }
    let base = condition(rule, data)?;
    let root = RandomSource::new(plan.seed);
    let future = plan.horizon - base.n;

    let values = run_replicates(plan.replicates, plan.effective_workers(), |r| {
        let mut rng = root.branch(r);
        let mut state = base.clone();
        for _ in 0..future {
            let x = rule.sample_next(&state.summary, &mut rng)?;
            step(rule, &mut state, &x)?;
        }
        extractor(&state)
    })?;
    let width = values.first().map(Vec::len).unwrap_or(0);
    if values.iter().any(|row| row.len() != width) {
        return Err(Error::Numeric("extractor returned rows of unequal length".into()));
    }
    let mut meta = assemble_meta(rule, data, plan);
    meta.columns = (0..width).map(|i| format!("f{i}")).collect();
    Ok(PosteriorSample { values, meta })
}

/// Comparison of posterior means at the plan's horizon against a doubled
/// horizon with a derived seed: if the horizon is long enough, the two
/// means agree within Monte Carlo noise.
#[derive(Clone, Debug, serde::Serialize, serde::Deserialize)]
pub struct StabilityReport {
    pub horizon: usize,
    pub doubled_horizon: usize,
    pub mean_base: Vec<f64>,
    pub mean_doubled: Vec<f64>,
    pub se_base: Vec<f64>,
    pub se_doubled: Vec<f64>,
    /// Largest per-column gap in combined-standard-error units.
    pub worst_z: f64,
    pub threshold: f64,
    pub pass: bool,
}

pub fn stability_check<R>(rule: &R, data: &[Point], plan: &ResamplingPlan) -> Result<StabilityReport>
where
    R: PredictiveRule + Sync + ?Sized,
    R::Summary: Send + Sync,
{
    let base = sample_posterior(rule, data, plan)?;
    let mut doubled_plan = plan.clone();
    doubled_plan.horizon = plan.horizon.saturating_mul(2);
    doubled_plan.seed = plan.seed ^ 0x9e3779b97f4a7c15;
    let doubled = sample_posterior(rule, data, &doubled_plan)?;

    let (m1, m2) = (base.mean(), doubled.mean());
    let (s1, s2) = (base.std_err(), doubled.std_err());
    let mut worst_z: f64 = 0.0;
    for i in 0..m1.len() {
        let denom = (s1[i] * s1[i] + s2[i] * s2[i]).sqrt().max(1e-15);
        worst_z = worst_z.max((m1[i] - m2[i]).abs() / denom);
    }
    let threshold = 3.0;
    Ok(StabilityReport {
        horizon: plan.horizon,
        doubled_horizon: doubled_plan.horizon,
        mean_base: m1,
        mean_doubled: m2,
        se_base: s1,
        se_doubled: s2,
        worst_z,
        threshold,
        pass: worst_z <= threshold,
    })
}

// ---------------------------------------------------------------------------
// Tests
// ---------------------------------------------------------------------------
