//! The predictive-rule contract and the operations every rule supports:
//! forward simulation, conditioning on data, and joint probabilities of
//! finite sequences via the predictive factorization
//! `P(x_1..x_n) = prod_m P_{m-1}({x_m})`.

use crate::error::{Error, Result};
use crate::measure::{EvalGrid, Predictive};
use crate::point::{Point, SpaceKind};
use crate::random::RandomSource;

/// A Bayesian predictive rule: a deterministic map from an observation
/// summary to the distribution of the next observation, together with the
/// summary's update.
///
/// `update` is pure: it returns a new summary and leaves its argument
/// untouched, so callers can hold multiple states of one rule at different
/// points of a chain. Hot loops use [`PredictiveRule::update_in_place`],
/// which rules with large summaries override to avoid cloning.
pub trait PredictiveRule: Send + Sync {
    type Summary: Clone + Send + Sync;

    /// Short machine-readable name for reports and metadata.
    fn name(&self) -> String;

    fn space(&self) -> SpaceKind;

    /// Summary before any data: predicting from it gives the prior
    /// predictive.
    fn initial_summary(&self) -> Self::Summary;

    fn update(&self, summary: &Self::Summary, x: &Point) -> Result<Self::Summary>;

    fn predict(&self, summary: &Self::Summary) -> Result<Predictive>;

    fn update_in_place(&self, summary: &mut Self::Summary, x: &Point) -> Result<()> {
        *summary = self.update(summary, x)?;
        Ok(())
    }

    /// Draw the next observation. Equivalent in distribution to sampling
    /// from `predict`, but rules may provide a cheaper path (an urn scheme
    /// can resample a stored observation in O(1) instead of materializing
    /// the whole predictive).
    fn sample_next(&self, summary: &Self::Summary, rng: &mut RandomSource) -> Result<Point> {
        self.predict(summary)?.sample(rng)
    }
}

/// A rule's summary plus the number of observations folded into it.
#[derive(Clone, Debug, PartialEq)]
pub struct RuleState<T> {
    pub summary: T,
    pub n: usize,
}

/// State before any observations.
pub fn initial_state<R: PredictiveRule + ?Sized>(rule: &R) -> RuleState<R::Summary> {
    RuleState { summary: rule.initial_summary(), n: 0 }
}

/// Fold one observation into a state, validating the space first.
pub fn step<R: PredictiveRule + ?Sized>(
    rule: &R,
    state: &mut RuleState<R::Summary>,
    x: &Point,
) -> Result<()> {
    if !rule.space().accepts(x) {
        return Err(Error::Config(format!(
            "observation {} does not belong to the rule's space ({})",
            x.describe(),
            rule.space().describe()
        )));
    }
    rule.update_in_place(&mut state.summary, x)?;
    state.n += 1;
    Ok(())
}

/// Fold a data sequence in order. A failure at position `i` names `i`.
pub fn condition<R: PredictiveRule + ?Sized>(
    rule: &R,
    data: &[Point],
) -> Result<RuleState<R::Summary>> {
    let mut state = initial_state(rule);
    for (i, x) in data.iter().enumerate() {
        step(rule, &mut state, x).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("observation {i}: {msg}")),
            Error::NullConditioning(msg) => {
                Error::NullConditioning(format!("observation {i}: {msg}"))
            }
            other => other,
        })?;
    }
    Ok(state)
}

/// A realized chain: the sampled observations, plus (when a grid was given)
/// the predictive evaluated on that grid after 0, 1, ..., n steps. The
/// snapshot list always includes the prior predictive, so it has one more
/// entry than there are observations.
#[derive(Clone, Debug)]
pub struct ChainPath {
    pub observations: Vec<Point>,
    pub snapshots: Option<Vec<Vec<f64>>>,
}

/// Simulate a chain forward from the prior: repeatedly draw the next
/// observation from the current predictive and fold it in. Errors during
/// step `m` are reported with that index.
pub fn simulate_chain<R: PredictiveRule + ?Sized>(
    rule: &R,
    n_steps: usize,
    rng: &mut RandomSource,
    grid: Option<&EvalGrid>,
) -> Result<ChainPath> {
    if let Some(g) = grid {
        g.validate()?;
    }
    let mut state = initial_state(rule);
    let mut observations = Vec::with_capacity(n_steps);
    let mut snapshots = match grid {
        Some(g) => {
            let first = rule.predict(&state.summary)?.eval_on_grid(g)?;
            let mut v = Vec::with_capacity(n_steps + 1);
            v.push(first);
            Some(v)
        }
        None => None,
    };
    for m in 0..n_steps {
        let at_step = |e: Error| match e {
            Error::Config(msg) => Error::Config(format!("step {m}: {msg}")),
            Error::Numeric(msg) => Error::Numeric(format!("step {m}: {msg}")),
            Error::NullConditioning(msg) => {
                Error::NullConditioning(format!("step {m}: {msg}"))
            }
            other => other,
        };
        let x = rule.sample_next(&state.summary, rng).map_err(at_step)?;
        rule.update_in_place(&mut state.summary, &x).map_err(at_step)?;
        state.n += 1;
        if let (Some(snaps), Some(g)) = (snapshots.as_mut(), grid) {
            snaps.push(rule.predict(&state.summary)?.eval_on_grid(g)?);
        }
        observations.push(x);
    }
    Ok(ChainPath { observations, snapshots })
}

/// Extend an existing state by `n_steps` sampled observations, delivering
/// each to `on_obs` instead of storing it. This is the workhorse of
/// posterior resampling, where only terminal functionals are kept.
pub fn extend_chain<R: PredictiveRule + ?Sized>(
    rule: &R,
    state: &mut RuleState<R::Summary>,
    n_steps: usize,
    rng: &mut RandomSource,
    mut on_obs: impl FnMut(&Point),
) -> Result<()> {
    for _ in 0..n_steps {
        let x = rule.sample_next(&state.summary, rng)?;
        rule.update_in_place(&mut state.summary, &x)?;
        state.n += 1;
        on_obs(&x);
    }
    Ok(())
}

/// Log of the joint probability of a finite sequence under the rule,
/// accumulated in log space. Zero one-step masses give `-inf`.
pub fn joint_log_prob<R: PredictiveRule + ?Sized>(rule: &R, sequence: &[Point]) -> Result<f64> {
    if sequence.is_empty() {
        return Err(Error::Config("joint probability of an empty sequence".into()));
    }
    let mut state = initial_state(rule);
    let mut log_p = 0.0;
    for (i, x) in sequence.iter().enumerate() {
        if !rule.space().accepts(x) {
            return Err(Error::Config(format!(
                "observation {i}: {} does not belong to the rule's space ({})",
                x.describe(),
                rule.space().describe()
            )));
        }
        let mass = rule.predict(&state.summary)?.finite_point_mass(x)?;
        log_p += mass.ln();
        rule.update_in_place(&mut state.summary, x)?;
        state.n += 1;
    }
    Ok(log_p)
}

/// Joint probability of a finite sequence: the product of one-step
/// predictive masses along it.
pub fn joint_prob<R: PredictiveRule + ?Sized>(rule: &R, sequence: &[Point]) -> Result<f64> {
    Ok(joint_log_prob(rule, sequence)?.exp())
}

/// Rule whose predictive never changes: observations are i.i.d. from a
/// fixed distribution.
#[derive(Clone, Debug)]
pub struct IidRule {
    dist: Predictive,
    space: SpaceKind,
}

impl IidRule {
    pub fn new(dist: Predictive, space: SpaceKind) -> Result<Self> {
        Ok(IidRule { dist, space })
    }
}

impl PredictiveRule for IidRule {
    type Summary = ();

    fn name(&self) -> String {
        "iid".into()
    }

    fn space(&self) -> SpaceKind {
        self.space.clone()
    }

    fn initial_summary(&self) -> Self::Summary {}

    fn update(&self, _summary: &Self::Summary, _x: &Point) -> Result<Self::Summary> {
        Ok(())
    }

    fn predict(&self, _summary: &Self::Summary) -> Result<Predictive> {
        Ok(self.dist.clone())
    }
}
