//! Predictive rules beyond exchangeability.
//!
//! Markov-exchangeable chains driven by reinforced urns (one urn per state),
//! successor-state extraction, the swap identity that characterizes Markov
//! exchangeability, hierarchies built from Hoppe urns (the Chinese franchise
//! and the infinite hidden Markov model), weighted partially-c.i.d.
//! sequences, and row-column exchangeable binary arrays sampled from
//! graphons.

use std::collections::{BTreeMap, HashMap};
use std::sync::Arc;

use crate::engine::PredictiveRule;
use crate::error::{Error, Result};
use crate::measure::{AtomicMixture, BaseMeasure, DiscreteDistribution, Predictive};
use crate::point::{Point, SpaceKind};
use crate::random::RandomSource;

/// Tolerance for the two-step swap identity characterizing Markov
/// exchangeability.
pub const SWAP_TOL: f64 = 1e-10;

// ---------------------------------------------------------------------------
// Transition bookkeeping
// ---------------------------------------------------------------------------

/// Transition counts of a chain: `t[x][y]` transitions from `x` to `y`,
/// plus the initial and current states. Row sums equal the number of
/// completed visits to the row's state (the pending visit at the current
/// state has no successor yet).
#[derive(Clone, Debug, PartialEq)]
pub struct TransitionCounts {
    initial: Point,
    current: Point,
    rows: BTreeMap<Point, BTreeMap<Point, usize>>,
    transitions: usize,
}

impl TransitionCounts {
    pub fn new(initial: Point) -> Self {
        TransitionCounts {
            current: initial.clone(),
            initial,
            rows: BTreeMap::new(),
            transitions: 0,
        }
    }

    /// Record a move from the current state to `next`.
    pub fn record(&mut self, next: &Point) {
        *self
            .rows
            .entry(self.current.clone())
            .or_default()
            .entry(next.clone())
            .or_insert(0) += 1;
        self.current = next.clone();
        self.transitions += 1;
    }

    pub fn initial(&self) -> &Point {
        &self.initial
    }

    pub fn current(&self) -> &Point {
        &self.current
    }

    /// Total number of recorded transitions.
    pub fn transitions(&self) -> usize {
        self.transitions
    }

    /// Outgoing counts from `x`, in ascending point order.
    pub fn row(&self, x: &Point) -> Vec<(Point, usize)> {
        self.rows
            .get(x)
            .map(|r| r.iter().map(|(p, c)| (p.clone(), *c)).collect())
            .unwrap_or_default()
    }

    /// Number of completed visits to `x` (the row sum).
    pub fn visits_completed(&self, x: &Point) -> usize {
        self.rows.get(x).map(|r| r.values().sum()).unwrap_or(0)
    }
}

// ---------------------------------------------------------------------------
// Reinforced urn scheme
// ---------------------------------------------------------------------------

/// Per-state urn parameters: a reinforcement weight and an initial
/// composition for each state the chain may leave from.
#[derive(Clone, Debug)]
pub struct UrnParams {
    states: BTreeMap<Point, (f64, DiscreteDistribution)>,
}

impl UrnParams {
    pub fn new(entries: Vec<(Point, f64, DiscreteDistribution)>) -> Result<Self> {
        if entries.is_empty() {
            return Err(Error::Config("reinforced urn scheme needs at least one state".into()));
        }
        let mut states = BTreeMap::new();
        for (x, alpha, q) in entries {
            if !alpha.is_finite() || alpha <= 0.0 {
                return Err(Error::Config(format!(
                    "urn weight for {} must be positive, got {alpha}",
                    x.describe()
                )));
            }
            if states.insert(x.clone(), (alpha, q)).is_some() {
                return Err(Error::Config(format!("duplicate urn for state {}", x.describe())));
            }
        }
        Ok(UrnParams { states })
    }

    /// The same parameters for every listed state.
    pub fn homogeneous(states: Vec<Point>, alpha: f64, q: DiscreteDistribution) -> Result<Self> {
        Self::new(states.into_iter().map(|x| (x, alpha, q.clone())).collect())
    }

    pub fn states(&self) -> impl Iterator<Item = &Point> {
        self.states.keys()
    }

    pub fn get(&self, x: &Point) -> Result<(f64, &DiscreteDistribution)> {
        self.states
            .get(x)
            .map(|(a, q)| (*a, q))
            .ok_or_else(|| Error::Config(format!("no urn configured for state {}", x.describe())))
    }

    /// Probability that the chain moves from `x` to `y` given the outgoing
    /// count row of `x`.
    pub fn row_predict(&self, y: &Point, x: &Point, row: &[(Point, usize)]) -> Result<f64> {
        let (alpha, q) = self.get(x)?;
        let total: usize = row.iter().map(|(_, c)| c).sum();
        let t_y = row
            .iter()
            .find(|(p, _)| p == y)
            .map(|(_, c)| *c)
            .unwrap_or(0);
        Ok((alpha * q.mass(y) + t_y as f64) / (alpha + total as f64))
    }
}

/// One-step predictive of the reinforced urn scheme from the chain's current
/// state: `P(next = y) = (alpha_x q_x(y) + t_{x,y}) / (alpha_x + sum_j t_{x,j})`.
/// The support is the urn composition's support plus any states already
/// reached from `x` outside it.
pub fn reinforced_predict(tc: &TransitionCounts, params: &UrnParams) -> Result<DiscreteDistribution> {
    let x = tc.current();
    let (alpha, q) = params.get(x)?;
    let row = tc.row(x);
    let total: usize = row.iter().map(|(_, c)| c).sum();
    let denom = alpha + total as f64;

    let mut labels: Vec<Point> = q.labels().to_vec();
    let mut seen: HashMap<&Point, usize> =
        labels.iter().enumerate().map(|(i, p)| (p, i)).collect();
    let mut masses: Vec<f64> = q.probs().iter().map(|p| alpha * p / denom).collect();
    for (y, c) in &row {
        match seen.get(y) {
            Some(&i) => masses[i] += *c as f64 / denom,
            None => {
                masses.push(*c as f64 / denom);
                labels.push(y.clone());
                // Re-borrow is awkward; the new label is last.
                seen = labels.iter().enumerate().map(|(i, p)| (p, i)).collect();
            }
        }
    }
    DiscreteDistribution::new(labels, masses)
}

/// The reinforced urn scheme as a predictive rule over labeled states.
#[derive(Clone, Debug)]
pub struct ReinforcedUrnRule {
    params: UrnParams,
    initial: Point,
    space: SpaceKind,
}

impl ReinforcedUrnRule {
    pub fn new(params: UrnParams, initial: Point) -> Result<Self> {
        params.get(&initial)?;
        let mut max_label = 0u32;
        for (x, (_, q)) in &params.states {
            for p in std::iter::once(x).chain(q.labels()) {
                match p.as_label() {
                    Some(l) => max_label = max_label.max(l),
                    None => {
                        return Err(Error::Config(
                            "reinforced urn chains use labeled states".into(),
                        ))
                    }
                }
            }
        }
        Ok(ReinforcedUrnRule {
            params,
            initial,
            space: SpaceKind::Categorical { size: max_label + 1 },
        })
    }

    pub fn params(&self) -> &UrnParams {
        &self.params
    }
}

impl PredictiveRule for ReinforcedUrnRule {
    type Summary = TransitionCounts;

    fn name(&self) -> String {
        "reinforced-urn".into()
    }

    fn space(&self) -> SpaceKind {
        self.space.clone()
    }

    fn initial_summary(&self) -> Self::Summary {
        TransitionCounts::new(self.initial.clone())
    }

    fn update(&self, summary: &Self::Summary, x: &Point) -> Result<Self::Summary> {
        let mut next = summary.clone();
        next.record(x);
        Ok(next)
    }

    fn update_in_place(&self, summary: &mut Self::Summary, x: &Point) -> Result<()> {
        summary.record(x);
        Ok(())
    }

    fn predict(&self, summary: &Self::Summary) -> Result<Predictive> {
        Ok(Predictive::Finite(reinforced_predict(summary, &self.params)?))
    }
}

// ---------------------------------------------------------------------------
// Successor states
// ---------------------------------------------------------------------------

/// For each state, the sequence of states visited immediately after it, in
/// visit order. The final visit of a path has no successor and is excluded.
#[derive(Clone, Debug, PartialEq)]
pub struct SuccessorTable {
    map: BTreeMap<Point, Vec<Point>>,
}

impl SuccessorTable {
    pub fn successors(&self, x: &Point) -> &[Point] {
        self.map.get(x).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn states(&self) -> impl Iterator<Item = &Point> {
        self.map.keys()
    }

    pub fn total_successors(&self) -> usize {
        self.map.values().map(Vec::len).sum()
    }

    /// Replay the successor lists from `x0`, reproducing the path they were
    /// extracted from.
    pub fn reconstruct(&self, x0: &Point) -> Vec<Point> {
        let mut cursors: HashMap<Point, usize> = HashMap::new();
        let mut path = vec![x0.clone()];
        let mut current = x0.clone();
        while let Some(list) = self.map.get(&current) {
            let cursor = cursors.entry(current.clone()).or_insert(0);
            if *cursor >= list.len() {
                break;
            }
            let next = list[*cursor].clone();
            *cursor += 1;
            path.push(next.clone());
            current = next;
        }
        path
    }
}

/// Extract the successor table of a path: `successors(x)` lists, in order,
/// the state visited right after each visit to `x`.
pub fn successor_states(path: &[Point]) -> Result<SuccessorTable> {
    if path.len() < 2 {
        return Err(Error::Domain(format!(
            "successor extraction needs a path of length at least 2, got {}",
            path.len()
        )));
    }
    let mut map: BTreeMap<Point, Vec<Point>> = BTreeMap::new();
    for w in path.windows(2) {
        map.entry(w[0].clone()).or_default().push(w[1].clone());
    }
    Ok(SuccessorTable { map })
}

// ---------------------------------------------------------------------------
// The swap identity
// ---------------------------------------------------------------------------

/// A point where the swap identity
/// `p(y|x,t) p(z|x,t+e_y) = p(z|x,t) p(y|x,t+e_z)` fails.
#[derive(Clone, Debug)]
pub struct SwapViolation {
    pub x: Point,
    pub y: Point,
    pub z: Point,
    /// The count row of `x` at which the identity fails.
    pub row: Vec<(Point, usize)>,
    pub lhs: f64,
    pub rhs: f64,
}

impl SwapViolation {
    pub fn magnitude(&self) -> f64 {
        (self.lhs - self.rhs).abs()
    }
}

/// Result of a swap scan: violations beyond [`SWAP_TOL`], the worst gap seen
/// anywhere, and how many identities were evaluated.
#[derive(Clone, Debug)]
pub struct SwapScan {
    pub violations: Vec<SwapViolation>,
    pub worst: f64,
    pub evaluations: u64,
}

/// Scan the swap identity over every count row with total at most `depth`
/// and every state triple (x, y, z). `pred(y, x, row)` is the probability
/// that the chain at `x` with outgoing counts `row` moves to `y`.
pub fn markov_swap_scan<F>(pred: F, states: &[Point], depth: usize) -> Result<SwapScan>
where
    F: Fn(&Point, &Point, &[(Point, usize)]) -> Result<f64>,
{
    if states.is_empty() {
        return Err(Error::Config("swap scan needs a nonempty state set".into()));
    }
    let k = states.len();
    let mut counts = vec![0usize; k];
    let mut violations = Vec::new();
    let mut worst = 0.0f64;
    let mut evaluations = 0u64;

    let row_of = |counts: &[usize]| -> Vec<(Point, usize)> {
        states
            .iter()
            .zip(counts.iter())
            .filter(|(_, &c)| c > 0)
            .map(|(p, &c)| (p.clone(), c))
            .collect()
    };

    loop {
        let row = row_of(&counts);
        for x in states {
            for (yi, y) in states.iter().enumerate() {
                for (zi, z) in states.iter().enumerate() {
                    let mut bumped_y = counts.clone();
                    bumped_y[yi] += 1;
                    let mut bumped_z = counts.clone();
                    bumped_z[zi] += 1;
                    let lhs = pred(y, x, &row)? * pred(z, x, &row_of(&bumped_y))?;
                    let rhs = pred(z, x, &row)? * pred(y, x, &row_of(&bumped_z))?;
                    evaluations += 1;
                    let gap = (lhs - rhs).abs();
                    worst = worst.max(gap);
                    if gap > SWAP_TOL {
                        violations.push(SwapViolation {
                            x: x.clone(),
                            y: y.clone(),
                            z: z.clone(),
                            row: row.clone(),
                            lhs,
                            rhs,
                        });
                    }
                }
            }
        }
        // Next count vector with sum <= depth, odometer style.
        let mut i = 0;
        loop {
            if i == k {
                return Ok(SwapScan { violations, worst, evaluations });
            }
            counts[i] += 1;
            if counts.iter().sum::<usize>() <= depth {
                break;
            }
            counts[i] = 0;
            i += 1;
        }
    }
}

/// Violations of the swap identity; an empty list means the rule passes at
/// this depth.
pub fn markov_swap_check<F>(pred: F, states: &[Point], depth: usize) -> Result<Vec<SwapViolation>>
where
    F: Fn(&Point, &Point, &[(Point, usize)]) -> Result<f64>,
{
    Ok(markov_swap_scan(pred, states, depth)?.violations)
}

// ---------------------------------------------------------------------------
// Hoppe urns and hierarchies
// ---------------------------------------------------------------------------

/// A Hoppe urn: a black ball of mass `black` plus colored balls with unit
/// mass each. Drawing black means "mint a new color" (handled by the
/// caller); drawing a color reinforces nothing by itself.
#[derive(Clone, Debug)]
struct Urn {
    black: f64,
    colors: Vec<(Point, usize)>,
    index: HashMap<Point, usize>,
    total: usize,
}

enum UrnDraw {
    Black,
    Color(Point),
}

impl Urn {
    fn new(black: f64) -> Self {
        Urn { black, colors: Vec::new(), index: HashMap::new(), total: 0 }
    }

    fn add(&mut self, color: &Point) {
        match self.index.get(color) {
            Some(&i) => self.colors[i].1 += 1,
            None => {
                self.index.insert(color.clone(), self.colors.len());
                self.colors.push((color.clone(), 1));
            }
        }
        self.total += 1;
    }

    fn count(&self, color: &Point) -> usize {
        self.index.get(color).map(|&i| self.colors[i].1).unwrap_or(0)
    }

    fn draw(&self, rng: &mut RandomSource) -> UrnDraw {
        let denom = self.black + self.total as f64;
        let mut r = rng.uniform() * denom;
        if r < self.black || self.total == 0 {
            return UrnDraw::Black;
        }
        r -= self.black;
        for (color, count) in &self.colors {
            r -= *count as f64;
            if r < 0.0 {
                return UrnDraw::Color(color.clone());
            }
        }
        UrnDraw::Color(self.colors.last().expect("nonempty urn").0.clone())
    }
}

/// State of a Chinese franchise: one Hoppe urn per restaurant whose tables
/// are painted by draws from a shared oracle urn, itself a Hoppe urn over
/// the base measure.
#[derive(Clone, Debug)]
pub struct FranchiseState {
    base: BaseMeasure,
    oracle: Urn,
    restaurants: Vec<Restaurant>,
}

#[derive(Clone, Debug)]
struct Restaurant {
    alpha: f64,
    /// (color, customers) per table; tables sharing a color stay distinct.
    tables: Vec<(Point, usize)>,
    customers: usize,
}

impl FranchiseState {
    pub fn new(gamma: f64, base: BaseMeasure, alphas: &[f64]) -> Result<Self> {
        if !gamma.is_finite() || gamma <= 0.0 {
            return Err(Error::Config(format!("oracle weight must be positive, got {gamma}")));
        }
        base.validate()?;
        if matches!(base, BaseMeasure::None) {
            return Err(Error::Config("franchise needs a base measure for new colors".into()));
        }
        if alphas.is_empty() {
            return Err(Error::Config("franchise needs at least one restaurant".into()));
        }
        if alphas.iter().any(|a| !a.is_finite() || *a <= 0.0) {
            return Err(Error::Config("restaurant weights must be positive".into()));
        }
        Ok(FranchiseState {
            base,
            oracle: Urn::new(gamma),
            restaurants: alphas
                .iter()
                .map(|&alpha| Restaurant { alpha, tables: Vec::new(), customers: 0 })
                .collect(),
        })
    }

    pub fn restaurants(&self) -> usize {
        self.restaurants.len()
    }

    /// (color, customers) of every table in restaurant `j`.
    pub fn tables(&self, j: usize) -> &[(Point, usize)] {
        &self.restaurants[j].tables
    }

    /// Total oracle draws so far (equals the total number of tables).
    pub fn oracle_draws(&self) -> usize {
        self.oracle.total
    }

    fn oracle_draw(&mut self, rng: &mut RandomSource) -> Result<Point> {
        let color = match self.oracle.draw(rng) {
            UrnDraw::Black => self.base.sample(rng)?,
            UrnDraw::Color(c) => c,
        };
        self.oracle.add(&color);
        Ok(color)
    }
}

/// Seat one customer in restaurant `j` and return the color they are served:
/// a new table is opened with probability `alpha_j / (alpha_j + n_j)` and
/// painted by an oracle draw; otherwise an existing table is joined with
/// probability proportional to its occupancy.
pub fn franchise_next(s: &mut FranchiseState, j: usize, rng: &mut RandomSource) -> Result<Point> {
    if j >= s.restaurants.len() {
        return Err(Error::Config(format!(
            "restaurant {j} of a franchise with {}",
            s.restaurants.len()
        )));
    }
    let (alpha, customers) = {
        let r = &s.restaurants[j];
        (r.alpha, r.customers)
    };
    let denom = alpha + customers as f64;
    let mut r = rng.uniform() * denom;
    if r < alpha || customers == 0 {
        let color = s.oracle_draw(rng)?;
        let rest = &mut s.restaurants[j];
        rest.tables.push((color.clone(), 1));
        rest.customers += 1;
        return Ok(color);
    }
    r -= alpha;
    let rest = &mut s.restaurants[j];
    let mut chosen = rest.tables.len() - 1;
    for (i, (_, occ)) in rest.tables.iter().enumerate() {
        r -= *occ as f64;
        if r < 0.0 {
            chosen = i;
            break;
        }
    }
    rest.tables[chosen].1 += 1;
    rest.customers += 1;
    Ok(rest.tables[chosen].0.clone())
}

// ---------------------------------------------------------------------------
// Infinite hidden Markov model
// ---------------------------------------------------------------------------

/// Latent-state chain where each discovered state owns a Hoppe urn with
/// weight `alpha`, and black draws defer to a shared oracle Hoppe urn with
/// weight `gamma` over the base measure.
#[derive(Clone, Debug)]
pub struct IhmmState {
    alpha: f64,
    base: BaseMeasure,
    oracle: Urn,
    state_urns: BTreeMap<Point, Urn>,
    current: Option<Point>,
}

/// Provenance of one transition, for replaying the chain against the
/// per-state urn dynamics.
#[derive(Clone, Debug)]
pub struct IhmmTrace {
    /// State the chain moved from; `None` on the first step.
    pub from: Option<Point>,
    /// Whether the state urn's black ball was drawn (or the step was the
    /// first, which always consults the oracle).
    pub used_oracle: bool,
    /// Probability of drawing black from the state urn at this step.
    pub black_prob: f64,
    /// Probability of the realized choice under the state urn (equals
    /// `black_prob` when the oracle was used).
    pub choice_prob: f64,
    pub state: Point,
}

impl IhmmState {
    pub fn new(gamma: f64, alpha: f64, base: BaseMeasure) -> Result<Self> {
        if !gamma.is_finite() || gamma <= 0.0 {
            return Err(Error::Config(format!("oracle weight must be positive, got {gamma}")));
        }
        if !alpha.is_finite() || alpha <= 0.0 {
            return Err(Error::Config(format!("state urn weight must be positive, got {alpha}")));
        }
        base.validate()?;
        if matches!(base, BaseMeasure::None) {
            return Err(Error::Config("latent chain needs a base measure for new states".into()));
        }
        Ok(IhmmState {
            alpha,
            base,
            oracle: Urn::new(gamma),
            state_urns: BTreeMap::new(),
            current: None,
        })
    }

    pub fn current(&self) -> Option<&Point> {
        self.current.as_ref()
    }

    /// States discovered so far (each owns an urn).
    pub fn discovered(&self) -> usize {
        self.state_urns.len()
    }

    /// Outgoing draw counts recorded in the urn of `x`.
    pub fn urn_counts(&self, x: &Point) -> Vec<(Point, usize)> {
        self.state_urns
            .get(x)
            .map(|u| u.colors.clone())
            .unwrap_or_default()
    }

    fn oracle_draw(&mut self, rng: &mut RandomSource) -> Result<Point> {
        let color = match self.oracle.draw(rng) {
            UrnDraw::Black => self.base.sample(rng)?,
            UrnDraw::Color(c) => c,
        };
        self.oracle.add(&color);
        Ok(color)
    }
}

/// Advance the latent chain one step, returning the new state.
pub fn ihmm_next(s: &mut IhmmState, rng: &mut RandomSource) -> Result<Point> {
    ihmm_next_traced(s, rng).map(|(p, _)| p)
}

/// Advance the latent chain one step, also reporting the pre-draw
/// probabilities so the per-state urn dynamics can be verified by replay.
pub fn ihmm_next_traced(s: &mut IhmmState, rng: &mut RandomSource) -> Result<(Point, IhmmTrace)> {
    let (next, trace) = match s.current.clone() {
        None => {
            let state = s.oracle_draw(rng)?;
            let trace = IhmmTrace {
                from: None,
                used_oracle: true,
                black_prob: 1.0,
                choice_prob: 1.0,
                state: state.clone(),
            };
            (state, trace)
        }
        Some(from) => {
            let alpha = s.alpha;
            let (draw, black_prob, total) = {
                let urn = s.state_urns.get(&from).expect("current state owns an urn");
                let denom = alpha + urn.total as f64;
                (urn.draw(rng), alpha / denom, urn.total)
            };
            let (state, used_oracle, choice_prob) = match draw {
                UrnDraw::Black => (s.oracle_draw(rng)?, true, black_prob),
                UrnDraw::Color(c) => {
                    let count = s.state_urns.get(&from).expect("urn").count(&c);
                    (c, false, count as f64 / (alpha + total as f64))
                }
            };
            s.state_urns
                .get_mut(&from)
                .expect("current state owns an urn")
                .add(&state);
            let trace = IhmmTrace {
                from: Some(from),
                used_oracle,
                black_prob,
                choice_prob,
                state: state.clone(),
            };
            (state, trace)
        }
    };
    let alpha = s.alpha;
    s.state_urns.entry(next.clone()).or_insert_with(|| Urn::new(alpha));
    s.current = Some(next.clone());
    Ok((next, trace))
}

// ---------------------------------------------------------------------------
// Weighted (partially c.i.d.) sequences
// ---------------------------------------------------------------------------

/// Observation summary of one weighted sequence: each observation carries a
/// positive weight, and the predictive is
/// `(alpha0 * P_0 + sum_k W_k delta_{X_k}) / (alpha0 + sum_k W_k)`.
#[derive(Clone, Debug)]
pub struct PcidState {
    alpha0: f64,
    base: BaseMeasure,
    atoms: Vec<(Point, f64)>,
    index: HashMap<Point, usize>,
    total_weight: f64,
    n: usize,
}

impl PcidState {
    pub fn new(alpha0: f64, base: BaseMeasure) -> Result<Self> {
        if !alpha0.is_finite() || alpha0 <= 0.0 {
            return Err(Error::Config(format!("concentration must be positive, got {alpha0}")));
        }
        base.validate()?;
        if matches!(base, BaseMeasure::None) {
            return Err(Error::Config("weighted sequence needs a base measure".into()));
        }
        Ok(PcidState {
            alpha0,
            base,
            atoms: Vec::new(),
            index: HashMap::new(),
            total_weight: 0.0,
            n: 0,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn total_weight(&self) -> f64 {
        self.total_weight
    }

    pub fn observe(&mut self, x: &Point, w: f64) -> Result<()> {
        if !w.is_finite() || w <= 0.0 {
            return Err(Error::Config(format!("observation weight must be positive, got {w}")));
        }
        match self.index.get(x) {
            Some(&i) => self.atoms[i].1 += w,
            None => {
                self.index.insert(x.clone(), self.atoms.len());
                self.atoms.push((x.clone(), w));
            }
        }
        self.total_weight += w;
        self.n += 1;
        Ok(())
    }
}

/// Predictive of a weighted sequence. With unit weights this is bit for bit
/// the plain Polya predictive: per-atom weights are summed before the single
/// division, so integer-valued weight totals stay exact.
pub fn pcid_predict(s: &PcidState) -> Result<AtomicMixture> {
    let denom = s.alpha0 + s.total_weight;
    let atoms: Vec<(Point, f64)> =
        s.atoms.iter().map(|(p, w)| (p.clone(), w / denom)).collect();
    AtomicMixture::new(atoms, s.alpha0 / denom, s.base.clone())
}

// ---------------------------------------------------------------------------
// Multi-sequence rules
// ---------------------------------------------------------------------------

/// A rule for an array observed row by row: several sequences evolve in
/// parallel, and conditionally on the past the columns of the next row are
/// drawn independently from per-column predictives. Couplings enter through
/// the row update only.
pub trait MultiSequenceRule: Send + Sync {
    type Summary: Clone + Send + Sync;

    fn name(&self) -> String;

    fn columns(&self) -> usize;

    fn space(&self, j: usize) -> SpaceKind;

    fn initial_summary(&self) -> Self::Summary;

    /// Per-column predictives for the next row.
    fn row_predictives(&self, summary: &Self::Summary) -> Result<Vec<Predictive>>;

    fn update_row(&self, summary: &Self::Summary, row: &[Point]) -> Result<Self::Summary>;

    fn sample_row(&self, summary: &Self::Summary, rng: &mut RandomSource) -> Result<Vec<Point>> {
        self.row_predictives(summary)?
            .iter()
            .map(|p| p.sample(rng))
            .collect()
    }
}

/// Independent copies of single-sequence rules, one per column.
#[derive(Clone, Debug)]
pub struct IndependentColumns<R: PredictiveRule> {
    rules: Vec<R>,
}

impl<R: PredictiveRule> IndependentColumns<R> {
    pub fn new(rules: Vec<R>) -> Result<Self> {
        if rules.is_empty() {
            return Err(Error::Config("need at least one column".into()));
        }
        Ok(IndependentColumns { rules })
    }
}

impl<R: PredictiveRule> MultiSequenceRule for IndependentColumns<R> {
    type Summary = Vec<R::Summary>;

    fn name(&self) -> String {
        format!("independent[{}]", self.rules[0].name())
    }

    fn columns(&self) -> usize {
        self.rules.len()
    }

    fn space(&self, j: usize) -> SpaceKind {
        self.rules[j].space()
    }

    fn initial_summary(&self) -> Self::Summary {
        self.rules.iter().map(|r| r.initial_summary()).collect()
    }

    fn row_predictives(&self, summary: &Self::Summary) -> Result<Vec<Predictive>> {
        self.rules
            .iter()
            .zip(summary.iter())
            .map(|(r, s)| r.predict(s))
            .collect()
    }

    fn update_row(&self, summary: &Self::Summary, row: &[Point]) -> Result<Self::Summary> {
        if row.len() != self.rules.len() {
            return Err(Error::Config(format!(
                "row has {} entries for {} columns",
                row.len(),
                self.rules.len()
            )));
        }
        self.rules
            .iter()
            .zip(summary.iter())
            .zip(row.iter())
            .map(|((r, s), x)| r.update(s, x))
            .collect()
    }
}

/// Weighted sequences whose observation weights may depend on the whole
/// realized row, coupling the columns: each column stays conditionally
/// identically distributed, but the array need not be partially
/// exchangeable.
#[derive(Clone)]
pub struct CoupledWeightColumns {
    alpha0: Vec<f64>,
    bases: Vec<BaseMeasure>,
    spaces: Vec<SpaceKind>,
    weight_fn: Arc<dyn Fn(usize, &[Point]) -> f64 + Send + Sync>,
}

impl CoupledWeightColumns {
    pub fn new(
        alpha0: Vec<f64>,
        bases: Vec<BaseMeasure>,
        weight_fn: impl Fn(usize, &[Point]) -> f64 + Send + Sync + 'static,
    ) -> Result<Self> {
        if alpha0.is_empty() || alpha0.len() != bases.len() {
            return Err(Error::Config("need matching concentration and base lists".into()));
        }
        let mut spaces = Vec::with_capacity(bases.len());
        for (a, b) in alpha0.iter().zip(bases.iter()) {
            PcidState::new(*a, b.clone())?;
            spaces.push(crate::exchangeable::space_of_base(b)?);
        }
        Ok(CoupledWeightColumns { alpha0, bases, spaces, weight_fn: Arc::new(weight_fn) })
    }

    /// Unit weights: the columns reduce to independent Polya sequences.
    pub fn unit_weights(alpha0: Vec<f64>, bases: Vec<BaseMeasure>) -> Result<Self> {
        Self::new(alpha0, bases, |_, _| 1.0)
    }
}

impl std::fmt::Debug for CoupledWeightColumns {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("CoupledWeightColumns")
            .field("columns", &self.alpha0.len())
            .finish()
    }
}

impl MultiSequenceRule for CoupledWeightColumns {
    type Summary = Vec<PcidState>;

    fn name(&self) -> String {
        format!("coupled-weights[{}]", self.alpha0.len())
    }

    fn columns(&self) -> usize {
        self.alpha0.len()
    }

    fn space(&self, j: usize) -> SpaceKind {
        self.spaces[j].clone()
    }

    fn initial_summary(&self) -> Self::Summary {
        self.alpha0
            .iter()
            .zip(self.bases.iter())
            .map(|(a, b)| PcidState::new(*a, b.clone()).expect("validated at construction"))
            .collect()
    }

    fn row_predictives(&self, summary: &Self::Summary) -> Result<Vec<Predictive>> {
        summary
            .iter()
            .map(|s| pcid_predict(s).map(Predictive::Mixture))
            .collect()
    }

    fn update_row(&self, summary: &Self::Summary, row: &[Point]) -> Result<Self::Summary> {
        if row.len() != self.columns() {
            return Err(Error::Config(format!(
                "row has {} entries for {} columns",
                row.len(),
                self.columns()
            )));
        }
        let mut next = summary.clone();
        for (j, (s, x)) in next.iter_mut().zip(row.iter()).enumerate() {
            s.observe(x, (self.weight_fn)(j, row))?;
        }
        Ok(next)
    }
}

// ---------------------------------------------------------------------------
// Graphons
// ---------------------------------------------------------------------------

/// A measurable map `W: [0,1]^2 -> [0,1]` driving a row-column exchangeable
/// binary array. Construction evaluates `W` on a validation grid and rejects
/// out-of-range or non-finite values; the symmetry flag is spot-checked on
/// the same grid.
#[derive(Clone)]
pub struct Graphon {
    name: String,
    symmetric: bool,
    eval: Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>,
}

const GRAPHON_GRID: usize = 33;

impl Graphon {
    pub fn new(
        name: impl Into<String>,
        symmetric: bool,
        eval: impl Fn(f64, f64) -> f64 + Send + Sync + 'static,
    ) -> Result<Self> {
        let name = name.into();
        let grid: Vec<f64> =
            (0..GRAPHON_GRID).map(|i| i as f64 / (GRAPHON_GRID - 1) as f64).collect();
        for &u in &grid {
            for &v in &grid {
                let w = eval(u, v);
                if !w.is_finite() || !(0.0..=1.0).contains(&w) {
                    return Err(Error::Config(format!(
                        "graphon {name} leaves [0,1]: W({u}, {v}) = {w}"
                    )));
                }
                if symmetric && (w - eval(v, u)).abs() > 1e-12 {
                    return Err(Error::Config(format!(
                        "graphon {name} declared symmetric but W({u},{v}) != W({v},{u})"
                    )));
                }
            }
        }
        Ok(Graphon { name, symmetric, eval: Arc::new(eval) })
    }

    pub fn constant(p: f64) -> Result<Self> {
        Self::new(format!("constant({p})"), true, move |_, _| p)
    }

    /// Step-function graphon: `cuts` are the interior breakpoints of [0,1]
    /// (strictly increasing), and `matrix[a][b]` is the value on block
    /// (a, b).
    pub fn blocks(cuts: Vec<f64>, matrix: Vec<Vec<f64>>) -> Result<Self> {
        let k = cuts.len() + 1;
        if !cuts.windows(2).all(|w| w[0] < w[1])
            || cuts.iter().any(|c| !(0.0..1.0).contains(c) || *c <= 0.0)
        {
            return Err(Error::Config("block cuts must be strictly increasing inside (0,1)".into()));
        }
        if matrix.len() != k || matrix.iter().any(|r| r.len() != k) {
            return Err(Error::Config(format!("block matrix must be {k}x{k}")));
        }
        let symmetric =
            (0..k).all(|a| (0..k).all(|b| (matrix[a][b] - matrix[b][a]).abs() <= 1e-15));
        let find = move |u: f64, cuts: &[f64]| cuts.iter().take_while(|c| u >= **c).count();
        let cuts2 = cuts.clone();
        Self::new("blocks", symmetric, move |u, v| {
            matrix[find(u, &cuts2)][find(v, &cuts2)]
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn symmetric(&self) -> bool {
        self.symmetric
    }

    pub fn eval(&self, u: f64, v: f64) -> f64 {
        (self.eval)(u, v)
    }
}

impl std::fmt::Debug for Graphon {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Graphon")
            .field("name", &self.name)
            .field("symmetric", &self.symmetric)
            .finish()
    }
}

/// How the latent uniforms of a graphon sample are shared.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GraphonMode {
    /// Rows and columns are distinct objects: `X[i][j] = 1{U_{ij} <= W(U_i, V_j)}`.
    Separate,
    /// One object set: `U_j` reused for both roles, one uniform per
    /// unordered pair, zero diagonal, symmetric output.
    Joint,
}

/// Dense binary array.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AdjacencyMatrix {
    n: usize,
    data: Vec<u8>,
}

impl AdjacencyMatrix {
    fn zeros(n: usize) -> Self {
        AdjacencyMatrix { n, data: vec![0; n * n] }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn get(&self, i: usize, j: usize) -> u8 {
        self.data[i * self.n + j]
    }

    fn set(&mut self, i: usize, j: usize, v: u8) {
        self.data[i * self.n + j] = v;
    }

    pub fn row_sum(&self, i: usize) -> usize {
        self.data[i * self.n..(i + 1) * self.n].iter().map(|&b| b as usize).sum()
    }

    pub fn ones(&self) -> usize {
        self.data.iter().map(|&b| b as usize).sum()
    }

    pub fn is_symmetric(&self) -> bool {
        (0..self.n).all(|i| (0..self.n).all(|j| self.get(i, j) == self.get(j, i)))
    }

    pub fn zero_diagonal(&self) -> bool {
        (0..self.n).all(|i| self.get(i, i) == 0)
    }

    /// The array with rows permuted by `perm` (entry `(i, j)` of the result
    /// is entry `(perm[i], j)` of the original).
    pub fn permute_rows(&self, perm: &[usize]) -> AdjacencyMatrix {
        let mut out = AdjacencyMatrix::zeros(self.n);
        for (i, &pi) in perm.iter().enumerate() {
            for j in 0..self.n {
                out.set(i, j, self.get(pi, j));
            }
        }
        out
    }
}

/// Sample an `n x n` binary array from a graphon.
///
/// Separate mode draws `U_1..U_n`, then `V_1..V_n`, then one uniform per
/// entry in row-major order. Joint mode requires a symmetric graphon,
/// reuses `U_j` for both roles, draws one uniform per unordered pair
/// (ascending `(i, j)`, `i < j`), and leaves the diagonal zero.
pub fn graphon_sample(
    w: &Graphon,
    n: usize,
    mode: GraphonMode,
    rng: &mut RandomSource,
) -> Result<AdjacencyMatrix> {
    if n == 0 {
        return Err(Error::Config("array size must be at least 1".into()));
    }
    let mut out = AdjacencyMatrix::zeros(n);
    match mode {
        GraphonMode::Separate => {
            let u: Vec<f64> = (0..n).map(|_| rng.uniform()).collect();
            let v: Vec<f64> = (0..n).map(|_| rng.uniform()).collect();
            for i in 0..n {
                for j in 0..n {
                    if rng.uniform() <= w.eval(u[i], v[j]) {
                        out.set(i, j, 1);
                    }
                }
            }
        }
        GraphonMode::Joint => {
            if !w.symmetric {
                return Err(Error::Config(format!(
                    "joint sampling needs a symmetric graphon, {} is not",
                    w.name
                )));
            }
            let u: Vec<f64> = (0..n).map(|_| rng.uniform()).collect();
            for i in 0..n {
                for j in (i + 1)..n {
                    if rng.uniform() <= w.eval(u[i], u[j]) {
                        out.set(i, j, 1);
                        out.set(j, i, 1);
                    }
                }
            }
        }
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Tests
// ---------------------------------------------------------------------------
