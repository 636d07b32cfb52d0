//! Exchangeable predictive rules.
//!
//! The Polya sequence (the predictive of the Dirichlet process) is the
//! backbone: `P_n = (alpha * P_0 + sum_i delta_{X_i}) / (alpha + n)`. On top
//! of it sit partition-driven species-sampling rules, where the weights of
//! old and new species come from an exchangeable partition probability
//! function (EPPF), and two variations: kernel-smoothed predictives and the
//! Indian buffet process for feature allocations.

use std::collections::HashMap;
use std::sync::Arc;

use crate::engine::PredictiveRule;
use crate::error::{Error, Result};
use crate::measure::{AtomicMixture, BaseMeasure, Predictive};
use crate::point::{Point, SpaceKind, Variant};
use crate::random::RandomSource;

/// Tolerance for the EPPF additivity identity
/// `p(n) = sum_j p(n with block j grown)`, which holds exactly in real
/// arithmetic but goes through log-gamma evaluations here.
pub const EPPF_ADDITIVITY_TOL: f64 = 1e-10;

fn ln_gamma(x: f64) -> f64 {
    statrs::function::gamma::ln_gamma(x)
}

/// Log of the rising factorial `a (a+1) ... (a+m-1)`, for `a > 0`.
fn ln_rising(a: f64, m: usize) -> f64 {
    if m == 0 {
        return 0.0;
    }
    ln_gamma(a + m as f64) - ln_gamma(a)
}

// ---------------------------------------------------------------------------
// Polya sequences
// ---------------------------------------------------------------------------

/// Observation summary of a Polya sequence: the concentration, the base
/// measure, and the multiset of observations so far.
///
/// The state keeps both the distinct atoms (for building predictives) and
/// the flat observation list (so the next draw can copy a uniformly chosen
/// past observation in O(1)).
#[derive(Clone, Debug)]
pub struct PolyaState {
    alpha: f64,
    base: BaseMeasure,
    atoms: Vec<(Point, usize)>,
    index: HashMap<Point, usize>,
    observations: Vec<Point>,
}

impl PolyaState {
    pub fn new(alpha: f64, base: BaseMeasure) -> Result<Self> {
        if !alpha.is_finite() || alpha <= 0.0 {
            return Err(Error::Config(format!("concentration must be positive, got {alpha}")));
        }
        base.validate()?;
        if matches!(base, BaseMeasure::None) {
            return Err(Error::Config("a Polya sequence needs a base measure".into()));
        }
        Ok(PolyaState {
            alpha,
            base,
            atoms: Vec::new(),
            index: HashMap::new(),
            observations: Vec::new(),
        })
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn base(&self) -> &BaseMeasure {
        &self.base
    }

    pub fn n(&self) -> usize {
        self.observations.len()
    }

    /// Distinct observed values with their multiplicities, in order of first
    /// appearance.
    pub fn atoms(&self) -> &[(Point, usize)] {
        &self.atoms
    }

    pub fn observations(&self) -> &[Point] {
        &self.observations
    }

    pub fn observe(&mut self, x: &Point) {
        match self.index.get(x) {
            Some(&i) => self.atoms[i].1 += 1,
            None => {
                self.index.insert(x.clone(), self.atoms.len());
                self.atoms.push((x.clone(), 1));
            }
        }
        self.observations.push(x.clone());
    }

    /// The predictive distribution of the next observation.
    pub fn predictive(&self) -> Result<AtomicMixture> {
        polya_predict(self)
    }
}

/// Predictive of a Polya sequence: each observed atom gets mass
/// `multiplicity / (alpha + n)` and the base keeps `alpha / (alpha + n)`.
/// With no observations this is exactly the base measure.
pub fn polya_predict(s: &PolyaState) -> Result<AtomicMixture> {
    let denom = s.alpha + s.n() as f64;
    let atoms: Vec<(Point, f64)> = s
        .atoms
        .iter()
        .map(|(p, m)| (p.clone(), *m as f64 / denom))
        .collect();
    AtomicMixture::new(atoms, s.alpha / denom, s.base.clone())
}

/// The Polya sequence as a predictive rule.
#[derive(Clone, Debug)]
pub struct PolyaRule {
    alpha: f64,
    base: BaseMeasure,
    space: SpaceKind,
}

/// Infer the space a base measure generates points in.
pub(crate) fn space_of_base(base: &BaseMeasure) -> Result<SpaceKind> {
    match base.variant() {
        Some(Variant::Real) => Ok(SpaceKind::RealLine),
        Some(Variant::Tag) => Ok(SpaceKind::Tagged),
        Some(Variant::Label) => {
            let max = base
                .atoms()
                .iter()
                .filter_map(|p| p.as_label())
                .max()
                .unwrap_or(0);
            Ok(SpaceKind::Categorical { size: max + 1 })
        }
        Some(Variant::Vector) | None => {
            Err(Error::Config("base measure does not determine a usable sample space".into()))
        }
    }
}

impl PolyaRule {
    pub fn new(alpha: f64, base: BaseMeasure) -> Result<Self> {
        let space = space_of_base(&base)?;
        // Validate parameters once, up front.
        PolyaState::new(alpha, base.clone())?;
        Ok(PolyaRule { alpha, base, space })
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn base(&self) -> &BaseMeasure {
        &self.base
    }
}

impl PredictiveRule for PolyaRule {
    type Summary = PolyaState;

    fn name(&self) -> String {
        "polya".into()
    }

    fn space(&self) -> SpaceKind {
        self.space.clone()
    }

    fn initial_summary(&self) -> Self::Summary {
        PolyaState::new(self.alpha, self.base.clone()).expect("parameters validated at construction")
    }

    fn update(&self, summary: &Self::Summary, x: &Point) -> Result<Self::Summary> {
        let mut next = summary.clone();
        next.observe(x);
        Ok(next)
    }

    fn update_in_place(&self, summary: &mut Self::Summary, x: &Point) -> Result<()> {
        summary.observe(x);
        Ok(())
    }

    fn predict(&self, summary: &Self::Summary) -> Result<Predictive> {
        Ok(Predictive::Mixture(polya_predict(summary)?))
    }

    fn sample_next(&self, summary: &Self::Summary, rng: &mut RandomSource) -> Result<Point> {
        let n = summary.n();
        let denom = summary.alpha + n as f64;
        if n == 0 || rng.uniform() < summary.alpha / denom {
            summary.base.sample(rng)
        } else {
            Ok(summary.observations[rng.index(n)].clone())
        }
    }
}

// ---------------------------------------------------------------------------
// Partitions and EPPFs
// ---------------------------------------------------------------------------

/// Block sizes of a partition of `{1..n}`, in order of first appearance.
#[derive(Clone, Debug, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
pub struct PartitionCounts {
    sizes: Vec<usize>,
}

impl PartitionCounts {
    pub fn empty() -> Self {
        PartitionCounts { sizes: Vec::new() }
    }

    pub fn from_sizes(sizes: Vec<usize>) -> Result<Self> {
        if sizes.iter().any(|&s| s == 0) {
            return Err(Error::Config("partition blocks must be nonempty".into()));
        }
        Ok(PartitionCounts { sizes })
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    /// Number of items.
    pub fn n(&self) -> usize {
        self.sizes.iter().sum()
    }

    /// Number of blocks.
    pub fn k(&self) -> usize {
        self.sizes.len()
    }

    /// The partition with item `n + 1` added to block `j` (0-based); `j`
    /// equal to the block count starts a new block.
    pub fn incremented(&self, j: usize) -> Result<PartitionCounts> {
        let mut sizes = self.sizes.clone();
        if j < sizes.len() {
            sizes[j] += 1;
        } else if j == sizes.len() {
            sizes.push(1);
        } else {
            return Err(Error::Domain(format!(
                "cannot grow block {j} of a partition with {} blocks",
                sizes.len()
            )));
        }
        Ok(PartitionCounts { sizes })
    }

    pub fn increment(&mut self, j: usize) -> Result<()> {
        *self = self.incremented(j)?;
        Ok(())
    }
}

/// EPPF of the Chinese-restaurant / Hoppe-urn partition:
/// `alpha^k / (alpha)_n * prod_j (n_j - 1)!`, computed in log space.
pub fn eppf_crp(counts: &PartitionCounts, alpha: f64) -> Result<f64> {
    if !alpha.is_finite() || alpha <= 0.0 {
        return Err(Error::Config(format!("concentration must be positive, got {alpha}")));
    }
    if counts.n() == 0 {
        return Err(Error::Domain("EPPF of an empty partition".into()));
    }
    let mut ln_p = counts.k() as f64 * alpha.ln() - ln_rising(alpha, counts.n());
    for &s in counts.sizes() {
        ln_p += ln_gamma(s as f64);
    }
    Ok(ln_p.exp())
}

/// EPPF of the Pitman-Yor two-parameter family with discount `theta` in
/// [0, 1) and strength `alpha > -theta`.
pub fn eppf_pitman_yor(counts: &PartitionCounts, alpha: f64, theta: f64) -> Result<f64> {
    validate_pitman_yor(alpha, theta)?;
    if counts.n() == 0 {
        return Err(Error::Domain("EPPF of an empty partition".into()));
    }
    let n = counts.n();
    let k = counts.k();
    let mut ln_p = 0.0;
    for i in 1..k {
        ln_p += (alpha + i as f64 * theta).ln();
    }
    for &s in counts.sizes() {
        ln_p += ln_rising(1.0 - theta, s - 1);
    }
    ln_p -= ln_rising(alpha + 1.0, n - 1);
    Ok(ln_p.exp())
}

/// EPPF of symmetric Dirichlet sampling with `classes` classes and total
/// concentration `alpha`: zero once the partition has more blocks than
/// classes.
pub fn eppf_finite_dirichlet(counts: &PartitionCounts, alpha: f64, classes: usize) -> Result<f64> {
    if !alpha.is_finite() || alpha <= 0.0 {
        return Err(Error::Config(format!("concentration must be positive, got {alpha}")));
    }
    if classes == 0 {
        return Err(Error::Config("finite Dirichlet EPPF needs at least one class".into()));
    }
    if counts.n() == 0 {
        return Err(Error::Domain("EPPF of an empty partition".into()));
    }
    let k = counts.k();
    if k > classes {
        return Ok(0.0);
    }
    // K! / (K - k)! * prod_j (alpha/K)_{n_j} / (alpha)_n
    let per_class = alpha / classes as f64;
    let mut ln_p = -ln_rising(alpha, counts.n());
    for i in 0..k {
        ln_p += ((classes - i) as f64).ln();
    }
    for &s in counts.sizes() {
        ln_p += ln_rising(per_class, s);
    }
    Ok(ln_p.exp())
}

fn validate_pitman_yor(alpha: f64, theta: f64) -> Result<()> {
    if !theta.is_finite() || !(0.0..1.0).contains(&theta) {
        return Err(Error::Config(format!("discount must lie in [0, 1), got {theta}")));
    }
    if !alpha.is_finite() || alpha <= -theta {
        return Err(Error::Config(format!(
            "strength must exceed -discount, got strength {alpha} with discount {theta}"
        )));
    }
    Ok(())
}

/// An exchangeable partition probability function together with a name for
/// reports. Evaluators must satisfy `p((1)) = 1` and the additivity
/// identity; both are validated lazily, on the partitions actually visited
/// by the rules and checks that consume an `EppfSpec`.
#[derive(Clone)]
pub struct EppfSpec {
    name: String,
    eval: Arc<dyn Fn(&PartitionCounts) -> Result<f64> + Send + Sync>,
}

impl EppfSpec {
    pub fn new(
        name: impl Into<String>,
        eval: impl Fn(&PartitionCounts) -> Result<f64> + Send + Sync + 'static,
    ) -> Self {
        EppfSpec { name: name.into(), eval: Arc::new(eval) }
    }

    pub fn crp(alpha: f64) -> Result<Self> {
        eppf_crp(&PartitionCounts::from_sizes(vec![1])?, alpha)?;
        Ok(Self::new(format!("crp(alpha={alpha})"), move |c| eppf_crp(c, alpha)))
    }

    pub fn pitman_yor(alpha: f64, theta: f64) -> Result<Self> {
        validate_pitman_yor(alpha, theta)?;
        Ok(Self::new(
            format!("pitman-yor(alpha={alpha}, theta={theta})"),
            move |c| eppf_pitman_yor(c, alpha, theta),
        ))
    }

    pub fn finite_dirichlet(alpha: f64, classes: usize) -> Result<Self> {
        eppf_finite_dirichlet(&PartitionCounts::from_sizes(vec![1])?, alpha, classes)?;
        Ok(Self::new(
            format!("finite-dirichlet(alpha={alpha}, classes={classes})"),
            move |c| eppf_finite_dirichlet(c, alpha, classes),
        ))
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn eval(&self, counts: &PartitionCounts) -> Result<f64> {
        let p = (self.eval)(counts)?;
        if !p.is_finite() || p < 0.0 {
            return Err(Error::Numeric(format!(
                "EPPF {} returned {p} at counts {:?}",
                self.name,
                counts.sizes()
            )));
        }
        Ok(p)
    }
}

impl std::fmt::Debug for EppfSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("EppfSpec").field("name", &self.name).finish()
    }
}

// ---------------------------------------------------------------------------
// Species sampling
// ---------------------------------------------------------------------------

/// One-step predictive of a species-sampling sequence driven by an EPPF:
/// species `j` gets weight `p(counts with block j grown) / p(counts)`, and a
/// new species arrives with the weight of starting a fresh block.
///
/// `atoms` are the distinct observed species, aligned with `counts`. With no
/// observations the predictive is the whole base measure. Because the weight
/// ratios pass through log-gamma arithmetic, their sum is validated against
/// [`EPPF_ADDITIVITY_TOL`] and then normalized exactly.
pub fn species_predict(
    counts: &PartitionCounts,
    atoms: &[Point],
    eppf: &EppfSpec,
    base: &BaseMeasure,
) -> Result<AtomicMixture> {
    if atoms.len() != counts.k() {
        return Err(Error::Config(format!(
            "{} atoms but {} partition blocks",
            atoms.len(),
            counts.k()
        )));
    }
    if counts.k() == 0 {
        return AtomicMixture::from_base(base.clone());
    }
    let p = eppf.eval(counts)?;
    if p <= 0.0 {
        return Err(Error::NullConditioning(format!(
            "EPPF {} assigns zero probability to the observed partition {:?}",
            eppf.name(),
            counts.sizes()
        )));
    }
    let k = counts.k();
    let mut weights = Vec::with_capacity(k + 1);
    for j in 0..=k {
        weights.push(eppf.eval(&counts.incremented(j)?)? / p);
    }
    let total: f64 = weights.iter().sum();
    if (total - 1.0).abs() > EPPF_ADDITIVITY_TOL {
        return Err(Error::Config(format!(
            "EPPF {} violates additivity at counts {:?}: successor weights sum to {total}",
            eppf.name(),
            counts.sizes()
        )));
    }
    for w in &mut weights {
        *w /= total;
    }
    let new_weight = weights.pop().expect("k + 1 weights");
    let atom_weights: Vec<(Point, f64)> =
        atoms.iter().cloned().zip(weights.into_iter()).collect();
    AtomicMixture::new(atom_weights, new_weight, base.clone())
}

/// Predictive weights of the Pitman-Yor process in closed form: existing
/// species `j` gets `(n_j - theta) / (alpha + n)` and a new species gets
/// `(alpha + k * theta) / (alpha + n)`. Returns the per-block weights and
/// the new-species weight.
pub fn py_weights(counts: &PartitionCounts, alpha: f64, theta: f64) -> Result<(Vec<f64>, f64)> {
    validate_pitman_yor(alpha, theta)?;
    let n = counts.n() as f64;
    let k = counts.k() as f64;
    let denom = alpha + n;
    let existing: Vec<f64> = counts.sizes().iter().map(|&s| (s as f64 - theta) / denom).collect();
    if existing.iter().any(|w| *w < 0.0) {
        return Err(Error::Numeric("negative Pitman-Yor weight".into()));
    }
    Ok((existing, (alpha + k * theta) / denom))
}

/// Species-sampling sequence as a predictive rule: the partition structure
/// evolves by the EPPF's sequential allocation, species values come from the
/// base measure.
#[derive(Clone, Debug)]
pub struct SpeciesRule {
    eppf: EppfSpec,
    base: BaseMeasure,
    space: SpaceKind,
}

/// Summary of a species-sampling chain: the partition plus the species seen,
/// in order of first appearance.
#[derive(Clone, Debug)]
pub struct SpeciesState {
    counts: PartitionCounts,
    atoms: Vec<Point>,
    index: HashMap<Point, usize>,
}

impl SpeciesState {
    pub fn counts(&self) -> &PartitionCounts {
        &self.counts
    }

    pub fn atoms(&self) -> &[Point] {
        &self.atoms
    }
}

impl SpeciesRule {
    pub fn new(eppf: EppfSpec, base: BaseMeasure) -> Result<Self> {
        base.validate()?;
        let space = space_of_base(&base)?;
        Ok(SpeciesRule { eppf, base, space })
    }

    pub fn eppf(&self) -> &EppfSpec {
        &self.eppf
    }
}

impl PredictiveRule for SpeciesRule {
    type Summary = SpeciesState;

    fn name(&self) -> String {
        format!("species[{}]", self.eppf.name())
    }

    fn space(&self) -> SpaceKind {
        self.space.clone()
    }

    fn initial_summary(&self) -> Self::Summary {
        SpeciesState {
            counts: PartitionCounts::empty(),
            atoms: Vec::new(),
            index: HashMap::new(),
        }
    }

    fn update(&self, summary: &Self::Summary, x: &Point) -> Result<Self::Summary> {
        let mut next = summary.clone();
        self.update_in_place(&mut next, x)?;
        Ok(next)
    }

    fn update_in_place(&self, summary: &mut Self::Summary, x: &Point) -> Result<()> {
        match summary.index.get(x) {
            Some(&j) => summary.counts.increment(j)?,
            None => {
                let j = summary.atoms.len();
                summary.index.insert(x.clone(), j);
                summary.atoms.push(x.clone());
                summary.counts.increment(j)?;
            }
        }
        Ok(())
    }

    fn predict(&self, summary: &Self::Summary) -> Result<Predictive> {
        Ok(Predictive::Mixture(species_predict(
            &summary.counts,
            &summary.atoms,
            &self.eppf,
            &self.base,
        )?))
    }
}

// ---------------------------------------------------------------------------
// Kernel-smoothed Polya predictives
// ---------------------------------------------------------------------------

/// A Markov kernel `x -> K(. | x)` used to smooth each observation's
/// contribution to the predictive. Outputs are validated mixtures, so an
/// unnormalized kernel surfaces as a configuration error at use time.
#[derive(Clone)]
pub struct SmoothingKernel {
    name: String,
    map: Arc<dyn Fn(&Point) -> Result<AtomicMixture> + Send + Sync>,
}

impl SmoothingKernel {
    pub fn new(
        name: impl Into<String>,
        map: impl Fn(&Point) -> Result<AtomicMixture> + Send + Sync + 'static,
    ) -> Self {
        SmoothingKernel { name: name.into(), map: Arc::new(map) }
    }

    /// The identity kernel `K(. | x) = delta_x`.
    pub fn point_mass() -> Self {
        Self::new("identity", |x| Ok(AtomicMixture::point_mass_at(x.clone())))
    }

    /// Kernel on a categorical space given by a row-stochastic matrix:
    /// row `i` is the distribution of `K(. | labels[i])`.
    pub fn row_stochastic(labels: Vec<Point>, rows: Vec<Vec<f64>>) -> Result<Self> {
        if labels.len() != rows.len() {
            return Err(Error::Config(format!(
                "{} labels but {} kernel rows",
                labels.len(),
                rows.len()
            )));
        }
        let mut table: HashMap<Point, AtomicMixture> = HashMap::new();
        for (l, row) in labels.iter().zip(rows.into_iter()) {
            let atoms: Vec<(Point, f64)> =
                labels.iter().cloned().zip(row.into_iter()).collect();
            table.insert(l.clone(), AtomicMixture::purely_atomic(atoms)?);
        }
        Ok(Self::new("row-stochastic", move |x| {
            table
                .get(x)
                .cloned()
                .ok_or_else(|| Error::Config(format!("kernel has no row for {}", x.describe())))
        }))
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn apply(&self, x: &Point) -> Result<AtomicMixture> {
        (self.map)(x)
    }
}

impl std::fmt::Debug for SmoothingKernel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SmoothingKernel").field("name", &self.name).finish()
    }
}

/// Kernel-smoothed predictive:
/// `P_n = alpha/(alpha+n) * P_0 + 1/(alpha+n) * sum_i K(. | X_i)`.
/// With the identity kernel this reduces, bit for bit, to [`polya_predict`].
pub fn kernel_ds_predict(s: &PolyaState, kernel: &SmoothingKernel) -> Result<AtomicMixture> {
    let denom = s.alpha() + s.n() as f64;
    let base_part = AtomicMixture::from_base(s.base().clone())?;
    let mut smoothed: Vec<AtomicMixture> = Vec::with_capacity(s.atoms().len());
    for (p, _) in s.atoms() {
        smoothed.push(kernel.apply(p)?);
    }
    let mut parts: Vec<(f64, &AtomicMixture)> = Vec::with_capacity(smoothed.len() + 1);
    parts.push((s.alpha() / denom, &base_part));
    for ((_, m), k) in s.atoms().iter().zip(smoothed.iter()) {
        parts.push((*m as f64 / denom, k));
    }
    convex_sum_ref(&parts)
}

fn convex_sum_ref(parts: &[(f64, &AtomicMixture)]) -> Result<AtomicMixture> {
    crate::measure::convex_sum(parts)
}

/// The kernel-smoothed sequence as a predictive rule. The summary is the
/// same Polya state; only the predictive differs.
#[derive(Clone, Debug)]
pub struct KernelPolyaRule {
    inner: PolyaRule,
    kernel: SmoothingKernel,
}

impl KernelPolyaRule {
    pub fn new(alpha: f64, base: BaseMeasure, kernel: SmoothingKernel) -> Result<Self> {
        Ok(KernelPolyaRule { inner: PolyaRule::new(alpha, base)?, kernel })
    }
}

impl PredictiveRule for KernelPolyaRule {
    type Summary = PolyaState;

    fn name(&self) -> String {
        format!("kernel-polya[{}]", self.kernel.name())
    }

    fn space(&self) -> SpaceKind {
        self.inner.space()
    }

    fn initial_summary(&self) -> Self::Summary {
        self.inner.initial_summary()
    }

    fn update(&self, summary: &Self::Summary, x: &Point) -> Result<Self::Summary> {
        self.inner.update(summary, x)
    }

    fn update_in_place(&self, summary: &mut Self::Summary, x: &Point) -> Result<()> {
        self.inner.update_in_place(summary, x)
    }

    fn predict(&self, summary: &Self::Summary) -> Result<Predictive> {
        Ok(Predictive::Mixture(kernel_ds_predict(summary, &self.kernel)?))
    }
}

// ---------------------------------------------------------------------------
// Indian buffet process
// ---------------------------------------------------------------------------

/// State of an Indian buffet process: how many customers have passed and how
/// often each dish has been taken. Dish ids are assigned sequentially.
#[derive(Clone, Debug, serde::Serialize, serde::Deserialize)]
pub struct IbpState {
    theta: f64,
    customers: usize,
    dish_counts: Vec<(u64, usize)>,
    dishes_created: u64,
}

/// One customer's plate: every dish they took (new dishes are the trailing
/// `new_dishes` entries) and how many of those were new.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct IbpStep {
    pub plate: Vec<u64>,
    pub new_dishes: usize,
}

impl IbpState {
    pub fn new(theta: f64) -> Result<Self> {
        if !theta.is_finite() || theta <= 0.0 {
            return Err(Error::Config(format!("buffet rate must be positive, got {theta}")));
        }
        Ok(IbpState { theta, customers: 0, dish_counts: Vec::new(), dishes_created: 0 })
    }

    pub fn theta(&self) -> f64 {
        self.theta
    }

    pub fn customers(&self) -> usize {
        self.customers
    }

    pub fn dish_counts(&self) -> &[(u64, usize)] {
        &self.dish_counts
    }

    pub fn dishes_created(&self) -> u64 {
        self.dishes_created
    }
}

/// Advance the buffet by one customer: customer `n + 1` takes each existing
/// dish independently with probability `count / (n + 1)`, then draws
/// `Poisson(theta / (n + 1))` new dishes. The first customer takes
/// `Poisson(theta)` dishes.
pub fn ibp_next(s: &mut IbpState, rng: &mut RandomSource) -> Result<IbpStep> {
    let denom = (s.customers + 1) as f64;
    let mut plate = Vec::new();
    for (dish, count) in s.dish_counts.iter_mut() {
        if rng.uniform() < *count as f64 / denom {
            *count += 1;
            plate.push(*dish);
        }
    }
    let new_dishes = rng.poisson(s.theta / denom)? as usize;
    for _ in 0..new_dishes {
        s.dishes_created += 1;
        let dish = s.dishes_created;
        s.dish_counts.push((dish, 1));
        plate.push(dish);
    }
    s.customers += 1;
    Ok(IbpStep { plate, new_dishes })
}

// ---------------------------------------------------------------------------
// Tests
// ---------------------------------------------------------------------------

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::{condition, PredictiveRule};
    use crate::measure::DiscreteDistribution;

    const TOL: f64 = 1e-12;

    fn assert_close(a: f64, b: f64, tol: f64) {
        assert!((a - b).abs() <= tol, "{a} vs {b} (tol {tol:e})");
    }

    fn uniform_base(k: u32) -> BaseMeasure {
        BaseMeasure::Categorical(
            DiscreteDistribution::uniform((0..k).map(Point::Label).collect()).unwrap(),
        )
    }

    fn counts(sizes: &[usize]) -> PartitionCounts {
        PartitionCounts::from_sizes(sizes.to_vec()).unwrap()
    }

    fn tags(k: usize) -> Vec<Point> {
        (0..k)
            .map(|j| Point::Tag(crate::point::AtomTag { stream: 0, counter: j as u64 + 1 }))
            .collect()
    }

    // ---------- Polya predictives ----------

    #[test]
    fn empty_state_predicts_the_base_exactly() {
        let s = PolyaState::new(2.0, uniform_base(2)).unwrap();
        let p = polya_predict(&s).unwrap();
        assert!(p.atoms().is_empty());
        assert_eq!(p.diffuse_weight(), 1.0);
    }

    #[test]
    fn single_observation_gives_three_quarters() {
        let mut s = PolyaState::new(1.0, uniform_base(2)).unwrap();
        s.observe(&Point::Label(1));
        let p = polya_predict(&s).unwrap();
        assert_close(p.point_mass(&Point::Label(1)), 0.75, TOL);
    }

    #[test]
    fn predictive_matches_conjugate_posterior_on_short_sequences() {
        // Dirichlet-multinomial oracle: mass of {j} given counts n_j is
        // (alpha * p0_j + n_j) / (alpha + n). Checked over all ternary
        // sequences of length <= 4.
        let alpha = 1.7;
        let p0 = [0.2, 0.3, 0.5];
        let base = BaseMeasure::Categorical(
            DiscreteDistribution::new(
                vec![Point::Label(0), Point::Label(1), Point::Label(2)],
                p0.to_vec(),
            )
            .unwrap(),
        );
        let rule = PolyaRule::new(alpha, base).unwrap();
        for len in 0..=4usize {
            for code in 0..3usize.pow(len as u32) {
                let mut c = code;
                let mut seq = Vec::with_capacity(len);
                let mut tally = [0usize; 3];
                for _ in 0..len {
                    let d = c % 3;
                    c /= 3;
                    tally[d] += 1;
                    seq.push(Point::Label(d as u32));
                }
                let state = condition(&rule, &seq).unwrap();
                let pred = rule.predict(&state.summary).unwrap();
                for j in 0..3usize {
                    let oracle = (alpha * p0[j] + tally[j] as f64) / (alpha + len as f64);
                    assert_close(pred.point_mass(&Point::Label(j as u32)), oracle, TOL);
                }
            }
        }
    }

    #[test]
    fn permutation_invariance_of_the_predictive_state() {
        let rule = PolyaRule::new(0.9, uniform_base(3)).unwrap();
        let data = vec![Point::Label(2), Point::Label(0), Point::Label(2), Point::Label(1)];
        let mut permuted = data.clone();
        permuted.swap(0, 3);
        permuted.swap(1, 2);
        let a = condition(&rule, &data).unwrap();
        let b = condition(&rule, &permuted).unwrap();
        for j in 0..3u32 {
            assert_close(
                rule.predict(&a.summary).unwrap().point_mass(&Point::Label(j)),
                rule.predict(&b.summary).unwrap().point_mass(&Point::Label(j)),
                TOL,
            );
        }
    }

    // ---------- EPPFs ----------

    #[test]
    fn crp_eppf_worked_values() {
        assert_close(eppf_crp(&counts(&[1]), 1.0).unwrap(), 1.0, TOL);
        assert_close(eppf_crp(&counts(&[2]), 1.0).unwrap(), 0.5, TOL);
        assert_close(eppf_crp(&counts(&[2, 1]), 1.0).unwrap(), 1.0 / 6.0, TOL);
    }

    #[test]
    fn crp_eppf_rejects_empty_partitions() {
        assert!(matches!(
            eppf_crp(&PartitionCounts::empty(), 1.0),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn pitman_yor_reduces_to_crp_at_zero_discount() {
        for sizes in [vec![3usize], vec![2, 2], vec![3, 2, 1], vec![1, 1, 1, 1]] {
            let c = counts(&sizes);
            assert_close(
                eppf_pitman_yor(&c, 1.3, 0.0).unwrap(),
                eppf_crp(&c, 1.3).unwrap(),
                1e-13,
            );
        }
    }

    #[test]
    fn pitman_yor_parameter_validation() {
        assert!(eppf_pitman_yor(&counts(&[1]), 1.0, 1.0).is_err());
        assert!(eppf_pitman_yor(&counts(&[1]), -0.5, 0.3).is_err());
        // Negative strength is fine while it exceeds -discount.
        assert!(eppf_pitman_yor(&counts(&[2, 1]), -0.2, 0.5).is_ok());
    }

    #[test]
    fn finite_dirichlet_eppf_vanishes_beyond_class_count() {
        let c = counts(&[1, 1, 1]);
        assert_close(eppf_finite_dirichlet(&c, 1.0, 2).unwrap(), 0.0, 0.0);
        assert!(eppf_finite_dirichlet(&c, 1.0, 3).unwrap() > 0.0);
    }

    #[test]
    fn eppf_matches_sequential_allocation_product() {
        // Build the partition blockwise and multiply the one-step allocation
        // weights; the product must equal the closed form.
        let alpha = 1.4;
        let theta = 0.35;
        for sizes in [vec![3usize], vec![2, 2], vec![3, 2, 1]] {
            let c = counts(&sizes);
            // CRP
            let mut prod = 1.0;
            let mut placed = 0usize;
            for (j, &s) in sizes.iter().enumerate() {
                for r in 0..s {
                    if r == 0 {
                        prod *= alpha / (alpha + placed as f64);
                    } else {
                        prod *= r as f64 / (alpha + placed as f64);
                    }
                    placed += 1;
                    let _ = j;
                }
            }
            assert_close(eppf_crp(&c, alpha).unwrap(), prod, 1e-13);

            // Pitman-Yor
            let mut prod = 1.0;
            let mut placed = 0usize;
            for (j, &s) in sizes.iter().enumerate() {
                for r in 0..s {
                    if r == 0 {
                        prod *= (alpha + j as f64 * theta) / (alpha + placed as f64);
                    } else {
                        prod *= (r as f64 - theta) / (alpha + placed as f64);
                    }
                    placed += 1;
                }
            }
            assert_close(eppf_pitman_yor(&c, alpha, theta).unwrap(), prod, 1e-13);
        }
    }

    // ---------- species sampling ----------

    #[test]
    fn crp_species_weights_match_closed_form() {
        let eppf = EppfSpec::crp(2.5).unwrap();
        let c = counts(&[3, 1, 2]);
        let atoms = tags(3);
        let m = species_predict(&c, &atoms, &eppf, &BaseMeasure::Tags).unwrap();
        let denom = 2.5 + 6.0;
        for (j, &s) in c.sizes().iter().enumerate() {
            assert_close(m.point_mass(&atoms[j]), s as f64 / denom, TOL);
        }
        assert_close(m.diffuse_weight(), 2.5 / denom, TOL);
    }

    #[test]
    fn finite_dirichlet_species_weights_match_closed_form() {
        let classes = 5usize;
        let alpha = 2.0;
        let eppf = EppfSpec::finite_dirichlet(alpha, classes).unwrap();
        let c = counts(&[2, 1]);
        let atoms = tags(2);
        let m = species_predict(&c, &atoms, &eppf, &BaseMeasure::Tags).unwrap();
        let per = alpha / classes as f64;
        let denom = alpha + 3.0;
        assert_close(m.point_mass(&atoms[0]), (2.0 + per) / denom, 1e-12);
        assert_close(m.point_mass(&atoms[1]), (1.0 + per) / denom, 1e-12);
        assert_close(
            m.diffuse_weight(),
            (classes as f64 - 2.0) * per / denom,
            1e-12,
        );
    }

    #[test]
    fn species_prediction_on_empty_counts_is_the_base() {
        let eppf = EppfSpec::crp(1.0).unwrap();
        let m = species_predict(&PartitionCounts::empty(), &[], &eppf, &BaseMeasure::Tags).unwrap();
        assert_eq!(m.diffuse_weight(), 1.0);
        assert!(m.atoms().is_empty());
    }

    #[test]
    fn species_prediction_rejects_null_partitions() {
        // Two blocks under a single-class Dirichlet is impossible.
        let eppf = EppfSpec::finite_dirichlet(1.0, 1).unwrap();
        let c = counts(&[1, 1]);
        let atoms = vec![Point::Label(0), Point::Label(1)];
        let err = species_predict(&c, &atoms, &eppf, &BaseMeasure::Tags);
        assert!(matches!(err, Err(Error::NullConditioning(_))));
    }

    #[test]
    fn species_prediction_rejects_mismatched_atom_counts() {
        let eppf = EppfSpec::crp(1.0).unwrap();
        let err = species_predict(&counts(&[1, 1]), &[Point::Label(0)], &eppf, &BaseMeasure::Tags);
        assert!(matches!(err, Err(Error::Config(_))));
    }

    // ---------- Pitman-Yor weights ----------

    #[test]
    fn py_weights_worked_example() {
        let (existing, fresh) = py_weights(&counts(&[1]), 1.0, 0.5).unwrap();
        assert_close(existing[0], 0.25, TOL);
        assert_close(fresh, 0.75, TOL);
    }

    #[test]
    fn py_weights_at_zero_discount_are_crp_weights() {
        let c = counts(&[3, 1]);
        let (existing, fresh) = py_weights(&c, 2.0, 0.0).unwrap();
        assert_close(existing[0], 3.0 / 6.0, TOL);
        assert_close(existing[1], 1.0 / 6.0, TOL);
        assert_close(fresh, 2.0 / 6.0, TOL);
    }

    #[test]
    fn py_weight_sweep_sums_to_one() {
        // 1000 seeded random (alpha, theta, counts) configurations.
        let mut rng = RandomSource::new(99);
        for _ in 0..1000 {
            let theta = rng.uniform() * 0.95;
            let alpha = -theta + 0.05 + rng.uniform() * 3.0;
            let k = 1 + rng.index(6);
            let sizes: Vec<usize> = (0..k).map(|_| 1 + rng.index(5)).collect();
            let c = counts(&sizes);
            let (existing, fresh) = py_weights(&c, alpha, theta).unwrap();
            let total: f64 = existing.iter().sum::<f64>() + fresh;
            assert_close(total, 1.0, 1e-12);
            assert!(existing.iter().all(|w| *w >= 0.0) && fresh >= 0.0);
        }
    }

    #[test]
    fn py_species_rule_matches_direct_weights() {
        // The EPPF-ratio path and the closed-form weights must agree.
        let alpha = 0.8;
        let theta = 0.25;
        let eppf = EppfSpec::pitman_yor(alpha, theta).unwrap();
        let c = counts(&[4, 2, 1]);
        let atoms = tags(3);
        let m = species_predict(&c, &atoms, &eppf, &BaseMeasure::Tags).unwrap();
        let (existing, fresh) = py_weights(&c, alpha, theta).unwrap();
        for (j, w) in existing.iter().enumerate() {
            assert_close(m.point_mass(&atoms[j]), *w, 1e-12);
        }
        assert_close(m.diffuse_weight(), fresh, 1e-12);
    }

    // ---------- kernel smoothing ----------

    #[test]
    fn identity_kernel_reduces_to_polya_bit_for_bit() {
        let mut s = PolyaState::new(1.25, uniform_base(3)).unwrap();
        for x in [0u32, 1, 1, 2, 0, 1] {
            s.observe(&Point::Label(x));
        }
        let plain = polya_predict(&s).unwrap();
        let smoothed = kernel_ds_predict(&s, &SmoothingKernel::point_mass()).unwrap();
        assert_eq!(plain, smoothed);
    }

    #[test]
    fn kernel_prediction_with_no_observations_is_the_base() {
        let s = PolyaState::new(2.0, uniform_base(2)).unwrap();
        let kernel = SmoothingKernel::point_mass();
        let m = kernel_ds_predict(&s, &kernel).unwrap();
        assert_eq!(m.diffuse_weight(), 1.0);
        assert!(m.atoms().is_empty());
    }

    #[test]
    fn kernel_smoothing_matches_hand_expansion() {
        let alpha = 1.0;
        let labels = vec![Point::Label(0), Point::Label(1)];
        let rows = vec![vec![0.9, 0.1], vec![0.2, 0.8]];
        let kernel = SmoothingKernel::row_stochastic(labels.clone(), rows.clone()).unwrap();
        let mut s = PolyaState::new(alpha, uniform_base(2)).unwrap();
        let data = [0u32, 1, 1];
        for x in data {
            s.observe(&Point::Label(x));
        }
        let m = kernel_ds_predict(&s, &kernel).unwrap();
        // Hand expansion: alpha/(alpha+3) * [0.5, 0.5]
        //               + 1/(alpha+3) * (row0 + 2 * row1)
        let denom = alpha + 3.0;
        for j in 0..2usize {
            let expected = alpha / denom * 0.5
                + (rows[0][j] + 2.0 * rows[1][j]) / denom;
            assert_close(m.point_mass(&Point::Label(j as u32)), expected, TOL);
        }
    }

    #[test]
    fn unnormalized_kernel_output_is_rejected() {
        let kernel = SmoothingKernel::new("broken", |_x| {
            AtomicMixture::purely_atomic(vec![(Point::Label(0), 0.5)])
        });
        let mut s = PolyaState::new(1.0, uniform_base(2)).unwrap();
        s.observe(&Point::Label(0));
        assert!(matches!(kernel_ds_predict(&s, &kernel), Err(Error::Config(_))));
    }

    // ---------- Indian buffet ----------

    #[test]
    fn first_customer_takes_poisson_theta_dishes() {
        let theta = 2.0;
        let root = RandomSource::new(17);
        let reps = 10_000usize;
        let mut total = 0usize;
        for i in 0..reps {
            let mut rng = root.branch(i as u64);
            let mut s = IbpState::new(theta).unwrap();
            total += ibp_next(&mut s, &mut rng).unwrap().plate.len();
        }
        let mean = total as f64 / reps as f64;
        let band = 3.0 * (theta / reps as f64).sqrt();
        assert!((mean - theta).abs() <= band, "mean {mean}, band {band}");
    }

    #[test]
    fn unanimously_shared_dish_is_taken_with_probability_n_over_n_plus_one() {
        let n = 4usize;
        let root = RandomSource::new(23);
        let reps = 20_000usize;
        let mut taken = 0usize;
        for i in 0..reps {
            let mut rng = root.branch(i as u64);
            let mut s = IbpState::new(0.5).unwrap();
            // Hand-build a state where one dish was taken by all n customers.
            s.customers = n;
            s.dishes_created = 1;
            s.dish_counts = vec![(1, n)];
            let step = ibp_next(&mut s, &mut rng).unwrap();
            if step.plate.contains(&1) {
                taken += 1;
            }
        }
        let p = n as f64 / (n as f64 + 1.0);
        let freq = taken as f64 / reps as f64;
        let band = 3.0 * (p * (1.0 - p) / reps as f64).sqrt();
        assert!((freq - p).abs() <= band, "freq {freq}, p {p}, band {band}");
    }

    #[test]
    fn expected_dish_count_grows_harmonically() {
        let theta = 1.5;
        let n = 50usize;
        let reps = 2_000usize;
        let root = RandomSource::new(31);
        let mut total = 0u64;
        for i in 0..reps {
            let mut rng = root.branch(i as u64);
            let mut s = IbpState::new(theta).unwrap();
            for _ in 0..n {
                ibp_next(&mut s, &mut rng).unwrap();
            }
            total += s.dishes_created();
        }
        let harmonic: f64 = (1..=n).map(|i| 1.0 / i as f64).sum();
        let expected = theta * harmonic;
        // Total dish count is a sum of independent Poissons, so its variance
        // equals its mean.
        let band = 3.0 * (expected / reps as f64).sqrt();
        let mean = total as f64 / reps as f64;
        assert!((mean - expected).abs() <= band, "mean {mean}, expected {expected}, band {band}");
    }

    #[test]
    fn ibp_state_bookkeeping() {
        let mut rng = RandomSource::new(41);
        let mut s = IbpState::new(1.0).unwrap();
        let mut seen = std::collections::HashSet::new();
        for _ in 0..20 {
            let step = ibp_next(&mut s, &mut rng).unwrap();
            // New dishes really are new ids.
            for d in &step.plate[step.plate.len() - step.new_dishes..] {
                assert!(seen.insert(*d));
            }
            // Existing dishes were seen before.
            for d in &step.plate[..step.plate.len() - step.new_dishes] {
                assert!(seen.contains(d));
            }
        }
        assert_eq!(s.customers(), 20);
        assert_eq!(s.dishes_created() as usize, seen.len());
    }
}
