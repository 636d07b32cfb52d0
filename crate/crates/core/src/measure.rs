//! Probability measures: finite distributions, base measures, and atomic
//! mixtures of the form `sum_i w_i delta_{x_i} + w_0 * Base`.
//!
//! Every constructor validates normalization to [`MASS_TOL`]; operations that
//! build new measures (mixing, convex sums, predictive updates) go back
//! through the constructors, so an unnormalized measure can never circulate.

use serde::{Deserialize, Serialize};
use statrs::distribution::ContinuousCDF;

use crate::error::{Error, Result};
use crate::point::{Point, Variant};
use crate::random::RandomSource;

/// Absolute tolerance for total-mass checks.
pub const MASS_TOL: f64 = 1e-12;

/// Compensated summation. Mass checks over states with hundreds of thousands
/// of atoms would otherwise drown in accumulation error.
pub(crate) fn kahan_sum<I: IntoIterator<Item = f64>>(values: I) -> f64 {
    let mut sum = 0.0;
    let mut comp = 0.0;
    for v in values {
        let y = v - comp;
        let t = sum + y;
        comp = (t - sum) - y;
        sum = t;
    }
    sum
}

/// A finitely supported probability distribution with distinct support
/// points, all of one variant.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiscreteDistribution {
    labels: Vec<Point>,
    probs: Vec<f64>,
}

impl DiscreteDistribution {
    pub fn new(labels: Vec<Point>, probs: Vec<f64>) -> Result<Self> {
        if labels.is_empty() {
            return Err(Error::Config("discrete distribution needs at least one label".into()));
        }
        if labels.len() != probs.len() {
            return Err(Error::Config(format!(
                "{} labels but {} probabilities",
                labels.len(),
                probs.len()
            )));
        }
        let variant = labels[0].variant();
        if labels.iter().any(|l| l.variant() != variant) {
            return Err(Error::Config("labels mix point variants".into()));
        }
        let mut seen = std::collections::HashSet::with_capacity(labels.len());
        for l in &labels {
            if !seen.insert(l.clone()) {
                return Err(Error::Config(format!("duplicate label {}", l.describe())));
            }
        }
        for (l, &p) in labels.iter().zip(probs.iter()) {
            if !p.is_finite() || !(0.0..=1.0).contains(&p) {
                return Err(Error::Config(format!(
                    "probability {p} of label {} is outside [0, 1]",
                    l.describe()
                )));
            }
        }
        let total = kahan_sum(probs.iter().copied());
        if (total - 1.0).abs() > MASS_TOL {
            return Err(Error::Config(format!(
                "probabilities sum to {total}, not 1 (tolerance {MASS_TOL:e})"
            )));
        }
        Ok(DiscreteDistribution { labels, probs })
    }

    /// Uniform distribution over the given labels.
    pub fn uniform(labels: Vec<Point>) -> Result<Self> {
        let n = labels.len();
        if n == 0 {
            return Err(Error::Config("uniform distribution needs at least one label".into()));
        }
        let p = 1.0 / n as f64;
        // Assign the last probability by complement so the total is exact.
        let mut probs = vec![p; n];
        probs[n - 1] = 1.0 - p * (n - 1) as f64;
        Self::new(labels, probs)
    }

    /// Distribution on labels {0, 1} with success probability `p_one`.
    pub fn binary(p_one: f64) -> Result<Self> {
        Self::new(vec![Point::Label(0), Point::Label(1)], vec![1.0 - p_one, p_one])
    }

    pub fn labels(&self) -> &[Point] {
        &self.labels
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn variant(&self) -> Variant {
        self.labels[0].variant()
    }

    pub fn mass(&self, p: &Point) -> f64 {
        self.labels
            .iter()
            .position(|l| l == p)
            .map(|i| self.probs[i])
            .unwrap_or(0.0)
    }

    pub fn sample(&self, rng: &mut RandomSource) -> Point {
        let u = rng.uniform();
        let mut acc = 0.0;
        for (l, &p) in self.labels.iter().zip(self.probs.iter()) {
            acc += p;
            if u < acc {
                return l.clone();
            }
        }
        // Guard against the cumulative sum rounding just below 1.
        self.labels[self.labels.len() - 1].clone()
    }
}

/// Base measure of an atomic mixture: where the diffuse part of the mass
/// lives, and the source of fresh atoms.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum BaseMeasure {
    /// No diffuse part.
    None,
    /// Uniform on [lo, hi].
    Uniform { lo: f64, hi: f64 },
    Gaussian { mean: f64, sd: f64 },
    /// An atomic "base": draws repeat the given labels.
    Categorical(DiscreteDistribution),
    /// A diffuse measure on an abstract space; every draw is a fresh,
    /// never-before-seen atom identified by a tag.
    Tags,
    /// Mixture of Gaussians with a shared standard deviation, used as the
    /// predictive of kernel mixtures on the real line.
    GaussianMixture { means: Vec<f64>, sd: f64, weights: Vec<f64> },
}

impl BaseMeasure {
    pub fn validate(&self) -> Result<()> {
        match self {
            BaseMeasure::None | BaseMeasure::Tags => Ok(()),
            BaseMeasure::Uniform { lo, hi } => {
                if !(lo.is_finite() && hi.is_finite() && lo < hi) {
                    return Err(Error::Config(format!("uniform base needs lo < hi, got [{lo}, {hi}]")));
                }
                Ok(())
            }
            BaseMeasure::Gaussian { mean, sd } => {
                if !(mean.is_finite() && sd.is_finite() && *sd > 0.0) {
                    return Err(Error::Config(format!("gaussian base needs finite mean and sd > 0, got ({mean}, {sd})")));
                }
                Ok(())
            }
            BaseMeasure::Categorical(_) => Ok(()),
            BaseMeasure::GaussianMixture { means, sd, weights } => {
                if means.is_empty() || means.len() != weights.len() {
                    return Err(Error::Config("gaussian mixture base needs matching, nonempty means and weights".into()));
                }
                if !means.iter().all(|m| m.is_finite()) || !sd.is_finite() || *sd <= 0.0 {
                    return Err(Error::Config("gaussian mixture base needs finite means and sd > 0".into()));
                }
                let total = kahan_sum(weights.iter().copied());
                if weights.iter().any(|w| *w < 0.0) || (total - 1.0).abs() > MASS_TOL {
                    return Err(Error::Config(format!("gaussian mixture base weights sum to {total}, not 1")));
                }
                Ok(())
            }
        }
    }

    /// Variant of the points this base produces, if it produces any.
    pub fn variant(&self) -> Option<Variant> {
        match self {
            BaseMeasure::None => None,
            BaseMeasure::Uniform { .. }
            | BaseMeasure::Gaussian { .. }
            | BaseMeasure::GaussianMixture { .. } => Some(Variant::Real),
            BaseMeasure::Categorical(d) => Some(d.variant()),
            BaseMeasure::Tags => Some(Variant::Tag),
        }
    }

    /// True if a single draw has zero probability of repeating.
    pub fn is_diffuse(&self) -> bool {
        matches!(
            self,
            BaseMeasure::Uniform { .. }
                | BaseMeasure::Gaussian { .. }
                | BaseMeasure::GaussianMixture { .. }
                | BaseMeasure::Tags
        )
    }

    pub fn sample(&self, rng: &mut RandomSource) -> Result<Point> {
        match self {
            BaseMeasure::None => Err(Error::Unsupported("sampling from an absent base measure".into())),
            BaseMeasure::Uniform { lo, hi } => Ok(Point::Real(lo + (hi - lo) * rng.uniform())),
            BaseMeasure::Gaussian { mean, sd } => Ok(Point::Real(rng.normal(*mean, *sd)?)),
            BaseMeasure::Categorical(d) => Ok(d.sample(rng)),
            BaseMeasure::Tags => Ok(Point::Tag(rng.fresh_tag())),
            BaseMeasure::GaussianMixture { means, sd, weights } => {
                let u = rng.uniform();
                let mut acc = 0.0;
                let mut idx = means.len() - 1;
                for (i, &w) in weights.iter().enumerate() {
                    acc += w;
                    if u < acc {
                        idx = i;
                        break;
                    }
                }
                Ok(Point::Real(rng.normal(means[idx], *sd)?))
            }
        }
    }

    /// Distribution function at `t`, for bases on the real line.
    pub fn cdf(&self, t: f64) -> Result<f64> {
        match self {
            BaseMeasure::Uniform { lo, hi } => Ok(((t - lo) / (hi - lo)).clamp(0.0, 1.0)),
            BaseMeasure::Gaussian { mean, sd } => {
                let normal = statrs::distribution::Normal::new(*mean, *sd)
                    .map_err(|e| Error::Config(format!("gaussian base: {e}")))?;
                Ok(normal.cdf(t))
            }
            BaseMeasure::GaussianMixture { means, sd, weights } => {
                let mut acc = 0.0;
                for (&m, &w) in means.iter().zip(weights.iter()) {
                    let normal = statrs::distribution::Normal::new(m, *sd)
                        .map_err(|e| Error::Config(format!("gaussian mixture base: {e}")))?;
                    acc += w * normal.cdf(t);
                }
                Ok(acc)
            }
            BaseMeasure::Categorical(d) => {
                if d.variant() != Variant::Real {
                    return Err(Error::Unsupported(
                        "distribution function of a base on a non-scalar space".into(),
                    ));
                }
                Ok(kahan_sum(d.labels().iter().zip(d.probs().iter()).filter_map(
                    |(l, &p)| match l {
                        Point::Real(x) if *x <= t => Some(p),
                        _ => None,
                    },
                )))
            }
            BaseMeasure::None | BaseMeasure::Tags => Err(Error::Unsupported(
                "distribution function of a base on a non-scalar space".into(),
            )),
        }
    }

    /// Mass the base itself puts on a single point (nonzero only for
    /// categorical bases).
    pub fn point_mass(&self, p: &Point) -> f64 {
        match self {
            BaseMeasure::Categorical(d) => d.mass(p),
            _ => 0.0,
        }
    }

    /// Atoms of the base measure, for validation against evaluation grids.
    pub fn atoms(&self) -> Vec<Point> {
        match self {
            BaseMeasure::Categorical(d) => d.labels().to_vec(),
            _ => Vec::new(),
        }
    }
}

/// `sum_i w_i delta_{x_i} + diffuse_weight * Base`, the common shape of
/// predictive distributions produced by urn-style rules.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AtomicMixture {
    atoms: Vec<(Point, f64)>,
    diffuse_weight: f64,
    base: BaseMeasure,
}

impl AtomicMixture {
    /// Build and validate a mixture. Coinciding atoms are merged by adding
    /// their weights (first-appearance order); atoms with exactly zero
    /// weight are dropped; a mixture with no diffuse mass is canonicalized
    /// to `BaseMeasure::None` so equal measures compare equal.
    pub fn new(atoms: Vec<(Point, f64)>, diffuse_weight: f64, base: BaseMeasure) -> Result<Self> {
        base.validate()?;
        if !diffuse_weight.is_finite() || diffuse_weight < 0.0 {
            return Err(Error::Config(format!("diffuse weight {diffuse_weight} is negative or non-finite")));
        }
        if diffuse_weight > 0.0 && matches!(base, BaseMeasure::None) {
            return Err(Error::Config("positive diffuse weight with no base measure".into()));
        }

        let mut merged: Vec<(Point, f64)> = Vec::with_capacity(atoms.len());
        let mut index: std::collections::HashMap<Point, usize> =
            std::collections::HashMap::with_capacity(atoms.len());
        for (p, w) in atoms {
            if !w.is_finite() || w < 0.0 {
                return Err(Error::Config(format!(
                    "atom {} has negative or non-finite weight {w}",
                    p.describe()
                )));
            }
            if w == 0.0 {
                continue;
            }
            match index.get(&p) {
                Some(&i) => merged[i].1 += w,
                None => {
                    index.insert(p.clone(), merged.len());
                    merged.push((p, w));
                }
            }
        }

        if let Some(first) = merged.first() {
            let v = first.0.variant();
            if merged.iter().any(|(p, _)| p.variant() != v) {
                return Err(Error::Config("atoms mix point variants".into()));
            }
            if diffuse_weight > 0.0 {
                if let Some(bv) = base.variant() {
                    if bv != v {
                        return Err(Error::Config(format!(
                            "atoms are {v:?} points but the base produces {bv:?} points"
                        )));
                    }
                }
            }
        }

        let total = kahan_sum(merged.iter().map(|(_, w)| *w)) + diffuse_weight;
        if (total - 1.0).abs() > MASS_TOL {
            return Err(Error::Config(format!(
                "mixture mass is {total}, not 1 (tolerance {MASS_TOL:e})"
            )));
        }

        let base = if diffuse_weight == 0.0 { BaseMeasure::None } else { base };
        Ok(AtomicMixture { atoms: merged, diffuse_weight, base })
    }

    /// Purely atomic mixture.
    pub fn purely_atomic(atoms: Vec<(Point, f64)>) -> Result<Self> {
        Self::new(atoms, 0.0, BaseMeasure::None)
    }

    /// Point mass at `p`.
    pub fn point_mass_at(p: Point) -> Self {
        AtomicMixture { atoms: vec![(p, 1.0)], diffuse_weight: 0.0, base: BaseMeasure::None }
    }

    pub fn from_discrete(d: &DiscreteDistribution) -> Self {
        AtomicMixture {
            atoms: d.labels().iter().cloned().zip(d.probs().iter().copied()).collect(),
            diffuse_weight: 0.0,
            base: BaseMeasure::None,
        }
    }

    /// The whole base measure, as a mixture with no atoms.
    pub fn from_base(base: BaseMeasure) -> Result<Self> {
        Self::new(Vec::new(), 1.0, base)
    }

    pub fn atoms(&self) -> &[(Point, f64)] {
        &self.atoms
    }

    pub fn diffuse_weight(&self) -> f64 {
        self.diffuse_weight
    }

    pub fn base(&self) -> &BaseMeasure {
        &self.base
    }

    pub fn variant(&self) -> Option<Variant> {
        self.atoms.first().map(|(p, _)| p.variant()).or_else(|| self.base.variant())
    }

    /// Mass at a single point: the atom's weight plus whatever the diffuse
    /// part contributes (nonzero only for categorical bases).
    pub fn point_mass(&self, p: &Point) -> f64 {
        let atom = self
            .atoms
            .iter()
            .find(|(a, _)| a == p)
            .map(|(_, w)| *w)
            .unwrap_or(0.0);
        atom + self.diffuse_weight * self.base.point_mass(p)
    }

    /// Draw one point. Draws that land in the diffuse part of a `Tags` base
    /// mint a fresh tag from the source.
    pub fn sample(&self, rng: &mut RandomSource) -> Result<Point> {
        let u = rng.uniform();
        let mut acc = 0.0;
        for (p, w) in &self.atoms {
            acc += w;
            if u < acc {
                return Ok(p.clone());
            }
        }
        if self.diffuse_weight > 0.0 {
            self.base.sample(rng)
        } else {
            // Cumulative rounding put u past the last atom; fall back to it.
            Ok(self.atoms[self.atoms.len() - 1].0.clone())
        }
    }

    /// Distribution function at `t` for mixtures on the real line:
    /// the weight of atoms at or below `t` plus the diffuse part's cdf.
    pub fn eval_cdf(&self, t: f64) -> Result<f64> {
        if let Some(v) = self.variant() {
            if v != Variant::Real {
                return Err(Error::Unsupported(format!(
                    "distribution function on a space of {v:?} points"
                )));
            }
        }
        let atom_part = kahan_sum(self.atoms.iter().filter_map(|(p, w)| match p {
            Point::Real(x) if *x <= t => Some(*w),
            _ => None,
        }));
        let diffuse_part = if self.diffuse_weight > 0.0 {
            self.diffuse_weight * self.base.cdf(t)?
        } else {
            0.0
        };
        Ok(atom_part + diffuse_part)
    }
}

/// Convex combination `w * a + (1 - w) * b`.
///
/// Coinciding atoms merge by weight addition. If both inputs carry diffuse
/// mass they must share the same base measure.
pub fn mix(a: &AtomicMixture, b: &AtomicMixture, w: f64) -> Result<AtomicMixture> {
    if !(0.0..=1.0).contains(&w) || !w.is_finite() {
        return Err(Error::Config(format!("mixing weight {w} is outside [0, 1]")));
    }
    if let (Some(va), Some(vb)) = (a.variant(), b.variant()) {
        if va != vb {
            return Err(Error::Config(format!(
                "cannot mix measures on different spaces ({va:?} vs {vb:?})"
            )));
        }
    }
    let da = w * a.diffuse_weight;
    let db = (1.0 - w) * b.diffuse_weight;
    let base = if da > 0.0 && db > 0.0 {
        if a.base != b.base {
            return Err(Error::Config("cannot mix measures with different diffuse bases".into()));
        }
        a.base.clone()
    } else if da > 0.0 {
        a.base.clone()
    } else if db > 0.0 {
        b.base.clone()
    } else {
        BaseMeasure::None
    };

    let mut atoms: Vec<(Point, f64)> = Vec::with_capacity(a.atoms.len() + b.atoms.len());
    atoms.extend(a.atoms.iter().map(|(p, wt)| (p.clone(), w * wt)));
    atoms.extend(b.atoms.iter().map(|(p, wt)| (p.clone(), (1.0 - w) * wt)));
    AtomicMixture::new(atoms, da + db, base)
}

/// Convex combination of several mixtures with the given weights. Weights
/// must be nonnegative; entries with zero weight are skipped. All components
/// contributing diffuse mass must share one base measure.
pub fn convex_sum(parts: &[(f64, &AtomicMixture)]) -> Result<AtomicMixture> {
    if parts.is_empty() {
        return Err(Error::Config("convex sum of no measures".into()));
    }
    let mut atoms: Vec<(Point, f64)> = Vec::new();
    let mut diffuse = 0.0;
    let mut base: Option<BaseMeasure> = None;
    for (w, m) in parts {
        if !w.is_finite() || *w < 0.0 {
            return Err(Error::Config(format!("convex-sum weight {w} is negative or non-finite")));
        }
        if *w == 0.0 {
            continue;
        }
        let d = w * m.diffuse_weight;
        if d > 0.0 {
            match &base {
                None => base = Some(m.base.clone()),
                Some(b) if *b == m.base => {}
                Some(_) => {
                    return Err(Error::Config(
                        "convex sum mixes components with different diffuse bases".into(),
                    ))
                }
            }
            diffuse += d;
        }
        atoms.extend(m.atoms.iter().map(|(p, wt)| (p.clone(), w * wt)));
    }
    AtomicMixture::new(atoms, diffuse, base.unwrap_or(BaseMeasure::None))
}

/// A predictive distribution: either finitely supported or an atomic
/// mixture with a (possibly diffuse) base.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Predictive {
    Finite(DiscreteDistribution),
    Mixture(AtomicMixture),
}

impl Predictive {
    pub fn sample(&self, rng: &mut RandomSource) -> Result<Point> {
        match self {
            Predictive::Finite(d) => Ok(d.sample(rng)),
            Predictive::Mixture(m) => m.sample(rng),
        }
    }

    /// Mass at a point. Diffuse mass contributes zero at any fixed point.
    pub fn point_mass(&self, p: &Point) -> f64 {
        match self {
            Predictive::Finite(d) => d.mass(p),
            Predictive::Mixture(m) => m.point_mass(p),
        }
    }

    /// Mass at a point, rejecting predictives whose support is not a finite
    /// discrete set. Used by joint-probability computations, which are only
    /// defined on finite spaces.
    pub fn finite_point_mass(&self, p: &Point) -> Result<f64> {
        match self {
            Predictive::Finite(d) => Ok(d.mass(p)),
            Predictive::Mixture(m) => {
                if m.diffuse_weight() > 0.0 && m.base().is_diffuse() {
                    return Err(Error::Unsupported(
                        "point probabilities on a space that is not finite discrete".into(),
                    ));
                }
                Ok(m.point_mass(p))
            }
        }
    }

    pub fn eval_cdf(&self, t: f64) -> Result<f64> {
        match self {
            Predictive::Finite(d) => {
                if d.variant() != Variant::Real {
                    return Err(Error::Unsupported(
                        "distribution function on a space of non-scalar points".into(),
                    ));
                }
                Ok(kahan_sum(d.labels().iter().zip(d.probs().iter()).filter_map(
                    |(l, &p)| match l {
                        Point::Real(x) if *x <= t => Some(p),
                        _ => None,
                    },
                )))
            }
            Predictive::Mixture(m) => m.eval_cdf(t),
        }
    }

    pub fn variant(&self) -> Option<Variant> {
        match self {
            Predictive::Finite(d) => Some(d.variant()),
            Predictive::Mixture(m) => m.variant(),
        }
    }

    /// Evaluate on a grid: distribution function values for cdf grids, point
    /// masses for mass grids.
    pub fn eval_on_grid(&self, grid: &EvalGrid) -> Result<Vec<f64>> {
        match grid {
            EvalGrid::Cdf(ts) => ts.iter().map(|t| self.eval_cdf(*t)).collect(),
            EvalGrid::Mass(points) => Ok(points.iter().map(|p| self.point_mass(p)).collect()),
        }
    }
}

/// Where to read a predictive off: distribution-function values at scalar
/// thresholds, or point masses at given points.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum EvalGrid {
    Cdf(Vec<f64>),
    Mass(Vec<Point>),
}

impl EvalGrid {
    pub fn validate(&self) -> Result<()> {
        match self {
            EvalGrid::Cdf(ts) => {
                if ts.iter().any(|t| !t.is_finite()) {
                    return Err(Error::Config("cdf grid contains a non-finite threshold".into()));
                }
                if ts.windows(2).any(|w| w[0] >= w[1]) {
                    return Err(Error::Config("cdf grid must be strictly increasing".into()));
                }
                Ok(())
            }
            EvalGrid::Mass(points) => {
                let mut seen = std::collections::HashSet::new();
                for p in points {
                    if !seen.insert(p.clone()) {
                        return Err(Error::Config(format!(
                            "mass grid repeats the point {}",
                            p.describe()
                        )));
                    }
                }
                Ok(())
            }
        }
    }

    pub fn len(&self) -> usize {
        match self {
            EvalGrid::Cdf(ts) => ts.len(),
            EvalGrid::Mass(points) => points.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Column names for tabular output.
    pub fn column_names(&self) -> Vec<String> {
        match self {
            EvalGrid::Cdf(ts) => ts.iter().map(|t| format!("cdf@{t:?}")).collect(),
            EvalGrid::Mass(points) => {
                points.iter().map(|p| format!("mass@{}", p.describe())).collect()
            }
        }
    }

    /// True when every grid value is a probability in [0, 1], so intervals
    /// over it may be clipped to the unit interval.
    pub fn bounded_unit(&self) -> bool {
        true
    }
}
