//! Rule selection: merge command-line flags with the `[rule]` config
//! section, build the concrete rule object, and expose it to commands
//! through a small visitor so each command is written once, generically.

use std::f64::consts::LN_2;

use predbayes_core::{
    BaseMeasure, CovariateLaw, DiscreteDistribution, EppfSpec, EvalGrid, IidRule,
    KernelPolyaRule, MixKernel, MixingGrid, NewtonRule, OgdLoss, OgdRule, OgdState, Point,
    Predictive, PredictiveRule, ReinforcedUrnRule, SmoothingKernel, SpaceKind, SpeciesRule,
    UrnParams,
};
use predbayes_core::{AtomicMixture, PolyaRule};

use crate::context::{config_err, CliResult, EchoVal, RunContext, Section};

/// Every key the `[rule]` section understands, across all rule kinds.
pub const RULE_KEYS: &[&str] = &[
    "kind",
    "alpha",
    "discount",
    "classes",
    "eppf",
    "base",
    "states",
    "q",
    "initial",
    "kernel_rows",
    "thetas",
    "theta_weights",
    "kernel",
    "kernel_sd",
    "dim",
    "beta0",
    "loss",
    "loss_scale",
    "covariates",
];

/// Rule flags shared by every subcommand that drives a predictive rule.
/// Each flag shadows the `[rule]` config key of the same name.
#[derive(clap::Args, Clone, Debug, Default)]
pub struct RuleArgs {
    /// Rule kind: iid | polya | species | kernel-polya | urn | newton | ogd.
    #[arg(long)]
    pub rule: Option<String>,
    /// Concentration / reinforcement mass.
    #[arg(long, allow_negative_numbers = true)]
    pub alpha: Option<f64>,
    /// Pitman-Yor discount in [0, 1).
    #[arg(long)]
    pub discount: Option<f64>,
    /// Class count for the finite-Dirichlet partition rule.
    #[arg(long)]
    pub classes: Option<usize>,
    /// Partition family for species rules: crp | pitman-yor | dirichlet.
    #[arg(long)]
    pub eppf: Option<String>,
    /// Base measure, e.g. uniform2, binary:0.4, categorical:0.2,0.3,0.5,
    /// uniform:0,1, gaussian:0,1, tags.
    #[arg(long)]
    pub base: Option<String>,
    /// State count for the reinforced-urn rule.
    #[arg(long)]
    pub states: Option<usize>,
    /// Urn base transition probabilities, comma-separated.
    #[arg(long)]
    pub q: Option<String>,
    /// Initial urn state label.
    #[arg(long)]
    pub initial: Option<usize>,
    /// Row-stochastic smoothing kernel, rows separated by ';'.
    #[arg(long)]
    pub kernel_rows: Option<String>,
    /// Mixing grid values, comma-separated.
    #[arg(long, allow_hyphen_values = true)]
    pub thetas: Option<String>,
    /// Initial mixing weights (default uniform), comma-separated.
    #[arg(long)]
    pub theta_weights: Option<String>,
    /// Mixture component family: bernoulli | gaussian.
    #[arg(long)]
    pub kernel: Option<String>,
    /// Component standard deviation for the gaussian kernel.
    #[arg(long)]
    pub kernel_sd: Option<f64>,
    /// Coefficient dimension (used when beta0 is not given).
    #[arg(long)]
    pub dim: Option<usize>,
    /// Initial coefficients, comma-separated.
    #[arg(long, allow_hyphen_values = true)]
    pub beta0: Option<String>,
    /// Descent loss: cross-entropy | quadratic.
    #[arg(long)]
    pub loss: Option<String>,
    /// Loss scale in front of the 1/n step size.
    #[arg(long)]
    pub loss_scale: Option<f64>,
    /// Covariate support rows, e.g. "0,0;0,1;1,0;1,1" (uniform over rows).
    #[arg(long, allow_hyphen_values = true)]
    pub covariates: Option<String>,
}

// ---------------------------------------------------------------------------
// Small parsers
// ---------------------------------------------------------------------------

pub fn parse_f64_list(s: &str, what: &str) -> CliResult<Vec<f64>> {
    let mut out = Vec::new();
    for part in s.split(',') {
        let trimmed = part.trim();
        let v: f64 = trimmed
            .parse()
            .map_err(|_| config_err(format!("{what}: `{trimmed}` is not a number")))?;
        if !v.is_finite() {
            return Err(config_err(format!("{what}: values must be finite")));
        }
        out.push(v);
    }
    if out.is_empty() {
        return Err(config_err(format!("{what}: empty list")));
    }
    Ok(out)
}

pub fn parse_rows(s: &str, what: &str) -> CliResult<Vec<Vec<f64>>> {
    let mut rows = Vec::new();
    for row in s.split(';') {
        rows.push(parse_f64_list(row, what)?);
    }
    if rows.iter().any(|r| r.len() != rows[0].len()) {
        return Err(config_err(format!("{what}: rows must all have the same length")));
    }
    Ok(rows)
}

/// Grid spec: `cdf:t1,t2,...` for distribution-function thresholds, or
/// `mass:p1,p2,...` for point masses (labels on categorical spaces, reals
/// on the line).
pub fn parse_grid(s: &str, space: &SpaceKind) -> CliResult<EvalGrid> {
    let (kind, rest) = s
        .split_once(':')
        .ok_or_else(|| config_err(format!("grid `{s}` must look like cdf:... or mass:...")))?;
    let values = parse_f64_list(rest, "grid")?;
    let grid = match kind {
        "cdf" => EvalGrid::Cdf(values),
        "mass" => {
            let points = match space {
                SpaceKind::Categorical { size } => {
                    let mut pts = Vec::with_capacity(values.len());
                    for v in values {
                        if v.fract() != 0.0 || v < 0.0 || v >= f64::from(*size) {
                            return Err(config_err(format!(
                                "grid label {v} outside the categorical space of size {size}"
                            )));
                        }
                        pts.push(Point::Label(v as u32));
                    }
                    pts
                }
                SpaceKind::RealLine => values.into_iter().map(Point::Real).collect(),
                other => {
                    return Err(config_err(format!(
                        "mass grids are not defined on {}",
                        other.describe()
                    )))
                }
            };
            EvalGrid::Mass(points)
        }
        other => return Err(config_err(format!("unknown grid kind `{other}`"))),
    };
    grid.validate()?;
    Ok(grid)
}

/// Base measure specs, with the canonical string kept for the echo.
pub fn parse_base(s: &str) -> CliResult<BaseMeasure> {
    if let Some(k) = s.strip_prefix("uniform") {
        if let Ok(size) = k.parse::<u32>() {
            if size == 0 {
                return Err(config_err("base uniform0 has no categories"));
            }
            let labels = (0..size).map(Point::Label).collect();
            return Ok(BaseMeasure::Categorical(DiscreteDistribution::uniform(labels)?));
        }
    }
    let (kind, rest) = match s.split_once(':') {
        Some((k, r)) => (k, Some(r)),
        None => (s, None),
    };
    let need = |what: &str| {
        config_err(format!("base `{s}`: expected {what}, e.g. binary:0.4 or uniform:0,1"))
    };
    match kind {
        "binary" => {
            let p: f64 =
                rest.ok_or_else(|| need("a probability"))?.parse().map_err(|_| need("a probability"))?;
            Ok(BaseMeasure::Categorical(DiscreteDistribution::binary(p)?))
        }
        "categorical" => {
            let probs = parse_f64_list(rest.ok_or_else(|| need("probabilities"))?, "base")?;
            let labels = (0..probs.len() as u32).map(Point::Label).collect();
            Ok(BaseMeasure::Categorical(DiscreteDistribution::new(labels, probs)?))
        }
        "uniform" => {
            let ends = parse_f64_list(rest.ok_or_else(|| need("lo,hi"))?, "base")?;
            if ends.len() != 2 {
                return Err(need("lo,hi"));
            }
            let m = BaseMeasure::Uniform { lo: ends[0], hi: ends[1] };
            m.validate()?;
            Ok(m)
        }
        "gaussian" => {
            let ps = match rest {
                None => vec![0.0, 1.0],
                Some(r) => parse_f64_list(r, "base")?,
            };
            if ps.len() != 2 {
                return Err(need("mean,sd"));
            }
            let m = BaseMeasure::Gaussian { mean: ps[0], sd: ps[1] };
            m.validate()?;
            Ok(m)
        }
        "tags" => Ok(BaseMeasure::Tags),
        other => Err(config_err(format!(
            "unknown base `{other}`; known: uniformK, binary:p, categorical:p0,p1,..., \
             uniform:lo,hi, gaussian:mean,sd, tags"
        ))),
    }
}

// ---------------------------------------------------------------------------
// Resolution
// ---------------------------------------------------------------------------

/// A built rule plus the `[rule]` echo entries that rebuild it.
#[derive(Debug)]
pub struct ResolvedRule {
    pub kind: String,
    pub built: BuiltRule,
    pub echo: Vec<(String, EchoVal)>,
}

#[derive(Debug)]
pub enum BuiltRule {
    Iid(IidRule),
    Polya(PolyaRule),
    Species(SpeciesRule),
    KernelPolya(KernelPolyaRule),
    Urn(ReinforcedUrnRule),
    Newton(NewtonRule),
    Ogd(OgdRule),
}

/// One generic operation over whatever rule was selected.
pub trait RuleVisitor {
    type Out;
    fn visit<R: PredictiveRule>(self, rule: &R) -> CliResult<Self::Out>;
}

impl BuiltRule {
    pub fn accept<V: RuleVisitor>(&self, v: V) -> CliResult<V::Out> {
        match self {
            BuiltRule::Iid(r) => v.visit(r),
            BuiltRule::Polya(r) => v.visit(r),
            BuiltRule::Species(r) => v.visit(r),
            BuiltRule::KernelPolya(r) => v.visit(r),
            BuiltRule::Urn(r) => v.visit(r),
            BuiltRule::Newton(r) => v.visit(r),
            BuiltRule::Ogd(r) => v.visit(r),
        }
    }

    pub fn space(&self) -> SpaceKind {
        match self {
            BuiltRule::Iid(r) => r.space(),
            BuiltRule::Polya(r) => r.space(),
            BuiltRule::Species(r) => r.space(),
            BuiltRule::KernelPolya(r) => r.space(),
            BuiltRule::Urn(r) => r.space(),
            BuiltRule::Newton(r) => r.space(),
            BuiltRule::Ogd(r) => r.space(),
        }
    }

    pub fn name(&self) -> String {
        match self {
            BuiltRule::Iid(r) => r.name(),
            BuiltRule::Polya(r) => r.name(),
            BuiltRule::Species(r) => r.name(),
            BuiltRule::KernelPolya(r) => r.name(),
            BuiltRule::Urn(r) => r.name(),
            BuiltRule::Newton(r) => r.name(),
            BuiltRule::Ogd(r) => r.name(),
        }
    }
}

/// Merge a string-valued setting: flag wins over config.
pub(crate) fn pick_str(
    flag: &Option<String>,
    sec: &Section<'_>,
    key: &str,
) -> CliResult<Option<String>> {
    match flag {
        Some(v) => Ok(Some(v.clone())),
        None => sec.get_str(key),
    }
}

pub(crate) fn pick_f64(flag: Option<f64>, sec: &Section<'_>, key: &str) -> CliResult<Option<f64>> {
    match flag {
        Some(v) => Ok(Some(v)),
        None => sec.get_f64(key),
    }
}

pub(crate) fn pick_usize(
    flag: Option<usize>,
    sec: &Section<'_>,
    key: &str,
) -> CliResult<Option<usize>> {
    match flag {
        Some(v) => Ok(Some(v)),
        None => sec.get_usize(key),
    }
}

/// Float lists come either from a comma-joined flag or a TOML array.
fn pick_list(
    flag: &Option<String>,
    sec: &Section<'_>,
    key: &str,
    what: &str,
) -> CliResult<Option<Vec<f64>>> {
    match flag {
        Some(s) => Ok(Some(parse_f64_list(s, what)?)),
        None => sec.get_f64_list(key),
    }
}

pub(crate) fn require<T>(v: Option<T>, kind: &str, key: &str) -> CliResult<T> {
    v.ok_or_else(|| {
        config_err(format!("rule `{kind}` needs --{} or [rule].{key}", key.replace('_', "-")))
    })
}

/// Resolve the selected rule. `default_kind` lets rule-specific commands
/// (newton, ogd) omit `--rule`.
pub fn resolve_rule(
    args: &RuleArgs,
    ctx: &RunContext,
    default_kind: Option<&str>,
) -> CliResult<ResolvedRule> {
    let sec = ctx.section("rule", RULE_KEYS)?;
    let kind = pick_str(&args.rule, &sec, "kind")?
        .or_else(|| default_kind.map(str::to_string))
        .ok_or_else(|| config_err("no rule selected: pass --rule or set [rule].kind"))?;
    let mut echo: Vec<(String, EchoVal)> = vec![("kind".into(), EchoVal::Str(kind.clone()))];

    let built = match kind.as_str() {
        "iid" => {
            let base_s = require(pick_str(&args.base, &sec, "base")?, &kind, "base")?;
            let base = parse_base(&base_s)?;
            echo.push(("base".into(), EchoVal::Str(base_s)));
            let (dist, space) = match &base {
                BaseMeasure::Categorical(d) => (
                    Predictive::Finite(d.clone()),
                    SpaceKind::Categorical { size: d.len() as u32 },
                ),
                BaseMeasure::Tags => {
                    (Predictive::Mixture(AtomicMixture::from_base(base.clone())?), SpaceKind::Tagged)
                }
                other => {
                    (Predictive::Mixture(AtomicMixture::from_base(other.clone())?), SpaceKind::RealLine)
                }
            };
            BuiltRule::Iid(IidRule::new(dist, space)?)
        }
        "polya" => {
            let alpha = require(pick_f64(args.alpha, &sec, "alpha")?, &kind, "alpha")?;
            let base_s = require(pick_str(&args.base, &sec, "base")?, &kind, "base")?;
            let base = parse_base(&base_s)?;
            echo.push(("alpha".into(), EchoVal::Float(alpha)));
            echo.push(("base".into(), EchoVal::Str(base_s)));
            BuiltRule::Polya(PolyaRule::new(alpha, base)?)
        }
        "species" => {
            let family = pick_str(&args.eppf, &sec, "eppf")?.unwrap_or_else(|| "crp".into());
            let alpha = require(pick_f64(args.alpha, &sec, "alpha")?, &kind, "alpha")?;
            let base_s = require(pick_str(&args.base, &sec, "base")?, &kind, "base")?;
            let base = parse_base(&base_s)?;
            echo.push(("eppf".into(), EchoVal::Str(family.clone())));
            echo.push(("alpha".into(), EchoVal::Float(alpha)));
            echo.push(("base".into(), EchoVal::Str(base_s)));
            let spec = match family.as_str() {
                "crp" => EppfSpec::crp(alpha)?,
                "pitman-yor" => {
                    let discount =
                        require(pick_f64(args.discount, &sec, "discount")?, &kind, "discount")?;
                    echo.push(("discount".into(), EchoVal::Float(discount)));
                    EppfSpec::pitman_yor(alpha, discount)?
                }
                "dirichlet" => {
                    let classes =
                        require(pick_usize(args.classes, &sec, "classes")?, &kind, "classes")?;
                    echo.push(("classes".into(), EchoVal::UInt(classes as u64)));
                    EppfSpec::finite_dirichlet(alpha, classes)?
                }
                other => {
                    return Err(config_err(format!(
                        "unknown partition family `{other}`; known: crp, pitman-yor, dirichlet"
                    )))
                }
            };
            BuiltRule::Species(SpeciesRule::new(spec, base)?)
        }
        "kernel-polya" => {
            let alpha = require(pick_f64(args.alpha, &sec, "alpha")?, &kind, "alpha")?;
            let base_s = require(pick_str(&args.base, &sec, "base")?, &kind, "base")?;
            let rows_s =
                require(pick_str(&args.kernel_rows, &sec, "kernel_rows")?, &kind, "kernel_rows")?;
            let base = parse_base(&base_s)?;
            let labels = match &base {
                BaseMeasure::Categorical(d) => d.labels().to_vec(),
                _ => {
                    return Err(config_err(
                        "kernel-polya smoothing rows need a categorical base",
                    ))
                }
            };
            let rows = parse_rows(&rows_s, "kernel_rows")?;
            echo.push(("alpha".into(), EchoVal::Float(alpha)));
            echo.push(("base".into(), EchoVal::Str(base_s)));
            echo.push(("kernel_rows".into(), EchoVal::Str(rows_s)));
            let kernel = SmoothingKernel::row_stochastic(labels, rows)?;
            BuiltRule::KernelPolya(KernelPolyaRule::new(alpha, base, kernel)?)
        }
        "urn" => {
            let states = require(pick_usize(args.states, &sec, "states")?, &kind, "states")?;
            if states == 0 || states > u32::MAX as usize {
                return Err(config_err("urn state count must be a positive 32-bit value"));
            }
            let alpha = require(pick_f64(args.alpha, &sec, "alpha")?, &kind, "alpha")?;
            let labels: Vec<Point> = (0..states as u32).map(Point::Label).collect();
            let q = match pick_list(&args.q, &sec, "q", "q")? {
                Some(probs) => DiscreteDistribution::new(labels.clone(), probs)?,
                None => DiscreteDistribution::uniform(labels.clone())?,
            };
            let initial = pick_usize(args.initial, &sec, "initial")?.unwrap_or(0);
            if initial >= states {
                return Err(config_err(format!(
                    "initial state {initial} outside the {states}-state space"
                )));
            }
            echo.push(("states".into(), EchoVal::UInt(states as u64)));
            echo.push(("alpha".into(), EchoVal::Float(alpha)));
            echo.push(("q".into(), EchoVal::Floats(q.probs().to_vec())));
            echo.push(("initial".into(), EchoVal::UInt(initial as u64)));
            let params = UrnParams::homogeneous(labels, alpha, q)?;
            BuiltRule::Urn(ReinforcedUrnRule::new(params, Point::Label(initial as u32))?)
        }
        "newton" => {
            let (grid, kvs) = resolve_mixing_grid(args, &sec)?;
            echo.extend(kvs);
            BuiltRule::Newton(NewtonRule::new(grid))
        }
        "ogd" => {
            let cfg = resolve_ogd(args, &sec)?;
            echo.extend(cfg.echo.clone());
            let law = cfg.covariates.clone().ok_or_else(|| {
                config_err("rule `ogd` needs --covariates or [rule].covariates to sample from")
            })?;
            BuiltRule::Ogd(OgdRule::with_loss(cfg.beta0.clone(), law, cfg.loss, cfg.loss_scale)?)
        }
        other => {
            return Err(config_err(format!(
                "unknown rule `{other}`; known: iid, polya, species, kernel-polya, urn, \
                 newton, ogd"
            )))
        }
    };
    Ok(ResolvedRule { kind, built, echo })
}

/// The mixing-measure recursion settings shared by the generic rule path
/// and the dedicated `newton` command.
pub fn resolve_mixing_grid(
    args: &RuleArgs,
    sec: &Section<'_>,
) -> CliResult<(MixingGrid, Vec<(String, EchoVal)>)> {
    let thetas = require(pick_list(&args.thetas, sec, "thetas", "thetas")?, "newton", "thetas")?;
    let alpha = pick_f64(args.alpha, sec, "alpha")?.unwrap_or(1.0);
    let kernel_s = pick_str(&args.kernel, sec, "kernel")?.unwrap_or_else(|| "bernoulli".into());
    let mut echo: Vec<(String, EchoVal)> = vec![
        ("thetas".into(), EchoVal::Floats(thetas.clone())),
        ("alpha".into(), EchoVal::Float(alpha)),
        ("kernel".into(), EchoVal::Str(kernel_s.clone())),
    ];
    let kernel = match kernel_s.as_str() {
        "bernoulli" => MixKernel::Bernoulli,
        "gaussian" => {
            let sd = require(pick_f64(args.kernel_sd, sec, "kernel_sd")?, "newton", "kernel_sd")?;
            echo.push(("kernel_sd".into(), EchoVal::Float(sd)));
            MixKernel::Gaussian { sd }
        }
        other => {
            return Err(config_err(format!(
                "unknown mixture kernel `{other}`; known: bernoulli, gaussian"
            )))
        }
    };
    let grid = match pick_list(&args.theta_weights, sec, "theta_weights", "theta_weights")? {
        Some(weights) => {
            echo.push(("theta_weights".into(), EchoVal::Floats(weights.clone())));
            MixingGrid::new(thetas, weights, kernel, alpha)?
        }
        None => MixingGrid::uniform(thetas, kernel, alpha)?,
    };
    Ok((grid, echo))
}

/// Descent settings shared by the generic rule path, `ogd run`, and
/// `ogd coverage`. The covariate law is optional here because a purely
/// file-driven descent never samples covariates.
pub struct OgdConfig {
    pub beta0: Vec<f64>,
    pub loss: OgdLoss,
    pub loss_scale: f64,
    pub covariates: Option<CovariateLaw>,
    pub echo: Vec<(String, EchoVal)>,
}

impl OgdConfig {
    pub fn state(&self) -> CliResult<OgdState> {
        Ok(OgdState::with_loss(self.beta0.clone(), self.loss, self.loss_scale)?)
    }
}

pub fn resolve_ogd(args: &RuleArgs, sec: &Section<'_>) -> CliResult<OgdConfig> {
    let covariates = match pick_str(&args.covariates, sec, "covariates")? {
        Some(s) => Some((s.clone(), CovariateLaw::uniform(parse_rows(&s, "covariates")?)?)),
        None => None,
    };
    let beta0 = match pick_list(&args.beta0, sec, "beta0", "beta0")? {
        Some(b) => b,
        None => {
            let dim = pick_usize(args.dim, sec, "dim")?
                .or_else(|| covariates.as_ref().map(|(_, law)| law.dim()))
                .ok_or_else(|| {
                    config_err("rule `ogd` needs --beta0, --dim, or --covariates to fix the dimension")
                })?;
            vec![0.0; dim]
        }
    };
    let loss_s = pick_str(&args.loss, sec, "loss")?.unwrap_or_else(|| "cross-entropy".into());
    let loss = match loss_s.as_str() {
        "cross-entropy" => OgdLoss::CrossEntropy,
        "quadratic" => OgdLoss::Quadratic,
        other => {
            return Err(config_err(format!(
                "unknown loss `{other}`; known: cross-entropy, quadratic"
            )))
        }
    };
    let loss_scale = pick_f64(args.loss_scale, sec, "loss_scale")?.unwrap_or(LN_2);
    let mut echo: Vec<(String, EchoVal)> = vec![
        ("beta0".into(), EchoVal::Floats(beta0.clone())),
        ("loss".into(), EchoVal::Str(loss_s)),
        ("loss_scale".into(), EchoVal::Float(loss_scale)),
    ];
    let covariates = match covariates {
        Some((s, law)) => {
            echo.push(("covariates".into(), EchoVal::Str(s)));
            Some(law)
        }
        None => None,
    };
    // Validate eagerly so every command reports bad settings before work.
    OgdState::with_loss(beta0.clone(), loss, loss_scale)?;
    Ok(OgdConfig { beta0, loss, loss_scale, covariates, echo })
}

// ---------------------------------------------------------------------------
// Tests
// ---------------------------------------------------------------------------
