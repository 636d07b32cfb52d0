//! `resample`: sampling from the future. Condition the rule on data, run
//! many independent replicates to a horizon, and keep the terminal
//! distribution (or a terminal functional) of each as one posterior draw.

use std::path::PathBuf;

use predbayes_core::{
    functional_posterior, sample_posterior, stability_check, BaseMeasure, EvalGrid, Point,
    PolyaRule, PosteriorSample, PredictiveRule, ResamplingPlan, StabilityReport,
    TerminalEstimator,
};
use statrs::distribution::{Beta, ContinuousCDF};

use crate::context::{config_err, CliResult, Echo, EchoVal, Outputs, RunContext};
use crate::dataio::{fmt_sig, read_points, CsvBuilder};
use crate::rules::{parse_grid, resolve_rule, BuiltRule, RuleArgs, RuleVisitor};

#[derive(clap::Args, Debug)]
pub struct ResampleArgs {
    #[command(flatten)]
    pub rule: RuleArgs,
    /// Total chain length each replicate runs to (conditioning included).
    #[arg(long)]
    pub horizon: Option<usize>,
    /// Number of posterior draws.
    #[arg(long)]
    pub replicates: Option<usize>,
    /// Terminal summary: predictive | empirical.
    #[arg(long)]
    pub estimator: Option<String>,
    /// Grid the terminal distribution is read on, e.g. cdf:0.25,0.5 or mass:1.
    #[arg(long)]
    pub grid: Option<String>,
    /// Conditioning data CSV; omit for the prior law.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Record a terminal functional instead of the grid: mixture-mean.
    #[arg(long)]
    pub functional: Option<String>,
    /// Emit the analytic Beta comparison (conjugate-family rules only).
    #[arg(long)]
    pub oracle: Option<bool>,
    /// Also rerun at a doubled horizon and compare the means.
    #[arg(long)]
    pub stability: Option<bool>,
    /// Histogram bin count for plot-ready tables (0 disables).
    #[arg(long)]
    pub bins: Option<usize>,
}

const KEYS: &[&str] = &[
    "horizon",
    "replicates",
    "estimator",
    "grid",
    "data",
    "functional",
    "oracle",
    "stability",
    "bins",
];

struct Job<'a> {
    plan: &'a ResamplingPlan,
    data: &'a [Point],
    stability: bool,
}

impl RuleVisitor for Job<'_> {
    type Out = (PosteriorSample, Option<StabilityReport>);

    fn visit<R: PredictiveRule>(self, rule: &R) -> CliResult<Self::Out> {
        let sample = sample_posterior(rule, self.data, self.plan)?;
        let stability = match self.stability {
            true => Some(stability_check(rule, self.data, self.plan)?),
            false => None,
        };
        Ok((sample, stability))
    }
}

pub fn run(ctx: &RunContext, args: &ResampleArgs) -> CliResult<()> {
    let sec = ctx.section("resample", KEYS)?;
    let horizon = match args.horizon {
        Some(h) => h,
        None => sec
            .get_usize("horizon")?
            .ok_or_else(|| config_err("resample needs --horizon or [resample].horizon"))?,
    };
    let replicates = match args.replicates {
        Some(r) => r,
        None => sec.get_usize("replicates")?.unwrap_or(200),
    };
    let estimator_s = match &args.estimator {
        Some(e) => e.clone(),
        None => sec.get_str("estimator")?.unwrap_or_else(|| "predictive".into()),
    };
    let estimator = match estimator_s.as_str() {
        "predictive" => TerminalEstimator::Predictive,
        "empirical" => TerminalEstimator::Empirical,
        other => {
            return Err(config_err(format!(
                "unknown estimator `{other}`; known: predictive, empirical"
            )))
        }
    };
    let grid_s = match &args.grid {
        Some(g) => g.clone(),
        None => sec
            .get_str("grid")?
            .ok_or_else(|| config_err("resample needs --grid or [resample].grid"))?,
    };
    let data_s = match &args.data {
        Some(d) => Some(d.display().to_string()),
        None => sec.get_str("data")?,
    };
    let functional = match &args.functional {
        Some(f) => Some(f.clone()),
        None => sec.get_str("functional")?,
    }
    .filter(|f| f != "none");
    let oracle = match args.oracle {
        Some(b) => b,
        None => sec.get_bool("oracle")?.unwrap_or(false),
    };
    let stability = match args.stability {
        Some(b) => b,
        None => sec.get_bool("stability")?.unwrap_or(false),
    };
    let bins = match args.bins {
        Some(b) => b,
        None => sec.get_usize("bins")?.unwrap_or(0),
    };

    let rule = resolve_rule(&args.rule, ctx, None)?;
    let space = rule.built.space();
    let grid = parse_grid(&grid_s, &space)?;
    let data = match &data_s {
        Some(p) => read_points(std::path::Path::new(p), &space)?,
        None => Vec::new(),
    };

    let mut echo = Echo::new(ctx);
    echo.section("rule");
    echo.put_kvs(rule.echo.clone());
    echo.section("resample");
    echo.put("horizon", EchoVal::UInt(horizon as u64));
    echo.put("replicates", EchoVal::UInt(replicates as u64));
    echo.put("estimator", EchoVal::Str(estimator_s.clone()));
    echo.put("grid", EchoVal::Str(grid_s.clone()));
    echo.put("oracle", EchoVal::Bool(oracle));
    echo.put("stability", EchoVal::Bool(stability));
    echo.put("bins", EchoVal::UInt(bins as u64));
    if let Some(d) = &data_s {
        echo.put("data", EchoVal::Str(d.clone()));
    }
    if let Some(f) = &functional {
        echo.put("functional", EchoVal::Str(f.clone()));
    }

    let plan = ResamplingPlan {
        horizon,
        replicates,
        grid: grid.clone(),
        estimator,
        seed: ctx.seed,
        workers: ctx.workers,
    };

    let (sample, stability_report) = match &functional {
        None => rule.built.accept(Job { plan: &plan, data: &data, stability })?,
        Some(f) => {
            if f != "mixture-mean" {
                return Err(config_err(format!(
                    "unknown functional `{f}`; known: mixture-mean"
                )));
            }
            let newton = match &rule.built {
                BuiltRule::Newton(r) => r,
                _ => {
                    return Err(config_err(
                        "functional `mixture-mean` needs the newton rule, which carries \
                         a mixing measure",
                    ))
                }
            };
            if stability {
                return Err(config_err(
                    "stability checking applies to grid sampling, not functionals",
                ));
            }
            let sample =
                functional_posterior(newton, &data, &plan, |st| Ok(vec![st.summary.mean()]))?;
            (sample, None)
        }
    };

    let oracle_report = match oracle {
        false => None,
        true => Some(beta_oracle(&rule.built, &data, &grid, &sample)?),
    };

    let mut outputs = Outputs::create(&ctx.out_dir)?;
    outputs.write_echo(&echo)?;

    let mut header: Vec<&str> = vec!["replicate"];
    header.extend(sample.meta.columns.iter().map(String::as_str));
    let mut table = CsvBuilder::new(&header);
    for (r, row) in sample.values.iter().enumerate() {
        let mut cells = vec![format!("{r}")];
        cells.extend(row.iter().map(|v| fmt_sig(*v)));
        table.row(&cells);
    }
    outputs.write("sample.csv", &table.finish())?;

    if bins > 0 {
        outputs.write("histogram.csv", &histogram(&sample, bins))?;
    }

    let mut extra = serde_json::json!({
        "meta": serde_json::to_value(&sample.meta)
            .map_err(|e| crate::context::CliError::Runtime(e.to_string()))?,
        "mean": sample.mean(),
        "sd": sample.sd(),
        "std_err": sample.std_err(),
    });
    if let Some(o) = oracle_report {
        extra["beta_oracle"] = o;
    }
    if let Some(s) = &stability_report {
        extra["stability"] = serde_json::to_value(s)
            .map_err(|e| crate::context::CliError::Runtime(e.to_string()))?;
    }
    outputs.write_metadata(ctx, extra)?;

    println!(
        "resample: {} draw(s) x {} column(s) -> {}",
        sample.replicates(),
        sample.width(),
        ctx.out_dir.join("sample.csv").display()
    );
    if let Some(s) = &stability_report {
        println!(
            "resample: horizon stability {} (worst z = {:.3} over {} -> {})",
            if s.pass { "ok" } else { "SUSPECT" },
            s.worst_z,
            s.horizon,
            s.doubled_horizon
        );
    }
    Ok(())
}

/// Bin every column of the sample over [0, 1]; each grid readout is a
/// probability, so the edges are fixed and the table is plot-ready.
fn histogram(sample: &PosteriorSample, bins: usize) -> String {
    let mut table = CsvBuilder::new(&["column", "bin", "lo", "hi", "count"]);
    for (i, name) in sample.meta.columns.iter().enumerate() {
        let mut counts = vec![0u64; bins];
        for v in sample.column(i) {
            let idx = ((v * bins as f64).floor() as usize).min(bins - 1);
            counts[idx] += 1;
        }
        for (b, c) in counts.iter().enumerate() {
            table.row(&[
                name.clone(),
                format!("{b}"),
                fmt_sig(b as f64 / bins as f64),
                fmt_sig((b + 1) as f64 / bins as f64),
                format!("{c}"),
            ]);
        }
    }
    table.finish()
}

/// The conjugate comparison: for an urn rule with an atomic base, the limit
/// mass of any label set is Beta-distributed with parameters read off the
/// base and the conditioning counts. Reports the KS distance of each sample
/// column against its analytic law.
fn beta_oracle(
    built: &BuiltRule,
    data: &[Point],
    grid: &EvalGrid,
    sample: &PosteriorSample,
) -> CliResult<serde_json::Value> {
    let polya: &PolyaRule = match built {
        BuiltRule::Polya(r) => r,
        _ => {
            return Err(config_err(
                "--oracle true needs the polya rule; other rules have no closed-form limit law",
            ))
        }
    };
    let dist = match polya.base() {
        BaseMeasure::Categorical(d) => d,
        _ => {
            return Err(config_err(
                "--oracle true needs a categorical base so label masses have Beta limits",
            ))
        }
    };
    let alpha = polya.alpha();
    let n = data.len() as f64;
    let mut entries = Vec::new();
    for (i, name) in sample.meta.columns.iter().enumerate() {
        let (p0, hits) = match grid {
            EvalGrid::Mass(points) => {
                let target = &points[i];
                let p0 = dist.mass(target);
                let hits = data.iter().filter(|x| *x == target).count();
                (p0, hits)
            }
            EvalGrid::Cdf(ts) => {
                let t = ts[i];
                let p0 = predbayes_core::Predictive::Finite(dist.clone()).eval_cdf(t)?;
                let hits = data
                    .iter()
                    .filter(|x| x.as_label().map(|l| f64::from(l) <= t).unwrap_or(false))
                    .count();
                (p0, hits)
            }
        };
        let a = alpha * p0 + hits as f64;
        let b = alpha * (1.0 - p0) + (n - hits as f64);
        let ks = beta_ks(&sample.column(i), a, b)?;
        entries.push(serde_json::json!({
            "column": name,
            "alpha_param": a,
            "beta_param": b,
            "ks": ks,
        }));
    }
    Ok(serde_json::Value::Array(entries))
}

fn beta_ks(column: &[f64], a: f64, b: f64) -> CliResult<f64> {
    if column.is_empty() {
        return Err(config_err("cannot compare an empty sample against the Beta law"));
    }
    let beta = Beta::new(a, b).map_err(|_| {
        config_err(format!("Beta({a}, {b}) is not a valid comparison law"))
    })?;
    let mut sorted = column.to_vec();
    sorted.sort_by(|x, y| x.partial_cmp(y).expect("grid readouts are finite"));
    let m = sorted.len() as f64;
    let mut ks: f64 = 0.0;
    for (i, v) in sorted.iter().enumerate() {
        let f = beta.cdf(*v);
        ks = ks.max((f - i as f64 / m).abs()).max((f - (i as f64 + 1.0) / m).abs());
    }
    Ok(ks)
}
