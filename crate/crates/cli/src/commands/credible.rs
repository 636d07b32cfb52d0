//! `credible`: fold a data file through the rule while accumulating scaled
//! predictive updates, then report Gaussian credible intervals for the
//! random limit at each grid point.

use std::path::PathBuf;

use predbayes_core::{
    accumulate_predictives, credible_interval, data_digest, gaussian_posterior, CredibleInterval,
    EvalGrid, GaussianApprox, Point, PredictiveRule,
};

use crate::context::{config_err, to_json_pretty, CliResult, Echo, EchoVal, Outputs, RunContext};
use crate::dataio::{fmt_sig, read_points, CsvBuilder};
use crate::rules::{parse_grid, resolve_rule, RuleArgs, RuleVisitor};

#[derive(clap::Args, Debug)]
pub struct CredibleArgs {
    #[command(flatten)]
    pub rule: RuleArgs,
    /// Conditioning data CSV (required; intervals concentrate as it grows).
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Grid the limit is evaluated on, e.g. cdf:0.25,0.5,0.75 or mass:0,1.
    #[arg(long)]
    pub grid: Option<String>,
    /// Credible level in (0, 1).
    #[arg(long)]
    pub level: Option<f64>,
}

const KEYS: &[&str] = &["data", "grid", "level"];

struct Job<'a> {
    grid: &'a EvalGrid,
    data: &'a [Point],
    level: f64,
}

impl RuleVisitor for Job<'_> {
    type Out = (Vec<f64>, Vec<CredibleInterval>, GaussianApprox);

    fn visit<R: PredictiveRule>(self, rule: &R) -> CliResult<Self::Out> {
        let (acc, state) = accumulate_predictives(rule, self.data, self.grid)?;
        let center = rule.predict(&state.summary)?.eval_on_grid(self.grid)?;
        let gauss = gaussian_posterior(&acc, &center)?;
        let mut intervals = Vec::with_capacity(center.len());
        for (i, c) in center.iter().enumerate() {
            intervals.push(credible_interval(&acc, *c, i, self.level)?);
        }
        Ok((center, intervals, gauss))
    }
}

pub fn run(ctx: &RunContext, args: &CredibleArgs) -> CliResult<()> {
    let sec = ctx.section("credible", KEYS)?;
    let data_s = match &args.data {
        Some(d) => d.display().to_string(),
        None => sec
            .get_str("data")?
            .ok_or_else(|| config_err("credible needs --data or [credible].data"))?,
    };
    let grid_s = match &args.grid {
        Some(g) => g.clone(),
        None => sec
            .get_str("grid")?
            .ok_or_else(|| config_err("credible needs --grid or [credible].grid"))?,
    };
    let level = match args.level {
        Some(l) => l,
        None => sec.get_f64("level")?.unwrap_or(0.9),
    };

    let rule = resolve_rule(&args.rule, ctx, None)?;
    let space = rule.built.space();
    let grid = parse_grid(&grid_s, &space)?;
    let data = read_points(std::path::Path::new(&data_s), &space)?;
    if data.is_empty() {
        return Err(config_err(format!(
            "{data_s} holds no observations; asymptotic intervals need data"
        )));
    }

    let mut echo = Echo::new(ctx);
    echo.section("rule");
    echo.put_kvs(rule.echo.clone());
    echo.section("credible");
    echo.put("data", EchoVal::Str(data_s.clone()));
    echo.put("grid", EchoVal::Str(grid_s.clone()));
    echo.put("level", EchoVal::Float(level));

    let (center, intervals, gauss) =
        rule.built.accept(Job { grid: &grid, data: &data, level })?;

    let mut outputs = Outputs::create(&ctx.out_dir)?;
    outputs.write_echo(&echo)?;

    let names = grid.column_names();
    let mut table = CsvBuilder::new(&["column", "center", "lo", "hi", "variance", "degenerate"]);
    for (i, name) in names.iter().enumerate() {
        let iv = &intervals[i];
        table.row(&[
            name.clone(),
            fmt_sig(center[i]),
            fmt_sig(iv.lo),
            fmt_sig(iv.hi),
            fmt_sig(gauss.covariance[i * gauss.dim + i]),
            format!("{}", u8::from(iv.degenerate)),
        ]);
    }
    outputs.write("credible.csv", &table.finish())?;
    outputs.write("gaussian.json", &to_json_pretty(&gauss)?)?;

    outputs.write_metadata(
        ctx,
        serde_json::json!({
            "rule": rule.built.name(),
            "conditioning": data.len(),
            "data_digest": data_digest(&data),
            "level": level,
            "whitening_degenerate": gauss.degenerate,
        }),
    )?;

    println!(
        "credible: {} interval(s) at level {} from {} observation(s) -> {}",
        names.len(),
        level,
        data.len(),
        ctx.out_dir.join("credible.csv").display()
    );
    Ok(())
}
