//! `newton`: run the recursive mixing-measure estimate, one row per
//! observation, on file data and/or self-simulated draws.

use std::path::PathBuf;

use predbayes_core::{
    data_digest, newton_predict, newton_update, MixingGrid, Point, RandomSource,
};

use crate::context::{config_err, to_json_pretty, CliResult, Echo, EchoVal, Outputs, RunContext};
use crate::dataio::{fmt_sig, read_points, CsvBuilder};
use crate::rules::{resolve_mixing_grid, RuleArgs, RULE_KEYS};

#[derive(clap::Args, Debug)]
pub struct NewtonArgs {
    #[command(flatten)]
    pub rule: RuleArgs,
    /// Observations to simulate from the current predictive after the data.
    #[arg(long)]
    pub steps: Option<usize>,
    /// Observation CSV to feed through the recursion first.
    #[arg(long)]
    pub data: Option<PathBuf>,
}

const KEYS: &[&str] = &["steps", "data"];

pub fn run(ctx: &RunContext, args: &NewtonArgs) -> CliResult<()> {
    if let Some(kind) = &args.rule.rule {
        if kind != "newton" {
            return Err(config_err(format!(
                "the newton command runs the newton rule; got --rule {kind}"
            )));
        }
    }
    let rule_sec = ctx.section("rule", RULE_KEYS)?;
    let (grid0, rule_echo) = resolve_mixing_grid(&args.rule, &rule_sec)?;

    let sec = ctx.section("newton", KEYS)?;
    let steps = match args.steps {
        Some(s) => s,
        None => sec.get_usize("steps")?.unwrap_or(0),
    };
    let data_s = match &args.data {
        Some(d) => Some(d.display().to_string()),
        None => sec.get_str("data")?,
    };
    let space = grid0.kernel().space();
    let data = match &data_s {
        Some(p) => read_points(std::path::Path::new(p), &space)?,
        None => Vec::new(),
    };
    if steps == 0 && data.is_empty() {
        return Err(config_err("newton needs --data and/or --steps > 0"));
    }

    let mut echo = Echo::new(ctx);
    echo.section("rule");
    echo.put("kind", EchoVal::Str("newton".into()));
    echo.put_kvs(rule_echo);
    echo.section("newton");
    echo.put("steps", EchoVal::UInt(steps as u64));
    if let Some(d) = &data_s {
        echo.put("data", EchoVal::Str(d.clone()));
    }

    let theta_cols: Vec<String> =
        grid0.thetas().iter().map(|t| format!("prob@{t:?}")).collect();
    let mut header: Vec<&str> = vec!["step", "x"];
    header.extend(theta_cols.iter().map(String::as_str));
    header.push("mean");
    header.push("variance");
    let mut table = CsvBuilder::new(&header);

    let push_row = |table: &mut CsvBuilder, step: usize, x: Option<&Point>, g: &MixingGrid| {
        let mut cells = vec![format!("{step}")];
        cells.push(match x {
            None => String::new(),
            Some(Point::Label(v)) => format!("{v}"),
            Some(Point::Real(v)) => fmt_sig(*v),
            Some(other) => other.describe(),
        });
        cells.extend(g.probs().iter().map(|p| fmt_sig(*p)));
        cells.push(fmt_sig(g.mean()));
        cells.push(fmt_sig(g.variance()));
        table.row(&cells);
    };

    let tag = |step: usize, e: predbayes_core::Error| {
        let cli: crate::context::CliError = e.into();
        match cli {
            crate::context::CliError::Config(m) => {
                crate::context::CliError::Config(format!("observation {step}: {m}"))
            }
            crate::context::CliError::Runtime(m) => {
                crate::context::CliError::Runtime(format!("observation {step}: {m}"))
            }
        }
    };

    let mut g = grid0;
    push_row(&mut table, 0, None, &g);
    let mut step = 0usize;
    for x in &data {
        g = newton_update(&g, x).map_err(|e| tag(step + 1, e))?;
        step += 1;
        push_row(&mut table, step, Some(x), &g);
    }
    let mut rng = RandomSource::new(ctx.seed);
    for _ in 0..steps {
        let x = newton_predict(&g)?.sample(&mut rng)?;
        g = newton_update(&g, &x)?;
        step += 1;
        push_row(&mut table, step, Some(&x), &g);
    }

    let mut outputs = Outputs::create(&ctx.out_dir)?;
    outputs.write_echo(&echo)?;
    outputs.write("trajectory.csv", &table.finish())?;
    outputs.write(
        "final.json",
        &to_json_pretty(&serde_json::json!({
            "grid": &g,
            "mean": g.mean(),
            "variance": g.variance(),
            "n": g.n(),
        }))?,
    )?;

    let mut extra = serde_json::json!({
        "rule": "newton",
        "space": space.describe(),
        "steps": steps,
        "conditioning": data.len(),
        "mean": g.mean(),
        "variance": g.variance(),
    });
    if !data.is_empty() {
        extra["data_digest"] = serde_json::json!(data_digest(&data));
    }
    outputs.write_metadata(ctx, extra)?;

    println!(
        "newton: {} update(s), posterior-mean estimate {:.6} -> {}",
        step,
        g.mean(),
        ctx.out_dir.join("trajectory.csv").display()
    );
    Ok(())
}
