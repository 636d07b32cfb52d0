//! `simulate`: run a predictive chain forward and write one observation per
//! row, optionally recording the predictive on a grid after every step.

use std::path::PathBuf;

use predbayes_core::{
    condition, data_digest, EvalGrid, Point, PredictiveRule, RandomSource,
};

use crate::context::{CliResult, Echo, EchoVal, Outputs, RunContext};
use crate::dataio::{fmt_sig, point_cells, read_points, value_columns, CsvBuilder, TagRelabel};
use crate::rules::{parse_grid, resolve_rule, RuleArgs, RuleVisitor};

#[derive(clap::Args, Debug)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub rule: RuleArgs,
    /// Number of observations to draw.
    #[arg(long)]
    pub steps: Option<usize>,
    /// Record the predictive on this grid after every step (snapshots.csv).
    #[arg(long)]
    pub grid: Option<String>,
    /// Condition on this CSV before simulating.
    #[arg(long)]
    pub data: Option<PathBuf>,
}

const KEYS: &[&str] = &["steps", "grid", "data"];

struct Job<'a> {
    steps: usize,
    seed: u64,
    grid: Option<&'a EvalGrid>,
    data: &'a [Point],
}

struct JobOut {
    observations: Vec<Point>,
    snapshots: Option<Vec<Vec<f64>>>,
    initial_predictive: serde_json::Value,
}

impl RuleVisitor for Job<'_> {
    type Out = JobOut;

    fn visit<R: PredictiveRule>(self, rule: &R) -> CliResult<Self::Out> {
        let mut state = condition(rule, self.data)?;
        let start = rule.predict(&state.summary)?;
        let initial_predictive = super::describe_predictive(&start)?;
        let mut snapshots = match self.grid {
            Some(g) => Some(vec![start.eval_on_grid(g)?]),
            None => None,
        };
        let mut rng = RandomSource::new(self.seed);
        let mut observations = Vec::with_capacity(self.steps);
        for m in 0..self.steps {
            let x = rule.sample_next(&state.summary, &mut rng).map_err(|e| e_at(m, e))?;
            rule.update_in_place(&mut state.summary, &x).map_err(|e| e_at(m, e))?;
            state.n += 1;
            if let (Some(snaps), Some(g)) = (snapshots.as_mut(), self.grid) {
                snaps.push(rule.predict(&state.summary)?.eval_on_grid(g)?);
            }
            observations.push(x);
        }
        Ok(JobOut { observations, snapshots, initial_predictive })
    }
}

fn e_at(step: usize, e: predbayes_core::Error) -> predbayes_core::Error {
    use predbayes_core::Error;
    match e {
        Error::Config(m) => Error::Config(format!("step {step}: {m}")),
        Error::Numeric(m) => Error::Numeric(format!("step {step}: {m}")),
        other => other,
    }
}

pub fn run(ctx: &RunContext, args: &SimulateArgs) -> CliResult<()> {
    let sec = ctx.section("simulate", KEYS)?;
    let steps = match args.steps {
        Some(s) => s,
        None => sec.get_usize("steps")?.ok_or_else(|| {
            crate::context::config_err("simulate needs --steps or [simulate].steps")
        })?,
    };
    let grid_s = match &args.grid {
        Some(g) => Some(g.clone()),
        None => sec.get_str("grid")?,
    };
    let data_s = match &args.data {
        Some(d) => Some(d.display().to_string()),
        None => sec.get_str("data")?,
    };

    let rule = resolve_rule(&args.rule, ctx, None)?;
    let space = rule.built.space();
    let grid = grid_s.as_deref().map(|s| parse_grid(s, &space)).transpose()?;
    let data = match &data_s {
        Some(p) => read_points(std::path::Path::new(p), &space)?,
        None => Vec::new(),
    };

    let mut echo = Echo::new(ctx);
    echo.section("rule");
    echo.put_kvs(rule.echo.clone());
    echo.section("simulate");
    echo.put("steps", EchoVal::UInt(steps as u64));
    if let Some(g) = &grid_s {
        echo.put("grid", EchoVal::Str(g.clone()));
    }
    if let Some(d) = &data_s {
        echo.put("data", EchoVal::Str(d.clone()));
    }

    let out = rule.built.accept(Job { steps, seed: ctx.seed, grid: grid.as_ref(), data: &data })?;

    let mut outputs = Outputs::create(&ctx.out_dir)?;
    outputs.write_echo(&echo)?;

    let value_cols = value_columns(&space);
    let mut header: Vec<&str> = vec!["step"];
    header.extend(value_cols.iter().map(String::as_str));
    let mut chain = CsvBuilder::new(&header);
    let mut tags = TagRelabel::new();
    for (i, x) in out.observations.iter().enumerate() {
        let mut cells = vec![format!("{}", i + 1)];
        cells.extend(point_cells(x, &mut tags));
        chain.row(&cells);
    }
    outputs.write("chain.csv", &chain.finish())?;

    if let (Some(snaps), Some(g)) = (&out.snapshots, &grid) {
        let names = g.column_names();
        let mut header: Vec<&str> = vec!["step"];
        header.extend(names.iter().map(String::as_str));
        let mut table = CsvBuilder::new(&header);
        for (i, row) in snaps.iter().enumerate() {
            let mut cells = vec![format!("{i}")];
            cells.extend(row.iter().map(|v| fmt_sig(*v)));
            table.row(&cells);
        }
        outputs.write("snapshots.csv", &table.finish())?;
    }

    let mut extra = serde_json::json!({
        "rule": rule.built.name(),
        "space": space.describe(),
        "steps": steps,
        "conditioning": data.len(),
        "initial_predictive": out.initial_predictive,
    });
    if !data.is_empty() {
        extra["data_digest"] = serde_json::json!(data_digest(&data));
    }
    outputs.write_metadata(ctx, extra)?;

    println!(
        "simulate: {} draw(s) from `{}` -> {}",
        out.observations.len(),
        rule.built.name(),
        ctx.out_dir.join("chain.csv").display()
    );
    Ok(())
}
