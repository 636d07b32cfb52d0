//! `ogd`: the online logistic descent. `ogd run` streams (x, y) pairs from
//! a JSONL file, writes the coefficient trajectory, credible intervals for
//! the random limit, and a resumable checkpoint. `ogd coverage` runs the
//! Monte Carlo interval-coverage experiment in parallel.

use std::path::PathBuf;

use predbayes_core::{
    ogd_credible, ogd_u_plugin, ogd_update, ogd_vn, run_replicates, OgdState, PxInput,
    RandomSource,
};

use crate::context::{
    config_err, io_ctx, to_json_pretty, CliError, CliResult, Echo, EchoVal, Outputs, RunContext,
};
use crate::dataio::{fmt_sig, read_jsonl, CsvBuilder};
use crate::rules::{parse_rows, resolve_ogd, RuleArgs, RULE_KEYS};

#[derive(clap::Subcommand, Debug)]
pub enum OgdMode {
    /// Stream labeled pairs from a JSONL file through the descent.
    Run(OgdRunArgs),
    /// Estimate interval coverage of the random limit over many replicates.
    Coverage(OgdCoverageArgs),
}

#[derive(clap::Args, Debug)]
pub struct OgdRunArgs {
    #[command(flatten)]
    pub rule: RuleArgs,
    /// JSONL file of {"x": [...], "y": 0|1} records; y may be omitted to
    /// score without learning.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Stop after this many file records (0 = all); a later run can resume.
    #[arg(long)]
    pub limit: Option<usize>,
    /// Resume from a checkpoint written by an earlier run.
    #[arg(long)]
    pub resume: Option<PathBuf>,
    /// Credible level for the final intervals.
    #[arg(long)]
    pub level: Option<f64>,
}

#[derive(clap::Args, Debug)]
pub struct OgdCoverageArgs {
    #[command(flatten)]
    pub rule: RuleArgs,
    /// Independent descent chains to run.
    #[arg(long)]
    pub replicates: Option<usize>,
    /// Steps before the interval is read.
    #[arg(long)]
    pub train: Option<usize>,
    /// Further steps proxying the random limit.
    #[arg(long)]
    pub extend: Option<usize>,
    /// Credible level under test.
    #[arg(long)]
    pub level: Option<f64>,
}

const RUN_KEYS: &[&str] = &["data", "limit", "resume", "level"];
const COVERAGE_KEYS: &[&str] = &["replicates", "train", "extend", "level"];

/// Where a run stopped: the descent state plus the number of file records
/// already consumed (which exceeds `state.n()` when some lacked labels).
#[derive(serde::Serialize, serde::Deserialize)]
struct Checkpoint {
    records: usize,
    state: OgdState,
}

pub fn run_stream(ctx: &RunContext, args: &OgdRunArgs) -> CliResult<()> {
    let rule_sec = ctx.section("rule", RULE_KEYS)?;
    let sec = ctx.section("ogd", RUN_KEYS)?;
    let data_s = match &args.data {
        Some(d) => d.display().to_string(),
        None => sec
            .get_str("data")?
            .ok_or_else(|| config_err("ogd run needs --data or [ogd].data"))?,
    };
    let limit = match args.limit {
        Some(l) => l,
        None => sec.get_usize("limit")?.unwrap_or(0),
    };
    let resume_s = match &args.resume {
        Some(r) => Some(r.display().to_string()),
        None => sec.get_str("resume")?,
    };
    let level = match args.level {
        Some(l) => l,
        None => sec.get_f64("level")?.unwrap_or(0.95),
    };

    // A resumed run takes the state from the checkpoint; otherwise the rule
    // section fixes the starting point. The covariate law is optional either
    // way and only feeds the plug-in curvature report.
    let mut rule_echo: Vec<(String, EchoVal)> = vec![("kind".into(), EchoVal::Str("ogd".into()))];
    let (mut state, skip, law) = match &resume_s {
        Some(path) => {
            let p = std::path::Path::new(path);
            let text = io_ctx(std::fs::read_to_string(p), p, "reading checkpoint")?;
            let ckpt: Checkpoint = serde_json::from_str(&text)
                .map_err(|e| config_err(format!("{path} is not an ogd checkpoint: {e}")))?;
            let law_s = match &args.rule.covariates {
                Some(s) => Some(s.clone()),
                None => rule_sec.get_str("covariates")?,
            };
            let law = match law_s {
                Some(s) => {
                    let rows = parse_rows(&s, "covariates")?;
                    rule_echo.push(("covariates".into(), EchoVal::Str(s)));
                    Some(predbayes_core::CovariateLaw::uniform(rows)?)
                }
                None => None,
            };
            (ckpt.state, ckpt.records, law)
        }
        None => {
            let cfg = resolve_ogd(&args.rule, &rule_sec)?;
            rule_echo.extend(cfg.echo.clone());
            (cfg.state()?, 0, cfg.covariates)
        }
    };

    let records = read_jsonl(std::path::Path::new(&data_s))?;
    if skip > records.len() {
        return Err(config_err(format!(
            "checkpoint has already consumed {skip} records but {data_s} holds only {}",
            records.len()
        )));
    }
    let end = if limit == 0 { records.len() } else { limit.min(records.len()) };
    if end < skip {
        return Err(config_err(format!(
            "--limit {limit} lies before the checkpoint position {skip}"
        )));
    }

    let mut echo = Echo::new(ctx);
    echo.section("rule");
    echo.put_kvs(rule_echo);
    echo.section("ogd");
    echo.put("data", EchoVal::Str(data_s.clone()));
    echo.put("limit", EchoVal::UInt(limit as u64));
    echo.put("level", EchoVal::Float(level));
    if let Some(r) = &resume_s {
        echo.put("resume", EchoVal::Str(r.clone()));
    }

    // Tag data-driven failures with the record that triggered them, keeping
    // the configuration/computation split intact for the exit code.
    let tag = |i: usize, e: CliError| {
        let msg = format!("{data_s} record {}: {e}", i + 1);
        match e {
            CliError::Config(_) => CliError::Config(msg),
            CliError::Runtime(_) => CliError::Runtime(msg),
        }
    };

    let d = state.dim();
    let beta_cols: Vec<String> = (0..d).map(|i| format!("beta{i}")).collect();
    let mut header: Vec<&str> = vec!["step", "y", "prediction"];
    header.extend(beta_cols.iter().map(String::as_str));
    let mut table = CsvBuilder::new(&header);

    let learned_before = state.n();
    let mut unlabeled = 0usize;
    for (i, rec) in records.iter().enumerate().take(end).skip(skip) {
        let g = state.predict_prob(&rec.x).map_err(|e| tag(i, e.into()))?;
        let mut cells = vec![format!("{}", i + 1)];
        match rec.y {
            Some(y) => {
                ogd_update(&mut state, &rec.x, y).map_err(|e| tag(i, e.into()))?;
                cells.push(format!("{y}"));
            }
            None => {
                unlabeled += 1;
                cells.push(String::new());
            }
        }
        cells.push(fmt_sig(g));
        cells.extend(state.beta().iter().map(|b| fmt_sig(*b)));
        table.row(&cells);
    }

    let mut outputs = Outputs::create(&ctx.out_dir)?;
    outputs.write_echo(&echo)?;
    outputs.write("trajectory.csv", &table.finish())?;

    let mut extra = serde_json::json!({
        "rule": "ogd",
        "dim": d,
        "pairs_learned": state.n(),
        "level": level,
        "records": {
            "total": records.len(),
            "skipped": skip,
            "processed": end - skip,
            "unlabeled": unlabeled,
        },
    });

    if state.n() > 0 {
        let cred = ogd_credible(&state, level)?;
        let vn = ogd_vn(&state)?;
        let n = state.n() as f64;
        let mut cred_table =
            CsvBuilder::new(&["coordinate", "center", "lo", "hi", "variance", "degenerate"]);
        for i in 0..d {
            let iv = &cred.intervals[i];
            cred_table.row(&[
                format!("beta{i}"),
                fmt_sig(state.beta()[i]),
                fmt_sig(iv.lo),
                fmt_sig(iv.hi),
                fmt_sig(vn[i * d + i] / n),
                format!("{}", u8::from(iv.degenerate)),
            ]);
        }
        outputs.write("credible.csv", &cred_table.finish())?;
        extra["degenerate"] = serde_json::json!(cred.degenerate);
    }

    if let Some(law) = &law {
        if state.n() > 0 {
            let u = ogd_u_plugin(&state, PxInput::Finite(law))?;
            extra["u_plugin"] = serde_json::json!({"dim": u.dim, "matrix": u.matrix});
        }
    }

    let ckpt = Checkpoint { records: end, state: state.clone() };
    outputs.write("checkpoint.json", &to_json_pretty(&ckpt)?)?;
    outputs.write_metadata(ctx, extra)?;

    println!(
        "ogd run: {} record(s) ({} learned, {} scored only) -> {}",
        end - skip,
        state.n() - learned_before,
        unlabeled,
        ctx.out_dir.join("trajectory.csv").display()
    );
    Ok(())
}

const RATIO_BAND: (f64, f64) = (0.5, 2.0);

pub fn run_coverage(ctx: &RunContext, args: &OgdCoverageArgs) -> CliResult<()> {
    let rule_sec = ctx.section("rule", RULE_KEYS)?;
    let sec = ctx.section("ogd", COVERAGE_KEYS)?;
    let replicates = match args.replicates {
        Some(r) => r,
        None => sec.get_usize("replicates")?.unwrap_or(200),
    };
    let train = match args.train {
        Some(t) => t,
        None => sec.get_usize("train")?.unwrap_or(1000),
    };
    let extend = match args.extend {
        Some(e) => e,
        None => sec.get_usize("extend")?.unwrap_or(10_000),
    };
    let level = match args.level {
        Some(l) => l,
        None => sec.get_f64("level")?.unwrap_or(0.95),
    };
    if replicates == 0 || train == 0 {
        return Err(config_err("coverage needs at least one replicate and one training step"));
    }

    // Default design: uniform over the four corners of {0,1}^2, the
    // smallest law with a non-singular curvature.
    let mut rule_args = args.rule.clone();
    if rule_args.covariates.is_none() && rule_sec.get_str("covariates")?.is_none() {
        rule_args.covariates = Some("0,0;0,1;1,0;1,1".into());
    }
    let cfg = resolve_ogd(&rule_args, &rule_sec)?;
    let law = cfg.covariates.clone().expect("coverage always resolves a covariate law");
    let d = cfg.beta0.len();

    let mut echo = Echo::new(ctx);
    echo.section("rule");
    echo.put("kind", EchoVal::Str("ogd".into()));
    echo.put_kvs(cfg.echo.clone());
    echo.section("ogd");
    echo.put("replicates", EchoVal::UInt(replicates as u64));
    echo.put("train", EchoVal::UInt(train as u64));
    echo.put("extend", EchoVal::UInt(extend as u64));
    echo.put("level", EchoVal::Float(level));

    let root = RandomSource::new(ctx.seed);
    let advance = |state: &mut OgdState, rng: &mut RandomSource| -> predbayes_core::Result<()> {
        let x = law.sample(rng).to_vec();
        let g = state.predict_prob(&x)?;
        let y = u8::from(rng.bernoulli(g));
        ogd_update(state, &x, y)
    };
    // Row layout: d coverage flags, d interval widths, one curvature flag.
    let rows = run_replicates(replicates, ctx.workers, |r| {
        let mut rng = root.branch(r);
        let mut state = cfg
            .state()
            .map_err(|e| predbayes_core::Error::Config(format!("replicate {r}: {e}")))?;
        for _ in 0..train {
            advance(&mut state, &mut rng)?;
        }
        let cred = ogd_credible(&state, level)?;
        let vn = ogd_vn(&state)?;
        let u = ogd_u_plugin(&state, PxInput::Finite(&law))?;
        let ratio_ok = vn.iter().zip(u.matrix.iter()).all(|(v, u)| {
            u.abs() <= 1e-9 || {
                let ratio = v / u;
                (RATIO_BAND.0..=RATIO_BAND.1).contains(&ratio)
            }
        });
        for _ in 0..extend {
            advance(&mut state, &mut rng)?;
        }
        let mut row = Vec::with_capacity(2 * d + 1);
        for i in 0..d {
            row.push(f64::from(u8::from(cred.intervals[i].contains(state.beta()[i]))));
        }
        for i in 0..d {
            row.push(cred.intervals[i].width());
        }
        row.push(f64::from(u8::from(ratio_ok)));
        Ok(row)
    })?;

    let mut covered = vec![0u64; d];
    let mut width_sum = vec![0.0f64; d];
    let mut ratio_within = 0u64;
    for row in &rows {
        for i in 0..d {
            covered[i] += row[i] as u64;
            width_sum[i] += row[d + i];
        }
        ratio_within += row[2 * d] as u64;
    }

    let mut outputs = Outputs::create(&ctx.out_dir)?;
    outputs.write_echo(&echo)?;

    let mut table = CsvBuilder::new(&["coordinate", "covered", "replicates", "rate", "mean_width"]);
    for i in 0..d {
        table.row(&[
            format!("beta{i}"),
            format!("{}", covered[i]),
            format!("{replicates}"),
            fmt_sig(covered[i] as f64 / replicates as f64),
            fmt_sig(width_sum[i] / replicates as f64),
        ]);
    }
    outputs.write("coverage.csv", &table.finish())?;

    outputs.write_metadata(
        ctx,
        serde_json::json!({
            "rule": "ogd",
            "dim": d,
            "level": level,
            "train": train,
            "extend": extend,
            "replicates": replicates,
            "curvature_ratio_band": [RATIO_BAND.0, RATIO_BAND.1],
            "curvature_ratio_within_band": ratio_within,
        }),
    )?;

    let rates: Vec<String> =
        (0..d).map(|i| format!("{:.3}", covered[i] as f64 / replicates as f64)).collect();
    println!(
        "ogd coverage: rates [{}] at level {} over {} replicate(s) -> {}",
        rates.join(", "),
        level,
        replicates,
        ctx.out_dir.join("coverage.csv").display()
    );
    Ok(())
}
