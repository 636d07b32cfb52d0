//! `graphon`: sample binary relational arrays from a constant or
//! block-structured graphon, in either the two-object-set (separate) or
//! one-object-set (joint) sampling regime.

use predbayes_core::{graphon_sample, Graphon, GraphonMode, RandomSource};

use crate::context::{config_err, CliResult, Echo, EchoVal, Outputs, RunContext};
use crate::dataio::CsvBuilder;
use crate::rules::{parse_f64_list, parse_rows};

#[derive(clap::Args, Debug)]
pub struct GraphonArgs {
    /// Graphon family: constant | blocks.
    #[arg(long)]
    pub kind: Option<String>,
    /// Edge probability for the constant graphon.
    #[arg(long)]
    pub p: Option<f64>,
    /// Interior breakpoints of [0,1] for the block graphon, e.g. 0.3,0.6.
    #[arg(long)]
    pub cuts: Option<String>,
    /// Block values, one row per ';', e.g. 0.8,0.1;0.1,0.7.
    #[arg(long)]
    pub matrix: Option<String>,
    /// Array size (rows = columns = n).
    #[arg(long)]
    pub n: Option<usize>,
    /// Latent-uniform sharing: separate | joint.
    #[arg(long)]
    pub mode: Option<String>,
    /// Number of independent arrays to draw.
    #[arg(long)]
    pub count: Option<usize>,
}

const KEYS: &[&str] = &["kind", "p", "cuts", "matrix", "n", "mode", "count"];

pub fn run(ctx: &RunContext, args: &GraphonArgs) -> CliResult<()> {
    let sec = ctx.section("graphon", KEYS)?;
    let kind = match &args.kind {
        Some(k) => k.clone(),
        None => sec.get_str("kind")?.unwrap_or_else(|| "constant".into()),
    };
    let n = match args.n {
        Some(n) => n,
        None => sec.get_usize("n")?.unwrap_or(30),
    };
    let mode_s = match &args.mode {
        Some(m) => m.clone(),
        None => sec.get_str("mode")?.unwrap_or_else(|| "joint".into()),
    };
    let count = match args.count {
        Some(c) => c,
        None => sec.get_usize("count")?.unwrap_or(1),
    };
    if count == 0 {
        return Err(config_err("array count must be at least 1"));
    }
    let mode = match mode_s.as_str() {
        "separate" => GraphonMode::Separate,
        "joint" => GraphonMode::Joint,
        other => {
            return Err(config_err(format!("unknown mode `{other}`; known: separate, joint")))
        }
    };

    let mut echo = Echo::new(ctx);
    echo.section("graphon");
    echo.put("kind", EchoVal::Str(kind.clone()));
    echo.put("n", EchoVal::UInt(n as u64));
    echo.put("mode", EchoVal::Str(mode_s.clone()));
    echo.put("count", EchoVal::UInt(count as u64));

    let w = match kind.as_str() {
        "constant" => {
            let p = match args.p {
                Some(p) => p,
                None => sec.get_f64("p")?.unwrap_or(0.5),
            };
            echo.put("p", EchoVal::Float(p));
            Graphon::constant(p)?
        }
        "blocks" => {
            let cuts = match &args.cuts {
                Some(s) => parse_f64_list(s, "cuts")?,
                None => sec
                    .get_f64_list("cuts")?
                    .ok_or_else(|| config_err("graphon `blocks` needs --cuts or [graphon].cuts"))?,
            };
            let matrix_s = match &args.matrix {
                Some(s) => s.clone(),
                None => sec.get_str("matrix")?.ok_or_else(|| {
                    config_err("graphon `blocks` needs --matrix or [graphon].matrix")
                })?,
            };
            let matrix = parse_rows(&matrix_s, "matrix")?;
            echo.put("cuts", EchoVal::Floats(cuts.clone()));
            echo.put("matrix", EchoVal::Str(matrix_s));
            Graphon::blocks(cuts, matrix)?
        }
        other => {
            return Err(config_err(format!("unknown graphon `{other}`; known: constant, blocks")))
        }
    };

    // Arrays are keyed by index off the root source, so the draw for array
    // `a` does not depend on how many came before it.
    let root = RandomSource::new(ctx.seed);
    let mut arrays_csv = CsvBuilder::new(&["array", "row", "col", "value"]);
    let mut degrees_csv = CsvBuilder::new(&["array", "node", "degree"]);
    let mut summaries = Vec::with_capacity(count);
    for a in 0..count {
        let mut rng = root.branch(a as u64);
        let x = graphon_sample(&w, n, mode, &mut rng)?;
        for i in 0..n {
            for j in 0..n {
                arrays_csv.row(&[
                    format!("{a}"),
                    format!("{i}"),
                    format!("{j}"),
                    format!("{}", x.get(i, j)),
                ]);
            }
            degrees_csv.row(&[format!("{a}"), format!("{i}"), format!("{}", x.row_sum(i))]);
        }
        summaries.push(serde_json::json!({
            "array": a,
            "ones": x.ones(),
            "symmetric": x.is_symmetric(),
            "zero_diagonal": x.zero_diagonal(),
        }));
    }

    let mut outputs = Outputs::create(&ctx.out_dir)?;
    outputs.write_echo(&echo)?;
    outputs.write("arrays.csv", &arrays_csv.finish())?;
    outputs.write("degrees.csv", &degrees_csv.finish())?;

    let total_ones: usize =
        summaries.iter().map(|s| s["ones"].as_u64().unwrap() as usize).sum();
    outputs.write_metadata(
        ctx,
        serde_json::json!({
            "kind": kind,
            "n": n,
            "mode": mode,
            "count": count,
            "arrays": summaries,
        }),
    )?;

    println!(
        "graphon: {count} array(s) of size {n}x{n} ({mode_s}), {total_ones} edge(s) -> {}",
        ctx.out_dir.join("arrays.csv").display()
    );
    Ok(())
}
