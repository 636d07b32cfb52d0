//! `diagnose`: exhaustive small-sample checks of the structural properties
//! a predictive rule claims — exchangeability, the conditional-identity
//! martingale, their array (partial) versions, the Markov swap identity,
//! and partition-function consistency.
//!
//! A failing check is a successful diagnosis, so the command exits 0 either
//! way; the verdicts live in `diagnostics.json` and on stdout.

use predbayes_core::{
    check_cid, check_eppf, check_exchangeable, check_markov_exchangeable, check_partial_cid,
    check_partial_exchangeable, CoupledWeightColumns, DiagnosticReport, EppfSpec, Point,
    PredictiveRule,
};

use crate::context::{config_err, to_json_pretty, CliResult, Echo, EchoVal, Outputs, RunContext};
use crate::rules::{
    parse_base, pick_f64, pick_str, pick_usize, require, resolve_rule, BuiltRule, RuleArgs,
    RuleVisitor, RULE_KEYS,
};

#[derive(clap::Args, Debug)]
pub struct DiagnoseArgs {
    #[command(flatten)]
    pub rule: RuleArgs,
    /// Comma-separated checks: exchangeable, cid, partial-exchangeable,
    /// partial-cid, markov, eppf.
    #[arg(long)]
    pub checks: Option<String>,
    /// Enumeration horizon (sequence length / array rows / partition size).
    #[arg(long)]
    pub n_max: Option<usize>,
    /// Total-count depth for the Markov swap scan.
    #[arg(long)]
    pub depth: Option<usize>,
    /// Column count for the partial (array) checks.
    #[arg(long)]
    pub columns: Option<usize>,
}

const KEYS: &[&str] = &["checks", "n_max", "depth", "columns"];

const KNOWN_CHECKS: &[&str] = &[
    "exchangeable",
    "cid",
    "partial-exchangeable",
    "partial-cid",
    "markov",
    "eppf",
];

struct ExchangeableJob {
    n_max: usize,
}

impl RuleVisitor for ExchangeableJob {
    type Out = DiagnosticReport;
    fn visit<R: PredictiveRule>(self, rule: &R) -> CliResult<DiagnosticReport> {
        Ok(check_exchangeable(rule, self.n_max)?)
    }
}

struct CidJob {
    n_max: usize,
}

impl RuleVisitor for CidJob {
    type Out = DiagnosticReport;
    fn visit<R: PredictiveRule>(self, rule: &R) -> CliResult<DiagnosticReport> {
        Ok(check_cid(rule, self.n_max)?)
    }
}

pub fn run(ctx: &RunContext, args: &DiagnoseArgs) -> CliResult<()> {
    let rule_sec = ctx.section("rule", RULE_KEYS)?;
    let sec = ctx.section("diagnose", KEYS)?;
    let checks_s = match &args.checks {
        Some(c) => c.clone(),
        None => sec.get_str("checks")?.unwrap_or_else(|| "exchangeable,cid".into()),
    };
    let n_max = match args.n_max {
        Some(n) => n,
        None => sec.get_usize("n_max")?.unwrap_or(4),
    };
    let depth = match args.depth {
        Some(d) => d,
        None => sec.get_usize("depth")?.unwrap_or(3),
    };
    let columns = match args.columns {
        Some(c) => c,
        None => sec.get_usize("columns")?.unwrap_or(2),
    };

    let checks: Vec<String> = checks_s
        .split(',')
        .map(|c| c.trim().to_string())
        .filter(|c| !c.is_empty())
        .collect();
    if checks.is_empty() {
        return Err(config_err("no checks requested"));
    }
    for c in &checks {
        if !KNOWN_CHECKS.contains(&c.as_str()) {
            return Err(config_err(format!(
                "unknown check `{c}`; known: {}",
                KNOWN_CHECKS.join(", ")
            )));
        }
    }

    // Rule-driven checks share one resolution; the partial and eppf checks
    // read the relevant [rule] keys directly so, say, `--checks eppf` does
    // not demand a complete sequence rule.
    let needs_rule =
        checks.iter().any(|c| matches!(c.as_str(), "exchangeable" | "cid" | "markov"));
    let resolved = if needs_rule { Some(resolve_rule(&args.rule, ctx, None)?) } else { None };

    // The echoed [rule] section merges whatever each check consumed; the
    // same flag feeds every check that wants it, so first write wins.
    let mut rule_kvs: Vec<(String, EchoVal)> = Vec::new();
    let push_unique = |kvs: &mut Vec<(String, EchoVal)>, key: &str, val: EchoVal| {
        if !kvs.iter().any(|(k, _)| k == key) {
            kvs.push((key.to_string(), val));
        }
    };
    if let Some(r) = &resolved {
        for (k, v) in &r.echo {
            push_unique(&mut rule_kvs, k, v.clone());
        }
    }

    let mut reports: Vec<DiagnosticReport> = Vec::new();
    for check in &checks {
        let report = match check.as_str() {
            "exchangeable" => {
                let r = resolved.as_ref().expect("rule resolved above");
                r.built.accept(ExchangeableJob { n_max })?
            }
            "cid" => {
                let r = resolved.as_ref().expect("rule resolved above");
                r.built.accept(CidJob { n_max })?
            }
            "markov" => {
                let r = resolved.as_ref().expect("rule resolved above");
                let urn = match &r.built {
                    BuiltRule::Urn(u) => u,
                    _ => {
                        return Err(config_err(format!(
                            "the markov check applies to --rule urn, not `{}`",
                            r.kind
                        )))
                    }
                };
                let params = urn.params();
                let states: Vec<Point> = params.states().cloned().collect();
                check_markov_exchangeable(|y, x, row| params.row_predict(y, x, row), &states, depth)?
            }
            "partial-exchangeable" | "partial-cid" => {
                if columns == 0 {
                    return Err(config_err("partial checks need at least one column"));
                }
                let alpha = pick_f64(args.rule.alpha, &rule_sec, "alpha")?.unwrap_or(1.0);
                let base_s = require(
                    pick_str(&args.rule.base, &rule_sec, "base")?,
                    "partial checks",
                    "base",
                )?;
                let base = parse_base(&base_s)?;
                push_unique(&mut rule_kvs, "alpha", EchoVal::Float(alpha));
                push_unique(&mut rule_kvs, "base", EchoVal::Str(base_s));
                let cols =
                    CoupledWeightColumns::unit_weights(vec![alpha; columns], vec![base; columns])?;
                if check == "partial-exchangeable" {
                    check_partial_exchangeable(&cols, n_max)?
                } else {
                    check_partial_cid(&cols, n_max)?
                }
            }
            "eppf" => {
                let family =
                    pick_str(&args.rule.eppf, &rule_sec, "eppf")?.unwrap_or_else(|| "crp".into());
                let alpha = pick_f64(args.rule.alpha, &rule_sec, "alpha")?.unwrap_or(1.0);
                push_unique(&mut rule_kvs, "eppf", EchoVal::Str(family.clone()));
                push_unique(&mut rule_kvs, "alpha", EchoVal::Float(alpha));
                let spec = match family.as_str() {
                    "crp" => EppfSpec::crp(alpha)?,
                    "pitman-yor" => {
                        let discount = require(
                            pick_f64(args.rule.discount, &rule_sec, "discount")?,
                            "eppf pitman-yor",
                            "discount",
                        )?;
                        push_unique(&mut rule_kvs, "discount", EchoVal::Float(discount));
                        EppfSpec::pitman_yor(alpha, discount)?
                    }
                    "dirichlet" => {
                        let classes = require(
                            pick_usize(args.rule.classes, &rule_sec, "classes")?,
                            "eppf dirichlet",
                            "classes",
                        )?;
                        push_unique(&mut rule_kvs, "classes", EchoVal::UInt(classes as u64));
                        EppfSpec::finite_dirichlet(alpha, classes)?
                    }
                    other => {
                        return Err(config_err(format!(
                            "unknown partition family `{other}`; known: crp, pitman-yor, dirichlet"
                        )))
                    }
                };
                check_eppf(&spec, n_max)?
            }
            _ => unreachable!("validated above"),
        };
        println!("{}", report.summary_line());
        reports.push(report);
    }

    let mut echo = Echo::new(ctx);
    if !rule_kvs.is_empty() {
        echo.section("rule");
        echo.put_kvs(rule_kvs);
    }
    echo.section("diagnose");
    echo.put("checks", EchoVal::Str(checks.join(",")));
    echo.put("n_max", EchoVal::UInt(n_max as u64));
    echo.put("depth", EchoVal::UInt(depth as u64));
    echo.put("columns", EchoVal::UInt(columns as u64));

    let mut outputs = Outputs::create(&ctx.out_dir)?;
    outputs.write_echo(&echo)?;
    outputs.write("diagnostics.json", &to_json_pretty(&reports)?)?;

    let passed = reports.iter().filter(|r| r.pass).count();
    outputs.write_metadata(
        ctx,
        serde_json::json!({
            "rule": resolved.as_ref().map(|r| r.built.name()),
            "checks": checks,
            "passed": passed,
            "failed": reports.len() - passed,
        }),
    )?;

    println!(
        "diagnose: {passed}/{} check(s) passed -> {}",
        reports.len(),
        ctx.out_dir.join("diagnostics.json").display()
    );
    Ok(())
}
