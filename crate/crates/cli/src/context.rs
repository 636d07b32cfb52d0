//! Run-level plumbing: error classification, config-file access, the
//! deterministic config echo, and output-directory bookkeeping.

use std::fmt;
use std::path::{Path, PathBuf};

/// Everything that can go wrong, split by exit code: `Config` covers bad
/// parameters, malformed files, and I/O (exit 2); `Runtime` covers failures
/// arising inside a computation (exit 3).
#[derive(Debug)]
pub enum CliError {
    Config(String),
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Runtime(_) => 3,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "{m}"),
            CliError::Runtime(m) => write!(f, "{m}"),
        }
    }
}

impl From<predbayes_core::Error> for CliError {
    fn from(e: predbayes_core::Error) -> Self {
        if e.is_configuration() {
            CliError::Config(e.to_string())
        } else {
            CliError::Runtime(e.to_string())
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;

pub fn config_err(msg: impl Into<String>) -> CliError {
    CliError::Config(msg.into())
}

/// Wrap an I/O result with the path it touched; all file problems are
/// configuration-class errors.
pub fn io_ctx<T>(r: std::io::Result<T>, path: &Path, action: &str) -> CliResult<T> {
    r.map_err(|e| config_err(format!("{action} {}: {e}", path.display())))
}

// ---------------------------------------------------------------------------
// Config file access
// ---------------------------------------------------------------------------

/// Seed/worker/output settings plus the parsed config file (empty table when
/// no file was given).
pub struct RunContext {
    pub command: String,
    pub seed: u64,
    pub workers: usize,
    pub out_dir: PathBuf,
    table: toml::Table,
}

pub const WORKERS_ENV: &str = "PREDBAYES_WORKERS";

const RUN_KEYS: &[&str] = &["command", "out_dir", "seed", "workers"];

impl RunContext {
    /// Resolve the execution settings. Precedence per key: command-line
    /// flag, then the `[run]` section of the config file, then (for the
    /// worker count only) the environment, then the built-in default.
    pub fn build(
        command: &str,
        seed_flag: Option<u64>,
        workers_flag: Option<usize>,
        out_dir_flag: Option<PathBuf>,
        config_path: Option<&Path>,
    ) -> CliResult<Self> {
        let table = match config_path {
            Some(p) => {
                let text = io_ctx(std::fs::read_to_string(p), p, "reading config")?;
                text.parse::<toml::Table>().map_err(|e| {
                    config_err(format!("config {} is not valid TOML: {e}", p.display()))
                })?
            }
            None => toml::Table::new(),
        };
        let run = Section::of(&table, "run", RUN_KEYS)?;
        if let Some(recorded) = run.get_str("command")? {
            if recorded != command {
                return Err(config_err(format!(
                    "config was echoed by `{recorded}` but `{command}` was invoked; \
                     pass it to the matching subcommand"
                )));
            }
        }
        let seed = match seed_flag {
            Some(s) => s,
            None => run.get_seed()?.unwrap_or(0),
        };
        let workers = match workers_flag {
            Some(w) => w,
            None => match run.get_usize("workers")? {
                Some(w) => w,
                None => workers_from_env()?.unwrap_or(1),
            },
        };
        if workers == 0 {
            return Err(config_err("worker count must be at least 1"));
        }
        let out_dir = out_dir_flag
            .or(run.get_str("out_dir")?.map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from("predbayes-out"));
        Ok(RunContext { command: command.to_string(), seed, workers, out_dir, table })
    }

    /// A named section of the config file, with its key set validated.
    pub fn section<'a>(&'a self, name: &str, keys: &'static [&'static str]) -> CliResult<Section<'a>> {
        Section::of(&self.table, name, keys)
    }
}

fn workers_from_env() -> CliResult<Option<usize>> {
    match std::env::var(WORKERS_ENV) {
        Ok(v) => {
            let n: usize = v
                .trim()
                .parse()
                .map_err(|_| config_err(format!("{WORKERS_ENV}={v} is not a worker count")))?;
            Ok(Some(n))
        }
        Err(_) => Ok(None),
    }
}

/// Typed access to one config section. Every getter reports the full
/// `[section].key` path on a type mismatch, and construction rejects keys
/// the command does not know.
#[derive(Debug)]
pub struct Section<'a> {
    name: String,
    table: Option<&'a toml::Table>,
}

impl<'a> Section<'a> {
    fn of(root: &'a toml::Table, name: &str, keys: &'static [&'static str]) -> CliResult<Self> {
        let table = match root.get(name) {
            None => None,
            Some(toml::Value::Table(t)) => {
                for k in t.keys() {
                    if !keys.contains(&k.as_str()) {
                        return Err(config_err(format!(
                            "config [{name}] has unknown key `{k}` (known: {})",
                            keys.join(", ")
                        )));
                    }
                }
                Some(t)
            }
            Some(_) => {
                return Err(config_err(format!("config entry `{name}` must be a [{name}] section")))
            }
        };
        Ok(Section { name: name.to_string(), table })
    }

    fn raw(&self, key: &str) -> Option<&'a toml::Value> {
        self.table.and_then(|t| t.get(key))
    }

    fn type_err(&self, key: &str, want: &str, got: &toml::Value) -> CliError {
        config_err(format!(
            "config [{}].{key}: expected {want}, got {}",
            self.name,
            got.type_str()
        ))
    }

    pub fn get_str(&self, key: &str) -> CliResult<Option<String>> {
        match self.raw(key) {
            None => Ok(None),
            Some(toml::Value::String(s)) => Ok(Some(s.clone())),
            Some(v) => Err(self.type_err(key, "a string", v)),
        }
    }

    pub fn get_f64(&self, key: &str) -> CliResult<Option<f64>> {
        match self.raw(key) {
            None => Ok(None),
            Some(toml::Value::Float(x)) => Ok(Some(*x)),
            Some(toml::Value::Integer(n)) => Ok(Some(*n as f64)),
            Some(v) => Err(self.type_err(key, "a number", v)),
        }
    }

    pub fn get_usize(&self, key: &str) -> CliResult<Option<usize>> {
        match self.raw(key) {
            None => Ok(None),
            Some(toml::Value::Integer(n)) if *n >= 0 => Ok(Some(*n as usize)),
            Some(v) => Err(self.type_err(key, "a non-negative integer", v)),
        }
    }

    pub fn get_bool(&self, key: &str) -> CliResult<Option<bool>> {
        match self.raw(key) {
            None => Ok(None),
            Some(toml::Value::Boolean(b)) => Ok(Some(*b)),
            Some(v) => Err(self.type_err(key, "a boolean", v)),
        }
    }

    /// Seeds are full 64-bit values; accept an integer when it fits and a
    /// decimal string otherwise (the echo writes the same way).
    pub fn get_seed(&self) -> CliResult<Option<u64>> {
        match self.raw("seed") {
            None => Ok(None),
            Some(toml::Value::Integer(n)) if *n >= 0 => Ok(Some(*n as u64)),
            Some(toml::Value::String(s)) => s
                .parse::<u64>()
                .map(Some)
                .map_err(|_| config_err(format!("config [{}].seed: `{s}` is not a seed", self.name))),
            Some(v) => Err(self.type_err("seed", "a 64-bit seed", v)),
        }
    }

    pub fn get_f64_list(&self, key: &str) -> CliResult<Option<Vec<f64>>> {
        match self.raw(key) {
            None => Ok(None),
            Some(toml::Value::Array(items)) => {
                let mut out = Vec::with_capacity(items.len());
                for item in items {
                    match item {
                        toml::Value::Float(x) => out.push(*x),
                        toml::Value::Integer(n) => out.push(*n as f64),
                        v => return Err(self.type_err(key, "an array of numbers", v)),
                    }
                }
                Ok(Some(out))
            }
            Some(v) => Err(self.type_err(key, "an array of numbers", v)),
        }
    }
}

// ---------------------------------------------------------------------------
// Config echo
// ---------------------------------------------------------------------------

/// A value in the echoed config file.
#[derive(Clone, Debug)]
pub enum EchoVal {
    Str(String),
    UInt(u64),
    Float(f64),
    Bool(bool),
    Floats(Vec<f64>),
}

/// The deterministic config echo: sections in insertion order, keys sorted
/// within each section, floats in shortest round-trip form. Reloading the
/// emitted file reproduces every effective setting of the run.
pub struct Echo {
    sections: Vec<(String, Vec<(String, EchoVal)>)>,
}

impl Echo {
    /// Start an echo with the standard `[run]` section. Worker count and
    /// output directory are deliberately absent: neither influences any
    /// numeric output, and omitting them keeps runs byte-comparable across
    /// machines and thread counts.
    pub fn new(ctx: &RunContext) -> Self {
        let mut e = Echo { sections: Vec::new() };
        e.section("run");
        e.put("command", EchoVal::Str(ctx.command.clone()));
        e.put("seed", EchoVal::UInt(ctx.seed));
        e
    }

    pub fn section(&mut self, name: &str) {
        self.sections.push((name.to_string(), Vec::new()));
    }

    pub fn put(&mut self, key: &str, val: EchoVal) {
        self.sections
            .last_mut()
            .expect("echo key before any section")
            .1
            .push((key.to_string(), val));
    }

    pub fn put_kvs(&mut self, kvs: Vec<(String, EchoVal)>) {
        for (k, v) in kvs {
            self.put(&k, v);
        }
    }

    pub fn emit(&self) -> String {
        let mut out = String::new();
        for (i, (name, kvs)) in self.sections.iter().enumerate() {
            if i > 0 {
                out.push('\n');
            }
            out.push('[');
            out.push_str(name);
            out.push_str("]\n");
            let mut sorted: Vec<&(String, EchoVal)> = kvs.iter().collect();
            sorted.sort_by(|a, b| a.0.cmp(&b.0));
            for (k, v) in sorted {
                out.push_str(k);
                out.push_str(" = ");
                out.push_str(&emit_value(v));
                out.push('\n');
            }
        }
        out
    }
}

fn emit_value(v: &EchoVal) -> String {
    match v {
        EchoVal::Str(s) => emit_string(s),
        EchoVal::UInt(n) => {
            if *n <= i64::MAX as u64 {
                format!("{n}")
            } else {
                // Too large for a TOML integer; the seed getter reads the
                // string form back.
                format!("\"{n}\"")
            }
        }
        EchoVal::Float(x) => emit_float(*x),
        EchoVal::Bool(b) => format!("{b}"),
        EchoVal::Floats(xs) => {
            let parts: Vec<String> = xs.iter().map(|x| emit_float(*x)).collect();
            format!("[{}]", parts.join(", "))
        }
    }
}

/// Shortest round-trip float form; `{:?}` always includes a `.` or an
/// exponent, so the output parses back as a TOML float.
fn emit_float(x: f64) -> String {
    debug_assert!(x.is_finite(), "non-finite value reached the config echo");
    format!("{x:?}")
}

fn emit_string(s: &str) -> String {
    let mut out = String::with_capacity(s.len() + 2);
    out.push('"');
    for c in s.chars() {
        match c {
            '"' => out.push_str("\\\""),
            '\\' => out.push_str("\\\\"),
            '\n' => out.push_str("\\n"),
            '\t' => out.push_str("\\t"),
            '\r' => out.push_str("\\r"),
            other => out.push(other),
        }
    }
    out.push('"');
    out
}

// ---------------------------------------------------------------------------
// Output directory
// ---------------------------------------------------------------------------

/// Files written by one command run, in write order. The echo goes first
/// and `metadata.json` is appended last with the complete list.
pub struct Outputs {
    dir: PathBuf,
    names: Vec<String>,
}

impl Outputs {
    pub fn create(dir: &Path) -> CliResult<Self> {
        io_ctx(std::fs::create_dir_all(dir), dir, "creating output directory")?;
        Ok(Outputs { dir: dir.to_path_buf(), names: Vec::new() })
    }

    pub fn write(&mut self, name: &str, contents: &str) -> CliResult<()> {
        let path = self.dir.join(name);
        io_ctx(std::fs::write(&path, contents), &path, "writing")?;
        self.names.push(name.to_string());
        Ok(())
    }

    pub fn write_echo(&mut self, echo: &Echo) -> CliResult<()> {
        self.write("config.toml", &echo.emit())
    }

    /// Write `metadata.json`: command, version, seed, the output file list,
    /// and command-specific fields. Keys are emitted sorted, so the bytes
    /// are a pure function of the content.
    pub fn write_metadata(&mut self, ctx: &RunContext, extra: serde_json::Value) -> CliResult<()> {
        let mut map = match extra {
            serde_json::Value::Object(m) => m,
            _ => return Err(CliError::Runtime("metadata extras must be a JSON object".into())),
        };
        let mut files = self.names.clone();
        files.push("metadata.json".to_string());
        map.insert("command".into(), serde_json::Value::String(ctx.command.clone()));
        map.insert("version".into(), serde_json::Value::String(env!("CARGO_PKG_VERSION").into()));
        map.insert("seed".into(), serde_json::json!(ctx.seed));
        map.insert("outputs".into(), serde_json::json!(files));
        let body = serde_json::to_string_pretty(&serde_json::Value::Object(map))
            .map_err(|e| CliError::Runtime(format!("encoding metadata: {e}")))?;
        self.write("metadata.json", &format!("{body}\n"))
    }
}

pub fn to_json_pretty<T: serde::Serialize>(value: &T) -> CliResult<String> {
    let body = serde_json::to_string_pretty(value)
        .map_err(|e| CliError::Runtime(format!("encoding JSON: {e}")))?;
    Ok(format!("{body}\n"))
}

// ---------------------------------------------------------------------------
// Tests
// ---------------------------------------------------------------------------
