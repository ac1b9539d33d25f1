//! Command-line experiment runner.
//!
//! ```text
//! polymer-lab <experiment> [--config FILE] [--N ..] [--n-grid a,b,c] [--t ..]
//!             [--x ..] [--beta ..] [--M ..] [--seed ..] [--out PATH]
//!             [--format csv|jsonl]
//! polymer-lab report <RESULTS_DIR>
//! ```
//!
//! Experiments: `partition`, `overlap-table`, `pinning`, `convexity`,
//! `event-a`, `two-env`, `tails`, `neg-moments`, `constants`, `converge`.
//!
//! # Config files
//!
//! A config file is flat `key = value` text; blank lines and `#` comments are
//! ignored, later duplicates win. Recognized keys (exactly these):
//! `experiment`, `N`, `N_grid`, `t`, `x`, `beta`, `M`, `seed`, `out`,
//! `format`. Command-line flags override file values. If the file names an
//! `experiment` it must match the subcommand.
//!
//! `beta` is only meaningful where the experiment has a free coupling:
//! `partition` and `two-env` accept it (default `N^(-1/4)`); `pinning` reads
//! it as a fixed per-horizon coupling replacing the default `m^(-1/2)` rule;
//! `convexity` reads it as the tilt `u` (default `m^(-1/2)`, with `--N`
//! supplying `m`). The scaled experiments (`event-a`, `tails`, `neg-moments`,
//! `converge`) pin the coupling to `N^(-1/4)` and reject an override, as do
//! the coupling-free `constants` and `overlap-table`.
//!
//! # Outputs
//!
//! With `--out`, results are written atomically (temp file in the target
//! directory, then rename) and a one-line summary goes to stdout; without
//! it the rendered output goes to stdout and the summary to stderr.
//!
//! Every output file begins with a provenance line carrying the tool
//! version, the schema name/version, a 16-hex-digit SHA-256 hash of the
//! resolved configuration, and the master seed. In CSV it is a `#` comment;
//! in JSONL it is a JSON object with `"record_type": "provenance"`. Every
//! following JSONL line is one `ExperimentResult` object.
//!
//! CSV schemas (comma-separated, `.` decimal, one header row; any column
//! change bumps the schema version in the provenance line):
//!
//! * `experiment-result/1` (most experiments):
//!   `experiment,n,horizon,endpoint,t,x,beta,replicates,seed,statistic,value,se,bound,pass`
//! * `overlap-table/1`:
//!   `n,horizon,endpoint,mgf,tilted_scaled,mgf_running_max,tilted_running_max`
//! * `tails/1`: `u,p_hat,se,gauss_bound,threshold`
//! * `converge/1`:
//!   `n,horizon,endpoint,beta,mean_z,se_z,mean_log,sd_log,se_log,ks_to_prev`
//!
//! # Exit codes
//!
//! `0`: run completed and every check passed. `2`: run completed but at
//! least one certified bound was violated (science failure). `1`: usage or
//! config error, unknown experiment, unwritable output, or (for `report`)
//! unparseable records.
//!
//! `report` scans a directory's `*.jsonl` files non-recursively, skips
//! provenance lines, and aggregates pass/fail per experiment and statistic.
//! An empty directory is an empty table with exit 0; malformed records warn
//! on stderr and force exit 1.
//!
//! # Parallelism
//!
//! `PLAB_THREADS` caps rayon worker threads (0 or unset: automatic). Outputs
//! are byte-identical for any thread count.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fmt::Write as _;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::Parser;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::lattice::admissible_endpoint;
use crate::montecarlo::{
    constants_pipeline, convergence_probe, event_a_probability, lower_tail_curve,
    mean_partition_check, negative_moment_estimate, second_moment_fubini_check, two_env_residual,
    ExperimentResult,
};
use crate::replica::{
    convexity_chain_check, fit_pinning_constants, overlap_bound_table, BetaRule,
    DEFAULT_PINNING_GRID,
};

const TOOL: &str = "polymer-lab";
const VERSION: &str = env!("CARGO_PKG_VERSION");
/// Held-out pinning horizon re-checked against every fitted envelope.
const PINNING_HOLDOUT: usize = 700;
/// Relative running-maximum increment below which an overlap ceiling counts
/// as stabilized.
const STABILIZATION_LIMIT: f64 = 0.05;

/// Configure the global rayon pool from `PLAB_THREADS` (0 or unset: auto).
/// Call once, before any parallel work.
pub fn init_thread_pool() {
    if let Ok(v) = std::env::var("PLAB_THREADS") {
        match v.trim().parse::<usize>() {
            Ok(0) => {}
            Ok(k) => {
                let _ = rayon::ThreadPoolBuilder::new()
                    .num_threads(k)
                    .build_global();
            }
            Err(_) => eprintln!("warning: ignoring unparseable PLAB_THREADS value `{v}`"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OutputFormat {
    Csv,
    Jsonl,
}

impl OutputFormat {
    fn name(self) -> &'static str {
        match self {
            OutputFormat::Csv => "csv",
            OutputFormat::Jsonl => "jsonl",
        }
    }
}

impl FromStr for OutputFormat {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(OutputFormat::Csv),
            "jsonl" => Ok(OutputFormat::Jsonl),
            other => Err(Error::invalid_parameter(
                "format",
                format!("must be `csv` or `jsonl`, got `{other}`"),
            )),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Experiment {
    Partition,
    OverlapTable,
    Pinning,
    Convexity,
    EventA,
    TwoEnv,
    Tails,
    NegMoments,
    Constants,
    Converge,
}

impl Experiment {
    pub fn name(self) -> &'static str {
        match self {
            Experiment::Partition => "partition",
            Experiment::OverlapTable => "overlap-table",
            Experiment::Pinning => "pinning",
            Experiment::Convexity => "convexity",
            Experiment::EventA => "event-a",
            Experiment::TwoEnv => "two-env",
            Experiment::Tails => "tails",
            Experiment::NegMoments => "neg-moments",
            Experiment::Constants => "constants",
            Experiment::Converge => "converge",
        }
    }

    fn accepts_beta(self) -> std::result::Result<(), &'static str> {
        match self {
            Experiment::Partition | Experiment::TwoEnv | Experiment::Pinning
            | Experiment::Convexity => Ok(()),
            Experiment::EventA | Experiment::Tails | Experiment::NegMoments
            | Experiment::Converge => {
                Err("the coupling is pinned to N^(-1/4) by this experiment; remove `beta`")
            }
            Experiment::Constants | Experiment::OverlapTable => {
                Err("this experiment has no coupling parameter; remove `beta`")
            }
        }
    }
}

/// Shared flags for every experiment subcommand.
#[derive(clap::Args, Debug, Clone, Default)]
pub struct RunArgs {
    /// Flat key=value config file; flags override file values.
    #[arg(long, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Scale parameter N.
    #[arg(long = "N", value_name = "INT")]
    n: Option<usize>,
    /// Comma-separated scale grid (grid experiments).
    #[arg(long = "n-grid", value_name = "A,B,C", value_delimiter = ',')]
    n_grid: Option<Vec<usize>>,
    /// Macroscopic time (horizon = round(t*N)).
    #[arg(long, value_name = "REAL")]
    t: Option<f64>,
    /// Macroscopic space (endpoint ~ x*sqrt(N)).
    #[arg(long, value_name = "REAL")]
    x: Option<f64>,
    /// Coupling override; see the module docs for which experiments take it.
    #[arg(long, value_name = "REAL", allow_hyphen_values = true)]
    beta: Option<f64>,
    /// Monte Carlo replicate count.
    #[arg(long = "M", value_name = "INT")]
    m: Option<usize>,
    /// Master seed; every replicate stream derives from it.
    #[arg(long, value_name = "INT")]
    seed: Option<u64>,
    /// Output file path (atomic write). Without it, results go to stdout.
    #[arg(long, value_name = "PATH")]
    out: Option<PathBuf>,
    /// Output format: csv (default) or jsonl.
    #[arg(long, value_name = "FMT")]
    format: Option<String>,
}

#[derive(clap::Subcommand, Debug)]
enum CliCommand {
    /// Sample partition functions; check the exact mean and second moment.
    Partition(RunArgs),
    /// Exact conditioned overlap functionals across the scale grid.
    OverlapTable(RunArgs),
    /// Fit and validate the pinning partition envelope.
    Pinning(RunArgs),
    /// Convexity-chain residuals at one (m, u).
    Convexity(RunArgs),
    /// Empirical probability of the good event against its certified floor.
    EventA(RunArgs),
    /// Pathwise disorder-comparison residuals over sampled pairs.
    TwoEnv(RunArgs),
    /// Empirical lower-tail curve against the certified Gaussian bound.
    Tails(RunArgs),
    /// Empirical negative moments against the layer-cake ceilings.
    NegMoments(RunArgs),
    /// Deterministic constants pipeline (no sampling).
    Constants(RunArgs),
    /// Cross-scale distributional stability probe.
    Converge(RunArgs),
    /// Aggregate pass/fail across a directory of .jsonl result files.
    Report {
        #[arg(value_name = "RESULTS_DIR")]
        results_dir: PathBuf,
    },
}

#[derive(Parser, Debug)]
#[command(name = TOOL, version, about = "Directed-polymer concentration laboratory")]
struct Cli {
    #[command(subcommand)]
    command: CliCommand,
}

/// Fully resolved run configuration (defaults ⊕ config file ⊕ flags).
#[derive(Debug, Clone)]
pub struct ResolvedConfig {
    pub n: usize,
    pub n_grid: Vec<usize>,
    pub t: f64,
    pub x: f64,
    pub beta: Option<f64>,
    pub replicates: usize,
    pub seed: u64,
    pub out: Option<PathBuf>,
    pub format: OutputFormat,
}

#[derive(Debug, Default)]
struct PartialConfig {
    experiment: Option<String>,
    n: Option<usize>,
    n_grid: Option<Vec<usize>>,
    t: Option<f64>,
    x: Option<f64>,
    beta: Option<f64>,
    m: Option<usize>,
    seed: Option<u64>,
    out: Option<PathBuf>,
    format: Option<OutputFormat>,
}

fn parse_scalar<T: std::str::FromStr>(key: &'static str, value: &str) -> Result<T> {
    value.parse::<T>().map_err(|_| {
        Error::invalid_parameter(key, format!("cannot parse `{value}`"))
    })
}

fn parse_grid(value: &str) -> Result<Vec<usize>> {
    value
        .split(',')
        .map(|s| parse_scalar::<usize>("N_grid", s.trim()))
        .collect()
}

fn parse_config_file(path: &Path) -> Result<PartialConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| {
        Error::invalid_parameter("config", format!("cannot read `{}`: {e}", path.display()))
    })?;
    let mut cfg = PartialConfig::default();
    for (idx, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| {
            Error::invalid_parameter(
                "config",
                format!("line {}: expected `key = value`, got `{raw}`", idx + 1),
            )
        })?;
        let key = key.trim();
        let value = value.trim();
        match key {
            "experiment" => cfg.experiment = Some(value.to_string()),
            "N" => cfg.n = Some(parse_scalar("N", value)?),
            "N_grid" => cfg.n_grid = Some(parse_grid(value)?),
            "t" => cfg.t = Some(parse_scalar("t", value)?),
            "x" => cfg.x = Some(parse_scalar("x", value)?),
            "beta" => cfg.beta = Some(parse_scalar("beta", value)?),
            "M" => cfg.m = Some(parse_scalar("M", value)?),
            "seed" => cfg.seed = Some(parse_scalar("seed", value)?),
            "out" => cfg.out = Some(PathBuf::from(value)),
            "format" => cfg.format = Some(value.parse()?),
            other => {
                return Err(Error::invalid_parameter(
                    "config",
                    format!("line {}: unknown key `{other}`", idx + 1),
                ))
            }
        }
    }
    Ok(cfg)
}

fn default_n(exp: Experiment) -> usize {
    match exp {
        Experiment::TwoEnv | Experiment::Convexity => 32,
        _ => 64,
    }
}

fn default_grid(exp: Experiment) -> Vec<usize> {
    match exp {
        Experiment::Pinning => DEFAULT_PINNING_GRID.to_vec(),
        Experiment::Converge => vec![16, 32, 64, 128],
        _ => vec![16, 32, 64, 128, 256],
    }
}

fn default_replicates(exp: Experiment) -> usize {
    match exp {
        Experiment::Tails => 100_000,
        Experiment::TwoEnv => 1_000,
        _ => 10_000,
    }
}

/// Merge defaults, config file, and flags into a validated configuration.
pub fn resolve_config(exp: Experiment, args: &RunArgs) -> Result<ResolvedConfig> {
    let file = match &args.config {
        Some(path) => {
            let file = parse_config_file(path)?;
            if let Some(named) = &file.experiment {
                if named != exp.name() {
                    return Err(Error::invalid_parameter(
                        "experiment",
                        format!(
                            "config file names experiment `{named}` but the subcommand is `{}`",
                            exp.name()
                        ),
                    ));
                }
            }
            file
        }
        None => PartialConfig::default(),
    };
    let format = match &args.format {
        Some(s) => s.parse()?,
        None => file.format.unwrap_or(OutputFormat::Csv),
    };
    let cfg = ResolvedConfig {
        n: args.n.or(file.n).unwrap_or_else(|| default_n(exp)),
        n_grid: args
            .n_grid
            .clone()
            .or(file.n_grid)
            .unwrap_or_else(|| default_grid(exp)),
        t: args.t.or(file.t).unwrap_or(1.0),
        x: args.x.or(file.x).unwrap_or(0.0),
        beta: args.beta.or(file.beta),
        replicates: args.m.or(file.m).unwrap_or_else(|| default_replicates(exp)),
        seed: args.seed.or(file.seed).unwrap_or(42),
        out: args.out.clone().or(file.out),
        format,
    };
    if !(cfg.t.is_finite() && cfg.t > 0.0) {
        return Err(Error::invalid_parameter("t", "must be positive and finite"));
    }
    if !cfg.x.is_finite() {
        return Err(Error::invalid_parameter("x", "must be finite"));
    }
    if cfg.n < 1 {
        return Err(Error::invalid_parameter("N", "must be at least 1"));
    }
    if cfg.n_grid.is_empty() || cfg.n_grid.iter().any(|&n| n < 1) {
        return Err(Error::invalid_parameter(
            "N_grid",
            "must be a non-empty list of integers >= 1",
        ));
    }
    if cfg.replicates < 1 {
        return Err(Error::invalid_parameter("M", "must be at least 1"));
    }
    if let Some(beta) = cfg.beta {
        if !beta.is_finite() {
            return Err(Error::invalid_parameter("beta", "must be finite"));
        }
        if let Err(reason) = exp.accepts_beta() {
            return Err(Error::invalid_parameter("beta", reason));
        }
    }
    Ok(cfg)
}

fn grid_to_string(grid: &[usize]) -> String {
    grid.iter()
        .map(|n| n.to_string())
        .collect::<Vec<_>>()
        .join(",")
}

/// Canonical text whose SHA-256 identifies the computation (the output path
/// is deliberately excluded so relocated outputs stay byte-identical).
fn canonical_config_text(exp: Experiment, cfg: &ResolvedConfig) -> String {
    format!(
        "experiment={}\nN={}\nN_grid={}\nt={}\nx={}\nbeta={}\nM={}\nseed={}\nformat={}\n",
        exp.name(),
        cfg.n,
        grid_to_string(&cfg.n_grid),
        cfg.t,
        cfg.x,
        cfg.beta.map(|b| b.to_string()).unwrap_or_default(),
        cfg.replicates,
        cfg.seed,
        cfg.format.name(),
    )
}

fn config_hash(exp: Experiment, cfg: &ResolvedConfig) -> String {
    let digest = Sha256::digest(canonical_config_text(exp, cfg).as_bytes());
    let mut hex = String::with_capacity(16);
    for byte in digest.iter().take(8) {
        let _ = write!(hex, "{byte:02x}");
    }
    hex
}

/// Everything a finished run produces.
#[derive(Debug)]
pub struct RunOutput {
    pub experiment: &'static str,
    pub results: Vec<ExperimentResult>,
    pub rendered: String,
    pub pass: bool,
    pub checks_total: usize,
    pub checks_passed: usize,
    pub config_hash: String,
}

fn fmt_opt_f(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn fmt_opt<T: ToString>(v: Option<T>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn uniform_csv_row(r: &ExperimentResult) -> String {
    format!(
        "{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
        r.experiment,
        r.n,
        r.horizon,
        r.endpoint,
        fmt_opt_f(r.t),
        fmt_opt_f(r.x),
        fmt_opt_f(r.beta),
        fmt_opt(r.replicates),
        fmt_opt(r.seed),
        r.statistic,
        r.value,
        fmt_opt_f(r.se),
        fmt_opt_f(r.bound),
        fmt_opt(r.pass),
    )
}

const UNIFORM_HEADER: &str =
    "experiment,n,horizon,endpoint,t,x,beta,replicates,seed,statistic,value,se,bound,pass";

struct CsvTable {
    schema: &'static str,
    header: &'static str,
    rows: Vec<String>,
}

fn provenance_comment(exp: Experiment, schema: &str, hash: &str, seed: u64) -> String {
    format!("# {TOOL} v{VERSION} schema={schema} experiment={} config_hash={hash} seed={seed}", exp.name())
}

fn provenance_json(exp: Experiment, schema: &str, hash: &str, seed: u64) -> String {
    serde_json::json!({
        "record_type": "provenance",
        "tool": TOOL,
        "version": VERSION,
        "schema": schema,
        "experiment": exp.name(),
        "config_hash": hash,
        "seed": seed,
    })
    .to_string()
}

fn render(
    exp: Experiment,
    cfg: &ResolvedConfig,
    hash: &str,
    results: &[ExperimentResult],
    table: CsvTable,
) -> String {
    match cfg.format {
        OutputFormat::Csv => {
            let mut out = String::new();
            out.push_str(&provenance_comment(exp, table.schema, hash, cfg.seed));
            out.push('\n');
            out.push_str(table.header);
            out.push('\n');
            for row in &table.rows {
                out.push_str(row);
                out.push('\n');
            }
            out
        }
        OutputFormat::Jsonl => {
            let mut out = String::new();
            out.push_str(&provenance_json(exp, "experiment-result/1", hash, cfg.seed));
            out.push('\n');
            for r in results {
                out.push_str(&serde_json::to_string(r).expect("finite result serializes"));
                out.push('\n');
            }
            out
        }
    }
}

fn uniform_table(results: &[ExperimentResult]) -> CsvTable {
    CsvTable {
        schema: "experiment-result/1",
        header: UNIFORM_HEADER,
        rows: results.iter().map(uniform_csv_row).collect(),
    }
}

/// Execute one experiment against a resolved configuration.
pub fn execute_experiment(exp: Experiment, cfg: &ResolvedConfig) -> Result<RunOutput> {
    if cfg.beta.is_some() {
        if let Err(reason) = exp.accepts_beta() {
            return Err(Error::invalid_parameter("beta", reason));
        }
    }
    let (results, table) = match exp {
        Experiment::Partition => run_partition(cfg)?,
        Experiment::OverlapTable => run_overlap_table(cfg)?,
        Experiment::Pinning => run_pinning(cfg)?,
        Experiment::Convexity => run_convexity(cfg)?,
        Experiment::EventA => run_event_a(cfg)?,
        Experiment::TwoEnv => run_two_env(cfg)?,
        Experiment::Tails => run_tails(cfg)?,
        Experiment::NegMoments => run_neg_moments(cfg)?,
        Experiment::Constants => run_constants(cfg)?,
        Experiment::Converge => run_converge(cfg)?,
    };
    let hash = config_hash(exp, cfg);
    let rendered = render(exp, cfg, &hash, &results, table);
    let checks_total = results.iter().filter(|r| r.pass.is_some()).count();
    let checks_passed = results
        .iter()
        .filter(|r| r.pass == Some(true))
        .count();
    Ok(RunOutput {
        experiment: exp.name(),
        results,
        rendered,
        pass: checks_passed == checks_total,
        checks_total,
        checks_passed,
        config_hash: hash,
    })
}

type ArmOutput = (Vec<ExperimentResult>, CsvTable);

fn run_partition(cfg: &ResolvedConfig) -> Result<ArmOutput> {
    let bridge = admissible_endpoint(cfg.t, cfg.x, cfg.n)?;
    let horizon = bridge.horizon();
    let beta = cfg.beta.unwrap_or((horizon as f64).powf(-0.25));
    let mean = mean_partition_check(horizon, beta, bridge.endpoint(), cfg.replicates, cfg.seed)?;
    let fubini = second_moment_fubini_check(horizon, bridge.endpoint(), cfg.replicates, cfg.seed)?;
    let results = vec![
        ExperimentResult {
            experiment: "partition".into(),
            n: cfg.n,
            horizon,
            endpoint: bridge.endpoint(),
            t: Some(cfg.t),
            x: Some(cfg.x),
            beta: Some(beta),
            replicates: Some(cfg.replicates),
            seed: Some(cfg.seed),
            statistic: "mean_ratio".into(),
            value: mean.mean_ratio,
            se: Some(mean.se),
            bound: Some(1.0),
            pass: Some(mean.pass),
        },
        ExperimentResult {
            experiment: "partition".into(),
            n: cfg.n,
            horizon,
            endpoint: bridge.endpoint(),
            t: Some(cfg.t),
            x: Some(cfg.x),
            beta: Some(fubini.beta),
            replicates: Some(cfg.replicates),
            seed: Some(cfg.seed),
            statistic: "second_moment".into(),
            value: fubini.mc_second_moment,
            se: Some(fubini.se),
            bound: Some(fubini.exact),
            pass: Some(fubini.pass),
        },
    ];
    let table = uniform_table(&results);
    Ok((results, table))
}

fn run_overlap_table(cfg: &ResolvedConfig) -> Result<ArmOutput> {
    let rows = overlap_bound_table(&cfg.n_grid, cfg.t, cfg.x)?;
    let mut results = Vec::new();
    for row in &rows {
        for (stat, value) in [
            ("second_moment", row.mgf),
            ("tilted_scaled", row.tilted_scaled),
        ] {
            results.push(ExperimentResult {
                experiment: "overlap-table".into(),
                n: row.n,
                horizon: row.horizon,
                endpoint: row.endpoint,
                t: Some(cfg.t),
                x: Some(cfg.x),
                beta: None,
                replicates: None,
                seed: None,
                statistic: stat.into(),
                value,
                se: None,
                bound: None,
                pass: None,
            });
        }
    }
    // Stabilization of the running maxima: the last two relative increments
    // must each stay below the limit (only checkable on a grid of >= 3).
    if rows.len() >= 3 {
        for (stat, select) in [
            ("second_moment_stabilization", 0usize),
            ("tilted_scaled_stabilization", 1usize),
        ] {
            let maxima: Vec<f64> = rows
                .iter()
                .map(|r| {
                    if select == 0 {
                        r.mgf_running_max
                    } else {
                        r.tilted_running_max
                    }
                })
                .collect();
            let mut worst = 0.0f64;
            for k in rows.len() - 2..rows.len() {
                let increment = (maxima[k] - maxima[k - 1]) / maxima[k];
                worst = worst.max(increment);
            }
            let last = rows.last().expect("non-empty");
            results.push(ExperimentResult {
                experiment: "overlap-table".into(),
                n: last.n,
                horizon: last.horizon,
                endpoint: last.endpoint,
                t: Some(cfg.t),
                x: Some(cfg.x),
                beta: None,
                replicates: None,
                seed: None,
                statistic: stat.into(),
                value: worst,
                se: None,
                bound: Some(STABILIZATION_LIMIT),
                pass: Some(worst < STABILIZATION_LIMIT),
            });
        }
    }
    let table = CsvTable {
        schema: "overlap-table/1",
        header: "n,horizon,endpoint,mgf,tilted_scaled,mgf_running_max,tilted_running_max",
        rows: rows
            .iter()
            .map(|r| {
                format!(
                    "{},{},{},{},{},{},{}",
                    r.n,
                    r.horizon,
                    r.endpoint,
                    r.mgf,
                    r.tilted_scaled,
                    r.mgf_running_max,
                    r.tilted_running_max
                )
            })
            .collect(),
    };
    Ok((results, table))
}

fn run_pinning(cfg: &ResolvedConfig) -> Result<ArmOutput> {
    let rule = match cfg.beta {
        Some(beta) => BetaRule::Fixed(beta),
        None => BetaRule::InverseSqrt,
    };
    let fit = fit_pinning_constants(&cfg.n_grid, rule)?;
    let mut results = Vec::new();
    for point in &fit.points {
        let bound = fit.bound(point.m, point.beta);
        results.push(ExperimentResult {
            experiment: "pinning".into(),
            n: point.m,
            horizon: point.m,
            endpoint: 0,
            t: None,
            x: None,
            beta: Some(point.beta),
            replicates: None,
            seed: None,
            statistic: format!("pinning_z[m={}]", point.m),
            value: point.z,
            se: None,
            bound: Some(bound),
            pass: Some(point.z <= bound),
        });
    }
    let holdout = fit.validate(PINNING_HOLDOUT)?;
    results.push(ExperimentResult {
        experiment: "pinning".into(),
        n: PINNING_HOLDOUT,
        horizon: PINNING_HOLDOUT,
        endpoint: 0,
        t: None,
        x: None,
        beta: Some(holdout.point.beta),
        replicates: None,
        seed: None,
        statistic: format!("pinning_z_holdout[m={PINNING_HOLDOUT}]"),
        value: holdout.point.z,
        se: None,
        bound: Some(holdout.bound),
        pass: Some(holdout.ok),
    });
    for (stat, value) in [("c1", fit.c1), ("c2", fit.c2)] {
        results.push(ExperimentResult {
            experiment: "pinning".into(),
            n: 0,
            horizon: 0,
            endpoint: 0,
            t: None,
            x: None,
            beta: None,
            replicates: None,
            seed: None,
            statistic: stat.into(),
            value,
            se: None,
            bound: None,
            pass: None,
        });
    }
    let table = uniform_table(&results);
    Ok((results, table))
}

fn run_convexity(cfg: &ResolvedConfig) -> Result<ArmOutput> {
    let m = cfg.n;
    let u = cfg.beta.unwrap_or((m as f64).powf(-0.5));
    let res = convexity_chain_check(m, u)?;
    let mut results = Vec::new();
    for (stat, value, checked) in [
        ("r1", res.r1, true),
        ("r2", res.r2, true),
        ("r3", res.r3, true),
        ("c1", res.c1, false),
        ("c2", res.c2, false),
    ] {
        results.push(ExperimentResult {
            experiment: "convexity".into(),
            n: m,
            horizon: m,
            endpoint: 0,
            t: None,
            x: None,
            beta: Some(u),
            replicates: None,
            seed: None,
            statistic: stat.into(),
            value,
            se: None,
            bound: checked.then_some(0.0),
            pass: checked.then_some(value >= 0.0),
        });
    }
    let table = uniform_table(&results);
    Ok((results, table))
}

fn run_event_a(cfg: &ResolvedConfig) -> Result<ArmOutput> {
    let ledger = constants_pipeline(&cfg.n_grid, cfg.t, cfg.x)?;
    let bridge = admissible_endpoint(cfg.t, cfg.x, cfg.n)?;
    let check = event_a_probability(
        bridge.horizon(),
        bridge.endpoint(),
        &ledger,
        cfg.replicates,
        cfg.seed,
    )?;
    let results = vec![ExperimentResult {
        experiment: "event-a".into(),
        n: cfg.n,
        horizon: bridge.horizon(),
        endpoint: bridge.endpoint(),
        t: Some(cfg.t),
        x: Some(cfg.x),
        beta: Some(check.beta),
        replicates: Some(cfg.replicates),
        seed: Some(cfg.seed),
        statistic: "event_probability".into(),
        value: check.p_hat,
        se: Some(check.se),
        bound: Some(check.delta),
        pass: Some(check.pass),
    }];
    let table = uniform_table(&results);
    Ok((results, table))
}

fn run_two_env(cfg: &ResolvedConfig) -> Result<ArmOutput> {
    let bridge = admissible_endpoint(cfg.t, cfg.x, cfg.n)?;
    let horizon = bridge.horizon();
    let beta = cfg.beta.unwrap_or((horizon as f64).powf(-0.25));
    let check = two_env_residual(horizon, bridge.endpoint(), beta, cfg.replicates, cfg.seed)?;
    let results = vec![
        ExperimentResult {
            experiment: "two-env".into(),
            n: cfg.n,
            horizon,
            endpoint: bridge.endpoint(),
            t: Some(cfg.t),
            x: Some(cfg.x),
            beta: Some(beta),
            replicates: Some(cfg.replicates),
            seed: Some(cfg.seed),
            statistic: "min_residual".into(),
            value: check.min_residual,
            se: None,
            bound: Some(-1e-9),
            pass: Some(check.pass),
        },
        ExperimentResult {
            experiment: "two-env".into(),
            n: cfg.n,
            horizon,
            endpoint: bridge.endpoint(),
            t: Some(cfg.t),
            x: Some(cfg.x),
            beta: Some(beta),
            replicates: Some(cfg.replicates),
            seed: Some(cfg.seed),
            statistic: "violations".into(),
            value: check.violations as f64,
            se: None,
            bound: Some(0.0),
            pass: Some(check.violations == 0),
        },
    ];
    let table = uniform_table(&results);
    Ok((results, table))
}

fn default_u_grid() -> Vec<f64> {
    (0..=12).map(|k| k as f64 * 0.25).collect()
}

fn run_tails(cfg: &ResolvedConfig) -> Result<ArmOutput> {
    let ledger = constants_pipeline(&cfg.n_grid, cfg.t, cfg.x)?;
    let curve = lower_tail_curve(
        cfg.n,
        cfg.t,
        cfg.x,
        &default_u_grid(),
        &ledger,
        cfg.replicates,
        cfg.seed,
    )?;
    let results = curve
        .rows
        .iter()
        .map(|row| ExperimentResult {
            experiment: "tails".into(),
            n: cfg.n,
            horizon: curve.horizon,
            endpoint: curve.endpoint,
            t: Some(cfg.t),
            x: Some(cfg.x),
            beta: Some(curve.beta),
            replicates: Some(cfg.replicates),
            seed: Some(cfg.seed),
            statistic: format!("tail_p_hat[u={}]", row.u),
            value: row.p_hat,
            se: Some(row.se),
            bound: Some(row.gauss_bound),
            pass: Some(row.pass),
        })
        .collect::<Vec<_>>();
    let table = CsvTable {
        schema: "tails/1",
        header: "u,p_hat,se,gauss_bound,threshold",
        rows: curve
            .rows
            .iter()
            .map(|r| format!("{},{},{},{},{}", r.u, r.p_hat, r.se, r.gauss_bound, r.threshold))
            .collect(),
    };
    Ok((results, table))
}

fn run_neg_moments(cfg: &ResolvedConfig) -> Result<ArmOutput> {
    let ledger = constants_pipeline(&cfg.n_grid, cfg.t, cfg.x)?;
    let mut results = Vec::new();
    for p in [1.0f64, 2.0] {
        let check = negative_moment_estimate(
            cfg.n,
            cfg.t,
            cfg.x,
            p,
            &ledger,
            cfg.replicates,
            cfg.seed,
        )?;
        results.push(ExperimentResult {
            experiment: "neg-moments".into(),
            n: cfg.n,
            horizon: check.horizon,
            endpoint: check.endpoint,
            t: Some(cfg.t),
            x: Some(cfg.x),
            beta: Some(check.beta),
            replicates: Some(cfg.replicates),
            seed: Some(cfg.seed),
            statistic: format!("neg_moment[p={p}]"),
            value: check.mc_mean,
            se: Some(check.se),
            bound: Some(check.kappa),
            pass: Some(check.pass),
        });
    }
    let table = uniform_table(&results);
    Ok((results, table))
}

fn run_constants(cfg: &ResolvedConfig) -> Result<ArmOutput> {
    let ledger = constants_pipeline(&cfg.n_grid, cfg.t, cfg.x)?;
    let fields = [
        ("l_hat", ledger.l_hat),
        ("k_hat", ledger.k_hat),
        ("big_c", ledger.big_c),
        ("delta", ledger.delta),
        ("c_prime", ledger.c_prime),
        ("c_double_prime", ledger.c_double_prime),
        ("c_one", ledger.c_one),
        ("c_two", ledger.c_two),
        ("big_c2", ledger.big_c2),
    ];
    let last = *cfg.n_grid.last().expect("validated non-empty");
    let results = fields
        .iter()
        .map(|&(stat, value)| ExperimentResult {
            experiment: "constants".into(),
            n: last,
            horizon: last,
            endpoint: 0,
            t: Some(cfg.t),
            x: Some(cfg.x),
            beta: None,
            replicates: None,
            seed: None,
            statistic: stat.into(),
            value,
            se: None,
            bound: None,
            pass: Some(value.is_finite() && value > 0.0),
        })
        .collect::<Vec<_>>();
    let table = uniform_table(&results);
    Ok((results, table))
}

fn run_converge(cfg: &ResolvedConfig) -> Result<ArmOutput> {
    let report = convergence_probe(&cfg.n_grid, cfg.t, cfg.x, cfg.replicates, cfg.seed)?;
    let mut results = Vec::new();
    for row in &report.rows {
        results.push(ExperimentResult {
            experiment: "converge".into(),
            n: row.n,
            horizon: row.horizon,
            endpoint: row.endpoint,
            t: Some(cfg.t),
            x: Some(cfg.x),
            beta: Some(row.beta),
            replicates: Some(cfg.replicates),
            seed: Some(cfg.seed),
            statistic: format!("mean_z[n={}]", row.n),
            value: row.mean_z,
            se: Some(row.se_z),
            bound: Some(1.0),
            pass: Some((row.mean_z - 1.0).abs() <= 3.0 * row.se_z),
        });
        if let Some(ks) = row.ks_to_prev {
            results.push(ExperimentResult {
                experiment: "converge".into(),
                n: row.n,
                horizon: row.horizon,
                endpoint: row.endpoint,
                t: Some(cfg.t),
                x: Some(cfg.x),
                beta: Some(row.beta),
                replicates: Some(cfg.replicates),
                seed: Some(cfg.seed),
                statistic: format!("ks_to_prev[n={}]", row.n),
                value: ks,
                se: None,
                bound: None,
                pass: None,
            });
        }
    }
    // Distributional settling: the KS distance between the last pair of
    // scales must fall below the distance between the first pair.
    if report.rows.len() >= 3 {
        let first = report.rows[1].ks_to_prev.expect("second row has a KS value");
        let last = report
            .rows
            .last()
            .and_then(|r| r.ks_to_prev)
            .expect("last row has a KS value");
        let tail = report.rows.last().expect("non-empty");
        results.push(ExperimentResult {
            experiment: "converge".into(),
            n: tail.n,
            horizon: tail.horizon,
            endpoint: tail.endpoint,
            t: Some(cfg.t),
            x: Some(cfg.x),
            beta: Some(tail.beta),
            replicates: Some(cfg.replicates),
            seed: Some(cfg.seed),
            statistic: "ks_trend".into(),
            value: last,
            se: None,
            bound: Some(first),
            pass: Some(last < first),
        });
    }
    let table = CsvTable {
        schema: "converge/1",
        header: "n,horizon,endpoint,beta,mean_z,se_z,mean_log,sd_log,se_log,ks_to_prev",
        rows: report
            .rows
            .iter()
            .map(|r| {
                format!(
                    "{},{},{},{},{},{},{},{},{},{}",
                    r.n,
                    r.horizon,
                    r.endpoint,
                    r.beta,
                    r.mean_z,
                    r.se_z,
                    r.mean_log,
                    r.sd_log,
                    r.se_log,
                    fmt_opt_f(r.ks_to_prev),
                )
            })
            .collect(),
    };
    Ok((results, table))
}

fn write_atomic(path: &Path, contents: &str) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let to_err = |e: std::io::Error| {
        Error::invalid_parameter(
            "out",
            format!("cannot write output `{}`: {e}", path.display()),
        )
    };
    let mut tmp = tempfile::Builder::new()
        .prefix(".polymer-lab-")
        .tempfile_in(dir)
        .map_err(to_err)?;
    tmp.write_all(contents.as_bytes()).map_err(to_err)?;
    tmp.flush().map_err(to_err)?;
    tmp.persist(path).map_err(|e| to_err(e.error))?;
    Ok(())
}

/// Aggregated report over a results directory.
#[derive(Debug)]
pub struct ReportSummary {
    pub table: String,
    pub records: usize,
    pub failed: usize,
    pub malformed: usize,
    pub warnings: Vec<String>,
}

impl ReportSummary {
    pub fn exit_code(&self) -> i32 {
        if self.malformed > 0 {
            1
        } else if self.failed > 0 {
            2
        } else {
            0
        }
    }
}

fn statistic_family(statistic: &str) -> &str {
    statistic.split('[').next().unwrap_or(statistic)
}

/// Scan `dir` for `*.jsonl` result files and aggregate pass/fail per
/// experiment and statistic family.
pub fn run_report(dir: &Path) -> Result<ReportSummary> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| {
            Error::invalid_parameter(
                "results_dir",
                format!("cannot read `{}`: {e}", dir.display()),
            )
        })?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| p.extension().map(|ext| ext == "jsonl").unwrap_or(false))
        .collect();
    files.sort();

    #[derive(Default)]
    struct Tally {
        records: usize,
        passed: usize,
        failed: usize,
    }
    let mut tallies: BTreeMap<(String, String), Tally> = BTreeMap::new();
    let mut records = 0usize;
    let mut failed = 0usize;
    let mut malformed = 0usize;
    let mut warnings = Vec::new();

    for file in &files {
        let text = match std::fs::read_to_string(file) {
            Ok(t) => t,
            Err(e) => {
                warnings.push(format!("warning: cannot read `{}`: {e}", file.display()));
                malformed += 1;
                continue;
            }
        };
        for (idx, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            if let Ok(value) = serde_json::from_str::<serde_json::Value>(line) {
                if value.get("record_type").and_then(|v| v.as_str()) == Some("provenance") {
                    continue;
                }
                match serde_json::from_value::<ExperimentResult>(value) {
                    Ok(record) => {
                        records += 1;
                        let key = (
                            record.experiment.clone(),
                            statistic_family(&record.statistic).to_string(),
                        );
                        let tally = tallies.entry(key).or_default();
                        tally.records += 1;
                        match record.pass {
                            Some(true) => tally.passed += 1,
                            Some(false) => {
                                tally.failed += 1;
                                failed += 1;
                            }
                            None => {}
                        }
                        continue;
                    }
                    Err(e) => {
                        warnings.push(format!(
                            "warning: `{}` line {}: not an experiment result: {e}",
                            file.display(),
                            idx + 1
                        ));
                        malformed += 1;
                        continue;
                    }
                }
            }
            warnings.push(format!(
                "warning: `{}` line {}: not valid JSON",
                file.display(),
                idx + 1
            ));
            malformed += 1;
        }
    }

    let mut table = String::new();
    let _ = writeln!(
        table,
        "{:<14} {:<28} {:>8} {:>8} {:>8}  {}",
        "experiment", "statistic", "records", "passed", "failed", "status"
    );
    for ((experiment, statistic), tally) in &tallies {
        let status = if tally.failed > 0 {
            "FAIL"
        } else if tally.passed > 0 {
            "PASS"
        } else {
            "INFO"
        };
        let _ = writeln!(
            table,
            "{:<14} {:<28} {:>8} {:>8} {:>8}  {}",
            experiment, statistic, tally.records, tally.passed, tally.failed, status
        );
    }

    Ok(ReportSummary {
        table,
        records,
        failed,
        malformed,
        warnings,
    })
}

fn summary_line(out: &RunOutput, path: Option<&Path>) -> String {
    let verdict = if out.pass { "PASS" } else { "FAIL" };
    let dest = path
        .map(|p| format!(" -> {}", p.display()))
        .unwrap_or_default();
    format!(
        "{}: {} ({}/{} checks, {} records) config={}{}",
        out.experiment,
        verdict,
        out.checks_passed,
        out.checks_total,
        out.results.len(),
        out.config_hash,
        dest
    )
}

fn run_experiment_command(exp: Experiment, args: &RunArgs) -> i32 {
    let cfg = match resolve_config(exp, args) {
        Ok(cfg) => cfg,
        Err(e) => {
            eprintln!("error: {e}");
            return 1;
        }
    };
    let output = match execute_experiment(exp, &cfg) {
        Ok(o) => o,
        Err(e) => {
            eprintln!("error: {e}");
            return 1;
        }
    };
    match &cfg.out {
        Some(path) => {
            if let Err(e) = write_atomic(path, &output.rendered) {
                eprintln!("error: {e}");
                return 1;
            }
            println!("{}", summary_line(&output, Some(path)));
        }
        None => {
            print!("{}", output.rendered);
            eprintln!("{}", summary_line(&output, None));
        }
    }
    if output.pass {
        0
    } else {
        2
    }
}

/// Run the CLI against an explicit argument list; returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return code;
        }
    };
    match cli.command {
        CliCommand::Partition(a) => run_experiment_command(Experiment::Partition, &a),
        CliCommand::OverlapTable(a) => run_experiment_command(Experiment::OverlapTable, &a),
        CliCommand::Pinning(a) => run_experiment_command(Experiment::Pinning, &a),
        CliCommand::Convexity(a) => run_experiment_command(Experiment::Convexity, &a),
        CliCommand::EventA(a) => run_experiment_command(Experiment::EventA, &a),
        CliCommand::TwoEnv(a) => run_experiment_command(Experiment::TwoEnv, &a),
        CliCommand::Tails(a) => run_experiment_command(Experiment::Tails, &a),
        CliCommand::NegMoments(a) => run_experiment_command(Experiment::NegMoments, &a),
        CliCommand::Constants(a) => run_experiment_command(Experiment::Constants, &a),
        CliCommand::Converge(a) => run_experiment_command(Experiment::Converge, &a),
        CliCommand::Report { results_dir } => match run_report(&results_dir) {
            Ok(summary) => {
                for warning in &summary.warnings {
                    eprintln!("{warning}");
                }
                print!("{}", summary.table);
                summary.exit_code()
            }
            Err(e) => {
                eprintln!("error: {e}");
                1
            }
        },
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn args_with(f: impl FnOnce(&mut RunArgs)) -> RunArgs {
        let mut args = RunArgs::default();
        f(&mut args);
        args
    }

    #[test]
    fn defaults_resolve_per_experiment() {
        let cfg = resolve_config(Experiment::Tails, &RunArgs::default()).unwrap();
        assert_eq!(cfg.n, 64);
        assert_eq!(cfg.replicates, 100_000);
        assert_eq!(cfg.t, 1.0);
        assert_eq!(cfg.seed, 42);
        assert_eq!(cfg.format, OutputFormat::Csv);

        let cfg = resolve_config(Experiment::Pinning, &RunArgs::default()).unwrap();
        assert_eq!(cfg.n_grid, DEFAULT_PINNING_GRID.to_vec());
    }

    #[test]
    fn config_file_merges_under_flags() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.cfg");
        std::fs::write(
            &path,
            "# comment\nexperiment = partition\nN = 16\nM = 500\nseed = 9\nformat = jsonl\n",
        )
        .unwrap();
        let args = args_with(|a| {
            a.config = Some(path.clone());
            a.m = Some(800);
        });
        let cfg = resolve_config(Experiment::Partition, &args).unwrap();
        assert_eq!(cfg.n, 16); // from file
        assert_eq!(cfg.replicates, 800); // flag wins
        assert_eq!(cfg.seed, 9);
        assert_eq!(cfg.format, OutputFormat::Jsonl);
    }

    #[test]
    fn config_file_rejections() {
        let dir = tempfile::tempdir().unwrap();

        let unknown = dir.path().join("unknown.cfg");
        std::fs::write(&unknown, "volume = 11\n").unwrap();
        let err = resolve_config(
            Experiment::Partition,
            &args_with(|a| a.config = Some(unknown)),
        )
        .unwrap_err();
        assert!(err.to_string().contains("unknown key `volume`"), "{err}");

        let mismatched = dir.path().join("mismatch.cfg");
        std::fs::write(&mismatched, "experiment = tails\n").unwrap();
        let err = resolve_config(
            Experiment::Partition,
            &args_with(|a| a.config = Some(mismatched)),
        )
        .unwrap_err();
        assert!(err.to_string().contains("subcommand"), "{err}");

        let malformed = dir.path().join("malformed.cfg");
        std::fs::write(&malformed, "just some words\n").unwrap();
        let err = resolve_config(
            Experiment::Partition,
            &args_with(|a| a.config = Some(malformed)),
        )
        .unwrap_err();
        assert!(err.to_string().contains("key = value"), "{err}");
    }

    #[test]
    fn numeric_validation_names_the_parameter() {
        let err = resolve_config(Experiment::Partition, &args_with(|a| a.t = Some(-1.0)))
            .unwrap_err();
        assert!(err.to_string().contains('t'), "{err}");

        let err = resolve_config(
            Experiment::Converge,
            &args_with(|a| a.n_grid = Some(vec![])),
        )
        .unwrap_err();
        assert!(err.to_string().contains("N_grid"), "{err}");
    }

    #[test]
    fn pinned_coupling_rejects_override() {
        for exp in [
            Experiment::EventA,
            Experiment::Tails,
            Experiment::NegMoments,
            Experiment::Converge,
            Experiment::Constants,
            Experiment::OverlapTable,
        ] {
            let err =
                resolve_config(exp, &args_with(|a| a.beta = Some(0.3))).unwrap_err();
            assert!(err.to_string().contains("beta"), "{}: {err}", exp.name());
        }
        // And the free-coupling experiments accept it.
        for exp in [Experiment::Partition, Experiment::TwoEnv] {
            assert!(resolve_config(exp, &args_with(|a| a.beta = Some(0.3))).is_ok());
        }
    }

    #[test]
    fn config_hash_tracks_the_computation_but_not_the_output_path() {
        let base = resolve_config(Experiment::Partition, &RunArgs::default()).unwrap();
        let mut moved = base.clone();
        moved.out = Some(PathBuf::from("elsewhere.csv"));
        assert_eq!(
            config_hash(Experiment::Partition, &base),
            config_hash(Experiment::Partition, &moved)
        );
        let mut reseeded = base.clone();
        reseeded.seed = 43;
        assert_ne!(
            config_hash(Experiment::Partition, &base),
            config_hash(Experiment::Partition, &reseeded)
        );
    }

    #[test]
    fn rendered_csv_has_provenance_header_and_rows() {
        let cfg = resolve_config(
            Experiment::Convexity,
            &args_with(|a| {
                a.n = Some(8);
            }),
        )
        .unwrap();
        let out = execute_experiment(Experiment::Convexity, &cfg).unwrap();
        let mut lines = out.rendered.lines();
        let provenance = lines.next().unwrap();
        assert!(provenance.starts_with("# polymer-lab v"));
        assert!(provenance.contains("schema=experiment-result/1"));
        assert!(provenance.contains(&format!("config_hash={}", out.config_hash)));
        assert!(provenance.contains("seed=42"));
        assert_eq!(lines.next().unwrap(), UNIFORM_HEADER);
        assert_eq!(lines.count(), out.results.len());
        assert!(out.pass);
    }

    #[test]
    fn rendered_jsonl_round_trips_through_serde() {
        let cfg = resolve_config(
            Experiment::Partition,
            &args_with(|a| {
                a.n = Some(8);
                a.m = Some(200);
                a.format = Some("jsonl".into());
            }),
        )
        .unwrap();
        let out = execute_experiment(Experiment::Partition, &cfg).unwrap();
        let mut lines = out.rendered.lines();
        let first: serde_json::Value = serde_json::from_str(lines.next().unwrap()).unwrap();
        assert_eq!(first["record_type"], "provenance");
        assert_eq!(first["seed"], 42);
        let parsed: Vec<ExperimentResult> = lines
            .map(|l| serde_json::from_str(l).unwrap())
            .collect();
        assert_eq!(parsed.len(), 2);
        assert!(parsed.iter().all(|r| r.experiment == "partition"));
    }

    #[test]
    fn report_aggregates_and_flags_failures() {
        let dir = tempfile::tempdir().unwrap();

        // Empty directory: empty table, exit 0.
        let summary = run_report(dir.path()).unwrap();
        assert_eq!(summary.exit_code(), 0);
        assert_eq!(summary.records, 0);

        let cfg = resolve_config(
            Experiment::Convexity,
            &args_with(|a| {
                a.n = Some(8);
                a.format = Some("jsonl".into());
            }),
        )
        .unwrap();
        let out = execute_experiment(Experiment::Convexity, &cfg).unwrap();
        std::fs::write(dir.path().join("a.jsonl"), &out.rendered).unwrap();
        let summary = run_report(dir.path()).unwrap();
        assert_eq!(summary.exit_code(), 0);
        assert!(summary.records >= 3);
        assert!(summary.table.contains("convexity"));
        assert!(summary.table.contains("PASS"));

        // A failing record flips the exit to 2.
        let mut failing = out.results[0].clone();
        failing.pass = Some(false);
        std::fs::write(
            dir.path().join("b.jsonl"),
            format!("{}\n", serde_json::to_string(&failing).unwrap()),
        )
        .unwrap();
        let summary = run_report(dir.path()).unwrap();
        assert_eq!(summary.exit_code(), 2);
        assert!(summary.table.contains("FAIL"));

        // A malformed line forces exit 1 with a warning.
        std::fs::write(dir.path().join("c.jsonl"), "{not json}\n").unwrap();
        let summary = run_report(dir.path()).unwrap();
        assert_eq!(summary.exit_code(), 1);
        assert_eq!(summary.malformed, 1);
        assert!(!summary.warnings.is_empty());
    }

    #[test]
    fn atomic_write_replaces_and_reports_unwritable_paths() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("out.csv");
        write_atomic(&path, "first\n").unwrap();
        write_atomic(&path, "second\n").unwrap();
        assert_eq!(std::fs::read_to_string(&path).unwrap(), "second\n");

        let missing = dir.path().join("no-such-dir").join("out.csv");
        let err = write_atomic(&missing, "x").unwrap_err();
        assert!(err.to_string().contains("cannot write output"), "{err}");
    }

    #[test]
    fn statistic_families_strip_brackets() {
        assert_eq!(statistic_family("tail_p_hat[u=0.5]"), "tail_p_hat");
        assert_eq!(statistic_family("c1"), "c1");
    }
}
