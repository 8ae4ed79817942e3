//! Command-line front end: configuration merging, validation, dispatch and
//! structured output.

use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use clap::{Parser, ValueEnum};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use satde::channels::{ChannelKind, ChannelSpec};
use satde::de::{de_run, threshold_search, DeMode, DeOptions, DeStatus};
use satde::llr::one_minus_tanh_half;
use satde::mc::{compare_sat_vs_symsat, simulate_ber, DecoderConfig, DecoderRule};
use satde::stability::{
    analyze, channel_support_bound, scan_matrix_radius, verify_vc_inequalities, SaturationParams, StabilityRegime,
};
use satde::{EnsembleSpec, Grid};

pub const SCHEMA_VERSION: u32 = 1;
pub const GRID_DELTA_ENV: &str = "SATDE_GRID_DELTA";

pub const DEFAULT_GRID_DELTA: f64 = 1.0 / 16.0;
pub const DEFAULT_SUPPORT_BOUND: f64 = 64.0;
pub const DEFAULT_TOL: f64 = 1e-4;
pub const DEFAULT_N: usize = 10_000;
pub const DEFAULT_TRIALS: usize = 20;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("invalid `{field}`: {reason}")]
    Config { field: String, reason: String },
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("{0}")]
    Io(#[from] io::Error),
}

impl CliError {
    fn config(field: impl Into<String>, reason: impl ToString) -> Self {
        CliError::Config {
            field: field.into(),
            reason: reason.to_string(),
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config { .. } => 2,
            CliError::Numerical(_) | CliError::Io(_) => 3,
        }
    }
}

impl From<satde::Error> for CliError {
    fn from(e: satde::Error) -> Self {
        match e {
            satde::Error::InvalidParameter { name, reason } => CliError::config(name, reason),
            satde::Error::OffGrid { value, spacing } => {
                CliError::config("K", format!("{value} is not a multiple of the grid spacing {spacing}"))
            }
            other => CliError::Numerical(other.to_string()),
        }
    }
}

pub type Result<T> = std::result::Result<T, CliError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    DeRun,
    Threshold,
    Stability,
    Mc,
    Wasserstein,
    Compare,
}

impl Command {
    fn default_format(self) -> OutputFormat {
        match self {
            Command::DeRun | Command::Mc | Command::Compare => OutputFormat::Csv,
            _ => OutputFormat::Json,
        }
    }

    fn has_series(self) -> bool {
        self.default_format() == OutputFormat::Csv
    }

    fn default_iters(self) -> usize {
        match self {
            Command::DeRun | Command::Threshold => 2000,
            Command::Stability => 50,
            _ => 20,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum OutputFormat {
    Csv,
    Json,
}

#[derive(Debug, Parser)]
#[command(name = "satde", version, about = "Density evolution and decoding with saturated LLRs")]
pub struct Args {
    /// Analysis to run.
    #[arg(value_enum)]
    pub command: Option<Command>,
    /// JSON configuration file; flags override its fields.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// `l,r` for a regular ensemble, or `{"lambda":[..],"rho":[..]}`.
    #[arg(long)]
    pub ensemble: Option<String>,
    /// `FAMILY:PARAM[:CLIP]`, e.g. `BSC:0.07`, or a JSON object.
    #[arg(long)]
    pub channel: Option<String>,
    /// Second channel for `wasserstein`.
    #[arg(long)]
    pub other: Option<String>,
    /// Channel family for `threshold` (BEC, BSC, BIAWGN).
    #[arg(long)]
    pub family: Option<String>,
    /// bp, sat or symsat.
    #[arg(long)]
    pub mode: Option<String>,
    /// Saturation level.
    #[arg(long = "K")]
    pub k: Option<f64>,
    /// Grid spacing δ.
    #[arg(long)]
    pub grid: Option<f64>,
    /// Grid support bound S.
    #[arg(long)]
    pub support: Option<f64>,
    #[arg(long, visible_alias = "report")]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub format: Option<OutputFormat>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Iteration cap (DE) or iteration count (decoder, stability trace).
    #[arg(long)]
    pub iters: Option<usize>,
    /// Threshold bracket width.
    #[arg(long)]
    pub tol: Option<f64>,
    /// Block length for simulations.
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub trials: Option<usize>,
    /// bp or minsum.
    #[arg(long)]
    pub rule: Option<String>,
    /// Flip rail messages at the symmetrizing rate.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub symmetrize: Option<bool>,
}

/// Fully resolved and validated run description. Serialized verbatim into
/// every output so a run can be reproduced with `--config`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunConfig {
    pub command: Command,
    pub ensemble: Option<EnsembleSpec>,
    pub channel: Option<ChannelSpec>,
    pub other: Option<ChannelSpec>,
    pub family: Option<ChannelKind>,
    pub mode: DeMode,
    #[serde(rename = "K")]
    pub k: Option<f64>,
    pub grid_delta: f64,
    pub support_bound: f64,
    pub out: Option<PathBuf>,
    pub format: OutputFormat,
    pub seed: u64,
    pub iters: usize,
    pub tol: f64,
    pub n: usize,
    pub trials: usize,
    pub rule: DecoderRule,
    pub symmetrize: bool,
}

#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum TextOr<T> {
    Text(String),
    Value(T),
}

#[derive(Debug, Deserialize)]
struct Coefficients {
    lambda: Vec<f64>,
    rho: Vec<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    command: Option<Command>,
    ensemble: Option<TextOr<Coefficients>>,
    channel: Option<TextOr<ChannelSpec>>,
    other: Option<TextOr<ChannelSpec>>,
    family: Option<ChannelKind>,
    mode: Option<DeMode>,
    #[serde(rename = "K")]
    k: Option<f64>,
    grid_delta: Option<f64>,
    support_bound: Option<f64>,
    out: Option<PathBuf>,
    format: Option<OutputFormat>,
    seed: Option<u64>,
    iters: Option<usize>,
    tol: Option<f64>,
    n: Option<usize>,
    trials: Option<usize>,
    rule: Option<DecoderRule>,
    symmetrize: Option<bool>,
}

pub fn parse_ensemble(s: &str) -> Result<EnsembleSpec> {
    let s = s.trim();
    if s.starts_with('{') {
        let c: Coefficients = serde_json::from_str(s).map_err(|e| CliError::config("ensemble", e))?;
        return Ok(EnsembleSpec::from_edge_perspective(c.lambda, c.rho)?);
    }
    let parts: Vec<&str> = s.split(',').map(str::trim).collect();
    let [l, r] = parts.as_slice() else {
        return Err(CliError::config("ensemble", format!("expected `l,r` or a JSON object, got `{s}`")));
    };
    let parse = |v: &str| v.parse::<usize>().map_err(|e| CliError::config("ensemble", format!("`{v}`: {e}")));
    Ok(EnsembleSpec::regular(parse(l)?, parse(r)?)?)
}

fn parse_channel(field: &str, s: &str) -> Result<ChannelSpec> {
    s.parse().map_err(|e: satde::Error| CliError::config(field, e))
}

fn resolve_ensemble(v: TextOr<Coefficients>) -> Result<EnsembleSpec> {
    match v {
        TextOr::Text(s) => parse_ensemble(&s),
        TextOr::Value(c) => Ok(EnsembleSpec::from_edge_perspective(c.lambda, c.rho)?),
    }
}

fn resolve_channel(field: &str, v: TextOr<ChannelSpec>) -> Result<ChannelSpec> {
    match v {
        TextOr::Text(s) => parse_channel(field, &s),
        TextOr::Value(c) => Ok(c),
    }
}

/// Merge the configuration file (if any) with the flags, flags winning, then
/// fill defaults and validate every field.
pub fn parse_config(args: &Args) -> Result<RunConfig> {
    let file = match &args.config {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| CliError::config("config", format!("{}: {e}", path.display())))?;
            serde_json::from_str::<FileConfig>(&text).map_err(|e| CliError::config("config", e))?
        }
        None => FileConfig::default(),
    };

    let command = args
        .command
        .or(file.command)
        .ok_or_else(|| CliError::config("command", "no command given"))?;

    let ensemble = match (&args.ensemble, file.ensemble) {
        (Some(s), _) => Some(parse_ensemble(s)?),
        (None, Some(v)) => Some(resolve_ensemble(v)?),
        (None, None) => None,
    };
    let channel = match (&args.channel, file.channel) {
        (Some(s), _) => Some(parse_channel("channel", s)?),
        (None, Some(v)) => Some(resolve_channel("channel", v)?),
        (None, None) => None,
    };
    let other = match (&args.other, file.other) {
        (Some(s), _) => Some(parse_channel("other", s)?),
        (None, Some(v)) => Some(resolve_channel("other", v)?),
        (None, None) => None,
    };
    let family = match &args.family {
        Some(s) => Some(s.parse::<ChannelKind>().map_err(|e| CliError::config("family", e))?),
        None => file.family,
    };
    let mode = match &args.mode {
        Some(s) => s.parse::<DeMode>().map_err(|e| CliError::config("mode", e))?,
        None => file.mode.unwrap_or(DeMode::Bp),
    };
    let rule = match &args.rule {
        Some(s) => s.parse::<DecoderRule>().map_err(|e| CliError::config("rule", e))?,
        None => file.rule.unwrap_or(DecoderRule::Bp),
    };
    let grid_delta = match args.grid.or(file.grid_delta) {
        Some(d) => d,
        None => match std::env::var(GRID_DELTA_ENV) {
            Ok(v) => v
                .trim()
                .parse::<f64>()
                .map_err(|e| CliError::config("grid_delta", format!("{GRID_DELTA_ENV}=`{v}`: {e}")))?,
            Err(_) => DEFAULT_GRID_DELTA,
        },
    };
    let out = args.out.clone().or(file.out);
    let format = args
        .format
        .or(file.format)
        .or_else(|| match out.as_ref().and_then(|p| p.extension()).and_then(|e| e.to_str()) {
            Some("json") => Some(OutputFormat::Json),
            Some("csv") => Some(OutputFormat::Csv),
            _ => None,
        })
        .unwrap_or(command.default_format());

    let cfg = RunConfig {
        command,
        ensemble,
        channel,
        other,
        family,
        mode,
        k: args.k.or(file.k),
        grid_delta,
        support_bound: args.support.or(file.support_bound).unwrap_or(DEFAULT_SUPPORT_BOUND),
        out,
        format,
        seed: args.seed.or(file.seed).unwrap_or(0),
        iters: args.iters.or(file.iters).unwrap_or(command.default_iters()),
        tol: args.tol.or(file.tol).unwrap_or(DEFAULT_TOL),
        n: args.n.or(file.n).unwrap_or(DEFAULT_N),
        trials: args.trials.or(file.trials).unwrap_or(DEFAULT_TRIALS),
        rule,
        symmetrize: args.symmetrize.or(file.symmetrize).unwrap_or(false),
    };
    cfg.validate()?;
    Ok(cfg)
}

impl RunConfig {
    pub fn grid(&self) -> Result<Grid> {
        Grid::new(self.grid_delta, self.support_bound).map_err(|e| match e {
            satde::Error::InvalidParameter { name, reason } => {
                let field = if name == "grid_spacing" { "grid_delta" } else { name };
                CliError::config(field, reason)
            }
            other => other.into(),
        })
    }

    fn require_channel(&self) -> Result<ChannelSpec> {
        self.channel
            .ok_or_else(|| CliError::config("channel", format!("required by `{}`", self.command_name())))
    }

    fn require_ensemble(&self) -> Result<&EnsembleSpec> {
        self.ensemble
            .as_ref()
            .ok_or_else(|| CliError::config("ensemble", format!("required by `{}`", self.command_name())))
    }

    fn require_k(&self) -> Result<f64> {
        self.k
            .ok_or_else(|| CliError::config("K", format!("required by `{}`", self.command_name())))
    }

    fn command_name(&self) -> String {
        self.command.to_possible_value().map(|v| v.get_name().to_string()).unwrap_or_default()
    }

    fn validate(&self) -> Result<()> {
        let grid = self.grid()?;
        if let Some(k) = self.k {
            if !(k > 0.0 && k.is_finite()) {
                return Err(CliError::config("K", format!("must be positive, got {k}")));
            }
            let steps = k / grid.spacing();
            if (steps - steps.round()).abs() > 1e-9 * steps.max(1.0) {
                return Err(CliError::config(
                    "K",
                    format!("{k} is not a multiple of the grid spacing {}", grid.spacing()),
                ));
            }
            if k >= grid.support_bound() {
                return Err(CliError::config(
                    "K",
                    format!("must lie below the support bound {}", grid.support_bound()),
                ));
            }
        }
        if self.iters == 0 {
            return Err(CliError::config("iters", "must be at least 1"));
        }
        if self.format == OutputFormat::Csv && !self.command.has_series() {
            return Err(CliError::config(
                "format",
                format!("`{}` produces JSON only", self.command_name()),
            ));
        }
        for (name, ch) in [("channel", self.channel), ("other", self.other)] {
            if let Some(c) = ch {
                let (lo, hi) = c.family.default_range();
                if !(c.param >= lo && c.param <= hi) {
                    return Err(CliError::config(
                        name,
                        format!("{} parameter {} outside [{lo}, {hi}]", c.family, c.param),
                    ));
                }
            }
        }
        if self.command != Command::Wasserstein {
            self.require_ensemble()?;
        }
        match self.command {
            Command::DeRun => {
                self.require_channel()?;
                if self.mode.is_saturated() {
                    self.require_k()?;
                }
            }
            Command::Threshold => {
                if self.family.is_none() && self.channel.is_none() {
                    return Err(CliError::config("family", "required by `threshold`"));
                }
                if self.mode.is_saturated() {
                    self.require_k()?;
                }
                if !(self.tol > 0.0) {
                    return Err(CliError::config("tol", format!("must be positive, got {}", self.tol)));
                }
            }
            Command::Stability => {
                self.require_channel()?;
                self.require_k()?;
            }
            Command::Wasserstein => {
                self.require_channel()?;
                if self.other.is_none() {
                    self.require_k()?;
                }
            }
            Command::Mc | Command::Compare => {
                self.require_channel()?;
                self.require_k()?;
                let (l, r) = self
                    .require_ensemble()?
                    .regular_pair()
                    .ok_or_else(|| CliError::config("ensemble", "simulations need a regular ensemble"))?;
                if self.n == 0 || (self.n * l) % r != 0 {
                    return Err(CliError::config("n", format!("n*l must be a positive multiple of r = {r}")));
                }
                if self.trials == 0 {
                    return Err(CliError::config("trials", "must be at least 1"));
                }
            }
        }
        Ok(())
    }

    fn decoder(&self) -> Result<DecoderConfig> {
        Ok(DecoderConfig {
            k: self.require_k()?,
            max_iters: self.iters,
            rule: self.rule,
            symmetrize: self.symmetrize,
            rng_seed: self.seed,
        })
    }

    fn de_options(&self) -> Result<DeOptions> {
        let mut o = DeOptions::for_mode(self.mode, self.k)?;
        o.max_iters = self.iters;
        Ok(o)
    }
}

/// What a finished command produced.
#[derive(Debug)]
pub struct Outcome {
    /// Human-readable summary.
    pub summary: String,
    /// The analysis finished but could not reach a verdict.
    pub inconclusive: bool,
}

impl Outcome {
    pub fn exit_code(&self) -> i32 {
        if self.inconclusive {
            4
        } else {
            0
        }
    }
}

enum Payload {
    /// CSV body (header included) and its JSON equivalent.
    Series(Vec<u8>, Value),
    Json(Value),
}

/// Execute a validated configuration and write its output.
pub fn run(cfg: &RunConfig) -> Result<Outcome> {
    let grid = cfg.grid()?;
    let ens = || cfg.require_ensemble();
    let (payload, summary, inconclusive) = match cfg.command {
        Command::DeRun => {
            let c = cfg.require_channel()?.density(grid)?;
            let trace = de_run(&c, ens()?, cfg.mode, cfg.k, &cfg.de_options()?)?;
            if trace.status == DeStatus::Diverged {
                return Err(CliError::Numerical(format!(
                    "density evolution lost mass or produced NaN at iteration {}",
                    trace.records.len()
                )));
            }
            let mut csv = Vec::new();
            trace.write_csv(&mut csv)?;
            let last = trace.last();
            let summary = format!(
                "de-run: {} after {} iterations, E = {:e}, B = {:e}",
                status_name(trace.status),
                trace.records.len(),
                last.e,
                last.b,
            );
            let value = json!({ "status": trace.status, "records": trace.records });
            (Payload::Series(csv, value), summary, false)
        }
        Command::Threshold => {
            let fam = match (cfg.family, cfg.channel) {
                (Some(kind), Some(c)) if c.family == kind => c.family(),
                (Some(kind), _) => satde::ChannelFamily::new(kind),
                (None, Some(c)) => c.family(),
                (None, None) => unreachable!("validated"),
            };
            let t = threshold_search(&fam, ens()?, cfg.mode, cfg.k, cfg.tol, grid, &cfg.de_options()?)?;
            let summary = match &t.degenerate {
                Some(why) => format!("threshold: inconclusive ({why})"),
                None => format!(
                    "threshold: {} = {:.6} (bracket {:.2e}, {} probes, entropy {:.6})",
                    fam.kind, t.threshold, t.bracket_width, t.probes, t.entropy
                ),
            };
            let inconclusive = t.degenerate.is_some();
            (Payload::Json(serde_json::to_value(&t).map_err(numerical)?), summary, inconclusive)
        }
        Command::Stability => {
            let spec = cfg.require_channel()?;
            let k = cfg.require_k()?;
            let c = spec.density(grid)?;
            let verdict = analyze(ens()?, spec.family, &c, k)?;
            let d_r = ens()?.max_check_degree();
            let mut value = json!({ "verdict": verdict });
            if ens()?.min_var_degree() >= 3 {
                let degrees: Vec<usize> = ens()?.var_degrees().iter().map(|&(d, _)| d).collect();
                let ks: Vec<f64> = (2..=2 * (grid.support_bound() as usize - 1)).map(|i| i as f64 * 0.5).collect();
                let (scan, k0) = scan_matrix_radius(d_r, &degrees, c.bhattacharyya(), &ks)?;
                value["radius_scan"] = scan.iter().map(|&(k, r)| json!({ "K": k, "radius": r })).collect();
                value["K0"] = json!(k0);
                let opts = DeOptions::for_mode(DeMode::SymSat, Some(k))?.fixed(cfg.iters).keeping_densities();
                let trace = de_run(&c, ens()?, DeMode::SymSat, Some(k), &opts)?;
                let params = SaturationParams::new(k, d_r, channel_support_bound(&c))?;
                let report = verify_vc_inequalities(&trace, ens()?, &c, &params)?;
                value["inequalities"] = serde_json::to_value(&report).map_err(numerical)?;
            }
            let summary = format!(
                "stability: {} (spectral radius {})",
                verdict.regime,
                verdict.spectral_radius.map_or("n/a".to_string(), |r| format!("{r:e}"))
            );
            (Payload::Json(value), summary, verdict.regime == StabilityRegime::Inconclusive)
        }
        Command::Wasserstein => {
            let a = cfg.require_channel()?.density(grid)?;
            let value = match (cfg.other, cfg.k) {
                (Some(o), _) => {
                    let b = o.density(grid)?;
                    json!({ "distance": a.wasserstein(&b)? })
                }
                (None, Some(k)) => {
                    let s = a.saturate_sym(k)?;
                    json!({ "distance": a.wasserstein(&s)?, "bound": one_minus_tanh_half(k) })
                }
                (None, None) => unreachable!("validated"),
            };
            let summary = format!("wasserstein: {}", value["distance"]);
            (Payload::Json(value), summary, false)
        }
        Command::Mc => {
            let spec = cfg.require_channel()?;
            let sim = simulate_ber(ens()?, &spec.family(), spec.param, &cfg.decoder()?, cfg.n, cfg.trials)?;
            let mut csv = Vec::new();
            sim.write_csv(&mut csv)?;
            let summary = format!(
                "mc: BER {:e} (95% CI [{:e}, {:e}]) over {} trials of n = {}",
                sim.ber, sim.ber_ci.0, sim.ber_ci.1, sim.trials, sim.n
            );
            (Payload::Series(csv, serde_json::to_value(&sim).map_err(numerical)?), summary, false)
        }
        Command::Compare => {
            let spec = cfg.require_channel()?;
            let rep =
                compare_sat_vs_symsat(ens()?, &spec.family(), spec.param, &cfg.decoder()?, cfg.n, cfg.trials)?;
            let mut csv = Vec::new();
            rep.write_csv(&mut csv)?;
            let flips: usize = rep.rows.iter().map(|r| r.flips).sum();
            let last = rep.rows.last();
            let summary = format!(
                "compare: final message error {:e} plain vs {:e} symmetrized, {flips} flips",
                last.map_or(f64::NAN, |r| r.plain),
                last.map_or(f64::NAN, |r| r.symmetrized)
            );
            (Payload::Series(csv, serde_json::to_value(&rep).map_err(numerical)?), summary, false)
        }
    };
    write_output(cfg, payload)?;
    Ok(Outcome { summary, inconclusive })
}

fn numerical(e: serde_json::Error) -> CliError {
    CliError::Numerical(e.to_string())
}

fn status_name(s: DeStatus) -> String {
    serde_json::to_value(s)
        .ok()
        .and_then(|v| v.as_str().map(str::to_owned))
        .unwrap_or_default()
}

fn write_output(cfg: &RunConfig, payload: Payload) -> Result<()> {
    let config = serde_json::to_value(cfg).map_err(numerical)?;
    let mut bytes = Vec::new();
    match (cfg.format, payload) {
        (OutputFormat::Csv, Payload::Series(csv, _)) => {
            writeln!(bytes, "# schema_version={SCHEMA_VERSION} config={config}")?;
            bytes.extend_from_slice(&csv);
        }
        (OutputFormat::Json, Payload::Series(_, result) | Payload::Json(result)) => {
            let doc = json!({ "schema_version": SCHEMA_VERSION, "config": config, "result": result });
            serde_json::to_writer_pretty(&mut bytes, &doc).map_err(numerical)?;
            bytes.push(b'\n');
        }
        (OutputFormat::Csv, Payload::Json(_)) => unreachable!("validated"),
    }
    match &cfg.out {
        Some(path) => write_file(path, &bytes),
        None => io::stdout().write_all(&bytes).map_err(Into::into),
    }
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| CliError::Io(io::Error::new(e.kind(), format!("{}: {e}", path.display()))))
}
