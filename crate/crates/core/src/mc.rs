//! Flooding SatBP decoder on random regular Tanner graphs.

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::channels::ChannelFamily;
use crate::error::{Error, Result};
use crate::llr::boxplus_magnitude;
use crate::stability::flip_probability;

/// Bipartite graph stored as an edge list plus per-node adjacency.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TannerGraph {
    n_vars: usize,
    n_checks: usize,
    /// `(variable, check, check socket)` per edge; edges are grouped by
    /// variable in socket order.
    edges: Vec<(u32, u32, u32)>,
    var_offsets: Vec<usize>,
    check_offsets: Vec<usize>,
    /// Edge indices grouped by check, in socket order.
    check_adj: Vec<u32>,
    multi_edges: usize,
}

impl TannerGraph {
    pub fn n_vars(&self) -> usize {
        self.n_vars
    }

    pub fn n_checks(&self) -> usize {
        self.n_checks
    }

    pub fn n_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn edges(&self) -> &[(u32, u32, u32)] {
        &self.edges
    }

    pub fn var_degree(&self, v: usize) -> usize {
        self.var_offsets[v + 1] - self.var_offsets[v]
    }

    pub fn check_degree(&self, c: usize) -> usize {
        self.check_offsets[c + 1] - self.check_offsets[c]
    }

    /// Number of repeated (variable, check) pairs.
    pub fn multi_edges(&self) -> usize {
        self.multi_edges
    }

    /// Edges of variable `v`.
    fn var_edges(&self, v: usize) -> std::ops::Range<usize> {
        self.var_offsets[v]..self.var_offsets[v + 1]
    }

    fn check_edges(&self, c: usize) -> &[u32] {
        &self.check_adj[self.check_offsets[c]..self.check_offsets[c + 1]]
    }
}

/// Configuration-model sample of the `(l, r)`-regular ensemble on `n`
/// variable nodes.
pub fn build_regular_graph(n: usize, l: usize, r: usize, seed: u64) -> Result<TannerGraph> {
    if n == 0 || l == 0 || r == 0 {
        return Err(Error::param("graph", "n, l and r must be positive"));
    }
    if (n * l) % r != 0 {
        return Err(Error::param("n", format!("n*l = {} is not divisible by r = {r}", n * l)));
    }
    let n_edges = n * l;
    let n_checks = n_edges / r;
    let mut sockets: Vec<u32> = (0..n_edges as u32).collect();
    sockets.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let edges: Vec<(u32, u32, u32)> = sockets
        .iter()
        .enumerate()
        .map(|(e, &s)| ((e / l) as u32, s / r as u32, s % r as u32))
        .collect();
    let mut check_adj = vec![0u32; n_edges];
    for (e, &(_, c, s)) in edges.iter().enumerate() {
        check_adj[c as usize * r + s as usize] = e as u32;
    }
    let mut multi_edges = 0;
    for v in 0..n {
        let mut cs: Vec<u32> = edges[v * l..(v + 1) * l].iter().map(|e| e.1).collect();
        cs.sort_unstable();
        multi_edges += cs.windows(2).filter(|w| w[0] == w[1]).count();
    }
    if multi_edges > 0 {
        log::debug!("configuration model produced {multi_edges} repeated edges");
    }
    Ok(TannerGraph {
        n_vars: n,
        n_checks,
        edges,
        var_offsets: (0..=n).map(|v| v * l).collect(),
        check_offsets: (0..=n_checks).map(|c| c * r).collect(),
        check_adj,
        multi_edges,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DecoderRule {
    Bp,
    MinSum,
}

impl fmt::Display for DecoderRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DecoderRule::Bp => "bp",
            DecoderRule::MinSum => "minsum",
        })
    }
}

impl FromStr for DecoderRule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "bp" => Ok(DecoderRule::Bp),
            "minsum" | "min-sum" => Ok(DecoderRule::MinSum),
            other => Err(Error::param("rule", format!("unknown rule `{other}` (bp, minsum)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecoderConfig {
    #[serde(rename = "K")]
    pub k: f64,
    pub max_iters: usize,
    pub rule: DecoderRule,
    /// Flip rail messages at the symmetrizing rate.
    pub symmetrize: bool,
    pub rng_seed: u64,
}

impl DecoderConfig {
    pub fn new(k: f64, max_iters: usize) -> Self {
        DecoderConfig {
            k,
            max_iters,
            rule: DecoderRule::Bp,
            symmetrize: false,
            rng_seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.k > 0.0) {
            return Err(Error::param("K", format!("must be positive, got {}", self.k)));
        }
        if self.max_iters == 0 {
            return Err(Error::param("max_iters", "must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecodeResult {
    /// `+1` for bit 0, `-1` for bit 1, `0` for a tie.
    pub decisions: Vec<i8>,
    /// Per iteration: fraction of variable-to-check messages that are
    /// negative, plus half the fraction that are zero.
    pub message_error_rate: Vec<f64>,
    /// Per iteration: fraction of variable-to-check messages equal to zero.
    pub erasure_rate: Vec<f64>,
    /// Number of rail messages whose sign was flipped, per iteration.
    pub flips: Vec<usize>,
    /// Variable-to-check messages after the last iteration, in edge order.
    pub messages: Vec<f64>,
}

impl DecodeResult {
    /// Bit error rate for the all-zero codeword, ties counted as one half.
    pub fn bit_error_rate(&self) -> f64 {
        let n = self.decisions.len() as f64;
        self.decisions
            .iter()
            .map(|&d| match d {
                -1 => 1.0,
                0 => 0.5,
                _ => 0.0,
            })
            .sum::<f64>()
            / n
    }
}

#[inline]
fn clip(x: f64, k: f64) -> f64 {
    // `+ 0.0` turns a negative zero into a positive one
    x.clamp(-k, k) + 0.0
}


const FLIP_STREAM: u64 = 2;
const LLR_STREAM: u64 = 1;
const GRAPH_STREAM: u64 = 0;

/// Generator for one purpose within one trial; streams never overlap.
fn trial_rng(seed: u64, trial: u64, purpose: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream((trial << 2) | purpose);
    rng
}

/// Messages in both directions after every iteration, in edge order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct MessageHistory {
    pub var_to_check: Vec<Vec<f64>>,
    pub check_to_var: Vec<Vec<f64>>,
}

/// Decode one channel-LLR vector. `trial` selects the flip stream.
pub fn decode(graph: &TannerGraph, llrs: &[f64], cfg: &DecoderConfig) -> Result<DecodeResult> {
    run(graph, llrs, cfg, 0, None)
}

/// As [`decode`], also returning every intermediate message.
pub fn decode_traced(
    graph: &TannerGraph,
    llrs: &[f64],
    cfg: &DecoderConfig,
    trial: u64,
) -> Result<(DecodeResult, MessageHistory)> {
    let mut hist = MessageHistory::default();
    let res = run(graph, llrs, cfg, trial, Some(&mut hist))?;
    Ok((res, hist))
}

fn run(
    graph: &TannerGraph,
    llrs: &[f64],
    cfg: &DecoderConfig,
    trial: u64,
    mut hist: Option<&mut MessageHistory>,
) -> Result<DecodeResult> {
    cfg.validate()?;
    if llrs.len() != graph.n_vars {
        return Err(Error::param(
            "llrs",
            format!("expected {} values, got {}", graph.n_vars, llrs.len()),
        ));
    }
    if llrs.iter().any(|x| x.is_nan()) {
        return Err(Error::param("llrs", "NaN channel LLR"));
    }
    let k = cfg.k;
    let ne = graph.n_edges();
    let mut v2c = vec![0.0f64; ne];
    let mut c2v = vec![0.0f64; ne];
    let mut flips_rng = cfg.symmetrize.then(|| trial_rng(cfg.rng_seed, trial, FLIP_STREAM));
    let (mut err_rate, mut erasure_rate, mut flips) = (Vec::new(), Vec::new(), Vec::new());
    let mut mags = Vec::new();
    let mut prefix = Vec::new();

    for _ in 0..cfg.max_iters {
        let mut n_flips = 0;
        for v in 0..graph.n_vars {
            let es = graph.var_edges(v);
            for e in es.clone() {
                let mut z = llrs[v];
                for o in es.clone() {
                    if o != e {
                        z += c2v[o];
                    }
                }
                let mut m = clip(z, k);
                if let Some(rng) = flips_rng.as_mut() {
                    // one uniform per message keeps streams aligned across runs
                    let u: f64 = rng.gen();
                    if z.abs() >= k && u < flip_probability(z.abs(), k)? {
                        m = -m;
                        n_flips += 1;
                    }
                }
                v2c[e] = m;
            }
        }
        let (mut neg, mut zero) = (0usize, 0usize);
        for &m in &v2c {
            if m < 0.0 {
                neg += 1;
            } else if m == 0.0 {
                zero += 1;
            }
        }
        err_rate.push((neg as f64 + 0.5 * zero as f64) / ne as f64);
        erasure_rate.push(zero as f64 / ne as f64);
        flips.push(n_flips);

        for c in 0..graph.n_checks {
            let es = graph.check_edges(c);
            let d = es.len();
            mags.clear();
            mags.extend(es.iter().map(|&e| v2c[e as usize].abs()));
            let negatives = es.iter().filter(|&&e| v2c[e as usize] < 0.0).count();
            match cfg.rule {
                DecoderRule::Bp => {
                    // prefix[j] combines mags[..j]; infinity is the identity
                    prefix.clear();
                    prefix.push(f64::INFINITY);
                    for j in 0..d {
                        let p = boxplus_magnitude(prefix[j], mags[j]);
                        prefix.push(p);
                    }
                    let mut suffix = f64::INFINITY;
                    for j in (0..d).rev() {
                        let mag = boxplus_magnitude(prefix[j], suffix);
                        let e = es[j] as usize;
                        let own_neg = v2c[e] < 0.0;
                        let neg_out = (negatives - own_neg as usize) % 2 == 1;
                        c2v[e] = clip(if neg_out { -mag } else { mag }, k);
                        suffix = boxplus_magnitude(suffix, mags[j]);
                    }
                }
                DecoderRule::MinSum => {
                    for j in 0..d {
                        let mag = mags
                            .iter()
                            .enumerate()
                            .filter(|&(i, _)| i != j)
                            .fold(f64::INFINITY, |a, (_, &m)| a.min(m));
                        let e = es[j] as usize;
                        let own_neg = v2c[e] < 0.0;
                        let neg_out = (negatives - own_neg as usize) % 2 == 1;
                        c2v[e] = clip(if neg_out { -mag } else { mag }, k);
                    }
                }
            }
        }
        if let Some(h) = hist.as_deref_mut() {
            h.var_to_check.push(v2c.clone());
            h.check_to_var.push(c2v.clone());
        }
    }

    let decisions = (0..graph.n_vars)
        .map(|v| {
            let total = graph.var_edges(v).fold(llrs[v], |acc, e| acc + c2v[e]);
            if total > 0.0 {
                1
            } else if total < 0.0 {
                -1
            } else {
                0
            }
        })
        .collect();
    Ok(DecodeResult {
        decisions,
        message_error_rate: err_rate,
        erasure_rate,
        flips,
        messages: v2c,
    })
}

/// Wilson score interval at 95% for `successes` out of `n`.
pub fn wilson_interval(successes: f64, n: f64) -> (f64, f64) {
    if n <= 0.0 {
        return (0.0, 1.0);
    }
    const Z: f64 = 1.959963984540054;
    let p = successes / n;
    let z2 = Z * Z;
    let denom = 1.0 + z2 / n;
    let centre = (p + z2 / (2.0 * n)) / denom;
    let half = Z * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt() / denom;
    let lo = if successes <= 0.0 { 0.0 } else { (centre - half).max(0.0) };
    let hi = if successes >= n { 1.0 } else { (centre + half).min(1.0) };
    (lo, hi)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IterStat {
    pub iter: usize,
    pub msg_err_rate: f64,
    pub erasure_rate: f64,
    /// Wilson 95% interval on the pooled message count.
    pub ci_lo: f64,
    pub ci_hi: f64,
    /// Standard error of the mean over trials.
    pub std_err: f64,
    pub flips: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationResult {
    pub per_iter: Vec<IterStat>,
    pub ber: f64,
    pub ber_ci: (f64, f64),
    pub n: usize,
    pub trials: usize,
    pub multi_edges: usize,
    pub config: DecoderConfig,
}

impl SimulationResult {
    pub const CSV_HEADER: &'static str = "iter,msg_err_rate,ci_lo,ci_hi";

    pub fn write_csv<W: std::io::Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "{}", Self::CSV_HEADER)?;
        for s in &self.per_iter {
            writeln!(w, "{},{:e},{:e},{:e}", s.iter, s.msg_err_rate, s.ci_lo, s.ci_hi)?;
        }
        Ok(())
    }
}

fn mean_and_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// One trial: sample a graph and channel outputs, then decode.
fn trial_inputs(
    l: usize,
    r: usize,
    family: &ChannelFamily,
    sigma: f64,
    n: usize,
    seed: u64,
    trial: u64,
) -> Result<(TannerGraph, Vec<f64>)> {
    let graph_seed: u64 = trial_rng(seed, trial, GRAPH_STREAM).gen();
    let graph = build_regular_graph(n, l, r, graph_seed)?;
    let llrs = family.sample_llrs(sigma, n, &mut trial_rng(seed, trial, LLR_STREAM))?;
    Ok((graph, llrs))
}

fn summarize(runs: &[DecodeResult], n: usize, multi_edges: usize, cfg: &DecoderConfig) -> SimulationResult {
    let trials = runs.len();
    let edges = runs[0].messages.len() as f64;
    let per_iter = (0..cfg.max_iters)
        .map(|i| {
            let rates: Vec<f64> = runs.iter().map(|r| r.message_error_rate[i]).collect();
            let (mean, se) = mean_and_se(&rates);
            let erasure = runs.iter().map(|r| r.erasure_rate[i]).sum::<f64>() / trials as f64;
            let total = edges * trials as f64;
            let (lo, hi) = wilson_interval(mean * total, total);
            IterStat {
                iter: i + 1,
                msg_err_rate: mean,
                erasure_rate: erasure,
                ci_lo: lo,
                ci_hi: hi,
                std_err: se,
                flips: runs.iter().map(|r| r.flips[i]).sum(),
            }
        })
        .collect();
    let bers: Vec<f64> = runs.iter().map(DecodeResult::bit_error_rate).collect();
    let ber = bers.iter().sum::<f64>() / trials as f64;
    let bits = (n * trials) as f64;
    SimulationResult {
        per_iter,
        ber,
        ber_ci: wilson_interval(ber * bits, bits),
        n,
        trials,
        multi_edges,
        config: *cfg,
    }
}

fn regular(ens: &crate::ensemble::EnsembleSpec) -> Result<(usize, usize)> {
    ens.regular_pair()
        .ok_or_else(|| Error::param("ensemble", "Monte Carlo decoding needs a regular ensemble"))
}

/// All-zero-codeword simulation over `trials` independent graphs and noise
/// realizations.
pub fn simulate_ber(
    ens: &crate::ensemble::EnsembleSpec,
    family: &ChannelFamily,
    sigma: f64,
    cfg: &DecoderConfig,
    n: usize,
    trials: usize,
) -> Result<SimulationResult> {
    if trials == 0 {
        return Err(Error::param("trials", "must be at least 1"));
    }
    cfg.validate()?;
    let (l, r) = regular(ens)?;
    let mut runs = Vec::with_capacity(trials);
    let mut multi = 0;
    for t in 0..trials as u64 {
        let (graph, llrs) = trial_inputs(l, r, family, sigma, n, cfg.rng_seed, t)?;
        multi += graph.multi_edges();
        runs.push(run(&graph, &llrs, cfg, t, None)?);
    }
    Ok(summarize(&runs, n, multi, cfg))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub iter: usize,
    pub plain: f64,
    pub symmetrized: f64,
    /// `plain / symmetrized`, absent when both are zero.
    pub ratio: Option<f64>,
    pub flips: usize,
    /// Trials in which the plain decoder had strictly more message errors.
    pub plain_worse_trials: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub rows: Vec<ComparisonRow>,
    pub plain: SimulationResult,
    pub symmetrized: SimulationResult,
}

impl ComparisonReport {
    pub const CSV_HEADER: &'static str = "iter,plain,symmetrized,ratio,flips";

    pub fn write_csv<W: std::io::Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "{}", Self::CSV_HEADER)?;
        for r in &self.rows {
            let ratio = r.ratio.map(|v| format!("{v:e}")).unwrap_or_default();
            writeln!(w, "{},{:e},{:e},{},{}", r.iter, r.plain, r.symmetrized, ratio, r.flips)?;
        }
        Ok(())
    }
}

/// Plain and symmetrized SatBP on identical graphs and channel noise.
pub fn compare_sat_vs_symsat(
    ens: &crate::ensemble::EnsembleSpec,
    family: &ChannelFamily,
    sigma: f64,
    cfg: &DecoderConfig,
    n: usize,
    trials: usize,
) -> Result<ComparisonReport> {
    if trials == 0 {
        return Err(Error::param("trials", "must be at least 1"));
    }
    cfg.validate()?;
    let (l, r) = regular(ens)?;
    let plain_cfg = DecoderConfig {
        symmetrize: false,
        ..*cfg
    };
    let sym_cfg = DecoderConfig {
        symmetrize: true,
        ..*cfg
    };
    let (mut plain, mut sym) = (Vec::new(), Vec::new());
    let mut multi = 0;
    for t in 0..trials as u64 {
        let (graph, llrs) = trial_inputs(l, r, family, sigma, n, cfg.rng_seed, t)?;
        multi += graph.multi_edges();
        plain.push(run(&graph, &llrs, &plain_cfg, t, None)?);
        sym.push(run(&graph, &llrs, &sym_cfg, t, None)?);
    }
    let rows = (0..cfg.max_iters)
        .map(|i| {
            let p = plain.iter().map(|r| r.message_error_rate[i]).sum::<f64>() / trials as f64;
            let s = sym.iter().map(|r| r.message_error_rate[i]).sum::<f64>() / trials as f64;
            ComparisonRow {
                iter: i + 1,
                plain: p,
                symmetrized: s,
                ratio: (s > 0.0).then(|| p / s),
                flips: sym.iter().map(|r| r.flips[i]).sum(),
                plain_worse_trials: plain
                    .iter()
                    .zip(&sym)
                    .filter(|(a, b)| a.message_error_rate[i] > b.message_error_rate[i])
                    .count(),
            }
        })
        .collect();
    Ok(ComparisonReport {
        rows,
        plain: summarize(&plain, n, multi, &plain_cfg),
        symmetrized: summarize(&sym, n, multi, &sym_cfg),
    })
}
