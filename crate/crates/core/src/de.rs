//! Density evolution for BP, saturated BP and symmetric-saturated BP.
//!
//! One round maps the variable-to-check density `x_{ℓ-1}` to
//! `x_ℓ = c ⊛ λ(ρ(x_{ℓ-1}))` (edge perspective, `ρ` mixing check-node powers
//! under `⊠`, `λ` mixing variable-node powers under `⊛`). The saturated modes
//! apply `⌊·⌋_K` or `⌊·⌋_{sym,K}` to the variable-node output.

use std::collections::BTreeMap;
use std::fmt;
use std::io::Write;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::channels::ChannelFamily;
use crate::density::{Grid, QuantizedDensity};
use crate::ensemble::EnsembleSpec;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DeMode {
    /// Unsaturated BP, `T(c, x)`.
    Bp,
    /// `S_K(c, x) = ⌊T(c, x)⌋_K`.
    Sat,
    /// `S_{sym,K}(c, x) = ⌊T(c, x)⌋_{sym,K}`.
    SymSat,
}

impl DeMode {
    pub fn is_saturated(self) -> bool {
        self != DeMode::Bp
    }
}

impl fmt::Display for DeMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DeMode::Bp => "bp",
            DeMode::Sat => "sat",
            DeMode::SymSat => "symsat",
        })
    }
}

impl FromStr for DeMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "bp" => Ok(DeMode::Bp),
            "sat" | "satbp" => Ok(DeMode::Sat),
            "symsat" | "symsatbp" => Ok(DeMode::SymSat),
            other => Err(Error::param("mode", format!("unknown mode `{other}` (bp, sat, symsat)"))),
        }
    }
}

/// Check-node and variable-node outputs of one DE round.
#[derive(Debug, Clone)]
pub struct DeRound {
    pub check_output: QuantizedDensity,
    pub var_output: QuantizedDensity,
}

fn require_k(mode: DeMode, k: Option<f64>) -> Result<Option<f64>> {
    match (mode, k) {
        (DeMode::Bp, _) => Ok(None),
        (_, Some(k)) if k > 0.0 => Ok(Some(k)),
        (_, Some(k)) => Err(Error::param("K", format!("must be positive, got {k}"))),
        (_, None) => Err(Error::param("K", format!("mode {mode} requires a saturation level"))),
    }
}

/// Powers of `x` under a commutative convolution, by repeated squaring with
/// memoization so that mixtures over several degrees share work.
fn powers<F>(x: &QuantizedDensity, exps: &[usize], op: F) -> Result<BTreeMap<usize, QuantizedDensity>>
where
    F: Fn(&QuantizedDensity, &QuantizedDensity) -> Result<QuantizedDensity>,
{
    fn go<F>(
        e: usize,
        x: &QuantizedDensity,
        memo: &mut BTreeMap<usize, QuantizedDensity>,
        op: &F,
    ) -> Result<()>
    where
        F: Fn(&QuantizedDensity, &QuantizedDensity) -> Result<QuantizedDensity>,
    {
        if memo.contains_key(&e) {
            return Ok(());
        }
        let v = if e % 2 == 0 {
            go(e / 2, x, memo, op)?;
            let h = &memo[&(e / 2)];
            op(h, h)?
        } else {
            go(e - 1, x, memo, op)?;
            op(&memo[&(e - 1)], x)?
        };
        memo.insert(e, v);
        Ok(())
    }
    let mut memo = BTreeMap::new();
    memo.insert(1, x.clone());
    for &e in exps {
        if e == 0 {
            return Err(Error::param("degree", "degree-one nodes are not supported"));
        }
        go(e, x, &mut memo, &op)?;
    }
    Ok(memo)
}

fn mix_powers(
    x: &QuantizedDensity,
    degrees: &[(usize, f64)],
    op: impl Fn(&QuantizedDensity, &QuantizedDensity) -> Result<QuantizedDensity>,
) -> Result<QuantizedDensity> {
    let exps: Vec<usize> = degrees.iter().map(|&(d, _)| d - 1).collect();
    let memo = powers(x, &exps, op)?;
    if let [(d, _)] = degrees {
        return Ok(memo[&(d - 1)].clone());
    }
    let comps: Vec<(f64, &QuantizedDensity)> = degrees.iter().map(|&(d, w)| (w, &memo[&(d - 1)])).collect();
    QuantizedDensity::mix(&comps)
}

/// One DE round returning both the check-node and variable-node outputs.
pub fn de_round(
    c: &QuantizedDensity,
    x: &QuantizedDensity,
    ens: &EnsembleSpec,
    mode: DeMode,
    k: Option<f64>,
) -> Result<DeRound> {
    let k = require_k(mode, k)?;
    let check_output = mix_powers(x, &ens.check_degrees(), |a, b| a.chk_convolve(b))?;
    let incoming = mix_powers(&check_output, &ens.var_degrees(), |a, b| a.var_convolve(b))?;
    let t = c.var_convolve(&incoming)?;
    let var_output = match (mode, k) {
        (DeMode::Bp, _) => t,
        (DeMode::Sat, Some(k)) => t.saturate(k)?,
        (DeMode::SymSat, Some(k)) => {
            if !t.is_symmetric() {
                return Err(Error::NotSymmetric);
            }
            t.saturate_sym(k)?
        }
        _ => unreachable!(),
    };
    Ok(DeRound {
        check_output,
        var_output,
    })
}

/// One DE iterate `x_ℓ` from `x_{ℓ-1}`.
pub fn de_step(
    c: &QuantizedDensity,
    x: &QuantizedDensity,
    ens: &EnsembleSpec,
    mode: DeMode,
    k: Option<f64>,
) -> Result<QuantizedDensity> {
    de_round(c, x, ens, mode, k).map(|r| r.var_output)
}

/// When a DE run counts as decoding successfully.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SuccessCriterion {
    /// `E < threshold`.
    ErrorBelow { threshold: f64 },
    /// `E < e^{-K} + 1e-12` and all grid (non-rail, finite) mass below `1e-10`.
    RailLocked { k: f64 },
}

impl SuccessCriterion {
    /// BP: `E < 1e-10`; saturated modes: [`SuccessCriterion::RailLocked`].
    pub fn for_mode(mode: DeMode, k: Option<f64>) -> Result<Self> {
        Ok(match require_k(mode, k)? {
            None => SuccessCriterion::ErrorBelow { threshold: 1e-10 },
            Some(k) => SuccessCriterion::RailLocked { k },
        })
    }

    pub fn is_met(&self, x: &QuantizedDensity) -> bool {
        let e = x.error_probability();
        match *self {
            SuccessCriterion::ErrorBelow { threshold } => e < threshold,
            SuccessCriterion::RailLocked { k } => e < (-k).exp() + 1e-12 && x.grid_mass() < 1e-10,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DeOptions {
    pub max_iters: usize,
    pub success: SuccessCriterion,
    /// Relative change of `E` over `floor_window` iterations below which the
    /// run is declared stuck at a floor.
    pub floor_tol: f64,
    pub floor_window: usize,
    /// Keep every round's densities in the trace.
    #[serde(default)]
    pub keep_densities: bool,
    /// Run exactly `max_iters` rounds, ignoring the stopping rules.
    #[serde(default)]
    pub fixed_iterations: bool,
}

impl DeOptions {
    pub fn for_mode(mode: DeMode, k: Option<f64>) -> Result<Self> {
        Ok(DeOptions {
            max_iters: 2000,
            success: SuccessCriterion::for_mode(mode, k)?,
            floor_tol: 1e-9,
            floor_window: 10,
            keep_densities: false,
            fixed_iterations: false,
        })
    }

    pub fn fixed(mut self, iters: usize) -> Self {
        self.max_iters = iters;
        self.fixed_iterations = true;
        self
    }

    pub fn keeping_densities(mut self) -> Self {
        self.keep_densities = true;
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DeStatus {
    ConvergedZero,
    ConvergedFloor,
    MaxIters,
    Diverged,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DeRecord {
    pub iter: usize,
    #[serde(rename = "B")]
    pub b: f64,
    #[serde(rename = "E")]
    pub e: f64,
    #[serde(rename = "H")]
    pub h: f64,
    /// Wasserstein distance to the previous iterate; `None` when either
    /// iterate is not symmetric.
    pub wasserstein_step: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct DeTrace {
    pub records: Vec<DeRecord>,
    pub status: DeStatus,
    pub final_density: QuantizedDensity,
    /// Per-round densities, present when requested in [`DeOptions`].
    pub rounds: Vec<DeRound>,
}

impl DeTrace {
    pub fn last(&self) -> &DeRecord {
        self.records.last().expect("trace has at least one record")
    }

    pub fn error_column(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.e).collect()
    }

    pub const CSV_HEADER: &'static str = "iter,B,E,H,wasserstein_step";

    /// Per-iteration CSV with header `iter,B,E,H,wasserstein_step`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "{}", Self::CSV_HEADER)?;
        for r in &self.records {
            let ws = r.wasserstein_step.map(|v| format!("{v:e}")).unwrap_or_default();
            writeln!(w, "{},{:e},{:e},{:e},{}", r.iter, r.b, r.e, r.h, ws)?;
        }
        Ok(())
    }
}

/// Run DE from `x_0 = Δ_0`.
pub fn de_run(
    c: &QuantizedDensity,
    ens: &EnsembleSpec,
    mode: DeMode,
    k: Option<f64>,
    opts: &DeOptions,
) -> Result<DeTrace> {
    if opts.max_iters == 0 {
        return Err(Error::param("max_iters", "must be at least 1"));
    }
    let mut x = QuantizedDensity::zero(c.grid());
    let mut records: Vec<DeRecord> = Vec::new();
    let mut rounds = Vec::new();
    let mut status = DeStatus::MaxIters;
    for iter in 1..=opts.max_iters {
        let round = de_round(c, &x, ens, mode, k)?;
        let next = round.var_output.clone();
        let (b, e, h) = (next.bhattacharyya(), next.error_probability(), next.entropy());
        let wasserstein_step = if x.is_symmetric() && next.is_symmetric() {
            Some(next.wasserstein(&x)?)
        } else {
            None
        };
        records.push(DeRecord {
            iter,
            b,
            e,
            h,
            wasserstein_step,
        });
        if opts.keep_densities {
            rounds.push(round);
        }
        x = next;
        if !e.is_finite() || (x.total_mass() - 1.0).abs() > 1e-9 {
            status = DeStatus::Diverged;
            break;
        }
        if opts.fixed_iterations {
            continue;
        }
        if opts.success.is_met(&x) {
            status = DeStatus::ConvergedZero;
            break;
        }
        if iter > opts.floor_window {
            let before = records[iter - 1 - opts.floor_window].e;
            if (e - before).abs() <= opts.floor_tol * before {
                status = DeStatus::ConvergedFloor;
                break;
            }
        }
    }
    Ok(DeTrace {
        records,
        status,
        final_density: x,
        rounds,
    })
}

/// Outcome of a threshold search over a channel family.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdResult {
    /// Midpoint of the final bracket.
    pub threshold: f64,
    /// Channel entropy at `threshold`.
    pub entropy: f64,
    /// Largest parameter at which DE succeeded.
    pub last_success: f64,
    /// Smallest parameter at which DE failed.
    pub first_failure: f64,
    pub bracket_width: f64,
    pub probes: usize,
    pub mode: DeMode,
    #[serde(rename = "K")]
    pub k: Option<f64>,
    pub grid_spacing: f64,
    pub support_bound: f64,
    pub options: DeOptions,
    /// Set when the family range does not bracket a threshold.
    pub degenerate: Option<String>,
}

impl ThresholdResult {
    /// Re-run DE at both ends of the recorded bracket. Returns
    /// `(success at last_success, success at first_failure)`.
    pub fn recheck(&self, family: &ChannelFamily, ens: &EnsembleSpec) -> Result<(bool, bool)> {
        let grid = Grid::new(self.grid_spacing, self.support_bound)?;
        let probe = |sigma: f64| -> Result<bool> {
            let c = family.make_channel(sigma, grid)?;
            Ok(de_run(&c, ens, self.mode, self.k, &self.options)?.status == DeStatus::ConvergedZero)
        };
        Ok((probe(self.last_success)?, probe(self.first_failure)?))
    }
}

/// Bisection on the channel parameter until the bracket is narrower than
/// `tol` (at most 40 halvings). Each probe runs fresh DE from `Δ_0`.
pub fn threshold_search(
    family: &ChannelFamily,
    ens: &EnsembleSpec,
    mode: DeMode,
    k: Option<f64>,
    tol: f64,
    grid: Grid,
    opts: &DeOptions,
) -> Result<ThresholdResult> {
    if !(tol > 0.0) {
        return Err(Error::param("tol", format!("must be positive, got {tol}")));
    }
    let k = require_k(mode, k)?;
    let mut probes = 0usize;
    let mut probe = |sigma: f64| -> Result<bool> {
        probes += 1;
        let c = family.make_channel(sigma, grid)?;
        let trace = de_run(&c, ens, mode, k, opts)?;
        log::debug!(
            "probe {sigma}: {:?} after {} iterations (E = {:e})",
            trace.status,
            trace.records.len(),
            trace.last().e
        );
        Ok(trace.status == DeStatus::ConvergedZero)
    };
    let (mut lo, mut hi) = family.parameter_range;
    let mut degenerate = None;
    if !probe(lo)? {
        degenerate = Some(format!("DE fails at the lower range edge {lo}"));
        hi = lo;
    } else if probe(hi)? {
        degenerate = Some(format!("DE succeeds at the upper range edge {hi}"));
        lo = hi;
    } else {
        for _ in 0..40 {
            if hi - lo < tol {
                break;
            }
            let mid = 0.5 * (lo + hi);
            if probe(mid)? {
                lo = mid;
            } else {
                hi = mid;
            }
        }
    }
    let threshold = 0.5 * (lo + hi);
    let entropy = family.make_channel(threshold, grid)?.entropy();
    Ok(ThresholdResult {
        threshold,
        entropy,
        last_success: lo,
        first_failure: hi,
        bracket_width: hi - lo,
        probes,
        mode,
        k,
        grid_spacing: grid.spacing(),
        support_bound: grid.support_bound(),
        options: *opts,
        degenerate,
    })
}

/// Upper bound on `B(S_sym,K^{(ℓ)}(c, Δ_0))` given the BP value
/// `B(T^{(ℓ)}(c, Δ_0))`: `B_bp + 2√2 exp((-K + ℓ ln(2(l-1)(r-1)))/2)`.
pub fn symsat_bhattacharyya_bound(iter: usize, k: f64, l: usize, r: usize, b_bp: f64) -> Result<f64> {
    if iter == 0 {
        return Err(Error::param("iter", "must be at least 1"));
    }
    if !(k > 0.0) {
        return Err(Error::param("K", format!("must be positive, got {k}")));
    }
    if l < 2 || r < 2 {
        return Err(Error::param("ensemble", "degrees must be at least 2"));
    }
    let growth = (2.0 * (l - 1) as f64 * (r - 1) as f64).ln();
    Ok(b_bp + 2.0 * 2f64.sqrt() * ((-k + iter as f64 * growth) / 2.0).exp())
}

/// Contraction factor `α = 2(l-1) Σ_{j=1}^{r-1} (1-B²_a)^{(r-1-j)/2} (1-B²_b)^{(j-1)/2}`
/// from Bhattacharyya values.
pub fn alpha_from_bhattacharyya(b_a: f64, b_b: f64, l: usize, r: usize) -> Result<f64> {
    for (name, b) in [("B(a)", b_a), ("B(b)", b_b)] {
        if !(0.0..=1.0).contains(&b) {
            return Err(Error::param("bhattacharyya", format!("{name} = {b} outside [0, 1]")));
        }
    }
    if l < 2 || r < 2 {
        return Err(Error::param("ensemble", "degrees must be at least 2"));
    }
    let (ua, ub) = (1.0 - b_a * b_a, 1.0 - b_b * b_b);
    let sum: f64 = (1..r)
        .map(|j| ua.powf((r - 1 - j) as f64 / 2.0) * ub.powf((j - 1) as f64 / 2.0))
        .sum();
    Ok(2.0 * (l - 1) as f64 * sum)
}

/// [`alpha_from_bhattacharyya`] evaluated on two densities.
pub fn alpha_ell(a: &QuantizedDensity, b: &QuantizedDensity, l: usize, r: usize) -> Result<f64> {
    alpha_from_bhattacharyya(a.bhattacharyya(), b.bhattacharyya(), l, r)
}
