//! Flip probabilities, support propagation and stability of saturated DE.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::channels::ChannelKind;
use crate::de::{DeRound, DeTrace};
use crate::density::{QuantizedDensity, SaturatedMassDecomposition};
use crate::ensemble::EnsembleSpec;
use crate::error::{Error, Result};
use crate::llr::{boxplus_magnitude, symmetric_wrong_sign};

/// Rail magnitudes at the two node types.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SaturationParams {
    #[serde(rename = "K")]
    pub k: f64,
    /// Lower bound on the check-output rail, `K' = K - ln(d_r - 1)`
    /// (`K' = K` for min-sum).
    #[serde(rename = "K_prime")]
    pub k_prime: f64,
    /// Channel support bound `K''`.
    #[serde(rename = "K_dprime")]
    pub k_dprime: f64,
    pub d_r: usize,
}

impl SaturationParams {
    pub fn new(k: f64, d_r: usize, k_dprime: f64) -> Result<Self> {
        if !(k > 0.0 && k.is_finite()) {
            return Err(Error::param("K", format!("must be finite and positive, got {k}")));
        }
        if d_r < 2 {
            return Err(Error::param("d_r", format!("must be at least 2, got {d_r}")));
        }
        if !(k_dprime >= 0.0) {
            return Err(Error::param("K_dprime", format!("must be non-negative, got {k_dprime}")));
        }
        Ok(SaturationParams {
            k,
            k_prime: k - ((d_r - 1) as f64).ln(),
            k_dprime,
            d_r,
        })
    }

    /// Parameters for a check rule whose output magnitude equals the
    /// smallest input magnitude.
    pub fn min_sum(k: f64, d_r: usize, k_dprime: f64) -> Result<Self> {
        let mut p = Self::new(k, d_r, k_dprime)?;
        p.k_prime = k;
        Ok(p)
    }

    /// `2K' > K`.
    pub fn cond_2kp_gt_k(&self) -> bool {
        2.0 * self.k_prime > self.k
    }

    /// `K'' <= 2K' - K`.
    pub fn cond_channel(&self) -> bool {
        self.k_dprime <= 2.0 * self.k_prime - self.k
    }

    pub fn conditions_hold(&self) -> bool {
        self.cond_2kp_gt_k() && self.cond_channel()
    }
}

/// Largest finite `|x|` carrying mass in `c`.
pub fn channel_support_bound(c: &QuantizedDensity) -> f64 {
    c.points()
        .into_iter()
        .filter(|&(x, m)| m > 0.0 && x.is_finite())
        .fold(0.0, |acc, (x, _)| acc.max(x.abs()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StabilityRegime {
    Deg2Unstable,
    NearStableDeg2,
    NearStableDeg3,
    StableDeg3plus,
    Inconclusive,
}

impl fmt::Display for StabilityRegime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            StabilityRegime::Deg2Unstable => "deg2_unstable",
            StabilityRegime::NearStableDeg2 => "near_stable_deg2",
            StabilityRegime::NearStableDeg3 => "near_stable_deg3",
            StabilityRegime::StableDeg3plus => "stable_deg3plus",
            StabilityRegime::Inconclusive => "inconclusive",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MatrixEntries {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub d: f64,
}

impl MatrixEntries {
    /// Spectral radius from trace and determinant.
    pub fn spectral_radius(&self) -> f64 {
        let tr = self.a + self.d;
        let det = self.a * self.d - self.b * self.c;
        let disc = tr * tr - 4.0 * det;
        if disc >= 0.0 {
            let s = disc.sqrt();
            ((tr + s) / 2.0).abs().max(((tr - s) / 2.0).abs())
        } else {
            // complex pair, |λ|² = det
            det.sqrt()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StabilityConstants {
    /// `c = 2(d_r - 1)`.
    pub c_const: f64,
    /// `C = 2(d_r - 1) + 1 + sqrt(d_r - 1)`.
    #[serde(rename = "C_const")]
    pub big_c_const: f64,
    pub xi: Option<f64>,
    pub eta: Option<f64>,
}

impl StabilityConstants {
    pub fn for_check_degree(d_r: usize) -> Self {
        let r1 = (d_r - 1) as f64;
        StabilityConstants {
            c_const: 2.0 * r1,
            big_c_const: 2.0 * r1 + 1.0 + r1.sqrt(),
            xi: None,
            eta: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilityVerdict {
    pub regime: StabilityRegime,
    pub matrix_entries: Option<MatrixEntries>,
    pub spectral_radius: Option<f64>,
    /// Asymptotic bound on `B` of the variable-node output, when one applies.
    #[serde(rename = "asymptotic_B_bound")]
    pub asymptotic_b_bound: Option<f64>,
    pub constants: StabilityConstants,
    pub params: Option<SaturationParams>,
    pub notes: Vec<String>,
}

impl StabilityVerdict {
    fn bare(regime: StabilityRegime, d_r: usize) -> Self {
        StabilityVerdict {
            regime,
            matrix_entries: None,
            spectral_radius: None,
            asymptotic_b_bound: None,
            constants: StabilityConstants::for_check_degree(d_r.max(2)),
            params: None,
            notes: Vec::new(),
        }
    }
}

/// Flip rate `λ_v = p_K (1 - e^{-z+K}) / (1 - e^{-z})` applied to a message
/// whose pre-clip magnitude `z` reached the rail `K`.
pub fn flip_probability(z: f64, k: f64) -> Result<f64> {
    if !(k > 0.0) {
        return Err(Error::param("K", format!("must be positive, got {k}")));
    }
    if !(z >= k) {
        return Err(Error::param("z", format!("must be at least K = {k}, got {z}")));
    }
    let pk = symmetric_wrong_sign(k);
    if z.is_infinite() {
        return Ok(pk);
    }
    Ok(pk * (-(-(z - k)).exp_m1()) / (-(-z).exp_m1()))
}

/// Lower bounds on the probability that no variable node in a tree of
/// `n_vars` nodes flips: `(max(0, 1 - n e^{-K}), (1 - e^{-K})^n)`.
pub fn no_flip_probability_bound(k: f64, n_vars: u64) -> Result<(f64, f64)> {
    if n_vars == 0 {
        return Err(Error::param("n_vars", "must be at least 1"));
    }
    let e = (-k).exp();
    let n = n_vars as f64;
    Ok(((1.0 - n * e).max(0.0), (n * (-e).ln_1p()).exp()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SupportVerdict {
    EscapesBelow,
    Safe,
    Undecided,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SupportIteration {
    pub iterates: Vec<f64>,
    pub verdict: SupportVerdict,
}

/// Iterate the lower support edge `z_{k+1} = (d_l - 1) z_k - L`.
pub fn support_iteration(z0: f64, l: f64, d_l: usize, k_max: usize) -> Result<SupportIteration> {
    if d_l == 2 {
        return Err(Error::param("d_l", "degree two has no support fixed point; use degree_two_verdict"));
    }
    if d_l < 2 {
        return Err(Error::param("d_l", format!("must be at least 3, got {d_l}")));
    }
    if !(l > 0.0) {
        return Err(Error::param("L", format!("must be positive, got {l}")));
    }
    let mut iterates = vec![z0];
    if z0 >= l / (d_l - 2) as f64 {
        return Ok(SupportIteration {
            iterates,
            verdict: SupportVerdict::Safe,
        });
    }
    let mut z = z0;
    for _ in 0..k_max {
        z = (d_l - 1) as f64 * z - l;
        iterates.push(z);
        if z < 0.0 {
            return Ok(SupportIteration {
                iterates,
                verdict: SupportVerdict::EscapesBelow,
            });
        }
    }
    Ok(SupportIteration {
        iterates,
        verdict: SupportVerdict::Undecided,
    })
}

/// `Deg2Unstable` iff the ensemble has degree-two variable nodes and the
/// channel is not the BEC; otherwise `Inconclusive` (defer to the other tests).
pub fn degree_two_verdict(ens: &EnsembleSpec, kind: ChannelKind) -> StabilityVerdict {
    let d_r = ens.max_check_degree();
    let lambda2 = ens.lambda_of_degree(2);
    if lambda2 > 0.0 && kind != ChannelKind::Bec {
        let mut v = StabilityVerdict::bare(StabilityRegime::Deg2Unstable, d_r);
        v.notes.push(format!("λ2 = {lambda2} > 0 on a non-erasure channel"));
        v
    } else {
        StabilityVerdict::bare(StabilityRegime::Inconclusive, d_r)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NearStabilityDeg2 {
    pub eta: f64,
    /// `e^{-K/2} / (1 - η)` when the sufficient condition holds.
    pub floor_bound: Option<f64>,
}

pub fn near_stability_deg2(lambda2: f64, b_c: f64, rho_p1: f64, k: f64, xi: f64) -> Result<NearStabilityDeg2> {
    if !(xi > 0.0) {
        return Err(Error::param("xi", format!("must be positive, got {xi}")));
    }
    let eta = lambda2 * b_c * rho_p1 + (1.0 - lambda2) * b_c * rho_p1 * rho_p1 * xi;
    let e = (-k / 2.0).exp();
    let floor_bound = (eta < 1.0 && xi >= (2.0 - eta) / (1.0 - eta) * e).then(|| e / (1.0 - eta));
    Ok(NearStabilityDeg2 { eta, floor_bound })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NearStabilityDeg3 {
    pub xi: f64,
    /// `(2e^{-K/2}, 2ρ'(1)e^{-K/2})` when `2e^{-K/2} < ξ`.
    pub bounds: Option<(f64, f64)>,
}

/// `ξ` solving `λ3 B ρ'² ξ + (1-λ3) B ρ'³ ξ² = 1/2`; `None` if no positive root.
pub fn near_stability_deg3(lambda3: f64, b_c: f64, rho_p1: f64, k: f64) -> Result<Option<NearStabilityDeg3>> {
    if !(lambda3 > 0.0 && lambda3 <= 1.0) {
        return Err(Error::param("lambda3", format!("must lie in (0, 1], got {lambda3}")));
    }
    if !(b_c > 0.0) {
        return Err(Error::param("B_c", format!("must be positive, got {b_c}")));
    }
    let lin = lambda3 * b_c * rho_p1 * rho_p1;
    let quad = (1.0 - lambda3) * b_c * rho_p1.powi(3);
    let xi = if quad == 0.0 {
        if lin <= 0.0 {
            return Ok(None);
        }
        0.5 / lin
    } else {
        // positive root of quad ξ² + lin ξ - 1/2, in cancellation-free form
        1.0 / (lin + (lin * lin + 2.0 * quad).sqrt())
    };
    if !(xi > 0.0 && xi.is_finite()) {
        return Ok(None);
    }
    let e = (-k / 2.0).exp();
    let bounds = (2.0 * e < xi).then(|| (2.0 * e, 2.0 * rho_p1 * e));
    Ok(Some(NearStabilityDeg3 { xi, bounds }))
}

/// The four contraction coefficients at variable-node parameter `d`
/// (degree `d + 1`).
pub fn matrix_entries_at(k: f64, d_r: usize, d: usize, b_c: f64) -> MatrixEntries {
    let consts = StabilityConstants::for_check_degree(d_r);
    let (c, big_c) = (consts.c_const, consts.big_c_const);
    let r1 = (d_r - 1) as f64;
    let df = d as f64;
    let a = r1 * 2f64.powi(d as i32) * (2.0 * (-k / 2.0).exp()).powi((d / 2) as i32);
    let bd = b_c * df * (-(df - 1.0) * (k / 2.0 - c.ln())).exp() * r1 * big_c;
    let cc = (-(df / 2.0 - 1.0) * (k - c.ln())).exp()
        * ((df / 2.0) * (3.0 * std::f64::consts::E).ln()).exp()
        * (1.0 + 2.0 * d_r as f64)
        * 2.0
        * r1
        * (-k / 2.0).exp();
    MatrixEntries { a, b: bd, c: cc, d: bd }
}

/// 2x2 contraction test for minimum variable degree at least three.
/// `degrees` are variable-node degrees; each entry is maximized over them.
pub fn stability_matrix(params: &SaturationParams, degrees: &[usize], b_c: f64) -> Result<StabilityVerdict> {
    if degrees.is_empty() {
        return Err(Error::param("degrees", "empty"));
    }
    if let Some(&bad) = degrees.iter().find(|&&d| d < 3) {
        return Err(Error::param("degrees", format!("degree {bad} < 3; use degree_two_verdict")));
    }
    let mut m = MatrixEntries {
        a: 0.0,
        b: 0.0,
        c: 0.0,
        d: 0.0,
    };
    for &deg in degrees {
        let e = matrix_entries_at(params.k, params.d_r, deg - 1, b_c);
        m.a = m.a.max(e.a);
        m.b = m.b.max(e.b);
        m.c = m.c.max(e.c);
        m.d = m.d.max(e.d);
    }
    let radius = m.spectral_radius();
    let mut v = StabilityVerdict::bare(StabilityRegime::Inconclusive, params.d_r);
    if radius < 1.0 && params.conditions_hold() {
        v.regime = StabilityRegime::StableDeg3plus;
        v.asymptotic_b_bound = Some(2.0 * (-params.k / 2.0).exp());
    }
    if !params.cond_2kp_gt_k() {
        v.notes.push("2K' > K fails".into());
    }
    if !params.cond_channel() {
        v.notes.push(format!("channel support K'' = {} exceeds 2K' - K", params.k_dprime));
    }
    v.matrix_entries = Some(m);
    v.spectral_radius = Some(radius);
    v.params = Some(*params);
    Ok(v)
}

/// Spectral radius over a list of `K` values and the smallest scanned `K₀`
/// from which the radius stays below one.
pub fn scan_matrix_radius(d_r: usize, degrees: &[usize], b_c: f64, ks: &[f64]) -> Result<(Vec<(f64, f64)>, Option<f64>)> {
    let mut out = Vec::with_capacity(ks.len());
    for &k in ks {
        let p = SaturationParams::new(k, d_r, 0.0)?;
        let v = stability_matrix(&p, degrees, b_c)?;
        out.push((k, v.spectral_radius.unwrap()));
    }
    let k0 = out
        .iter()
        .rposition(|&(_, r)| r >= 1.0)
        .map_or(out.first().map(|p| p.0), |i| out.get(i + 1).map(|p| p.0));
    Ok((out, k0))
}

/// Combined verdict for an ensemble on a channel at saturation `K`.
pub fn analyze(ens: &EnsembleSpec, kind: ChannelKind, c: &QuantizedDensity, k: f64) -> Result<StabilityVerdict> {
    let d_r = ens.max_check_degree();
    let b_c = c.bhattacharyya();
    let rho_p1 = ens.rho_prime_one();
    let deg2 = degree_two_verdict(ens, kind);
    if deg2.regime == StabilityRegime::Deg2Unstable {
        return Ok(deg2);
    }
    let params = SaturationParams::new(k, d_r, channel_support_bound(c))?;
    let degrees: Vec<usize> = ens.var_degrees().iter().map(|&(d, _)| d).collect();
    if ens.min_var_degree() == 2 {
        let mut v = StabilityVerdict::bare(StabilityRegime::Inconclusive, d_r);
        v.params = Some(params);
        v.notes.push("degree-two nodes on the erasure channel: saturation leaves stability unchanged".into());
        return Ok(v);
    }
    let mut v = stability_matrix(&params, &degrees, b_c)?;
    if !ens.right_regular_degree().is_some() {
        v.notes.push("ensemble is not right-regular; d_r taken as the maximum check degree".into());
    }
    let lambda3 = ens.lambda_of_degree(3);
    if lambda3 > 0.0 && b_c > 0.0 {
        if let Some(ns) = near_stability_deg3(lambda3, b_c, rho_p1, k)? {
            v.constants.xi = Some(ns.xi);
            if v.regime != StabilityRegime::StableDeg3plus {
                if let Some((ba, _)) = ns.bounds {
                    v.regime = StabilityRegime::NearStableDeg3;
                    v.asymptotic_b_bound = Some(ba);
                }
            }
        }
    }
    Ok(v)
}

/// `(γ, p, (1-γ)B(m))` of `x` split at `magnitude`; without a magnitude the
/// whole density counts as interior.
fn rail_split(x: &QuantizedDensity, magnitude: Option<f64>) -> Result<(f64, f64, f64)> {
    match magnitude {
        Some(m) => {
            let d: SaturatedMassDecomposition = x.decompose(m)?;
            Ok((d.gamma, d.p, d.interior_bhattacharyya()))
        }
        None => Ok((0.0, 0.0, x.bhattacharyya())),
    }
}

/// Left- and right-hand side of one inequality.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub lhs: f64,
    pub rhs: f64,
    pub holds: bool,
}

impl Check {
    fn le(lhs: f64, rhs: f64, slack: f64) -> Self {
        Check {
            lhs,
            rhs,
            holds: lhs <= rhs + slack,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VcRow {
    pub iter: usize,
    /// `(γ, p, γ̄B(m))` of the check-node input `x_{ℓ-1}`.
    pub check_in: (f64, f64, f64),
    /// Same for the check-node output.
    pub check_out: (f64, f64, f64),
    /// Same for the variable-node output `x_ℓ`.
    pub var_out: (f64, f64, f64),
    #[serde(rename = "K_d")]
    pub k_d: Option<f64>,
    pub chk_wrong_rail: Check,
    pub chk_interior: Check,
    pub chk_p: Check,
    pub chk_kd_lower: Option<Check>,
    pub chk_kd_upper: Option<Check>,
    /// The variable-node bounds assume `B(b) <= 2ρ'(1)e^{-K/2}`.
    pub var_precondition: bool,
    pub var_interior: Option<Check>,
    pub var_wrong_rail: Option<Check>,
}

impl VcRow {
    pub fn violations(&self) -> usize {
        let checks = [
            Some(self.chk_wrong_rail),
            Some(self.chk_interior),
            Some(self.chk_p),
            self.chk_kd_lower,
            self.chk_kd_upper,
            self.var_interior,
            self.var_wrong_rail,
        ];
        checks.iter().flatten().filter(|c| !c.holds).count()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VcReport {
    pub params: SaturationParams,
    pub slack: f64,
    pub rows: Vec<VcRow>,
    pub violations: usize,
    pub notes: Vec<String>,
}

pub const VC_SLACK: f64 = 1e-9;

/// Check the node-level inequalities of the degree-three-plus stability
/// argument on every round of a DE trace recorded with densities.
pub fn verify_vc_inequalities(
    trace: &DeTrace,
    ens: &EnsembleSpec,
    c: &QuantizedDensity,
    params: &SaturationParams,
) -> Result<VcReport> {
    if trace.rounds.len() != trace.records.len() {
        return Err(Error::param("trace", "trace must be recorded with keep_densities"));
    }
    let d_r = ens
        .right_regular_degree()
        .ok_or_else(|| Error::param("ensemble", "inequalities are stated for right-regular ensembles"))?;
    if d_r != params.d_r {
        return Err(Error::param("d_r", format!("params use {} but ensemble has {d_r}", params.d_r)));
    }
    let slack = VC_SLACK;
    let k = params.k;
    let dc = (d_r - 1) as f64;
    let consts = StabilityConstants::for_check_degree(d_r);
    let (cc, big_c) = (consts.c_const, consts.big_c_const);
    let b_c = c.bhattacharyya();
    let rho_p1 = ens.rho_prime_one();
    let lambdas = ens.var_degrees();
    let start = QuantizedDensity::zero(c.grid());

    let mut rows = Vec::with_capacity(trace.rounds.len());
    for (i, DeRound { check_output, var_output }) in trace.rounds.iter().enumerate() {
        let input = if i == 0 { &start } else { &trace.rounds[i - 1].var_output };
        let (g_in, p_in, ib_in) = rail_split(input, Some(k))?;
        let (g_a, p_a, ib_a) = rail_split(var_output, Some(k))?;
        // the check output carries a rail only when its input does
        let k_d = if g_in > 0.0 { check_output.rail().map(|r| r.magnitude) } else { None };
        let (g_b, p_b, ib_b) = rail_split(check_output, k_d)?;

        let chk_wrong_rail = Check::le(g_b * p_b, dc * g_in * p_in, slack);
        let chk_interior = Check::le(ib_b, ib_in * (big_c * dc.powi(3) + dc), slack);
        let chk_p = Check::le(p_b, dc * p_in, slack);
        let (chk_kd_lower, chk_kd_upper) = match k_d {
            Some(kd) => (
                Some(Check::le(k - dc.ln(), kd, slack)),
                Some(Check::le(kd, k, slack)),
            ),
            _ => (None, None),
        };

        let var_precondition = check_output.bhattacharyya() <= 2.0 * rho_p1 * (-k / 2.0).exp();
        let (var_interior, var_wrong_rail) = if var_precondition {
            let (mut rhs_int, mut rhs_wrong) = (0.0, 0.0);
            for &(deg, w) in &lambdas {
                let d = (deg - 1) as f64;
                let lead = b_c * d * (-(d - 1.0) * (k / 2.0 - cc.ln())).exp() * ib_b;
                rhs_int += w
                    * (lead
                        + g_b * p_b
                            * (-(d / 2.0 - 1.0) * (k - cc.ln())).exp()
                            * ((d / 2.0) * (3.0 * std::f64::consts::E).ln()).exp()
                            * (1.0 + 2.0 * d_r as f64));
                rhs_wrong += w * ((-k / 2.0).exp() * lead + 2f64.powi(deg as i32 - 1) * (g_b * p_b).powi(((deg + 1) / 2) as i32));
            }
            (
                Some(Check::le(ib_a, rhs_int, slack)),
                Some(Check::le(g_a * p_a, rhs_wrong, slack)),
            )
        } else {
            (None, None)
        };

        rows.push(VcRow {
            iter: i + 1,
            check_in: (g_in, p_in, ib_in),
            check_out: (g_b, p_b, ib_b),
            var_out: (g_a, p_a, ib_a),
            k_d,
            chk_wrong_rail,
            chk_interior,
            chk_p,
            chk_kd_lower,
            chk_kd_upper,
            var_precondition,
            var_interior,
            var_wrong_rail,
        });
    }
    let violations = rows.iter().map(VcRow::violations).sum();
    let mut notes = vec![
        "check-degree symbol r read as d_r".to_string(),
        format!("c = {cc}, C = {big_c}"),
    ];
    if !params.conditions_hold() {
        notes.push("saturation preconditions (2K' > K, K'' <= 2K' - K) do not hold".into());
    }
    Ok(VcReport {
        params: *params,
        slack,
        rows,
        violations,
        notes,
    })
}

/// Nominal check-output rail `K ⊞ ... ⊞ K` over `d` inputs.
pub fn check_rail_magnitude(k: f64, d: usize) -> f64 {
    (1..d).fold(k, |acc, _| boxplus_magnitude(acc, k))
}
