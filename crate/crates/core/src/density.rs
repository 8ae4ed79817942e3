//! Quantized L-densities with exact atoms.
//!
//! A [`QuantizedDensity`] is a probability distribution of an LLR `Z`
//! (conditioned on the all-zero codeword) made of
//!
//! * point masses on a uniform grid `{-S, -S+δ, ..., S}`,
//! * an optional *rail*: a pair of exact atoms at `±R` for an arbitrary
//!   finite magnitude `R` (saturation rails, check-node rails, BSC atoms),
//! * atoms at `±∞`.
//!
//! Rails and infinite atoms are never smeared onto the grid. Values produced
//! off the grid by a convolution are split between the two neighbouring grid
//! points. Variable-node splits preserve mass and mean; check-node splits
//! preserve mass and the Bhattacharyya weight `e^{-x/2}`. Neither lets a
//! nonzero value collapse onto zero.
//!
//! Densities flagged symmetric satisfy `mass(-x) = e^{-x} mass(x)`. Operations
//! whose inputs are all symmetric re-impose that identity on the grid after
//! mass splitting, so the flag stays truthful.

use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::llr::{boxplus_magnitude, log1p_exp, one_minus_tanh_half, symmetric_wrong_sign};

/// Mass conservation tolerance.
pub const MASS_TOL: f64 = 1e-12;
/// Tolerance on the symmetry identity for densities flagged symmetric.
pub const SYMMETRY_TOL: f64 = 1e-9;

/// Uniform LLR grid `{-S, ..., S}` with spacing `δ`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Grid {
    spacing: f64,
    half_len: usize,
}

impl Default for Grid {
    fn default() -> Self {
        Grid {
            spacing: 1.0 / 16.0,
            half_len: 1024,
        }
    }
}

impl Grid {
    pub fn new(spacing: f64, support_bound: f64) -> Result<Self> {
        if !(spacing.is_finite() && spacing > 0.0) {
            return Err(Error::param("grid_spacing", format!("must be positive, got {spacing}")));
        }
        if !(support_bound.is_finite() && support_bound >= spacing) {
            return Err(Error::param(
                "support_bound",
                format!("must be at least the grid spacing, got {support_bound}"),
            ));
        }
        let ratio = support_bound / spacing;
        let half_len = ratio.round();
        if (ratio - half_len).abs() > 1e-9 * ratio.max(1.0) {
            return Err(Error::param(
                "support_bound",
                format!("{support_bound} is not a multiple of the spacing {spacing}"),
            ));
        }
        Ok(Grid {
            spacing,
            half_len: half_len as usize,
        })
    }

    pub fn spacing(&self) -> f64 {
        self.spacing
    }

    pub fn support_bound(&self) -> f64 {
        self.half_len as f64 * self.spacing
    }

    /// Number of grid points on each side of zero.
    pub fn half_len(&self) -> usize {
        self.half_len
    }

    /// Total number of grid points, `2N + 1`.
    pub fn len(&self) -> usize {
        2 * self.half_len + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// LLR value of storage index `i`.
    #[inline]
    pub fn value(&self, i: usize) -> f64 {
        (i as f64 - self.half_len as f64) * self.spacing
    }

    /// Grid step count of `x` if `x` lies on the grid (signed, zero at the center).
    pub fn steps_of(&self, x: f64) -> Option<i64> {
        if !x.is_finite() {
            return None;
        }
        let u = x / self.spacing;
        let r = u.round();
        if (u - r).abs() <= 1e-9 * u.abs().max(1.0) && r.abs() <= self.half_len as f64 {
            Some(r as i64)
        } else {
            None
        }
    }

    /// Storage index of an on-grid value.
    pub fn index_of(&self, x: f64) -> Result<usize> {
        self.steps_of(x)
            .map(|s| (s + self.half_len as i64) as usize)
            .ok_or(Error::OffGrid {
                value: x,
                spacing: self.spacing,
            })
    }

    fn check_same(&self, other: &Grid) -> Result<()> {
        if self == other {
            Ok(())
        } else {
            Err(Error::GridMismatch {
                a_spacing: self.spacing,
                a_support: self.support_bound(),
                b_spacing: other.spacing,
                b_support: other.support_bound(),
            })
        }
    }
}

/// Exact atoms at `-magnitude` (mass `neg`) and `+magnitude` (mass `pos`).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rail {
    pub magnitude: f64,
    pub neg: f64,
    pub pos: f64,
}

impl Rail {
    pub fn mass(&self) -> f64 {
        self.neg + self.pos
    }
}

/// An L-density on a uniform grid with exact rail and infinite atoms.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantizedDensity {
    grid: Grid,
    mass: Vec<f64>,
    rail: Option<Rail>,
    neg_inf: f64,
    pos_inf: f64,
    symmetric: bool,
}

impl QuantizedDensity {
    /// Unit atom at `z`, which must be a grid point or `±∞`.
    pub fn delta_at(grid: Grid, z: f64) -> Result<Self> {
        let mut d = Self::empty(grid);
        if z == f64::INFINITY {
            d.pos_inf = 1.0;
            d.symmetric = true;
        } else if z == f64::NEG_INFINITY {
            d.neg_inf = 1.0;
        } else {
            let i = grid.index_of(z)?;
            d.mass[i] = 1.0;
            d.symmetric = i == grid.half_len;
        }
        Ok(d)
    }

    /// `Δ_0`.
    pub fn zero(grid: Grid) -> Self {
        let mut d = Self::empty(grid);
        d.mass[grid.half_len] = 1.0;
        d.symmetric = true;
        d
    }

    /// `Δ_{+∞}`.
    pub fn perfect(grid: Grid) -> Self {
        let mut d = Self::empty(grid);
        d.pos_inf = 1.0;
        d.symmetric = true;
        d
    }

    /// `D(p, z) = p Δ_{-z} + (1-p) Δ_z`. A finite non-zero `z` becomes an
    /// exact rail and need not lie on the grid.
    pub fn two_atom(grid: Grid, p: f64, z: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::param("p", format!("must lie in [0,1], got {p}")));
        }
        if !(z >= 0.0) {
            return Err(Error::param("z", format!("must be non-negative, got {z}")));
        }
        let mut d = Self::empty(grid);
        if z == 0.0 {
            d.mass[grid.half_len] = 1.0;
            d.symmetric = true;
        } else if z.is_infinite() {
            d.neg_inf = p;
            d.pos_inf = 1.0 - p;
            d.symmetric = p == 0.0;
        } else {
            if z > grid.support_bound() {
                return Err(Error::param(
                    "z",
                    format!("{z} exceeds the support bound {}", grid.support_bound()),
                ));
            }
            d.rail = Some(Rail {
                magnitude: z,
                neg: p,
                pos: 1.0 - p,
            });
            d.symmetric = (p - symmetric_wrong_sign(z)).abs() <= 1e-12;
        }
        Ok(d)
    }

    /// Symmetric density from a distribution of `|Z|`: `magnitude_mass[k]` is
    /// the mass at `|Z| = kδ` (length at most `N + 1`), split between `±kδ`
    /// by the symmetry identity. `rail` adds `|Z| = R` mass, `pos_inf` adds
    /// mass at `+∞`. The total must be one.
    pub fn symmetric_from_magnitudes(
        grid: Grid,
        magnitude_mass: &[f64],
        rail: Option<(f64, f64)>,
        pos_inf: f64,
    ) -> Result<Self> {
        if magnitude_mass.len() > grid.half_len + 1 {
            return Err(Error::InvalidDensity(format!(
                "{} magnitudes exceed the grid half length {}",
                magnitude_mass.len(),
                grid.half_len + 1
            )));
        }
        let mut d = Self::empty(grid);
        let n = grid.half_len;
        for (k, &w) in magnitude_mass.iter().enumerate() {
            if k == 0 {
                d.mass[n] = w;
            } else {
                let (neg, pos) = symmetric_split(w, k as f64 * grid.spacing);
                d.mass[n + k] = pos;
                d.mass[n - k] = neg;
            }
        }
        if let Some((r, w)) = rail {
            if !(r > 0.0 && r <= grid.support_bound()) {
                return Err(Error::param("rail", format!("magnitude {r} outside (0, S]")));
            }
            let (neg, pos) = symmetric_split(w, r);
            d.rail = Some(Rail {
                magnitude: r,
                neg,
                pos,
            });
        }
        d.pos_inf = pos_inf;
        d.symmetric = true;
        d.validate()?;
        Ok(d)
    }

    /// Assemble a density from raw parts, validating all invariants.
    pub fn from_parts(
        grid: Grid,
        interior_mass: Vec<f64>,
        rail: Option<Rail>,
        neg_inf: f64,
        pos_inf: f64,
        symmetric: bool,
    ) -> Result<Self> {
        if interior_mass.len() != grid.len() {
            return Err(Error::InvalidDensity(format!(
                "interior mass has {} entries, grid has {}",
                interior_mass.len(),
                grid.len()
            )));
        }
        let d = QuantizedDensity {
            grid,
            mass: interior_mass,
            rail,
            neg_inf,
            pos_inf,
            symmetric,
        };
        d.validate()?;
        Ok(d)
    }

    fn empty(grid: Grid) -> Self {
        QuantizedDensity {
            grid,
            mass: vec![0.0; grid.len()],
            rail: None,
            neg_inf: 0.0,
            pos_inf: 0.0,
            symmetric: false,
        }
    }

    /// Check mass, sign and (when flagged) symmetry invariants.
    pub fn validate(&self) -> Result<()> {
        let all = self
            .mass
            .iter()
            .copied()
            .chain([self.neg_inf, self.pos_inf])
            .chain(self.rail.iter().flat_map(|r| [r.neg, r.pos]));
        for m in all {
            if !(m.is_finite() && m >= 0.0) {
                return Err(Error::InvalidDensity(format!("mass {m} is negative or not finite")));
            }
        }
        if let Some(r) = self.rail {
            if !(r.magnitude > 0.0 && r.magnitude.is_finite()) {
                return Err(Error::InvalidDensity(format!(
                    "rail magnitude {} must be finite and positive",
                    r.magnitude
                )));
            }
        }
        let total = self.total_mass();
        if (total - 1.0).abs() > MASS_TOL {
            return Err(Error::InvalidDensity(format!("total mass {total} differs from 1")));
        }
        if self.symmetric {
            let defect = self.symmetry_defect();
            if defect > SYMMETRY_TOL {
                return Err(Error::InvalidDensity(format!(
                    "flagged symmetric but the symmetry defect is {defect:e}"
                )));
            }
        }
        Ok(())
    }

    /// Largest violation of `mass(-x) = e^{-x} mass(x)` over grid points,
    /// the rail and the infinite atoms.
    pub fn symmetry_defect(&self) -> f64 {
        let n = self.grid.half_len;
        let mut worst = self.neg_inf;
        for k in 1..=n {
            let x = k as f64 * self.grid.spacing;
            let d = (self.mass[n - k] - (-x).exp() * self.mass[n + k]).abs();
            worst = worst.max(d);
        }
        if let Some(r) = self.rail {
            worst = worst.max((r.neg - (-r.magnitude).exp() * r.pos).abs());
        }
        worst
    }

    pub fn grid(&self) -> Grid {
        self.grid
    }

    pub fn interior_mass(&self) -> &[f64] {
        &self.mass
    }

    pub fn rail(&self) -> Option<Rail> {
        self.rail
    }

    /// Magnitude of the rail atoms, if any.
    pub fn saturation_k(&self) -> Option<f64> {
        self.rail.map(|r| r.magnitude)
    }

    pub fn neg_inf(&self) -> f64 {
        self.neg_inf
    }

    pub fn pos_inf(&self) -> f64 {
        self.pos_inf
    }

    pub fn is_symmetric(&self) -> bool {
        self.symmetric
    }

    pub fn total_mass(&self) -> f64 {
        self.grid_mass() + self.rail.map_or(0.0, |r| r.mass()) + self.neg_inf + self.pos_inf
    }

    /// Mass held by grid points.
    pub fn grid_mass(&self) -> f64 {
        self.mass.iter().sum()
    }

    /// Every point mass as `(value, mass)`, zero masses skipped.
    pub fn points(&self) -> Vec<(f64, f64)> {
        let mut out = Vec::new();
        if self.neg_inf > 0.0 {
            out.push((f64::NEG_INFINITY, self.neg_inf));
        }
        if let Some(r) = self.rail {
            if r.neg > 0.0 {
                out.push((-r.magnitude, r.neg));
            }
        }
        for (i, &m) in self.mass.iter().enumerate() {
            if m > 0.0 {
                out.push((self.grid.value(i), m));
            }
        }
        if let Some(r) = self.rail {
            if r.pos > 0.0 {
                out.push((r.magnitude, r.pos));
            }
        }
        if self.pos_inf > 0.0 {
            out.push((f64::INFINITY, self.pos_inf));
        }
        out.sort_by(|a, b| a.0.total_cmp(&b.0));
        out
    }

    /// Total-variation distance between two densities viewed as point-mass
    /// distributions (rails on a grid point coincide with that grid point).
    pub fn total_variation(&self, other: &QuantizedDensity) -> f64 {
        let mut acc: HashMap<u64, f64> = HashMap::new();
        let key = |x: f64| -> u64 {
            match self.grid.steps_of(x) {
                Some(s) => (s as f64 * self.grid.spacing).to_bits(),
                None => x.to_bits(),
            }
        };
        for (x, m) in self.points() {
            *acc.entry(key(x)).or_default() += m;
        }
        for (x, m) in other.points() {
            *acc.entry(key(x)).or_default() -= m;
        }
        0.5 * acc.values().map(|v| v.abs()).sum::<f64>()
    }

    /// Bhattacharyya functional `E[e^{-Z/2}]`; `+∞` if there is mass at `-∞`.
    pub fn bhattacharyya(&self) -> f64 {
        if self.neg_inf > 0.0 {
            return f64::INFINITY;
        }
        let mut b = 0.0;
        for (i, &m) in self.mass.iter().enumerate() {
            if m > 0.0 {
                b += m * (-0.5 * self.grid.value(i)).exp();
            }
        }
        if let Some(r) = self.rail {
            let h = 0.5 * r.magnitude;
            b += r.neg * h.exp() + r.pos * (-h).exp();
        }
        b
    }

    /// Entropy functional `E[log2(1 + e^{-Z})]`.
    pub fn entropy(&self) -> f64 {
        if self.neg_inf > 0.0 {
            return f64::INFINITY;
        }
        let f = |x: f64| log1p_exp(-x) / std::f64::consts::LN_2;
        let mut h = 0.0;
        for (i, &m) in self.mass.iter().enumerate() {
            if m > 0.0 {
                h += m * f(self.grid.value(i));
            }
        }
        if let Some(r) = self.rail {
            h += r.neg * f(-r.magnitude) + r.pos * f(r.magnitude);
        }
        h
    }

    /// Error probability `P{Z < 0} + ½ P{Z = 0}`.
    pub fn error_probability(&self) -> f64 {
        let n = self.grid.half_len;
        let neg: f64 = self.mass[..n].iter().sum();
        neg + 0.5 * self.mass[n] + self.rail.map_or(0.0, |r| r.neg) + self.neg_inf
    }

    /// Variable-node convolution `a ⊛ b`: the law of `Z_a + Z_b`.
    pub fn var_convolve(&self, other: &QuantizedDensity) -> Result<QuantizedDensity> {
        self.grid.check_same(&other.grid)?;
        let grid = self.grid;
        let n = grid.half_len;
        let mut acc = Accumulator::new(grid);

        // grid x grid: exact on the (wider) grid, then folded at ±S
        let a_nz = nonzero_range(&self.mass);
        let b_nz = nonzero_range(&other.mass);
        if let (Some((al, ah)), Some((bl, bh))) = (a_nz, b_nz) {
            let mut wide = vec![0.0; 4 * n + 1];
            let b_slice = &other.mass[bl..=bh];
            for i in al..=ah {
                let ma = self.mass[i];
                if ma == 0.0 {
                    continue;
                }
                let out = &mut wide[i + bl..=i + bh];
                for (o, &mb) in out.iter_mut().zip(b_slice) {
                    *o += ma * mb;
                }
            }
            // wide index w has value (w - 2n) δ
            for (w, &m) in wide.iter().enumerate() {
                if m == 0.0 {
                    continue;
                }
                let s = w as i64 - 2 * n as i64;
                if s.unsigned_abs() as usize > n {
                    acc.overflow += m;
                    let idx = if s < 0 { 0 } else { 2 * n };
                    acc.mass[idx] += m;
                } else {
                    acc.mass[(s + n as i64) as usize] += m;
                }
            }
        }

        // rail x grid, grid x rail
        for (ra, dens) in [(self.rail, other), (other.rail, self)] {
            let Some(r) = ra else { continue };
            for (i, &m) in dens.mass.iter().enumerate() {
                if m == 0.0 {
                    continue;
                }
                if i == n {
                    acc.add_rail(r.magnitude, r.neg * m, r.pos * m);
                } else {
                    let steps = i as f64 - n as f64;
                    acc.add_steps(steps + r.magnitude / grid.spacing, r.pos * m);
                    acc.add_steps(steps - r.magnitude / grid.spacing, r.neg * m);
                }
            }
        }

        // rail x rail
        if let (Some(ra), Some(rb)) = (self.rail, other.rail) {
            let sum = ra.magnitude + rb.magnitude;
            let diff = ra.magnitude - rb.magnitude;
            acc.add_value(sum, ra.pos * rb.pos);
            acc.add_value(-sum, ra.neg * rb.neg);
            acc.add_value(diff, ra.pos * rb.neg);
            acc.add_value(-diff, ra.neg * rb.pos);
        }

        // infinite atoms absorb every finite value; +∞ + (-∞) resolves to 0
        let fin_a = 1.0 - self.neg_inf - self.pos_inf;
        let fin_b = 1.0 - other.neg_inf - other.pos_inf;
        acc.pos_inf += self.pos_inf * (fin_b + other.pos_inf) + fin_a * other.pos_inf;
        acc.neg_inf += self.neg_inf * (fin_b + other.neg_inf) + fin_a * other.neg_inf;
        acc.mass[n] += self.pos_inf * other.neg_inf + self.neg_inf * other.pos_inf;

        Ok(acc.finish(self.symmetric && other.symmetric, None, None))
    }

    /// Check-node convolution `a ⊠ b`: the law of
    /// `2 atanh(tanh(Z_a/2) tanh(Z_b/2))`.
    pub fn chk_convolve(&self, other: &QuantizedDensity) -> Result<QuantizedDensity> {
        self.grid.check_same(&other.grid)?;
        let grid = self.grid;
        let n = grid.half_len;
        let table = check_table(grid);
        let mut acc = Accumulator::new(grid);

        // magnitude-indexed outputs
        let mut out_pos = vec![0.0; n + 2];
        let mut out_neg = vec![0.0; n + 2];

        let (ap, an) = split_signs(&self.mass, n);
        let (bp, bn) = split_signs(&other.mass, n);
        let a0 = self.mass[n];
        let b0 = other.mass[n];

        // anything combined with zero is zero
        let zero_mass = a0 + b0 * (1.0 - a0);

        let b_idx: Vec<usize> = (1..=n).filter(|&j| bp[j] != 0.0 || bn[j] != 0.0).collect();
        for i in 1..=n {
            let (pa, na) = (ap[i], an[i]);
            if pa == 0.0 && na == 0.0 {
                continue;
            }
            let row = i * (n + 1);
            for &j in &b_idx {
                let (pb, nb) = (bp[j], bn[j]);
                let same = pa * pb + na * nb;
                let opp = pa * nb + na * pb;
                let k = table.index[row + j] as usize;
                let (tp, tn) = (table.frac_pos[row + j], table.frac_neg[row + j]);
                out_pos[k] += same * (1.0 - tp);
                out_pos[k + 1] += same * tp;
                out_neg[k] += opp * (1.0 - tn);
                out_neg[k + 1] += opp * tn;
            }
        }

        // grid x rail
        for (ra, (p, q)) in [(other.rail, (&ap, &an)), (self.rail, (&bp, &bn))] {
            let Some(r) = ra else { continue };
            for i in 1..=n {
                let (pi, ni) = (p[i], q[i]);
                if pi == 0.0 && ni == 0.0 {
                    continue;
                }
                let y = boxplus_magnitude(i as f64 * grid.spacing, r.magnitude) / grid.spacing;
                let (k, tp, tn) = check_split(y, i as f64, grid.spacing);
                let same = pi * r.pos + ni * r.neg;
                let opp = pi * r.neg + ni * r.pos;
                out_pos[k] += same * (1.0 - tp);
                out_pos[k + 1] += same * tp;
                out_neg[k] += opp * (1.0 - tn);
                out_neg[k + 1] += opp * tn;
            }
        }

        // grid x ±∞ keeps the grid value, sign multiplied
        for i in 1..=n {
            out_pos[i] += ap[i] * other.pos_inf + an[i] * other.neg_inf;
            out_neg[i] += ap[i] * other.neg_inf + an[i] * other.pos_inf;
            out_pos[i] += bp[i] * self.pos_inf + bn[i] * self.neg_inf;
            out_neg[i] += bp[i] * self.neg_inf + bn[i] * self.pos_inf;
        }

        // rails
        let mut out_rail: Option<f64> = None;
        if let (Some(ra), Some(rb)) = (self.rail, other.rail) {
            let m = boxplus_magnitude(ra.magnitude, rb.magnitude);
            out_rail = Some(m);
            acc.add_rail(
                m,
                ra.pos * rb.neg + ra.neg * rb.pos,
                ra.pos * rb.pos + ra.neg * rb.neg,
            );
        }
        for (ra, d) in [(self.rail, other), (other.rail, self)] {
            if let Some(r) = ra {
                acc.add_rail(
                    r.magnitude,
                    r.pos * d.neg_inf + r.neg * d.pos_inf,
                    r.pos * d.pos_inf + r.neg * d.neg_inf,
                );
            }
        }
        acc.pos_inf += self.pos_inf * other.pos_inf + self.neg_inf * other.neg_inf;
        acc.neg_inf += self.pos_inf * other.neg_inf + self.neg_inf * other.pos_inf;

        // Interior outputs of two densities in saturated form lie strictly
        // below the output rail; keep the split from crossing it.
        if let (Some(r), true, true) = (out_rail, self.grid_below_rail(), other.grid_below_rail()) {
            let first_bad = (r / grid.spacing).ceil() as usize;
            if first_bad >= 2 && first_bad <= n + 1 {
                for arr in [&mut out_pos, &mut out_neg] {
                    let moved: f64 = arr[first_bad..].iter().sum();
                    arr[first_bad..].iter_mut().for_each(|v| *v = 0.0);
                    arr[first_bad - 1] += moved;
                }
            }
        }

        acc.mass[n] += zero_mass + out_pos[0] + out_neg[0];
        for k in 1..=n {
            acc.mass[n + k] += out_pos[k];
            acc.mass[n - k] += out_neg[k];
        }
        debug_assert!(out_pos[n + 1] == 0.0 && out_neg[n + 1] == 0.0);

        Ok(acc.finish(self.symmetric && other.symmetric, None, out_rail))
    }

    /// True when the density has a rail, no infinite atoms, and every grid
    /// mass lies strictly inside `(-R, R)`.
    fn grid_below_rail(&self) -> bool {
        let Some(r) = self.rail else { return false };
        if self.neg_inf > 0.0 || self.pos_inf > 0.0 {
            return false;
        }
        let n = self.grid.half_len;
        self.mass.iter().enumerate().all(|(i, &m)| {
            m == 0.0 || ((i as f64 - n as f64).abs() * self.grid.spacing) < r.magnitude
        })
    }

    /// Saturation `⌊·⌋_K`: mass with `|x| ≥ K` (infinite atoms included) moves
    /// to exact atoms at `±K`; mass inside `(-K, K)` is untouched.
    pub fn saturate(&self, k: f64) -> Result<QuantizedDensity> {
        let steps = self.saturation_steps(k)?;
        let n = self.grid.half_len;
        let mut acc = Accumulator::new(self.grid);
        let (mut neg, mut pos) = (self.neg_inf, self.pos_inf);
        for (i, &m) in self.mass.iter().enumerate() {
            let s = i as i64 - n as i64;
            if s >= steps {
                pos += m;
            } else if s <= -steps {
                neg += m;
            } else {
                acc.mass[i] += m;
            }
        }
        if let Some(r) = self.rail {
            if r.magnitude >= k {
                neg += r.neg;
                pos += r.pos;
            } else {
                acc.add_rail(r.magnitude, r.neg, r.pos);
            }
        }
        // an existing inner rail stays exact when nothing reaches the rail
        let moved = neg + pos > 0.0;
        if moved {
            acc.add_rail(k, neg, pos);
        }
        // symmetry survives only if no mass actually changed position
        let untouched = self.neg_inf == 0.0
            && self.pos_inf == 0.0
            && self.rail.map_or(true, |r| r.magnitude <= k)
            && self.mass.iter().enumerate().all(|(i, &m)| {
                m == 0.0 || (i as i64 - n as i64).abs() <= steps
            });
        Ok(acc.finish(self.symmetric && untouched, moved.then_some(k), None))
    }

    /// Symmetric saturation: `γ D(p, K) + a·1{|x| < K}` with
    /// `p = e^{-K}/(1+e^{-K})` and `γ = P{|x| ≥ K}`.
    pub fn saturate_sym(&self, k: f64) -> Result<QuantizedDensity> {
        if !self.symmetric {
            return Err(Error::NotSymmetric);
        }
        let steps = self.saturation_steps(k)?;
        let n = self.grid.half_len;
        let mut acc = Accumulator::new(self.grid);
        let mut gamma = self.neg_inf + self.pos_inf;
        for (i, &m) in self.mass.iter().enumerate() {
            let s = i as i64 - n as i64;
            if s.abs() >= steps {
                gamma += m;
            } else {
                acc.mass[i] += m;
            }
        }
        if let Some(r) = self.rail {
            if r.magnitude >= k {
                gamma += r.mass();
            } else {
                acc.add_rail(r.magnitude, r.neg, r.pos);
            }
        }
        let p = symmetric_wrong_sign(k);
        if gamma > 0.0 {
            acc.add_rail(k, gamma * p, gamma * (1.0 - p));
        }
        Ok(acc.finish(true, (gamma > 0.0).then_some(k), None))
    }

    fn saturation_steps(&self, k: f64) -> Result<i64> {
        if !(k > 0.0) {
            return Err(Error::param("K", format!("must be positive, got {k}")));
        }
        self.grid.steps_of(k).ok_or(Error::OffGrid {
            value: k,
            spacing: self.grid.spacing,
        })
    }

    /// Wasserstein distance between the `|D|` distributions,
    /// `∫_0^1 |A(z) - B(z)| dz` with `A`, `B` the CDFs of `|tanh(Z/2)|`.
    pub fn wasserstein(&self, other: &QuantizedDensity) -> Result<f64> {
        if !self.symmetric || !other.symmetric {
            return Err(Error::NotSymmetric);
        }
        // (magnitude, mass in self, mass in other)
        let mut pts: Vec<(f64, f64, f64)> = Vec::new();
        for (d, slot) in [(self, 0usize), (other, 1usize)] {
            let n = d.grid.half_len;
            for k in 0..=n {
                let w = if k == 0 {
                    d.mass[n]
                } else {
                    d.mass[n + k] + d.mass[n - k]
                };
                if w > 0.0 {
                    pts.push(with_slot(k as f64 * d.grid.spacing, w, slot));
                }
            }
            if let Some(r) = d.rail {
                if r.mass() > 0.0 {
                    pts.push(with_slot(r.magnitude, r.mass(), slot));
                }
            }
            let inf = d.pos_inf + d.neg_inf;
            if inf > 0.0 {
                pts.push(with_slot(f64::INFINITY, inf, slot));
            }
        }
        pts.sort_by(|a, b| a.0.total_cmp(&b.0));
        let (mut fa, mut fb) = (0.0f64, 0.0f64);
        let mut prev_u = 1.0; // u = 1 - tanh(x/2); z = 0 at x = 0
        let mut dist = 0.0;
        for (x, ma, mb) in pts {
            let u = one_minus_tanh_half(x);
            dist += (fa - fb).abs() * (prev_u - u);
            fa += ma;
            fb += mb;
            prev_u = u;
        }
        dist += (fa - fb).abs() * prev_u;
        Ok(dist.clamp(0.0, 1.0))
    }

    /// Split off the rail at `magnitude`: `a = γ D(p, magnitude) + (1-γ) m`.
    pub fn decompose(&self, magnitude: f64) -> Result<SaturatedMassDecomposition> {
        if !(magnitude > 0.0 && magnitude.is_finite()) {
            return Err(Error::param("magnitude", format!("must be finite and positive, got {magnitude}")));
        }
        if self.neg_inf > 0.0 || self.pos_inf > 0.0 {
            return Err(Error::Decomposition("density has mass at ±∞".into()));
        }
        let n = self.grid.half_len;
        for (i, &m) in self.mass.iter().enumerate() {
            if m == 0.0 {
                continue;
            }
            let x = (i as f64 - n as f64).abs() * self.grid.spacing;
            if x > magnitude * (1.0 + 1e-12) {
                return Err(Error::Decomposition(format!(
                    "grid mass {m:e} at |x| = {x} lies outside [-{magnitude}, {magnitude}]"
                )));
            }
            if (x - magnitude).abs() <= 1e-12 * magnitude {
                return Err(Error::Decomposition(format!(
                    "grid mass {m:e} sits at |x| = {magnitude}; rail atoms must be explicit"
                )));
            }
        }
        let rail_here = self
            .rail
            .filter(|r| (r.magnitude - magnitude).abs() <= 1e-12 * magnitude);
        if let Some(r) = self.rail {
            if rail_here.is_none() && r.magnitude > magnitude {
                return Err(Error::Decomposition(format!(
                    "rail at {} lies outside [-{magnitude}, {magnitude}]",
                    r.magnitude
                )));
            }
        }
        let gamma = rail_here.map_or(0.0, |r| r.mass());
        if gamma == 0.0 {
            return Ok(SaturatedMassDecomposition {
                gamma: 0.0,
                p: 0.0,
                magnitude,
                residual: self.clone(),
            });
        }
        let r = rail_here.unwrap();
        let p = r.neg / gamma;
        let rest = 1.0 - gamma;
        let residual = if rest <= 0.0 {
            QuantizedDensity::zero(self.grid)
        } else {
            let mut m = self.clone();
            m.rail = None;
            for v in m.mass.iter_mut() {
                *v /= rest;
            }
            renormalize(&mut m);
            m
        };
        Ok(SaturatedMassDecomposition {
            gamma,
            p,
            magnitude,
            residual,
        })
    }

    /// Convex mixture `Σ w_i a_i`. Weights must be non-negative and sum to one.
    pub fn mix(components: &[(f64, &QuantizedDensity)]) -> Result<QuantizedDensity> {
        let first = components
            .first()
            .ok_or_else(|| Error::param("components", "empty mixture"))?
            .1;
        let grid = first.grid;
        let wsum: f64 = components.iter().map(|c| c.0).sum();
        if (wsum - 1.0).abs() > 1e-12 || components.iter().any(|c| c.0 < 0.0) {
            return Err(Error::param("weights", format!("must be non-negative and sum to 1, got {wsum}")));
        }
        let mut acc = Accumulator::new(grid);
        let mut symmetric = true;
        for &(w, d) in components {
            grid.check_same(&d.grid)?;
            if w == 0.0 {
                continue;
            }
            symmetric &= d.symmetric;
            for (o, &m) in acc.mass.iter_mut().zip(&d.mass) {
                *o += w * m;
            }
            if let Some(r) = d.rail {
                acc.add_rail(r.magnitude, w * r.neg, w * r.pos);
            }
            acc.neg_inf += w * d.neg_inf;
            acc.pos_inf += w * d.pos_inf;
        }
        Ok(acc.finish(symmetric, None, None))
    }
}

fn with_slot(x: f64, w: f64, slot: usize) -> (f64, f64, f64) {
    if slot == 0 {
        (x, w, 0.0)
    } else {
        (x, 0.0, w)
    }
}

/// Masses `(neg, pos)` of a symmetric pair at magnitude `x` carrying total `w`.
fn symmetric_split(w: f64, x: f64) -> (f64, f64) {
    let p = symmetric_wrong_sign(x);
    (w * p, w * (1.0 - p))
}

fn split_signs(mass: &[f64], n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut pos = vec![0.0; n + 1];
    let mut neg = vec![0.0; n + 1];
    for k in 1..=n {
        pos[k] = mass[n + k];
        neg[k] = mass[n - k];
    }
    (pos, neg)
}

fn nonzero_range(v: &[f64]) -> Option<(usize, usize)> {
    let lo = v.iter().position(|&m| m != 0.0)?;
    let hi = v.iter().rposition(|&m| m != 0.0)?;
    Some((lo, hi))
}

fn renormalize(d: &mut QuantizedDensity) {
    let total = d.total_mass();
    if total > 0.0 && total != 1.0 {
        let s = 1.0 / total;
        d.mass.iter_mut().for_each(|m| *m *= s);
        if let Some(r) = d.rail.as_mut() {
            r.neg *= s;
            r.pos *= s;
        }
        d.neg_inf *= s;
        d.pos_inf *= s;
    }
}

/// Output buffer shared by the density operations.
struct Accumulator {
    grid: Grid,
    mass: Vec<f64>,
    rails: Vec<Rail>,
    neg_inf: f64,
    pos_inf: f64,
    overflow: f64,
}

impl Accumulator {
    fn new(grid: Grid) -> Self {
        Accumulator {
            grid,
            mass: vec![0.0; grid.len()],
            rails: Vec::new(),
            neg_inf: 0.0,
            pos_inf: 0.0,
            overflow: 0.0,
        }
    }

    fn add_rail(&mut self, magnitude: f64, neg: f64, pos: f64) {
        if neg == 0.0 && pos == 0.0 {
            return;
        }
        if let Some(r) = self.rails.iter_mut().find(|r| r.magnitude == magnitude) {
            r.neg += neg;
            r.pos += pos;
        } else {
            self.rails.push(Rail { magnitude, neg, pos });
        }
    }

    fn add_value(&mut self, x: f64, w: f64) {
        self.add_steps(x / self.grid.spacing, w);
    }

    /// Add mass `w` at position `u` grid steps from zero, splitting between
    /// neighbours (mass and mean preserved) and folding beyond `±S`.
    fn add_steps(&mut self, u: f64, w: f64) {
        if w == 0.0 {
            return;
        }
        let n = self.grid.half_len as f64;
        if u >= n {
            if u > n {
                self.overflow += w;
            }
            self.mass[2 * self.grid.half_len] += w;
            return;
        }
        if u <= -n {
            if u < -n {
                self.overflow += w;
            }
            self.mass[0] += w;
            return;
        }
        if u != 0.0 && u.abs() < 1.0 {
            self.mass[(n + u.signum()) as usize] += w;
            return;
        }
        let p = u + n;
        let k = p.floor();
        let t = p - k;
        let k = k as usize;
        if t == 0.0 {
            self.mass[k] += w;
        } else {
            self.mass[k] += w * (1.0 - t);
            self.mass[k + 1] += w * t;
        }
    }

    /// Resolve rails (keeping `keep`, or else the heaviest one), re-impose
    /// symmetry on the grid when requested, and renormalize.
    fn finish(mut self, symmetric: bool, keep: Option<f64>, prefer: Option<f64>) -> QuantizedDensity {
        let rails = std::mem::take(&mut self.rails);
        let chosen = match keep.or(prefer) {
            Some(k) => rails.iter().position(|r| r.magnitude == k),
            None => None,
        }
        .or_else(|| {
            if keep.is_some() {
                None
            } else {
                rails
                    .iter()
                    .enumerate()
                    .max_by(|a, b| a.1.mass().total_cmp(&b.1.mass()))
                    .map(|(i, _)| i)
            }
        });
        let mut rail = None;
        for (i, r) in rails.into_iter().enumerate() {
            if Some(i) == chosen {
                rail = Some(r);
            } else {
                log::trace!("folding rail at {} (mass {:e}) onto the grid", r.magnitude, r.mass());
                self.add_value(r.magnitude, r.pos);
                self.add_value(-r.magnitude, r.neg);
            }
        }
        if self.overflow > 0.0 {
            log::debug!("folded {:e} of mass beyond the support bound", self.overflow);
        }
        let mut d = QuantizedDensity {
            grid: self.grid,
            mass: self.mass,
            rail,
            neg_inf: self.neg_inf,
            pos_inf: self.pos_inf,
            symmetric,
        };
        if symmetric {
            symmetrize_grid(&mut d);
        }
        renormalize(&mut d);
        d
    }
}

/// Redistribute each `|x|` bin between `±x` by the symmetry identity.
fn symmetrize_grid(d: &mut QuantizedDensity) {
    let n = d.grid.half_len;
    for k in 1..=n {
        let w = d.mass[n + k] + d.mass[n - k];
        let (neg, pos) = symmetric_split(w, k as f64 * d.grid.spacing);
        d.mass[n + k] = pos;
        d.mass[n - k] = neg;
    }
    if let Some(r) = d.rail.as_mut() {
        let (neg, pos) = symmetric_split(r.mass(), r.magnitude);
        r.neg = neg;
        r.pos = pos;
    }
    // -∞ cannot carry mass in a symmetric density
    d.pos_inf += d.neg_inf;
    d.neg_inf = 0.0;
}

/// Decomposition `γ D(p, magnitude) + (1-γ) m` of a density whose mass lies
/// in `[-magnitude, magnitude]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SaturatedMassDecomposition {
    /// Rail mass fraction.
    pub gamma: f64,
    /// Wrong-sign share of the rail mass.
    pub p: f64,
    pub magnitude: f64,
    /// Interior part, total mass one.
    pub residual: QuantizedDensity,
}

impl SaturatedMassDecomposition {
    pub fn reconstruct(&self) -> Result<QuantizedDensity> {
        let rail = QuantizedDensity::two_atom(self.residual.grid, self.p, self.magnitude)?;
        if self.gamma == 0.0 {
            return Ok(self.residual.clone());
        }
        if self.gamma >= 1.0 {
            return Ok(rail);
        }
        let mut acc = Accumulator::new(self.residual.grid);
        let w = 1.0 - self.gamma;
        for (o, &m) in acc.mass.iter_mut().zip(&self.residual.mass) {
            *o = w * m;
        }
        if let Some(r) = self.residual.rail {
            acc.add_rail(r.magnitude, w * r.neg, w * r.pos);
        }
        acc.add_rail(self.magnitude, self.gamma * self.p, self.gamma * (1.0 - self.p));
        acc.neg_inf = w * self.residual.neg_inf;
        acc.pos_inf = w * self.residual.pos_inf;
        let sym = self.residual.symmetric && (self.p - symmetric_wrong_sign(self.magnitude)).abs() <= 1e-12;
        Ok(acc.finish(sym, Some(self.magnitude), None))
    }

    /// `γ p`, the wrong-sign rail mass.
    pub fn wrong_rail_mass(&self) -> f64 {
        self.gamma * self.p
    }

    /// `(1-γ) B(m)`, the Bhattacharyya contribution of the interior.
    pub fn interior_bhattacharyya(&self) -> f64 {
        if self.gamma >= 1.0 {
            0.0
        } else {
            (1.0 - self.gamma) * self.residual.bhattacharyya()
        }
    }
}

/// Precomputed check-node magnitudes `boxplus(iδ, jδ)` for grid-index pairs.
struct CheckTable {
    index: Vec<u32>,
    frac_pos: Vec<f64>,
    frac_neg: Vec<f64>,
}

/// Split of a check-node output magnitude `y` (in grid steps, `y <= cap`)
/// into `(k, t_pos, t_neg)`: mass `1 - t` at `k`, `t` at `k + 1`. The weights
/// keep `e^{-x/2}` exact for positive outputs and `e^{x/2}` for negative ones;
/// a nonzero magnitude never lands on zero.
fn check_split(y: f64, cap: f64, spacing: f64) -> (usize, f64, f64) {
    if y >= cap {
        return (cap as usize, 0.0, 0.0);
    }
    if y > 0.0 && y < 1.0 {
        return (1, 0.0, 0.0);
    }
    let k = y.floor();
    let f = y - k;
    if f < 1e-12 {
        return (k as usize, 0.0, 0.0);
    }
    let h = 0.5 * spacing;
    let tp = (-f * h).exp_m1() / (-h).exp_m1();
    let tn = (f * h).exp_m1() / h.exp_m1();
    (k as usize, tp, tn)
}

fn check_table(grid: Grid) -> Arc<CheckTable> {
    static CACHE: OnceLock<Mutex<HashMap<(u64, usize), Arc<CheckTable>>>> = OnceLock::new();
    let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
    let key = (grid.spacing.to_bits(), grid.half_len);
    if let Some(t) = cache.lock().unwrap().get(&key) {
        return t.clone();
    }
    let n = grid.half_len;
    let mut index = vec![0u32; (n + 1) * (n + 1)];
    let mut frac_pos = vec![0.0; (n + 1) * (n + 1)];
    let mut frac_neg = vec![0.0; (n + 1) * (n + 1)];
    for i in 0..=n {
        for j in i..=n {
            let y = boxplus_magnitude(i as f64 * grid.spacing, j as f64 * grid.spacing) / grid.spacing;
            let (k, tp, tn) = check_split(y, i as f64, grid.spacing);
            for (a, b) in [(i, j), (j, i)] {
                index[a * (n + 1) + b] = k as u32;
                frac_pos[a * (n + 1) + b] = tp;
                frac_neg[a * (n + 1) + b] = tn;
            }
        }
    }
    let t = Arc::new(CheckTable { index, frac_pos, frac_neg });
    cache.lock().unwrap().insert(key, t.clone());
    t
}

#[derive(Serialize, Deserialize)]
struct AtomsWire {
    neg_sat: f64,
    pos_sat: f64,
    neg_inf: f64,
    pos_inf: f64,
}

#[derive(Serialize, Deserialize)]
struct DensityWire {
    grid_spacing: f64,
    support_bound: f64,
    interior_mass: Vec<f64>,
    atoms: AtomsWire,
    #[serde(rename = "saturation_K")]
    saturation_k: Option<f64>,
    symmetric_flag: bool,
}

impl Serialize for QuantizedDensity {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        DensityWire {
            grid_spacing: self.grid.spacing,
            support_bound: self.grid.support_bound(),
            interior_mass: self.mass.clone(),
            atoms: AtomsWire {
                neg_sat: self.rail.map_or(0.0, |r| r.neg),
                pos_sat: self.rail.map_or(0.0, |r| r.pos),
                neg_inf: self.neg_inf,
                pos_inf: self.pos_inf,
            },
            saturation_k: self.rail.map(|r| r.magnitude),
            symmetric_flag: self.symmetric,
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for QuantizedDensity {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        use serde::de::Error as _;
        let w = DensityWire::deserialize(d)?;
        let grid = Grid::new(w.grid_spacing, w.support_bound).map_err(D::Error::custom)?;
        let rail = match w.saturation_k {
            Some(magnitude) => Some(Rail {
                magnitude,
                neg: w.atoms.neg_sat,
                pos: w.atoms.pos_sat,
            }),
            None if w.atoms.neg_sat != 0.0 || w.atoms.pos_sat != 0.0 => {
                return Err(D::Error::custom("rail atoms present without saturation_K"));
            }
            None => None,
        };
        QuantizedDensity::from_parts(grid, w.interior_mass, rail, w.atoms.neg_inf, w.atoms.pos_inf, w.symmetric_flag)
            .map_err(D::Error::custom)
    }
}
