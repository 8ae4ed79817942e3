#![allow(dead_code)]

use rand::Rng;
use satde::{Grid, QuantizedDensity, Rail};

/// Random symmetric density: a few grid magnitudes, optionally an exact rail
/// beyond `min_rail` and mass at `+∞`.
pub fn random_symmetric<R: Rng>(rng: &mut R, grid: Grid, min_rail: f64) -> QuantizedDensity {
    let n = grid.half_len();
    let mut mags = vec![0.0; n + 1];
    let atoms = rng.gen_range(1..=8);
    for _ in 0..atoms {
        // favour small magnitudes, where the functionals vary most
        let u: f64 = rng.gen();
        let k = ((u * u) * n as f64) as usize;
        mags[k] += rng.gen::<f64>();
    }
    let mut rail = None;
    if rng.gen_bool(0.4) {
        let r = rng.gen_range(min_rail..grid.support_bound());
        rail = Some((r, rng.gen::<f64>()));
    }
    let mut inf = if rng.gen_bool(0.3) { rng.gen::<f64>() } else { 0.0 };
    let total: f64 = mags.iter().sum::<f64>() + rail.map_or(0.0, |r| r.1) + inf;
    mags.iter_mut().for_each(|m| *m /= total);
    let rail = rail.map(|(r, w)| (r, w / total));
    inf /= total;
    QuantizedDensity::symmetric_from_magnitudes(grid, &mags, rail, inf).expect("valid symmetric density")
}

/// Random density with no symmetry constraint. Negative grid support is kept
/// within `[-4, 0)` so that `B` stays of order one.
pub fn random_density<R: Rng>(rng: &mut R, grid: Grid) -> QuantizedDensity {
    let mut mass = vec![0.0; grid.len()];
    let n = grid.half_len();
    let lo = n - (4.0 / grid.spacing()).round() as usize;
    let atoms = rng.gen_range(1..=8);
    for _ in 0..atoms {
        let i = rng.gen_range(lo..grid.len());
        mass[i] += rng.gen::<f64>();
    }
    let rail = rng.gen_bool(0.4).then(|| {
        let neg = if rng.gen_bool(0.5) { rng.gen::<f64>() } else { 0.0 };
        let top = if neg > 0.0 { 4.0 } else { grid.support_bound() };
        Rail { magnitude: rng.gen_range(0.1..top), neg, pos: rng.gen::<f64>() }
    });
    let neg_inf = if rng.gen_bool(0.2) { 0.2 * rng.gen::<f64>() } else { 0.0 };
    let pos_inf = if rng.gen_bool(0.3) { rng.gen::<f64>() } else { 0.0 };
    let total = mass.iter().sum::<f64>() + rail.map_or(0.0, |r| r.mass()) + neg_inf + pos_inf;
    mass.iter_mut().for_each(|m| *m /= total);
    let rail = rail.map(|r| Rail {
        magnitude: r.magnitude,
        neg: r.neg / total,
        pos: r.pos / total,
    });
    QuantizedDensity::from_parts(grid, mass, rail, neg_inf / total, pos_inf / total, false)
        .expect("valid density")
}

/// Scalar BEC density evolution `x_ℓ = ε λ(1 - ρ(1 - x_{ℓ-1}))`, `x_0 = 1`,
/// for a regular `(l, r)` ensemble.
pub fn bec_scalar(eps: f64, l: i32, r: i32, iters: usize) -> Vec<f64> {
    let mut x = 1.0f64;
    (0..iters)
        .map(|_| {
            x = eps * (1.0 - (1.0 - x).powi(r - 1)).powi(l - 1);
            x
        })
        .collect()
}
