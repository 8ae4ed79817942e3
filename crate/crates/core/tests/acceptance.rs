//! Acceptance criteria, one line per criterion. Exits non-zero if any fails.

mod common;

use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use satde::llr::one_minus_tanh_half;
use satde::channels::{ChannelFamily, ChannelKind};
use satde::de::{de_run, symsat_bhattacharyya_bound, threshold_search, DeMode, DeOptions, DeStatus, SuccessCriterion};
use satde::mc::{build_regular_graph, decode_traced, simulate_ber, DecoderConfig};
use satde::stability::{
    channel_support_bound, flip_probability, scan_matrix_radius, stability_matrix, verify_vc_inequalities,
    SaturationParams,
};
use satde::{EnsembleSpec, Grid, QuantizedDensity};

type Outcome = Result<String, String>;

fn ensure(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn e(err: satde::Error) -> String {
    err.to_string()
}

fn grid() -> Grid {
    Grid::default()
}

fn reg36() -> EnsembleSpec {
    EnsembleSpec::regular(3, 6).unwrap()
}

/// Scalar BEC threshold by bisection on the fixed-point condition.
fn bec_oracle_threshold(l: i32, r: i32) -> f64 {
    let converges = |eps: f64| common::bec_scalar(eps, l, r, 20_000).last().copied().unwrap() < 1e-12;
    let (mut lo, mut hi) = (0.0, 1.0);
    for _ in 0..50 {
        let mid = 0.5 * (lo + hi);
        if converges(mid) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    lo
}

fn c1_bec_threshold() -> Outcome {
    let mut details = Vec::new();
    let mut ok = true;
    // scalar-recursion roots, frozen from an independent scan
    for (l, r, frozen) in [(3, 6, 0.42943981441950674), (4, 8, 0.3834465723218918)] {
        let oracle = bec_oracle_threshold(l, r);
        if (oracle - frozen).abs() > 1e-6 {
            return Err(format!("scalar oracle drifted: {oracle} vs {frozen}"));
        }
        let ens = EnsembleSpec::regular(l as usize, r as usize).unwrap();
        let fam = ChannelFamily::new(ChannelKind::Bec);
        let opts = DeOptions::for_mode(DeMode::Bp, None).map_err(e)?;
        let t = Instant::now();
        let res = threshold_search(&fam, &ens, DeMode::Bp, None, 1e-4, grid(), &opts).map_err(e)?;
        let dt = t.elapsed();
        let err = (res.threshold - frozen).abs();
        ok &= err < 1e-3 && dt < Duration::from_secs(60);
        details.push(format!("({l},{r}) ε*={:.5} oracle={frozen:.5} |Δ|={err:.1e} in {dt:.1?}", res.threshold));
    }
    ensure(ok, details.join("; "))
}

fn c2_bec_saturation_neutral() -> Outcome {
    let ens = reg36();
    let c = ChannelFamily::new(ChannelKind::Bec).make_channel(0.40, grid()).map_err(e)?;
    let iters = 80;
    let bp = de_run(&c, &ens, DeMode::Bp, None, &DeOptions::for_mode(DeMode::Bp, None).map_err(e)?.fixed(iters))
        .map_err(e)?;
    let mut worst: f64 = 0.0;
    for k in [5.0, 10.0, 25.0] {
        let opts = DeOptions::for_mode(DeMode::Sat, Some(k)).map_err(e)?.fixed(iters);
        let sat = de_run(&c, &ens, DeMode::Sat, Some(k), &opts).map_err(e)?;
        for (a, b) in bp.records.iter().zip(&sat.records) {
            worst = worst.max((a.e - b.e).abs());
        }
    }
    ensure(
        worst <= 1e-12,
        format!("max |E_sat - E_bp| = {worst:.1e} over {iters} iterations, K in {{5,10,25}}"),
    )
}

fn c3_wasserstein_clip_bound() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut violations = 0;
    let mut worst_ratio: f64 = 0.0;
    for _ in 0..200 {
        let a = common::random_symmetric(&mut rng, grid(), 8.0);
        for k in [2.0, 4.0, 8.0] {
            let s = a.saturate_sym(k).map_err(e)?;
            let d = a.wasserstein(&s).map_err(e)?;
            let bound = one_minus_tanh_half(k);
            worst_ratio = worst_ratio.max(d / bound);
            if d > bound * (1.0 + 1e-12) {
                violations += 1;
            }
        }
    }
    ensure(violations == 0, format!("{violations} violations in 600 cases, max d/bound = {worst_ratio:.4}"))
}

fn c4_symsat_bound() -> Outcome {
    let ens = reg36();
    let fam = ChannelFamily::new(ChannelKind::Bsc);
    let opts = DeOptions::for_mode(DeMode::Bp, None).map_err(e)?;
    let thr = threshold_search(&fam, &ens, DeMode::Bp, None, 1e-3, grid(), &opts).map_err(e)?;
    let eps = 0.9 * thr.threshold;
    let c = fam.make_channel(eps, grid()).map_err(e)?;
    let bp = de_run(&c, &ens, DeMode::Bp, None, &opts.fixed(15)).map_err(e)?;
    let mut violations = 0;
    let mut min_slack = f64::INFINITY;
    for k in [10.0, 20.0, 40.0] {
        let o = DeOptions::for_mode(DeMode::SymSat, Some(k)).map_err(e)?.fixed(15);
        let sym = de_run(&c, &ens, DeMode::SymSat, Some(k), &o).map_err(e)?;
        for (b, s) in bp.records.iter().zip(&sym.records) {
            let bound = symsat_bhattacharyya_bound(s.iter, k, 3, 6, b.b).map_err(e)?;
            min_slack = min_slack.min(bound - s.b);
            if s.b > bound {
                violations += 1;
            }
        }
    }
    ensure(
        violations == 0,
        format!(
            "BP threshold {:.4}, ε = {eps:.4}: {violations} violations, min slack {min_slack:.2e}",
            thr.threshold
        ),
    )
}

fn c5_functional_identities() -> Outcome {
    let g = grid();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (mut worst_mult, mut worst_sub): (f64, f64) = (0.0, f64::NEG_INFINITY);
    for i in 0..500 {
        let mut a = common::random_density(&mut rng, g);
        let mut b = if i % 2 == 0 {
            common::random_symmetric(&mut rng, g, 0.1)
        } else {
            common::random_density(&mut rng, g)
        };
        if i % 3 == 0 {
            // saturated, non-symmetric inputs
            let k = [2.0, 4.0, 8.0][rng.gen_range(0..3)];
            a = a.saturate(k).map_err(e)?;
            b = b.saturate(k).map_err(e)?;
        }
        let (ba, bb) = (a.bhattacharyya(), b.bhattacharyya());
        if ba.is_finite() && bb.is_finite() {
            let v = a.var_convolve(&b).map_err(e)?;
            worst_mult = worst_mult.max((v.bhattacharyya() - ba * bb).abs());
        }
        let c = a.chk_convolve(&b).map_err(e)?;
        worst_sub = worst_sub.max(c.bhattacharyya() - (ba + bb));
    }
    let delta = g.spacing();
    ensure(
        worst_mult <= 5.0 * delta && worst_sub <= 1e-9,
        format!("max |B(a⊛b)-B(a)B(b)| = {worst_mult:.2e} (≤ {:.3}), max B(a⊠b)-B(a)-B(b) = {worst_sub:.2e}", 5.0 * delta),
    )
}

fn c6_degradation_chain() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut violations = 0;
    let mut worst: f64 = 0.0;
    for i in 0..200 {
        let a = common::random_symmetric(&mut rng, grid(), 8.0);
        let k = [2.0, 4.0, 8.0][i % 3];
        let s = a.saturate(k).map_err(e)?;
        let y = a.saturate_sym(k).map_err(e)?;
        let f = |d: &QuantizedDensity| [d.bhattacharyya(), d.error_probability(), d.entropy()];
        let (fa, fs, fy) = (f(&a), f(&s), f(&y));
        for j in 0..3 {
            for drop in [fa[j] - fs[j], fs[j] - fy[j]] {
                worst = worst.max(drop);
                if drop > 1e-12 {
                    violations += 1;
                }
            }
        }
    }
    ensure(violations == 0, format!("{violations} violations, largest decrease {worst:.1e}"))
}

fn c7_stability_matrix_and_tails() -> Outcome {
    let g = grid();
    let ens = reg36();
    let eps = 0.02;
    let c = ChannelFamily::new(ChannelKind::Bsc).make_channel(eps, g).map_err(e)?;
    let b_c = c.bhattacharyya();
    let ks: Vec<f64> = (2..=200).map(|i| i as f64 * 0.5).collect();
    let (radii, k0) = scan_matrix_radius(6, &[3], b_c, &ks).map_err(e)?;
    let monotone = radii.windows(2).all(|w| w[1].1 <= w[0].1);
    let k0 = k0.ok_or("radius never drops below one")?;
    let stable_above = radii.iter().filter(|r| r.0 >= k0).all(|r| r.1 < 1.0);
    let verdict = stability_matrix(
        &SaturationParams::new(40.0, 6, channel_support_bound(&c)).map_err(e)?,
        &[3],
        b_c,
    )
    .map_err(e)?;

    let mut tails = Vec::new();
    let mut tails_ok = true;
    for k in [20.0, 30.0, 40.0] {
        let o = DeOptions::for_mode(DeMode::SymSat, Some(k)).map_err(e)?.fixed(60).keeping_densities();
        let tr = de_run(&c, &ens, DeMode::SymSat, Some(k), &o).map_err(e)?;
        let unit = (-k / 2.0f64).exp();
        let (mut ra, mut rb): (f64, f64) = (0.0, 0.0);
        for r in &tr.rounds[40..] {
            ra = ra.max(r.var_output.bhattacharyya() / (2.0 * unit));
            rb = rb.max(r.check_output.bhattacharyya() / (2.0 * ens.rho_prime_one() * unit));
        }
        // the same 1e-9 absolute slack as the node inequalities
        let ok_a = (ra - 1.0) * 2.0 * unit <= 1e-9;
        let ok_b = (rb - 1.0) * 2.0 * ens.rho_prime_one() * unit <= 1e-9;
        tails_ok &= ok_a && ok_b;
        tails.push(format!("K={k}: max B(a)/2e^(-K/2) = 1{:+.2e}, max B(b)/(2ρ'e^(-K/2)) = {rb:.3}", ra - 1.0));
    }
    ensure(
        monotone && stable_above && tails_ok && verdict.spectral_radius.unwrap() < 1.0,
        format!(
            "K0 = {k0} (BSC({eps})), radius monotone: {monotone}, radius(40) = {:.2e}; tails: {}",
            verdict.spectral_radius.unwrap(),
            tails.join("; ")
        ),
    )
}

fn c8_vc_inequalities() -> Outcome {
    let ens = reg36();
    let c = ChannelFamily::new(ChannelKind::Bsc).make_channel(0.02, grid()).map_err(e)?;
    let k = 30.0;
    let o = DeOptions::for_mode(DeMode::SymSat, Some(k)).map_err(e)?.fixed(50).keeping_densities();
    let tr = de_run(&c, &ens, DeMode::SymSat, Some(k), &o).map_err(e)?;
    let p = SaturationParams::new(k, 6, channel_support_bound(&c)).map_err(e)?;
    let rep = verify_vc_inequalities(&tr, &ens, &c, &p).map_err(e)?;
    let gated = rep.rows.iter().filter(|r| r.var_precondition).count();
    ensure(
        rep.violations == 0 && rep.rows.len() == 50,
        format!(
            "{} violations over {} iterations; variable-node bounds in force on {gated}",
            rep.violations,
            rep.rows.len()
        ),
    )
}

fn c9_degree_two_contrast() -> Outcome {
    let g = grid();
    let ens = EnsembleSpec::from_edge_perspective(vec![0.0, 0.5, 0.5], vec![0.0, 0.0, 0.0, 0.0, 0.0, 1.0]).map_err(e)?;
    let k = 10.0;
    let mut sat = DeOptions::for_mode(DeMode::Sat, Some(k)).map_err(e)?;
    sat.success = SuccessCriterion::ErrorBelow { threshold: 1e-10 };
    let bp = DeOptions::for_mode(DeMode::Bp, None).map_err(e)?;

    let bsc = ChannelFamily::new(ChannelKind::Bsc).make_channel(0.03, g).map_err(e)?;
    let bsc_bp = de_run(&bsc, &ens, DeMode::Bp, None, &bp).map_err(e)?;
    let bsc_sat = de_run(&bsc, &ens, DeMode::Sat, Some(k), &sat).map_err(e)?;
    let bec = ChannelFamily::new(ChannelKind::Bec).make_channel(0.30, g).map_err(e)?;
    let bec_bp = de_run(&bec, &ens, DeMode::Bp, None, &bp).map_err(e)?;
    let bec_sat = de_run(&bec, &ens, DeMode::Sat, Some(k), &sat).map_err(e)?;
    ensure(
        bsc_bp.status == DeStatus::ConvergedZero
            && bec_bp.status == DeStatus::ConvergedZero
            && bsc_sat.status == DeStatus::ConvergedFloor
            && bsc_sat.last().e > 0.0
            && bec_sat.status == DeStatus::ConvergedZero,
        format!(
            "BSC(0.03): BP {:?}, SatBP {:?} at E = {:.2e}; BEC(0.30): BP {:?}, SatBP {:?}",
            bsc_bp.status,
            bsc_sat.status,
            bsc_sat.last().e,
            bec_bp.status,
            bec_sat.status
        ),
    )
}

fn c10_monte_carlo() -> Outcome {
    let t = Instant::now();
    let ens = reg36();
    let g = grid();
    let (n, trials, iters) = (10_000, 20, 10);
    let mut worst_z: f64 = 0.0;
    let mut ok = true;

    let cfg = DecoderConfig {
        rng_seed: 10,
        ..DecoderConfig::new(25.0, iters)
    };
    let bec = simulate_ber(&ens, &ChannelFamily::new(ChannelKind::Bec), 0.40, &cfg, n, trials).map_err(e)?;
    let oracle = common::bec_scalar(0.40, 3, 6, iters);
    for (s, x) in bec.per_iter.iter().zip(&oracle) {
        let dev = (s.erasure_rate - x).abs();
        ok &= dev <= 3.0 * s.std_err + 0.005;
        if s.std_err > 0.0 {
            worst_z = worst_z.max(dev / s.std_err);
        }
    }

    let cfg = DecoderConfig {
        rng_seed: 11,
        ..DecoderConfig::new(20.0, iters)
    };
    let fam = ChannelFamily::new(ChannelKind::Bsc);
    let bsc = simulate_ber(&ens, &fam, 0.04, &cfg, n, trials).map_err(e)?;
    let c = fam.make_channel(0.04, g).map_err(e)?;
    let de = de_run(&c, &ens, DeMode::Sat, Some(20.0), &DeOptions::for_mode(DeMode::Sat, Some(20.0)).map_err(e)?.fixed(iters))
        .map_err(e)?;
    for (s, r) in bsc.per_iter.iter().zip(&de.records) {
        let dev = (s.msg_err_rate - r.e).abs();
        ok &= dev <= 3.0 * s.std_err + 0.005;
        if s.std_err > 0.0 {
            worst_z = worst_z.max(dev / s.std_err);
        }
    }
    let dt = t.elapsed();
    ok &= dt < Duration::from_secs(300);
    ensure(ok, format!("max deviation {worst_z:.2} standard errors over both channels, {dt:.1?}"))
}

fn c11_decoder_symmetry() -> Outcome {
    let g = build_regular_graph(120, 3, 6, 11).map_err(e)?;
    let llrs = ChannelFamily::new(ChannelKind::Biawgn)
        .sample_llrs(0.9, 120, &mut ChaCha8Rng::seed_from_u64(11))
        .map_err(e)?;
    let neg: Vec<f64> = llrs.iter().map(|x| -x).collect();
    let cfg = DecoderConfig::new(6.0, 10);
    let (ra, ha) = decode_traced(&g, &llrs, &cfg, 0).map_err(e)?;
    let (rb, hb) = decode_traced(&g, &neg, &cfg, 0).map_err(e)?;
    let mut mismatches = 0;
    let mut compared = 0;
    for (xa, xb) in ha
        .var_to_check
        .iter()
        .chain(&ha.check_to_var)
        .zip(hb.var_to_check.iter().chain(&hb.check_to_var))
    {
        for (a, b) in xa.iter().zip(xb) {
            compared += 1;
            if b.to_bits() != (-a + 0.0).to_bits() {
                mismatches += 1;
            }
        }
    }
    mismatches += ra.decisions.iter().zip(&rb.decisions).filter(|(a, b)| **a != -**b).count();
    ensure(mismatches == 0, format!("{mismatches} mismatches over {compared} messages"))
}

fn c12_flip_identity() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let mut worst: f64 = 0.0;
    let mut over = 0;
    for i in 0..1000 {
        let k = rng.gen_range(0.05..40.0);
        let z = if i % 10 == 0 { k } else { k + rng.gen_range(0.0..40.0) };
        let lam = flip_probability(z, k).map_err(e)?;
        let q = (-z).exp() / (1.0 + (-z).exp());
        let pk = (-k).exp() / (1.0 + (-k).exp());
        let lhs = lam * (1.0 - q) + (1.0 - lam) * q;
        worst = worst.max((lhs - pk).abs());
        if lam > pk || lam < 0.0 {
            over += 1;
        }
    }
    ensure(worst <= 1e-12 && over == 0, format!("max residual {worst:.1e}, {over} out-of-range flip rates"))
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 12] = [
        ("BEC threshold vs scalar oracle", c1_bec_threshold),
        ("saturation neutrality on the BEC", c2_bec_saturation_neutral),
        ("Wasserstein clipping bound", c3_wasserstein_clip_bound),
        ("BP vs symmetric-saturated Bhattacharyya bound", c4_symsat_bound),
        ("Bhattacharyya node identities", c5_functional_identities),
        ("degradation chain", c6_degradation_chain),
        ("stability matrix and tail bounds", c7_stability_matrix_and_tails),
        ("node inequalities on a DE trace", c8_vc_inequalities),
        ("degree-two contrast", c9_degree_two_contrast),
        ("Monte Carlo vs DE", c10_monte_carlo),
        ("decoder sign symmetry", c11_decoder_symmetry),
        ("flip-probability identity", c12_flip_identity),
    ];
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let t = Instant::now();
        let out = f();
        let dt = t.elapsed();
        match out {
            Ok(d) => println!("PASS {:>2} {name}: {d} [{dt:.1?}]", i + 1),
            Err(d) => {
                failed += 1;
                println!("FAIL {:>2} {name}: {d} [{dt:.1?}]", i + 1);
            }
        }
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
