//! Scalar LLR arithmetic shared by the density engine and the decoder.

/// `ln(1 + e^y)` without overflow for large `y`.
pub fn log1p_exp(y: f64) -> f64 {
    if y > 0.0 {
        y + (-y).exp().ln_1p()
    } else {
        y.exp().ln_1p()
    }
}

/// Magnitude of the check-node combination of two non-negative LLR
/// magnitudes, `2 atanh(tanh(a/2) tanh(b/2))`.
///
/// Evaluated as `min(a,b) + ln(1+e^{-(a+b)}) - ln(1+e^{-|a-b|})`, which stays
/// accurate when `tanh` would round to 1. Infinite arguments act as the
/// identity.
pub fn boxplus_magnitude(a: f64, b: f64) -> f64 {
    debug_assert!(a >= 0.0 && b >= 0.0);
    if a.is_infinite() {
        return b;
    }
    if b.is_infinite() {
        return a;
    }
    let m = a.min(b);
    let v = m + (-(a + b)).exp().ln_1p() - (-(a - b).abs()).exp().ln_1p();
    v.clamp(0.0, m)
}

/// Signed check-node combination of two LLRs. Exactly odd in each argument.
pub fn boxplus(a: f64, b: f64) -> f64 {
    let m = boxplus_magnitude(a.abs(), b.abs());
    if (a < 0.0) != (b < 0.0) {
        -m
    } else {
        m
    }
}

/// Saturation `min(K, |x|) sgn(x)`.
#[inline]
pub fn saturate(x: f64, k: f64) -> f64 {
    x.clamp(-k, k)
}

/// Wrong-sign probability `e^{-z}/(1+e^{-z})` of a symmetric two-atom density
/// at magnitude `z`.
pub fn symmetric_wrong_sign(z: f64) -> f64 {
    if z.is_infinite() {
        return 0.0;
    }
    let e = (-z).exp();
    e / (1.0 + e)
}

/// `1 - tanh(x/2)` for `x >= 0`, accurate for large `x`.
pub fn one_minus_tanh_half(x: f64) -> f64 {
    if x.is_infinite() {
        return 0.0;
    }
    2.0 / (1.0 + x.exp())
}

/// Binary entropy in bits.
pub fn binary_entropy(p: f64) -> f64 {
    if p <= 0.0 || p >= 1.0 {
        return 0.0;
    }
    -p * p.log2() - (1.0 - p) * (1.0 - p).log2()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn boxplus_matches_tanh_rule_in_safe_range() {
        for &(a, b) in &[(0.3, 1.7), (2.0, 2.0), (5.0, 0.1), (-1.2, 3.4), (-0.5, -0.7)] {
            let direct = 2.0 * ((a / 2.0_f64).tanh() * (b / 2.0_f64).tanh()).atanh();
            assert!((boxplus(a, b) - direct).abs() < 1e-12, "{a} {b}");
        }
    }

    #[test]
    fn boxplus_large_magnitudes_do_not_overflow() {
        // tanh(20) rounds to 1 in f64; the log form keeps K - ln 2.
        let v = boxplus_magnitude(40.0, 40.0);
        assert!((v - (40.0 - 2f64.ln())).abs() < 1e-12);
        assert_eq!(boxplus_magnitude(f64::INFINITY, 3.0), 3.0);
        assert_eq!(boxplus_magnitude(0.0, 3.0), 0.0);
    }

    #[test]
    fn boxplus_is_odd_bitwise() {
        for &(a, b) in &[(0.3, 1.7), (2.0, -2.0), (7.25, 0.0625)] {
            assert_eq!(boxplus(-a, b).to_bits(), (-boxplus(a, b)).to_bits());
        }
    }

    #[test]
    fn log1p_exp_is_stable() {
        assert!((log1p_exp(0.0) - 2f64.ln()).abs() < 1e-15);
        assert!((log1p_exp(800.0) - 800.0).abs() < 1e-12);
        assert!(log1p_exp(-800.0) >= 0.0);
    }
}
