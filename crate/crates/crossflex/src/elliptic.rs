//! Real Jacobi elliptic functions sn, cn, dn for modulus k in (0, 1],
//! quarter periods, and the inverse of dn on its monotone branch.
//!
//! Self-contained: a descending Landen chain for the function values, AGM for
//! the quarter periods. The degenerate modulus k = 1 uses the hyperbolic
//! closed forms (the chain cannot run there: its period diverges).

use crate::error::{Error, Result};

/// Landen chain stops once the transformed modulus drops below this; the
/// remaining error in the base-level circular approximation is O(modulus^2).
const LANDEN_CUTOFF: f64 = 1e-15;

/// Modulus k with its complement and both quarter periods.
#[derive(Debug, Clone, Copy)]
pub struct EllipticModulus {
    pub k: f64,
    pub k_prime: f64,
    /// Real quarter period K(k); infinite when k = 1.
    pub big_k: f64,
    /// Complementary quarter period K(k').
    pub big_k_prime: f64,
}

impl EllipticModulus {
    /// Accepts any k in (0, 1]; k = 1 yields an infinite real quarter period.
    pub fn new(k: f64) -> Result<Self> {
        if !(k > 0.0 && k <= 1.0) {
            return Err(Error::Domain(format!("modulus must lie in (0, 1], got {k}")));
        }
        // (1-k)(1+k) instead of 1-k^2: exact near k = 1, where k' is tiny.
        let k_prime = ((1.0 - k) * (1.0 + k)).sqrt();
        if k == 1.0 {
            return Ok(EllipticModulus {
                k,
                k_prime: 0.0,
                big_k: f64::INFINITY,
                big_k_prime: std::f64::consts::FRAC_PI_2,
            });
        }
        Ok(EllipticModulus {
            k,
            k_prime,
            big_k: std::f64::consts::FRAC_PI_2 / agm(1.0, k_prime),
            big_k_prime: std::f64::consts::FRAC_PI_2 / agm(1.0, k),
        })
    }
}

/// Quarter periods for a non-degenerate modulus, k strictly inside (0, 1).
pub fn quarter_periods(k: f64) -> Result<EllipticModulus> {
    if !(k > 0.0 && k < 1.0) {
        return Err(Error::Domain(format!(
            "quarter periods need modulus strictly inside (0, 1), got {k}"
        )));
    }
    EllipticModulus::new(k)
}

fn agm(a0: f64, b0: f64) -> f64 {
    let (mut a, mut b) = (a0, b0);
    for _ in 0..64 {
        if (a - b).abs() <= 1e-16 * a {
            break;
        }
        let an = 0.5 * (a + b);
        b = (a * b).sqrt();
        a = an;
    }
    a
}

/// Jacobi sn, cn, dn at real argument `u`.
///
/// For k = 1 the closed forms (tanh, sech, sech) apply. Otherwise a
/// descending Landen chain reduces the modulus below [`LANDEN_CUTOFF`],
/// evaluates circular functions there, and lifts back up. dn is recomputed at
/// every level from cn through dn^2 = k'^2 + k^2 cn^2, which keeps it
/// positive and cancellation-free.
pub fn sn_cn_dn(u: f64, k: f64) -> (f64, f64, f64) {
    assert!(k > 0.0 && k <= 1.0, "modulus must lie in (0, 1], got {k}");
    assert!(u.is_finite(), "argument must be finite");
    if k == 1.0 {
        let sech = 1.0 / u.cosh();
        return (u.tanh(), sech, sech);
    }

    // Forward pass: moduli k_0 = k down to k_N <= cutoff.
    // one_minus next level: 1 - k_{i+1} = 2 k_i' / (1 + k_i'), which stays
    // accurate when k is so close to 1 that direct subtraction would cancel.
    let mut ks: Vec<(f64, f64)> = Vec::with_capacity(16); // (k_i, k_i')
    let mut ki = k;
    let mut kpi = ((1.0 - k) * (1.0 + k)).sqrt();
    ks.push((ki, kpi));
    let mut scale = 1.0; // prod of (1 + k_i), i >= 1
    while ki > LANDEN_CUTOFF {
        let next = (ki / (1.0 + kpi)).powi(2);
        let one_minus_next = 2.0 * kpi / (1.0 + kpi);
        let kp_next = (one_minus_next * (1.0 + next)).sqrt();
        ks.push((next, kp_next));
        scale *= 1.0 + next;
        ki = next;
        kpi = kp_next;
        debug_assert!(ks.len() < 64, "Landen chain failed to converge");
    }

    // Base level: modulus is negligible, so circular functions serve.
    let z = u / scale;
    let mut s = z.sin();
    let mut c = z.cos();
    let (kn, kpn) = ks[ks.len() - 1];
    let mut d = (kpn * kpn + kn * kn * c * c).sqrt();

    // Lift level i+1 -> i.
    for i in (0..ks.len() - 1).rev() {
        let k_next = ks[i + 1].0;
        let denom = 1.0 + k_next * s * s;
        s = (1.0 + k_next) * s / denom;
        c = c * d / denom;
        let (ki, kpi) = ks[i];
        d = (kpi * kpi + ki * ki * c * c).sqrt();
    }
    // The lifts each cost about an ulp on sn^2 + cn^2; renormalising restores
    // the circular identity and with it the dn identity at full precision.
    let norm = s.hypot(c);
    s /= norm;
    c /= norm;
    let (k0, kp0) = ks[0];
    d = (kp0 * kp0 + k0 * k0 * c * c).sqrt();
    (s, c, d)
}

/// Inverse of dn on (0, K): the unique u there with dn(u, k) = d.
///
/// Bisection first (dn is strictly decreasing on [0, K]), then a few Newton
/// steps with dn' = -k^2 sn cn to polish.
pub fn inverse_dn(d: f64, k: f64) -> Result<f64> {
    if !(k > 0.0 && k < 1.0) {
        return Err(Error::Domain(format!(
            "inverse dn needs modulus strictly inside (0, 1), got {k}"
        )));
    }
    let m = EllipticModulus::new(k)?;
    if !(d > m.k_prime && d < 1.0) {
        return Err(Error::Domain(format!(
            "inverse dn needs a value strictly between k' = {} and 1, got {d}",
            m.k_prime
        )));
    }
    let (mut lo, mut hi) = (0.0_f64, m.big_k);
    for _ in 0..80 {
        let mid = 0.5 * (lo + hi);
        let (_, _, dn) = sn_cn_dn(mid, k);
        if dn > d {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let mut u = 0.5 * (lo + hi);
    for _ in 0..3 {
        let (sn, cn, dn) = sn_cn_dn(u, k);
        let deriv = -k * k * sn * cn;
        if deriv.abs() < 1e-300 {
            break;
        }
        let step = (dn - d) / deriv;
        let candidate = u - step;
        if candidate > 0.0 && candidate < m.big_k {
            u = candidate;
        }
    }
    Ok(u)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::FRAC_PI_2;

    /// Independent oracle: the arithmetic-geometric-mean phi recursion
    /// (classical, different algorithm from the Landen chain above).
    fn sncndn_oracle(u: f64, k: f64) -> (f64, f64, f64) {
        let mut a = vec![1.0_f64];
        let mut b = vec![((1.0 - k) * (1.0 + k)).sqrt()];
        let mut c = vec![k];
        let mut n = 0usize;
        while c[n].abs() > 1e-16 && n < 60 {
            a.push(0.5 * (a[n] + b[n]));
            b.push((a[n] * b[n]).sqrt());
            c.push(0.5 * (a[n] - b[n]));
            n += 1;
        }
        let mut phi = (2.0_f64).powi(n as i32) * a[n] * u;
        for j in (1..=n).rev() {
            phi = 0.5 * (phi + (c[j] / a[j] * phi.sin()).asin());
        }
        let sn = phi.sin();
        let cn = phi.cos();
        let dn = (1.0 - k * k * sn * sn).sqrt();
        (sn, cn, dn)
    }

    /// Quadrature oracle for K: adaptive Simpson on the defining integral.
    fn big_k_quadrature(k: f64) -> f64 {
        fn f(theta: f64, k: f64) -> f64 {
            1.0 / (1.0 - (k * theta.sin()).powi(2)).sqrt()
        }
        fn simpson(a: f64, b: f64, k: f64) -> f64 {
            (b - a) / 6.0 * (f(a, k) + 4.0 * f(0.5 * (a + b), k) + f(b, k))
        }
        fn adapt(a: f64, b: f64, k: f64, whole: f64, depth: u32) -> f64 {
            let m = 0.5 * (a + b);
            let left = simpson(a, m, k);
            let right = simpson(m, b, k);
            if depth == 0 || (left + right - whole).abs() < 1e-14 {
                left + right + (left + right - whole) / 15.0
            } else {
                adapt(a, m, k, left, depth - 1) + adapt(m, b, k, right, depth - 1)
            }
        }
        adapt(0.0, FRAC_PI_2, k, simpson(0.0, FRAC_PI_2, k), 30)
    }

    #[test]
    fn quarter_period_limits_and_symmetry() {
        let m = quarter_periods(1e-9).unwrap();
        assert!((m.big_k - FRAC_PI_2).abs() < 1e-12);
        let m = quarter_periods(std::f64::consts::FRAC_1_SQRT_2).unwrap();
        assert!((m.big_k - m.big_k_prime).abs() < 1e-13 * m.big_k);
    }

    #[test]
    fn quarter_period_matches_quadrature() {
        for &k in &[0.1, 0.3, 0.5, 0.8, 0.95] {
            let m = quarter_periods(k).unwrap();
            let oracle = big_k_quadrature(k);
            assert!(
                (m.big_k - oracle).abs() < 1e-12 * oracle,
                "k={k}: {} vs {}",
                m.big_k,
                oracle
            );
        }
    }

    #[test]
    fn rejects_bad_modulus() {
        assert!(quarter_periods(0.0).is_err());
        assert!(quarter_periods(1.0).is_err());
        assert!(quarter_periods(-0.3).is_err());
        assert!(EllipticModulus::new(1.0).is_ok());
        assert!(EllipticModulus::new(1.1).is_err());
    }

    #[test]
    fn degenerate_modulus_closed_forms() {
        let m = EllipticModulus::new(1.0).unwrap();
        assert!(m.big_k.is_infinite());
        assert!((m.big_k_prime - FRAC_PI_2).abs() < 1e-15);
        let (sn, cn, dn) = sn_cn_dn(0.7, 1.0);
        assert!((sn - 0.7_f64.tanh()).abs() < 1e-15);
        assert!((cn - 1.0 / 0.7_f64.cosh()).abs() < 1e-15);
        assert_eq!(cn, dn);
    }

    #[test]
    fn origin_and_quarter_period_values() {
        for &k in &[0.2, 0.6, 0.9] {
            let (sn, cn, dn) = sn_cn_dn(0.0, k);
            assert_eq!(sn, 0.0);
            assert!((cn - 1.0).abs() <= 1e-15 && (dn - 1.0).abs() <= 1e-15);
            let m = quarter_periods(k).unwrap();
            let (sn, cn, dn) = sn_cn_dn(m.big_k, k);
            assert!((sn - 1.0).abs() < 1e-13);
            assert!(cn.abs() < 1e-13);
            assert!((dn - m.k_prime).abs() < 1e-13);
        }
    }

    #[test]
    fn half_period_closed_forms() {
        // sn(K/2) = 1/sqrt(1+k'), cn(K/2) = sqrt(k'/(1+k')), dn(K/2) = sqrt(k').
        for i in 0..20 {
            let k = 0.04 + 0.048 * i as f64; // spread over (0, 1)
            let m = quarter_periods(k).unwrap();
            let kp = m.k_prime;
            let (sn, cn, dn) = sn_cn_dn(0.5 * m.big_k, k);
            assert!((sn - 1.0 / (1.0 + kp).sqrt()).abs() < 1e-12, "k={k}");
            assert!((cn - (kp / (1.0 + kp)).sqrt()).abs() < 1e-12, "k={k}");
            assert!((dn - kp.sqrt()).abs() < 1e-12, "k={k}");
        }
    }

    #[test]
    fn matches_agm_oracle_on_grid() {
        for &k in &[0.1, 0.5, 0.9, 0.99] {
            for i in -12..=12 {
                let u = 0.25 * i as f64;
                let (s1, c1, d1) = sn_cn_dn(u, k);
                let (s2, c2, d2) = sncndn_oracle(u, k);
                assert!((s1 - s2).abs() < 1e-9, "sn mismatch at u={u}, k={k}");
                assert!((c1 - c2).abs() < 1e-9, "cn mismatch at u={u}, k={k}");
                assert!((d1 - d2).abs() < 1e-9, "dn mismatch at u={u}, k={k}");
            }
        }
    }

    #[test]
    fn pythagorean_identities() {
        for &k in &[0.05, 0.4, 0.8, 0.999, 0.999999] {
            for i in -40..=40 {
                let u = 0.37 * i as f64;
                let (sn, cn, dn) = sn_cn_dn(u, k);
                assert!((sn * sn + cn * cn - 1.0).abs() < 1e-12, "u={u} k={k}");
                assert!((dn * dn + k * k * sn * sn - 1.0).abs() < 1e-12, "u={u} k={k}");
                assert!(dn >= ((1.0 - k) * (1.0 + k)).sqrt() - 1e-12 && dn <= 1.0 + 1e-12);
            }
        }
    }

    #[test]
    fn periodicity() {
        for &k in &[0.3, 0.7, 0.95] {
            let m = quarter_periods(k).unwrap();
            for i in 0..25 {
                let u = -3.0 + 0.25 * i as f64;
                let (s0, c0, d0) = sn_cn_dn(u, k);
                let (s2, c2, d2) = sn_cn_dn(u + 2.0 * m.big_k, k);
                let (s4, c4, d4) = sn_cn_dn(u + 4.0 * m.big_k, k);
                assert!((d2 - d0).abs() < 1e-11);
                assert!((s2 + s0).abs() < 1e-11 && (c2 + c0).abs() < 1e-11);
                assert!((s4 - s0).abs() < 1e-11 && (c4 - c0).abs() < 1e-11 && (d4 - d0).abs() < 1e-11);
            }
        }
    }

    #[test]
    fn addition_identity_for_dn() {
        // sn^2(s)d1^2d2^2 + cn^2(s)(d1^2+d2^2) - 2 dn(s) d1 d2 + k'^2 sn^2(s) = 0
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(42);
        for _ in 0..500 {
            let k: f64 = rng.gen_range(0.1..0.95);
            let m = quarter_periods(k).unwrap();
            let u: f64 = rng.gen_range(-2.0 * m.big_k..2.0 * m.big_k);
            let sigma: f64 = rng.gen_range(-2.0 * m.big_k..2.0 * m.big_k);
            let (ss, cs, ds) = sn_cn_dn(sigma, k);
            let (_, _, d1) = sn_cn_dn(u, k);
            let (_, _, d2) = sn_cn_dn(u - sigma, k);
            let kp2 = m.k_prime * m.k_prime;
            let res = ss * ss * d1 * d1 * d2 * d2 + cs * cs * (d1 * d1 + d2 * d2)
                - 2.0 * ds * d1 * d2
                + kp2 * ss * ss;
            assert!(res.abs() < 1e-11, "residual {res} at k={k}, u={u}, sigma={sigma}");
        }
    }

    #[test]
    fn inverse_dn_round_trip_and_limits() {
        let k = 0.6;
        let m = quarter_periods(k).unwrap();
        // frozen spot check from the forward function
        let (_, _, d_spot) = sn_cn_dn(0.37, k);
        let u = inverse_dn(d_spot, k).unwrap();
        assert!((u - 0.37).abs() < 1e-12);
        // half-period closed form
        let u = inverse_dn(m.k_prime.sqrt(), k).unwrap();
        assert!((u - 0.5 * m.big_k).abs() < 1e-11);
        // monotone: larger d, smaller u
        let u_hi = inverse_dn(0.99, k).unwrap();
        let u_lo = inverse_dn(m.k_prime + 1e-3, k).unwrap();
        assert!(u_hi < u_lo);
        // domain edges rejected
        assert!(inverse_dn(1.0, k).is_err());
        assert!(inverse_dn(m.k_prime, k).is_err());
        assert!(inverse_dn(0.5, 1.0).is_err());
    }

    #[test]
    fn inverse_dn_accuracy_sweep() {
        for &k in &[0.2, 0.5, 0.9, 0.99] {
            let m = quarter_periods(k).unwrap();
            for i in 1..40 {
                let u_true = m.big_k * i as f64 / 40.0;
                let (_, _, d) = sn_cn_dn(u_true, k);
                if d <= m.k_prime || d >= 1.0 {
                    continue;
                }
                let u = inverse_dn(d, k).unwrap();
                assert!((u - u_true).abs() < 1e-10, "k={k}, u_true={u_true}, got {u}");
            }
        }
    }
}
