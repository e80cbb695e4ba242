//! Even poly-biquadratic (EPBQ) parameter curves.
//!
//! Every flexible cross-polytope is driven by a curve in (RP^1)^m whose
//! coordinate pairs each satisfy an even biquadratic relation
//!
//! ```text
//! a_jl z_j^2 z_l^2 + b_jl z_j^2 - 2 z_j z_l + b_lj z_l^2 + e_jl = 0 .
//! ```
//!
//! This module holds the five concrete families (a line, rational curves,
//! two elliptic kinds, and three exotic variants), evaluation of their
//! coordinates, their coefficient matrices, two realisability screens on the
//! coefficients, and the inverse problem of recovering elliptic parameters
//! from coefficient matrices.

use nalgebra::DMatrix;
use serde::de::Error as DeError;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::butterfly::{matrix_to_rows, rows_to_matrix};
use crate::elliptic::{inverse_dn, sn_cn_dn, EllipticModulus};
use crate::error::{Error, Result};

/// Relative tolerance for "these coefficients agree" decisions in the fit.
pub const COEFF_MATCH_TOL: f64 = 1e-8;
/// A leading coefficient this small (relative to the coefficient scale) is
/// treated as exactly zero, which routes the fit to its degenerate branch.
pub const COEFF_ZERO_TOL: f64 = 1e-10;
/// Minimum separation of curve parameters, relative to their natural scale.
const PARAM_DISTINCT_TOL: f64 = 1e-9;

/// A point of the real projective line stored as a unit pair (s, c)
/// representing s/c. Poles are first-class values, never IEEE overflow.
///
/// The representative is normalised to s^2 + c^2 = 1 with c > 0, or (1, 0)
/// at the pole; all uses below are insensitive to the residual sign choice.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProjectiveValue {
    s: f64,
    c: f64,
}

impl ProjectiveValue {
    pub fn from_ratio(num: f64, den: f64) -> Self {
        let h = num.hypot(den);
        assert!(h > 0.0 && h.is_finite(), "indeterminate projective value {num}/{den}");
        let (mut s, mut c) = (num / h, den / h);
        if c < 0.0 || (c == 0.0 && s < 0.0) {
            s = -s;
            c = -c;
        }
        ProjectiveValue { s, c }
    }

    pub fn from_value(v: f64) -> Self {
        Self::from_ratio(v, 1.0)
    }

    pub fn infinity() -> Self {
        ProjectiveValue { s: 1.0, c: 0.0 }
    }

    /// Numerator of the unit representative.
    pub fn num(&self) -> f64 {
        self.s
    }

    /// Denominator of the unit representative; zero exactly at the pole.
    pub fn den(&self) -> f64 {
        self.c
    }

    pub fn is_infinite(&self) -> bool {
        self.c == 0.0
    }

    /// Affine reading; the pole reads back as +infinity.
    pub fn to_f64(&self) -> f64 {
        self.s / self.c
    }
}

/// One of the five families of even poly-biquadratic curves.
///
/// Parameters are exposed raw; curves related by coordinate-wise scaling
/// z_j -> nu_j z_j^{+-1} and permutation represent the same geometry, and no
/// canonical class representative is imposed here.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family")]
pub enum EpbqCurve {
    /// The one-coordinate projective line, z(u) = u. Drives the simplest
    /// flexes, where all axis coordinates are mutually proportional.
    #[serde(rename = "line")]
    TrivialLine,
    /// z_j(x) = x + mu_j / x with pairwise distinct |mu_j|; mu_j = 0 allowed.
    #[serde(rename = "rational")]
    Rational { mu: Vec<f64> },
    /// First elliptic kind: z_j = dn(u - sigma_j) for j < m_prime, else
    /// cn(u - sigma_j)/sn(u - sigma_j). Shifts pairwise distinct mod K.
    #[serde(rename = "elliptic1")]
    EllipticFirst {
        k: f64,
        sigma: Vec<f64>,
        m_prime: usize,
    },
    /// Second elliptic kind: z_j = cn(u - sigma_j) for j < m_prime, else
    /// dn(u - sigma_j)/(k sn(u - sigma_j)).
    #[serde(rename = "elliptic2")]
    EllipticSecond {
        k: f64,
        sigma: Vec<f64>,
        m_prime: usize,
    },
    /// Three-coordinate curves whose third coordinate is an algebraic
    /// function of the first; exactly three variants exist.
    #[serde(rename = "exotic")]
    Exotic { k: f64, alpha: u8 },
}

impl EpbqCurve {
    /// Number of projective coordinates.
    pub fn m(&self) -> usize {
        match self {
            EpbqCurve::TrivialLine => 1,
            EpbqCurve::Rational { mu } => mu.len(),
            EpbqCurve::EllipticFirst { sigma, .. } | EpbqCurve::EllipticSecond { sigma, .. } => {
                sigma.len()
            }
            EpbqCurve::Exotic { .. } => 3,
        }
    }

    /// Checks the family invariants; every consumer relies on them.
    pub fn validate(&self) -> Result<()> {
        match self {
            EpbqCurve::TrivialLine => Ok(()),
            EpbqCurve::Rational { mu } => {
                if mu.is_empty() {
                    return Err(Error::Invalid("rational curve needs at least one mu".into()));
                }
                if mu.iter().any(|v| !v.is_finite()) {
                    return Err(Error::Invalid("rational curve mu values must be finite".into()));
                }
                for j in 0..mu.len() {
                    for l in (j + 1)..mu.len() {
                        let scale = 1.0_f64.max(mu[j].abs()).max(mu[l].abs());
                        if (mu[j].abs() - mu[l].abs()).abs() <= PARAM_DISTINCT_TOL * scale {
                            return Err(Error::Invalid(format!(
                                "rational curve needs pairwise distinct |mu|; \
                                 |mu_{}| and |mu_{}| coincide ({} vs {})",
                                j + 1,
                                l + 1,
                                mu[j],
                                mu[l]
                            )));
                        }
                    }
                }
                Ok(())
            }
            EpbqCurve::EllipticFirst { k, sigma, m_prime }
            | EpbqCurve::EllipticSecond { k, sigma, m_prime } => {
                if !(*k > 0.0 && *k < 1.0) {
                    return Err(Error::Invalid(format!(
                        "elliptic curve modulus must lie strictly inside (0, 1), got {k}"
                    )));
                }
                if sigma.is_empty() {
                    return Err(Error::Invalid("elliptic curve needs at least one shift".into()));
                }
                if sigma.iter().any(|v| !v.is_finite()) {
                    return Err(Error::Invalid("elliptic curve shifts must be finite".into()));
                }
                if *m_prime > sigma.len() {
                    return Err(Error::Invalid(format!(
                        "m_prime = {} exceeds the number of coordinates {}",
                        m_prime,
                        sigma.len()
                    )));
                }
                let big_k = EllipticModulus::new(*k)?.big_k;
                for j in 0..sigma.len() {
                    for l in (j + 1)..sigma.len() {
                        let r = (sigma[j] - sigma[l]).rem_euclid(big_k);
                        if r.min(big_k - r) <= PARAM_DISTINCT_TOL * big_k {
                            return Err(Error::Invalid(format!(
                                "elliptic curve shifts must be pairwise distinct modulo the \
                                 quarter period; sigma_{} and sigma_{} coincide",
                                j + 1,
                                l + 1
                            )));
                        }
                    }
                }
                Ok(())
            }
            EpbqCurve::Exotic { k, alpha } => {
                if !(*k > 0.0 && *k < 1.0) {
                    return Err(Error::Invalid(format!(
                        "exotic curve modulus must lie strictly inside (0, 1), got {k}"
                    )));
                }
                if !(1..=3).contains(alpha) {
                    return Err(Error::Invalid(format!(
                        "exotic curve variant must be 1, 2, or 3, got {alpha}"
                    )));
                }
                Ok(())
            }
        }
    }

    /// Coordinate signs for the elliptic kinds: +1 for the first m_prime
    /// coordinates, -1 for the rest. None for other families.
    pub fn epsilon(&self, j: usize) -> Option<f64> {
        match self {
            EpbqCurve::EllipticFirst { m_prime, .. } | EpbqCurve::EllipticSecond { m_prime, .. } => {
                Some(if j < *m_prime { 1.0 } else { -1.0 })
            }
            _ => None,
        }
    }
}

/// Evaluates all m coordinates of the curve at parameter value `u`.
///
/// Quotient coordinates hit genuine poles along the flex; those come back as
/// the projective point at infinity, never as floating overflow.
pub fn eval(curve: &EpbqCurve, u: f64) -> Vec<ProjectiveValue> {
    debug_assert!(curve.validate().is_ok());
    match curve {
        EpbqCurve::TrivialLine => vec![ProjectiveValue::from_value(u)],
        EpbqCurve::Rational { mu } => mu
            .iter()
            .map(|&mu_j| {
                if mu_j == 0.0 {
                    // x + 0/x is x itself, defined even at x = 0
                    ProjectiveValue::from_value(u)
                } else {
                    ProjectiveValue::from_ratio(u * u + mu_j, u)
                }
            })
            .collect(),
        EpbqCurve::EllipticFirst { k, sigma, m_prime } => sigma
            .iter()
            .enumerate()
            .map(|(j, &s_j)| {
                let (sn, cn, dn) = sn_cn_dn(u - s_j, *k);
                if j < *m_prime {
                    ProjectiveValue::from_value(dn)
                } else {
                    ProjectiveValue::from_ratio(cn, sn)
                }
            })
            .collect(),
        EpbqCurve::EllipticSecond { k, sigma, m_prime } => sigma
            .iter()
            .enumerate()
            .map(|(j, &s_j)| {
                let (sn, cn, dn) = sn_cn_dn(u - s_j, *k);
                if j < *m_prime {
                    ProjectiveValue::from_value(cn)
                } else {
                    ProjectiveValue::from_ratio(dn, *k * sn)
                }
            })
            .collect(),
        EpbqCurve::Exotic { k, alpha } => {
            let kp = ((1.0 - *k) * (1.0 + *k)).sqrt();
            let half_k = 0.5 * EllipticModulus::new(*k).expect("validated modulus").big_k;
            let (sn, cn, dn) = sn_cn_dn(u, *k);
            let (sn2, cn2, dn2) = sn_cn_dn(u - half_k, *k);
            match alpha {
                1 => vec![
                    ProjectiveValue::from_value(dn),
                    ProjectiveValue::from_value(dn2),
                    // dn + k'/dn; dn never vanishes, so this stays finite
                    ProjectiveValue::from_ratio(dn * dn + kp, dn),
                ],
                2 => vec![
                    ProjectiveValue::from_value(dn),
                    // The sign here picks the representative whose pair
                    // relations carry the matrices built in `coeffs`;
                    // negating one coordinate is an allowed curve
                    // equivalence, and the unnegated quotient satisfies the
                    // relations with all four pair coefficients negated
                    // instead, which is a different normal form.
                    ProjectiveValue::from_ratio(-cn2, sn2),
                    ProjectiveValue::from_ratio(dn * dn - kp, dn),
                ],
                3 => vec![
                    ProjectiveValue::from_ratio(cn, sn),
                    ProjectiveValue::from_ratio(cn2, sn2),
                    // cn/sn - k' sn/cn on a common denominator
                    ProjectiveValue::from_ratio(cn * cn - kp * sn * sn, sn * cn),
                ],
                _ => unreachable!("validated variant"),
            }
        }
    }
}

/// The pairwise biquadratic coefficient matrices of a curve.
///
/// Diagonals carry no meaning (a coordinate has no relation with itself) and
/// are stored as zero. For every family, `a` and `e` are symmetric, while
/// `b` transposes: the (l, j) entry plays the role written b_lj above.
#[derive(Debug, Clone, PartialEq)]
pub struct CurveCoeffs {
    pub m: usize,
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub e: DMatrix<f64>,
}

#[derive(Serialize, Deserialize)]
struct CurveCoeffsWire {
    m: usize,
    #[serde(rename = "A")]
    a: Vec<Vec<f64>>,
    #[serde(rename = "B")]
    b: Vec<Vec<f64>>,
    #[serde(rename = "E")]
    e: Vec<Vec<f64>>,
}

impl Serialize for CurveCoeffs {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        CurveCoeffsWire {
            m: self.m,
            a: matrix_to_rows(&self.a),
            b: matrix_to_rows(&self.b),
            e: matrix_to_rows(&self.e),
        }
        .serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for CurveCoeffs {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let wire = CurveCoeffsWire::deserialize(deserializer)?;
        let a = rows_to_matrix(&wire.a, wire.m, "A").map_err(D::Error::custom)?;
        let b = rows_to_matrix(&wire.b, wire.m, "B").map_err(D::Error::custom)?;
        let e = rows_to_matrix(&wire.e, wire.m, "E").map_err(D::Error::custom)?;
        Ok(CurveCoeffs { m: wire.m, a, b, e })
    }
}

impl CurveCoeffs {
    /// Largest off-diagonal magnitude across the three matrices, floored at
    /// one; the natural scale for relative comparisons.
    pub fn scale(&self) -> f64 {
        let mut s = 1.0_f64;
        for j in 0..self.m {
            for l in 0..self.m {
                if j != l {
                    s = s.max(self.a[(j, l)].abs());
                    s = s.max(self.b[(j, l)].abs());
                    s = s.max(self.e[(j, l)].abs());
                }
            }
        }
        s
    }
}

/// Coefficient matrices per the family formulas.
pub fn coeffs(curve: &EpbqCurve) -> Result<CurveCoeffs> {
    curve.validate()?;
    let m = curve.m();
    if m < 2 {
        return Err(Error::Invalid(
            "a single-coordinate curve has no coordinate pairs, hence no coefficients".into(),
        ));
    }
    let mut a = DMatrix::<f64>::zeros(m, m);
    let mut b = DMatrix::<f64>::zeros(m, m);
    let mut e = DMatrix::<f64>::zeros(m, m);

    match curve {
        EpbqCurve::TrivialLine => unreachable!("m = 1 rejected above"),
        EpbqCurve::Rational { mu } => {
            // Distinct |mu| guarantees mu_j + mu_l != 0.
            for j in 0..m {
                for l in 0..m {
                    if j == l {
                        continue;
                    }
                    let denom = mu[j] + mu[l];
                    a[(j, l)] = 0.0;
                    b[(j, l)] = 2.0 * mu[l] / denom;
                    e[(j, l)] = 2.0 * (mu[j] - mu[l]).powi(2) / denom;
                }
            }
        }
        EpbqCurve::EllipticFirst { k, sigma, .. } => {
            let kp2 = (1.0 - *k) * (1.0 + *k);
            for j in 0..m {
                for l in 0..m {
                    if j == l {
                        continue;
                    }
                    // Distinctness mod K keeps sn and cn of the shift
                    // difference away from zero.
                    let (sn, cn, dn) = sn_cn_dn(sigma[j] - sigma[l], *k);
                    let eps_j = curve.epsilon(j).expect("elliptic");
                    let eps_l = curve.epsilon(l).expect("elliptic");
                    if eps_j == eps_l {
                        a[(j, l)] = eps_j * sn * sn / dn;
                        b[(j, l)] = cn * cn / dn;
                        e[(j, l)] = eps_j * kp2 * sn * sn / dn;
                    } else {
                        let denom = k * k * sn * cn;
                        a[(j, l)] = eps_j / denom;
                        b[(j, l)] = dn * dn / denom;
                        e[(j, l)] = -eps_j * kp2 / denom;
                    }
                }
            }
        }
        EpbqCurve::EllipticSecond { k, sigma, .. } => {
            let kp2 = (1.0 - *k) * (1.0 + *k);
            for j in 0..m {
                for l in 0..m {
                    if j == l {
                        continue;
                    }
                    let (sn, cn, dn) = sn_cn_dn(sigma[j] - sigma[l], *k);
                    let eps_j = curve.epsilon(j).expect("elliptic");
                    let eps_l = curve.epsilon(l).expect("elliptic");
                    if eps_j == eps_l {
                        a[(j, l)] = eps_j * k * k * sn * sn / cn;
                        b[(j, l)] = dn * dn / cn;
                        e[(j, l)] = -eps_j * kp2 * sn * sn / cn;
                    } else {
                        let denom = sn * dn;
                        a[(j, l)] = eps_j * k / denom;
                        b[(j, l)] = k * cn * cn / denom;
                        e[(j, l)] = eps_j * kp2 / (k * denom);
                    }
                }
            }
        }
        EpbqCurve::Exotic { k, alpha } => {
            let kp = ((1.0 - *k) * (1.0 + *k)).sqrt();
            let (eps1, eps2): (f64, f64) = match alpha {
                1 => (1.0, 1.0),
                2 => (-1.0, 1.0),
                3 => (1.0, -1.0),
                _ => unreachable!("validated variant"),
            };
            let root = kp.sqrt();
            let denom = 1.0 + eps1 * kp;
            let aa = eps2 / (root * denom);
            a[(0, 1)] = aa;
            a[(1, 0)] = aa;
            a[(1, 2)] = aa;
            a[(2, 1)] = aa;
            // a[(0,2)] stays 0: the (1,3) pair has no quartic term.

            let bb = root / denom;
            b[(0, 1)] = bb;
            b[(1, 0)] = eps1 * bb;
            b[(0, 2)] = 2.0;
            b[(2, 1)] = bb;
            // b[(1,2)] and b[(2,0)] stay 0.

            let ee = eps1 * eps2 * kp * root / denom;
            e[(0, 1)] = ee;
            e[(1, 0)] = ee;
            e[(0, 2)] = eps1 * eps2 * 2.0 * kp;
            e[(2, 0)] = e[(0, 2)];
            // e[(1,2)] and e[(2,1)] stay 0.
        }
    }
    Ok(CurveCoeffs { m, a, b, e })
}

/// Residual of the defining biquadratic relation for every coordinate pair,
/// in homogeneous form so poles contribute honestly:
/// with z_j = s_j/c_j on the unit circle, entry (j, l) is
/// |a s_j^2 s_l^2 + b_jl s_j^2 c_l^2 - 2 s_j c_j s_l c_l + b_lj c_j^2 s_l^2 + e c_j^2 c_l^2|.
pub fn relation_residual(coeffs: &CurveCoeffs, z: &[ProjectiveValue]) -> DMatrix<f64> {
    assert_eq!(coeffs.m, z.len(), "coefficient size vs value count");
    let m = coeffs.m;
    let mut r = DMatrix::<f64>::zeros(m, m);
    for j in 0..m {
        for l in 0..m {
            if j == l {
                continue;
            }
            let (sj, cj) = (z[j].num(), z[j].den());
            let (sl, cl) = (z[l].num(), z[l].den());
            r[(j, l)] = (coeffs.a[(j, l)] * sj * sj * sl * sl
                + coeffs.b[(j, l)] * sj * sj * cl * cl
                - 2.0 * sj * cj * sl * cl
                + coeffs.b[(l, j)] * cj * cj * sl * sl
                + coeffs.e[(j, l)] * cj * cj * cl * cl)
                .abs();
        }
    }
    r
}

/// Verdict of the per-pair realisability screens.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PairVerdict {
    Pass,
    /// The quartic discriminant combination is not strictly positive; the
    /// relation cannot bound a genuine flex.
    FailInequality,
    /// All of a, -b_jl, -b_lj, e share a strict sign while a*e >= 1 or
    /// b_jl*b_lj >= 1; such a relation has no realisable branch.
    FailSignLemma,
}

#[derive(Debug, Clone)]
pub struct ScreenReport {
    /// m x m, diagonal Pass. The sign screen takes precedence when both
    /// screens would fire.
    pub verdicts: Vec<Vec<PairVerdict>>,
}

impl ScreenReport {
    pub fn all_pass(&self) -> bool {
        self.verdicts
            .iter()
            .all(|row| row.iter().all(|v| *v == PairVerdict::Pass))
    }

    pub fn first_failure(&self) -> Option<(usize, usize, PairVerdict)> {
        for (j, row) in self.verdicts.iter().enumerate() {
            for (l, v) in row.iter().enumerate() {
                if *v != PairVerdict::Pass {
                    return Some((j, l, *v));
                }
            }
        }
        None
    }
}

/// Screens every coordinate pair for realisability.
pub fn realisable_screen(c: &CurveCoeffs) -> ScreenReport {
    let m = c.m;
    let mut verdicts = vec![vec![PairVerdict::Pass; m]; m];
    for j in 0..m {
        for l in 0..m {
            if j == l {
                continue;
            }
            let (a, bjl, blj, e) = (c.a[(j, l)], c.b[(j, l)], c.b[(l, j)], c.e[(j, l)]);
            // The sign screen takes precedence: it can fire on the boundary
            // of the inequality screen and carries the sharper diagnosis.
            let same_strict_sign = (a > 0.0 && -bjl > 0.0 && -blj > 0.0 && e > 0.0)
                || (a < 0.0 && -bjl < 0.0 && -blj < 0.0 && e < 0.0);
            if same_strict_sign && (a * e >= 1.0 || bjl * blj >= 1.0) {
                verdicts[j][l] = PairVerdict::FailSignLemma;
                continue;
            }
            let q = 1.0 - a * e - bjl * blj;
            if q * q - 4.0 * a * bjl * blj * e <= 0.0 {
                verdicts[j][l] = PairVerdict::FailInequality;
            }
        }
    }
    ScreenReport { verdicts }
}

/// Elliptic parameters recovered from coefficient matrices.
#[derive(Debug, Clone, Serialize)]
pub struct EllipticFit {
    /// The pair invariant k'^2 + 1/k'^2; +infinity on the degenerate branch.
    pub kappa: f64,
    /// Recovered modulus; exactly 1.0 on the degenerate (rational) branch.
    pub k: f64,
    /// Coordinate scalings relating the input to the canonical all-dn form:
    /// input z_j = nu_j * dn(u - sigma_j). On the degenerate branch, nu_j is
    /// the scale 2 sqrt(mu_j) relating the rational form to the
    /// hyperbolic-secant degeneration.
    pub nu: Vec<f64>,
    /// Recovered shifts, sigma_1 = 0 by convention.
    pub sigma: Vec<f64>,
}

/// Canonical all-dn coefficient for one pair; used to resolve shift signs
/// and for the final round-trip gate.
fn dn_pair_a(k: f64, delta: f64) -> f64 {
    let (sn, _, dn) = sn_cn_dn(delta, k);
    sn * sn / dn
}

/// Recovers (k, sigma, nu) from coefficient matrices of a curve of the
/// all-dn first elliptic kind, possibly scaled coordinate-wise.
///
/// The pair invariant kappa = ((1 - ae - bb')^2 - 2abb'e)/(abb'e) must agree
/// across pairs; k' then solves k'^2 + 1/k'^2 = kappa inside (0, 1). Shifts
/// come from the closed form dn(sigma) = 1/(xi + eta): the quantities
/// xi = (1 - ae - bb')/((1+k'^2) sqrt(bb')) and eta = sqrt(bb') reproduce
/// sn^2(sigma)/dn(sigma) and cn^2(sigma)/dn(sigma), whose sum over dn is
/// sn^2 + cn^2 = 1. Signs of shifts beyond the second are fixed against the
/// second row of pairs, and a full regenerate-and-compare guards the result.
///
/// When every quartic coefficient a vanishes, the family degenerates to the
/// rational one; the fit then returns modulus 1 with mu recovered from the
/// b-ratios and the e-scale.
pub fn fit_elliptic(c: &CurveCoeffs) -> Result<EllipticFit> {
    let m = c.m;
    if m < 2 {
        return Err(Error::Invalid("fit needs at least two coordinates".into()));
    }
    let scale = c.scale();
    let degenerate = |j: usize, l: usize| c.a[(j, l)].abs() <= COEFF_ZERO_TOL * scale;
    let all_degenerate = (0..m)
        .flat_map(|j| ((j + 1)..m).map(move |l| (j, l)))
        .all(|(j, l)| degenerate(j, l));
    if all_degenerate {
        return fit_degenerate(c);
    }
    if (0..m)
        .flat_map(|j| ((j + 1)..m).map(move |l| (j, l)))
        .any(|(j, l)| degenerate(j, l))
    {
        return Err(Error::NotSingleFamily(
            "some pairs have a vanishing quartic coefficient and some do not".into(),
        ));
    }

    let kappa_of = |j: usize, l: usize| -> f64 {
        let (a, bjl, blj, e) = (c.a[(j, l)], c.b[(j, l)], c.b[(l, j)], c.e[(j, l)]);
        let q = 1.0 - a * e - bjl * blj;
        let den = a * bjl * blj * e;
        (q * q - 2.0 * den) / den
    };
    let kappa = kappa_of(0, 1);
    for j in 0..m {
        for l in (j + 1)..m {
            let kjl = kappa_of(j, l);
            if (kjl - kappa).abs() > COEFF_MATCH_TOL * kappa.abs().max(1.0) {
                return Err(Error::NotSingleFamily(format!(
                    "pair invariant differs across pairs: {kappa} for (1,2) vs {kjl} for \
                     ({},{})",
                    j + 1,
                    l + 1
                )));
            }
        }
    }
    if kappa <= 2.0 {
        return Err(Error::NoRealModulus(format!(
            "pair invariant {kappa} is at most 2, which no modulus in (0, 1) attains"
        )));
    }

    let kp2 = 0.5 * (kappa - (kappa * kappa - 4.0).sqrt());
    let kp = kp2.sqrt();
    let k = ((1.0 - kp) * (1.0 + kp)).sqrt();
    let opk2 = 1.0 + kp2;

    let inv = |j: usize, l: usize| 1.0 - c.a[(j, l)] * c.e[(j, l)] - c.b[(j, l)] * c.b[(l, j)];

    let mut nu = vec![0.0; m];
    let r0 = inv(0, 1) / (opk2 * c.a[(0, 1)] * c.b[(0, 1)]);
    if r0 <= 0.0 {
        return Err(Error::Fit(format!(
            "first scaling would be imaginary (radicand {r0}); coefficients are outside the \
             fitted family"
        )));
    }
    nu[0] = r0.sqrt();
    for l in 1..m {
        let r = inv(0, l) / (opk2 * c.a[(0, l)] * c.b[(l, 0)]);
        if r <= 0.0 {
            return Err(Error::Fit(format!(
                "scaling {} would be imaginary (radicand {r}); coefficients are outside the \
                 fitted family",
                l + 1
            )));
        }
        nu[l] = r.sqrt();
    }

    let mut sigma = vec![0.0; m];
    for l in 1..m {
        let bp = c.b[(0, l)] * c.b[(l, 0)];
        if bp <= 0.0 {
            return Err(Error::Fit(format!(
                "b-product of pair (1,{}) is not positive; coefficients are outside the \
                 fitted family",
                l + 1
            )));
        }
        let eta = bp.sqrt();
        let xi = inv(0, l) / (opk2 * eta);
        let d = 1.0 / (xi + eta);
        if !(d > kp && d < 1.0) {
            return Err(Error::Fit(format!(
                "recovered dn value {d} for shift {} falls outside (k', 1)",
                l + 1
            )));
        }
        sigma[l] = inverse_dn(d, k)?;
    }

    // Pair (1, l) data is even in sigma_l, so the sign of every shift after
    // the second comes from comparing against the second row of pairs.
    // sigma_2 > 0 is a free convention (the simultaneous reflection of all
    // shifts is a reparametrization of the same curve).
    for l in 2..m {
        let target = c.a[(1, l)] * nu[1] * nu[l];
        let plus = (dn_pair_a(k, sigma[1] - sigma[l]) - target).abs();
        let minus = (dn_pair_a(k, sigma[1] + sigma[l]) - target).abs();
        if minus < plus {
            sigma[l] = -sigma[l];
        }
    }

    // Round-trip gate: regenerate the canonical matrices, re-apply the
    // recovered scalings, and demand agreement with the input.
    let canonical = coeffs(&EpbqCurve::EllipticFirst {
        k,
        sigma: sigma.clone(),
        m_prime: m,
    })?;
    let mut worst = 0.0_f64;
    for j in 0..m {
        for l in 0..m {
            if j == l {
                continue;
            }
            let da = c.a[(j, l)] - canonical.a[(j, l)] / (nu[j] * nu[l]);
            let db = c.b[(j, l)] - canonical.b[(j, l)] * nu[l] / nu[j];
            let de = c.e[(j, l)] - canonical.e[(j, l)] * nu[j] * nu[l];
            worst = worst.max(da.abs()).max(db.abs()).max(de.abs());
        }
    }
    if worst > COEFF_MATCH_TOL * scale {
        return Err(Error::Fit(format!(
            "regenerated coefficients differ from the input by {worst:.3e} \
             (allowed {:.1e})",
            COEFF_MATCH_TOL * scale
        )));
    }

    Ok(EllipticFit { kappa, k, nu, sigma })
}

/// Degenerate branch of the fit: all quartic coefficients vanish, so the
/// coefficients belong to a rational curve (the modulus-1 limit). Recovers
/// mu from b-ratios and the e-scale, restricted to the all-positive chamber
/// that the all-dn family degenerates onto.
fn fit_degenerate(c: &CurveCoeffs) -> Result<EllipticFit> {
    let m = c.m;
    let scale = c.scale();
    // mu_l / mu_1 from b_1l / b_l1.
    let mut ratio = vec![1.0; m];
    for l in 1..m {
        if c.b[(l, 0)].abs() <= COEFF_ZERO_TOL * scale {
            return Err(Error::Fit(format!(
                "b entry ({},1) vanishes; the degenerate fit needs nonzero b entries",
                l + 1
            )));
        }
        ratio[l] = c.b[(0, l)] / c.b[(l, 0)];
        if ratio[l] <= 0.0 {
            return Err(Error::Fit(format!(
                "negative mu ratio for coordinate {}; only the positive chamber of the \
                 degeneration is fitted",
                l + 1
            )));
        }
    }
    // Absolute scale of mu from e_1l = 2 mu_1 (1 - r)^2 / (1 + r).
    let mut mu1 = None;
    for l in 1..m {
        let r = ratio[l];
        if (r - 1.0).abs() < 1e-9 {
            continue; // coincident mu would not be a valid curve anyway
        }
        let cand = c.e[(0, l)] * (1.0 + r) / (2.0 * (1.0 - r).powi(2));
        match mu1 {
            None => mu1 = Some(cand),
            Some(prev) => {
                if (cand - prev).abs() > COEFF_MATCH_TOL * prev.abs().max(1.0) {
                    return Err(Error::NotSingleFamily(format!(
                        "degenerate-branch scales disagree: {prev} vs {cand}"
                    )));
                }
            }
        }
    }
    let mu1 = mu1.ok_or_else(|| Error::Fit("cannot determine the mu scale".into()))?;
    if mu1 <= 0.0 {
        return Err(Error::Fit(
            "recovered mu_1 is not positive; only the positive chamber is fitted".into(),
        ));
    }
    let mu: Vec<f64> = ratio.iter().map(|r| mu1 * r).collect();

    let rebuilt = coeffs(&EpbqCurve::Rational { mu: mu.clone() })?;
    let mut worst = 0.0_f64;
    for j in 0..m {
        for l in 0..m {
            if j == l {
                continue;
            }
            worst = worst.max((c.a[(j, l)] - rebuilt.a[(j, l)]).abs());
            worst = worst.max((c.b[(j, l)] - rebuilt.b[(j, l)]).abs());
            worst = worst.max((c.e[(j, l)] - rebuilt.e[(j, l)]).abs());
        }
    }
    if worst > COEFF_MATCH_TOL * scale {
        return Err(Error::Fit(format!(
            "regenerated degenerate coefficients differ from the input by {worst:.3e}"
        )));
    }

    let sigma: Vec<f64> = mu.iter().map(|&v| 0.5 * (v / mu[0]).ln()).collect();
    let nu: Vec<f64> = mu.iter().map(|&v| 2.0 * v.sqrt()).collect();
    Ok(EllipticFit {
        kappa: f64::INFINITY,
        k: 1.0,
        nu,
        sigma,
    })
}
