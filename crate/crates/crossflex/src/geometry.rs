//! Ambient vector spaces for the three model geometries, their bilinear
//! forms, model distances, and Gram-matrix factorization.
//!
//! Conventions fixed here and relied on everywhere else:
//! * euclidean n-space lives in R^n with the standard dot product;
//! * spherical n-space is the unit sphere in R^(n+1);
//! * hyperbolic n-space is the sheet (x,x) = -1, x_last > 0 of the quadric in
//!   R^(n+1) whose bilinear form negates the LAST coordinate.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Residual allowed between a clamped arccos/arccosh argument and its domain
/// before the input is rejected as corrupted geometry.
pub const CLAMP_RESIDUAL_MAX: f64 = 1e-8;
/// Max-norm residual required of every Gram factorization.
pub const GRAM_RESIDUAL_MAX: f64 = 1e-10;
/// Eigenvalues within this (scaled by the spectral radius, floored at 1) of
/// zero are treated as zero when a factorization checks its requested
/// signature.
pub const EIGENVALUE_CLIP: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SpaceKind {
    Euclidean,
    Spherical,
    Hyperbolic,
}

impl SpaceKind {
    /// +1 for spherical, -1 for hyperbolic; the curvature sign that enters
    /// the unit-vertex conditions. Euclidean has no such sign.
    pub fn curvature_sign(self) -> Option<f64> {
        match self {
            SpaceKind::Euclidean => None,
            SpaceKind::Spherical => Some(1.0),
            SpaceKind::Hyperbolic => Some(-1.0),
        }
    }
}

impl std::fmt::Display for SpaceKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            SpaceKind::Euclidean => "euclidean",
            SpaceKind::Spherical => "spherical",
            SpaceKind::Hyperbolic => "hyperbolic",
        };
        f.write_str(s)
    }
}

/// A model geometry of intrinsic dimension `n >= 3` together with its ambient
/// vector space.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct AmbientSpace {
    pub kind: SpaceKind,
    pub n: usize,
}

impl AmbientSpace {
    pub fn new(kind: SpaceKind, n: usize) -> Result<Self> {
        if n < 3 {
            return Err(Error::Invalid(format!(
                "intrinsic dimension must be at least 3, got {n} \
                 (n = 2 collapses to the flexing parallelogram and is out of scope)"
            )));
        }
        Ok(AmbientSpace { kind, n })
    }

    /// Dimension of the ambient vector space holding the model.
    pub fn ambient_dim(&self) -> usize {
        match self.kind {
            SpaceKind::Euclidean => self.n,
            SpaceKind::Spherical | SpaceKind::Hyperbolic => self.n + 1,
        }
    }

    /// Index of the timelike coordinate, if the form is indefinite.
    /// By convention it is always the last ambient coordinate.
    pub fn time_index(&self) -> Option<usize> {
        match self.kind {
            SpaceKind::Hyperbolic => Some(self.ambient_dim() - 1),
            _ => None,
        }
    }
}

/// A vector of the ambient space (a model point, a normal, or a direction;
/// model-point constraints are checked where an operation needs them).
#[derive(Debug, Clone, PartialEq)]
pub struct AmbientVector {
    pub space: AmbientSpace,
    pub coords: DVector<f64>,
}

impl AmbientVector {
    pub fn new(space: AmbientSpace, coords: DVector<f64>) -> Result<Self> {
        if coords.len() != space.ambient_dim() {
            return Err(Error::DimensionMismatch(format!(
                "expected {} ambient coordinates, got {}",
                space.ambient_dim(),
                coords.len()
            )));
        }
        Ok(AmbientVector { space, coords })
    }

    pub fn zero(space: AmbientSpace) -> Self {
        AmbientVector {
            space,
            coords: DVector::zeros(space.ambient_dim()),
        }
    }

    /// Signed residual of the model-point equation: (x,x) - 1 spherically,
    /// (x,x) + 1 hyperbolically, 0 for euclidean points (unconstrained).
    pub fn model_residual(&self) -> f64 {
        match self.space.kind.curvature_sign() {
            None => 0.0,
            Some(eps) => bilinear_raw(self.space, &self.coords, &self.coords) - eps,
        }
    }

    /// Errors unless this is a valid model point: on the quadric within
    /// [`CLAMP_RESIDUAL_MAX`], and on the forward sheet for hyperbolic space.
    pub fn check_model_point(&self) -> Result<()> {
        let residual = self.model_residual().abs();
        if residual > CLAMP_RESIDUAL_MAX {
            return Err(Error::OffManifold {
                residual,
                limit: CLAMP_RESIDUAL_MAX,
            });
        }
        if let Some(t) = self.space.time_index() {
            if self.coords[t] <= 0.0 {
                return Err(Error::Domain(format!(
                    "hyperbolic point lies on the wrong sheet (timelike coordinate {})",
                    self.coords[t]
                )));
            }
        }
        Ok(())
    }
}

fn bilinear_raw(space: AmbientSpace, x: &DVector<f64>, y: &DVector<f64>) -> f64 {
    match space.time_index() {
        None => x.dot(y),
        Some(t) => {
            let mut s = 0.0;
            for i in 0..t {
                s += x[i] * y[i];
            }
            s - x[t] * y[t]
        }
    }
}

/// The bilinear form of the ambient space: the dot product, except that the
/// last coordinate enters negatively in hyperbolic space.
pub fn bilinear(x: &AmbientVector, y: &AmbientVector) -> Result<f64> {
    if x.space != y.space {
        return Err(Error::DimensionMismatch(format!(
            "bilinear form across different spaces: {:?} vs {:?}",
            x.space, y.space
        )));
    }
    Ok(bilinear_raw(x.space, &x.coords, &y.coords))
}

/// Geodesic distance between two model points (radians on the sphere).
///
/// The inverse-trig argument is clamped to its domain, but only after
/// checking it is within [`CLAMP_RESIDUAL_MAX`] of it; a larger excess means
/// the inputs are not actually model points and is rejected.
pub fn distance(x: &AmbientVector, y: &AmbientVector) -> Result<f64> {
    if x.space != y.space {
        return Err(Error::DimensionMismatch(
            "distance between points of different spaces".into(),
        ));
    }
    x.check_model_point()?;
    y.check_model_point()?;
    match x.space.kind {
        SpaceKind::Euclidean => {
            // (x_i - y_i)^2 == (y_i - x_i)^2 exactly, so symmetry is exact.
            let d = &x.coords - &y.coords;
            Ok(d.dot(&d).sqrt())
        }
        SpaceKind::Spherical => {
            let c = bilinear_raw(x.space, &x.coords, &y.coords);
            if c.abs() > 1.0 + CLAMP_RESIDUAL_MAX {
                return Err(Error::OffManifold {
                    residual: c.abs() - 1.0,
                    limit: CLAMP_RESIDUAL_MAX,
                });
            }
            Ok(c.clamp(-1.0, 1.0).acos())
        }
        SpaceKind::Hyperbolic => {
            let c = -bilinear_raw(x.space, &x.coords, &y.coords);
            if c < 1.0 - CLAMP_RESIDUAL_MAX {
                return Err(Error::OffManifold {
                    residual: 1.0 - c,
                    limit: CLAMP_RESIDUAL_MAX,
                });
            }
            Ok(c.max(1.0).acosh())
        }
    }
}

/// Signature a caller asserts for a matrix handed to [`gram_factorize`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GramSignature {
    /// All eigenvalues positive: the spherical case.
    PosDef,
    /// Exactly one zero eigenvalue, the rest positive: the euclidean case.
    PosSemidefRankNMinus1,
    /// Exactly one negative eigenvalue, the rest positive: the hyperbolic case.
    Lorentzian,
}

/// Result of factorizing a Gram matrix: vectors realising it, plus a unit
/// vector orthogonal to all of them under the same form.
#[derive(Debug, Clone)]
pub struct GramFactorization {
    /// `normals[p]` realises row/column `p` of the input matrix.
    pub normals: Vec<AmbientVector>,
    /// Unit vector with `bilinear(m, normals[p]) = 0` for every `p`.
    pub m: AmbientVector,
}

/// Produces vectors n_1..n_n in the matching ambient space whose pairwise
/// bilinear products reproduce `g`, together with the unit orthogonal
/// direction `m`.
///
/// Placement convention (everything is unique only up to isometry, so one is
/// fixed): eigenvalues sorted descending occupy the leading coordinates;
/// the zero/negative eigendirection maps to the last spatial/timelike
/// coordinate respectively; `m` is the last spatial basis vector not used by
/// the normals.
pub fn gram_factorize(g: &DMatrix<f64>, signature: GramSignature) -> Result<GramFactorization> {
    let n = g.nrows();
    if g.ncols() != n {
        return Err(Error::DimensionMismatch(format!(
            "gram matrix must be square, got {}x{}",
            n,
            g.ncols()
        )));
    }
    if n < 3 {
        return Err(Error::Invalid(format!("gram matrix must be at least 3x3, got {n}x{n}")));
    }
    let asym = (g - g.transpose()).amax();
    if asym > 1e-12 {
        return Err(Error::Invalid(format!(
            "gram matrix is not symmetric (max asymmetry {asym:.3e})"
        )));
    }

    let eig = g.clone().symmetric_eigen();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| {
        eig.eigenvalues[j]
            .partial_cmp(&eig.eigenvalues[i])
            .expect("eigenvalues are finite")
    });
    let lambda: Vec<f64> = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let scale = lambda.iter().fold(1.0_f64, |m, l| m.max(l.abs()));
    let clip = EIGENVALUE_CLIP * scale;

    let space = match signature {
        GramSignature::PosDef => {
            if lambda[n - 1] <= clip {
                return Err(Error::Signature(format!(
                    "matrix is not positive definite: smallest eigenvalue {:.6e}",
                    lambda[n - 1]
                )));
            }
            AmbientSpace::new(SpaceKind::Spherical, n)?
        }
        GramSignature::PosSemidefRankNMinus1 => {
            // The near-zero eigenvalue of a numerically degenerate matrix can
            // sit well above roundoff; accept it as the intended kernel as
            // long as it is far below the positive part of the spectrum.
            if lambda[n - 2] <= clip {
                return Err(Error::Signature(format!(
                    "matrix has rank below {} (eigenvalues {:?})",
                    n - 1,
                    lambda
                )));
            }
            if lambda[n - 1].abs() > 1e-6 * scale {
                return Err(Error::Signature(format!(
                    "matrix is not rank-deficient: smallest eigenvalue {:.6e}",
                    lambda[n - 1]
                )));
            }
            AmbientSpace::new(SpaceKind::Euclidean, n)?
        }
        GramSignature::Lorentzian => {
            if lambda[n - 1] >= -clip {
                return Err(Error::Signature(format!(
                    "matrix has no negative eigenvalue: smallest is {:.6e}",
                    lambda[n - 1]
                )));
            }
            if lambda[n - 2] <= clip {
                return Err(Error::Signature(format!(
                    "matrix has more than one non-positive eigenvalue: {:?}",
                    lambda
                )));
            }
            AmbientSpace::new(SpaceKind::Hyperbolic, n)?
        }
    };

    let dim = space.ambient_dim();
    // Row `r` of `rows` holds sqrt(|lambda|) times the eigenvector, placed in
    // the ambient coordinate that carries its sign.
    let mut normals_mat = DMatrix::<f64>::zeros(dim, n);
    let mut next_spatial = 0usize;
    for (slot, &src) in order.iter().enumerate() {
        let l = lambda[slot];
        let (coord, factor) = match signature {
            GramSignature::PosDef => (slot, l.sqrt()),
            GramSignature::PosSemidefRankNMinus1 => {
                if slot == n - 1 {
                    continue; // kernel direction: clamped to zero, occupies no coordinate
                }
                (slot, l.max(0.0).sqrt())
            }
            GramSignature::Lorentzian => {
                if slot == n - 1 {
                    (space.time_index().expect("hyperbolic has a time index"), (-l).sqrt())
                } else {
                    let c = next_spatial;
                    next_spatial += 1;
                    (c, l.sqrt())
                }
            }
        };
        for p in 0..n {
            normals_mat[(coord, p)] = factor * eig.eigenvectors[(p, src)];
        }
    }

    // m: the one spatial coordinate no normal touches. For pos-def that is
    // the appended (n+1)-th coordinate, otherwise the last spatial one.
    let m_index = match signature {
        GramSignature::PosDef => n,
        GramSignature::PosSemidefRankNMinus1 => n - 1,
        GramSignature::Lorentzian => n - 1,
    };
    let mut m = AmbientVector::zero(space);
    m.coords[m_index] = 1.0;

    let normals: Vec<AmbientVector> = (0..n)
        .map(|p| AmbientVector {
            space,
            coords: normals_mat.column(p).into_owned(),
        })
        .collect();

    let mut residual = 0.0_f64;
    for p in 0..n {
        for q in p..n {
            let got = bilinear_raw(space, &normals[p].coords, &normals[q].coords);
            residual = residual.max((got - g[(p, q)]).abs());
        }
        residual = residual.max(bilinear_raw(space, &normals[p].coords, &m.coords).abs());
    }
    if residual > GRAM_RESIDUAL_MAX {
        return Err(Error::Signature(format!(
            "factorization residual {residual:.3e} exceeds {GRAM_RESIDUAL_MAX:.1e}; \
             the matrix does not have the requested signature to working precision"
        )));
    }

    Ok(GramFactorization { normals, m })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn space(kind: SpaceKind, n: usize) -> AmbientSpace {
        AmbientSpace::new(kind, n).unwrap()
    }

    fn vec3(space: AmbientSpace, coords: &[f64]) -> AmbientVector {
        AmbientVector::new(space, DVector::from_row_slice(coords)).unwrap()
    }

    #[test]
    fn rejects_small_dimension() {
        assert!(AmbientSpace::new(SpaceKind::Euclidean, 2).is_err());
        assert!(AmbientSpace::new(SpaceKind::Hyperbolic, 3).is_ok());
    }

    #[test]
    fn bilinear_signatures() {
        let e = space(SpaceKind::Euclidean, 3);
        let x = vec3(e, &[1.0, 0.0, 0.0]);
        let y = vec3(e, &[0.0, 1.0, 0.0]);
        assert_eq!(bilinear(&x, &y).unwrap(), 0.0);

        let s = space(SpaceKind::Spherical, 3);
        let x = vec3(s, &[1.0, 0.0, 0.0, 0.0]);
        assert_eq!(bilinear(&x, &x).unwrap(), 1.0);

        let h = space(SpaceKind::Hyperbolic, 3);
        let x = vec3(h, &[0.0, 0.0, 0.0, 1.0]);
        assert_eq!(bilinear(&x, &x).unwrap(), -1.0);
    }

    #[test]
    fn bilinear_rejects_mixed_spaces() {
        let e = vec3(space(SpaceKind::Euclidean, 3), &[1.0, 0.0, 0.0]);
        let s = vec3(space(SpaceKind::Spherical, 3), &[1.0, 0.0, 0.0, 0.0]);
        assert!(bilinear(&e, &s).is_err());
    }

    #[test]
    fn euclidean_distance_pythagorean() {
        let e = space(SpaceKind::Euclidean, 3);
        let x = vec3(e, &[0.0, 0.0, 0.0]);
        let y = vec3(e, &[3.0, 4.0, 0.0]);
        assert_eq!(distance(&x, &y).unwrap(), 5.0);
    }

    #[test]
    fn spherical_distance_antipodal() {
        let s = space(SpaceKind::Spherical, 3);
        let x = vec3(s, &[1.0, 0.0, 0.0, 0.0]);
        let y = vec3(s, &[-1.0, 0.0, 0.0, 0.0]);
        assert!((distance(&x, &y).unwrap() - std::f64::consts::PI).abs() < 1e-15);
    }

    #[test]
    fn hyperbolic_distance_to_self_is_zero() {
        let h = space(SpaceKind::Hyperbolic, 3);
        let x = vec3(h, &[0.3, 0.1, -0.2, (1.0_f64 + 0.09 + 0.01 + 0.04).sqrt()]);
        assert_eq!(distance(&x, &x).unwrap(), 0.0);
    }

    #[test]
    fn distance_symmetry_bitwise() {
        let s = space(SpaceKind::Spherical, 3);
        let raw = DVector::from_row_slice(&[0.3, -0.5, 0.7, 0.2]);
        let x = AmbientVector::new(s, raw.clone().normalize()).unwrap();
        let raw2 = DVector::from_row_slice(&[-0.1, 0.9, 0.2, 0.4]);
        let y = AmbientVector::new(s, raw2.normalize()).unwrap();
        assert_eq!(distance(&x, &y).unwrap(), distance(&y, &x).unwrap());

        let h = space(SpaceKind::Hyperbolic, 3);
        let lift = |sp: &[f64]| {
            let t = (1.0 + sp.iter().map(|v| v * v).sum::<f64>()).sqrt();
            let mut c = sp.to_vec();
            c.push(t);
            AmbientVector::new(h, DVector::from_vec(c)).unwrap()
        };
        let x = lift(&[0.4, -0.2, 0.6]);
        let y = lift(&[-0.3, 0.5, 0.1]);
        assert_eq!(distance(&x, &y).unwrap(), distance(&y, &x).unwrap());
    }

    #[test]
    fn distance_rejects_far_off_sphere() {
        let s = space(SpaceKind::Spherical, 3);
        let x = vec3(s, &[1.1, 0.0, 0.0, 0.0]);
        let y = vec3(s, &[1.0, 0.0, 0.0, 0.0]);
        assert!(matches!(distance(&x, &y), Err(Error::OffManifold { .. })));
    }

    #[test]
    fn distance_rejects_wrong_sheet() {
        let h = space(SpaceKind::Hyperbolic, 3);
        let x = vec3(h, &[0.0, 0.0, 0.0, -1.0]);
        let y = vec3(h, &[0.0, 0.0, 0.0, 1.0]);
        assert!(distance(&x, &y).is_err());
    }

    #[test]
    fn factorize_identity_pos_def() {
        let g = DMatrix::<f64>::identity(3, 3);
        let f = gram_factorize(&g, GramSignature::PosDef).unwrap();
        assert_eq!(f.normals.len(), 3);
        assert_eq!(f.normals[0].space.kind, SpaceKind::Spherical);
        assert_eq!(f.normals[0].coords.len(), 4);
        for p in 0..3 {
            for q in 0..3 {
                let want = if p == q { 1.0 } else { 0.0 };
                let got = bilinear(&f.normals[p], &f.normals[q]).unwrap();
                assert!((got - want).abs() < 1e-14);
            }
            assert!(bilinear(&f.normals[p], &f.m).unwrap().abs() < 1e-14);
        }
        assert!((bilinear(&f.m, &f.m).unwrap() - 1.0).abs() < 1e-14);
    }

    #[test]
    fn factorize_rejects_wrong_signature() {
        // det < 0, so not positive definite.
        let mut g = DMatrix::<f64>::identity(3, 3);
        g[(0, 1)] = 2.0;
        g[(1, 0)] = 2.0;
        assert!(matches!(
            gram_factorize(&g, GramSignature::PosDef),
            Err(Error::Signature(_))
        ));
    }

    #[test]
    fn factorize_equilateral_degenerate() {
        // Unit-diagonal with -1/2 off-diagonal: rank 2, kernel (1,1,1).
        let mut g = DMatrix::<f64>::from_element(3, 3, -0.5);
        g.fill_diagonal(1.0);
        let f = gram_factorize(&g, GramSignature::PosSemidefRankNMinus1).unwrap();
        assert_eq!(f.normals[0].space.kind, SpaceKind::Euclidean);
        assert_eq!(f.normals[0].coords.len(), 3);
        let sum = &f.normals[0].coords + &f.normals[1].coords + &f.normals[2].coords;
        assert!(sum.amax() < 1e-12);
        for p in 0..3 {
            for q in 0..3 {
                let got = bilinear(&f.normals[p], &f.normals[q]).unwrap();
                assert!((got - g[(p, q)]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn factorize_lorentzian_reproduces_gram() {
        // Indefinite unit-diagonal matrix with one negative eigenvalue.
        let mut g = DMatrix::<f64>::identity(3, 3);
        g[(0, 1)] = 1.2;
        g[(1, 0)] = 1.2;
        g[(1, 2)] = 0.3;
        g[(2, 1)] = 0.3;
        let f = gram_factorize(&g, GramSignature::Lorentzian).unwrap();
        assert_eq!(f.normals[0].space.kind, SpaceKind::Hyperbolic);
        let mut max_res = 0.0_f64;
        for p in 0..3 {
            for q in 0..3 {
                let got = bilinear(&f.normals[p], &f.normals[q]).unwrap();
                max_res = max_res.max((got - g[(p, q)]).abs());
            }
            max_res = max_res.max(bilinear(&f.normals[p], &f.m).unwrap().abs());
        }
        assert!(max_res < GRAM_RESIDUAL_MAX, "residual {max_res}");
        // normals are spacelike, m is a unit spatial vector
        for p in 0..3 {
            assert!(bilinear(&f.normals[p], &f.normals[p]).unwrap() > 0.0);
        }
        assert!((bilinear(&f.m, &f.m).unwrap() - 1.0).abs() < 1e-14);
    }

    #[test]
    fn factorize_random_gram_round_trip() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        for trial in 0..50 {
            let n = 3 + (trial % 3);
            // Build G = V V^T with unit diagonal by normalising random rows.
            let v = DMatrix::<f64>::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0));
            let mut g = &v * v.transpose();
            let d: Vec<f64> = (0..n).map(|i| g[(i, i)].sqrt()).collect();
            for p in 0..n {
                for q in 0..n {
                    g[(p, q)] /= d[p] * d[q];
                }
            }
            if g.clone().symmetric_eigen().eigenvalues.min() < 1e-6 {
                continue; // nearly singular sample: not a pos-def test case
            }
            let f = gram_factorize(&g, GramSignature::PosDef).unwrap();
            for p in 0..n {
                for q in 0..n {
                    let got = bilinear(&f.normals[p], &f.normals[q]).unwrap();
                    assert!((got - g[(p, q)]).abs() < GRAM_RESIDUAL_MAX);
                }
            }
        }
    }
}
