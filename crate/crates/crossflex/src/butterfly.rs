//! The hinged mechanism underlying a flexible cross-polytope: a shape pair of
//! unit-diagonal matrices (G, H), membership tests for the three constant
//! curvature geometries, recovery of facet data from a shape pair, sign
//! reversions acting on shape pairs, wing placement at a dihedral angle, and
//! the classical tetrahedral-angle coefficients.

use nalgebra::{Cholesky, DMatrix, DVector, SVD};
use serde::de::Error as DeError;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::epbq::ProjectiveValue;
use crate::error::{Error, Result};
use crate::geometry::{
    bilinear, gram_factorize, AmbientSpace, AmbientVector, GramSignature, SpaceKind,
    EIGENVALUE_CLIP,
};

/// |det G| below this multiple of the largest principal minor counts as rank
/// n-1. The flat stratum has measure zero, so honest flat inputs come from
/// constructions that land on it analytically; a relative threshold keeps the
/// test meaningful across matrix scales.
pub const DET_ZERO_TOL: f64 = 1e-9;

/// Relative least-squares residual below which a row of H counts as lying in
/// the row space of a singular G. Rows inside the span leave no room for a
/// wing altitude, so they disqualify the flat geometry.
pub const ROW_SPAN_TOL: f64 = 1e-8;

/// Kernel entries or altitude-sum values smaller than this signal a
/// degenerate mechanism (an altitude escaping to infinity) and are rejected.
pub const DEGENERACY_TOL: f64 = 1e-10;

/// Slack accepted when validating symmetry and unit diagonals of an incoming
/// shape pair; entries are snapped afterwards so the invariants hold exactly.
pub const SHAPE_INPUT_TOL: f64 = 1e-9;

/// Shape pair of a hinged mechanism: G is the Gram matrix of the unit facet
/// normals, H collects the wing offsets in the normal directions. Both carry
/// unit diagonals; G is symmetric, H generally is not.
///
/// Construction symmetrises G and snaps both diagonals to exactly 1 after
/// validating that the input was within `SHAPE_INPUT_TOL` of admissible, so
/// the invariants hold exactly on every held value.
#[derive(Debug, Clone, PartialEq)]
pub struct GHPair {
    n: usize,
    g: DMatrix<f64>,
    h: DMatrix<f64>,
}

impl GHPair {
    pub fn new(g: DMatrix<f64>, h: DMatrix<f64>) -> Result<Self> {
        let n = g.nrows();
        if g.ncols() != n || h.nrows() != n || h.ncols() != n {
            return Err(Error::DimensionMismatch(format!(
                "shape pair needs square matrices of equal size, got {}x{} and {}x{}",
                g.nrows(),
                g.ncols(),
                h.nrows(),
                h.ncols()
            )));
        }
        if n < 3 {
            return Err(Error::Domain(format!(
                "hinged mechanisms need at least 3 wing pairs, got {n}"
            )));
        }
        let scale = g.iter().chain(h.iter()).fold(1.0f64, |m, v| m.max(v.abs()));
        if !scale.is_finite() {
            return Err(Error::Invalid("shape pair contains non-finite entries".into()));
        }
        for p in 0..n {
            if (g[(p, p)] - 1.0).abs() > SHAPE_INPUT_TOL || (h[(p, p)] - 1.0).abs() > SHAPE_INPUT_TOL
            {
                return Err(Error::Invalid(format!(
                    "diagonal entry {} must be 1 in both matrices (got {} and {})",
                    p + 1,
                    g[(p, p)],
                    h[(p, p)]
                )));
            }
            for q in 0..p {
                if (g[(p, q)] - g[(q, p)]).abs() > SHAPE_INPUT_TOL * scale {
                    return Err(Error::Invalid(format!(
                        "normal Gram matrix must be symmetric; entries ({},{}) and ({},{}) differ",
                        p + 1,
                        q + 1,
                        q + 1,
                        p + 1
                    )));
                }
            }
        }
        let mut g = g;
        let mut h = h;
        for p in 0..n {
            g[(p, p)] = 1.0;
            h[(p, p)] = 1.0;
            for q in 0..p {
                let s = 0.5 * (g[(p, q)] + g[(q, p)]);
                g[(p, q)] = s;
                g[(q, p)] = s;
            }
        }
        Ok(GHPair { n, g, h })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn g(&self) -> &DMatrix<f64> {
        &self.g
    }

    pub fn h(&self) -> &DMatrix<f64> {
        &self.h
    }

    /// Maximum absolute entrywise difference across both matrices.
    pub fn max_diff(&self, other: &GHPair) -> f64 {
        let dg = (&self.g - &other.g).amax();
        let dh = (&self.h - &other.h).amax();
        dg.max(dh)
    }
}

#[derive(Serialize, Deserialize)]
struct GHPairWire {
    n: usize,
    #[serde(rename = "G")]
    g: Vec<Vec<f64>>,
    #[serde(rename = "H")]
    h: Vec<Vec<f64>>,
}

pub(crate) fn rows_to_matrix(rows: &[Vec<f64>], n: usize, name: &str) -> Result<DMatrix<f64>> {
    if rows.len() != n || rows.iter().any(|r| r.len() != n) {
        return Err(Error::DimensionMismatch(format!(
            "matrix {name} must be {n}x{n} rows of numbers"
        )));
    }
    Ok(DMatrix::from_fn(n, n, |i, j| rows[i][j]))
}

pub(crate) fn matrix_to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect()
}

impl Serialize for GHPair {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        GHPairWire {
            n: self.n,
            g: matrix_to_rows(&self.g),
            h: matrix_to_rows(&self.h),
        }
        .serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for GHPair {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let wire = GHPairWire::deserialize(deserializer)?;
        let g = rows_to_matrix(&wire.g, wire.n, "G").map_err(D::Error::custom)?;
        let h = rows_to_matrix(&wire.h, wire.n, "H").map_err(D::Error::custom)?;
        GHPair::new(g, h).map_err(D::Error::custom)
    }
}

/// Verdict of the geometry membership test for a shape pair.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "verdict", rename_all = "lowercase")]
pub enum Classification {
    Spherical,
    Euclidean,
    Hyperbolic,
    None { reason: String },
}

impl Classification {
    pub fn space(&self) -> Option<SpaceKind> {
        match self {
            Classification::Spherical => Some(SpaceKind::Spherical),
            Classification::Euclidean => Some(SpaceKind::Euclidean),
            Classification::Hyperbolic => Some(SpaceKind::Hyperbolic),
            Classification::None { .. } => None,
        }
    }
}

/// Numbers the classifier based its verdict on, for reporting.
#[derive(Debug, Clone, Serialize)]
pub struct ClassifyDiagnostics {
    pub det: f64,
    pub det_tol: f64,
    /// Eigenvalues of G, ascending.
    pub eigenvalues: Vec<f64>,
    /// Smallest eigenvalue over all delete-one principal submatrices;
    /// positive exactly when every such submatrix is positive definite.
    pub minor_eig_min: f64,
    /// Largest delete-one principal minor, used to scale `det_tol`.
    pub minor_max: f64,
    /// Relative distance of each row of H from the row space of G; present
    /// only when the singular branch was taken.
    pub h_row_residuals: Option<Vec<f64>>,
    /// Quadratic form h_p G^-1 h_p^T per row; present only when the
    /// indefinite branch was taken. Negative values admit a wing altitude.
    pub altitude_forms: Option<Vec<f64>>,
}

fn sorted_eigenvalues(m: &DMatrix<f64>) -> Vec<f64> {
    let mut eigs: Vec<f64> = m.clone().symmetric_eigen().eigenvalues.iter().copied().collect();
    eigs.sort_by(|a, b| a.partial_cmp(b).unwrap());
    eigs
}

/// Smallest submatrix eigenvalue and largest minor over the n delete-one
/// principal submatrices of a symmetric matrix.
fn delete_one_minor_stats(g: &DMatrix<f64>) -> (f64, f64) {
    let n = g.nrows();
    let mut eig_min = f64::INFINITY;
    let mut minor_max = f64::NEG_INFINITY;
    for p in 0..n {
        let sub = g.clone().remove_row(p).remove_column(p);
        let eigs = sorted_eigenvalues(&sub);
        eig_min = eig_min.min(eigs[0]);
        minor_max = minor_max.max(eigs.iter().product());
    }
    (eig_min, minor_max)
}

/// Relative distance of each row of H from the row space of G, computed with
/// an orthogonal projector onto the span of the eigenvectors carrying
/// non-negligible eigenvalues.
fn h_row_span_residuals(g: &DMatrix<f64>, h: &DMatrix<f64>) -> Vec<f64> {
    let eig = g.clone().symmetric_eigen();
    let scale = eig.eigenvalues.amax().max(1.0);
    let cols: Vec<usize> = (0..eig.eigenvalues.len())
        .filter(|&i| eig.eigenvalues[i].abs() > EIGENVALUE_CLIP * scale)
        .collect();
    let mut residuals = Vec::with_capacity(h.nrows());
    for p in 0..h.nrows() {
        let row = h.row(p).transpose();
        let mut projected = DVector::zeros(row.len());
        for &i in &cols {
            let v = eig.eigenvectors.column(i);
            projected += v * v.dot(&row);
        }
        residuals.push((&row - projected).norm() / row.norm());
    }
    residuals
}

/// Decide which constant curvature geometry, if any, realises the shape pair
/// as a hinged mechanism. Total: inadmissible pairs come back as `None` with
/// a reason naming the first violated condition.
pub fn classify(pair: &GHPair) -> Classification {
    classify_with_diagnostics(pair).0
}

pub fn classify_with_diagnostics(pair: &GHPair) -> (Classification, ClassifyDiagnostics) {
    let g = pair.g();
    let eigs = sorted_eigenvalues(g);
    let det: f64 = eigs.iter().product();
    let (minor_eig_min, minor_max) = delete_one_minor_stats(g);
    let det_tol = DET_ZERO_TOL * minor_max.max(1.0);
    let minors_ok = minor_eig_min > 0.0;
    let mut diag = ClassifyDiagnostics {
        det,
        det_tol,
        eigenvalues: eigs.clone(),
        minor_eig_min,
        minor_max,
        h_row_residuals: None,
        altitude_forms: None,
    };

    if det.abs() < det_tol {
        if minors_ok {
            let residuals = h_row_span_residuals(g, pair.h());
            diag.h_row_residuals = Some(residuals.clone());
            if let Some(p) = residuals.iter().position(|&r| r <= ROW_SPAN_TOL) {
                if eigs[0] > 0.0 {
                    // Strictly positive definite despite the tiny determinant:
                    // sphere membership needs nothing further.
                    return (Classification::Spherical, diag);
                }
                return (
                    Classification::None {
                        reason: format!(
                            "G is singular and row {} of H lies in the row space of G, \
                             leaving no room for that wing's altitude",
                            p + 1
                        ),
                    },
                    diag,
                );
            }
            return (Classification::Euclidean, diag);
        }
        if eigs[0] > 0.0 {
            return (Classification::Spherical, diag);
        }
        return (
            Classification::None {
                reason: "G is singular and a delete-one principal submatrix of G fails to be \
                         positive definite"
                    .into(),
            },
            diag,
        );
    }

    if eigs[0] > 0.0 {
        return (Classification::Spherical, diag);
    }

    let negatives = eigs.iter().filter(|&&v| v < 0.0).count();
    if negatives != 1 {
        return (
            Classification::None {
                reason: format!(
                    "G has {negatives} negative eigenvalues; a hinged mechanism needs none \
                     (sphere) or exactly one (hyperboloid)"
                ),
            },
            diag,
        );
    }
    if !minors_ok {
        return (
            Classification::None {
                reason: "a delete-one principal submatrix of G fails to be positive definite"
                    .into(),
            },
            diag,
        );
    }
    let ginv = match g.clone().try_inverse() {
        Some(inv) => inv,
        None => {
            return (
                Classification::None {
                    reason: "G is numerically singular despite a nonzero determinant estimate"
                        .into(),
                },
                diag,
            )
        }
    };
    let forms: Vec<f64> = (0..pair.n())
        .map(|p| {
            let row = pair.h().row(p).transpose();
            (&ginv * &row).dot(&row)
        })
        .collect();
    diag.altitude_forms = Some(forms.clone());
    if let Some(p) = forms.iter().position(|&v| v >= 0.0) {
        return (
            Classification::None {
                reason: format!(
                    "the altitude form h_p G^-1 h_p^T at row {} is {:.6e} >= 0, so that wing \
                     admits no real altitude on the hyperboloid",
                    p + 1,
                    forms[p]
                ),
            },
            diag,
        );
    }
    (Classification::Hyperbolic, diag)
}

/// A recovered hinged mechanism: facet altitudes, wing altitudes, unit
/// normals, the hinge-orthogonal direction m, the facet vertices, the wing
/// vertices at angle zero, and the dual frame used to place them.
#[derive(Debug, Clone)]
pub struct Butterfly {
    pub space: AmbientSpace,
    /// Unit facet normals n_p.
    pub normals: Vec<AmbientVector>,
    /// Direction m orthogonal to every hinge and every normal.
    pub m_normal: AmbientVector,
    /// Facet altitude values a_p (sign carries orientation).
    pub alt_a: Vec<f64>,
    /// Wing altitude values b_p.
    pub alt_b: Vec<f64>,
    /// Facet vertices a_p.
    pub anchors_a: Vec<AmbientVector>,
    /// Wing vertices b_p at dihedral angle zero.
    pub anchors_b0: Vec<AmbientVector>,
    /// Frame dual to the normals within their span; anchors_a[p] is
    /// alt_a[p] * duals[p] in the curved geometries.
    pub duals: Vec<AmbientVector>,
}

fn ambient_from(space: AmbientSpace, coords: DVector<f64>) -> AmbientVector {
    // Coordinates are always built with the ambient dimension here.
    AmbientVector { space, coords }
}

fn combination(space: AmbientSpace, terms: &[(f64, &AmbientVector)]) -> AmbientVector {
    let mut coords = DVector::zeros(space.ambient_dim());
    for (w, v) in terms {
        coords += &v.coords * *w;
    }
    ambient_from(space, coords)
}

/// Recover a hinged mechanism realising the shape pair in the requested
/// geometry. The pair must classify into that geometry; the verdict's reason
/// is surfaced otherwise.
pub fn recover(pair: &GHPair, which: SpaceKind) -> Result<Butterfly> {
    let verdict = classify(pair);
    match (&verdict, which) {
        (Classification::Spherical, SpaceKind::Spherical)
        | (Classification::Euclidean, SpaceKind::Euclidean)
        | (Classification::Hyperbolic, SpaceKind::Hyperbolic) => {}
        (Classification::None { reason }, _) => {
            return Err(Error::NotRealisable {
                space: which,
                reason: reason.clone(),
            })
        }
        (other, _) => {
            return Err(Error::NotRealisable {
                space: which,
                reason: format!(
                    "the shape pair belongs to the {} geometry",
                    other.space().map(|s| s.to_string()).unwrap_or_default()
                ),
            })
        }
    }
    match which {
        SpaceKind::Spherical => recover_curved(pair, SpaceKind::Spherical),
        SpaceKind::Hyperbolic => recover_curved(pair, SpaceKind::Hyperbolic),
        SpaceKind::Euclidean => recover_euclidean(pair),
    }
}

/// Shared recovery for the two curved geometries, where the facet vertices
/// sit on the dual frame and the quadratic forms fix the altitudes.
fn recover_curved(pair: &GHPair, which: SpaceKind) -> Result<Butterfly> {
    let n = pair.n();
    let g = pair.g();
    let h = pair.h();
    let (signature, eps) = match which {
        SpaceKind::Spherical => (GramSignature::PosDef, 1.0),
        SpaceKind::Hyperbolic => (GramSignature::Lorentzian, -1.0),
        SpaceKind::Euclidean => unreachable!(),
    };
    let fact = gram_factorize(g, signature)?;
    let space = fact.normals[0].space;
    let ginv = match which {
        SpaceKind::Spherical => Cholesky::new(g.clone())
            .ok_or_else(|| Error::Signature("positive definite factorization failed".into()))?
            .inverse(),
        _ => g
            .clone()
            .try_inverse()
            .ok_or_else(|| Error::Signature("normal Gram matrix is not invertible".into()))?,
    };

    let duals: Vec<AmbientVector> = (0..n)
        .map(|p| {
            let terms: Vec<(f64, &AmbientVector)> =
                (0..n).map(|q| (ginv[(p, q)], &fact.normals[q])).collect();
            combination(space, &terms)
        })
        .collect();

    let mut alt_a = Vec::with_capacity(n);
    let mut alt_b = Vec::with_capacity(n);
    let mut anchors_a = Vec::with_capacity(n);
    let mut anchors_b0 = Vec::with_capacity(n);
    for p in 0..n {
        let qa = eps * ginv[(p, p)];
        if qa <= 0.0 {
            return Err(Error::Domain(format!(
                "dual vector {} has the wrong causal character for this geometry",
                p + 1
            )));
        }
        let row = h.row(p).transpose();
        let qb = eps * (&ginv * &row).dot(&row);
        if qb <= 0.0 {
            return Err(Error::Domain(format!(
                "wing direction {} has the wrong causal character for this geometry",
                p + 1
            )));
        }
        let mut a_p = qa.sqrt().recip();
        let mut b_p = qb.sqrt().recip();

        let anchor_a = combination(space, &[(a_p, &duals[p])]);
        let terms: Vec<(f64, &AmbientVector)> =
            (0..n).map(|q| (b_p * h[(p, q)], &duals[q])).collect();
        let anchor_b = combination(space, &terms);
        let (anchor_a, anchor_b) = if which == SpaceKind::Hyperbolic {
            // Both sheet representatives realise the shape pair; keep the
            // one on the positive-time sheet the model uses.
            let t = space.time_index().unwrap();
            let mut aa = anchor_a;
            let mut ab = anchor_b;
            if aa.coords[t] < 0.0 {
                aa.coords.neg_mut();
                a_p = -a_p;
            }
            if ab.coords[t] < 0.0 {
                ab.coords.neg_mut();
                b_p = -b_p;
            }
            (aa, ab)
        } else {
            (anchor_a, anchor_b)
        };
        alt_a.push(a_p);
        alt_b.push(b_p);
        anchors_a.push(anchor_a);
        anchors_b0.push(anchor_b);
    }

    Ok(Butterfly {
        space: fact.normals[0].space,
        normals: fact.normals,
        m_normal: fact.m,
        alt_a,
        alt_b,
        anchors_a,
        anchors_b0,
        duals,
    })
}

/// Euclidean recovery: the altitude reciprocals span the kernel of G, wing
/// altitudes come from the altitude-weighted row sums of H, and vertex
/// positions solve the incidence system in the flat gauge that centres the
/// facet on the origin.
fn recover_euclidean(pair: &GHPair) -> Result<Butterfly> {
    let n = pair.n();
    let g = pair.g();
    let h = pair.h();
    let fact = gram_factorize(g, GramSignature::PosSemidefRankNMinus1)?;
    let space = fact.normals[0].space;
    let dim = space.ambient_dim();

    let eig = g.clone().symmetric_eigen();
    let scale = eig.eigenvalues.amax().max(1.0);
    let mut kernel_idx = 0;
    for i in 0..n {
        if eig.eigenvalues[i].abs() < eig.eigenvalues[kernel_idx].abs() {
            kernel_idx = i;
        }
    }
    if eig.eigenvalues[kernel_idx].abs() > DET_ZERO_TOL * scale {
        return Err(Error::Signature(
            "normal Gram matrix has no kernel direction to carry the altitude reciprocals".into(),
        ));
    }
    let mut w: DVector<f64> = eig.eigenvectors.column(kernel_idx).into();
    w /= w.norm();
    if let Some(first) = w.iter().find(|v| v.abs() > DEGENERACY_TOL) {
        if *first < 0.0 {
            w.neg_mut();
        }
    }
    if let Some(p) = w.iter().position(|v| v.abs() < DEGENERACY_TOL) {
        return Err(Error::Domain(format!(
            "kernel entry {} of the normal Gram matrix vanishes, so facet altitude {} escapes \
             to infinity",
            p + 1,
            p + 1
        )));
    }

    let alt_a: Vec<f64> = w.iter().map(|v| v.recip()).collect();
    let mut alt_b = Vec::with_capacity(n);
    for p in 0..n {
        let s: f64 = (0..n).map(|q| w[q] * h[(p, q)]).sum();
        if s.abs() < DEGENERACY_TOL {
            return Err(Error::Domain(format!(
                "altitude-weighted row sum {} of H vanishes, so wing altitude {} escapes to \
                 infinity",
                p + 1,
                p + 1
            )));
        }
        alt_b.push(s.recip());
    }

    // Incidence system (a_p, n_r) = a_r (delta_pr - 1/n) over the hinge-plane
    // coordinates; the gauge centres the facet so the vertex rows sum to zero.
    let free = dim - 1;
    let mut nmat = DMatrix::zeros(n, free);
    for r in 0..n {
        for c in 0..free {
            nmat[(r, c)] = fact.normals[r].coords[c];
        }
    }
    let mut rhs = DMatrix::zeros(n, n);
    for p in 0..n {
        for r in 0..n {
            rhs[(r, p)] = alt_a[r] * (if p == r { 1.0 } else { 0.0 } - 1.0 / n as f64);
        }
    }
    let svd = SVD::new(nmat, true, true);
    let sol = svd
        .solve(&rhs, EIGENVALUE_CLIP)
        .map_err(|e| Error::Signature(format!("incidence system solve failed: {e}")))?;

    let mut anchors_a = Vec::with_capacity(n);
    for p in 0..n {
        let mut coords = DVector::zeros(dim);
        for c in 0..free {
            coords[c] = sol[(c, p)];
        }
        anchors_a.push(ambient_from(space, coords));
    }

    // duals[p] = a_p^-1 * anchor, matching the curved convention c_p.
    let duals: Vec<AmbientVector> = (0..n)
        .map(|p| combination(space, &[(w[p], &anchors_a[p])]))
        .collect();

    let mut anchors_b0 = Vec::with_capacity(n);
    for p in 0..n {
        let terms: Vec<(f64, &AmbientVector)> = (0..n)
            .map(|q| (alt_b[p] * h[(p, q)] * w[q], &anchors_a[q]))
            .collect();
        anchors_b0.push(combination(space, &terms));
    }

    Ok(Butterfly {
        space,
        normals: fact.normals,
        m_normal: fact.m,
        alt_a,
        alt_b,
        anchors_a,
        anchors_b0,
        duals,
    })
}

/// Worst-case residuals of the defining identities of a recovered mechanism
/// against its shape pair.
#[derive(Debug, Clone, Serialize)]
pub struct ButterflyResiduals {
    /// Incidence of facet vertices with the normals.
    pub incidence: f64,
    /// Wing anchors against the altitude-weighted combination of H.
    pub wing_anchor: f64,
    /// Duality of the recovered frame against the normals.
    pub duality: f64,
    /// Distance of every vertex from the model surface (zero flat).
    pub model: f64,
    /// Orthogonality of m against normals and hinge planes, plus unit norm.
    pub m_direction: f64,
}

impl ButterflyResiduals {
    pub fn worst(&self) -> f64 {
        self.incidence
            .max(self.wing_anchor)
            .max(self.duality)
            .max(self.model)
            .max(self.m_direction)
    }
}

impl Butterfly {
    pub fn n(&self) -> usize {
        self.normals.len()
    }

    /// Wing vertex p rotated to dihedral angle phi about its hinge.
    pub fn wing_position(&self, p: usize, phi: f64) -> AmbientVector {
        let b = self.alt_b[p];
        combination(
            self.space,
            &[
                (1.0, &self.anchors_b0[p]),
                (b * (phi.cos() - 1.0), &self.normals[p]),
                (b * phi.sin(), &self.m_normal),
            ],
        )
    }

    /// Wing vertex p at the dihedral angle whose half-angle tangent is t,
    /// evaluated through the pole: t = infinity lands the angle-pi position
    /// exactly.
    pub fn wing_position_tan(&self, p: usize, t: ProjectiveValue) -> AmbientVector {
        let (s, c) = (t.num(), t.den());
        let b = self.alt_b[p];
        combination(
            self.space,
            &[
                (1.0, &self.anchors_b0[p]),
                (-2.0 * b * s * s, &self.normals[p]),
                (2.0 * b * s * c, &self.m_normal),
            ],
        )
    }

    /// Rebuild the shape pair from the recovered data; round-trips the input
    /// pair up to numerical error.
    pub fn gh_pair(&self) -> Result<GHPair> {
        let n = self.n();
        let mut g = DMatrix::zeros(n, n);
        let mut h = DMatrix::zeros(n, n);
        for p in 0..n {
            for q in 0..n {
                g[(p, q)] = bilinear(&self.normals[p], &self.normals[q])?;
                h[(p, q)] = match self.space.kind {
                    SpaceKind::Euclidean => {
                        let r = if q == 0 { 1 } else { 0 };
                        let diff = combination(
                            self.space,
                            &[(1.0, &self.anchors_b0[p]), (-1.0, &self.anchors_a[r])],
                        );
                        bilinear(&diff, &self.normals[q])? / self.alt_b[p]
                    }
                    _ => bilinear(&self.anchors_b0[p], &self.normals[q])? / self.alt_b[p],
                };
            }
        }
        GHPair::new(g, h)
    }

    pub fn residuals(&self, pair: &GHPair) -> Result<ButterflyResiduals> {
        let n = self.n();
        let mut incidence = 0.0f64;
        let mut duality = 0.0f64;
        let mut model = 0.0f64;
        let mut m_res = 0.0f64;

        for p in 0..n {
            match self.space.kind {
                SpaceKind::Euclidean => {
                    for q in 0..n {
                        for r in 0..n {
                            let diff = combination(
                                self.space,
                                &[(1.0, &self.anchors_a[p]), (-1.0, &self.anchors_a[q])],
                            );
                            let want = self.alt_a[r]
                                * ((p == r) as i32 as f64 - (q == r) as i32 as f64);
                            incidence = incidence
                                .max((bilinear(&diff, &self.normals[r])? - want).abs());
                        }
                        let diff = combination(
                            self.space,
                            &[(1.0, &self.anchors_a[p]), (-1.0, &self.anchors_a[q])],
                        );
                        m_res = m_res.max(bilinear(&diff, &self.m_normal)?.abs());
                    }
                }
                _ => {
                    for q in 0..n {
                        let want = if p == q { self.alt_a[q] } else { 0.0 };
                        incidence = incidence
                            .max((bilinear(&self.anchors_a[p], &self.normals[q])? - want).abs());
                        let want = (p == q) as i32 as f64;
                        duality = duality
                            .max((bilinear(&self.duals[p], &self.normals[q])? - want).abs());
                    }
                    m_res = m_res.max(bilinear(&self.anchors_a[p], &self.m_normal)?.abs());
                    model = model.max(self.anchors_a[p].model_residual());
                    model = model.max(self.anchors_b0[p].model_residual());
                }
            }
            m_res = m_res.max(bilinear(&self.normals[p], &self.m_normal)?.abs());
        }
        m_res = m_res.max((bilinear(&self.m_normal, &self.m_normal)? - 1.0).abs());

        // Wing anchors against b_p * sum_q h_pq c_q with c_q the dual frame.
        let mut wing_anchor = 0.0f64;
        for p in 0..n {
            let mut terms: Vec<(f64, &AmbientVector)> = vec![(1.0, &self.anchors_b0[p])];
            let weights: Vec<f64> =
                (0..n).map(|q| -self.alt_b[p] * pair.h()[(p, q)]).collect();
            for q in 0..n {
                terms.push((weights[q], &self.duals[q]));
            }
            let diff = combination(self.space, &terms);
            wing_anchor = wing_anchor.max(diff.coords.amax());
        }

        // Euclidean closure: the altitude reciprocals annihilate the normals.
        if self.space.kind == SpaceKind::Euclidean {
            let terms: Vec<(f64, &AmbientVector)> = (0..n)
                .map(|p| (self.alt_a[p].recip(), &self.normals[p]))
                .collect();
            duality = duality.max(combination(self.space, &terms).coords.amax());
        }

        Ok(ButterflyResiduals {
            incidence,
            wing_anchor,
            duality,
            model,
            m_direction: m_res,
        })
    }

    /// Spherical variant with the chosen facet or wing vertices replaced by
    /// their antipodes (jointly with the sign of the matching altitude), which
    /// realises the same shape pair.
    pub fn antipodal_variant(&self, flip_a: &[bool], flip_b: &[bool]) -> Result<Butterfly> {
        if self.space.kind != SpaceKind::Spherical {
            return Err(Error::Domain(
                "antipodal variants exist only on the sphere".into(),
            ));
        }
        let n = self.n();
        if flip_a.len() != n || flip_b.len() != n {
            return Err(Error::DimensionMismatch(format!(
                "antipode flags need length {n}"
            )));
        }
        let mut out = self.clone();
        for p in 0..n {
            if flip_a[p] {
                out.alt_a[p] = -out.alt_a[p];
                out.anchors_a[p].coords.neg_mut();
            }
            if flip_b[p] {
                out.alt_b[p] = -out.alt_b[p];
                out.anchors_b0[p].coords.neg_mut();
            }
        }
        Ok(out)
    }
}

/// Which altitude sign a reversion flips.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReversionKind {
    /// Flip the facet altitude a_p.
    FacetAltitude,
    /// Flip the wing altitude b_p.
    WingAltitude,
}

/// Act on a shape pair by flipping one altitude sign. Touches only row and
/// column p off the diagonal; an involution, and the two kinds commute.
pub fn reversion(pair: &GHPair, p: usize, kind: ReversionKind) -> Result<GHPair> {
    let n = pair.n();
    if p >= n {
        return Err(Error::DimensionMismatch(format!(
            "reversion index {} out of range 1..={}",
            p + 1,
            n
        )));
    }
    let mut g = pair.g().clone();
    let mut h = pair.h().clone();
    match kind {
        ReversionKind::FacetAltitude => {
            for q in 0..n {
                if q == p {
                    continue;
                }
                let gpq = pair.g()[(p, q)];
                g[(p, q)] = -gpq;
                g[(q, p)] = -gpq;
                h[(p, q)] = pair.h()[(p, q)] - 2.0 * gpq;
                h[(q, p)] = -pair.h()[(q, p)];
            }
        }
        ReversionKind::WingAltitude => {
            for q in 0..n {
                if q == p {
                    continue;
                }
                h[(p, q)] = 2.0 * pair.g()[(p, q)] - pair.h()[(p, q)];
            }
        }
    }
    GHPair::new(g, h)
}

/// Dihedral angles of all wings together with their half-angle tangents kept
/// projectively, so the straight position phi = pi is the pole t = infinity.
#[derive(Debug, Clone)]
pub struct DihedralState {
    /// Angles in (-pi, pi].
    pub phi: Vec<f64>,
    pub t: Vec<ProjectiveValue>,
}

impl DihedralState {
    pub fn from_t(t: Vec<ProjectiveValue>) -> Self {
        let phi = t.iter().map(|v| 2.0 * v.num().atan2(v.den())).collect();
        DihedralState { phi, t }
    }

    pub fn from_phi(phi: Vec<f64>) -> Self {
        let t = phi
            .iter()
            .map(|&a| {
                if a == std::f64::consts::PI {
                    ProjectiveValue::infinity()
                } else {
                    ProjectiveValue::from_ratio((0.5 * a).sin(), (0.5 * a).cos())
                }
            })
            .collect();
        DihedralState { phi, t }
    }
}

/// Coefficients of the tetrahedral-angle relation A t^2 t'^2 + B t^2
/// + 2 C t t' + D t'^2 + E = 0 between the half-angle tangents of the two
/// opposite dihedral angles of a four-faced corner with plane angles
/// alpha, beta, gamma, delta.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BricardCoeffs {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub d: f64,
    pub e: f64,
}

pub fn bricard_coeffs(alpha: f64, beta: f64, gamma: f64, delta: f64) -> BricardCoeffs {
    BricardCoeffs {
        a: gamma.cos() - (alpha + beta + delta).cos(),
        b: gamma.cos() - (alpha + beta - delta).cos(),
        c: -2.0 * beta.sin() * delta.sin(),
        d: gamma.cos() - (alpha - beta + delta).cos(),
        e: gamma.cos() - (alpha - beta - delta).cos(),
    }
}

impl BricardCoeffs {
    /// Value of the relation at half-angle tangents (t, t').
    pub fn relation(&self, t: f64, tp: f64) -> f64 {
        self.a * t * t * tp * tp
            + self.b * t * t
            + 2.0 * self.c * t * tp
            + self.d * tp * tp
            + self.e
    }

    /// (C^2 - AE - BD)^2 - 4ABDE minus its closed form
    /// 16 sin^2(alpha) sin^2(beta) sin^2(gamma) sin^2(delta); zero up to
    /// roundoff for every angle quadruple.
    pub fn identity_residual(&self, alpha: f64, beta: f64, gamma: f64, delta: f64) -> f64 {
        let lhs = (self.c * self.c - self.a * self.e - self.b * self.d).powi(2)
            - 4.0 * self.a * self.b * self.d * self.e;
        let rhs = 16.0
            * (alpha.sin() * beta.sin() * gamma.sin() * delta.sin()).powi(2);
        lhs - rhs
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::distance;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn identity_pair(n: usize) -> GHPair {
        GHPair::new(DMatrix::identity(n, n), DMatrix::identity(n, n)).unwrap()
    }

    /// Flat 3-wing example: equal-correlation Gram with kernel (1,1,1).
    fn flat_pair() -> GHPair {
        let g = DMatrix::from_fn(3, 3, |i, j| if i == j { 1.0 } else { -0.5 });
        GHPair::new(g, DMatrix::identity(3, 3)).unwrap()
    }

    fn random_spherical_pair(rng: &mut ChaCha8Rng, n: usize) -> GHPair {
        // Correlation matrix of random vectors: positive definite almost
        // surely, unit diagonal by construction.
        let dim = n + 2;
        let v = DMatrix::from_fn(n, dim, |_, _| rng.gen_range(-1.0f64..1.0));
        let gram = &v * v.transpose();
        let g = DMatrix::from_fn(n, n, |i, j| {
            gram[(i, j)] / (gram[(i, i)] * gram[(j, j)]).sqrt()
        });
        let h = DMatrix::from_fn(n, n, |i, j| {
            if i == j {
                1.0
            } else {
                rng.gen_range(-1.5..1.5)
            }
        });
        GHPair::new(g, h).unwrap()
    }

    #[test]
    fn identity_pair_is_spherical() {
        assert_eq!(classify(&identity_pair(3)), Classification::Spherical);
        assert_eq!(classify(&identity_pair(5)), Classification::Spherical);
    }

    #[test]
    fn equal_correlation_pair_is_euclidean() {
        assert_eq!(classify(&flat_pair()), Classification::Euclidean);
    }

    #[test]
    fn flat_gram_with_dependent_h_row_is_rejected() {
        // Row 1 of H equal to row 1 of G lies in the row space of G.
        let g = DMatrix::from_fn(3, 3, |i, j| if i == j { 1.0 } else { -0.5 });
        let mut h = DMatrix::identity(3, 3);
        h[(0, 1)] = -0.5;
        h[(0, 2)] = -0.5;
        let pair = GHPair::new(g, h).unwrap();
        match classify(&pair) {
            Classification::None { reason } => assert!(reason.contains("row 1")),
            other => panic!("expected rejection, got {other:?}"),
        }
    }

    #[test]
    fn two_negative_eigenvalues_are_rejected() {
        let mut g = DMatrix::identity(4, 4);
        // Two decoupled strongly negative 2x2 blocks.
        g[(0, 1)] = -1.4;
        g[(1, 0)] = -1.4;
        g[(2, 3)] = -1.4;
        g[(3, 2)] = -1.4;
        let pair = GHPair::new(g, DMatrix::identity(4, 4)).unwrap();
        match classify(&pair) {
            Classification::None { reason } => assert!(reason.contains("negative eigenvalues")),
            other => panic!("expected rejection, got {other:?}"),
        }
    }

    #[test]
    fn shape_pair_rejects_asymmetry_and_bad_diagonal() {
        let mut g = DMatrix::identity(3, 3);
        g[(0, 1)] = 0.3;
        g[(1, 0)] = -0.3;
        assert!(GHPair::new(g, DMatrix::identity(3, 3)).is_err());
        let mut h = DMatrix::identity(3, 3);
        h[(2, 2)] = 0.9;
        assert!(GHPair::new(DMatrix::identity(3, 3), h).is_err());
        assert!(GHPair::new(DMatrix::identity(2, 2), DMatrix::identity(2, 2)).is_err());
    }

    #[test]
    fn json_round_trip_preserves_the_pair() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let pair = random_spherical_pair(&mut rng, 4);
        let text = serde_json::to_string(&pair).unwrap();
        assert!(text.contains("\"G\""));
        assert!(text.contains("\"H\""));
        let back: GHPair = serde_json::from_str(&text).unwrap();
        assert_eq!(pair, back);
    }

    #[test]
    fn orthonormal_recovery_places_wings_on_axes() {
        let pair = identity_pair(3);
        let fly = recover(&pair, SpaceKind::Spherical).unwrap();
        for p in 0..3 {
            assert_abs_diff_eq!(fly.alt_a[p], 1.0, epsilon = 1e-12);
            assert_abs_diff_eq!(fly.alt_b[p], 1.0, epsilon = 1e-12);
            // Anchor and wing coincide with the normal axis.
            let d = (&fly.anchors_a[p].coords - &fly.anchors_b0[p].coords).amax();
            assert!(d < 1e-12);
        }
        let residuals = fly.residuals(&pair).unwrap();
        assert!(residuals.worst() < 1e-12, "residuals {residuals:?}");
    }

    #[test]
    fn recovery_residuals_and_round_trip_euclidean() {
        let pair = flat_pair();
        let fly = recover(&pair, SpaceKind::Euclidean).unwrap();
        let residuals = fly.residuals(&pair).unwrap();
        assert!(residuals.worst() < 1e-9, "residuals {residuals:?}");
        let back = fly.gh_pair().unwrap();
        assert!(pair.max_diff(&back) < 1e-9);
        // The altitude reciprocals are a unit vector with positive entries
        // here, so the altitudes are sqrt(3) each.
        for p in 0..3 {
            assert_abs_diff_eq!(fly.alt_a[p], 3.0f64.sqrt(), epsilon = 1e-9);
        }
    }

    #[test]
    fn recovery_residuals_and_round_trip_hyperbolic() {
        // Equal correlation below the flat value tips one eigenvalue
        // negative while the delete-one minors stay positive; near-constant
        // rows of H keep every altitude form negative.
        let g = DMatrix::from_fn(3, 3, |i, j| if i == j { 1.0 } else { -0.65 });
        let h = DMatrix::from_row_slice(
            3,
            3,
            &[1.0, 1.1, 0.9, 0.8, 1.0, 1.2, 1.05, 0.95, 1.0],
        );
        let pair = GHPair::new(g, h).unwrap();
        assert_eq!(classify(&pair), Classification::Hyperbolic);
        let fly = recover(&pair, SpaceKind::Hyperbolic).unwrap();
        let residuals = fly.residuals(&pair).unwrap();
        assert!(residuals.worst() < 1e-9, "residuals {residuals:?}");
        let back = fly.gh_pair().unwrap();
        assert!(pair.max_diff(&back) < 1e-9);
        let t = fly.space.time_index().unwrap();
        for p in 0..3 {
            assert!(fly.anchors_a[p].coords[t] > 0.0);
            assert!(fly.anchors_b0[p].coords[t] > 0.0);
        }
    }

    #[test]
    fn recover_rejects_wrong_space() {
        let err = recover(&identity_pair(3), SpaceKind::Euclidean).unwrap_err();
        match err {
            Error::NotRealisable { space, reason } => {
                assert_eq!(space, SpaceKind::Euclidean);
                assert!(reason.contains("spherical"));
            }
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn wing_position_at_zero_is_the_anchor() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let pair = random_spherical_pair(&mut rng, 3);
        let fly = recover(&pair, SpaceKind::Spherical).unwrap();
        for p in 0..3 {
            let at_zero = fly.wing_position(p, 0.0);
            assert_eq!(at_zero.coords, fly.anchors_b0[p].coords);
        }
    }

    #[test]
    fn wing_position_at_pi_reflects_through_the_hinge() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let pair = random_spherical_pair(&mut rng, 4);
        let fly = recover(&pair, SpaceKind::Spherical).unwrap();
        for p in 0..4 {
            let expect = combination(
                fly.space,
                &[(1.0, &fly.anchors_b0[p]), (-2.0 * fly.alt_b[p], &fly.normals[p])],
            );
            let at_pi = fly.wing_position(p, std::f64::consts::PI);
            assert!((&at_pi.coords - &expect.coords).amax() < 1e-12);
            let at_pole = fly.wing_position_tan(p, ProjectiveValue::infinity());
            assert!((&at_pole.coords - &expect.coords).amax() < 1e-15);
        }
    }

    #[test]
    fn wing_position_quarter_turn_orthonormal() {
        let fly = recover(&identity_pair(3), SpaceKind::Spherical).unwrap();
        // With unit normals along axes, the quarter turn lands on the m axis
        // direction mixed equally with the anchor minus normal.
        let got = fly.wing_position(0, std::f64::consts::FRAC_PI_2);
        let expect = combination(
            fly.space,
            &[
                (1.0, &fly.anchors_b0[0]),
                (-1.0, &fly.normals[0]),
                (1.0, &fly.m_normal),
            ],
        );
        assert!((&got.coords - &expect.coords).amax() < 1e-12);
        assert!(got.model_residual() < 1e-12);
    }

    #[test]
    fn tan_and_angle_wing_positions_agree() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let pair = random_spherical_pair(&mut rng, 3);
        let fly = recover(&pair, SpaceKind::Spherical).unwrap();
        for k in 0..32 {
            let phi = -3.0 + 6.0 * k as f64 / 31.0;
            let t = ProjectiveValue::from_value((0.5 * phi).tan());
            for p in 0..3 {
                let a = fly.wing_position(p, phi);
                let b = fly.wing_position_tan(p, t);
                assert!((&a.coords - &b.coords).amax() < 1e-12);
            }
        }
    }

    #[test]
    fn dihedral_state_round_trips_angles() {
        let phis = vec![-3.0, -1.0, 0.0, 0.5, 2.9, std::f64::consts::PI];
        let state = DihedralState::from_phi(phis.clone());
        assert!(state.t[5].is_infinite());
        let back = DihedralState::from_t(state.t.clone());
        for (a, b) in phis.iter().zip(back.phi.iter()) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-12);
        }
    }

    #[test]
    fn reversions_are_involutions_and_commute() {
        let mut rng = ChaCha8Rng::seed_from_u64(19);
        for _ in 0..20 {
            let pair = random_spherical_pair(&mut rng, 4);
            for p in 0..4 {
                for kind in [ReversionKind::FacetAltitude, ReversionKind::WingAltitude] {
                    let twice = reversion(&reversion(&pair, p, kind).unwrap(), p, kind).unwrap();
                    assert!(
                        pair.max_diff(&twice) < 1e-15,
                        "involution drift {}",
                        pair.max_diff(&twice)
                    );
                }
                let ab = reversion(
                    &reversion(&pair, p, ReversionKind::FacetAltitude).unwrap(),
                    p,
                    ReversionKind::WingAltitude,
                )
                .unwrap();
                let ba = reversion(
                    &reversion(&pair, p, ReversionKind::WingAltitude).unwrap(),
                    p,
                    ReversionKind::FacetAltitude,
                )
                .unwrap();
                assert!(ab.max_diff(&ba) < 1e-15);
            }
        }
    }

    #[test]
    fn reversions_preserve_the_classification() {
        let cases: Vec<(GHPair, Classification)> = vec![
            (identity_pair(3), Classification::Spherical),
            (flat_pair(), Classification::Euclidean),
        ];
        for (pair, verdict) in cases {
            for p in 0..pair.n() {
                for kind in [ReversionKind::FacetAltitude, ReversionKind::WingAltitude] {
                    let rev = reversion(&pair, p, kind).unwrap();
                    assert_eq!(classify(&rev), verdict, "p={p} kind={kind:?}");
                }
            }
        }
    }

    #[test]
    fn wing_reversion_reparametrises_the_same_wing_euclidean() {
        let pair = flat_pair();
        let fly = recover(&pair, SpaceKind::Euclidean).unwrap();
        let p = 1;
        let rev = reversion(&pair, p, ReversionKind::WingAltitude).unwrap();
        let fly_rev = recover(&rev, SpaceKind::Euclidean).unwrap();
        for k in 0..8 {
            let phi = -2.5 + 5.0 * k as f64 / 7.0;
            let a = fly.wing_position(p, phi);
            let b = fly_rev.wing_position(p, std::f64::consts::PI + phi);
            assert!(
                (&a.coords - &b.coords).amax() < 1e-9,
                "wing mismatch at phi={phi}"
            );
        }
    }

    #[test]
    fn wing_reversion_reparametrises_the_same_wing_spherical() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let pair = random_spherical_pair(&mut rng, 3);
        let fly = recover(&pair, SpaceKind::Spherical).unwrap();
        let p = 2;
        let rev = reversion(&pair, p, ReversionKind::WingAltitude).unwrap();
        let fly_rev = recover(&rev, SpaceKind::Spherical).unwrap();
        // Recovery always takes positive roots, which lands the reverted
        // wing on the antipodal representative; flip it back.
        let mut flips = [false; 3];
        flips[p] = true;
        let fly_rev = fly_rev.antipodal_variant(&[false; 3], &flips).unwrap();
        for k in 0..8 {
            let phi = -2.5 + 5.0 * k as f64 / 7.0;
            let a = fly.wing_position(p, phi);
            let b = fly_rev.wing_position(p, std::f64::consts::PI + phi);
            assert!(
                (&a.coords - &b.coords).amax() < 1e-9,
                "wing mismatch at phi={phi}"
            );
        }
    }

    #[test]
    fn antipodal_variant_realises_the_same_pair() {
        let mut rng = ChaCha8Rng::seed_from_u64(29);
        let pair = random_spherical_pair(&mut rng, 4);
        let fly = recover(&pair, SpaceKind::Spherical).unwrap();
        let variant = fly
            .antipodal_variant(&[true, false, true, false], &[false, true, false, true])
            .unwrap();
        let back = variant.gh_pair().unwrap();
        assert!(pair.max_diff(&back) < 1e-9);
        let residuals = variant.residuals(&pair).unwrap();
        assert!(residuals.worst() < 1e-9);
    }

    #[test]
    fn flex_preserves_wing_distances_spherical() {
        // Moving two wings along angles keeps each wing on its circle, so
        // distances to the fixed facet vertices are constant.
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let pair = random_spherical_pair(&mut rng, 3);
        let fly = recover(&pair, SpaceKind::Spherical).unwrap();
        for p in 0..3 {
            let base: Vec<f64> = (0..3)
                .filter(|&q| q != p)
                .map(|q| distance(&fly.wing_position(p, 0.3), &fly.anchors_a[q]).unwrap())
                .collect();
            for k in 1..6 {
                let phi = 0.3 + 0.4 * k as f64;
                let got: Vec<f64> = (0..3)
                    .filter(|&q| q != p)
                    .map(|q| distance(&fly.wing_position(p, phi), &fly.anchors_a[q]).unwrap())
                    .collect();
                for (a, b) in base.iter().zip(got.iter()) {
                    assert_abs_diff_eq!(a, b, epsilon = 1e-10);
                }
            }
        }
    }

    #[test]
    fn bricard_right_angle_quadruple() {
        let q = std::f64::consts::FRAC_PI_2;
        let c = bricard_coeffs(q, q, q, q);
        assert_abs_diff_eq!(c.a, 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(c.b, 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(c.c, -2.0, epsilon = 1e-15);
        assert_abs_diff_eq!(c.d, 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(c.e, 0.0, epsilon = 1e-15);
        // The relation degenerates to t t' = 0.
        assert_abs_diff_eq!(c.relation(0.7, 0.0), 0.0, epsilon = 1e-15);
    }

    #[test]
    fn bricard_degenerate_beta_collapses_pairs() {
        // With beta = 0 the two sums containing +beta and -beta coincide,
        // so the coefficient pairs (A, D) and (B, E) collapse.
        let c = bricard_coeffs(0.9, 0.0, 1.1, 0.4);
        assert_abs_diff_eq!(c.c, 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(c.d, c.a, epsilon = 1e-15);
        assert_abs_diff_eq!(c.e, c.b, epsilon = 1e-15);
    }

    #[test]
    fn bricard_identity_on_random_quadruples() {
        let mut rng = ChaCha8Rng::seed_from_u64(37);
        for _ in 0..200 {
            let draw = |rng: &mut ChaCha8Rng| rng.gen_range(0.05..std::f64::consts::PI - 0.05);
            let (a, b, g, d) = (draw(&mut rng), draw(&mut rng), draw(&mut rng), draw(&mut rng));
            let c = bricard_coeffs(a, b, g, d);
            assert!(
                c.identity_residual(a, b, g, d).abs() < 1e-10,
                "identity residual too large at ({a},{b},{g},{d})"
            );
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn random_spherical_pairs_recover_and_round_trip(seed in 0u64..1u64 << 48) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let n = 3 + (seed % 3) as usize;
            let pair = random_spherical_pair(&mut rng, n);
            prop_assume!(classify(&pair) == Classification::Spherical);
            let fly = recover(&pair, SpaceKind::Spherical).unwrap();
            let residuals = fly.residuals(&pair).unwrap();
            prop_assert!(residuals.worst() < 1e-8, "residuals {:?}", residuals);
            let back = fly.gh_pair().unwrap();
            prop_assert!(pair.max_diff(&back) < 1e-8);
        }

        #[test]
        fn reversion_round_trips_under_serde(seed in 0u64..1u64 << 48) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let pair = random_spherical_pair(&mut rng, 3);
            let rev = reversion(&pair, (seed % 3) as usize, ReversionKind::FacetAltitude).unwrap();
            let text = serde_json::to_string(&rev).unwrap();
            let back: GHPair = serde_json::from_str(&text).unwrap();
            prop_assert!(rev.max_diff(&back) == 0.0);
        }
    }
}
