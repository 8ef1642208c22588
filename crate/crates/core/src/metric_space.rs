//! Response spaces, their metrics, and weighted Fréchet means.
//!
//! Three spaces are supported: Euclidean vectors, points on the unit sphere
//! S² with the great-circle distance, and symmetric positive-definite
//! matrices with the Log-Cholesky metric. Every regressor in this crate
//! reduces to [`frechet_mean`] with some choice of weights.

use std::fmt;

use nalgebra::{DMatrix, DVector, SymmetricEigen, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Absolute tolerance used for "equality" checks unless stated otherwise.
pub const TOL: f64 = 1e-9;

/// Orthogonality slack accepted by [`sphere_exp`].
pub const TANGENT_TOL: f64 = 1e-8;

/// Stopping threshold on the Riemannian gradient norm of the sphere mean.
pub const SPHERE_GRAD_TOL: f64 = 1e-8;

/// Iteration cap of the sphere mean solver.
pub const SPHERE_MAX_ITER: usize = 200;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricError {
    #[error("variant mismatch: {0} vs {1}")]
    VariantMismatch(Space, Space),
    #[error("matrix is not symmetric positive-definite")]
    NotSpd,
    #[error("matrix is not symmetric")]
    NotSymmetric,
    #[error("tangent vector is not orthogonal to the base point (|<v,base>| = {0:e})")]
    NotTangent(f64),
    #[error("antipodal points have no unique logarithm")]
    AntipodalPair,
    #[error("all weights are zero")]
    EmptySample,
    #[error("sphere mean did not converge in {iterations} iterations (gradient norm {gradient:e})")]
    NoConvergence { iterations: usize, gradient: f64 },
    #[error("sphere sample is supported on two antipodal points; the mean is not unique")]
    DegenerateSphereSample,
    #[error("invalid point: {0}")]
    InvalidPoint(String),
    #[error("invalid weight at index {index}: {value}")]
    InvalidWeight { index: usize, value: f64 },
    #[error("points and weights differ in length ({points} vs {weights})")]
    LengthMismatch { points: usize, weights: usize },
}

impl MetricError {
    /// `module::Variant` label used in user-facing diagnostics.
    pub fn case(&self) -> String {
        format!("metric_space::{}", crate::variant_name(self))
    }
}

/// Which space a point lives in, with its dimension.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Space {
    Euclidean(usize),
    Sphere,
    Spd(usize),
}

impl fmt::Display for Space {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Space::Euclidean(d) => write!(f, "euclidean({d})"),
            Space::Sphere => write!(f, "sphere"),
            Space::Spd(d) => write!(f, "spd({d}x{d})"),
        }
    }
}

/// A response value.
///
/// Payloads are public for pattern matching; build points through the
/// checked constructors ([`MetricPoint::euclidean`], [`MetricPoint::sphere`],
/// [`MetricPoint::spd`]) so the invariants hold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawPoint", into = "RawPoint")]
pub enum MetricPoint {
    Euclidean(DVector<f64>),
    Sphere(Vector3<f64>),
    Spd(DMatrix<f64>),
}

impl MetricPoint {
    pub fn euclidean(values: impl Into<Vec<f64>>) -> Result<Self, MetricError> {
        let p = MetricPoint::Euclidean(DVector::from_vec(values.into()));
        p.validate()?;
        Ok(p)
    }

    pub fn sphere(v: [f64; 3]) -> Result<Self, MetricError> {
        let p = MetricPoint::Sphere(Vector3::from(v));
        p.validate()?;
        Ok(p)
    }

    pub fn spd(m: DMatrix<f64>) -> Result<Self, MetricError> {
        let p = MetricPoint::Spd(m);
        p.validate()?;
        Ok(p)
    }

    pub fn space(&self) -> Space {
        match self {
            MetricPoint::Euclidean(v) => Space::Euclidean(v.len()),
            MetricPoint::Sphere(_) => Space::Sphere,
            MetricPoint::Spd(m) => Space::Spd(m.nrows()),
        }
    }

    /// Checks the invariants of the variant.
    pub fn validate(&self) -> Result<(), MetricError> {
        match self {
            MetricPoint::Euclidean(v) => {
                if v.is_empty() {
                    return Err(MetricError::InvalidPoint("empty euclidean vector".into()));
                }
                if v.iter().any(|x| !x.is_finite()) {
                    return Err(MetricError::InvalidPoint("non-finite entry".into()));
                }
                Ok(())
            }
            MetricPoint::Sphere(v) => {
                if v.iter().any(|x| !x.is_finite()) {
                    return Err(MetricError::InvalidPoint("non-finite entry".into()));
                }
                let n = v.norm();
                if (n - 1.0).abs() > TOL {
                    return Err(MetricError::InvalidPoint(format!("sphere point has norm {n}, expected 1")));
                }
                Ok(())
            }
            MetricPoint::Spd(m) => {
                if m.iter().any(|x| !x.is_finite()) {
                    return Err(MetricError::InvalidPoint("non-finite entry".into()));
                }
                check_symmetric(m)?;
                CholeskyFactor::new(m).map(|_| ())
            }
        }
    }

    pub fn as_euclidean(&self) -> Option<&DVector<f64>> {
        match self {
            MetricPoint::Euclidean(v) => Some(v),
            _ => None,
        }
    }

    pub fn as_sphere(&self) -> Option<&Vector3<f64>> {
        match self {
            MetricPoint::Sphere(v) => Some(v),
            _ => None,
        }
    }

    pub fn as_spd(&self) -> Option<&DMatrix<f64>> {
        match self {
            MetricPoint::Spd(m) => Some(m),
            _ => None,
        }
    }
}

/// Wire form: `{"space": "euclidean"|"sphere"|"spd", "data": [...]}`.
#[derive(Serialize, Deserialize)]
#[serde(tag = "space", content = "data", rename_all = "lowercase")]
enum RawPoint {
    Euclidean(Vec<f64>),
    Sphere([f64; 3]),
    Spd(Vec<Vec<f64>>),
}

impl From<MetricPoint> for RawPoint {
    fn from(p: MetricPoint) -> Self {
        match p {
            MetricPoint::Euclidean(v) => RawPoint::Euclidean(v.iter().copied().collect()),
            MetricPoint::Sphere(v) => RawPoint::Sphere([v[0], v[1], v[2]]),
            MetricPoint::Spd(m) => {
                RawPoint::Spd((0..m.nrows()).map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect()).collect())
            }
        }
    }
}

impl TryFrom<RawPoint> for MetricPoint {
    type Error = MetricError;

    fn try_from(raw: RawPoint) -> Result<Self, Self::Error> {
        match raw {
            RawPoint::Euclidean(v) => MetricPoint::euclidean(v),
            RawPoint::Sphere(v) => MetricPoint::sphere(v),
            RawPoint::Spd(rows) => {
                let d = rows.len();
                if d == 0 || rows.iter().any(|r| r.len() != d) {
                    return Err(MetricError::InvalidPoint("spd data must be a square nested array".into()));
                }
                MetricPoint::spd(DMatrix::from_fn(d, d, |i, j| rows[i][j]))
            }
        }
    }
}

fn check_symmetric(m: &DMatrix<f64>) -> Result<(), MetricError> {
    if !m.is_square() || m.nrows() == 0 {
        return Err(MetricError::NotSymmetric);
    }
    let d = m.nrows();
    for i in 0..d {
        for j in (i + 1)..d {
            let (a, b) = (m[(i, j)], m[(j, i)]);
            if (a - b).abs() > TOL * a.abs().max(b.abs()).max(1.0) {
                return Err(MetricError::NotSymmetric);
            }
        }
    }
    Ok(())
}

/// Lower-triangular Cholesky factor `L` with `L Lᵀ = Y` and positive diagonal.
#[derive(Debug, Clone, PartialEq)]
pub struct CholeskyFactor(DMatrix<f64>);

impl CholeskyFactor {
    /// Factorizes `m`, reading only its lower triangle.
    pub fn new(m: &DMatrix<f64>) -> Result<Self, MetricError> {
        if !m.is_square() {
            return Err(MetricError::NotSpd);
        }
        let chol = nalgebra::Cholesky::new(m.clone()).ok_or(MetricError::NotSpd)?;
        let l = chol.l();
        if l.diagonal().iter().any(|&x| !(x > 0.0) || !x.is_finite()) {
            return Err(MetricError::NotSpd);
        }
        Ok(CholeskyFactor(l))
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    /// Flat Log-Cholesky coordinates: strictly-lower entries (row-major)
    /// followed by the logarithm of the diagonal.
    ///
    /// The Log-Cholesky distance is the Euclidean distance between these.
    pub fn log_coords(&self) -> DVector<f64> {
        let d = self.dim();
        let mut out = Vec::with_capacity(d * (d + 1) / 2);
        for i in 0..d {
            for j in 0..i {
                out.push(self.0[(i, j)]);
            }
        }
        out.extend(self.0.diagonal().iter().map(|x| x.ln()));
        DVector::from_vec(out)
    }

    /// Inverse of [`CholeskyFactor::log_coords`].
    pub fn from_log_coords(d: usize, coords: &DVector<f64>) -> Self {
        debug_assert_eq!(coords.len(), d * (d + 1) / 2);
        let mut l = DMatrix::zeros(d, d);
        let mut k = 0;
        for i in 0..d {
            for j in 0..i {
                l[(i, j)] = coords[k];
                k += 1;
            }
        }
        for i in 0..d {
            l[(i, i)] = coords[k + i].exp();
        }
        CholeskyFactor(l)
    }

    /// `L Lᵀ`, symmetrized.
    pub fn reconstruct(&self) -> DMatrix<f64> {
        symmetrize(&(&self.0 * self.0.transpose()))
    }
}

fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Distance between two points of the same space.
///
/// Euclidean: ℓ₂ norm. Sphere: `arccos(aᵀb)` with the dot product clamped to
/// [-1, 1]. SPD: Log-Cholesky distance.
pub fn distance(a: &MetricPoint, b: &MetricPoint) -> Result<f64, MetricError> {
    match (a, b) {
        (MetricPoint::Euclidean(x), MetricPoint::Euclidean(y)) if x.len() == y.len() => Ok((x - y).norm()),
        (MetricPoint::Sphere(x), MetricPoint::Sphere(y)) => Ok(x.cross(y).norm().atan2(x.dot(y))),
        (MetricPoint::Spd(x), MetricPoint::Spd(y)) if x.shape() == y.shape() => {
            let lx = CholeskyFactor::new(x)?.log_coords();
            let ly = CholeskyFactor::new(y)?.log_coords();
            Ok((lx - ly).norm())
        }
        _ => Err(MetricError::VariantMismatch(a.space(), b.space())),
    }
}

/// Points paired with nonnegative weights, at least one positive.
#[derive(Debug, Clone)]
pub struct WeightedSample<'a> {
    points: Vec<&'a MetricPoint>,
    weights: Vec<f64>,
}

impl<'a> WeightedSample<'a> {
    pub fn new(points: impl IntoIterator<Item = &'a MetricPoint>, weights: Vec<f64>) -> Result<Self, MetricError> {
        let points: Vec<_> = points.into_iter().collect();
        if points.len() != weights.len() {
            return Err(MetricError::LengthMismatch { points: points.len(), weights: weights.len() });
        }
        for (index, &value) in weights.iter().enumerate() {
            if !value.is_finite() || value < 0.0 {
                return Err(MetricError::InvalidWeight { index, value });
            }
        }
        if !weights.iter().any(|&w| w > 0.0) {
            return Err(MetricError::EmptySample);
        }
        let space = points[0].space();
        if let Some(p) = points.iter().find(|p| p.space() != space) {
            return Err(MetricError::VariantMismatch(space, p.space()));
        }
        Ok(WeightedSample { points, weights })
    }

    /// Every point with weight one.
    pub fn uniform(points: impl IntoIterator<Item = &'a MetricPoint>) -> Result<Self, MetricError> {
        let points: Vec<_> = points.into_iter().collect();
        let weights = vec![1.0; points.len()];
        Self::new(points, weights)
    }

    pub fn points(&self) -> &[&'a MetricPoint] {
        &self.points
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn space(&self) -> Space {
        self.points[0].space()
    }

    fn support(&self) -> impl Iterator<Item = (&'a MetricPoint, f64)> + '_ {
        self.points.iter().zip(&self.weights).filter(|(_, &w)| w > 0.0).map(|(p, &w)| (*p, w))
    }

    /// `Σ wᵢ d²(yᵢ, candidate)`.
    pub fn objective(&self, candidate: &MetricPoint) -> Result<f64, MetricError> {
        self.support().try_fold(0.0, |acc, (p, w)| Ok(acc + w * distance(p, candidate)?.powi(2)))
    }
}

/// Minimizer of `Σ wᵢ d²(yᵢ, ·)`.
///
/// Euclidean and SPD (Log-Cholesky) means are closed form; the sphere mean is
/// found by intrinsic fixed-point iteration.
pub fn frechet_mean(sample: &WeightedSample<'_>) -> Result<MetricPoint, MetricError> {
    // a single support point is its own mean, returned bit for bit
    let mut support = sample.support().map(|(p, _)| p);
    if let (Some(first), None) = (support.next(), support.next()) {
        return Ok(first.clone());
    }
    match sample.space() {
        Space::Euclidean(d) => {
            let mut acc = DVector::zeros(d);
            let mut total = 0.0;
            for (p, w) in sample.support() {
                acc.axpy(w, p.as_euclidean().expect("space checked"), 1.0);
                total += w;
            }
            Ok(MetricPoint::Euclidean(acc / total))
        }
        Space::Spd(d) => {
            let mut acc = DVector::zeros(d * (d + 1) / 2);
            let mut total = 0.0;
            for (p, w) in sample.support() {
                let coords = CholeskyFactor::new(p.as_spd().expect("space checked"))?.log_coords();
                acc.axpy(w, &coords, 1.0);
                total += w;
            }
            let mean = CholeskyFactor::from_log_coords(d, &(acc / total));
            Ok(MetricPoint::Spd(mean.reconstruct()))
        }
        Space::Sphere => {
            let support: Vec<(Vector3<f64>, f64)> =
                sample.support().map(|(p, w)| (*p.as_sphere().expect("space checked"), w)).collect();
            sphere_mean(&support).map(MetricPoint::Sphere)
        }
    }
}

fn sphere_mean(support: &[(Vector3<f64>, f64)]) -> Result<Vector3<f64>, MetricError> {
    check_antipodal_degenerate(support)?;
    let total: f64 = support.iter().map(|(_, w)| w).sum();

    let extrinsic = support.iter().fold(Vector3::zeros(), |acc, (y, w)| acc + y * *w);
    let mut x = if extrinsic.norm() < 1e-12 {
        // first of the heaviest points
        let mut best = 0;
        for (i, (_, w)) in support.iter().enumerate() {
            if *w > support[best].1 {
                best = i;
            }
        }
        support[best].0
    } else {
        extrinsic.normalize()
    };

    let mut grad_norm = f64::INFINITY;
    for _ in 0..SPHERE_MAX_ITER {
        let mut grad = Vector3::zeros();
        for (y, w) in support {
            let v = log_unchecked(&x, y).ok_or(MetricError::DegenerateSphereSample)?;
            grad += v * (*w / total);
        }
        grad_norm = grad.norm();
        if grad_norm <= SPHERE_GRAD_TOL {
            return Ok(x);
        }
        x = exp_unchecked(&x, &grad);
    }
    Err(MetricError::NoConvergence { iterations: SPHERE_MAX_ITER, gradient: grad_norm })
}

fn check_antipodal_degenerate(support: &[(Vector3<f64>, f64)]) -> Result<(), MetricError> {
    // Group the support into distinct locations.
    let mut groups: Vec<(Vector3<f64>, f64)> = Vec::new();
    for (y, w) in support {
        match groups.iter_mut().find(|(g, _)| (g - y).norm() <= TOL) {
            Some(g) => g.1 += w,
            None => {
                if groups.len() == 2 {
                    return Ok(());
                }
                groups.push((*y, *w));
            }
        }
    }
    // Any mass split across exactly two antipodal points has a non-unique
    // minimizer: a point for equal weights, a circle otherwise.
    if let [(a, _), (b, _)] = groups[..] {
        if (a + b).norm() <= TOL {
            return Err(MetricError::DegenerateSphereSample);
        }
    }
    Ok(())
}

fn exp_unchecked(base: &Vector3<f64>, tangent: &Vector3<f64>) -> Vector3<f64> {
    let n = tangent.norm();
    if n == 0.0 {
        return *base;
    }
    (base * n.cos() + tangent * (n.sin() / n)).normalize()
}

fn log_unchecked(base: &Vector3<f64>, target: &Vector3<f64>) -> Option<Vector3<f64>> {
    let dot = base.dot(target).clamp(-1.0, 1.0);
    let v = target - base * dot;
    let vn = v.norm();
    if vn < 1e-15 {
        return if dot > 0.0 { Some(Vector3::zeros()) } else { None };
    }
    // atan2 keeps precision for nearly coincident points
    let theta = vn.atan2(dot);
    Some(v * (theta / vn))
}

fn sphere_parts<'a>(
    base: &'a MetricPoint,
    other: &'a MetricPoint,
) -> Result<(&'a Vector3<f64>, &'a Vector3<f64>), MetricError> {
    match (base, other) {
        (MetricPoint::Sphere(a), MetricPoint::Sphere(b)) => Ok((a, b)),
        _ => Err(MetricError::VariantMismatch(base.space(), other.space())),
    }
}

/// Riemannian exponential map on S²: `cos‖v‖·base + sin‖v‖·v/‖v‖`.
pub fn sphere_exp(base: &MetricPoint, tangent: &Vector3<f64>) -> Result<MetricPoint, MetricError> {
    let base = base.as_sphere().ok_or_else(|| MetricError::VariantMismatch(base.space(), Space::Sphere))?;
    let dot = tangent.dot(base);
    if dot.abs() > TANGENT_TOL {
        return Err(MetricError::NotTangent(dot.abs()));
    }
    Ok(MetricPoint::Sphere(exp_unchecked(base, tangent)))
}

/// Inverse of [`sphere_exp`]; the result has norm `distance(base, target)`.
pub fn sphere_log(base: &MetricPoint, target: &MetricPoint) -> Result<Vector3<f64>, MetricError> {
    let (b, t) = sphere_parts(base, target)?;
    log_unchecked(b, t).ok_or(MetricError::AntipodalPair)
}

/// Matrix exponential of a symmetric matrix via eigendecomposition.
pub fn sym_matrix_exp(a: &DMatrix<f64>) -> Result<DMatrix<f64>, MetricError> {
    check_symmetric(a)?;
    let eig = SymmetricEigen::new(symmetrize(a));
    let lambda = eig.eigenvalues.map(f64::exp);
    Ok(symmetrize(&(&eig.eigenvectors * DMatrix::from_diagonal(&lambda) * eig.eigenvectors.transpose())))
}

/// Matrix logarithm of an SPD matrix via eigendecomposition.
pub fn sym_matrix_log(y: &DMatrix<f64>) -> Result<DMatrix<f64>, MetricError> {
    check_symmetric(y)?;
    let eig = SymmetricEigen::new(symmetrize(y));
    if eig.eigenvalues.iter().any(|&l| !(l > 0.0)) {
        return Err(MetricError::NotSpd);
    }
    let lambda = eig.eigenvalues.map(f64::ln);
    Ok(symmetrize(&(&eig.eigenvectors * DMatrix::from_diagonal(&lambda) * eig.eigenvectors.transpose())))
}
