//! Matrix Lie group primitives for SO(3) and SE_K(3).
//!
//! An element of SE_K(3) is a rotation together with `K` translation-like
//! columns. Its embedding is the `(3+K)×(3+K)` matrix
//!
//! ```text
//! | R  c_1 ... c_K |
//! | 0      I_K     |
//! ```
//!
//! Tangent vectors are laid out as `[ω, ξ_1, ..., ξ_K]`, each block of length 3.
//! The filter uses `K = 2 + L` with columns `(v, p, d_1..d_L)`.

use nalgebra::{DMatrix, DVector, Matrix3, Vector3};
use thiserror::Error;

/// 3×3 rotation matrix.
pub type Rotation = Matrix3<f64>;

/// Flat exponential coordinates `[ω, ξ_1, ..., ξ_K]`.
pub type TangentVector = DVector<f64>;

/// Below this norm the closed forms switch to Taylor series.
pub const SMALL_ANGLE: f64 = 1e-8;

/// Orthogonality defect above which [`orthonormalize`] reprojects.
pub const ORTHO_TOLERANCE: f64 = 1e-7;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LieError {
    #[error("tangent vector length {got} does not match 3*(K+1) = {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("column count mismatch: {left} vs {right}")]
    ColumnCountMismatch { left: usize, right: usize },
    #[error("tangent vector length {0} is not a positive multiple of 3")]
    BadTangentLength(usize),
}

/// Skew-symmetric matrix such that `skew(v) * w == v.cross(&w)`.
pub fn skew(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// Inverse of [`skew`]; reads the antisymmetric part of `m`.
pub fn vee3(m: &Matrix3<f64>) -> Vector3<f64> {
    Vector3::new(m[(2, 1)] - m[(1, 2)], m[(0, 2)] - m[(2, 0)], m[(1, 0)] - m[(0, 1)]) * 0.5
}

/// Coefficients `(sinθ/θ, (1-cosθ)/θ², (θ-sinθ)/θ³)` with series fallback.
fn rodrigues_coeffs(theta: f64) -> (f64, f64, f64) {
    if theta < SMALL_ANGLE {
        let t2 = theta * theta;
        let t4 = t2 * t2;
        (1.0 - t2 / 6.0 + t4 / 120.0, 0.5 - t2 / 24.0 + t4 / 720.0, 1.0 / 6.0 - t2 / 120.0 + t4 / 5040.0)
    } else {
        let (s, c) = theta.sin_cos();
        let t2 = theta * theta;
        (s / theta, (1.0 - c) / t2, (theta - s) / (t2 * theta))
    }
}

/// Rodrigues' formula.
pub fn so3_exp(omega: &Vector3<f64>) -> Rotation {
    let theta = omega.norm();
    let (a, b, _) = rodrigues_coeffs(theta);
    let k = skew(omega);
    Matrix3::identity() + k * a + k * k * b
}

/// Left Jacobian of SO(3).
pub fn so3_left_jacobian(omega: &Vector3<f64>) -> Matrix3<f64> {
    let theta = omega.norm();
    let (_, b, c) = rodrigues_coeffs(theta);
    let k = skew(omega);
    Matrix3::identity() + k * b + k * k * c
}

/// Principal logarithm, `‖ω‖ ∈ [0, π]`.
pub fn so3_log(r: &Rotation) -> Vector3<f64> {
    let w = vee3(r);
    let sin_theta = w.norm();
    let cos_theta = ((r.trace() - 1.0) * 0.5).clamp(-1.0, 1.0);
    let theta = sin_theta.atan2(cos_theta);

    if theta < SMALL_ANGLE {
        // θ / sinθ ≈ 1 + θ²/6 + 7θ⁴/360
        let t2 = theta * theta;
        return w * (1.0 + t2 / 6.0 + 7.0 * t2 * t2 / 360.0);
    }
    if theta < std::f64::consts::PI - 1e-2 {
        return w * (theta / sin_theta);
    }

    // Near π the antisymmetric part vanishes; recover the axis from the
    // symmetric part  a·aᵀ = (R + Rᵀ - 2cosθ·I) / (2(1 - cosθ)).
    let sym = (r + r.transpose()) * 0.5;
    let denom = 1.0 - cos_theta;
    let diag = Vector3::new((sym[(0, 0)] - cos_theta) / denom, (sym[(1, 1)] - cos_theta) / denom, (sym[(2, 2)] - cos_theta) / denom);
    let i = diag.imax();
    let ai = diag[i].max(0.0).sqrt();
    let mut axis = Vector3::zeros();
    for j in 0..3 {
        axis[j] = if j == i { ai } else { sym[(i, j)] / (denom * ai) };
    }
    axis.normalize_mut();
    if axis.dot(&w) < 0.0 {
        axis = -axis;
    }
    axis * theta
}

/// Largest absolute entry of `R·Rᵀ - I`.
pub fn orthogonality_defect(r: &Rotation) -> f64 {
    (r * r.transpose() - Matrix3::identity()).abs().max()
}

/// Polar projection onto SO(3), applied only when the defect exceeds
/// [`ORTHO_TOLERANCE`].
pub fn orthonormalize(r: &Rotation) -> Rotation {
    if orthogonality_defect(r) <= ORTHO_TOLERANCE {
        return *r;
    }
    let svd = r.svd(true, true);
    let u = svd.u.expect("svd u");
    let v_t = svd.v_t.expect("svd v_t");
    let mut out = u * v_t;
    if out.determinant() < 0.0 {
        let mut u = u;
        u.column_mut(2).neg_mut();
        out = u * v_t;
    }
    out
}

/// Element of SE_K(3): one rotation and `K` columns.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupElement {
    pub rotation: Rotation,
    pub columns: Vec<Vector3<f64>>,
}

impl GroupElement {
    pub fn identity(k: usize) -> Self {
        Self { rotation: Matrix3::identity(), columns: vec![Vector3::zeros(); k] }
    }

    pub fn new(rotation: Rotation, columns: Vec<Vector3<f64>>) -> Self {
        Self { rotation, columns }
    }

    /// Number of translation-like columns `K`.
    pub fn k(&self) -> usize {
        self.columns.len()
    }

    /// Tangent dimension `3(K+1)`.
    pub fn dof(&self) -> usize {
        3 * (self.columns.len() + 1)
    }

    /// Exponential map; `ξ` must have length `3(K+1)` for some `K ≥ 0`.
    pub fn exp(xi: &TangentVector) -> Result<Self, LieError> {
        if xi.len() < 3 || xi.len() % 3 != 0 {
            return Err(LieError::BadTangentLength(xi.len()));
        }
        let omega = Vector3::new(xi[0], xi[1], xi[2]);
        let jl = so3_left_jacobian(&omega);
        let columns = (1..xi.len() / 3).map(|b| jl * Vector3::new(xi[3 * b], xi[3 * b + 1], xi[3 * b + 2])).collect();
        Ok(Self { rotation: so3_exp(&omega), columns })
    }

    /// Exponential map with an explicit expected column count.
    pub fn exp_k(xi: &TangentVector, k: usize) -> Result<Self, LieError> {
        if xi.len() != 3 * (k + 1) {
            return Err(LieError::DimensionMismatch { expected: 3 * (k + 1), got: xi.len() });
        }
        Self::exp(xi)
    }

    /// Group product `self · other`.
    pub fn compose(&self, other: &Self) -> Result<Self, LieError> {
        if self.k() != other.k() {
            return Err(LieError::ColumnCountMismatch { left: self.k(), right: other.k() });
        }
        let columns = self.columns.iter().zip(&other.columns).map(|(a, b)| self.rotation * b + a).collect();
        Ok(Self { rotation: self.rotation * other.rotation, columns })
    }

    pub fn inverse(&self) -> Self {
        let rt = self.rotation.transpose();
        Self { rotation: rt, columns: self.columns.iter().map(|c| -(rt * c)).collect() }
    }

    /// Adjoint matrix, `Ad(X)·ξ = vee(X·hat(ξ)·X⁻¹)`.
    pub fn adjoint(&self) -> DMatrix<f64> {
        let n = self.dof();
        let r = &self.rotation;
        let mut ad = DMatrix::zeros(n, n);
        ad.fixed_view_mut::<3, 3>(0, 0).copy_from(r);
        for (i, c) in self.columns.iter().enumerate() {
            let row = 3 * (i + 1);
            ad.fixed_view_mut::<3, 3>(row, row).copy_from(r);
            ad.fixed_view_mut::<3, 3>(row, 0).copy_from(&(skew(c) * r));
        }
        ad
    }

    /// `(3+K)×(3+K)` matrix embedding.
    pub fn to_matrix(&self) -> DMatrix<f64> {
        let n = 3 + self.k();
        let mut m = DMatrix::identity(n, n);
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&self.rotation);
        for (i, c) in self.columns.iter().enumerate() {
            m.fixed_view_mut::<3, 1>(0, 3 + i).copy_from(c);
        }
        m
    }

    /// Reads an element back from its matrix embedding (no validation of
    /// the lower block).
    pub fn from_matrix(m: &DMatrix<f64>) -> Self {
        let k = m.nrows() - 3;
        Self {
            rotation: m.fixed_view::<3, 3>(0, 0).into_owned(),
            columns: (0..k).map(|i| m.fixed_view::<3, 1>(0, 3 + i).into_owned()).collect(),
        }
    }
}

/// Lie-algebra embedding of a tangent vector.
pub fn hat(xi: &TangentVector) -> Result<DMatrix<f64>, LieError> {
    if xi.len() < 3 || xi.len() % 3 != 0 {
        return Err(LieError::BadTangentLength(xi.len()));
    }
    let k = xi.len() / 3 - 1;
    let mut m = DMatrix::zeros(3 + k, 3 + k);
    m.fixed_view_mut::<3, 3>(0, 0).copy_from(&skew(&Vector3::new(xi[0], xi[1], xi[2])));
    for i in 0..k {
        for r in 0..3 {
            m[(r, 3 + i)] = xi[3 * (i + 1) + r];
        }
    }
    Ok(m)
}

/// Inverse of [`hat`].
pub fn vee(m: &DMatrix<f64>) -> TangentVector {
    let k = m.nrows() - 3;
    let mut xi = DVector::zeros(3 * (k + 1));
    let w = vee3(&m.fixed_view::<3, 3>(0, 0).into_owned());
    xi.fixed_rows_mut::<3>(0).copy_from(&w);
    for i in 0..k {
        for r in 0..3 {
            xi[3 * (i + 1) + r] = m[(r, 3 + i)];
        }
    }
    xi
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    /// Dense matrix exponential by scaling-and-squaring over a long Taylor
    /// series. Independent of the closed forms above.
    fn expm(a: &DMatrix<f64>) -> DMatrix<f64> {
        let norm = a.abs().max();
        let squarings = if norm > 0.5 { (norm / 0.5).log2().ceil() as u32 } else { 0 };
        let scaled = a / 2f64.powi(squarings as i32);
        let n = a.nrows();
        let mut term = DMatrix::identity(n, n);
        let mut sum = DMatrix::identity(n, n);
        for i in 1..30 {
            term = &term * &scaled / i as f64;
            sum += &term;
        }
        for _ in 0..squarings {
            sum = &sum * &sum;
        }
        sum
    }

    fn series_exp3(w: &Vector3<f64>, terms: usize) -> Matrix3<f64> {
        let k = skew(w);
        let mut term = Matrix3::identity();
        let mut sum = Matrix3::identity();
        for i in 1..terms {
            term = term * k / i as f64;
            sum += term;
        }
        sum
    }

    fn random_element(seed: &[f64], k: usize) -> GroupElement {
        let xi = DVector::from_iterator(3 * (k + 1), (0..3 * (k + 1)).map(|i| seed[i % seed.len()] * (1.0 + 0.1 * i as f64)));
        GroupElement::exp(&xi).unwrap()
    }

    #[test]
    fn skew_examples() {
        assert_eq!(skew(&Vector3::zeros()), Matrix3::zeros());
        let s = skew(&Vector3::new(1.0, 2.0, 3.0));
        assert_eq!(s, Matrix3::new(0.0, -3.0, 2.0, 3.0, 0.0, -1.0, -2.0, 1.0, 0.0));
    }

    #[test]
    fn exp_quarter_turn_matches_series() {
        let w = Vector3::new(0.0, 0.0, PI / 2.0);
        let r = so3_exp(&w);
        let oracle = series_exp3(&w, 20);
        assert!((r - oracle).abs().max() < 1e-9);
        let x = r * Vector3::x();
        assert!((x - Vector3::y()).norm() < 1e-12);
        assert_eq!(so3_exp(&Vector3::zeros()), Matrix3::identity());
    }

    #[test]
    fn log_examples() {
        assert_eq!(so3_log(&Matrix3::identity()), Vector3::zeros());
        let w = Vector3::new(0.3, -0.2, 0.1);
        assert!((so3_log(&so3_exp(&w)) - w).norm() < 1e-10);
        let w = Vector3::new(0.0, 0.0, 1.0);
        assert!((so3_log(&so3_exp(&w)) - w).norm() < 1e-12);
    }

    #[test]
    fn log_near_pi() {
        for axis in [Vector3::x(), Vector3::new(1.0, -2.0, 0.5).normalize(), Vector3::new(-0.3, 0.1, 0.9).normalize()] {
            for theta in [PI - 1e-3, PI - 1e-7, PI] {
                let r = series_exp3(&(axis * theta), 40);
                let r = orthonormalize(&r);
                let back = so3_exp(&so3_log(&r));
                assert!((back - r).abs().max() < 1e-7, "theta {theta}");
            }
        }
    }

    #[test]
    fn small_angle_is_continuous() {
        let w = Vector3::new(3e-9, -1e-9, 2e-9);
        let r = so3_exp(&w);
        assert!((r - series_exp3(&w, 6)).abs().max() < 1e-18);
        assert!((so3_log(&r) - w).norm() < 1e-20);
    }

    #[test]
    fn sek3_exp_cases() {
        let zero = DVector::zeros(12);
        let id = GroupElement::exp(&zero).unwrap();
        assert_eq!(id, GroupElement::identity(3));

        let xi = DVector::from_vec(vec![0.0, 0.0, 0.0, 1.0, -2.0, 3.0, 0.5, 0.25, -0.125]);
        let g = GroupElement::exp(&xi).unwrap();
        assert_eq!(g.columns[0], Vector3::new(1.0, -2.0, 3.0));
        assert_eq!(g.columns[1], Vector3::new(0.5, 0.25, -0.125));

        let xi = DVector::from_vec(vec![0.4, -0.7, 1.1, 1.0, -2.0, 3.0, 0.5, 0.25, -0.125, -1.5, 0.2, 0.9]);
        let g = GroupElement::exp(&xi).unwrap();
        let oracle = expm(&hat(&xi).unwrap());
        assert!((g.to_matrix() - oracle).abs().max() < 1e-9);

        assert!(matches!(GroupElement::exp_k(&xi, 2), Err(LieError::DimensionMismatch { expected: 9, got: 12 })));
    }

    #[test]
    fn compose_inverse_match_dense() {
        let a = random_element(&[0.3, -0.5, 0.8, 1.2, -0.4], 3);
        let b = random_element(&[-0.9, 0.1, 0.6, -0.2, 2.0, 0.7], 3);
        let ab = a.compose(&b).unwrap();
        assert!((ab.to_matrix() - a.to_matrix() * b.to_matrix()).abs().max() < 1e-10);
        let inv = a.inverse();
        let dense_inv = a.to_matrix().try_inverse().unwrap();
        assert!((inv.to_matrix() - dense_inv).abs().max() < 1e-10);
        let e = a.compose(&inv).unwrap();
        assert!((e.to_matrix() - DMatrix::identity(6, 6)).abs().max() < 1e-12);
        assert_eq!(a.compose(&GroupElement::identity(3)).unwrap(), a);
        assert!(matches!(a.compose(&GroupElement::identity(2)), Err(LieError::ColumnCountMismatch { left: 3, right: 2 })));
    }

    #[test]
    fn adjoint_structure_and_conjugation() {
        assert_eq!(GroupElement::identity(2).adjoint(), DMatrix::identity(9, 9));
        let x = random_element(&[0.2, 0.9, -0.4, 1.5, -0.8], 3);
        let ad = x.adjoint();
        let r = x.rotation;
        assert_eq!(ad.fixed_view::<3, 3>(0, 0).into_owned(), r);
        for (i, c) in x.columns.iter().enumerate() {
            let row = 3 * (i + 1);
            assert_eq!(ad.fixed_view::<3, 3>(row, 0).into_owned(), skew(c) * r);
            assert_eq!(ad.fixed_view::<3, 3>(row, row).into_owned(), r);
        }
        let xi = DVector::from_vec(vec![0.1, -0.3, 0.2, 1.0, 0.5, -0.5, 0.3, 0.3, 0.1, -0.7, 0.4, 0.0]);
        let conj = x.to_matrix() * hat(&xi).unwrap() * x.inverse().to_matrix();
        assert!((vee(&conj) - &ad * &xi).abs().max() < 1e-9);
    }

    #[test]
    fn orthonormalize_repairs_drift() {
        let r = so3_exp(&Vector3::new(0.3, 0.2, -0.1));
        assert_eq!(orthonormalize(&r), r);
        let drifted = r * 1.0001;
        let fixed = orthonormalize(&drifted);
        assert!(orthogonality_defect(&fixed) < 1e-12);
        assert!((fixed.determinant() - 1.0).abs() < 1e-12);
        assert!((fixed - r).abs().max() < 1e-12);
    }

    #[test]
    fn roundtrip_thousand_random() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let mut worst: f64 = 0.0;
        for _ in 0..1000 {
            let dir = Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
            if dir.norm() < 1e-3 {
                continue;
            }
            let w = dir.normalize() * rng.random_range(1e-6..PI - 0.05);
            worst = worst.max((so3_log(&so3_exp(&w)) - w).norm());
        }
        assert!(worst < 1e-8, "worst {worst}");
    }

    proptest! {
        #[test]
        fn skew_is_cross(a in prop::array::uniform3(-10.0f64..10.0), b in prop::array::uniform3(-10.0f64..10.0)) {
            let (v, w) = (Vector3::from(a), Vector3::from(b));
            let s = skew(&v);
            prop_assert_eq!(s.transpose(), -s);
            prop_assert!((s * w - v.cross(&w)).norm() < 1e-12);
            prop_assert!((s * w + skew(&w) * v).norm() < 1e-12);
        }

        #[test]
        fn exp_times_exp_neg_is_identity(v in prop::collection::vec(-2.0f64..2.0, 12)) {
            let xi = DVector::from_vec(v);
            let a = GroupElement::exp(&xi).unwrap();
            let b = GroupElement::exp(&(-&xi)).unwrap();
            let e = a.compose(&b).unwrap();
            prop_assert!((e.to_matrix() - DMatrix::identity(6, 6)).abs().max() < 1e-8);
        }

        #[test]
        fn adjoint_is_homomorphism(u in prop::collection::vec(-2.0f64..2.0, 12), w in prop::collection::vec(-2.0f64..2.0, 12)) {
            let x = GroupElement::exp(&DVector::from_vec(u)).unwrap();
            let y = GroupElement::exp(&DVector::from_vec(w)).unwrap();
            let lhs = x.compose(&y).unwrap().adjoint();
            let rhs = x.adjoint() * y.adjoint();
            prop_assert!((lhs - rhs).abs().max() < 1e-8);
        }

        #[test]
        fn deterministic(v in prop::collection::vec(-3.0f64..3.0, 9)) {
            let xi = DVector::from_vec(v);
            let a = GroupElement::exp(&xi).unwrap();
            let b = GroupElement::exp(&xi).unwrap();
            prop_assert_eq!(a.to_matrix(), b.to_matrix());
        }
    }
}
