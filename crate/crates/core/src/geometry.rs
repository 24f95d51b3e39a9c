//! SE(2) pose algebra and first-order uncertainty propagation.
//!
//! Poses and transforms share one parameterization `(x, y, theta)`. The
//! heading is wrapped into `(-pi, pi]` by every constructor, so residuals
//! built from differences of headings never need a second normalization
//! pass downstream.

use std::f64::consts::PI;
use std::fmt;

use nalgebra::{Matrix3, SymmetricEigen, Vector3};

use crate::error::{Error, Result};

/// Smallest eigenvalue a covariance may have before it is treated as singular
/// by the Mahalanobis routines.
pub const SMD_EIGEN_FLOOR: f64 = 1e-12;

/// Tolerance used when validating symmetry and positive semi-definiteness.
pub const PSD_TOLERANCE: f64 = 1e-9;

/// Wraps an angle into `(-pi, pi]`.
pub fn wrap_angle(theta: f64) -> f64 {
    let r = theta.rem_euclid(2.0 * PI);
    if r > PI {
        r - 2.0 * PI
    } else {
        r
    }
}

/// A planar pose `(x, y, theta)` with the heading kept in `(-pi, pi]`.
#[derive(Clone, Copy, Debug, PartialEq, Default)]
pub struct Pose2D {
    x: f64,
    y: f64,
    theta: f64,
}

/// Rigid-body transform between two frames. Same parameterization as [`Pose2D`].
pub type Transform2D = Pose2D;

impl Pose2D {
    pub fn new(x: f64, y: f64, theta: f64) -> Self {
        Self {
            x,
            y,
            theta: wrap_angle(theta),
        }
    }

    pub const fn identity() -> Self {
        Self {
            x: 0.0,
            y: 0.0,
            theta: 0.0,
        }
    }

    pub fn from_vector(v: &Vector3<f64>) -> Self {
        Self::new(v[0], v[1], v[2])
    }

    #[inline]
    pub fn x(&self) -> f64 {
        self.x
    }

    #[inline]
    pub fn y(&self) -> f64 {
        self.y
    }

    #[inline]
    pub fn theta(&self) -> f64 {
        self.theta
    }

    pub fn to_vector(&self) -> Vector3<f64> {
        Vector3::new(self.x, self.y, self.theta)
    }

    /// Euclidean norm of the translation part.
    pub fn translation_norm(&self) -> f64 {
        self.x.hypot(self.y)
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.theta.is_finite()
    }

    /// `self ⊕ rel`.
    pub fn compose(&self, rel: &Transform2D) -> Pose2D {
        compose(self, rel)
    }

    /// The transform `d` such that `self ⊕ d == other`.
    pub fn between(&self, other: &Pose2D) -> Transform2D {
        inverse_compose(self, other)
    }

    pub fn inverse(&self) -> Transform2D {
        let (s, c) = self.theta.sin_cos();
        Pose2D::new(-c * self.x - s * self.y, s * self.x - c * self.y, -self.theta)
    }

    /// Applies the transform to a point in the local frame.
    pub fn transform_point(&self, px: f64, py: f64) -> (f64, f64) {
        let (s, c) = self.theta.sin_cos();
        (self.x + c * px - s * py, self.y + s * px + c * py)
    }
}

impl fmt::Display for Pose2D {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({:.6}, {:.6}, {:.6})", self.x, self.y, self.theta)
    }
}

/// Standard SE(2) composition `a ⊕ b`.
pub fn compose(a: &Pose2D, b: &Transform2D) -> Pose2D {
    let (s, c) = a.theta.sin_cos();
    Pose2D::new(a.x + c * b.x - s * b.y, a.y + s * b.x + c * b.y, a.theta + b.theta)
}

/// Relative transform from `a` to `b`, i.e. `a⁻¹ ⊕ b`.
pub fn inverse_compose(a: &Pose2D, b: &Pose2D) -> Transform2D {
    let (s, c) = a.theta.sin_cos();
    let dx = b.x - a.x;
    let dy = b.y - a.y;
    Pose2D::new(c * dx + s * dy, -s * dx + c * dy, b.theta - a.theta)
}

/// Jacobians of `a ⊕ b` with respect to `a` and `b`.
pub fn compose_jacobians(a: &Pose2D, b: &Transform2D) -> (Matrix3<f64>, Matrix3<f64>) {
    let (s, c) = a.theta.sin_cos();
    #[rustfmt::skip]
    let ja = Matrix3::new(
        1.0, 0.0, -s * b.x - c * b.y,
        0.0, 1.0,  c * b.x - s * b.y,
        0.0, 0.0, 1.0,
    );
    #[rustfmt::skip]
    let jb = Matrix3::new(
        c,  -s,  0.0,
        s,   c,  0.0,
        0.0, 0.0, 1.0,
    );
    (ja, jb)
}

/// Jacobian of `a⁻¹` with respect to `a`.
pub fn inverse_jacobian(a: &Pose2D) -> Matrix3<f64> {
    let (s, c) = a.theta.sin_cos();
    #[rustfmt::skip]
    let j = Matrix3::new(
        -c,  -s,  s * a.x - c * a.y,
         s,  -c,  c * a.x + s * a.y,
        0.0, 0.0, -1.0,
    );
    j
}

/// Symmetric positive semi-definite 3×3 pose covariance.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Covariance3(Matrix3<f64>);

impl Covariance3 {
    /// Validates symmetry and positive semi-definiteness.
    pub fn new(m: Matrix3<f64>) -> Result<Self> {
        if !m.iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidCovariance("non-finite entry".into()));
        }
        if (m - m.transpose()).abs().max() > PSD_TOLERANCE {
            return Err(Error::InvalidCovariance("not symmetric".into()));
        }
        let min_eig = min_eigenvalue(&m);
        if min_eig < -PSD_TOLERANCE {
            return Err(Error::InvalidCovariance(format!("negative eigenvalue {min_eig:e}")));
        }
        Ok(Self(symmetrize(&m)))
    }

    /// Wraps a matrix that is symmetric PSD by construction. Symmetrizes
    /// and clamps tiny negative eigenvalues produced by round-off.
    pub fn from_matrix_unchecked(m: Matrix3<f64>) -> Self {
        let sym = symmetrize(&m);
        if min_eigenvalue(&sym) < 0.0 {
            Self(clamp_eigenvalues(&sym, 0.0))
        } else {
            Self(sym)
        }
    }

    pub fn zero() -> Self {
        Self(Matrix3::zeros())
    }

    pub fn identity() -> Self {
        Self(Matrix3::identity())
    }

    pub fn from_diagonal(xx: f64, yy: f64, tt: f64) -> Self {
        Self::from_matrix_unchecked(Matrix3::from_diagonal(&Vector3::new(xx, yy, tt)))
    }

    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.0
    }

    pub fn trace(&self) -> f64 {
        self.0.trace()
    }

    pub fn scaled(&self, k: f64) -> Self {
        Self::from_matrix_unchecked(self.0 * k)
    }

    pub fn min_eigenvalue(&self) -> f64 {
        min_eigenvalue(&self.0)
    }
}

impl std::ops::Add for Covariance3 {
    type Output = Covariance3;

    fn add(self, rhs: Self) -> Self::Output {
        Covariance3::from_matrix_unchecked(self.0 + rhs.0)
    }
}

pub(crate) fn symmetrize(m: &Matrix3<f64>) -> Matrix3<f64> {
    (m + m.transpose()) * 0.5
}

pub(crate) fn min_eigenvalue(m: &Matrix3<f64>) -> f64 {
    SymmetricEigen::new(symmetrize(m)).eigenvalues.min()
}

pub(crate) fn clamp_eigenvalues(m: &Matrix3<f64>, floor: f64) -> Matrix3<f64> {
    let eig = SymmetricEigen::new(symmetrize(m));
    let d = eig.eigenvalues.map(|l| l.max(floor));
    symmetrize(&(eig.eigenvectors * Matrix3::from_diagonal(&d) * eig.eigenvectors.transpose()))
}

/// Inverse of a symmetric PSD matrix through its eigen-decomposition. Each
/// inverted eigenvalue is capped at `cap`; eigenvalues at or below `floor`
/// map straight to `cap`.
pub fn clamped_inverse(m: &Matrix3<f64>, floor: f64, cap: f64) -> Matrix3<f64> {
    let eig = SymmetricEigen::new(symmetrize(m));
    let d = eig
        .eigenvalues
        .map(|l| if l > floor { (1.0 / l).min(cap) } else { cap });
    symmetrize(&(eig.eigenvectors * Matrix3::from_diagonal(&d) * eig.eigenvectors.transpose()))
}

/// First-order covariance of `pose_a ⊕ rel` given independent uncertainties
/// on both operands: `J₁ Σa J₁ᵀ + J₂ Σrel J₂ᵀ`.
pub fn compound_covariance(
    pose_a: &Pose2D,
    cov_a: &Covariance3,
    rel: &Transform2D,
    cov_rel: &Covariance3,
) -> Covariance3 {
    let (ja, jb) = compose_jacobians(pose_a, rel);
    Covariance3::from_matrix_unchecked(ja * cov_a.matrix() * ja.transpose() + jb * cov_rel.matrix() * jb.transpose())
}

/// Rotation taking a perturbation expressed in the frame of `t` to the
/// parameters of `t`.
fn frame_jacobian(t: &Transform2D) -> Matrix3<f64> {
    let (s, c) = t.theta.sin_cos();
    Matrix3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0)
}

/// Covariance of the parameters of `t ⊕ ε` for a small perturbation `ε` with
/// covariance `cov`. Edge informations weight such right perturbations.
pub fn perturbation_to_parameter(t: &Transform2D, cov: &Covariance3) -> Covariance3 {
    let j = frame_jacobian(t);
    Covariance3::from_matrix_unchecked(j * cov.matrix() * j.transpose())
}

/// Inverse of [`perturbation_to_parameter`].
pub fn parameter_to_perturbation(t: &Transform2D, cov: &Covariance3) -> Covariance3 {
    let j = frame_jacobian(t);
    Covariance3::from_matrix_unchecked(j.transpose() * cov.matrix() * j)
}

/// First-order covariance of `a⁻¹`.
pub fn inverse_covariance(a: &Pose2D, cov: &Covariance3) -> Covariance3 {
    let j = inverse_jacobian(a);
    Covariance3::from_matrix_unchecked(j * cov.matrix() * j.transpose())
}

/// Pose difference `b - a` with the heading residual wrapped.
pub fn pose_residual(a: &Pose2D, b: &Pose2D) -> Vector3<f64> {
    Vector3::new(b.x - a.x, b.y - a.y, wrap_angle(b.theta - a.theta))
}

/// Squared Mahalanobis distance between two poses under `cov`.
pub fn smd(a: &Pose2D, b: &Pose2D, cov: &Covariance3) -> Result<f64> {
    let inv = checked_inverse(cov)?;
    let r = pose_residual(a, b);
    Ok((r.transpose() * inv * r)[0].max(0.0))
}

fn checked_inverse(cov: &Covariance3) -> Result<Matrix3<f64>> {
    let eig = SymmetricEigen::new(*cov.matrix());
    if eig.eigenvalues.min() <= SMD_EIGEN_FLOOR {
        return Err(Error::SingularCovariance);
    }
    let d = eig.eigenvalues.map(|l| 1.0 / l);
    Ok(symmetrize(
        &(eig.eigenvectors * Matrix3::from_diagonal(&d) * eig.eigenvectors.transpose()),
    ))
}

/// Gaussian density `(1/η)·exp(-smd/2)` with `η = (2π)^{3/2}·√det Σ`.
pub fn gaussian_uncertainty(a: &Pose2D, b: &Pose2D, cov: &Covariance3) -> Result<f64> {
    let d = smd(a, b, cov)?;
    let eta = (2.0 * PI).powf(1.5) * cov.matrix().determinant().sqrt();
    Ok((-0.5 * d).exp() / eta)
}
