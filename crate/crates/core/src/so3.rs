//! Rotation group helpers.
//!
//! Algebra coordinates use the basis
//!
//! ```text
//! e1 = [[0, 1, 0], [-1, 0, 0], [0, 0, 0]]
//! e2 = [[0, 0, 0], [0, 0, 1], [0, -1, 0]]
//! e3 = [[0, 0, 1], [0, 0, 0], [-1, 0, 0]]
//! ```
//!
//! which is orthonormal for `<X, Y> = tr(X^T Y) / 2`. Group elements are
//! carried in charts as their nine entries in row-major order.

use nalgebra::{Matrix3, Vector3};

pub type Algebra = Vector3<f64>;

pub fn hat(a: &Algebra) -> Matrix3<f64> {
    Matrix3::new(
        0.0, a[0], a[2], //
        -a[0], 0.0, a[1], //
        -a[2], -a[1], 0.0,
    )
}

/// Coordinates of the skew-symmetric part of `m`.
pub fn vee(m: &Matrix3<f64>) -> Algebra {
    Vector3::new(
        0.5 * (m[(0, 1)] - m[(1, 0)]),
        0.5 * (m[(1, 2)] - m[(2, 1)]),
        0.5 * (m[(0, 2)] - m[(2, 0)]),
    )
}

pub fn bracket(a: &Algebra, b: &Algebra) -> Algebra {
    let (x, y) = (hat(a), hat(b));
    vee(&(x * y - y * x))
}

/// Matrix exponential of `hat(a)` (Rodrigues).
pub fn exp(a: &Algebra) -> Matrix3<f64> {
    let x = hat(a);
    let th2 = a.norm_squared();
    let th = th2.sqrt();
    let (s, c) = if th < 1e-4 {
        (
            1.0 - th2 / 6.0 + th2 * th2 / 120.0,
            0.5 - th2 / 24.0 + th2 * th2 / 720.0,
        )
    } else {
        (th.sin() / th, (1.0 - th.cos()) / th2)
    };
    Matrix3::identity() + x * s + x * x * c
}

/// Rotation angle of `r` in `[0, pi]`.
pub fn angle(r: &Matrix3<f64>) -> f64 {
    let cos = 0.5 * (r.trace() - 1.0);
    let sin = vee(r).norm();
    sin.atan2(cos)
}

/// Principal logarithm, returned in algebra coordinates.
pub fn log(r: &Matrix3<f64>) -> Algebra {
    let th = angle(r);
    let s = vee(r);
    if th < 1e-4 {
        return s * (1.0 + th * th / 6.0);
    }
    if th < std::f64::consts::PI - 1e-3 {
        return s * (th / th.sin());
    }
    // Near pi the skew part vanishes; recover the axis from the symmetric part.
    let sym = (r + r.transpose()) * 0.5;
    let one_minus_cos = 1.0 - th.cos();
    let wwt = (sym - Matrix3::identity()) / one_minus_cos + Matrix3::identity();
    let k = (0..3)
        .max_by(|&i, &j| wwt[(i, i)].total_cmp(&wwt[(j, j)]))
        .unwrap_or(0);
    let mut w = wwt.column(k).into_owned() / wwt[(k, k)].max(0.0).sqrt();
    // standard axis -> algebra coordinates: a = (-w3, -w1, w2)
    let a_dir = Vector3::new(-w[2], -w[0], w[1]);
    if a_dir.dot(&s) < 0.0 {
        w = -w;
    }
    Vector3::new(-w[2], -w[0], w[1]).normalize() * th
}

/// Correction `u' = k + [u, k]/2 + [u, [u, k]]/12` for `x exp(u)` parametrisations
/// of left-invariant motion. Truncation is sufficient for fourth order.
pub fn dexp_inv(u: &Algebra, k: &Algebra) -> Algebra {
    let uk = bracket(u, k);
    k + uk * 0.5 + bracket(u, &uk) / 12.0
}

pub fn from_coords(c: &[f64]) -> Matrix3<f64> {
    Matrix3::from_row_slice(&c[..9])
}

pub fn to_coords(m: &Matrix3<f64>) -> Vec<f64> {
    let mut out = Vec::with_capacity(9);
    for i in 0..3 {
        for j in 0..3 {
            out.push(m[(i, j)]);
        }
    }
    out
}

/// `||x^T x - I||_F`.
pub fn orthogonality_defect(x: &Matrix3<f64>) -> f64 {
    (x.transpose() * x - Matrix3::identity()).norm()
}

pub fn rot_z(theta: f64) -> Matrix3<f64> {
    let (s, c) = theta.sin_cos();
    Matrix3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn basis_is_orthonormal_for_half_trace() {
        for i in 0..3 {
            for j in 0..3 {
                let mut a = Vector3::zeros();
                let mut b = Vector3::zeros();
                a[i] = 1.0;
                b[j] = 1.0;
                let ip = 0.5 * (hat(&a).transpose() * hat(&b)).trace();
                assert_eq!(ip, if i == j { 1.0 } else { 0.0 });
            }
        }
    }

    #[test]
    fn exp_of_e1_rotates_first_plane() {
        let th = 0.7;
        let r = exp(&Vector3::new(th, 0.0, 0.0));
        assert!((r[(0, 0)] - th.cos()).abs() < 1e-15);
        assert!((r[(0, 1)] - th.sin()).abs() < 1e-15);
        assert!((r[(2, 2)] - 1.0).abs() < 1e-15);
        assert!((angle(&rot_z(std::f64::consts::FRAC_PI_3)) - std::f64::consts::FRAC_PI_3).abs() < 1e-15);
    }

    #[test]
    fn log_near_pi() {
        let a = Vector3::new(0.3, -2.0, 1.1).normalize() * (std::f64::consts::PI - 1e-5);
        let back = log(&exp(&a));
        assert!((back - a).norm() < 1e-6, "{back} vs {a}");
    }

    proptest! {
        #[test]
        fn exp_log_roundtrip(a1 in -1.5f64..1.5, a2 in -1.5f64..1.5, a3 in -1.5f64..1.5) {
            let a = Vector3::new(a1, a2, a3);
            prop_assume!(a.norm() < 3.0);
            let r = exp(&a);
            prop_assert!(orthogonality_defect(&r) < 1e-14);
            prop_assert!((log(&r) - a).norm() < 1e-12);
            prop_assert!((angle(&r) - a.norm()).abs() < 1e-12);
        }
    }
}
