//! Geodesic initial-value integration, exponential and logarithm maps, and
//! Riemannian distance.
//!
//! Closed forms are used where the manifold provides them (flat space and
//! SO(3)); otherwise the logarithm is found by Gauss-Newton shooting on the
//! initial velocity with a deterministic multistart.

use nalgebra::{DMatrix, DVector, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::manifold::{ChartPoint, ClosedForm, Geometry, ManifoldSpec, TangentVec};
use crate::so3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeodesicSolverConfig {
    /// Arc length covered by one RK4 step.
    pub step_size: f64,
    /// Endpoint tolerance in chart coordinates.
    pub shooting_tol: f64,
    pub max_shooting_iters: usize,
    pub multistart_count: usize,
    pub seed: u64,
}

impl Default for GeodesicSolverConfig {
    fn default() -> Self {
        GeodesicSolverConfig {
            step_size: 1e-3,
            shooting_tol: 1e-9,
            max_shooting_iters: 40,
            multistart_count: 8,
            seed: 0,
        }
    }
}

impl GeodesicSolverConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.step_size > 0.0) || !(self.shooting_tol > 0.0) {
            return Err(Error::contract("step_size and shooting_tol must be positive"));
        }
        if self.max_shooting_iters == 0 || self.multistart_count == 0 {
            return Err(Error::contract("max_shooting_iters and multistart_count must be at least 1"));
        }
        Ok(())
    }
}

/// Result of a shooting solve.
#[derive(Debug, Clone, PartialEq)]
pub struct LogEstimate {
    pub velocity: TangentVec,
    /// `||velocity||_g`.
    pub length: f64,
    /// Set when converged multistart solutions disagree in length by more
    /// than `1e-4`: the length is then only known to bound the distance from above.
    pub upper_bound: bool,
}

/// Integrates the geodesic equation from `x` with initial velocity `v` up to
/// parameter `s`. Returns the endpoint and the velocity there.
pub fn geodesic_ivp(
    m: &ManifoldSpec,
    x: &ChartPoint,
    v: &TangentVec,
    s: f64,
    cfg: &GeodesicSolverConfig,
) -> Result<(ChartPoint, TangentVec)> {
    cfg.validate()?;
    m.check_point(x)?;
    if v.base != *x || v.components.len() != m.dim {
        return Err(Error::contract("initial velocity must be anchored at the start point"));
    }
    if !(s >= 0.0) {
        return Err(Error::contract("geodesic parameter must be non-negative"));
    }
    let speed = m
        .norm(x, &v.components)
        .max(v.components.iter().map(|c| c * c).sum::<f64>().sqrt());
    if speed == 0.0 || s == 0.0 {
        return Ok((x.clone(), TangentVec::new(x.clone(), v.components.clone())));
    }
    let steps = ((s * speed / cfg.step_size).ceil() as usize).max(1);
    let h = s / steps as f64;
    match &m.geometry {
        Geometry::RotationGroup => {
            let gamma = m.connection(x)?;
            let mut xm = so3::from_coords(&x.coords);
            let mut vel = Vector3::from_column_slice(&v.components);
            for _ in 0..steps {
                xm *= so3::exp(&(vel * h));
                let acc = gamma.contract(vel.as_slice(), vel.as_slice());
                vel -= Vector3::from_column_slice(&acc) * h;
            }
            let end = ChartPoint::new(x.chart, so3::to_coords(&xm));
            let vel = vel.as_slice().to_vec();
            Ok((end.clone(), TangentVec::new(end, vel)))
        }
        Geometry::Charted(_) => {
            let n = m.dim;
            let mut pos = x.clone();
            let mut vel = v.components.clone();
            let rhs = |p: &ChartPoint, vel: &[f64]| -> Result<Vec<f64>> {
                let g = m.connection(p)?;
                Ok(g.contract(vel, vel).into_iter().map(|a| -a).collect())
            };
            let shifted = |p: &ChartPoint, dx: &[f64], f: f64| {
                ChartPoint::new(p.chart, p.coords.iter().zip(dx).map(|(a, b)| a + f * b).collect())
            };
            let axpy = |a: &[f64], b: &[f64], f: f64| -> Vec<f64> {
                a.iter().zip(b).map(|(x, y)| x + f * y).collect()
            };
            for k in 0..steps {
                let k1x = vel.clone();
                let k1v = rhs(&pos, &vel)?;
                let k2x = axpy(&vel, &k1v, 0.5 * h);
                let k2v = rhs(&shifted(&pos, &k1x, 0.5 * h), &k2x)?;
                let k3x = axpy(&vel, &k2v, 0.5 * h);
                let k3v = rhs(&shifted(&pos, &k2x, 0.5 * h), &k3x)?;
                let k4x = axpy(&vel, &k3v, h);
                let k4v = rhs(&shifted(&pos, &k3x, h), &k4x)?;
                for i in 0..n {
                    pos.coords[i] += h / 6.0 * (k1x[i] + 2.0 * k2x[i] + 2.0 * k3x[i] + k4x[i]);
                    vel[i] += h / 6.0 * (k1v[i] + 2.0 * k2v[i] + 2.0 * k3v[i] + k4v[i]);
                }
                if !m.in_trust_region(&pos) {
                    pos = m.recentre(&pos);
                }
                if m.check_point(&pos).is_err() {
                    return Err(Error::Escape {
                        time: h * (k + 1) as f64,
                        last: pos,
                    });
                }
            }
            Ok((pos.clone(), TangentVec::new(pos, vel)))
        }
    }
}

/// `exp_x(v)`: closed form when available, otherwise the geodesic at parameter 1.
pub fn exp_map(m: &ManifoldSpec, x: &ChartPoint, v: &TangentVec, cfg: &GeodesicSolverConfig) -> Result<ChartPoint> {
    m.check_point(x)?;
    if v.base != *x || v.components.len() != m.dim {
        return Err(Error::contract("tangent vector must be anchored at the base point"));
    }
    match (&m.geometry, m.closed_form()) {
        (Geometry::RotationGroup, _) => Ok(m.retract(x, &v.components)),
        (Geometry::Charted(_), ClosedForm::Euclidean) => {
            let y = m.retract(x, &v.components);
            m.check_point(&y)?;
            Ok(y)
        }
        (Geometry::Charted(_), ClosedForm::None) => geodesic_ivp(m, x, v, 1.0, cfg).map(|(y, _)| y),
    }
}

/// `log_x(y)`: closed form when available, otherwise shooting.
pub fn log_map(m: &ManifoldSpec, x: &ChartPoint, y: &ChartPoint, cfg: &GeodesicSolverConfig) -> Result<TangentVec> {
    m.check_point(x)?;
    m.check_point(y)?;
    match (&m.geometry, m.closed_form()) {
        (Geometry::RotationGroup, _) | (Geometry::Charted(_), ClosedForm::Euclidean) => {
            Ok(TangentVec::new(x.clone(), m.chart_difference(x, y)?))
        }
        (Geometry::Charted(_), ClosedForm::None) => log_map_shooting(m, x, y, cfg).map(|e| e.velocity),
    }
}

fn endpoint_residual(m: &ManifoldSpec, end: &ChartPoint, y: &ChartPoint) -> Result<Vec<f64>> {
    match &m.geometry {
        // entrywise, so the solve never consults the closed-form logarithm
        Geometry::RotationGroup => Ok(end.coords.iter().zip(&y.coords).map(|(a, b)| a - b).collect()),
        Geometry::Charted(_) => Ok(m.chart_difference(end, y)?.into_iter().map(|d| -d).collect()),
    }
}

fn initial_direction(m: &ManifoldSpec, x: &ChartPoint, y: &ChartPoint) -> Result<Vec<f64>> {
    match &m.geometry {
        Geometry::RotationGroup => {
            // first-order guess vee(x^T (y - x))
            let xm = so3::from_coords(&x.coords);
            let ym = so3::from_coords(&y.coords);
            Ok(so3::vee(&(xm.transpose() * (ym - xm))).as_slice().to_vec())
        }
        Geometry::Charted(_) => m.chart_difference(x, y),
    }
}

fn seed_from(points: &[&ChartPoint], seed: u64) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325 ^ seed;
    for p in points {
        h = (h ^ p.chart.0 as u64).wrapping_mul(0x0000_0100_0000_01b3);
        for c in &p.coords {
            h = (h ^ c.to_bits()).wrapping_mul(0x0000_0100_0000_01b3);
        }
    }
    h
}

fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |a, b| a.max(b.abs()))
}

/// Damped Gauss-Newton on the initial velocity from a single start.
/// Returns the converged velocity or the best residual seen.
fn shoot_once(
    m: &ManifoldSpec,
    x: &ChartPoint,
    y: &ChartPoint,
    start: Vec<f64>,
    cfg: &GeodesicSolverConfig,
) -> std::result::Result<Vec<f64>, f64> {
    let n = m.dim;
    let eval = |v: &[f64]| -> Option<Vec<f64>> {
        let tv = TangentVec::new(x.clone(), v.to_vec());
        let (end, _) = geodesic_ivp(m, x, &tv, 1.0, cfg).ok()?;
        endpoint_residual(m, &end, y).ok()
    };
    let mut v = start;
    let Some(mut r) = eval(&v) else {
        return Err(f64::INFINITY);
    };
    let mut rnorm = inf_norm(&r);
    for _ in 0..cfg.max_shooting_iters {
        if rnorm < cfg.shooting_tol {
            return Ok(v);
        }
        let rows = r.len();
        let mut jac = DMatrix::zeros(rows, n);
        let delta = 1e-7 * inf_norm(&v).max(1.0);
        for j in 0..n {
            let mut vp = v.clone();
            vp[j] += delta;
            let Some(rp) = eval(&vp) else {
                return Err(rnorm);
            };
            for i in 0..rows {
                jac[(i, j)] = (rp[i] - r[i]) / delta;
            }
        }
        let rhs = -DVector::from_column_slice(&r);
        let step = match jac.clone().svd(true, true).solve(&rhs, 1e-12) {
            Ok(s) => s,
            Err(_) => return Err(rnorm),
        };
        let mut alpha = 1.0;
        let mut accepted = false;
        for _ in 0..8 {
            let cand: Vec<f64> = v.iter().zip(step.iter()).map(|(a, b)| a + alpha * b).collect();
            if let Some(rc) = eval(&cand) {
                let cn = inf_norm(&rc);
                if cn < rnorm {
                    v = cand;
                    r = rc;
                    rnorm = cn;
                    accepted = true;
                    break;
                }
            }
            alpha *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    if rnorm < cfg.shooting_tol {
        Ok(v)
    } else {
        Err(rnorm)
    }
}

/// Logarithm by shooting, regardless of closed-form hooks.
pub fn log_map_shooting(
    m: &ManifoldSpec,
    x: &ChartPoint,
    y: &ChartPoint,
    cfg: &GeodesicSolverConfig,
) -> Result<LogEstimate> {
    cfg.validate()?;
    m.check_point(x)?;
    m.check_point(y)?;
    let base = initial_direction(m, x, y)?;
    if inf_norm(&endpoint_residual(m, x, y)?) == 0.0 {
        return Ok(LogEstimate {
            velocity: TangentVec::zero(x.clone(), m.dim),
            length: 0.0,
            upper_bound: false,
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed_from(&[x, y], cfg.seed));
    let scale = 0.2 * inf_norm(&base).max(1e-6);
    let mut converged: Vec<(f64, Vec<f64>)> = Vec::new();
    let mut best_residual = f64::INFINITY;
    for attempt in 0..cfg.multistart_count {
        let start: Vec<f64> = if attempt == 0 {
            base.clone()
        } else {
            base.iter().map(|b| b + scale * rng.random_range(-1.0..1.0)).collect()
        };
        match shoot_once(m, x, y, start, cfg) {
            Ok(v) => converged.push((m.norm(x, &v), v)),
            Err(res) => best_residual = best_residual.min(res),
        }
    }
    if converged.is_empty() {
        return Err(Error::NonConvergence {
            attempts: cfg.multistart_count,
            residual: best_residual,
        });
    }
    converged.sort_by(|a, b| a.0.total_cmp(&b.0));
    let spread = converged.last().map_or(0.0, |l| l.0) - converged[0].0;
    let (length, v) = converged.swap_remove(0);
    Ok(LogEstimate {
        velocity: TangentVec::new(x.clone(), v),
        length,
        upper_bound: spread > 1e-4,
    })
}

/// Riemannian distance together with the upper-bound flag from shooting.
pub fn distance_estimate(
    m: &ManifoldSpec,
    x: &ChartPoint,
    y: &ChartPoint,
    cfg: &GeodesicSolverConfig,
) -> Result<(f64, bool)> {
    m.check_point(x)?;
    m.check_point(y)?;
    match (&m.geometry, m.closed_form()) {
        (Geometry::RotationGroup, _) => {
            let xm = so3::from_coords(&x.coords);
            let ym = so3::from_coords(&y.coords);
            Ok((so3::angle(&(xm.transpose() * ym)), false))
        }
        (Geometry::Charted(_), ClosedForm::Euclidean) => {
            let d = m.chart_difference(x, y)?;
            Ok((d.iter().map(|v| v * v).sum::<f64>().sqrt(), false))
        }
        (Geometry::Charted(_), ClosedForm::None) => {
            let e = log_map_shooting(m, x, y, cfg)?;
            Ok((e.length, e.upper_bound))
        }
    }
}

pub fn distance(m: &ManifoldSpec, x: &ChartPoint, y: &ChartPoint, cfg: &GeodesicSolverConfig) -> Result<f64> {
    distance_estimate(m, x, y, cfg).map(|(d, _)| d)
}

/// Distance through the shooting path even when a closed form exists.
pub fn distance_shooting(m: &ManifoldSpec, x: &ChartPoint, y: &ChartPoint, cfg: &GeodesicSolverConfig) -> Result<f64> {
    log_map_shooting(m, x, y, cfg).map(|e| e.length)
}

/// Unit-norm probe directions at `x`: a ring of 8 for surfaces, the
/// orthonormal frame and its negatives otherwise.
pub(crate) fn probe_directions(m: &ManifoldSpec, x: &ChartPoint) -> Result<Vec<Vec<f64>>> {
    let n = m.dim;
    let g = m.metric_unchecked(x);
    let chol = g
        .cholesky()
        .ok_or_else(|| Error::numerical("metric is not positive definite"))?;
    // v = L^{-T} u has ||v||_g = |u|
    let lt_inv = chol
        .l()
        .transpose()
        .try_inverse()
        .ok_or_else(|| Error::numerical("singular metric factor"))?;
    let units: Vec<DVector<f64>> = if n == 2 {
        (0..8)
            .map(|k| {
                let a = k as f64 * std::f64::consts::FRAC_PI_4;
                DVector::from_vec(vec![a.cos(), a.sin()])
            })
            .collect()
    } else {
        let mut out = Vec::new();
        for i in 0..n {
            for sign in [1.0, -1.0] {
                let mut u = DVector::zeros(n);
                u[i] = sign;
                out.push(u);
            }
        }
        out
    };
    Ok(units.into_iter().map(|u| (&lt_inv * u).as_slice().to_vec()).collect())
}

/// Largest grid radius `rho` such that exp/log round trips succeed, and
/// recover the probe length, for probe points at g-distance `rho / 2` and
/// `rho` in every probe direction.
pub fn injectivity_probe(
    m: &ManifoldSpec,
    x: &ChartPoint,
    radius_grid: &[f64],
    cfg: &GeodesicSolverConfig,
) -> Result<f64> {
    if radius_grid.windows(2).any(|w| w[1] <= w[0]) || radius_grid.iter().any(|r| *r <= 0.0) {
        return Err(Error::contract("radius grid must be increasing and positive"));
    }
    let dirs = probe_directions(m, x)?;
    let mut best = 0.0;
    for &rho in radius_grid {
        let ok = dirs.iter().all(|u| {
            [0.5, 1.0].iter().all(|frac| {
                let len = rho * frac;
                let v = TangentVec::new(x.clone(), u.iter().map(|c| c * len).collect());
                let Ok(y) = exp_map(m, x, &v, cfg) else {
                    return false;
                };
                let Ok(w) = log_map(m, x, &y, cfg) else {
                    return false;
                };
                let Ok(z) = exp_map(m, x, &w, cfg) else {
                    return false;
                };
                let Ok(gap) = m.chart_difference(&z, &y) else {
                    return false;
                };
                m.norm(&z, &gap) < 10.0 * cfg.shooting_tol && (m.norm(x, &w.components) - len).abs() < 1e-6
            })
        });
        if !ok {
            break;
        }
        best = rho;
    }
    Ok(best)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::systems::torus_manifold;
    use approx::assert_abs_diff_eq;
    use std::f64::consts::PI;

    fn cfg() -> GeodesicSolverConfig {
        GeodesicSolverConfig::default()
    }

    #[test]
    fn zero_velocity_stays_put() {
        let m = torus_manifold();
        let x = m.point(&[0.2, -1.0]).unwrap();
        let (y, v) = geodesic_ivp(&m, &x, &TangentVec::zero(x.clone(), 2), 3.0, &cfg()).unwrap();
        assert_eq!(y, x);
        assert_eq!(v.components, vec![0.0, 0.0]);
        assert_eq!(exp_map(&m, &x, &TangentVec::zero(x.clone(), 2), &cfg()).unwrap(), x);
    }

    #[test]
    fn euclidean_lines() {
        let m = ManifoldSpec::euclidean(2);
        let x = m.point(&[0.0, 0.0]).unwrap();
        let v = TangentVec::new(x.clone(), vec![1.0, 2.0]);
        let (y, _) = geodesic_ivp(&m, &x, &v, 1.0, &cfg()).unwrap();
        assert_abs_diff_eq!(y.coords[0], 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(y.coords[1], 2.0, epsilon = 1e-12);
        assert_eq!(exp_map(&m, &x, &v, &cfg()).unwrap().coords, vec![1.0, 2.0]);
        let z = m.point(&[3.0, 4.0]).unwrap();
        assert_eq!(log_map(&m, &x, &z, &cfg()).unwrap().components, vec![3.0, 4.0]);
        assert_eq!(distance(&m, &x, &z, &cfg()).unwrap(), 5.0);
        assert_eq!(distance(&m, &x, &x, &cfg()).unwrap(), 0.0);
        assert_eq!(injectivity_probe(&m, &x, &[0.5, 1.0, 2.0], &cfg()).unwrap(), 2.0);
    }

    #[test]
    fn torus_meridian_half_turn() {
        let m = torus_manifold();
        let x = m.point(&[0.0, 0.0]).unwrap();
        let v = TangentVec::new(x.clone(), vec![2.0, 0.0]); // unit g-norm
        let (y, w) = geodesic_ivp(&m, &x, &v, 0.5 * PI, &cfg()).unwrap();
        let th = m.principal_coords(&y);
        assert_abs_diff_eq!(crate::manifold::wrap_angle(th[0] - PI), 0.0, epsilon = 1e-10);
        assert_abs_diff_eq!(th[1], 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(m.norm(&y, &w.components), 1.0, epsilon = 1e-10);
        // crossing theta1 = pi forced a chart switch
        assert_ne!(y.chart, x.chart);
    }

    #[test]
    fn torus_log_along_parallel() {
        let m = torus_manifold();
        let x = m.point(&[0.0, 0.0]).unwrap();
        let y = m.point(&[0.0, PI / 4.0]).unwrap();
        let v = log_map(&m, &x, &y, &cfg()).unwrap();
        assert_abs_diff_eq!(v.components[0], 0.0, epsilon = 1e-9);
        assert_abs_diff_eq!(v.components[1], PI / 4.0, epsilon = 1e-9);
        let d = distance(&m, &x, &y, &cfg()).unwrap();
        assert_abs_diff_eq!(d, 1.5 * PI / 4.0, epsilon = 1e-8);
    }

    #[test]
    fn so3_distance_and_exp() {
        let m = ManifoldSpec::rotation_group();
        let id = m.identity_element().unwrap();
        let y = ChartPoint::new(id.chart, so3::to_coords(&so3::rot_z(PI / 3.0)));
        assert_abs_diff_eq!(distance(&m, &id, &y, &cfg()).unwrap(), PI / 3.0, epsilon = 1e-15);
        assert_abs_diff_eq!(distance_shooting(&m, &id, &y, &cfg()).unwrap(), PI / 3.0, epsilon = 1e-6);

        let th = 0.9;
        let v = TangentVec::new(id.clone(), vec![th, 0.0, 0.0]);
        let closed = exp_map(&m, &id, &v, &cfg()).unwrap();
        let (integrated, _) = geodesic_ivp(&m, &id, &v, 1.0, &cfg()).unwrap();
        for (a, b) in closed.coords.iter().zip(&integrated.coords) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-8);
        }
        assert_abs_diff_eq!(closed.coords[0], th.cos(), epsilon = 1e-15);
        assert_abs_diff_eq!(closed.coords[1], th.sin(), epsilon = 1e-15);
    }

    #[test]
    fn injectivity_probes() {
        let t = torus_manifold();
        let x = t.point(&[0.0, 0.0]).unwrap();
        let grid = [0.1, 0.2, 0.3, 0.4, 0.5];
        assert_eq!(injectivity_probe(&t, &x, &grid, &cfg()).unwrap(), 0.5);
        let g = ManifoldSpec::rotation_group();
        let id = g.identity_element().unwrap();
        assert_eq!(injectivity_probe(&g, &id, &[0.25, 0.5, 0.75, 1.0], &cfg()).unwrap(), 1.0);
        // beyond pi the logarithm picks the shorter rotation
        assert_eq!(injectivity_probe(&g, &id, &[1.0, 2.0, 4.0], &cfg()).unwrap(), 2.0);
        assert!(injectivity_probe(&g, &id, &[1.0, 0.5], &cfg()).is_err());
    }

    #[test]
    fn invalid_config_is_rejected() {
        let m = ManifoldSpec::euclidean(1);
        let x = m.point(&[0.0]).unwrap();
        let bad = GeodesicSolverConfig {
            step_size: 0.0,
            ..cfg()
        };
        let v = TangentVec::new(x.clone(), vec![1.0]);
        assert!(geodesic_ivp(&m, &x, &v, 1.0, &bad).is_err());
        assert!(geodesic_ivp(&m, &x, &v, -1.0, &cfg()).is_err());
    }
}
