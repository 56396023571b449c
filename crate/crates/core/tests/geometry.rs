use std::f64::consts::PI;

use approx::assert_abs_diff_eq;
use nalgebra::{DMatrix, Vector3};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use riemavg::geodesic::{distance_shooting, log_map_shooting};
use riemavg::so3;
use riemavg::systems::{so3_system, torus_manifold};
use riemavg::*;

fn cfg() -> GeodesicSolverConfig {
    GeodesicSolverConfig::default()
}

fn manifolds() -> Vec<ManifoldSpec> {
    vec![torus_manifold(), ManifoldSpec::euclidean(2), ManifoldSpec::euclidean(3), ManifoldSpec::rotation_group()]
}

/// Random points within g-distance `radius` of `x`.
fn nearby(m: &ManifoldSpec, x: &ChartPoint, radius: f64, rng: &mut ChaCha8Rng) -> ChartPoint {
    let g = m.metric_at(x).unwrap();
    let u: Vec<f64> = (0..m.dim).map(|_| rng.random_range(-1.0..1.0)).collect();
    let n = u
        .iter()
        .enumerate()
        .map(|(i, a)| (0..m.dim).map(|j| a * g[(i, j)] * u[j]).sum::<f64>())
        .sum::<f64>()
        .sqrt();
    let scale = radius * rng.random_range(0.1..1.0) / n;
    m.retract(x, &u.iter().map(|c| c * scale).collect::<Vec<_>>())
}

#[test]
fn metric_is_spd_on_sampled_points() {
    for m in manifolds() {
        for x in m.sample_points(1000, 5.0, 11) {
            let g = m.metric_at(&x).unwrap();
            assert_eq!(g, g.transpose());
            let eig = g.symmetric_eigenvalues();
            assert!(eig.iter().all(|e| *e > 0.0), "{} at {:?}", m.name, x.coords);
        }
    }
}

#[test]
fn torus_christoffel_matches_finite_differences() {
    let m = torus_manifold();
    let mut worst = 0.0f64;
    for i in 0..50 {
        for j in 0..50 {
            let p = [-PI + 2.0 * PI * i as f64 / 50.0, -PI + 2.0 * PI * j as f64 / 50.0];
            let x = m.point(&p).unwrap();
            worst = worst.max(m.christoffel_at(&x).unwrap().max_abs_diff(&m.christoffel_fd(&x).unwrap()));
        }
    }
    assert!(worst < 1e-6, "{worst:e}");
}

#[test]
fn torus_christoffel_closed_form() {
    // Gamma^1_22 = (R + r cos a) sin a / r, Gamma^2_12 = -r sin a / (R + r cos a)
    let m = torus_manifold();
    for a in [-2.5, -0.4, 0.0, 1.1, 2.9] {
        let x = m.point(&[a, 0.3]).unwrap();
        let c = m.christoffel_at(&x).unwrap();
        let w = 1.0 + 0.5 * f64::cos(a);
        assert_abs_diff_eq!(c.get(0, 1, 1), w * a.sin() / 0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(c.get(1, 0, 1), -0.5 * a.sin() / w, epsilon = 1e-12);
        assert_abs_diff_eq!(c.get(1, 1, 0), -0.5 * a.sin() / w, epsilon = 1e-12);
        assert_eq!(c.get(0, 0, 0), 0.0);
    }
}

#[test]
fn torus_metric_is_embedding_pullback() {
    let m = torus_manifold();
    for x in m.sample_points(200, 1.0, 5) {
        let c = m.principal_coords(&x);
        let emb = m.embedding().unwrap();
        let h = 1e-6;
        let mut jac = DMatrix::zeros(3, 2);
        for k in 0..2 {
            let mut p = c.clone();
            let mut q = c.clone();
            p[k] += h;
            q[k] -= h;
            let (ep, eq) = (emb.eval(&p), emb.eval(&q));
            for i in 0..3 {
                jac[(i, k)] = (ep[i] - eq[i]) / (2.0 * h);
            }
        }
        let pull = jac.transpose() * jac;
        let g = m.metric_at(&x).unwrap();
        assert!((pull - g).abs().max() < 1e-8);
    }
}

#[test]
fn curve_length_is_parametrization_invariant() {
    let m = torus_manifold();
    let curve = |s: f64| m.point(&[0.3 + 1.5 * s, -1.0 + 2.5 * s * s]).unwrap();
    let n = 4000;
    let uniform: Vec<(f64, ChartPoint)> = (0..=n).map(|k| k as f64 / n as f64).map(|s| (s, curve(s))).collect();
    let warped: Vec<(f64, ChartPoint)> = (0..=n)
        .map(|k| k as f64 / n as f64)
        .map(|u| (u, curve(u * u * (3.0 - 2.0 * u))))
        .collect();
    let a = m.curve_length(&uniform).unwrap();
    let b = m.curve_length(&warped).unwrap();
    assert!((a - b).abs() < 1e-6, "{a} vs {b}");

    let g = ManifoldSpec::rotation_group();
    let w = Vector3::new(0.3, -0.2, 0.9);
    let rot = |s: f64| ChartPoint::new(ChartId(0), so3::to_coords(&so3::exp(&(w * s))));
    let uniform: Vec<(f64, ChartPoint)> = (0..=n).map(|k| k as f64 / n as f64).map(|s| (s, rot(s))).collect();
    let warped: Vec<(f64, ChartPoint)> = (0..=n)
        .map(|k| k as f64 / n as f64)
        .map(|u| (u, rot(u.powi(3))))
        .collect();
    assert_abs_diff_eq!(g.curve_length(&uniform).unwrap(), w.norm(), epsilon = 1e-12);
    assert_abs_diff_eq!(g.curve_length(&warped).unwrap(), w.norm(), epsilon = 1e-12);
}

#[test]
fn geodesic_speed_is_conserved() {
    let m = torus_manifold();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for x in m.sample_points(20, 1.0, 9) {
        let v = TangentVec::new(x.clone(), vec![rng.random_range(-2.0..2.0), rng.random_range(-1.0..1.0)]);
        let speed0 = m.norm(&x, &v.components);
        let (y, w) = geodesic_ivp(&m, &x, &v, 3.0, &cfg()).unwrap();
        assert!((m.norm(&y, &w.components) - speed0).abs() < 1e-8);
    }
    let g = ManifoldSpec::rotation_group();
    let x = g.identity_element().unwrap();
    let v = TangentVec::new(x.clone(), vec![0.4, -1.2, 0.7]);
    let (y, w) = geodesic_ivp(&g, &x, &v, 5.0, &cfg()).unwrap();
    assert!((g.norm(&y, &w.components) - g.norm(&x, &v.components)).abs() < 1e-8);
}

#[test]
fn distance_symmetry_and_triangle_on_nearby_points() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    for m in manifolds() {
        let bases = m.sample_points(100, 2.0, 23);
        for x in &bases {
            let y = nearby(&m, x, 0.6, &mut rng);
            let z = nearby(&m, x, 0.6, &mut rng);
            let dxy = distance(&m, x, &y, &cfg()).unwrap();
            let dyx = distance(&m, &y, x, &cfg()).unwrap();
            assert!((dxy - dyx).abs() < 1e-6, "{}: {dxy} vs {dyx}", m.name);
            let dxz = distance(&m, x, &z, &cfg()).unwrap();
            let dyz = distance(&m, &y, &z, &cfg()).unwrap();
            assert!(dxz <= dxy + dyz + 1e-6, "{}: {dxz} > {dxy} + {dyz}", m.name);
        }
    }
}

#[test]
fn so3_closed_form_matches_shooting() {
    let m = ManifoldSpec::rotation_group();
    let mut rng = ChaCha8Rng::seed_from_u64(41);
    let mut count = 0;
    while count < 50 {
        let a: Vector3<f64> = Vector3::from_fn(|_, _| rng.random_range(-2.0..2.0));
        let b: Vector3<f64> = Vector3::from_fn(|_, _| rng.random_range(-0.9..0.9));
        if b.norm() >= PI / 2.0 {
            continue;
        }
        let xm = so3::exp(&a);
        let x = ChartPoint::new(ChartId(0), so3::to_coords(&xm));
        let y = ChartPoint::new(ChartId(0), so3::to_coords(&(xm * so3::exp(&b))));
        let closed = distance(&m, &x, &y, &cfg()).unwrap();
        let shot = distance_shooting(&m, &x, &y, &cfg()).unwrap();
        assert!((closed - shot).abs() < 1e-6, "{closed} vs {shot}");
        assert_abs_diff_eq!(closed, b.norm(), epsilon = 1e-12);
        count += 1;
    }
}

#[test]
fn exp_log_roundtrip_inside_probed_radius() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let grid = [0.1, 0.2, 0.4, 0.8, 1.6];
    for m in [torus_manifold(), ManifoldSpec::rotation_group()] {
        for x in m.sample_points(4, 1.0, 77) {
            let rho = injectivity_probe(&m, &x, &grid, &cfg()).unwrap();
            assert!(rho >= 0.2, "{}: radius {rho}", m.name);
            for _ in 0..10 {
                let y = nearby(&m, &x, 0.9 * rho, &mut rng);
                let v = log_map(&m, &x, &y, &cfg()).unwrap();
                let back = exp_map(&m, &x, &v, &cfg()).unwrap();
                let gap = m.chart_difference(&back, &y).unwrap();
                assert!(m.norm(&back, &gap) < 1e-6);
            }
        }
    }
}

#[test]
fn shooting_reports_consistent_lengths() {
    let m = torus_manifold();
    let x = m.point(&[0.5, -0.5]).unwrap();
    let y = m.point(&[0.9, 0.1]).unwrap();
    let est = log_map_shooting(&m, &x, &y, &cfg()).unwrap();
    assert!(!est.upper_bound);
    assert_abs_diff_eq!(est.length, m.norm(&x, &est.velocity.components), epsilon = 1e-15);
}

#[test]
fn so3_system_fields_are_skew() {
    let b = so3_system();
    for k in 0..50 {
        let t = 0.13 * k as f64;
        let a = b.nominal.components(&b.x0, t);
        let m = so3::hat(&Vector3::from_column_slice(&a));
        assert_eq!(m + m.transpose(), nalgebra::Matrix3::zeros());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn torus_metric_spd(a in -PI..PI, b in -PI..PI) {
        let m = torus_manifold();
        let g = m.metric_at(&m.point(&[a, b]).unwrap()).unwrap();
        prop_assert!(g[(0, 0)] > 0.0 && g.determinant() > 0.0);
    }

    #[test]
    fn chart_transitions_preserve_geometry(a in -PI..PI, b in -PI..PI) {
        let m = torus_manifold();
        let x = m.point(&[a, b]).unwrap();
        for id in 0..m.chart_count() {
            let y = m.transition(&x, ChartId(id)).unwrap();
            prop_assert!(m.chart_difference(&x, &y).unwrap().iter().all(|d| d.abs() < 1e-12));
            prop_assert!((m.metric_at(&y).unwrap() - m.metric_at(&x).unwrap()).abs().max() < 1e-12);
        }
    }

    #[test]
    fn euclidean_distance_is_closed_form(p in prop::collection::vec(-5.0f64..5.0, 3), q in prop::collection::vec(-5.0f64..5.0, 3)) {
        let m = ManifoldSpec::euclidean(3);
        let d = distance(&m, &m.point(&p).unwrap(), &m.point(&q).unwrap(), &cfg()).unwrap();
        let want = p.iter().zip(&q).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
        prop_assert!((d - want).abs() < 1e-12);
    }
}
