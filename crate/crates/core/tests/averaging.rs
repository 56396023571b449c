use std::f64::consts::PI;

use proptest::prelude::*;
use riemavg::systems::{so3_system, torus_system};
use riemavg::*;

#[test]
fn torus_average_on_sampled_points() {
    let b = torus_system();
    let avg = average_field(&b.nominal, b.period, DEFAULT_NODES).unwrap();
    let printed = b.alternate_averaged.clone().unwrap();
    let mut worst_gap: f64 = 0.0;
    for x in b.manifold.sample_points(100, 1.0, 8) {
        let c = b.manifold.principal_coords(&x);
        let v = avg.eval(&x);
        assert!((v[0] + c[0]).abs() < 1e-10);
        assert!((v[1] - (c[0] - c[1])).abs() < 1e-10);
        worst_gap = worst_gap.max((v[1] - printed.components(&x, 0.0)[1]).abs());
    }
    // the alternate form differs by 2 x1, which is not small away from x1 = 0
    assert!(worst_gap > 1.0);
}

#[test]
fn so3_average_matrix() {
    let b = so3_system();
    let avg = average_field(&b.nominal, b.period, DEFAULT_NODES).unwrap();
    let m = riemavg::so3::hat(&nalgebra::Vector3::from_column_slice(&avg.eval(&b.x0)));
    let want = nalgebra::Matrix3::new(0.0, 0.5, 1.0, -0.5, 0.0, 0.0, -1.0, 0.0, 0.0);
    assert!((m - want).abs().max() < 1e-10);
}

#[test]
fn simpson_is_exact_for_low_harmonics() {
    // sin^2 and cos^2 averages at the default node count
    let m = ManifoldSpec::euclidean(1);
    let f = TimeVaryingField::new("harm", |_, t| vec![t.sin().powi(2) + (3.0 * t).cos()]).with_period(2.0 * PI);
    let avg = average_field(&f, 2.0 * PI, DEFAULT_NODES).unwrap();
    let x = m.point(&[0.0]).unwrap();
    assert!((avg.eval(&x)[0] - 0.5).abs() < 1e-14);
}

fn family(a: f64, w: f64) -> TimeVaryingField {
    TimeVaryingField::new("fam", move |x, t| vec![a * x.coords[0] + (w * t).sin(), x.coords[1] * t.cos() - a])
        .with_period(2.0 * PI)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn averaging_is_linear(a in -2.0f64..2.0, b in -2.0f64..2.0, p in -1.0f64..1.0, q in -1.0f64..1.0) {
        let m = ManifoldSpec::euclidean(2);
        let f = family(1.3, 1.0);
        let g = family(-0.4, 2.0);
        let x = m.point(&[p, q]).unwrap();
        let combo = TimeVaryingField::linear_combination(a, &f, b, &g);
        let lhs = average_field(&combo, 2.0 * PI, 128).unwrap().eval(&x);
        let fa = average_field(&f, 2.0 * PI, 128).unwrap().eval(&x);
        let ga = average_field(&g, 2.0 * PI, 128).unwrap().eval(&x);
        for i in 0..2 {
            prop_assert!((lhs[i] - (a * fa[i] + b * ga[i])).abs() < 1e-12);
        }
    }

    #[test]
    fn averaging_ignores_time_shift(shift in 0.0f64..6.0, p in -1.0f64..1.0) {
        let m = ManifoldSpec::euclidean(2);
        let f = family(0.8, 1.0);
        let f2 = f.clone();
        let shifted = TimeVaryingField::new("shifted", move |x, t| f2.components(x, t + shift)).with_period(2.0 * PI);
        let x = m.point(&[p, 0.5]).unwrap();
        let a = average_field(&f, 2.0 * PI, DEFAULT_NODES).unwrap().eval(&x);
        let b = average_field(&shifted, 2.0 * PI, DEFAULT_NODES).unwrap().eval(&x);
        for i in 0..2 {
            prop_assert!((a[i] - b[i]).abs() < 1e-10);
        }
    }

    #[test]
    fn averaging_is_idempotent(p in -1.0f64..1.0, q in -1.0f64..1.0) {
        let m = ManifoldSpec::euclidean(2);
        let x = m.point(&[p, q]).unwrap();
        let once = average_field(&family(0.5, 1.0), 2.0 * PI, 64).unwrap();
        let twice = average_field(&once.as_field(), 2.0 * PI, 64).unwrap();
        prop_assert_eq!(once.eval(&x), twice.eval(&x));
    }
}
