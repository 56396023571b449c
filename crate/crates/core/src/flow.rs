//! Time-varying vector fields and their flows.
//!
//! Charted manifolds are integrated with the classical RK4 scheme in chart
//! coordinates, switching charts whenever the state leaves the trust region.
//! On SO(3) the state is advanced as `x exp(u)` with a fourth-order
//! Runge-Kutta-Munthe-Kaas combination of frozen algebra elements, which keeps
//! the iterate on the group up to the accuracy of the Rodrigues formula.

use std::fmt;
use std::io::Write;
use std::sync::Arc;

use nalgebra::Vector3;

use crate::error::{Error, Result};
use crate::manifold::{ChartPoint, Geometry, ManifoldSpec, TangentVec};
use crate::so3;

type FieldFn = dyn Fn(&ChartPoint, f64) -> Vec<f64> + Send + Sync;

/// Vector field `f(x, t)`, components in the manifold's tangent basis
/// (coordinate basis in charts, left-invariant frame on SO(3)).
#[derive(Clone)]
pub struct TimeVaryingField {
    pub label: String,
    pub period: Option<f64>,
    autonomous: bool,
    eval: Arc<FieldFn>,
}

impl fmt::Debug for TimeVaryingField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("TimeVaryingField")
            .field("label", &self.label)
            .field("period", &self.period)
            .field("autonomous", &self.autonomous)
            .finish()
    }
}

impl TimeVaryingField {
    pub fn new(label: impl Into<String>, eval: impl Fn(&ChartPoint, f64) -> Vec<f64> + Send + Sync + 'static) -> Self {
        TimeVaryingField {
            label: label.into(),
            period: None,
            autonomous: false,
            eval: Arc::new(eval),
        }
    }

    /// Time-independent field.
    pub fn autonomous(label: impl Into<String>, eval: impl Fn(&ChartPoint) -> Vec<f64> + Send + Sync + 'static) -> Self {
        TimeVaryingField {
            label: label.into(),
            period: None,
            autonomous: true,
            eval: Arc::new(move |x, _| eval(x)),
        }
    }

    pub fn with_period(mut self, period: f64) -> Self {
        self.period = Some(period);
        self
    }

    pub fn zero(dim: usize) -> Self {
        TimeVaryingField::autonomous("zero", move |_| vec![0.0; dim])
    }

    pub fn is_autonomous(&self) -> bool {
        self.autonomous
    }

    pub fn components(&self, x: &ChartPoint, t: f64) -> Vec<f64> {
        (self.eval)(x, t)
    }

    pub fn eval(&self, x: &ChartPoint, t: f64) -> TangentVec {
        TangentVec::new(x.clone(), self.components(x, t))
    }

    /// `eps * f`.
    pub fn scaled(&self, eps: f64) -> Self {
        let inner = self.eval.clone();
        TimeVaryingField {
            label: format!("{eps}*{}", self.label),
            period: self.period,
            autonomous: self.autonomous,
            eval: Arc::new(move |x, t| inner(x, t).into_iter().map(|v| v * eps).collect()),
        }
    }

    /// `a f + b g`.
    pub fn linear_combination(a: f64, f: &TimeVaryingField, b: f64, g: &TimeVaryingField) -> Self {
        let (fe, ge) = (f.eval.clone(), g.eval.clone());
        let period = match (f.period, g.period) {
            (Some(p), Some(q)) if p == q => Some(p),
            (Some(p), None) if g.autonomous => Some(p),
            (None, Some(q)) if f.autonomous => Some(q),
            _ => None,
        };
        TimeVaryingField {
            label: format!("{a}*{} + {b}*{}", f.label, g.label),
            period,
            autonomous: f.autonomous && g.autonomous,
            eval: Arc::new(move |x, t| {
                fe(x, t)
                    .into_iter()
                    .zip(ge(x, t))
                    .map(|(u, v)| a * u + b * v)
                    .collect()
            }),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub samples: Vec<(f64, ChartPoint)>,
    pub field_label: String,
    pub step_size: f64,
}

impl Trajectory {
    pub fn last(&self) -> &ChartPoint {
        &self.samples.last().expect("trajectory is never empty").1
    }

    pub fn times(&self) -> impl Iterator<Item = f64> + '_ {
        self.samples.iter().map(|(t, _)| *t)
    }

    /// CSV with columns `t, chart_id, x_1..x_n[, embed_1..embed_m]`.
    pub fn write_csv(&self, m: &ManifoldSpec, out: &mut impl Write) -> Result<()> {
        let n = m.coord_len();
        let mut header = vec!["t".to_string(), "chart_id".to_string()];
        header.extend((1..=n).map(|i| format!("x_{i}")));
        if let Some(e) = m.embedding() {
            header.extend((1..=e.ambient_dim).map(|i| format!("embed_{i}")));
        }
        writeln!(out, "{}", header.join(","))?;
        for (t, p) in &self.samples {
            let mut row = vec![format!("{t:?}"), m.chart_name(p.chart).to_string()];
            row.extend(p.coords.iter().map(|c| format!("{c:?}")));
            if let Some(e) = m.embed(p) {
                row.extend(e.iter().map(|c| format!("{c:?}")));
            }
            writeln!(out, "{}", row.join(","))?;
        }
        Ok(())
    }
}

/// Default fixed step: `min(1e-2, T / 200)`.
pub fn default_step(period: Option<f64>) -> f64 {
    period.map_or(1e-2, |p| (p / 200.0).min(1e-2))
}

fn step_count(span: f64, step: f64) -> usize {
    ((span / step) * (1.0 - 1e-12)).ceil().max(1.0) as usize
}

fn shifted(p: &ChartPoint, dx: &[f64], f: f64) -> ChartPoint {
    ChartPoint::new(p.chart, p.coords.iter().zip(dx).map(|(a, b)| a + f * b).collect())
}

/// One step of size `h` from `(x, t)`.
pub(crate) fn step_once(m: &ManifoldSpec, f: &TimeVaryingField, x: &ChartPoint, t: f64, h: f64) -> Result<ChartPoint> {
    let next = match &m.geometry {
        Geometry::Charted(_) => {
            let k1 = f.components(x, t);
            let k2 = f.components(&shifted(x, &k1, 0.5 * h), t + 0.5 * h);
            let k3 = f.components(&shifted(x, &k2, 0.5 * h), t + 0.5 * h);
            let k4 = f.components(&shifted(x, &k3, h), t + h);
            let coords = x
                .coords
                .iter()
                .enumerate()
                .map(|(i, c)| c + h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]))
                .collect();
            let p = ChartPoint::new(x.chart, coords);
            if m.in_trust_region(&p) {
                p
            } else {
                m.recentre(&p)
            }
        }
        Geometry::RotationGroup => {
            let xm = so3::from_coords(&x.coords);
            let at = |u: &Vector3<f64>, s: f64| -> Vector3<f64> {
                let p = ChartPoint::new(x.chart, so3::to_coords(&(xm * so3::exp(u))));
                Vector3::from_column_slice(&f.components(&p, s))
            };
            let k1 = at(&Vector3::zeros(), t) * h;
            let u2 = k1 * 0.5;
            let k2 = so3::dexp_inv(&u2, &at(&u2, t + 0.5 * h)) * h;
            let u3 = k2 * 0.5;
            let k3 = so3::dexp_inv(&u3, &at(&u3, t + 0.5 * h)) * h;
            let u4 = k3;
            let k4 = so3::dexp_inv(&u4, &at(&u4, t + h)) * h;
            let u = (k1 + k2 * 2.0 + k3 * 2.0 + k4) / 6.0;
            ChartPoint::new(x.chart, so3::to_coords(&(xm * so3::exp(&u))))
        }
    };
    if m.check_point(&next).is_err() || next.coords.iter().any(|c| !c.is_finite()) {
        return Err(Error::Escape {
            time: t,
            last: x.clone(),
        });
    }
    Ok(next)
}

fn check_inputs(m: &ManifoldSpec, t0: f64, t1: f64, x0: &ChartPoint, step: f64) -> Result<()> {
    if !(step > 0.0) {
        return Err(Error::contract("integration step must be positive"));
    }
    if !(t1 >= t0) {
        return Err(Error::contract("flow requires t1 >= t0"));
    }
    m.check_point(x0)
}

/// Integrates `f` from `(t0, x0)` to `t1` with uniform steps no larger than `step`,
/// recording every step.
pub fn flow(m: &ManifoldSpec, f: &TimeVaryingField, t0: f64, t1: f64, x0: &ChartPoint, step: f64) -> Result<Trajectory> {
    check_inputs(m, t0, t1, x0, step)?;
    let mut samples = vec![(t0, x0.clone())];
    if t1 > t0 {
        let n = step_count(t1 - t0, step);
        let h = (t1 - t0) / n as f64;
        samples.reserve(n);
        let mut x = x0.clone();
        for k in 0..n {
            let t = t0 + k as f64 * h;
            x = step_once(m, f, &x, t, h)?;
            let tk = if k + 1 == n { t1 } else { t0 + (k + 1) as f64 * h };
            samples.push((tk, x.clone()));
        }
    }
    Ok(Trajectory {
        samples,
        field_label: f.label.clone(),
        step_size: step,
    })
}

/// `Phi_f(t, t0, x0)`.
pub fn flow_map(m: &ManifoldSpec, f: &TimeVaryingField, t: f64, t0: f64, x0: &ChartPoint, step: f64) -> Result<ChartPoint> {
    check_inputs(m, t0, t, x0, step)?;
    let mut x = x0.clone();
    if t > t0 {
        let n = step_count(t - t0, step);
        let h = (t - t0) / n as f64;
        for k in 0..n {
            x = step_once(m, f, &x, t0 + k as f64 * h, h)?;
        }
    }
    Ok(x)
}

/// States at the given nondecreasing times, starting from `x0` at `times[0]`.
/// Each interval is split into uniform steps no larger than `step`.
pub fn flow_at_times(m: &ManifoldSpec, f: &TimeVaryingField, x0: &ChartPoint, times: &[f64], step: f64) -> Result<Vec<ChartPoint>> {
    let Some(&t0) = times.first() else {
        return Ok(Vec::new());
    };
    check_inputs(m, t0, *times.last().unwrap_or(&t0), x0, step)?;
    if times.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::contract("sample times must be nondecreasing"));
    }
    let mut out = Vec::with_capacity(times.len());
    let mut x = x0.clone();
    out.push(x.clone());
    for w in times.windows(2) {
        let (a, b) = (w[0], w[1]);
        if b > a {
            let n = step_count(b - a, step);
            let h = (b - a) / n as f64;
            for k in 0..n {
                x = step_once(m, f, &x, a + k as f64 * h, h)?;
            }
        }
        out.push(x.clone());
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::systems::so3_system;
    use approx::assert_abs_diff_eq;

    fn linear(a: f64) -> TimeVaryingField {
        TimeVaryingField::autonomous("ax", move |x| vec![a * x.coords[0]])
    }

    #[test]
    fn zero_field_is_constant() {
        let m = ManifoldSpec::euclidean(2);
        let x0 = m.point(&[0.5, -1.0]).unwrap();
        let tr = flow(&m, &TimeVaryingField::zero(2), 0.0, 1.0, &x0, 0.1).unwrap();
        assert_eq!(tr.samples.len(), 11);
        assert!(tr.samples.iter().all(|(_, p)| *p == x0));
    }

    #[test]
    fn exponential_growth() {
        let m = ManifoldSpec::euclidean(1);
        let x0 = m.point(&[1.0]).unwrap();
        let x1 = flow_map(&m, &linear(1.0), 1.0, 0.0, &x0, 1e-2).unwrap();
        assert_abs_diff_eq!(x1.coords[0], std::f64::consts::E, epsilon = 1e-8);
        assert_eq!(flow_map(&m, &linear(1.0), 0.0, 0.0, &x0, 1e-2).unwrap(), x0);
    }

    #[test]
    fn semigroup_and_autonomy() {
        let m = ManifoldSpec::euclidean(1);
        let f = linear(-0.7);
        let x0 = m.point(&[2.0]).unwrap();
        let direct = flow_map(&m, &f, 2.0, 0.0, &x0, 1e-2).unwrap();
        let mid = flow_map(&m, &f, 0.8, 0.0, &x0, 1e-2).unwrap();
        let composed = flow_map(&m, &f, 2.0, 0.8, &mid, 1e-2).unwrap();
        assert_abs_diff_eq!(direct.coords[0], composed.coords[0], epsilon = 1e-7);
        let shifted = flow_map(&m, &f, 7.0, 5.0, &x0, 1e-2).unwrap();
        assert_abs_diff_eq!(direct.coords[0], shifted.coords[0], epsilon = 1e-8);
    }

    #[test]
    fn bad_inputs() {
        let m = ManifoldSpec::euclidean(1);
        let x0 = m.point(&[1.0]).unwrap();
        assert!(matches!(flow(&m, &linear(1.0), 0.0, 1.0, &x0, 0.0), Err(Error::Contract(_))));
        assert!(matches!(flow(&m, &linear(1.0), 1.0, 0.0, &x0, 0.1), Err(Error::Contract(_))));
    }

    #[test]
    fn escape_reports_last_valid_state() {
        let m = ManifoldSpec::charted(
            "interval",
            vec![crate::manifold::CoordKind::Linear { lo: -1.0, hi: 1.0 }],
            crate::manifold::MetricField::identity(1),
        );
        let x0 = m.point(&[0.0]).unwrap();
        let f = TimeVaryingField::autonomous("drift", |_| vec![1.0]);
        match flow(&m, &f, 0.0, 5.0, &x0, 0.1) {
            Err(Error::Escape { time, last }) => {
                assert!(time < 1.0 + 1e-9);
                assert!(last.coords[0] < 1.0);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn rkmk_is_fourth_order_on_so3() {
        let b = so3_system();
        let f = b.nominal.scaled(0.5);
        let x0 = b.x0.clone();
        let end = |h: f64| so3::from_coords(&flow_map(&b.manifold, &f, 4.0, 0.0, &x0, h).unwrap().coords);
        let (a, c, d) = (end(0.04), end(0.02), end(0.01));
        let ratio = (a - c).norm() / (c - d).norm();
        assert!(ratio > 12.0, "ratio {ratio}");
    }

    #[test]
    fn csv_export_has_embedding_columns() {
        let b = crate::systems::torus_system();
        let tr = flow(&b.manifold, &b.nominal.scaled(0.1), 0.0, 0.05, &b.x0, 0.01).unwrap();
        let mut buf = Vec::new();
        tr.write_csv(&b.manifold, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), "t,chart_id,x_1,x_2,embed_1,embed_2,embed_3");
        assert_eq!(lines.count(), 6);
    }
}
