//! Manifolds as chart atlases carrying a Riemannian metric.
//!
//! Two geometries are supported:
//!
//! * **Charted** manifolds whose coordinates are each either linear (an open
//!   interval) or periodic angles. A periodic angle is covered by two charts,
//!   the principal one and one shifted by `pi`, so a manifold with `k` periodic
//!   coordinates carries `2^k` charts. Transitions are shifts modulo `2 pi`,
//!   so their Jacobians are the identity and tangent components carry over
//!   unchanged.
//! * The **rotation group** SO(3), carried by a single matrix chart (nine
//!   entries, row-major). Tangent vectors are expressed in the left-invariant
//!   frame `x e1, x e2, x e3`, in which the bi-invariant metric
//!   `<X, Y> = tr(X^T Y) / 2` is the identity and the connection coefficients
//!   are `[e_j, e_k] / 2`.

use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::expr::{Expr, Var};
use crate::so3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub struct ChartId(pub usize);

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ChartPoint {
    pub chart: ChartId,
    pub coords: Vec<f64>,
}

impl ChartPoint {
    pub fn new(chart: ChartId, coords: Vec<f64>) -> Self {
        ChartPoint { chart, coords }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TangentVec {
    pub base: ChartPoint,
    pub components: Vec<f64>,
}

impl TangentVec {
    pub fn new(base: ChartPoint, components: Vec<f64>) -> Self {
        TangentVec { base, components }
    }

    pub fn zero(base: ChartPoint, dim: usize) -> Self {
        TangentVec {
            base,
            components: vec![0.0; dim],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CoordKind {
    /// Angle with principal range `[-pi, pi)`.
    Periodic,
    /// Open interval; bounds may be infinite.
    Linear { lo: f64, hi: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Chart {
    pub id: ChartId,
    pub name: String,
    /// Added to chart coordinates to recover principal coordinates.
    pub offsets: Vec<f64>,
    /// Open domain box.
    pub domain: Vec<(f64, f64)>,
}

type MatrixFn = dyn Fn(&[f64]) -> DMatrix<f64> + Send + Sync;
type PartialsFn = dyn Fn(&[f64]) -> Vec<DMatrix<f64>> + Send + Sync;
type VectorFn = dyn Fn(&[f64]) -> Vec<f64> + Send + Sync;

/// Metric tensor field, evaluated in principal coordinates.
#[derive(Clone)]
pub struct MetricField {
    eval: Arc<MatrixFn>,
    partials: Option<Arc<PartialsFn>>,
}

impl fmt::Debug for MetricField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("MetricField")
            .field("analytic_partials", &self.partials.is_some())
            .finish()
    }
}

impl MetricField {
    /// Metric given by a closure; the result is symmetrised.
    pub fn new(eval: impl Fn(&[f64]) -> DMatrix<f64> + Send + Sync + 'static) -> Self {
        MetricField {
            eval: Arc::new(move |x| {
                let g = eval(x);
                (&g + g.transpose()) * 0.5
            }),
            partials: None,
        }
    }

    /// Attaches `dg/dx_k` for `k = 0..n`.
    pub fn with_partials(
        mut self,
        partials: impl Fn(&[f64]) -> Vec<DMatrix<f64>> + Send + Sync + 'static,
    ) -> Self {
        self.partials = Some(Arc::new(partials));
        self
    }

    pub fn identity(n: usize) -> Self {
        MetricField::new(move |_| DMatrix::identity(n, n))
            .with_partials(move |_| vec![DMatrix::zeros(n, n); n])
    }

    /// Metric from upper-triangular entry expressions `(i, j, expr)` with
    /// `i <= j`; missing entries are zero. Partials are derived symbolically.
    pub fn from_exprs(n: usize, entries: Vec<(usize, usize, Expr)>) -> Self {
        let entries = Arc::new(entries);
        let partial_entries: Arc<Vec<Vec<(usize, usize, Expr)>>> = Arc::new(
            (0..n)
                .map(|k| {
                    entries
                        .iter()
                        .map(|(i, j, e)| (*i, *j, e.derivative(Var::Coord(k))))
                        .filter(|(_, _, d)| !d.is_zero())
                        .collect()
                })
                .collect(),
        );
        let fill = move |src: &[(usize, usize, Expr)], x: &[f64]| {
            let mut g = DMatrix::zeros(n, n);
            for (i, j, e) in src {
                let v = e.eval(x, 0.0);
                g[(*i, *j)] = v;
                g[(*j, *i)] = v;
            }
            g
        };
        let e2 = entries.clone();
        MetricField {
            eval: Arc::new(move |x| fill(&e2, x)),
            partials: Some(Arc::new(move |x| {
                partial_entries.iter().map(|p| fill(p, x)).collect()
            })),
        }
    }

    pub fn has_analytic_partials(&self) -> bool {
        self.partials.is_some()
    }
}

/// Map from principal coordinates into an ambient Euclidean space.
#[derive(Clone)]
pub struct Embedding {
    map: Arc<VectorFn>,
    pub ambient_dim: usize,
}

impl fmt::Debug for Embedding {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Embedding(R^{})", self.ambient_dim)
    }
}

impl Embedding {
    pub fn new(ambient_dim: usize, map: impl Fn(&[f64]) -> Vec<f64> + Send + Sync + 'static) -> Self {
        Embedding {
            map: Arc::new(map),
            ambient_dim,
        }
    }

    pub fn from_exprs(exprs: Vec<Expr>) -> Self {
        let m = exprs.len();
        Embedding::new(m, move |x| exprs.iter().map(|e| e.eval(x, 0.0)).collect())
    }

    pub fn eval(&self, x: &[f64]) -> Vec<f64> {
        (self.map)(x)
    }
}

/// Closed-form geometry available for a charted manifold.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ClosedForm {
    None,
    /// Flat metric `delta_ij` with straight-line geodesics.
    Euclidean,
}

#[derive(Debug, Clone)]
pub struct ChartedGeometry {
    pub kinds: Vec<CoordKind>,
    pub charts: Vec<Chart>,
    pub metric: MetricField,
    pub embedding: Option<Embedding>,
    pub closed_form: ClosedForm,
}

#[derive(Debug, Clone)]
pub enum Geometry {
    Charted(ChartedGeometry),
    /// SO(3) with the bi-invariant half-trace metric.
    RotationGroup,
}

#[derive(Debug, Clone)]
pub struct ManifoldSpec {
    pub name: String,
    pub dim: usize,
    pub geometry: Geometry,
}

/// Connection coefficients `Gamma^i_{jk}` in the manifold's tangent basis.
#[derive(Debug, Clone, PartialEq)]
pub struct Christoffel {
    n: usize,
    data: Vec<f64>,
}

impl Christoffel {
    pub fn zeros(n: usize) -> Self {
        Christoffel {
            n,
            data: vec![0.0; n * n * n],
        }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn get(&self, i: usize, j: usize, k: usize) -> f64 {
        self.data[(i * self.n + j) * self.n + k]
    }

    fn set(&mut self, i: usize, j: usize, k: usize, v: f64) {
        let n = self.n;
        self.data[(i * n + j) * n + k] = v;
    }

    /// `out^i = Gamma^i_{jk} v^j w^k`.
    pub fn contract(&self, v: &[f64], w: &[f64]) -> Vec<f64> {
        let n = self.n;
        (0..n)
            .map(|i| {
                let mut s = 0.0;
                for j in 0..n {
                    for k in 0..n {
                        s += self.get(i, j, k) * v[j] * w[k];
                    }
                }
                s
            })
            .collect()
    }

    pub fn max_abs_diff(&self, other: &Christoffel) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

pub(crate) fn wrap_angle(theta: f64) -> f64 {
    (theta + PI).rem_euclid(2.0 * PI) - PI
}

/// Fraction of the half-width at which a periodic coordinate leaves the trust region.
const TRUST_FRACTION: f64 = 0.8;

impl ManifoldSpec {
    /// Charted manifold with the given coordinate kinds and metric.
    pub fn charted(name: impl Into<String>, kinds: Vec<CoordKind>, metric: MetricField) -> Self {
        let n = kinds.len();
        let periodic: Vec<usize> = (0..n)
            .filter(|&i| kinds[i] == CoordKind::Periodic)
            .collect();
        let mut charts = Vec::with_capacity(1 << periodic.len());
        for mask in 0..(1usize << periodic.len()) {
            let mut offsets = vec![0.0; n];
            let mut shifted = Vec::new();
            for (bit, &i) in periodic.iter().enumerate() {
                if mask & (1 << bit) != 0 {
                    offsets[i] = PI;
                    shifted.push((i + 1).to_string());
                }
            }
            let domain = kinds
                .iter()
                .map(|k| match *k {
                    CoordKind::Periodic => (-PI, PI),
                    CoordKind::Linear { lo, hi } => (lo, hi),
                })
                .collect();
            let name = if shifted.is_empty() {
                "principal".to_string()
            } else {
                format!("shift({})", shifted.join(","))
            };
            charts.push(Chart {
                id: ChartId(mask),
                name,
                offsets,
                domain,
            });
        }
        ManifoldSpec {
            name: name.into(),
            dim: n,
            geometry: Geometry::Charted(ChartedGeometry {
                kinds,
                charts,
                metric,
                embedding: None,
                closed_form: ClosedForm::None,
            }),
        }
    }

    pub fn with_embedding(mut self, embedding: Embedding) -> Self {
        if let Geometry::Charted(g) = &mut self.geometry {
            g.embedding = Some(embedding);
        }
        self
    }

    pub fn with_closed_form(mut self, closed_form: ClosedForm) -> Self {
        if let Geometry::Charted(g) = &mut self.geometry {
            g.closed_form = closed_form;
        }
        self
    }

    pub fn euclidean(n: usize) -> Self {
        ManifoldSpec::charted(
            format!("R{n}"),
            vec![
                CoordKind::Linear {
                    lo: f64::NEG_INFINITY,
                    hi: f64::INFINITY
                };
                n
            ],
            MetricField::identity(n),
        )
        .with_closed_form(ClosedForm::Euclidean)
    }

    pub fn rotation_group() -> Self {
        ManifoldSpec {
            name: "SO3".into(),
            dim: 3,
            geometry: Geometry::RotationGroup,
        }
    }

    pub fn is_group(&self) -> bool {
        matches!(self.geometry, Geometry::RotationGroup)
    }

    pub fn charted_geometry(&self) -> Option<&ChartedGeometry> {
        match &self.geometry {
            Geometry::Charted(g) => Some(g),
            Geometry::RotationGroup => None,
        }
    }

    pub fn closed_form(&self) -> ClosedForm {
        match &self.geometry {
            Geometry::Charted(g) => g.closed_form,
            Geometry::RotationGroup => ClosedForm::None,
        }
    }

    /// Number of chart coordinates per point (9 for the matrix chart of SO(3)).
    pub fn coord_len(&self) -> usize {
        match &self.geometry {
            Geometry::Charted(_) => self.dim,
            Geometry::RotationGroup => 9,
        }
    }

    pub fn chart_count(&self) -> usize {
        match &self.geometry {
            Geometry::Charted(g) => g.charts.len(),
            Geometry::RotationGroup => 1,
        }
    }

    pub fn chart_name(&self, id: ChartId) -> &str {
        match &self.geometry {
            Geometry::Charted(g) => g.charts.get(id.0).map_or("?", |c| c.name.as_str()),
            Geometry::RotationGroup => "matrix",
        }
    }

    pub fn chart_by_name(&self, name: &str) -> Option<ChartId> {
        match &self.geometry {
            Geometry::Charted(g) => g.charts.iter().find(|c| c.name == name).map(|c| c.id),
            Geometry::RotationGroup => (name == "matrix").then_some(ChartId(0)),
        }
    }

    pub fn embedding(&self) -> Option<&Embedding> {
        self.charted_geometry().and_then(|g| g.embedding.as_ref())
    }

    fn chart(&self, id: ChartId) -> Result<&Chart> {
        match &self.geometry {
            Geometry::Charted(g) => g
                .charts
                .get(id.0)
                .ok_or_else(|| Error::contract(format!("unknown chart id {}", id.0))),
            Geometry::RotationGroup => Err(Error::contract("matrix chart has no box description")),
        }
    }

    /// Checks coordinate count and open-domain membership.
    pub fn check_point(&self, x: &ChartPoint) -> Result<()> {
        if x.coords.len() != self.coord_len() {
            return Err(Error::contract(format!(
                "expected {} coordinates, got {}",
                self.coord_len(),
                x.coords.len()
            )));
        }
        let inside = match &self.geometry {
            Geometry::Charted(_) => {
                let chart = self.chart(x.chart)?;
                x.coords
                    .iter()
                    .zip(&chart.domain)
                    .all(|(v, (lo, hi))| v > lo && v < hi)
            }
            Geometry::RotationGroup => x.chart == ChartId(0) && x.coords.iter().all(|v| v.abs() < 1.5),
        };
        if inside {
            Ok(())
        } else {
            Err(Error::Domain {
                chart: self.chart_name(x.chart).to_string(),
                coords: x.coords.clone(),
            })
        }
    }

    /// Principal coordinates (angles wrapped into `[-pi, pi)`).
    pub fn principal_coords(&self, x: &ChartPoint) -> Vec<f64> {
        match &self.geometry {
            Geometry::Charted(g) => {
                let chart = &g.charts[x.chart.0];
                x.coords
                    .iter()
                    .zip(&chart.offsets)
                    .zip(&g.kinds)
                    .map(|((v, off), kind)| match kind {
                        CoordKind::Periodic => wrap_angle(v + off),
                        CoordKind::Linear { .. } => *v,
                    })
                    .collect()
            }
            Geometry::RotationGroup => x.coords.clone(),
        }
    }

    /// Builds a point from principal coordinates, placed in the most central chart.
    pub fn point(&self, principal: &[f64]) -> Result<ChartPoint> {
        let p = ChartPoint::new(ChartId(0), principal.to_vec());
        if p.coords.len() != self.coord_len() {
            return Err(Error::contract(format!(
                "expected {} coordinates, got {}",
                self.coord_len(),
                p.coords.len()
            )));
        }
        let p = match &self.geometry {
            Geometry::Charted(g) => {
                let wrapped: Vec<f64> = p
                    .coords
                    .iter()
                    .zip(&g.kinds)
                    .map(|(v, k)| match k {
                        CoordKind::Periodic => wrap_angle(*v),
                        CoordKind::Linear { .. } => *v,
                    })
                    .collect();
                self.recentre(&ChartPoint::new(ChartId(0), wrapped))
            }
            Geometry::RotationGroup => p,
        };
        self.check_point(&p)?;
        Ok(p)
    }

    pub fn identity_element(&self) -> Result<ChartPoint> {
        match self.geometry {
            Geometry::RotationGroup => Ok(ChartPoint::new(
                ChartId(0),
                so3::to_coords(&nalgebra::Matrix3::identity()),
            )),
            Geometry::Charted(_) => Err(Error::contract("manifold has no group structure")),
        }
    }

    /// Re-expresses `x` in chart `to`.
    pub fn transition(&self, x: &ChartPoint, to: ChartId) -> Result<ChartPoint> {
        if x.chart == to {
            return Ok(x.clone());
        }
        let from = self.chart(x.chart)?;
        let target = self.chart(to)?;
        let Geometry::Charted(g) = &self.geometry else {
            unreachable!()
        };
        let coords = x
            .coords
            .iter()
            .zip(g.kinds.iter())
            .enumerate()
            .map(|(i, (v, kind))| match kind {
                CoordKind::Periodic => wrap_angle(v + from.offsets[i] - target.offsets[i]),
                CoordKind::Linear { .. } => *v,
            })
            .collect();
        Ok(ChartPoint::new(to, coords))
    }

    /// Whether every coordinate keeps at least 10% of the box width from the boundary.
    pub fn in_trust_region(&self, x: &ChartPoint) -> bool {
        match &self.geometry {
            Geometry::Charted(g) => x.coords.iter().zip(&g.kinds).all(|(v, k)| match *k {
                CoordKind::Periodic => v.abs() <= TRUST_FRACTION * PI,
                CoordKind::Linear { lo, hi } => {
                    if lo.is_finite() && hi.is_finite() {
                        let margin = 0.1 * (hi - lo);
                        *v >= lo + margin && *v <= hi - margin
                    } else {
                        (lo.is_infinite() || *v > lo) && (hi.is_infinite() || *v < hi)
                    }
                }
            }),
            Geometry::RotationGroup => true,
        }
    }

    /// Moves `x` into the chart where its periodic coordinates are most central.
    pub fn recentre(&self, x: &ChartPoint) -> ChartPoint {
        let Geometry::Charted(g) = &self.geometry else {
            return x.clone();
        };
        if g.charts.len() == 1 {
            return x.clone();
        }
        let principal = self.principal_coords(x);
        let mut best = (f64::INFINITY, ChartId(0));
        for chart in &g.charts {
            let score = principal
                .iter()
                .zip(&chart.offsets)
                .zip(&g.kinds)
                .filter(|(_, k)| **k == CoordKind::Periodic)
                .map(|((v, off), _)| wrap_angle(v - off).abs())
                .fold(0.0, f64::max);
            if score < best.0 {
                best = (score, chart.id);
            }
        }
        self.transition(x, best.1).unwrap_or_else(|_| x.clone())
    }

    /// Chart-coordinate displacement from `x` to `y`, expressed in the chart of `x`.
    /// Periodic components are wrapped into `[-pi, pi)`. For SO(3) this is the
    /// algebra logarithm of `x^T y`.
    pub fn chart_difference(&self, x: &ChartPoint, y: &ChartPoint) -> Result<Vec<f64>> {
        match &self.geometry {
            Geometry::Charted(g) => {
                let y = self.transition(y, x.chart)?;
                Ok(x.coords
                    .iter()
                    .zip(&y.coords)
                    .zip(&g.kinds)
                    .map(|((a, b), k)| match k {
                        CoordKind::Periodic => wrap_angle(b - a),
                        CoordKind::Linear { .. } => b - a,
                    })
                    .collect())
            }
            Geometry::RotationGroup => {
                let xm = so3::from_coords(&x.coords);
                let ym = so3::from_coords(&y.coords);
                Ok(so3::log(&(xm.transpose() * ym)).as_slice().to_vec())
            }
        }
    }

    /// Metric tensor `g_ij` at `x`.
    pub fn metric_at(&self, x: &ChartPoint) -> Result<DMatrix<f64>> {
        self.check_point(x)?;
        Ok(self.metric_unchecked(x))
    }

    pub(crate) fn metric_unchecked(&self, x: &ChartPoint) -> DMatrix<f64> {
        match &self.geometry {
            Geometry::Charted(g) => (g.metric.eval)(&self.principal_coords(x)),
            Geometry::RotationGroup => DMatrix::identity(3, 3),
        }
    }

    pub fn inner(&self, x: &ChartPoint, u: &TangentVec, v: &TangentVec) -> Result<f64> {
        if u.base != *x || v.base != *x {
            return Err(Error::contract("tangent vectors must be anchored at the evaluation point"));
        }
        if u.components.len() != self.dim || v.components.len() != self.dim {
            return Err(Error::contract("tangent vector has wrong number of components"));
        }
        let g = self.metric_at(x)?;
        Ok(quad_form(&g, &u.components, &v.components))
    }

    /// `||v||_g` for raw components anchored at `x`.
    pub fn norm(&self, x: &ChartPoint, v: &[f64]) -> f64 {
        let g = self.metric_unchecked(x);
        quad_form(&g, v, v).max(0.0).sqrt()
    }

    /// `dg_ij / dx_k` for each `k`, analytic when available.
    pub fn metric_partials(&self, x: &ChartPoint) -> Vec<DMatrix<f64>> {
        match &self.geometry {
            Geometry::Charted(g) => match &g.metric.partials {
                Some(p) => p(&self.principal_coords(x)),
                None => self.metric_partials_fd(x),
            },
            Geometry::RotationGroup => vec![DMatrix::zeros(3, 3); 3],
        }
    }

    /// Central-difference metric derivatives with step `1e-5 max(1, |x_k|)`.
    pub fn metric_partials_fd(&self, x: &ChartPoint) -> Vec<DMatrix<f64>> {
        let n = self.dim;
        if self.is_group() {
            return vec![DMatrix::zeros(n, n); n];
        }
        (0..n)
            .map(|k| {
                let h = 1e-5 * x.coords[k].abs().max(1.0);
                let mut xp = x.clone();
                let mut xm = x.clone();
                xp.coords[k] += h;
                xm.coords[k] -= h;
                (self.metric_unchecked(&xp) - self.metric_unchecked(&xm)) / (2.0 * h)
            })
            .collect()
    }

    /// Connection coefficients at `x` (analytic metric derivatives when available).
    pub fn christoffel_at(&self, x: &ChartPoint) -> Result<Christoffel> {
        self.check_point(x)?;
        match &self.geometry {
            Geometry::RotationGroup => Ok(so3_connection()),
            Geometry::Charted(_) => self.connection(x),
        }
    }

    /// As [`ManifoldSpec::christoffel_at`] without the domain check; used at
    /// intermediate integrator stages.
    pub(crate) fn connection(&self, x: &ChartPoint) -> Result<Christoffel> {
        match &self.geometry {
            Geometry::RotationGroup => Ok(so3_connection()),
            Geometry::Charted(_) => {
                let dg = self.metric_partials(x);
                self.christoffel_from(x, &dg)
            }
        }
    }

    /// Connection coefficients with finite-difference metric derivatives.
    pub fn christoffel_fd(&self, x: &ChartPoint) -> Result<Christoffel> {
        self.check_point(x)?;
        match &self.geometry {
            Geometry::RotationGroup => Ok(so3_connection()),
            Geometry::Charted(_) => {
                let dg = self.metric_partials_fd(x);
                self.christoffel_from(x, &dg)
            }
        }
    }

    fn christoffel_from(&self, x: &ChartPoint, dg: &[DMatrix<f64>]) -> Result<Christoffel> {
        let n = self.dim;
        if let ClosedForm::Euclidean = self.closed_form() {
            return Ok(Christoffel::zeros(n));
        }
        let g = self.metric_unchecked(x);
        let ginv = g
            .clone()
            .cholesky()
            .ok_or_else(|| Error::numerical("metric is not positive definite"))?
            .inverse();
        let mut out = Christoffel::zeros(n);
        for i in 0..n {
            for j in 0..n {
                for k in j..n {
                    let mut s = 0.0;
                    for l in 0..n {
                        s += ginv[(i, l)] * (dg[k][(j, l)] + dg[j][(k, l)] - dg[l][(j, k)]);
                    }
                    out.set(i, j, k, 0.5 * s);
                    out.set(i, k, j, 0.5 * s);
                }
            }
        }
        Ok(out)
    }

    /// Length of a sampled curve by the midpoint rule on chart differences.
    pub fn curve_length(&self, samples: &[(f64, ChartPoint)]) -> Result<f64> {
        if samples.len() < 2 {
            return Err(Error::contract("curve_length needs at least two samples"));
        }
        let mut total = 0.0;
        for w in samples.windows(2) {
            let (a, b) = (&w[0].1, &w[1].1);
            self.check_point(a)?;
            self.check_point(b)?;
            let d = self.chart_difference(a, b)?;
            total += match &self.geometry {
                Geometry::RotationGroup => d.iter().map(|v| v * v).sum::<f64>().sqrt(),
                Geometry::Charted(_) => {
                    let mid = ChartPoint::new(
                        a.chart,
                        a.coords.iter().zip(&d).map(|(x, dx)| x + 0.5 * dx).collect(),
                    );
                    let g = self.metric_unchecked(&mid);
                    quad_form(&g, &d, &d).max(0.0).sqrt()
                }
            };
        }
        Ok(total)
    }

    /// Embedding of `x` into the ambient space, when the manifold has one.
    pub fn embed(&self, x: &ChartPoint) -> Option<Vec<f64>> {
        self.embedding().map(|e| e.eval(&self.principal_coords(x)))
    }

    /// Moves `x` along the tangent direction `v` by one chart/group step:
    /// `x + v` in charts, `x exp(v)` on the group. Used for probing and
    /// finite differences, not for integration.
    pub fn retract(&self, x: &ChartPoint, v: &[f64]) -> ChartPoint {
        match &self.geometry {
            Geometry::Charted(_) => {
                let p = ChartPoint::new(x.chart, x.coords.iter().zip(v).map(|(a, b)| a + b).collect());
                self.recentre(&p)
            }
            Geometry::RotationGroup => {
                let m = so3::from_coords(&x.coords) * so3::exp(&Vector3::from_column_slice(v));
                ChartPoint::new(ChartId(0), so3::to_coords(&m))
            }
        }
    }

    /// Deterministic pseudo-random points: uniform over the principal box for
    /// charted manifolds (infinite bounds truncated to `[-span, span]`),
    /// `exp` of algebra elements with norm below `span` on the group.
    pub fn sample_points(&self, count: usize, span: f64, seed: u64) -> Vec<ChartPoint> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..count)
            .map(|_| match &self.geometry {
                Geometry::Charted(g) => {
                    let c: Vec<f64> = g
                        .kinds
                        .iter()
                        .map(|k| match *k {
                            CoordKind::Periodic => rng.random_range(-PI..PI),
                            CoordKind::Linear { lo, hi } => {
                                rng.random_range(lo.max(-span)..hi.min(span))
                            }
                        })
                        .collect();
                    self.point(&c).expect("sampled point lies in the atlas")
                }
                Geometry::RotationGroup => {
                    let a = loop {
                        let a = Vector3::new(
                            rng.random_range(-span..span),
                            rng.random_range(-span..span),
                            rng.random_range(-span..span),
                        );
                        if a.norm() < span {
                            break a;
                        }
                    };
                    ChartPoint::new(ChartId(0), so3::to_coords(&so3::exp(&a)))
                }
            })
            .collect()
    }
}

pub(crate) fn quad_form(g: &DMatrix<f64>, u: &[f64], v: &[f64]) -> f64 {
    let u = DVector::from_column_slice(u);
    let v = DVector::from_column_slice(v);
    u.dot(&(g * v))
}

fn so3_connection() -> Christoffel {
    let mut out = Christoffel::zeros(3);
    for j in 0..3 {
        for k in 0..3 {
            let (mut ej, mut ek) = (Vector3::zeros(), Vector3::zeros());
            ej[j] = 1.0;
            ek[k] = 1.0;
            let c = so3::bracket(&ej, &ek);
            for i in 0..3 {
                out.set(i, j, k, 0.5 * c[i]);
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::systems::torus_manifold;
    use approx::assert_abs_diff_eq;

    #[test]
    fn euclidean_metric_is_identity() {
        let m = ManifoldSpec::euclidean(2);
        let x = m.point(&[0.3, -7.0]).unwrap();
        assert_eq!(m.metric_at(&x).unwrap(), DMatrix::identity(2, 2));
        let u = TangentVec::new(x.clone(), vec![1.0, 0.0]);
        let v = TangentVec::new(x.clone(), vec![0.0, 1.0]);
        assert_eq!(m.inner(&x, &u, &v).unwrap(), 0.0);
        let zero = TangentVec::zero(x.clone(), 2);
        assert_eq!(m.inner(&x, &u, &zero).unwrap(), 0.0);
        let c = m.christoffel_at(&x).unwrap();
        assert!(c.data.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn torus_metric_values() {
        let m = torus_manifold();
        let g = m.metric_at(&m.point(&[0.0, 0.4]).unwrap()).unwrap();
        assert_abs_diff_eq!(g, DMatrix::from_diagonal(&DVector::from_vec(vec![0.25, 2.25])), epsilon = 1e-15);
        // theta1 = pi sits on the shifted chart
        let x = m.point(&[PI, 0.0]).unwrap();
        let g = m.metric_at(&x).unwrap();
        assert_abs_diff_eq!(g, DMatrix::from_diagonal(&DVector::from_vec(vec![0.25, 0.25])), epsilon = 1e-15);
        let x0 = m.point(&[0.0, 0.0]).unwrap();
        let u = TangentVec::new(x0.clone(), vec![1.0, 0.0]);
        assert_abs_diff_eq!(m.inner(&x0, &u, &u).unwrap(), 0.25, epsilon = 1e-15);
    }

    #[test]
    fn inner_rejects_foreign_base_points() {
        let m = torus_manifold();
        let x = m.point(&[0.0, 0.0]).unwrap();
        let y = m.point(&[0.1, 0.0]).unwrap();
        let u = TangentVec::new(y, vec![1.0, 0.0]);
        assert!(matches!(m.inner(&x, &u, &u), Err(Error::Contract(_))));
    }

    #[test]
    fn domain_errors_name_the_chart() {
        let m = torus_manifold();
        let bad = ChartPoint::new(ChartId(0), vec![3.5, 0.0]);
        match m.metric_at(&bad) {
            Err(Error::Domain { chart, .. }) => assert_eq!(chart, "principal"),
            other => panic!("{other:?}"),
        }
        assert!(m.metric_at(&ChartPoint::new(ChartId(0), vec![0.0])).is_err());
    }

    #[test]
    fn torus_christoffel_closed_form() {
        let m = torus_manifold();
        let x = m.point(&[PI / 2.0, 0.3]).unwrap();
        let c = m.christoffel_at(&x).unwrap();
        // Gamma^1_{22} = (R + r cos th1) sin th1 / r
        assert_abs_diff_eq!(c.get(0, 1, 1), 2.0, epsilon = 1e-12);
        for i in 0..2 {
            for j in 0..2 {
                for k in 0..2 {
                    assert_eq!(c.get(i, j, k), c.get(i, k, j));
                }
            }
        }
        // theta1-circles are geodesics
        assert_eq!(c.get(0, 0, 0), 0.0);
        assert_eq!(c.get(1, 0, 0), 0.0);
    }

    #[test]
    fn transitions_invert_on_overlaps() {
        let m = torus_manifold();
        for p in m.sample_points(200, 1.0, 3) {
            for to in 0..m.chart_count() {
                let q = m.transition(&p, ChartId(to)).unwrap();
                let back = m.transition(&q, p.chart).unwrap();
                let err = p
                    .coords
                    .iter()
                    .zip(&back.coords)
                    .map(|(a, b)| wrap_angle(a - b).abs())
                    .fold(0.0, f64::max);
                assert!(err < 1e-10);
                // metric is chart independent (identity transition Jacobian)
                if m.check_point(&q).is_ok() {
                    let d = m.metric_unchecked(&p) - m.metric_unchecked(&q);
                    assert!(d.amax() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn curve_length_cases() {
        let e = ManifoldSpec::euclidean(2);
        let n = 1000;
        let seg: Vec<_> = (0..=n)
            .map(|k| {
                let s = k as f64 / n as f64;
                (s, e.point(&[3.0 * s, 4.0 * s]).unwrap())
            })
            .collect();
        assert_abs_diff_eq!(e.curve_length(&seg).unwrap(), 5.0, epsilon = 1e-6);
        let constant: Vec<_> = (0..5).map(|k| (k as f64, e.point(&[1.0, 1.0]).unwrap())).collect();
        assert_eq!(e.curve_length(&constant).unwrap(), 0.0);

        let m = torus_manifold();
        let circle: Vec<_> = (0..=n)
            .map(|k| {
                let s = PI * k as f64 / n as f64;
                (s, m.point(&[0.0, s]).unwrap())
            })
            .collect();
        assert_abs_diff_eq!(m.curve_length(&circle).unwrap(), 1.5 * PI, epsilon = 1e-5);
        assert!(m.curve_length(&circle[..1]).is_err());
    }

    #[test]
    fn so3_connection_is_half_bracket() {
        let m = ManifoldSpec::rotation_group();
        let c = m.christoffel_at(&m.identity_element().unwrap()).unwrap();
        // antisymmetric in the lower indices, so geodesic acceleration vanishes
        let v = [0.3, -1.0, 2.0];
        assert!(c.contract(&v, &v).iter().all(|a| a.abs() < 1e-15));
        let e1 = Vector3::new(1.0, 0.0, 0.0);
        let e2 = Vector3::new(0.0, 1.0, 0.0);
        let b = so3::bracket(&e1, &e2);
        for i in 0..3 {
            assert_eq!(c.get(i, 0, 1), 0.5 * b[i]);
        }
    }
}
