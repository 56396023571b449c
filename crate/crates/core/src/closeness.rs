//! Numerical checks of nominal-vs-averaged closeness: Gronwall bound,
//! O(eps) sweeps, long-horizon sweeps, and Lyapunov / stability probes.

use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, Vector3};
use rayon::prelude::*;
use serde::Serialize;

use crate::averaging::{average_field, DEFAULT_NODES};
use crate::error::{Error, Result};
use crate::flow::{default_step, flow_at_times, TimeVaryingField};
use crate::geodesic::{distance, probe_directions, GeodesicSolverConfig};
use crate::manifold::{ChartPoint, CoordKind, Geometry, ManifoldSpec};
use crate::so3;

/// Time stepping, sampling density and distance solver shared by the checks.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SampleConfig {
    pub step: f64,
    pub n_samples: usize,
    pub distance: GeodesicSolverConfig,
}

impl Default for SampleConfig {
    fn default() -> Self {
        SampleConfig {
            step: 1e-2,
            n_samples: 400,
            distance: GeodesicSolverConfig {
                multistart_count: 1,
                ..GeodesicSolverConfig::default()
            },
        }
    }
}

impl SampleConfig {
    fn validate(&self) -> Result<()> {
        if !(self.step > 0.0) {
            return Err(Error::contract("integration step must be positive"));
        }
        if self.n_samples < 2 {
            return Err(Error::contract("need at least two distance samples"));
        }
        self.distance.validate()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Pass,
    Fail,
    /// Distances vanish at every epsilon, so there is no slope to fit.
    ExactMatch,
    Inconclusive,
    /// The stability hypothesis could not be established.
    Refused,
}

impl Verdict {
    pub fn is_pass(self) -> bool {
        matches!(self, Verdict::Pass | Verdict::ExactMatch)
    }
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Verdict::Pass => "pass",
            Verdict::Fail => "fail",
            Verdict::ExactMatch => "exact_match",
            Verdict::Inconclusive => "inconclusive",
            Verdict::Refused => "refused",
        };
        f.write_str(s)
    }
}

fn uniform_times(t0: f64, t1: f64, n: usize) -> Vec<f64> {
    if n < 2 || t1 == t0 {
        return vec![t0];
    }
    (0..n)
        .map(|k| if k + 1 == n { t1 } else { t0 + (t1 - t0) * k as f64 / (n - 1) as f64 })
        .collect()
}

/// `d(Phi_f1(t), Phi_f2(t))` at the given nondecreasing times.
pub fn distance_series(
    m: &ManifoldSpec,
    f1: &TimeVaryingField,
    f2: &TimeVaryingField,
    x0: &ChartPoint,
    times: &[f64],
    cfg: &SampleConfig,
) -> Result<Vec<(f64, f64)>> {
    let (a, b) = rayon::join(
        || flow_at_times(m, f1, x0, times, cfg.step),
        || flow_at_times(m, f2, x0, times, cfg.step),
    );
    let (a, b) = (a?, b?);
    let d: Result<Vec<f64>> = a
        .par_iter()
        .zip(b.par_iter())
        .map(|(p, q)| if p == q { Ok(0.0) } else { distance(m, p, q, &cfg.distance) })
        .collect();
    Ok(times.iter().copied().zip(d?).collect())
}

fn argmax(series: &[(f64, f64)]) -> (f64, f64) {
    series
        .iter()
        .fold((f64::NEG_INFINITY, 0.0), |best, &(t, d)| if d > best.0 { (d, t) } else { best })
}

/// Largest distance between the two flows over `n_samples` uniform times
/// on `[t0, t1]`, and the first time it is attained.
pub fn sup_distance(
    m: &ManifoldSpec,
    f1: &TimeVaryingField,
    f2: &TimeVaryingField,
    x0: &ChartPoint,
    t0: f64,
    t1: f64,
    cfg: &SampleConfig,
) -> Result<(f64, f64)> {
    cfg.validate()?;
    if !(t1 >= t0) {
        return Err(Error::contract("sup_distance requires t1 >= t0"));
    }
    let series = distance_series(m, f1, f2, x0, &uniform_times(t0, t1, cfg.n_samples), cfg)?;
    Ok(argmax(&series))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GronwallConstants {
    #[serde(rename = "K")]
    pub k: f64,
    #[serde(rename = "C1")]
    pub c1: f64,
    #[serde(rename = "C2")]
    pub c2: f64,
    pub domain: String,
}

impl GronwallConstants {
    pub fn is_finite(&self) -> bool {
        self.k.is_finite() && self.c1.is_finite() && self.c2.is_finite()
    }

    /// `K (t1 - t0) exp[(C1 + 2 C2)(t - t0)]`.
    pub fn bound(&self, t0: f64, t1: f64, t: f64) -> f64 {
        self.k * (t1 - t0) * ((self.c1 + 2.0 * self.c2) * (t - t0)).exp()
    }
}

/// Covariant differential `(nabla f)^i_j = d_j f^i + Gamma^i_{jk} f^k` at `(x, t)`.
/// Derivatives are central differences in the chart, or along `x exp(h e_j)` on SO(3).
pub fn covariant_differential(m: &ManifoldSpec, f: &TimeVaryingField, x: &ChartPoint, t: f64) -> Result<DMatrix<f64>> {
    let n = m.dim;
    let fx = f.components(x, t);
    let gamma = m.christoffel_at(x)?;
    let mut a = DMatrix::zeros(n, n);
    for j in 0..n {
        let (plus, minus, h) = match &m.geometry {
            Geometry::Charted(_) => {
                let h = 1e-6 * x.coords[j].abs().max(1.0);
                let mut p = x.clone();
                let mut q = x.clone();
                p.coords[j] += h;
                q.coords[j] -= h;
                (p, q, h)
            }
            Geometry::RotationGroup => {
                let h = 1e-6;
                let xm = so3::from_coords(&x.coords);
                let mut e = Vector3::zeros();
                e[j] = h;
                let p = ChartPoint::new(x.chart, so3::to_coords(&(xm * so3::exp(&e))));
                let q = ChartPoint::new(x.chart, so3::to_coords(&(xm * so3::exp(&-e))));
                (p, q, h)
            }
        };
        let fp = f.components(&plus, t);
        let fm = f.components(&minus, t);
        for i in 0..n {
            let mut v = (fp[i] - fm[i]) / (2.0 * h);
            for (k, fk) in fx.iter().enumerate() {
                v += gamma.get(i, j, k) * fk;
            }
            a[(i, j)] = v;
        }
    }
    Ok(a)
}

/// `max_{v != 0} ||A v||_g / ||v||_g`.
pub fn metric_operator_norm(g: &DMatrix<f64>, a: &DMatrix<f64>) -> Result<f64> {
    let chol = g
        .clone()
        .cholesky()
        .ok_or_else(|| Error::numerical("metric is not positive definite"))?;
    let l = chol.l();
    let lt_inv = l
        .transpose()
        .try_inverse()
        .ok_or_else(|| Error::numerical("singular metric factor"))?;
    let b = l.transpose() * a * lt_inv;
    Ok(b.singular_values().max())
}

/// `K = max ||f1 - f2||_g`, `C_i = max ||nabla f_i||_g` over `domain x times`.
pub fn gronwall_constants(
    m: &ManifoldSpec,
    f1: &TimeVaryingField,
    f2: &TimeVaryingField,
    domain: &[ChartPoint],
    times: &[f64],
) -> Result<GronwallConstants> {
    if domain.is_empty() || times.is_empty() {
        return Err(Error::contract("gronwall_constants needs a non-empty sample domain and time window"));
    }
    let window = |f: &TimeVaryingField| if f.is_autonomous() { &times[..1] } else { times };
    let per_point: Result<Vec<(f64, f64, f64)>> = domain
        .par_iter()
        .map(|x| {
            let g = m.metric_at(x)?;
            let mut c1 = 0.0f64;
            for &t in window(f1) {
                c1 = c1.max(metric_operator_norm(&g, &covariant_differential(m, f1, x, t)?)?);
            }
            let mut c2 = 0.0f64;
            for &t in window(f2) {
                c2 = c2.max(metric_operator_norm(&g, &covariant_differential(m, f2, x, t)?)?);
            }
            let frozen = |f: &TimeVaryingField| f.is_autonomous().then(|| f.components(x, times[0]));
            let (a1, a2) = (frozen(f1), frozen(f2));
            let mut k = 0.0f64;
            let kt = if a1.is_some() && a2.is_some() { &times[..1] } else { times };
            for &t in kt {
                let v1 = a1.clone().unwrap_or_else(|| f1.components(x, t));
                let v2 = a2.clone().unwrap_or_else(|| f2.components(x, t));
                let d: Vec<f64> = v1.iter().zip(&v2).map(|(a, b)| a - b).collect();
                k = k.max(m.norm(x, &d));
            }
            Ok((k, c1, c2))
        })
        .collect();
    let (k, c1, c2) = per_point?
        .into_iter()
        .fold((0.0f64, 0.0f64, 0.0f64), |acc, v| (acc.0.max(v.0), acc.1.max(v.1), acc.2.max(v.2)));
    Ok(GronwallConstants {
        k,
        c1,
        c2,
        domain: format!("{} points x {} times", domain.len(), times.len()),
    })
}

/// Sample points covering both trajectories: the principal-coordinate bounding
/// box inflated by 10% (a grid plus the trajectory points) on charted manifolds,
/// trajectory points and their `exp(+-0.05 e_j)` neighbours on SO(3).
pub fn bounding_domain(m: &ManifoldSpec, points: &[ChartPoint], grid_target: usize) -> Result<(Vec<ChartPoint>, String)> {
    match &m.geometry {
        Geometry::RotationGroup => {
            let mut out = Vec::with_capacity(points.len() * 7);
            for p in points {
                out.push(p.clone());
                for j in 0..3 {
                    for s in [0.05, -0.05] {
                        let mut v = [0.0; 3];
                        v[j] = s;
                        out.push(m.retract(p, &v));
                    }
                }
            }
            Ok((out, "trajectory samples with exp(+-0.05 e_j) neighbours".to_string()))
        }
        Geometry::Charted(g) => {
            let n = m.dim;
            let coords: Vec<Vec<f64>> = points.iter().map(|p| m.principal_coords(p)).collect();
            let mut boxes = Vec::with_capacity(n);
            for (i, kind) in g.kinds.iter().enumerate() {
                let lo = coords.iter().map(|c| c[i]).fold(f64::INFINITY, f64::min);
                let hi = coords.iter().map(|c| c[i]).fold(f64::NEG_INFINITY, f64::max);
                let pad = (0.1 * (hi - lo)).max(1e-3);
                let (a, b) = match *kind {
                    CoordKind::Periodic => ((lo - pad).max(-PI), (hi + pad).min(PI - 1e-12)),
                    CoordKind::Linear { lo: dl, hi: dh } => ((lo - pad).max(dl), (hi + pad).min(dh)),
                };
                boxes.push((a, b));
            }
            let per_axis = ((grid_target.max(1) as f64).powf(1.0 / n as f64).ceil() as usize).max(2);
            let mut out: Vec<ChartPoint> = points.to_vec();
            let total = per_axis.pow(n as u32);
            for idx in 0..total {
                let mut rem = idx;
                let c: Vec<f64> = boxes
                    .iter()
                    .map(|(a, b)| {
                        let k = rem % per_axis;
                        rem /= per_axis;
                        a + (b - a) * k as f64 / (per_axis - 1) as f64
                    })
                    .collect();
                out.push(m.point(&c)?);
            }
            let desc = boxes
                .iter()
                .map(|(a, b)| format!("[{a:.4}, {b:.4}]"))
                .collect::<Vec<_>>()
                .join(" x ");
            Ok((out, format!("box {desc} inflated 10%, {per_axis}^{n} grid plus trajectory samples")))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoundSample {
    pub t: f64,
    pub distance: f64,
    pub bound: f64,
    pub margin: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoundReport {
    pub verdict: Verdict,
    pub constants: Option<GronwallConstants>,
    pub samples: Vec<BoundSample>,
    pub note: String,
}

impl BoundReport {
    pub fn min_margin(&self) -> f64 {
        self.samples.iter().map(|s| s.margin).fold(f64::INFINITY, f64::min)
    }
}

/// Checks `d(t) <= K (t1 - t0) exp[(C1 + 2 C2)(t - t0)]` at `cfg.n_samples` times.
pub fn verify_theorem3(
    m: &ManifoldSpec,
    f1: &TimeVaryingField,
    f2: &TimeVaryingField,
    x0: &ChartPoint,
    t0: f64,
    t1: f64,
    cfg: &SampleConfig,
) -> Result<BoundReport> {
    cfg.validate()?;
    if !(t1 > t0) {
        return Err(Error::contract("verify_theorem3 requires t1 > t0"));
    }
    let times = uniform_times(t0, t1, cfg.n_samples);
    let (a, b) = rayon::join(
        || flow_at_times(m, f1, x0, &times, cfg.step),
        || flow_at_times(m, f2, x0, &times, cfg.step),
    );
    let (a, b) = (a?, b?);
    let dist: Vec<f64> = a
        .par_iter()
        .zip(b.par_iter())
        .map(|(p, q)| if p == q { Ok(0.0) } else { distance(m, p, q, &cfg.distance) })
        .collect::<Result<_>>()?;

    let mut pts: Vec<ChartPoint> = a.iter().chain(b.iter()).step_by(4).cloned().collect();
    pts.push(x0.clone());
    let window = match (f1.period, f2.period) {
        (Some(p), Some(q)) if p == q && p < t1 - t0 => (t0, t0 + p),
        (Some(p), None) if f2.is_autonomous() && p < t1 - t0 => (t0, t0 + p),
        (None, Some(q)) if f1.is_autonomous() && q < t1 - t0 => (t0, t0 + q),
        _ => (t0, t1),
    };
    let ctimes = uniform_times(window.0, window.1, 257);
    let constants = bounding_domain(m, &pts, 200)
        .and_then(|(domain, desc)| gronwall_constants(m, f1, f2, &domain, &ctimes).map(|c| GronwallConstants { domain: desc, ..c }));
    let constants = match constants {
        Ok(c) if c.is_finite() => c,
        Ok(c) => {
            return Ok(BoundReport {
                verdict: Verdict::Inconclusive,
                note: "non-finite Gronwall constants".into(),
                constants: Some(c),
                samples: Vec::new(),
            })
        }
        Err(e) => {
            return Ok(BoundReport {
                verdict: Verdict::Inconclusive,
                note: format!("constant estimation failed: {e}"),
                constants: None,
                samples: Vec::new(),
            })
        }
    };
    let samples: Vec<BoundSample> = times
        .iter()
        .zip(&dist)
        .map(|(&t, &d)| {
            let bound = constants.bound(t0, t1, t);
            BoundSample {
                t,
                distance: d,
                bound,
                margin: bound - d,
            }
        })
        .collect();
    let violations = samples.iter().filter(|s| s.margin < 0.0).count();
    Ok(BoundReport {
        verdict: if violations == 0 { Verdict::Pass } else { Verdict::Fail },
        note: format!(
            "{violations} violations over {} samples; constants assume the flows stay inside the sampled region",
            samples.len()
        ),
        constants: Some(constants),
        samples,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepConfig {
    /// Strictly decreasing, positive.
    pub epsilons: Vec<f64>,
    /// Horizon `t1 - t0 = c / eps`.
    pub horizon_constant: f64,
    pub x0: ChartPoint,
    pub t0: f64,
    pub nodes: usize,
    pub sampling: SampleConfig,
    pub slope_window: (f64, f64),
}

impl SweepConfig {
    pub fn new(epsilons: Vec<f64>, horizon_constant: f64, x0: ChartPoint) -> Self {
        SweepConfig {
            epsilons,
            horizon_constant,
            x0,
            t0: 0.0,
            nodes: DEFAULT_NODES,
            sampling: SampleConfig::default(),
            slope_window: (0.7, 1.3),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epsilons.is_empty() {
            return Err(Error::contract("sweep needs at least one epsilon"));
        }
        if self.epsilons.iter().any(|e| !(*e > 0.0) || !e.is_finite()) {
            return Err(Error::contract("epsilons must be positive and finite"));
        }
        if self.epsilons.windows(2).any(|w| w[1] >= w[0]) {
            return Err(Error::contract("epsilons must be strictly decreasing"));
        }
        if !(self.horizon_constant > 0.0) {
            return Err(Error::contract("horizon constant must be positive"));
        }
        self.sampling.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpsilonRecord {
    pub epsilon: f64,
    pub horizon: f64,
    pub sup_distance: Option<f64>,
    pub argmax_t: Option<f64>,
    /// Sup over the short horizon `c / eps` (long-horizon sweeps only).
    pub short_sup_distance: Option<f64>,
    pub samples: usize,
    pub slope_contrib: Option<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClosenessReport {
    pub kind: String,
    pub system: String,
    pub records: Vec<EpsilonRecord>,
    pub slope: Option<f64>,
    pub verdict: Verdict,
    pub constants: Option<GronwallConstants>,
    pub stability: Option<StabilityClass>,
    pub notes: Vec<String>,
}

/// Least-squares line `y = a + b x`; returns `(b, a, r^2)`.
pub(crate) fn linear_fit(xs: &[f64], ys: &[f64]) -> (f64, f64, f64) {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my) * (y - my)).sum();
    let b = sxy / sxx;
    let a = my - b * mx;
    let r2 = if syy == 0.0 { 1.0 } else { (sxy * sxy) / (sxx * syy) };
    (b, a, r2)
}

const EXACT_FLOOR: f64 = 1e-12;

/// Fits `log D` against `log eps` and fills each record's share of the slope.
fn fit_slope(records: &mut [EpsilonRecord], window: (f64, f64), notes: &mut Vec<String>) -> (Option<f64>, Verdict) {
    let ok: Vec<usize> = records
        .iter()
        .enumerate()
        .filter(|(_, r)| r.sup_distance.is_some())
        .map(|(i, _)| i)
        .collect();
    if ok.is_empty() {
        notes.push("no epsilon produced a distance".into());
        return (None, Verdict::Fail);
    }
    if ok.iter().all(|&i| records[i].sup_distance.unwrap_or(0.0) < EXACT_FLOOR) {
        notes.push(format!("all sup distances below {EXACT_FLOOR:e}: exact match, slope fit skipped"));
        return (None, Verdict::ExactMatch);
    }
    let fit: Vec<usize> = ok
        .into_iter()
        .filter(|&i| records[i].sup_distance.unwrap_or(0.0) >= EXACT_FLOOR)
        .collect();
    if fit.len() < 2 {
        notes.push("insufficient points for a slope fit".into());
        return (None, Verdict::Inconclusive);
    }
    let xs: Vec<f64> = fit.iter().map(|&i| records[i].epsilon.ln()).collect();
    let ys: Vec<f64> = fit.iter().map(|&i| records[i].sup_distance.unwrap_or(0.0).ln()).collect();
    let (slope, _, _) = linear_fit(&xs, &ys);
    let mx = xs.iter().sum::<f64>() / xs.len() as f64;
    let my = ys.iter().sum::<f64>() / ys.len() as f64;
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    for (k, &i) in fit.iter().enumerate() {
        records[i].slope_contrib = Some((xs[k] - mx) * (ys[k] - my) / sxx);
    }
    let verdict = if slope >= window.0 && slope <= window.1 { Verdict::Pass } else { Verdict::Fail };
    notes.push(format!("slope window [{}, {}]", window.0, window.1));
    (Some(slope), verdict)
}

fn sweep_run(
    m: &ManifoldSpec,
    f: &TimeVaryingField,
    fhat: &TimeVaryingField,
    cfg: &SweepConfig,
    eps: f64,
    short_c: Option<f64>,
    long_c: f64,
) -> EpsilonRecord {
    let horizon = long_c / eps;
    let t1 = cfg.t0 + horizon;
    let mut times = uniform_times(cfg.t0, t1, cfg.sampling.n_samples);
    let short_t1 = short_c.map(|c| cfg.t0 + c / eps);
    if let Some(s) = short_t1 {
        times.extend(uniform_times(cfg.t0, s, cfg.sampling.n_samples));
        times.sort_by(f64::total_cmp);
        times.dedup();
    }
    let n = times.len();
    let mut rec = EpsilonRecord {
        epsilon: eps,
        horizon,
        sup_distance: None,
        argmax_t: None,
        short_sup_distance: None,
        samples: n,
        slope_contrib: None,
        error: None,
    };
    match distance_series(m, &f.scaled(eps), &fhat.scaled(eps), &cfg.x0, &times, &cfg.sampling) {
        Ok(series) => {
            let (d, t) = argmax(&series);
            rec.sup_distance = Some(d);
            rec.argmax_t = Some(t);
            if let Some(s) = short_t1 {
                let short: Vec<(f64, f64)> = series.iter().copied().filter(|(t, _)| *t <= s).collect();
                rec.short_sup_distance = Some(argmax(&short).0);
            }
        }
        Err(e) => rec.error = Some(e.to_string()),
    }
    rec
}

/// O(eps) check for an explicit averaged field.
pub fn epsilon_sweep_with(
    m: &ManifoldSpec,
    system: &str,
    f: &TimeVaryingField,
    fhat: &TimeVaryingField,
    cfg: &SweepConfig,
) -> Result<ClosenessReport> {
    cfg.validate()?;
    m.check_point(&cfg.x0)?;
    let mut records: Vec<EpsilonRecord> = cfg
        .epsilons
        .par_iter()
        .map(|&eps| sweep_run(m, f, fhat, cfg, eps, None, cfg.horizon_constant))
        .collect();
    let mut notes = vec![format!("horizon {}/eps", cfg.horizon_constant)];
    let (slope, mut verdict) = fit_slope(&mut records, cfg.slope_window, &mut notes);
    let failed = records.iter().filter(|r| r.error.is_some()).count();
    if failed > 0 {
        notes.push(format!("{failed} epsilon runs failed"));
        verdict = Verdict::Fail;
    }
    Ok(ClosenessReport {
        kind: "epsilon_sweep".into(),
        system: system.into(),
        records,
        slope,
        verdict,
        constants: None,
        stability: None,
        notes,
    })
}

/// `D(eps) = sup d(Phi_{eps f}, Phi_{eps f_avg})` on `[t0, t0 + c/eps]` for each
/// eps, and the log-log slope of `D` against `eps`.
pub fn epsilon_sweep(m: &ManifoldSpec, system: &str, f: &TimeVaryingField, period: f64, cfg: &SweepConfig) -> Result<ClosenessReport> {
    let fhat = average_field(f, period, cfg.nodes)?.as_field();
    epsilon_sweep_with(m, system, f, &fhat, cfg)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProbeConfig {
    pub radii: Vec<f64>,
    pub horizon: f64,
    pub n_samples: usize,
    pub distance: GeodesicSolverConfig,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        ProbeConfig {
            radii: vec![0.1, 0.5],
            horizon: 16.0,
            n_samples: 160,
            distance: GeodesicSolverConfig {
                step_size: 1e-2,
                multistart_count: 1,
                ..GeodesicSolverConfig::default()
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LongHorizonConfig {
    /// `c_long`; `None` means `50 c`.
    pub long_constant: Option<f64>,
    pub probe: ProbeConfig,
    /// Accept when every long-horizon distance is at most this value,
    /// instead of the growth criterion. Asymptotic stability suffices then.
    pub fixed_delta: Option<f64>,
    /// Allowed relative growth for both long-horizon checks.
    pub growth_tolerance: f64,
}

impl Default for LongHorizonConfig {
    fn default() -> Self {
        LongHorizonConfig {
            long_constant: None,
            probe: ProbeConfig::default(),
            fixed_delta: None,
            growth_tolerance: 0.5,
        }
    }
}

/// Sweep over `[t0, t0 + c_long/eps]` gated on a stability probe of the
/// averaged field at `center`.
pub fn long_horizon_sweep(
    m: &ManifoldSpec,
    system: &str,
    f: &TimeVaryingField,
    period: f64,
    center: &ChartPoint,
    cfg: &SweepConfig,
    long: &LongHorizonConfig,
) -> Result<ClosenessReport> {
    cfg.validate()?;
    m.check_point(&cfg.x0)?;
    let avg = average_field(f, period, cfg.nodes)?;
    let fhat = avg.as_field();
    let c = cfg.horizon_constant;
    let c_long = long.long_constant.unwrap_or(50.0 * c);
    if !(c_long >= c) {
        return Err(Error::contract("long horizon constant must be at least the short one"));
    }
    let mut notes = vec![format!("short horizon {c}/eps, long horizon {c_long}/eps")];

    let stability = match stability_probe(m, &fhat, center, &long.probe) {
        Ok(s) => s,
        Err(Error::Contract(msg)) => StabilityClass::Inconclusive { reason: msg },
        Err(e) => return Err(e),
    };
    let hypothesis = match (&stability, long.fixed_delta) {
        (StabilityClass::Exponential { .. }, _) => true,
        (StabilityClass::Asymptotic, Some(_)) => true,
        _ => false,
    };
    if !hypothesis {
        notes.push(format!("stability probe did not establish the hypothesis: {stability}"));
        let records = cfg
            .epsilons
            .iter()
            .map(|&eps| EpsilonRecord {
                epsilon: eps,
                horizon: c_long / eps,
                sup_distance: None,
                argmax_t: None,
                short_sup_distance: None,
                samples: 0,
                slope_contrib: None,
                error: Some("refused: stability hypothesis not established".into()),
            })
            .collect();
        return Ok(ClosenessReport {
            kind: "long_horizon_sweep".into(),
            system: system.into(),
            records,
            slope: None,
            verdict: Verdict::Refused,
            constants: None,
            stability: Some(stability),
            notes,
        });
    }

    let mut records: Vec<EpsilonRecord> = cfg
        .epsilons
        .par_iter()
        .map(|&eps| sweep_run(m, f, &fhat, cfg, eps, Some(c), c_long))
        .collect();
    let (slope, slope_verdict) = fit_slope(&mut records, cfg.slope_window, &mut notes);
    let failed = records.iter().filter(|r| r.error.is_some()).count();
    let verdict = if failed > 0 {
        notes.push(format!("{failed} epsilon runs failed"));
        Verdict::Fail
    } else if slope_verdict == Verdict::ExactMatch {
        Verdict::ExactMatch
    } else if let Some(delta) = long.fixed_delta {
        let worst = records.iter().filter_map(|r| r.sup_distance).fold(0.0, f64::max);
        notes.push(format!("fixed delta {delta}: worst long-horizon distance {worst:?}"));
        if worst <= delta { Verdict::Pass } else { Verdict::Fail }
    } else {
        let tol = long.growth_tolerance;
        let ratios: Vec<f64> = records
            .iter()
            .filter_map(|r| r.sup_distance.map(|d| d / r.epsilon))
            .collect();
        let hi = ratios.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lo = ratios.iter().copied().fold(f64::INFINITY, f64::min);
        let spread = hi / lo - 1.0;
        notes.push(format!("D/eps spread {spread:?} (tolerance {tol})"));
        let mut ok = spread < tol;
        for r in &records {
            if let (Some(long_d), Some(short_d)) = (r.sup_distance, r.short_sup_distance) {
                let growth = if short_d > 0.0 { long_d / short_d - 1.0 } else { 0.0 };
                notes.push(format!("eps {:?}: horizon growth {growth:?}", r.epsilon));
                ok &= growth < tol;
            }
        }
        if ok { Verdict::Pass } else { Verdict::Fail }
    };
    Ok(ClosenessReport {
        kind: "long_horizon_sweep".into(),
        system: system.into(),
        records,
        slope,
        verdict,
        constants: None,
        stability: Some(stability),
        notes,
    })
}

type ScalarFn = dyn Fn(&[f64]) -> f64 + Send + Sync;
type GradFn = dyn Fn(&[f64]) -> Vec<f64> + Send + Sync;

/// Candidate Lyapunov function on chart coordinates.
#[derive(Clone)]
pub struct LyapunovProbe {
    pub v: Arc<ScalarFn>,
    pub gradient: Option<Arc<GradFn>>,
    pub center: ChartPoint,
}

impl fmt::Debug for LyapunovProbe {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("LyapunovProbe")
            .field("center", &self.center)
            .field("analytic_gradient", &self.gradient.is_some())
            .finish()
    }
}

impl LyapunovProbe {
    pub fn new(center: ChartPoint, v: impl Fn(&[f64]) -> f64 + Send + Sync + 'static) -> Self {
        LyapunovProbe {
            v: Arc::new(v),
            gradient: None,
            center,
        }
    }

    pub fn with_gradient(mut self, grad: impl Fn(&[f64]) -> Vec<f64> + Send + Sync + 'static) -> Self {
        self.gradient = Some(Arc::new(grad));
        self
    }

    /// `v(center) = 0` and `v > 0` at probe points of g-radius `radius`.
    pub fn validate(&self, m: &ManifoldSpec, radius: f64) -> Result<()> {
        let v0 = (self.v)(&self.center.coords);
        if v0.abs() > 1e-12 {
            return Err(Error::contract(format!("v(center) = {v0:?}, expected 0")));
        }
        for u in probe_directions(m, &self.center)? {
            for frac in [0.25, 0.5, 1.0] {
                let step: Vec<f64> = u.iter().map(|c| c * radius * frac).collect();
                let p = m.retract(&self.center, &step);
                let p = m.transition(&p, self.center.chart)?;
                if !((self.v)(&p.coords) > 0.0) {
                    return Err(Error::contract("v is not positive on the sampled punctured neighbourhood"));
                }
            }
        }
        Ok(())
    }

    pub fn gradient_at(&self, x: &[f64]) -> Vec<f64> {
        match &self.gradient {
            Some(g) => g(x),
            None => self.gradient_fd(x),
        }
    }

    /// Central differences with step `1e-6 max(1, |x_i|)`.
    pub fn gradient_fd(&self, x: &[f64]) -> Vec<f64> {
        (0..x.len())
            .map(|i| {
                let h = 1e-6 * x[i].abs().max(1.0);
                let mut p = x.to_vec();
                let mut q = x.to_vec();
                p[i] += h;
                q[i] -= h;
                ((self.v)(&p) - (self.v)(&q)) / (2.0 * h)
            })
            .collect()
    }
}

/// Velocity of `x` along `f` in coordinate space.
fn coordinate_velocity(m: &ManifoldSpec, x: &ChartPoint, f: &[f64]) -> Vec<f64> {
    match &m.geometry {
        Geometry::Charted(_) => f.to_vec(),
        Geometry::RotationGroup => {
            let xm = so3::from_coords(&x.coords);
            so3::to_coords(&(xm * so3::hat(&Vector3::from_column_slice(f))))
        }
    }
}

/// `L_f v = dv(f)` at `(x, t)`, with `x` in the chart of the probe.
pub fn lie_derivative(m: &ManifoldSpec, probe: &LyapunovProbe, f: &TimeVaryingField, x: &ChartPoint, t: f64) -> f64 {
    let dir = coordinate_velocity(m, x, &f.components(x, t));
    probe.gradient_at(&x.coords).iter().zip(&dir).map(|(a, b)| a * b).sum()
}

/// Worst Lie derivative found on a punctured neighbourhood of the probe centre.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LieScan {
    pub radius: f64,
    pub points: usize,
    pub max_lie_derivative: f64,
    /// Principal coordinates of the worst point.
    pub worst_point: Vec<f64>,
    pub negative: bool,
}

/// Evaluates `L_f v` on `rings` concentric g-rings of radius up to `radius`
/// around the probe centre.
pub fn lie_derivative_scan(
    m: &ManifoldSpec,
    probe: &LyapunovProbe,
    f: &TimeVaryingField,
    radius: f64,
    rings: usize,
    t: f64,
) -> Result<LieScan> {
    if !(radius > 0.0) || rings == 0 {
        return Err(Error::contract("scan needs a positive radius and at least one ring"));
    }
    let dirs = probe_directions(m, &probe.center)?;
    let mut worst = (f64::NEG_INFINITY, Vec::new());
    let mut points = 0;
    for k in 1..=rings {
        let r = radius * k as f64 / rings as f64;
        for u in &dirs {
            let step: Vec<f64> = u.iter().map(|c| c * r).collect();
            let p = m.transition(&m.retract(&probe.center, &step), probe.center.chart)?;
            let l = lie_derivative(m, probe, f, &p, t);
            points += 1;
            if !(l <= worst.0) {
                worst = (l, m.principal_coords(&p));
            }
        }
    }
    Ok(LieScan {
        radius,
        points,
        max_lie_derivative: worst.0,
        worst_point: worst.1,
        negative: worst.0 < 0.0,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "class", rename_all = "snake_case")]
pub enum StabilityClass {
    /// `d(t) <= k d0 exp(-lambda t)` fitted on every probe run.
    Exponential { k: f64, lambda: f64 },
    Asymptotic,
    Inconclusive { reason: String },
}

impl StabilityClass {
    pub fn is_exponential(&self) -> bool {
        matches!(self, StabilityClass::Exponential { .. })
    }
}

impl fmt::Display for StabilityClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            StabilityClass::Exponential { k, lambda } => write!(f, "exponential (k = {k:.4}, lambda = {lambda:.4})"),
            StabilityClass::Asymptotic => f.write_str("asymptotic"),
            StabilityClass::Inconclusive { reason } => write!(f, "inconclusive ({reason})"),
        }
    }
}

const PROBE_FLOOR: f64 = 1e-9;
const MIN_R2: f64 = 0.99;

enum RunClass {
    Exponential { k: f64, lambda: f64 },
    Asymptotic,
    Neither(String),
}

fn classify_run(series: &[(f64, f64)]) -> RunClass {
    let d0 = series[0].1;
    let kept: Vec<(f64, f64)> = series.iter().copied().filter(|(_, d)| *d > PROBE_FLOOR).collect();
    let decreasing = series.windows(2).all(|w| w[1].1 <= w[0].1 * (1.0 + 1e-9));
    let decayed = series.last().map_or(false, |l| l.1 <= 0.5 * d0);
    let fallback = |why: String| {
        if decreasing && decayed {
            RunClass::Asymptotic
        } else {
            RunClass::Neither(why)
        }
    };
    if kept.len() < 10 {
        return fallback("too few samples above the floor".into());
    }
    let half = kept.len() / 2;
    let (head, tail) = kept.split_at(half);
    let fit = |s: &[(f64, f64)]| {
        let xs: Vec<f64> = s.iter().map(|p| p.0).collect();
        let ys: Vec<f64> = s.iter().map(|p| p.1.ln()).collect();
        linear_fit(&xs, &ys)
    };
    let (tail_slope, _, r2) = fit(tail);
    let (head_slope, _, _) = fit(head);
    let (lambda, lambda_head) = (-tail_slope, -head_slope);
    if lambda > 0.0 && r2 >= MIN_R2 && lambda >= 0.5 * lambda_head {
        let t0 = series[0].0;
        let k = kept
            .iter()
            .map(|(t, d)| d * (lambda * (t - t0)).exp() / d0)
            .fold(0.0, f64::max);
        RunClass::Exponential { k, lambda }
    } else {
        fallback(format!("tail rate {lambda:.4}, head rate {lambda_head:.4}, r2 {r2:.4}"))
    }
}

/// Flows ring initial conditions around the equilibrium `center` and
/// classifies the decay of `d(Phi(t), center)`.
pub fn stability_probe(m: &ManifoldSpec, f: &TimeVaryingField, center: &ChartPoint, cfg: &ProbeConfig) -> Result<StabilityClass> {
    m.check_point(center)?;
    if cfg.radii.is_empty() || cfg.radii.iter().any(|r| !(*r > 0.0)) {
        return Err(Error::contract("probe radii must be positive"));
    }
    if !(cfg.horizon > 0.0) || cfg.n_samples < 20 {
        return Err(Error::contract("probe needs a positive horizon and at least 20 samples"));
    }
    let f0 = f.components(center, 0.0);
    let residual = m.norm(center, &f0);
    if !(residual < 1e-10) {
        return Err(Error::contract(format!("center is not an equilibrium: ||f(center)||_g = {residual:e}")));
    }
    let dirs = probe_directions(m, center)?;
    let starts: Vec<ChartPoint> = cfg
        .radii
        .iter()
        .flat_map(|&r| dirs.iter().map(move |u| u.iter().map(|c| c * r).collect::<Vec<f64>>()))
        .map(|v| m.retract(center, &v))
        .collect();
    let times = uniform_times(0.0, cfg.horizon, cfg.n_samples);
    let step = default_step(None).min(cfg.horizon / 2000.0);
    let runs: Vec<RunClass> = starts
        .par_iter()
        .map(|x0| {
            let traj = flow_at_times(m, f, x0, &times, step)?;
            let series = times
                .iter()
                .zip(&traj)
                .map(|(&t, p)| distance(m, p, center, &cfg.distance).map(|d| (t, d)))
                .collect::<Result<Vec<_>>>()?;
            Ok(classify_run(&series))
        })
        .collect::<Result<_>>()?;
    if runs.iter().all(|r| matches!(r, RunClass::Exponential { .. })) {
        let (mut k, mut lambda) = (0.0f64, f64::INFINITY);
        for r in &runs {
            if let RunClass::Exponential { k: rk, lambda: rl } = r {
                k = k.max(*rk);
                lambda = lambda.min(*rl);
            }
        }
        return Ok(StabilityClass::Exponential { k, lambda });
    }
    if runs.iter().all(|r| !matches!(r, RunClass::Neither(_))) {
        return Ok(StabilityClass::Asymptotic);
    }
    let reason = runs
        .iter()
        .find_map(|r| match r {
            RunClass::Neither(why) => Some(why.clone()),
            _ => None,
        })
        .unwrap_or_default();
    Ok(StabilityClass::Inconclusive { reason })
}
