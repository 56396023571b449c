//! Time averages of periodic vector fields.
//!
//! `f_avg(x) = (1/T) * integral_0^T f(x, s) ds`, taken componentwise in the chart of `x`
//! with composite Simpson quadrature.

use std::collections::HashMap;
use std::sync::{Arc, RwLock};

use crate::error::{Error, Result};
use crate::flow::{flow, TimeVaryingField, Trajectory};
use crate::manifold::{ChartPoint, ManifoldSpec};

pub const DEFAULT_NODES: usize = 256;

type CacheKey = (usize, Vec<i64>);

#[derive(Debug, Clone)]
pub struct AveragedField {
    pub base: TimeVaryingField,
    pub period: f64,
    pub quadrature_order: usize,
    cache: Option<Arc<RwLock<HashMap<CacheKey, Vec<f64>>>>>,
}

impl AveragedField {
    /// Enables the per-point memo (keys rounded at `1e-12`).
    pub fn with_cache(mut self) -> Self {
        self.cache = Some(Arc::new(RwLock::new(HashMap::new())));
        self
    }

    pub fn eval(&self, x: &ChartPoint) -> Vec<f64> {
        let Some(cache) = &self.cache else {
            return simpson_average(&self.base, x, self.period, self.quadrature_order);
        };
        let key = (
            x.chart.0,
            x.coords.iter().map(|c| (c * 1e12).round() as i64).collect::<Vec<_>>(),
        );
        if let Some(v) = cache.read().ok().and_then(|c| c.get(&key).cloned()) {
            return v;
        }
        let v = simpson_average(&self.base, x, self.period, self.quadrature_order);
        if let Ok(mut c) = cache.write() {
            c.entry(key).or_insert_with(|| v.clone());
        }
        v
    }

    /// The average as an autonomous field.
    pub fn as_field(&self) -> TimeVaryingField {
        let me = self.clone();
        TimeVaryingField::autonomous(format!("avg({})", self.base.label), move |x| me.eval(x))
    }
}

fn simpson_average(f: &TimeVaryingField, x: &ChartPoint, period: f64, panels: usize) -> Vec<f64> {
    if f.is_autonomous() {
        return f.components(x, 0.0);
    }
    let h = period / panels as f64;
    let mut acc = f.components(x, 0.0);
    for (a, b) in acc.iter_mut().zip(f.components(x, period)) {
        *a += b;
    }
    for k in 1..panels {
        let w = if k % 2 == 1 { 4.0 } else { 2.0 };
        for (a, b) in acc.iter_mut().zip(f.components(x, k as f64 * h)) {
            *a += w * b;
        }
    }
    acc.into_iter().map(|a| a * h / 3.0 / period).collect()
}

/// Builds the averaged field of a `period`-periodic field with `nodes` Simpson panels.
pub fn average_field(f: &TimeVaryingField, period: f64, nodes: usize) -> Result<AveragedField> {
    if !(period > 0.0) {
        return Err(Error::contract("averaging period must be positive"));
    }
    if nodes < 2 || nodes % 2 != 0 {
        return Err(Error::contract("Simpson quadrature needs an even node count >= 2"));
    }
    match f.period {
        None if !f.is_autonomous() => {
            return Err(Error::contract(format!("field `{}` has no period", f.label)));
        }
        Some(p) if (p - period).abs() > 1e-12 * p.abs().max(1.0) => {
            return Err(Error::contract(format!(
                "field `{}` has period {p}, averaging requested over {period}",
                f.label
            )));
        }
        _ => {}
    }
    Ok(AveragedField {
        base: f.clone(),
        period,
        quadrature_order: nodes,
        cache: None,
    })
}

/// Flow of the averaged field.
#[allow(clippy::too_many_arguments)]
pub fn averaged_flow(
    m: &ManifoldSpec,
    f: &TimeVaryingField,
    period: f64,
    nodes: usize,
    t0: f64,
    t1: f64,
    x0: &ChartPoint,
    step: f64,
) -> Result<Trajectory> {
    let avg = average_field(f, period, nodes)?;
    flow(m, &avg.as_field(), t0, t1, x0, step)
}
