//! Ready-to-run systems: the SO(3) and torus examples plus flat calibration systems.
//!
//! Every built-in is described by an embedded definition text, so the
//! bundles round-trip through the same file format users write.

use std::sync::Arc;

use crate::config::{ManifoldDef, SystemDefinition};
use crate::error::{Error, Result};
use crate::expr::Expr;
use crate::flow::TimeVaryingField;
use crate::manifold::{ChartPoint, Embedding, ManifoldSpec, MetricField};

/// A manifold, a T-periodic field given before the `eps` factor, and run defaults.
#[derive(Debug, Clone)]
pub struct SystemBundle {
    pub name: String,
    pub manifold: ManifoldSpec,
    pub nominal: TimeVaryingField,
    pub period: f64,
    pub reference_averaged: Option<TimeVaryingField>,
    pub alternate_averaged: Option<TimeVaryingField>,
    pub x0: ChartPoint,
    pub t0: f64,
    pub equilibrium: Option<ChartPoint>,
    pub notes: Vec<String>,
    pub definition: SystemDefinition,
}

pub const SO3_DEFINITION: &str = "\
[system]
name = so3
period = 2*pi
t0 = 0
x0 = 1, 0, 0, 0, 1, 0, 0, 0, 1
note = perturbed left-invariant system x' = eps x (u1 e1 + u2 e2 + u3 e3)
note = initial condition defaults to the identity

[manifold]
kind = so3

[nominal]
f1 = sin(t)^2
f2 = cos(t)
f3 = 1

[averaged]
f1 = 0.5
f2 = 0
f3 = 1
";

pub const TORUS_DEFINITION: &str = "\
[system]
name = torus
period = 2*pi
t0 = 0
x0 = 1, 1
equilibrium = 0, 0
note = averaged field recorded as computed by the averaging operator: x2' = x1 - x2
note = alternate_averaged keeps the printed form x2' = -x1 - x2, which is not the time average of the nominal field

[constants]
R = 1
r = 0.5

[manifold]
kind = charted
coords = periodic, periodic
g11 = r^2
g22 = (R + r*cos(x1))^2
embed1 = (R + r*cos(x1))*cos(x2)
embed2 = (R + r*cos(x1))*sin(x2)
embed3 = r*sin(x1)

[nominal]
f1 = -x1 - sin(t)
f2 = x1 - x2

[averaged]
f1 = -x1
f2 = x1 - x2

[alternate_averaged]
f1 = -x1
f2 = -x1 - x2
";

pub const SCALAR_DEFINITION: &str = "\
[system]
name = scalar
period = 2*pi
t0 = 0
x0 = 1
equilibrium = 0
note = x' = eps (-x + sin t); averaged x' = -eps x

[manifold]
kind = charted
coords = linear
closed_form = euclidean
g11 = 1

[nominal]
f1 = -x1 + sin(t)

[averaged]
f1 = -x1
";

pub const LINEAR2_DEFINITION: &str = "\
[system]
name = linear2
period = 2*pi
t0 = 0
x0 = 1, 0
equilibrium = 0, 0
note = x' = eps A(t) x with A(t) = [[-1 + cos t, 1], [-1 + sin t, -1]]

[manifold]
kind = charted
coords = linear, linear
closed_form = euclidean
g11 = 1
g12 = 0
g22 = 1

[nominal]
f1 = (-1 + cos(t))*x1 + x2
f2 = (-1 + sin(t))*x1 - x2

[averaged]
f1 = -x1 + x2
f2 = -x1 - x2
";

pub const BUILTIN_NAMES: [&str; 4] = ["so3", "torus", "scalar", "linear2"];

fn compile_field(manifold: &ManifoldSpec, label: &str, exprs: &[Expr], period: Option<f64>) -> TimeVaryingField {
    let exprs = Arc::new(exprs.to_vec());
    let m = manifold.clone();
    let autonomous = !exprs.iter().any(Expr::depends_on_time);
    if autonomous {
        TimeVaryingField::autonomous(label, move |x| {
            let c = m.principal_coords(x);
            exprs.iter().map(|e| e.eval(&c, 0.0)).collect()
        })
    } else {
        let f = TimeVaryingField::new(label, move |x, t| {
            let c = m.principal_coords(x);
            exprs.iter().map(|e| e.eval(&c, t)).collect()
        });
        match period {
            Some(p) => f.with_period(p),
            None => f,
        }
    }
}

pub fn build_manifold(name: &str, def: &ManifoldDef) -> ManifoldSpec {
    match def {
        ManifoldDef::RotationGroup => ManifoldSpec::rotation_group(),
        ManifoldDef::Charted {
            kinds,
            metric,
            embedding,
            closed_form,
        } => {
            let m = ManifoldSpec::charted(name, kinds.clone(), MetricField::from_exprs(kinds.len(), metric.clone()))
                .with_closed_form(*closed_form);
            match embedding {
                Some(e) => m.with_embedding(Embedding::from_exprs(e.clone())),
                None => m,
            }
        }
    }
}

impl SystemBundle {
    pub fn from_definition(def: SystemDefinition) -> Result<Self> {
        let manifold = build_manifold(&def.name, &def.manifold);
        let nominal = compile_field(&manifold, &def.name, &def.nominal, Some(def.period));
        if nominal.period.is_none() && !nominal.is_autonomous() {
            return Err(Error::contract("nominal field must be periodic"));
        }
        let reference_averaged = def
            .reference_averaged
            .as_ref()
            .map(|f| compile_field(&manifold, &format!("{}-averaged", def.name), f, None));
        let alternate_averaged = def
            .alternate_averaged
            .as_ref()
            .map(|f| compile_field(&manifold, &format!("{}-alternate", def.name), f, None));
        let x0 = manifold.point(&def.x0)?;
        let equilibrium = def.equilibrium.as_ref().map(|e| manifold.point(e)).transpose()?;
        Ok(SystemBundle {
            name: def.name.clone(),
            manifold,
            nominal,
            period: def.period,
            reference_averaged,
            alternate_averaged,
            x0,
            t0: def.t0,
            equilibrium,
            notes: def.notes.clone(),
            definition: def,
        })
    }

    pub fn parse(text: &str) -> Result<Self> {
        SystemBundle::from_definition(SystemDefinition::parse(text)?)
    }

    pub fn builtin(name: &str) -> Result<Self> {
        let text = match name {
            "so3" => SO3_DEFINITION,
            "torus" => TORUS_DEFINITION,
            "scalar" => SCALAR_DEFINITION,
            "linear2" => LINEAR2_DEFINITION,
            other => {
                return Err(Error::config(
                    None,
                    Some("system"),
                    format!("unknown builtin `{other}` (available: {})", BUILTIN_NAMES.join(", ")),
                ))
            }
        };
        SystemBundle::parse(text)
    }

    /// Serialises to the system-definition file format.
    pub fn to_text(&self) -> String {
        self.definition.to_text()
    }
}

pub fn so3_system() -> SystemBundle {
    SystemBundle::builtin("so3").expect("built-in definition parses")
}

pub fn torus_system() -> SystemBundle {
    SystemBundle::builtin("torus").expect("built-in definition parses")
}

/// `x' = eps (-x + sin t)` on the line and a periodic linear system on the plane.
pub fn euclidean_calibration_systems() -> Vec<SystemBundle> {
    ["scalar", "linear2"]
        .iter()
        .map(|n| SystemBundle::builtin(n).expect("built-in definition parses"))
        .collect()
}

pub fn torus_manifold() -> ManifoldSpec {
    torus_system().manifold
}
