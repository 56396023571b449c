//! Simulation, geodesic geometry and periodic averaging on Riemannian
//! manifolds, with numerical checks of nominal-vs-averaged closeness.
//!
//! Points live in charts of an atlas ([`ManifoldSpec`]); the rotation group
//! SO(3) is carried as a single matrix chart with a left-invariant frame.

pub mod averaging;
pub mod closeness;
pub mod config;
pub mod error;
pub mod expr;
pub mod flow;
pub mod geodesic;
pub mod manifold;
pub mod report;
pub mod so3;
pub mod systems;

pub use averaging::{average_field, averaged_flow, AveragedField, DEFAULT_NODES};
pub use closeness::{
    epsilon_sweep, epsilon_sweep_with, gronwall_constants, lie_derivative, long_horizon_sweep, stability_probe,
    lie_derivative_scan, sup_distance, verify_theorem3, BoundReport, ClosenessReport, EpsilonRecord, GronwallConstants, LieScan, LongHorizonConfig,
    LyapunovProbe, ProbeConfig, SampleConfig, StabilityClass, SweepConfig, Verdict,
};
pub use config::{ManifoldDef, SystemDefinition};
pub use error::{Error, Result};
pub use flow::{flow, flow_at_times, flow_map, TimeVaryingField, Trajectory};
pub use geodesic::{distance, exp_map, geodesic_ivp, injectivity_probe, log_map, GeodesicSolverConfig, LogEstimate};
pub use manifold::{ChartId, ChartPoint, Christoffel, ClosedForm, CoordKind, ManifoldSpec, MetricField, TangentVec};
pub use systems::SystemBundle;
