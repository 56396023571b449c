//! `riemavg`: simulate, sweep, bound and probe periodic systems on manifolds.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use riemavg::closeness::distance_series;
use riemavg::flow::default_step;
use riemavg::report::{line_plot_svg, sweep_plot_svg, write_bound_csv, write_distance_csv, write_summary, write_sweep_csv};
use riemavg::{
    average_field, flow, lie_derivative_scan, long_horizon_sweep, epsilon_sweep, stability_probe, verify_theorem3,
    ChartPoint, Error, LongHorizonConfig, LyapunovProbe, ManifoldSpec, ProbeConfig, SampleConfig, StabilityClass,
    SweepConfig, SystemBundle, Verdict,
};
use serde_json::json;

mod exit {
    pub const VERDICT: u8 = 2;
    pub const INCONCLUSIVE: u8 = 3;
    pub const CONFIG: u8 = 4;
    pub const ESCAPE: u8 = 5;
    pub const OTHER: u8 = 1;
}

#[derive(Parser)]
#[command(name = "riemavg", version, about = "Periodic averaging on Riemannian manifolds")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Integrate the nominal and averaged flows and their distance.
    Simulate(RunArgs),
    /// Sup-distance over several epsilons and the fitted log-log slope.
    Sweep(SweepArgs),
    /// Compare the distance with the Gronwall-type bound.
    Bound(RunArgs),
    /// Stability probe and Lyapunov scan of the averaged field.
    Probe(ProbeArgs),
    /// Print a system definition in the text format.
    DumpSystem {
        #[arg(long)]
        system: String,
        /// Write to this file instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args)]
struct Common {
    /// Builtin name (so3, torus, scalar, linear2) or a definition file.
    #[arg(long)]
    system: String,
    /// Integration step; defaults to min(1e-2, T/200).
    #[arg(long)]
    step: Option<f64>,
    /// Quadrature nodes for the average.
    #[arg(long, default_value_t = riemavg::DEFAULT_NODES)]
    nodes: usize,
    /// Output directory.
    #[arg(long, default_value = ".")]
    out: PathBuf,
    /// Seed for the geodesic multistart.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Fail with a nonzero exit code on a failed or inconclusive verdict.
    #[arg(long)]
    strict: bool,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    epsilon: f64,
    /// Absolute horizon t1 - t0.
    #[arg(long, conflicts_with = "horizon_constant")]
    horizon: Option<f64>,
    /// Horizon c / epsilon (default c = 10).
    #[arg(long)]
    horizon_constant: Option<f64>,
    /// Uniform distance samples over the horizon.
    #[arg(long, default_value_t = 400)]
    samples: usize,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    common: Common,
    /// Repeat or comma-separate.
    #[arg(long, required = true, value_delimiter = ',')]
    epsilon: Vec<f64>,
    #[arg(long, default_value_t = 10.0)]
    horizon_constant: f64,
    #[arg(long, default_value_t = 400)]
    samples: usize,
    /// Extend to c_long / epsilon, gated on a stability probe.
    #[arg(long)]
    long_horizon: bool,
    /// c_long (default 50 c).
    #[arg(long, requires = "long_horizon")]
    long_constant: Option<f64>,
    /// Accept the long-horizon run when every distance is below this value.
    #[arg(long, requires = "long_horizon")]
    fixed_delta: Option<f64>,
    /// Equilibrium of the averaged field, comma-separated principal coordinates.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    center: Option<Vec<f64>>,
}

#[derive(Args)]
struct ProbeArgs {
    #[command(flatten)]
    common: Common,
    /// Comma-separated principal coordinates; defaults to the system's equilibrium.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    center: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',', default_values_t = [0.1, 0.5])]
    radii: Vec<f64>,
    #[arg(long, default_value_t = 16.0)]
    horizon: f64,
    /// Radius of the punctured neighbourhood for the Lie-derivative scan.
    #[arg(long, default_value_t = 0.5)]
    scan_radius: f64,
}

/// A failure carrying its exit code.
struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn config(message: impl Into<String>) -> Self {
        Failure {
            code: exit::CONFIG,
            message: message.into(),
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::Config { .. } | Error::Contract(_) | Error::Domain { .. } => exit::CONFIG,
            Error::Escape { .. } => exit::ESCAPE,
            Error::Numerical(_) | Error::NonConvergence { .. } => exit::INCONCLUSIVE,
            Error::Io(_) => exit::OTHER,
        };
        Failure {
            code,
            message: e.to_string(),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Error::from(e).into()
    }
}

type CliResult<T> = Result<T, Failure>;

fn main() -> ExitCode {
    // usage errors are configuration errors, not verdict failures
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { exit::CONFIG } else { 0 });
        }
    };
    let result = match cli.command {
        Command::Simulate(a) => simulate(&a),
        Command::Sweep(a) => sweep(&a),
        Command::Bound(a) => bound(&a),
        Command::Probe(a) => probe(&a),
        Command::DumpSystem { system, out } => dump_system(&system, out.as_deref()),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(f) => {
            eprintln!("riemavg: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}

fn load_system(source: &str) -> CliResult<SystemBundle> {
    let path = Path::new(source);
    if path.is_file() {
        let text = fs::read_to_string(path)?;
        Ok(SystemBundle::parse(&text)?)
    } else {
        Ok(SystemBundle::builtin(source)?)
    }
}

fn create(dir: &Path, name: &str) -> CliResult<BufWriter<File>> {
    Ok(BufWriter::new(File::create(dir.join(name))?))
}

fn write_string(dir: &Path, name: &str, text: &str) -> CliResult<()> {
    fs::write(dir.join(name), text)?;
    Ok(())
}

fn write_json(dir: &Path, value: &serde_json::Value) -> CliResult<()> {
    let mut w = create(dir, "summary.json")?;
    write_summary(value, &mut w)?;
    w.flush()?;
    Ok(())
}

fn positive(name: &str, v: f64) -> CliResult<f64> {
    if v > 0.0 && v.is_finite() {
        Ok(v)
    } else {
        Err(Failure::config(format!("--{name} must be positive and finite, got {v}")))
    }
}

impl Common {
    fn prepare(&self) -> CliResult<(SystemBundle, f64)> {
        if self.nodes < 2 {
            return Err(Failure::config("--nodes must be at least 2"));
        }
        let b = load_system(&self.system)?;
        let step = match self.step {
            Some(s) => positive("step", s)?,
            None => default_step(Some(b.period)),
        };
        fs::create_dir_all(&self.out)?;
        Ok((b, step))
    }

    fn sampling(&self, step: f64, n: usize) -> SampleConfig {
        let mut s = SampleConfig {
            step,
            n_samples: n,
            ..SampleConfig::default()
        };
        s.distance.seed = self.seed;
        s
    }

    fn verdict_code(&self, v: Verdict) -> u8 {
        match v {
            Verdict::Pass | Verdict::ExactMatch => 0,
            _ if !self.strict => 0,
            Verdict::Fail => exit::VERDICT,
            Verdict::Inconclusive | Verdict::Refused => exit::INCONCLUSIVE,
        }
    }
}

impl RunArgs {
    fn horizon(&self) -> CliResult<f64> {
        if !(self.epsilon >= 0.0 && self.epsilon.is_finite()) {
            return Err(Failure::config("--epsilon must be nonnegative and finite"));
        }
        match (self.horizon, self.horizon_constant) {
            (Some(h), None) => positive("horizon", h),
            (None, c) => {
                let c = positive("horizon-constant", c.unwrap_or(10.0))?;
                if self.epsilon == 0.0 {
                    return Err(Failure::config("epsilon = 0 needs an absolute --horizon"));
                }
                Ok(c / self.epsilon)
            }
            (Some(_), Some(_)) => Err(Failure::config("give exactly one of --horizon and --horizon-constant")),
        }
    }
}

fn parse_center(m: &ManifoldSpec, coords: &[f64]) -> CliResult<ChartPoint> {
    m.point(coords)
        .map_err(|e| Failure::config(format!("invalid --center: {e}")))
}

/// Up to three plotted curves per trajectory: the embedding projection when
/// there is one, otherwise the first coordinates against time.
fn trajectory_series(m: &ManifoldSpec, label: &str, samples: &[(f64, ChartPoint)]) -> Vec<(String, Vec<(f64, f64)>)> {
    if m.embedding().is_some() {
        let pts = samples
            .iter()
            .filter_map(|(_, p)| m.embed(p))
            .map(|e| (e[0], e[1]))
            .collect();
        return vec![(label.to_string(), pts)];
    }
    (0..m.coord_len().min(3))
        .map(|i| {
            let pts = samples.iter().map(|(t, p)| (*t, m.principal_coords(p)[i])).collect();
            (format!("{label} x_{}", i + 1), pts)
        })
        .collect()
}

fn simulate(a: &RunArgs) -> CliResult<u8> {
    let c = &a.common;
    let (b, step) = c.prepare()?;
    let horizon = a.horizon()?;
    let t0 = b.t0;
    let t1 = t0 + horizon;
    let f = b.nominal.scaled(a.epsilon);
    let fhat = average_field(&b.nominal, b.period, c.nodes)?.as_field().scaled(a.epsilon);
    let (nominal, averaged) = rayon::join(
        || flow(&b.manifold, &f, t0, t1, &b.x0, step),
        || flow(&b.manifold, &fhat, t0, t1, &b.x0, step),
    );
    let (nominal, averaged) = (nominal?, averaged?);
    for (name, tr) in [("nominal.csv", &nominal), ("averaged.csv", &averaged)] {
        let mut w = create(&c.out, name)?;
        tr.write_csv(&b.manifold, &mut w)?;
        w.flush()?;
    }
    let n = a.samples.max(2);
    let times: Vec<f64> = (0..n)
        .map(|k| if k + 1 == n { t1 } else { t0 + horizon * k as f64 / (n - 1) as f64 })
        .collect();
    let series = distance_series(&b.manifold, &f, &fhat, &b.x0, &times, &c.sampling(step, n))?;
    let mut w = create(&c.out, "distance.csv")?;
    write_distance_csv(&series, &mut w)?;
    w.flush()?;

    let mut curves = trajectory_series(&b.manifold, "nominal", &nominal.samples);
    curves.extend(trajectory_series(&b.manifold, "averaged", &averaged.samples));
    let (xlabel, ylabel) = if b.manifold.embedding().is_some() { ("X", "Y") } else { ("t", "coordinate") };
    write_string(&c.out, "trajectories.svg", &line_plot_svg(&b.name, xlabel, ylabel, &curves))?;

    let (sup, argmax_t) = series
        .iter()
        .fold((0.0f64, t0), |best, &(t, d)| if d > best.0 { (d, t) } else { best });
    write_json(
        &c.out,
        &json!({
            "command": "simulate",
            "system": b.name,
            "epsilon": a.epsilon,
            "t0": t0,
            "t1": t1,
            "step": step,
            "nodes": c.nodes,
            "seed": c.seed,
            "samples": n,
            "sup_distance": sup,
            "argmax_t": argmax_t,
            "final_nominal": b.manifold.principal_coords(nominal.last()),
            "final_averaged": b.manifold.principal_coords(averaged.last()),
            "notes": b.notes,
        }),
    )?;
    println!("sup distance {sup:?} at t = {argmax_t:?}");
    Ok(0)
}

fn sweep(a: &SweepArgs) -> CliResult<u8> {
    let c = &a.common;
    let (b, step) = c.prepare()?;
    let mut eps = a.epsilon.clone();
    if eps.iter().any(|e| !(*e > 0.0 && e.is_finite())) {
        return Err(Failure::config("every --epsilon must be positive and finite"));
    }
    eps.sort_by(|x, y| y.total_cmp(x));
    eps.dedup();
    let mut cfg = SweepConfig::new(eps, positive("horizon-constant", a.horizon_constant)?, b.x0.clone());
    cfg.t0 = b.t0;
    cfg.nodes = c.nodes;
    cfg.sampling = c.sampling(step, a.samples);

    let report = if a.long_horizon {
        let center = match (&a.center, &b.equilibrium) {
            (Some(v), _) => parse_center(&b.manifold, v)?,
            (None, Some(e)) => e.clone(),
            (None, None) => return Err(Failure::config("long-horizon sweep needs --center: the system has no equilibrium")),
        };
        let mut long = LongHorizonConfig {
            long_constant: a.long_constant,
            fixed_delta: a.fixed_delta,
            ..LongHorizonConfig::default()
        };
        long.probe.distance.seed = c.seed;
        long_horizon_sweep(&b.manifold, &b.name, &b.nominal, b.period, &center, &cfg, &long)?
    } else {
        epsilon_sweep(&b.manifold, &b.name, &b.nominal, b.period, &cfg)?
    };

    let mut w = create(&c.out, "sweep.csv")?;
    write_sweep_csv(&report, &mut w)?;
    w.flush()?;
    write_string(&c.out, "sweep.svg", &sweep_plot_svg(&report))?;
    write_json(
        &c.out,
        &json!({
            "command": "sweep",
            "config": cfg,
            "report": report,
        }),
    )?;
    match report.slope {
        Some(s) => println!("{}: slope {s:?}, verdict {}", report.kind, report.verdict),
        None => println!("{}: no slope, verdict {}", report.kind, report.verdict),
    }
    for n in &report.notes {
        println!("  {n}");
    }
    Ok(c.verdict_code(report.verdict))
}

fn bound(a: &RunArgs) -> CliResult<u8> {
    let c = &a.common;
    let (b, step) = c.prepare()?;
    if a.epsilon == 0.0 {
        return Err(Failure::config("bound needs a positive --epsilon"));
    }
    let horizon = a.horizon()?;
    let f = b.nominal.scaled(a.epsilon);
    let fhat = average_field(&b.nominal, b.period, c.nodes)?.as_field().scaled(a.epsilon);
    let sampling = c.sampling(step, a.samples);
    let report = verify_theorem3(&b.manifold, &f, &fhat, &b.x0, b.t0, b.t0 + horizon, &sampling)?;
    let mut w = create(&c.out, "margins.csv")?;
    write_bound_csv(&report, &mut w)?;
    w.flush()?;
    write_json(
        &c.out,
        &json!({
            "command": "bound",
            "system": b.name,
            "epsilon": a.epsilon,
            "t0": b.t0,
            "t1": b.t0 + horizon,
            "sampling": sampling,
            "nodes": c.nodes,
            "verdict": report.verdict,
            "constants": report.constants,
            "min_margin": if report.samples.is_empty() { None } else { Some(report.min_margin()) },
            "note": report.note,
        }),
    )?;
    println!("bound: verdict {} ({})", report.verdict, report.note);
    Ok(match report.verdict {
        Verdict::Inconclusive => exit::INCONCLUSIVE,
        v => c.verdict_code(v),
    })
}

/// `v = |x - center|^2 / 2` in the centre's chart, or the Frobenius
/// analogue on the rotation group.
fn quadratic_probe(center: &ChartPoint) -> LyapunovProbe {
    let c = center.coords.clone();
    let cg = c.clone();
    LyapunovProbe::new(center.clone(), move |x| 0.5 * x.iter().zip(&c).map(|(a, b)| (a - b) * (a - b)).sum::<f64>())
        .with_gradient(move |x| x.iter().zip(&cg).map(|(a, b)| a - b).collect())
}

fn probe(a: &ProbeArgs) -> CliResult<u8> {
    let c = &a.common;
    let (b, _) = c.prepare()?;
    let center = match (&a.center, &b.equilibrium) {
        (Some(v), _) => parse_center(&b.manifold, v)?,
        (None, Some(e)) => e.clone(),
        (None, None) => return Err(Failure::config("the system has no equilibrium; pass --center")),
    };
    let fhat = average_field(&b.nominal, b.period, c.nodes)?.as_field();
    let residual = b.manifold.norm(&center, &fhat.components(&center, 0.0));
    if !(residual < 1e-10) {
        return Err(Failure::config(format!(
            "center {:?} is not an equilibrium of the averaged field: ||f(center)||_g = {residual:e}",
            b.manifold.principal_coords(&center)
        )));
    }
    let mut cfg = ProbeConfig {
        radii: a.radii.clone(),
        horizon: a.horizon,
        ..ProbeConfig::default()
    };
    cfg.distance.seed = c.seed;
    let class = stability_probe(&b.manifold, &fhat, &center, &cfg)?;

    let lyap = quadratic_probe(&center);
    let radius = positive("scan-radius", a.scan_radius)?;
    lyap.validate(&b.manifold, radius)?;
    let scan = lie_derivative_scan(&b.manifold, &lyap, &fhat, radius, 20, b.t0)?;
    let candidate = if b.manifold.is_group() { "|X - X_c|_F^2 / 2" } else { "|x - x_c|^2 / 2" };
    write_json(
        &c.out,
        &json!({
            "command": "probe",
            "system": b.name,
            "center": b.manifold.principal_coords(&center),
            "probe": cfg,
            "stability": class,
            "lyapunov": {
                "candidate": candidate,
                "scan": scan,
            },
        }),
    )?;
    println!("stability: {class}");
    println!(
        "lyapunov scan: max L_f v = {:?} over {} points ({})",
        scan.max_lie_derivative,
        scan.points,
        if scan.negative { "negative" } else { "not negative" }
    );
    Ok(match class {
        StabilityClass::Inconclusive { .. } => exit::INCONCLUSIVE,
        _ => 0,
    })
}

fn dump_system(source: &str, out: Option<&Path>) -> CliResult<u8> {
    let b = load_system(source)?;
    let text = b.to_text();
    match out {
        Some(p) => fs::write(p, text)?,
        None => print!("{text}"),
    }
    Ok(0)
}
