//! The three benchmark advection problems, their error metrics and the
//! convergence fit.

use std::f64::consts::PI;
use std::fmt;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;
use std::sync::Arc;
use std::time::Instant;

use thiserror::Error;

use crate::geometry::{rotation_x, rotation_y, rotation_z, Vec3};
use crate::network::NetworkWeights;
use crate::solver::{
    init_fractions, step_ordered, step_renormalized_ordered, FluxScheme, FractionField, Mesh, SolverError,
    VelocitySpec, DEFAULT_EPS_MARK,
};

pub const DESK_MESHES: [usize; 5] = [10, 14, 20, 27, 38];
pub const FULL_MESHES: [usize; 8] = [10, 14, 20, 27, 38, 54, 75, 105];
pub const INIT_SUBCELLS: usize = 10;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Solver(#[from] SolverError),
    #[error("convergence fit needs at least 3 points, got {0}")]
    InsufficientPoints(usize),
    #[error("invalid experiment: {0}")]
    InvalidConfig(String),
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed summary file: {0}")]
    Format(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TestCase {
    /// Zalesak sphere under constant translation.
    Translation,
    /// Sphere with three bars in a field whose components do not depend on
    /// their own coordinate.
    Directional,
    /// Sphere in a general divergence-free field.
    Deformation,
}

impl TestCase {
    pub fn id(self) -> u8 {
        match self {
            Self::Translation => 1,
            Self::Directional => 2,
            Self::Deformation => 3,
        }
    }

    pub fn from_id(id: u8) -> Option<Self> {
        match id {
            1 => Some(Self::Translation),
            2 => Some(Self::Directional),
            3 => Some(Self::Deformation),
            _ => None,
        }
    }

    pub fn domain(self) -> (Vec3, Vec3) {
        match self {
            Self::Translation => (Vec3::repeat(-1.0), Vec3::repeat(1.0)),
            _ => (Vec3::zeros(), Vec3::repeat(1.0)),
        }
    }

    pub fn final_time(self) -> f64 {
        match self {
            Self::Directional => 1.0,
            _ => 2.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SchemeKind {
    Upwind,
    LimitedDownwind,
    Vofml,
}

impl SchemeKind {
    pub const ALL: [Self; 3] = [Self::Upwind, Self::LimitedDownwind, Self::Vofml];

    pub fn label(self) -> &'static str {
        match self {
            Self::Upwind => "uw",
            Self::LimitedDownwind => "ld",
            Self::Vofml => "vofml",
        }
    }

    pub fn build(self, weights: Option<&Arc<NetworkWeights>>, eps_mark: f64) -> Result<FluxScheme, HarnessError> {
        Ok(match self {
            Self::Upwind => FluxScheme::Upwind,
            Self::LimitedDownwind => FluxScheme::LimitedDownwind,
            Self::Vofml => {
                let w = weights.ok_or_else(|| HarnessError::InvalidConfig("the vofml scheme needs weights".into()))?;
                FluxScheme::vofml(Arc::clone(w), eps_mark)?
            }
        })
    }
}

impl fmt::Display for SchemeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for SchemeKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        Self::ALL
            .into_iter()
            .find(|k| k.label().eq_ignore_ascii_case(s))
            .ok_or_else(|| format!("unknown scheme {s:?} (expected uw, ld or vofml)"))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub test: TestCase,
    pub scheme: SchemeKind,
    pub meshes: Vec<usize>,
    /// `Δt = dt_factor · Δx`.
    pub dt_factor: f64,
    pub final_time: f64,
    pub n_sub: usize,
    pub eps_mark: f64,
    /// Rotate the sweep order every step instead of always x, y, z.
    pub cycle_sweeps: bool,
}

impl ExperimentConfig {
    pub fn new(test: TestCase, scheme: SchemeKind, meshes: Vec<usize>) -> Self {
        Self {
            test,
            scheme,
            meshes,
            dt_factor: 0.1,
            final_time: test.final_time(),
            n_sub: INIT_SUBCELLS,
            eps_mark: DEFAULT_EPS_MARK,
            cycle_sweeps: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepRecord {
    pub step: usize,
    pub time: f64,
    pub r_mix: f64,
    pub mass: f64,
    pub min: f64,
    pub max: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunReport {
    pub test: TestCase,
    pub scheme: SchemeKind,
    pub n: usize,
    /// Relative L1 distance between the final and the initial field.
    pub error: f64,
    /// Entry 0 is the initial field, then one per step.
    pub history: Vec<StepRecord>,
    pub r_mix_ratio: f64,
    /// Largest relative change of the total mass over one step.
    pub max_step_mass_drift: f64,
    /// Extremes over every intermediate (post-sweep) field.
    pub min_value: f64,
    pub max_value: f64,
    pub wall_seconds: f64,
}

pub fn initial_rotation() -> nalgebra::Matrix3<f64> {
    rotation_z(PI / 9.0) * rotation_y(PI / 7.0) * rotation_x(PI / 5.0)
}

/// Membership test for the initial region A of each problem.
pub fn initial_condition(test: TestCase) -> Box<dyn Fn(Vec3) -> bool + Send + Sync> {
    match test {
        TestCase::Deformation => Box::new(|p: Vec3| (p - Vec3::repeat(0.35)).norm_squared() < 0.15 * 0.15),
        TestCase::Translation | TestCase::Directional => {
            let (lo, hi) = test.domain();
            let center = 0.5 * (lo + hi);
            let inv = initial_rotation().transpose();
            let region: fn(Vec3) -> bool = if test == TestCase::Translation {
                zalesak_sphere
            } else {
                sphere_with_bars
            };
            Box::new(move |p: Vec3| region(inv * (p - center)))
        }
    }
}

/// Unrotated Zalesak sphere about the origin.
fn zalesak_sphere(q: Vec3) -> bool {
    let slot = q.x.abs() < 0.2 && q.y.abs() < 0.2 && q.z < 0.0;
    q.norm_squared() < 0.16 && !slot
}

/// Unrotated sphere and bars, relative to the domain center.
fn sphere_with_bars(q: Vec3) -> bool {
    let a = q.abs();
    let bar = |i: usize| (0..3).all(|k| a[k] < if k == i { 0.3 } else { 0.075 });
    q.norm_squared() < 0.04 || bar(0) || bar(1) || bar(2)
}

pub fn velocity_field(test: TestCase) -> VelocitySpec {
    let period = test.final_time();
    match test {
        TestCase::Translation => VelocitySpec::constant(Vec3::new(1.0, 2.0, 3.0)),
        TestCase::Directional => VelocitySpec::new(
            move |p: Vec3, t| {
                let s = |v: f64| (2.0 * PI * v).sin();
                let w = |v: f64| v * (v - 1.0);
                let c = 25.0 * (PI * t / period).cos();
                Vec3::new(
                    c * s(p.y).powi(2) * s(p.z) * w(p.y) * w(p.z),
                    c * s(p.z).powi(2) * s(p.x) * w(p.z) * w(p.x),
                    c * s(p.x).powi(2) * s(p.y) * w(p.x) * w(p.y),
                )
            },
            true,
            true,
        ),
        TestCase::Deformation => VelocitySpec::new(
            move |p: Vec3, t| {
                let s1 = |v: f64| (PI * v).sin().powi(2);
                let s2 = |v: f64| (2.0 * PI * v).sin();
                let c = (PI * t / period).cos();
                Vec3::new(
                    2.0 * c * s1(p.x) * s2(p.y) * s2(p.z),
                    -c * s1(p.y) * s2(p.x) * s2(p.z),
                    -c * s1(p.z) * s2(p.x) * s2(p.y),
                )
            },
            true,
            false,
        ),
    }
}

/// Fraction of cells with `ε ≤ α ≤ 1 − ε`.
pub fn mixed_ratio(field: &FractionField, eps: f64) -> f64 {
    let n = field.values.iter().filter(|&&a| eps <= a && a <= 1.0 - eps).count();
    n as f64 / field.values.len() as f64
}

pub fn relative_l1(a: &FractionField, reference: &FractionField) -> f64 {
    let num: f64 = a.values.iter().zip(&reference.values).map(|(x, y)| (x - y).abs()).sum();
    num / reference.values.iter().map(|v| v.abs()).sum::<f64>()
}

/// Advects the initial condition of `cfg.test` to the final time on an
/// `n³` mesh.
pub fn run_single(cfg: &ExperimentConfig, scheme: &FluxScheme, n: usize) -> Result<RunReport, HarnessError> {
    let started = Instant::now();
    let (lo, hi) = cfg.test.domain();
    let mesh = Mesh::new(n, lo, hi)?;
    let indicator = initial_condition(cfg.test);
    let f0 = init_fractions(&*indicator, &mesh, cfg.n_sub);
    let velocity = velocity_field(cfg.test);
    let n_steps = ((cfg.final_time / (cfg.dt_factor * mesh.dx)).round() as usize).max(1);
    let dt = cfg.final_time / n_steps as f64;
    let record = |step: usize, f: &FractionField| {
        let (min, max) = f.min_max();
        StepRecord {
            step,
            time: f.time,
            r_mix: mixed_ratio(f, cfg.eps_mark),
            mass: f.total() * mesh.dx.powi(3),
            min,
            max,
        }
    };
    let mut history = vec![record(0, &f0)];
    let (mut min_value, mut max_value) = f0.min_max();
    let mut drift: f64 = 0.0;
    let mut f = f0.clone();
    for s in 0..n_steps {
        let t = s as f64 * dt;
        let order = if cfg.cycle_sweeps {
            [s % 3, (s + 1) % 3, (s + 2) % 3]
        } else {
            [0, 1, 2]
        };
        let inspect = |g: &FractionField| {
            let (a, b) = g.min_max();
            min_value = min_value.min(a);
            max_value = max_value.max(b);
        };
        let before = f.total();
        f = if velocity.componentwise_derivative_free {
            step_ordered(&f, &mesh, &velocity, t, dt, scheme, order, inspect)?
        } else {
            step_renormalized_ordered(&f, &mesh, &velocity, t, dt, scheme, order, inspect)?
        };
        drift = drift.max(((f.total() - before) / before).abs());
        history.push(record(s + 1, &f));
    }
    let r0 = history[0].r_mix;
    Ok(RunReport {
        test: cfg.test,
        scheme: cfg.scheme,
        n,
        error: relative_l1(&f, &f0),
        r_mix_ratio: if r0 > 0.0 { history.last().unwrap().r_mix / r0 } else { f64::NAN },
        history,
        max_step_mass_drift: drift,
        min_value,
        max_value,
        wall_seconds: started.elapsed().as_secs_f64(),
    })
}

/// Runs every mesh of `cfg`.
pub fn run(cfg: &ExperimentConfig, weights: Option<&Arc<NetworkWeights>>) -> Result<Vec<RunReport>, HarnessError> {
    if cfg.meshes.iter().any(|&n| n < 3) {
        return Err(HarnessError::InvalidConfig("mesh sizes must be at least 3".into()));
    }
    if !(cfg.dt_factor > 0.0) {
        return Err(HarnessError::InvalidConfig("dt factor must be positive".into()));
    }
    let scheme = cfg.scheme.build(weights, cfg.eps_mark)?;
    cfg.meshes.iter().map(|&n| run_single(cfg, &scheme, n)).collect()
}

/// Least-squares line `log E = intercept − rate · log N`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConvergenceFit {
    pub rate: f64,
    pub intercept: f64,
}

impl ConvergenceFit {
    pub fn predict(&self, n: f64) -> f64 {
        (self.intercept - self.rate * n.ln()).exp()
    }
}

pub fn convergence(meshes: &[usize], errors: &[f64]) -> Result<ConvergenceFit, HarnessError> {
    let k = meshes.len().min(errors.len());
    if k < 3 || meshes.len() != errors.len() {
        return Err(HarnessError::InsufficientPoints(k));
    }
    let xs: Vec<f64> = meshes.iter().map(|&n| (n as f64).ln()).collect();
    let ys: Vec<f64> = errors.iter().map(|e| e.ln()).collect();
    let mx = xs.iter().sum::<f64>() / k as f64;
    let my = ys.iter().sum::<f64>() / k as f64;
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let slope = sxy / sxx;
    Ok(ConvergenceFit {
        rate: -slope,
        intercept: my - slope * mx,
    })
}

pub fn run_file_name(report: &RunReport) -> String {
    format!("test{}_{}_n{}.csv", report.test.id(), report.scheme, report.n)
}

/// Per-step history of one run.
pub fn write_run_csv(report: &RunReport, path: &Path) -> Result<(), HarnessError> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(w, "step,time,r_mix,mass,max,min")?;
    for r in &report.history {
        writeln!(w, "{},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e}", r.step, r.time, r.r_mix, r.mass, r.max, r.min)?;
    }
    w.flush()?;
    Ok(())
}

pub const SUMMARY_HEADER: &str = "test,n_h,scheme,error,r_mix_ratio,max_mass_drift,min,max,wall_seconds";

/// Appends one line per report to the summary CSV, creating it if needed.
pub fn append_summary(reports: &[RunReport], path: &Path) -> Result<(), HarnessError> {
    let fresh = !path.exists();
    let mut w = std::fs::OpenOptions::new().create(true).append(true).open(path)?;
    if fresh {
        writeln!(w, "{SUMMARY_HEADER}")?;
    }
    for r in reports {
        writeln!(
            w,
            "{},{},{},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.3}",
            r.test.id(),
            r.n,
            r.scheme,
            r.error,
            r.r_mix_ratio,
            r.max_step_mass_drift,
            r.min_value,
            r.max_value,
            r.wall_seconds
        )?;
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub test: u8,
    pub n: usize,
    pub scheme: SchemeKind,
    pub error: f64,
    pub r_mix_ratio: f64,
}

pub fn read_summary(path: &Path) -> Result<Vec<SummaryRow>, HarnessError> {
    let text = std::fs::read_to_string(path)?;
    let mut lines = text.lines();
    if lines.next() != Some(SUMMARY_HEADER) {
        return Err(HarnessError::Format("unexpected header".into()));
    }
    lines
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            let c: Vec<&str> = l.split(',').collect();
            let bad = || HarnessError::Format(format!("bad row {l:?}"));
            if c.len() != 9 {
                return Err(bad());
            }
            Ok(SummaryRow {
                test: c[0].parse().map_err(|_| bad())?,
                n: c[1].parse().map_err(|_| bad())?,
                scheme: c[2].parse().map_err(|_| bad())?,
                error: c[3].parse().map_err(|_| bad())?,
                r_mix_ratio: c[4].parse().map_err(|_| bad())?,
            })
        })
        .collect()
}

/// Fitted rate per (test, scheme) from summary rows, sorted by test then
/// scheme.
pub fn rates_from_summary(rows: &[SummaryRow]) -> Vec<(u8, SchemeKind, Result<ConvergenceFit, HarnessError>)> {
    let mut keys: Vec<(u8, SchemeKind)> = rows.iter().map(|r| (r.test, r.scheme)).collect();
    keys.sort_by_key(|(t, s)| (*t, SchemeKind::ALL.iter().position(|k| k == s)));
    keys.dedup();
    keys.into_iter()
        .map(|(t, s)| {
            let mut pts: Vec<(usize, f64)> = rows
                .iter()
                .filter(|r| r.test == t && r.scheme == s)
                .map(|r| (r.n, r.error))
                .collect();
            pts.sort_by_key(|p| p.0);
            pts.dedup_by_key(|p| p.0);
            let (ns, es): (Vec<usize>, Vec<f64>) = pts.into_iter().unzip();
            (t, s, convergence(&ns, &es))
        })
        .collect()
}
