//! Directionally split finite-volume transport of volume fractions on a
//! periodic uniform mesh.

use std::sync::Arc;

use rayon::prelude::*;
use thiserror::Error;

use crate::geometry::Vec3;
use crate::network::{wrapped_forward, wrapped_forward_batch, NetworkError, NetworkWeights};
use crate::symmetry::{stencil_offset, CENTER, DOWNWIND, STENCIL_LEN};

pub const DEFAULT_EPS_MARK: f64 = 0.01;

#[derive(Debug, Error)]
pub enum SolverError {
    #[error("Courant number {beta} exceeds 1 on axis {axis}")]
    CflViolation { axis: usize, beta: f64 },
    #[error("vanishing two-phase sum {sum:e} in cell {cell}")]
    ZeroSum { cell: usize, sum: f64 },
    #[error("invalid mesh: {0}")]
    InvalidMesh(String),
    #[error("invalid scheme: {0}")]
    InvalidScheme(String),
    #[error(transparent)]
    Network(#[from] NetworkError),
}

/// Cubic mesh with `n` cells per direction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Mesh {
    pub n: usize,
    pub lo: Vec3,
    pub dx: f64,
}

impl Mesh {
    pub fn new(n: usize, lo: Vec3, hi: Vec3) -> Result<Self, SolverError> {
        if n < 3 {
            return Err(SolverError::InvalidMesh(format!("need at least 3 cells, got {n}")));
        }
        let ext = hi - lo;
        if ext.min() <= 0.0 || (ext.max() - ext.min()) > 1e-12 * ext.max() {
            return Err(SolverError::InvalidMesh(format!("domain extents {ext:?} must be equal and positive")));
        }
        Ok(Self { n, lo, dx: ext.x / n as f64 })
    }

    pub fn num_cells(&self) -> usize {
        self.n * self.n * self.n
    }

    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        i + self.n * (j + self.n * k)
    }

    pub fn coords(&self, c: usize) -> [usize; 3] {
        [c % self.n, (c / self.n) % self.n, c / (self.n * self.n)]
    }

    pub fn cell_center(&self, c: usize) -> Vec3 {
        let [i, j, k] = self.coords(c);
        self.lo + Vec3::new(i as f64 + 0.5, j as f64 + 0.5, k as f64 + 0.5) * self.dx
    }

    /// Neighbor of `c` displaced by `d` cells, periodic.
    pub fn neighbor(&self, c: usize, d: [i32; 3]) -> usize {
        let n = self.n as i64;
        let ijk = self.coords(c);
        let w = |a: usize, o: i32| (a as i64 + o as i64).rem_euclid(n) as usize;
        self.index(w(ijk[0], d[0]), w(ijk[1], d[1]), w(ijk[2], d[2]))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FractionField {
    pub values: Vec<f64>,
    pub time: f64,
}

impl FractionField {
    pub fn total(&self) -> f64 {
        self.values.iter().sum()
    }

    pub fn min_max(&self) -> (f64, f64) {
        self.values
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)))
    }
}

#[derive(Debug, Clone)]
pub enum FluxScheme {
    Upwind,
    LimitedDownwind,
    /// Network flux on mixed donor cells, limited downwind elsewhere.
    VofmlHybrid { weights: Arc<NetworkWeights>, eps_mark: f64 },
}

impl FluxScheme {
    pub fn vofml(weights: Arc<NetworkWeights>, eps_mark: f64) -> Result<Self, SolverError> {
        if !(eps_mark > 0.0 && eps_mark < 0.5) {
            return Err(SolverError::InvalidScheme(format!("eps_mark {eps_mark} outside (0, 0.5)")));
        }
        Ok(Self::VofmlHybrid { weights, eps_mark })
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::Upwind => "UW",
            Self::LimitedDownwind => "LD",
            Self::VofmlHybrid { .. } => "VOFML",
        }
    }
}

type VelocityFn = dyn Fn(Vec3, f64) -> Vec3 + Send + Sync;

#[derive(Clone)]
pub struct VelocitySpec {
    field: Arc<VelocityFn>,
    pub divergence_free: bool,
    /// `∂u₁/∂x = ∂u₂/∂y = ∂u₃/∂z = 0`.
    pub componentwise_derivative_free: bool,
}

impl std::fmt::Debug for VelocitySpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("VelocitySpec")
            .field("divergence_free", &self.divergence_free)
            .field("componentwise_derivative_free", &self.componentwise_derivative_free)
            .finish_non_exhaustive()
    }
}

impl VelocitySpec {
    pub fn new(
        field: impl Fn(Vec3, f64) -> Vec3 + Send + Sync + 'static,
        divergence_free: bool,
        componentwise_derivative_free: bool,
    ) -> Self {
        Self {
            field: Arc::new(field),
            divergence_free,
            componentwise_derivative_free,
        }
    }

    pub fn constant(u: Vec3) -> Self {
        Self::new(move |_, _| u, true, true)
    }

    pub fn at(&self, p: Vec3, t: f64) -> Vec3 {
        (self.field)(p, t)
    }
}

/// Cell averages of `indicator` by midpoint quadrature on `n_sub³` points.
pub fn init_fractions(
    indicator: &(dyn Fn(Vec3) -> bool + Sync),
    mesh: &Mesh,
    n_sub: usize,
) -> FractionField {
    let n_sub = n_sub.max(1);
    let h = mesh.dx / n_sub as f64;
    let values = (0..mesh.num_cells())
        .into_par_iter()
        .map(|c| {
            let corner = mesh.cell_center(c) - Vec3::repeat(0.5 * mesh.dx);
            let mut hits = 0usize;
            for a in 0..n_sub {
                for b in 0..n_sub {
                    for d in 0..n_sub {
                        let p = corner + Vec3::new(a as f64 + 0.5, b as f64 + 0.5, d as f64 + 0.5) * h;
                        hits += indicator(p) as usize;
                    }
                }
            }
            hits as f64 / (n_sub * n_sub * n_sub) as f64
        })
        .collect();
    FractionField { values, time: 0.0 }
}

/// Admissible flux interval `[m, M]` for a donor holding `alpha` that
/// empties a slab of depth `beta`.
pub fn flux_bounds(alpha: f64, beta: f64) -> (f64, f64) {
    // round-off can leave a donor a few ulps outside [0, 1]
    let alpha = alpha.clamp(0.0, 1.0);
    if beta <= 0.0 {
        return (if alpha >= 1.0 { 1.0 } else { 0.0 }, if alpha <= 0.0 { 0.0 } else { 1.0 });
    }
    let hi = if alpha >= beta { 1.0 } else { alpha / beta };
    let lo = if 1.0 - alpha >= beta { 0.0 } else { 1.0 - (1.0 - alpha) / beta };
    (lo, hi)
}

pub fn face_bounds(alpha_donor: f64, beta: f64) -> (f64, f64) {
    flux_bounds(alpha_donor, beta)
}

pub fn flux_upwind(stencil: &[f64; STENCIL_LEN], _beta: f64) -> f64 {
    stencil[CENTER]
}

pub fn flux_limited_downwind(stencil: &[f64; STENCIL_LEN], beta: f64) -> f64 {
    let (lo, hi) = flux_bounds(stencil[CENTER], beta);
    stencil[DOWNWIND].clamp(lo, hi)
}

pub fn flux_vofml(w: &NetworkWeights, stencil: &[f64; STENCIL_LEN], beta: f64) -> Result<f64, SolverError> {
    let (lo, hi) = flux_bounds(stencil[CENTER], beta);
    Ok(wrapped_forward(w, stencil, beta)?.clamp(lo, hi))
}

pub fn mark_mixed(field: &FractionField, eps_mark: f64) -> Vec<bool> {
    field.values.iter().map(|&a| is_mixed(a, eps_mark)).collect()
}

fn is_mixed(a: f64, eps: f64) -> bool {
    eps <= a && a <= 1.0 - eps
}

/// Local stencil offset to mesh offset for flow along `axis` with sign `s`:
/// local x follows the flow, the other two axes follow cyclically.
fn oriented_offset(local: [i32; 3], axis: usize, s: i32) -> [i32; 3] {
    let [a, b, c] = local;
    match axis {
        0 => [s * a, b, c],
        1 => [c, s * a, b],
        _ => [b, c, s * a],
    }
}

/// Fractions around `donor`, oriented so that the flow is along local +x.
pub fn gather_stencil(values: &[f64], mesh: &Mesh, donor: usize, axis: usize, sign: i32) -> [f64; STENCIL_LEN] {
    std::array::from_fn(|n| values[mesh.neighbor(donor, oriented_offset(stencil_offset(n), axis, sign))])
}

/// Signed Courant numbers of the upper face of every cell along `axis`, and
/// each cell's total outgoing Courant number.
fn face_courant(
    mesh: &Mesh,
    axis: usize,
    velocity: &VelocitySpec,
    t: f64,
    dt: f64,
) -> Result<(Vec<f64>, Vec<f64>), SolverError> {
    let tm = t + 0.5 * dt;
    let ratio = dt / mesh.dx;
    let mut shift = Vec3::zeros();
    shift[axis] = 0.5 * mesh.dx;
    let beta: Vec<f64> = (0..mesh.num_cells())
        .into_par_iter()
        .map(|c| velocity.at(mesh.cell_center(c) + shift, tm)[axis] * ratio)
        .collect();
    let mut lower = [0; 3];
    lower[axis] = -1;
    let mut out = vec![0.0; beta.len()];
    for (c, o) in out.iter_mut().enumerate() {
        let up = beta[c];
        let down = beta[mesh.neighbor(c, lower)];
        *o = up.max(0.0) + (-down).max(0.0);
        if *o > 1.0 {
            return Err(SolverError::CflViolation { axis, beta: *o });
        }
    }
    Ok((beta, out))
}

/// Flux value (fraction of the swept slab occupied by A) through the upper
/// face of every cell; zero where the face carries no flow.
fn face_fluxes(
    values: &[f64],
    mesh: &Mesh,
    axis: usize,
    beta: &[f64],
    out_beta: &[f64],
    scheme: &FluxScheme,
) -> Result<Vec<f64>, SolverError> {
    let mut upper = [0; 3];
    upper[axis] = 1;
    let donor = |c: usize| {
        if beta[c] > 0.0 {
            (c, 1)
        } else {
            (mesh.neighbor(c, upper), -1)
        }
    };
    let mut flux: Vec<f64> = (0..values.len())
        .into_par_iter()
        .map(|c| {
            if beta[c] == 0.0 {
                return 0.0;
            }
            let (d, s) = donor(c);
            let a = values[d];
            let (lo, hi) = flux_bounds(a, out_beta[d]);
            match scheme {
                FluxScheme::Upwind => a,
                _ => {
                    let down = values[mesh.neighbor(d, oriented_offset([1, 0, 0], axis, s))];
                    down.clamp(lo, hi)
                }
            }
        })
        .collect();
    if let FluxScheme::VofmlHybrid { weights, eps_mark } = scheme {
        let faces: Vec<usize> = (0..values.len())
            .filter(|&c| beta[c] != 0.0 && is_mixed(values[donor(c).0], *eps_mark))
            .collect();
        if !faces.is_empty() {
            let stencils: Vec<[f64; STENCIL_LEN]> = faces
                .par_iter()
                .map(|&c| {
                    let (d, s) = donor(c);
                    gather_stencil(values, mesh, d, axis, s)
                })
                .collect();
            let betas: Vec<f64> = faces.iter().map(|&c| beta[c].abs()).collect();
            let net = wrapped_forward_batch(weights, &stencils, &betas)?;
            for (&c, v) in faces.iter().zip(net) {
                let d = donor(c).0;
                let (lo, hi) = flux_bounds(values[d], out_beta[d]);
                flux[c] = v.clamp(lo, hi);
            }
        }
    }
    Ok(flux)
}

/// `α ← (α − outflow) + inflow` with the given face fluxes.
fn apply_fluxes(values: &[f64], mesh: &Mesh, axis: usize, beta: &[f64], flux: &[f64], flip: bool) -> Vec<f64> {
    let mut lower = [0; 3];
    lower[axis] = -1;
    let f = |c: usize| if flip { 1.0 - flux[c] } else { flux[c] };
    (0..values.len())
        .into_par_iter()
        .map(|c| {
            let l = mesh.neighbor(c, lower);
            let (mut out, mut inflow) = (0.0, 0.0);
            let (bu, bl) = (beta[c], beta[l]);
            if bu > 0.0 {
                out += bu * f(c);
            } else if bu < 0.0 {
                inflow += -bu * f(c);
            }
            if bl < 0.0 {
                out += -bl * f(l);
            } else if bl > 0.0 {
                inflow += bl * f(l);
            }
            (values[c] - out) + inflow
        })
        .collect()
}

/// One directional sweep along `axis` over `[t, t + dt]`.
pub fn sweep(
    field: &FractionField,
    mesh: &Mesh,
    axis: usize,
    velocity: &VelocitySpec,
    t: f64,
    dt: f64,
    scheme: &FluxScheme,
) -> Result<FractionField, SolverError> {
    let (beta, out_beta) = face_courant(mesh, axis, velocity, t, dt)?;
    let flux = face_fluxes(&field.values, mesh, axis, &beta, &out_beta, scheme)?;
    Ok(FractionField {
        values: apply_fluxes(&field.values, mesh, axis, &beta, &flux, false),
        time: field.time,
    })
}

/// Sweeps in the given axis order, then advances the clock.
pub fn step_ordered(
    field: &FractionField,
    mesh: &Mesh,
    velocity: &VelocitySpec,
    t: f64,
    dt: f64,
    scheme: &FluxScheme,
    order: [usize; 3],
    mut inspect: impl FnMut(&FractionField),
) -> Result<FractionField, SolverError> {
    let mut f = field.clone();
    for axis in order {
        f = sweep(&f, mesh, axis, velocity, t, dt, scheme)?;
        inspect(&f);
    }
    f.time = t + dt;
    Ok(f)
}

/// Sweeps in x, y, z order.
pub fn step(
    field: &FractionField,
    mesh: &Mesh,
    velocity: &VelocitySpec,
    t: f64,
    dt: f64,
    scheme: &FluxScheme,
) -> Result<FractionField, SolverError> {
    step_ordered(field, mesh, velocity, t, dt, scheme, [0, 1, 2], |_| {})
}

/// Sweep advancing fluid A with flux `F` and fluid B with `1 − F`, then
/// renormalizing so the two fractions sum to one. `field` holds α_A.
pub fn sweep_renormalized(
    field: &FractionField,
    mesh: &Mesh,
    axis: usize,
    velocity: &VelocitySpec,
    t: f64,
    dt: f64,
    scheme: &FluxScheme,
) -> Result<FractionField, SolverError> {
    let (beta, out_beta) = face_courant(mesh, axis, velocity, t, dt)?;
    let flux = face_fluxes(&field.values, mesh, axis, &beta, &out_beta, scheme)?;
    let a = apply_fluxes(&field.values, mesh, axis, &beta, &flux, false);
    let b_old: Vec<f64> = field.values.iter().map(|v| 1.0 - v).collect();
    let b = apply_fluxes(&b_old, mesh, axis, &beta, &flux, true);
    let mut values = Vec::with_capacity(a.len());
    for (cell, (&x, &y)) in a.iter().zip(&b).enumerate() {
        let sum = x + y;
        if sum < 1e-14 {
            return Err(SolverError::ZeroSum { cell, sum });
        }
        values.push(x / sum);
    }
    Ok(FractionField { values, time: field.time })
}

pub fn step_renormalized_ordered(
    field: &FractionField,
    mesh: &Mesh,
    velocity: &VelocitySpec,
    t: f64,
    dt: f64,
    scheme: &FluxScheme,
    order: [usize; 3],
    mut inspect: impl FnMut(&FractionField),
) -> Result<FractionField, SolverError> {
    let mut f = field.clone();
    for axis in order {
        f = sweep_renormalized(&f, mesh, axis, velocity, t, dt, scheme)?;
        inspect(&f);
    }
    f.time = t + dt;
    Ok(f)
}

pub fn step_renormalized(
    field: &FractionField,
    mesh: &Mesh,
    velocity: &VelocitySpec,
    t: f64,
    dt: f64,
    scheme: &FluxScheme,
) -> Result<FractionField, SolverError> {
    step_renormalized_ordered(field, mesh, velocity, t, dt, scheme, [0, 1, 2], |_| {})
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::DEFAULT_DIMS;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn unit_mesh(n: usize) -> Mesh {
        Mesh::new(n, Vec3::zeros(), Vec3::repeat(1.0)).unwrap()
    }

    fn random_field(mesh: &Mesh, seed: u64) -> FractionField {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let values = (0..mesh.num_cells())
            .map(|_| match rng.random_range(0..3) {
                0 => 0.0,
                1 => 1.0,
                _ => rng.random(),
            })
            .collect();
        FractionField { values, time: 0.0 }
    }

    fn schemes() -> Vec<FluxScheme> {
        let w = Arc::new(NetworkWeights::xavier(&DEFAULT_DIMS, 1).unwrap());
        vec![
            FluxScheme::Upwind,
            FluxScheme::LimitedDownwind,
            FluxScheme::vofml(w, DEFAULT_EPS_MARK).unwrap(),
        ]
    }

    #[test]
    fn mesh_validation_and_neighbors() {
        assert!(Mesh::new(2, Vec3::zeros(), Vec3::repeat(1.0)).is_err());
        assert!(Mesh::new(4, Vec3::zeros(), Vec3::new(1.0, 2.0, 1.0)).is_err());
        let m = Mesh::new(4, Vec3::repeat(-1.0), Vec3::repeat(1.0)).unwrap();
        assert_eq!(m.dx, 0.5);
        assert_eq!(m.neighbor(m.index(0, 3, 1), [-1, 1, 0]), m.index(3, 0, 1));
        assert_eq!(m.cell_center(0), Vec3::repeat(-0.75));
    }

    #[test]
    fn init_examples() {
        let m = unit_mesh(4);
        let all = init_fractions(&|_| true, &m, 3);
        assert!(all.values.iter().all(|&v| v == 1.0));
        let half = init_fractions(&|p: Vec3| p.x < 0.5, &m, 4);
        assert!(half.values.iter().all(|&v| v == 0.0 || v == 1.0));
        assert_eq!(half.total(), 32.0);
        let m = Mesh::new(27, Vec3::repeat(-1.0), Vec3::repeat(1.0)).unwrap();
        let ball = init_fractions(&|p: Vec3| p.norm() < 0.4, &m, 10);
        let vol = ball.total() * m.dx.powi(3);
        let exact = 4.0 / 3.0 * std::f64::consts::PI * 0.4f64.powi(3);
        assert!((vol / exact - 1.0).abs() < 0.01);
    }

    #[test]
    fn bounds_examples() {
        assert_eq!(face_bounds(1.0, 0.3), (1.0, 1.0));
        assert_eq!(face_bounds(1.0, 1.0), (1.0, 1.0));
        assert_eq!(face_bounds(0.0, 0.7), (0.0, 0.0));
        assert_eq!(face_bounds(0.5, 0.5), (0.0, 1.0));
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..1000 {
            let a: f64 = rng.random();
            let b: f64 = rng.random_range(1e-6..=1.0);
            let (lo, hi) = face_bounds(a, b);
            assert!(lo <= a && a <= hi && 0.0 <= lo && hi <= 1.0);
        }
    }

    #[test]
    fn scheme_examples() {
        let mut s = [0.0; STENCIL_LEN];
        for (n, v) in s.iter_mut().enumerate() {
            *v = match stencil_offset(n)[0] {
                -1 => 1.0,
                0 => 0.4,
                _ => 0.0,
            };
        }
        assert_eq!(flux_upwind(&s, 0.4), 0.4);
        assert_eq!(flux_limited_downwind(&s, 0.4), 0.0);
        let w = NetworkWeights::xavier(&DEFAULT_DIMS, 2).unwrap();
        let full = [1.0; STENCIL_LEN];
        assert_eq!(flux_upwind(&full, 0.3), 1.0);
        assert_eq!(flux_limited_downwind(&full, 0.3), 1.0);
        assert_eq!(flux_vofml(&w, &full, 0.3).unwrap(), 1.0);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..50 {
            let x: [f64; STENCIL_LEN] = std::array::from_fn(|_| rng.random());
            let b = rng.random_range(0.01..1.0);
            let (lo, hi) = face_bounds(x[CENTER], b);
            let f = flux_vofml(&w, &x, b).unwrap();
            assert!(lo <= f && f <= hi);
        }
    }

    #[test]
    fn mark_examples() {
        let f = FractionField { values: vec![0.0, 1.0, 0.5, 0.005, 0.01, 0.995], time: 0.0 };
        assert_eq!(mark_mixed(&f, 0.01), vec![false, false, true, false, true, false]);
        assert!(FluxScheme::vofml(Arc::new(NetworkWeights::zeros(&DEFAULT_DIMS).unwrap()), 0.5).is_err());
    }

    #[test]
    fn upwind_unit_courant_is_a_shift() {
        let m = unit_mesh(5);
        let f0 = random_field(&m, 5);
        let dt = m.dx;
        for axis in 0..3 {
            let mut u = Vec3::zeros();
            u[axis] = 1.0;
            let vel = VelocitySpec::constant(u);
            let mut f = f0.clone();
            let once = sweep(&f, &m, axis, &vel, 0.0, dt, &FluxScheme::Upwind).unwrap();
            let mut d = [0; 3];
            d[axis] = -1;
            for c in 0..m.num_cells() {
                assert_eq!(once.values[c], f0.values[m.neighbor(c, d)]);
            }
            for _ in 0..m.n {
                f = sweep(&f, &m, axis, &vel, 0.0, dt, &FluxScheme::Upwind).unwrap();
            }
            assert_eq!(f.values, f0.values);
        }
        // negative direction as well
        let vel = VelocitySpec::constant(Vec3::new(0.0, -1.0, 0.0));
        let mut f = f0.clone();
        for _ in 0..m.n {
            f = sweep(&f, &m, 1, &vel, 0.0, dt, &FluxScheme::Upwind).unwrap();
        }
        assert_eq!(f.values, f0.values);
    }

    #[test]
    fn zero_velocity_and_cfl() {
        let m = unit_mesh(4);
        let f0 = random_field(&m, 6);
        for s in schemes() {
            let f = step(&f0, &m, &VelocitySpec::constant(Vec3::zeros()), 0.0, 0.1, &s).unwrap();
            assert_eq!(f.values, f0.values);
        }
        let fast = VelocitySpec::constant(Vec3::new(0.0, 0.0, 11.0));
        assert!(matches!(
            step(&f0, &m, &fast, 0.0, 0.025, &FluxScheme::Upwind),
            Err(SolverError::CflViolation { axis: 2, .. })
        ));
    }

    #[test]
    fn constant_velocity_conserves_and_bounds() {
        let m = unit_mesh(6);
        let f0 = random_field(&m, 7);
        let u = Vec3::new(1.0, -2.0, 3.0);
        let vel = VelocitySpec::constant(u);
        let dt = 0.1 * m.dx;
        for s in schemes() {
            let mut f = f0.clone();
            for n in 0..5 {
                let before = f.total();
                f = step_ordered(&f, &m, &vel, n as f64 * dt, dt, &s, [0, 1, 2], |g| {
                    let (lo, hi) = g.min_max();
                    assert!(lo >= -1e-12 && hi <= 1.0 + 1e-12);
                })
                .unwrap();
                assert!(((f.total() - before) / before).abs() < 1e-12);
            }
        }
        let (beta, _) = face_courant(&m, 1, &vel, 0.0, dt).unwrap();
        assert!(beta.iter().all(|b| (b + 0.2).abs() < 1e-15));
    }

    #[test]
    fn trivial_cells_flux_independent_of_scheme() {
        let m = unit_mesh(5);
        let mut f0 = random_field(&m, 8);
        // pure interior block to exercise pure donors
        for c in 0..m.num_cells() {
            if m.coords(c)[0] < 2 {
                f0.values[c] = 1.0;
            }
        }
        let vel = VelocitySpec::constant(Vec3::new(2.0, 0.0, 0.0));
        let (beta, out) = face_courant(&m, 0, &vel, 0.0, 0.1 * m.dx).unwrap();
        let fluxes: Vec<Vec<f64>> = schemes()
            .iter()
            .map(|s| face_fluxes(&f0.values, &m, 0, &beta, &out, s).unwrap())
            .collect();
        for c in 0..m.num_cells() {
            let a = f0.values[c];
            if a == 0.0 || a == 1.0 {
                assert!(fluxes.iter().all(|f| f[c] == a));
            }
        }
    }

    #[test]
    fn complement_symmetry_for_network_scheme() {
        let m = unit_mesh(5);
        let f0 = random_field(&m, 9);
        let g0 = FractionField { values: f0.values.iter().map(|v| 1.0 - v).collect(), time: 0.0 };
        let vel = VelocitySpec::constant(Vec3::new(0.7, 1.3, -2.1));
        let s = &schemes()[2];
        let dt = 0.1 * m.dx;
        let f = step(&f0, &m, &vel, 0.0, dt, s).unwrap();
        let g = step(&g0, &m, &vel, 0.0, dt, s).unwrap();
        for (a, b) in f.values.iter().zip(&g.values) {
            assert!((a + b - 1.0).abs() < 1e-10);
        }
    }

    #[test]
    fn renormalized_step_properties() {
        let m = unit_mesh(6);
        let f0 = random_field(&m, 10);
        let dt = 0.1 * m.dx;
        let swirl = VelocitySpec::new(
            |p: Vec3, _| {
                use std::f64::consts::PI;
                Vec3::new(
                    (PI * p.x).sin() * (PI * p.y).cos(),
                    -(PI * p.x).cos() * (PI * p.y).sin() + 0.5 * (2.0 * PI * p.y).sin(),
                    0.3 * (2.0 * PI * p.z).cos(),
                )
            },
            false,
            false,
        );
        for s in schemes() {
            let mut f = f0.clone();
            for n in 0..4 {
                f = step_renormalized_ordered(&f, &m, &swirl, n as f64 * dt, dt, &s, [0, 1, 2], |g| {
                    for &a in &g.values {
                        assert!((-1e-12..=1.0 + 1e-12).contains(&a));
                        assert_eq!(a + (1.0 - a), 1.0);
                    }
                })
                .unwrap();
            }
            let ones = FractionField { values: vec![1.0; m.num_cells()], time: 0.0 };
            let g = step_renormalized(&ones, &m, &swirl, 0.0, dt, &s).unwrap();
            assert!(g.values.iter().all(|&v| v == 1.0));
        }
        let vel = VelocitySpec::constant(Vec3::new(1.0, 2.0, 3.0));
        for s in schemes() {
            let plain = step(&f0, &m, &vel, 0.0, dt, &s).unwrap();
            let renorm = step_renormalized(&f0, &m, &vel, 0.0, dt, &s).unwrap();
            for (a, b) in plain.values.iter().zip(&renorm.values) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn stencil_orientation() {
        let m = unit_mesh(5);
        let values: Vec<f64> = (0..m.num_cells()).map(|c| c as f64).collect();
        let c = m.index(2, 2, 2);
        for axis in 0..3 {
            for s in [1, -1] {
                let st = gather_stencil(&values, &m, c, axis, s);
                assert_eq!(st[CENTER], c as f64);
                let mut d = [0; 3];
                d[axis] = s;
                assert_eq!(st[DOWNWIND], m.neighbor(c, d) as f64);
            }
        }
    }
}
