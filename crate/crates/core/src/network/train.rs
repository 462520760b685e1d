//! Batched evaluation, loss, reverse-mode gradients and the optimizers.

use std::collections::VecDeque;

use matrixmultiply::dgemm;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::{wrapper_rows, NetworkError, NetworkWeights, INPUT_LEN};
use crate::dataset::Sample;
use crate::solver::flux_bounds;
use crate::symmetry::{CENTER, DOWNWIND, STENCIL_LEN};

/// Samples per parallel work item; the reduction order is fixed, so results
/// do not depend on the thread count.
const CHUNK: usize = 1024;

/// `out (n × o) = x (n × i) · Aᵀ + b`.
fn affine(x: &[f64], n: usize, n_in: usize, a: &[f64], b: &[f64], out: &mut Vec<f64>) {
    let n_out = b.len();
    out.clear();
    for _ in 0..n {
        out.extend_from_slice(b);
    }
    // SAFETY: all pointers address buffers of the stated shapes.
    unsafe {
        dgemm(
            n,
            n_in,
            n_out,
            1.0,
            x.as_ptr(),
            n_in as isize,
            1,
            a.as_ptr(),
            1,
            n_in as isize,
            1.0,
            out.as_mut_ptr(),
            n_out as isize,
            1,
        );
    }
}

/// Post-activation outputs of every layer; the last entry is the raw output.
fn activations(w: &NetworkWeights, x0: &[f64], n: usize) -> Vec<Vec<f64>> {
    let layers = w.num_layers();
    let mut acts: Vec<Vec<f64>> = Vec::with_capacity(layers);
    for l in 0..layers {
        let (a, b) = w.layer(l);
        let mut z = Vec::new();
        affine(acts.last().map_or(x0, |v| v), n, w.dims[l], a, b, &mut z);
        if l + 1 < layers {
            for v in &mut z {
                *v = v.max(0.0);
            }
        }
        acts.push(z);
    }
    acts
}

fn forward_chunk(w: &NetworkWeights, rows: &[f64]) -> Vec<f64> {
    activations(w, rows, rows.len() / w.dims[0]).pop().unwrap()
}

pub(super) fn forward_rows(w: &NetworkWeights, inputs: &[f64], n: usize) -> Vec<f64> {
    let d = w.dims[0];
    if n <= CHUNK {
        return forward_chunk(w, inputs);
    }
    inputs
        .par_chunks(CHUNK * d)
        .map(|c| forward_chunk(w, c))
        .collect::<Vec<_>>()
        .concat()
}

/// Gradient of `Σ dout[r] · f(x_r)` with respect to the parameters.
fn backprop(w: &NetworkWeights, x0: &[f64], n: usize, acts: &[Vec<f64>], dout: &[f64]) -> Vec<f64> {
    let mut grad = vec![0.0; w.num_params()];
    let mut dz = dout.to_vec();
    let mut offset = w.num_params();
    for l in (0..w.num_layers()).rev() {
        let (n_in, n_out) = (w.dims[l], w.dims[l + 1]);
        offset -= n_out * (n_in + 1);
        let x_prev: &[f64] = if l == 0 { x0 } else { &acts[l - 1] };
        let (ga, gb) = grad[offset..offset + n_out * (n_in + 1)].split_at_mut(n_out * n_in);
        // SAFETY: shapes as documented: dz is n × o, x_prev is n × i.
        unsafe {
            dgemm(
                n_out,
                n,
                n_in,
                1.0,
                dz.as_ptr(),
                1,
                n_out as isize,
                x_prev.as_ptr(),
                n_in as isize,
                1,
                0.0,
                ga.as_mut_ptr(),
                n_in as isize,
                1,
            );
        }
        for row in dz.chunks(n_out) {
            for (g, d) in gb.iter_mut().zip(row) {
                *g += d;
            }
        }
        if l > 0 {
            let (a, _) = w.layer(l);
            let mut dx = vec![0.0; n * n_in];
            // SAFETY: dz is n × o, A is o × i, dx is n × i.
            unsafe {
                dgemm(
                    n,
                    n_out,
                    n_in,
                    1.0,
                    dz.as_ptr(),
                    n_out as isize,
                    1,
                    a.as_ptr(),
                    n_in as isize,
                    1,
                    0.0,
                    dx.as_mut_ptr(),
                    n_in as isize,
                    1,
                );
            }
            for (d, &x) in dx.iter_mut().zip(x_prev) {
                if x <= 0.0 {
                    *d = 0.0;
                }
            }
            dz = dx;
        }
    }
    grad
}

/// Training samples laid out as network rows. In wrapped mode each sample
/// expands to the 16 rows of the wrapped network.
#[derive(Clone)]
struct Design {
    rows: Vec<f64>,
    targets: Vec<f64>,
    wrapped: bool,
}

impl Design {
    fn new(data: &[Sample], wrapped: bool) -> Self {
        let per = if wrapped { 16 } else { 1 };
        let mut rows = Vec::with_capacity(data.len() * per * INPUT_LEN);
        for s in data {
            if wrapped {
                wrapper_rows(&s.fractions, s.beta, &mut rows);
            } else {
                rows.extend_from_slice(&s.fractions);
                rows.push(s.beta);
            }
        }
        Self {
            rows,
            targets: data.iter().map(|s| s.flux).collect(),
            wrapped,
        }
    }

    fn len(&self) -> usize {
        self.targets.len()
    }

    fn row_len(&self) -> usize {
        INPUT_LEN * if self.wrapped { 16 } else { 1 }
    }

    fn gather(&self, idx: &[usize]) -> Self {
        let rl = self.row_len();
        let mut rows = Vec::with_capacity(idx.len() * rl);
        for &i in idx {
            rows.extend_from_slice(&self.rows[i * rl..(i + 1) * rl]);
        }
        Self {
            rows,
            targets: idx.iter().map(|&i| self.targets[i]).collect(),
            wrapped: self.wrapped,
        }
    }

    fn predictions(&self, raw: &[f64]) -> Vec<f64> {
        if !self.wrapped {
            return raw.to_vec();
        }
        raw.chunks(16)
            .map(|f| 0.5 + (f[..8].iter().sum::<f64>() - f[8..].iter().sum::<f64>()) / 16.0)
            .collect()
    }

    /// Sum of squared residuals and, if requested, its gradient.
    fn chunk_eval(&self, w: &NetworkWeights, lo: usize, hi: usize, want_grad: bool) -> (f64, Option<Vec<f64>>) {
        let rl = self.row_len();
        let x0 = &self.rows[lo * rl..hi * rl];
        let n_rows = x0.len() / INPUT_LEN;
        let acts = activations(w, x0, n_rows);
        let preds = self.predictions(acts.last().unwrap());
        let res: Vec<f64> = preds.iter().zip(&self.targets[lo..hi]).map(|(p, t)| p - t).collect();
        let sse = res.iter().map(|r| r * r).sum();
        if !want_grad {
            return (sse, None);
        }
        let dout: Vec<f64> = if self.wrapped {
            res.iter()
                .flat_map(|r| (0..16).map(move |k| if k < 8 { r / 8.0 } else { -r / 8.0 }))
                .collect()
        } else {
            res.iter().map(|r| 2.0 * r).collect()
        };
        (sse, Some(backprop(w, x0, n_rows, &acts, &dout)))
    }

    /// Mean squared error and optionally its gradient.
    fn evaluate(&self, w: &NetworkWeights, want_grad: bool) -> (f64, Option<Vec<f64>>) {
        let n = self.len();
        let parts: Vec<(f64, Option<Vec<f64>>)> = (0..n.div_ceil(CHUNK))
            .into_par_iter()
            .map(|c| self.chunk_eval(w, c * CHUNK, ((c + 1) * CHUNK).min(n), want_grad))
            .collect();
        let mut sse = 0.0;
        let mut grad = want_grad.then(|| vec![0.0; w.num_params()]);
        for (s, g) in parts {
            sse += s;
            if let (Some(acc), Some(g)) = (grad.as_mut(), g) {
                for (a, b) in acc.iter_mut().zip(g) {
                    *a += b;
                }
            }
        }
        let inv = 1.0 / n as f64;
        if let Some(g) = grad.as_mut() {
            g.iter_mut().for_each(|v| *v *= inv);
        }
        (sse * inv, grad)
    }
}

fn check(w: &NetworkWeights, data: &[Sample]) -> Result<(), NetworkError> {
    if data.is_empty() {
        return Err(NetworkError::EmptyPartition);
    }
    w.check_input(INPUT_LEN)
}

/// Mean squared error of the raw network.
pub fn loss_mse(w: &NetworkWeights, data: &[Sample]) -> Result<f64, NetworkError> {
    check(w, data)?;
    Ok(Design::new(data, false).evaluate(w, false).0)
}

pub fn loss_and_grad(w: &NetworkWeights, data: &[Sample]) -> Result<(f64, Vec<f64>), NetworkError> {
    check(w, data)?;
    let (l, g) = Design::new(data, false).evaluate(w, true);
    Ok((l, g.unwrap()))
}

/// Gradient of [`loss_mse`]; the ReLU derivative at 0 is taken as 0.
pub fn grad(w: &NetworkWeights, data: &[Sample]) -> Result<Vec<f64>, NetworkError> {
    Ok(loss_and_grad(w, data)?.1)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Metrics {
    pub mse: f64,
    pub mae: f64,
}

impl Metrics {
    fn from_pairs(pred: impl Iterator<Item = f64>, target: &[f64]) -> Self {
        let (mut se, mut ae) = (0.0, 0.0);
        for (p, t) in pred.zip(target) {
            se += (p - t) * (p - t);
            ae += (p - t).abs();
        }
        let n = target.len() as f64;
        Self { mse: se / n, mae: ae / n }
    }
}

/// MSE and MAE of the wrapped network.
pub fn metrics(w: &NetworkWeights, data: &[Sample]) -> Result<Metrics, NetworkError> {
    check(w, data)?;
    let targets: Vec<f64> = data.iter().map(|s| s.flux).collect();
    let pred = wrapped_predictions(w, data)?;
    Ok(Metrics::from_pairs(pred.into_iter(), &targets))
}

fn wrapped_predictions(w: &NetworkWeights, data: &[Sample]) -> Result<Vec<f64>, NetworkError> {
    let xs: Vec<[f64; STENCIL_LEN]> = data.iter().map(|s| s.fractions).collect();
    let betas: Vec<f64> = data.iter().map(|s| s.beta).collect();
    super::wrapped_forward_batch(w, &xs, &betas)
}

/// Error of the three flux models on one partition.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FluxTable {
    /// Donor value.
    pub uw: Metrics,
    /// Downwind value clamped into the bounds.
    pub ld: Metrics,
    /// Wrapped network clamped into the bounds, as used by the solver.
    pub vofml: Metrics,
    /// Wrapped network without the clamp.
    pub vofml_unprojected: Metrics,
}

pub fn flux_table(w: &NetworkWeights, data: &[Sample]) -> Result<FluxTable, NetworkError> {
    check(w, data)?;
    let targets: Vec<f64> = data.iter().map(|s| s.flux).collect();
    let clamp = |s: &Sample, v: f64| {
        let (lo, hi) = flux_bounds(s.fractions[CENTER], s.beta);
        v.clamp(lo, hi)
    };
    let net = wrapped_predictions(w, data)?;
    Ok(FluxTable {
        uw: Metrics::from_pairs(data.iter().map(|s| s.fractions[CENTER]), &targets),
        ld: Metrics::from_pairs(data.iter().map(|s| clamp(s, s.fractions[DOWNWIND])), &targets),
        vofml: Metrics::from_pairs(data.iter().zip(&net).map(|(s, &v)| clamp(s, v)), &targets),
        vofml_unprojected: Metrics::from_pairs(net.iter().copied(), &targets),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QuasiNewton {
    Limited { history: usize },
    /// Dense inverse-Hessian approximation.
    Full,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainSchedule {
    pub adam_epochs: usize,
    /// Mini-batch size; 0 means full batch.
    pub batch_size: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub qn_steps: usize,
    pub quasi_newton: QuasiNewton,
    pub seed: u64,
    /// Fit the wrapped network instead of the raw one.
    pub through_wrapper: bool,
}

impl Default for TrainSchedule {
    fn default() -> Self {
        Self {
            adam_epochs: 5000,
            batch_size: 0,
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            qn_steps: 5000,
            quasi_newton: QuasiNewton::Limited { history: 20 },
            seed: 0,
            through_wrapper: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainEvent {
    pub phase: &'static str,
    pub iteration: usize,
    pub train_loss: f64,
    pub validation_loss: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Weights with the lowest validation loss seen.
    pub weights: NetworkWeights,
    pub best_validation_loss: f64,
    pub final_train_loss: f64,
}

pub fn train(
    w0: &NetworkWeights,
    train_set: &[Sample],
    validation: &[Sample],
    schedule: &TrainSchedule,
) -> Result<TrainOutcome, NetworkError> {
    train_with_observer(w0, train_set, validation, schedule, |_| {})
}

struct Tracker<F> {
    val: Design,
    best: NetworkWeights,
    best_loss: f64,
    observer: F,
}

impl<F: FnMut(&TrainEvent)> Tracker<F> {
    fn record(&mut self, w: &NetworkWeights, phase: &'static str, iteration: usize, train_loss: f64) {
        let v = self.val.evaluate(w, false).0;
        if v < self.best_loss {
            self.best_loss = v;
            self.best.clone_from(w);
        }
        (self.observer)(&TrainEvent {
            phase,
            iteration,
            train_loss,
            validation_loss: v,
        });
    }
}

/// ADAM followed by a quasi-Newton phase; `observer` sees one event per
/// epoch or step.
pub fn train_with_observer(
    w0: &NetworkWeights,
    train_set: &[Sample],
    validation: &[Sample],
    schedule: &TrainSchedule,
    observer: impl FnMut(&TrainEvent),
) -> Result<TrainOutcome, NetworkError> {
    check(w0, train_set)?;
    check(w0, validation)?;
    let design = Design::new(train_set, schedule.through_wrapper);
    let val = Design::new(validation, schedule.through_wrapper);
    let best_loss = val.evaluate(w0, false).0;
    let mut tracker = Tracker {
        val,
        best: w0.clone(),
        best_loss,
        observer,
    };
    let mut w = w0.clone();
    let mut train_loss = design.evaluate(&w, false).0;

    let n = design.len();
    let batch = if schedule.batch_size == 0 { n } else { schedule.batch_size.min(n) };
    let np = w.num_params();
    let (mut m, mut v) = (vec![0.0; np], vec![0.0; np]);
    let mut rng = ChaCha8Rng::seed_from_u64(schedule.seed);
    let mut order: Vec<usize> = (0..n).collect();
    let mut t = 0i32;
    for epoch in 0..schedule.adam_epochs {
        if batch < n {
            order.shuffle(&mut rng);
        }
        let mut epoch_loss = 0.0;
        for idx in order.chunks(batch) {
            let (loss, g) = if batch < n {
                design.gather(idx).evaluate(&w, true)
            } else {
                design.evaluate(&w, true)
            };
            if !loss.is_finite() {
                return Err(NetworkError::DivergenceDetected {
                    phase: "adam",
                    iteration: epoch,
                });
            }
            epoch_loss += loss * idx.len() as f64;
            t += 1;
            let (c1, c2) = (1.0 - schedule.beta1.powi(t), 1.0 - schedule.beta2.powi(t));
            for (((p, g), m), v) in w.params.iter_mut().zip(g.unwrap()).zip(&mut m).zip(&mut v) {
                *m = schedule.beta1 * *m + (1.0 - schedule.beta1) * g;
                *v = schedule.beta2 * *v + (1.0 - schedule.beta2) * g * g;
                *p -= schedule.learning_rate * (*m / c1) / ((*v / c2).sqrt() + schedule.epsilon);
            }
        }
        train_loss = epoch_loss / n as f64;
        tracker.record(&w, "adam", epoch, train_loss);
    }

    if schedule.qn_steps > 0 {
        train_loss = quasi_newton(&mut w, &design, schedule, &mut tracker)?;
    }
    Ok(TrainOutcome {
        weights: tracker.best,
        best_validation_loss: tracker.best_loss,
        final_train_loss: train_loss,
    })
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

enum Curvature {
    Limited { pairs: VecDeque<(Vec<f64>, Vec<f64>, f64)>, cap: usize },
    Dense { h: Vec<f64>, n: usize, started: bool },
}

impl Curvature {
    fn new(kind: QuasiNewton, n: usize) -> Self {
        match kind {
            QuasiNewton::Limited { history } => Self::Limited {
                pairs: VecDeque::new(),
                cap: history.max(1),
            },
            QuasiNewton::Full => Self::Dense {
                h: Vec::new(),
                n,
                started: false,
            },
        }
    }

    fn is_empty(&self) -> bool {
        match self {
            Self::Limited { pairs, .. } => pairs.is_empty(),
            Self::Dense { started, .. } => !started,
        }
    }

    fn reset(&mut self) {
        match self {
            Self::Limited { pairs, .. } => pairs.clear(),
            Self::Dense { started, .. } => *started = false,
        }
    }

    /// `−H g`.
    fn direction(&self, g: &[f64]) -> Vec<f64> {
        match self {
            Self::Limited { pairs, .. } => {
                let mut q = g.to_vec();
                let mut alphas = Vec::with_capacity(pairs.len());
                for (s, y, rho) in pairs.iter().rev() {
                    let a = rho * dot(s, &q);
                    q.iter_mut().zip(y).for_each(|(qi, yi)| *qi -= a * yi);
                    alphas.push(a);
                }
                if let Some((s, y, _)) = pairs.back() {
                    let gamma = dot(s, y) / dot(y, y);
                    q.iter_mut().for_each(|v| *v *= gamma);
                }
                for ((s, y, rho), a) in pairs.iter().zip(alphas.iter().rev()) {
                    let b = rho * dot(y, &q);
                    q.iter_mut().zip(s).for_each(|(qi, si)| *qi += (a - b) * si);
                }
                q.iter_mut().for_each(|v| *v = -*v);
                q
            }
            Self::Dense { h, n, .. } => h.par_chunks(*n).map(|row| -dot(row, g)).collect(),
        }
    }

    fn update(&mut self, s: Vec<f64>, y: Vec<f64>) {
        let sy = dot(&s, &y);
        if sy <= 1e-12 * dot(&s, &s).sqrt() * dot(&y, &y).sqrt() {
            return;
        }
        let rho = 1.0 / sy;
        match self {
            Self::Limited { pairs, cap } => {
                if pairs.len() == *cap {
                    pairs.pop_front();
                }
                pairs.push_back((s, y, rho));
            }
            Self::Dense { h, n, started } => {
                let n = *n;
                if !*started {
                    let gamma = sy / dot(&y, &y);
                    h.clear();
                    h.resize(n * n, 0.0);
                    for i in 0..n {
                        h[i * n + i] = gamma;
                    }
                    *started = true;
                }
                let hy: Vec<f64> = h.par_chunks(n).map(|row| dot(row, &y)).collect();
                let coef = rho * rho * dot(&y, &hy) + rho;
                h.par_chunks_mut(n).enumerate().for_each(|(i, row)| {
                    for j in 0..n {
                        row[j] += coef * s[i] * s[j] - rho * (s[i] * hy[j] + hy[i] * s[j]);
                    }
                });
            }
        }
    }
}

/// Full-batch quasi-Newton iterations with a backtracking Armijo search.
fn quasi_newton<F: FnMut(&TrainEvent)>(
    w: &mut NetworkWeights,
    design: &Design,
    schedule: &TrainSchedule,
    tracker: &mut Tracker<F>,
) -> Result<f64, NetworkError> {
    const ARMIJO: f64 = 1e-4;
    const MAX_HALVINGS: usize = 40;
    let (mut f, g) = design.evaluate(w, true);
    let mut g = g.unwrap();
    let mut curv = Curvature::new(schedule.quasi_newton, w.num_params());
    for it in 0..schedule.qn_steps {
        if !f.is_finite() {
            return Err(NetworkError::DivergenceDetected {
                phase: "quasi-newton",
                iteration: it,
            });
        }
        let mut accepted = None;
        for attempt in 0..2 {
            let mut d = curv.direction(&g);
            let mut slope = dot(&g, &d);
            if slope >= 0.0 || curv.is_empty() {
                curv.reset();
                let gn = dot(&g, &g).sqrt();
                if gn == 0.0 {
                    break;
                }
                // a short steepest-descent probe when no curvature is known
                d = g.iter().map(|v| -v * 1e-2 / gn).collect();
                slope = dot(&g, &d);
            }
            let mut step = 1.0;
            for _ in 0..MAX_HALVINGS {
                let mut trial = w.clone();
                trial.params.iter_mut().zip(&d).for_each(|(p, di)| *p += step * di);
                let (ft, gt) = design.evaluate(&trial, true);
                if ft.is_finite() && ft <= f + ARMIJO * step * slope {
                    accepted = Some((trial, ft, gt.unwrap(), step));
                    break;
                }
                step *= 0.5;
            }
            if accepted.is_some() || attempt == 1 {
                break;
            }
            curv.reset();
        }
        let Some((trial, ft, gt, _)) = accepted else {
            break;
        };
        let s: Vec<f64> = trial.params.iter().zip(&w.params).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = gt.iter().zip(&g).map(|(a, b)| a - b).collect();
        curv.update(s, y);
        *w = trial;
        f = ft;
        g = gt;
        tracker.record(w, "quasi-newton", it, f);
    }
    Ok(f)
}
