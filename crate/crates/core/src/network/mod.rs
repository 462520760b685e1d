//! Fully connected ReLU network mapping a stencil of fractions plus the
//! Courant number to a face flux, with its symmetrizing wrappers.

mod train;

use std::fmt::Write as _;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::symmetry::{flux_preserving_maps, StencilPermutation, STENCIL_LEN};

pub use train::{
    flux_table, grad, loss_and_grad, loss_mse, metrics, train, train_with_observer, FluxTable,
    Metrics, QuasiNewton, TrainEvent, TrainOutcome, TrainSchedule,
};

/// Network input: 27 fractions followed by β.
pub const INPUT_LEN: usize = STENCIL_LEN + 1;
pub const DEFAULT_DIMS: [usize; 6] = [INPUT_LEN, 50, 50, 50, 50, 1];
const WEIGHTS_MAGIC: &str = "vofml-weights 1";

#[derive(Debug, Error)]
pub enum NetworkError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("invalid layer dimensions {0:?}")]
    InvalidDims(Vec<usize>),
    #[error("empty partition")]
    EmptyPartition,
    #[error("training loss became non-finite during {phase} at iteration {iteration}")]
    DivergenceDetected { phase: &'static str, iteration: usize },
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed weights file: {0}")]
    Format(String),
}

/// Dense layers stored in one flat vector: for each layer the matrix `A`
/// (row-major, `out × in`) followed by the bias `b`.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkWeights {
    dims: Vec<usize>,
    params: Vec<f64>,
}

fn param_count(dims: &[usize]) -> usize {
    dims.windows(2).map(|w| w[1] * (w[0] + 1)).sum()
}

impl NetworkWeights {
    pub fn zeros(dims: &[usize]) -> Result<Self, NetworkError> {
        if dims.len() < 2 || dims.contains(&0) || *dims.last().unwrap() != 1 {
            return Err(NetworkError::InvalidDims(dims.to_vec()));
        }
        Ok(Self {
            dims: dims.to_vec(),
            params: vec![0.0; param_count(dims)],
        })
    }

    pub fn from_params(dims: &[usize], params: Vec<f64>) -> Result<Self, NetworkError> {
        let mut w = Self::zeros(dims)?;
        if params.len() != w.params.len() {
            return Err(NetworkError::DimensionMismatch {
                expected: w.params.len(),
                got: params.len(),
            });
        }
        w.params = params;
        Ok(w)
    }

    /// Uniform fan-based initialization, zero biases.
    pub fn xavier(dims: &[usize], seed: u64) -> Result<Self, NetworkError> {
        let mut w = Self::zeros(dims)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for l in 0..w.num_layers() {
            let (fan_in, fan_out) = (w.dims[l], w.dims[l + 1]);
            let lim = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let (a, _) = w.layer_mut(l);
            for v in a {
                *v = rng.random_range(-lim..lim);
            }
        }
        Ok(w)
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn num_layers(&self) -> usize {
        self.dims.len() - 1
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    fn layer_offset(&self, l: usize) -> usize {
        param_count(&self.dims[..=l])
    }

    /// `(A, b)` of layer `l` (0-based).
    pub fn layer(&self, l: usize) -> (&[f64], &[f64]) {
        let (i, o) = (self.dims[l], self.dims[l + 1]);
        let s = self.layer_offset(l);
        self.params[s..s + o * (i + 1)].split_at(o * i)
    }

    pub fn layer_mut(&mut self, l: usize) -> (&mut [f64], &mut [f64]) {
        let (i, o) = (self.dims[l], self.dims[l + 1]);
        let s = self.layer_offset(l);
        self.params[s..s + o * (i + 1)].split_at_mut(o * i)
    }

    fn check_input(&self, len: usize) -> Result<(), NetworkError> {
        if len != self.dims[0] {
            return Err(NetworkError::DimensionMismatch {
                expected: self.dims[0],
                got: len,
            });
        }
        Ok(())
    }

    /// Evaluates the network on a full input vector.
    pub fn eval(&self, input: &[f64]) -> Result<f64, NetworkError> {
        self.check_input(input.len())?;
        let mut x = input.to_vec();
        let mut z = Vec::new();
        for l in 0..self.num_layers() {
            let (a, b) = self.layer(l);
            let n_in = x.len();
            z.clear();
            z.extend(b.iter().enumerate().map(|(r, &bias)| {
                let row = &a[r * n_in..(r + 1) * n_in];
                bias + row.iter().zip(&x).map(|(p, q)| p * q).sum::<f64>()
            }));
            if l + 1 < self.num_layers() {
                for v in &mut z {
                    *v = v.max(0.0);
                }
            }
            std::mem::swap(&mut x, &mut z);
        }
        Ok(x[0])
    }

    /// Evaluates `n` inputs stored row-major in `inputs`.
    pub fn eval_batch(&self, inputs: &[f64]) -> Result<Vec<f64>, NetworkError> {
        let d = self.dims[0];
        if inputs.len() % d != 0 {
            return Err(NetworkError::DimensionMismatch {
                expected: d,
                got: inputs.len() % d,
            });
        }
        Ok(train::forward_rows(self, inputs, inputs.len() / d))
    }

    pub fn save(&self, path: &Path) -> Result<(), NetworkError> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, NetworkError> {
        Self::from_text(&std::fs::read_to_string(path)?)
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let dims: Vec<String> = self.dims.iter().map(usize::to_string).collect();
        writeln!(s, "{WEIGHTS_MAGIC}\ndims {}", dims.join(" ")).unwrap();
        let join = |v: &[f64]| v.iter().map(|x| format!("{x:.16e}")).collect::<Vec<_>>().join(" ");
        for l in 0..self.num_layers() {
            let (a, b) = self.layer(l);
            writeln!(s, "layer {}", l + 1).unwrap();
            for row in a.chunks(self.dims[l]) {
                writeln!(s, "{}", join(row)).unwrap();
            }
            writeln!(s, "bias\n{}", join(b)).unwrap();
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self, NetworkError> {
        let bad = |m: &str| NetworkError::Format(m.to_string());
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        if lines.next().map(str::trim) != Some(WEIGHTS_MAGIC) {
            return Err(bad("missing or unsupported version header"));
        }
        let dims: Vec<usize> = lines
            .next()
            .and_then(|l| l.strip_prefix("dims "))
            .ok_or_else(|| bad("missing dims line"))?
            .split_whitespace()
            .map(|t| t.parse().map_err(|_| bad("bad dimension")))
            .collect::<Result<_, _>>()?;
        let mut w = Self::zeros(&dims)?;
        let row = |expect: usize, lines: &mut dyn Iterator<Item = &str>| -> Result<Vec<f64>, NetworkError> {
            let v: Vec<f64> = lines
                .next()
                .ok_or_else(|| bad("truncated file"))?
                .split_whitespace()
                .map(|t| t.parse().map_err(|_| bad("bad number")))
                .collect::<Result<_, _>>()?;
            if v.len() != expect {
                return Err(bad("row length"));
            }
            Ok(v)
        };
        for l in 0..w.num_layers() {
            let (n_in, n_out) = (dims[l], dims[l + 1]);
            if lines.next().map(str::trim) != Some(format!("layer {}", l + 1).as_str()) {
                return Err(bad("missing layer header"));
            }
            let mut a = Vec::with_capacity(n_in * n_out);
            for _ in 0..n_out {
                a.extend(row(n_in, &mut lines)?);
            }
            if lines.next().map(str::trim) != Some("bias") {
                return Err(bad("missing bias block"));
            }
            let b = row(n_out, &mut lines)?;
            let (la, lb) = w.layer_mut(l);
            la.copy_from_slice(&a);
            lb.copy_from_slice(&b);
        }
        Ok(w)
    }
}

fn network_input(x: &[f64], beta: f64) -> Result<[f64; INPUT_LEN], NetworkError> {
    if x.len() != STENCIL_LEN {
        return Err(NetworkError::DimensionMismatch {
            expected: STENCIL_LEN,
            got: x.len(),
        });
    }
    let mut v = [0.0; INPUT_LEN];
    v[..STENCIL_LEN].copy_from_slice(x);
    v[STENCIL_LEN] = beta;
    Ok(v)
}

pub fn forward(w: &NetworkWeights, x: &[f64], beta: f64) -> Result<f64, NetworkError> {
    w.eval(&network_input(x, beta)?)
}

/// The 8 stencil permutations that leave the x-directed flux unchanged.
pub fn s_equal_permutations() -> [StencilPermutation; 8] {
    flux_preserving_maps().map(|m| m.stencil_permutation())
}

/// Order-independent mean, so permuting the terms gives the same bits.
fn sorted_mean(mut v: [f64; 8]) -> f64 {
    v.sort_by(f64::total_cmp);
    v.iter().sum::<f64>() / 8.0
}

pub fn symmetrized_forward(w: &NetworkWeights, x: &[f64], beta: f64) -> Result<f64, NetworkError> {
    let input = network_input(x, beta)?;
    let mut vals = [0.0; 8];
    let mut permuted = input;
    for (v, p) in vals.iter_mut().zip(s_equal_permutations()) {
        p.apply_slice(&input[..STENCIL_LEN], &mut permuted[..STENCIL_LEN]);
        *v = w.eval(&permuted)?;
    }
    Ok(sorted_mean(vals))
}

pub fn complement(x: &[f64]) -> Vec<f64> {
    x.iter().map(|v| 1.0 - v).collect()
}

pub fn wrapped_forward(w: &NetworkWeights, x: &[f64], beta: f64) -> Result<f64, NetworkError> {
    let a = symmetrized_forward(w, x, beta)?;
    let b = symmetrized_forward(w, &complement(x), beta)?;
    Ok(0.5 * a + 0.5 * (1.0 - b))
}

/// Rows fed to the raw network to evaluate the wrapped network at one
/// stencil: the 8 permutations of `x`, then of `1 − x`.
pub(crate) fn wrapper_rows(x: &[f64; STENCIL_LEN], beta: f64, out: &mut Vec<f64>) {
    let perms = s_equal_permutations();
    let m: [f64; STENCIL_LEN] = x.map(|v| 1.0 - v);
    for src in [x, &m] {
        for p in &perms {
            out.extend(p.apply(src));
            out.push(beta);
        }
    }
}

/// Wrapped-network values for many stencils at once.
pub fn wrapped_forward_batch(
    w: &NetworkWeights,
    xs: &[[f64; STENCIL_LEN]],
    betas: &[f64],
) -> Result<Vec<f64>, NetworkError> {
    if xs.len() != betas.len() {
        return Err(NetworkError::DimensionMismatch {
            expected: xs.len(),
            got: betas.len(),
        });
    }
    w.check_input(INPUT_LEN)?;
    let mut rows = Vec::with_capacity(xs.len() * 16 * INPUT_LEN);
    for (x, &b) in xs.iter().zip(betas) {
        wrapper_rows(x, b, &mut rows);
    }
    let raw = w.eval_batch(&rows)?;
    Ok(raw
        .chunks(16)
        .map(|f| {
            let a = sorted_mean(f[..8].try_into().unwrap());
            let b = sorted_mean(f[8..].try_into().unwrap());
            0.5 * a + 0.5 * (1.0 - b)
        })
        .collect())
}

fn relu(x: f64) -> f64 {
    x.max(0.0)
}

/// minmod written with ReLUs only.
pub fn relu_minmod(a: f64, b: f64) -> f64 {
    relu(a - relu(a - b)) - relu(-a - relu(b - a))
}
