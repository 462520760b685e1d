//! Training-set assembly: Latin-hypercube sampling of the configuration
//! families, augmentation by the six axis maps, splitting, and CSV storage.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::symmetry::{augmentation_maps, CENTER, STENCIL_LEN};
use crate::synthconfig::{self, ConfigError, Family, StencilConfig};

/// Columns: 27 fractions, beta, flux, family, augmentation index.
pub const NUM_COLUMNS: usize = STENCIL_LEN + 4;
/// Attempts per base configuration before giving up on a parameter point.
const MAX_ATTEMPTS: usize = 10_000;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
    #[error("expected {NUM_COLUMNS} columns, found {0}")]
    ColumnCount(usize),
    #[error("unsupported dataset header: {0}")]
    FormatVersion(String),
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("{family}: rejected {rejected} of {count} parameter points")]
    RejectionRate {
        family: Family,
        rejected: usize,
        count: usize,
    },
    #[error("invalid dataset spec: {0}")]
    InvalidSpec(String),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sample {
    pub fractions: [f64; STENCIL_LEN],
    pub beta: f64,
    pub flux: f64,
    pub family: Family,
    pub augmentation_index: u8,
    /// Identifies the base configuration shared by augmented copies.
    pub base_index: usize,
}

impl Sample {
    pub fn central(&self) -> f64 {
        self.fractions[CENTER]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSpec {
    /// Base configurations per family, in [`Family::ALL`] order.
    pub counts: [usize; 4],
    pub beta_range: (f64, f64),
    pub augment: bool,
    pub seed: u64,
}

impl Default for DatasetSpec {
    fn default() -> Self {
        Self {
            counts: [3000, 6000, 9000, 6000],
            beta_range: (0.0, 0.6),
            augment: true,
            seed: 0,
        }
    }
}

impl DatasetSpec {
    pub fn total_samples(&self) -> usize {
        self.counts.iter().sum::<usize>() * if self.augment { 6 } else { 1 }
    }
}

/// `n` points in `[0,1]^d`, one per equal bin along every coordinate.
pub fn latin_hypercube(n: usize, d: usize, seed: u64) -> Vec<Vec<f64>> {
    latin_hypercube_with(n, d, &mut ChaCha8Rng::seed_from_u64(seed))
}

fn latin_hypercube_with<R: Rng>(n: usize, d: usize, rng: &mut R) -> Vec<Vec<f64>> {
    let mut pts = vec![vec![0.0; d]; n];
    let mut bins: Vec<usize> = (0..n).collect();
    for k in 0..d {
        bins.shuffle(rng);
        for (p, &b) in pts.iter_mut().zip(&bins) {
            p[k] = (b as f64 + rng.random::<f64>()) / n as f64;
        }
    }
    pts
}

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn scale_to_box(unit: &[f64], bounds: &[(f64, f64)]) -> Vec<f64> {
    unit.iter()
        .zip(bounds)
        .map(|(&u, &(lo, hi))| lo + u * (hi - lo))
        .collect()
}

/// Accepted configuration for one base index plus the number of rejected
/// parameter points before it.
fn accept_config(
    family: Family,
    first: Vec<f64>,
    rng: &mut ChaCha8Rng,
) -> Result<(StencilConfig, usize), DatasetError> {
    let bounds = family.parameter_box();
    let mut theta = first;
    for attempt in 0..MAX_ATTEMPTS {
        match synthconfig::sample(family, &theta) {
            Ok(cfg) => return Ok((cfg, attempt)),
            Err(ConfigError::RejectedConfig(_)) => {
                let unit: Vec<f64> = (0..bounds.len()).map(|_| rng.random()).collect();
                theta = scale_to_box(&unit, &bounds);
            }
            Err(e) => return Err(e.into()),
        }
    }
    Err(DatasetError::RejectionRate {
        family,
        rejected: MAX_ATTEMPTS,
        count: 1,
    })
}

/// Builds the dataset, ordered by (family, base index, augmentation index).
pub fn build(spec: &DatasetSpec) -> Result<Vec<Sample>, DatasetError> {
    let (b_lo, b_hi) = spec.beta_range;
    if !(0.0..=1.0).contains(&b_lo) || !(0.0..=1.0).contains(&b_hi) || b_lo > b_hi {
        return Err(DatasetError::InvalidSpec(format!("beta range {:?}", spec.beta_range)));
    }
    let maps = augmentation_maps();
    let perms: Vec<_> = maps.iter().map(|m| m.stencil_permutation()).collect();
    let mut out = Vec::with_capacity(spec.total_samples());
    let mut base_offset = 0;
    for (fi, (&family, &count)) in Family::ALL.iter().zip(&spec.counts).enumerate() {
        let fi = fi as u64;
        let bounds = family.parameter_box();
        let params = latin_hypercube_with(count, bounds.len(), &mut stream_rng(spec.seed, 3 * fi));
        let betas = latin_hypercube_with(count, 1, &mut stream_rng(spec.seed, 3 * fi + 1));
        let per_base: Vec<Result<(Vec<Sample>, usize), DatasetError>> = (0..count)
            .into_par_iter()
            .map(|i| {
                let mut rng = stream_rng(spec.seed ^ 0x5851_f42d_4c95_7f2d, (fi << 40) | i as u64);
                let (cfg, rejected) = accept_config(family, scale_to_box(&params[i], &bounds), &mut rng)?;
                let beta = b_lo + betas[i][0] * (b_hi - b_lo);
                let integ = cfg.integrator()?;
                let fractions = integ.fractions()?;
                let mut samples = vec![Sample {
                    fractions: fractions.0,
                    beta,
                    flux: integ.flux(beta)?,
                    family,
                    augmentation_index: 0,
                    base_index: base_offset + i,
                }];
                if spec.augment {
                    for sigma in 1..6 {
                        let flux = synthconfig::exact_flux(&synthconfig::transform(&cfg, sigma), beta)?;
                        samples.push(Sample {
                            fractions: fractions.permuted(&perms[sigma]).0,
                            flux,
                            augmentation_index: sigma as u8,
                            ..samples[0]
                        });
                    }
                }
                Ok((samples, rejected))
            })
            .collect();
        let mut rejected = 0;
        for r in per_base {
            let (s, rej) = r?;
            rejected += rej;
            out.extend(s);
        }
        if count > 0 && 2 * rejected > count {
            return Err(DatasetError::RejectionRate {
                family,
                rejected,
                count,
            });
        }
        base_offset += count;
    }
    Ok(out)
}

#[derive(Debug, Clone, Default)]
pub struct Split {
    pub train: Vec<Sample>,
    pub validation: Vec<Sample>,
    pub test: Vec<Sample>,
}

/// Shuffled split by `ratios` (train, validation, test). With `group_aware`
/// all augmentations of a base configuration land in one partition.
pub fn split(data: &[Sample], ratios: [f64; 3], seed: u64, group_aware: bool) -> Split {
    let sum: f64 = ratios.iter().sum();
    assert!((sum - 1.0).abs() < 1e-9, "split ratios must sum to 1");
    let mut groups: Vec<&[Sample]> = if group_aware {
        data.chunk_by(|a, b| a.base_index == b.base_index).collect()
    } else {
        data.chunks(1).collect()
    };
    groups.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n = data.len() as f64;
    let n_train = (ratios[0] * n).round() as usize;
    let n_val = ((ratios[0] + ratios[1]) * n).round() as usize - n_train;
    let mut out = Split::default();
    for g in groups {
        let part = if out.train.len() < n_train {
            &mut out.train
        } else if out.validation.len() < n_val {
            &mut out.validation
        } else {
            &mut out.test
        };
        part.extend_from_slice(g);
    }
    out
}

pub fn header() -> String {
    let mut cols: Vec<String> = (0..STENCIL_LEN).map(|i| format!("alpha_{i:02}")).collect();
    cols.extend(["beta", "flux", "family", "augmentation_index"].map(String::from));
    cols.join(",")
}

pub fn write(data: &[Sample], path: &Path) -> Result<(), DatasetError> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "{}", header())?;
    for s in data {
        for x in &s.fractions {
            write!(w, "{x:.16e},")?;
        }
        writeln!(
            w,
            "{:.16e},{:.16e},{},{}",
            s.beta, s.flux, s.family, s.augmentation_index
        )?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a dataset written by [`write`]. Base indices are reassigned from
/// row order: a new group starts at every augmentation index 0.
pub fn read(path: &Path) -> Result<Vec<Sample>, DatasetError> {
    let mut lines = BufReader::new(File::open(path)?).lines();
    let head = lines.next().transpose()?.unwrap_or_default();
    let ncols = head.split(',').count();
    if ncols != NUM_COLUMNS {
        return Err(DatasetError::ColumnCount(ncols));
    }
    if head.trim_end() != header() {
        return Err(DatasetError::FormatVersion(head));
    }
    let mut out = Vec::new();
    let mut base = 0usize;
    for (k, line) in lines.enumerate() {
        let line = line?;
        let lineno = k + 2;
        if line.trim().is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split(',').collect();
        if cols.len() != NUM_COLUMNS {
            return Err(DatasetError::ColumnCount(cols.len()));
        }
        let num = |i: usize| -> Result<f64, DatasetError> {
            cols[i].trim().parse::<f64>().map_err(|e| DatasetError::Parse {
                line: lineno,
                msg: format!("column {i}: {e}"),
            })
        };
        let mut fractions = [0.0; STENCIL_LEN];
        for (i, f) in fractions.iter_mut().enumerate() {
            *f = num(i)?;
        }
        let family: Family = cols[STENCIL_LEN + 2]
            .trim()
            .parse()
            .map_err(|msg| DatasetError::Parse { line: lineno, msg })?;
        let augmentation_index: u8 = cols[STENCIL_LEN + 3].trim().parse().map_err(|e| DatasetError::Parse {
            line: lineno,
            msg: format!("augmentation index: {e}"),
        })?;
        if augmentation_index == 0 && !out.is_empty() {
            base += 1;
        }
        out.push(Sample {
            fractions,
            beta: num(STENCIL_LEN)?,
            flux: num(STENCIL_LEN + 1)?,
            family,
            augmentation_index,
            base_index: base,
        });
    }
    Ok(out)
}
