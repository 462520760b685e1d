//! Parametric two-fluid configurations on the normalized 3×3×3 stencil.
//!
//! Region A is either an intersection of one to three half-spaces or the
//! interior of an ellipsoid (approximated by an inscribed polytope for all
//! integrals). Every sampled configuration puts both fluids in the central
//! cell `(−0.5, 0.5)³`.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use crate::geometry::{
    archimedes_point, axis_box, box_halfspaces, ellipsoid_polytope, rotation, unit_hull,
    ConvexPolytope, Ellipsoid, GeometryError, HalfSpace, Vec3,
};
use crate::symmetry::{augmentation_maps, stencil_offset, LatticeMap, StencilPermutation, CENTER, STENCIL_LEN};

/// Vertices of the polytope standing in for an ellipsoid.
pub const ELLIPSOID_VERTICES: usize = 10_000;
/// Central fractions closer than this to 0 or 1 are rejected.
pub const REJECT_TOL: f64 = 1e-9;
/// Floor on the sampled ellipsoid axis-direction magnitudes.
pub const AXIS_FLOOR: f64 = 0.05;
/// Half-width of the ellipsoid center box, `sqrt(3 (m + 0.5))` with margin 1.
pub const CENTER_BOUND: f64 = 2.121_320_343_559_642_4;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConfigError {
    #[error("configuration rejected: {0}")]
    RejectedConfig(String),
    #[error("parameter vector invalid: {0}")]
    InvalidParams(String),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Family {
    OnePlane,
    TwoPlanes,
    ThreePlanes,
    Ellipsoid,
}

impl Family {
    pub const ALL: [Family; 4] = [
        Family::OnePlane,
        Family::TwoPlanes,
        Family::ThreePlanes,
        Family::Ellipsoid,
    ];

    /// Parameter box, one `(lo, hi)` per coordinate.
    pub fn parameter_box(&self) -> Vec<(f64, f64)> {
        let tau = 2.0 * PI;
        match self {
            Family::OnePlane => vec![(0.0, tau), (-1.0, 1.0), (0.0, 1.0)],
            Family::TwoPlanes => vec![(0.0, tau); 5].into_iter().chain([(0.0, 1.0)]).collect(),
            Family::ThreePlanes => {
                let mut b = Family::TwoPlanes.parameter_box();
                b.extend(Family::OnePlane.parameter_box());
                b
            }
            Family::Ellipsoid => vec![
                (-CENTER_BOUND, CENTER_BOUND),
                (-CENTER_BOUND, CENTER_BOUND),
                (-CENTER_BOUND, CENTER_BOUND),
                (0.0, tau),
                (-1.0, 1.0),
                (0.0, 1.0),
            ],
        }
    }

    pub fn num_params(&self) -> usize {
        self.parameter_box().len()
    }

    pub fn name(&self) -> &'static str {
        match self {
            Family::OnePlane => "one_plane",
            Family::TwoPlanes => "two_planes",
            Family::ThreePlanes => "three_planes",
            Family::Ellipsoid => "ellipsoid",
        }
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Family {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Family::ALL
            .into_iter()
            .find(|f| f.name() == s)
            .ok_or_else(|| format!("unknown family '{s}'"))
    }
}

/// Volume fractions of the 27 stencil cells, x index fastest.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StencilFractions(pub [f64; STENCIL_LEN]);

impl StencilFractions {
    pub fn values(&self) -> &[f64; STENCIL_LEN] {
        &self.0
    }

    pub fn central(&self) -> f64 {
        self.0[CENTER]
    }

    pub fn permuted(&self, p: &StencilPermutation) -> Self {
        Self(p.apply(&self.0))
    }
}

/// One configuration of region A over the stencil.
#[derive(Debug, Clone, PartialEq)]
pub struct StencilConfig {
    pub kind: Family,
    pub halfspaces: Vec<HalfSpace>,
    pub ellipsoid: Option<Ellipsoid>,
    /// Swap the roles of A and B.
    pub complement: bool,
    pub raw_params: Vec<f64>,
    pub ellipsoid_vertices: usize,
}

impl StencilConfig {
    /// Region A as the intersection of the given half-spaces.
    pub fn from_halfspaces(kind: Family, halfspaces: Vec<HalfSpace>) -> Self {
        Self {
            kind,
            halfspaces,
            ellipsoid: None,
            complement: false,
            raw_params: Vec::new(),
            ellipsoid_vertices: ELLIPSOID_VERTICES,
        }
    }

    pub fn from_ellipsoid(e: Ellipsoid) -> Self {
        Self {
            kind: Family::Ellipsoid,
            halfspaces: Vec::new(),
            ellipsoid: Some(e),
            complement: false,
            raw_params: Vec::new(),
            ellipsoid_vertices: ELLIPSOID_VERTICES,
        }
    }

    /// Exact membership in region A; the ellipsoid is tested analytically,
    /// not through its polytope.
    pub fn contains(&self, p: &Vec3) -> bool {
        let inside = match &self.ellipsoid {
            Some(e) => e.contains(p),
            None => self.halfspaces.iter().all(|h| h.contains(p)),
        };
        inside != self.complement
    }

    /// The same geometry with fluids A and B exchanged.
    pub fn complemented(&self) -> Self {
        let mut c = self.clone();
        c.complement = !c.complement;
        c
    }

    /// Image of the configuration under a lattice map.
    pub fn mapped(&self, m: &LatticeMap) -> Self {
        let q = m.matrix();
        let mut c = self.clone();
        c.halfspaces = self.halfspaces.iter().map(|h| h.transformed(&q)).collect();
        c.ellipsoid = self.ellipsoid.map(|e| e.transformed(&q));
        c
    }

    /// Integrator for region A; holds the ellipsoid polytope so repeated
    /// box queries reuse it.
    pub fn integrator(&self) -> Result<RegionIntegrator<'_>, ConfigError> {
        let polytope = match &self.ellipsoid {
            Some(e) => Some((ellipsoid_polytope(e, self.ellipsoid_vertices)?, unit_hull(self.ellipsoid_vertices)?.inradius)),
            None => None,
        };
        Ok(RegionIntegrator { cfg: self, polytope })
    }
}

/// Computes volumes of region A inside axis-aligned boxes.
pub struct RegionIntegrator<'a> {
    cfg: &'a StencilConfig,
    polytope: Option<(ConvexPolytope, f64)>,
}

impl RegionIntegrator<'_> {
    /// `|A ∩ [lo, hi]|`.
    pub fn box_volume(&self, lo: &Vec3, hi: &Vec3) -> Result<f64, ConfigError> {
        let full = (hi - lo).product();
        let inside = match (&self.cfg.ellipsoid, &self.polytope) {
            (Some(e), Some((poly, inradius))) => {
                if e.box_min_norm(lo, hi) >= 1.0 {
                    0.0
                } else if e.box_max_norm(lo, hi) <= *inradius {
                    full
                } else {
                    clipped_volume(poly, &box_halfspaces(lo, hi))?
                }
            }
            _ => {
                let corners = (0..8).map(|k| {
                    Vec3::new(
                        if k & 1 == 0 { lo.x } else { hi.x },
                        if k & 2 == 0 { lo.y } else { hi.y },
                        if k & 4 == 0 { lo.z } else { hi.z },
                    )
                });
                let hs = &self.cfg.halfspaces;
                if corners.clone().all(|p| hs.iter().all(|h| h.signed_distance(&p) <= 0.0)) {
                    full
                } else if hs.iter().any(|h| corners.clone().all(|p| h.signed_distance(&p) >= 0.0)) {
                    0.0
                } else {
                    clipped_volume(&axis_box(*lo, *hi), hs)?
                }
            }
        };
        let inside = inside.clamp(0.0, full);
        Ok(if self.cfg.complement { full - inside } else { inside })
    }

    /// Fraction of the unit cell centered at `offset`.
    pub fn cell_fraction(&self, offset: [i32; 3]) -> Result<f64, ConfigError> {
        let c = Vec3::new(offset[0] as f64, offset[1] as f64, offset[2] as f64);
        let h = Vec3::repeat(0.5);
        Ok(self.box_volume(&(c - h), &(c + h))?.clamp(0.0, 1.0))
    }

    pub fn fractions(&self) -> Result<StencilFractions, ConfigError> {
        let mut v = [0.0; STENCIL_LEN];
        for (n, x) in v.iter_mut().enumerate() {
            *x = self.cell_fraction(stencil_offset(n))?;
        }
        Ok(StencilFractions(v))
    }

    /// Mean A-fraction of the slab `(0.5 − β, 0.5) × (−0.5, 0.5)²` swept
    /// through the central cell's +x face.
    pub fn flux(&self, beta: f64) -> Result<f64, ConfigError> {
        if beta < 1e-12 {
            return self.cell_fraction([0, 0, 0]);
        }
        let lo = Vec3::new(0.5 - beta, -0.5, -0.5);
        let hi = Vec3::repeat(0.5);
        Ok((self.box_volume(&lo, &hi)? / (hi.x - lo.x)).clamp(0.0, 1.0))
    }
}

/// Clips `poly` by each half-space; a degenerate cut resolves to empty or
/// unchanged by the side of the current vertex centroid.
fn clipped_volume(poly: &ConvexPolytope, hs: &[HalfSpace]) -> Result<f64, GeometryError> {
    let mut cur = std::borrow::Cow::Borrowed(poly);
    for h in hs {
        match cur.clip(h) {
            Ok(Some(p)) => cur = std::borrow::Cow::Owned(p),
            Ok(None) => return Ok(0.0),
            Err(GeometryError::DegenerateClip) => {
                if h.signed_distance(&cur.vertex_centroid()) > 0.0 {
                    return Ok(0.0);
                }
            }
            Err(e) => return Err(e),
        }
    }
    Ok(cur.volume())
}

pub fn stencil_fractions(cfg: &StencilConfig) -> Result<StencilFractions, ConfigError> {
    cfg.integrator()?.fractions()
}

pub fn exact_flux(cfg: &StencilConfig, beta: f64) -> Result<f64, ConfigError> {
    cfg.integrator()?.flux(beta)
}

/// Image under the augmentation map `σ ∈ 0..6` (see
/// [`crate::symmetry::augmentation_maps`]).
pub fn transform(cfg: &StencilConfig, sigma: usize) -> StencilConfig {
    cfg.mapped(&augmentation_maps()[sigma])
}

fn check_params(family: Family, theta: &[f64]) -> Result<(), ConfigError> {
    let bounds = family.parameter_box();
    if theta.len() != bounds.len() {
        return Err(ConfigError::InvalidParams(format!(
            "{family} expects {} parameters, got {}",
            bounds.len(),
            theta.len()
        )));
    }
    for (i, (&t, &(lo, hi))) in theta.iter().zip(&bounds).enumerate() {
        if !(lo - 1e-12..=hi + 1e-12).contains(&t) {
            return Err(ConfigError::InvalidParams(format!(
                "{family} parameter {i} = {t} outside [{lo}, {hi}]"
            )));
        }
    }
    Ok(())
}

/// Rejects configurations without both fluids in the central cell.
fn ensure_mixed(cfg: StencilConfig) -> Result<StencilConfig, ConfigError> {
    let c = cfg.integrator()?.cell_fraction([0, 0, 0])?;
    if c <= REJECT_TOL || c >= 1.0 - REJECT_TOL {
        return Err(ConfigError::RejectedConfig(format!(
            "{} central fraction {c}",
            cfg.kind
        )));
    }
    Ok(cfg)
}

fn one_plane_halfspace(t1: f64, t2: f64, t3: f64) -> Result<HalfSpace, ConfigError> {
    let n = archimedes_point(t1, t2);
    let d = t3 * n.lp_norm(1) / 2.0;
    Ok(HalfSpace::new(n, d)?)
}

/// Half-space whose plane cuts the central cell, containing its center.
pub fn sample_one_plane(theta: &[f64]) -> Result<StencilConfig, ConfigError> {
    check_params(Family::OnePlane, theta)?;
    let h = one_plane_halfspace(theta[0], theta[1], theta[2])?;
    let mut cfg = StencilConfig::from_halfspaces(Family::OnePlane, vec![h]);
    cfg.raw_params = theta.to_vec();
    ensure_mixed(cfg)
}

/// Largest `r ≥ 0` such that the line `{ r·dir + s·line : s ∈ ℝ }` still
/// meets the closed central cube.
pub fn max_line_shift(dir: &Vec3, line: &Vec3) -> f64 {
    const ZERO: f64 = 1e-12;
    let mut r_max = f64::INFINITY;
    // Along axis i with line[i] ≠ 0 the admissible s form an interval centered
    // at −r·dir[i]/line[i] with half-width 0.5/|line[i]|; pairwise overlap
    // suffices in 1D.
    for i in 0..3 {
        if line[i].abs() < ZERO {
            if dir[i].abs() > 0.0 {
                r_max = r_max.min(0.5 / dir[i].abs());
            }
            continue;
        }
        for j in (i + 1)..3 {
            if line[j].abs() < ZERO {
                continue;
            }
            let coef = (dir[i] / line[i] - dir[j] / line[j]).abs();
            let width = 0.5 / line[i].abs() + 0.5 / line[j].abs();
            if coef > 0.0 {
                r_max = r_max.min(width / coef);
            }
        }
    }
    r_max
}

fn two_plane_halfspaces(theta: &[f64]) -> Result<[HalfSpace; 2], ConfigError> {
    let r = rotation(theta[1], theta[2], theta[3]);
    let n1 = r.apply(&Vec3::z());
    let n2 = r.apply(&Vec3::new(-theta[0].sin(), 0.0, theta[0].cos()));
    let line = r.apply(&Vec3::y());
    let dir = r.apply(&Vec3::x()) * theta[4].cos() + r.apply(&Vec3::z()) * theta[4].sin();
    let t = dir * (theta[5] * max_line_shift(&dir, &line));
    Ok([HalfSpace::through(n1, t)?, HalfSpace::through(n2, t)?])
}

/// Wedge bounded by two planes whose intersection line crosses the central cell.
pub fn sample_two_planes(theta: &[f64]) -> Result<StencilConfig, ConfigError> {
    check_params(Family::TwoPlanes, theta)?;
    let hs = two_plane_halfspaces(theta)?;
    let mut cfg = StencilConfig::from_halfspaces(Family::TwoPlanes, hs.to_vec());
    cfg.raw_params = theta.to_vec();
    ensure_mixed(cfg)
}

/// Two-plane wedge cut by a third plane; the third half-space is replaced by
/// its complement when it misses the wedge inside the central cell.
pub fn sample_three_planes(theta: &[f64]) -> Result<StencilConfig, ConfigError> {
    check_params(Family::ThreePlanes, theta)?;
    let [h1, h2] = two_plane_halfspaces(&theta[..6])?;
    let h3 = one_plane_halfspace(theta[6], theta[7], theta[8])?;
    let mut cfg = StencilConfig::from_halfspaces(Family::ThreePlanes, vec![h1, h2, h3]);
    cfg.raw_params = theta.to_vec();
    if cfg.integrator()?.cell_fraction([0, 0, 0])? <= REJECT_TOL {
        cfg.halfspaces[2] = h3.flipped();
    }
    ensure_mixed(cfg)
}

/// Scale bracket `[s_min, s_max]` for semi-axes `s·dirs` around `center`:
/// at `s_min` the surface first reaches the central cell's boundary, at
/// `s_max` the cell is just contained.
pub fn ellipsoid_scale_bracket(center: &Vec3, dirs: &Vec3) -> Result<(f64, f64), ConfigError> {
    let lo = Vec3::repeat(-0.5);
    let hi = Vec3::repeat(0.5);
    let unit = Ellipsoid::new(*center, *dirs)?;
    let s_max = unit.box_max_norm(&lo, &hi);
    let inside_cell = center.iter().all(|c| c.abs() < 0.5);
    let s_min = if inside_cell {
        (0..3)
            .map(|i| (0.5 - center[i].abs()) / dirs[i])
            .fold(f64::INFINITY, f64::min)
    } else {
        unit.box_min_norm(&lo, &hi)
    };
    if !(s_max > s_min) || !s_min.is_finite() {
        return Err(ConfigError::RejectedConfig(format!(
            "ellipsoid scale bracket [{s_min}, {s_max}] is empty"
        )));
    }
    Ok((s_min, s_max))
}

/// Axis-aligned ellipsoid interpolating between touching and containing the
/// central cell.
pub fn sample_ellipsoid(theta: &[f64]) -> Result<StencilConfig, ConfigError> {
    check_params(Family::Ellipsoid, theta)?;
    let center = Vec3::new(theta[0], theta[1], theta[2]);
    let dirs = archimedes_point(theta[3], theta[4]).map(|a| a.abs().max(AXIS_FLOOR));
    let (s_min, s_max) = ellipsoid_scale_bracket(&center, &dirs)?;
    let s = s_min + theta[5] * (s_max - s_min);
    let e = Ellipsoid::new(center, dirs * s)?;
    let mut cfg = StencilConfig::from_ellipsoid(e);
    cfg.raw_params = theta.to_vec();
    ensure_mixed(cfg)
}

pub fn sample(family: Family, theta: &[f64]) -> Result<StencilConfig, ConfigError> {
    match family {
        Family::OnePlane => sample_one_plane(theta),
        Family::TwoPlanes => sample_two_planes(theta),
        Family::ThreePlanes => sample_three_planes(theta),
        Family::Ellipsoid => sample_ellipsoid(theta),
    }
}
