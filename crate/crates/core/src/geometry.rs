//! Exact convex geometry on the normalized stencil.
//!
//! Polytopes are stored as a vertex list plus outward-oriented face cycles.
//! Clipping by a half-space works face by face and closes the cut with a
//! single cap polygon; volumes come from the divergence theorem over fan
//! triangulations of the faces.

use std::collections::HashMap;
use std::f64::consts::PI;
use std::sync::{Arc, Mutex, OnceLock};

use nalgebra::{Matrix3, Vector3};
use thiserror::Error;

pub type Vec3 = Vector3<f64>;

/// Distances to a cutting plane below this are snapped to zero.
pub const PLANE_EPS: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("degenerate clip: cap polygon thinner than {PLANE_EPS}")]
    DegenerateClip,
    #[error("convex hull construction failed: {0}")]
    HullFailure(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

/// Open half-space `{ p : normal·p − offset < 0 }` with a unit normal.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HalfSpace {
    normal: Vec3,
    offset: f64,
}

impl HalfSpace {
    /// Normalizes `normal`; `offset` is rescaled so the plane is unchanged.
    pub fn new(normal: Vec3, offset: f64) -> Result<Self, GeometryError> {
        let len = normal.norm();
        if !(len > 1e-300) || !len.is_finite() || !offset.is_finite() {
            return Err(GeometryError::InvalidArgument(format!(
                "half-space normal {normal:?} / offset {offset}"
            )));
        }
        Ok(Self {
            normal: normal / len,
            offset: offset / len,
        })
    }

    /// Plane through `point` with the region on the side opposite `normal`.
    pub fn through(normal: Vec3, point: Vec3) -> Result<Self, GeometryError> {
        Self::new(normal, normal.dot(&point))
    }

    pub fn normal(&self) -> Vec3 {
        self.normal
    }

    pub fn offset(&self) -> f64 {
        self.offset
    }

    pub fn signed_distance(&self, p: &Vec3) -> f64 {
        self.normal.dot(p) - self.offset
    }

    pub fn contains(&self, p: &Vec3) -> bool {
        self.signed_distance(p) < 0.0
    }

    /// The complementary half-space through the same plane.
    pub fn flipped(&self) -> Self {
        Self {
            normal: -self.normal,
            offset: -self.offset,
        }
    }

    /// Image under the orthogonal map `q`.
    pub fn transformed(&self, q: &Matrix3<f64>) -> Self {
        Self {
            normal: q * self.normal,
            offset: self.offset,
        }
    }
}

/// Bounded convex region stored as vertices and outward face cycles.
///
/// Faces are kept in a flat index buffer (`face_start[f]..face_start[f+1]`)
/// since ellipsoid approximations carry tens of thousands of faces.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvexPolytope {
    vertices: Vec<Vec3>,
    face_start: Vec<usize>,
    face_index: Vec<usize>,
}

impl ConvexPolytope {
    pub fn from_faces(vertices: Vec<Vec3>, faces: &[Vec<usize>]) -> Self {
        let mut face_start = Vec::with_capacity(faces.len() + 1);
        let mut face_index = Vec::new();
        face_start.push(0);
        for f in faces {
            face_index.extend_from_slice(f);
            face_start.push(face_index.len());
        }
        Self {
            vertices,
            face_start,
            face_index,
        }
    }

    pub fn vertices(&self) -> &[Vec3] {
        &self.vertices
    }

    pub fn num_faces(&self) -> usize {
        self.face_start.len() - 1
    }

    pub fn face(&self, f: usize) -> &[usize] {
        &self.face_index[self.face_start[f]..self.face_start[f + 1]]
    }

    pub fn faces(&self) -> impl Iterator<Item = &[usize]> + '_ {
        (0..self.num_faces()).map(move |f| self.face(f))
    }

    /// Mean of the vertex positions.
    pub fn vertex_centroid(&self) -> Vec3 {
        let sum = self.vertices.iter().fold(Vec3::zeros(), |a, v| a + v);
        sum / self.vertices.len().max(1) as f64
    }

    /// Applies `p ↦ m·p + t` to every vertex. Orientation-reversing maps flip
    /// the face cycles so they stay outward.
    pub fn mapped(&self, m: &Matrix3<f64>, t: &Vec3) -> Self {
        let vertices = self.vertices.iter().map(|v| m * v + t).collect();
        let mut out = Self {
            vertices,
            face_start: self.face_start.clone(),
            face_index: self.face_index.clone(),
        };
        if m.determinant() < 0.0 {
            for f in 0..out.num_faces() {
                out.face_index[out.face_start[f]..out.face_start[f + 1]].reverse();
            }
        }
        out
    }

    /// Checks closedness, planarity and convexity within `tol`.
    pub fn validate(&self, tol: f64) -> Result<(), String> {
        let mut edges: HashMap<(usize, usize), i32> = HashMap::new();
        for (fi, f) in self.faces().enumerate() {
            if f.len() < 3 {
                return Err(format!("face {fi} has {} vertices", f.len()));
            }
            for k in 0..f.len() {
                let (a, b) = (f[k], f[(k + 1) % f.len()]);
                *edges.entry((a, b)).or_default() += 1;
            }
            let n = polygon_normal(&self.vertices, f);
            let len = n.norm();
            if len < tol {
                continue;
            }
            let n = n / len;
            let p0 = self.vertices[f[0]];
            for &v in f {
                if n.dot(&(self.vertices[v] - p0)).abs() > tol {
                    return Err(format!("face {fi} is not planar"));
                }
            }
            for v in &self.vertices {
                if n.dot(&(v - p0)) > tol {
                    return Err(format!("vertex lies outside face {fi}"));
                }
            }
        }
        for (&(a, b), &count) in &edges {
            let back = edges.get(&(b, a)).copied().unwrap_or(0);
            if count != 1 || back != 1 {
                return Err(format!("edge ({a},{b}) is not shared by exactly two faces"));
            }
        }
        Ok(())
    }

    /// Intersection with the closed half-space `{ normal·p − offset ≤ 0 }`.
    /// `Ok(None)` means the result has zero volume.
    pub fn clip(&self, h: &HalfSpace) -> Result<Option<ConvexPolytope>, GeometryError> {
        let dist: Vec<f64> = self
            .vertices
            .iter()
            .map(|v| {
                let d = h.signed_distance(v);
                if d.abs() < PLANE_EPS {
                    0.0
                } else {
                    d
                }
            })
            .collect();
        if dist.iter().all(|&d| d <= 0.0) {
            return Ok(Some(self.clone()));
        }
        if dist.iter().all(|&d| d >= 0.0) {
            return Ok(None);
        }

        let mut vertices: Vec<Vec3> = Vec::new();
        let mut remap = vec![usize::MAX; self.vertices.len()];
        let mut cap: Vec<usize> = Vec::new();
        for (i, &d) in dist.iter().enumerate() {
            if d <= 0.0 {
                remap[i] = vertices.len();
                if d == 0.0 {
                    cap.push(vertices.len());
                }
                vertices.push(self.vertices[i]);
            }
        }

        let mut cuts: HashMap<(usize, usize), usize> = HashMap::new();
        let mut face_start = vec![0];
        let mut face_index = Vec::with_capacity(self.face_index.len());
        let mut poly: Vec<usize> = Vec::with_capacity(16);
        for f in self.faces() {
            let (mut any_neg, mut any_pos) = (false, false);
            for &v in f {
                any_neg |= dist[v] < 0.0;
                any_pos |= dist[v] > 0.0;
            }
            if !any_neg {
                // entirely outside, or lying in the cutting plane (replaced by the cap)
                continue;
            }
            if !any_pos {
                face_index.extend(f.iter().map(|&v| remap[v]));
                face_start.push(face_index.len());
                continue;
            }
            poly.clear();
            for k in 0..f.len() {
                let (a, b) = (f[k], f[(k + 1) % f.len()]);
                let (da, db) = (dist[a], dist[b]);
                if da <= 0.0 {
                    poly.push(remap[a]);
                }
                if (da < 0.0 && db > 0.0) || (da > 0.0 && db < 0.0) {
                    let key = (a.min(b), a.max(b));
                    let idx = *cuts.entry(key).or_insert_with(|| {
                        let (pa, pb) = (self.vertices[a], self.vertices[b]);
                        let s = dist[a] / (dist[a] - dist[b]);
                        vertices.push(pa + (pb - pa) * s);
                        cap.push(vertices.len() - 1);
                        vertices.len() - 1
                    });
                    poly.push(idx);
                }
            }
            poly.dedup();
            if poly.len() > 1 && poly.first() == poly.last() {
                poly.pop();
            }
            if poly.len() >= 3 {
                face_index.extend_from_slice(&poly);
                face_start.push(face_index.len());
            }
        }

        let cap = order_cap(&vertices, cap, &h.normal)?;
        face_index.extend_from_slice(&cap);
        face_start.push(face_index.len());

        let out = ConvexPolytope {
            vertices,
            face_start,
            face_index,
        }
        .compacted();
        if out.volume() <= 0.0 {
            return Ok(None);
        }
        Ok(Some(out))
    }

    /// Successive clips; stops early once empty.
    pub fn clip_all(&self, hs: &[HalfSpace]) -> Result<Option<ConvexPolytope>, GeometryError> {
        let mut cur = self.clone();
        for h in hs {
            match cur.clip(h)? {
                Some(p) => cur = p,
                None => return Ok(None),
            }
        }
        Ok(Some(cur))
    }

    /// Volume by the divergence theorem over fan-triangulated faces.
    pub fn volume(&self) -> f64 {
        if self.vertices.is_empty() {
            return 0.0;
        }
        let origin = self.vertices[0];
        let mut six_vol = 0.0;
        for f in self.faces() {
            let v0 = self.vertices[f[0]] - origin;
            for k in 1..f.len().saturating_sub(1) {
                let v1 = self.vertices[f[k]] - origin;
                let v2 = self.vertices[f[k + 1]] - origin;
                six_vol += v0.dot(&v1.cross(&v2));
            }
        }
        (six_vol / 6.0).max(0.0)
    }

    fn compacted(self) -> Self {
        let mut used = vec![usize::MAX; self.vertices.len()];
        let mut vertices = Vec::with_capacity(self.vertices.len());
        let mut face_index = self.face_index;
        for v in face_index.iter_mut() {
            if used[*v] == usize::MAX {
                used[*v] = vertices.len();
                vertices.push(self.vertices[*v]);
            }
            *v = used[*v];
        }
        Self {
            vertices,
            face_start: self.face_start,
            face_index,
        }
    }
}

/// Volume of an optional clip result.
pub fn volume(poly: Option<&ConvexPolytope>) -> f64 {
    poly.map_or(0.0, ConvexPolytope::volume)
}

fn polygon_normal(vertices: &[Vec3], f: &[usize]) -> Vec3 {
    let mut n = Vec3::zeros();
    let p0 = vertices[f[0]];
    for k in 1..f.len().saturating_sub(1) {
        n += (vertices[f[k]] - p0).cross(&(vertices[f[k + 1]] - p0));
    }
    n
}

/// Sorts the planar cross-section points counter-clockwise about `normal`.
fn order_cap(
    vertices: &[Vec3],
    mut cap: Vec<usize>,
    normal: &Vec3,
) -> Result<Vec<usize>, GeometryError> {
    if cap.len() < 3 {
        return Err(GeometryError::DegenerateClip);
    }
    let centroid = cap.iter().fold(Vec3::zeros(), |a, &i| a + vertices[i]) / cap.len() as f64;
    let helper = if normal.x.abs() < 0.9 {
        Vec3::x()
    } else {
        Vec3::y()
    };
    let u = normal.cross(&helper).normalize();
    let w = normal.cross(&u);
    let mut keyed: Vec<(f64, usize)> = cap
        .drain(..)
        .map(|i| {
            let d = vertices[i] - centroid;
            (d.dot(&w).atan2(d.dot(&u)), i)
        })
        .collect();
    keyed.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut out: Vec<usize> = Vec::with_capacity(keyed.len());
    for (_, i) in keyed {
        if let Some(&last) = out.last() {
            if (vertices[last] - vertices[i]).norm() < PLANE_EPS {
                continue;
            }
        }
        out.push(i);
    }
    while out.len() > 1 && (vertices[out[0]] - vertices[*out.last().unwrap()]).norm() < PLANE_EPS {
        out.pop();
    }
    if out.len() < 3 || polygon_normal(vertices, &out).norm() < PLANE_EPS * PLANE_EPS {
        return Err(GeometryError::DegenerateClip);
    }
    Ok(out)
}

/// Axis-aligned box `[lo, hi]` as a polytope.
pub fn axis_box(lo: Vec3, hi: Vec3) -> ConvexPolytope {
    let v = |i: usize| {
        Vec3::new(
            if i & 1 == 0 { lo.x } else { hi.x },
            if i & 2 == 0 { lo.y } else { hi.y },
            if i & 4 == 0 { lo.z } else { hi.z },
        )
    };
    let vertices = (0..8).map(v).collect();
    // outward, counter-clockwise seen from outside
    let faces = [
        vec![0, 4, 6, 2], // -x
        vec![1, 3, 7, 5], // +x
        vec![0, 1, 5, 4], // -y
        vec![2, 6, 7, 3], // +y
        vec![0, 2, 3, 1], // -z
        vec![4, 5, 7, 6], // +z
    ];
    ConvexPolytope::from_faces(vertices, &faces)
}

/// Cube of side `edge` centered at `center`.
pub fn unit_cube(center: Vec3, edge: f64) -> ConvexPolytope {
    let h = Vec3::repeat(0.5 * edge);
    axis_box(center - h, center + h)
}

/// The six half-spaces whose intersection is the box `[lo, hi]`.
pub fn box_halfspaces(lo: &Vec3, hi: &Vec3) -> [HalfSpace; 6] {
    let hs = |n: Vec3, o: f64| HalfSpace { normal: n, offset: o };
    [
        hs(-Vec3::x(), -lo.x),
        hs(Vec3::x(), hi.x),
        hs(-Vec3::y(), -lo.y),
        hs(Vec3::y(), hi.y),
        hs(-Vec3::z(), -lo.z),
        hs(Vec3::z(), hi.z),
    ]
}

/// Quasi-uniform points on the unit sphere along the golden-ratio spiral.
pub fn fibonacci_sphere(n: usize) -> Vec<Vec3> {
    let golden = (5f64.sqrt() + 1.0) / 2.0;
    (0..n)
        .map(|i| {
            let phi = 2.0 * PI * i as f64 / golden;
            let theta = (1.0 - (2 * i + 1) as f64 / n as f64).acos();
            Vec3::new(phi.cos() * theta.sin(), phi.sin() * theta.sin(), theta.cos())
        })
        .collect()
}

/// Area-preserving cylinder-to-sphere projection: `t1` is the azimuth,
/// `t2 ∈ [−1, 1]` the height.
pub fn archimedes_point(t1: f64, t2: f64) -> Vec3 {
    let r = (1.0 - t2 * t2).max(0.0).sqrt();
    Vec3::new(r * t1.cos(), r * t1.sin(), t2)
}

/// Proper rotation, orthogonal with unit determinant.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RotationMatrix(Matrix3<f64>);

impl RotationMatrix {
    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.0
    }

    pub fn apply(&self, p: &Vec3) -> Vec3 {
        self.0 * p
    }

    pub fn inverse_apply(&self, p: &Vec3) -> Vec3 {
        self.0.transpose() * p
    }
}

pub fn rotation_x(t: f64) -> Matrix3<f64> {
    let (s, c) = t.sin_cos();
    Matrix3::new(1.0, 0.0, 0.0, 0.0, c, -s, 0.0, s, c)
}

pub fn rotation_y(t: f64) -> Matrix3<f64> {
    let (s, c) = t.sin_cos();
    Matrix3::new(c, 0.0, s, 0.0, 1.0, 0.0, -s, 0.0, c)
}

pub fn rotation_z(t: f64) -> Matrix3<f64> {
    let (s, c) = t.sin_cos();
    Matrix3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0)
}

/// `R = R_x(tx)·R_y(ty)·R_z(tz)`.
pub fn rotation(tx: f64, ty: f64, tz: f64) -> RotationMatrix {
    RotationMatrix(rotation_x(tx) * rotation_y(ty) * rotation_z(tz))
}

/// Axis-aligned ellipsoid in a signed-permutation frame:
/// `{ p : |diag(1/semi_axes)·frameᵀ·(p − center)| < 1 }`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ellipsoid {
    pub center: Vec3,
    pub semi_axes: Vec3,
    pub frame: Matrix3<f64>,
}

impl Ellipsoid {
    pub fn new(center: Vec3, semi_axes: Vec3) -> Result<Self, GeometryError> {
        if semi_axes.iter().any(|&a| !(a > 1e-8) || !a.is_finite()) {
            return Err(GeometryError::InvalidArgument(format!(
                "semi-axes {semi_axes:?} must exceed 1e-8"
            )));
        }
        Ok(Self {
            center,
            semi_axes,
            frame: Matrix3::identity(),
        })
    }

    /// Coordinates in which the ellipsoid is the unit ball.
    pub fn local(&self, p: &Vec3) -> Vec3 {
        (self.frame.transpose() * (p - self.center)).component_div(&self.semi_axes)
    }

    /// `s(p)`: negative inside, zero on the surface.
    pub fn level(&self, p: &Vec3) -> f64 {
        self.local(p).norm_squared() - 1.0
    }

    pub fn contains(&self, p: &Vec3) -> bool {
        self.level(p) < 0.0
    }

    /// Image under the orthogonal (signed permutation) map `q`.
    pub fn transformed(&self, q: &Matrix3<f64>) -> Self {
        Self {
            center: q * self.center,
            semi_axes: self.semi_axes,
            frame: q * self.frame,
        }
    }

    /// Local-coordinate image of the box `[lo, hi]`; requires a
    /// signed-permutation frame so the image stays axis-aligned.
    fn local_box(&self, lo: &Vec3, hi: &Vec3) -> (Vec3, Vec3) {
        let a = self.local(lo);
        let b = self.local(hi);
        (a.inf(&b), a.sup(&b))
    }

    /// Smallest local-norm of a point in the box `[lo, hi]`.
    pub fn box_min_norm(&self, lo: &Vec3, hi: &Vec3) -> f64 {
        let (a, b) = self.local_box(lo, hi);
        Vec3::from_fn(|i, _| 0f64.clamp(a[i], b[i])).norm()
    }

    /// Largest local-norm over the box corners.
    pub fn box_max_norm(&self, lo: &Vec3, hi: &Vec3) -> f64 {
        let (a, b) = self.local_box(lo, hi);
        Vec3::from_fn(|i, _| a[i].abs().max(b[i].abs())).norm()
    }
}

/// Triangulated hull of the Fibonacci sphere, shared by every ellipsoid with
/// the same point count.
#[derive(Debug)]
pub struct UnitHull {
    pub polytope: ConvexPolytope,
    /// Distance from the origin to the nearest face plane: the hull contains
    /// the ball of this radius.
    pub inradius: f64,
}

pub fn unit_hull(n: usize) -> Result<Arc<UnitHull>, GeometryError> {
    static CACHE: OnceLock<Mutex<HashMap<usize, Arc<UnitHull>>>> = OnceLock::new();
    let cache = CACHE.get_or_init(Default::default);
    if let Some(h) = cache.lock().unwrap().get(&n) {
        return Ok(h.clone());
    }
    let hull = Arc::new(build_unit_hull(n)?);
    cache.lock().unwrap().insert(n, hull.clone());
    Ok(hull)
}

fn build_unit_hull(n: usize) -> Result<UnitHull, GeometryError> {
    if n < 4 {
        return Err(GeometryError::HullFailure(format!("need at least 4 points, got {n}")));
    }
    let pts: Vec<Vec<f64>> = fibonacci_sphere(n)
        .iter()
        .map(|p| vec![p.x, p.y, p.z])
        .collect();
    let hull = chull::ConvexHull::try_new(&pts, PLANE_EPS, None)
        .map_err(|e| GeometryError::HullFailure(format!("{e:?}")))?;
    let (verts, idx) = hull.vertices_indices();
    let vertices: Vec<Vec3> = verts.iter().map(|v| Vec3::new(v[0], v[1], v[2])).collect();
    let mut faces = Vec::with_capacity(idx.len() / 3);
    let mut inradius = f64::INFINITY;
    for t in idx.chunks_exact(3) {
        let (a, b, c) = (vertices[t[0]], vertices[t[1]], vertices[t[2]]);
        let n = (b - a).cross(&(c - a));
        let len = n.norm();
        if len == 0.0 {
            return Err(GeometryError::HullFailure("zero-area hull facet".into()));
        }
        let dist = n.dot(&a) / len;
        if dist > 0.0 {
            faces.push(vec![t[0], t[1], t[2]]);
        } else {
            faces.push(vec![t[0], t[2], t[1]]);
        }
        inradius = inradius.min(dist.abs());
    }
    // the hull builder iterates hash containers, so fix a canonical vertex
    // and face order to keep volumes bitwise reproducible across runs
    let mut order: Vec<usize> = (0..vertices.len()).collect();
    order.sort_by(|&i, &j| {
        let (p, q) = (vertices[i], vertices[j]);
        p.x.total_cmp(&q.x).then(p.y.total_cmp(&q.y)).then(p.z.total_cmp(&q.z))
    });
    let mut rank = vec![0; vertices.len()];
    for (r, &i) in order.iter().enumerate() {
        rank[i] = r;
    }
    let vertices: Vec<Vec3> = order.iter().map(|&i| vertices[i]).collect();
    for f in &mut faces {
        f.iter_mut().for_each(|i| *i = rank[*i]);
        let m = (0..f.len()).min_by_key(|&k| f[k]).unwrap();
        f.rotate_left(m);
    }
    faces.sort();
    Ok(UnitHull {
        polytope: ConvexPolytope::from_faces(vertices, &faces),
        inradius,
    })
}

/// Inscribed polytope with `n` vertices: the Fibonacci-sphere hull mapped by
/// `p ↦ center + frame·diag(semi_axes)·p`.
pub fn ellipsoid_polytope(e: &Ellipsoid, n: usize) -> Result<ConvexPolytope, GeometryError> {
    let hull = unit_hull(n)?;
    let m = e.frame * Matrix3::from_diagonal(&e.semi_axes);
    Ok(hull.polytope.mapped(&m, &e.center))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn origin_cube() -> ConvexPolytope {
        unit_cube(Vec3::zeros(), 1.0)
    }

    #[test]
    fn unit_cube_vertices_and_volume() {
        let c = origin_cube();
        assert_eq!(c.vertices().len(), 8);
        assert_eq!(c.num_faces(), 6);
        for v in c.vertices() {
            assert!(v.iter().all(|x| (x.abs() - 0.5).abs() < 1e-15));
        }
        assert_eq!(c.volume(), 1.0);
        assert_eq!(unit_cube(Vec3::zeros(), 2.0).volume(), 8.0);
        let shifted = unit_cube(Vec3::new(1.0, 0.0, 0.0), 1.0);
        assert!(shifted.vertices().iter().all(|v| v.x == 0.5 || v.x == 1.5));
        c.validate(1e-9).unwrap();
    }

    #[test]
    fn clip_examples() {
        let c = origin_cube();
        let half = c.clip(&HalfSpace::new(Vec3::x(), 0.0).unwrap()).unwrap().unwrap();
        assert!((half.volume() - 0.5).abs() < 1e-15);
        half.validate(1e-9).unwrap();
        assert!(half.vertices().iter().all(|v| v.x <= 0.0));

        let same = c.clip(&HalfSpace::new(Vec3::x(), 2.0).unwrap()).unwrap().unwrap();
        assert_eq!(same, c);

        let diag = HalfSpace::new(Vec3::new(1.0, 1.0, 1.0), 0.0).unwrap();
        let cut = c.clip(&diag).unwrap().unwrap();
        assert!((cut.volume() - 0.5).abs() < 1e-14);
        cut.validate(1e-9).unwrap();

        assert!(c.clip(&HalfSpace::new(Vec3::x(), -0.5).unwrap()).unwrap().is_none());
        assert!(c.clip(&HalfSpace::new(Vec3::x(), -0.7).unwrap()).unwrap().is_none());
    }

    #[test]
    fn clip_through_vertices_and_faces() {
        let c = origin_cube();
        // plane through two opposite edges: x + y = 0
        let p = c.clip(&HalfSpace::new(Vec3::new(1.0, 1.0, 0.0), 0.0).unwrap()).unwrap().unwrap();
        assert!((p.volume() - 0.5).abs() < 1e-15);
        p.validate(1e-9).unwrap();
        // plane containing a face keeps the cube
        let p = c.clip(&HalfSpace::new(Vec3::x(), 0.5).unwrap()).unwrap().unwrap();
        assert!((p.volume() - 1.0).abs() < 1e-15);
        // corner tetrahedron: x + y + z < -1 cuts off volume 1/6
        let p = c
            .clip(&HalfSpace::new(Vec3::new(1.0, 1.0, 1.0), -0.5).unwrap())
            .unwrap()
            .unwrap();
        assert!((p.volume() - 1.0 / 6.0).abs() < 1e-15);
        p.validate(1e-9).unwrap();
    }

    #[test]
    fn regular_tetrahedron_volume() {
        let s = 1.0 / (2.0 * 2f64.sqrt());
        let v = vec![
            Vec3::new(s, s, s),
            Vec3::new(s, -s, -s),
            Vec3::new(-s, s, -s),
            Vec3::new(-s, -s, s),
        ];
        // orient faces outward
        let mut faces = vec![];
        for (a, b, c, d) in [(0, 1, 2, 3), (0, 1, 3, 2), (0, 2, 3, 1), (1, 2, 3, 0)] {
            let n = (v[b] - v[a]).cross(&(v[c] - v[a]));
            if n.dot(&(v[d] - v[a])) < 0.0 {
                faces.push(vec![a, b, c]);
            } else {
                faces.push(vec![a, c, b]);
            }
        }
        let t = ConvexPolytope::from_faces(v, &faces);
        t.validate(1e-12).unwrap();
        assert!((t.volume() - 1.0 / (6.0 * 2f64.sqrt())).abs() < 1e-15);
    }

    fn random_halfspace(rng: &mut ChaCha8Rng) -> HalfSpace {
        let n = archimedes_point(rng.random_range(0.0..2.0 * PI), rng.random_range(-1.0..1.0));
        HalfSpace::new(n, rng.random_range(-0.4..0.4)).unwrap()
    }

    #[test]
    fn three_plane_clip_matches_monte_carlo() {
        // oracle: uniform samples in the cube, indicator of all half-spaces
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let hs: Vec<HalfSpace> = (0..3).map(|_| random_halfspace(&mut rng)).collect();
        let samples = 2_000_000;
        let mut hits = 0usize;
        for _ in 0..samples {
            let p = Vec3::new(
                rng.random::<f64>() - 0.5,
                rng.random::<f64>() - 0.5,
                rng.random::<f64>() - 0.5,
            );
            if hs.iter().all(|h| h.signed_distance(&p) <= 0.0) {
                hits += 1;
            }
        }
        let p = hits as f64 / samples as f64;
        let se = (p * (1.0 - p) / samples as f64).sqrt();
        let vol = volume(origin_cube().clip_all(&hs).unwrap().as_ref());
        assert!((vol - p).abs() < 4.0 * se + 1e-12, "vol {vol} mc {p} se {se}");
    }

    #[test]
    fn clip_invariants_random() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let cube = origin_cube();
        for _ in 0..200 {
            let hs: Vec<HalfSpace> = (0..2).map(|_| random_halfspace(&mut rng)).collect();
            let Some(p) = cube.clip_all(&hs).unwrap() else {
                continue;
            };
            p.validate(1e-9).unwrap();
            let h = random_halfspace(&mut rng);
            let a = volume(p.clip(&h).unwrap().as_ref());
            let b = volume(p.clip(&h.flipped()).unwrap().as_ref());
            assert!((a + b - p.volume()).abs() < 1e-10);
            if let Some(q) = p.clip(&h).unwrap() {
                let again = volume(q.clip(&h).unwrap().as_ref());
                assert!((again - q.volume()).abs() < 1e-12);
            }
            // rigid motion
            let r = rotation(rng.random(), rng.random(), rng.random());
            let t = Vec3::new(rng.random(), rng.random(), rng.random());
            let moved = p.mapped(r.matrix(), &t);
            assert!((moved.volume() - p.volume()).abs() <= 1e-10 * p.volume());
        }
    }

    #[test]
    fn fibonacci_points_are_unit() {
        let pts = fibonacci_sphere(1500);
        assert_eq!(pts.len(), 1500);
        assert!(pts.iter().all(|p| (p.norm() - 1.0).abs() < 1e-14));
        // first point near the north pole, last near the south pole
        assert!(pts[0].z > 0.99 && pts[1499].z < -0.99);
    }

    #[test]
    fn fibonacci_spacing_ratio() {
        let pts = fibonacci_sphere(10_000);
        let mut nearest = vec![f64::INFINITY; pts.len()];
        for i in 0..pts.len() {
            for j in (i + 1)..pts.len() {
                let d = (pts[i] - pts[j]).norm_squared();
                nearest[i] = nearest[i].min(d);
                nearest[j] = nearest[j].min(d);
            }
        }
        let max = nearest.iter().cloned().fold(0.0, f64::max).sqrt();
        let min = nearest.iter().cloned().fold(f64::INFINITY, f64::min).sqrt();
        assert!(max / min < 3.0, "ratio {}", max / min);
    }

    #[test]
    fn archimedes_examples() {
        let p = archimedes_point(0.0, 1.0);
        assert!((p - Vec3::z()).norm() < 1e-15);
        let p = archimedes_point(PI / 2.0, 0.0);
        assert!((p - Vec3::y()).norm() < 1e-15);
    }

    #[test]
    fn archimedes_low_discrepancy_mean() {
        // 1000 x 1000 midpoint lattice over (θ1, θ2)
        let n = 1000;
        let mut sum = Vec3::zeros();
        for i in 0..n {
            for j in 0..n {
                let t1 = 2.0 * PI * (i as f64 + 0.5) / n as f64;
                let t2 = -1.0 + 2.0 * (j as f64 + 0.5) / n as f64;
                sum += archimedes_point(t1, t2);
            }
        }
        let mean = sum / (n * n) as f64;
        assert!(mean.iter().all(|m| m.abs() < 3e-3), "{mean:?}");
    }

    #[test]
    fn rotation_examples() {
        assert_eq!(*rotation(0.0, 0.0, 0.0).matrix(), Matrix3::identity());
        let r = rotation(PI / 2.0, 0.0, 0.0);
        assert!((r.apply(&Vec3::y()) - Vec3::z()).norm() < 1e-15);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            let r = rotation(rng.random::<f64>() * 7.0, rng.random::<f64>() * 7.0, rng.random::<f64>() * 7.0);
            let m = r.matrix();
            assert!((m.transpose() * m - Matrix3::identity()).norm() < 1e-12);
            assert!((m.determinant() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn ellipsoid_polytope_volumes() {
        let sphere = Ellipsoid::new(Vec3::zeros(), Vec3::repeat(1.0)).unwrap();
        let p = ellipsoid_polytope(&sphere, 10_000).unwrap();
        let exact = 4.0 * PI / 3.0;
        assert!((p.volume() - exact).abs() / exact < 1e-3);
        let e = Ellipsoid::new(Vec3::new(0.1, -0.2, 0.3), Vec3::new(2.0, 1.0, 1.0)).unwrap();
        let q = ellipsoid_polytope(&e, 10_000).unwrap();
        assert!((q.volume() - 2.0 * exact).abs() / (2.0 * exact) < 1e-3);
        for v in q.vertices() {
            assert!(e.level(v).abs() < 1e-12);
        }
        assert!(unit_hull(10_000).unwrap().inradius > 0.999);
    }

    #[test]
    fn ellipsoid_polytope_is_valid() {
        let e = Ellipsoid::new(Vec3::zeros(), Vec3::new(0.3, 0.5, 0.7)).unwrap();
        ellipsoid_polytope(&e, 500).unwrap().validate(1e-9).unwrap();
        let flipped = e.transformed(&Matrix3::from_diagonal(&Vec3::new(-1.0, 1.0, 1.0)));
        let p = ellipsoid_polytope(&flipped, 500).unwrap();
        p.validate(1e-9).unwrap();
    }

    #[test]
    fn invalid_inputs() {
        assert!(HalfSpace::new(Vec3::zeros(), 0.0).is_err());
        assert!(Ellipsoid::new(Vec3::zeros(), Vec3::new(1.0, 0.0, 1.0)).is_err());
        assert!(matches!(unit_hull(3), Err(GeometryError::HullFailure(_))));
    }
}
