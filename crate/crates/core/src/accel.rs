//! Bounding volume hierarchies over triangle sets with closest-hit ray
//! queries, mirroring the traversal contract of a hardware ray-tracing
//! pipeline: strictly positive hit distances, optional front-face
//! culling, and deterministic lowest-index tie-breaking. A brute-force
//! scan with identical semantics serves as the testing oracle.

use crate::math::Vec3;
use crate::Error;

/// Maximum triangles per leaf.
const LEAF_MAX: usize = 4;
/// Hard depth bound (also the traversal stack size).
const MAX_DEPTH: usize = 64;
/// SAH bins per axis.
const SAH_BINS: usize = 16;
/// Determinant cutoff below which a ray is treated as parallel to the
/// triangle plane.
const DET_EPS: f64 = 1e-13;
/// Slack used when pruning nodes against the current best hit, and when
/// checking box containment in the validator.
const BOX_SLACK: f64 = 1e-9;

/// Arithmetic mode for the ray-triangle test. `Double` is the default;
/// `Single` runs the test in f32 to reproduce the rounding behavior of
/// hardware intersection units (small positive distances can collapse to
/// zero or negative and be discarded).
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    Double,
    Single,
}

impl Precision {
    /// The "+infinity" ray-length sentinel: the largest finite value of
    /// the arithmetic mode in use.
    #[inline]
    pub fn max_distance(self) -> f64 {
        match self {
            Precision::Double => f64::MAX,
            Precision::Single => f32::MAX as f64,
        }
    }
}

/// Which side of a triangle a ray hit. Front is the side its CCW normal
/// points toward.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Face {
    Front,
    Back,
}

/// A closest-hit result.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Hit {
    /// Distance from the ray origin to the intersection point (mm).
    pub t: f64,
    /// Index of the hit triangle in the caller's triangle list.
    pub tri: u32,
    pub face: Face,
    /// Barycentric coordinates of the hit point.
    pub u: f64,
    pub v: f64,
}

/// A closest-hit query. Hits are accepted when `t_min < t <= d_max`;
/// with `t_min = 0` this is the strictly-positive hit rule of the
/// hardware pipeline.
#[derive(Debug, Clone, Copy)]
pub struct RayQuery {
    pub origin: Vec3,
    /// Unit direction.
    pub dir: Vec3,
    /// Upper distance bound (inclusive). Use `precision.max_distance()`
    /// as the infinity sentinel.
    pub d_max: f64,
    /// Lower distance bound (exclusive), 0 by default.
    pub t_min: f64,
    /// Ignore hits on front faces.
    pub cull_front: bool,
    /// Ignore this triangle index entirely (self-intersection guard).
    pub exclude: Option<u32>,
    pub precision: Precision,
}

impl RayQuery {
    pub fn new(origin: Vec3, dir: Vec3, d_max: f64) -> Self {
        RayQuery {
            origin,
            dir,
            d_max,
            t_min: 0.0,
            cull_front: false,
            exclude: None,
            precision: Precision::Double,
        }
    }

    pub fn with_cull(mut self, cull: bool) -> Self {
        self.cull_front = cull;
        self
    }

    pub fn with_precision(mut self, p: Precision) -> Self {
        self.precision = p;
        self
    }
}

/// An axis-aligned bounding box. An empty box has `min > max`.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Aabb {
    pub min: Vec3,
    pub max: Vec3,
}

impl Aabb {
    pub const EMPTY: Aabb =
        Aabb { min: Vec3::splat(f64::INFINITY), max: Vec3::splat(f64::NEG_INFINITY) };

    #[inline]
    pub fn from_points(points: &[Vec3]) -> Aabb {
        let mut b = Aabb::EMPTY;
        for &p in points {
            b.grow(p);
        }
        b
    }

    #[inline]
    pub fn grow(&mut self, p: Vec3) {
        self.min = self.min.min(p);
        self.max = self.max.max(p);
    }

    #[inline]
    pub fn union(self, o: Aabb) -> Aabb {
        Aabb { min: self.min.min(o.min), max: self.max.max(o.max) }
    }

    #[inline]
    pub fn contains(&self, p: Vec3, slack: f64) -> bool {
        p.x >= self.min.x - slack
            && p.y >= self.min.y - slack
            && p.z >= self.min.z - slack
            && p.x <= self.max.x + slack
            && p.y <= self.max.y + slack
            && p.z <= self.max.z + slack
    }

    #[inline]
    pub fn contains_box(&self, o: &Aabb, slack: f64) -> bool {
        self.contains(o.min, slack) && self.contains(o.max, slack)
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.min.x > self.max.x || self.min.y > self.max.y || self.min.z > self.max.z
    }

    #[inline]
    pub fn centroid(&self) -> Vec3 {
        (self.min + self.max) * 0.5
    }

    pub fn surface_area(&self) -> f64 {
        if self.is_empty() {
            return 0.0;
        }
        let d = self.max - self.min;
        2.0 * (d.x * d.y + d.y * d.z + d.z * d.x)
    }

    /// Slab test: entry distance of the ray interval overlapping
    /// `(t_low, t_high]`, or None. `inv_dir` components may be infinite;
    /// the min/max ordering discards the NaNs that 0 * inf produces.
    #[inline]
    fn slab_enter(&self, origin: Vec3, inv_dir: Vec3, t_low: f64, t_high: f64) -> Option<f64> {
        let tx1 = (self.min.x - origin.x) * inv_dir.x;
        let tx2 = (self.max.x - origin.x) * inv_dir.x;
        let mut t_enter = tx1.min(tx2);
        let mut t_exit = tx1.max(tx2);
        let ty1 = (self.min.y - origin.y) * inv_dir.y;
        let ty2 = (self.max.y - origin.y) * inv_dir.y;
        t_enter = t_enter.max(ty1.min(ty2));
        t_exit = t_exit.min(ty1.max(ty2));
        let tz1 = (self.min.z - origin.z) * inv_dir.z;
        let tz2 = (self.max.z - origin.z) * inv_dir.z;
        t_enter = t_enter.max(tz1.min(tz2));
        t_exit = t_exit.min(tz1.max(tz2));
        if t_enter <= t_exit && t_exit >= t_low && t_enter <= t_high {
            Some(t_enter)
        } else {
            None
        }
    }
}

/// Möller-Trumbore in double precision. Returns (t, u, v, front) without
/// any range checks on t; `front` means the ray approached against the
/// triangle's CCW normal.
#[inline]
pub(crate) fn intersect_triangle_f64(
    origin: Vec3,
    dir: Vec3,
    v0: Vec3,
    v1: Vec3,
    v2: Vec3,
) -> Option<(f64, f64, f64, bool)> {
    let e1 = v1 - v0;
    let e2 = v2 - v0;
    let pvec = dir.cross(e2);
    let det = e1.dot(pvec);
    if det.abs() < DET_EPS {
        return None;
    }
    let inv = 1.0 / det;
    let tvec = origin - v0;
    let u = tvec.dot(pvec) * inv;
    if !(0.0..=1.0).contains(&u) {
        return None;
    }
    let qvec = tvec.cross(e1);
    let v = dir.dot(qvec) * inv;
    if v < 0.0 || u + v > 1.0 {
        return None;
    }
    let t = e2.dot(qvec) * inv;
    Some((t, u, v, det > 0.0))
}

/// Per-ray frame for the watertight single-precision test: the triangle
/// is translated to the ray origin and sheared so the ray becomes the
/// +z axis. This is the algorithm family hardware intersectors use; its
/// conditioning does not degrade at grazing incidence the way the
/// classic determinant form does.
struct WatertightFrame {
    kx: usize,
    ky: usize,
    kz: usize,
    sx: f32,
    sy: f32,
    sz: f32,
    o: [f32; 3],
}

impl WatertightFrame {
    fn new(origin: Vec3, dir: Vec3) -> Self {
        let d = [dir.x as f32, dir.y as f32, dir.z as f32];
        let kz = if d[0].abs() > d[1].abs() && d[0].abs() > d[2].abs() {
            0
        } else if d[1].abs() > d[2].abs() {
            1
        } else {
            2
        };
        let (mut kx, mut ky) = ((kz + 1) % 3, (kz + 2) % 3);
        // Swap to preserve winding orientation when shearing along a
        // negative axis.
        if d[kz] < 0.0 {
            std::mem::swap(&mut kx, &mut ky);
        }
        WatertightFrame {
            kx,
            ky,
            kz,
            sx: d[kx] / d[kz],
            sy: d[ky] / d[kz],
            sz: 1.0 / d[kz],
            o: [origin.x as f32, origin.y as f32, origin.z as f32],
        }
    }

    /// Watertight intersection, entirely in f32 (with the standard
    /// exact double-precision fallback for edge functions that land on
    /// zero). Returns (t, u, v, front).
    fn intersect(&self, v0: Vec3, v1: Vec3, v2: Vec3) -> Option<(f64, f64, f64, bool)> {
        #[inline]
        fn rel(v: Vec3, o: &[f32; 3]) -> [f32; 3] {
            [v.x as f32 - o[0], v.y as f32 - o[1], v.z as f32 - o[2]]
        }
        let a = rel(v0, &self.o);
        let b = rel(v1, &self.o);
        let c = rel(v2, &self.o);
        let ax = a[self.kx] - self.sx * a[self.kz];
        let ay = a[self.ky] - self.sy * a[self.kz];
        let bx = b[self.kx] - self.sx * b[self.kz];
        let by = b[self.ky] - self.sy * b[self.kz];
        let cx = c[self.kx] - self.sx * c[self.kz];
        let cy = c[self.ky] - self.sy * c[self.kz];

        let mut u = cx * by - cy * bx;
        let mut v = ax * cy - ay * cx;
        let mut w = bx * ay - by * ax;
        if u == 0.0 || v == 0.0 || w == 0.0 {
            u = (cx as f64 * by as f64 - cy as f64 * bx as f64) as f32;
            v = (ax as f64 * cy as f64 - ay as f64 * cx as f64) as f32;
            w = (bx as f64 * ay as f64 - by as f64 * ax as f64) as f32;
        }
        if (u < 0.0 || v < 0.0 || w < 0.0) && (u > 0.0 || v > 0.0 || w > 0.0) {
            return None;
        }
        let det = u + v + w;
        if det == 0.0 {
            return None;
        }
        let az = self.sz * a[self.kz];
        let bz = self.sz * b[self.kz];
        let cz = self.sz * c[self.kz];
        let t_scaled = u * az + v * bz + w * cz;
        let inv = 1.0 / det;
        let t = t_scaled * inv;
        if !t.is_finite() {
            return None;
        }
        // Weight of v1 is V/det, of v2 is W/det (matches the
        // double-precision test's barycentric convention).
        Some((t as f64, (v * inv) as f64, (w * inv) as f64, det > 0.0))
    }
}

/// Per-query triangle tester: double-precision default or the
/// watertight f32 emulation.
enum TriTester {
    Double { origin: Vec3, dir: Vec3 },
    Single(WatertightFrame),
}

impl TriTester {
    fn new(q: &RayQuery) -> Self {
        match q.precision {
            Precision::Double => TriTester::Double { origin: q.origin, dir: q.dir },
            Precision::Single => TriTester::Single(WatertightFrame::new(q.origin, q.dir)),
        }
    }

    #[inline]
    fn intersect(&self, v0: Vec3, v1: Vec3, v2: Vec3) -> Option<(f64, f64, f64, bool)> {
        match self {
            TriTester::Double { origin, dir } => intersect_triangle_f64(*origin, *dir, v0, v1, v2),
            TriTester::Single(frame) => frame.intersect(v0, v1, v2),
        }
    }
}

/// Candidate acceptance shared by the BVH and the brute-force oracle.
#[inline]
fn consider(best: &mut Option<Hit>, q: &RayQuery, tester: &TriTester, tri_idx: u32, tri: &[Vec3; 3]) {
    if q.exclude == Some(tri_idx) {
        return;
    }
    if let Some((t, u, v, front)) = tester.intersect(tri[0], tri[1], tri[2]) {
        if t <= q.t_min || t > q.d_max {
            return;
        }
        if q.cull_front && front {
            return;
        }
        let better = match best {
            None => true,
            Some(h) => t < h.t || (t == h.t && tri_idx < h.tri),
        };
        if better {
            *best = Some(Hit {
                t,
                tri: tri_idx,
                face: if front { Face::Front } else { Face::Back },
                u,
                v,
            });
        }
    }
}

/// Exhaustive closest-hit scan over a triangle list; the testing oracle
/// for [`Bvh::intersect_closest`], with identical acceptance and
/// tie-breaking rules.
pub fn brute_force_closest(tris: &[[Vec3; 3]], q: &RayQuery) -> Option<Hit> {
    let tester = TriTester::new(q);
    let mut best = None;
    for (i, tri) in tris.iter().enumerate() {
        consider(&mut best, q, &tester, i as u32, tri);
    }
    best
}

#[derive(Debug, Clone)]
struct Node {
    aabb: Aabb,
    /// Leaf when `count > 0`: triangles `order[first..first+count]`.
    /// Internal otherwise: children `first` (near-build order) and `right`.
    first: u32,
    right: u32,
    count: u32,
}

/// A binned-SAH bounding volume hierarchy. Immutable after build;
/// queries are safe from any number of threads.
#[derive(Debug, Clone)]
pub struct Bvh {
    nodes: Vec<Node>,
    /// Triangles in leaf-contiguous order.
    tris: Vec<[Vec3; 3]>,
    /// Maps leaf-order position to the caller's triangle index.
    order: Vec<u32>,
    /// Opaque identifier assigned by the owning acceleration set.
    pub handle: u64,
}

struct BuildPrim {
    idx: u32,
    aabb: Aabb,
    centroid: Vec3,
}

impl Bvh {
    /// Builds a BVH over vertex-resolved triangles. Leaves hold at most
    /// 4 triangles; splits use a 16-bin surface-area heuristic with a
    /// median-split fallback.
    pub fn build(tris: &[[Vec3; 3]]) -> Result<Bvh, Error> {
        if tris.is_empty() {
            return Err(Error::Accel("cannot build a BVH over zero triangles".into()));
        }
        let mut prims: Vec<BuildPrim> = tris
            .iter()
            .enumerate()
            .map(|(i, t)| {
                let aabb = Aabb::from_points(t);
                BuildPrim { idx: i as u32, aabb, centroid: aabb.centroid() }
            })
            .collect();
        let mut nodes = Vec::with_capacity(2 * tris.len());
        build_range(&mut prims, &mut nodes, 0, 0);
        let order: Vec<u32> = prims.iter().map(|p| p.idx).collect();
        let tris = prims.iter().map(|p| tris[p.idx as usize]).collect();
        Ok(Bvh { nodes, tris, order, handle: 0 })
    }

    pub fn triangle_count(&self) -> usize {
        self.tris.len()
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn root_aabb(&self) -> Aabb {
        self.nodes[0].aabb
    }

    /// Closest hit with `t` in `(t_min, d_max]`, ties broken toward the
    /// lowest triangle index. Equivalent to [`brute_force_closest`] on
    /// the same triangle list.
    pub fn intersect_closest(&self, q: &RayQuery) -> Option<Hit> {
        let inv_dir = Vec3::new(1.0 / q.dir.x, 1.0 / q.dir.y, 1.0 / q.dir.z);
        let tester = TriTester::new(q);
        let mut best: Option<Hit> = None;
        let mut stack = [0u32; MAX_DEPTH + 1];
        let mut sp = 0usize;
        let mut node_idx = 0u32;
        loop {
            let node = &self.nodes[node_idx as usize];
            // Pruning keeps nodes whose entry distance ties the current
            // best so equal-distance candidates can win on index.
            let limit = best.map_or(q.d_max, |h| h.t.min(q.d_max) + BOX_SLACK);
            if node.count > 0 {
                let first = node.first as usize;
                for i in first..first + node.count as usize {
                    consider(&mut best, q, &tester, self.order[i], &self.tris[i]);
                }
            } else {
                let l = node.first;
                let r = node.right;
                let limit_l = self.nodes[l as usize].aabb.slab_enter(q.origin, inv_dir, q.t_min, limit);
                let limit_r = self.nodes[r as usize].aabb.slab_enter(q.origin, inv_dir, q.t_min, limit);
                match (limit_l, limit_r) {
                    (Some(tl), Some(tr)) => {
                        let (near, far) = if tl <= tr { (l, r) } else { (r, l) };
                        stack[sp] = far;
                        sp += 1;
                        node_idx = near;
                        continue;
                    }
                    (Some(_), None) => {
                        node_idx = l;
                        continue;
                    }
                    (None, Some(_)) => {
                        node_idx = r;
                        continue;
                    }
                    (None, None) => {}
                }
            }
            // Pop, re-checking against the (possibly tightened) bound.
            loop {
                if sp == 0 {
                    return best;
                }
                sp -= 1;
                let cand = stack[sp];
                let limit = best.map_or(q.d_max, |h| h.t.min(q.d_max) + BOX_SLACK);
                if self.nodes[cand as usize]
                    .aabb
                    .slab_enter(q.origin, inv_dir, q.t_min, limit)
                    .is_some()
                {
                    node_idx = cand;
                    break;
                }
            }
        }
    }

    /// Structural validation: every input triangle in exactly one leaf,
    /// every node box containing its contents (1e-9 mm slack), depth at
    /// most 64.
    pub fn validate(&self) -> Result<(), Error> {
        let n = self.order.len();
        let mut seen = vec![false; n];
        for &o in &self.order {
            let o = o as usize;
            if o >= n || seen[o] {
                return Err(Error::Accel(format!("triangle order is not a permutation at {o}")));
            }
            seen[o] = true;
        }
        if !seen.iter().all(|&s| s) {
            return Err(Error::Accel("triangle order is not a permutation".into()));
        }
        self.validate_node(0, 0)
    }

    fn validate_node(&self, idx: u32, depth: usize) -> Result<(), Error> {
        if depth > MAX_DEPTH {
            return Err(Error::Accel(format!("depth exceeds {MAX_DEPTH}")));
        }
        let node = &self.nodes[idx as usize];
        if node.count > 0 {
            for i in node.first..node.first + node.count {
                for p in self.tris[i as usize] {
                    if !node.aabb.contains(p, BOX_SLACK) {
                        return Err(Error::Accel(format!(
                            "leaf {idx} does not contain triangle {}",
                            self.order[i as usize]
                        )));
                    }
                }
            }
            Ok(())
        } else {
            for child in [node.first, node.right] {
                let cb = self.nodes[child as usize].aabb;
                if !node.aabb.contains_box(&cb, BOX_SLACK) {
                    return Err(Error::Accel(format!("node {idx} does not contain child {child}")));
                }
                self.validate_node(child, depth + 1)?;
            }
            Ok(())
        }
    }
}

fn build_range(prims: &mut [BuildPrim], nodes: &mut Vec<Node>, offset: u32, depth: usize) -> u32 {
    let mut bounds = Aabb::EMPTY;
    let mut cbounds = Aabb::EMPTY;
    for p in prims.iter() {
        bounds = bounds.union(p.aabb);
        cbounds.grow(p.centroid);
    }
    let idx = nodes.len() as u32;
    nodes.push(Node { aabb: bounds, first: offset, right: 0, count: prims.len() as u32 });

    if prims.len() <= LEAF_MAX || depth + 2 >= MAX_DEPTH {
        return idx;
    }

    let split = sah_split(prims, &cbounds).unwrap_or_else(|| median_split(prims, &cbounds));
    let (left, right) = prims.split_at_mut(split);
    let l = build_range(left, nodes, offset, depth + 1);
    let r = build_range(right, nodes, offset + split as u32, depth + 1);
    nodes[idx as usize].first = l;
    nodes[idx as usize].right = r;
    nodes[idx as usize].count = 0;
    idx
}

/// Binned SAH split. Returns the partition point, or None when no axis
/// separates the centroids.
fn sah_split(prims: &mut [BuildPrim], cbounds: &Aabb) -> Option<usize> {
    let n = prims.len();
    let extent = cbounds.max - cbounds.min;
    let mut best: Option<(f64, usize, usize)> = None; // (cost, axis, bin cut)

    for axis in 0..3 {
        let ext = extent[axis];
        if ext < 1e-12 {
            continue;
        }
        let scale = SAH_BINS as f64 / ext;
        let lo = cbounds.min[axis];
        let mut counts = [0usize; SAH_BINS];
        let mut boxes = [Aabb::EMPTY; SAH_BINS];
        for p in prims.iter() {
            let b = (((p.centroid[axis] - lo) * scale) as usize).min(SAH_BINS - 1);
            counts[b] += 1;
            boxes[b] = boxes[b].union(p.aabb);
        }
        // Suffix pass, then a prefix sweep.
        let mut right_area = [0.0f64; SAH_BINS];
        let mut acc = Aabb::EMPTY;
        let mut right_count = [0usize; SAH_BINS];
        let mut cnt = 0;
        for b in (1..SAH_BINS).rev() {
            acc = acc.union(boxes[b]);
            cnt += counts[b];
            right_area[b] = acc.surface_area();
            right_count[b] = cnt;
        }
        let mut left_box = Aabb::EMPTY;
        let mut left_count = 0usize;
        for cut in 1..SAH_BINS {
            left_box = left_box.union(boxes[cut - 1]);
            left_count += counts[cut - 1];
            if left_count == 0 || left_count == n {
                continue;
            }
            let cost = left_box.surface_area() * left_count as f64
                + right_area[cut] * right_count[cut] as f64;
            if best.map_or(true, |(c, _, _)| cost < c) {
                best = Some((cost, axis, cut));
            }
        }
    }

    let (_, axis, cut) = best?;
    let ext = extent[axis];
    let scale = SAH_BINS as f64 / ext;
    let lo = cbounds.min[axis];
    let split = partition_in_place(prims, |p| {
        ((((p.centroid[axis] - lo) * scale) as usize).min(SAH_BINS - 1)) < cut
    });
    if split == 0 || split == n {
        None
    } else {
        Some(split)
    }
}

/// Sorts on the widest centroid axis and cuts at the middle.
fn median_split(prims: &mut [BuildPrim], cbounds: &Aabb) -> usize {
    let extent = cbounds.max - cbounds.min;
    let axis = if extent.x >= extent.y && extent.x >= extent.z {
        0
    } else if extent.y >= extent.z {
        1
    } else {
        2
    };
    prims.sort_by(|a, b| a.centroid[axis].total_cmp(&b.centroid[axis]));
    prims.len() / 2
}

fn partition_in_place<F: Fn(&BuildPrim) -> bool>(prims: &mut [BuildPrim], pred: F) -> usize {
    let mut i = 0;
    let mut j = prims.len();
    while i < j {
        if pred(&prims[i]) {
            i += 1;
        } else {
            j -= 1;
            prims.swap(i, j);
        }
    }
    i
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::physics::Rng;

    fn unit_right_triangle() -> [Vec3; 3] {
        [Vec3::new(0.0, 0.0, 0.0), Vec3::new(1.0, 0.0, 0.0), Vec3::new(0.0, 1.0, 0.0)]
    }

    fn cube_triangles(min: Vec3, max: Vec3) -> Vec<[Vec3; 3]> {
        // 12 triangles, outward winding (matches the benchmark
        // generator; windings do not matter for these tests).
        let v = [
            Vec3::new(min.x, min.y, min.z),
            Vec3::new(max.x, min.y, min.z),
            Vec3::new(max.x, max.y, min.z),
            Vec3::new(min.x, max.y, min.z),
            Vec3::new(min.x, min.y, max.z),
            Vec3::new(max.x, min.y, max.z),
            Vec3::new(max.x, max.y, max.z),
            Vec3::new(min.x, max.y, max.z),
        ];
        let quads: [[usize; 4]; 6] = [
            [0, 3, 2, 1], // z = min
            [4, 5, 6, 7], // z = max
            [0, 1, 5, 4], // y = min
            [2, 3, 7, 6], // y = max
            [0, 4, 7, 3], // x = min
            [1, 2, 6, 5], // x = max
        ];
        let mut tris = Vec::new();
        for q in quads {
            tris.push([v[q[0]], v[q[1]], v[q[2]]]);
            tris.push([v[q[0]], v[q[2]], v[q[3]]]);
        }
        tris
    }

    fn random_unit(rng: &mut Rng) -> Vec3 {
        loop {
            let v = Vec3::new(
                2.0 * rng.next_unit() - 1.0,
                2.0 * rng.next_unit() - 1.0,
                2.0 * rng.next_unit() - 1.0,
            );
            let n2 = v.norm2();
            if n2 > 1e-4 && n2 <= 1.0 {
                return v / n2.sqrt();
            }
        }
    }

    #[test]
    fn singleton_leaf_box_equals_triangle_box() {
        let tri = unit_right_triangle();
        let bvh = Bvh::build(&[tri]).unwrap();
        assert_eq!(bvh.node_count(), 1);
        assert_eq!(bvh.root_aabb(), Aabb::from_points(&tri));
        bvh.validate().unwrap();
    }

    #[test]
    fn cube_root_box_is_the_cube() {
        let tris = cube_triangles(Vec3::ZERO, Vec3::splat(2.0));
        let bvh = Bvh::build(&tris).unwrap();
        let root = bvh.root_aabb();
        assert!(root.min.max_abs_diff(Vec3::ZERO) < 1e-15);
        assert!(root.max.max_abs_diff(Vec3::splat(2.0)) < 1e-15);
        bvh.validate().unwrap();
    }

    #[test]
    fn empty_input_is_an_error() {
        assert!(Bvh::build(&[]).is_err());
    }

    #[test]
    fn axis_aligned_hit_reports_back_face_and_distance() {
        let tris = [unit_right_triangle()];
        let bvh = Bvh::build(&tris).unwrap();
        let q = RayQuery::new(Vec3::new(0.25, 0.25, -1.0), Vec3::new(0.0, 0.0, 1.0), f64::MAX);
        let hit = bvh.intersect_closest(&q).unwrap();
        assert_eq!(hit.tri, 0);
        assert_eq!(hit.face, Face::Back); // approach along the +z normal
        assert!((hit.t - 1.0).abs() < 1e-12);
        assert!(hit.u >= 0.0 && hit.v >= 0.0 && hit.u + hit.v <= 1.0);

        // Hit beyond d_max is discarded.
        let q = RayQuery::new(Vec3::new(0.25, 0.25, -1.0), Vec3::new(0.0, 0.0, 1.0), 0.5);
        assert!(bvh.intersect_closest(&q).is_none());
    }

    #[test]
    fn front_face_classification_flips_with_approach_side() {
        let tris = [unit_right_triangle()];
        let bvh = Bvh::build(&tris).unwrap();
        let q = RayQuery::new(Vec3::new(0.25, 0.25, 1.0), Vec3::new(0.0, 0.0, -1.0), f64::MAX);
        let hit = bvh.intersect_closest(&q).unwrap();
        assert_eq!(hit.face, Face::Front);

        // Culling front faces removes it.
        let q = q.with_cull(true);
        assert!(bvh.intersect_closest(&q).is_none());
    }

    #[test]
    fn equal_distance_ties_break_to_lowest_index() {
        let t = unit_right_triangle();
        let tris = vec![t, t, t];
        let bvh = Bvh::build(&tris).unwrap();
        let q = RayQuery::new(Vec3::new(0.25, 0.25, -1.0), Vec3::new(0.0, 0.0, 1.0), f64::MAX);
        assert_eq!(bvh.intersect_closest(&q).unwrap().tri, 0);
        assert_eq!(brute_force_closest(&tris, &q).unwrap().tri, 0);
    }

    #[test]
    fn brute_force_on_empty_list_is_none() {
        let q = RayQuery::new(Vec3::ZERO, Vec3::new(1.0, 0.0, 0.0), f64::MAX);
        assert!(brute_force_closest(&[], &q).is_none());
    }

    #[test]
    fn exclusion_skips_exactly_one_triangle() {
        let t = unit_right_triangle();
        let tris = vec![t, t];
        let bvh = Bvh::build(&tris).unwrap();
        let mut q = RayQuery::new(Vec3::new(0.25, 0.25, -1.0), Vec3::new(0.0, 0.0, 1.0), f64::MAX);
        q.exclude = Some(0);
        assert_eq!(bvh.intersect_closest(&q).unwrap().tri, 1);
        assert_eq!(brute_force_closest(&tris, &q).unwrap().tri, 1);
    }

    #[test]
    fn t_min_excludes_near_hits() {
        let tris = [unit_right_triangle()];
        let bvh = Bvh::build(&tris).unwrap();
        let mut q = RayQuery::new(Vec3::new(0.25, 0.25, -1.0), Vec3::new(0.0, 0.0, 1.0), f64::MAX);
        q.t_min = 1.0; // exclusive bound at exactly the hit distance
        assert!(bvh.intersect_closest(&q).is_none());
        q.t_min = 0.999;
        assert!(bvh.intersect_closest(&q).is_some());
    }

    fn random_scene(rng: &mut Rng, max_tris: usize) -> Vec<[Vec3; 3]> {
        let n = 1 + (rng.next_u64() as usize) % max_tris;
        let mut tris = Vec::with_capacity(n);
        while tris.len() < n {
            let mut p = || {
                Vec3::new(
                    10.0 * rng.next_unit() - 5.0,
                    10.0 * rng.next_unit() - 5.0,
                    10.0 * rng.next_unit() - 5.0,
                )
            };
            let (a, b, c) = (p(), p(), p());
            if 0.5 * (b - a).cross(c - a).norm() > 1e-9 {
                tris.push([a, b, c]);
            }
        }
        tris
    }

    #[test]
    fn bvh_matches_brute_force_on_random_scenes() {
        let mut rng = Rng::split(99, 0);
        for scene_i in 0..40 {
            let tris = random_scene(&mut rng, 50);
            let bvh = Bvh::build(&tris).unwrap();
            bvh.validate().unwrap();
            for ray_i in 0..500 {
                let origin = Vec3::new(
                    16.0 * rng.next_unit() - 8.0,
                    16.0 * rng.next_unit() - 8.0,
                    16.0 * rng.next_unit() - 8.0,
                );
                let dir = random_unit(&mut rng);
                let d_max = if rng.next_unit() < 0.3 { 4.0 * rng.next_unit() } else { f64::MAX };
                let cull = rng.next_unit() < 0.25;
                let precision =
                    if rng.next_unit() < 0.25 { Precision::Single } else { Precision::Double };
                let q = RayQuery {
                    origin,
                    dir,
                    d_max,
                    t_min: 0.0,
                    cull_front: cull,
                    exclude: None,
                    precision,
                };
                let a = bvh.intersect_closest(&q);
                let b = brute_force_closest(&tris, &q);
                match (a, b) {
                    (None, None) => {}
                    (Some(x), Some(y)) => {
                        assert_eq!(
                            (x.tri, x.face),
                            (y.tri, y.face),
                            "scene {scene_i} ray {ray_i}"
                        );
                        assert!((x.t - y.t).abs() < 1e-9);
                    }
                    (x, y) => panic!("scene {scene_i} ray {ray_i}: bvh {x:?} vs brute {y:?}"),
                }
            }
        }
    }

    #[test]
    fn culling_soundness_returns_only_back_faces() {
        let mut rng = Rng::split(7, 3);
        let tris = random_scene(&mut rng, 30);
        let bvh = Bvh::build(&tris).unwrap();
        for _ in 0..2000 {
            let origin = Vec3::new(
                12.0 * rng.next_unit() - 6.0,
                12.0 * rng.next_unit() - 6.0,
                12.0 * rng.next_unit() - 6.0,
            );
            let q = RayQuery::new(origin, random_unit(&mut rng), f64::MAX).with_cull(true);
            if let Some(h) = bvh.intersect_closest(&q) {
                assert_eq!(h.face, Face::Back);
            }
        }
    }

    #[test]
    fn translation_invariance() {
        let mut rng = Rng::split(21, 0);
        let tris = random_scene(&mut rng, 40);
        let shift = Vec3::new(103.5, -77.25, 31.0);
        let shifted: Vec<[Vec3; 3]> =
            tris.iter().map(|t| [t[0] + shift, t[1] + shift, t[2] + shift]).collect();
        let bvh_a = Bvh::build(&tris).unwrap();
        let bvh_b = Bvh::build(&shifted).unwrap();
        for _ in 0..2000 {
            let origin = Vec3::new(
                12.0 * rng.next_unit() - 6.0,
                12.0 * rng.next_unit() - 6.0,
                12.0 * rng.next_unit() - 6.0,
            );
            let dir = random_unit(&mut rng);
            let qa = RayQuery::new(origin, dir, f64::MAX);
            let qb = RayQuery::new(origin + shift, dir, f64::MAX);
            match (bvh_a.intersect_closest(&qa), bvh_b.intersect_closest(&qb)) {
                (None, None) => {}
                (Some(a), Some(b)) => {
                    assert_eq!(a.tri, b.tri);
                    let scale = a.t.abs().max(1.0);
                    assert!((a.t - b.t).abs() < 1e-9 * scale);
                }
                (a, b) => panic!("{a:?} vs {b:?}"),
            }
        }
    }

    #[test]
    fn repeated_queries_are_deterministic() {
        let mut rng = Rng::split(5, 5);
        let tris = random_scene(&mut rng, 50);
        let bvh = Bvh::build(&tris).unwrap();
        let q = RayQuery::new(Vec3::new(-8.0, 0.1, 0.2), Vec3::new(1.0, 0.0, 0.0), f64::MAX);
        let first = bvh.intersect_closest(&q);
        for _ in 0..100 {
            assert_eq!(bvh.intersect_closest(&q), first);
        }
    }
}
