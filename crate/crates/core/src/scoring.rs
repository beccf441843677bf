//! Voxel fluence accumulation on a grid decoupled from the simulation
//! mesh. Photon path segments are split exactly at voxel boundaries by
//! incremental (Amanatides-Woo style) traversal; each sub-segment
//! deposits its path-integrated weight. Normalizing by voxel volume and
//! photon count yields fluence in mm^-2 per unit source energy.

use std::io::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::math::Vec3;
use crate::physics::attenuate;
use crate::Error;

/// Placement of the output voxel grid: isotropic voxels of side `h` mm.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub origin: Vec3,
    pub h: f64,
    pub dims: [u32; 3],
}

impl GridSpec {
    pub fn validate(&self) -> Result<(), Error> {
        if !(self.h > 0.0) {
            return Err(Error::Config("grid voxel size h must be > 0".into()));
        }
        if self.dims.iter().any(|&d| d == 0) {
            return Err(Error::Config("grid dims must all be >= 1".into()));
        }
        Ok(())
    }

    #[inline]
    pub fn voxel_count(&self) -> usize {
        self.dims[0] as usize * self.dims[1] as usize * self.dims[2] as usize
    }

    #[inline]
    fn voxel_of(&self, p: Vec3) -> [i64; 3] {
        [
            ((p.x - self.origin.x) / self.h).floor() as i64,
            ((p.y - self.origin.y) / self.h).floor() as i64,
            ((p.z - self.origin.z) / self.h).floor() as i64,
        ]
    }

    #[inline]
    fn in_bounds(&self, v: [i64; 3]) -> Option<usize> {
        if v[0] >= 0
            && v[1] >= 0
            && v[2] >= 0
            && v[0] < self.dims[0] as i64
            && v[1] < self.dims[1] as i64
            && v[2] < self.dims[2] as i64
        {
            Some(
                v[0] as usize
                    + self.dims[0] as usize * (v[1] as usize + self.dims[1] as usize * v[2] as usize),
            )
        } else {
            None
        }
    }

    fn aabb_overlaps(&self, lo: Vec3, hi: Vec3) -> bool {
        let gmax = self.origin
            + Vec3::new(
                self.dims[0] as f64 * self.h,
                self.dims[1] as f64 * self.h,
                self.dims[2] as f64 * self.h,
            );
        lo.x <= gmax.x
            && lo.y <= gmax.y
            && lo.z <= gmax.z
            && hi.x >= self.origin.x
            && hi.y >= self.origin.y
            && hi.z >= self.origin.z
    }
}

/// Accumulator of path-integrated weight (mm) per voxel; after
/// [`FluenceGrid::normalize`], fluence in mm^-2.
#[derive(Debug, Clone, PartialEq)]
pub struct FluenceGrid {
    pub spec: GridSpec,
    data: Vec<f64>,
    /// Per-voxel sum of squared deposits, for statistical-error
    /// estimates; only tracked when requested.
    variance: Option<Vec<f64>>,
    normalized: bool,
}

impl FluenceGrid {
    pub fn new(spec: GridSpec) -> FluenceGrid {
        FluenceGrid { data: vec![0.0; spec.voxel_count()], variance: None, spec, normalized: false }
    }

    /// Grid that additionally tracks per-voxel second moments.
    pub fn with_variance(spec: GridSpec) -> FluenceGrid {
        FluenceGrid {
            data: vec![0.0; spec.voxel_count()],
            variance: Some(vec![0.0; spec.voxel_count()]),
            spec,
            normalized: false,
        }
    }

    #[inline]
    pub fn values(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn value_at(&self, x: u32, y: u32, z: u32) -> f64 {
        self.data[self.spec.in_bounds([x as i64, y as i64, z as i64]).expect("voxel in range")]
    }

    /// Per-voxel variance of the accumulated sum (sum of squared
    /// deposits), if tracked. Unnormalized.
    pub fn variance_at(&self, x: u32, y: u32, z: u32) -> Option<f64> {
        let idx = self.spec.in_bounds([x as i64, y as i64, z as i64])?;
        self.variance.as_ref().map(|v| v[idx])
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    pub fn total(&self) -> f64 {
        self.data.iter().sum()
    }

    #[inline]
    fn add(&mut self, idx: usize, phi: f64) {
        self.data[idx] += phi;
        if let Some(var) = &mut self.variance {
            var[idx] += phi * phi;
        }
    }

    /// Deposits one path segment, splitting it at voxel boundaries.
    /// Sub-segments outside the grid attenuate the weight but deposit
    /// nothing. Returns the weight at `p1`
    /// (`w_enter * exp(-mua * |p1 - p0|)` regardless of grid coverage).
    pub fn deposit_segment(&mut self, p0: Vec3, p1: Vec3, w_enter: f64, mua: f64) -> f64 {
        debug_assert!(!self.normalized, "deposit after normalization");
        let delta = p1 - p0;
        let len = delta.norm();
        if len == 0.0 {
            return w_enter;
        }

        let start = self.spec.voxel_of(p0);
        let end = self.spec.voxel_of(p1);
        if start == end {
            let (w_exit, phi) = attenuate(w_enter, mua, len);
            if let Some(idx) = self.spec.in_bounds(start) {
                self.add(idx, phi);
            }
            return w_exit;
        }
        if !self.spec.aabb_overlaps(p0.min(p1), p0.max(p1)) {
            return attenuate(w_enter, mua, len).0;
        }

        let dir = delta / len;
        let mut voxel = start;
        let mut step = [0i64; 3];
        let mut t_next = [f64::INFINITY; 3];
        let mut t_delta = [f64::INFINITY; 3];
        for a in 0..3 {
            let d = dir[a];
            if d > 0.0 {
                step[a] = 1;
                let bound = self.spec.origin[a] + (voxel[a] + 1) as f64 * self.spec.h;
                t_next[a] = (bound - p0[a]) / d;
                t_delta[a] = self.spec.h / d;
            } else if d < 0.0 {
                step[a] = -1;
                let bound = self.spec.origin[a] + voxel[a] as f64 * self.spec.h;
                t_next[a] = (bound - p0[a]) / d;
                t_delta[a] = self.spec.h / -d;
            }
        }

        let max_steps =
            ((end[0] - start[0]).abs() + (end[1] - start[1]).abs() + (end[2] - start[2]).abs() + 3)
                as usize;
        let mut w = w_enter;
        let mut t_here = 0.0f64;
        for _ in 0..max_steps {
            let t_stop = t_next[0].min(t_next[1]).min(t_next[2]).min(len);
            let sub = (t_stop - t_here).max(0.0);
            if sub > 0.0 {
                let (w_after, phi) = attenuate(w, mua, sub);
                if let Some(idx) = self.spec.in_bounds(voxel) {
                    self.add(idx, phi);
                }
                w = w_after;
            }
            if t_stop >= len {
                return w;
            }
            t_here = t_stop;
            let axis = if t_next[0] <= t_next[1] && t_next[0] <= t_next[2] {
                0
            } else if t_next[1] <= t_next[2] {
                1
            } else {
                2
            };
            voxel[axis] += step[axis];
            t_next[axis] += t_delta[axis];
        }
        // Step budget exhausted (possible only under FP pathology near
        // the final boundary): close out the remaining length.
        let sub = (len - t_here).max(0.0);
        let (w_after, phi) = attenuate(w, mua, sub);
        if let Some(idx) = self.spec.in_bounds(voxel) {
            self.add(idx, phi);
        }
        w_after
    }

    /// Converts accumulated path-weight (mm) to fluence (mm^-2) for
    /// `nphoton` unit-energy packets. May be applied exactly once.
    pub fn normalize(&mut self, nphoton: u64) -> Result<(), Error> {
        if self.normalized {
            return Err(Error::Scoring("grid is already normalized".into()));
        }
        if nphoton == 0 {
            return Err(Error::Scoring("cannot normalize by zero photons".into()));
        }
        let f = 1.0 / (self.spec.h.powi(3) * nphoton as f64);
        for v in &mut self.data {
            *v *= f;
        }
        if let Some(var) = &mut self.variance {
            for v in var.iter_mut() {
                *v *= f * f;
            }
        }
        self.normalized = true;
        Ok(())
    }
}

/// Elementwise sum of per-worker grids, folded in worker-index order so
/// results are bit-reproducible.
pub fn merge_grids(grids: Vec<FluenceGrid>) -> Result<FluenceGrid, Error> {
    let mut iter = grids.into_iter();
    let mut out = iter.next().ok_or_else(|| Error::Scoring("merge of zero grids".into()))?;
    for g in iter {
        if g.spec != out.spec || g.normalized != out.normalized {
            return Err(Error::Scoring("grid geometry mismatch in merge".into()));
        }
        for (a, b) in out.data.iter_mut().zip(&g.data) {
            *a += b;
        }
        match (&mut out.variance, &g.variance) {
            (Some(av), Some(bv)) => {
                for (a, b) in av.iter_mut().zip(bv) {
                    *a += b;
                }
            }
            (None, None) => {}
            _ => return Err(Error::Scoring("variance tracking mismatch in merge".into())),
        }
    }
    Ok(out)
}

/// Packet-weight bookkeeping for one run (or one worker). `launched`
/// equals the sum of the terminal outcomes plus absorbed weight within
/// 1e-9 relative.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub nphoton: u64,
    pub launched_weight: f64,
    pub absorbed_weight: f64,
    pub exited_weight: f64,
    pub timed_out_weight: f64,
    pub leaked_weight: f64,
    pub leaked_count: u64,
    /// Photons terminated by the per-photon event cap (counted as
    /// leak-class).
    pub cap_aborted_count: u64,
    pub workers: u32,
    pub wall_time_s: f64,
}

impl Summary {
    /// |launched - (absorbed + exited + timed_out + leaked)| / launched.
    pub fn conservation_residual(&self) -> f64 {
        if self.launched_weight == 0.0 {
            return 0.0;
        }
        let accounted = self.absorbed_weight
            + self.exited_weight
            + self.timed_out_weight
            + self.leaked_weight;
        (self.launched_weight - accounted).abs() / self.launched_weight
    }

    /// Field-wise sum (worker merge). Wall time is summed here; the run
    /// driver overwrites it with the measured elapsed time.
    pub fn merge(mut summaries: Vec<Summary>) -> Summary {
        let mut out = Summary::default();
        for s in summaries.drain(..) {
            out.nphoton += s.nphoton;
            out.launched_weight += s.launched_weight;
            out.absorbed_weight += s.absorbed_weight;
            out.exited_weight += s.exited_weight;
            out.timed_out_weight += s.timed_out_weight;
            out.leaked_weight += s.leaked_weight;
            out.leaked_count += s.leaked_count;
            out.cap_aborted_count += s.cap_aborted_count;
            out.workers += s.workers;
            out.wall_time_s += s.wall_time_s;
        }
        out
    }
}

/// Run provenance stamped into every output header.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Provenance {
    pub seed: u64,
    pub config_sha256: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct VolumeHeader {
    origin: Vec3,
    h: f64,
    dims: [u32; 3],
    nphoton: u64,
    units: String,
    byte_order: String,
    dtype: String,
    seed: u64,
    config_sha256: String,
}

/// Writes `<prefix>_fluence.raw` (little-endian f32, x-fastest),
/// `<prefix>_fluence.json`, `<prefix>_summary.json`, and one
/// `<prefix>_slice_z<K>.csv` per requested z-plane. Returns the paths
/// written.
pub fn write_outputs(
    prefix: &str,
    grid: &FluenceGrid,
    summary: &Summary,
    provenance: &Provenance,
    slices_z: &[u32],
) -> Result<Vec<PathBuf>, Error> {
    let mut written = Vec::new();

    let raw_path = PathBuf::from(format!("{prefix}_fluence.raw"));
    let mut buf = Vec::with_capacity(grid.data.len() * 4);
    for &v in &grid.data {
        buf.extend_from_slice(&(v as f32).to_le_bytes());
    }
    std::fs::write(&raw_path, &buf).map_err(|e| io_err(&raw_path, e))?;
    written.push(raw_path);

    let header = VolumeHeader {
        origin: grid.spec.origin,
        h: grid.spec.h,
        dims: grid.spec.dims,
        nphoton: summary.nphoton,
        units: "mm^-2".into(),
        byte_order: "little".into(),
        dtype: "f32".into(),
        seed: provenance.seed,
        config_sha256: provenance.config_sha256.clone(),
    };
    let hdr_path = PathBuf::from(format!("{prefix}_fluence.json"));
    write_json(&hdr_path, &header)?;
    written.push(hdr_path);

    let sum_path = PathBuf::from(format!("{prefix}_summary.json"));
    write_json(&sum_path, &serde_json::json!({ "summary": summary, "provenance": provenance }))?;
    written.push(sum_path);

    for &z in slices_z {
        if z >= grid.spec.dims[2] {
            return Err(Error::Config(format!(
                "slice z={z} out of range (grid has {} z-planes)",
                grid.spec.dims[2]
            )));
        }
        let path = PathBuf::from(format!("{prefix}_slice_z{z}.csv"));
        let mut f = std::fs::File::create(&path).map_err(|e| io_err(&path, e))?;
        for y in 0..grid.spec.dims[1] {
            let mut row = String::new();
            for x in 0..grid.spec.dims[0] {
                if x > 0 {
                    row.push(',');
                }
                row.push_str(&format!("{:e}", grid.value_at(x, y, z)));
            }
            row.push('\n');
            f.write_all(row.as_bytes()).map_err(|e| io_err(&path, e))?;
        }
        written.push(path);
    }
    Ok(written)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), Error> {
    let text = serde_json::to_string_pretty(value).expect("serialization cannot fail");
    std::fs::write(path, text).map_err(|e| io_err(path, e))
}

fn io_err(path: &Path, e: std::io::Error) -> Error {
    Error::Io { path: path.into(), source: e }
}
