//! The shader-event engine: acceleration sets with per-triangle binding
//! records under three partitioning strategies, and the ray-gen loop
//! that advances photon packets by dispatching closest-hit and miss
//! handlers until termination.
//!
//! Every cast retracts the ray origin by `delta` along its direction
//! and extends the length bound accordingly; the returned distance is
//! restored by `delta` before use. This keeps true boundary distances
//! above the rounding floor of the reduced-precision intersection mode.

use serde::{Deserialize, Serialize};

use crate::accel::{Aabb, Bvh, Face, Precision, RayQuery};
use crate::config::SimConfig;
use crate::geometry::{region_decomposition, Medium, SurfaceMesh, TetMesh, OUTWARD_FACES};
use crate::math::Vec3;
use crate::physics::{
    advance_time, fresnel_reflectance, reflect, refract, rotate_direction, sample_hg, sample_step,
    Rng,
};
use crate::scoring::{merge_grids, FluenceGrid, GridSpec, Summary};
use crate::sources::{launch, resolve_initial_medium, InitialMedium, SourceKind, SourceSpec};
use crate::Error;

/// Slack for the scene-bounds escape check.
const GEOM_EPS: f64 = 1e-9;

/// Rounds a position to f32 storage, emulating the 4-byte payload
/// slots of the reduced-precision mode.
#[inline]
fn snap_position(v: Vec3) -> Vec3 {
    Vec3::new(v.x as f32 as f64, v.y as f32 as f64, v.z as f32 as f64)
}
/// Consecutive zero-advance boundary events tolerated before a photon
/// is aborted as stuck (pathological geometry such as exactly
/// duplicated faces).
const STUCK_LIMIT: u32 = 8;
/// Look-back window (mm) for the leak detector's double-precision
/// recast: wide enough to see a boundary the quantized photon position
/// has already been rounded onto or just past.
const RECAST_LOOKBACK: f64 = -5e-5;
/// Default per-photon event cap (liveness guard).
pub const DEFAULT_MAX_EVENTS: u64 = 10_000_000;
/// Default cap on per-tetrahedron instances.
pub const DEFAULT_TETRA_BUDGET: usize = 4_000_000;

/// Mesh partitioning strategy for acceleration-structure construction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    /// One hierarchy over every triangle; arbitrary winding; records
    /// carry both face media.
    Single,
    /// One hierarchy per connected region surface, outward winding,
    /// front-face culling; records carry the neighbor medium and handle.
    Region,
    /// One hierarchy per tetrahedral element (4 triangles each), outward
    /// winding, front-face culling.
    Tetra,
}

/// Opaque identifier of one acceleration-structure instance.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AsHandle(pub u64);

/// Per-triangle binding record: the precomputed normal plus, for each
/// side of the face, the medium and instance occupying it
/// (`[front side, back side]`).
#[derive(Debug, Clone, Copy)]
pub struct SbtRecord {
    pub normal: Vec3,
    pub media: [u32; 2],
    pub neighbor: [Option<AsHandle>; 2],
}

/// One BVH plus its binding-record table.
#[derive(Debug)]
pub struct AsInstance {
    pub bvh: Bvh,
    pub records: Vec<SbtRecord>,
    /// Triangles in record order (the BVH input order).
    pub tris: Vec<[Vec3; 3]>,
    /// Enclosed medium (Region/Tetra strategies; unused for Single).
    pub medium: u32,
}

/// Strategy-tagged set of acceleration structures over one scene.
#[derive(Debug)]
pub struct AccelSet {
    pub strategy: Strategy,
    pub instances: Vec<AsInstance>,
    pub scene_aabb: Aabb,
    /// Ray-origin retraction length, mm.
    pub delta: f64,
    /// Retained elements for point location under the Tetra strategy.
    tets: Option<TetMesh>,
}

/// Input geometry for [`build_accel_set`].
pub enum MeshInput<'a> {
    Surface(&'a SurfaceMesh),
    Tet(&'a TetMesh),
}

/// Builds the acceleration set for a strategy.
///
/// Single requires a surface mesh. Region accepts a surface mesh with
/// per-region labels (winding assumed outward, shared boundaries of
/// nested regions are duplicated automatically) or a tet mesh (regions
/// extracted by connectivity). Tetra requires a tet mesh and fails with
/// a diagnostic when the per-element instance count would exceed
/// `tetra_budget`.
pub fn build_accel_set(
    mesh: MeshInput<'_>,
    strategy: Strategy,
    delta: f64,
    tetra_budget: usize,
) -> Result<AccelSet, Error> {
    if !(delta >= 0.0) {
        return Err(Error::Config("retraction delta must be >= 0".into()));
    }
    match (strategy, mesh) {
        (Strategy::Single, MeshInput::Surface(sm)) => build_single(sm, delta),
        (Strategy::Single, MeshInput::Tet(_)) => {
            Err(Error::Config("single strategy requires a surface mesh".into()))
        }
        (Strategy::Region, MeshInput::Surface(sm)) => build_region_from_surface(sm, delta),
        (Strategy::Region, MeshInput::Tet(tm)) => build_region_from_tets(tm, delta),
        (Strategy::Tetra, MeshInput::Tet(tm)) => build_tetra(tm, delta, tetra_budget),
        (Strategy::Tetra, MeshInput::Surface(_)) => {
            Err(Error::Config("tetra strategy requires a tetrahedral mesh".into()))
        }
    }
}

fn scene_bounds(vertices: &[Vec3]) -> Aabb {
    Aabb::from_points(vertices)
}

fn build_single(sm: &SurfaceMesh, delta: f64) -> Result<AccelSet, Error> {
    let tris: Vec<[Vec3; 3]> = (0..sm.triangles.len()).map(|i| sm.tri_vertices(i)).collect();
    let records = sm
        .records()?
        .into_iter()
        .map(|r| SbtRecord {
            normal: r.normal,
            media: [r.front_medium, r.back_medium],
            neighbor: [None, None],
        })
        .collect();
    let bvh = Bvh::build(&tris)?;
    Ok(AccelSet {
        strategy: Strategy::Single,
        instances: vec![AsInstance { bvh, records, tris, medium: 0 }],
        scene_aabb: scene_bounds(&sm.vertices),
        delta,
        tets: None,
    })
}

/// Working data for one region instance under construction.
struct RegionDraft {
    medium: u32,
    tris: Vec<[Vec3; 3]>,
    records: Vec<SbtRecord>,
}

fn build_region_from_surface(sm: &SurfaceMesh, delta: f64) -> Result<AccelSet, Error> {
    // Group label: explicit region_id when present, else the enclosed
    // (back-side) medium.
    let group_of = |i: usize| -> u32 {
        sm.region_id.as_ref().map_or(sm.back_medium[i], |r| r[i])
    };
    let mut group_ids: Vec<u32> = (0..sm.triangles.len()).map(group_of).collect();
    let mut order: Vec<u32> = group_ids.clone();
    order.sort_unstable();
    order.dedup();
    // Remap group labels to dense instance indices, in label order.
    for g in &mut group_ids {
        *g = order.binary_search(g).unwrap() as u32;
    }

    // Validate per-group winding assumptions: a uniform enclosed medium
    // and a uniform surrounding medium.
    let n_groups = order.len();
    let mut enclosed = vec![None; n_groups];
    let mut surrounding = vec![None; n_groups];
    for i in 0..sm.triangles.len() {
        let g = group_ids[i] as usize;
        for (slot, value) in
            [(&mut enclosed[g], sm.back_medium[i]), (&mut surrounding[g], sm.front_medium[i])]
        {
            match slot {
                None => *slot = Some(value),
                Some(v) if *v == value => {}
                Some(v) => {
                    return Err(Error::Config(format!(
                        "region group {} is not consistently wound: media {v} vs {value} \
                         (region surfaces need outward winding with uniform labels)",
                        order[g]
                    )))
                }
            }
        }
    }
    let enclosed: Vec<u32> = enclosed.into_iter().map(|m| m.unwrap_or(0)).collect();
    let surrounding: Vec<u32> = surrounding.into_iter().map(|m| m.unwrap_or(0)).collect();

    // Instance index of the region with a given medium, for neighbor
    // resolution. Ambiguous media are permitted until actually needed.
    let instance_of_medium = |m: u32| -> Result<Option<AsHandle>, Error> {
        if m == 0 {
            return Ok(None);
        }
        let matches: Vec<usize> = (0..n_groups).filter(|&g| enclosed[g] == m).collect();
        match matches.len() {
            1 => Ok(Some(AsHandle(matches[0] as u64))),
            0 => Err(Error::Config(format!(
                "region strategy: no region encloses medium {m}, but a surface borders it"
            ))),
            _ => Err(Error::Config(format!(
                "region strategy: medium {m} labels multiple regions; neighbor resolution \
                 is ambiguous (use a tet mesh input)"
            ))),
        }
    };

    let mut drafts: Vec<RegionDraft> = (0..n_groups)
        .map(|g| RegionDraft { medium: enclosed[g], tris: Vec::new(), records: Vec::new() })
        .collect();

    for i in 0..sm.triangles.len() {
        let g = group_ids[i] as usize;
        let [a, b, c] = sm.tri_vertices(i);
        let rec = crate::geometry::triangle_record(a, b, c, sm.front_medium[i], sm.back_medium[i])?;
        let outward_neighbor = instance_of_medium(sm.front_medium[i])?;
        drafts[g].tris.push([a, b, c]);
        drafts[g].records.push(SbtRecord {
            normal: rec.normal,
            media: [sm.front_medium[i], sm.back_medium[i]],
            neighbor: [outward_neighbor, Some(AsHandle(g as u64))],
        });
        // Nested regions see this surface from outside: duplicate it,
        // flipped, into the enclosing instance.
        if let Some(AsHandle(e)) = outward_neighbor {
            let e = e as usize;
            drafts[e].tris.push([a, c, b]);
            drafts[e].records.push(SbtRecord {
                normal: -rec.normal,
                media: [sm.back_medium[i], sm.front_medium[i]],
                neighbor: [Some(AsHandle(g as u64)), Some(AsHandle(e as u64))],
            });
        }
    }

    let mut instances = Vec::with_capacity(n_groups);
    for (g, draft) in drafts.into_iter().enumerate() {
        let bvh = Bvh::build(&draft.tris).map_err(|_| {
            Error::Config(format!("region group {} has no triangles", order[g]))
        })?;
        instances.push(AsInstance {
            bvh,
            records: draft.records,
            tris: draft.tris,
            medium: draft.medium,
        });
    }
    let _ = surrounding; // labels validated above
    Ok(AccelSet {
        strategy: Strategy::Region,
        instances,
        scene_aabb: scene_bounds(&sm.vertices),
        delta,
        tets: None,
    })
}

fn build_region_from_tets(tm: &TetMesh, delta: f64) -> Result<AccelSet, Error> {
    let regions = region_decomposition(tm)?;
    let mut instances = Vec::with_capacity(regions.len());
    for region in &regions {
        let sm = &region.mesh;
        let tris: Vec<[Vec3; 3]> = (0..sm.triangles.len()).map(|i| sm.tri_vertices(i)).collect();
        let mut records = Vec::with_capacity(tris.len());
        for i in 0..sm.triangles.len() {
            let [a, b, c] = sm.tri_vertices(i);
            let rec =
                crate::geometry::triangle_record(a, b, c, sm.front_medium[i], sm.back_medium[i])?;
            records.push(SbtRecord {
                normal: rec.normal,
                media: [sm.front_medium[i], sm.back_medium[i]],
                neighbor: [
                    region.neighbor_region[i].map(|r| AsHandle(r as u64)),
                    Some(AsHandle(instances.len() as u64)),
                ],
            });
        }
        let bvh = Bvh::build(&tris)?;
        instances.push(AsInstance { bvh, records, tris, medium: region.medium });
    }
    Ok(AccelSet {
        strategy: Strategy::Region,
        instances,
        scene_aabb: scene_bounds(&tm.vertices),
        delta,
        tets: None,
    })
}

fn build_tetra(tm: &TetMesh, delta: f64, budget: usize) -> Result<AccelSet, Error> {
    if tm.tets.len() > budget {
        return Err(Error::Config(format!(
            "tetra strategy needs {} per-element instances, exceeding the memory budget of {} \
             (raise the budget or use the region/single strategy)",
            tm.tets.len(),
            budget
        )));
    }
    let adjacency = tm.face_adjacency()?;
    let mut instances = Vec::with_capacity(tm.tets.len());
    for t in 0..tm.tets.len() {
        let verts = tm.tet_vertices(t);
        let mut tris = Vec::with_capacity(4);
        let mut records = Vec::with_capacity(4);
        for (f, local) in OUTWARD_FACES.iter().enumerate() {
            let tri = [verts[local[0]], verts[local[1]], verts[local[2]]];
            let (n_medium, n_handle) = match adjacency[t][f] {
                Some(n) => (tm.medium[n as usize], Some(AsHandle(n as u64))),
                None => (0, None),
            };
            let rec = crate::geometry::triangle_record(tri[0], tri[1], tri[2], n_medium, tm.medium[t])?;
            tris.push(tri);
            records.push(SbtRecord {
                normal: rec.normal,
                media: [n_medium, tm.medium[t]],
                neighbor: [n_handle, Some(AsHandle(t as u64))],
            });
        }
        let bvh = Bvh::build(&tris)?;
        instances.push(AsInstance { bvh, records, tris, medium: tm.medium[t] });
    }
    Ok(AccelSet {
        strategy: Strategy::Tetra,
        instances,
        scene_aabb: scene_bounds(&tm.vertices),
        delta,
        tets: Some(tm.clone()),
    })
}

impl AccelSet {
    /// Instance for a photon's handle (Single photons carry no handle
    /// and use the sole instance).
    #[inline]
    pub fn instance(&self, handle: Option<AsHandle>) -> &AsInstance {
        match handle {
            Some(AsHandle(i)) => &self.instances[i as usize],
            None => &self.instances[0],
        }
    }

    #[inline]
    pub fn cull_front(&self) -> bool {
        self.strategy != Strategy::Single
    }

    #[inline]
    fn uses_handles(&self) -> bool {
        self.strategy != Strategy::Single
    }

    /// Medium and instance containing a point, by strategy-appropriate
    /// point location. For Single the handle is always None.
    pub fn locate(&self, p: Vec3) -> (u32, Option<AsHandle>) {
        match self.strategy {
            Strategy::Single => (self.containment_medium(p), None),
            Strategy::Region => {
                for (i, inst) in self.instances.iter().enumerate() {
                    if instance_contains(inst, p) {
                        return (inst.medium, Some(AsHandle(i as u64)));
                    }
                }
                (0, None)
            }
            Strategy::Tetra => {
                let tets = self.tets.as_ref().expect("tetra set retains its elements");
                match tets.locate(p) {
                    Some(t) => (tets.medium[t], Some(AsHandle(t as u64))),
                    None => (0, None),
                }
            }
        }
    }

    /// Medium containing a point (the leak detector's containment
    /// check), always evaluated in double precision.
    pub fn containment_medium(&self, p: Vec3) -> u32 {
        match self.strategy {
            Strategy::Single => bvh_containment(&self.instances[0], p),
            _ => self.locate(p).0,
        }
    }
}

/// BVH-backed point containment with the same direction-fallback rule
/// as the brute-force oracle.
fn bvh_containment(inst: &AsInstance, p: Vec3) -> u32 {
    const EPS: f64 = 1e-9;
    let mut last = 0;
    for dir in crate::geometry::CONTAINMENT_DIRS {
        let dir = dir.normalized();
        let q = RayQuery::new(p, dir, f64::MAX);
        match inst.bvh.intersect_closest(&q) {
            None => return 0,
            Some(h) => {
                let medium = match h.face {
                    Face::Front => inst.records[h.tri as usize].media[0],
                    Face::Back => inst.records[h.tri as usize].media[1],
                };
                let grazing =
                    h.t < EPS || h.u < EPS || h.v < EPS || h.u + h.v > 1.0 - EPS;
                if !grazing {
                    return medium;
                }
                last = medium;
            }
        }
    }
    last
}

/// True if `p` is inside the closed surface of `inst` (nearest hit in
/// any clean direction is a back face).
fn instance_contains(inst: &AsInstance, p: Vec3) -> bool {
    const EPS: f64 = 1e-9;
    let mut last = false;
    for dir in crate::geometry::CONTAINMENT_DIRS {
        let dir = dir.normalized();
        let q = RayQuery::new(p, dir, f64::MAX);
        match inst.bvh.intersect_closest(&q) {
            None => return false,
            Some(h) => {
                let inside = h.face == Face::Back;
                let grazing =
                    h.t < EPS || h.u < EPS || h.v < EPS || h.u + h.v > 1.0 - EPS;
                if !grazing {
                    return inside;
                }
                last = inside;
            }
        }
    }
    last
}

/// The ray payload: everything a photon carries between events. The
/// RNG stream lives with the worker that owns the photon.
#[derive(Debug, Clone)]
pub struct PhotonState {
    pub p: Vec3,
    /// Unit direction.
    pub v: Vec3,
    /// Remaining unit-less scattering length.
    pub s: f64,
    /// Packet weight in (0, 1].
    pub w: f64,
    /// Time of flight, ns.
    pub t: f64,
    pub medium: u32,
    pub handle: Option<AsHandle>,
    pub alive: bool,
    /// Triangle resolved by the previous cast, excluded from the next
    /// one so a boundary event cannot re-resolve itself. Cleared at
    /// scattering events.
    last_hit: Option<(u32, u32)>,
}

impl PhotonState {
    pub fn launched(p: Vec3, v: Vec3, s: f64, medium: u32, handle: Option<AsHandle>) -> Self {
        PhotonState { p, v, s, w: 1.0, t: 0.0, medium, handle, alive: true, last_hit: None }
    }
}

/// Why a photon stopped.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Termination {
    Exited,
    TimedOut,
    Leaked,
    /// Event cap hit (leak-class liveness guard).
    CapAborted,
}

/// What one event did to the photon.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StepOutcome {
    Scattered,
    /// Boundary processed (reflection or crossing) without termination.
    Boundary,
    Exited,
    Leaked,
}

/// Trace-event labels for recording photon histories.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EventKind {
    Launch,
    Scatter,
    Boundary,
    Exit,
    Leak,
    Timeout,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceEvent {
    pub kind: EventKind,
    pub p: Vec3,
}

/// Receiver for per-photon event streams; the no-op sink compiles away.
pub trait EventSink {
    fn record(&mut self, kind: EventKind, p: Vec3);
}

pub struct NoSink;

impl EventSink for NoSink {
    #[inline(always)]
    fn record(&mut self, _kind: EventKind, _p: Vec3) {}
}

/// Keeps the last four events (enough to classify what preceded a
/// termination).
#[derive(Debug, Clone, Default)]
pub struct TailSink {
    ring: [Option<TraceEvent>; 4],
    next: usize,
}

impl TailSink {
    pub fn clear(&mut self) {
        *self = TailSink::default();
    }

    /// Events in chronological order.
    pub fn tail(&self) -> Vec<TraceEvent> {
        let mut out = Vec::new();
        for k in 0..4 {
            if let Some(e) = self.ring[(self.next + k) % 4] {
                out.push(e);
            }
        }
        out
    }
}

impl EventSink for TailSink {
    #[inline]
    fn record(&mut self, kind: EventKind, p: Vec3) {
        self.ring[self.next] = Some(TraceEvent { kind, p });
        self.next = (self.next + 1) % 4;
    }
}

/// Records every event.
#[derive(Debug, Default)]
pub struct FullSink(pub Vec<TraceEvent>);

impl EventSink for FullSink {
    #[inline]
    fn record(&mut self, kind: EventKind, p: Vec3) {
        self.0.push(TraceEvent { kind, p });
    }
}

/// Trace-time knobs.
#[derive(Debug, Clone, Copy)]
pub struct TraceSettings {
    /// Time gate, ns.
    pub t_max: f64,
    pub precision: Precision,
    /// Verify containment at every scattering event and terminate
    /// mismatches as leaks.
    pub leak_detect: bool,
    pub max_events: u64,
}

/// In-memory scene: geometry plus the media table (index 0 = exterior).
#[derive(Debug, Clone)]
pub struct SceneData {
    pub surface: Option<SurfaceMesh>,
    pub tets: Option<TetMesh>,
    pub media: Vec<Medium>,
}

/// Everything needed to run a simulation on a scene.
#[derive(Debug, Clone)]
pub struct RunSettings {
    pub nphoton: u64,
    pub seed: u64,
    /// 0 = use available hardware parallelism.
    pub workers: u32,
    pub strategy: Strategy,
    /// Ray-origin retraction, mm.
    pub delta: f64,
    pub t_max: f64,
    pub precision: Precision,
    /// None picks the default: on for single precision (where the
    /// failure class exists), off for double.
    pub leak_detect: Option<bool>,
    pub max_events: u64,
    pub grid: GridSpec,
    pub source: SourceSpec,
    /// Track per-voxel second moments for error estimates.
    pub track_variance: bool,
    pub tetra_budget: usize,
}

impl RunSettings {
    pub fn new(grid: GridSpec, source: SourceSpec) -> Self {
        RunSettings {
            nphoton: 0,
            seed: 1,
            workers: 0,
            strategy: Strategy::Single,
            delta: 1e-5,
            t_max: 5.0,
            precision: Precision::Double,
            leak_detect: None,
            max_events: DEFAULT_MAX_EVENTS,
            grid,
            source,
            track_variance: false,
            tetra_budget: DEFAULT_TETRA_BUDGET,
        }
    }
}

/// A prepared simulation: validated scene, built acceleration set, and
/// resolved settings. Shared read-only across worker threads.
pub struct Simulation {
    pub accel: AccelSet,
    pub media: Vec<Medium>,
    pub source: SourceSpec,
    pub grid_spec: GridSpec,
    pub settings: TraceSettings,
    pub seed: u64,
    pub workers: u32,
    pub nphoton: u64,
    pub track_variance: bool,
}

impl Simulation {
    pub fn prepare(scene: &SceneData, rs: &RunSettings) -> Result<Simulation, Error> {
        if scene.media.is_empty() {
            return Err(Error::Config("media table is empty (index 0 is the exterior)".into()));
        }
        for (i, m) in scene.media.iter().enumerate() {
            m.validate(i)?;
        }
        rs.grid.validate()?;
        let mut source = rs.source.clone();
        source.validate()?;
        if source.initial_medium == InitialMedium::Dynamic && rs.strategy != Strategy::Single {
            return Err(Error::Config(
                "dynamic initial-medium resolution requires the single strategy".into(),
            ));
        }
        if !(rs.t_max > 0.0) {
            return Err(Error::Config("t_max must be > 0".into()));
        }

        // Medium labels referenced by the geometry must exist.
        let max_id = match rs.strategy {
            Strategy::Tetra => scene
                .tets
                .as_ref()
                .map(|t| t.medium.iter().copied().max().unwrap_or(0))
                .unwrap_or(0),
            _ => scene.surface.as_ref().map(|s| s.max_medium_id()).unwrap_or(0),
        };
        if max_id as usize >= scene.media.len() {
            return Err(Error::Config(format!(
                "mesh references medium {max_id} but only {} media are defined",
                scene.media.len()
            )));
        }

        let accel = match rs.strategy {
            Strategy::Single | Strategy::Region => {
                let sm = scene.surface.as_ref();
                match (rs.strategy, sm, scene.tets.as_ref()) {
                    (_, Some(sm), _) => {
                        build_accel_set(MeshInput::Surface(sm), rs.strategy, rs.delta, rs.tetra_budget)?
                    }
                    (Strategy::Region, None, Some(tm)) => {
                        build_accel_set(MeshInput::Tet(tm), Strategy::Region, rs.delta, rs.tetra_budget)?
                    }
                    _ => {
                        return Err(Error::Config(
                            "this strategy requires a surface mesh (mesh.surface)".into(),
                        ))
                    }
                }
            }
            Strategy::Tetra => match scene.tets.as_ref() {
                Some(tm) => {
                    build_accel_set(MeshInput::Tet(tm), Strategy::Tetra, rs.delta, rs.tetra_budget)?
                }
                None => {
                    return Err(Error::Config(
                        "tetra strategy requires a tetrahedral mesh file (mesh.tet)".into(),
                    ))
                }
            },
        };

        // Fail fast when a fixed-medium pencil source disagrees with
        // the geometry it launches into (Region/Tetra need the right
        // starting instance).
        if let (InitialMedium::Fixed(m), SourceKind::Pencil { position, .. }, true) =
            (source.initial_medium, &source.kind, accel.uses_handles())
        {
            let (found, _) = accel.locate(*position);
            if found != m {
                return Err(Error::Config(format!(
                    "source initial medium {m} does not match the geometry at the launch \
                     point (found medium {found})"
                )));
            }
        }

        let workers = if rs.workers == 0 {
            std::thread::available_parallelism().map(|n| n.get() as u32).unwrap_or(1)
        } else {
            rs.workers
        };
        let leak_detect =
            rs.leak_detect.unwrap_or(rs.precision == Precision::Single);
        Ok(Simulation {
            accel,
            media: scene.media.clone(),
            source,
            grid_spec: rs.grid,
            settings: TraceSettings {
                t_max: rs.t_max,
                precision: rs.precision,
                leak_detect,
                max_events: rs.max_events,
            },
            seed: rs.seed,
            workers,
            nphoton: rs.nphoton,
            track_variance: rs.track_variance,
        })
    }

    fn new_grid(&self) -> FluenceGrid {
        if self.track_variance {
            FluenceGrid::with_variance(self.grid_spec)
        } else {
            FluenceGrid::new(self.grid_spec)
        }
    }

    /// Runs the full simulation: photons split evenly across workers
    /// (remainder to the last), per-worker RNG streams derived from
    /// (seed, worker index), buffers merged in worker order, fluence
    /// normalized. Bit-reproducible for fixed (seed, workers).
    pub fn run(&self) -> Result<(FluenceGrid, Summary), Error> {
        let start = std::time::Instant::now();
        if self.nphoton == 0 {
            let summary = Summary { workers: self.workers, ..Summary::default() };
            return Ok((self.new_grid(), summary));
        }
        let w = self.workers.max(1) as u64;
        let base = self.nphoton / w;
        let counts: Vec<u64> =
            (0..w).map(|i| if i == w - 1 { base + self.nphoton % w } else { base }).collect();

        let results: Vec<(FluenceGrid, Summary)> = std::thread::scope(|scope| {
            let handles: Vec<_> = counts
                .iter()
                .enumerate()
                .map(|(i, &n)| scope.spawn(move || self.run_worker(i as u32, n)))
                .collect();
            handles.into_iter().map(|h| h.join().expect("worker thread panicked")).collect()
        });

        let (grids, summaries): (Vec<_>, Vec<_>) = results.into_iter().unzip();
        let mut grid = merge_grids(grids)?;
        grid.normalize(self.nphoton)?;
        let mut summary = Summary::merge(summaries);
        summary.workers = self.workers;
        summary.wall_time_s = start.elapsed().as_secs_f64();
        Ok((grid, summary))
    }

    /// Runs one worker's photon batch on its own stream; returns the
    /// unnormalized deposition grid and the worker summary.
    pub fn run_worker(&self, worker: u32, nphoton: u64) -> (FluenceGrid, Summary) {
        let mut rng = Rng::split(self.seed, worker as u64);
        let mut grid = self.new_grid();
        let mut summary = Summary { workers: 1, ..Summary::default() };
        let mut cache = None;
        for _ in 0..nphoton {
            self.trace_one(&mut rng, &mut grid, &mut cache, &mut summary, &mut NoSink);
        }
        (grid, summary)
    }

    /// Launches and traces a single photon, updating the tallies.
    /// Returns the terminal state and why it stopped.
    pub fn trace_one<S: EventSink>(
        &self,
        rng: &mut Rng,
        grid: &mut FluenceGrid,
        launch_cache: &mut Option<(u32, Option<AsHandle>)>,
        summary: &mut Summary,
        sink: &mut S,
    ) -> (PhotonState, Termination) {
        let l = launch(&self.source, rng);
        summary.nphoton += 1;
        summary.launched_weight += 1.0;
        sink.record(EventKind::Launch, l.p);

        let cacheable = matches!(self.source.kind, SourceKind::Pencil { .. });
        let start = match launch_cache {
            Some(c) if cacheable => Some(*c),
            _ => {
                let resolved = match self.source.initial_medium {
                    InitialMedium::Dynamic => {
                        match resolve_initial_medium(&self.accel, l.p, l.v, self.settings.precision)
                            .expect("dynamic resolution is validated at prepare time")
                        {
                            Some(m) => Some((m, None)),
                            None => None, // aux ray missed the scene
                        }
                    }
                    InitialMedium::Fixed(m) => {
                        if self.accel.uses_handles() {
                            // Point location is authoritative for the
                            // starting instance.
                            Some(self.accel.locate(l.p))
                        } else {
                            Some((m, None))
                        }
                    }
                };
                if cacheable {
                    *launch_cache = resolved;
                }
                resolved
            }
        };

        let Some((medium, handle)) = start else {
            // Terminated at launch: counts as exited with full weight.
            summary.exited_weight += 1.0;
            let mut ph = PhotonState::launched(l.p, l.v, l.s, 0, None);
            ph.alive = false;
            sink.record(EventKind::Exit, l.p);
            return (ph, Termination::Exited);
        };

        let mut ph = PhotonState::launched(l.p, l.v, l.s, medium, handle);
        let mut absorbed = 0.0;
        let term = self.trace_photon(&mut ph, rng, grid, &mut absorbed, sink);
        summary.absorbed_weight += absorbed;
        match term {
            Termination::Exited => summary.exited_weight += ph.w,
            Termination::TimedOut => summary.timed_out_weight += ph.w,
            Termination::Leaked => {
                summary.leaked_weight += ph.w;
                summary.leaked_count += 1;
            }
            Termination::CapAborted => {
                summary.leaked_weight += ph.w;
                summary.leaked_count += 1;
                summary.cap_aborted_count += 1;
            }
        }
        (ph, term)
    }

    /// The ray-gen loop: casts and dispatches events until the photon
    /// exits, leaks, times out, or trips the event cap.
    pub fn trace_photon<S: EventSink>(
        &self,
        ph: &mut PhotonState,
        rng: &mut Rng,
        grid: &mut FluenceGrid,
        absorbed: &mut f64,
        sink: &mut S,
    ) -> Termination {
        let mut events: u64 = 0;
        let mut stuck: u32 = 0;
        loop {
            if ph.t >= self.settings.t_max {
                ph.alive = false;
                sink.record(EventKind::Timeout, ph.p);
                return Termination::TimedOut;
            }
            events += 1;
            if events > self.settings.max_events || stuck > STUCK_LIMIT {
                ph.alive = false;
                sink.record(EventKind::Leak, ph.p);
                return Termination::CapAborted;
            }
            let before = ph.p;
            match self.step_photon(ph, rng, grid, absorbed, sink) {
                StepOutcome::Boundary => {
                    stuck = if ph.p == before { stuck + 1 } else { 0 };
                }
                StepOutcome::Scattered => stuck = 0,
                StepOutcome::Exited => return Termination::Exited,
                StepOutcome::Leaked => return Termination::Leaked,
            }
        }
    }

    /// One cast plus its event handler (miss = scatter/absorb,
    /// closest-hit = boundary physics).
    pub fn step_photon<S: EventSink>(
        &self,
        ph: &mut PhotonState,
        rng: &mut Rng,
        grid: &mut FluenceGrid,
        absorbed: &mut f64,
        sink: &mut S,
    ) -> StepOutcome {
        let med = self.media[ph.medium as usize];
        let delta = self.accel.delta;
        let scattering = med.mus > 0.0;
        let d_max =
            if scattering { ph.s / med.mus + delta } else { self.settings.precision.max_distance() };
        let inst_idx = ph.handle.map_or(0usize, |h| h.0 as usize);
        let instance = &self.accel.instances[inst_idx];
        let exclude =
            ph.last_hit.and_then(|(i, tri)| (i as usize == inst_idx).then_some(tri));
        // The hit rule stays strictly positive (t > 0) even with the
        // retraction: detection robustness comes from the true boundary
        // distance sitting near `delta` instead of near zero. Restored
        // distances clamp at zero, and the last-hit exclusion (plus
        // front-face culling) keeps a cast from re-resolving the
        // boundary it starts on.
        let mut q = RayQuery {
            origin: ph.p - ph.v * delta,
            dir: ph.v,
            d_max,
            t_min: 0.0,
            cull_front: self.accel.cull_front(),
            exclude,
            precision: self.settings.precision,
        };

        // Zero-advance hits that change nothing (same medium, same
        // instance) are degenerate re-resolutions of a surface the
        // photon is sitting on, e.g. a launch point on a face shared by
        // several coplanar triangles. Skip past them by raising the
        // cast floor; physics is unaffected.
        let mut result = instance.bvh.intersect_closest(&q);
        for _ in 0..16 {
            let Some(hit) = result else { break };
            if hit.t > delta {
                break;
            }
            let rec = &instance.records[hit.tri as usize];
            let side = if hit.face == Face::Front { 1 } else { 0 };
            let same_instance = match (rec.neighbor[side], ph.handle) {
                (None, None) => true,
                (Some(a), Some(b)) => a == b,
                _ => false,
            };
            if rec.media[side] != ph.medium || !same_instance {
                break;
            }
            q.t_min = hit.t;
            result = instance.bvh.intersect_closest(&q);
        }

        match result {
            None => {
                if !scattering {
                    // Nothing ahead in a non-scattering medium: the
                    // photon has left the meshed domain.
                    ph.alive = false;
                    sink.record(EventKind::Exit, ph.p);
                    return StepOutcome::Exited;
                }
                // Leak prefilter before moving: is there a boundary near
                // this segment that a double-precision cast can see but
                // the reduced-precision cast missed? The look-back
                // window covers positions already rounded onto (or just
                // past) a surface. Positive prefilters are confirmed by
                // the containment oracle at the arrival point.
                let missed_boundary = self.settings.leak_detect
                    && self.settings.precision == Precision::Single
                    && instance
                        .bvh
                        .intersect_closest(&RayQuery {
                            precision: Precision::Double,
                            t_min: RECAST_LOOKBACK,
                            ..q
                        })
                        .is_some();
                // Miss: the packet reaches its next scattering site.
                let hop = ph.s / med.mus;
                let p1 = ph.p + ph.v * hop;
                let w0 = ph.w;
                ph.w = grid.deposit_segment(ph.p, p1, ph.w, med.mua);
                *absorbed += w0 - ph.w;
                ph.t = advance_time(ph.t, hop, med.n);
                ph.p = if self.settings.precision == Precision::Single {
                    snap_position(p1)
                } else {
                    p1
                };
                ph.last_hit = None;

                if !self.accel.scene_aabb.contains(p1, GEOM_EPS) {
                    ph.alive = false;
                    sink.record(EventKind::Leak, p1);
                    return StepOutcome::Leaked;
                }
                if self.settings.leak_detect
                    && missed_boundary
                    && self.accel.containment_medium(ph.p) != ph.medium
                {
                    ph.alive = false;
                    sink.record(EventKind::Leak, ph.p);
                    return StepOutcome::Leaked;
                }

                sink.record(EventKind::Scatter, ph.p);
                let sample = sample_hg(med.g, rng.next_unit(), rng.next_unit());
                ph.v = rotate_direction(ph.v, &sample);
                ph.s = sample_step(rng.next_unit());
                StepOutcome::Scattered
            }
            Some(hit) => {
                // Restore the retracted distance before advancing.
                let d = (hit.t - delta).max(0.0);
                let p1 = ph.p + ph.v * d;
                let w0 = ph.w;
                ph.w = grid.deposit_segment(ph.p, p1, ph.w, med.mua);
                *absorbed += w0 - ph.w;
                ph.t = advance_time(ph.t, d, med.n);
                if scattering {
                    ph.s = (ph.s - d * med.mus).max(0.0);
                }
                ph.p = if self.settings.precision == Precision::Single {
                    snap_position(p1)
                } else {
                    p1
                };
                ph.last_hit = Some((inst_idx as u32, hit.tri));

                let rec = &instance.records[hit.tri as usize];
                let (entering_side, n_or) = match hit.face {
                    Face::Front => (1usize, rec.normal), // came from the front side
                    Face::Back => (0usize, -rec.normal),
                };
                let other_medium = rec.media[entering_side];
                let other_handle = rec.neighbor[entering_side];
                let n2 = self.media[other_medium as usize].n;
                sink.record(EventKind::Boundary, p1);

                let crossed = if med.n == n2 {
                    true // index-matched: pass through, no draw
                } else {
                    let cos_i = -ph.v.dot(n_or);
                    if cos_i <= 0.0 {
                        // Face side and geometry disagree at machine
                        // precision (reduced-precision mode): mirror
                        // across the plane and stay.
                        ph.v = (ph.v - n_or * (2.0 * ph.v.dot(n_or))).normalized();
                        false
                    } else if rng.next_unit() < fresnel_reflectance(med.n, n2, cos_i.min(1.0)) {
                        ph.v = reflect(ph.v, n_or);
                        false
                    } else {
                        ph.v = refract(ph.v, n_or, med.n, n2);
                        true
                    }
                };

                if crossed {
                    if other_medium == 0 {
                        ph.medium = 0;
                        ph.handle = None;
                        ph.alive = false;
                        sink.record(EventKind::Exit, p1);
                        return StepOutcome::Exited;
                    }
                    if self.accel.uses_handles() && other_handle.is_none() {
                        panic!(
                            "binding-record lookup failure: crossing into medium {other_medium} \
                             without a neighbor instance"
                        );
                    }
                    ph.medium = other_medium;
                    ph.handle = other_handle;
                }
                StepOutcome::Boundary
            }
        }
    }
}

/// Loads the scene named by a config, prepares the pipeline, and runs
/// it. Partial results are never emitted: any failure aborts before
/// output.
pub fn run_simulation(cfg: &SimConfig) -> Result<(FluenceGrid, Summary), Error> {
    let scene = cfg.load_scene()?;
    let rs = cfg.run_settings()?;
    let sim = Simulation::prepare(&scene, &rs)?;
    sim.run()
}
