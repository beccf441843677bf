//! Photon launchers: pencil beam, planar wide-field, and volumetric
//! sources, with fixed per-kind RNG draw counts so streams stay
//! auditable. Sources may sit anywhere relative to the mesh; an
//! auxiliary ray resolves the launch medium at run time when it is not
//! known up front.

use serde::{Deserialize, Serialize};

use crate::accel::{Precision, RayQuery};
use crate::math::Vec3;
use crate::physics::{sample_step, Rng};
use crate::pipeline::{AccelSet, Strategy};
use crate::Error;

/// How the launch medium is determined: a fixed label, or dynamically by
/// casting an auxiliary ray at launch time (Single-strategy only).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InitialMedium {
    Fixed(u32),
    Dynamic,
}

impl Serialize for InitialMedium {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            InitialMedium::Fixed(m) => s.serialize_u32(*m),
            InitialMedium::Dynamic => s.serialize_str("dynamic"),
        }
    }
}

impl<'de> Deserialize<'de> for InitialMedium {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Id(u32),
            Tag(String),
        }
        match Raw::deserialize(d)? {
            Raw::Id(m) => Ok(InitialMedium::Fixed(m)),
            Raw::Tag(t) if t == "dynamic" => Ok(InitialMedium::Dynamic),
            Raw::Tag(t) => Err(serde::de::Error::custom(format!(
                "initial_medium must be a medium id or \"dynamic\", got {t:?}"
            ))),
        }
    }
}

/// Source geometry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum SourceKind {
    /// Collimated point source: fixed position and direction.
    Pencil { position: Vec3, direction: Vec3 },
    /// Uniform rectangle spanned by two edge vectors, collimated along
    /// `direction`.
    Planar { position: Vec3, direction: Vec3, edge1: Vec3, edge2: Vec3 },
    /// Uniform positions in an axis-aligned box, isotropic directions.
    /// `min == max` degenerates to an isotropic point source.
    Volume { min: Vec3, max: Vec3 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceSpec {
    #[serde(flatten)]
    pub kind: SourceKind,
    pub initial_medium: InitialMedium,
}

impl SourceSpec {
    /// Validates the spec and normalizes direction vectors in place.
    pub fn validate(&mut self) -> Result<(), Error> {
        match &mut self.kind {
            SourceKind::Pencil { direction, .. } => normalize_direction(direction)?,
            SourceKind::Planar { direction, edge1, edge2, .. } => {
                normalize_direction(direction)?;
                if edge1.cross(*edge2).norm() < 1e-12 {
                    return Err(Error::Config(
                        "planar source edge vectors must be linearly independent".into(),
                    ));
                }
            }
            SourceKind::Volume { min, max } => {
                if min.x > max.x || min.y > max.y || min.z > max.z {
                    return Err(Error::Config("volume source box has min > max".into()));
                }
            }
        }
        Ok(())
    }
}

fn normalize_direction(v: &mut Vec3) -> Result<(), Error> {
    let n = v.norm();
    if !(n.is_finite() && n > 1e-12) {
        return Err(Error::Config("source direction must be a nonzero vector".into()));
    }
    *v = *v / n;
    Ok(())
}

/// Position, direction, and initial scattering length of one launched
/// packet (weight 1, time 0).
#[derive(Debug, Clone, Copy)]
pub struct Launch {
    pub p: Vec3,
    pub v: Vec3,
    pub s: f64,
}

/// Draws a launch state. RNG consumption is fixed per source kind:
/// pencil draws only the scattering length (1), planar adds 2 position
/// draws (3 total), volume adds 3 position and 2 direction draws (6
/// total).
pub fn launch(src: &SourceSpec, rng: &mut Rng) -> Launch {
    let (p, v) = match &src.kind {
        SourceKind::Pencil { position, direction } => (*position, *direction),
        SourceKind::Planar { position, direction, edge1, edge2 } => {
            let u1 = rng.next_unit();
            let u2 = rng.next_unit();
            (*position + *edge1 * u1 + *edge2 * u2, *direction)
        }
        SourceKind::Volume { min, max } => {
            let ext = *max - *min;
            let p = Vec3::new(
                min.x + ext.x * rng.next_unit(),
                min.y + ext.y * rng.next_unit(),
                min.z + ext.z * rng.next_unit(),
            );
            let cos_t = 2.0 * rng.next_unit() - 1.0;
            let sin_t = (1.0 - cos_t * cos_t).max(0.0).sqrt();
            let phi = std::f64::consts::TAU * rng.next_unit();
            let (sin_p, cos_p) = phi.sin_cos();
            (p, Vec3::new(sin_t * cos_p, sin_t * sin_p, cos_t))
        }
    };
    Launch { p, v, s: sample_step(rng.next_unit()) }
}

/// Resolves the medium enclosing a launch point by casting an auxiliary
/// ray along the launch direction with the infinity distance sentinel.
///
/// Returns `Ok(None)` when the ray misses the scene entirely (the
/// photon is terminated immediately). Only the Single strategy supports
/// this: its one hierarchy spans the whole scene, so no enclosing
/// instance has to be known before the query.
pub fn resolve_initial_medium(
    accel: &AccelSet,
    p: Vec3,
    v: Vec3,
    precision: Precision,
) -> Result<Option<u32>, Error> {
    if accel.strategy != Strategy::Single {
        return Err(Error::Config(
            "dynamic initial-medium resolution requires the single strategy".into(),
        ));
    }
    let instance = accel.instance(None);
    let q = RayQuery::new(p, v, precision.max_distance()).with_precision(precision);
    match instance.bvh.intersect_closest(&q) {
        None => Ok(None),
        Some(hit) => {
            let rec = &instance.records[hit.tri as usize];
            // Front-face hit: the origin lies on the front side.
            Ok(Some(match hit.face {
                crate::accel::Face::Front => rec.media[0],
                crate::accel::Face::Back => rec.media[1],
            }))
        }
    }
}
