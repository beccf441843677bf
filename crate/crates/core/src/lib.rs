//! Mesh-based Monte Carlo photon transport structured as a software
//! ray-tracing pipeline.
//!
//! The crate simulates light propagation through triangulated tissue
//! models. Geometry is organized into bounding-volume hierarchies under
//! one of three partitioning strategies (a single hierarchy over all
//! triangles, one per enclosed region, or one per tetrahedral element),
//! and photon stepping is driven by ray-gen / closest-hit / miss event
//! handlers over per-triangle binding records. Output is volumetric
//! fluence (mm^-2) on a voxel grid decoupled from the mesh, plus an
//! energy-conservation summary.
//!
//! Modules follow the pipeline: [`geometry`] loads and validates meshes,
//! [`accel`] builds and queries BVHs, [`physics`] holds the stochastic
//! kernels, [`sources`] launches photons, [`pipeline`] runs the event
//! loop, [`scoring`] accumulates fluence, [`benchmarks`] generates the
//! standard test domains, and [`config`] ties everything to files.

pub mod accel;
pub mod benchmarks;
pub mod config;
pub mod geometry;
pub mod math;
pub mod physics;
pub mod pipeline;
pub mod scoring;
pub mod sources;

use std::path::PathBuf;

pub use accel::{Aabb, Bvh, Face, Hit, Precision, RayQuery};
pub use config::SimConfig;
pub use geometry::{Medium, SurfaceMesh, TetMesh, TriangleRecord};
pub use math::Vec3;
pub use physics::Rng;
pub use pipeline::{run_simulation, AccelSet, PhotonState, Strategy};
pub use scoring::{FluenceGrid, GridSpec, Summary};
pub use sources::SourceSpec;

/// Crate-wide error type.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("json error in {path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
    #[error("mesh error: {0}")]
    Mesh(String),
    #[error("acceleration structure error: {0}")]
    Accel(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("rng error: {0}")]
    Rng(String),
    #[error("scoring error: {0}")]
    Scoring(String),
    #[error("benchmark error: {0}")]
    Benchmark(String),
}

impl Error {
    /// True for errors caused by user-provided inputs (configs, meshes,
    /// flags) as opposed to runtime failures; the CLI maps these to
    /// exit code 1.
    pub fn is_config_class(&self) -> bool {
        matches!(
            self,
            Error::Io { .. }
                | Error::Json { .. }
                | Error::Mesh(_)
                | Error::Config(_)
                | Error::Benchmark(_)
        )
    }
}
