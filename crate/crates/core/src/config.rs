//! Run configuration: a JSON file naming the meshes, media, source,
//! grid, and run parameters, with CLI-style overrides layered on top.
//! Mesh paths in the file are resolved relative to the config file's
//! directory at parse time.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::accel::Precision;
use crate::geometry::{Medium, SurfaceMesh, TetMesh};
use crate::pipeline::{RunSettings, SceneData, Strategy, DEFAULT_MAX_EVENTS, DEFAULT_TETRA_BUDGET};
use crate::scoring::GridSpec;
use crate::sources::SourceSpec;
use crate::Error;

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct MeshPaths {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub surface: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tet: Option<PathBuf>,
}

/// A fully validated simulation configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub mesh: MeshPaths,
    /// Optical properties by medium id; index 0 is the exterior.
    pub media: Vec<Medium>,
    pub source: SourceSpec,
    pub grid: GridSpec,
    /// Photon count; the JSON form also accepts scientific-notation
    /// strings such as "1e8".
    #[serde(deserialize_with = "de_photons", default)]
    pub photons: u64,
    #[serde(default = "default_seed")]
    pub seed: u64,
    /// 0 = available hardware parallelism.
    #[serde(default)]
    pub workers: u32,
    #[serde(default = "default_strategy")]
    pub strategy: Strategy,
    /// Ray-origin retraction length, mm.
    #[serde(default = "default_delta")]
    pub delta: f64,
    /// Time gate, ns.
    #[serde(default = "default_t_max")]
    pub t_max: f64,
    #[serde(default = "default_precision")]
    pub precision: Precision,
    /// Per-scatter containment verification; defaults to on under
    /// single precision, off under double.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub leak_detect: Option<bool>,
    /// Output path prefix.
    #[serde(default = "default_output")]
    pub output: String,
}

fn default_seed() -> u64 {
    1
}
fn default_strategy() -> Strategy {
    Strategy::Single
}
fn default_delta() -> f64 {
    1e-5
}
fn default_t_max() -> f64 {
    5.0
}
fn default_precision() -> Precision {
    Precision::Double
}
fn default_output() -> String {
    "out".into()
}

fn de_photons<'de, D: serde::Deserializer<'de>>(d: D) -> Result<u64, D::Error> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Raw {
        Int(u64),
        Float(f64),
        Text(String),
    }
    match Raw::deserialize(d)? {
        Raw::Int(n) => Ok(n),
        Raw::Float(f) => photon_count_from_f64(f).map_err(serde::de::Error::custom),
        Raw::Text(s) => parse_photon_count(&s).map_err(serde::de::Error::custom),
    }
}

/// Parses a photon count given as an integer or scientific-notation
/// string ("1e8", "2.5e6").
pub fn parse_photon_count(s: &str) -> Result<u64, String> {
    let f: f64 = s.trim().parse().map_err(|_| format!("invalid photon count {s:?}"))?;
    photon_count_from_f64(f)
}

fn photon_count_from_f64(f: f64) -> Result<u64, String> {
    if !f.is_finite() || f < 0.0 || f > 9.0e18 {
        return Err(format!("photon count {f} out of range"));
    }
    if f.fract() != 0.0 {
        return Err(format!("photon count {f} is not an integer"));
    }
    Ok(f as u64)
}

/// Flag-level overrides applied on top of a config file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub photons: Option<String>,
    pub seed: Option<u64>,
    pub workers: Option<u32>,
    pub strategy: Option<Strategy>,
    pub delta: Option<f64>,
    pub t_max: Option<f64>,
    pub precision: Option<Precision>,
    pub leak_detect: Option<bool>,
    pub output: Option<String>,
}

/// Loads, overrides, and validates a config file. Mesh paths become
/// absolute (resolved against the config's directory).
pub fn parse_config(path: &Path, overrides: &Overrides) -> Result<SimConfig, Error> {
    let text =
        std::fs::read_to_string(path).map_err(|e| Error::Io { path: path.into(), source: e })?;
    let mut cfg: SimConfig =
        serde_json::from_str(&text).map_err(|e| Error::Json { path: path.into(), source: e })?;

    let base = path.parent().unwrap_or(Path::new("."));
    for mesh_path in [&mut cfg.mesh.surface, &mut cfg.mesh.tet].into_iter().flatten() {
        if mesh_path.is_relative() {
            *mesh_path = base.join(&*mesh_path);
        }
    }

    if let Some(p) = &overrides.photons {
        cfg.photons = parse_photon_count(p).map_err(Error::Config)?;
    }
    if let Some(s) = overrides.seed {
        cfg.seed = s;
    }
    if let Some(w) = overrides.workers {
        cfg.workers = w;
    }
    if let Some(s) = overrides.strategy {
        cfg.strategy = s;
    }
    if let Some(d) = overrides.delta {
        cfg.delta = d;
    }
    if let Some(t) = overrides.t_max {
        cfg.t_max = t;
    }
    if let Some(p) = overrides.precision {
        cfg.precision = p;
    }
    if let Some(l) = overrides.leak_detect {
        cfg.leak_detect = Some(l);
    }
    if let Some(o) = &overrides.output {
        cfg.output = o.clone();
    }

    cfg.validate()?;
    Ok(cfg)
}

impl SimConfig {
    pub fn validate(&self) -> Result<(), Error> {
        if self.media.is_empty() {
            return Err(Error::Config(
                "media table is empty; index 0 must describe the exterior".into(),
            ));
        }
        for (i, m) in self.media.iter().enumerate() {
            m.validate(i)?;
        }
        self.grid.validate()?;
        let mut src = self.source.clone();
        src.validate()?;
        if !(self.delta >= 0.0) {
            return Err(Error::Config("delta must be >= 0".into()));
        }
        if !(self.t_max > 0.0) {
            return Err(Error::Config("t_max must be > 0".into()));
        }
        match self.strategy {
            Strategy::Tetra if self.mesh.tet.is_none() => Err(Error::Config(
                "strategy \"tetra\" requires a tetrahedral mesh file (mesh.tet)".into(),
            )),
            Strategy::Single if self.mesh.surface.is_none() => Err(Error::Config(
                "strategy \"single\" requires a surface mesh file (mesh.surface)".into(),
            )),
            Strategy::Region if self.mesh.surface.is_none() && self.mesh.tet.is_none() => {
                Err(Error::Config(
                    "strategy \"region\" requires a surface or tetrahedral mesh file".into(),
                ))
            }
            _ => Ok(()),
        }
    }

    /// Loads the meshes named by the config.
    pub fn load_scene(&self) -> Result<SceneData, Error> {
        let surface = self.mesh.surface.as_deref().map(SurfaceMesh::load).transpose()?;
        let tets = self.mesh.tet.as_deref().map(TetMesh::load).transpose()?;
        Ok(SceneData { surface, tets, media: self.media.clone() })
    }

    pub fn run_settings(&self) -> Result<RunSettings, Error> {
        let mut source = self.source.clone();
        source.validate()?;
        Ok(RunSettings {
            nphoton: self.photons,
            seed: self.seed,
            workers: self.workers,
            strategy: self.strategy,
            delta: self.delta,
            t_max: self.t_max,
            precision: self.precision,
            leak_detect: self.leak_detect,
            max_events: DEFAULT_MAX_EVENTS,
            grid: self.grid,
            source,
            track_variance: false,
            tetra_budget: DEFAULT_TETRA_BUDGET,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::Vec3;
    use crate::sources::{InitialMedium, SourceKind};

    fn sample_config() -> SimConfig {
        SimConfig {
            mesh: MeshPaths { surface: Some("/tmp/mesh.json".into()), tet: None },
            media: vec![
                Medium { mua: 0.0, mus: 0.0, g: 1.0, n: 1.0 },
                Medium { mua: 0.005, mus: 1.0, g: 0.0, n: 1.37 },
            ],
            source: SourceSpec {
                kind: SourceKind::Pencil {
                    position: Vec3::new(30.0, 30.0, 0.0),
                    direction: Vec3::new(0.0, 0.0, 1.0),
                },
                initial_medium: InitialMedium::Fixed(1),
            },
            grid: GridSpec { origin: Vec3::ZERO, h: 1.0, dims: [60, 60, 60] },
            photons: 1000,
            seed: 42,
            workers: 2,
            strategy: Strategy::Single,
            delta: 1e-5,
            t_max: 5.0,
            precision: Precision::Double,
            leak_detect: None,
            output: "out".into(),
        }
    }

    #[test]
    fn config_round_trips_through_json() {
        let cfg = sample_config();
        let text = serde_json::to_string_pretty(&cfg).unwrap();
        let back: SimConfig = serde_json::from_str(&text).unwrap();
        assert_eq!(cfg, back);
    }

    #[test]
    fn photon_counts_accept_scientific_notation() {
        assert_eq!(parse_photon_count("1e6").unwrap(), 1_000_000);
        assert_eq!(parse_photon_count("2.5e3").unwrap(), 2500);
        assert_eq!(parse_photon_count("0").unwrap(), 0);
        assert!(parse_photon_count("1.5").is_err());
        assert!(parse_photon_count("-1e3").is_err());
        assert!(parse_photon_count("abc").is_err());

        let j = r#"{"photons": "1e4"}"#;
        #[derive(Deserialize)]
        struct P {
            #[serde(deserialize_with = "de_photons")]
            photons: u64,
        }
        let p: P = serde_json::from_str(j).unwrap();
        assert_eq!(p.photons, 10_000);
    }

    #[test]
    fn overrides_take_precedence_and_paths_resolve() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = sample_config();
        cfg.mesh.surface = Some("mesh.json".into()); // relative
        let cfg_path = dir.path().join("run.json");
        std::fs::write(&cfg_path, serde_json::to_string(&cfg).unwrap()).unwrap();

        let ov = Overrides {
            photons: Some("1e6".into()),
            seed: Some(7),
            ..Overrides::default()
        };
        let parsed = parse_config(&cfg_path, &ov).unwrap();
        assert_eq!(parsed.photons, 1_000_000);
        assert_eq!(parsed.seed, 7);
        assert_eq!(parsed.mesh.surface.as_deref(), Some(dir.path().join("mesh.json").as_path()));
    }

    #[test]
    fn tetra_without_tet_mesh_names_the_missing_file() {
        let mut cfg = sample_config();
        cfg.strategy = Strategy::Tetra;
        let err = cfg.validate().unwrap_err();
        assert!(err.to_string().contains("mesh.tet"), "{err}");
        assert!(err.is_config_class());
    }

    #[test]
    fn empty_media_table_is_rejected() {
        let mut cfg = sample_config();
        cfg.media.clear();
        assert!(cfg.validate().is_err());
    }
}
