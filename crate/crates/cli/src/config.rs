//! JSON experiment configuration. Every field has a default, so `{}` is a
//! valid file; model paths are resolved relative to the file.

use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use d2co::dcd::DcdOptions;
use d2co::detection::ScanOptions;
use d2co::edges::EdgeDetectorOptions;
use d2co::experiments::{detection_grid, NbvExperiment, Setup, TableGrid};
use d2co::geometry::{Aabb, CameraIntrinsics, Pose};
use d2co::mesh::{load_mesh_file, DEFAULT_DIHEDRAL_THRESHOLD};
use d2co::registration::RegistrationOptions;
use d2co::sim::{self, default_intrinsics, orbit_camera, NoiseParams};
use d2co::template::{ObjectModel, TemplateOptions};
use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

pub const CONFIG_SCHEMA_VERSION: u32 = 1;

/// A built-in part by name, or a mesh file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ModelSpec {
    Builtin(String),
    File {
        id: String,
        path: PathBuf,
        /// Multiplies the mesh coordinates (e.g. 0.001 for millimetre files).
        #[serde(default = "unit")]
        scale: f64,
    },
}

fn unit() -> f64 {
    1.0
}

/// Reference camera on an orbit around `target`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CameraSpec {
    pub target: [f64; 3],
    pub distance: f64,
    /// Above the table plane (radians).
    pub elevation: f64,
    pub azimuth: f64,
}

impl Default for CameraSpec {
    fn default() -> Self {
        Self {
            target: [0.0; 3],
            distance: 0.4,
            elevation: 1.0,
            azimuth: -PI / 2.0,
        }
    }
}

impl CameraSpec {
    pub fn pose(&self) -> Pose {
        self.orbit(0.0, 0.0)
    }

    /// The camera moved around the same target.
    pub fn orbit(&self, d_azimuth: f64, d_elevation: f64) -> Pose {
        let t = Vector3::from(self.target);
        orbit_camera(&t, self.distance, (self.elevation + d_elevation).min(PI / 2.0 - 1e-3), self.azimuth + d_azimuth)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BasinBench {
    pub magnitudes_mm: Vec<f64>,
    pub rad_per_mm: f64,
    pub trials: usize,
}

impl Default for BasinBench {
    fn default() -> Self {
        Self {
            magnitudes_mm: vec![5.0, 10.0, 15.0, 20.0, 25.0],
            rad_per_mm: 0.01,
            trials: 100,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DetectionBench {
    pub scenes: usize,
    pub max_k: usize,
}

impl Default for DetectionBench {
    fn default() -> Self {
        Self { scenes: 50, max_k: 10 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MultiViewBench {
    pub scenes: usize,
    pub extra_views: usize,
    pub translation: f64,
    pub rotation: f64,
    pub min_occlusion: f64,
    pub max_occlusion: f64,
}

impl Default for MultiViewBench {
    fn default() -> Self {
        Self {
            scenes: 50,
            extra_views: 2,
            translation: 0.01,
            rotation: 0.1,
            min_occlusion: 0.3,
            max_occlusion: 0.6,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScoreBench {
    pub trials: usize,
    pub displacement_px: f64,
    pub threshold: f64,
}

impl Default for ScoreBench {
    fn default() -> Self {
        Self {
            trials: 100,
            displacement_px: 20.0,
            threshold: 0.8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TimingBench {
    pub points: usize,
    pub repeats: usize,
}

impl Default for TimingBench {
    fn default() -> Self {
        Self { points: 200, repeats: 3 }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BenchmarkConfig {
    pub basin: BasinBench,
    pub detection: DetectionBench,
    pub multiview: MultiViewBench,
    pub score: ScoreBench,
    pub timing: TimingBench,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    pub models: Vec<ModelSpec>,
    pub template: TemplateOptions,
    pub dihedral_threshold: f64,
    pub intrinsics: CameraIntrinsics,
    pub camera: CameraSpec,
    pub workspace: Aabb,
    pub edges: EdgeDetectorOptions,
    pub dcd: DcdOptions,
    pub scan: ScanOptions,
    pub registration: RegistrationOptions,
    /// Applied to rendered observations.
    pub noise: NoiseParams,
    /// Template bank poses used by `detect`.
    pub bank: TableGrid,
    /// Objects placed by `render-scene` and single-scene `nbv`.
    pub scene_objects: usize,
    /// `nbv.seed` is replaced by the top-level seed.
    pub nbv: NbvExperiment,
    pub benchmark: BenchmarkConfig,
    pub seed: u64,
    pub output_dir: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let setup = Setup::default();
        Self {
            schema_version: CONFIG_SCHEMA_VERSION,
            models: setup.models.iter().map(|m| ModelSpec::Builtin(m.id.clone())).collect(),
            template: TemplateOptions::default(),
            dihedral_threshold: DEFAULT_DIHEDRAL_THRESHOLD,
            intrinsics: default_intrinsics(),
            camera: CameraSpec::default(),
            workspace: setup.workspace,
            edges: EdgeDetectorOptions::default(),
            dcd: DcdOptions::default(),
            scan: ScanOptions::default(),
            registration: RegistrationOptions::default(),
            noise: NoiseParams::default(),
            bank: detection_grid(),
            scene_objects: 5,
            nbv: NbvExperiment::default(),
            benchmark: BenchmarkConfig::default(),
            seed: 1,
            output_dir: PathBuf::from("out"),
        }
    }
}

impl ExperimentConfig {
    /// Reads and validates `path`; model paths become absolute.
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        let mut cfg: Self = serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        for m in &mut cfg.models {
            if let ModelSpec::File { path, .. } = m {
                if path.is_relative() {
                    *path = base.join(&*path);
                }
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> CliResult<()> {
        if self.schema_version != CONFIG_SCHEMA_VERSION {
            return Err(CliError::Config(format!(
                "schema_version {} is not supported (expected {CONFIG_SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        if self.models.is_empty() {
            return Err(CliError::Config("no models configured".into()));
        }
        let builtin = sim::standard_models();
        let mut ids = Vec::new();
        for m in &self.models {
            let id = match m {
                ModelSpec::Builtin(id) => {
                    if !builtin.iter().any(|b| &b.id == id) {
                        let names: Vec<_> = builtin.iter().map(|b| b.id.as_str()).collect();
                        return Err(CliError::Config(format!("unknown built-in model {id:?} (available: {})", names.join(", "))));
                    }
                    id
                }
                ModelSpec::File { id, path, scale } => {
                    if !path.is_file() {
                        return Err(CliError::missing("model file", path.clone()));
                    }
                    if !(*scale > 0.0) {
                        return Err(CliError::Config(format!("model {id:?}: scale must be positive")));
                    }
                    id
                }
            };
            if ids.contains(&id) {
                return Err(CliError::Config(format!("duplicate model id {id:?}")));
            }
            ids.push(id);
        }
        self.intrinsics.validate()?;
        self.template.validate()?;
        self.noise.validate()?;
        self.nbv.planner.validate()?;
        if self.dcd.q == 0 || self.scan.top_k == 0 {
            return Err(CliError::Config("dcd.q and scan.top_k must be positive".into()));
        }
        if self.bank.is_empty() {
            return Err(CliError::Config("bank grid is empty".into()));
        }
        if self.workspace.min.iter().zip(self.workspace.max.iter()).any(|(a, b)| a > b) {
            return Err(CliError::Config("workspace min exceeds max".into()));
        }
        Ok(())
    }

    pub fn build_models(&self) -> CliResult<Vec<ObjectModel>> {
        let builtin = sim::standard_models();
        self.models
            .iter()
            .map(|m| match m {
                ModelSpec::Builtin(id) => Ok(sim::model_by_id(&builtin, id)?.clone()),
                ModelSpec::File { id, path, scale } => {
                    let mesh = load_mesh_file(path).map_err(|e| CliError::io(path, e))?;
                    Ok(ObjectModel::new(id.clone(), mesh.scaled(*scale), self.dihedral_threshold, self.template)?)
                }
            })
            .collect()
    }

    pub fn setup(&self) -> CliResult<Setup> {
        Ok(Setup {
            models: self.build_models()?,
            intrinsics: self.intrinsics,
            reference: self.camera.pose(),
            workspace: self.workspace,
            dcd: self.dcd,
            registration: self.registration,
        })
    }

    pub fn nbv_experiment(&self) -> NbvExperiment {
        NbvExperiment {
            seed: self.seed,
            ..self.nbv.clone()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_object_is_the_default_config() {
        let cfg: ExperimentConfig = serde_json::from_str("{}").unwrap();
        assert_eq!(cfg, ExperimentConfig::default());
        cfg.validate().unwrap();
        let text = serde_json::to_string(&cfg).unwrap();
        assert_eq!(serde_json::from_str::<ExperimentConfig>(&text).unwrap(), cfg);
    }

    #[test]
    fn rejects_bad_fields() {
        assert!(serde_json::from_str::<ExperimentConfig>(r#"{"sead": 3}"#).is_err());
        let cfg: ExperimentConfig = serde_json::from_str(r#"{"schema_version": 9}"#).unwrap();
        assert!(matches!(cfg.validate(), Err(CliError::Config(_))));
        let cfg: ExperimentConfig = serde_json::from_str(r#"{"models": ["ell", "ell"]}"#).unwrap();
        assert!(cfg.validate().is_err());
        let cfg: ExperimentConfig = serde_json::from_str(r#"{"models": ["gear"]}"#).unwrap();
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn model_paths_are_relative_to_the_config() {
        let dir = tempfile::tempdir().unwrap();
        let mesh = d2co::mesh::shapes::cuboid(0.04, 0.03, 0.02);
        std::fs::create_dir(dir.path().join("meshes")).unwrap();
        std::fs::write(dir.path().join("meshes/box.stl"), d2co::mesh::write_stl_binary(&mesh)).unwrap();
        let p = dir.path().join("c.json");
        std::fs::write(&p, r#"{"models": ["quad", {"id": "box", "path": "meshes/box.stl", "scale": 1.0}]}"#).unwrap();
        let cfg = ExperimentConfig::load(&p).unwrap();
        let models = cfg.build_models().unwrap();
        assert_eq!(models[1].id, "box");
        std::fs::write(&p, r#"{"models": [{"id": "box", "path": "meshes/nope.stl"}]}"#).unwrap();
        assert!(matches!(ExperimentConfig::load(&p), Err(CliError::Config(_))));
    }
}
