//! JSON descriptions of rigs, scenes and pipeline parameters.
//!
//! Rigs and scenes can be given inline or as paths to their own JSON files;
//! relative paths resolve against the directory of the referring file.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use nalgebra::{Matrix3, Vector3};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::decode::DecodeParams;
use crate::demux::{DerivativeFilter, HistogramParams};
use crate::optics::{OpticsError, PinholeModel, ProjectorModel, Rig, DEFAULT_MIN_ANGLE_DEG};
use crate::pattern::{generate_pattern, PatternError, StripePattern};
use crate::range::MergePolicy;
use crate::scene::{NoiseModel, RenderOptions, Scene, SceneError};

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Read {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("cannot parse {path}: {source}")]
    Parse {
        path: String,
        #[source]
        source: serde_json::Error,
    },
    #[error(transparent)]
    Optics(#[from] OpticsError),
    #[error(transparent)]
    Pattern(#[from] PatternError),
    #[error(transparent)]
    Scene(#[from] SceneError),
    #[error("invalid parameter: {0}")]
    Invalid(String),
}

/// Reads and parses a JSON file.
pub fn read_json<T: DeserializeOwned>(path: impl AsRef<Path>) -> Result<T, ConfigError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
        path: path.display().to_string(),
        source,
    })?;
    serde_json::from_str(&text).map_err(|source| ConfigError::Parse {
        path: path.display().to_string(),
        source,
    })
}

/// A value given inline or as the path of a JSON file holding it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Source<T> {
    Path(PathBuf),
    Inline(T),
}

impl<T: DeserializeOwned + Clone> Source<T> {
    pub fn load(&self, base: Option<&Path>) -> Result<T, ConfigError> {
        match self {
            Source::Inline(v) => Ok(v.clone()),
            Source::Path(p) => read_json(resolve(base, p)),
        }
    }
}

fn resolve(base: Option<&Path>, p: &Path) -> PathBuf {
    match base {
        Some(b) if p.is_relative() => b.join(p),
        _ => p.to_path_buf(),
    }
}

/// Pinhole device calibration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "snake_case")]
pub enum DeviceConfig {
    /// Device at `eye` aimed at `target`; the principal point is the image
    /// center.
    LookAt {
        eye: [f64; 3],
        target: [f64; 3],
        up: [f64; 3],
        focal: f64,
        image_size: [usize; 2],
    },
    /// Explicit intrinsics and world-to-device extrinsics.
    Calibrated {
        focal: [f64; 2],
        principal: [f64; 2],
        rotation: [[f64; 3]; 3],
        translation: [f64; 3],
        image_size: [usize; 2],
    },
}

impl DeviceConfig {
    pub fn build(&self) -> Result<PinholeModel, OpticsError> {
        let v = |a: &[f64; 3]| Vector3::new(a[0], a[1], a[2]);
        match self {
            DeviceConfig::LookAt {
                eye,
                target,
                up,
                focal,
                image_size,
            } => PinholeModel::look_at(v(eye), v(target), v(up), *focal, *image_size),
            DeviceConfig::Calibrated {
                focal,
                principal,
                rotation,
                translation,
                image_size,
            } => {
                let r = Matrix3::from_fn(|i, j| rotation[i][j]);
                PinholeModel::new(*focal, *principal, r, v(translation), *image_size)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProjectorConfig {
    pub device: DeviceConfig,
    /// Rotation of the stripe pattern in the projector image, degrees.
    pub roll_deg: f64,
    #[serde(default = "one")]
    pub intensity: f32,
}

fn one() -> f32 {
    1.0
}

/// Stripe pattern: generated from the window length, or read from a text
/// file of `R`, `G`, `B` characters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PatternConfig {
    pub window_length: usize,
    pub stripe_width_px: usize,
    pub path: Option<PathBuf>,
}

impl Default for PatternConfig {
    fn default() -> Self {
        Self {
            window_length: 7,
            stripe_width_px: 4,
            path: None,
        }
    }
}

impl PatternConfig {
    pub fn build(&self, base: Option<&Path>) -> Result<StripePattern, ConfigError> {
        match &self.path {
            None => Ok(generate_pattern(self.window_length, 3)?.with_stripe_width(self.stripe_width_px)?),
            Some(p) => {
                let p = resolve(base, p);
                let text = std::fs::read_to_string(&p).map_err(|source| ConfigError::Read {
                    path: p.display().to_string(),
                    source,
                })?;
                Ok(StripePattern::from_text(&text, self.window_length, self.stripe_width_px)?)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RigConfig {
    #[serde(default)]
    pub pattern: PatternConfig,
    pub projectors: Vec<ProjectorConfig>,
    pub cameras: Vec<DeviceConfig>,
    #[serde(default = "meters")]
    pub world_units: String,
}

fn meters() -> String {
    "m".into()
}

impl RigConfig {
    pub fn build(&self, base: Option<&Path>) -> Result<Rig, ConfigError> {
        let pattern = Arc::new(self.pattern.build(base)?);
        let projectors = self
            .projectors
            .iter()
            .map(|p| {
                let mut m = ProjectorModel::new(p.device.build()?, p.roll_deg, pattern.clone());
                m.intensity = p.intensity;
                Ok(m)
            })
            .collect::<Result<Vec<_>, OpticsError>>()?;
        let cameras = self.cameras.iter().map(DeviceConfig::build).collect::<Result<Vec<_>, _>>()?;
        Ok(Rig::new(projectors, cameras, self.world_units.clone())?)
    }
}

/// Image formation: exposure in gray levels per unit radiance, then
/// Gaussian noise and 8-bit quantization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CaptureConfig {
    pub exposure: f64,
    pub noise_sigma_rgb: [f64; 3],
}

impl Default for CaptureConfig {
    fn default() -> Self {
        Self {
            exposure: 110.0,
            noise_sigma_rgb: crate::scene::MEASURED_SIGMA_RGB,
        }
    }
}

impl CaptureConfig {
    pub fn noise(&self, seed: u64) -> Result<NoiseModel, SceneError> {
        NoiseModel::new(self.noise_sigma_rgb, seed)
    }
}

/// Direction estimation and pattern separation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DemuxConfig {
    /// Gaussian pre-smoothing before differentiation, pixels (0 disables).
    pub presmooth_sigma: f64,
    pub filter: DerivativeFilter,
    pub histogram: HistogramParams,
    /// Set the histogram magnitude floor from the capture noise.
    pub noise_adaptive: bool,
    /// Largest angle between a lobe and its calibration prior, degrees.
    pub prior_tolerance_deg: f64,
    /// Spacing of direction estimates, pixels.
    pub stride: usize,
    pub min_separation_deg: f64,
    /// Working depth for the calibration priors; `None` uses the crossing
    /// depth of the optical axes.
    pub nominal_depth: Option<f64>,
}

impl Default for DemuxConfig {
    fn default() -> Self {
        Self {
            presmooth_sigma: 0.0,
            filter: DerivativeFilter::default(),
            histogram: HistogramParams::default(),
            noise_adaptive: true,
            prior_tolerance_deg: 20.0,
            stride: 4,
            min_separation_deg: 20.0,
            nominal_depth: None,
        }
    }
}

/// Stripe decoding.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DecodeConfig {
    #[serde(flatten)]
    pub params: DecodeParams,
    /// Set the feature strength floor to this many noise deviations of the
    /// separated derivative; `None` keeps `min_strength`.
    pub noise_floor_sigmas: Option<f64>,
}

impl Default for DecodeConfig {
    fn default() -> Self {
        Self {
            params: DecodeParams::default(),
            noise_floor_sigmas: Some(4.0),
        }
    }
}

/// Triangulation and merging.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RangeConfig {
    pub min_angle_deg: f64,
    /// Largest depth step within one surface patch, world units.
    pub speckle_max_step: f64,
    /// Patches with fewer pixels are dropped from each pair's range; 0
    /// disables the filter.
    pub speckle_min_area: usize,
    /// Pixels with an 8-neighbour further than this in depth are dropped
    /// before speckle removal, world units; 0 disables the filter.
    pub discontinuity_step: f64,
    pub merge: MergePolicy,
    /// Camera whose grid merged ranges use.
    pub reference_camera: usize,
}

impl Default for RangeConfig {
    fn default() -> Self {
        Self {
            min_angle_deg: DEFAULT_MIN_ANGLE_DEG,
            speckle_max_step: 0.01,
            speckle_min_area: 100,
            discontinuity_step: 0.05,
            merge: MergePolicy::default(),
            reference_camera: 0,
        }
    }
}

/// Reconstruction parameters shared by the pipeline stages.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineParams {
    pub demux: DemuxConfig,
    pub decode: DecodeConfig,
    pub range: RangeConfig,
}

/// A complete experiment: rig, scene, image formation and reconstruction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub name: String,
    pub rig: Source<RigConfig>,
    pub scene: Source<Scene>,
    #[serde(default)]
    pub render: RenderOptions,
    #[serde(default)]
    pub capture: CaptureConfig,
    #[serde(default)]
    pub pipeline: PipelineParams,
    #[serde(default)]
    pub seed: u64,
}

/// Loaded experiment with built devices.
#[derive(Debug, Clone)]
pub struct Experiment {
    pub config: ExperimentConfig,
    pub rig: Rig,
    pub scene: Scene,
}

impl ExperimentConfig {
    pub fn from_file(path: impl AsRef<Path>) -> Result<Experiment, ConfigError> {
        let path = path.as_ref();
        let cfg: ExperimentConfig = read_json(path)?;
        cfg.build(path.parent())
    }

    /// Resolves file references against `base` and builds the devices.
    pub fn build(self, base: Option<&Path>) -> Result<Experiment, ConfigError> {
        let rig = self.rig.load(base)?.build(base)?;
        let scene = self.scene.load(base)?;
        scene.validate()?;
        if self.capture.exposure <= 0.0 {
            return Err(ConfigError::Invalid(format!("exposure {} must be positive", self.capture.exposure)));
        }
        if self.pipeline.range.reference_camera >= rig.cameras.len() {
            return Err(ConfigError::Invalid(format!(
                "reference camera {} of {}",
                self.pipeline.range.reference_camera,
                rig.cameras.len()
            )));
        }
        Ok(Experiment {
            config: self,
            rig,
            scene,
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("configs serialize")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn device(eye: [f64; 3]) -> DeviceConfig {
        DeviceConfig::LookAt {
            eye,
            target: [0.0, 0.0, 1.0],
            up: [0.0, -1.0, 0.0],
            focal: 500.0,
            image_size: [64, 48],
        }
    }

    fn rig() -> RigConfig {
        RigConfig {
            pattern: PatternConfig::default(),
            projectors: vec![ProjectorConfig {
                device: device([0.2, 0.0, 0.0]),
                roll_deg: 0.0,
                intensity: 1.0,
            }],
            cameras: vec![device([0.0, 0.0, 0.0])],
            world_units: "m".into(),
        }
    }

    #[test]
    fn look_at_and_calibrated_forms_agree() {
        let a = device([0.1, 0.2, 0.0]).build().unwrap();
        let r = a.rotation();
        let t = a.translation();
        let b = DeviceConfig::Calibrated {
            focal: a.focal(),
            principal: a.principal(),
            rotation: std::array::from_fn(|i| std::array::from_fn(|j| r[(i, j)])),
            translation: [t.x, t.y, t.z],
            image_size: [64, 48],
        }
        .build()
        .unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn experiment_round_trips_through_json_files() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("rig.json"), serde_json::to_string(&rig()).unwrap()).unwrap();
        let text = r#"{
            "name": "t",
            "rig": "rig.json",
            "scene": {"primitives": [{"type": "plane", "point": [0, 0, 1], "normal": [0, 0, -1],
                       "albedo": {"kind": "constant", "rgb": [1, 1, 1]}}]},
            "pipeline": {"decode": {"vote_min": 3}}
        }"#;
        let path = dir.path().join("exp.json");
        std::fs::write(&path, text).unwrap();
        let exp = ExperimentConfig::from_file(&path).unwrap();
        assert_eq!(exp.rig.projectors.len(), 1);
        assert_eq!(exp.rig.projectors[0].pattern.len(), 198);
        assert_eq!(exp.config.pipeline.decode.params.vote_min, 3);
        assert_eq!(exp.config.pipeline.decode.params.half_length, 40);
        let again: ExperimentConfig = serde_json::from_str(&exp.config.to_json()).unwrap();
        assert_eq!(again, exp.config);
    }

    #[test]
    fn bad_references_name_the_file() {
        let cfg = ExperimentConfig {
            name: "t".into(),
            rig: Source::Path("missing.json".into()),
            scene: Source::Inline(Scene::new(vec![], Default::default()).unwrap()),
            render: RenderOptions::default(),
            capture: CaptureConfig::default(),
            pipeline: PipelineParams::default(),
            seed: 0,
        };
        let err = cfg.build(Some(Path::new("/nonexistent"))).unwrap_err();
        assert!(err.to_string().contains("/nonexistent/missing.json"), "{err}");
    }

    #[test]
    fn invalid_exposure_and_reference_camera_are_rejected() {
        let mut cfg = ExperimentConfig {
            name: "t".into(),
            rig: Source::Inline(rig()),
            scene: Source::Inline(Scene::new(vec![], Default::default()).unwrap()),
            render: RenderOptions::default(),
            capture: CaptureConfig::default(),
            pipeline: PipelineParams::default(),
            seed: 0,
        };
        cfg.pipeline.range.reference_camera = 1;
        assert!(matches!(cfg.clone().build(None), Err(ConfigError::Invalid(_))));
        cfg.pipeline.range.reference_camera = 0;
        cfg.capture.exposure = 0.0;
        assert!(matches!(cfg.build(None), Err(ConfigError::Invalid(_))));
    }
}
