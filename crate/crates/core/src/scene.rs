//! Scene configuration files and the on-disk layout of sequences.
//!
//! A scene is a JSON file whose paths are relative to the file's directory.
//! Poses are JSON arrays of [`PoseState`], masks are label PNGs (0
//! background, 1 hand, 2 object) and the object is an OBJ mesh.

use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::contact::{contact_values_posed, ContactConfig, ContactMap};
use crate::ekf::{Observations, TrackConfig};
use crate::geometry::obj::{read_obj, write_obj};
use crate::geometry::{SdfIndex, SignMode, TriMesh, DEFAULT_CONTACT_THRESHOLD};
use crate::metrics::MetricsConfig;
use crate::model::{read_model, write_model, PoseState, SkinnedModel};
use crate::optimize::{FrameObservation, OptimConfig, SequenceInput};
use crate::priors::LossWeights;
use crate::render::{Camera, MaskImage, RenderSettings, RgbImage};
use crate::synth::SynthSequence;
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneConfig {
    pub camera: Camera,
    /// Skinned-model JSON.
    pub model: PathBuf,
    /// Object mesh (OBJ) in its local frame.
    pub object_mesh: PathBuf,
    /// Per-face object albedo, a JSON array of `[r, g, b]`.
    #[serde(default)]
    pub object_colors: Option<PathBuf>,
    /// One label PNG per frame.
    #[serde(default)]
    pub masks: Vec<PathBuf>,
    /// Optional RGB PNGs, one per frame when present.
    #[serde(default)]
    pub rgb: Vec<PathBuf>,
    pub initial_poses: PathBuf,
    #[serde(default)]
    pub ground_truth: Option<PathBuf>,
    /// Per-frame controls and measurements for tracking.
    #[serde(default)]
    pub observations: Option<PathBuf>,
    /// Target contact map for contact refinement.
    #[serde(default)]
    pub contact_target: Option<PathBuf>,
    /// Loss weights; these replace `optim.weights`.
    #[serde(default = "LossWeights::centimetres")]
    pub weights: LossWeights,
    #[serde(default = "OptimConfig::staged")]
    pub optim: OptimConfig,
    /// Defaults to a 0.5 px sigma with back-face culling.
    #[serde(default)]
    pub render: Option<RenderSettings>,
    #[serde(default)]
    pub track: TrackConfig,
    /// Its `unit_scale` is replaced by the scene's.
    #[serde(default)]
    pub contact: ContactConfig,
    #[serde(default = "default_contact_threshold")]
    pub contact_threshold: f64,
    /// Model units per millimetre.
    #[serde(default = "default_unit_scale")]
    pub unit_scale: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub metrics: MetricsConfig,
}

fn default_contact_threshold() -> f64 {
    DEFAULT_CONTACT_THRESHOLD
}

fn default_unit_scale() -> f64 {
    0.1
}

/// Parses JSON, reporting the path of the offending field.
pub fn parse_json<T: DeserializeOwned>(text: &str, what: &str) -> Result<T> {
    let de = &mut serde_json::Deserializer::from_str(text);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        Error::Config(format!("{what}: field `{path}`: {}", e.inner()))
    })
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    parse_json(&text, &path.display().to_string())
}

pub fn write_json<T: Serialize + ?Sized>(value: &T, path: &Path) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text)?;
    Ok(())
}

fn config_err(e: Error) -> Error {
    match e {
        Error::Config(_) => e,
        other => Error::Config(other.to_string()),
    }
}

impl SceneConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let mut c: SceneConfig = parse_json(text, "scene")?;
        c.optim.weights = c.weights;
        c.contact.unit_scale = c.unit_scale;
        c.validate()?;
        Ok(c)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        SceneConfig::from_json(&text)
    }

    pub fn render_settings(&self) -> RenderSettings {
        self.render.unwrap_or_else(|| {
            RenderSettings::for_camera(&self.camera)
                .with_sigma(0.5)
                .with_back_face_culling(true)
        })
    }

    pub fn validate(&self) -> Result<()> {
        let checks = || -> Result<()> {
            self.camera.validate()?;
            self.weights.validate()?;
            self.optim.validate()?;
            self.track.validate()?;
            self.contact.validate()?;
            if !(self.contact_threshold > 0.0 && self.contact_threshold.is_finite()) {
                return Err(Error::InvalidArgument("contact_threshold must be positive".into()));
            }
            if !(self.unit_scale > 0.0 && self.unit_scale.is_finite()) {
                return Err(Error::InvalidArgument("unit_scale must be positive".into()));
            }
            let r = self.render_settings();
            if !(r.sigma > 0.0 && r.gamma > 0.0 && r.cutoff > 0.0) {
                return Err(Error::InvalidArgument("render sigma, gamma and cutoff must be positive".into()));
            }
            if !self.rgb.is_empty() && self.rgb.len() != self.masks.len() {
                return Err(Error::InvalidArgument(format!(
                    "{} rgb images for {} masks",
                    self.rgb.len(),
                    self.masks.len()
                )));
            }
            if !(self.metrics.length_scale > 0.0)
                || self.metrics.voxel_resolution < 8
                || self.metrics.pixel_size.is_some_and(|p| !(p > 0.0))
            {
                return Err(Error::InvalidArgument(
                    "metrics need a positive length_scale and pixel_size and voxel_resolution >= 8".into(),
                ));
            }
            Ok(())
        };
        checks().map_err(config_err)
    }

    /// Every referenced path, resolved against `dir`.
    fn files(&self, dir: &Path) -> Vec<PathBuf> {
        let mut out = vec![dir.join(&self.model), dir.join(&self.object_mesh), dir.join(&self.initial_poses)];
        out.extend(self.masks.iter().chain(&self.rgb).map(|p| dir.join(p)));
        out.extend(
            [&self.object_colors, &self.ground_truth, &self.observations, &self.contact_target]
                .into_iter()
                .flatten()
                .map(|p| dir.join(p)),
        );
        out
    }
}

/// A loaded scene.
pub struct Scene {
    pub config: SceneConfig,
    pub dir: PathBuf,
    pub model: SkinnedModel,
    pub object_mesh: TriMesh,
    pub object: SdfIndex,
    pub object_colors: Option<Vec<[f64; 3]>>,
    pub frames: Vec<FrameObservation>,
    pub initial_poses: Vec<PoseState>,
    pub ground_truth: Option<Vec<PoseState>>,
    pub observations: Option<Vec<Observations>>,
    pub contact_target: Option<ContactMap>,
}

fn check_poses(poses: &[PoseState], model: &SkinnedModel, what: &str) -> Result<()> {
    for (i, p) in poses.iter().enumerate() {
        p.validate()
            .map_err(|e| Error::Config(format!("{what}[{i}]: {e}")))?;
        if p.theta.len() != model.theta_len() || p.beta.len() != model.num_betas() {
            return Err(Error::Config(format!(
                "{what}[{i}]: expected {} theta and {} beta values, got {} and {}",
                model.theta_len(),
                model.num_betas(),
                p.theta.len(),
                p.beta.len()
            )));
        }
    }
    Ok(())
}

impl Scene {
    /// Reads the config and every file it references. Any problem is an
    /// [`Error::Config`].
    pub fn load(path: &Path) -> Result<Scene> {
        let config = SceneConfig::read(path)?;
        let dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        for f in config.files(&dir) {
            if !f.is_file() {
                return Err(Error::Config(format!("missing file: {}", f.display())));
            }
        }
        let load = || -> Result<Scene> {
            let model = read_model(dir.join(&config.model))?;
            let object_mesh = read_obj(dir.join(&config.object_mesh))?;
            let object = SdfIndex::build(object_mesh.clone(), SignMode::Signed)?
                .with_contact_threshold(config.contact_threshold);
            let object_colors: Option<Vec<[f64; 3]>> = match &config.object_colors {
                Some(p) => Some(read_json(&dir.join(p))?),
                None => None,
            };
            if let Some(c) = &object_colors {
                if c.len() != object_mesh.faces().len() {
                    return Err(Error::Config(format!(
                        "object_colors: {} colors for {} faces",
                        c.len(),
                        object_mesh.faces().len()
                    )));
                }
            }
            let mut frames = Vec::with_capacity(config.masks.len());
            for (i, m) in config.masks.iter().enumerate() {
                let mask = MaskImage::read_png(dir.join(m))?;
                let rgb = match config.rgb.get(i) {
                    Some(p) => Some(RgbImage::read_png(dir.join(p))?),
                    None => None,
                };
                if mask.width != config.camera.width || mask.height != config.camera.height {
                    return Err(Error::Config(format!("masks[{i}]: size differs from the camera")));
                }
                frames.push(FrameObservation { mask, rgb });
            }
            let initial_poses: Vec<PoseState> = read_json(&dir.join(&config.initial_poses))?;
            check_poses(&initial_poses, &model, "initial_poses")?;
            if initial_poses.is_empty() {
                return Err(Error::Config("initial_poses: no frames".into()));
            }
            if !frames.is_empty() && frames.len() != initial_poses.len() {
                return Err(Error::Config(format!(
                    "{} masks for {} initial poses",
                    frames.len(),
                    initial_poses.len()
                )));
            }
            let ground_truth: Option<Vec<PoseState>> = match &config.ground_truth {
                Some(p) => Some(read_json(&dir.join(p))?),
                None => None,
            };
            if let Some(gt) = &ground_truth {
                check_poses(gt, &model, "ground_truth")?;
            }
            let observations: Option<Vec<Observations>> = match &config.observations {
                Some(p) => Some(read_json(&dir.join(p))?),
                None => None,
            };
            let contact_target = match &config.contact_target {
                Some(p) => {
                    let m: ContactMap = read_json(&dir.join(p))?;
                    m.validate()?;
                    if m.values.len() != model.num_vertices() {
                        return Err(Error::Config(format!(
                            "contact_target: {} values for {} hand vertices",
                            m.values.len(),
                            model.num_vertices()
                        )));
                    }
                    Some(m)
                }
                None => None,
            };
            Ok(Scene {
                config: config.clone(),
                dir: dir.clone(),
                model,
                object_mesh,
                object,
                object_colors,
                frames,
                initial_poses,
                ground_truth,
                observations,
                contact_target,
            })
        };
        load().map_err(config_err)
    }

    /// Refinement input; needs masks.
    pub fn sequence_input(&self) -> Result<SequenceInput<'_>> {
        if self.frames.is_empty() {
            return Err(Error::Config("scene has no masks".into()));
        }
        Ok(SequenceInput {
            model: &self.model,
            object: &self.object,
            object_colors: self.object_colors.as_deref(),
            camera: self.config.camera,
            render: self.config.render_settings(),
            frames: &self.frames,
        })
    }
}

/// File names used by [`export_sequence`].
pub const SCENE_FILE: &str = "scene.json";

/// Writes a synthetic sequence and a scene config referencing it into
/// `dir`; returns the config path. The contact target is frame 0's ground
/// truth contact map.
pub fn export_sequence(seq: &SynthSequence, dir: &Path, seed: u64) -> Result<PathBuf> {
    std::fs::create_dir_all(dir.join("masks"))?;
    std::fs::create_dir_all(dir.join("rgb"))?;
    write_model(&seq.model, dir.join("model.json"))?;
    write_obj(&seq.object, dir.join("object.obj"))?;
    write_json(&seq.object_colors, &dir.join("object_colors.json"))?;
    let mut masks = Vec::new();
    let mut rgb = Vec::new();
    for (i, f) in seq.frames.iter().enumerate() {
        let m = PathBuf::from(format!("masks/{i:04}.png"));
        let c = PathBuf::from(format!("rgb/{i:04}.png"));
        f.mask.write_png(dir.join(&m))?;
        f.rgb.write_png(dir.join(&c))?;
        masks.push(m);
        rgb.push(c);
    }
    let gt: Vec<PoseState> = seq.frames.iter().map(|f| f.gt.clone()).collect();
    let init: Vec<PoseState> = seq.frames.iter().map(|f| f.init.clone()).collect();
    let obs: Vec<Observations> = seq.frames.iter().map(|f| f.observations.clone()).collect();
    write_json(&gt, &dir.join("ground_truth.json"))?;
    write_json(&init, &dir.join("initial_poses.json"))?;
    write_json(&obs, &dir.join("observations.json"))?;
    let mut config = SceneConfig {
        camera: seq.spec.camera,
        model: "model.json".into(),
        object_mesh: "object.obj".into(),
        object_colors: Some("object_colors.json".into()),
        masks,
        rgb,
        initial_poses: "initial_poses.json".into(),
        ground_truth: Some("ground_truth.json".into()),
        observations: Some("observations.json".into()),
        contact_target: Some("contact_target.json".into()),
        weights: LossWeights::centimetres(),
        optim: OptimConfig::staged(),
        render: None,
        track: TrackConfig::default(),
        contact: ContactConfig::default(),
        contact_threshold: DEFAULT_CONTACT_THRESHOLD,
        unit_scale: default_unit_scale(),
        seed,
        metrics: MetricsConfig::default(),
    };
    config.render = Some(config.render_settings());
    let object = SdfIndex::build(seq.object.clone(), SignMode::Signed)?;
    let target = contact_values_posed(&seq.model, &object, &gt[0], config.unit_scale)?;
    write_json(&target, &dir.join("contact_target.json"))?;
    write_json(&seq.spec, &dir.join("synth_spec.json"))?;
    let path = dir.join(SCENE_FILE);
    write_json(&config, &path)?;
    Ok(path)
}
