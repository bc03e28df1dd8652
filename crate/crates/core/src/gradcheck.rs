//! Finite-difference verification of every loss term and observation model
//! at random configurations around a scene's poses.

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::ekf::{state_from_pose, HandObjectObservation, Observation, ObservationKind};
use crate::geometry::SdfIndex;
use crate::grad::{central_difference_gradient, central_difference_jacobian, compare_gradients, FreezeMask, GradCheckRow, ParamVector};
use crate::model::{PoseState, SkinnedModel};
use crate::priors::{contact_set, evaluate, FrameContext, History, LossWeights, Term};
use crate::render::{Camera, MaskImage, RenderSettings, RgbImage};
use crate::synth::SynthSpec;
use crate::{Error, Result};

/// Pass threshold on the maximum relative error.
pub const MAX_REL_ERR: f64 = 1e-3;

/// Default suite scene: three frames of the default grasp seen by a
/// 48 × 48 camera. Small images keep central differences clear of the
/// kinks of the interior triangle distance; the suite renders it with
/// `sigma = 0.5` and no back-face culling.
pub fn default_spec() -> SynthSpec {
    SynthSpec {
        frames: 3,
        camera: Camera::new(60.0, 60.0, 24.0, 24.0, 48, 48).expect("valid camera"),
        ..Default::default()
    }
}

pub fn default_render(camera: &Camera) -> RenderSettings {
    RenderSettings::for_camera(camera).with_sigma(0.5)
}

#[derive(Clone, Debug, PartialEq)]
pub struct SuiteConfig {
    /// Random configurations per term.
    pub configs: usize,
    pub seed: u64,
    pub step: f64,
    /// Uniform perturbation half-widths for θ, β, object rotation and
    /// object translation.
    pub theta_noise: f64,
    pub beta_noise: f64,
    pub rotation_noise: f64,
    pub translation_noise: f64,
    pub terms: Vec<Term>,
    pub observations: Vec<ObservationKind>,
}

impl Default for SuiteConfig {
    fn default() -> Self {
        SuiteConfig {
            configs: 20,
            seed: 0,
            step: crate::grad::DEFAULT_FD_STEP,
            theta_noise: 0.05,
            beta_noise: 0.2,
            rotation_noise: 0.1,
            translation_noise: 0.4,
            terms: Term::ALL.to_vec(),
            observations: ObservationKind::ALL.to_vec(),
        }
    }
}

/// Scene data for the suite. The current frame is `poses[2]`; `poses[0]`
/// and `poses[1]` are its history and `poses[1]` sets the contact set.
pub struct SuiteInput<'a> {
    pub model: &'a SkinnedModel,
    pub object: &'a SdfIndex,
    pub object_colors: Option<&'a [[f64; 3]]>,
    pub camera: Camera,
    pub render: RenderSettings,
    pub mask: &'a MaskImage,
    pub rgb: Option<&'a RgbImage>,
    pub poses: [&'a PoseState; 3],
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TermSummary {
    pub term: String,
    pub configs: usize,
    pub max_rel_err: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SuiteReport {
    pub rows: Vec<GradCheckRow>,
    pub terms: Vec<TermSummary>,
}

impl SuiteReport {
    pub fn max_rel_err(&self) -> f64 {
        self.terms.iter().map(|t| t.max_rel_err).fold(0.0, f64::max)
    }

    pub fn passed(&self) -> bool {
        self.max_rel_err() < MAX_REL_ERR
    }
}

fn config_rng(seed: u64, check: usize, config: usize) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed ^ ((check as u64) << 32) ^ config as u64)
}

fn perturbed(base: &PoseState, c: &SuiteConfig, rng: &mut ChaCha8Rng) -> PoseState {
    let mut p = base.clone();
    let mut jitter = |v: &mut f64, w: f64| {
        if w > 0.0 {
            *v += rng.random_range(-w..w);
        }
    };
    for v in p.theta.iter_mut() {
        jitter(v, c.theta_noise);
    }
    for v in p.beta.iter_mut() {
        jitter(v, c.beta_noise);
    }
    for a in 0..3 {
        jitter(&mut p.obj_r[a], c.rotation_noise);
        jitter(&mut p.obj_t[a], c.translation_noise);
    }
    p
}

fn finish(term: &str, config: usize, mut rows: Vec<GradCheckRow>) -> Vec<GradCheckRow> {
    for r in &mut rows {
        r.term = term.to_string();
        r.config = config;
    }
    rows
}

fn summarize(term: &str, configs: usize, rows: &[GradCheckRow]) -> TermSummary {
    TermSummary {
        term: term.to_string(),
        configs,
        max_rel_err: rows.iter().map(|r| r.rel_err).fold(0.0, f64::max),
    }
}

/// Analytic gradients of each loss term (unit weight) and analytic
/// Jacobians of each observation model against central differences.
pub fn run_suite(input: &SuiteInput<'_>, config: &SuiteConfig) -> Result<SuiteReport> {
    if config.configs == 0 || !(config.step > 0.0) {
        return Err(Error::InvalidArgument("gradcheck needs configs >= 1 and a positive step".into()));
    }
    let hist = [
        History::new(input.model, input.poses[0].clone())?,
        History::new(input.model, input.poses[1].clone())?,
    ];
    let contact = contact_set(&hist[1].hand_vertices, input.object, &hist[1].pose);
    let ctx = FrameContext {
        object_colors: input.object_colors,
        render: input.render,
        mask: Some(input.mask),
        rgb: input.rgb,
        prev: Some(&hist[1]),
        prev2: Some(&hist[0]),
        contact: &contact,
        ..FrameContext::new(input.model, input.object, input.camera)
    };
    let mut rows = Vec::new();
    let mut terms = Vec::new();
    for (check, &term) in config.terms.iter().enumerate() {
        if term == Term::Image && (input.rgb.is_none() || input.object_colors.is_none()) {
            continue;
        }
        let w = LossWeights::only(term);
        let per: Vec<Vec<GradCheckRow>> = (0..config.configs)
            .into_par_iter()
            .map(|k| {
                let mut rng = config_rng(config.seed, check, k);
                let p = ParamVector::pack(&perturbed(input.poses[2], config, &mut rng), FreezeMask::none());
                let r = evaluate(&ctx, &p, &w, true, None)?;
                let numeric = central_difference_gradient(
                    |x| Ok(evaluate(&ctx, &p.with_values(x.to_vec())?, &w, false, None)?.total),
                    p.values(),
                    config.step,
                )?;
                Ok(finish(term.name(), k, compare_gradients(term.name(), &r.gradient, &numeric)))
            })
            .collect::<Result<_>>()?;
        let flat: Vec<GradCheckRow> = per.into_iter().flatten().collect();
        terms.push(summarize(term.name(), config.configs, &flat));
        rows.extend(flat);
    }
    let selector = input.model.selector("fingertips")?.clone();
    for (j, &kind) in config.observations.iter().enumerate() {
        let obs = HandObjectObservation {
            kind,
            model: input.model,
            beta: input.poses[2].beta.clone(),
            selector: selector.clone(),
            camera: input.camera,
            object_center: input.object.mesh().centroid().coords,
        };
        let name = format!("obs_{}", kind.name());
        let check = config.terms.len() + j;
        let per: Vec<Vec<GradCheckRow>> = (0..config.configs)
            .into_par_iter()
            .map(|k| {
                let mut rng = config_rng(config.seed, check, k);
                let x = state_from_pose(&perturbed(input.poses[2], config, &mut rng));
                let a = obs.jacobian(&x)?;
                let num = central_difference_jacobian(
                    |p| obs.observe(&DVector::from_column_slice(p)).map(|v| v.as_slice().to_vec()),
                    x.as_slice(),
                    config.step,
                )?;
                let mut out = Vec::new();
                for r in 0..a.nrows() {
                    let ar: Vec<f64> = a.row(r).iter().copied().collect();
                    let nr: Vec<f64> = num.row(r).iter().copied().collect();
                    let mut rows = compare_gradients(&name, &ar, &nr);
                    for row in &mut rows {
                        row.index += r * a.ncols();
                    }
                    out.extend(rows);
                }
                Ok(finish(&name, k, out))
            })
            .collect::<Result<_>>()?;
        let flat: Vec<GradCheckRow> = per.into_iter().flatten().collect();
        terms.push(summarize(&name, config.configs, &flat));
        rows.extend(flat);
    }
    Ok(SuiteReport { rows, terms })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::SignMode;
    use crate::synth::synth_sequence;

    #[test]
    fn small_suite_passes_and_is_deterministic() {
        let s = synth_sequence(&default_spec()).unwrap();
        let index = SdfIndex::build(s.object.clone(), SignMode::Signed).unwrap();
        let input = SuiteInput {
            model: &s.model,
            object: &index,
            object_colors: Some(&s.object_colors),
            camera: s.spec.camera,
            render: default_render(&s.spec.camera),
            mask: &s.frames[2].mask,
            rgb: Some(&s.frames[2].rgb),
            poses: [&s.frames[0].gt, &s.frames[1].gt, &s.frames[2].gt],
        };
        let config = SuiteConfig {
            configs: 2,
            ..Default::default()
        };
        let a = run_suite(&input, &config).unwrap();
        assert_eq!(a.terms.len(), 10);
        assert!(a.passed(), "{:?}", a.terms);
        assert_eq!(a, run_suite(&input, &config).unwrap());
        assert!(run_suite(&input, &SuiteConfig { configs: 0, ..config }).is_err());
    }
}
