//! Per-frame gradient refinement and sequential sequence refinement.

use serde::{Deserialize, Serialize};

use crate::geometry::SdfIndex;
use crate::grad::{FreezeMask, GradResult, Objective, ParamVector};
use crate::model::{PoseState, SkinnedModel};
use crate::priors::{contact_set, trace_rows, FrameContext, FrameObjective, History, LossReport, LossWeights, TraceRow};
use crate::render::{Camera, MaskImage, RenderSettings, RgbImage};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Sgd,
    Adam,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OptimConfig {
    pub method: Method,
    pub learning_rate: f64,
    pub iterations: usize,
    pub weights: LossWeights,
    pub freeze: FreezeMask,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// Stop when the relative loss change falls below this; 0 disables.
    pub tolerance: f64,
    /// Coarse-to-fine renderer softness. When non-empty each frame runs one
    /// stage of `iterations` per entry, overriding the context sigma.
    pub sigma_schedule: Vec<f64>,
}

impl Default for OptimConfig {
    fn default() -> Self {
        OptimConfig {
            method: Method::Sgd,
            learning_rate: 0.01,
            iterations: 100,
            weights: LossWeights::default(),
            freeze: FreezeMask::none(),
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            tolerance: 0.0,
            sigma_schedule: Vec::new(),
        }
    }
}

impl OptimConfig {
    /// Adam over a coarse-to-fine sigma schedule with the hand frozen and
    /// centimetre weights; the setting used for the synthetic ablation.
    pub fn staged() -> Self {
        OptimConfig {
            method: Method::Adam,
            learning_rate: 0.02,
            iterations: 30,
            weights: LossWeights::centimetres(),
            freeze: FreezeMask::hand_only(),
            sigma_schedule: vec![2.0, 1.0, 0.5, 0.25, 0.1],
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidArgument("learning_rate must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || !(self.epsilon > 0.0) {
            return Err(Error::InvalidArgument("adam moments need beta in [0, 1) and epsilon > 0".into()));
        }
        if !(self.tolerance >= 0.0) {
            return Err(Error::InvalidArgument("tolerance must be >= 0".into()));
        }
        if self.sigma_schedule.iter().any(|s| !(*s > 0.0 && s.is_finite())) {
            return Err(Error::InvalidArgument("sigma_schedule entries must be positive".into()));
        }
        self.weights.validate()
    }
}

/// First-order update rule with its state.
struct Stepper {
    method: Method,
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Stepper {
    fn new(config: &OptimConfig, n: usize) -> Self {
        Stepper {
            method: config.method,
            lr: config.learning_rate,
            beta1: config.beta1,
            beta2: config.beta2,
            eps: config.epsilon,
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    fn step(&mut self, x: &mut [f64], g: &[f64], active: &[bool]) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        for i in 0..x.len() {
            if !active[i] {
                continue;
            }
            match self.method {
                Method::Sgd => x[i] -= self.lr * g[i],
                Method::Adam => {
                    self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g[i];
                    self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g[i] * g[i];
                    let mh = self.m[i] / c1;
                    let vh = self.v[i] / c2;
                    x[i] -= self.lr * mh / (vh.sqrt() + self.eps);
                }
            }
        }
    }
}

#[derive(Clone, Debug)]
pub struct FrameResult {
    /// Best iterate.
    pub pose: PoseState,
    pub initial: LossReport,
    pub best: LossReport,
    pub iterations: usize,
    /// Per-iteration rows; iteration 0 is the initial estimate. A `best`
    /// row carries the best-so-far total.
    pub trace: Vec<TraceRow>,
}

/// Loss value and gradient of one evaluation.
pub trait Evaluated {
    fn total(&self) -> f64;
    fn gradient(&self) -> &[f64];
}

impl Evaluated for LossReport {
    fn total(&self) -> f64 {
        self.total
    }

    fn gradient(&self) -> &[f64] {
        &self.gradient
    }
}

impl Evaluated for GradResult {
    fn total(&self) -> f64 {
        self.value
    }

    fn gradient(&self) -> &[f64] {
        &self.gradient
    }
}

#[derive(Clone, Debug)]
pub struct Minimum<R> {
    /// Best iterate.
    pub params: ParamVector,
    pub initial: R,
    pub best: R,
    pub iterations: usize,
}

/// First-order descent from `init` returning the best iterate. `observe`
/// sees every evaluation (iteration 0 is `init`) with the best-so-far
/// value. A non-finite loss after the first step ends the run early.
pub fn minimize<R: Evaluated + Clone>(
    init: ParamVector,
    config: &OptimConfig,
    mut eval: impl FnMut(&ParamVector) -> Result<R>,
    mut observe: impl FnMut(usize, &R, f64),
) -> Result<Minimum<R>> {
    config.validate()?;
    let active = init.active_mask();
    let first = eval(&init)?;
    observe(0, &first, first.total());
    let mut best = (init.clone(), first.clone());
    let mut params = init;
    let mut current = first.clone();
    let mut stepper = Stepper::new(config, params.len());
    let mut done = 0;
    for it in 1..=config.iterations {
        let mut x = params.values().to_vec();
        stepper.step(&mut x, current.gradient(), &active);
        let next = params.with_values(x)?;
        let report = match eval(&next) {
            Ok(r) => r,
            Err(Error::NonFinite { .. }) => break,
            Err(e) => return Err(e),
        };
        done = it;
        let change = (report.total() - current.total()).abs() / current.total().abs().max(f64::MIN_POSITIVE);
        if report.total() < best.1.total() {
            best = (next.clone(), report.clone());
        }
        observe(it, &report, best.1.total());
        params = next;
        current = report;
        if config.tolerance > 0.0 && change < config.tolerance {
            break;
        }
    }
    Ok(Minimum {
        params: best.0,
        initial: first,
        best: best.1,
        iterations: done,
    })
}

/// Gradient descent on the frame loss from `init`; returns the best iterate.
pub fn refine_frame(ctx: &FrameContext<'_>, init: &PoseState, config: &OptimConfig, frame: usize) -> Result<FrameResult> {
    let objective = FrameObjective::new(ctx, config.weights);
    let mut trace = Vec::new();
    let m = minimize(
        ParamVector::pack(init, config.freeze),
        config,
        |p| objective.report(p, true),
        |it, report, best| {
            trace.extend(trace_rows(frame, it, report));
            trace.push(TraceRow {
                frame,
                iteration: it,
                term: "best".into(),
                value: best,
            });
        },
    )?;
    Ok(FrameResult {
        pose: m.params.unpack().canonical(),
        initial: m.initial,
        best: m.best,
        iterations: m.iterations,
        trace,
    })
}

/// Runs [`refine_frame`] once per entry of the sigma schedule, each stage
/// starting from the previous result. Trace iterations are numbered
/// continuously; `best` rows restart with each stage since the loss changes
/// with sigma. `initial` and `best` are both measured at the last sigma, and
/// `init` is returned if the stages end above it.
pub fn refine_frame_staged(ctx: &FrameContext<'_>, init: &PoseState, config: &OptimConfig, frame: usize) -> Result<FrameResult> {
    let Some(&last_sigma) = config.sigma_schedule.last() else {
        return refine_frame(ctx, init, config, frame);
    };
    let mut pose = init.clone();
    let mut trace = Vec::new();
    let mut best = None;
    let mut iterations = 0;
    let mut next_row = 0;
    for &sigma in &config.sigma_schedule {
        let mut staged = *ctx;
        staged.render.sigma = sigma;
        let r = refine_frame(&staged, &pose, config, frame)?;
        trace.extend(r.trace.into_iter().map(|mut row| {
            row.iteration += next_row;
            row
        }));
        next_row += r.iterations + 1;
        iterations += r.iterations;
        pose = r.pose;
        best = Some(r.best);
    }
    let mut last = *ctx;
    last.render.sigma = last_sigma;
    let initial = FrameObjective::new(&last, config.weights).report(&ParamVector::pack(init, config.freeze), false)?;
    let mut best = best.expect("non-empty schedule");
    if best.total > initial.total {
        pose = init.clone();
        best = initial.clone();
    }
    Ok(FrameResult {
        pose,
        initial,
        best,
        iterations,
        trace,
    })
}

/// Per-frame detected inputs.
#[derive(Clone, Debug)]
pub struct FrameObservation {
    pub mask: MaskImage,
    pub rgb: Option<RgbImage>,
}

/// Static scene data shared by every frame.
#[derive(Clone, Copy)]
pub struct SequenceInput<'a> {
    pub model: &'a SkinnedModel,
    pub object: &'a SdfIndex,
    pub object_colors: Option<&'a [[f64; 3]]>,
    pub camera: Camera,
    pub render: RenderSettings,
    pub frames: &'a [FrameObservation],
}

impl<'a> SequenceInput<'a> {
    pub fn context(&self, frame: usize) -> FrameContext<'a> {
        let f = &self.frames[frame];
        FrameContext {
            object_colors: self.object_colors,
            render: self.render,
            mask: Some(&f.mask),
            rgb: f.rgb.as_ref(),
            ..FrameContext::new(self.model, self.object, self.camera)
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Initial,
    Refined,
    Tracked,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrameSummary {
    pub initial_total: f64,
    pub final_total: f64,
    pub iterations: usize,
    /// Unweighted terms of the returned pose, keyed by term name.
    pub terms: Vec<(String, f64)>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SequenceEstimate {
    pub provenance: Provenance,
    pub poses: Vec<PoseState>,
    pub reports: Vec<FrameSummary>,
    #[serde(skip)]
    pub trace: Vec<TraceRow>,
}

impl SequenceEstimate {
    /// Wraps initial poses without refinement.
    pub fn initial(poses: &[PoseState]) -> Self {
        SequenceEstimate {
            provenance: Provenance::Initial,
            poses: poses.to_vec(),
            reports: Vec::new(),
            trace: Vec::new(),
        }
    }
}

/// Refines frames in temporal order; frame `t` sees the refined poses of
/// `t − 1` and `t − 2` and the contact set of `t − 1`.
pub fn refine_sequence(input: &SequenceInput<'_>, inits: &[PoseState], config: &OptimConfig) -> Result<SequenceEstimate> {
    if input.frames.is_empty() {
        return Err(Error::InvalidArgument("sequence has no frames".into()));
    }
    if inits.len() != input.frames.len() {
        return Err(Error::Dimension {
            what: "initial poses",
            expected: input.frames.len(),
            got: inits.len(),
        });
    }
    let mut history: Vec<History> = Vec::with_capacity(inits.len());
    let mut poses = Vec::with_capacity(inits.len());
    let mut reports = Vec::with_capacity(inits.len());
    let mut trace = Vec::new();
    for (t, init) in inits.iter().enumerate() {
        let contact = match history.last() {
            Some(h) => contact_set(&h.hand_vertices, input.object, &h.pose),
            None => Vec::new(),
        };
        let mut ctx = input.context(t);
        ctx.prev = t.checked_sub(1).map(|i| &history[i]);
        ctx.prev2 = t.checked_sub(2).map(|i| &history[i]);
        ctx.contact = &contact;
        let r = refine_frame_staged(&ctx, init, config, t)?;
        reports.push(FrameSummary {
            initial_total: r.initial.total,
            final_total: r.best.total,
            iterations: r.iterations,
            terms: crate::priors::Term::ALL
                .iter()
                .filter(|x| r.best.evaluated[x.index()])
                .map(|x| (x.name().to_string(), r.best.get(*x)))
                .collect(),
        });
        trace.extend(r.trace);
        history.push(History::new(input.model, r.pose.clone())?);
        poses.push(r.pose);
    }
    Ok(SequenceEstimate {
        provenance: Provenance::Refined,
        poses,
        reports,
        trace,
    })
}

/// Init-only, render-only and render+physics estimates.
pub fn ablation(input: &SequenceInput<'_>, inits: &[PoseState], config: &OptimConfig) -> Result<[SequenceEstimate; 3]> {
    let render = OptimConfig {
        weights: config.weights.render_only(),
        ..config.clone()
    };
    Ok([
        SequenceEstimate::initial(inits),
        refine_sequence(input, inits, &render)?,
        refine_sequence(input, inits, config)?,
    ])
}

/// Value of the weighted loss for `pose` in `ctx`.
pub fn frame_loss(ctx: &FrameContext<'_>, pose: &PoseState, weights: &LossWeights) -> Result<f64> {
    FrameObjective::new(ctx, *weights).value(&ParamVector::pack(pose, FreezeMask::none()))
}
