//! `hopose`: pose refinement, tracking, contact refinement, synthetic data,
//! evaluation and gradient checks driven by a scene config.

use std::fs::File;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use hopose_core::contact::{contact_recall, refine_to_contact};
use hopose_core::ekf::{track_sequence, write_innovations_csv, ObservationKind, PSD_TOL, SYMMETRY_TOL};
use hopose_core::gradcheck::{default_render, default_spec, run_suite, SuiteConfig, SuiteInput, TermSummary, MAX_REL_ERR};
use hopose_core::grad::write_gradcheck_csv;
use hopose_core::geometry::{SdfIndex, SignMode};
use hopose_core::metrics::{evaluate_sequence, write_metrics_csv, MetricsReport};
use hopose_core::model::PoseState;
use hopose_core::optimize::{ablation, refine_sequence, SequenceEstimate};
use hopose_core::priors::write_trace_csv;
use hopose_core::scene::{export_sequence, read_json, write_json, Scene};
use hopose_core::synth::{synth_sequence, SynthSpec};
use hopose_core::Error;

#[derive(Parser)]
#[command(name = "hopose", version, about = "Hand-object pose estimation and tracking with differentiable priors")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Scene config (JSON).
    #[arg(long)]
    scene: PathBuf,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Refine every frame's pose against masks and physics priors.
    Optimize {
        #[command(flatten)]
        common: Common,
        /// Also run the init / +render / +render+physics ablation.
        #[arg(long)]
        ablation: bool,
        /// Write wall-clock timings to timing.json.
        #[arg(long)]
        timing: bool,
    },
    /// Track the sequence with the extended Kalman filter.
    Track {
        #[command(flatten)]
        common: Common,
        /// Observation model, overriding the scene's.
        #[arg(long)]
        observation: Option<String>,
        #[arg(long)]
        timing: bool,
    },
    /// Refine one frame's hand pose towards the scene's contact target.
    ContactRefine {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 0)]
        frame: usize,
        /// Poses to start from (JSON array); defaults to the scene's
        /// initial poses.
        #[arg(long)]
        poses: Option<PathBuf>,
    },
    /// Generate a synthetic grasp sequence and its scene config.
    Synth {
        #[arg(long)]
        out: PathBuf,
        /// Sequence spec (JSON); defaults apply to missing fields.
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        frames: Option<usize>,
    },
    /// Compare a pose file to ground truth.
    Eval {
        #[command(flatten)]
        common: Common,
        /// Estimated poses (JSON array).
        #[arg(long)]
        poses: PathBuf,
        /// Ground-truth poses; defaults to the scene's.
        #[arg(long)]
        gt: Option<PathBuf>,
        /// timing.json from a previous run, for the ms_per_frame column.
        #[arg(long)]
        timing: Option<PathBuf>,
    },
    /// Finite-difference checks of every loss term and observation model.
    Gradcheck {
        /// Scene config (JSON); the built-in 48 x 48 suite scene when omitted.
        #[arg(long)]
        scene: Option<PathBuf>,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
        /// Seed of the built-in scene; a scene file supplies its own.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 20)]
        configs: usize,
        /// Frame whose mask is used; its two predecessors form the history.
        #[arg(long, default_value_t = 2)]
        frame: usize,
    },
}

enum Failure {
    Config(String),
    Invariant(String),
    Runtime(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Config(_) => Failure::Config(e.to_string()),
            Error::NonFinite { .. } | Error::SingularInnovation { .. } => Failure::Invariant(e.to_string()),
            other => Failure::Runtime(other.to_string()),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Runtime(e.to_string())
    }
}

type Outcome = Result<(), Failure>;

#[derive(Serialize)]
struct RunRecord<'a> {
    command: &'a str,
    seed: u64,
    version: &'a str,
}

#[derive(Serialize, Deserialize)]
struct Timing {
    frames: usize,
    total_ms: f64,
    ms_per_frame: f64,
}

fn prepare(out: &Path, command: &str, seed: u64) -> Outcome {
    std::fs::create_dir_all(out)?;
    let record = RunRecord {
        command,
        seed,
        version: env!("CARGO_PKG_VERSION"),
    };
    write_json(&record, &out.join("run.json"))?;
    Ok(())
}

fn write_timing(out: &Path, frames: usize, start: Instant) -> Outcome {
    let total_ms = start.elapsed().as_secs_f64() * 1e3;
    let t = Timing {
        frames,
        total_ms,
        ms_per_frame: total_ms / frames as f64,
    };
    write_json(&t, &out.join("timing.json"))?;
    Ok(())
}

fn metrics(scene: &Scene, poses: &[PoseState], gt: &[PoseState], ms: &[f64]) -> Result<MetricsReport, Failure> {
    let report = evaluate_sequence(
        &scene.model,
        &scene.object_mesh,
        &scene.config.camera,
        poses,
        gt,
        ms,
        &scene.config.metrics,
    )?;
    let bad = report
        .frames
        .iter()
        .any(|f| !(f.err2d >= 0.0 && f.err3d >= 0.0 && f.collision >= 0.0))
        || report.err2d_scaled.iter().any(|e| !(*e >= 0.0));
    if bad {
        return Err(Failure::Invariant("metrics must be finite and non-negative".into()));
    }
    Ok(report)
}

fn write_metrics(out: &Path, report: &MetricsReport) -> Outcome {
    write_metrics_csv(report, File::create(out.join("metrics.csv"))?)?;
    write_json(report, &out.join("metrics.json"))?;
    Ok(())
}

fn check_poses(poses: &[PoseState]) -> Outcome {
    for (i, p) in poses.iter().enumerate() {
        if p.validate().is_err() {
            return Err(Failure::Invariant(format!("frame {i}: non-finite pose")));
        }
    }
    Ok(())
}

fn check_refined(est: &SequenceEstimate) -> Outcome {
    check_poses(&est.poses)?;
    for (i, r) in est.reports.iter().enumerate() {
        if !(r.final_total <= r.initial_total) {
            return Err(Failure::Invariant(format!(
                "frame {i}: returned loss {} exceeds initial {}",
                r.final_total, r.initial_total
            )));
        }
    }
    Ok(())
}

fn optimize(common: &Common, with_ablation: bool, timing: bool) -> Outcome {
    let scene = Scene::load(&common.scene)?;
    let out = &common.out;
    prepare(out, "optimize", scene.config.seed)?;
    let input = scene.sequence_input()?;
    let start = Instant::now();
    let est = refine_sequence(&input, &scene.initial_poses, &scene.config.optim)?;
    if timing {
        write_timing(out, est.poses.len(), start)?;
    }
    check_refined(&est)?;
    write_json(&est.poses, &out.join("poses.json"))?;
    write_json(&est, &out.join("estimate.json"))?;
    write_trace_csv(&est.trace, out.join("trace.csv"))?;
    if let Some(gt) = &scene.ground_truth {
        write_metrics(out, &metrics(&scene, &est.poses, gt, &[])?)?;
    }
    if with_ablation {
        let gt = scene
            .ground_truth
            .as_ref()
            .ok_or_else(|| Failure::Config("--ablation needs ground_truth in the scene".into()))?;
        let stages = ablation(&input, &scene.initial_poses, &scene.config.optim)?;
        let dir = out.join("ablation");
        std::fs::create_dir_all(&dir)?;
        let mut w = csv::Writer::from_path(out.join("ablation.csv")).map_err(|e| Failure::Runtime(e.to_string()))?;
        w.write_record(["stage", "mean_err2d", "mean_err3d", "mean_collision"])
            .map_err(|e| Failure::Runtime(e.to_string()))?;
        for (name, est) in ["init", "render", "full"].iter().zip(&stages) {
            check_refined(est)?;
            write_json(&est.poses, &dir.join(format!("{name}_poses.json")))?;
            let m = metrics(&scene, &est.poses, gt, &[])?;
            w.write_record([
                name.to_string(),
                m.mean_err2d.to_string(),
                m.mean_err3d.to_string(),
                m.mean_collision.to_string(),
            ])
            .map_err(|e| Failure::Runtime(e.to_string()))?;
        }
        w.flush()?;
    }
    Ok(())
}

fn parse_kind(name: &str) -> Result<ObservationKind, Failure> {
    ObservationKind::ALL
        .into_iter()
        .find(|k| k.name() == name)
        .ok_or_else(|| {
            let names: Vec<_> = ObservationKind::ALL.iter().map(|k| k.name()).collect();
            Failure::Config(format!("unknown observation model `{name}` (expected one of {})", names.join(", ")))
        })
}

fn track(common: &Common, observation: Option<&str>, timing: bool) -> Outcome {
    let scene = Scene::load(&common.scene)?;
    let out = &common.out;
    let mut config = scene.config.track.clone();
    if let Some(name) = observation {
        config.observation = parse_kind(name)?;
    }
    let frames = scene
        .observations
        .as_ref()
        .ok_or_else(|| Failure::Config("track needs observations in the scene".into()))?;
    prepare(out, "track", scene.config.seed)?;
    let start = Instant::now();
    let r = track_sequence(
        &scene.model,
        &scene.object,
        &scene.config.camera,
        frames,
        &scene.initial_poses[0],
        &config,
    )?;
    if timing {
        write_timing(out, frames.len(), start)?;
    }
    check_poses(&r.estimate.poses)?;
    let p = &r.final_filter.covariance;
    let asym = (p - p.transpose()).abs().max();
    let min_eig = p.clone().symmetric_eigen().eigenvalues.min();
    if !(asym < SYMMETRY_TOL && min_eig >= -PSD_TOL) {
        return Err(Failure::Invariant(format!(
            "covariance lost symmetry or PSD (asymmetry {asym:e}, min eigenvalue {min_eig:e})"
        )));
    }
    write_json(&r.estimate.poses, &out.join("poses.json"))?;
    write_json(&r.estimate, &out.join("estimate.json"))?;
    write_innovations_csv(&r.innovations, File::create(out.join("innovations.csv"))?)?;
    if let Some(gt) = &scene.ground_truth {
        write_metrics(out, &metrics(&scene, &r.estimate.poses, gt, &[])?)?;
    }
    Ok(())
}

#[derive(Serialize)]
struct ContactSummary {
    frame: usize,
    initial_objective: f64,
    final_objective: f64,
    iterations: usize,
    recall: f64,
}

fn contact_refine(common: &Common, frame: usize, poses: Option<&Path>) -> Outcome {
    let scene = Scene::load(&common.scene)?;
    let out = &common.out;
    let target = scene
        .contact_target
        .as_ref()
        .ok_or_else(|| Failure::Config("contact-refine needs contact_target in the scene".into()))?;
    let start = match poses {
        Some(p) => read_json(p)?,
        None => scene.initial_poses.clone(),
    };
    let init = start
        .get(frame)
        .ok_or_else(|| Failure::Config(format!("frame {frame} out of range ({} frames)", start.len())))?;
    prepare(out, "contact-refine", scene.config.seed)?;
    let r = refine_to_contact(&scene.model, &scene.object, init, target, &scene.config.contact)?;
    if !(r.final_objective <= r.initial_objective) {
        return Err(Failure::Invariant("contact objective increased".into()));
    }
    check_poses(std::slice::from_ref(&r.pose))?;
    write_json(&r.pose, &out.join("pose.json"))?;
    r.contact.write_json(out.join("contact.json"))?;
    let summary = ContactSummary {
        frame,
        initial_objective: r.initial_objective,
        final_objective: r.final_objective,
        iterations: r.iterations,
        recall: contact_recall(target, &r.contact),
    };
    write_json(&summary, &out.join("summary.json"))?;
    Ok(())
}

fn synth(out: &Path, spec: Option<&Path>, seed: Option<u64>, frames: Option<usize>) -> Outcome {
    let mut spec: SynthSpec = match spec {
        Some(p) => read_json(p)?,
        None => SynthSpec::default(),
    };
    if let Some(s) = seed {
        spec.seed = s;
    }
    if let Some(n) = frames {
        spec.frames = n;
    }
    spec.validate().map_err(|e| Failure::Config(e.to_string()))?;
    prepare(out, "synth", spec.seed)?;
    let seq = synth_sequence(&spec)?;
    export_sequence(&seq, out, spec.seed)?;
    Ok(())
}

fn eval(common: &Common, poses: &Path, gt: Option<&Path>, timing: Option<&Path>) -> Outcome {
    let scene = Scene::load(&common.scene)?;
    let out = &common.out;
    let pred: Vec<PoseState> = read_json(poses)?;
    let truth: Vec<PoseState> = match gt {
        Some(p) => read_json(p)?,
        None => scene
            .ground_truth
            .clone()
            .ok_or_else(|| Failure::Config("eval needs --gt or ground_truth in the scene".into()))?,
    };
    let ms = match timing {
        Some(p) => {
            let t: Timing = read_json(p)?;
            vec![t.ms_per_frame; pred.len()]
        }
        None => Vec::new(),
    };
    prepare(out, "eval", scene.config.seed)?;
    let report = metrics(&scene, &pred, &truth, &ms).map_err(|f| match f {
        Failure::Runtime(m) => Failure::Config(m),
        other => other,
    })?;
    write_metrics(out, &report)
}

#[derive(Serialize)]
struct GradcheckSummary<'a> {
    frame: usize,
    configs: usize,
    seed: u64,
    threshold: f64,
    max_rel_err: f64,
    passed: bool,
    terms: &'a [TermSummary],
}

fn gradcheck(scene: Option<&Path>, out: &Path, configs: usize, frame: usize, seed: u64) -> Outcome {
    match scene {
        Some(path) => {
            let scene = Scene::load(path)?;
            let poses = scene.ground_truth.as_ref().unwrap_or(&scene.initial_poses);
            if frame >= poses.len() || frame >= scene.frames.len() {
                return Err(Failure::Config(format!("frame {frame} out of range")));
            }
            let f = &scene.frames[frame];
            let input = SuiteInput {
                model: &scene.model,
                object: &scene.object,
                object_colors: scene.object_colors.as_deref(),
                camera: scene.config.camera,
                render: scene.config.render_settings(),
                mask: &f.mask,
                rgb: f.rgb.as_ref(),
                poses: history(poses, frame),
            };
            run_gradcheck(&input, out, configs, frame, scene.config.seed)
        }
        None => {
            let seq = synth_sequence(&SynthSpec { seed, ..default_spec() })?;
            if frame >= seq.frames.len() {
                return Err(Failure::Config(format!("frame {frame} out of range")));
            }
            let object = SdfIndex::build(seq.object.clone(), SignMode::Signed)?;
            let poses: Vec<PoseState> = seq.frames.iter().map(|f| f.gt.clone()).collect();
            let f = &seq.frames[frame];
            let input = SuiteInput {
                model: &seq.model,
                object: &object,
                object_colors: Some(&seq.object_colors),
                camera: seq.spec.camera,
                render: default_render(&seq.spec.camera),
                mask: &f.mask,
                rgb: Some(&f.rgb),
                poses: history(&poses, frame),
            };
            run_gradcheck(&input, out, configs, frame, seed)
        }
    }
}

fn history(poses: &[PoseState], frame: usize) -> [&PoseState; 3] {
    [
        &poses[frame.saturating_sub(2)],
        &poses[frame.saturating_sub(1)],
        &poses[frame],
    ]
}

fn run_gradcheck(input: &SuiteInput<'_>, out: &Path, configs: usize, frame: usize, seed: u64) -> Outcome {
    prepare(out, "gradcheck", seed)?;
    let config = SuiteConfig {
        configs,
        seed,
        ..Default::default()
    };
    let report = run_suite(input, &config)?;
    write_gradcheck_csv(&report.rows, out.join("gradcheck.csv"))?;
    let summary = GradcheckSummary {
        frame,
        configs,
        seed,
        threshold: MAX_REL_ERR,
        max_rel_err: report.max_rel_err(),
        passed: report.passed(),
        terms: &report.terms,
    };
    write_json(&summary, &out.join("gradcheck.json"))?;
    for t in &report.terms {
        println!("{:<24} max rel err {:.3e}", t.term, t.max_rel_err);
    }
    if !report.passed() {
        return Err(Failure::Invariant(format!(
            "max relative error {:.3e} exceeds {MAX_REL_ERR:e}",
            report.max_rel_err()
        )));
    }
    Ok(())
}

fn run(cli: Cli) -> Outcome {
    match &cli.command {
        Command::Optimize {
            common,
            ablation,
            timing,
        } => optimize(common, *ablation, *timing),
        Command::Track {
            common,
            observation,
            timing,
        } => track(common, observation.as_deref(), *timing),
        Command::ContactRefine { common, frame, poses } => contact_refine(common, *frame, poses.as_deref()),
        Command::Synth {
            out,
            spec,
            seed,
            frames,
        } => synth(out, spec.as_deref(), *seed, *frames),
        Command::Eval {
            common,
            poses,
            gt,
            timing,
        } => eval(common, poses, gt.as_deref(), timing.as_deref()),
        Command::Gradcheck {
            scene,
            out,
            seed,
            configs,
            frame,
        } => gradcheck(scene.as_deref(), out, *configs, *frame, *seed),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(2) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
        Err(Failure::Invariant(m)) => {
            eprintln!("invariant violated: {m}");
            ExitCode::from(3)
        }
        Err(Failure::Runtime(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
    }
}
