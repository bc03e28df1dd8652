use std::path::Path;
use std::sync::OnceLock;

use nalgebra::{Point3, Vector3};
use serde::Serialize;

use super::terms::{
    continuity_loss, image_loss, mask_loss, penetration_loss, sliding_loss, smoothness_loss, RigidFrame,
};
use super::{LossWeights, Term};
use crate::geometry::SdfIndex;
use crate::grad::{Objective, ParamVector, Span};
use crate::model::{PoseState, SkinnedModel};
use crate::render::{rasterize_gradient, rasterize_soft, Camera, MaskImage, RenderSettings, RgbImage};
use crate::{Error, Result};

/// Pose and posed hand vertices of an already-processed frame.
#[derive(Clone, Debug, PartialEq)]
pub struct History {
    pub pose: PoseState,
    pub hand_vertices: Vec<Point3<f64>>,
}

impl History {
    pub fn new(model: &SkinnedModel, pose: PoseState) -> Result<Self> {
        let hand_vertices = model.skin(&pose.theta, &pose.beta)?;
        Ok(History { pose, hand_vertices })
    }
}

/// Everything the losses of one frame read besides the current pose.
#[derive(Clone, Copy)]
pub struct FrameContext<'a> {
    pub model: &'a SkinnedModel,
    /// Object mesh in its local frame.
    pub object: &'a SdfIndex,
    /// Per-face object albedo used by the image term.
    pub object_colors: Option<&'a [[f64; 3]]>,
    pub camera: Camera,
    pub render: RenderSettings,
    pub mask: Option<&'a MaskImage>,
    pub rgb: Option<&'a RgbImage>,
    pub prev: Option<&'a History>,
    pub prev2: Option<&'a History>,
    /// Hand vertices in contact in the previous frame.
    pub contact: &'a [usize],
}

impl<'a> FrameContext<'a> {
    pub fn new(model: &'a SkinnedModel, object: &'a SdfIndex, camera: Camera) -> Self {
        FrameContext {
            model,
            object,
            object_colors: None,
            camera,
            render: RenderSettings::for_camera(&camera),
            mask: None,
            rgb: None,
            prev: None,
            prev2: None,
            contact: &[],
        }
    }
}

/// Indices of hand vertices whose signed distance to the posed object is
/// below the index's contact threshold.
pub fn contact_set(hand_vertices: &[Point3<f64>], object: &SdfIndex, pose: &PoseState) -> Vec<usize> {
    let frame = RigidFrame::from_euler(pose.obj_r, pose.obj_t);
    hand_vertices
        .iter()
        .enumerate()
        .filter(|(_, v)| object.query(&Point3::from(frame.to_local(v))).in_contact)
        .map(|(i, _)| i)
        .collect()
}

/// Hand quantities that stay fixed while θ and β are frozen.
#[derive(Clone, Debug)]
pub struct HandCache {
    pub vertices: Vec<Point3<f64>>,
    pub occupancy: Vec<f64>,
}

impl HandCache {
    pub fn new(ctx: &FrameContext<'_>, state: &PoseState) -> Result<Self> {
        let vertices = ctx.model.skin(&state.theta, &state.beta)?;
        let occupancy = rasterize_soft(&ctx.camera, &vertices, ctx.model.faces(), &ctx.render, None).occupancy;
        Ok(HandCache { vertices, occupancy })
    }
}

/// Unweighted per-term values, the weighted total and optionally its
/// gradient over the packed parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct LossReport {
    pub values: [f64; 6],
    /// Terms actually computed (positive weight and inputs available).
    pub evaluated: [bool; 6],
    pub total: f64,
    pub gradient: Vec<f64>,
}

impl LossReport {
    pub fn get(&self, term: Term) -> f64 {
        self.values[term.index()]
    }

    /// `λ1·L_image + λ2·L_mask`.
    pub fn render_part(&self, w: &LossWeights) -> f64 {
        w.image * self.get(Term::Image) + w.mask * self.get(Term::Mask)
    }

    /// `λ3·L_sliding + λ4·L_penetration + λ5·L_con + λ6·L_smo`.
    pub fn physics_part(&self, w: &LossWeights) -> f64 {
        w.sliding * self.get(Term::Sliding)
            + w.penetration * self.get(Term::Penetration)
            + w.continuity * self.get(Term::Continuity)
            + w.smoothness * self.get(Term::Smoothness)
    }
}

/// Weighted combination of per-term values.
pub fn combine(values: &[f64; 6], weights: &LossWeights) -> f64 {
    Term::ALL.iter().map(|t| weights.get(*t) * values[t.index()]).sum()
}

fn finite(term: Term, v: f64) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::NonFinite {
            term: term.name().to_string(),
        })
    }
}

/// Evaluates all terms with positive weight at `params`. Temporal terms
/// whose history is absent evaluate to zero.
pub fn evaluate(
    ctx: &FrameContext<'_>,
    params: &ParamVector,
    weights: &LossWeights,
    with_gradient: bool,
    cache: Option<&HandCache>,
) -> Result<LossReport> {
    weights.validate()?;
    let state = params.unpack();
    let model = ctx.model;
    if state.theta.len() != model.theta_len() || state.beta.len() != model.num_betas() {
        return Err(Error::Dimension {
            what: "pose parameters",
            expected: model.theta_len() + model.num_betas() + 6,
            got: params.len(),
        });
    }
    let layout = *params.layout();
    let active = params.active_mask();
    let n_hand = layout.theta_len + layout.beta_len;
    let hand_active = with_gradient && active[..n_hand].iter().any(|&a| a);
    let obj_active = with_gradient && active[n_hand..].iter().any(|&a| a);

    let w = *weights;
    let needs_hand = w.mask > 0.0 || w.sliding > 0.0 || w.penetration > 0.0;
    let (hand_vertices, skin_jac) = if !needs_hand {
        (Vec::new(), None)
    } else if hand_active {
        let j = model.skin_jacobian(&state.theta, &state.beta, None, &active[..n_hand])?;
        (j.vertices.clone(), Some(j))
    } else if let Some(c) = cache {
        (c.vertices.clone(), None)
    } else {
        (model.skin(&state.theta, &state.beta)?, None)
    };

    let frame = RigidFrame::from_euler(state.obj_r, state.obj_t);
    let obj_local = ctx.object.mesh().vertices();
    let obj_faces = ctx.object.mesh().faces();
    let obj_world: Vec<Point3<f64>> = obj_local.iter().map(|m| frame.to_world(m)).collect();

    let mut values = [0.0; 6];
    let mut evaluated = [false; 6];
    let mut g_hand = vec![Vector3::zeros(); if hand_active { hand_vertices.len() } else { 0 }];
    let mut g_obj = vec![Vector3::zeros(); obj_world.len()];
    let mut g_r = [0.0; 3];
    let mut g_t = [0.0; 3];
    let mut g_theta = vec![0.0; layout.theta_len];

    // Rendering priors.
    if w.image > 0.0 || w.mask > 0.0 {
        let mask = ctx
            .mask
            .ok_or_else(|| Error::InvalidArgument("rendering priors need a detected mask".into()))?;
        let n = ctx.camera.pixel_count();
        if mask.width != ctx.camera.width || mask.height != ctx.camera.height {
            return Err(Error::Dimension {
                what: "detected mask pixels",
                expected: n,
                got: mask.width * mask.height,
            });
        }
        let m_hand = mask.hand();
        let m_obj = mask.object();
        let colors = if w.image > 0.0 {
            Some(
                ctx.object_colors
                    .ok_or_else(|| Error::InvalidArgument("image term needs object face colours".into()))?,
            )
        } else {
            None
        };
        let soft = rasterize_soft(&ctx.camera, &obj_world, obj_faces, &ctx.render, colors);
        let mut up_rgb: Option<Vec<[f64; 3]>> = None;
        let mut up_occ = vec![0.0; n];
        if w.image > 0.0 {
            let input = ctx
                .rgb
                .ok_or_else(|| Error::InvalidArgument("image term needs an input image".into()))?;
            if input.data.len() != n {
                return Err(Error::Dimension {
                    what: "input image pixels",
                    expected: n,
                    got: input.data.len(),
                });
            }
            let target: Vec<[f64; 3]> = input.data.iter().zip(&m_obj).map(|(c, m)| c.map(|x| x * m)).collect();
            let rendered = soft.rgb.as_ref().expect("colours were supplied");
            let (v, g) = image_loss(rendered, &m_hand, &target)?;
            values[Term::Image.index()] = finite(Term::Image, v)?;
            evaluated[Term::Image.index()] = true;
            up_rgb = Some(g.into_iter().map(|c| c.map(|x| x * w.image)).collect());
        }
        if w.mask > 0.0 {
            let occ_hand = match (cache, hand_active) {
                (Some(c), false) => c.occupancy.clone(),
                _ => rasterize_soft(&ctx.camera, &hand_vertices, model.faces(), &ctx.render, None).occupancy,
            };
            let (v, gh, go) = mask_loss(&occ_hand, &soft.occupancy, &m_hand, &m_obj)?;
            values[Term::Mask.index()] = finite(Term::Mask, v)?;
            evaluated[Term::Mask.index()] = true;
            for (u, g) in up_occ.iter_mut().zip(go) {
                *u = w.mask * g;
            }
            if hand_active {
                let up_hand: Vec<f64> = gh.iter().map(|g| w.mask * g).collect();
                let gv = rasterize_gradient(&ctx.camera, &hand_vertices, model.faces(), &ctx.render, None, &up_hand, None);
                for (a, b) in g_hand.iter_mut().zip(gv) {
                    *a += b;
                }
            }
        }
        if obj_active {
            let gv = rasterize_gradient(
                &ctx.camera,
                &obj_world,
                obj_faces,
                &ctx.render,
                colors,
                &up_occ,
                up_rgb.as_deref(),
            );
            for (a, b) in g_obj.iter_mut().zip(gv) {
                *a += b;
            }
        }
    }

    // Physics priors.
    if w.sliding > 0.0 {
        if let Some(prev) = ctx.prev {
            let pf = RigidFrame::from_euler(prev.pose.obj_r, prev.pose.obj_t);
            let mut cur = Vec::with_capacity(ctx.contact.len());
            let mut before = Vec::with_capacity(ctx.contact.len());
            for &i in ctx.contact {
                if i >= hand_vertices.len() || i >= prev.hand_vertices.len() {
                    return Err(Error::IndexOutOfRange {
                        index: i,
                        len: hand_vertices.len(),
                    });
                }
                cur.push(hand_vertices[i]);
                before.push(pf.to_local(&prev.hand_vertices[i]));
            }
            let g = sliding_loss(&cur, &before, &frame)?;
            values[Term::Sliding.index()] = finite(Term::Sliding, g.value)?;
            evaluated[Term::Sliding.index()] = true;
            if hand_active {
                for (k, &i) in ctx.contact.iter().enumerate() {
                    g_hand[i] += g.hand_vertices[k] * w.sliding;
                }
            }
            for a in 0..3 {
                g_r[a] += w.sliding * g.obj_r[a];
                g_t[a] += w.sliding * g.obj_t[a];
            }
        }
    }
    if w.penetration > 0.0 {
        let g = penetration_loss(&hand_vertices, ctx.object, &frame)?;
        values[Term::Penetration.index()] = finite(Term::Penetration, g.value)?;
        evaluated[Term::Penetration.index()] = true;
        if hand_active {
            for (a, b) in g_hand.iter_mut().zip(&g.hand_vertices) {
                *a += b * w.penetration;
            }
        }
        for a in 0..3 {
            g_r[a] += w.penetration * g.obj_r[a];
            g_t[a] += w.penetration * g.obj_t[a];
        }
    }
    if w.continuity > 0.0 {
        if let Some(prev) = ctx.prev {
            let before = prev.pose.object_vertices(obj_local);
            let (v, gv, gt) = continuity_loss(&obj_world, &before, &state.theta, &prev.pose.theta)?;
            values[Term::Continuity.index()] = finite(Term::Continuity, v)?;
            evaluated[Term::Continuity.index()] = true;
            for (a, b) in g_obj.iter_mut().zip(gv) {
                *a += b * w.continuity;
            }
            for (a, b) in g_theta.iter_mut().zip(gt) {
                *a += b * w.continuity;
            }
        }
    }
    if w.smoothness > 0.0 {
        if let (Some(p1), Some(p2)) = (ctx.prev, ctx.prev2) {
            let b1 = p1.pose.object_vertices(obj_local);
            let b2 = p2.pose.object_vertices(obj_local);
            let (v, gv) = smoothness_loss(&obj_world, &b1, &b2)?;
            values[Term::Smoothness.index()] = finite(Term::Smoothness, v)?;
            evaluated[Term::Smoothness.index()] = true;
            for (a, b) in g_obj.iter_mut().zip(gv) {
                *a += b * w.smoothness;
            }
        }
    }

    let total = combine(&values, weights);
    let mut gradient = Vec::new();
    if with_gradient {
        gradient = vec![0.0; params.len()];
        if let Some(j) = &skin_jac {
            for (g, p) in gradient[..n_hand].iter_mut().zip(j.pullback(&g_hand)) {
                *g += p;
            }
        }
        for (g, d) in gradient[layout.range(Span::Theta)].iter_mut().zip(&g_theta) {
            *g += d;
        }
        let (wr, wt) = frame.pullback_world(obj_local, &g_obj);
        let rr = layout.range(Span::ObjR);
        let tr = layout.range(Span::ObjT);
        for a in 0..3 {
            gradient[rr.start + a] += g_r[a] + wr[a];
            gradient[tr.start + a] += g_t[a] + wt[a];
        }
        params.zero_frozen(&mut gradient);
        if let Some(i) = gradient.iter().position(|g| !g.is_finite()) {
            let span = layout.span_of(i).map(Span::name).unwrap_or("?");
            return Err(Error::NonFinite {
                term: format!("gradient ({span})"),
            });
        }
    }
    Ok(LossReport {
        values,
        evaluated,
        total,
        gradient,
    })
}

/// Weighted frame loss as an [`Objective`]. Hand vertices and the hand
/// silhouette are computed once when θ and β are frozen.
pub struct FrameObjective<'c, 'a> {
    pub ctx: &'c FrameContext<'a>,
    pub weights: LossWeights,
    cache: OnceLock<HandCache>,
}

impl<'c, 'a> FrameObjective<'c, 'a> {
    pub fn new(ctx: &'c FrameContext<'a>, weights: LossWeights) -> Self {
        FrameObjective {
            ctx,
            weights,
            cache: OnceLock::new(),
        }
    }

    fn cache_for(&self, params: &ParamVector) -> Result<Option<&HandCache>> {
        let f = params.frozen();
        if !(f.theta && f.beta) {
            return Ok(None);
        }
        if self.cache.get().is_none() {
            let c = HandCache::new(self.ctx, &params.unpack())?;
            let _ = self.cache.set(c);
        }
        Ok(self.cache.get())
    }

    pub fn report(&self, params: &ParamVector, with_gradient: bool) -> Result<LossReport> {
        let cache = self.cache_for(params)?;
        evaluate(self.ctx, params, &self.weights, with_gradient, cache)
    }
}

impl Objective for FrameObjective<'_, '_> {
    fn name(&self) -> &str {
        "total"
    }

    fn value_and_gradient(&self, params: &ParamVector) -> Result<(f64, Vec<f64>)> {
        let r = self.report(params, true)?;
        Ok((r.total, r.gradient))
    }

    fn value(&self, params: &ParamVector) -> Result<f64> {
        Ok(self.report(params, false)?.total)
    }
}

/// One line of a loss trace.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TraceRow {
    pub frame: usize,
    pub iteration: usize,
    pub term: String,
    pub value: f64,
}

/// Rows for every evaluated term plus the weighted total.
pub fn trace_rows(frame: usize, iteration: usize, report: &LossReport) -> Vec<TraceRow> {
    let mut rows: Vec<TraceRow> = Term::ALL
        .iter()
        .filter(|t| report.evaluated[t.index()])
        .map(|t| TraceRow {
            frame,
            iteration,
            term: t.name().to_string(),
            value: report.get(*t),
        })
        .collect();
    rows.push(TraceRow {
        frame,
        iteration,
        term: "total".into(),
        value: report.total,
    });
    rows
}

/// CSV with header `frame,iteration,term,value`.
pub fn write_trace_csv(rows: &[TraceRow], path: impl AsRef<Path>) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}
