//! The total training objective and its parameter gradients.
//!
//! Evaluation happens in two stages. [`build_supervision`] renders the
//! current scene and freezes everything the losses treat as constant:
//! visibility-derived masks and weights, the single-view mask and the
//! calibrated monocular depth. [`evaluate`] then computes the loss terms and,
//! optionally, exact gradients of that frozen objective. Finite-difference
//! checks perturb parameters while keeping the supervision fixed.

use std::collections::{BTreeMap, BTreeSet};

use thiserror::Error;

use crate::calibration::{
    calibrate, qdc_backward, qdc_loss, schedule_level, CalibrationCache, CalibrationConfig, DepthPair,
};
use crate::consistency::{
    gvmv_backward, gvmv_loss, mv_photometric_loss_with_grad, reprojection_error, reprojection_error_with_grad,
    single_view_mask, single_view_masked, weighted_phi_sum, ConsistencyError, SupervisionMask,
};
use crate::image::{Mask, RgbImage, ScalarMap};
use crate::photometric::{photometric_loss, photometric_loss_with_grad, PhotometricError};
use crate::render::{render_backward, render_gaussians, BufferGrads, RenderBuffers, RenderConfig};
use crate::scene::{CameraView, Gaussian3D, PARAMS_PER_GAUSSIAN};
use crate::visibility::{covis_mask, selective_opacity_from_buffers, visibility_from_buffers};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ObjectiveError {
    #[error("batch is empty")]
    EmptyBatch,
    #[error("view index {0} out of range")]
    BadView(usize),
    #[error(transparent)]
    Photometric(#[from] PhotometricError),
    #[error(transparent)]
    Consistency(#[from] ConsistencyError),
    #[error("non-finite gradient in parameter group '{group}' from loss term '{term}'")]
    NonFiniteGradient { group: &'static str, term: &'static str },
    #[error("invalid loss weights: {0}")]
    InvalidWeights(String),
}

/// How the quadtree level is chosen while the depth term is active.
#[derive(Debug, Clone, PartialEq)]
pub enum QuadtreeMode {
    /// Level follows the milestone schedule.
    Progressive,
    /// Level is pinned (0 gives a single global affine calibration).
    Fixed(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossWeights {
    pub lambda1: f64,
    pub lambda2: f64,
    pub lambda3: f64,
    pub lambda4: f64,
    pub lambda_vis: f64,
    pub tau: f64,
    pub covis_threshold: f64,
    pub phi_max: f64,
    pub qdc_window: (u64, u64),
    pub quadtree_milestones: Vec<u64>,
    pub quadtree_mode: QuadtreeMode,
    pub calibration: CalibrationConfig,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda1: 0.1,
            lambda2: 0.2,
            lambda3: 0.05,
            lambda4: 0.05,
            lambda_vis: 0.5,
            tau: 0.01,
            covis_threshold: 0.5,
            phi_max: 1.0,
            qdc_window: crate::calibration::DEFAULT_QDC_WINDOW,
            quadtree_milestones: crate::calibration::DEFAULT_MILESTONES.to_vec(),
            quadtree_mode: QuadtreeMode::Progressive,
            calibration: CalibrationConfig::default(),
        }
    }
}

impl LossWeights {
    /// Every auxiliary term off.
    pub fn photometric_only() -> Self {
        Self {
            lambda1: 0.0,
            lambda2: 0.0,
            lambda3: 0.0,
            lambda4: 0.0,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), ObjectiveError> {
        let ws = [self.lambda1, self.lambda2, self.lambda3, self.lambda4, self.lambda_vis, self.tau];
        if ws.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
            return Err(ObjectiveError::InvalidWeights("weights must be finite and non-negative".into()));
        }
        if self.qdc_window.0 >= self.qdc_window.1 {
            return Err(ObjectiveError::InvalidWeights("qdc window start must precede its end".into()));
        }
        if self.quadtree_milestones.windows(2).any(|w| w[0] >= w[1]) {
            return Err(ObjectiveError::InvalidWeights("quadtree milestones must be strictly increasing".into()));
        }
        Ok(())
    }

    pub fn qdc_active(&self, iteration: u64) -> bool {
        iteration >= self.qdc_window.0 && iteration < self.qdc_window.1
    }

    pub fn level(&self, iteration: u64) -> usize {
        match self.quadtree_mode {
            QuadtreeMode::Progressive => {
                schedule_level(iteration, &self.quadtree_milestones, self.quadtree_milestones.len())
            }
            QuadtreeMode::Fixed(l) => l,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Term {
    Rgb,
    Single,
    MvRgb,
    Gvmv,
    Qdc,
}

impl Term {
    pub const ALL: [Term; 5] = [Term::Rgb, Term::Single, Term::MvRgb, Term::Gvmv, Term::Qdc];

    pub fn name(&self) -> &'static str {
        match self {
            Term::Rgb => "rgb",
            Term::Single => "s",
            Term::MvRgb => "mvrgb",
            Term::Gvmv => "gvmv",
            Term::Qdc => "qdc",
        }
    }
}

/// Multipliers applied to each term in one evaluation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TermScales {
    pub rgb: f64,
    pub single: f64,
    pub mvrgb: f64,
    pub gvmv: f64,
    pub qdc: f64,
}

impl TermScales {
    pub fn from_weights(w: &LossWeights, qdc_active: bool) -> Self {
        Self {
            rgb: 1.0,
            single: w.lambda1,
            mvrgb: w.lambda2,
            gvmv: w.lambda3,
            qdc: if qdc_active { w.lambda4 } else { 0.0 },
        }
    }

    pub fn only(term: Term) -> Self {
        let mut s = Self {
            rgb: 0.0,
            single: 0.0,
            mvrgb: 0.0,
            gvmv: 0.0,
            qdc: 0.0,
        };
        *s.get_mut(term) = 1.0;
        s
    }

    pub fn get(&self, term: Term) -> f64 {
        match term {
            Term::Rgb => self.rgb,
            Term::Single => self.single,
            Term::MvRgb => self.mvrgb,
            Term::Gvmv => self.gvmv,
            Term::Qdc => self.qdc,
        }
    }

    fn get_mut(&mut self, term: Term) -> &mut f64 {
        match term {
            Term::Rgb => &mut self.rgb,
            Term::Single => &mut self.single,
            Term::MvRgb => &mut self.mvrgb,
            Term::Gvmv => &mut self.gvmv,
            Term::Qdc => &mut self.qdc,
        }
    }
}

/// Per-view observations: target color, its gray version and optional monocular depth.
#[derive(Debug, Clone, PartialEq)]
pub struct ViewData {
    pub target: RgbImage,
    pub gray: ScalarMap,
    pub mono: Option<ScalarMap>,
}

impl ViewData {
    pub fn new(target: RgbImage, mono: Option<ScalarMap>) -> Self {
        let gray = target.to_gray();
        Self { target, gray, mono }
    }
}

/// Reference/neighbor view-index pairs.
pub type Batch = Vec<(usize, usize)>;

/// Every view paired with its selected neighbors.
pub fn batch_from_neighbors(views: &[CameraView], n_nb: usize, max_angle_deg: f64) -> Batch {
    crate::consistency::select_neighbors(views, n_nb, max_angle_deg)
        .into_iter()
        .enumerate()
        .flat_map(|(r, nbs)| nbs.into_iter().map(move |n| (r, n)))
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct PairSupervision {
    pub reference: usize,
    pub neighbor: usize,
    pub union_v: Mask,
    /// Detached `(exp(−φ) + λ·O_r) / |V|`; `None` when V had no valid pixel.
    pub gvmv_weights: Option<ScalarMap>,
    pub covis_fraction: f64,
    pub mean_phi: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ViewSupervision {
    pub single_mask: Mask,
    /// Calibrated monocular depth and the pixels it supervises.
    pub qdc: Option<(ScalarMap, Mask)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Supervision {
    pub pairs: Vec<PairSupervision>,
    pub views: BTreeMap<usize, ViewSupervision>,
    pub level: usize,
    pub qdc_active: bool,
    pub flags: Vec<String>,
}

pub type Renders = BTreeMap<usize, RenderBuffers>;

fn batch_views(batch: &Batch) -> BTreeSet<usize> {
    batch.iter().flat_map(|&(r, n)| [r, n]).collect()
}

fn batch_refs(batch: &Batch) -> BTreeSet<usize> {
    batch.iter().map(|&(r, _)| r).collect()
}

fn check_batch(batch: &Batch, views: &[CameraView], data: &[ViewData]) -> Result<(), ObjectiveError> {
    if batch.is_empty() {
        return Err(ObjectiveError::EmptyBatch);
    }
    for v in batch_views(batch) {
        if v >= views.len() || v >= data.len() {
            return Err(ObjectiveError::BadView(v));
        }
    }
    Ok(())
}

/// Renders every view the batch touches, with contribution lists.
pub fn render_views(gaussians: &[Gaussian3D], views: &[CameraView], batch: &Batch, cfg: &RenderConfig) -> Renders {
    batch_views(batch)
        .into_iter()
        .map(|v| (v, render_gaussians(gaussians, &views[v], cfg, true)))
        .collect()
}

/// Freezes masks, detached weights and calibrated depth at the current scene.
#[allow(clippy::too_many_arguments)]
pub fn build_supervision(
    gaussians: &[Gaussian3D],
    views: &[CameraView],
    data: &[ViewData],
    batch: &Batch,
    weights: &LossWeights,
    iteration: u64,
    renders: &Renders,
    cache: &mut CalibrationCache,
) -> Result<Supervision, ObjectiveError> {
    check_batch(batch, views, data)?;
    weights.validate()?;
    let mut flags = Vec::new();
    let mut pairs = Vec::with_capacity(batch.len());
    let mut union_by_ref: BTreeMap<usize, Mask> = BTreeMap::new();
    for &(r, n) in batch {
        let (br, bn) = (&renders[&r], &renders[&n]);
        let (cr, cn) = (&views[r], &views[n]);
        let rec = visibility_from_buffers(gaussians.len(), bn, cn.view_id, weights.tau)
            .expect("renders carry contributions");
        let opacity = selective_opacity_from_buffers(br, &rec.indicators, cr.view_id, cn.view_id)
            .expect("renders carry contributions");
        let covis = covis_mask(&opacity, weights.covis_threshold);
        let field = reprojection_error(&br.depth, &bn.depth, cr, cn)?;
        let covis_fraction = covis.count() as f64 / covis.len().max(1) as f64;
        let mask = SupervisionMask::new(&field, covis, weights.phi_max);
        let gvmv_weights = match gvmv_loss(&field, &opacity, &mask, weights.lambda_vis) {
            Ok(l) => Some(l.weights),
            Err(ConsistencyError::EmptySupervision { .. }) => {
                flags.push(format!("empty-supervision:{}-{}", cr.view_id, cn.view_id));
                None
            }
            Err(e) => return Err(e.into()),
        };
        union_by_ref
            .entry(r)
            .and_modify(|m| *m = m.or(&mask.union_v))
            .or_insert_with(|| mask.union_v.clone());
        pairs.push(PairSupervision {
            reference: r,
            neighbor: n,
            union_v: mask.union_v,
            gvmv_weights,
            covis_fraction,
            mean_phi: field.mean_phi(),
        });
    }
    let qdc_active = weights.qdc_active(iteration) && weights.lambda4 > 0.0;
    let level = weights.level(iteration);
    let mut view_sup = BTreeMap::new();
    for r in batch_refs(batch) {
        let b = &renders[&r];
        let qdc = match (&data[r].mono, qdc_active) {
            (Some(mono), true) => {
                let pair = DepthPair::new(mono, &b.depth, &union_by_ref[&r]);
                let calib = cache.get_or_fit(views[r].view_id, level, &pair, &weights.calibration);
                let calibrated = calib.apply(mono, pair.mask());
                if pair.mask().count() == 0 {
                    flags.push(format!("empty-qdc-mask:{}", views[r].view_id));
                }
                Some((calibrated, pair.mask().clone()))
            }
            _ => None,
        };
        view_sup.insert(
            r,
            ViewSupervision {
                single_mask: single_view_mask(&b.acc_alpha),
                qdc,
            },
        );
    }
    Ok(Supervision {
        pairs,
        views: view_sup,
        level,
        qdc_active,
        flags,
    })
}

/// Fresh (uncached) calibration of a view's mono depth at one level.
pub fn calibrate_view(mono: &ScalarMap, rendered: &ScalarMap, mask: &Mask, level: usize, cfg: &CalibrationConfig) -> ScalarMap {
    let pair = DepthPair::new(mono, rendered, mask);
    calibrate(&pair, level, cfg, 0).0
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct TermValues {
    pub rgb: f64,
    pub single: f64,
    pub mvrgb: f64,
    pub gvmv: f64,
    pub qdc: f64,
}

impl TermValues {
    pub fn get(&self, term: Term) -> f64 {
        match term {
            Term::Rgb => self.rgb,
            Term::Single => self.single,
            Term::MvRgb => self.mvrgb,
            Term::Gvmv => self.gvmv,
            Term::Qdc => self.qdc,
        }
    }

    pub fn weighted_total(&self, s: &TermScales) -> f64 {
        Term::ALL.iter().map(|&t| s.get(t) * self.get(t)).sum()
    }
}

/// L2 norms of the gradient per parameter group.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct GroupNorms {
    pub center: f64,
    pub scale: f64,
    pub rotation: f64,
    pub opacity: f64,
    pub color: f64,
}

pub const GROUPS: [(&str, std::ops::Range<usize>); 5] = [
    ("center", 0..3),
    ("scale", 3..6),
    ("rotation", 6..10),
    ("opacity", 10..11),
    ("color", 11..14),
];

impl GroupNorms {
    pub fn from_grads(grads: &[f64]) -> Self {
        let norm = |r: &std::ops::Range<usize>| {
            grads
                .chunks(PARAMS_PER_GAUSSIAN)
                .map(|g| g[r.clone()].iter().map(|v| v * v).sum::<f64>())
                .sum::<f64>()
                .sqrt()
        };
        Self {
            center: norm(&GROUPS[0].1),
            scale: norm(&GROUPS[1].1),
            rotation: norm(&GROUPS[2].1),
            opacity: norm(&GROUPS[3].1),
            color: norm(&GROUPS[4].1),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct GradientReport {
    pub terms: TermValues,
    pub total: f64,
    pub norms: GroupNorms,
    pub fd_max_rel_error: Option<f64>,
    pub level: usize,
    pub qdc_active: bool,
    pub flags: Vec<String>,
    pub mvrgb_used: usize,
    pub mvrgb_skipped: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub terms: TermValues,
    pub total: f64,
    pub mvrgb_used: usize,
    pub mvrgb_skipped: usize,
    /// Flat gradient, `PARAMS_PER_GAUSSIAN` entries per Gaussian, when requested.
    pub grads: Option<Vec<f64>>,
}

fn add_scalar(dst: &mut Option<ScalarMap>, src: &ScalarMap, s: f64) {
    let d = dst.get_or_insert_with(|| ScalarMap::filled(src.width(), src.height(), 0.0));
    for (a, b) in d.as_mut_slice().iter_mut().zip(src.as_slice()) {
        *a += s * b;
    }
}

fn add_rgb(dst: &mut Option<RgbImage>, src: &RgbImage, s: f64) {
    let d = dst.get_or_insert_with(|| RgbImage::filled(src.width(), src.height(), [0.0; 3]));
    for (a, b) in d.as_mut_slice().iter_mut().zip(src.as_slice()) {
        for c in 0..3 {
            a[c] += s * b[c];
        }
    }
}

/// Loss terms (and optionally exact gradients) of the frozen objective.
#[allow(clippy::too_many_arguments)]
pub fn evaluate(
    gaussians: &[Gaussian3D],
    views: &[CameraView],
    data: &[ViewData],
    batch: &Batch,
    sup: &Supervision,
    scales: &TermScales,
    cfg: &RenderConfig,
    renders: &Renders,
    want_grad: bool,
) -> Result<Evaluation, ObjectiveError> {
    check_batch(batch, views, data)?;
    let refs = batch_refs(batch);
    let n_refs = refs.len() as f64;
    let mut terms = TermValues::default();
    let mut bgrads: BTreeMap<usize, BufferGrads> = BTreeMap::new();

    let qdc_refs = sup.views.values().filter(|v| v.qdc.is_some()).count();
    for &r in &refs {
        let b = &renders[&r];
        let cam = &views[r];
        let vs = &sup.views[&r];
        if want_grad && scales.rgb != 0.0 {
            let (p, g) = photometric_loss_with_grad(&b.color, &data[r].target)?;
            terms.rgb += p.value / n_refs;
            add_rgb(&mut bgrads.entry(r).or_default().color, &g, scales.rgb / n_refs);
        } else {
            terms.rgb += photometric_loss(&b.color, &data[r].target)?.value / n_refs;
        }
        let (sv, sg) = single_view_masked(&b.depth, &b.normal, &vs.single_mask, cam, want_grad && scales.single != 0.0)?;
        terms.single += sv.value / n_refs;
        if let Some(sg) = sg {
            let e = bgrads.entry(r).or_default();
            add_scalar(&mut e.depth, &sg.depth, scales.single / n_refs);
            add_rgb(&mut e.normal, &sg.normal, scales.single / n_refs);
        }
        if let Some((calibrated, mask)) = &vs.qdc {
            let l = qdc_loss(calibrated, &b.depth, mask);
            let k = qdc_refs as f64;
            terms.qdc += l.value / k;
            if want_grad && scales.qdc != 0.0 {
                let g = qdc_backward(calibrated, &b.depth, mask, &l, scales.qdc / k);
                add_scalar(&mut bgrads.entry(r).or_default().depth, &g, 1.0);
            }
        }
    }

    let gvmv_pairs = sup.pairs.iter().filter(|p| p.gvmv_weights.is_some()).count();
    let n_pairs = sup.pairs.len() as f64;
    let mut mvrgb_used = 0;
    let mut mvrgb_skipped = 0;
    for p in &sup.pairs {
        let (r, n) = (p.reference, p.neighbor);
        let (br, bn) = (&renders[&r], &renders[&n]);
        let (cr, cn) = (&views[r], &views[n]);
        if let Some(w) = &p.gvmv_weights {
            let k = gvmv_pairs as f64;
            let grad_needed = want_grad && scales.gvmv != 0.0;
            let field = if grad_needed {
                reprojection_error_with_grad(&br.depth, &bn.depth, cr, cn)?
            } else {
                reprojection_error(&br.depth, &bn.depth, cr, cn)?
            };
            terms.gvmv += weighted_phi_sum(&field, w) / k;
            if grad_needed {
                let (gr, gn) = gvmv_backward(&field, w, scales.gvmv / k, (cn.width, cn.height));
                add_scalar(&mut bgrads.entry(r).or_default().depth, &gr, 1.0);
                add_scalar(&mut bgrads.entry(n).or_default().depth, &gn, 1.0);
            }
        }
        let (m, g) = mv_photometric_loss_with_grad(
            &data[r].gray,
            &data[n].gray,
            &br.depth,
            &br.normal,
            cr,
            cn,
            &p.union_v,
        )?;
        terms.mvrgb += m.value / n_pairs;
        mvrgb_used += m.used;
        mvrgb_skipped += m.skipped_degenerate + m.skipped_outside;
        if want_grad && scales.mvrgb != 0.0 {
            let e = bgrads.entry(r).or_default();
            add_scalar(&mut e.depth, &g.depth, scales.mvrgb / n_pairs);
            add_rgb(&mut e.normal, &g.normal, scales.mvrgb / n_pairs);
        }
    }

    let total = terms.weighted_total(scales);
    let grads = want_grad.then(|| {
        let mut flat = vec![0.0; gaussians.len() * PARAMS_PER_GAUSSIAN];
        for (v, bg) in &bgrads {
            if bg.is_empty() {
                continue;
            }
            let gg = render_backward(gaussians, &views[*v], cfg, &renders[v], bg);
            for (i, (g, gauss)) in gg.iter().zip(gaussians).enumerate() {
                let p = g.to_params(gauss);
                for (dst, src) in flat[i * PARAMS_PER_GAUSSIAN..(i + 1) * PARAMS_PER_GAUSSIAN].iter_mut().zip(p) {
                    *dst += src;
                }
            }
        }
        flat
    });
    Ok(Evaluation {
        terms,
        total,
        mvrgb_used,
        mvrgb_skipped,
        grads,
    })
}

/// Finds the first parameter group with a non-finite entry.
fn non_finite_group(grads: &[f64]) -> Option<&'static str> {
    for g in grads.chunks(PARAMS_PER_GAUSSIAN) {
        for (name, r) in GROUPS.iter() {
            if g[r.clone()].iter().any(|v| !v.is_finite()) {
                return Some(name);
            }
        }
    }
    None
}

/// Stateful front end: supervision refresh, caching and error reporting.
#[derive(Debug, Clone)]
pub struct Objective<'a> {
    pub views: &'a [CameraView],
    pub data: &'a [ViewData],
    pub batch: Batch,
    pub weights: LossWeights,
    pub render: RenderConfig,
    pub cache: CalibrationCache,
}

impl<'a> Objective<'a> {
    pub fn new(views: &'a [CameraView], data: &'a [ViewData], batch: Batch, weights: LossWeights) -> Self {
        Self {
            views,
            data,
            batch,
            weights,
            render: RenderConfig::default(),
            cache: CalibrationCache::new(),
        }
    }

    fn run(&mut self, gaussians: &[Gaussian3D], iteration: u64, want_grad: bool) -> Result<(Evaluation, GradientReport), ObjectiveError> {
        check_batch(&self.batch, self.views, self.data)?;
        let renders = render_views(gaussians, self.views, &self.batch, &self.render);
        let sup = build_supervision(
            gaussians,
            self.views,
            self.data,
            &self.batch,
            &self.weights,
            iteration,
            &renders,
            &mut self.cache,
        )?;
        let scales = TermScales::from_weights(&self.weights, sup.qdc_active);
        let ev = evaluate(gaussians, self.views, self.data, &self.batch, &sup, &scales, &self.render, &renders, want_grad)?;
        if let Some(g) = &ev.grads {
            if let Some(group) = non_finite_group(g) {
                let term = Term::ALL
                    .into_iter()
                    .filter(|&t| scales.get(t) != 0.0)
                    .find(|&t| {
                        evaluate(gaussians, self.views, self.data, &self.batch, &sup, &TermScales::only(t), &self.render, &renders, true)
                            .ok()
                            .and_then(|e| e.grads)
                            .is_some_and(|g| non_finite_group(&g).is_some())
                    })
                    .map_or("unknown", |t| t.name());
                return Err(ObjectiveError::NonFiniteGradient { group, term });
            }
        }
        let report = GradientReport {
            terms: ev.terms,
            total: ev.total,
            norms: ev.grads.as_deref().map(GroupNorms::from_grads).unwrap_or_default(),
            fd_max_rel_error: None,
            level: sup.level,
            qdc_active: sup.qdc_active,
            flags: sup.flags,
            mvrgb_used: ev.mvrgb_used,
            mvrgb_skipped: ev.mvrgb_skipped,
        };
        Ok((ev, report))
    }

    pub fn total_loss(&mut self, gaussians: &[Gaussian3D], iteration: u64) -> Result<(f64, GradientReport), ObjectiveError> {
        let (ev, report) = self.run(gaussians, iteration, false)?;
        Ok((ev.total, report))
    }

    pub fn compute_gradients(
        &mut self,
        gaussians: &[Gaussian3D],
        iteration: u64,
    ) -> Result<(Vec<f64>, GradientReport), ObjectiveError> {
        let (ev, report) = self.run(gaussians, iteration, true)?;
        Ok((ev.grads.expect("gradient requested"), report))
    }
}

/// Outcome of a finite-difference comparison.
#[derive(Debug, Clone, PartialEq)]
pub struct FdCheck {
    pub coordinates: usize,
    pub max_rel_error: f64,
    /// Fraction of coordinates with relative error below the tolerance.
    pub pass_fraction: f64,
    pub tolerance: f64,
    /// `(coordinate, analytic, numeric)` for the worst coordinates.
    pub worst: Vec<(usize, f64, f64)>,
}

impl FdCheck {
    pub fn passes(&self, min_fraction: f64) -> bool {
        self.pass_fraction >= min_fraction
    }
}

/// Rebuilds Gaussians from a flat parameter vector.
pub fn gaussians_from_flat(flat: &[f64]) -> Vec<Gaussian3D> {
    flat.chunks(PARAMS_PER_GAUSSIAN).map(Gaussian3D::from_params).collect()
}

pub fn flat_params(gaussians: &[Gaussian3D]) -> Vec<f64> {
    gaussians.iter().flat_map(|g| g.to_params()).collect()
}

/// Central differences of one term of the frozen objective against its
/// analytic gradient. Each coordinate `θ` is differenced with steps
/// `h·max(|θ|, 0.1)` for every `h` in `rel_steps`, and the step agreeing best
/// is kept: wide steps straddle the L1 and bilinear-sampling kinks, narrow
/// ones drown in roundoff, and which regime dominates differs per term.
#[allow(clippy::too_many_arguments)]
pub fn finite_difference_check(
    gaussians: &[Gaussian3D],
    views: &[CameraView],
    data: &[ViewData],
    batch: &Batch,
    sup: &Supervision,
    term: Term,
    cfg: &RenderConfig,
    rel_steps: &[f64],
    tolerance: f64,
) -> Result<FdCheck, ObjectiveError> {
    let scales = TermScales::only(term);
    let renders = render_views(gaussians, views, batch, cfg);
    let analytic = evaluate(gaussians, views, data, batch, sup, &scales, cfg, &renders, true)?
        .grads
        .expect("gradient requested");
    let base = flat_params(gaussians);
    let value_at = |params: &[f64]| -> Result<f64, ObjectiveError> {
        let gs = gaussians_from_flat(params);
        let rs = render_views(&gs, views, batch, cfg);
        Ok(evaluate(&gs, views, data, batch, sup, &scales, cfg, &rs, false)?.total)
    };
    let mut numeric = vec![Vec::with_capacity(rel_steps.len()); base.len()];
    for (k, out) in numeric.iter_mut().enumerate() {
        for rel in rel_steps {
            let h = rel * base[k].abs().max(0.1);
            let mut p = base.clone();
            p[k] = base[k] + h;
            let fp = value_at(&p)?;
            p[k] = base[k] - h;
            let fm = value_at(&p)?;
            out.push((fp - fm) / (2.0 * h));
        }
    }
    let scale = analytic
        .iter()
        .chain(numeric.iter().flatten())
        .fold(0.0f64, |m, v| m.max(v.abs()));
    let floor = 1e-6 * scale.max(1e-12);
    let mut errs: Vec<(f64, usize, f64)> = analytic
        .iter()
        .zip(&numeric)
        .enumerate()
        .map(|(k, (a, fs))| {
            fs.iter()
                .map(|f| ((a - f).abs() / a.abs().max(f.abs()).max(floor), k, *f))
                .min_by(|x, y| x.0.total_cmp(&y.0))
                .unwrap_or((0.0, k, 0.0))
        })
        .collect();
    let pass = errs.iter().filter(|e| e.0 < tolerance).count();
    errs.sort_by(|a, b| b.0.total_cmp(&a.0));
    Ok(FdCheck {
        coordinates: base.len(),
        max_rel_error: errs.first().map_or(0.0, |e| e.0),
        pass_fraction: pass as f64 / base.len().max(1) as f64,
        tolerance,
        worst: errs.iter().take(5).map(|&(_, k, f)| (k, analytic[k], f)).collect(),
    })
}

/// Default step set for [`finite_difference_check`].
pub const FD_STEPS: [f64; 3] = [1e-4, 1e-5, 1e-6];
