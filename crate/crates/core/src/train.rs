//! First-order training loop with per-group learning rates.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::image::ScalarMap;
use crate::objective::{batch_from_neighbors, Batch, LossWeights, Objective, ObjectiveError, TermValues, ViewData};
use crate::render::{render_gaussians, RenderConfig};
use crate::scene::{param_layout, CameraView, Gaussian3D, PARAMS_PER_GAUSSIAN};
use crate::synth::{make_synthetic_scene, MonoDepthModel, SceneDescriptor, SynthError, SyntheticScene};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TrainError {
    #[error(transparent)]
    Objective(#[from] ObjectiveError),
    #[error("diverged at iteration {iteration}: loss above 10x its initial value for {window} iterations")]
    Diverged { iteration: u64, window: u64 },
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("view data count {data} does not match camera count {views}")]
    DataMismatch { views: usize, data: usize },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LearningRates {
    pub center: f64,
    pub scale: f64,
    pub rotation: f64,
    pub opacity: f64,
    pub color: f64,
}

impl Default for LearningRates {
    fn default() -> Self {
        Self {
            center: 2e-4,
            scale: 5e-3,
            rotation: 1e-3,
            opacity: 5e-2,
            color: 2.5e-3,
        }
    }
}

impl LearningRates {
    fn for_param(&self, k: usize) -> f64 {
        match k {
            k if k < param_layout::LOG_SCALE => self.center,
            k if k < param_layout::ROTATION => self.scale,
            k if k < param_layout::OPACITY => self.rotation,
            k if k < param_layout::COLOR => self.opacity,
            _ => self.color,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OptimizerKind {
    /// Plain gradient descent, `θ ← θ − lr·g`.
    Gd,
    /// Adaptive moments (β1 0.9, β2 0.999, ε 1e-15).
    Adam,
}

impl OptimizerKind {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "gd" => Some(Self::Gd),
            "adam" => Some(Self::Adam),
            _ => None,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::Gd => "gd",
            Self::Adam => "adam",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub iterations: u64,
    pub lr: LearningRates,
    pub weights: LossWeights,
    pub optimizer: OptimizerKind,
    pub seed: u64,
    /// Neighbors paired with each reference view.
    pub neighbors: usize,
    pub max_neighbor_angle_deg: f64,
    /// Depth error is measured every this many iterations (and at the ends).
    pub eval_every: u64,
    pub render: RenderConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            iterations: 30_000,
            lr: LearningRates::default(),
            weights: LossWeights::default(),
            optimizer: OptimizerKind::Gd,
            seed: 0,
            neighbors: 1,
            max_neighbor_angle_deg: 90.0,
            eval_every: 100,
            render: RenderConfig::default(),
        }
    }
}

impl TrainConfig {
    /// Rescales the activation window and quadtree milestones from a
    /// 30k-iteration run to `iterations`.
    pub fn scaled_schedule(mut self, iterations: u64) -> Self {
        let s = |v: u64| ((v as f64) * iterations as f64 / 30_000.0).round() as u64;
        self.iterations = iterations;
        let (a, b) = crate::calibration::DEFAULT_QDC_WINDOW;
        self.weights.qdc_window = (s(a), s(b).max(s(a) + 1));
        let mut last = None;
        self.weights.quadtree_milestones = crate::calibration::DEFAULT_MILESTONES
            .iter()
            .map(|&m| {
                let v = s(m).max(last.map_or(0, |l| l + 1));
                last = Some(v);
                v
            })
            .collect();
        self
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        self.weights.validate()?;
        let lr = [self.lr.center, self.lr.scale, self.lr.rotation, self.lr.opacity, self.lr.color];
        if lr.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
            return Err(TrainError::Config("learning rates must be finite and non-negative".into()));
        }
        if self.neighbors == 0 {
            return Err(TrainError::Config("at least one neighbor view is required".into()));
        }
        if self.eval_every == 0 {
            return Err(TrainError::Config("eval_every must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRow {
    pub iteration: u64,
    pub terms: TermValues,
    pub total: f64,
    pub depth_rmse: Option<f64>,
    pub level: usize,
    pub qdc_active: bool,
}

pub const METRICS_HEADER: &str = "iteration,total,rgb,s,mvrgb,gvmv,qdc,depth_rmse,level,qdc_active";

impl MetricsRow {
    pub fn csv(&self) -> String {
        let t = &self.terms;
        format!(
            "{},{:e},{:e},{:e},{:e},{:e},{:e},{},{},{}",
            self.iteration,
            self.total,
            t.rgb,
            t.single,
            t.mvrgb,
            t.gvmv,
            t.qdc,
            self.depth_rmse.map_or(String::new(), |d| format!("{d:e}")),
            self.level,
            u8::from(self.qdc_active)
        )
    }
}

pub fn metrics_csv(rows: &[MetricsRow]) -> String {
    let mut s = String::from(METRICS_HEADER);
    s.push('\n');
    for r in rows {
        s.push_str(&r.csv());
        s.push('\n');
    }
    s
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutput {
    pub gaussians: Vec<Gaussian3D>,
    pub metrics: Vec<MetricsRow>,
    pub flags: Vec<String>,
}

impl TrainOutput {
    /// `(first, last)` measured depth RMSE.
    pub fn depth_rmse_span(&self) -> Option<(f64, f64)> {
        let mut it = self.metrics.iter().filter_map(|m| m.depth_rmse);
        let first = it.next()?;
        Some((first, it.last().unwrap_or(first)))
    }
}

/// RMSE of rendered depth against ground truth over every ground-truth
/// foreground pixel of every view; pixels the render leaves empty count with
/// their zero sentinel.
pub fn depth_rmse(gaussians: &[Gaussian3D], views: &[CameraView], gt: &[ScalarMap], cfg: &RenderConfig) -> f64 {
    let mut sum = 0.0;
    let mut n = 0usize;
    for (cam, g) in views.iter().zip(gt) {
        let b = render_gaussians(gaussians, cam, cfg, false);
        for (r, t) in b.depth.as_slice().iter().zip(g.as_slice()) {
            if *t > 0.0 {
                sum += (r - t) * (r - t);
                n += 1;
            }
        }
    }
    if n == 0 {
        0.0
    } else {
        (sum / n as f64).sqrt()
    }
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    const B1: f64 = 0.9;
    const B2: f64 = 0.999;
    const EPS: f64 = 1e-15;

    fn new(n: usize) -> Self {
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    fn direction(&mut self, grads: &[f64]) -> Vec<f64> {
        self.t += 1;
        let c1 = 1.0 - Self::B1.powi(self.t);
        let c2 = 1.0 - Self::B2.powi(self.t);
        grads
            .iter()
            .enumerate()
            .map(|(i, g)| {
                self.m[i] = Self::B1 * self.m[i] + (1.0 - Self::B1) * g;
                self.v[i] = Self::B2 * self.v[i] + (1.0 - Self::B2) * g * g;
                (self.m[i] / c1) / ((self.v[i] / c2).sqrt() + Self::EPS)
            })
            .collect()
    }
}

/// Trips once the loss has stayed above 10x its first value for
/// `window` consecutive iterations.
#[derive(Debug, Clone, PartialEq)]
pub struct DivergenceGuard {
    initial: Option<f64>,
    over: u64,
    window: u64,
}

impl DivergenceGuard {
    pub const WINDOW: u64 = 100;

    pub fn new(window: u64) -> Self {
        Self {
            initial: None,
            over: 0,
            window,
        }
    }

    /// Records one loss value; `true` means training should stop.
    pub fn observe(&mut self, loss: f64) -> bool {
        let init = *self.initial.get_or_insert(loss);
        if loss > 10.0 * init || !loss.is_finite() {
            self.over += 1;
        } else {
            self.over = 0;
        }
        self.over >= self.window
    }
}

/// Optimizes `gaussians` against `data`. `gt_depth`, when given, is used only
/// for the logged depth error.
pub fn train(
    gaussians: &[Gaussian3D],
    views: &[CameraView],
    data: &[ViewData],
    gt_depth: Option<&[ScalarMap]>,
    cfg: &TrainConfig,
) -> Result<TrainOutput, TrainError> {
    cfg.validate()?;
    if views.len() != data.len() {
        return Err(TrainError::DataMismatch {
            views: views.len(),
            data: data.len(),
        });
    }
    let mut current = gaussians.to_vec();
    let mut metrics = Vec::new();
    let mut flags = Vec::new();
    if cfg.iterations == 0 {
        return Ok(TrainOutput {
            gaussians: current,
            metrics,
            flags,
        });
    }
    let pairs = batch_from_neighbors(views, cfg.neighbors, cfg.max_neighbor_angle_deg);
    let mut per_ref: Vec<Batch> = vec![Vec::new(); views.len()];
    for &(r, n) in &pairs {
        per_ref[r].push((r, n));
    }
    let mut refs: Vec<usize> = (0..views.len()).filter(|&r| !per_ref[r].is_empty()).collect();
    if refs.is_empty() {
        return Err(TrainError::Config("no view has a usable neighbor".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = Vec::new();

    let mut obj = Objective::new(views, data, per_ref[refs[0]].clone(), cfg.weights.clone());
    obj.render = cfg.render;
    let mut params: Vec<f64> = current.iter().flat_map(|g| g.to_params()).collect();
    let mut adam = Adam::new(params.len());
    let mut guard = DivergenceGuard::new(DivergenceGuard::WINDOW);

    for it in 0..cfg.iterations {
        if order.is_empty() {
            refs.shuffle(&mut rng);
            order = refs.iter().rev().copied().collect();
        }
        let r = order.pop().expect("refilled above");
        obj.batch = per_ref[r].clone();
        let (grads, report) = obj.compute_gradients(&current, it)?;
        for f in &report.flags {
            if !flags.contains(f) {
                flags.push(f.clone());
            }
        }

        if guard.observe(report.total) {
            return Err(TrainError::Diverged {
                iteration: it,
                window: DivergenceGuard::WINDOW,
            });
        }

        let measure = gt_depth.filter(|_| it % cfg.eval_every == 0);
        metrics.push(MetricsRow {
            iteration: it,
            terms: report.terms,
            total: report.total,
            depth_rmse: measure.map(|gt| depth_rmse(&current, views, gt, &cfg.render)),
            level: report.level,
            qdc_active: report.qdc_active,
        });

        let step = match cfg.optimizer {
            OptimizerKind::Gd => grads,
            OptimizerKind::Adam => adam.direction(&grads),
        };
        for (k, (p, d)) in params.iter_mut().zip(&step).enumerate() {
            *p -= cfg.lr.for_param(k % PARAMS_PER_GAUSSIAN) * d;
        }
        for (chunk, g) in params.chunks_mut(PARAMS_PER_GAUSSIAN).zip(current.iter_mut()) {
            *g = Gaussian3D::from_params(chunk);
            // renormalized quaternion and clamped color written back
            chunk.copy_from_slice(&g.to_params());
        }
    }

    if let Some(gt) = gt_depth {
        let (report_total, report) = obj.total_loss(&current, cfg.iterations)?;
        metrics.push(MetricsRow {
            iteration: cfg.iterations,
            terms: report.terms,
            total: report_total,
            depth_rmse: Some(depth_rmse(&current, views, gt, &cfg.render)),
            level: report.level,
            qdc_active: report.qdc_active,
        });
    }
    Ok(TrainOutput {
        gaussians: current,
        metrics,
        flags,
    })
}

/// A synthetic training problem: cameras, observations, ground-truth depth
/// and a perturbed starting point.
/// Subpixel rays per axis for ray-traced targets.
pub const TARGET_SUPERSAMPLING: usize = 3;

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticProblem {
    pub synthetic: SyntheticScene,
    pub views: Vec<CameraView>,
    pub data: Vec<ViewData>,
    pub gt_depth: Vec<ScalarMap>,
    pub init: Vec<Gaussian3D>,
}

/// Ray-traces targets from the analytic surfaces, simulates monocular depth
/// and perturbs the ground-truth Gaussians' centers by `noise_fraction` of
/// the scene extent.
pub fn synthetic_problem(
    desc: &SceneDescriptor,
    noise_fraction: f64,
    mono: &MonoDepthModel,
) -> Result<SyntheticProblem, SynthError> {
    let synthetic = make_synthetic_scene(desc)?;
    let views = synthetic.scene.views.clone();
    let data = views
        .iter()
        .map(|v| {
            ViewData::new(synthetic.shade(v, TARGET_SUPERSAMPLING), Some(synthetic.monocular_depth(v, mono, desc.seed)))
        })
        .collect();
    let gt_depth = views.iter().map(|v| synthetic.depth_map(v)).collect();
    let init = synthetic.perturbed_gaussians(noise_fraction, desc.seed.wrapping_add(1));
    Ok(SyntheticProblem {
        synthetic,
        views,
        data,
        gt_depth,
        init,
    })
}
