//! Forward rasterizer: EWA projection of each Gaussian into the image plane,
//! a per-view depth sort, and front-to-back alpha compositing of color,
//! depth, opacity and normals.

mod backward;

pub use backward::{render_backward, BufferGrads, GaussianGrad};

use nalgebra::{Matrix2, Vector2, Vector3};
use num_dual::DualNum;
use rayon::prelude::*;

use crate::image::{Image, RgbImage, ScalarMap};
use crate::scene::{CameraView, Gaussian3D, Scene};

/// Rasterizer thresholds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RenderConfig {
    /// Upper clamp of a single contribution's opacity.
    pub alpha_max: f64,
    /// Contributions below this opacity are skipped.
    pub alpha_cut: f64,
    /// Compositing stops once transmittance drops below this.
    pub t_stop: f64,
    /// Low-pass term added to both diagonal entries of the 2D covariance (px²).
    pub cov2d_eps: f64,
    /// Footprint truncation radius in standard deviations.
    pub cutoff_sigma: f64,
    /// Centers closer than this (camera z) are culled.
    pub near_clip: f64,
    /// Side length of the square binning tiles, in pixels.
    pub tile_size: usize,
}

impl Default for RenderConfig {
    fn default() -> Self {
        Self {
            alpha_max: 0.99,
            alpha_cut: 1.0 / 255.0,
            t_stop: 1e-4,
            cov2d_eps: 0.3,
            cutoff_sigma: 3.0,
            near_clip: 0.01,
            tile_size: 16,
        }
    }
}

impl RenderConfig {
    /// Thresholds with every discontinuity pushed out of reach: no opacity
    /// cut, no early termination and a footprint wide enough that truncation
    /// drops only contributions below ~1e-14. Used for finite-difference
    /// verification of gradients.
    pub fn smooth() -> Self {
        Self {
            alpha_cut: 0.0,
            t_stop: 0.0,
            cutoff_sigma: 8.0,
            ..Self::default()
        }
    }
}

/// A Gaussian's screen-space footprint in one view.
#[derive(Debug, Clone, PartialEq)]
pub struct Projected2D {
    pub mean2d: Vector2<f64>,
    /// 2D covariance including the low-pass term.
    pub cov2d: Matrix2<f64>,
    /// Inverse of `cov2d`.
    pub conic: Matrix2<f64>,
    /// Camera-space z of the center.
    pub center_depth: f64,
    pub gaussian_index: usize,
    /// Shortest principal axis in camera coordinates, facing the camera.
    pub normal: Vector3<f64>,
    pub opacity: f64,
    pub color: Vector3<f64>,
    /// Inclusive pixel bounds of the truncated footprint, clipped to the image.
    pub bbox: [usize; 4],
}

/// Outputs of the differentiable projection path.
pub(crate) struct ProjectionCore<T> {
    pub mean: [T; 2],
    /// Regularized covariance entries `[xx, xy, yy]`.
    pub cov: [T; 3],
    /// Inverse covariance entries `[xx, xy, yy]`.
    pub conic: [T; 3],
    pub depth: T,
    pub normal: [T; 3],
}

/// Rotation matrix of a (not necessarily normalized) quaternion `w, x, y, z`.
pub(crate) fn quat_to_matrix<T: DualNum<f64> + Copy>(q: [T; 4]) -> [[T; 3]; 3] {
    let n = (q[0] * q[0] + q[1] * q[1] + q[2] * q[2] + q[3] * q[3]).sqrt();
    let (w, x, y, z) = (q[0] / n, q[1] / n, q[2] / n, q[3] / n);
    let one = T::from(1.0);
    let two = T::from(2.0);
    [
        [
            one - two * (y * y + z * z),
            two * (x * y - w * z),
            two * (x * z + w * y),
        ],
        [
            two * (x * y + w * z),
            one - two * (x * x + z * z),
            two * (y * z - w * x),
        ],
        [
            two * (x * z - w * y),
            two * (y * z + w * x),
            one - two * (x * x + y * y),
        ],
    ]
}

/// EWA projection generic over the scalar type so the same code yields both
/// values and forward-mode derivatives.
pub(crate) fn project_core<T: DualNum<f64> + Copy>(
    center: [T; 3],
    scale: [T; 3],
    quat: [T; 4],
    shortest_axis: usize,
    cam: &CameraView,
    cov2d_eps: f64,
) -> ProjectionCore<T> {
    let w = &cam.rotation;
    let t = &cam.translation;
    let k = &cam.intrinsics;
    let r = quat_to_matrix(quat);

    let mut pc = [T::from(0.0); 3];
    for i in 0..3 {
        pc[i] = center[0] * w[(i, 0)] + center[1] * w[(i, 1)] + center[2] * w[(i, 2)] + t[i];
    }
    // camera-space covariance factor W·R·diag(s)
    let mut m = [[T::from(0.0); 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            let wr = r[0][j] * w[(i, 0)] + r[1][j] * w[(i, 1)] + r[2][j] * w[(i, 2)];
            m[i][j] = wr * scale[j];
        }
    }
    let (x, y, z) = (pc[0], pc[1], pc[2]);
    let iz = z.recip();
    let iz2 = iz * iz;
    let j0 = [iz * k.fx, T::from(0.0), -(x * iz2 * k.fx)];
    let j1 = [T::from(0.0), iz * k.fy, -(y * iz2 * k.fy)];
    let mut t0 = [T::from(0.0); 3];
    let mut t1 = [T::from(0.0); 3];
    for c in 0..3 {
        t0[c] = j0[0] * m[0][c] + j0[1] * m[1][c] + j0[2] * m[2][c];
        t1[c] = j1[0] * m[0][c] + j1[1] * m[1][c] + j1[2] * m[2][c];
    }
    let dot = |a: &[T; 3], b: &[T; 3]| a[0] * b[0] + a[1] * b[1] + a[2] * b[2];
    let a = dot(&t0, &t0) + cov2d_eps;
    let b = dot(&t0, &t1);
    let c = dot(&t1, &t1) + cov2d_eps;
    let det = a * c - b * b;
    let conic = [c / det, -(b / det), a / det];
    let mean = [x * iz * k.fx + k.cx, y * iz * k.fy + k.cy];

    let ax = shortest_axis;
    let mut n = [T::from(0.0); 3];
    for i in 0..3 {
        n[i] = r[0][ax] * w[(i, 0)] + r[1][ax] * w[(i, 1)] + r[2][ax] * w[(i, 2)];
    }
    let facing = n[0].re() * x.re() + n[1].re() * y.re() + n[2].re() * z.re();
    if facing > 0.0 {
        n = [-n[0], -n[1], -n[2]];
    }
    ProjectionCore {
        mean,
        cov: [a, b, c],
        conic,
        depth: z,
        normal: n,
    }
}

pub(crate) fn gaussian_core_inputs(g: &Gaussian3D) -> ([f64; 3], [f64; 3], [f64; 4]) {
    let q = g.rotation.quaternion();
    (
        [g.center.x, g.center.y, g.center.z],
        [g.scale.x, g.scale.y, g.scale.z],
        [q.w, q.i, q.j, q.k],
    )
}

/// Projects one Gaussian; `None` when the center is behind the near plane or
/// the truncated footprint lies entirely outside the image.
pub fn project(g: &Gaussian3D, index: usize, cam: &CameraView, cfg: &RenderConfig) -> Option<Projected2D> {
    let pc = cam.world_to_camera(&g.center);
    if !(pc.z > cfg.near_clip) {
        return None;
    }
    let (c, s, q) = gaussian_core_inputs(g);
    let core = project_core(c, s, q, g.shortest_axis(), cam, cfg.cov2d_eps);
    let [mx, my] = core.mean;
    let [a, b, cc] = core.cov;
    let rx = cfg.cutoff_sigma * a.sqrt();
    let ry = cfg.cutoff_sigma * cc.sqrt();
    let (w, h) = (cam.width as f64, cam.height as f64);
    if !(mx + rx >= 0.0 && mx - rx <= w - 1.0 && my + ry >= 0.0 && my - ry <= h - 1.0) {
        return None;
    }
    let bbox = [
        (mx - rx).ceil().max(0.0) as usize,
        ((mx + rx).floor().min(w - 1.0)).max(0.0) as usize,
        (my - ry).ceil().max(0.0) as usize,
        ((my + ry).floor().min(h - 1.0)).max(0.0) as usize,
    ];
    Some(Projected2D {
        mean2d: Vector2::new(mx, my),
        cov2d: Matrix2::new(a, b, b, cc),
        conic: Matrix2::new(core.conic[0], core.conic[1], core.conic[1], core.conic[2]),
        center_depth: core.depth,
        gaussian_index: index,
        normal: Vector3::new(core.normal[0], core.normal[1], core.normal[2]),
        opacity: g.opacity,
        color: g.color,
        bbox,
    })
}

/// One composited term at one pixel.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Contribution {
    pub gaussian: u32,
    /// Effective opacity `α_i(x)` after clamping.
    pub alpha: f64,
    /// Transmittance `T_i(x)` in front of this term.
    pub transmittance: f64,
}

impl Contribution {
    #[inline]
    pub fn weight(&self) -> f64 {
        self.alpha * self.transmittance
    }
}

/// Per-pixel ordered contribution lists stored contiguously.
#[derive(Debug, Clone, PartialEq)]
pub struct Contributions {
    width: usize,
    offsets: Vec<usize>,
    entries: Vec<Contribution>,
}

impl Contributions {
    pub fn pixel(&self, x: usize, y: usize) -> &[Contribution] {
        let i = y * self.width + x;
        &self.entries[self.offsets[i]..self.offsets[i + 1]]
    }

    pub fn pixel_at(&self, flat: usize) -> &[Contribution] {
        &self.entries[self.offsets[flat]..self.offsets[flat + 1]]
    }

    pub fn num_pixels(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn all(&self) -> &[Contribution] {
        &self.entries
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RenderBuffers {
    pub color: RgbImage,
    /// Alpha-blended center depth normalized by `acc_alpha`; 0 where nothing was composited.
    pub depth: ScalarMap,
    pub acc_alpha: ScalarMap,
    /// Transmittance left after the last composited term.
    pub final_transmittance: ScalarMap,
    /// Camera-space unit normals; zero where nothing was composited.
    pub normal: RgbImage,
    pub contribs: Option<Contributions>,
}

impl RenderBuffers {
    pub fn width(&self) -> usize {
        self.depth.width()
    }

    pub fn height(&self) -> usize {
        self.depth.height()
    }
}

/// Projects and depth-sorts every Gaussian. Ties on depth are broken by index.
pub fn project_all(gaussians: &[Gaussian3D], cam: &CameraView, cfg: &RenderConfig) -> Vec<Projected2D> {
    let mut out: Vec<Projected2D> = gaussians
        .iter()
        .enumerate()
        .filter_map(|(i, g)| project(g, i, cam, cfg))
        .collect();
    out.sort_by(|a, b| {
        a.center_depth
            .total_cmp(&b.center_depth)
            .then(a.gaussian_index.cmp(&b.gaussian_index))
    });
    out
}

struct RowResult {
    color: Vec<[f64; 3]>,
    depth: Vec<f64>,
    acc: Vec<f64>,
    final_t: Vec<f64>,
    normal: Vec<[f64; 3]>,
    counts: Vec<usize>,
    entries: Vec<Contribution>,
}

pub fn render(scene: &Scene, cam: &CameraView, cfg: &RenderConfig, record_contribs: bool) -> RenderBuffers {
    render_gaussians(&scene.gaussians, cam, cfg, record_contribs)
}

pub fn render_gaussians(
    gaussians: &[Gaussian3D],
    cam: &CameraView,
    cfg: &RenderConfig,
    record_contribs: bool,
) -> RenderBuffers {
    let (w, h) = (cam.width, cam.height);
    let projected = project_all(gaussians, cam, cfg);
    let ts = cfg.tile_size.max(1);
    let (tiles_x, tiles_y) = (w.div_ceil(ts), h.div_ceil(ts));
    let mut tiles: Vec<Vec<u32>> = vec![Vec::new(); tiles_x * tiles_y];
    for (slot, p) in projected.iter().enumerate() {
        let [x0, x1, y0, y1] = p.bbox;
        for ty in y0 / ts..=y1 / ts {
            for tx in x0 / ts..=x1 / ts {
                tiles[ty * tiles_x + tx].push(slot as u32);
            }
        }
    }
    let cutoff2 = cfg.cutoff_sigma * cfg.cutoff_sigma;

    let rows: Vec<RowResult> = (0..h)
        .into_par_iter()
        .map(|y| {
            let mut row = RowResult {
                color: Vec::with_capacity(w),
                depth: Vec::with_capacity(w),
                acc: Vec::with_capacity(w),
                final_t: Vec::with_capacity(w),
                normal: Vec::with_capacity(w),
                counts: Vec::with_capacity(w),
                entries: Vec::new(),
            };
            for x in 0..w {
                let list = &tiles[(y / ts) * tiles_x + x / ts];
                let (px, py) = (x as f64, y as f64);
                let mut t = 1.0;
                let mut acc = 0.0;
                let mut col = [0.0; 3];
                let mut dz = 0.0;
                let mut nsum = [0.0; 3];
                let start = row.entries.len();
                for &slot in list {
                    let p = &projected[slot as usize];
                    let [bx0, bx1, by0, by1] = p.bbox;
                    if x < bx0 || x > bx1 || y < by0 || y > by1 {
                        continue;
                    }
                    let dx = px - p.mean2d.x;
                    let dy = py - p.mean2d.y;
                    let power = p.conic[(0, 0)] * dx * dx
                        + 2.0 * p.conic[(0, 1)] * dx * dy
                        + p.conic[(1, 1)] * dy * dy;
                    if power > cutoff2 {
                        continue;
                    }
                    let alpha = (p.opacity * (-0.5 * power).exp()).min(cfg.alpha_max);
                    if alpha < cfg.alpha_cut {
                        continue;
                    }
                    let wgt = alpha * t;
                    for c in 0..3 {
                        col[c] += wgt * p.color[c];
                        nsum[c] += wgt * p.normal[c];
                    }
                    acc += wgt;
                    dz += wgt * p.center_depth;
                    row.entries.push(Contribution {
                        gaussian: p.gaussian_index as u32,
                        alpha,
                        transmittance: t,
                    });
                    t *= 1.0 - alpha;
                    if t < cfg.t_stop {
                        break;
                    }
                }
                row.counts.push(row.entries.len() - start);
                row.color.push(col);
                row.acc.push(acc);
                row.final_t.push(t);
                row.depth.push(if acc > 0.0 { dz / acc } else { 0.0 });
                let nn = (nsum[0] * nsum[0] + nsum[1] * nsum[1] + nsum[2] * nsum[2]).sqrt();
                row.normal.push(if nn > 0.0 {
                    [nsum[0] / nn, nsum[1] / nn, nsum[2] / nn]
                } else {
                    [0.0; 3]
                });
            }
            row
        })
        .collect();

    let n = w * h;
    let mut color = Vec::with_capacity(n);
    let mut depth = Vec::with_capacity(n);
    let mut acc = Vec::with_capacity(n);
    let mut final_t = Vec::with_capacity(n);
    let mut normal = Vec::with_capacity(n);
    let mut offsets = Vec::with_capacity(n + 1);
    let mut entries = Vec::new();
    offsets.push(0);
    for row in rows {
        color.extend(row.color);
        depth.extend(row.depth);
        acc.extend(row.acc);
        final_t.extend(row.final_t);
        normal.extend(row.normal);
        if record_contribs {
            for c in row.counts {
                let last = *offsets.last().unwrap();
                offsets.push(last + c);
            }
            entries.extend(row.entries);
        }
    }
    RenderBuffers {
        color: Image::from_vec(w, h, color),
        depth: Image::from_vec(w, h, depth),
        acc_alpha: Image::from_vec(w, h, acc),
        final_transmittance: Image::from_vec(w, h, final_t),
        normal: Image::from_vec(w, h, normal),
        contribs: record_contribs.then_some(Contributions {
            width: w,
            offsets,
            entries,
        }),
    }
}
