//! Reverse pass of the compositor.
//!
//! Per-pixel buffer gradients are pulled back through the compositing
//! recursion into per-footprint quantities (2D mean, conic, opacity, depth,
//! normal, color). The projection from 3D parameters to those quantities is
//! then differentiated in forward mode over the ten geometric inputs of each
//! Gaussian.

use nalgebra::{SVector, Vector3};
use num_dual::{gradient, DualSVec64};

use super::{gaussian_core_inputs, project_all, project_core, RenderBuffers, RenderConfig};
use crate::image::{RgbImage, ScalarMap};
use crate::scene::{CameraView, Gaussian3D, PARAMS_PER_GAUSSIAN};

/// Upstream gradients of a scalar loss with respect to the render buffers.
#[derive(Debug, Clone, Default)]
pub struct BufferGrads {
    pub color: Option<RgbImage>,
    pub depth: Option<ScalarMap>,
    pub normal: Option<RgbImage>,
    pub acc_alpha: Option<ScalarMap>,
}

impl BufferGrads {
    pub fn is_empty(&self) -> bool {
        self.color.is_none() && self.depth.is_none() && self.normal.is_none() && self.acc_alpha.is_none()
    }

    /// Adds `scale · other` into `self`.
    pub fn accumulate(&mut self, other: &BufferGrads, scale: f64) {
        fn add3(dst: &mut Option<RgbImage>, src: &Option<RgbImage>, s: f64) {
            if let Some(src) = src {
                let d = dst.get_or_insert_with(|| RgbImage::filled(src.width(), src.height(), [0.0; 3]));
                for (a, b) in d.as_mut_slice().iter_mut().zip(src.as_slice()) {
                    for c in 0..3 {
                        a[c] += s * b[c];
                    }
                }
            }
        }
        fn add1(dst: &mut Option<ScalarMap>, src: &Option<ScalarMap>, s: f64) {
            if let Some(src) = src {
                let d = dst.get_or_insert_with(|| ScalarMap::filled(src.width(), src.height(), 0.0));
                for (a, b) in d.as_mut_slice().iter_mut().zip(src.as_slice()) {
                    *a += s * b;
                }
            }
        }
        add3(&mut self.color, &other.color, scale);
        add1(&mut self.depth, &other.depth, scale);
        add3(&mut self.normal, &other.normal, scale);
        add1(&mut self.acc_alpha, &other.acc_alpha, scale);
    }
}

/// Loss gradient for one Gaussian.
///
/// `log_scale`, `rotation` (raw `w,x,y,z` quaternion) and `color` are in the
/// optimizer's parameter domain; `opacity` is with respect to the opacity
/// value itself (see [`GaussianGrad::to_params`] for the logit domain).
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct GaussianGrad {
    pub center: Vector3<f64>,
    pub log_scale: Vector3<f64>,
    pub rotation: [f64; 4],
    pub opacity: f64,
    pub color: Vector3<f64>,
}

impl GaussianGrad {
    pub fn to_params(&self, g: &Gaussian3D) -> [f64; PARAMS_PER_GAUSSIAN] {
        let o = g.opacity;
        [
            self.center.x,
            self.center.y,
            self.center.z,
            self.log_scale.x,
            self.log_scale.y,
            self.log_scale.z,
            self.rotation[0],
            self.rotation[1],
            self.rotation[2],
            self.rotation[3],
            self.opacity * o * (1.0 - o),
            self.color.x,
            self.color.y,
            self.color.z,
        ]
    }

    pub fn add_scaled(&mut self, other: &GaussianGrad, s: f64) {
        self.center += other.center * s;
        self.log_scale += other.log_scale * s;
        for i in 0..4 {
            self.rotation[i] += other.rotation[i] * s;
        }
        self.opacity += other.opacity * s;
        self.color += other.color * s;
    }
}

#[derive(Clone, Copy, Default)]
struct FootprintGrad {
    mean: [f64; 2],
    conic: [f64; 3],
    opacity: f64,
    depth: f64,
    normal: [f64; 3],
    color: [f64; 3],
}

/// Pulls buffer gradients back to every Gaussian. `buffers` must come from a
/// render of the same Gaussians, camera and config with contributions recorded.
pub fn render_backward(
    gaussians: &[Gaussian3D],
    cam: &CameraView,
    cfg: &RenderConfig,
    buffers: &RenderBuffers,
    grads: &BufferGrads,
) -> Vec<GaussianGrad> {
    let contribs = buffers
        .contribs
        .as_ref()
        .expect("render_backward needs recorded contributions");
    let projected = project_all(gaussians, cam, cfg);
    let mut slot_of = vec![usize::MAX; gaussians.len()];
    for (s, p) in projected.iter().enumerate() {
        slot_of[p.gaussian_index] = s;
    }
    let mut fp = vec![FootprintGrad::default(); projected.len()];
    let w = cam.width;
    let mut gw = Vec::new();

    for flat in 0..contribs.num_pixels() {
        let list = contribs.pixel_at(flat);
        if list.is_empty() {
            continue;
        }
        let g_col = grads.color.as_ref().map_or([0.0; 3], |m| m.as_slice()[flat]);
        let g_depth = grads.depth.as_ref().map_or(0.0, |m| m.as_slice()[flat]);
        let g_norm = grads.normal.as_ref().map_or([0.0; 3], |m| m.as_slice()[flat]);
        let mut g_acc = grads.acc_alpha.as_ref().map_or(0.0, |m| m.as_slice()[flat]);
        if g_col == [0.0; 3] && g_depth == 0.0 && g_norm == [0.0; 3] && g_acc == 0.0 {
            continue;
        }

        let mut acc = 0.0;
        let mut dz = 0.0;
        let mut nsum = [0.0; 3];
        for c in list {
            let p = &projected[slot_of[c.gaussian as usize]];
            let wgt = c.weight();
            acc += wgt;
            dz += wgt * p.center_depth;
            for k in 0..3 {
                nsum[k] += wgt * p.normal[k];
            }
        }
        let mut g_dz = 0.0;
        if acc > 0.0 && g_depth != 0.0 {
            g_dz = g_depth / acc;
            g_acc -= g_depth * dz / (acc * acc);
        }
        let mut g_nsum = [0.0; 3];
        let nn = (nsum[0] * nsum[0] + nsum[1] * nsum[1] + nsum[2] * nsum[2]).sqrt();
        if nn > 0.0 && g_norm != [0.0; 3] {
            let nh = [nsum[0] / nn, nsum[1] / nn, nsum[2] / nn];
            let proj = g_norm[0] * nh[0] + g_norm[1] * nh[1] + g_norm[2] * nh[2];
            for k in 0..3 {
                g_nsum[k] = (g_norm[k] - nh[k] * proj) / nn;
            }
        }

        // dL/dw_i for each term, with w_i = α_i T_i
        gw.clear();
        for c in list {
            let s = slot_of[c.gaussian as usize];
            let p = &projected[s];
            let wgt = c.weight();
            let mut g = g_acc + g_dz * p.center_depth;
            for k in 0..3 {
                g += g_col[k] * p.color[k] + g_nsum[k] * p.normal[k];
            }
            gw.push(g);
            let f = &mut fp[s];
            f.depth += wgt * g_dz;
            for k in 0..3 {
                f.color[k] += wgt * g_col[k];
                f.normal[k] += wgt * g_nsum[k];
            }
        }

        let (px, py) = ((flat % w) as f64, (flat / w) as f64);
        let mut suffix = 0.0;
        for (c, &g) in list.iter().zip(&gw).rev() {
            let g_alpha = c.transmittance * g - suffix / (1.0 - c.alpha);
            suffix += c.weight() * g;
            let s = slot_of[c.gaussian as usize];
            let p = &projected[s];
            let dx = px - p.mean2d.x;
            let dy = py - p.mean2d.y;
            let (qa, qb, qc) = (p.conic[(0, 0)], p.conic[(0, 1)], p.conic[(1, 1)]);
            let power = qa * dx * dx + 2.0 * qb * dx * dy + qc * dy * dy;
            let gval = (-0.5 * power).exp();
            if p.opacity * gval >= cfg.alpha_max {
                continue;
            }
            let f = &mut fp[s];
            f.opacity += g_alpha * gval;
            let g_g = g_alpha * p.opacity * gval;
            f.mean[0] += g_g * (qa * dx + qb * dy);
            f.mean[1] += g_g * (qb * dx + qc * dy);
            f.conic[0] += -0.5 * g_g * dx * dx;
            f.conic[1] += -g_g * dx * dy;
            f.conic[2] += -0.5 * g_g * dy * dy;
        }
    }

    let mut out = vec![GaussianGrad::default(); gaussians.len()];
    for (p, f) in projected.iter().zip(&fp) {
        let gi = p.gaussian_index;
        let g = &gaussians[gi];
        let (c, s, q) = gaussian_core_inputs(g);
        let x = SVector::<f64, 10>::from_iterator(c.iter().chain(&s).chain(&q).copied());
        let (_, d) = gradient(
            |v: SVector<DualSVec64<10>, 10>| {
                let core = project_core(
                    [v[0], v[1], v[2]],
                    [v[3], v[4], v[5]],
                    [v[6], v[7], v[8], v[9]],
                    g.shortest_axis(),
                    cam,
                    cfg.cov2d_eps,
                );
                let mut proxy = core.depth * f.depth;
                for k in 0..2 {
                    proxy += core.mean[k] * f.mean[k];
                }
                for k in 0..3 {
                    proxy += core.conic[k] * f.conic[k] + core.normal[k] * f.normal[k];
                }
                proxy
            },
            x,
        );
        out[gi] = GaussianGrad {
            center: Vector3::new(d[0], d[1], d[2]),
            log_scale: Vector3::new(d[3] * s[0], d[4] * s[1], d[5] * s[2]),
            rotation: [d[6], d[7], d[8], d[9]],
            opacity: f.opacity,
            color: Vector3::from(f.color),
        };
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::render::render_gaussians;
    use crate::scene::Intrinsics;
    use nalgebra::UnitQuaternion;

    fn scene() -> (Vec<Gaussian3D>, CameraView) {
        let gs = (0..6)
            .map(|i| {
                let f = i as f64;
                Gaussian3D::new(
                    Vector3::new(-0.4 + 0.16 * f, 0.1 * (f * 1.3).sin(), 0.05 * (f * 2.1).cos()),
                    Vector3::new(0.2, 0.15 + 0.01 * f, 0.03),
                    UnitQuaternion::from_euler_angles(0.2 * f, -0.1 * f, 0.4 * f),
                    0.6 + 0.05 * f,
                    Vector3::new(0.1 + 0.1 * f, 0.9 - 0.1 * f, 0.5),
                )
                .unwrap()
            })
            .collect();
        let k = Intrinsics {
            fx: 30.0,
            fy: 30.0,
            cx: 11.5,
            cy: 11.5,
        };
        let cam = CameraView::look_at(0, 24, 24, k, Vector3::new(0.2, 0.1, 2.0), Vector3::zeros(), Vector3::y()).unwrap();
        (gs, cam)
    }

    fn weights(w: usize, h: usize, seed: f64) -> (ScalarMap, RgbImage) {
        let s = ScalarMap::from_fn(w, h, |x, y| (x as f64 * 0.7 + y as f64 * 1.3 + seed).sin());
        let c = RgbImage::from_fn(w, h, |x, y| {
            let t = x as f64 * 0.31 - y as f64 * 0.57 + seed;
            [t.sin(), t.cos(), (2.0 * t).sin()]
        });
        (s, c)
    }

    fn linear_loss(b: &RenderBuffers, g: &BufferGrads) -> f64 {
        let mut v = 0.0;
        if let Some(m) = &g.color {
            v += m.as_slice().iter().zip(b.color.as_slice()).map(|(a, c)| a[0] * c[0] + a[1] * c[1] + a[2] * c[2]).sum::<f64>();
        }
        if let Some(m) = &g.normal {
            v += m.as_slice().iter().zip(b.normal.as_slice()).map(|(a, c)| a[0] * c[0] + a[1] * c[1] + a[2] * c[2]).sum::<f64>();
        }
        if let Some(m) = &g.depth {
            v += m.as_slice().iter().zip(b.depth.as_slice()).map(|(a, c)| a * c).sum::<f64>();
        }
        if let Some(m) = &g.acc_alpha {
            v += m.as_slice().iter().zip(b.acc_alpha.as_slice()).map(|(a, c)| a * c).sum::<f64>();
        }
        v
    }

    fn check(grads: BufferGrads, label: &str) {
        let (gs, cam) = scene();
        let cfg = RenderConfig::smooth();
        let b = render_gaussians(&gs, &cam, &cfg, true);
        let an = render_backward(&gs, &cam, &cfg, &b, &grads);
        let mut worst = 0.0f64;
        let mut scale = 0.0f64;
        let mut rows = Vec::new();
        for (i, g) in gs.iter().enumerate() {
            let p = g.to_params();
            let a = an[i].to_params(g);
            for k in 0..PARAMS_PER_GAUSSIAN {
                let h = 1e-5 * p[k].abs().max(0.1);
                let mut q = gs.clone();
                let mut pp = p;
                pp[k] += h;
                q[i] = Gaussian3D::from_params(&pp);
                let fp = linear_loss(&render_gaussians(&q, &cam, &cfg, false), &grads);
                pp[k] -= 2.0 * h;
                q[i] = Gaussian3D::from_params(&pp);
                let fm = linear_loss(&render_gaussians(&q, &cam, &cfg, false), &grads);
                let num = (fp - fm) / (2.0 * h);
                scale = scale.max(num.abs());
                rows.push((i, k, a[k], num));
            }
        }
        for &(i, k, a, n) in &rows {
            let e = (a - n).abs() / a.abs().max(n.abs()).max(1e-6 * scale);
            worst = worst.max(e);
            assert!(e < 1e-4, "{label}: gaussian {i} param {k}: analytic {a} numeric {n}");
        }
    }

    #[test]
    fn color_gradient_matches_finite_differences() {
        let (_, c) = weights(24, 24, 0.3);
        check(BufferGrads { color: Some(c), ..Default::default() }, "color");
    }

    #[test]
    fn depth_gradient_matches_finite_differences() {
        let (s, _) = weights(24, 24, 1.1);
        check(BufferGrads { depth: Some(s), ..Default::default() }, "depth");
    }

    #[test]
    fn normal_gradient_matches_finite_differences() {
        let (_, c) = weights(24, 24, 2.0);
        check(BufferGrads { normal: Some(c), ..Default::default() }, "normal");
    }

    #[test]
    fn acc_gradient_matches_finite_differences() {
        let (s, _) = weights(24, 24, -0.7);
        check(BufferGrads { acc_alpha: Some(s), ..Default::default() }, "acc");
    }
}
