//! Oracles and scene generators shared by the integration tests.
#![allow(dead_code)]

use gvgs_core::image::{RgbImage, ScalarMap};
use gvgs_core::render::RenderConfig;
use gvgs_core::scene::{CameraView, Gaussian3D, Intrinsics};
use nalgebra::{Matrix2, Matrix3, UnitQuaternion, Vector2, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn camera(width: usize, height: usize) -> CameraView {
    let f = 0.9 * width as f64;
    let k = Intrinsics {
        fx: f,
        fy: f,
        cx: (width as f64 - 1.0) / 2.0,
        cy: (height as f64 - 1.0) / 2.0,
    };
    CameraView::new(0, width, height, k, Matrix3::identity(), Vector3::zeros()).unwrap()
}

/// A second camera orbiting the same target as [`camera`] by `angle` radians.
pub fn orbit_camera(id: u32, width: usize, height: usize, angle: f64) -> CameraView {
    let base = camera(width, height);
    let target = Vector3::new(0.0, 0.0, 3.0);
    let eye = target + Vector3::new(3.0 * angle.sin(), 0.0, -3.0 * angle.cos());
    CameraView::look_at(id, width, height, base.intrinsics, eye, target, -Vector3::y()).unwrap()
}

/// Up to `max_n` random Gaussians in a box in front of [`camera`].
pub fn random_gaussians(seed: u64, max_n: usize) -> Vec<Gaussian3D> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.gen_range(1..=max_n);
    (0..n)
        .map(|_| {
            let center = Vector3::new(rng.gen_range(-1.2..1.2), rng.gen_range(-1.2..1.2), rng.gen_range(2.0..4.5));
            let scale = Vector3::new(rng.gen_range(0.02..0.3), rng.gen_range(0.02..0.3), rng.gen_range(0.005..0.2));
            let rotation = UnitQuaternion::from_euler_angles(
                rng.gen_range(-3.1..3.1),
                rng.gen_range(-3.1..3.1),
                rng.gen_range(-3.1..3.1),
            );
            let color = Vector3::new(rng.gen(), rng.gen(), rng.gen());
            Gaussian3D::new(center, scale, rotation, rng.gen_range(0.05..0.99), color).unwrap()
        })
        .collect()
}

pub struct BruteForce {
    pub color: RgbImage,
    pub depth: ScalarMap,
    pub acc_alpha: ScalarMap,
    pub final_transmittance: ScalarMap,
}

struct Footprint {
    index: usize,
    mean: Vector2<f64>,
    conic: Matrix2<f64>,
    depth: f64,
    opacity: f64,
    color: Vector3<f64>,
}

/// Per-pixel compositor over every Gaussian, with no tiling or bounding boxes.
/// The EWA footprint is rebuilt here from the world covariance and the
/// perspective Jacobian. `gate` filters which terms are accumulated while
/// transmittance always runs over every term.
pub fn brute_force(gaussians: &[Gaussian3D], cam: &CameraView, cfg: &RenderConfig, gate: Option<&[bool]>) -> BruteForce {
    let k = cam.intrinsics;
    let mut fps: Vec<Footprint> = gaussians
        .iter()
        .enumerate()
        .filter_map(|(index, g)| {
            let p = cam.world_to_camera(&g.center);
            if p.z <= cfg.near_clip {
                return None;
            }
            let j = nalgebra::Matrix2x3::new(
                k.fx / p.z,
                0.0,
                -k.fx * p.x / (p.z * p.z),
                0.0,
                k.fy / p.z,
                -k.fy * p.y / (p.z * p.z),
            );
            let cov = j * cam.rotation * g.covariance() * cam.rotation.transpose() * j.transpose()
                + Matrix2::identity() * cfg.cov2d_eps;
            let (u, v) = cam.project_camera(&p);
            Some(Footprint {
                index,
                mean: Vector2::new(u, v),
                conic: cov.try_inverse()?,
                depth: p.z,
                opacity: g.opacity,
                color: g.color,
            })
        })
        .collect();
    fps.sort_by(|a, b| a.depth.total_cmp(&b.depth).then(a.index.cmp(&b.index)));
    let (w, h) = (cam.width, cam.height);
    let mut color = RgbImage::filled(w, h, [0.0; 3]);
    let mut depth = ScalarMap::filled(w, h, 0.0);
    let mut acc_alpha = ScalarMap::filled(w, h, 0.0);
    let mut final_t = ScalarMap::filled(w, h, 1.0);
    for y in 0..h {
        for x in 0..w {
            let (mut t, mut acc, mut dz) = (1.0, 0.0, 0.0);
            let mut col = [0.0; 3];
            for f in &fps {
                let d = Vector2::new(x as f64, y as f64) - f.mean;
                let power = (d.transpose() * f.conic * d)[0];
                if power > cfg.cutoff_sigma * cfg.cutoff_sigma {
                    continue;
                }
                let alpha = (f.opacity * (-0.5 * power).exp()).min(cfg.alpha_max);
                if alpha < cfg.alpha_cut {
                    continue;
                }
                if gate.is_none_or(|g| g[f.index]) {
                    let wgt = alpha * t;
                    acc += wgt;
                    dz += wgt * f.depth;
                    for (c, v) in col.iter_mut().enumerate() {
                        *v += wgt * f.color[c];
                    }
                }
                t *= 1.0 - alpha;
                if t < cfg.t_stop {
                    break;
                }
            }
            color.set(x, y, col);
            acc_alpha.set(x, y, acc);
            final_t.set(x, y, t);
            depth.set(x, y, if acc > 0.0 { dz / acc } else { 0.0 });
        }
    }
    BruteForce {
        color,
        depth,
        acc_alpha,
        final_transmittance: final_t,
    }
}

/// Largest `|a − b| / max(|b|, floor)` over two maps.
pub fn max_rel_diff(a: &[f64], b: &[f64], floor: f64) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs() / y.abs().max(floor))
        .fold(0.0, f64::max)
}

pub fn flatten_rgb(img: &RgbImage) -> Vec<f64> {
    img.as_slice().iter().flatten().copied().collect()
}
