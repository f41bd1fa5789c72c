//! Deterministic synthetic scenes with analytic geometry.
//!
//! Every generator returns Gaussians sampled on known surfaces together with
//! the surfaces themselves, so ground-truth depth and co-visibility can be
//! ray-cast exactly for any camera.

use nalgebra::{Matrix3, UnitQuaternion, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

use crate::image::{Mask, RgbImage, ScalarMap};
use crate::scene::{CameraView, Gaussian3D, Intrinsics, Scene};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SynthError {
    #[error("unknown synthetic scene '{0}' (expected textured-plane, sphere or two-planes-occluder)")]
    UnknownScene(String),
    #[error("invalid descriptor: {0}")]
    InvalidDescriptor(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SceneKind {
    TexturedPlane,
    Sphere,
    TwoPlanesOccluder,
}

impl SceneKind {
    pub fn parse(name: &str) -> Result<Self, SynthError> {
        match name {
            "textured-plane" => Ok(Self::TexturedPlane),
            "sphere" => Ok(Self::Sphere),
            "two-planes-occluder" => Ok(Self::TwoPlanesOccluder),
            other => Err(SynthError::UnknownScene(other.to_string())),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::TexturedPlane => "textured-plane",
            Self::Sphere => "sphere",
            Self::TwoPlanesOccluder => "two-planes-occluder",
        }
    }
}

/// Everything a generator needs. Fields left at their defaults reproduce the
/// fixtures used by the test suites.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneDescriptor {
    pub kind: SceneKind,
    pub seed: u64,
    pub num_views: usize,
    pub width: usize,
    pub height: usize,
    /// Focal length as a multiple of the image width.
    pub focal_factor: f64,
    /// Horizontal distance of the camera ring from the scene's vertical axis.
    pub ring_radius: f64,
    /// Height of the camera ring above the scene center.
    pub ring_height: f64,
    /// Gaussians per side of the sampling grid (planes) or total count (sphere).
    pub density: usize,
}

impl SceneDescriptor {
    pub fn new(kind: SceneKind, seed: u64) -> Self {
        let (num_views, ring_radius, ring_height, density, focal_factor) = match kind {
            SceneKind::TexturedPlane => (4, 1.5, 2.2, 24, 0.9),
            SceneKind::Sphere => (8, 3.0, 1.0, 900, 0.9),
            SceneKind::TwoPlanesOccluder => (2, 1.2, 3.0, 30, 1.2),
        };
        Self {
            kind,
            seed,
            num_views,
            width: 64,
            height: 64,
            focal_factor,
            ring_radius,
            ring_height,
            density,
        }
    }

    pub fn from_name(name: &str, seed: u64) -> Result<Self, SynthError> {
        Ok(Self::new(SceneKind::parse(name)?, seed))
    }

    fn validate(&self) -> Result<(), SynthError> {
        if self.width < 2 || self.height < 2 {
            return Err(SynthError::InvalidDescriptor("image must be at least 2x2".into()));
        }
        if self.num_views == 0 {
            return Err(SynthError::InvalidDescriptor("need at least one view".into()));
        }
        if self.kind == SceneKind::TwoPlanesOccluder && self.num_views != 2 {
            return Err(SynthError::InvalidDescriptor(
                "two-planes-occluder is defined for exactly 2 views".into(),
            ));
        }
        if self.density < 2 || !(self.focal_factor > 0.0) {
            return Err(SynthError::InvalidDescriptor("density and focal factor must be positive".into()));
        }
        Ok(())
    }
}

/// Analytic surface primitives used as ground truth.
#[derive(Debug, Clone, PartialEq)]
pub enum Surface {
    /// Bounded planar rectangle `center + s·u + t·v`, `|s| ≤ half_u`, `|t| ≤ half_v`.
    Rect {
        center: Vector3<f64>,
        u: Vector3<f64>,
        v: Vector3<f64>,
        half_u: f64,
        half_v: f64,
    },
    Sphere {
        center: Vector3<f64>,
        radius: f64,
    },
}

impl Surface {
    /// Smallest positive ray parameter of an intersection.
    pub fn intersect(&self, origin: &Vector3<f64>, dir: &Vector3<f64>) -> Option<f64> {
        match self {
            Surface::Rect {
                center,
                u,
                v,
                half_u,
                half_v,
            } => {
                let n = u.cross(v);
                let denom = n.dot(dir);
                if denom.abs() < 1e-15 {
                    return None;
                }
                let t = n.dot(&(center - origin)) / denom;
                if t <= 0.0 {
                    return None;
                }
                let rel = origin + dir * t - center;
                (rel.dot(u).abs() <= *half_u && rel.dot(v).abs() <= *half_v).then_some(t)
            }
            Surface::Sphere { center, radius } => {
                let oc = origin - center;
                let b = oc.dot(dir);
                let c = oc.norm_squared() - radius * radius;
                let disc = b * b - c;
                if disc < 0.0 {
                    return None;
                }
                let s = disc.sqrt();
                [-b - s, -b + s].into_iter().find(|&t| t > 0.0)
            }
        }
    }

    /// Signed distance, positive outside (spheres) or on the `u × v` side (rects, unbounded).
    pub fn signed_distance(&self, p: &Vector3<f64>) -> f64 {
        match self {
            Surface::Rect { center, u, v, .. } => u.cross(v).dot(&(p - center)),
            Surface::Sphere { center, radius } => (p - center).norm() - radius,
        }
    }
}

/// A ray-cast hit: camera z-depth, surface index and world point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Hit {
    pub depth: f64,
    pub surface: usize,
    pub point: Vector3<f64>,
}

/// Affine-ambiguous, smoothly biased monocular depth simulation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MonoDepthModel {
    /// Global multiplicative scale (the affine ambiguity).
    pub scale: f64,
    /// Global additive shift.
    pub shift: f64,
    /// Relative amplitude of the smooth, view-dependent bias.
    pub bias: f64,
    /// Standard deviation of per-pixel noise, relative to depth.
    pub noise: f64,
}

impl Default for MonoDepthModel {
    fn default() -> Self {
        Self {
            scale: 0.5,
            shift: 1.0,
            bias: 0.04,
            noise: 0.002,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticScene {
    pub descriptor: SceneDescriptor,
    pub scene: Scene,
    pub surfaces: Vec<Surface>,
    /// Axis-aligned bounds of the surfaces.
    pub bounds: (Vector3<f64>, Vector3<f64>),
    /// Texture phase per surface.
    pub texture_phases: Vec<f64>,
}

fn frame_quaternion(u: &Vector3<f64>, v: &Vector3<f64>, n: &Vector3<f64>) -> UnitQuaternion<f64> {
    let m = Matrix3::from_columns(&[*u, *v, *n]);
    UnitQuaternion::from_rotation_matrix(&nalgebra::Rotation3::from_matrix_unchecked(m))
}

fn plane_texture(s: f64, t: f64, phase: f64) -> Vector3<f64> {
    use std::f64::consts::TAU;
    Vector3::new(
        0.5 + 0.35 * (TAU * (1.1 * s + 0.3 * t) + phase).sin(),
        0.5 + 0.35 * (TAU * (0.4 * s - 1.3 * t) + 0.7 * phase).sin(),
        0.5 + 0.3 * (TAU * (0.9 * s + 0.9 * t) + 1.3).cos() * (TAU * 0.5 * t).cos(),
    )
    .map(|c| c.clamp(0.0, 1.0))
}

/// Disk-like Gaussians on a jittered grid over a rectangle. `footprint` is
/// the in-plane standard deviation relative to the grid spacing.
fn sample_rect(
    out: &mut Vec<Gaussian3D>,
    rng: &mut ChaCha8Rng,
    rect: &Surface,
    per_side: usize,
    footprint: f64,
    opacity: f64,
    phase: f64,
) {
    let Surface::Rect {
        center,
        u,
        v,
        half_u,
        half_v,
    } = rect
    else {
        unreachable!("sample_rect needs a rectangle")
    };
    let n = u.cross(v);
    let nu = per_side;
    let nv = ((per_side as f64) * half_v / half_u).round().max(2.0) as usize;
    let du = 2.0 * half_u / nu as f64;
    let dv = 2.0 * half_v / nv as f64;
    let rot = frame_quaternion(u, v, &n);
    for j in 0..nv {
        for i in 0..nu {
            let s = -half_u + (i as f64 + 0.5 + rng.gen_range(-0.15..0.15)) * du;
            let t = -half_v + (j as f64 + 0.5 + rng.gen_range(-0.15..0.15)) * dv;
            out.push(Gaussian3D {
                center: center + u * s + v * t,
                scale: Vector3::new(footprint * du, footprint * dv, 0.05 * du.min(dv)),
                rotation: rot,
                opacity,
                color: plane_texture(s, t, phase),
            });
        }
    }
}

fn ring_cameras(d: &SceneDescriptor, target: Vector3<f64>, rng: &mut ChaCha8Rng) -> Vec<CameraView> {
    let f = d.focal_factor * d.width as f64;
    let k = Intrinsics {
        fx: f,
        fy: f,
        cx: (d.width as f64 - 1.0) / 2.0,
        cy: (d.height as f64 - 1.0) / 2.0,
    };
    let phase = rng.gen_range(0.0..0.2);
    (0..d.num_views)
        .map(|i| {
            let a = phase + std::f64::consts::TAU * i as f64 / d.num_views as f64;
            let eye = target + Vector3::new(d.ring_radius * a.cos(), d.ring_radius * a.sin(), d.ring_height);
            CameraView::look_at(i as u32, d.width, d.height, k, eye, target, Vector3::z())
                .expect("ring cameras are well-formed")
        })
        .collect()
}

/// Builds the scene named by the descriptor. Pure function of the descriptor.
pub fn make_synthetic_scene(desc: &SceneDescriptor) -> Result<SyntheticScene, SynthError> {
    desc.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(desc.seed);
    let mut gaussians = Vec::new();
    let mut surfaces = Vec::new();
    let mut phases = Vec::new();
    let views;
    match desc.kind {
        SceneKind::TexturedPlane => {
            let plane = Surface::Rect {
                center: Vector3::zeros(),
                u: Vector3::x(),
                v: Vector3::y(),
                half_u: 1.0,
                half_v: 1.0,
            };
            sample_rect(&mut gaussians, &mut rng, &plane, desc.density, 0.6, 0.95, 0.0);
            surfaces.push(plane);
            phases.push(0.0);
            views = ring_cameras(desc, Vector3::zeros(), &mut rng);
        }
        SceneKind::Sphere => {
            let (center, radius) = (Vector3::zeros(), 0.8);
            let n = desc.density;
            let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
            let spacing = (4.0 * std::f64::consts::PI * radius * radius / n as f64).sqrt();
            for i in 0..n {
                let z = 1.0 - 2.0 * (i as f64 + 0.5) / n as f64;
                let r = (1.0 - z * z).sqrt();
                let th = golden * i as f64 + rng.gen_range(-0.01..0.01);
                let normal = Vector3::new(r * th.cos(), r * th.sin(), z);
                let helper = if normal.z.abs() < 0.9 { Vector3::z() } else { Vector3::x() };
                let tu = helper.cross(&normal).normalize();
                let tv = normal.cross(&tu);
                gaussians.push(Gaussian3D {
                    center: center + normal * radius,
                    scale: Vector3::new(0.6 * spacing, 0.6 * spacing, 0.05 * spacing),
                    rotation: frame_quaternion(&tu, &tv, &normal),
                    opacity: 0.95,
                    color: sphere_texture(&normal, 0.0),
                });
            }
            surfaces.push(Surface::Sphere { center, radius });
            phases.push(0.0);
            views = ring_cameras(desc, Vector3::zeros(), &mut rng);
        }
        SceneKind::TwoPlanesOccluder => {
            let far = Surface::Rect {
                center: Vector3::zeros(),
                u: Vector3::x(),
                v: Vector3::y(),
                half_u: 1.0,
                half_v: 0.7,
            };
            sample_rect(&mut gaussians, &mut rng, &far, desc.density, 0.6, 0.95, 0.0);
            surfaces.push(far);
            phases.push(0.0);
            let f = desc.focal_factor * desc.width as f64;
            let k = Intrinsics {
                fx: f,
                fy: f,
                cx: (desc.width as f64 - 1.0) / 2.0,
                cy: (desc.height as f64 - 1.0) / 2.0,
            };
            let jitter = rng.gen_range(-0.02..0.02);
            let eyes = [
                Vector3::new(-desc.ring_radius, jitter, desc.ring_height),
                Vector3::new(desc.ring_radius, -jitter, desc.ring_height),
            ];
            views = eyes
                .iter()
                .enumerate()
                .map(|(i, eye)| {
                    CameraView::look_at(i as u32, desc.width, desc.height, k, *eye, Vector3::zeros(), Vector3::y())
                        .expect("occluder cameras are well-formed")
                })
                .collect::<Vec<_>>();
            // Opaque card in front of view 1, off to one side and outside view 0's frustum.
            let cam = &views[1];
            let fwd = cam.forward();
            let right = cam.rotation.row(0).transpose();
            let down = cam.rotation.row(1).transpose();
            let card_center = cam.center() + fwd * 1.3 + right * 0.25;
            let (cu, cv) = (right, -down);
            let card = Surface::Rect {
                center: card_center,
                u: cu,
                v: cv,
                half_u: 0.2,
                half_v: 0.2,
            };
            // dense, wide footprints so the card is opaque between Gaussian centers
            sample_rect(&mut gaussians, &mut rng, &card, 12, 1.2, 0.99, 2.0);
            surfaces.push(card);
            phases.push(2.0);
        }
    }
    let bounds = surface_bounds(&surfaces);
    Ok(SyntheticScene {
        descriptor: desc.clone(),
        scene: Scene { gaussians, views },
        surfaces,
        bounds,
        texture_phases: phases,
    })
}

fn sphere_texture(normal: &Vector3<f64>, phase: f64) -> Vector3<f64> {
    let r = (normal.x * normal.x + normal.y * normal.y).sqrt();
    let sin_th = if r > 1e-12 { normal.y / r } else { 0.0 };
    plane_texture(1.3 * normal.x, 1.1 * normal.z, sin_th + phase)
}

fn surface_bounds(surfaces: &[Surface]) -> (Vector3<f64>, Vector3<f64>) {
    let mut lo = Vector3::repeat(f64::INFINITY);
    let mut hi = Vector3::repeat(f64::NEG_INFINITY);
    for s in surfaces {
        match s {
            Surface::Rect {
                center,
                u,
                v,
                half_u,
                half_v,
            } => {
                for (a, b) in [(-1.0, -1.0), (-1.0, 1.0), (1.0, -1.0), (1.0, 1.0)] {
                    let p = center + u * (a * half_u) + v * (b * half_v);
                    lo = lo.inf(&p);
                    hi = hi.sup(&p);
                }
            }
            Surface::Sphere { center, radius } => {
                lo = lo.inf(&(center - Vector3::repeat(*radius)));
                hi = hi.sup(&(center + Vector3::repeat(*radius)));
            }
        }
    }
    (lo, hi)
}

impl SyntheticScene {
    /// Largest side of the surface bounding box.
    pub fn extent(&self) -> f64 {
        (self.bounds.1 - self.bounds.0).max()
    }

    pub fn ray_cast(&self, cam: &CameraView, u: f64, v: f64) -> Option<Hit> {
        let (origin, dir) = cam.pixel_ray(u, v);
        let mut best: Option<(f64, usize)> = None;
        for (i, s) in self.surfaces.iter().enumerate() {
            if let Some(t) = s.intersect(&origin, &dir) {
                if best.is_none_or(|(bt, _)| t < bt) {
                    best = Some((t, i));
                }
            }
        }
        best.map(|(t, surface)| {
            let point = origin + dir * t;
            Hit {
                depth: cam.world_to_camera(&point).z,
                surface,
                point,
            }
        })
    }

    /// Texture color at a ray-cast hit.
    pub fn surface_color(&self, hit: &Hit) -> Vector3<f64> {
        let phase = self.texture_phases[hit.surface];
        match &self.surfaces[hit.surface] {
            Surface::Rect { center, u, v, .. } => {
                let rel = hit.point - center;
                plane_texture(rel.dot(u), rel.dot(v), phase)
            }
            Surface::Sphere { center, radius } => sphere_texture(&((hit.point - center) / *radius), phase),
        }
    }

    /// Ray-traced image of the textured surfaces, box-filtered over
    /// `samples × samples` subpixel rays; misses are black.
    pub fn shade(&self, cam: &CameraView, samples: usize) -> RgbImage {
        let n = samples.max(1);
        let inv = 1.0 / (n * n) as f64;
        RgbImage::from_fn(cam.width, cam.height, |x, y| {
            let mut c = Vector3::zeros();
            for sy in 0..n {
                for sx in 0..n {
                    let u = x as f64 - 0.5 + (sx as f64 + 0.5) / n as f64;
                    let v = y as f64 - 0.5 + (sy as f64 + 0.5) / n as f64;
                    if let Some(h) = self.ray_cast(cam, u, v) {
                        c += self.surface_color(&h);
                    }
                }
            }
            c *= inv;
            [c.x, c.y, c.z]
        })
    }

    /// Ground-truth z-depth per pixel; 0 where the ray misses every surface.
    pub fn depth_map(&self, cam: &CameraView) -> ScalarMap {
        ScalarMap::from_fn(cam.width, cam.height, |x, y| {
            self.ray_cast(cam, x as f64, y as f64).map_or(0.0, |h| h.depth)
        })
    }

    /// Reference pixels whose surface point is unoccluded and in-image in `neighbor`.
    pub fn covisibility(&self, reference: &CameraView, neighbor: &CameraView) -> Mask {
        Mask::from_fn(reference.width, reference.height, |x, y| {
            let Some(hit) = self.ray_cast(reference, x as f64, y as f64) else {
                return false;
            };
            self.visible_from(&hit.point, neighbor)
        })
    }

    /// Whether a surface point is the first hit along its ray from `cam` and inside the image.
    pub fn visible_from(&self, point: &Vector3<f64>, cam: &CameraView) -> bool {
        let pc = cam.world_to_camera(point);
        if pc.z <= 0.0 {
            return false;
        }
        let (u, v) = cam.project_camera(&pc);
        if !(u >= 0.0 && v >= 0.0 && u <= (cam.width - 1) as f64 && v <= (cam.height - 1) as f64) {
            return false;
        }
        self.ray_cast(cam, u, v)
            .is_some_and(|h| (h.depth - pc.z).abs() <= 1e-6 * pc.z.max(1.0))
    }

    /// Simulated monocular depth for `cam`: an affine-ambiguous, smoothly
    /// biased and slightly noisy version of the ground truth. Background pixels
    /// get the farthest observed depth.
    pub fn monocular_depth(&self, cam: &CameraView, model: &MonoDepthModel, seed: u64) -> ScalarMap {
        let gt = self.depth_map(cam);
        let far = gt.as_slice().iter().copied().fold(0.0, f64::max) * 1.2;
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (cam.view_id as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
        let (p1, p2) = (rng.gen_range(0.0..6.3), rng.gen_range(0.0..6.3));
        let (w, h) = (cam.width as f64, cam.height as f64);
        ScalarMap::from_fn(cam.width, cam.height, |x, y| {
            let d = *gt.get(x, y);
            let d = if d > 0.0 { d } else { far };
            let (s, t) = (x as f64 / w, y as f64 / h);
            let bias = model.bias * ((3.0 * s + p1).sin() * (2.5 * t + p2).cos() + 0.5 * (4.0 * s * t + p2).sin());
            let noise: f64 = model.noise * rng.sample::<f64, _>(StandardNormal);
            model.scale * d * (1.0 + bias + noise) + model.shift
        })
    }

    /// Copy of the Gaussians with isotropic center noise of standard
    /// deviation `fraction · extent()`.
    pub fn perturbed_gaussians(&self, fraction: f64, seed: u64) -> Vec<Gaussian3D> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let sigma = fraction * self.extent();
        self.scene
            .gaussians
            .iter()
            .map(|g| {
                let mut g = g.clone();
                for c in 0..3 {
                    g.center[c] += sigma * rng.sample::<f64, _>(StandardNormal);
                }
                g
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_name_is_rejected() {
        assert!(matches!(
            SceneDescriptor::from_name("teapot", 0),
            Err(SynthError::UnknownScene(_))
        ));
    }

    #[test]
    fn generators_are_deterministic() {
        for kind in [SceneKind::TexturedPlane, SceneKind::Sphere, SceneKind::TwoPlanesOccluder] {
            let d = SceneDescriptor::new(kind, 17);
            assert_eq!(make_synthetic_scene(&d).unwrap(), make_synthetic_scene(&d).unwrap());
        }
        let a = make_synthetic_scene(&SceneDescriptor::new(SceneKind::Sphere, 1)).unwrap();
        let b = make_synthetic_scene(&SceneDescriptor::new(SceneKind::Sphere, 2)).unwrap();
        assert_ne!(a, b);
    }

    #[test]
    fn plane_depth_matches_closed_form() {
        let s = make_synthetic_scene(&SceneDescriptor::new(SceneKind::TexturedPlane, 3)).unwrap();
        assert_eq!(s.scene.views.len(), 4);
        for cam in &s.scene.views {
            let depth = s.depth_map(cam);
            let c = cam.center();
            let mut hits = 0;
            for y in 0..cam.height {
                for x in 0..cam.width {
                    // ray through the pixel in world space, intersected with z = 0
                    let k = &cam.intrinsics;
                    let dir_cam = Vector3::new((x as f64 - k.cx) / k.fx, (y as f64 - k.cy) / k.fy, 1.0);
                    let dir = cam.rotation.transpose() * dir_cam;
                    let t = -c.z / dir.z;
                    let p = c + dir * t;
                    let inside = p.x.abs() <= 1.0 && p.y.abs() <= 1.0 && t > 0.0;
                    let d = *depth.get(x, y);
                    if inside {
                        hits += 1;
                        // with an unnormalized camera-space direction, t is the z-depth
                        assert!((d - t).abs() < 1e-9, "pixel ({x},{y}): {d} vs {t}");
                    } else {
                        assert_eq!(d, 0.0);
                    }
                }
            }
            assert!(hits > cam.width * cam.height / 3, "hits {hits}");
        }
    }

    #[test]
    fn occluder_hides_far_plane_in_exactly_one_view() {
        let s = make_synthetic_scene(&SceneDescriptor::new(SceneKind::TwoPlanesOccluder, 0)).unwrap();
        let card = 1;
        let sees_card = |cam: &CameraView| {
            let mut n = 0;
            for y in 0..cam.height {
                for x in 0..cam.width {
                    if s.ray_cast(cam, x as f64, y as f64).is_some_and(|h| h.surface == card) {
                        n += 1;
                    }
                }
            }
            n
        };
        let n0 = sees_card(&s.scene.views[0]);
        let n1 = sees_card(&s.scene.views[1]);
        assert_eq!(n0, 0);
        let total = s.scene.views[1].width * s.scene.views[1].height;
        assert!(n1 > total / 10 && n1 < total * 3 / 4, "card covers {n1} of {total}");
        // part of the far plane seen by view 0 is hidden from view 1
        let covis = s.covisibility(&s.scene.views[0], &s.scene.views[1]);
        let fg = s.depth_map(&s.scene.views[0]).as_slice().iter().filter(|&&d| d > 0.0).count();
        assert!(covis.count() < fg);
        assert!(covis.count() > fg / 4);
    }

    #[test]
    fn sphere_surface_is_sampled_on_radius() {
        let s = make_synthetic_scene(&SceneDescriptor::new(SceneKind::Sphere, 0)).unwrap();
        for g in &s.scene.gaussians {
            assert!((g.center.norm() - 0.8).abs() < 1e-12);
            g.validate().unwrap();
        }
    }

    #[test]
    fn mono_depth_is_affine_distorted() {
        let s = make_synthetic_scene(&SceneDescriptor::new(SceneKind::TexturedPlane, 0)).unwrap();
        let cam = &s.scene.views[0];
        let model = MonoDepthModel {
            bias: 0.0,
            noise: 0.0,
            ..Default::default()
        };
        let mono = s.monocular_depth(cam, &model, 5);
        let gt = s.depth_map(cam);
        for (m, g) in mono.as_slice().iter().zip(gt.as_slice()) {
            if *g > 0.0 {
                assert!((m - (0.5 * g + 1.0)).abs() < 1e-12);
            }
        }
    }
}
