use nalgebra::Vector3;
use rayon::prelude::*;
use thiserror::Error;

use crate::image::{Mask, ScalarMap};
use crate::scene::CameraView;

pub const DEFAULT_RESOLUTION: usize = 256;
pub const DEFAULT_PADDING: f64 = 0.05;
pub const TRUNCATION_VOXELS: f64 = 4.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TsdfError {
    #[error("truncation {truncation} is below two voxels ({voxel_size} each)")]
    TruncationTooSmall { truncation: f64, voxel_size: f64 },
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
}

/// Voxel grid of truncated signed distances; samples sit at
/// `origin + voxel_size·(i, j, k)`. Distances are stored normalized by the
/// truncation, positive on the camera side of the surface.
#[derive(Debug, Clone, PartialEq)]
pub struct TsdfVolume {
    pub origin: Vector3<f64>,
    pub voxel_size: f64,
    pub dims: [usize; 3],
    pub truncation: f64,
    pub sdf: Vec<f64>,
    pub weight: Vec<f64>,
}

impl TsdfVolume {
    pub fn new(origin: Vector3<f64>, voxel_size: f64, dims: [usize; 3], truncation: f64) -> Result<Self, TsdfError> {
        if !(voxel_size > 0.0) || !voxel_size.is_finite() {
            return Err(TsdfError::InvalidGrid("voxel size must be positive".into()));
        }
        if dims.iter().any(|&d| d < 2) {
            return Err(TsdfError::InvalidGrid("every dimension needs at least 2 samples".into()));
        }
        if !(truncation >= 2.0 * voxel_size) {
            return Err(TsdfError::TruncationTooSmall { truncation, voxel_size });
        }
        let n = dims[0] * dims[1] * dims[2];
        Ok(Self {
            origin,
            voxel_size,
            dims,
            truncation,
            sdf: vec![1.0; n],
            weight: vec![0.0; n],
        })
    }

    /// Grid covering `lo..hi` padded by `padding` of the box size on every
    /// side, with `resolution` samples along its longest axis and a
    /// truncation of [`TRUNCATION_VOXELS`] voxels.
    pub fn for_bounds(lo: Vector3<f64>, hi: Vector3<f64>, resolution: usize, padding: f64) -> Result<Self, TsdfError> {
        if resolution < 2 {
            return Err(TsdfError::InvalidGrid("resolution must be at least 2".into()));
        }
        let size = hi - lo;
        if size.iter().any(|s| !(*s >= 0.0)) || size.max() <= 0.0 {
            return Err(TsdfError::InvalidGrid("bounds are empty".into()));
        }
        let pad = size * padding;
        let (lo, hi) = (lo - pad, hi + pad);
        let voxel = (hi - lo).max() / (resolution - 1) as f64;
        let dims = [0, 1, 2].map(|a| (((hi[a] - lo[a]) / voxel).ceil() as usize + 1).max(2));
        Self::new(lo, voxel, dims, TRUNCATION_VOXELS * voxel)
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        i + self.dims[0] * (j + self.dims[1] * k)
    }

    #[inline]
    pub fn point(&self, i: usize, j: usize, k: usize) -> Vector3<f64> {
        self.origin + Vector3::new(i as f64, j as f64, k as f64) * self.voxel_size
    }

    /// Signed distance in world units.
    pub fn distance(&self, i: usize, j: usize, k: usize) -> f64 {
        self.sdf[self.index(i, j, k)] * self.truncation
    }

    pub fn observed_count(&self) -> usize {
        self.weight.iter().filter(|w| **w > 0.0).count()
    }

    /// Overwrites every voxel with a clamped analytic signed distance and unit weight.
    pub fn fill_with(&mut self, f: impl Fn(&Vector3<f64>) -> f64 + Sync) {
        let [nx, ny, _] = self.dims;
        let (origin, vs, tr) = (self.origin, self.voxel_size, self.truncation);
        self.sdf
            .par_chunks_mut(nx * ny)
            .zip(self.weight.par_chunks_mut(nx * ny))
            .enumerate()
            .for_each(|(k, (sdf, w))| {
                for j in 0..ny {
                    for i in 0..nx {
                        let p = origin + Vector3::new(i as f64, j as f64, k as f64) * vs;
                        sdf[i + nx * j] = (f(&p) / tr).clamp(-1.0, 1.0);
                        w[i + nx * j] = 1.0;
                    }
                }
            });
    }

    /// Projective TSDF update from one depth map. Depth is interpolated
    /// bilinearly at each voxel's projection, and only when all four
    /// surrounding pixels are valid (nonzero and inside the mask); voxels
    /// farther than the truncation behind the observed surface are skipped.
    pub fn integrate(&mut self, depth: &ScalarMap, cam: &CameraView, mask: Option<&Mask>) {
        let [nx, ny, _] = self.dims;
        let (origin, vs, tr) = (self.origin, self.voxel_size, self.truncation);
        let (w, h) = (depth.width() as i64, depth.height() as i64);
        let cosines = ray_cosines(depth, cam);
        self.sdf
            .par_chunks_mut(nx * ny)
            .zip(self.weight.par_chunks_mut(nx * ny))
            .enumerate()
            .for_each(|(k, (sdf, wt))| {
                for j in 0..ny {
                    for i in 0..nx {
                        let p = origin + Vector3::new(i as f64, j as f64, k as f64) * vs;
                        let pc = cam.world_to_camera(&p);
                        if pc.z <= 0.0 {
                            continue;
                        }
                        let (u, v) = cam.project_camera(&pc);
                        let Some(d) = lookup(depth, mask, u, v, w, h) else {
                            continue;
                        };
                        let dist = (d - pc.z) * cosine_at(&cosines, u, v, w, h);
                        if dist < -tr {
                            continue;
                        }
                        let t = (dist / tr).min(1.0);
                        let idx = i + nx * j;
                        let n = wt[idx];
                        sdf[idx] = (sdf[idx] * n + t) / (n + 1.0);
                        wt[idx] = n + 1.0;
                    }
                }
            });
    }
}

/// Per-pixel `|n·r|` for the unnormalized ray `r = K⁻¹(u, v, 1)` and the
/// depth-map normal `n`, which converts a z-depth difference into a distance
/// to the local tangent plane. 1 where the normal is undefined.
fn ray_cosines(depth: &ScalarMap, cam: &CameraView) -> ScalarMap {
    let (w, h) = depth.dims();
    ScalarMap::from_fn(w, h, |x, y| {
        if x == 0 || y == 0 || x + 1 >= w || y + 1 >= h {
            return 1.0;
        }
        let taps = [(x - 1, y), (x + 1, y), (x, y - 1), (x, y + 1)];
        if taps.iter().any(|&(a, b)| !(*depth.get(a, b) > 0.0)) {
            return 1.0;
        }
        let p = taps.map(|(a, b)| cam.unproject(a as f64, b as f64, *depth.get(a, b)));
        let n = (p[1] - p[0]).cross(&(p[3] - p[2]));
        if n.norm() == 0.0 {
            return 1.0;
        }
        let r = cam.unproject(x as f64, y as f64, 1.0);
        n.normalize().dot(&r).abs().min(r.norm())
    })
}

fn cosine_at(c: &ScalarMap, u: f64, v: f64, w: i64, h: i64) -> f64 {
    let (x, y) = ((u.round() as i64).clamp(0, w - 1), (v.round() as i64).clamp(0, h - 1));
    *c.get(x as usize, y as usize)
}

fn lookup(depth: &ScalarMap, mask: Option<&Mask>, u: f64, v: f64, w: i64, h: i64) -> Option<f64> {
    if !(u >= 0.0 && v >= 0.0) {
        return None;
    }
    let (x0, y0) = (u.floor() as i64, v.floor() as i64);
    let (x1, y1) = ((x0 + 1).min(w - 1), (y0 + 1).min(h - 1));
    if x0 >= w || y0 >= h {
        return None;
    }
    let (fx, fy) = (u - x0 as f64, v - y0 as f64);
    let mut acc = 0.0;
    for (x, y, wt) in [
        (x0, y0, (1.0 - fx) * (1.0 - fy)),
        (x1, y0, fx * (1.0 - fy)),
        (x0, y1, (1.0 - fx) * fy),
        (x1, y1, fx * fy),
    ] {
        let (x, y) = (x as usize, y as usize);
        let d = *depth.get(x, y);
        if !(d > 0.0) || mask.is_some_and(|m| !*m.get(x, y)) {
            return None;
        }
        acc += wt * d;
    }
    Some(acc)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::Intrinsics;

    fn top_camera() -> CameraView {
        let k = Intrinsics {
            fx: 60.0,
            fy: 60.0,
            cx: 31.5,
            cy: 31.5,
        };
        CameraView::look_at(0, 64, 64, k, Vector3::new(0.0, 0.0, 2.0), Vector3::zeros(), Vector3::y()).unwrap()
    }

    fn plane_volume() -> TsdfVolume {
        TsdfVolume::for_bounds(Vector3::new(-0.4, -0.4, -0.3), Vector3::new(0.4, 0.4, 0.3), 40, 0.0).unwrap()
    }

    #[test]
    fn truncation_must_cover_two_voxels() {
        assert!(matches!(
            TsdfVolume::new(Vector3::zeros(), 0.1, [4, 4, 4], 0.15),
            Err(TsdfError::TruncationTooSmall { .. })
        ));
        assert!(TsdfVolume::new(Vector3::zeros(), 0.1, [4, 4, 4], 0.2).is_ok());
    }

    #[test]
    fn fronto_plane_zero_crossing_is_within_a_voxel() {
        let cam = top_camera();
        let depth = ScalarMap::filled(64, 64, 2.0);
        let mut vol = plane_volume();
        vol.integrate(&depth, &cam, None);
        let [nx, ny, nz] = vol.dims;
        let mut crossings = 0;
        for k in 0..nz - 1 {
            for j in 0..ny {
                for i in 0..nx {
                    let (a, b) = (vol.index(i, j, k), vol.index(i, j, k + 1));
                    if vol.weight[a] > 0.0 && vol.weight[b] > 0.0 && (vol.sdf[a] < 0.0) != (vol.sdf[b] < 0.0) {
                        let (za, zb) = (vol.point(i, j, k).z, vol.point(i, j, k + 1).z);
                        let (da, db) = (vol.sdf[a], vol.sdf[b]);
                        let z0 = za + (zb - za) * da / (da - db);
                        assert!(z0.abs() < vol.voxel_size, "crossing at z = {z0}");
                        crossings += 1;
                    }
                }
            }
        }
        assert!(crossings > 100);
    }

    #[test]
    fn repeated_observation_doubles_weight_only() {
        let cam = top_camera();
        let depth = ScalarMap::from_fn(64, 64, |x, y| 2.0 + 0.002 * (x as f64 - y as f64));
        let mut once = plane_volume();
        once.integrate(&depth, &cam, None);
        let mut twice = once.clone();
        twice.integrate(&depth, &cam, None);
        for i in 0..once.sdf.len() {
            assert!((once.sdf[i] - twice.sdf[i]).abs() < 1e-12);
            assert_eq!(twice.weight[i], 2.0 * once.weight[i]);
        }
    }

    #[test]
    fn masked_and_empty_pixels_contribute_nothing() {
        let cam = top_camera();
        let mut depth = ScalarMap::filled(64, 64, 2.0);
        for y in 0..64 {
            for x in 0..32 {
                depth.set(x, y, 0.0);
            }
        }
        let mask = Mask::from_fn(64, 64, |_, y| y < 32);
        let mut vol = plane_volume();
        vol.integrate(&depth, &cam, Some(&mask));
        let [nx, ny, nz] = vol.dims;
        for k in 0..nz {
            for j in 0..ny {
                for i in 0..nx {
                    let pc = cam.world_to_camera(&vol.point(i, j, k));
                    let (u, v) = cam.project_camera(&pc);
                    if u.round() < 32.0 || v.round() >= 32.0 {
                        assert_eq!(vol.weight[vol.index(i, j, k)], 0.0);
                    }
                }
            }
        }
        assert!(vol.observed_count() > 0);
    }

    #[test]
    fn voxels_far_behind_surface_are_untouched() {
        let cam = top_camera();
        let depth = ScalarMap::filled(64, 64, 2.0);
        let mut vol = plane_volume();
        vol.integrate(&depth, &cam, None);
        for k in 0..vol.dims[2] {
            let z = vol.point(0, 0, k).z;
            let idx = vol.index(vol.dims[0] / 2, vol.dims[1] / 2, k);
            if z < -vol.truncation - 1e-9 {
                assert_eq!(vol.weight[idx], 0.0);
            } else {
                assert_eq!(vol.weight[idx], 1.0);
            }
        }
    }

    #[test]
    fn fused_sphere_matches_analytic_distance_in_band() {
        use crate::synth::{make_synthetic_scene, SceneDescriptor, SceneKind};
        let s = make_synthetic_scene(&SceneDescriptor::new(SceneKind::Sphere, 7)).unwrap();
        let mut vol = TsdfVolume::for_bounds(s.bounds.0, s.bounds.1, 64, DEFAULT_PADDING).unwrap();
        for v in &s.scene.views {
            vol.integrate(&s.depth_map(v), v, None);
        }
        let mut errs = Vec::new();
        let [nx, ny, nz] = vol.dims;
        for k in 0..nz {
            for j in 0..ny {
                for i in 0..nx {
                    let oracle = s.surfaces[0].signed_distance(&vol.point(i, j, k));
                    if vol.weight[vol.index(i, j, k)] > 0.0 && oracle.abs() <= vol.truncation {
                        errs.push((vol.distance(i, j, k) - oracle).abs() / vol.voxel_size);
                    }
                }
            }
        }
        errs.sort_by(f64::total_cmp);
        let n = errs.len();
        let mean = errs.iter().sum::<f64>() / n as f64;
        let within = errs.iter().filter(|e| **e <= 1.0).count() as f64 / n as f64;
        assert!(n > 10_000);
        assert!(errs[n / 2] < 0.25 && mean < 0.5 && within > 0.9, "median {} mean {mean} within {within}", errs[n / 2]);
    }
}
