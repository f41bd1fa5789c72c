//! Multi-view geometric and photometric consistency terms.
//!
//! Every loss here is written once, generically over `T: DualNum<f64>`, and
//! evaluated either with plain `f64` (forward) or with dual numbers to obtain
//! per-pixel derivatives with respect to the rendered depth and normal maps.

use nalgebra::{Matrix3, SVector, Vector3};
use num_dual::{gradient, DualNum, DualSVec64};
use thiserror::Error;

use crate::image::{bilinear_tap, Mask, RgbImage, ScalarMap};
use crate::scene::{CameraView, Intrinsics};
use crate::visibility::OpacityMap;

pub const DEFAULT_PHI_MAX: f64 = 1.0;
pub const DEFAULT_LAMBDA_VIS: f64 = 0.5;
pub const PATCH_RADIUS: usize = 3;
pub const NCC_MIN_DENOM: f64 = 1e-8;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConsistencyError {
    #[error("size mismatch: {0}")]
    SizeMismatch(String),
    #[error("no supervised pixels for pair ({reference}, {neighbor})")]
    EmptySupervision { reference: u32, neighbor: u32 },
}

/// Derivatives of φ at one pixel with respect to the reference depth at that
/// pixel and the four neighbor-depth texels used by the bilinear lookup.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhiGrad {
    pub d_ref: f64,
    pub nb_texels: [usize; 4],
    pub d_nb: [f64; 4],
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReprojectionField {
    /// Forward-backward error in pixels; NaN where invalid.
    pub phi: ScalarMap,
    pub valid: Mask,
    pub reference_view: u32,
    pub neighbor_view: u32,
    /// Per-pixel derivatives (flat index), present when requested.
    pub grads: Option<Vec<Option<PhiGrad>>>,
}

impl ReprojectionField {
    pub fn mean_phi(&self) -> Option<f64> {
        let vals: Vec<f64> = self
            .phi
            .as_slice()
            .iter()
            .zip(self.valid.as_slice())
            .filter_map(|(&p, &v)| v.then_some(p))
            .collect();
        (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SupervisionMask {
    pub depth_ok: Mask,
    pub covis: Mask,
    pub union_v: Mask,
}

impl SupervisionMask {
    pub fn new(field: &ReprojectionField, covis: Mask, phi_max: f64) -> Self {
        let depth_ok = Mask::from_fn(field.phi.width(), field.phi.height(), |x, y| {
            *field.valid.get(x, y) && *field.phi.get(x, y) <= phi_max
        });
        let union_v = depth_ok.or(&covis);
        Self {
            depth_ok,
            covis,
            union_v,
        }
    }
}

fn unproject<T: DualNum<f64> + Copy>(k: &Intrinsics, u: T, v: T, d: T) -> [T; 3] {
    [(u - k.cx) * d / k.fx, (v - k.cy) * d / k.fy, d]
}

fn project<T: DualNum<f64> + Copy>(k: &Intrinsics, p: &[T; 3]) -> (T, T) {
    (p[0] / p[2] * k.fx + k.cx, p[1] / p[2] * k.fy + k.cy)
}

fn mat_vec<T: DualNum<f64> + Copy>(m: &Matrix3<f64>, p: &[T; 3]) -> [T; 3] {
    std::array::from_fn(|i| p[0] * m[(i, 0)] + p[1] * m[(i, 1)] + p[2] * m[(i, 2)])
}

/// Relative pose of a view pair: `p_n = R p_r + t` in camera coordinates.
struct PairGeom {
    kr: Intrinsics,
    kn: Intrinsics,
    r: Matrix3<f64>,
    rt: Matrix3<f64>,
    t: Vector3<f64>,
    wn: usize,
    hn: usize,
}

impl PairGeom {
    fn new(cam_r: &CameraView, cam_n: &CameraView) -> Self {
        let r = cam_n.rotation * cam_r.rotation.transpose();
        let t = cam_n.translation - r * cam_r.translation;
        Self {
            kr: cam_r.intrinsics,
            kn: cam_n.intrinsics,
            r,
            rt: r.transpose(),
            t,
            wn: cam_n.width,
            hn: cam_n.height,
        }
    }

    fn to_neighbor<T: DualNum<f64> + Copy>(&self, p: &[T; 3]) -> [T; 3] {
        let q = mat_vec(&self.r, p);
        [q[0] + self.t.x, q[1] + self.t.y, q[2] + self.t.z]
    }

    fn to_reference<T: DualNum<f64> + Copy>(&self, q: &[T; 3]) -> [T; 3] {
        let s = [q[0] - self.t.x, q[1] - self.t.y, q[2] - self.t.z];
        mat_vec(&self.rt, &s)
    }
}

/// φ at reference pixel `(x, y)` given its depth `d` and the neighbor depth map.
/// `nb` returns the neighbor depth at a texel as `T` (constant or dual).
fn phi_eval<T: DualNum<f64> + Copy>(
    g: &PairGeom,
    x: f64,
    y: f64,
    d: T,
    nb: impl Fn(usize, usize) -> T,
) -> Option<T> {
    let p = unproject(&g.kr, T::from(x), T::from(y), d);
    let q = g.to_neighbor(&p);
    if q[2].re() <= 0.0 {
        return None;
    }
    let (un, vn) = project(&g.kn, &q);
    let tap = bilinear_tap(g.wn, g.hn, un, vn)?;
    let corners = tap.corners();
    // interpolate in inverse depth, which is affine in pixel coordinates on planes
    let mut inv_dn = T::from(0.0);
    for ((cx, cy), w) in corners.iter().zip(tap.weights()) {
        let v = nb(*cx, *cy);
        if v.re() <= 0.0 {
            return None;
        }
        inv_dn += w / v;
    }
    let dn = inv_dn.recip();
    let pn = unproject(&g.kn, un, vn, dn);
    let pr = g.to_reference(&pn);
    if pr[2].re() <= 0.0 {
        return None;
    }
    let (ux, vx) = project(&g.kr, &pr);
    let (ex, ey) = (ux - x, vx - y);
    Some((ex * ex + ey * ey).sqrt())
}

fn check_dims(depth: &ScalarMap, cam: &CameraView, what: &str) -> Result<(), ConsistencyError> {
    if depth.dims() != (cam.width, cam.height) {
        return Err(ConsistencyError::SizeMismatch(format!(
            "{what} is {}x{} but view {} is {}x{}",
            depth.width(),
            depth.height(),
            cam.view_id,
            cam.width,
            cam.height
        )));
    }
    Ok(())
}

/// Forward-backward reprojection error of every reference pixel. The
/// neighbor depth is looked up by bilinear interpolation of inverse depth.
pub fn reprojection_error(
    depth_r: &ScalarMap,
    depth_n: &ScalarMap,
    cam_r: &CameraView,
    cam_n: &CameraView,
) -> Result<ReprojectionField, ConsistencyError> {
    reprojection_impl(depth_r, depth_n, cam_r, cam_n, false)
}

/// As [`reprojection_error`], also recording per-pixel derivatives.
pub fn reprojection_error_with_grad(
    depth_r: &ScalarMap,
    depth_n: &ScalarMap,
    cam_r: &CameraView,
    cam_n: &CameraView,
) -> Result<ReprojectionField, ConsistencyError> {
    reprojection_impl(depth_r, depth_n, cam_r, cam_n, true)
}

fn reprojection_impl(
    depth_r: &ScalarMap,
    depth_n: &ScalarMap,
    cam_r: &CameraView,
    cam_n: &CameraView,
    want_grad: bool,
) -> Result<ReprojectionField, ConsistencyError> {
    check_dims(depth_r, cam_r, "reference depth")?;
    check_dims(depth_n, cam_n, "neighbor depth")?;
    let g = PairGeom::new(cam_r, cam_n);
    let (w, h) = depth_r.dims();
    let mut phi = Vec::with_capacity(w * h);
    let mut valid = Vec::with_capacity(w * h);
    let mut grads = want_grad.then(|| Vec::with_capacity(w * h));
    for y in 0..h {
        for x in 0..w {
            let d = *depth_r.get(x, y);
            let val = if d > 0.0 {
                phi_eval(&g, x as f64, y as f64, d, |cx, cy| *depth_n.get(cx, cy))
            } else {
                None
            };
            phi.push(val.unwrap_or(f64::NAN));
            valid.push(val.is_some());
            if let Some(gs) = grads.as_mut() {
                gs.push(val.map(|v| phi_grad(&g, depth_n, x, y, d, v)));
            }
        }
    }
    Ok(ReprojectionField {
        phi: ScalarMap::from_vec(w, h, phi),
        valid: Mask::from_vec(w, h, valid),
        reference_view: cam_r.view_id,
        neighbor_view: cam_n.view_id,
        grads,
    })
}

fn phi_grad(g: &PairGeom, depth_n: &ScalarMap, x: usize, y: usize, d: f64, phi: f64) -> PhiGrad {
    let (xf, yf) = (x as f64, y as f64);
    // texels are fixed by the real-valued lookup
    let p = unproject(&g.kr, xf, yf, d);
    let (un, vn) = project(&g.kn, &g.to_neighbor(&p));
    let tap = bilinear_tap(g.wn, g.hn, un, vn).expect("valid pixel has an in-image lookup");
    let corners = tap.corners();
    let nb_texels = corners.map(|(cx, cy)| depth_n.index(cx, cy));
    if phi < 1e-12 {
        // the Euclidean norm is not differentiable at zero; its subgradient 0 is used
        return PhiGrad {
            d_ref: 0.0,
            nb_texels,
            d_nb: [0.0; 4],
        };
    }
    let x0 = SVector::<f64, 5>::new(
        d,
        *depth_n.get(corners[0].0, corners[0].1),
        *depth_n.get(corners[1].0, corners[1].1),
        *depth_n.get(corners[2].0, corners[2].1),
        *depth_n.get(corners[3].0, corners[3].1),
    );
    let (_, grad) = gradient(
        |v: SVector<DualSVec64<5>, 5>| {
            phi_eval(g, xf, yf, v[0], |cx, cy| {
                let k = corners.iter().position(|&c| c == (cx, cy)).expect("corner texel");
                v[1 + k]
            })
            .expect("validity is fixed by the real pass")
        },
        x0,
    );
    PhiGrad {
        d_ref: grad[0],
        nb_texels,
        d_nb: [grad[1], grad[2], grad[3], grad[4]],
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GvmvLoss {
    pub value: f64,
    /// `(exp(−φ) + λ·O_r)·φ` on supervised valid pixels, 0 elsewhere.
    pub per_pixel: ScalarMap,
    /// Number of supervised pixels with a valid φ (the normalizer).
    pub count: usize,
    /// Detached weights `(exp(−φ) + λ·O_r) / count` on supervised valid pixels.
    pub weights: ScalarMap,
}

/// Visibility-weighted geometric consistency over the supervision set.
pub fn gvmv_loss(
    field: &ReprojectionField,
    opacity: &OpacityMap,
    mask: &SupervisionMask,
    lambda: f64,
) -> Result<GvmvLoss, ConsistencyError> {
    if !field.phi.same_dims(&opacity.values) || !field.phi.same_dims(&mask.union_v) {
        return Err(ConsistencyError::SizeMismatch("φ, O_r and V must share dimensions".into()));
    }
    let (w, h) = field.phi.dims();
    let mut per_pixel = ScalarMap::filled(w, h, 0.0);
    let mut weights = ScalarMap::filled(w, h, 0.0);
    let mut count = 0;
    let mut sum = 0.0;
    for i in 0..w * h {
        if !mask.union_v.as_slice()[i] || !field.valid.as_slice()[i] {
            continue;
        }
        let phi = field.phi.as_slice()[i];
        let wgt = (-phi).exp() + lambda * opacity.values.as_slice()[i];
        let l = wgt * phi;
        per_pixel.as_mut_slice()[i] = l;
        weights.as_mut_slice()[i] = wgt;
        sum += l;
        count += 1;
    }
    if count == 0 {
        return Err(ConsistencyError::EmptySupervision {
            reference: field.reference_view,
            neighbor: field.neighbor_view,
        });
    }
    for v in weights.as_mut_slice() {
        *v /= count as f64;
    }
    Ok(GvmvLoss {
        value: sum / count as f64,
        per_pixel,
        count,
        weights,
    })
}

/// Gradients of `scale · Σ weights·φ` with respect to the reference and
/// neighbor depth maps, with `weights` held constant (typically
/// [`GvmvLoss::weights`]). `field` must carry derivatives.
pub fn gvmv_backward(
    field: &ReprojectionField,
    weights: &ScalarMap,
    scale: f64,
    neighbor_dims: (usize, usize),
) -> (ScalarMap, ScalarMap) {
    let grads = field.grads.as_ref().expect("reprojection field computed without gradients");
    let (w, h) = field.phi.dims();
    let mut g_r = ScalarMap::filled(w, h, 0.0);
    let mut g_n = ScalarMap::filled(neighbor_dims.0, neighbor_dims.1, 0.0);
    for (i, g) in grads.iter().enumerate() {
        let wgt = weights.as_slice()[i];
        if wgt == 0.0 {
            continue;
        }
        let Some(g) = g else { continue };
        g_r.as_mut_slice()[i] += scale * wgt * g.d_ref;
        for (t, d) in g.nb_texels.iter().zip(g.d_nb) {
            g_n.as_mut_slice()[*t] += scale * wgt * d;
        }
    }
    (g_r, g_n)
}

/// `Σ weights·φ` over valid pixels: the visibility-weighted loss with its
/// weight factor held fixed.
pub fn weighted_phi_sum(field: &ReprojectionField, weights: &ScalarMap) -> f64 {
    let mut sum = 0.0;
    for ((p, v), w) in field.phi.as_slice().iter().zip(field.valid.as_slice()).zip(weights.as_slice()) {
        if *v && *w != 0.0 {
            sum += w * p;
        }
    }
    sum
}

#[derive(Debug, Clone, PartialEq)]
pub struct MvPhotometric {
    pub value: f64,
    /// Masked pixels that produced an NCC value.
    pub used: usize,
    /// Masked pixels skipped for a degenerate NCC denominator.
    pub skipped_degenerate: usize,
    /// Masked pixels skipped because the patch or its warp left an image.
    pub skipped_outside: usize,
}

/// Per-pixel derivatives of the mean `1 − NCC` loss.
#[derive(Debug, Clone, PartialEq)]
pub struct MvPhotometricGrad {
    pub depth: ScalarMap,
    pub normal: RgbImage,
}

const PATCH: usize = (2 * PATCH_RADIUS + 1) * (2 * PATCH_RADIUS + 1);

/// Neighbor-image coordinates of the patch around `(x, y)` warped through
/// the plane with camera-space normal `n` through depth `d`.
fn warp_patch<T: DualNum<f64> + Copy>(g: &PairGeom, x: f64, y: f64, d: T, n: [T; 3]) -> Option<[(T, T); PATCH]> {
    let p = unproject(&g.kr, T::from(x), T::from(y), d);
    let c = n[0] * p[0] + n[1] * p[1] + n[2] * p[2];
    if c.re().abs() < 1e-9 {
        return None;
    }
    let r = PATCH_RADIUS as i64;
    let mut out = [(T::from(0.0), T::from(0.0)); PATCH];
    let mut k = 0;
    for dy in -r..=r {
        for dx in -r..=r {
            let ray = unproject(&g.kr, T::from(x + dx as f64), T::from(y + dy as f64), T::from(1.0));
            let denom = n[0] * ray[0] + n[1] * ray[1] + n[2] * ray[2];
            if denom.re().abs() < 1e-12 {
                return None;
            }
            let s = c / denom;
            if s.re() <= 0.0 {
                return None;
            }
            let q = g.to_neighbor(&[ray[0] * s, ray[1] * s, ray[2] * s]);
            if q[2].re() <= 0.0 {
                return None;
            }
            out[k] = project(&g.kn, &q);
            k += 1;
        }
    }
    Some(out)
}

enum NccOutcome<T> {
    Value(T),
    Degenerate,
    Outside,
}

fn ncc_eval<T: DualNum<f64> + Copy>(
    g: &PairGeom,
    img_n: &ScalarMap,
    x: f64,
    y: f64,
    ref_patch: &[f64; PATCH],
    d: T,
    n: [T; 3],
) -> NccOutcome<T> {
    let Some(coords) = warp_patch(g, x, y, d, n) else {
        return NccOutcome::Outside;
    };
    let mut samples = [T::from(0.0); PATCH];
    for (s, (u, v)) in samples.iter_mut().zip(coords) {
        let Some(tap) = bilinear_tap(g.wn, g.hn, u, v) else {
            return NccOutcome::Outside;
        };
        let mut acc = T::from(0.0);
        for ((cx, cy), w) in tap.corners().iter().zip(tap.weights()) {
            acc += w * *img_n.get(*cx, *cy);
        }
        *s = acc;
    }
    let inv = 1.0 / PATCH as f64;
    let mean_a = ref_patch.iter().sum::<f64>() * inv;
    let mut mean_b = T::from(0.0);
    for s in &samples {
        mean_b += *s;
    }
    mean_b *= inv;
    let mut cov = T::from(0.0);
    let mut var_b = T::from(0.0);
    let mut var_a = 0.0;
    for (a, b) in ref_patch.iter().zip(&samples) {
        let da = a - mean_a;
        let db = *b - mean_b;
        cov += db * da;
        var_b += db * db;
        var_a += da * da;
    }
    let denom = (var_b * var_a).sqrt();
    if denom.re() < NCC_MIN_DENOM {
        return NccOutcome::Degenerate;
    }
    NccOutcome::Value(cov / denom)
}

/// Mean `1 − NCC` between 7×7 reference patches and their plane-induced
/// warps into the neighbor image, over `mask`. `normal_r` holds camera-space
/// unit normals of the reference view.
#[allow(clippy::too_many_arguments)]
pub fn mv_photometric_loss(
    img_r: &ScalarMap,
    img_n: &ScalarMap,
    depth_r: &ScalarMap,
    normal_r: &RgbImage,
    cam_r: &CameraView,
    cam_n: &CameraView,
    mask: &Mask,
) -> Result<MvPhotometric, ConsistencyError> {
    mv_photometric_impl(img_r, img_n, depth_r, normal_r, cam_r, cam_n, mask, false).map(|(l, _)| l)
}

#[allow(clippy::too_many_arguments)]
pub fn mv_photometric_loss_with_grad(
    img_r: &ScalarMap,
    img_n: &ScalarMap,
    depth_r: &ScalarMap,
    normal_r: &RgbImage,
    cam_r: &CameraView,
    cam_n: &CameraView,
    mask: &Mask,
) -> Result<(MvPhotometric, MvPhotometricGrad), ConsistencyError> {
    mv_photometric_impl(img_r, img_n, depth_r, normal_r, cam_r, cam_n, mask, true)
        .map(|(l, g)| (l, g.expect("gradient requested")))
}

#[allow(clippy::too_many_arguments)]
fn mv_photometric_impl(
    img_r: &ScalarMap,
    img_n: &ScalarMap,
    depth_r: &ScalarMap,
    normal_r: &RgbImage,
    cam_r: &CameraView,
    cam_n: &CameraView,
    mask: &Mask,
    want_grad: bool,
) -> Result<(MvPhotometric, Option<MvPhotometricGrad>), ConsistencyError> {
    check_dims(depth_r, cam_r, "reference depth")?;
    check_dims(img_r, cam_r, "reference image")?;
    check_dims(img_n, cam_n, "neighbor image")?;
    if !normal_r.same_dims(depth_r) || !mask.same_dims(depth_r) {
        return Err(ConsistencyError::SizeMismatch("normal and mask must match the reference depth".into()));
    }
    let g = PairGeom::new(cam_r, cam_n);
    let (w, h) = depth_r.dims();
    let r = PATCH_RADIUS;
    let mut sum = 0.0;
    let mut used = 0;
    let mut skipped_degenerate = 0;
    let mut skipped_outside = 0;
    let mut pixel_grads: Vec<(usize, [f64; 4])> = Vec::new();
    for y in 0..h {
        for x in 0..w {
            if !*mask.get(x, y) {
                continue;
            }
            let d = *depth_r.get(x, y);
            let n = *normal_r.get(x, y);
            if d <= 0.0 || n == [0.0; 3] || x < r || y < r || x + r >= w || y + r >= h {
                skipped_outside += 1;
                continue;
            }
            let mut ref_patch = [0.0; PATCH];
            let mut k = 0;
            for py in y - r..=y + r {
                for px in x - r..=x + r {
                    ref_patch[k] = *img_r.get(px, py);
                    k += 1;
                }
            }
            let (xf, yf) = (x as f64, y as f64);
            match ncc_eval(&g, img_n, xf, yf, &ref_patch, d, n) {
                NccOutcome::Outside => skipped_outside += 1,
                NccOutcome::Degenerate => skipped_degenerate += 1,
                NccOutcome::Value(ncc) => {
                    sum += 1.0 - ncc;
                    used += 1;
                    if want_grad {
                        let (_, grad) = gradient(
                            |v: SVector<DualSVec64<4>, 4>| match ncc_eval(&g, img_n, xf, yf, &ref_patch, v[0], [v[1], v[2], v[3]]) {
                                NccOutcome::Value(c) => -c,
                                _ => unreachable!("outcome is fixed by the real pass"),
                            },
                            SVector::<f64, 4>::new(d, n[0], n[1], n[2]),
                        );
                        pixel_grads.push((depth_r.index(x, y), [grad[0], grad[1], grad[2], grad[3]]));
                    }
                }
            }
        }
    }
    let value = if used > 0 { sum / used as f64 } else { 0.0 };
    let grads = want_grad.then(|| {
        let mut depth = ScalarMap::filled(w, h, 0.0);
        let mut normal = RgbImage::filled(w, h, [0.0; 3]);
        let inv = if used > 0 { 1.0 / used as f64 } else { 0.0 };
        for (i, gr) in &pixel_grads {
            depth.as_mut_slice()[*i] = gr[0] * inv;
            normal.as_mut_slice()[*i] = [gr[1] * inv, gr[2] * inv, gr[3] * inv];
        }
        MvPhotometricGrad { depth, normal }
    });
    Ok((
        MvPhotometric {
            value,
            used,
            skipped_degenerate,
            skipped_outside,
        },
        grads,
    ))
}

/// Unit normal (facing the camera) of the least-squares plane `m·P = 1`
/// through camera-space points.
fn plane_normal<T: DualNum<f64> + Copy>(pts: &[[T; 3]; 9]) -> Option<[T; 3]> {
    let zero = T::from(0.0);
    let mut a = [[zero; 3]; 3];
    let mut b = [zero; 3];
    for p in pts {
        for i in 0..3 {
            b[i] += p[i];
            for j in 0..3 {
                a[i][j] += p[i] * p[j];
            }
        }
    }
    let cof = |r0: usize, r1: usize, c0: usize, c1: usize| a[r0][c0] * a[r1][c1] - a[r0][c1] * a[r1][c0];
    let c00 = cof(1, 2, 1, 2);
    let c01 = cof(1, 2, 2, 0);
    let c02 = cof(1, 2, 0, 1);
    let det = a[0][0] * c00 + a[0][1] * c01 + a[0][2] * c02;
    // scale-free singularity test on the normal matrix
    let tr = a[0][0].re() + a[1][1].re() + a[2][2].re();
    if det.re().abs() <= 1e-12 * tr * tr * tr {
        return None;
    }
    // adjugate (symmetric matrix) times b
    let inv = [
        [c00, cof(0, 2, 2, 1), cof(0, 1, 1, 2)],
        [c01, cof(0, 2, 0, 2), cof(0, 1, 2, 0)],
        [c02, cof(0, 2, 1, 0), cof(0, 1, 0, 1)],
    ];
    let m: [T; 3] = std::array::from_fn(|i| (inv[i][0] * b[0] + inv[i][1] * b[1] + inv[i][2] * b[2]) / det);
    let len = (m[0] * m[0] + m[1] * m[1] + m[2] * m[2]).sqrt();
    Some([-m[0] / len, -m[1] / len, -m[2] / len])
}

#[derive(Debug, Clone, PartialEq)]
pub struct SingleView {
    pub value: f64,
    pub used: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SingleViewGrad {
    pub depth: ScalarMap,
    pub normal: RgbImage,
}

fn neighborhood_points<T: DualNum<f64> + Copy>(k: &Intrinsics, x: usize, y: usize, depths: &[T; 9]) -> [[T; 3]; 9] {
    std::array::from_fn(|i| {
        let (px, py) = ((x + i % 3 - 1) as f64, (y + i / 3 - 1) as f64);
        unproject(k, T::from(px), T::from(py), depths[i])
    })
}

fn single_view_pixel<T: DualNum<f64> + Copy>(k: &Intrinsics, x: usize, y: usize, depths: &[T; 9], n: [T; 3]) -> Option<T> {
    let m = plane_normal(&neighborhood_points(k, x, y, depths))?;
    Some(T::from(1.0) - (m[0] * n[0] + m[1] * n[1] + m[2] * n[2]))
}

/// Mean `1 − cos` between rendered normals and depth-derived plane normals
/// over pixels with `acc_alpha > 0.5` and a fully valid 3×3 neighborhood.
pub fn single_view_loss(
    depth: &ScalarMap,
    normal: &RgbImage,
    acc_alpha: &ScalarMap,
    cam: &CameraView,
) -> Result<SingleView, ConsistencyError> {
    single_view_impl(depth, normal, acc_alpha, cam, false).map(|(l, _)| l)
}

pub fn single_view_loss_with_grad(
    depth: &ScalarMap,
    normal: &RgbImage,
    acc_alpha: &ScalarMap,
    cam: &CameraView,
) -> Result<(SingleView, SingleViewGrad), ConsistencyError> {
    single_view_impl(depth, normal, acc_alpha, cam, true).map(|(l, g)| (l, g.expect("gradient requested")))
}

/// Pixels eligible for the single-view term.
pub fn single_view_mask(acc_alpha: &ScalarMap) -> Mask {
    acc_alpha.map(|&a| a > 0.5)
}

fn single_view_impl(
    depth: &ScalarMap,
    normal: &RgbImage,
    acc_alpha: &ScalarMap,
    cam: &CameraView,
    want_grad: bool,
) -> Result<(SingleView, Option<SingleViewGrad>), ConsistencyError> {
    single_view_masked(depth, normal, &single_view_mask(acc_alpha), cam, want_grad)
}

/// Single-view term over an explicit (frozen) pixel mask.
pub fn single_view_masked(
    depth: &ScalarMap,
    normal: &RgbImage,
    mask: &Mask,
    cam: &CameraView,
    want_grad: bool,
) -> Result<(SingleView, Option<SingleViewGrad>), ConsistencyError> {
    check_dims(depth, cam, "depth")?;
    if !normal.same_dims(depth) || !mask.same_dims(depth) {
        return Err(ConsistencyError::SizeMismatch("normal and mask must match depth".into()));
    }
    let (w, h) = depth.dims();
    let k = cam.intrinsics;
    let mut sum = 0.0;
    let mut used = 0;
    let mut pixel_grads: Vec<(usize, usize, [f64; 12])> = Vec::new();
    for y in 1..h.saturating_sub(1) {
        for x in 1..w.saturating_sub(1) {
            if !*mask.get(x, y) {
                continue;
            }
            let n = *normal.get(x, y);
            let depths: [f64; 9] = std::array::from_fn(|i| *depth.get(x + i % 3 - 1, y + i / 3 - 1));
            if n == [0.0; 3] || depths.iter().any(|&d| d <= 0.0) {
                continue;
            }
            let Some(l) = single_view_pixel(&k, x, y, &depths, n) else {
                continue;
            };
            sum += l;
            used += 1;
            if want_grad {
                let x0 = SVector::<f64, 12>::from_iterator(depths.iter().chain(&n).copied());
                let (_, grad) = gradient(
                    |v: SVector<DualSVec64<12>, 12>| {
                        let ds: [_; 9] = std::array::from_fn(|i| v[i]);
                        single_view_pixel(&k, x, y, &ds, [v[9], v[10], v[11]]).expect("fixed by the real pass")
                    },
                    x0,
                );
                pixel_grads.push((x, y, std::array::from_fn(|i| grad[i])));
            }
        }
    }
    let value = if used > 0 { sum / used as f64 } else { 0.0 };
    let grads = want_grad.then(|| {
        let mut gd = ScalarMap::filled(w, h, 0.0);
        let mut gn = RgbImage::filled(w, h, [0.0; 3]);
        let inv = if used > 0 { 1.0 / used as f64 } else { 0.0 };
        for (x, y, gr) in &pixel_grads {
            for i in 0..9 {
                *gd.get_mut(x + i % 3 - 1, y + i / 3 - 1) += gr[i] * inv;
            }
            let e = gn.get_mut(*x, *y);
            for c in 0..3 {
                e[c] += gr[9 + c] * inv;
            }
        }
        SingleViewGrad { depth: gd, normal: gn }
    });
    Ok((SingleView { value, used }, grads))
}

/// For each view, up to `n_nb` nearest views by camera-center distance whose
/// viewing directions differ by less than `max_angle_deg`.
pub fn select_neighbors(views: &[CameraView], n_nb: usize, max_angle_deg: f64) -> Vec<Vec<usize>> {
    let cos_max = max_angle_deg.to_radians().cos();
    views
        .iter()
        .enumerate()
        .map(|(i, r)| {
            let mut cands: Vec<(f64, usize)> = views
                .iter()
                .enumerate()
                .filter(|&(j, n)| j != i && r.forward().dot(&n.forward()) > cos_max)
                .map(|(j, n)| ((r.center() - n.center()).norm(), j))
                .collect();
            cands.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            cands.into_iter().take(n_nb).map(|(_, j)| j).collect()
        })
        .collect()
}
