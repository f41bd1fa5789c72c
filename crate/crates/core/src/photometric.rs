//! Photometric loss: weighted L1 plus structural dissimilarity.
//!
//! SSIM uses an 11×11 Gaussian window (σ = 1.5) evaluated at every fully
//! interior window position, per channel, then averaged.

use thiserror::Error;

use crate::image::RgbImage;

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_WEIGHT: f64 = 0.2;
const C1: f64 = 0.01 * 0.01;
const C2: f64 = 0.03 * 0.03;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PhotometricError {
    #[error("image dimensions differ: {0:?} vs {1:?}")]
    DimensionMismatch((usize, usize), (usize, usize)),
    #[error("images must be at least {SSIM_WINDOW}x{SSIM_WINDOW} for SSIM, got {0}x{1}")]
    TooSmall(usize, usize),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Photometric {
    pub value: f64,
    pub l1: f64,
    pub ssim: f64,
}

/// Normalized 1D Gaussian taps; the 2D window is their outer product.
pub fn gaussian_taps() -> [f64; SSIM_WINDOW] {
    let c = (SSIM_WINDOW / 2) as f64;
    let mut k: [f64; SSIM_WINDOW] = std::array::from_fn(|i| (-((i as f64 - c).powi(2)) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp());
    let s: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= s);
    k
}

/// Separable "valid" correlation of a `w × h` plane.
fn correlate_valid(src: &[f64], w: usize, h: usize, k: &[f64; SSIM_WINDOW]) -> Vec<f64> {
    let (ow, oh) = (w + 1 - SSIM_WINDOW, h + 1 - SSIM_WINDOW);
    let mut tmp = vec![0.0; ow * h];
    for y in 0..h {
        for x in 0..ow {
            tmp[y * ow + x] = (0..SSIM_WINDOW).map(|a| k[a] * src[y * w + x + a]).sum();
        }
    }
    let mut out = vec![0.0; ow * oh];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = (0..SSIM_WINDOW).map(|b| k[b] * tmp[(y + b) * ow + x]).sum();
        }
    }
    out
}

/// Adjoint of [`correlate_valid`]: scatters an `ow × oh` map back to `w × h`.
fn correlate_valid_adjoint(src: &[f64], w: usize, h: usize, k: &[f64; SSIM_WINDOW]) -> Vec<f64> {
    let (ow, oh) = (w + 1 - SSIM_WINDOW, h + 1 - SSIM_WINDOW);
    let mut tmp = vec![0.0; ow * h];
    for y in 0..oh {
        for x in 0..ow {
            let v = src[y * ow + x];
            for b in 0..SSIM_WINDOW {
                tmp[(y + b) * ow + x] += k[b] * v;
            }
        }
    }
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..ow {
            let v = tmp[y * ow + x];
            for a in 0..SSIM_WINDOW {
                out[y * w + x + a] += k[a] * v;
            }
        }
    }
    out
}

fn channel(img: &RgbImage, c: usize) -> Vec<f64> {
    img.as_slice().iter().map(|p| p[c]).collect()
}

fn check(a: &RgbImage, b: &RgbImage) -> Result<(), PhotometricError> {
    if a.dims() != b.dims() {
        return Err(PhotometricError::DimensionMismatch(a.dims(), b.dims()));
    }
    if a.width() < SSIM_WINDOW || a.height() < SSIM_WINDOW {
        return Err(PhotometricError::TooSmall(a.width(), a.height()));
    }
    Ok(())
}

/// Mean SSIM and, if requested, its gradient with respect to `x`.
fn ssim_impl(x: &RgbImage, y: &RgbImage, want_grad: bool) -> (f64, Option<RgbImage>) {
    let (w, h) = x.dims();
    let k = gaussian_taps();
    let n_pos = (w + 1 - SSIM_WINDOW) * (h + 1 - SSIM_WINDOW);
    let mut total = 0.0;
    let mut grad = want_grad.then(|| RgbImage::filled(w, h, [0.0; 3]));
    for c in 0..3 {
        let xs = channel(x, c);
        let ys = channel(y, c);
        let xx: Vec<f64> = xs.iter().map(|v| v * v).collect();
        let yy: Vec<f64> = ys.iter().map(|v| v * v).collect();
        let xy: Vec<f64> = xs.iter().zip(&ys).map(|(a, b)| a * b).collect();
        let mx = correlate_valid(&xs, w, h, &k);
        let my = correlate_valid(&ys, w, h, &k);
        let exx = correlate_valid(&xx, w, h, &k);
        let eyy = correlate_valid(&yy, w, h, &k);
        let exy = correlate_valid(&xy, w, h, &k);
        let mut g_mu = vec![0.0; n_pos];
        let mut g_xx = vec![0.0; n_pos];
        let mut g_xy = vec![0.0; n_pos];
        for p in 0..n_pos {
            let (ux, uy) = (mx[p], my[p]);
            let a1 = 2.0 * ux * uy + C1;
            let a2 = 2.0 * (exy[p] - ux * uy) + C2;
            let b1 = ux * ux + uy * uy + C1;
            let b2 = (exx[p] - ux * ux) + (eyy[p] - uy * uy) + C2;
            let s = a1 * a2 / (b1 * b2);
            total += s;
            if want_grad {
                g_mu[p] = s * (2.0 * uy / a1 - 2.0 * uy / a2 - 2.0 * ux / b1 + 2.0 * ux / b2);
                g_xx[p] = -s / b2;
                g_xy[p] = 2.0 * s / a2;
            }
        }
        if let Some(g) = grad.as_mut() {
            let d_mu = correlate_valid_adjoint(&g_mu, w, h, &k);
            let d_xx = correlate_valid_adjoint(&g_xx, w, h, &k);
            let d_xy = correlate_valid_adjoint(&g_xy, w, h, &k);
            let scale = 1.0 / (3 * n_pos) as f64;
            for (i, px) in g.as_mut_slice().iter_mut().enumerate() {
                px[c] = scale * (d_mu[i] + 2.0 * xs[i] * d_xx[i] + ys[i] * d_xy[i]);
            }
        }
    }
    (total / (3 * n_pos) as f64, grad)
}

/// Mean windowed SSIM over channels and valid window positions.
pub fn ssim(x: &RgbImage, y: &RgbImage) -> Result<f64, PhotometricError> {
    check(x, y)?;
    Ok(ssim_impl(x, y, false).0)
}

/// `(1 − w)·mean|rendered − target| + w·(1 − SSIM)` with `w = 0.2`.
pub fn photometric_loss(rendered: &RgbImage, target: &RgbImage) -> Result<Photometric, PhotometricError> {
    photometric_impl(rendered, target, false).map(|(p, _)| p)
}

/// Loss and its gradient with respect to `rendered`.
pub fn photometric_loss_with_grad(rendered: &RgbImage, target: &RgbImage) -> Result<(Photometric, RgbImage), PhotometricError> {
    photometric_impl(rendered, target, true).map(|(p, g)| (p, g.expect("gradient requested")))
}

fn photometric_impl(
    rendered: &RgbImage,
    target: &RgbImage,
    want_grad: bool,
) -> Result<(Photometric, Option<RgbImage>), PhotometricError> {
    check(rendered, target)?;
    let n = (rendered.len() * 3) as f64;
    let l1 = rendered
        .as_slice()
        .iter()
        .zip(target.as_slice())
        .map(|(a, b)| (0..3).map(|c| (a[c] - b[c]).abs()).sum::<f64>())
        .sum::<f64>()
        / n;
    let (s, sg) = ssim_impl(rendered, target, want_grad);
    let value = (1.0 - SSIM_WEIGHT) * l1 + SSIM_WEIGHT * (1.0 - s);
    let grad = sg.map(|mut g| {
        for (gp, (a, b)) in g.as_mut_slice().iter_mut().zip(rendered.as_slice().iter().zip(target.as_slice())) {
            for c in 0..3 {
                let d = a[c] - b[c];
                let sign = if d > 0.0 {
                    1.0
                } else if d < 0.0 {
                    -1.0
                } else {
                    0.0
                };
                gp[c] = (1.0 - SSIM_WEIGHT) * sign / n - SSIM_WEIGHT * gp[c];
            }
        }
        g
    });
    Ok((Photometric { value, l1, ssim: s }, grad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_image(w: usize, h: usize, seed: u64) -> RgbImage {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        RgbImage::from_fn(w, h, |_, _| [rng.gen(), rng.gen(), rng.gen()])
    }

    /// Direct windowed statistics with an explicit 2D kernel.
    fn ssim_oracle(x: &RgbImage, y: &RgbImage) -> f64 {
        let (w, h) = x.dims();
        let r = 5i64;
        let mut k2 = [[0.0; 11]; 11];
        let mut s = 0.0;
        for a in -r..=r {
            for b in -r..=r {
                let v = (-((a * a + b * b) as f64) / (2.0 * 1.5 * 1.5)).exp();
                k2[(a + r) as usize][(b + r) as usize] = v;
                s += v;
            }
        }
        let mut total = 0.0;
        let mut count = 0.0;
        for c in 0..3 {
            for py in 0..=h - 11 {
                for px in 0..=w - 11 {
                    let (mut mx, mut my, mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
                    for j in 0..11 {
                        for i in 0..11 {
                            let wt = k2[j][i] / s;
                            let a = x.get(px + i, py + j)[c];
                            let b = y.get(px + i, py + j)[c];
                            mx += wt * a;
                            my += wt * b;
                            sxx += wt * a * a;
                            syy += wt * b * b;
                            sxy += wt * a * b;
                        }
                    }
                    let vx = sxx - mx * mx;
                    let vy = syy - my * my;
                    let cxy = sxy - mx * my;
                    let c1 = 0.0001;
                    let c2 = 0.0009;
                    total += (2.0 * mx * my + c1) * (2.0 * cxy + c2) / ((mx * mx + my * my + c1) * (vx + vy + c2));
                    count += 1.0;
                }
            }
        }
        total / count
    }

    #[test]
    fn identical_images_have_zero_loss() {
        let a = random_image(16, 14, 1);
        let p = photometric_loss(&a, &a).unwrap();
        assert!(p.value.abs() < 1e-12);
        assert!((p.ssim - 1.0).abs() < 1e-12);
    }

    #[test]
    fn constant_shift_gives_exact_l1() {
        let a = RgbImage::from_fn(16, 16, |x, y| [0.1 + 0.01 * x as f64, 0.2 + 0.02 * y as f64, 0.5]);
        let b = a.map(|p| [p[0] + 0.1, p[1] + 0.1, p[2] + 0.1]);
        let p = photometric_loss(&a, &b).unwrap();
        assert!((p.l1 - 0.1).abs() < 1e-12);
    }

    #[test]
    fn errors_on_bad_sizes() {
        let a = random_image(16, 16, 1);
        let b = random_image(16, 15, 1);
        assert!(matches!(photometric_loss(&a, &b), Err(PhotometricError::DimensionMismatch(..))));
        let c = random_image(10, 16, 1);
        assert!(matches!(photometric_loss(&c, &c), Err(PhotometricError::TooSmall(10, 16))));
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let a = random_image(13, 12, 3);
        let b = random_image(13, 12, 4);
        let (_, g) = photometric_loss_with_grad(&a, &b).unwrap();
        let h = 1e-6;
        for (x, y, c) in [(0, 0, 0), (6, 5, 1), (12, 11, 2), (3, 9, 0), (7, 2, 2)] {
            let mut p = a.clone();
            p.get_mut(x, y)[c] += h;
            let mut m = a.clone();
            m.get_mut(x, y)[c] -= h;
            let fd = (photometric_loss(&p, &b).unwrap().value - photometric_loss(&m, &b).unwrap().value) / (2.0 * h);
            let an = g.get(x, y)[c];
            assert!((fd - an).abs() < 1e-7 * (1.0 + an.abs()), "({x},{y},{c}) fd {fd} an {an}");
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn ssim_matches_direct_statistics(seed in 0u64..10_000, w in 11usize..20, h in 11usize..20) {
            let a = random_image(w, h, seed);
            let b = random_image(w, h, seed + 1);
            prop_assert!((ssim(&a, &b).unwrap() - ssim_oracle(&a, &b)).abs() < 1e-6);
        }
    }
}
