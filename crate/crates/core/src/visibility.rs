//! Gaussian-level cross-view visibility.
//!
//! A Gaussian's weight in a view is the total `α·T` mass it deposits over
//! that view's pixels. Thresholding the weights gives a per-Gaussian
//! indicator, which then gates the terms of the reference view's compositing
//! sum while leaving its transmittance untouched.

use thiserror::Error;

use crate::image::{Mask, ScalarMap};
use crate::render::{render_gaussians, RenderBuffers, RenderConfig};
use crate::scene::{CameraView, Gaussian3D};

pub const DEFAULT_TAU: f64 = 0.01;
pub const DEFAULT_COVIS_THRESHOLD: f64 = 0.5;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum VisibilityError {
    #[error("indicator count {got} does not match gaussian count {expected}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("render buffers carry no contribution lists")]
    MissingContribs,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VisibilityRecord {
    pub neighbor_view: u32,
    pub weights: Vec<f64>,
    pub indicators: Vec<bool>,
    pub tau: f64,
}

impl VisibilityRecord {
    pub fn visible_count(&self) -> usize {
        self.indicators.iter().filter(|&&d| d).count()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OpacityMap {
    pub values: ScalarMap,
    pub reference_view: u32,
    pub neighbor_view: u32,
}

/// Renders `neighbor` and accumulates per-Gaussian weights.
pub fn gaussian_visibility(
    gaussians: &[Gaussian3D],
    neighbor: &CameraView,
    tau: f64,
    cfg: &RenderConfig,
) -> VisibilityRecord {
    let buffers = render_gaussians(gaussians, neighbor, cfg, true);
    visibility_from_buffers(gaussians.len(), &buffers, neighbor.view_id, tau)
        .expect("contributions were recorded")
}

/// Weights from an existing neighbor render. Pixels are visited in raster
/// order so the per-Gaussian sums are deterministic.
pub fn visibility_from_buffers(
    num_gaussians: usize,
    buffers: &RenderBuffers,
    neighbor_view: u32,
    tau: f64,
) -> Result<VisibilityRecord, VisibilityError> {
    let contribs = buffers.contribs.as_ref().ok_or(VisibilityError::MissingContribs)?;
    let mut weights = vec![0.0; num_gaussians];
    for c in contribs.all() {
        weights[c.gaussian as usize] += c.weight();
    }
    let indicators = weights.iter().map(|&w| w > tau).collect();
    Ok(VisibilityRecord {
        neighbor_view,
        weights,
        indicators,
        tau,
    })
}

/// Renders `reference` and evaluates the gated opacity sum.
pub fn selective_opacity(
    gaussians: &[Gaussian3D],
    reference: &CameraView,
    record: &VisibilityRecord,
    cfg: &RenderConfig,
) -> Result<OpacityMap, VisibilityError> {
    if record.indicators.len() != gaussians.len() {
        return Err(VisibilityError::LengthMismatch {
            expected: gaussians.len(),
            got: record.indicators.len(),
        });
    }
    let buffers = render_gaussians(gaussians, reference, cfg, true);
    selective_opacity_from_buffers(&buffers, &record.indicators, reference.view_id, record.neighbor_view)
}

/// Gated opacity from an existing reference render. Terms are summed in the
/// recorded compositing order with the recorded (ungated) transmittance, so
/// all-true gates reproduce `acc_alpha` exactly.
pub fn selective_opacity_from_buffers(
    buffers: &RenderBuffers,
    indicators: &[bool],
    reference_view: u32,
    neighbor_view: u32,
) -> Result<OpacityMap, VisibilityError> {
    let contribs = buffers.contribs.as_ref().ok_or(VisibilityError::MissingContribs)?;
    if let Some(bad) = contribs.all().iter().find(|c| c.gaussian as usize >= indicators.len()) {
        return Err(VisibilityError::LengthMismatch {
            expected: bad.gaussian as usize + 1,
            got: indicators.len(),
        });
    }
    let (w, h) = (buffers.width(), buffers.height());
    let mut values = Vec::with_capacity(w * h);
    for flat in 0..w * h {
        let mut o = 0.0;
        for c in contribs.pixel_at(flat) {
            if indicators[c.gaussian as usize] {
                o += c.weight();
            }
        }
        values.push(o);
    }
    Ok(OpacityMap {
        values: ScalarMap::from_vec(w, h, values),
        reference_view,
        neighbor_view,
    })
}

pub fn covis_mask(opacity: &OpacityMap, threshold: f64) -> Mask {
    opacity.values.map(|&o| o > threshold)
}
