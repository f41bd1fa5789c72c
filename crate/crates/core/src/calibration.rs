//! Quadtree-calibrated monocular depth.
//!
//! The image is split into `2^L × 2^L` blocks; inside each block a robust
//! affine map `a·D_m + b` is fitted from monocular to rendered depth using
//! median-centred statistics. Blocks with too little support inherit their
//! parent's parameters.

use std::collections::BTreeMap;

use log::warn;

use crate::image::{Mask, ScalarMap};

pub const DEFAULT_MILESTONES: [u64; 3] = [10_000, 15_000, 20_000];
pub const DEFAULT_QDC_WINDOW: (u64, u64) = (7_000, 25_000);

/// Scale estimator used for `σ(·)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Spread {
    /// Mean absolute deviation about the median.
    #[default]
    MeanAbsDev,
    /// Median absolute deviation about the median.
    MedianAbsDev,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CalibrationConfig {
    pub n_min: usize,
    pub sigma_min: f64,
    pub spread: Spread,
}

impl Default for CalibrationConfig {
    fn default() -> Self {
        Self {
            n_min: 64,
            sigma_min: 1e-6,
            spread: Spread::MeanAbsDev,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BlockFit {
    pub a: f64,
    pub b: f64,
    pub valid_count: usize,
    pub fallback: bool,
}

impl BlockFit {
    pub const IDENTITY_FALLBACK: BlockFit = BlockFit {
        a: 1.0,
        b: 0.0,
        valid_count: 0,
        fallback: true,
    };
}

/// Half-open pixel rectangle `[x0, x1) × [y0, y1)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BlockRect {
    pub x0: usize,
    pub x1: usize,
    pub y0: usize,
    pub y1: usize,
}

impl BlockRect {
    /// Block `(row, col)` of the `2^level` partition; the last row and column
    /// absorb the remainder.
    pub fn of(level: usize, row: usize, col: usize, width: usize, height: usize) -> Self {
        let n = 1usize << level;
        let (bw, bh) = (width / n, height / n);
        Self {
            x0: col * bw,
            x1: if col + 1 == n { width } else { (col + 1) * bw },
            y0: row * bh,
            y1: if row + 1 == n { height } else { (row + 1) * bh },
        }
    }
}

/// Monocular and rendered depth over a shared mask. The effective mask
/// excludes pixels where the rendered depth is the zero sentinel.
#[derive(Debug, Clone)]
pub struct DepthPair<'a> {
    pub mono: &'a ScalarMap,
    pub rendered: &'a ScalarMap,
    mask: Mask,
}

impl<'a> DepthPair<'a> {
    pub fn new(mono: &'a ScalarMap, rendered: &'a ScalarMap, mask: &Mask) -> Self {
        assert!(mono.same_dims(rendered) && mono.same_dims(mask), "depth pair dimensions differ");
        let mask = Mask::from_fn(mask.width(), mask.height(), |x, y| {
            *mask.get(x, y) && *rendered.get(x, y) > 0.0 && mono.get(x, y).is_finite()
        });
        Self { mono, rendered, mask }
    }

    pub fn mask(&self) -> &Mask {
        &self.mask
    }
}

/// Median of a non-empty slice (mean of the two middle values for even length).
pub fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Median and spread about the median.
pub fn robust_stats(values: &[f64], spread: Spread) -> (f64, f64) {
    let mut v = values.to_vec();
    let med = median(&mut v);
    let mut dev: Vec<f64> = values.iter().map(|x| (x - med).abs()).collect();
    let s = match spread {
        Spread::MeanAbsDev => dev.iter().sum::<f64>() / dev.len() as f64,
        Spread::MedianAbsDev => median(&mut dev),
    };
    (med, s)
}

pub fn fit_block_affine(pair: &DepthPair, rect: BlockRect, cfg: &CalibrationConfig) -> BlockFit {
    let mut gs = Vec::new();
    let mut ms = Vec::new();
    for y in rect.y0..rect.y1 {
        for x in rect.x0..rect.x1 {
            if *pair.mask.get(x, y) {
                gs.push(*pair.rendered.get(x, y));
                ms.push(*pair.mono.get(x, y));
            }
        }
    }
    let n = gs.len();
    let degenerate = BlockFit {
        valid_count: n,
        ..BlockFit::IDENTITY_FALLBACK
    };
    if n < cfg.n_min || n == 0 {
        return degenerate;
    }
    let (_, sg) = robust_stats(&gs, cfg.spread);
    let (_, sm) = robust_stats(&ms, cfg.spread);
    if sm < cfg.sigma_min {
        return degenerate;
    }
    let a = sg / sm;
    if !a.is_finite() || a == 0.0 {
        return degenerate;
    }
    let mut resid: Vec<f64> = gs.iter().zip(&ms).map(|(g, m)| g - a * m).collect();
    let b = median(&mut resid);
    BlockFit {
        a,
        b,
        valid_count: n,
        fallback: false,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QuadtreeCalibration {
    pub level: usize,
    /// Row-major `2^level × 2^level` block parameters.
    pub blocks: Vec<BlockFit>,
    pub source_view: u32,
    pub width: usize,
    pub height: usize,
}

impl QuadtreeCalibration {
    pub fn side(&self) -> usize {
        1 << self.level
    }

    pub fn block(&self, row: usize, col: usize) -> &BlockFit {
        &self.blocks[row * self.side() + col]
    }

    /// Block containing pixel `(x, y)`.
    pub fn block_index(&self, x: usize, y: usize) -> (usize, usize) {
        let n = self.side();
        let (bw, bh) = (self.width / n, self.height / n);
        // matches BlockRect::of, including blocks narrower than one pixel
        let pick = |p: usize, b: usize| if b == 0 { n - 1 } else { (p / b).min(n - 1) };
        (pick(y, bh), pick(x, bw))
    }

    /// `a_k·D_m + b_k` on masked pixels; other pixels are copied unchanged.
    pub fn apply(&self, mono: &ScalarMap, mask: &Mask) -> ScalarMap {
        assert_eq!(mono.dims(), (self.width, self.height));
        ScalarMap::from_fn(self.width, self.height, |x, y| {
            let m = *mono.get(x, y);
            if *mask.get(x, y) {
                let (r, c) = self.block_index(x, y);
                let f = self.block(r, c);
                f.a * m + f.b
            } else {
                m
            }
        })
    }

    pub fn fallback_count(&self) -> usize {
        self.blocks.iter().filter(|b| b.fallback).count()
    }
}

/// Fits every level up to `level`, resolving fallbacks through the parent
/// chain, and applies the finest level to the mono map.
pub fn calibrate(
    pair: &DepthPair,
    level: usize,
    cfg: &CalibrationConfig,
    source_view: u32,
) -> (ScalarMap, QuadtreeCalibration) {
    let (w, h) = pair.mono.dims();
    let mut parent: Vec<BlockFit> = Vec::new();
    for l in 0..=level {
        let n = 1usize << l;
        let mut blocks = Vec::with_capacity(n * n);
        for row in 0..n {
            for col in 0..n {
                let mut fit = fit_block_affine(pair, BlockRect::of(l, row, col, w, h), cfg);
                if fit.fallback && l > 0 {
                    let p = parent[(row / 2) * (n / 2) + col / 2];
                    fit.a = p.a;
                    fit.b = p.b;
                }
                blocks.push(fit);
            }
        }
        parent = blocks;
    }
    let calib = QuadtreeCalibration {
        level,
        blocks: parent,
        source_view,
        width: w,
        height: h,
    };
    (calib.apply(pair.mono, pair.mask()), calib)
}

/// Number of milestones reached by `iteration`, capped at `l_max`.
pub fn schedule_level(iteration: u64, milestones: &[u64], l_max: usize) -> usize {
    milestones.iter().filter(|&&m| m <= iteration).count().min(l_max)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QdcLoss {
    pub value: f64,
    pub count: usize,
    /// Set when the mask was empty and the loss defaulted to zero.
    pub empty_mask: bool,
}

/// Masked mean of `|calibrated − rendered|`.
pub fn qdc_loss(calibrated: &ScalarMap, rendered: &ScalarMap, mask: &Mask) -> QdcLoss {
    assert!(calibrated.same_dims(rendered) && calibrated.same_dims(mask));
    let mut sum = 0.0;
    let mut count = 0;
    for ((c, r), m) in calibrated.as_slice().iter().zip(rendered.as_slice()).zip(mask.as_slice()) {
        if *m {
            sum += (c - r).abs();
            count += 1;
        }
    }
    if count == 0 {
        warn!("qdc loss evaluated on an empty mask");
        return QdcLoss {
            value: 0.0,
            count: 0,
            empty_mask: true,
        };
    }
    QdcLoss {
        value: sum / count as f64,
        count,
        empty_mask: false,
    }
}

/// Gradient of `scale · qdc_loss` with respect to the rendered depth
/// (calibrated depth held constant). Zero where the two agree exactly.
pub fn qdc_backward(calibrated: &ScalarMap, rendered: &ScalarMap, mask: &Mask, loss: &QdcLoss, scale: f64) -> ScalarMap {
    let inv = if loss.count > 0 { scale / loss.count as f64 } else { 0.0 };
    ScalarMap::from_fn(rendered.width(), rendered.height(), |x, y| {
        if !*mask.get(x, y) {
            return 0.0;
        }
        let diff = *rendered.get(x, y) - *calibrated.get(x, y);
        if diff > 0.0 {
            inv
        } else if diff < 0.0 {
            -inv
        } else {
            0.0
        }
    })
}

/// Per-view calibration parameters reused until the quadtree level rises.
#[derive(Debug, Clone, Default)]
pub struct CalibrationCache {
    entries: BTreeMap<u32, QuadtreeCalibration>,
    refits: usize,
}

impl CalibrationCache {
    pub fn new() -> Self {
        Self::default()
    }

    /// Returns the cached calibration for the pair's view, refitting only if
    /// none exists yet or `level` exceeds the cached level.
    pub fn get_or_fit(
        &mut self,
        view: u32,
        level: usize,
        pair: &DepthPair,
        cfg: &CalibrationConfig,
    ) -> &QuadtreeCalibration {
        let stale = self.entries.get(&view).is_none_or(|c| level > c.level);
        if stale {
            let (_, calib) = calibrate(pair, level, cfg, view);
            self.entries.insert(view, calib);
            self.refits += 1;
        }
        &self.entries[&view]
    }

    pub fn get(&self, view: u32) -> Option<&QuadtreeCalibration> {
        self.entries.get(&view)
    }

    /// Number of fits performed so far.
    pub fn refits(&self) -> usize {
        self.refits
    }
}

/// Masked mean `|D_m′ − D_g|` at every level `0..=max_level`.
pub fn residual_by_level(pair: &DepthPair, max_level: usize, cfg: &CalibrationConfig) -> Vec<(usize, f64, usize)> {
    (0..=max_level)
        .map(|l| {
            let (cal, q) = calibrate(pair, l, cfg, 0);
            (l, qdc_loss(&cal, pair.rendered, pair.mask()).value, q.fallback_count())
        })
        .collect()
}
