//! Handcrafted multi-channel descriptors and their pyramid.
//!
//! Each pixel gets `channels / 2` oriented gradient responses and
//! `channels / 2` zero-mean patch samples. Every channel is then normalized
//! against its own 5x5 neighborhood (zero mean, unit variance, variance
//! floor `1e-6`). Filters replicate-pad at the border.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{GrayImage, Grid};

const VARIANCE_FLOOR: f64 = 1e-6;
const NORM_RADIUS: isize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FeatureConfig {
    /// Total channel count `N_c`.
    pub channels: usize,
    /// Correlation group count `N_g`.
    pub groups: usize,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        FeatureConfig {
            channels: 8,
            groups: 4,
        }
    }
}

impl FeatureConfig {
    pub fn validate(&self) -> Result<()> {
        if self.channels < 2 || !self.channels.is_multiple_of(2) {
            return Err(Error::InvalidArgument(format!(
                "channel count must be even and >= 2, got {}",
                self.channels
            )));
        }
        if self.groups == 0 || !self.channels.is_multiple_of(self.groups) {
            return Err(Error::InvalidArgument(format!(
                "{} channels not divisible into {} groups",
                self.channels, self.groups
            )));
        }
        Ok(())
    }

    pub fn channels_per_group(&self) -> usize {
        self.channels / self.groups
    }
}

/// `height x width x channels` feature tensor, pixel-major.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    height: usize,
    width: usize,
    channels: usize,
    groups: usize,
    level: usize,
    data: Vec<f32>,
}

impl FeatureMap {
    pub fn from_vec(
        height: usize,
        width: usize,
        config: FeatureConfig,
        level: usize,
        data: Vec<f32>,
    ) -> Result<Self> {
        config.validate()?;
        if data.len() != height * width * config.channels {
            return Err(Error::ShapeMismatch(format!(
                "feature data length {} != {height}x{width}x{}",
                data.len(),
                config.channels
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("non-finite feature value".into()));
        }
        Ok(FeatureMap {
            height,
            width,
            channels: config.channels,
            groups: config.groups,
            level,
            data,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn groups(&self) -> usize {
        self.groups
    }

    pub fn level(&self) -> usize {
        self.level
    }

    pub fn config(&self) -> FeatureConfig {
        FeatureConfig {
            channels: self.channels,
            groups: self.groups,
        }
    }

    /// All channels of one pixel.
    #[inline]
    pub fn pixel(&self, y: usize, x: usize) -> &[f32] {
        let i = (y * self.width + x) * self.channels;
        &self.data[i..i + self.channels]
    }

    #[inline]
    pub fn value(&self, y: usize, x: usize, c: usize) -> f32 {
        self.data[(y * self.width + x) * self.channels + c]
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.data
    }

    /// Single channel as a grid.
    pub fn channel(&self, c: usize) -> Grid<f32> {
        Grid::from_fn(self.height, self.width, |y, x| self.value(y, x, c))
    }

    /// Bilinear sample of all channels at a continuous position, written to
    /// `out`. Returns `false` without writing when the position is outside
    /// `[0, width-1] x [0, height-1]`.
    #[inline]
    pub fn sample_bilinear(&self, x: f64, y: f64, out: &mut [f64]) -> bool {
        let max_x = (self.width - 1) as f64;
        let max_y = (self.height - 1) as f64;
        if !(x >= 0.0 && y >= 0.0 && x <= max_x && y <= max_y) {
            return false;
        }
        let x0 = (x.floor() as usize).min(self.width.saturating_sub(2));
        let y0 = (y.floor() as usize).min(self.height.saturating_sub(2));
        let x1 = (x0 + 1).min(self.width - 1);
        let y1 = (y0 + 1).min(self.height - 1);
        let fx = x - x0 as f64;
        let fy = y - y0 as f64;
        let (a, b) = (self.pixel(y0, x0), self.pixel(y0, x1));
        let (c, d) = (self.pixel(y1, x0), self.pixel(y1, x1));
        for ch in 0..self.channels {
            let top = a[ch] as f64 * (1.0 - fx) + b[ch] as f64 * fx;
            let bottom = c[ch] as f64 * (1.0 - fx) + d[ch] as f64 * fx;
            out[ch] = top * (1.0 - fy) + bottom * fy;
        }
        true
    }
}

/// Ordered feature maps, level 0 at full resolution.
#[derive(Debug, Clone)]
pub struct FeaturePyramid {
    maps: Vec<FeatureMap>,
}

impl FeaturePyramid {
    pub fn levels(&self) -> usize {
        self.maps.len()
    }

    pub fn level(&self, level: usize) -> &FeatureMap {
        &self.maps[level]
    }

    pub fn maps(&self) -> &[FeatureMap] {
        &self.maps
    }
}

/// Raw oriented gradient responses (before normalization), one grid per
/// orientation `theta_i = pi * i / count`. Central differences with
/// replicate padding.
pub fn oriented_gradients(image: &GrayImage, count: usize) -> Vec<Grid<f32>> {
    let gx = Grid::from_fn(image.height(), image.width(), |y, x| {
        let (y, x) = (y as isize, x as isize);
        0.5 * (image.get_clamped(y, x + 1) - image.get_clamped(y, x - 1))
    });
    let gy = Grid::from_fn(image.height(), image.width(), |y, x| {
        let (y, x) = (y as isize, x as isize);
        0.5 * (image.get_clamped(y + 1, x) - image.get_clamped(y - 1, x))
    });
    (0..count)
        .map(|i| {
            let theta = std::f64::consts::PI * i as f64 / count as f64;
            let (s, c) = (theta.sin() as f32, theta.cos() as f32);
            Grid::from_fn(image.height(), image.width(), |y, x| {
                c * gx.get(y, x) + s * gy.get(y, x)
            })
        })
        .collect()
}

/// Sample offsets `(dx, dy)` for the patch channels, nearest rings first.
fn patch_offsets(count: usize) -> Vec<(isize, isize)> {
    let mut offsets = Vec::with_capacity(count);
    let mut radius = 0isize;
    while offsets.len() < count {
        let mut ring: Vec<(isize, isize)> = Vec::new();
        for dy in -radius..=radius {
            for dx in -radius..=radius {
                if dx.abs().max(dy.abs()) == radius {
                    ring.push((dx, dy));
                }
            }
        }
        // Deterministic order: angle starting from +x.
        ring.sort_by(|a, b| {
            let ta = (a.1 as f64).atan2(a.0 as f64).rem_euclid(std::f64::consts::TAU);
            let tb = (b.1 as f64).atan2(b.0 as f64).rem_euclid(std::f64::consts::TAU);
            ta.total_cmp(&tb)
        });
        offsets.extend(ring.into_iter().take(count - offsets.len()));
        radius += 1;
    }
    offsets
}

/// Raw zero-mean patch samples: the intensity at each offset minus the 3x3
/// mean around the pixel.
pub fn patch_samples(image: &GrayImage, count: usize) -> Vec<Grid<f32>> {
    let mean = Grid::from_fn(image.height(), image.width(), |y, x| {
        let (y, x) = (y as isize, x as isize);
        let mut s = 0.0f64;
        for dy in -1..=1 {
            for dx in -1..=1 {
                s += *image.get_clamped(y + dy, x + dx) as f64;
            }
        }
        s / 9.0
    });
    patch_offsets(count)
        .into_iter()
        .map(|(dx, dy)| {
            Grid::from_fn(image.height(), image.width(), |y, x| {
                let v = *image.get_clamped(y as isize + dy, x as isize + dx) as f64;
                (v - mean.get(y, x)) as f32
            })
        })
        .collect()
}

/// Normalizes a channel against its replicate-padded 5x5 neighborhood:
/// `(v - mean) / sqrt(max(var, 1e-6))`.
pub fn normalize_local(channel: &Grid<f32>) -> Grid<f32> {
    let (h, w) = channel.shape();
    let rows: Vec<Vec<f32>> = (0..h)
        .into_par_iter()
        .map(|y| {
            (0..w)
                .map(|x| {
                    let (mean, var) = window_stats(channel, y, x);
                    let v = *channel.get(y, x) as f64;
                    ((v - mean) / var.max(VARIANCE_FLOOR).sqrt()) as f32
                })
                .collect()
        })
        .collect();
    Grid::from_vec(h, w, rows.into_iter().flatten().collect())
}

/// Mean and population variance of the 5x5 replicate-padded window.
pub(crate) fn window_stats(channel: &Grid<f32>, y: usize, x: usize) -> (f64, f64) {
    let (y, x) = (y as isize, x as isize);
    let mut sum = 0.0f64;
    let mut sq = 0.0f64;
    for dy in -NORM_RADIUS..=NORM_RADIUS {
        for dx in -NORM_RADIUS..=NORM_RADIUS {
            let v = *channel.get_clamped(y + dy, x + dx) as f64;
            sum += v;
            sq += v * v;
        }
    }
    let n = ((2 * NORM_RADIUS + 1) * (2 * NORM_RADIUS + 1)) as f64;
    let mean = sum / n;
    let var = (sq / n - mean * mean).max(0.0);
    (mean, var)
}

/// Downsamples `image` to `level` by repeated 2x2 averaging.
pub fn downsample(image: &GrayImage, level: usize) -> Result<GrayImage> {
    let step = 1usize << level;
    if !image.height().is_multiple_of(step) || !image.width().is_multiple_of(step) {
        return Err(Error::NotDivisible {
            height: image.height(),
            width: image.width(),
            level,
        });
    }
    let mut img = image.clone();
    for _ in 0..level {
        img = img.halve();
    }
    Ok(img)
}

/// Extracts the descriptor map at pyramid `level` from a full-resolution image.
pub fn extract_features(
    image: &GrayImage,
    level: usize,
    config: FeatureConfig,
) -> Result<FeatureMap> {
    config.validate()?;
    if image.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument("non-finite image value".into()));
    }
    let img = downsample(image, level)?;
    let half = config.channels / 2;
    let raw: Vec<Grid<f32>> = oriented_gradients(&img, half)
        .into_iter()
        .chain(patch_samples(&img, half))
        .collect();
    let normalized: Vec<Grid<f32>> = raw.iter().map(normalize_local).collect();

    let (h, w) = img.shape();
    let mut data = vec![0.0f32; h * w * config.channels];
    for (c, ch) in normalized.iter().enumerate() {
        for (i, v) in ch.iter().enumerate() {
            data[i * config.channels + c] = *v;
        }
    }
    FeatureMap::from_vec(h, w, config, level, data)
}

/// Feature maps for levels `0..levels`.
pub fn build_pyramid(
    image: &GrayImage,
    levels: usize,
    config: FeatureConfig,
) -> Result<FeaturePyramid> {
    if levels == 0 {
        return Err(Error::InvalidArgument("pyramid needs at least one level".into()));
    }
    let step = 1usize << (levels - 1);
    if !image.height().is_multiple_of(step) || !image.width().is_multiple_of(step) {
        return Err(Error::NotDivisible {
            height: image.height(),
            width: image.width(),
            level: levels - 1,
        });
    }
    let maps = (0..levels)
        .map(|l| extract_features(image, l, config))
        .collect::<Result<Vec<_>>>()?;
    Ok(FeaturePyramid { maps })
}
