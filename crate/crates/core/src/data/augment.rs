//! Random crop, horizontal flip and per-channel standardisation.

use rand::Rng;

use super::Dataset;
use crate::error::{Error, Result};
use crate::seed;
use crate::tensor::Tensor;

/// Per-channel mean and standard deviation in `[0, 1]` pixel units.
#[derive(Clone, Debug, PartialEq)]
pub struct ChannelStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl ChannelStats {
    /// Population statistics over every pixel of the dataset, accumulated
    /// exactly in integers.
    pub fn from_dataset(d: &Dataset) -> Self {
        let [c, h, w] = d.sample_shape();
        let plane = h * w;
        let mut sum = vec![0u64; c];
        let mut sq = vec![0u64; c];
        for i in 0..d.len() {
            for (ch, px) in d.image(i).chunks_exact(plane).enumerate() {
                for &p in px {
                    sum[ch] += p as u64;
                    sq[ch] += (p as u64) * (p as u64);
                }
            }
        }
        let n = (d.len() * plane) as f64;
        let mean: Vec<f64> = sum.iter().map(|&s| s as f64 / n / 255.0).collect();
        let std = sq
            .iter()
            .zip(&mean)
            .map(|(&q, &m)| (q as f64 / n / (255.0 * 255.0) - m * m).max(0.0).sqrt())
            .collect();
        ChannelStats { mean, std }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct AugmentPolicy {
    /// Zero padding before a random crop back to the original size; 0 disables.
    pub crop_pad: usize,
    pub hflip: bool,
    pub normalize: Option<ChannelStats>,
}

impl AugmentPolicy {
    pub fn none() -> Self {
        Self::default()
    }

    /// Crop with 4 px padding, flips, and standardisation with `stats`.
    pub fn standard(stats: ChannelStats) -> Self {
        AugmentPolicy {
            crop_pad: 4,
            hflip: true,
            normalize: Some(stats),
        }
    }

    /// Test-time transform: standardisation only.
    pub fn eval_only(&self) -> Self {
        AugmentPolicy {
            crop_pad: 0,
            hflip: false,
            normalize: self.normalize.clone(),
        }
    }

    pub fn is_identity(&self) -> bool {
        self.crop_pad == 0 && !self.hflip && self.normalize.is_none()
    }
}

/// Applies `policy` in place to a `B×C×H×W` batch. Per image, draws the crop
/// offsets then the flip decision from a stream seeded by `seed`.
pub fn augment(batch: &mut Tensor<f32>, seed: u64, policy: &AugmentPolicy) -> Result<()> {
    let &[b, c, h, w] = batch.shape() else {
        return Err(Error::Shape(format!("augment expects B×C×H×W, got {:?}", batch.shape())));
    };
    if let Some(stats) = &policy.normalize {
        if stats.mean.len() != c || stats.std.len() != c {
            return Err(Error::Shape(format!(
                "channel statistics for {} channels applied to {c}",
                stats.mean.len()
            )));
        }
    }
    if policy.is_identity() {
        return Ok(());
    }
    let mut rng = seed::rng(seed);
    let per = c * h * w;
    let mut scratch = vec![0.0f32; per];
    for img in batch.data_mut().chunks_exact_mut(per).take(b) {
        if policy.crop_pad > 0 {
            let p = policy.crop_pad;
            let dy = rng.random_range(0..=2 * p);
            let dx = rng.random_range(0..=2 * p);
            crop(img, &mut scratch, [c, h, w], p, dy, dx);
        }
        if policy.hflip && rng.random_bool(0.5) {
            hflip(img, [c, h, w]);
        }
        if let Some(stats) = &policy.normalize {
            for (ch, plane) in img.chunks_exact_mut(h * w).enumerate() {
                let (m, s) = (stats.mean[ch] as f32, stats.std[ch].max(1e-12) as f32);
                for v in plane {
                    *v = (*v - m) / s;
                }
            }
        }
    }
    Ok(())
}

/// Window at `(dy, dx)` of the image zero-padded by `pad` on every side.
fn crop(img: &mut [f32], scratch: &mut [f32], [c, h, w]: [usize; 3], pad: usize, dy: usize, dx: usize) {
    scratch.fill(0.0);
    for ch in 0..c {
        for y in 0..h {
            let sy = (y + dy) as isize - pad as isize;
            if sy < 0 || sy >= h as isize {
                continue;
            }
            for x in 0..w {
                let sx = (x + dx) as isize - pad as isize;
                if sx >= 0 && sx < w as isize {
                    scratch[(ch * h + y) * w + x] = img[(ch * h + sy as usize) * w + sx as usize];
                }
            }
        }
    }
    img.copy_from_slice(scratch);
}

pub(crate) fn hflip(img: &mut [f32], [_, _, w]: [usize; 3]) {
    for row in img.chunks_exact_mut(w) {
        row.reverse();
    }
}
