//! Pluggable feature extractors and the perceptual distance built on them.

use imagecore::Image;

use crate::error::Result;
use crate::fidelity::check_shape;

/// A dense per-pixel feature map at one scale, channel-major.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub data: Vec<f64>,
}

/// Deterministic image features for perceptual distance, FID and IS.
pub trait FeatureExtractor: Send + Sync {
    /// Length of [`FeatureExtractor::extract`] vectors.
    fn dim(&self) -> usize;
    /// Per-scale dense feature maps used by [`perceptual_distance`].
    fn feature_maps(&self, img: &Image) -> Vec<FeatureMap>;
    /// Global descriptor used for Fréchet distance.
    fn extract(&self, img: &Image) -> Vec<f64>;
    /// Class-probability vector used for the Inception Score.
    fn classify(&self, img: &Image) -> Vec<f64>;
}

/// Luminance plus four oriented gradients over a 3-level Gaussian pyramid.
///
/// Gradient responses are central differences (range [-0.5, 0.5]) divided by
/// 0.5, so every channel lies in a unit range independent of image content.
#[derive(Debug, Clone)]
pub struct PyramidExtractor {
    pub levels: usize,
    pub classes: usize,
    projection: Vec<f64>,
}

pub const PYRAMID_CHANNELS: usize = 5;
const PROJECTION_SEED: u64 = 0x5eed_0f_e7e5;
const CLASSIFY_TEMPERATURE: f64 = 0.25;

impl Default for PyramidExtractor {
    fn default() -> Self {
        Self::new(3, 10)
    }
}

fn splitmix(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9e37_79b9_7f4a_7c15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

impl PyramidExtractor {
    pub fn new(levels: usize, classes: usize) -> Self {
        let levels = levels.max(1);
        let classes = classes.max(2);
        let dim = levels * PYRAMID_CHANNELS * 2;
        let mut state = PROJECTION_SEED;
        let projection = (0..dim * classes)
            .map(|_| (splitmix(&mut state) >> 11) as f64 / (1u64 << 53) as f64 * 2.0 - 1.0)
            .collect();
        PyramidExtractor { levels, classes, projection }
    }

    fn pyramid(&self, img: &Image) -> Vec<(usize, usize, Vec<f64>)> {
        let ch = img.channels();
        let base: Vec<f64> =
            img.data().chunks(ch).map(|p| p.iter().map(|&v| v as f64).sum::<f64>() / ch as f64).collect();
        let mut levels = vec![(img.width(), img.height(), base)];
        while levels.len() < self.levels {
            let (w, h, prev) = levels.last().unwrap();
            if *w < 2 || *h < 2 {
                break;
            }
            levels.push(blur_down(prev, *w, *h));
        }
        levels
    }
}

const BINOMIAL: [f64; 5] = [1.0 / 16.0, 4.0 / 16.0, 6.0 / 16.0, 4.0 / 16.0, 1.0 / 16.0];

/// 5-tap binomial blur with edge replication, then 2x decimation.
fn blur_down(src: &[f64], w: usize, h: usize) -> (usize, usize, Vec<f64>) {
    let at = |x: isize, y: isize| src[(y.clamp(0, h as isize - 1) as usize) * w + x.clamp(0, w as isize - 1) as usize];
    let mut rows = vec![0.0; w * h];
    for y in 0..h as isize {
        for x in 0..w as isize {
            rows[y as usize * w + x as usize] = BINOMIAL.iter().enumerate().map(|(k, t)| t * at(x + k as isize - 2, y)).sum();
        }
    }
    let rat = |x: usize, y: isize| rows[(y.clamp(0, h as isize - 1) as usize) * w + x];
    let (nw, nh) = (w / 2, h / 2);
    let mut out = vec![0.0; nw * nh];
    for y in 0..nh {
        for x in 0..nw {
            let (sx, sy) = (2 * x, 2 * y as isize);
            out[y * nw + x] = BINOMIAL.iter().enumerate().map(|(k, t)| t * rat(sx, sy + k as isize - 2)).sum();
        }
    }
    (nw, nh, out)
}

fn gradient_features(w: usize, h: usize, lum: &[f64]) -> FeatureMap {
    let at = |x: isize, y: isize| lum[(y.clamp(0, h as isize - 1) as usize) * w + x.clamp(0, w as isize - 1) as usize];
    let n = w * h;
    let mut data = vec![0.0; PYRAMID_CHANNELS * n];
    data[..n].copy_from_slice(lum);
    for y in 0..h as isize {
        for x in 0..w as isize {
            let i = y as usize * w + x as usize;
            // central difference / 2, then / 0.5 for unit range
            data[n + i] = at(x + 1, y) - at(x - 1, y);
            data[2 * n + i] = at(x, y + 1) - at(x, y - 1);
            data[3 * n + i] = at(x + 1, y + 1) - at(x - 1, y - 1);
            data[4 * n + i] = at(x + 1, y - 1) - at(x - 1, y + 1);
        }
    }
    FeatureMap { width: w, height: h, channels: PYRAMID_CHANNELS, data }
}

impl FeatureExtractor for PyramidExtractor {
    fn dim(&self) -> usize {
        self.levels * PYRAMID_CHANNELS * 2
    }

    fn feature_maps(&self, img: &Image) -> Vec<FeatureMap> {
        self.pyramid(img).into_iter().map(|(w, h, lum)| gradient_features(w, h, &lum)).collect()
    }

    /// Per level and channel: mean and standard deviation. Missing levels of tiny images are zero.
    fn extract(&self, img: &Image) -> Vec<f64> {
        let mut out = vec![0.0; self.dim()];
        for (l, fm) in self.feature_maps(img).iter().enumerate() {
            let n = fm.width * fm.height;
            if n == 0 {
                continue;
            }
            for c in 0..fm.channels {
                let plane = &fm.data[c * n..(c + 1) * n];
                let mean = plane.iter().sum::<f64>() / n as f64;
                let var = plane.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
                let k = (l * PYRAMID_CHANNELS + c) * 2;
                out[k] = mean;
                out[k + 1] = var.sqrt();
            }
        }
        out
    }

    /// Softmax of a fixed pseudo-random projection of [`FeatureExtractor::extract`].
    fn classify(&self, img: &Image) -> Vec<f64> {
        let f = self.extract(img);
        let d = f.len();
        let logits: Vec<f64> = (0..self.classes)
            .map(|k| f.iter().zip(&self.projection[k * d..(k + 1) * d]).map(|(a, b)| a * b).sum::<f64>() / CLASSIFY_TEMPERATURE)
            .collect();
        softmax(&logits)
    }
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|l| (l - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

/// Mean over scales of the mean squared feature difference.
pub fn perceptual_distance(a: &Image, b: &Image, fx: &dyn FeatureExtractor) -> Result<f64> {
    check_shape(a, b)?;
    let (fa, fb) = (fx.feature_maps(a), fx.feature_maps(b));
    let mut total = 0.0;
    let mut levels = 0;
    for (ma, mb) in fa.iter().zip(&fb) {
        if ma.data.is_empty() {
            continue;
        }
        let s: f64 = ma.data.iter().zip(&mb.data).map(|(x, y)| (x - y).powi(2)).sum();
        total += s / ma.data.len() as f64;
        levels += 1;
    }
    Ok(if levels == 0 { 0.0 } else { total / levels as f64 })
}
