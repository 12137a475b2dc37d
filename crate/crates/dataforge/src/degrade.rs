//! Acquisition degradations: illumination imbalance, Gaussian blur, motion
//! blur and spot occlusions, applied in a caller-chosen order.

use imagecore::Image;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{ForgeError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DegradationKind {
    Illumination,
    GaussianBlur,
    MotionBlur,
    Spots,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Illumination {
    /// Center of the gain field as a fraction of (width, height).
    pub center: [f32; 2],
    /// Gain at the center, drawn uniformly from this range.
    pub strength: [f32; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MotionBlur {
    /// Kernel length range in pixels.
    pub length: [f32; 2],
    /// Direction in radians.
    pub angle: f32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Polarity {
    Bright,
    Dark,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Spots {
    pub count: [u32; 2],
    pub radius: [f32; 2],
    pub polarity: Polarity,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DegradationSpec {
    #[serde(default)]
    pub illumination: Option<Illumination>,
    /// Gaussian sigma in pixels.
    #[serde(default)]
    pub gaussian_blur: Option<f32>,
    #[serde(default)]
    pub motion_blur: Option<MotionBlur>,
    #[serde(default)]
    pub spots: Option<Spots>,
    /// Order of application; kinds without parameters are skipped.
    #[serde(default)]
    pub combine: Vec<DegradationKind>,
}

impl DegradationSpec {
    pub fn validate(&self) -> Result<()> {
        if let Some(s) = self.gaussian_blur {
            if !(s > 0.0) {
                return Err(ForgeError::InvalidSpec(format!("gaussian sigma must be > 0, got {s}")));
            }
        }
        if let Some(sp) = &self.spots {
            if sp.count[0] < 1 || sp.count[0] > sp.count[1] {
                return Err(ForgeError::InvalidSpec("spot count range must start at >= 1".into()));
            }
            if !(sp.radius[0] > 0.0 && sp.radius[0] <= sp.radius[1]) {
                return Err(ForgeError::InvalidSpec("spot radius range must be positive and ordered".into()));
            }
        }
        if let Some(m) = &self.motion_blur {
            if !(m.length[0] >= 1.0 && m.length[0] <= m.length[1]) {
                return Err(ForgeError::InvalidSpec("motion blur length must be >= 1 and ordered".into()));
            }
        }
        if let Some(il) = &self.illumination {
            if !(il.strength[0] > 0.0 && il.strength[0] <= il.strength[1]) {
                return Err(ForgeError::InvalidSpec("illumination gain range must be positive".into()));
            }
        }
        Ok(())
    }

    /// Default magnitudes for 128 px phantoms.
    pub fn all_defaults() -> Self {
        DegradationSpec {
            illumination: Some(Illumination { center: [0.5, 0.5], strength: [0.5, 1.5] }),
            gaussian_blur: Some(1.5),
            motion_blur: Some(MotionBlur { length: [5.0, 15.0], angle: 0.0 }),
            spots: Some(Spots { count: [1, 5], radius: [3.0, 12.0], polarity: Polarity::Dark }),
            combine: vec![],
        }
    }
}

/// Applies the degradations listed in `spec.combine`, in order.
pub fn degrade(img: &Image, spec: &DegradationSpec, seed: u64) -> Result<Image> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = img.clone();
    for kind in &spec.combine {
        out = match kind {
            DegradationKind::Illumination => match &spec.illumination {
                Some(p) => illuminate(&out, p, &mut rng),
                None => out,
            },
            DegradationKind::GaussianBlur => match spec.gaussian_blur {
                Some(sigma) => gaussian_blur(&out, sigma),
                None => out,
            },
            DegradationKind::MotionBlur => match &spec.motion_blur {
                Some(m) => {
                    let len = sample_range(&mut rng, m.length);
                    motion_blur(&out, len, m.angle)
                }
                None => out,
            },
            DegradationKind::Spots => match &spec.spots {
                Some(s) => add_spots(&out, s, &mut rng),
                None => out,
            },
        };
    }
    Ok(out)
}

fn sample_range(rng: &mut ChaCha8Rng, r: [f32; 2]) -> f32 {
    if r[0] >= r[1] {
        r[0]
    } else {
        rng.gen_range(r[0]..=r[1])
    }
}

fn illuminate(img: &Image, p: &Illumination, rng: &mut ChaCha8Rng) -> Image {
    let gain = sample_range(rng, p.strength);
    let (w, h) = (img.width() as f32, img.height() as f32);
    let (cx, cy) = (p.center[0] * w, p.center[1] * h);
    let spread = 0.35 * w.max(h);
    let mut out = img.clone();
    for y in 0..img.height() {
        for x in 0..img.width() {
            let d2 = (x as f32 + 0.5 - cx).powi(2) + (y as f32 + 0.5 - cy).powi(2);
            let m = 1.0 + (gain - 1.0) * (-d2 / (2.0 * spread * spread)).exp();
            for c in 0..img.channels() {
                out.set(x, y, c, img.get(x, y, c) * m);
            }
        }
    }
    out
}

/// Normalized 1-D Gaussian kernel truncated at `ceil(3 sigma)`.
pub fn gaussian_kernel(sigma: f32) -> Vec<f32> {
    let radius = (3.0 * sigma).ceil().max(1.0) as i32;
    let k: Vec<f64> =
        (-radius..=radius).map(|i| (-(i * i) as f64 / (2.0 * (sigma as f64).powi(2))).exp()).collect();
    let sum: f64 = k.iter().sum();
    k.into_iter().map(|v| (v / sum) as f32).collect()
}

/// Separable Gaussian blur with edge replication.
pub fn gaussian_blur(img: &Image, sigma: f32) -> Image {
    let k = gaussian_kernel(sigma);
    let r = (k.len() / 2) as isize;
    let (w, h, ch) = (img.width(), img.height(), img.channels());
    let mut tmp = vec![0.0f32; w * h * ch];
    for y in 0..h {
        for x in 0..w {
            for c in 0..ch {
                let mut acc = 0.0;
                for (i, &kv) in k.iter().enumerate() {
                    let sx = (x as isize + i as isize - r).clamp(0, w as isize - 1) as usize;
                    acc += kv * img.get(sx, y, c);
                }
                tmp[(y * w + x) * ch + c] = acc;
            }
        }
    }
    let mut out = vec![0.0f32; w * h * ch];
    for y in 0..h {
        for x in 0..w {
            for c in 0..ch {
                let mut acc = 0.0;
                for (i, &kv) in k.iter().enumerate() {
                    let sy = (y as isize + i as isize - r).clamp(0, h as isize - 1) as usize;
                    acc += kv * tmp[(sy * w + x) * ch + c];
                }
                out[(y * w + x) * ch + c] = acc;
            }
        }
    }
    Image::from_vec_clamped(w, h, ch, out)
}

/// Linear motion blur: average of `length` taps along `angle`, edge-replicated.
pub fn motion_blur(img: &Image, length: f32, angle: f32) -> Image {
    let taps = length.round().max(1.0) as i32;
    let (dx, dy) = (angle.cos(), angle.sin());
    let offsets: Vec<(isize, isize)> = (0..taps)
        .map(|i| {
            let t = i as f32 - (taps - 1) as f32 / 2.0;
            ((t * dx).round() as isize, (t * dy).round() as isize)
        })
        .collect();
    let (w, h, ch) = (img.width() as isize, img.height() as isize, img.channels());
    let mut out = img.clone();
    for y in 0..h {
        for x in 0..w {
            for c in 0..ch {
                let acc: f32 = offsets
                    .iter()
                    .map(|&(ox, oy)| {
                        img.get((x + ox).clamp(0, w - 1) as usize, (y + oy).clamp(0, h - 1) as usize, c)
                    })
                    .sum();
                out.set(x as usize, y as usize, c, acc / offsets.len() as f32);
            }
        }
    }
    out
}

fn add_spots(img: &Image, spots: &Spots, rng: &mut ChaCha8Rng) -> Image {
    let n = rng.gen_range(spots.count[0]..=spots.count[1]);
    let sign = match spots.polarity {
        Polarity::Bright => 1.0,
        Polarity::Dark => -1.0,
    };
    let mut out = img.clone();
    for _ in 0..n {
        let cx = rng.gen_range(0.0..img.width() as f32);
        let cy = rng.gen_range(0.0..img.height() as f32);
        let r = sample_range(rng, spots.radius);
        let amp = rng.gen_range(0.3..0.6f32);
        for y in 0..img.height() {
            for x in 0..img.width() {
                let d2 = (x as f32 + 0.5 - cx).powi(2) + (y as f32 + 0.5 - cy).powi(2);
                let g = (-d2 / (2.0 * r * r)).exp();
                if g < 1e-4 {
                    continue;
                }
                for c in 0..img.channels() {
                    let v = out.get(x, y, c);
                    out.set(x, y, c, v + sign * amp * g);
                }
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(w: usize, h: usize) -> Image {
        let data = (0..w * h * 3).map(|i| (i % 97) as f32 / 97.0).collect();
        Image::from_vec(w, h, 3, data).unwrap()
    }

    #[test]
    fn empty_spec_is_identity() {
        let img = ramp(16, 12);
        assert_eq!(degrade(&img, &DegradationSpec::default(), 3).unwrap(), img);
    }

    #[test]
    fn impulse_response_is_gaussian_kernel() {
        let mut img = Image::new(21, 21, 1);
        img.set(10, 10, 0, 1.0);
        let spec = DegradationSpec {
            gaussian_blur: Some(1.0),
            combine: vec![DegradationKind::GaussianBlur],
            ..Default::default()
        };
        let out = degrade(&img, &spec, 0).unwrap();
        // direct 2-D convolution oracle: outer product of the normalized truncated kernel
        let radius = 3i32;
        let g: Vec<f64> = (-radius..=radius).map(|i| (-(i * i) as f64 / 2.0).exp()).collect();
        let s: f64 = g.iter().sum();
        for y in 0..21i32 {
            for x in 0..21i32 {
                let (dx, dy) = (x - 10, y - 10);
                let expected = if dx.abs() <= radius && dy.abs() <= radius {
                    g[(dx + radius) as usize] * g[(dy + radius) as usize] / (s * s)
                } else {
                    0.0
                };
                assert!((out.get(x as usize, y as usize, 0) as f64 - expected).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn dimming_field_never_brightens() {
        let img = ramp(32, 32);
        let spec = DegradationSpec {
            illumination: Some(Illumination { center: [0.5, 0.5], strength: [0.5, 0.5] }),
            combine: vec![DegradationKind::Illumination],
            ..Default::default()
        };
        let out = degrade(&img, &spec, 9).unwrap();
        for (a, b) in out.data().iter().zip(img.data()) {
            assert!(a <= b);
        }
        assert!(out.get(16, 16, 0) < img.get(16, 16, 0) || img.get(16, 16, 0) == 0.0);
    }

    #[test]
    fn combined_is_deterministic_and_clamped() {
        let img = ramp(32, 32);
        let spec = DegradationSpec {
            combine: vec![
                DegradationKind::Illumination,
                DegradationKind::MotionBlur,
                DegradationKind::Spots,
                DegradationKind::GaussianBlur,
            ],
            ..DegradationSpec::all_defaults()
        };
        let a = degrade(&img, &spec, 5).unwrap();
        assert_eq!(a, degrade(&img, &spec, 5).unwrap());
        assert!(a.data().iter().all(|v| (0.0..=1.0).contains(v)));
        assert_ne!(a, img);
    }

    #[test]
    fn invalid_specs() {
        let bad = DegradationSpec { gaussian_blur: Some(0.0), ..Default::default() };
        assert!(degrade(&ramp(8, 8), &bad, 0).is_err());
        let bad = DegradationSpec {
            spots: Some(Spots { count: [0, 2], radius: [1.0, 2.0], polarity: Polarity::Bright }),
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn spec_json_field_names() {
        let spec = DegradationSpec { combine: vec![DegradationKind::GaussianBlur], ..DegradationSpec::all_defaults() };
        let v: serde_json::Value = serde_json::to_value(&spec).unwrap();
        for key in ["illumination", "gaussian_blur", "motion_blur", "spots", "combine"] {
            assert!(v.get(key).is_some(), "{key}");
        }
        let back: DegradationSpec = serde_json::from_value(v).unwrap();
        assert_eq!(back, spec);
    }
}
