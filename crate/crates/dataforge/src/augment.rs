//! Intensity/spatial augmentation and lesion-local perturbations.

use imagecore::{Image, LabelMask};
use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::clahe::{clahe, ClaheParams};
use crate::error::{ForgeError, Result};

/// Brightness offsets in 8-bit units, applied as `offset / 255`.
pub const BRIGHTNESS_OFFSETS_8BIT: [f32; 2] = [-10.0, 20.0];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AugmentationSpec {
    /// Candidate additive offsets in [0,1] units; one is drawn uniformly.
    pub brightness_offsets: Vec<f32>,
    pub contrast: [f32; 2],
    pub gamma: [f32; 2],
    /// Random resize factor range; the result is center-cropped or padded back.
    #[serde(default)]
    pub scale: Option<[f32; 2]>,
    pub clahe: ClaheParams,
    /// Whether CLAHE runs after the intensity transforms.
    #[serde(default)]
    pub apply_clahe: bool,
}

impl Default for AugmentationSpec {
    fn default() -> Self {
        AugmentationSpec {
            brightness_offsets: BRIGHTNESS_OFFSETS_8BIT.iter().map(|b| b / 255.0).collect(),
            contrast: [0.8, 1.2],
            gamma: [0.8, 1.2],
            scale: Some([0.9, 1.1]),
            clahe: ClaheParams::default(),
            apply_clahe: false,
        }
    }
}

impl AugmentationSpec {
    /// A spec whose every transform is the identity.
    pub fn identity() -> Self {
        AugmentationSpec {
            brightness_offsets: vec![0.0],
            contrast: [1.0, 1.0],
            gamma: [1.0, 1.0],
            scale: None,
            clahe: ClaheParams::default(),
            apply_clahe: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ordered = |r: [f32; 2], name: &str| {
            if r[0] > 0.0 && r[0] <= r[1] {
                Ok(())
            } else {
                Err(ForgeError::InvalidSpec(format!("{name} range {r:?} must be positive and ordered")))
            }
        };
        ordered(self.contrast, "contrast")?;
        ordered(self.gamma, "gamma")?;
        if let Some(s) = self.scale {
            ordered(s, "scale")?;
        }
        if self.brightness_offsets.is_empty() {
            return Err(ForgeError::InvalidSpec("brightness_offsets must not be empty".into()));
        }
        self.clahe.validate()
    }
}

fn draw(rng: &mut ChaCha8Rng, r: [f32; 2]) -> f32 {
    if r[0] >= r[1] {
        r[0]
    } else {
        rng.gen_range(r[0]..=r[1])
    }
}

/// Order: scale, contrast, brightness, gamma, clamp, then optional CLAHE.
pub fn augment(img: &Image, spec: &AugmentationSpec, seed: u64) -> Result<Image> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = match spec.scale {
        Some(range) => {
            let s = draw(&mut rng, range);
            if s == 1.0 {
                img.clone()
            } else {
                rescale_center(img, s)
            }
        }
        None => img.clone(),
    };
    let c = draw(&mut rng, spec.contrast);
    let b = *spec.brightness_offsets.choose(&mut rng).expect("validated non-empty");
    let g = draw(&mut rng, spec.gamma);
    if c != 1.0 {
        let mean = out.mean();
        out = out.map(|v| (v - mean) * c + mean);
    }
    if b != 0.0 {
        out = out.map(|v| v + b);
    }
    if g != 1.0 {
        out = out.map(|v| v.powf(g));
    }
    if spec.apply_clahe {
        out = clahe(&out, &spec.clahe)?;
    }
    Ok(out)
}

/// Resizes by `s` and center-crops or zero-pads back to the original size.
fn rescale_center(img: &Image, s: f32) -> Image {
    let (w, h) = img.dims();
    let nw = ((w as f32 * s).round() as usize).max(1);
    let nh = ((h as f32 * s).round() as usize).max(1);
    let scaled = img.resize_bilinear(nw, nh);
    let mut out = Image::new(w, h, img.channels());
    let ox = (nw as isize - w as isize) / 2;
    let oy = (nh as isize - h as isize) / 2;
    for y in 0..h {
        for x in 0..w {
            let (sx, sy) = (x as isize + ox, y as isize + oy);
            if sx >= 0 && sy >= 0 && (sx as usize) < nw && (sy as usize) < nh {
                out.set_pixel(x, y, scaled.pixel(sx as usize, sy as usize));
            }
        }
    }
    out
}

/// Elastic jitter plus a local gamma change inside the lesions' dilated bounding box.
/// Pixels outside the box are left untouched. Empty masks return the input.
pub fn perturb_lesions(img: &Image, lesions: &LabelMask, seed: u64) -> Result<Image> {
    lesions.check_dims(img.width(), img.height())?;
    let Some((x0, y0, x1, y1)) = bounding_box(lesions) else {
        return Ok(img.clone());
    };
    let pad = 2;
    let (w, h) = img.dims();
    let (x0, y0) = (x0.saturating_sub(pad), y0.saturating_sub(pad));
    let (x1, y1) = ((x1 + pad).min(w - 1), (y1 + pad).min(h - 1));

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let amp = rng.gen_range(0.5..1.5f32);
    let period = rng.gen_range(6.0..12.0f32);
    let (phx, phy) = (rng.gen_range(0.0..std::f32::consts::TAU), rng.gen_range(0.0..std::f32::consts::TAU));
    let gamma = rng.gen_range(0.8..1.2f32);

    let mut out = img.clone();
    for y in y0..=y1 {
        for x in x0..=x1 {
            let dx = amp * (std::f32::consts::TAU * y as f32 / period + phx).sin();
            let dy = amp * (std::f32::consts::TAU * x as f32 / period + phy).sin();
            let sx = (x as f32 + dx).clamp(0.0, (w - 1) as f32);
            let sy = (y as f32 + dy).clamp(0.0, (h - 1) as f32);
            let (ix, iy) = (sx.floor() as usize, sy.floor() as usize);
            let (jx, jy) = ((ix + 1).min(w - 1), (iy + 1).min(h - 1));
            let (tx, ty) = (sx - ix as f32, sy - iy as f32);
            for c in 0..img.channels() {
                let a = img.get(ix, iy, c) * (1.0 - tx) + img.get(jx, iy, c) * tx;
                let b = img.get(ix, jy, c) * (1.0 - tx) + img.get(jx, jy, c) * tx;
                out.set(x, y, c, (a * (1.0 - ty) + b * ty).powf(gamma));
            }
        }
    }
    Ok(out)
}

fn bounding_box(mask: &LabelMask) -> Option<(usize, usize, usize, usize)> {
    let mut bb: Option<(usize, usize, usize, usize)> = None;
    for y in 0..mask.height() {
        for x in 0..mask.width() {
            if mask.get(x, y) != 0 {
                bb = Some(match bb {
                    None => (x, y, x, y),
                    Some((a, b, c, d)) => (a.min(x), b.min(y), c.max(x), d.max(y)),
                });
            }
        }
    }
    bb
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp() -> Image {
        let data = (0..16 * 16 * 3).map(|i| (i % 255) as f32 / 255.0).collect();
        Image::from_vec(16, 16, 3, data).unwrap()
    }

    #[test]
    fn identity_spec() {
        let img = ramp();
        assert_eq!(augment(&img, &AugmentationSpec::identity(), 4).unwrap(), img);
    }

    #[test]
    fn brightness_only() {
        let img = Image::filled(8, 8, 1, 0.5);
        let spec = AugmentationSpec { brightness_offsets: vec![20.0 / 255.0], ..AugmentationSpec::identity() };
        let out = augment(&img, &spec, 0).unwrap();
        assert!(out.data().iter().all(|&v| (v - 0.578_431_4).abs() < 1e-6));
    }

    #[test]
    fn gamma_only() {
        let img = Image::filled(4, 4, 1, 0.25);
        let spec = AugmentationSpec { gamma: [0.8, 0.8], ..AugmentationSpec::identity() };
        let out = augment(&img, &spec, 0).unwrap();
        // 0.25^0.8 = exp(0.8 ln 0.25)
        let expected = (0.8f64 * 0.25f64.ln()).exp() as f32;
        assert!((expected - 0.3299).abs() < 1e-4);
        assert!(out.data().iter().all(|&v| (v - expected).abs() < 1e-6));
    }

    #[test]
    fn defaults_match_constants() {
        let spec = AugmentationSpec::default();
        assert_eq!(spec.brightness_offsets, vec![-10.0 / 255.0, 20.0 / 255.0]);
        assert_eq!(spec.contrast, [0.8, 1.2]);
        assert_eq!(spec.gamma, [0.8, 1.2]);
        assert_eq!(spec.clahe, ClaheParams { clip: 2.0, grid: [8, 8] });
    }

    #[test]
    fn deterministic_and_in_range() {
        let img = ramp();
        let spec = AugmentationSpec { apply_clahe: true, ..Default::default() };
        let a = augment(&img, &spec, 77).unwrap();
        assert_eq!(a, augment(&img, &spec, 77).unwrap());
        assert!(a.data().iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn lesion_perturbation_is_local() {
        let img = ramp();
        let mut m = LabelMask::new(16, 16);
        m.set(4, 4, 1);
        m.set(5, 5, 1);
        let out = perturb_lesions(&img, &m, 3).unwrap();
        for y in 0..16 {
            for x in 0..16 {
                if !(2..=7).contains(&x) || !(2..=7).contains(&y) {
                    assert_eq!(out.pixel(x, y), img.pixel(x, y));
                }
            }
        }
        assert_eq!(perturb_lesions(&img, &LabelMask::new(16, 16), 3).unwrap(), img);
    }
}
