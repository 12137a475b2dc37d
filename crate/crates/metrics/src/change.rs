//! Tissue masking and the signed change map between two time points.

use imagecore::{Image, LabelMask};
use serde::{Deserialize, Serialize};

use crate::components::{components, Connectivity};
use crate::error::{MetricsError, Result};

pub const CLOSE_RADIUS: usize = 3;

/// Otsu threshold over 256 bins of `values` in [0,1]. Pixels with bin > threshold are foreground.
pub fn otsu_threshold(values: &[f64]) -> usize {
    let mut hist = [0u64; 256];
    for &v in values {
        hist[(v.clamp(0.0, 1.0) * 255.0).round() as usize] += 1;
    }
    let total = values.len() as f64;
    let sum_all: f64 = hist.iter().enumerate().map(|(i, &c)| i as f64 * c as f64).sum();
    let (mut w0, mut sum0) = (0.0, 0.0);
    let (mut best, mut best_t) = (-1.0, 0);
    for (t, &c) in hist.iter().enumerate() {
        w0 += c as f64;
        sum0 += t as f64 * c as f64;
        let w1 = total - w0;
        if w0 == 0.0 || w1 == 0.0 {
            continue;
        }
        let (m0, m1) = (sum0 / w0, (sum_all - sum0) / w1);
        let between = w0 * w1 * (m0 - m1) * (m0 - m1);
        if between > best {
            best = between;
            best_t = t;
        }
    }
    if best < 0.0 {
        // one occupied bin: foreground iff it is not black
        let only = hist.iter().position(|&c| c > 0).unwrap_or(0);
        return if only == 0 { 255 } else { only - 1 };
    }
    best_t
}

fn largest_component(fg: &[bool], w: usize, h: usize) -> Vec<bool> {
    let mut out = vec![false; fg.len()];
    if let Some(c) = components(fg, w, h, Connectivity::Four).into_iter().max_by(|a, b| {
        a.pixels.len().cmp(&b.pixels.len()).then(b.pixels[0].cmp(&a.pixels[0]))
    }) {
        for i in c.pixels {
            out[i] = true;
        }
    }
    out
}

fn disk_offsets(r: usize) -> Vec<(isize, isize)> {
    let r = r as isize;
    (-r..=r).flat_map(|dy| (-r..=r).map(move |dx| (dx, dy))).filter(|(dx, dy)| dx * dx + dy * dy <= r * r).collect()
}

/// Dilation ignores out-of-bounds pixels; erosion treats them as foreground.
fn morph(fg: &[bool], w: usize, h: usize, r: usize, dilate: bool) -> Vec<bool> {
    let offs = disk_offsets(r);
    let mut out = vec![false; fg.len()];
    for y in 0..h as isize {
        for x in 0..w as isize {
            let probe = |&(dx, dy): &(isize, isize)| {
                let (nx, ny) = (x + dx, y + dy);
                if nx < 0 || ny < 0 || nx as usize >= w || ny as usize >= h {
                    !dilate
                } else {
                    fg[ny as usize * w + nx as usize]
                }
            };
            out[y as usize * w + x as usize] = if dilate { offs.iter().any(probe) } else { offs.iter().all(probe) };
        }
    }
    out
}

/// Background not 4-connected to the image border becomes foreground.
fn fill_holes(fg: &[bool], w: usize, h: usize) -> Vec<bool> {
    let bg: Vec<bool> = fg.iter().map(|v| !v).collect();
    let mut out = vec![true; fg.len()];
    for c in components(&bg, w, h, Connectivity::Four) {
        let touches = c.pixels.iter().any(|&i| {
            let (x, y) = (i % w, i / w);
            x == 0 || y == 0 || x == w - 1 || y == h - 1
        });
        if touches {
            for i in c.pixels {
                out[i] = false;
            }
        }
    }
    out
}

/// Otsu foreground, largest 4-connected component, closing with a radius-3 disk,
/// hole filling. The result is a single 4-connected component or empty.
pub fn tissue_mask(reference: &Image) -> LabelMask {
    let (w, h) = reference.dims();
    let ch = reference.channels();
    let gray: Vec<f64> = reference.data().chunks(ch).map(|p| p.iter().map(|&v| v as f64).sum::<f64>() / ch as f64).collect();
    let t = otsu_threshold(&gray);
    let fg: Vec<bool> = gray.iter().map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as usize > t).collect();
    let fg = largest_component(&fg, w, h);
    if !fg.iter().any(|&v| v) {
        log::warn!("tissue mask is empty for a {w}x{h} reference image");
        return LabelMask::new(w, h);
    }
    let closed = morph(&morph(&fg, w, h, CLOSE_RADIUS, true), w, h, CLOSE_RADIUS, false);
    let filled = fill_holes(&closed, w, h);
    let single = largest_component(&filled, w, h);
    LabelMask::from_vec(w, h, single.into_iter().map(u16::from).collect()).expect("dims preserved")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignedChangeMap {
    pub width: usize,
    pub height: usize,
    /// Row-major values in [-1, 1], zero outside the tissue.
    pub values: Vec<f32>,
    pub tissue: LabelMask,
    /// Pixel of maximum |change| inside the tissue; `None` when nothing changed.
    pub peak: Option<(usize, usize)>,
    /// The normalizer max |raw|, 0 when nothing changed.
    pub scale: f64,
}

impl SignedChangeMap {
    pub fn get(&self, x: usize, y: usize) -> f32 {
        self.values[y * self.width + x]
    }
}

/// raw(p) = mean_c(after - before) * M(p), normalized by max |raw|.
pub fn signed_change_map(before: &Image, after: &Image, tissue: &LabelMask) -> Result<SignedChangeMap> {
    crate::fidelity::check_shape(before, after)?;
    let (w, h) = before.dims();
    if tissue.dims() != (w, h) {
        return Err(MetricsError::Dimensions(format!("tissue {:?} vs image {:?}", tissue.dims(), (w, h))));
    }
    let ch = before.channels();
    let raw: Vec<f64> = (0..w * h)
        .map(|i| {
            if tissue.labels()[i] == 0 {
                return 0.0;
            }
            let (x, y) = (i % w, i / w);
            let (b, a) = (before.pixel(x, y), after.pixel(x, y));
            a.iter().zip(b).map(|(&av, &bv)| av as f64 - bv as f64).sum::<f64>() / ch as f64
        })
        .collect();
    let mut peak = None;
    let mut scale = 0.0;
    for (i, r) in raw.iter().enumerate() {
        if r.abs() > scale {
            scale = r.abs();
            peak = Some((i % w, i / w));
        }
    }
    let values = raw.iter().map(|&r| if scale > 0.0 { (r / scale) as f32 } else { 0.0 }).collect();
    Ok(SignedChangeMap { width: w, height: h, values, tissue: tissue.clone(), peak, scale })
}

/// Red-white-blue colormap: +1 red, 0 white, -1 blue.
pub fn colormap(v: f32) -> [f32; 3] {
    let v = v.clamp(-1.0, 1.0);
    if v >= 0.0 {
        [1.0, 1.0 - v, 1.0 - v]
    } else {
        [1.0 + v, 1.0 + v, 1.0]
    }
}

pub const ARROW_COLOR: [f32; 3] = [0.0, 0.0, 0.0];

/// Pixels of a diagonal arrow whose tip sits next to `peak`. It comes in from
/// the upper left, flipping per axis when the peak is too close to that edge.
pub fn arrow_pixels(peak: (usize, usize), w: usize, h: usize) -> Vec<(usize, usize)> {
    let len = (w.min(h) / 6).max(4) as isize;
    let (px, py) = (peak.0 as isize, peak.1 as isize);
    let dx: isize = if px >= len + 2 { -1 } else { 1 };
    let dy: isize = if py >= len + 2 { -1 } else { 1 };
    let tip = (px + 2 * dx, py + 2 * dy);
    let mut pts = Vec::new();
    for k in 0..len {
        pts.push((tip.0 + k * dx, tip.1 + k * dy));
    }
    for k in 1..=len / 2 {
        pts.push((tip.0 + k * dx, tip.1));
        pts.push((tip.0, tip.1 + k * dy));
    }
    pts.into_iter()
        .filter(|&(x, y)| x >= 0 && y >= 0 && (x as usize) < w && (y as usize) < h)
        .map(|(x, y)| (x as usize, y as usize))
        .collect()
}

/// RGB rendering with the arrow glyph at the peak.
pub fn render_change_map(map: &SignedChangeMap) -> Image {
    let mut out = Image::new(map.width, map.height, 3);
    for y in 0..map.height {
        for x in 0..map.width {
            out.set_pixel(x, y, &colormap(map.get(x, y)));
        }
    }
    if let Some(p) = map.peak {
        for (x, y) in arrow_pixels(p, map.width, map.height) {
            out.set_pixel(x, y, &ARROW_COLOR);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn disk_image(w: usize, h: usize, cx: f64, cy: f64, r: f64) -> Image {
        let mut img = Image::new(w, h, 1);
        for y in 0..h {
            for x in 0..w {
                let d = ((x as f64 - cx).powi(2) + (y as f64 - cy).powi(2)).sqrt();
                if d <= r {
                    img.set(x, y, 0, 0.8);
                }
            }
        }
        img
    }

    #[test]
    fn disk_mask_matches_geometry() {
        let img = disk_image(48, 40, 23.0, 19.0, 12.0);
        let m = tissue_mask(&img);
        for y in 0..40 {
            for x in 0..48 {
                let d = ((x as f64 - 23.0).powi(2) + (y as f64 - 19.0).powi(2)).sqrt();
                if d <= 11.0 {
                    assert_eq!(m.get(x, y), 1);
                } else if d > 13.0 {
                    assert_eq!(m.get(x, y), 0);
                }
            }
        }
    }

    #[test]
    fn zero_image_gives_empty_mask() {
        assert!(tissue_mask(&Image::new(16, 16, 3)).is_empty());
    }

    #[test]
    fn holes_filled_and_small_blobs_dropped() {
        let mut img = disk_image(40, 40, 20.0, 20.0, 14.0);
        for y in 17..23 {
            for x in 17..23 {
                img.set(x, y, 0, 0.0);
            }
        }
        img.set(1, 1, 0, 0.8);
        let m = tissue_mask(&img);
        assert_eq!(m.get(20, 20), 1);
        assert_eq!(m.get(1, 1), 0);
    }

    #[test]
    fn identical_images_have_no_peak() {
        let img = disk_image(16, 16, 8.0, 8.0, 5.0);
        let t = tissue_mask(&img);
        let m = signed_change_map(&img, &img, &t).unwrap();
        assert!(m.values.iter().all(|&v| v == 0.0));
        assert_eq!(m.peak, None);
    }

    #[test]
    fn single_brightened_pixel() {
        let before = Image::filled(12, 12, 3, 0.4);
        let mut after = before.clone();
        after.set_pixel(5, 7, &[0.7, 0.7, 0.7]);
        let tissue = LabelMask::from_fn(12, 12, |_, _| true);
        let m = signed_change_map(&before, &after, &tissue).unwrap();
        assert_eq!(m.get(5, 7), 1.0);
        assert_eq!(m.values.iter().filter(|&&v| v != 0.0).count(), 1);
        assert_eq!(m.peak, Some((5, 7)));
        assert_eq!(colormap(m.get(5, 7)), [1.0, 0.0, 0.0]);
    }

    #[test]
    fn change_outside_tissue_is_ignored() {
        let before = Image::filled(10, 10, 1, 0.4);
        let mut after = before.clone();
        after.set(0, 0, 0, 0.9);
        let tissue = LabelMask::from_fn(10, 10, |x, y| x > 3 && y > 3);
        let m = signed_change_map(&before, &after, &tissue).unwrap();
        assert!(m.values.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn darkening_is_blue_and_ties_pick_first() {
        let before = Image::filled(8, 8, 1, 0.6);
        let mut after = before.clone();
        after.set(6, 1, 0, 0.2);
        after.set(2, 5, 0, 0.2);
        let tissue = LabelMask::from_fn(8, 8, |_, _| true);
        let m = signed_change_map(&before, &after, &tissue).unwrap();
        assert_eq!(m.peak, Some((6, 1)));
        assert_eq!(m.get(2, 5), -1.0);
        assert_eq!(colormap(-1.0), [0.0, 0.0, 1.0]);
        assert!(signed_change_map(&before, &Image::new(8, 9, 1), &tissue).is_err());
    }

    #[test]
    fn render_draws_arrow_near_peak() {
        let before = Image::filled(32, 32, 1, 0.5);
        let mut after = before.clone();
        after.set(20, 20, 0, 0.9);
        let m = signed_change_map(&before, &after, &LabelMask::from_fn(32, 32, |_, _| true)).unwrap();
        let img = render_change_map(&m);
        assert_eq!(img.pixel(18, 18), &ARROW_COLOR);
        assert_eq!(img.pixel(20, 20), &[1.0, 0.0, 0.0]);
        let corner = arrow_pixels((0, 0), 32, 32);
        assert!(corner.contains(&(2, 2)));
    }
}
