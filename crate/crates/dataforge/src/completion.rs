//! Super-resolution pairs and inpainting/outpainting masks.

use imagecore::{Image, LabelMask};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{ForgeError, Result};

pub const SR_FACTORS: [usize; 5] = [5, 7, 9, 11, 13];
pub const INPAINT_RECTS: (usize, usize) = (1, 5);
pub const INPAINT_COVERAGE: (f64, f64) = (0.10, 0.50);
pub const OUTPAINT_RETAINED: (f64, f64) = (0.30, 0.80);
pub const MAX_MASK_RETRIES: usize = 1000;

/// Box-average downsample by `factor`, then nearest-neighbour upsample back.
/// Returns `(low, high)` where `high` is the original.
pub fn downsample_pair(img: &Image, factor: usize) -> Result<(Image, Image)> {
    if !SR_FACTORS.contains(&factor) {
        return Err(ForgeError::InvalidArgument(format!("factor {factor} not in {SR_FACTORS:?}")));
    }
    let (w, h, ch) = (img.width(), img.height(), img.channels());
    if w < factor || h < factor {
        return Err(ForgeError::InvalidArgument(format!("{w}x{h} image is smaller than factor {factor}")));
    }
    let (lw, lh) = (w.div_ceil(factor), h.div_ceil(factor));
    let mut low_small = vec![0.0f32; lw * lh * ch];
    for by in 0..lh {
        for bx in 0..lw {
            let (xs, xe) = (bx * factor, ((bx + 1) * factor).min(w));
            let (ys, ye) = (by * factor, ((by + 1) * factor).min(h));
            let n = ((xe - xs) * (ye - ys)) as f64;
            for c in 0..ch {
                let mut acc = 0.0f64;
                for y in ys..ye {
                    for x in xs..xe {
                        acc += img.get(x, y, c) as f64;
                    }
                }
                low_small[(by * lw + bx) * ch + c] = (acc / n) as f32;
            }
        }
    }
    let mut low = Image::new(w, h, ch);
    for y in 0..h {
        for x in 0..w {
            let i = ((y / factor) * lw + x / factor) * ch;
            low.set_pixel(x, y, &low_small[i..i + ch]);
        }
    }
    Ok((low, img.clone()))
}

/// Axis-aligned hole rectangle `(x0, y0, width, height)` in pixels.
pub type HoleRect = (usize, usize, usize, usize);

/// 1-5 random rectangles whose union covers 10-50 % of the image; holes are zeroed.
pub fn make_inpaint(img: &Image, seed: u64) -> Result<(Image, LabelMask)> {
    make_inpaint_rects(img, seed).map(|(masked, holes, _)| (masked, holes))
}

/// Like [`make_inpaint`], also returning the accepted rectangles.
pub fn make_inpaint_rects(img: &Image, seed: u64) -> Result<(Image, LabelMask, Vec<HoleRect>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (w, h) = img.dims();
    for _ in 0..MAX_MASK_RETRIES {
        let n = rng.gen_range(INPAINT_RECTS.0..=INPAINT_RECTS.1);
        let mut holes = LabelMask::new(w, h);
        let mut rects = Vec::with_capacity(n);
        for _ in 0..n {
            let rw = ((rng.gen_range(0.1..0.5) * w as f64).round() as usize).clamp(1, w);
            let rh = ((rng.gen_range(0.1..0.5) * h as f64).round() as usize).clamp(1, h);
            let x0 = rng.gen_range(0..=w - rw);
            let y0 = rng.gen_range(0..=h - rh);
            rects.push((x0, y0, rw, rh));
            for y in y0..y0 + rh {
                for x in x0..x0 + rw {
                    holes.set(x, y, 1);
                }
            }
        }
        let frac = holes.count(1) as f64 / (w * h) as f64;
        if (INPAINT_COVERAGE.0..=INPAINT_COVERAGE.1).contains(&frac) {
            return Ok((apply_zero(img, &holes, 1), holes, rects));
        }
    }
    Err(ForgeError::Unsatisfiable(format!("inpaint coverage for {w}x{h} after {MAX_MASK_RETRIES} retries")))
}

/// Keeps one jittered ellipse covering 30-80 % of the image; the rest is zeroed.
pub fn make_outpaint(img: &Image, seed: u64) -> Result<(Image, LabelMask)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (w, h) = img.dims();
    let (wf, hf) = (w as f64, h as f64);
    for _ in 0..MAX_MASK_RETRIES {
        let target = rng.gen_range(OUTPAINT_RETAINED.0..OUTPAINT_RETAINED.1);
        let aspect = rng.gen_range(0.8..1.25);
        let cx = wf / 2.0 + rng.gen_range(-0.08..0.08) * wf;
        let cy = hf / 2.0 + rng.gen_range(-0.08..0.08) * hf;
        // pi * rx * ry = target * area, rx / ry = aspect * w / h
        let ry = (target * wf * hf / (std::f64::consts::PI * aspect * wf / hf)).sqrt();
        let rx = ry * aspect * wf / hf;
        let kept = LabelMask::from_fn(w, h, |x, y| {
            let u = (x as f64 + 0.5 - cx) / rx;
            let v = (y as f64 + 0.5 - cy) / ry;
            u * u + v * v <= 1.0
        });
        let frac = kept.count(1) as f64 / (w * h) as f64;
        if (OUTPAINT_RETAINED.0..=OUTPAINT_RETAINED.1).contains(&frac) {
            return Ok((apply_zero(img, &kept, 0), kept));
        }
    }
    Err(ForgeError::Unsatisfiable(format!("outpaint retention for {w}x{h} after {MAX_MASK_RETRIES} retries")))
}

/// Zeroes pixels whose mask label equals `zero_label`.
fn apply_zero(img: &Image, mask: &LabelMask, zero_label: u16) -> Image {
    let mut out = img.clone();
    let zeros = vec![0.0; img.channels()];
    for y in 0..img.height() {
        for x in 0..img.width() {
            if mask.get(x, y) == zero_label {
                out.set_pixel(x, y, &zeros);
            }
        }
    }
    out
}
