use imagecore::Image;
use serde::{Deserialize, Serialize};

use crate::error::{ForgeError, Result};

const BINS: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClaheParams {
    /// Clip limit as a multiple of the mean bin height.
    pub clip: f32,
    /// Tile grid (columns, rows).
    pub grid: [usize; 2],
}

impl Default for ClaheParams {
    fn default() -> Self {
        ClaheParams { clip: 2.0, grid: [8, 8] }
    }
}

impl ClaheParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.clip > 0.0) {
            return Err(ForgeError::InvalidArgument(format!("CLAHE clip must be > 0, got {}", self.clip)));
        }
        if self.grid[0] == 0 || self.grid[1] == 0 {
            return Err(ForgeError::InvalidArgument("CLAHE grid must be at least 1x1".into()));
        }
        Ok(())
    }
}

#[inline]
fn bin(v: f32) -> usize {
    (v.clamp(0.0, 1.0) * 255.0).round() as usize
}

struct TileLayout {
    tw: usize,
    th: usize,
    nx: usize,
    ny: usize,
}

impl TileLayout {
    fn new(w: usize, h: usize, grid: [usize; 2]) -> Self {
        let tw = w.div_ceil(grid[0]).max(1);
        let th = h.div_ceil(grid[1]).max(1);
        TileLayout { tw, th, nx: w.div_ceil(tw), ny: h.div_ceil(th) }
    }
}

/// Clipped-histogram CDF mapping for each tile of one channel plane, row-major.
pub fn tile_mappings(plane: &[f32], w: usize, h: usize, params: &ClaheParams) -> Result<Vec<[f32; BINS]>> {
    params.validate()?;
    let layout = TileLayout::new(w, h, params.grid);
    let mut maps = Vec::with_capacity(layout.nx * layout.ny);
    for ty in 0..layout.ny {
        for tx in 0..layout.nx {
            let (xs, xe) = (tx * layout.tw, ((tx + 1) * layout.tw).min(w));
            let (ys, ye) = (ty * layout.th, ((ty + 1) * layout.th).min(h));
            let mut hist = [0.0f64; BINS];
            for y in ys..ye {
                for x in xs..xe {
                    hist[bin(plane[y * w + x])] += 1.0;
                }
            }
            let n = ((xe - xs) * (ye - ys)) as f64;
            if params.clip.is_finite() {
                let limit = params.clip as f64 * n / BINS as f64;
                let mut excess = 0.0;
                for hv in hist.iter_mut() {
                    if *hv > limit {
                        excess += *hv - limit;
                        *hv = limit;
                    }
                }
                let share = excess / BINS as f64;
                for hv in hist.iter_mut() {
                    *hv += share;
                }
            }
            let mut map = [0.0f32; BINS];
            let mut cdf = 0.0;
            for (m, hv) in map.iter_mut().zip(hist) {
                cdf += hv;
                *m = (cdf / n).min(1.0) as f32;
            }
            maps.push(map);
        }
    }
    Ok(maps)
}

/// Contrast-limited adaptive histogram equalization, applied per channel with
/// bilinear blending between neighbouring tile mappings.
pub fn clahe(img: &Image, params: &ClaheParams) -> Result<Image> {
    params.validate()?;
    let (w, h, ch) = (img.width(), img.height(), img.channels());
    let layout = TileLayout::new(w, h, params.grid);
    let mut out = img.clone();
    for c in 0..ch {
        let plane = img.channel(c);
        let maps = tile_mappings(&plane, w, h, params)?;
        for y in 0..h {
            let fy = (y as f32 + 0.5) / layout.th as f32 - 0.5;
            let y0 = (fy.floor().max(0.0) as usize).min(layout.ny - 1);
            let y1 = (y0 + 1).min(layout.ny - 1);
            let ty = (fy - y0 as f32).clamp(0.0, 1.0);
            for x in 0..w {
                let fx = (x as f32 + 0.5) / layout.tw as f32 - 0.5;
                let x0 = (fx.floor().max(0.0) as usize).min(layout.nx - 1);
                let x1 = (x0 + 1).min(layout.nx - 1);
                let tx = (fx - x0 as f32).clamp(0.0, 1.0);
                let b = bin(plane[y * w + x]);
                let m = |ix: usize, iy: usize| maps[iy * layout.nx + ix][b];
                let top = m(x0, y0) * (1.0 - tx) + m(x1, y0) * tx;
                let bottom = m(x0, y1) * (1.0 - tx) + m(x1, y1) * tx;
                out.set(x, y, c, top * (1.0 - ty) + bottom * ty);
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn textured(w: usize, h: usize) -> Image {
        let data = (0..w * h).map(|i| ((i * 37 + (i / w) * 11) % 200) as f32 / 255.0 * 0.6 + 0.1).collect();
        Image::from_vec(w, h, 1, data).unwrap()
    }

    #[test]
    fn single_tile_without_clip_is_global_equalization() {
        let img = textured(24, 20);
        let params = ClaheParams { clip: f32::INFINITY, grid: [1, 1] };
        let out = clahe(&img, &params).unwrap();
        // direct equalization oracle: fraction of pixels whose bin is <= this pixel's bin
        let bins: Vec<usize> = img.data().iter().map(|&v| (v * 255.0).round() as usize).collect();
        for (i, &b) in bins.iter().enumerate() {
            let rank = bins.iter().filter(|&&o| o <= b).count() as f32 / bins.len() as f32;
            assert!((out.data()[i] - rank).abs() < 1e-6);
        }
    }

    #[test]
    fn output_in_range_and_defaults() {
        let p = ClaheParams::default();
        assert_eq!((p.clip, p.grid), (2.0, [8, 8]));
        let out = clahe(&textured(64, 48).to_rgb(), &p).unwrap();
        assert!(out.data().iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn tile_mappings_are_monotone() {
        let img = textured(64, 64);
        for clip in [0.5f32, 2.0, 10.0] {
            let maps = tile_mappings(img.data(), 64, 64, &ClaheParams { clip, grid: [8, 8] }).unwrap();
            for m in maps {
                assert!(m.windows(2).all(|p| p[0] <= p[1]));
            }
        }
    }

    #[test]
    fn small_images_use_clamped_tiles() {
        let img = textured(5, 3);
        assert_eq!(clahe(&img, &ClaheParams::default()).unwrap().dims(), (5, 3));
    }

    #[test]
    fn rejects_bad_params() {
        let img = textured(8, 8);
        assert!(clahe(&img, &ClaheParams { clip: 0.0, grid: [8, 8] }).is_err());
        assert!(clahe(&img, &ClaheParams { clip: 2.0, grid: [0, 8] }).is_err());
    }
}
