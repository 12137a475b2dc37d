//! Pixel-level fidelity: PSNR and SSIM.

use imagecore::Image;

use crate::error::{MetricsError, Result};

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;

pub(crate) fn check_shape(a: &Image, b: &Image) -> Result<()> {
    if a.width() != b.width() || a.height() != b.height() || a.channels() != b.channels() {
        return Err(MetricsError::Dimensions(format!(
            "{}x{}x{} vs {}x{}x{}",
            a.width(),
            a.height(),
            a.channels(),
            b.width(),
            b.height(),
            b.channels()
        )));
    }
    Ok(())
}

pub fn mse(a: &Image, b: &Image) -> Result<f64> {
    check_shape(a, b)?;
    let n = a.data().len();
    if n == 0 {
        return Err(MetricsError::InvalidInput("empty image".into()));
    }
    let s: f64 = a.data().iter().zip(b.data()).map(|(&x, &y)| (x as f64 - y as f64).powi(2)).sum();
    Ok(s / n as f64)
}

/// Peak 1.0; identical images give `f64::INFINITY`.
pub fn psnr(a: &Image, b: &Image) -> Result<f64> {
    let m = mse(a, b)?;
    if m == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (1.0 / m).log10())
}

/// Normalized 1-D Gaussian taps of the SSIM window.
pub fn ssim_taps() -> [f64; SSIM_WINDOW] {
    let r = (SSIM_WINDOW / 2) as f64;
    let mut taps: [f64; SSIM_WINDOW] =
        std::array::from_fn(|i| (-((i as f64 - r).powi(2)) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp());
    let s: f64 = taps.iter().sum();
    taps.iter_mut().for_each(|t| *t /= s);
    taps
}

fn gray(img: &Image) -> Vec<f64> {
    let ch = img.channels();
    img.data().chunks(ch).map(|p| p.iter().map(|&v| v as f64).sum::<f64>() / ch as f64).collect()
}

/// Valid-region separable filtering: output is `(w-10) x (h-10)`.
fn filter_valid(src: &[f64], w: usize, h: usize, taps: &[f64; SSIM_WINDOW]) -> Vec<f64> {
    let (ow, oh) = (w - SSIM_WINDOW + 1, h - SSIM_WINDOW + 1);
    let mut rows = vec![0.0; ow * h];
    for y in 0..h {
        for x in 0..ow {
            rows[y * ow + x] = taps.iter().enumerate().map(|(k, t)| t * src[y * w + x + k]).sum();
        }
    }
    let mut out = vec![0.0; ow * oh];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = taps.iter().enumerate().map(|(k, t)| t * rows[(y + k) * ow + x]).sum();
        }
    }
    out
}

/// Mean SSIM over all fully contained 11x11 Gaussian windows, on the channel-mean gray image.
pub fn ssim(a: &Image, b: &Image) -> Result<f64> {
    check_shape(a, b)?;
    let (w, h) = a.dims();
    if w < SSIM_WINDOW || h < SSIM_WINDOW {
        return Err(MetricsError::Dimensions(format!("{w}x{h} is smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} window")));
    }
    let (ga, gb) = (gray(a), gray(b));
    let taps = ssim_taps();
    let prod = |x: &[f64], y: &[f64]| x.iter().zip(y).map(|(p, q)| p * q).collect::<Vec<_>>();
    let mu_a = filter_valid(&ga, w, h, &taps);
    let mu_b = filter_valid(&gb, w, h, &taps);
    let e_aa = filter_valid(&prod(&ga, &ga), w, h, &taps);
    let e_bb = filter_valid(&prod(&gb, &gb), w, h, &taps);
    let e_ab = filter_valid(&prod(&ga, &gb), w, h, &taps);
    let c1 = SSIM_K1 * SSIM_K1;
    let c2 = SSIM_K2 * SSIM_K2;
    let mut acc = 0.0;
    for i in 0..mu_a.len() {
        let (ma, mb) = (mu_a[i], mu_b[i]);
        let va = e_aa[i] - ma * ma;
        let vb = e_bb[i] - mb * mb;
        let cov = e_ab[i] - ma * mb;
        acc += ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
    }
    Ok(acc / mu_a.len() as f64)
}
