use serde::{Deserialize, Serialize};

use crate::error::{ImageError, Result};

/// Row-major raster with 1 or 3 channels and values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Image {
    width: usize,
    height: usize,
    channels: usize,
    data: Vec<f32>,
}

impl Image {
    pub fn new(width: usize, height: usize, channels: usize) -> Self {
        Self::filled(width, height, channels, 0.0)
    }

    pub fn filled(width: usize, height: usize, channels: usize, value: f32) -> Self {
        assert!(channels == 1 || channels == 3, "channels must be 1 or 3");
        Image { width, height, channels, data: vec![value; width * height * channels] }
    }

    /// Builds an image from raw data, checking length and range.
    pub fn from_vec(width: usize, height: usize, channels: usize, data: Vec<f32>) -> Result<Self> {
        if channels != 1 && channels != 3 {
            return Err(ImageError::Channels { expected: "1 or 3".into(), got: channels });
        }
        if data.len() != width * height * channels {
            return Err(ImageError::Dimensions {
                expected: format!("{} values", width * height * channels),
                got: format!("{} values", data.len()),
            });
        }
        if let Some((index, &value)) =
            data.iter().enumerate().find(|(_, v)| !(0.0..=1.0).contains(*v))
        {
            return Err(ImageError::OutOfRange { index, value });
        }
        Ok(Image { width, height, channels, data })
    }

    /// Builds an image from arbitrary values, clamping into `[0, 1]` (NaN maps to 0).
    pub fn from_vec_clamped(width: usize, height: usize, channels: usize, data: Vec<f32>) -> Self {
        assert_eq!(data.len(), width * height * channels);
        assert!(channels == 1 || channels == 3);
        let data = data.into_iter().map(clamp01).collect();
        Image { width, height, channels, data }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize, c: usize) -> usize {
        (y * self.width + x) * self.channels + c
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, c: usize) -> f32 {
        self.data[self.index(x, y, c)]
    }

    /// Writes a value, clamping it into `[0, 1]`.
    #[inline]
    pub fn set(&mut self, x: usize, y: usize, c: usize, v: f32) {
        let i = self.index(x, y, c);
        self.data[i] = clamp01(v);
    }

    pub fn pixel(&self, x: usize, y: usize) -> &[f32] {
        let i = self.index(x, y, 0);
        &self.data[i..i + self.channels]
    }

    pub fn set_pixel(&mut self, x: usize, y: usize, px: &[f32]) {
        debug_assert_eq!(px.len(), self.channels);
        let i = self.index(x, y, 0);
        for (d, &s) in self.data[i..i + self.channels].iter_mut().zip(px) {
            *d = clamp01(s);
        }
    }

    pub fn same_shape(&self, other: &Image) -> bool {
        self.width == other.width && self.height == other.height && self.channels == other.channels
    }

    pub fn check_same_shape(&self, other: &Image) -> Result<()> {
        if self.same_shape(other) {
            Ok(())
        } else {
            Err(ImageError::Dimensions {
                expected: format!("{}x{}x{}", self.width, self.height, self.channels),
                got: format!("{}x{}x{}", other.width, other.height, other.channels),
            })
        }
    }

    /// Applies `f` to every value and clamps the result.
    pub fn map(&self, f: impl Fn(f32) -> f32) -> Image {
        Image { data: self.data.iter().map(|&v| clamp01(f(v))).collect(), ..self.clone() }
    }

    /// Channel-mean grayscale.
    pub fn to_gray(&self) -> Image {
        if self.channels == 1 {
            return self.clone();
        }
        let data = self.data.chunks_exact(3).map(|p| (p[0] + p[1] + p[2]) / 3.0).collect();
        Image { width: self.width, height: self.height, channels: 1, data }
    }

    /// Replicates a grayscale image into three channels.
    pub fn to_rgb(&self) -> Image {
        if self.channels == 3 {
            return self.clone();
        }
        let data = self.data.iter().flat_map(|&v| [v, v, v]).collect();
        Image { width: self.width, height: self.height, channels: 3, data }
    }

    /// Extracts a single channel plane.
    pub fn channel(&self, c: usize) -> Vec<f32> {
        self.data.iter().skip(c).step_by(self.channels).copied().collect()
    }

    pub fn mean(&self) -> f32 {
        if self.data.is_empty() {
            return 0.0;
        }
        (self.data.iter().map(|&v| v as f64).sum::<f64>() / self.data.len() as f64) as f32
    }

    /// Bilinear resampling with pixel-center alignment.
    pub fn resize_bilinear(&self, width: usize, height: usize) -> Image {
        let mut out = Image::new(width, height, self.channels);
        let sx = self.width as f32 / width as f32;
        let sy = self.height as f32 / height as f32;
        for y in 0..height {
            let fy = ((y as f32 + 0.5) * sy - 0.5).clamp(0.0, (self.height - 1) as f32);
            let y0 = fy.floor() as usize;
            let y1 = (y0 + 1).min(self.height - 1);
            let ty = fy - y0 as f32;
            for x in 0..width {
                let fx = ((x as f32 + 0.5) * sx - 0.5).clamp(0.0, (self.width - 1) as f32);
                let x0 = fx.floor() as usize;
                let x1 = (x0 + 1).min(self.width - 1);
                let tx = fx - x0 as f32;
                for c in 0..self.channels {
                    let a = self.get(x0, y0, c) * (1.0 - tx) + self.get(x1, y0, c) * tx;
                    let b = self.get(x0, y1, c) * (1.0 - tx) + self.get(x1, y1, c) * tx;
                    out.set(x, y, c, a * (1.0 - ty) + b * ty);
                }
            }
        }
        out
    }

    /// Area-averaging resize; exact box filter when the target divides the source.
    pub fn resize_area(&self, width: usize, height: usize) -> Image {
        if width == self.width && height == self.height {
            return self.clone();
        }
        if width > self.width || height > self.height {
            return self.resize_bilinear(width, height);
        }
        let mut out = Image::new(width, height, self.channels);
        for y in 0..height {
            let ys = y * self.height / height;
            let ye = ((y + 1) * self.height / height).max(ys + 1);
            for x in 0..width {
                let xs = x * self.width / width;
                let xe = ((x + 1) * self.width / width).max(xs + 1);
                let n = ((ye - ys) * (xe - xs)) as f32;
                for c in 0..self.channels {
                    let mut acc = 0.0f32;
                    for yy in ys..ye {
                        for xx in xs..xe {
                            acc += self.get(xx, yy, c);
                        }
                    }
                    out.set(x, y, c, acc / n);
                }
            }
        }
        out
    }
}

#[inline]
pub(crate) fn clamp01(v: f32) -> f32 {
    if v.is_nan() {
        0.0
    } else {
        v.clamp(0.0, 1.0)
    }
}

/// Row-major integer class map; 0 is background.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct LabelMask {
    width: usize,
    height: usize,
    labels: Vec<u16>,
}

impl LabelMask {
    pub fn new(width: usize, height: usize) -> Self {
        LabelMask { width, height, labels: vec![0; width * height] }
    }

    pub fn from_vec(width: usize, height: usize, labels: Vec<u16>) -> Result<Self> {
        if labels.len() != width * height {
            return Err(ImageError::Dimensions {
                expected: format!("{} labels", width * height),
                got: format!("{} labels", labels.len()),
            });
        }
        Ok(LabelMask { width, height, labels })
    }

    /// Builds a binary mask from a predicate over pixel coordinates.
    pub fn from_fn(width: usize, height: usize, f: impl Fn(usize, usize) -> bool) -> Self {
        let mut labels = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                labels.push(u16::from(f(x, y)));
            }
        }
        LabelMask { width, height, labels }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn labels(&self) -> &[u16] {
        &self.labels
    }

    pub fn labels_mut(&mut self) -> &mut [u16] {
        &mut self.labels
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> u16 {
        self.labels[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: u16) {
        self.labels[y * self.width + x] = v;
    }

    pub fn count(&self, label: u16) -> usize {
        self.labels.iter().filter(|&&l| l == label).count()
    }

    pub fn count_nonzero(&self) -> usize {
        self.labels.iter().filter(|&&l| l != 0).count()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.iter().all(|&l| l == 0)
    }

    pub fn check_dims(&self, width: usize, height: usize) -> Result<()> {
        if self.width == width && self.height == height {
            Ok(())
        } else {
            Err(ImageError::Dimensions {
                expected: format!("{width}x{height}"),
                got: format!("{}x{}", self.width, self.height),
            })
        }
    }

    /// Nearest-neighbour resize.
    pub fn resize_nearest(&self, width: usize, height: usize) -> LabelMask {
        let mut out = LabelMask::new(width, height);
        for y in 0..height {
            let sy = ((y as f64 + 0.5) * self.height as f64 / height as f64) as usize;
            for x in 0..width {
                let sx = ((x as f64 + 0.5) * self.width as f64 / width as f64) as usize;
                out.set(x, y, self.get(sx.min(self.width - 1), sy.min(self.height - 1)));
            }
        }
        out
    }

    /// Pixel-wise union of two binary masks (nonzero wins, result in {0,1}).
    pub fn union(&self, other: &LabelMask) -> LabelMask {
        assert_eq!(self.dims(), other.dims());
        let labels =
            self.labels.iter().zip(&other.labels).map(|(&a, &b)| u16::from(a != 0 || b != 0)).collect();
        LabelMask { width: self.width, height: self.height, labels }
    }

    /// Binary dilation with a disk of the given radius.
    pub fn dilate(&self, radius: usize) -> LabelMask {
        let r = radius as isize;
        let mut out = LabelMask::new(self.width, self.height);
        for y in 0..self.height as isize {
            for x in 0..self.width as isize {
                if self.get(x as usize, y as usize) == 0 {
                    continue;
                }
                for dy in -r..=r {
                    for dx in -r..=r {
                        if dx * dx + dy * dy > r * r {
                            continue;
                        }
                        let (nx, ny) = (x + dx, y + dy);
                        if nx >= 0 && ny >= 0 && (nx as usize) < self.width && (ny as usize) < self.height {
                            out.set(nx as usize, ny as usize, 1);
                        }
                    }
                }
            }
        }
        out
    }
}
