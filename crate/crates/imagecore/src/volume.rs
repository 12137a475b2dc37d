use crate::error::{ImageError, Result};
use crate::image::Image;

/// A stack of equally sized 2D planes (e.g. an OCT cube).
#[derive(Debug, Clone, PartialEq)]
pub struct Volume {
    slices: Vec<Image>,
}

impl Volume {
    pub fn new(slices: Vec<Image>) -> Result<Self> {
        let first = slices.first().ok_or(ImageError::EmptyVolume)?;
        for s in &slices[1..] {
            first.check_same_shape(s)?;
        }
        Ok(Volume { slices })
    }

    pub fn width(&self) -> usize {
        self.slices[0].width()
    }

    pub fn height(&self) -> usize {
        self.slices[0].height()
    }

    pub fn depth(&self) -> usize {
        self.slices.len()
    }

    pub fn plane(&self, k: usize) -> &Image {
        &self.slices[k]
    }
}

/// Decomposes a volume into its in-plane slices, in depth order.
pub fn slice_volume(vol: &Volume) -> Result<Vec<Image>> {
    if vol.slices.is_empty() {
        return Err(ImageError::EmptyVolume);
    }
    Ok(vol.slices.clone())
}

/// Inverse of [`slice_volume`].
pub fn stack_slices(slices: Vec<Image>) -> Result<Volume> {
    Volume::new(slices)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn depth_one() {
        let plane = Image::filled(4, 4, 1, 0.25);
        let v = Volume::new(vec![plane.clone()]).unwrap();
        assert_eq!(slice_volume(&v).unwrap(), vec![plane]);
    }

    #[test]
    fn constant_planes_round_trip() {
        let planes: Vec<Image> = (0..3).map(|k| Image::filled(4, 4, 1, k as f32 / 3.0)).collect();
        let v = stack_slices(planes.clone()).unwrap();
        let s = slice_volume(&v).unwrap();
        for (k, img) in s.iter().enumerate() {
            assert!(img.data().iter().all(|&x| x == k as f32 / 3.0));
        }
        assert_eq!(stack_slices(s).unwrap(), v);
    }

    #[test]
    fn empty_and_mismatched() {
        assert!(matches!(Volume::new(vec![]), Err(ImageError::EmptyVolume)));
        assert!(Volume::new(vec![Image::new(4, 4, 1), Image::new(5, 4, 1)]).is_err());
    }
}
