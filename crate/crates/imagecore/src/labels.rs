use std::collections::BTreeSet;

use crate::error::{ImageError, Result};
use crate::image::LabelMask;

/// Minimum foreground pixel count for a target to be kept.
pub const TINY_TARGET_THRESHOLD: usize = 50;

/// Splits a multi-class mask into one binary mask per nonzero class, in id order.
pub fn standardize_labels(mask: &LabelMask) -> Vec<(u16, LabelMask)> {
    let classes: BTreeSet<u16> = mask.labels().iter().copied().filter(|&l| l != 0).collect();
    classes
        .into_iter()
        .map(|class| {
            let labels = mask.labels().iter().map(|&l| u16::from(l == class)).collect();
            let binary = LabelMask::from_vec(mask.width(), mask.height(), labels)
                .expect("same dimensions as the source mask");
            (class, binary)
        })
        .collect()
}

/// Keeps a binary target only if its foreground count reaches `threshold`.
pub fn tiny_target_filter(binary: &LabelMask, threshold: usize) -> Result<bool> {
    if let Some(&bad) = binary.labels().iter().find(|&&l| l > 1) {
        return Err(ImageError::NotBinary(bad));
    }
    Ok(binary.count(1) >= threshold)
}
