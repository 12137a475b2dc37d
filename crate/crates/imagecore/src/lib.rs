//! Core raster types shared by every stage of the pipeline.
//!
//! [`Image`] holds channel values in `[0, 1]`, [`LabelMask`] holds integer
//! class ids, and [`Palette`] binds class ids to display colors so masks can be
//! rendered to images and parsed back. The [`manifest`] module carries the
//! dataset records that drive forging, training and evaluation.

mod error;
mod image;
pub mod io;
mod labels;
pub mod manifest;
mod palette;
mod volume;

pub use crate::error::{ImageError, Result};
pub use crate::image::{Image, LabelMask};
pub use crate::labels::{standardize_labels, tiny_target_filter, TINY_TARGET_THRESHOLD};
pub use crate::manifest::{patient_split, DatasetManifest, SampleRecord, SplitRatios, Split, TaskKind};
pub use crate::palette::{encode_color_mask, parse_color_mask, Palette, PaletteEntry, DEFAULT_PARSE_TOL};
pub use crate::volume::{slice_volume, stack_slices, Volume};
