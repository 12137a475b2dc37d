//! Synthetic phantom corpus and the data-construction procedures used to
//! build training pairs: degradations, super-resolution, completion masks,
//! augmentation, CLAHE, exemplar and RPE-aligned samples.

pub mod augment;
pub mod builders;
pub mod clahe;
pub mod completion;
pub mod degrade;
mod error;
pub mod phantom;

pub use augment::{augment, perturb_lesions, AugmentationSpec};
pub use builders::{build_exemplar, build_rpe_sample, ExemplarSample, PatientRef, RpeInputs};
pub use clahe::{clahe, ClaheParams};
pub use completion::{downsample_pair, make_inpaint, make_outpaint, SR_FACTORS};
pub use degrade::{degrade, DegradationKind, DegradationSpec};
pub use error::{ForgeError, Result};
pub use phantom::{
    gen_followup, gen_phantom, render, FollowupCategory, Geometry, PhantomKind, PhantomSample, PhantomSpec,
};

/// Per-record seed derived from a master seed (splitmix64 finalizer).
pub fn derive_seed(master: u64, index: u64) -> u64 {
    let mut z = master ^ index.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(0x6A09_E667_F3BC_C909);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
