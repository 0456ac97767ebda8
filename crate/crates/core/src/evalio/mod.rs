//! Metrics, image and manifest I/O, and experiment splits.

pub mod evaluate;
pub mod manifest;
pub mod metrics;
pub mod pfm;
pub mod split;

pub use manifest::{DatasetManifest, ManifestEntry};
pub use metrics::{psnr, ssim, SsimParams};
pub use pfm::{read_pfm, write_pfm};
pub use split::{make_split, PitchRule, Split, SplitSpec};
