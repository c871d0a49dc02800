//! RGB images, PPM I/O, window cropping and the synthetic person-box generator.

mod image;
pub mod manifest;
mod ppm;
mod resize;
mod synth;

pub use image::Image;
pub use manifest::{load_dataset, write_dataset, ManifestEntry, Sample, Split};
pub use ppm::{decode_ppm, encode_ppm};
pub use resize::crop_resize;
pub use synth::{
    background_fraction, generate_synthetic_dataset, generate_with_masks, GenSpec, PersonMask,
};

/// Canonical resolution every crop is resized to before feature extraction.
pub const CANONICAL_WIDTH: usize = 64;
pub const CANONICAL_HEIGHT: usize = 128;

/// Smallest side accepted for a dataset image.
pub const MIN_SIDE: usize = 8;
