//! Coded-two-bucket acquisition simulation and low-resolution video recovery.
//!
//! The crate models a per-pixel coded-exposure sensor: a binary `N×N×T` code
//! is tiled over the frame, each sub-exposure is gated by the code, and the
//! sensor reports either the coded image, the fully exposed image, or both
//! complementary buckets. From those observations a `(H/N)×(W/N)×T` video is
//! recovered by per-tile linear inversion (coded image) or by rearranging each
//! tile into a temporal vector (fully exposed image).
//!
//! All intensities are normalized to `[0, 1]`. See [`forward`] for the
//! normalization convention of the observations.

pub mod code;
pub mod error;
pub mod forward;
pub mod frames;
pub mod lowres;
pub mod metrics;
pub mod video;

pub use code::{ExposureCode, TiledCode};
pub use error::{ImagingError, Result};
pub use forward::{
    buckets_to_blurred, encode_blurred, encode_coded, encode_two_bucket, BucketPair, CodedImage,
    FullyExposedImage,
};
pub use lowres::{
    build_tile_system, inverse_pixel_shuffle, pixel_shuffle_image, recover_lowres_coded,
    TileSystem,
};
pub use video::{LowResVideo, Plane, VideoCube};
