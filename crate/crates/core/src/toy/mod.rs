//! Desk-scale nucleus segmentation pipeline used as the study workload.
//!
//! The stage is a chain of eleven pure tasks over a small synthetic image:
//!
//! | task          | parameters    | cost |
//! |---------------|---------------|------|
//! | normalize     |               | 4    |
//! | background    | B, G, R       | 2    |
//! | rbc           | T1, T2        | 2    |
//! | candidate     | G1, G2        | 3    |
//! | size          | minS, maxS    | 1    |
//! | fill_holes    | FH            | 2    |
//! | morph_recon   | RC            | 4    |
//! | prewatershed  | minSPL        | 1    |
//! | watershed     | WConn         | 5    |
//! | final         | minSS, maxSS  | 1    |
//! | dice          |               | 0.5  |
//!
//! Normalization passes the image through unchanged. Every intermediate
//! object carries the RGB image followed by little-endian `u32` labels
//! (7 bytes per pixel); `dice` emits one little-endian `f64`, the pixel Dice
//! against the segmentation at default parameters.

pub mod image;
pub mod ops;
pub mod pipeline;

use thiserror::Error;

pub use self::image::{synth_image, ImageGrid, LabelMask};
pub use ops::{dice, Connectivity};
pub use pipeline::{
    decode_score, full_space, reduced_space, toy_template, SyntheticExecutor, ToyPipeline,
};

#[derive(Debug, Error)]
pub enum ToyError {
    #[error("image: {0}")]
    Image(String),
    #[error("image and mask dimensions differ")]
    Shape,
    #[error(transparent)]
    Codec(#[from] ::image::ImageError),
    #[error("task `{task}` got a {got}-byte input, expected {expected}")]
    Payload {
        task: String,
        got: usize,
        expected: usize,
    },
    #[error("parameter: {0}")]
    Parameter(String),
    #[error("unknown task `{0}`")]
    UnknownTask(String),
}
