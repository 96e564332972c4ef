//! Audio-centric audiovisual instance segmentation at desk scale.
//!
//! The crate is `no_std` (it needs `alloc`) and contains every numerical piece of the
//! pipeline: a small define-by-run autodiff tape, the additive and audio-centric query
//! fusion variants, the frame-level localizer, the sound-aware ordinal counting loss,
//! Hungarian matching with the set-prediction objective, the windowed video tracker,
//! the evaluation metrics (trajectory mAP, HOTA, FSLA) and a seeded synthetic corpus
//! generator. File formats, checkpoints and the command line live in the `acvis` crate.
//!
//! Tensors are 64-bit and row-major. Most ops work on the 2-D view of a tensor where the
//! last axis is the column axis and all leading axes are flattened into rows.
#![no_std]
#![warn(unreachable_pub)]

extern crate alloc;

#[cfg(test)]
extern crate std;

pub mod fusion;
pub mod gradcheck;
pub mod localizer;
pub mod mask;
pub mod matching;
pub mod math;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod optim;
pub mod params;
#[cfg(test)]
mod reference;
pub mod saoc;
pub mod synth;
pub mod tape;
pub mod tensor;
pub mod tracker;

pub use model::{Model, ModelConfig, ModelError};
pub use params::{Binding, ParamId, ParamStore};
pub use tape::{Tape, Var};
pub use tensor::{Tensor, TensorError};
