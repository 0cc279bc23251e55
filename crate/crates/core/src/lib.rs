//! Error-feedback distributed optimization with smoothness-weighted
//! aggregation.
//!
//! The crate simulates `n` clients minimizing `f(x) = (1/n) Σ fᵢ(x)` under
//! contractive uplink compression. See the `ef21` binary for the command line.

pub mod algorithms;
pub mod checks;
pub mod compressor;
pub mod datagen;
pub mod error;
pub mod harness;
pub mod linalg;
pub mod objective;
pub mod rng;
pub mod stepsize;
pub mod weighting;

pub use error::{Error, Result};

// The guide's snippets run as doctests, one module per chapter.
#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/compressors.md")]
    mod compressors {}
    #[doc = include_str!("../../../book/src/problems.md")]
    mod problems {}
    #[doc = include_str!("../../../book/src/weights.md")]
    mod weights {}
    #[doc = include_str!("../../../book/src/stepsizes.md")]
    mod stepsizes {}
    #[doc = include_str!("../../../book/src/running.md")]
    mod running {}
    #[doc = include_str!("../../../book/src/verification.md")]
    mod verification {}
}
