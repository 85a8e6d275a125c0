// Negated float comparisons reject NaN on purpose.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod combiner;
pub mod denoise;
pub mod diffusion;
pub mod error;
pub mod experiment;
pub mod graph;
pub mod linalg;
pub mod matrix_io;
pub mod network;
pub mod projector;

pub use error::{Error, Result};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    struct Introduction;
    #[doc = include_str!("../../../book/src/projectors.md")]
    struct Projectors;
    #[doc = include_str!("../../../book/src/combiners.md")]
    struct Combiners;
    #[doc = include_str!("../../../book/src/denoising.md")]
    struct Denoising;
    #[doc = include_str!("../../../book/src/diffusion.md")]
    struct Diffusion;
    #[doc = include_str!("../../../book/src/experiments.md")]
    struct Experiments;
}
