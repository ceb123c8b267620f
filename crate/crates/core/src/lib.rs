//! Monotonic multihead attention with mutually-constrained heads.
//!
//! The crate is organised around the expected-alignment calculus:
//!
//! * [`align`] computes the expected alignment `α` of a monotonic attention
//!   head, the constrained expectations `γ̂`/`δ̂`, chunkwise attention and
//!   expected contexts.
//! * [`grad`] holds hand-derived reverse-mode adjoints for all of the above
//!   and a central-difference gradient checker.
//! * [`oracle`] contains brute-force reference implementations used by the
//!   test suite and the `oracle-check` command.
//! * [`decode`] implements hard head-synchronous decoding.
//! * [`metrics`] measures relative latency and head spread.
//! * [`toy`] trains a tiny encoder-decoder on a synthetic monotonic task.
//!
//! The `book/` directory at the repository root walks through the same
//! material in narrative form; its code listings are compiled and run as
//! doc-tests of this crate.

pub mod align;
pub mod checks;
pub mod decode;
mod error;
pub mod grad;
pub mod io;
mod matrix;
pub mod metrics;
pub mod oracle;
pub mod plot;
pub mod toy;

pub use error::{Error, Result};
pub use matrix::Matrix;

/// Formats a value with 17 significant digits, enough to round-trip `f64`.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/expected-alignment.md")]
    mod expected_alignment {}
    #[doc = include_str!("../../../book/src/constrained-alignment.md")]
    mod constrained_alignment {}
    #[doc = include_str!("../../../book/src/chunk-attention.md")]
    mod chunk_attention {}
    #[doc = include_str!("../../../book/src/gradients.md")]
    mod gradients {}
    #[doc = include_str!("../../../book/src/head-synchronous-decoding.md")]
    mod head_synchronous_decoding {}
    #[doc = include_str!("../../../book/src/relative-latency.md")]
    mod relative_latency {}
    #[doc = include_str!("../../../book/src/toy-task.md")]
    mod toy_task {}
}
