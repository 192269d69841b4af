//! Same-location scoring for single-microphone recordings.
//!
//! Two audio segments captured by one microphone in one room are compared
//! through their WPE (weighted prediction error) dereverberation filters: the
//! magnitude ratio and the linear-phase delay between the two filter sets are
//! turned into same-vs-different log likelihood ratios, fused by a two-class
//! LDA, and used as the pairwise similarity of a clustering diarizer.
//!
//! ```text
//! audio ─► windows ─► STFT ─► WPE filters ─► pairwise scores ─► AHC ─► RTTM
//! ```
//!
//! An image-method room simulator ([`roomsim`]) produces reverberant scenes
//! with reference timelines so the whole chain can be exercised without a
//! speech corpus.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod audio;
pub mod cli;
pub mod diarizer;
pub mod error;
pub mod metrics;
pub mod pairscore;
pub mod roomsim;
pub mod spectral;
pub mod timeline;
pub mod wpe;

mod linalg;

pub use error::{Error, Result};
pub use num_complex::Complex64;
