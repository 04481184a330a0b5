//! Simultaneous confidence bounds for the number of false rejections in
//! arbitrary, post hoc chosen sets of hypotheses, obtained from closed testing.
//!
//! The usual flow: build a [`HypothesisSet`], pick a [`TestSpec`], bind both
//! into a [`LocalTest`] at level `α` and ask [`bounds`] for a confidence set.

pub mod bounds;
pub mod closure;
pub mod error;
pub mod hypotheses;
pub mod localtests;
mod par;
pub mod permutation;
pub mod report;
pub mod shortcuts;
pub mod statfun;

pub use error::{Error, ErrorCategory, Result};
pub use hypotheses::{parse_hypotheses, HypothesisSet, IndexSet};
pub use localtests::{LocalTest, TestKind, TestSpec};

/// Whether the crate was built with the rayon-backed parallel engine.
pub const PARALLEL: bool = cfg!(feature = "parallel");
