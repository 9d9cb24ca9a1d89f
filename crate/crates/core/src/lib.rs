//! Object-state-change label pipeline over precomputed masks and scores.
//!
//! Region proposals arrive as run-length encoded masks with vision-language
//! similarity scores. The crate thresholds them into state pseudo-labels,
//! repairs each track's label sequence with state-change dynamics, scores the
//! result against annotated masks, and derives activity-progress curves and
//! dataset statistics. A seeded synthetic generator provides clips with known
//! answers for testing the whole chain.

pub mod analytics;
pub mod dynamics;
pub mod error;
pub mod io;
pub mod labeling;
pub mod mask;
pub mod metrics;
pub mod model;
pub mod pipeline;
pub mod progress;
pub mod synth;

pub use error::{Error, Result};
pub use mask::PixelMask;
pub use model::{ClipLabels, ClipRecord, CorpusLabels, LabelSequence, StateLabel};
