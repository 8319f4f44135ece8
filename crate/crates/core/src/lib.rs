//! Streaming keyword spotting with a character-level CTC front end.
//!
//! The pipeline is split the same way at every layer of the crate:
//!
//! * [`features`] turns 16 kHz audio into 123-dimensional normalized frames.
//! * [`lstm`] is a deep unidirectional peephole LSTM with a softmax output
//!   over the 30-label [`ctc::Alphabet`], trained on concatenated utterance
//!   streams with truncated BPTT and per-segment CTC.
//! * [`decoder`] converts the per-frame label posteriors into keyword scores
//!   with keyword-only or keyword-filler decoding networks, and picks
//!   detection events out of the score stream.
//! * [`eval`] matches detections against ground truth and sweeps thresholds.
//! * [`synth`] generates deterministic synthetic corpora for desk-scale runs.
//! * [`io`] holds the on-disk formats (stream files, keyword lists, CSVs)
//!   and [`spot`] wires a model and decoders into a constant-memory spotter.

pub mod ctc;
pub mod decoder;
pub mod error;
pub mod eval;
pub mod features;
pub mod frames;
pub mod io;
pub mod lstm;
pub mod spot;
pub mod synth;

pub use error::{Error, Result};
pub use frames::Frames;

/// Frame period of every stream handled by the crate, in milliseconds.
pub const FRAME_PERIOD_MS: u32 = 10;
