//! Brute-force reference for the CTC likelihood.
//!
//! Sums the probability of every framewise path whose collapse equals the
//! target. Exponential in `T`; only meant for checking the forward recursion
//! on tiny inputs.

use crate::{Error, Frames, Result};

use super::{collapse_path, LabelSequence};

pub const MAX_FRAMES: usize = 10;
pub const MAX_LABELS: usize = 6;

/// Exact probability (not log) of `seq` under `posteriors` by enumeration.
pub fn enumerate_paths_oracle(
    posteriors: &Frames,
    seq: &LabelSequence,
    blank: usize,
) -> Result<f64> {
    let frames = posteriors.len();
    let labels = posteriors.dim();
    if frames > MAX_FRAMES || labels > MAX_LABELS {
        return Err(Error::OracleTooLarge(format!(
            "T={frames} (max {MAX_FRAMES}), |A|={labels} (max {MAX_LABELS})"
        )));
    }
    let mut path = vec![0usize; frames];
    let mut total = 0.0;
    loop {
        if collapse_path(&path, blank).indices() == seq.indices() {
            total += path
                .iter()
                .enumerate()
                .map(|(t, &k)| posteriors.frame(t)[k])
                .product::<f64>();
        }
        // odometer increment
        let mut pos = 0;
        loop {
            if pos == frames {
                return Ok(total);
            }
            path[pos] += 1;
            if path[pos] < labels {
                break;
            }
            path[pos] = 0;
            pos += 1;
        }
    }
}
