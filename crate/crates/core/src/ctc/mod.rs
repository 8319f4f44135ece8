//! Connectionist temporal classification: label alphabet, blank expansion,
//! log-domain forward-backward, and path collapse.
//!
//! Everything here runs in `f64`; the same routines serve as the reference
//! layer for the network and decoder tests.

mod alphabet;
pub mod oracle;

pub use alphabet::{Alphabet, BLANK_CHAR, BOUNDARY_CHAR};
pub use oracle::enumerate_paths_oracle;

use crate::{Error, Frames, Result};

/// A transcription as label indices. Never contains the blank.
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash)]
pub struct LabelSequence {
    pub(crate) indices: Vec<usize>,
}

impl LabelSequence {
    pub fn new(indices: Vec<usize>, blank: usize) -> Result<Self> {
        if indices.contains(&blank) {
            return Err(Error::InvalidLabels(
                "label sequence contains the blank".into(),
            ));
        }
        Ok(LabelSequence { indices })
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    /// Smallest number of frames that can emit this sequence: one per label
    /// plus a blank between each pair of equal neighbours.
    pub fn min_frames(&self) -> usize {
        let repeats = self.indices.windows(2).filter(|w| w[0] == w[1]).count();
        self.indices.len() + repeats
    }

    pub(crate) fn push(&mut self, label: usize) {
        self.indices.push(label);
    }
}

/// Log-domain addition, `ln(e^a + e^b)`, with `-inf` as the zero element.
#[inline]
pub fn log_add(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let (hi, lo) = if a > b { (a, b) } else { (b, a) };
    hi + (lo - hi).exp().ln_1p()
}

/// Interleaves blanks: `(-, l1, -, l2, ..., lL, -)`, `2L + 1` states.
pub fn expand_with_blanks(seq: &LabelSequence, blank: usize) -> Vec<usize> {
    let mut states = Vec::with_capacity(2 * seq.len() + 1);
    states.push(blank);
    for &label in seq.indices() {
        states.push(label);
        states.push(blank);
    }
    states
}

/// Whether state `s` of an expanded sequence may be entered from `s - 2`.
#[inline]
fn can_skip(states: &[usize], s: usize, blank: usize) -> bool {
    s >= 2 && states[s] != blank && states[s] != states[s - 2]
}

/// Log-domain forward variables, `alpha[t][s]` flattened as `t * S + s`.
/// `log_probs` holds per-frame log posteriors.
fn forward(log_probs: &Frames, states: &[usize], blank: usize) -> Vec<f64> {
    let frames = log_probs.len();
    let n = states.len();
    let mut alpha = vec![f64::NEG_INFINITY; frames * n];
    if frames == 0 {
        return alpha;
    }
    let y0 = log_probs.frame(0);
    alpha[0] = y0[states[0]];
    if n > 1 {
        alpha[1] = y0[states[1]];
    }
    for t in 1..frames {
        let y = log_probs.frame(t);
        let (prev, cur) = alpha.split_at_mut(t * n);
        let prev = &prev[(t - 1) * n..];
        for s in 0..n {
            let mut acc = prev[s];
            if s >= 1 {
                acc = log_add(acc, prev[s - 1]);
            }
            if can_skip(states, s, blank) {
                acc = log_add(acc, prev[s - 2]);
            }
            cur[s] = acc + y[states[s]];
        }
    }
    alpha
}

/// Log-domain backward variables. `beta[t][s]` is the log probability of
/// frames `t+1..T` given state `s` at `t` (the frame-`t` output excluded).
fn backward(log_probs: &Frames, states: &[usize], blank: usize) -> Vec<f64> {
    let frames = log_probs.len();
    let n = states.len();
    let mut beta = vec![f64::NEG_INFINITY; frames * n];
    if frames == 0 {
        return beta;
    }
    let last = (frames - 1) * n;
    beta[last + n - 1] = 0.0;
    if n > 1 {
        beta[last + n - 2] = 0.0;
    }
    for t in (0..frames - 1).rev() {
        let y = log_probs.frame(t + 1);
        let (cur, next) = beta.split_at_mut((t + 1) * n);
        let cur = &mut cur[t * n..];
        for s in 0..n {
            let mut acc = next[s] + y[states[s]];
            if s + 1 < n {
                acc = log_add(acc, next[s + 1] + y[states[s + 1]]);
            }
            if s + 2 < n && can_skip(states, s + 2, blank) {
                acc = log_add(acc, next[s + 2] + y[states[s + 2]]);
            }
            cur[s] = acc;
        }
    }
    beta
}

fn log_of(posteriors: &Frames) -> Frames {
    let mut out = posteriors.clone();
    for t in 0..out.len() {
        for v in out.frame_mut(t) {
            *v = v.ln();
        }
    }
    out
}

/// `ln p(seq | posteriors)` summed over every alignment. Returns `-inf` when
/// the sequence cannot fit in the available frames.
pub fn ctc_log_likelihood(posteriors: &Frames, seq: &LabelSequence, blank: usize) -> f64 {
    let frames = posteriors.len();
    if frames == 0 || frames < seq.min_frames() {
        return f64::NEG_INFINITY;
    }
    let states = expand_with_blanks(seq, blank);
    let log_probs = log_of(posteriors);
    let alpha = forward(&log_probs, &states, blank);
    let n = states.len();
    let last = &alpha[(frames - 1) * n..];
    if n > 1 {
        log_add(last[n - 1], last[n - 2])
    } else {
        last[0]
    }
}

/// Row-wise log-softmax of a logit matrix.
pub fn log_softmax(logits: &Frames) -> Frames {
    let mut out = logits.clone();
    for t in 0..out.len() {
        let row = out.frame_mut(t);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        for v in row.iter_mut() {
            *v -= lse;
        }
    }
    out
}

/// CTC loss (`-ln p`) and its gradient with respect to pre-softmax logits.
///
/// `grad[t][k] = y[t][k] - occupancy[t][k] / Z`, where the occupancy is the
/// forward-backward mass of all states carrying label `k` at frame `t`.
pub fn ctc_grad(logits: &Frames, seq: &LabelSequence, blank: usize) -> Result<(f64, Frames)> {
    let frames = logits.len();
    let min_frames = seq.min_frames().max(1);
    if frames < min_frames {
        return Err(Error::InfeasibleAlignment { frames, min_frames });
    }
    let states = expand_with_blanks(seq, blank);
    let n = states.len();
    let log_probs = log_softmax(logits);
    let alpha = forward(&log_probs, &states, blank);
    let beta = backward(&log_probs, &states, blank);
    let last = &alpha[(frames - 1) * n..];
    let log_z = if n > 1 {
        log_add(last[n - 1], last[n - 2])
    } else {
        last[0]
    };
    if !log_z.is_finite() {
        return Err(Error::InfeasibleAlignment { frames, min_frames });
    }

    let dim = logits.dim();
    let mut grad = Frames::zeros(dim, frames);
    let mut occupancy = vec![f64::NEG_INFINITY; dim];
    for t in 0..frames {
        occupancy.fill(f64::NEG_INFINITY);
        for s in 0..n {
            let k = states[s];
            occupancy[k] = log_add(occupancy[k], alpha[t * n + s] + beta[t * n + s]);
        }
        let lp = log_probs.frame(t);
        let g = grad.frame_mut(t);
        for k in 0..dim {
            g[k] = lp[k].exp() - (occupancy[k] - log_z).exp();
        }
    }
    Ok((-log_z, grad))
}

/// Merges adjacent repeats, then drops blanks.
pub fn collapse_path(framewise: &[usize], blank: usize) -> LabelSequence {
    let mut out = LabelSequence::default();
    let mut prev = None;
    for &label in framewise {
        if Some(label) != prev && label != blank {
            out.push(label);
        }
        prev = Some(label);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn seq(indices: &[usize], blank: usize) -> LabelSequence {
        LabelSequence::new(indices.to_vec(), blank).unwrap()
    }

    #[test]
    fn standard_alphabet_layout() {
        let a = Alphabet::standard();
        assert_eq!(a.len(), 30);
        assert_eq!(a.symbol(a.blank()), '-');
        assert_eq!(a.symbol(a.boundary()), '_');
        assert_ne!(a.blank(), a.boundary());
        assert_eq!(a.index_of('\''), Some(26));
        assert_eq!(a.index_of('.'), Some(27));
    }

    #[test]
    fn encode_maps_spaces_to_boundary_and_rejects_blank() {
        let a = Alphabet::standard();
        let s = a.encode("hi you").unwrap();
        assert_eq!(a.decode(&s), "hi_you");
        assert!(a.encode("a-b").is_err());
        assert!(a.encode("é").is_err());
    }

    #[test]
    fn label_sequence_rejects_blank() {
        assert!(LabelSequence::new(vec![0, 2], 2).is_err());
    }

    #[test]
    fn expand_examples() {
        let a = Alphabet::standard();
        let b = a.blank();
        let cat = a.encode("cat").unwrap();
        let expanded = expand_with_blanks(&cat, b);
        assert_eq!(expanded.len(), 7);
        let text: String = expanded.iter().map(|&i| a.symbol(i)).collect();
        assert_eq!(text, "-c-a-t-");
        let aa = a.encode("aa").unwrap();
        let text: String = expand_with_blanks(&aa, b)
            .iter()
            .map(|&i| a.symbol(i))
            .collect();
        assert_eq!(text, "-a-a-");
        assert_eq!(expand_with_blanks(&LabelSequence::default(), b), vec![b]);
    }

    #[test]
    fn one_hot_single_frame_is_certain() {
        // alphabet {a, b, -}
        let post = Frames::from_rows(3, &[[1.0, 0.0, 0.0]]).unwrap();
        assert_eq!(ctc_log_likelihood(&post, &seq(&[0], 2), 2), 0.0);
    }

    #[test]
    fn uniform_two_frames_gives_one_third() {
        // valid paths for "a" in two frames: aa, a-, -a
        let u = 1.0 / 3.0;
        let post = Frames::from_rows(3, &[[u, u, u], [u, u, u]]).unwrap();
        let ll = ctc_log_likelihood(&post, &seq(&[0], 2), 2);
        assert!((ll - (1.0f64 / 3.0).ln()).abs() < 1e-12);
    }

    #[test]
    fn repeated_label_needs_separating_blank() {
        let u = 1.0 / 3.0;
        let post = Frames::from_rows(3, &[[u, u, u], [u, u, u]]).unwrap();
        let s = seq(&[0, 0], 2);
        assert_eq!(s.min_frames(), 3);
        assert_eq!(ctc_log_likelihood(&post, &s, 2), f64::NEG_INFINITY);
        assert!(matches!(
            ctc_grad(&Frames::zeros(3, 2), &s, 2),
            Err(Error::InfeasibleAlignment {
                frames: 2,
                min_frames: 3
            })
        ));
    }

    #[test]
    fn empty_sequence_is_all_blanks() {
        let post = Frames::from_rows(3, &[[0.2, 0.3, 0.5], [0.1, 0.1, 0.8]]).unwrap();
        let ll = ctc_log_likelihood(&post, &LabelSequence::default(), 2);
        assert!((ll - (0.5f64 * 0.8).ln()).abs() < 1e-12);
    }

    #[test]
    fn confident_logits_give_vanishing_loss_and_gradient() {
        let mut logits = Frames::zeros(30, 1);
        logits.frame_mut(0)[0] = 60.0;
        let (loss, grad) = ctc_grad(&logits, &seq(&[0], 29), 29).unwrap();
        assert!(loss < 1e-20);
        assert!(grad.frame(0).iter().all(|g| g.abs() < 1e-20));
    }

    #[test]
    fn loss_matches_negative_log_likelihood() {
        let logits = Frames::from_rows(
            4,
            &[
                [0.3, -1.2, 0.5, 2.0],
                [1.1, 0.0, -0.4, 0.2],
                [-0.7, 0.9, 0.1, 0.3],
                [0.2, 0.2, 1.5, -1.0],
            ],
        )
        .unwrap();
        let s = seq(&[0, 1, 1], 3);
        let (loss, _) = ctc_grad(&logits, &s, 3).unwrap();
        let mut post = log_softmax(&logits);
        for t in 0..post.len() {
            for v in post.frame_mut(t) {
                *v = v.exp();
            }
        }
        let ll = ctc_log_likelihood(&post, &s, 3);
        assert!((loss + ll).abs() < 1e-10);
    }

    #[test]
    fn gradient_rows_sum_to_zero() {
        let logits =
            Frames::from_rows(3, &[[0.1, 0.4, -0.3], [0.5, -0.2, 0.0], [1.0, 0.0, 0.3]]).unwrap();
        let (_, grad) = ctc_grad(&logits, &seq(&[0, 1], 2), 2).unwrap();
        for row in grad.iter() {
            assert!(row.iter().sum::<f64>().abs() < 1e-12);
        }
    }

    #[test]
    fn collapse_examples() {
        // a=0, b=1, -=2
        assert_eq!(collapse_path(&[2, 2, 0, 0, 2, 1, 2], 2).indices(), &[0, 1]);
        assert_eq!(collapse_path(&[0, 2, 0], 2).indices(), &[0, 0]);
        assert!(collapse_path(&[2, 2, 2, 2], 2).is_empty());
    }

    #[test]
    fn log_add_handles_neg_infinity() {
        assert_eq!(
            log_add(f64::NEG_INFINITY, f64::NEG_INFINITY),
            f64::NEG_INFINITY
        );
        assert_eq!(log_add(f64::NEG_INFINITY, -2.0), -2.0);
        assert!((log_add(0.0, 0.0) - 2f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn oracle_guards_and_one_hot_path() {
        let big = Frames::zeros(3, 11);
        assert!(enumerate_paths_oracle(&big, &LabelSequence::default(), 2).is_err());
        let wide = Frames::zeros(7, 2);
        assert!(enumerate_paths_oracle(&wide, &LabelSequence::default(), 6).is_err());

        let post =
            Frames::from_rows(3, &[[0.7, 0.3, 0.0], [0.0, 0.0, 1.0], [0.0, 0.6, 0.4]]).unwrap();
        let p = enumerate_paths_oracle(&post, &seq(&[0, 1], 2), 2).unwrap();
        // the only paths are a-b (0.7*1*0.6) and b is impossible at t0 for "ab"
        assert!((p - 0.7 * 0.6).abs() < 1e-15);
        assert_eq!(
            enumerate_paths_oracle(&post, &seq(&[0, 0, 0], 2), 2).unwrap(),
            0.0
        );
    }
}
