//! Stream training with truncated BPTT.
//!
//! Utterances are drawn at random and concatenated into one endless stream,
//! with a word boundary inserted between transcriptions. The network runs
//! over a window of `unroll_length` frames starting from the carried state,
//! CTC loss and gradient are taken for every utterance segment lying fully
//! inside the window that has not been scored yet, and the weights are
//! updated. The window then slides by `update_period`, carrying the state
//! reached at that point.
//!
//! This is a segment-wise stand-in for online CTC: a segment longer than
//! `unroll_length` never fits and is skipped with a warning.

use std::collections::VecDeque;

use log::{info, warn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{NetworkConfig, NetworkParams, StreamState};
use crate::ctc::{ctc_grad, ctc_log_likelihood, LabelSequence};
use crate::{Error, Frames, Result};

/// A training pair.
#[derive(Clone, Debug, PartialEq)]
pub struct Utterance {
    pub features: Frames,
    pub labels: LabelSequence,
}

/// A labelled segment of a window, in window-local frame coordinates.
#[derive(Clone, Debug, PartialEq)]
pub struct SegmentRef {
    pub offset: usize,
    pub len: usize,
    pub labels: LabelSequence,
}

#[derive(Clone, Debug)]
pub struct TrainOptions {
    /// Number of windows to process.
    pub updates: usize,
    pub blank: usize,
    pub boundary: usize,
    /// Held-out utterances driving annealing and early stopping.
    pub validation: Vec<Utterance>,
    pub validate_every: usize,
    /// Stop after this many learning-rate halvings without improvement.
    pub max_halvings: usize,
    pub log_every: usize,
}

impl TrainOptions {
    pub fn new(updates: usize, blank: usize, boundary: usize) -> Self {
        TrainOptions {
            updates,
            blank,
            boundary,
            validation: Vec::new(),
            validate_every: 100,
            max_halvings: 4,
            log_every: 100,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct UpdateRecord {
    pub update: usize,
    pub segments: usize,
    pub frames: usize,
    /// Sum of per-segment CTC losses.
    pub loss_sum: f64,
    pub grad_norm: f64,
    pub learning_rate: f64,
}

impl UpdateRecord {
    pub fn loss_per_segment(&self) -> f64 {
        self.loss_sum / self.segments.max(1) as f64
    }

    pub fn loss_per_frame(&self) -> f64 {
        self.loss_sum / self.frames.max(1) as f64
    }
}

#[derive(Clone, Debug)]
pub struct TrainReport {
    pub params: NetworkParams,
    pub log: Vec<UpdateRecord>,
    /// `(update, mean validation loss per utterance)`
    pub validation: Vec<(usize, f64)>,
    pub skipped_segments: usize,
    pub final_learning_rate: f64,
    pub stopped_early: bool,
}

struct WindowResult {
    loss_sum: f64,
    segments: usize,
    frames: usize,
    skipped: usize,
    grad: NetworkParams,
    snapshot: Option<StreamState>,
}

fn run_window(
    params: &NetworkParams,
    frames: &Frames,
    state: &StreamState,
    segments: &[SegmentRef],
    blank: usize,
    snapshot_at: Option<usize>,
) -> Result<WindowResult> {
    let (trace, _, snapshot) = params.forward_trace(frames, state, snapshot_at);
    let mut dlogits = Frames::zeros(params.output_dim(), frames.len());
    let mut result = WindowResult {
        loss_sum: 0.0,
        segments: 0,
        frames: 0,
        skipped: 0,
        grad: NetworkParams {
            layers: params
                .layers
                .iter()
                .map(|l| super::LayerParams::zeros(l.input_dim(), l.hidden()))
                .collect(),
            out_weight: super::Matrix::zeros(params.out_weight.rows, params.out_weight.cols),
            out_bias: vec![0.0; params.output_dim()],
        },
        snapshot,
    };
    for seg in segments {
        if seg.offset + seg.len > frames.len() {
            return Err(Error::Config(format!(
                "segment [{}, {}) exceeds window of {} frames",
                seg.offset,
                seg.offset + seg.len,
                frames.len()
            )));
        }
        let logits = trace.logits.slice(seg.offset, seg.offset + seg.len);
        match ctc_grad(&logits, &seg.labels, blank) {
            Ok((loss, grad)) => {
                for t in 0..seg.len {
                    dlogits
                        .frame_mut(seg.offset + t)
                        .copy_from_slice(grad.frame(t));
                }
                result.loss_sum += loss;
                result.segments += 1;
                result.frames += seg.len;
            }
            Err(Error::InfeasibleAlignment { frames, min_frames }) => {
                warn!("skipping segment of {frames} frames: labels need {min_frames}");
                result.skipped += 1;
            }
            Err(e) => return Err(e),
        }
    }
    params.backward_trace(&trace, &dlogits, &mut result.grad);
    Ok(result)
}

/// Summed CTC loss and parameter gradient for one window that starts from
/// `state` and contains `segments`.
pub fn window_gradient(
    params: &NetworkParams,
    frames: &Frames,
    state: &StreamState,
    segments: &[SegmentRef],
    blank: usize,
) -> Result<(f64, NetworkParams)> {
    let r = run_window(params, frames, state, segments, blank, None)?;
    Ok((r.loss_sum, r.grad))
}

/// Loss and gradient of a single sequence from the zero state, with BPTT
/// over the full sequence.
pub fn full_sequence_gradient(
    params: &NetworkParams,
    frames: &Frames,
    labels: &LabelSequence,
    blank: usize,
) -> Result<(f64, NetworkParams)> {
    let (trace, _, _) = params.forward_trace(frames, &params.initial_state(), None);
    let (loss, dlogits) = ctc_grad(&trace.logits, labels, blank)?;
    let mut grad = params.clone();
    grad.scale(0.0);
    params.backward_trace(&trace, &dlogits, &mut grad);
    Ok((loss, grad))
}

struct PendingSegment {
    start: usize,
    end: usize,
    labels: LabelSequence,
}

/// Endless stream of randomly concatenated utterances.
struct StreamCursor<'a> {
    corpus: &'a [Utterance],
    rng: ChaCha8Rng,
    boundary: usize,
    buffer: Frames,
    // global index of buffer frame 0
    base: usize,
    segments: VecDeque<PendingSegment>,
}

impl<'a> StreamCursor<'a> {
    fn new(corpus: &'a [Utterance], seed: u64, boundary: usize) -> Self {
        StreamCursor {
            corpus,
            rng: ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_57ea),
            boundary,
            buffer: Frames::new(corpus[0].features.dim()),
            base: 0,
            segments: VecDeque::new(),
        }
    }

    fn end(&self) -> usize {
        self.base + self.buffer.len()
    }

    fn ensure(&mut self, upto: usize) -> Result<()> {
        while self.end() < upto {
            let utt = &self.corpus[self.rng.random_range(0..self.corpus.len())];
            let start = self.end();
            self.buffer.extend(&utt.features)?;
            let labels = join_labels(start > 0, &utt.labels, self.boundary);
            self.segments.push_back(PendingSegment {
                start,
                end: self.end(),
                labels,
            });
        }
        Ok(())
    }

    fn window(&self, start: usize, len: usize) -> Frames {
        self.buffer
            .slice(start - self.base, start - self.base + len)
    }

    /// Pops the segments fully inside `[start, start + len)`; returns them
    /// and the number of older segments that never fit a window.
    fn take_contained(&mut self, start: usize, len: usize) -> (Vec<SegmentRef>, usize) {
        let mut skipped = 0;
        while self.segments.front().is_some_and(|s| s.start < start) {
            let s = self.segments.pop_front().expect("front");
            warn!(
                "segment of {} frames does not fit the unroll window; skipped",
                s.end - s.start
            );
            skipped += 1;
        }
        let mut out = Vec::new();
        while self.segments.front().is_some_and(|s| s.end <= start + len) {
            let s = self.segments.pop_front().expect("front");
            out.push(SegmentRef {
                offset: s.start - start,
                len: s.end - s.start,
                labels: s.labels,
            });
        }
        (out, skipped)
    }

    fn discard_before(&mut self, start: usize) {
        let drop = start - self.base;
        if drop > 4096 {
            self.buffer = self.buffer.slice(drop, self.buffer.len());
            self.base = start;
        }
    }
}

/// Label sequence of an utterance placed in a stream: a boundary is
/// inserted in front unless it is the first or already starts with one.
fn join_labels(after_other: bool, labels: &LabelSequence, boundary: usize) -> LabelSequence {
    if after_other && labels.indices().first() != Some(&boundary) {
        let mut joined = Vec::with_capacity(labels.len() + 1);
        joined.push(boundary);
        joined.extend_from_slice(labels.indices());
        LabelSequence { indices: joined }
    } else {
        labels.clone()
    }
}

/// Mean CTC loss per utterance over a concatenated stream, run continuously
/// from the zero state.
pub(crate) fn stream_loss(
    params: &NetworkParams,
    utterances: &[Utterance],
    blank: usize,
    boundary: usize,
) -> Result<f64> {
    let mut state = params.initial_state();
    let mut total = 0.0;
    let mut count = 0usize;
    for (k, utt) in utterances.iter().enumerate() {
        let post = params.forward_sequence(&utt.features, &mut state)?;
        let labels = join_labels(k > 0, &utt.labels, boundary);
        let ll = ctc_log_likelihood(&post, &labels, blank);
        if ll.is_finite() {
            total -= ll;
            count += 1;
        }
    }
    Ok(total / count.max(1) as f64)
}

/// Trains `params` in place on an endless stream built from `corpus`.
pub fn train_stream(
    config: &NetworkConfig,
    params: NetworkParams,
    corpus: &[Utterance],
    options: &TrainOptions,
) -> Result<TrainReport> {
    config.validate()?;
    if corpus.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    for utt in corpus {
        if utt.features.dim() != params.input_dim() {
            return Err(Error::DimensionMismatch {
                expected: params.input_dim(),
                got: utt.features.dim(),
            });
        }
    }

    let mut params = params;
    let mut velocity = params.clone();
    velocity.scale(0.0);
    let mut lr = config.learning_rate;
    let mut cursor = StreamCursor::new(corpus, config.seed, options.boundary);
    let mut state = params.initial_state();
    let mut position = 0usize;

    let mut log = Vec::with_capacity(options.updates);
    let mut validation = Vec::new();
    let mut skipped_segments = 0;
    let mut best: Option<(f64, NetworkParams)> = None;
    let mut halvings = 0;
    let mut stopped_early = false;

    for update in 0..options.updates {
        cursor.ensure(position + config.unroll_length)?;
        let window = cursor.window(position, config.unroll_length);
        let (segments, skipped) = cursor.take_contained(position, config.unroll_length);
        skipped_segments += skipped;

        let mut result = run_window(
            &params,
            &window,
            &state,
            &segments,
            options.blank,
            Some(config.update_period),
        )?;
        skipped_segments += result.skipped;
        state = result.snapshot.take().expect("snapshot inside window");
        position += config.update_period;
        cursor.discard_before(position);

        if result.segments > 0 {
            let grad_norm = result.grad.sq_norm().sqrt();
            if !result.loss_sum.is_finite() || !grad_norm.is_finite() {
                return Err(Error::Diverged {
                    update,
                    loss: result.loss_sum,
                });
            }
            if grad_norm > config.clip_norm {
                result.grad.scale(config.clip_norm / grad_norm);
            }
            velocity.scale(config.momentum);
            velocity.add_scaled(-lr, &result.grad);
            params.add_scaled(1.0, &velocity);

            let record = UpdateRecord {
                update,
                segments: result.segments,
                frames: result.frames,
                loss_sum: result.loss_sum,
                grad_norm,
                learning_rate: lr,
            };
            if options.log_every > 0 && update % options.log_every == 0 {
                info!(
                    "update {update}: loss/segment {:.4} loss/frame {:.4} |g| {grad_norm:.3} lr {lr}",
                    record.loss_per_segment(),
                    record.loss_per_frame()
                );
            }
            log.push(record);
        }

        let due = options.validate_every > 0 && (update + 1) % options.validate_every == 0;
        if due && !options.validation.is_empty() {
            let loss = stream_loss(
                &params,
                &options.validation,
                options.blank,
                options.boundary,
            )?;
            if !loss.is_finite() {
                return Err(Error::Diverged { update, loss });
            }
            info!("update {update}: validation loss {loss:.4}");
            validation.push((update, loss));
            match &best {
                Some((best_loss, best_params)) if loss >= *best_loss => {
                    halvings += 1;
                    lr *= 0.5;
                    params = best_params.clone();
                    velocity.scale(0.0);
                    if halvings > options.max_halvings {
                        info!("early stop at update {update}");
                        stopped_early = true;
                        break;
                    }
                }
                _ => best = Some((loss, params.clone())),
            }
        }
    }

    if let Some((_, best_params)) = best {
        params = best_params;
    }
    Ok(TrainReport {
        params,
        log,
        validation,
        skipped_segments,
        final_learning_rate: lr,
        stopped_early,
    })
}
