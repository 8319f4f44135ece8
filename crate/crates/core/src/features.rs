//! Log-mel filterbank front end.
//!
//! 25 ms Hamming window, 10 ms hop, 40 triangular HTK-mel filters over
//! 0 to 8 kHz plus log frame energy, then deltas and double-deltas for a
//! 123-dimensional frame. Natural log throughout; magnitudes are floored at
//! [`LOG_FLOOR`] before taking the log.

use std::collections::VecDeque;
use std::f64::consts::PI;
use std::path::Path;

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use crate::{Error, Frames, Result};

pub const SAMPLE_RATE: u32 = 16_000;
pub const WINDOW_LEN: usize = 400;
pub const HOP_LEN: usize = 160;
pub const FFT_LEN: usize = 512;
pub const NUM_MEL: usize = 40;
pub const STATIC_DIM: usize = NUM_MEL + 1;
pub const FEATURE_DIM: usize = 3 * STATIC_DIM;
pub const LOG_FLOOR: f64 = 1e-10;
pub const STD_FLOOR: f64 = 1e-5;
pub const DELTA_WIDTH: usize = 2;

pub fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

pub fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// Edge frequencies of the filterbank: `NUM_MEL + 2` points equally spaced
/// on the mel scale between 0 Hz and Nyquist. Filter `m` spans
/// `edges[m]..edges[m + 2]` and peaks at `edges[m + 1]`.
pub fn mel_edges_hz() -> Vec<f64> {
    let lo = hz_to_mel(0.0);
    let hi = hz_to_mel(SAMPLE_RATE as f64 / 2.0);
    (0..NUM_MEL + 2)
        .map(|i| mel_to_hz(lo + (hi - lo) * i as f64 / (NUM_MEL + 1) as f64))
        .collect()
}

/// Triangular filter weight of band `m` at frequency `hz`.
pub fn mel_weight(edges: &[f64], m: usize, hz: f64) -> f64 {
    let (left, center, right) = (edges[m], edges[m + 1], edges[m + 2]);
    if hz <= left || hz >= right {
        0.0
    } else if hz <= center {
        (hz - left) / (center - left)
    } else {
        (right - hz) / (right - center)
    }
}

pub fn hamming_window() -> Vec<f64> {
    (0..WINDOW_LEN)
        .map(|n| 0.54 - 0.46 * (2.0 * PI * n as f64 / (WINDOW_LEN - 1) as f64).cos())
        .collect()
}

/// Computes log filterbank frames from raw audio.
///
/// Holds the window, the mel weight matrix and an FFT plan so it can be
/// reused across calls.
pub struct FilterbankExtractor {
    window: Vec<f64>,
    // NUM_MEL x (FFT_LEN / 2 + 1)
    weights: Vec<Vec<f64>>,
    fft: std::sync::Arc<dyn rustfft::Fft<f64>>,
}

impl Default for FilterbankExtractor {
    fn default() -> Self {
        Self::new()
    }
}

impl FilterbankExtractor {
    pub fn new() -> Self {
        let edges = mel_edges_hz();
        let bins = FFT_LEN / 2 + 1;
        let bin_hz = SAMPLE_RATE as f64 / FFT_LEN as f64;
        let weights = (0..NUM_MEL)
            .map(|m| {
                (0..bins)
                    .map(|k| mel_weight(&edges, m, k as f64 * bin_hz))
                    .collect()
            })
            .collect();
        let fft = FftPlanner::new().plan_fft_forward(FFT_LEN);
        FilterbankExtractor {
            window: hamming_window(),
            weights,
            fft,
        }
    }

    pub fn num_frames(num_samples: usize) -> usize {
        if num_samples < WINDOW_LEN {
            0
        } else {
            (num_samples - WINDOW_LEN) / HOP_LEN + 1
        }
    }

    /// One static frame: 40 log-mel energies followed by log frame energy.
    pub fn frame(&self, samples: &[f64], out: &mut [f64]) {
        debug_assert_eq!(samples.len(), WINDOW_LEN);
        let mut buf = vec![Complex::new(0.0, 0.0); FFT_LEN];
        let mut energy = 0.0;
        for (n, (&s, &w)) in samples.iter().zip(&self.window).enumerate() {
            let v = s * w;
            energy += v * v;
            buf[n] = Complex::new(v, 0.0);
        }
        self.fft.process(&mut buf);
        let power: Vec<f64> = buf[..FFT_LEN / 2 + 1]
            .iter()
            .map(|c| c.norm_sqr())
            .collect();
        for (m, weights) in self.weights.iter().enumerate() {
            let e: f64 = weights.iter().zip(&power).map(|(w, p)| w * p).sum();
            out[m] = e.max(LOG_FLOOR).ln();
        }
        out[NUM_MEL] = energy.max(LOG_FLOOR).ln();
    }

    pub fn extract(&self, samples: &[f64], sample_rate: u32) -> Result<Frames> {
        if sample_rate != SAMPLE_RATE {
            return Err(Error::Config(format!(
                "sample rate {sample_rate} Hz not supported, expected {SAMPLE_RATE}"
            )));
        }
        if samples.len() < WINDOW_LEN {
            return Err(Error::EmptyInput {
                got: samples.len(),
                need: WINDOW_LEN,
            });
        }
        let n = Self::num_frames(samples.len());
        let mut out = Frames::zeros(STATIC_DIM, n);
        for t in 0..n {
            let start = t * HOP_LEN;
            self.frame(&samples[start..start + WINDOW_LEN], out.frame_mut(t));
        }
        Ok(out)
    }
}

/// 41-dimensional static frames (40 log-mel + log energy).
pub fn extract_filterbank(samples: &[f64], sample_rate: u32) -> Result<Frames> {
    FilterbankExtractor::new().extract(samples, sample_rate)
}

fn delta_norm() -> f64 {
    2.0 * (1..=DELTA_WIDTH).map(|n| (n * n) as f64).sum::<f64>()
}

/// Delta of frame `t` of a `len`-frame sequence; `at(i)` returns frame `i`.
fn delta_row<'a>(row: &mut [f64], t: usize, len: usize, at: impl Fn(usize) -> &'a [f64]) {
    row.fill(0.0);
    for n in 1..=DELTA_WIDTH {
        let ahead = at((t + n).min(len - 1));
        let behind = at(t.saturating_sub(n));
        for d in 0..row.len() {
            row[d] += n as f64 * (ahead[d] - behind[d]);
        }
    }
    let norm = delta_norm();
    for v in row.iter_mut() {
        *v /= norm;
    }
}

/// Regression deltas over `±DELTA_WIDTH` frames with edge replication.
pub fn deltas(frames: &Frames) -> Frames {
    let len = frames.len();
    let mut out = Frames::zeros(frames.dim(), len);
    for t in 0..len {
        delta_row(out.frame_mut(t), t, len, |i| frames.frame(i));
    }
    out
}

/// Incremental [`deltas`]: emits the delta of frame `t` once frame
/// `t + DELTA_WIDTH` has arrived, and the rest on [`finish`](Self::finish).
#[derive(Clone, Debug)]
struct DeltaStream {
    dim: usize,
    rows: VecDeque<Vec<f64>>,
    // absolute index of rows[0]
    base: usize,
    count: usize,
    next: usize,
}

impl DeltaStream {
    fn new(dim: usize) -> Self {
        DeltaStream {
            dim,
            rows: VecDeque::new(),
            base: 0,
            count: 0,
            next: 0,
        }
    }

    fn emit(&mut self, len: usize) -> Vec<f64> {
        let mut row = vec![0.0; self.dim];
        let (rows, base) = (&self.rows, self.base);
        delta_row(&mut row, self.next, len, |i| &rows[i - base]);
        self.next += 1;
        while self.base + DELTA_WIDTH < self.next {
            self.rows.pop_front();
            self.base += 1;
        }
        row
    }

    fn push(&mut self, row: Vec<f64>, out: &mut Vec<Vec<f64>>) {
        self.rows.push_back(row);
        self.count += 1;
        while self.next + DELTA_WIDTH < self.count {
            // no clamping at the far end can occur here
            out.push(self.emit(usize::MAX));
        }
    }

    fn finish(&mut self, out: &mut Vec<Vec<f64>>) {
        while self.next < self.count {
            out.push(self.emit(self.count));
        }
    }
}

/// Constant-memory front end. Fed audio in arbitrary chunks, it produces
/// exactly the frames of [`compute_features`] on the whole signal, each
/// `2 * DELTA_WIDTH` frames after its samples arrive.
pub struct StreamingFeaturizer {
    extractor: FilterbankExtractor,
    samples: Vec<f64>,
    delta: DeltaStream,
    delta2: DeltaStream,
    statics: VecDeque<Vec<f64>>,
    firsts: VecDeque<Vec<f64>>,
    seen_samples: usize,
}

impl Default for StreamingFeaturizer {
    fn default() -> Self {
        Self::new()
    }
}

impl StreamingFeaturizer {
    pub fn new() -> Self {
        StreamingFeaturizer {
            extractor: FilterbankExtractor::new(),
            samples: Vec::with_capacity(2 * WINDOW_LEN),
            delta: DeltaStream::new(STATIC_DIM),
            delta2: DeltaStream::new(STATIC_DIM),
            statics: VecDeque::new(),
            firsts: VecDeque::new(),
            seen_samples: 0,
        }
    }

    fn take_second(&mut self, d2: Vec<Vec<f64>>, out: &mut Vec<Vec<f64>>) {
        for second in d2 {
            let mut row = self.statics.pop_front().expect("static ahead of deltas");
            row.extend(
                self.firsts
                    .pop_front()
                    .expect("delta ahead of double delta"),
            );
            row.extend(second);
            out.push(row);
        }
    }

    fn take_first(&mut self, d1: Vec<Vec<f64>>, out: &mut Vec<Vec<f64>>) {
        let mut d2 = Vec::new();
        for first in d1 {
            self.firsts.push_back(first.clone());
            self.delta2.push(first, &mut d2);
        }
        self.take_second(d2, out);
    }

    /// Consumes samples and returns the 123-dimensional frames completed.
    pub fn push(&mut self, samples: &[f64]) -> Vec<Vec<f64>> {
        self.seen_samples += samples.len();
        self.samples.extend_from_slice(samples);
        let mut d1 = Vec::new();
        let mut start = 0;
        while start + WINDOW_LEN <= self.samples.len() {
            let mut row = vec![0.0; STATIC_DIM];
            self.extractor
                .frame(&self.samples[start..start + WINDOW_LEN], &mut row);
            self.statics.push_back(row.clone());
            self.delta.push(row, &mut d1);
            start += HOP_LEN;
        }
        self.samples.drain(..start);
        let mut out = Vec::new();
        self.take_first(d1, &mut out);
        out
    }

    /// Flushes the frames that were waiting for right context.
    pub fn finish(&mut self) -> Result<Vec<Vec<f64>>> {
        if self.delta.count == 0 {
            return Err(Error::EmptyInput {
                got: self.seen_samples,
                need: WINDOW_LEN,
            });
        }
        let mut d1 = Vec::new();
        self.delta.finish(&mut d1);
        let mut out = Vec::new();
        self.take_first(d1, &mut out);
        let mut d2 = Vec::new();
        self.delta2.finish(&mut d2);
        self.take_second(d2, &mut out);
        Ok(out)
    }
}

/// Stacks `[static | delta | double-delta]`.
pub fn append_deltas(statics: &Frames) -> Result<Frames> {
    if statics.is_empty() {
        return Err(Error::InsufficientData("no frames to differentiate".into()));
    }
    let d1 = deltas(statics);
    let d2 = deltas(&d1);
    let dim = statics.dim();
    let mut out = Frames::with_capacity(3 * dim, statics.len());
    let mut row = vec![0.0; 3 * dim];
    for t in 0..statics.len() {
        row[..dim].copy_from_slice(statics.frame(t));
        row[dim..2 * dim].copy_from_slice(d1.frame(t));
        row[2 * dim..].copy_from_slice(d2.frame(t));
        out.push(&row)?;
    }
    Ok(out)
}

/// Per-dimension mean and (population) standard deviation.
#[derive(Clone, Debug, PartialEq)]
pub struct NormalizerStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl NormalizerStats {
    pub fn identity(dim: usize) -> Self {
        NormalizerStats {
            mean: vec![0.0; dim],
            std: vec![1.0; dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn apply(&self, frame: &[f64], out: &mut [f64]) {
        for ((o, x), (m, s)) in out
            .iter_mut()
            .zip(frame)
            .zip(self.mean.iter().zip(&self.std))
        {
            *o = (x - m) / s;
        }
    }
}

/// Accumulates normalizer statistics over any number of frame sequences.
pub fn fit_normalizer_many<'a, I>(sequences: I) -> Result<NormalizerStats>
where
    I: IntoIterator<Item = &'a Frames> + Clone,
{
    let mut dim = None;
    let mut count = 0usize;
    let mut sum: Vec<f64> = Vec::new();
    for frames in sequences.clone() {
        let d = *dim.get_or_insert(frames.dim());
        if d != frames.dim() {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: frames.dim(),
            });
        }
        sum.resize(d, 0.0);
        for row in frames.iter() {
            for (s, v) in sum.iter_mut().zip(row) {
                *s += v;
            }
        }
        count += frames.len();
    }
    if count < 2 {
        return Err(Error::InsufficientData(format!(
            "normalizer needs at least 2 frames, got {count}"
        )));
    }
    let n = count as f64;
    let mean: Vec<f64> = sum.iter().map(|s| s / n).collect();
    let mut sq = vec![0.0; mean.len()];
    for frames in sequences {
        for row in frames.iter() {
            for ((acc, v), m) in sq.iter_mut().zip(row).zip(&mean) {
                *acc += (v - m) * (v - m);
            }
        }
    }
    let std = sq.iter().map(|s| (s / n).sqrt().max(STD_FLOOR)).collect();
    Ok(NormalizerStats { mean, std })
}

pub fn fit_normalizer(frames: &Frames) -> Result<NormalizerStats> {
    fit_normalizer_many([frames])
}

pub fn normalize(frames: &Frames, stats: &NormalizerStats) -> Result<Frames> {
    if frames.dim() != stats.dim() {
        return Err(Error::DimensionMismatch {
            expected: stats.dim(),
            got: frames.dim(),
        });
    }
    let mut out = Frames::zeros(frames.dim(), frames.len());
    for t in 0..frames.len() {
        stats.apply(frames.frame(t), out.frame_mut(t));
    }
    Ok(out)
}

/// Full un-normalized front end: filterbank then deltas.
pub fn compute_features(samples: &[f64], sample_rate: u32) -> Result<Frames> {
    append_deltas(&extract_filterbank(samples, sample_rate)?)
}

/// Opens a 16-bit PCM mono WAV file for streaming; samples are scaled to
/// `[-1, 1)`.
pub fn open_wav(path: &Path) -> Result<(impl Iterator<Item = Result<f64>>, u32)> {
    let reader = hound::WavReader::open(path)?;
    let spec = reader.spec();
    if spec.channels != 1
        || spec.bits_per_sample != 16
        || spec.sample_format != hound::SampleFormat::Int
    {
        return Err(Error::Format(format!(
            "expected 16-bit PCM mono, got {} channel(s) {} bit {:?}",
            spec.channels, spec.bits_per_sample, spec.sample_format
        )));
    }
    let samples = reader
        .into_samples::<i16>()
        .map(|s| s.map(|v| v as f64 / 32768.0).map_err(Error::from));
    Ok((samples, spec.sample_rate))
}

/// Reads a whole 16-bit PCM mono WAV file.
pub fn read_wav(path: &Path) -> Result<(Vec<f64>, u32)> {
    let (samples, rate) = open_wav(path)?;
    Ok((samples.collect::<Result<Vec<_>>>()?, rate))
}
