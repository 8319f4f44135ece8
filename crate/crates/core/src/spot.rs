//! Frame-synchronous keyword spotter.
//!
//! Normalized features go through the network one frame at a time, the
//! posteriors through the decoder, and each keyword's detection statistic
//! through its own peak detector. Nothing grows with the stream length, and
//! the output depends only on the sequence of frames pushed, not on how the
//! caller splits them into chunks.

use crate::ctc::Alphabet;
use crate::decoder::{
    Decoder, DecoderMode, DetectionEvent, FillerOptions, FrameScores, KeywordNetwork, PeakDetector,
};
use crate::features::NormalizerStats;
use crate::lstm::{Model, NetworkParams, StreamState};
use crate::{Error, Result};

pub const DEFAULT_REFRACTORY: usize = 30;

#[derive(Clone, Debug, PartialEq)]
pub struct SpotterConfig {
    pub mode: DecoderMode,
    pub filler: FillerOptions,
    pub per_char_threshold: f64,
    /// Half-width of the peak-picking neighbourhood, in frames.
    pub refractory: usize,
}

impl SpotterConfig {
    pub fn new(mode: DecoderMode, per_char_threshold: f64) -> Self {
        SpotterConfig {
            mode,
            filler: FillerOptions::default(),
            per_char_threshold,
            refractory: DEFAULT_REFRACTORY,
        }
    }
}

struct FrontEnd {
    params: NetworkParams,
    stats: NormalizerStats,
    state: StreamState,
    buf: Vec<f64>,
}

/// One frame's output.
#[derive(Clone, Debug, PartialEq)]
pub struct SpotStep {
    pub scores: FrameScores,
    /// Events confirmed this frame (they refer to earlier frames).
    pub events: Vec<DetectionEvent>,
}

pub struct Spotter {
    keywords: Vec<String>,
    front: Option<FrontEnd>,
    decoder: Decoder,
    detectors: Vec<PeakDetector>,
    labels: usize,
}

impl Spotter {
    /// Full pipeline from normalized-feature input.
    pub fn with_model(model: &Model, keywords: &[String], config: &SpotterConfig) -> Result<Self> {
        let mut spotter = Self::decoder_only(&model.alphabet, keywords, config)?;
        if model.params.output_dim() != model.alphabet.len() {
            return Err(Error::DimensionMismatch {
                expected: model.alphabet.len(),
                got: model.params.output_dim(),
            });
        }
        spotter.front = Some(FrontEnd {
            params: model.params.clone(),
            stats: model.stats.clone(),
            state: model.params.initial_state(),
            buf: vec![0.0; model.stats.dim()],
        });
        Ok(spotter)
    }

    /// Decoder and peak pickers only; consumes posterior frames.
    pub fn decoder_only(
        alphabet: &Alphabet,
        keywords: &[String],
        config: &SpotterConfig,
    ) -> Result<Self> {
        if keywords.is_empty() {
            return Err(Error::Config("no keywords to spot".into()));
        }
        let networks = keywords
            .iter()
            .map(|k| KeywordNetwork::build(k, alphabet, config.per_char_threshold))
            .collect::<Result<Vec<_>>>()?;
        let detectors = networks
            .iter()
            .enumerate()
            .map(|(i, n)| PeakDetector::new(i, n.score_threshold(), config.refractory))
            .collect();
        Ok(Spotter {
            keywords: networks.iter().map(|n| n.keyword().to_string()).collect(),
            front: None,
            decoder: Decoder::with_options(networks, alphabet, config.mode, config.filler),
            detectors,
            labels: alphabet.len(),
        })
    }

    pub fn keywords(&self) -> &[String] {
        &self.keywords
    }

    pub fn has_network(&self) -> bool {
        self.front.is_some()
    }

    pub fn feature_dim(&self) -> Option<usize> {
        self.front.as_ref().map(|f| f.params.input_dim())
    }

    pub fn num_labels(&self) -> usize {
        self.labels
    }

    /// Pushes one raw (un-normalized) feature frame.
    pub fn push_features(&mut self, frame: &[f64]) -> Result<SpotStep> {
        let front = self
            .front
            .as_mut()
            .ok_or_else(|| Error::Config("feature input needs a model".into()))?;
        if frame.len() != front.stats.dim() {
            return Err(Error::DimensionMismatch {
                expected: front.stats.dim(),
                got: frame.len(),
            });
        }
        front.stats.apply(frame, &mut front.buf);
        let posterior = front.params.forward_frame(&front.buf, &mut front.state)?;
        self.push_posterior(&posterior)
    }

    /// Pushes one posterior frame.
    pub fn push_posterior(&mut self, posterior: &[f64]) -> Result<SpotStep> {
        if posterior.len() != self.labels {
            return Err(Error::DimensionMismatch {
                expected: self.labels,
                got: posterior.len(),
            });
        }
        let scores = self.decoder.step(posterior);
        let events = self
            .detectors
            .iter_mut()
            .zip(&scores.detection)
            .filter_map(|(d, &s)| d.push(s))
            .collect();
        Ok(SpotStep { scores, events })
    }

    /// Flushes pending decisions at end of stream, ordered by frame then
    /// keyword.
    pub fn finish(&mut self) -> Vec<DetectionEvent> {
        let mut out: Vec<DetectionEvent> =
            self.detectors.iter_mut().flat_map(|d| d.finish()).collect();
        out.sort_by_key(|e| (e.frame, e.keyword));
        out
    }
}
