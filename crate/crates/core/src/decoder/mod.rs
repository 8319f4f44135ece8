//! Keyword decoding networks over CTC label posteriors.
//!
//! A keyword network is the node chain `_ c1 ... cn _`. Every node holds a
//! label state and a blank state; a label state is entered from its own
//! label (self-loop), from the previous node's blank, or straight from the
//! previous node's label when the two labels differ. A blank state is
//! entered from itself or from its node's label. Each frame a state takes
//! the combined incoming value plus the log posterior of its label.
//!
//! The entry boundary label receives an injected value every frame instead
//! of any transition: `0` (probability one) in the keyword-only model, the
//! filler log-posterior of the previous frame in the keyword-filler model.
//! The keyword log-posterior is the combination of the two states of the
//! final boundary node.

mod detect;

pub use detect::{detect, DetectionEvent, PeakDetector};

use crate::ctc::Alphabet;
use crate::{Error, Result};

/// How incoming path values are merged.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Semantics {
    /// Log-sum-exp: total probability of all alignments.
    Sum,
    /// Max: probability of the best alignment.
    Max,
}

impl Semantics {
    #[inline]
    fn combine(self, a: f64, b: f64) -> f64 {
        match self {
            Semantics::Sum => crate::ctc::log_add(a, b),
            Semantics::Max => a.max(b),
        }
    }
}

impl std::str::FromStr for Semantics {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sum" => Ok(Semantics::Sum),
            "max" => Ok(Semantics::Max),
            other => Err(Error::Config(format!(
                "unknown semantics {other:?}, expected sum|max"
            ))),
        }
    }
}

/// Chain of CTC nodes for one keyword.
#[derive(Clone, Debug, PartialEq)]
pub struct KeywordNetwork {
    keyword: String,
    /// label of every node, boundaries included
    nodes: Vec<usize>,
    blank: usize,
    per_char_threshold: f64,
    allow_same_label_skip: bool,
}

impl KeywordNetwork {
    /// Builds `_ c1 ... cn _` for a keyword. The text is lowercased; only
    /// letters, apostrophe and period are accepted.
    pub fn build(keyword: &str, alphabet: &Alphabet, per_char_threshold: f64) -> Result<Self> {
        let keyword = keyword.trim().to_lowercase();
        if keyword.is_empty() {
            return Err(Error::EmptyKeyword);
        }
        let mut nodes = vec![alphabet.boundary()];
        for ch in keyword.chars() {
            match alphabet.index_of(ch) {
                Some(i) if i != alphabet.blank() && i != alphabet.boundary() => nodes.push(i),
                _ => {
                    return Err(Error::UnsupportedCharacter {
                        ch,
                        context: keyword.clone(),
                    })
                }
            }
        }
        nodes.push(alphabet.boundary());
        Ok(KeywordNetwork {
            keyword,
            nodes,
            blank: alphabet.blank(),
            per_char_threshold,
            allow_same_label_skip: false,
        })
    }

    /// Permits the direct label-to-label move between equal labels, which
    /// CTC forbids. Only useful to demonstrate that the prohibition matters.
    #[doc(hidden)]
    pub fn with_same_label_skip(mut self) -> Self {
        self.allow_same_label_skip = true;
        self
    }

    pub fn keyword(&self) -> &str {
        &self.keyword
    }

    pub fn node_labels(&self) -> &[usize] {
        &self.nodes
    }

    pub fn num_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn num_states(&self) -> usize {
        2 * self.nodes.len()
    }

    /// Characters of the keyword, boundaries excluded.
    pub fn num_chars(&self) -> usize {
        self.nodes.len() - 2
    }

    pub fn per_char_threshold(&self) -> f64 {
        self.per_char_threshold
    }

    /// Total threshold, proportional to the character count.
    pub fn threshold(&self) -> f64 {
        self.per_char_threshold * self.num_chars() as f64
    }

    /// Scores strictly above this value are detections.
    pub fn score_threshold(&self) -> f64 {
        -self.threshold()
    }

    /// Initial state values: nothing has entered the network yet.
    pub fn initial_values(&self) -> Vec<f64> {
        vec![f64::NEG_INFINITY; self.num_states()]
    }

    /// Advances state values by one frame of log posteriors.
    ///
    /// State `2k` is node `k`'s label, `2k + 1` its blank. `entry` is the
    /// log value injected into the entry boundary label. Returns the keyword
    /// log-posterior of the frame.
    pub fn step(
        &self,
        values: &mut [f64],
        log_post: &[f64],
        semantics: Semantics,
        entry: f64,
    ) -> f64 {
        debug_assert_eq!(values.len(), self.num_states());
        let log_blank = log_post[self.blank];
        // walk backwards so each update reads the previous frame's values
        for k in (1..self.nodes.len()).rev() {
            let blank = semantics.combine(values[2 * k], values[2 * k + 1]) + log_blank;
            let mut incoming = semantics.combine(values[2 * k], values[2 * k - 1]);
            if self.allow_same_label_skip || self.nodes[k] != self.nodes[k - 1] {
                incoming = semantics.combine(incoming, values[2 * k - 2]);
            }
            values[2 * k] = incoming + log_post[self.nodes[k]];
            values[2 * k + 1] = blank;
        }
        values[1] = semantics.combine(values[0], values[1]) + log_blank;
        values[0] = entry + log_post[self.nodes[0]];
        let last = 2 * (self.nodes.len() - 1);
        semantics.combine(values[last], values[last + 1])
    }
}

/// Ergodic network with one node per non-blank label.
#[derive(Clone, Debug, PartialEq)]
pub struct FillerNetwork {
    labels: Vec<usize>,
    blank: usize,
}

impl FillerNetwork {
    pub fn new(alphabet: &Alphabet) -> Self {
        FillerNetwork {
            labels: (0..alphabet.len())
                .filter(|&i| i != alphabet.blank())
                .collect(),
            blank: alphabet.blank(),
        }
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn num_states(&self) -> usize {
        2 * self.labels.len()
    }

    /// Every filler state starts at log 1: the stream begins in the filler.
    pub fn initial_values(&self) -> Vec<f64> {
        vec![0.0; self.num_states()]
    }

    /// Max-semantics update. `reentry` is the best value flowing back from
    /// the keyword networks (or `-inf`). Returns the filler log-posterior,
    /// the maximum over all filler states.
    pub fn step(&self, values: &mut [f64], log_post: &[f64], reentry: f64) -> f64 {
        let incoming = values.iter().copied().fold(reentry, f64::max);
        let log_blank = log_post[self.blank];
        let mut best = f64::NEG_INFINITY;
        for (j, &label) in self.labels.iter().enumerate() {
            let b = values[2 * j].max(values[2 * j + 1]) + log_blank;
            let l = incoming + log_post[label];
            values[2 * j] = l;
            values[2 * j + 1] = b;
            best = best.max(l).max(b);
        }
        best
    }
}

/// Which decoding network is run.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DecoderMode {
    /// Keyword networks only; filler posterior fixed to one.
    KeywordOnly(Semantics),
    /// Shared filler plus keyword networks, max semantics throughout.
    KeywordFiller,
}

impl DecoderMode {
    /// Validates a mode/semantics pair. Summing is undefined once paths with
    /// different label histories merge, so the filler model only takes max.
    pub fn from_parts(filler: bool, semantics: Semantics) -> Result<Self> {
        match (filler, semantics) {
            (false, s) => Ok(DecoderMode::KeywordOnly(s)),
            (true, Semantics::Max) => Ok(DecoderMode::KeywordFiller),
            (true, Semantics::Sum) => Err(Error::Config(
                "the keyword-filler model requires max semantics".into(),
            )),
        }
    }

    pub fn semantics(self) -> Semantics {
        match self {
            DecoderMode::KeywordOnly(s) => s,
            DecoderMode::KeywordFiller => Semantics::Max,
        }
    }
}

/// Options of the keyword-filler model.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct FillerOptions {
    /// Let keyword end states flow back into the filler.
    pub reentry: bool,
    /// Inject log 1 into the keyword entries instead of the filler score.
    pub unit_entry: bool,
}

impl Default for FillerOptions {
    fn default() -> Self {
        FillerOptions {
            reentry: true,
            unit_entry: false,
        }
    }
}

/// Scores produced by one decoder step.
#[derive(Clone, Debug, PartialEq)]
pub struct FrameScores {
    /// Keyword log-posterior per keyword.
    pub keyword: Vec<f64>,
    /// Filler log-posterior, keyword-filler mode only.
    pub filler: Option<f64>,
    /// Detection statistic per keyword: the keyword log-posterior, or its
    /// difference from the filler log-posterior.
    pub detection: Vec<f64>,
}

/// Decoder state for one stream.
#[derive(Clone, Debug, PartialEq)]
pub struct DecoderState {
    pub keyword_values: Vec<Vec<f64>>,
    pub filler_values: Option<Vec<f64>>,
    pub frame: usize,
}

/// Streaming decoder running several keyword networks over one posterior
/// stream, sharing a filler in keyword-filler mode.
#[derive(Clone, Debug)]
pub struct Decoder {
    networks: Vec<KeywordNetwork>,
    filler: Option<FillerNetwork>,
    mode: DecoderMode,
    options: FillerOptions,
    state: DecoderState,
    log_buf: Vec<f64>,
}

impl Decoder {
    pub fn new(networks: Vec<KeywordNetwork>, alphabet: &Alphabet, mode: DecoderMode) -> Self {
        Self::with_options(networks, alphabet, mode, FillerOptions::default())
    }

    pub fn with_options(
        networks: Vec<KeywordNetwork>,
        alphabet: &Alphabet,
        mode: DecoderMode,
        options: FillerOptions,
    ) -> Self {
        let filler =
            matches!(mode, DecoderMode::KeywordFiller).then(|| FillerNetwork::new(alphabet));
        let state = Self::fresh_state(&networks, filler.as_ref());
        Decoder {
            networks,
            filler,
            mode,
            options,
            state,
            log_buf: vec![0.0; alphabet.len()],
        }
    }

    fn fresh_state(networks: &[KeywordNetwork], filler: Option<&FillerNetwork>) -> DecoderState {
        DecoderState {
            keyword_values: networks.iter().map(|n| n.initial_values()).collect(),
            filler_values: filler.map(|f| f.initial_values()),
            frame: 0,
        }
    }

    pub fn networks(&self) -> &[KeywordNetwork] {
        &self.networks
    }

    pub fn mode(&self) -> DecoderMode {
        self.mode
    }

    pub fn state(&self) -> &DecoderState {
        &self.state
    }

    /// Restores the initial condition.
    pub fn reset(&mut self) {
        self.state = Self::fresh_state(&self.networks, self.filler.as_ref());
    }

    /// Consumes one posterior frame.
    pub fn step(&mut self, posterior: &[f64]) -> FrameScores {
        for (l, p) in self.log_buf.iter_mut().zip(posterior) {
            *l = p.ln();
        }
        let semantics = self.mode.semantics();
        let state = &mut self.state;
        let (entry, filler_score) = match (&self.filler, state.filler_values.as_mut()) {
            (Some(filler), Some(values)) => {
                let previous = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let reentry = if self.options.reentry {
                    self.networks
                        .iter()
                        .zip(&state.keyword_values)
                        .map(|(n, v)| {
                            let last = 2 * (n.num_nodes() - 1);
                            v[last].max(v[last + 1])
                        })
                        .fold(f64::NEG_INFINITY, f64::max)
                } else {
                    f64::NEG_INFINITY
                };
                let score = filler.step(values, &self.log_buf, reentry);
                let entry = if self.options.unit_entry {
                    0.0
                } else {
                    previous
                };
                (entry, Some(score))
            }
            _ => (0.0, None),
        };
        let keyword: Vec<f64> = self
            .networks
            .iter()
            .zip(state.keyword_values.iter_mut())
            .map(|(n, v)| n.step(v, &self.log_buf, semantics, entry))
            .collect();
        let detection = match filler_score {
            Some(f) => keyword.iter().map(|k| k - f).collect(),
            None => keyword.clone(),
        };
        state.frame += 1;
        FrameScores {
            keyword,
            filler: filler_score,
            detection,
        }
    }
}
