//! Deterministic synthetic "speech" for desk-scale experiments.
//!
//! Every non-blank label owns a fixed template vector. Speaking a character
//! emits its template for a random number of frames, plus Gaussian noise;
//! spaces emit the word-boundary template. Templates come from
//! `template_seed` so that corpora generated with different `seed`s share
//! one "voice".
//!
//! Two identical adjacent characters produce one indistinguishable run of
//! frames, so the bundled vocabulary avoids doubled letters.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

use crate::ctc::{Alphabet, LabelSequence};
use crate::{Error, Frames, Result};

/// Multisyllabic-analog keywords (six characters or more).
pub const SET_A: [&str; 10] = [
    "percent",
    "hundred",
    "thousand",
    "people",
    "president",
    "average",
    "foreign",
    "international",
    "nuclear",
    "markets",
];

/// Monosyllabic-analog keywords (three characters or fewer), each also
/// embedded in longer vocabulary words.
pub const SET_B: [&str; 10] = [
    "and", "or", "but", "not", "the", "for", "can", "his", "one", "are",
];

const FILLER_WORDS: [&str; 40] = [
    "hand",
    "band",
    "short",
    "former",
    "report",
    "distribute",
    "tribute",
    "another",
    "notes",
    "nothing",
    "other",
    "then",
    "there",
    "before",
    "american",
    "history",
    "this",
    "money",
    "honey",
    "phone",
    "share",
    "square",
    "said",
    "year",
    "month",
    "trade",
    "stock",
    "price",
    "rates",
    "bank",
    "company",
    "government",
    "new",
    "it's",
    "u.s.",
    "don't",
    "time",
    "energy",
    "budget",
    "policy",
];

/// Both keyword sets plus confusable filler words.
pub fn default_vocabulary() -> Vec<String> {
    SET_A
        .iter()
        .chain(SET_B.iter())
        .chain(FILLER_WORDS.iter())
        .map(|w| w.to_string())
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthConfig {
    /// Characters that may be spoken (space is always allowed).
    pub charset: Vec<char>,
    pub feature_dim: usize,
    pub mean_duration: usize,
    pub jitter: usize,
    /// Typical distance between two templates.
    pub separation: f64,
    pub noise_std: f64,
    pub seed: u64,
    pub template_seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        let alphabet = Alphabet::standard();
        SynthConfig {
            charset: alphabet
                .labels()
                .iter()
                .copied()
                .filter(|&c| c != crate::ctc::BLANK_CHAR && c != crate::ctc::BOUNDARY_CHAR)
                .collect(),
            feature_dim: crate::features::FEATURE_DIM,
            mean_duration: 4,
            jitter: 2,
            separation: 4.0,
            noise_std: 1.0,
            seed: 1,
            template_seed: 7,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.mean_duration < 2 {
            return Err(Error::Config(
                "mean duration must be at least 2 frames".into(),
            ));
        }
        if self.jitter >= self.mean_duration {
            return Err(Error::Config(
                "jitter must be smaller than the mean duration".into(),
            ));
        }
        if !(self.noise_std >= 0.0 && self.noise_std.is_finite()) {
            return Err(Error::Config(format!(
                "noise std must be >= 0, got {}",
                self.noise_std
            )));
        }
        if !(self.separation > 0.0 && self.separation.is_finite()) {
            return Err(Error::Config("separation must be positive".into()));
        }
        if self.feature_dim == 0 {
            return Err(Error::Config("feature dimension must be positive".into()));
        }
        Ok(())
    }
}

/// A synthesized utterance with its frame-level alignment.
#[derive(Clone, Debug, PartialEq)]
pub struct AlignedUtterance {
    pub text: String,
    pub features: Frames,
    pub transcription: LabelSequence,
    /// `[start, end)` frames of every character, in order.
    pub spans: Vec<(usize, usize)>,
}

impl AlignedUtterance {
    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }

    /// Label of every frame according to the alignment.
    pub fn frame_labels(&self) -> Vec<usize> {
        let mut out = vec![0; self.len()];
        for (&label, &(start, end)) in self.transcription.indices().iter().zip(&self.spans) {
            out[start..end].fill(label);
        }
        out
    }
}

/// Template bank plus configuration.
#[derive(Clone, Debug)]
pub struct Synthesizer {
    config: SynthConfig,
    alphabet: Alphabet,
    templates: Vec<Vec<f64>>,
}

impl Synthesizer {
    pub fn new(config: SynthConfig) -> Result<Self> {
        config.validate()?;
        let alphabet = Alphabet::standard();
        let mut rng = ChaCha8Rng::seed_from_u64(config.template_seed);
        // random directions are nearly orthogonal in high dimension, so a
        // norm of separation / sqrt(2) puts templates about `separation` apart
        let radius = config.separation / std::f64::consts::SQRT_2;
        let templates = (0..alphabet.len())
            .map(|_| {
                let v: Vec<f64> = (0..config.feature_dim)
                    .map(|_| StandardNormal.sample(&mut rng))
                    .collect();
                let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
                v.into_iter().map(|x| x * radius / norm).collect()
            })
            .collect();
        Ok(Synthesizer {
            config,
            alphabet,
            templates,
        })
    }

    pub fn config(&self) -> &SynthConfig {
        &self.config
    }

    pub fn alphabet(&self) -> &Alphabet {
        &self.alphabet
    }

    pub fn template(&self, label: usize) -> &[f64] {
        &self.templates[label]
    }

    /// Nearest template among the non-blank labels.
    pub fn classify(&self, frame: &[f64]) -> usize {
        (0..self.alphabet.len())
            .filter(|&l| l != self.alphabet.blank())
            .min_by(|&a, &b| {
                let da = sq_dist(frame, &self.templates[a]);
                let db = sq_dist(frame, &self.templates[b]);
                da.total_cmp(&db)
            })
            .expect("alphabet has labels")
    }

    fn check_text(&self, text: &str) -> Result<()> {
        for ch in text.chars() {
            if ch != ' ' && !self.config.charset.contains(&ch) {
                return Err(Error::UnsupportedCharacter {
                    ch,
                    context: text.to_string(),
                });
            }
        }
        Ok(())
    }

    pub fn utterance<R: Rng>(&self, text: &str, rng: &mut R) -> Result<AlignedUtterance> {
        self.check_text(text)?;
        let transcription = self.alphabet.encode(text)?;
        let noise =
            Normal::new(0.0, self.config.noise_std).map_err(|e| Error::Config(e.to_string()))?;
        let lo = self.config.mean_duration - self.config.jitter;
        let hi = self.config.mean_duration + self.config.jitter;
        let mut features = Frames::new(self.config.feature_dim);
        let mut spans = Vec::with_capacity(transcription.len());
        let mut row = vec![0.0; self.config.feature_dim];
        for &label in transcription.indices() {
            let duration = rng.random_range(lo..=hi);
            let start = features.len();
            for _ in 0..duration {
                for (r, t) in row.iter_mut().zip(&self.templates[label]) {
                    *r = t + noise.sample(rng);
                }
                features.push(&row)?;
            }
            spans.push((start, features.len()));
        }
        Ok(AlignedUtterance {
            text: text.to_string(),
            features,
            transcription,
            spans,
        })
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Synthesizes one utterance using `config.seed`.
pub fn synth_utterance(text: &str, config: &SynthConfig) -> Result<AlignedUtterance> {
    let synth = Synthesizer::new(config.clone())?;
    synth.utterance(text, &mut ChaCha8Rng::seed_from_u64(config.seed))
}

/// One spoken vocabulary word.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Occurrence {
    pub word: String,
    pub utterance: usize,
    /// Last frame of the word's final character, utterance-local.
    pub end_frame: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Corpus {
    pub utterances: Vec<AlignedUtterance>,
    pub occurrences: Vec<Occurrence>,
}

impl Corpus {
    /// First frame of every utterance in the concatenated stream.
    pub fn offsets(&self) -> Vec<usize> {
        let mut acc = 0;
        self.utterances
            .iter()
            .map(|u| {
                let start = acc;
                acc += u.len();
                start
            })
            .collect()
    }

    pub fn total_frames(&self) -> usize {
        self.utterances.iter().map(|u| u.len()).sum()
    }

    /// All utterances back to back.
    pub fn concatenated(&self) -> Frames {
        let dim = self.utterances.first().map_or(0, |u| u.features.dim());
        let mut out = Frames::with_capacity(dim, self.total_frames());
        for u in &self.utterances {
            out.extend(&u.features).expect("uniform dimension");
        }
        out
    }

    /// Occurrences with end frames in concatenated-stream coordinates.
    pub fn stream_occurrences(&self) -> Vec<(String, usize)> {
        let offsets = self.offsets();
        self.occurrences
            .iter()
            .map(|o| (o.word.clone(), offsets[o.utterance] + o.end_frame))
            .collect()
    }
}

pub const MIN_WORDS: usize = 3;
pub const MAX_WORDS: usize = 10;

/// Random sentences of 3 to 10 vocabulary words. Each utterance opens with a
/// word boundary (a pause), so concatenated utterances are separated by one.
pub fn build_corpus(
    vocabulary: &[String],
    sentences: usize,
    config: &SynthConfig,
) -> Result<Corpus> {
    if vocabulary.is_empty() {
        return Err(Error::InsufficientData("vocabulary is empty".into()));
    }
    let synth = Synthesizer::new(config.clone())?;
    for word in vocabulary {
        synth.check_text(word)?;
        if word.is_empty() || word.contains(' ') {
            return Err(Error::Config(format!("invalid vocabulary word {word:?}")));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut utterances = Vec::with_capacity(sentences);
    let mut occurrences = Vec::new();
    for index in 0..sentences {
        let count = rng.random_range(MIN_WORDS..=MAX_WORDS);
        let words: Vec<&String> = (0..count)
            .map(|_| &vocabulary[rng.random_range(0..vocabulary.len())])
            .collect();
        let mut text = String::new();
        for w in &words {
            text.push(' ');
            text.push_str(w);
        }
        let utt = synth.utterance(&text, &mut rng)?;
        // character index of each word's last letter
        let mut char_pos = 0;
        for w in &words {
            char_pos += 1 + w.chars().count();
            occurrences.push(Occurrence {
                word: w.to_string(),
                utterance: index,
                end_frame: utt.spans[char_pos - 1].1 - 1,
            });
        }
        utterances.push(utt);
    }
    Ok(Corpus {
        utterances,
        occurrences,
    })
}
