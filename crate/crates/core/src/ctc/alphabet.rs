use crate::{Error, Result};

use super::LabelSequence;

/// Ordered output label set of the acoustic model.
///
/// The standard alphabet has 30 entries: `a` to `z`, apostrophe, period, the
/// word boundary `_` and the CTC blank `-`. Indices are stable and are what
/// the model file and posterior streams refer to.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Alphabet {
    labels: Vec<char>,
    blank: usize,
    boundary: usize,
}

pub const BLANK_CHAR: char = '-';
pub const BOUNDARY_CHAR: char = '_';

impl Alphabet {
    pub fn standard() -> Self {
        let mut labels: Vec<char> = ('a'..='z').collect();
        labels.extend(['\'', '.', BOUNDARY_CHAR, BLANK_CHAR]);
        Alphabet {
            labels,
            blank: 29,
            boundary: 28,
        }
    }

    pub fn new(labels: Vec<char>, blank: usize, boundary: usize) -> Result<Self> {
        if blank >= labels.len() || boundary >= labels.len() || blank == boundary {
            return Err(Error::Config(format!(
                "blank {blank} and boundary {boundary} must be distinct indices below {}",
                labels.len()
            )));
        }
        let mut seen = labels.clone();
        seen.sort_unstable();
        seen.dedup();
        if seen.len() != labels.len() {
            return Err(Error::Config("alphabet labels must be unique".into()));
        }
        Ok(Alphabet {
            labels,
            blank,
            boundary,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn blank(&self) -> usize {
        self.blank
    }

    pub fn boundary(&self) -> usize {
        self.boundary
    }

    pub fn labels(&self) -> &[char] {
        &self.labels
    }

    pub fn symbol(&self, index: usize) -> char {
        self.labels[index]
    }

    pub fn index_of(&self, ch: char) -> Option<usize> {
        self.labels.iter().position(|&c| c == ch)
    }

    /// Encodes a transcription. Spaces map to the word boundary; the blank
    /// symbol is rejected.
    pub fn encode(&self, text: &str) -> Result<LabelSequence> {
        let mut indices = Vec::with_capacity(text.len());
        for ch in text.chars() {
            let ch = if ch == ' ' { BOUNDARY_CHAR } else { ch };
            match self.index_of(ch) {
                Some(i) if i != self.blank => indices.push(i),
                _ => {
                    return Err(Error::UnsupportedCharacter {
                        ch,
                        context: text.to_string(),
                    })
                }
            }
        }
        Ok(LabelSequence { indices })
    }

    pub fn decode(&self, seq: &LabelSequence) -> String {
        seq.indices.iter().map(|&i| self.labels[i]).collect()
    }
}

impl Default for Alphabet {
    fn default() -> Self {
        Alphabet::standard()
    }
}
