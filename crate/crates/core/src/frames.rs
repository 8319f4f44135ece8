use crate::{Error, Result};

/// A dense `T x dim` sequence of frames stored row-major.
///
/// Used for feature frames, posterior frames and logits alike.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Frames {
    dim: usize,
    data: Vec<f64>,
}

impl Frames {
    pub fn new(dim: usize) -> Self {
        Frames {
            dim,
            data: Vec::new(),
        }
    }

    pub fn with_capacity(dim: usize, frames: usize) -> Self {
        Frames {
            dim,
            data: Vec::with_capacity(dim * frames),
        }
    }

    pub fn zeros(dim: usize, frames: usize) -> Self {
        Frames {
            dim,
            data: vec![0.0; dim * frames],
        }
    }

    pub fn from_flat(dim: usize, data: Vec<f64>) -> Result<Self> {
        if dim == 0 || !data.len().is_multiple_of(dim) {
            return Err(Error::Format(format!(
                "{} values do not form frames of dimension {dim}",
                data.len()
            )));
        }
        Ok(Frames { dim, data })
    }

    pub fn from_rows<R: AsRef<[f64]>>(dim: usize, rows: &[R]) -> Result<Self> {
        let mut out = Frames::with_capacity(dim, rows.len());
        for row in rows {
            out.push(row.as_ref())?;
        }
        Ok(out)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.data.len().checked_div(self.dim).unwrap_or(0)
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn frame(&self, t: usize) -> &[f64] {
        &self.data[t * self.dim..(t + 1) * self.dim]
    }

    pub fn frame_mut(&mut self, t: usize) -> &mut [f64] {
        &mut self.data[t * self.dim..(t + 1) * self.dim]
    }

    pub fn push(&mut self, frame: &[f64]) -> Result<()> {
        if frame.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                got: frame.len(),
            });
        }
        self.data.extend_from_slice(frame);
        Ok(())
    }

    pub fn extend(&mut self, other: &Frames) -> Result<()> {
        if other.dim != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                got: other.dim,
            });
        }
        self.data.extend_from_slice(&other.data);
        Ok(())
    }

    /// Frames `[start, end)` as a new sequence.
    pub fn slice(&self, start: usize, end: usize) -> Frames {
        Frames {
            dim: self.dim,
            data: self.data[start * self.dim..end * self.dim].to_vec(),
        }
    }

    pub fn iter(&self) -> impl ExactSizeIterator<Item = &[f64]> + '_ {
        self.data.chunks_exact(self.dim.max(1))
    }

    pub fn as_flat(&self) -> &[f64] {
        &self.data
    }
}
