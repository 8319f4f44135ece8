//! Versioned binary model file.
//!
//! Layout (all integers and floats little-endian):
//!
//! ```text
//! "CTCSPOT1"                       magic, 8 bytes
//! u32 version                      currently 1
//! config     u32 input_dim, u32 output_dim, u32 n_layers, n_layers x u32,
//!            u32 unroll_length, u32 update_period,
//!            f64 learning_rate, f64 momentum, f64 clip_norm, u64 seed
//! alphabet   u32 count, count x u32 code point, u32 blank, u32 boundary
//! normalizer u32 dim, dim x f64 mean, dim x f64 std
//! tensors    u32 count, then per tensor:
//!            u32 name_len, name (utf-8), u32 ndim, ndim x u32,
//!            product(dims) x f32 row-major
//! ```

use std::path::Path;

use super::{NetworkConfig, NetworkParams};
use crate::ctc::Alphabet;
use crate::features::NormalizerStats;
use crate::{Error, Result};

pub const MAGIC: &[u8; 8] = b"CTCSPOT1";
pub const VERSION: u32 = 1;

/// Everything needed to run the spotter front end.
#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub config: NetworkConfig,
    pub params: NetworkParams,
    pub stats: NormalizerStats,
    pub alphabet: Alphabet,
}

fn put_u32(out: &mut Vec<u8>, v: usize) {
    out.extend_from_slice(&(v as u32).to_le_bytes());
}

pub fn write_model(model: &Model) -> Vec<u8> {
    let cfg = &model.config;
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());

    put_u32(&mut out, cfg.input_dim);
    put_u32(&mut out, cfg.output_dim);
    put_u32(&mut out, cfg.layer_sizes.len());
    for &h in &cfg.layer_sizes {
        put_u32(&mut out, h);
    }
    put_u32(&mut out, cfg.unroll_length);
    put_u32(&mut out, cfg.update_period);
    out.extend_from_slice(&cfg.learning_rate.to_le_bytes());
    out.extend_from_slice(&cfg.momentum.to_le_bytes());
    out.extend_from_slice(&cfg.clip_norm.to_le_bytes());
    out.extend_from_slice(&cfg.seed.to_le_bytes());

    put_u32(&mut out, model.alphabet.len());
    for &ch in model.alphabet.labels() {
        out.extend_from_slice(&(ch as u32).to_le_bytes());
    }
    put_u32(&mut out, model.alphabet.blank());
    put_u32(&mut out, model.alphabet.boundary());

    put_u32(&mut out, model.stats.dim());
    for v in model.stats.mean.iter().chain(&model.stats.std) {
        out.extend_from_slice(&v.to_le_bytes());
    }

    let tensors = model.params.tensors();
    put_u32(&mut out, tensors.len());
    for (name, shape, values) in tensors {
        put_u32(&mut out, name.len());
        out.extend_from_slice(name.as_bytes());
        put_u32(&mut out, shape.len());
        for d in shape {
            put_u32(&mut out, d);
        }
        for &v in values {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::Format(format!(
                "model file truncated at byte {} (wanted {n} more)",
                self.pos
            )));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")) as usize)
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(
            self.take(8)?.try_into().expect("8 bytes"),
        ))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(
            self.take(8)?.try_into().expect("8 bytes"),
        ))
    }

    fn f32(&mut self) -> Result<f32> {
        Ok(f32::from_le_bytes(
            self.take(4)?.try_into().expect("4 bytes"),
        ))
    }

    /// A count that must be backed by at least `unit` bytes per item.
    fn count(&mut self, unit: usize) -> Result<usize> {
        let n = self.u32()?;
        if n.saturating_mul(unit) > self.bytes.len() - self.pos {
            return Err(Error::Format(format!(
                "implausible count {n} at byte {}",
                self.pos - 4
            )));
        }
        Ok(n)
    }
}

pub fn read_model(bytes: &[u8]) -> Result<Model> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(MAGIC.len())? != MAGIC {
        return Err(Error::Format("not a model file (bad magic)".into()));
    }
    let version = r.u32()? as u32;
    if version != VERSION {
        return Err(Error::Format(format!(
            "unsupported model version {version}, expected {VERSION}"
        )));
    }

    let input_dim = r.u32()?;
    let output_dim = r.u32()?;
    let n_layers = r.count(4)?;
    let layer_sizes = (0..n_layers).map(|_| r.u32()).collect::<Result<Vec<_>>>()?;
    let config = NetworkConfig {
        input_dim,
        layer_sizes,
        output_dim,
        unroll_length: r.u32()?,
        update_period: r.u32()?,
        learning_rate: r.f64()?,
        momentum: r.f64()?,
        clip_norm: r.f64()?,
        seed: r.u64()?,
    };
    config.validate()?;

    let n_labels = r.count(4)?;
    let labels = (0..n_labels)
        .map(|_| {
            let code = r.u32()? as u32;
            char::from_u32(code)
                .ok_or_else(|| Error::Format(format!("invalid label code point {code}")))
        })
        .collect::<Result<Vec<_>>>()?;
    let blank = r.u32()?;
    let boundary = r.u32()?;
    let alphabet = Alphabet::new(labels, blank, boundary)?;
    if alphabet.len() != output_dim {
        return Err(Error::Format(format!(
            "alphabet has {} labels but the network outputs {output_dim}",
            alphabet.len()
        )));
    }

    let dim = r.count(16)?;
    let mean = (0..dim).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
    let std = (0..dim).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
    if dim != input_dim {
        return Err(Error::Format(format!(
            "normalizer dimension {dim} does not match input dimension {input_dim}"
        )));
    }
    let stats = NormalizerStats { mean, std };

    let mut params = NetworkParams::zeros(&config);
    let count = r.u32()?;
    let mut expected = params.tensors_mut();
    if count != expected.len() {
        return Err(Error::Format(format!(
            "model has {count} tensors, expected {}",
            expected.len()
        )));
    }
    for (name, shape, values) in expected.iter_mut() {
        let name_len = r.count(1)?;
        let got_name = std::str::from_utf8(r.take(name_len)?)
            .map_err(|_| Error::Format("tensor name is not utf-8".into()))?;
        if got_name != name {
            return Err(Error::Format(format!(
                "expected tensor {name}, found {got_name}"
            )));
        }
        let ndim = r.count(4)?;
        let got_shape = (0..ndim).map(|_| r.u32()).collect::<Result<Vec<_>>>()?;
        if &got_shape != shape {
            return Err(Error::Format(format!(
                "tensor {name} has shape {got_shape:?}, expected {shape:?}"
            )));
        }
        for v in values.iter_mut() {
            *v = r.f32()? as f64;
        }
    }
    drop(expected);
    if r.pos != bytes.len() {
        return Err(Error::Format(format!(
            "{} trailing bytes after tensor table",
            bytes.len() - r.pos
        )));
    }
    Ok(Model {
        config,
        params,
        stats,
        alphabet,
    })
}

pub fn save_model(path: &Path, model: &Model) -> Result<()> {
    std::fs::write(path, write_model(model))?;
    Ok(())
}

pub fn load_model(path: &Path) -> Result<Model> {
    read_model(&std::fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn model(layers: Vec<usize>) -> Model {
        let config = NetworkConfig {
            input_dim: 6,
            layer_sizes: layers,
            output_dim: 30,
            ..NetworkConfig::default()
        };
        Model {
            params: NetworkParams::init(&config),
            config,
            stats: NormalizerStats {
                mean: vec![0.5, -1.0, 2.0, 0.0, 1.0, 3.25],
                std: vec![1.0, 2.0, 0.5, 1e-5, 3.0, 1.5],
            },
            alphabet: Alphabet::standard(),
        }
    }

    #[test]
    fn save_load_save_is_byte_identical() {
        let bytes = write_model(&model(vec![5, 4, 3]));
        let loaded = read_model(&bytes).unwrap();
        assert_eq!(write_model(&loaded), bytes);
        assert_eq!(loaded.config.layer_sizes, vec![5, 4, 3]);
        assert_eq!(loaded.alphabet, Alphabet::standard());
    }

    #[test]
    fn layer_sizes_are_reported() {
        let m = model(vec![128, 128, 128]);
        let loaded = read_model(&write_model(&m)).unwrap();
        assert_eq!(loaded.config.layer_sizes, vec![128, 128, 128]);
    }

    #[test]
    fn corrupted_magic_is_rejected() {
        let mut bytes = write_model(&model(vec![3]));
        bytes[0] = b'X';
        assert!(matches!(read_model(&bytes), Err(Error::Format(m)) if m.contains("magic")));
    }

    #[test]
    fn version_mismatch_is_rejected() {
        let mut bytes = write_model(&model(vec![3]));
        bytes[8] = 2;
        assert!(matches!(read_model(&bytes), Err(Error::Format(m)) if m.contains("version")));
    }

    #[test]
    fn truncation_is_rejected_everywhere() {
        let bytes = write_model(&model(vec![3]));
        for cut in [0, 7, 12, 40, 200, bytes.len() / 2, bytes.len() - 1] {
            assert!(read_model(&bytes[..cut]).is_err(), "cut at {cut}");
        }
        let mut longer = bytes.clone();
        longer.push(0);
        assert!(read_model(&longer).is_err());
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let m = model(vec![3]);
        let mut bytes = write_model(&m);
        // first layer size lives right after magic, version, input and output dims
        bytes[20] = 4;
        assert!(read_model(&bytes).is_err());
    }
}
