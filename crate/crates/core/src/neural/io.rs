//! Weight files and loss-curve CSV.
//!
//! Weight file layout (all integers little-endian `u32`, floats `f64` LE):
//!
//! ```text
//! "PMDW" | version | query_hidden env_hidden decoder_hidden dense_hidden history_len horizon
//! | tensor_count | per tensor: name_len name_bytes rows cols data[rows*cols] (row-major)
//! ```

use std::fs;
use std::io::Write;
use std::path::Path;

use super::model::{ModelConfig, ModelWeights, TENSOR_NAMES};
use super::tensor::Mat;
use super::train::LossPoint;
use crate::error::{Error, Result};

pub const WEIGHTS_MAGIC: &[u8; 4] = b"PMDW";
pub const WEIGHTS_VERSION: u32 = 1;

pub fn weights_to_bytes(w: &ModelWeights) -> Vec<u8> {
    let mut out = Vec::with_capacity(64 + 8 * w.num_parameters());
    out.extend_from_slice(WEIGHTS_MAGIC);
    let c = &w.config;
    for v in [
        WEIGHTS_VERSION as usize,
        c.query_hidden,
        c.env_hidden,
        c.decoder_hidden,
        c.dense_hidden,
        c.history_len,
        c.horizon,
        TENSOR_NAMES.len(),
    ] {
        out.extend_from_slice(&(v as u32).to_le_bytes());
    }
    for (name, m) in TENSOR_NAMES.iter().zip(w.tensors()) {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(m.rows as u32).to_le_bytes());
        out.extend_from_slice(&(m.cols as u32).to_le_bytes());
        for x in &m.data {
            out.extend_from_slice(&x.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::format(self.path, format!("truncated while reading {what}")));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn f64(&mut self, what: &str) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }
}

pub fn weights_from_bytes(bytes: &[u8], path: &Path) -> Result<ModelWeights> {
    let mut r = Reader { bytes, pos: 0, path };
    if r.take(4, "magic")? != WEIGHTS_MAGIC {
        return Err(Error::format(path, "not a weight file (bad magic)"));
    }
    let version = r.u32("version")?;
    if version != WEIGHTS_VERSION {
        return Err(Error::format(path, format!("unsupported version {version}, expected {WEIGHTS_VERSION}")));
    }
    let mut dims = [0usize; 6];
    for d in dims.iter_mut() {
        *d = r.u32("model config")? as usize;
    }
    let config = ModelConfig {
        query_hidden: dims[0],
        env_hidden: dims[1],
        decoder_hidden: dims[2],
        dense_hidden: dims[3],
        history_len: dims[4],
        horizon: dims[5],
    };
    config.validate().map_err(|e| Error::format(path, e.to_string()))?;
    let count = r.u32("tensor count")? as usize;
    if count != TENSOR_NAMES.len() {
        return Err(Error::format(path, format!("expected {} tensors, found {count}", TENSOR_NAMES.len())));
    }
    let expected = ModelWeights::expected_shapes(&config);
    let mut w = ModelWeights::zeros(config);
    for (i, slot) in w.tensors_mut().into_iter().enumerate() {
        let name_len = r.u32("tensor name length")? as usize;
        let name = std::str::from_utf8(r.take(name_len, "tensor name")?)
            .map_err(|_| Error::format(path, "tensor name is not UTF-8"))?;
        if name != TENSOR_NAMES[i] {
            return Err(Error::format(path, format!("tensor {i} is `{name}`, expected `{}`", TENSOR_NAMES[i])));
        }
        let rows = r.u32("tensor rows")? as usize;
        let cols = r.u32("tensor cols")? as usize;
        if (rows, cols) != expected[i] {
            return Err(Error::LayerMismatch {
                layer: name.to_string(),
                expected: format!("{}x{}", expected[i].0, expected[i].1),
                found: format!("{rows}x{cols}"),
            });
        }
        let mut data = Vec::with_capacity(rows * cols);
        for _ in 0..rows * cols {
            data.push(r.f64(name)?);
        }
        *slot = Mat::from_vec(rows, cols, data);
    }
    if r.pos != bytes.len() {
        return Err(Error::format(path, "trailing bytes after last tensor"));
    }
    Ok(w)
}

pub fn save_weights(w: &ModelWeights, path: &Path) -> Result<()> {
    fs::write(path, weights_to_bytes(w))?;
    Ok(())
}

pub fn load_weights(path: &Path) -> Result<ModelWeights> {
    weights_from_bytes(&fs::read(path)?, path)
}

/// Header `epoch,train_loss,val_loss`; floats in shortest round-trip form.
pub fn write_loss_curve(curve: &[LossPoint], path: &Path) -> Result<()> {
    let mut f = std::io::BufWriter::new(fs::File::create(path)?);
    writeln!(f, "epoch,train_loss,val_loss")?;
    for p in curve {
        writeln!(f, "{},{:?},{:?}", p.epoch, p.train_loss, p.val_loss)?;
    }
    f.flush()?;
    Ok(())
}

pub fn read_loss_curve(path: &Path) -> Result<Vec<LossPoint>> {
    let text = fs::read_to_string(path)?;
    let mut lines = text.lines();
    if lines.next() != Some("epoch,train_loss,val_loss") {
        return Err(Error::format(path, "missing loss curve header"));
    }
    lines
        .map(|l| {
            let parts: Vec<&str> = l.split(',').collect();
            let bad = || Error::format(path, format!("bad loss curve row `{l}`"));
            if parts.len() != 3 {
                return Err(bad());
            }
            Ok(LossPoint {
                epoch: parts[0].parse().map_err(|_| bad())?,
                train_loss: parts[1].parse().map_err(|_| bad())?,
                val_loss: parts[2].parse().map_err(|_| bad())?,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg() -> ModelConfig {
        ModelConfig { query_hidden: 5, env_hidden: 4, decoder_hidden: 6, dense_hidden: 3, history_len: 4, horizon: 2 }
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("w.bin");
        let w = ModelWeights::init(cfg(), 11);
        save_weights(&w, &p).unwrap();
        assert_eq!(load_weights(&p).unwrap(), w);
    }

    #[test]
    fn truncated_file_is_rejected() {
        let w = ModelWeights::init(cfg(), 11);
        let bytes = weights_to_bytes(&w);
        for cut in [0, 3, 10, bytes.len() / 2, bytes.len() - 1] {
            let e = weights_from_bytes(&bytes[..cut], Path::new("x")).unwrap_err();
            assert!(matches!(e, Error::Format { .. }), "{e}");
        }
    }

    #[test]
    fn mismatched_hidden_size_names_the_layer() {
        let w = ModelWeights::init(cfg(), 11);
        let mut bytes = weights_to_bytes(&w);
        // Header claims env_hidden 7 while tensors were written with 4.
        bytes[12..16].copy_from_slice(&7u32.to_le_bytes());
        match weights_from_bytes(&bytes, Path::new("x")).unwrap_err() {
            Error::LayerMismatch { layer, .. } => assert_eq!(layer, "neighbor_encoder.w_input"),
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn bad_magic_and_version() {
        let w = ModelWeights::init(cfg(), 1);
        let mut bytes = weights_to_bytes(&w);
        bytes[4] = 9;
        assert!(weights_from_bytes(&bytes, Path::new("x")).unwrap_err().to_string().contains("version"));
        bytes[0] = b'X';
        assert!(weights_from_bytes(&bytes, Path::new("x")).unwrap_err().to_string().contains("magic"));
    }

    #[test]
    fn loss_curve_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.csv");
        let curve = vec![
            LossPoint { epoch: 1, train_loss: 0.1 + 0.2, val_loss: 1e-17 },
            LossPoint { epoch: 2, train_loss: 3.0, val_loss: 2.5 },
        ];
        write_loss_curve(&curve, &p).unwrap();
        assert_eq!(read_loss_curve(&p).unwrap(), curve);
    }
}
