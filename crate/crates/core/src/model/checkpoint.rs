//! Flat binary checkpoint format for classifiers.
//!
//! Layout: magic `PLOT`, format version (u32 LE), layer count (u32 LE),
//! layer dims (u32 LE each), then per layer the weight matrix (row-major)
//! followed by the bias vector, all f64 LE. No timestamps or other
//! environment-dependent bytes, so identical models serialize identically.

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::model::MlpClassifier;

const MAGIC: &[u8; 4] = b"PLOT";
const VERSION: u32 = 1;

pub fn save_checkpoint(model: &MlpClassifier, path: &Path) -> Result<()> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(model.layer_dims().len() as u32).to_le_bytes());
    for &d in model.layer_dims() {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for (w, b) in model.weights().iter().zip(model.biases()) {
        for &v in w.iter() {
            out.extend_from_slice(&v.to_le_bytes());
        }
        for &v in b.iter() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    let mut file = std::fs::File::create(path)?;
    file.write_all(&out)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<MlpClassifier> {
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    let mut cursor = Cursor {
        bytes: &bytes,
        pos: 0,
    };

    let magic = cursor.take(4)?;
    if magic != MAGIC {
        return Err(Error::Checkpoint(format!(
            "bad magic {magic:?}, expected {MAGIC:?}"
        )));
    }
    let version = cursor.read_u32()?;
    if version != VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported format version {version}, expected {VERSION}"
        )));
    }
    let num_dims = cursor.read_u32()? as usize;
    if num_dims < 2 {
        return Err(Error::Checkpoint(format!(
            "layer count {num_dims} is too small for a classifier"
        )));
    }
    let mut dims = Vec::with_capacity(num_dims);
    for _ in 0..num_dims {
        dims.push(cursor.read_u32()? as usize);
    }

    let mut model = MlpClassifier::zeros(&dims)?;
    for l in 0..dims.len() - 1 {
        for v in model.weights_mut()[l].iter_mut() {
            *v = cursor.read_f64()?;
        }
        for v in model.biases_mut()[l].iter_mut() {
            *v = cursor.read_f64()?;
        }
    }
    if cursor.pos != bytes.len() {
        return Err(Error::Checkpoint(format!(
            "{} trailing bytes after parameters",
            bytes.len() - cursor.pos
        )));
    }
    Ok(model)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::Checkpoint(format!(
                "truncated file: wanted {n} bytes at offset {}, have {}",
                self.pos,
                self.bytes.len() - self.pos
            )));
        }
        let slice = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(slice)
    }

    fn read_u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn read_f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}
