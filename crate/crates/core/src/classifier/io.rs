//! Binary model file.
//!
//! Layout (little endian): 8-byte magic, `u32` format version, `u32` dims
//! `h1 h2 h3 classes`, `u64` training seed, then every tensor as `f64` in the
//! order point1.{weight,bias}, point2.{weight,bias}, head1.{..}, head2.{..}.
//! Weight matrices are row-major with one row per layer input.

use std::fs;
use std::path::Path;

use super::{Classifier, Dims};
use crate::{Error, Result, Scalar};

pub const MODEL_MAGIC: &[u8; 8] = b"PTATKMDL";
pub const MODEL_FORMAT_VERSION: u32 = 1;

pub fn encode_model<T: Scalar>(model: &Classifier<T>) -> Vec<u8> {
    let d = model.dims;
    let mut out = Vec::new();
    out.extend_from_slice(MODEL_MAGIC);
    out.extend_from_slice(&MODEL_FORMAT_VERSION.to_le_bytes());
    for v in [d.h1, d.h2, d.h3, d.classes] {
        out.extend_from_slice(&(v as u32).to_le_bytes());
    }
    out.extend_from_slice(&model.seed.to_le_bytes());
    for layer in model.layers() {
        for tensor in layer.tensors() {
            for v in tensor {
                out.extend_from_slice(&v.to_f64_lossy().to_le_bytes());
            }
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::ModelFormat {
                path: self.path.to_path_buf(),
                message: format!("truncated at byte {}", self.bytes.len()),
            });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

pub fn decode_model<T: Scalar>(bytes: &[u8], path: &Path) -> Result<Classifier<T>> {
    let bad = |message: String| Error::ModelFormat {
        path: path.to_path_buf(),
        message,
    };
    let mut r = Reader { bytes, pos: 0, path };
    if r.take(MODEL_MAGIC.len()).map_err(|_| bad("missing magic header".into()))? != MODEL_MAGIC {
        return Err(Error::ModelVersion("unrecognized magic header".into()));
    }
    let version = r.u32()?;
    if version != MODEL_FORMAT_VERSION {
        return Err(Error::ModelVersion(format!(
            "format version {version}, expected {MODEL_FORMAT_VERSION}"
        )));
    }
    let mut dims = [0usize; 4];
    for d in &mut dims {
        *d = r.u32()? as usize;
    }
    let dims = Dims {
        h1: dims[0],
        h2: dims[1],
        h3: dims[2],
        classes: dims[3],
    };
    if dims.h1 == 0 || dims.h2 == 0 || dims.h3 == 0 || dims.classes < 2 {
        return Err(bad(format!("invalid dimensions {dims:?}")));
    }
    let seed = r.u64()?;
    let mut model = Classifier::zeros(dims, seed);
    for layer in model.layers_mut() {
        for tensor in layer.tensors_mut() {
            for v in tensor.iter_mut() {
                let x = r.f64()?;
                if !x.is_finite() {
                    return Err(bad("non-finite weight".into()));
                }
                *v = T::of(x);
            }
        }
    }
    if r.pos != bytes.len() {
        return Err(bad(format!("{} trailing bytes", bytes.len() - r.pos)));
    }
    Ok(model)
}

pub fn save_model<T: Scalar>(model: &Classifier<T>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_model(model)).map_err(|e| Error::io(path, e))
}

pub fn load_model<T: Scalar>(path: impl AsRef<Path>) -> Result<Classifier<T>> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_model(&bytes, path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::classifier::train::init_model;
    use crate::cloud::{generate_shape, ShapeClass};

    #[test]
    fn roundtrip_preserves_outputs() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.bin");
        let model: Classifier<f64> = init_model(Dims::default(), 42);
        save_model(&model, &path).unwrap();
        let back: Classifier<f64> = load_model(&path).unwrap();
        assert_eq!(back, model);
        for s in 0..10 {
            let c = generate_shape::<f64>(ShapeClass::ALL[s % 6], 64, s as u64).unwrap();
            assert_eq!(model.forward(&c), back.forward(&c));
        }
    }

    #[test]
    fn truncated_file_is_rejected() {
        let model: Classifier<f64> = init_model(Dims::default(), 1);
        let bytes = encode_model(&model);
        for cut in [0, 5, 20, bytes.len() / 2, bytes.len() - 1] {
            let r = decode_model::<f64>(&bytes[..cut], Path::new("t.bin"));
            assert!(matches!(r, Err(Error::ModelFormat { .. })), "cut at {cut}");
        }
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(decode_model::<f64>(&extra, Path::new("t.bin")).is_err());
    }

    #[test]
    fn wrong_magic_and_version() {
        let model: Classifier<f64> = init_model(Dims::default(), 1);
        let mut bytes = encode_model(&model);
        bytes[0] = b'X';
        assert!(matches!(
            decode_model::<f64>(&bytes, Path::new("m.bin")),
            Err(Error::ModelVersion(_))
        ));
        let mut bytes = encode_model(&model);
        bytes[8..12].copy_from_slice(&7u32.to_le_bytes());
        assert!(matches!(
            decode_model::<f64>(&bytes, Path::new("m.bin")),
            Err(Error::ModelVersion(m)) if m.contains('7')
        ));
    }
}
