//! `FSVC` named-tensor files.
//!
//! Layout (little-endian): magic `FSVC`, u32 version 1, u64 global step,
//! u32 tensor count, then per tensor a u16 name length, UTF-8 name, u8 rank,
//! u32 dims and f32 values in row-major order. Optimizer moments go to a
//! sibling file whose name is the checkpoint's with `.opt` appended.

use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use super::params::ParamStore;
use super::tensor::{numel, Tensor};
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"FSVC";
const VERSION: u32 = 1;

/// Tensors in file order with their names.
pub type NamedTensors = Vec<(String, Tensor<f32>)>;

pub fn opt_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".opt");
    PathBuf::from(s)
}

pub fn encode_tensors(step: u64, tensors: &[(String, Tensor<f32>)]) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&step.to_le_bytes());
    out.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for (name, t) in tensors {
        let bytes = name.as_bytes();
        let len = u16::try_from(bytes.len())
            .map_err(|_| Error::Checkpoint(format!("tensor name too long: {name}")))?;
        let rank = u8::try_from(t.shape().len())
            .map_err(|_| Error::Checkpoint(format!("rank too high for `{name}`")))?;
        out.extend_from_slice(&len.to_le_bytes());
        out.extend_from_slice(bytes);
        out.push(rank);
        for &d in t.shape() {
            let d = u32::try_from(d).map_err(|_| Error::Checkpoint(format!("dim too large in `{name}`")))?;
            out.extend_from_slice(&d.to_le_bytes());
        }
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| Error::Checkpoint("truncated checkpoint".into()))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

pub fn decode_tensors(buf: &[u8]) -> Result<(u64, NamedTensors)> {
    let mut c = Cursor { buf, pos: 0 };
    if c.take(4)? != MAGIC {
        return Err(Error::Checkpoint("bad magic, not a FSVC file".into()));
    }
    let version = c.u32()?;
    if version != VERSION {
        return Err(Error::Checkpoint(format!("unsupported FSVC version {version}")));
    }
    let step = c.u64()?;
    let count = c.u32()? as usize;
    let mut tensors = Vec::with_capacity(count.min(1 << 16));
    for _ in 0..count {
        let len = c.u16()? as usize;
        let name = std::str::from_utf8(c.take(len)?)
            .map_err(|_| Error::Checkpoint("tensor name is not UTF-8".into()))?
            .to_string();
        let rank = c.u8()? as usize;
        let shape = (0..rank).map(|_| c.u32().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
        let n = numel(&shape);
        let raw = c.take(n.checked_mul(4).ok_or_else(|| Error::Checkpoint("tensor too large".into()))?)?;
        let data = raw
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
            .collect();
        tensors.push((name, Tensor::new(shape, data)?));
    }
    if c.pos != buf.len() {
        return Err(Error::Checkpoint("trailing bytes after last tensor".into()));
    }
    Ok((step, tensors))
}

/// Writes through a temporary file and a rename, so an interrupted write
/// never replaces an existing good file.
pub fn write_tensors(path: &Path, step: u64, tensors: &[(String, Tensor<f32>)]) -> Result<()> {
    let bytes = encode_tensors(step, tensors)?;
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(&bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn read_tensors(path: &Path) -> Result<(u64, NamedTensors)> {
    let mut buf = Vec::new();
    fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut buf))
        .map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))?;
    decode_tensors(&buf)
}

pub fn save_params(path: &Path, step: u64, store: &ParamStore<f32>) -> Result<()> {
    let tensors: Vec<(String, Tensor<f32>)> = store.iter().map(|(k, v)| (k.to_string(), v.clone())).collect();
    write_tensors(path, step, &tensors)
}

/// Loads values into `store`, which must hold exactly the same names and
/// shapes. Returns the saved step.
pub fn load_params(path: &Path, store: &mut ParamStore<f32>) -> Result<u64> {
    let (step, tensors) = read_tensors(path)?;
    if tensors.len() != store.len() {
        return Err(Error::Checkpoint(format!(
            "checkpoint holds {} tensors, model expects {}",
            tensors.len(),
            store.len()
        )));
    }
    for (name, t) in tensors {
        let slot = store
            .get_mut(&name)
            .ok_or_else(|| Error::Checkpoint(format!("unexpected tensor `{name}`")))?;
        if slot.shape() != t.shape() {
            return Err(Error::Checkpoint(format!(
                "`{name}` has shape {:?}, model expects {:?}",
                t.shape(),
                slot.shape()
            )));
        }
        *slot = t;
    }
    Ok(step)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_layout() {
        let t = Tensor::from_f64(&[2], &[1.0, -0.5]).unwrap();
        let bytes = encode_tensors(7, &[("ab".into(), t)]).unwrap();
        assert_eq!(&bytes[..4], b"FSVC");
        assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), 1);
        assert_eq!(u64::from_le_bytes(bytes[8..16].try_into().unwrap()), 7);
        assert_eq!(u32::from_le_bytes(bytes[16..20].try_into().unwrap()), 1);
        assert_eq!(u16::from_le_bytes(bytes[20..22].try_into().unwrap()), 2);
        assert_eq!(&bytes[22..24], b"ab");
        assert_eq!(bytes[24], 1);
        assert_eq!(bytes.len(), 24 + 1 + 4 + 8);
    }

    #[test]
    fn corrupt_files_rejected() {
        let t = Tensor::from_f64(&[3], &[1.0, 2.0, 3.0]).unwrap();
        let bytes = encode_tensors(1, &[("w".into(), t)]).unwrap();
        assert!(decode_tensors(&bytes[..bytes.len() - 1]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(decode_tensors(&bad).is_err());
        let mut extra = bytes;
        extra.push(0);
        assert!(decode_tensors(&extra).is_err());
    }

    #[test]
    fn load_checks_shapes() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.rasv");
        let mut a = ParamStore::<f32>::new();
        a.insert("w", Tensor::zeros(&[2, 2])).unwrap();
        save_params(&path, 3, &a).unwrap();
        let mut b = ParamStore::<f32>::new();
        b.insert("w", Tensor::zeros(&[4])).unwrap();
        assert!(matches!(load_params(&path, &mut b), Err(Error::Checkpoint(_))));
        assert_eq!(load_params(&path, &mut a).unwrap(), 3);
        assert_eq!(opt_path(&path), dir.path().join("m.rasv.opt"));
    }
}
