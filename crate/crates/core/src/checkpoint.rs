//! Named-tensor checkpoint files.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! "VMCK" | version u32 = 1 | tensor count u32
//! per tensor: name length u16 | UTF-8 name | ndim u8 | dims u32 x ndim | f32 payload
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::nn::Tensor;

pub const MAGIC: &[u8; 4] = b"VMCK";
pub const VERSION: u32 = 1;
/// Bytes before the first tensor record.
pub const HEADER_LEN: u64 = 12;

/// Ordered table of uniquely named tensors.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Checkpoint {
    entries: Vec<(String, Tensor)>,
}

impl Checkpoint {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, name: impl Into<String>, tensor: Tensor) -> Result<()> {
        let name = name.into();
        if name.len() > u16::MAX as usize {
            return Err(Error::config(format!("tensor name of {} bytes is too long", name.len())));
        }
        if tensor.dims().len() > u8::MAX as usize {
            return Err(Error::config(format!("tensor {name} has too many dims")));
        }
        if self.get(&name).is_some() {
            return Err(Error::config(format!("duplicate tensor name {name}")));
        }
        self.entries.push((name, tensor));
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.entries.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    /// Removes and returns `name`, checking its shape.
    pub fn take(&mut self, name: &str, dims: &[usize]) -> Result<Tensor> {
        let pos = self
            .entries
            .iter()
            .position(|(n, _)| n == name)
            .ok_or_else(|| Error::Input(format!("checkpoint has no tensor {name}")))?;
        let (_, t) = self.entries.remove(pos);
        if t.dims() != dims {
            return Err(Error::Input(format!(
                "checkpoint tensor {name} has dims {:?}, expected {dims:?}",
                t.dims()
            )));
        }
        Ok(t)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|(n, _)| n.as_str())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn contains_prefix(&self, prefix: &str) -> bool {
        self.names().any(|n| n.starts_with(prefix))
    }

    pub fn extend(&mut self, other: Checkpoint) -> Result<()> {
        for (n, t) in other.entries {
            self.push(n, t)?;
        }
        Ok(())
    }

    pub fn parameter_count(&self) -> u64 {
        self.entries.iter().map(|(_, t)| t.len() as u64).sum()
    }

    /// Exact size of the encoded file.
    pub fn encoded_len(&self) -> u64 {
        HEADER_LEN
            + self
                .entries
                .iter()
                .map(|(n, t)| 2 + n.len() as u64 + 1 + 4 * t.dims().len() as u64 + 4 * t.len() as u64)
                .sum::<u64>()
    }

    pub fn write_to<W: Write>(&self, w: W) -> std::io::Result<()> {
        let view: Vec<(&str, &Tensor)> = self.entries.iter().map(|(n, t)| (n.as_str(), t)).collect();
        write_tensors(w, &view)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.encoded_len() as usize);
        self.write_to(&mut out).expect("writing to a Vec cannot fail");
        out
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_to(BufWriter::new(file)).map_err(|e| Error::io(path, e))
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        Self::read_from(bytes, bytes.len() as u64)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let len = file.metadata().map_err(|e| Error::io(path, e))?.len();
        Self::read_from(BufReader::new(file), len)
    }

    /// Decodes a checkpoint of `total_len` bytes. Sizes claimed by the file
    /// are validated against `total_len` before anything is allocated.
    pub fn read_from<R: Read>(reader: R, total_len: u64) -> Result<Self> {
        let mut r = Reader {
            inner: reader,
            offset: 0,
            total: total_len,
        };
        let magic: [u8; 4] = r.array()?;
        if &magic != MAGIC {
            return Err(Error::format(0, "bad magic, not a VMCK checkpoint"));
        }
        let version = u32::from_le_bytes(r.array()?);
        if version != VERSION {
            return Err(Error::format(
                4,
                format!("checkpoint version {version}, this build reads version {VERSION}"),
            ));
        }
        let count = u32::from_le_bytes(r.array()?);
        let mut ck = Checkpoint::new();
        for _ in 0..count {
            let at = r.offset;
            let name_len = u16::from_le_bytes(r.array()?) as usize;
            let name_bytes = r.bytes(name_len as u64)?;
            let name = String::from_utf8(name_bytes)
                .map_err(|_| Error::format(at + 2, "tensor name is not UTF-8"))?;
            let dims_at = r.offset;
            let ndim = r.array::<1>()?[0] as usize;
            if ndim == 0 {
                return Err(Error::format(dims_at, format!("tensor {name} has no dims")));
            }
            let mut dims = Vec::with_capacity(ndim);
            let mut numel: u64 = 1;
            for _ in 0..ndim {
                let d = u32::from_le_bytes(r.array()?) as u64;
                if d == 0 {
                    return Err(Error::format(dims_at, format!("tensor {name} has a zero dim")));
                }
                numel = numel
                    .checked_mul(d)
                    .ok_or_else(|| Error::format(dims_at, "element count overflows"))?;
                dims.push(d as usize);
            }
            let payload = numel
                .checked_mul(4)
                .filter(|&p| p <= r.remaining())
                .ok_or_else(|| {
                    Error::format(
                        r.offset,
                        format!("tensor {name} payload of {numel} floats runs past end of file"),
                    )
                })?;
            let raw = r.bytes(payload)?;
            let data: Vec<f32> = raw
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
                .collect();
            let tensor = Tensor::from_vec(&dims, data)
                .map_err(|e| Error::format(dims_at, e.to_string()))?;
            ck.push(name, tensor)
                .map_err(|e| Error::format(at, e.to_string()))?;
        }
        if r.remaining() != 0 {
            return Err(Error::format(
                r.offset,
                format!("{} trailing bytes after last tensor", r.remaining()),
            ));
        }
        Ok(ck)
    }
}

/// Writes borrowed tensors in checkpoint layout without building a
/// [`Checkpoint`]. Names must be unique and fit the format's length fields.
pub fn write_tensors<W: Write>(mut w: W, entries: &[(&str, &Tensor)]) -> std::io::Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(entries.len() as u32).to_le_bytes())?;
    let mut buf = Vec::with_capacity(4 * 4096);
    for (name, t) in entries {
        w.write_all(&(name.len() as u16).to_le_bytes())?;
        w.write_all(name.as_bytes())?;
        w.write_all(&[t.dims().len() as u8])?;
        for &d in t.dims() {
            w.write_all(&(d as u32).to_le_bytes())?;
        }
        for chunk in t.data().chunks(4096) {
            buf.clear();
            for v in chunk {
                buf.extend_from_slice(&v.to_le_bytes());
            }
            w.write_all(&buf)?;
        }
    }
    w.flush()
}

/// Saves borrowed tensors to `path`.
pub fn save_tensors(path: &Path, entries: &[(&str, &Tensor)]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    write_tensors(BufWriter::new(file), entries).map_err(|e| Error::io(path, e))
}

struct Reader<R> {
    inner: R,
    offset: u64,
    total: u64,
}

impl<R: Read> Reader<R> {
    fn remaining(&self) -> u64 {
        self.total.saturating_sub(self.offset)
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N]> {
        let mut buf = [0u8; N];
        self.fill(&mut buf)?;
        Ok(buf)
    }

    fn bytes(&mut self, n: u64) -> Result<Vec<u8>> {
        if n > self.remaining() {
            return Err(Error::format(
                self.offset,
                format!("truncated: need {n} bytes, {} left", self.remaining()),
            ));
        }
        let mut buf = vec![0u8; n as usize];
        self.fill(&mut buf)?;
        Ok(buf)
    }

    fn fill(&mut self, buf: &mut [u8]) -> Result<()> {
        if buf.len() as u64 > self.remaining() {
            return Err(Error::format(
                self.offset,
                format!("truncated: need {} bytes, {} left", buf.len(), self.remaining()),
            ));
        }
        self.inner
            .read_exact(buf)
            .map_err(|e| Error::format(self.offset, format!("read failed: {e}")))?;
        self.offset += buf.len() as u64;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    fn sample() -> Checkpoint {
        let mut rng = Rng::new(1);
        let mut ck = Checkpoint::new();
        ck.push("a.weight", Tensor::randn(&[3, 4], 1.0, &mut rng)).unwrap();
        ck.push("a.bias", Tensor::randn(&[3], 1.0, &mut rng)).unwrap();
        ck.push("ünïcode", Tensor::randn(&[2, 1, 3, 3], 1.0, &mut rng)).unwrap();
        ck
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let ck = sample();
        let bytes = ck.to_bytes();
        assert_eq!(bytes.len() as u64, ck.encoded_len());
        let back = Checkpoint::from_bytes(&bytes).unwrap();
        assert_eq!(back.to_bytes(), bytes);
        for name in ck.names() {
            let (a, b) = (ck.get(name).unwrap(), back.get(name).unwrap());
            let bits = |t: &Tensor| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
            assert_eq!(bits(a), bits(b));
        }
    }

    #[test]
    fn exact_header_bytes() {
        let mut ck = Checkpoint::new();
        ck.push("w", Tensor::from_vec(&[1], vec![1.0]).unwrap()).unwrap();
        let bytes = ck.to_bytes();
        let want: Vec<u8> = [
            &b"VMCK"[..],
            &[1, 0, 0, 0],
            &[1, 0, 0, 0],
            &[1, 0],
            b"w",
            &[1],
            &[1, 0, 0, 0],
            &1.0f32.to_le_bytes(),
        ]
        .concat();
        assert_eq!(bytes, want);
    }

    #[test]
    fn every_truncation_is_a_format_error() {
        let bytes = sample().to_bytes();
        for cut in 0..bytes.len() {
            match Checkpoint::from_bytes(&bytes[..cut]) {
                Err(Error::Format { .. }) => {}
                other => panic!("cut at {cut}: {other:?}"),
            }
        }
    }

    #[test]
    fn version_mismatch_rejected() {
        let mut bytes = sample().to_bytes();
        bytes[4] = 2;
        match Checkpoint::from_bytes(&bytes) {
            Err(Error::Format { offset: 4, msg }) => assert!(msg.contains("version 2")),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn duplicate_names_rejected() {
        let mut ck = Checkpoint::new();
        ck.push("x", Tensor::zeros(&[1])).unwrap();
        assert!(ck.push("x", Tensor::zeros(&[1])).is_err());
    }
}
