//! Binary checkpoint: `"VPET"`, `u32` version, `u32` entry count, then for
//! each entry a `u32`-length name, `u32` rank, `u64` dims, `u64` payload
//! length and little-endian `f64` values. All integers are little-endian.

use std::io::{Read, Write};
use std::path::Path;

use super::{AutodiffError, Tensor};

const MAGIC: &[u8; 4] = b"VPET";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Ordered named tensors.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Checkpoint {
    pub entries: Vec<(String, Tensor)>,
}

impl Checkpoint {
    pub fn new() -> Checkpoint {
        Checkpoint::default()
    }

    pub fn push(&mut self, name: impl Into<String>, t: Tensor) {
        self.entries.push((name.into(), t));
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.entries.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn write_to(&self, mut w: impl Write) -> Result<(), AutodiffError> {
        w.write_all(MAGIC)?;
        w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
        w.write_all(&(self.entries.len() as u32).to_le_bytes())?;
        for (name, t) in &self.entries {
            w.write_all(&(name.len() as u32).to_le_bytes())?;
            w.write_all(name.as_bytes())?;
            w.write_all(&(t.shape().len() as u32).to_le_bytes())?;
            for &d in t.shape() {
                w.write_all(&(d as u64).to_le_bytes())?;
            }
            w.write_all(&(t.len() as u64).to_le_bytes())?;
            let mut buf = Vec::with_capacity(t.len() * 8);
            for v in t.data() {
                buf.extend_from_slice(&v.to_le_bytes());
            }
            w.write_all(&buf)?;
        }
        Ok(())
    }

    pub fn read_from(mut r: impl Read) -> Result<Checkpoint, AutodiffError> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(AutodiffError::Checkpoint("bad magic bytes".into()));
        }
        let version = read_u32(&mut r)?;
        if version != CHECKPOINT_VERSION {
            return Err(AutodiffError::Checkpoint(format!("unsupported version {version}")));
        }
        let count = read_u32(&mut r)? as usize;
        let mut entries = Vec::with_capacity(count.min(1 << 16));
        for _ in 0..count {
            let len = read_u32(&mut r)? as usize;
            let mut name = vec![0u8; len];
            r.read_exact(&mut name)?;
            let name = String::from_utf8(name).map_err(|_| AutodiffError::Checkpoint("entry name is not UTF-8".into()))?;
            let rank = read_u32(&mut r)? as usize;
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                shape.push(read_u64(&mut r)? as usize);
            }
            let n = read_u64(&mut r)? as usize;
            let mut bytes = vec![0u8; n * 8];
            r.read_exact(&mut bytes)?;
            let data = bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
            let t = Tensor::new(shape, data).map_err(|e| AutodiffError::Checkpoint(format!("entry {name}: {e}")))?;
            entries.push((name, t));
        }
        Ok(Checkpoint { entries })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), AutodiffError> {
        let mut buf = Vec::new();
        self.write_to(&mut buf)?;
        std::fs::write(path, buf)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Checkpoint, AutodiffError> {
        Checkpoint::read_from(std::io::BufReader::new(std::fs::File::open(path)?))
    }
}

fn read_u32(r: &mut impl Read) -> Result<u32, AutodiffError> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64(r: &mut impl Read) -> Result<u64, AutodiffError> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}
