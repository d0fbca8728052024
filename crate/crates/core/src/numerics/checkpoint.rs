use std::path::Path;

use super::dense::DenseTensor;
use crate::error::{Error, Result};

pub const CKPT_MAGIC: &[u8; 4] = b"SS4P";
pub const CKPT_VERSION: u32 = 1;
const MAX_RANK: usize = 8;

pub type NamedTensors = Vec<(String, DenseTensor<f32>)>;

pub fn encode_ckpt(tensors: &[(String, DenseTensor<f32>)]) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(CKPT_MAGIC);
    out.extend_from_slice(&CKPT_VERSION.to_le_bytes());
    out.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for (name, t) in tensors {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
        for &d in t.shape() {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len()).ok_or_else(|| Error::format("ckpt", "truncated"))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }
}

pub fn decode_ckpt(bytes: &[u8]) -> Result<NamedTensors> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(4)? != CKPT_MAGIC {
        return Err(Error::format("ckpt", "bad magic"));
    }
    let version = r.u32()?;
    if version != CKPT_VERSION {
        return Err(Error::format("ckpt", format!("unsupported version {version}")));
    }
    let count = r.u32()? as usize;
    let mut out = Vec::with_capacity(count.min(r.remaining() / 12));
    for _ in 0..count {
        let len = r.u32()? as usize;
        let name = std::str::from_utf8(r.take(len)?).map_err(|_| Error::format("ckpt", "name is not UTF-8"))?.to_string();
        let rank = r.u32()? as usize;
        if rank > MAX_RANK {
            return Err(Error::format("ckpt", format!("{name}: rank {rank}")));
        }
        let mut shape = Vec::with_capacity(rank);
        let mut numel = 1usize;
        for _ in 0..rank {
            let d = r.u32()? as usize;
            numel = numel.checked_mul(d).ok_or_else(|| Error::format("ckpt", "size overflow"))?;
            shape.push(d);
        }
        let bytes_needed = numel.checked_mul(4).filter(|&b| b <= r.remaining()).ok_or_else(|| Error::format("ckpt", "truncated"))?;
        let data: Vec<f32> = r.take(bytes_needed)?.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes"))).collect();
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::format("ckpt", format!("{name}: non-finite value")));
        }
        out.push((name, DenseTensor::new(shape, data)?));
    }
    if r.remaining() != 0 {
        return Err(Error::format("ckpt", "trailing bytes"));
    }
    Ok(out)
}

pub fn write_ckpt(path: impl AsRef<Path>, tensors: &[(String, DenseTensor<f32>)]) -> Result<()> {
    std::fs::write(path, encode_ckpt(tensors))?;
    Ok(())
}

pub fn read_ckpt(path: impl AsRef<Path>) -> Result<NamedTensors> {
    decode_ckpt(&std::fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn layout() {
        let t = DenseTensor::new(vec![2], vec![1.0f32, -2.0]).unwrap();
        let bytes = encode_ckpt(&[("w".into(), t)]);
        assert_eq!(&bytes[..4], b"SS4P");
        assert_eq!(bytes.len(), 4 + 4 + 4 + 4 + 1 + 4 + 4 + 8);
        assert_eq!(&bytes[bytes.len() - 4..], &(-2.0f32).to_le_bytes());
    }

    #[test]
    fn rejects_malformed() {
        assert!(decode_ckpt(b"SS4X\x01\0\0\0\0\0\0\0").is_err());
        assert!(decode_ckpt(b"SS4P\x02\0\0\0\0\0\0\0").is_err());
        assert!(decode_ckpt(b"SS4P\x01\0\0\0\x01\0\0\0").is_err());
        let mut ok = encode_ckpt(&[]);
        assert!(decode_ckpt(&ok).unwrap().is_empty());
        ok.push(0);
        assert!(decode_ckpt(&ok).is_err());
    }

    proptest! {
        #[test]
        fn round_trip_is_byte_identical(
            items in prop::collection::vec(("[a-z.]{0,12}", prop::collection::vec(0usize..4, 0..4), any::<u32>()), 0..5)
        ) {
            let tensors: NamedTensors = items.into_iter().map(|(name, shape, seed)| {
                let n: usize = shape.iter().product();
                let data = (0..n).map(|i| ((seed as usize + i) % 97) as f32 * 0.37 - 11.0).collect();
                (name, DenseTensor::new(shape, data).unwrap())
            }).collect();
            let bytes = encode_ckpt(&tensors);
            let back = decode_ckpt(&bytes).unwrap();
            prop_assert_eq!(&back, &tensors);
            prop_assert_eq!(encode_ckpt(&back), bytes);
        }
    }
}
