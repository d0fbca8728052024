//! `.sst` binary format, all integers little-endian:
//!
//! ```text
//! "SS4D" | u16 version = 1 | u16 flags = 0 | u32 N | u32 T | u32 C | u64 L
//! L x ( u16 t | u16 x | u16 y | u16 z | C x f32 )
//! ```
//!
//! Records are written in canonical order. Decoding validates everything a
//! built tensor guarantees, so a decoded file is always a valid tensor.

use std::io::{Read, Write};
use std::path::Path;
use std::sync::Arc;

use super::coord::VoxelCoord4D;
use super::structure::Structure;
use super::tensor::SparseSpacetimeTensor;
use crate::error::{Error, Result};

pub const SST_MAGIC: &[u8; 4] = b"SS4D";
pub const SST_VERSION: u16 = 1;
const HEADER_LEN: usize = 4 + 2 + 2 + 4 + 4 + 4 + 8;

pub fn encode_sst(sst: &SparseSpacetimeTensor) -> Vec<u8> {
    let c = sst.channels();
    let mut out = Vec::with_capacity(HEADER_LEN + sst.len() * (8 + 4 * c));
    out.extend_from_slice(SST_MAGIC);
    out.extend_from_slice(&SST_VERSION.to_le_bytes());
    out.extend_from_slice(&0u16.to_le_bytes());
    out.extend_from_slice(&sst.resolution().to_le_bytes());
    out.extend_from_slice(&sst.frames().to_le_bytes());
    out.extend_from_slice(&(c as u32).to_le_bytes());
    out.extend_from_slice(&(sst.len() as u64).to_le_bytes());
    for (coord, f) in sst.entries() {
        for v in [coord.t, coord.x, coord.y, coord.z] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        for v in f {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::format("sst", "unexpected end of data"));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
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

pub fn decode_sst(bytes: &[u8]) -> Result<SparseSpacetimeTensor> {
    let mut cur = Cursor { buf: bytes, pos: 0 };
    if cur.take(4)? != SST_MAGIC {
        return Err(Error::format("sst", "bad magic"));
    }
    let version = cur.u16()?;
    if version != SST_VERSION {
        return Err(Error::format("sst", format!("unsupported version {version}")));
    }
    let flags = cur.u16()?;
    if flags != 0 {
        return Err(Error::format("sst", format!("unknown flags {flags:#x}")));
    }
    let n = cur.u32()?;
    let t = cur.u32()?;
    let c = cur.u32()? as usize;
    let l = cur.u64()?;
    if c == 0 {
        return Err(Error::format("sst", "zero channels"));
    }
    Structure::check_dims(n, t)?;
    let record = 8 + 4 * c as u64;
    let remaining = (bytes.len() - cur.pos) as u64;
    if l.checked_mul(record) != Some(remaining) {
        return Err(Error::format(
            "sst",
            format!("{l} records of {record} bytes do not match {remaining} payload bytes"),
        ));
    }
    let l = l as usize;
    let mut coords = Vec::with_capacity(l);
    let mut features = Vec::with_capacity(l * c);
    for _ in 0..l {
        let coord = VoxelCoord4D::new(cur.u16()?, cur.u16()?, cur.u16()?, cur.u16()?);
        coords.push(coord);
        for chunk in cur.take(4 * c)?.chunks_exact(4) {
            features.push(f32::from_le_bytes(chunk.try_into().unwrap()));
        }
    }
    let structure = Structure::from_sorted(n, t, coords)?;
    SparseSpacetimeTensor::new(Arc::new(structure), c, features)
}

pub fn write_sst(path: impl AsRef<Path>, sst: &SparseSpacetimeTensor) -> Result<()> {
    let mut f = std::fs::File::create(path)?;
    f.write_all(&encode_sst(sst))?;
    Ok(())
}

pub fn read_sst(path: impl AsRef<Path>) -> Result<SparseSpacetimeTensor> {
    let mut buf = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut buf)?;
    decode_sst(&buf)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sst::build_sparse;
    use proptest::prelude::*;

    #[test]
    fn header_layout() {
        let s = build_sparse(vec![(VoxelCoord4D::new(1, 2, 3, 4), vec![0.5, -1.0])], 8, 2, 2).unwrap();
        let b = encode_sst(&s);
        assert_eq!(&b[0..4], b"SS4D");
        assert_eq!(u16::from_le_bytes([b[4], b[5]]), 1);
        assert_eq!(u32::from_le_bytes(b[8..12].try_into().unwrap()), 8);
        assert_eq!(u32::from_le_bytes(b[12..16].try_into().unwrap()), 2);
        assert_eq!(u32::from_le_bytes(b[16..20].try_into().unwrap()), 2);
        assert_eq!(u64::from_le_bytes(b[20..28].try_into().unwrap()), 1);
        assert_eq!(u16::from_le_bytes([b[28], b[29]]), 1);
        assert_eq!(u16::from_le_bytes([b[34], b[35]]), 4);
        assert_eq!(f32::from_le_bytes(b[36..40].try_into().unwrap()), 0.5);
        assert_eq!(b.len(), 28 + 8 + 8);
    }

    #[test]
    fn rejects_malformed_input() {
        let s = build_sparse(
            vec![
                (VoxelCoord4D::new(0, 0, 0, 0), vec![1.0]),
                (VoxelCoord4D::new(0, 0, 0, 1), vec![2.0]),
            ],
            4,
            1,
            1,
        )
        .unwrap();
        let good = encode_sst(&s);
        assert!(decode_sst(&good[..good.len() - 1]).is_err());
        let mut bad = good.clone();
        bad[0] = b'X';
        assert!(decode_sst(&bad).is_err());
        let mut dup = good.clone();
        // Second record's z: 1 -> 0 duplicates the first coordinate.
        dup[28 + 12 + 6] = 0;
        assert!(matches!(decode_sst(&dup), Err(Error::DuplicateCoord(_))));
        let mut huge = good.clone();
        huge[20..28].copy_from_slice(&u64::MAX.to_le_bytes());
        assert!(decode_sst(&huge).is_err());
        let mut nan = good;
        nan[36..40].copy_from_slice(&f32::NAN.to_le_bytes());
        assert!(decode_sst(&nan).is_err());
    }

    proptest! {
        #[test]
        fn encode_decode_encode_is_byte_identical(
            raw in proptest::collection::btree_set((0u16..3, 0u16..5, 0u16..5, 0u16..5), 0..30),
            vals in proptest::collection::vec(-1e3f32..1e3, 90),
        ) {
            let entries: Vec<_> = raw
                .into_iter()
                .enumerate()
                .map(|(i, (t, x, y, z))| (VoxelCoord4D::new(t, x, y, z), vals[3 * i..3 * i + 3].to_vec()))
                .collect();
            let s = build_sparse(entries, 5, 3, 3).unwrap();
            let bytes = encode_sst(&s);
            let back = decode_sst(&bytes).unwrap();
            prop_assert_eq!(&back, &s);
            prop_assert_eq!(encode_sst(&back), bytes);
        }
    }
}
