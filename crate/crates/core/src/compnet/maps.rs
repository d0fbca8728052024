use std::sync::Arc;

use crate::error::{Error, Result};
use crate::sst::{Structure, VoxelCoord4D};

/// Child slot of a fine voxel inside its 2×2×2 parent: `dx<<2 | dy<<1 | dz`.
pub fn child_offset(c: VoxelCoord4D) -> usize {
    (((c.x & 1) << 2) | ((c.y & 1) << 1) | (c.z & 1)) as usize
}

/// Coordinate map of one stride-2 spatial downsampling.
#[derive(Debug, Clone)]
pub struct DownsampleMap {
    pub fine: Arc<Structure>,
    pub coarse: Arc<Structure>,
    /// `coarse_row · 8 + offset` → fine row.
    pub(crate) children: Arc<[Option<u32>]>,
    /// Fine row → `coarse_row · 8 + offset`.
    pub(crate) up_index: Arc<[Option<u32>]>,
}

impl DownsampleMap {
    pub fn new(fine: &Arc<Structure>) -> Result<Self> {
        let n = fine.resolution();
        if n % 2 != 0 {
            return Err(Error::OddResolution(n));
        }
        let half = |c: &VoxelCoord4D| VoxelCoord4D::new(c.t, c.x / 2, c.y / 2, c.z / 2);
        let mut parents: Vec<VoxelCoord4D> = fine.coords().iter().map(half).collect();
        parents.sort_unstable();
        parents.dedup();
        let coarse = Structure::from_sorted(n / 2, fine.frames(), parents)?;
        let mut children = vec![None; coarse.len() * 8];
        let mut up_index = Vec::with_capacity(fine.len());
        for (row, c) in fine.coords().iter().enumerate() {
            let p = coarse.find(half(c)).expect("parent registered above");
            let slot = p * 8 + child_offset(*c);
            children[slot] = Some(row as u32);
            up_index.push(Some(slot as u32));
        }
        Ok(DownsampleMap {
            fine: fine.clone(),
            coarse: Arc::new(coarse),
            children: children.into(),
            up_index: up_index.into(),
        })
    }
}

/// Rows of `(t − 1, xyz)`, `(t, xyz)`, `(t + 1, xyz)` for every row.
#[derive(Debug, Clone)]
pub struct TemporalNeighbors {
    pub structure: Arc<Structure>,
    pub(crate) index: Arc<[Option<u32>]>,
}

impl TemporalNeighbors {
    pub fn new(s: &Arc<Structure>) -> Self {
        let mut index = Vec::with_capacity(s.len() * 3);
        for (row, c) in s.coords().iter().enumerate() {
            let prev = c.t.checked_sub(1).and_then(|t| s.find(c.with_t(t)));
            let next = s.find(c.with_t(c.t + 1));
            index.push(prev.map(|r| r as u32));
            index.push(Some(row as u32));
            index.push(next.map(|r| r as u32));
        }
        TemporalNeighbors {
            structure: s.clone(),
            index: index.into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PackFlag {
    Both,
    FirstOnly,
    SecondOnly,
}

/// Which members of each frame pair were active before packing.
#[derive(Debug, Clone)]
pub struct PackState {
    pub fine: Arc<Structure>,
    pub packed: Arc<Structure>,
    pub flags: Vec<PackFlag>,
    /// `packed_row · 2 + member` → fine row.
    pub(crate) members: Arc<[Option<u32>]>,
    /// Fine row → `packed_row · 2 + member`.
    pub(crate) unpack_index: Arc<[Option<u32>]>,
}

impl PackState {
    pub fn new(fine: &Arc<Structure>) -> Result<Self> {
        let t = fine.frames();
        if t % 2 != 0 {
            return Err(Error::OddFrameCount(t));
        }
        let pair = |c: &VoxelCoord4D| c.with_t(c.t / 2);
        let mut packed: Vec<VoxelCoord4D> = fine.coords().iter().map(pair).collect();
        packed.sort_unstable();
        packed.dedup();
        let packed = Structure::from_sorted(fine.resolution(), t / 2, packed)?;
        let mut members = vec![None; packed.len() * 2];
        let mut unpack_index = Vec::with_capacity(fine.len());
        for (row, c) in fine.coords().iter().enumerate() {
            let p = packed.find(pair(c)).expect("pair registered above");
            let slot = p * 2 + (c.t % 2) as usize;
            members[slot] = Some(row as u32);
            unpack_index.push(Some(slot as u32));
        }
        let flags = members
            .chunks(2)
            .map(|m| match (m[0], m[1]) {
                (Some(_), Some(_)) => PackFlag::Both,
                (Some(_), None) => PackFlag::FirstOnly,
                _ => PackFlag::SecondOnly,
            })
            .collect();
        Ok(PackState {
            fine: fine.clone(),
            packed: Arc::new(packed),
            flags,
            members: members.into(),
            unpack_index: unpack_index.into(),
        })
    }

    /// Coordinates restored by unpacking, straight from the flags.
    pub fn unpacked_coords(&self) -> Vec<VoxelCoord4D> {
        let mut out = Vec::new();
        for (c, f) in self.packed.coords().iter().zip(&self.flags) {
            if *f != PackFlag::SecondOnly {
                out.push(c.with_t(c.t * 2));
            }
            if *f != PackFlag::FirstOnly {
                out.push(c.with_t(c.t * 2 + 1));
            }
        }
        out.sort_unstable();
        out
    }
}
