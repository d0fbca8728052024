use std::fmt;

/// Largest spatial resolution whose coordinates fit the packed key.
pub const MAX_RESOLUTION: u32 = 1024;
/// Largest frame count whose indices fit the packed key.
pub const MAX_FRAMES: u32 = 4096;

/// A voxel position in spacetime. The derived ordering is lexicographic in
/// `(t, x, y, z)`, which is the canonical order of sparse entries.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct VoxelCoord4D {
    pub t: u16,
    pub x: u16,
    pub y: u16,
    pub z: u16,
}

impl VoxelCoord4D {
    pub const fn new(t: u16, x: u16, y: u16, z: u16) -> Self {
        VoxelCoord4D { t, x, y, z }
    }

    /// Bit-packs into one word: 12 bits of time, 10 bits per axis. Packing
    /// preserves the lexicographic order.
    pub fn pack(self) -> u64 {
        ((self.t as u64) << 30) | ((self.x as u64) << 20) | ((self.y as u64) << 10) | self.z as u64
    }

    pub fn unpack(key: u64) -> Self {
        VoxelCoord4D {
            t: ((key >> 30) & 0xFFF) as u16,
            x: ((key >> 20) & 0x3FF) as u16,
            y: ((key >> 10) & 0x3FF) as u16,
            z: (key & 0x3FF) as u16,
        }
    }

    pub fn xyz(self) -> [u16; 3] {
        [self.x, self.y, self.z]
    }

    pub fn with_t(self, t: u16) -> Self {
        VoxelCoord4D { t, ..self }
    }

    pub fn in_bounds(self, resolution: u32, frames: u32) -> bool {
        (self.t as u32) < frames
            && (self.x as u32) < resolution
            && (self.y as u32) < resolution
            && (self.z as u32) < resolution
    }
}

impl fmt::Display for VoxelCoord4D {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "(t={}, x={}, y={}, z={})", self.t, self.x, self.y, self.z)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn packing_round_trips_and_keeps_order(
            a in (0u16..4096, 0u16..1024, 0u16..1024, 0u16..1024),
            b in (0u16..4096, 0u16..1024, 0u16..1024, 0u16..1024),
        ) {
            let ca = VoxelCoord4D::new(a.0, a.1, a.2, a.3);
            let cb = VoxelCoord4D::new(b.0, b.1, b.2, b.3);
            prop_assert_eq!(VoxelCoord4D::unpack(ca.pack()), ca);
            prop_assert_eq!(ca.cmp(&cb), ca.pack().cmp(&cb.pack()));
        }
    }
}
