use std::collections::HashMap;
use std::ops::Range;

use super::coord::{VoxelCoord4D, MAX_FRAMES, MAX_RESOLUTION};
use crate::error::{Error, Result};

/// The active coordinate set of a sparse spacetime tensor: sorted, unique,
/// in bounds, with an O(1) lookup from packed coordinate to row.
#[derive(Debug, Clone)]
pub struct Structure {
    resolution: u32,
    frames: u32,
    coords: Vec<VoxelCoord4D>,
    index: HashMap<u64, u32>,
    frame_offsets: Vec<usize>,
}

impl PartialEq for Structure {
    fn eq(&self, other: &Self) -> bool {
        self.resolution == other.resolution && self.frames == other.frames && self.coords == other.coords
    }
}

impl Structure {
    pub(crate) fn check_dims(resolution: u32, frames: u32) -> Result<()> {
        if resolution == 0 || frames == 0 {
            return Err(Error::InvalidArgument(format!(
                "resolution and frame count must be positive (got N={resolution}, T={frames})"
            )));
        }
        if resolution > MAX_RESOLUTION || frames > MAX_FRAMES {
            return Err(Error::InvalidArgument(format!(
                "N={resolution}, T={frames} exceeds the supported {MAX_RESOLUTION} x {MAX_FRAMES}"
            )));
        }
        Ok(())
    }

    /// Builds from coordinates already in strictly increasing order.
    pub fn from_sorted(resolution: u32, frames: u32, coords: Vec<VoxelCoord4D>) -> Result<Self> {
        Self::check_dims(resolution, frames)?;
        for (i, c) in coords.iter().enumerate() {
            if !c.in_bounds(resolution, frames) {
                return Err(Error::OutOfBounds(*c));
            }
            if i > 0 {
                match coords[i - 1].cmp(c) {
                    std::cmp::Ordering::Less => {}
                    std::cmp::Ordering::Equal => return Err(Error::DuplicateCoord(*c)),
                    std::cmp::Ordering::Greater => {
                        return Err(Error::InvalidArgument("coordinates are not sorted".into()))
                    }
                }
            }
        }
        Ok(Self::new_unchecked(resolution, frames, coords))
    }

    /// Sorts, then validates. Duplicates are reported, never merged.
    pub fn from_unsorted(resolution: u32, frames: u32, mut coords: Vec<VoxelCoord4D>) -> Result<Self> {
        coords.sort_unstable();
        Self::from_sorted(resolution, frames, coords)
    }

    pub(crate) fn new_unchecked(resolution: u32, frames: u32, coords: Vec<VoxelCoord4D>) -> Self {
        let index = coords
            .iter()
            .enumerate()
            .map(|(i, c)| (c.pack(), i as u32))
            .collect();
        let mut frame_offsets = vec![0usize; frames as usize + 1];
        for c in &coords {
            frame_offsets[c.t as usize + 1] += 1;
        }
        for t in 0..frames as usize {
            frame_offsets[t + 1] += frame_offsets[t];
        }
        Structure {
            resolution,
            frames,
            coords,
            index,
            frame_offsets,
        }
    }

    pub fn empty(resolution: u32, frames: u32) -> Result<Self> {
        Self::from_sorted(resolution, frames, Vec::new())
    }

    pub fn resolution(&self) -> u32 {
        self.resolution
    }

    pub fn frames(&self) -> u32 {
        self.frames
    }

    pub fn len(&self) -> usize {
        self.coords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    pub fn coords(&self) -> &[VoxelCoord4D] {
        &self.coords
    }

    pub fn find(&self, c: VoxelCoord4D) -> Option<usize> {
        if !c.in_bounds(self.resolution, self.frames) {
            return None;
        }
        self.index.get(&c.pack()).map(|&i| i as usize)
    }

    pub fn contains(&self, c: VoxelCoord4D) -> bool {
        self.find(c).is_some()
    }

    /// Row range holding the entries of frame `t`.
    pub fn frame_range(&self, t: usize) -> Range<usize> {
        self.frame_offsets[t]..self.frame_offsets[t + 1]
    }

    pub fn frame_lengths(&self) -> Vec<usize> {
        self.frame_offsets.windows(2).map(|w| w[1] - w[0]).collect()
    }

    /// Frame index of every row.
    pub fn time_positions(&self) -> Vec<f64> {
        self.coords.iter().map(|c| c.t as f64).collect()
    }
}
