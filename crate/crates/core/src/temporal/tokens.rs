use std::ops::Range;
use std::sync::Arc;

use super::window::{partition_windows, TemporalWindowConfig};
use crate::error::{Error, Result};
use crate::numerics::{AttnGroup, DenseTensor};
use crate::sst::{SparseSpacetimeTensor, Structure};

/// Row layout of a frame-major token matrix: frame `t` owns rows
/// `offsets[t]..offsets[t + 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenLayout {
    offsets: Vec<usize>,
    positions: Vec<f32>,
}

impl TokenLayout {
    pub fn from_frame_lengths(lengths: &[usize]) -> Self {
        let mut offsets = Vec::with_capacity(lengths.len() + 1);
        offsets.push(0);
        let mut positions = Vec::new();
        for (t, &n) in lengths.iter().enumerate() {
            offsets.push(offsets[t] + n);
            positions.extend(std::iter::repeat_n(t as f32, n));
        }
        TokenLayout { offsets, positions }
    }

    pub fn from_structure(s: &Structure) -> Self {
        Self::from_frame_lengths(&s.frame_lengths())
    }

    /// `frames` frames of `per_frame` tokens each.
    pub fn uniform(frames: usize, per_frame: usize) -> Self {
        Self::from_frame_lengths(&vec![per_frame; frames])
    }

    pub fn frames(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn rows(&self) -> usize {
        *self.offsets.last().unwrap_or(&0)
    }

    pub fn frame_range(&self, t: usize) -> Range<usize> {
        self.offsets[t]..self.offsets[t + 1]
    }

    pub fn frame_lengths(&self) -> Vec<usize> {
        self.offsets.windows(2).map(|w| w[1] - w[0]).collect()
    }

    /// Frame index of every row, as RoPE positions.
    pub fn positions(&self) -> &[f32] {
        &self.positions
    }

    /// One attention group per non-empty frame.
    pub fn frame_groups(&self) -> Arc<[AttnGroup]> {
        (0..self.frames())
            .map(|t| self.frame_range(t))
            .filter(|r| !r.is_empty())
            .map(AttnGroup::square)
            .collect()
    }

    /// One group per non-empty temporal window, spanning every token of
    /// every frame inside it.
    pub fn window_groups(&self, cfg: TemporalWindowConfig) -> Arc<[AttnGroup]> {
        partition_windows(self.frames() as u32, cfg)
            .into_iter()
            .map(|w| self.offsets[w.start as usize]..self.offsets[w.end as usize])
            .filter(|r| !r.is_empty())
            .map(AttnGroup::square)
            .collect()
    }

    /// Frame `t`'s rows attend to `cond` rows `t·per_frame..(t+1)·per_frame`.
    pub fn cross_groups(&self, per_frame: usize) -> Arc<[AttnGroup]> {
        (0..self.frames())
            .filter(|&t| !self.frame_range(t).is_empty())
            .map(|t| AttnGroup {
                q: self.frame_range(t),
                kv: t * per_frame..(t + 1) * per_frame,
            })
            .collect()
    }
}

/// Tokens with their frame index and spatial position.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenBatch {
    pub frames: Vec<u32>,
    pub coords: Vec<[u16; 3]>,
    /// `[L, C]`.
    pub features: DenseTensor<f32>,
    pub frame_count: u32,
}

impl TokenBatch {
    pub fn new(frames: Vec<u32>, coords: Vec<[u16; 3]>, features: DenseTensor<f32>, frame_count: u32) -> Result<Self> {
        if frames.len() != coords.len() || features.shape().len() != 2 || features.rows() != frames.len() {
            return Err(Error::shape(format!("{} frames, {} coords, features {:?}", frames.len(), coords.len(), features.shape())));
        }
        if let Some(&t) = frames.iter().find(|&&t| t >= frame_count) {
            return Err(Error::FrameOutOfRange { t: t as usize, frames: frame_count as usize });
        }
        Ok(TokenBatch { frames, coords, features, frame_count })
    }

    pub fn from_sparse(x: &SparseSpacetimeTensor) -> Self {
        let frames = x.coords().iter().map(|c| c.t as u32).collect();
        let coords = x.coords().iter().map(|c| [c.x, c.y, c.z]).collect();
        let features = DenseTensor::new(vec![x.len(), x.channels()], x.features().to_vec()).expect("shape");
        TokenBatch { frames, coords, features, frame_count: x.frames() }
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn width(&self) -> usize {
        self.features.cols()
    }

    /// Stable permutation that groups tokens frame by frame.
    pub fn rearrange_order(&self) -> Vec<usize> {
        let mut order: Vec<usize> = (0..self.len()).collect();
        order.sort_by_key(|&i| self.frames[i]);
        order
    }

    fn permuted(&self, order: &[usize]) -> Self {
        let c = self.width();
        let src = self.features.data();
        let mut data = Vec::with_capacity(src.len());
        for &i in order {
            data.extend_from_slice(&src[i * c..(i + 1) * c]);
        }
        TokenBatch {
            frames: order.iter().map(|&i| self.frames[i]).collect(),
            coords: order.iter().map(|&i| self.coords[i]).collect(),
            features: DenseTensor::new(vec![order.len(), c], data).expect("shape"),
            frame_count: self.frame_count,
        }
    }

    /// Frame-major copy plus the permutation that produced it.
    pub fn rearrange(&self) -> (TokenBatch, Vec<usize>) {
        let order = self.rearrange_order();
        (self.permuted(&order), order)
    }

    /// Inverse of [`TokenBatch::rearrange`].
    pub fn restore(&self, order: &[usize]) -> Result<TokenBatch> {
        if order.len() != self.len() {
            return Err(Error::StateMismatch);
        }
        let mut inverse = vec![usize::MAX; order.len()];
        for (pos, &i) in order.iter().enumerate() {
            if i >= order.len() || inverse[i] != usize::MAX {
                return Err(Error::StateMismatch);
            }
            inverse[i] = pos;
        }
        Ok(self.permuted(&inverse))
    }

    /// Layout of a frame-major batch.
    pub fn layout(&self) -> Result<TokenLayout> {
        if self.frames.windows(2).any(|w| w[0] > w[1]) {
            return Err(Error::InvalidArgument("tokens are not frame-major".into()));
        }
        let mut lengths = vec![0usize; self.frame_count as usize];
        for &t in &self.frames {
            lengths[t as usize] += 1;
        }
        Ok(TokenLayout::from_frame_lengths(&lengths))
    }
}
