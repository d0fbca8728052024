use std::sync::Arc;

use crate::error::{Error, Result};
use crate::generative::{lift_structure, render_conditioning_video, ConditioningVideo, VideoEmbedder};
use crate::rng::SeedRng;
use crate::sst::toy::{frame_time, voxel_center};
use crate::sst::{voxelize_toy_animation, DenseOccupancySequence, Fill, SparseSpacetimeTensor, Structure, ToyAnimationSpec};

/// Per-axis subsamples used for fractional occupancy.
pub const OCCUPANCY_SUBSAMPLES: usize = 3;

#[derive(Debug, Clone, PartialEq)]
pub struct DataConfig {
    /// Fine grid resolution `N`.
    pub resolution: u32,
    /// Coarse structure resolution `N_s`; must divide `N`.
    pub coarse_resolution: u32,
    pub frames: u32,
    pub render_size: usize,
    pub patch: usize,
    pub embed_dim: usize,
    pub embed_seed: u64,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            resolution: 32,
            coarse_resolution: 16,
            frames: 8,
            render_size: crate::generative::DEFAULT_RENDER_SIZE,
            patch: crate::generative::DEFAULT_PATCH,
            embed_dim: crate::generative::DEFAULT_EMBED_DIM,
            embed_seed: 0,
        }
    }
}

impl DataConfig {
    pub fn upsample_factor(&self) -> Result<u32> {
        if self.coarse_resolution == 0 || self.resolution % self.coarse_resolution != 0 {
            return Err(Error::Config(format!("N_s = {} does not divide N = {}", self.coarse_resolution, self.resolution)));
        }
        Ok(self.resolution / self.coarse_resolution)
    }

    pub fn embedder(&self) -> Result<Arc<VideoEmbedder>> {
        Ok(Arc::new(VideoEmbedder::new(self.patch, self.embed_dim, self.embed_seed)?))
    }
}

/// One synthesized training animation.
#[derive(Debug, Clone)]
pub struct ToySample {
    pub spec: ToyAnimationSpec,
    /// Binary coarse occupancy at `N_s` (max-pooled solid occupancy).
    pub coarse: DenseOccupancySequence,
    /// `[occupancy fraction, r, g, b]` on the structure lifted from `coarse`.
    pub features: SparseSpacetimeTensor,
    pub video: ConditioningVideo,
}

/// Fraction of `OCCUPANCY_SUBSAMPLES³` points of voxel `(x, y, z)` inside the shape.
pub fn occupancy_fraction(spec: &ToyAnimationSpec, n: usize, xyz: [u16; 3], tau: f64) -> f32 {
    let k = OCCUPANCY_SUBSAMPLES;
    let mut inside = 0;
    for a in 0..k {
        for b in 0..k {
            for c in 0..k {
                let off = |i: usize| (i as f64 + 0.5) / k as f64;
                let p = [
                    (xyz[0] as f64 + off(a)) / n as f64,
                    (xyz[1] as f64 + off(b)) / n as f64,
                    (xyz[2] as f64 + off(c)) / n as f64,
                ];
                inside += spec.inside(p, tau) as usize;
            }
        }
    }
    inside as f32 / (k * k * k) as f32
}

/// Ground-truth colour at the centre of voxel `xyz`.
pub fn voxel_color(spec: &ToyAnimationSpec, n: usize, xyz: [u16; 3], tau: f64) -> [f32; 3] {
    let p = [voxel_center(xyz[0] as usize, n), voxel_center(xyz[1] as usize, n), voxel_center(xyz[2] as usize, n)];
    spec.color_at(p, tau)
}

/// `[occupancy fraction, r, g, b]` for every coordinate of `s`.
pub fn voxel_targets(spec: &ToyAnimationSpec, s: &Arc<Structure>) -> Result<SparseSpacetimeTensor> {
    let n = s.resolution() as usize;
    let frames = s.frames() as usize;
    let mut f = Vec::with_capacity(s.len() * 4);
    for c in s.coords() {
        let tau = frame_time(c.t as usize, frames);
        let xyz = c.xyz();
        f.push(occupancy_fraction(spec, n, xyz, tau));
        f.extend(voxel_color(spec, n, xyz, tau));
    }
    SparseSpacetimeTensor::new(s.clone(), 4, f)
}

/// Coarse binary occupancy: solid voxelization at `N`, max-pooled to `N_s`.
pub fn coarse_occupancy(spec: &ToyAnimationSpec, cfg: &DataConfig) -> Result<DenseOccupancySequence> {
    let solid = voxelize_toy_animation(spec, cfg.resolution, cfg.frames, Fill::Solid)?;
    solid.downsample_max(cfg.upsample_factor()?)
}

impl ToySample {
    pub fn new(spec: ToyAnimationSpec, cfg: &DataConfig, embedder: &Arc<VideoEmbedder>) -> Result<Self> {
        let coarse = coarse_occupancy(&spec, cfg)?;
        let s = lift_structure(&coarse, cfg.upsample_factor()?)?;
        if s.is_empty() {
            return Err(Error::EmptyStructure);
        }
        let features = voxel_targets(&spec, &s)?;
        let video = render_conditioning_video(&spec, cfg.frames as usize, cfg.render_size, embedder)?;
        Ok(ToySample { spec, coarse, features, video })
    }
}

/// `count` random animations; sample `i` draws from stream `i` of `seed`.
pub fn synthesize_dataset(count: usize, seed: u64, cfg: &DataConfig) -> Result<Vec<ToySample>> {
    if count == 0 {
        return Err(Error::EmptyDataset);
    }
    let embedder = cfg.embedder()?;
    (0..count)
        .map(|i| {
            let mut rng = SeedRng::derive(seed, i as u64);
            ToySample::new(ToyAnimationSpec::random(&mut rng), cfg, &embedder)
        })
        .collect()
}
