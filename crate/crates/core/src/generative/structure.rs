use crate::compnet::{BlockInputs, CondTokens, DitBlock, DitConfig};
use crate::error::{Error, Result};
use crate::nn::{LayerNorm, Linear, TimestepEmbedder};
use crate::numerics::{DenseTensor, Graph, ParamBuilder, ParamStore, Real, Var};
use crate::rng::SeedRng;
use crate::sst::DenseOccupancySequence;
use crate::temporal::{absolute_pe_3d, TokenLayout};

use super::flow::{euler_sample, FlowNet};
use super::video::ConditioningVideo;

#[derive(Debug, Clone, PartialEq)]
pub struct StructureFlowConfig {
    /// Dense grid resolution `N_s`.
    pub resolution: u32,
    /// Cubic patch edge; each token carries `patch³` grid values.
    pub patch: u32,
    pub width: usize,
    pub heads: usize,
    pub depth: usize,
    pub mlp_hidden: usize,
    pub window: Option<u32>,
    pub cond_dim: usize,
    pub freq_dim: usize,
}

impl Default for StructureFlowConfig {
    fn default() -> Self {
        StructureFlowConfig {
            resolution: 16,
            patch: 4,
            width: 96,
            heads: 4,
            depth: 3,
            mlp_hidden: 192,
            window: Some(2),
            cond_dim: super::video::DEFAULT_EMBED_DIM,
            freq_dim: 32,
        }
    }
}

impl StructureFlowConfig {
    pub fn patches_per_frame(&self) -> usize {
        ((self.resolution / self.patch) as usize).pow(3)
    }

    pub fn patch_len(&self) -> usize {
        (self.patch as usize).pow(3)
    }
}

/// Stage-one velocity field over dense per-frame occupancy, patchified into
/// `(N_s/p)³` tokens per frame.
#[derive(Debug, Clone)]
pub struct StructureFlow {
    pub cfg: StructureFlowConfig,
    pub time: TimestepEmbedder,
    pub input: Linear,
    pub blocks: Vec<DitBlock>,
    pub norm: LayerNorm,
    pub output: Linear,
    pe: DenseTensor<f32>,
}

impl StructureFlow {
    pub fn new(pb: &mut ParamBuilder<'_>, name: &str, cfg: StructureFlowConfig) -> Result<Self> {
        if cfg.patch == 0 || cfg.resolution % cfg.patch != 0 {
            return Err(Error::InvalidArgument(format!("patch {} does not divide N_s = {}", cfg.patch, cfg.resolution)));
        }
        let g = (cfg.resolution / cfg.patch) as usize;
        let mut pe = Vec::with_capacity(g * g * g * cfg.width);
        for bx in 0..g {
            for by in 0..g {
                for bz in 0..g {
                    pe.extend(absolute_pe_3d([bx as f64, by as f64, bz as f64], cfg.width)?);
                }
            }
        }
        let pe = DenseTensor::new(vec![g * g * g, cfg.width], pe)?;
        let dit = DitConfig {
            width: cfg.width,
            heads: cfg.heads,
            mlp_hidden: cfg.mlp_hidden,
            window: cfg.window,
            cond_dim: Some(cfg.cond_dim),
        };
        pb.scoped(name, |pb| {
            let mut blocks = Vec::new();
            for i in 0..cfg.depth {
                blocks.push(DitBlock::new(pb, &format!("block{i}"), &dit, i)?);
            }
            Ok(StructureFlow {
                time: TimestepEmbedder::new(pb, "time", cfg.freq_dim, cfg.width)?,
                input: Linear::new(pb, "input", cfg.patch_len(), cfg.width, true)?,
                blocks,
                norm: LayerNorm::new(pb, "norm", cfg.width)?,
                output: Linear::new(pb, "output", cfg.width, cfg.patch_len(), true)?,
                pe,
                cfg,
            })
        })
    }

    /// `[T·P, p³]` tokens holding `2·occ − 1`.
    pub fn patchify(&self, occ: &DenseOccupancySequence) -> Result<DenseTensor<f32>> {
        if occ.resolution() != self.cfg.resolution {
            return Err(Error::shape(format!("N = {}, expected {}", occ.resolution(), self.cfg.resolution)));
        }
        let p = self.cfg.patch as usize;
        let g = self.cfg.resolution as usize / p;
        let mut out = Vec::with_capacity(occ.values().len());
        for t in 0..occ.frames() as usize {
            for bx in 0..g {
                for by in 0..g {
                    for bz in 0..g {
                        for dx in 0..p {
                            for dy in 0..p {
                                for dz in 0..p {
                                    let v = occ.get(t, bx * p + dx, by * p + dy, bz * p + dz);
                                    out.push(2.0 * v - 1.0);
                                }
                            }
                        }
                    }
                }
            }
        }
        DenseTensor::new(vec![occ.frames() as usize * self.cfg.patches_per_frame(), self.cfg.patch_len()], out)
    }

    /// Inverse of [`Self::patchify`] followed by `sigmoid`.
    pub fn unpatchify(&self, x: &DenseTensor<f32>) -> Result<DenseOccupancySequence> {
        let pp = self.cfg.patches_per_frame();
        if x.cols() != self.cfg.patch_len() || x.rows() % pp != 0 {
            return Err(Error::shape(format!("{:?} structure tokens", x.shape())));
        }
        let frames = (x.rows() / pp) as u32;
        let p = self.cfg.patch as usize;
        let g = self.cfg.resolution as usize / p;
        let mut occ = DenseOccupancySequence::zeros(self.cfg.resolution, frames)?;
        let mut i = 0;
        for t in 0..frames as usize {
            for bx in 0..g {
                for by in 0..g {
                    for bz in 0..g {
                        for dx in 0..p {
                            for dy in 0..p {
                                for dz in 0..p {
                                    let v = x.data()[i];
                                    occ.set(t, bx * p + dx, by * p + dy, bz * p + dz, 1.0 / (1.0 + (-v).exp()));
                                    i += 1;
                                }
                            }
                        }
                    }
                }
            }
        }
        Ok(occ)
    }
}

impl FlowNet for StructureFlow {
    type Cond = CondTokens;

    fn velocity<T: Real>(&self, g: &mut Graph<'_, T>, x: Var, t: &[f64], cond: &CondTokens) -> Result<Var> {
        let pp = self.cfg.patches_per_frame();
        if g.cols(x) != self.cfg.patch_len() || g.rows(x) % pp != 0 {
            return Err(Error::shape(format!("{:?} structure tokens", g.shape(x))));
        }
        let &[t] = t else {
            return Err(Error::shape(format!("{} flow times for one sample", t.len())));
        };
        let frames = g.rows(x) / pp;
        if cond.frames() != frames {
            return Err(Error::shape(format!("{} conditioning frames for {frames} frames", cond.frames())));
        }
        if cond.width() != self.cfg.cond_dim {
            return Err(Error::WidthMismatch { got: cond.width(), want: self.cfg.cond_dim });
        }
        let layout = TokenLayout::uniform(frames, pp);
        let h = self.input.forward(g, x)?;
        let pe = g.input(&self.pe);
        let pe = g.concat_rows(&vec![pe; frames])?;
        let mut h = g.add(h, pe)?;
        let temb = self.time.forward(g, t)?;
        let c = g.silu(temb)?;
        let cv = g.input(&cond.tokens);
        let inp = BlockInputs { layout: &layout, c, cond: Some((cv, cond.per_frame)) };
        for b in &self.blocks {
            h = b.forward(g, h, &inp)?;
        }
        let h = self.norm.forward(g, h)?;
        self.output.forward(g, h)
    }
}

/// Samples a coarse occupancy sequence for the video's frames.
pub fn generate_structure(
    video: &ConditioningVideo,
    store: &ParamStore<f32>,
    model: &StructureFlow,
    steps: usize,
    rng: &mut SeedRng,
) -> Result<DenseOccupancySequence> {
    let rows = video.len() * model.cfg.patches_per_frame();
    let x = euler_sample(model, store, rows, model.cfg.patch_len(), steps, &video.tokens, rng)?;
    model.unpatchify(&x)
}
