use std::sync::Arc;

use crate::compnet::{DownsampleMap, SparseConv3DBlock, SparseUpsampleBlock};
use crate::error::{Error, Result};
use crate::nn::{LayerNorm, Linear, Mlp, MultiHeadAttention};
use crate::numerics::{DenseTensor, Graph, ParamBuilder, ParamStore, Real, Var};
use crate::rng::SeedRng;
use crate::sst::{SparseSpacetimeTensor, Structure};
use crate::temporal::{absolute_pe_table, TemporalLayerParams, TemporalWindowConfig, TokenLayout};

pub const LOGVAR_MIN: f64 = -10.0;
pub const LOGVAR_MAX: f64 = 10.0;
/// Decoder output channels: occupancy logit, then RGB.
pub const DECODED_CHANNELS: usize = 4;

#[derive(Debug, Clone, PartialEq)]
pub struct VaeConfig {
    pub in_channels: usize,
    pub latent_dim: usize,
    pub width: usize,
    pub heads: usize,
    pub depth: usize,
    pub mlp_hidden: usize,
    /// Temporal window of the temporal layers; `None` builds the
    /// frame-independent variant.
    pub window: Option<u32>,
    pub beta: f64,
}

impl Default for VaeConfig {
    fn default() -> Self {
        VaeConfig {
            in_channels: 4,
            latent_dim: 8,
            width: 48,
            heads: 4,
            depth: 2,
            mlp_hidden: 96,
            window: Some(2),
            beta: 1e-3,
        }
    }
}

/// Coordinate maps of one input structure.
#[derive(Debug, Clone)]
pub struct VaePlan {
    pub map: DownsampleMap,
    pub layout: TokenLayout,
    pe: DenseTensor<f32>,
}

impl VaePlan {
    pub fn new(s: &Arc<Structure>, width: usize) -> Result<Self> {
        if s.is_empty() {
            return Err(Error::EmptyStructure);
        }
        let map = DownsampleMap::new(s)?;
        Ok(VaePlan {
            layout: TokenLayout::from_structure(&map.coarse),
            pe: absolute_pe_table(map.coarse.coords(), width)?,
            map,
        })
    }

    pub fn structure(&self) -> &Arc<Structure> {
        &self.map.fine
    }
}

#[derive(Debug, Clone)]
struct VaeBlock {
    norm1: LayerNorm,
    attn: MultiHeadAttention,
    temporal: Option<TemporalLayerParams>,
    norm2: LayerNorm,
    mlp: Mlp,
}

impl VaeBlock {
    fn forward<T: Real>(&self, g: &mut Graph<'_, T>, x: Var, layout: &TokenLayout) -> Result<Var> {
        let n = self.norm1.forward(g, x)?;
        let a = self.attn.forward(g, n, n, layout.frame_groups(), None)?;
        let mut h = g.add(x, a)?;
        if let Some(t) = &self.temporal {
            h = t.forward(g, h, layout)?;
        }
        let n = self.norm2.forward(g, h)?;
        let m = self.mlp.forward(g, n)?;
        g.add(h, m)
    }
}

/// Shared encoder/decoder trunk: per-voxel linear, stride-2 sparse conv,
/// transformer blocks at the coarse level, sparse upsampling with a skip.
#[derive(Debug, Clone)]
pub struct VaeTrunk {
    input: Linear,
    down: SparseConv3DBlock,
    blocks: Vec<VaeBlock>,
    up: SparseUpsampleBlock,
    norm: LayerNorm,
    output: Linear,
}

impl VaeTrunk {
    fn new(pb: &mut ParamBuilder<'_>, name: &str, cfg: &VaeConfig, c_in: usize, c_out: usize) -> Result<Self> {
        let w = cfg.width;
        pb.scoped(name, |pb| {
            let mut blocks = Vec::new();
            for i in 0..cfg.depth {
                blocks.push(pb.scoped(&format!("block{i}"), |pb| {
                    Ok(VaeBlock {
                        norm1: LayerNorm::new(pb, "norm1", w)?,
                        attn: MultiHeadAttention::new(pb, "attn", w, w, cfg.heads)?,
                        temporal: match cfg.window {
                            Some(win) => Some(TemporalLayerParams::new(pb, "temporal", w, cfg.heads, TemporalWindowConfig::alternating(win, i)?)?),
                            None => None,
                        },
                        norm2: LayerNorm::new(pb, "norm2", w)?,
                        mlp: Mlp::new(pb, "mlp", w, cfg.mlp_hidden, w)?,
                    })
                })?);
            }
            Ok(VaeTrunk {
                input: Linear::new(pb, "input", c_in, w, true)?,
                down: SparseConv3DBlock::new(pb, "down", w, w)?,
                blocks,
                up: SparseUpsampleBlock::new(pb, "up", w, w)?,
                norm: LayerNorm::new(pb, "norm", w)?,
                output: Linear::new(pb, "output", w, c_out, true)?,
            })
        })
    }

    fn forward<T: Real>(&self, g: &mut Graph<'_, T>, x: Var, plan: &VaePlan) -> Result<Var> {
        if g.rows(x) != plan.map.fine.len() {
            return Err(Error::MapMismatch);
        }
        let skip = self.input.forward(g, x)?;
        let h = self.down.forward(g, skip, &plan.map)?;
        let pe = g.input(&plan.pe);
        let mut h = g.add(h, pe)?;
        for b in &self.blocks {
            h = b.forward(g, h, &plan.layout)?;
        }
        let h = self.up.forward(g, h, &plan.map, Some(skip))?;
        let h = self.norm.forward(g, h)?;
        self.output.forward(g, h)
    }
}

#[derive(Debug, Clone)]
pub struct VaeModel {
    pub cfg: VaeConfig,
    pub encoder: VaeTrunk,
    pub decoder: VaeTrunk,
}

/// Graph nodes of one VAE loss evaluation.
#[derive(Debug, Clone, Copy)]
pub struct VaeLoss {
    pub total: Var,
    pub occupancy: Var,
    pub color: Var,
    pub kl: Var,
    /// `[L, 4]` decoder output.
    pub decoded: Var,
}

impl VaeModel {
    pub fn new(pb: &mut ParamBuilder<'_>, name: &str, cfg: VaeConfig) -> Result<Self> {
        if cfg.latent_dim == 0 || cfg.in_channels == 0 {
            return Err(Error::InvalidArgument("VAE widths must be positive".into()));
        }
        pb.scoped(name, |pb| {
            Ok(VaeModel {
                encoder: VaeTrunk::new(pb, "encoder", &cfg, cfg.in_channels, 2 * cfg.latent_dim)?,
                decoder: VaeTrunk::new(pb, "decoder", &cfg, cfg.latent_dim, DECODED_CHANNELS)?,
                cfg,
            })
        })
    }

    pub fn plan(&self, s: &Arc<Structure>) -> Result<VaePlan> {
        VaePlan::new(s, self.cfg.width)
    }

    /// `(mean, logvar)`, each `[L, D]`, logvar clamped.
    pub fn encode<T: Real>(&self, g: &mut Graph<'_, T>, x: Var, plan: &VaePlan) -> Result<(Var, Var)> {
        if g.cols(x) != self.cfg.in_channels {
            return Err(Error::WidthMismatch { got: g.cols(x), want: self.cfg.in_channels });
        }
        let d = self.cfg.latent_dim;
        let h = self.encoder.forward(g, x, plan)?;
        let mean = g.slice_cols(h, 0, d)?;
        let lv = g.slice_cols(h, d, d)?;
        let lv = g.clamp(lv, LOGVAR_MIN, LOGVAR_MAX)?;
        Ok((mean, lv))
    }

    pub fn decode<T: Real>(&self, g: &mut Graph<'_, T>, z: Var, plan: &VaePlan) -> Result<Var> {
        if g.cols(z) != self.cfg.latent_dim {
            return Err(Error::WidthMismatch { got: g.cols(z), want: self.cfg.latent_dim });
        }
        self.decoder.forward(g, z, plan)
    }

    /// Reconstruction `mse(sigmoid(occ), occ*) + mse(rgb, rgb*)` plus
    /// `β·KL`. `noise` (`[L, D]`) enables the reparameterized sample;
    /// `None` decodes the mean.
    pub fn loss<T: Real>(
        &self,
        g: &mut Graph<'_, T>,
        input: &DenseTensor<f32>,
        target: &DenseTensor<f32>,
        plan: &VaePlan,
        noise: Option<&DenseTensor<f32>>,
    ) -> Result<VaeLoss> {
        if target.shape() != [plan.map.fine.len(), DECODED_CHANNELS] {
            return Err(Error::shape(format!("VAE target {:?}", target.shape())));
        }
        let x = g.input(input);
        let (mean, lv) = self.encode(g, x, plan)?;
        let z = match noise {
            Some(eps) => {
                let eps = g.input(eps);
                let half = g.scale(lv, 0.5)?;
                let std = g.exp(half)?;
                let s = g.mul(std, eps)?;
                g.add(mean, s)?
            }
            None => mean,
        };
        let decoded = self.decode(g, z, plan)?;
        let t = g.input(target);
        let occ_t = g.slice_cols(t, 0, 1)?;
        let rgb_t = g.slice_cols(t, 1, 3)?;
        let occ_logit = g.slice_cols(decoded, 0, 1)?;
        let occ = g.sigmoid(occ_logit)?;
        let occupancy = g.mse(occ, occ_t)?;
        let rgb = g.slice_cols(decoded, 1, 3)?;
        let color = g.mse(rgb, rgb_t)?;
        let kl = kl_graph(g, mean, lv)?;
        let recon = g.add(occupancy, color)?;
        let weighted = g.scale(kl, self.cfg.beta)?;
        let total = g.add(recon, weighted)?;
        Ok(VaeLoss { total, occupancy, color, kl, decoded })
    }

    pub fn latent_noise(&self, rows: usize, rng: &mut SeedRng) -> DenseTensor<f32> {
        DenseTensor::new(vec![rows, self.cfg.latent_dim], rng.normal_vec(rows * self.cfg.latent_dim)).expect("shape")
    }
}

/// Per-voxel Gaussian KL to `N(0, I)`, summed over channels and averaged
/// over voxels.
pub fn kl_graph<T: Real>(g: &mut Graph<'_, T>, mean: Var, logvar: Var) -> Result<Var> {
    let d = g.cols(mean);
    let m2 = g.mul(mean, mean)?;
    let var = g.exp(logvar)?;
    let a = g.add(m2, var)?;
    let a = g.sub(a, logvar)?;
    let a = g.add_scalar(a, -1.0)?;
    let m = g.mean(a)?;
    g.scale(m, 0.5 * d as f64)
}

fn sst_input(x: &SparseSpacetimeTensor) -> Result<DenseTensor<f32>> {
    DenseTensor::new(vec![x.len(), x.channels()], x.features().to_vec())
}

/// Eval-mode encoding: `(means, logvars)` on the input coordinates.
pub fn vae_encode(x: &SparseSpacetimeTensor, store: &ParamStore<f32>, model: &VaeModel) -> Result<(SparseSpacetimeTensor, SparseSpacetimeTensor)> {
    if x.channels() != model.cfg.in_channels {
        return Err(Error::WidthMismatch { got: x.channels(), want: model.cfg.in_channels });
    }
    let plan = model.plan(x.structure())?;
    let mut g = Graph::inference(store);
    let v = g.input(&sst_input(x)?);
    let (m, lv) = model.encode(&mut g, v, &plan)?;
    let d = model.cfg.latent_dim;
    Ok((
        x.with_features(d, g.value(m).data().to_vec())?,
        x.with_features(d, g.value(lv).data().to_vec())?,
    ))
}

/// Decodes latents to `[occupancy logit, r, g, b]` per voxel.
pub fn vae_decode(z: &SparseSpacetimeTensor, store: &ParamStore<f32>, model: &VaeModel) -> Result<SparseSpacetimeTensor> {
    if z.channels() != model.cfg.latent_dim {
        return Err(Error::WidthMismatch { got: z.channels(), want: model.cfg.latent_dim });
    }
    let plan = model.plan(z.structure())?;
    let mut g = Graph::inference(store);
    let v = g.input(&sst_input(z)?);
    let y = model.decode(&mut g, v, &plan)?;
    z.with_features(DECODED_CHANNELS, g.value(y).data().to_vec())
}

/// Decoded features with the occupancy logit passed through a sigmoid.
pub fn decoded_to_occupancy_color(decoded: &SparseSpacetimeTensor) -> Result<SparseSpacetimeTensor> {
    let mut f = decoded.features().to_vec();
    for row in f.chunks_exact_mut(DECODED_CHANNELS) {
        row[0] = 1.0 / (1.0 + (-row[0]).exp());
    }
    decoded.with_features(DECODED_CHANNELS, f)
}
