use std::sync::Arc;

use super::blocks::{PackProjection, SparseConv3DBlock, SparseUpsampleBlock, TemporalConv1DBlock, UnpackProjection};
use super::dit::{BlockInputs, CondTokens, DitBlock, DitConfig};
use super::maps::{DownsampleMap, PackState, TemporalNeighbors};
use crate::error::{Error, Result};
use crate::nn::TimestepEmbedder;
use crate::numerics::{DenseTensor, Graph, ParamBuilder, ParamStore, Real, Var};
use crate::sst::{SparseSpacetimeTensor, Structure};
use crate::temporal::{absolute_pe_table, TokenLayout};

#[derive(Debug, Clone, PartialEq)]
pub struct CompNetConfig {
    pub width: usize,
    pub heads: usize,
    pub depth: usize,
    pub mlp_hidden: usize,
    /// Temporal window inside the core; `None` disables temporal layers.
    pub window: Option<u32>,
    pub cond_dim: Option<usize>,
    pub spatial_stages: usize,
    pub temporal_stages: usize,
    pub freq_dim: usize,
}

impl Default for CompNetConfig {
    fn default() -> Self {
        CompNetConfig {
            width: 48,
            heads: 4,
            depth: 2,
            mlp_hidden: 96,
            window: Some(2),
            cond_dim: None,
            spatial_stages: 1,
            temporal_stages: 1,
            freq_dim: 32,
        }
    }
}

/// Coordinate maps for one input structure, reusable across forward passes.
#[derive(Debug, Clone)]
pub struct CompressionPlan {
    pub input: Arc<Structure>,
    pub spatial: Vec<DownsampleMap>,
    pub temporal: Vec<(TemporalNeighbors, PackState)>,
    pub core: Arc<Structure>,
    pub core_layout: TokenLayout,
}

impl CompressionPlan {
    pub fn new(input: &Arc<Structure>, spatial_stages: usize, temporal_stages: usize) -> Result<Self> {
        let mut s = input.clone();
        let mut spatial = Vec::new();
        for _ in 0..spatial_stages {
            let m = DownsampleMap::new(&s)?;
            s = m.coarse.clone();
            spatial.push(m);
        }
        let mut temporal = Vec::new();
        for _ in 0..temporal_stages {
            let n = TemporalNeighbors::new(&s);
            let p = PackState::new(&s)?;
            s = p.packed.clone();
            temporal.push((n, p));
        }
        Ok(CompressionPlan {
            input: input.clone(),
            spatial,
            temporal,
            core_layout: TokenLayout::from_structure(&s),
            core: s,
        })
    }

    /// Token count entering the transformer core.
    pub fn core_tokens(&self) -> usize {
        self.core.len()
    }
}

/// Skip features and maps recorded while compressing; consumed in reverse.
pub struct CompressionContext<'p> {
    stack: Vec<(Stage<'p>, Var)>,
}

enum Stage<'p> {
    Spatial(&'p DownsampleMap),
    Temporal(&'p TemporalNeighbors, &'p PackState),
}

impl CompressionContext<'_> {
    pub fn depth(&self) -> usize {
        self.stack.len()
    }
}

/// Factorized spacetime compression around a DiT core.
#[derive(Debug, Clone)]
pub struct CompNet {
    pub cfg: CompNetConfig,
    pub downs: Vec<SparseConv3DBlock>,
    pub tconv_down: Vec<TemporalConv1DBlock>,
    pub packs: Vec<PackProjection>,
    pub time: TimestepEmbedder,
    pub blocks: Vec<DitBlock>,
    pub unpacks: Vec<UnpackProjection>,
    pub tconv_up: Vec<TemporalConv1DBlock>,
    pub ups: Vec<SparseUpsampleBlock>,
}

impl CompNet {
    pub fn new(pb: &mut ParamBuilder<'_>, name: &str, cfg: CompNetConfig) -> Result<Self> {
        let w = cfg.width;
        pb.scoped(name, |pb| {
            let mut net = CompNet {
                downs: Vec::new(),
                tconv_down: Vec::new(),
                packs: Vec::new(),
                time: TimestepEmbedder::new(pb, "time", cfg.freq_dim, w)?,
                blocks: Vec::new(),
                unpacks: Vec::new(),
                tconv_up: Vec::new(),
                ups: Vec::new(),
                cfg: cfg.clone(),
            };
            for i in 0..cfg.spatial_stages {
                net.downs.push(SparseConv3DBlock::new(pb, &format!("down{i}"), w, w)?);
                net.ups.push(SparseUpsampleBlock::new(pb, &format!("up{i}"), w, w)?);
            }
            for i in 0..cfg.temporal_stages {
                net.tconv_down.push(TemporalConv1DBlock::new(pb, &format!("tconv_down{i}"), w, w)?);
                net.packs.push(PackProjection::new(pb, &format!("pack{i}"), w)?);
                net.unpacks.push(UnpackProjection::new(pb, &format!("unpack{i}"), w)?);
                net.tconv_up.push(TemporalConv1DBlock::new(pb, &format!("tconv_up{i}"), w, w)?);
            }
            let dit = DitConfig {
                width: w,
                heads: cfg.heads,
                mlp_hidden: cfg.mlp_hidden,
                window: cfg.window,
                cond_dim: cfg.cond_dim,
            };
            for i in 0..cfg.depth {
                net.blocks.push(DitBlock::new(pb, &format!("block{i}"), &dit, i)?);
            }
            Ok(net)
        })
    }

    pub fn plan(&self, s: &Arc<Structure>) -> Result<CompressionPlan> {
        CompressionPlan::new(s, self.cfg.spatial_stages, self.cfg.temporal_stages)
    }

    pub fn compress<'p, T: Real>(&self, g: &mut Graph<'_, T>, x: Var, plan: &'p CompressionPlan) -> Result<(Var, CompressionContext<'p>)> {
        let mut ctx = CompressionContext { stack: Vec::new() };
        let mut h = x;
        for (block, map) in self.downs.iter().zip(&plan.spatial) {
            ctx.stack.push((Stage::Spatial(map), h));
            h = block.forward(g, h, map)?;
        }
        for ((conv, pack), (nbrs, state)) in self.tconv_down.iter().zip(&self.packs).zip(&plan.temporal) {
            h = conv.forward(g, h, nbrs)?;
            ctx.stack.push((Stage::Temporal(nbrs, state), h));
            h = pack.forward(g, h, state)?;
        }
        Ok((h, ctx))
    }

    pub fn decompress<T: Real>(&self, g: &mut Graph<'_, T>, h: Var, mut ctx: CompressionContext<'_>) -> Result<Var> {
        let mut h = h;
        let (mut ti, mut si) = (self.unpacks.len(), self.ups.len());
        while let Some((stage, skip)) = ctx.stack.pop() {
            match stage {
                Stage::Temporal(nbrs, state) => {
                    ti -= 1;
                    let u = self.unpacks[ti].forward(g, h, state)?;
                    let u = g.add(u, skip)?;
                    h = self.tconv_up[ti].forward(g, u, nbrs)?;
                }
                Stage::Spatial(map) => {
                    si -= 1;
                    h = self.ups[si].forward(g, h, map, Some(skip))?;
                }
            }
        }
        Ok(h)
    }

    /// Conditioning tokens aligned with the core's packed frames.
    pub fn core_cond(&self, cond: &CondTokens) -> Result<CondTokens> {
        let mut c = cond.clone();
        for _ in 0..self.cfg.temporal_stages {
            c = c.pack_pairs()?;
        }
        Ok(c)
    }

    /// The transformer core: identity when every AdaLN gate is zero.
    pub fn core<T: Real>(&self, g: &mut Graph<'_, T>, h: Var, layout: &TokenLayout, t: f64, cond: Option<&CondTokens>) -> Result<Var> {
        let temb = self.time.forward(g, t)?;
        let c = g.silu(temb)?;
        let cond = match (cond, self.cfg.cond_dim) {
            (Some(ct), Some(e)) => {
                if ct.width() != e {
                    return Err(Error::WidthMismatch { got: ct.width(), want: e });
                }
                Some((g.input(&ct.tokens), ct.per_frame))
            }
            (None, Some(_)) => return Err(Error::InvalidArgument("conditioning tokens required".into())),
            _ => None,
        };
        let inp = BlockInputs { layout, c, cond };
        let mut h = h;
        for b in &self.blocks {
            h = b.forward(g, h, &inp)?;
        }
        Ok(h)
    }

    /// `[L, W]` features on `plan.input` → `[L, W]` on the same coordinates.
    pub fn forward<T: Real>(&self, g: &mut Graph<'_, T>, x: Var, plan: &CompressionPlan, t: f64, cond: Option<&CondTokens>) -> Result<Var> {
        if g.cols(x) != self.cfg.width {
            return Err(Error::WidthMismatch { got: g.cols(x), want: self.cfg.width });
        }
        if g.rows(x) != plan.input.len() {
            return Err(Error::MapMismatch);
        }
        let (h, ctx) = self.compress(g, x, plan)?;
        let pe = g.input(&absolute_pe_table(plan.core.coords(), self.cfg.width)?);
        let h = g.add(h, pe)?;
        let cond = cond.map(|c| self.core_cond(c)).transpose()?;
        let h = self.core(g, h, &plan.core_layout, t, cond.as_ref())?;
        self.decompress(g, h, ctx)
    }
}

/// Runs [`CompNet::forward`] on a sparse tensor without recording gradients.
pub fn compnet_forward(
    x: &SparseSpacetimeTensor,
    store: &ParamStore<f32>,
    net: &CompNet,
    t: f64,
    cond: Option<&CondTokens>,
) -> Result<SparseSpacetimeTensor> {
    let plan = net.plan(x.structure())?;
    let mut g = Graph::inference(store);
    let v = g.input(&DenseTensor::new(vec![x.len(), x.channels()], x.features().to_vec())?);
    let y = net.forward(&mut g, v, &plan, t, cond)?;
    SparseSpacetimeTensor::new(x.structure().clone(), net.cfg.width, g.value(y).data().to_vec())
}
