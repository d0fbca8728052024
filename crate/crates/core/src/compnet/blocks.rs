use std::sync::Arc;

use super::maps::{DownsampleMap, PackState, TemporalNeighbors};
use crate::error::{Error, Result};
use crate::nn::Linear;
use crate::numerics::{DenseTensor, Graph, ParamBuilder, ParamId, ParamStore, Real, Var};
use crate::sst::{SparseSpacetimeTensor, Structure};

fn check_rows<T: Real>(g: &Graph<'_, T>, x: Var, rows: usize, err: Error) -> Result<()> {
    if g.rows(x) != rows {
        return Err(err);
    }
    Ok(())
}

fn check_width<T: Real>(g: &Graph<'_, T>, x: Var, want: usize) -> Result<()> {
    if g.cols(x) != want {
        return Err(Error::WidthMismatch { got: g.cols(x), want });
    }
    Ok(())
}

/// Stride-2 sparse 3D convolution with a 2×2×2 kernel. Weights are laid out
/// `[8·C_in, C_out]`, row block `o` holding child offset `o`.
#[derive(Debug, Clone)]
pub struct SparseConv3DBlock {
    pub w: ParamId,
    pub b: ParamId,
    pub c_in: usize,
    pub c_out: usize,
}

impl SparseConv3DBlock {
    pub fn new(pb: &mut ParamBuilder<'_>, name: &str, c_in: usize, c_out: usize) -> Result<Self> {
        pb.scoped(name, |pb| {
            Ok(SparseConv3DBlock {
                w: pb.weight("w", 8 * c_in, c_out)?,
                b: pb.zeros("b", vec![c_out])?,
                c_in,
                c_out,
            })
        })
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<'_, T>, x: Var, map: &DownsampleMap) -> Result<Var> {
        check_width(g, x, self.c_in)?;
        check_rows(g, x, map.fine.len(), Error::MapMismatch)?;
        let gathered = g.gather_rows(x, map.children.clone())?;
        let cols = g.reshape(gathered, vec![map.coarse.len(), 8 * self.c_in])?;
        let (w, b) = (g.param(self.w), g.param(self.b));
        g.linear(cols, w, Some(b))
    }
}

/// Transposed counterpart of [`SparseConv3DBlock`], emitting only the
/// recorded children. Weights `[C_in, 8·C_out]`.
#[derive(Debug, Clone)]
pub struct SparseUpsampleBlock {
    pub w: ParamId,
    pub b: ParamId,
    pub c_in: usize,
    pub c_out: usize,
}

impl SparseUpsampleBlock {
    pub fn new(pb: &mut ParamBuilder<'_>, name: &str, c_in: usize, c_out: usize) -> Result<Self> {
        pb.scoped(name, |pb| {
            Ok(SparseUpsampleBlock {
                w: pb.weight("w", c_in, 8 * c_out)?,
                b: pb.zeros("b", vec![c_out])?,
                c_in,
                c_out,
            })
        })
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<'_, T>, x: Var, map: &DownsampleMap, skip: Option<Var>) -> Result<Var> {
        check_width(g, x, self.c_in)?;
        check_rows(g, x, map.coarse.len(), Error::MapMismatch)?;
        let w = g.param(self.w);
        let h = g.matmul(x, w)?;
        let h = g.reshape(h, vec![map.coarse.len() * 8, self.c_out])?;
        let h = g.gather_rows(h, map.up_index.clone())?;
        let b = g.param(self.b);
        let h = g.add_row(h, b)?;
        match skip {
            Some(s) => {
                check_rows(g, s, map.fine.len(), Error::MapMismatch)?;
                g.add(h, s)
            }
            None => Ok(h),
        }
    }
}

/// Kernel-3 convolution along time with zero fill for inactive or
/// out-of-range neighbours. Weights `[3·C_in, C_out]` for δ = −1, 0, +1.
#[derive(Debug, Clone)]
pub struct TemporalConv1DBlock {
    pub w: ParamId,
    pub b: ParamId,
    pub c_in: usize,
    pub c_out: usize,
}

impl TemporalConv1DBlock {
    pub fn new(pb: &mut ParamBuilder<'_>, name: &str, c_in: usize, c_out: usize) -> Result<Self> {
        pb.scoped(name, |pb| {
            Ok(TemporalConv1DBlock {
                w: pb.weight("w", 3 * c_in, c_out)?,
                b: pb.zeros("b", vec![c_out])?,
                c_in,
                c_out,
            })
        })
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<'_, T>, x: Var, nbrs: &TemporalNeighbors) -> Result<Var> {
        check_width(g, x, self.c_in)?;
        check_rows(g, x, nbrs.structure.len(), Error::MapMismatch)?;
        let gathered = g.gather_rows(x, nbrs.index.clone())?;
        let cols = g.reshape(gathered, vec![nbrs.structure.len(), 3 * self.c_in])?;
        let (w, b) = (g.param(self.w), g.param(self.b));
        g.linear(cols, w, Some(b))
    }
}

/// `concat(f_2t, f_2t+1) → C` projection, missing members zero.
#[derive(Debug, Clone)]
pub struct PackProjection {
    pub proj: Linear,
}

impl PackProjection {
    pub fn new(pb: &mut ParamBuilder<'_>, name: &str, width: usize) -> Result<Self> {
        Ok(PackProjection { proj: Linear::new(pb, name, 2 * width, width, true)? })
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<'_, T>, x: Var, state: &PackState) -> Result<Var> {
        let c = self.proj.fan_out;
        check_width(g, x, c)?;
        check_rows(g, x, state.fine.len(), Error::StateMismatch)?;
        let pairs = g.gather_rows(x, state.members.clone())?;
        let cat = g.reshape(pairs, vec![state.packed.len(), 2 * c])?;
        self.proj.forward(g, cat)
    }
}

/// `C → 2C` projection split back into the active pair members.
#[derive(Debug, Clone)]
pub struct UnpackProjection {
    pub proj: Linear,
}

impl UnpackProjection {
    pub fn new(pb: &mut ParamBuilder<'_>, name: &str, width: usize) -> Result<Self> {
        Ok(UnpackProjection { proj: Linear::new(pb, name, width, 2 * width, true)? })
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<'_, T>, y: Var, state: &PackState) -> Result<Var> {
        let c = self.proj.fan_in;
        check_width(g, y, c)?;
        check_rows(g, y, state.packed.len(), Error::StateMismatch)?;
        let h = self.proj.forward(g, y)?;
        let h = g.reshape(h, vec![state.packed.len() * 2, c])?;
        g.gather_rows(h, state.unpack_index.clone())
    }
}

fn to_var<T: Real>(g: &mut Graph<'_, T>, x: &SparseSpacetimeTensor) -> Var {
    let t = DenseTensor::new(vec![x.len(), x.channels()], x.features().to_vec()).expect("shape");
    g.input(&t)
}

fn to_sparse<T: Real>(g: &Graph<'_, T>, v: Var, s: &Arc<Structure>) -> Result<SparseSpacetimeTensor> {
    let t = g.value(v);
    let data = t.data().iter().map(|x| x.f64() as f32).collect();
    SparseSpacetimeTensor::new(s.clone(), t.cols(), data)
}

pub fn spatial_downsample(x: &SparseSpacetimeTensor, store: &ParamStore<f32>, block: &SparseConv3DBlock) -> Result<(SparseSpacetimeTensor, DownsampleMap)> {
    let map = DownsampleMap::new(x.structure())?;
    let mut g = Graph::inference(store);
    let v = to_var(&mut g, x);
    let y = block.forward(&mut g, v, &map)?;
    Ok((to_sparse(&g, y, &map.coarse)?, map))
}

pub fn spatial_upsample(
    x: &SparseSpacetimeTensor,
    map: &DownsampleMap,
    store: &ParamStore<f32>,
    block: &SparseUpsampleBlock,
    skip: Option<&SparseSpacetimeTensor>,
) -> Result<SparseSpacetimeTensor> {
    if x.structure().as_ref() != map.coarse.as_ref() || skip.is_some_and(|s| s.structure().as_ref() != map.fine.as_ref()) {
        return Err(Error::MapMismatch);
    }
    let mut g = Graph::inference(store);
    let v = to_var(&mut g, x);
    let s = skip.map(|s| to_var(&mut g, s));
    let y = block.forward(&mut g, v, map, s)?;
    to_sparse(&g, y, &map.fine)
}

pub fn temporal_conv1d(x: &SparseSpacetimeTensor, store: &ParamStore<f32>, block: &TemporalConv1DBlock) -> Result<SparseSpacetimeTensor> {
    let nbrs = TemporalNeighbors::new(x.structure());
    let mut g = Graph::inference(store);
    let v = to_var(&mut g, x);
    let y = block.forward(&mut g, v, &nbrs)?;
    to_sparse(&g, y, x.structure())
}

pub fn temporal_pack(x: &SparseSpacetimeTensor, store: &ParamStore<f32>, proj: &PackProjection) -> Result<(SparseSpacetimeTensor, PackState)> {
    let state = PackState::new(x.structure())?;
    let mut g = Graph::inference(store);
    let v = to_var(&mut g, x);
    let y = proj.forward(&mut g, v, &state)?;
    Ok((to_sparse(&g, y, &state.packed)?, state))
}

pub fn temporal_unpack(x: &SparseSpacetimeTensor, state: &PackState, store: &ParamStore<f32>, proj: &UnpackProjection) -> Result<SparseSpacetimeTensor> {
    if x.structure().as_ref() != state.packed.as_ref() {
        return Err(Error::StateMismatch);
    }
    let mut g = Graph::inference(store);
    let v = to_var(&mut g, x);
    let y = proj.forward(&mut g, v, state)?;
    to_sparse(&g, y, &state.fine)
}
