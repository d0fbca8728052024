//! Parameterized building blocks shared by every model.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::numerics::{AttnGroup, Graph, ParamBuilder, ParamId, Real, Var};

pub const LN_EPS: f64 = 1e-5;

#[derive(Debug, Clone)]
pub struct Linear {
    pub w: ParamId,
    pub b: Option<ParamId>,
    pub fan_in: usize,
    pub fan_out: usize,
}

impl Linear {
    pub fn new(pb: &mut ParamBuilder<'_>, name: &str, fan_in: usize, fan_out: usize, bias: bool) -> Result<Self> {
        pb.scoped(name, |pb| {
            let w = pb.weight("w", fan_in, fan_out)?;
            let b = if bias { Some(pb.zeros("b", vec![fan_out])?) } else { None };
            Ok(Linear { w, b, fan_in, fan_out })
        })
    }

    /// All-zero weights and bias.
    pub fn zeroed(pb: &mut ParamBuilder<'_>, name: &str, fan_in: usize, fan_out: usize) -> Result<Self> {
        pb.scoped(name, |pb| {
            let w = pb.zeros("w", vec![fan_in, fan_out])?;
            let b = Some(pb.zeros("b", vec![fan_out])?);
            Ok(Linear { w, b, fan_in, fan_out })
        })
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<'_, T>, x: Var) -> Result<Var> {
        if g.cols(x) != self.fan_in {
            return Err(Error::WidthMismatch { got: g.cols(x), want: self.fan_in });
        }
        let w = g.param(self.w);
        let b = self.b.map(|b| g.param(b));
        g.linear(x, w, b)
    }
}

#[derive(Debug, Clone)]
pub struct LayerNorm {
    pub gain: ParamId,
    pub bias: ParamId,
}

impl LayerNorm {
    pub fn new(pb: &mut ParamBuilder<'_>, name: &str, width: usize) -> Result<Self> {
        pb.scoped(name, |pb| {
            Ok(LayerNorm {
                gain: pb.ones("gain", vec![width])?,
                bias: pb.zeros("bias", vec![width])?,
            })
        })
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<'_, T>, x: Var) -> Result<Var> {
        let n = g.normalize_rows(x, LN_EPS)?;
        let gain = g.param(self.gain);
        let bias = g.param(self.bias);
        let y = g.mul_row(n, gain)?;
        g.add_row(y, bias)
    }
}

/// Two-layer GELU MLP.
#[derive(Debug, Clone)]
pub struct Mlp {
    pub fc1: Linear,
    pub fc2: Linear,
}

impl Mlp {
    pub fn new(pb: &mut ParamBuilder<'_>, name: &str, width: usize, hidden: usize, out: usize) -> Result<Self> {
        pb.scoped(name, |pb| {
            Ok(Mlp {
                fc1: Linear::new(pb, "fc1", width, hidden, true)?,
                fc2: Linear::new(pb, "fc2", hidden, out, true)?,
            })
        })
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<'_, T>, x: Var) -> Result<Var> {
        let h = self.fc1.forward(g, x)?;
        let h = g.gelu(h)?;
        self.fc2.forward(g, h)
    }
}

/// Multi-head attention with bias-free projections.
#[derive(Debug, Clone)]
pub struct MultiHeadAttention {
    pub q: Linear,
    pub k: Linear,
    pub v: Linear,
    pub o: Linear,
    pub heads: usize,
}

/// Rotary positions for queries and keys, one per row.
pub struct RopePositions<'a> {
    pub q: &'a [f32],
    pub k: &'a [f32],
    pub base: f64,
}

impl MultiHeadAttention {
    pub fn new(pb: &mut ParamBuilder<'_>, name: &str, width: usize, kv_width: usize, heads: usize) -> Result<Self> {
        if heads == 0 || width % heads != 0 {
            return Err(Error::BadDim(width));
        }
        pb.scoped(name, |pb| {
            Ok(MultiHeadAttention {
                q: Linear::new(pb, "q", width, width, false)?,
                k: Linear::new(pb, "k", kv_width, width, false)?,
                v: Linear::new(pb, "v", kv_width, width, false)?,
                o: Linear::new(pb, "o", width, width, false)?,
                heads,
            })
        })
    }

    pub fn width(&self) -> usize {
        self.q.fan_out
    }

    /// Attention of `xq` rows over `xkv` rows within `groups`; no residual.
    pub fn forward<T: Real>(
        &self,
        g: &mut Graph<'_, T>,
        xq: Var,
        xkv: Var,
        groups: Arc<[AttnGroup]>,
        rope: Option<RopePositions<'_>>,
    ) -> Result<Var> {
        let mut q = self.q.forward(g, xq)?;
        let mut k = self.k.forward(g, xkv)?;
        let v = self.v.forward(g, xkv)?;
        if let Some(r) = rope {
            q = g.rope(q, r.q, self.heads, r.base)?;
            k = g.rope(k, r.k, self.heads, r.base)?;
        }
        let a = g.attention(q, k, v, groups, self.heads)?;
        self.o.forward(g, a)
    }
}

/// Sinusoidal encoding of a scalar position: `[sin(p·ω_0), cos(p·ω_0), sin(p·ω_1), …]`
/// with `ω_j = base^(−2j/dim)`.
pub fn sinusoidal(pos: f64, dim: usize, base: f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(dim);
    for j in 0..dim / 2 {
        let w = base.powf(-2.0 * j as f64 / dim as f64);
        out.push((pos * w).sin());
        out.push((pos * w).cos());
    }
    if dim % 2 == 1 {
        out.push(0.0);
    }
    out
}

/// Flow time `t ∈ [0, 1]` → sinusoidal features of `1000·t` → MLP with SiLU.
#[derive(Debug, Clone)]
pub struct TimestepEmbedder {
    pub freq_dim: usize,
    pub fc1: Linear,
    pub fc2: Linear,
}

impl TimestepEmbedder {
    pub fn new(pb: &mut ParamBuilder<'_>, name: &str, freq_dim: usize, width: usize) -> Result<Self> {
        pb.scoped(name, |pb| {
            Ok(TimestepEmbedder {
                freq_dim,
                fc1: Linear::new(pb, "fc1", freq_dim, width, true)?,
                fc2: Linear::new(pb, "fc2", width, width, true)?,
            })
        })
    }

    /// Returns a `[1, width]` embedding.
    pub fn forward<T: Real>(&self, g: &mut Graph<'_, T>, t: f64) -> Result<Var> {
        let f = sinusoidal(1000.0 * t, self.freq_dim, 10000.0);
        let x = g.constant(crate::numerics::DenseTensor::from_f64(vec![1, self.freq_dim], &f)?);
        let h = self.fc1.forward(g, x)?;
        let h = g.silu(h)?;
        self.fc2.forward(g, h)
    }
}
