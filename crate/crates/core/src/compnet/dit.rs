use crate::error::{Error, Result};
use crate::nn::{Linear, Mlp, MultiHeadAttention};
use crate::numerics::{DenseTensor, Graph, ParamBuilder, Real, Var};
use crate::temporal::{TemporalLayerParams, TemporalWindowConfig, TokenLayout};

/// Per-frame conditioning tokens, `per_frame` rows per frame.
#[derive(Debug, Clone, PartialEq)]
pub struct CondTokens {
    /// `[frames · per_frame, E]`.
    pub tokens: DenseTensor<f32>,
    pub per_frame: usize,
}

impl CondTokens {
    pub fn new(tokens: DenseTensor<f32>, per_frame: usize) -> Result<Self> {
        if per_frame == 0 || tokens.shape().len() != 2 || tokens.rows() % per_frame != 0 {
            return Err(Error::shape(format!("{:?} conditioning tokens with {per_frame} per frame", tokens.shape())));
        }
        Ok(CondTokens { tokens, per_frame })
    }

    pub fn frames(&self) -> usize {
        self.tokens.rows() / self.per_frame
    }

    pub fn width(&self) -> usize {
        self.tokens.cols()
    }

    /// Frame `t` of the result averages frames `2t` and `2t + 1`.
    pub fn pack_pairs(&self) -> Result<Self> {
        let t = self.frames();
        if t % 2 != 0 {
            return Err(Error::OddFrameCount(t as u32));
        }
        let row = self.per_frame * self.width();
        let src = self.tokens.data();
        let mut out = Vec::with_capacity(src.len() / 2);
        for p in 0..t / 2 {
            let (a, b) = (&src[2 * p * row..(2 * p + 1) * row], &src[(2 * p + 1) * row..(2 * p + 2) * row]);
            out.extend(a.iter().zip(b).map(|(x, y)| 0.5 * (x + y)));
        }
        CondTokens::new(DenseTensor::new(vec![t / 2 * self.per_frame, self.width()], out)?, self.per_frame)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DitConfig {
    pub width: usize,
    pub heads: usize,
    pub mlp_hidden: usize,
    /// Temporal window size; `None` leaves the temporal branch out.
    pub window: Option<u32>,
    /// Conditioning token width; `None` leaves cross-attention out.
    pub cond_dim: Option<usize>,
}

/// Transformer block with AdaLN-modulated, gated residual branches:
/// per-frame spatial attention, optional windowed temporal attention,
/// optional cross-attention to conditioning tokens, and an MLP.
#[derive(Debug, Clone)]
pub struct DitBlock {
    pub ada: Linear,
    pub spatial: MultiHeadAttention,
    pub temporal: Option<TemporalLayerParams>,
    pub cross: Option<MultiHeadAttention>,
    pub mlp: Mlp,
    pub width: usize,
}

/// Modulated, gated context shared by one forward pass.
pub struct BlockInputs<'a> {
    pub layout: &'a TokenLayout,
    /// `[1, W]`, already passed through SiLU.
    pub c: Var,
    pub cond: Option<(Var, usize)>,
}

impl DitBlock {
    /// `index` decides the temporal window shift (even: unshifted).
    pub fn new(pb: &mut ParamBuilder<'_>, name: &str, cfg: &DitConfig, index: usize) -> Result<Self> {
        let w = cfg.width;
        pb.scoped(name, |pb| {
            let temporal = match cfg.window {
                Some(win) => Some(TemporalLayerParams::without_norm(pb, "temporal", w, cfg.heads, TemporalWindowConfig::alternating(win, index)?)?),
                None => None,
            };
            let cross = match cfg.cond_dim {
                Some(e) => Some(MultiHeadAttention::new(pb, "cross", w, e, cfg.heads)?),
                None => None,
            };
            let branches = 2 + temporal.is_some() as usize + cross.is_some() as usize;
            Ok(DitBlock {
                ada: Linear::zeroed(pb, "ada", w, 3 * branches * w)?,
                spatial: MultiHeadAttention::new(pb, "spatial", w, w, cfg.heads)?,
                temporal,
                cross,
                mlp: Mlp::new(pb, "mlp", w, cfg.mlp_hidden, w)?,
                width: w,
            })
        })
    }

    fn modulate<T: Real>(g: &mut Graph<'_, T>, x: Var, shift: Var, scale: Var) -> Result<Var> {
        let n = g.normalize_rows(x, crate::nn::LN_EPS)?;
        let s = g.add_scalar(scale, 1.0)?;
        let m = g.mul_row(n, s)?;
        g.add_row(m, shift)
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<'_, T>, x: Var, inp: &BlockInputs<'_>) -> Result<Var> {
        let w = self.width;
        if g.cols(x) != w {
            return Err(Error::WidthMismatch { got: g.cols(x), want: w });
        }
        let mods = self.ada.forward(g, inp.c)?;
        let mut chunk = 0;
        let mut next = |g: &mut Graph<'_, T>| -> Result<(Var, Var, Var)> {
            let s = g.slice_cols(mods, chunk * w, w)?;
            let k = g.slice_cols(mods, (chunk + 1) * w, w)?;
            let gate = g.slice_cols(mods, (chunk + 2) * w, w)?;
            chunk += 3;
            Ok((s, k, gate))
        };
        let mut h = x;

        let (s, k, gate) = next(g)?;
        let m = Self::modulate(g, h, s, k)?;
        let a = self.spatial.forward(g, m, m, inp.layout.frame_groups(), None)?;
        let a = g.mul_row(a, gate)?;
        h = g.add(h, a)?;

        if let Some(t) = &self.temporal {
            let (s, k, gate) = next(g)?;
            let m = Self::modulate(g, h, s, k)?;
            let a = t.attend(g, m, inp.layout)?;
            let a = g.mul_row(a, gate)?;
            h = g.add(h, a)?;
        }

        if let Some(cross) = &self.cross {
            let (s, k, gate) = next(g)?;
            let (cond, per_frame) = inp.cond.ok_or_else(|| Error::InvalidArgument("block expects conditioning tokens".into()))?;
            if g.rows(cond) < inp.layout.frames() * per_frame {
                return Err(Error::shape(format!("{} conditioning rows for {} frames", g.rows(cond), inp.layout.frames())));
            }
            let m = Self::modulate(g, h, s, k)?;
            let a = cross.forward(g, m, cond, inp.layout.cross_groups(per_frame), None)?;
            let a = g.mul_row(a, gate)?;
            h = g.add(h, a)?;
        }

        let (s, k, gate) = next(g)?;
        let m = Self::modulate(g, h, s, k)?;
        let a = self.mlp.forward(g, m)?;
        let a = g.mul_row(a, gate)?;
        g.add(h, a)
    }
}
