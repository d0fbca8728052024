use super::tokens::{TokenBatch, TokenLayout};
use super::window::TemporalWindowConfig;
use crate::error::{Error, Result};
use crate::nn::{LayerNorm, MultiHeadAttention, RopePositions};
use crate::numerics::{Graph, ParamBuilder, ParamStore, Real, Var};

pub const ROPE_BASE: f64 = 10000.0;

/// Windowed temporal self-attention over all tokens of all frames in each
/// window, with RoPE on the frame index.
#[derive(Debug, Clone)]
pub struct TemporalLayerParams {
    /// Pre-norm for standalone use; DiT blocks modulate their own norm instead.
    pub norm: Option<LayerNorm>,
    pub attn: MultiHeadAttention,
    pub window: TemporalWindowConfig,
}

impl TemporalLayerParams {
    pub fn new(pb: &mut ParamBuilder<'_>, name: &str, width: usize, heads: usize, window: TemporalWindowConfig) -> Result<Self> {
        Self::build(pb, name, width, heads, window, true)
    }

    /// Without the layer's own pre-norm.
    pub fn without_norm(pb: &mut ParamBuilder<'_>, name: &str, width: usize, heads: usize, window: TemporalWindowConfig) -> Result<Self> {
        Self::build(pb, name, width, heads, window, false)
    }

    fn build(pb: &mut ParamBuilder<'_>, name: &str, width: usize, heads: usize, window: TemporalWindowConfig, norm: bool) -> Result<Self> {
        if heads == 0 || width % heads != 0 {
            return Err(Error::BadDim(width));
        }
        if (width / heads) % 2 != 0 {
            return Err(Error::OddDim(width / heads));
        }
        pb.scoped(name, |pb| {
            Ok(TemporalLayerParams {
                norm: if norm { Some(LayerNorm::new(pb, "norm", width)?) } else { None },
                attn: MultiHeadAttention::new(pb, "attn", width, width, heads)?,
                window,
            })
        })
    }

    pub fn width(&self) -> usize {
        self.attn.width()
    }

    fn check(&self, g: &Graph<'_, impl Real>, x: Var, layout: &TokenLayout) -> Result<()> {
        if g.cols(x) != self.width() {
            return Err(Error::WidthMismatch { got: g.cols(x), want: self.width() });
        }
        if g.rows(x) != layout.rows() {
            return Err(Error::shape(format!("{} tokens for a layout of {}", g.rows(x), layout.rows())));
        }
        Ok(())
    }

    /// Windowed attention output, without residual.
    pub fn attend<T: Real>(&self, g: &mut Graph<'_, T>, x: Var, layout: &TokenLayout) -> Result<Var> {
        self.check(g, x, layout)?;
        let pos = layout.positions();
        let rope = RopePositions { q: pos, k: pos, base: ROPE_BASE };
        self.attn.forward(g, x, x, layout.window_groups(self.window), Some(rope))
    }

    /// `x + attend(x)`.
    pub fn temporal_attention<T: Real>(&self, g: &mut Graph<'_, T>, x: Var, layout: &TokenLayout) -> Result<Var> {
        let a = self.attend(g, x, layout)?;
        g.add(x, a)
    }

    /// `x + attend(LN(x))`.
    pub fn forward<T: Real>(&self, g: &mut Graph<'_, T>, x: Var, layout: &TokenLayout) -> Result<Var> {
        self.check(g, x, layout)?;
        let n = match &self.norm {
            Some(norm) => norm.forward(g, x)?,
            None => x,
        };
        let a = self.attend(g, n, layout)?;
        g.add(x, a)
    }
}

fn run(
    tokens: &TokenBatch,
    store: &ParamStore<f32>,
    f: impl FnOnce(&mut Graph<'_, f32>, Var, &TokenLayout) -> Result<Var>,
) -> Result<TokenBatch> {
    let (sorted, order) = tokens.rearrange();
    let layout = sorted.layout()?;
    let mut g = Graph::inference(store);
    let x = g.input(&sorted.features);
    let y = f(&mut g, x, &layout)?;
    let out = TokenBatch { features: g.value(y).clone(), ..sorted };
    out.restore(&order)
}

/// Applies `x + attend(x)` to a token batch in any order.
pub fn temporal_attention(tokens: &TokenBatch, store: &ParamStore<f32>, layer: &TemporalLayerParams) -> Result<TokenBatch> {
    if tokens.width() != layer.width() {
        return Err(Error::WidthMismatch { got: tokens.width(), want: layer.width() });
    }
    run(tokens, store, |g, x, l| layer.temporal_attention(g, x, l))
}

/// Applies the pre-norm residual temporal layer to a token batch.
pub fn temporal_layer_forward(tokens: &TokenBatch, store: &ParamStore<f32>, layer: &TemporalLayerParams) -> Result<TokenBatch> {
    if tokens.width() != layer.width() {
        return Err(Error::WidthMismatch { got: tokens.width(), want: layer.width() });
    }
    run(tokens, store, |g, x, l| layer.forward(g, x, l))
}
