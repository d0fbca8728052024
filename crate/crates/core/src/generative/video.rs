use std::sync::Arc;

use crate::compnet::CondTokens;
use crate::error::{Error, Result};
use crate::image::Image;
use crate::nn::sinusoidal;
use crate::numerics::DenseTensor;
use crate::rng::SeedRng;
use crate::sst::toy::frame_time;
use crate::sst::ToyAnimationSpec;

pub const DEFAULT_RENDER_SIZE: usize = 64;
pub const DEFAULT_PATCH: usize = 8;
pub const DEFAULT_EMBED_DIM: usize = 32;

const BACKGROUND: [f32; 3] = [1.0, 1.0, 1.0];
const MAX_MARCH_STEPS: usize = 128;
const HIT_EPS: f64 = 1e-4;

/// Orthographic front view (camera at `z = 0` looking along `+z`, `+y` up)
/// of the animation at normalized time `tau`, shaded with one directional light.
pub fn render_front(spec: &ToyAnimationSpec, tau: f64, size: usize) -> Image {
    let mut img = Image::new(size, size, BACKGROUND);
    if spec.size <= 0.0 {
        return img;
    }
    let light = normalize([-0.4, 0.6, -1.0]);
    let min_step = 0.25 / size as f64;
    for v in 0..size {
        for u in 0..size {
            let x = (u as f64 + 0.5) / size as f64;
            let y = 1.0 - (v as f64 + 0.5) / size as f64;
            let mut z = 0.0;
            for _ in 0..MAX_MARCH_STEPS {
                let p = [x, y, z];
                let d = spec.sdf(p, tau);
                if d < HIT_EPS {
                    let n = normal(spec, p, tau);
                    let shade = (0.35 + 0.65 * dot(n, light).max(0.0)) as f32;
                    let c = spec.color_at(p, tau);
                    img.set_pixel(u, v, [c[0] * shade, c[1] * shade, c[2] * shade]);
                    break;
                }
                z += d.max(min_step);
                if z > 1.0 {
                    break;
                }
            }
        }
    }
    img
}

fn dot(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn normalize(v: [f64; 3]) -> [f64; 3] {
    let l = dot(v, v).sqrt().max(1e-12);
    [v[0] / l, v[1] / l, v[2] / l]
}

fn normal(spec: &ToyAnimationSpec, p: [f64; 3], tau: f64) -> [f64; 3] {
    let h = 1e-4;
    let mut n = [0.0; 3];
    for (a, n) in n.iter_mut().enumerate() {
        let (mut lo, mut hi) = (p, p);
        lo[a] -= h;
        hi[a] += h;
        *n = spec.sdf(hi, tau) - spec.sdf(lo, tau);
    }
    normalize(n)
}

/// Fixed random linear patch embedding, standing in for a pretrained image
/// encoder: each `patch × patch` RGB patch (centred at 0.5) is projected to
/// `dim` values and a 2D sinusoidal patch position is added.
#[derive(Debug, Clone, PartialEq)]
pub struct VideoEmbedder {
    pub patch: usize,
    pub dim: usize,
    pub seed: u64,
    proj: Vec<f32>,
}

impl VideoEmbedder {
    pub fn new(patch: usize, dim: usize, seed: u64) -> Result<Self> {
        if patch == 0 || dim == 0 || dim % 4 != 0 {
            return Err(Error::BadDim(dim));
        }
        let fan_in = 3 * patch * patch;
        let mut rng = SeedRng::derive(seed, 0x7669_6465_6f);
        let s = (1.0 / fan_in as f64).sqrt();
        let proj = (0..fan_in * dim).map(|_| (rng.normal() * s) as f32).collect();
        Ok(VideoEmbedder { patch, dim, seed, proj })
    }

    pub fn tokens_per_frame(&self, size: usize) -> usize {
        (size / self.patch).pow(2)
    }

    /// `[patches, dim]` tokens of one frame, patches in row-major order.
    pub fn embed_frame(&self, img: &Image) -> Result<Vec<f32>> {
        let p = self.patch;
        if img.width() != img.height() || img.width() % p != 0 {
            return Err(Error::shape(format!("{}x{} frame for patch {p}", img.width(), img.height())));
        }
        let grid = img.width() / p;
        let fan_in = 3 * p * p;
        let mut out = Vec::with_capacity(grid * grid * self.dim);
        let mut patch = vec![0.0f32; fan_in];
        for py in 0..grid {
            for px in 0..grid {
                for dy in 0..p {
                    for dx in 0..p {
                        let c = img.pixel(px * p + dx, py * p + dy);
                        let o = (dy * p + dx) * 3;
                        for k in 0..3 {
                            patch[o + k] = c[k] - 0.5;
                        }
                    }
                }
                let half = self.dim / 2;
                let pos: Vec<f64> = sinusoidal(py as f64, half, 100.0).into_iter().chain(sinusoidal(px as f64, half, 100.0)).collect();
                for j in 0..self.dim {
                    let mut acc = 0.5 * pos[j];
                    for (i, v) in patch.iter().enumerate() {
                        acc += (*v * self.proj[i * self.dim + j]) as f64;
                    }
                    out.push(acc as f32);
                }
            }
        }
        Ok(out)
    }
}

/// Rendered conditioning frames and their embeddings.
#[derive(Debug, Clone, PartialEq)]
pub struct ConditioningVideo {
    pub frames: Vec<Image>,
    /// Patch tokens of every frame, used for cross-attention.
    pub tokens: CondTokens,
    /// `[T, dim]` mean of each frame's patch tokens.
    pub pooled: DenseTensor<f32>,
    pub embedder: Arc<VideoEmbedder>,
}

impl ConditioningVideo {
    pub fn from_frames(frames: Vec<Image>, embedder: &Arc<VideoEmbedder>) -> Result<Self> {
        if frames.is_empty() {
            return Err(Error::InvalidArgument("conditioning video has no frames".into()));
        }
        let per_frame = embedder.tokens_per_frame(frames[0].width());
        let mut tokens = Vec::new();
        let mut pooled = Vec::new();
        for f in &frames {
            if f.width() != frames[0].width() || f.height() != frames[0].height() {
                return Err(Error::shape("conditioning frames differ in size".to_string()));
            }
            let t = embedder.embed_frame(f)?;
            for j in 0..embedder.dim {
                let s: f64 = (0..per_frame).map(|i| t[i * embedder.dim + j] as f64).sum();
                pooled.push((s / per_frame as f64) as f32);
            }
            tokens.extend(t);
        }
        let n = frames.len();
        Ok(ConditioningVideo {
            tokens: CondTokens::new(DenseTensor::new(vec![n * per_frame, embedder.dim], tokens)?, per_frame)?,
            pooled: DenseTensor::new(vec![n, embedder.dim], pooled)?,
            embedder: embedder.clone(),
            frames,
        })
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    /// Same embedder, new frames.
    pub fn with_frames(&self, frames: Vec<Image>) -> Result<Self> {
        Self::from_frames(frames, &self.embedder)
    }

    pub fn dim(&self) -> usize {
        self.tokens.width()
    }

    /// Frames `start..start + len`, embeddings sliced to match.
    pub fn window(&self, start: usize, len: usize) -> Result<Self> {
        if len == 0 || start + len > self.len() {
            return Err(Error::FrameOutOfRange { t: start + len, frames: self.len() });
        }
        let pf = self.tokens.per_frame;
        let d = self.dim();
        let tok = &self.tokens.tokens.data()[start * pf * d..(start + len) * pf * d];
        let pooled = &self.pooled.data()[start * d..(start + len) * d];
        Ok(ConditioningVideo {
            frames: self.frames[start..start + len].to_vec(),
            tokens: CondTokens::new(DenseTensor::new(vec![len * pf, d], tok.to_vec())?, pf)?,
            pooled: DenseTensor::new(vec![len, d], pooled.to_vec())?,
            embedder: self.embedder.clone(),
        })
    }
}

/// Renders `frames` front views of size `size` and embeds them.
pub fn render_conditioning_video(spec: &ToyAnimationSpec, frames: usize, size: usize, embedder: &Arc<VideoEmbedder>) -> Result<ConditioningVideo> {
    let imgs = (0..frames).map(|t| render_front(spec, frame_time(t, frames), size)).collect();
    ConditioningVideo::from_frames(imgs, embedder)
}
