use std::sync::Arc;

use crate::compnet::{CompNet, CompNetConfig, CompressionPlan, CondTokens};
use crate::error::{Error, Result};
use crate::nn::{LayerNorm, Linear};
use crate::numerics::{DenseTensor, Graph, ParamBuilder, ParamId, ParamStore, Real, Var};
use crate::rng::SeedRng;
use crate::sst::{DenseOccupancySequence, SparseSpacetimeTensor, Structure};

use super::flow::{euler_sample, FlowNet};
use super::video::ConditioningVideo;

#[derive(Debug, Clone, PartialEq)]
pub struct LatentFlowConfig {
    pub latent_dim: usize,
    /// `cond_dim` must be set; the flow is always video-conditioned.
    pub net: CompNetConfig,
}

impl Default for LatentFlowConfig {
    fn default() -> Self {
        LatentFlowConfig {
            latent_dim: 8,
            net: CompNetConfig {
                cond_dim: Some(super::video::DEFAULT_EMBED_DIM),
                ..CompNetConfig::default()
            },
        }
    }
}

/// Stage-two velocity field over per-voxel latents, CompNet in the middle.
/// Latents are modelled after per-channel standardization.
#[derive(Debug, Clone)]
pub struct LatentFlow {
    pub cfg: LatentFlowConfig,
    pub input: Linear,
    pub net: CompNet,
    pub norm: LayerNorm,
    pub output: Linear,
    /// Per-channel latent mean and standard deviation, `[D]` each.
    pub stats_mean: ParamId,
    pub stats_std: ParamId,
}

/// Coordinates and conditioning of one latent-flow sample.
pub struct LatentCond {
    pub plan: Arc<CompressionPlan>,
    pub tokens: CondTokens,
}

impl LatentFlow {
    pub fn new(pb: &mut ParamBuilder<'_>, name: &str, cfg: LatentFlowConfig) -> Result<Self> {
        if cfg.net.cond_dim.is_none() {
            return Err(Error::InvalidArgument("latent flow needs a conditioning width".into()));
        }
        let (d, w) = (cfg.latent_dim, cfg.net.width);
        pb.scoped(name, |pb| {
            Ok(LatentFlow {
                input: Linear::new(pb, "input", d, w, true)?,
                net: CompNet::new(pb, "net", cfg.net.clone())?,
                norm: LayerNorm::new(pb, "norm", w)?,
                output: Linear::new(pb, "output", w, d, true)?,
                stats_mean: pb.zeros("stats.mean", vec![d])?,
                stats_std: pb.ones("stats.std", vec![d])?,
                cfg,
            })
        })
    }

    pub fn cond(&self, s: &Arc<Structure>, tokens: &CondTokens) -> Result<LatentCond> {
        if tokens.frames() != s.frames() as usize {
            return Err(Error::shape(format!("{} conditioning frames for {} frames", tokens.frames(), s.frames())));
        }
        Ok(LatentCond { plan: Arc::new(self.net.plan(s)?), tokens: tokens.clone() })
    }

    /// Sets the standardization statistics from example latents.
    pub fn fit_stats(&self, store: &mut ParamStore<f32>, latents: &[SparseSpacetimeTensor]) -> Result<()> {
        let d = self.cfg.latent_dim;
        let mut sum = vec![0.0f64; d];
        let mut sq = vec![0.0f64; d];
        let mut n = 0usize;
        for z in latents {
            if z.channels() != d {
                return Err(Error::WidthMismatch { got: z.channels(), want: d });
            }
            for row in z.features().chunks_exact(d) {
                for j in 0..d {
                    sum[j] += row[j] as f64;
                    sq[j] += (row[j] as f64).powi(2);
                }
            }
            n += z.len();
        }
        if n == 0 {
            return Err(Error::EmptyDataset);
        }
        let mean: Vec<f32> = sum.iter().map(|s| (s / n as f64) as f32).collect();
        let std: Vec<f32> = sq
            .iter()
            .zip(&sum)
            .map(|(q, s)| {
                let m = s / n as f64;
                ((q / n as f64 - m * m).max(0.0).sqrt().max(1e-3)) as f32
            })
            .collect();
        *store.get_mut(self.stats_mean) = DenseTensor::new(vec![d], mean)?;
        *store.get_mut(self.stats_std) = DenseTensor::new(vec![d], std)?;
        Ok(())
    }

    fn stats<'a>(&self, store: &'a ParamStore<f32>) -> (&'a [f32], &'a [f32]) {
        (store.get(self.stats_mean).data(), store.get(self.stats_std).data())
    }

    pub fn normalize(&self, store: &ParamStore<f32>, z: &SparseSpacetimeTensor) -> Result<DenseTensor<f32>> {
        let d = self.cfg.latent_dim;
        if z.channels() != d {
            return Err(Error::WidthMismatch { got: z.channels(), want: d });
        }
        let (m, s) = self.stats(store);
        let data = z.features().iter().enumerate().map(|(i, v)| (v - m[i % d]) / s[i % d]).collect();
        DenseTensor::new(vec![z.len(), d], data)
    }

    pub fn unnormalize(&self, store: &ParamStore<f32>, s: &Arc<Structure>, x: &DenseTensor<f32>) -> Result<SparseSpacetimeTensor> {
        let d = self.cfg.latent_dim;
        let (m, sd) = self.stats(store);
        let data = x.data().iter().enumerate().map(|(i, v)| v * sd[i % d] + m[i % d]).collect();
        SparseSpacetimeTensor::new(s.clone(), d, data)
    }
}

impl FlowNet for LatentFlow {
    type Cond = LatentCond;

    fn velocity<T: Real>(&self, g: &mut Graph<'_, T>, x: Var, t: &[f64], cond: &LatentCond) -> Result<Var> {
        let &[t] = t else {
            return Err(Error::shape(format!("{} flow times for one sample", t.len())));
        };
        let h = self.input.forward(g, x)?;
        let h = self.net.forward(g, h, &cond.plan, t, Some(&cond.tokens))?;
        let h = self.norm.forward(g, h)?;
        self.output.forward(g, h)
    }
}

/// Fine structure from a coarse occupancy: binarize at 0.5 and upsample by
/// `factor` with nearest-neighbour replication.
pub fn lift_structure(coarse: &DenseOccupancySequence, factor: u32) -> Result<Arc<Structure>> {
    let fine = coarse.binarize(0.5).upsample(factor)?;
    Ok(Arc::new(fine.structure(0.5)))
}

/// Samples latents on the lifted structure, in the VAE's latent scale.
pub fn generate_latents(
    structure: &DenseOccupancySequence,
    factor: u32,
    video: &ConditioningVideo,
    store: &ParamStore<f32>,
    model: &LatentFlow,
    steps: usize,
    rng: &mut SeedRng,
) -> Result<SparseSpacetimeTensor> {
    let s = lift_structure(structure, factor)?;
    if s.is_empty() {
        return Err(Error::EmptyStructure);
    }
    let cond = model.cond(&s, &video.tokens)?;
    let x = euler_sample(model, store, s.len(), model.cfg.latent_dim, steps, &cond, rng)?;
    model.unnormalize(store, &s, &x)
}
