use std::sync::Arc;
use std::time::Instant;

use crate::error::{Error, Result};
use crate::generative::{vae_decode, vae_encode, VaeConfig, VaeModel};
use crate::numerics::{Adam, ParamBuilder, ParamStore};
use crate::rng::SeedRng;
use crate::sst::toy::frame_time;
use crate::sst::{build_sparse, voxelize_toy_animation, Fill, SparseSpacetimeTensor, ToyAnimationSpec, VoxelCoord4D};
use crate::training::{
    occupancy_fraction, render_feature_view, train_vae, voxel_color, voxel_targets, Aggregation, OccupancyFrame, ProgressiveSchedule, ToyCamera,
    TrainConfig, TrainLog, VaeExample,
};

use super::metrics::{psnr, voxel_flicker};
use super::report::MetricReport;

/// Encoder mean decoded back to `[occupancy logit, r, g, b]`.
pub fn vae_reconstruct(x: &SparseSpacetimeTensor, store: &ParamStore<f32>, model: &VaeModel) -> Result<SparseSpacetimeTensor> {
    let (mean, _) = vae_encode(x, store, model)?;
    vae_decode(&mean, store, model)
}

fn rgb(x: &SparseSpacetimeTensor) -> Vec<f32> {
    x.features().chunks(x.channels()).flat_map(|r| r[1..4].iter().copied()).collect()
}

fn random_specs(count: usize, seed: u64, stream: u64) -> Vec<ToyAnimationSpec> {
    (0..count).map(|i| ToyAnimationSpec::random(&mut SeedRng::derive(seed, (stream << 32) | i as u64))).collect()
}

fn train_config(steps: u64, lr: f64, frames: u32, seed: u64, name: &str) -> Result<TrainConfig> {
    let mut cfg = TrainConfig::new(steps, seed)?;
    cfg.adam.lr = lr;
    cfg.schedule = ProgressiveSchedule::constant(frames as usize)?;
    cfg.name = name.to_string();
    Ok(cfg)
}

fn fresh_vae(cfg: &VaeConfig, seed: u64) -> Result<(ParamStore<f32>, VaeModel)> {
    let mut store = ParamStore::new();
    let model = VaeModel::new(&mut ParamBuilder::new(&mut store, seed), "vae", cfg.clone())?;
    Ok((store, model))
}

#[derive(Debug, Clone)]
pub struct TemporalAblationConfig {
    pub resolution: u32,
    pub frames: u32,
    pub train_count: usize,
    pub heldout_count: usize,
    /// Std of the independent per-frame Gaussian noise on input colours.
    pub noise_std: f64,
    pub steps: u64,
    pub lr: f64,
    /// `window` is overridden per arm.
    pub vae: VaeConfig,
    pub window: u32,
    pub seed: u64,
}

impl Default for TemporalAblationConfig {
    fn default() -> Self {
        TemporalAblationConfig {
            resolution: 16,
            frames: 8,
            train_count: 64,
            heldout_count: 20,
            noise_std: 0.3,
            steps: 4000,
            lr: 2e-3,
            vae: VaeConfig { width: 24, heads: 2, depth: 2, mlp_hidden: 48, ..VaeConfig::default() },
            window: 2,
            seed: 0,
        }
    }
}

/// Clean surface targets and their noisy inputs.
pub fn temporal_ablation_example(spec: &ToyAnimationSpec, cfg: &TemporalAblationConfig, rng: &mut SeedRng) -> Result<VaeExample> {
    let s = Arc::new(voxelize_toy_animation(spec, cfg.resolution, cfg.frames, Fill::Surface)?.structure(0.5));
    if s.is_empty() {
        return Err(Error::EmptyStructure);
    }
    let target = voxel_targets(spec, &s)?;
    let mut f = target.features().to_vec();
    for row in f.chunks_exact_mut(4) {
        for v in &mut row[1..] {
            *v += (cfg.noise_std * rng.normal()) as f32;
        }
    }
    Ok(VaeExample { input: target.with_features(4, f)?, target })
}

#[derive(Debug, Clone)]
pub struct TemporalAblation {
    pub without: MetricReport,
    pub with: MetricReport,
    /// Flicker of the clean targets themselves.
    pub reference: MetricReport,
    pub logs: [TrainLog; 2],
}

/// Trains a frame-independent VAE and one with temporal layers on the same
/// data and step budget, then measures RGB PSNR and voxel flicker of their
/// reconstructions on held-out animations.
pub fn ablate_temporal_alignment(cfg: &TemporalAblationConfig) -> Result<TemporalAblation> {
    let build = |specs: Vec<ToyAnimationSpec>, stream: u64| -> Result<Vec<VaeExample>> {
        specs
            .iter()
            .enumerate()
            .map(|(i, s)| temporal_ablation_example(s, cfg, &mut SeedRng::derive(cfg.seed ^ 0x6e6f_6973_65, (stream << 32) | i as u64)))
            .collect()
    };
    let train = build(random_specs(cfg.train_count, cfg.seed, 1), 1)?;
    let heldout = build(random_specs(cfg.heldout_count, cfg.seed, 2), 2)?;
    if train.is_empty() || heldout.is_empty() {
        return Err(Error::EmptyDataset);
    }

    let mut reports = Vec::new();
    let mut logs = Vec::new();
    for (label, window) in [("without_temporal", None), ("with_temporal", Some(cfg.window))] {
        let vae_cfg = VaeConfig { window, ..cfg.vae.clone() };
        let (mut store, model) = fresh_vae(&vae_cfg, cfg.seed)?;
        let tc = train_config(cfg.steps, cfg.lr, cfg.frames, cfg.seed, label)?;
        let mut adam = Adam::new(tc.adam.clone(), &store);
        logs.push(train_vae(&model, &mut store, &mut adam, &train, &tc)?);
        let (mut p, mut fl) = (0.0, 0.0);
        for ex in &heldout {
            let y = vae_reconstruct(&ex.input, &store, &model)?;
            p += psnr(&rgb(&y), &rgb(&ex.target), 1.0)?;
            fl += voxel_flicker(&y, 1, 3)?;
        }
        let n = heldout.len() as f64;
        reports.push(MetricReport { flicker: Some(fl / n), ..MetricReport::new(label).with_psnr(p / n) });
    }
    let mut fl = 0.0;
    for ex in &heldout {
        fl += voxel_flicker(&ex.target, 1, 3)?;
    }
    let reference = MetricReport { flicker: Some(fl / heldout.len() as f64), ..MetricReport::new("clean_targets") };
    let with = reports.pop().expect("two arms");
    let without = reports.pop().expect("two arms");
    let logs: [TrainLog; 2] = logs.try_into().expect("two arms");
    Ok(TemporalAblation { without, with, reference, logs })
}

#[derive(Debug, Clone)]
pub struct AggregationAblationConfig {
    pub resolution: u32,
    pub frames: u32,
    pub views: usize,
    /// Solid scenes occlude their interior in every view.
    pub fill: Fill,
    pub train_count: usize,
    pub eval_count: usize,
    pub steps: u64,
    pub lr: f64,
    pub vae: VaeConfig,
    /// Encode timings take the minimum over this many repeats.
    pub timing_repeats: usize,
    pub seed: u64,
}

impl Default for AggregationAblationConfig {
    fn default() -> Self {
        AggregationAblationConfig {
            resolution: 16,
            frames: 4,
            views: 4,
            fill: Fill::Solid,
            train_count: 64,
            eval_count: 8,
            steps: 3000,
            lr: 2e-3,
            vae: VaeConfig { width: 24, heads: 2, depth: 1, mlp_hidden: 48, ..VaeConfig::default() },
            timing_repeats: 3,
            seed: 0,
        }
    }
}

/// Rendered per-view features of one voxelized animation.
pub struct AggregationScene {
    pub spec: ToyAnimationSpec,
    pub occupancy: crate::sst::DenseOccupancySequence,
    /// Occupancy fraction per voxel, laid out like `occupancy`; zero off the surface.
    pub fraction: Vec<f32>,
    pub cameras: Vec<ToyCamera>,
    /// `views[t][k]`.
    pub views: Vec<Vec<crate::training::FeatureImage>>,
}

impl AggregationScene {
    pub fn new(spec: ToyAnimationSpec, resolution: u32, frames: u32, views: usize, fill: Fill) -> Result<Self> {
        let occupancy = voxelize_toy_animation(&spec, resolution, frames, fill)?;
        let n = resolution as usize;
        let cameras = ToyCamera::ring(views, n)?;
        let mut all = Vec::with_capacity(frames as usize);
        let mut fraction = vec![0.0; occupancy.values().len()];
        for t in 0..frames as usize {
            let tau = frame_time(t, frames as usize);
            let frame = OccupancyFrame { resolution: n, values: occupancy.frame(t) };
            for xyz in frame.active() {
                fraction[occupancy.offset(t, xyz[0], xyz[1], xyz[2])] = occupancy_fraction(&spec, n, [xyz[0] as u16, xyz[1] as u16, xyz[2] as u16], tau);
            }
            let feature = |xyz: [usize; 3]| voxel_color(&spec, n, [xyz[0] as u16, xyz[1] as u16, xyz[2] as u16], tau).to_vec();
            all.push(cameras.iter().map(|c| render_feature_view(frame, c, 3, feature)).collect::<Result<Vec<_>>>()?);
        }
        Ok(AggregationScene { spec, occupancy, fraction, cameras, views: all })
    }

    /// `[occupancy fraction, aggregated r, g, b]` on the retained voxels.
    pub fn aggregate(&self, mode: Aggregation) -> Result<SparseSpacetimeTensor> {
        let n = self.occupancy.resolution() as usize;
        let frames = self.occupancy.frames();
        let mut entries = Vec::new();
        for t in 0..frames as usize {
            let frame = OccupancyFrame { resolution: n, values: self.occupancy.frame(t) };
            let sf = mode.run(frame, t, &self.views[t], &self.cameras)?;
            for (c, f) in sf.coords.iter().zip(sf.features.chunks_exact(3)) {
                let mut row = vec![self.fraction[self.occupancy.offset(t, c[0] as usize, c[1] as usize, c[2] as usize)]];
                row.extend_from_slice(f);
                entries.push((VoxelCoord4D::new(t as u16, c[0], c[1], c[2]), row));
            }
        }
        build_sparse(entries, n as u32, frames, 4)
    }

    /// PSNR of what the ring cameras see: at each covered pixel, the decoded
    /// colour of the first-hit voxel against the true colour.
    pub fn view_psnr(&self, decoded: &SparseSpacetimeTensor) -> Result<f64> {
        let (mut pred, mut truth) = (Vec::new(), Vec::new());
        for (t, views) in self.views.iter().enumerate() {
            for (view, cam) in views.iter().zip(&self.cameras) {
                for v in 0..view.size {
                    for u in 0..view.size {
                        let (Some(d), Some(f)) = (view.depth_at(u, v), view.get(u, v)) else { continue };
                        let [x, y, z] = cam.unproject(u, v, d);
                        let row = decoded
                            .get(VoxelCoord4D::new(t as u16, x as u16, y as u16, z as u16))
                            .ok_or_else(|| Error::shape(format!("visible voxel {t} {x} {y} {z} missing from the decoded tensor")))?;
                        pred.extend_from_slice(&row[1..4]);
                        truth.extend_from_slice(f);
                    }
                }
            }
        }
        psnr(&pred, &truth, 1.0)
    }

    /// Ground truth on the same coordinates as `x`.
    pub fn targets(&self, x: &SparseSpacetimeTensor) -> Result<SparseSpacetimeTensor> {
        voxel_targets(&self.spec, x.structure())
    }
}

#[derive(Debug, Clone)]
pub struct AggregationAblation {
    pub visible: MetricReport,
    pub mean: MetricReport,
    pub logs: [TrainLog; 2],
}

/// For each aggregation mode: trains a VAE on aggregated inputs, then reports
/// mean active length, encode throughput (aggregation plus encoder) and RGB
/// reconstruction PSNR as seen from the ring cameras.
pub fn ablate_aggregation(cfg: &AggregationAblationConfig) -> Result<AggregationAblation> {
    let scenes = |count: usize, stream: u64| -> Result<Vec<AggregationScene>> {
        random_specs(count, cfg.seed, stream)
            .into_iter()
            .map(|s| AggregationScene::new(s, cfg.resolution, cfg.frames, cfg.views, cfg.fill))
            .collect()
    };
    let train_scenes = scenes(cfg.train_count, 3)?;
    let eval_scenes = scenes(cfg.eval_count, 4)?;
    if train_scenes.is_empty() || eval_scenes.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut reports = Vec::new();
    let mut logs = Vec::new();
    for (label, mode) in [("visible", Aggregation::Visible), ("mean", Aggregation::Mean)] {
        let train = train_scenes
            .iter()
            .map(|s| {
                let input = s.aggregate(mode)?;
                Ok(VaeExample { target: s.targets(&input)?, input })
            })
            .collect::<Result<Vec<_>>>()?;
        let (mut store, model) = fresh_vae(&cfg.vae, cfg.seed)?;
        let tc = train_config(cfg.steps, cfg.lr, cfg.frames, cfg.seed, label)?;
        let mut adam = Adam::new(tc.adam.clone(), &store);
        logs.push(train_vae(&model, &mut store, &mut adam, &train, &tc)?);

        let mut best = f64::INFINITY;
        for _ in 0..cfg.timing_repeats.max(1) {
            let start = Instant::now();
            for s in &eval_scenes {
                let x = s.aggregate(mode)?;
                std::hint::black_box(vae_encode(&x, &store, &model)?);
            }
            best = best.min(start.elapsed().as_secs_f64());
        }
        let (mut length, mut p) = (0.0, 0.0);
        for s in &eval_scenes {
            let x = s.aggregate(mode)?;
            length += x.len() as f64;
            let y = vae_reconstruct(&x, &store, &model)?;
            p += s.view_psnr(&y)?;
        }
        let n = eval_scenes.len() as f64;
        reports.push(MetricReport {
            encode_speed: Some(n / best.max(1e-9)),
            avg_length: Some(length / n),
            ..MetricReport::new(label).with_psnr(p / n)
        });
    }
    let mean = reports.pop().expect("two arms");
    let visible = reports.pop().expect("two arms");
    let logs: [TrainLog; 2] = logs.try_into().expect("two arms");
    Ok(AggregationAblation { visible, mean, logs })
}
