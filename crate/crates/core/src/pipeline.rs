//! The two-stage pipeline: VAE, structure flow, latent flow and sampling.

use std::path::Path;

use crate::compnet::CompNetConfig;
use crate::config::Config;
use crate::error::{Error, Result};
use crate::generative::{
    decoded_to_occupancy_color, generate_latents, generate_structure, vae_decode, vae_encode, ConditioningVideo, LatentFlow, LatentFlowConfig,
    StructureFlow, StructureFlowConfig, VaeConfig, VaeModel, DEFAULT_EULER_STEPS,
};
use crate::numerics::{Adam, ParamBuilder, ParamStore};
use crate::rng::SeedRng;
use crate::eval::{psnr, voxel_flicker, MetricReport};
use crate::image::{encode_ppm_sequence, read_ppm_sequence, Image};
use crate::sst::{
    build_sparse, densify, read_sst, shared_coords, sparsify, structure_iou, write_sst, DenseOccupancySequence, FeatureSource, SparseSpacetimeTensor,
};
use crate::training::{
    load_checkpoint, save_checkpoint, train_latent_flow, train_structure_flow, train_vae, DataConfig, LatentExample, MaskAugmentConfig,
    ProgressiveSchedule, StructureExample, ToySample, TrainConfig, TrainLog, VaeExample,
};

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub data: DataConfig,
    /// Animations synthesized by `gen-data`.
    pub count: usize,
    pub vae: VaeConfig,
    pub structure: StructureFlowConfig,
    pub latent: LatentFlowConfig,
    pub vae_steps: u64,
    pub structure_steps: u64,
    pub latent_steps: u64,
    pub lr: f64,
    /// Progressive frame-length schedule; otherwise full-length windows.
    pub progressive: bool,
    pub mask: Option<MaskAugmentConfig>,
    pub checkpoint_every: Option<u64>,
    pub sample_steps: usize,
    pub seed: u64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        let data = DataConfig::default();
        PipelineConfig {
            count: 10,
            vae: VaeConfig::default(),
            structure: StructureFlowConfig { resolution: data.coarse_resolution, cond_dim: data.embed_dim, ..StructureFlowConfig::default() },
            latent: LatentFlowConfig {
                latent_dim: VaeConfig::default().latent_dim,
                net: CompNetConfig { cond_dim: Some(data.embed_dim), ..CompNetConfig::default() },
            },
            data,
            vae_steps: 1000,
            structure_steps: 1000,
            latent_steps: 1000,
            lr: 1e-3,
            progressive: true,
            mask: Some(MaskAugmentConfig::default()),
            checkpoint_every: None,
            sample_steps: DEFAULT_EULER_STEPS,
            seed: 0,
        }
    }
}

/// Keys accepted by [`PipelineConfig::from_config`].
pub const CONFIG_KEYS: &[&str] = &[
    "seed",
    "data.count",
    "data.resolution",
    "data.coarse_resolution",
    "data.frames",
    "data.render_size",
    "data.patch",
    "data.embed_dim",
    "vae.latent_dim",
    "vae.width",
    "vae.heads",
    "vae.depth",
    "vae.mlp_hidden",
    "vae.window",
    "vae.beta",
    "vae.steps",
    "structure.patch",
    "structure.width",
    "structure.heads",
    "structure.depth",
    "structure.mlp_hidden",
    "structure.window",
    "structure.steps",
    "latent.width",
    "latent.heads",
    "latent.depth",
    "latent.mlp_hidden",
    "latent.window",
    "latent.spatial_stages",
    "latent.temporal_stages",
    "latent.steps",
    "train.lr",
    "train.progressive",
    "train.mask",
    "train.mask_probability",
    "train.checkpoint_every",
    "sample.steps",
];

/// `0` disables a window.
fn window(c: &Config, key: &str, default: Option<u32>) -> Result<Option<u32>> {
    Ok(match c.get::<u32>(key)? {
        None => default,
        Some(0) => None,
        Some(w) => Some(w),
    })
}

impl PipelineConfig {
    /// Defaults overridden by `c`; derived widths (conditioning, latent
    /// size, structure resolution) follow the data and VAE settings.
    pub fn from_config(c: &Config) -> Result<Self> {
        c.check_known(CONFIG_KEYS)?;
        let d = PipelineConfig::default();
        let data = DataConfig {
            resolution: c.get_or("data.resolution", d.data.resolution)?,
            coarse_resolution: c.get_or("data.coarse_resolution", d.data.coarse_resolution)?,
            frames: c.get_or("data.frames", d.data.frames)?,
            render_size: c.get_or("data.render_size", d.data.render_size)?,
            patch: c.get_or("data.patch", d.data.patch)?,
            embed_dim: c.get_or("data.embed_dim", d.data.embed_dim)?,
            embed_seed: d.data.embed_seed,
        };
        let vae = VaeConfig {
            latent_dim: c.get_or("vae.latent_dim", d.vae.latent_dim)?,
            width: c.get_or("vae.width", d.vae.width)?,
            heads: c.get_or("vae.heads", d.vae.heads)?,
            depth: c.get_or("vae.depth", d.vae.depth)?,
            mlp_hidden: c.get_or("vae.mlp_hidden", d.vae.mlp_hidden)?,
            window: window(c, "vae.window", d.vae.window)?,
            beta: c.get_or("vae.beta", d.vae.beta)?,
            ..d.vae
        };
        let structure = StructureFlowConfig {
            resolution: data.coarse_resolution,
            patch: c.get_or("structure.patch", d.structure.patch)?,
            width: c.get_or("structure.width", d.structure.width)?,
            heads: c.get_or("structure.heads", d.structure.heads)?,
            depth: c.get_or("structure.depth", d.structure.depth)?,
            mlp_hidden: c.get_or("structure.mlp_hidden", d.structure.mlp_hidden)?,
            window: window(c, "structure.window", d.structure.window)?,
            cond_dim: data.embed_dim,
            freq_dim: d.structure.freq_dim,
        };
        let n = &d.latent.net;
        let latent = LatentFlowConfig {
            latent_dim: vae.latent_dim,
            net: CompNetConfig {
                width: c.get_or("latent.width", n.width)?,
                heads: c.get_or("latent.heads", n.heads)?,
                depth: c.get_or("latent.depth", n.depth)?,
                mlp_hidden: c.get_or("latent.mlp_hidden", n.mlp_hidden)?,
                window: window(c, "latent.window", n.window)?,
                cond_dim: Some(data.embed_dim),
                spatial_stages: c.get_or("latent.spatial_stages", n.spatial_stages)?,
                temporal_stages: c.get_or("latent.temporal_stages", n.temporal_stages)?,
                freq_dim: n.freq_dim,
            },
        };
        let mask = if c.get_or("train.mask", d.mask.is_some())? {
            let m = MaskAugmentConfig { probability: c.get_or("train.mask_probability", MaskAugmentConfig::default().probability)?, ..Default::default() };
            m.validate()?;
            Some(m)
        } else {
            None
        };
        let cfg = PipelineConfig {
            data,
            count: c.get_or("data.count", d.count)?,
            vae,
            structure,
            latent,
            vae_steps: c.get_or("vae.steps", d.vae_steps)?,
            structure_steps: c.get_or("structure.steps", d.structure_steps)?,
            latent_steps: c.get_or("latent.steps", d.latent_steps)?,
            lr: c.get_or("train.lr", d.lr)?,
            progressive: c.get_or("train.progressive", d.progressive)?,
            mask,
            checkpoint_every: c.get("train.checkpoint_every")?,
            sample_steps: c.get_or("sample.steps", d.sample_steps)?,
            seed: c.get_or("seed", d.seed)?,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.data.upsample_factor()?;
        if self.structure.resolution != self.data.coarse_resolution {
            return Err(Error::Config("structure resolution must equal data.coarse_resolution".into()));
        }
        if self.structure.cond_dim != self.data.embed_dim || self.latent.net.cond_dim != Some(self.data.embed_dim) {
            return Err(Error::Config("conditioning width must equal data.embed_dim".into()));
        }
        if self.latent.latent_dim != self.vae.latent_dim {
            return Err(Error::Config("latent flow width must equal vae.latent_dim".into()));
        }
        if self.count == 0 {
            return Err(Error::Config("data.count must be positive".into()));
        }
        if !(self.lr > 0.0) || self.sample_steps == 0 {
            return Err(Error::Config("train.lr and sample.steps must be positive".into()));
        }
        Ok(())
    }

    fn train_config(&self, steps: u64, stream: u64, name: &str, masked: bool) -> Result<TrainConfig> {
        let mut t = TrainConfig::new(steps, self.seed ^ (stream << 40))?;
        t.adam.lr = self.lr;
        t.schedule = if self.progressive {
            ProgressiveSchedule::scaled(steps, self.data.frames as usize)?
        } else {
            ProgressiveSchedule::constant(self.data.frames as usize)?
        };
        t.mask = if masked { self.mask.clone() } else { None };
        t.checkpoint_every = self.checkpoint_every;
        t.name = name.to_string();
        Ok(t)
    }

    pub fn build_vae(&self) -> Result<(ParamStore<f32>, VaeModel)> {
        let mut store = ParamStore::new();
        let m = VaeModel::new(&mut ParamBuilder::new(&mut store, self.seed ^ 0x1), "vae", self.vae.clone())?;
        Ok((store, m))
    }

    pub fn build_structure(&self) -> Result<(ParamStore<f32>, StructureFlow)> {
        let mut store = ParamStore::new();
        let m = StructureFlow::new(&mut ParamBuilder::new(&mut store, self.seed ^ 0x2), "structure", self.structure.clone())?;
        Ok((store, m))
    }

    pub fn build_latent(&self) -> Result<(ParamStore<f32>, LatentFlow)> {
        let mut store = ParamStore::new();
        let m = LatentFlow::new(&mut ParamBuilder::new(&mut store, self.seed ^ 0x3), "latent", self.latent.clone())?;
        Ok((store, m))
    }
}

/// What the training stages consume from one animation.
#[derive(Debug, Clone)]
pub struct DatasetItem {
    pub coarse: DenseOccupancySequence,
    /// `[occupancy fraction, r, g, b]` on the lifted structure.
    pub features: SparseSpacetimeTensor,
    pub video: ConditioningVideo,
}

impl From<&ToySample> for DatasetItem {
    fn from(s: &ToySample) -> Self {
        DatasetItem { coarse: s.coarse.clone(), features: s.features.clone(), video: s.video.clone() }
    }
}

/// Writes `item-NNN.sst`, `item-NNN.coarse.sst` and `item-NNN.ppm` per item.
pub fn write_dataset(dir: impl AsRef<Path>, items: &[DatasetItem]) -> Result<()> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir)?;
    for (i, it) in items.iter().enumerate() {
        write_sst(dir.join(format!("item-{i:03}.sst")), &it.features)?;
        let coarse = sparsify(&it.coarse, 0.5, &FeatureSource::Constant(vec![1.0]))?;
        write_sst(dir.join(format!("item-{i:03}.coarse.sst")), &coarse)?;
        std::fs::write(dir.join(format!("item-{i:03}.ppm")), encode_ppm_sequence(&it.video.frames))?;
    }
    Ok(())
}

/// Reads every item written by [`write_dataset`], in name order.
pub fn read_dataset(dir: impl AsRef<Path>, cfg: &PipelineConfig) -> Result<Vec<DatasetItem>> {
    let dir = dir.as_ref();
    let mut stems: Vec<String> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok())
        .filter_map(|e| e.file_name().to_str().and_then(|n| n.strip_suffix(".coarse.sst")).map(str::to_string))
        .collect();
    stems.sort();
    if stems.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let embedder = cfg.data.embedder()?;
    stems
        .iter()
        .map(|stem| {
            let features = read_sst(dir.join(format!("{stem}.sst")))?;
            let coarse = densify(&read_sst(dir.join(format!("{stem}.coarse.sst")))?);
            let video = ConditioningVideo::from_frames(read_ppm_sequence(dir.join(format!("{stem}.ppm")))?, &embedder)?;
            if video.len() != features.frames() as usize || coarse.frames() != features.frames() {
                return Err(Error::InvalidArgument(format!("{stem}: frame counts disagree")));
            }
            Ok(DatasetItem { coarse, features, video })
        })
        .collect()
}

/// A trained (or loaded) stage: model plus parameters.
#[derive(Debug, Clone)]
pub struct Stage<M> {
    pub model: M,
    pub store: ParamStore<f32>,
}

fn checkpoint_dir(t: &mut TrainConfig, dir: Option<&Path>) {
    if t.checkpoint_every.is_some() {
        t.checkpoint_dir = dir.map(Path::to_path_buf);
    }
}

pub fn train_vae_stage(cfg: &PipelineConfig, samples: &[DatasetItem], dir: Option<&Path>) -> Result<(Stage<VaeModel>, TrainLog)> {
    let data: Vec<VaeExample> = samples.iter().map(|s| VaeExample { input: s.features.clone(), target: s.features.clone() }).collect();
    let (mut store, model) = cfg.build_vae()?;
    let mut t = cfg.train_config(cfg.vae_steps, 1, "vae", false)?;
    checkpoint_dir(&mut t, dir);
    let mut adam = Adam::new(t.adam.clone(), &store);
    let log = train_vae(&model, &mut store, &mut adam, &data, &t)?;
    Ok((Stage { model, store }, log))
}

pub fn train_structure_stage(cfg: &PipelineConfig, samples: &[DatasetItem], dir: Option<&Path>) -> Result<(Stage<StructureFlow>, TrainLog)> {
    let data: Vec<StructureExample> = samples.iter().map(|s| StructureExample { coarse: s.coarse.clone(), video: s.video.clone() }).collect();
    let (mut store, model) = cfg.build_structure()?;
    let mut t = cfg.train_config(cfg.structure_steps, 2, "structure", true)?;
    checkpoint_dir(&mut t, dir);
    let mut adam = Adam::new(t.adam.clone(), &store);
    let log = train_structure_flow(&model, &mut store, &mut adam, &data, &t)?;
    Ok((Stage { model, store }, log))
}

/// Encoder means of every sample, paired with its video.
pub fn encode_latents(vae: &Stage<VaeModel>, samples: &[DatasetItem]) -> Result<Vec<LatentExample>> {
    samples
        .iter()
        .map(|s| {
            let (mean, _) = vae_encode(&s.features, &vae.store, &vae.model)?;
            Ok(LatentExample { latents: mean, video: s.video.clone() })
        })
        .collect()
}

pub fn train_latent_stage(cfg: &PipelineConfig, data: &[LatentExample], dir: Option<&Path>) -> Result<(Stage<LatentFlow>, TrainLog)> {
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let (mut store, model) = cfg.build_latent()?;
    let latents: Vec<SparseSpacetimeTensor> = data.iter().map(|d| d.latents.clone()).collect();
    model.fit_stats(&mut store, &latents)?;
    let mut t = cfg.train_config(cfg.latent_steps, 3, "latent", true)?;
    checkpoint_dir(&mut t, dir);
    let mut adam = Adam::new(t.adam.clone(), &store);
    let log = train_latent_flow(&model, &mut store, &mut adam, data, &t)?;
    Ok((Stage { model, store }, log))
}

pub fn save_stage<M>(stage: &Stage<M>, path: impl AsRef<Path>) -> Result<()> {
    save_checkpoint(path, &stage.store, None)
}

fn load<M>(path: impl AsRef<Path>, built: (ParamStore<f32>, M)) -> Result<Stage<M>> {
    let (mut store, model) = built;
    load_checkpoint(path, &mut store, None)?;
    Ok(Stage { model, store })
}

pub fn load_vae(cfg: &PipelineConfig, path: impl AsRef<Path>) -> Result<Stage<VaeModel>> {
    load(path, cfg.build_vae()?)
}

pub fn load_structure(cfg: &PipelineConfig, path: impl AsRef<Path>) -> Result<Stage<StructureFlow>> {
    load(path, cfg.build_structure()?)
}

pub fn load_latent(cfg: &PipelineConfig, path: impl AsRef<Path>) -> Result<Stage<LatentFlow>> {
    load(path, cfg.build_latent()?)
}

#[derive(Debug, Clone)]
pub struct Generated {
    /// Sigmoid occupancy at `N_s`.
    pub coarse: DenseOccupancySequence,
    /// `[occupancy probability, r, g, b]` on the lifted structure.
    pub decoded: SparseSpacetimeTensor,
}

/// Structure, then latents on the lifted structure, then decoding.
pub fn generate(
    cfg: &PipelineConfig,
    video: &ConditioningVideo,
    vae: &Stage<VaeModel>,
    structure: &Stage<StructureFlow>,
    latent: &Stage<LatentFlow>,
    rng: &mut SeedRng,
) -> Result<Generated> {
    let coarse = generate_structure(video, &structure.store, &structure.model, cfg.sample_steps, rng)?;
    let z = generate_latents(&coarse, cfg.data.upsample_factor()?, video, &latent.store, &latent.model, cfg.sample_steps, rng)?;
    let decoded = decoded_to_occupancy_color(&vae_decode(&z, &vae.store, &vae.model)?)?;
    Ok(Generated { coarse, decoded })
}

/// Reads a conditioning video from PPM frames with the configured embedder.
pub fn load_video(cfg: &PipelineConfig, path: impl AsRef<Path>) -> Result<ConditioningVideo> {
    let frames = crate::image::read_ppm_sequence(path)?;
    let embedder = cfg.data.embedder()?;
    let v = ConditioningVideo::from_frames(frames, &embedder)?;
    if v.len() != cfg.data.frames as usize {
        return Err(Error::InvalidArgument(format!("video has {} frames, config expects {}", v.len(), cfg.data.frames)));
    }
    Ok(v)
}


/// Occupancy threshold for voxel comparisons.
pub const OCCUPIED: f32 = 0.5;

/// The voxels whose channel 0 is at least `tau`.
pub fn occupied(x: &SparseSpacetimeTensor, tau: f32) -> Result<SparseSpacetimeTensor> {
    let entries = x.entries().filter(|(_, f)| f[0] >= tau).map(|(c, f)| (c, f.to_vec())).collect();
    build_sparse(entries, x.resolution(), x.frames(), x.channels())
}

/// IoU of the occupied sets, RGB PSNR over voxels occupied in both, and the
/// prediction's voxel flicker. Both tensors carry `[occupancy, r, g, b]`.
pub fn compare_voxels(pred: &SparseSpacetimeTensor, gt: &SparseSpacetimeTensor, label: &str) -> Result<MetricReport> {
    for x in [pred, gt] {
        if x.channels() != 4 {
            return Err(Error::WidthMismatch { got: x.channels(), want: 4 });
        }
    }
    let (p, g) = (occupied(pred, OCCUPIED)?, occupied(gt, OCCUPIED)?);
    let mut r = MetricReport::new(label);
    r.iou = Some(structure_iou(p.structure(), g.structure())?);
    let shared = shared_coords(p.structure(), g.structure());
    if !shared.is_empty() {
        let rgb = |x: &SparseSpacetimeTensor| -> Vec<f32> { shared.iter().flat_map(|c| x.get(*c).expect("shared")[1..].to_vec()).collect() };
        r = r.with_psnr(psnr(&rgb(&p), &rgb(&g), 1.0)?);
    }
    if p.frames() >= 2 {
        r.flicker = Some(voxel_flicker(&p, 1, 3)?);
    }
    r.avg_length = Some(p.len() as f64);
    Ok(r)
}

/// Mean absolute RGB error over `x`'s voxels against `truth` at the same
/// coordinates.
pub fn rgb_l1(x: &SparseSpacetimeTensor, truth: &SparseSpacetimeTensor) -> Result<f64> {
    if x.structure().coords() != truth.structure().coords() {
        return Err(Error::shape("rgb_l1 needs identical coordinates"));
    }
    let rgb = |t: &SparseSpacetimeTensor| -> Vec<f32> { t.features().chunks(t.channels()).flat_map(|f| f[1..4].to_vec()).collect() };
    let (a, b) = (rgb(x), rgb(truth));
    if a.is_empty() {
        return Ok(0.0);
    }
    Ok(a.iter().zip(&b).map(|(p, q)| (*p as f64 - *q as f64).abs()).sum::<f64>() / a.len() as f64)
}

/// All `z` slices of frame `t` tiled left to right, top to bottom, `cols`
/// per row. Channel 0 scales the colour; single-channel tensors are gray.
pub fn slice_grid(x: &SparseSpacetimeTensor, t: usize, cols: usize) -> Result<Image> {
    if t >= x.frames() as usize {
        return Err(Error::FrameOutOfRange { t, frames: x.frames() as usize });
    }
    let n = x.resolution() as usize;
    let cols = cols.clamp(1, n);
    let rows = n.div_ceil(cols);
    let mut img = Image::new(cols * n, rows * n, [0.0; 3]);
    for i in x.structure().frame_range(t) {
        let [cx, cy, cz] = x.coords()[i].xyz().map(usize::from);
        let f = x.feature(i);
        let a = f[0].clamp(0.0, 1.0);
        let rgb = if f.len() >= 4 { [f[1] * a, f[2] * a, f[3] * a] } else { [a; 3] };
        let (ox, oy) = ((cz % cols) * n, (cz / cols) * n);
        img.set_pixel(ox + cx, oy + (n - 1 - cy), rgb.map(|v| v.clamp(0.0, 1.0)));
    }
    Ok(img)
}
