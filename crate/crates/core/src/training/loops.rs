use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use super::augment::{apply_masks, schedule_frames, MaskAugmentConfig, ProgressiveSchedule};
use crate::compnet::CompressionPlan;
use crate::error::{Error, Result};
use crate::generative::{cfm_loss_graph, CfmDraw, ConditioningVideo, FlowNet, LatentCond, LatentFlow, StructureFlow, VaeModel, VaePlan};
use crate::numerics::{read_ckpt, write_ckpt, Adam, AdamConfig, Graph, ParamStore, Var};
use crate::rng::SeedRng;
use crate::sst::{DenseOccupancySequence, SparseSpacetimeTensor};

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub steps: u64,
    pub adam: AdamConfig,
    pub seed: u64,
    pub schedule: ProgressiveSchedule,
    /// Conditioning augmentation for the flow stages.
    pub mask: Option<MaskAugmentConfig>,
    pub checkpoint_every: Option<u64>,
    pub checkpoint_dir: Option<PathBuf>,
    /// File stem of checkpoints, `<name>-<step>.ckpt`.
    pub name: String,
}

impl TrainConfig {
    pub fn new(steps: u64, seed: u64) -> Result<Self> {
        Ok(TrainConfig {
            steps,
            adam: AdamConfig::default(),
            seed,
            schedule: ProgressiveSchedule::default_for(steps)?,
            mask: None,
            checkpoint_every: None,
            checkpoint_dir: None,
            name: "model".into(),
        })
    }

    pub fn checkpoint_path(&self, step: u64) -> Option<PathBuf> {
        self.checkpoint_dir.as_ref().map(|d| d.join(format!("{}-{step}.ckpt", self.name)))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LogRow {
    pub step: u64,
    pub loss: f64,
    pub parts: Vec<f64>,
    pub frames: usize,
    pub grad_norm: f64,
    pub wall_ms: f64,
}

/// Per-step training curve.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainLog {
    pub parts: Vec<&'static str>,
    pub rows: Vec<LogRow>,
}

impl TrainLog {
    pub fn losses(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.loss).collect()
    }

    /// Mean loss over rows `range`.
    pub fn mean_loss(&self, range: std::ops::Range<usize>) -> f64 {
        let r = &self.rows[range];
        r.iter().map(|r| r.loss).sum::<f64>() / r.len().max(1) as f64
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
        let mut header = vec!["step", "loss"];
        header.extend(&self.parts);
        header.extend(["frames", "grad_norm", "wall_ms"]);
        w.write_record(&header).map_err(csv_err)?;
        for r in &self.rows {
            let mut rec = vec![r.step.to_string(), r.loss.to_string()];
            rec.extend(r.parts.iter().map(|p| p.to_string()));
            rec.extend([r.frames.to_string(), r.grad_norm.to_string(), format!("{:.3}", r.wall_ms)]);
            w.write_record(&rec).map_err(csv_err)?;
        }
        w.flush()?;
        Ok(())
    }
}

fn csv_err(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::InvalidArgument(format!("csv: {other:?}")),
    }
}

/// Parameters plus optimizer state.
pub fn save_checkpoint(path: impl AsRef<Path>, store: &ParamStore<f32>, adam: Option<&Adam>) -> Result<()> {
    let mut named = store.to_named();
    if let Some(a) = adam {
        named.extend(a.state_tensors(store));
    }
    write_ckpt(path, &named)
}

/// Loads parameters, and optimizer state when `adam` is given.
pub fn load_checkpoint(path: impl AsRef<Path>, store: &mut ParamStore<f32>, adam: Option<&mut Adam>) -> Result<()> {
    let named = read_ckpt(path)?;
    store.load_named(&named)?;
    if let Some(a) = adam {
        a.load_state(store, &named)?;
    }
    Ok(())
}

/// Graph nodes produced by one training step.
pub struct StepOut {
    pub loss: Var,
    pub parts: Vec<Var>,
    pub frames: usize,
}

/// Runs Adam from `adam.steps()` up to `cfg.steps`. Step `s` draws all its
/// randomness from stream `s` of `cfg.seed`, so resuming from a checkpoint
/// replays the same losses.
pub fn train_loop(
    store: &mut ParamStore<f32>,
    adam: &mut Adam,
    cfg: &TrainConfig,
    parts: &[&'static str],
    mut step_fn: impl FnMut(&mut Graph<'_, f32>, u64, &mut SeedRng) -> Result<StepOut>,
) -> Result<TrainLog> {
    let mut log = TrainLog { parts: parts.to_vec(), rows: Vec::new() };
    if let Some(dir) = &cfg.checkpoint_dir {
        std::fs::create_dir_all(dir)?;
    }
    let started = Instant::now();
    while adam.steps() < cfg.steps {
        let step = adam.steps();
        let mut rng = SeedRng::derive(cfg.seed, step);
        let mut g = Graph::new(store);
        let out = step_fn(&mut g, step, &mut rng)?;
        let loss = g.value(out.loss).item() as f64;
        let part_vals: Vec<f64> = out.parts.iter().map(|&p| g.value(p).item() as f64).collect();
        if !loss.is_finite() {
            let detail = parts.iter().zip(&part_vals).map(|(n, v)| format!("{n}={v}")).collect::<Vec<_>>().join(", ");
            return Err(Error::NonFiniteLoss { step: step as usize, detail: format!("loss={loss}; {detail}") });
        }
        let grads = g.backward(out.loss)?;
        if !grads.all_finite() {
            return Err(Error::NonFiniteLoss { step: step as usize, detail: "non-finite gradient".into() });
        }
        let grad_norm = adam.step(store, &grads, 1.0);
        log.rows.push(LogRow {
            step,
            loss,
            parts: part_vals,
            frames: out.frames,
            grad_norm,
            wall_ms: started.elapsed().as_secs_f64() * 1e3,
        });
        let done = adam.steps();
        if let (Some(every), Some(path)) = (cfg.checkpoint_every, cfg.checkpoint_path(done)) {
            if every > 0 && (done % every == 0 || done == cfg.steps) {
                save_checkpoint(path, store, Some(adam))?;
            }
        }
        if step % 100 == 0 {
            log::debug!("{} step {step}: loss {loss:.5}", cfg.name);
        }
    }
    Ok(log)
}

/// Picks a sample and a frame window of the scheduled length.
fn pick(rng: &mut SeedRng, cfg: &TrainConfig, step: u64, counts: &[usize]) -> (usize, usize, usize) {
    let i = rng.below(counts.len());
    let f = schedule_frames(&cfg.schedule, step).min(counts[i]);
    let start = rng.below(counts[i] - f + 1);
    (i, start, f)
}

fn check_nonempty<T>(data: &[T]) -> Result<()> {
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    Ok(())
}

/// VAE input features and reconstruction targets on the same structure.
#[derive(Debug, Clone)]
pub struct VaeExample {
    pub input: SparseSpacetimeTensor,
    pub target: SparseSpacetimeTensor,
}

pub fn train_vae(model: &VaeModel, store: &mut ParamStore<f32>, adam: &mut Adam, data: &[VaeExample], cfg: &TrainConfig) -> Result<TrainLog> {
    check_nonempty(data)?;
    for ex in data {
        if ex.input.structure() != ex.target.structure() {
            return Err(Error::shape("VAE input and target structures differ".to_string()));
        }
    }
    let counts: Vec<usize> = data.iter().map(|e| e.input.frames() as usize).collect();
    let mut plans: HashMap<(usize, usize, usize), Arc<(VaePlan, SparseSpacetimeTensor, SparseSpacetimeTensor)>> = HashMap::new();
    train_loop(store, adam, cfg, &["occupancy", "color", "kl"], |g, step, rng| {
        let key = pick(rng, cfg, step, &counts);
        let entry = match plans.get(&key) {
            Some(e) => e.clone(),
            None => {
                let (i, start, f) = key;
                let input = data[i].input.frame_window(start, f)?;
                let target = data[i].target.frame_window(start, f)?;
                let e = Arc::new((model.plan(input.structure())?, input, target));
                plans.insert(key, e.clone());
                e
            }
        };
        let (plan, input, target) = &*entry;
        let noise = model.latent_noise(input.len(), rng);
        let x = dense(input)?;
        let y = dense(target)?;
        let l = model.loss(g, &x, &y, plan, Some(&noise))?;
        Ok(StepOut { loss: l.total, parts: vec![l.occupancy, l.color, l.kl], frames: key.2 })
    })
}

fn dense(x: &SparseSpacetimeTensor) -> Result<crate::numerics::DenseTensor<f32>> {
    crate::numerics::DenseTensor::new(vec![x.len(), x.channels()], x.features().to_vec())
}

fn conditioning(video: &ConditioningVideo, start: usize, len: usize, cfg: &TrainConfig, rng: &mut SeedRng) -> Result<ConditioningVideo> {
    let w = video.window(start, len)?;
    match &cfg.mask {
        Some(m) => apply_masks(&w, m, rng),
        None => Ok(w),
    }
}

/// Frames `start..start + len` of a dense sequence.
pub fn occupancy_window(occ: &DenseOccupancySequence, start: usize, len: usize) -> Result<DenseOccupancySequence> {
    let fl = occ.frame_len();
    if len == 0 || start + len > occ.frames() as usize {
        return Err(Error::FrameOutOfRange { t: start + len, frames: occ.frames() as usize });
    }
    DenseOccupancySequence::from_values(occ.resolution(), len as u32, occ.values()[start * fl..(start + len) * fl].to_vec())
}

#[derive(Debug, Clone)]
pub struct StructureExample {
    pub coarse: DenseOccupancySequence,
    pub video: ConditioningVideo,
}

pub fn train_structure_flow(
    model: &StructureFlow,
    store: &mut ParamStore<f32>,
    adam: &mut Adam,
    data: &[StructureExample],
    cfg: &TrainConfig,
) -> Result<TrainLog> {
    check_nonempty(data)?;
    let counts: Vec<usize> = data.iter().map(|e| e.coarse.frames() as usize).collect();
    train_loop(store, adam, cfg, &[], |g, step, rng| {
        let (i, start, f) = pick(rng, cfg, step, &counts);
        let x1 = model.patchify(&occupancy_window(&data[i].coarse, start, f)?)?;
        let cond = conditioning(&data[i].video, start, f, cfg, rng)?;
        let draw = CfmDraw::for_model::<StructureFlow>(rng, &x1);
        let loss = cfm_loss_graph(g, model, &x1, &cond.tokens, &draw)?;
        Ok(StepOut { loss, parts: vec![], frames: f })
    })
}

/// VAE latent means (unnormalized) and the conditioning video.
#[derive(Debug, Clone)]
pub struct LatentExample {
    pub latents: SparseSpacetimeTensor,
    pub video: ConditioningVideo,
}

pub fn train_latent_flow(model: &LatentFlow, store: &mut ParamStore<f32>, adam: &mut Adam, data: &[LatentExample], cfg: &TrainConfig) -> Result<TrainLog> {
    check_nonempty(data)?;
    let counts: Vec<usize> = data.iter().map(|e| e.latents.frames() as usize).collect();
    let mut cache: HashMap<(usize, usize, usize), Arc<(Arc<CompressionPlan>, SparseSpacetimeTensor)>> = HashMap::new();
    train_loop(store, adam, cfg, &[], |g, step, rng| {
        let key = pick(rng, cfg, step, &counts);
        let (i, start, f) = key;
        let entry = match cache.get(&key) {
            Some(e) => e.clone(),
            None => {
                let z = data[i].latents.frame_window(start, f)?;
                let e = Arc::new((Arc::new(model.net.plan(z.structure())?), z));
                cache.insert(key, e.clone());
                e
            }
        };
        let x1 = model.normalize(g.store(), &entry.1)?;
        let video = conditioning(&data[i].video, start, f, cfg, rng)?;
        let cond = LatentCond { plan: entry.0.clone(), tokens: video.tokens };
        let draw = CfmDraw::for_model::<LatentFlow>(rng, &x1);
        let loss = cfm_loss_graph(g, model, &x1, &cond, &draw)?;
        Ok(StepOut { loss, parts: vec![], frames: f })
    })
}

/// Trains any flow on a fixed set of row-stacked targets without conditioning.
pub fn train_unconditional_flow<M: FlowNet<Cond = ()>>(
    model: &M,
    store: &mut ParamStore<f32>,
    adam: &mut Adam,
    sample_batch: impl Fn(&mut SeedRng) -> crate::numerics::DenseTensor<f32>,
    cfg: &TrainConfig,
) -> Result<TrainLog> {
    train_loop(store, adam, cfg, &[], |g, _, rng| {
        let x1 = sample_batch(rng);
        let draw = CfmDraw::for_model::<M>(rng, &x1);
        let loss = cfm_loss_graph(g, model, &x1, &(), &draw)?;
        Ok(StepOut { loss, parts: vec![], frames: 0 })
    })
}
