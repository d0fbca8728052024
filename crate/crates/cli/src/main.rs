use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use spacetime::config::Config;
use spacetime::error::{Error, Result};
use spacetime::eval::{ablate_aggregation, ablate_temporal_alignment, write_jsonl, AggregationAblationConfig, MetricReport, TemporalAblationConfig};
use spacetime::image::read_ppm_sequence;
use spacetime::pipeline::{
    compare_voxels, encode_latents, generate, load_latent, load_structure, load_vae, load_video, read_dataset, save_stage, slice_grid,
    write_dataset, DatasetItem, PipelineConfig, CONFIG_KEYS,
};
use spacetime::rng::SeedRng;
use spacetime::sst::{read_sst, write_sst};
use spacetime::training::{synthesize_dataset, TrainLog};

#[derive(Parser)]
#[command(name = "spacetime", version, about = "Toy sparse spacetime generation: data, training, sampling and evaluation")]
struct Cli {
    /// Overrides `seed` from the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// `key = value` config file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Worker threads. Everything currently runs on one.
    #[arg(long, global = true, default_value_t = 1)]
    threads: usize,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Synthesize toy animations into a dataset directory.
    GenData {
        #[arg(long)]
        out: PathBuf,
        /// Overrides `data.count`.
        #[arg(long)]
        count: Option<usize>,
    },
    /// Train the sparse VAE.
    TrainVae {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Per-step CSV log.
        #[arg(long)]
        log: Option<PathBuf>,
    },
    /// Train one of the flow models.
    TrainFlow {
        #[arg(long, value_enum)]
        stage: FlowStage,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// VAE checkpoint; required for `--stage latent`.
        #[arg(long)]
        vae: Option<PathBuf>,
        #[arg(long)]
        log: Option<PathBuf>,
    },
    /// Generate a spacetime tensor conditioned on a PPM video.
    Sample {
        #[arg(long)]
        video: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        vae: PathBuf,
        #[arg(long)]
        structure: PathBuf,
        #[arg(long)]
        latent: PathBuf,
    },
    /// Compare two `[occupancy, r, g, b]` tensors; prints one JSON line.
    Eval {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        gt: PathBuf,
        /// Also append the report to this JSONL file.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run an ablation; writes `report.jsonl` and one CSV log per arm.
    Ablate {
        #[arg(value_enum)]
        which: Ablation,
        #[arg(long)]
        out: PathBuf,
        /// Training steps per arm.
        #[arg(long)]
        steps: Option<u64>,
        /// Training animations.
        #[arg(long)]
        train: Option<usize>,
        /// Evaluation animations.
        #[arg(long)]
        heldout: Option<usize>,
        #[arg(long)]
        resolution: Option<u32>,
    },
    /// Dump occupancy slices of a .sst or the frames of a .ppm video as PPM images.
    ExportFrames {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Slices per row in the tiled occupancy image.
        #[arg(long, default_value_t = 8)]
        cols: usize,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum FlowStage {
    Structure,
    Latent,
}

#[derive(Clone, Copy, ValueEnum)]
enum Ablation {
    Temporal,
    Aggregation,
}

fn pipeline_config(cli: &Cli) -> Result<PipelineConfig> {
    let mut c = match &cli.config {
        Some(p) => Config::read(p)?,
        None => Config::default(),
    };
    c.check_known(CONFIG_KEYS)?;
    if let Some(s) = cli.seed {
        c.set("seed", s)?;
    }
    PipelineConfig::from_config(&c)
}

fn write_log(log: &TrainLog, path: Option<&Path>) -> Result<()> {
    match path {
        Some(p) => log.write_csv(p),
        None => Ok(()),
    }
}

fn summary(name: &str, log: &TrainLog) {
    let n = log.rows.len();
    if n > 0 {
        let k = n.min(10);
        eprintln!("{name}: {n} steps, loss {:.5} -> {:.5}", log.mean_loss(0..k), log.mean_loss(n - k..n));
    }
}

fn load_items(cfg: &PipelineConfig, dir: &Path) -> Result<Vec<DatasetItem>> {
    let items = read_dataset(dir, cfg)?;
    eprintln!("loaded {} animations from {}", items.len(), dir.display());
    Ok(items)
}

fn run(cli: &Cli) -> Result<()> {
    if cli.threads == 0 {
        return Err(Error::InvalidArgument("--threads must be at least 1".into()));
    }
    let cfg = pipeline_config(cli)?;
    match &cli.cmd {
        Cmd::GenData { out, count } => {
            let count = count.unwrap_or(cfg.count);
            let samples = synthesize_dataset(count, cfg.seed, &cfg.data)?;
            let items: Vec<DatasetItem> = samples.iter().map(DatasetItem::from).collect();
            write_dataset(out, &items)?;
            eprintln!("wrote {count} animations to {}", out.display());
        }
        Cmd::TrainVae { data, out, log } => {
            let items = load_items(&cfg, data)?;
            let (stage, l) = spacetime::pipeline::train_vae_stage(&cfg, &items, out.parent())?;
            summary("vae", &l);
            write_log(&l, log.as_deref())?;
            save_stage(&stage, out)?;
        }
        Cmd::TrainFlow { stage, data, out, vae, log } => {
            let items = load_items(&cfg, data)?;
            let l = match stage {
                FlowStage::Structure => {
                    let (s, l) = spacetime::pipeline::train_structure_stage(&cfg, &items, out.parent())?;
                    save_stage(&s, out)?;
                    l
                }
                FlowStage::Latent => {
                    let vae = vae.as_ref().ok_or_else(|| Error::InvalidArgument("--stage latent needs --vae".into()))?;
                    let vae = load_vae(&cfg, vae)?;
                    let latents = encode_latents(&vae, &items)?;
                    let (s, l) = spacetime::pipeline::train_latent_stage(&cfg, &latents, out.parent())?;
                    save_stage(&s, out)?;
                    l
                }
            };
            summary("flow", &l);
            write_log(&l, log.as_deref())?;
        }
        Cmd::Sample { video, out, vae, structure, latent } => {
            let video = load_video(&cfg, video)?;
            let (vae, structure, latent) = (load_vae(&cfg, vae)?, load_structure(&cfg, structure)?, load_latent(&cfg, latent)?);
            let mut rng = SeedRng::new(cfg.seed);
            let g = generate(&cfg, &video, &vae, &structure, &latent, &mut rng)?;
            write_sst(out, &g.decoded)?;
            eprintln!("wrote {} voxels to {}", g.decoded.len(), out.display());
        }
        Cmd::Eval { pred, gt, out } => {
            let r = compare_voxels(&read_sst(pred)?, &read_sst(gt)?, &pred.display().to_string())?;
            write_jsonl(std::slice::from_ref(&r), std::io::stdout().lock())?;
            if let Some(p) = out {
                let f = File::options().create(true).append(true).open(p)?;
                write_jsonl(&[r], f)?;
            }
        }
        Cmd::Ablate { which, out, steps, train, heldout, resolution } => {
            std::fs::create_dir_all(out)?;
            let (reports, logs): (Vec<MetricReport>, Vec<TrainLog>) = match which {
                Ablation::Temporal => {
                    let mut a = TemporalAblationConfig { seed: cfg.seed, ..Default::default() };
                    a.steps = steps.unwrap_or(a.steps);
                    a.train_count = train.unwrap_or(a.train_count);
                    a.heldout_count = heldout.unwrap_or(a.heldout_count);
                    a.resolution = resolution.unwrap_or(a.resolution);
                    let r = ablate_temporal_alignment(&a)?;
                    (vec![r.without, r.with, r.reference], r.logs.into())
                }
                Ablation::Aggregation => {
                    let mut a = AggregationAblationConfig { seed: cfg.seed, ..Default::default() };
                    a.steps = steps.unwrap_or(a.steps);
                    a.train_count = train.unwrap_or(a.train_count);
                    a.eval_count = heldout.unwrap_or(a.eval_count);
                    a.resolution = resolution.unwrap_or(a.resolution);
                    let r = ablate_aggregation(&a)?;
                    (vec![r.visible, r.mean], r.logs.into())
                }
            };
            for (r, l) in reports.iter().zip(&logs) {
                l.write_csv(out.join(format!("{}.csv", r.label)))?;
            }
            let mut f = BufWriter::new(File::create(out.join("report.jsonl"))?);
            write_jsonl(&reports, &mut f)?;
            f.flush()?;
            write_jsonl(&reports, std::io::stdout().lock())?;
        }
        Cmd::ExportFrames { input, out, cols } => {
            std::fs::create_dir_all(out)?;
            let ext = input.extension().and_then(|e| e.to_str()).unwrap_or("");
            let frames = match ext {
                "sst" => {
                    let x = read_sst(input)?;
                    (0..x.frames() as usize).map(|t| slice_grid(&x, t, *cols)).collect::<Result<Vec<_>>>()?
                }
                "ppm" => read_ppm_sequence(input)?,
                _ => return Err(Error::InvalidArgument(format!("{}: expected a .sst or .ppm file", input.display()))),
            };
            for (t, img) in frames.iter().enumerate() {
                img.write_ppm(out.join(format!("frame-{t:03}.ppm")))?;
            }
            eprintln!("wrote {} frames to {}", frames.len(), out.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_numeric() { 3 } else { 2 })
        }
    }
}
