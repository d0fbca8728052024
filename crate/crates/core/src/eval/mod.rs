//! Metrics, JSON-lines reports and the ablation drivers.

pub mod ablation;
pub mod metrics;
pub mod report;

pub use ablation::{
    ablate_aggregation, ablate_temporal_alignment, temporal_ablation_example, vae_reconstruct, AggregationAblation, AggregationAblationConfig,
    AggregationScene, TemporalAblation, TemporalAblationConfig,
};
pub use metrics::{
    cap_psnr, energy_distance, flicker, image_flicker, mse, psnr, psnr_images, ssim, ssim_images, ssim_window, voxel_flicker, FLICKER_SCALE, PSNR_CAP,
    SSIM_K1, SSIM_K2, SSIM_SIGMA, SSIM_WINDOW,
};
pub use report::{read_jsonl, write_jsonl, MetricReport};
