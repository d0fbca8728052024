//! Training data synthesis, visibility-aware feature aggregation, the
//! progressive frame-length schedule, conditioning masks and the train loops.

mod augment;
mod data;
mod loops;
mod visibility;

pub use augment::{apply_masks, schedule_frames, MaskAugmentConfig, ProgressiveSchedule};
pub use data::{coarse_occupancy, occupancy_fraction, synthesize_dataset, voxel_color, voxel_targets, DataConfig, ToySample, OCCUPANCY_SUBSAMPLES};
pub use loops::{
    load_checkpoint, occupancy_window, save_checkpoint, train_latent_flow, train_loop, train_structure_flow, train_unconditional_flow, train_vae,
    LatentExample, LogRow, StepOut, StructureExample, TrainConfig, TrainLog, VaeExample,
};
pub use visibility::{
    first_hits, mean_aggregate, render_feature_view, visible_aggregate, Aggregation, FeatureImage, OccupancyFrame, ToyCamera, ViewAxis,
};
