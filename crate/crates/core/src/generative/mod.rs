//! Temporally aligned VAE over sparse spacetime features and the two
//! rectified-flow stages: dense coarse structure, then latents on it.

mod flow;
mod latent;
mod structure;
mod vae;
mod video;

pub use flow::{cfm_loss, cfm_loss_graph, euler_sample, CfmDraw, FlowNet, MlpFlow, DEFAULT_EULER_STEPS};
pub use latent::{generate_latents, lift_structure, LatentCond, LatentFlow, LatentFlowConfig};
pub use structure::{generate_structure, StructureFlow, StructureFlowConfig};
pub use vae::{
    decoded_to_occupancy_color, kl_graph, vae_decode, vae_encode, VaeConfig, VaeLoss, VaeModel, VaePlan, VaeTrunk, DECODED_CHANNELS, LOGVAR_MAX,
    LOGVAR_MIN,
};
pub use video::{render_conditioning_video, render_front, ConditioningVideo, VideoEmbedder, DEFAULT_EMBED_DIM, DEFAULT_PATCH, DEFAULT_RENDER_SIZE};
