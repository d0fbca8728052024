//! Factorized 4D compression: stride-2 sparse convolution in space, kernel-3
//! convolution and frame-pair packing in time, a DiT core, and the mirrored
//! decompression path with additive skips.

mod blocks;
mod dit;
mod maps;
mod net;

pub use blocks::{
    spatial_downsample, spatial_upsample, temporal_conv1d, temporal_pack, temporal_unpack, PackProjection, SparseConv3DBlock,
    SparseUpsampleBlock, TemporalConv1DBlock, UnpackProjection,
};
pub use dit::{BlockInputs, CondTokens, DitBlock, DitConfig};
pub use maps::{child_offset, DownsampleMap, PackFlag, PackState, TemporalNeighbors};
pub use net::{compnet_forward, CompNet, CompNetConfig, CompressionContext, CompressionPlan};
