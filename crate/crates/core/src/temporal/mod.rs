//! Temporal attention over shifted frame windows with hybrid positional
//! encoding: absolute sinusoidal 3D positions plus rotary frame positions.

mod layer;
mod pe;
mod tokens;
mod window;

pub use layer::{temporal_attention, temporal_layer_forward, TemporalLayerParams, ROPE_BASE};
pub use pe::{absolute_pe_3d, absolute_pe_table, rope_1d, PE_BASE};
pub use tokens::{TokenBatch, TokenLayout};
pub use window::{partition_windows, TemporalWindowConfig};
