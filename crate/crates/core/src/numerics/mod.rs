//! Dense tensors, a reverse-mode tape, parameters, optimization and
//! checkpoints.

mod checkpoint;
mod dense;
mod gradcheck;
mod optim;
mod params;
mod real;
mod tape;

pub use checkpoint::{decode_ckpt, encode_ckpt, read_ckpt, write_ckpt, NamedTensors, CKPT_MAGIC, CKPT_VERSION};
pub use dense::DenseTensor;
pub use gradcheck::{f32_gradient_agreement, grad_check, grad_check_params, relative_error, GradCheckReport, ParamProbe, Probe};
pub use optim::{Adam, AdamConfig};
pub use params::{Graph, ParamBuilder, ParamGrads, ParamId, ParamStore};
pub use real::Real;
pub use tape::{AttnGroup, Gradients, Tape, Var};
