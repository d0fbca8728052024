//! Sparse spacetime tensors: `(t, x, y, z)`-indexed voxel features, their
//! dense occupancy counterpart, toy ground-truth animations and the `.sst`
//! file format.

mod coord;
mod dense;
mod format;
mod structure;
mod tensor;
pub mod toy;

pub use coord::{VoxelCoord4D, MAX_FRAMES, MAX_RESOLUTION};
pub use dense::{densify, densify_structure, sparsify, DenseOccupancySequence, FeatureSource, DEFAULT_THRESHOLD};
pub use format::{decode_sst, encode_sst, read_sst, write_sst, SST_MAGIC, SST_VERSION};
pub use structure::Structure;
pub use tensor::{build_sparse, coords_iou, shared_coords, structure_iou, SparseFrame, SparseSpacetimeTensor};
pub use toy::{voxelize_toy_animation, Fill, ToyAnimationSpec};
