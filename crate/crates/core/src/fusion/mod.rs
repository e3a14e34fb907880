//! Multimodal fusion on toy sensor grids: sparse amplitude attention, entangled
//! coordinate alignment between a 2D camera grid and a 3D lidar voxel grid,
//! phase-decay patching of cells seen by only one modality, and an exactly
//! reversible phase/interference fusion unitary.

mod align;
mod attend;
mod frame;
mod fuse;
mod patch;

pub use align::{entangle_align, AlignedPair};
pub use attend::self_attend;
pub use frame::{
    read_frames_jsonl, synthetic_scene, write_frames_jsonl, FusionGrid, Modality, ModalityFrame,
    Scene, MAX_FEATURES,
};
pub use fuse::{cross_fuse, fused_distribution, unfuse, FusionHandle};
pub use patch::{phase_patch, PatchedGrids};
