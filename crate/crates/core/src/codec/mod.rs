//! Quantum-CNN semantic codec: patch encoder, classifier head, decoders, the
//! relative-entropy distortion metric and hybrid training.

mod checkpoint;
mod entropy;
mod loss;
mod model;
mod optim;
mod pipeline;
mod train;

pub use checkpoint::{Checkpoint, CheckpointMeta, CHECKPOINT_FORMAT};
pub use entropy::{normalize, quantum_entropy, relative_entropy, smooth, SMOOTHING_EPS};
pub use loss::{
    codec_loss, codec_loss_grad, pixel_distribution, reconstruction_distribution, sample_backward,
    DenseGrads, LossBreakdown, Sample,
};
pub use model::{
    patch_pixel_indices, CodecModel, ConvAnsatz, Dense, Image, SemanticFeatures, IMAGE_PIXELS,
    IMAGE_SIDE, INIT_SCALE, N_CLASSES, N_PATCHES, PATCH_QUBITS,
};
pub use optim::{OptimizerKind, OptimizerState};
pub use pipeline::{
    argmax, classify, decode, encode, encode_batch_with_jacobian, invert_patch, DecodeMode,
    Decoded, EncodedWithJacobian,
};
pub use train::{evaluate, train_epoch, train_step, Evaluation, TrainHyper};
