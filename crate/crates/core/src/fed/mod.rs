//! Low-rank federated aggregation: adaptive-rank SVD compression, core/auxiliary
//! split with core-only local training, pairwise additive masking, weighted
//! aggregation in weight space and reverse correction on the clients.

mod dual;
mod lowrank;
mod round;
mod secure;

pub use dual::{
    core_step, dense_loss_grad, encode_samples, local_update, recombine, reconstruct_split,
    split_dual, DualSplit, EncodedSample,
};
pub use lowrank::{
    codec_matrices, decompose, reconstruct, LayerFactors, LayerShape, LowRankModel, ORTHO_TOL,
};
pub use round::{
    accuracy, dense_fedavg, fed_round, warm_start, FedClient, FedCloud, FedConfig, RoundMetrics,
};
pub use secure::{
    aggregate, aggregate_matrices, mask_update, pair_mask, reverse_correct, secure_sum,
    MaskedUpdate, SeedBook, MASK_CANCEL_TOL,
};
