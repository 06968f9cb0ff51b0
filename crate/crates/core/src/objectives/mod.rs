//! Training losses, triplet sampling, Adam and the training loop.

mod adam;
mod checkpoint;
mod losses;
mod train;
mod triplets;

#[cfg(test)]
mod tests;

pub use adam::{adam_step, AdamState, BETA1, BETA2, EPSILON};
pub use checkpoint::Checkpoint;
pub(crate) use losses::{lap_against, pair_lengths, rig_against};
pub use losses::{
    loss_lap, loss_lap_grad, loss_lat, loss_lat_grad, loss_rec, loss_rec_grad, loss_reg, loss_reg_grad, loss_rig,
    loss_rig_grad, LapLoss, LapReference,
};
pub use train::{
    accumulate_triplet_gradient, combined_loss, train, train_from, triplet_outputs, EpochLog, LossBreakdown,
    LossWeights, ReferenceCache, TrainConfig, TrainData, TrainOutcome, TrainState, TripletOutputs,
};
pub use triplets::{
    resample_tick, sample_triplets, sample_with_index, summarize, CorpusIndex, SamplingReport, SupervisionMode,
    Triplet, RESAMPLE_PERIOD,
};
