//! Test-time adaptation through a learned loss, and the meta-training loop
//! around it.
//!
//! The inner step moves the adaptive segmentation parameters along the
//! gradient of the fusion module's learned loss over a short frame
//! sequence. The outer objective scores frame 0 with the adapted
//! parameters against ground truth and differentiates through the inner
//! step into both networks.

mod config;
mod inner;
mod optim;
mod train;

pub use config::{AdaptConfig, GroupFlags, Policy, Setup, Variant, VariantMask};
pub use inner::{inner_adapt, Adapted};
pub use optim::Adam;
pub use train::{
    best_epoch, choose_actions, evaluate, infer, infer_with_actions, load_state, meta_gradients, outer_step,
    save_state, train, EpochRecord, Inference, MetaGrads, PointResult, StepStats, TrainOutcome, TrainState, Trajectory,
    LOG_HEADER,
};
