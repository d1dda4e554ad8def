//! Bone probabilities, root selection and skeleton assembly.

mod mst;
mod nets;
mod skeleton;
mod train;

pub use mst::{argmax, extract_skeleton, joint_pairs, BoneProbMatrix, PROB_CLAMP};
pub use nets::{ConnFeatures, ConnForward, ConnNetConfig, ConnNets};
pub use skeleton::{Skeleton, SkeletonError};
pub use train::{evaluate_sample, ohem_weights, train_connectivity, ConnSample, ConnTrainConfig, ConnTrainReport};
