//! Rig files, run configuration, datasets and the end-to-end pipeline.

mod config;
mod dataset;
mod file;
mod pipeline;

pub use config::{ConfigError, RunConfig};
pub use dataset::{dataset_entries, load_dataset, Character};
pub use file::{RigError, RigFile, WEIGHT_SUM_TOL};
pub use pipeline::{to_rig_file, Models, Prepared, RigOptions, Stage, CONFIG_FILE, CONN_CKPT, JOINT_CKPT, SKIN_CKPT};

use crate::autodiff::AutodiffError;
use crate::joints::JointError;
use crate::mesh::MeshError;
use crate::metrics::MetricsError;
use crate::skinning::SkinError;

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error(transparent)]
    Mesh(#[from] MeshError),
    #[error(transparent)]
    Rig(#[from] RigError),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Joint(#[from] JointError),
    #[error(transparent)]
    Skin(#[from] SkinError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("only {0} joint(s) predicted; a rig needs at least two")]
    TooFewJoints(usize),
    #[error("{0}")]
    Invalid(String),
}

impl PipelineError {
    /// True for problems with the caller's input rather than internal failures.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            PipelineError::Mesh(_)
                | PipelineError::Rig(_)
                | PipelineError::Config(_)
                | PipelineError::Metrics(_)
                | PipelineError::Invalid(_)
                | PipelineError::Joint(JointError::BandwidthRange(_))
        )
    }
}
