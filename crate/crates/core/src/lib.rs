//! GNN-based downlink beamforming for MU-MISO networks.
//!
//! The crate covers the whole pipeline: a reverse-mode autodiff tape,
//! synthetic Rayleigh channel datasets, graph representations, a
//! configurable message-passing/attention/residual model with
//! constraint-handling outputs, differentiable system utilities, classical
//! baselines (MRT, zero forcing, WMMSE, projected gradient), a training
//! loop, and a six-metric evaluation harness.

pub mod autodiff;
pub mod baselines;
pub mod channel;
pub mod complex;
pub mod error;
pub mod gnn;
pub mod graph;
pub mod linalg;
pub mod metrics;
pub mod objectives;
pub mod tensor;
pub mod trainer;

pub use autodiff::{grad_check, SegmentMode, Tape, ValueId};
pub use channel::{ChannelSample, Dataset, DatasetHeader};
pub use error::{CoreError, Result};
pub use gnn::{Checkpoint, FeatureDims, ModelConfig, ParamSet};
pub use graph::{GraphKind, PermutationMap, RadioGraph};
pub use linalg::CxMat;
pub use metrics::MetricsReport;
pub use objectives::{BeamMatrix, UtilityKind, UtilitySpec};
pub use tensor::Tensor;
pub use trainer::{TrainConfig, TrainLog};

/// Cap the global worker pool; call once at startup, before parallel work.
pub fn rayon_threads(jobs: usize) -> Result<()> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build_global()
        .map_err(|e| CoreError::Config(format!("thread pool: {e}")))
}
