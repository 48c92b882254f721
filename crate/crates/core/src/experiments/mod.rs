//! Simulation data, the end-to-end pipeline, cross-validation over `nu`,
//! path-consistency diagnostics and file formats.

mod config;
mod cv;
mod data;
mod design;
mod diagnostics;
pub mod io;
mod pipeline;
mod simulate;

pub use config::{log_grid, CvRefit, SimConfig};
pub use cv::{
    argmin, cross_validate_lambda, cross_validate_nu, feasible_folds, kfold_partition, refit_loss,
    CvResult,
};
pub use data::{beta_pattern, gen_dataset, gen_dataset_with, substream, toeplitz_covariance, Dataset, Purpose};
pub use design::{make_d, DKind};
pub use diagnostics::{diagnostics, h_matrix, DiagnosticsReport, SignCheck};
pub use pipeline::{run_split_pipeline, PipelineOptions, PipelineOutput};
pub use simulate::{
    m_ratio_dominated, mean_sd, run_simulation, write_outputs, FailureRecord, MethodSummary, NuRecord,
    ReplicateRecord, RunSummary, METHOD_KNOCKOFF, METHOD_SPLIT, METHOD_SPLIT_CV,
};
