//! Evaluation: Fréchet audio distance and the descriptor-control metrics.

mod control;
mod fad;
mod metrics;

pub use control::{
    control_eval_protocol, write_scatter_csv, ControlEvalConfig, ControlEvalOutput, ControlMode, ControlSummary,
    Controller, ReferenceData, ScaleNorm,
};
pub use fad::{
    embed_clips, fad_from_clips, fad_from_embeddings, fit_gaussian, frechet_distance, mel_stats_embedding, sqrtm_psd,
    EmbeddingMatrix, GaussianStats,
};
pub use metrics::{
    linear_fit_r2, mae_quantile, ordering_accuracy, quantile, quantiles, AuxSource, ControlEvalRecord, MaeReport,
    OrderingReport, RegressionReport, LEVELS,
};
