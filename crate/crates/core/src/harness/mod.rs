//! Experiments that train a network and its linear model side by side and
//! measure how far apart they drift, plus the kernel-level recipes.

mod coupled;
mod experiments;

pub use coupled::{
    coupled_run, coupled_run_observed, default_learning_rate, AgreementRecord, CoupledRun,
    CoupledRunConfig, LabelSpec, RunSetup,
};
pub use experiments::{
    cnn_linear_comparison, discrepancy_vs_dimension, jacobian_deviation_probe,
    norm_feature_ablation_experiment, residual_subspace_decomposition, scaled_width,
    spectral_decay_experiment, AblationConfig, AblationPoint, AblationReport, CnnComparison,
    DecayPoint, DimensionGap, DiscrepancySweep, ProbePoint, SpectralDecay, SubspaceEnergy,
};
