//! Particle-based Bayesian data fusion via cross-pollination.
//!
//! The toolkit fuses independent single-source posterior particle
//! ensembles into a joint posterior estimate by cross-epoch likelihood
//! weighting, pooling, and resampling. Batch fusion under three weighting
//! schemes lives in [`fusion`]; the sequential variant for stochastic
//! motion models lives in [`sequential`]; [`ensemble`] carries the shared
//! weighted-particle machinery; [`samplers`] builds initial estimates;
//! and [`models`] provides the built-in benchmark problems.

pub mod angles;
pub mod ensemble;
pub mod error;
pub mod fusion;
pub mod models;
pub mod rng;
pub mod samplers;
pub mod sequential;

pub use ensemble::{
    effective_sample_size, log_sum_exp, multinomial_resample_indices, normalize_log_weights,
    Moments, WeightedEnsemble,
};
pub use error::{Error, Result};
pub use fusion::{
    cross_epoch_log_weights, fuse, fuse_deterministic_mixture, fuse_norming_apart,
    fuse_norming_together, joint_log_density, pool_deterministic_mixture, pool_norming_apart,
    pool_norming_together, FusionInput, LikelihoodTerm, PooledEnsemble, WeightingScheme,
};
pub use rng::RngStream;
pub use samplers::{importance_resample_init, random_walk_metropolis, McmcResult, PriorSampler};
pub use sequential::{
    fresh_single_obs_ensemble, init_from_first_observation, run_sequential, sequential_step,
    MotionModel, SequentialConfig, StepDiagnostics, TrajectoryEnsemble,
};
