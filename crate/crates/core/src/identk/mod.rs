//! Identification of the mixture model with a discrete latent type `U*`.
//!
//! Latent states `S* = (U*, T*)` and reports `S = (U, T)` are enumerated
//! `s = 2u + t`, so `K = 2 K_u`.

mod assign;
mod eigen;
mod mixture;
pub mod partition;
pub mod tables;

pub use assign::max_assignment;
pub use mixture::{
    build_q_delta, build_qk, conditional_outcome_dist, fit_mixture, identify_alpha_beta_hetero, identify_mixture,
    identify_mixture_tables, label_by_dominance, state_label, AlphaBeta, MixtureDecomposition, MixtureDiagnostics,
    MixtureFit, OutcomeDistribution, PARTITION_COND_LIMIT, PARTITION_OFFSETS, QK,
};
pub use partition::{build_partition, quantile_partition, Partition};
pub use tables::{CellTable, JointTables};
