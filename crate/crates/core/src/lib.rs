//! Bayesian predictive rules as executable objects.
//!
//! A predictive rule maps what has been observed to a distribution for the
//! next observation. This crate treats that map as the primary object:
//! rules can be simulated forward, conditioned on data, resampled far into
//! the future to draw from the posterior of their random limit, and
//! interrogated for the symmetries (exchangeability, conditional identity in
//! distribution, Markov exchangeability) that justify Bayesian inference
//! with them.

pub mod asymptotics;
pub mod diagnostics;
pub mod engine;
pub mod error;
pub mod exchangeable;
pub mod measure;
pub mod newton;
pub mod ogd;
pub mod point;
pub mod random;
pub mod resampling;
pub mod structured;

pub use asymptotics::{
    accumulate_predictives, credible_interval, gaussian_posterior, normal_quantile,
    validate_grid_against_base, whitening, CredibleInterval, GaussianApprox, UpdateAccumulator,
    EIGEN_FLOOR,
};
pub use diagnostics::{
    check_cid, check_eppf, check_exchangeable, check_markov_exchangeable, check_partial_cid,
    check_partial_exchangeable, DiagnosticReport, Witness, DIAG_TOL_EXACT, DIAG_TOL_LOG,
    MAX_EVALUATIONS,
};
pub use engine::{
    condition, extend_chain, initial_state, joint_log_prob, joint_prob, simulate_chain, step,
    ChainPath, IidRule, PredictiveRule, RuleState,
};
pub use error::{Error, Result};
pub use exchangeable::{
    eppf_crp, eppf_finite_dirichlet, eppf_pitman_yor, ibp_next, kernel_ds_predict, polya_predict,
    py_weights, species_predict, EppfSpec, IbpState, IbpStep, KernelPolyaRule, PartitionCounts,
    PolyaRule, PolyaState, SmoothingKernel, SpeciesRule, SpeciesState,
};
pub use measure::{
    convex_sum, mix, AtomicMixture, BaseMeasure, DiscreteDistribution, EvalGrid, Predictive,
    MASS_TOL,
};
pub use newton::{
    newton_predict, newton_update, newton_update_weighted, MixKernel, MixingGrid, NewtonRule,
};
pub use ogd::{
    logistic, ogd_credible, ogd_u_plugin, ogd_update, ogd_vn, CovariateLaw, OgdCredible, OgdLoss,
    OgdRule, OgdState, PxInput, UPlugin,
};
pub use point::{AtomTag, Point, SpaceKind, Variant};
pub use resampling::{
    data_digest, functional_posterior, run_replicates, sample_posterior, sample_prior,
    stability_check, PosteriorSample, ResamplingPlan, SampleMeta, StabilityReport,
    TerminalEstimator,
};
pub use random::RandomSource;
pub use structured::{
    franchise_next, graphon_sample, ihmm_next, ihmm_next_traced, markov_swap_check,
    markov_swap_scan, pcid_predict, reinforced_predict, successor_states, AdjacencyMatrix,
    CoupledWeightColumns, FranchiseState, Graphon, GraphonMode, IhmmState, IhmmTrace,
    IndependentColumns, MultiSequenceRule, PcidState, ReinforcedUrnRule, SuccessorTable,
    SwapScan, SwapViolation, TransitionCounts, UrnParams, SWAP_TOL,
};
