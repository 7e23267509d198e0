//! Evolutionary architecture search and its baselines.

pub mod evolve;
pub mod fitness;

pub use evolve::{
    baseline_random_sampling, baseline_random_search, evolve_round, init_search, make_child, run_search, Candidate,
    FitnessFn, LogRow, RandomSampling, SearchConfig, SearchState,
};
pub use fitness::{confusion, predict_ann, predict_snn, Domain, SupernetFitness};
