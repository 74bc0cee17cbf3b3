//! Simulation study: the data-generating process, the two logistic-regression
//! comparators and the Monte Carlo harness.

pub mod comparators;
pub mod dgp;
pub mod monte_carlo;

pub use comparators::{comparator_glm, comparator_glm_naive, ComparatorFit};
pub use dgp::{
    invert_strain_model, sample_baseline, sample_case, simulate_dataset, DgpConfig,
    MissingnessForm, SimulatedCase, SimulatedData, StrainBaselineForm,
};
pub use monte_carlo::{
    replicate_seed, run_monte_carlo, EstimatorName, McConfig, McOutput, MetricsRow,
    ReplicateRecord,
};
