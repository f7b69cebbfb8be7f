//! Fairness-optimal local differential privacy for sensitive attributes.
//!
//! The crate designs LDP mechanisms that perturb a sensitive attribute `A`
//! so that the perturbed dataset is as close to label/group independence as
//! the privacy budget allows:
//!
//! * [`binary`]: closed-form optimal mechanism for binary attributes, plus a
//!   boundary-search oracle.
//! * [`kary`]: the min–max linear-fractional program for `k`-ary attributes,
//!   solved by bisection over linear feasibility, plus a grid oracle.
//! * [`mechanisms`]: RR, GRR, subset selection, generic matrix mechanisms,
//!   exact LDP verification and seeded perturbation.
//! * [`dist`]: distribution summaries and the data-unfairness metrics.
//! * [`classify`]: a logistic-regression baseline and classifier fairness gaps.
//! * [`pipeline`]: the design / perturb / evaluate / sweep / verify commands.

pub mod binary;
pub mod classify;
pub mod dataset;
pub mod dist;
pub mod error;
pub mod kary;
pub mod mechanisms;
pub mod pipeline;
pub mod rng;
pub mod synth;

pub use binary::{boundary_oracle, objective_ratio, opt_binary, opt_binary_lenient, BinaryCase, BinaryDesignResult};
pub use classify::{FairnessReport, LinearClassifier, TrainParams};
pub use dataset::{SensitiveColumn, TabularDataset};
pub use dist::{delta, delta_prime, equivalence_bounds, estimate_distribution, JointDistribution};
pub use error::{Error, Result};
pub use kary::{solve_opt_k, KaryDesignResult, LinearConstraintSystem, SolverConfig};
pub use mechanisms::{
    grr_matrix, induced_distribution, matrix_of_binary, privacy_level, rr_mechanism, ss_params,
    verify_ldp, BinaryMechanism, Mechanism, MechanismMatrix, SsParams, SubsetReport,
};
pub use pipeline::{cmd_design, cmd_evaluate, cmd_perturb, cmd_sweep, cmd_verify, MechanismKind, RunConfig};
