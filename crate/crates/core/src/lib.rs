//! Semi-implicit variational integrator for damped second-order evolution inclusions
//! `u'' + ∂Ψ(u') + ∂E_t(u) + B(t, u, u') ∋ f`, with step-by-step verification of
//! the discrete energy-dissipation inequality and the optimality identities.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod convex;
pub mod diagnostics;
pub mod error;
pub mod optim;
pub mod problems;
pub mod spaces;
pub mod stepper;

pub use convex::{ConjugateResult, DissipationMode, DissipationSpec, PowerPart, SmoothFunctional};
pub use diagnostics::{AprioriReport, EdiReport, Interpolant, Interpolants};
pub use error::{Error, Result};
pub use problems::{ProblemConfig, ProblemId};
pub use spaces::{
    DualTag, DualVec, EmbeddingOrder, GridSpec, Norm, NormFamily, PowerNorm, SpaceTag, SpdOperator,
    StateVec,
};
pub use stepper::{
    Energy, Forcing, GrowthConstants, Perturbation, SolverConfig, StepRecord, SystemSpec,
    Trajectory,
};
