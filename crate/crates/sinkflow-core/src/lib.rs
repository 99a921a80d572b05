//! Entropic optimal transport, Sinkhorn divergences and Sinkhorn potential
//! flows on finite spaces.
//!
//! Everything is generic over [`Scalar`] (`f32` or `f64`); the `*64` aliases
//! below fix the scalar to `f64`.

pub mod eot;
pub mod error;
pub mod flow;
pub mod geometry;
pub mod lcp;
pub mod measure;
pub mod potential;
pub mod scalar;
pub mod sjko;
pub mod space;

pub use eot::{
    grad_seps_positions, grad_seps_weights, ot_eps, ot_eps_self, schrodinger_residual, sinkhorn_divergence,
    sinkhorn_divergence_parts, sinkhorn_map, solve_schrodinger, solve_self_potential, DivergenceParts,
    DivergenceWarm, DualPotentials, OtValue, SinkhornConfig,
};
pub use error::{Error, Result};
pub use flow::{nonexpansiveness_check, resolvent_step, run_flow, FlowConfig, FlowTrajectory, Resolvent, StepOutcome};
pub use geometry::{
    embed, schrodinger_derivative, self_schrodinger_derivative, unembed, KernelSpace, PotentialOperator,
    PressureVector, SphereEmbedding,
};
pub use lcp::{complementarity_residual, solve_lcp, LcpConfig, LcpProblem, LcpSolution};
pub use measure::{DiscreteMeasure, Mode};
pub use potential::{DoubleWell, Potential, Quadratic, Tabulated};
pub use scalar::Scalar;
pub use sjko::{
    compare_sjko_to_flow, run_sjko, simplex_project, sjko_objective, sjko_step_eulerian, sjko_step_lagrangian,
    EulerianStep, LagrangianStep, Scheme, SjkoConfig, StepDiagnostics,
};
pub use space::{
    build_squared_euclidean_cost, gibbs_kernel, CostMatrix, DiscreteSpace, FactorConfig, GibbsKernel, KernelFactor,
    PointCloud,
};

pub type PointCloud64 = PointCloud<f64>;
pub type DiscreteSpace64 = DiscreteSpace<f64>;
pub type GibbsKernel64 = GibbsKernel<f64>;
pub type KernelSpace64 = KernelSpace<f64>;
pub type Measure64 = DiscreteMeasure<f64>;
pub type Potentials64 = DualPotentials<f64>;
pub type Embedding64 = SphereEmbedding<f64>;
pub type PotentialOperator64 = PotentialOperator<f64>;
pub type Trajectory64 = FlowTrajectory<f64>;
pub type SinkhornConfig64 = SinkhornConfig<f64>;
pub type SjkoConfig64 = SjkoConfig<f64>;
