//! Moment-SDP relaxations for stored-energy minimization problems whose
//! energy density is convex in the Cauchy-Green strain.

pub mod energy;
pub mod envelope;
pub mod error;
pub mod extract;
pub mod linalg;
pub mod moments;
pub mod poly;
pub mod sdp;

pub use energy::{anisotropic_energy, svk_energy, EnergyDensity, StiffnessForm};
pub use envelope::{
    envelope_value, project_envelope, spectral_truncation_envelope, Envelope, EnvelopeMethod,
};
pub use error::{Error, Result};
pub use extract::{barycenter, quasiconvex_objective, wireframe, DeformationField};
pub use moments::{
    assemble_relaxation, MomentRelaxation, MonomialBasis, ProblemSpec, Radius, Scaling,
};
pub use poly::{BoxDomain, MultiIndex, Polynomial, VariableSpace};
pub use sdp::{ConicProgram, LmiBlock, Solution, SolveOptions, SolveStatus};
