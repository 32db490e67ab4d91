//! Numerical toolkit for the information-theoretic limits of finite-alphabet
//! systems whose side/state information is generated by a cost-constrained
//! action sequence, under additional reconstruction requirements: the encoder
//! must reproduce the decoder's source reconstruction (common reconstruction),
//! or the channel decoder must recover the channel input (reversible input).
//!
//! The crate computes rate-distortion-cost functions and constrained channel
//! capacities by direct optimization over probability simplices, provides
//! closed-form evaluators for the two standard binary worked examples as
//! independent oracles, and validates achievability by Monte Carlo simulation
//! of the random-binning coding schemes at small block lengths.

pub mod info;
pub mod channel;
pub mod closed_form;
pub mod opt;
pub mod random;
pub mod sim;
pub mod source;

pub use info::{binary_entropy, entropy_bits, star, CondPmf, InfoError, JointDist, Pmf, Var};
pub use opt::{
    optimize, project_to_simplex, sweep, OptError, OptOpts, OptProblem, OptResult, Sense,
    SimplexShape,
};
