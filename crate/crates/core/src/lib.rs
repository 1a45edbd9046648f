//! Physics-informed neural-network surrogates of the lithium-ion
//! single-particle model, together with the finite-volume reference solver
//! used to score them.

pub mod eval;
pub mod fd;
pub mod loss;
pub mod nn;
pub mod spm;
pub mod train;
