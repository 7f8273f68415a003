//! Minimal dense-network toolkit used by the actor and critics.

mod adam;
mod mlp;
mod real;

pub use adam::{Adam, AdamConfig};
pub use mlp::{Activation, Dense, Gradients, Mlp, Tape};
pub use real::Real;

#[derive(Debug, thiserror::Error)]
pub enum NnError {
    #[error("shape error: {0}")]
    Shape(String),
    #[error("backward called without a recorded forward pass")]
    NoForwardCache,
}
