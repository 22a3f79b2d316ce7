//! Invariant imbedding networks.
//!
//! A continuous-depth network `dz/dt = f(t, z, theta)` on `[p, q]` is
//! realized for every depth `p` of a grid at once. Outputs `z(q; p, x)` and
//! loss gradients `Lambda(p, x)` are each propagated as initial value
//! problems in `p`, starting from the trivial network at `p = q`, so the
//! backward pass needs no forward pass.

pub mod adjoint;
pub mod domain;
pub mod dynamics;
pub mod error;
pub mod io;
pub mod jacobian;
pub mod propagate;
pub mod tasks;
pub mod train;
pub mod verify;

pub use domain::*;
pub use error::{Error, Result};
