//! Belief-grounded multi-agent reinforcement learning.
//!
//! Policies carry an interpretable belief layer (which landmark is the
//! target, what the reward coefficients are) next to a residual code kept
//! statistically separate from it by a variational mutual-information bound.
//! Agents also predict each other's beliefs, and the accuracy of that
//! prediction is paid out as an intrinsic reward. The [`env`] module hosts
//! the physical-deception particle world the whole stack is trained on.

pub mod checkpoint;
pub mod club;
pub mod env;
pub mod error;
pub mod harness;
pub mod intrinsic;
pub mod nn;
pub mod plot;
pub mod policy;
pub mod trainer;
pub mod trajectory;

pub use error::{Error, Result};
