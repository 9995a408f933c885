pub mod action;
pub mod agent;
pub mod error;
pub mod gateway;
pub mod metrics;
pub mod narrator;
pub mod reward;
pub mod rollout;
pub mod sim;

pub use action::{ActionSet, EgoAction, ACTION_COUNT};
pub use error::{Error, Result};
