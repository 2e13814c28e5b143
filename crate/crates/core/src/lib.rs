//! Multi-teacher knowledge distillation for end-to-end text image
//! translation.

pub mod autograd;
pub mod cli;
pub mod config;
pub mod corpus;
pub mod error;
pub mod evaluation;
pub mod gradcheck;
pub mod losses;
pub mod models;
pub mod training;

pub use error::{Error, Result};
