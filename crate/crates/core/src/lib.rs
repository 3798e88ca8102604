//! Movement-intention recognition from ECoG trials and single-switch
//! scanning control of a simulated remote-control car.
//!
//! Stage 1 turns a trial into ERD/ERS + ERP features and classifies them
//! with a nearest-neighbor (or nearest-feature-line) model that can reject
//! unfamiliar inputs. Stage 2 treats every recognized movement as one
//! switch activation that advances the car's heading around a 16-point
//! compass rose.

pub mod classify;
pub mod control;
pub mod dataset;
pub mod error;
pub mod features;
pub mod preprocess;
pub mod validate;

pub use error::{BciError, Result};
