//! Lane-keeping workbench: a lateral-error bicycle model, an LQR baseline,
//! a classic disturbance observer, and a learned steering compensator
//! trained to imitate a surrogate driver, plus the stability certificate
//! and experiment harness around them.

// `!(x > 0.0)` is used on purpose: it rejects NaN along with the bound.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod dob;
pub mod driver;
pub mod error;
pub mod eval;
pub mod exec;
pub mod linalg;
pub mod lqr;
pub mod neurodob;
pub mod nn;
pub mod plot;
pub mod rng;
pub mod road;
pub mod sim;
pub mod stability;
pub mod vehicle;

pub use error::{Error, Result};
