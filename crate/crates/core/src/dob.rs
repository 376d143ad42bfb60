//! Conventional model-based disturbance observer.
//!
//! The residual between the measured state and the nominal one-step
//! prediction is projected onto the input channel `Γ_n` (least squares), so
//! the estimate is an input-equivalent steering disturbance, then smoothed by
//! a first-order low-pass Q-filter.

use nalgebra::{Matrix4, Vector4};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::vehicle::{DiscreteModel, ErrorState};

pub const DEFAULT_CUTOFF_HZ: f64 = 2.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DobConfig {
    pub q_cutoff_hz: f64,
}

impl Default for DobConfig {
    fn default() -> Self {
        Self {
            q_cutoff_hz: DEFAULT_CUTOFF_HZ,
        }
    }
}

/// Nominal model the observer predicts with, plus its Q-filter.
#[derive(Debug, Clone, PartialEq)]
pub struct DobDesign {
    pub phi_n: Matrix4<f64>,
    pub gamma_n: Vector4<f64>,
    pub gamma2_n: Vector4<f64>,
    /// Output map; full-state measurement by default.
    pub c_n: Matrix4<f64>,
    pub q_cutoff_hz: f64,
    ts: f64,
    filter_gain: f64,
}

impl DobDesign {
    pub fn new(model: &DiscreteModel, q_cutoff_hz: f64) -> Result<Self> {
        let nyquist = 0.5 / model.ts;
        if !(q_cutoff_hz > 0.0 && q_cutoff_hz < nyquist) {
            return Err(Error::invalid(
                "q_cutoff_hz",
                format!("must lie in (0, {nyquist}) Hz, got {q_cutoff_hz}"),
            ));
        }
        let tau = time_constant(q_cutoff_hz);
        Ok(Self {
            phi_n: model.phi,
            gamma_n: model.gamma,
            gamma2_n: model.gamma2,
            c_n: Matrix4::identity(),
            q_cutoff_hz,
            ts: model.ts,
            filter_gain: 1.0 - (-model.ts / tau).exp(),
        })
    }

    /// Q-filter time constant `1 / (2π f_c)`.
    pub fn time_constant(&self) -> f64 {
        time_constant(self.q_cutoff_hz)
    }

    pub fn ts(&self) -> f64 {
        self.ts
    }

    /// Least-squares projection of a state residual onto `Γ_n`.
    pub fn project(&self, residual: &Vector4<f64>) -> f64 {
        let g = self.c_n * self.gamma_n;
        g.dot(residual) / g.norm_squared()
    }
}

pub fn time_constant(cutoff_hz: f64) -> f64 {
    1.0 / (2.0 * std::f64::consts::PI * cutoff_hz)
}

/// One-step history and current estimate.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct DobState {
    pub x_prev: Option<ErrorState>,
    pub u_prev: f64,
    pub psi_dot_des_prev: f64,
    pub d_hat: f64,
}

impl DobState {
    /// Stores the command actually sent to the plant this step; the next
    /// update predicts with it.
    pub fn record_applied(&mut self, u_applied: f64, psi_dot_des: f64) {
        self.u_prev = u_applied;
        self.psi_dot_des_prev = psi_dot_des;
    }
}

/// Updates the estimate from measurement `y`. The nominal prediction also
/// carries the known `Γ2 ψ̇_des` feedforward so road curvature is not
/// mistaken for a disturbance. The first call has no history and returns 0.
pub fn dob_update(design: &DobDesign, state: &mut DobState, y: &ErrorState) -> f64 {
    if let Some(prev) = state.x_prev {
        let predicted = design.phi_n * prev.to_vector()
            + design.gamma_n * state.u_prev
            + design.gamma2_n * state.psi_dot_des_prev;
        let residual = design.c_n * y.to_vector() - design.c_n * predicted;
        let raw = design.project(&residual);
        state.d_hat += design.filter_gain * (raw - state.d_hat);
    }
    state.x_prev = Some(*y);
    state.d_hat
}

/// `u_f = u − d̂`.
pub fn dob_compensate(u_nominal: f64, d_hat: f64) -> f64 {
    u_nominal - d_hat
}
