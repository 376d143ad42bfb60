//! Preview steering law standing in for a human (or embedded) driver.
//!
//! `δ_raw = κ(s + Vx·t_p)·L·(1 + K_us·Vx²) − k_y·e_y − k_ψ·e_ψ`, passed through
//! a first-order lag. The feedforward is the steady-state steering angle of the
//! bicycle model on an arc of curvature κ, so on a long arc the driver holds
//! the lane with no feedback effort.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::road::RoadMap;
use crate::vehicle::{ErrorState, VehicleParams};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DriverParams {
    pub preview_time: f64,
    pub feedback_gain_ey: f64,
    pub feedback_gain_epsi: f64,
    pub smoothing_tau: f64,
}

impl DriverParams {
    /// Long look-ahead, moderate gains, softened steering.
    pub fn smooth() -> Self {
        Self {
            preview_time: 0.9,
            feedback_gain_ey: 0.8,
            feedback_gain_epsi: 1.2,
            smoothing_tau: 0.03,
        }
    }

    /// Short look-ahead, stiff feedback, almost no smoothing.
    pub fn aggressive() -> Self {
        Self {
            preview_time: 0.3,
            feedback_gain_ey: 1.5,
            feedback_gain_epsi: 2.0,
            smoothing_tau: 0.01,
        }
    }

    pub fn profile(name: &str) -> Option<Self> {
        match name {
            "smooth" => Some(Self::smooth()),
            "aggressive" => Some(Self::aggressive()),
            _ => None,
        }
    }

    pub const PROFILES: [&'static str; 2] = ["smooth", "aggressive"];

    pub fn validate(&self) -> Result<()> {
        if !(self.preview_time >= 0.0 && self.preview_time.is_finite()) {
            return Err(Error::invalid("preview_time", "must be finite and >= 0"));
        }
        if !(self.smoothing_tau >= 0.0 && self.smoothing_tau.is_finite()) {
            return Err(Error::invalid("smoothing_tau", "must be finite and >= 0"));
        }
        if !(self.feedback_gain_ey.is_finite() && self.feedback_gain_epsi.is_finite()) {
            return Err(Error::invalid("feedback_gain", "must be finite"));
        }
        Ok(())
    }
}

/// Output of the smoothing lag.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct DriverState {
    pub steer: f64,
}

/// Steady-state steering angle that holds an arc of curvature `kappa`.
pub fn steady_state_steer(vehicle: &VehicleParams, kappa: f64) -> f64 {
    let vx = vehicle.vx;
    kappa * vehicle.wheelbase() * (1.0 + vehicle.understeer_gradient() * vx * vx)
}

/// One driver step. The preview point is clamped to the end of the map.
pub fn driver_command(
    params: &DriverParams,
    x: &ErrorState,
    map: &RoadMap,
    s_now: f64,
    vx: f64,
    vehicle: &VehicleParams,
    state: DriverState,
) -> Result<(f64, DriverState)> {
    map.curvature_at(s_now)?;
    let preview_s = (s_now + vx * params.preview_time).min(map.total_length());
    let kappa = map.curvature_at(preview_s)?;
    let raw = steady_state_steer(vehicle, kappa) - params.feedback_gain_ey * x.e_y - params.feedback_gain_epsi * x.e_psi;
    let steer = if params.smoothing_tau > 0.0 {
        let a = 1.0 - (-vehicle.ts / params.smoothing_tau).exp();
        state.steer + a * (raw - state.steer)
    } else {
        raw
    };
    Ok((steer, DriverState { steer }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::road::{generate_map, Segment};

    #[test]
    fn straight_road_zero_error_zero_steer() {
        let map = generate_map("s", &[Segment::Straight { length: 200.0 }], 1.0).unwrap();
        let v = VehicleParams::default();
        let (d, _) = driver_command(&DriverParams::smooth(), &ErrorState::ZERO, &map, 10.0, v.vx, &v, DriverState::default()).unwrap();
        assert_eq!(d, 0.0);
    }

    #[test]
    fn settles_to_steady_state_on_arc() {
        let k = 0.02;
        let map = generate_map("a", &[Segment::Arc { length: 500.0, curvature: k }], 1.0).unwrap();
        let v = VehicleParams::default();
        let p = DriverParams::smooth();
        let mut st = DriverState::default();
        let mut d = 0.0;
        for _ in 0..2000 {
            (d, st) = driver_command(&p, &ErrorState::ZERO, &map, 100.0, v.vx, &v, st).unwrap();
        }
        // Independent closed form: δ = L/R + K_us·(m-based) lateral acceleration.
        let l = v.lf + v.lr;
        let kus = v.mass * (v.lr * v.car - v.lf * v.caf) / (2.0 * l * v.caf * v.car);
        let expected = l * k + kus * v.vx * v.vx * k;
        assert!((d - expected).abs() < 1e-12, "{d} vs {expected}");
    }

    #[test]
    fn out_of_range_station() {
        let map = generate_map("s", &[Segment::Straight { length: 10.0 }], 1.0).unwrap();
        let v = VehicleParams::default();
        assert!(driver_command(&DriverParams::smooth(), &ErrorState::ZERO, &map, 11.0, v.vx, &v, DriverState::default()).is_err());
    }
}
