//! Lateral-error bicycle model: physical parameters, the continuous
//! `(A, B, B2)` error dynamics, forward-Euler discretization and the plant
//! variants the simulator steps.
//!
//! State convention is `x = [e_y, ė_y, e_ψ, ė_ψ]` with steering `δ` as the
//! input and the desired yaw rate `ψ̇_des` as an exogenous input.

use nalgebra::{Matrix4, Vector4};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Below this speed the `1/Vx` terms of the model blow up.
pub const MIN_SPEED: f64 = 0.1;
/// Largest sampling time the forward-Euler discretization is trusted for.
pub const MAX_SAMPLE_TIME: f64 = 0.05;

/// Physical constants of the test vehicle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VehicleParams {
    /// Mass (kg).
    pub mass: f64,
    /// Yaw moment of inertia (kg·m²).
    pub yaw_inertia: f64,
    /// CG to front axle (m).
    pub lf: f64,
    /// CG to rear axle (m).
    pub lr: f64,
    /// Front cornering stiffness per tire (N/rad).
    pub caf: f64,
    /// Rear cornering stiffness per tire (N/rad).
    pub car: f64,
    /// Longitudinal speed (m/s), constant for a run.
    pub vx: f64,
    /// Control sampling time (s).
    pub ts: f64,
}

impl Default for VehicleParams {
    /// Compact passenger car at 50 km/h, sampled at 100 Hz.
    fn default() -> Self {
        Self {
            mass: 1274.0,
            yaw_inertia: 1523.0,
            lf: 1.016,
            lr: 1.562,
            caf: 118_800.0,
            car: 165_300.0,
            vx: kmh_to_ms(50.0),
            ts: 0.01,
        }
    }
}

pub fn kmh_to_ms(kmh: f64) -> f64 {
    kmh / 3.6
}

impl VehicleParams {
    pub fn wheelbase(&self) -> f64 {
        self.lf + self.lr
    }

    /// Understeer gradient `K_us` (s²/m²) such that the steady-state steering
    /// for curvature `κ` is `κ·L·(1 + K_us·Vx²)`.
    pub fn understeer_gradient(&self) -> f64 {
        let l = self.wheelbase();
        self.mass * (self.lr * self.car - self.lf * self.caf) / (2.0 * l * l * self.caf * self.car)
    }

    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("mass", self.mass),
            ("yaw_inertia", self.yaw_inertia),
            ("lf", self.lf),
            ("lr", self.lr),
            ("caf", self.caf),
            ("car", self.car),
            ("ts", self.ts),
        ];
        for (name, v) in fields {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::invalid(name, format!("must be finite and > 0, got {v}")));
            }
        }
        if !(self.vx.is_finite() && self.vx > MIN_SPEED) {
            return Err(Error::SingularSpeed { vx: self.vx });
        }
        if self.ts > MAX_SAMPLE_TIME {
            return Err(Error::invalid(
                "ts",
                format!("must be <= {MAX_SAMPLE_TIME} s, got {}", self.ts),
            ));
        }
        Ok(())
    }
}

/// Lane-relative tracking errors.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct ErrorState {
    pub e_y: f64,
    pub e_y_dot: f64,
    pub e_psi: f64,
    pub e_psi_dot: f64,
}

impl ErrorState {
    pub const ZERO: ErrorState = ErrorState {
        e_y: 0.0,
        e_y_dot: 0.0,
        e_psi: 0.0,
        e_psi_dot: 0.0,
    };

    pub fn new(e_y: f64, e_y_dot: f64, e_psi: f64, e_psi_dot: f64) -> Self {
        Self {
            e_y,
            e_y_dot,
            e_psi,
            e_psi_dot,
        }
    }

    pub fn to_vector(self) -> Vector4<f64> {
        Vector4::new(self.e_y, self.e_y_dot, self.e_psi, self.e_psi_dot)
    }

    pub fn from_vector(v: &Vector4<f64>) -> Self {
        Self::new(v[0], v[1], v[2], v[3])
    }

    pub fn is_finite(&self) -> bool {
        self.to_vector().iter().all(|v| v.is_finite())
    }

    pub fn norm(&self) -> f64 {
        self.to_vector().norm()
    }
}

/// `ẋ = A x + B δ + B2 ψ̇_des`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ContinuousModel {
    pub a: Matrix4<f64>,
    pub b: Vector4<f64>,
    pub b2: Vector4<f64>,
}

/// `x[k+1] = Φ x[k] + Γ δ[k] + Γ2 ψ̇_des[k]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DiscreteModel {
    pub phi: Matrix4<f64>,
    pub gamma: Vector4<f64>,
    pub gamma2: Vector4<f64>,
    pub ts: f64,
}

pub fn build_continuous(p: &VehicleParams) -> Result<ContinuousModel> {
    p.validate()?;
    let VehicleParams {
        mass: m,
        yaw_inertia: iz,
        lf,
        lr,
        caf,
        car,
        vx,
        ..
    } = *p;
    let moment = caf * lf - car * lr;
    let inertia_sum = caf * lf * lf + car * lr * lr;

    let a22 = -2.0 * (caf + car) / (m * vx);
    let a23 = 2.0 * (caf + car) / m;
    let a24 = -2.0 * moment / (m * vx);
    let a42 = -2.0 * moment / (iz * vx);
    let a43 = 2.0 * moment / iz;
    let a44 = -2.0 * inertia_sum / (iz * vx);

    #[rustfmt::skip]
    let a = Matrix4::new(
        0.0, 1.0, 0.0, 0.0,
        0.0, a22, a23, a24,
        0.0, 0.0, 0.0, 1.0,
        0.0, a42, a43, a44,
    );
    let b = Vector4::new(0.0, 2.0 * caf / m, 0.0, 2.0 * caf * lf / iz);
    let b2 = Vector4::new(
        0.0,
        -2.0 * moment / (m * vx) - vx,
        0.0,
        -2.0 * inertia_sum / (iz * vx),
    );
    Ok(ContinuousModel { a, b, b2 })
}

/// Forward Euler: `Φ = I + Ts·A`, `Γ = Ts·B`, `Γ2 = Ts·B2`.
pub fn discretize(cm: &ContinuousModel, ts: f64) -> DiscreteModel {
    DiscreteModel {
        phi: Matrix4::identity() + cm.a * ts,
        gamma: cm.b * ts,
        gamma2: cm.b2 * ts,
        ts,
    }
}

/// Convenience for `discretize(build_continuous(p), p.ts)`.
pub fn discrete_model(p: &VehicleParams) -> Result<DiscreteModel> {
    Ok(discretize(&build_continuous(p)?, p.ts))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PlantVariant {
    Nominal,
    Perturbed,
}

/// Selects the plant and, for the perturbed variant, how it departs from the
/// nominal linear model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PlantConfig {
    pub variant: PlantVariant,
    /// Multiplies both cornering stiffnesses.
    pub stiffness_scale: f64,
    /// Multiplies mass and yaw inertia.
    pub mass_scale: f64,
    /// Constant steering offset added at the actuator (rad).
    pub input_bias: f64,
    /// First-order actuator lag time constant (s); 0 disables the lag.
    pub input_lag_tau: f64,
    /// Tire slip-angle saturation (rad); infinity disables it.
    pub tire_sat_alpha: f64,
}

impl Default for PlantConfig {
    fn default() -> Self {
        Self::nominal()
    }
}

impl PlantConfig {
    pub fn nominal() -> Self {
        Self {
            variant: PlantVariant::Nominal,
            stiffness_scale: 1.0,
            mass_scale: 1.0,
            input_bias: 0.0,
            input_lag_tau: 0.0,
            tire_sat_alpha: f64::INFINITY,
        }
    }

    /// Default mismatch used by the case studies.
    pub fn perturbed() -> Self {
        Self {
            variant: PlantVariant::Perturbed,
            stiffness_scale: 0.85,
            mass_scale: 1.1,
            input_bias: 0.003,
            input_lag_tau: 0.04,
            tire_sat_alpha: 0.05,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("stiffness_scale", self.stiffness_scale),
            ("mass_scale", self.mass_scale),
        ] {
            if !(v > 0.5 && v <= 2.0) {
                return Err(Error::invalid(name, format!("must lie in (0.5, 2.0], got {v}")));
            }
        }
        if !(self.input_lag_tau >= 0.0 && self.input_lag_tau.is_finite()) {
            return Err(Error::invalid("input_lag_tau", "must be finite and >= 0"));
        }
        if !self.input_bias.is_finite() {
            return Err(Error::invalid("input_bias", "must be finite"));
        }
        if !(self.tire_sat_alpha > 0.0) {
            return Err(Error::invalid("tire_sat_alpha", "must be > 0 (inf disables)"));
        }
        Ok(())
    }
}

/// Mutable plant memory carried between steps.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct PlantInternalState {
    /// Steering angle currently delivered by the actuator (rad).
    pub actuator: f64,
}

/// A steppable plant: the nominal discrete model, or the perturbed
/// force-based model with actuator lag, bias, scaled parameters and tire
/// saturation.
#[derive(Debug, Clone)]
pub struct Plant {
    nominal: DiscreteModel,
    cfg: PlantConfig,
    actual: VehicleParams,
    lag_gain: f64,
}

impl Plant {
    pub fn new(params: &VehicleParams, cfg: PlantConfig) -> Result<Self> {
        cfg.validate()?;
        let nominal = discrete_model(params)?;
        let mut actual = *params;
        if cfg.variant == PlantVariant::Perturbed {
            actual.caf *= cfg.stiffness_scale;
            actual.car *= cfg.stiffness_scale;
            actual.mass *= cfg.mass_scale;
            actual.yaw_inertia *= cfg.mass_scale;
        }
        let lag_gain = if cfg.input_lag_tau > 0.0 {
            1.0 - (-params.ts / cfg.input_lag_tau).exp()
        } else {
            1.0
        };
        Ok(Self {
            nominal,
            cfg,
            actual,
            lag_gain,
        })
    }

    pub fn config(&self) -> &PlantConfig {
        &self.cfg
    }

    pub fn nominal_model(&self) -> &DiscreteModel {
        &self.nominal
    }

    /// Parameters the plant actually evolves with (scaled for the perturbed
    /// variant).
    pub fn actual_params(&self) -> &VehicleParams {
        &self.actual
    }

    pub fn step(
        &self,
        x: &ErrorState,
        delta_f: f64,
        psi_dot_des: f64,
        internal: PlantInternalState,
    ) -> Result<(ErrorState, PlantInternalState)> {
        let (next, internal) = match self.cfg.variant {
            PlantVariant::Nominal => {
                let v = nominal_step(&self.nominal, x, delta_f, psi_dot_des);
                (v, PlantInternalState { actuator: delta_f })
            }
            PlantVariant::Perturbed => {
                let command = delta_f + self.cfg.input_bias;
                let actuator = internal.actuator + self.lag_gain * (command - internal.actuator);
                let v = self.perturbed_step(x, actuator, psi_dot_des);
                (v, PlantInternalState { actuator })
            }
        };
        if !next.is_finite() {
            return Err(Error::NonFiniteState { step: 0 });
        }
        Ok((next, internal))
    }

    /// One forward-Euler step of the tire-force form of the error dynamics.
    /// With unsaturated tires this is exactly `Φ'x + Γ'δ + Γ2'ψ̇_des` for the
    /// scaled parameters.
    fn perturbed_step(&self, x: &ErrorState, steer: f64, psi_dot_des: f64) -> ErrorState {
        let p = &self.actual;
        let vx = p.vx;
        let lateral_velocity = x.e_y_dot - vx * x.e_psi;
        let yaw_rate = x.e_psi_dot + psi_dot_des;
        let sat = self.cfg.tire_sat_alpha;
        let alpha_f = (steer - (lateral_velocity + p.lf * yaw_rate) / vx).clamp(-sat, sat);
        let alpha_r = (-(lateral_velocity - p.lr * yaw_rate) / vx).clamp(-sat, sat);
        let force_f = 2.0 * p.caf * alpha_f;
        let force_r = 2.0 * p.car * alpha_r;
        let e_y_ddot = (force_f + force_r) / p.mass - vx * psi_dot_des;
        let e_psi_ddot = (p.lf * force_f - p.lr * force_r) / p.yaw_inertia;
        let ts = p.ts;
        ErrorState::new(
            x.e_y + ts * x.e_y_dot,
            x.e_y_dot + ts * e_y_ddot,
            x.e_psi + ts * x.e_psi_dot,
            x.e_psi_dot + ts * e_psi_ddot,
        )
    }
}

/// `Φx + Γδ + Γ2ψ̇_des`.
pub fn nominal_step(m: &DiscreteModel, x: &ErrorState, delta: f64, psi_dot_des: f64) -> ErrorState {
    ErrorState::from_vector(&(m.phi * x.to_vector() + m.gamma * delta + m.gamma2 * psi_dot_des))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    #[test]
    fn reference_vehicle_elements() {
        let p = VehicleParams::default();
        let cm = build_continuous(&p).unwrap();
        // -2(118800+165300)/(1274*13.8889)
        assert_relative_eq!(cm.a[(1, 1)], -32.1117, epsilon = 1e-3);
        assert_relative_eq!(cm.b[1], 186.499, epsilon = 1e-2);
        let dm = discretize(&cm, 0.01);
        assert_relative_eq!(dm.phi[(1, 1)], 0.678883, epsilon = 1e-5);
    }

    #[test]
    fn symmetric_vehicle_decouples() {
        let p = VehicleParams {
            car: 118_800.0,
            lr: 1.016,
            ..VehicleParams::default()
        };
        let cm = build_continuous(&p).unwrap();
        assert_eq!(cm.a[(1, 3)], 0.0);
        assert_eq!(cm.a[(3, 1)], 0.0);
    }

    #[test]
    fn row_patterns() {
        let cm = build_continuous(&VehicleParams::default()).unwrap();
        assert_eq!(cm.a.row(0).iter().copied().collect::<Vec<_>>(), vec![0.0, 1.0, 0.0, 0.0]);
        assert_eq!(cm.a.row(2).iter().copied().collect::<Vec<_>>(), vec![0.0, 0.0, 0.0, 1.0]);
        assert_eq!((cm.b[0], cm.b[2], cm.b2[0], cm.b2[2]), (0.0, 0.0, 0.0, 0.0));
        let dm = discretize(&cm, 0.02);
        assert_eq!(dm.phi[(0, 1)], 0.02);
    }

    #[test]
    fn zero_step_discretization_is_identity() {
        let cm = build_continuous(&VehicleParams::default()).unwrap();
        let dm = discretize(&cm, 0.0);
        assert_eq!(dm.phi, Matrix4::identity());
        assert_eq!(dm.gamma, Vector4::zeros());
        assert_eq!(dm.gamma2, Vector4::zeros());
    }

    #[test]
    fn rejects_singular_speed() {
        let p = VehicleParams {
            vx: 0.05,
            ..VehicleParams::default()
        };
        assert!(matches!(build_continuous(&p), Err(Error::SingularSpeed { .. })));
    }

    #[test]
    fn rejects_bad_params() {
        let p = VehicleParams {
            mass: -1.0,
            ..VehicleParams::default()
        };
        assert!(p.validate().is_err());
        let p = VehicleParams {
            ts: 0.1,
            ..VehicleParams::default()
        };
        assert!(p.validate().is_err());
        let cfg = PlantConfig {
            stiffness_scale: 0.4,
            ..PlantConfig::perturbed()
        };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn nominal_equilibrium_and_input_response() {
        let p = VehicleParams::default();
        let plant = Plant::new(&p, PlantConfig::nominal()).unwrap();
        let (x, _) = plant
            .step(&ErrorState::ZERO, 0.0, 0.0, PlantInternalState::default())
            .unwrap();
        assert_eq!(x, ErrorState::ZERO);
        let (x, _) = plant
            .step(&ErrorState::ZERO, 0.02, 0.0, PlantInternalState::default())
            .unwrap();
        assert_eq!(x.to_vector(), plant.nominal_model().gamma * 0.02);
    }

    #[test]
    fn unperturbed_perturbed_plant_matches_nominal() {
        let p = VehicleParams::default();
        let cfg = PlantConfig {
            variant: PlantVariant::Perturbed,
            ..PlantConfig::nominal()
        };
        let perturbed = Plant::new(&p, cfg).unwrap();
        let nominal = Plant::new(&p, PlantConfig::nominal()).unwrap();
        let x = ErrorState::new(0.3, -0.1, 0.02, 0.05);
        let (a, _) = perturbed.step(&x, 0.04, 0.2, PlantInternalState::default()).unwrap();
        let (b, _) = nominal.step(&x, 0.04, 0.2, PlantInternalState::default()).unwrap();
        for (u, v) in a.to_vector().iter().zip(b.to_vector().iter()) {
            assert_relative_eq!(u, v, max_relative = 1e-12, epsilon = 1e-14);
        }
    }

    #[test]
    fn actuator_lag_delays_input() {
        let p = VehicleParams::default();
        let cfg = PlantConfig {
            input_lag_tau: 0.1,
            ..PlantConfig {
                variant: PlantVariant::Perturbed,
                ..PlantConfig::nominal()
            }
        };
        let plant = Plant::new(&p, cfg).unwrap();
        let mut internal = PlantInternalState::default();
        let mut x = ErrorState::ZERO;
        for _ in 0..10 {
            let (nx, ni) = plant.step(&x, 0.05, 0.0, internal).unwrap();
            x = nx;
            internal = ni;
        }
        // 10 steps = one time constant.
        assert_relative_eq!(internal.actuator, 0.05 * (1.0 - (-1.0f64).exp()), epsilon = 1e-12);
    }

    #[test]
    fn divergence_is_reported() {
        let plant = Plant::new(&VehicleParams::default(), PlantConfig::nominal()).unwrap();
        let x = ErrorState::new(f64::INFINITY, 0.0, 0.0, 0.0);
        assert!(matches!(
            plant.step(&x, 0.0, 0.0, PlantInternalState::default()),
            Err(Error::NonFiniteState { .. })
        ));
    }

    proptest! {
        #[test]
        fn nominal_step_is_affine(
            a in prop::array::uniform4(-1.0f64..1.0),
            b in prop::array::uniform4(-1.0f64..1.0),
            u1 in -0.2f64..0.2,
            u2 in -0.2f64..0.2,
        ) {
            let m = discrete_model(&VehicleParams::default()).unwrap();
            let x1 = ErrorState::new(a[0], a[1], a[2], a[3]);
            let x2 = ErrorState::new(b[0], b[1], b[2], b[3]);
            let sum = ErrorState::from_vector(&(x1.to_vector() + x2.to_vector()));
            let lhs = nominal_step(&m, &sum, u1 + u2, 0.0).to_vector();
            let rhs = nominal_step(&m, &x1, u1, 0.0).to_vector()
                + nominal_step(&m, &x2, u2, 0.0).to_vector()
                - nominal_step(&m, &ErrorState::ZERO, 0.0, 0.0).to_vector();
            prop_assert!((lhs - rhs).amax() <= 1e-12);
        }
    }
}
