//! Practical-stability certificate for `x[k+1] = Φ_cl x[k] + Γ w[k] + Γ2 ψ̇_des[k]`
//! with bounded compensation `|w| ≤ ε1` and bounded feedforward `|ψ̇_des| ≤ ε2`.
//!
//! With `V(x) = xᵀPx` and `Φ_clᵀPΦ_cl − P = −Q0`, the one-step increment is
//!
//! ```text
//! ΔV = −xᵀQ0x + 2xᵀΦ_clᵀPΞ + ΞᵀPΞ,      Ξ = Γw + Γ2ψ̇_des
//!    ≤ −λ_min(Q0)‖x‖² + 2‖x‖(α|w| + β|ψ̇|) + (γ|w| + δ|ψ̇|)²
//! ```
//!
//! with `α = ‖Φ_clᵀPΓ‖`, `β = ‖Φ_clᵀPΓ2‖`, `γ = ‖P^½Γ‖`, `δ = ‖P^½Γ2‖`.
//! Young's inequality `2ab ≤ μa² + b²/μ` at `μ = λ_min(Q0)/2` and
//! `(a + b)² ≤ 2a² + 2b²` give
//!
//! ```text
//! ΔV ≤ −½λ_min(Q0)‖x‖² + c1|w|² + c2|ψ̇|²
//! c1 = 4α²/λ_min(Q0) + 2γ²,   c2 = 4β²/λ_min(Q0) + 2δ²
//! ```
//!
//! Since `V ≤ λ_max(P)‖x‖²`, `V[k+1] ≤ (1 − ρ)V[k] + c` with
//! `ρ = λ_min(Q0)/(2λ_max(P))` and `c = c1ε1² + c2ε2²`, so
//! `limsup V ≤ c/ρ` and, through `λ_min(P)‖x‖² ≤ V`,
//!
//! ```text
//! η = sqrt( c / (½λ_min(Q0)) · λ_max(P)/λ_min(P) )
//! ```
//!
//! From `x[0] = 0` the bound holds at every step, not just in the limit.

use std::fmt::Write as _;

use nalgebra::{DMatrix, Matrix4, Vector4};

use crate::error::{Error, Result};
use crate::linalg::{self, symmetric_extremes, symmetrize};
use crate::lqr::LqrDesign;
use crate::sim::SimLog;
use crate::vehicle::DiscreteModel;

pub const LYAPUNOV_TOL: f64 = 1e-9;
const MAX_DOUBLINGS: usize = 200;

/// Solves `ΦᵀPΦ − P = −Q0` by Smith doubling:
/// `P ← P + AᵀPA`, `A ← A²`, starting from `P = Q0`, `A = Φ`.
pub fn solve_discrete_lyapunov(phi: &DMatrix<f64>, q0: &DMatrix<f64>, tol: f64) -> Result<DMatrix<f64>> {
    let rho = linalg::spectral_radius(phi);
    if rho >= 1.0 {
        return Err(Error::NotSchur { spectral_radius: rho });
    }
    let mut p = q0.clone();
    let mut a = phi.clone();
    let mut residual = f64::INFINITY;
    for i in 0..MAX_DOUBLINGS {
        let increment = a.transpose() * &p * &a;
        p += &increment;
        a = &a * &a;
        symmetrize(&mut p);
        residual = lyapunov_residual(phi, &p, q0);
        if increment.norm() <= f64::EPSILON * p.norm() && residual <= tol {
            return Ok(p);
        }
        if a.amax() == 0.0 && residual <= tol {
            return Ok(p);
        }
        if !residual.is_finite() {
            return Err(Error::NotConverged {
                iterations: i + 1,
                residual,
            });
        }
    }
    if residual <= tol {
        Ok(p)
    } else {
        Err(Error::NotConverged {
            iterations: MAX_DOUBLINGS,
            residual,
        })
    }
}

/// `‖ΦᵀPΦ − P + Q0‖_F`.
pub fn lyapunov_residual(phi: &DMatrix<f64>, p: &DMatrix<f64>, q0: &DMatrix<f64>) -> f64 {
    (phi.transpose() * p * phi - p + q0).norm()
}

/// All constants of the practical-stability argument for one design.
#[derive(Debug, Clone, PartialEq)]
pub struct StabilityCert {
    pub phi_cl: Matrix4<f64>,
    pub gamma: Vector4<f64>,
    pub gamma2: Vector4<f64>,
    pub p: Matrix4<f64>,
    pub q0: Matrix4<f64>,
    pub spectral_radius_cl: f64,
    pub lyapunov_residual: f64,
    pub lambda_min_q0: f64,
    pub lambda_min_p: f64,
    pub lambda_max_p: f64,
    pub alpha: f64,
    pub beta: f64,
    pub gamma_c: f64,
    pub delta_c2: f64,
    pub c1: f64,
    pub c2: f64,
    pub eps1: f64,
    pub eps2: f64,
    pub eta: f64,
}

impl StabilityCert {
    pub fn lyapunov_value(&self, x: &Vector4<f64>) -> f64 {
        (x.transpose() * self.p * x)[(0, 0)]
    }

    /// Ultimate bound for other perturbation levels with the same design.
    pub fn eta_for(&self, eps1: f64, eps2: f64) -> f64 {
        ultimate_bound(
            self.c1,
            self.c2,
            eps1,
            eps2,
            self.lambda_min_q0,
            self.lambda_min_p,
            self.lambda_max_p,
        )
    }

    /// Plain `key = value` text, every float with 17 significant digits.
    pub fn to_text(&self) -> String {
        let mut out = String::from("# practical-stability certificate\n");
        let scalars = [
            ("spectral_radius_cl", self.spectral_radius_cl),
            ("lyapunov_residual", self.lyapunov_residual),
            ("lambda_min_q0", self.lambda_min_q0),
            ("lambda_min_p", self.lambda_min_p),
            ("lambda_max_p", self.lambda_max_p),
            ("alpha", self.alpha),
            ("beta", self.beta),
            ("gamma", self.gamma_c),
            ("delta", self.delta_c2),
            ("c1", self.c1),
            ("c2", self.c2),
            ("eps1", self.eps1),
            ("eps2", self.eps2),
            ("eta", self.eta),
        ];
        for (k, v) in scalars {
            let _ = writeln!(out, "{k} = {v:.16e}");
        }
        let mut matrix = |name: &str, m: &Matrix4<f64>| {
            let rows: Vec<String> = m
                .row_iter()
                .map(|r| {
                    let cells: Vec<String> = r.iter().map(|v| format!("{v:.16e}")).collect();
                    format!("[{}]", cells.join(", "))
                })
                .collect();
            let _ = writeln!(out, "{name} = [{}]", rows.join(", "));
        };
        matrix("phi_cl", &self.phi_cl);
        matrix("p", &self.p);
        matrix("q0", &self.q0);
        let vec = |v: &Vector4<f64>| {
            v.iter().map(|x| format!("{x:.16e}")).collect::<Vec<_>>().join(", ")
        };
        let _ = writeln!(out, "gamma_vec = [{}]", vec(&self.gamma));
        let _ = writeln!(out, "gamma2_vec = [{}]", vec(&self.gamma2));
        out
    }
}

/// `η = sqrt((c1ε1² + c2ε2²) / (½λ_min(Q0)) · λ_max(P)/λ_min(P))`.
pub fn ultimate_bound(
    c1: f64,
    c2: f64,
    eps1: f64,
    eps2: f64,
    lambda_min_q0: f64,
    lambda_min_p: f64,
    lambda_max_p: f64,
) -> f64 {
    let c = c1 * eps1 * eps1 + c2 * eps2 * eps2;
    (c / (0.5 * lambda_min_q0) * lambda_max_p / lambda_min_p).sqrt()
}

pub fn certify(
    model: &DiscreteModel,
    design: &LqrDesign,
    eps1: f64,
    eps2: f64,
    q0: &Matrix4<f64>,
) -> Result<StabilityCert> {
    if !(eps1 >= 0.0 && eps2 >= 0.0) {
        return Err(Error::invalid("eps", "bounds must be >= 0"));
    }
    let phi_cl = design.closed_loop(model);
    let phi_dyn = linalg::to_dynamic4(&phi_cl);
    let q0_dyn = linalg::to_dynamic4(q0);
    let (lambda_min_q0, _) = symmetric_extremes(&q0_dyn);
    if !(lambda_min_q0 > 0.0) {
        return Err(Error::invalid("q0", "must be positive definite"));
    }
    let p_dyn = solve_discrete_lyapunov(&phi_dyn, &q0_dyn, LYAPUNOV_TOL)?;
    let residual = lyapunov_residual(&phi_dyn, &p_dyn, &q0_dyn);
    let (lambda_min_p, lambda_max_p) = symmetric_extremes(&p_dyn);
    let p = linalg::to_static4(&p_dyn);
    let p_sqrt = linalg::to_static4(&linalg::symmetric_sqrt(&p_dyn));

    let alpha = (phi_cl.transpose() * p * model.gamma).norm();
    let beta = (phi_cl.transpose() * p * model.gamma2).norm();
    let gamma_c = (p_sqrt * model.gamma).norm();
    let delta_c2 = (p_sqrt * model.gamma2).norm();
    let c1 = 4.0 * alpha * alpha / lambda_min_q0 + 2.0 * gamma_c * gamma_c;
    let c2 = 4.0 * beta * beta / lambda_min_q0 + 2.0 * delta_c2 * delta_c2;
    let eta = ultimate_bound(c1, c2, eps1, eps2, lambda_min_q0, lambda_min_p, lambda_max_p);

    Ok(StabilityCert {
        phi_cl,
        gamma: model.gamma,
        gamma2: model.gamma2,
        p,
        q0: *q0,
        spectral_radius_cl: linalg::spectral_radius4(&phi_cl),
        lyapunov_residual: residual,
        lambda_min_q0,
        lambda_min_p,
        lambda_max_p,
        alpha,
        beta,
        gamma_c,
        delta_c2,
        c1,
        c2,
        eps1,
        eps2,
        eta,
    })
}

/// Outcome of comparing a run against the certificate.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundReport {
    pub burn_in_steps: usize,
    pub max_norm_after_burn_in: f64,
    pub eta: f64,
    pub within_bound: bool,
}

/// Largest `‖x[k]‖` after `burn_in` seconds versus `η`.
pub fn empirical_bound_check(cert: &StabilityCert, log: &SimLog, burn_in: f64) -> BoundReport {
    let ts = log.ts;
    let burn_in_steps = (burn_in / ts).round().max(0.0) as usize;
    let max_norm = log
        .records
        .iter()
        .skip(burn_in_steps)
        .map(|r| r.state.norm())
        .fold(0.0, f64::max);
    BoundReport {
        burn_in_steps,
        max_norm_after_burn_in: max_norm,
        eta: cert.eta,
        within_bound: max_norm <= cert.eta,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecrementReport {
    pub steps_checked: usize,
    pub violations: usize,
    /// Smallest `rhs − lhs` seen; negative means a violation.
    pub worst_margin: f64,
}

/// Checks `V(x[k+1]) − V(x[k]) ≤ −½λ_min(Q0)‖x[k]‖² + c1ε1² + c2ε2²` on every
/// consecutive pair of logged states.
pub fn check_decrement(cert: &StabilityCert, log: &SimLog) -> DecrementReport {
    let c = cert.c1 * cert.eps1 * cert.eps1 + cert.c2 * cert.eps2 * cert.eps2;
    let mut violations = 0;
    let mut worst = f64::INFINITY;
    let mut steps = 0;
    for pair in log.records.windows(2) {
        let x0 = pair[0].state.to_vector();
        let x1 = pair[1].state.to_vector();
        let v0 = cert.lyapunov_value(&x0);
        let v1 = cert.lyapunov_value(&x1);
        let lhs = v1 - v0;
        let rhs = -0.5 * cert.lambda_min_q0 * x0.norm_squared() + c;
        // Rounding slack proportional to the magnitudes involved.
        let slack = 1e-12 * (1.0 + v0.abs() + v1.abs() + c);
        let margin = rhs - lhs;
        if margin < -slack {
            violations += 1;
        }
        worst = worst.min(margin);
        steps += 1;
    }
    DecrementReport {
        steps_checked: steps,
        violations,
        worst_margin: worst,
    }
}
