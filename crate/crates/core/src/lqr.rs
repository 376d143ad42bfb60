//! Baseline LQR: discrete algebraic Riccati equation by fixed-point iteration
//! and the `δ_LQR = -K x` steering law.

use nalgebra::{DMatrix, Matrix4, RowVector4};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, symmetrize};
use crate::vehicle::{DiscreteModel, ErrorState};

pub const DEFAULT_TOL: f64 = 1e-10;
pub const DEFAULT_MAX_ITER: usize = 1_000_000;

/// Quadratic cost weights `Σ xᵀQx + R δ²`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LqrWeights {
    pub q_diag: [f64; 4],
    pub r: f64,
}

impl Default for LqrWeights {
    /// Penalizes lateral and heading error only; heavy input weight leaves a
    /// visible lag on sharp curves.
    fn default() -> Self {
        Self {
            q_diag: [1.0, 0.0, 1.0, 0.0],
            r: 10.0,
        }
    }
}

impl LqrWeights {
    pub fn q(&self) -> Matrix4<f64> {
        Matrix4::from_diagonal(&self.q_diag.into())
    }

    pub fn validate(&self) -> Result<()> {
        if self.q_diag.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::invalid("q_diag", "entries must be finite and >= 0"));
        }
        if !(self.r.is_finite() && self.r > 0.0) {
            return Err(Error::invalid("r", "must be finite and > 0"));
        }
        Ok(())
    }
}

/// Solution of a single-input DARE.
#[derive(Debug, Clone, PartialEq)]
pub struct DareSolution {
    pub p: DMatrix<f64>,
    /// 1×n feedback gain.
    pub k: DMatrix<f64>,
    pub iterations: usize,
    pub residual: f64,
    pub spectral_radius_cl: f64,
}

/// One application of the Riccati map
/// `P ↦ ΦᵀPΦ − ΦᵀPΓ (R + ΓᵀPΓ)⁻¹ ΓᵀPΦ + Q`.
pub fn riccati_map(
    phi: &DMatrix<f64>,
    gamma: &DMatrix<f64>,
    q: &DMatrix<f64>,
    r: f64,
    p: &DMatrix<f64>,
) -> DMatrix<f64> {
    let pg = p * gamma;
    let denom = r + (gamma.transpose() * &pg)[(0, 0)];
    let gtpphi = pg.transpose() * phi;
    phi.transpose() * p * phi - gtpphi.transpose() * &gtpphi / denom + q
}

/// `K = (R + ΓᵀPΓ)⁻¹ ΓᵀPΦ`.
pub fn gain_from(phi: &DMatrix<f64>, gamma: &DMatrix<f64>, r: f64, p: &DMatrix<f64>) -> DMatrix<f64> {
    let pg = p * gamma;
    let denom = r + (gamma.transpose() * &pg)[(0, 0)];
    pg.transpose() * phi / denom
}

/// Iterates the Riccati map from `P = Q`, symmetrizing every step, until the
/// Frobenius change falls to `tol`.
pub fn solve_dare_general(
    phi: &DMatrix<f64>,
    gamma: &DMatrix<f64>,
    q: &DMatrix<f64>,
    r: f64,
    tol: f64,
    max_iter: usize,
) -> Result<DareSolution> {
    let n = phi.nrows();
    assert_eq!(phi.shape(), (n, n));
    assert_eq!(gamma.shape(), (n, 1));
    assert_eq!(q.shape(), (n, n));
    if !(r > 0.0) {
        return Err(Error::invalid("r", "must be > 0"));
    }

    let mut p = q.clone();
    symmetrize(&mut p);
    let mut residual = f64::INFINITY;
    let mut iterations = 0;
    while iterations < max_iter {
        let mut next = riccati_map(phi, gamma, q, r, &p);
        symmetrize(&mut next);
        residual = (&next - &p).norm();
        p = next;
        iterations += 1;
        if !residual.is_finite() {
            break;
        }
        if residual <= tol {
            break;
        }
    }
    if !(residual <= tol) {
        return Err(Error::NotConverged {
            iterations,
            residual,
        });
    }
    // Report the fixed-point residual of the returned P itself.
    let mut check = riccati_map(phi, gamma, q, r, &p);
    symmetrize(&mut check);
    let residual = (&check - &p).norm();

    let k = gain_from(phi, gamma, r, &p);
    let closed = phi - gamma * &k;
    let spectral_radius_cl = linalg::spectral_radius(&closed);
    if spectral_radius_cl >= 1.0 {
        return Err(Error::UnstableClosedLoop {
            spectral_radius: spectral_radius_cl,
        });
    }
    Ok(DareSolution {
        p,
        k,
        iterations,
        residual,
        spectral_radius_cl,
    })
}

/// Gain and Riccati solution for the 4-state lateral model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LqrDesign {
    pub k: RowVector4<f64>,
    pub p: Matrix4<f64>,
    pub spectral_radius_cl: f64,
}

impl LqrDesign {
    /// Wraps an explicit gain, e.g. for tests or imported designs.
    pub fn from_gain(model: &DiscreteModel, k: RowVector4<f64>) -> Self {
        let closed = model.phi - model.gamma * k;
        Self {
            k,
            p: Matrix4::zeros(),
            spectral_radius_cl: linalg::spectral_radius4(&closed),
        }
    }

    pub fn closed_loop(&self, model: &DiscreteModel) -> Matrix4<f64> {
        model.phi - model.gamma * self.k
    }

    /// `δ_LQR = -K x`.
    pub fn command(&self, x: &ErrorState) -> f64 {
        -(self.k * x.to_vector())[(0, 0)]
    }

    pub fn gain_csv(&self) -> String {
        format!(
            "k_e_y,k_e_y_dot,k_e_psi,k_e_psi_dot\n{},{},{},{}\n",
            self.k[0], self.k[1], self.k[2], self.k[3]
        )
    }
}

pub fn solve_dare(model: &DiscreteModel, weights: &LqrWeights, tol: f64, max_iter: usize) -> Result<LqrDesign> {
    weights.validate()?;
    let phi = linalg::to_dynamic4(&model.phi);
    let gamma = DMatrix::from_column_slice(4, 1, model.gamma.as_slice());
    let q = linalg::to_dynamic4(&weights.q());
    let sol = solve_dare_general(&phi, &gamma, &q, weights.r, tol, max_iter)?;
    Ok(LqrDesign {
        k: RowVector4::from_iterator(sol.k.iter().copied()),
        p: linalg::to_static4(&sol.p),
        spectral_radius_cl: sol.spectral_radius_cl,
    })
}

/// `solve_dare` with the default tolerance and iteration cap.
pub fn design(model: &DiscreteModel, weights: &LqrWeights) -> Result<LqrDesign> {
    solve_dare(model, weights, DEFAULT_TOL, DEFAULT_MAX_ITER)
}

/// `δ_LQR = -K x`.
pub fn lqr_command(design: &LqrDesign, x: &ErrorState) -> f64 {
    design.command(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::vehicle::{discrete_model, VehicleParams};

    fn scalar(v: f64) -> DMatrix<f64> {
        DMatrix::from_element(1, 1, v)
    }

    #[test]
    fn scalar_fixed_point() {
        let sol = solve_dare_general(&scalar(0.5), &scalar(1.0), &scalar(1.0), 1.0, 1e-14, 10_000).unwrap();
        let p = sol.p[(0, 0)];
        // p = 0.25p − 0.25p²/(1+p) + 1
        assert!((p - (0.25 * p - 0.25 * p * p / (1.0 + p) + 1.0)).abs() < 1e-12);
        assert!((sol.k[(0, 0)] - 0.5 * p / (1.0 + p)).abs() < 1e-12);
    }

    #[test]
    fn zero_state_cost_gives_zero_gain() {
        let phi = DMatrix::from_row_slice(2, 2, &[0.5, 0.1, 0.0, 0.7]);
        let gamma = DMatrix::from_column_slice(2, 1, &[0.0, 1.0]);
        let sol = solve_dare_general(&phi, &gamma, &DMatrix::zeros(2, 2), 1.0, 1e-12, 100).unwrap();
        assert_eq!(sol.p.amax(), 0.0);
        assert_eq!(sol.k.amax(), 0.0);
    }

    #[test]
    fn default_design_is_schur_and_symmetric() {
        let model = discrete_model(&VehicleParams::default()).unwrap();
        let d = design(&model, &LqrWeights::default()).unwrap();
        assert!(d.spectral_radius_cl < 1.0);
        assert!((d.p - d.p.transpose()).amax() <= 1e-12);
        let eig = d.p.symmetric_eigenvalues();
        assert!(eig.iter().all(|&v| v > 0.0));
    }

    #[test]
    fn unstabilizable_loop_is_rejected() {
        // Unstable mode the input cannot reach.
        let phi = DMatrix::from_row_slice(2, 2, &[1.2, 0.0, 0.0, 0.5]);
        let gamma = DMatrix::from_column_slice(2, 1, &[0.0, 1.0]);
        let q = DMatrix::identity(2, 2);
        let err = solve_dare_general(&phi, &gamma, &q, 1.0, 1e-10, 5_000).unwrap_err();
        assert!(matches!(err, Error::NotConverged { .. }));
    }

    #[test]
    fn command_is_linear() {
        let model = discrete_model(&VehicleParams::default()).unwrap();
        let d = design(&model, &LqrWeights::default()).unwrap();
        assert_eq!(d.command(&ErrorState::ZERO), 0.0);
        let x = ErrorState::new(0.2, -0.1, 0.03, 0.01);
        let neg = ErrorState::from_vector(&-x.to_vector());
        assert_eq!(d.command(&neg), -d.command(&x));
        let single = LqrDesign::from_gain(&model, RowVector4::new(1.0, 0.0, 0.0, 0.0));
        assert_eq!(single.command(&ErrorState::new(0.5, 0.0, 0.0, 0.0)), -0.5);
    }

    #[test]
    fn rejects_bad_weights() {
        let w = LqrWeights {
            q_diag: [1.0, -1.0, 0.0, 0.0],
            r: 1.0,
        };
        assert!(w.validate().is_err());
        let w = LqrWeights { r: 0.0, ..LqrWeights::default() };
        assert!(w.validate().is_err());
    }
}
