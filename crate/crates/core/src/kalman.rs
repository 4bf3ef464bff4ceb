//! One-step predictor Kalman filter on the inverse-share model, and
//! reconstruction of total densities and flows from its estimate.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::FilterError;
use crate::highway::DENSITY_FLOOR;
use crate::ltv::LtvSystem;
use crate::metanet::MeasurementFrame;

const SYMMETRY_TOL: f64 = 1e-12;

/// Tuning and initial conditions.
#[derive(Debug, Clone, PartialEq)]
pub struct KalmanConfig {
    pub q_cov: DMatrix<f64>,
    pub r_cov: f64,
    pub x0: DVector<f64>,
    pub p0: DMatrix<f64>,
}

impl KalmanConfig {
    pub fn new(
        q_cov: DMatrix<f64>,
        r_cov: f64,
        x0: DVector<f64>,
        p0: DMatrix<f64>,
    ) -> Result<Self, FilterError> {
        let n = x0.len();
        for (what, m) in [("Q", &q_cov), ("H", &p0)] {
            if m.nrows() != n || m.ncols() != n {
                return Err(FilterError::Dimension {
                    what,
                    expected: n,
                    got: m.nrows(),
                });
            }
            if !is_spd(m) {
                return Err(FilterError::NotPositiveDefinite { what });
            }
        }
        if !(r_cov > 0.0 && r_cov.is_finite()) {
            return Err(FilterError::MeasurementCovariance(r_cov));
        }
        if x0.iter().any(|x| !x.is_finite()) {
            return Err(FilterError::NonFinite);
        }
        Ok(Self {
            q_cov,
            r_cov,
            x0,
            p0,
        })
    }

    /// `Q = σ_q I`, `P(k0) = h I`, `x̂(k0) = μ 1`.
    pub fn scaled_identity(
        n: usize,
        q_scale: f64,
        r_cov: f64,
        mu: f64,
        p0_scale: f64,
    ) -> Result<Self, FilterError> {
        Self::new(
            DMatrix::identity(n, n) * q_scale,
            r_cov,
            DVector::from_element(n, mu),
            DMatrix::identity(n, n) * p0_scale,
        )
    }

    pub fn n_states(&self) -> usize {
        self.x0.len()
    }
}

fn is_spd(m: &DMatrix<f64>) -> bool {
    let asym = (m - m.transpose()).abs().max();
    asym <= SYMMETRY_TOL * m.abs().max().max(1.0) && m.clone().cholesky().is_some()
}

#[derive(Debug, Clone, PartialEq)]
pub struct FilterState {
    pub x_hat: DVector<f64>,
    pub p_cov: DMatrix<f64>,
    /// Gain used on the step that produced this state.
    pub k_gain: DVector<f64>,
}

impl FilterState {
    pub fn initial(config: &KalmanConfig) -> Self {
        let n = config.n_states();
        Self {
            x_hat: config.x0.clone(),
            p_cov: config.p0.clone(),
            k_gain: DVector::zeros(n),
        }
    }

    /// Smallest eigenvalue of the covariance.
    pub fn min_covariance_eigenvalue(&self) -> f64 {
        self.p_cov.clone().symmetric_eigenvalues().min()
    }
}

/// Result of one filter recursion.
#[derive(Debug, Clone, PartialEq)]
pub struct StepReport {
    pub next: FilterState,
    /// `z(k) - C x̂(k)`.
    pub innovation: f64,
    /// Gain `K(k)` computed from `P(k)`.
    pub gain: DVector<f64>,
}

/// `K = P Cᵀ (C P Cᵀ + R)⁻¹`.
pub fn kalman_gain(p_cov: &DMatrix<f64>, sys: &LtvSystem, r_cov: f64) -> DVector<f64> {
    let pct = p_cov * sys.c_vec.transpose();
    let s = (&sys.c_vec * &pct)[0] + r_cov;
    pct / s
}

/// Advances the estimate from step `k` to `k + 1` with the system and
/// output sample of step `k`:
///
/// ```text
/// x̂(k+1) = A x̂ + B u + A K (z - C x̂)
/// P(k+1) = A (I - K C) P Aᵀ + Q
/// ```
pub fn filter_step(
    fs: &FilterState,
    sys: &LtvSystem,
    z: f64,
    config: &KalmanConfig,
) -> Result<StepReport, FilterError> {
    let n = fs.x_hat.len();
    if sys.n_states() != n {
        return Err(FilterError::Dimension {
            what: "A",
            expected: n,
            got: sys.n_states(),
        });
    }
    let gain = kalman_gain(&fs.p_cov, sys, config.r_cov);
    let innovation = z - sys.output(&fs.x_hat);
    let x_hat = &sys.a_mat * (&fs.x_hat + &gain * innovation) + &sys.b_mat * &sys.u_vec;

    let i_kc = DMatrix::<f64>::identity(n, n) - &gain * &sys.c_vec;
    let p = &sys.a_mat * i_kc * &fs.p_cov * sys.a_mat.transpose() + &config.q_cov;
    let p_cov = (&p + p.transpose()) * 0.5;

    if x_hat.iter().chain(p_cov.iter()).any(|v| !v.is_finite()) || !innovation.is_finite() {
        return Err(FilterError::NonFinite);
    }
    Ok(StepReport {
        next: FilterState {
            x_hat,
            p_cov,
            k_gain: gain.clone(),
        },
        innovation,
        gain,
    })
}

/// Exit flow ratio `q_N / q^a_N`, or `None` when the connected exit flow is
/// at or below the floor.
pub fn output_measurement(frame: &MeasurementFrame) -> Option<f64> {
    let qa_n = *frame.q_a_seg.last()?;
    if qa_n.is_nan() || qa_n <= DENSITY_FLOOR {
        None
    } else {
        Some(frame.q_n_meas / qa_n)
    }
}

/// Output sampler that holds the last valid ratio when the connected exit
/// flow vanishes.
#[derive(Debug, Clone, Default)]
pub struct ExitRatioSensor {
    last: Option<f64>,
    pub holds: usize,
}

impl ExitRatioSensor {
    /// Returns the ratio for `frame`, the held value, or `fallback` if no
    /// valid sample has been seen yet.
    pub fn sample(&mut self, frame: &MeasurementFrame, fallback: f64) -> f64 {
        match output_measurement(frame) {
            Some(z) => {
                self.last = Some(z);
                z
            }
            None => {
                self.holds += 1;
                self.last.unwrap_or(fallback)
            }
        }
    }
}

/// Totals implied by an inverse-share estimate: `ρ̂ = ρ^a x̂`, `q̂ = q^a x̂`.
pub fn reconstruct_totals(x_hat: &DVector<f64>, frame: &MeasurementFrame) -> (Vec<f64>, Vec<f64>) {
    let rho = x_hat
        .iter()
        .zip(&frame.rho_a_seg)
        .map(|(x, r)| x * r)
        .collect();
    let q = x_hat
        .iter()
        .zip(&frame.q_a_seg)
        .map(|(x, q)| x * q)
        .collect();
    (rho, q)
}

/// Reporting view of the estimate: inverse shares below one are not
/// physical and are raised to one.
pub fn physical_inverse_share(x_hat: &DVector<f64>) -> Vec<f64> {
    x_hat.iter().map(|x| x.max(1.0)).collect()
}

/// Serializable summary of a filter configuration built from scaled identities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FilterTuning {
    /// `Q = q_scale · I`.
    pub q_scale: f64,
    pub r: f64,
    /// Initial estimate `μ` for every segment.
    pub mu: f64,
    /// `P(k0) = p0_scale · I`.
    pub p0_scale: f64,
    /// Start the filter at the true state instead of `μ`.
    pub exact_init: bool,
}

impl Default for FilterTuning {
    fn default() -> Self {
        Self {
            q_scale: 1.0,
            r: 100.0,
            mu: 10.0,
            p0_scale: 1.0,
            exact_init: false,
        }
    }
}
