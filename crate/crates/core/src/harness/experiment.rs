//! Simulator → measurements → LTV model → Kalman filter pipeline.

use std::time::Instant;

use nalgebra::DVector;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::scenario::{OfframpMode, Scenario};
use super::HarnessError;
use crate::highway::{BoundaryInputs, HighwayGeometry, TrafficState};
use crate::kalman::{
    filter_step, reconstruct_totals, ExitRatioSensor, FilterState, FilterTuning, KalmanConfig,
};
use crate::ltv::{
    anti_diagonal, anti_diagonal_observable, build_system_measured,
    build_system_unmeasured_offramps, observability_matrix, LtvSystem,
};
use crate::metanet::{MeasurementFrame, Simulator};

/// Ground-truth trajectory with the measurements taken along it. All three
/// vectors have `M + 1` entries, indexed by step.
#[derive(Debug, Clone, PartialEq)]
pub struct Truth {
    pub geom: HighwayGeometry,
    pub states: Vec<TrafficState>,
    /// Boundary flows applied at each step, off-ramp flows included.
    pub inputs: Vec<BoundaryInputs>,
    pub frames: Vec<MeasurementFrame>,
    pub sim_clamps: usize,
}

impl Truth {
    pub fn n_steps(&self) -> usize {
        self.states.len() - 1
    }

    pub fn inverse_penetration(&self, k: usize) -> Vec<f64> {
        self.states[k].inverse_penetration()
    }
}

/// Relaxes a uniform initial density without noise under the `t = 0`
/// boundary flows.
pub fn initial_state(sc: &Scenario, sim: &Simulator) -> Result<TrafficState, HarnessError> {
    let share = sc.demand.entry.penetration.eval(0.0)?.clamp(0.0, 1.0);
    let n = sc.geometry.n_segments;
    let mut state =
        TrafficState::on_fundamental_diagram(vec![sc.initial.density; n], share, &sim.params)?;
    let quiet = Simulator {
        noise: crate::metanet::NoiseSpec::zero(sc.seed),
        ..sim.clone()
    };
    let base = sc.boundary_at(0.0)?;
    for k in 0..sc.initial.warmup_steps {
        let mut inputs = base.clone();
        quiet.apply_exit_rates(&state, &mut inputs);
        state = quiet.step(&state, &inputs, k)?.next;
    }
    Ok(state)
}

/// Runs the ground truth for the scenario horizon.
pub fn generate_truth(sc: &Scenario) -> Result<Truth, HarnessError> {
    sc.validate()?;
    let sim = sc.simulator()?;
    let m = sc.n_steps();
    let mut state = initial_state(sc, &sim)?;
    let mut states = Vec::with_capacity(m + 1);
    let mut inputs = Vec::with_capacity(m + 1);
    let mut frames = Vec::with_capacity(m + 1);
    let mut sim_clamps = 0;
    for k in 0..=m {
        let mut b = sc.boundary_at(k as f64 * sc.geometry.step_h)?;
        sim.apply_exit_rates(&state, &mut b);
        frames.push(sim.observe(&state, &b, k));
        if k == m {
            states.push(state);
            inputs.push(b);
            break;
        }
        let out = sim.step(&state, &b, k)?;
        sim_clamps += out.clamps;
        states.push(std::mem::replace(&mut state, out.next));
        inputs.push(b);
    }
    Ok(Truth {
        geom: sim.geom,
        states,
        inputs,
        frames,
        sim_clamps,
    })
}

/// Builds the estimator's system from a frame for the chosen off-ramp mode.
pub fn system_for(
    frame: &MeasurementFrame,
    geom: &HighwayGeometry,
    mode: OfframpMode,
    exit_rates_a: &[f64],
) -> Result<LtvSystem, HarnessError> {
    Ok(match mode {
        OfframpMode::Measured => build_system_measured(frame, geom)?,
        OfframpMode::Unmeasured => build_system_unmeasured_offramps(frame, geom, exit_rates_a)?,
    })
}

/// Filter outputs along a truth trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct Estimates {
    /// `x̂(k)` for `k = 0..=M`.
    pub x_hat: Vec<Vec<f64>>,
    pub rho_hat: Vec<Vec<f64>>,
    pub q_hat: Vec<Vec<f64>>,
    /// Innovation and gain norm of step `k`, for `k = 0..M`.
    pub innovation: Vec<f64>,
    pub gain_norm: Vec<f64>,
    pub g_clamps: usize,
    pub output_holds: usize,
    pub min_cov_eigenvalue: f64,
    pub max_cov_asymmetry: f64,
}

pub fn run_filter(
    truth: &Truth,
    config: &KalmanConfig,
    mode: OfframpMode,
    exit_rates_a: &[f64],
) -> Result<Estimates, HarnessError> {
    let m = truth.n_steps();
    let geom = &truth.geom;
    let mut fs = FilterState::initial(config);
    let mut sensor = ExitRatioSensor::default();
    let mut out = Estimates {
        x_hat: Vec::with_capacity(m + 1),
        rho_hat: Vec::with_capacity(m + 1),
        q_hat: Vec::with_capacity(m + 1),
        innovation: Vec::with_capacity(m),
        gain_norm: Vec::with_capacity(m),
        g_clamps: 0,
        output_holds: 0,
        min_cov_eigenvalue: fs.min_covariance_eigenvalue(),
        max_cov_asymmetry: 0.0,
    };
    for k in 0..=m {
        let frame = &truth.frames[k];
        let (rho_hat, q_hat) = reconstruct_totals(&fs.x_hat, frame);
        out.x_hat.push(fs.x_hat.iter().copied().collect());
        out.rho_hat.push(rho_hat);
        out.q_hat.push(q_hat);
        if k == m {
            break;
        }
        let sys = system_for(frame, geom, mode, exit_rates_a)?;
        out.g_clamps += sys.g_clamps;
        let z = sensor.sample(frame, sys.output(&fs.x_hat));
        let report = filter_step(&fs, &sys, z, config)?;
        out.innovation.push(report.innovation);
        out.gain_norm.push(report.gain.norm());
        fs = report.next;
        out.min_cov_eigenvalue = out.min_cov_eigenvalue.min(fs.min_covariance_eigenvalue());
        out.max_cov_asymmetry = out
            .max_cov_asymmetry
            .max((&fs.p_cov - fs.p_cov.transpose()).amax());
    }
    out.output_holds = sensor.holds;
    Ok(out)
}

/// Relative root-mean-square density error normalized by the mean density,
/// both averaged over every `(k, i)` sample.
pub fn performance_index(
    truth_rho: &[Vec<f64>],
    rho_a: &[Vec<f64>],
    x_hat_series: &[Vec<f64>],
) -> Result<f64, HarnessError> {
    if truth_rho.len() != rho_a.len()
        || truth_rho.len() != x_hat_series.len()
        || truth_rho.is_empty()
    {
        return Err(HarnessError::Metric(
            "series lengths differ or are empty".into(),
        ));
    }
    let mut sq = 0.0;
    let mut total = 0.0;
    let mut count = 0usize;
    for ((rho, ra), x) in truth_rho.iter().zip(rho_a).zip(x_hat_series) {
        if rho.len() != ra.len() || rho.len() != x.len() {
            return Err(HarnessError::Metric("segment counts differ".into()));
        }
        for i in 0..rho.len() {
            sq += (rho[i] - ra[i] * x[i]).powi(2);
            total += rho[i];
            count += 1;
        }
    }
    let mean = total / count as f64;
    if !(mean > 0.0) {
        return Err(HarnessError::Metric("mean density is zero".into()));
    }
    Ok((sq / count as f64).sqrt() / mean)
}

pub fn performance_of(truth: &Truth, est: &Estimates) -> Result<f64, HarnessError> {
    let rho: Vec<Vec<f64>> = truth.states.iter().map(|s| s.rho.clone()).collect();
    let rho_a: Vec<Vec<f64>> = truth.states.iter().map(|s| s.rho_a.clone()).collect();
    performance_index(&rho, &rho_a, &est.x_hat)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub p_r: f64,
    pub g_clamps: usize,
    pub output_holds: usize,
    pub sim_clamps: usize,
    pub min_cov_eigenvalue: f64,
    pub runtime_s: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunResult {
    pub truth: Truth,
    pub estimates: Estimates,
    pub metrics: Metrics,
}

fn filter_config(
    sc: &Scenario,
    truth: &Truth,
    tuning: &FilterTuning,
) -> Result<KalmanConfig, HarnessError> {
    let n = sc.geometry.n_segments;
    let mut cfg =
        KalmanConfig::scaled_identity(n, tuning.q_scale, tuning.r, tuning.mu, tuning.p0_scale)?;
    if tuning.exact_init {
        cfg.x0 = DVector::from_vec(truth.inverse_penetration(0));
    }
    Ok(cfg)
}

fn estimate_on(
    sc: &Scenario,
    truth: &Truth,
    tuning: &FilterTuning,
) -> Result<(Estimates, f64), HarnessError> {
    let cfg = filter_config(sc, truth, tuning)?;
    let rates = sc.ramps.exit_rates_a_per_segment(sc.geometry.n_segments);
    let est = run_filter(truth, &cfg, sc.offramp_mode, &rates)?;
    let p_r = performance_of(truth, &est)?;
    Ok((est, p_r))
}

/// Full pipeline for one scenario.
pub fn run_experiment(sc: &Scenario) -> Result<RunResult, HarnessError> {
    let start = Instant::now();
    let truth = generate_truth(sc)?;
    let (estimates, p_r) = estimate_on(sc, &truth, &sc.filter)?;
    let metrics = Metrics {
        p_r,
        g_clamps: estimates.g_clamps,
        output_holds: estimates.output_holds,
        sim_clamps: truth.sim_clamps,
        min_cov_eigenvalue: estimates.min_cov_eigenvalue,
        runtime_s: start.elapsed().as_secs_f64(),
    };
    Ok(RunResult {
        truth,
        estimates,
        metrics,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub sigma: f64,
    pub p_r: f64,
}

/// Reruns the filter with `Q = σ I` for each σ on one shared truth trajectory.
pub fn q_sweep(sc: &Scenario, sigmas: &[f64]) -> Result<Vec<SweepPoint>, HarnessError> {
    if let Some(bad) = sigmas.iter().find(|s| !(**s > 0.0 && s.is_finite())) {
        return Err(HarnessError::Metric(format!(
            "sweep values must be positive, got {bad}"
        )));
    }
    let truth = generate_truth(sc)?;
    q_sweep_on(sc, &truth, sigmas)
}

pub fn q_sweep_on(
    sc: &Scenario,
    truth: &Truth,
    sigmas: &[f64],
) -> Result<Vec<SweepPoint>, HarnessError> {
    sigmas
        .par_iter()
        .map(|&sigma| {
            let tuning = FilterTuning {
                q_scale: sigma,
                ..sc.filter.clone()
            };
            estimate_on(sc, truth, &tuning).map(|(_, p_r)| SweepPoint { sigma, p_r })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObservabilityRow {
    pub k0: usize,
    pub observable: bool,
    pub min_abs_anti_diagonal: f64,
    pub log10_abs_det: f64,
}

/// Anti-diagonal of the observability matrix for every window of `N - 1`
/// consecutive systems along the truth trajectory.
pub fn observability_over_run(
    sc: &Scenario,
    truth: &Truth,
) -> Result<Vec<ObservabilityRow>, HarnessError> {
    let n = sc.geometry.n_segments;
    let rates = sc.ramps.exit_rates_a_per_segment(n);
    let systems = truth.frames[..truth.n_steps()]
        .iter()
        .map(|f| system_for(f, &truth.geom, sc.offramp_mode, &rates))
        .collect::<Result<Vec<_>, _>>()?;
    let window = n - 1;
    if systems.len() < window {
        return Ok(Vec::new());
    }
    (0..=systems.len() - window)
        .into_par_iter()
        .map(|k0| {
            let obs = observability_matrix(&systems[k0..k0 + window])?;
            let anti = anti_diagonal(&obs);
            let min_abs = anti.iter().map(|a| a.abs()).fold(f64::INFINITY, f64::min);
            Ok(ObservabilityRow {
                k0,
                observable: anti_diagonal_observable(&anti),
                min_abs_anti_diagonal: min_abs,
                log10_abs_det: anti.iter().map(|a| a.abs().log10()).sum(),
            })
        })
        .collect()
}
