//! Second-order macroscopic ground truth with seeded noise.
//!
//! Densities follow the discrete conservation laws for all and for connected
//! vehicles, the mean speed follows the relaxation/convection/anticipation
//! dynamics with an on-ramp merging term, and both classes share one speed.
//! Process noise perturbs the speed and flow equations only; densities are
//! always updated by exact conservation.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::SimError;
use crate::highway::{
    nominal_speed, BoundaryInputs, HighwayGeometry, MetanetParams, RampLayout, TrafficState,
};

/// Upper speed clamp as a multiple of the free speed.
pub const SPEED_CAP_FACTOR: f64 = 1.5;

const PROCESS_CHANNEL: u64 = 1;
const MEASUREMENT_CHANNEL: u64 = 2;

/// Standard deviations of the additive Gaussian noises and the seed of the
/// counter-based generator that draws them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NoiseSpec {
    /// Detector noise on the entry and exit flows (veh/h).
    pub std_entry_flow: f64,
    /// Detector noise on on-ramp flows (veh/h).
    pub std_onramp: f64,
    /// Detector noise on off-ramp flows (veh/h).
    pub std_offramp: f64,
    /// Process noise on the speed equation (km/h).
    pub std_speed: f64,
    /// Process noise on total segment flows (veh/h).
    pub std_flow_proc: f64,
    /// Process noise on connected segment flows (veh/h).
    pub std_flow_proc_a: f64,
    /// Set from the scenario seed rather than read from the noise block.
    #[serde(skip)]
    pub seed: u64,
}

impl Default for NoiseSpec {
    fn default() -> Self {
        Self {
            std_entry_flow: 25.0,
            std_onramp: 10.0,
            std_offramp: 5.0,
            std_speed: 5.0,
            std_flow_proc: 25.0,
            std_flow_proc_a: 15.0,
            seed: 1,
        }
    }
}

impl NoiseSpec {
    pub fn zero(seed: u64) -> Self {
        Self {
            std_entry_flow: 0.0,
            std_onramp: 0.0,
            std_offramp: 0.0,
            std_speed: 0.0,
            std_flow_proc: 0.0,
            std_flow_proc_a: 0.0,
            seed,
        }
    }

    pub fn is_zero(&self) -> bool {
        self.stds().iter().all(|(_, s)| *s == 0.0)
    }

    fn stds(&self) -> [(&'static str, f64); 6] {
        [
            ("std_entry_flow", self.std_entry_flow),
            ("std_onramp", self.std_onramp),
            ("std_offramp", self.std_offramp),
            ("std_speed", self.std_speed),
            ("std_flow_proc", self.std_flow_proc),
            ("std_flow_proc_a", self.std_flow_proc_a),
        ]
    }

    pub fn validate(&self) -> Result<(), SimError> {
        for (name, s) in self.stds() {
            if !(s >= 0.0 && s.is_finite()) {
                return Err(crate::error::HighwayError::Invalid(format!(
                    "{name} must be >= 0, got {s}"
                ))
                .into());
            }
        }
        Ok(())
    }

    /// Generator for one channel at one step. Draws depend only on
    /// `(seed, channel, step)`, never on call history.
    fn rng(&self, channel: u64, step: usize) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream((channel << 48) ^ step as u64);
        rng
    }
}

struct Gaussian {
    rng: ChaCha8Rng,
    unit: Normal<f64>,
}

impl Gaussian {
    fn new(rng: ChaCha8Rng) -> Self {
        Self {
            rng,
            unit: Normal::new(0.0, 1.0).expect("unit normal"),
        }
    }

    /// Always consumes one draw so the stream layout is independent of
    /// which standard deviations are zero.
    fn sample(&mut self, std: f64) -> f64 {
        std * self.unit.sample(&mut self.rng)
    }
}

/// What the estimator may see at one step: exact connected-vehicle
/// aggregates and noisy detector totals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeasurementFrame {
    pub q_a_seg: Vec<f64>,
    pub rho_a_seg: Vec<f64>,
    /// Connected entry flow.
    pub q0_a: f64,
    pub r_a: Vec<f64>,
    pub s_a: Vec<f64>,
    pub q0_meas: f64,
    pub q_n_meas: f64,
    pub r_meas: Vec<f64>,
    pub s_meas: Vec<f64>,
}

impl MeasurementFrame {
    pub fn n_segments(&self) -> usize {
        self.rho_a_seg.len()
    }
}

/// Result of advancing the ground truth by one step.
#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub next: TrafficState,
    /// Number of values that had to be clamped into their physical range.
    pub clamps: usize,
}

/// Owns the static description of the stretch and advances ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct Simulator {
    pub geom: HighwayGeometry,
    pub params: MetanetParams,
    pub ramps: RampLayout,
    pub noise: NoiseSpec,
}

impl Simulator {
    pub fn new(
        geom: HighwayGeometry,
        params: MetanetParams,
        ramps: RampLayout,
        noise: NoiseSpec,
    ) -> Result<Self, SimError> {
        geom.validate()?;
        params.validate()?;
        ramps.validate(geom.n_segments)?;
        noise.validate()?;
        if !geom.cfl_ok(params.v_free) {
            log::warn!(
                "step {} h at free speed {} km/h exceeds the shortest segment",
                geom.step_h,
                params.v_free
            );
        }
        Ok(Self {
            geom,
            params,
            ramps,
            noise,
        })
    }

    /// Fills the off-ramp flows from the exit rates applied to the upstream
    /// segment flows of `state`.
    pub fn apply_exit_rates(&self, state: &TrafficState, inputs: &mut BoundaryInputs) {
        let n = self.geom.n_segments;
        inputs.s = vec![0.0; n];
        inputs.s_a = vec![0.0; n];
        for ((&seg, &beta), &beta_a) in self
            .ramps
            .off_ramp_segments
            .iter()
            .zip(&self.ramps.exit_rate)
            .zip(&self.ramps.exit_rate_a)
        {
            let i = seg - 1;
            let (up, up_a) = if i == 0 {
                (inputs.q0, inputs.q0_a)
            } else {
                (state.q[i - 1], state.q_a[i - 1])
            };
            inputs.s[i] = beta * up;
            inputs.s_a[i] = (beta_a * up_a).min(inputs.s[i]);
        }
    }

    /// Advances `state` by one step using the boundary flows exactly as given.
    pub fn step(
        &self,
        state: &TrafficState,
        inputs: &BoundaryInputs,
        step: usize,
    ) -> Result<StepOutcome, SimError> {
        let n = self.geom.n_segments;
        let p = &self.params;
        let t = self.geom.step_h;
        let mut gauss = Gaussian::new(self.noise.rng(PROCESS_CHANNEL, step));
        let mut clamps = 0usize;

        let mut rho = vec![0.0; n];
        let mut rho_a = vec![0.0; n];
        let mut v = vec![0.0; n];
        for i in 0..n {
            let ratio = self.geom.ratio(i);
            let (up, up_a) = if i == 0 {
                (inputs.q0, inputs.q0_a)
            } else {
                (state.q[i - 1], state.q_a[i - 1])
            };
            let r = state.rho[i] + ratio * (up - state.q[i] + inputs.r[i] - inputs.s[i]);
            let ra = state.rho_a[i] + ratio * (up_a - state.q_a[i] + inputs.r_a[i] - inputs.s_a[i]);
            rho[i] = clamp_count(r, 0.0, f64::INFINITY, &mut clamps);
            rho_a[i] = clamp_count(ra, 0.0, rho[i], &mut clamps);

            let vi = state.v[i];
            let v_up = if i == 0 { state.v[0] } else { state.v[i - 1] };
            let rho_down = if i + 1 == n {
                state.rho[i]
            } else {
                state.rho[i + 1]
            };
            let denom = state.rho[i] + p.kappa;
            let relax = t / p.tau_h * (nominal_speed(state.rho[i], p)? - vi);
            let convect = ratio * vi * (v_up - vi);
            let anticipate =
                p.nu * t / (p.tau_h * self.geom.seg_len_km[i]) * (rho_down - state.rho[i]) / denom;
            let merge = p.delta_ramp * ratio * inputs.r[i] * vi / denom;
            let next_v =
                vi + relax + convect - anticipate - merge + gauss.sample(self.noise.std_speed);
            v[i] = clamp_count(next_v, 0.0, SPEED_CAP_FACTOR * p.v_free, &mut clamps);
        }

        let mut q = vec![0.0; n];
        let mut q_a = vec![0.0; n];
        for i in 0..n {
            let qi = rho[i] * v[i] + gauss.sample(self.noise.std_flow_proc);
            let qai = rho_a[i] * v[i] + gauss.sample(self.noise.std_flow_proc_a);
            q[i] = clamp_count(qi, 0.0, f64::INFINITY, &mut clamps);
            q_a[i] = clamp_count(qai, 0.0, q[i], &mut clamps);
        }

        for (i, vals) in (0..n).map(|i| (i, [rho[i], rho_a[i], v[i], q[i], q_a[i]])) {
            if vals.iter().any(|x| x.is_nan()) {
                return Err(SimError::NaN {
                    step,
                    segment: i + 1,
                });
            }
        }
        Ok(StepOutcome {
            next: TrafficState {
                rho,
                rho_a,
                v,
                q,
                q_a,
            },
            clamps,
        })
    }

    /// Noisy detector readings and exact connected aggregates at `step`.
    pub fn observe(
        &self,
        state: &TrafficState,
        inputs: &BoundaryInputs,
        step: usize,
    ) -> MeasurementFrame {
        let n = self.geom.n_segments;
        let mut gauss = Gaussian::new(self.noise.rng(MEASUREMENT_CHANNEL, step));
        let q0_meas = (inputs.q0 + gauss.sample(self.noise.std_entry_flow)).max(0.0);
        let q_n_meas = (state.q[n - 1] + gauss.sample(self.noise.std_entry_flow)).max(0.0);
        let mut r_meas = inputs.r.clone();
        let mut s_meas = inputs.s.clone();
        for &seg in &self.ramps.on_ramp_segments {
            r_meas[seg - 1] = (inputs.r[seg - 1] + gauss.sample(self.noise.std_onramp)).max(0.0);
        }
        for &seg in &self.ramps.off_ramp_segments {
            s_meas[seg - 1] = (inputs.s[seg - 1] + gauss.sample(self.noise.std_offramp)).max(0.0);
        }
        MeasurementFrame {
            q_a_seg: state.q_a.clone(),
            rho_a_seg: state.rho_a.clone(),
            q0_a: inputs.q0_a,
            r_a: inputs.r_a.clone(),
            s_a: inputs.s_a.clone(),
            q0_meas,
            q_n_meas,
            r_meas,
            s_meas,
        }
    }
}

fn clamp_count(x: f64, lo: f64, hi: f64, count: &mut usize) -> f64 {
    if x < lo {
        *count += 1;
        lo
    } else if x > hi {
        *count += 1;
        hi
    } else {
        x
    }
}

/// Advances ground truth by one step: off-ramp flows from exit rates, then
/// conservation, speed dynamics and flows.
pub fn step_truth(
    sim: &Simulator,
    state: &TrafficState,
    inputs: &BoundaryInputs,
    step: usize,
) -> Result<(StepOutcome, BoundaryInputs), SimError> {
    let mut applied = inputs.clone();
    sim.apply_exit_rates(state, &mut applied);
    let outcome = sim.step(state, &applied, step)?;
    Ok((outcome, applied))
}

/// Piecewise-linear function of time, held constant beyond its end points.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<(f64, f64)>", into = "Vec<(f64, f64)>")]
pub struct Profile {
    points: Vec<(f64, f64)>,
}

impl Profile {
    pub fn new(points: Vec<(f64, f64)>) -> Result<Self, SimError> {
        if points.is_empty() {
            return Err(SimError::EmptyProfile);
        }
        if let Some(w) = points.windows(2).find(|w| !(w[0].0 < w[1].0)) {
            return Err(SimError::UnsortedBreakpoints(format!(
                "{} then {}",
                w[0].0, w[1].0
            )));
        }
        if points.iter().any(|(t, y)| !t.is_finite() || !y.is_finite()) {
            return Err(SimError::UnsortedBreakpoints(
                "non-finite breakpoint".into(),
            ));
        }
        Ok(Self { points })
    }

    pub fn constant(value: f64) -> Self {
        Self {
            points: vec![(0.0, value)],
        }
    }

    pub fn points(&self) -> &[(f64, f64)] {
        &self.points
    }

    pub fn eval(&self, t_h: f64) -> Result<f64, SimError> {
        if t_h.is_nan() || t_h < 0.0 {
            return Err(SimError::NegativeTime(t_h));
        }
        let pts = &self.points;
        let idx = pts.partition_point(|(t, _)| *t <= t_h);
        Ok(match idx {
            0 => pts[0].1,
            i if i == pts.len() => pts[i - 1].1,
            i => {
                let (t0, y0) = pts[i - 1];
                let (t1, y1) = pts[i];
                y0 + (y1 - y0) * (t_h - t0) / (t1 - t0)
            }
        })
    }

    pub fn min_value(&self) -> f64 {
        self.points
            .iter()
            .map(|p| p.1)
            .fold(f64::INFINITY, f64::min)
    }

    pub fn max_value(&self) -> f64 {
        self.points
            .iter()
            .map(|p| p.1)
            .fold(f64::NEG_INFINITY, f64::max)
    }
}

impl TryFrom<Vec<(f64, f64)>> for Profile {
    type Error = SimError;

    fn try_from(points: Vec<(f64, f64)>) -> Result<Self, Self::Error> {
        Profile::new(points)
    }
}

impl From<Profile> for Vec<(f64, f64)> {
    fn from(p: Profile) -> Self {
        p.points
    }
}

/// Evaluates a piecewise-linear demand at `t_h` hours.
pub fn demand_profile(t_h: f64, profile: &Profile) -> Result<f64, SimError> {
    profile.eval(t_h)
}

/// A total flow profile and the connected share applied to it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Demand {
    pub total: Profile,
    #[serde(default = "default_penetration")]
    pub penetration: Profile,
}

fn default_penetration() -> Profile {
    Profile::constant(0.2)
}

impl Demand {
    /// `(total, connected)` flow at `t_h`.
    pub fn at(&self, t_h: f64) -> Result<(f64, f64), SimError> {
        let total = self.total.eval(t_h)?.max(0.0);
        let share = self.penetration.eval(t_h)?.clamp(0.0, 1.0);
        Ok((total, total * share))
    }
}
