//! Domain types shared by the simulator and the estimator.
//!
//! Units are fixed throughout the crate: time in hours, lengths in km,
//! densities in veh/km, flows in veh/h and speeds in km/h.

use serde::{Deserialize, Serialize};

use crate::error::HighwayError;

/// Floor applied to densities before any ratio is formed.
pub const DENSITY_FLOOR: f64 = 1e-6;

/// Discretization frame of a single highway stretch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HighwayGeometry {
    pub n_segments: usize,
    /// Time step in hours.
    pub step_h: f64,
    /// Length of each segment in km.
    pub seg_len_km: Vec<f64>,
}

impl HighwayGeometry {
    pub fn uniform(n_segments: usize, step_h: f64, seg_len_km: f64) -> Result<Self, HighwayError> {
        let geom = Self {
            n_segments,
            step_h,
            seg_len_km: vec![seg_len_km; n_segments],
        };
        geom.validate()?;
        Ok(geom)
    }

    pub fn validate(&self) -> Result<(), HighwayError> {
        if self.n_segments < 2 {
            return Err(HighwayError::Invalid(format!(
                "n_segments must be at least 2, got {}",
                self.n_segments
            )));
        }
        if !(self.step_h > 0.0 && self.step_h.is_finite()) {
            return Err(HighwayError::Invalid(format!(
                "step_h must be positive, got {}",
                self.step_h
            )));
        }
        if self.seg_len_km.len() != self.n_segments {
            return Err(HighwayError::LengthMismatch {
                what: "seg_len_km",
                expected: self.n_segments,
                got: self.seg_len_km.len(),
            });
        }
        if let Some((i, len)) = self
            .seg_len_km
            .iter()
            .enumerate()
            .find(|(_, l)| !(**l > 0.0 && l.is_finite()))
        {
            return Err(HighwayError::Invalid(format!(
                "seg_len_km[{i}] must be positive, got {len}"
            )));
        }
        Ok(())
    }

    /// `T / Δ_i` for a zero-based segment index, in h/km.
    #[inline]
    pub fn ratio(&self, i: usize) -> f64 {
        self.step_h / self.seg_len_km[i]
    }

    /// Courant-type sanity check: a vehicle at free speed must not cross a
    /// whole segment within one step.
    pub fn cfl_ok(&self, v_free: f64) -> bool {
        let min_len = self
            .seg_len_km
            .iter()
            .cloned()
            .fold(f64::INFINITY, f64::min);
        self.step_h * v_free <= min_len
    }
}

/// Parameters of the second-order speed dynamics and the exponential
/// fundamental diagram.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetanetParams {
    /// Relaxation time (h).
    pub tau_h: f64,
    /// Anticipation constant (km²/h).
    pub nu: f64,
    /// Density offset (veh/km).
    pub kappa: f64,
    /// On-ramp merging coefficient.
    pub delta_ramp: f64,
    /// Free speed (km/h).
    pub v_free: f64,
    /// Critical density (veh/km).
    pub rho_crit: f64,
    pub alpha_exp: f64,
}

impl Default for MetanetParams {
    fn default() -> Self {
        Self {
            tau_h: 20.0 / 3600.0,
            nu: 35.0,
            kappa: 13.0,
            delta_ramp: 1.4,
            v_free: 120.0,
            rho_crit: 33.5,
            alpha_exp: 1.4324,
        }
    }
}

impl MetanetParams {
    pub fn validate(&self) -> Result<(), HighwayError> {
        let fields = [
            ("tau_h", self.tau_h),
            ("nu", self.nu),
            ("kappa", self.kappa),
            ("delta_ramp", self.delta_ramp),
            ("v_free", self.v_free),
            ("rho_crit", self.rho_crit),
            ("alpha_exp", self.alpha_exp),
        ];
        for (name, value) in fields {
            if !(value > 0.0 && value.is_finite()) {
                return Err(HighwayError::Invalid(format!(
                    "{name} must be strictly positive, got {value}"
                )));
            }
        }
        Ok(())
    }
}

/// Stationary speed-density relation `V(ρ) = v_f exp(-(ρ/ρ_cr)^α / α)`.
pub fn nominal_speed(rho: f64, params: &MetanetParams) -> Result<f64, HighwayError> {
    if rho.is_nan() || rho < 0.0 {
        return Err(HighwayError::NegativeDensity(rho));
    }
    let reduced = (rho / params.rho_crit).powf(params.alpha_exp);
    Ok(params.v_free * (-reduced / params.alpha_exp).exp())
}

/// Ground-truth traffic state at one time step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrafficState {
    pub rho: Vec<f64>,
    pub rho_a: Vec<f64>,
    pub v: Vec<f64>,
    pub q: Vec<f64>,
    pub q_a: Vec<f64>,
}

impl TrafficState {
    /// State with the given total densities, a constant connected share and
    /// speeds on the fundamental diagram.
    pub fn on_fundamental_diagram(
        rho: Vec<f64>,
        penetration: f64,
        params: &MetanetParams,
    ) -> Result<Self, HighwayError> {
        if !(0.0..=1.0).contains(&penetration) {
            return Err(HighwayError::Invalid(format!(
                "penetration must be in [0, 1], got {penetration}"
            )));
        }
        let v = rho
            .iter()
            .map(|&r| nominal_speed(r, params))
            .collect::<Result<Vec<_>, _>>()?;
        let rho_a: Vec<f64> = rho.iter().map(|r| r * penetration).collect();
        let (q, q_a) = flows_from_state(&rho, &rho_a, &v)?;
        Ok(Self {
            rho,
            rho_a,
            v,
            q,
            q_a,
        })
    }

    pub fn len(&self) -> usize {
        self.rho.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rho.is_empty()
    }

    pub fn validate(&self) -> Result<(), HighwayError> {
        let n = self.rho.len();
        for (what, v) in [
            ("rho_a", &self.rho_a),
            ("v", &self.v),
            ("q", &self.q),
            ("q_a", &self.q_a),
        ] {
            if v.len() != n {
                return Err(HighwayError::LengthMismatch {
                    what,
                    expected: n,
                    got: v.len(),
                });
            }
        }
        for i in 0..n {
            let vals = [
                self.rho[i],
                self.rho_a[i],
                self.v[i],
                self.q[i],
                self.q_a[i],
            ];
            if vals.iter().any(|x| !x.is_finite()) {
                return Err(HighwayError::NonFinite { segment: i + 1 });
            }
            if self.rho[i] < 0.0 || self.v[i] < 0.0 {
                return Err(HighwayError::Invalid(format!(
                    "negative density or speed at segment {}",
                    i + 1
                )));
            }
            if self.rho_a[i] < 0.0 || self.rho_a[i] > self.rho[i] {
                return Err(HighwayError::Invalid(format!(
                    "connected density {} outside [0, {}] at segment {}",
                    self.rho_a[i],
                    self.rho[i],
                    i + 1
                )));
            }
        }
        Ok(())
    }

    /// True inverse penetration `ρ_i / ρ^a_i`, with `ρ^a` floored.
    pub fn inverse_penetration(&self) -> Vec<f64> {
        self.rho
            .iter()
            .zip(&self.rho_a)
            .map(|(r, ra)| r.max(DENSITY_FLOOR) / ra.max(DENSITY_FLOOR))
            .collect()
    }
}

/// Total and connected flows from densities and the shared mean speed.
pub fn flows_from_state(
    rho: &[f64],
    rho_a: &[f64],
    v: &[f64],
) -> Result<(Vec<f64>, Vec<f64>), HighwayError> {
    check_len("rho_a", rho.len(), rho_a.len())?;
    check_len("v", rho.len(), v.len())?;
    let q = rho.iter().zip(v).map(|(r, s)| r * s).collect();
    let q_a = rho_a.iter().zip(v).map(|(r, s)| r * s).collect();
    Ok((q, q_a))
}

/// Connected-vehicle share `ρ^a_i / ρ_i` per segment.
pub fn penetration(rho: &[f64], rho_a: &[f64]) -> Result<Vec<f64>, HighwayError> {
    check_len("rho_a", rho.len(), rho_a.len())?;
    rho.iter()
        .zip(rho_a)
        .enumerate()
        .map(|(i, (&r, &ra))| {
            if r.is_nan() || r <= DENSITY_FLOOR {
                Err(HighwayError::DegenerateSegment {
                    segment: i + 1,
                    rho: r,
                })
            } else {
                Ok(ra.max(DENSITY_FLOOR) / r)
            }
        })
        .collect()
}

fn check_len(what: &'static str, expected: usize, got: usize) -> Result<(), HighwayError> {
    if expected == got {
        Ok(())
    } else {
        Err(HighwayError::LengthMismatch {
            what,
            expected,
            got,
        })
    }
}

/// On- and off-ramp placement. Segment indices are one-based.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RampLayout {
    pub on_ramp_segments: Vec<usize>,
    pub off_ramp_segments: Vec<usize>,
    /// Total exit rate per off-ramp, aligned with `off_ramp_segments`.
    pub exit_rate: Vec<f64>,
    /// Connected exit rate per off-ramp.
    pub exit_rate_a: Vec<f64>,
}

impl RampLayout {
    pub fn validate(&self, n_segments: usize) -> Result<(), HighwayError> {
        for &s in self.on_ramp_segments.iter().chain(&self.off_ramp_segments) {
            if s == 0 || s > n_segments {
                return Err(HighwayError::Invalid(format!(
                    "ramp segment {s} outside 1..={n_segments}"
                )));
            }
        }
        check_len(
            "exit_rate",
            self.off_ramp_segments.len(),
            self.exit_rate.len(),
        )?;
        check_len(
            "exit_rate_a",
            self.off_ramp_segments.len(),
            self.exit_rate_a.len(),
        )?;
        for &b in self.exit_rate.iter().chain(&self.exit_rate_a) {
            if !(0.0..1.0).contains(&b) {
                return Err(HighwayError::Invalid(format!(
                    "exit rate {b} outside [0, 1)"
                )));
            }
        }
        Ok(())
    }

    /// Per-segment connected exit rates (zero where there is no off-ramp).
    pub fn exit_rates_a_per_segment(&self, n_segments: usize) -> Vec<f64> {
        let mut out = vec![0.0; n_segments];
        for (&seg, &b) in self.off_ramp_segments.iter().zip(&self.exit_rate_a) {
            out[seg - 1] = b;
        }
        out
    }

    pub fn exit_rates_per_segment(&self, n_segments: usize) -> Vec<f64> {
        let mut out = vec![0.0; n_segments];
        for (&seg, &b) in self.off_ramp_segments.iter().zip(&self.exit_rate) {
            out[seg - 1] = b;
        }
        out
    }
}

/// Boundary flows driving one simulation step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundaryInputs {
    pub q0: f64,
    pub q0_a: f64,
    pub r: Vec<f64>,
    pub r_a: Vec<f64>,
    pub s: Vec<f64>,
    pub s_a: Vec<f64>,
}

impl BoundaryInputs {
    pub fn zeros(n_segments: usize) -> Self {
        Self {
            q0: 0.0,
            q0_a: 0.0,
            r: vec![0.0; n_segments],
            r_a: vec![0.0; n_segments],
            s: vec![0.0; n_segments],
            s_a: vec![0.0; n_segments],
        }
    }

    pub fn validate(
        &self,
        n_segments: usize,
        ramps: Option<&RampLayout>,
    ) -> Result<(), HighwayError> {
        for (what, v) in [
            ("r", &self.r),
            ("r_a", &self.r_a),
            ("s", &self.s),
            ("s_a", &self.s_a),
        ] {
            check_len(what, n_segments, v.len())?;
        }
        if self.q0 < 0.0 || self.q0_a < 0.0 || self.q0_a > self.q0 {
            return Err(HighwayError::Invalid(format!(
                "entry flows must satisfy 0 <= q0_a <= q0, got q0={}, q0_a={}",
                self.q0, self.q0_a
            )));
        }
        for i in 0..n_segments {
            if self.r[i] < 0.0 || self.r_a[i] < 0.0 || self.r_a[i] > self.r[i] {
                return Err(HighwayError::Invalid(format!(
                    "on-ramp flows inconsistent at segment {}",
                    i + 1
                )));
            }
            if self.s[i] < 0.0 || self.s_a[i] < 0.0 || self.s_a[i] > self.s[i] {
                return Err(HighwayError::Invalid(format!(
                    "off-ramp flows inconsistent at segment {}",
                    i + 1
                )));
            }
        }
        if let Some(ramps) = ramps {
            for i in 0..n_segments {
                let seg = i + 1;
                if self.r[i] != 0.0 && !ramps.on_ramp_segments.contains(&seg) {
                    return Err(HighwayError::Invalid(format!(
                        "on-ramp flow at segment {seg} without an on-ramp"
                    )));
                }
                if self.s[i] != 0.0 && !ramps.off_ramp_segments.contains(&seg) {
                    return Err(HighwayError::Invalid(format!(
                        "off-ramp flow at segment {seg} without an off-ramp"
                    )));
                }
            }
        }
        Ok(())
    }
}
