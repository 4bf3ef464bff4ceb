//! Experiment description, loaded from TOML.

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::SimError;
use crate::highway::{BoundaryInputs, HighwayGeometry, MetanetParams, RampLayout};
use crate::kalman::{FilterTuning, KalmanConfig};
use crate::metanet::{Demand, NoiseSpec, Profile, Simulator};

/// How the estimator treats off-ramp totals.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum OfframpMode {
    /// Off-ramp totals come from detectors.
    #[default]
    Measured,
    /// Off-ramp totals are inferred from known exit rates.
    Unmeasured,
}

impl std::str::FromStr for OfframpMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "measured" => Ok(Self::Measured),
            "unmeasured" => Ok(Self::Unmeasured),
            other => Err(format!(
                "unknown off-ramp mode `{other}` (expected measured|unmeasured)"
            )),
        }
    }
}

impl fmt::Display for OfframpMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Measured => "measured",
            Self::Unmeasured => "unmeasured",
        })
    }
}

/// Segment lengths given either once for all segments or per segment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SegmentLengths {
    Uniform(f64),
    PerSegment(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeometrySpec {
    pub n_segments: usize,
    pub step_h: f64,
    pub seg_len_km: SegmentLengths,
}

impl Default for GeometrySpec {
    fn default() -> Self {
        Self {
            n_segments: 20,
            step_h: 10.0 / 3600.0,
            seg_len_km: SegmentLengths::Uniform(0.5),
        }
    }
}

impl GeometrySpec {
    pub fn build(&self) -> HighwayGeometry {
        let seg_len_km = match &self.seg_len_km {
            SegmentLengths::Uniform(l) => vec![*l; self.n_segments],
            SegmentLengths::PerSegment(v) => v.clone(),
        };
        HighwayGeometry {
            n_segments: self.n_segments,
            step_h: self.step_h,
            seg_len_km,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OnRampDemand {
    pub segment: usize,
    #[serde(flatten)]
    pub demand: Demand,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DemandSpec {
    pub entry: Demand,
    #[serde(default)]
    pub on_ramps: Vec<OnRampDemand>,
}

/// Initial condition: uniform density on the fundamental diagram, relaxed
/// without noise under the `t = 0` boundary flows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct InitialSpec {
    pub density: f64,
    pub warmup_steps: usize,
}

impl Default for InitialSpec {
    fn default() -> Self {
        Self {
            density: 12.0,
            warmup_steps: 720,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    #[serde(default = "default_name")]
    pub name: String,
    pub horizon_h: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub offramp_mode: OfframpMode,
    #[serde(default)]
    pub geometry: GeometrySpec,
    #[serde(default)]
    pub metanet: MetanetParams,
    pub ramps: RampLayout,
    pub demand: DemandSpec,
    #[serde(default)]
    pub initial: InitialSpec,
    #[serde(default)]
    pub noise: NoiseSpec,
    #[serde(default)]
    pub filter: FilterTuning,
}

fn default_name() -> String {
    "unnamed".to_string()
}

fn profile(points: &[(f64, f64)]) -> Profile {
    Profile::new(points.to_vec()).expect("built-in profile is sorted")
}

impl Default for Scenario {
    /// The 20-segment, three-hour experiment.
    fn default() -> Self {
        let share = Profile::constant(0.2);
        let ramp = |segment, points: &[(f64, f64)]| OnRampDemand {
            segment,
            demand: Demand {
                total: profile(points),
                penetration: share.clone(),
            },
        };
        Self {
            name: "default".to_string(),
            horizon_h: 3.0,
            seed: 1,
            offramp_mode: OfframpMode::Measured,
            geometry: GeometrySpec::default(),
            metanet: MetanetParams::default(),
            ramps: RampLayout {
                on_ramp_segments: vec![2, 6, 10],
                off_ramp_segments: vec![4, 8, 12],
                exit_rate: vec![0.1; 3],
                exit_rate_a: vec![0.1; 3],
            },
            demand: DemandSpec {
                entry: Demand {
                    total: profile(&[
                        (0.0, 1300.0),
                        (0.75, 1300.0),
                        (0.95, 1650.0),
                        (1.55, 1650.0),
                        (1.75, 1200.0),
                        (3.0, 1200.0),
                    ]),
                    penetration: share.clone(),
                },
                on_ramps: vec![
                    ramp(2, &[(0.0, 200.0), (3.0, 200.0)]),
                    ramp(
                        6,
                        &[
                            (0.0, 150.0),
                            (0.75, 150.0),
                            (0.95, 600.0),
                            (1.55, 600.0),
                            (1.75, 100.0),
                            (3.0, 100.0),
                        ],
                    ),
                    ramp(10, &[(0.0, 150.0), (3.0, 150.0)]),
                ],
            },
            initial: InitialSpec::default(),
            noise: NoiseSpec::default(),
            filter: FilterTuning::default(),
        }
    }
}

/// One validation failure with the dotted path of the offending field.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Issue {
    pub path: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ValidationErrors {
    pub issues: Vec<Issue>,
}

impl fmt::Display for ValidationErrors {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "invalid scenario:")?;
        for issue in &self.issues {
            write!(f, " {}: {};", issue.path, issue.message)?;
        }
        Ok(())
    }
}

impl std::error::Error for ValidationErrors {}

struct Collector(Vec<Issue>);

impl Collector {
    fn push(&mut self, path: impl Into<String>, message: impl fmt::Display) {
        self.0.push(Issue {
            path: path.into(),
            message: message.to_string(),
        });
    }

    fn check<E: fmt::Display>(&mut self, path: &str, r: Result<(), E>) {
        if let Err(e) = r {
            self.push(path, e);
        }
    }
}

impl Scenario {
    pub fn from_toml_str(text: &str) -> Result<Self, toml::de::Error> {
        toml::from_str(text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("scenario serializes")
    }

    pub fn load(path: &Path) -> Result<Self, crate::harness::HarnessError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| crate::harness::HarnessError::Io(format!("{}: {e}", path.display())))?;
        Self::from_toml_str(&text).map_err(|e| crate::harness::HarnessError::Parse(e.to_string()))
    }

    pub fn geometry(&self) -> HighwayGeometry {
        self.geometry.build()
    }

    /// Number of simulated steps `M = horizon / T`.
    pub fn n_steps(&self) -> usize {
        (self.horizon_h / self.geometry.step_h).round() as usize
    }

    pub fn noise_spec(&self) -> NoiseSpec {
        NoiseSpec {
            seed: self.seed,
            ..self.noise.clone()
        }
    }

    pub fn validate(&self) -> Result<(), ValidationErrors> {
        let mut c = Collector(Vec::new());
        let geom = self.geometry();
        c.check("geometry", geom.validate());
        c.check("metanet", self.metanet.validate());
        let n = self.geometry.n_segments;
        c.check("ramps", self.ramps.validate(n));
        c.check("noise", self.noise.validate());

        if !(self.horizon_h > 0.0 && self.horizon_h.is_finite()) {
            c.push(
                "horizon_h",
                format!("must be positive, got {}", self.horizon_h),
            );
        } else if self.geometry.step_h > 0.0 {
            let steps = self.horizon_h / self.geometry.step_h;
            if (steps - steps.round()).abs() > 1e-6 || steps.round() < 1.0 {
                c.push(
                    "horizon_h",
                    format!("must be a whole number of steps, got {steps} steps"),
                );
            }
        }

        check_demand(&mut c, "demand.entry", &self.demand.entry);
        for (idx, ramp) in self.demand.on_ramps.iter().enumerate() {
            let path = format!("demand.on_ramps[{idx}]");
            if !self.ramps.on_ramp_segments.contains(&ramp.segment) {
                c.push(
                    format!("{path}.segment"),
                    format!(
                        "segment {} has no on-ramp in ramps.on_ramp_segments",
                        ramp.segment
                    ),
                );
            }
            if self.demand.on_ramps[..idx]
                .iter()
                .any(|r| r.segment == ramp.segment)
            {
                c.push(
                    format!("{path}.segment"),
                    format!("duplicate demand for segment {}", ramp.segment),
                );
            }
            check_demand(&mut c, &path, &ramp.demand);
        }

        if !(self.initial.density >= 0.0 && self.initial.density.is_finite()) {
            c.push(
                "initial.density",
                format!("must be >= 0, got {}", self.initial.density),
            );
        }
        let f = &self.filter;
        for (name, v) in [
            ("filter.q_scale", f.q_scale),
            ("filter.r", f.r),
            ("filter.p0_scale", f.p0_scale),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                c.push(name, format!("must be positive, got {v}"));
            }
        }
        if !f.mu.is_finite() {
            c.push("filter.mu", "must be finite");
        }

        if c.0.is_empty() {
            Ok(())
        } else {
            Err(ValidationErrors { issues: c.0 })
        }
    }

    pub fn simulator(&self) -> Result<Simulator, SimError> {
        Simulator::new(
            self.geometry(),
            self.metanet.clone(),
            self.ramps.clone(),
            self.noise_spec(),
        )
    }

    /// Entry and on-ramp flows at time `t_h`; off-ramp flows are left at zero.
    pub fn boundary_at(&self, t_h: f64) -> Result<BoundaryInputs, SimError> {
        let mut b = BoundaryInputs::zeros(self.geometry.n_segments);
        let (q0, q0_a) = self.demand.entry.at(t_h)?;
        b.q0 = q0;
        b.q0_a = q0_a;
        for ramp in &self.demand.on_ramps {
            let (r, r_a) = ramp.demand.at(t_h)?;
            b.r[ramp.segment - 1] = r;
            b.r_a[ramp.segment - 1] = r_a;
        }
        Ok(b)
    }

    pub fn kalman_config(&self) -> Result<KalmanConfig, crate::error::FilterError> {
        let f = &self.filter;
        KalmanConfig::scaled_identity(self.geometry.n_segments, f.q_scale, f.r, f.mu, f.p0_scale)
    }

    /// Same experiment with every noise source switched off.
    pub fn noise_free(&self) -> Self {
        Self {
            noise: NoiseSpec::zero(self.seed),
            ..self.clone()
        }
    }
}

fn check_demand(c: &mut Collector, path: &str, d: &Demand) {
    if d.total.min_value() < 0.0 {
        c.push(format!("{path}.total"), "flows must be >= 0");
    }
    if d.penetration.min_value() < 0.0 || d.penetration.max_value() > 1.0 {
        c.push(format!("{path}.penetration"), "shares must lie in [0, 1]");
    }
}
