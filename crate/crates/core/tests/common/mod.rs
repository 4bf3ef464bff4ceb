#![allow(dead_code)]

use mixtraffic::harness::{generate_truth, system_for, Truth};
use mixtraffic::highway::HighwayGeometry;
use mixtraffic::metanet::MeasurementFrame;
use mixtraffic::{OfframpMode, Scenario};
use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const STEP_H: f64 = 10.0 / 3600.0;

pub fn geometry(n: usize) -> HighwayGeometry {
    HighwayGeometry::uniform(n, STEP_H, 0.5).unwrap()
}

/// Connected aggregates drawn from bounded positive ranges; totals are not
/// needed for observability so they are left at zero.
pub fn random_frame(rng: &mut ChaCha8Rng, n: usize) -> MeasurementFrame {
    MeasurementFrame {
        q_a_seg: (0..n).map(|_| rng.random_range(50.0..600.0)).collect(),
        rho_a_seg: (0..n).map(|_| rng.random_range(5.0..40.0)).collect(),
        q0_a: rng.random_range(50.0..600.0),
        r_a: (0..n).map(|_| rng.random_range(0.0..100.0)).collect(),
        s_a: (0..n).map(|_| rng.random_range(0.0..30.0)).collect(),
        q0_meas: 0.0,
        q_n_meas: 0.0,
        r_meas: vec![0.0; n],
        s_meas: vec![0.0; n],
    }
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn noise_free_default(mode: OfframpMode) -> Scenario {
    let mut sc = Scenario::default().noise_free();
    sc.offramp_mode = mode;
    sc
}

/// Runs the inverse-share model open loop from the true initial state and
/// returns the largest deviation from `ρ/ρ^a` over the whole run.
pub fn model_deviation(sc: &Scenario, truth: &Truth) -> f64 {
    let rates = sc.ramps.exit_rates_a_per_segment(sc.geometry.n_segments);
    let mut x = DVector::from_vec(truth.inverse_penetration(0));
    let mut worst: f64 = 0.0;
    for k in 0..truth.n_steps() {
        let sys = system_for(&truth.frames[k], &truth.geom, sc.offramp_mode, &rates).unwrap();
        x = sys.propagate(&x);
        let exact = truth.inverse_penetration(k + 1);
        for (a, b) in x.iter().zip(&exact) {
            worst = worst.max((a - b).abs());
        }
    }
    worst
}

pub fn equivalence_deviation(mode: OfframpMode) -> f64 {
    let sc = noise_free_default(mode);
    let truth = generate_truth(&sc).unwrap();
    model_deviation(&sc, &truth)
}

/// Largest per-step violation of the network vehicle balance
/// `Σ Δ_i (ρ_i(k+1) - ρ_i(k)) = T (q_0 - q_N + Σ r_i - Σ s_i)`, in vehicles.
pub fn conservation_residual(truth: &Truth) -> f64 {
    let g = &truth.geom;
    let n = g.n_segments;
    let mut worst: f64 = 0.0;
    for k in 0..truth.n_steps() {
        let (now, next, b) = (&truth.states[k], &truth.states[k + 1], &truth.inputs[k]);
        let stored: f64 = (0..n)
            .map(|i| g.seg_len_km[i] * (next.rho[i] - now.rho[i]))
            .sum();
        let net = b.q0 - now.q[n - 1] + b.r.iter().sum::<f64>() - b.s.iter().sum::<f64>();
        worst = worst.max((stored - g.step_h * net).abs());
    }
    worst
}
