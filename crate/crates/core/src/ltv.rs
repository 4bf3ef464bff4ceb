//! Linear time-varying model of the inverse connected-vehicle share.
//!
//! With `x_i = ρ_i / ρ^a_i` and a shared mean speed, the two conservation
//! laws combine into `x(k+1) = A(k) x(k) + B(k) u(k)` where `A` is lower
//! bidiagonal and built entirely from connected-vehicle aggregates, while
//! `u` carries the detector totals. The exit flow ratio `q_N / q^a_N`
//! observes the last state component.

use nalgebra::{DMatrix, DVector, RowDVector};

use crate::error::ModelError;
use crate::highway::{HighwayGeometry, DENSITY_FLOOR};
use crate::metanet::MeasurementFrame;

/// Smallest magnitude a single coupling factor may have before the chain is
/// treated as broken. Anti-diagonal entries are products of up to `N - 1`
/// such factors, so they are compared through their successive ratios
/// rather than against this value directly.
pub const OBSERVABILITY_TOL: f64 = 1e-12;

/// Predicted next-step connected densities, floored at [`DENSITY_FLOOR`].
#[derive(Debug, Clone, PartialEq)]
pub struct Denominators {
    pub values: Vec<f64>,
    /// How many entries were raised to the floor.
    pub clamped: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LtvSystem {
    pub a_mat: DMatrix<f64>,
    pub b_mat: DMatrix<f64>,
    pub u_vec: DVector<f64>,
    pub c_vec: RowDVector<f64>,
    pub g_vec: DVector<f64>,
    pub g_clamps: usize,
}

impl LtvSystem {
    pub fn n_states(&self) -> usize {
        self.a_mat.nrows()
    }

    /// One noise-free step of the state equation.
    pub fn propagate(&self, x: &DVector<f64>) -> DVector<f64> {
        &self.a_mat * x + &self.b_mat * &self.u_vec
    }

    pub fn output(&self, x: &DVector<f64>) -> f64 {
        (&self.c_vec * x)[0]
    }
}

/// Output row selecting the last segment.
pub fn exit_output(n: usize) -> RowDVector<f64> {
    selector_output(n, n).expect("last segment is a valid selector")
}

/// Output row selecting segment `j` (one-based).
pub fn selector_output(n: usize, j: usize) -> Result<RowDVector<f64>, ModelError> {
    if j == 0 || j > n {
        return Err(ModelError::OutputIndex { index: j, n });
    }
    let mut c = RowDVector::zeros(n);
    c[j - 1] = 1.0;
    Ok(c)
}

fn check_frame(frame: &MeasurementFrame, geom: &HighwayGeometry) -> Result<(), ModelError> {
    let n = geom.n_segments;
    for got in [
        frame.q_a_seg.len(),
        frame.rho_a_seg.len(),
        frame.r_a.len(),
        frame.s_a.len(),
        frame.r_meas.len(),
        frame.s_meas.len(),
    ] {
        if got != n {
            return Err(ModelError::Dimension { expected: n, got });
        }
    }
    Ok(())
}

fn upstream_connected(frame: &MeasurementFrame, i: usize) -> f64 {
    if i == 0 {
        frame.q0_a
    } else {
        frame.q_a_seg[i - 1]
    }
}

fn floor_count(values: Vec<f64>) -> Denominators {
    let mut clamped = 0;
    let values = values
        .into_iter()
        .map(|g| {
            if g.is_nan() || g <= DENSITY_FLOOR {
                clamped += 1;
                DENSITY_FLOOR
            } else {
                g
            }
        })
        .collect();
    Denominators { values, clamped }
}

/// `g_i = ρ^a_i + (T/Δ_i)(q^a_{i-1} - q^a_i + r^a_i - s^a_i)`.
pub fn build_g(
    frame: &MeasurementFrame,
    geom: &HighwayGeometry,
) -> Result<Denominators, ModelError> {
    check_frame(frame, geom)?;
    let values = (0..geom.n_segments)
        .map(|i| {
            frame.rho_a_seg[i]
                + geom.ratio(i)
                    * (upstream_connected(frame, i) - frame.q_a_seg[i] + frame.r_a[i]
                        - frame.s_a[i])
        })
        .collect();
    Ok(floor_count(values))
}

/// Denominators for the exit-rate variant, where the connected off-ramp
/// flow is replaced by `β^a_i q^a_{i-1}`.
pub fn build_g_exit_rates(
    frame: &MeasurementFrame,
    geom: &HighwayGeometry,
    exit_rates_a: &[f64],
) -> Result<Denominators, ModelError> {
    check_frame(frame, geom)?;
    check_exit_rates(exit_rates_a, geom.n_segments)?;
    let values = (0..geom.n_segments)
        .map(|i| {
            let keep = 1.0 - exit_rates_a[i];
            frame.rho_a_seg[i]
                + geom.ratio(i) * (keep * upstream_connected(frame, i) - frame.q_a_seg[i])
                + geom.ratio(i) * frame.r_a[i]
        })
        .collect();
    Ok(floor_count(values))
}

fn check_exit_rates(exit_rates_a: &[f64], n: usize) -> Result<(), ModelError> {
    if exit_rates_a.len() != n {
        return Err(ModelError::Dimension {
            expected: n,
            got: exit_rates_a.len(),
        });
    }
    for (i, &b) in exit_rates_a.iter().enumerate() {
        if !(0.0..1.0).contains(&b) {
            return Err(ModelError::ExitRate {
                segment: i + 1,
                rate: b,
            });
        }
    }
    Ok(())
}

/// Assembles `A`, `B` for the given denominators and per-segment fraction of
/// upstream flow that stays on the mainline.
fn assemble(
    frame: &MeasurementFrame,
    geom: &HighwayGeometry,
    g: Denominators,
    keep: impl Fn(usize) -> f64,
    u_vec: DVector<f64>,
) -> LtvSystem {
    let n = geom.n_segments;
    let mut a_mat = DMatrix::zeros(n, n);
    let mut b_mat = DMatrix::zeros(n, n + 1);
    for i in 0..n {
        let ratio = geom.ratio(i);
        let gi = g.values[i];
        a_mat[(i, i)] = (frame.rho_a_seg[i] - ratio * frame.q_a_seg[i]) / gi;
        if i > 0 {
            a_mat[(i, i - 1)] = ratio * keep(i) * frame.q_a_seg[i - 1] / gi;
        }
        b_mat[(i, i + 1)] = ratio / gi;
    }
    b_mat[(0, 0)] = geom.ratio(0) * keep(0) / g.values[0];
    LtvSystem {
        a_mat,
        b_mat,
        u_vec,
        c_vec: exit_output(n),
        g_vec: DVector::from_vec(g.values),
        g_clamps: g.clamped,
    }
}

/// System for the configuration where every off-ramp total is measured.
pub fn build_system_measured(
    frame: &MeasurementFrame,
    geom: &HighwayGeometry,
) -> Result<LtvSystem, ModelError> {
    let g = build_g(frame, geom)?;
    let n = geom.n_segments;
    let mut u = DVector::zeros(n + 1);
    u[0] = frame.q0_meas;
    for i in 0..n {
        u[i + 1] = frame.r_meas[i] - frame.s_meas[i];
    }
    Ok(assemble(frame, geom, g, |_| 1.0, u))
}

/// System for unmeasured off-ramp totals, using known connected exit rates
/// (assumed equal to the total exit rates). `exit_rates_a` is per segment,
/// zero where there is no off-ramp.
pub fn build_system_unmeasured_offramps(
    frame: &MeasurementFrame,
    geom: &HighwayGeometry,
    exit_rates_a: &[f64],
) -> Result<LtvSystem, ModelError> {
    let g = build_g_exit_rates(frame, geom, exit_rates_a)?;
    let n = geom.n_segments;
    let mut u = DVector::zeros(n + 1);
    u[0] = frame.q0_meas;
    for i in 0..n {
        u[i + 1] = frame.r_meas[i];
    }
    Ok(assemble(frame, geom, g, |i| 1.0 - exit_rates_a[i], u))
}

/// Observability matrix over `N - 1` consecutive systems with the output
/// row of the first system.
pub fn observability_matrix(systems: &[LtvSystem]) -> Result<DMatrix<f64>, ModelError> {
    let first = systems
        .first()
        .ok_or(ModelError::TooFewSystems { needed: 1, got: 0 })?;
    observability_matrix_with_output(systems, &first.c_vec)
}

/// Rows `C, C A(k0), C A(k0+1) A(k0), ..., C A(k0+N-2) ... A(k0)`.
pub fn observability_matrix_with_output(
    systems: &[LtvSystem],
    c: &RowDVector<f64>,
) -> Result<DMatrix<f64>, ModelError> {
    let n = c.ncols();
    let needed = n.saturating_sub(1).max(1);
    if systems.len() < needed {
        return Err(ModelError::TooFewSystems {
            needed,
            got: systems.len(),
        });
    }
    let mut obs = DMatrix::zeros(n, n);
    obs.row_mut(0).copy_from(c);
    let mut product = DMatrix::<f64>::identity(n, n);
    for (j, sys) in systems.iter().take(n - 1).enumerate() {
        if sys.n_states() != n {
            return Err(ModelError::Dimension {
                expected: n,
                got: sys.n_states(),
            });
        }
        product = &sys.a_mat * product;
        obs.row_mut(j + 1).copy_from(&(c * &product));
    }
    Ok(obs)
}

/// Entries `O[j, N-1-j]`.
pub fn anti_diagonal(obs: &DMatrix<f64>) -> Vec<f64> {
    let n = obs.nrows();
    (0..n).map(|j| obs[(j, n - 1 - j)]).collect()
}

/// Successive ratios `O[j, N-1-j] / O[j-1, N-j]` of the anti-diagonal, i.e.
/// the one new coupling factor each extra output row contributes. The first
/// entry is `O[0, N-1]` itself.
pub fn anti_diagonal_factors(anti: &[f64]) -> Vec<f64> {
    let mut prev = 1.0;
    anti.iter()
        .map(|&a| {
            let f = a / prev;
            prev = a;
            f
        })
        .collect()
}

/// Whether every coupling factor along the anti-diagonal is finite and
/// clear of [`OBSERVABILITY_TOL`].
pub fn anti_diagonal_observable(anti: &[f64]) -> bool {
    anti_diagonal_factors(anti)
        .iter()
        .all(|f| f.is_finite() && f.abs() > OBSERVABILITY_TOL)
}

/// Determinant of an anti-lower-triangular matrix from its anti-diagonal.
pub fn anti_triangular_determinant(obs: &DMatrix<f64>) -> f64 {
    let n = obs.nrows();
    let sign = if (n * n.saturating_sub(1) / 2).is_multiple_of(2) {
        1.0
    } else {
        -1.0
    };
    sign * anti_diagonal(obs).iter().product::<f64>()
}

/// One-based indices of columns that are identically zero.
pub fn zero_columns(obs: &DMatrix<f64>) -> Vec<usize> {
    (0..obs.ncols())
        .filter(|&j| obs.column(j).iter().all(|&x| x == 0.0))
        .map(|j| j + 1)
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct ObservabilityReport {
    pub observable: bool,
    pub anti_diagonal: Vec<f64>,
    /// `log10 |det O|`, summed from the anti-diagonal to avoid underflow.
    pub log10_abs_det: f64,
    /// For every sensor position `J < N`, columns `J+1..=N` vanish.
    pub interior_sensor_unobservable: bool,
}

pub fn check_observability(systems: &[LtvSystem]) -> Result<ObservabilityReport, ModelError> {
    let obs = observability_matrix(systems)?;
    let n = obs.nrows();
    let anti = anti_diagonal(&obs);
    let observable = anti_diagonal_observable(&anti);
    let log10_abs_det = anti.iter().map(|a| a.abs().log10()).sum();
    let mut interior_sensor_unobservable = true;
    for j in 1..n {
        let o = observability_matrix_with_output(systems, &selector_output(n, j)?)?;
        if zero_columns(&o) != ((j + 1)..=n).collect::<Vec<_>>() {
            interior_sensor_unobservable = false;
        }
    }
    Ok(ObservabilityReport {
        observable,
        anti_diagonal: anti,
        log10_abs_det,
        interior_sensor_unobservable,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn geom(n: usize) -> HighwayGeometry {
        HighwayGeometry::uniform(n, 10.0 / 3600.0, 0.5).unwrap()
    }

    fn frame(n: usize, rho_a: f64, q_a: f64, q0_a: f64) -> MeasurementFrame {
        MeasurementFrame {
            q_a_seg: vec![q_a; n],
            rho_a_seg: vec![rho_a; n],
            q0_a,
            r_a: vec![0.0; n],
            s_a: vec![0.0; n],
            q0_meas: 5.0 * q0_a,
            q_n_meas: 5.0 * q_a,
            r_meas: vec![0.0; n],
            s_meas: vec![0.0; n],
        }
    }

    #[test]
    fn g_reduces_to_density_without_flows() {
        let f = frame(4, 7.5, 0.0, 0.0);
        let g = build_g(&f, &geom(4)).unwrap();
        assert_eq!(g.values, vec![7.5; 4]);
        assert_eq!(g.clamped, 0);
    }

    #[test]
    fn g_direct_arithmetic() {
        // 10 + (720 - 600) / 180
        let f = frame(3, 10.0, 600.0, 720.0);
        let g = build_g(&f, &geom(3)).unwrap();
        assert_relative_eq!(g.values[0], 10.666666666666666, epsilon = 1e-12);
    }

    #[test]
    fn g_floor_is_flagged() {
        let mut f = frame(3, 1.0, 600.0, 0.0);
        f.rho_a_seg[0] = 0.5;
        let g = build_g(&f, &geom(3)).unwrap();
        assert_eq!(g.values[0], DENSITY_FLOOR);
        assert_eq!(g.clamped, 1);
    }

    #[test]
    fn bidiagonal_entries_and_row_sums() {
        let mut f = frame(3, 10.0, 600.0, 720.0);
        // segment 2 sees q^a_1 = 720, q^a_2 = 600
        f.q_a_seg = vec![720.0, 600.0, 600.0];
        let sys = build_system_measured(&f, &geom(3)).unwrap();
        assert_relative_eq!(sys.a_mat[(1, 1)], 0.625, epsilon = 1e-12);
        assert_relative_eq!(sys.a_mat[(1, 0)], 0.375, epsilon = 1e-12);
        for i in 1..3 {
            assert_relative_eq!(sys.a_mat.row(i).sum(), 1.0, epsilon = 1e-14);
        }
        assert_eq!(sys.a_mat[(0, 2)], 0.0);
        assert_eq!(sys.a_mat[(2, 0)], 0.0);
        assert_eq!(sys.c_vec, RowDVector::from_vec(vec![0.0, 0.0, 1.0]));
        assert_eq!(sys.b_mat[(0, 0)], sys.b_mat[(0, 1)]);
        assert_relative_eq!(
            sys.b_mat[(2, 3)],
            (1.0 / 180.0) / sys.g_vec[2],
            epsilon = 1e-15
        );
    }

    #[test]
    fn zero_connected_flows_give_identity() {
        let f = frame(4, 12.0, 0.0, 0.0);
        let sys = build_system_measured(&f, &geom(4)).unwrap();
        assert_eq!(sys.a_mat, DMatrix::identity(4, 4));
    }

    #[test]
    fn input_vector_layout() {
        let mut f = frame(3, 10.0, 500.0, 500.0);
        f.r_meas = vec![0.0, 300.0, 0.0];
        f.s_meas = vec![0.0, 0.0, 120.0];
        let sys = build_system_measured(&f, &geom(3)).unwrap();
        assert_eq!(sys.u_vec.as_slice(), &[2500.0, 0.0, 300.0, -120.0]);
        let unm = build_system_unmeasured_offramps(&f, &geom(3), &[0.0; 3]).unwrap();
        assert_eq!(unm.u_vec.as_slice(), &[2500.0, 0.0, 300.0, 0.0]);
    }

    #[test]
    fn zero_exit_rates_match_measured_variant() {
        let mut f = frame(5, 9.0, 450.0, 480.0);
        f.r_a[1] = 40.0;
        f.r_meas[1] = 200.0;
        let measured = build_system_measured(&f, &geom(5)).unwrap();
        let unmeasured = build_system_unmeasured_offramps(&f, &geom(5), &[0.0; 5]).unwrap();
        assert_eq!(measured, unmeasured);
    }

    #[test]
    fn exit_rate_scales_subdiagonal() {
        let n = 5;
        let mut f = frame(n, 9.0, 450.0, 480.0);
        f.q_a_seg[2] = 500.0;
        let ratio = 1.0 / 180.0;
        let mut rates = vec![0.0; n];
        rates[3] = 0.1;
        let sys = build_system_unmeasured_offramps(&f, &geom(n), &rates).unwrap();
        // independent evaluation of the exit-rate denominators and entries
        let g4 = 9.0 + ratio * (0.9 * 500.0 - 450.0);
        assert_relative_eq!(sys.g_vec[3], g4, epsilon = 1e-12);
        assert_relative_eq!(sys.a_mat[(3, 2)], ratio * 0.9 * 500.0 / g4, epsilon = 1e-12);
        assert_relative_eq!(
            sys.a_mat[(3, 3)],
            (9.0 - ratio * 450.0) / g4,
            epsilon = 1e-12
        );
        assert!(
            build_system_unmeasured_offramps(&f, &geom(n), &[0.0, 0.0, 0.0, 1.0, 0.0]).is_err()
        );
        assert!(build_system_unmeasured_offramps(&f, &geom(n), &[0.0; 4]).is_err());
    }

    #[test]
    fn two_state_observability_matrix() {
        let mut sys = build_system_measured(&frame(2, 10.0, 300.0, 300.0), &geom(2)).unwrap();
        sys.a_mat = DMatrix::from_row_slice(2, 2, &[0.7, 0.0, 0.4, 0.6]);
        let o = observability_matrix(&[sys]).unwrap();
        assert_eq!(o, DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 0.4, 0.6]));
        assert_relative_eq!(o.determinant(), -0.4, epsilon = 1e-15);
        assert_relative_eq!(anti_triangular_determinant(&o), -0.4, epsilon = 1e-15);
    }

    #[test]
    fn vanishing_subdiagonal_kills_determinant() {
        let n = 4;
        let mut f = frame(n, 10.0, 300.0, 300.0);
        f.q_a_seg[1] = 0.0;
        let systems: Vec<_> = (0..n - 1)
            .map(|_| build_system_measured(&f, &geom(n)).unwrap())
            .collect();
        let o = observability_matrix(&systems).unwrap();
        assert_eq!(anti_triangular_determinant(&o), 0.0);
        assert!(o.determinant().abs() < 1e-300);
        let report = check_observability(&systems).unwrap();
        assert!(!report.observable);
    }

    #[test]
    fn too_few_systems() {
        let sys = build_system_measured(&frame(4, 10.0, 300.0, 300.0), &geom(4)).unwrap();
        assert!(matches!(
            observability_matrix(&[sys.clone(), sys]),
            Err(ModelError::TooFewSystems { needed: 3, got: 2 })
        ));
        assert!(selector_output(4, 0).is_err());
        assert!(selector_output(4, 5).is_err());
    }

    #[test]
    fn interior_sensor_leaves_downstream_columns_empty() {
        let n = 6;
        let systems: Vec<_> = (0..n - 1)
            .map(|k| {
                build_system_measured(&frame(n, 10.0 + k as f64, 300.0, 320.0), &geom(n)).unwrap()
            })
            .collect();
        for j in 1..n {
            let o = observability_matrix_with_output(&systems, &selector_output(n, j).unwrap())
                .unwrap();
            assert_eq!(zero_columns(&o), ((j + 1)..=n).collect::<Vec<_>>());
        }
        let report = check_observability(&systems).unwrap();
        assert!(report.observable);
        assert!(report.interior_sensor_unobservable);
    }

    #[test]
    fn long_chains_stay_observable_through_small_products() {
        // Twenty weak couplings multiply to ~1e-30 without any single one
        // being degenerate.
        let anti: Vec<f64> = (0..20).map(|j| 0.03f64.powi(j)).collect();
        assert!(anti[19] < OBSERVABILITY_TOL);
        assert!(anti_diagonal_observable(&anti));
        let factors = anti_diagonal_factors(&anti);
        assert_eq!(factors[0], 1.0);
        assert!((factors[7] - 0.03).abs() < 1e-15);

        let mut broken = anti.clone();
        broken[5] = 0.0;
        assert!(!anti_diagonal_observable(&broken));
    }
}
