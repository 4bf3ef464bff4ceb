//! CSV schemas for trajectories, metrics, sweeps and observability reports.
//!
//! Floats are written in shortest round-trip decimal form, so reading a
//! file back reproduces every value bit for bit.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use super::experiment::{Metrics, ObservabilityRow, RunResult, SweepPoint, Truth};
use super::HarnessError;

/// One `(step, segment)` row of an estimation run. `innovation` is empty
/// on the final step, which has no filter update.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRow {
    pub step: usize,
    pub segment: usize,
    pub rho: f64,
    pub rho_a: f64,
    pub v: f64,
    pub q: f64,
    pub q_a: f64,
    pub rho_hat: f64,
    pub q_hat: f64,
    pub p_bar_hat: f64,
    pub innovation: Option<f64>,
}

/// Ground truth only, as written by `simulate`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthRow {
    pub step: usize,
    pub segment: usize,
    pub rho: f64,
    pub rho_a: f64,
    pub v: f64,
    pub q: f64,
    pub q_a: f64,
}

pub fn trajectory_rows(result: &RunResult) -> Vec<TrajectoryRow> {
    let truth = &result.truth;
    let est = &result.estimates;
    let mut rows = Vec::with_capacity(truth.states.len() * truth.geom.n_segments);
    for (k, s) in truth.states.iter().enumerate() {
        for i in 0..s.len() {
            rows.push(TrajectoryRow {
                step: k,
                segment: i + 1,
                rho: s.rho[i],
                rho_a: s.rho_a[i],
                v: s.v[i],
                q: s.q[i],
                q_a: s.q_a[i],
                rho_hat: est.rho_hat[k][i],
                q_hat: est.q_hat[k][i],
                p_bar_hat: est.x_hat[k][i],
                innovation: est.innovation.get(k).copied(),
            });
        }
    }
    rows
}

pub fn truth_rows(truth: &Truth) -> Vec<TruthRow> {
    truth
        .states
        .iter()
        .enumerate()
        .flat_map(|(k, s)| {
            (0..s.len()).map(move |i| TruthRow {
                step: k,
                segment: i + 1,
                rho: s.rho[i],
                rho_a: s.rho_a[i],
                v: s.v[i],
                q: s.q[i],
                q_a: s.q_a[i],
            })
        })
        .collect()
}

pub fn write_rows<W: Write, T: Serialize>(writer: W, rows: &[T]) -> Result<(), HarnessError> {
    let mut w = csv::Writer::from_writer(writer);
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_rows<R: Read, T: for<'de> Deserialize<'de>>(reader: R) -> Result<Vec<T>, HarnessError> {
    let mut r = csv::Reader::from_reader(reader);
    r.deserialize()
        .map(|row| row.map_err(HarnessError::from))
        .collect()
}

pub fn write_metrics<W: Write>(writer: W, metrics: &Metrics) -> Result<(), HarnessError> {
    write_rows(writer, std::slice::from_ref(metrics))
}

pub fn write_sweep<W: Write>(writer: W, points: &[SweepPoint]) -> Result<(), HarnessError> {
    write_rows(writer, points)
}

pub fn write_observability<W: Write>(
    writer: W,
    rows: &[ObservabilityRow],
) -> Result<(), HarnessError> {
    write_rows(writer, rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn trajectory_row_round_trip() {
        let rows = vec![
            TrajectoryRow {
                step: 0,
                segment: 1,
                rho: 0.1 + 0.2,
                rho_a: 1.0 / 3.0,
                v: 118.00000000000001,
                q: 1e-300,
                q_a: 2.5e17,
                rho_hat: std::f64::consts::PI,
                q_hat: -0.0,
                p_bar_hat: 5.000000000000001,
                innovation: Some(-1.2345678901234567e-5),
            },
            TrajectoryRow {
                step: 1080,
                segment: 20,
                innovation: None,
                ..rows_template()
            },
        ];
        let mut buf = Vec::new();
        write_rows(&mut buf, &rows).unwrap();
        let back: Vec<TrajectoryRow> = read_rows(buf.as_slice()).unwrap();
        assert_eq!(back, rows);
        let text = String::from_utf8(buf).unwrap();
        assert!(
            text.starts_with("step,segment,rho,rho_a,v,q,q_a,rho_hat,q_hat,p_bar_hat,innovation\n")
        );
    }

    fn rows_template() -> TrajectoryRow {
        TrajectoryRow {
            step: 0,
            segment: 1,
            rho: 1.0,
            rho_a: 1.0,
            v: 1.0,
            q: 1.0,
            q_a: 1.0,
            rho_hat: 1.0,
            q_hat: 1.0,
            p_bar_hat: 1.0,
            innovation: None,
        }
    }

    #[test]
    fn sweep_rows_have_header_and_one_line_each() {
        let pts = vec![
            SweepPoint {
                sigma: 0.01,
                p_r: 0.05,
            },
            SweepPoint {
                sigma: 1.0,
                p_r: 0.04,
            },
        ];
        let mut buf = Vec::new();
        write_sweep(&mut buf, &pts).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 3);
        assert_eq!(text.lines().next(), Some("sigma,p_r"));
    }
}
