//! CSV schemas for observations, trajectories, traces and summaries.
//!
//! All files are plain CSV with headers, 1-based time and compartment
//! indices. Observation files are sparse: a row appears only for an
//! observed cell, and every absent `(t, i[, j])` combination is missing
//! data (count zero, reporting probability zero).

use crate::filter::{
    FilterError, FilterTraceX, FilterTraceZ, ObsSeriesX, ObsSeriesZ, ObsStepX, ObsStepZ,
};
use crate::simulate::LatentTrajectory;
use crate::smooth::{SmoothTraceX, SmoothTraceZ};
use crate::types::{CountMatrix, CountVector, Matrix};
use std::io::{Read, Write};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum IoError {
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("record {record}: {msg}")]
    Parse { record: usize, msg: String },
    #[error(transparent)]
    Filter(#[from] FilterError),
}

fn parse<T: std::str::FromStr>(field: &str, record: usize, what: &str) -> Result<T, IoError> {
    field.trim().parse().map_err(|_| IoError::Parse {
        record,
        msg: format!("cannot parse {what} from '{field}'"),
    })
}

/// Write occupancy counts: columns `t,i,x` over `t = 0..=T`.
pub fn write_occupancies<W: Write>(w: W, traj: &LatentTrajectory) -> Result<(), IoError> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["t", "i", "x"])?;
    for (t, x) in traj.x.iter().enumerate() {
        for i in 0..x.len() {
            out.write_record(&[t.to_string(), (i + 1).to_string(), x.get(i).to_string()])?;
        }
    }
    out.flush()?;
    Ok(())
}

/// Write transition counts: columns `t,i,j,z` over `t = 1..=T`, nonzero
/// cells only.
pub fn write_transitions<W: Write>(w: W, traj: &LatentTrajectory) -> Result<(), IoError> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["t", "i", "j", "z"])?;
    for (idx, z) in traj.z.iter().enumerate() {
        let t = idx + 1;
        for i in 0..z.m() {
            for j in 0..z.m() {
                if z.get(i, j) > 0 {
                    out.write_record(&[
                        t.to_string(),
                        (i + 1).to_string(),
                        (j + 1).to_string(),
                        z.get(i, j).to_string(),
                    ])?;
                }
            }
        }
    }
    out.flush()?;
    Ok(())
}

/// Write a compartment-count observation series: columns `t,i,y,q`,
/// observed cells only.
pub fn write_obs_x<W: Write>(w: W, obs: &ObsSeriesX) -> Result<(), IoError> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["t", "i", "y", "q"])?;
    for t in 1..=obs.len() {
        let step = obs.step(t);
        for i in 0..obs.m() {
            if step.q[i] > 0.0 || step.y.get(i) > 0 {
                out.write_record(&[
                    t.to_string(),
                    (i + 1).to_string(),
                    step.y.get(i).to_string(),
                    step.q[i].to_string(),
                ])?;
            }
        }
    }
    out.flush()?;
    Ok(())
}

/// Read a compartment-count observation series written by [`write_obs_x`].
///
/// `t_max` extends the horizon beyond the last recorded row (rows never
/// shrink it); absent cells are missing data.
pub fn read_obs_x<R: Read>(r: R, m: usize, t_max: Option<usize>) -> Result<ObsSeriesX, IoError> {
    let mut rdr = csv::Reader::from_reader(r);
    let mut rows: Vec<(usize, usize, u64, f64)> = Vec::new();
    let mut horizon = t_max.unwrap_or(0);
    for (num, record) in rdr.records().enumerate() {
        let record = record?;
        let t: usize = parse(&record[0], num, "time index")?;
        let i: usize = parse(&record[1], num, "compartment")?;
        let y: u64 = parse(&record[2], num, "count")?;
        let q: f64 = parse(&record[3], num, "reporting probability")?;
        if t < 1 || i < 1 || i > m {
            return Err(IoError::Parse {
                record: num,
                msg: format!("index out of range: t={t}, i={i} (m={m})"),
            });
        }
        horizon = horizon.max(t);
        rows.push((t, i - 1, y, q));
    }
    let mut steps: Vec<ObsStepX> = (0..horizon)
        .map(|_| ObsStepX {
            y: CountVector::zeros(m),
            q: vec![0.0; m],
        })
        .collect();
    for (t, i, y, q) in rows {
        let step = &mut steps[t - 1];
        let mut counts = step.y.as_slice().to_vec();
        counts[i] = y;
        step.y = CountVector::new(counts);
        step.q[i] = q;
    }
    Ok(ObsSeriesX::new(m, steps)?)
}

/// Write a transition-count observation series: columns `t,i,j,y,q`,
/// observed cells only.
pub fn write_obs_z<W: Write>(w: W, obs: &ObsSeriesZ) -> Result<(), IoError> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["t", "i", "j", "y", "q"])?;
    for t in 1..=obs.len() {
        let step = obs.step(t);
        for i in 0..obs.m() {
            for j in 0..obs.m() {
                if step.q.get(i, j) > 0.0 || step.y.get(i, j) > 0 {
                    out.write_record(&[
                        t.to_string(),
                        (i + 1).to_string(),
                        (j + 1).to_string(),
                        step.y.get(i, j).to_string(),
                        step.q.get(i, j).to_string(),
                    ])?;
                }
            }
        }
    }
    out.flush()?;
    Ok(())
}

/// Read a transition-count observation series written by [`write_obs_z`].
pub fn read_obs_z<R: Read>(r: R, m: usize, t_max: Option<usize>) -> Result<ObsSeriesZ, IoError> {
    let mut rdr = csv::Reader::from_reader(r);
    let mut rows: Vec<(usize, usize, usize, u64, f64)> = Vec::new();
    let mut horizon = t_max.unwrap_or(0);
    for (num, record) in rdr.records().enumerate() {
        let record = record?;
        let t: usize = parse(&record[0], num, "time index")?;
        let i: usize = parse(&record[1], num, "source compartment")?;
        let j: usize = parse(&record[2], num, "destination compartment")?;
        let y: u64 = parse(&record[3], num, "count")?;
        let q: f64 = parse(&record[4], num, "reporting probability")?;
        if t < 1 || i < 1 || i > m || j < 1 || j > m {
            return Err(IoError::Parse {
                record: num,
                msg: format!("index out of range: t={t}, i={i}, j={j} (m={m})"),
            });
        }
        horizon = horizon.max(t);
        rows.push((t, i - 1, j - 1, y, q));
    }
    let mut steps: Vec<ObsStepZ> = (0..horizon)
        .map(|_| ObsStepZ {
            y: CountMatrix::zeros(m),
            q: Matrix::zeros(m),
        })
        .collect();
    for (t, i, j, y, q) in rows {
        let step = &mut steps[t - 1];
        step.y.set(i, j, y);
        step.q.set(i, j, q);
    }
    Ok(ObsSeriesZ::new(m, steps)?)
}

/// Write a compartment-count filter trace: columns
/// `t,i,pi_pred,pi_filt,log_w`.
pub fn write_filter_trace_x<W: Write>(w: W, trace: &FilterTraceX) -> Result<(), IoError> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["t", "i", "pi_pred", "pi_filt", "log_w"])?;
    for (idx, step) in trace.steps.iter().enumerate() {
        let t = idx + 1;
        for i in 0..step.pi_filt.len() {
            out.write_record(&[
                t.to_string(),
                (i + 1).to_string(),
                step.pi_pred.get(i).to_string(),
                step.pi_filt.get(i).to_string(),
                step.log_w.to_string(),
            ])?;
        }
    }
    out.flush()?;
    Ok(())
}

/// Write a transition-count filter trace: columns
/// `t,i,j,p_pred,p_filt,log_w`.
pub fn write_filter_trace_z<W: Write>(w: W, trace: &FilterTraceZ) -> Result<(), IoError> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["t", "i", "j", "p_pred", "p_filt", "log_w"])?;
    for (idx, step) in trace.steps.iter().enumerate() {
        let t = idx + 1;
        let m = step.p_filt.m();
        for i in 0..m {
            for j in 0..m {
                out.write_record(&[
                    t.to_string(),
                    (i + 1).to_string(),
                    (j + 1).to_string(),
                    step.p_pred.get(i, j).to_string(),
                    step.p_filt.get(i, j).to_string(),
                    step.log_w.to_string(),
                ])?;
            }
        }
    }
    out.flush()?;
    Ok(())
}

/// Write filtering and smoothing marginals in the filter-trace schema with
/// a `smoothed` flag: filter rows carry `smoothed=0`; smoothing rows carry
/// `smoothed=1` with the smoothed marginal in the `pi_filt` column and
/// empty prediction/weight fields.
pub fn write_smooth_trace_x<W: Write>(
    w: W,
    trace: &FilterTraceX,
    smooth: &SmoothTraceX,
) -> Result<(), IoError> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["t", "i", "pi_pred", "pi_filt", "log_w", "smoothed"])?;
    for (idx, step) in trace.steps.iter().enumerate() {
        let t = idx + 1;
        for i in 0..step.pi_filt.len() {
            out.write_record(&[
                t.to_string(),
                (i + 1).to_string(),
                step.pi_pred.get(i).to_string(),
                step.pi_filt.get(i).to_string(),
                step.log_w.to_string(),
                "0".to_string(),
            ])?;
        }
    }
    for (s, pi) in smooth.pi_smooth.iter().enumerate() {
        for i in 0..pi.len() {
            out.write_record(&[
                s.to_string(),
                (i + 1).to_string(),
                String::new(),
                pi.get(i).to_string(),
                String::new(),
                "1".to_string(),
            ])?;
        }
    }
    out.flush()?;
    Ok(())
}

/// Transition-count analogue of [`write_smooth_trace_x`].
pub fn write_smooth_trace_z<W: Write>(
    w: W,
    trace: &FilterTraceZ,
    smooth: &SmoothTraceZ,
) -> Result<(), IoError> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["t", "i", "j", "p_pred", "p_filt", "log_w", "smoothed"])?;
    for (idx, step) in trace.steps.iter().enumerate() {
        let t = idx + 1;
        let m = step.p_filt.m();
        for i in 0..m {
            for j in 0..m {
                out.write_record(&[
                    t.to_string(),
                    (i + 1).to_string(),
                    (j + 1).to_string(),
                    step.p_pred.get(i, j).to_string(),
                    step.p_filt.get(i, j).to_string(),
                    step.log_w.to_string(),
                    "0".to_string(),
                ])?;
            }
        }
    }
    for s in 1..=smooth.len() {
        let p = smooth.joint(s);
        for i in 0..p.m() {
            for j in 0..p.m() {
                out.write_record(&[
                    s.to_string(),
                    (i + 1).to_string(),
                    (j + 1).to_string(),
                    String::new(),
                    p.get(i, j).to_string(),
                    String::new(),
                    "1".to_string(),
                ])?;
            }
        }
    }
    out.flush()?;
    Ok(())
}

/// Write MCMC output: one row per retained sample, one column per
/// parameter, plus the derived reproduction number and the log posterior.
pub fn write_mcmc_samples<W: Write>(
    w: W,
    param_names: &[&str],
    samples: &[Vec<f64>],
    r0: &[f64],
    log_posterior: &[f64],
) -> Result<(), IoError> {
    let mut out = csv::Writer::from_writer(w);
    let mut header = vec!["sample".to_string()];
    header.extend(param_names.iter().map(|s| s.to_string()));
    header.push("r0".to_string());
    header.push("log_posterior".to_string());
    out.write_record(&header)?;
    for (idx, sample) in samples.iter().enumerate() {
        let mut row = vec![idx.to_string()];
        row.extend(sample.iter().map(|v| v.to_string()));
        row.push(r0[idx].to_string());
        row.push(log_posterior[idx].to_string());
        out.write_record(&row)?;
    }
    out.flush()?;
    Ok(())
}

/// Write per-time posterior summaries of named series: columns
/// `series,t,mean,q025,q25,q75,q975`.
pub fn write_series_summaries<W: Write>(
    w: W,
    series: &[(&str, &crate::smc::SeriesSummary)],
) -> Result<(), IoError> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["series", "t", "mean", "q025", "q25", "q75", "q975"])?;
    for (name, summary) in series {
        for s in 0..summary.len() {
            out.write_record(&[
                name.to_string(),
                (s + 1).to_string(),
                summary.mean[s].to_string(),
                summary.q025[s].to_string(),
                summary.q25[s].to_string(),
                summary.q75[s].to_string(),
                summary.q975[s].to_string(),
            ])?;
        }
    }
    out.flush()?;
    Ok(())
}

/// One bias/coverage cell of the calibration experiment.
#[derive(Debug, Clone, PartialEq)]
pub struct BiasCoverageRow {
    pub n: u64,
    pub t: usize,
    pub compartment: usize,
    pub bias: f64,
    pub coverage: f64,
}

/// Write bias/coverage results: columns `n,t,i,bias,coverage`.
pub fn write_bias_coverage<W: Write>(w: W, rows: &[BiasCoverageRow]) -> Result<(), IoError> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["n", "t", "i", "bias", "coverage"])?;
    for row in rows {
        out.write_record(&[
            row.n.to_string(),
            row.t.to_string(),
            (row.compartment + 1).to_string(),
            row.bias.to_string(),
            row.coverage.to_string(),
        ])?;
    }
    out.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::CountMatrix;

    #[test]
    fn obs_z_round_trip_preserves_series() {
        let mut y1 = CountMatrix::zeros(4);
        y1.set(1, 2, 7);
        let y2 = CountMatrix::zeros(4);
        let mut y3 = CountMatrix::zeros(4);
        y3.set(2, 3, 2);
        let obs = ObsSeriesZ::from_observed_cells(
            4,
            vec![y1, y2, y3],
            &[(1, 2, 0.9), (2, 3, 0.75)],
        )
        .unwrap();
        let mut buf = Vec::new();
        write_obs_z(&mut buf, &obs).unwrap();
        let back = read_obs_z(buf.as_slice(), 4, None).unwrap();
        assert_eq!(back, obs);
    }

    #[test]
    fn obs_x_round_trip_with_missing_tail() {
        let obs = ObsSeriesX::new(
            2,
            vec![
                ObsStepX {
                    y: CountVector::new(vec![3, 0]),
                    q: vec![0.5, 0.0],
                },
                ObsStepX {
                    y: CountVector::zeros(2),
                    q: vec![0.0, 0.0],
                },
            ],
        )
        .unwrap();
        let mut buf = Vec::new();
        write_obs_x(&mut buf, &obs).unwrap();
        // the fully missing step 2 writes no rows; the horizon hint
        // restores it
        let back = read_obs_x(buf.as_slice(), 2, Some(2)).unwrap();
        assert_eq!(back, obs);
        let truncated = read_obs_x(buf.as_slice(), 2, None).unwrap();
        assert_eq!(truncated.len(), 1);
    }

    #[test]
    fn obs_reader_rejects_out_of_range_indices() {
        let data = "t,i,j,y,q\n1,5,2,3,0.5\n";
        let err = read_obs_z(data.as_bytes(), 4, None).unwrap_err();
        assert!(matches!(err, IoError::Parse { .. }));
    }

    #[test]
    fn obs_reader_rejects_garbage_fields() {
        let data = "t,i,y,q\n1,1,notanumber,0.5\n";
        let err = read_obs_x(data.as_bytes(), 2, None).unwrap_err();
        assert!(matches!(err, IoError::Parse { .. }));
    }
}
