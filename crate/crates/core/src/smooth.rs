//! Backward smoothing recursions.
//!
//! Given a completed filter trace, a backward pass produces multinomial
//! approximations to the smoothing laws: row-stochastic backward kernels
//! are assembled from the filtered parameters, then the smoothed parameters
//! are pulled back from the final time. The final-time smoothing parameter
//! is the filtering parameter itself, bit for bit.

use crate::filter::{predict_x, FilterTraceX, FilterTraceZ};
use crate::model::ModelSpec;
use crate::types::{JointMatrix, Matrix, ProbVector, TypeError};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SmoothError {
    #[error(
        "zero denominator in backward kernel at s={s}, state {state}: the filter assigns no \
         mass but the smoother moves mass there"
    )]
    ZeroDenominator { s: usize, state: usize },
    #[error(transparent)]
    Type(#[from] TypeError),
    #[error(transparent)]
    Filter(#[from] crate::filter::FilterError),
}

/// Smoothing trace for the compartment-count model: marginals
/// `pi_smooth[s]` for `s = 0..=T` and backward kernels `l[s]` for
/// `s = 0..T`. Backward-kernel rows are stochastic wherever defined; a row
/// is left all-zero when the filter puts no mass on its state (such rows
/// never receive smoothing mass).
#[derive(Debug, Clone)]
pub struct SmoothTraceX {
    pub pi_smooth: Vec<ProbVector>,
    pub backward: Vec<Matrix>,
}

impl SmoothTraceX {
    /// Smoothed marginal at time `s` (0-based; `s = t` is the filter
    /// anchor).
    pub fn marginal(&self, s: usize) -> &ProbVector {
        &self.pi_smooth[s]
    }

    /// Smoothed joint over `(x_{s-1}, x_s)` transition pairs,
    /// `s = 1..=T`: entry `(i, j)` couples the backward kernel into time
    /// `s - 1` with the smoothed marginal at `s`.
    pub fn joint(&self, s: usize) -> Result<JointMatrix, TypeError> {
        let m = self.pi_smooth[0].len();
        let l = &self.backward[s - 1];
        let pi = &self.pi_smooth[s];
        let mut flat = Vec::with_capacity(m * m);
        for i in 0..m {
            for j in 0..m {
                flat.push(pi.get(j) * l.get(j, i));
            }
        }
        JointMatrix::new(m, flat)
    }
}

/// Backward smoothing for the compartment-count model.
///
/// For `s = t-1 .. 0` the backward kernel has entries
/// `l[i][j] = pi_filt[s][j] * k[j][i] / (pi_filt[s]^T K)[i]`, and
/// `pi_smooth[s] = (pi_smooth[s+1]^T L)^T`. Rows of `L` with a zero
/// denominator are only tolerated when no smoothing mass flows into them.
pub fn smooth_x(trace: &FilterTraceX, spec: &ModelSpec) -> Result<SmoothTraceX, SmoothError> {
    let t_max = trace.steps.len();
    let m = spec.m();
    let mut pi_smooth = vec![None; t_max + 1];
    let mut backward = Vec::with_capacity(t_max);
    let filt = |s: usize| -> &ProbVector {
        if s == 0 {
            &trace.pi0
        } else {
            &trace.steps[s - 1].pi_filt
        }
    };
    pi_smooth[t_max] = Some(filt(t_max).clone());

    for s in (0..t_max).rev() {
        let pi_s = filt(s);
        // same product the filter used for the prediction into s + 1
        let (pred, kernel) = predict_x(pi_s, &spec.kernel, s as u64 + 1)?;
        let next = pi_smooth[s + 1].take().expect("filled by recursion");

        let mut rows = Vec::with_capacity(m);
        for i in 0..m {
            if pred.get(i) <= 0.0 {
                if next.get(i) > 0.0 {
                    return Err(SmoothError::ZeroDenominator { s, state: i });
                }
                rows.push(vec![0.0; m]);
                continue;
            }
            let row: Vec<f64> = (0..m)
                .map(|j| pi_s.get(j) * kernel.get(j, i) / pred.get(i))
                .collect();
            rows.push(row);
        }

        // pull the smoothed marginal backward; all-zero rows carry no mass
        let mut out = vec![0.0; m];
        for i in 0..m {
            let w = next.get(i);
            if w == 0.0 {
                continue;
            }
            for j in 0..m {
                out[j] += w * rows[i][j];
            }
        }
        pi_smooth[s] = Some(ProbVector::new(out)?);
        pi_smooth[s + 1] = Some(next);
        backward.push(Matrix::from_rows(rows)?);
    }
    backward.reverse();
    Ok(SmoothTraceX {
        pi_smooth: pi_smooth.into_iter().map(|p| p.expect("filled")).collect(),
        backward,
    })
}

/// Smoothing trace for the transition-count model: smoothed joints
/// `p_smooth[s-1]` and marginals over `x_s` for `s = 1..=T`, plus backward
/// kernels for `s = 1..T`.
#[derive(Debug, Clone)]
pub struct SmoothTraceZ {
    /// `P_{s|t}` for `s = 1..=T` (stored at `s - 1`).
    pub p_smooth: Vec<JointMatrix>,
    /// Smoothed law of `x_s`: row sums of `P_{s+1|t}` for `s < T`, column
    /// sums of `P_{t|t}` at `s = T`.
    pub pi_smooth: Vec<ProbVector>,
    /// Backward kernels `Lbar_s` for `s = 1..T` (stored at `s - 1`);
    /// rows are stochastic wherever defined, all-zero where unreachable.
    pub backward: Vec<Matrix>,
}

impl SmoothTraceZ {
    pub fn len(&self) -> usize {
        self.p_smooth.len()
    }

    pub fn is_empty(&self) -> bool {
        self.p_smooth.is_empty()
    }

    /// `P_{s|t}` for 1-based `s`.
    pub fn joint(&self, s: usize) -> &JointMatrix {
        &self.p_smooth[s - 1]
    }

    /// Expected transition counts `n * P_{s|t}` for 1-based `s`, the
    /// sufficient statistics consumed by EM and posterior plots.
    pub fn expected_transitions(&self, s: usize, n: u64) -> Vec<f64> {
        self.joint(s)
            .as_slice()
            .iter()
            .map(|&p| p * n as f64)
            .collect()
    }
}

/// Backward smoothing for the transition-count model.
///
/// For `s = t-1 .. 1`: the smoothed occupancy is `pi = P_{s+1|t} 1`, the
/// backward kernel is `lbar[i][j] = p_filt[s][j][i] / pi_filt[s][i]`, and
/// `P_{s|t}[i][j] = pi[j] * lbar[j][i]`. Zero filtered occupancies are only
/// tolerated where no smoothed mass arrives.
pub fn smooth_z(trace: &FilterTraceZ, _spec: &ModelSpec) -> Result<SmoothTraceZ, SmoothError> {
    let t_max = trace.steps.len();
    assert!(t_max >= 1, "smoothing needs at least one filter step");
    let m = trace.steps[0].p_filt.m();

    let mut p_smooth = vec![None; t_max];
    let mut pi_smooth = vec![None; t_max];
    let mut backward: Vec<Matrix> = Vec::with_capacity(t_max.saturating_sub(1));

    p_smooth[t_max - 1] = Some(trace.steps[t_max - 1].p_filt.clone());
    pi_smooth[t_max - 1] = Some(trace.steps[t_max - 1].pi_filt.clone());

    for s in (1..t_max).rev() {
        let next = p_smooth[s].take().expect("filled by recursion");
        // smoothed law of x_s: where the individuals counted at s+1 came from
        let pi_st = ProbVector::new(next.row_sums())?;
        let p_ss = &trace.steps[s - 1].p_filt;
        let pi_ss = &trace.steps[s - 1].pi_filt;

        let mut lbar_rows = Vec::with_capacity(m);
        for i in 0..m {
            if pi_ss.get(i) <= 0.0 {
                if pi_st.get(i) > 0.0 {
                    return Err(SmoothError::ZeroDenominator { s, state: i });
                }
                lbar_rows.push(vec![0.0; m]);
                continue;
            }
            lbar_rows.push((0..m).map(|j| p_ss.get(j, i) / pi_ss.get(i)).collect());
        }

        let mut flat = Vec::with_capacity(m * m);
        for i in 0..m {
            for j in 0..m {
                flat.push(pi_st.get(j) * lbar_rows[j][i]);
            }
        }
        p_smooth[s] = Some(next);
        p_smooth[s - 1] = Some(JointMatrix::new(m, flat)?);
        pi_smooth[s - 1] = Some(pi_st);
        backward.push(Matrix::from_rows(lbar_rows)?);
    }
    backward.reverse();
    Ok(SmoothTraceZ {
        p_smooth: p_smooth.into_iter().map(|p| p.expect("filled")).collect(),
        pi_smooth: pi_smooth.into_iter().map(|p| p.expect("filled")).collect(),
        backward,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::filter::{filter_x, filter_z, LikelihoodTerms, ObsSeriesX, ObsSeriesZ, ObsStepX};
    use crate::model::{CustomKernel, KernelSpec};
    use crate::types::{CountVector, StochMatrix};
    use approx::assert_abs_diff_eq;
    use std::sync::Arc;

    fn custom_spec(n: u64, k: Vec<Vec<f64>>, pi0: Vec<f64>) -> ModelSpec {
        let mat = StochMatrix::new(k).unwrap();
        let m = pi0.len();
        ModelSpec::new(
            n,
            ProbVector::new(pi0).unwrap(),
            KernelSpec::Custom(CustomKernel {
                m,
                rule: Arc::new(move |_, _| mat.clone()),
            }),
        )
        .unwrap()
    }

    #[test]
    fn identity_kernel_no_observations_keeps_initial_law() {
        let spec = custom_spec(20, vec![vec![1.0, 0.0], vec![0.0, 1.0]], vec![0.3, 0.7]);
        let trace = filter_x(&spec, &ObsSeriesX::fully_missing(2, 6), LikelihoodTerms::Complete)
            .unwrap();
        let smooth = smooth_x(&trace, &spec).unwrap();
        for s in 0..=6 {
            assert_abs_diff_eq!(smooth.marginal(s).get(0), 0.3, epsilon = 1e-13);
        }
    }

    #[test]
    fn anchor_matches_filter_bit_for_bit() {
        let spec = custom_spec(30, vec![vec![0.8, 0.2], vec![0.1, 0.9]], vec![0.9, 0.1]);
        let mut steps = Vec::new();
        for t in 0..5usize {
            let y = if t == 4 {
                CountVector::new(vec![20, 10])
            } else {
                CountVector::zeros(2)
            };
            let q = if t == 4 { vec![1.0, 1.0] } else { vec![0.0, 0.0] };
            steps.push(ObsStepX { y, q });
        }
        let obs = ObsSeriesX::new(2, steps).unwrap();
        let trace = filter_x(&spec, &obs, LikelihoodTerms::Complete).unwrap();
        let smooth = smooth_x(&trace, &spec).unwrap();
        assert_eq!(
            smooth.marginal(5).as_slice(),
            trace.steps[4].pi_filt.as_slice()
        );
        // conditioning on the final observation moves earlier marginals
        let unsmoothed = trace.steps[2].pi_filt.get(0);
        let smoothed = smooth.marginal(3).get(0);
        assert!((unsmoothed - smoothed).abs() > 1e-6);
    }

    #[test]
    fn no_observations_smoothing_equals_filtering_z() {
        let spec = custom_spec(50, vec![vec![0.7, 0.3], vec![0.2, 0.8]], vec![0.6, 0.4]);
        let trace = filter_z(&spec, &ObsSeriesZ::fully_missing(2, 8), LikelihoodTerms::Complete)
            .unwrap();
        let smooth = smooth_z(&trace, &spec).unwrap();
        for s in 1..=8 {
            let filt = &trace.steps[s - 1].p_filt;
            let sm = smooth.joint(s);
            for idx in 0..4 {
                assert_abs_diff_eq!(
                    sm.as_slice()[idx],
                    filt.as_slice()[idx],
                    epsilon = 1e-12
                );
            }
        }
    }

    #[test]
    fn smoothed_transition_mean_normalizes_to_population() {
        let spec = custom_spec(40, vec![vec![0.7, 0.3], vec![0.2, 0.8]], vec![0.6, 0.4]);
        let trace = filter_z(&spec, &ObsSeriesZ::fully_missing(2, 4), LikelihoodTerms::Complete)
            .unwrap();
        let smooth = smooth_z(&trace, &spec).unwrap();
        for s in 1..=4 {
            let mean = smooth.expected_transitions(s, 40);
            assert_abs_diff_eq!(mean.iter().sum::<f64>(), 40.0, epsilon = 1e-10);
        }
    }

    #[test]
    fn diagonal_joint_has_zero_offdiagonal_expected_counts() {
        let spec = custom_spec(10, vec![vec![1.0, 0.0], vec![0.0, 1.0]], vec![0.5, 0.5]);
        let trace = filter_z(&spec, &ObsSeriesZ::fully_missing(2, 2), LikelihoodTerms::Complete)
            .unwrap();
        let smooth = smooth_z(&trace, &spec).unwrap();
        let mean = smooth.expected_transitions(1, 10);
        assert_eq!(mean[1], 0.0);
        assert_eq!(mean[2], 0.0);
    }

    #[test]
    fn backward_kernels_are_row_stochastic() {
        let spec = custom_spec(25, vec![vec![0.5, 0.5], vec![0.3, 0.7]], vec![0.2, 0.8]);
        let trace = filter_x(&spec, &ObsSeriesX::fully_missing(2, 5), LikelihoodTerms::Complete)
            .unwrap();
        let smooth = smooth_x(&trace, &spec).unwrap();
        for l in &smooth.backward {
            for i in 0..2 {
                assert_abs_diff_eq!(l.row(i).iter().sum::<f64>(), 1.0, epsilon = 1e-12);
            }
        }
    }
}
