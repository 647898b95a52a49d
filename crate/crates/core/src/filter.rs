//! Multinomial filtering and the approximate marginal likelihood.
//!
//! Exact filtering for these models requires summing over every count
//! configuration, which is hopeless beyond toy sizes. Instead the filter
//! propagates a multinomial approximation: prediction maps
//! `Mult(n, pi)` through the kernel evaluated at the mean proportions
//! (exactly, by the prediction identity), and the update conditions on the
//! binomially thinned observation (exactly, giving a shifted multinomial
//! whose mean parameterizes the next multinomial). The per-step observation
//! likelihoods multiply into an approximate marginal likelihood. Costs are
//! independent of the population size `n` apart from log-factorial terms.

use crate::dist::{log_factorial, xlogy};
use crate::model::{KernelSpec, ModelSpec};
use crate::types::{
    CountMatrix, CountVector, JointMatrix, Matrix, ProbVector, StochMatrix, TypeError,
};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FilterError {
    #[error("observation at t={t} exceeds population: total {total} > n {n}")]
    ObservationExceedsPopulation { t: usize, total: u64, n: u64 },
    #[error(
        "degenerate update at t={t}: all predicted mass is reported (1 - pi'q = {residual}) \
         but observations total {total} < n {n}"
    )]
    DegenerateUpdate {
        t: usize,
        residual: f64,
        total: u64,
        n: u64,
    },
    #[error("observation at t={t}, cell {cell:?} is impossible under the model (zero support)")]
    ImpossibleObservation { t: usize, cell: (usize, usize) },
    #[error("invalid observation series: {0}")]
    InvalidObservations(String),
    #[error(transparent)]
    Type(#[from] TypeError),
}

/// One step of compartment-count observations: counts `y` and reporting
/// probabilities `q`, both length `m`. Missing entries are encoded as
/// `y = 0, q = 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct ObsStepX {
    pub y: CountVector,
    pub q: Vec<f64>,
}

/// Observation series for the compartment-count model, aligned `t = 1..=T`.
#[derive(Debug, Clone, PartialEq)]
pub struct ObsSeriesX {
    m: usize,
    steps: Vec<ObsStepX>,
}

impl ObsSeriesX {
    pub fn new(m: usize, steps: Vec<ObsStepX>) -> Result<Self, FilterError> {
        for (idx, step) in steps.iter().enumerate() {
            if step.y.len() != m || step.q.len() != m {
                return Err(FilterError::InvalidObservations(format!(
                    "step {} has wrong dimension",
                    idx + 1
                )));
            }
            for (i, &q) in step.q.iter().enumerate() {
                if !(0.0..=1.0).contains(&q) {
                    return Err(FilterError::InvalidObservations(format!(
                        "q[{}] = {} at step {} outside [0, 1]",
                        i,
                        q,
                        idx + 1
                    )));
                }
            }
        }
        Ok(ObsSeriesX { m, steps })
    }

    /// A fully missing series of length `t_max` (every `y = 0, q = 0`).
    pub fn fully_missing(m: usize, t_max: usize) -> Self {
        ObsSeriesX {
            m,
            steps: (0..t_max)
                .map(|_| ObsStepX {
                    y: CountVector::zeros(m),
                    q: vec![0.0; m],
                })
                .collect(),
        }
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    /// Observation for the step into time `t` (1-based).
    pub fn step(&self, t: usize) -> &ObsStepX {
        &self.steps[t - 1]
    }

    pub fn steps(&self) -> &[ObsStepX] {
        &self.steps
    }
}

/// One step of transition-count observations: counts `Y` and reporting
/// probabilities `Q`, both `m x m`. Missing cells are `y = 0, q = 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct ObsStepZ {
    pub y: CountMatrix,
    pub q: Matrix,
}

/// Observation series for the transition-count model, aligned `t = 1..=T`.
#[derive(Debug, Clone, PartialEq)]
pub struct ObsSeriesZ {
    m: usize,
    steps: Vec<ObsStepZ>,
}

impl ObsSeriesZ {
    pub fn new(m: usize, steps: Vec<ObsStepZ>) -> Result<Self, FilterError> {
        for (idx, step) in steps.iter().enumerate() {
            if step.y.m() != m || step.q.m() != m {
                return Err(FilterError::InvalidObservations(format!(
                    "step {} has wrong dimension",
                    idx + 1
                )));
            }
            for i in 0..m {
                for j in 0..m {
                    let q = step.q.get(i, j);
                    if !(0.0..=1.0).contains(&q) {
                        return Err(FilterError::InvalidObservations(format!(
                            "q[{},{}] = {} at step {} outside [0, 1]",
                            i,
                            j,
                            q,
                            idx + 1
                        )));
                    }
                }
            }
        }
        Ok(ObsSeriesZ { m, steps })
    }

    pub fn fully_missing(m: usize, t_max: usize) -> Self {
        ObsSeriesZ {
            m,
            steps: (0..t_max)
                .map(|_| ObsStepZ {
                    y: CountMatrix::zeros(m),
                    q: Matrix::zeros(m),
                })
                .collect(),
        }
    }

    /// Series where only the listed cells are reported, with constant-in-t
    /// probabilities: `cells = [(i, j, q), ...]` (0-based).
    pub fn from_observed_cells(
        m: usize,
        counts: Vec<CountMatrix>,
        cells: &[(usize, usize, f64)],
    ) -> Result<Self, FilterError> {
        let mut steps = Vec::with_capacity(counts.len());
        for y in counts {
            let mut q = Matrix::zeros(m);
            for &(i, j, prob) in cells {
                q.set(i, j, prob);
            }
            steps.push(ObsStepZ { y, q });
        }
        ObsSeriesZ::new(m, steps)
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn step(&self, t: usize) -> &ObsStepZ {
        &self.steps[t - 1]
    }

    pub fn steps(&self) -> &[ObsStepZ] {
        &self.steps
    }
}

/// Shifted-multinomial representation of a filtered law:
/// `shift + Mult(residual_n, residual_p)`. This is the exact one-step
/// posterior under a multinomial predictive, and is what credible intervals
/// are read from.
#[derive(Debug, Clone, PartialEq)]
pub struct ShiftedPosterior {
    /// Observed shift (per compartment, or per transition cell row-major).
    pub shift: Vec<u64>,
    /// Number of unobserved individuals.
    pub residual_n: u64,
    /// Placement probabilities of the unobserved individuals; `None` only
    /// when `residual_n == 0`.
    pub residual_p: Option<ProbVector>,
}

impl ShiftedPosterior {
    /// Posterior mean per component.
    pub fn mean(&self) -> Vec<f64> {
        let mut out: Vec<f64> = self.shift.iter().map(|&y| y as f64).collect();
        if let Some(p) = &self.residual_p {
            for (j, o) in out.iter_mut().enumerate() {
                *o += self.residual_n as f64 * p.get(j);
            }
        }
        out
    }

    /// Equal-tail credible interval for each component at `level`
    /// (e.g. 0.95), from the exact binomial marginal of the residual.
    pub fn credible_intervals(&self, level: f64) -> Vec<(u64, u64)> {
        let alpha = (1.0 - level) / 2.0;
        (0..self.shift.len())
            .map(|j| {
                let p = self.residual_p.as_ref().map_or(0.0, |p| p.get(j));
                let lo = crate::dist::binomial_quantile(alpha, self.residual_n, p);
                let hi = crate::dist::binomial_quantile(1.0 - alpha, self.residual_n, p);
                (self.shift[j] + lo, self.shift[j] + hi)
            })
            .collect()
    }
}

/// Per-step record of the compartment-count filter.
#[derive(Debug, Clone)]
pub struct FilterStepRecordX {
    pub pi_pred: ProbVector,
    pub pi_filt: ProbVector,
    pub log_w: f64,
    /// Running total of `log w` up to and including this step.
    pub cum_log_lik: f64,
    pub posterior: ShiftedPosterior,
}

/// Filter trace for the compartment-count observation model.
#[derive(Debug, Clone)]
pub struct FilterTraceX {
    pub pi0: ProbVector,
    pub steps: Vec<FilterStepRecordX>,
}

impl FilterTraceX {
    /// Total approximate log marginal likelihood.
    pub fn log_likelihood(&self) -> f64 {
        self.steps.last().map_or(0.0, |s| s.cum_log_lik)
    }

    /// Filtered mean and equal-tail credible intervals at time `t`
    /// (1-based).
    pub fn mean_and_ci(&self, t: usize, level: f64) -> (Vec<f64>, Vec<(u64, u64)>) {
        let post = &self.steps[t - 1].posterior;
        (post.mean(), post.credible_intervals(level))
    }
}

/// Per-step record of the transition-count filter.
#[derive(Debug, Clone)]
pub struct FilterStepRecordZ {
    pub p_pred: JointMatrix,
    pub p_filt: JointMatrix,
    /// Column sums of `p_filt`: the filtered law of the current compartment
    /// occupancies.
    pub pi_filt: ProbVector,
    pub log_w: f64,
    pub cum_log_lik: f64,
    /// Shifted representation over the m^2 transition cells (row-major).
    pub posterior: ShiftedPosterior,
}

impl FilterStepRecordZ {
    /// Shifted posterior over compartment occupancies `x_t` (column sums of
    /// the transition posterior).
    pub fn compartment_posterior(&self) -> ShiftedPosterior {
        let m = self.p_filt.m();
        let mut shift = vec![0u64; m];
        for i in 0..m {
            for j in 0..m {
                shift[j] += self.posterior.shift[i * m + j];
            }
        }
        let residual_p = self.posterior.residual_p.as_ref().map(|p| {
            let mut cols = vec![0.0; m];
            for i in 0..m {
                for j in 0..m {
                    cols[j] += p.get(i * m + j);
                }
            }
            ProbVector::new(cols).expect("column sums of a simplex")
        });
        ShiftedPosterior {
            shift,
            residual_n: self.posterior.residual_n,
            residual_p,
        }
    }
}

/// Filter trace for the transition-count observation model.
#[derive(Debug, Clone)]
pub struct FilterTraceZ {
    pub pi0: ProbVector,
    pub steps: Vec<FilterStepRecordZ>,
}

impl FilterTraceZ {
    pub fn log_likelihood(&self) -> f64 {
        self.steps.last().map_or(0.0, |s| s.cum_log_lik)
    }

    /// Filtered mean and credible intervals for compartment occupancies at
    /// time `t` (1-based).
    pub fn compartment_mean_and_ci(&self, t: usize, level: f64) -> (Vec<f64>, Vec<(u64, u64)>) {
        let post = self.steps[t - 1].compartment_posterior();
        (post.mean(), post.credible_intervals(level))
    }
}

/// Whether log-weights include the parameter-free log-factorial terms.
///
/// `Complete` reports the full observation likelihood. `Relative` omits
/// `log(n!) - sum log(y!) - log((n - sum y)!)`, which cancel in likelihood
/// ratios over model parameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum LikelihoodTerms {
    #[default]
    Complete,
    Relative,
}

/// One prediction step: `pi_pred = (pi^T K_{t,pi})^T`. Also returns the
/// evaluated kernel since smoothing reuses it.
pub fn predict_x(
    pi: &ProbVector,
    kernel: &KernelSpec,
    t: u64,
) -> Result<(ProbVector, StochMatrix), FilterError> {
    let mat = kernel.matrix(t, pi);
    let pred = mat.propagate(pi)?;
    Ok((pred, mat))
}

/// One update step for compartment-count observations.
///
/// Returns the filtered parameter, the log observation weight and the
/// shifted-multinomial posterior.
pub fn update_x(
    pi_pred: &ProbVector,
    y: &CountVector,
    q: &[f64],
    n: u64,
    t: usize,
    terms: LikelihoodTerms,
) -> Result<(ProbVector, f64, ShiftedPosterior), FilterError> {
    let m = pi_pred.len();
    let total = y.total();
    if total > n {
        return Err(FilterError::ObservationExceedsPopulation { t, total, n });
    }
    // a positive count needs positive predicted mass and positive reporting
    for i in 0..m {
        if y.get(i) > 0 && (q[i] == 0.0 || pi_pred.get(i) == 0.0) {
            return Err(FilterError::ImpossibleObservation { t, cell: (i, 0) });
        }
    }

    let reported: f64 = (0..m).map(|i| pi_pred.get(i) * q[i]).sum();
    let residual_mass = 1.0 - reported;
    let residual_n = n - total;

    if residual_mass <= 0.0 {
        if residual_n == 0 {
            // everything observed: exact point mass at y / n
            let pi_filt =
                ProbVector::new(y.as_slice().iter().map(|&yi| yi as f64 / n as f64).collect())?;
            let log_w = point_mass_log_weight(pi_pred.as_slice(), y.as_slice(), q, n, terms);
            let posterior = ShiftedPosterior {
                shift: y.as_slice().to_vec(),
                residual_n: 0,
                residual_p: None,
            };
            return Ok((pi_filt, log_w, posterior));
        }
        return Err(FilterError::DegenerateUpdate {
            t,
            residual: residual_mass,
            total,
            n,
        });
    }

    let residual_p = ProbVector::new(
        (0..m)
            .map(|i| pi_pred.get(i) * (1.0 - q[i]) / residual_mass)
            .collect(),
    )?;

    let frac_obs = total as f64 / n as f64;
    let pi_filt = ProbVector::new(
        (0..m)
            .map(|i| y.get(i) as f64 / n as f64 + (1.0 - frac_obs) * residual_p.get(i))
            .collect(),
    )?;

    let mut log_w = 0.0;
    for i in 0..m {
        let yi = y.get(i) as f64;
        log_w += xlogy(yi, pi_pred.get(i)) + xlogy(yi, q[i]);
    }
    log_w += xlogy(residual_n as f64, residual_mass);
    if terms == LikelihoodTerms::Complete {
        log_w += log_factorial(n) - log_factorial(residual_n);
        for i in 0..m {
            log_w -= log_factorial(y.get(i));
        }
    }

    let posterior = ShiftedPosterior {
        shift: y.as_slice().to_vec(),
        residual_n,
        residual_p: Some(residual_p),
    };
    Ok((pi_filt, log_w, posterior))
}

/// Log weight when every individual is observed (`residual_n == 0`); the
/// residual terms vanish under the `0 log 0` convention.
fn point_mass_log_weight(
    p_pred: &[f64],
    y: &[u64],
    q: &[f64],
    n: u64,
    terms: LikelihoodTerms,
) -> f64 {
    let mut log_w = 0.0;
    for i in 0..p_pred.len() {
        let yi = y[i] as f64;
        log_w += xlogy(yi, p_pred[i]) + xlogy(yi, q[i]);
    }
    if terms == LikelihoodTerms::Complete {
        log_w += log_factorial(n);
        for &yi in y {
            log_w -= log_factorial(yi);
        }
    }
    log_w
}

/// Run the compartment-count filter over a whole observation series.
pub fn filter_x(
    spec: &ModelSpec,
    obs: &ObsSeriesX,
    terms: LikelihoodTerms,
) -> Result<FilterTraceX, FilterError> {
    if obs.m() != spec.m() {
        return Err(FilterError::InvalidObservations(format!(
            "observation dimension {} does not match model m {}",
            obs.m(),
            spec.m()
        )));
    }
    let mut pi = spec.pi0.clone();
    let mut steps = Vec::with_capacity(obs.len());
    let mut cum = 0.0;
    for t in 1..=obs.len() {
        let (pi_pred, _) = predict_x(&pi, &spec.kernel, t as u64)?;
        let step = obs.step(t);
        let (pi_filt, log_w, posterior) = update_x(&pi_pred, &step.y, &step.q, spec.n, t, terms)?;
        cum += log_w;
        steps.push(FilterStepRecordX {
            pi_pred,
            pi_filt: pi_filt.clone(),
            log_w,
            cum_log_lik: cum,
            posterior,
        });
        pi = pi_filt;
    }
    Ok(FilterTraceX {
        pi0: spec.pi0.clone(),
        steps,
    })
}

/// One prediction step for the transition model:
/// `P_pred = (pi (x) 1) o K_{t,pi}` (row `i` holds `pi_i * K[i, .]`).
pub fn predict_z(pi: &ProbVector, kernel: &KernelSpec, t: u64) -> Result<JointMatrix, FilterError> {
    predict_z_matrix(pi, &kernel.matrix(t, pi))
}

/// Joint predictive from an already-evaluated transition matrix.
pub fn predict_z_matrix(pi: &ProbVector, mat: &StochMatrix) -> Result<JointMatrix, FilterError> {
    let m = pi.len();
    let mut flat = Vec::with_capacity(m * m);
    for i in 0..m {
        let w = pi.get(i);
        for j in 0..m {
            flat.push(w * mat.get(i, j));
        }
    }
    Ok(JointMatrix::new(m, flat)?)
}

/// One update step for transition-count observations.
pub fn update_z(
    p_pred: &JointMatrix,
    y: &CountMatrix,
    q: &Matrix,
    n: u64,
    t: usize,
    terms: LikelihoodTerms,
) -> Result<(JointMatrix, f64, ShiftedPosterior), FilterError> {
    let m = p_pred.m();
    let total = y.total();
    if total > n {
        return Err(FilterError::ObservationExceedsPopulation { t, total, n });
    }
    for i in 0..m {
        for j in 0..m {
            if y.get(i, j) > 0 && (q.get(i, j) == 0.0 || p_pred.get(i, j) == 0.0) {
                return Err(FilterError::ImpossibleObservation { t, cell: (i, j) });
            }
        }
    }

    let reported: f64 = (0..m)
        .map(|i| (0..m).map(|j| p_pred.get(i, j) * q.get(i, j)).sum::<f64>())
        .sum();
    let residual_mass = 1.0 - reported;
    let residual_n = n - total;

    if residual_mass <= 0.0 {
        if residual_n == 0 {
            let flat: Vec<f64> = y.as_slice().iter().map(|&v| v as f64 / n as f64).collect();
            let p_filt = JointMatrix::new(m, flat)?;
            let log_w = point_mass_log_weight(
                p_pred.as_slice(),
                y.as_slice(),
                q.as_slice(),
                n,
                terms,
            );
            let posterior = ShiftedPosterior {
                shift: y.as_slice().to_vec(),
                residual_n: 0,
                residual_p: None,
            };
            return Ok((p_filt, log_w, posterior));
        }
        return Err(FilterError::DegenerateUpdate {
            t,
            residual: residual_mass,
            total,
            n,
        });
    }

    let mut residual_flat = Vec::with_capacity(m * m);
    for i in 0..m {
        for j in 0..m {
            residual_flat.push(p_pred.get(i, j) * (1.0 - q.get(i, j)) / residual_mass);
        }
    }
    let residual_p = ProbVector::new(residual_flat)?;

    let frac_obs = total as f64 / n as f64;
    let mut filt_flat = Vec::with_capacity(m * m);
    for (idx, &yij) in y.as_slice().iter().enumerate() {
        filt_flat.push(yij as f64 / n as f64 + (1.0 - frac_obs) * residual_p.get(idx));
    }
    let p_filt = JointMatrix::new(m, filt_flat)?;

    let mut log_w = 0.0;
    for i in 0..m {
        for j in 0..m {
            let yij = y.get(i, j) as f64;
            log_w += xlogy(yij, p_pred.get(i, j)) + xlogy(yij, q.get(i, j));
        }
    }
    log_w += xlogy(residual_n as f64, residual_mass);
    if terms == LikelihoodTerms::Complete {
        log_w += log_factorial(n) - log_factorial(residual_n);
        for &yij in y.as_slice() {
            log_w -= log_factorial(yij);
        }
    }

    let posterior = ShiftedPosterior {
        shift: y.as_slice().to_vec(),
        residual_n,
        residual_p: Some(residual_p),
    };
    Ok((p_filt, log_w, posterior))
}

/// Run the transition-count filter over a whole observation series.
pub fn filter_z(
    spec: &ModelSpec,
    obs: &ObsSeriesZ,
    terms: LikelihoodTerms,
) -> Result<FilterTraceZ, FilterError> {
    if obs.m() != spec.m() {
        return Err(FilterError::InvalidObservations(format!(
            "observation dimension {} does not match model m {}",
            obs.m(),
            spec.m()
        )));
    }
    let mut pi = spec.pi0.clone();
    let mut steps = Vec::with_capacity(obs.len());
    let mut cum = 0.0;
    for t in 1..=obs.len() {
        let p_pred = predict_z(&pi, &spec.kernel, t as u64)?;
        let step = obs.step(t);
        let (p_filt, log_w, posterior) = update_z(&p_pred, &step.y, &step.q, spec.n, t, terms)?;
        let pi_filt = p_filt.col_marginal()?;
        cum += log_w;
        steps.push(FilterStepRecordZ {
            p_pred,
            p_filt,
            pi_filt: pi_filt.clone(),
            log_w,
            cum_log_lik: cum,
            posterior,
        });
        pi = pi_filt;
    }
    Ok(FilterTraceZ {
        pi0: spec.pi0.clone(),
        steps,
    })
}
