//! Exact brute-force inference on tiny instances.
//!
//! Everything here enumerates count configurations and sums, with no
//! multinomial shortcuts, so it is an independent check on the closed-form
//! prediction/update/smoothing steps. Two kernel-evaluation modes exist and
//! must not be conflated:
//!
//! * [`EtaMode::MeanField`] feeds the kernel the *expected* proportions
//!   under the current distribution, mirroring the substitution the
//!   approximate filter makes. With a multinomial input, one approximate
//!   step is exact in this mode, which is what the one-step agreement tests
//!   verify.
//! * [`EtaMode::Exact`] evaluates the kernel at the proportions of each
//!   enumerated state inside the sum, giving the true filter; the distance
//!   between the two is the genuine approximation error.

use crate::dist::binomial_log_pmf;
use crate::filter::{ObsSeriesX, ObsSeriesZ};
use crate::model::ModelSpec;
use crate::types::{CountMatrix, CountVector, JointMatrix, Matrix, ProbVector, StochMatrix};
use std::collections::HashMap;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum OracleError {
    #[error("state space too large: {size} states exceeds guard {guard}")]
    TooLarge { size: u128, guard: u128 },
    #[error("state not in enumeration")]
    UnknownState,
}

/// Guard on enumeration sizes.
pub const ENUMERATION_GUARD: u128 = 1_000_000;

/// Exact binomial coefficient `C(n, k)` as a 128-bit integer.
pub fn binomial_coefficient(n: u64, k: u64) -> u128 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut out: u128 = 1;
    for i in 0..k {
        out = out * (n - i) as u128 / (i + 1) as u128;
    }
    out
}

/// Number of length-`m` nonnegative integer vectors summing to `n`:
/// `C(n + m - 1, m - 1)`.
pub fn state_count(m: usize, n: u64) -> u128 {
    binomial_coefficient(n + m as u64 - 1, m as u64 - 1)
}

/// The set of count vectors with `m` compartments summing to `n`, in
/// ascending lexicographic order, with reverse lookup.
#[derive(Debug, Clone)]
pub struct StateEnumeration {
    pub m: usize,
    pub n: u64,
    pub states: Vec<CountVector>,
    index: HashMap<Vec<u64>, usize>,
}

impl StateEnumeration {
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn index_of(&self, state: &[u64]) -> Result<usize, OracleError> {
        self.index
            .get(state)
            .copied()
            .ok_or(OracleError::UnknownState)
    }

    pub fn state(&self, idx: usize) -> &CountVector {
        &self.states[idx]
    }

    /// Expected proportions under a pmf over this enumeration.
    pub fn expected_eta(&self, pmf: &[f64]) -> Vec<f64> {
        let mut eta = vec![0.0; self.m];
        for (p, state) in pmf.iter().zip(&self.states) {
            for (e, &x) in eta.iter_mut().zip(state.as_slice()) {
                *e += p * x as f64 / self.n as f64;
            }
        }
        eta
    }
}

/// Enumerate `S_{m,n}`, guarded against combinatorial blowup.
pub fn enumerate_states(m: usize, n: u64) -> Result<StateEnumeration, OracleError> {
    let size = state_count(m, n);
    if size > ENUMERATION_GUARD {
        return Err(OracleError::TooLarge {
            size,
            guard: ENUMERATION_GUARD,
        });
    }
    let mut states = Vec::with_capacity(size as usize);
    let mut current = vec![0u64; m];
    fill_states(&mut states, &mut current, 0, n);
    let index = states
        .iter()
        .enumerate()
        .map(|(i, s): (usize, &CountVector)| (s.as_slice().to_vec(), i))
        .collect();
    Ok(StateEnumeration {
        m,
        n,
        states,
        index,
    })
}

fn fill_states(out: &mut Vec<CountVector>, current: &mut Vec<u64>, pos: usize, remaining: u64) {
    if pos == current.len() - 1 {
        current[pos] = remaining;
        out.push(CountVector::new(current.clone()));
        return;
    }
    for v in 0..=remaining {
        current[pos] = v;
        fill_states(out, current, pos + 1, remaining - v);
    }
}

/// Enumerate all `m x m` count matrices with total `n` (the state space of
/// the transition chain), lexicographic in row-major order.
pub fn enumerate_count_matrices(m: usize, n: u64) -> Result<Vec<CountMatrix>, OracleError> {
    let cells = enumerate_states(m * m, n)?;
    Ok(cells
        .states
        .into_iter()
        .map(|flat| CountMatrix::from_flat(m, flat.as_slice().to_vec()).expect("square"))
        .collect())
}

/// Multinomial pmf of `Mult(n, probs)` at `counts` in linear space.
pub fn multinomial_pmf(counts: &[u64], probs: &[f64]) -> f64 {
    crate::dist::multinomial_log_pmf(counts, probs).exp()
}

/// Enumerate every length-`parts` composition of `total`.
fn for_each_composition(total: u64, parts: usize, f: &mut dyn FnMut(&[u64])) {
    fn rec(buf: &mut [u64], pos: usize, remaining: u64, f: &mut dyn FnMut(&[u64])) {
        if pos == buf.len() - 1 {
            buf[pos] = remaining;
            f(buf);
            return;
        }
        for v in 0..=remaining {
            buf[pos] = v;
            rec(buf, pos + 1, remaining - v, f);
        }
    }
    let mut buf = vec![0u64; parts];
    rec(&mut buf, 0, total, f);
}

/// Walk every decomposition of `row_totals` into an `m x m` count matrix,
/// calling `visit(column_sums, flat_matrix, probability)` for each, where
/// the probability is the product of independent per-row multinomials under
/// `kernel`.
fn fold_row_decompositions(
    row_totals: &[u64],
    kernel: &StochMatrix,
    visit: &mut dyn FnMut(&[u64], &[u64], f64),
) {
    let m = row_totals.len();

    fn rec(
        row: usize,
        row_totals: &[u64],
        kernel: &StochMatrix,
        cols: &mut Vec<u64>,
        flat: &mut Vec<u64>,
        prob: f64,
        visit: &mut dyn FnMut(&[u64], &[u64], f64),
    ) {
        let m = row_totals.len();
        if row == m {
            visit(cols, flat, prob);
            return;
        }
        let krow = kernel.row(row).to_vec();
        // fresh composition buffer per row so restoration below is sound
        for_each_composition(row_totals[row], m, &mut |comp| {
            let logp = crate::dist::multinomial_log_pmf(comp, &krow);
            if logp == f64::NEG_INFINITY {
                return;
            }
            for j in 0..m {
                flat[row * m + j] = comp[j];
                cols[j] += comp[j];
            }
            rec(row + 1, row_totals, kernel, cols, flat, prob * logp.exp(), visit);
            for j in 0..m {
                cols[j] -= comp[j];
                flat[row * m + j] = 0;
            }
        });
    }

    let mut cols = vec![0u64; m];
    let mut flat = vec![0u64; m * m];
    rec(0, row_totals, kernel, &mut cols, &mut flat, 1.0, visit);
}

/// How the kernel sees population proportions inside exact sums.
#[derive(Debug, Clone, PartialEq)]
pub enum EtaMode {
    /// Kernel evaluated at the proportions of each enumerated state.
    Exact,
    /// Kernel evaluated once at fixed proportions (the mean-field
    /// substitution used by the approximate filter).
    MeanField(ProbVector),
}

/// Exact transition pmf of the count chain out of `x_prev`: sums per-row
/// multinomials over every count-matrix decomposition.
pub fn exact_transition_pmf(
    x_prev: &CountVector,
    spec: &ModelSpec,
    t: u64,
    eta: &EtaMode,
) -> Result<Vec<f64>, OracleError> {
    let n = x_prev.total();
    let states = enumerate_states(x_prev.len(), n)?;
    let eta_vec = match eta {
        EtaMode::Exact => x_prev.proportions(n).expect("totals match"),
        EtaMode::MeanField(pi) => pi.clone(),
    };
    let kernel = spec.kernel.matrix(t, &eta_vec);
    let mut pmf = vec![0.0; states.len()];
    fold_row_decompositions(x_prev.as_slice(), &kernel, &mut |cols, _, p| {
        let idx = states.index_of(cols).expect("column sums stay in S_{m,n}");
        pmf[idx] += p;
    });
    Ok(pmf)
}

/// Exact prediction mixture from a multinomial prior: the pmf of
/// `sum_x Mult(n, pi)(x) M_t(x, E[eta], .)`, all by enumeration.
pub fn exact_predict_x_mixture(
    pi: &ProbVector,
    n: u64,
    spec: &ModelSpec,
    t: u64,
) -> Result<Vec<f64>, OracleError> {
    let m = pi.len();
    let states = enumerate_states(m, n)?;
    // expected proportions computed by enumeration, not assumed
    let prior: Vec<f64> = states
        .states
        .iter()
        .map(|x| multinomial_pmf(x.as_slice(), pi.as_slice()))
        .collect();
    let eta = ProbVector::new(states.expected_eta(&prior)).expect("valid expectation");
    let kernel = spec.kernel.matrix(t, &eta);
    let mut out = vec![0.0; states.len()];
    for (x, w) in states.states.iter().zip(&prior) {
        if *w == 0.0 {
            continue;
        }
        fold_row_decompositions(x.as_slice(), &kernel, &mut |cols, _, p| {
            let idx = states.index_of(cols).expect("in enumeration");
            out[idx] += w * p;
        });
    }
    Ok(out)
}

/// Result of an exact Bayes update over an enumerated space.
#[derive(Debug, Clone)]
pub struct ExactUpdate {
    /// Posterior pmf aligned with the enumeration.
    pub posterior: Vec<f64>,
    /// Posterior mean of each component.
    pub mean: Vec<f64>,
    /// Marginal probability of the observation.
    pub marginal: f64,
}

/// Exact update of a multinomial prior `Mult(n, pi)` by binomially thinned
/// compartment counts.
pub fn exact_update_x(
    pi: &ProbVector,
    n: u64,
    y: &CountVector,
    q: &[f64],
) -> Result<ExactUpdate, OracleError> {
    let m = pi.len();
    let states = enumerate_states(m, n)?;
    let mut posterior = vec![0.0; states.len()];
    let mut marginal = 0.0;
    for (idx, x) in states.states.iter().enumerate() {
        let prior = multinomial_pmf(x.as_slice(), pi.as_slice());
        if prior == 0.0 {
            continue;
        }
        let mut like = 0.0;
        for i in 0..m {
            like += binomial_log_pmf(y.get(i), x.get(i), q[i]);
        }
        let joint = prior * like.exp();
        posterior[idx] = joint;
        marginal += joint;
    }
    let mut mean = vec![0.0; m];
    if marginal > 0.0 {
        for p in posterior.iter_mut() {
            *p /= marginal;
        }
        for (p, x) in posterior.iter().zip(&states.states) {
            for i in 0..m {
                mean[i] += p * x.get(i) as f64;
            }
        }
    }
    Ok(ExactUpdate {
        posterior,
        mean,
        marginal,
    })
}

/// Exact prediction mixture for the transition chain from a multinomial
/// prior `Mult(n, P)` over count matrices: pmf of
/// `sum_Z Mult(n, P)(Z) Mbar_t(Z, E[eta], .)` over count matrices.
pub fn exact_predict_z_mixture(
    p: &JointMatrix,
    n: u64,
    spec: &ModelSpec,
    t: u64,
) -> Result<Vec<f64>, OracleError> {
    let m = p.m();
    let matrices = enumerate_count_matrices(m, n)?;
    let x_states = enumerate_states(m, n)?;

    // prior over Z and, by direct summation, the induced mass and expected
    // proportions of the column-sum states
    let mut mass_by_colsum = vec![0.0; x_states.len()];
    let mut eta = vec![0.0; m];
    for z in &matrices {
        let w = multinomial_pmf(z.as_slice(), p.as_slice());
        if w == 0.0 {
            continue;
        }
        let cols = z.col_sums();
        let idx = x_states.index_of(cols.as_slice()).expect("in S_{m,n}");
        mass_by_colsum[idx] += w;
        for i in 0..m {
            eta[i] += w * cols.get(i) as f64 / n as f64;
        }
    }
    let eta = ProbVector::new(eta).expect("valid expectation");
    let kernel = spec.kernel.matrix(t, &eta);

    // next matrix Z' has row sums equal to the previous column sums; its
    // probability given those row sums is a product of row multinomials
    let mut out = vec![0.0; matrices.len()];
    for (idx, z_next) in matrices.iter().enumerate() {
        let rows = z_next.row_sums();
        let x_idx = x_states.index_of(rows.as_slice()).expect("in S_{m,n}");
        let w = mass_by_colsum[x_idx];
        if w == 0.0 {
            continue;
        }
        let mut logp = 0.0;
        for i in 0..m {
            let row: Vec<u64> = (0..m).map(|j| z_next.get(i, j)).collect();
            logp += crate::dist::multinomial_log_pmf(&row, kernel.row(i));
        }
        out[idx] = w * logp.exp();
    }
    Ok(out)
}

/// Exact update of a multinomial prior `Mult(n, P)` over transition counts
/// by binomially thinned cell observations.
pub fn exact_update_z(
    p: &JointMatrix,
    n: u64,
    y: &CountMatrix,
    q: &Matrix,
) -> Result<ExactUpdate, OracleError> {
    let m = p.m();
    let matrices = enumerate_count_matrices(m, n)?;
    let mut posterior = vec![0.0; matrices.len()];
    let mut marginal = 0.0;
    for (idx, z) in matrices.iter().enumerate() {
        let prior = multinomial_pmf(z.as_slice(), p.as_slice());
        if prior == 0.0 {
            continue;
        }
        let mut like = 0.0;
        for i in 0..m {
            for j in 0..m {
                like += binomial_log_pmf(y.get(i, j), z.get(i, j), q.get(i, j));
            }
        }
        let joint = prior * like.exp();
        posterior[idx] = joint;
        marginal += joint;
    }
    let mut mean = vec![0.0; m * m];
    if marginal > 0.0 {
        for p in posterior.iter_mut() {
            *p /= marginal;
        }
        for (w, z) in posterior.iter().zip(&matrices) {
            for (cell, &count) in z.as_slice().iter().enumerate() {
                mean[cell] += w * count as f64;
            }
        }
    }
    Ok(ExactUpdate {
        posterior,
        mean,
        marginal,
    })
}

/// Exact filter trace over an enumerated state space.
#[derive(Debug, Clone)]
pub struct ExactFilterTrace {
    pub states: StateEnumeration,
    /// `p(x_0)` (the multinomial initial law).
    pub initial: Vec<f64>,
    /// `p(x_t | y_{1:t-1})`, `t = 1..=T` (compartment-count model only).
    pub predicted: Vec<Vec<f64>>,
    /// `p(x_t | y_{1:t})`, `t = 1..=T`.
    pub filtered: Vec<Vec<f64>>,
    /// Per-step `log p(y_t | y_{1:t-1})`.
    pub step_log_marginals: Vec<f64>,
}

impl ExactFilterTrace {
    pub fn log_marginal(&self) -> f64 {
        self.step_log_marginals.iter().sum()
    }

    /// Posterior mean occupancies at step `t` (1-based).
    pub fn filtered_mean(&self, t: usize) -> Vec<f64> {
        let pmf = &self.filtered[t - 1];
        let mut mean = vec![0.0; self.states.m];
        for (w, x) in pmf.iter().zip(&self.states.states) {
            for i in 0..self.states.m {
                mean[i] += w * x.get(i) as f64;
            }
        }
        mean
    }
}

/// Whether eta is frozen at the filtered mean each step or evaluated
/// exactly inside the prediction sum.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EtaPolicy {
    Exact,
    MeanField,
}

/// Exact forward recursion for the compartment-count observation model.
pub fn exact_filter_x(
    spec: &ModelSpec,
    obs: &ObsSeriesX,
    policy: EtaPolicy,
) -> Result<ExactFilterTrace, OracleError> {
    let m = spec.m();
    let n = spec.n;
    let states = enumerate_states(m, n)?;
    let initial: Vec<f64> = states
        .states
        .iter()
        .map(|x| multinomial_pmf(x.as_slice(), spec.pi0.as_slice()))
        .collect();

    let mut current = initial.clone();
    let mut predicted = Vec::with_capacity(obs.len());
    let mut filtered = Vec::with_capacity(obs.len());
    let mut step_log_marginals = Vec::with_capacity(obs.len());

    for t in 1..=obs.len() {
        // prediction
        let mut pred = vec![0.0; states.len()];
        let mean_eta = if policy == EtaPolicy::MeanField {
            Some(ProbVector::new(states.expected_eta(&current)).expect("valid expectation"))
        } else {
            None
        };
        for (x, w) in states.states.iter().zip(&current) {
            if *w == 0.0 {
                continue;
            }
            let eta = match &mean_eta {
                Some(pi) => pi.clone(),
                None => x.proportions(n).expect("latent totals are n"),
            };
            let kernel = spec.kernel.matrix(t as u64, &eta);
            fold_row_decompositions(x.as_slice(), &kernel, &mut |cols, _, p| {
                let idx = states.index_of(cols).expect("in enumeration");
                pred[idx] += w * p;
            });
        }
        predicted.push(pred.clone());

        // update
        let step = obs.step(t);
        let mut filt = pred;
        let mut norm = 0.0;
        for (idx, x) in states.states.iter().enumerate() {
            if filt[idx] == 0.0 {
                continue;
            }
            let mut like = 0.0;
            for i in 0..m {
                like += binomial_log_pmf(step.y.get(i), x.get(i), step.q[i]);
            }
            filt[idx] *= like.exp();
            norm += filt[idx];
        }
        step_log_marginals.push(norm.ln());
        if norm > 0.0 {
            for v in filt.iter_mut() {
                *v /= norm;
            }
        }
        filtered.push(filt.clone());
        current = filt;
    }

    Ok(ExactFilterTrace {
        states,
        initial,
        predicted,
        filtered,
        step_log_marginals,
    })
}

/// Exact forward recursion for the transition-count observation model.
///
/// The recursion is collapsed onto occupancy states: given `x_{t-1}` the
/// law of `Z_t` is known, so `p(x_t, Y_t | x_{t-1})` is the sum over
/// decompositions with the per-cell observation likelihood folded in. The
/// returned `filtered` pmfs are over occupancies `x_t`.
pub fn exact_filter_z(
    spec: &ModelSpec,
    obs: &ObsSeriesZ,
    policy: EtaPolicy,
) -> Result<ExactFilterTrace, OracleError> {
    let m = spec.m();
    let n = spec.n;
    let states = enumerate_states(m, n)?;
    let initial: Vec<f64> = states
        .states
        .iter()
        .map(|x| multinomial_pmf(x.as_slice(), spec.pi0.as_slice()))
        .collect();

    let mut current = initial.clone();
    let mut predicted = Vec::with_capacity(obs.len());
    let mut filtered = Vec::with_capacity(obs.len());
    let mut step_log_marginals = Vec::with_capacity(obs.len());

    for t in 1..=obs.len() {
        let step = obs.step(t);
        let mean_eta = if policy == EtaPolicy::MeanField {
            Some(ProbVector::new(states.expected_eta(&current)).expect("valid expectation"))
        } else {
            None
        };
        let mut pred = vec![0.0; states.len()];
        let mut joint = vec![0.0; states.len()];
        for (x, w) in states.states.iter().zip(&current) {
            if *w == 0.0 {
                continue;
            }
            let eta = match &mean_eta {
                Some(pi) => pi.clone(),
                None => x.proportions(n).expect("latent totals are n"),
            };
            let kernel = spec.kernel.matrix(t as u64, &eta);
            fold_row_decompositions(x.as_slice(), &kernel, &mut |cols, flat, p| {
                let idx = states.index_of(cols).expect("in enumeration");
                pred[idx] += w * p;
                let mut like = 0.0;
                for i in 0..m {
                    for j in 0..m {
                        like +=
                            binomial_log_pmf(step.y.get(i, j), flat[i * m + j], step.q.get(i, j));
                    }
                }
                joint[idx] += w * p * like.exp();
            });
        }
        predicted.push(pred);
        let norm: f64 = joint.iter().sum();
        step_log_marginals.push(norm.ln());
        if norm > 0.0 {
            for v in joint.iter_mut() {
                *v /= norm;
            }
        }
        filtered.push(joint.clone());
        current = joint;
    }

    Ok(ExactFilterTrace {
        states,
        initial,
        predicted,
        filtered,
        step_log_marginals,
    })
}

/// Exact backward smoothing over occupancy states for the compartment-count
/// model, with mean-field kernels frozen at the supplied filtered
/// parameters (`pi_filt[s]` for `s = 0..=T`).
///
/// Returns smoothing pmfs for `s = 0..=T`, starting from the multinomial
/// law `Mult(n, pi_filt[T])` at the final time.
pub fn exact_smooth_x_meanfield(
    pi_filt: &[ProbVector],
    spec: &ModelSpec,
    n: u64,
) -> Result<Vec<Vec<f64>>, OracleError> {
    let t_max = pi_filt.len() - 1;
    let m = pi_filt[0].len();
    let states = enumerate_states(m, n)?;
    let card = states.len();

    let mut smoothed = vec![vec![0.0; card]; t_max + 1];
    smoothed[t_max] = states
        .states
        .iter()
        .map(|x| multinomial_pmf(x.as_slice(), pi_filt[t_max].as_slice()))
        .collect();

    for s in (0..t_max).rev() {
        let filt: Vec<f64> = states
            .states
            .iter()
            .map(|x| multinomial_pmf(x.as_slice(), pi_filt[s].as_slice()))
            .collect();
        let kernel = spec.kernel.matrix(s as u64 + 1, &pi_filt[s]);
        // transition matrix T[x -> x'] under the frozen kernel
        let mut trans = vec![vec![0.0; card]; card];
        for (xi, x) in states.states.iter().enumerate() {
            if filt[xi] == 0.0 {
                continue;
            }
            fold_row_decompositions(x.as_slice(), &kernel, &mut |cols, _, p| {
                let idx = states.index_of(cols).expect("in enumeration");
                trans[xi][idx] += p;
            });
        }
        let mut denom = vec![0.0; card];
        for xi in 0..card {
            for xj in 0..card {
                denom[xj] += filt[xi] * trans[xi][xj];
            }
        }
        let next = smoothed[s + 1].clone();
        let mut cur = vec![0.0; card];
        for xj in 0..card {
            if next[xj] == 0.0 {
                continue;
            }
            assert!(
                denom[xj] > 0.0,
                "smoothing mass on a state unreachable under the filter"
            );
            for xi in 0..card {
                if filt[xi] == 0.0 || trans[xi][xj] == 0.0 {
                    continue;
                }
                cur[xi] += next[xj] * filt[xi] * trans[xi][xj] / denom[xj];
            }
        }
        smoothed[s] = cur;
    }
    Ok(smoothed)
}

/// Exact backward smoothing over transition-count matrices for the
/// transition-count model, with mean-field kernels frozen at the supplied
/// filtered joints (`p_filt[s-1]` holds `P_{s|s}` for `s = 1..=T`).
///
/// Returns smoothing pmfs over count matrices for `s = 1..=T`.
pub fn exact_smooth_z_meanfield(
    p_filt: &[JointMatrix],
    spec: &ModelSpec,
    n: u64,
) -> Result<Vec<Vec<f64>>, OracleError> {
    let t_max = p_filt.len();
    let m = p_filt[0].m();
    let matrices = enumerate_count_matrices(m, n)?;
    let card = matrices.len();

    let pmf_of = |p: &JointMatrix| -> Vec<f64> {
        matrices
            .iter()
            .map(|z| multinomial_pmf(z.as_slice(), p.as_slice()))
            .collect()
    };

    let mut smoothed = vec![vec![0.0; card]; t_max];
    smoothed[t_max - 1] = pmf_of(&p_filt[t_max - 1]);

    for s in (1..t_max).rev() {
        // smoothing index s (1-based time s), stored at s-1
        let filt = pmf_of(&p_filt[s - 1]);
        let pi_filt = p_filt[s - 1].col_marginal().expect("valid joint");
        let kernel = spec.kernel.matrix(s as u64 + 1, &pi_filt);

        // forward transition probability Z_s -> Z_{s+1}: row sums of the
        // next matrix must equal column sums of the current one
        let next_prob = |z_cur: &CountMatrix, z_next: &CountMatrix| -> f64 {
            let cols = z_cur.col_sums();
            let rows = z_next.row_sums();
            if cols != rows {
                return 0.0;
            }
            let mut logp = 0.0;
            for i in 0..m {
                let row: Vec<u64> = (0..m).map(|j| z_next.get(i, j)).collect();
                logp += crate::dist::multinomial_log_pmf(&row, kernel.row(i));
            }
            logp.exp()
        };

        let next = smoothed[s].clone();
        let mut denom = vec![0.0; card];
        for (zi, z_cur) in matrices.iter().enumerate() {
            if filt[zi] == 0.0 {
                continue;
            }
            for (zj, z_next) in matrices.iter().enumerate() {
                if next[zj] == 0.0 {
                    continue;
                }
                denom[zj] += filt[zi] * next_prob(z_cur, z_next);
            }
        }
        let mut cur = vec![0.0; card];
        for (zj, z_next) in matrices.iter().enumerate() {
            if next[zj] == 0.0 {
                continue;
            }
            assert!(
                denom[zj] > 0.0,
                "smoothing mass on a matrix unreachable under the filter"
            );
            for (zi, z_cur) in matrices.iter().enumerate() {
                if filt[zi] == 0.0 {
                    continue;
                }
                let p = next_prob(z_cur, z_next);
                if p > 0.0 {
                    cur[zi] += next[zj] * filt[zi] * p / denom[zj];
                }
            }
        }
        smoothed[s - 1] = cur;
    }
    Ok(smoothed)
}

/// Randomized one-step agreement checks between the closed-form filter
/// steps and the enumeration oracle. Consumed by the test harness and the
/// acceptance suite.
pub mod verify {
    use super::*;
    use crate::filter::{predict_x, predict_z, update_x, update_z, LikelihoodTerms};
    use crate::model::{CustomKernel, KernelSpec, ModelSpec};
    use crate::rng::rng_for_stream;
    use rand::Rng;
    use std::sync::Arc;

    /// Worst absolute discrepancies over all draws of one configuration.
    #[derive(Debug, Clone, Copy, Default)]
    pub struct AgreementReport {
        pub draws: usize,
        pub predict_x_pmf: f64,
        pub update_x_pmf: f64,
        pub update_x_mean: f64,
        pub update_x_marginal: f64,
        pub predict_z_pmf: f64,
        pub update_z_pmf: f64,
        pub update_z_mean: f64,
        pub update_z_marginal: f64,
    }

    impl AgreementReport {
        pub fn worst(&self) -> f64 {
            [
                self.predict_x_pmf,
                self.update_x_pmf,
                self.update_x_mean,
                self.update_x_marginal,
                self.predict_z_pmf,
                self.update_z_pmf,
                self.update_z_mean,
                self.update_z_marginal,
            ]
            .into_iter()
            .fold(0.0, f64::max)
        }

        fn absorb(&mut self, other: &AgreementReport) {
            self.draws += other.draws;
            self.predict_x_pmf = self.predict_x_pmf.max(other.predict_x_pmf);
            self.update_x_pmf = self.update_x_pmf.max(other.update_x_pmf);
            self.update_x_mean = self.update_x_mean.max(other.update_x_mean);
            self.update_x_marginal = self.update_x_marginal.max(other.update_x_marginal);
            self.predict_z_pmf = self.predict_z_pmf.max(other.predict_z_pmf);
            self.update_z_pmf = self.update_z_pmf.max(other.update_z_pmf);
            self.update_z_mean = self.update_z_mean.max(other.update_z_mean);
            self.update_z_marginal = self.update_z_marginal.max(other.update_z_marginal);
        }
    }

    fn dirichlet<R: Rng>(rng: &mut R, k: usize) -> Vec<f64> {
        let mut out: Vec<f64> = (0..k)
            .map(|_| -(1.0 - rng.gen::<f64>()).ln())
            .collect();
        let total: f64 = out.iter().sum();
        for v in out.iter_mut() {
            *v /= total;
        }
        out
    }

    /// Reporting probability with mass at the exact endpoints.
    fn random_q<R: Rng>(rng: &mut R) -> f64 {
        let u: f64 = rng.gen();
        if u < 0.15 {
            0.0
        } else if u < 0.25 {
            1.0
        } else {
            rng.gen()
        }
    }

    fn fixed_kernel_spec(n: u64, pi0: ProbVector, kernel: StochMatrix) -> ModelSpec {
        let m = pi0.len();
        ModelSpec::new(
            n,
            pi0,
            KernelSpec::Custom(CustomKernel {
                m,
                rule: Arc::new(move |_, _| kernel.clone()),
            }),
        )
        .expect("valid test model")
    }

    /// Run `draws` random one-step comparisons at dimension `m`,
    /// population `n`.
    pub fn one_step_agreement(m: usize, n: u64, draws: usize, seed: u64) -> AgreementReport {
        let mut report = AgreementReport {
            draws,
            ..Default::default()
        };
        for draw in 0..draws {
            let mut rng = rng_for_stream(seed, (m as u64) << 32 | n << 16 | draw as u64);

            let kernel =
                StochMatrix::new((0..m).map(|_| dirichlet(&mut rng, m)).collect()).unwrap();
            let pi = ProbVector::new(dirichlet(&mut rng, m)).unwrap();
            let spec = fixed_kernel_spec(n, pi.clone(), kernel.clone());
            let states = enumerate_states(m, n).unwrap();

            // prediction, occupancy form
            let (pred, _) = predict_x(&pi, &spec.kernel, 1).unwrap();
            let mixture = exact_predict_x_mixture(&pi, n, &spec, 1).unwrap();
            for (idx, x) in states.states.iter().enumerate() {
                let approx = multinomial_pmf(x.as_slice(), pred.as_slice());
                report.predict_x_pmf = report.predict_x_pmf.max((approx - mixture[idx]).abs());
            }

            // update, occupancy form: y drawn from the generative model
            let q: Vec<f64> = (0..m).map(|_| random_q(&mut rng)).collect();
            let x_true = crate::dist::sample_multinomial(&mut rng, n, pi.as_slice());
            let y = CountVector::new(
                x_true
                    .iter()
                    .zip(&q)
                    .map(|(&x, &qi)| crate::dist::sample_binomial(&mut rng, x, qi))
                    .collect(),
            );
            let (_, log_w, shifted) =
                update_x(&pi, &y, &q, n, 1, LikelihoodTerms::Complete).unwrap();
            let exact = exact_update_x(&pi, n, &y, &q).unwrap();
            report.update_x_marginal = report
                .update_x_marginal
                .max((log_w.exp() - exact.marginal).abs());
            for i in 0..m {
                report.update_x_mean =
                    report.update_x_mean.max((shifted.mean()[i] - exact.mean[i]).abs());
            }
            for (idx, x) in states.states.iter().enumerate() {
                let approx = shifted_pmf(&shifted, x.as_slice());
                report.update_x_pmf =
                    report.update_x_pmf.max((approx - exact.posterior[idx]).abs());
            }

            // prediction, transition form: prior Mult(n, P)
            let p_prior =
                JointMatrix::new(m, dirichlet(&mut rng, m * m)).unwrap();
            let pi_cols = p_prior.col_marginal().unwrap();
            let p_pred = predict_z(&pi_cols, &spec.kernel, 1).unwrap();
            let matrices = enumerate_count_matrices(m, n).unwrap();
            let mixture_z = exact_predict_z_mixture(&p_prior, n, &spec, 1).unwrap();
            for (idx, z) in matrices.iter().enumerate() {
                let approx = multinomial_pmf(z.as_slice(), p_pred.as_slice());
                report.predict_z_pmf =
                    report.predict_z_pmf.max((approx - mixture_z[idx]).abs());
            }

            // update, transition form
            let mut q_mat = Matrix::zeros(m);
            for i in 0..m {
                for j in 0..m {
                    q_mat.set(i, j, random_q(&mut rng));
                }
            }
            let z_flat = crate::dist::sample_multinomial(&mut rng, n, p_prior.as_slice());
            let mut y_mat = CountMatrix::zeros(m);
            for i in 0..m {
                for j in 0..m {
                    y_mat.set(
                        i,
                        j,
                        crate::dist::sample_binomial(&mut rng, z_flat[i * m + j], q_mat.get(i, j)),
                    );
                }
            }
            let (_, log_wz, shifted_z) =
                update_z(&p_prior, &y_mat, &q_mat, n, 1, LikelihoodTerms::Complete).unwrap();
            let exact_z = exact_update_z(&p_prior, n, &y_mat, &q_mat).unwrap();
            report.update_z_marginal = report
                .update_z_marginal
                .max((log_wz.exp() - exact_z.marginal).abs());
            for cell in 0..m * m {
                report.update_z_mean = report
                    .update_z_mean
                    .max((shifted_z.mean()[cell] - exact_z.mean[cell]).abs());
            }
            for (idx, z) in matrices.iter().enumerate() {
                let approx = shifted_pmf(&shifted_z, z.as_slice());
                report.update_z_pmf =
                    report.update_z_pmf.max((approx - exact_z.posterior[idx]).abs());
            }
        }
        report
    }

    /// Sweep the full grid of configurations, combining worst errors.
    pub fn one_step_agreement_grid(
        ms: &[usize],
        ns: &[u64],
        draws_per_config: usize,
        seed: u64,
    ) -> AgreementReport {
        let mut total = AgreementReport::default();
        for &m in ms {
            for &n in ns {
                let r = one_step_agreement(m, n, draws_per_config, seed);
                total.absorb(&r);
            }
        }
        total
    }

    /// Pmf of `shift + Mult(residual_n, residual_p)` at `value`.
    pub fn shifted_pmf(post: &crate::filter::ShiftedPosterior, value: &[u64]) -> f64 {
        let k = post.shift.len();
        debug_assert_eq!(value.len(), k);
        let mut residual = Vec::with_capacity(k);
        for i in 0..k {
            if value[i] < post.shift[i] {
                return 0.0;
            }
            residual.push(value[i] - post.shift[i]);
        }
        let total: u64 = residual.iter().sum();
        if total != post.residual_n {
            return 0.0;
        }
        match &post.residual_p {
            None => 1.0,
            Some(p) => multinomial_pmf(&residual, p.as_slice()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{CustomKernel, KernelSpec};
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
    fn enumeration_sizes_match_closed_form() {
        let e = enumerate_states(2, 2).unwrap();
        assert_eq!(e.len(), 3);
        assert_eq!(
            e.states.iter().map(|s| s.as_slice().to_vec()).collect::<Vec<_>>(),
            vec![vec![0, 2], vec![1, 1], vec![2, 0]]
        );
        assert_eq!(enumerate_states(3, 2).unwrap().len(), 6);
        assert_eq!(enumerate_states(4, 10).unwrap().len(), 286);
        for (m, n) in [(2usize, 5u64), (3, 4), (4, 6), (5, 3)] {
            assert_eq!(
                enumerate_states(m, n).unwrap().len() as u128,
                state_count(m, n)
            );
        }
    }

    #[test]
    fn enumeration_guard_rejects_blowup() {
        assert!(matches!(
            enumerate_states(10, 100),
            Err(OracleError::TooLarge { .. })
        ));
    }

    #[test]
    fn transition_pmf_identity_kernel_is_point_mass() {
        let spec = custom_spec(4, vec![vec![1.0, 0.0], vec![0.0, 1.0]], vec![0.5, 0.5]);
        let x = CountVector::new(vec![3, 1]);
        let pmf = exact_transition_pmf(&x, &spec, 1, &EtaMode::Exact).unwrap();
        let states = enumerate_states(2, 4).unwrap();
        for (idx, state) in states.states.iter().enumerate() {
            if state.as_slice() == x.as_slice() {
                assert_abs_diff_eq!(pmf[idx], 1.0, epsilon = 1e-12);
            } else {
                assert_eq!(pmf[idx], 0.0);
            }
        }
    }

    #[test]
    fn transition_pmf_normalizes() {
        let spec = custom_spec(5, vec![vec![0.3, 0.7], vec![0.6, 0.4]], vec![0.5, 0.5]);
        let x = CountVector::new(vec![2, 3]);
        let pmf = exact_transition_pmf(&x, &spec, 1, &EtaMode::Exact).unwrap();
        assert_abs_diff_eq!(pmf.iter().sum::<f64>(), 1.0, epsilon = 1e-12);
    }

    /// For m = 2 the next count of compartment 1 is a sum of two binomials,
    /// an independent route to the same pmf.
    #[test]
    fn transition_pmf_matches_binomial_convolution() {
        let k = vec![vec![0.3, 0.7], vec![0.6, 0.4]];
        let spec = custom_spec(6, k.clone(), vec![0.5, 0.5]);
        let x = CountVector::new(vec![4, 2]);
        let pmf = exact_transition_pmf(&x, &spec, 1, &EtaMode::Exact).unwrap();
        let states = enumerate_states(2, 6).unwrap();
        for (idx, state) in states.states.iter().enumerate() {
            let target = state.get(0);
            // a from row 1 (Bin(4, .3)), b from row 2 (Bin(2, .6)), a+b = target
            let mut want = 0.0;
            for a in 0..=target.min(4) {
                let b = target - a;
                if b > 2 {
                    continue;
                }
                want += binomial_log_pmf(a, 4, 0.3).exp() * binomial_log_pmf(b, 2, 0.6).exp();
            }
            assert_abs_diff_eq!(pmf[idx], want, epsilon = 1e-12);
        }
    }

    #[test]
    fn update_x_point_mass_under_identity_and_full_reporting() {
        let pi = ProbVector::new(vec![0.25, 0.75]).unwrap();
        let upd = exact_update_x(&pi, 4, &CountVector::new(vec![1, 3]), &[1.0, 1.0]).unwrap();
        assert_abs_diff_eq!(upd.mean[0], 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(upd.mean[1], 3.0, epsilon = 1e-12);
    }

    #[test]
    fn exact_update_x_matches_hand_computed_example() {
        let pi = ProbVector::new(vec![0.5, 0.5]).unwrap();
        let upd = exact_update_x(&pi, 2, &CountVector::new(vec![1, 0]), &[0.5, 0.0]).unwrap();
        assert_abs_diff_eq!(upd.marginal, 0.375, epsilon = 1e-14);
        assert_abs_diff_eq!(upd.mean[0], 4.0 / 3.0, epsilon = 1e-12);
        assert_abs_diff_eq!(upd.mean[1], 2.0 / 3.0, epsilon = 1e-12);
    }

    #[test]
    fn exact_filter_identity_kernel_full_reporting_is_point_mass() {
        let spec = custom_spec(3, vec![vec![1.0, 0.0], vec![0.0, 1.0]], vec![0.5, 0.5]);
        let obs = crate::filter::ObsSeriesX::new(
            2,
            vec![crate::filter::ObsStepX {
                y: CountVector::new(vec![1, 2]),
                q: vec![1.0, 1.0],
            }],
        )
        .unwrap();
        let trace = exact_filter_x(&spec, &obs, EtaPolicy::Exact).unwrap();
        let mean = trace.filtered_mean(1);
        assert_abs_diff_eq!(mean[0], 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(mean[1], 2.0, epsilon = 1e-12);
    }

    #[test]
    fn exact_filter_z_fully_missing_has_zero_loglik() {
        let spec = custom_spec(4, vec![vec![0.7, 0.3], vec![0.2, 0.8]], vec![0.6, 0.4]);
        let obs = crate::filter::ObsSeriesZ::fully_missing(2, 3);
        let trace = exact_filter_z(&spec, &obs, EtaPolicy::Exact).unwrap();
        assert_abs_diff_eq!(trace.log_marginal(), 0.0, epsilon = 1e-12);
        for pmf in &trace.filtered {
            assert_abs_diff_eq!(pmf.iter().sum::<f64>(), 1.0, epsilon = 1e-12);
        }
    }
}
