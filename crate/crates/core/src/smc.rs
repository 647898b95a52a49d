//! Particle filter over a time-varying transmission rate, with
//! ancestor-traced backward sampling and derived posterior summaries.
//!
//! Each particle carries a transmission rate evolving as a log-normal
//! random walk plus the multinomial filter state run under that rate. The
//! weights are the per-step approximate observation likelihoods, so the
//! whole construction drops into a standard bootstrap filter. A backward
//! pass selects a terminal particle by weight, walks its ancestry, and
//! samples transition-count matrices from the backward kernels along the
//! way.

use crate::dist::sample_multinomial;
use crate::filter::{predict_z_matrix, update_z, FilterError, LikelihoodTerms, ObsSeriesZ};
use crate::model::ModelSpec;
use crate::rng::rng_from_seed;
use crate::types::{CountMatrix, JointMatrix, ProbVector, TypeError};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SmcError {
    #[error("every particle assigns zero probability to the observation at t={t}")]
    AllWeightsZero { t: usize },
    #[error(
        "zero denominator in backward kernel at s={s}, compartment {compartment}: smoothed \
         mass arrives at a state the filter rules out"
    )]
    ZeroDenominator { s: usize, compartment: usize },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Filter(#[from] FilterError),
    #[error(transparent)]
    Type(#[from] TypeError),
}

/// Resampling scheme. The default draws ancestors independently from the
/// normalized weights; systematic resampling is available as a documented
/// lower-variance extension.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Resampling {
    #[default]
    Multinomial,
    Systematic,
}

/// Particle filter configuration.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SmcConfig {
    pub n_part: usize,
    /// Scale of the log-normal random walk on the transmission rate.
    pub sigma_v: f64,
    /// Common initial transmission rate of every particle.
    pub beta0: f64,
    pub seed: u64,
    #[serde(default)]
    pub resampling: Resampling,
}

impl SmcConfig {
    fn validate(&self) -> Result<(), SmcError> {
        if self.n_part < 1 {
            return Err(SmcError::InvalidConfig("need at least one particle".into()));
        }
        if self.sigma_v < 0.0 {
            return Err(SmcError::InvalidConfig("sigma_v must be >= 0".into()));
        }
        if self.beta0 < 0.0 {
            return Err(SmcError::InvalidConfig("beta0 must be >= 0".into()));
        }
        Ok(())
    }
}

/// Pre-resampling particle states and bookkeeping for one time step.
#[derive(Debug, Clone)]
pub struct ParticleStep {
    pub beta: Vec<f64>,
    pub pi_filt: Vec<ProbVector>,
    pub p_filt: Vec<JointMatrix>,
    pub log_w: Vec<f64>,
    /// Normalized weights, summing to one.
    pub weights: Vec<f64>,
    /// `ancestors[i]` is the pre-resampling index that survived into
    /// post-resampling slot `i`.
    pub ancestors: Vec<usize>,
    /// Effective sample size `1 / sum w^2`.
    pub ess: f64,
}

/// The full filter history needed for backward sampling.
#[derive(Debug, Clone)]
pub struct ParticleEnsemble {
    pub steps: Vec<ParticleStep>,
    pub n_part: usize,
    pub n: u64,
    /// Log of the particle-filter marginal likelihood estimate,
    /// `sum_s log mean_i w_s^(i)`.
    pub log_likelihood: f64,
}

impl ParticleEnsemble {
    pub fn horizon(&self) -> usize {
        self.steps.len()
    }

    pub fn ess_trace(&self) -> Vec<f64> {
        self.steps.iter().map(|s| s.ess).collect()
    }
}

/// Run the particle filter (forward pass).
pub fn smc_filter(
    spec: &ModelSpec,
    obs: &ObsSeriesZ,
    config: &SmcConfig,
) -> Result<ParticleEnsemble, SmcError> {
    config.validate()?;
    let n_part = config.n_part;
    let m = spec.m();
    let mut rng = rng_from_seed(config.seed);
    let walk = Normal::new(0.0, config.sigma_v)
        .map_err(|e| SmcError::InvalidConfig(format!("bad random-walk scale: {e}")))?;

    let mut beta_cur = vec![config.beta0; n_part];
    let mut pi_cur: Vec<ProbVector> = vec![spec.pi0.clone(); n_part];
    let mut steps = Vec::with_capacity(obs.len());
    let mut log_likelihood = 0.0;

    for t in 1..=obs.len() {
        let step_obs = obs.step(t);
        let mut beta = Vec::with_capacity(n_part);
        let mut pi_filt = Vec::with_capacity(n_part);
        let mut p_filt = Vec::with_capacity(n_part);
        let mut log_w = Vec::with_capacity(n_part);

        for i in 0..n_part {
            let b = beta_cur[i] * walk.sample(&mut rng).exp();
            let kernel = spec.kernel.matrix_with_rate(t as u64, &pi_cur[i], b)?;
            let p_pred = predict_z_matrix(&pi_cur[i], &kernel)?;
            match update_z(
                &p_pred,
                &step_obs.y,
                &step_obs.q,
                spec.n,
                t,
                LikelihoodTerms::Complete,
            ) {
                Ok((pf, lw, _)) => {
                    pi_filt.push(pf.col_marginal()?);
                    p_filt.push(pf);
                    log_w.push(lw);
                }
                // a particle whose predictive rules out the observation
                // dies (zero weight) rather than aborting the ensemble
                Err(FilterError::ImpossibleObservation { .. }) => {
                    pi_filt.push(pi_cur[i].clone());
                    p_filt.push(p_pred);
                    log_w.push(f64::NEG_INFINITY);
                }
                Err(e) => return Err(e.into()),
            }
            beta.push(b);
        }

        let max_lw = log_w.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if max_lw == f64::NEG_INFINITY {
            return Err(SmcError::AllWeightsZero { t });
        }
        let unnorm: Vec<f64> = log_w.iter().map(|&lw| (lw - max_lw).exp()).collect();
        let total: f64 = unnorm.iter().sum();
        let weights: Vec<f64> = unnorm.iter().map(|u| u / total).collect();
        log_likelihood += max_lw + (total / n_part as f64).ln();
        let ess = 1.0 / weights.iter().map(|w| w * w).sum::<f64>();

        let ancestors = match config.resampling {
            Resampling::Multinomial => multinomial_ancestors(&weights, n_part, &mut rng),
            Resampling::Systematic => systematic_ancestors(&weights, n_part, &mut rng),
        };
        beta_cur = ancestors.iter().map(|&a| beta[a]).collect();
        pi_cur = ancestors.iter().map(|&a| pi_filt[a].clone()).collect();

        steps.push(ParticleStep {
            beta,
            pi_filt,
            p_filt,
            log_w,
            weights,
            ancestors,
            ess,
        });
        let _ = m;
    }

    Ok(ParticleEnsemble {
        steps,
        n_part,
        n: spec.n,
        log_likelihood,
    })
}

fn multinomial_ancestors<R: Rng>(weights: &[f64], n_part: usize, rng: &mut R) -> Vec<usize> {
    let mut cumulative = Vec::with_capacity(weights.len());
    let mut acc = 0.0;
    for w in weights {
        acc += w;
        cumulative.push(acc);
    }
    (0..n_part)
        .map(|_| {
            let u: f64 = rng.gen::<f64>() * acc;
            cumulative.partition_point(|&c| c < u).min(weights.len() - 1)
        })
        .collect()
}

fn systematic_ancestors<R: Rng>(weights: &[f64], n_part: usize, rng: &mut R) -> Vec<usize> {
    let start: f64 = rng.gen::<f64>() / n_part as f64;
    let mut out = Vec::with_capacity(n_part);
    let mut acc = weights[0];
    let mut idx = 0usize;
    for k in 0..n_part {
        let u = start + k as f64 / n_part as f64;
        while u > acc && idx + 1 < weights.len() {
            idx += 1;
            acc += weights[idx];
        }
        out.push(idx);
    }
    out
}

/// One backward-sampled smoothing draw.
#[derive(Debug, Clone)]
pub struct SmoothedDraw {
    /// Transmission-rate path of the traced particle, `s = 1..=T`.
    pub beta: Vec<f64>,
    /// Smoothed joint parameters along the trace, `s = 1..=T`.
    pub p_smooth: Vec<JointMatrix>,
    /// Sampled transition counts, `s = 1..=T`; totals are always `n`.
    pub z: Vec<CountMatrix>,
}

/// Trace ancestors back from a weight-sampled terminal particle and sample
/// the transition-count path.
pub fn backward_sample<R: Rng>(
    ensemble: &ParticleEnsemble,
    rng: &mut R,
) -> Result<SmoothedDraw, SmcError> {
    let t_max = ensemble.horizon();
    assert!(t_max >= 1, "cannot smooth an empty ensemble");
    let n = ensemble.n;
    let m = ensemble.steps[0].p_filt[0].m();

    let last = &ensemble.steps[t_max - 1];
    let mut zeta = sample_index(&last.weights, rng);

    let mut beta_rev = vec![last.beta[zeta]];
    let mut p_rev = vec![last.p_filt[zeta].clone()];
    let mut z_rev = Vec::with_capacity(t_max);
    let z_t = sample_multinomial(rng, n, last.p_filt[zeta].as_slice());
    z_rev.push(CountMatrix::from_flat(m, z_t)?);

    for s in (1..t_max).rev() {
        // smoothed occupancy law of x_s comes from the joint one step ahead
        let pi_st = ProbVector::new(p_rev.last().unwrap().row_sums())?;
        let step = &ensemble.steps[s - 1];
        zeta = step.ancestors[zeta];
        let p_ss = &step.p_filt[zeta];
        let pi_ss = p_ss.col_marginal()?;

        // backward kernel rows; row i is only needed when mass arrives
        let mut lbar = vec![vec![0.0; m]; m];
        for i in 0..m {
            if pi_ss.get(i) <= 0.0 {
                if pi_st.get(i) > 0.0 {
                    return Err(SmcError::ZeroDenominator { s, compartment: i });
                }
                continue;
            }
            for j in 0..m {
                lbar[i][j] = p_ss.get(j, i) / pi_ss.get(i);
            }
        }

        // column i of Z_s places the individuals that occupy compartment i
        // at time s (the row sums of Z_{s+1})
        let incoming = z_rev.last().unwrap().row_sums();
        let mut z_s = CountMatrix::zeros(m);
        for i in 0..m {
            let count = incoming.get(i);
            if count == 0 {
                continue;
            }
            if pi_ss.get(i) <= 0.0 {
                return Err(SmcError::ZeroDenominator { s, compartment: i });
            }
            let col = sample_multinomial(rng, count, &lbar[i]);
            for (j, &v) in col.iter().enumerate() {
                z_s.set(j, i, v);
            }
        }

        let mut flat = Vec::with_capacity(m * m);
        for i in 0..m {
            for j in 0..m {
                flat.push(pi_st.get(j) * lbar[j][i]);
            }
        }
        beta_rev.push(step.beta[zeta]);
        p_rev.push(JointMatrix::new(m, flat)?);
        z_rev.push(z_s);
    }

    beta_rev.reverse();
    p_rev.reverse();
    z_rev.reverse();
    Ok(SmoothedDraw {
        beta: beta_rev,
        p_smooth: p_rev,
        z: z_rev,
    })
}

fn sample_index<R: Rng>(weights: &[f64], rng: &mut R) -> usize {
    let total: f64 = weights.iter().sum();
    let u: f64 = rng.gen::<f64>() * total;
    let mut acc = 0.0;
    for (i, w) in weights.iter().enumerate() {
        acc += w;
        if u <= acc {
            return i;
        }
    }
    weights.len() - 1
}

/// Inputs for the derived posterior summaries.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DerivedConfig {
    /// Recovery rate used for the reproduction number `R_s = beta_s / gamma`.
    pub gamma: f64,
    /// Confirmation rate of the onset-to-confirmation delay chain.
    pub kappa: f64,
    /// Reporting probability of symptom onsets in the primary location.
    pub q_onset_local: f64,
    /// Reporting probability of symptom onsets among travellers.
    pub q_onset_travel: f64,
    /// Transition cell counted as local onsets (0-based), default the
    /// two-stage travel model's exposed-to-infective cell.
    pub onset_local_cell: (usize, usize),
    /// Transition cell counted as traveller onsets.
    pub onset_travel_cell: (usize, usize),
    pub seed: u64,
}

impl DerivedConfig {
    pub fn for_covid(gamma: f64, kappa: f64, q_w: f64, q_t: f64, seed: u64) -> Self {
        DerivedConfig {
            gamma,
            kappa,
            q_onset_local: q_w,
            q_onset_travel: q_t,
            onset_local_cell: crate::model::CovidKernel::ONSET_WUHAN,
            onset_travel_cell: crate::model::CovidKernel::ONSET_TRAVEL,
            seed,
        }
    }
}

/// Per-time posterior summary of one derived series.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SeriesSummary {
    pub mean: Vec<f64>,
    pub q025: Vec<f64>,
    pub q25: Vec<f64>,
    pub q75: Vec<f64>,
    pub q975: Vec<f64>,
}

impl SeriesSummary {
    fn from_draws(values: &[Vec<f64>]) -> SeriesSummary {
        let t_max = values.first().map_or(0, Vec::len);
        let k = values.len();
        let mut mean = vec![0.0; t_max];
        let mut q025 = vec![0.0; t_max];
        let mut q25 = vec![0.0; t_max];
        let mut q75 = vec![0.0; t_max];
        let mut q975 = vec![0.0; t_max];
        let mut buf = vec![0.0; k];
        for s in 0..t_max {
            for (b, v) in buf.iter_mut().zip(values) {
                *b = v[s];
            }
            buf.sort_by(f64::total_cmp);
            mean[s] = buf.iter().sum::<f64>() / k as f64;
            q025[s] = empirical_quantile(&buf, 0.025);
            q25[s] = empirical_quantile(&buf, 0.25);
            q75[s] = empirical_quantile(&buf, 0.75);
            q975[s] = empirical_quantile(&buf, 0.975);
        }
        SeriesSummary {
            mean,
            q025,
            q25,
            q75,
            q975,
        }
    }

    pub fn len(&self) -> usize {
        self.mean.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mean.is_empty()
    }
}

/// Nearest-rank empirical quantile of a sorted slice.
fn empirical_quantile(sorted: &[f64], q: f64) -> f64 {
    let k = sorted.len();
    let rank = ((q * k as f64).ceil() as usize).clamp(1, k);
    sorted[rank - 1]
}

/// Posterior summaries of the derived series.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DerivedQuantities {
    /// Time-varying reproduction number `R_s = beta_s / gamma`.
    pub reproduction: SeriesSummary,
    /// Predictive reported onsets at the local cell.
    pub onset_local: SeriesSummary,
    /// Predictive reported onsets at the traveller cell.
    pub onset_travel: SeriesSummary,
    /// New confirmations by date, local.
    pub confirmed_local: SeriesSummary,
    /// New confirmations by date, traveller.
    pub confirmed_travel: SeriesSummary,
}

/// Compute the five derived series over a collection of smoothed draws.
///
/// Per draw: the reproduction number is deterministic in the sampled
/// transmission path; predictive onsets draw the true count from the
/// smoothed joint and thin it by the reporting probability; confirmations
/// run a two-stage binomial delay chain seeded by the sampled onset
/// transition counts.
pub fn derived_quantities(
    draws: &[SmoothedDraw],
    n: u64,
    config: &DerivedConfig,
) -> Result<DerivedQuantities, SmcError> {
    if draws.is_empty() {
        return Err(SmcError::InvalidConfig("no smoothed draws supplied".into()));
    }
    let t_max = draws[0].beta.len();
    let mut rng = rng_from_seed(config.seed);

    let mut r = Vec::with_capacity(draws.len());
    let mut onset_l = Vec::with_capacity(draws.len());
    let mut onset_t = Vec::with_capacity(draws.len());
    let mut conf_l = Vec::with_capacity(draws.len());
    let mut conf_t = Vec::with_capacity(draws.len());

    let p_onset_delay = 1.0 - (-(-config.gamma * config.kappa).exp()).exp();
    let p_confirm = 1.0 - (-config.kappa).exp();

    for draw in draws {
        assert_eq!(draw.beta.len(), t_max, "ragged draw collection");
        r.push(draw.beta.iter().map(|b| b / config.gamma).collect());

        let mut onset_row_l = Vec::with_capacity(t_max);
        let mut onset_row_t = Vec::with_capacity(t_max);
        let mut conf_row_l = Vec::with_capacity(t_max);
        let mut conf_row_t = Vec::with_capacity(t_max);
        let mut pending_l = 0u64; // symptomatic, not yet confirmed
        let mut pending_t = 0u64;
        for s in 0..t_max {
            let p = &draw.p_smooth[s];
            for (cell, q, out) in [
                (config.onset_local_cell, config.q_onset_local, &mut onset_row_l),
                (
                    config.onset_travel_cell,
                    config.q_onset_travel,
                    &mut onset_row_t,
                ),
            ] {
                let z_hat =
                    crate::dist::sample_binomial(&mut rng, n, p.get(cell.0, cell.1).clamp(0.0, 1.0));
                out.push(crate::dist::sample_binomial(&mut rng, z_hat, q) as f64);
            }
            for (cell, pending, out) in [
                (config.onset_local_cell, &mut pending_l, &mut conf_row_l),
                (config.onset_travel_cell, &mut pending_t, &mut conf_row_t),
            ] {
                let onsets = draw.z[s].get(cell.0, cell.1);
                let delayed = crate::dist::sample_binomial(&mut rng, onsets, p_onset_delay);
                let confirmed = crate::dist::sample_binomial(&mut rng, *pending, p_confirm);
                *pending = *pending + delayed - confirmed;
                out.push(confirmed as f64);
            }
        }
        onset_l.push(onset_row_l);
        onset_t.push(onset_row_t);
        conf_l.push(conf_row_l);
        conf_t.push(conf_row_t);
    }

    Ok(DerivedQuantities {
        reproduction: SeriesSummary::from_draws(&r),
        onset_local: SeriesSummary::from_draws(&onset_l),
        onset_travel: SeriesSummary::from_draws(&onset_t),
        confirmed_local: SeriesSummary::from_draws(&conf_l),
        confirmed_travel: SeriesSummary::from_draws(&conf_t),
    })
}
