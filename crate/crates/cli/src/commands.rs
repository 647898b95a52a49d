//! The seven subcommands. Each takes a loaded configuration and an output
//! directory, writes its CSV products plus a manifest, and returns the
//! manifest.

use crate::config::{
    Horizon, InitConfig, Manifest, ObsMode, RunConfig, SmcSection,
};
use crate::CliError;
use epifilter::estimate::{ebola_mcmc, profile_em, EbolaSetup, EbolaTheta, EmConfig, McmcConfig};
use epifilter::filter::{filter_x, filter_z, LikelihoodTerms, ObsSeriesX, ObsSeriesZ};
use epifilter::io as epio;
use epifilter::model::{KernelSpec, ModelSpec};
use epifilter::rng::{child_seed, rng_from_seed};
use epifilter::simulate::{
    index_case_initial, simulate_latent_from, simulate_obs_x, simulate_obs_z,
    simulate_until_extinction, InitialState, LatentTrajectory,
};
use epifilter::smc::{
    backward_sample, derived_quantities, smc_filter, DerivedConfig, Resampling, SmcConfig,
    SmoothedDraw,
};
use epifilter::smooth::{smooth_x, smooth_z};
use epifilter::types::{Constraint, Matrix};
use rayon::prelude::*;
use serde_json::json;
use std::collections::BTreeMap;
use std::fs::File;
use std::path::{Path, PathBuf};

fn create(dir: &Path, name: &str) -> Result<File, CliError> {
    std::fs::create_dir_all(dir)
        .map_err(|e| CliError::Data(format!("cannot create {}: {e}", dir.display())))?;
    File::create(dir.join(name))
        .map_err(|e| CliError::Data(format!("cannot create {name}: {e}")))
}

fn initial_state(config: &RunConfig, spec: &ModelSpec) -> Result<InitialState, CliError> {
    Ok(match &config.init {
        InitConfig::Multinomial => InitialState::Multinomial,
        InitConfig::Fixed(counts) => {
            if counts.len() != spec.m() || counts.iter().sum::<u64>() != spec.n {
                return Err(CliError::Config(
                    "fixed initial counts must have length m and sum to n".into(),
                ));
            }
            InitialState::Fixed(epifilter::types::CountVector::new(counts.clone()))
        }
        InitConfig::IndexCase => {
            InitialState::Fixed(index_case_initial(spec.m(), spec.n))
        }
    })
}

fn simulate_trajectory(
    config: &RunConfig,
    spec: &ModelSpec,
) -> Result<LatentTrajectory, CliError> {
    let init = initial_state(config, spec)?;
    match config.horizon {
        Some(Horizon::Steps(t)) => Ok(simulate_latent_from(spec, &init, t, config.seed)),
        Some(Horizon::UntilExtinction) => {
            Ok(simulate_until_extinction(spec, &init, None, config.seed)?)
        }
        None => Err(CliError::Config(
            "simulate needs a horizon ({\"steps\": T} or \"until_extinction\")".into(),
        )),
    }
}

fn obs_mode(config: &RunConfig) -> Result<ObsMode, CliError> {
    Ok(config
        .observation
        .as_ref()
        .ok_or_else(|| CliError::Config("an observation section is required".into()))?
        .mode)
}

fn load_obs_z(config: &RunConfig, m: usize) -> Result<ObsSeriesZ, CliError> {
    let inputs = config
        .inputs
        .as_ref()
        .ok_or_else(|| CliError::Config("inputs.obs is required".into()))?;
    let file = File::open(&inputs.obs)
        .map_err(|e| CliError::Data(format!("cannot open {}: {e}", inputs.obs)))?;
    Ok(epio::read_obs_z(file, m, inputs.t_max)?)
}

fn load_obs_x(config: &RunConfig, m: usize) -> Result<ObsSeriesX, CliError> {
    let inputs = config
        .inputs
        .as_ref()
        .ok_or_else(|| CliError::Config("inputs.obs is required".into()))?;
    let file = File::open(&inputs.obs)
        .map_err(|e| CliError::Data(format!("cannot open {}: {e}", inputs.obs)))?;
    Ok(epio::read_obs_x(file, m, inputs.t_max)?)
}

/// Simulate latent chains and observations; write occupancy, transition
/// and observation CSVs.
pub fn cmd_simulate(config: &RunConfig, out_dir: &Path) -> Result<Manifest, CliError> {
    let spec = config.model.build()?;
    let traj = simulate_trajectory(config, &spec)?;

    epio::write_occupancies(create(out_dir, "occupancies.csv")?, &traj)?;
    epio::write_transitions(create(out_dir, "transitions.csv")?, &traj)?;

    let mut outputs = BTreeMap::from([
        ("occupancies".to_string(), "occupancies.csv".to_string()),
        ("transitions".to_string(), "transitions.csv".to_string()),
    ]);

    if let Some(obs_cfg) = &config.observation {
        let obs_seed = child_seed(config.seed, 1);
        match obs_cfg.mode {
            ObsMode::Z => {
                let cells = obs_cfg.cells_z(spec.m())?;
                let mut q = Matrix::zeros(spec.m());
                for &(i, j, prob) in &cells {
                    q.set(i, j, prob);
                }
                let counts = simulate_obs_z(&traj, &[q], obs_seed);
                let obs = ObsSeriesZ::from_observed_cells(spec.m(), counts, &cells)?;
                epio::write_obs_z(create(out_dir, "obs.csv")?, &obs)?;
            }
            ObsMode::X => {
                let q = obs_cfg.q_vector(spec.m())?;
                let counts = simulate_obs_x(&traj, &[q.clone()], obs_seed);
                let steps = counts
                    .into_iter()
                    .map(|y| epifilter::filter::ObsStepX { y, q: q.clone() })
                    .collect();
                let obs = ObsSeriesX::new(spec.m(), steps)?;
                epio::write_obs_x(create(out_dir, "obs.csv")?, &obs)?;
            }
        }
        outputs.insert("obs".to_string(), "obs.csv".to_string());
    }

    let manifest = Manifest {
        command: "simulate".to_string(),
        seed: config.seed,
        config: config.clone(),
        outputs,
        results: json!({ "horizon": traj.horizon() }),
    };
    manifest.write(out_dir)?;
    Ok(manifest)
}

/// Run the filter over an observation file; write the trace CSV.
pub fn cmd_filter(config: &RunConfig, out_dir: &Path) -> Result<Manifest, CliError> {
    let spec = config.model.build()?;
    let (log_lik, output) = match obs_mode(config)? {
        ObsMode::Z => {
            let obs = load_obs_z(config, spec.m())?;
            let trace = filter_z(&spec, &obs, LikelihoodTerms::Complete)?;
            epio::write_filter_trace_z(create(out_dir, "filter.csv")?, &trace)?;
            (trace.log_likelihood(), "filter.csv")
        }
        ObsMode::X => {
            let obs = load_obs_x(config, spec.m())?;
            let trace = filter_x(&spec, &obs, LikelihoodTerms::Complete)?;
            epio::write_filter_trace_x(create(out_dir, "filter.csv")?, &trace)?;
            (trace.log_likelihood(), "filter.csv")
        }
    };
    let manifest = Manifest {
        command: "filter".to_string(),
        seed: config.seed,
        config: config.clone(),
        outputs: BTreeMap::from([("trace".to_string(), output.to_string())]),
        results: json!({ "log_likelihood": log_lik }),
    };
    manifest.write(out_dir)?;
    Ok(manifest)
}

/// Filter then smooth; write the combined trace CSV.
pub fn cmd_smooth(config: &RunConfig, out_dir: &Path) -> Result<Manifest, CliError> {
    let spec = config.model.build()?;
    let log_lik = match obs_mode(config)? {
        ObsMode::Z => {
            let obs = load_obs_z(config, spec.m())?;
            let trace = filter_z(&spec, &obs, LikelihoodTerms::Complete)?;
            let smooth = smooth_z(&trace, &spec)?;
            epio::write_smooth_trace_z(create(out_dir, "smooth.csv")?, &trace, &smooth)?;
            trace.log_likelihood()
        }
        ObsMode::X => {
            let obs = load_obs_x(config, spec.m())?;
            let trace = filter_x(&spec, &obs, LikelihoodTerms::Complete)?;
            let smooth = smooth_x(&trace, &spec)?;
            epio::write_smooth_trace_x(create(out_dir, "smooth.csv")?, &trace, &smooth)?;
            trace.log_likelihood()
        }
    };
    let manifest = Manifest {
        command: "smooth".to_string(),
        seed: config.seed,
        config: config.clone(),
        outputs: BTreeMap::from([("trace".to_string(), "smooth.csv".to_string())]),
        results: json!({ "log_likelihood": log_lik }),
    };
    manifest.write(out_dir)?;
    Ok(manifest)
}

fn ebola_setup(config: &RunConfig, spec: &ModelSpec) -> Result<EbolaSetup, CliError> {
    if spec.kernel.family_name() != "ebola" {
        return Err(CliError::Config(
            "fitting commands require the ebola family".into(),
        ));
    }
    let rec = config.model.param_record();
    let h = rec
        .get_or("h", Constraint::Positive, 1.0)
        .map_err(|e| CliError::Config(e.to_string()))?;
    let t_star = rec
        .require("t_star", Constraint::NonNegative)
        .map_err(|e| CliError::Config(e.to_string()))? as u64;
    Ok(EbolaSetup {
        n: spec.n,
        h,
        t_star,
        pi0: spec.pi0.clone(),
    })
}

/// Profile-likelihood EM over a `(beta, lambda)` grid; write the evaluated
/// grid and the selected maximum.
pub fn cmd_fit_em(config: &RunConfig, out_dir: &Path) -> Result<Manifest, CliError> {
    let spec = config.model.build()?;
    let setup = ebola_setup(config, &spec)?;
    let section = config
        .em
        .as_ref()
        .ok_or_else(|| CliError::Config("an em section is required".into()))?;
    let obs = load_obs_z(config, spec.m())?;

    let init = EbolaTheta {
        beta: section.beta_grid[0],
        lambda: section.lambda_grid[0],
        rho: section.init.rho,
        gamma: section.init.gamma,
        q_cases: section.init.q_cases,
        q_deaths: section.init.q_deaths,
    };
    let em_config = EmConfig {
        tolerance: section.tolerance,
        max_iters: section.max_iters,
        ..EmConfig::default()
    };
    let profile = profile_em(
        &setup,
        &obs,
        &section.beta_grid,
        &section.lambda_grid,
        init,
        &em_config,
    )?;

    let mut file = create(out_dir, "profile.csv")?;
    {
        use std::io::Write;
        writeln!(
            file,
            "beta,lambda,rho,gamma,q23,q34,log_lik,iterations,converged"
        )
        .map_err(|e| CliError::Data(e.to_string()))?;
        for point in &profile.grid {
            writeln!(
                file,
                "{},{},{},{},{},{},{},{},{}",
                point.beta,
                point.lambda,
                point.theta.rho,
                point.theta.gamma,
                point.theta.q_cases,
                point.theta.q_deaths,
                point.log_lik,
                point.iterations,
                point.converged
            )
            .map_err(|e| CliError::Data(e.to_string()))?;
        }
    }

    let best = &profile.best;
    let mle = json!({
        "beta": best.theta.beta,
        "lambda": best.theta.lambda,
        "rho": best.theta.rho,
        "gamma": best.theta.gamma,
        "q23": best.theta.q_cases,
        "q34": best.theta.q_deaths,
        "r0": best.theta.r0(),
        "log_likelihood": best.log_lik,
    });
    std::fs::write(
        out_dir.join("mle.json"),
        serde_json::to_string_pretty(&mle).expect("serializable"),
    )
    .map_err(|e| CliError::Data(e.to_string()))?;

    let manifest = Manifest {
        command: "fit-em".to_string(),
        seed: config.seed,
        config: config.clone(),
        outputs: BTreeMap::from([
            ("profile".to_string(), "profile.csv".to_string()),
            ("mle".to_string(), "mle.json".to_string()),
        ]),
        results: mle,
    };
    manifest.write(out_dir)?;
    Ok(manifest)
}

/// Metropolis-within-Gibbs over the approximate posterior; write retained
/// samples.
pub fn cmd_fit_mcmc(config: &RunConfig, out_dir: &Path) -> Result<Manifest, CliError> {
    let spec = config.model.build()?;
    let setup = ebola_setup(config, &spec)?;
    let section = config
        .mcmc
        .as_ref()
        .ok_or_else(|| CliError::Config("an mcmc section is required".into()))?;
    let obs = load_obs_z(config, spec.m())?;
    let priors = section.priors.resolve()?;

    let mcmc_config = McmcConfig {
        iterations: section.iterations,
        burn_in: section.burn_in,
        thin: section.thin,
        proposal_sd: section.proposal_sd.clone().unwrap_or_else(|| vec![0.1; 6]),
        adapt: section.adapt,
        seed: config.seed,
    };
    let out = ebola_mcmc(&setup, &obs, &priors, &mcmc_config)?;

    epio::write_mcmc_samples(
        create(out_dir, "samples.csv")?,
        &EbolaTheta::NAMES,
        &out.output.samples,
        &out.r0,
        &out.output.log_posterior,
    )?;

    let results = json!({
        "retained": out.output.samples.len(),
        "acceptance_rates": out.output.acceptance_rates,
        "tuned_proposal_sd": out.output.tuned_sd,
        "priors": priors,
    });
    let manifest = Manifest {
        command: "fit-mcmc".to_string(),
        seed: config.seed,
        config: config.clone(),
        outputs: BTreeMap::from([("samples".to_string(), "samples.csv".to_string())]),
        results,
    };
    manifest.write(out_dir)?;
    Ok(manifest)
}

fn derived_config(
    section: &SmcSection,
    kernel: &KernelSpec,
    seed: u64,
) -> Result<DerivedConfig, CliError> {
    let derived = section
        .derived
        .as_ref()
        .ok_or_else(|| CliError::Config("an smc.derived section is required".into()))?;
    let (local, travel) = match kernel {
        KernelSpec::Covid(_) => (
            epifilter::model::CovidKernel::ONSET_WUHAN,
            epifilter::model::CovidKernel::ONSET_TRAVEL,
        ),
        // four-compartment families: new infectives and new removals
        _ => ((1, 2), (2, 3)),
    };
    Ok(DerivedConfig {
        gamma: derived.gamma,
        kappa: derived.kappa,
        q_onset_local: derived.q_onset_local,
        q_onset_travel: derived.q_onset_travel,
        onset_local_cell: local,
        onset_travel_cell: travel,
        seed: child_seed(seed, 0x2000),
    })
}

/// Particle filter with backward sampling over repeated runs; write
/// posterior summaries of the derived series and the per-run effective
/// sample sizes.
pub fn cmd_smc(config: &RunConfig, out_dir: &Path) -> Result<Manifest, CliError> {
    let spec = config.model.build()?;
    let section = config
        .smc
        .as_ref()
        .ok_or_else(|| CliError::Config("an smc section is required".into()))?;
    let obs = load_obs_z(config, spec.m())?;
    let resampling = if section.systematic_resampling {
        Resampling::Systematic
    } else {
        Resampling::Multinomial
    };

    let per_run: Vec<Result<(Vec<SmoothedDraw>, Vec<f64>, f64), CliError>> = (0..section.runs)
        .into_par_iter()
        .map(|run| {
            let smc_config = SmcConfig {
                n_part: section.n_part,
                sigma_v: section.sigma_v,
                beta0: section.beta0,
                seed: child_seed(config.seed, run as u64),
                resampling,
            };
            let ensemble = smc_filter(&spec, &obs, &smc_config)?;
            let mut rng = rng_from_seed(child_seed(config.seed, 0x1000 + run as u64));
            let draws = (0..section.draws_per_run)
                .map(|_| backward_sample(&ensemble, &mut rng))
                .collect::<Result<Vec<_>, _>>()?;
            Ok((draws, ensemble.ess_trace(), ensemble.log_likelihood))
        })
        .collect();

    let mut draws = Vec::new();
    let mut ess_rows = Vec::new();
    let mut log_liks = Vec::new();
    for (run, result) in per_run.into_iter().enumerate() {
        let (d, ess, ll) = result?;
        draws.extend(d);
        for (t, e) in ess.iter().enumerate() {
            ess_rows.push((run, t + 1, *e));
        }
        log_liks.push(ll);
    }

    let derived = derived_quantities(&draws, spec.n, &derived_config(section, &spec.kernel, config.seed)?)?;
    epio::write_series_summaries(
        create(out_dir, "summary.csv")?,
        &[
            ("r_t", &derived.reproduction),
            ("onset_local", &derived.onset_local),
            ("onset_travel", &derived.onset_travel),
            ("confirmed_local", &derived.confirmed_local),
            ("confirmed_travel", &derived.confirmed_travel),
        ],
    )?;
    {
        use std::io::Write;
        let mut f = create(out_dir, "ess.csv")?;
        writeln!(f, "run,t,ess").map_err(|e| CliError::Data(e.to_string()))?;
        for (run, t, e) in &ess_rows {
            writeln!(f, "{run},{t},{e}").map_err(|e| CliError::Data(e.to_string()))?;
        }
    }

    let manifest = Manifest {
        command: "smc".to_string(),
        seed: config.seed,
        config: config.clone(),
        outputs: BTreeMap::from([
            ("summary".to_string(), "summary.csv".to_string()),
            ("ess".to_string(), "ess.csv".to_string()),
        ]),
        results: json!({
            "runs": section.runs,
            "draws": draws.len(),
            "log_likelihoods": log_liks,
        }),
    };
    manifest.write(out_dir)?;
    Ok(manifest)
}

/// Accumulated bias/coverage cells for one population size.
pub struct BiasCoverageSummary {
    pub n: u64,
    pub rows: Vec<epio::BiasCoverageRow>,
}

/// Replicated calibration experiment: simulate, filter, and score the
/// filtered means and credible intervals against the latent truth.
///
/// Exposed separately from the command so the acceptance suite can call it
/// without touching the filesystem.
pub fn run_bias_coverage(
    spec: &ModelSpec,
    cells: &[(usize, usize, f64)],
    replicates: usize,
    t_max: usize,
    level: f64,
    seed: u64,
) -> Result<BiasCoverageSummary, CliError> {
    let m = spec.m();
    let mut q = Matrix::zeros(m);
    for &(i, j, prob) in cells {
        q.set(i, j, prob);
    }

    struct Acc {
        bias: Vec<f64>,
        covered: Vec<u64>,
    }
    let zero = || Acc {
        bias: vec![0.0; t_max * 4],
        covered: vec![0; t_max * 4],
    };

    let acc = (0..replicates)
        .into_par_iter()
        .map(|rep| -> Result<Acc, CliError> {
            let sim_seed = child_seed(seed, 2 * rep as u64);
            let obs_seed = child_seed(seed, 2 * rep as u64 + 1);
            // calibration is against the model's own initial law
            let traj = simulate_latent_from(spec, &InitialState::Multinomial, t_max as u64, sim_seed);
            let counts = simulate_obs_z(&traj, &[q.clone()], obs_seed);
            let obs = ObsSeriesZ::from_observed_cells(m, counts, cells)?;
            let trace = filter_z(spec, &obs, LikelihoodTerms::Relative)?;
            let mut out = zero();
            for t in 1..=t_max {
                let (mean, ci) = trace.compartment_mean_and_ci(t, level);
                let x = traj.occupancy(t);
                for i in 0..m {
                    let idx = (t - 1) * m + i;
                    out.bias[idx] += mean[i] - x.get(i) as f64;
                    let (lo, hi) = ci[i];
                    if (lo..=hi).contains(&x.get(i)) {
                        out.covered[idx] += 1;
                    }
                }
            }
            Ok(out)
        })
        .try_reduce(zero, |mut a, b| {
            for (x, y) in a.bias.iter_mut().zip(&b.bias) {
                *x += y;
            }
            for (x, y) in a.covered.iter_mut().zip(&b.covered) {
                *x += y;
            }
            Ok(a)
        })?;

    let mut rows = Vec::with_capacity(t_max * m);
    for t in 1..=t_max {
        for i in 0..m {
            let idx = (t - 1) * m + i;
            rows.push(epio::BiasCoverageRow {
                n: spec.n,
                t,
                compartment: i,
                bias: acc.bias[idx] / replicates as f64,
                coverage: acc.covered[idx] as f64 / replicates as f64,
            });
        }
    }
    Ok(BiasCoverageSummary { n: spec.n, rows })
}

/// Bias/coverage experiment over the configured population sizes; write
/// one CSV with every cell.
pub fn cmd_bias_coverage(config: &RunConfig, out_dir: &Path) -> Result<Manifest, CliError> {
    let section = config
        .bias_coverage
        .as_ref()
        .ok_or_else(|| CliError::Config("a bias_coverage section is required".into()))?;
    let obs_cfg = config
        .observation
        .as_ref()
        .ok_or_else(|| CliError::Config("an observation section is required".into()))?;
    if obs_cfg.mode != ObsMode::Z {
        return Err(CliError::Config(
            "the bias/coverage experiment uses transition-count observations".into(),
        ));
    }

    let mut all_rows = Vec::new();
    for (n_idx, &n) in section.n_values.iter().enumerate() {
        let model = crate::config::ModelConfig {
            n,
            ..config.model.clone()
        };
        let spec = model.build()?;
        let cells = obs_cfg.cells_z(spec.m())?;
        let summary = run_bias_coverage(
            &spec,
            &cells,
            section.replicates,
            section.t,
            section.level,
            child_seed(config.seed, n_idx as u64),
        )?;
        all_rows.extend(summary.rows);
    }
    epio::write_bias_coverage(create(out_dir, "bias_coverage.csv")?, &all_rows)?;

    let worst_bias = all_rows
        .iter()
        .map(|r| r.bias.abs())
        .fold(0.0f64, f64::max);
    let min_coverage = all_rows
        .iter()
        .map(|r| r.coverage)
        .fold(1.0f64, f64::min);
    let manifest = Manifest {
        command: "bias-coverage".to_string(),
        seed: config.seed,
        config: config.clone(),
        outputs: BTreeMap::from([(
            "bias_coverage".to_string(),
            "bias_coverage.csv".to_string(),
        )]),
        results: json!({
            "worst_abs_bias": worst_bias,
            "min_coverage": min_coverage,
        }),
    };
    manifest.write(out_dir)?;
    Ok(manifest)
}

/// Dispatch by command name (the binary and the tests share this).
pub fn run_command(
    command: &str,
    config: &RunConfig,
    out_dir: &Path,
) -> Result<Manifest, CliError> {
    match command {
        "simulate" => cmd_simulate(config, out_dir),
        "filter" => cmd_filter(config, out_dir),
        "smooth" => cmd_smooth(config, out_dir),
        "fit-em" => cmd_fit_em(config, out_dir),
        "fit-mcmc" => cmd_fit_mcmc(config, out_dir),
        "smc" => cmd_smc(config, out_dir),
        "bias-coverage" => cmd_bias_coverage(config, out_dir),
        other => Err(CliError::Config(format!("unknown command '{other}'"))),
    }
}

/// Output directory helper shared by main and tests.
pub fn resolve_out_dir(out_dir: Option<PathBuf>) -> PathBuf {
    out_dir.unwrap_or_else(|| PathBuf::from("."))
}
