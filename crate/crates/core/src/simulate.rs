//! Forward simulation of the latent chains and both observation models.
//!
//! Simulation works at the row-multinomial level: each row of the
//! transition-count matrix is drawn as one multinomial, which has the same
//! law as tracking individuals one by one at a fraction of the cost.

use crate::dist::{sample_binomial, sample_multinomial};
use crate::model::ModelSpec;
use crate::rng::rng_from_seed;
use crate::types::{CountMatrix, CountVector, Matrix};
use rand::Rng;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SimError {
    #[error("epidemic did not go extinct within the {cap}-step cap")]
    HorizonCapReached { cap: u64 },
    #[error("kernel family does not declare active compartments; supply them explicitly")]
    NoActiveCompartments,
}

/// Hard cap for [`simulate_until_extinction`].
pub const EXTINCTION_CAP: u64 = 100_000;

/// A simulated latent path: occupancy vectors `x[0..=T]` and transition
/// matrices `z[0..T]` (so `z[t-1]` moves `x[t-1]` to `x[t]`).
#[derive(Debug, Clone)]
pub struct LatentTrajectory {
    pub x: Vec<CountVector>,
    pub z: Vec<CountMatrix>,
}

impl LatentTrajectory {
    pub fn horizon(&self) -> usize {
        self.z.len()
    }

    /// Occupancies at time `t` (0-based).
    pub fn occupancy(&self, t: usize) -> &CountVector {
        &self.x[t]
    }

    /// Transitions into time `t` (1-based).
    pub fn transitions(&self, t: usize) -> &CountMatrix {
        &self.z[t - 1]
    }
}

/// How the initial occupancy is chosen.
#[derive(Debug, Clone)]
pub enum InitialState {
    /// `x_0 ~ Mult(n, pi0)`.
    Multinomial,
    /// Fixed counts (must sum to `n`).
    Fixed(CountVector),
}

fn draw_initial<R: Rng + ?Sized>(spec: &ModelSpec, init: &InitialState, rng: &mut R) -> CountVector {
    match init {
        InitialState::Multinomial => CountVector::new(sample_multinomial(
            rng,
            spec.n,
            spec.pi0.as_slice(),
        )),
        InitialState::Fixed(x0) => {
            assert_eq!(x0.total(), spec.n, "fixed initial counts must sum to n");
            assert_eq!(x0.len(), spec.m());
            x0.clone()
        }
    }
}

fn step_latent<R: Rng + ?Sized>(
    spec: &ModelSpec,
    x_prev: &CountVector,
    t: u64,
    rng: &mut R,
) -> (CountMatrix, CountVector) {
    let m = spec.m();
    let eta = x_prev.proportions(spec.n).expect("latent totals are n");
    let kernel = spec.kernel.matrix(t, &eta);
    let mut z = CountMatrix::zeros(m);
    for i in 0..m {
        let count = x_prev.get(i);
        if count == 0 {
            continue;
        }
        let row = sample_multinomial(rng, count, kernel.row(i));
        for (j, &v) in row.iter().enumerate() {
            z.set(i, j, v);
        }
    }
    let x_next = z.col_sums();
    (z, x_next)
}

/// Simulate the latent chains over a fixed horizon, drawing `x_0` from the
/// model's initial law. Deterministic given the seed.
pub fn simulate_latent(spec: &ModelSpec, t_max: u64, seed: u64) -> LatentTrajectory {
    simulate_latent_from(spec, &InitialState::Multinomial, t_max, seed)
}

/// Simulate the latent chains from a chosen initial state.
pub fn simulate_latent_from(
    spec: &ModelSpec,
    init: &InitialState,
    t_max: u64,
    seed: u64,
) -> LatentTrajectory {
    let mut rng = rng_from_seed(seed);
    let mut x = Vec::with_capacity(t_max as usize + 1);
    let mut z = Vec::with_capacity(t_max as usize);
    x.push(draw_initial(spec, init, &mut rng));
    for t in 1..=t_max {
        let (zt, xt) = step_latent(spec, x.last().unwrap(), t, &mut rng);
        z.push(zt);
        x.push(xt);
    }
    LatentTrajectory { x, z }
}

/// Simulate until every active compartment is empty, or error at the cap.
///
/// `active` defaults to the kernel family's exposed-and-infective stages.
pub fn simulate_until_extinction(
    spec: &ModelSpec,
    init: &InitialState,
    active: Option<&[usize]>,
    seed: u64,
) -> Result<LatentTrajectory, SimError> {
    let family_active = spec.kernel.active_compartments();
    let active: Vec<usize> = match (active, &family_active) {
        (Some(a), _) => a.to_vec(),
        (None, Some(a)) => a.clone(),
        (None, None) => return Err(SimError::NoActiveCompartments),
    };
    let extinct = |x: &CountVector| active.iter().all(|&i| x.get(i) == 0);

    let mut rng = rng_from_seed(seed);
    let mut x = vec![draw_initial(spec, init, &mut rng)];
    let mut z = Vec::new();
    let mut t = 0u64;
    while !extinct(x.last().unwrap()) {
        if t >= EXTINCTION_CAP {
            return Err(SimError::HorizonCapReached { cap: EXTINCTION_CAP });
        }
        t += 1;
        let (zt, xt) = step_latent(spec, x.last().unwrap(), t, &mut rng);
        z.push(zt);
        x.push(xt);
    }
    Ok(LatentTrajectory { x, z })
}

/// Binomially thin occupancy counts: `y_t[i] ~ Bin(x_t[i], q_t[i])` for
/// `t = 1..=T`. `q` gives per-time reporting vectors; a single entry is
/// recycled over all times.
pub fn simulate_obs_x(traj: &LatentTrajectory, q: &[Vec<f64>], seed: u64) -> Vec<CountVector> {
    let mut rng = rng_from_seed(seed);
    let t_max = traj.horizon();
    (1..=t_max)
        .map(|t| {
            let qt = recycle(q, t);
            let x = traj.occupancy(t);
            CountVector::new(
                (0..x.len())
                    .map(|i| sample_binomial(&mut rng, x.get(i), qt[i]))
                    .collect(),
            )
        })
        .collect()
}

/// Binomially thin transition counts: `y_t[i][j] ~ Bin(z_t[i][j], q_t[i][j])`.
pub fn simulate_obs_z(traj: &LatentTrajectory, q: &[Matrix], seed: u64) -> Vec<CountMatrix> {
    let mut rng = rng_from_seed(seed);
    let t_max = traj.horizon();
    (1..=t_max)
        .map(|t| {
            let qt = recycle(q, t);
            let z = traj.transitions(t);
            let m = z.m();
            let mut y = CountMatrix::zeros(m);
            for i in 0..m {
                for j in 0..m {
                    y.set(i, j, sample_binomial(&mut rng, z.get(i, j), qt.get(i, j)));
                }
            }
            y
        })
        .collect()
}

fn recycle<T>(seq: &[T], t: usize) -> &T {
    if seq.len() == 1 {
        &seq[0]
    } else {
        &seq[t - 1]
    }
}

/// Default initial occupancy used by the epidemic experiments: one index
/// case (exposed) and everyone else susceptible.
pub fn index_case_initial(m: usize, n: u64) -> CountVector {
    let mut counts = vec![0u64; m];
    counts[0] = n - 1;
    counts[1] = 1;
    CountVector::new(counts)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{CustomKernel, EbolaKernel, KernelSpec, SeirKernel};
    use crate::types::{ProbVector, StochMatrix};
    use std::sync::Arc;

    fn identity_spec(n: u64, pi0: Vec<f64>) -> ModelSpec {
        let m = pi0.len();
        ModelSpec::new(
            n,
            ProbVector::new(pi0).unwrap(),
            KernelSpec::Custom(CustomKernel {
                m,
                rule: Arc::new(move |_, _| StochMatrix::identity(2)),
            }),
        )
        .unwrap()
    }

    fn seir_spec(n: u64, beta: f64, rho: f64, gamma: f64) -> ModelSpec {
        let kernel = KernelSpec::Seir(SeirKernel::new(beta, rho, gamma, 1.0).unwrap());
        let pi0 = kernel.default_pi0(n).unwrap();
        ModelSpec::new(n, pi0, kernel).unwrap()
    }

    #[test]
    fn identity_kernel_freezes_state() {
        let spec = identity_spec(100, vec![0.4, 0.6]);
        let traj = simulate_latent(&spec, 10, 3);
        for t in 1..=10 {
            assert_eq!(traj.occupancy(t), traj.occupancy(0));
        }
    }

    #[test]
    fn absorbing_compartment_traps_population() {
        let kernel = KernelSpec::Seir(SeirKernel::new(0.9, 0.5, 0.5, 1.0).unwrap());
        let spec = ModelSpec::new(
            50,
            ProbVector::vertex(4, 3),
            kernel,
        )
        .unwrap();
        let traj = simulate_latent(&spec, 20, 11);
        for t in 0..=20 {
            assert_eq!(traj.occupancy(t).get(3), 50);
        }
    }

    #[test]
    fn margins_chain_between_steps() {
        let spec = seir_spec(200, 0.8, 0.3, 0.2);
        let traj = simulate_latent_from(
            &spec,
            &InitialState::Fixed(CountVector::new(vec![150, 30, 15, 5])),
            25,
            7,
        );
        for t in 1..=25 {
            let z = traj.transitions(t);
            assert_eq!(&z.row_sums(), traj.occupancy(t - 1), "row sums at t={t}");
            assert_eq!(&z.col_sums(), traj.occupancy(t), "col sums at t={t}");
            assert_eq!(traj.occupancy(t).total(), 200);
        }
    }

    #[test]
    fn same_seed_same_path() {
        let spec = seir_spec(500, 0.8, 0.3, 0.2);
        let a = simulate_latent(&spec, 30, 99);
        let b = simulate_latent(&spec, 30, 99);
        for t in 0..=30 {
            assert_eq!(a.occupancy(t), b.occupancy(t));
        }
        let c = simulate_latent(&spec, 30, 100);
        assert!((0..=30).any(|t| a.occupancy(t) != c.occupancy(t)));
    }

    #[test]
    fn perfect_reporting_reproduces_counts() {
        let spec = seir_spec(300, 0.8, 0.3, 0.2);
        let traj = simulate_latent_from(
            &spec,
            &InitialState::Fixed(CountVector::new(vec![250, 30, 15, 5])),
            10,
            5,
        );
        let ones = vec![vec![1.0; 4]];
        let ys = simulate_obs_x(&traj, &ones, 1);
        for (t, y) in ys.iter().enumerate() {
            assert_eq!(y, traj.occupancy(t + 1));
        }
        let q1 = Matrix::from_flat(4, vec![1.0; 16]).unwrap();
        let yz = simulate_obs_z(&traj, &[q1], 1);
        for (t, y) in yz.iter().enumerate() {
            assert_eq!(y, traj.transitions(t + 1));
        }
    }

    #[test]
    fn zero_reporting_gives_zero_counts() {
        let spec = seir_spec(300, 0.8, 0.3, 0.2);
        let traj = simulate_latent(&spec, 10, 5);
        let ys = simulate_obs_x(&traj, &[vec![0.0; 4]], 1);
        assert!(ys.iter().all(|y| y.total() == 0));
        let yz = simulate_obs_z(&traj, &[Matrix::zeros(4)], 1);
        assert!(yz.iter().all(|y| y.total() == 0));
    }

    #[test]
    fn observations_never_exceed_latents() {
        let spec = seir_spec(400, 0.8, 0.3, 0.2);
        let traj = simulate_latent_from(
            &spec,
            &InitialState::Fixed(CountVector::new(vec![300, 50, 40, 10])),
            15,
            21,
        );
        let ys = simulate_obs_x(&traj, &[vec![0.5; 4]], 2);
        for (t, y) in ys.iter().enumerate() {
            for i in 0..4 {
                assert!(y.get(i) <= traj.occupancy(t + 1).get(i));
            }
        }
    }

    /// Binomial mean check: thinning a full compartment of 10^4 with
    /// q = 0.5 over 10^3 replicates stays within 3 sigma of 5000.
    #[test]
    fn thinning_mean_matches_binomial() {
        let spec = identity_spec(10_000, vec![1.0, 0.0]);
        let traj = simulate_latent_from(
            &spec,
            &InitialState::Fixed(CountVector::new(vec![10_000, 0])),
            1,
            0,
        );
        let reps = 1000;
        let mut total = 0.0;
        for r in 0..reps {
            let y = simulate_obs_x(&traj, &[vec![0.5, 0.0]], r as u64);
            total += y[0].get(0) as f64;
        }
        let mean = total / reps as f64;
        let sigma = (10_000.0f64 * 0.25 / reps as f64).sqrt();
        assert!((mean - 5000.0).abs() < 3.0 * sigma, "mean {mean}");
    }

    #[test]
    fn extinction_immediate_when_no_active_mass() {
        let spec = seir_spec(100, 0.8, 0.3, 0.2);
        let traj = simulate_until_extinction(
            &spec,
            &InitialState::Fixed(CountVector::new(vec![100, 0, 0, 0])),
            None,
            4,
        )
        .unwrap();
        assert_eq!(traj.horizon(), 0);
    }

    #[test]
    fn extinction_fast_with_instant_progression() {
        // enormous rho/gamma: exposed become infective and recover almost
        // surely each step, so the epidemic cannot linger
        let kernel = KernelSpec::Ebola(EbolaKernel::new(0.2, 0.2, 50.0, 50.0, 1.0, 130).unwrap());
        let spec = ModelSpec::new(1000, kernel.default_pi0(1000).unwrap(), kernel).unwrap();
        for seed in 0..5 {
            let traj = simulate_until_extinction(
                &spec,
                &InitialState::Fixed(index_case_initial(4, 1000)),
                None,
                seed,
            )
            .unwrap();
            assert!(traj.horizon() < 25, "horizon {}", traj.horizon());
        }
    }
}
