//! Transition-kernel families and the model specification.
//!
//! A model is `(m, n, pi0, kernel)` where the kernel maps a time index and a
//! vector of population proportions to an `m x m` row-stochastic matrix of
//! per-individual transition probabilities. Three parametric families are
//! built in; arbitrary user rules are accepted through
//! [`KernelSpec::Custom`].

use crate::types::{Constraint, ParamRecord, ProbVector, StochMatrix, TypeError};
use std::fmt;
use std::sync::Arc;

/// Discrete-time stochastic SEIR kernel.
///
/// Compartments: susceptible, exposed, infective, removed. A susceptible
/// individual escapes infection over one step of length `h` with probability
/// `exp(-h * beta * eta_I)` where `eta_I` is the infective proportion;
/// exposed and infective individuals progress with rates `rho` and `gamma`.
#[derive(Debug, Clone, PartialEq)]
pub struct SeirKernel {
    pub beta: f64,
    pub rho: f64,
    pub gamma: f64,
    pub h: f64,
}

impl SeirKernel {
    pub const M: usize = 4;

    pub fn new(beta: f64, rho: f64, gamma: f64, h: f64) -> Result<Self, TypeError> {
        for (name, v, c) in [
            ("beta", beta, Constraint::NonNegative),
            ("rho", rho, Constraint::NonNegative),
            ("gamma", gamma, Constraint::NonNegative),
            ("h", h, Constraint::Positive),
        ] {
            ParamRecord::new().with(name, v).require(name, c)?;
        }
        Ok(SeirKernel {
            beta,
            rho,
            gamma,
            h,
        })
    }

    pub fn from_params(p: &ParamRecord) -> Result<Self, TypeError> {
        SeirKernel::new(
            p.require("beta", Constraint::NonNegative)?,
            p.require("rho", Constraint::NonNegative)?,
            p.require("gamma", Constraint::NonNegative)?,
            p.get_or("h", Constraint::Positive, 1.0)?,
        )
    }

    fn matrix_with_beta(&self, beta: f64, eta: &ProbVector) -> StochMatrix {
        let stay_s = (-self.h * beta * eta.get(2)).exp();
        let stay_e = (-self.h * self.rho).exp();
        let stay_i = (-self.h * self.gamma).exp();
        StochMatrix::new(vec![
            vec![stay_s, 1.0 - stay_s, 0.0, 0.0],
            vec![0.0, stay_e, 1.0 - stay_e, 0.0],
            vec![0.0, 0.0, stay_i, 1.0 - stay_i],
            vec![0.0, 0.0, 0.0, 1.0],
        ])
        .expect("complementary rows are stochastic")
    }

    pub fn matrix(&self, eta: &ProbVector) -> StochMatrix {
        self.matrix_with_beta(self.beta, eta)
    }
}

/// SEIR kernel with exponentially decaying transmission after an
/// intervention at step `t_star`: `beta_t = beta` before, and
/// `beta * exp(-lambda * (t - t_star))` from `t_star` on.
#[derive(Debug, Clone, PartialEq)]
pub struct EbolaKernel {
    pub seir: SeirKernel,
    pub lambda: f64,
    pub t_star: u64,
}

impl EbolaKernel {
    pub const M: usize = 4;

    pub fn new(
        beta: f64,
        lambda: f64,
        rho: f64,
        gamma: f64,
        h: f64,
        t_star: u64,
    ) -> Result<Self, TypeError> {
        ParamRecord::new()
            .with("lambda", lambda)
            .require("lambda", Constraint::NonNegative)?;
        Ok(EbolaKernel {
            seir: SeirKernel::new(beta, rho, gamma, h)?,
            lambda,
            t_star,
        })
    }

    pub fn from_params(p: &ParamRecord) -> Result<Self, TypeError> {
        EbolaKernel::new(
            p.require("beta", Constraint::NonNegative)?,
            p.require("lambda", Constraint::NonNegative)?,
            p.require("rho", Constraint::NonNegative)?,
            p.require("gamma", Constraint::NonNegative)?,
            p.get_or("h", Constraint::Positive, 1.0)?,
            p.require("t_star", Constraint::NonNegative)? as u64,
        )
    }

    /// Effective transmission rate at step `t`.
    pub fn beta_at(&self, t: u64) -> f64 {
        if t < self.t_star {
            self.seir.beta
        } else {
            self.seir.beta * (-self.lambda * (t - self.t_star) as f64).exp()
        }
    }

    pub fn matrix(&self, t: u64, eta: &ProbVector) -> StochMatrix {
        self.seir.matrix_with_beta(self.beta_at(t), eta)
    }
}

/// Transmission-rate schedule over steps `t = 1, 2, ...`.
#[derive(Debug, Clone, PartialEq)]
pub enum BetaSchedule {
    Constant(f64),
    /// `Path(v)` uses `v[t - 1]` at step `t`, clamped to the last entry.
    Path(Vec<f64>),
}

impl BetaSchedule {
    pub fn value_at(&self, t: u64) -> f64 {
        match self {
            BetaSchedule::Constant(b) => *b,
            BetaSchedule::Path(path) => {
                let idx = (t.max(1) as usize - 1).min(path.len() - 1);
                path[idx]
            }
        }
    }
}

/// Departure-fraction schedule for the travel model.
#[derive(Debug, Clone, PartialEq)]
pub enum DepartureSchedule {
    Constant(f64),
    /// Constant fraction until travel restrictions at step `cutoff`, zero
    /// from then on.
    ConstantUntil { f: f64, cutoff: u64 },
    Path(Vec<f64>),
}

impl DepartureSchedule {
    pub fn value_at(&self, t: u64) -> f64 {
        match self {
            DepartureSchedule::Constant(f) => *f,
            DepartureSchedule::ConstantUntil { f, cutoff } => {
                if t < *cutoff {
                    *f
                } else {
                    0.0
                }
            }
            DepartureSchedule::Path(path) => {
                let idx = (t.max(1) as usize - 1).min(path.len() - 1);
                path[idx]
            }
        }
    }
}

/// Ten-compartment two-stage SEIR model of transmission in Wuhan with
/// international departures.
///
/// Compartment order (0-based index):
///
/// | idx | meaning |
/// |-----|---------|
/// | 0 | susceptible (in Wuhan) |
/// | 1, 2 | exposed in Wuhan, incubation stages 1 and 2 |
/// | 3, 4 | infective in Wuhan, disease stages 1 and 2 |
/// | 5, 6 | exposed travellers, incubation stages 1 and 2 |
/// | 7, 8 | infective travellers, disease stages 1 and 2 |
/// | 9 | removed (absorbing) |
///
/// New infection probability over a step is
/// `p_t = 1 - exp(-h * beta_t * (eta_3 + eta_4))`: only the Wuhan infective
/// stages transmit. New infections depart with probability `f_t`. Incubation
/// stages advance with `p_C = 1 - exp(-2 h rho)` and disease stages with
/// `p_R = 1 - exp(-2 h gamma)`.
#[derive(Debug, Clone, PartialEq)]
pub struct CovidKernel {
    pub beta: BetaSchedule,
    pub rho: f64,
    pub gamma: f64,
    pub h: f64,
    pub departure: DepartureSchedule,
}

impl CovidKernel {
    pub const M: usize = 10;

    /// Susceptible, exposed-Wuhan 1/2, infective-Wuhan 1/2,
    /// exposed-traveller 1/2, infective-traveller 1/2, removed.
    pub const COMPARTMENTS: [&'static str; 10] = [
        "S", "E1W", "E2W", "I1W", "I2W", "E1T", "E2T", "I1T", "I2T", "R",
    ];

    /// Transition cell observed as new symptomatic cases in Wuhan
    /// (incubation stage 2 to disease stage 1), 0-based.
    pub const ONSET_WUHAN: (usize, usize) = (2, 3);
    /// Transition cell observed as new symptomatic cases internationally.
    pub const ONSET_TRAVEL: (usize, usize) = (6, 7);

    pub fn new(
        beta: BetaSchedule,
        rho: f64,
        gamma: f64,
        h: f64,
        departure: DepartureSchedule,
    ) -> Result<Self, TypeError> {
        for (name, v, c) in [
            ("rho", rho, Constraint::NonNegative),
            ("gamma", gamma, Constraint::NonNegative),
            ("h", h, Constraint::Positive),
        ] {
            ParamRecord::new().with(name, v).require(name, c)?;
        }
        let check_unit = |name: &str, v: f64| {
            ParamRecord::new()
                .with(name, v)
                .require(name, Constraint::UnitInterval)
                .map(|_| ())
        };
        match &departure {
            DepartureSchedule::Constant(f) => check_unit("f", *f)?,
            DepartureSchedule::ConstantUntil { f, .. } => check_unit("f", *f)?,
            DepartureSchedule::Path(path) => {
                for &f in path {
                    check_unit("f", f)?;
                }
            }
        }
        Ok(CovidKernel {
            beta,
            rho,
            gamma,
            h,
            departure,
        })
    }

    pub fn from_params(p: &ParamRecord) -> Result<Self, TypeError> {
        let f = p.require("f", Constraint::UnitInterval)?;
        let departure = match p.get("t_restrict") {
            Some(cutoff) => DepartureSchedule::ConstantUntil {
                f,
                cutoff: cutoff as u64,
            },
            None => DepartureSchedule::Constant(f),
        };
        CovidKernel::new(
            BetaSchedule::Constant(p.require("beta", Constraint::NonNegative)?),
            p.require("rho", Constraint::NonNegative)?,
            p.require("gamma", Constraint::NonNegative)?,
            p.get_or("h", Constraint::Positive, 1.0)?,
            departure,
        )
    }

    pub fn matrix_with_beta(&self, t: u64, eta: &ProbVector, beta_t: f64) -> StochMatrix {
        let m = Self::M;
        let f_t = self.departure.value_at(t);
        let p_t = 1.0 - (-self.h * beta_t * (eta.get(3) + eta.get(4))).exp();
        let p_c = 1.0 - (-2.0 * self.h * self.rho).exp();
        let p_r = 1.0 - (-2.0 * self.h * self.gamma).exp();

        let mut rows = vec![vec![0.0; m]; m];
        // susceptible: stay, or become exposed in Wuhan / as a traveller
        rows[0][0] = 1.0 - p_t;
        rows[0][1] = (1.0 - f_t) * p_t;
        rows[0][5] = f_t * p_t;
        // two incubation stages then two disease stages, per branch
        for (start, advance) in [(1usize, p_c), (2, p_c), (5, p_c), (6, p_c)] {
            rows[start][start] = 1.0 - advance;
            rows[start][start + 1] = advance;
        }
        rows[3][3] = 1.0 - p_r;
        rows[3][4] = p_r;
        rows[7][7] = 1.0 - p_r;
        rows[7][8] = p_r;
        // final disease stages absorb into removed
        rows[4][4] = 1.0 - p_r;
        rows[4][9] = p_r;
        rows[8][8] = 1.0 - p_r;
        rows[8][9] = p_r;
        rows[9][9] = 1.0;
        StochMatrix::new(rows).expect("complementary rows are stochastic")
    }

    pub fn matrix(&self, t: u64, eta: &ProbVector) -> StochMatrix {
        self.matrix_with_beta(t, eta, self.beta.value_at(t))
    }
}

/// User-supplied kernel rule.
#[derive(Clone)]
pub struct CustomKernel {
    pub m: usize,
    pub rule: Arc<dyn Fn(u64, &ProbVector) -> StochMatrix + Send + Sync>,
}

impl fmt::Debug for CustomKernel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CustomKernel").field("m", &self.m).finish()
    }
}

/// A kernel family together with its parameters.
#[derive(Debug, Clone)]
pub enum KernelSpec {
    Seir(SeirKernel),
    Ebola(EbolaKernel),
    Covid(CovidKernel),
    Custom(CustomKernel),
}

impl KernelSpec {
    /// Build a named family from a parameter record. The recognized names
    /// are `seir`, `ebola` and `covid`.
    pub fn from_family(family: &str, theta: &ParamRecord) -> Result<Self, TypeError> {
        match family {
            "seir" => Ok(KernelSpec::Seir(SeirKernel::from_params(theta)?)),
            "ebola" => Ok(KernelSpec::Ebola(EbolaKernel::from_params(theta)?)),
            "covid" => Ok(KernelSpec::Covid(CovidKernel::from_params(theta)?)),
            other => Err(TypeError::InvalidModel(format!(
                "unknown kernel family '{other}'"
            ))),
        }
    }

    pub fn family_name(&self) -> &'static str {
        match self {
            KernelSpec::Seir(_) => "seir",
            KernelSpec::Ebola(_) => "ebola",
            KernelSpec::Covid(_) => "covid",
            KernelSpec::Custom(_) => "custom",
        }
    }

    pub fn m(&self) -> usize {
        match self {
            KernelSpec::Seir(_) => SeirKernel::M,
            KernelSpec::Ebola(_) => EbolaKernel::M,
            KernelSpec::Covid(_) => CovidKernel::M,
            KernelSpec::Custom(c) => c.m,
        }
    }

    /// Transition matrix for the step into time `t` (`t >= 1`), evaluated at
    /// population proportions `eta`.
    pub fn matrix(&self, t: u64, eta: &ProbVector) -> StochMatrix {
        match self {
            KernelSpec::Seir(k) => k.matrix(eta),
            KernelSpec::Ebola(k) => k.matrix(t, eta),
            KernelSpec::Covid(k) => k.matrix(t, eta),
            KernelSpec::Custom(c) => (c.rule)(t, eta),
        }
    }

    /// Transition matrix with the transmission rate overridden by `beta`,
    /// leaving every other parameter (including any intervention decay or
    /// departure schedule) in force. This is what the particle filter
    /// evaluates per particle.
    pub fn matrix_with_rate(
        &self,
        t: u64,
        eta: &ProbVector,
        beta: f64,
    ) -> Result<StochMatrix, TypeError> {
        match self {
            KernelSpec::Seir(k) => Ok(SeirKernel { beta, ..k.clone() }.matrix(eta)),
            KernelSpec::Ebola(k) => {
                let decayed = if t < k.t_star {
                    beta
                } else {
                    beta * (-k.lambda * (t - k.t_star) as f64).exp()
                };
                Ok(k.seir.matrix_with_beta(decayed, eta))
            }
            KernelSpec::Covid(k) => Ok(k.matrix_with_beta(t, eta, beta)),
            KernelSpec::Custom(_) => Err(TypeError::InvalidModel(
                "custom kernels do not expose a transmission rate".to_string(),
            )),
        }
    }

    /// Clone of this kernel with the transmission rate pinned to `beta`,
    /// used by the particle filter to evaluate per-particle kernels.
    pub fn with_transmission_rate(&self, beta: f64) -> Result<KernelSpec, TypeError> {
        match self {
            KernelSpec::Seir(k) => Ok(KernelSpec::Seir(SeirKernel { beta, ..k.clone() })),
            KernelSpec::Ebola(k) => Ok(KernelSpec::Ebola(EbolaKernel {
                seir: SeirKernel {
                    beta,
                    ..k.seir.clone()
                },
                ..k.clone()
            })),
            KernelSpec::Covid(k) => Ok(KernelSpec::Covid(CovidKernel {
                beta: BetaSchedule::Constant(beta),
                ..k.clone()
            })),
            KernelSpec::Custom(_) => Err(TypeError::InvalidModel(
                "custom kernels do not expose a transmission rate".to_string(),
            )),
        }
    }

    /// Compartments whose joint emptiness means the epidemic is extinct
    /// (exposed and infective stages). `None` for custom kernels.
    pub fn active_compartments(&self) -> Option<Vec<usize>> {
        match self {
            KernelSpec::Seir(_) | KernelSpec::Ebola(_) => Some(vec![1, 2]),
            KernelSpec::Covid(_) => Some((1..=8).collect()),
            KernelSpec::Custom(_) => None,
        }
    }

    /// Conventional initial distribution for the family: one expected index
    /// case among `n` otherwise susceptible individuals.
    pub fn default_pi0(&self, n: u64) -> Option<ProbVector> {
        match self {
            KernelSpec::Seir(_) | KernelSpec::Ebola(_) => {
                let e0 = 1.0 / n as f64;
                Some(ProbVector::new(vec![1.0 - e0, e0, 0.0, 0.0]).expect("valid simplex"))
            }
            _ => None,
        }
    }
}

/// The full model: population size, initial distribution and kernel.
#[derive(Debug, Clone)]
pub struct ModelSpec {
    pub n: u64,
    pub pi0: ProbVector,
    pub kernel: KernelSpec,
}

impl ModelSpec {
    pub fn new(n: u64, pi0: ProbVector, kernel: KernelSpec) -> Result<Self, TypeError> {
        if n < 1 {
            return Err(TypeError::InvalidModel("population must be >= 1".into()));
        }
        let m = kernel.m();
        if m < 2 {
            return Err(TypeError::InvalidModel(
                "at least two compartments required".into(),
            ));
        }
        if pi0.len() != m {
            return Err(TypeError::DimensionMismatch {
                expected: m,
                got: pi0.len(),
            });
        }
        Ok(ModelSpec { n, pi0, kernel })
    }

    pub fn m(&self) -> usize {
        self.kernel.m()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn eta4(e: [f64; 4]) -> ProbVector {
        ProbVector::new(e.to_vec()).unwrap()
    }

    #[test]
    fn seir_no_infectives_means_no_transmission() {
        let k = SeirKernel::new(0.2, 0.2, 0.143, 1.0).unwrap();
        let mat = k.matrix(&eta4([1.0, 0.0, 0.0, 0.0]));
        assert_eq!(mat.row(0), &[1.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn seir_matches_closed_form_entries() {
        let k = SeirKernel::new(0.2, 0.2, 0.143, 1.0).unwrap();
        let mat = k.matrix(&eta4([0.0, 0.0, 1.0, 0.0]));
        assert_abs_diff_eq!(mat.get(0, 0), (-0.2f64).exp(), epsilon = 1e-15);
        assert_abs_diff_eq!(mat.get(0, 0), 0.8187, epsilon = 5e-5);
        assert_abs_diff_eq!(mat.get(2, 3), 1.0 - (-0.143f64).exp(), epsilon = 1e-15);
        assert_abs_diff_eq!(mat.get(2, 3), 0.1333, epsilon = 1e-4);
        assert_eq!(mat.row(3), &[0.0, 0.0, 0.0, 1.0]);
    }

    #[test]
    fn ebola_before_intervention_equals_seir() {
        let seir = SeirKernel::new(0.2, 0.2, 0.143, 1.0).unwrap();
        let ebola = EbolaKernel::new(0.2, 0.2, 0.2, 0.143, 1.0, 130).unwrap();
        let eta = eta4([0.7, 0.1, 0.15, 0.05]);
        for t in [1, 60, 129] {
            assert_eq!(ebola.matrix(t, &eta), seir.matrix(&eta));
        }
    }

    #[test]
    fn ebola_decay_after_intervention() {
        let ebola = EbolaKernel::new(0.2, 0.2, 0.2, 0.143, 1.0, 130).unwrap();
        assert_abs_diff_eq!(ebola.beta_at(135), 0.2 * (-1.0f64).exp(), epsilon = 1e-15);
        assert_abs_diff_eq!(ebola.beta_at(135), 0.0736, epsilon = 5e-5);
    }

    #[test]
    fn ebola_zero_lambda_never_decays() {
        let seir = SeirKernel::new(0.2, 0.2, 0.143, 1.0).unwrap();
        let ebola = EbolaKernel::new(0.2, 0.0, 0.2, 0.143, 1.0, 130).unwrap();
        let eta = eta4([0.7, 0.1, 0.15, 0.05]);
        for t in [1, 130, 500] {
            assert_eq!(ebola.matrix(t, &eta), seir.matrix(&eta));
        }
    }

    fn covid_eta(i1w: f64, i2w: f64) -> ProbVector {
        let mut v = vec![0.0; 10];
        v[3] = i1w;
        v[4] = i2w;
        v[0] = 1.0 - i1w - i2w;
        ProbVector::new(v).unwrap()
    }

    #[test]
    fn covid_no_departures_after_restrictions() {
        let k = CovidKernel::new(
            BetaSchedule::Constant(0.6),
            0.2,
            0.3,
            1.0,
            DepartureSchedule::ConstantUntil { f: 0.01, cutoff: 5 },
        )
        .unwrap();
        let eta = covid_eta(0.1, 0.05);
        assert!(k.matrix(4, &eta).get(0, 5) > 0.0);
        assert_eq!(k.matrix(5, &eta).get(0, 5), 0.0);
        assert_eq!(k.matrix(9, &eta).get(0, 5), 0.0);
    }

    #[test]
    fn covid_no_wuhan_infectives_means_identity_susceptible_row() {
        let k = CovidKernel::new(
            BetaSchedule::Constant(0.6),
            0.2,
            0.3,
            1.0,
            DepartureSchedule::Constant(0.01),
        )
        .unwrap();
        // mass in traveller infective stages must not transmit
        let mut v = vec![0.0; 10];
        v[7] = 0.2;
        v[8] = 0.1;
        v[0] = 0.7;
        let eta = ProbVector::new(v).unwrap();
        let row = k.matrix(1, &eta).row(0).to_vec();
        assert_eq!(row[0], 1.0);
        assert!(row[1..].iter().all(|&x| x == 0.0));
    }

    #[test]
    fn covid_equal_stage_rates() {
        let k = CovidKernel::new(
            BetaSchedule::Constant(0.6),
            0.25,
            0.25,
            1.0,
            DepartureSchedule::Constant(0.0),
        )
        .unwrap();
        let mat = k.matrix(1, &covid_eta(0.1, 0.0));
        let expected = 1.0 - (-2.0 * 0.25f64).exp();
        assert_abs_diff_eq!(mat.get(1, 2), expected, epsilon = 1e-15);
        assert_abs_diff_eq!(mat.get(3, 4), expected, epsilon = 1e-15);
    }

    #[test]
    fn covid_removed_is_absorbing() {
        let k = CovidKernel::new(
            BetaSchedule::Constant(0.6),
            0.2,
            0.3,
            1.0,
            DepartureSchedule::Constant(0.01),
        )
        .unwrap();
        let row = k.matrix(1, &covid_eta(0.1, 0.05)).row(9).to_vec();
        assert_eq!(row[9], 1.0);
        assert_eq!(row.iter().sum::<f64>(), 1.0);
    }

    #[test]
    fn registry_builds_named_families() {
        let theta = ParamRecord::new()
            .with("beta", 0.2)
            .with("lambda", 0.2)
            .with("rho", 0.2)
            .with("gamma", 0.143)
            .with("h", 1.0)
            .with("t_star", 130.0);
        let k = KernelSpec::from_family("ebola", &theta).unwrap();
        assert_eq!(k.family_name(), "ebola");
        assert_eq!(k.m(), 4);
        assert!(KernelSpec::from_family("nope", &theta).is_err());
    }

    #[test]
    fn matrix_with_rate_agrees_with_cloned_override() {
        let eta = eta4([0.6, 0.2, 0.15, 0.05]);
        let kernels = [
            KernelSpec::Seir(SeirKernel::new(0.2, 0.3, 0.1, 1.0).unwrap()),
            KernelSpec::Ebola(EbolaKernel::new(0.2, 0.15, 0.3, 0.1, 1.0, 20).unwrap()),
        ];
        for k in kernels {
            for t in [1u64, 20, 40] {
                let a = k.matrix_with_rate(t, &eta, 0.45).unwrap();
                let b = k.with_transmission_rate(0.45).unwrap().matrix(t, &eta);
                assert_eq!(a, b, "family {} t {t}", k.family_name());
            }
        }
    }

    #[test]
    fn transmission_rate_override() {
        let theta = ParamRecord::new()
            .with("beta", 0.2)
            .with("rho", 0.2)
            .with("gamma", 0.143);
        let k = KernelSpec::from_family("seir", &theta).unwrap();
        let k2 = k.with_transmission_rate(0.7).unwrap();
        let eta = eta4([0.0, 0.0, 1.0, 0.0]);
        assert_abs_diff_eq!(k2.matrix(1, &eta).get(0, 0), (-0.7f64).exp(), epsilon = 1e-15);
    }

    proptest! {
        #[test]
        fn all_families_produce_stochastic_rows(
            beta in 0.0..3.0f64,
            lambda in 0.0..1.0f64,
            rho in 0.0..2.0f64,
            gamma in 0.0..2.0f64,
            h in 0.1..2.0f64,
            f in 0.0..1.0f64,
            raw in proptest::collection::vec(0.01..1.0f64, 10),
            t in 1u64..300,
        ) {
            let total: f64 = raw.iter().sum();
            let eta10 = ProbVector::new(raw.iter().map(|x| x / total).collect()).unwrap();
            let eta4v = ProbVector::new(raw[..4].iter().map(|x| x / raw[..4].iter().sum::<f64>()).collect()).unwrap();

            let kernels = [
                KernelSpec::Seir(SeirKernel::new(beta, rho, gamma, h).unwrap()),
                KernelSpec::Ebola(EbolaKernel::new(beta, lambda, rho, gamma, h, 130).unwrap()),
                KernelSpec::Covid(CovidKernel::new(
                    BetaSchedule::Constant(beta), rho, gamma, h,
                    DepartureSchedule::ConstantUntil { f, cutoff: 150 },
                ).unwrap()),
            ];
            for kernel in kernels {
                let eta = if kernel.m() == 4 { &eta4v } else { &eta10 };
                let mat = kernel.matrix(t, eta);
                for i in 0..kernel.m() {
                    let row = mat.row(i);
                    prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
                    prop_assert!(row.iter().all(|&x| (0.0..=1.0).contains(&x)));
                }
            }
        }

        #[test]
        fn seir_depends_only_on_infective_proportion(
            s in 0.0..1.0f64,
            e in 0.0..1.0f64,
            r in 0.0..1.0f64,
        ) {
            let k = SeirKernel::new(0.8, 0.3, 0.2, 1.0).unwrap();
            let i = 0.25;
            let rest = 1.0 - i;
            let total = s + e + r;
            let (a, b, c) = (rest * s / total, rest * e / total, rest * r / total);
            let eta1 = ProbVector::new(vec![a, b, i, c]).unwrap();
            let eta2 = ProbVector::new(vec![c, a, i, b]).unwrap();
            prop_assert_eq!(k.matrix(&eta1), k.matrix(&eta2));
        }
    }
}
