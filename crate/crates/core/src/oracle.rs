//! Monte Carlo evaluation of production policies.
//!
//! Paths follow the controlled dynamics
//! `dE = eta(q) dt`, `dY = (mu + beta eta(q) - gamma lambda(q)) dt + gamma dW^Q`
//! with Euler-Maruyama steps, so the value of a policy is a plain sample mean
//! without likelihood weights. Each path draws from its own ChaCha8 stream
//! (stream index = path index) with standard normals from `rand_distr`, and
//! all reductions run sequentially over the path-ordered records, so results
//! do not depend on the number of worker threads.

use std::fmt;
use std::io::{self, Write};
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::model::{FirmModel, MarketDynamics, ModelError};
use crate::solver::PolicyStack;

/// Feedback production rule `q(t, e, y)`.
#[derive(Clone)]
pub enum MarkovPolicy {
    Constant(f64),
    Analytic(Arc<dyn Fn(f64, f64, f64) -> f64 + Send + Sync>),
    /// Frozen solver controls, bilinear in space, piecewise constant in time.
    Grid(Arc<PolicyStack>),
}

impl MarkovPolicy {
    pub fn analytic(f: impl Fn(f64, f64, f64) -> f64 + Send + Sync + 'static) -> Self {
        Self::Analytic(Arc::new(f))
    }

    /// Production at `(t, e, y)`, never negative.
    #[inline]
    pub fn rate(&self, t: f64, e: f64, y: f64) -> f64 {
        let q = match self {
            Self::Constant(c) => *c,
            Self::Analytic(f) => f(t, e, y),
            Self::Grid(stack) => stack.control(t, e, y),
        };
        q.max(0.0)
    }
}

impl fmt::Debug for MarkovPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Constant(c) => write!(f, "Constant({c})"),
            Self::Analytic(_) => f.write_str("Analytic(<fn>)"),
            Self::Grid(stack) => write!(f, "Grid({} levels)", stack.len()),
        }
    }
}

/// Where and how to simulate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimulationSpec {
    pub t0: f64,
    pub e0: f64,
    pub y0: f64,
    pub n_paths: usize,
    pub n_steps: usize,
    pub seed: u64,
}

impl SimulationSpec {
    pub fn new(t0: f64, e0: f64, y0: f64, n_paths: usize, n_steps: usize, seed: u64) -> Self {
        Self {
            t0,
            e0,
            y0,
            n_paths,
            n_steps,
            seed,
        }
    }
}

/// Terminal state and running integrals of one path.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct PathRecord {
    pub y_final: f64,
    pub e_final: f64,
    /// `int reward dt`, including the entropy term when it is active.
    pub reward: f64,
    /// `int pi dt`.
    pub profit: f64,
    /// `int lambda^2 dt`.
    pub premium_sq: f64,
    /// `int lambda dW^Q`.
    pub premium_dw: f64,
}

impl PathRecord {
    #[inline]
    pub fn penalized(&self) -> bool {
        self.y_final >= 0.0
    }
}

/// Sample mean with its standard error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct McEstimate {
    pub mean: f64,
    pub std_error: f64,
    pub n_paths: usize,
    pub seed: u64,
    pub n_steps: usize,
}

impl McEstimate {
    fn from_samples(samples: impl Iterator<Item = f64> + Clone, spec: &SimulationSpec) -> Self {
        let (mean, sd) = mean_and_std(samples);
        Self {
            mean,
            std_error: sd / (spec.n_paths as f64).sqrt(),
            n_paths: spec.n_paths,
            seed: spec.seed,
            n_steps: spec.n_steps,
        }
    }

    /// `|mean - target| <= k * std_error + slack`.
    pub fn within(&self, target: f64, k: f64, slack: f64) -> bool {
        (self.mean - target).abs() <= k * self.std_error + slack
    }
}

/// Writes `quantity,mean,std_error,n_paths,seed` rows.
pub fn write_estimates_csv<W: Write>(mut out: W, rows: &[(&str, McEstimate)]) -> io::Result<()> {
    writeln!(out, "quantity,mean,std_error,n_paths,seed")?;
    for (name, est) in rows {
        writeln!(
            out,
            "{name},{:.16e},{:.16e},{},{}",
            est.mean, est.std_error, est.n_paths, est.seed
        )?;
    }
    Ok(())
}

/// Two-pass sample mean and unbiased standard deviation.
fn mean_and_std(samples: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let (sum, n) = samples.clone().fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = sum / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let ss: f64 = samples.map(|x| (x - mean) * (x - mean)).sum();
    (mean, (ss / (n - 1) as f64).sqrt())
}

/// Simulates `spec.n_paths` paths; records come back in path order.
///
/// Returns no records when `n_steps` is zero or `t0` is not before the horizon.
pub fn simulate_paths(
    policy: &MarkovPolicy,
    market: &MarketDynamics,
    firm: &FirmModel,
    spec: &SimulationSpec,
) -> Vec<PathRecord> {
    let horizon = market.horizon();
    if spec.n_steps == 0 || !(spec.t0 < horizon) {
        return Vec::new();
    }
    let h = (horizon - spec.t0) / spec.n_steps as f64;
    let sqrt_h = h.sqrt();
    let beta = market.beta();
    (0..spec.n_paths)
        .into_par_iter()
        .map(|path| {
            let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
            rng.set_stream(path as u64);
            let (mut e, mut y) = (spec.e0, spec.y0);
            let mut rec = PathRecord::default();
            for k in 0..spec.n_steps {
                let t = spec.t0 + k as f64 * h;
                let q = policy.rate(t, e, y);
                let eta = firm.emission(t, q);
                let lambda = firm.premium(t, q);
                let gamma = market.gamma(t, y);
                let dw = sqrt_h * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut rng);
                rec.reward += firm.reward_rate(t, q) * h;
                rec.profit += firm.profit(t, q) * h;
                rec.premium_sq += lambda * lambda * h;
                rec.premium_dw += lambda * dw;
                y += (market.mu(t, y) + beta * eta - gamma * lambda) * h + gamma * dw;
                e += eta * h;
            }
            rec.y_final = y;
            rec.e_final = e;
            rec
        })
        .collect()
}

/// Estimate of `J_q = E[int reward dt - alpha 1{Y_T >= 0} E_T]`.
pub fn evaluate_policy(
    policy: &MarkovPolicy,
    market: &MarketDynamics,
    firm: &FirmModel,
    spec: &SimulationSpec,
) -> McEstimate {
    let alpha = market.alpha();
    let records = simulate_paths(policy, market, firm, spec);
    payoff_estimate(&records, alpha, spec)
}

/// [`evaluate_policy`] on records that were already simulated.
pub fn payoff_estimate(records: &[PathRecord], alpha: f64, spec: &SimulationSpec) -> McEstimate {
    McEstimate::from_samples(
        records.iter().map(move |r| {
            r.reward - if r.penalized() { alpha * r.e_final } else { 0.0 }
        }),
        spec,
    )
}

/// Estimate of the allowance price `alpha P(Y_T >= 0)` with the binomial
/// standard error.
pub fn estimate_allowance_price(
    policy: &MarkovPolicy,
    market: &MarketDynamics,
    firm: &FirmModel,
    spec: &SimulationSpec,
) -> McEstimate {
    let records = simulate_paths(policy, market, firm, spec);
    price_estimate(&records, market.alpha(), spec)
}

/// [`estimate_allowance_price`] on records that were already simulated.
pub fn price_estimate(records: &[PathRecord], alpha: f64, spec: &SimulationSpec) -> McEstimate {
    let n = records.len();
    let hits = records.iter().filter(|r| r.penalized()).count();
    let p = if n == 0 { f64::NAN } else { hits as f64 / n as f64 };
    McEstimate {
        mean: alpha * p,
        std_error: alpha * (p * (1.0 - p) / n as f64).sqrt(),
        n_paths: spec.n_paths,
        seed: spec.seed,
        n_steps: spec.n_steps,
    }
}

/// Lagrange multiplier of the budget constraint for exponential utility.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DualMultiplier {
    /// `a exp(-a (x + E[B_T]) - E[int lambda^2 dt] / 2)`.
    pub multiplier: f64,
    /// `|mean of (U')^{-1}(y dQ/dP) - (x + B_T)|` over the same paths.
    pub budget_gap: f64,
    pub gap_std_error: f64,
    /// Estimate of `E[B_T]`, `B_T = int pi dt - alpha 1{Y_T >= 0} E_T`.
    pub terminal_wealth: McEstimate,
}

/// Multiplier `y_q` and the budget-constraint residual.
///
/// `ln dQ/dP = -int lambda dW^Q + 1/2 int lambda^2 dt` along each simulated
/// path, and `(U')^{-1}(z) = -ln(z / a) / a`.
pub fn dual_multiplier(
    wealth: f64,
    policy: &MarkovPolicy,
    market: &MarketDynamics,
    firm: &FirmModel,
    spec: &SimulationSpec,
) -> Result<DualMultiplier, ModelError> {
    let a = firm.risk_aversion();
    if !(a > 0.0) {
        return Err(ModelError::Domain(format!(
            "risk aversion must be > 0, got {a}"
        )));
    }
    let records = simulate_paths(policy, market, firm, spec);
    Ok(dual_estimate(&records, wealth, a, market.alpha(), spec))
}

/// [`dual_multiplier`] on records that were already simulated, with risk
/// aversion `a > 0`.
pub fn dual_estimate(
    records: &[PathRecord],
    wealth: f64,
    a: f64,
    alpha: f64,
    spec: &SimulationSpec,
) -> DualMultiplier {
    let terminal = |r: &PathRecord| r.profit - if r.penalized() { alpha * r.e_final } else { 0.0 };
    let wealth_est = McEstimate::from_samples(records.iter().map(terminal), spec);
    let (entropy, _) = mean_and_std(records.iter().map(|r| 0.5 * r.premium_sq));
    let entropy = if records.is_empty() { 0.0 } else { entropy };
    let mean_b = if records.is_empty() { 0.0 } else { wealth_est.mean };
    let log_ratio = -a * (wealth + mean_b) - entropy;
    let multiplier = a * log_ratio.exp();
    let gaps = records.iter().map(move |r| {
        let log_density = -r.premium_dw + 0.5 * r.premium_sq;
        -(log_ratio + log_density) / a - (wealth + terminal(r))
    });
    let gap = McEstimate::from_samples(gaps, spec);
    let (budget_gap, gap_std_error) = if records.is_empty() {
        (0.0, 0.0)
    } else {
        (gap.mean.abs(), gap.std_error)
    };
    DualMultiplier {
        multiplier,
        budget_gap,
        gap_std_error,
        terminal_wealth: wealth_est,
    }
}
