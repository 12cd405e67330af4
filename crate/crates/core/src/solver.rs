//! Backward splitting scheme for the producer's HJB equation.
//!
//! Each step from `t_{n+1}` to `t_n` runs
//!
//! 1. a heat half-step `V_t + gamma^2 / 2 V_yy = 0`, implicit in `y`, one
//!    tridiagonal solve per `e` row with the wall values of `t_{n+1}`;
//! 2. a frozen control `phi^n`, the Hamiltonian maximizer evaluated with the
//!    gradients of the heat output;
//! 3. a semi-Lagrangian transport half-step: each node follows the
//!    characteristic of `phi^n` for one step, reads the heat output there by
//!    bilinear interpolation and collects `reward(phi^n) dt`.
//!
//! The walls `y = +-L_y` carry the deterministic values of
//! [`crate::grid::upper_y_boundary`] and [`crate::grid::lower_y_boundary`].
//! The `e` direction needs no wall condition: characteristics only move
//! towards larger `e`, and feet beyond `L_e` are extrapolated linearly.

use std::fmt::Write as _;
use std::fs;
use std::io::{self, BufWriter};
use std::path::Path;

use rayon::prelude::*;
use thiserror::Error;

use crate::grid::{
    build_terminal_field, e_difference_at, y_difference_at, y_second_difference_at, Field,
    GridError, GridSpec, WallValues,
};
use crate::model::{
    correction_tau, hamiltonian_argmax, small_producer_policy, FirmModel, MarketDynamics,
    ModelError, ProducerMode,
};
use crate::tridiag::TridiagonalFactor;

#[derive(Debug, Error)]
pub enum SolverError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error("invalid solver configuration: {0}")]
    InvalidConfig(String),
    #[error("non-finite value at time level {level} (t = {time})")]
    NonFinite { level: usize, time: f64 },
    #[error("singular tridiagonal system at t = {time}")]
    Singular { time: f64 },
    #[error("no stored level at t = {0}")]
    MissingLevel(f64),
    #[error("policy and correction masks disagree at {count} nodes (worst identity gap {worst:.3e})")]
    Consistency { count: usize, worst: f64 },
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Everything a solve needs.
#[derive(Debug, Clone)]
pub struct SolverConfig {
    pub grid: GridSpec,
    pub market: MarketDynamics,
    pub firm: FirmModel,
    /// Snapshot stride in time levels; `t = 0` is always stored.
    pub store_every: usize,
    /// Stride for keeping the frozen controls `phi^n` for simulation;
    /// `None` keeps none.
    pub policy_every: Option<usize>,
    /// Time weighting of the heat half-step, in `[1/2, 1]`.
    pub diffusion_theta: f64,
    /// Threshold for the comparison mask.
    pub mask_epsilon: f64,
}

impl SolverConfig {
    pub fn new(grid: GridSpec, market: MarketDynamics, firm: FirmModel) -> Self {
        Self {
            grid,
            market,
            firm,
            store_every: grid.n_t,
            policy_every: None,
            diffusion_theta: 1.0,
            mask_epsilon: 1e-6,
        }
    }

    pub fn validate(&self) -> Result<(), SolverError> {
        if self.store_every == 0 {
            return Err(SolverError::InvalidConfig("store_every must be >= 1".into()));
        }
        if self.policy_every == Some(0) {
            return Err(SolverError::InvalidConfig("policy_every must be >= 1".into()));
        }
        if !(0.5..=1.0).contains(&self.diffusion_theta) {
            return Err(SolverError::InvalidConfig(format!(
                "diffusion_theta must lie in [0.5, 1], got {}",
                self.diffusion_theta
            )));
        }
        if !(self.mask_epsilon >= 0.0) {
            return Err(SolverError::InvalidConfig("mask_epsilon must be >= 0".into()));
        }
        if self.firm.mode() == ProducerMode::SmallProducer {
            return Err(SolverError::InvalidConfig(
                "the small producer has no HJB equation; use small_producer_policy".into(),
            ));
        }
        Ok(())
    }
}

/// Heat half-step `V_t + gamma^2 / 2 V_yy = 0` backward from `t_from` to
/// `t_to`, with Dirichlet data `walls` on `y = +-L_y`.
///
/// `theta = 1` is fully implicit, `theta = 1/2` is Crank-Nicolson.
pub fn heat_half_step(
    field: &Field,
    market: &MarketDynamics,
    t_from: f64,
    t_to: f64,
    walls: &WallValues,
    theta: f64,
) -> Result<Field, SolverError> {
    if !(t_to < t_from) {
        return Err(SolverError::InvalidConfig(format!(
            "heat step must go backward, got {t_from} -> {t_to}"
        )));
    }
    let g = *field.grid();
    let cols = g.cols();
    let n = cols - 2;
    let dt = t_from - t_to;
    let dy2 = g.dy() * g.dy();
    let floor = market.volatility_floor();

    let mut k_to = vec![0.0; cols];
    let mut k_from = vec![0.0; cols];
    for c in 0..cols {
        let y = g.y_of_col(c);
        let (g_to, g_from) = (market.gamma(t_to, y), market.gamma(t_from, y));
        if !(g_to >= floor && g_from >= floor) {
            return Err(SolverError::InvalidConfig(format!(
                "volatility below its floor {floor} at y = {y}"
            )));
        }
        k_to[c] = 0.5 * g_to * g_to * dt / dy2;
        k_from[c] = 0.5 * g_from * g_from * dt / dy2;
    }

    let mut lower = vec![0.0; n];
    let mut diag = vec![0.0; n];
    let mut upper = vec![0.0; n];
    for k in 0..n {
        let a = theta * k_to[k + 1];
        lower[k] = -a;
        diag[k] = 1.0 + 2.0 * a;
        upper[k] = -a;
    }
    let factor =
        TridiagonalFactor::new(&lower, &diag, &upper).ok_or(SolverError::Singular { time: t_to })?;

    let explicit = 1.0 - theta;
    let mut out = vec![0.0; field.values().len()];
    out.par_chunks_mut(cols).enumerate().for_each(|(r, row_out)| {
        let row = field.row(r);
        let e = g.e_of_row(r);
        let (lo_wall, hi_wall) = (walls.lower, walls.upper(e));
        let rhs = &mut row_out[1..cols - 1];
        for k in 0..n {
            let c = k + 1;
            let mut v = row[c];
            if explicit > 0.0 {
                v += explicit * k_from[c] * (row[c - 1] - 2.0 * row[c] + row[c + 1]);
            }
            rhs[k] = v;
        }
        rhs[0] += theta * k_to[1] * lo_wall;
        rhs[n - 1] += theta * k_to[cols - 2] * hi_wall;
        factor.solve(rhs);
        row_out[0] = lo_wall;
        row_out[cols - 1] = hi_wall;
    });
    Ok(Field::from_values(g, t_to, out))
}

/// Frozen control: the Hamiltonian maximizer at every node, with the forward
/// `e` difference and the central `y` difference of `field`.
pub fn control_field(
    field: &Field,
    market: &MarketDynamics,
    firm: &FirmModel,
) -> Result<Field, SolverError> {
    let g = *field.grid();
    let cols = g.cols();
    let t = field.time();
    let mut out = vec![0.0; field.values().len()];
    out.par_chunks_mut(cols)
        .enumerate()
        .try_for_each(|(r, row_out)| -> Result<(), ModelError> {
            for (c, slot) in row_out.iter_mut().enumerate() {
                let p_e = e_difference_at(field, r, c);
                let p_y = y_difference_at(field, r, c);
                *slot = hamiltonian_argmax(firm, market, t, g.y_of_col(c), p_e, p_y)?.q_star;
            }
            Ok(())
        })?;
    Ok(Field::from_values(g, t, out))
}

/// Semi-Lagrangian transport half-step with the control `phi` frozen.
///
/// Interior nodes take `V(e + eta dt, y + (mu + beta eta - gamma lambda) dt)
/// + reward dt`, with `eta`, `lambda` and the reward evaluated at `phi`.
/// Wall columns take `walls_to`.
pub fn transport_half_step(
    field: &Field,
    phi: &Field,
    market: &MarketDynamics,
    firm: &FirmModel,
    t_from: f64,
    t_to: f64,
    walls_to: &WallValues,
) -> Field {
    let g = *field.grid();
    let cols = g.cols();
    let dt = t_from - t_to;
    let beta = market.beta();
    let mut out = vec![0.0; field.values().len()];
    out.par_chunks_mut(cols).enumerate().for_each(|(r, row_out)| {
        let e = g.e_of_row(r);
        let phi_row = phi.row(r);
        row_out[0] = walls_to.lower;
        row_out[cols - 1] = walls_to.upper(e);
        for c in 1..cols - 1 {
            let y = g.y_of_col(c);
            let q = phi_row[c];
            let eta = firm.emission(t_to, q);
            let drift = market.mu(t_to, y) + beta * eta
                - market.gamma(t_to, y) * firm.premium(t_to, q);
            row_out[c] = field.interpolate(e + eta * dt, y + drift * dt) + firm.reward_rate(t_to, q) * dt;
        }
    });
    Field::from_values(g, t_to, out)
}

/// Fields derived from the value function at one stored level.
#[derive(Debug, Clone)]
pub struct Snapshot {
    pub level: usize,
    pub time: f64,
    pub value: Field,
    /// Hamiltonian maximizer with the gradients of `value`.
    pub policy: Field,
    /// Small-producer production at the price `clamp(-V_e+, 0, alpha)`.
    pub benchmark: Field,
    pub tau: Field,
    /// `+1` / `-1` / `0` for policy above / below / within `epsilon` of the benchmark.
    pub mask: Field,
}

impl Snapshot {
    fn compute(
        level: usize,
        value: Field,
        market: &MarketDynamics,
        firm: &FirmModel,
        epsilon: f64,
    ) -> Result<Self, ModelError> {
        let g = *value.grid();
        let t = value.time();
        let alpha = market.alpha();
        let len = value.values().len();
        let (mut policy, mut benchmark, mut tau, mut mask) =
            (vec![0.0; len], vec![0.0; len], vec![0.0; len], vec![0.0; len]);
        let cols = g.cols();
        for r in 0..g.rows() {
            for c in 0..cols {
                let k = r * cols + c;
                let y = g.y_of_col(c);
                let p_e = e_difference_at(&value, r, c);
                let p_y = y_difference_at(&value, r, c);
                let q = hamiltonian_argmax(firm, market, t, y, p_e, p_y)?.q_star;
                let price = (-p_e).clamp(0.0, alpha);
                let q1 = small_producer_policy(firm, t, price, alpha)?;
                policy[k] = q;
                benchmark[k] = q1;
                tau[k] = correction_tau(firm, market, t, y, q, p_y)?;
                mask[k] = ternary(q - q1, epsilon);
            }
        }
        Ok(Self {
            level,
            time: t,
            policy: Field::from_values(g, t, policy),
            benchmark: Field::from_values(g, t, benchmark),
            tau: Field::from_values(g, t, tau),
            mask: Field::from_values(g, t, mask),
            value,
        })
    }

    /// `-V_e+` at a node.
    pub fn allowance_price(&self, i: isize, j: isize) -> f64 {
        -crate::grid::e_forward_difference(&self.value, i, j)
    }

    /// Writes `{field}_{t}.csv` for every field of the snapshot.
    pub fn export(&self, dir: &Path) -> io::Result<()> {
        fs::create_dir_all(dir)?;
        for (name, field) in [
            ("V", &self.value),
            ("q_policy", &self.policy),
            ("q_benchmark", &self.benchmark),
            ("tau", &self.tau),
            ("mask", &self.mask),
        ] {
            let file = fs::File::create(dir.join(format!("{name}_{}.csv", self.time)))?;
            let mut w = BufWriter::new(file);
            field.write_csv(&mut w)?;
            io::Write::flush(&mut w)?;
        }
        Ok(())
    }
}

fn ternary(x: f64, epsilon: f64) -> f64 {
    if x > epsilon {
        1.0
    } else if x < -epsilon {
        -1.0
    } else {
        0.0
    }
}

/// Frozen controls `phi^n`, piecewise constant on `[t_n, t_{n+1})`.
#[derive(Debug, Clone)]
pub struct PolicyStack {
    times: Vec<f64>,
    fields: Vec<Field>,
}

impl PolicyStack {
    /// `fields` sorted by increasing time.
    pub fn new(fields: Vec<Field>) -> Self {
        let times = fields.iter().map(Field::time).collect();
        Self { times, fields }
    }

    pub fn len(&self) -> usize {
        self.fields.len()
    }

    pub fn is_empty(&self) -> bool {
        self.fields.is_empty()
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    /// Field in force at time `t`: the latest stored level not after `t`.
    #[inline]
    pub fn field_at(&self, t: f64) -> &Field {
        let k = self.times.partition_point(|&s| s <= t + 1e-12);
        &self.fields[k.saturating_sub(1)]
    }

    /// Control at `(t, e, y)`, bilinear in space with the point clamped to the box.
    #[inline]
    pub fn control(&self, t: f64, e: f64, y: f64) -> f64 {
        self.field_at(t).interpolate_clamped(e, y).max(0.0)
    }
}

/// Summary numbers of a solve.
#[derive(Debug, Clone, Default)]
pub struct Diagnostics {
    /// Largest discrete HJB residual at `t = 0` over nodes at least five
    /// cells from the walls.
    pub max_residual: f64,
    /// Range of `-V_e+` over all stored levels.
    pub min_price: f64,
    pub max_price: f64,
    pub steps: usize,
}

/// Output of [`solve`].
#[derive(Debug, Clone)]
pub struct Solution {
    pub grid: GridSpec,
    pub market: MarketDynamics,
    pub firm: FirmModel,
    pub mask_epsilon: f64,
    /// Sorted by increasing time.
    pub snapshots: Vec<Snapshot>,
    pub policy_stack: Option<PolicyStack>,
    pub diagnostics: Diagnostics,
}

impl Solution {
    pub fn snapshot_at(&self, t: f64) -> Option<&Snapshot> {
        let tol = 1e-9 * self.market.horizon();
        self.snapshots.iter().find(|s| (s.time - t).abs() <= tol)
    }

    pub fn initial(&self) -> &Snapshot {
        &self.snapshots[0]
    }

    /// Value at `(0, e, y)` by bilinear interpolation.
    pub fn value_at(&self, e: f64, y: f64) -> f64 {
        self.initial().value.interpolate_clamped(e, y)
    }

    /// `-V_e+` at `(0, e, y)` from interpolated values one `de` apart.
    pub fn allowance_price_at(&self, e: f64, y: f64) -> f64 {
        let de = self.grid.de();
        let v = &self.initial().value;
        -(v.interpolate_clamped(e + de, y) - v.interpolate_clamped(e, y)) / de
    }

    pub fn export(&self, dir: &Path) -> io::Result<()> {
        for s in &self.snapshots {
            s.export(dir)?;
        }
        fs::write(dir.join("diagnostics.txt"), self.diagnostics_report())
    }

    pub fn diagnostics_report(&self) -> String {
        let d = &self.diagnostics;
        let mut out = String::new();
        let _ = writeln!(out, "steps {}", d.steps);
        let _ = writeln!(out, "max_residual {:.6e}", d.max_residual);
        let _ = writeln!(out, "min_price {:.6e}", d.min_price);
        let _ = writeln!(out, "max_price {:.6e}", d.max_price);
        for s in &self.snapshots {
            let counts = mask_counts(&s.mask);
            let _ = writeln!(
                out,
                "t {} mask_plus {} mask_zero {} mask_minus {}",
                s.time, counts.0, counts.1, counts.2
            );
        }
        out
    }
}

/// `(+1, 0, -1)` node counts of a mask field.
pub fn mask_counts(mask: &Field) -> (usize, usize, usize) {
    mask.values().iter().fold((0, 0, 0), |acc, &m| {
        if m > 0.0 {
            (acc.0 + 1, acc.1, acc.2)
        } else if m < 0.0 {
            (acc.0, acc.1, acc.2 + 1)
        } else {
            (acc.0, acc.1 + 1, acc.2)
        }
    })
}

/// Runs the backward splitting scheme from `T` down to `0`.
pub fn solve(config: &SolverConfig) -> Result<Solution, SolverError> {
    config.validate()?;
    let SolverConfig {
        grid,
        market,
        firm,
        store_every,
        policy_every,
        diffusion_theta,
        mask_epsilon,
    } = config;
    let n_t = grid.n_t;
    let horizon = market.horizon();
    let dt = grid.dt(horizon);

    let mut value = build_terminal_field(*grid, market);
    let mut walls_prev = WallValues::at(horizon, market, firm)?;
    let mut snapshots = Vec::new();
    let mut policies = Vec::new();
    let mut residual = 0.0;
    if n_t % store_every == 0 {
        snapshots.push(Snapshot::compute(n_t, value.clone(), market, firm, *mask_epsilon)?);
    }

    for n in (0..n_t).rev() {
        let t_from = grid.time(n + 1, horizon);
        let t_to = grid.time(n, horizon);
        let half = heat_half_step(&value, market, t_from, t_to, &walls_prev, *diffusion_theta)?;
        let phi = control_field(&half, market, firm)?;
        let walls = WallValues::at(t_to, market, firm)?;
        let next = transport_half_step(&half, &phi, market, firm, t_from, t_to, &walls);
        if !next.all_finite() {
            return Err(SolverError::NonFinite { level: n, time: t_to });
        }
        if let Some(stride) = policy_every {
            if n % stride == 0 {
                policies.push(phi);
            }
        }
        if n == 0 {
            residual = hjb_residual(&next, &value, market, firm, dt)?;
        }
        value = next;
        if n % store_every == 0 || n == 0 {
            snapshots.push(Snapshot::compute(n, value.clone(), market, firm, *mask_epsilon)?);
        }
        walls_prev = walls;
    }

    snapshots.reverse();
    policies.reverse();
    let (mut min_price, mut max_price) = (f64::INFINITY, f64::NEG_INFINITY);
    for s in &snapshots {
        let g = s.value.grid();
        for r in 0..g.rows() {
            for c in 0..g.cols() {
                let p = -e_difference_at(&s.value, r, c);
                min_price = min_price.min(p);
                max_price = max_price.max(p);
            }
        }
    }
    Ok(Solution {
        grid: *grid,
        market: market.clone(),
        firm: firm.clone(),
        mask_epsilon: *mask_epsilon,
        snapshots,
        policy_stack: policy_every.map(|_| PolicyStack::new(policies)),
        diagnostics: Diagnostics {
            max_residual: residual,
            min_price,
            max_price,
            steps: n_t,
        },
    })
}

const RESIDUAL_MARGIN: usize = 5;

/// `(V^1 - V^0)/dt + mu V_y + gamma^2/2 V_yy + max_q theta` on `V^0`.
fn hjb_residual(
    current: &Field,
    later: &Field,
    market: &MarketDynamics,
    firm: &FirmModel,
    dt: f64,
) -> Result<f64, ModelError> {
    let g = current.grid();
    let t = current.time();
    let m = RESIDUAL_MARGIN;
    let mut worst: f64 = 0.0;
    if g.rows() <= 2 * m + 1 || g.cols() <= 2 * m + 1 {
        return Ok(0.0);
    }
    for r in m..g.rows() - m {
        for c in m..g.cols() - m {
            let y = g.y_of_col(c);
            let p_e = e_difference_at(current, r, c);
            let p_y = y_difference_at(current, r, c);
            let gamma = market.gamma(t, y);
            let h = hamiltonian_argmax(firm, market, t, y, p_e, p_y)?.theta_star;
            let res = (later.get(r, c) - current.get(r, c)) / dt
                + market.mu(t, y) * p_y
                + 0.5 * gamma * gamma * y_second_difference_at(current, r, c)
                + h;
            worst = worst.max(res.abs());
        }
    }
    Ok(worst)
}

/// Result of [`policy_comparison`].
#[derive(Debug, Clone)]
pub struct ComparisonReport {
    pub time: f64,
    /// Sign of `q_policy - q_benchmark` with threshold `epsilon`.
    pub mask: Field,
    /// Sign of `tau / 2` with the same threshold.
    pub tau_mask: Field,
    /// `(+1, 0, -1)` counts of `mask`.
    pub counts: (usize, usize, usize),
    /// Largest `|q_policy - q_benchmark - tau / 2|` over checked nodes.
    pub max_identity_gap: f64,
    pub checked_nodes: usize,
}

const IDENTITY_TOL: f64 = 1e-8;

/// Compares the large-producer policy with the small-producer benchmark at
/// the stored level `t`.
///
/// Where both policies are interior and the price is not clamped, the
/// quadratic first-order conditions give `q_policy = q_benchmark + tau / 2`,
/// so the two masks must agree there; a disagreement is reported as
/// [`SolverError::Consistency`].
pub fn policy_comparison(
    solution: &Solution,
    t: f64,
    epsilon: f64,
) -> Result<ComparisonReport, SolverError> {
    let snap = solution.snapshot_at(t).ok_or(SolverError::MissingLevel(t))?;
    let g = *snap.value.grid();
    let alpha = solution.market.alpha();
    let len = snap.value.values().len();
    let mut mask = vec![0.0; len];
    let mut tau_mask = vec![0.0; len];
    let (mut bad, mut worst, mut checked) = (0usize, 0.0f64, 0usize);
    let linear_quadratic = solution.firm.technology().linear_quadratic().is_some();
    let cols = g.cols();
    for r in 0..g.rows() {
        for c in 0..cols {
            let k = r * cols + c;
            let q = snap.policy.values()[k];
            let q1 = snap.benchmark.values()[k];
            let tau = snap.tau.values()[k];
            mask[k] = ternary(q - q1, epsilon);
            tau_mask[k] = ternary(0.5 * tau, epsilon);
            let interior_row = c > 0 && c + 1 < cols;
            let price = -e_difference_at(&snap.value, r, c);
            let unclamped = (0.0..=alpha).contains(&price);
            if linear_quadratic && interior_row && q > 0.0 && q1 > 0.0 && unclamped {
                checked += 1;
                let gap = (q - q1 - 0.5 * tau).abs();
                worst = worst.max(gap);
                let near_threshold = ((q - q1).abs() - epsilon).abs() <= IDENTITY_TOL;
                if gap > IDENTITY_TOL || (mask[k] != tau_mask[k] && !near_threshold) {
                    bad += 1;
                }
            }
        }
    }
    if bad > 0 {
        return Err(SolverError::Consistency {
            count: bad,
            worst,
        });
    }
    let mask = Field::from_values(g, snap.time, mask);
    let counts = mask_counts(&mask);
    Ok(ComparisonReport {
        time: snap.time,
        tau_mask: Field::from_values(g, snap.time, tau_mask),
        mask,
        counts,
        max_identity_gap: worst,
        checked_nodes: checked,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::QuadraticFirm;

    fn grid() -> GridSpec {
        GridSpec::new(2.0, 4.0, 16, 40, 20).unwrap()
    }

    fn market(gamma: f64, alpha: f64) -> MarketDynamics {
        MarketDynamics::constant(0.1, gamma, 1.0, alpha, 10.0).unwrap()
    }

    fn firm() -> FirmModel {
        QuadraticFirm::new(5.0).unwrap().firm(ProducerMode::LargePremiumImpact)
    }

    #[test]
    fn heat_keeps_constants_and_affine_data() {
        let g = grid();
        let m = market(0.65, 0.1);
        let c = Field::constant(g, 1.0, 2.5);
        let walls = WallValues {
            alpha: 0.0,
            upper_offset: 2.5,
            lower: 2.5,
        };
        for theta in [0.5, 1.0] {
            let out = heat_half_step(&c, &m, 1.0, 0.5, &walls, theta).unwrap();
            for v in out.values() {
                assert!((v - 2.5).abs() < 1e-13);
            }
        }
        let affine = Field::from_fn(g, 1.0, |_, y| 0.3 * y - 1.0);
        let walls = WallValues {
            alpha: 0.0,
            upper_offset: 0.3 * 4.0 - 1.0,
            lower: -0.3 * 4.0 - 1.0,
        };
        let out = heat_half_step(&affine, &m, 1.0, 0.9, &walls, 1.0).unwrap();
        for (a, b) in out.values().iter().zip(affine.values()) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!(heat_half_step(&affine, &m, 0.5, 0.9, &walls, 1.0).is_err());
    }

    #[test]
    fn control_field_examples() {
        let g = grid();
        let m = market(0.65, 0.1);
        let f = firm();
        let zero = Field::constant(g, 0.0, 0.0);
        for q in control_field(&zero, &m, &f).unwrap().values() {
            assert!((q - 1.0 / 1.8).abs() < 1e-12);
        }
        let linear = Field::from_fn(g, 0.0, |e, _| -0.1 * e);
        for q in control_field(&linear, &m, &f).unwrap().values() {
            assert!((q - 0.5).abs() < 1e-12);
        }
        let steep = Field::from_fn(g, 0.0, |e, _| -e);
        for q in control_field(&steep, &m, &f).unwrap().values() {
            assert!(q.abs() < 1e-12);
        }
    }

    #[test]
    fn transport_examples() {
        let g = grid();
        let (dt, mu, gamma, c) = (0.05, 0.1, 0.65, 0.4);
        let m = market(gamma, 0.1);
        let f = firm();
        let walls = WallValues::terminal(0.1);
        let field = Field::from_fn(g, 1.0, |e, y| (e * 0.7).sin() + 0.2 * y * y);

        // zero control: pure drift
        let zero = Field::constant(g, 0.95, 0.0);
        let out = transport_half_step(&field, &zero, &m, &f, 1.0, 1.0 - dt, &walls);
        for r in 0..g.rows() {
            for col in 1..g.cols() - 1 {
                let (e, y) = (g.e_of_row(r), g.y_of_col(col));
                assert!((out.get(r, col) - field.interpolate(e, y + mu * dt)).abs() < 1e-14);
            }
        }

        // no drift, zero control: unchanged
        let still = MarketDynamics::constant(0.0, gamma, 1.0, 0.1, 10.0).unwrap();
        let out = transport_half_step(&field, &zero, &still, &f, 1.0, 1.0 - dt, &walls);
        for r in 0..g.rows() {
            for col in 1..g.cols() - 1 {
                assert!((out.get(r, col) - field.get(r, col)).abs() < 1e-13);
            }
        }

        // constant control on affine data: exact characteristics
        let (p, s) = (-0.08, -0.03);
        let affine = Field::from_fn(g, 1.0, |e, y| p * e + s * y);
        let phi = Field::constant(g, 0.95, c);
        let rho = 0.9;
        let out = transport_half_step(&affine, &phi, &m, &f, 1.0, 1.0 - dt, &walls);
        for r in 0..g.rows() {
            for col in 2..g.cols() - 2 {
                let (e, y) = (g.e_of_row(r), g.y_of_col(col));
                let exact = p * (e + c * dt)
                    + s * (y + (1.0 - gamma) * c * dt + mu * dt)
                    + (c - rho * c * c) * dt;
                assert!((out.get(r, col) - exact).abs() < 1e-13);
            }
        }
    }

    #[test]
    fn zero_penalty_matches_deterministic_value() {
        let m = market(0.65, 0.0);
        let mut cfg = SolverConfig::new(grid(), m, firm());
        cfg.store_every = 10;
        let sol = solve(&cfg).unwrap();
        for s in &sol.snapshots {
            let exact = (10.0 - s.time) / 3.6;
            for v in s.value.values() {
                assert!((v - exact).abs() < 1e-10);
            }
            for q in s.policy.values() {
                assert!((q - 1.0 / 1.8).abs() < 1e-10);
            }
            for q1 in s.benchmark.values() {
                assert_eq!(*q1, 0.5);
            }
        }
        let report = policy_comparison(&sol, 0.0, 1e-6).unwrap();
        assert_eq!(report.counts.0, grid().rows() * grid().cols());
    }

    #[test]
    fn tiny_horizon_keeps_terminal_data() {
        let m = MarketDynamics::constant(0.1, 0.65, 1.0, 0.1, 1e-6).unwrap();
        let g = GridSpec::new(2.0, 4.0, 16, 40, 1).unwrap();
        let sol = solve(&SolverConfig::new(g, m.clone(), firm())).unwrap();
        let term = build_terminal_field(g, &m);
        let v0 = &sol.initial().value;
        for r in 0..g.rows() {
            for c in 0..g.cols() {
                if g.y_of_col(c).abs() > 0.5 {
                    assert!((v0.get(r, c) - term.get(r, c)).abs() < 1e-5);
                }
            }
        }
    }

    #[test]
    fn small_producer_mode_rejected() {
        let cfg = SolverConfig::new(grid(), market(0.65, 0.1), firm().with_mode(ProducerMode::SmallProducer));
        assert!(matches!(solve(&cfg), Err(SolverError::InvalidConfig(_))));
        let mut cfg = SolverConfig::new(grid(), market(0.65, 0.1), firm());
        cfg.diffusion_theta = 0.3;
        assert!(solve(&cfg).is_err());
    }

    #[test]
    fn policy_stack_lookup() {
        let g = grid();
        let fields: Vec<Field> = (0..4).map(|k| Field::constant(g, k as f64, k as f64 * 0.1)).collect();
        let stack = PolicyStack::new(fields);
        assert_eq!(stack.control(0.0, 0.0, 0.0), 0.0);
        assert!((stack.control(1.5, 0.0, 0.0) - 0.1).abs() < 1e-15);
        assert!((stack.control(3.0, 9.0, 9.0) - 0.3).abs() < 1e-15);
        assert!((stack.control(7.0, 0.0, 0.0) - 0.3).abs() < 1e-15);
    }
}
