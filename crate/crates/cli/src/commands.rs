//! `solve`, `sweep` and `verify`.

use std::fmt::Write as _;
use std::fs;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use carbon_hjb::model::small_producer_policy;
use carbon_hjb::oracle::{
    dual_estimate, evaluate_policy, payoff_estimate, price_estimate, simulate_paths,
    write_estimates_csv, SimulationSpec,
};
use carbon_hjb::solver::{mask_counts, solve, SolverError};
use carbon_hjb::{Field, MarkovPolicy, McEstimate, Solution};
use rayon::prelude::*;
use thiserror::Error;

use crate::config::{ConfigError, RunConfig, PROBES};

/// Cells excluded next to every wall when summarizing a comparison.
pub const SUMMARY_MARGIN: isize = 5;

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("numerical failure: {0}")]
    Numerical(#[from] SolverError),
    #[error("i/o failure on {path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("{failed} verification check(s) failed")]
    Verify { failed: usize },
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 1,
            CliError::Numerical(_) => 2,
            CliError::Io { .. } => 3,
            CliError::Verify { .. } => 4,
        }
    }

    fn io(path: &Path, source: io::Error) -> Self {
        CliError::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}

/// Reads a configuration file and applies environment overrides.
pub fn load_config<I, K, V>(path: &Path, env: I) -> Result<RunConfig, CliError>
where
    I: IntoIterator<Item = (K, V)>,
    K: AsRef<str>,
    V: AsRef<str>,
{
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    let mut cfg = RunConfig::parse_str(&text)?;
    cfg.apply_env(env)?;
    Ok(cfg)
}

fn create_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

fn write_file(path: &Path, contents: &str) -> Result<(), CliError> {
    fs::write(path, contents).map_err(|e| CliError::io(path, e))
}

/// Interior nodes of the `t = 0` snapshot, `SUMMARY_MARGIN` cells from the walls.
fn interior_pairs(solution: &Solution) -> Vec<(f64, f64)> {
    let s = solution.initial();
    let g = solution.grid;
    let (ne, ny) = (g.n_e as isize, g.n_y as isize);
    let m = SUMMARY_MARGIN.min(ne.min(ny) - 1);
    let mut out = Vec::new();
    for i in -ne + m..=ne - m {
        for j in -ny + m..=ny - m {
            out.push((s.policy.at(i, j), s.benchmark.at(i, j)));
        }
    }
    out
}

fn field_summary(out: &mut String, name: &str, field: &Field) {
    let _ = writeln!(out, "{name:<12} {:>14.6e} {:>14.6e}", field.min(), field.max());
}

/// Human-readable table of the `t = 0` fields.
pub fn summary_table(solution: &Solution) -> String {
    let s = solution.initial();
    let mut out = String::new();
    let _ = writeln!(out, "{:<12} {:>14} {:>14}", "field", "min", "max");
    field_summary(&mut out, "V", &s.value);
    field_summary(&mut out, "q_policy", &s.policy);
    field_summary(&mut out, "q_benchmark", &s.benchmark);
    field_summary(&mut out, "tau", &s.tau);
    let (plus, zero, minus) = mask_counts(&s.mask);
    let _ = writeln!(out, "mask nodes: +1 {plus}, 0 {zero}, -1 {minus}");
    out
}

/// Solves once and writes every stored level to `out`.
pub fn run_solve(cfg: &RunConfig, out: &Path, quiet: bool) -> Result<(), CliError> {
    cfg.validate()?;
    let solver = cfg.solver_config(cfg.gamma_vol, cfg.alpha)?;
    let solution = solve(&solver)?;
    create_dir(out)?;
    solution.export(out).map_err(|e| CliError::io(out, e))?;
    if !quiet {
        print!("{}", summary_table(&solution));
    }
    Ok(())
}

/// One row of `sweep.csv`.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub gamma: f64,
    pub alpha: f64,
    pub frac_nodes_q3_gt_q1: f64,
    pub mean_q3_minus_q1: f64,
    pub v_at_probe: f64,
}

fn sweep_one(cfg: &RunConfig, gamma: f64, alpha: f64, dir: &Path) -> Result<SweepRow, CliError> {
    let solver = cfg.solver_config(gamma, alpha)?;
    let solution = solve(&solver)?;
    create_dir(dir)?;
    solution.export(dir).map_err(|e| CliError::io(dir, e))?;
    let pairs = interior_pairs(&solution);
    let n = pairs.len() as f64;
    let eps = cfg.mask_epsilon;
    let above = pairs.iter().filter(|(q3, q1)| q3 - q1 > eps).count() as f64;
    let mean = pairs.iter().map(|(q3, q1)| q3 - q1).sum::<f64>() / n;
    Ok(SweepRow {
        gamma,
        alpha,
        frac_nodes_q3_gt_q1: above / n,
        mean_q3_minus_q1: mean,
        v_at_probe: solution.value_at(cfg.probe_e, cfg.probe_y),
    })
}

/// Solves every `(gamma, alpha)` combination and writes `sweep.csv`.
///
/// A failing combination does not stop the others; the first failure is
/// returned after `sweep.csv` has been written with the remaining rows.
pub fn run_sweep(cfg: &RunConfig, out: &Path, quiet: bool) -> Result<Vec<SweepRow>, CliError> {
    if cfg.sweep_gamma.is_empty() || cfg.sweep_alpha.is_empty() {
        return Err(ConfigError::Invalid("sweep_gamma and sweep_alpha must be nonempty".into()).into());
    }
    cfg.validate()?;
    create_dir(out)?;
    let combos: Vec<(f64, f64)> = cfg
        .sweep_gamma
        .iter()
        .flat_map(|&g| cfg.sweep_alpha.iter().map(move |&a| (g, a)))
        .collect();
    let results: Vec<Result<SweepRow, CliError>> = combos
        .par_iter()
        .map(|&(g, a)| sweep_one(cfg, g, a, &out.join(format!("gamma_{g}_alpha_{a}"))))
        .collect();

    let mut csv = String::from("gamma,alpha,frac_nodes_q3_gt_q1,mean_q3_minus_q1,V_at_probe\n");
    let mut rows = Vec::new();
    let mut first_error = None;
    for ((g, a), result) in combos.iter().zip(results) {
        match result {
            Ok(row) => {
                let _ = writeln!(
                    csv,
                    "{},{},{:.16e},{:.16e},{:.16e}",
                    row.gamma, row.alpha, row.frac_nodes_q3_gt_q1, row.mean_q3_minus_q1, row.v_at_probe
                );
                rows.push(row);
            }
            Err(e) => {
                eprintln!("gamma {g}, alpha {a}: {e}");
                first_error.get_or_insert(e);
            }
        }
    }
    write_file(&out.join("sweep.csv"), &csv)?;
    if !quiet {
        print!("{csv}");
    }
    match first_error {
        Some(e) => Err(e),
        None => Ok(rows),
    }
}

/// Outcome of one verification check.
#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: &'static str,
    pub probe: (f64, f64),
    pub solver: f64,
    pub estimate: f64,
    pub std_error: f64,
    pub gap: f64,
    pub tolerance: f64,
    pub pass: bool,
}

impl Check {
    fn two_sided(name: &'static str, probe: (f64, f64), solver: f64, est: McEstimate, slack: f64) -> Self {
        let gap = (solver - est.mean).abs();
        let tolerance = 3.0 * est.std_error + slack;
        Self {
            name,
            probe,
            solver,
            estimate: est.mean,
            std_error: est.std_error,
            gap,
            tolerance,
            pass: gap <= tolerance,
        }
    }

    /// `estimate <= solver + 3 SE`.
    fn dominated(name: &'static str, probe: (f64, f64), solver: f64, est: McEstimate) -> Self {
        let gap = est.mean - solver;
        let tolerance = 3.0 * est.std_error;
        Self {
            name,
            probe,
            solver,
            estimate: est.mean,
            std_error: est.std_error,
            gap,
            tolerance,
            pass: gap <= tolerance,
        }
    }
}

/// Runs the Monte Carlo checks at the probe points and writes `verify.csv`
/// and `estimates.csv`.
pub fn run_verify(cfg: &RunConfig, out: &Path, quiet: bool) -> Result<Vec<Check>, CliError> {
    cfg.validate()?;
    let mut solver = cfg.solver_config(cfg.gamma_vol, cfg.alpha)?;
    solver.policy_every = Some(cfg.policy_every);
    let mut solution = solve(&solver)?;
    let stack = solution.policy_stack.take().expect("policy stack requested");
    let optimal = MarkovPolicy::Grid(Arc::new(stack));
    let market = &solver.market;
    let firm = &solver.firm;
    let alpha = market.alpha();
    let bau = small_producer_policy(firm, 0.0, 0.0, alpha).map_err(SolverError::from)?;
    let rivals = [("suboptimal_zero", 0.0), ("suboptimal_bau", bau)];

    let mut checks = Vec::new();
    let mut estimates: Vec<(String, McEstimate)> = Vec::new();
    for (k, &(e, y)) in PROBES.iter().enumerate() {
        let seed = cfg.seed.wrapping_add(k as u64);
        let spec = SimulationSpec::new(0.0, e, y, cfg.n_paths, cfg.n_steps, seed);
        let records = simulate_paths(&optimal, market, firm, &spec);
        let value = solution.value_at(e, y);
        let j = payoff_estimate(&records, alpha, &spec);
        checks.push(Check::two_sided("consistency", (e, y), value, j, cfg.consistency_slack));
        let price = price_estimate(&records, alpha, &spec);
        let slack = 2.0 * solution.grid.de();
        checks.push(Check::two_sided("price_identity", (e, y), solution.allowance_price_at(e, y), price, slack));
        let dual = dual_estimate(&records, cfg.wealth, firm.risk_aversion(), alpha, &spec);
        checks.push(Check {
            name: "budget_constraint",
            probe: (e, y),
            solver: cfg.wealth + dual.terminal_wealth.mean,
            estimate: dual.multiplier,
            std_error: dual.gap_std_error,
            gap: dual.budget_gap,
            tolerance: 3.0 * dual.gap_std_error,
            pass: dual.budget_gap <= 3.0 * dual.gap_std_error && dual.multiplier > 0.0,
        });
        let tag = format!("e{e}_y{y}");
        estimates.push((format!("J_optimal_{tag}"), j));
        estimates.push((format!("price_{tag}"), price));
        estimates.push((format!("terminal_wealth_{tag}"), dual.terminal_wealth));
        for (r, (name, q)) in rivals.iter().enumerate() {
            let spec = SimulationSpec {
                seed: seed.wrapping_add(1000 * (r as u64 + 1)),
                ..spec
            };
            let est = evaluate_policy(&MarkovPolicy::Constant(*q), market, firm, &spec);
            checks.push(Check::dominated(name, (e, y), value, est));
            estimates.push((format!("J_{name}_{tag}"), est));
        }
    }

    create_dir(out)?;
    let path = out.join("verify.csv");
    let mut csv = String::from("check,probe_e,probe_y,solver,estimate,std_error,gap,tolerance,pass\n");
    for c in &checks {
        let _ = writeln!(
            csv,
            "{},{},{},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{}",
            c.name, c.probe.0, c.probe.1, c.solver, c.estimate, c.std_error, c.gap, c.tolerance, c.pass
        );
    }
    write_file(&path, &csv)?;
    let est_path = out.join("estimates.csv");
    let file = fs::File::create(&est_path).map_err(|e| CliError::io(&est_path, e))?;
    let mut w = BufWriter::new(file);
    let rows: Vec<(&str, McEstimate)> = estimates.iter().map(|(n, e)| (n.as_str(), *e)).collect();
    write_estimates_csv(&mut w, &rows)
        .and_then(|_| w.flush())
        .map_err(|e| CliError::io(&est_path, e))?;

    let failed = checks.iter().filter(|c| !c.pass).count();
    if !quiet || failed > 0 {
        for c in checks.iter().filter(|c| !quiet || !c.pass) {
            println!(
                "{:<18} ({:>4}, {:>4})  gap {:.3e}  tol {:.3e}  {}",
                c.name,
                c.probe.0,
                c.probe.1,
                c.gap,
                c.tolerance,
                if c.pass { "ok" } else { "FAIL" }
            );
        }
    }
    if failed > 0 {
        return Err(CliError::Verify { failed });
    }
    Ok(checks)
}
