use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use carbon_hjb::model::QuadraticFirm;
use carbon_hjb::solver::solve;
use carbon_hjb::Field;
use carbon_hjb_cli::RunConfig;

const SMALL: &str = "n_e = 20\nn_y = 30\nn_t = 60\n";

fn scratch(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("carbon-hjb-cli-{}-{name}", std::process::id()));
    let _ = fs::remove_dir_all(&dir);
    fs::create_dir_all(&dir).unwrap();
    dir
}

fn write_config(dir: &Path, text: &str) -> PathBuf {
    let path = dir.join("run.cfg");
    fs::write(&path, text).unwrap();
    path
}

fn carbon(args: &[&str], env: &[(&str, &str)]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_carbon-hjb"));
    cmd.args(args);
    for (k, v) in env {
        cmd.env(k, v);
    }
    cmd.output().unwrap()
}

fn run_cmd(sub: &str, cfg: &Path, out: &Path, extra: &[&str]) -> Output {
    let mut args = vec![sub, cfg.to_str().unwrap(), "--out", out.to_str().unwrap()];
    args.extend_from_slice(extra);
    carbon(&args, &[])
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

#[test]
fn solve_exports_fields_that_parse_back_exactly() {
    let dir = scratch("roundtrip");
    let text = format!("{SMALL}gamma_vol = 0.8\nstore_every = 30\n");
    let cfg_path = write_config(&dir, &text);
    let out = dir.join("out");
    let res = run_cmd("solve", &cfg_path, &out, &[]);
    assert_eq!(code(&res), 0, "{}", String::from_utf8_lossy(&res.stderr));
    let stdout = String::from_utf8(res.stdout).unwrap();
    assert!(stdout.contains("q_policy") && stdout.contains("mask nodes"));

    let cfg = RunConfig::parse_str(&text).unwrap();
    let solution = solve(&cfg.solver_config(0.8, 0.1).unwrap()).unwrap();
    let grid = solution.grid;
    assert_eq!(solution.snapshots.len(), 3);
    for s in &solution.snapshots {
        for (name, field) in [
            ("V", &s.value),
            ("q_policy", &s.policy),
            ("q_benchmark", &s.benchmark),
            ("tau", &s.tau),
            ("mask", &s.mask),
        ] {
            let bytes = fs::read(out.join(format!("{name}_{}.csv", s.time))).unwrap();
            let back = Field::read_csv(bytes.as_slice(), grid, s.time).unwrap();
            assert!(back.values().iter().zip(field.values()).all(|(a, b)| a.to_bits() == b.to_bits()));
        }
    }
    fs::remove_dir_all(&dir).unwrap();
}

#[test]
fn identical_runs_write_identical_bytes() {
    let dir = scratch("idempotent");
    let cfg = write_config(&dir, SMALL);
    let (a, b) = (dir.join("a"), dir.join("b"));
    assert_eq!(code(&run_cmd("solve", &cfg, &a, &["--quiet"])), 0);
    assert_eq!(code(&run_cmd("solve", &cfg, &b, &["--quiet"])), 0);
    let mut names: Vec<_> = fs::read_dir(&a).unwrap().map(|e| e.unwrap().file_name()).collect();
    names.sort();
    assert!(names.len() >= 6);
    for name in names {
        assert_eq!(fs::read(a.join(&name)).unwrap(), fs::read(b.join(&name)).unwrap());
    }
    fs::remove_dir_all(&dir).unwrap();
}

#[test]
fn zero_penalty_gives_deterministic_value() {
    let dir = scratch("alpha0");
    let cfg = write_config(&dir, &format!("{SMALL}alpha = 0\n"));
    let out = dir.join("out");
    assert_eq!(code(&run_cmd("solve", &cfg, &out, &["--quiet"])), 0);
    let rho = QuadraticFirm::new(5.0).unwrap().rho();
    let text = fs::read_to_string(out.join("V_0.csv")).unwrap();
    for line in text.lines().skip(1) {
        let v: f64 = line.rsplit(',').next().unwrap().parse().unwrap();
        assert!((v / (10.0 / (4.0 * rho)) - 1.0).abs() < 0.01);
    }
    fs::remove_dir_all(&dir).unwrap();
}

#[test]
fn steep_volatility_mask_has_no_negative_interior_nodes() {
    let dir = scratch("steep");
    let cfg = write_config(&dir, &format!("{SMALL}gamma_vol = 1.5\n"));
    let out = dir.join("out");
    assert_eq!(code(&run_cmd("solve", &cfg, &out, &["--quiet"])), 0);
    let text = fs::read_to_string(out.join("mask_0.csv")).unwrap();
    let mut minus = 0;
    for line in text.lines().skip(1) {
        let cols: Vec<f64> = line.split(',').map(|s| s.parse().unwrap()).collect();
        if cols[1].abs() < 6.0 - 1e-9 && cols[2] < 0.0 {
            minus += 1;
        }
    }
    assert_eq!(minus, 0);
    fs::remove_dir_all(&dir).unwrap();
}

#[test]
fn environment_overrides_config_file() {
    let dir = scratch("env");
    let cfg = write_config(&dir, &format!("{SMALL}alpha = 0.1\n"));
    let out = dir.join("out");
    let res = carbon(
        &["solve", cfg.to_str().unwrap(), "--out", out.to_str().unwrap(), "--quiet"],
        &[("CARBON_HJB_ALPHA", "0")],
    );
    assert_eq!(code(&res), 0);
    let text = fs::read_to_string(out.join("tau_0.csv")).unwrap();
    // without a penalty the gradient in y vanishes and tau = q / a everywhere
    for line in text.lines().skip(1) {
        let tau: f64 = line.rsplit(',').next().unwrap().parse().unwrap();
        assert!((tau - 1.0 / (1.8 * 5.0)).abs() < 1e-9);
    }
    fs::remove_dir_all(&dir).unwrap();
}

#[test]
fn configuration_errors_exit_with_one() {
    let dir = scratch("badcfg");
    let out = dir.join("out");
    let cfg = write_config(&dir, "mu = 0.1\ngama = 2\n");
    let res = run_cmd("solve", &cfg, &out, &[]);
    assert_eq!(code(&res), 1);
    let err = String::from_utf8(res.stderr).unwrap();
    assert!(err.contains("gama") && err.contains("line 2"), "{err}");

    let cfg = write_config(&dir, &format!("{SMALL}sweep_gamma =\n"));
    assert_eq!(code(&run_cmd("sweep", &cfg, &out, &[])), 1);

    let cfg = write_config(&dir, "mode = small_producer\n");
    assert_eq!(code(&run_cmd("solve", &cfg, &out, &[])), 1);
    let missing = dir.join("missing.cfg");
    assert_eq!(code(&run_cmd("solve", &missing, &out, &[])), 3);
    fs::remove_dir_all(&dir).unwrap();
}

#[test]
fn unwritable_output_exits_with_three() {
    let dir = scratch("io");
    let cfg = write_config(&dir, SMALL);
    let blocker = dir.join("file");
    fs::write(&blocker, "x").unwrap();
    assert_eq!(code(&run_cmd("solve", &cfg, &blocker, &["--quiet"])), 3);
    fs::remove_dir_all(&dir).unwrap();
}

#[test]
fn sweep_writes_one_row_per_combination() {
    let dir = scratch("sweep");
    let cfg = write_config(&dir, "sweep_gamma = 1.5, 0.5\nsweep_alpha = 0.1\n");
    let out = dir.join("out");
    let res = run_cmd("sweep", &cfg, &out, &["--quiet"]);
    assert_eq!(code(&res), 0, "{}", String::from_utf8_lossy(&res.stderr));
    let text = fs::read_to_string(out.join("sweep.csv")).unwrap();
    let mut lines = text.lines();
    assert_eq!(
        lines.next(),
        Some("gamma,alpha,frac_nodes_q3_gt_q1,mean_q3_minus_q1,V_at_probe")
    );
    let rows: Vec<Vec<f64>> = lines
        .map(|l| l.split(',').map(|s| s.parse().unwrap()).collect())
        .collect();
    assert_eq!(rows.len(), 2);
    assert_eq!((rows[0][0], rows[0][1]), (1.5, 0.1));
    assert_eq!(rows[0][2], 1.0);
    assert!(rows[1][2] > 0.0 && rows[1][2] < 1.0, "{}", rows[1][2]);
    for r in &rows {
        assert!(r[3] > 0.0 && r[4] > 0.0);
    }
    assert!(out.join("gamma_1.5_alpha_0.1").join("V_0.csv").exists());
    assert!(out.join("gamma_0.5_alpha_0.1").join("mask_0.csv").exists());
    fs::remove_dir_all(&dir).unwrap();
}

#[test]
fn verify_passes_on_a_moderate_grid() {
    let dir = scratch("verify");
    let cfg = write_config(&dir, "n_e = 50\nn_y = 60\nn_t = 250\nn_paths = 4000\nn_steps = 250\n");
    let out = dir.join("out");
    let res = run_cmd("verify", &cfg, &out, &["--quiet", "--seed", "7"]);
    assert_eq!(code(&res), 0, "{}", String::from_utf8_lossy(&res.stdout));
    let text = fs::read_to_string(out.join("verify.csv")).unwrap();
    assert_eq!(text.lines().count(), 1 + 5 * 5);
    assert!(text.lines().skip(1).all(|l| l.ends_with(",true")));
    let est = fs::read_to_string(out.join("estimates.csv")).unwrap();
    assert!(est.starts_with("quantity,mean,std_error,n_paths,seed\n"));
    for line in est.lines().skip(1) {
        let cols: Vec<&str> = line.split(',').collect();
        assert_eq!(cols.len(), 5);
        assert_eq!(cols[3], "4000");
        assert!(cols[4].parse::<u64>().unwrap() >= 7);
    }
    assert!(est.contains("J_optimal_e0_y0,") && est.contains(",4000,7\n"));
    fs::remove_dir_all(&dir).unwrap();
}

#[test]
fn verify_zero_penalty_price_is_zero() {
    let dir = scratch("verify0");
    let cfg = write_config(&dir, "alpha = 0\nn_e = 20\nn_y = 30\nn_t = 50\nn_paths = 500\nn_steps = 50\n");
    let out = dir.join("out");
    assert_eq!(code(&run_cmd("verify", &cfg, &out, &["--quiet"])), 0);
    let text = fs::read_to_string(out.join("verify.csv")).unwrap();
    for line in text.lines().filter(|l| l.starts_with("price_identity")) {
        let cols: Vec<&str> = line.split(',').collect();
        assert_eq!(cols[3].parse::<f64>().unwrap(), 0.0);
        assert_eq!(cols[4].parse::<f64>().unwrap(), 0.0);
        assert_eq!(cols[8], "true");
    }
    fs::remove_dir_all(&dir).unwrap();
}

#[test]
fn verify_on_a_coarse_time_grid_fails() {
    let dir = scratch("coarse");
    let cfg = write_config(&dir, "n_t = 5\nn_paths = 20000\nn_steps = 200\n");
    let out = dir.join("out");
    let res = run_cmd("verify", &cfg, &out, &["--quiet"]);
    assert_eq!(code(&res), 4);
    let text = fs::read_to_string(out.join("verify.csv")).unwrap();
    assert!(text.lines().any(|l| l.ends_with(",false")));
    let report = String::from_utf8(res.stdout).unwrap();
    assert!(report.contains("FAIL"));
    fs::remove_dir_all(&dir).unwrap();
}
