//! Plain-text run configuration.
//!
//! One `key = value` per line, `#` starts a comment, lists are comma
//! separated. Every key can be overridden by an environment variable named
//! `CARBON_HJB_<KEY>` (upper case), e.g. `CARBON_HJB_GAMMA_VOL=1.5`.

use std::collections::HashSet;
use std::path::PathBuf;
use std::str::FromStr;

use carbon_hjb::model::LinearQuadratic;
use carbon_hjb::{FirmModel, GridSpec, MarketDynamics, ProducerMode, SolverConfig};
use thiserror::Error;

pub const ENV_PREFIX: &str = "CARBON_HJB_";

/// Verification probes `(e, y)` at `t = 0`.
pub const PROBES: [(f64, f64); 5] = [(0.0, 0.0), (1.0, -1.0), (1.0, 1.0), (-1.0, 0.0), (0.5, -2.0)];

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("line {line}: expected `key = value`, got `{text}`")]
    Syntax { line: usize, text: String },
    #[error("line {line}: unknown key `{key}`")]
    UnknownKey { line: usize, key: String },
    #[error("line {line}: duplicate key `{key}`")]
    Duplicate { line: usize, key: String },
    #[error("{origin}: bad value `{value}` for `{key}`: {reason}")]
    Value {
        origin: String,
        key: String,
        value: String,
        reason: String,
    },
    #[error("invalid configuration: {0}")]
    Invalid(String),
}

/// Every setting of a run, with the defaults of the reference experiment.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub mu: f64,
    pub beta: f64,
    pub alpha: f64,
    pub gamma_vol: f64,
    pub volatility_floor: f64,
    pub risk_aversion: f64,
    pub horizon: f64,
    pub mode: ProducerMode,
    pub profit_linear: f64,
    pub profit_quadratic: f64,
    pub emission_slope: f64,
    pub premium_intercept: f64,
    pub premium_slope: f64,
    pub l_e: f64,
    pub l_y: f64,
    pub n_e: usize,
    pub n_y: usize,
    pub n_t: usize,
    /// Snapshot stride; `0` stores only `t = 0` and `t = T`.
    pub store_every: usize,
    pub diffusion_theta: f64,
    pub mask_epsilon: f64,
    pub n_paths: usize,
    pub n_steps: usize,
    pub seed: u64,
    pub wealth: f64,
    pub policy_every: usize,
    pub consistency_slack: f64,
    pub sweep_gamma: Vec<f64>,
    pub sweep_alpha: Vec<f64>,
    pub probe_e: f64,
    pub probe_y: f64,
    pub out_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        let lq = LinearQuadratic::REFERENCE;
        Self {
            mu: 0.1,
            beta: 1.0,
            alpha: 0.1,
            gamma_vol: 0.65,
            volatility_floor: 0.0,
            risk_aversion: 5.0,
            horizon: 10.0,
            mode: ProducerMode::LargePremiumImpact,
            profit_linear: lq.profit_linear,
            profit_quadratic: lq.profit_quadratic,
            emission_slope: lq.emission_slope,
            premium_intercept: lq.premium_intercept,
            premium_slope: lq.premium_slope,
            l_e: 3.0,
            l_y: 6.0,
            n_e: 100,
            n_y: 120,
            n_t: 1000,
            store_every: 0,
            diffusion_theta: 1.0,
            mask_epsilon: 1e-6,
            n_paths: 100_000,
            n_steps: 1000,
            seed: 42,
            wealth: 0.0,
            policy_every: 1,
            consistency_slack: 0.05,
            sweep_gamma: vec![0.65],
            sweep_alpha: vec![0.1],
            probe_e: 0.0,
            probe_y: 0.0,
            out_dir: PathBuf::from("out"),
        }
    }
}

pub const KEYS: &[&str] = &[
    "mu",
    "beta",
    "alpha",
    "gamma_vol",
    "volatility_floor",
    "risk_aversion",
    "horizon",
    "mode",
    "profit_linear",
    "profit_quadratic",
    "emission_slope",
    "premium_intercept",
    "premium_slope",
    "l_e",
    "l_y",
    "n_e",
    "n_y",
    "n_t",
    "store_every",
    "diffusion_theta",
    "mask_epsilon",
    "n_paths",
    "n_steps",
    "seed",
    "wealth",
    "policy_every",
    "consistency_slack",
    "sweep_gamma",
    "sweep_alpha",
    "probe_e",
    "probe_y",
    "out_dir",
];

fn parse<T: FromStr>(origin: &str, key: &str, value: &str) -> Result<T, ConfigError>
where
    T::Err: std::fmt::Display,
{
    value.parse().map_err(|e: T::Err| ConfigError::Value {
        origin: origin.to_string(),
        key: key.to_string(),
        value: value.to_string(),
        reason: e.to_string(),
    })
}

fn parse_list(origin: &str, key: &str, value: &str) -> Result<Vec<f64>, ConfigError> {
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| parse(origin, key, s))
        .collect()
}

impl RunConfig {
    /// Parses configuration text on top of the defaults.
    pub fn parse_str(text: &str) -> Result<Self, ConfigError> {
        let mut cfg = Self::default();
        let mut seen = HashSet::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            let body = raw.split('#').next().unwrap_or("").trim();
            if body.is_empty() {
                continue;
            }
            let (key, value) = body.split_once('=').ok_or_else(|| ConfigError::Syntax {
                line,
                text: body.to_string(),
            })?;
            let key = key.trim();
            if !KEYS.contains(&key) {
                return Err(ConfigError::UnknownKey {
                    line,
                    key: key.to_string(),
                });
            }
            if !seen.insert(key.to_string()) {
                return Err(ConfigError::Duplicate {
                    line,
                    key: key.to_string(),
                });
            }
            cfg.set(&format!("line {line}"), key, value.trim())?;
        }
        Ok(cfg)
    }

    /// Applies `CARBON_HJB_<KEY>` overrides; other variables are ignored.
    pub fn apply_env<I, K, V>(&mut self, vars: I) -> Result<(), ConfigError>
    where
        I: IntoIterator<Item = (K, V)>,
        K: AsRef<str>,
        V: AsRef<str>,
    {
        let mut overrides: Vec<(String, String)> = vars
            .into_iter()
            .filter_map(|(k, v)| {
                let name = k.as_ref().strip_prefix(ENV_PREFIX)?.to_ascii_lowercase();
                Some((name, v.as_ref().to_string()))
            })
            .collect();
        overrides.sort();
        for (key, value) in overrides {
            let origin = format!("{ENV_PREFIX}{}", key.to_ascii_uppercase());
            if !KEYS.contains(&key.as_str()) {
                return Err(ConfigError::Invalid(format!("unknown override {origin}")));
            }
            self.set(&origin, &key, value.trim())?;
        }
        Ok(())
    }

    fn set(&mut self, origin: &str, key: &str, v: &str) -> Result<(), ConfigError> {
        match key {
            "mu" => self.mu = parse(origin, key, v)?,
            "beta" => self.beta = parse(origin, key, v)?,
            "alpha" => self.alpha = parse(origin, key, v)?,
            "gamma_vol" => self.gamma_vol = parse(origin, key, v)?,
            "volatility_floor" => self.volatility_floor = parse(origin, key, v)?,
            "risk_aversion" => self.risk_aversion = parse(origin, key, v)?,
            "horizon" => self.horizon = parse(origin, key, v)?,
            "mode" => self.mode = parse(origin, key, v)?,
            "profit_linear" => self.profit_linear = parse(origin, key, v)?,
            "profit_quadratic" => self.profit_quadratic = parse(origin, key, v)?,
            "emission_slope" => self.emission_slope = parse(origin, key, v)?,
            "premium_intercept" => self.premium_intercept = parse(origin, key, v)?,
            "premium_slope" => self.premium_slope = parse(origin, key, v)?,
            "l_e" => self.l_e = parse(origin, key, v)?,
            "l_y" => self.l_y = parse(origin, key, v)?,
            "n_e" => self.n_e = parse(origin, key, v)?,
            "n_y" => self.n_y = parse(origin, key, v)?,
            "n_t" => self.n_t = parse(origin, key, v)?,
            "store_every" => self.store_every = parse(origin, key, v)?,
            "diffusion_theta" => self.diffusion_theta = parse(origin, key, v)?,
            "mask_epsilon" => self.mask_epsilon = parse(origin, key, v)?,
            "n_paths" => self.n_paths = parse(origin, key, v)?,
            "n_steps" => self.n_steps = parse(origin, key, v)?,
            "seed" => self.seed = parse(origin, key, v)?,
            "wealth" => self.wealth = parse(origin, key, v)?,
            "policy_every" => self.policy_every = parse(origin, key, v)?,
            "consistency_slack" => self.consistency_slack = parse(origin, key, v)?,
            "sweep_gamma" => self.sweep_gamma = parse_list(origin, key, v)?,
            "sweep_alpha" => self.sweep_alpha = parse_list(origin, key, v)?,
            "probe_e" => self.probe_e = parse(origin, key, v)?,
            "probe_y" => self.probe_y = parse(origin, key, v)?,
            "out_dir" => self.out_dir = PathBuf::from(v),
            _ => {
                return Err(ConfigError::Invalid(format!("unknown key `{key}`")));
            }
        }
        Ok(())
    }

    pub fn grid(&self) -> Result<GridSpec, ConfigError> {
        GridSpec::new(self.l_e, self.l_y, self.n_e, self.n_y, self.n_t)
            .map_err(|e| ConfigError::Invalid(e.to_string()))
    }

    pub fn market(&self) -> Result<MarketDynamics, ConfigError> {
        self.market_with(self.gamma_vol, self.alpha)
    }

    pub fn market_with(&self, gamma: f64, alpha: f64) -> Result<MarketDynamics, ConfigError> {
        let m = MarketDynamics::new(
            carbon_hjb::model::Coefficient::Constant(self.mu),
            carbon_hjb::model::Coefficient::Constant(gamma),
            self.volatility_floor,
            self.beta,
            alpha,
            self.horizon,
        );
        m.map_err(|e| ConfigError::Invalid(e.to_string()))
    }

    pub fn firm(&self) -> Result<FirmModel, ConfigError> {
        let lq = LinearQuadratic {
            profit_linear: self.profit_linear,
            profit_quadratic: self.profit_quadratic,
            emission_slope: self.emission_slope,
            premium_intercept: self.premium_intercept,
            premium_slope: self.premium_slope,
        };
        FirmModel::linear_quadratic(lq, self.risk_aversion, self.mode)
            .map_err(|e| ConfigError::Invalid(e.to_string()))
    }

    /// Solver settings for volatility `gamma` and penalty `alpha`.
    pub fn solver_config(&self, gamma: f64, alpha: f64) -> Result<SolverConfig, ConfigError> {
        let grid = self.grid()?;
        let mut cfg = SolverConfig::new(grid, self.market_with(gamma, alpha)?, self.firm()?);
        cfg.store_every = if self.store_every == 0 {
            grid.n_t
        } else {
            self.store_every
        };
        cfg.diffusion_theta = self.diffusion_theta;
        cfg.mask_epsilon = self.mask_epsilon;
        cfg.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        Ok(cfg)
    }

    /// Checks everything that can be checked without solving.
    pub fn validate(&self) -> Result<(), ConfigError> {
        self.solver_config(self.gamma_vol, self.alpha)?;
        if self.n_paths < 2 || self.n_steps == 0 || self.policy_every == 0 {
            return Err(ConfigError::Invalid(
                "n_paths must be >= 2, n_steps and policy_every >= 1".into(),
            ));
        }
        if !(self.consistency_slack >= 0.0) {
            return Err(ConfigError::Invalid("consistency_slack must be >= 0".into()));
        }
        Ok(())
    }
}
