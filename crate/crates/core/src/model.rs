//! Economic primitives of the production problem.
//!
//! A [`MarketDynamics`] describes the emission-perception diffusion
//! `dY = (mu + beta * eta(q) - gamma * lambda(q)) dt + gamma dW` together with
//! the terminal penalty `alpha` per tonne. A [`FirmModel`] bundles the profit
//! rate `pi`, the emission rate `eta` and the risk premium `lambda` of the firm
//! with its exponential-utility risk aversion `a`.
//!
//! All pointwise optimizers live here: the Hamiltonian maximizer that drives
//! the HJB scheme, the small-producer first-order condition, and the
//! correction term separating the two.

use std::fmt;
use std::sync::Arc;

use thiserror::Error;

/// Errors raised by the model layer.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("effective objective is not strictly concave (quadratic coefficient {0})")]
    NonConcave(f64),
    #[error("no finite maximizer found below q = {0}")]
    NoMaximizer(f64),
}

/// A coefficient depending on `(t, y)`.
#[derive(Clone)]
pub enum Coefficient {
    Constant(f64),
    Function(Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>),
}

impl Coefficient {
    pub fn function(f: impl Fn(f64, f64) -> f64 + Send + Sync + 'static) -> Self {
        Coefficient::Function(Arc::new(f))
    }

    #[inline]
    pub fn eval(&self, t: f64, y: f64) -> f64 {
        match self {
            Coefficient::Constant(c) => *c,
            Coefficient::Function(f) => f(t, y),
        }
    }

    pub fn as_constant(&self) -> Option<f64> {
        match self {
            Coefficient::Constant(c) => Some(*c),
            Coefficient::Function(_) => None,
        }
    }
}

impl fmt::Debug for Coefficient {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Coefficient::Constant(c) => write!(f, "Constant({c})"),
            Coefficient::Function(_) => f.write_str("Function(..)"),
        }
    }
}

/// Coefficients of the emission-perception diffusion and the penalty.
///
/// The cap is fixed at zero: the allowance pays `alpha` when `Y_T >= 0`.
#[derive(Debug, Clone)]
pub struct MarketDynamics {
    drift: Coefficient,
    volatility: Coefficient,
    volatility_floor: f64,
    impact: f64,
    penalty: f64,
    horizon: f64,
}

impl MarketDynamics {
    /// Builds market dynamics with state-dependent drift and volatility.
    ///
    /// `volatility_floor` is the declared lower bound `c` with
    /// `gamma(t, y) >= c`; constant volatilities are checked against it here,
    /// function-valued ones are checked on the grid by the solver.
    pub fn new(
        drift: Coefficient,
        volatility: Coefficient,
        volatility_floor: f64,
        impact: f64,
        penalty: f64,
        horizon: f64,
    ) -> Result<Self, ModelError> {
        if !(volatility_floor >= 0.0) || !volatility_floor.is_finite() {
            return Err(ModelError::InvalidParameter(format!(
                "volatility floor must be finite and >= 0, got {volatility_floor}"
            )));
        }
        if let Some(g) = volatility.as_constant() {
            if !(g >= volatility_floor) || !g.is_finite() {
                return Err(ModelError::InvalidParameter(format!(
                    "volatility {g} is below its declared floor {volatility_floor}"
                )));
            }
        }
        if let Some(m) = drift.as_constant() {
            if !m.is_finite() {
                return Err(ModelError::InvalidParameter("drift must be finite".into()));
            }
        }
        if !(impact >= 0.0) || !impact.is_finite() {
            return Err(ModelError::InvalidParameter(format!(
                "impact coefficient beta must be >= 0, got {impact}"
            )));
        }
        if !(penalty >= 0.0) || !penalty.is_finite() {
            return Err(ModelError::InvalidParameter(format!(
                "penalty alpha must be >= 0, got {penalty}"
            )));
        }
        if !(horizon > 0.0) || !horizon.is_finite() {
            return Err(ModelError::InvalidParameter(format!(
                "horizon must be > 0, got {horizon}"
            )));
        }
        Ok(Self {
            drift,
            volatility,
            volatility_floor,
            impact,
            penalty,
            horizon,
        })
    }

    /// Constant drift and volatility; the volatility is its own floor.
    pub fn constant(
        mu: f64,
        gamma: f64,
        beta: f64,
        alpha: f64,
        horizon: f64,
    ) -> Result<Self, ModelError> {
        Self::new(
            Coefficient::Constant(mu),
            Coefficient::Constant(gamma),
            gamma,
            beta,
            alpha,
            horizon,
        )
    }

    #[inline]
    pub fn mu(&self, t: f64, y: f64) -> f64 {
        self.drift.eval(t, y)
    }

    #[inline]
    pub fn gamma(&self, t: f64, y: f64) -> f64 {
        self.volatility.eval(t, y)
    }

    pub fn volatility_floor(&self) -> f64 {
        self.volatility_floor
    }

    pub fn drift(&self) -> &Coefficient {
        &self.drift
    }

    pub fn volatility(&self) -> &Coefficient {
        &self.volatility
    }

    pub fn beta(&self) -> f64 {
        self.impact
    }

    pub fn alpha(&self) -> f64 {
        self.penalty
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn with_alpha(&self, alpha: f64) -> Result<Self, ModelError> {
        Self::new(
            self.drift.clone(),
            self.volatility.clone(),
            self.volatility_floor,
            self.impact,
            alpha,
            self.horizon,
        )
    }
}

/// Which of the three producer problems is being solved.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ProducerMode {
    /// Price taker: production solves the first-order condition against `S_t`.
    SmallProducer,
    /// Output shifts the drift of `Y` but not the risk premium; the premium
    /// is frozen at `lambda(t, 0)`.
    LargeNoPremiumImpact,
    /// Output shifts both the drift and the risk premium; the running reward
    /// gains the entropy term `lambda^2 / (2a)`.
    LargePremiumImpact,
}

impl ProducerMode {
    pub fn name(self) -> &'static str {
        match self {
            ProducerMode::SmallProducer => "small_producer",
            ProducerMode::LargeNoPremiumImpact => "large_no_premium_impact",
            ProducerMode::LargePremiumImpact => "large_premium_impact",
        }
    }
}

impl std::str::FromStr for ProducerMode {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "small_producer" => Ok(ProducerMode::SmallProducer),
            "large_no_premium_impact" => Ok(ProducerMode::LargeNoPremiumImpact),
            "large_premium_impact" => Ok(ProducerMode::LargePremiumImpact),
            other => Err(ModelError::InvalidParameter(format!(
                "unknown producer mode `{other}`"
            ))),
        }
    }
}

/// Profit, emission and risk-premium rates of a firm as functions of `(t, q)`.
///
/// Implementations are expected to satisfy: `pi` strictly concave with
/// `pi(t, 0) = 0`; `eta` convex and strictly increasing; `lambda` concave,
/// nondecreasing and `lambda(t, 0) >= 0`.
pub trait Technology: Send + Sync + fmt::Debug {
    fn profit(&self, t: f64, q: f64) -> f64;
    fn marginal_profit(&self, t: f64, q: f64) -> f64;
    fn emission(&self, t: f64, q: f64) -> f64;
    fn marginal_emission(&self, t: f64, q: f64) -> f64;
    fn premium(&self, t: f64, q: f64) -> f64;
    fn marginal_premium(&self, t: f64, q: f64) -> f64;

    /// Closed-form coefficients when the technology is linear-quadratic.
    fn linear_quadratic(&self) -> Option<LinearQuadratic> {
        None
    }
}

/// `pi(q) = c1 q - c2 q^2`, `eta(q) = k q`, `lambda(q) = l0 + l1 q`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinearQuadratic {
    pub profit_linear: f64,
    pub profit_quadratic: f64,
    pub emission_slope: f64,
    pub premium_intercept: f64,
    pub premium_slope: f64,
}

impl LinearQuadratic {
    /// `pi(q) = q (1 - q)`, `eta(q) = lambda(q) = q`.
    pub const REFERENCE: LinearQuadratic = LinearQuadratic {
        profit_linear: 1.0,
        profit_quadratic: 1.0,
        emission_slope: 1.0,
        premium_intercept: 0.0,
        premium_slope: 1.0,
    };

    pub fn validate(&self) -> Result<(), ModelError> {
        let all = [
            self.profit_linear,
            self.profit_quadratic,
            self.emission_slope,
            self.premium_intercept,
            self.premium_slope,
        ];
        if all.iter().any(|v| !v.is_finite()) {
            return Err(ModelError::InvalidParameter(
                "technology coefficients must be finite".into(),
            ));
        }
        if self.profit_quadratic <= 0.0 {
            return Err(ModelError::InvalidParameter(
                "profit must be strictly concave (profit_quadratic > 0)".into(),
            ));
        }
        if self.emission_slope <= 0.0 {
            return Err(ModelError::InvalidParameter(
                "emission must be strictly increasing (emission_slope > 0)".into(),
            ));
        }
        if self.premium_slope < 0.0 || self.premium_intercept < 0.0 {
            return Err(ModelError::InvalidParameter(
                "risk premium must be nondecreasing with lambda(0) >= 0".into(),
            ));
        }
        Ok(())
    }
}

impl Technology for LinearQuadratic {
    fn profit(&self, _t: f64, q: f64) -> f64 {
        q * (self.profit_linear - self.profit_quadratic * q)
    }
    fn marginal_profit(&self, _t: f64, q: f64) -> f64 {
        self.profit_linear - 2.0 * self.profit_quadratic * q
    }
    fn emission(&self, _t: f64, q: f64) -> f64 {
        self.emission_slope * q
    }
    fn marginal_emission(&self, _t: f64, _q: f64) -> f64 {
        self.emission_slope
    }
    fn premium(&self, _t: f64, q: f64) -> f64 {
        self.premium_intercept + self.premium_slope * q
    }
    fn marginal_premium(&self, _t: f64, _q: f64) -> f64 {
        self.premium_slope
    }
    fn linear_quadratic(&self) -> Option<LinearQuadratic> {
        Some(*self)
    }
}

/// A firm: technology, exponential-utility risk aversion and problem mode.
#[derive(Debug, Clone)]
pub struct FirmModel {
    technology: Arc<dyn Technology>,
    risk_aversion: f64,
    mode: ProducerMode,
}

/// Running reward of the linear-quadratic firm, `r0 + r1 q - r2 q^2`.
#[derive(Debug, Clone, Copy)]
struct RewardPolynomial {
    constant: f64,
    linear: f64,
    quadratic: f64,
}

impl FirmModel {
    pub fn new(
        technology: Arc<dyn Technology>,
        risk_aversion: f64,
        mode: ProducerMode,
    ) -> Result<Self, ModelError> {
        if !(risk_aversion > 0.0) || !risk_aversion.is_finite() {
            return Err(ModelError::Domain(format!(
                "risk aversion must be > 0, got {risk_aversion}"
            )));
        }
        if let Some(lq) = technology.linear_quadratic() {
            lq.validate()?;
        }
        let firm = Self {
            technology,
            risk_aversion,
            mode,
        };
        if let Some(poly) = firm.reward_polynomial() {
            if poly.quadratic <= 0.0 {
                return Err(ModelError::NonConcave(-poly.quadratic));
            }
        }
        Ok(firm)
    }

    pub fn linear_quadratic(
        lq: LinearQuadratic,
        risk_aversion: f64,
        mode: ProducerMode,
    ) -> Result<Self, ModelError> {
        Self::new(Arc::new(lq), risk_aversion, mode)
    }

    pub fn technology(&self) -> &dyn Technology {
        self.technology.as_ref()
    }

    pub fn risk_aversion(&self) -> f64 {
        self.risk_aversion
    }

    pub fn mode(&self) -> ProducerMode {
        self.mode
    }

    pub fn with_mode(&self, mode: ProducerMode) -> Self {
        Self {
            mode,
            ..self.clone()
        }
    }

    fn entropy_active(&self) -> bool {
        self.mode == ProducerMode::LargePremiumImpact
    }

    /// Risk premium felt by the dynamics; frozen at `q = 0` unless the firm
    /// moves the premium.
    #[inline]
    pub fn premium(&self, t: f64, q: f64) -> f64 {
        if self.entropy_active() {
            self.technology.premium(t, q)
        } else {
            self.technology.premium(t, 0.0)
        }
    }

    #[inline]
    pub fn marginal_premium(&self, t: f64, q: f64) -> f64 {
        if self.entropy_active() {
            self.technology.marginal_premium(t, q)
        } else {
            0.0
        }
    }

    #[inline]
    pub fn emission(&self, t: f64, q: f64) -> f64 {
        self.technology.emission(t, q)
    }

    #[inline]
    pub fn profit(&self, t: f64, q: f64) -> f64 {
        self.technology.profit(t, q)
    }

    /// `pi + lambda^2 / (2a)` with premium impact, `pi` otherwise. No domain
    /// check; see [`effective_running_reward`].
    #[inline]
    pub fn reward_rate(&self, t: f64, q: f64) -> f64 {
        let pi = self.technology.profit(t, q);
        if self.entropy_active() {
            let l = self.technology.premium(t, q);
            pi + l * l / (2.0 * self.risk_aversion)
        } else {
            pi
        }
    }

    fn marginal_reward(&self, t: f64, q: f64) -> f64 {
        let d = self.technology.marginal_profit(t, q);
        if self.entropy_active() {
            d + self.technology.premium(t, q) * self.technology.marginal_premium(t, q)
                / self.risk_aversion
        } else {
            d
        }
    }

    fn reward_polynomial(&self) -> Option<RewardPolynomial> {
        let lq = self.technology.linear_quadratic()?;
        let a = self.risk_aversion;
        let poly = if self.entropy_active() {
            RewardPolynomial {
                constant: lq.premium_intercept * lq.premium_intercept / (2.0 * a),
                linear: lq.profit_linear + lq.premium_intercept * lq.premium_slope / a,
                quadratic: lq.profit_quadratic - lq.premium_slope * lq.premium_slope / (2.0 * a),
            }
        } else {
            RewardPolynomial {
                constant: 0.0,
                linear: lq.profit_linear,
                quadratic: lq.profit_quadratic,
            }
        };
        Some(poly)
    }

    /// `sup_{q >= 0} reward(t, q) - penalty * eta(t, q)`: the best running
    /// rate when each emitted tonne costs `penalty` for sure.
    pub fn best_rate_under_penalty(&self, t: f64, penalty: f64) -> Result<f64, ModelError> {
        if let (Some(poly), Some(lq)) = (self.reward_polynomial(), self.technology.linear_quadratic())
        {
            if poly.quadratic <= 0.0 {
                return Err(ModelError::NonConcave(-poly.quadratic));
            }
            let slope = (poly.linear - penalty * lq.emission_slope).max(0.0);
            return Ok(poly.constant + slope * slope / (4.0 * poly.quadratic));
        }
        let q = maximize_by_derivative(|q| {
            self.marginal_reward(t, q) - penalty * self.technology.marginal_emission(t, q)
        })?;
        Ok(self.reward_rate(t, q) - penalty * self.technology.emission(t, q))
    }
}

/// The reference example firm: `pi(q) = q (1 - q)`, `eta(q) = lambda(q) = q`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadraticFirm {
    risk_aversion: f64,
}

impl QuadraticFirm {
    /// Rejects `a <= 1/2`, where `rho = 1 - 1/(2a)` is no longer positive.
    pub fn new(risk_aversion: f64) -> Result<Self, ModelError> {
        if !(risk_aversion > 0.5) || !risk_aversion.is_finite() {
            return Err(ModelError::InvalidParameter(format!(
                "quadratic firm needs a > 1/2 for rho = 1 - 1/(2a) > 0, got a = {risk_aversion}"
            )));
        }
        Ok(Self { risk_aversion })
    }

    pub fn risk_aversion(&self) -> f64 {
        self.risk_aversion
    }

    /// `rho = 1 - 1/(2a)`.
    pub fn rho(&self) -> f64 {
        1.0 - 1.0 / (2.0 * self.risk_aversion)
    }

    pub fn firm(&self, mode: ProducerMode) -> FirmModel {
        FirmModel::linear_quadratic(LinearQuadratic::REFERENCE, self.risk_aversion, mode)
            .expect("reference technology is valid")
    }

    /// Deterministic value on the top wall: `-alpha e + (1 - alpha)_+^2 (T - t) / (4 rho)`.
    pub fn upper_boundary_value(&self, t: f64, e: f64, alpha: f64, horizon: f64) -> f64 {
        let s = (1.0 - alpha).max(0.0);
        -alpha * e + s * s * (horizon - t) / (4.0 * self.rho())
    }

    /// Deterministic value on the bottom wall: `(T - t) / (4 rho)`.
    pub fn lower_boundary_value(&self, t: f64, horizon: f64) -> f64 {
        (horizon - t) / (4.0 * self.rho())
    }
}

/// Maximizer and maximum of the Hamiltonian over `q >= 0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HamiltonianMax {
    pub q_star: f64,
    pub theta_star: f64,
}

/// Running reward entering the value function.
pub fn effective_running_reward(firm: &FirmModel, t: f64, q: f64) -> Result<f64, ModelError> {
    if !(q >= 0.0) {
        return Err(ModelError::Domain(format!(
            "production rate must be >= 0, got {q}"
        )));
    }
    Ok(firm.reward_rate(t, q))
}

/// Terminal value `-alpha * 1{y >= 0} * e`.
///
/// The indicator is closed at zero so that the grid node `y = 0` belongs to
/// the penalized side.
#[inline]
pub fn terminal_payoff(alpha: f64, y: f64, e: f64) -> f64 {
    if y >= 0.0 {
        -alpha * e
    } else {
        0.0
    }
}

/// `theta(q) = reward(q) + eta(q) (p_e + beta p_y) - gamma(t, y) lambda(q) p_y`.
pub fn hamiltonian(
    firm: &FirmModel,
    market: &MarketDynamics,
    t: f64,
    y: f64,
    q: f64,
    p_e: f64,
    p_y: f64,
) -> f64 {
    firm.reward_rate(t, q) + firm.emission(t, q) * (p_e + market.beta() * p_y)
        - market.gamma(t, y) * firm.premium(t, q) * p_y
}

/// Maximizes the Hamiltonian over `q >= 0`.
///
/// Linear-quadratic firms use the closed form
/// `q* = (b)_+ / (2A)`; other technologies bisect the derivative, which is
/// strictly decreasing under the standing concavity assumptions.
pub fn hamiltonian_argmax(
    firm: &FirmModel,
    market: &MarketDynamics,
    t: f64,
    y: f64,
    p_e: f64,
    p_y: f64,
) -> Result<HamiltonianMax, ModelError> {
    let gamma = market.gamma(t, y);
    let beta = market.beta();
    if let (Some(poly), Some(lq)) = (firm.reward_polynomial(), firm.technology.linear_quadratic()) {
        if poly.quadratic <= 0.0 {
            return Err(ModelError::NonConcave(-poly.quadratic));
        }
        let premium_slope = if firm.entropy_active() {
            lq.premium_slope
        } else {
            0.0
        };
        let slope = poly.linear + lq.emission_slope * (p_e + beta * p_y) - gamma * premium_slope * p_y;
        let q_star = slope.max(0.0) / (2.0 * poly.quadratic);
        return Ok(HamiltonianMax {
            q_star,
            theta_star: hamiltonian(firm, market, t, y, q_star, p_e, p_y),
        });
    }
    let tech = firm.technology();
    let q_star = maximize_by_derivative(|q| {
        firm.marginal_reward(t, q) + tech.marginal_emission(t, q) * (p_e + beta * p_y)
            - gamma * firm.marginal_premium(t, q) * p_y
    })?;
    Ok(HamiltonianMax {
        q_star,
        theta_star: hamiltonian(firm, market, t, y, q_star, p_e, p_y),
    })
}

/// Small-producer production for allowance price `price`:
/// the root of `pi'(q) = price * eta'(q)`, or zero when that root is negative.
pub fn small_producer_policy(
    firm: &FirmModel,
    t: f64,
    price: f64,
    alpha: f64,
) -> Result<f64, ModelError> {
    if !(0.0..=alpha).contains(&price) {
        return Err(ModelError::Domain(format!(
            "allowance price {price} outside [0, alpha = {alpha}]"
        )));
    }
    let tech = firm.technology();
    if let Some(lq) = tech.linear_quadratic() {
        let slope = lq.profit_linear - price * lq.emission_slope;
        return Ok(slope.max(0.0) / (2.0 * lq.profit_quadratic));
    }
    maximize_by_derivative(|q| tech.marginal_profit(t, q) - price * tech.marginal_emission(t, q))
}

/// Wedge between the large-producer and small-producer first-order
/// conditions:
/// `(beta eta'(q) - gamma lambda'(q)) p_y + lambda'(q) lambda(q) / a`.
///
/// For the quadratic firm at interior optima, `q_large = q_small + tau / 2`.
pub fn correction_tau(
    firm: &FirmModel,
    market: &MarketDynamics,
    t: f64,
    y: f64,
    q: f64,
    p_y: f64,
) -> Result<f64, ModelError> {
    if !(q >= 0.0) {
        return Err(ModelError::Domain(format!(
            "production rate must be >= 0, got {q}"
        )));
    }
    let tech = firm.technology();
    let dl = firm.marginal_premium(t, q);
    let drift_part =
        (market.beta() * tech.marginal_emission(t, q) - market.gamma(t, y) * dl) * p_y;
    let entropy_part = if firm.entropy_active() {
        dl * tech.premium(t, q) / firm.risk_aversion()
    } else {
        0.0
    };
    Ok(drift_part + entropy_part)
}

const ARGMAX_TOL: f64 = 1e-10;
const ARGMAX_CEILING: f64 = 1e8;

/// Maximizer over `q >= 0` of a concave function given its derivative.
pub(crate) fn maximize_by_derivative(deriv: impl Fn(f64) -> f64) -> Result<f64, ModelError> {
    if !(deriv(0.0) > 0.0) {
        return Ok(0.0);
    }
    let mut lo = 0.0;
    let mut hi = 1.0;
    while deriv(hi) > 0.0 {
        lo = hi;
        hi *= 2.0;
        if hi > ARGMAX_CEILING {
            return Err(ModelError::NoMaximizer(ARGMAX_CEILING));
        }
    }
    while hi - lo > ARGMAX_TOL {
        let mid = 0.5 * (lo + hi);
        if deriv(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn reference_market(gamma: f64) -> MarketDynamics {
        MarketDynamics::constant(0.1, gamma, 1.0, 0.1, 10.0).unwrap()
    }

    fn reference_firm() -> FirmModel {
        QuadraticFirm::new(5.0)
            .unwrap()
            .firm(ProducerMode::LargePremiumImpact)
    }

    /// Grid scan over q in [0, 2]; independent of the closed form.
    fn brute_force_max(f: impl Fn(f64) -> f64) -> (f64, f64) {
        let n = 2_000_000;
        let mut best = (0.0, f(0.0));
        for k in 1..=n {
            let q = 10.0 * k as f64 / n as f64;
            let v = f(q);
            if v > best.1 {
                best = (q, v);
            }
        }
        best
    }

    fn bisect_root(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64) -> f64 {
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if f(mid) > 0.0 {
                lo = mid
            } else {
                hi = mid
            }
        }
        0.5 * (lo + hi)
    }

    /// A non-quadratic technology satisfying the standing assumptions.
    #[derive(Debug)]
    struct SqrtTech;

    impl Technology for SqrtTech {
        fn profit(&self, _t: f64, q: f64) -> f64 {
            2.0 * ((1.0 + q).sqrt() - 1.0) - 0.5 * q
        }
        fn marginal_profit(&self, _t: f64, q: f64) -> f64 {
            1.0 / (1.0 + q).sqrt() - 0.5
        }
        fn emission(&self, _t: f64, q: f64) -> f64 {
            q + 0.25 * q * q
        }
        fn marginal_emission(&self, _t: f64, q: f64) -> f64 {
            1.0 + 0.5 * q
        }
        fn premium(&self, _t: f64, q: f64) -> f64 {
            0.1 + (1.0 + q).ln()
        }
        fn marginal_premium(&self, _t: f64, q: f64) -> f64 {
            1.0 / (1.0 + q)
        }
    }

    #[test]
    fn running_reward_examples() {
        let firm = reference_firm();
        assert!((effective_running_reward(&firm, 0.0, 1.0).unwrap() - 0.1).abs() < 1e-15);
        assert_eq!(effective_running_reward(&firm, 0.0, 0.0).unwrap(), 0.0);
        let no_impact = firm.with_mode(ProducerMode::LargeNoPremiumImpact);
        assert!((effective_running_reward(&no_impact, 0.0, 0.5).unwrap() - 0.25).abs() < 1e-15);
        assert!(matches!(
            effective_running_reward(&firm, 0.0, -0.1),
            Err(ModelError::Domain(_))
        ));
    }

    #[test]
    fn terminal_payoff_examples() {
        assert!((terminal_payoff(0.1, 1.0, 2.0) + 0.2).abs() < 1e-15);
        assert_eq!(terminal_payoff(0.1, -1.0, 5.0), 0.0);
        assert!((terminal_payoff(0.1, 0.0, 3.0) + 0.3).abs() < 1e-15);
    }

    #[test]
    fn argmax_examples() {
        let firm = reference_firm();
        let m = hamiltonian_argmax(&firm, &reference_market(0.65), 0.0, 0.0, 0.0, 0.0).unwrap();
        assert!((m.q_star - 0.555_556).abs() < 1e-6);
        assert!((m.theta_star - 0.277_778).abs() < 1e-6);

        let m = hamiltonian_argmax(&firm, &reference_market(0.65), 0.0, 0.0, -1.0, 0.0).unwrap();
        assert_eq!(m.q_star, 0.0);
        assert_eq!(m.theta_star, 0.0);

        let m = hamiltonian_argmax(&firm, &reference_market(0.5), 0.0, 0.0, -0.1, -0.2).unwrap();
        assert!((m.q_star - 0.444_444).abs() < 1e-6);
        assert!((m.theta_star - 0.177_778).abs() < 1e-6);
    }

    #[test]
    fn argmax_matches_scan_on_examples() {
        let firm = reference_firm();
        for (gamma, pe, py) in [(0.65, 0.0, 0.0), (0.5, -0.1, -0.2)] {
            let market = reference_market(gamma);
            let (q, v) = brute_force_max(|q| hamiltonian(&firm, &market, 0.0, 0.0, q, pe, py));
            let m = hamiltonian_argmax(&firm, &market, 0.0, 0.0, pe, py).unwrap();
            assert!((m.q_star - q).abs() < 2e-6);
            assert!((m.theta_star - v).abs() < 1e-10);
        }
    }

    #[test]
    fn nonconcave_objective_is_rejected() {
        // a = 0.4: reward q - q^2 + q^2 / 0.8 is convex.
        assert!(matches!(
            FirmModel::linear_quadratic(LinearQuadratic::REFERENCE, 0.4, ProducerMode::LargePremiumImpact),
            Err(ModelError::NonConcave(_))
        ));
        let firm =
            FirmModel::linear_quadratic(LinearQuadratic::REFERENCE, 0.4, ProducerMode::LargeNoPremiumImpact)
                .unwrap()
                .with_mode(ProducerMode::LargePremiumImpact);
        assert!(matches!(
            hamiltonian_argmax(&firm, &reference_market(0.65), 0.0, 0.0, 0.0, 0.0),
            Err(ModelError::NonConcave(_))
        ));
        assert!(QuadraticFirm::new(0.5).is_err());
        assert!(QuadraticFirm::new(0.51).is_ok());
    }

    #[test]
    fn small_producer_examples() {
        let firm = reference_firm();
        assert_eq!(small_producer_policy(&firm, 0.0, 0.0, 0.1).unwrap(), 0.5);
        let foc = |s: f64| bisect_root(|q| 1.0 - 2.0 * q - s, 0.0, 1.0);
        let q = small_producer_policy(&firm, 0.0, 0.1, 0.1).unwrap();
        assert!((q - 0.45).abs() < 1e-12 && (q - foc(0.1)).abs() < 1e-12);
        let q = small_producer_policy(&firm, 0.0, 0.05, 0.1).unwrap();
        assert!((q - 0.475).abs() < 1e-12 && (q - foc(0.05)).abs() < 1e-12);
        assert!(small_producer_policy(&firm, 0.0, 0.2, 0.1).is_err());
        assert!(small_producer_policy(&firm, 0.0, -0.01, 0.1).is_err());
    }

    #[test]
    fn correction_examples() {
        let firm = reference_firm();
        assert_eq!(correction_tau(&firm, &reference_market(0.65), 0.0, 0.0, 0.0, 0.0).unwrap(), 0.0);
        let tau = correction_tau(&firm, &reference_market(0.65), 0.0, 0.0, 0.5, 0.0).unwrap();
        assert!((tau - 0.1).abs() < 1e-15);
        // (rho^-1 - 1) * 2 rho q3 = (1 - rho) * 2 * q3 = q3 / a
        let rho = 0.9;
        assert!((tau - (1.0 / rho - 1.0) * 2.0 * rho * 0.5).abs() < 1e-15);
        let tau = correction_tau(&firm, &reference_market(1.5), 0.0, 0.0, 0.0, -1.0).unwrap();
        assert!((tau - 0.5).abs() < 1e-15);
    }

    #[test]
    fn generic_argmax_matches_scan() {
        let firm =
            FirmModel::new(Arc::new(SqrtTech), 3.0, ProducerMode::LargePremiumImpact).unwrap();
        let market = reference_market(0.8);
        for (pe, py) in [(0.0, 0.0), (-0.05, -0.3), (-0.1, 0.05)] {
            let m = hamiltonian_argmax(&firm, &market, 0.0, 0.0, pe, py).unwrap();
            let (q, v) = brute_force_max(|q| hamiltonian(&firm, &market, 0.0, 0.0, q, pe, py));
            assert!((m.q_star - q).abs() < 1e-5, "{} vs {q}", m.q_star);
            assert!((m.theta_star - v).abs() < 1e-9);
        }
        let q1 = small_producer_policy(&firm, 0.0, 0.05, 0.1).unwrap();
        let root = bisect_root(|q| 1.0 / (1.0 + q).sqrt() - 0.5 - 0.05 * (1.0 + 0.5 * q), 0.0, 10.0);
        assert!((q1 - root).abs() < 1e-9);
    }

    #[test]
    fn best_rate_matches_closed_form() {
        let qf = QuadraticFirm::new(5.0).unwrap();
        let firm = qf.firm(ProducerMode::LargePremiumImpact);
        let r = firm.best_rate_under_penalty(0.0, 0.1).unwrap();
        assert!((r * 10.0 - qf.upper_boundary_value(0.0, 0.0, 0.1, 10.0)).abs() < 1e-12);
        let r = firm.best_rate_under_penalty(0.0, 0.0).unwrap();
        assert!((r * 10.0 - qf.lower_boundary_value(0.0, 10.0)).abs() < 1e-12);
    }

    #[test]
    fn argmax_uniqueness_against_scan() {
        // 10^4 random gradients, coarse scan refined locally.
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let firm = reference_firm();
        let market = reference_market(0.65);
        for _ in 0..10_000 {
            let pe: f64 = rng.random_range(-1.0..=0.0);
            let py: f64 = rng.random_range(-2.0..=2.0);
            let f = |q: f64| hamiltonian(&firm, &market, 0.0, 0.0, q, pe, py);
            let mut best = (0.0, f(0.0));
            for k in 1..=2000 {
                let q = 3.0 * k as f64 / 2000.0;
                if f(q) > best.1 {
                    best = (q, f(q));
                }
            }
            let (lo, hi) = ((best.0 - 0.0015f64).max(0.0), best.0 + 0.0015);
            for k in 0..=3000 {
                let q = lo + (hi - lo) * k as f64 / 3000.0;
                if f(q) > best.1 {
                    best = (q, f(q));
                }
            }
            let m = hamiltonian_argmax(&firm, &market, 0.0, 0.0, pe, py).unwrap();
            assert!((m.q_star - best.0).abs() < 1e-4, "pe={pe} py={py}");
        }
    }

    proptest! {
        #[test]
        fn benchmark_identity(pe in -0.1f64..=0.0, py in -1.0f64..=1.0, gamma in 0.1f64..2.0) {
            let firm = reference_firm();
            let market = reference_market(gamma);
            let q3 = hamiltonian_argmax(&firm, &market, 0.0, 0.0, pe, py).unwrap().q_star;
            let q1 = small_producer_policy(&firm, 0.0, -pe, 0.1).unwrap();
            let tau = correction_tau(&firm, &market, 0.0, 0.0, q3, py).unwrap();
            prop_assume!(q3 > 0.0 && q1 > 0.0);
            prop_assert!((q3 - q1 - tau / 2.0).abs() <= 1e-10);
        }

        #[test]
        fn sign_rule(pe in -0.1f64..=0.0, py in -2.0f64..=0.0, gamma in 1.0f64..3.0) {
            // beta eta' - gamma lambda' = 1 - gamma <= 0 and p_y <= 0
            let firm = reference_firm();
            let market = reference_market(gamma);
            let q3 = hamiltonian_argmax(&firm, &market, 0.0, 0.0, pe, py).unwrap().q_star;
            let q1 = small_producer_policy(&firm, 0.0, -pe, 0.1).unwrap();
            let tau = correction_tau(&firm, &market, 0.0, 0.0, q3, py).unwrap();
            prop_assert!(tau >= 0.0);
            prop_assert!(q3 >= q1);
        }

        #[test]
        fn small_producer_monotone(s1 in 0.0f64..=0.1, s2 in 0.0f64..=0.1) {
            let firm = reference_firm();
            let (lo, hi) = if s1 <= s2 { (s1, s2) } else { (s2, s1) };
            let q_lo = small_producer_policy(&firm, 0.0, lo, 0.1).unwrap();
            let q_hi = small_producer_policy(&firm, 0.0, hi, 0.1).unwrap();
            prop_assert!(q_hi <= q_lo);
        }
    }
}
