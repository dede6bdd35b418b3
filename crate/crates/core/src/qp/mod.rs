//! The demand-response agent's private optimization and its forward solve.
//!
//! The agent picks a response `y` to an incentive price `lambda` by minimizing
//! `sum_t lambda_t y_t + alpha_t / 2 y_t^2` subject to per-step limits
//! `p_low <= y_t <= p_high` and cumulative limits
//! `e_low <= sum_{tau <= t} y_tau <= e_high`.

mod ipm;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use ipm::InequalityQp;

/// Smallest admissible disutility curvature.
pub const ALPHA_MIN: f64 = 1e-3;
/// Magnitude at or above which a bound is treated as infinite.
pub const INF_BOUND: f64 = 1e9;
/// KKT tolerance certified on every returned solution.
pub const TOL_KKT: f64 = 1e-6;
/// Dual entries may undershoot zero by at most this much.
pub const EPS_DUAL: f64 = 1e-8;
/// Required margin between baseline and ghost demand, in kW.
pub const EPS_GAP: f64 = 1e-3;

pub fn is_infinite_bound(b: f64) -> bool {
    b.abs() >= INF_BOUND
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AgentModelKind {
    GeneralBox,
    TotalBudget,
    AsymmetricDisutility,
}

/// Unknown agent coefficients, one variant per supported model form.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AgentParams {
    /// Per-step box and cumulative-energy limits applied at every step.
    GeneralBox { alpha: f64, p_low: f64, p_high: f64, e_low: f64, e_high: f64 },
    /// Only the window total is capped: `|sum_t y_t| <= m_budget`.
    TotalBudget { alpha: f64, m_budget: f64 },
    /// Unconstrained, with curvature `alpha1 / (D_t - d_min)` on increases and
    /// `alpha2 / (D_t - d_min)` on decreases.
    AsymmetricDisutility { alpha1: f64, alpha2: f64, d_min: f64 },
}

impl AgentParams {
    pub fn kind(&self) -> AgentModelKind {
        match self {
            AgentParams::GeneralBox { .. } => AgentModelKind::GeneralBox,
            AgentParams::TotalBudget { .. } => AgentModelKind::TotalBudget,
            AgentParams::AsymmetricDisutility { .. } => AgentModelKind::AsymmetricDisutility,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let finite = |v: &[f64]| v.iter().all(|x| x.is_finite());
        match *self {
            AgentParams::GeneralBox { alpha, p_low, p_high, e_low, e_high } => {
                if !finite(&[alpha, p_low, p_high, e_low, e_high]) {
                    return Err(Error::InvalidParams("non-finite coefficient".into()));
                }
                if alpha < ALPHA_MIN {
                    return Err(Error::InvalidParams(format!("alpha {alpha} below {ALPHA_MIN}")));
                }
                if p_low > p_high || e_low > e_high {
                    return Err(Error::InfeasibleModel("bounds out of order".into()));
                }
                if p_low > 0.0 || p_high < 0.0 || e_low > 0.0 || e_high < 0.0 {
                    return Err(Error::InfeasibleModel("zero response must be feasible".into()));
                }
            }
            AgentParams::TotalBudget { alpha, m_budget } => {
                if !finite(&[alpha, m_budget]) {
                    return Err(Error::InvalidParams("non-finite coefficient".into()));
                }
                if alpha < ALPHA_MIN {
                    return Err(Error::InvalidParams(format!("alpha {alpha} below {ALPHA_MIN}")));
                }
                if m_budget < 0.0 {
                    return Err(Error::InfeasibleModel(format!("negative budget {m_budget}")));
                }
            }
            AgentParams::AsymmetricDisutility { alpha1, alpha2, d_min } => {
                if !finite(&[alpha1, alpha2, d_min]) {
                    return Err(Error::InvalidParams("non-finite coefficient".into()));
                }
                if alpha1 <= 0.0 || alpha2 <= 0.0 {
                    return Err(Error::InvalidParams("asymmetric curvatures must be positive".into()));
                }
            }
        }
        Ok(())
    }

    /// Per-step bounds. `TotalBudget` only constrains the cumulative sum at the
    /// final step; every other bound is infinite.
    pub fn expand(&self, horizon: usize) -> Result<BoxBounds> {
        match *self {
            AgentParams::GeneralBox { p_low, p_high, e_low, e_high, .. } => Ok(BoxBounds {
                p_low: vec![p_low; horizon],
                p_high: vec![p_high; horizon],
                e_low: vec![e_low; horizon],
                e_high: vec![e_high; horizon],
            }),
            AgentParams::TotalBudget { m_budget, .. } => {
                let mut b = BoxBounds::unbounded(horizon);
                if horizon > 0 {
                    b.e_low[horizon - 1] = -m_budget;
                    b.e_high[horizon - 1] = m_budget;
                }
                Ok(b)
            }
            AgentParams::AsymmetricDisutility { .. } => Ok(BoxBounds::unbounded(horizon)),
        }
    }

    /// Per-step curvature. `baseline` is required for the asymmetric model,
    /// where the curvature also depends on the sign of the response.
    pub fn constant_alpha(&self) -> Option<f64> {
        match *self {
            AgentParams::GeneralBox { alpha, .. } | AgentParams::TotalBudget { alpha, .. } => Some(alpha),
            AgentParams::AsymmetricDisutility { .. } => None,
        }
    }

    /// Names of the trainable coefficients, in [`AgentParams::to_vec`] order.
    /// Ghost demand of the asymmetric model is treated as known.
    pub fn trainable_names(&self) -> &'static [&'static str] {
        match self {
            AgentParams::GeneralBox { .. } => &["alpha", "p_low", "p_high", "e_low", "e_high"],
            AgentParams::TotalBudget { .. } => &["alpha", "m_budget"],
            AgentParams::AsymmetricDisutility { .. } => &["alpha1", "alpha2"],
        }
    }

    pub fn to_vec(&self) -> Vec<f64> {
        match *self {
            AgentParams::GeneralBox { alpha, p_low, p_high, e_low, e_high } => vec![alpha, p_low, p_high, e_low, e_high],
            AgentParams::TotalBudget { alpha, m_budget } => vec![alpha, m_budget],
            AgentParams::AsymmetricDisutility { alpha1, alpha2, .. } => vec![alpha1, alpha2],
        }
    }

    /// Same variant with trainable coefficients replaced from `v`.
    pub fn with_vec(&self, v: &[f64]) -> Result<Self> {
        check_len("agent parameter vector", self.to_vec().len(), v.len())?;
        Ok(match *self {
            AgentParams::GeneralBox { .. } => {
                AgentParams::GeneralBox { alpha: v[0], p_low: v[1], p_high: v[2], e_low: v[3], e_high: v[4] }
            }
            AgentParams::TotalBudget { .. } => AgentParams::TotalBudget { alpha: v[0], m_budget: v[1] },
            AgentParams::AsymmetricDisutility { d_min, .. } => {
                AgentParams::AsymmetricDisutility { alpha1: v[0], alpha2: v[1], d_min }
            }
        })
    }

    /// Clamp into the region where the forward solve is well posed.
    pub fn project(&self, limits: &ProjectionLimits) -> Self {
        match *self {
            AgentParams::GeneralBox { alpha, p_low, p_high, e_low, e_high } => AgentParams::GeneralBox {
                alpha: alpha.max(limits.alpha_min),
                p_low: p_low.min(0.0),
                p_high: p_high.max(0.0),
                e_low: e_low.min(0.0),
                e_high: e_high.max(0.0),
            },
            AgentParams::TotalBudget { alpha, m_budget } => AgentParams::TotalBudget {
                alpha: alpha.max(limits.alpha_min),
                m_budget: m_budget.max(limits.m_min),
            },
            AgentParams::AsymmetricDisutility { alpha1, alpha2, d_min } => AgentParams::AsymmetricDisutility {
                alpha1: alpha1.max(limits.alpha_min),
                alpha2: alpha2.max(limits.alpha_min),
                d_min,
            },
        }
    }
}

/// Lower limits enforced on the agent coefficients after every update.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProjectionLimits {
    pub alpha_min: f64,
    pub m_min: f64,
}

impl Default for ProjectionLimits {
    fn default() -> Self {
        Self { alpha_min: ALPHA_MIN, m_min: 1e-3 }
    }
}

/// Incentive price per step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct PriceSignal(Vec<f64>);

impl PriceSignal {
    pub fn new(lambda: Vec<f64>) -> Result<Self> {
        if lambda.is_empty() {
            return Err(Error::InvalidParams("price signal needs at least one step".into()));
        }
        if lambda.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParams("non-finite price".into()));
        }
        Ok(Self(lambda))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl TryFrom<Vec<f64>> for PriceSignal {
    type Error = Error;

    fn try_from(v: Vec<f64>) -> Result<Self> {
        Self::new(v)
    }
}

impl From<PriceSignal> for Vec<f64> {
    fn from(p: PriceSignal) -> Self {
        p.0
    }
}

/// Per-step bounds; entries with magnitude `>= INF_BOUND` are absent.
#[derive(Debug, Clone, PartialEq)]
pub struct BoxBounds {
    pub p_low: Vec<f64>,
    pub p_high: Vec<f64>,
    pub e_low: Vec<f64>,
    pub e_high: Vec<f64>,
}

/// Constraint families in the row order of the KKT system.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Family {
    PHigh,
    PLow,
    EHigh,
    ELow,
}

impl Family {
    pub const ALL: [Family; 4] = [Family::PHigh, Family::PLow, Family::EHigh, Family::ELow];

    /// Block index in the 5-block KKT layout (block 0 is `y`).
    pub fn block(self) -> usize {
        match self {
            Family::PHigh => 1,
            Family::PLow => 2,
            Family::EHigh => 3,
            Family::ELow => 4,
        }
    }
}

impl BoxBounds {
    pub fn unbounded(horizon: usize) -> Self {
        Self {
            p_low: vec![-INF_BOUND; horizon],
            p_high: vec![INF_BOUND; horizon],
            e_low: vec![-INF_BOUND; horizon],
            e_high: vec![INF_BOUND; horizon],
        }
    }

    pub fn horizon(&self) -> usize {
        self.p_low.len()
    }

    pub fn bound(&self, family: Family, t: usize) -> f64 {
        match family {
            Family::PHigh => self.p_high[t],
            Family::PLow => self.p_low[t],
            Family::EHigh => self.e_high[t],
            Family::ELow => self.e_low[t],
        }
    }

    pub fn is_finite(&self, family: Family, t: usize) -> bool {
        !is_infinite_bound(self.bound(family, t))
    }

    /// Slack of each constraint in the sign convention of the KKT rows:
    /// `y - P_hi`, `P_lo - y`, `Gamma y - E_hi`, `E_lo - Gamma y` (all `<= 0` when feasible).
    pub fn signed_gap(&self, family: Family, t: usize, y: &[f64], cum: &[f64]) -> f64 {
        match family {
            Family::PHigh => y[t] - self.p_high[t],
            Family::PLow => self.p_low[t] - y[t],
            Family::EHigh => cum[t] - self.e_high[t],
            Family::ELow => self.e_low[t] - cum[t],
        }
    }

    fn check_zero_feasible(&self) -> Result<()> {
        for t in 0..self.horizon() {
            if self.p_low[t] > 0.0 || self.p_high[t] < 0.0 || self.e_low[t] > 0.0 || self.e_high[t] < 0.0 {
                return Err(Error::InfeasibleModel(format!("zero response infeasible at t={t}")));
            }
        }
        Ok(())
    }
}

/// Primal optimum with the duals of the four constraint families.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QPSolution {
    pub y: Vec<f64>,
    pub mu_lo: Vec<f64>,
    pub mu_hi: Vec<f64>,
    pub nu_lo: Vec<f64>,
    pub nu_hi: Vec<f64>,
    pub objective_value: f64,
    pub kkt_residual: f64,
    /// Curvature each step was solved with; for the asymmetric model this is
    /// the side-selected `alpha_k / (D_t - d_min)`.
    pub alpha_eff: Vec<f64>,
    pub iterations: usize,
}

impl QPSolution {
    pub fn horizon(&self) -> usize {
        self.y.len()
    }

    pub fn dual(&self, family: Family) -> &[f64] {
        match family {
            Family::PHigh => &self.mu_hi,
            Family::PLow => &self.mu_lo,
            Family::EHigh => &self.nu_hi,
            Family::ELow => &self.nu_lo,
        }
    }

    fn dual_mut(&mut self, family: Family) -> &mut Vec<f64> {
        match family {
            Family::PHigh => &mut self.mu_hi,
            Family::PLow => &mut self.mu_lo,
            Family::EHigh => &mut self.nu_hi,
            Family::ELow => &mut self.nu_lo,
        }
    }
}

pub(crate) fn cumsum(y: &[f64]) -> Vec<f64> {
    y.iter()
        .scan(0.0, |acc, v| {
            *acc += v;
            Some(*acc)
        })
        .collect()
}

/// `(G, h, row labels)` for the finite rows of `bounds` in `G y <= h` form.
fn constraint_rows(bounds: &BoxBounds) -> (DMatrix<f64>, Vec<f64>, Vec<(Family, usize)>) {
    let n = bounds.horizon();
    let mut labels = Vec::new();
    for family in Family::ALL {
        for t in 0..n {
            if bounds.is_finite(family, t) {
                labels.push((family, t));
            }
        }
    }
    let mut g = DMatrix::zeros(labels.len(), n);
    let mut h = Vec::with_capacity(labels.len());
    for (r, &(family, t)) in labels.iter().enumerate() {
        match family {
            Family::PHigh => g[(r, t)] = 1.0,
            Family::PLow => g[(r, t)] = -1.0,
            Family::EHigh => (0..=t).for_each(|k| g[(r, k)] = 1.0),
            Family::ELow => (0..=t).for_each(|k| g[(r, k)] = -1.0),
        }
        h.push(match family {
            Family::PHigh | Family::EHigh => bounds.bound(family, t),
            Family::PLow | Family::ELow => -bounds.bound(family, t),
        });
    }
    (g, h, labels)
}

fn resolve_alpha(params: &AgentParams, horizon: usize, alpha_vec: Option<&[f64]>) -> Result<Vec<f64>> {
    match alpha_vec {
        Some(a) => {
            check_len("alpha_vec", horizon, a.len())?;
            if let Some(bad) = a.iter().find(|&&v| !(v >= ALPHA_MIN) || !v.is_finite()) {
                return Err(Error::InvalidParams(format!("time-varying alpha {bad} below {ALPHA_MIN}")));
            }
            Ok(a.to_vec())
        }
        None => params
            .constant_alpha()
            .map(|a| vec![a; horizon])
            .ok_or_else(|| Error::InvalidParams("asymmetric model needs a baseline; use solve_asymmetric".into())),
    }
}

fn assemble(labels: &[(Family, usize)], z: &[f64], y: Vec<f64>, prices: &[f64], alpha: Vec<f64>, iterations: usize) -> QPSolution {
    let n = y.len();
    let mut sol = QPSolution {
        objective_value: agent_objective_unchecked(&y, prices, &alpha),
        y,
        mu_lo: vec![0.0; n],
        mu_hi: vec![0.0; n],
        nu_lo: vec![0.0; n],
        nu_hi: vec![0.0; n],
        kkt_residual: 0.0,
        alpha_eff: alpha,
        iterations,
    };
    for (&(family, t), &zj) in labels.iter().zip(z) {
        sol.dual_mut(family)[t] = zj;
    }
    sol
}

/// Solve the agent problem for explicit per-step bounds.
pub fn solve_with_bounds(bounds: &BoxBounds, prices: &PriceSignal, alpha: &[f64]) -> Result<QPSolution> {
    let n = prices.len();
    check_len("bounds", n, bounds.horizon())?;
    check_len("alpha", n, alpha.len())?;
    bounds.check_zero_feasible()?;
    let (g, h, labels) = constraint_rows(bounds);
    let c = prices.as_slice();
    let qp = InequalityQp { q: alpha, c, g: &g, h: &h };
    let raw = ipm::solve_checked(&qp, TOL_KKT)?;
    let mut sol = assemble(&labels, &raw.z, raw.x, c, alpha.to_vec(), raw.iterations);
    sol.kkt_residual = kkt_residuals_for(&sol, bounds, c, alpha)?.max();
    Ok(sol)
}

/// Forward solve for the box and total-budget agents.
///
/// `alpha_vec` overrides the constant curvature with a per-step one.
pub fn solve_agent_qp(params: &AgentParams, prices: &PriceSignal, alpha_vec: Option<&[f64]>) -> Result<QPSolution> {
    params.validate()?;
    let n = prices.len();
    let alpha = resolve_alpha(params, n, alpha_vec)?;
    match *params {
        AgentParams::TotalBudget { m_budget, .. } => {
            // Two rows on the window total, assembled directly.
            let g = DMatrix::from_fn(2, n, |r, _| if r == 0 { 1.0 } else { -1.0 });
            let h = [m_budget, m_budget];
            let c = prices.as_slice();
            let qp = InequalityQp { q: &alpha, c, g: &g, h: &h };
            let raw = ipm::solve_checked(&qp, TOL_KKT)?;
            let labels = [(Family::EHigh, n - 1), (Family::ELow, n - 1)];
            let mut sol = assemble(&labels, &raw.z, raw.x, c, alpha.clone(), raw.iterations);
            sol.kkt_residual = kkt_residuals_for(&sol, &params.expand(n)?, c, &alpha)?.max();
            Ok(sol)
        }
        AgentParams::GeneralBox { .. } => solve_with_bounds(&params.expand(n)?, prices, &alpha),
        AgentParams::AsymmetricDisutility { .. } => unreachable!("resolve_alpha rejects the asymmetric model"),
    }
}

/// Side-specific curvatures `(increase, decrease)` of the asymmetric model.
pub fn asymmetric_curvatures(params: &AgentParams, baseline: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
    let AgentParams::AsymmetricDisutility { alpha1, alpha2, d_min } = *params else {
        return Err(Error::InvalidParams("expected the asymmetric disutility model".into()));
    };
    let mut up = Vec::with_capacity(baseline.len());
    let mut down = Vec::with_capacity(baseline.len());
    for (t, &d) in baseline.iter().enumerate() {
        if !(d > d_min + EPS_GAP) {
            return Err(Error::GhostDemandViolation { t, baseline: d, d_min });
        }
        up.push(alpha1 / (d - d_min));
        down.push(alpha2 / (d - d_min));
    }
    Ok((up, down))
}

/// Forward solve of the asymmetric-disutility agent via the split
/// `y = y_plus - y_minus`, `y_plus, y_minus >= 0`.
pub fn solve_asymmetric(params: &AgentParams, prices: &PriceSignal, baseline: &[f64]) -> Result<QPSolution> {
    params.validate()?;
    let n = prices.len();
    check_len("baseline", n, baseline.len())?;
    let (up, down) = asymmetric_curvatures(params, baseline)?;
    let lambda = prices.as_slice();

    let q: Vec<f64> = up.iter().chain(&down).copied().collect();
    let c: Vec<f64> = lambda.iter().copied().chain(lambda.iter().map(|l| -l)).collect();
    let g = DMatrix::from_fn(2 * n, 2 * n, |r, k| if r == k { -1.0 } else { 0.0 });
    let h = vec![0.0; 2 * n];
    let qp = InequalityQp { q: &q, c: &c, g: &g, h: &h };
    let raw = ipm::solve_checked(&qp, TOL_KKT)?;

    let y: Vec<f64> = (0..n).map(|t| raw.x[t] - raw.x[n + t]).collect();
    let alpha_eff: Vec<f64> = (0..n)
        .map(|t| {
            let increase = if y[t] != 0.0 { y[t] > 0.0 } else { lambda[t] <= 0.0 };
            if increase {
                up[t]
            } else {
                down[t]
            }
        })
        .collect();
    let objective_value = asymmetric_objective(&y, prices, params, baseline)?;
    let mut sol = assemble(&[], &[], y, lambda, alpha_eff.clone(), raw.iterations);
    sol.objective_value = objective_value;
    sol.kkt_residual = kkt_residuals_for(&sol, &BoxBounds::unbounded(n), lambda, &alpha_eff)?.max();
    Ok(sol)
}

/// Dispatch on the model kind; `baseline` is only read by the asymmetric model.
pub fn solve(params: &AgentParams, prices: &PriceSignal, baseline: Option<&[f64]>) -> Result<QPSolution> {
    match params.kind() {
        AgentModelKind::AsymmetricDisutility => {
            let d = baseline.ok_or(Error::MissingGroundTruth("baseline for the asymmetric agent"))?;
            solve_asymmetric(params, prices, d)
        }
        _ => solve_agent_qp(params, prices, None),
    }
}

/// KKT residual norms (all infinity norms).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KktResiduals {
    pub stationarity: f64,
    pub primal: f64,
    pub dual: f64,
    pub complementarity: f64,
}

impl KktResiduals {
    pub fn max(&self) -> f64 {
        self.stationarity.max(self.primal).max(self.dual).max(self.complementarity)
    }
}

/// Evaluate the KKT conditions of `sol` for `params`.
///
/// The cumulative dual sums in the stationarity row are formed as
/// `Gamma^T nu`, i.e. reverse cumulative sums.
pub fn kkt_residuals(sol: &QPSolution, params: &AgentParams, prices: &PriceSignal, alpha_vec: &[f64]) -> Result<KktResiduals> {
    let n = prices.len();
    kkt_residuals_for(sol, &params.expand(n)?, prices.as_slice(), alpha_vec)
}

fn kkt_residuals_for(sol: &QPSolution, bounds: &BoxBounds, lambda: &[f64], alpha: &[f64]) -> Result<KktResiduals> {
    let n = lambda.len();
    check_len("solution", n, sol.y.len())?;
    check_len("alpha_vec", n, alpha.len())?;
    check_len("bounds", n, bounds.horizon())?;
    for family in Family::ALL {
        check_len("dual vector", n, sol.dual(family).len())?;
    }
    let y = &sol.y;
    let cum = cumsum(y);
    let gt_nu = |nu: &[f64]| -> Vec<f64> {
        let mut out = vec![0.0; n];
        let mut acc = 0.0;
        for t in (0..n).rev() {
            acc += nu[t];
            out[t] = acc;
        }
        out
    };
    let nu_hi_sum = gt_nu(&sol.nu_hi);
    let nu_lo_sum = gt_nu(&sol.nu_lo);
    let mut r = KktResiduals { stationarity: 0.0, primal: 0.0, dual: 0.0, complementarity: 0.0 };
    for t in 0..n {
        let st = lambda[t] + alpha[t] * y[t] + sol.mu_hi[t] - sol.mu_lo[t] + nu_hi_sum[t] - nu_lo_sum[t];
        r.stationarity = r.stationarity.max(st.abs());
        for family in Family::ALL {
            let dual = sol.dual(family)[t];
            r.dual = r.dual.max((-dual).max(0.0));
            if !bounds.is_finite(family, t) {
                // Pinned to zero.
                r.complementarity = r.complementarity.max(dual.abs());
                continue;
            }
            let gap = bounds.signed_gap(family, t, y, &cum);
            r.primal = r.primal.max(gap.max(0.0));
            r.complementarity = r.complementarity.max((dual * gap).abs());
        }
    }
    Ok(r)
}

fn agent_objective_unchecked(y: &[f64], lambda: &[f64], alpha: &[f64]) -> f64 {
    y.iter().zip(lambda).zip(alpha).map(|((y, l), a)| l * y + 0.5 * a * y * y).sum()
}

/// `sum_t lambda_t y_t + alpha_t / 2 y_t^2`.
pub fn agent_objective(y: &[f64], prices: &PriceSignal, alpha_vec: &[f64]) -> Result<f64> {
    check_len("response", prices.len(), y.len())?;
    check_len("alpha_vec", prices.len(), alpha_vec.len())?;
    Ok(agent_objective_unchecked(y, prices.as_slice(), alpha_vec))
}

/// Objective of the asymmetric model at `y` for the given baseline.
pub fn asymmetric_objective(y: &[f64], prices: &PriceSignal, params: &AgentParams, baseline: &[f64]) -> Result<f64> {
    check_len("response", prices.len(), y.len())?;
    check_len("baseline", prices.len(), baseline.len())?;
    let (up, down) = asymmetric_curvatures(params, baseline)?;
    Ok(prices
        .as_slice()
        .iter()
        .enumerate()
        .map(|(t, l)| {
            let plus = y[t].max(0.0);
            let minus = (-y[t]).max(0.0);
            l * y[t] + 0.5 * up[t] * plus * plus + 0.5 * down[t] * minus * minus
        })
        .sum())
}

#[cfg(test)]
mod tests;
