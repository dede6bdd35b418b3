//! Implicit differentiation of the agent optimum.
//!
//! Totally differentiating the KKT conditions at `(y*, mu_hi*, mu_lo*, nu_hi*, nu_lo*)`
//! gives `A dv = -B dtheta` with the `5T x 5T` block matrix
//!
//! ```text
//!     [ diag(alpha)         I               -I               Gamma'             -Gamma'           ]
//!     [ diag(mu_hi)         diag(y - P_hi)   0                0                  0                ]
//!     [ -diag(mu_lo)        0                diag(P_lo - y)   0                  0                ]
//!     [ diag(nu_hi) Gamma   0                0                diag(Gy - E_hi)    0                ]
//!     [ -diag(nu_lo) Gamma  0                0                0                  diag(E_lo - Gy)  ]
//! ```
//!
//! where `Gamma` is the lower-triangular all-ones matrix. Parameter Jacobians
//! are the `y` block of `-A^{-1} b` for each right-hand side `b`; training uses
//! one transposed solve per scenario instead ([`vjp_agent`]).
//!
//! Rows belonging to infinite bounds are replaced by identity rows; their
//! duals are pinned to zero, so factorization only touches the remaining
//! "live" rows and columns.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::qp::{self, AgentParams, BoxBounds, Family, PriceSignal, QPSolution};

/// Condition-number ceiling before a system is declared degenerate.
pub const MAX_CONDITION: f64 = 1e12;
/// First Tikhonov shift tried on a rank-deficient system; escalated x10.
pub const REG_START: f64 = 1e-8;
/// Largest Tikhonov shift tried.
pub const REG_MAX: f64 = 1e-4;
/// Duals below this are treated as an inactive family.
pub const INACTIVE_DUAL: f64 = 1e-8;

const BLOCK_NAMES: [&str; 5] = ["y", "mu_hi", "mu_lo", "nu_hi", "nu_lo"];

pub fn block_name(block: usize) -> &'static str {
    BLOCK_NAMES[block]
}

pub fn lower_ones(n: usize) -> DMatrix<f64> {
    DMatrix::from_fn(n, n, |r, c| if c <= r { 1.0 } else { 0.0 })
}

#[derive(Debug, Clone)]
struct Factor {
    lu: nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>,
    inv: DMatrix<f64>,
    live_matrix: DMatrix<f64>,
}

/// Assembled total-derivative system, factorized over its live rows.
#[derive(Debug, Clone)]
pub struct KktMatrix {
    pub a: DMatrix<f64>,
    pub gamma: DMatrix<f64>,
    pub regularization: f64,
    pub condition: f64,
    horizon: usize,
    /// Finite flag per constraint row (index `c` lives at `T + c`).
    finite: Vec<bool>,
    live: Vec<usize>,
    factor: Option<Factor>,
}

fn bounds_for(params: &AgentParams, horizon: usize) -> Result<BoxBounds> {
    params.expand(horizon)
}

impl KktMatrix {
    /// Assemble `A` without factorizing it.
    pub fn assemble(sol: &QPSolution, params: &AgentParams, alpha_vec: &[f64]) -> Result<Self> {
        let n = sol.horizon();
        check_len("alpha_vec", n, alpha_vec.len())?;
        let bounds = bounds_for(params, n)?;
        let gamma = lower_ones(n);
        let cum = qp::cumsum(&sol.y);
        let dim = 5 * n;
        let mut a = DMatrix::<f64>::zeros(dim, dim);
        let mut finite = vec![true; 4 * n];

        for t in 0..n {
            a[(t, t)] = alpha_vec[t];
        }
        for family in Family::ALL {
            let b = family.block();
            for t in 0..n {
                // Stationarity couplings: I, -I, Gamma', -Gamma'.
                match family {
                    Family::PHigh => a[(t, b * n + t)] = 1.0,
                    Family::PLow => a[(t, b * n + t)] = -1.0,
                    Family::EHigh => (0..=t).for_each(|k| a[(k, b * n + t)] = 1.0),
                    Family::ELow => (0..=t).for_each(|k| a[(k, b * n + t)] = -1.0),
                }
                let r = b * n + t;
                if !bounds.is_finite(family, t) {
                    finite[(b - 1) * n + t] = false;
                    a[(r, r)] = 1.0;
                    continue;
                }
                let dual = sol.dual(family)[t];
                match family {
                    Family::PHigh => a[(r, t)] = dual,
                    Family::PLow => a[(r, t)] = -dual,
                    Family::EHigh => (0..=t).for_each(|k| a[(r, k)] = dual),
                    Family::ELow => (0..=t).for_each(|k| a[(r, k)] = -dual),
                }
                a[(r, r)] = bounds.signed_gap(family, t, &sol.y, &cum);
            }
        }
        let live = (0..n).chain((0..4 * n).filter(|&c| finite[c]).map(|c| n + c)).collect();
        Ok(Self { a, gamma, regularization: 0.0, condition: f64::NAN, horizon: n, finite, live, factor: None })
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    /// Row/column indices that take part in the factorization.
    pub fn live(&self) -> &[usize] {
        &self.live
    }

    pub fn is_finite_row(&self, row: usize) -> bool {
        row < self.horizon || self.finite[row - self.horizon]
    }

    /// LU with partial pivoting on the live block, escalating a diagonal
    /// shift from `REG_START` to `REG_MAX` until the condition estimate
    /// clears `MAX_CONDITION`.
    pub fn factorize(&mut self) -> Result<()> {
        let k = self.live.len();
        let live_matrix = DMatrix::from_fn(k, k, |r, c| self.a[(self.live[r], self.live[c])]);
        let norm1 = |m: &DMatrix<f64>| {
            (0..m.ncols()).map(|c| m.column(c).iter().map(|v| v.abs()).sum::<f64>()).fold(0.0, f64::max)
        };
        let mut delta = 0.0;
        let mut condition = f64::INFINITY;
        loop {
            let mut m = live_matrix.clone();
            if delta > 0.0 {
                for i in 0..k {
                    m[(i, i)] += delta;
                }
            }
            let lu = m.clone().lu();
            if let Some(inv) = lu.try_inverse() {
                if inv.iter().all(|v| v.is_finite()) {
                    condition = norm1(&m) * norm1(&inv);
                    if condition <= MAX_CONDITION {
                        self.regularization = delta;
                        self.condition = condition;
                        self.factor = Some(Factor { lu, inv, live_matrix: m });
                        return Ok(());
                    }
                }
            }
            delta = if delta == 0.0 { REG_START } else { delta * 10.0 };
            if delta > REG_MAX * 1.000_001 {
                break;
            }
        }
        Err(Error::DegenerateSystem { indices: self.weak_rows(), condition })
    }

    /// Constraint rows (0-based, in `4T` family-major order) whose dual and
    /// slack both vanish.
    fn weak_rows(&self) -> Vec<usize> {
        let n = self.horizon;
        (0..4 * n)
            .filter(|&c| self.finite[c])
            .filter(|&c| {
                let r = n + c;
                let slack = self.a[(r, r)].abs();
                let coupling = (0..n).map(|k| self.a[(r, k)].abs()).fold(0.0, f64::max);
                slack.max(coupling) < 1e-9
            })
            .collect()
    }

    fn factor(&self) -> Result<&Factor> {
        self.factor.as_ref().ok_or(Error::DegenerateSystem { indices: Vec::new(), condition: f64::NAN })
    }

    fn restrict(&self, full: &[f64]) -> DVector<f64> {
        DVector::from_iterator(self.live.len(), self.live.iter().map(|&i| full[i]))
    }

    fn expand(&self, live: &DVector<f64>) -> Vec<f64> {
        let mut out = vec![0.0; 5 * self.horizon];
        for (k, &i) in self.live.iter().enumerate() {
            out[i] = live[k];
        }
        out
    }

    /// `A^{-1} rhs` over the full `5T` layout (zero on pinned rows).
    pub fn solve(&self, rhs: &[f64]) -> Result<Vec<f64>> {
        check_len("rhs", 5 * self.horizon, rhs.len())?;
        let f = self.factor()?;
        let x = f.lu.solve(&self.restrict(rhs)).ok_or(Error::DegenerateSystem { indices: self.weak_rows(), condition: self.condition })?;
        Ok(self.expand(&x))
    }

    /// `A^{-T} rhs`, with one step of iterative refinement.
    pub fn solve_transpose(&self, rhs: &[f64]) -> Result<Vec<f64>> {
        check_len("rhs", 5 * self.horizon, rhs.len())?;
        let f = self.factor()?;
        let b = self.restrict(rhs);
        let mut w = f.inv.tr_mul(&b);
        let r = &b - f.live_matrix.tr_mul(&w);
        w += f.inv.tr_mul(&r);
        Ok(self.expand(&w))
    }

    /// Test hook: negate block `(row_block, col_block)` and refactorize.
    #[doc(hidden)]
    pub fn inject_sign_flip(&mut self, row_block: usize, col_block: usize) -> Result<()> {
        let n = self.horizon;
        for r in 0..n {
            for c in 0..n {
                self.a[(row_block * n + r, col_block * n + c)] *= -1.0;
            }
        }
        self.factorize()
    }
}

/// Assemble and factorize the total-derivative system for `sol`.
pub fn build_kkt_system(sol: &QPSolution, params: &AgentParams, alpha_vec: &[f64]) -> Result<KktMatrix> {
    let mut sys = KktMatrix::assemble(sol, params, alpha_vec)?;
    sys.factorize()?;
    Ok(sys)
}

/// Right-hand sides `dF/dtheta` (so that `dv = -A^{-1} b dtheta`).
fn rhs_for(sol: &QPSolution, which: Param) -> Vec<f64> {
    let n = sol.horizon();
    let mut b = vec![0.0; 5 * n];
    match which {
        Param::Alpha => b[..n].copy_from_slice(&sol.y),
        Param::AlphaAt(t) => b[t] = sol.y[t],
        Param::Bound(family) => {
            let sign = match family {
                Family::PHigh | Family::EHigh => -1.0,
                Family::PLow | Family::ELow => 1.0,
            };
            let off = family.block() * n;
            for (t, d) in sol.dual(family).iter().enumerate() {
                b[off + t] = sign * d;
            }
        }
    }
    b
}

#[derive(Debug, Clone, Copy)]
enum Param {
    Alpha,
    AlphaAt(usize),
    Bound(Family),
}

/// Derivatives of `y*` with respect to each agent coefficient.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JacobianSet {
    pub dy_dalpha: Vec<f64>,
    pub dy_dp_hi: Vec<f64>,
    pub dy_dp_lo: Vec<f64>,
    pub dy_de_hi: Vec<f64>,
    pub dy_de_lo: Vec<f64>,
    /// Total-budget models: `dy/dE_hi - dy/dE_lo` at `E_hi = M`, `E_lo = -M`.
    pub dy_dm: Option<Vec<f64>>,
    /// Column `t` is `dy/dalpha_t` for a per-step curvature.
    pub dy_dalpha_t: Option<Vec<Vec<f64>>>,
}

impl JacobianSet {
    /// `(name, column)` pairs for every populated Jacobian.
    pub fn columns(&self) -> Vec<(&'static str, &[f64])> {
        let mut out = vec![
            ("alpha", self.dy_dalpha.as_slice()),
            ("p_hi", self.dy_dp_hi.as_slice()),
            ("p_lo", self.dy_dp_lo.as_slice()),
            ("e_hi", self.dy_de_hi.as_slice()),
            ("e_lo", self.dy_de_lo.as_slice()),
        ];
        if let Some(m) = &self.dy_dm {
            out.push(("m", m.as_slice()));
        }
        out
    }
}

fn y_block(sys: &KktMatrix, sol: &QPSolution, which: Param) -> Result<Vec<f64>> {
    let n = sol.horizon();
    if let Param::Bound(family) = which {
        if sol.dual(family).iter().all(|d| d.abs() < INACTIVE_DUAL) {
            return Ok(vec![0.0; n]);
        }
    }
    let v = sys.solve(&rhs_for(sol, which))?;
    Ok(v[..n].iter().map(|x| -x).collect())
}

/// Full Jacobians, one solve per right-hand side.
pub fn solve_jacobians(sys: &KktMatrix, sol: &QPSolution, params: &AgentParams) -> Result<JacobianSet> {
    let n = sol.horizon();
    check_len("solution", sys.horizon(), n)?;
    let dy_de_hi = y_block(sys, sol, Param::Bound(Family::EHigh))?;
    let dy_de_lo = y_block(sys, sol, Param::Bound(Family::ELow))?;
    let dy_dm = matches!(params, AgentParams::TotalBudget { .. })
        .then(|| dy_de_hi.iter().zip(&dy_de_lo).map(|(h, l)| h - l).collect());
    let dy_dalpha_t = (0..n).map(|t| y_block(sys, sol, Param::AlphaAt(t))).collect::<Result<Vec<_>>>()?;
    Ok(JacobianSet {
        dy_dalpha: y_block(sys, sol, Param::Alpha)?,
        dy_dp_hi: y_block(sys, sol, Param::Bound(Family::PHigh))?,
        dy_dp_lo: y_block(sys, sol, Param::Bound(Family::PLow))?,
        dy_de_hi,
        dy_de_lo,
        dy_dm,
        dy_dalpha_t: Some(dy_dalpha_t),
    })
}

/// `upstream' dy*/dtheta` for every agent coefficient.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentGradient {
    pub alpha: f64,
    pub alpha_t: Vec<f64>,
    pub p_lo: f64,
    pub p_hi: f64,
    pub e_lo: f64,
    pub e_hi: f64,
    pub m: f64,
}

impl AgentGradient {
    /// Gradient in [`AgentParams::to_vec`] order.
    pub fn trainable(&self, params: &AgentParams, sol: &QPSolution) -> Vec<f64> {
        match *params {
            AgentParams::GeneralBox { .. } => vec![self.alpha, self.p_lo, self.p_hi, self.e_lo, self.e_hi],
            AgentParams::TotalBudget { .. } => vec![self.alpha, self.m],
            AgentParams::AsymmetricDisutility { alpha1, alpha2, .. } => {
                // alpha_t = alpha_k / (D_t - d_min) on the side y_t selects.
                let mut g = [0.0, 0.0];
                for t in 0..sol.horizon() {
                    let (k, ak) = if sol.y[t] > 0.0 { (0, alpha1) } else { (1, alpha2) };
                    g[k] += self.alpha_t[t] * sol.alpha_eff[t] / ak;
                }
                g.to_vec()
            }
        }
    }

    /// Gradient reaching the baseline through `alpha(D)`; zero for models
    /// whose curvature does not depend on demand.
    pub fn baseline(&self, params: &AgentParams, sol: &QPSolution) -> Vec<f64> {
        match *params {
            AgentParams::AsymmetricDisutility { alpha1, alpha2, .. } => (0..sol.horizon())
                .map(|t| {
                    let ak = if sol.y[t] > 0.0 { alpha1 } else { alpha2 };
                    // d(alpha_k / (D - d_min)) / dD = -alpha_t^2 / alpha_k
                    -self.alpha_t[t] * sol.alpha_eff[t] * sol.alpha_eff[t] / ak
                })
                .collect(),
            _ => vec![0.0; sol.horizon()],
        }
    }
}

/// Vector-Jacobian product through one transposed solve.
pub fn vjp_agent(sys: &KktMatrix, sol: &QPSolution, upstream: &[f64]) -> Result<AgentGradient> {
    let n = sol.horizon();
    check_len("upstream", n, upstream.len())?;
    check_len("solution", sys.horizon(), n)?;
    let mut rhs = vec![0.0; 5 * n];
    rhs[..n].copy_from_slice(upstream);
    let w = if upstream.iter().all(|&u| u == 0.0) { vec![0.0; 5 * n] } else { sys.solve_transpose(&rhs)? };
    // u' dy/dtheta = -w' b_theta
    let dot_dual = |family: Family, sign: f64| -> f64 {
        let dual = sol.dual(family);
        if dual.iter().all(|d| d.abs() < INACTIVE_DUAL) {
            return 0.0;
        }
        let off = family.block() * n;
        -(0..n).map(|t| w[off + t] * sign * dual[t]).sum::<f64>()
    };
    let alpha_t: Vec<f64> = (0..n).map(|t| -w[t] * sol.y[t]).collect();
    let e_hi = dot_dual(Family::EHigh, -1.0);
    let e_lo = dot_dual(Family::ELow, 1.0);
    Ok(AgentGradient {
        alpha: alpha_t.iter().sum(),
        alpha_t,
        p_lo: dot_dual(Family::PLow, 1.0),
        p_hi: dot_dual(Family::PHigh, -1.0),
        e_lo,
        e_hi,
        m: e_hi - e_lo,
    })
}

/// The KKT map `F(v)` (stationarity then the four complementarity blocks)
/// whose Jacobian in `v = (y, mu_hi, mu_lo, nu_hi, nu_lo)` is `A`.
pub fn kkt_map(v: &[f64], bounds: &BoxBounds, lambda: &[f64], alpha: &[f64]) -> Vec<f64> {
    let n = lambda.len();
    let y = &v[..n];
    let cum = qp::cumsum(y);
    let block = |b: usize| &v[b * n..(b + 1) * n];
    let mut f = vec![0.0; 5 * n];
    for t in 0..n {
        let tail = |b: usize| block(b)[t..].iter().sum::<f64>();
        f[t] = lambda[t] + alpha[t] * y[t] + block(1)[t] - block(2)[t] + tail(3) - tail(4);
    }
    for family in Family::ALL {
        let b = family.block();
        for t in 0..n {
            f[b * n + t] = block(b)[t] * bounds.signed_gap(family, t, y, &cum);
        }
    }
    f
}

/// Rebuild the live rows of `A` by central differences of [`kkt_map`].
/// `F` is affine in each coordinate, so the differences are exact up to rounding.
pub fn reconstruct_by_differences(sys: &KktMatrix, sol: &QPSolution, params: &AgentParams, prices: &PriceSignal, alpha: &[f64]) -> Result<DMatrix<f64>> {
    let n = sol.horizon();
    let bounds = params.expand(n)?;
    let mut v: Vec<f64> = sol.y.to_vec();
    for family in Family::ALL {
        v.extend_from_slice(sol.dual(family));
    }
    let h = 1e-2;
    let mut out = sys.a.clone();
    for c in 0..5 * n {
        let mut plus = v.clone();
        let mut minus = v.clone();
        plus[c] += h;
        minus[c] -= h;
        let fp = kkt_map(&plus, &bounds, prices.as_slice(), alpha);
        let fm = kkt_map(&minus, &bounds, prices.as_slice(), alpha);
        for r in 0..5 * n {
            if sys.is_finite_row(r) {
                out[(r, c)] = (fp[r] - fm[r]) / (2.0 * h);
            }
        }
    }
    Ok(out)
}

/// Largest entry difference per `(row_block, col_block)` over live rows.
pub fn block_discrepancies(sys: &KktMatrix, reference: &DMatrix<f64>) -> Vec<((usize, usize), f64)> {
    let n = sys.horizon();
    let mut out = Vec::new();
    for rb in 0..5 {
        for cb in 0..5 {
            let mut worst = 0.0f64;
            for r in 0..n {
                let row = rb * n + r;
                if !sys.is_finite_row(row) {
                    continue;
                }
                for c in 0..n {
                    worst = worst.max((sys.a[(row, cb * n + c)] - reference[(row, cb * n + c)]).abs());
                }
            }
            out.push(((rb, cb), worst));
        }
    }
    out
}

/// Central-difference Jacobians of the forward solve (test oracle).
///
/// Fails with `ActiveSetFlip` when the instance is degenerate (some finite
/// constraint has both dual and slack below `1e-3`) or when the active set
/// differs between the `+h` and `-h` solves.
pub fn finite_diff_jacobian(params: &AgentParams, prices: &PriceSignal, alpha_vec: Option<&[f64]>, h: f64) -> Result<JacobianSet> {
    let n = prices.len();
    let center = qp::solve_agent_qp(params, prices, alpha_vec)?;
    let bounds = params.expand(n)?;
    let alpha: Vec<f64> = match alpha_vec {
        Some(a) => a.to_vec(),
        None => center.alpha_eff.clone(),
    };
    let cum = qp::cumsum(&center.y);
    let active = |sol: &QPSolution, b: &BoxBounds| -> Vec<bool> {
        let cum = qp::cumsum(&sol.y);
        Family::ALL
            .iter()
            .flat_map(|&f| (0..n).map(move |t| (f, t)))
            .map(|(f, t)| b.is_finite(f, t) && sol.dual(f)[t] > -b.signed_gap(f, t, &sol.y, &cum))
            .collect()
    };
    for f in Family::ALL {
        for t in 0..n {
            if bounds.is_finite(f, t) && center.dual(f)[t].max(-bounds.signed_gap(f, t, &center.y, &cum)) < 1e-3 {
                return Err(Error::ActiveSetFlip { param: "degenerate instance" });
            }
        }
    }
    let center_active = active(&center, &bounds);

    let diff = |name: &'static str, perturb: &dyn Fn(f64) -> (BoxBounds, Vec<f64>)| -> Result<Vec<f64>> {
        let (bp, ap) = perturb(h);
        let (bm, am) = perturb(-h);
        let sp = qp::solve_with_bounds(&bp, prices, &ap)?;
        let sm = qp::solve_with_bounds(&bm, prices, &am)?;
        if active(&sp, &bp) != center_active || active(&sm, &bm) != center_active {
            return Err(Error::ActiveSetFlip { param: name });
        }
        Ok((0..n).map(|t| (sp.y[t] - sm.y[t]) / (2.0 * h)).collect())
    };
    let shift_family = |family: Family| {
        let bounds = &bounds;
        let alpha = &alpha;
        move |d: f64| {
            let mut b = bounds.clone();
            let v = match family {
                Family::PHigh => &mut b.p_high,
                Family::PLow => &mut b.p_low,
                Family::EHigh => &mut b.e_high,
                Family::ELow => &mut b.e_low,
            };
            for x in v.iter_mut().filter(|x| !qp::is_infinite_bound(**x)) {
                *x += d;
            }
            (b, alpha.clone())
        }
    };
    let dy_dalpha = diff("alpha", &|d| (bounds.clone(), alpha.iter().map(|a| a + d).collect()))?;
    let dy_dp_hi = diff("p_hi", &shift_family(Family::PHigh))?;
    let dy_dp_lo = diff("p_lo", &shift_family(Family::PLow))?;
    let dy_de_hi = diff("e_hi", &shift_family(Family::EHigh))?;
    let dy_de_lo = diff("e_lo", &shift_family(Family::ELow))?;
    let dy_dm = match *params {
        AgentParams::TotalBudget { .. } => Some(diff("m", &|d| {
            let mut b = bounds.clone();
            b.e_high[n - 1] += d;
            b.e_low[n - 1] -= d;
            (b, alpha.clone())
        })?),
        _ => None,
    };
    Ok(JacobianSet { dy_dalpha, dy_dp_hi, dy_dp_lo, dy_de_hi, dy_de_lo, dy_dm, dy_dalpha_t: None })
}
