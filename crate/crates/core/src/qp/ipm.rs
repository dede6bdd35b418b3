//! Dense primal-dual interior-point method for
//!
//! ```text
//!     minimize    1/2 x' diag(q) x + c' x
//!     subject to  G x <= h
//! ```
//!
//! using Mehrotra's predictor-corrector, followed by an active-set polish
//! that re-solves the equality-constrained problem on the identified active
//! set. The polish removes the O(mu) bias an interior point leaves in both
//! primal and duals, which the implicit backward pass would otherwise inherit.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

const MAX_ITER: usize = 100;
const STEP_FRACTION: f64 = 0.995;
const STOP_RES: f64 = 1e-11;
const STOP_MU: f64 = 1e-13;

pub(crate) struct InequalityQp<'a> {
    pub q: &'a [f64],
    pub c: &'a [f64],
    /// Row-major `m x n`.
    pub g: &'a DMatrix<f64>,
    pub h: &'a [f64],
}

#[derive(Debug, Clone)]
pub(crate) struct IpmSolution {
    pub x: Vec<f64>,
    pub z: Vec<f64>,
    pub iterations: usize,
}

struct Newton {
    dx: DVector<f64>,
    ds: DVector<f64>,
    dz: DVector<f64>,
}

impl InequalityQp<'_> {
    fn n(&self) -> usize {
        self.q.len()
    }

    fn m(&self) -> usize {
        self.h.len()
    }

    fn unconstrained(&self) -> Vec<f64> {
        self.q.iter().zip(self.c).map(|(q, c)| -c / q).collect()
    }

    /// Largest violation of stationarity, feasibility, sign and complementarity.
    pub fn residual(&self, x: &[f64], z: &[f64]) -> f64 {
        let xv = DVector::from_column_slice(x);
        let zv = DVector::from_column_slice(z);
        let gx = self.g * &xv;
        let gtz = self.g.tr_mul(&zv);
        let mut worst = 0.0f64;
        for i in 0..self.n() {
            worst = worst.max((self.q[i] * x[i] + self.c[i] + gtz[i]).abs());
        }
        for j in 0..self.m() {
            let slack = self.h[j] - gx[j];
            worst = worst.max((-slack).max(0.0));
            worst = worst.max((-z[j]).max(0.0));
            worst = worst.max((z[j] * slack).abs());
        }
        worst
    }

    fn newton(
        &self,
        chol: &nalgebra::Cholesky<f64, nalgebra::Dyn>,
        s: &DVector<f64>,
        z: &DVector<f64>,
        rd: &DVector<f64>,
        rp: &DVector<f64>,
        rc: &DVector<f64>,
    ) -> Newton {
        // (Q + G' W G) dx = -rd + G' S^-1 (rc - Z rp)
        let tmp = DVector::from_fn(self.m(), |j, _| (rc[j] - z[j] * rp[j]) / s[j]);
        let rhs = -rd + self.g.tr_mul(&tmp);
        let dx = chol.solve(&rhs);
        let ds = -rp - self.g * &dx;
        let dz = DVector::from_fn(self.m(), |j, _| (-rc[j] - z[j] * ds[j]) / s[j]);
        Newton { dx, ds, dz }
    }

    pub fn solve(&self) -> Result<IpmSolution> {
        let n = self.n();
        let m = self.m();
        if m == 0 {
            return Ok(IpmSolution { x: self.unconstrained(), z: Vec::new(), iterations: 0 });
        }
        let g = self.g;
        let h = DVector::from_column_slice(self.h);
        let c = DVector::from_column_slice(self.c);
        let mut x = DVector::<f64>::zeros(n);
        let mut s = DVector::from_fn(m, |j, _| (h[j]).max(1.0));
        let mut z = DVector::from_element(m, 1.0);

        let scale_d = 1.0 + c.amax();
        let scale_p = 1.0 + h.amax();
        let mut iterations = 0;
        for it in 0..MAX_ITER {
            iterations = it;
            let rd = DVector::from_fn(n, |i, _| self.q[i] * x[i] + c[i]) + g.tr_mul(&z);
            let rp = g * &x + &s - &h;
            let mu = s.dot(&z) / m as f64;
            if rd.amax() <= STOP_RES * scale_d && rp.amax() <= STOP_RES * scale_p && mu <= STOP_MU {
                break;
            }

            let mut hess = DMatrix::<f64>::zeros(n, n);
            for j in 0..m {
                let w = z[j] / s[j];
                let row = g.row(j);
                for a in 0..n {
                    let ga = row[a];
                    if ga == 0.0 {
                        continue;
                    }
                    let wa = w * ga;
                    for b in 0..n {
                        hess[(a, b)] += wa * row[b];
                    }
                }
            }
            for i in 0..n {
                hess[(i, i)] += self.q[i];
            }
            let Some(chol) = hess.cholesky() else {
                break;
            };

            let rc_aff = s.component_mul(&z);
            let aff = self.newton(&chol, &s, &z, &rd, &rp, &rc_aff);
            let a_aff = max_step(&s, &aff.ds).min(max_step(&z, &aff.dz));
            let mu_aff = (&s + a_aff * &aff.ds).dot(&(&z + a_aff * &aff.dz)) / m as f64;
            let sigma = (mu_aff / mu).powi(3);

            let rc = DVector::from_fn(m, |j, _| s[j] * z[j] + aff.ds[j] * aff.dz[j] - sigma * mu);
            let step = self.newton(&chol, &s, &z, &rd, &rp, &rc);
            let a = (STEP_FRACTION * max_step(&s, &step.ds).min(max_step(&z, &step.dz))).min(1.0);
            x += a * &step.dx;
            s += a * &step.ds;
            z += a * &step.dz;
            iterations = it + 1;
        }

        let raw = IpmSolution { x: x.as_slice().to_vec(), z: z.as_slice().to_vec(), iterations };
        let active: Vec<usize> = (0..m).filter(|&j| z[j] > s[j]).collect();
        Ok(self.polish(&active).map_or(raw.clone(), |p| {
            if self.residual(&p.x, &p.z) <= self.residual(&raw.x, &raw.z) {
                IpmSolution { iterations: raw.iterations, ..p }
            } else {
                raw
            }
        }))
    }

    /// Solve the equality-constrained QP on `active`; `None` if the guess is
    /// not optimal (negative multiplier, violated inactive row, singular system).
    fn polish(&self, active: &[usize]) -> Option<IpmSolution> {
        let n = self.n();
        let m = self.m();
        let k = active.len();
        let mut z = vec![0.0; m];
        let x = if k == 0 {
            self.unconstrained()
        } else {
            // (G_A Q^-1 G_A') w = -h_A - G_A Q^-1 c
            let ga = DMatrix::from_fn(k, n, |r, i| self.g[(active[r], i)]);
            let schur = DMatrix::from_fn(k, k, |r1, r2| {
                (0..n).map(|i| ga[(r1, i)] * ga[(r2, i)] / self.q[i]).sum::<f64>()
            });
            let rhs = DVector::from_fn(k, |r, _| {
                -self.h[active[r]] - (0..n).map(|i| ga[(r, i)] * self.c[i] / self.q[i]).sum::<f64>()
            });
            let lu = schur.lu();
            let w = lu.solve(&rhs)?;
            if w.iter().any(|v| !v.is_finite()) {
                return None;
            }
            let wscale = 1.0 + w.amax();
            if w.iter().any(|&v| v < -1e-12 * wscale) {
                return None;
            }
            for (r, &j) in active.iter().enumerate() {
                z[j] = w[r].max(0.0);
            }
            let zv = DVector::from_column_slice(&z);
            let gtz = self.g.tr_mul(&zv);
            (0..n).map(|i| -(self.c[i] + gtz[i]) / self.q[i]).collect::<Vec<_>>()
        };
        let gx = self.g * DVector::from_column_slice(&x);
        for j in 0..m {
            if gx[j] > self.h[j] + 1e-12 * (1.0 + self.h[j].abs()) {
                return None;
            }
        }
        Some(IpmSolution { x, z, iterations: 0 })
    }
}

fn max_step(v: &DVector<f64>, dv: &DVector<f64>) -> f64 {
    let mut a = f64::INFINITY;
    for (vi, di) in v.iter().zip(dv.iter()) {
        if *di < 0.0 {
            a = a.min(-vi / di);
        }
    }
    a
}

/// Solve and fail with `NoConvergence` when the final residual exceeds `tol`.
pub(crate) fn solve_checked(qp: &InequalityQp<'_>, tol: f64) -> Result<IpmSolution> {
    let sol = qp.solve()?;
    let residual = qp.residual(&sol.x, &sol.z);
    if !residual.is_finite() || residual > tol {
        return Err(Error::NoConvergence { residual });
    }
    Ok(sol)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unconstrained_closed_form() {
        let g = DMatrix::<f64>::zeros(0, 2);
        let qp = InequalityQp { q: &[2.0, 4.0], c: &[1.0, -2.0], g: &g, h: &[] };
        let sol = qp.solve().unwrap();
        assert_eq!(sol.x, vec![-0.5, 0.5]);
    }

    #[test]
    fn single_bound_active() {
        // min 1/2 x^2 - 3x s.t. x <= 1 -> x = 1, z = 2
        let g = DMatrix::from_row_slice(1, 1, &[1.0]);
        let qp = InequalityQp { q: &[1.0], c: &[-3.0], g: &g, h: &[1.0] };
        let sol = solve_checked(&qp, 1e-9).unwrap();
        assert!((sol.x[0] - 1.0).abs() < 1e-14);
        assert!((sol.z[0] - 2.0).abs() < 1e-14);
    }

    #[test]
    fn parallel_rows_fall_back_to_raw_iterate() {
        // x <= 0 and -x <= 0: LICQ fails, polish is singular.
        let g = DMatrix::from_row_slice(2, 1, &[1.0, -1.0]);
        let qp = InequalityQp { q: &[1.0], c: &[1.0], g: &g, h: &[0.0, 0.0] };
        let sol = solve_checked(&qp, 1e-6).unwrap();
        assert!(sol.x[0].abs() < 1e-6);
    }
}
