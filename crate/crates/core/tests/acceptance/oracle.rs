//! Reference solutions for small agent problems, written without the
//! interior point machinery: dual projected gradient for the box models,
//! per-step golden-section search for the asymmetric model, and a coarse grid
//! to sanity check the former.

/// Feasible set `{y : a_k . y <= b_k}` with every bound written as a row.
pub struct Polytope {
    rows: Vec<(Vec<f64>, f64)>,
}

impl Polytope {
    /// `p_lo <= y_t <= p_hi`, `e_lo <= y_0 + .. + y_t <= e_hi`; infinite
    /// entries are dropped.
    pub fn new(p_lo: &[f64], p_hi: &[f64], e_lo: &[f64], e_hi: &[f64]) -> Self {
        let n = p_lo.len();
        let mut rows = Vec::new();
        let mut push = |a: Vec<f64>, b: f64| {
            if b.is_finite() {
                rows.push((a, b));
            }
        };
        for t in 0..n {
            let unit: Vec<f64> = (0..n).map(|k| if k == t { 1.0 } else { 0.0 }).collect();
            let prefix: Vec<f64> = (0..n).map(|k| if k <= t { 1.0 } else { 0.0 }).collect();
            push(unit.clone(), p_hi[t]);
            push(unit.iter().map(|v| -v).collect(), -p_lo[t]);
            push(prefix.clone(), e_hi[t]);
            push(prefix.iter().map(|v| -v).collect(), -e_lo[t]);
        }
        Self { rows }
    }

    pub fn violation(&self, y: &[f64]) -> f64 {
        self.rows.iter().map(|(a, b)| dot(a, y) - b).fold(0.0, f64::max)
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(a, b)| a * b).sum()
}

pub fn objective(y: &[f64], lambda: &[f64], alpha: &[f64]) -> f64 {
    y.iter().zip(lambda).zip(alpha).map(|((y, l), a)| l * y + 0.5 * a * y * y).sum()
}

/// Minimizer of `sum lambda_t y_t + alpha_t / 2 y_t^2` over the polytope by
/// projected gradient ascent on the dual, where the projection onto `z >= 0`
/// is exact. The primal point is `y = -(lambda + A' z) / alpha`.
pub fn projected_gradient(poly: &Polytope, lambda: &[f64], alpha: &[f64]) -> Vec<f64> {
    let n = lambda.len();
    let m = poly.rows.len();
    let primal = |z: &[f64]| -> Vec<f64> {
        (0..n)
            .map(|t| -(lambda[t] + (0..m).map(|k| poly.rows[k].0[t] * z[k]).sum::<f64>()) / alpha[t])
            .collect()
    };
    // Lipschitz constant of the dual gradient: ||A diag(1/alpha) A'||, bounded
    // by its Frobenius norm.
    let mut lip = 0.0;
    for (ai, _) in &poly.rows {
        for (aj, _) in &poly.rows {
            let v: f64 = (0..n).map(|t| ai[t] * aj[t] / alpha[t]).sum();
            lip += v * v;
        }
    }
    let step = 1.0 / lip.sqrt().max(1e-12);
    let mut z = vec![0.0; m];
    for _ in 0..2_000_000 {
        let y = primal(&z);
        let mut moved: f64 = 0.0;
        for (k, (a, b)) in poly.rows.iter().enumerate() {
            let next = (z[k] + step * (dot(a, &y) - b)).max(0.0);
            moved = moved.max((next - z[k]).abs());
            z[k] = next;
        }
        if moved < 1e-15 {
            break;
        }
    }
    primal(&z)
}

/// Smallest objective over a regular grid of feasible points in `[-r, r]^T`.
pub fn grid_best(poly: &Polytope, lambda: &[f64], alpha: &[f64], r: f64, per_axis: usize) -> Option<f64> {
    let n = lambda.len();
    let axis: Vec<f64> = (0..per_axis).map(|i| -r + 2.0 * r * i as f64 / (per_axis - 1) as f64).collect();
    let mut best: Option<f64> = None;
    let mut idx = vec![0usize; n];
    loop {
        let y: Vec<f64> = idx.iter().map(|&i| axis[i]).collect();
        if poly.violation(&y) <= 0.0 {
            let f = objective(&y, lambda, alpha);
            best = Some(best.map_or(f, |b: f64| b.min(f)));
        }
        let mut k = 0;
        while k < n {
            idx[k] += 1;
            if idx[k] < per_axis {
                break;
            }
            idx[k] = 0;
            k += 1;
        }
        if k == n {
            return best;
        }
    }
}

fn golden_section(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64) -> f64 {
    let g = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - g * (b - a);
    let mut d = a + g * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    while b - a > 1e-12 {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - g * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + g * (b - a);
            fd = f(d);
        }
    }
    0.5 * (a + b)
}

/// Per-step minimizer of `lambda y + up/2 max(y,0)^2 + down/2 max(-y,0)^2`.
pub fn asymmetric(lambda: &[f64], up: &[f64], down: &[f64]) -> Vec<f64> {
    (0..lambda.len())
        .map(|t| {
            let f = |y: f64| lambda[t] * y + 0.5 * up[t] * y.max(0.0).powi(2) + 0.5 * down[t] * (-y).max(0.0).powi(2);
            let r = lambda[t].abs() / up[t].min(down[t]) + 1.0;
            golden_section(f, -r, r)
        })
        .collect()
}
