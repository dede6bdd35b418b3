//! Analytic-versus-numeric gradient checks for every differentiable piece:
//! KKT assembly, solution Jacobians, vector-Jacobian products, the baseline
//! network and the composed training loss.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::datagen::{gen_dataset, stream, GenSpec};
use crate::error::{Error, Result};
use crate::kkt::{self, block_discrepancies, block_name, reconstruct_by_differences, solve_jacobians, vjp_agent};
use crate::mlp::{fit_normalization, Activation, BaselineNet};
use crate::par::Execution;
use crate::qp::{solve_agent_qp, AgentParams, PriceSignal};
use crate::scenario::Scenario;
use crate::trainer::{batch_loss, loss_gradients, TrainConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GradcheckConfig {
    pub seed: u64,
    /// Non-degenerate agent instances to compare against differences.
    pub instances: usize,
    pub nets: usize,
    pub directions: usize,
    pub rel_tol: f64,
    pub abs_floor: f64,
    pub mlp_tol: f64,
    /// Flip the sign of one `(row, column)` block of every assembled KKT matrix.
    pub inject_fault: Option<(usize, usize)>,
}

impl Default for GradcheckConfig {
    fn default() -> Self {
        Self { seed: 0, instances: 200, nets: 10, directions: 20, rel_tol: 1e-4, abs_floor: 1e-6, mlp_tol: 1e-5, inject_fault: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckResult {
    pub name: String,
    pub checked: usize,
    pub skipped: usize,
    pub failures: usize,
    /// Largest error relative to the tolerance; at most 1 when passing.
    pub worst_ratio: f64,
    pub passed: bool,
    pub detail: Option<String>,
}

impl CheckResult {
    fn new(name: &str) -> Self {
        Self { name: name.into(), checked: 0, skipped: 0, failures: 0, worst_ratio: 0.0, passed: true, detail: None }
    }

    fn record(&mut self, ratio: f64, what: impl FnOnce() -> String) {
        if !(ratio <= 1.0) {
            self.failures += 1;
            if self.detail.is_none() {
                self.detail = Some(what());
            }
        }
        if ratio > self.worst_ratio || ratio.is_nan() {
            self.worst_ratio = ratio;
        }
    }

    fn finish(mut self) -> Self {
        self.passed = self.failures == 0 && self.checked > 0;
        self
    }

    pub fn skip_rate(&self) -> f64 {
        let total = self.checked + self.skipped;
        if total == 0 {
            0.0
        } else {
            self.skipped as f64 / total as f64
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradcheckReport {
    pub checks: Vec<CheckResult>,
    pub passed: bool,
}

impl GradcheckReport {
    pub fn check(&self, name: &str) -> Option<&CheckResult> {
        self.checks.iter().find(|c| c.name == name)
    }

    pub fn to_table(&self) -> String {
        let mut out = format!("{:<12} {:>8} {:>8} {:>8} {:>12}  status\n", "check", "checked", "skipped", "failed", "worst/tol");
        for c in &self.checks {
            out += &format!(
                "{:<12} {:>8} {:>8} {:>8} {:>12.3e}  {}\n",
                c.name,
                c.checked,
                c.skipped,
                c.failures,
                c.worst_ratio,
                if c.passed { "pass" } else { "FAIL" }
            );
            if let Some(d) = &c.detail {
                out += &format!("    {d}\n");
            }
        }
        out
    }
}

/// Random agent instance: box model with `T <= 5` or budget model with `T <= 6`.
pub fn random_instance<R: Rng + ?Sized>(rng: &mut R) -> (AgentParams, PriceSignal) {
    let (params, n) = if rng.random_bool(0.5) {
        let p = AgentParams::GeneralBox {
            alpha: rng.random_range(0.5..4.0),
            p_low: rng.random_range(-2.0..-0.1),
            p_high: rng.random_range(0.1..2.0),
            e_low: rng.random_range(-3.0..-0.1),
            e_high: rng.random_range(0.1..3.0),
        };
        (p, rng.random_range(1..=5))
    } else {
        (AgentParams::TotalBudget { alpha: rng.random_range(0.5..4.0), m_budget: rng.random_range(0.2..3.0) }, rng.random_range(2..=6))
    };
    let lambda = (0..n).map(|_| rng.random_range(-5.0..5.0)).collect();
    (params, PriceSignal::new(lambda).unwrap())
}

fn within(a: f64, b: f64, rel: f64, floor: f64) -> f64 {
    (a - b).abs() / (rel * a.abs().max(b.abs())).max(floor)
}

fn is_degenerate(e: &Error) -> bool {
    matches!(e, Error::ActiveSetFlip { .. } | Error::DegenerateSystem { .. })
}

/// KKT assembly, Jacobian and VJP checks over random instances.
fn agent_checks(cfg: &GradcheckConfig) -> Result<Vec<CheckResult>> {
    let mut rng = ChaCha8Rng::from_rng(&mut stream(cfg.seed, 0, 31));
    let mut assembly = CheckResult::new("kkt_blocks");
    let mut jac = CheckResult::new("jacobian");
    let mut vjp = CheckResult::new("vjp");
    let mut attempts = 0;
    while jac.checked < cfg.instances && attempts < 5 * cfg.instances.max(1) {
        attempts += 1;
        let (params, prices) = random_instance(&mut rng);
        let n = prices.len();
        let u: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let sol = solve_agent_qp(&params, &prices, None)?;
        let alpha = sol.alpha_eff.clone();
        let sys = kkt::KktMatrix::assemble(&sol, &params, &alpha).and_then(|mut s| {
            if let Some((r, c)) = cfg.inject_fault {
                s.inject_sign_flip(r, c)?;
            }
            s.factorize()?;
            Ok(s)
        });
        let fd = kkt::finite_diff_jacobian(&params, &prices, None, 1e-5);
        let (sys, fd) = match (sys, fd) {
            (Ok(s), Ok(f)) if s.regularization == 0.0 => (s, f),
            (Err(e), _) | (_, Err(e)) if !is_degenerate(&e) => return Err(e),
            _ => {
                jac.skipped += 1;
                vjp.skipped += 1;
                continue;
            }
        };

        let reference = reconstruct_by_differences(&sys, &sol, &params, &prices, &alpha)?;
        assembly.checked += 1;
        for ((rb, cb), d) in block_discrepancies(&sys, &reference) {
            assembly.record(d / 1e-6, || format!("block ({}, {}) row {} / column {} differs by {d:.3e}", rb, cb, block_name(rb), block_name(cb)));
        }

        jac.checked += 1;
        let j = solve_jacobians(&sys, &sol, &params)?;
        for ((name, a), (_, b)) in j.columns().into_iter().zip(fd.columns()) {
            for t in 0..n {
                jac.record(within(a[t], b[t], cfg.rel_tol, cfg.abs_floor), || format!("d y[{t}] / d {name}: analytic {} vs numeric {}", a[t], b[t]));
            }
        }

        vjp.checked += 1;
        let g = vjp_agent(&sys, &sol, &u)?;
        let dot = |col: &[f64]| col.iter().zip(&u).map(|(a, b)| a * b).sum::<f64>();
        let mut pairs = vec![("alpha", g.alpha, dot(&fd.dy_dalpha))];
        match params {
            AgentParams::GeneralBox { .. } => pairs.extend([
                ("p_lo", g.p_lo, dot(&fd.dy_dp_lo)),
                ("p_hi", g.p_hi, dot(&fd.dy_dp_hi)),
                ("e_lo", g.e_lo, dot(&fd.dy_de_lo)),
                ("e_hi", g.e_hi, dot(&fd.dy_de_hi)),
            ]),
            _ => pairs.push(("m", g.m, dot(fd.dy_dm.as_deref().unwrap_or(&[])))),
        }
        for (name, a, b) in pairs {
            vjp.record(within(a, b, cfg.rel_tol, cfg.abs_floor), || format!("u' dy/d{name}: analytic {a} vs numeric {b}"));
        }
    }
    Ok(vec![assembly.finish(), jac.finish(), vjp.finish()])
}

/// Per-tensor relative error of the network's reverse pass against central
/// differences.
pub fn mlp_check(seed: u64, nets: usize, tol: f64) -> Result<CheckResult> {
    let mut res = CheckResult::new("mlp");
    let mut rng = ChaCha8Rng::from_rng(&mut stream(seed, 0, 32));
    let h = 1e-5;
    for k in 0..nets {
        let input = rng.random_range(2..6);
        let hidden: Vec<usize> = (0..rng.random_range(1..=3)).map(|_| rng.random_range(2..8)).collect();
        let output = rng.random_range(1..5);
        let net = BaselineNet::new(input, &hidden, output, Activation::Relu, &mut rng);
        let x: Vec<f64> = (0..input).map(|_| rng.random_range(-2.0..2.0)).collect();
        let u: Vec<f64> = (0..output).map(|_| rng.random_range(-1.0..1.0)).collect();
        let g = net.backward(&x, &u)?;
        let f = |n: &BaselineNet, x: &[f64]| -> Result<f64> { Ok(n.forward(x)?.iter().zip(&u).map(|(a, b)| a * b).sum()) };
        let mut tensors: Vec<(String, Vec<f64>, Vec<f64>)> = Vec::new();
        for l in 0..net.num_layers() {
            let (wo, bo) = net.layer_offsets(l);
            let end = bo + net.sizes()[l + 1];
            for (label, range) in [("weight", wo..bo), ("bias", bo..end)] {
                let mut num = Vec::with_capacity(range.len());
                for i in range.clone() {
                    let mut p = net.clone();
                    p.params_mut()[i] += h;
                    let mut m = net.clone();
                    m.params_mut()[i] -= h;
                    num.push((f(&p, &x)? - f(&m, &x)?) / (2.0 * h));
                }
                tensors.push((format!("net {k} layer {l} {label}"), g.params[range].to_vec(), num));
            }
        }
        let mut num = Vec::with_capacity(input);
        for i in 0..input {
            let (mut xp, mut xm) = (x.clone(), x.clone());
            xp[i] += h;
            xm[i] -= h;
            num.push((f(&net, &xp)? - f(&net, &xm)?) / (2.0 * h));
        }
        tensors.push((format!("net {k} input"), g.input.clone(), num));
        res.checked += 1;
        for (name, a, b) in tensors {
            let diff = a.iter().zip(&b).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
            let scale = b.iter().map(|v| v * v).sum::<f64>().sqrt().max(a.iter().map(|v| v * v).sum::<f64>().sqrt());
            let ratio = if scale < 1e-8 { diff / 1e-8 } else { diff / scale / tol };
            res.record(ratio, || format!("{name}: relative error {:.3e}", diff / scale.max(1e-300)));
        }
    }
    Ok(res.finish())
}

/// Directional derivatives of the composed loss over `(theta, beta)` on a
/// tiny configuration (`T = 3`, hidden sizes 4 and 4).
pub fn composed_check(seed: u64, directions: usize, rel_tol: f64) -> Result<CheckResult> {
    let mut res = CheckResult::new("composed");
    let spec = GenSpec { n_train: 4, n_test: 1, horizon: 3, seed, ..GenSpec::default() };
    let ds = gen_dataset(&spec)?;
    let cfg = TrainConfig { hidden: vec![4, 4], seed, execution: Execution::Sequential, ..TrainConfig::default() };
    let mut net = cfg.init_net(ds.feature_dim().unwrap(), 3);
    let feats: Vec<Vec<f64>> = ds.train.iter().map(|s| s.features.clone()).collect();
    net.set_normalization(fit_normalization(&feats)?)?;
    let mut rng = ChaCha8Rng::from_rng(&mut stream(seed, 0, 33));
    let theta = AgentParams::TotalBudget { alpha: rng.random_range(10.0..50.0), m_budget: rng.random_range(0.3..3.0) };
    let batch: Vec<&Scenario> = ds.train.iter().collect();
    let g = loss_gradients(&batch, Some(&net), &theta, &cfg)?;
    if !g.skipped.is_empty() {
        res.skipped += 1;
        return Ok(res.finish());
    }
    let theta0 = theta.to_vec();
    let h = 1e-5;
    for k in 0..directions {
        let dt: Vec<f64> = theta0.iter().map(|_| rng.random_range(-1.0..1.0)).collect();
        let db: Vec<f64> = net.params().iter().map(|_| rng.random_range(-1.0..1.0)).collect();
        let eval = |s: f64| -> Result<f64> {
            let mut n = net.clone();
            for (p, d) in n.params_mut().iter_mut().zip(&db) {
                *p += s * d;
            }
            let th: Vec<f64> = theta0.iter().zip(&dt).map(|(p, d)| p + s * d).collect();
            batch_loss(&batch, Some(&n), &theta.with_vec(&th)?, Execution::Sequential)
        };
        let numeric = (eval(h)? - eval(-h)?) / (2.0 * h);
        let analytic: f64 = g.theta.iter().zip(&dt).chain(g.beta.iter().zip(&db)).map(|(a, b)| a * b).sum();
        res.checked += 1;
        res.record(within(analytic, numeric, rel_tol, 1e-6), || {
            format!("direction {k}: analytic {analytic} vs numeric {numeric}")
        });
    }
    Ok(res.finish())
}

pub fn run(cfg: &GradcheckConfig) -> Result<GradcheckReport> {
    let mut checks = agent_checks(cfg)?;
    checks.push(mlp_check(cfg.seed, cfg.nets, cfg.mlp_tol)?);
    checks.push(composed_check(cfg.seed, cfg.directions, cfg.rel_tol)?);
    let passed = checks.iter().all(|c| c.passed);
    Ok(GradcheckReport { checks, passed })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quick(seed: u64) -> GradcheckConfig {
        GradcheckConfig { seed, instances: 30, nets: 2, directions: 4, ..GradcheckConfig::default() }
    }

    #[test]
    fn default_tolerances_pass() {
        let r = run(&quick(1)).unwrap();
        assert!(r.passed, "{}", r.to_table());
    }

    #[test]
    fn injected_sign_flip_names_the_block() {
        let r = run(&GradcheckConfig { inject_fault: Some((0, 0)), ..quick(2) }).unwrap();
        assert!(!r.passed);
        let blocks = r.check("kkt_blocks").unwrap();
        assert!(!blocks.passed);
        assert!(blocks.detail.as_ref().unwrap().contains("block (0, 0)"), "{:?}", blocks.detail);
    }

    #[test]
    fn degenerate_instances_are_skipped_not_failed() {
        let r = run(&quick(3)).unwrap();
        let j = r.check("jacobian").unwrap();
        assert!(j.passed);
        assert_eq!(j.skipped, r.check("vjp").unwrap().skipped);
    }
}
