//! Joint identification of the agent coefficients `theta` and the baseline
//! network weights `beta` by minimizing the mean squared net-demand error
//! `1/N sum_i 1/2 ||D_hat_i + y*_i(theta) - z_i||^2`.

mod estimate;

pub use estimate::{a_priori_estimate, ex_post_estimate, BaselineEstimate};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::datagen::stream;
use crate::error::{check_len, Error, Result};
use crate::kkt::{build_kkt_system, vjp_agent};
use crate::metrics::Metrics;
use crate::mlp::{fit_normalization, Activation, Adam, BaselineNet, DEFAULT_HIDDEN};
use crate::par::Execution;
use crate::qp::{self, AgentModelKind, AgentParams, ProjectionLimits, QPSolution};
use crate::scenario::{Dataset, Scenario};

const TAG_NET_INIT: u64 = 11;
const TAG_SHUFFLE: u64 = 12;
const TAG_WARM_SHUFFLE: u64 = 13;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    /// Baseline network learning rate.
    pub eta1: f64,
    /// Agent coefficient learning rate.
    pub eta2: f64,
    pub epochs: usize,
    pub warm_start_epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    /// Propagate the loss into the baseline through `alpha(D)`.
    pub demand_dependent: bool,
    pub projection: ProjectionLimits,
    /// Fit `theta` to the observed response directly, without a baseline net.
    pub direct_response_mode: bool,
    pub model: AgentModelKind,
    /// Initial agent coefficients; a per-model default when absent.
    pub init: Option<AgentParams>,
    pub hidden: Vec<usize>,
    pub activation: Activation,
    /// Stop once the epoch loss has not improved by `plateau_tol` (relative)
    /// for this many epochs. Zero disables early stopping.
    pub plateau_epochs: usize,
    pub plateau_tol: f64,
    /// Fraction of skipped scenarios above which a run fails.
    pub max_skip_fraction: f64,
    pub execution: Execution,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            eta1: 1e-3,
            eta2: 1e-1,
            epochs: 500,
            warm_start_epochs: 200,
            batch_size: 32,
            seed: 0,
            demand_dependent: false,
            projection: ProjectionLimits::default(),
            direct_response_mode: false,
            model: AgentModelKind::TotalBudget,
            init: None,
            hidden: DEFAULT_HIDDEN.to_vec(),
            activation: Activation::Relu,
            plateau_epochs: 50,
            plateau_tol: 1e-5,
            max_skip_fraction: 0.1,
            execution: Execution::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.eta1 > 0.0 && self.eta2 > 0.0) {
            return Err(Error::InvalidSpec("learning rates must be positive".into()));
        }
        if self.epochs == 0 {
            return Err(Error::InvalidSpec("epochs must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidSpec("batch_size must be positive".into()));
        }
        if let Some(init) = &self.init {
            if init.kind() != self.model {
                return Err(Error::InvalidSpec(format!("init is {:?} but model is {:?}", init.kind(), self.model)));
            }
        }
        Ok(())
    }

    pub fn initial_params(&self) -> AgentParams {
        if let Some(p) = &self.init {
            return p.clone();
        }
        match self.model {
            AgentModelKind::TotalBudget => AgentParams::TotalBudget { alpha: 30.0, m_budget: 5.0 },
            AgentModelKind::GeneralBox => {
                AgentParams::GeneralBox { alpha: 30.0, p_low: -5.0, p_high: 5.0, e_low: -10.0, e_high: 10.0 }
            }
            AgentModelKind::AsymmetricDisutility => AgentParams::AsymmetricDisutility { alpha1: 30.0, alpha2: 30.0, d_min: 0.0 },
        }
    }

    /// Fresh network with seeded weights, before normalization is fitted.
    pub fn init_net(&self, input: usize, horizon: usize) -> BaselineNet {
        BaselineNet::new(input, &self.hidden, horizon, self.activation, &mut stream(self.seed, 0, TAG_NET_INIT))
    }
}

/// `1/2 sum_t (d_hat_t + y_t - z_t)^2`.
pub fn net_demand_loss(d_hat: &[f64], y_star: &[f64], z: &[f64]) -> Result<f64> {
    check_len("response", d_hat.len(), y_star.len())?;
    check_len("net demand", d_hat.len(), z.len())?;
    Ok(0.5 * d_hat.iter().zip(y_star).zip(z).map(|((d, y), z)| (d + y - z).powi(2)).sum::<f64>())
}

/// Mean of the per-scenario losses.
pub fn batch_net_demand_loss(rows: &[(Vec<f64>, Vec<f64>, Vec<f64>)]) -> Result<f64> {
    let mut total = 0.0;
    for (d, y, z) in rows {
        total += net_demand_loss(d, y, z)?;
    }
    Ok(if rows.is_empty() { 0.0 } else { total / rows.len() as f64 })
}

/// Per-step curvature passed to the KKT system.
fn alpha_vec(params: &AgentParams, sol: &QPSolution) -> Vec<f64> {
    params.constant_alpha().map_or_else(|| sol.alpha_eff.clone(), |a| vec![a; sol.horizon()])
}

fn skippable(e: &Error) -> bool {
    matches!(e, Error::DegenerateSystem { .. } | Error::GhostDemandViolation { .. })
}

/// Forward pass for one scenario: `(d_hat, solution)`; `d_hat` is empty in
/// direct mode.
fn forward(s: &Scenario, net: Option<&BaselineNet>, params: &AgentParams) -> Result<(Vec<f64>, QPSolution)> {
    let d_hat = match net {
        Some(net) => net.forward(&s.features)?,
        None => Vec::new(),
    };
    let baseline = if d_hat.is_empty() { s.d_true.as_deref() } else { Some(&d_hat[..]) };
    let sol = qp::solve(params, &s.lambda, baseline)?;
    Ok((d_hat, sol))
}

/// Residual the loss squares: net-demand error, or response error in direct mode.
fn residual(s: &Scenario, d_hat: &[f64], y: &[f64]) -> Result<Vec<f64>> {
    if d_hat.is_empty() {
        let obs = s.observed_response().ok_or(Error::MissingGroundTruth("observed response for direct mode"))?;
        check_len("observed response", y.len(), obs.len())?;
        Ok(y.iter().zip(obs).map(|(y, o)| y - o).collect())
    } else {
        check_len("net demand", y.len(), s.z.len())?;
        Ok(d_hat.iter().zip(y).zip(&s.z).map(|((d, y), z)| d + y - z).collect())
    }
}

struct ScenarioGrad {
    loss: f64,
    theta: Vec<f64>,
    beta: Vec<f64>,
}

fn scenario_grad(s: &Scenario, net: Option<&BaselineNet>, params: &AgentParams, demand_dependent: bool) -> Result<ScenarioGrad> {
    let (d_hat, sol) = forward(s, net, params)?;
    let r = residual(s, &d_hat, &sol.y)?;
    let loss = 0.5 * r.iter().map(|v| v * v).sum::<f64>();
    let sys = build_kkt_system(&sol, params, &alpha_vec(params, &sol))?;
    let g = vjp_agent(&sys, &sol, &r)?;
    let theta = g.trainable(params, &sol);
    let beta = match net {
        Some(net) => {
            let mut upstream = r;
            if demand_dependent {
                for (u, c) in upstream.iter_mut().zip(g.baseline(params, &sol)) {
                    *u += c;
                }
            }
            net.backward(&s.features, &upstream)?.params
        }
        None => Vec::new(),
    };
    Ok(ScenarioGrad { loss, theta, beta })
}

/// Mean loss and gradients over the scenarios that could be differentiated.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchGradient {
    pub loss: f64,
    pub theta: Vec<f64>,
    pub beta: Vec<f64>,
    pub used: usize,
    /// Ids of scenarios whose KKT system was degenerate.
    pub skipped: Vec<usize>,
}

pub fn loss_gradients(
    batch: &[&Scenario],
    net: Option<&BaselineNet>,
    params: &AgentParams,
    cfg: &TrainConfig,
) -> Result<BatchGradient> {
    let per = cfg.execution.map(batch, |_, s| scenario_grad(s, net, params, cfg.demand_dependent));
    let mut out = BatchGradient {
        loss: 0.0,
        theta: vec![0.0; params.to_vec().len()],
        beta: vec![0.0; net.map_or(0, |n| n.params().len())],
        used: 0,
        skipped: Vec::new(),
    };
    for (s, g) in batch.iter().zip(per) {
        let g = match g {
            Ok(g) => g,
            Err(e) if skippable(&e) => {
                out.skipped.push(s.id);
                continue;
            }
            Err(e) => return Err(e),
        };
        if !g.loss.is_finite() || g.theta.iter().chain(&g.beta).any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteGradient { scenario: s.id });
        }
        out.loss += g.loss;
        for (a, b) in out.theta.iter_mut().zip(&g.theta) {
            *a += b;
        }
        for (a, b) in out.beta.iter_mut().zip(&g.beta) {
            *a += b;
        }
        out.used += 1;
    }
    if out.used > 0 {
        let k = 1.0 / out.used as f64;
        out.loss *= k;
        out.theta.iter_mut().chain(out.beta.iter_mut()).for_each(|v| *v *= k);
    }
    Ok(out)
}

/// Mean loss over `batch` with no gradients; degenerate scenarios still count.
pub fn batch_loss(batch: &[&Scenario], net: Option<&BaselineNet>, params: &AgentParams, exec: Execution) -> Result<f64> {
    let per = exec.map(batch, |_, s| -> Result<f64> {
        let (d_hat, sol) = forward(s, net, params)?;
        let r = residual(s, &d_hat, &sol.y)?;
        Ok(0.5 * r.iter().map(|v| v * v).sum::<f64>())
    });
    let mut total = 0.0;
    for l in per {
        total += l?;
    }
    Ok(if batch.is_empty() { 0.0 } else { total / batch.len() as f64 })
}

/// Optimizer state for one joint run; the two optimizers never share state.
#[derive(Debug, Clone)]
pub struct Optimizers {
    pub beta: Adam,
    pub theta: Adam,
}

impl Optimizers {
    pub fn new(cfg: &TrainConfig, net: Option<&BaselineNet>, params: &AgentParams) -> Self {
        Self {
            beta: Adam::new(cfg.eta1, net.map_or(0, |n| n.params().len())),
            theta: Adam::new(cfg.eta2, params.to_vec().len()),
        }
    }
}

/// One simultaneous descent step on `beta` and `theta`, followed by
/// projection of `theta`.
pub fn e2e_step(
    batch: &[&Scenario],
    net: Option<&mut BaselineNet>,
    params: &mut AgentParams,
    opt: &mut Optimizers,
    cfg: &TrainConfig,
) -> Result<BatchGradient> {
    let g = loss_gradients(batch, net.as_deref(), params, cfg)?;
    if g.used == 0 {
        return Ok(g);
    }
    if let Some(net) = net {
        opt.beta.update(net.params_mut(), &g.beta)?;
    }
    let mut v = params.to_vec();
    opt.theta.update(&mut v, &g.theta)?;
    *params = params.with_vec(&v)?.project(&cfg.projection);
    Ok(g)
}

fn batches<'a>(scenarios: &'a [Scenario], size: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<&'a Scenario>> {
    let mut order: Vec<usize> = (0..scenarios.len()).collect();
    order.shuffle(rng);
    order.chunks(size).map(|c| c.iter().map(|&i| &scenarios[i]).collect()).collect()
}

/// Fits the network to net demand, `min 1/N sum_i ||D_hat_i - z_i||^2`.
/// Returns the per-epoch mean loss.
pub fn warm_start(train: &[Scenario], net: &mut BaselineNet, cfg: &TrainConfig) -> Result<Vec<f64>> {
    let mut opt = Adam::new(cfg.eta1, net.params().len());
    let mut rng = ChaCha8Rng::from_rng(&mut stream(cfg.seed, 0, TAG_WARM_SHUFFLE));
    let mut losses = Vec::with_capacity(cfg.warm_start_epochs);
    for _ in 0..cfg.warm_start_epochs {
        let mut epoch = 0.0;
        for batch in batches(train, cfg.batch_size, &mut rng) {
            let per = cfg.execution.map(&batch, |_, s| -> Result<(f64, Vec<f64>)> {
                let d = net.forward(&s.features)?;
                let r: Vec<f64> = d.iter().zip(&s.z).map(|(d, z)| d - z).collect();
                let loss = r.iter().map(|v| v * v).sum::<f64>();
                let up: Vec<f64> = r.iter().map(|v| 2.0 * v).collect();
                Ok((loss, net.backward(&s.features, &up)?.params))
            });
            let mut grad = vec![0.0; net.params().len()];
            for p in per {
                let (l, g) = p?;
                epoch += l;
                for (a, b) in grad.iter_mut().zip(&g) {
                    *a += b;
                }
            }
            let k = 1.0 / batch.len() as f64;
            grad.iter_mut().for_each(|v| *v *= k);
            opt.update(net.params_mut(), &grad)?;
        }
        losses.push(epoch / train.len() as f64);
    }
    Ok(losses)
}

/// Recovery error of one identified coefficient.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamError {
    pub name: String,
    pub truth: f64,
    pub estimate: f64,
    pub abs_error: f64,
    /// Percent.
    pub pct_error: f64,
}

pub fn param_errors(truth: &AgentParams, estimate: &AgentParams) -> Vec<ParamError> {
    if truth.kind() != estimate.kind() {
        return Vec::new();
    }
    truth
        .trainable_names()
        .iter()
        .zip(truth.to_vec().into_iter().zip(estimate.to_vec()))
        .map(|(name, (t, e))| ParamError {
            name: name.to_string(),
            truth: t,
            estimate: e,
            abs_error: (e - t).abs(),
            pct_error: if t.abs() >= crate::metrics::MAPE_FLOOR { 100.0 * (e - t).abs() / t.abs() } else { 0.0 },
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub model: AgentModelKind,
    pub direct_response_mode: bool,
    pub warm_start_losses: Vec<f64>,
    /// Mean training loss per joint epoch, measured during the epoch.
    pub losses: Vec<f64>,
    pub early_stopped: bool,
    /// Scenario evaluations skipped over the whole run.
    pub skipped: usize,
    pub evaluations: usize,
    pub theta_hat: AgentParams,
    pub truth: Option<AgentParams>,
    pub param_errors: Vec<ParamError>,
    pub a_priori: Option<Metrics>,
    pub ex_post: Option<Metrics>,
    /// Net demand taken as the baseline, the floor ex-post estimation must beat.
    pub net_vs_baseline: Option<Metrics>,
}

impl TrainReport {
    pub fn estimate(&self, name: &str) -> Option<f64> {
        let names = self.theta_hat.trainable_names();
        names.iter().position(|n| *n == name).map(|i| self.theta_hat.to_vec()[i])
    }

    pub fn error(&self, name: &str) -> Option<&ParamError> {
        self.param_errors.iter().find(|e| e.name == name)
    }

    /// Key/value summary followed by the parameter and baseline tables.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        out += &format!("model              {:?}\n", self.model);
        out += &format!("direct_response    {}\n", self.direct_response_mode);
        out += &format!("warm_start_epochs  {}\n", self.warm_start_losses.len());
        out += &format!("epochs             {}\n", self.losses.len());
        out += &format!("early_stopped      {}\n", self.early_stopped);
        out += &format!("skipped            {} of {}\n", self.skipped, self.evaluations);
        if let Some(l) = self.losses.last() {
            out += &format!("final_loss         {l:.6e}\n");
        }
        out += "\nparameter    estimate     truth        abs_error    pct_error\n";
        let est = self.theta_hat.to_vec();
        for (k, name) in self.theta_hat.trainable_names().iter().enumerate() {
            match self.error(name) {
                Some(e) => out += &format!("{:<12} {:<12.4} {:<12.4} {:<12.4} {:.2}%\n", name, e.estimate, e.truth, e.abs_error, e.pct_error),
                None => out += &format!("{:<12} {:<12.4} -\n", name, est[k]),
            }
        }
        out += "\nbaseline     MAE          MAPE\n";
        for (label, m) in [("a-priori", &self.a_priori), ("ex-post", &self.ex_post), ("net demand", &self.net_vs_baseline)] {
            match m {
                Some(m) => out += &format!("{:<12} {:<12.4} {:.2}%\n", label, m.mae, m.mape),
                None => out += &format!("{label:<12} -\n"),
            }
        }
        out
    }
}

pub struct TrainOutcome {
    pub report: TrainReport,
    pub net: Option<BaselineNet>,
    pub theta: AgentParams,
}

/// Warm start (unless direct), then joint epochs with early stopping, then
/// evaluation on the test split.
pub fn train(dataset: &Dataset, cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    dataset.validate()?;
    let train_set = &dataset.train;
    let horizon = dataset.horizon().unwrap();

    let mut net = if cfg.direct_response_mode {
        None
    } else {
        let feats: Vec<Vec<f64>> = train_set.iter().map(|s| s.features.clone()).collect();
        let mut net = cfg.init_net(dataset.feature_dim().unwrap(), horizon);
        net.set_normalization(fit_normalization(&feats)?)?;
        Some(net)
    };
    let warm_start_losses = match net.as_mut() {
        Some(net) => warm_start(train_set, net, cfg)?,
        None => Vec::new(),
    };

    let mut theta = cfg.initial_params().project(&cfg.projection);
    theta.validate()?;
    let mut opt = Optimizers::new(cfg, net.as_ref(), &theta);
    let mut rng = ChaCha8Rng::from_rng(&mut stream(cfg.seed, 0, TAG_SHUFFLE));
    let mut losses = Vec::with_capacity(cfg.epochs);
    let (mut skipped, mut evaluations) = (0usize, 0usize);
    let mut best = f64::INFINITY;
    let mut best_epoch = 0;
    let mut early_stopped = false;
    for epoch in 0..cfg.epochs {
        let mut total = 0.0;
        let mut used = 0;
        for batch in batches(train_set, cfg.batch_size, &mut rng) {
            let g = e2e_step(&batch, net.as_mut(), &mut theta, &mut opt, cfg)?;
            total += g.loss * g.used as f64;
            used += g.used;
            skipped += g.skipped.len();
            evaluations += batch.len();
        }
        if skipped as f64 > cfg.max_skip_fraction * evaluations as f64 {
            return Err(Error::DegenerateRun { skipped, total: evaluations });
        }
        let loss = if used > 0 { total / used as f64 } else { f64::NAN };
        losses.push(loss);
        if loss < best * (1.0 - cfg.plateau_tol) {
            best = loss;
            best_epoch = epoch;
        } else if cfg.plateau_epochs > 0 && epoch - best_epoch >= cfg.plateau_epochs {
            early_stopped = true;
            break;
        }
    }

    let truth = dataset.common_truth().cloned();
    let param_errors = truth.as_ref().map(|t| param_errors(t, &theta)).unwrap_or_default();
    let test = if dataset.test.is_empty() { &dataset.train } else { &dataset.test };
    let a_priori = match &net {
        Some(net) => a_priori_estimate(net, test, cfg.execution)?.metrics,
        None => None,
    };
    let ex_post = ex_post_estimate(&theta, net.as_ref(), test, cfg.execution)?.metrics;
    let net_vs_baseline = net_vs_baseline(test)?;
    let report = TrainReport {
        model: theta.kind(),
        direct_response_mode: cfg.direct_response_mode,
        warm_start_losses,
        losses,
        early_stopped,
        skipped,
        evaluations,
        theta_hat: theta.clone(),
        truth,
        param_errors,
        a_priori,
        ex_post,
        net_vs_baseline,
    };
    Ok(TrainOutcome { report, net, theta })
}

/// Error of treating the measured net demand as the baseline.
pub fn net_vs_baseline(scenarios: &[Scenario]) -> Result<Option<Metrics>> {
    let mut pred = Vec::new();
    let mut truth = Vec::new();
    for s in scenarios {
        let Some(d) = &s.d_true else { return Ok(None) };
        pred.push(s.z.clone());
        truth.push(d.clone());
    }
    Ok(Some(Metrics::compute_rows(&pred, &truth)?))
}
