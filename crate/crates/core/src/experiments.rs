//! Multi-run protocols: repeated identification with random agents, the
//! response-noise sweep, and the two-agent mixture.

use serde::{Deserialize, Serialize};

use crate::datagen::{gen_dataset, gen_mixture, GenSpec, MixtureSpec, NoiseTarget};
use crate::error::Result;
use crate::metrics::{mean, population_std, Metrics};
use crate::qp::AgentParams;
use crate::trainer::{train, ParamError, TrainConfig, TrainReport};

/// Noise levels of the sweep.
pub const NOISE_LEVELS: [f64; 6] = [0.0, 0.5, 1.0, 2.0, 3.0, 5.0];

/// Seed of repeat `r`: data, agent and network initialization all derive from it.
pub fn repeat_seed(seed: u64, r: usize) -> u64 {
    seed.wrapping_add(r as u64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamSummary {
    pub name: String,
    pub mae: f64,
    pub mae_std: f64,
    /// Percent.
    pub mape: f64,
}

pub fn summarize(errors: &[Vec<ParamError>]) -> Vec<ParamSummary> {
    let Some(first) = errors.first() else { return Vec::new() };
    first
        .iter()
        .enumerate()
        .map(|(k, e)| {
            let abs: Vec<f64> = errors.iter().map(|r| r[k].abs_error).collect();
            let pct: Vec<f64> = errors.iter().map(|r| r[k].pct_error).collect();
            ParamSummary { name: e.name.clone(), mae: mean(&abs), mae_std: population_std(&abs), mape: mean(&pct) }
        })
        .collect()
}

/// Mean of each field over runs.
fn mean_metrics(ms: &[Option<Metrics>]) -> Option<Metrics> {
    let ms: Option<Vec<Metrics>> = ms.iter().copied().collect();
    let ms = ms.filter(|m| !m.is_empty())?;
    let f = |g: fn(&Metrics) -> f64| mean(&ms.iter().map(g).collect::<Vec<_>>());
    Some(Metrics { mae: f(|m| m.mae), mape: f(|m| m.mape), std: f(|m| m.std), count: ms.iter().map(|m| m.count).sum() })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub seed: u64,
    pub truth: Option<AgentParams>,
    pub estimate: AgentParams,
    pub param_errors: Vec<ParamError>,
    pub a_priori: Option<Metrics>,
    pub ex_post: Option<Metrics>,
    pub net_vs_baseline: Option<Metrics>,
    pub epochs: usize,
    pub early_stopped: bool,
    pub skipped: usize,
    pub first_loss: Option<f64>,
    pub final_loss: Option<f64>,
    /// Epochs at which the trailing moving average of the training loss rose.
    pub loss_trend_rises: usize,
    /// Largest relative rise of that moving average between adjacent epochs.
    pub loss_trend_max_rise: f64,
}

/// Window of the moving average used for [`RunSummary::loss_trend_rises`].
pub const TREND_WINDOW: usize = 20;

/// Trailing moving averages of `losses` over `window` epochs.
pub fn moving_average(losses: &[f64], window: usize) -> Vec<f64> {
    if window == 0 || losses.len() < window {
        return Vec::new();
    }
    losses.windows(window).map(|w| w.iter().sum::<f64>() / window as f64).collect()
}

/// Number of steps where the moving average increases.
pub fn trend_rises(losses: &[f64], window: usize) -> usize {
    moving_average(losses, window).windows(2).filter(|w| w[1] > w[0]).count()
}

/// Largest relative step-to-step increase of the moving average, 0 if none.
pub fn trend_max_rise(losses: &[f64], window: usize) -> f64 {
    moving_average(losses, window).windows(2).map(|w| (w[1] - w[0]) / w[0].abs().max(f64::MIN_POSITIVE)).fold(0.0, f64::max)
}

impl RunSummary {
    pub fn from_report(seed: u64, r: &TrainReport) -> Self {
        Self {
            seed,
            truth: r.truth.clone(),
            estimate: r.theta_hat.clone(),
            param_errors: r.param_errors.clone(),
            a_priori: r.a_priori,
            ex_post: r.ex_post,
            net_vs_baseline: r.net_vs_baseline,
            epochs: r.losses.len(),
            early_stopped: r.early_stopped,
            skipped: r.skipped,
            first_loss: r.losses.first().copied(),
            final_loss: r.losses.last().copied(),
            loss_trend_rises: trend_rises(&r.losses, TREND_WINDOW),
            loss_trend_max_rise: trend_max_rise(&r.losses, TREND_WINDOW),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IdentificationReport {
    pub runs: Vec<RunSummary>,
    pub params: Vec<ParamSummary>,
    pub a_priori: Option<Metrics>,
    pub ex_post: Option<Metrics>,
    pub net_vs_baseline: Option<Metrics>,
}

fn opt_metric(m: &Option<Metrics>) -> String {
    m.map_or("-".into(), |m| format!("{:.4} / {:.2}%", m.mae, m.mape))
}

impl IdentificationReport {
    pub fn param(&self, name: &str) -> Option<&ParamSummary> {
        self.params.iter().find(|p| p.name == name)
    }

    pub fn to_table(&self) -> String {
        let mut out = String::from("parameter    MAE        std        MAPE\n");
        for p in &self.params {
            out += &format!("{:<12} {:<10.4} {:<10.4} {:.2}%\n", p.name, p.mae, p.mae_std, p.mape);
        }
        out += "\nbaseline     MAE / MAPE\n";
        out += &format!("a-priori     {}\n", opt_metric(&self.a_priori));
        out += &format!("ex-post      {}\n", opt_metric(&self.ex_post));
        out += &format!("net demand   {}\n", opt_metric(&self.net_vs_baseline));
        out += "\nrun  seed   truth                 estimate\n";
        for (i, r) in self.runs.iter().enumerate() {
            let fmt = |v: &[f64]| v.iter().map(|x| format!("{x:.3}")).collect::<Vec<_>>().join(", ");
            out += &format!(
                "{:<4} {:<6} {:<21} {}\n",
                i,
                r.seed,
                r.truth.as_ref().map_or("-".into(), |t| fmt(&t.to_vec())),
                fmt(&r.estimate.to_vec())
            );
        }
        out
    }
}

/// Fresh dataset, agent and network per repeat; repeat `r` uses
/// [`repeat_seed`] for both the generator and the trainer.
pub fn run_identification(spec: &GenSpec, cfg: &TrainConfig, repeats: usize) -> Result<IdentificationReport> {
    let mut runs = Vec::with_capacity(repeats);
    for r in 0..repeats {
        let seed = repeat_seed(spec.seed, r);
        let ds = gen_dataset(&GenSpec { seed, ..spec.clone() })?;
        let out = train(&ds, &TrainConfig { seed, ..cfg.clone() })?;
        runs.push(RunSummary::from_report(seed, &out.report));
    }
    Ok(aggregate(runs))
}

pub fn aggregate(runs: Vec<RunSummary>) -> IdentificationReport {
    let errors: Vec<Vec<ParamError>> = runs.iter().map(|r| r.param_errors.clone()).filter(|e| !e.is_empty()).collect();
    let pick = |f: fn(&RunSummary) -> Option<Metrics>| mean_metrics(&runs.iter().map(f).collect::<Vec<_>>());
    IdentificationReport {
        params: summarize(&errors),
        a_priori: pick(|r| r.a_priori),
        ex_post: pick(|r| r.ex_post),
        net_vs_baseline: pick(|r| r.net_vs_baseline),
        runs,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseRow {
    pub sigma: f64,
    pub params: Vec<ParamSummary>,
    pub runs: Vec<RunSummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseSweepReport {
    pub rows: Vec<NoiseRow>,
}

impl NoiseSweepReport {
    pub fn row(&self, sigma: f64) -> Option<&NoiseRow> {
        self.rows.iter().find(|r| r.sigma == sigma)
    }

    pub fn to_table(&self) -> String {
        let mut out = format!("{:<14}", "parameter");
        for r in &self.rows {
            out += &format!("{:>12}", format!("sigma = {}", r.sigma));
        }
        out.push('\n');
        let names: Vec<String> = self.rows.first().map(|r| r.params.iter().map(|p| p.name.clone()).collect()).unwrap_or_default();
        for (k, name) in names.iter().enumerate() {
            out += &format!("{:<14}", format!("{name} (MAE)"));
            for r in &self.rows {
                out += &format!("{:>12.4e}", r.params[k].mae);
            }
            out.push('\n');
            out += &format!("{:<14}", format!("{name} (MAPE)"));
            for r in &self.rows {
                out += &format!("{:>11.2}%", r.params[k].mape);
            }
            out.push('\n');
        }
        out
    }
}

/// Direct response fits under Gaussian noise on the observed response.
/// Repeat `r` sees the same agent, prices and noise draw at every level, so
/// rows differ only in the noise scale.
pub fn noise_sweep(spec: &GenSpec, cfg: &TrainConfig, sigmas: &[f64], repeats: usize) -> Result<NoiseSweepReport> {
    let cfg = TrainConfig { direct_response_mode: true, ..cfg.clone() };
    let mut rows = Vec::with_capacity(sigmas.len());
    for &sigma in sigmas {
        let mut runs = Vec::with_capacity(repeats);
        for r in 0..repeats {
            let seed = repeat_seed(spec.seed, r);
            let ds = gen_dataset(&GenSpec { seed, noise_sigma: sigma, noise_target: NoiseTarget::Response, ..spec.clone() })?;
            let out = train(&ds, &TrainConfig { seed, ..cfg.clone() })?;
            runs.push(RunSummary::from_report(seed, &out.report));
        }
        let errors: Vec<Vec<ParamError>> = runs.iter().map(|r| r.param_errors.clone()).collect();
        rows.push(NoiseRow { sigma, params: summarize(&errors), runs });
    }
    Ok(NoiseSweepReport { rows })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureReport {
    pub mixture: MixtureSpec,
    pub direct_response_mode: bool,
    pub estimate: AgentParams,
    pub run: RunSummary,
}

impl MixtureReport {
    /// Whether each estimated coefficient lies between the pair's values.
    pub fn inside_pair(&self) -> bool {
        let (a, b) = (self.mixture.first.to_vec(), self.mixture.second.to_vec());
        self.estimate.to_vec().iter().zip(a.iter().zip(&b)).all(|(e, (x, y))| x.min(*y) <= *e && *e <= x.max(*y))
    }

    pub fn to_table(&self) -> String {
        let names = self.estimate.trainable_names();
        let mut out = format!("{:<10} {:>10} {:>10} {:>10}\n", "parameter", "first", "second", "estimate");
        for (k, n) in names.iter().enumerate() {
            out += &format!(
                "{:<10} {:>10.4} {:>10.4} {:>10.4}\n",
                n,
                self.mixture.first.to_vec()[k],
                self.mixture.second.to_vec()[k],
                self.estimate.to_vec()[k]
            );
        }
        out += &format!("block days {}, direct response fit: {}\n", self.mixture.block_days, self.direct_response_mode);
        out
    }
}

/// Identification on data generated by two agents in alternating blocks.
pub fn mixture_run(spec: &GenSpec, cfg: &TrainConfig) -> Result<MixtureReport> {
    let mixture = spec.mixture.clone().unwrap_or_default();
    let ds = gen_mixture(&GenSpec { mixture: Some(mixture.clone()), ..spec.clone() })?;
    let out = train(&ds, cfg)?;
    Ok(MixtureReport {
        mixture,
        direct_response_mode: cfg.direct_response_mode,
        estimate: out.theta.clone(),
        run: RunSummary::from_report(spec.seed, &out.report),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> (GenSpec, TrainConfig) {
        let spec = GenSpec { n_train: 12, n_test: 3, horizon: 6, seed: 4, ..GenSpec::default() };
        let cfg = TrainConfig { hidden: vec![8], warm_start_epochs: 3, epochs: 4, batch_size: 6, ..TrainConfig::default() };
        (spec, cfg)
    }

    #[test]
    fn moving_average_trend() {
        assert_eq!(moving_average(&[1.0, 2.0, 3.0, 4.0], 2), vec![1.5, 2.5, 3.5]);
        assert!(moving_average(&[1.0], 2).is_empty());
        assert_eq!(trend_rises(&[4.0, 3.0, 2.0, 1.0], 2), 0);
        // averages 2, 1.5, 3.5, 7
        assert_eq!(trend_rises(&[3.0, 1.0, 2.0, 5.0, 9.0], 2), 2);
        assert_eq!(trend_max_rise(&[4.0, 3.0, 2.0, 1.0], 2), 0.0);
        assert!((trend_max_rise(&[3.0, 1.0, 2.0, 5.0, 9.0], 2) - 4.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn identification_aggregates_every_repeat() {
        let (spec, cfg) = small();
        let rep = run_identification(&spec, &cfg, 2).unwrap();
        assert_eq!(rep.runs.len(), 2);
        assert_eq!(rep.runs[1].seed, 5);
        let a = rep.param("alpha").unwrap();
        let errs: Vec<f64> = rep.runs.iter().map(|r| r.param_errors[0].abs_error).collect();
        assert!((a.mae - (errs[0] + errs[1]) / 2.0).abs() < 1e-12);
        assert!(rep.a_priori.is_some() && rep.ex_post.is_some());
        assert!(rep.to_table().contains("alpha"));
    }

    #[test]
    fn noise_rows_follow_requested_levels() {
        let (spec, cfg) = small();
        let rep = noise_sweep(&spec, &cfg, &NOISE_LEVELS, 1).unwrap();
        let sigmas: Vec<f64> = rep.rows.iter().map(|r| r.sigma).collect();
        assert_eq!(sigmas, vec![0.0, 0.5, 1.0, 2.0, 3.0, 5.0]);
        // paired: the same agent at every level
        let truths: Vec<_> = rep.rows.iter().map(|r| r.runs[0].truth.clone()).collect();
        assert!(truths.windows(2).all(|w| w[0] == w[1]));
        assert!(rep.to_table().contains("sigma = 0.5"));
    }

    #[test]
    fn mixture_reports_the_generating_pair() {
        let (spec, cfg) = small();
        let rep = mixture_run(&spec, &TrainConfig { direct_response_mode: true, ..cfg }).unwrap();
        assert_eq!(rep.mixture, MixtureSpec::default());
        assert!(rep.run.truth.is_none());
        assert!(rep.to_table().contains("estimate"));
    }
}
