use std::fs;
use std::path::Path;

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};

use drident_core::datagen::{gen_dataset, gen_mixture};
use drident_core::experiments::{mixture_run, noise_sweep};
use drident_core::gradcheck;
use drident_core::io::{load_checkpoint, load_dataset, save_checkpoint, write_dataset, write_json};
use drident_core::metrics::Metrics;
use drident_core::qp::AgentParams;
use drident_core::trainer::{self, a_priori_estimate, ex_post_estimate, TrainConfig};

use crate::config::RunConfig;
use crate::AblateMode;

/// Writes `<out>/<stem>.json` and `<out>/<stem>.txt` and echoes the text.
fn emit<T: Serialize>(out: &Path, stem: &str, value: &T, text: &str) -> Result<()> {
    fs::create_dir_all(out).with_context(|| format!("cannot create {}", out.display()))?;
    write_json(&out.join(format!("{stem}.json")), value)?;
    fs::write(out.join(format!("{stem}.txt")), text)?;
    print!("{text}");
    Ok(())
}

pub fn datagen(cfg: &RunConfig) -> Result<()> {
    cfg.require_seed()?;
    let ds = if cfg.gen.mixture.is_some() { gen_mixture(&cfg.gen)? } else { gen_dataset(&cfg.gen)? };
    let dir = cfg.data_dir();
    let manifest = write_dataset(&dir, &ds, Some(&cfg.gen))?;
    println!("wrote {} train and {} test scenarios to {}", manifest.train.len(), manifest.test.len(), dir.display());
    Ok(())
}

pub fn train(cfg: &RunConfig) -> Result<()> {
    cfg.require_seed()?;
    let dir = cfg.data_dir();
    let ds = load_dataset(&dir).with_context(|| format!("loading dataset {}", dir.display()))?;
    let out = trainer::train(&ds, &cfg.train)?;
    save_checkpoint(&cfg.checkpoint_path(), out.net.as_ref(), &out.theta)?;
    emit(&cfg.out, "report", &out.report, &out.report.to_text())
}

#[derive(Debug, Serialize, Deserialize)]
struct Evaluation {
    theta: AgentParams,
    scenarios: usize,
    a_priori: Option<Metrics>,
    ex_post: Option<Metrics>,
    net_vs_baseline: Option<Metrics>,
}

pub fn evaluate(cfg: &RunConfig) -> Result<()> {
    let ck = load_checkpoint(&cfg.checkpoint_path()).with_context(|| format!("loading checkpoint {}", cfg.checkpoint_path().display()))?;
    let dir = cfg.data_dir();
    let ds = load_dataset(&dir).with_context(|| format!("loading dataset {}", dir.display()))?;
    let test = if ds.test.is_empty() { &ds.train } else { &ds.test };
    let exec = cfg.train.execution;
    let a_priori = match &ck.net {
        Some(net) => a_priori_estimate(net, test, exec)?.metrics,
        None => None,
    };
    let ex_post = ex_post_estimate(&ck.theta, ck.net.as_ref(), test, exec)?.metrics;
    let ev = Evaluation { theta: ck.theta, scenarios: test.len(), a_priori, ex_post, net_vs_baseline: trainer::net_vs_baseline(test)? };
    let mut text = format!("scenarios    {}\n", ev.scenarios);
    for (k, v) in ev.theta.trainable_names().iter().zip(ev.theta.to_vec()) {
        text += &format!("{k:<12} {v:.4}\n");
    }
    for (label, m) in [("a-priori", &ev.a_priori), ("ex-post", &ev.ex_post), ("net demand", &ev.net_vs_baseline)] {
        text += &match m {
            Some(m) => format!("{label:<12} MAE {:.4}  MAPE {:.2}%\n", m.mae, m.mape),
            None => format!("{label:<12} -\n"),
        };
    }
    emit(&cfg.out, "evaluation", &ev, &text)
}

/// Returns whether every check passed.
pub fn gradcheck(cfg: &RunConfig) -> Result<bool> {
    let report = gradcheck::run(&cfg.gradcheck)?;
    let mut text = report.to_table();
    text += if report.passed { "gradcheck passed\n" } else { "gradcheck FAILED\n" };
    emit(&cfg.out, "gradcheck", &report, &text)?;
    Ok(report.passed)
}

pub fn ablate(cfg: &RunConfig, mode: AblateMode) -> Result<()> {
    cfg.require_seed()?;
    match mode {
        AblateMode::Noise => {
            let r = noise_sweep(&cfg.gen, &cfg.train, &cfg.ablate.sigmas, cfg.ablate.repeats)?;
            emit(&cfg.out, "ablation_noise", &r, &r.to_table())
        }
        AblateMode::Mixture => {
            let train = TrainConfig { direct_response_mode: cfg.ablate.mixture_direct, ..cfg.train.clone() };
            let r = mixture_run(&cfg.gen, &train)?;
            emit(&cfg.out, "ablation_mixture", &r, &r.to_table())
        }
    }
}
