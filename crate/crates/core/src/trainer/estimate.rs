use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::Metrics;
use crate::mlp::BaselineNet;
use crate::par::Execution;
use crate::qp::{self, AgentParams};
use crate::scenario::Scenario;

/// Baseline predictions per scenario, with metrics when the truth is known.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineEstimate {
    pub predictions: Vec<Vec<f64>>,
    pub metrics: Option<Metrics>,
}

impl BaselineEstimate {
    pub fn require_metrics(&self) -> Result<Metrics> {
        self.metrics.ok_or(Error::MissingGroundTruth("true baseline"))
    }

    fn with_truth(predictions: Vec<Vec<f64>>, scenarios: &[Scenario]) -> Result<Self> {
        let truth: Option<Vec<Vec<f64>>> = scenarios.iter().map(|s| s.d_true.clone()).collect();
        let metrics = match truth {
            Some(t) if !scenarios.is_empty() => Some(Metrics::compute_rows(&predictions, &t)?),
            _ => None,
        };
        Ok(Self { predictions, metrics })
    }
}

/// Forecast `D_hat = f(x)` before the window.
pub fn a_priori_estimate(net: &BaselineNet, scenarios: &[Scenario], exec: Execution) -> Result<BaselineEstimate> {
    let predictions = exec.map(scenarios, |_, s| net.forward(&s.features)).into_iter().collect::<Result<Vec<_>>>()?;
    BaselineEstimate::with_truth(predictions, scenarios)
}

/// Recover `D = z - y*(theta_hat, lambda)` after the window. The asymmetric
/// model needs a baseline for its curvature: the forecast if a network is
/// given, else the true baseline.
pub fn ex_post_estimate(
    theta: &AgentParams,
    net: Option<&BaselineNet>,
    scenarios: &[Scenario],
    exec: Execution,
) -> Result<BaselineEstimate> {
    let predictions = exec
        .map(scenarios, |_, s| -> Result<Vec<f64>> {
            let forecast = net.map(|n| n.forward(&s.features)).transpose()?;
            let baseline = forecast.as_deref().or(s.d_true.as_deref());
            let y = qp::solve(theta, &s.lambda, baseline)?.y;
            Ok(s.z.iter().zip(&y).map(|(z, y)| z - y).collect())
        })
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    BaselineEstimate::with_truth(predictions, scenarios)
}
