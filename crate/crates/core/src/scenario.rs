//! One optimization window and collections of them.

use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::qp::{AgentParams, PriceSignal};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub id: usize,
    pub lambda: PriceSignal,
    pub features: Vec<f64>,
    /// Measured net demand, kW.
    pub z: Vec<f64>,
    pub d_true: Option<Vec<f64>>,
    pub y_true: Option<Vec<f64>>,
    /// Noisy observation of the response, for fits that see it directly.
    pub y_obs: Option<Vec<f64>>,
    pub truth_params: Option<AgentParams>,
}

impl Scenario {
    pub fn horizon(&self) -> usize {
        self.lambda.len()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.horizon();
        check_len("net demand", n, self.z.len())?;
        for (what, v) in [("true baseline", &self.d_true), ("true response", &self.y_true), ("observed response", &self.y_obs)] {
            if let Some(v) = v {
                check_len(what, n, v.len())?;
            }
        }
        let finite = |v: &[f64]| v.iter().all(|x| x.is_finite());
        if !finite(&self.z) || !finite(&self.features) {
            return Err(Error::InvalidSpec(format!("scenario {} has non-finite values", self.id)));
        }
        Ok(())
    }

    /// The response a direct fit targets: the noisy observation if present,
    /// else the exact one.
    pub fn observed_response(&self) -> Option<&[f64]> {
        self.y_obs.as_deref().or(self.y_true.as_deref())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub train: Vec<Scenario>,
    pub test: Vec<Scenario>,
}

impl Dataset {
    pub fn horizon(&self) -> Option<usize> {
        self.train.first().or(self.test.first()).map(Scenario::horizon)
    }

    pub fn feature_dim(&self) -> Option<usize> {
        self.train.first().or(self.test.first()).map(|s| s.features.len())
    }

    pub fn all(&self) -> impl Iterator<Item = &Scenario> {
        self.train.iter().chain(&self.test)
    }

    pub fn validate(&self) -> Result<()> {
        let (Some(n), Some(m)) = (self.horizon(), self.feature_dim()) else {
            return Err(Error::InsufficientData { needed: 1, got: 0 });
        };
        for s in self.all() {
            s.validate()?;
            check_len("horizon", n, s.horizon())?;
            check_len("features", m, s.features.len())?;
        }
        Ok(())
    }

    /// The single generating agent, if every scenario records the same one.
    pub fn common_truth(&self) -> Option<&AgentParams> {
        let first = self.all().next()?.truth_params.as_ref()?;
        self.all().all(|s| s.truth_params.as_ref() == Some(first)).then_some(first)
    }
}
