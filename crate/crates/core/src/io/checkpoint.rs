use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mlp::BaselineNet;
use crate::qp::AgentParams;

pub const CHECKPOINT_VERSION: u32 = 1;

/// Trained network (absent for direct fits) and agent coefficients.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub net: Option<BaselineNet>,
    pub theta: AgentParams,
}

pub fn save_checkpoint(path: &Path, net: Option<&BaselineNet>, theta: &AgentParams) -> Result<()> {
    super::write_json(path, &Checkpoint { version: CHECKPOINT_VERSION, net: net.cloned(), theta: theta.clone() })
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let ck: Checkpoint = super::read_json(path)?;
    if ck.version != CHECKPOINT_VERSION {
        return Err(Error::InvalidSpec(format!("checkpoint version {} unsupported", ck.version)));
    }
    let net = match ck.net {
        Some(n) => Some(BaselineNet::from_parts(n.sizes().to_vec(), n.activation(), n.params().to_vec(), n.normalization().clone())?),
        None => None,
    };
    ck.theta.validate()?;
    Ok(Checkpoint { net, ..ck })
}
