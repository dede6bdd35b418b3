//! Run configuration: a profile supplies defaults, a TOML file overrides
//! them, and command-line flags or `DRIDENT_*` variables override both.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::ValueEnum;
use serde::{Deserialize, Serialize};

use drident_core::datagen::GenSpec;
use drident_core::experiments::NOISE_LEVELS;
use drident_core::gradcheck::GradcheckConfig;
use drident_core::trainer::TrainConfig;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Profile {
    /// Six-step windows, 20 days, a small network.
    Smoke,
    /// 24-step windows, 200 training and 60 test days, hidden sizes 200/100/100.
    #[default]
    Full,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    /// Dataset directory; `<out>/data` when unset.
    pub data: Option<PathBuf>,
    /// Checkpoint read by `evaluate`; `<out>/checkpoint.json` when unset.
    pub checkpoint: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AblateConfig {
    pub repeats: usize,
    pub sigmas: Vec<f64>,
    /// Fit the mixture to observed responses instead of net demand.
    pub mixture_direct: bool,
}

impl Default for AblateConfig {
    fn default() -> Self {
        Self { repeats: 10, sigmas: NOISE_LEVELS.to_vec(), mixture_direct: true }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: Option<u64>,
    pub out: PathBuf,
    pub paths: Paths,
    pub gen: GenSpec,
    pub train: TrainConfig,
    pub gradcheck: GradcheckConfig,
    pub ablate: AblateConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: None,
            out: PathBuf::from("out"),
            paths: Paths::default(),
            gen: GenSpec::default(),
            train: TrainConfig::default(),
            gradcheck: GradcheckConfig::default(),
            ablate: AblateConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn for_profile(profile: Profile) -> Self {
        let mut c = Self::default();
        if profile == Profile::Smoke {
            c.gen.horizon = 6;
            c.gen.n_train = 16;
            c.gen.n_test = 4;
            c.train.hidden = vec![16, 16];
            c.train.warm_start_epochs = 30;
            c.train.epochs = 60;
            c.train.batch_size = 8;
            c.gradcheck.instances = 40;
            c.gradcheck.nets = 3;
            c.ablate.repeats = 2;
        }
        c
    }

    /// Profile defaults overlaid with the keys present in `text`.
    pub fn from_toml(profile: Profile, text: &str) -> Result<Self> {
        let mut base = toml::Table::try_from(Self::for_profile(profile))?;
        let overlay: toml::Table = toml::from_str(text).context("config is not valid TOML")?;
        merge(&mut base, overlay);
        base.try_into().context("config does not match the expected keys")
    }

    pub fn load(profile: Profile, path: Option<&Path>) -> Result<Self> {
        match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).with_context(|| format!("cannot read config {}", p.display()))?;
                Self::from_toml(profile, &text).with_context(|| format!("in config {}", p.display()))
            }
            None => Ok(Self::for_profile(profile)),
        }
    }

    /// One seed drives generation, training and checks.
    pub fn set_seed(&mut self, seed: u64) {
        self.seed = Some(seed);
        self.gen.seed = seed;
        self.train.seed = seed;
        self.gradcheck.seed = seed;
    }

    pub fn require_seed(&self) -> Result<u64> {
        match self.seed {
            Some(s) => Ok(s),
            None => bail!("a seed is required: pass --seed, set DRIDENT_SEED, or put `seed = ...` in the config"),
        }
    }

    pub fn data_dir(&self) -> PathBuf {
        self.paths.data.clone().unwrap_or_else(|| self.out.join("data"))
    }

    pub fn checkpoint_path(&self) -> PathBuf {
        self.paths.checkpoint.clone().unwrap_or_else(|| self.out.join("checkpoint.json"))
    }
}

fn merge(base: &mut toml::Table, overlay: toml::Table) {
    for (k, v) in overlay {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => merge(b, o),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}
