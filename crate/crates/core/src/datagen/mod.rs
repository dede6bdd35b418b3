//! Synthetic, ground-truth-labelled demand-response datasets.
//!
//! Each day draws its own temperature, baseline profile and price path from a
//! stream derived from `(seed, day, tag)`, so generation order does not
//! matter and parallel and serial runs agree bit for bit.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::par::Execution;
use crate::qp::{solve_agent_qp, AgentParams, PriceSignal};
use crate::scenario::{Dataset, Scenario};

/// Clamp range for generated baseline demand, kW.
pub const BASELINE_MIN: f64 = 2.401;
pub const BASELINE_MAX: f64 = 41.534;
/// Smallest price emitted by the generator.
pub const PRICE_FLOOR: f64 = 1.0;
/// Number of features emitted per day.
pub const FEATURE_DIM: usize = 8;
pub const FEATURE_NAMES: [&str; FEATURE_DIM] =
    ["temp_mean", "temp_max", "temp_min", "dow_sin", "dow_cos", "weekend", "doy_sin", "doy_cos"];

const TAG_AGENT: u64 = 1;
const TAG_WEATHER: u64 = 2;
const TAG_LOAD: u64 = 3;
const TAG_PRICE: u64 = 4;
const TAG_NOISE: u64 = 5;

/// Independent stream for `(seed, index, tag)`.
pub fn stream(seed: u64, index: u64, tag: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream((index << 8) | tag);
    rng
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseTarget {
    /// Perturb the observed response `y_obs`.
    #[default]
    Response,
    /// Perturb the net-demand measurement `z`.
    Net,
}

/// Shape of the synthetic daily load.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BaselineShape {
    /// Load level on a mild weekday before peaks, kW.
    pub level: f64,
    pub morning_peak: f64,
    pub evening_peak: f64,
    /// kW per degree above `cooling_threshold`.
    pub cooling_slope: f64,
    pub cooling_threshold: f64,
    /// kW per degree below `heating_threshold`.
    pub heating_slope: f64,
    pub heating_threshold: f64,
    pub weekend_factor: f64,
    /// Day-level multiplicative noise std.
    pub day_noise: f64,
    /// Hourly additive noise std, kW.
    pub hour_noise: f64,
}

impl Default for BaselineShape {
    fn default() -> Self {
        Self {
            level: 4.5,
            morning_peak: 5.0,
            evening_peak: 12.0,
            cooling_slope: 1.3,
            cooling_threshold: 18.0,
            heating_slope: 0.25,
            heating_threshold: 8.0,
            weekend_factor: 0.9,
            day_noise: 0.08,
            hour_noise: 0.6,
        }
    }
}

/// Shape of the synthetic day-ahead price, $/MWh.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PriceShape {
    pub base: [f64; 2],
    pub evening_peak: [f64; 2],
    pub morning_peak: [f64; 2],
    pub noise: f64,
}

impl Default for PriceShape {
    fn default() -> Self {
        Self { base: [20.0, 40.0], evening_peak: [30.0, 150.0], morning_peak: [0.0, 40.0], noise: 3.0 }
    }
}

/// Two generating agents alternating in contiguous blocks of days.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureSpec {
    pub first: AgentParams,
    pub second: AgentParams,
    pub block_days: usize,
}

impl Default for MixtureSpec {
    fn default() -> Self {
        Self {
            first: AgentParams::TotalBudget { alpha: 20.0, m_budget: 3.0 },
            second: AgentParams::TotalBudget { alpha: 50.0, m_budget: 0.5 },
            block_days: 10,
        }
    }
}

impl MixtureSpec {
    /// Which of the pair generates `day` (0 or 1).
    pub fn label(&self, day: usize) -> usize {
        (day / self.block_days.max(1)) % 2
    }

    pub fn agent(&self, label: usize) -> &AgentParams {
        if label == 0 {
            &self.first
        } else {
            &self.second
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenSpec {
    pub n_train: usize,
    pub n_test: usize,
    pub horizon: usize,
    pub alpha_range: [f64; 2],
    pub m_range: [f64; 2],
    pub noise_sigma: f64,
    pub noise_target: NoiseTarget,
    /// Generate from this agent instead of sampling one.
    pub agent: Option<AgentParams>,
    pub mixture: Option<MixtureSpec>,
    pub seed: u64,
    pub baseline: BaselineShape,
    pub price: PriceShape,
}

impl Default for GenSpec {
    fn default() -> Self {
        Self {
            n_train: 200,
            n_test: 60,
            horizon: 24,
            alpha_range: [10.0, 50.0],
            m_range: [1.0, 10.0],
            noise_sigma: 0.0,
            noise_target: NoiseTarget::Response,
            agent: None,
            mixture: None,
            seed: 0,
            baseline: BaselineShape::default(),
            price: PriceShape::default(),
        }
    }
}

fn ordered(name: &str, r: [f64; 2], min: f64) -> Result<()> {
    if !(r[0].is_finite() && r[1].is_finite() && r[0] <= r[1] && r[0] >= min) {
        return Err(Error::InvalidSpec(format!("{name} must satisfy {min} <= lo <= hi, got {r:?}")));
    }
    Ok(())
}

impl GenSpec {
    pub fn days(&self) -> usize {
        self.n_train + self.n_test
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_train == 0 {
            return Err(Error::InvalidSpec("n_train must be positive".into()));
        }
        if self.horizon == 0 {
            return Err(Error::InvalidSpec("horizon must be positive".into()));
        }
        ordered("alpha_range", self.alpha_range, crate::qp::ALPHA_MIN)?;
        ordered("m_range", self.m_range, 0.0)?;
        ordered("price.base", self.price.base, 0.0)?;
        ordered("price.evening_peak", self.price.evening_peak, 0.0)?;
        ordered("price.morning_peak", self.price.morning_peak, 0.0)?;
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return Err(Error::InvalidSpec(format!("noise_sigma must be >= 0, got {}", self.noise_sigma)));
        }
        if let Some(a) = &self.agent {
            a.validate().map_err(|e| Error::InvalidSpec(e.to_string()))?;
        }
        if let Some(m) = &self.mixture {
            if m.block_days == 0 {
                return Err(Error::InvalidSpec("mixture block_days must be positive".into()));
            }
            for a in [&m.first, &m.second] {
                a.validate().map_err(|e| Error::InvalidSpec(e.to_string()))?;
            }
        }
        Ok(())
    }
}

/// Hour of day at the middle of step `t`.
fn hour(t: usize, horizon: usize) -> f64 {
    (t as f64 + 0.5) * 24.0 / horizon as f64
}

fn bump(h: f64, centre: f64, width: f64) -> f64 {
    (-(h - centre).powi(2) / (2.0 * width * width)).exp()
}

struct Weather {
    mean: f64,
    amplitude: f64,
}

fn weather(spec: &GenSpec, day: usize) -> Weather {
    let mut rng = stream(spec.seed, day as u64, TAG_WEATHER);
    let doy = day as f64;
    let seasonal = 11.0 - 14.0 * (2.0 * PI * (doy + 10.0) / 365.0).cos();
    Weather {
        mean: seasonal + Normal::new(0.0, 3.0).unwrap().sample(&mut rng),
        amplitude: rng.random_range(3.0..7.0),
    }
}

fn temperature(w: &Weather, h: f64) -> f64 {
    w.mean + w.amplitude * (2.0 * PI * (h - 9.0) / 24.0).sin()
}

/// Daily baseline profile and the features that drove it.
pub fn gen_baseline(spec: &GenSpec, day: usize) -> (Vec<f64>, Vec<f64>) {
    let b = &spec.baseline;
    let w = weather(spec, day);
    let dow = day % 7;
    let weekend = dow >= 5;
    let mut rng = stream(spec.seed, day as u64, TAG_LOAD);
    let day_scale = 1.0 + b.day_noise * Normal::new(0.0, 1.0).unwrap().sample(&mut rng);
    let hour_noise = Normal::new(0.0, b.hour_noise.max(0.0)).unwrap();
    let profile = (0..spec.horizon)
        .map(|t| {
            let h = hour(t, spec.horizon);
            let temp = temperature(&w, h);
            let shape = b.level + b.morning_peak * bump(h, 8.0, 1.5) + b.evening_peak * bump(h, 19.0, 2.5);
            let thermal = b.cooling_slope * (temp - b.cooling_threshold).max(0.0) * (0.5 + 0.5 * bump(h, 16.0, 4.0))
                + b.heating_slope * (b.heating_threshold - temp).max(0.0);
            let load = (shape + thermal) * if weekend { b.weekend_factor } else { 1.0 } * day_scale;
            (load + hour_noise.sample(&mut rng)).clamp(BASELINE_MIN, BASELINE_MAX)
        })
        .collect();
    let doy = 2.0 * PI * day as f64 / 365.0;
    let dw = 2.0 * PI * dow as f64 / 7.0;
    let features = vec![
        w.mean,
        w.mean + w.amplitude,
        w.mean - w.amplitude,
        dw.sin(),
        dw.cos(),
        if weekend { 1.0 } else { 0.0 },
        doy.sin(),
        doy.cos(),
    ];
    (profile, features)
}

/// Day-ahead-style price: base level, morning and evening bumps, noise.
pub fn gen_price(spec: &GenSpec, day: usize) -> PriceSignal {
    let p = &spec.price;
    let mut rng = stream(spec.seed, day as u64, TAG_PRICE);
    let mut draw = |r: [f64; 2]| if r[1] > r[0] { rng.random_range(r[0]..=r[1]) } else { r[0] };
    let base = draw(p.base);
    let evening = draw(p.evening_peak);
    let morning = draw(p.morning_peak);
    let noise = Normal::new(0.0, p.noise.max(0.0)).unwrap();
    let lambda = (0..spec.horizon)
        .map(|t| {
            let h = hour(t, spec.horizon);
            let v = base + evening * bump(h, 18.0, 2.5) + morning * bump(h, 8.0, 1.5) + noise.sample(&mut rng);
            v.max(PRICE_FLOOR)
        })
        .collect();
    PriceSignal::new(lambda).expect("generated prices are finite")
}

/// Draws `alpha ~ U[alpha_range]`, `M ~ U[m_range]`.
pub fn sample_agent<R: Rng + ?Sized>(spec: &GenSpec, rng: &mut R) -> AgentParams {
    let u = |rng: &mut R, r: [f64; 2]| if r[1] > r[0] { rng.random_range(r[0]..=r[1]) } else { r[0] };
    let alpha = u(rng, spec.alpha_range);
    let m_budget = u(rng, spec.m_range);
    AgentParams::TotalBudget { alpha, m_budget }
}

/// The agent generating a single-agent dataset.
pub fn truth_agent(spec: &GenSpec) -> AgentParams {
    spec.agent.clone().unwrap_or_else(|| sample_agent(spec, &mut stream(spec.seed, 0, TAG_AGENT)))
}

fn day_scenario(spec: &GenSpec, day: usize, agent: &AgentParams) -> Result<Scenario> {
    let (d, features) = gen_baseline(spec, day);
    let lambda = gen_price(spec, day);
    let y = solve_agent_qp(agent, &lambda, None)?.y;
    let z = d.iter().zip(&y).map(|(d, y)| d + y).collect();
    Ok(Scenario {
        id: day,
        lambda,
        features,
        z,
        d_true: Some(d),
        y_true: Some(y),
        y_obs: None,
        truth_params: Some(agent.clone()),
    })
}

fn assemble(spec: &GenSpec, exec: Execution, agent_of: impl Fn(usize) -> AgentParams + Sync + Send) -> Result<Dataset> {
    spec.validate()?;
    let mut all = exec.map_range(spec.days(), |day| day_scenario(spec, day, &agent_of(day))).into_iter().collect::<Result<Vec<_>>>()?;
    if spec.noise_sigma > 0.0 {
        let mut rng = stream(spec.seed, 0, TAG_NOISE);
        add_noise(&mut all, spec.noise_sigma, &mut rng, spec.noise_target);
    }
    let test = all.split_off(spec.n_train);
    Ok(Dataset { train: all, test })
}

/// Chronological split: the first `n_train` days train, the rest test.
pub fn gen_dataset(spec: &GenSpec) -> Result<Dataset> {
    gen_dataset_with(spec, Execution::default())
}

pub fn gen_dataset_with(spec: &GenSpec, exec: Execution) -> Result<Dataset> {
    if spec.mixture.is_some() {
        return gen_mixture_with(spec, exec);
    }
    spec.validate()?;
    let agent = truth_agent(spec);
    assemble(spec, exec, |_| agent.clone())
}

/// Days alternate between the two agents of `spec.mixture` (default pair if
/// unset) in contiguous blocks.
pub fn gen_mixture(spec: &GenSpec) -> Result<Dataset> {
    gen_mixture_with(spec, Execution::default())
}

pub fn gen_mixture_with(spec: &GenSpec, exec: Execution) -> Result<Dataset> {
    let mix = spec.mixture.clone().unwrap_or_default();
    assemble(spec, exec, |day| mix.agent(mix.label(day)).clone())
}

/// Zero-mean Gaussian noise on the chosen target; truth fields are untouched.
pub fn add_noise<R: Rng + ?Sized>(scenarios: &mut [Scenario], sigma: f64, rng: &mut R, target: NoiseTarget) {
    if sigma <= 0.0 {
        return;
    }
    let normal = Normal::new(0.0, sigma).unwrap();
    for s in scenarios {
        match target {
            NoiseTarget::Response => {
                if let Some(base) = s.observed_response().map(<[f64]>::to_vec) {
                    s.y_obs = Some(base.iter().map(|y| y + normal.sample(rng)).collect());
                }
            }
            NoiseTarget::Net => {
                for z in &mut s.z {
                    *z += normal.sample(rng);
                }
            }
        }
    }
}
