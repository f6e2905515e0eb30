use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::losses::{log_lerp, LossFlags, LossWeights};
use crate::priors::{DEFAULT_LAMBDA_SMOOTH, DEFAULT_OMEGA, DEFAULT_PATCH};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    Synthetic,
    Real,
}

impl std::str::FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "synthetic" => Ok(Preset::Synthetic),
            "real" => Ok(Preset::Real),
            other => Err(Error::invalid(format!("unknown preset '{other}'"))),
        }
    }
}

/// Learning rates per parameter group.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LearningRates {
    /// Position lr at step 0 and at the last step, before scaling by the
    /// scene extent.
    pub position_start: f64,
    pub position_end: f64,
    pub scale: f64,
    pub rotation: f64,
    pub opacity: f64,
    pub color: f64,
    pub beta_start: f64,
    pub beta_end: f64,
    pub atmos: f64,
}

impl Default for LearningRates {
    fn default() -> Self {
        Self {
            position_start: 1.6e-4,
            position_end: 1.6e-6,
            scale: 5e-3,
            rotation: 1e-3,
            opacity: 5e-2,
            color: 2.5e-3,
            beta_start: 1e-7,
            beta_end: 1e-8,
            atmos: 1e-3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DensifyConfig {
    pub enabled: bool,
    pub interval: usize,
    pub start: usize,
    /// Last iteration that may densify; `None` means half the run.
    pub stop: Option<usize>,
    /// Threshold on the mean screen-space position gradient, NDC units.
    pub grad_threshold: f64,
    pub prune_opacity: f64,
    /// Gaussians larger than this fraction of the scene extent are split,
    /// smaller ones cloned.
    pub percent_dense: f64,
}

impl Default for DensifyConfig {
    fn default() -> Self {
        Self {
            enabled: true,
            interval: 100,
            start: 500,
            stop: None,
            grad_threshold: 2e-4,
            prune_opacity: 5e-3,
            percent_dense: 0.01,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub preset: Preset,
    pub iterations: usize,
    pub seed: u64,
    pub lr: LearningRates,
    /// Optional L2 penalty on β.
    pub beta_l2: f64,
    pub densify: DensifyConfig,
    pub weights: LossWeights,
    pub flags: LossFlags,
    /// Model the fog at all; without it the clear Gaussians are fit to the
    /// foggy views directly.
    pub fog_enabled: bool,
    pub use_sigmoid: bool,
    pub initial_beta: f64,
    pub initial_light: f64,
    pub prior_patch: usize,
    pub prior_omega: f64,
    pub lambda_smooth: f64,
    /// Evaluate the Laplacian quadratic on the prior map instead of the
    /// render (makes the smoothness term constant).
    pub literal_smoothness: bool,
    pub background: [f64; 3],
    pub checkpoint_every: Option<usize>,
}

impl TrainConfig {
    pub fn preset(preset: Preset) -> Self {
        let iterations = match preset {
            Preset::Synthetic => 30_000,
            Preset::Real => 3_000,
        };
        Self {
            preset,
            iterations,
            seed: 0,
            lr: LearningRates::default(),
            beta_l2: 0.0,
            densify: DensifyConfig::default(),
            weights: LossWeights::default(),
            flags: LossFlags::default(),
            fog_enabled: true,
            use_sigmoid: true,
            initial_beta: crate::fog::DEFAULT_BETA,
            initial_light: crate::fog::DEFAULT_ATMOSPHERIC_LIGHT,
            prior_patch: DEFAULT_PATCH,
            prior_omega: DEFAULT_OMEGA,
            lambda_smooth: DEFAULT_LAMBDA_SMOOTH,
            literal_smoothness: false,
            background: [0.0; 3],
            checkpoint_every: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let lr = &self.lr;
        let rates = [
            lr.position_start,
            lr.position_end,
            lr.scale,
            lr.rotation,
            lr.opacity,
            lr.color,
            lr.beta_start,
            lr.beta_end,
            lr.atmos,
        ];
        if rates.iter().any(|r| !(*r > 0.0) || !r.is_finite()) {
            return Err(Error::invalid("learning rates must be positive and finite"));
        }
        if self.iterations == 0 {
            return Err(Error::invalid("iterations must be positive"));
        }
        if self.densify.interval == 0 {
            return Err(Error::invalid("densify interval must be positive"));
        }
        if self.checkpoint_every == Some(0) {
            return Err(Error::invalid("checkpoint interval must be positive"));
        }
        if !(self.beta_l2 >= 0.0) {
            return Err(Error::invalid("beta L2 weight must be non-negative"));
        }
        Ok(())
    }

    pub fn densify_stop(&self) -> usize {
        self.densify.stop.unwrap_or(self.iterations / 2)
    }

    pub fn position_lr(&self, iter: usize) -> Result<f64> {
        log_lerp(self.lr.position_start, self.lr.position_end, iter, self.iterations)
    }

    pub fn beta_lr(&self, iter: usize) -> Result<f64> {
        log_lerp(self.lr.beta_start, self.lr.beta_end, iter, self.iterations)
    }
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self::preset(Preset::Synthetic)
    }
}
