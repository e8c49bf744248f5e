use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::data::{self, MixtureSpec};
use crate::error::{Error, Result};
use crate::norm::Norm;
use crate::optim::{DEFAULT_RMS_ALPHA, DEFAULT_RMS_EPS};

/// Which training loop to run.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Objective {
    MeanPrimal,
    MeanDual,
    Cov,
    Combined,
    Conditional,
}

impl Objective {
    pub fn name(self) -> &'static str {
        match self {
            Objective::MeanPrimal => "mean-primal",
            Objective::MeanDual => "mean-dual",
            Objective::Cov => "cov",
            Objective::Combined => "combined",
            Objective::Conditional => "conditional",
        }
    }

    pub fn has_mean_direction(self) -> bool {
        matches!(self, Objective::MeanPrimal | Objective::Combined)
    }

    pub fn has_cov_directions(self) -> bool {
        matches!(self, Objective::Cov | Objective::Combined | Objective::Conditional)
    }
}

/// How the mean critic direction `v` is kept feasible after each step.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum VProjection {
    /// Euclidean projection onto the unit `ℓ_p` ball.
    Ball,
    /// Coordinate clipping to `[-1, 1]` (weight-clipped linear head).
    Clip,
}

/// Gradient fed to RMSProp for the Stiefel heads `U`, `V`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StiefelGradient {
    /// Raw Euclidean gradient.
    #[default]
    Euclidean,
    /// Euclidean gradient projected onto the tangent space at the current
    /// point. The maximizer is then a fixed point of the preconditioned
    /// step, so frozen-critic ascent reaches the Ky-Fan value.
    Tangent,
}

/// Every knob of a run. TOML keys are the field names.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub objective: Objective,
    /// Primal ball norm for the mean direction.
    pub p: Norm,
    /// Dual norm for `mean-dual`.
    pub q: Norm,
    /// Use `‖Δ‖²` instead of `‖Δ‖` in `mean-dual` (q = 2 only).
    pub squared_dual: bool,
    pub v_projection: VProjection,
    pub stiefel_gradient: StiefelGradient,
    pub k: usize,
    pub lr: f64,
    pub critic_iters: usize,
    pub clip: f64,
    /// ℓ2 penalty `(λ/2)‖ω‖²` subtracted from the critic objective; 0
    /// disables it. Clipping still applies.
    pub weight_decay: f64,
    pub batch: usize,
    pub real_multiplier: usize,
    pub mean_weight: f64,
    pub cov_weight: f64,
    pub lambda_d: f64,
    pub lambda_g: f64,
    /// Feed one-hot labels to the generator. Defaults to on for
    /// `conditional` only.
    pub conditional_generator: Option<bool>,
    pub generator_updates: usize,
    pub seed: u64,
    pub log_every: usize,
    pub checkpoint_every: usize,
    pub checkpoint_path: Option<PathBuf>,
    /// Builtin dataset name; ignored when `mixture` is set.
    pub dataset: String,
    pub mixture: Option<MixtureSpec>,
    pub noise_dim: usize,
    pub hidden: Vec<usize>,
    pub feature_dim: usize,
    pub init_scale: f64,
    pub rms_alpha: f64,
    pub rms_eps: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            objective: Objective::MeanPrimal,
            p: Norm::L2,
            q: Norm::L2,
            squared_dual: false,
            v_projection: VProjection::Ball,
            stiefel_gradient: StiefelGradient::Euclidean,
            k: 16,
            lr: 5e-5,
            critic_iters: 5,
            clip: 0.05,
            weight_decay: 0.0,
            batch: 64,
            real_multiplier: 3,
            mean_weight: 1.0,
            cov_weight: 1.0,
            lambda_d: 1.0,
            lambda_g: 1.0,
            conditional_generator: None,
            generator_updates: 10_000,
            seed: 0,
            log_every: 1,
            checkpoint_every: 0,
            checkpoint_path: None,
            dataset: "bimodal2d".into(),
            mixture: None,
            noise_dim: 2,
            hidden: vec![64, 64],
            feature_dim: 64,
            init_scale: 0.05,
            rms_alpha: DEFAULT_RMS_ALPHA,
            rms_eps: DEFAULT_RMS_EPS,
        }
    }
}

impl TrainConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Applies a `key=value` override, parsing `value` as a TOML value
    /// (bare words are taken as strings).
    pub fn set(&mut self, assignment: &str) -> Result<()> {
        let (key, value) = assignment
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("override `{assignment}` is not key=value")))?;
        let key = key.trim();
        let value = value.trim();
        let mut table = toml::Table::try_from(&*self).map_err(|e| Error::Config(e.to_string()))?;
        let parsed = parse_value(value)?;
        if !Self::default_keys().contains(&key) {
            return Err(Error::Config(format!("unknown config key `{key}`")));
        }
        table.insert(key.to_string(), parsed);
        let text = toml::to_string(&table).map_err(|e| Error::Config(e.to_string()))?;
        let cfg: Self = toml::from_str(&text).map_err(|e| Error::Config(format!("{key}: {e}")))?;
        *self = cfg;
        Ok(())
    }

    fn default_keys() -> &'static [&'static str] {
        &[
            "objective",
            "p",
            "q",
            "squared_dual",
            "v_projection",
            "stiefel_gradient",
            "k",
            "lr",
            "critic_iters",
            "clip",
            "weight_decay",
            "batch",
            "real_multiplier",
            "mean_weight",
            "cov_weight",
            "lambda_d",
            "lambda_g",
            "conditional_generator",
            "generator_updates",
            "seed",
            "log_every",
            "checkpoint_every",
            "checkpoint_path",
            "dataset",
            "mixture",
            "noise_dim",
            "hidden",
            "feature_dim",
            "init_scale",
            "rms_alpha",
            "rms_eps",
        ]
    }

    pub fn mixture_spec(&self) -> Result<MixtureSpec> {
        let spec = match &self.mixture {
            Some(m) => m.clone(),
            None => data::builtin(&self.dataset)?,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn uses_conditional_generator(&self) -> bool {
        self.conditional_generator.unwrap_or(self.objective == Objective::Conditional)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad(format!("lr must be positive, got {}", self.lr));
        }
        if self.critic_iters == 0 {
            return bad("critic_iters must be ≥ 1".into());
        }
        if self.batch == 0 {
            return bad("batch must be ≥ 1".into());
        }
        if !(self.clip > 0.0 && self.clip.is_finite()) {
            return bad(format!("clip must be positive, got {}", self.clip));
        }
        if self.real_multiplier == 0 {
            return bad("real_multiplier must be ≥ 1".into());
        }
        if self.log_every == 0 {
            return bad("log_every must be ≥ 1".into());
        }
        if self.noise_dim == 0 || self.feature_dim == 0 || self.hidden.contains(&0) {
            return bad("network widths must be ≥ 1".into());
        }
        if !(self.init_scale >= 0.0 && self.init_scale.is_finite()) {
            return bad("init_scale must be finite and nonnegative".into());
        }
        if !(0.0..1.0).contains(&self.rms_alpha) || !(self.rms_eps > 0.0) {
            return bad("rms_alpha must lie in [0, 1) and rms_eps be positive".into());
        }
        for (name, w) in [
            ("mean_weight", self.mean_weight),
            ("cov_weight", self.cov_weight),
            ("lambda_d", self.lambda_d),
            ("lambda_g", self.lambda_g),
            ("weight_decay", self.weight_decay),
        ] {
            if !(w >= 0.0 && w.is_finite()) {
                return bad(format!("{name} must be finite and nonnegative"));
            }
        }
        if self.objective.has_cov_directions() && (self.k == 0 || self.k > self.feature_dim) {
            return bad(format!("k must lie in 1..={} (feature_dim), got {}", self.feature_dim, self.k));
        }
        if self.objective == Objective::Combined && self.mean_weight == 0.0 && self.cov_weight == 0.0 {
            return bad("combined objective needs a nonzero weight".into());
        }
        if self.squared_dual && self.q != Norm::L2 {
            return bad("squared_dual requires q = 2".into());
        }
        if self.checkpoint_every > 0 && self.checkpoint_path.is_none() {
            return bad("checkpoint_every needs checkpoint_path".into());
        }
        let spec = self.mixture_spec()?;
        if (self.uses_conditional_generator() || self.objective == Objective::Conditional) && spec.classes().is_none() {
            return bad(format!("dataset `{}` has no labels", self.dataset));
        }
        Ok(())
    }
}

fn parse_value(value: &str) -> Result<toml::Value> {
    let wrapped = format!("x = {value}");
    match toml::from_str::<toml::Table>(&wrapped) {
        Ok(mut t) => Ok(t.remove("x").expect("key present")),
        Err(_) if !value.is_empty() => Ok(toml::Value::String(value.to_string())),
        Err(e) => Err(Error::Config(e.to_string())),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate_and_round_trip() {
        let cfg = TrainConfig::default();
        cfg.validate().unwrap();
        let back = TrainConfig::from_toml(&cfg.to_toml()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn overrides() {
        let mut cfg = TrainConfig::default();
        cfg.set("objective=cov").unwrap();
        cfg.set("lr = 1e-3").unwrap();
        cfg.set("p=inf").unwrap();
        cfg.set("dataset=ring8").unwrap();
        assert_eq!(cfg.objective, Objective::Cov);
        assert_eq!(cfg.lr, 1e-3);
        assert_eq!(cfg.p, Norm::Inf);
        assert_eq!(cfg.dataset, "ring8");
        assert!(cfg.set("nonsense=1").is_err());
        assert!(cfg.set("lr").is_err());
        assert!(cfg.set("batch=-1").is_err());
    }

    #[test]
    fn invalid_values_rejected() {
        for text in [
            "lr = 0.0",
            "critic_iters = 0",
            "clip = -1.0",
            "real_multiplier = 0",
            "objective = \"cov\"\nk = 100",
            "objective = \"conditional\"",
            "unknown_key = 3",
        ] {
            assert!(TrainConfig::from_toml(text).is_err(), "{text}");
        }
        TrainConfig::from_toml("objective = \"conditional\"\ndataset = \"labeled3\"").unwrap();
    }
}
