use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::semantic::SEMANTIC_HIDDEN;

/// Which loss drives the embedding.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Objective {
    /// Classification plus visual and semantic alignment, weighted by the lambdas.
    #[default]
    Full,
    /// Classification only; the visual bank is still maintained for diagnostics.
    Baseline,
    Triplet,
    Margin,
}

impl fmt::Display for Objective {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Objective::Full => "full",
            Objective::Baseline => "baseline",
            Objective::Triplet => "triplet",
            Objective::Margin => "margin",
        })
    }
}

impl FromStr for Objective {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(Objective::Full),
            "baseline" => Ok(Objective::Baseline),
            "triplet" => Ok(Objective::Triplet),
            "margin" => Ok(Objective::Margin),
            other => Err(Error::Config(format!(
                "unknown objective '{other}' (expected full, baseline, triplet or margin)"
            ))),
        }
    }
}

/// Shapes of every trainable tensor.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    /// Frame-feature width D.
    pub input_dim: usize,
    /// Embedding width C.
    pub embed_dim: usize,
    /// Hidden widths of the embedding head between D and C.
    pub head_hidden: Vec<usize>,
    /// Attention width C′.
    pub ga_dim: usize,
    pub semantic_hidden: Vec<usize>,
    /// Semantic-bank width W; `None` builds no semantic MLP.
    pub semantic_dim: Option<usize>,
    pub num_classes: usize,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let widths = [self.input_dim, self.embed_dim, self.ga_dim, self.num_classes];
        if widths.contains(&0)
            || self.head_hidden.contains(&0)
            || self.semantic_hidden.contains(&0)
            || self.semantic_dim == Some(0)
        {
            return Err(Error::Config(format!("model widths must be positive: {self:?}")));
        }
        Ok(())
    }
}

/// Optimization settings. The default is the desk-scale preset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub objective: Objective,
    pub lambda_v: f64,
    pub lambda_s: f64,
    /// Bank moving-average coefficient.
    pub alpha: f64,
    /// Softmax temperature of both alignment probabilities.
    pub tau: f64,
    pub batch_size: usize,
    pub iterations: u64,
    pub lr: f64,
    /// Learning rate after `lr_drop_at` iterations.
    pub lr_final: f64,
    /// Defaults to half of `iterations`.
    pub lr_drop_at: Option<u64>,
    pub weight_decay: f64,
    pub seed: u64,
    pub embed_dim: usize,
    pub head_hidden: Vec<usize>,
    /// Defaults to half of `embed_dim`.
    pub ga_dim: Option<usize>,
    pub semantic_hidden: Vec<usize>,
    pub normalize_semantic: bool,
    /// Evenly subsample longer clips down to this many frames.
    pub max_frames: Option<usize>,
    pub triplet_margin: f64,
    pub margin: f64,
    pub margin_beta: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self::desk()
    }
}

impl TrainConfig {
    /// Small heads and a 2k-iteration schedule for synthetic benchmarks.
    pub fn desk() -> Self {
        Self {
            objective: Objective::Full,
            lambda_v: 1.0,
            lambda_s: 1.0,
            alpha: 0.9,
            tau: 0.1,
            batch_size: 16,
            iterations: 2000,
            lr: 1e-3,
            lr_final: 1e-4,
            lr_drop_at: None,
            weight_decay: 1e-5,
            seed: 0,
            embed_dim: 64,
            head_hidden: vec![64],
            ga_dim: None,
            // The full-scale widths scaled by C/512.
            semantic_hidden: SEMANTIC_HIDDEN.iter().map(|w| w / 8).collect(),
            normalize_semantic: true,
            max_frames: None,
            triplet_margin: 0.2,
            margin: 0.2,
            margin_beta: 1.2,
        }
    }

    /// Full-scale settings: C = 512, 16k iterations with the drop at 8k.
    pub fn large() -> Self {
        Self {
            iterations: 16_000,
            lr: 1e-4,
            lr_final: 1e-5,
            lr_drop_at: Some(8_000),
            embed_dim: 512,
            head_hidden: vec![512],
            semantic_hidden: SEMANTIC_HIDDEN.to_vec(),
            ..Self::desk()
        }
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "desk" => Ok(Self::desk()),
            "large" => Ok(Self::large()),
            other => Err(Error::Config(format!(
                "unknown preset '{other}' (expected desk or large)"
            ))),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.lambda_v >= 0.0 && self.lambda_s >= 0.0) {
            return bad(format!(
                "lambdas must be non-negative, got {} and {}",
                self.lambda_v, self.lambda_s
            ));
        }
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return bad(format!("alpha must be in (0, 1], got {}", self.alpha));
        }
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return bad(format!("tau must be positive, got {}", self.tau));
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive".into());
        }
        if !(self.lr > 0.0 && self.lr_final > 0.0 && self.weight_decay >= 0.0) {
            return bad("learning rates must be positive and weight decay non-negative".into());
        }
        if self.embed_dim == 0 || self.ga_dim == Some(0) || self.max_frames == Some(0) {
            return bad("widths and frame caps must be positive".into());
        }
        if !(self.triplet_margin >= 0.0 && self.margin >= 0.0) {
            return bad("margins must be non-negative".into());
        }
        Ok(())
    }

    pub fn lr_at(&self, iteration: u64) -> f64 {
        let drop = self.lr_drop_at.unwrap_or(self.iterations / 2);
        if iteration < drop {
            self.lr
        } else {
            self.lr_final
        }
    }

    /// Lambdas actually in effect for the objective.
    pub fn effective_lambdas(&self) -> (f64, f64) {
        match self.objective {
            Objective::Full => (self.lambda_v, self.lambda_s),
            _ => (0.0, 0.0),
        }
    }

    pub fn model_config(&self, input_dim: usize, num_classes: usize, semantic_dim: Option<usize>) -> ModelConfig {
        ModelConfig {
            input_dim,
            embed_dim: self.embed_dim,
            head_hidden: self.head_hidden.clone(),
            ga_dim: self.ga_dim.unwrap_or((self.embed_dim / 2).max(1)),
            semantic_hidden: self.semantic_hidden.clone(),
            semantic_dim,
            num_classes,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets() {
        let d = TrainConfig::desk();
        assert_eq!(d.semantic_hidden, vec![64, 80, 96, 112]);
        assert_eq!(d.lr_at(999), d.lr);
        assert_eq!(d.lr_at(1000), d.lr_final);
        let p = TrainConfig::large();
        assert_eq!(p.semantic_hidden, vec![512, 640, 768, 896]);
        assert_eq!(p.lr_at(7_999), 1e-4);
        assert_eq!(p.lr_at(8_000), 1e-5);
        assert_eq!(p.model_config(512, 200, Some(1024)).ga_dim, 256);
    }

    #[test]
    fn objective_parses_and_round_trips() {
        for o in [
            Objective::Full,
            Objective::Baseline,
            Objective::Triplet,
            Objective::Margin,
        ] {
            assert_eq!(o.to_string().parse::<Objective>().unwrap(), o);
        }
        assert!("softmax".parse::<Objective>().is_err());
    }

    #[test]
    fn bad_values_are_rejected() {
        for cfg in [
            TrainConfig {
                tau: 0.0,
                ..TrainConfig::desk()
            },
            TrainConfig {
                alpha: 1.5,
                ..TrainConfig::desk()
            },
            TrainConfig {
                lambda_v: -1.0,
                ..TrainConfig::desk()
            },
            TrainConfig {
                batch_size: 0,
                ..TrainConfig::desk()
            },
        ] {
            assert!(cfg.validate().is_err());
        }
    }

    #[test]
    fn partial_config_fills_defaults() {
        let cfg: TrainConfig = serde_json::from_str("{\"tau\": 1.0, \"objective\": \"margin\"}").unwrap();
        assert_eq!(cfg.tau, 1.0);
        assert_eq!(cfg.objective, Objective::Margin);
        assert_eq!(cfg.batch_size, 16);
    }
}
