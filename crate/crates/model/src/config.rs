use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Architecture hyperparameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub height: u32,
    pub width: u32,
    /// Output stride `S` of the pixel encoder (patch size).
    pub stride: u32,
    pub c_f: usize,
    pub c_e: usize,
    pub c_q: usize,
    pub n_queries: usize,
    pub seg_layers: usize,
    /// Caption decoder layers `N_C^L`.
    pub cap_layers: usize,
    pub heads: usize,
    /// FFN hidden width as a multiple of the block width.
    pub ffn_mult: usize,
    /// Maximum caption length `L` in tokens, excluding START and END.
    pub max_caption_len: usize,
    /// Sinusoidal encodings on the feature grid, caption positions and queries.
    pub pos_enc: bool,
    /// Per-pixel two-layer MLP on the input colors added to `E`.
    pub color_skip: bool,
    pub layer_norm_eps: f64,
    pub dice_eps: f64,
    /// Bound on mask logits: `E` is normalized per pixel and `Q_mask` is scaled so
    /// that `|Q_mask . E| <= mask_scale`.
    pub mask_scale: f64,
    /// Mask probability at a zero dot product; its logit is added to every mask logit.
    pub mask_prior: f64,
    /// Cross-entropy weight of no-object slots.
    pub no_object_weight: f64,
    pub cls_threshold: f64,
    pub mask_threshold: f64,
    pub area_threshold: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            height: 64,
            width: 64,
            stride: 8,
            c_f: 32,
            c_e: 32,
            c_q: 32,
            n_queries: 10,
            seg_layers: 2,
            cap_layers: 2,
            heads: 4,
            ffn_mult: 2,
            max_caption_len: ppk_core::panoptic::DEFAULT_MAX_CAPTION_LEN,
            pos_enc: true,
            color_skip: true,
            layer_norm_eps: 1e-10,
            dice_eps: 1.0,
            mask_scale: 10.0,
            mask_prior: 0.01,
            no_object_weight: 1.0,
            cls_threshold: 0.5,
            mask_threshold: 0.5,
            area_threshold: 4,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.stride == 0 || self.height % self.stride != 0 || self.width % self.stride != 0 {
            return bad(format!("image {}x{} is not divisible by stride {}", self.width, self.height, self.stride));
        }
        for (name, d) in [("c_f", self.c_f), ("c_e", self.c_e), ("c_q", self.c_q)] {
            if d == 0 || self.heads == 0 || d % self.heads != 0 {
                return bad(format!("{name} = {d} must be a positive multiple of heads = {}", self.heads));
            }
        }
        if self.n_queries == 0 || self.seg_layers == 0 || self.cap_layers == 0 || self.ffn_mult == 0 {
            return bad("query count, layer counts and ffn_mult must be positive".into());
        }
        if self.max_caption_len == 0 {
            return bad("max_caption_len must be positive".into());
        }
        if !(self.layer_norm_eps > 0.0 && self.dice_eps >= 0.0 && self.no_object_weight >= 0.0) {
            return bad("eps values and the no-object weight must be non-negative".into());
        }
        if !(self.mask_scale > 0.0 && self.mask_scale.is_finite()) {
            return bad("mask_scale must be positive".into());
        }
        if !(self.mask_prior > 0.0 && self.mask_prior < 1.0) {
            return bad("mask_prior must lie in (0, 1)".into());
        }
        if !(0.0..=1.0).contains(&self.cls_threshold) || !(0.0..=1.0).contains(&self.mask_threshold) {
            return bad("thresholds must lie in [0, 1]".into());
        }
        Ok(())
    }

    pub fn grid(&self) -> (usize, usize) {
        ((self.height / self.stride) as usize, (self.width / self.stride) as usize)
    }

    pub fn pixels(&self) -> usize {
        self.height as usize * self.width as usize
    }
}

/// Optimization and bookkeeping.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lambda: f64,
    pub lr: f64,
    /// Steps at which the learning rate is multiplied by `lr_gamma`.
    pub lr_milestones: Vec<u64>,
    pub lr_gamma: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    /// Rescale the gradient so that its global Euclidean norm is at most this.
    pub grad_clip: Option<f64>,
    pub epochs: usize,
    pub seed: u64,
    /// Reference captions used per image, cycled one per step; 0 uses all.
    pub captions_used: usize,
    /// Compute train PQ every this many epochs (and always on the last).
    pub eval_every: usize,
    pub checkpoint_every: usize,
    pub shuffle: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lambda: 1.0,
            lr: 1e-3,
            lr_milestones: Vec::new(),
            lr_gamma: 0.1,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            grad_clip: None,
            epochs: 20,
            seed: 0,
            captions_used: 0,
            eval_every: 1,
            checkpoint_every: 1,
            shuffle: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::Config(format!("lambda must be a finite non-negative number, got {}", self.lambda)));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("learning rate must be positive, got {}", self.lr)));
        }
        if self.grad_clip.is_some_and(|c| !(c > 0.0 && c.is_finite())) {
            return Err(Error::Config("grad_clip must be positive".into()));
        }
        if self.eval_every == 0 || self.checkpoint_every == 0 {
            return Err(Error::Config("eval_every and checkpoint_every must be positive".into()));
        }
        Ok(())
    }

    pub fn lr_at(&self, step: u64) -> f64 {
        let passed = self.lr_milestones.iter().filter(|&&m| step >= m).count();
        self.lr * self.lr_gamma.powi(passed as i32)
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub model: ModelConfig,
    pub train: TrainConfig,
}

impl Config {
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.train.validate()
    }

    /// Desk-scale defaults: 64x64, S = 8, 32 channels, 10 queries.
    pub fn toy() -> Self {
        Config::default()
    }

    /// Single-image memorization run.
    pub fn overfit() -> Self {
        Config {
            model: ModelConfig::default(),
            train: TrainConfig { lr: 3e-3, epochs: 500, captions_used: 1, eval_every: 50, checkpoint_every: 100, ..Default::default() },
        }
    }

    /// Full-scale dimensions (800x800 inputs, 256 channels, 200 queries) with the
    /// multi-step decayed 1e-4 schedule. Not trainable at desk scale.
    pub fn full_scale() -> Self {
        Config {
            model: ModelConfig {
                height: 800,
                width: 800,
                stride: 32,
                c_f: 256,
                c_e: 256,
                c_q: 256,
                n_queries: 200,
                seg_layers: 6,
                cap_layers: 2,
                heads: 8,
                ..Default::default()
            },
            train: TrainConfig { lr: 1e-4, lr_milestones: vec![60_000, 80_000], epochs: 50, ..Default::default() },
        }
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "toy" => Ok(Config::toy()),
            "overfit" => Ok(Config::overfit()),
            "full" => Ok(Config::full_scale()),
            _ => Err(Error::Config(format!("unknown preset {name:?} (expected toy, overfit or full)"))),
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let c: Config = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        c.validate()?;
        Ok(c)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_validate() {
        for name in ["toy", "overfit", "full"] {
            Config::preset(name).unwrap().validate().unwrap();
        }
        assert!(Config::preset("huge").is_err());
    }

    #[test]
    fn json_rejects_unknown_and_bad_values() {
        let c = Config::from_json(r#"{"train": {"lambda": 0.5}}"#).unwrap();
        assert_eq!(c.train.lambda, 0.5);
        assert_eq!(c.model, ModelConfig::default());
        assert!(Config::from_json(r#"{"train": {"lamda": 0.5}}"#).is_err());
        assert!(Config::from_json(r#"{"train": {"lambda": -1}}"#).is_err());
        assert!(Config::from_json(r#"{"model": {"stride": 7}}"#).is_err());
    }

    #[test]
    fn step_decay() {
        let t = TrainConfig { lr: 1e-4, lr_milestones: vec![10, 20], lr_gamma: 0.1, ..Default::default() };
        assert_eq!(t.lr_at(0), 1e-4);
        assert!((t.lr_at(10) - 1e-5).abs() < 1e-20);
        assert!((t.lr_at(25) - 1e-6).abs() < 1e-20);
    }
}
