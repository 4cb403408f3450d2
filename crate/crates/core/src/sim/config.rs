use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::crossview::{CrossviewParams, FusionMethod};
use crate::matcher::Selector;
use crate::prompter::{PromptError, PromptMode, PromptStyle, TintColor};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConfigError {
    #[error("{field} = {value} is out of range: {reason}")]
    OutOfRange {
        field: &'static str,
        value: String,
        reason: &'static str,
    },
    #[error("cannot place {objects} objects on a {cols}x{rows} grid")]
    Placement { objects: usize, cols: u32, rows: u32 },
    #[error("invalid scene: {0}")]
    Invalid(String),
}

/// Knobs for one synthetic episode. Every field has a default, so a config
/// file only lists what it changes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SceneConfig {
    pub views: usize,
    pub n_distractors: usize,
    /// Cosine between the target identity and each distractor identity.
    pub rho: f64,
    pub obs_noise: f64,
    pub ref_noise: f64,
    pub k: usize,
    pub p_miss: f64,
    pub p_drift: f64,
    pub p_ctrl: f64,
    pub occlusion: f64,
    pub steps: usize,
    pub seed: u64,
    pub dim: usize,
    pub image_width: u32,
    pub image_height: u32,
    pub object_size: u32,
    /// Maximum per-step displacement along each axis, in pixels.
    pub speed: u32,
    /// Detector boxes are the object's extent grown by this many pixels.
    pub box_pad: u32,
    /// Number of references replaced by outliers pointing along the first
    /// distractor's distinguishing direction (its component orthogonal to
    /// the target).
    pub corrupt_refs: usize,
    /// Views in which the first target is always hidden.
    pub occluded_views: Vec<usize>,
    pub category: String,
    pub instruction: String,
    pub selector: Selector,
    pub fusion: FusionMethod,
    pub prompt: PromptMode,
    pub alpha: f64,
    pub tint: TintColor,
    pub crossview: CrossviewParams,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            views: 3,
            n_distractors: 2,
            rho: 0.8,
            obs_noise: 0.05,
            ref_noise: 0.05,
            k: 5,
            p_miss: 0.0,
            p_drift: 0.0,
            p_ctrl: 0.0,
            occlusion: 0.0,
            steps: 10,
            seed: 0,
            dim: 32,
            image_width: 128,
            image_height: 96,
            object_size: 10,
            speed: 1,
            box_pad: 0,
            corrupt_refs: 0,
            occluded_views: Vec::new(),
            category: "cup".into(),
            instruction: "pick up my cup".into(),
            selector: Selector::Vote,
            fusion: FusionMethod::Independent,
            prompt: PromptMode::Mask,
            alpha: 0.5,
            tint: TintColor::Red,
            crossview: CrossviewParams::default(),
        }
    }
}

fn check(ok: bool, field: &'static str, value: impl ToString, reason: &'static str) -> Result<(), ConfigError> {
    if ok {
        Ok(())
    } else {
        Err(ConfigError::OutOfRange {
            field,
            value: value.to_string(),
            reason,
        })
    }
}

fn probability(field: &'static str, p: f64) -> Result<(), ConfigError> {
    check((0.0..=1.0).contains(&p), field, p, "must be a probability in [0, 1]")
}

impl SceneConfig {
    /// A zero-noise configuration: every stochastic failure source off.
    pub fn noiseless() -> Self {
        Self {
            obs_noise: 0.0,
            ref_noise: 0.0,
            ..Self::default()
        }
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        Self {
            seed,
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        check(self.views >= 1, "views", self.views, "need at least one view")?;
        check((0.0..1.0).contains(&self.rho), "rho", self.rho, "must lie in [0, 1)")?;
        check(
            self.obs_noise.is_finite() && self.obs_noise >= 0.0,
            "obs_noise",
            self.obs_noise,
            "must be finite and non-negative",
        )?;
        check(
            self.ref_noise.is_finite() && self.ref_noise >= 0.0,
            "ref_noise",
            self.ref_noise,
            "must be finite and non-negative",
        )?;
        check(self.k >= 1, "k", self.k, "need at least one reference")?;
        probability("p_miss", self.p_miss)?;
        probability("p_drift", self.p_drift)?;
        probability("p_ctrl", self.p_ctrl)?;
        probability("occlusion", self.occlusion)?;
        probability("alpha", self.alpha)?;
        check(self.steps >= 1, "steps", self.steps, "need at least one step")?;
        check(self.dim >= 2, "dim", self.dim, "need at least two dimensions")?;
        check(self.object_size >= 1, "object_size", self.object_size, "must be positive")?;
        check(
            self.corrupt_refs <= self.k,
            "corrupt_refs",
            self.corrupt_refs,
            "cannot exceed k",
        )?;
        check(
            self.occluded_views.iter().all(|&v| v < self.views),
            "occluded_views",
            format!("{:?}", self.occluded_views),
            "view index out of range",
        )?;
        let mut forced = self.occluded_views.clone();
        forced.sort_unstable();
        forced.dedup();
        check(
            forced.len() < self.views,
            "occluded_views",
            format!("{:?}", self.occluded_views),
            "the target must stay visible in at least one view",
        )?;
        let p = &self.crossview;
        check(p.lambda >= 0.0, "crossview.lambda", p.lambda, "must be non-negative")?;
        check(p.beta >= 0.0, "crossview.beta", p.beta, "must be non-negative")?;
        check(
            p.threshold > -1.0 && p.threshold < 1.0,
            "crossview.threshold",
            p.threshold,
            "must lie in (-1, 1)",
        )?;
        Ok(())
    }

    pub fn style(&self) -> Result<PromptStyle, PromptError> {
        PromptStyle::new(self.prompt.geometry(), self.tint, self.alpha)
    }

    /// Pixels of free travel on each side of an object inside its cell.
    pub fn motion_margin(&self) -> u32 {
        self.speed * (self.steps as u32).saturating_sub(1)
    }

    /// Side of one placement cell: object, travel on both sides, and a
    /// one-pixel gap on each edge.
    pub fn cell_size(&self) -> u32 {
        self.object_size + 2 * self.motion_margin() + 2
    }

    pub fn grid(&self) -> (u32, u32) {
        let c = self.cell_size();
        (self.image_width / c, self.image_height / c)
    }
}
