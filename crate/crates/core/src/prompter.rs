//! Visual prompts and instruction rewriting.
//!
//! A prompt tints the grounded region of each view and rewrites the
//! personalized span "my X" into "the <color> X" so the language matches the
//! highlight. Views without a mask pass through bit-identical, as does the
//! proprioceptive payload.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grounder::{parse_category, CategoryQuery, GroundingOutcome};
use crate::scene::{BoundingBox, Mask, Observation, RasterImage, Rgb, SceneError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PromptError {
    #[error("mask is {mask_w}x{mask_h} but image is {image_w}x{image_h}")]
    DimensionMismatch {
        mask_w: u32,
        mask_h: u32,
        image_w: u32,
        image_h: u32,
    },
    #[error("box lies outside the {width}x{height} image")]
    BoxOutOfBounds { width: u32, height: u32 },
    #[error("opacity {0} outside [0, 1]")]
    InvalidAlpha(f64),
    #[error("trigger span does not match \"my {0}\" in the instruction")]
    SpanMismatch(String),
    #[error("grounding covers {got} views, observation has {expected}")]
    ViewCountMismatch { got: usize, expected: usize },
    #[error(transparent)]
    Scene(#[from] SceneError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Geometry {
    #[default]
    Mask,
    Box,
}

/// Tint colors with a fixed color word.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TintColor {
    #[default]
    Red,
    Green,
    Blue,
}

impl TintColor {
    pub fn rgb(self) -> Rgb {
        match self {
            TintColor::Red => [255, 0, 0],
            TintColor::Green => [0, 255, 0],
            TintColor::Blue => [0, 0, 255],
        }
    }

    pub fn word(self) -> &'static str {
        match self {
            TintColor::Red => "red",
            TintColor::Green => "green",
            TintColor::Blue => "blue",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PromptStyle {
    geometry: Geometry,
    color: TintColor,
    alpha: f64,
}

impl Default for PromptStyle {
    fn default() -> Self {
        Self {
            geometry: Geometry::Mask,
            color: TintColor::Red,
            alpha: 0.5,
        }
    }
}

impl PromptStyle {
    pub fn new(geometry: Geometry, color: TintColor, alpha: f64) -> Result<Self, PromptError> {
        if !(0.0..=1.0).contains(&alpha) {
            return Err(PromptError::InvalidAlpha(alpha));
        }
        Ok(Self {
            geometry,
            color,
            alpha,
        })
    }

    pub fn geometry(&self) -> Geometry {
        self.geometry
    }

    pub fn color(&self) -> TintColor {
        self.color
    }

    pub fn tint_rgb(&self) -> Rgb {
        self.color.rgb()
    }

    pub fn color_word(&self) -> &'static str {
        self.color.word()
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }
}

/// Which halves of the prompt are applied.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PromptMode {
    /// Mask tint plus rewrite.
    #[default]
    Mask,
    /// Filled-box tint plus rewrite.
    Box,
    /// Rewrite with no visual highlight.
    RewriteOnly,
    /// Mask tint with the original instruction.
    MaskOnly,
}

impl PromptMode {
    pub fn overlay(self) -> bool {
        !matches!(self, PromptMode::RewriteOnly)
    }

    pub fn rewrite(self) -> bool {
        !matches!(self, PromptMode::MaskOnly)
    }

    pub fn geometry(self) -> Geometry {
        match self {
            PromptMode::Box => Geometry::Box,
            _ => Geometry::Mask,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            PromptMode::Mask => "mask",
            PromptMode::Box => "box",
            PromptMode::RewriteOnly => "rewrite-only",
            PromptMode::MaskOnly => "mask-only",
        }
    }
}

/// `round_half_up((1 - alpha) * src + alpha * tint)`, clamped to 8 bits.
pub fn blend_channel(src: u8, tint: u8, alpha: f64) -> u8 {
    let v = (1.0 - alpha) * f64::from(src) + alpha * f64::from(tint);
    (v + 0.5).floor().clamp(0.0, 255.0) as u8
}

fn blend_pixel(src: Rgb, tint: Rgb, alpha: f64) -> Rgb {
    [
        blend_channel(src[0], tint[0], alpha),
        blend_channel(src[1], tint[1], alpha),
        blend_channel(src[2], tint[2], alpha),
    ]
}

/// Tints every masked pixel; all other pixels are copied unchanged.
pub fn blend_overlay(image: &RasterImage, mask: &Mask, style: &PromptStyle) -> Result<RasterImage, PromptError> {
    if mask.width() != image.width() || mask.height() != image.height() {
        return Err(PromptError::DimensionMismatch {
            mask_w: mask.width(),
            mask_h: mask.height(),
            image_w: image.width(),
            image_h: image.height(),
        });
    }
    let mut out = image.clone();
    let tint = style.tint_rgb();
    for (x, y) in mask.iter_set() {
        out.set(x, y, blend_pixel(image.get(x, y), tint, style.alpha));
    }
    Ok(out)
}

/// Tints every pixel inside the box.
pub fn box_overlay(image: &RasterImage, bbox: &BoundingBox, style: &PromptStyle) -> Result<RasterImage, PromptError> {
    if !bbox.fits(image.width(), image.height()) {
        return Err(PromptError::BoxOutOfBounds {
            width: image.width(),
            height: image.height(),
        });
    }
    let mut out = image.clone();
    let tint = style.tint_rgb();
    for y in bbox.y_min()..=bbox.y_max() {
        for x in bbox.x_min()..=bbox.x_max() {
            out.set(x, y, blend_pixel(image.get(x, y), tint, style.alpha));
        }
    }
    Ok(out)
}

/// Replaces the trigger span with "the <color> <category>", leaving every
/// other byte untouched.
pub fn rewrite_instruction(
    instruction: &str,
    query: &CategoryQuery,
    style: &PromptStyle,
) -> Result<String, PromptError> {
    let span = query.trigger_span.clone();
    let matches = instruction
        .get(span.clone())
        .and_then(|s| {
            let (head, rest) = s.split_at_checked(2)?;
            (head.eq_ignore_ascii_case("my") && rest.trim_start() == query.category
                && rest.starts_with(char::is_whitespace))
            .then_some(())
        })
        .is_some();
    if !matches {
        return Err(PromptError::SpanMismatch(query.category.clone()));
    }
    Ok(format!(
        "{}the {} {}{}",
        &instruction[..span.start],
        style.color_word(),
        query.category,
        &instruction[span.end..]
    ))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rewrite {
    pub text: String,
    /// False when the instruction had no trigger and passed through.
    pub rewritten: bool,
}

/// Rewrites when a trigger is present, otherwise returns the input with
/// `rewritten = false`.
pub fn rewrite_or_passthrough(instruction: &str, style: &PromptStyle) -> Rewrite {
    match parse_category(instruction) {
        Ok(q) => match rewrite_instruction(instruction, &q, style) {
            Ok(text) => Rewrite { text, rewritten: true },
            Err(_) => Rewrite {
                text: instruction.to_string(),
                rewritten: false,
            },
        },
        Err(_) => Rewrite {
            text: instruction.to_string(),
            rewritten: false,
        },
    }
}

/// Full prompt: geometry from `style`, overlay and rewrite both on.
pub fn compose_prompt(
    obs: &Observation,
    grounding: &GroundingOutcome,
    style: &PromptStyle,
) -> Result<Observation, PromptError> {
    let mode = match style.geometry() {
        Geometry::Mask => PromptMode::Mask,
        Geometry::Box => PromptMode::Box,
    };
    compose_prompt_with(obs, grounding, style, mode)
}

/// Prompt composition for any [`PromptMode`]. The geometry comes from
/// `mode`; color and opacity from `style`.
///
/// The instruction is rewritten only if at least one view is grounded.
pub fn compose_prompt_with(
    obs: &Observation,
    grounding: &GroundingOutcome,
    style: &PromptStyle,
    mode: PromptMode,
) -> Result<Observation, PromptError> {
    if grounding.per_view.len() != obs.views().len() {
        return Err(PromptError::ViewCountMismatch {
            got: grounding.per_view.len(),
            expected: obs.views().len(),
        });
    }
    let mut any_grounded = false;
    let mut views = Vec::with_capacity(obs.views().len());
    for (image, g) in obs.views().iter().zip(&grounding.per_view) {
        let out = match (&g.mask, g.fallback) {
            (Some(mask), false) => {
                any_grounded = true;
                if !mode.overlay() {
                    image.clone()
                } else {
                    match mode.geometry() {
                        Geometry::Mask => blend_overlay(image, mask, style)?,
                        Geometry::Box => {
                            let bbox = g
                                .winner
                                .as_ref()
                                .map(|w| *w.bbox())
                                .or_else(|| mask.bounding_box())
                                .expect("non-empty mask");
                            box_overlay(image, &bbox, style)?
                        }
                    }
                }
            }
            _ => image.clone(),
        };
        views.push(out);
    }
    let instruction = if any_grounded && mode.rewrite() {
        rewrite_or_passthrough(obs.instruction(), style).text
    } else {
        obs.instruction().to_string()
    };
    Ok(Observation::new(views, obs.proprio().to_vec(), instruction)?)
}
