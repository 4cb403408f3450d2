//! Core value types shared by the grounding, prompting and simulation code.
//!
//! Everything here is an immutable value object once constructed. Embeddings
//! are always stored with unit l2 norm, so cosine similarity is a dot product.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SceneError {
    #[error("invalid embedding: {0}")]
    InvalidEmbedding(&'static str),
    #[error("invalid bounding box ({x_min},{y_min})-({x_max},{y_max})")]
    InvalidBox {
        x_min: u32,
        y_min: u32,
        x_max: u32,
        y_max: u32,
    },
    #[error("invalid mask: {0}")]
    InvalidMask(String),
    #[error("invalid proposal: {0}")]
    InvalidProposal(String),
    #[error("invalid reference set: {0}")]
    InvalidReferences(String),
    #[error("invalid image: {0}")]
    InvalidImage(String),
    #[error("observation needs at least one view")]
    NoViews,
}

/// A unit-norm feature vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct Embedding {
    values: Vec<f64>,
}

impl Embedding {
    /// Scales `values` to unit l2 norm.
    pub fn normalize(values: &[f64]) -> Result<Self, SceneError> {
        if values.is_empty() {
            return Err(SceneError::InvalidEmbedding("empty vector"));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(SceneError::InvalidEmbedding("non-finite entry"));
        }
        // Scale by the max magnitude first so huge or tiny inputs do not
        // overflow or underflow the squared sum.
        let max = values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if max == 0.0 {
            return Err(SceneError::InvalidEmbedding("zero vector"));
        }
        let scaled: Vec<f64> = values.iter().map(|v| v / max).collect();
        let norm = scaled.iter().map(|v| v * v).sum::<f64>().sqrt();
        Ok(Self {
            values: scaled.into_iter().map(|v| v / norm).collect(),
        })
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    pub fn dot(&self, other: &Embedding) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| a * b)
            .sum()
    }
}

impl TryFrom<Vec<f64>> for Embedding {
    type Error = SceneError;

    fn try_from(values: Vec<f64>) -> Result<Self, Self::Error> {
        Embedding::normalize(&values)
    }
}

impl From<Embedding> for Vec<f64> {
    fn from(e: Embedding) -> Self {
        e.values
    }
}

/// Inclusive pixel rectangle.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "BoxRepr", into = "BoxRepr")]
pub struct BoundingBox {
    x_min: u32,
    y_min: u32,
    x_max: u32,
    y_max: u32,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct BoxRepr {
    x_min: u32,
    y_min: u32,
    x_max: u32,
    y_max: u32,
}

impl TryFrom<BoxRepr> for BoundingBox {
    type Error = SceneError;
    fn try_from(r: BoxRepr) -> Result<Self, Self::Error> {
        BoundingBox::new(r.x_min, r.y_min, r.x_max, r.y_max)
    }
}

impl From<BoundingBox> for BoxRepr {
    fn from(b: BoundingBox) -> Self {
        BoxRepr {
            x_min: b.x_min,
            y_min: b.y_min,
            x_max: b.x_max,
            y_max: b.y_max,
        }
    }
}

impl BoundingBox {
    pub fn new(x_min: u32, y_min: u32, x_max: u32, y_max: u32) -> Result<Self, SceneError> {
        if x_min > x_max || y_min > y_max {
            return Err(SceneError::InvalidBox {
                x_min,
                y_min,
                x_max,
                y_max,
            });
        }
        Ok(Self {
            x_min,
            y_min,
            x_max,
            y_max,
        })
    }

    pub fn x_min(&self) -> u32 {
        self.x_min
    }
    pub fn y_min(&self) -> u32 {
        self.y_min
    }
    pub fn x_max(&self) -> u32 {
        self.x_max
    }
    pub fn y_max(&self) -> u32 {
        self.y_max
    }

    pub fn width(&self) -> u32 {
        self.x_max - self.x_min + 1
    }

    pub fn height(&self) -> u32 {
        self.y_max - self.y_min + 1
    }

    pub fn area(&self) -> u64 {
        u64::from(self.width()) * u64::from(self.height())
    }

    pub fn center(&self) -> (f64, f64) {
        (
            (f64::from(self.x_min) + f64::from(self.x_max)) / 2.0,
            (f64::from(self.y_min) + f64::from(self.y_max)) / 2.0,
        )
    }

    pub fn contains(&self, x: u32, y: u32) -> bool {
        (self.x_min..=self.x_max).contains(&x) && (self.y_min..=self.y_max).contains(&y)
    }

    pub fn contains_point(&self, x: f64, y: f64) -> bool {
        x >= f64::from(self.x_min)
            && x <= f64::from(self.x_max)
            && y >= f64::from(self.y_min)
            && y <= f64::from(self.y_max)
    }

    pub fn fits(&self, width: u32, height: u32) -> bool {
        self.x_max < width && self.y_max < height
    }

    /// Grows the box by `pad` pixels on every side, clipped to the image.
    pub fn expand(&self, pad: u32, width: u32, height: u32) -> BoundingBox {
        BoundingBox {
            x_min: self.x_min.saturating_sub(pad),
            y_min: self.y_min.saturating_sub(pad),
            x_max: (self.x_max + pad).min(width.saturating_sub(1)),
            y_max: (self.y_max + pad).min(height.saturating_sub(1)),
        }
    }
}

/// Dense binary occupancy grid, row-major.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "MaskRepr", into = "MaskRepr")]
pub struct Mask {
    width: u32,
    height: u32,
    bits: Vec<bool>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct MaskRepr {
    width: u32,
    height: u32,
    bits: Vec<bool>,
}

impl TryFrom<MaskRepr> for Mask {
    type Error = SceneError;
    fn try_from(r: MaskRepr) -> Result<Self, Self::Error> {
        Mask::from_bits(r.width, r.height, r.bits)
    }
}

impl From<Mask> for MaskRepr {
    fn from(m: Mask) -> Self {
        MaskRepr {
            width: m.width,
            height: m.height,
            bits: m.bits,
        }
    }
}

impl Mask {
    pub fn empty(width: u32, height: u32) -> Result<Self, SceneError> {
        if width == 0 || height == 0 {
            return Err(SceneError::InvalidMask("zero dimension".into()));
        }
        Ok(Self {
            width,
            height,
            bits: vec![false; width as usize * height as usize],
        })
    }

    pub fn from_bits(width: u32, height: u32, bits: Vec<bool>) -> Result<Self, SceneError> {
        if width == 0 || height == 0 {
            return Err(SceneError::InvalidMask("zero dimension".into()));
        }
        if bits.len() != width as usize * height as usize {
            return Err(SceneError::InvalidMask(format!(
                "expected {} bits, got {}",
                width as usize * height as usize,
                bits.len()
            )));
        }
        Ok(Self {
            width,
            height,
            bits,
        })
    }

    /// Mask covering exactly the pixels of `b`.
    pub fn from_box(width: u32, height: u32, b: &BoundingBox) -> Result<Self, SceneError> {
        if !b.fits(width, height) {
            return Err(SceneError::InvalidMask("box outside mask bounds".into()));
        }
        let mut m = Self::empty(width, height)?;
        for y in b.y_min..=b.y_max {
            for x in b.x_min..=b.x_max {
                m.set(x, y, true);
            }
        }
        Ok(m)
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    fn index(&self, x: u32, y: u32) -> usize {
        y as usize * self.width as usize + x as usize
    }

    pub fn get(&self, x: u32, y: u32) -> bool {
        x < self.width && y < self.height && self.bits[self.index(x, y)]
    }

    pub fn set(&mut self, x: u32, y: u32, value: bool) {
        let i = self.index(x, y);
        self.bits[i] = value;
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|b| **b).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.bits.iter().any(|b| *b)
    }

    /// Coordinates of every set pixel, row-major.
    pub fn iter_set(&self) -> impl Iterator<Item = (u32, u32)> + '_ {
        let w = self.width as usize;
        self.bits
            .iter()
            .enumerate()
            .filter(|(_, b)| **b)
            .map(move |(i, _)| ((i % w) as u32, (i / w) as u32))
    }

    /// Mean pixel coordinate of the set pixels.
    pub fn centroid(&self) -> Option<(f64, f64)> {
        let (mut sx, mut sy, mut n) = (0.0, 0.0, 0usize);
        for (x, y) in self.iter_set() {
            sx += f64::from(x);
            sy += f64::from(y);
            n += 1;
        }
        (n > 0).then(|| (sx / n as f64, sy / n as f64))
    }

    pub fn bounding_box(&self) -> Option<BoundingBox> {
        let mut it = self.iter_set();
        let (x0, y0) = it.next()?;
        let (mut x_min, mut y_min, mut x_max, mut y_max) = (x0, y0, x0, y0);
        for (x, y) in it {
            x_min = x_min.min(x);
            x_max = x_max.max(x);
            y_min = y_min.min(y);
            y_max = y_max.max(y);
        }
        Some(BoundingBox {
            x_min,
            y_min,
            x_max,
            y_max,
        })
    }

    /// Number of pixels set in both masks. Masks of different size share nothing.
    pub fn intersection_count(&self, other: &Mask) -> usize {
        if self.width != other.width || self.height != other.height {
            return 0;
        }
        self.bits
            .iter()
            .zip(&other.bits)
            .filter(|(a, b)| **a && **b)
            .count()
    }
}

/// One detector candidate in one view.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ProposalRepr", into = "ProposalRepr")]
pub struct Proposal {
    bbox: BoundingBox,
    confidence: f64,
    embedding: Embedding,
    mask: Option<Mask>,
    centroid: (f64, f64),
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ProposalRepr {
    #[serde(rename = "box")]
    bbox: BoundingBox,
    confidence: f64,
    embedding: Embedding,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    mask: Option<Mask>,
}

impl TryFrom<ProposalRepr> for Proposal {
    type Error = SceneError;
    fn try_from(r: ProposalRepr) -> Result<Self, Self::Error> {
        Proposal::new(r.bbox, r.confidence, r.embedding, r.mask)
    }
}

impl From<Proposal> for ProposalRepr {
    fn from(p: Proposal) -> Self {
        ProposalRepr {
            bbox: p.bbox,
            confidence: p.confidence,
            embedding: p.embedding,
            mask: p.mask,
        }
    }
}

impl Proposal {
    /// The centroid is the mean of the mask pixels when a mask is given,
    /// otherwise the box center.
    pub fn new(
        bbox: BoundingBox,
        confidence: f64,
        embedding: Embedding,
        mask: Option<Mask>,
    ) -> Result<Self, SceneError> {
        if !(0.0..=1.0).contains(&confidence) {
            return Err(SceneError::InvalidProposal(format!(
                "confidence {confidence} outside [0, 1]"
            )));
        }
        let centroid = match &mask {
            Some(m) => m
                .centroid()
                .ok_or_else(|| SceneError::InvalidProposal("empty mask".into()))?,
            None => bbox.center(),
        };
        if !bbox.contains_point(centroid.0, centroid.1) {
            return Err(SceneError::InvalidProposal(
                "mask centroid lies outside the box".into(),
            ));
        }
        Ok(Self {
            bbox,
            confidence,
            embedding,
            mask,
            centroid,
        })
    }

    pub fn bbox(&self) -> &BoundingBox {
        &self.bbox
    }

    pub fn confidence(&self) -> f64 {
        self.confidence
    }

    pub fn embedding(&self) -> &Embedding {
        &self.embedding
    }

    pub fn mask(&self) -> Option<&Mask> {
        self.mask.as_ref()
    }

    pub fn centroid(&self) -> (f64, f64) {
        self.centroid
    }
}

/// The user's reference memory for one personal object.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RefRepr", into = "RefRepr")]
pub struct ReferenceSet {
    object_id: String,
    category: String,
    references: Vec<Embedding>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RefRepr {
    object_id: String,
    category: String,
    references: Vec<Embedding>,
}

impl TryFrom<RefRepr> for ReferenceSet {
    type Error = SceneError;
    fn try_from(r: RefRepr) -> Result<Self, Self::Error> {
        ReferenceSet::new(r.object_id, r.category, r.references)
    }
}

impl From<ReferenceSet> for RefRepr {
    fn from(r: ReferenceSet) -> Self {
        RefRepr {
            object_id: r.object_id,
            category: r.category,
            references: r.references,
        }
    }
}

impl ReferenceSet {
    pub fn new(
        object_id: impl Into<String>,
        category: impl Into<String>,
        references: Vec<Embedding>,
    ) -> Result<Self, SceneError> {
        let Some(first) = references.first() else {
            return Err(SceneError::InvalidReferences("K must be at least 1".into()));
        };
        let dim = first.dim();
        if references.iter().any(|r| r.dim() != dim) {
            return Err(SceneError::InvalidReferences(
                "references differ in dimension".into(),
            ));
        }
        Ok(Self {
            object_id: object_id.into(),
            category: category.into(),
            references,
        })
    }

    pub fn object_id(&self) -> &str {
        &self.object_id
    }

    pub fn category(&self) -> &str {
        &self.category
    }

    pub fn references(&self) -> &[Embedding] {
        &self.references
    }

    pub fn k(&self) -> usize {
        self.references.len()
    }

    pub fn dim(&self) -> usize {
        self.references[0].dim()
    }
}

pub type Rgb = [u8; 3];

/// 8-bit RGB raster, row-major.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RasterImage {
    width: u32,
    height: u32,
    pixels: Vec<u8>,
}

impl RasterImage {
    pub fn filled(width: u32, height: u32, color: Rgb) -> Result<Self, SceneError> {
        if width == 0 || height == 0 {
            return Err(SceneError::InvalidImage("zero dimension".into()));
        }
        let n = width as usize * height as usize;
        let mut pixels = Vec::with_capacity(n * 3);
        for _ in 0..n {
            pixels.extend_from_slice(&color);
        }
        Ok(Self {
            width,
            height,
            pixels,
        })
    }

    pub fn from_raw(width: u32, height: u32, pixels: Vec<u8>) -> Result<Self, SceneError> {
        if width == 0 || height == 0 {
            return Err(SceneError::InvalidImage("zero dimension".into()));
        }
        let expected = width as usize * height as usize * 3;
        if pixels.len() != expected {
            return Err(SceneError::InvalidImage(format!(
                "expected {expected} bytes, got {}",
                pixels.len()
            )));
        }
        Ok(Self {
            width,
            height,
            pixels,
        })
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn raw(&self) -> &[u8] {
        &self.pixels
    }

    fn offset(&self, x: u32, y: u32) -> usize {
        (y as usize * self.width as usize + x as usize) * 3
    }

    pub fn get(&self, x: u32, y: u32) -> Rgb {
        let o = self.offset(x, y);
        [self.pixels[o], self.pixels[o + 1], self.pixels[o + 2]]
    }

    pub fn set(&mut self, x: u32, y: u32, color: Rgb) {
        let o = self.offset(x, y);
        self.pixels[o..o + 3].copy_from_slice(&color);
    }

    pub fn fill_mask(&mut self, mask: &Mask, color: Rgb) {
        for (x, y) in mask.iter_set() {
            if x < self.width && y < self.height {
                self.set(x, y, color);
            }
        }
    }

    /// Mask of pixels that differ between two same-sized images.
    pub fn diff_mask(&self, other: &RasterImage) -> Option<Mask> {
        if self.width != other.width || self.height != other.height {
            return None;
        }
        let bits = self
            .pixels
            .chunks_exact(3)
            .zip(other.pixels.chunks_exact(3))
            .map(|(a, b)| a != b)
            .collect();
        Mask::from_bits(self.width, self.height, bits).ok()
    }
}

/// Camera views, proprioceptive passthrough and the user's instruction.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Observation {
    views: Vec<RasterImage>,
    proprio: Vec<u8>,
    instruction: String,
}

impl Observation {
    pub fn new(
        views: Vec<RasterImage>,
        proprio: Vec<u8>,
        instruction: impl Into<String>,
    ) -> Result<Self, SceneError> {
        if views.is_empty() {
            return Err(SceneError::NoViews);
        }
        Ok(Self {
            views,
            proprio,
            instruction: instruction.into(),
        })
    }

    pub fn views(&self) -> &[RasterImage] {
        &self.views
    }

    /// Opaque; never inspected.
    pub fn proprio(&self) -> &[u8] {
        &self.proprio
    }

    pub fn instruction(&self) -> &str {
        &self.instruction
    }
}

/// Tracker-private state. The grounding layer forwards it untouched.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrackerMemory(pub Vec<u8>);

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ViewTrackState {
    pub view_index: usize,
    pub current_mask: Option<Mask>,
    pub memory: TrackerMemory,
}

impl ViewTrackState {
    pub fn new(view_index: usize, current_mask: Option<Mask>) -> Self {
        Self {
            view_index,
            current_mask,
            memory: TrackerMemory::default(),
        }
    }

    pub fn is_lost(&self) -> bool {
        self.current_mask.is_none()
    }
}
