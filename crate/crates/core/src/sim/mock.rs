//! Ground-truth-backed implementations of the perception ports.

use rand::Rng;

use super::episode::{Episode, ObjectId};
use super::rng::{stream_rng, Stream};
use crate::grounder::{DetectorPort, PortError, SegmenterPort, TrackerPort};
use crate::scene::{BoundingBox, Mask, Proposal, RasterImage, TrackerMemory, ViewTrackState};

/// The scene at one instant: which objects are still on the table, the
/// current step, and a salt separating random draws of different subgoals.
#[derive(Debug, Clone, Copy)]
pub struct SceneView<'a> {
    pub episode: &'a Episode,
    pub present: &'a [bool],
    pub salt: u64,
    pub t: usize,
}

impl<'a> SceneView<'a> {
    pub fn at(self, t: usize) -> Self {
        Self { t, ..self }
    }

    fn seed(&self) -> u64 {
        self.episode.config.seed
    }

    fn candidates(&self, category: &str, view: usize) -> impl Iterator<Item = ObjectId> + '_ {
        let category = category.to_string();
        self.episode
            .objects
            .iter()
            .filter(move |o| {
                self.present[o.id as usize] && o.category == category && !o.occluded[view]
            })
            .map(|o| o.id)
    }
}

pub struct MockDetector<'a> {
    pub scene: SceneView<'a>,
    /// Object subject to `p_miss`.
    pub target: ObjectId,
}

impl MockDetector<'_> {
    /// Proposals with the ground-truth object behind each one.
    pub fn labeled(&self, category: &str, view: usize) -> Vec<(ObjectId, Proposal)> {
        let ep = self.scene.episode;
        let cfg = &ep.config;
        let mut rng = stream_rng(
            self.scene.seed(),
            Stream::Detector,
            &[self.scene.salt, view as u64, self.scene.t as u64],
        );
        let missed = rng.random::<f64>() < cfg.p_miss;
        let xi: Vec<f64> = (0..ep.objects.len()).map(|_| rng.random()).collect();
        self.scene
            .candidates(category, view)
            .filter(|&id| !(missed && id == self.target))
            .filter_map(|id| {
                let tight = ep.object_box(id, view, self.scene.t)?;
                let bbox = tight.expand(cfg.box_pad, ep.width(), ep.height());
                let confidence = (1.0 - cfg.obs_noise * xi[id as usize]).clamp(0.0, 1.0);
                let embedding = ep.object(id).observed[view].clone();
                let p = Proposal::new(bbox, confidence, embedding, None).ok()?;
                Some((id, p))
            })
            .collect()
    }
}

impl DetectorPort for MockDetector<'_> {
    fn detect(&self, category: &str, view_index: usize, _image: &RasterImage) -> Result<Vec<Proposal>, PortError> {
        Ok(self
            .labeled(category, view_index)
            .into_iter()
            .map(|(_, p)| p)
            .collect())
    }
}

fn box_overlap(a: &BoundingBox, b: &BoundingBox) -> u64 {
    let w = a.x_max().min(b.x_max()) as i64 - a.x_min().max(b.x_min()) as i64 + 1;
    let h = a.y_max().min(b.y_max()) as i64 - a.y_min().max(b.y_min()) as i64 + 1;
    if w <= 0 || h <= 0 {
        0
    } else {
        (w * h) as u64
    }
}

/// Returns the ground-truth mask of the object the box covers most.
pub struct MockSegmenter<'a> {
    pub scene: SceneView<'a>,
}

impl SegmenterPort for MockSegmenter<'_> {
    fn segment(&self, view_index: usize, _image: &RasterImage, bbox: &BoundingBox) -> Result<Mask, PortError> {
        let ep = self.scene.episode;
        let mut best: Option<(ObjectId, u64)> = None;
        for o in &ep.objects {
            if !self.scene.present[o.id as usize] {
                continue;
            }
            let Some(b) = ep.object_box(o.id, view_index, self.scene.t) else {
                continue;
            };
            let c = box_overlap(&b, bbox);
            if c > 0 && best.is_none_or(|(_, bc)| c > bc) {
                best = Some((o.id, c));
            }
        }
        let (id, _) = best.ok_or_else(|| PortError("no object under the box".into()))?;
        ep.object_mask(id, view_index, self.scene.t)
            .ok_or_else(|| PortError("object not visible".into()))
    }
}

/// Follows one object through time. The tracked id lives in the tracker
/// memory; with probability `p_drift` per step it jumps to another visible
/// object of the same category.
pub struct MockTracker<'a> {
    /// The step being tracked into; the state's mask belongs to `t - 1`.
    pub scene: SceneView<'a>,
}

pub fn encode_memory(id: ObjectId) -> TrackerMemory {
    TrackerMemory(id.to_le_bytes().to_vec())
}

pub fn decode_memory(m: &TrackerMemory) -> Option<ObjectId> {
    Some(ObjectId::from_le_bytes(m.0.as_slice().try_into().ok()?))
}

impl TrackerPort for MockTracker<'_> {
    fn track(&self, _image: &RasterImage, state: &ViewTrackState) -> Result<(TrackerMemory, Option<Mask>), PortError> {
        let ep = self.scene.episode;
        let view = state.view_index;
        let prev = self.scene.t.saturating_sub(1);
        let mut id = match decode_memory(&state.memory) {
            Some(id) => id,
            None => {
                let mask = state.current_mask.as_ref().ok_or_else(|| PortError("no mask to track".into()))?;
                ep.identify(view, prev, mask, self.scene.present)
                    .ok_or_else(|| PortError("mask covers no object".into()))?
            }
        };
        let mut rng = stream_rng(
            self.scene.seed(),
            Stream::Tracker,
            &[self.scene.salt, view as u64, self.scene.t as u64],
        );
        let drift = rng.random::<f64>() < ep.config.p_drift;
        let pick: f64 = rng.random();
        if drift {
            let others: Vec<ObjectId> = self
                .scene
                .candidates(&ep.object(id).category, view)
                .filter(|&o| o != id)
                .collect();
            if !others.is_empty() {
                id = others[((pick * others.len() as f64) as usize).min(others.len() - 1)];
            }
        }
        Ok((encode_memory(id), ep.object_mask(id, view, self.scene.t)))
    }
}
