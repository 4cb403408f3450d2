//! Stand-in for a frozen vision-language-action policy.
//!
//! The surrogate reads the prompt the way a policy trained on color-cued
//! instructions would: the highlight is only meaningful when the instruction
//! names it ("the red cup"). It then picks the highlighted object in each
//! view, takes the majority across views, and executes with probability
//! `1 - p_ctrl`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::episode::ObjectId;
use super::mock::SceneView;
use super::rng::{stream_rng, Stream};
use crate::scene::Observation;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PolicyOutcome {
    pub acted_on: Option<ObjectId>,
    pub executed: bool,
    pub success: bool,
    /// The action came from highlighted pixels rather than a blind guess.
    pub followed_prompt: bool,
    /// Object read from each view's highlight; `None` if the view shows none.
    pub per_view: Vec<Option<ObjectId>>,
}

fn pick_weighted(weights: &[(ObjectId, usize)], u: f64) -> ObjectId {
    let total: usize = weights.iter().map(|(_, w)| w).sum();
    let goal = u * total as f64;
    let mut acc = 0.0;
    for &(id, w) in weights {
        acc += w as f64;
        if goal < acc {
            return id;
        }
    }
    weights.last().expect("non-empty").0
}

/// Majority over per-view reads; ties go to the lowest id.
pub fn majority(reads: &[Option<ObjectId>]) -> Option<ObjectId> {
    let mut tally: Vec<(ObjectId, usize)> = Vec::new();
    for id in reads.iter().flatten() {
        match tally.iter_mut().find(|(t, _)| t == id) {
            Some((_, n)) => *n += 1,
            None => tally.push((*id, 1)),
        }
    }
    tally.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
    tally.first().map(|&(id, _)| id)
}

/// `category` is the object class named by the instruction.
pub fn surrogate_policy(prompted: &Observation, scene: SceneView<'_>, target: ObjectId, category: &str) -> PolicyOutcome {
    let ep = scene.episode;
    let cfg = &ep.config;
    let mut rng = stream_rng(cfg.seed, Stream::Policy, &[scene.salt, scene.t as u64]);
    let view_draws: Vec<f64> = (0..prompted.views().len()).map(|_| rng.random()).collect();
    let guess_draw: f64 = rng.random();
    let control_draw: f64 = rng.random();

    let cue = format!("the {} {}", cfg.tint.word(), category);
    let readable = prompted.instruction().contains(&cue);

    let per_view: Vec<Option<ObjectId>> = prompted
        .views()
        .iter()
        .enumerate()
        .map(|(v, img)| {
            if !readable {
                return None;
            }
            let clean = ep.render(v, scene.t, scene.present);
            let highlight = clean.diff_mask(img)?;
            let counts = ep.overlap_counts(v, scene.t, &highlight, scene.present);
            match counts.len() {
                0 => None,
                1 => Some(counts[0].0),
                _ => Some(pick_weighted(&counts, view_draws[v])),
            }
        })
        .collect();

    let (acted_on, followed_prompt) = match majority(&per_view) {
        Some(id) => (Some(id), true),
        None => {
            let pool: Vec<ObjectId> = ep
                .objects
                .iter()
                .filter(|o| scene.present[o.id as usize] && o.category == category)
                .map(|o| o.id)
                .collect();
            let pick = (!pool.is_empty())
                .then(|| pool[((guess_draw * pool.len() as f64) as usize).min(pool.len() - 1)]);
            (pick, false)
        }
    };
    let executed = acted_on.is_some() && control_draw >= cfg.p_ctrl;
    PolicyOutcome {
        acted_on,
        executed,
        success: executed && acted_on == Some(target),
        followed_prompt,
        per_view,
    }
}
