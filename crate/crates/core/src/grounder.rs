//! Tracking-aware grounding: instruction parsing, per-view detection and
//! selection, mask refinement, mask propagation, and the no-detection
//! fallback.
//!
//! Perception backends are reached through the three port traits. Every
//! port failure degrades to a per-view fallback; nothing here aborts an
//! episode.

use std::ops::Range;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::crossview::{self, AssociationInstance, Assignment, CrossviewParams, FusionMethod};
use crate::matcher::{SelectionResult, Selector};
use crate::scene::{BoundingBox, Embedding, Mask, Proposal, RasterImage, ReferenceSet, TrackerMemory, ViewTrackState};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GroundError {
    #[error("instruction has no \"my <category>\" trigger")]
    NoTrigger,
    #[error("empty instruction")]
    EmptyInstruction,
}

/// Failure reported by a perception port.
#[derive(Debug, Error, Clone, PartialEq)]
#[error("{0}")]
pub struct PortError(pub String);

/// Category-level detector: every candidate of `category` in one view.
pub trait DetectorPort {
    fn detect(
        &self,
        category: &str,
        view_index: usize,
        image: &RasterImage,
    ) -> Result<Vec<Proposal>, PortError>;
}

/// Class-agnostic box-to-mask refinement.
pub trait SegmenterPort {
    fn segment(
        &self,
        view_index: usize,
        image: &RasterImage,
        bbox: &BoundingBox,
    ) -> Result<Mask, PortError>;
}

/// Mask propagation from the previous state to the current frame.
pub trait TrackerPort {
    fn track(
        &self,
        image: &RasterImage,
        state: &ViewTrackState,
    ) -> Result<(TrackerMemory, Option<Mask>), PortError>;
}

/// Words that end the noun span after "my".
pub const STOP_WORDS: [&str; 9] = ["into", "onto", "near", "to", "in", "on", "at", "and", "then"];

const TRAILING_PUNCTUATION: &[char] = &['.', ',', '!', '?', ';', ':'];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CategoryQuery {
    pub category: String,
    /// Byte range of "my <category>" in the instruction.
    pub trigger_span: Range<usize>,
}

/// Whitespace-delimited tokens with their byte offsets.
fn tokens(s: &str) -> Vec<(usize, &str)> {
    let mut out = Vec::new();
    let mut start = None;
    for (i, c) in s.char_indices() {
        match (c.is_whitespace(), start) {
            (true, Some(st)) => {
                out.push((st, &s[st..i]));
                start = None;
            }
            (false, None) => start = Some(i),
            _ => {}
        }
    }
    if let Some(st) = start {
        out.push((st, &s[st..]));
    }
    out
}

/// Finds the first "my X" trigger. X runs greedily until a stop word, a
/// trailing punctuation mark, or the end of the instruction.
pub fn parse_category(instruction: &str) -> Result<CategoryQuery, GroundError> {
    if instruction.trim().is_empty() {
        return Err(GroundError::EmptyInstruction);
    }
    let toks = tokens(instruction);
    for (i, &(start, tok)) in toks.iter().enumerate() {
        if !tok.eq_ignore_ascii_case("my") {
            continue;
        }
        let mut end = None;
        for &(off, word) in &toks[i + 1..] {
            let bare = word.trim_end_matches(TRAILING_PUNCTUATION);
            if STOP_WORDS.contains(&bare.to_ascii_lowercase().as_str()) {
                break;
            }
            if !bare.is_empty() {
                end = Some(off + bare.len());
            }
            if bare.len() != word.len() {
                break;
            }
        }
        let Some(end) = end else { continue };
        let cat_start = toks[i + 1].0;
        return Ok(CategoryQuery {
            category: instruction[cat_start..end].to_string(),
            trigger_span: start..end,
        });
    }
    Err(GroundError::NoTrigger)
}

/// Grounding result for one view.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ViewGrounding {
    pub view_index: usize,
    pub mask: Option<Mask>,
    pub winner: Option<Proposal>,
    pub selection: Option<SelectionResult>,
    pub fallback: bool,
}

impl ViewGrounding {
    fn fallback(view_index: usize) -> Self {
        Self {
            view_index,
            mask: None,
            winner: None,
            selection: None,
            fallback: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundingOutcome {
    pub per_view: Vec<ViewGrounding>,
}

impl GroundingOutcome {
    pub fn track_states(&self) -> Vec<ViewTrackState> {
        self.per_view
            .iter()
            .map(|g| ViewTrackState::new(g.view_index, g.mask.clone()))
            .collect()
    }

    /// Rebuilds an outcome from tracker states (later time steps).
    pub fn from_track_states(states: &[ViewTrackState]) -> Self {
        Self {
            per_view: states
                .iter()
                .map(|s| ViewGrounding {
                    view_index: s.view_index,
                    fallback: s.current_mask.is_none(),
                    mask: s.current_mask.clone(),
                    winner: None,
                    selection: None,
                })
                .collect(),
        }
    }

    pub fn all_fallback(&self) -> bool {
        self.per_view.iter().all(|g| g.fallback)
    }
}

fn refine(
    view_index: usize,
    image: &RasterImage,
    winner: Proposal,
    selection: Option<SelectionResult>,
    segmenter: &dyn SegmenterPort,
) -> ViewGrounding {
    let mask = segmenter
        .segment(view_index, image, winner.bbox())
        .ok()
        .filter(|m| m.width() == image.width() && m.height() == image.height() && !m.is_empty());
    ViewGrounding {
        view_index,
        fallback: mask.is_none(),
        mask,
        winner: Some(winner),
        selection,
    }
}

/// Grounds a single view with the given selection rule.
pub fn ground_view(
    view_index: usize,
    image: &RasterImage,
    refs: &ReferenceSet,
    detector: &dyn DetectorPort,
    segmenter: &dyn SegmenterPort,
    selector: Selector,
) -> ViewGrounding {
    let proposals = match detector.detect(refs.category(), view_index, image) {
        Ok(p) if !p.is_empty() => p,
        _ => return ViewGrounding::fallback(view_index),
    };
    let embeddings: Vec<Embedding> = proposals.iter().map(|p| p.embedding().clone()).collect();
    let Ok(selection) = selector.select(&embeddings, refs.references()) else {
        return ViewGrounding::fallback(view_index);
    };
    let winner = proposals[selection.winner_index].clone();
    refine(view_index, image, winner, Some(selection), segmenter)
}

/// Initial grounding with voting selection, independently per view.
pub fn ground_initial(
    views: &[RasterImage],
    refs: &ReferenceSet,
    detector: &dyn DetectorPort,
    segmenter: &dyn SegmenterPort,
) -> GroundingOutcome {
    ground_initial_with(views, refs, detector, segmenter, Selector::Vote)
}

pub fn ground_initial_with(
    views: &[RasterImage],
    refs: &ReferenceSet,
    detector: &dyn DetectorPort,
    segmenter: &dyn SegmenterPort,
    selector: Selector,
) -> GroundingOutcome {
    GroundingOutcome {
        per_view: views
            .iter()
            .enumerate()
            .map(|(v, image)| ground_view(v, image, refs, detector, segmenter, selector))
            .collect(),
    }
}

/// Grounding where a cross-view association pass picks one proposal (or
/// none) per view, replacing the independent per-view winners.
///
/// Returns the outcome together with the fused assignment. With
/// [`FusionMethod::Independent`] this is `ground_initial_with` and the
/// assignment mirrors the per-view winners.
pub fn ground_fused(
    views: &[RasterImage],
    refs: &ReferenceSet,
    detector: &dyn DetectorPort,
    segmenter: &dyn SegmenterPort,
    selector: Selector,
    method: FusionMethod,
    params: &CrossviewParams,
) -> (GroundingOutcome, Assignment) {
    if method == FusionMethod::Independent {
        let outcome = ground_initial_with(views, refs, detector, segmenter, selector);
        let choices = outcome
            .per_view
            .iter()
            .map(|g| g.selection.as_ref().map(|s| s.winner_index))
            .collect();
        return (outcome, Assignment::new(choices));
    }

    let per_view: Vec<Vec<Proposal>> = views
        .iter()
        .enumerate()
        .map(|(v, image)| detector.detect(refs.category(), v, image).unwrap_or_default())
        .collect();
    let inst = AssociationInstance::new(per_view.clone(), refs.references().to_vec(), params.clone());
    let assignment = match inst {
        Ok(inst) => crossview::solve(&inst, method, params),
        // Mixed dimensions: nothing can be fused; every view falls back.
        Err(_) => Assignment::new(vec![None; views.len()]),
    };

    let outcome = GroundingOutcome {
        per_view: views
            .iter()
            .enumerate()
            .map(|(v, image)| match assignment.choices()[v] {
                Some(i) => refine(v, image, per_view[v][i].clone(), None, segmenter),
                None => ViewGrounding::fallback(v),
            })
            .collect(),
    };
    (outcome, assignment)
}

/// Propagates one view's mask. Detection is never re-run here: a lost
/// track stays lost and the view falls back for the rest of the episode.
pub fn track_step(image: &RasterImage, state: &ViewTrackState, tracker: &dyn TrackerPort) -> ViewTrackState {
    if state.current_mask.is_none() {
        return state.clone();
    }
    match tracker.track(image, state) {
        Ok((memory, mask)) => ViewTrackState {
            view_index: state.view_index,
            current_mask: mask.filter(|m| {
                m.width() == image.width() && m.height() == image.height() && !m.is_empty()
            }),
            memory,
        },
        Err(_) => ViewTrackState {
            view_index: state.view_index,
            current_mask: None,
            memory: state.memory.clone(),
        },
    }
}
