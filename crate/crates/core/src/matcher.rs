//! Reference-based instance selection among same-category proposals.
//!
//! Every reference embedding votes for the proposal it is most similar to;
//! the proposal with the most votes wins. Vote-count ties go to the highest
//! mean cosine over all references, and anything still tied goes to the
//! lowest proposal index. Within a single reference, argmax ties also go to
//! the lowest proposal index, which keeps every selection replayable.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scene::{Embedding, Proposal, ReferenceSet};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MatchError {
    #[error("no candidate proposals")]
    NoCandidates,
    #[error("no reference embeddings")]
    NoReferences,
    #[error("dimension mismatch: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Selector {
    #[default]
    Vote,
    Average,
}

impl Selector {
    pub fn select(
        self,
        proposals: &[Embedding],
        references: &[Embedding],
    ) -> Result<SelectionResult, MatchError> {
        match self {
            Selector::Vote => vote_select_embeddings(proposals, references),
            Selector::Average => average_select_embeddings(proposals, references),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Selector::Vote => "vote",
            Selector::Average => "average",
        }
    }
}

/// Outcome of one selection.
///
/// `votes` always sums to K. For voting selection `votes[winner_index]` is
/// the maximum vote count; averaging selection reports votes for diagnostics
/// only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionResult {
    pub winner_index: usize,
    pub votes: Vec<usize>,
    pub mean_cosines: Vec<f64>,
    pub tie_broken: bool,
}

/// Cosine of two unit embeddings, clamped to [-1, 1].
pub fn cosine(a: &Embedding, b: &Embedding) -> Result<f64, MatchError> {
    if a.dim() != b.dim() {
        return Err(MatchError::DimensionMismatch {
            left: a.dim(),
            right: b.dim(),
        });
    }
    Ok(a.dot(b).clamp(-1.0, 1.0))
}

pub fn vote_select(
    proposals: &[Proposal],
    refs: &ReferenceSet,
) -> Result<SelectionResult, MatchError> {
    let embeddings: Vec<Embedding> = proposals.iter().map(|p| p.embedding().clone()).collect();
    vote_select_embeddings(&embeddings, refs.references())
}

pub fn average_select(
    proposals: &[Proposal],
    refs: &ReferenceSet,
) -> Result<SelectionResult, MatchError> {
    let embeddings: Vec<Embedding> = proposals.iter().map(|p| p.embedding().clone()).collect();
    average_select_embeddings(&embeddings, refs.references())
}

/// Similarity table indexed `[reference][proposal]`.
fn similarity_table(
    proposals: &[Embedding],
    references: &[Embedding],
) -> Result<Vec<Vec<f64>>, MatchError> {
    if proposals.is_empty() {
        return Err(MatchError::NoCandidates);
    }
    if references.is_empty() {
        return Err(MatchError::NoReferences);
    }
    references
        .iter()
        .map(|z| proposals.iter().map(|e| cosine(e, z)).collect())
        .collect()
}

fn tally(sims: &[Vec<f64>], n: usize) -> (Vec<usize>, Vec<f64>) {
    let mut votes = vec![0usize; n];
    let mut sums = vec![0.0f64; n];
    for row in sims {
        // Strict comparison keeps the lowest index on equal similarity.
        let mut best = 0;
        for (j, &s) in row.iter().enumerate() {
            if s > row[best] {
                best = j;
            }
            sums[j] += s;
        }
        votes[best] += 1;
    }
    let k = sims.len() as f64;
    (votes, sums.into_iter().map(|s| s / k).collect())
}

pub fn vote_select_embeddings(
    proposals: &[Embedding],
    references: &[Embedding],
) -> Result<SelectionResult, MatchError> {
    let sims = similarity_table(proposals, references)?;
    let (votes, mean_cosines) = tally(&sims, proposals.len());

    let max_votes = *votes.iter().max().expect("non-empty");
    let tied: Vec<usize> = (0..votes.len()).filter(|&i| votes[i] == max_votes).collect();
    let mut winner = tied[0];
    for &i in &tied[1..] {
        if mean_cosines[i] > mean_cosines[winner] {
            winner = i;
        }
    }
    Ok(SelectionResult {
        winner_index: winner,
        votes,
        mean_cosines,
        tie_broken: tied.len() > 1,
    })
}

pub fn average_select_embeddings(
    proposals: &[Embedding],
    references: &[Embedding],
) -> Result<SelectionResult, MatchError> {
    let sims = similarity_table(proposals, references)?;
    let (votes, mean_cosines) = tally(&sims, proposals.len());

    let mut winner = 0;
    for (i, &m) in mean_cosines.iter().enumerate() {
        if m > mean_cosines[winner] {
            winner = i;
        }
    }
    let tie_broken = mean_cosines
        .iter()
        .enumerate()
        .any(|(i, &m)| i != winner && m == mean_cosines[winner]);
    Ok(SelectionResult {
        winner_index: winner,
        votes,
        mean_cosines,
        tie_broken,
    })
}
