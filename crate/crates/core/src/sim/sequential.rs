//! Multi-target execution: one personal object per subgoal, one prompt at a
//! time, re-grounding from scratch on the scene left by earlier subgoals.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{ConfigError, SceneConfig};
use super::episode::{gen_episode_multi, parse_object_name, Episode, TargetSpec};
use super::runner::{run_subgoal, EpisodeReport};
use crate::scene::ReferenceSet;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Subgoal {
    pub references: ReferenceSet,
    pub instruction: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubgoalReport {
    pub report: EpisodeReport,
    /// The subgoal's object had already been taken off the table.
    pub precondition_failed: bool,
    /// Objects on the table when this subgoal was grounded.
    pub scene_size: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SequentialReport {
    pub seed: u64,
    pub subgoals: Vec<SubgoalReport>,
    pub two_step_success: bool,
    pub wrong_object: bool,
    pub others: bool,
}

pub fn default_targets() -> Vec<TargetSpec> {
    vec![
        TargetSpec {
            category: "dog figurine".into(),
            instruction: "put my dog figurine into the plastic bowl".into(),
        },
        TargetSpec {
            category: "ornament".into(),
            instruction: "put my ornament into the plastic bowl".into(),
        },
    ]
}

pub fn subgoals_of(ep: &Episode) -> Vec<Subgoal> {
    ep.targets
        .iter()
        .map(|t| Subgoal {
            references: t.references.clone(),
            instruction: t.instruction.clone(),
        })
        .collect()
}

/// Runs subgoals in order. An executed action removes the acted-on object
/// from the scene before the next subgoal is grounded.
pub fn run_sequential(ep: &Episode, subgoals: &[Subgoal]) -> Result<SequentialReport, ConfigError> {
    if subgoals.len() < 2 {
        return Err(ConfigError::Invalid("sequential execution needs at least two subgoals".into()));
    }
    let mut targets = Vec::with_capacity(subgoals.len());
    for s in subgoals {
        let id = parse_object_name(s.references.object_id())
            .filter(|&id| (id as usize) < ep.objects.len())
            .ok_or_else(|| ConfigError::Invalid(format!("unknown object {}", s.references.object_id())))?;
        targets.push(id);
    }
    let mut present = ep.all_present();
    let mut out = Vec::with_capacity(subgoals.len());
    for (i, (s, &target)) in subgoals.iter().zip(&targets).enumerate() {
        let precondition_failed = !present[target as usize];
        let scene_size = present.iter().filter(|&&p| p).count();
        let report = run_subgoal(ep, &present, target, &s.references, &s.instruction, i as u64 + 1)?;
        if report.policy.executed {
            if let Some(id) = report.acted_on {
                present[id as usize] = false;
            }
        }
        out.push(SubgoalReport {
            report,
            precondition_failed,
            scene_size,
        });
    }
    let two_step_success = out.iter().all(|s| s.report.success);
    let wrong_object = !two_step_success
        && out.iter().any(|s| {
            s.precondition_failed || s.report.acted_on.is_some_and(|id| id != s.report.target)
        });
    Ok(SequentialReport {
        seed: ep.config.seed,
        subgoals: out,
        two_step_success,
        wrong_object,
        others: !two_step_success && !wrong_object,
    })
}

pub fn run_sequential_seed(cfg: &SceneConfig, targets: &[TargetSpec]) -> Result<SequentialReport, ConfigError> {
    let ep = gen_episode_multi(cfg, targets)?;
    run_sequential(&ep, &subgoals_of(&ep))
}

pub fn run_sequential_batch(
    pool: &rayon::ThreadPool,
    cfg: &SceneConfig,
    targets: &[TargetSpec],
    seeds: &[u64],
) -> Result<Vec<SequentialReport>, ConfigError> {
    cfg.validate()?;
    pool.install(|| {
        seeds
            .par_iter()
            .map(|&s| run_sequential_seed(&cfg.with_seed(s), targets))
            .collect()
    })
}
