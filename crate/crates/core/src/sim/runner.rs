use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{ConfigError, SceneConfig};
use super::episode::{gen_episode, Episode, ObjectId};
use super::mock::{MockDetector, MockSegmenter, MockTracker, SceneView};
use super::policy::{surrogate_policy, PolicyOutcome};
use crate::grounder::{ground_fused, track_step, GroundingOutcome};
use crate::prompter::compose_prompt_with;
use crate::scene::{Observation, ReferenceSet, ViewTrackState};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FailureCase {
    None,
    Case1,
    Case2,
    Case3,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StepTrace {
    pub t: usize,
    /// Object covered by each view's grounding mask; `None` on fallback.
    pub identified: Vec<Option<ObjectId>>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EpisodeReport {
    pub seed: u64,
    pub target: ObjectId,
    pub success: bool,
    pub target_moved: bool,
    pub failure_case: FailureCase,
    pub acted_on: Option<ObjectId>,
    /// Whether each view's initial selection is the target; `None` on fallback.
    pub retrieval: Vec<Option<bool>>,
    pub trace: Vec<StepTrace>,
    pub policy: PolicyOutcome,
    pub instruction: String,
}

/// Failure taxonomy at the action step. A failure is a control failure when
/// every grounded view shows the target and at least one view is grounded;
/// any other failure is a grounding error, attributed by view count.
pub fn classify(success: bool, views: usize, target: ObjectId, at_action: &[Option<ObjectId>]) -> FailureCase {
    if success {
        return FailureCase::None;
    }
    let any_target = at_action.contains(&Some(target));
    let all_target = at_action.iter().all(|id| id.is_none() || *id == Some(target));
    if any_target && all_target {
        FailureCase::Case3
    } else if views == 1 {
        FailureCase::Case1
    } else {
        FailureCase::Case2
    }
}

fn identify_all(ep: &Episode, t: usize, present: &[bool], g: &GroundingOutcome) -> Vec<Option<ObjectId>> {
    g.per_view
        .iter()
        .map(|v| v.mask.as_ref().and_then(|m| ep.identify(v.view_index, t, m, present)))
        .collect()
}

/// One grounding-tracking-prompting-acting pass over the scene for one
/// personal object. `salt` separates the random draws of successive
/// subgoals in the same scene.
pub fn run_subgoal(
    ep: &Episode,
    present: &[bool],
    target: ObjectId,
    refs: &ReferenceSet,
    instruction: &str,
    salt: u64,
) -> Result<EpisodeReport, ConfigError> {
    let cfg = &ep.config;
    let style = cfg.style().map_err(|e| ConfigError::Invalid(e.to_string()))?;
    let scene = SceneView {
        episode: ep,
        present,
        salt,
        t: 0,
    };
    let proprio = cfg.seed.to_le_bytes().to_vec();

    let first: Vec<_> = (0..cfg.views).map(|v| ep.render(v, 0, present)).collect();
    let detector = MockDetector { scene, target };
    let segmenter = MockSegmenter { scene };
    let (mut grounding, _) = ground_fused(
        &first,
        refs,
        &detector,
        &segmenter,
        cfg.selector,
        cfg.fusion,
        &cfg.crossview,
    );
    let initial = identify_all(ep, 0, present, &grounding);
    let retrieval = initial.iter().map(|id| id.map(|id| id == target)).collect();

    let mut states: Vec<ViewTrackState> = grounding.track_states();
    let mut trace = Vec::with_capacity(cfg.steps);
    let mut frames = first;
    let mut policy = None;
    let mut instruction_out = String::new();
    for t in 0..cfg.steps {
        if t > 0 {
            frames = (0..cfg.views).map(|v| ep.render(v, t, present)).collect();
            let tracker = MockTracker { scene: scene.at(t) };
            states = states
                .iter()
                .zip(&frames)
                .map(|(s, img)| track_step(img, s, &tracker))
                .collect();
            grounding = GroundingOutcome::from_track_states(&states);
        }
        trace.push(StepTrace {
            t,
            identified: if t == 0 {
                initial.clone()
            } else {
                identify_all(ep, t, present, &grounding)
            },
        });
        let obs = Observation::new(frames.clone(), proprio.clone(), instruction)
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        let prompted = compose_prompt_with(&obs, &grounding, &style, cfg.prompt)
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        if t + 1 == cfg.steps {
            instruction_out = prompted.instruction().to_string();
            policy = Some(surrogate_policy(&prompted, scene.at(t), target, refs.category()));
        }
    }
    let policy = policy.expect("at least one step");
    let at_action = &trace.last().expect("at least one step").identified;
    let failure_case = classify(policy.success, cfg.views, target, at_action);
    Ok(EpisodeReport {
        seed: cfg.seed,
        target,
        success: policy.success,
        target_moved: policy.acted_on == Some(target),
        failure_case,
        acted_on: policy.acted_on,
        retrieval,
        trace,
        policy,
        instruction: instruction_out,
    })
}

pub fn run_on(ep: &Episode) -> Result<EpisodeReport, ConfigError> {
    let target = &ep.targets[0];
    run_subgoal(
        ep,
        &ep.all_present(),
        target.object,
        &target.references,
        &target.instruction,
        0,
    )
}

pub fn run_episode(cfg: &SceneConfig) -> Result<EpisodeReport, ConfigError> {
    run_on(&gen_episode(cfg)?)
}

pub fn worker_pool(workers: usize) -> Result<rayon::ThreadPool, ConfigError> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| ConfigError::Invalid(format!("worker pool: {e}")))
}

/// Runs `cfg` once per seed. Results come back in seed order regardless of
/// scheduling.
pub fn run_batch(pool: &rayon::ThreadPool, cfg: &SceneConfig, seeds: &[u64]) -> Result<Vec<EpisodeReport>, ConfigError> {
    cfg.validate()?;
    pool.install(|| seeds.par_iter().map(|&s| run_episode(&cfg.with_seed(s))).collect())
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct BatchSummary {
    pub episodes: usize,
    pub successes: usize,
    pub moved: usize,
    pub case1: usize,
    pub case2: usize,
    pub case3: usize,
    pub retrieval_hits: usize,
    pub retrieval_total: usize,
    pub identification_hits: usize,
    pub identification_total: usize,
}

fn pct(num: usize, den: usize) -> Option<f64> {
    (den > 0).then(|| 100.0 * num as f64 / den as f64)
}

impl BatchSummary {
    pub fn from_reports(reports: &[EpisodeReport]) -> Self {
        let mut s = Self::default();
        for r in reports {
            s.episodes += 1;
            s.successes += r.success as usize;
            s.moved += r.target_moved as usize;
            match r.failure_case {
                FailureCase::None => {}
                FailureCase::Case1 => s.case1 += 1,
                FailureCase::Case2 => s.case2 += 1,
                FailureCase::Case3 => s.case3 += 1,
            }
            for hit in r.retrieval.iter().flatten() {
                s.retrieval_hits += *hit as usize;
                s.retrieval_total += 1;
            }
            for read in &r.policy.per_view {
                s.identification_hits += (*read == Some(r.target)) as usize;
                s.identification_total += 1;
            }
        }
        s
    }

    pub fn failures(&self) -> usize {
        self.episodes - self.successes
    }

    pub fn sr(&self) -> Option<f64> {
        pct(self.successes, self.episodes)
    }

    pub fn cmr(&self) -> Option<f64> {
        pct(self.moved, self.episodes)
    }

    pub fn fail(&self) -> Option<f64> {
        pct(self.failures(), self.episodes)
    }

    /// Share of failures in each case, or `None` when nothing failed.
    pub fn cases(&self) -> [Option<f64>; 3] {
        let f = self.failures();
        [pct(self.case1, f), pct(self.case2, f), pct(self.case3, f)]
    }

    pub fn retrieval_accuracy(&self) -> Option<f64> {
        pct(self.retrieval_hits, self.retrieval_total)
    }

    /// Share of views whose highlight the policy read as the target.
    pub fn identification_accuracy(&self) -> Option<f64> {
        pct(self.identification_hits, self.identification_total)
    }
}
