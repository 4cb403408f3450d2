//! Seeded synthetic episodes, ground-truth-backed perception ports, a
//! surrogate policy, and the episode runner.

pub mod config;
pub mod episode;
pub mod mock;
pub mod policy;
pub mod rng;
pub mod runner;
pub mod sequential;

pub use config::{ConfigError, SceneConfig};
pub use episode::{gen_episode, gen_episode_multi, Episode, ObjectId, TargetSpec};
pub use runner::{run_batch, run_episode, worker_pool, BatchSummary, EpisodeReport, FailureCase};
pub use sequential::{run_sequential, run_sequential_batch, SequentialReport, Subgoal};
