//! Visual-prompt grounding for personalized robot instructions: reference
//! matching, cross-view association, visual prompting, embedding alignment
//! metrics, and a seeded simulator with an experiment harness.

pub mod crossview;
pub mod embedalign;
pub mod experiment;
pub mod formats;
pub mod grounder;
pub mod matcher;
pub mod prompter;
pub mod scene;
pub mod sim;
