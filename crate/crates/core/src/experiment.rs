//! Experiment specs, sweep expansion, report rows, and report emission.
//!
//! A spec is one JSON document. Unknown keys anywhere are rejected, and
//! sweep axes are checked against the mode before any work starts.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::crossview::{self, AssociationInstance, FusionMethod};
use crate::embedalign::{align, AlignError};
use crate::formats::{self, FormatError};
use crate::grounder::{ground_initial_with, parse_category, DetectorPort, PortError, SegmenterPort};
use crate::matcher::Selector;
use crate::prompter::{compose_prompt_with, PromptMode};
use crate::scene::{BoundingBox, Mask, Observation, Proposal, RasterImage, ReferenceSet};
use crate::sim::episode::{gen_episode, TargetSpec};
use crate::sim::mock::{MockDetector, SceneView};
use crate::sim::runner::{run_batch, BatchSummary};
use crate::sim::sequential::{default_targets, run_sequential_batch};
use crate::sim::{ConfigError, SceneConfig};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("spec error: {0}")]
    Spec(String),
    #[error("config error: {0}")]
    Config(#[from] ConfigError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Format { path: PathBuf, source: FormatError },
    #[error("metric error: {0}")]
    Metric(#[from] AlignError),
}

impl HarnessError {
    /// 1 for spec and config problems, 2 for anything touching files.
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Spec(_) | HarnessError::Config(_) => 1,
            HarnessError::Io { .. } | HarnessError::Format { .. } | HarnessError::Metric(_) => 2,
        }
    }
}

fn spec_err(msg: impl Into<String>) -> HarnessError {
    HarnessError::Spec(msg.into())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Ground,
    Prompt,
    Simulate,
    Ablate,
    Align,
    Crossview,
    Sequential,
}

impl Mode {
    pub fn name(self) -> &'static str {
        match self {
            Mode::Ground => "ground",
            Mode::Prompt => "prompt",
            Mode::Simulate => "simulate",
            Mode::Ablate => "ablate",
            Mode::Align => "align",
            Mode::Crossview => "crossview",
            Mode::Sequential => "sequential",
        }
    }

    fn allowed_axes(self) -> &'static [&'static str] {
        match self {
            Mode::Simulate => &["k", "alpha", "selector", "fusion", "prompt"],
            Mode::Ablate => &["k", "alpha", "selector", "prompt"],
            Mode::Crossview => &["fusion"],
            Mode::Sequential => &["k", "selector"],
            Mode::Ground | Mode::Prompt | Mode::Align => &[],
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Sweep {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub selector: Option<Vec<Selector>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fusion: Option<Vec<FusionMethod>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prompt: Option<Vec<PromptMode>>,
}

impl Sweep {
    fn present_axes(&self) -> Vec<(&'static str, usize)> {
        let mut out = Vec::new();
        if let Some(v) = &self.k {
            out.push(("k", v.len()));
        }
        if let Some(v) = &self.alpha {
            out.push(("alpha", v.len()));
        }
        if let Some(v) = &self.selector {
            out.push(("selector", v.len()));
        }
        if let Some(v) = &self.fusion {
            out.push(("fusion", v.len()));
        }
        if let Some(v) = &self.prompt {
            out.push(("prompt", v.len()));
        }
        out
    }
}

/// File inputs for the `ground`, `prompt` and `align` modes. Relative paths
/// resolve against the spec file's directory.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Inputs {
    #[serde(default)]
    pub images: Vec<PathBuf>,
    /// JSON list (one entry per view) of proposal lists.
    #[serde(default)]
    pub proposals: Option<PathBuf>,
    /// JSON reference set.
    #[serde(default)]
    pub references: Option<PathBuf>,
    /// One PGM mask per view; `null` marks a fallback view.
    #[serde(default)]
    pub masks: Vec<Option<PathBuf>>,
    #[serde(default)]
    pub instruction: Option<String>,
    #[serde(default)]
    pub a: Option<PathBuf>,
    #[serde(default)]
    pub b: Option<PathBuf>,
}

fn default_seed_count() -> u64 {
    1000
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    pub name: String,
    pub mode: Mode,
    #[serde(default)]
    pub scene: SceneConfig,
    #[serde(default)]
    pub sweep: Sweep,
    /// Episodes per cell; seeds run from `scene.seed` upward.
    #[serde(default = "default_seed_count")]
    pub seeds: u64,
    /// Personal objects for sequential mode.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub targets: Option<Vec<TargetSpec>>,
    #[serde(default)]
    pub inputs: Inputs,
}

impl ExperimentSpec {
    pub fn from_json(text: &str) -> Result<Self, HarnessError> {
        serde_json::from_str(text).map_err(|e| spec_err(e.to_string()))
    }

    /// Parses a spec file and resolves relative input paths against its
    /// directory.
    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = fs::read_to_string(path).map_err(|source| HarnessError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let mut spec = Self::from_json(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        let inputs = &mut spec.inputs;
        inputs.images.iter_mut().for_each(fix);
        inputs.masks.iter_mut().flatten().for_each(fix);
        for p in [&mut inputs.proposals, &mut inputs.references, &mut inputs.a, &mut inputs.b]
            .into_iter()
            .flatten()
        {
            fix(p);
        }
        Ok(spec)
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        if self.name.is_empty() || self.name.contains(['/', '\\']) || self.name.starts_with('.') {
            return Err(spec_err(format!("name {:?} is not a plain file stem", self.name)));
        }
        let allowed = self.mode.allowed_axes();
        for (axis, len) in self.sweep.present_axes() {
            if !allowed.contains(&axis) {
                return Err(spec_err(format!(
                    "sweep axis {axis} is not valid for mode {}",
                    self.mode.name()
                )));
            }
            if len == 0 {
                return Err(spec_err(format!("sweep axis {axis} is empty")));
            }
        }
        let sim = matches!(
            self.mode,
            Mode::Simulate | Mode::Ablate | Mode::Crossview | Mode::Sequential
        );
        if sim && self.seeds == 0 {
            return Err(spec_err("seeds must be positive"));
        }
        if sim {
            for cell in self.cells() {
                cell.apply(&self.scene).validate()?;
            }
        }
        match self.mode {
            Mode::Align if self.inputs.a.is_none() || self.inputs.b.is_none() => {
                Err(spec_err("align mode needs inputs.a and inputs.b"))
            }
            Mode::Ground
                if self.inputs.images.is_empty()
                    || self.inputs.proposals.is_none()
                    || self.inputs.references.is_none() =>
            {
                Err(spec_err("ground mode needs inputs.images, inputs.proposals and inputs.references"))
            }
            Mode::Prompt if self.inputs.images.is_empty() || self.inputs.instruction.is_none() => {
                Err(spec_err("prompt mode needs inputs.images and inputs.instruction"))
            }
            Mode::Prompt if self.inputs.masks.len() != self.inputs.images.len() => Err(spec_err(format!(
                "prompt mode needs one mask entry per image ({} images, {} masks)",
                self.inputs.images.len(),
                self.inputs.masks.len()
            ))),
            Mode::Sequential if self.targets.as_ref().is_some_and(|t| t.len() < 2) => {
                Err(spec_err("sequential mode needs at least two targets"))
            }
            _ => Ok(()),
        }
    }

    /// Cartesian product of the sweep axes in the order k, alpha, selector,
    /// fusion, prompt. Missing axes contribute the scene's own value.
    pub fn cells(&self) -> Vec<Cell> {
        let s = &self.scene;
        let ks = self.sweep.k.clone().unwrap_or_else(|| vec![s.k]);
        let alphas = self.sweep.alpha.clone().unwrap_or_else(|| vec![s.alpha]);
        let selectors = self.sweep.selector.clone().unwrap_or_else(|| vec![s.selector]);
        let fusions = self.sweep.fusion.clone().unwrap_or_else(|| vec![s.fusion]);
        let prompts = self.sweep.prompt.clone().unwrap_or_else(|| vec![s.prompt]);
        let mut out = Vec::new();
        for &k in &ks {
            for &alpha in &alphas {
                for &selector in &selectors {
                    for &fusion in &fusions {
                        for &prompt in &prompts {
                            out.push(Cell {
                                k,
                                alpha,
                                selector,
                                fusion,
                                prompt,
                            });
                        }
                    }
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub k: usize,
    pub alpha: f64,
    pub selector: Selector,
    pub fusion: FusionMethod,
    pub prompt: PromptMode,
}

impl Cell {
    pub fn apply(&self, scene: &SceneConfig) -> SceneConfig {
        SceneConfig {
            k: self.k,
            alpha: self.alpha,
            selector: self.selector,
            fusion: self.fusion,
            prompt: self.prompt,
            ..scene.clone()
        }
    }
}

/// One report line. Metrics a mode does not produce are `None` and print as
/// `n/a`; percentages lie in [0, 100].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub name: String,
    pub mode: String,
    pub k: Option<usize>,
    pub alpha: Option<f64>,
    pub selector: Option<String>,
    pub fusion: Option<String>,
    pub prompt: Option<String>,
    pub seeds: Option<u64>,
    pub sr: Option<f64>,
    pub cmr: Option<f64>,
    pub fail: Option<f64>,
    pub case1: Option<f64>,
    pub case2: Option<f64>,
    pub case3: Option<f64>,
    pub retrieval_accuracy: Option<f64>,
    pub identification_accuracy: Option<f64>,
    pub exact_agreement: Option<f64>,
    pub two_step_sr: Option<f64>,
    pub wrong_object: Option<f64>,
    pub others: Option<f64>,
    pub mean_cosine: Option<f64>,
    pub std_cosine: Option<f64>,
    pub cka: Option<f64>,
    pub knn_top1: Option<f64>,
    pub grounded_views: Option<usize>,
    pub rewritten: Option<bool>,
    pub fingerprint: String,
    pub wall_time_ms: u64,
}

pub const COLUMNS: [&str; 28] = [
    "name",
    "mode",
    "k",
    "alpha",
    "selector",
    "fusion",
    "prompt",
    "seeds",
    "sr",
    "cmr",
    "fail",
    "case1",
    "case2",
    "case3",
    "retrieval_accuracy",
    "identification_accuracy",
    "exact_agreement",
    "two_step_sr",
    "wrong_object",
    "others",
    "mean_cosine",
    "std_cosine",
    "cka",
    "knn_top1",
    "grounded_views",
    "rewritten",
    "fingerprint",
    "wall_time_ms",
];

/// CSV text of one value: `n/a` for missing, strings verbatim, everything
/// else exactly as serde_json prints it.
fn opt<T: Serialize>(v: &Option<T>) -> String {
    match serde_json::to_value(v).expect("serializable") {
        serde_json::Value::Null => "n/a".to_string(),
        serde_json::Value::String(s) => s,
        other => other.to_string(),
    }
}

impl ReportRow {
    fn empty(spec: &ExperimentSpec, fingerprint: String) -> Self {
        Self {
            name: spec.name.clone(),
            mode: spec.mode.name().to_string(),
            k: None,
            alpha: None,
            selector: None,
            fusion: None,
            prompt: None,
            seeds: None,
            sr: None,
            cmr: None,
            fail: None,
            case1: None,
            case2: None,
            case3: None,
            retrieval_accuracy: None,
            identification_accuracy: None,
            exact_agreement: None,
            two_step_sr: None,
            wrong_object: None,
            others: None,
            mean_cosine: None,
            std_cosine: None,
            cka: None,
            knn_top1: None,
            grounded_views: None,
            rewritten: None,
            fingerprint,
            wall_time_ms: 0,
        }
    }

    fn with_cell(mut self, cell: &Cell, seeds: u64) -> Self {
        self.k = Some(cell.k);
        self.alpha = Some(cell.alpha);
        self.selector = Some(cell.selector.name().to_string());
        self.fusion = Some(cell.fusion.name().to_string());
        self.prompt = Some(cell.prompt.name().to_string());
        self.seeds = Some(seeds);
        self
    }

    /// Values in [`COLUMNS`] order.
    pub fn csv_fields(&self) -> Vec<String> {
        vec![
            self.name.clone(),
            self.mode.clone(),
            opt(&self.k),
            opt(&self.alpha),
            opt(&self.selector),
            opt(&self.fusion),
            opt(&self.prompt),
            opt(&self.seeds),
            opt(&self.sr),
            opt(&self.cmr),
            opt(&self.fail),
            opt(&self.case1),
            opt(&self.case2),
            opt(&self.case3),
            opt(&self.retrieval_accuracy),
            opt(&self.identification_accuracy),
            opt(&self.exact_agreement),
            opt(&self.two_step_sr),
            opt(&self.wrong_object),
            opt(&self.others),
            opt(&self.mean_cosine),
            opt(&self.std_cosine),
            opt(&self.cka),
            opt(&self.knn_top1),
            opt(&self.grounded_views),
            opt(&self.rewritten),
            self.fingerprint.clone(),
            self.wall_time_ms.to_string(),
        ]
    }
}

/// SHA-256 over the canonical JSON of everything that determines a row.
/// serde_json orders object keys, so equal inputs hash equally.
pub fn fingerprint(value: &impl Serialize) -> String {
    let canonical = serde_json::to_string(&serde_json::to_value(value).expect("serializable")).expect("serializable");
    let digest = Sha256::digest(canonical.as_bytes());
    digest.iter().fold(String::with_capacity(64), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    })
}

fn pct(num: usize, den: usize) -> Option<f64> {
    (den > 0).then(|| 100.0 * num as f64 / den as f64)
}

/// Share of episodes in which fusion `method` reaches the exhaustive
/// optimum of the initial association instance.
fn exact_agreement(pool: &rayon::ThreadPool, cfg: &SceneConfig, seeds: &[u64]) -> Result<Option<f64>, HarnessError> {
    use rayon::prelude::*;
    let outcomes: Vec<Option<bool>> = pool.install(|| {
        seeds
            .par_iter()
            .map(|&s| -> Result<Option<bool>, ConfigError> {
                let cfg = cfg.with_seed(s);
                let ep = gen_episode(&cfg)?;
                let present = ep.all_present();
                let target = &ep.targets[0];
                let det = MockDetector {
                    scene: SceneView {
                        episode: &ep,
                        present: &present,
                        salt: 0,
                        t: 0,
                    },
                    target: target.object,
                };
                let proposals = (0..cfg.views)
                    .map(|v| {
                        det.labeled(target.references.category(), v)
                            .into_iter()
                            .map(|(_, p)| p)
                            .collect()
                    })
                    .collect();
                let inst = AssociationInstance::new(
                    proposals,
                    target.references.references().to_vec(),
                    cfg.crossview.clone(),
                )
                .map_err(|e| ConfigError::Invalid(e.to_string()))?;
                let Ok(best) = crossview::solve_exact(&inst, cfg.crossview.exact_cap) else {
                    return Ok(None);
                };
                let got = crossview::solve(&inst, cfg.fusion, &cfg.crossview);
                let score = |a| crossview::score_assignment(&inst, a).expect("valid assignment");
                Ok(Some(score(&got) >= score(&best) - 1e-9))
            })
            .collect::<Result<Vec<_>, _>>()
    })?;
    let decided: Vec<bool> = outcomes.into_iter().flatten().collect();
    Ok(pct(decided.iter().filter(|&&b| b).count(), decided.len()))
}

fn run_sim_cell(
    spec: &ExperimentSpec,
    pool: &rayon::ThreadPool,
    cell: &Cell,
) -> Result<ReportRow, HarnessError> {
    let cfg = cell.apply(&spec.scene);
    let seeds: Vec<u64> = (0..spec.seeds).map(|i| cfg.seed.wrapping_add(i)).collect();
    let fp = fingerprint(&(spec.mode.name(), &cfg, spec.seeds, &spec.targets));
    let mut row = ReportRow::empty(spec, fp).with_cell(cell, spec.seeds);
    if spec.mode == Mode::Sequential {
        let targets = spec.targets.clone().unwrap_or_else(default_targets);
        let reports = run_sequential_batch(pool, &cfg, &targets, &seeds)?;
        let n = reports.len();
        row.two_step_sr = pct(reports.iter().filter(|r| r.two_step_success).count(), n);
        row.wrong_object = pct(reports.iter().filter(|r| r.wrong_object).count(), n);
        row.others = pct(reports.iter().filter(|r| r.others).count(), n);
        return Ok(row);
    }
    let reports = run_batch(pool, &cfg, &seeds)?;
    let s = BatchSummary::from_reports(&reports);
    let [c1, c2, c3] = s.cases();
    row.sr = s.sr();
    row.cmr = s.cmr();
    row.fail = s.fail();
    row.case1 = c1;
    row.case2 = c2;
    row.case3 = c3;
    row.retrieval_accuracy = s.retrieval_accuracy();
    row.identification_accuracy = s.identification_accuracy();
    if spec.mode == Mode::Crossview {
        row.exact_agreement = exact_agreement(pool, &cfg, &seeds)?;
    }
    Ok(row)
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, HarnessError> {
    let text = fs::read_to_string(path).map_err(|source| HarnessError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    serde_json::from_str(&text).map_err(|e| spec_err(format!("{}: {e}", path.display())))
}

fn format_err(path: &Path) -> impl FnOnce(FormatError) -> HarnessError + '_ {
    move |source| HarnessError::Format {
        path: path.to_path_buf(),
        source,
    }
}

fn load_images(paths: &[PathBuf]) -> Result<Vec<RasterImage>, HarnessError> {
    paths
        .iter()
        .map(|p| formats::load_image(p).map_err(format_err(p)))
        .collect()
}

/// Detector replaying proposals stored on disk.
struct RecordedDetector(Vec<Vec<Proposal>>);

impl DetectorPort for RecordedDetector {
    fn detect(&self, _category: &str, view_index: usize, _image: &RasterImage) -> Result<Vec<Proposal>, PortError> {
        self.0
            .get(view_index)
            .cloned()
            .ok_or_else(|| PortError(format!("no proposals for view {view_index}")))
    }
}

/// Segmenter that returns a recorded proposal's own mask, or the filled box
/// when the proposal carries none.
struct RecordedSegmenter<'a>(&'a [Vec<Proposal>]);

impl SegmenterPort for RecordedSegmenter<'_> {
    fn segment(&self, view_index: usize, image: &RasterImage, bbox: &BoundingBox) -> Result<Mask, PortError> {
        let stored = self.0.get(view_index).and_then(|ps| {
            ps.iter()
                .find(|p| p.bbox() == bbox)
                .and_then(|p| p.mask().cloned())
        });
        match stored {
            Some(m) => Ok(m),
            None => Mask::from_box(image.width(), image.height(), bbox).map_err(|e| PortError(e.to_string())),
        }
    }
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<(), HarnessError> {
    fs::write(path, bytes).map_err(|source| HarnessError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn run_ground(spec: &ExperimentSpec, out: &Path) -> Result<ReportRow, HarnessError> {
    let inputs = &spec.inputs;
    let images = load_images(&inputs.images)?;
    let proposals: Vec<Vec<Proposal>> = read_json(inputs.proposals.as_ref().expect("validated"))?;
    let refs: ReferenceSet = read_json(inputs.references.as_ref().expect("validated"))?;
    if proposals.len() != images.len() {
        return Err(spec_err(format!(
            "{} proposal lists for {} images",
            proposals.len(),
            images.len()
        )));
    }
    let detector = RecordedDetector(proposals.clone());
    let segmenter = RecordedSegmenter(&proposals);
    let outcome = ground_initial_with(&images, &refs, &detector, &segmenter, spec.scene.selector);
    let mut grounded = 0;
    for g in &outcome.per_view {
        if let Some(mask) = &g.mask {
            grounded += 1;
            let path = out.join(format!("{}.mask{}.pgm", spec.name, g.view_index));
            formats::save_mask(&path, mask).map_err(format_err(&path))?;
        }
    }
    let json = serde_json::to_vec_pretty(&outcome).expect("serializable");
    write_bytes(&out.join(format!("{}.grounding.json", spec.name)), &json)?;
    let fp = fingerprint(&(spec.mode.name(), &spec.scene.selector, &inputs));
    let mut row = ReportRow::empty(spec, fp);
    row.selector = Some(spec.scene.selector.name().to_string());
    row.grounded_views = Some(grounded);
    Ok(row)
}

fn run_prompt(spec: &ExperimentSpec, out: &Path) -> Result<ReportRow, HarnessError> {
    use crate::grounder::{GroundingOutcome, ViewGrounding};
    let inputs = &spec.inputs;
    let images = load_images(&inputs.images)?;
    let mut per_view = Vec::with_capacity(images.len());
    for (v, m) in inputs.masks.iter().enumerate() {
        let mask = match m {
            Some(p) => Some(formats::load_mask(p).map_err(format_err(p))?),
            None => None,
        };
        per_view.push(ViewGrounding {
            view_index: v,
            fallback: mask.is_none(),
            mask,
            winner: None,
            selection: None,
        });
    }
    let grounding = GroundingOutcome { per_view };
    let instruction = inputs.instruction.clone().expect("validated");
    let obs = Observation::new(images, Vec::new(), instruction.clone()).map_err(|e| spec_err(e.to_string()))?;
    let style = spec.scene.style().map_err(|e| spec_err(e.to_string()))?;
    let prompted =
        compose_prompt_with(&obs, &grounding, &style, spec.scene.prompt).map_err(|e| spec_err(e.to_string()))?;
    for (v, img) in prompted.views().iter().enumerate() {
        let path = out.join(format!("{}.view{}.ppm", spec.name, v));
        formats::save_image(&path, img).map_err(format_err(&path))?;
    }
    let rewritten = prompted.instruction() != instruction;
    let meta = serde_json::json!({
        "instruction": prompted.instruction(),
        "rewritten": rewritten,
        "trigger_found": parse_category(&instruction).is_ok(),
    });
    write_bytes(
        &out.join(format!("{}.prompt.json", spec.name)),
        &serde_json::to_vec_pretty(&meta).expect("serializable"),
    )?;
    let fp = fingerprint(&(
        spec.mode.name(),
        spec.scene.prompt,
        spec.scene.tint,
        spec.scene.alpha,
        &inputs,
    ));
    let mut row = ReportRow::empty(spec, fp);
    row.alpha = Some(spec.scene.alpha);
    row.prompt = Some(spec.scene.prompt.name().to_string());
    row.grounded_views = Some(grounding.per_view.iter().filter(|g| !g.fallback).count());
    row.rewritten = Some(rewritten);
    Ok(row)
}

fn run_align(spec: &ExperimentSpec) -> Result<ReportRow, HarnessError> {
    let pa = spec.inputs.a.as_ref().expect("validated");
    let pb = spec.inputs.b.as_ref().expect("validated");
    let a = formats::load_embedding_matrix(pa).map_err(format_err(pa))?;
    let b = formats::load_embedding_matrix(pb).map_err(format_err(pb))?;
    let report = align(&a, &b)?;
    let fp = fingerprint(&(spec.mode.name(), a.values(), a.cols(), b.values(), b.cols()));
    let mut row = ReportRow::empty(spec, fp);
    row.mean_cosine = Some(report.mean_cosine);
    row.std_cosine = Some(report.std_cosine);
    row.cka = Some(report.cka);
    row.knn_top1 = Some(report.knn_top1);
    Ok(row)
}

/// Runs every cell of `spec` and writes `<name>.csv` and `<name>.json`
/// (plus mode-specific artifacts) under `out`. Nothing is written outside
/// `out`.
pub fn run_experiment(spec: &ExperimentSpec, out: &Path, workers: usize) -> Result<Vec<ReportRow>, HarnessError> {
    spec.validate()?;
    fs::create_dir_all(out).map_err(|source| HarnessError::Io {
        path: out.to_path_buf(),
        source,
    })?;
    let rows = run_rows(spec, out, workers)?;
    write_reports(out, &spec.name, &rows)?;
    Ok(rows)
}

/// Produces report rows without writing the summary files.
pub fn run_rows(spec: &ExperimentSpec, out: &Path, workers: usize) -> Result<Vec<ReportRow>, HarnessError> {
    spec.validate()?;
    let timed = |f: &mut dyn FnMut() -> Result<ReportRow, HarnessError>| {
        let start = Instant::now();
        let mut row = f()?;
        row.wall_time_ms = start.elapsed().as_millis() as u64;
        Ok::<_, HarnessError>(row)
    };
    match spec.mode {
        Mode::Ground => Ok(vec![timed(&mut || run_ground(spec, out))?]),
        Mode::Prompt => Ok(vec![timed(&mut || run_prompt(spec, out))?]),
        Mode::Align => Ok(vec![timed(&mut || run_align(spec))?]),
        Mode::Simulate | Mode::Ablate | Mode::Crossview | Mode::Sequential => {
            let pool = crate::sim::worker_pool(workers.max(1))?;
            spec.cells()
                .iter()
                .map(|cell| timed(&mut || run_sim_cell(spec, &pool, cell)))
                .collect()
        }
    }
}

/// Column header plus one line per row.
pub fn render_table(rows: &[ReportRow]) -> String {
    let mut s = COLUMNS.join(",");
    s.push('\n');
    for r in rows {
        s.push_str(&r.csv_fields().join(","));
        s.push('\n');
    }
    s
}

pub fn render_csv(rows: &[ReportRow], generated: &str) -> String {
    format!("# generated {generated}\n{}", render_table(rows))
}

pub fn render_json(rows: &[ReportRow], generated: &str) -> String {
    let mut s = format!("{{\n  \"generated\": {},\n  \"rows\": [", serde_json::to_string(generated).expect("string"));
    for (i, r) in rows.iter().enumerate() {
        if i > 0 {
            s.push(',');
        }
        s.push_str("\n    ");
        s.push_str(&serde_json::to_string(r).expect("serializable"));
    }
    s.push_str("\n  ]\n}\n");
    s
}

pub fn write_reports(out: &Path, name: &str, rows: &[ReportRow]) -> Result<(), HarnessError> {
    let generated = chrono::Utc::now().to_rfc3339();
    write_bytes(&out.join(format!("{name}.csv")), render_csv(rows, &generated).as_bytes())?;
    write_bytes(&out.join(format!("{name}.json")), render_json(rows, &generated).as_bytes())?;
    Ok(())
}
