use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::config::{ConfigError, SceneConfig};
use super::rng::{stream_rng, Stream};
use crate::scene::{BoundingBox, Embedding, Mask, RasterImage, ReferenceSet, Rgb};

pub type ObjectId = u32;

pub const BACKGROUND: Rgb = [16, 16, 16];

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SceneObject {
    pub id: ObjectId,
    pub category: String,
    /// Which personal target this object belongs to.
    pub group: usize,
    /// 0 for the personal object itself, `m + 1` for its m-th distractor.
    pub member: usize,
    pub identity: Embedding,
    pub color: Rgb,
    pub velocity: (i32, i32),
    /// Top-left corner at t = 0, per view.
    pub origins: Vec<(u32, u32)>,
    pub observed: Vec<Embedding>,
    pub occluded: Vec<bool>,
}

impl SceneObject {
    pub fn is_target(&self) -> bool {
        self.member == 0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TargetSpec {
    pub category: String,
    pub instruction: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PersonalTarget {
    pub object: ObjectId,
    pub references: ReferenceSet,
    pub instruction: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Episode {
    pub config: SceneConfig,
    pub objects: Vec<SceneObject>,
    pub targets: Vec<PersonalTarget>,
}

pub fn object_name(id: ObjectId) -> String {
    format!("object-{id}")
}

pub fn parse_object_name(name: &str) -> Option<ObjectId> {
    name.strip_prefix("object-")?.parse().ok()
}

fn gaussian(rng: &mut impl Rng, dim: usize) -> Vec<f64> {
    (0..dim).map(|_| rng.sample(StandardNormal)).collect()
}

fn unit(v: &[f64]) -> Result<Embedding, ConfigError> {
    Embedding::normalize(v).map_err(|e| ConfigError::Invalid(e.to_string()))
}

/// `normalize(base + sigma * n)` with `n` standard normal; exactly `base`
/// when `sigma` is zero.
fn perturb(base: &Embedding, sigma: f64, rng: &mut impl Rng) -> Result<Embedding, ConfigError> {
    if sigma == 0.0 {
        return Ok(base.clone());
    }
    let noisy: Vec<f64> = base
        .as_slice()
        .iter()
        .zip(gaussian(rng, base.dim()))
        .map(|(b, n)| b + sigma * n)
        .collect();
    unit(&noisy)
}

/// `rho * t + sqrt(1 - rho^2) * u` with `u` a random unit vector orthogonal
/// to `t`.
fn lookalike(t: &Embedding, rho: f64, rng: &mut impl Rng) -> Result<Embedding, ConfigError> {
    loop {
        let mut u = gaussian(rng, t.dim());
        let along: f64 = u.iter().zip(t.as_slice()).map(|(a, b)| a * b).sum();
        for (x, ti) in u.iter_mut().zip(t.as_slice()) {
            *x -= along * ti;
        }
        let n = u.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n < 1e-9 {
            continue;
        }
        let s = (1.0 - rho * rho).sqrt();
        let d: Vec<f64> = t
            .as_slice()
            .iter()
            .zip(&u)
            .map(|(ti, ui)| rho * ti + s * ui / n)
            .collect();
        return unit(&d);
    }
}

/// Unit direction separating `d` from `t`: the part of `d` orthogonal to `t`.
fn distinguishing(d: &Embedding, t: &Embedding) -> Result<Embedding, ConfigError> {
    let along = d.dot(t);
    let v: Vec<f64> = d
        .as_slice()
        .iter()
        .zip(t.as_slice())
        .map(|(di, ti)| di - along * ti)
        .collect();
    unit(&v)
}

pub fn gen_episode(cfg: &SceneConfig) -> Result<Episode, ConfigError> {
    let spec = TargetSpec {
        category: cfg.category.clone(),
        instruction: cfg.instruction.clone(),
    };
    gen_episode_multi(cfg, &[spec])
}

/// Scene with one personal object per entry of `targets`, each with
/// `cfg.n_distractors` same-category lookalikes.
pub fn gen_episode_multi(cfg: &SceneConfig, targets: &[TargetSpec]) -> Result<Episode, ConfigError> {
    cfg.validate()?;
    if targets.is_empty() {
        return Err(ConfigError::Invalid("no targets".into()));
    }
    let per_group = cfg.n_distractors + 1;
    let n = targets.len() * per_group;
    let (cols, rows) = cfg.grid();
    if (cols as usize) * (rows as usize) < n {
        return Err(ConfigError::Placement { objects: n, cols, rows });
    }
    let seed = cfg.seed;

    let mut identities = Vec::with_capacity(n);
    for j in 0..targets.len() {
        let t = unit(&gaussian(&mut stream_rng(seed, Stream::Identity, &[j as u64, 0]), cfg.dim))?;
        for m in 0..cfg.n_distractors {
            let mut rng = stream_rng(seed, Stream::Identity, &[j as u64, m as u64 + 1]);
            identities.push((j, m + 1, lookalike(&t, cfg.rho, &mut rng)?));
        }
        identities.push((j, 0, t));
    }
    identities.sort_by_key(|&(j, m, _)| (j, m));

    let mut place = stream_rng(seed, Stream::Placement, &[]);
    let mut ids: Vec<ObjectId> = (0..n as u32).collect();
    ids.shuffle(&mut place);
    let s = cfg.speed as i32;
    let looks: Vec<(Rgb, (i32, i32))> = (0..n)
        .map(|_| {
            let color = [
                place.random_range(40..=200u8),
                place.random_range(40..=200u8),
                place.random_range(40..=200u8),
            ];
            let v = (place.random_range(-s..=s), place.random_range(-s..=s));
            (color, v)
        })
        .collect();
    let cell = cfg.cell_size();
    let inset = 1 + cfg.motion_margin();
    let cells: Vec<Vec<(u32, u32)>> = (0..cfg.views)
        .map(|_| {
            let mut all: Vec<(u32, u32)> = (0..rows)
                .flat_map(|r| (0..cols).map(move |c| (c * cell + inset, r * cell + inset)))
                .collect();
            all.shuffle(&mut place);
            all
        })
        .collect();

    let mut occluded_target = vec![vec![false; cfg.views]; targets.len()];
    for (j, occ) in occluded_target.iter_mut().enumerate() {
        for (v, o) in occ.iter_mut().enumerate() {
            let mut rng = stream_rng(seed, Stream::Occlusion, &[j as u64, v as u64]);
            let forced = j == 0 && cfg.occluded_views.contains(&v);
            *o = forced || rng.random::<f64>() < cfg.occlusion;
        }
        if occ.iter().all(|&o| o) {
            let free: Vec<usize> = (0..cfg.views)
                .filter(|v| !(j == 0 && cfg.occluded_views.contains(v)))
                .collect();
            let mut rng = stream_rng(seed, Stream::Occlusion, &[j as u64, u64::MAX]);
            occ[free[rng.random_range(0..free.len())]] = false;
        }
    }

    let mut objects = Vec::with_capacity(n);
    for (role, (j, m, identity)) in identities.into_iter().enumerate() {
        let id = ids[role];
        let observed = (0..cfg.views)
            .map(|v| {
                let mut rng = stream_rng(seed, Stream::ObsNoise, &[v as u64, j as u64, m as u64]);
                perturb(&identity, cfg.obs_noise, &mut rng)
            })
            .collect::<Result<Vec<_>, _>>()?;
        let (color, velocity) = looks[role];
        objects.push(SceneObject {
            id,
            category: targets[j].category.clone(),
            group: j,
            member: m,
            identity,
            color,
            velocity,
            origins: cells.iter().map(|c| c[id as usize]).collect(),
            observed,
            occluded: if m == 0 {
                occluded_target[j].clone()
            } else {
                vec![false; cfg.views]
            },
        });
    }
    objects.sort_by_key(|o| o.id);

    let mut personal = Vec::with_capacity(targets.len());
    for (j, spec) in targets.iter().enumerate() {
        let target = objects.iter().find(|o| o.group == j && o.member == 0).expect("target exists");
        let decoy = objects
            .iter()
            .find(|o| o.group == j && o.member == 1)
            .map(|o| distinguishing(&o.identity, &target.identity))
            .transpose()?;
        let refs = (0..cfg.k)
            .map(|k| {
                let mut rng = stream_rng(seed, Stream::RefNoise, &[j as u64, k as u64]);
                let base = if k < cfg.corrupt_refs {
                    match &decoy {
                        Some(d) => d.clone(),
                        None => unit(&gaussian(&mut rng, cfg.dim))?,
                    }
                } else {
                    target.identity.clone()
                };
                perturb(&base, cfg.ref_noise, &mut rng)
            })
            .collect::<Result<Vec<_>, _>>()?;
        let references = ReferenceSet::new(object_name(target.id), spec.category.clone(), refs)
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        personal.push(PersonalTarget {
            object: target.id,
            references,
            instruction: spec.instruction.clone(),
        });
    }

    Ok(Episode {
        config: cfg.clone(),
        objects,
        targets: personal,
    })
}

impl Episode {
    pub fn views(&self) -> usize {
        self.config.views
    }

    pub fn width(&self) -> u32 {
        self.config.image_width
    }

    pub fn height(&self) -> u32 {
        self.config.image_height
    }

    pub fn object(&self, id: ObjectId) -> &SceneObject {
        &self.objects[id as usize]
    }

    pub fn all_present(&self) -> Vec<bool> {
        vec![true; self.objects.len()]
    }

    pub fn is_visible(&self, id: ObjectId, view: usize) -> bool {
        !self.object(id).occluded[view]
    }

    /// Tight extent of an object, or `None` if it is occluded in `view`.
    /// Objects stop at the last configured step.
    pub fn object_box(&self, id: ObjectId, view: usize, t: usize) -> Option<BoundingBox> {
        let o = self.object(id);
        if o.occluded[view] {
            return None;
        }
        let t = t.min(self.config.steps - 1) as i64;
        let (x0, y0) = o.origins[view];
        let x = x0 as i64 + o.velocity.0 as i64 * t;
        let y = y0 as i64 + o.velocity.1 as i64 * t;
        let side = self.config.object_size as i64 - 1;
        BoundingBox::new(x as u32, y as u32, (x + side) as u32, (y + side) as u32).ok()
    }

    pub fn object_mask(&self, id: ObjectId, view: usize, t: usize) -> Option<Mask> {
        let b = self.object_box(id, view, t)?;
        Mask::from_box(self.width(), self.height(), &b).ok()
    }

    pub fn render(&self, view: usize, t: usize, present: &[bool]) -> RasterImage {
        let mut img = RasterImage::filled(self.width(), self.height(), BACKGROUND).expect("positive size");
        for o in &self.objects {
            if !present[o.id as usize] {
                continue;
            }
            if let Some(b) = self.object_box(o.id, view, t) {
                for y in b.y_min()..=b.y_max() {
                    for x in b.x_min()..=b.x_max() {
                        img.set(x, y, o.color);
                    }
                }
            }
        }
        img
    }

    /// Pixels of `mask` covering each present, visible object.
    pub fn overlap_counts(&self, view: usize, t: usize, mask: &Mask, present: &[bool]) -> Vec<(ObjectId, usize)> {
        let mut out = Vec::new();
        for o in &self.objects {
            if !present[o.id as usize] {
                continue;
            }
            let Some(b) = self.object_box(o.id, view, t) else {
                continue;
            };
            let mut count = 0;
            for y in b.y_min()..=b.y_max() {
                for x in b.x_min()..=b.x_max() {
                    if mask.get(x, y) {
                        count += 1;
                    }
                }
            }
            if count > 0 {
                out.push((o.id, count));
            }
        }
        out
    }

    /// The object a mask covers most; ties go to the lowest id.
    pub fn identify(&self, view: usize, t: usize, mask: &Mask, present: &[bool]) -> Option<ObjectId> {
        self.overlap_counts(view, t, mask, present)
            .into_iter()
            .fold(None, |best: Option<(ObjectId, usize)>, (id, c)| match best {
                Some((_, bc)) if bc >= c => best,
                _ => Some((id, c)),
            })
            .map(|(id, _)| id)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_noise_limit() {
        let cfg = SceneConfig {
            rho: 0.0,
            ..SceneConfig::noiseless()
        };
        let ep = gen_episode(&cfg).unwrap();
        let target = ep.object(ep.targets[0].object);
        for e in &target.observed {
            assert_eq!(e, &target.identity);
        }
        for r in ep.targets[0].references.references() {
            assert_eq!(r, &target.identity);
        }
        for o in ep.objects.iter().filter(|o| !o.is_target()) {
            assert!(o.identity.dot(&target.identity).abs() < 1e-12);
        }
    }

    #[test]
    fn distractor_similarity_is_rho() {
        let ep = gen_episode(&SceneConfig::default()).unwrap();
        let t = &ep.object(ep.targets[0].object).identity;
        for o in ep.objects.iter().filter(|o| !o.is_target()) {
            assert!((o.identity.dot(t) - 0.8).abs() < 1e-9);
        }
    }

    #[test]
    fn boxes_never_overlap_and_stay_in_frame() {
        for seed in 0..50 {
            let cfg = SceneConfig {
                n_distractors: 3,
                speed: 2,
                steps: 5,
                seed,
                ..SceneConfig::default()
            };
            let ep = gen_episode(&cfg).unwrap();
            let present = ep.all_present();
            for v in 0..cfg.views {
                for t in 0..cfg.steps {
                    let masks: Vec<Mask> = ep.objects.iter().filter_map(|o| ep.object_mask(o.id, v, t)).collect();
                    for (i, a) in masks.iter().enumerate() {
                        assert_eq!(a.count(), 100);
                        for b in &masks[i + 1..] {
                            assert_eq!(a.intersection_count(b), 0);
                        }
                    }
                    for o in &ep.objects {
                        if let Some(m) = ep.object_mask(o.id, v, t) {
                            assert_eq!(ep.identify(v, t, &m, &present), Some(o.id));
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn placement_capacity_is_checked() {
        let cfg = SceneConfig {
            n_distractors: 12,
            ..SceneConfig::default()
        };
        assert!(matches!(gen_episode(&cfg), Err(ConfigError::Placement { .. })));
    }

    #[test]
    fn target_visible_somewhere() {
        for seed in 0..100 {
            let cfg = SceneConfig {
                occlusion: 0.9,
                seed,
                ..SceneConfig::default()
            };
            let ep = gen_episode(&cfg).unwrap();
            let target = ep.object(ep.targets[0].object);
            assert!(target.occluded.iter().any(|o| !o));
        }
        let cfg = SceneConfig {
            occluded_views: vec![0, 2],
            occlusion: 1.0,
            ..SceneConfig::default()
        };
        let ep = gen_episode(&cfg).unwrap();
        assert_eq!(ep.object(ep.targets[0].object).occluded, vec![true, false, true]);
    }

    #[test]
    fn references_do_not_depend_on_k() {
        let small = gen_episode(&SceneConfig { k: 3, ..Default::default() }).unwrap();
        let large = gen_episode(&SceneConfig { k: 7, ..Default::default() }).unwrap();
        assert_eq!(
            small.targets[0].references.references(),
            &large.targets[0].references.references()[..3]
        );
        assert_eq!(small.objects, large.objects);
    }

    #[test]
    fn names_round_trip() {
        assert_eq!(parse_object_name(&object_name(17)), Some(17));
        assert_eq!(parse_object_name("cup"), None);
    }
}
