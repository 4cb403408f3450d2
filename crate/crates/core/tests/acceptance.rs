//! One test per acceptance criterion. Each prints a single `PASS` or `FAIL`
//! line before asserting, so `--nocapture` output reads as a checklist.

use std::time::{Duration, Instant};

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde_json::json;
use vap_core::crossview::{
    hungarian, score_assignment, solve_cluster, solve_exact, solve_pairwise, Assignment, AssociationInstance,
    CrossviewParams,
};
use vap_core::embedalign::{knn_top1, linear_cka, rowwise_cosine, EmbeddingMatrix};
use vap_core::experiment::{run_experiment, ExperimentSpec};
use vap_core::matcher::{vote_select_embeddings, Selector};
use vap_core::prompter::{
    blend_channel, blend_overlay, rewrite_or_passthrough, Geometry, PromptMode, PromptStyle, TintColor,
};
use vap_core::scene::{BoundingBox, Embedding, Mask, Proposal, RasterImage};
use vap_core::sim::{run_batch, worker_pool, BatchSummary, FailureCase, SceneConfig};

fn report(name: &str, ok: bool, detail: String, elapsed: Duration) {
    let verdict = if ok { "PASS" } else { "FAIL" };
    println!("{verdict} {name}: {detail} [{:.2}s]", elapsed.as_secs_f64());
    assert!(ok, "{name}: {detail}");
}

fn gaussian(rng: &mut ChaCha8Rng, d: usize) -> Vec<f64> {
    (0..d).map(|_| rng.sample(StandardNormal)).collect()
}

fn unit(v: &[f64]) -> Embedding {
    Embedding::normalize(v).unwrap()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

// ---------------------------------------------------------------------------
// Voting rule

/// Literal reading of the rule: each reference votes for its most similar
/// proposal (first index on equal similarity); most votes wins, then highest
/// mean cosine, then lowest index.
fn vote_oracle(props: &[Embedding], refs: &[Embedding]) -> usize {
    // Cosine of unit vectors lies in [-1, 1]; rounding must not push a
    // self-similarity past 1 and break a tie that is exact in real arithmetic.
    let sim = |i: usize, k: usize| dot(props[i].as_slice(), refs[k].as_slice()).clamp(-1.0, 1.0);
    let votes_for = |i: usize| {
        (0..refs.len())
            .filter(|&k| {
                let best = (0..props.len()).map(|j| sim(j, k)).fold(f64::NEG_INFINITY, f64::max);
                (0..props.len()).find(|&j| sim(j, k) == best) == Some(i)
            })
            .count()
    };
    let mean = |i: usize| (0..refs.len()).map(|k| sim(i, k)).sum::<f64>() / refs.len() as f64;
    let mut order: Vec<usize> = (0..props.len()).collect();
    order.sort_by(|&a, &b| {
        votes_for(b)
            .cmp(&votes_for(a))
            .then(mean(b).partial_cmp(&mean(a)).unwrap())
            .then(a.cmp(&b))
    });
    order[0]
}

/// Mixes continuous instances with one-hot ones, where vote-count ties and
/// mean-cosine ties occur exactly.
fn vote_instance(rng: &mut ChaCha8Rng, kind: usize) -> (Vec<Embedding>, Vec<Embedding>) {
    let n = rng.random_range(1..=6);
    let k = rng.random_range(1..=7);
    match kind {
        0 => {
            let d = rng.random_range(2..=8);
            let p = (0..n).map(|_| unit(&gaussian(rng, d))).collect();
            let r = (0..k).map(|_| unit(&gaussian(rng, d))).collect();
            (p, r)
        }
        1 => {
            let d = 4;
            let axis = |rng: &mut ChaCha8Rng| {
                let mut v = vec![0.0; d];
                v[rng.random_range(0..d)] = 1.0;
                unit(&v)
            };
            let p = (0..n).map(|_| axis(rng)).collect();
            let r = (0..k).map(|_| axis(rng)).collect();
            (p, r)
        }
        _ => {
            let d = 3;
            let base: Vec<Embedding> = (0..3).map(|_| unit(&gaussian(rng, d))).collect();
            let p = (0..n).map(|_| base[rng.random_range(0..3)].clone()).collect();
            let r = (0..k).map(|_| base[rng.random_range(0..3)].clone()).collect();
            (p, r)
        }
    }
}

#[test]
fn voting_rule_matches_brute_force() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut agree = 0;
    let mut ties = 0;
    for i in 0..1000 {
        let (p, r) = vote_instance(&mut rng, i % 3);
        let got = vote_select_embeddings(&p, &r).unwrap();
        ties += usize::from(got.tie_broken);
        agree += usize::from(got.winner_index == vote_oracle(&p, &r));
    }
    let elapsed = start.elapsed();
    report(
        "voting rule vs brute force",
        agree == 1000 && elapsed < Duration::from_secs(5),
        format!("{agree}/1000 agree, {ties} vote-count ties"),
        elapsed,
    );
}

// ---------------------------------------------------------------------------
// Hungarian

fn permutations(n: usize) -> Vec<Vec<usize>> {
    if n == 0 {
        return vec![Vec::new()];
    }
    let mut out = Vec::new();
    for p in permutations(n - 1) {
        for pos in 0..=p.len() {
            let mut q = p.clone();
            q.insert(pos, n - 1);
            out.push(q);
        }
    }
    out
}

fn assignment_cost(cost: &[Vec<f64>], perm: &[usize]) -> f64 {
    perm.iter().enumerate().map(|(r, &c)| cost[r][c]).sum()
}

#[test]
fn hungarian_matches_factorial_brute_force() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let perms: Vec<Vec<Vec<usize>>> = (0..=6).map(permutations).collect();
    let mut exact = 0;
    for i in 0..2000 {
        let n = 1 + i % 6;
        let cost: Vec<Vec<f64>> = (0..n)
            .map(|_| {
                (0..n)
                    .map(|_| {
                        if i % 2 == 0 {
                            f64::from(rng.random_range(0..5u8))
                        } else {
                            rng.random_range(-10.0..10.0)
                        }
                    })
                    .collect()
            })
            .collect();
        let got = hungarian(&cost).unwrap();
        let mut seen = vec![false; n];
        let is_perm = got.len() == n && got.iter().all(|&c| c < n && !std::mem::replace(&mut seen[c], true));
        let best = perms[n]
            .iter()
            .map(|p| assignment_cost(&cost, p))
            .fold(f64::INFINITY, f64::min);
        exact += usize::from(is_perm && assignment_cost(&cost, &got) == best);
    }
    let elapsed = start.elapsed();
    report(
        "hungarian optimality",
        exact == 2000 && elapsed < Duration::from_secs(30),
        format!("{exact}/2000 equal to brute force"),
        elapsed,
    );
}

// ---------------------------------------------------------------------------
// Cross-view MAP

struct Raw {
    embeddings: Vec<Vec<Vec<f64>>>,
    confidences: Vec<Vec<f64>>,
    refs: Vec<Vec<f64>>,
    params: CrossviewParams,
}

impl Raw {
    fn instance(&self) -> AssociationInstance {
        let proposals = self
            .embeddings
            .iter()
            .zip(&self.confidences)
            .map(|(es, cs)| {
                es.iter()
                    .zip(cs)
                    .map(|(e, &c)| {
                        Proposal::new(BoundingBox::new(0, 0, 1, 1).unwrap(), c, unit(e), None).unwrap()
                    })
                    .collect()
            })
            .collect();
        let refs = self.refs.iter().map(|r| unit(r)).collect();
        AssociationInstance::new(proposals, refs, self.params.clone()).unwrap()
    }

    /// Objective evaluated directly from the raw vectors.
    fn score(&self, choice: &[Option<usize>]) -> f64 {
        let n = |v: &[f64]| {
            let s = dot(v, v).sqrt();
            v.iter().map(|x| x / s).collect::<Vec<_>>()
        };
        let mut total = 0.0;
        for (v, c) in choice.iter().enumerate() {
            match c {
                Some(i) => {
                    let e = n(&self.embeddings[v][*i]);
                    total += self.refs.iter().map(|r| dot(&e, &n(r))).sum::<f64>();
                    total += self.params.beta * self.confidences[v][*i];
                }
                None => total += self.params.beta * self.params.null_unary,
            }
            for (u, d) in choice.iter().enumerate().skip(v + 1) {
                if let (Some(i), Some(j)) = (c, d) {
                    let cos = dot(&n(&self.embeddings[v][*i]), &n(&self.embeddings[u][*j]));
                    total += self.params.lambda * cos;
                }
            }
        }
        total
    }

    fn enumerate(&self) -> (Vec<Option<usize>>, f64, f64) {
        let sizes: Vec<usize> = self.embeddings.iter().map(Vec::len).collect();
        let mut all: Vec<Vec<Option<usize>>> = vec![Vec::new()];
        for &m in &sizes {
            all = all
                .into_iter()
                .flat_map(|prefix| {
                    (0..=m).map(move |c| {
                        let mut p = prefix.clone();
                        p.push((c < m).then_some(c));
                        p
                    })
                })
                .collect();
        }
        let mut scored: Vec<(f64, Vec<Option<usize>>)> = all.into_iter().map(|c| (self.score(&c), c)).collect();
        scored.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap());
        let runner_up = scored.get(1).map_or(f64::NEG_INFINITY, |s| s.0);
        (scored[0].1.clone(), scored[0].0, runner_up)
    }
}

fn raw_instance(rng: &mut ChaCha8Rng) -> Raw {
    let d = 6;
    let views = rng.random_range(1..=3);
    let objects: Vec<Vec<f64>> = (0..3).map(|_| gaussian(rng, d)).collect();
    let mut embeddings = Vec::new();
    let mut confidences = Vec::new();
    for _ in 0..views {
        let m = rng.random_range(0..=4);
        let mut es = Vec::new();
        for _ in 0..m {
            let o = &objects[rng.random_range(0..3)];
            let noise = rng.random_range(0.0..1.0);
            es.push(o.iter().map(|x| x + noise * rng.sample::<f64, _>(StandardNormal)).collect());
        }
        confidences.push((0..m).map(|_| rng.random_range(0.0..=1.0)).collect());
        embeddings.push(es);
    }
    let refs = (0..rng.random_range(1..=4)).map(|_| gaussian(rng, d)).collect();
    let params = CrossviewParams {
        lambda: rng.random_range(0.0..2.0),
        beta: rng.random_range(0.0..1.0),
        null_unary: rng.random_range(-0.5..1.0),
        ..CrossviewParams::default()
    };
    Raw {
        embeddings,
        confidences,
        refs,
        params,
    }
}

#[test]
fn crossview_exact_matches_independent_enumeration() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (mut exact_ok, mut bounded) = (0, 0);
    for _ in 0..500 {
        let raw = raw_instance(&mut rng);
        let inst = raw.instance();
        let got = solve_exact(&inst, 1_000_000).unwrap();
        let (best, best_score, runner_up) = raw.enumerate();
        let got_score = raw.score(got.choices());
        let same_choice = got == Assignment::new(best) || best_score - runner_up < 1e-9;
        exact_ok += usize::from((got_score - best_score).abs() < 1e-9 && same_choice);
        let exact_score = score_assignment(&inst, &got).unwrap();
        let c = score_assignment(&inst, &solve_cluster(&inst, 0.6)).unwrap();
        let p = score_assignment(&inst, &solve_pairwise(&inst, 0.6)).unwrap();
        bounded += usize::from(c <= exact_score + 1e-9 && p <= exact_score + 1e-9);
    }
    let elapsed = start.elapsed();
    report(
        "cross-view MAP exact solver",
        exact_ok == 500 && bounded == 500 && elapsed < Duration::from_secs(60),
        format!("{exact_ok}/500 optimal, {bounded}/500 cluster and pairwise bounded"),
        elapsed,
    );
}

// ---------------------------------------------------------------------------
// Compositing

/// Round-half-up of `(1 - a) s + a t` in integer arithmetic, for `a` a
/// multiple of 1/4.
fn blend_oracle(s: u8, t: u8, quarters: u32) -> u8 {
    let v = (4 - quarters) * u32::from(s) + quarters * u32::from(t);
    ((v + 2) / 4) as u8
}

#[test]
fn compositing_is_bit_exact() {
    let start = Instant::now();
    let mut mismatches = 0usize;
    for quarters in [0u32, 1, 2, 4] {
        let alpha = f64::from(quarters) / 4.0;
        for s in 0..=255u8 {
            for t in 0..=255u8 {
                mismatches += usize::from(blend_channel(s, t, alpha) != blend_oracle(s, t, quarters));
            }
        }
        let mut img = RasterImage::filled(256, 256, [0, 0, 0]).unwrap();
        let mut mask = Mask::from_box(256, 256, &BoundingBox::new(0, 0, 0, 0).unwrap()).unwrap();
        for y in 0..256u32 {
            for x in 0..256u32 {
                img.set(x, y, [x as u8, y as u8, (x ^ y) as u8]);
                mask.set(x, y, (x * 7 + y * 13) % 5 != 0);
            }
        }
        for color in [TintColor::Red, TintColor::Green, TintColor::Blue] {
            let style = PromptStyle::new(Geometry::Mask, color, alpha).unwrap();
            let out = blend_overlay(&img, &mask, &style).unwrap();
            let tint = color.rgb();
            for y in 0..256u32 {
                for x in 0..256u32 {
                    let src = img.get(x, y);
                    let expected = if mask.get(x, y) {
                        [0, 1, 2].map(|c| blend_oracle(src[c], tint[c], quarters))
                    } else {
                        src
                    };
                    mismatches += usize::from(out.get(x, y) != expected);
                }
            }
            if quarters == 0 && out != img {
                mismatches += 1;
            }
        }
    }
    let elapsed = start.elapsed();
    report(
        "compositing bit-exactness",
        mismatches == 0 && elapsed < Duration::from_secs(60),
        format!("{mismatches} mismatching pixels over alpha 0, 0.25, 0.5, 1"),
        elapsed,
    );
}

// ---------------------------------------------------------------------------
// Rewrite

#[test]
fn rewrite_contract_holds() {
    let start = Instant::now();
    let style = |c| PromptStyle::new(Geometry::Mask, c, 0.5).unwrap();
    let cases = [
        ("pick up my cup", TintColor::Red, "pick up the red cup", true),
        ("bring my cup", TintColor::Red, "bring the red cup", true),
        ("select my leather bag", TintColor::Red, "select the red leather bag", true),
        ("select my slipper", TintColor::Blue, "select the blue slipper", true),
        ("select my pen", TintColor::Red, "select the red pen", true),
        ("select my bottle", TintColor::Green, "select the green bottle", true),
        ("pick up my shaver", TintColor::Red, "pick up the red shaver", true),
        (
            "put my scrubber into the bowl",
            TintColor::Green,
            "put the green scrubber into the bowl",
            true,
        ),
        (
            "put my ornament into the plastic bowl",
            TintColor::Red,
            "put the red ornament into the plastic bowl",
            true,
        ),
        ("pick up the cup", TintColor::Red, "pick up the cup", false),
        ("mystery box on the table", TintColor::Red, "mystery box on the table", false),
    ];
    let mut failures = Vec::new();
    for (input, color, expected, rewritten) in cases {
        let r = rewrite_or_passthrough(input, &style(color));
        if r.text != expected || r.rewritten != rewritten {
            failures.push(format!("{input:?} -> {:?} ({})", r.text, r.rewritten));
        }
    }
    report(
        "rewrite contract",
        failures.is_empty(),
        format!("{}/{} forms correct {failures:?}", cases.len() - failures.len(), cases.len()),
        start.elapsed(),
    );
}

// ---------------------------------------------------------------------------
// Embedding alignment

fn to_matrix(m: &DMatrix<f64>) -> EmbeddingMatrix {
    let values = (0..m.nrows()).flat_map(|r| (0..m.ncols()).map(move |c| m[(r, c)])).collect();
    EmbeddingMatrix::new(m.nrows(), m.ncols(), values).unwrap()
}

fn random_matrix(rng: &mut ChaCha8Rng, r: usize, c: usize) -> DMatrix<f64> {
    DMatrix::from_fn(r, c, |_, _| rng.sample(StandardNormal))
}

/// Kernel form of linear CKA on centered Gram matrices.
fn cka_oracle(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    let n = a.nrows();
    let h = DMatrix::<f64>::identity(n, n) - DMatrix::from_element(n, n, 1.0 / n as f64);
    let k = &h * (a * a.transpose()) * &h;
    let l = &h * (b * b.transpose()) * &h;
    let hsic = |x: &DMatrix<f64>, y: &DMatrix<f64>| x.component_mul(y).sum();
    hsic(&k, &l) / (hsic(&k, &k) * hsic(&l, &l)).sqrt()
}

fn cosine_oracle(a: &DMatrix<f64>, b: &DMatrix<f64>) -> (f64, f64) {
    let cos: Vec<f64> = (0..a.nrows())
        .map(|i| {
            let (x, y) = (a.row(i), b.row(i));
            x.dot(&y) / (x.norm() * y.norm())
        })
        .collect();
    let mean = cos.iter().sum::<f64>() / cos.len() as f64;
    let var = cos.iter().map(|c| (c - mean).powi(2)).sum::<f64>() / cos.len() as f64;
    (mean, var.sqrt())
}

fn knn_oracle(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    let n = a.nrows();
    let hits = (0..n)
        .filter(|&i| {
            let cos = |j: usize| a.row(i).dot(&b.row(j)) / (a.row(i).norm() * b.row(j).norm());
            let best = (0..n).map(cos).fold(f64::NEG_INFINITY, f64::max);
            (0..n).find(|&j| cos(j) == best) == Some(i)
        })
        .count();
    hits as f64 / n as f64
}

#[test]
fn embedding_alignment_metrics() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut problems = Vec::new();
    let (n, d) = (24, 8);
    let a = random_matrix(&mut rng, n, d);
    let am = to_matrix(&a);
    if (linear_cka(&am, &am).unwrap() - 1.0).abs() > 1e-6 {
        problems.push("CKA(A, A)".to_string());
    }
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let q = random_matrix(&mut rng, d, d).qr().q();
        let aq = to_matrix(&(&a * q));
        worst = worst.max((linear_cka(&am, &aq).unwrap() - 1.0).abs());
    }
    if worst > 1e-6 {
        problems.push(format!("CKA(A, AQ) off by {worst:e}"));
    }
    if knn_top1(&am, &am).unwrap() != 1.0 {
        problems.push("kNN identity".into());
    }
    let shifted = DMatrix::from_fn(n, d, |r, c| a[((r + 1) % n, c)]);
    if knn_top1(&am, &to_matrix(&shifted)).unwrap() != 0.0 {
        problems.push("kNN derangement".into());
    }
    let mut oracle_gap = 0.0f64;
    for t in 0..50 {
        let b = if t % 2 == 0 {
            random_matrix(&mut rng, n, d)
        } else {
            &a + random_matrix(&mut rng, n, d) * 0.3
        };
        let bm = to_matrix(&b);
        let (mean, std) = rowwise_cosine(&am, &bm).unwrap();
        let (om, os) = cosine_oracle(&a, &b);
        oracle_gap = oracle_gap
            .max((mean - om).abs())
            .max((std - os).abs())
            .max((linear_cka(&am, &bm).unwrap() - cka_oracle(&a, &b)).abs())
            .max((knn_top1(&am, &bm).unwrap() - knn_oracle(&a, &b)).abs());
    }
    if oracle_gap > 1e-9 {
        problems.push(format!("oracle gap {oracle_gap:e}"));
    }
    report(
        "embedding alignment",
        problems.is_empty(),
        format!("orthogonal worst {worst:.1e}, oracle gap {oracle_gap:.1e} {problems:?}"),
        start.elapsed(),
    );
}

// ---------------------------------------------------------------------------
// Simulator

fn batch(cfg: &SceneConfig, n: u64) -> BatchSummary {
    let pool = worker_pool(4).unwrap();
    let seeds: Vec<u64> = (0..n).map(|s| cfg.seed + s).collect();
    BatchSummary::from_reports(&run_batch(&pool, cfg, &seeds).unwrap())
}

#[test]
fn noiseless_episodes_always_succeed() {
    let start = Instant::now();
    let s = batch(&SceneConfig::noiseless(), 1000);
    let sr = s.sr().unwrap();
    let elapsed = start.elapsed();
    report(
        "noiseless end-to-end",
        sr == 100.0 && elapsed < Duration::from_secs(120),
        format!("SR {sr:.1}% over 1000 seeds"),
        elapsed,
    );
}

#[test]
fn failure_taxonomy_partitions_failures() {
    let start = Instant::now();
    let pool = worker_pool(4).unwrap();
    let mut problems = Vec::new();
    let mut counts = Vec::new();
    for views in 1..=3 {
        let cfg = SceneConfig {
            views,
            rho: 0.9,
            obs_noise: 0.15,
            ref_noise: 0.15,
            p_miss: 0.2,
            p_drift: 0.1,
            p_ctrl: 0.1,
            occlusion: 0.3,
            steps: 5,
            ..SceneConfig::default()
        };
        let seeds: Vec<u64> = (0..1000).collect();
        let reports = run_batch(&pool, &cfg, &seeds).unwrap();
        let mut by_case = [0usize; 3];
        for r in &reports {
            match (r.success, r.failure_case) {
                (true, FailureCase::None) => {}
                (false, FailureCase::Case1) => by_case[0] += 1,
                (false, FailureCase::Case2) => by_case[1] += 1,
                (false, FailureCase::Case3) => by_case[2] += 1,
                other => problems.push(format!("V={views} seed {}: {other:?}", r.seed)),
            }
        }
        if views == 1 && by_case[1] > 0 {
            problems.push("case 2 with one view".into());
        }
        let s = BatchSummary::from_reports(&reports);
        let total: f64 = s.cases().iter().flatten().sum();
        if by_case.iter().sum::<usize>() > 0 && (total - 100.0).abs() > 1e-9 {
            problems.push(format!("V={views}: cases sum to {total}"));
        }
        counts.push(format!("V={views} {by_case:?}"));
    }
    report(
        "failure taxonomy partition",
        problems.is_empty(),
        format!("{} {problems:?}", counts.join(", ")),
        start.elapsed(),
    );
}

#[test]
fn ablation_directions_hold() {
    let start = Instant::now();
    let base = SceneConfig {
        views: 1,
        steps: 1,
        rho: 0.8,
        obs_noise: 0.05,
        ref_noise: 0.15,
        k: 5,
        corrupt_refs: 1,
        ..SceneConfig::default()
    };
    let vote = batch(&SceneConfig { selector: Selector::Vote, ..base.clone() }, 5000)
        .retrieval_accuracy()
        .unwrap();
    let avg = batch(&SceneConfig { selector: Selector::Average, ..base.clone() }, 5000)
        .retrieval_accuracy()
        .unwrap();
    let t_selector = start.elapsed();

    let k_base = SceneConfig {
        rho: 0.9,
        ref_noise: 0.1,
        corrupt_refs: 0,
        ..base
    };
    let by_k: Vec<f64> = [1, 3, 5, 7]
        .iter()
        .map(|&k| batch(&SceneConfig { k, ..k_base.clone() }, 5000).retrieval_accuracy().unwrap())
        .collect();
    let t_k = start.elapsed() - t_selector;

    let geo = SceneConfig {
        views: 1,
        steps: 1,
        image_width: 36,
        image_height: 12,
        box_pad: 3,
        ..SceneConfig::noiseless()
    };
    let mask = batch(&SceneConfig { prompt: PromptMode::Mask, ..geo.clone() }, 2000)
        .identification_accuracy()
        .unwrap();
    let boxed = batch(&SceneConfig { prompt: PromptMode::Box, ..geo }, 2000)
        .identification_accuracy()
        .unwrap();
    let t_geo = start.elapsed() - t_selector - t_k;

    let limit = Duration::from_secs(180);
    let monotone = by_k.windows(2).all(|w| w[1] >= w[0]);
    let ok = vote >= avg && monotone && mask >= boxed && [t_selector, t_k, t_geo].iter().all(|t| *t < limit);
    report(
        "ablation directions",
        ok,
        format!(
            "vote {vote:.2} vs average {avg:.2}; K 1/3/5/7 {:.2}/{:.2}/{:.2}/{:.2}; mask {mask:.2} vs box {boxed:.2}",
            by_k[0], by_k[1], by_k[2], by_k[3]
        ),
        start.elapsed(),
    );
}

#[test]
fn reruns_are_identical() {
    let start = Instant::now();
    let specs = [
        json!({"name": "s", "mode": "simulate", "seeds": 100,
               "scene": {"p_miss": 0.2, "p_drift": 0.1, "p_ctrl": 0.1, "occlusion": 0.3}, "sweep": {"k": [1, 5]}}),
        json!({"name": "a", "mode": "ablate", "seeds": 100, "scene": {"corrupt_refs": 1},
               "sweep": {"selector": ["vote", "average"], "prompt": ["mask", "box"]}}),
        json!({"name": "c", "mode": "crossview", "seeds": 50, "scene": {"occlusion": 0.3},
               "sweep": {"fusion": ["independent", "exact", "cluster", "pairwise"]}}),
        json!({"name": "q", "mode": "sequential", "seeds": 50, "scene": {"steps": 3, "p_ctrl": 0.2}}),
    ];
    let mut differing = Vec::new();
    for s in specs {
        let spec = ExperimentSpec::from_json(&s.to_string()).unwrap();
        let strip = |workers: usize| {
            let dir = tempfile::tempdir().unwrap();
            let rows = run_experiment(&spec, dir.path(), workers).unwrap();
            rows.into_iter()
                .map(|mut r| {
                    r.wall_time_ms = 0;
                    serde_json::to_string(&r).unwrap()
                })
                .collect::<Vec<_>>()
        };
        if strip(1) != strip(1) || strip(1) != strip(6) {
            differing.push(spec.name.clone());
        }
    }
    report(
        "determinism",
        differing.is_empty(),
        format!("4 modes re-run at 1 and 6 workers, differing: {differing:?}"),
        start.elapsed(),
    );
}
