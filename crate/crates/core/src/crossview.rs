//! Cross-view association of per-view proposals to one shared target.
//!
//! An assignment picks one proposal (or none) in every view. Its score is
//!
//! ```text
//! sum_v ref(v, m_v) + lambda * sum_{v<u} cv(v, m_v; u, m_u) + beta * sum_v obs(v, m_v)
//! ```
//!
//! with `ref(v, i) = sum_r cos(e_i, z_r)`, `ref(v, none) = 0`,
//! `obs(v, i)` = detector confidence, `obs(v, none)` = the null unary, and
//! `cv` the cross-view cosine (minus a reprojection penalty when geometry is
//! supplied), zero whenever either side is empty.
//!
//! Three solvers are provided: exhaustive enumeration, threshold-graph
//! clustering, and pairwise Hungarian matching merged with union-find.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scene::{Embedding, Proposal};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CrossviewError {
    #[error("assignment has {got} entries for {views} views")]
    WrongLength { got: usize, views: usize },
    #[error("view {view}: choice {choice} out of range (M_v = {size})")]
    OutOfRange { view: usize, choice: usize, size: usize },
    #[error("search space of {size} assignments exceeds cap {cap}")]
    TooLarge { size: u128, cap: u64 },
    #[error("cost matrix entry ({row}, {col}) is not finite")]
    NonFinite { row: usize, col: usize },
    #[error("cost matrix is not square")]
    NotSquare,
    #[error("embedding dimension mismatch")]
    DimensionMismatch,
    #[error("instance needs at least one view and one reference")]
    Empty,
    #[error("projection table has the wrong shape")]
    BadProjections,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FusionMethod {
    /// No association; each view keeps its own winner.
    #[default]
    Independent,
    Exact,
    Cluster,
    Pairwise,
}

impl FusionMethod {
    pub fn name(self) -> &'static str {
        match self {
            FusionMethod::Independent => "independent",
            FusionMethod::Exact => "exact",
            FusionMethod::Cluster => "cluster",
            FusionMethod::Pairwise => "pairwise",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CrossviewParams {
    pub lambda: f64,
    pub beta: f64,
    pub null_unary: f64,
    /// Minimum cross-view similarity for a cluster edge or an accepted
    /// Hungarian match.
    pub threshold: f64,
    pub exact_cap: u64,
}

impl Default for CrossviewParams {
    fn default() -> Self {
        Self {
            lambda: 1.0,
            beta: 0.5,
            null_unary: 0.0,
            threshold: 0.6,
            exact_cap: 1_000_000,
        }
    }
}

/// Reprojection data: `projections[v][i][u]` is proposal `i` of view `v`
/// projected into view `u`, in pixels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Geometry {
    pub projections: Vec<Vec<Vec<(f64, f64)>>>,
    pub eta: f64,
    pub gamma: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AssociationInstance {
    proposals: Vec<Vec<Proposal>>,
    references: Vec<Embedding>,
    lambda: f64,
    beta: f64,
    null_unary: f64,
    geometry: Option<Geometry>,
}

impl AssociationInstance {
    pub fn new(
        proposals: Vec<Vec<Proposal>>,
        references: Vec<Embedding>,
        params: CrossviewParams,
    ) -> Result<Self, CrossviewError> {
        if proposals.is_empty() || references.is_empty() {
            return Err(CrossviewError::Empty);
        }
        let dim = references[0].dim();
        let dims_ok = references.iter().all(|z| z.dim() == dim)
            && proposals.iter().flatten().all(|p| p.embedding().dim() == dim);
        if !dims_ok {
            return Err(CrossviewError::DimensionMismatch);
        }
        Ok(Self {
            proposals,
            references,
            lambda: params.lambda,
            beta: params.beta,
            null_unary: params.null_unary,
            geometry: None,
        })
    }

    pub fn with_geometry(mut self, geometry: Geometry) -> Result<Self, CrossviewError> {
        let v = self.views();
        let ok = geometry.projections.len() == v
            && geometry
                .projections
                .iter()
                .zip(&self.proposals)
                .all(|(pv, props)| pv.len() == props.len() && pv.iter().all(|p| p.len() == v));
        if !ok {
            return Err(CrossviewError::BadProjections);
        }
        self.geometry = Some(geometry);
        Ok(self)
    }

    pub fn views(&self) -> usize {
        self.proposals.len()
    }

    pub fn sizes(&self) -> Vec<usize> {
        self.proposals.iter().map(Vec::len).collect()
    }

    pub fn proposals(&self) -> &[Vec<Proposal>] {
        &self.proposals
    }

    pub fn references(&self) -> &[Embedding] {
        &self.references
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn null_unary(&self) -> f64 {
        self.null_unary
    }

    pub fn geometry(&self) -> Option<&Geometry> {
        self.geometry.as_ref()
    }

    /// Reference evidence of proposal `i` in view `v`.
    pub fn phi_ref(&self, v: usize, i: usize) -> f64 {
        let e = self.proposals[v][i].embedding();
        self.references.iter().map(|z| e.dot(z)).sum()
    }

    pub fn phi_obs(&self, v: usize, choice: Option<usize>) -> f64 {
        match choice {
            Some(i) => self.proposals[v][i].confidence(),
            None => self.null_unary,
        }
    }

    /// Reprojection distance between proposal `(v, i)` projected into view
    /// `u` and the centroid of proposal `(u, j)`; zero without geometry.
    pub fn geom_distance(&self, v: usize, i: usize, u: usize, j: usize) -> f64 {
        match &self.geometry {
            Some(g) => {
                let (px, py) = g.projections[v][i][u];
                let (cx, cy) = self.proposals[u][j].centroid();
                ((px - cx).powi(2) + (py - cy).powi(2)).sqrt()
            }
            None => 0.0,
        }
    }

    pub fn phi_cv(&self, v: usize, i: usize, u: usize, j: usize) -> f64 {
        let cos = self.proposals[v][i]
            .embedding()
            .dot(self.proposals[u][j].embedding());
        match &self.geometry {
            Some(g) => cos - g.eta * self.geom_distance(v, i, u, j),
            None => cos,
        }
    }

    /// Unary part of the objective for one view.
    pub fn unary(&self, v: usize, choice: Option<usize>) -> f64 {
        let r = choice.map_or(0.0, |i| self.phi_ref(v, i));
        r + self.beta * self.phi_obs(v, choice)
    }
}

/// One choice per view; `None` means the target is unobserved there.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Assignment {
    choices: Vec<Option<usize>>,
}

impl Assignment {
    pub fn new(choices: Vec<Option<usize>>) -> Self {
        Self { choices }
    }

    pub fn choices(&self) -> &[Option<usize>] {
        &self.choices
    }

    fn validate(&self, inst: &AssociationInstance) -> Result<(), CrossviewError> {
        if self.choices.len() != inst.views() {
            return Err(CrossviewError::WrongLength {
                got: self.choices.len(),
                views: inst.views(),
            });
        }
        for (v, c) in self.choices.iter().enumerate() {
            if let Some(i) = *c {
                let size = inst.proposals[v].len();
                if i >= size {
                    return Err(CrossviewError::OutOfRange {
                        view: v,
                        choice: i,
                        size,
                    });
                }
            }
        }
        Ok(())
    }
}

/// Precomputed potentials shared by scoring and the exhaustive solver, so
/// both evaluate an assignment with identical arithmetic.
struct Tables {
    phi_ref: Vec<Vec<f64>>,
    phi_obs: Vec<Vec<f64>>,
    null_obs: f64,
    /// `pair[v][u][i][j]` for `v < u`.
    pair: Vec<Vec<Vec<Vec<f64>>>>,
    lambda: f64,
    beta: f64,
}

impl Tables {
    fn build(inst: &AssociationInstance) -> Self {
        let nv = inst.views();
        let sizes = inst.sizes();
        let phi_ref = (0..nv)
            .map(|v| (0..sizes[v]).map(|i| inst.phi_ref(v, i)).collect())
            .collect();
        let phi_obs = (0..nv)
            .map(|v| (0..sizes[v]).map(|i| inst.phi_obs(v, Some(i))).collect())
            .collect();
        let pair = (0..nv)
            .map(|v| {
                (0..nv)
                    .map(|u| {
                        if u <= v {
                            return Vec::new();
                        }
                        (0..sizes[v])
                            .map(|i| (0..sizes[u]).map(|j| inst.phi_cv(v, i, u, j)).collect())
                            .collect()
                    })
                    .collect()
            })
            .collect();
        Self {
            phi_ref,
            phi_obs,
            null_obs: inst.null_unary,
            pair,
            lambda: inst.lambda,
            beta: inst.beta,
        }
    }

    fn score(&self, choices: &[Option<usize>]) -> f64 {
        let mut reference = 0.0;
        let mut obs = 0.0;
        for (v, c) in choices.iter().enumerate() {
            match *c {
                Some(i) => {
                    reference += self.phi_ref[v][i];
                    obs += self.phi_obs[v][i];
                }
                None => obs += self.null_obs,
            }
        }
        let mut cv = 0.0;
        for v in 0..choices.len() {
            for u in v + 1..choices.len() {
                if let (Some(i), Some(j)) = (choices[v], choices[u]) {
                    cv += self.pair[v][u][i][j];
                }
            }
        }
        reference + self.lambda * cv + self.beta * obs
    }
}

pub fn score_assignment(inst: &AssociationInstance, m: &Assignment) -> Result<f64, CrossviewError> {
    m.validate(inst)?;
    Ok(Tables::build(inst).score(&m.choices))
}

/// Size of the exhaustive search space, prod_v (M_v + 1).
pub fn search_space(inst: &AssociationInstance) -> u128 {
    inst.sizes().iter().map(|&m| m as u128 + 1).product()
}

/// Globally optimal assignment by enumeration. Ties go to the
/// lexicographically smallest choice vector, with "none" ordered after
/// every proposal index.
pub fn solve_exact(inst: &AssociationInstance, cap: u64) -> Result<Assignment, CrossviewError> {
    let size = search_space(inst);
    if size > u128::from(cap) {
        return Err(CrossviewError::TooLarge { size, cap });
    }
    let tables = Tables::build(inst);
    let sizes = inst.sizes();
    let nv = sizes.len();
    // Digit value sizes[v] encodes "none".
    let mut digits = vec![0usize; nv];
    let to_choices = |d: &[usize]| -> Vec<Option<usize>> {
        d.iter()
            .zip(&sizes)
            .map(|(&x, &m)| (x < m).then_some(x))
            .collect()
    };
    let mut best = to_choices(&digits);
    let mut best_score = tables.score(&best);
    loop {
        let mut v = nv;
        loop {
            if v == 0 {
                return Ok(Assignment::new(best));
            }
            v -= 1;
            if digits[v] < sizes[v] {
                digits[v] += 1;
                break;
            }
            digits[v] = 0;
        }
        let choices = to_choices(&digits);
        let s = tables.score(&choices);
        if s > best_score {
            best_score = s;
            best = choices;
        }
    }
}

struct UnionFind {
    parent: Vec<usize>,
}

impl UnionFind {
    fn new(n: usize) -> Self {
        Self {
            parent: (0..n).collect(),
        }
    }

    fn find(&mut self, x: usize) -> usize {
        let mut root = x;
        while self.parent[root] != root {
            root = self.parent[root];
        }
        let mut cur = x;
        while self.parent[cur] != root {
            let next = self.parent[cur];
            self.parent[cur] = root;
            cur = next;
        }
        root
    }

    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            // Smaller root wins so component ids stay deterministic.
            let (lo, hi) = if ra < rb { (ra, rb) } else { (rb, ra) };
            self.parent[hi] = lo;
        }
    }
}

/// Flat indexing of `(view, proposal)` nodes.
fn node_list(inst: &AssociationInstance) -> Vec<(usize, usize)> {
    inst.proposals
        .iter()
        .enumerate()
        .flat_map(|(v, props)| (0..props.len()).map(move |i| (v, i)))
        .collect()
}

/// Groups of nodes by union-find root, in order of first appearance.
fn components(uf: &mut UnionFind, n: usize) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = Vec::new();
    let mut groups: Vec<Vec<usize>> = Vec::new();
    for x in 0..n {
        let r = uf.find(x);
        match order.iter().position(|&o| o == r) {
            Some(g) => groups[g].push(x),
            None => {
                order.push(r);
                groups.push(vec![x]);
            }
        }
    }
    groups
}

fn group_score(inst: &AssociationInstance, nodes: &[(usize, usize)], group: &[usize]) -> f64 {
    group
        .iter()
        .map(|&n| {
            let (v, i) = nodes[n];
            inst.phi_ref(v, i) + inst.beta * inst.phi_obs(v, Some(i))
        })
        .sum()
}

/// Keeps one member per view: the highest reference evidence, lowest index
/// on ties.
fn group_assignment(inst: &AssociationInstance, nodes: &[(usize, usize)], group: &[usize]) -> Assignment {
    let mut choices: Vec<Option<usize>> = vec![None; inst.views()];
    for &n in group {
        let (v, i) = nodes[n];
        match choices[v] {
            Some(cur) if inst.phi_ref(v, cur) >= inst.phi_ref(v, i) => {}
            _ => choices[v] = Some(i),
        }
    }
    Assignment::new(choices)
}

fn best_group(inst: &AssociationInstance, nodes: &[(usize, usize)], groups: &[Vec<usize>]) -> Assignment {
    let mut best: Option<(f64, &Vec<usize>)> = None;
    for g in groups {
        let s = group_score(inst, nodes, g);
        if best.is_none_or(|(b, _)| s > b) {
            best = Some((s, g));
        }
    }
    match best {
        Some((_, g)) => group_assignment(inst, nodes, g),
        None => Assignment::new(vec![None; inst.views()]),
    }
}

/// Threshold-graph clustering: cross-view edges where the pairwise
/// potential reaches `threshold`, connected components as identity
/// hypotheses, and the component with the largest unary evidence wins.
pub fn solve_cluster(inst: &AssociationInstance, threshold: f64) -> Assignment {
    let nodes = node_list(inst);
    let mut uf = UnionFind::new(nodes.len());
    for a in 0..nodes.len() {
        for b in a + 1..nodes.len() {
            let (v, i) = nodes[a];
            let (u, j) = nodes[b];
            if v != u && inst.phi_cv(v, i, u, j) >= threshold {
                uf.union(a, b);
            }
        }
    }
    let groups = components(&mut uf, nodes.len());
    best_group(inst, &nodes, &groups)
}

/// Minimum-cost perfect matching on a square matrix; `result[row] = col`.
pub fn hungarian(cost: &[Vec<f64>]) -> Result<Vec<usize>, CrossviewError> {
    let n = cost.len();
    for (r, row) in cost.iter().enumerate() {
        if row.len() != n {
            return Err(CrossviewError::NotSquare);
        }
        if let Some(c) = row.iter().position(|x| !x.is_finite()) {
            return Err(CrossviewError::NonFinite { row: r, col: c });
        }
    }
    if n == 0 {
        return Ok(Vec::new());
    }

    // Shortest augmenting path with row/column potentials, 1-based with a
    // virtual column 0.
    let inf = f64::INFINITY;
    let mut u = vec![0.0f64; n + 1];
    let mut v = vec![0.0f64; n + 1];
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0usize;
        let mut minv = vec![inf; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = inf;
            let mut j1 = 0usize;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let cur = cost[i0 - 1][j - 1] - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut assignment = vec![0usize; n];
    for j in 1..=n {
        assignment[p[j] - 1] = j - 1;
    }
    Ok(assignment)
}

/// Cost assigned to padding cells when a rectangular view pair is squared.
pub const PAD_COST: f64 = 1.0e6;

/// Pairwise Hungarian matching between every view pair, merged into
/// cross-view groups with union-find.
///
/// Matches below `threshold` similarity are discarded. A group holding two
/// proposals from the same view is inconsistent and is split back into
/// singletons, so with no consistent group the result is the best single
/// proposal with every other view empty.
pub fn solve_pairwise(inst: &AssociationInstance, threshold: f64) -> Assignment {
    let nodes = node_list(inst);
    let offsets: Vec<usize> = inst
        .sizes()
        .iter()
        .scan(0, |acc, &m| {
            let o = *acc;
            *acc += m;
            Some(o)
        })
        .collect();
    let sizes = inst.sizes();
    let gamma = inst.geometry.as_ref().map_or(0.0, |g| g.gamma);

    let mut uf = UnionFind::new(nodes.len());
    for v in 0..inst.views() {
        for u in v + 1..inst.views() {
            let (mv, mu) = (sizes[v], sizes[u]);
            if mv == 0 || mu == 0 {
                continue;
            }
            let n = mv.max(mu);
            let mut cost = vec![vec![PAD_COST; n]; n];
            for (i, row) in cost.iter_mut().enumerate().take(mv) {
                for (j, c) in row.iter_mut().enumerate().take(mu) {
                    let cos = inst.proposals[v][i]
                        .embedding()
                        .dot(inst.proposals[u][j].embedding());
                    *c = -cos + gamma * inst.geom_distance(v, i, u, j);
                }
            }
            let perm = hungarian(&cost).expect("finite square cost matrix");
            for (i, &j) in perm.iter().enumerate() {
                if i < mv && j < mu && inst.phi_cv(v, i, u, j) >= threshold {
                    uf.union(offsets[v] + i, offsets[u] + j);
                }
            }
        }
    }

    let mut groups = Vec::new();
    for g in components(&mut uf, nodes.len()) {
        let mut seen = vec![false; inst.views()];
        let consistent = g.iter().all(|&n| !std::mem::replace(&mut seen[nodes[n].0], true));
        if consistent {
            groups.push(g);
        } else {
            groups.extend(g.into_iter().map(|n| vec![n]));
        }
    }
    best_group(inst, &nodes, &groups)
}

/// Per-view argmax of the unary term, ignoring the empty choice.
pub fn solve_independent(inst: &AssociationInstance) -> Assignment {
    Assignment::new(
        (0..inst.views())
            .map(|v| {
                let mut best: Option<usize> = None;
                for i in 0..inst.proposals[v].len() {
                    if best.is_none_or(|b| inst.unary(v, Some(i)) > inst.unary(v, Some(b))) {
                        best = Some(i);
                    }
                }
                best
            })
            .collect(),
    )
}

/// Dispatches to a solver. An exact solve over the cap degrades to
/// clustering.
pub fn solve(inst: &AssociationInstance, method: FusionMethod, params: &CrossviewParams) -> Assignment {
    match method {
        FusionMethod::Independent => solve_independent(inst),
        FusionMethod::Exact => solve_exact(inst, params.exact_cap)
            .unwrap_or_else(|_| solve_cluster(inst, params.threshold)),
        FusionMethod::Cluster => solve_cluster(inst, params.threshold),
        FusionMethod::Pairwise => solve_pairwise(inst, params.threshold),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::BoundingBox;

    fn prop(v: &[f64], conf: f64) -> Proposal {
        let b = BoundingBox::new(0, 0, 9, 9).unwrap();
        Proposal::new(b, conf, Embedding::normalize(v).unwrap(), None).unwrap()
    }

    fn emb(v: &[f64]) -> Embedding {
        Embedding::normalize(v).unwrap()
    }

    fn params(lambda: f64, beta: f64) -> CrossviewParams {
        CrossviewParams {
            lambda,
            beta,
            ..CrossviewParams::default()
        }
    }

    #[test]
    fn all_empty_scores_zero() {
        let inst = AssociationInstance::new(
            vec![vec![prop(&[1.0, 0.0], 0.9)], vec![prop(&[0.0, 1.0], 0.8)]],
            vec![emb(&[1.0, 0.0])],
            params(1.0, 0.5),
        )
        .unwrap();
        let s = score_assignment(&inst, &Assignment::new(vec![None, None])).unwrap();
        assert_eq!(s, 0.0);
    }

    #[test]
    fn single_view_has_no_pair_term() {
        let inst = AssociationInstance::new(
            vec![vec![prop(&[0.6, 0.8], 0.7)]],
            vec![emb(&[1.0, 0.0]), emb(&[0.0, 1.0])],
            params(5.0, 0.5),
        )
        .unwrap();
        let s = score_assignment(&inst, &Assignment::new(vec![Some(0)])).unwrap();
        assert!((s - (1.4 + 0.5 * 0.7)).abs() < 1e-12);
    }

    #[test]
    fn forced_arithmetic_example() {
        let inst = AssociationInstance::new(
            vec![vec![prop(&[1.0, 0.0], 0.3)], vec![prop(&[1.0, 0.0], 0.4)]],
            vec![emb(&[1.0, 0.0])],
            params(1.0, 0.0),
        )
        .unwrap();
        let s = score_assignment(&inst, &Assignment::new(vec![Some(0), Some(0)])).unwrap();
        assert_eq!(s, 3.0);
    }

    #[test]
    fn invalid_assignments_rejected() {
        let inst = AssociationInstance::new(
            vec![vec![prop(&[1.0, 0.0], 0.3)]],
            vec![emb(&[1.0, 0.0])],
            params(1.0, 0.0),
        )
        .unwrap();
        assert!(matches!(
            score_assignment(&inst, &Assignment::new(vec![Some(1)])),
            Err(CrossviewError::OutOfRange { .. })
        ));
        assert!(matches!(
            score_assignment(&inst, &Assignment::new(vec![None, None])),
            Err(CrossviewError::WrongLength { .. })
        ));
    }

    #[test]
    fn exact_respects_cap() {
        let views: Vec<Vec<Proposal>> = (0..3)
            .map(|_| (0..9).map(|_| prop(&[1.0, 0.0], 0.5)).collect())
            .collect();
        let inst = AssociationInstance::new(views, vec![emb(&[1.0, 0.0])], params(1.0, 0.5)).unwrap();
        assert_eq!(search_space(&inst), 1000);
        assert!(matches!(solve_exact(&inst, 999), Err(CrossviewError::TooLarge { .. })));
        assert!(solve_exact(&inst, 1000).is_ok());
    }

    #[test]
    fn exact_prefers_lexicographically_smallest_on_ties() {
        let inst = AssociationInstance::new(
            vec![vec![prop(&[1.0, 0.0], 0.5), prop(&[1.0, 0.0], 0.5)]],
            vec![emb(&[1.0, 0.0])],
            params(1.0, 0.5),
        )
        .unwrap();
        assert_eq!(solve_exact(&inst, 100).unwrap().choices(), &[Some(0)]);
        // Equal to the empty choice: the proposal index still wins.
        let inst = AssociationInstance::new(
            vec![vec![prop(&[0.0, 1.0], 0.0)]],
            vec![emb(&[1.0, 0.0])],
            params(1.0, 0.5),
        )
        .unwrap();
        assert_eq!(solve_exact(&inst, 100).unwrap().choices(), &[Some(0)]);
    }

    #[test]
    fn exact_with_no_pair_weight_decomposes() {
        let inst = AssociationInstance::new(
            vec![
                vec![prop(&[1.0, 0.2], 0.1), prop(&[0.1, 1.0], 0.9)],
                vec![prop(&[-1.0, 0.0], 0.2)],
                vec![prop(&[0.0, 1.0], 0.5), prop(&[1.0, 0.0], 0.5)],
            ],
            vec![emb(&[1.0, 0.0])],
            params(0.0, 0.5),
        )
        .unwrap();
        let m = solve_exact(&inst, 1000).unwrap();
        for v in 0..inst.views() {
            let mut best = None;
            let mut best_u = inst.unary(v, None);
            for i in 0..inst.sizes()[v] {
                if inst.unary(v, Some(i)) > best_u {
                    best_u = inst.unary(v, Some(i));
                    best = Some(i);
                }
            }
            assert_eq!(m.choices()[v], best, "view {v}");
        }
        assert_eq!(m.choices(), &[Some(0), None, Some(1)]);
    }

    #[test]
    fn cluster_finds_shared_target() {
        let t = [1.0, 0.0, 0.0];
        let d = [0.0, 1.0, 0.0];
        let inst = AssociationInstance::new(
            vec![vec![prop(&d, 0.9), prop(&t, 0.9)], vec![prop(&t, 0.9), prop(&d, 0.9)]],
            vec![emb(&t)],
            params(1.0, 0.5),
        )
        .unwrap();
        assert_eq!(solve_cluster(&inst, 0.5).choices(), &[Some(1), Some(0)]);
    }

    #[test]
    fn cluster_without_edges_keeps_best_single() {
        let inst = AssociationInstance::new(
            vec![vec![prop(&[1.0, 0.0, 0.0], 0.5)], vec![prop(&[0.0, 1.0, 0.0], 0.5)], vec![prop(&[0.7, 0.0, 0.7], 0.5)]],
            vec![emb(&[1.0, 0.0, 0.0])],
            params(1.0, 0.5),
        )
        .unwrap();
        assert_eq!(solve_cluster(&inst, 0.999).choices(), &[Some(0), None, None]);
    }

    #[test]
    fn cluster_resolves_duplicates_in_one_view() {
        let inst = AssociationInstance::new(
            vec![
                vec![prop(&[1.0, 0.1], 0.5), prop(&[1.0, 0.0], 0.5)],
                vec![prop(&[1.0, 0.05], 0.5)],
            ],
            vec![emb(&[1.0, 0.0])],
            params(1.0, 0.5),
        )
        .unwrap();
        assert_eq!(solve_cluster(&inst, 0.9).choices(), &[Some(1), Some(0)]);
    }

    #[test]
    fn hungarian_small_cases() {
        assert_eq!(hungarian(&[vec![3.0]]).unwrap(), vec![0]);
        let c = vec![
            vec![1.0, 5.0, 6.0],
            vec![7.0, 0.5, 9.0],
            vec![4.0, 8.0, 0.0],
        ];
        assert_eq!(hungarian(&c).unwrap(), vec![0, 1, 2]);
        // Greedy would take (0,0) first and pay 1 + 100.
        let c = vec![vec![1.0, 2.0], vec![2.0, 100.0]];
        assert_eq!(hungarian(&c).unwrap(), vec![1, 0]);
        assert!(hungarian(&[]).unwrap().is_empty());
        assert!(matches!(
            hungarian(&[vec![f64::NAN]]),
            Err(CrossviewError::NonFinite { row: 0, col: 0 })
        ));
        assert_eq!(hungarian(&[vec![1.0, 2.0]]), Err(CrossviewError::NotSquare));
    }

    #[test]
    fn pairwise_matches_exact_on_clean_instance() {
        let t = [1.0, 0.0, 0.0];
        let d1 = [0.0, 1.0, 0.0];
        let d2 = [0.0, 0.0, 1.0];
        let inst = AssociationInstance::new(
            vec![
                vec![prop(&d1, 0.9), prop(&t, 0.9), prop(&d2, 0.9)],
                vec![prop(&t, 0.9), prop(&d2, 0.9)],
            ],
            vec![emb(&t)],
            params(1.0, 0.5),
        )
        .unwrap();
        let exact = solve_exact(&inst, 1000).unwrap();
        assert_eq!(exact.choices(), &[Some(1), Some(0)]);
        assert_eq!(solve_pairwise(&inst, 0.6), exact);
    }

    #[test]
    fn pairwise_conflict_falls_back_to_single_view() {
        // Matches v0-v1 and v1-v2 chain a0 with b0, but v0-v2 pairs a0 with
        // c1 while b0 matched c0, producing a group with two view-2 nodes.
        let a0 = [1.0, 0.0, 0.0, 0.0];
        let b0 = [0.8, 0.6, 0.0, 0.0];
        let c0 = [0.2, 0.98, 0.0, 0.0];
        let c1 = [0.9, 0.0, 0.43, 0.0];
        let inst = AssociationInstance::new(
            vec![vec![prop(&a0, 0.5)], vec![prop(&b0, 0.5)], vec![prop(&c0, 0.5), prop(&c1, 0.5)]],
            vec![emb(&a0)],
            params(1.0, 0.0),
        )
        .unwrap();
        let m = solve_pairwise(&inst, 0.6);
        assert_eq!(m.choices().iter().filter(|c| c.is_some()).count(), 1);
        assert_eq!(m.choices(), &[Some(0), None, None]);
    }

    #[test]
    fn geometry_with_zero_eta_matches_embedding_variant() {
        let views = vec![
            vec![prop(&[1.0, 0.2], 0.4), prop(&[0.3, 1.0], 0.6)],
            vec![prop(&[0.9, 0.1], 0.5)],
        ];
        let base = AssociationInstance::new(views.clone(), vec![emb(&[1.0, 0.0])], params(1.0, 0.5)).unwrap();
        let geo = base
            .clone()
            .with_geometry(Geometry {
                projections: vec![vec![vec![(1.0, 2.0); 2]; 2], vec![vec![(30.0, 4.0); 2]; 1]],
                eta: 0.0,
                gamma: 0.0,
            })
            .unwrap();
        for i in 0..2 {
            assert!((base.phi_cv(0, i, 1, 0) - geo.phi_cv(0, i, 1, 0)).abs() < 1e-12);
        }
        assert!(base
            .clone()
            .with_geometry(Geometry { projections: vec![], eta: 1.0, gamma: 0.0 })
            .is_err());
    }

    #[test]
    fn geometry_penalizes_reprojection_error() {
        let views = vec![vec![prop(&[1.0, 0.0], 0.5)], vec![prop(&[1.0, 0.0], 0.5)]];
        let inst = AssociationInstance::new(views, vec![emb(&[1.0, 0.0])], params(1.0, 0.0))
            .unwrap()
            .with_geometry(Geometry {
                // Box center is (4.5, 4.5); projection 3-4-5 away.
                projections: vec![vec![vec![(0.0, 0.0), (7.5, 8.5)]], vec![vec![(0.0, 0.0), (0.0, 0.0)]]],
                eta: 0.1,
                gamma: 0.0,
            })
            .unwrap();
        assert!((inst.phi_cv(0, 0, 1, 0) - 0.5).abs() < 1e-12);
    }
}
