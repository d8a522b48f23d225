//! Potts-model labeling as a 0-1 program over the region adjacency graph.
//!
//! The unconstrained variant (ILP-U) minimizes unary plus pairwise cost. The
//! connected variant (ILP-P) additionally requires every class to form one
//! connected subgraph once the class's region roots are chained together by
//! pseudo edges. Connectivity is enforced lazily: each disconnected
//! component gets vertex-separator cuts `x_i ≤ Σ_{s∈S} x_s`.

use std::collections::{BTreeMap, VecDeque};
use std::sync::{Arc, Mutex};

use serde::Serialize;
use thiserror::Error;

use crate::labels::{LabelState, NodeLabel};
use crate::milp::{self, Constraint, LazyGenerator, MilpError, MilpModel, Relation, SolveBudget, SolveStats, SolveStatus};
use crate::potts_heur::{self, HeuristicConfig, HeuristicError};
use crate::rag::{CostTable, Fixings, RagGraph};

pub const DEFAULT_LAMBDA: f64 = 100.0;
pub const DEFAULT_CUT_K: usize = 3;

#[derive(Debug, Error)]
pub enum MrfError {
    #[error("class {0} has free nodes but no scribbled root")]
    MissingRoot(u32),
    #[error("node {node} is fixed to class {class}, which has no cost column")]
    UnknownClass { node: usize, class: u32 },
    #[error("cost table has {found} rows for {expected} nodes")]
    CostShape { expected: usize, found: usize },
    #[error("lambda must be finite and non-negative, got {0}")]
    InvalidLambda(f64),
    #[error(transparent)]
    Milp(#[from] MilpError),
    #[error(transparent)]
    Heuristic(#[from] HeuristicError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Variant {
    /// No connectivity constraints.
    U,
    /// Connectivity through root cuts and pseudo edges.
    P,
}

/// A separator cut `x_target^class ≤ Σ_{s ∈ separator} x_s^class`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct SeparatorCut {
    pub target: usize,
    /// Class index into the cost table.
    pub class: usize,
    pub separator: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct MrfProblem {
    /// Pseudo edges are present for the connected variant.
    pub graph: RagGraph,
    pub costs: CostTable,
    pub lambda: f64,
    /// Class index per node when fixed.
    pub fixed: Vec<Option<usize>>,
    /// Root node per class index.
    pub roots: Vec<Option<usize>>,
    pub variant: Variant,
    pub cut_k: usize,
}

impl MrfProblem {
    /// Maps fixings onto cost-table columns and, for the connected variant,
    /// chains each class's region roots with pseudo edges.
    pub fn new(
        graph: RagGraph,
        costs: CostTable,
        lambda: f64,
        fixings: &Fixings,
        variant: Variant,
    ) -> Result<Self, MrfError> {
        if !(lambda.is_finite() && lambda >= 0.0) {
            return Err(MrfError::InvalidLambda(lambda));
        }
        if costs.node_count() != graph.node_count() {
            return Err(MrfError::CostShape {
                expected: graph.node_count(),
                found: costs.node_count(),
            });
        }
        let mut fixed = Vec::with_capacity(graph.node_count());
        for (node, l) in fixings.labels.iter().enumerate() {
            fixed.push(match l {
                None => None,
                Some(l) => Some(costs.class_index(l.class_id).ok_or(MrfError::UnknownClass {
                    node,
                    class: l.class_id,
                })?),
            });
        }
        let roots = costs.classes.iter().map(|&c| fixings.class_root(c)).collect();
        let mut p = Self {
            graph,
            costs,
            lambda,
            fixed,
            roots,
            variant,
            cut_k: DEFAULT_CUT_K,
        };
        if variant == Variant::P {
            add_pseudo_edges(&mut p.graph, fixings);
        }
        Ok(p)
    }

    pub fn class_count(&self) -> usize {
        self.costs.class_count()
    }

    pub fn free_nodes(&self) -> Vec<usize> {
        (0..self.graph.node_count())
            .filter(|&v| self.fixed[v].is_none())
            .collect()
    }

    /// Unary plus pairwise cost of a labeling given as class indices. Nodes
    /// are summed in id order, then edges in edge order; each differing real
    /// edge contributes `2·λ·d`.
    pub fn energy(&self, labels: &[usize]) -> f64 {
        let mut e = 0.0;
        for (v, &l) in labels.iter().enumerate() {
            e += self.costs.cost(v, l);
        }
        for edge in self.graph.edges.iter().filter(|e| !e.pseudo) {
            if labels[edge.a] != labels[edge.b] {
                e += 2.0 * self.lambda * edge.weight;
            }
        }
        e
    }

    /// Whether `labels` honours the fixings.
    pub fn respects_fixings(&self, labels: &[usize]) -> bool {
        self.fixed
            .iter()
            .zip(labels)
            .all(|(f, &l)| f.is_none_or(|f| f == l))
    }
}

/// For each class with several scribbled regions, chains their roots in
/// scribble order. Returns the number of edges added.
pub fn add_pseudo_edges(graph: &mut RagGraph, fixings: &Fixings) -> usize {
    let mut by_class: BTreeMap<u32, Vec<usize>> = BTreeMap::new();
    for r in &fixings.regions {
        by_class.entry(r.label.class_id).or_default().push(r.root);
    }
    let mut added = 0;
    for roots in by_class.values() {
        for pair in roots.windows(2) {
            if graph.add_pseudo_edge(pair[0], pair[1]) {
                added += 1;
            }
        }
    }
    added
}

/// Components of each class's node set (pseudo edges included) that do not
/// contain the class root. Classes without a root report every component.
pub fn check_connectivity(labels: &[usize], p: &MrfProblem) -> Vec<(usize, Vec<usize>)> {
    let mut out = Vec::new();
    for class in 0..p.class_count() {
        let nodes: Vec<usize> = (0..labels.len()).filter(|&v| labels[v] == class).collect();
        if nodes.is_empty() {
            continue;
        }
        for comp in p.graph.components_of_subset(&nodes, true) {
            let has_root = p.roots[class].is_some_and(|r| comp.binary_search(&r).is_ok());
            if !has_root {
                out.push((class, comp));
            }
        }
    }
    out
}

fn bfs_distances(g: &RagGraph, sources: &[usize]) -> Vec<usize> {
    let mut dist = vec![usize::MAX; g.node_count()];
    let mut queue = VecDeque::new();
    for &s in sources {
        dist[s] = 0;
        queue.push_back(s);
    }
    while let Some(v) = queue.pop_front() {
        for &(n, _) in g.neighbors(v) {
            if dist[n] == usize::MAX {
                dist[n] = dist[v] + 1;
                queue.push_back(n);
            }
        }
    }
    dist
}

/// True when every path from `from` to `to` (pseudo edges included) passes
/// through `separator`.
pub fn separates(g: &RagGraph, separator: &[usize], from: usize, to: usize) -> bool {
    let mut blocked = vec![false; g.node_count()];
    for &s in separator {
        blocked[s] = true;
    }
    if blocked[from] || blocked[to] || from == to {
        return false;
    }
    let mut seen = vec![false; g.node_count()];
    seen[from] = true;
    let mut queue = VecDeque::from([from]);
    while let Some(v) = queue.pop_front() {
        for &(n, _) in g.neighbors(v) {
            if n == to {
                return false;
            }
            if !seen[n] && !blocked[n] {
                seen[n] = true;
                queue.push_back(n);
            }
        }
    }
    true
}

/// Separator cuts for one disconnected component of class `class`.
///
/// The first separator is the component's neighbourhood. Further ones are
/// the rings at distance 2..=K from the component restricted to shortest
/// component→root paths, kept only when they really separate. All cuts bind
/// the component node closest to the root that is not adjacent to it.
pub fn generate_cuts(component: &[usize], class: usize, p: &MrfProblem, k: usize) -> Vec<SeparatorCut> {
    let g = &p.graph;
    let Some(root) = p.roots[class] else {
        return Vec::new();
    };
    let from_root = bfs_distances(g, &[root]);
    let Some(target) = component
        .iter()
        .copied()
        .filter(|&v| v != root && g.edge_between(v, root).is_none())
        .min_by_key(|&v| (from_root[v], v))
    else {
        return Vec::new();
    };

    let mut in_comp = vec![false; g.node_count()];
    component.iter().for_each(|&v| in_comp[v] = true);
    let mut neighbourhood: Vec<usize> = component
        .iter()
        .flat_map(|&v| g.neighbors(v).iter().map(|&(n, _)| n))
        .filter(|&n| !in_comp[n])
        .collect();
    neighbourhood.sort_unstable();
    neighbourhood.dedup();

    let mut cuts = Vec::new();
    if separates(g, &neighbourhood, target, root) {
        cuts.push(SeparatorCut {
            target,
            class,
            separator: neighbourhood,
        });
    }
    let from_comp = bfs_distances(g, component);
    let span = from_comp[root];
    for t in 2..=k {
        if span == usize::MAX || t >= span {
            break;
        }
        let ring: Vec<usize> = (0..g.node_count())
            .filter(|&v| from_comp[v] == t && from_root[v] != usize::MAX && t + from_root[v] == span)
            .collect();
        if !ring.is_empty() && separates(g, &ring, target, root) {
            cuts.push(SeparatorCut {
                target,
                class,
                separator: ring,
            });
        }
    }
    cuts
}

/// Variable layout of a built model.
#[derive(Debug, Clone)]
pub struct VarMap {
    /// Free node → its slot; variable of class `l` is `slot * k + l`.
    slot: Vec<Option<usize>>,
    k: usize,
    pub x_count: usize,
}

impl VarMap {
    pub fn x(&self, node: usize, class: usize) -> Option<usize> {
        self.slot[node].map(|s| s * self.k + class)
    }
}

/// Linear expression in x variables plus a constant.
fn substitute(p: &MrfProblem, vars: &VarMap, terms: &[(usize, f64)], class: usize) -> (Vec<(usize, f64)>, f64) {
    let mut coeffs = Vec::new();
    let mut constant = 0.0;
    for &(node, a) in terms {
        match vars.x(node, class) {
            Some(v) => coeffs.push((v, a)),
            None => {
                if p.fixed[node] == Some(class) {
                    constant += a;
                }
            }
        }
    }
    (coeffs, constant)
}

fn cut_constraint(p: &MrfProblem, vars: &VarMap, cut: &SeparatorCut) -> Constraint {
    let mut terms = vec![(cut.target, 1.0)];
    terms.extend(cut.separator.iter().map(|&s| (s, -1.0)));
    let (coeffs, constant) = substitute(p, vars, &terms, cut.class);
    Constraint::new(coeffs, Relation::Le, -constant)
}

struct ConnectivitySeparator {
    problem: Arc<MrfProblem>,
    vars: VarMap,
    log: Mutex<Vec<SeparatorCut>>,
}

impl ConnectivitySeparator {
    fn decode(&self, point: &[f64]) -> Vec<usize> {
        decode(&self.problem, &self.vars, point)
    }
}

impl LazyGenerator for ConnectivitySeparator {
    fn separate(&self, point: &[f64]) -> Vec<Constraint> {
        let p = &self.problem;
        let labels = self.decode(point);
        let mut out = Vec::new();
        for (class, comp) in check_connectivity(&labels, p) {
            for cut in generate_cuts(&comp, class, p, p.cut_k.max(1)) {
                let c = cut_constraint(p, &self.vars, &cut);
                // cuts with a fixed member of the class in S are slack
                if !c.is_satisfied(point) {
                    self.log.lock().expect("cut log").push(cut);
                    out.push(c);
                }
            }
        }
        out
    }
}

fn decode(p: &MrfProblem, vars: &VarMap, point: &[f64]) -> Vec<usize> {
    (0..p.graph.node_count())
        .map(|v| match p.fixed[v] {
            Some(c) => c,
            None => (0..vars.k)
                .max_by(|&a, &b| {
                    let (xa, xb) = (point[vars.x(v, a).unwrap()], point[vars.x(v, b).unwrap()]);
                    xa.total_cmp(&xb).then(b.cmp(&a))
                })
                .unwrap_or(0),
        })
        .collect()
}

pub struct BuiltModel {
    pub model: MilpModel,
    pub vars: VarMap,
    /// Present for the connected variant.
    separator: Option<Arc<ConnectivitySeparator>>,
}

/// Builds the 0-1 program. Fixed nodes are substituted by constants; each
/// free–free edge gets one continuous `z ∈ [0,1]` per class with
/// `z ≥ ±(x_i − x_j)`; free–fixed edges reduce to linear terms.
pub fn build_model(p: &MrfProblem) -> Result<BuiltModel, MrfError> {
    let k = p.class_count();
    let n = p.graph.node_count();
    if p.variant == Variant::P {
        let any_free = p.fixed.iter().any(Option::is_none);
        if any_free {
            if let Some(c) = (0..k).find(|&c| p.roots[c].is_none()) {
                return Err(MrfError::MissingRoot(p.costs.classes[c]));
            }
        }
    }
    let mut m = MilpModel::new();
    let mut slot = vec![None; n];
    let mut next = 0;
    for v in 0..n {
        if p.fixed[v].is_none() {
            slot[v] = Some(next);
            next += 1;
            for l in 0..k {
                m.add_binary(p.costs.cost(v, l));
                m.names.push(format!("x_{v}_{}", p.costs.classes[l]));
            }
        } else {
            m.offset += p.costs.cost(v, p.fixed[v].unwrap());
        }
    }
    let vars = VarMap {
        slot,
        k,
        x_count: next * k,
    };
    for v in 0..n {
        if let Some(s) = vars.slot[v] {
            let row = (0..k).map(|l| (s * k + l, 1.0)).collect();
            m.add_constraint(row, Relation::Eq, 1.0);
        }
    }
    for e in p.graph.edges.iter().filter(|e| !e.pseudo) {
        let w = p.lambda * e.weight;
        match (p.fixed[e.a], p.fixed[e.b]) {
            (None, None) => {
                for l in 0..k {
                    let xa = vars.x(e.a, l).unwrap();
                    let xb = vars.x(e.b, l).unwrap();
                    let z = m.add_continuous(w, 0.0, 1.0);
                    m.names.push(format!("z_{}_{}_{}", e.a, e.b, p.costs.classes[l]));
                    m.add_constraint(vec![(z, 1.0), (xa, -1.0), (xb, 1.0)], Relation::Ge, 0.0);
                    m.add_constraint(vec![(z, 1.0), (xa, 1.0), (xb, -1.0)], Relation::Ge, 0.0);
                }
            }
            (Some(f), None) | (None, Some(f)) => {
                let free = if p.fixed[e.a].is_none() { e.a } else { e.b };
                for l in 0..k {
                    let x = vars.x(free, l).unwrap();
                    if l == f {
                        // |x − 1| = 1 − x
                        m.offset += w;
                        m.objective[x] -= w;
                    } else {
                        m.objective[x] += w;
                    }
                }
            }
            (Some(a), Some(b)) => {
                if a != b {
                    m.offset += 2.0 * w;
                }
            }
        }
    }
    let separator = (p.variant == Variant::P).then(|| {
        Arc::new(ConnectivitySeparator {
            problem: Arc::new(p.clone()),
            vars: vars.clone(),
            log: Mutex::new(Vec::new()),
        })
    });
    if let Some(sep) = &separator {
        m.lazy = Some(sep.clone() as Arc<dyn LazyGenerator>);
    }
    Ok(BuiltModel {
        model: m,
        vars,
        separator,
    })
}

impl BuiltModel {
    /// Full variable vector for a labeling given as class indices.
    pub fn encode(&self, p: &MrfProblem, labels: &[usize]) -> Vec<f64> {
        let mut x = vec![0.0; self.model.var_count()];
        for v in 0..labels.len() {
            if let Some(var) = self.vars.x(v, labels[v]) {
                x[var] = 1.0;
            }
        }
        let k = p.class_count();
        let mut z = self.vars.x_count;
        for e in p.graph.edges.iter().filter(|e| !e.pseudo) {
            if p.fixed[e.a].is_none() && p.fixed[e.b].is_none() {
                for _ in 0..k {
                    z += 1;
                }
                if labels[e.a] != labels[e.b] {
                    x[z - k + labels[e.a]] = 1.0;
                    x[z - k + labels[e.b]] = 1.0;
                }
            }
        }
        x
    }

    pub fn decode(&self, p: &MrfProblem, point: &[f64]) -> Vec<usize> {
        decode(p, &self.vars, point)
    }

    pub fn cuts(&self) -> Vec<SeparatorCut> {
        self.separator
            .as_ref()
            .map(|s| s.log.lock().expect("cut log").clone())
            .unwrap_or_default()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MrfSolution {
    /// Class index per node; empty when no solution was found.
    pub labels: Vec<usize>,
    /// Energy of `labels`.
    pub objective: f64,
    pub status: SolveStatus,
    pub stats: SolveStats,
    pub cuts: Vec<SeparatorCut>,
}

/// Solves the problem, optionally from a warm-start labeling (class indices).
pub fn solve_mrf(
    p: &MrfProblem,
    warm_start: Option<&[usize]>,
    budget: &SolveBudget,
) -> Result<MrfSolution, MrfError> {
    let built = build_model(p)?;
    let warm = warm_start.map(|w| built.encode(p, w));
    let sol = milp::solve(&built.model, warm.as_deref(), budget)?;
    let labels = if sol.status.has_solution() {
        built.decode(p, &sol.assignment)
    } else {
        Vec::new()
    };
    let objective = if labels.is_empty() {
        f64::NAN
    } else {
        p.energy(&labels)
    };
    Ok(MrfSolution {
        labels,
        objective,
        status: sol.status,
        stats: sol.stats,
        cuts: built.cuts(),
    })
}

/// Class-only labels with region ids equal to class ids.
pub fn class_labels(p: &MrfProblem, labels: &[usize]) -> LabelState {
    LabelState::new(
        labels
            .iter()
            .map(|&l| {
                let c = p.costs.classes[l];
                NodeLabel::new(c, c, None)
            })
            .collect(),
    )
}

/// Splits each class of a connected labeling into scribbled regions by
/// running region fusion inside every real-edge component of the class,
/// seeded by the fixed nodes found there. Components without any fixed node
/// keep region id = class id.
pub fn recover_regions(
    p: &MrfProblem,
    labels: &[usize],
    fixings: &Fixings,
    cfg: &HeuristicConfig,
) -> Result<LabelState, MrfError> {
    let mut out: Vec<NodeLabel> = class_labels(p, labels).labels;
    for class in 0..p.class_count() {
        let nodes: Vec<usize> = (0..labels.len()).filter(|&v| labels[v] == class).collect();
        for comp in p.graph.components_of_subset(&nodes, false) {
            if comp.iter().all(|&v| fixings.labels[v].is_none()) {
                continue;
            }
            let sub = p.graph.induced_subgraph(&comp);
            let mut sub_fix = Fixings::none(comp.len());
            for (k, &v) in comp.iter().enumerate() {
                sub_fix.labels[k] = fixings.labels[v];
                sub_fix.covered[k] = fixings.covered[v];
            }
            let res = potts_heur::run(&sub, &sub_fix, cfg)?;
            for (k, &v) in comp.iter().enumerate() {
                out[v] = res.labels.labels[k];
            }
        }
    }
    Ok(LabelState::new(out))
}
