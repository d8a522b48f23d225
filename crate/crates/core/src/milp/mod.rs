//! 0-1 mixed integer linear programs: model, best-bound branch and bound
//! over a simplex relaxation with lazy constraints, a brute-force oracle and
//! CPLEX-LP export.

pub mod simplex;

use std::cmp::Ordering;
use std::collections::{BTreeMap, BinaryHeap, HashSet};
use std::fmt::Write as _;
use std::path::Path;
use std::sync::Arc;
use std::time::{Duration, Instant};

use serde::Serialize;
use thiserror::Error;

use simplex::{solve_lp, solve_lp_until, LpOutcome};

const INT_TOL: f64 = 1e-6;
const ROW_TOL: f64 = 1e-6;
pub const BRUTE_FORCE_LIMIT: usize = 24;

#[derive(Debug, Error, PartialEq)]
pub enum MilpError {
    #[error("model has {0} binaries, brute force handles at most {BRUTE_FORCE_LIMIT}")]
    TooLarge(usize),
    #[error("invalid model: {0}")]
    InvalidModel(String),
    #[error("linear relaxation exceeded its iteration limit")]
    LpIterationLimit,
    #[error("time limit reached inside a linear relaxation")]
    DeadlineReached,
    #[error("linear relaxation is unbounded")]
    Unbounded,
    #[error("i/o error on {path}: {message}")]
    Io { path: String, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum Relation {
    Le,
    Eq,
    Ge,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Constraint {
    pub coeffs: Vec<(usize, f64)>,
    pub relation: Relation,
    pub rhs: f64,
}

impl Constraint {
    pub fn new(coeffs: Vec<(usize, f64)>, relation: Relation, rhs: f64) -> Self {
        Self {
            coeffs,
            relation,
            rhs,
        }
    }

    pub fn lhs(&self, x: &[f64]) -> f64 {
        self.coeffs.iter().map(|&(v, a)| a * x[v]).sum()
    }

    pub fn is_satisfied(&self, x: &[f64]) -> bool {
        let lhs = self.lhs(x);
        match self.relation {
            Relation::Le => lhs <= self.rhs + ROW_TOL,
            Relation::Ge => lhs >= self.rhs - ROW_TOL,
            Relation::Eq => (lhs - self.rhs).abs() <= ROW_TOL,
        }
    }

    fn key(&self) -> (Vec<(usize, u64)>, Relation, u64) {
        let mut c: Vec<(usize, u64)> = self.coeffs.iter().map(|&(v, a)| (v, a.to_bits())).collect();
        c.sort_unstable();
        (c, self.relation, self.rhs.to_bits())
    }
}

/// Produces constraints violated by a candidate integer point, or nothing
/// when the point is acceptable.
pub trait LazyGenerator: Send + Sync {
    fn separate(&self, point: &[f64]) -> Vec<Constraint>;
}

impl<F> LazyGenerator for F
where
    F: Fn(&[f64]) -> Vec<Constraint> + Send + Sync,
{
    fn separate(&self, point: &[f64]) -> Vec<Constraint> {
        self(point)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum VarKind {
    Binary,
    Continuous { lb: f64, ub: f64 },
}

#[derive(Clone, Default)]
pub struct MilpModel {
    pub kinds: Vec<VarKind>,
    pub objective: Vec<f64>,
    /// Constant added to every objective value.
    pub offset: f64,
    pub constraints: Vec<Constraint>,
    pub fixed: BTreeMap<usize, bool>,
    pub names: Vec<String>,
    pub lazy: Option<Arc<dyn LazyGenerator>>,
}

impl std::fmt::Debug for MilpModel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("MilpModel")
            .field("vars", &self.kinds.len())
            .field("constraints", &self.constraints.len())
            .field("fixed", &self.fixed.len())
            .field("lazy", &self.lazy.is_some())
            .finish()
    }
}

impl MilpModel {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_binary(&mut self, cost: f64) -> usize {
        self.kinds.push(VarKind::Binary);
        self.objective.push(cost);
        self.kinds.len() - 1
    }

    pub fn add_continuous(&mut self, cost: f64, lb: f64, ub: f64) -> usize {
        self.kinds.push(VarKind::Continuous { lb, ub });
        self.objective.push(cost);
        self.kinds.len() - 1
    }

    pub fn add_constraint(&mut self, coeffs: Vec<(usize, f64)>, relation: Relation, rhs: f64) {
        self.constraints.push(Constraint::new(coeffs, relation, rhs));
    }

    pub fn fix(&mut self, var: usize, value: bool) {
        self.fixed.insert(var, value);
    }

    pub fn with_lazy(mut self, gen: Arc<dyn LazyGenerator>) -> Self {
        self.lazy = Some(gen);
        self
    }

    pub fn var_count(&self) -> usize {
        self.kinds.len()
    }

    pub fn binaries(&self) -> Vec<usize> {
        (0..self.kinds.len())
            .filter(|&v| self.kinds[v] == VarKind::Binary)
            .collect()
    }

    pub fn name(&self, v: usize) -> String {
        self.names.get(v).cloned().unwrap_or_else(|| format!("x{v}"))
    }

    pub fn evaluate(&self, x: &[f64]) -> f64 {
        self.offset + self.objective.iter().zip(x).map(|(c, v)| c * v).sum::<f64>()
    }

    fn bounds(&self) -> (Vec<f64>, Vec<f64>) {
        let mut lb = Vec::with_capacity(self.kinds.len());
        let mut ub = Vec::with_capacity(self.kinds.len());
        for (v, k) in self.kinds.iter().enumerate() {
            let (l, u) = match (*k, self.fixed.get(&v)) {
                (_, Some(&b)) => (f64::from(u8::from(b)), f64::from(u8::from(b))),
                (VarKind::Binary, None) => (0.0, 1.0),
                (VarKind::Continuous { lb, ub }, None) => (lb, ub),
            };
            lb.push(l);
            ub.push(u);
        }
        (lb, ub)
    }

    pub fn validate(&self) -> Result<(), MilpError> {
        let n = self.kinds.len();
        if self.objective.len() != n {
            return Err(MilpError::InvalidModel(format!(
                "{} objective coefficients for {n} variables",
                self.objective.len()
            )));
        }
        if !self.objective.iter().all(|c| c.is_finite()) || !self.offset.is_finite() {
            return Err(MilpError::InvalidModel("non-finite objective".into()));
        }
        for k in &self.kinds {
            if let VarKind::Continuous { lb, ub } = *k {
                if !lb.is_finite() || !ub.is_finite() || lb > ub {
                    return Err(MilpError::InvalidModel(format!("bad bounds [{lb}, {ub}]")));
                }
            }
        }
        for (i, c) in self.constraints.iter().enumerate() {
            if !c.rhs.is_finite() || c.coeffs.iter().any(|&(v, a)| v >= n || !a.is_finite()) {
                return Err(MilpError::InvalidModel(format!("bad constraint {i}")));
            }
        }
        if let Some((&v, _)) = self.fixed.iter().find(|(&v, _)| v >= n) {
            return Err(MilpError::InvalidModel(format!("fixed variable {v} out of range")));
        }
        Ok(())
    }

    /// Static feasibility: bounds, integrality, fixings and constraints.
    pub fn is_feasible(&self, x: &[f64]) -> bool {
        let (lb, ub) = self.bounds();
        x.len() == self.kinds.len()
            && x.iter().enumerate().all(|(v, &val)| {
                val >= lb[v] - ROW_TOL
                    && val <= ub[v] + ROW_TOL
                    && (self.kinds[v] != VarKind::Binary || (val - val.round()).abs() <= INT_TOL)
            })
            && self.constraints.iter().all(|c| c.is_satisfied(x))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SolveBudget {
    pub time_limit: Option<Duration>,
    pub node_limit: Option<u64>,
    /// Relative optimality gap used for pruning.
    pub gap_tolerance: f64,
}

impl Default for SolveBudget {
    fn default() -> Self {
        Self {
            time_limit: None,
            node_limit: None,
            gap_tolerance: 1e-9,
        }
    }
}

impl SolveBudget {
    pub fn unlimited() -> Self {
        Self::default()
    }

    pub fn nodes(limit: u64) -> Self {
        Self {
            node_limit: Some(limit),
            ..Self::default()
        }
    }

    pub fn seconds(secs: f64) -> Self {
        Self {
            time_limit: Some(Duration::from_secs_f64(secs)),
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveStatus {
    Optimal,
    FeasibleBudgetHit,
    Infeasible,
    NoSolutionBudgetHit,
}

impl SolveStatus {
    pub fn has_solution(self) -> bool {
        matches!(self, SolveStatus::Optimal | SolveStatus::FeasibleBudgetHit)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct SolveStats {
    pub nodes: u64,
    pub cuts: usize,
    pub lp_solves: u64,
    /// Relaxation value at the root, before any lazy cut.
    pub root_bound: Option<f64>,
    pub warm_start_accepted: bool,
    /// Objective of the accepted warm start.
    pub warm_start_objective: Option<f64>,
    pub wall_seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MilpSolution {
    pub assignment: Vec<f64>,
    pub objective: f64,
    pub status: SolveStatus,
    pub stats: SolveStats,
}

#[derive(Debug)]
struct Node {
    bound: f64,
    seq: u64,
    fixings: Vec<(usize, bool)>,
}

impl PartialEq for Node {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Node {}

impl PartialOrd for Node {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Node {
    // reversed: BinaryHeap is a max-heap and we want the lowest bound first
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .bound
            .total_cmp(&self.bound)
            .then_with(|| other.seq.cmp(&self.seq))
    }
}

struct CutPool {
    cuts: Vec<Constraint>,
    seen: HashSet<(Vec<(usize, u64)>, Relation, u64)>,
}

impl CutPool {
    fn add(&mut self, c: Constraint) -> bool {
        if self.seen.insert(c.key()) {
            self.cuts.push(c);
            true
        } else {
            false
        }
    }
}

/// Best-bound branch and bound. Integer points found by the relaxation are
/// handed to the lazy generator; violated constraints join a global pool and
/// the node is solved again.
pub fn solve(
    m: &MilpModel,
    warm_start: Option<&[f64]>,
    budget: &SolveBudget,
) -> Result<MilpSolution, MilpError> {
    m.validate()?;
    let start = Instant::now();
    let (base_lb, base_ub) = m.bounds();
    let mut stats = SolveStats::default();
    let mut pool = CutPool {
        cuts: Vec::new(),
        seen: HashSet::new(),
    };
    let mut incumbent: Option<(Vec<f64>, f64)> = None;

    if let Some(ws) = warm_start {
        if m.is_feasible(ws) {
            let cuts = m.lazy.as_ref().map(|g| g.separate(ws)).unwrap_or_default();
            if cuts.is_empty() {
                let value = m.evaluate(ws);
                stats.warm_start_accepted = true;
                stats.warm_start_objective = Some(value);
                incumbent = Some((ws.to_vec(), value));
            } else {
                log::warn!("warm start violates {} lazy constraints; ignored", cuts.len());
                for c in cuts {
                    if pool.add(c) {
                        stats.cuts += 1;
                    }
                }
            }
        } else {
            log::warn!("warm start violates static constraints; ignored");
        }
    }

    let prune = |bound: f64, inc: &Option<(Vec<f64>, f64)>| match inc {
        Some((_, v)) => bound >= v - budget.gap_tolerance * v.abs().max(1.0),
        None => false,
    };

    let mut heap = BinaryHeap::new();
    let mut seq = 0u64;
    heap.push(Node {
        bound: f64::NEG_INFINITY,
        seq,
        fixings: Vec::new(),
    });
    let mut budget_hit = false;
    let deadline = budget.time_limit.map(|t| start + t);

    'search: while let Some(node) = heap.pop() {
        if prune(node.bound, &incumbent) {
            continue;
        }
        if budget.node_limit.is_some_and(|l| stats.nodes >= l)
            || budget.time_limit.is_some_and(|t| start.elapsed() >= t)
        {
            budget_hit = true;
            break;
        }
        stats.nodes += 1;
        let (mut lb, mut ub) = (base_lb.clone(), base_ub.clone());
        for &(v, b) in &node.fixings {
            let val = f64::from(u8::from(b));
            lb[v] = val;
            ub[v] = val;
        }
        loop {
            stats.lp_solves += 1;
            let outcome = match solve_lp_until(
                &m.objective,
                m.constraints.iter().chain(pool.cuts.iter()),
                &lb,
                &ub,
                deadline,
            ) {
                Err(MilpError::DeadlineReached) => {
                    budget_hit = true;
                    break 'search;
                }
                other => other?,
            };
            let LpOutcome::Optimal { x, value } = outcome else {
                break;
            };
            let value = value + m.offset;
            if node.fixings.is_empty() && stats.root_bound.is_none() {
                stats.root_bound = Some(value);
            }
            if prune(value, &incumbent) {
                break;
            }
            let branch = match most_fractional(m, &x, INT_TOL) {
                Some(v) => v,
                None => {
                    let mut point = x.clone();
                    for v in m.binaries() {
                        point[v] = point[v].round();
                    }
                    let cuts = m.lazy.as_ref().map(|g| g.separate(&point)).unwrap_or_default();
                    if cuts.is_empty() {
                        if !m.is_feasible(&point) {
                            return Err(MilpError::InvalidModel(
                                "rounded relaxation point violates the model".into(),
                            ));
                        }
                        let value = m.evaluate(&point);
                        if incumbent.as_ref().is_none_or(|(_, v)| value < *v) {
                            incumbent = Some((point, value));
                        }
                        break;
                    }
                    let added = cuts.into_iter().filter(|c| pool.add(c.clone())).count();
                    stats.cuts += added;
                    if added > 0 {
                        continue;
                    }
                    // a known cut is only violated after rounding: branch on
                    // the nearly integral variable instead
                    match most_fractional(m, &x, 0.0) {
                        Some(v) => v,
                        None => {
                            return Err(MilpError::InvalidModel(
                                "lazy generator repeats a constraint the point satisfies".into(),
                            ))
                        }
                    }
                }
            };
            let var = branch;
            for b in [false, true] {
                seq += 1;
                let mut fixings = node.fixings.clone();
                fixings.push((var, b));
                heap.push(Node {
                    bound: value,
                    seq,
                    fixings,
                });
            }
            break;
        }
    }

    stats.wall_seconds = start.elapsed().as_secs_f64();
    let status = match (&incumbent, budget_hit) {
        (Some(_), false) => SolveStatus::Optimal,
        (Some(_), true) => SolveStatus::FeasibleBudgetHit,
        (None, false) => SolveStatus::Infeasible,
        (None, true) => SolveStatus::NoSolutionBudgetHit,
    };
    let (assignment, objective) = incumbent.unwrap_or((Vec::new(), f64::NAN));
    Ok(MilpSolution {
        assignment,
        objective,
        status,
        stats,
    })
}

fn most_fractional(m: &MilpModel, x: &[f64], tol: f64) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for v in 0..x.len() {
        if m.kinds[v] != VarKind::Binary {
            continue;
        }
        let frac = (x[v] - x[v].floor()).min(x[v].ceil() - x[v]);
        if frac > tol && best.is_none_or(|(_, f)| frac > f + 1e-12) {
            best = Some((v, frac));
        }
    }
    best.map(|(v, _)| v)
}

/// Exhaustive enumeration of the binaries in lexicographic order; the
/// continuous part of each point is completed by linear programming. A point
/// counts only if the lazy generator has nothing to say about it. Ties go to
/// the lexicographically smallest assignment.
pub fn brute_force(m: &MilpModel) -> Result<MilpSolution, MilpError> {
    m.validate()?;
    let start = Instant::now();
    let bins = m.binaries();
    if bins.len() > BRUTE_FORCE_LIMIT {
        return Err(MilpError::TooLarge(bins.len()));
    }
    let (base_lb, base_ub) = m.bounds();
    let has_continuous = bins.len() < m.kinds.len();
    let mut best: Option<(Vec<f64>, f64)> = None;
    let mut stats = SolveStats::default();
    let nb = bins.len();
    for code in 0u64..(1u64 << nb) {
        let mut lb = base_lb.clone();
        let mut ub = base_ub.clone();
        let mut ok = true;
        for (k, &v) in bins.iter().enumerate() {
            // first binary is the most significant digit
            let bit = (code >> (nb - 1 - k)) & 1;
            let val = bit as f64;
            if val < lb[v] || val > ub[v] {
                ok = false;
                break;
            }
            lb[v] = val;
            ub[v] = val;
        }
        if !ok {
            continue;
        }
        stats.nodes += 1;
        let point = if has_continuous {
            stats.lp_solves += 1;
            match solve_lp(&m.objective, &m.constraints, &lb, &ub)? {
                LpOutcome::Optimal { x, .. } => {
                    let mut x = x;
                    for &v in &bins {
                        x[v] = lb[v];
                    }
                    x
                }
                LpOutcome::Infeasible => continue,
            }
        } else {
            let x = lb;
            if !m.constraints.iter().all(|c| c.is_satisfied(&x)) {
                continue;
            }
            x
        };
        if let Some(g) = &m.lazy {
            if !g.separate(&point).is_empty() {
                continue;
            }
        }
        let value = m.evaluate(&point);
        let better = match &best {
            None => true,
            Some((_, b)) => value < b - 1e-9 * b.abs().max(1.0),
        };
        if better {
            best = Some((point, value));
        }
    }
    stats.wall_seconds = start.elapsed().as_secs_f64();
    let status = if best.is_some() {
        SolveStatus::Optimal
    } else {
        SolveStatus::Infeasible
    };
    let (assignment, objective) = best.unwrap_or((Vec::new(), f64::NAN));
    Ok(MilpSolution {
        assignment,
        objective,
        status,
        stats,
    })
}

fn fmt_num(v: f64) -> String {
    if v == v.trunc() && v.abs() < 1e15 {
        format!("{}", v as i64)
    } else {
        format!("{v}")
    }
}

fn write_terms(out: &mut String, m: &MilpModel, terms: &[(usize, f64)]) {
    if terms.is_empty() {
        out.push_str(" 0");
        return;
    }
    for (k, &(v, a)) in terms.iter().enumerate() {
        let sign = if a < 0.0 { "-" } else { "+" };
        if k == 0 {
            if a < 0.0 {
                out.push_str(" -");
            }
        } else {
            let _ = write!(out, " {sign}");
        }
        let _ = write!(out, " {} {}", fmt_num(a.abs()), m.name(v));
    }
}

/// Renders the static part of the model in CPLEX LP format.
pub fn to_lp_string(m: &MilpModel) -> String {
    let mut out = String::new();
    out.push_str("\\ exported by cseg\n");
    out.push_str("\\ lazy constraints are generated during the solve and are not exported\n");
    if m.offset != 0.0 {
        let _ = writeln!(out, "\\ objective offset: {}", m.offset);
    }
    out.push_str("Minimize\n obj:");
    let terms: Vec<(usize, f64)> = m
        .objective
        .iter()
        .enumerate()
        .filter(|(_, &c)| c != 0.0)
        .map(|(v, &c)| (v, c))
        .collect();
    if terms.is_empty() && !m.kinds.is_empty() {
        let _ = write!(out, " 0 {}", m.name(0));
    } else {
        write_terms(&mut out, m, &terms);
    }
    out.push_str("\nSubject To\n");
    for (i, c) in m.constraints.iter().enumerate() {
        let _ = write!(out, " c{i}:");
        write_terms(&mut out, m, &c.coeffs);
        let rel = match c.relation {
            Relation::Le => "<=",
            Relation::Eq => "=",
            Relation::Ge => ">=",
        };
        let _ = writeln!(out, " {rel} {}", fmt_num(c.rhs));
    }
    out.push_str("Bounds\n");
    for (v, k) in m.kinds.iter().enumerate() {
        match (m.fixed.get(&v), *k) {
            (Some(&b), _) => {
                let _ = writeln!(out, " {} = {}", m.name(v), u8::from(b));
            }
            (None, VarKind::Continuous { lb, ub }) => {
                let _ = writeln!(out, " {} <= {} <= {}", fmt_num(lb), m.name(v), fmt_num(ub));
            }
            (None, VarKind::Binary) => {}
        }
    }
    let bins = m.binaries();
    if !bins.is_empty() {
        out.push_str("Binaries\n");
        for chunk in bins.chunks(10) {
            let names: Vec<String> = chunk.iter().map(|&v| m.name(v)).collect();
            let _ = writeln!(out, " {}", names.join(" "));
        }
    }
    out.push_str("End\n");
    out
}

pub fn export_lp(m: &MilpModel, path: impl AsRef<Path>) -> Result<(), MilpError> {
    let path = path.as_ref();
    std::fs::write(path, to_lp_string(m)).map_err(|e| MilpError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    })
}
