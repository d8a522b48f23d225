//! Acceptance criteria. Each criterion prints one `PASS`/`FAIL` line; the
//! process exits non-zero when any of them fails.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::process::ExitCode;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use cseg::labels::{LabelState, NodeLabel};
use cseg::metrics;
use cseg::milp::SolveBudget;
use cseg::mrf_ilp::{self, MrfProblem, SeparatorCut, Variant};
use cseg::potts_heur::{self, beta_schedule, HeuristicConfig};
use cseg::rag::{self, CostTable, Fixings, RagEdge, RagGraph, RagNode, RegionSeed};
use cseg::raster::{PanopticTruth, IGNORE};
use cseg::scribble::{Coverage, ScribbleError};
use cseg::synth::{self, Scene};
use cseg::{Algorithm, ScribbleSet, Session, SessionConfig, SessionError, SessionInputs};

struct Verdict {
    name: &'static str,
    pass: bool,
    detail: String,
}

impl Verdict {
    fn new(name: &'static str, pass: bool, detail: String) -> Self {
        Self { name, pass, detail }
    }
}

fn main() -> ExitCode {
    let mut verdicts = Vec::new();
    let mut report = |v: Verdict| {
        println!("{} {}: {}", if v.pass { "PASS" } else { "FAIL" }, v.name, v.detail);
        verdicts.push(v.pass);
    };

    report(ilp_u_exactness());
    let suite = ilp_p_suite();
    report(suite.exactness);
    report(suite.cuts);
    report(heuristic_connectivity());
    report(heuristic_scaling());
    report(beta_at_fifty());
    report(connectivity_matters());
    report(interactive_improvement());
    report(metrics_oracle());
    report(suite.warm_start);

    let failed = verdicts.iter().filter(|p| !**p).count();
    println!("{} of {} criteria passed", verdicts.len() - failed, verdicts.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}

// ---------------------------------------------------------------------------
// Random small labeling problems and a brute-force oracle.

struct Instance {
    graph: RagGraph,
    costs: CostTable,
    fixings: Fixings,
    lambda: f64,
    /// Root node of every scribbled region, by class index.
    roots: Vec<Vec<usize>>,
}

fn find(parent: &mut [usize], v: usize) -> usize {
    let mut r = v;
    while parent[r] != r {
        r = parent[r];
    }
    let mut v = v;
    while parent[v] != r {
        let next = parent[v];
        parent[v] = r;
        v = next;
    }
    r
}

fn union(parent: &mut [usize], a: usize, b: usize) -> bool {
    let (ra, rb) = (find(parent, a), find(parent, b));
    if ra == rb {
        return false;
    }
    parent[ra] = rb;
    true
}

/// Grid-embedded graph: each grid edge kept with probability 0.7, a few
/// diagonals, then missing grid edges restored until connected.
fn planar_graph(n: usize, rng: &mut ChaCha8Rng) -> RagGraph {
    let cols = (n as f64).sqrt().ceil() as usize;
    let mut grid_edges = Vec::new();
    for v in 0..n {
        let x = v % cols;
        if x + 1 < cols && v + 1 < n {
            grid_edges.push((v, v + 1));
        }
        if v + cols < n {
            grid_edges.push((v, v + cols));
        }
        if x + 1 < cols && v + cols + 1 < n && rng.random_bool(0.2) {
            grid_edges.push((v, v + cols + 1));
        }
    }
    let mut parent: Vec<usize> = (0..n).collect();
    let mut edges = Vec::new();
    let mut kept = vec![false; grid_edges.len()];
    for (k, &(a, b)) in grid_edges.iter().enumerate() {
        if rng.random_bool(0.7) {
            kept[k] = true;
            union(&mut parent, a, b);
            edges.push(RagEdge::real(a, b, rng.random_range(1..6)));
        }
    }
    for (k, &(a, b)) in grid_edges.iter().enumerate() {
        if !kept[k] && union(&mut parent, a, b) {
            edges.push(RagEdge::real(a, b, rng.random_range(1..6)));
        }
    }
    let nodes = (0..n)
        .map(|id| RagNode {
            id,
            size: 1,
            feature: (0..3).map(|_| rng.random::<f64>() * 2.0).collect(),
            pixels: vec![id],
        })
        .collect();
    let mut g = RagGraph::from_parts(nodes, edges);
    rag::pairwise_weights(&mut g);
    g
}

/// `regions` lists the class index of every scribbled region; each region
/// fixes one node, which is also its root.
fn random_instance(rng: &mut ChaCha8Rng, k: usize, regions: &[usize], lambda: f64) -> Instance {
    let free = rng.random_range(3..=10);
    let n = free + regions.len();
    let graph = planar_graph(n, rng);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    let mut fixings = Fixings::none(n);
    let mut roots = vec![Vec::new(); k];
    for (r, &class) in regions.iter().enumerate() {
        let v = order[r];
        let label = NodeLabel::new(class as u32, r as u32 + 1, None);
        fixings.labels[v] = Some(label);
        fixings.covered[v] = true;
        fixings.regions.push(RegionSeed { label, root: v });
        roots[class].push(v);
    }
    let unary = (0..n * k).map(|_| rng.random::<f64>()).collect();
    Instance {
        graph,
        costs: CostTable::new((0..k as u32).collect(), unary),
        fixings,
        lambda,
        roots,
    }
}

/// Unary terms in node order, then `2·λ·d` for every cut real edge in edge
/// order.
fn oracle_energy(inst: &Instance, labels: &[usize]) -> f64 {
    let k = inst.costs.classes.len();
    let mut e = 0.0;
    for (v, &l) in labels.iter().enumerate() {
        e += inst.costs.unary[v * k + l];
    }
    for edge in &inst.graph.edges {
        if labels[edge.a] != labels[edge.b] {
            e += 2.0 * inst.lambda * edge.weight;
        }
    }
    e
}

/// Every class forms one component once its scribbled roots are joined.
fn oracle_connected(inst: &Instance, labels: &[usize]) -> bool {
    let n = labels.len();
    let mut parent: Vec<usize> = (0..n).collect();
    for e in &inst.graph.edges {
        if labels[e.a] == labels[e.b] {
            union(&mut parent, e.a, e.b);
        }
    }
    for roots in &inst.roots {
        for pair in roots.windows(2) {
            union(&mut parent, pair[0], pair[1]);
        }
    }
    let mut rep: BTreeMap<usize, usize> = BTreeMap::new();
    for v in 0..n {
        let r = find(&mut parent, v);
        if *rep.entry(labels[v]).or_insert(r) != r {
            return false;
        }
    }
    true
}

/// Minimum energy labeling honouring the fixings, optionally restricted to
/// connected labelings.
fn brute_force(inst: &Instance, connected: bool) -> Option<(Vec<usize>, f64)> {
    let k = inst.costs.classes.len();
    let n = inst.graph.node_count();
    let free: Vec<usize> = (0..n).filter(|&v| inst.fixings.labels[v].is_none()).collect();
    let mut labels: Vec<usize> = inst
        .fixings
        .labels
        .iter()
        .map(|l| l.map_or(0, |l| l.class_id as usize))
        .collect();
    let mut best: Option<(Vec<usize>, f64)> = None;
    loop {
        if !connected || oracle_connected(inst, &labels) {
            let e = oracle_energy(inst, &labels);
            if best.as_ref().is_none_or(|b| e < b.1) {
                best = Some((labels.clone(), e));
            }
        }
        let mut i = 0;
        loop {
            if i == free.len() {
                return best;
            }
            let v = free[i];
            labels[v] += 1;
            if labels[v] < k {
                break;
            }
            labels[v] = 0;
            i += 1;
        }
    }
}

fn problem(inst: &Instance, variant: Variant) -> MrfProblem {
    MrfProblem::new(inst.graph.clone(), inst.costs.clone(), inst.lambda, &inst.fixings, variant)
        .expect("well-formed instance")
}

const LAMBDAS: [f64; 3] = [0.0, 1.0, 100.0];

fn ilp_u_exactness() -> Verdict {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(0x11);
    let mut failures = Vec::new();
    for i in 0..200 {
        let k = rng.random_range(1..=3);
        let scribbled = rng.random_range(0..=k);
        let regions: Vec<usize> = (0..scribbled).collect();
        let inst = random_instance(&mut rng, k, &regions, LAMBDAS[i % 3]);
        let (_, expected) = brute_force(&inst, false).expect("unconstrained problems are feasible");
        let sol = mrf_ilp::solve_mrf(&problem(&inst, Variant::U), None, &SolveBudget::unlimited());
        match sol {
            Ok(s) if s.objective == expected => {}
            Ok(s) => failures.push(format!("#{i}: {} vs {expected} ({:?})", s.objective, s.status)),
            Err(e) => failures.push(format!("#{i}: {e}")),
        }
    }
    let secs = start.elapsed().as_secs_f64();
    Verdict::new(
        "ilp_u_exactness",
        failures.is_empty() && secs < 60.0,
        format!("{}/200 exact, {secs:.1} s (limit 60 s) {}", 200 - failures.len(), failures.join("; ")),
    )
}

struct PSuite {
    exactness: Verdict,
    cuts: Verdict,
    warm_start: Verdict,
}

/// Flood fill from `from` avoiding `separator`; true when `to` is unreachable.
fn oracle_separates(g: &RagGraph, separator: &[usize], from: usize, to: usize) -> bool {
    let blocked: BTreeSet<usize> = separator.iter().copied().collect();
    if blocked.contains(&from) || blocked.contains(&to) {
        return false;
    }
    let mut adj = vec![Vec::new(); g.node_count()];
    for e in &g.edges {
        adj[e.a].push(e.b);
        adj[e.b].push(e.a);
    }
    let mut seen = vec![false; g.node_count()];
    seen[from] = true;
    let mut queue = VecDeque::from([from]);
    while let Some(v) = queue.pop_front() {
        if v == to {
            return false;
        }
        for &u in &adj[v] {
            if !seen[u] && !blocked.contains(&u) {
                seen[u] = true;
                queue.push_back(u);
            }
        }
    }
    true
}

fn ilp_p_suite() -> PSuite {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(0x22);
    let mut exact_fail = Vec::new();
    let mut cut_count = 0;
    let mut cut_fail = Vec::new();
    let mut warm_fail = Vec::new();
    let heur = HeuristicConfig::default();
    for i in 0..200 {
        let k = rng.random_range(1..=3);
        let mut regions: Vec<usize> = (0..k).collect();
        for _ in 0..rng.random_range(0..=2) {
            regions.push(rng.random_range(0..k));
        }
        let inst = random_instance(&mut rng, k, &regions, LAMBDAS[i % 3]);
        let p = problem(&inst, Variant::P);
        let Some((best_labels, expected)) = brute_force(&inst, true) else {
            exact_fail.push(format!("#{i}: oracle found no connected labeling"));
            continue;
        };

        let mut cuts: Vec<SeparatorCut> = Vec::new();
        match mrf_ilp::solve_mrf(&p, None, &SolveBudget::unlimited()) {
            Ok(s) => {
                if s.objective != expected {
                    exact_fail.push(format!("#{i}: {} vs {expected} ({:?})", s.objective, s.status));
                }
                cuts.extend(s.cuts);
            }
            Err(e) => exact_fail.push(format!("#{i}: {e}")),
        }

        match potts_heur::run(&inst.graph, &inst.fixings, &heur) {
            Ok(out) => {
                let warm: Vec<usize> = out.labels.labels.iter().map(|l| l.class_id as usize).collect();
                let warm_energy = oracle_energy(&inst, &warm);
                match mrf_ilp::solve_mrf(&p, Some(&warm), &SolveBudget::unlimited()) {
                    Ok(s) => {
                        if !(s.objective <= warm_energy) {
                            warm_fail.push(format!("#{i}: {} > {warm_energy}", s.objective));
                        }
                        cuts.extend(s.cuts);
                    }
                    Err(e) => warm_fail.push(format!("#{i}: {e}")),
                }
            }
            Err(e) => warm_fail.push(format!("#{i}: heuristic failed: {e}")),
        }

        for cut in &cuts {
            cut_count += 1;
            let root = inst.roots[cut.class][0];
            if !oracle_separates(&p.graph, &cut.separator, cut.target, root) {
                cut_fail.push(format!("#{i}: {cut:?} does not separate from root {root}"));
            }
            let covered = cut.separator.iter().any(|&s| best_labels[s] == cut.class);
            if best_labels[cut.target] == cut.class && !covered {
                cut_fail.push(format!("#{i}: {cut:?} cuts off the optimum"));
            }
        }
    }
    let secs = start.elapsed().as_secs_f64();
    PSuite {
        exactness: Verdict::new(
            "ilp_p_exactness",
            exact_fail.is_empty() && secs < 300.0,
            format!(
                "{}/200 exact, {secs:.1} s (limit 300 s) {}",
                200 - exact_fail.len(),
                exact_fail.join("; ")
            ),
        ),
        cuts: Verdict::new(
            "cut_validity",
            cut_fail.is_empty(),
            format!("{cut_count} cuts, {} violations {}", cut_fail.len(), cut_fail.join("; ")),
        ),
        warm_start: Verdict::new(
            "warm_start_dominance",
            warm_fail.is_empty(),
            format!("{}/200 instances dominated {}", 200 - warm_fail.len(), warm_fail.join("; ")),
        ),
    }
}

// ---------------------------------------------------------------------------
// Region fusion on larger synthetic graphs.

fn prepare(scene: &Scene) -> (RagGraph, Fixings) {
    let set = &scene.scribbles;
    let (w, h) = (scene.image.width, scene.image.height);
    let coverage = Coverage::build(set, w, h);
    let split = rag::split_superpixels(&scene.superpixels, &coverage, set).expect("split");
    let mut graph = rag::build_rag(&split, &scene.image).expect("graph");
    rag::pairwise_weights(&mut graph);
    let fixings = rag::freeze_scribbled(&graph, &coverage, set).expect("fixings");
    (graph, fixings)
}

/// Number of connected components (real edges only) of every region.
fn region_components(labels: &LabelState, g: &RagGraph) -> BTreeMap<u32, usize> {
    let n = g.node_count();
    let mut parent: Vec<usize> = (0..n).collect();
    for e in g.edges.iter().filter(|e| !e.pseudo) {
        if labels.labels[e.a].region_id == labels.labels[e.b].region_id {
            union(&mut parent, e.a, e.b);
        }
    }
    let mut reps: BTreeMap<u32, BTreeSet<usize>> = BTreeMap::new();
    for v in 0..n {
        let r = find(&mut parent, v);
        reps.entry(labels.labels[v].region_id).or_default().insert(r);
    }
    reps.into_iter().map(|(region, set)| (region, set.len())).collect()
}

fn heuristic_connectivity() -> Verdict {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(0x33);
    let mut failures = Vec::new();
    let mut largest = 0;
    for i in 0..500u64 {
        let cell = rng.random_range(3..=6);
        let w = rng.random_range(24..=200);
        let max_h = (1850 * cell * cell / w).clamp(24, 200);
        let h = rng.random_range(24..=max_h);
        let scribbles = rng.random_range(2..=8);
        let scene = synth::fuzz_scene(i, w, h, cell, scribbles);
        let (graph, fixings) = prepare(&scene);
        largest = largest.max(graph.node_count());
        let out = match potts_heur::run(&graph, &fixings, &HeuristicConfig::default()) {
            Ok(out) => out,
            Err(e) => {
                failures.push(format!("#{i}: {e}"));
                continue;
            }
        };
        let comps = region_components(&out.labels, &graph);
        let split: Vec<u32> = comps.iter().filter(|(_, &c)| c != 1).map(|(&r, _)| r).collect();
        if !split.is_empty() {
            failures.push(format!("#{i}: regions {split:?} disconnected"));
        }
        if comps.len() != scene.scribbles.scribbles.len() {
            failures.push(format!("#{i}: {} regions for {} scribbles", comps.len(), scene.scribbles.scribbles.len()));
        }
    }
    Verdict::new(
        "l0h_connectivity",
        failures.is_empty(),
        format!(
            "{}/500 instances (largest graph {largest} nodes), {:.1} s {}",
            500 - failures.len(),
            start.elapsed().as_secs_f64(),
            failures.join("; ")
        ),
    )
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    v[v.len() / 2]
}

fn timed_runs(height: usize, seeds: std::ops::Range<u64>) -> (usize, f64) {
    let mut times = Vec::new();
    let mut nodes = 0;
    for seed in seeds {
        let scene = synth::fuzz_scene(seed, 200, height, 4, 8);
        let (graph, fixings) = prepare(&scene);
        nodes = graph.node_count();
        let cfg = HeuristicConfig::default();
        let t = Instant::now();
        potts_heur::run(&graph, &fixings, &cfg).expect("heuristic");
        times.push(t.elapsed().as_secs_f64());
    }
    (nodes, median(times))
}

fn heuristic_scaling() -> Verdict {
    let _ = timed_runs(160, 0..2);
    let (n2, t2) = timed_runs(160, 100..109);
    let (n4, t4) = timed_runs(320, 200..209);
    let ratio = t4 / t2;
    Verdict::new(
        "l0h_scaling",
        ratio < 2.5,
        format!("median {t2:.4} s at {n2} nodes, {t4:.4} s at {n4} nodes, ratio {ratio:.2} (limit 2.5)"),
    )
}

fn beta_at_fifty() -> Verdict {
    let etas = [0.1, 0.3, 20.0, 100.0];
    let bad: Vec<String> = etas
        .iter()
        .filter(|&&eta| beta_schedule(50, eta) != eta)
        .map(|eta| format!("{eta} -> {}", beta_schedule(50, *eta)))
        .collect();
    Verdict::new("beta_schedule", bad.is_empty(), format!("eta {etas:?} {}", bad.join("; ")))
}

// ---------------------------------------------------------------------------
// Sessions on synthetic scenes.

fn session_for(scene: &Scene, config: SessionConfig) -> Session {
    let inputs = SessionInputs::new(
        scene.image.clone(),
        Some(scene.superpixels.clone()),
        None,
        scene.probmap.clone(),
        400,
    )
    .expect("scene inputs");
    Session::new(inputs, config)
}

fn connectivity_matters() -> Verdict {
    let scene = synth::spurious_island_scene();
    let run = |algo| {
        let config = SessionConfig {
            algo,
            lambda: 0.5,
            ..SessionConfig::default()
        };
        let mut s = session_for(&scene, config);
        let r = s.run_round(Some(scene.scribbles.clone()), Some(&scene.truth)).expect("round");
        let comps = region_components(&r.labels, &r.graph);
        let disconnected = comps.values().filter(|&&c| c > 1).count();
        (r.report.metrics.as_ref().expect("metrics").miou, disconnected, r.report.status.clone())
    };
    let (miou_u, disc_u, status_u) = run(Algorithm::IlpU);
    let (miou_p, disc_p, status_p) = run(Algorithm::IlpP);
    Verdict::new(
        "connectivity_matters",
        disc_p == 0 && miou_p > miou_u,
        format!(
            "ilp-p mIoU {miou_p:.4} with {disc_p} disconnected regions ({status_p}); \
             ilp-u mIoU {miou_u:.4} with {disc_u} ({status_u})"
        ),
    )
}

fn interactive_improvement() -> Verdict {
    let start = Instant::now();
    let mut monotone = 0;
    let mut pairs = 0;
    let mut gains = Vec::new();
    let mut errors = Vec::new();
    for seed in 0..50 {
        let scene = synth::interactive_scene(seed, 48, 8, 4);
        let mut s = session_for(&scene, SessionConfig::default());
        let mut history = Vec::new();
        let first = s.run_round(Some(scene.scribbles.clone()), Some(&scene.truth));
        match first {
            Ok(r) => history.push(r.report.metrics.as_ref().expect("metrics").miou),
            Err(e) => {
                errors.push(format!("fixture {seed}: {e}"));
                continue;
            }
        }
        for _ in 0..3 {
            let new = match s.simulate_correction(&scene.truth) {
                Ok(sc) => Some(ScribbleSet::new(vec![sc])),
                Err(SessionError::Scribble(ScribbleError::NoError)) => None,
                Err(e) => {
                    errors.push(format!("fixture {seed}: {e}"));
                    break;
                }
            };
            match s.run_round(new, Some(&scene.truth)) {
                Ok(r) => history.push(r.report.metrics.as_ref().expect("metrics").miou),
                Err(e) => {
                    errors.push(format!("fixture {seed}: {e}"));
                    break;
                }
            }
        }
        for w in history.windows(2) {
            pairs += 1;
            if w[1] >= w[0] {
                monotone += 1;
            }
        }
        if history.len() == 4 {
            gains.push(history[3] - history[0]);
        }
    }
    let share = monotone as f64 / 150.0;
    let mean_gain = if gains.is_empty() {
        0.0
    } else {
        gains.iter().sum::<f64>() / gains.len() as f64
    };
    Verdict::new(
        "interactive_improvement",
        errors.is_empty() && pairs == 150 && share >= 0.9 && mean_gain >= 0.03,
        format!(
            "{monotone}/150 non-decreasing pairs ({:.1}%), mean gain {:.2} mIoU points, {:.1} s {}",
            share * 100.0,
            mean_gain * 100.0,
            start.elapsed().as_secs_f64(),
            errors.join("; ")
        ),
    )
}

// ---------------------------------------------------------------------------
// Metrics against a pixel-counting oracle.

struct OracleMetrics {
    miou: f64,
    pq: f64,
    sq: f64,
    rq: f64,
    tp: usize,
    fp: usize,
    fn_: usize,
}

fn oracle_metrics(pc: &[u32], pi: &[u32], truth: &PanopticTruth) -> OracleMetrics {
    let n = pc.len();
    let valid: Vec<bool> = (0..n).map(|p| truth.class_ids[p] != IGNORE).collect();

    let classes: BTreeSet<u32> = (0..n)
        .filter(|&p| valid[p])
        .flat_map(|p| [pc[p], truth.class_ids[p]])
        .collect();
    let mut iou_sum = 0.0;
    for &c in &classes {
        let inter = (0..n).filter(|&p| valid[p] && pc[p] == c && truth.class_ids[p] == c).count();
        let uni = (0..n).filter(|&p| valid[p] && (pc[p] == c || truth.class_ids[p] == c)).count();
        iou_sum += inter as f64 / uni as f64;
    }
    let miou = if classes.is_empty() { 0.0 } else { iou_sum / classes.len() as f64 };

    let pred_segs: BTreeSet<(u32, u32)> = (0..n).map(|p| (pc[p], pi[p])).collect();
    let truth_segs: BTreeSet<(u32, u32)> =
        (0..n).filter(|&p| valid[p]).map(|p| (truth.class_ids[p], truth.instance_ids[p])).collect();
    let all_classes: BTreeSet<u32> = pred_segs.iter().chain(&truth_segs).map(|s| s.0).collect();
    let (mut tp, mut fp, mut fn_, mut pooled_iou) = (0, 0, 0, 0.0);
    for &c in &all_classes {
        let mut matched_pred = BTreeSet::new();
        let mut matched_truth = BTreeSet::new();
        let mut class_iou = 0.0;
        for &ps in pred_segs.iter().filter(|s| s.0 == c) {
            for &ts in truth_segs.iter().filter(|s| s.0 == c) {
                let in_pred = |p: usize| (pc[p], pi[p]) == ps;
                let in_truth = |p: usize| valid[p] && (truth.class_ids[p], truth.instance_ids[p]) == ts;
                let inter = (0..n).filter(|&p| in_pred(p) && in_truth(p)).count();
                if inter == 0 {
                    continue;
                }
                let uni = (0..n).filter(|&p| (in_pred(p) && valid[p]) || in_truth(p)).count();
                let iou = inter as f64 / uni as f64;
                if iou > 0.5 {
                    tp += 1;
                    class_iou += iou;
                    matched_pred.insert(ps);
                    matched_truth.insert(ts);
                }
            }
        }
        pooled_iou += class_iou;
        fn_ += truth_segs.iter().filter(|s| s.0 == c && !matched_truth.contains(*s)).count();
        for &ps in pred_segs.iter().filter(|s| s.0 == c && !matched_pred.contains(*s)) {
            let area = (0..n).filter(|&p| (pc[p], pi[p]) == ps).count();
            let void = (0..n).filter(|&p| (pc[p], pi[p]) == ps && !valid[p]).count();
            if void as f64 / area as f64 <= 0.5 {
                fp += 1;
            }
        }
    }
    let sq = if tp > 0 { pooled_iou / tp as f64 } else { 0.0 };
    let denom = tp as f64 + 0.5 * fp as f64 + 0.5 * fn_ as f64;
    let rq = if denom > 0.0 { tp as f64 / denom } else { 0.0 };
    OracleMetrics { miou, pq: sq * rq, sq, rq, tp, fp, fn_ }
}

/// Blocky truth with a few instances and ignored pixels; the prediction is
/// the truth with random rectangles repainted.
fn panoptic_fixture(rng: &mut ChaCha8Rng) -> (Vec<u32>, Vec<u32>, PanopticTruth) {
    let (w, h): (usize, usize) = (16, 16);
    let block: usize = rng.random_range(2..=6);
    let bw = w.div_ceil(block);
    let cells: Vec<(u32, u32)> = (0..bw * h.div_ceil(block))
        .map(|_| {
            if rng.random_bool(0.08) {
                (IGNORE, 0)
            } else {
                (rng.random_range(0..4), rng.random_range(0..3))
            }
        })
        .collect();
    let cell_of = |p: usize| ((p / w) / block) * bw + (p % w) / block;
    let tc: Vec<u32> = (0..w * h).map(|p| cells[cell_of(p)].0).collect();
    let ti: Vec<u32> = (0..w * h).map(|p| cells[cell_of(p)].1).collect();
    let mut pc: Vec<u32> = tc.iter().map(|&c| if c == IGNORE { 0 } else { c }).collect();
    let mut pi = ti.clone();
    for _ in 0..rng.random_range(0..6) {
        let (x0, y0) = (rng.random_range(0..w), rng.random_range(0..h));
        let (x1, y1) = (rng.random_range(x0..w) + 1, rng.random_range(y0..h) + 1);
        let (c, i) = (rng.random_range(0..5), rng.random_range(0..3));
        for y in y0..y1 {
            for x in x0..x1 {
                pc[y * w + x] = c;
                pi[y * w + x] = i;
            }
        }
    }
    let truth = PanopticTruth::new(w, h, tc, ti).expect("shape");
    (pc, pi, truth)
}

fn metrics_oracle() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(0x44);
    let mut failures = Vec::new();
    let mut matched = 0;
    for i in 0..100 {
        let (pc, pi, truth) = panoptic_fixture(&mut rng);
        let got = metrics::evaluate(&pc, &pi, &truth, true).expect("same shape");
        let want = oracle_metrics(&pc, &pi, &truth);
        let pan = got.panoptic.as_ref().expect("panoptic summary");
        matched += pan.tp;
        let same = got.miou == want.miou
            && pan.pq == want.pq
            && pan.sq == want.sq
            && pan.rq == want.rq
            && (pan.tp, pan.fp, pan.fn_) == (want.tp, want.fp, want.fn_);
        if !same {
            failures.push(format!(
                "#{i}: miou {} vs {}, pq {} vs {}, tp/fp/fn {:?} vs {:?}",
                got.miou,
                want.miou,
                pan.pq,
                want.pq,
                (pan.tp, pan.fp, pan.fn_),
                (want.tp, want.fp, want.fn_)
            ));
        }
        if (pan.pq - pan.sq * pan.rq).abs() > 1e-12 {
            failures.push(format!("#{i}: pq {} != sq·rq {}", pan.pq, pan.sq * pan.rq));
        }
    }
    Verdict::new(
        "metrics_oracle",
        failures.is_empty(),
        format!("{}/100 fixtures agree ({matched} matched segments) {}", 100 - failures.len(), failures.join("; ")),
    )
}
