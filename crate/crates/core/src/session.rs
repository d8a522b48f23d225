//! One annotation episode: inputs, rounds of scribbles, and rendered output.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::labels::{LabelState, Rendered};
use crate::metrics::{self, EvalReport, MetricsError};
use crate::milp::{SolveBudget, SolveStatus};
use crate::mrf_ilp::{self, MrfError, MrfProblem, Variant, DEFAULT_CUT_K, DEFAULT_LAMBDA};
use crate::potts_heur::{self, FeatureKind, HeuristicConfig, HeuristicError};
use crate::rag::{self, CostTable, Fixings, RagError, RagGraph};
use crate::raster::{
    self, DenseFieldMap, ImagePlane, PanopticTruth, PixelFeatures, RasterError, SuperpixelMap,
};
use crate::scribble::{self, Coverage, PolicyReport, Scribble, ScribbleError, ScribbleSet};

#[derive(Debug, Error)]
pub enum SessionError {
    #[error(transparent)]
    Raster(#[from] RasterError),
    #[error(transparent)]
    Rag(#[from] RagError),
    #[error(transparent)]
    Scribble(#[from] ScribbleError),
    #[error(transparent)]
    Heuristic(#[from] HeuristicError),
    #[error(transparent)]
    Mrf(#[from] MrfError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("scribbles violate the annotation policy: {0:?}")]
    Policy(PolicyReport),
    #[error("solver stopped with status {0:?} and no labeling")]
    NoSolution(SolveStatus),
    #[error("{what} is {found:?}, image is {expected:?}")]
    DimensionMismatch {
        what: &'static str,
        expected: (usize, usize),
        found: (usize, usize),
    },
    #[error("scribble class {0} is outside the probability map")]
    UnknownClass(u32),
    #[error("no round has been run yet")]
    NoRound,
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, SessionError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum Algorithm {
    #[default]
    #[serde(rename = "l0h")]
    L0h,
    #[serde(rename = "ilp-u")]
    IlpU,
    #[serde(rename = "ilp-p")]
    IlpP,
}

impl Algorithm {
    pub fn as_str(self) -> &'static str {
        match self {
            Algorithm::L0h => "l0h",
            Algorithm::IlpU => "ilp-u",
            Algorithm::IlpP => "ilp-p",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "l0h" => Some(Algorithm::L0h),
            "ilp-u" => Some(Algorithm::IlpU),
            "ilp-p" => Some(Algorithm::IlpP),
            _ => None,
        }
    }

    /// Whether outputs carry regions, and therefore panoptic metrics.
    pub fn has_regions(self) -> bool {
        self != Algorithm::IlpU
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SessionConfig {
    pub algo: Algorithm,
    pub lambda: f64,
    /// Growth parameter; the feature source's default when absent.
    pub eta: Option<f64>,
    /// Overrides the feature source inferred from the inputs.
    pub feature_kind: Option<FeatureKind>,
    /// Seconds.
    pub time_limit: Option<f64>,
    pub node_limit: Option<u64>,
    pub cut_k: usize,
    /// Target superpixel count for the grid fallback.
    pub superpixels: usize,
    pub max_outer_loops: usize,
}

impl Default for SessionConfig {
    fn default() -> Self {
        Self {
            algo: Algorithm::L0h,
            lambda: DEFAULT_LAMBDA,
            eta: None,
            feature_kind: None,
            time_limit: None,
            node_limit: None,
            cut_k: DEFAULT_CUT_K,
            superpixels: 400,
            max_outer_loops: 1000,
        }
    }
}

impl SessionConfig {
    pub fn budget(&self) -> SolveBudget {
        SolveBudget {
            time_limit: self.time_limit.map(std::time::Duration::from_secs_f64),
            node_limit: self.node_limit,
            ..SolveBudget::default()
        }
    }
}

/// Images and maps a session is created from.
#[derive(Debug, Clone)]
pub struct SessionInputs {
    pub image: ImagePlane,
    pub superpixels: SuperpixelMap,
    /// Per-pixel features for the graph; the image is used when absent.
    pub features: Option<DenseFieldMap>,
    pub probmap: Option<DenseFieldMap>,
}

impl SessionInputs {
    /// Checks that every map matches the image; missing superpixels fall
    /// back to a grid of about `grid_target` cells.
    pub fn new(
        image: ImagePlane,
        superpixels: Option<SuperpixelMap>,
        features: Option<DenseFieldMap>,
        probmap: Option<DenseFieldMap>,
        grid_target: usize,
    ) -> Result<Self> {
        let dims = (image.width, image.height);
        let superpixels = superpixels
            .unwrap_or_else(|| raster::grid_superpixels(dims.0, dims.1, grid_target.max(1)));
        let check = |what, found: (usize, usize)| {
            if found == dims {
                Ok(())
            } else {
                Err(SessionError::DimensionMismatch {
                    what,
                    expected: dims,
                    found,
                })
            }
        };
        check("superpixel map", (superpixels.width, superpixels.height))?;
        if let Some(f) = &features {
            check("feature map", (f.width, f.height))?;
        }
        if let Some(p) = &probmap {
            check("probability map", (p.width, p.height))?;
            if !p.probability {
                return Err(RasterError::ShapeMismatch("probability map is not normalized".into()).into());
            }
        }
        Ok(Self {
            image,
            superpixels,
            features,
            probmap,
        })
    }

    pub fn width(&self) -> usize {
        self.image.width
    }

    pub fn height(&self) -> usize {
        self.image.height
    }

    /// Features the graph is built on: explicit features, else the
    /// probability map, else the image.
    pub fn graph_features(&self) -> (&dyn PixelFeatures, FeatureKind) {
        if let Some(f) = &self.features {
            let kind = if f.depth <= 64 {
                FeatureKind::Layer1
            } else {
                FeatureKind::Layer3
            };
            (f, kind)
        } else if let Some(p) = &self.probmap {
            (p, FeatureKind::Prob)
        } else {
            (&self.image, FeatureKind::Rgb)
        }
    }
}

/// Parameters actually used for a round.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RoundParams {
    pub lambda: f64,
    pub eta: f64,
    pub feature_kind: FeatureKind,
    pub cut_k: usize,
    pub time_limit: Option<f64>,
    pub node_limit: Option<u64>,
    pub superpixels: usize,
    pub graph_nodes: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct Timings {
    pub build_seconds: f64,
    pub solve_seconds: f64,
    pub total_seconds: f64,
}

/// A new scribble touching an original superpixel that an older scribble
/// of another class also touches. The newer scribble wins there.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ScribbleConflict {
    pub older: usize,
    pub newer: usize,
    pub superpixel: u32,
    /// The two scribbles share pixels.
    pub overlap: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RoundReport {
    pub round: usize,
    pub algo: Algorithm,
    pub params: RoundParams,
    pub status: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub objective: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub warm_start_objective: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bnb_nodes: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cuts: Option<usize>,
    pub scribbles: usize,
    pub conflicts: Vec<ScribbleConflict>,
    pub timings: Timings,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub metrics: Option<EvalReport>,
}

impl RoundReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

#[derive(Debug, Clone)]
pub struct RoundResult {
    pub round: usize,
    /// Indices (into `scribbles`) of the scribbles added this round.
    pub added: Vec<usize>,
    pub scribbles: ScribbleSet,
    /// Superpixels after splitting by this round's scribbles.
    pub superpixels: SuperpixelMap,
    pub graph: RagGraph,
    pub fixings: Fixings,
    pub labels: LabelState,
    pub rendered: Rendered,
    pub report: RoundReport,
}

impl RoundResult {
    pub fn class_png(&self) -> Vec<u8> {
        class_png(&self.rendered)
    }

    pub fn instance_png(&self) -> Vec<u8> {
        let v: Vec<u16> = self
            .rendered
            .instance_ids
            .iter()
            .map(|&i| i.min(u16::MAX as u32) as u16)
            .collect();
        raster::encode_png_u16(self.rendered.width, self.rendered.height, &v)
    }

    pub fn panoptic_png(&self) -> Vec<u8> {
        let codes = raster::panoptic_codes(&self.rendered.class_ids, &self.rendered.instance_ids);
        raster::encode_png_u16(self.rendered.width, self.rendered.height, &codes)
    }

    /// Writes class, instance, panoptic and overlay PNGs, the scribbles and
    /// the report into `dir`.
    pub fn write_to(&self, dir: &Path, image: &ImagePlane) -> Result<()> {
        create_dir(dir)?;
        write(dir.join("class.png"), &self.class_png())?;
        write(dir.join("instance.png"), &self.instance_png())?;
        write(dir.join("panoptic.png"), &self.panoptic_png())?;
        write(dir.join("overlay.png"), &overlay_png(image, &self.rendered))?;
        write(dir.join("superpixels.png"), &self.superpixels.to_png())?;
        write(dir.join("scribbles.json"), self.scribbles.to_json().as_bytes())?;
        write(dir.join("report.json"), self.report.to_json().as_bytes())?;
        Ok(())
    }
}

pub struct Session {
    pub inputs: SessionInputs,
    pub config: SessionConfig,
    scribbles: ScribbleSet,
    history: Vec<RoundResult>,
}

impl Session {
    pub fn new(inputs: SessionInputs, config: SessionConfig) -> Self {
        Self {
            inputs,
            config,
            scribbles: ScribbleSet::default(),
            history: Vec::new(),
        }
    }

    pub fn scribbles(&self) -> &ScribbleSet {
        &self.scribbles
    }

    pub fn history(&self) -> &[RoundResult] {
        &self.history
    }

    pub fn latest(&self) -> Option<&RoundResult> {
        self.history.last()
    }

    pub fn round(&self, r: usize) -> Option<&RoundResult> {
        self.history.get(r)
    }

    /// Policy report for the current set extended by `new`. Overlaps where a
    /// newer scribble covers an older one are not violations here.
    pub fn check_policy(&self, new: &ScribbleSet) -> PolicyReport {
        let mut all = self.scribbles.clone();
        all.extend(new.clone());
        let mut report = scribble::validate_policy(&all, self.inputs.width(), self.inputs.height());
        let old = self.scribbles.scribbles.len();
        report.overlapping.retain(|&(a, b)| !(a < old && b >= old));
        report
    }

    /// Adds `new` (if any), rebuilds the graph and fixings, runs the
    /// configured algorithm and appends the result to the history.
    pub fn run_round(
        &mut self,
        new: Option<ScribbleSet>,
        truth: Option<&PanopticTruth>,
    ) -> Result<&RoundResult> {
        let start = Instant::now();
        let new = new.unwrap_or_default();
        let report = self.check_policy(&new);
        if !report.is_valid() {
            return Err(SessionError::Policy(report));
        }
        let old = self.scribbles.scribbles.len();
        let mut set = self.scribbles.clone();
        set.extend(new);
        let added: Vec<usize> = (old..set.scribbles.len()).collect();
        let conflicts = find_conflicts(&self.inputs.superpixels, &set, old);

        let (w, h) = (self.inputs.width(), self.inputs.height());
        let coverage = Coverage::build(&set, w, h);
        let split = rag::split_superpixels(&self.inputs.superpixels, &coverage, &set)?;
        let (features, inferred) = self.inputs.graph_features();
        let mut graph = rag::build_rag(&split, features)?;
        rag::pairwise_weights(&mut graph);
        let fixings = rag::freeze_scribbled(&graph, &coverage, &set)?;
        let kind = self.config.feature_kind.unwrap_or(inferred);
        let heur = HeuristicConfig {
            eta: self.config.eta.unwrap_or(kind.default_eta()),
            max_outer_loops: self.config.max_outer_loops,
            forced_finish: true,
        };
        let build_done = Instant::now();

        let previous = self.history.last().map(|r| &r.rendered);
        let solved = match self.config.algo {
            Algorithm::L0h => {
                let out = potts_heur::run(&graph, &fixings, &heur)?;
                Solved {
                    labels: out.labels,
                    status: if out.forced > 0 { "forced_finish" } else { "converged" }.into(),
                    objective: None,
                    warm: None,
                    nodes: None,
                    cuts: None,
                }
            }
            Algorithm::IlpU | Algorithm::IlpP => {
                let costs = self.costs(&graph, &fixings)?;
                self.solve_ilp(&graph, &fixings, costs, &heur, previous, &split)?
            }
        };
        let solve_done = Instant::now();

        let rendered = solved.labels.render(&split, &coverage, &set);
        let metrics = match truth {
            Some(t) => Some(metrics::evaluate(
                &rendered.class_ids,
                &rendered.instance_ids,
                t,
                self.config.algo.has_regions(),
            )?),
            None => None,
        };
        let round = self.history.len();
        let report = RoundReport {
            round,
            algo: self.config.algo,
            params: RoundParams {
                lambda: self.config.lambda,
                eta: heur.eta,
                feature_kind: kind,
                cut_k: self.config.cut_k,
                time_limit: self.config.time_limit,
                node_limit: self.config.node_limit,
                superpixels: self.inputs.superpixels.count(),
                graph_nodes: graph.node_count(),
            },
            status: solved.status,
            objective: solved.objective,
            warm_start_objective: solved.warm,
            bnb_nodes: solved.nodes,
            cuts: solved.cuts,
            scribbles: set.scribbles.len(),
            conflicts,
            timings: Timings {
                build_seconds: (build_done - start).as_secs_f64(),
                solve_seconds: (solve_done - build_done).as_secs_f64(),
                total_seconds: start.elapsed().as_secs_f64(),
            },
            metrics,
        };
        for c in &report.conflicts {
            log::info!(
                "round {round}: scribble {} overrides scribble {} on superpixel {}",
                c.newer,
                c.older,
                c.superpixel
            );
        }
        self.scribbles = set.clone();
        self.history.push(RoundResult {
            round,
            added,
            scribbles: set,
            superpixels: split,
            graph,
            fixings,
            labels: solved.labels,
            rendered,
            report,
        });
        Ok(self.history.last().expect("just pushed"))
    }

    /// The correction an annotator would draw next on the latest round.
    pub fn simulate_correction(&self, truth: &PanopticTruth) -> Result<Scribble> {
        let last = self.latest().ok_or(SessionError::NoRound)?;
        Ok(scribble::simulate_correction(
            &last.rendered.class_ids,
            truth,
            &self.scribbles,
        )?)
    }

    /// Unary table: from the probability map when present, otherwise from
    /// the mean features under each scribbled class.
    fn costs(&self, graph: &RagGraph, fixings: &Fixings) -> Result<CostTable> {
        match &self.inputs.probmap {
            Some(p) => {
                if let Some(&c) = fixings.class_ids().iter().find(|&&c| c as usize >= p.depth) {
                    return Err(SessionError::UnknownClass(c));
                }
                Ok(rag::unary_from_probability(graph, p)?)
            }
            None => Ok(rag::unary_from_scribbles(graph, fixings, &fixings.class_ids())?),
        }
    }

    fn solve_ilp(
        &self,
        graph: &RagGraph,
        fixings: &Fixings,
        costs: CostTable,
        heur: &HeuristicConfig,
        previous: Option<&Rendered>,
        split: &SuperpixelMap,
    ) -> Result<Solved> {
        let connected = self.config.algo == Algorithm::IlpP;
        let (costs, variant) = if connected {
            let classes = fixings.class_ids();
            let restricted = costs
                .restrict(&classes)
                .ok_or(SessionError::UnknownClass(classes[0]))?;
            (restricted, Variant::P)
        } else {
            (costs, Variant::U)
        };
        let mut problem = MrfProblem::new(graph.clone(), costs, self.config.lambda, fixings, variant)?;
        problem.cut_k = self.config.cut_k;

        let warm = warm_start(&problem, graph, fixings, heur, previous, split);
        let sol = mrf_ilp::solve_mrf(&problem, warm.as_ref().map(|w| w.0.as_slice()), &self.config.budget())?;
        if !sol.status.has_solution() {
            return Err(SessionError::NoSolution(sol.status));
        }
        let labels = if connected {
            mrf_ilp::recover_regions(&problem, &sol.labels, fixings, heur)?
        } else {
            mrf_ilp::class_labels(&problem, &sol.labels)
        };
        Ok(Solved {
            labels,
            status: status_name(sol.status).into(),
            objective: Some(sol.objective),
            warm: warm.map(|w| w.1),
            nodes: Some(sol.stats.nodes),
            cuts: Some(sol.cuts.len()),
        })
    }

    /// Writes inputs, one directory per round and the report history.
    pub fn write_snapshot(&self, dir: &Path) -> Result<()> {
        let inputs = dir.join("inputs");
        create_dir(&inputs)?;
        let img = &self.inputs.image;
        let bytes = if img.channels == 1 || img.channels == 3 {
            raster::encode_png_u8(img.width, img.height, img.channels, &img.to_u8())
        } else {
            raster::encode_png_u8(img.width, img.height, 3, &rgb_bytes(img))
        };
        write(inputs.join("image.png"), &bytes)?;
        write(inputs.join("superpixels.png"), &self.inputs.superpixels.to_png())?;
        if let Some(f) = &self.inputs.features {
            write(inputs.join("features.cseg"), &f.to_tensor().encode())?;
        }
        if let Some(p) = &self.inputs.probmap {
            write(inputs.join("probmap.cseg"), &p.to_tensor().encode())?;
        }
        let config = serde_json::to_string_pretty(&self.config).expect("config serializes");
        write(inputs.join("config.json"), config.as_bytes())?;
        for r in &self.history {
            r.write_to(&dir.join(format!("round_{:03}", r.round)), &self.inputs.image)?;
        }
        let reports: Vec<&RoundReport> = self.history.iter().map(|r| &r.report).collect();
        let text = serde_json::to_string_pretty(&reports).expect("reports serialize");
        write(dir.join("report.json"), text.as_bytes())?;
        Ok(())
    }
}

struct Solved {
    labels: LabelState,
    status: String,
    objective: Option<f64>,
    warm: Option<f64>,
    nodes: Option<u64>,
    cuts: Option<usize>,
}

pub fn status_name(s: SolveStatus) -> &'static str {
    match s {
        SolveStatus::Optimal => "optimal",
        SolveStatus::FeasibleBudgetHit => "feasible_budget_hit",
        SolveStatus::Infeasible => "infeasible",
        SolveStatus::NoSolutionBudgetHit => "no_solution_budget_hit",
    }
}

/// Lowest-energy feasible candidate among the per-node cheapest class, the
/// heuristic's labeling and the previous round's output mapped onto the
/// current superpixels, all with fixed nodes re-fixed. Returns class indices
/// and their energy.
fn warm_start(
    p: &MrfProblem,
    graph: &RagGraph,
    fixings: &Fixings,
    heur: &HeuristicConfig,
    previous: Option<&Rendered>,
    split: &SuperpixelMap,
) -> Option<(Vec<usize>, f64)> {
    let to_indices = |ls: &LabelState| -> Option<Vec<usize>> {
        ls.labels
            .iter()
            .enumerate()
            .map(|(v, l)| match p.fixed[v] {
                Some(f) => Some(f),
                None => p.costs.class_index(l.class_id),
            })
            .collect()
    };
    let cheapest: Vec<usize> = (0..p.graph.node_count())
        .map(|v| {
            p.fixed[v].unwrap_or_else(|| {
                (0..p.class_count())
                    .min_by(|&a, &b| p.costs.cost(v, a).total_cmp(&p.costs.cost(v, b)))
                    .unwrap_or(0)
            })
        })
        .collect();
    let mut candidates = vec![cheapest];
    match potts_heur::run(graph, fixings, heur) {
        Ok(out) => candidates.extend(to_indices(&out.labels)),
        Err(e) => log::debug!("no heuristic warm start: {e}"),
    }
    if let Some(prev) = previous {
        candidates.extend(to_indices(&LabelState::from_rendered_majority(prev, split)));
    }
    candidates
        .into_iter()
        .filter(|c| {
            p.respects_fixings(c)
                && (p.variant == Variant::U || mrf_ilp::check_connectivity(c, p).is_empty())
        })
        .map(|c| {
            let e = p.energy(&c);
            (c, e)
        })
        .fold(None, |best: Option<(Vec<usize>, f64)>, cur| match best {
            Some(b) if b.1 <= cur.1 => Some(b),
            _ => Some(cur),
        })
}

/// Pairs where a scribble added at index `>= first_new` shares an original
/// superpixel with an older scribble of another class.
fn find_conflicts(sp: &SuperpixelMap, set: &ScribbleSet, first_new: usize) -> Vec<ScribbleConflict> {
    let (w, h) = (sp.width, sp.height);
    let pixels: Vec<Vec<usize>> = set.scribbles.iter().map(|s| s.rasterize_clipped(w, h)).collect();
    let touched: Vec<BTreeSet<u32>> = pixels
        .iter()
        .map(|px| px.iter().map(|&p| sp.ids[p]).collect())
        .collect();
    let mut out = Vec::new();
    for newer in first_new..set.scribbles.len() {
        for older in 0..first_new {
            if set.scribbles[older].class_id == set.scribbles[newer].class_id {
                continue;
            }
            if let Some(&superpixel) = touched[newer].intersection(&touched[older]).next() {
                let mine: BTreeSet<usize> = pixels[newer].iter().copied().collect();
                out.push(ScribbleConflict {
                    older,
                    newer,
                    superpixel,
                    overlap: pixels[older].iter().any(|p| mine.contains(p)),
                });
            }
        }
    }
    out
}

/// Class ids as 8-bit gray when they fit, 16-bit otherwise.
pub fn class_png(r: &Rendered) -> Vec<u8> {
    if r.class_ids.iter().all(|&c| c <= u8::MAX as u32) {
        let v: Vec<u8> = r.class_ids.iter().map(|&c| c as u8).collect();
        raster::encode_png_u8(r.width, r.height, 1, &v)
    } else {
        let v: Vec<u16> = r.class_ids.iter().map(|&c| c.min(u16::MAX as u32) as u16).collect();
        raster::encode_png_u16(r.width, r.height, &v)
    }
}

/// Deterministic color for a class id.
pub fn class_color(class: u32) -> [u8; 3] {
    if class == raster::IGNORE {
        return [0, 0, 0];
    }
    let hue = (class as f64 * 0.618_033_988_749_895).fract() * 6.0;
    let x = 1.0 - (hue % 2.0 - 1.0).abs();
    let (r, g, b) = match hue as u32 {
        0 => (1.0, x, 0.0),
        1 => (x, 1.0, 0.0),
        2 => (0.0, 1.0, x),
        3 => (0.0, x, 1.0),
        4 => (x, 0.0, 1.0),
        _ => (1.0, 0.0, x),
    };
    let s = |v: f64| (40.0 + v * 200.0).round() as u8;
    [s(r), s(g), s(b)]
}

fn rgb_bytes(img: &ImagePlane) -> Vec<u8> {
    let bytes = img.to_u8();
    (0..img.width * img.height)
        .flat_map(|p| {
            let px = &bytes[p * img.channels..(p + 1) * img.channels];
            if px.len() >= 3 {
                [px[0], px[1], px[2]]
            } else {
                [px[0]; 3]
            }
        })
        .collect()
}

/// Class colors blended at 50% over the image, with segment boundaries
/// (changes of class or instance between 4-neighbours) drawn in white.
pub fn overlay_png(image: &ImagePlane, r: &Rendered) -> Vec<u8> {
    let (w, h) = (r.width, r.height);
    let base = rgb_bytes(image);
    let seg = |p: usize| (r.class_ids[p], r.instance_ids[p]);
    let mut out = vec![0u8; w * h * 3];
    for y in 0..h {
        for x in 0..w {
            let p = y * w + x;
            let edge = (x + 1 < w && seg(p) != seg(p + 1)) || (y + 1 < h && seg(p) != seg(p + w));
            let color = class_color(r.class_ids[p]);
            for k in 0..3 {
                out[p * 3 + k] = if edge {
                    255
                } else {
                    ((u16::from(base[p * 3 + k]) + u16::from(color[k])) / 2) as u8
                };
            }
        }
    }
    raster::encode_png_u8(w, h, 3, &out)
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|source| SessionError::Io {
        path: dir.to_path_buf(),
        source,
    })
}

fn write(path: PathBuf, bytes: &[u8]) -> Result<()> {
    std::fs::write(&path, bytes).map_err(|source| SessionError::Io { path, source })
}
