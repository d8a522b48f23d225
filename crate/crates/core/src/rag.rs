//! Region adjacency graph over superpixels, scribble-driven superpixel
//! splitting, node fixings, and unary / pairwise cost tables.

use std::collections::{BTreeMap, BTreeSet, HashMap, VecDeque};

use serde::Serialize;
use thiserror::Error;

use crate::grid;
use crate::labels::NodeLabel;
use crate::raster::{DenseFieldMap, PixelFeatures, RasterError, SuperpixelMap};
use crate::scribble::{Coverage, ScribbleSet};

#[derive(Debug, Error)]
pub enum RagError {
    #[error("features are {found:?}, superpixels are {expected:?}")]
    DimensionMismatch {
        expected: (usize, usize),
        found: (usize, usize),
    },
    #[error("node {node} is covered by scribbles of regions {regions:?}")]
    ConflictingScribbles { node: usize, regions: Vec<u32> },
    #[error("probability map has {found} channels, cost table needs {expected}")]
    DepthMismatch { expected: usize, found: usize },
    #[error("class {0} has no scribbled node to estimate its appearance from")]
    ClassWithoutScribble(u32),
    #[error(transparent)]
    Raster(#[from] RasterError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct RagNode {
    pub id: usize,
    /// Pixel count.
    pub size: usize,
    /// Mean feature vector over member pixels.
    pub feature: Vec<f64>,
    pub pixels: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RagEdge {
    /// Smaller endpoint.
    pub a: usize,
    pub b: usize,
    /// Number of 4-adjacent pixel pairs across the boundary.
    pub boundary_len: usize,
    pub weight: f64,
    /// Pseudo edges join same-class regions for connectivity purposes only.
    pub pseudo: bool,
}

impl RagEdge {
    pub fn real(a: usize, b: usize, boundary_len: usize) -> Self {
        let (a, b) = if a < b { (a, b) } else { (b, a) };
        Self {
            a,
            b,
            boundary_len,
            weight: 0.0,
            pseudo: false,
        }
    }

    pub fn other(&self, node: usize) -> usize {
        if node == self.a {
            self.b
        } else {
            self.a
        }
    }
}

/// Simple undirected graph; adjacency lists are sorted by neighbour id.
#[derive(Debug, Clone, PartialEq)]
pub struct RagGraph {
    pub nodes: Vec<RagNode>,
    pub edges: Vec<RagEdge>,
    adjacency: Vec<Vec<(usize, usize)>>,
}

impl RagGraph {
    /// Assembles a graph, dropping self-loops and merging duplicate edges
    /// (boundary lengths add up).
    pub fn from_parts(nodes: Vec<RagNode>, edges: Vec<RagEdge>) -> Self {
        let mut merged: BTreeMap<(usize, usize), RagEdge> = BTreeMap::new();
        for e in edges {
            if e.a == e.b {
                continue;
            }
            let key = (e.a.min(e.b), e.a.max(e.b));
            merged
                .entry(key)
                .and_modify(|m| {
                    m.boundary_len += e.boundary_len;
                    m.pseudo &= e.pseudo;
                })
                .or_insert(RagEdge {
                    a: key.0,
                    b: key.1,
                    ..e
                });
        }
        let edges: Vec<RagEdge> = merged.into_values().collect();
        let mut g = Self {
            nodes,
            edges,
            adjacency: Vec::new(),
        };
        g.rebuild_adjacency();
        g
    }

    fn rebuild_adjacency(&mut self) {
        let mut adjacency = vec![Vec::new(); self.nodes.len()];
        for (k, e) in self.edges.iter().enumerate() {
            adjacency[e.a].push((e.b, k));
            adjacency[e.b].push((e.a, k));
        }
        for list in &mut adjacency {
            list.sort_unstable();
        }
        self.adjacency = adjacency;
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn feature_dim(&self) -> usize {
        self.nodes.first().map_or(0, |n| n.feature.len())
    }

    /// `(neighbour, edge index)` pairs including pseudo edges.
    pub fn neighbors(&self, node: usize) -> &[(usize, usize)] {
        &self.adjacency[node]
    }

    pub fn real_neighbors(&self, node: usize) -> impl Iterator<Item = (usize, &RagEdge)> + '_ {
        self.adjacency[node]
            .iter()
            .map(|&(n, e)| (n, &self.edges[e]))
            .filter(|(_, e)| !e.pseudo)
    }

    pub fn edge_between(&self, a: usize, b: usize) -> Option<&RagEdge> {
        self.adjacency[a]
            .binary_search_by_key(&b, |&(n, _)| n)
            .ok()
            .map(|k| &self.edges[self.adjacency[a][k].1])
    }

    /// Adds a pseudo edge unless the nodes are equal or already adjacent.
    /// Returns whether an edge was added.
    pub fn add_pseudo_edge(&mut self, a: usize, b: usize) -> bool {
        if a == b || self.edge_between(a, b).is_some() {
            return false;
        }
        let (a, b) = (a.min(b), a.max(b));
        self.edges.push(RagEdge {
            a,
            b,
            boundary_len: 0,
            weight: 0.0,
            pseudo: true,
        });
        self.rebuild_adjacency();
        true
    }

    pub fn pseudo_edge_count(&self) -> usize {
        self.edges.iter().filter(|e| e.pseudo).count()
    }

    /// Connected pieces of the induced subgraph on `subset`.
    pub fn components_of_subset(&self, subset: &[usize], with_pseudo: bool) -> Vec<Vec<usize>> {
        let mut inside = vec![false; self.nodes.len()];
        for &v in subset {
            inside[v] = true;
        }
        let mut seen = vec![false; self.nodes.len()];
        let mut out = Vec::new();
        for &start in subset {
            if seen[start] {
                continue;
            }
            seen[start] = true;
            let mut comp = vec![start];
            let mut queue = VecDeque::from([start]);
            while let Some(v) = queue.pop_front() {
                for &(n, e) in &self.adjacency[v] {
                    if inside[n] && !seen[n] && (with_pseudo || !self.edges[e].pseudo) {
                        seen[n] = true;
                        comp.push(n);
                        queue.push_back(n);
                    }
                }
            }
            comp.sort_unstable();
            out.push(comp);
        }
        out
    }

    pub fn is_connected_subset(&self, subset: &[usize], with_pseudo: bool) -> bool {
        !subset.is_empty() && self.components_of_subset(subset, with_pseudo).len() == 1
    }

    /// Subgraph on `subset` (real edges only), nodes renumbered in the given
    /// order.
    pub fn induced_subgraph(&self, subset: &[usize]) -> RagGraph {
        let mut local = vec![usize::MAX; self.nodes.len()];
        for (k, &v) in subset.iter().enumerate() {
            local[v] = k;
        }
        let nodes = subset
            .iter()
            .enumerate()
            .map(|(k, &v)| RagNode {
                id: k,
                ..self.nodes[v].clone()
            })
            .collect();
        let edges = self
            .edges
            .iter()
            .filter(|e| !e.pseudo && local[e.a] != usize::MAX && local[e.b] != usize::MAX)
            .map(|e| RagEdge {
                a: local[e.a],
                b: local[e.b],
                ..e.clone()
            })
            .collect();
        RagGraph::from_parts(nodes, edges)
    }

    pub fn is_connected(&self) -> bool {
        let all: Vec<usize> = (0..self.nodes.len()).collect();
        self.is_connected_subset(&all, false)
    }

    pub fn debug_dump(&self) -> RagDump {
        RagDump {
            nodes: self
                .nodes
                .iter()
                .map(|n| DumpNode {
                    id: n.id,
                    size: n.size,
                    mean: n.feature.clone(),
                })
                .collect(),
            edges: self
                .edges
                .iter()
                .map(|e| DumpEdge {
                    a: e.a,
                    b: e.b,
                    boundary_len: e.boundary_len,
                    weight: e.weight,
                    pseudo: e.pseudo,
                })
                .collect(),
        }
    }
}

/// JSON fixture dump of a graph.
#[derive(Debug, Serialize)]
pub struct RagDump {
    pub nodes: Vec<DumpNode>,
    pub edges: Vec<DumpEdge>,
}

#[derive(Debug, Serialize)]
pub struct DumpNode {
    pub id: usize,
    pub size: usize,
    pub mean: Vec<f64>,
}

#[derive(Debug, Serialize)]
pub struct DumpEdge {
    pub a: usize,
    pub b: usize,
    pub boundary_len: usize,
    pub weight: f64,
    pub pseudo: bool,
}

pub fn build_rag(sp: &SuperpixelMap, feat: &dyn PixelFeatures) -> Result<RagGraph, RagError> {
    if (feat.width(), feat.height()) != (sp.width, sp.height) {
        return Err(RagError::DimensionMismatch {
            expected: (sp.width, sp.height),
            found: (feat.width(), feat.height()),
        });
    }
    let dim = feat.depth();
    let nodes = sp
        .members()
        .into_iter()
        .enumerate()
        .map(|(id, pixels)| {
            let mut sum = vec![0.0f64; dim];
            for &p in &pixels {
                for (s, &v) in sum.iter_mut().zip(feat.pixel(p)) {
                    *s += f64::from(v);
                }
            }
            let size = pixels.len();
            sum.iter_mut().for_each(|s| *s /= size as f64);
            RagNode {
                id,
                size,
                feature: sum,
                pixels,
            }
        })
        .collect();

    let (w, h) = (sp.width, sp.height);
    let mut boundary: HashMap<(usize, usize), usize> = HashMap::new();
    for y in 0..h {
        for x in 0..w {
            let p = y * w + x;
            let a = sp.ids[p] as usize;
            let mut count = |q: usize| {
                let b = sp.ids[q] as usize;
                if a != b {
                    *boundary.entry((a.min(b), a.max(b))).or_default() += 1;
                }
            };
            if x + 1 < w {
                count(p + 1);
            }
            if y + 1 < h {
                count(p + w);
            }
        }
    }
    let edges = boundary
        .into_iter()
        .map(|((a, b), len)| RagEdge::real(a, b, len))
        .collect();
    Ok(RagGraph::from_parts(nodes, edges))
}

/// Splits every superpixel touched by scribbles of more than one region.
///
/// Each region's scribble pixels seed a breadth-first growth confined to the
/// superpixel; a pixel reached by several regions at the same distance goes
/// to the lowest region id. Disconnected pieces become separate superpixels.
pub fn split_superpixels(
    sp: &SuperpixelMap,
    coverage: &Coverage,
    set: &ScribbleSet,
) -> Result<SuperpixelMap, RagError> {
    let (w, h) = (sp.width, sp.height);
    if (coverage.width, coverage.height) != (w, h) {
        return Err(RagError::DimensionMismatch {
            expected: (w, h),
            found: (coverage.width, coverage.height),
        });
    }
    let region_at = |p: usize| coverage.owner(p).map(|s| set.scribbles[s].region_id);
    let members = sp.members();
    let mut labels = sp.ids.clone();
    let mut next_label = sp.count() as u32;
    let mut changed = false;
    for (sid, pixels) in members.iter().enumerate() {
        let regions: BTreeSet<u32> = pixels.iter().filter_map(|&p| region_at(p)).collect();
        if regions.len() < 2 {
            continue;
        }
        changed = true;
        let mut owner: HashMap<usize, u32> = HashMap::with_capacity(pixels.len());
        let mut frontier: Vec<usize> = Vec::new();
        for &p in pixels {
            if let Some(r) = region_at(p) {
                owner.insert(p, r);
                frontier.push(p);
            }
        }
        while !frontier.is_empty() {
            let mut reached: BTreeMap<usize, u32> = BTreeMap::new();
            for &p in &frontier {
                let r = owner[&p];
                grid::for_each_neighbor4(p, w, h, |q| {
                    if sp.ids[q] as usize == sid && !owner.contains_key(&q) {
                        reached
                            .entry(q)
                            .and_modify(|cur| *cur = (*cur).min(r))
                            .or_insert(r);
                    }
                });
            }
            frontier = reached.keys().copied().collect();
            owner.extend(reached);
        }
        let mut relabel: BTreeMap<u32, u32> = BTreeMap::new();
        for (i, r) in regions.iter().enumerate() {
            let l = if i == 0 {
                sid as u32
            } else {
                next_label += 1;
                next_label - 1
            };
            relabel.insert(*r, l);
        }
        for &p in pixels {
            labels[p] = relabel[&owner[&p]];
        }
    }
    if !changed {
        return Ok(sp.clone());
    }
    Ok(SuperpixelMap::from_labels(w, h, labels)?)
}

/// [`split_superpixels`] followed by a graph rebuild on the new map.
pub fn split_by_scribbles(
    sp: &SuperpixelMap,
    feat: &dyn PixelFeatures,
    set: &ScribbleSet,
) -> Result<(RagGraph, SuperpixelMap), RagError> {
    let coverage = Coverage::build(set, sp.width, sp.height);
    let split = split_superpixels(sp, &coverage, set)?;
    let graph = build_rag(&split, feat)?;
    Ok((graph, split))
}

/// One scribbled region: its IDs and its root node (the node under the
/// first pixel of its first scribble).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RegionSeed {
    pub label: NodeLabel,
    pub root: usize,
}

/// Hard node assignments derived from scribbles.
#[derive(Debug, Clone, PartialEq)]
pub struct Fixings {
    pub labels: Vec<Option<NodeLabel>>,
    /// Nodes directly under a scribble (as opposed to enclosed ones).
    pub covered: Vec<bool>,
    /// Regions in order of first appearance in the scribble set.
    pub regions: Vec<RegionSeed>,
}

impl Fixings {
    pub fn none(node_count: usize) -> Self {
        Self {
            labels: vec![None; node_count],
            covered: vec![false; node_count],
            regions: Vec::new(),
        }
    }

    pub fn fixed_count(&self) -> usize {
        self.labels.iter().filter(|l| l.is_some()).count()
    }

    /// Class ids in first-appearance order of their regions.
    pub fn class_ids(&self) -> Vec<u32> {
        let mut seen = BTreeSet::new();
        self.regions
            .iter()
            .filter(|r| seen.insert(r.label.class_id))
            .map(|r| r.label.class_id)
            .collect()
    }

    /// Root of each class: the root of its first region.
    pub fn class_root(&self, class_id: u32) -> Option<usize> {
        self.regions
            .iter()
            .find(|r| r.label.class_id == class_id)
            .map(|r| r.root)
    }
}

/// Fixes every node covered by a scribble, and every uncovered node whose
/// neighbours are all covered by the same region.
pub fn freeze_scribbled(
    g: &RagGraph,
    coverage: &Coverage,
    set: &ScribbleSet,
) -> Result<Fixings, RagError> {
    let n = g.node_count();
    let mut pixel_node: HashMap<usize, usize> = HashMap::new();
    let mut labels: Vec<Option<NodeLabel>> = vec![None; n];
    for node in &g.nodes {
        let mut regions: BTreeMap<u32, usize> = BTreeMap::new();
        for &p in &node.pixels {
            pixel_node.insert(p, node.id);
            if let Some(s) = coverage.owner(p) {
                // latest scribble of a region decides its label
                let e = regions.entry(set.scribbles[s].region_id).or_insert(s);
                *e = (*e).max(s);
            }
        }
        if regions.len() > 1 {
            return Err(RagError::ConflictingScribbles {
                node: node.id,
                regions: regions.into_keys().collect(),
            });
        }
        if let Some((_, &s)) = regions.iter().next() {
            let s = &set.scribbles[s];
            labels[node.id] = Some(NodeLabel::new(s.class_id, s.region_id, s.instance_id));
        }
    }
    let covered: Vec<bool> = labels.iter().map(Option::is_some).collect();

    let mut enclosed = Vec::new();
    for v in (0..n).filter(|&v| !covered[v]) {
        let mut around = g.real_neighbors(v).map(|(u, _)| labels[u]);
        let Some(Some(first)) = around.next() else {
            continue;
        };
        if around.all(|l| l.is_some_and(|l| l.region_id == first.region_id)) {
            enclosed.push((v, first));
        }
    }
    for (v, l) in enclosed {
        labels[v] = Some(l);
    }

    let mut regions: Vec<RegionSeed> = Vec::new();
    for (i, s) in set.scribbles.iter().enumerate() {
        if regions.iter().any(|r| r.label.region_id == s.region_id) {
            continue;
        }
        if let Some(p) = coverage.anchor_pixel(set, i) {
            let root = pixel_node[&p];
            regions.push(RegionSeed {
                label: labels[root].expect("anchor node is covered"),
                root,
            });
        }
    }
    Ok(Fixings {
        labels,
        covered,
        regions,
    })
}

/// Unary costs `c[i][l]`, one column per class.
#[derive(Debug, Clone, PartialEq)]
pub struct CostTable {
    pub classes: Vec<u32>,
    pub unary: Vec<f64>,
}

impl CostTable {
    pub fn new(classes: Vec<u32>, unary: Vec<f64>) -> Self {
        assert_eq!(unary.len() % classes.len().max(1), 0);
        Self { classes, unary }
    }

    pub fn class_count(&self) -> usize {
        self.classes.len()
    }

    pub fn node_count(&self) -> usize {
        self.unary.len() / self.classes.len().max(1)
    }

    pub fn cost(&self, node: usize, class_index: usize) -> f64 {
        self.unary[node * self.classes.len() + class_index]
    }

    pub fn class_index(&self, class_id: u32) -> Option<usize> {
        self.classes.iter().position(|&c| c == class_id)
    }

    /// Keeps only the given class columns, in the given order.
    pub fn restrict(&self, classes: &[u32]) -> Option<Self> {
        let cols: Vec<usize> = classes
            .iter()
            .map(|&c| self.class_index(c))
            .collect::<Option<_>>()?;
        let unary = (0..self.node_count())
            .flat_map(|i| cols.iter().map(move |&k| self.cost(i, k)))
            .collect();
        Some(Self::new(classes.to_vec(), unary))
    }
}

/// `c[i][l] = ‖onehot(l) − p_i‖₂` where `p_i` is the node's mean probability.
/// Class `l` is channel `l` of the map.
pub fn unary_from_probability(g: &RagGraph, prob: &DenseFieldMap) -> Result<CostTable, RagError> {
    let k = prob.depth;
    let mut unary = Vec::with_capacity(g.node_count() * k);
    for node in &g.nodes {
        let mut mean = vec![0.0f64; k];
        for &p in &node.pixels {
            for (m, &v) in mean.iter_mut().zip(prob.pixel(p)) {
                *m += f64::from(v);
            }
        }
        mean.iter_mut().for_each(|m| *m /= node.size as f64);
        for l in 0..k {
            let d2: f64 = mean
                .iter()
                .enumerate()
                .map(|(j, &m)| {
                    let t = if j == l { 1.0 } else { 0.0 };
                    (t - m) * (t - m)
                })
                .sum();
            unary.push(d2.sqrt());
        }
    }
    Ok(CostTable::new((0..k as u32).collect(), unary))
}

/// Checks that a probability map matches a class set of `classes` columns.
pub fn check_probability_depth(prob: &DenseFieldMap, classes: usize) -> Result<(), RagError> {
    if prob.depth != classes {
        return Err(RagError::DepthMismatch {
            expected: classes,
            found: prob.depth,
        });
    }
    Ok(())
}

/// `c[i][l] = ‖y_i − Y_l‖₂` where `Y_l` is the pixel-weighted mean feature
/// of the nodes directly covered by class-`l` scribbles.
pub fn unary_from_scribbles(
    g: &RagGraph,
    fixings: &Fixings,
    classes: &[u32],
) -> Result<CostTable, RagError> {
    let dim = g.feature_dim();
    let mut centers = Vec::with_capacity(classes.len());
    for &c in classes {
        let mut sum = vec![0.0f64; dim];
        let mut weight = 0usize;
        for node in &g.nodes {
            let hit = fixings.covered[node.id]
                && fixings.labels[node.id].is_some_and(|l| l.class_id == c);
            if hit {
                for (s, &f) in sum.iter_mut().zip(&node.feature) {
                    *s += f * node.size as f64;
                }
                weight += node.size;
            }
        }
        if weight == 0 {
            return Err(RagError::ClassWithoutScribble(c));
        }
        sum.iter_mut().for_each(|s| *s /= weight as f64);
        centers.push(sum);
    }
    let unary = g
        .nodes
        .iter()
        .flat_map(|node| centers.iter().map(move |c| euclidean(&node.feature, c)))
        .collect();
    Ok(CostTable::new(classes.to_vec(), unary))
}

pub fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Sets `d_ij = exp(−‖y_i − y_j‖₂)` on real edges; pseudo edges get 0.
pub fn pairwise_weights(g: &mut RagGraph) {
    for k in 0..g.edges.len() {
        let e = &g.edges[k];
        let w = if e.pseudo {
            0.0
        } else {
            (-euclidean(&g.nodes[e.a].feature, &g.nodes[e.b].feature)).exp()
        };
        g.edges[k].weight = w;
    }
}
