//! ℓ0 region fusion seeded by scribbles.
//!
//! Every node starts as its own group, except that nodes fixed to the same
//! region form one labeled group. Adjacent groups merge when
//! `σi·σj·‖Yi − Yj‖ ≤ β·γij·(σi + σj)`, with β growing each outer loop, and
//! two groups carrying different regions never merge. Groups only ever grow
//! along graph edges, so every output region is connected.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::labels::{LabelState, NodeLabel};
use crate::rag::{euclidean, Fixings, RagGraph};

#[derive(Debug, Error, PartialEq)]
pub enum HeuristicError {
    #[error("no scribbled node in the graph component containing node {node}")]
    UnseededRegion { node: usize },
    #[error("region {region} is fixed on nodes that are not connected")]
    DisconnectedSeed { region: u32 },
    #[error("groups still unlabeled after {loops} outer loops")]
    NonConvergence { loops: usize },
    #[error("growth parameter must be positive, got {0}")]
    InvalidEta(f64),
}

/// Where node features come from; selects the default growth parameter.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeatureKind {
    Rgb,
    Layer1,
    Layer3,
    Prob,
}

impl FeatureKind {
    pub fn default_eta(self) -> f64 {
        match self {
            FeatureKind::Rgb => 0.1,
            FeatureKind::Layer1 => 20.0,
            FeatureKind::Layer3 => 100.0,
            FeatureKind::Prob => 0.3,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HeuristicConfig {
    pub eta: f64,
    pub max_outer_loops: usize,
    /// Attach leftover unlabeled groups to their best labeled neighbour once
    /// the loop budget is spent, instead of failing.
    pub forced_finish: bool,
}

impl Default for HeuristicConfig {
    fn default() -> Self {
        Self {
            eta: FeatureKind::Rgb.default_eta(),
            max_outer_loops: 1000,
            forced_finish: true,
        }
    }
}

impl HeuristicConfig {
    pub fn with_eta(eta: f64) -> Self {
        Self {
            eta,
            ..Self::default()
        }
    }
}

pub fn beta_schedule(iter: usize, eta: f64) -> f64 {
    (iter as f64 / 50.0).powf(2.2) * eta
}

/// A connected set of nodes being grown.
#[derive(Debug, Clone, PartialEq)]
pub struct FusionGroup {
    pub members: Vec<usize>,
    /// Pixel count σ.
    pub size: f64,
    /// Pixel-weighted mean feature Y.
    pub mean: Vec<f64>,
    pub label: Option<NodeLabel>,
    /// Neighbour group key → shared boundary length γ.
    pub links: BTreeMap<usize, f64>,
}

impl FusionGroup {
    pub fn singleton(node: usize, size: f64, feature: Vec<f64>) -> Self {
        Self {
            members: vec![node],
            size,
            mean: feature,
            label: None,
            links: BTreeMap::new(),
        }
    }
}

pub fn passes_merge_test(gi: &FusionGroup, gj: &FusionGroup, gamma: f64, beta: f64) -> bool {
    if let (Some(a), Some(b)) = (gi.label, gj.label) {
        if a.region_id != b.region_id {
            return false;
        }
    }
    let lhs = gi.size * gj.size * euclidean(&gi.mean, &gj.mean);
    lhs <= beta * gamma * (gi.size + gj.size)
}

/// Same test using the boundary length recorded in `gi`'s links to `key_j`.
pub fn merge_test(gi: &FusionGroup, gj: &FusionGroup, key_j: usize, beta: f64) -> bool {
    let gamma = gi.links.get(&key_j).copied().unwrap_or(0.0);
    passes_merge_test(gi, gj, gamma, beta)
}

/// Combines two groups keyed `key_i` and `key_j`. Links between the two
/// disappear and links to common neighbours add up. The label of whichever
/// side has one is kept.
pub fn merge(gi: FusionGroup, key_i: usize, gj: FusionGroup, key_j: usize) -> FusionGroup {
    let (big, small) = if gi.members.len() >= gj.members.len() {
        (gi, gj)
    } else {
        (gj, gi)
    };
    let size = big.size + small.size;
    let mean = big
        .mean
        .iter()
        .zip(&small.mean)
        .map(|(a, b)| (big.size * a + small.size * b) / size)
        .collect();
    let label = big.label.or(small.label);
    let mut members = big.members;
    members.extend(small.members);
    let (mut links, other) = if big.links.len() >= small.links.len() {
        (big.links, small.links)
    } else {
        (small.links, big.links)
    };
    for (k, g) in other {
        *links.entry(k).or_default() += g;
    }
    links.remove(&key_i);
    links.remove(&key_j);
    FusionGroup {
        members,
        size,
        mean,
        label,
        links,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HeuristicOutcome {
    pub labels: LabelState,
    pub outer_loops: usize,
    pub merges: usize,
    /// Number of groups attached by the forced finish.
    pub forced: usize,
}

/// One applied merge, reported to observers.
#[derive(Debug)]
pub struct MergeEvent<'a> {
    pub members: &'a [usize],
    pub label: Option<NodeLabel>,
}

pub fn run(
    g: &RagGraph,
    fixings: &Fixings,
    cfg: &HeuristicConfig,
) -> Result<HeuristicOutcome, HeuristicError> {
    run_observed(g, fixings, cfg, |_| {})
}

/// [`run`] with a callback after every merge.
pub fn run_observed(
    g: &RagGraph,
    fixings: &Fixings,
    cfg: &HeuristicConfig,
    mut observer: impl FnMut(MergeEvent<'_>),
) -> Result<HeuristicOutcome, HeuristicError> {
    if !(cfg.eta > 0.0) {
        return Err(HeuristicError::InvalidEta(cfg.eta));
    }
    let n = g.node_count();
    let mut fusion = Fusion::new(g, fixings)?;

    let all: Vec<usize> = (0..n).collect();
    for comp in g.components_of_subset(&all, false) {
        if comp.iter().all(|&v| fixings.labels[v].is_none()) {
            return Err(HeuristicError::UnseededRegion { node: comp[0] });
        }
    }

    let mut merges = 0usize;
    let mut loops = 0usize;
    while fusion.unlabeled > 0 && loops < cfg.max_outer_loops {
        loops += 1;
        let beta = beta_schedule(loops, cfg.eta);
        for node in 0..n {
            let mut cur = fusion.find(node);
            if fusion.key(cur) != node {
                continue;
            }
            let snapshot: Vec<usize> = fusion.group(cur).links.keys().copied().collect();
            for nb in snapshot {
                let Some(rep) = fusion.rep_of_key(nb) else {
                    continue;
                };
                if rep == cur {
                    continue;
                }
                let gi = fusion.group(cur);
                let gj = fusion.group(rep);
                let Some(&gamma) = gi.links.get(&fusion.key(rep)) else {
                    continue;
                };
                if passes_merge_test(gi, gj, gamma, beta) {
                    cur = fusion.union(cur, rep);
                    merges += 1;
                    let grp = fusion.group(cur);
                    observer(MergeEvent {
                        members: &grp.members,
                        label: grp.label,
                    });
                }
            }
        }
    }

    let mut forced = 0usize;
    if fusion.unlabeled > 0 {
        if !cfg.forced_finish {
            return Err(HeuristicError::NonConvergence { loops });
        }
        while fusion.unlabeled > 0 {
            let mut progressed = false;
            for node in 0..n {
                let cur = fusion.find(node);
                if fusion.key(cur) != node || fusion.group(cur).label.is_some() {
                    continue;
                }
                let best = fusion
                    .group(cur)
                    .links
                    .iter()
                    .filter_map(|(&k, &gamma)| {
                        let rep = fusion.rep_of_key(k)?;
                        fusion.group(rep).label.map(|_| (gamma, k, rep))
                    })
                    .fold(None, |acc: Option<(f64, usize, usize)>, c| match acc {
                        Some(a) if a.0 >= c.0 => Some(a),
                        _ => Some(c),
                    });
                if let Some((_, _, rep)) = best {
                    let merged = fusion.union(cur, rep);
                    merges += 1;
                    forced += 1;
                    progressed = true;
                    let grp = fusion.group(merged);
                    observer(MergeEvent {
                        members: &grp.members,
                        label: grp.label,
                    });
                }
            }
            if !progressed {
                // unreachable for graphs whose components all carry a seed
                return Err(HeuristicError::NonConvergence { loops });
            }
        }
    }

    let labels = (0..n)
        .map(|v| {
            let rep = fusion.find(v);
            fusion.group(rep).label.expect("every group labeled")
        })
        .collect();
    Ok(HeuristicOutcome {
        labels: LabelState::new(labels),
        outer_loops: loops,
        merges,
        forced,
    })
}

/// Union-find over nodes with group data at each root. A group's key is
/// its smallest member node id; links are keyed by neighbour keys.
struct Fusion {
    parent: Vec<usize>,
    groups: Vec<Option<FusionGroup>>,
    /// Group key → current root.
    key_root: Vec<usize>,
    root_key: Vec<usize>,
    unlabeled: usize,
}

impl Fusion {
    fn new(g: &RagGraph, fixings: &Fixings) -> Result<Self, HeuristicError> {
        let n = g.node_count();
        let mut parent: Vec<usize> = (0..n).collect();
        let mut by_region: BTreeMap<u32, Vec<usize>> = BTreeMap::new();
        for v in 0..n {
            if let Some(l) = fixings.labels[v] {
                by_region.entry(l.region_id).or_default().push(v);
            }
        }
        for (&region, nodes) in &by_region {
            if !g.is_connected_subset(nodes, false) {
                return Err(HeuristicError::DisconnectedSeed { region });
            }
            for &v in &nodes[1..] {
                parent[v] = nodes[0];
            }
        }

        let mut groups: Vec<Option<FusionGroup>> = vec![None; n];
        for v in 0..n {
            let root = parent[v];
            let node = &g.nodes[v];
            let entry = groups[root].get_or_insert_with(|| FusionGroup {
                members: Vec::new(),
                size: 0.0,
                mean: vec![0.0; node.feature.len()],
                label: fixings.labels[v],
                links: BTreeMap::new(),
            });
            entry.members.push(v);
            let s = node.size as f64;
            for (m, f) in entry.mean.iter_mut().zip(&node.feature) {
                *m += s * f;
            }
            entry.size += s;
        }
        for grp in groups.iter_mut().flatten() {
            let s = grp.size;
            grp.mean.iter_mut().for_each(|m| *m /= s);
        }
        // roots are smallest members, so keys equal roots initially
        for e in g.edges.iter().filter(|e| !e.pseudo) {
            let (ra, rb) = (parent[e.a], parent[e.b]);
            if ra == rb {
                continue;
            }
            let len = e.boundary_len as f64;
            *groups[ra].as_mut().unwrap().links.entry(rb).or_default() += len;
            *groups[rb].as_mut().unwrap().links.entry(ra).or_default() += len;
        }
        let unlabeled = groups
            .iter()
            .flatten()
            .filter(|grp| grp.label.is_none())
            .count();
        Ok(Self {
            parent,
            groups,
            key_root: (0..n).collect(),
            root_key: (0..n).collect(),
            unlabeled,
        })
    }

    fn find(&mut self, mut v: usize) -> usize {
        let mut root = v;
        while self.parent[root] != root {
            root = self.parent[root];
        }
        while self.parent[v] != root {
            let next = self.parent[v];
            self.parent[v] = root;
            v = next;
        }
        root
    }

    fn key(&self, root: usize) -> usize {
        self.root_key[root]
    }

    fn rep_of_key(&self, key: usize) -> Option<usize> {
        let r = self.key_root[key];
        (self.groups[r].is_some() && self.root_key[r] == key).then_some(r)
    }

    fn group(&self, root: usize) -> &FusionGroup {
        self.groups[root].as_ref().expect("live group")
    }

    /// Merges two live groups and returns the surviving root.
    fn union(&mut self, a: usize, b: usize) -> usize {
        let ka = self.root_key[a];
        let kb = self.root_key[b];
        let ga = self.groups[a].take().expect("live group");
        let gb = self.groups[b].take().expect("live group");
        if ga.label.is_none() || gb.label.is_none() {
            self.unlabeled -= 1;
        }
        let new_key = ka.min(kb);
        // the side with fewer links is the one whose neighbours get rewritten
        let (root, gone_key, gone_links): (usize, usize, Vec<(usize, f64)>) =
            if ga.links.len() >= gb.links.len() {
                (a, kb, gb.links.iter().map(|(&k, &g)| (k, g)).collect())
            } else {
                (b, ka, ga.links.iter().map(|(&k, &g)| (k, g)).collect())
            };
        let keep_key = if root == a { ka } else { kb };
        let merged = merge(ga, ka, gb, kb);
        for (k, gamma) in gone_links {
            if k == keep_key {
                continue;
            }
            let r = self.key_root[k];
            let links = &mut self.groups[r].as_mut().expect("live neighbour").links;
            links.remove(&gone_key);
            *links.entry(keep_key).or_default() += gamma;
        }
        let other = if root == a { b } else { a };
        self.parent[other] = root;
        self.groups[root] = Some(merged);
        if new_key != keep_key {
            self.rekey(root, keep_key, new_key);
        }
        root
    }

    /// Renames a group's key, rewriting every neighbour's link entry.
    fn rekey(&mut self, root: usize, old: usize, new: usize) {
        let neighbours: Vec<usize> = self.group(root).links.keys().copied().collect();
        for k in neighbours {
            let r = self.key_root[k];
            let links = &mut self.groups[r].as_mut().expect("live neighbour").links;
            if let Some(gamma) = links.remove(&old) {
                links.insert(new, gamma);
            }
        }
        self.root_key[root] = new;
        self.key_root[new] = root;
    }
}
