//! Node labelings and their per-pixel rendering.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::rag::RagGraph;
use crate::raster::SuperpixelMap;
use crate::scribble::{Coverage, ScribbleSet};

/// The class / region / instance triple carried by a node.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct NodeLabel {
    pub class_id: u32,
    pub region_id: u32,
    pub instance_id: Option<u32>,
}

impl NodeLabel {
    pub fn new(class_id: u32, region_id: u32, instance_id: Option<u32>) -> Self {
        Self {
            class_id,
            region_id,
            instance_id,
        }
    }
}

/// A total labeling of the graph's nodes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelState {
    pub labels: Vec<NodeLabel>,
}

/// Per-pixel class and instance maps (instance 0 for stuff / unknown).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Rendered {
    pub width: usize,
    pub height: usize,
    pub class_ids: Vec<u32>,
    pub instance_ids: Vec<u32>,
}

impl LabelState {
    pub fn new(labels: Vec<NodeLabel>) -> Self {
        Self { labels }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn classes(&self) -> Vec<u32> {
        self.labels.iter().map(|l| l.class_id).collect()
    }

    /// Node sets per region id.
    pub fn regions(&self) -> BTreeMap<u32, Vec<usize>> {
        let mut out: BTreeMap<u32, Vec<usize>> = BTreeMap::new();
        for (i, l) in self.labels.iter().enumerate() {
            out.entry(l.region_id).or_default().push(i);
        }
        out
    }

    /// Region ids whose node set is not connected over real edges.
    pub fn disconnected_regions(&self, graph: &RagGraph) -> Vec<u32> {
        self.regions()
            .into_iter()
            .filter(|(_, nodes)| !graph.is_connected_subset(nodes, false))
            .map(|(r, _)| r)
            .collect()
    }

    /// Number of connected pieces per class over real edges, summed minus
    /// the number of classes: zero when every class is one piece.
    pub fn surplus_class_components(&self, graph: &RagGraph) -> usize {
        let mut by_class: BTreeMap<u32, Vec<usize>> = BTreeMap::new();
        for (i, l) in self.labels.iter().enumerate() {
            by_class.entry(l.class_id).or_default().push(i);
        }
        by_class
            .values()
            .map(|nodes| graph.components_of_subset(nodes, false).len() - 1)
            .sum()
    }

    /// Each pixel takes its superpixel's label; pixels under a scribble take
    /// the scribble's class and instance instead.
    pub fn render(&self, sp: &SuperpixelMap, coverage: &Coverage, set: &ScribbleSet) -> Rendered {
        let mut class_ids = Vec::with_capacity(sp.ids.len());
        let mut instance_ids = Vec::with_capacity(sp.ids.len());
        for (p, &node) in sp.ids.iter().enumerate() {
            let (c, i) = match coverage.owner(p) {
                Some(s) => {
                    let s = &set.scribbles[s];
                    (s.class_id, s.instance_id.unwrap_or(0))
                }
                None => {
                    let l = &self.labels[node as usize];
                    (l.class_id, l.instance_id.unwrap_or(0))
                }
            };
            class_ids.push(c);
            instance_ids.push(i);
        }
        Rendered {
            width: sp.width,
            height: sp.height,
            class_ids,
            instance_ids,
        }
    }

    /// Majority (class, instance) per superpixel, used to map a labeling onto
    /// a re-split superpixel map. Regions are set equal to the class.
    pub fn from_rendered_majority(rendered: &Rendered, sp: &SuperpixelMap) -> Self {
        let mut votes: Vec<BTreeMap<(u32, u32), usize>> = vec![BTreeMap::new(); sp.count()];
        for (p, &node) in sp.ids.iter().enumerate() {
            *votes[node as usize]
                .entry((rendered.class_ids[p], rendered.instance_ids[p]))
                .or_default() += 1;
        }
        let labels = votes
            .into_iter()
            .map(|v| {
                let (&(c, i), _) = v
                    .iter()
                    .fold(None, |best: Option<(&(u32, u32), &usize)>, cur| match best {
                        Some(b) if b.1 >= cur.1 => Some(b),
                        _ => Some(cur),
                    })
                    .expect("every superpixel has pixels");
                NodeLabel::new(c, c, (i != 0).then_some(i))
            })
            .collect();
        Self { labels }
    }
}

/// Distinct region ids present.
pub fn region_ids(labels: &[NodeLabel]) -> BTreeSet<u32> {
    labels.iter().map(|l| l.region_id).collect()
}
