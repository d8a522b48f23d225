//! Scribbles: polylines carrying class, region and optional instance IDs.
//!
//! Scribbles are the only supervision. Each one is rasterized as a thick
//! 4-connected Bresenham stroke; where two scribbles cover the same pixel the
//! later one in the set owns it.

use std::collections::{BTreeMap, BTreeSet, HashMap, VecDeque};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grid;
use crate::raster::{PanopticTruth, IGNORE};

pub const DEFAULT_THICKNESS: u32 = 3;

fn default_thickness() -> u32 {
    DEFAULT_THICKNESS
}

#[derive(Debug, Error)]
pub enum ScribbleError {
    #[error("scribble {index}: point ({x}, {y}) lies outside the {width}x{height} image")]
    OutOfBounds {
        index: usize,
        x: i64,
        y: i64,
        width: usize,
        height: usize,
    },
    #[error("scribble {0} has no points")]
    Empty(usize),
    #[error("invalid scribble JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("prediction has no mislabeled pixels")]
    NoError,
    #[error("prediction is {found:?}, truth is {expected:?}")]
    DimensionMismatch {
        expected: (usize, usize),
        found: (usize, usize),
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ClassKind {
    Thing,
    Stuff,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Scribble {
    pub class_id: u32,
    pub region_id: u32,
    #[serde(default)]
    pub instance_id: Option<u32>,
    #[serde(default = "default_thickness")]
    pub thickness: u32,
    /// `[x, y]` pixel coordinates.
    pub points: Vec<[i64; 2]>,
}

impl Scribble {
    pub fn new(class_id: u32, region_id: u32, points: Vec<[i64; 2]>) -> Self {
        Self {
            class_id,
            region_id,
            instance_id: None,
            thickness: DEFAULT_THICKNESS,
            points,
        }
    }

    pub fn with_instance(mut self, instance: u32) -> Self {
        self.instance_id = Some(instance);
        self
    }

    pub fn with_thickness(mut self, thickness: u32) -> Self {
        self.thickness = thickness;
        self
    }

    /// Stroke pixels clipped to the image, sorted. Polylines that leave the
    /// image may rasterize to several pieces.
    pub fn rasterize_clipped(&self, width: usize, height: usize) -> Vec<usize> {
        let t = i64::from(self.thickness.max(1));
        let (lo, hi) = (-(t - 1) / 2, t / 2);
        let mut pixels = BTreeSet::new();
        for (x, y) in centerline(&self.points) {
            for dy in lo..=hi {
                for dx in lo..=hi {
                    let (px, py) = (x + dx, y + dy);
                    if px >= 0 && py >= 0 && (px as usize) < width && (py as usize) < height {
                        pixels.insert(py as usize * width + px as usize);
                    }
                }
            }
        }
        pixels.into_iter().collect()
    }
}

/// Rasterizes one scribble. Every polyline vertex must lie inside the image.
pub fn rasterize(s: &Scribble, width: usize, height: usize) -> Result<Vec<usize>, ScribbleError> {
    if s.points.is_empty() {
        return Err(ScribbleError::Empty(0));
    }
    if let Some(&[x, y]) = s
        .points
        .iter()
        .find(|&&[x, y]| x < 0 || y < 0 || x as usize >= width || y as usize >= height)
    {
        return Err(ScribbleError::OutOfBounds {
            index: 0,
            x,
            y,
            width,
            height,
        });
    }
    Ok(s.rasterize_clipped(width, height))
}

/// Centerline of a polyline as a 4-connected pixel path. Each Bresenham
/// diagonal step is split into a horizontal then a vertical move.
fn centerline(points: &[[i64; 2]]) -> Vec<(i64, i64)> {
    let mut out = Vec::new();
    let Some(&[x0, y0]) = points.first() else {
        return out;
    };
    out.push((x0, y0));
    for w in points.windows(2) {
        let [[x0, y0], [x1, y1]] = [w[0], w[1]];
        let dx = (x1 - x0).abs();
        let dy = -(y1 - y0).abs();
        let sx = if x0 < x1 { 1 } else { -1 };
        let sy = if y0 < y1 { 1 } else { -1 };
        let (mut x, mut y) = (x0, y0);
        let mut err = dx + dy;
        while (x, y) != (x1, y1) {
            let e2 = 2 * err;
            let step_x = e2 >= dy;
            let step_y = e2 <= dx;
            if step_x {
                err += dy;
                x += sx;
                if step_y {
                    out.push((x, y));
                }
            }
            if step_y {
                err += dx;
                y += sy;
            }
            out.push((x, y));
        }
    }
    out
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ScribbleSet {
    pub scribbles: Vec<Scribble>,
    #[serde(default)]
    pub class_map: BTreeMap<u32, ClassKind>,
}

impl ScribbleSet {
    pub fn new(scribbles: Vec<Scribble>) -> Self {
        Self {
            scribbles,
            class_map: BTreeMap::new(),
        }
    }

    pub fn from_json(text: &str) -> Result<Self, ScribbleError> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scribble sets serialize")
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ScribbleError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| ScribbleError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_json(&text)
    }

    pub fn kind_of(&self, class_id: u32) -> Option<ClassKind> {
        self.class_map.get(&class_id).copied()
    }

    /// Distinct class ids in first-appearance order.
    pub fn class_ids(&self) -> Vec<u32> {
        let mut seen = BTreeSet::new();
        self.scribbles
            .iter()
            .filter(|s| seen.insert(s.class_id))
            .map(|s| s.class_id)
            .collect()
    }

    pub fn next_region_id(&self) -> u32 {
        self.scribbles
            .iter()
            .map(|s| s.region_id + 1)
            .max()
            .unwrap_or(0)
    }

    /// Merges `other` into `self`; the class map of `other` wins on conflict.
    pub fn extend(&mut self, other: ScribbleSet) {
        self.scribbles.extend(other.scribbles);
        self.class_map.extend(other.class_map);
    }
}

/// Pixel ownership after rasterizing a whole set; later scribbles win.
#[derive(Debug, Clone)]
pub struct Coverage {
    pub width: usize,
    pub height: usize,
    owner: Vec<u32>,
}

impl Coverage {
    const NONE: u32 = u32::MAX;

    pub fn build(set: &ScribbleSet, width: usize, height: usize) -> Self {
        let mut owner = vec![Self::NONE; width * height];
        for (i, s) in set.scribbles.iter().enumerate() {
            for p in s.rasterize_clipped(width, height) {
                owner[p] = i as u32;
            }
        }
        Self {
            width,
            height,
            owner,
        }
    }

    /// Index (into the set) of the scribble owning `pixel`.
    pub fn owner(&self, pixel: usize) -> Option<usize> {
        match self.owner[pixel] {
            Self::NONE => None,
            s => Some(s as usize),
        }
    }

    /// Pixels owned by each scribble, in raster order.
    pub fn owned_pixels(&self, scribble_count: usize) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); scribble_count];
        for (p, &o) in self.owner.iter().enumerate() {
            if o != Self::NONE {
                out[o as usize].push(p);
            }
        }
        out
    }

    /// First pixel along the scribble's own stroke that it still owns.
    pub fn anchor_pixel(&self, set: &ScribbleSet, index: usize) -> Option<usize> {
        let s = &set.scribbles[index];
        centerline(&s.points)
            .into_iter()
            .filter(|&(x, y)| {
                x >= 0 && y >= 0 && (x as usize) < self.width && (y as usize) < self.height
            })
            .map(|(x, y)| y as usize * self.width + x as usize)
            .find(|&p| self.owner(p) == Some(index))
            .or_else(|| {
                s.rasterize_clipped(self.width, self.height)
                    .into_iter()
                    .find(|&p| self.owner(p) == Some(index))
            })
    }
}

/// Policy violations found by [`validate_policy`].
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PolicyReport {
    /// Scribbles (by index) whose clipped rasterization is not 4-connected.
    pub disconnected: Vec<usize>,
    /// Region ids used by more than one scribble.
    pub duplicate_region_ids: Vec<u32>,
    /// Pairs of scribbles from different regions that share a pixel.
    pub overlapping: Vec<(usize, usize)>,
    /// Scribbles with no points or no in-bounds pixels.
    pub empty: Vec<usize>,
    /// Thing-class scribbles without an instance id, or stuff with one.
    pub instance_mismatch: Vec<usize>,
}

impl PolicyReport {
    pub fn is_valid(&self) -> bool {
        self.disconnected.is_empty()
            && self.duplicate_region_ids.is_empty()
            && self.overlapping.is_empty()
            && self.empty.is_empty()
            && self.instance_mismatch.is_empty()
    }
}

pub fn validate_policy(set: &ScribbleSet, width: usize, height: usize) -> PolicyReport {
    let mut report = PolicyReport::default();
    let mut region_count: BTreeMap<u32, usize> = BTreeMap::new();
    let mut first_owner: HashMap<usize, usize> = HashMap::new();
    let mut overlaps = BTreeSet::new();
    for (i, s) in set.scribbles.iter().enumerate() {
        *region_count.entry(s.region_id).or_default() += 1;
        match (set.kind_of(s.class_id), s.instance_id) {
            (Some(ClassKind::Thing), None) | (Some(ClassKind::Stuff), Some(_)) => {
                report.instance_mismatch.push(i)
            }
            _ => {}
        }
        let pixels = s.rasterize_clipped(width, height);
        if s.points.is_empty() || pixels.is_empty() {
            report.empty.push(i);
            continue;
        }
        if !grid::is_connected4(width, height, &pixels) {
            report.disconnected.push(i);
        }
        for p in pixels {
            match first_owner.get(&p) {
                Some(&j) if set.scribbles[j].region_id != s.region_id => {
                    overlaps.insert((j, i));
                }
                Some(_) => {}
                None => {
                    first_owner.insert(p, i);
                }
            }
        }
    }
    report.duplicate_region_ids = region_count
        .into_iter()
        .filter(|&(_, n)| n > 1)
        .map(|(r, _)| r)
        .collect();
    report.overlapping = overlaps.into_iter().collect();
    report
}

// ---------------------------------------------------------------------------
// Correction simulator

/// Simulates one annotator correction against ground truth.
///
/// The target is the largest 4-connected component of mislabeled pixels
/// (prediction class ≠ truth class, truth not IGNORE, not under an existing
/// scribble), intersected with the ground-truth segment it overlaps most; of
/// that intersection the largest connected piece is kept. The stroke is the
/// longest path through its morphological skeleton, made 4-connected inside
/// the piece, and falls back to the piece's geodesic diameter when the
/// skeleton path is shorter than five pixels. Strokes have thickness 1 so
/// they stay inside the target. Region ids are always fresh.
pub fn simulate_correction(
    pred_class: &[u32],
    truth: &PanopticTruth,
    existing: &ScribbleSet,
) -> Result<Scribble, ScribbleError> {
    let (w, h) = (truth.width, truth.height);
    if pred_class.len() != w * h {
        return Err(ScribbleError::DimensionMismatch {
            expected: (w, h),
            found: (pred_class.len(), 1),
        });
    }
    let coverage = Coverage::build(existing, w, h);
    let error: Vec<bool> = (0..w * h)
        .map(|p| {
            truth.class_ids[p] != IGNORE
                && pred_class[p] != truth.class_ids[p]
                && coverage.owner(p).is_none()
        })
        .collect();
    let (comp, count) = grid::label_mask_components(w, h, &error);
    if count == 0 {
        return Err(ScribbleError::NoError);
    }
    let mut sizes = vec![0usize; count];
    for &c in comp.iter().filter(|&&c| c != u32::MAX) {
        sizes[c as usize] += 1;
    }
    // first maximum: ties go to the component met first in raster order
    let largest = sizes
        .iter()
        .enumerate()
        .fold(0, |best, (i, &s)| if s > sizes[best] { i } else { best }) as u32;

    let mut overlap: BTreeMap<(u32, u32), usize> = BTreeMap::new();
    for p in (0..w * h).filter(|&p| comp[p] == largest) {
        *overlap
            .entry((truth.class_ids[p], truth.instance_ids[p]))
            .or_default() += 1;
    }
    let (&segment, _) = overlap
        .iter()
        .fold(None, |best: Option<(&(u32, u32), &usize)>, cur| match best {
            Some(b) if b.1 >= cur.1 => Some(b),
            _ => Some(cur),
        })
        .expect("largest component is non-empty");

    let target_mask: Vec<bool> = (0..w * h)
        .map(|p| comp[p] == largest && (truth.class_ids[p], truth.instance_ids[p]) == segment)
        .collect();
    let (piece, piece_count) = grid::label_mask_components(w, h, &target_mask);
    let mut piece_sizes = vec![0usize; piece_count];
    for &c in piece.iter().filter(|&&c| c != u32::MAX) {
        piece_sizes[c as usize] += 1;
    }
    let best_piece = piece_sizes
        .iter()
        .enumerate()
        .fold(0, |b, (i, &s)| if s > piece_sizes[b] { i } else { b }) as u32;
    let region: Vec<bool> = piece.iter().map(|&c| c == best_piece).collect();

    let mut path = skeleton_path(w, h, &region);
    if path.len() < 5 {
        let diameter = geodesic_diameter(w, h, &region);
        if diameter.len() > path.len() {
            path = diameter;
        }
    }
    let points = path
        .into_iter()
        .map(|p| [(p % w) as i64, (p / w) as i64])
        .collect();
    let (class_id, instance) = segment;
    let instance_id = match existing.kind_of(class_id) {
        Some(ClassKind::Thing) => Some(instance),
        _ => None,
    };
    Ok(Scribble {
        class_id,
        region_id: existing.next_region_id(),
        instance_id,
        thickness: 1,
        points,
    })
}

/// BFS distances from `start` inside `mask` (4-connected); returns the
/// farthest pixel (lowest index on ties) and the parent links.
fn bfs_farthest(w: usize, h: usize, mask: &[bool], start: usize) -> (usize, Vec<usize>) {
    let mut parent = vec![usize::MAX; mask.len()];
    let mut dist = vec![usize::MAX; mask.len()];
    let mut queue = VecDeque::from([start]);
    dist[start] = 0;
    let mut far = start;
    while let Some(p) = queue.pop_front() {
        if dist[p] > dist[far] || (dist[p] == dist[far] && p < far) {
            far = p;
        }
        grid::for_each_neighbor4(p, w, h, |q| {
            if mask[q] && dist[q] == usize::MAX {
                dist[q] = dist[p] + 1;
                parent[q] = p;
                queue.push_back(q);
            }
        });
    }
    (far, parent)
}

fn trace(parent: &[usize], from: usize) -> Vec<usize> {
    let mut path = vec![from];
    let mut cur = from;
    while parent[cur] != usize::MAX {
        cur = parent[cur];
        path.push(cur);
    }
    path
}

/// Longest shortest 4-path inside the mask (double BFS).
fn geodesic_diameter(w: usize, h: usize, mask: &[bool]) -> Vec<usize> {
    let Some(start) = mask.iter().position(|&m| m) else {
        return Vec::new();
    };
    let (a, _) = bfs_farthest(w, h, mask, start);
    let (b, parent) = bfs_farthest(w, h, mask, a);
    trace(&parent, b)
}

/// Zhang–Suen thinning of the mask.
fn skeletonize(w: usize, h: usize, mask: &[bool]) -> Vec<bool> {
    let mut img = mask.to_vec();
    let at = |img: &[bool], x: i64, y: i64| -> bool {
        x >= 0 && y >= 0 && (x as usize) < w && (y as usize) < h && img[y as usize * w + x as usize]
    };
    loop {
        let mut changed = false;
        for step in 0..2 {
            let mut remove = Vec::new();
            for p in (0..w * h).filter(|&p| img[p]) {
                let (x, y) = ((p % w) as i64, (p / w) as i64);
                // P2..P9 clockwise from north
                let n = [
                    at(&img, x, y - 1),
                    at(&img, x + 1, y - 1),
                    at(&img, x + 1, y),
                    at(&img, x + 1, y + 1),
                    at(&img, x, y + 1),
                    at(&img, x - 1, y + 1),
                    at(&img, x - 1, y),
                    at(&img, x - 1, y - 1),
                ];
                let b = n.iter().filter(|&&v| v).count();
                let a = (0..8).filter(|&i| !n[i] && n[(i + 1) % 8]).count();
                let (p2, p4, p6, p8) = (n[0], n[2], n[4], n[6]);
                let cond = if step == 0 {
                    !(p2 && p4 && p6) && !(p4 && p6 && p8)
                } else {
                    !(p2 && p4 && p8) && !(p2 && p6 && p8)
                };
                if (2..=6).contains(&b) && a == 1 && cond {
                    remove.push(p);
                }
            }
            changed |= !remove.is_empty();
            for p in remove {
                img[p] = false;
            }
        }
        if !changed {
            return img;
        }
    }
}

/// Longest path through the skeleton (8-connected double BFS), expanded to a
/// 4-connected pixel path that stays inside `region`.
fn skeleton_path(w: usize, h: usize, region: &[bool]) -> Vec<usize> {
    let skel = skeletonize(w, h, region);
    let Some(start) = skel.iter().position(|&s| s) else {
        return Vec::new();
    };
    let neighbors8 = |p: usize| {
        let (x, y) = ((p % w) as i64, (p / w) as i64);
        let mut out = Vec::with_capacity(8);
        for dy in -1..=1i64 {
            for dx in -1..=1i64 {
                let (nx, ny) = (x + dx, y + dy);
                if (dx, dy) != (0, 0) && nx >= 0 && ny >= 0 && (nx as usize) < w && (ny as usize) < h
                {
                    out.push(ny as usize * w + nx as usize);
                }
            }
        }
        out
    };
    let bfs8 = |from: usize| {
        let mut parent = vec![usize::MAX; w * h];
        let mut dist = vec![usize::MAX; w * h];
        let mut queue = VecDeque::from([from]);
        dist[from] = 0;
        let mut far = from;
        while let Some(p) = queue.pop_front() {
            if dist[p] > dist[far] {
                far = p;
            }
            for q in neighbors8(p) {
                if skel[q] && dist[q] == usize::MAX {
                    dist[q] = dist[p] + 1;
                    parent[q] = p;
                    queue.push_back(q);
                }
            }
        }
        (far, parent)
    };
    let (a, _) = bfs8(start);
    let (b, parent) = bfs8(a);
    let skeleton_route = trace(&parent, b);

    let mut path = vec![skeleton_route[0]];
    for pair in skeleton_route.windows(2) {
        let (p, q) = (pair[0], pair[1]);
        let (px, py, qx, qy) = (p % w, p / w, q % w, q / w);
        if px != qx && py != qy {
            let corner_a = py * w + qx;
            let corner_b = qy * w + px;
            if region[corner_a] {
                path.push(corner_a);
            } else if region[corner_b] {
                path.push(corner_b);
            } else {
                // detour through the region
                let mut bridge = shortest_path(w, h, region, p, q);
                bridge.pop();
                path.extend(bridge.into_iter().skip(1));
            }
        }
        path.push(q);
    }
    path
}

fn shortest_path(w: usize, h: usize, mask: &[bool], from: usize, to: usize) -> Vec<usize> {
    let mut parent = vec![usize::MAX; mask.len()];
    let mut seen = vec![false; mask.len()];
    let mut queue = VecDeque::from([from]);
    seen[from] = true;
    while let Some(p) = queue.pop_front() {
        if p == to {
            break;
        }
        grid::for_each_neighbor4(p, w, h, |q| {
            if mask[q] && !seen[q] {
                seen[q] = true;
                parent[q] = p;
                queue.push_back(q);
            }
        });
    }
    let mut path = trace(&parent, to);
    path.reverse();
    path
}

#[cfg(test)]
mod tests {
    use super::*;

    fn xy(p: usize, w: usize) -> (usize, usize) {
        (p % w, p / w)
    }

    #[test]
    fn single_point_thickness_one() {
        let s = Scribble::new(0, 0, vec![[2, 1]]).with_thickness(1);
        assert_eq!(rasterize(&s, 4, 4).unwrap(), vec![6]);
    }

    #[test]
    fn horizontal_segment() {
        let s = Scribble::new(0, 0, vec![[0, 0], [4, 0]]).with_thickness(1);
        assert_eq!(rasterize(&s, 5, 1).unwrap(), vec![0, 1, 2, 3, 4]);
    }

    #[test]
    fn diagonal_is_a_staircase() {
        let s = Scribble::new(0, 0, vec![[0, 0], [3, 3]]).with_thickness(1);
        let px = rasterize(&s, 4, 4).unwrap();
        // Bresenham hits the 4 diagonal pixels, gap filling adds one per step
        let coords: Vec<_> = px.iter().map(|&p| xy(p, 4)).collect();
        assert_eq!(
            coords,
            vec![(0, 0), (1, 0), (1, 1), (2, 1), (2, 2), (3, 2), (3, 3)]
        );
        assert!(grid::is_connected4(4, 4, &px));
    }

    #[test]
    fn thickness_three_is_a_three_wide_band() {
        let s = Scribble::new(0, 0, vec![[1, 2], [5, 2]]);
        let px = rasterize(&s, 8, 5).unwrap();
        // the square brush also widens both ends: x 0..=6, y 1..=3
        assert_eq!(px.len(), 21);
    }

    #[test]
    fn out_of_bounds_point_is_rejected() {
        let s = Scribble::new(0, 0, vec![[0, 0], [5, 0]]);
        assert!(matches!(
            rasterize(&s, 5, 5),
            Err(ScribbleError::OutOfBounds { x: 5, .. })
        ));
    }

    #[test]
    fn json_schema_round_trip() {
        let text = r#"{"scribbles":[{"class_id":7,"region_id":3,"instance_id":null,"thickness":3,"points":[[1,2],[3,4]]},
                      {"class_id":26,"region_id":4,"instance_id":2,"thickness":1,"points":[[0,0]]}],
                       "class_map":{"7":"stuff","26":"thing"}}"#;
        let set = ScribbleSet::from_json(text).unwrap();
        assert_eq!(set.scribbles[0].points, vec![[1, 2], [3, 4]]);
        assert_eq!(set.kind_of(26), Some(ClassKind::Thing));
        assert_eq!(ScribbleSet::from_json(&set.to_json()).unwrap(), set);
    }

    #[test]
    fn straight_scribble_is_valid() {
        let set = ScribbleSet::new(vec![Scribble::new(1, 0, vec![[1, 1], [6, 1]])]);
        assert!(validate_policy(&set, 8, 8).is_valid());
    }

    #[test]
    fn duplicate_region_ids_are_flagged() {
        let set = ScribbleSet::new(vec![
            Scribble::new(1, 4, vec![[1, 1]]),
            Scribble::new(1, 4, vec![[6, 6]]),
        ]);
        let r = validate_policy(&set, 8, 8);
        assert_eq!(r.duplicate_region_ids, vec![4]);
        assert!(!r.is_valid());
    }

    #[test]
    fn polyline_leaving_the_image_splits() {
        // up and out through the top edge, across, and back in: the clipped
        // stroke is two stubs more than sqrt(2) apart
        let s = Scribble::new(0, 0, vec![[1, 2], [1, -3], [3, -3], [3, 2]]).with_thickness(1);
        let px = s.rasterize_clipped(5, 5);
        assert!(!grid::is_connected4(5, 5, &px));
        let r = validate_policy(&ScribbleSet::new(vec![s]), 5, 5);
        assert_eq!(r.disconnected, vec![0]);
    }

    #[test]
    fn overlap_between_regions_is_flagged() {
        let set = ScribbleSet::new(vec![
            Scribble::new(1, 0, vec![[0, 2], [6, 2]]),
            Scribble::new(2, 1, vec![[3, 0], [3, 6]]),
        ]);
        assert_eq!(validate_policy(&set, 8, 8).overlapping, vec![(0, 1)]);
    }

    #[test]
    fn thing_without_instance_is_flagged() {
        let mut set = ScribbleSet::new(vec![Scribble::new(5, 0, vec![[1, 1]])]);
        set.class_map.insert(5, ClassKind::Thing);
        assert_eq!(validate_policy(&set, 4, 4).instance_mismatch, vec![0]);
    }

    #[test]
    fn later_scribble_owns_shared_pixels() {
        let set = ScribbleSet::new(vec![
            Scribble::new(1, 0, vec![[0, 0], [3, 0]]).with_thickness(1),
            Scribble::new(2, 1, vec![[2, 0]]).with_thickness(1),
        ]);
        let cov = Coverage::build(&set, 4, 1);
        assert_eq!(cov.owner(1), Some(0));
        assert_eq!(cov.owner(2), Some(1));
        assert_eq!(cov.anchor_pixel(&set, 0), Some(0));
    }

    fn truth_from(w: usize, h: usize, classes: Vec<u32>) -> PanopticTruth {
        PanopticTruth::new(w, h, classes, vec![0; w * h]).unwrap()
    }

    #[test]
    fn perfect_prediction_has_nothing_to_correct() {
        let t = truth_from(4, 4, vec![1; 16]);
        assert!(matches!(
            simulate_correction(&vec![1; 16], &t, &ScribbleSet::default()),
            Err(ScribbleError::NoError)
        ));
    }

    #[test]
    fn correction_lands_inside_a_single_blob() {
        let (w, h) = (20, 20);
        let mut truth = vec![0u32; w * h];
        for y in 5..15 {
            for x in 5..15 {
                truth[y * w + x] = 3;
            }
        }
        let t = truth_from(w, h, truth.clone());
        let pred = vec![0u32; w * h];
        let s = simulate_correction(&pred, &t, &ScribbleSet::default()).unwrap();
        assert_eq!(s.class_id, 3);
        let px = rasterize(&s, w, h).unwrap();
        assert!(px.len() >= 5);
        assert!(px.iter().all(|&p| truth[p] == 3));
        assert!(grid::is_connected4(w, h, &px));
    }

    #[test]
    fn correction_targets_the_largest_blob() {
        let (w, h) = (20, 10);
        let mut truth = vec![0u32; w * h];
        // 30-pixel blob (6x5) and 12-pixel blob (4x3)
        for y in 1..6 {
            for x in 1..7 {
                truth[y * w + x] = 2;
            }
        }
        for y in 2..5 {
            for x in 12..16 {
                truth[y * w + x] = 2;
            }
        }
        let t = truth_from(w, h, truth);
        let s = simulate_correction(&vec![0; w * h], &t, &ScribbleSet::default()).unwrap();
        for p in rasterize(&s, w, h).unwrap() {
            let (x, y) = xy(p, w);
            assert!((1..7).contains(&x) && (1..6).contains(&y));
        }
    }

    #[test]
    fn correction_avoids_existing_scribbles_and_takes_fresh_region() {
        let (w, h) = (12, 12);
        let t = truth_from(w, h, vec![4; w * h]);
        let existing = ScribbleSet::new(vec![
            Scribble::new(9, 6, vec![[0, 6], [11, 6]]).with_thickness(1)
        ]);
        let s = simulate_correction(&vec![0; w * h], &t, &existing).unwrap();
        assert_eq!(s.region_id, 7);
        let px = rasterize(&s, w, h).unwrap();
        assert!(px.iter().all(|&p| p / w != 6));
    }

    #[test]
    fn ignore_pixels_are_never_errors() {
        let t = truth_from(3, 1, vec![IGNORE, IGNORE, 1]);
        assert!(matches!(
            simulate_correction(&[0, 0, 1], &t, &ScribbleSet::default()),
            Err(ScribbleError::NoError)
        ));
    }

    #[test]
    fn two_by_two_blob_still_yields_a_stroke() {
        let (w, h) = (4, 4);
        let mut truth = vec![0u32; 16];
        for p in [5, 6, 9, 10] {
            truth[p] = 1;
        }
        let t = truth_from(w, h, truth);
        let s = simulate_correction(&[0; 16], &t, &ScribbleSet::default()).unwrap();
        let px = rasterize(&s, w, h).unwrap();
        assert!(!px.is_empty() && px.iter().all(|p| [5, 6, 9, 10].contains(p)));
    }
}
