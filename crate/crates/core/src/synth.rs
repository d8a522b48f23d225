//! Deterministic synthetic scenes for tests, demos and benchmarks.

use std::collections::{BTreeMap, VecDeque};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::grid;
use crate::raster::{DenseFieldMap, ImagePlane, PanopticTruth, SuperpixelMap};
use crate::scribble::{Scribble, ScribbleSet};

#[derive(Debug, Clone)]
pub struct Scene {
    pub image: ImagePlane,
    pub truth: PanopticTruth,
    pub superpixels: SuperpixelMap,
    pub scribbles: ScribbleSet,
    pub probmap: Option<DenseFieldMap>,
}

/// Voronoi cells of jittered grid sites, one site per `cell`×`cell` block.
/// Disconnected pieces become separate superpixels.
pub fn voronoi_superpixels(width: usize, height: usize, cell: usize, rng: &mut impl Rng) -> SuperpixelMap {
    let cell = cell.max(1);
    let (cols, rows) = (width.div_ceil(cell), height.div_ceil(cell));
    let sites: Vec<(f64, f64)> = (0..rows * cols)
        .map(|k| {
            let (cx, cy) = ((k % cols) * cell, (k / cols) * cell);
            let sw = cell.min(width - cx) as f64;
            let sh = cell.min(height - cy) as f64;
            (cx as f64 + rng.random::<f64>() * sw, cy as f64 + rng.random::<f64>() * sh)
        })
        .collect();
    let mut ids = Vec::with_capacity(width * height);
    for y in 0..height {
        for x in 0..width {
            let (gx, gy) = ((x / cell) as i64, (y / cell) as i64);
            let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
            let mut best = (f64::INFINITY, 0usize);
            for dy in -2..=2 {
                for dx in -2..=2 {
                    let (sx, sy) = (gx + dx, gy + dy);
                    if sx < 0 || sy < 0 || sx >= cols as i64 || sy >= rows as i64 {
                        continue;
                    }
                    let k = sy as usize * cols + sx as usize;
                    let d = (sites[k].0 - px).powi(2) + (sites[k].1 - py).powi(2);
                    if d < best.0 {
                        best = (d, k);
                    }
                }
            }
            ids.push(best.1 as u32);
        }
    }
    SuperpixelMap::from_labels(width, height, ids).expect("dimensions match")
}

/// Manhattan distance of every mask pixel to the nearest pixel outside it.
fn inner_distance(width: usize, height: usize, mask: &[bool]) -> Vec<u32> {
    let mut dist = vec![u32::MAX; mask.len()];
    let mut queue = VecDeque::new();
    for p in 0..mask.len() {
        let (x, y) = (p % width, p / width);
        let border = x == 0 || y == 0 || x + 1 == width || y + 1 == height;
        let mut outside = false;
        grid::for_each_neighbor4(p, width, height, |q| outside |= !mask[q]);
        if !mask[p] {
            dist[p] = 0;
        } else if outside || border {
            dist[p] = 1;
            queue.push_back(p);
        }
    }
    while let Some(p) = queue.pop_front() {
        let d = dist[p];
        grid::for_each_neighbor4(p, width, height, |q| {
            if dist[q] == u32::MAX {
                dist[q] = d + 1;
                queue.push_back(q);
            }
        });
    }
    dist
}

/// A short horizontal stroke through the deepest pixel of `mask`, staying
/// inside it.
pub fn interior_stroke(width: usize, height: usize, mask: &[bool]) -> Option<Vec<[i64; 2]>> {
    let dist = inner_distance(width, height, mask);
    let (p, d) = dist
        .iter()
        .enumerate()
        .filter(|&(p, _)| mask[p])
        .fold(None, |best: Option<(usize, u32)>, (p, &d)| match best {
            Some(b) if b.1 >= d => Some(b),
            _ => Some((p, d)),
        })?;
    let reach = d.saturating_sub(1).min(2) as i64;
    let (x, y) = ((p % width) as i64, (p / width) as i64);
    Some(vec![[x - reach, y], [x + reach, y]])
}

/// Voronoi truth with `segments` stuff segments over `classes` classes,
/// flat noisy class colors, jittered-grid superpixels cut along the truth
/// boundaries, and one thickness-1
/// scribble per class in that class's largest segment. Segments of a class
/// other than the largest start unscribbled, leaving room for corrections.
pub fn interactive_scene(seed: u64, size: usize, segments: usize, classes: u32) -> Scene {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (w, h) = (size, size);
    let sites: Vec<(f64, f64, u32)> = (0..segments.max(1))
        .map(|_| {
            (
                rng.random::<f64>() * w as f64,
                rng.random::<f64>() * h as f64,
                rng.random_range(0..classes.max(1)),
            )
        })
        .collect();
    let class_ids: Vec<u32> = (0..w * h)
        .map(|p| {
            let (x, y) = ((p % w) as f64 + 0.5, (p / w) as f64 + 0.5);
            sites
                .iter()
                .min_by(|a, b| {
                    let da = (a.0 - x).powi(2) + (a.1 - y).powi(2);
                    let db = (b.0 - x).powi(2) + (b.1 - y).powi(2);
                    da.total_cmp(&db)
                })
                .map(|s| s.2)
                .expect("at least one site")
        })
        .collect();
    let palette: Vec<[f64; 3]> = (0..classes.max(1))
        .map(|_| [0.0; 3].map(|_: f64| 0.15 + 0.7 * rng.random::<f64>()))
        .collect();
    let data: Vec<f32> = class_ids
        .iter()
        .flat_map(|&c| palette[c as usize].map(|v| v as f32))
        .collect::<Vec<_>>()
        .into_iter()
        .map(|v| (v + (rng.random::<f32>() - 0.5) * 0.1).clamp(0.0, 1.0))
        .collect();
    let image = ImagePlane::new(w, h, 3, data).expect("shape");
    let (comp, n) = grid::label_components(w, h, &class_ids);
    let cells = voronoi_superpixels(w, h, 4, &mut rng);
    let adherent = cells.ids.iter().zip(&comp).map(|(&s, &c)| s * n as u32 + c).collect();
    let superpixels = SuperpixelMap::from_labels(w, h, adherent).expect("shape");
    let mut sizes = vec![0usize; n];
    for &c in &comp {
        sizes[c as usize] += 1;
    }
    let mut largest: BTreeMap<u32, usize> = BTreeMap::new();
    for (p, &c) in comp.iter().enumerate() {
        let class = class_ids[p];
        let e = largest.entry(class).or_insert(c as usize);
        if sizes[c as usize] > sizes[*e] {
            *e = c as usize;
        }
    }
    let mut scribbles = Vec::new();
    for (k, (&class, &c)) in largest.iter().enumerate() {
        let mask: Vec<bool> = comp.iter().map(|&x| x as usize == c).collect();
        if let Some(points) = interior_stroke(w, h, &mask) {
            scribbles.push(Scribble::new(class, k as u32 + 1, points).with_thickness(1));
        }
    }
    let truth = PanopticTruth::new(w, h, class_ids, vec![0; w * h]).expect("shape");
    Scene {
        image,
        truth,
        superpixels,
        scribbles: ScribbleSet::new(scribbles),
        probmap: None,
    }
}

/// 32×32 two-class scene on 4×4-pixel superpixels. The left half is class
/// 0 and the right half class 1; the probability map favours the true class
/// at 0.8 except for a 2×2-superpixel island inside the left half that
/// favours class 1 at 0.9. One scribble per class, far from the island.
pub fn spurious_island_scene() -> Scene {
    let (w, h) = (32, 32);
    let class_ids: Vec<u32> = (0..w * h).map(|p| u32::from(p % w >= 16)).collect();
    let island = |p: usize| {
        let (tx, ty) = ((p % w) / 4, (p / w) / 4);
        (1..=2).contains(&tx) && (3..=4).contains(&ty)
    };
    let probs: Vec<f32> = (0..w * h)
        .flat_map(|p| {
            let q1 = if island(p) {
                0.9
            } else if class_ids[p] == 1 {
                0.8
            } else {
                0.2
            };
            [1.0 - q1, q1]
        })
        .collect();
    let probmap = DenseFieldMap::new(w, h, 2, probs, true).expect("normalized");
    let image_data: Vec<f32> = class_ids
        .iter()
        .flat_map(|&c| if c == 0 { [0.2f32; 3] } else { [0.8f32; 3] })
        .collect();
    let image = ImagePlane::new(w, h, 3, image_data).expect("shape");
    let sp_ids: Vec<u32> = (0..w * h).map(|p| ((p / w / 4) * 8 + (p % w) / 4) as u32).collect();
    let superpixels = SuperpixelMap::from_labels(w, h, sp_ids).expect("shape");
    let scribbles = ScribbleSet::new(vec![
        Scribble::new(0, 1, vec![[1, 29], [2, 29]]).with_thickness(1),
        Scribble::new(1, 2, vec![[29, 29], [30, 29]]).with_thickness(1),
    ]);
    let truth = PanopticTruth::new(w, h, class_ids, vec![0; w * h]).expect("shape");
    Scene {
        image,
        truth,
        superpixels,
        scribbles,
        probmap: Some(probmap),
    }
}

/// Random smooth image over `cell`-sized Voronoi superpixels with
/// `scribbles` non-overlapping single-superpixel strokes, each its own region
/// and class `k % classes`.
pub fn fuzz_scene(seed: u64, width: usize, height: usize, cell: usize, scribbles: usize) -> Scene {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let superpixels = voronoi_superpixels(width, height, cell, &mut rng);
    let blobs: Vec<(f64, f64, [f64; 3])> = (0..6)
        .map(|_| {
            (
                rng.random::<f64>() * width as f64,
                rng.random::<f64>() * height as f64,
                [0.0; 3].map(|_: f64| rng.random::<f64>()),
            )
        })
        .collect();
    let scale = (width.max(height) as f64 / 3.0).powi(2);
    let data: Vec<f32> = (0..width * height)
        .flat_map(|p| {
            let (x, y) = ((p % width) as f64, (p / width) as f64);
            let mut acc = [0.0f64; 3];
            let mut total = 0.0;
            for b in &blobs {
                let wgt = (-((b.0 - x).powi(2) + (b.1 - y).powi(2)) / scale).exp();
                total += wgt;
                for k in 0..3 {
                    acc[k] += wgt * b.2[k];
                }
            }
            acc.map(|v| (v / total.max(1e-12)) as f32)
        })
        .collect::<Vec<_>>()
        .into_iter()
        .map(|v| (v + (rng.random::<f32>() - 0.5) * 0.05).clamp(0.0, 1.0))
        .collect();
    let image = ImagePlane::new(width, height, 3, data).expect("shape");

    let members = superpixels.members();
    let mut chosen = Vec::new();
    let mut used = vec![false; members.len()];
    while chosen.len() < scribbles.min(members.len()) {
        let s = rng.random_range(0..members.len());
        if !used[s] {
            used[s] = true;
            chosen.push(s);
        }
    }
    let list = chosen
        .iter()
        .enumerate()
        .filter_map(|(k, &s)| {
            let mut mask = vec![false; width * height];
            for &p in &members[s] {
                mask[p] = true;
            }
            interior_stroke(width, height, &mask)
                .map(|pts| Scribble::new(k as u32 % 4, k as u32 + 1, pts).with_thickness(1))
        })
        .collect();
    let truth = PanopticTruth::new(width, height, vec![0; width * height], vec![0; width * height])
        .expect("shape");
    Scene {
        image,
        truth,
        superpixels,
        scribbles: ScribbleSet::new(list),
        probmap: None,
    }
}
