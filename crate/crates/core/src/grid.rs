//! 4-connected pixel grid helpers shared by the raster, graph and scribble code.

use std::collections::VecDeque;

/// Calls `f` for every 4-neighbour of `index` inside a `width`×`height` grid.
#[inline]
pub fn for_each_neighbor4(index: usize, width: usize, height: usize, mut f: impl FnMut(usize)) {
    let x = index % width;
    let y = index / width;
    if x > 0 {
        f(index - 1);
    }
    if x + 1 < width {
        f(index + 1);
    }
    if y > 0 {
        f(index - width);
    }
    if y + 1 < height {
        f(index + width);
    }
}

/// Labels the 4-connected components of equal-valued pixels.
///
/// Components are numbered in raster order of their first pixel. Returns the
/// per-pixel component index and the component count.
pub fn label_components<T: PartialEq + Copy>(
    width: usize,
    height: usize,
    values: &[T],
) -> (Vec<u32>, usize) {
    debug_assert_eq!(values.len(), width * height);
    let mut comp = vec![u32::MAX; values.len()];
    let mut next = 0u32;
    let mut queue = VecDeque::new();
    for start in 0..values.len() {
        if comp[start] != u32::MAX {
            continue;
        }
        let v = values[start];
        comp[start] = next;
        queue.push_back(start);
        while let Some(p) = queue.pop_front() {
            for_each_neighbor4(p, width, height, |q| {
                if comp[q] == u32::MAX && values[q] == v {
                    comp[q] = next;
                    queue.push_back(q);
                }
            });
        }
        next += 1;
    }
    (comp, next as usize)
}

/// Labels 4-connected components of the pixels where `mask` is true.
/// Pixels outside the mask get `u32::MAX`.
pub fn label_mask_components(width: usize, height: usize, mask: &[bool]) -> (Vec<u32>, usize) {
    let mut comp = vec![u32::MAX; mask.len()];
    let mut next = 0u32;
    let mut queue = VecDeque::new();
    for start in 0..mask.len() {
        if !mask[start] || comp[start] != u32::MAX {
            continue;
        }
        comp[start] = next;
        queue.push_back(start);
        while let Some(p) = queue.pop_front() {
            for_each_neighbor4(p, width, height, |q| {
                if mask[q] && comp[q] == u32::MAX {
                    comp[q] = next;
                    queue.push_back(q);
                }
            });
        }
        next += 1;
    }
    (comp, next as usize)
}

/// True when the given pixel set is non-empty and 4-connected.
pub fn is_connected4(width: usize, height: usize, pixels: &[usize]) -> bool {
    if pixels.is_empty() {
        return false;
    }
    let mut mask = vec![false; width * height];
    for &p in pixels {
        mask[p] = true;
    }
    let (_, count) = label_mask_components(width, height, &mask);
    count == 1
}
