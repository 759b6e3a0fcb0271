//! Procedural scene depth and depth-driven box tightening.

use std::collections::{BTreeMap, VecDeque};

use crate::error::DepthError;
use crate::layout::{patch_center, BoundingBox, ValidatedLayout};
use crate::pgm::encode_pgm16;

/// Tolerance around the modal depth that defines a plateau.
pub const PLATEAU_TOLERANCE: f64 = 0.05;

/// Per-pixel depth in `[0, 1]`, row-major; 1 is nearest.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthMap {
    pub h: usize,
    pub w: usize,
    pub values: Vec<f64>,
}

impl DepthMap {
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.w + col]
    }

    pub fn quantized(&self) -> Vec<u16> {
        self.values.iter().map(|&d| quantize(d)).collect()
    }

    pub fn to_pgm(&self) -> Vec<u8> {
        encode_pgm16(self.w, self.h, &self.quantized())
    }
}

fn quantize(d: f64) -> u16 {
    (d.clamp(0.0, 1.0) * 65535.0).round() as u16
}

pub fn background_depth(y: f64) -> f64 {
    0.1 + 0.2 * y
}

/// Depth per instance in id order: `0.5 + 0.5 * rank / n`, smallest box ranked nearest.
pub fn instance_depths(layout: &ValidatedLayout) -> Vec<f64> {
    let n = layout.n();
    let mut order: Vec<usize> = (0..n).collect();
    // Far to near: larger area first; on equal area the lower id ends up nearer.
    order.sort_by(|&a, &b| {
        let (ia, ib) = (&layout.instances()[a], &layout.instances()[b]);
        ib.bbox
            .area()
            .total_cmp(&ia.bbox.area())
            .then(ib.id.cmp(&ia.id))
    });
    let mut depth = vec![0.0; n];
    for (rank0, &i) in order.iter().enumerate() {
        depth[i] = 0.5 + 0.5 * (rank0 + 1) as f64 / n as f64;
    }
    depth
}

/// Paints instances far to near over a vertical background gradient.
pub fn layout_to_depth(layout: &ValidatedLayout, h: usize, w: usize) -> Result<DepthMap, DepthError> {
    if h == 0 || w == 0 {
        return Err(DepthError::EmptyMap { h, w });
    }
    let mut values: Vec<f64> = (0..h)
        .flat_map(|r| std::iter::repeat_n(background_depth(patch_center(r, h)), w))
        .collect();
    let depth = instance_depths(layout);
    let mut order: Vec<usize> = (0..layout.n()).collect();
    order.sort_by(|&a, &b| depth[a].total_cmp(&depth[b]));
    for i in order {
        let Some((rows, cols)) = pixel_span(&layout.instances()[i].bbox, h, w) else {
            continue;
        };
        for r in rows {
            values[r * w + cols.start..r * w + cols.end].fill(depth[i]);
        }
    }
    Ok(DepthMap { h, w, values })
}

type Span = std::ops::Range<usize>;

/// Pixel rows and columns whose centres fall inside `b`.
fn pixel_span(b: &BoundingBox, h: usize, w: usize) -> Option<(Span, Span)> {
    let axis = |lo: f64, hi: f64, n: usize| {
        let inside: Vec<usize> = (0..n)
            .filter(|&i| {
                let c = patch_center(i, n);
                c >= lo && c < hi
            })
            .collect();
        Some(*inside.first()?..*inside.last()? + 1)
    };
    Some((axis(b.y0, b.y1, h)?, axis(b.x0, b.x1, w)?))
}

/// Shrinks `b` to the largest 4-connected plateau at the box's modal depth.
///
/// A side moves only when the plateau stops short of the outermost pixel on
/// that side, so already-tight boxes come back unchanged.
pub fn refine_box(b: &BoundingBox, depth: &DepthMap) -> Result<BoundingBox, DepthError> {
    let (rows, cols) = pixel_span(b, depth.h, depth.w).ok_or(DepthError::EmptyComponent)?;
    let (bh, bw) = (rows.len(), cols.len());

    let mut hist: BTreeMap<u16, usize> = BTreeMap::new();
    for r in rows.clone() {
        for c in cols.clone() {
            *hist.entry(quantize(depth.get(r, c))).or_default() += 1;
        }
    }
    // Most frequent level; the nearer one wins a tie.
    let (&mode, _) = hist
        .iter()
        .max_by(|a, b| a.1.cmp(b.1).then(a.0.cmp(b.0)))
        .expect("span is non-empty");
    let modal = mode as f64 / 65535.0;

    let on = |r: usize, c: usize| (depth.get(rows.start + r, cols.start + c) - modal).abs() <= PLATEAU_TOLERANCE;
    let mut seen = vec![false; bh * bw];
    let mut best: Option<(usize, [usize; 4])> = None;
    let mut queue = VecDeque::new();
    for start in 0..bh * bw {
        if seen[start] || !on(start / bw, start % bw) {
            continue;
        }
        seen[start] = true;
        queue.push_back(start);
        let mut size = 0;
        let mut ext = [usize::MAX, usize::MAX, 0, 0];
        while let Some(p) = queue.pop_front() {
            let (r, c) = (p / bw, p % bw);
            size += 1;
            ext = [ext[0].min(r), ext[1].min(c), ext[2].max(r), ext[3].max(c)];
            let mut push = |rr: usize, cc: usize| {
                let q = rr * bw + cc;
                if !seen[q] && on(rr, cc) {
                    seen[q] = true;
                    queue.push_back(q);
                }
            };
            if r > 0 {
                push(r - 1, c);
            }
            if r + 1 < bh {
                push(r + 1, c);
            }
            if c > 0 {
                push(r, c - 1);
            }
            if c + 1 < bw {
                push(r, c + 1);
            }
        }
        if best.is_none_or(|(s, _)| size > s) {
            best = Some((size, ext));
        }
    }
    let (_, [r0, c0, r1, c1]) = best.ok_or(DepthError::EmptyComponent)?;

    let (h, w) = (depth.h as f64, depth.w as f64);
    Ok(BoundingBox::new(
        if c0 == 0 { b.x0 } else { (cols.start + c0) as f64 / w },
        if r0 == 0 { b.y0 } else { (rows.start + r0) as f64 / h },
        if c1 + 1 == bw { b.x1 } else { (cols.start + c1 + 1) as f64 / w },
        if r1 + 1 == bh { b.y1 } else { (rows.start + r1 + 1) as f64 / h },
    ))
}

/// Tightens every box against `depth`; boxes without a plateau are kept.
pub fn refine_layout(layout: &ValidatedLayout, depth: &DepthMap) -> ValidatedLayout {
    let boxes: Vec<BoundingBox> = layout
        .instances()
        .iter()
        .map(|inst| match refine_box(&inst.bbox, depth) {
            Ok(b) => b,
            Err(e) => {
                log::warn!("instance {}: {e}; keeping original box", inst.id);
                inst.bbox
            }
        })
        .collect();
    layout
        .with_boxes(&boxes)
        .expect("refined boxes stay inside their valid originals")
}
