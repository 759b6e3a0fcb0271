//! Instance verdicts, MIoU/ISR/SR aggregation and suite evaluation.

use std::collections::{BTreeMap, VecDeque};
use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::attention::AttributeMap;
use crate::error::{Error, Result};
use crate::layout::{box_iou, patch_center, BoundingBox, ValidatedLayout};
use crate::mask::MaskConfig;
use crate::pipeline::{run_layout, PipelineSettings};

/// Instance counts reported as separate levels.
pub const LEVELS: std::ops::RangeInclusive<usize> = 2..=6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InstanceVerdict {
    pub iou: f64,
    pub position_ok: bool,
    pub attribute_ok: bool,
    pub success: bool,
}

impl InstanceVerdict {
    pub fn new(iou: f64, attribute_ok: bool, iou_threshold: f64) -> Self {
        let position_ok = iou >= iou_threshold;
        Self {
            iou,
            position_ok,
            attribute_ok,
            success: position_ok && attribute_ok,
        }
    }
}

/// Patch-index bounds `[r0, c0, r1, c1]` (inclusive) of a token set.
type Extent = [usize; 4];

fn extent_to_box(e: Extent, grid_h: usize, grid_w: usize) -> BoundingBox {
    let (h, w) = (grid_h as f64, grid_w as f64);
    BoundingBox::new(
        e[1] as f64 / w,
        e[0] as f64 / h,
        (e[3] + 1) as f64 / w,
        (e[2] + 1) as f64 / h,
    )
}

/// Largest 4-connected component of `target` tokens touching the patches whose
/// centres lie in `footprint`; ties keep the first component in row-major order.
pub fn predicted_region(
    decoded: &AttributeMap,
    target: usize,
    footprint: &BoundingBox,
) -> Option<BoundingBox> {
    let (gh, gw) = (decoded.grid_h, decoded.grid_w);
    let is_target = |p: usize| decoded.labels[p] == Some(target);
    let in_footprint =
        |p: usize| footprint.contains(patch_center(p % gw, gw), patch_center(p / gw, gh));

    let mut seen = vec![false; gh * gw];
    let mut best: Option<(usize, Extent)> = None;
    let mut queue = VecDeque::new();
    for start in 0..gh * gw {
        if seen[start] || !is_target(start) {
            continue;
        }
        seen[start] = true;
        queue.push_back(start);
        let (mut size, mut touches) = (0, false);
        let mut ext = [usize::MAX, usize::MAX, 0, 0];
        while let Some(p) = queue.pop_front() {
            let (r, c) = (p / gw, p % gw);
            size += 1;
            touches |= in_footprint(p);
            ext = [ext[0].min(r), ext[1].min(c), ext[2].max(r), ext[3].max(c)];
            let neighbours = [
                (r > 0).then(|| p - gw),
                (r + 1 < gh).then(|| p + gw),
                (c > 0).then(|| p - 1),
                (c + 1 < gw).then(|| p + 1),
            ];
            for q in neighbours.into_iter().flatten() {
                if !seen[q] && is_target(q) {
                    seen[q] = true;
                    queue.push_back(q);
                }
            }
        }
        if touches && best.is_none_or(|(s, _)| size > s) {
            best = Some((size, ext));
        }
    }
    best.map(|(_, e)| extent_to_box(e, gh, gw))
}

/// Most frequent decoded label over the patches inside `region`; `None` on a tie.
pub fn majority_label(decoded: &AttributeMap, region: &BoundingBox) -> Option<Option<usize>> {
    let (gh, gw) = (decoded.grid_h, decoded.grid_w);
    let mut counts: BTreeMap<Option<usize>, usize> = BTreeMap::new();
    for r in 0..gh {
        for c in 0..gw {
            if region.contains(patch_center(c, gw), patch_center(r, gh)) {
                *counts.entry(decoded.get(r, c)).or_default() += 1;
            }
        }
    }
    let top = *counts.values().max()?;
    let mut winners = counts.iter().filter(|(_, &n)| n == top);
    match (winners.next(), winners.next()) {
        (Some((&label, _)), None) => Some(label),
        _ => None,
    }
}

/// Verdict for one instance against its target box and attribute.
pub fn judge_instance(
    decoded: &AttributeMap,
    target: usize,
    target_box: &BoundingBox,
    iou_threshold: f64,
) -> InstanceVerdict {
    match predicted_region(decoded, target, target_box) {
        None => InstanceVerdict::new(0.0, false, iou_threshold),
        Some(pred) => InstanceVerdict::new(
            box_iou(&pred, target_box),
            majority_label(decoded, &pred) == Some(Some(target)),
            iou_threshold,
        ),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayoutResult {
    pub layout_id: usize,
    pub n: usize,
    pub verdicts: Vec<InstanceVerdict>,
}

impl LayoutResult {
    pub fn all_succeed(&self) -> bool {
        self.verdicts.iter().all(|v| v.success)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub isr: f64,
    pub miou: f64,
    pub sr: f64,
    pub instances: usize,
    pub layouts: usize,
}

impl Metrics {
    pub fn from_layouts<'a>(layouts: impl IntoIterator<Item = &'a LayoutResult>) -> Option<Self> {
        let (mut inst, mut ok, mut iou, mut lay, mut all_ok) = (0usize, 0usize, 0.0, 0usize, 0usize);
        for l in layouts {
            lay += 1;
            all_ok += usize::from(l.all_succeed());
            for v in &l.verdicts {
                inst += 1;
                ok += usize::from(v.success);
                iou += v.iou;
            }
        }
        (inst > 0).then(|| Metrics {
            isr: ok as f64 / inst as f64,
            miou: iou / inst as f64,
            sr: all_ok as f64 / lay as f64,
            instances: inst,
            layouts: lay,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub config: String,
    pub mask: MaskConfig,
    pub overall: Metrics,
    /// Keyed by instance count.
    pub levels: BTreeMap<usize, Metrics>,
    pub layouts: Vec<LayoutResult>,
    pub attribute_check: String,
}

const ATTRIBUTE_CHECK: &str =
    "proxy: unique most frequent decoded attribute inside the predicted box must equal the target";

impl EvalReport {
    /// Aggregates stored verdicts; layouts are ordered by id first.
    pub fn from_results(config: &str, mask: MaskConfig, mut layouts: Vec<LayoutResult>) -> Result<Self> {
        layouts.sort_by_key(|l| l.layout_id);
        let overall = Metrics::from_layouts(&layouts).ok_or(Error::EmptySuite)?;
        let mut by_n: BTreeMap<usize, Vec<&LayoutResult>> = BTreeMap::new();
        for l in &layouts {
            by_n.entry(l.n).or_default().push(l);
        }
        let levels = by_n
            .into_iter()
            .filter_map(|(n, ls)| Some((n, Metrics::from_layouts(ls)?)))
            .collect();
        Ok(Self {
            config: config.to_owned(),
            mask,
            overall,
            levels,
            layouts,
            attribute_check: ATTRIBUTE_CHECK.to_owned(),
        })
    }

    pub fn csv_header() -> String {
        let mut cols = vec!["config".to_owned()];
        for metric in ["ISR", "MIoU"] {
            cols.extend(LEVELS.map(|n| format!("{metric}_L{n}")));
            cols.push(format!("{metric}_AVG"));
        }
        cols.push("SR".to_owned());
        cols.join(",")
    }

    pub fn csv_row(&self) -> String {
        let mut row = self.config.clone();
        for pick in [|m: &Metrics| m.isr, |m: &Metrics| m.miou] {
            for n in LEVELS {
                row.push(',');
                if let Some(m) = self.levels.get(&n) {
                    let _ = write!(row, "{:.4}", pick(m));
                }
            }
            let _ = write!(row, ",{:.4}", pick(&self.overall));
        }
        let _ = write!(row, ",{:.4}", self.overall.sr);
        row
    }

    pub fn to_csv(reports: &[&EvalReport]) -> String {
        let mut out = Self::csv_header();
        out.push('\n');
        for r in reports {
            out.push_str(&r.csv_row());
            out.push('\n');
        }
        out
    }
}

/// Seed of the `index`-th layout of a suite run.
pub fn layout_seed(seed: u64, index: usize) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15)
        .wrapping_add(index as u64)
}

/// Runs every layout through the pipeline on the current rayon pool.
pub fn evaluate_suite(
    suite: &[ValidatedLayout],
    settings: &PipelineSettings,
    name: &str,
    cfg: &MaskConfig,
    seed: u64,
) -> Result<EvalReport> {
    if suite.is_empty() {
        return Err(Error::EmptySuite);
    }
    let results = suite
        .par_iter()
        .enumerate()
        .map(|(i, layout)| {
            let run = run_layout(layout, settings, cfg, layout_seed(seed, i), false)?;
            Ok(LayoutResult {
                layout_id: i,
                n: layout.n(),
                verdicts: run.verdicts,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    EvalReport::from_results(name, *cfg, results)
}
