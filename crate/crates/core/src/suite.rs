//! Deterministic synthetic layout suites.

use std::ops::RangeInclusive;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::layout::{box_iou, validate_layout, BoundingBox, Instance, Layout, ValidatedLayout};
use crate::tokens::AttributeVocab;

const NOUNS: [&str; 12] = [
    "cup", "car", "dog", "cat", "bench", "vase", "bus", "apple", "clock", "chair", "bird", "kite",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteOptions {
    pub min_side: f64,
    pub max_side: f64,
    pub max_pairwise_iou: f64,
    /// Forbid any positive-area overlap between boxes.
    pub disjoint: bool,
    /// Minimum gap between two boxes that share an attribute.
    pub same_attribute_gap: f64,
    /// Attribute named by the global text for the background; never given to an instance.
    pub background_attribute: Option<String>,
    pub vocab: AttributeVocab,
}

impl Default for SuiteOptions {
    fn default() -> Self {
        Self {
            min_side: 0.2,
            max_side: 0.5,
            max_pairwise_iou: 0.3,
            disjoint: false,
            same_attribute_gap: 0.1,
            background_attribute: Some("white".to_owned()),
            vocab: AttributeVocab::default(),
        }
    }
}

impl SuiteOptions {
    pub fn disjoint() -> Self {
        Self {
            max_side: 0.35,
            disjoint: true,
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum SuiteError {
    #[error("suite count must be at least 1")]
    EmptySuite,
    #[error("instance range {lo}..={hi} must lie within 2..=6")]
    BadRange { lo: usize, hi: usize },
    #[error("need at least two instance attributes besides the background")]
    VocabularyTooSmall,
}

fn separated(a: &BoundingBox, b: &BoundingBox, gap: f64) -> bool {
    let dx = (b.x0 - a.x1).max(a.x0 - b.x1);
    let dy = (b.y0 - a.y1).max(a.y0 - b.y1);
    dx >= gap || dy >= gap
}

pub fn generate_suite(
    count: usize,
    n_range: RangeInclusive<usize>,
    seed: u64,
    opts: &SuiteOptions,
) -> Result<Vec<ValidatedLayout>, SuiteError> {
    if count == 0 {
        return Err(SuiteError::EmptySuite);
    }
    let (lo, hi) = (*n_range.start(), *n_range.end());
    if lo < 2 || hi > 6 || lo > hi {
        return Err(SuiteError::BadRange { lo, hi });
    }
    let colours: Vec<&str> = opts
        .vocab
        .words()
        .iter()
        .map(String::as_str)
        .filter(|w| opts.background_attribute.as_deref() != Some(*w))
        .collect();
    if colours.len() < 2 {
        return Err(SuiteError::VocabularyTooSmall);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok((0..count)
        .map(|_| {
            let n = rng.random_range(lo..=hi);
            generate_layout(&mut rng, n, &colours, opts)
        })
        .collect())
}

fn generate_layout(
    rng: &mut ChaCha8Rng,
    n: usize,
    colours: &[&str],
    opts: &SuiteOptions,
) -> ValidatedLayout {
    loop {
        let attrs: Vec<&str> = (0..n).map(|_| *colours.choose(rng).expect("non-empty")).collect();
        if attrs.iter().all(|a| *a == attrs[0]) {
            continue;
        }
        let Some(boxes) = place_boxes(rng, &attrs, opts) else {
            continue;
        };
        let nouns: Vec<&str> = (0..n).map(|_| *NOUNS.choose(rng).expect("non-empty")).collect();
        let instances = boxes
            .iter()
            .zip(&attrs)
            .zip(&nouns)
            .map(|((b, a), noun)| Instance::new(format!("a {a} {noun}"), *b, Some(a)))
            .collect();
        let mut global = format!(
            "a photo of {}",
            nouns
                .iter()
                .map(|n| format!("a {n}"))
                .collect::<Vec<_>>()
                .join(" and ")
        );
        if let Some(bg) = &opts.background_attribute {
            global.push_str(&format!(" on a {bg} background"));
        }
        return validate_layout(Layout::new(global, instances))
            .expect("generated layouts are valid by construction");
    }
}

fn place_boxes(rng: &mut ChaCha8Rng, attrs: &[&str], opts: &SuiteOptions) -> Option<Vec<BoundingBox>> {
    const TRIES: usize = 200;
    let mut boxes: Vec<BoundingBox> = Vec::with_capacity(attrs.len());
    for (i, attr) in attrs.iter().enumerate() {
        let placed = (0..TRIES).find_map(|_| {
            let w = rng.random_range(opts.min_side..=opts.max_side);
            let h = rng.random_range(opts.min_side..=opts.max_side);
            let x0 = rng.random_range(0.0..=1.0 - w);
            let y0 = rng.random_range(0.0..=1.0 - h);
            let b = BoundingBox::new(x0, y0, x0 + w, y0 + h);
            let fits = boxes.iter().zip(attrs).all(|(o, oa)| {
                let overlap_ok = if opts.disjoint {
                    b.intersection(o).is_none()
                } else {
                    box_iou(&b, o) <= opts.max_pairwise_iou
                };
                overlap_ok && (oa != attr || separated(&b, o, opts.same_attribute_gap))
            });
            fits.then_some(b)
        });
        boxes.push(placed?);
        debug_assert_eq!(boxes.len(), i + 1);
    }
    Some(boxes)
}
