//! Brute-force oracles and random case generators shared by the integration tests.
#![allow(dead_code)]

use layoutjoint::layout::{validate_layout, BoundingBox, Instance, Layout, ValidatedLayout};
use layoutjoint::mask::MaskConfig;
use rand::seq::IndexedRandom;
use rand::Rng;

pub const WORDS: [&str; 12] = [
    "a", "the", "small", "cup", "car", "red", "blue", "green", "white", "on", "dog", "shiny",
];

/// Random layout: `1..=max_n` boxes anywhere, overlaps and sub-patch boxes allowed.
pub fn random_layout(rng: &mut impl Rng, max_n: usize) -> ValidatedLayout {
    let n = rng.random_range(1..=max_n);
    let text = |rng: &mut dyn rand::RngCore, min: usize| {
        let len = rng.random_range(min..=10);
        (0..len)
            .map(|_| *WORDS.choose(rng).unwrap())
            .collect::<Vec<_>>()
            .join(" ")
    };
    let instances = (0..n)
        .map(|_| {
            let x0 = rng.random_range(0.0..0.999);
            let y0 = rng.random_range(0.0..0.999);
            let x1 = rng.random_range(x0 + 1e-3..=1.0);
            let y1 = rng.random_range(y0 + 1e-3..=1.0);
            let bbox = BoundingBox::new(x0, y0, x1, y1);
            Instance::new(text(rng, 1), bbox, None)
        })
        .collect();
    let global = text(rng, 1);
    validate_layout(Layout::new(global, instances)).unwrap()
}

/// Owner of every patch by direct search over all boxes.
pub fn oracle_owner(layout: &ValidatedLayout, gh: usize, gw: usize) -> Vec<u32> {
    let mut owner = Vec::with_capacity(gh * gw);
    for r in 0..gh {
        for c in 0..gw {
            let (x, y) = ((c as f64 + 0.5) / gw as f64, (r as f64 + 0.5) / gh as f64);
            let best = layout
                .instances()
                .iter()
                .filter(|i| x >= i.bbox.x0 && x < i.bbox.x1 && y >= i.bbox.y0 && y < i.bbox.y1)
                .min_by(|a, b| {
                    let (aa, ab) = ((a.bbox.x1 - a.bbox.x0) * (a.bbox.y1 - a.bbox.y0), (b.bbox.x1 - b.bbox.x0) * (b.bbox.y1 - b.bbox.y0));
                    aa.partial_cmp(&ab).unwrap().then(a.id.cmp(&b.id))
                });
            owner.push(best.map_or(0, |i| i.id));
        }
    }
    owner
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Kind {
    Pad,
    Global,
    Inst(u32),
    Img(u32),
}

/// Token kinds of the joint sequence, derived from the raw layout.
pub fn oracle_kinds(layout: &ValidatedLayout, gh: usize, gw: usize, seg_len: usize) -> Vec<Kind> {
    let mut kinds = Vec::new();
    let words = |t: &str| t.split_whitespace().count().min(seg_len);
    let g = words(layout.global_text());
    kinds.extend((0..seg_len).map(|p| if p < g { Kind::Global } else { Kind::Pad }));
    for inst in layout.instances() {
        let w = words(&inst.text);
        kinds.extend((0..seg_len).map(|p| if p < w { Kind::Inst(inst.id) } else { Kind::Pad }));
    }
    kinds.extend(oracle_owner(layout, gh, gw).into_iter().map(Kind::Img));
    kinds
}

/// One cell of the joint mask, straight from the rule table.
pub fn oracle_cell(q: Kind, k: Kind, same: bool, strict: bool, cfg: &MaskConfig) -> bool {
    use Kind::*;
    if q == Pad || k == Pad {
        return false;
    }
    if same || !cfg.detail_renderer {
        return true;
    }
    match (q, k) {
        (Img(a), Img(b)) => !cfg.i2i_control || !strict || a == b,
        (Img(a), Global) => !cfg.i2t_control || a == 0 || !strict,
        (Img(a), Inst(j)) => !cfg.i2t_control || (a != 0 && a == j),
        (Inst(i), Img(o)) => !cfg.t2i_control || o == i,
        (Inst(i), Inst(j)) => !cfg.t2t_control || i == j,
        (Inst(_), Global) => !cfg.t2t_control,
        (Global, _) => true,
        (Pad, _) | (_, Pad) => unreachable!(),
    }
}

pub fn oracle_mask(kinds: &[Kind], strict: bool, cfg: &MaskConfig) -> Vec<bool> {
    let s = kinds.len();
    let mut cells = Vec::with_capacity(s * s);
    for (qi, &q) in kinds.iter().enumerate() {
        for (ki, &k) in kinds.iter().enumerate() {
            cells.push(oracle_cell(q, k, qi == ki, strict, cfg));
        }
    }
    cells
}

/// Dense reference attention: full logit matrix, then a softmax restricted to the
/// permitted keys of each row. Returns `(output, weights[h][q*s+k])`.
pub type Mats<'a> = [(&'a [f64], &'a [f64], &'a [f64]); 2];

pub fn oracle_attention(
    x: &[Vec<f64>],
    permitted: &[Vec<bool>],
    active: &[bool],
    text_len: usize,
    heads: usize,
    mats: Mats<'_>,
) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let s = x.len();
    let d = x[0].len();
    let hd = d / heads;
    let apply = |m: &[f64], v: &[f64]| -> Vec<f64> {
        (0..d).map(|i| (0..d).map(|j| m[i * d + j] * v[j]).sum()).collect()
    };
    let stream = |r: usize| if r < text_len { mats[0] } else { mats[1] };
    let q: Vec<Vec<f64>> = (0..s).map(|r| apply(stream(r).0, &x[r])).collect();
    let k: Vec<Vec<f64>> = (0..s).map(|r| apply(stream(r).1, &x[r])).collect();
    let v: Vec<Vec<f64>> = (0..s).map(|r| apply(stream(r).2, &x[r])).collect();

    let mut out = vec![vec![0.0; d]; s];
    let mut weights = vec![vec![0.0; s * s]; heads];
    for h in 0..heads {
        let lo = h * hd;
        for a in 0..s {
            if !active[a] {
                continue;
            }
            let logits: Vec<f64> = (0..s)
                .map(|b| (lo..lo + hd).map(|t| q[a][t] * k[b][t]).sum::<f64>() / (hd as f64).sqrt())
                .collect();
            let allowed: Vec<usize> = (0..s).filter(|&b| permitted[a][b]).collect();
            let m = allowed.iter().map(|&b| logits[b]).fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = allowed.iter().map(|&b| (logits[b] - m).exp()).sum();
            for &b in &allowed {
                let w = (logits[b] - m).exp() / z;
                weights[h][a * s + b] = w;
                for t in lo..lo + hd {
                    out[a][t] += w * v[b][t];
                }
            }
        }
    }
    (out, weights)
}

/// (size, [r0, c0, r1, c1], cells) of one component.
pub type Component = (usize, [usize; 4], Vec<(usize, usize)>);

/// Every 4-connected component of cells where `on` holds, in row-major order of first cell.
pub fn components(
    h: usize,
    w: usize,
    on: impl Fn(usize, usize) -> bool,
) -> Vec<Component> {
    let mut label = vec![usize::MAX; h * w];
    let mut out = Vec::new();
    for r in 0..h {
        for c in 0..w {
            if !on(r, c) || label[r * w + c] != usize::MAX {
                continue;
            }
            let id = out.len();
            let mut stack = vec![(r, c)];
            let mut cells = Vec::new();
            label[r * w + c] = id;
            while let Some((y, x)) = stack.pop() {
                cells.push((y, x));
                let mut nb = Vec::new();
                if y > 0 {
                    nb.push((y - 1, x));
                }
                if y + 1 < h {
                    nb.push((y + 1, x));
                }
                if x > 0 {
                    nb.push((y, x - 1));
                }
                if x + 1 < w {
                    nb.push((y, x + 1));
                }
                for (yy, xx) in nb {
                    if on(yy, xx) && label[yy * w + xx] == usize::MAX {
                        label[yy * w + xx] = id;
                        stack.push((yy, xx));
                    }
                }
            }
            let r0 = cells.iter().map(|p| p.0).min().unwrap();
            let r1 = cells.iter().map(|p| p.0).max().unwrap();
            let c0 = cells.iter().map(|p| p.1).min().unwrap();
            let c1 = cells.iter().map(|p| p.1).max().unwrap();
            out.push((cells.len(), [r0, c0, r1, c1], cells));
        }
    }
    out
}
