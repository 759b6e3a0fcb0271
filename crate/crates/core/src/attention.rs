//! Masked joint attention and the toy multi-step sampler.

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::AttentionError;
use crate::mask::{build_mask, JointAttentionMask, MaskConfig, PhaseSchedule};
use crate::tokens::{AttributeVocab, EmbeddingBlock, SegmentMap};

/// Residual weight of the incoming state in each sampler step.
pub const RESIDUAL: f64 = 0.5;
pub const DEFAULT_ATTRIBUTE_GAIN: f64 = 1000.0;

/// Projection setup for the two token streams.
///
/// Each stream has its own Q/K/V. The content block of every projection is a
/// seeded random orthogonal matrix. On the attribute dims, image queries and
/// all keys scale the one-hot sub-vector by `attribute_gain`, values copy it,
/// and text queries ignore it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttentionParams {
    pub dim: usize,
    pub heads: usize,
    pub attribute_dims: usize,
    pub attribute_gain: f64,
    pub seed_q: u64,
    pub seed_k: u64,
    pub seed_v: u64,
}

impl AttentionParams {
    pub fn new(dim: usize, heads: usize, attribute_dims: usize, seed: u64) -> Self {
        Self {
            dim,
            heads,
            attribute_dims,
            attribute_gain: DEFAULT_ATTRIBUTE_GAIN,
            seed_q: seed,
            seed_k: seed.wrapping_add(1),
            seed_v: seed.wrapping_add(2),
        }
    }

    pub fn for_vocab(dim: usize, vocab: &AttributeVocab, seed: u64) -> Self {
        Self::new(dim, 1, vocab.len(), seed)
    }

    pub fn head_dim(&self) -> usize {
        self.dim / self.heads
    }

    pub fn check(&self) -> Result<(), AttentionError> {
        if self.heads == 0 || !self.dim.is_multiple_of(self.heads) {
            return Err(AttentionError::HeadsDoNotDivide {
                dim: self.dim,
                heads: self.heads,
            });
        }
        if self.attribute_dims > self.dim {
            return Err(AttentionError::AttributeDimsTooLarge {
                dim: self.dim,
                attributes: self.attribute_dims,
            });
        }
        Ok(())
    }

    pub fn projections(&self) -> Result<Projections, AttentionError> {
        self.check()?;
        let content = self.dim - self.attribute_dims;
        let g = self.attribute_gain;
        let build = |seed: u64, stream: u64, attr_scale: f64| {
            block_diag(self.dim, &orthogonal(content, seed, stream), attr_scale)
        };
        Ok(Projections {
            dim: self.dim,
            heads: self.heads,
            q: [build(self.seed_q, 0, 0.0), build(self.seed_q, 1, g)],
            k: [build(self.seed_k, 0, g), build(self.seed_k, 1, g)],
            v: [build(self.seed_v, 0, 1.0), build(self.seed_v, 1, 1.0)],
        })
    }
}

/// Random orthogonal `n x n` matrix from the QR factor of a Gaussian draw.
fn orthogonal(n: usize, seed: u64, stream: u64) -> DMatrix<f64> {
    if n == 0 {
        return DMatrix::zeros(0, 0);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    let g = DMatrix::from_fn(n, n, |_, _| StandardNormal.sample(&mut rng));
    let qr = g.qr();
    let (mut q, r) = (qr.q(), qr.r());
    // Fix column signs so the factor is unique.
    for j in 0..n {
        if r[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    q
}

fn block_diag(dim: usize, content: &DMatrix<f64>, attr_scale: f64) -> Vec<f64> {
    let c = content.nrows();
    let mut m = vec![0.0; dim * dim];
    for i in 0..c {
        for j in 0..c {
            m[i * dim + j] = content[(i, j)];
        }
    }
    for i in c..dim {
        m[i * dim + i] = attr_scale;
    }
    m
}

/// Materialized projection matrices; index 0 is the text stream, 1 the image stream.
#[derive(Debug, Clone, PartialEq)]
pub struct Projections {
    dim: usize,
    heads: usize,
    q: [Vec<f64>; 2],
    k: [Vec<f64>; 2],
    v: [Vec<f64>; 2],
}

fn project(w: &[f64], x: &[f64], out: &mut [f64]) {
    let dim = x.len();
    for (j, o) in out.iter_mut().enumerate() {
        *o = w[j * dim..(j + 1) * dim]
            .iter()
            .zip(x)
            .map(|(a, b)| a * b)
            .sum();
    }
}

impl Projections {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn heads(&self) -> usize {
        self.heads
    }

    /// Row-major matrices `(q, k, v)` for `stream` (0 text, 1 image).
    pub fn matrices(&self, stream: usize) -> (&[f64], &[f64], &[f64]) {
        (&self.q[stream], &self.k[stream], &self.v[stream])
    }

    fn qkv(&self, block: &EmbeddingBlock, text_len: usize) -> [EmbeddingBlock; 3] {
        let mut out = [
            EmbeddingBlock::zeros(block.rows, self.dim),
            EmbeddingBlock::zeros(block.rows, self.dim),
            EmbeddingBlock::zeros(block.rows, self.dim),
        ];
        for r in 0..block.rows {
            let s = usize::from(r >= text_len);
            let x = block.row(r);
            project(&self.q[s], x, out[0].row_mut(r));
            project(&self.k[s], x, out[1].row_mut(r));
            project(&self.v[s], x, out[2].row_mut(r));
        }
        out
    }

    fn check(&self, block: &EmbeddingBlock, mask: &JointAttentionMask) -> Result<(), AttentionError> {
        if block.rows != mask.side() {
            return Err(AttentionError::DimensionMismatch(format!(
                "block has {} rows, mask side is {}",
                block.rows,
                mask.side()
            )));
        }
        if block.dim != self.dim {
            return Err(AttentionError::DimensionMismatch(format!(
                "block dim {} vs projection dim {}",
                block.dim, self.dim
            )));
        }
        Ok(())
    }

    /// Runs `visit(query, head, keys, weights)` for every live row and head.
    fn for_each_row(
        &self,
        qkv: &[EmbeddingBlock; 3],
        mask: &JointAttentionMask,
        mut visit: impl FnMut(usize, usize, &[usize], &[f64]),
    ) -> Result<(), AttentionError> {
        let [q, k, _] = qkv;
        let hd = self.dim / self.heads;
        let scale = 1.0 / (hd as f64).sqrt();
        let mut keys = Vec::with_capacity(mask.side());
        let mut w = Vec::with_capacity(mask.side());
        for row in 0..mask.side() {
            if !mask.is_active(row) {
                continue;
            }
            keys.clear();
            keys.extend(
                mask.row(row)
                    .iter()
                    .enumerate()
                    .filter_map(|(j, &ok)| ok.then_some(j)),
            );
            if keys.is_empty() {
                return Err(AttentionError::EmptyRow(row));
            }
            for h in 0..self.heads {
                let span = h * hd..(h + 1) * hd;
                let qv = &q.row(row)[span.clone()];
                w.clear();
                w.extend(keys.iter().map(|&j| {
                    let kv = &k.row(j)[span.clone()];
                    qv.iter().zip(kv).map(|(a, b)| a * b).sum::<f64>() * scale
                }));
                let max = w.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let mut total = 0.0;
                for x in w.iter_mut() {
                    *x = (*x - max).exp();
                    total += *x;
                }
                for x in w.iter_mut() {
                    *x /= total;
                }
                visit(row, h, &keys, &w);
            }
        }
        Ok(())
    }

    /// Masked scaled dot-product attention; PAD rows come out as zero.
    pub fn attend(
        &self,
        block: &EmbeddingBlock,
        mask: &JointAttentionMask,
    ) -> Result<EmbeddingBlock, AttentionError> {
        self.check(block, mask)?;
        let qkv = self.qkv(block, mask.text_len());
        let v = &qkv[2];
        let hd = self.dim / self.heads;
        let mut out = EmbeddingBlock::zeros(block.rows, self.dim);
        self.for_each_row(&qkv, mask, |row, h, keys, w| {
            let dst = &mut out.row_mut(row)[h * hd..(h + 1) * hd];
            for (&j, &wj) in keys.iter().zip(w) {
                for (d, s) in dst.iter_mut().zip(&v.row(j)[h * hd..(h + 1) * hd]) {
                    *d += wj * s;
                }
            }
        })?;
        Ok(out)
    }

    /// Dense per-head weight matrices, `weights[h][q * side + k]`.
    pub fn weights(
        &self,
        block: &EmbeddingBlock,
        mask: &JointAttentionMask,
    ) -> Result<Vec<Vec<f64>>, AttentionError> {
        self.check(block, mask)?;
        let qkv = self.qkv(block, mask.text_len());
        let side = mask.side();
        let mut out = vec![vec![0.0; side * side]; self.heads];
        self.for_each_row(&qkv, mask, |row, h, keys, w| {
            for (&j, &wj) in keys.iter().zip(w) {
                out[h][row * side + j] = wj;
            }
        })?;
        Ok(out)
    }
}

pub fn masked_attention(
    block: &EmbeddingBlock,
    mask: &JointAttentionMask,
    params: &AttentionParams,
) -> Result<EmbeddingBlock, AttentionError> {
    params.projections()?.attend(block, mask)
}

pub fn attention_weights(
    block: &EmbeddingBlock,
    mask: &JointAttentionMask,
    params: &AttentionParams,
) -> Result<Vec<Vec<f64>>, AttentionError> {
    params.projections()?.weights(block, mask)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SamplerState {
    /// Number of steps applied so far.
    pub step: usize,
    pub block: EmbeddingBlock,
    /// State after each step when requested; `history[t]` follows step `t`.
    pub history: Option<Vec<EmbeddingBlock>>,
}

/// One sampler update: `RESIDUAL * x + (1 - RESIDUAL) * attn(x)` on live rows.
pub fn sampler_step(
    block: &EmbeddingBlock,
    mask: &JointAttentionMask,
    proj: &Projections,
) -> Result<EmbeddingBlock, AttentionError> {
    let mut out = proj.attend(block, mask)?;
    for r in 0..out.rows {
        let live = mask.is_active(r);
        for (o, &x) in out.row_mut(r).iter_mut().zip(block.row(r)) {
            *o = if live {
                RESIDUAL * x + (1.0 - RESIDUAL) * *o
            } else {
                0.0
            };
        }
    }
    Ok(out)
}

pub fn run_sampler(
    seg: &SegmentMap,
    init: &EmbeddingBlock,
    sched: &PhaseSchedule,
    cfg: &MaskConfig,
    params: &AttentionParams,
    keep_history: bool,
) -> Result<SamplerState, AttentionError> {
    let proj = params.projections()?;
    let mut state = SamplerState {
        step: 0,
        block: init.clone(),
        history: keep_history.then(Vec::new),
    };
    for t in 0..sched.total_steps() {
        let mask = build_mask(seg, sched, t, cfg)?;
        state.block = sampler_step(&state.block, &mask, &proj)?;
        state.step = t + 1;
        if let Some(h) = state.history.as_mut() {
            h.push(state.block.clone());
        }
    }
    Ok(state)
}

/// Per-image-token decoded attribute index, row-major over the patch grid.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AttributeMap {
    pub grid_h: usize,
    pub grid_w: usize,
    pub labels: Vec<Option<usize>>,
}

impl AttributeMap {
    pub fn get(&self, row: usize, col: usize) -> Option<usize> {
        self.labels[row * self.grid_w + col]
    }
}

/// Argmax of each image token's attribute sub-vector; ties (including all-zero) give `None`.
pub fn decode_attributes(
    block: &EmbeddingBlock,
    seg: &SegmentMap,
    vocab: &AttributeVocab,
) -> AttributeMap {
    let a = vocab.len();
    let labels = (seg.text_len..seg.side())
        .map(|r| {
            let sub = &block.row(r)[block.dim - a..];
            let max = sub.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut hits = sub.iter().enumerate().filter(|(_, &v)| v == max);
            match (hits.next(), hits.next()) {
                (Some((i, _)), None) => Some(i),
                _ => None,
            }
        })
        .collect();
    AttributeMap {
        grid_h: seg.grid_h,
        grid_w: seg.grid_w,
        labels,
    }
}
