//! Text/image token sequence, segment bookkeeping and toy embeddings.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::TokenError;
use crate::layout::{RegionGrid, ValidatedLayout};

pub const DEFAULT_DIM: usize = 32;
pub const DEFAULT_SEG_LEN: usize = 32;

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Token {
    Word(String),
    Pad,
}

impl Token {
    pub fn is_pad(&self) -> bool {
        matches!(self, Token::Pad)
    }
}

/// Lowercased whitespace split, truncated and padded to exactly `max_len`.
pub fn tokenize(text: &str, max_len: usize) -> Vec<Token> {
    let mut out: Vec<Token> = text
        .split_whitespace()
        .take(max_len)
        .map(|w| Token::Word(w.to_lowercase()))
        .collect();
    out.resize(max_len, Token::Pad);
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SegmentKind {
    Global,
    Instance(u32),
}

/// Tag of one text position.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TextTag {
    Global,
    Instance(u32),
    Pad,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Segment {
    pub kind: SegmentKind,
    pub start: usize,
    pub len: usize,
    /// Number of non-PAD tokens at the front of the segment.
    pub used: usize,
}

impl Segment {
    pub fn range(&self) -> std::ops::Range<usize> {
        self.start..self.start + self.len
    }

    pub fn used_range(&self) -> std::ops::Range<usize> {
        self.start..self.start + self.used
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SegmentMap {
    pub seg_len: usize,
    pub text_len: usize,
    pub image_len: usize,
    pub grid_h: usize,
    pub grid_w: usize,
    pub n_instances: usize,
    pub tokens: Vec<Token>,
    pub tags: Vec<TextTag>,
    pub owner: Vec<u32>,
    pub segments: Vec<Segment>,
}

impl SegmentMap {
    /// Side of the joint sequence: text first, then image tokens row-major.
    pub fn side(&self) -> usize {
        self.text_len + self.image_len
    }

    pub fn is_pad(&self, pos: usize) -> bool {
        pos < self.text_len && self.tags[pos] == TextTag::Pad
    }

    pub fn image_owner(&self, pos: usize) -> Option<u32> {
        (pos >= self.text_len).then(|| self.owner[pos - self.text_len])
    }

    pub fn segment(&self, kind: SegmentKind) -> &Segment {
        match kind {
            SegmentKind::Global => &self.segments[0],
            SegmentKind::Instance(i) => &self.segments[i as usize],
        }
    }

    /// Mask of non-PAD positions over the joint sequence.
    pub fn active(&self) -> Vec<bool> {
        (0..self.side()).map(|p| !self.is_pad(p)).collect()
    }
}

pub fn build_segment_map(
    layout: &ValidatedLayout,
    region: &RegionGrid,
    seg_len: usize,
) -> Result<SegmentMap, TokenError> {
    if seg_len == 0 {
        return Err(TokenError::ZeroSegmentLength);
    }
    let n = layout.n();
    let texts = std::iter::once((SegmentKind::Global, layout.global_text())).chain(
        layout
            .instances()
            .iter()
            .map(|i| (SegmentKind::Instance(i.id), i.text.as_str())),
    );

    let mut tokens = Vec::with_capacity((n + 1) * seg_len);
    let mut tags = Vec::with_capacity((n + 1) * seg_len);
    let mut segments = Vec::with_capacity(n + 1);
    for (kind, text) in texts {
        let start = tokens.len();
        let toks = tokenize(text, seg_len);
        let used = toks.iter().filter(|t| !t.is_pad()).count();
        for t in &toks {
            tags.push(match (t.is_pad(), kind) {
                (true, _) => TextTag::Pad,
                (false, SegmentKind::Global) => TextTag::Global,
                (false, SegmentKind::Instance(i)) => TextTag::Instance(i),
            });
        }
        tokens.extend(toks);
        segments.push(Segment {
            kind,
            start,
            len: seg_len,
            used,
        });
    }

    Ok(SegmentMap {
        seg_len,
        text_len: tokens.len(),
        image_len: region.grid_h * region.grid_w,
        grid_h: region.grid_h,
        grid_w: region.grid_w,
        n_instances: n,
        tokens,
        tags,
        owner: region.owner.clone(),
        segments,
    })
}

/// Closed set of attribute words; each owns one slot of the attribute sub-vector.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttributeVocab {
    words: Vec<String>,
}

impl Default for AttributeVocab {
    fn default() -> Self {
        Self::new(
            ["red", "orange", "yellow", "green", "blue", "purple", "black", "white"]
                .map(String::from)
                .to_vec(),
        )
    }
}

impl AttributeVocab {
    /// Words are lowercased; duplicates keep their first slot.
    pub fn new(words: Vec<String>) -> Self {
        let mut out: Vec<String> = Vec::with_capacity(words.len());
        for w in words {
            let w = w.to_lowercase();
            if !out.contains(&w) {
                out.push(w);
            }
        }
        Self { words: out }
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn index_of(&self, word: &str) -> Option<usize> {
        self.words.iter().position(|w| w.eq_ignore_ascii_case(word))
    }

    pub fn word(&self, idx: usize) -> &str {
        &self.words[idx]
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    /// First vocabulary word appearing in `text`.
    pub fn find_in(&self, text: &str) -> Option<usize> {
        text.split_whitespace().find_map(|w| self.index_of(w))
    }
}

/// Row-major `rows x dim` matrix of token states.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingBlock {
    pub rows: usize,
    pub dim: usize,
    pub data: Vec<f64>,
}

impl EmbeddingBlock {
    pub fn zeros(rows: usize, dim: usize) -> Self {
        Self {
            rows,
            dim,
            data: vec![0.0; rows * dim],
        }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let dim = rows.first().map_or(0, Vec::len);
        assert!(rows.iter().all(|r| r.len() == dim), "ragged rows");
        Self {
            rows: rows.len(),
            dim,
            data: rows.concat(),
        }
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

const IMAGE_TOKEN: &str = "<patch>";

/// Content dims come first, the attribute sub-vector occupies the last `vocab.len()` dims.
pub fn embed(
    seg: &SegmentMap,
    vocab: &AttributeVocab,
    dim: usize,
    seed: u64,
) -> Result<EmbeddingBlock, TokenError> {
    if dim <= vocab.len() {
        return Err(TokenError::DimTooSmall {
            dim,
            attributes: vocab.len(),
        });
    }
    let content = dim - vocab.len();
    let mut block = EmbeddingBlock::zeros(seg.side(), dim);
    for pos in 0..seg.side() {
        let word = match seg.tokens.get(pos) {
            Some(Token::Pad) => continue,
            Some(Token::Word(w)) => w.as_str(),
            None => IMAGE_TOKEN,
        };
        let row = block.row_mut(pos);
        let mut rng = keyed_rng(word, pos, seed);
        for v in &mut row[..content] {
            *v = rng.random_range(-1.0..=1.0);
        }
        if pos < seg.text_len {
            if let Some(a) = vocab.index_of(word) {
                row[content + a] = 1.0;
            }
        }
    }
    Ok(block)
}

fn keyed_rng(word: &str, pos: usize, seed: u64) -> ChaCha8Rng {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update((pos as u64).to_le_bytes());
    h.update(word.as_bytes());
    let digest: [u8; 32] = h.finalize().into();
    ChaCha8Rng::from_seed(digest)
}
