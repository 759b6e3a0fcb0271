//! On-disk artifacts: mask images with sidecars and binary state dumps.
//!
//! State dump layout (all little-endian):
//!
//! | offset | size | field                         |
//! |--------|------|-------------------------------|
//! | 0      | 8    | magic `LJSTATE1`              |
//! | 8      | 4    | u32 steps applied             |
//! | 12     | 4    | u32 rows (text + image)       |
//! | 16     | 4    | u32 dim                       |
//! | 20     | 4    | u32 text_len                  |
//! | 24     | 8·rows·dim | f64 values, row-major   |

use serde_json::json;

use crate::mask::{JointAttentionMask, MaskConfig, PhaseSchedule};
use crate::pgm::encode_pgm8;
use crate::tokens::{EmbeddingBlock, SegmentKind, SegmentMap};

pub const STATE_MAGIC: &[u8; 8] = b"LJSTATE1";
pub const STATE_HEADER_LEN: usize = 24;

/// S x S image, 255 where attention is permitted.
pub fn mask_to_pgm(mask: &JointAttentionMask) -> Vec<u8> {
    let px: Vec<u8> = mask.cells().iter().map(|&c| if c { 255 } else { 0 }).collect();
    encode_pgm8(mask.side(), mask.side(), &px)
}

/// Sidecar describing the sequence layout behind a mask image.
pub fn mask_sidecar(
    seg: &SegmentMap,
    sched: &PhaseSchedule,
    steps: &[usize],
    cfg: &MaskConfig,
) -> serde_json::Value {
    let segments: Vec<_> = seg
        .segments
        .iter()
        .map(|s| {
            let (kind, instance) = match s.kind {
                SegmentKind::Global => ("global", None),
                SegmentKind::Instance(i) => ("instance", Some(i)),
            };
            json!({"kind": kind, "instance": instance, "start": s.start, "len": s.len, "used": s.used})
        })
        .collect();
    let phases: Vec<_> = steps
        .iter()
        .map(|&t| json!({"step": t, "phase": sched.phase(t).ok()}))
        .collect();
    json!({
        "side": seg.side(),
        "text_len": seg.text_len,
        "image_len": seg.image_len,
        "image_offset": seg.text_len,
        "grid_h": seg.grid_h,
        "grid_w": seg.grid_w,
        "seg_len": seg.seg_len,
        "total_steps": sched.total_steps(),
        "gamma": sched.gamma(),
        "steps": phases,
        "config": cfg,
        "segments": segments,
        "image_owner": seg.owner,
    })
}

pub fn encode_state(block: &EmbeddingBlock, steps: usize, text_len: usize) -> Vec<u8> {
    let mut out = Vec::with_capacity(STATE_HEADER_LEN + block.data.len() * 8);
    out.extend_from_slice(STATE_MAGIC);
    for v in [steps, block.rows, block.dim, text_len] {
        out.extend_from_slice(&(v as u32).to_le_bytes());
    }
    for v in &block.data {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

/// Inverse of [`encode_state`]: `(steps, text_len, block)`.
pub fn decode_state(bytes: &[u8]) -> Option<(usize, usize, EmbeddingBlock)> {
    if bytes.len() < STATE_HEADER_LEN || &bytes[..8] != STATE_MAGIC {
        return None;
    }
    let field = |i: usize| u32::from_le_bytes(bytes[8 + 4 * i..12 + 4 * i].try_into().unwrap()) as usize;
    let (steps, rows, dim, text_len) = (field(0), field(1), field(2), field(3));
    let body = &bytes[STATE_HEADER_LEN..];
    if body.len() != rows * dim * 8 {
        return None;
    }
    let data = body
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Some((steps, text_len, EmbeddingBlock { rows, dim, data }))
}
