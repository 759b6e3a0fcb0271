//! Layout-driven joint-attention control for multi-instance generation.
//!
//! The crate builds the boolean joint-attention mask that binds each instance's
//! text to its box, runs a small masked-attention sampler in which attribute
//! leakage becomes observable, and scores the result with MIoU, ISR and SR.

pub mod attention;
pub mod depth;
pub mod dump;
pub mod error;
pub mod eval;
pub mod layout;
pub mod mask;
pub mod pgm;
pub mod pipeline;
pub mod suite;
pub mod tokens;

pub use attention::{
    attention_weights, decode_attributes, masked_attention, run_sampler, AttentionParams,
    AttributeMap, SamplerState,
};
pub use depth::{layout_to_depth, refine_layout, DepthMap};
pub use error::{Error, Result};
pub use eval::{evaluate_suite, predicted_region, EvalReport, InstanceVerdict};
pub use layout::{box_iou, rasterize, validate_layout, BoundingBox, Instance, Layout, RegionGrid, ValidatedLayout};
pub use mask::{build_mask, gamma_for_resolution, phase_of, JointAttentionMask, MaskConfig, Phase, PhaseSchedule};
pub use pipeline::{run_layout, PipelineSettings};
pub use suite::{generate_suite, SuiteOptions};
pub use tokens::{build_segment_map, embed, tokenize, AttributeVocab, EmbeddingBlock, SegmentMap, Token};
