//! End-to-end run of one layout: tokens, masks, sampler, decoding, verdicts.

use serde::{Deserialize, Serialize};

use crate::attention::{decode_attributes, run_sampler, AttentionParams, AttributeMap, SamplerState};
use crate::depth::{layout_to_depth, refine_layout};
use crate::error::{Error, Result, ScheduleError};
use crate::eval::{judge_instance, InstanceVerdict};
use crate::layout::{rasterize, ValidatedLayout};
use crate::mask::{gamma_for_resolution, MaskConfig, PhaseSchedule, DEFAULT_TOTAL_STEPS};
use crate::tokens::{build_segment_map, embed, AttributeVocab, SegmentMap, DEFAULT_DIM, DEFAULT_SEG_LEN};

pub const DEFAULT_RESOLUTION: u32 = 512;
pub const DEFAULT_PATCH_SIZE: u32 = 32;
pub const DEFAULT_IOU_THRESHOLD: f64 = 0.5;

/// Every knob of a pipeline run except the mask toggles and the seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineSettings {
    pub resolution: u32,
    /// Pixels per patch side; the grid is `ceil(resolution / patch_size)` square.
    pub patch_size: u32,
    pub seg_len: usize,
    pub dim: usize,
    pub heads: usize,
    pub total_steps: usize,
    /// Strict-phase length; derived from the resolution when absent.
    pub gamma: Option<usize>,
    pub vocab: AttributeVocab,
    pub attribute_gain: f64,
    pub iou_threshold: f64,
    pub refine: bool,
}

impl Default for PipelineSettings {
    fn default() -> Self {
        Self {
            resolution: DEFAULT_RESOLUTION,
            patch_size: DEFAULT_PATCH_SIZE,
            seg_len: DEFAULT_SEG_LEN,
            dim: DEFAULT_DIM,
            heads: 1,
            total_steps: DEFAULT_TOTAL_STEPS,
            gamma: None,
            vocab: AttributeVocab::default(),
            attribute_gain: crate::attention::DEFAULT_ATTRIBUTE_GAIN,
            iou_threshold: DEFAULT_IOU_THRESHOLD,
            refine: false,
        }
    }
}

impl PipelineSettings {
    pub fn grid_side(&self) -> usize {
        (self.resolution.div_ceil(self.patch_size.max(1))).max(1) as usize
    }

    pub fn schedule(&self) -> Result<PhaseSchedule, ScheduleError> {
        match self.gamma {
            Some(g) => PhaseSchedule::new(self.total_steps, g),
            None => {
                let g = gamma_for_resolution(self.resolution as i64)?;
                PhaseSchedule::new(self.total_steps, g.min(self.total_steps))
            }
        }
    }

    pub fn attention_params(&self, seed: u64) -> AttentionParams {
        AttentionParams {
            heads: self.heads,
            attribute_gain: self.attribute_gain,
            ..AttentionParams::new(self.dim, 1, self.vocab.len(), seed)
        }
    }

    /// Optional depth refinement followed by rasterization onto the patch grid.
    pub fn prepare(&self, layout: &ValidatedLayout) -> Result<(ValidatedLayout, SegmentMap)> {
        let layout = if self.refine {
            let side = self.resolution as usize;
            refine_layout(layout, &layout_to_depth(layout, side, side)?)
        } else {
            layout.clone()
        };
        let g = self.grid_side();
        let seg = build_segment_map(&layout, &rasterize(&layout, g, g), self.seg_len)?;
        Ok((layout, seg))
    }
}

#[derive(Debug, Clone)]
pub struct LayoutRun {
    /// Layout that drove the masks (refined when requested).
    pub rendered: ValidatedLayout,
    pub seg: SegmentMap,
    pub state: SamplerState,
    pub decoded: AttributeMap,
    pub verdicts: Vec<InstanceVerdict>,
}

/// Target attribute index: the explicit label, else the first vocabulary word of the text.
pub fn target_attribute(vocab: &AttributeVocab, text: &str, attribute: Option<&str>) -> Option<usize> {
    match attribute {
        Some(a) => vocab.index_of(a),
        None => vocab.find_in(text),
    }
}

pub fn run_layout(
    layout: &ValidatedLayout,
    settings: &PipelineSettings,
    cfg: &MaskConfig,
    seed: u64,
    keep_history: bool,
) -> Result<LayoutRun> {
    let targets = layout
        .instances()
        .iter()
        .map(|i| {
            target_attribute(&settings.vocab, &i.text, i.attribute.as_deref())
                .ok_or(Error::MissingAttribute { id: i.id })
        })
        .collect::<Result<Vec<_>>>()?;
    let sched = settings.schedule()?;
    let (rendered, seg) = settings.prepare(layout)?;
    let init = embed(&seg, &settings.vocab, settings.dim, seed)?;
    let params = settings.attention_params(seed);
    let state = run_sampler(&seg, &init, &sched, cfg, &params, keep_history)?;
    let decoded = decode_attributes(&state.block, &seg, &settings.vocab);
    let verdicts = layout
        .instances()
        .iter()
        .zip(targets)
        .map(|(inst, t)| judge_instance(&decoded, t, &inst.bbox, settings.iou_threshold))
        .collect();
    Ok(LayoutRun {
        rendered,
        seg,
        state,
        decoded,
        verdicts,
    })
}
