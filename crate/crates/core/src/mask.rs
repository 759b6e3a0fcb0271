//! Phase schedule and the layout-driven joint-attention mask.

use serde::{Deserialize, Serialize};

use crate::error::ScheduleError;
use crate::tokens::{SegmentKind, SegmentMap, TextTag};

pub const DEFAULT_TOTAL_STEPS: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Strict,
    Relaxed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PhaseSchedule {
    total_steps: usize,
    gamma: usize,
}

impl PhaseSchedule {
    pub fn new(total_steps: usize, gamma: usize) -> Result<Self, ScheduleError> {
        if gamma > total_steps {
            return Err(ScheduleError::GammaOutOfRange { gamma, total_steps });
        }
        Ok(Self { total_steps, gamma })
    }

    /// Schedule for `resolution` with `gamma` clamped to the step count.
    pub fn for_resolution(resolution: i64, total_steps: usize) -> Result<Self, ScheduleError> {
        let gamma = gamma_for_resolution(resolution)?.min(total_steps);
        Self::new(total_steps, gamma)
    }

    pub fn total_steps(&self) -> usize {
        self.total_steps
    }

    pub fn gamma(&self) -> usize {
        self.gamma
    }

    pub fn phase(&self, step: usize) -> Result<Phase, ScheduleError> {
        phase_of(self, step)
    }

    pub fn strict_steps(&self) -> usize {
        (0..self.total_steps)
            .filter(|&t| self.phase(t) == Ok(Phase::Strict))
            .count()
    }
}

const GAMMA_ANCHORS: [(i64, usize); 3] = [(512, 4), (768, 3), (1024, 2)];

/// Strict-phase length for a resolution: nearest anchor, ties toward the larger gamma.
pub fn gamma_for_resolution(resolution: i64) -> Result<usize, ScheduleError> {
    if resolution <= 0 {
        return Err(ScheduleError::NonPositiveResolution(resolution));
    }
    let (_, gamma) = GAMMA_ANCHORS
        .iter()
        .min_by_key(|(anchor, gamma)| ((resolution - anchor).abs(), std::cmp::Reverse(*gamma)))
        .copied()
        .expect("anchors are non-empty");
    Ok(gamma)
}

pub fn phase_of(sched: &PhaseSchedule, step: usize) -> Result<Phase, ScheduleError> {
    if step >= sched.total_steps {
        return Err(ScheduleError::StepOutOfRange {
            step,
            total_steps: sched.total_steps,
        });
    }
    Ok(if step < sched.gamma {
        Phase::Strict
    } else {
        Phase::Relaxed
    })
}

/// Per-family toggles; `detail_renderer = false` lifts every constraint.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct MaskConfig {
    pub i2i_control: bool,
    pub i2t_control: bool,
    pub t2i_control: bool,
    pub t2t_control: bool,
    pub detail_renderer: bool,
}

impl Default for MaskConfig {
    fn default() -> Self {
        Self {
            i2i_control: true,
            i2t_control: true,
            t2i_control: true,
            t2t_control: true,
            detail_renderer: true,
        }
    }
}

impl MaskConfig {
    /// All 32 flag combinations, bit k of the index driving flag k.
    pub fn all_combinations() -> Vec<MaskConfig> {
        (0u8..32)
            .map(|b| MaskConfig {
                i2i_control: b & 1 != 0,
                i2t_control: b & 2 != 0,
                t2i_control: b & 4 != 0,
                t2t_control: b & 8 != 0,
                detail_renderer: b & 16 != 0,
            })
            .collect()
    }

    /// The six ablation rows: each family removed in turn, the renderer removed, everything on.
    pub fn ablation_grid() -> Vec<(&'static str, MaskConfig)> {
        let all = MaskConfig::default();
        vec![
            ("no_i2i", MaskConfig { i2i_control: false, ..all }),
            ("no_i2t", MaskConfig { i2t_control: false, ..all }),
            ("no_t2i", MaskConfig { t2i_control: false, ..all }),
            ("no_t2t", MaskConfig { t2t_control: false, ..all }),
            ("no_detail_renderer", MaskConfig { detail_renderer: false, ..all }),
            ("all", all),
        ]
    }
}

/// Square boolean attention mask over text tokens followed by image tokens.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct JointAttentionMask {
    side: usize,
    text_len: usize,
    active: Vec<bool>,
    cells: Vec<bool>,
}

impl JointAttentionMask {
    /// Builds a mask from raw cells; inactive (PAD) rows and columns are forced false.
    pub fn from_cells(text_len: usize, active: Vec<bool>, mut cells: Vec<bool>) -> Self {
        let side = active.len();
        assert_eq!(cells.len(), side * side, "cells must be side x side");
        assert!(text_len <= side);
        for q in 0..side {
            for k in 0..side {
                if !active[q] || !active[k] {
                    cells[q * side + k] = false;
                }
            }
        }
        Self {
            side,
            text_len,
            active,
            cells,
        }
    }

    pub fn side(&self) -> usize {
        self.side
    }

    pub fn text_len(&self) -> usize {
        self.text_len
    }

    pub fn is_active(&self, pos: usize) -> bool {
        self.active[pos]
    }

    pub fn active(&self) -> &[bool] {
        &self.active
    }

    pub fn get(&self, q: usize, k: usize) -> bool {
        self.cells[q * self.side + k]
    }

    pub fn row(&self, q: usize) -> &[bool] {
        &self.cells[q * self.side..(q + 1) * self.side]
    }

    pub fn cells(&self) -> &[bool] {
        &self.cells
    }

    pub fn count_true(&self) -> usize {
        self.cells.iter().filter(|&&c| c).count()
    }
}

/// Query classes that share one mask row up to the diagonal.
#[derive(Clone, Copy)]
enum QueryClass {
    Global,
    Instance(u32),
    Image(u32),
}

fn template_row(seg: &SegmentMap, class: QueryClass, phase: Phase, cfg: &MaskConfig) -> Vec<bool> {
    let tl = seg.text_len;
    let mut row = vec![false; seg.side()];
    let (text, image) = row.split_at_mut(tl);
    let all_text = |text: &mut [bool]| {
        for s in &seg.segments {
            text[s.used_range()].fill(true);
        }
    };
    let owned_by = |image: &mut [bool], id: u32| {
        for (cell, &o) in image.iter_mut().zip(&seg.owner) {
            *cell = o == id;
        }
    };
    let global = seg.segment(SegmentKind::Global).used_range();

    if !cfg.detail_renderer {
        all_text(text);
        image.fill(true);
        return row;
    }
    match class {
        QueryClass::Global => {
            all_text(text);
            image.fill(true);
        }
        QueryClass::Instance(i) => {
            if cfg.t2t_control {
                text[seg.segment(SegmentKind::Instance(i)).used_range()].fill(true);
            } else {
                all_text(text);
            }
            if cfg.t2i_control {
                owned_by(image, i);
            } else {
                image.fill(true);
            }
        }
        QueryClass::Image(o) => {
            if cfg.i2i_control && phase == Phase::Strict {
                owned_by(image, o);
            } else {
                image.fill(true);
            }
            if !cfg.i2t_control {
                all_text(text);
            } else if o == 0 {
                text[global].fill(true);
            } else {
                text[seg.segment(SegmentKind::Instance(o)).used_range()].fill(true);
                if phase == Phase::Relaxed {
                    text[global].fill(true);
                }
            }
        }
    }
    row
}

pub fn build_mask(
    seg: &SegmentMap,
    sched: &PhaseSchedule,
    step: usize,
    cfg: &MaskConfig,
) -> Result<JointAttentionMask, ScheduleError> {
    let phase = phase_of(sched, step)?;
    let side = seg.side();
    let n = seg.n_instances as u32;
    let instance_rows: Vec<Vec<bool>> = (1..=n)
        .map(|i| template_row(seg, QueryClass::Instance(i), phase, cfg))
        .collect();
    let image_rows: Vec<Vec<bool>> = (0..=n)
        .map(|o| template_row(seg, QueryClass::Image(o), phase, cfg))
        .collect();
    let global_row = template_row(seg, QueryClass::Global, phase, cfg);

    let mut cells = vec![false; side * side];
    for (q, row) in cells.chunks_exact_mut(side).enumerate() {
        let template = match seg.tags.get(q) {
            Some(TextTag::Pad) => continue,
            Some(TextTag::Global) => &global_row,
            Some(TextTag::Instance(i)) => &instance_rows[*i as usize - 1],
            None => &image_rows[seg.owner[q - seg.text_len] as usize],
        };
        row.copy_from_slice(template);
        row[q] = true;
    }

    Ok(JointAttentionMask {
        side,
        text_len: seg.text_len,
        active: seg.active(),
        cells,
    })
}
