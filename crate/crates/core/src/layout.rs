//! Layouts, boxes and the patch-ownership grid.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{LayoutError, LoadError};

pub const DEFAULT_MAX_INSTANCES: usize = 16;

/// Axis-aligned box in normalized image coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundingBox {
    pub x0: f64,
    pub y0: f64,
    pub x1: f64,
    pub y1: f64,
}

impl BoundingBox {
    pub const fn new(x0: f64, y0: f64, x1: f64, y1: f64) -> Self {
        Self { x0, y0, x1, y1 }
    }

    pub fn width(&self) -> f64 {
        self.x1 - self.x0
    }

    pub fn height(&self) -> f64 {
        self.y1 - self.y0
    }

    pub fn area(&self) -> f64 {
        self.width().max(0.0) * self.height().max(0.0)
    }

    /// Point membership, closed on the lower edges and open on the upper ones.
    pub fn contains(&self, x: f64, y: f64) -> bool {
        x >= self.x0 && x < self.x1 && y >= self.y0 && y < self.y1
    }

    pub fn intersection(&self, other: &BoundingBox) -> Option<BoundingBox> {
        let b = BoundingBox::new(
            self.x0.max(other.x0),
            self.y0.max(other.y0),
            self.x1.min(other.x1),
            self.y1.min(other.y1),
        );
        (b.x0 < b.x1 && b.y0 < b.y1).then_some(b)
    }

    pub fn as_array(&self) -> [f64; 4] {
        [self.x0, self.y0, self.x1, self.y1]
    }

    fn check(&self, index: usize) -> Result<(), LayoutError> {
        for (field, value) in [("x0", self.x0), ("y0", self.y0), ("x1", self.x1), ("y1", self.y1)] {
            if !(0.0..=1.0).contains(&value) {
                return Err(LayoutError::OutOfRangeCoordinate { index, field, value });
            }
        }
        if self.x0 >= self.x1 || self.y0 >= self.y1 {
            return Err(LayoutError::DegenerateBox {
                index,
                x0: self.x0,
                y0: self.y0,
                x1: self.x1,
                y1: self.y1,
            });
        }
        Ok(())
    }
}

/// Intersection over union of two valid boxes.
pub fn box_iou(a: &BoundingBox, b: &BoundingBox) -> f64 {
    let inter = a.intersection(b).map_or(0.0, |i| i.area());
    let union = a.area() + b.area() - inter;
    if union <= 0.0 {
        return 0.0;
    }
    (inter / union).clamp(0.0, 1.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Instance {
    pub id: u32,
    pub text: String,
    #[serde(rename = "box")]
    pub bbox: BoundingBox,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub attribute: Option<String>,
}

impl Instance {
    pub fn new(text: impl Into<String>, bbox: BoundingBox, attribute: Option<&str>) -> Self {
        Self {
            id: 0,
            text: text.into(),
            bbox,
            attribute: attribute.map(str::to_owned),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layout {
    pub global_text: String,
    pub instances: Vec<Instance>,
}

impl Layout {
    pub fn new(global_text: impl Into<String>, instances: Vec<Instance>) -> Self {
        Self {
            global_text: global_text.into(),
            instances,
        }
    }
}

/// A layout that passed [`validate_layout`]; instance ids are `1..=n` in order.
#[derive(Debug, Clone, PartialEq)]
pub struct ValidatedLayout(Layout);

impl ValidatedLayout {
    pub fn global_text(&self) -> &str {
        &self.0.global_text
    }

    pub fn instances(&self) -> &[Instance] {
        &self.0.instances
    }

    pub fn n(&self) -> usize {
        self.0.instances.len()
    }

    pub fn as_layout(&self) -> &Layout {
        &self.0
    }

    pub fn into_inner(self) -> Layout {
        self.0
    }

    /// Same layout with every box replaced; boxes are re-validated.
    pub fn with_boxes(&self, boxes: &[BoundingBox]) -> Result<ValidatedLayout, LayoutError> {
        let mut layout = self.0.clone();
        for (inst, b) in layout.instances.iter_mut().zip(boxes) {
            inst.bbox = *b;
        }
        validate_layout_with_max(layout, usize::MAX)
    }
}

pub fn validate_layout(layout: Layout) -> Result<ValidatedLayout, LayoutError> {
    validate_layout_with_max(layout, DEFAULT_MAX_INSTANCES)
}

pub fn validate_layout_with_max(
    mut layout: Layout,
    max_instances: usize,
) -> Result<ValidatedLayout, LayoutError> {
    if layout.global_text.trim().is_empty() {
        return Err(LayoutError::EmptyGlobalText);
    }
    if layout.instances.is_empty() {
        return Err(LayoutError::NoInstances);
    }
    if layout.instances.len() > max_instances {
        return Err(LayoutError::TooManyInstances {
            count: layout.instances.len(),
            max: max_instances,
        });
    }
    for (index, inst) in layout.instances.iter_mut().enumerate() {
        if inst.text.trim().is_empty() {
            return Err(LayoutError::EmptyInstanceText { index });
        }
        inst.bbox.check(index)?;
        inst.id = index as u32 + 1;
    }
    Ok(ValidatedLayout(layout))
}

/// Exclusive patch ownership: 0 is background, `i` is instance `i`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RegionGrid {
    pub grid_h: usize,
    pub grid_w: usize,
    pub owner: Vec<u32>,
}

impl RegionGrid {
    pub fn get(&self, row: usize, col: usize) -> u32 {
        self.owner[row * self.grid_w + col]
    }

    pub fn count(&self, id: u32) -> usize {
        self.owner.iter().filter(|&&o| o == id).count()
    }
}

/// Centre of patch `idx` along an axis with `cells` patches.
pub fn patch_center(idx: usize, cells: usize) -> f64 {
    (idx as f64 + 0.5) / cells as f64
}

/// Assigns each patch to the smallest box containing its centre (lower id on ties).
///
/// Panics if either grid dimension is zero.
pub fn rasterize(layout: &ValidatedLayout, grid_h: usize, grid_w: usize) -> RegionGrid {
    assert!(grid_h >= 1 && grid_w >= 1, "grid must be at least 1x1");
    let mut owner = vec![0u32; grid_h * grid_w];

    // Paint low-priority boxes first so the winner is painted last.
    let mut order: Vec<&Instance> = layout.instances().iter().collect();
    order.sort_by(|a, b| {
        b.bbox
            .area()
            .total_cmp(&a.bbox.area())
            .then(b.id.cmp(&a.id))
    });

    for inst in order {
        let b = &inst.bbox;
        let cols: Vec<usize> = (0..grid_w)
            .filter(|&c| {
                let x = patch_center(c, grid_w);
                x >= b.x0 && x < b.x1
            })
            .collect();
        for r in 0..grid_h {
            let y = patch_center(r, grid_h);
            if y < b.y0 || y >= b.y1 {
                continue;
            }
            for &c in &cols {
                owner[r * grid_w + c] = inst.id;
            }
        }
    }
    RegionGrid {
        grid_h,
        grid_w,
        owner,
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct LayoutFile {
    global_text: String,
    resolution: i64,
    #[serde(default)]
    pixel_coords: bool,
    instances: Vec<InstanceFile>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct InstanceFile {
    text: String,
    #[serde(default)]
    attribute: Option<String>,
    #[serde(rename = "box")]
    bbox: [f64; 4],
}

/// A layout as read from JSON, together with its declared resolution.
#[derive(Debug, Clone, PartialEq)]
pub struct LayoutDocument {
    pub layout: ValidatedLayout,
    pub resolution: u32,
}

/// Parses the layout JSON schema; pixel boxes are normalized by `resolution`.
pub fn parse_layout_json(text: &str) -> Result<LayoutDocument, ParseFailure> {
    let file: LayoutFile = serde_json::from_str(text).map_err(|e| ParseFailure::Json {
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })?;
    if file.resolution <= 0 {
        return Err(ParseFailure::Invalid(LayoutError::NonPositiveResolution(
            file.resolution,
        )));
    }
    let scale = if file.pixel_coords {
        file.resolution as f64
    } else {
        1.0
    };
    let instances = file
        .instances
        .into_iter()
        .map(|i| {
            let [x0, y0, x1, y1] = i.bbox.map(|v| v / scale);
            Instance {
                id: 0,
                text: i.text,
                bbox: BoundingBox::new(x0, y0, x1, y1),
                attribute: i.attribute,
            }
        })
        .collect();
    let layout = validate_layout(Layout::new(file.global_text, instances))
        .map_err(ParseFailure::Invalid)?;
    Ok(LayoutDocument {
        layout,
        resolution: file.resolution as u32,
    })
}

#[derive(Debug)]
pub enum ParseFailure {
    Json {
        line: usize,
        column: usize,
        message: String,
    },
    Invalid(LayoutError),
}

pub fn load_layout(path: &Path) -> Result<LayoutDocument, LoadError> {
    let text = std::fs::read_to_string(path).map_err(|source| LoadError::Io {
        path: path.to_owned(),
        source,
    })?;
    parse_layout_json(&text).map_err(|f| match f {
        ParseFailure::Json {
            line,
            column,
            message,
        } => LoadError::Json {
            path: path.to_owned(),
            line,
            column,
            message,
        },
        ParseFailure::Invalid(source) => LoadError::Invalid {
            path: path.to_owned(),
            source,
        },
    })
}

/// Serializes a layout in the same schema [`parse_layout_json`] reads.
pub fn layout_to_json(layout: &ValidatedLayout, resolution: u32) -> serde_json::Value {
    let instances: Vec<serde_json::Value> = layout
        .instances()
        .iter()
        .map(|i| {
            let mut obj = serde_json::json!({
                "text": i.text,
                "box": i.bbox.as_array(),
            });
            if let Some(a) = &i.attribute {
                obj["attribute"] = serde_json::Value::from(a.as_str());
            }
            obj
        })
        .collect();
    serde_json::json!({
        "global_text": layout.global_text(),
        "resolution": resolution,
        "instances": instances,
    })
}
