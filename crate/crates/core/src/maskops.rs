//! Labeled masks, per-class overlap metrics and area-equivalent radius
//! measurement.

use std::collections::{BTreeMap, VecDeque};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::LayerBoundary;
use crate::scalar::Real;
use crate::spherefit::{ObservationSet, SectionObservation, SECTIONS};

/// Per-pixel class with a stable integer code.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
#[repr(u8)]
pub enum ClassLabel {
    #[default]
    Background = 0,
    Kernel = 1,
    Buffer = 2,
    Epoxy = 3,
    Ipyc = 4,
    Sic = 5,
    Opyc = 6,
}

impl ClassLabel {
    pub const ALL: [ClassLabel; 7] = [
        ClassLabel::Background,
        ClassLabel::Kernel,
        ClassLabel::Buffer,
        ClassLabel::Epoxy,
        ClassLabel::Ipyc,
        ClassLabel::Sic,
        ClassLabel::Opyc,
    ];

    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn from_code(code: u8) -> Result<Self> {
        Self::ALL
            .get(code as usize)
            .copied()
            .ok_or(Error::InvalidClassCode(code))
    }

    pub fn name(self) -> &'static str {
        match self {
            ClassLabel::Background => "background",
            ClassLabel::Kernel => "kernel",
            ClassLabel::Buffer => "buffer",
            ClassLabel::Epoxy => "epoxy",
            ClassLabel::Ipyc => "ipyc",
            ClassLabel::Sic => "sic",
            ClassLabel::Opyc => "opyc",
        }
    }

    /// Display color used in overlays.
    pub fn color(self) -> [u8; 3] {
        match self {
            ClassLabel::Background => [0, 0, 0],
            ClassLabel::Kernel => [255, 0, 0],
            ClassLabel::Buffer => [0, 255, 0],
            ClassLabel::Epoxy => [0, 0, 255],
            ClassLabel::Ipyc => [255, 255, 0],
            ClassLabel::Sic => [255, 105, 180],
            ClassLabel::Opyc => [0, 255, 255],
        }
    }
}

impl std::fmt::Display for ClassLabel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Dense row-major boolean grid.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryGrid {
    width: u32,
    height: u32,
    data: Vec<bool>,
}

impl BinaryGrid {
    pub fn new(width: u32, height: u32) -> Self {
        Self {
            width,
            height,
            data: vec![false; width as usize * height as usize],
        }
    }

    pub fn from_fn(width: u32, height: u32, mut f: impl FnMut(u32, u32) -> bool) -> Self {
        let mut data = Vec::with_capacity(width as usize * height as usize);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Self {
            width,
            height,
            data,
        }
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn get(&self, x: u32, y: u32) -> bool {
        self.data[(y * self.width + x) as usize]
    }

    pub fn set(&mut self, x: u32, y: u32, v: bool) {
        self.data[(y * self.width + x) as usize] = v;
    }

    pub fn as_slice(&self) -> &[bool] {
        &self.data
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&v| v).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.data.iter().any(|&v| v)
    }

    pub fn and(&self, other: &BinaryGrid) -> BinaryGrid {
        BinaryGrid {
            width: self.width,
            height: self.height,
            data: self.data.iter().zip(&other.data).map(|(&a, &b)| a && b).collect(),
        }
    }
}

/// Per-pixel class labels with an isotropic pixel scale (μm/px).
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledMask {
    width: u32,
    height: u32,
    labels: Vec<ClassLabel>,
    scale: f64,
}

impl LabeledMask {
    /// All-background mask.
    pub fn new(width: u32, height: u32, scale: f64) -> Result<Self> {
        Self::from_labels(
            width,
            height,
            vec![ClassLabel::Background; width as usize * height as usize],
            scale,
        )
    }

    pub fn from_labels(width: u32, height: u32, labels: Vec<ClassLabel>, scale: f64) -> Result<Self> {
        if !(scale > 0.0) || !scale.is_finite() {
            return Err(Error::InvalidInput(format!("mask scale must be positive, got {scale}")));
        }
        if labels.len() != width as usize * height as usize {
            return Err(Error::InvalidInput(format!(
                "{} labels for a {width}x{height} mask",
                labels.len()
            )));
        }
        Ok(Self {
            width,
            height,
            labels,
            scale,
        })
    }

    pub fn from_codes(width: u32, height: u32, codes: &[u8], scale: f64) -> Result<Self> {
        let labels = codes
            .iter()
            .map(|&c| ClassLabel::from_code(c))
            .collect::<Result<Vec<_>>>()?;
        Self::from_labels(width, height, labels, scale)
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn set_scale(&mut self, scale: f64) {
        assert!(scale > 0.0, "mask scale must be positive");
        self.scale = scale;
    }

    pub fn get(&self, x: u32, y: u32) -> ClassLabel {
        self.labels[(y * self.width + x) as usize]
    }

    pub fn set(&mut self, x: u32, y: u32, label: ClassLabel) {
        self.labels[(y * self.width + x) as usize] = label;
    }

    pub fn labels(&self) -> &[ClassLabel] {
        &self.labels
    }

    pub fn codes(&self) -> Vec<u8> {
        self.labels.iter().map(|l| l.code()).collect()
    }

    /// Pixels carrying any of `classes`.
    pub fn region(&self, classes: &[ClassLabel]) -> BinaryGrid {
        BinaryGrid {
            width: self.width,
            height: self.height,
            data: self.labels.iter().map(|l| classes.contains(l)).collect(),
        }
    }

    pub fn area(&self, class: ClassLabel) -> usize {
        self.labels.iter().filter(|&&l| l == class).count()
    }

    /// Set of classes present in the mask.
    pub fn classes_present(&self) -> Vec<ClassLabel> {
        let mut seen = [false; 7];
        for l in &self.labels {
            seen[l.code() as usize] = true;
        }
        ClassLabel::ALL.into_iter().filter(|c| seen[c.code() as usize]).collect()
    }
}

fn check_dims(a: &LabeledMask, b: &LabeledMask) -> Result<()> {
    if a.width != b.width || a.height != b.height {
        return Err(Error::DimensionMismatch(a.width, a.height, b.width, b.height));
    }
    Ok(())
}

/// Intersection over union of `class` between a prediction and the truth.
/// Both regions empty counts as perfect agreement (1).
pub fn iou(pred: &LabeledMask, truth: &LabeledMask, class: ClassLabel) -> Result<f64> {
    check_dims(pred, truth)?;
    let (mut inter, mut union) = (0usize, 0usize);
    for (&p, &t) in pred.labels.iter().zip(&truth.labels) {
        let (p, t) = (p == class, t == class);
        inter += (p && t) as usize;
        union += (p || t) as usize;
    }
    Ok(if union == 0 {
        1.0
    } else {
        inter as f64 / union as f64
    })
}

/// Whether `class` occurs in either mask, i.e. its IoU is not vacuous.
pub fn class_observed(pred: &LabeledMask, truth: &LabeledMask, class: ClassLabel) -> bool {
    pred.labels.contains(&class) || truth.labels.contains(&class)
}

/// Unweighted mean of the per-class IoUs over `classes`.
pub fn mean_iou(per_class: &BTreeMap<ClassLabel, f64>, classes: &[ClassLabel]) -> Result<f64> {
    if classes.is_empty() {
        return Err(Error::InvalidInput("mean IoU over an empty class set".into()));
    }
    let mut sum = 0.0;
    for c in classes {
        sum += per_class.get(c).ok_or(Error::MissingClass(*c))?;
    }
    Ok(sum / classes.len() as f64)
}

/// Radius of the circle with the same area: `scale · sqrt(area / π)`.
pub fn equivalent_radius<T: Real>(area: T, scale: T) -> T {
    scale * (area / T::lit(std::f64::consts::PI)).sqrt()
}

/// Percent difference of a measured radius from a reference radius.
pub fn radius_difference<T: Real>(r_ml: T, r_manual: T) -> Result<T> {
    if r_manual == T::zero() {
        return Err(Error::UndefinedDifference);
    }
    Ok((r_ml - r_manual) / r_manual * T::lit(100.0))
}

/// Adds every unset pixel that cannot reach the grid border through unset
/// pixels (4-connectivity).
pub fn fill_holes(region: &BinaryGrid) -> BinaryGrid {
    let (w, h) = (region.width as usize, region.height as usize);
    let mut outside = vec![false; w * h];
    let mut queue = VecDeque::new();
    let seed = |i: usize, outside: &mut Vec<bool>, queue: &mut VecDeque<usize>| {
        if !region.data[i] && !outside[i] {
            outside[i] = true;
            queue.push_back(i);
        }
    };
    for x in 0..w {
        seed(x, &mut outside, &mut queue);
        if h > 0 {
            seed((h - 1) * w + x, &mut outside, &mut queue);
        }
    }
    for y in 0..h {
        seed(y * w, &mut outside, &mut queue);
        if w > 0 {
            seed(y * w + w - 1, &mut outside, &mut queue);
        }
    }
    while let Some(i) = queue.pop_front() {
        let (x, y) = (i % w, i / w);
        let mut visit = |j: usize| {
            if !region.data[j] && !outside[j] {
                outside[j] = true;
                queue.push_back(j);
            }
        };
        if x > 0 {
            visit(i - 1);
        }
        if x + 1 < w {
            visit(i + 1);
        }
        if y > 0 {
            visit(i - w);
        }
        if y + 1 < h {
            visit(i + w);
        }
    }
    BinaryGrid {
        width: region.width,
        height: region.height,
        data: outside.into_iter().map(|o| !o).collect(),
    }
}

/// Largest 8-connected component of a binary grid. Among equally large
/// components the one containing the smallest row-major index wins.
pub fn largest_region(region: &BinaryGrid) -> BinaryGrid {
    let (w, h) = (region.width as usize, region.height as usize);
    let mut label = vec![0u32; w * h];
    let mut best: (u32, usize) = (0, 0);
    let mut next = 1u32;
    let mut stack = Vec::new();
    for start in 0..w * h {
        if !region.data[start] || label[start] != 0 {
            continue;
        }
        let id = next;
        next += 1;
        label[start] = id;
        stack.push(start);
        let mut size = 0usize;
        while let Some(i) = stack.pop() {
            size += 1;
            let (x, y) = ((i % w) as isize, (i / w) as isize);
            for dy in -1..=1isize {
                for dx in -1..=1isize {
                    let (nx, ny) = (x + dx, y + dy);
                    if nx < 0 || ny < 0 || nx >= w as isize || ny >= h as isize {
                        continue;
                    }
                    let j = ny as usize * w + nx as usize;
                    if region.data[j] && label[j] == 0 {
                        label[j] = id;
                        stack.push(j);
                    }
                }
            }
        }
        if size > best.1 {
            best = (id, size);
        }
    }
    BinaryGrid {
        width: region.width,
        height: region.height,
        data: label.iter().map(|&l| best.0 != 0 && l == best.0).collect(),
    }
}

/// Largest 8-connected component of `class`; empty when the class is absent.
pub fn largest_component(mask: &LabeledMask, class: ClassLabel) -> BinaryGrid {
    largest_region(&mask.region(&[class]))
}

/// Cross-sectional radii measured from one labeled section.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaskMeasurement {
    /// Area-equivalent radius (μm) per boundary; absent boundaries omitted.
    pub radii: BTreeMap<LayerBoundary, f64>,
    /// Pixel count per class.
    pub areas: BTreeMap<ClassLabel, usize>,
}

impl MaskMeasurement {
    pub fn radius(&self, boundary: LayerBoundary) -> Option<f64> {
        self.radii.get(&boundary).copied()
    }
}

/// Classes enclosed by each boundary, innermost first.
const ENCLOSED: [(LayerBoundary, &[ClassLabel]); 6] = [
    (LayerBoundary::KernelOuter, &[ClassLabel::Kernel]),
    (LayerBoundary::BufferOuter, &[ClassLabel::Kernel, ClassLabel::Buffer]),
    (
        LayerBoundary::IpycInner,
        &[ClassLabel::Kernel, ClassLabel::Buffer, ClassLabel::Epoxy],
    ),
    (
        LayerBoundary::IpycOuter,
        &[ClassLabel::Kernel, ClassLabel::Buffer, ClassLabel::Epoxy, ClassLabel::Ipyc],
    ),
    (
        LayerBoundary::SicOuter,
        &[
            ClassLabel::Kernel,
            ClassLabel::Buffer,
            ClassLabel::Epoxy,
            ClassLabel::Ipyc,
            ClassLabel::Sic,
        ],
    ),
    (
        LayerBoundary::OpycOuter,
        &[
            ClassLabel::Kernel,
            ClassLabel::Buffer,
            ClassLabel::Epoxy,
            ClassLabel::Ipyc,
            ClassLabel::Sic,
            ClassLabel::Opyc,
        ],
    ),
];

/// Measures the area-equivalent radius of every boundary. Each boundary's
/// region is the union of the classes it encloses, reduced to its largest
/// component and hole-filled. Regions are built from the outside in, each
/// one restricted to the filled region of the next boundary out, so the
/// radii never decrease outward. A boundary whose outermost class is
/// missing from the mask is reported absent.
pub fn boundary_radii(mask: &LabeledMask) -> MaskMeasurement {
    let present = mask.classes_present();
    let areas = ClassLabel::ALL
        .into_iter()
        .map(|c| (c, mask.area(c)))
        .collect();
    let mut radii = BTreeMap::new();
    let mut outer: Option<BinaryGrid> = None;
    for &(boundary, classes) in ENCLOSED.iter().rev() {
        let outermost = *classes.last().unwrap();
        if !present.contains(&outermost) {
            continue;
        }
        let mut union = mask.region(classes);
        if let Some(o) = &outer {
            union = union.and(o);
        }
        let filled = fill_holes(&largest_region(&union));
        let area = filled.count();
        if area == 0 {
            continue;
        }
        radii.insert(boundary, equivalent_radius(area as f64, mask.scale));
        outer = Some(filled);
    }
    MaskMeasurement { radii, areas }
}

/// Assembles one particle's observations from its four measured sections
/// (`None` for a missing section). OPyC is modeled when any section shows
/// it.
pub fn observation_set(
    id: impl Into<String>,
    sections: &[Option<MaskMeasurement>; SECTIONS],
    silhouette: Option<f64>,
) -> Result<ObservationSet<f64>> {
    let has_opyc = sections
        .iter()
        .flatten()
        .any(|m| m.radius(LayerBoundary::OpycOuter).is_some());
    let mut obs = [SectionObservation::default(); SECTIONS];
    for (o, m) in obs.iter_mut().zip(sections) {
        if let Some(m) = m {
            for b in LayerBoundary::ALL {
                if b != LayerBoundary::OpycOuter || has_opyc {
                    o.set(b, m.radius(b));
                }
            }
        }
    }
    ObservationSet::new(id, has_opyc, silhouette, obs)
}
