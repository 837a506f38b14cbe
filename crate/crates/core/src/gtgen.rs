//! Ground-truth composition from boundary annotations.
//!
//! Four annotated polygons (kernel, buffer, IPyC inner, SiC outer) are
//! filled into nested layers. The IPyC/SiC ring between the last two is
//! split by one intensity threshold, and an externally produced OPyC mask
//! is pasted in. The result can be cropped to a square around the particle
//! and resized.

use std::collections::BTreeMap;
use std::io::Read;

use image::imageops::{self, FilterType};
use image::GrayImage;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::LayerBoundary;
use crate::maskops::{BinaryGrid, ClassLabel, LabeledMask};

pub const POLYGON_POINTS: usize = 100;

/// Boundaries traced by hand, innermost first.
pub const ANNOTATED: [LayerBoundary; 4] = [
    LayerBoundary::KernelOuter,
    LayerBoundary::BufferOuter,
    LayerBoundary::IpycInner,
    LayerBoundary::SicOuter,
];

pub type Point = [f64; 2];

/// Name used for a traced boundary in annotation files.
pub fn annotation_name(b: LayerBoundary) -> Option<&'static str> {
    match b {
        LayerBoundary::KernelOuter => Some("kernel"),
        LayerBoundary::BufferOuter => Some("buffer"),
        LayerBoundary::IpycInner => Some("ipyc_inner"),
        LayerBoundary::SicOuter => Some("sic_outer"),
        _ => None,
    }
}

fn from_annotation_name(s: &str) -> Option<LayerBoundary> {
    ANNOTATED.into_iter().find(|&b| annotation_name(b) == Some(s))
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnnotationSet {
    polygons: BTreeMap<LayerBoundary, Vec<Point>>,
    pub opyc_mask: Option<BinaryGrid>,
    pub image_ref: String,
    /// μm per pixel.
    pub scale: f64,
}

#[derive(Debug, Deserialize)]
struct AnnotationRow {
    boundary: String,
    index: usize,
    x_px: f64,
    y_px: f64,
}

impl AnnotationSet {
    pub fn new(
        polygons: BTreeMap<LayerBoundary, Vec<Point>>,
        opyc_mask: Option<BinaryGrid>,
        image_ref: impl Into<String>,
        scale: f64,
    ) -> Result<Self> {
        let set = Self {
            polygons,
            opyc_mask,
            image_ref: image_ref.into(),
            scale,
        };
        set.validate()?;
        Ok(set)
    }

    /// Parses the `boundary,index,x_px,y_px` CSV (header required).
    pub fn from_csv<R: Read>(reader: R, image_ref: impl Into<String>, scale: f64) -> Result<Self> {
        let mut slots: BTreeMap<LayerBoundary, Vec<Option<Point>>> = BTreeMap::new();
        for row in csv::Reader::from_reader(reader).deserialize::<AnnotationRow>() {
            let row = row?;
            let b = from_annotation_name(row.boundary.trim()).ok_or_else(|| {
                Error::InvalidInput(format!("unknown annotated boundary {:?}", row.boundary))
            })?;
            if row.index >= POLYGON_POINTS {
                return Err(Error::InvalidInput(format!(
                    "{b}: point index {} out of range",
                    row.index
                )));
            }
            let slot = &mut slots.entry(b).or_insert_with(|| vec![None; POLYGON_POINTS])[row.index];
            if slot.replace([row.x_px, row.y_px]).is_some() {
                return Err(Error::InvalidInput(format!("{b}: duplicate point index {}", row.index)));
            }
        }
        let mut polygons = BTreeMap::new();
        for (b, pts) in slots {
            let pts = pts
                .into_iter()
                .collect::<Option<Vec<_>>>()
                .ok_or_else(|| Error::InvalidInput(format!("{b}: missing point indices")))?;
            polygons.insert(b, pts);
        }
        Self::new(polygons, None, image_ref, scale)
    }

    pub fn polygon(&self, b: LayerBoundary) -> Option<&[Point]> {
        self.polygons.get(&b).map(Vec::as_slice)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.scale > 0.0 && self.scale.is_finite()) {
            return Err(Error::InvalidInput("annotation scale must be positive".into()));
        }
        for b in ANNOTATED {
            let p = self
                .polygons
                .get(&b)
                .ok_or_else(|| Error::InvalidInput(format!("{b}: polygon missing")))?;
            if p.len() != POLYGON_POINTS {
                return Err(Error::InvalidInput(format!(
                    "{b}: expected {POLYGON_POINTS} points, got {}",
                    p.len()
                )));
            }
            if p.iter().flatten().any(|v| !v.is_finite()) {
                return Err(Error::InvalidInput(format!("{b}: non-finite coordinate")));
            }
            if perimeter(p) == 0.0 {
                return Err(Error::DegeneratePolygon(b.to_string()));
            }
            if !is_simple(p) {
                return Err(Error::DegeneratePolygon(format!("{b}: self-intersecting")));
            }
        }
        if let Some(b) = self.polygons.keys().find(|b| !ANNOTATED.contains(b)) {
            return Err(Error::InvalidInput(format!("{b} is not an annotated boundary")));
        }
        for w in ANNOTATED.windows(2) {
            let (inner, outer) = (&self.polygons[&w[0]], &self.polygons[&w[1]]);
            if !strictly_inside(inner, outer) {
                return Err(Error::Nesting(format!("{} is not strictly inside {}", w[0], w[1])));
            }
        }
        Ok(())
    }
}

fn edges(p: &[Point]) -> impl Iterator<Item = (Point, Point)> + '_ {
    (0..p.len()).map(move |i| (p[i], p[(i + 1) % p.len()]))
}

fn perimeter(p: &[Point]) -> f64 {
    edges(p).map(|(a, b)| (b[0] - a[0]).hypot(b[1] - a[1])).sum()
}

fn cross(o: Point, a: Point, b: Point) -> f64 {
    (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])
}

fn on_segment(p: Point, a: Point, b: Point) -> bool {
    p[0] >= a[0].min(b[0]) && p[0] <= a[0].max(b[0]) && p[1] >= a[1].min(b[1]) && p[1] <= a[1].max(b[1])
}

/// Closed-segment intersection, touching included.
fn segments_intersect(a: Point, b: Point, c: Point, d: Point) -> bool {
    let d1 = cross(c, d, a);
    let d2 = cross(c, d, b);
    let d3 = cross(a, b, c);
    let d4 = cross(a, b, d);
    if ((d1 > 0.0 && d2 < 0.0) || (d1 < 0.0 && d2 > 0.0)) && ((d3 > 0.0 && d4 < 0.0) || (d3 < 0.0 && d4 > 0.0)) {
        return true;
    }
    (d1 == 0.0 && on_segment(a, c, d))
        || (d2 == 0.0 && on_segment(b, c, d))
        || (d3 == 0.0 && on_segment(c, a, b))
        || (d4 == 0.0 && on_segment(d, a, b))
}

/// No two non-adjacent edges of the closed polygon meet, and no edge has
/// zero length.
fn is_simple(p: &[Point]) -> bool {
    let n = p.len();
    if n < 3 || edges(p).any(|(a, b)| a == b) {
        return false;
    }
    for i in 0..n {
        for j in (i + 2)..n {
            if i == 0 && j == n - 1 {
                continue;
            }
            if segments_intersect(p[i], p[(i + 1) % n], p[j], p[(j + 1) % n]) {
                return false;
            }
        }
    }
    true
}

/// Even-odd crossing test.
pub fn point_in_polygon(p: &[Point], x: f64, y: f64) -> bool {
    let mut inside = false;
    for (a, b) in edges(p) {
        if (a[1] > y) != (b[1] > y) {
            let xc = a[0] + (y - a[1]) * (b[0] - a[0]) / (b[1] - a[1]);
            if x < xc {
                inside = !inside;
            }
        }
    }
    inside
}

fn strictly_inside(inner: &[Point], outer: &[Point]) -> bool {
    inner.iter().all(|v| point_in_polygon(outer, v[0], v[1]))
        && !edges(inner).any(|(a, b)| edges(outer).any(|(c, d)| segments_intersect(a, b, c, d)))
}

/// `scale · perimeter / 2π` of the closed polygon.
pub fn radius_from_polygon(points: &[Point], scale: f64) -> Result<f64> {
    if points.len() < 2 {
        return Err(Error::DegeneratePolygon(format!("{} points", points.len())));
    }
    let per = perimeter(points);
    if !(per > 0.0) {
        return Err(Error::DegeneratePolygon("zero perimeter".into()));
    }
    Ok(scale * per / std::f64::consts::TAU)
}

/// Even-odd scanline fill sampled at pixel centers.
pub fn fill_polygon(points: &[Point], width: u32, height: u32) -> BinaryGrid {
    let mut grid = BinaryGrid::new(width, height);
    let mut xs = Vec::new();
    for y in 0..height {
        let yc = f64::from(y) + 0.5;
        xs.clear();
        for (a, b) in edges(points) {
            if (a[1] > yc) != (b[1] > yc) {
                xs.push(a[0] + (yc - a[1]) * (b[0] - a[0]) / (b[1] - a[1]));
            }
        }
        xs.sort_by(f64::total_cmp);
        for pair in xs.chunks_exact(2) {
            // pixel centers x + 0.5 with pair[0] <= x + 0.5 < pair[1]
            let lo = (pair[0] - 0.5).ceil().max(0.0);
            let hi = (pair[1] - 0.5).ceil().min(f64::from(width));
            let (lo, hi) = (lo as u32, hi as u32);
            for x in lo..hi.max(lo) {
                grid.set(x, y, true);
            }
        }
    }
    grid
}

/// Filled annotation layers. `mask` carries Kernel, Buffer, Epoxy and OPyC;
/// the IPyC/SiC ring is left as `provisional` (and labeled IPyC in `mask`
/// until split).
#[derive(Debug, Clone, PartialEq)]
pub struct LayerRaster {
    pub mask: LabeledMask,
    pub provisional: BinaryGrid,
}

pub fn rasterize_layers(ann: &AnnotationSet, width: u32, height: u32) -> Result<LayerRaster> {
    ann.validate()?;
    if let Some(o) = &ann.opyc_mask {
        if o.width() != width || o.height() != height {
            return Err(Error::DimensionMismatch(o.width(), o.height(), width, height));
        }
    }
    let fills: Vec<BinaryGrid> = ANNOTATED
        .iter()
        .map(|b| fill_polygon(&ann.polygons[b], width, height))
        .collect();
    let inside = [ClassLabel::Kernel, ClassLabel::Buffer, ClassLabel::Epoxy, ClassLabel::Ipyc];
    let mut mask = LabeledMask::new(width, height, ann.scale)?;
    let mut provisional = BinaryGrid::new(width, height);
    for y in 0..height {
        for x in 0..width {
            let layer = fills.iter().position(|f| f.get(x, y));
            let label = match layer {
                Some(k) => inside[k],
                None if ann.opyc_mask.as_ref().is_some_and(|o| o.get(x, y)) => ClassLabel::Opyc,
                None => ClassLabel::Background,
            };
            if layer == Some(3) {
                provisional.set(x, y, true);
            }
            mask.set(x, y, label);
        }
    }
    Ok(LayerRaster { mask, provisional })
}

/// Otsu threshold of a 256-bin histogram: the smallest `t` in `1..=255`
/// maximizing the between-class variance of `{v < t}` versus `{v ≥ t}`.
pub fn otsu_threshold(hist: &[u64; 256]) -> Result<u8> {
    let n: u64 = hist.iter().sum();
    let s: u64 = hist.iter().enumerate().map(|(v, &c)| v as u64 * c).sum();
    let (mut n0, mut s0) = (0u64, 0u64);
    // score(t) = (s0·n − s·n0)² / (n0·n1), compared as exact fractions
    let mut best: Option<(u8, u128, u128)> = None;
    for t in 1..=255usize {
        n0 += hist[t - 1];
        s0 += (t as u64 - 1) * hist[t - 1];
        let n1 = n - n0;
        if n0 == 0 || n1 == 0 {
            continue;
        }
        let diff = (i128::from(s0) * i128::from(n) - i128::from(s) * i128::from(n0)).unsigned_abs();
        let num = diff * diff;
        let den = u128::from(n0) * u128::from(n1);
        let better = match best {
            None => true,
            Some((_, bn, bd)) => greater(num, den, bn, bd),
        };
        if better {
            best = Some((t as u8, num, den));
        }
    }
    best.map(|(t, _, _)| t).ok_or(Error::NoThreshold)
}

/// `a/b > c/d`, exactly when the products fit and in f64 otherwise.
fn greater(a: u128, b: u128, c: u128, d: u128) -> bool {
    match (a.checked_mul(d), c.checked_mul(b)) {
        (Some(l), Some(r)) => l > r,
        _ => (a as f64) / (b as f64) > (c as f64) / (d as f64),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SicIpycSplit {
    pub threshold: u8,
    pub ipyc: BinaryGrid,
    pub sic: BinaryGrid,
}

/// Splits the provisional ring: intensities below the Otsu threshold are
/// IPyC, the rest SiC.
pub fn split_sic_ipyc(img: &GrayImage, provisional: &BinaryGrid) -> Result<SicIpycSplit> {
    let (w, h) = img.dimensions();
    if provisional.width() != w || provisional.height() != h {
        return Err(Error::DimensionMismatch(w, h, provisional.width(), provisional.height()));
    }
    if provisional.is_empty() {
        return Err(Error::EmptyMask);
    }
    let mut hist = [0u64; 256];
    for (p, &inside) in img.as_raw().iter().zip(provisional.as_slice()) {
        if inside {
            hist[*p as usize] += 1;
        }
    }
    let t = otsu_threshold(&hist)?;
    let value = |x, y| img.get_pixel(x, y).0[0];
    Ok(SicIpycSplit {
        threshold: t,
        ipyc: BinaryGrid::from_fn(w, h, |x, y| provisional.get(x, y) && value(x, y) < t),
        sic: BinaryGrid::from_fn(w, h, |x, y| provisional.get(x, y) && value(x, y) >= t),
    })
}

/// Full ground-truth mask for one annotated image; returns the threshold used.
pub fn compose_ground_truth(img: &GrayImage, ann: &AnnotationSet) -> Result<(LabeledMask, u8)> {
    let LayerRaster { mut mask, provisional } = rasterize_layers(ann, img.width(), img.height())?;
    let split = split_sic_ipyc(img, &provisional)?;
    for y in 0..img.height() {
        for x in 0..img.width() {
            if split.sic.get(x, y) {
                mask.set(x, y, ClassLabel::Sic);
            }
        }
    }
    Ok((mask, split.threshold))
}

/// Pixel box `[x0, x0 + width) × [y0, y0 + height)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CropBox {
    pub x0: u32,
    pub y0: u32,
    pub width: u32,
    pub height: u32,
    /// False when the image bounds prevented a square crop.
    pub square: bool,
}

fn square_span(lo: u32, hi: u32, half: i64, limit: u32) -> (u32, u32) {
    // center (lo + hi + 1)/2 in continuous coordinates, side 2·half
    let c2 = i64::from(lo) + i64::from(hi) + 1;
    let mut start = (c2 - 2 * half).div_euclid(2);
    let side = (2 * half).min(i64::from(limit));
    start = start.clamp(0, i64::from(limit) - side);
    (start as u32, side as u32)
}

/// Square box around the non-background pixels of `mask`, grown by
/// `margin` on each side. The side is twice the larger half-extent of the
/// bounding box plus `margin + 1`; the box is centered on the bounding box
/// and shifted, then clamped, to stay inside the image.
pub fn square_crop_box(mask: &LabeledMask, margin: u32) -> Result<CropBox> {
    let (w, h) = (mask.width(), mask.height());
    let mut bb: Option<(u32, u32, u32, u32)> = None;
    for y in 0..h {
        for x in 0..w {
            if mask.get(x, y) != ClassLabel::Background {
                bb = Some(match bb {
                    None => (x, x, y, y),
                    Some((a, b, c, d)) => (a.min(x), b.max(x), c.min(y), d.max(y)),
                });
            }
        }
    }
    let (x0, x1, y0, y1) = bb.ok_or(Error::EmptyMask)?;
    let hx = (i64::from(x1 - x0) + 1) / 2;
    let hy = (i64::from(y1 - y0) + 1) / 2;
    let half = hx.max(hy) + i64::from(margin) + 1;
    let (bx, bw) = square_span(x0, x1, half, w);
    let (by, bh) = square_span(y0, y1, half, h);
    Ok(CropBox {
        x0: bx,
        y0: by,
        width: bw,
        height: bh,
        square: bw == bh,
    })
}

pub fn crop_square(img: &GrayImage, mask: &LabeledMask, margin: u32) -> Result<(GrayImage, LabeledMask, CropBox)> {
    if img.dimensions() != (mask.width(), mask.height()) {
        return Err(Error::DimensionMismatch(img.width(), img.height(), mask.width(), mask.height()));
    }
    let b = square_crop_box(mask, margin)?;
    let out_img = imageops::crop_imm(img, b.x0, b.y0, b.width, b.height).to_image();
    let labels = (0..b.height)
        .flat_map(|y| (0..b.width).map(move |x| (x, y)))
        .map(|(x, y)| mask.get(b.x0 + x, b.y0 + y))
        .collect();
    let out_mask = LabeledMask::from_labels(b.width, b.height, labels, mask.scale())?;
    Ok((out_img, out_mask, b))
}

/// Resamples a square image (bilinear) and mask (nearest) to `target`².
/// The mask scale grows by the size ratio.
pub fn resize_pair(img: &GrayImage, mask: &LabeledMask, target: u32) -> Result<(GrayImage, LabeledMask)> {
    let (w, h) = img.dimensions();
    if w != h {
        return Err(Error::NonSquare(w, h));
    }
    if (mask.width(), mask.height()) != (w, h) {
        return Err(Error::DimensionMismatch(w, h, mask.width(), mask.height()));
    }
    if target == 0 {
        return Err(Error::InvalidInput("resize target must be positive".into()));
    }
    let out_img = imageops::resize(img, target, target, FilterType::Triangle);
    let codes = GrayImage::from_raw(w, h, mask.codes()).expect("mask buffer size");
    let out_codes = imageops::resize(&codes, target, target, FilterType::Nearest);
    let scale = mask.scale() * f64::from(w) / f64::from(target);
    let out_mask = LabeledMask::from_codes(target, target, out_codes.as_raw(), scale)?;
    Ok((out_img, out_mask))
}

/// Record written next to each composed ground-truth mask.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub source_id: String,
    pub threshold: u8,
    pub crop: Option<CropBox>,
    /// Output side over input side.
    pub resize_factor: f64,
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn regular(n: usize, r: f64, cx: f64, cy: f64) -> Vec<Point> {
        (0..n)
            .map(|k| {
                let t = 2.0 * PI * k as f64 / n as f64;
                [cx + r * t.cos(), cy + r * t.sin()]
            })
            .collect()
    }

    fn annotations(radii: [f64; 4], c: f64) -> AnnotationSet {
        let polygons = ANNOTATED
            .iter()
            .zip(radii)
            .map(|(&b, r)| (b, regular(POLYGON_POINTS, r, c, c)))
            .collect();
        AnnotationSet::new(polygons, None, "img", 1.0).unwrap()
    }

    #[test]
    fn polygon_radius_examples() {
        let r = radius_from_polygon(&regular(100, 100.0, 0.0, 0.0), 1.0).unwrap();
        let expect = 20000.0 * (PI / 100.0).sin() / (2.0 * PI);
        assert!((r - expect).abs() < 1e-9);
        assert!((r - 99.9836).abs() < 1e-4);
        let sq = [[0.0, 0.0], [7.0, 0.0], [7.0, 7.0], [0.0, 7.0]];
        assert!((radius_from_polygon(&sq, 1.0).unwrap() - 28.0 / (2.0 * PI)).abs() < 1e-12);
        assert!(matches!(
            radius_from_polygon(&[[3.0, 3.0]; 100], 1.0),
            Err(Error::DegeneratePolygon(_))
        ));
    }

    #[test]
    fn scanline_fill_matches_point_test() {
        let mut poly = regular(100, 40.0, 50.3, 49.7);
        poly[10] = [60.0, 60.0]; // concave dent
        let g = fill_polygon(&poly, 100, 100);
        for y in 0..100 {
            for x in 0..100 {
                let inside = point_in_polygon(&poly, x as f64 + 0.5, y as f64 + 0.5);
                assert_eq!(g.get(x, y), inside, "({x},{y})");
            }
        }
    }

    #[test]
    fn rasterized_ring_areas() {
        let ann = annotations([100.0, 150.0, 160.0, 200.0], 256.0);
        let raster = rasterize_layers(&ann, 512, 512).unwrap();
        let m = &raster.mask;
        let ring = |a: f64, b: f64| PI * (b * b - a * a);
        let cases = [
            (ClassLabel::Kernel, ring(0.0, 100.0)),
            (ClassLabel::Buffer, ring(100.0, 150.0)),
            (ClassLabel::Epoxy, ring(150.0, 160.0)),
            (ClassLabel::Ipyc, ring(160.0, 200.0)),
        ];
        for (c, ideal) in cases {
            let a = m.area(c) as f64;
            assert!((a - ideal).abs() / ideal < 0.01, "{c}: {a} vs {ideal}");
        }
        assert_eq!(raster.provisional.count(), m.area(ClassLabel::Ipyc));
        assert_eq!(m.area(ClassLabel::Opyc), 0);
    }

    #[test]
    fn nesting_violation_is_rejected() {
        let mut polygons: BTreeMap<_, _> = ANNOTATED
            .iter()
            .zip([100.0, 150.0, 160.0, 200.0])
            .map(|(&b, r)| (b, regular(100, r, 256.0, 256.0)))
            .collect();
        polygons.insert(LayerBoundary::KernelOuter, regular(100, 155.0, 256.0, 256.0));
        assert!(matches!(
            AnnotationSet::new(polygons.clone(), None, "x", 1.0),
            Err(Error::Nesting(_))
        ));
        polygons.insert(LayerBoundary::KernelOuter, regular(99, 50.0, 256.0, 256.0));
        assert!(AnnotationSet::new(polygons, None, "x", 1.0).is_err());
    }

    #[test]
    fn self_intersecting_polygon_is_rejected() {
        let mut p = regular(100, 50.0, 0.0, 0.0);
        p.swap(10, 60);
        assert!(!is_simple(&p));
        assert!(is_simple(&regular(100, 50.0, 0.0, 0.0)));
    }

    #[test]
    fn csv_round_trip() {
        let ann = annotations([100.0, 150.0, 160.0, 200.0], 256.0);
        let mut text = String::from("boundary,index,x_px,y_px\n");
        for b in ANNOTATED.iter().rev() {
            for (i, p) in ann.polygon(*b).unwrap().iter().enumerate() {
                text.push_str(&format!("{},{i},{:?},{:?}\n", annotation_name(*b).unwrap(), p[0], p[1]));
            }
        }
        let back = AnnotationSet::from_csv(text.as_bytes(), "img", 1.0).unwrap();
        assert_eq!(back, ann);
        let bad = text.replace("kernel,5,", "kernel,500,");
        assert!(AnnotationSet::from_csv(bad.as_bytes(), "img", 1.0).is_err());
    }

    #[test]
    fn two_level_split_is_exact() {
        let img = GrayImage::from_fn(20, 10, |x, _| image::Luma([if x < 10 { 100 } else { 180 }]));
        let region = BinaryGrid::from_fn(20, 10, |_, _| true);
        let s = split_sic_ipyc(&img, &region).unwrap();
        assert!(s.threshold > 100 && s.threshold <= 180);
        assert_eq!(s.ipyc.count(), 100);
        for x in 0..20 {
            assert_eq!(s.sic.get(x, 3), x >= 10);
        }
        let flat = GrayImage::from_pixel(5, 5, image::Luma([128]));
        let all = BinaryGrid::from_fn(5, 5, |_, _| true);
        assert!(matches!(split_sic_ipyc(&flat, &all), Err(Error::NoThreshold)));
        assert!(matches!(
            split_sic_ipyc(&flat, &BinaryGrid::new(5, 5)),
            Err(Error::EmptyMask)
        ));
    }

    #[test]
    fn crop_box_example() {
        let mut mask = LabeledMask::new(1400, 1200, 1.0).unwrap();
        mask.set(100, 300, ClassLabel::Kernel);
        mask.set(1100, 900, ClassLabel::Kernel);
        let b = square_crop_box(&mask, 10).unwrap();
        assert_eq!((b.width, b.height, b.square), (1022, 1022, true));
        // bounding box spans [100, 1101) × [300, 901): center 600.5 on both axes
        assert!((i64::from(b.x0 * 2 + b.width) - 1201).abs() <= 1);
        assert!((i64::from(b.y0 * 2 + b.height) - 1201).abs() <= 1);
    }

    #[test]
    fn crop_is_idempotent_and_clamped() {
        let mut mask = LabeledMask::new(300, 200, 1.0).unwrap();
        for y in 40..90 {
            for x in 120..200 {
                mask.set(x, y, ClassLabel::Buffer);
            }
        }
        let img = GrayImage::from_fn(300, 200, |x, y| image::Luma([(x ^ y) as u8]));
        let (i1, m1, _) = crop_square(&img, &mask, 0).unwrap();
        let (i2, m2, b2) = crop_square(&i1, &m1, 0).unwrap();
        assert_eq!((i1, m1), (i2, m2));
        assert_eq!((b2.x0, b2.y0), (0, 0));

        let mut tall = LabeledMask::new(50, 200, 1.0).unwrap();
        tall.set(10, 10, ClassLabel::Kernel);
        tall.set(40, 190, ClassLabel::Kernel);
        let b = square_crop_box(&tall, 0).unwrap();
        assert!(!b.square);
        assert_eq!(b.width, 50);
        assert!(matches!(
            square_crop_box(&LabeledMask::new(5, 5, 1.0).unwrap(), 0),
            Err(Error::EmptyMask)
        ));
    }

    #[test]
    fn resize_keeps_labels_and_updates_scale() {
        let mut mask = LabeledMask::new(1024, 1024, 1.0).unwrap();
        for y in 0..1024 {
            for x in 0..1024 {
                let d = ((x as f64 - 512.0).powi(2) + (y as f64 - 512.0).powi(2)).sqrt();
                if d < 200.0 {
                    mask.set(x, y, ClassLabel::Kernel);
                } else if d < 300.0 {
                    mask.set(x, y, ClassLabel::Buffer);
                }
            }
        }
        let img = GrayImage::from_fn(1024, 1024, |x, _| image::Luma([(x / 4) as u8]));
        let (i, m) = resize_pair(&img, &mask, 512).unwrap();
        assert_eq!(i.dimensions(), (512, 512));
        assert_eq!(m.scale(), 2.0);
        assert_eq!(m.classes_present(), mask.classes_present());
        let odd = GrayImage::new(1000, 900);
        let odd_mask = LabeledMask::new(1000, 900, 1.0).unwrap();
        assert!(matches!(resize_pair(&odd, &odd_mask, 512), Err(Error::NonSquare(1000, 900))));
    }
}
