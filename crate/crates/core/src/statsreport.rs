//! Cohort statistics of fitted spherical radii and comparison against
//! as-fabricated dimensions.

use std::collections::BTreeMap;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::LayerBoundary;
use crate::scalar::Real;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStd<T> {
    pub mean: T,
    pub std: T,
}

impl<T: Real> MeanStd<T> {
    pub fn new(mean: T, std: T) -> Self {
        Self { mean, std }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary<T> {
    pub mean: T,
    /// Sample (n − 1) standard deviation; 0 for a single value.
    pub std: T,
    pub count: usize,
}

impl<T: Real> Summary<T> {
    pub fn mean_std(&self) -> MeanStd<T> {
        MeanStd::new(self.mean, self.std)
    }
}

pub fn summarize<T: Real>(values: &[T]) -> Result<Summary<T>> {
    if values.is_empty() {
        return Err(Error::InvalidInput("cannot summarize an empty list".into()));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("non-finite value".into()));
    }
    let n = T::from_usize(values.len()).expect("count fits the scalar");
    // shifted by the first value so identical inputs give exactly zero spread
    let shift = values[0];
    let dmean = values.iter().fold(T::zero(), |a, &v| a + (v - shift)) / n;
    let std = if values.len() == 1 {
        T::zero()
    } else {
        let ss = values.iter().fold(T::zero(), |a, &v| {
            let d = v - shift - dmean;
            a + d * d
        });
        (ss / (n - T::one())).sqrt()
    };
    Ok(Summary {
        mean: shift + dmean,
        std,
        count: values.len(),
    })
}

/// Kernel radius and layer thicknesses of the unirradiated particles.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AsFabricatedSpec<T> {
    pub kernel_radius: MeanStd<T>,
    pub buffer_thickness: Option<MeanStd<T>>,
    pub ipyc_thickness: Option<MeanStd<T>>,
    pub sic_thickness: Option<MeanStd<T>>,
    pub opyc_thickness: Option<MeanStd<T>>,
}

impl<T: Real> AsFabricatedSpec<T> {
    pub fn validate(&self) -> Result<()> {
        let terms = [
            Some(self.kernel_radius),
            self.buffer_thickness,
            self.ipyc_thickness,
            self.sic_thickness,
            self.opyc_thickness,
        ];
        for t in terms.into_iter().flatten() {
            if !(t.std >= T::zero()) || !t.mean.is_finite() || !t.std.is_finite() {
                return Err(Error::InvalidInput(format!(
                    "as-fabricated term {} ± {} must be finite with a non-negative std",
                    t.mean, t.std
                )));
            }
        }
        Ok(())
    }
}

/// Radius of `boundary` in the unirradiated particle: kernel radius plus
/// the thicknesses out to the boundary, with independent errors added in
/// quadrature. Without an irradiation gap the IPyC inner surface coincides
/// with the buffer outer surface.
pub fn as_fabricated_radius<T: Real>(spec: &AsFabricatedSpec<T>, boundary: LayerBoundary) -> Result<MeanStd<T>> {
    spec.validate()?;
    let layers: &[(&str, Option<MeanStd<T>>)] = &[
        ("buffer", spec.buffer_thickness),
        ("ipyc", spec.ipyc_thickness),
        ("sic", spec.sic_thickness),
        ("opyc", spec.opyc_thickness),
    ];
    let needed = match boundary {
        LayerBoundary::KernelOuter => 0,
        LayerBoundary::BufferOuter | LayerBoundary::IpycInner => 1,
        LayerBoundary::IpycOuter => 2,
        LayerBoundary::SicOuter => 3,
        LayerBoundary::OpycOuter => 4,
    };
    let mut mean = spec.kernel_radius.mean;
    let mut var = spec.kernel_radius.std * spec.kernel_radius.std;
    for (name, t) in &layers[..needed] {
        let t = t.ok_or_else(|| {
            Error::InvalidInput(format!("{boundary} needs the {name} thickness"))
        })?;
        mean = mean + t.mean;
        var = var + t.std * t.std;
    }
    Ok(MeanStd::new(mean, var.sqrt()))
}

/// `post / fab` with first-order propagation of independent relative errors.
pub fn ratio_with_uncertainty<T: Real>(post: MeanStd<T>, fab: MeanStd<T>) -> Result<MeanStd<T>> {
    if !(fab.mean > T::zero()) {
        return Err(Error::InvalidInput(format!("reference mean must be positive, got {}", fab.mean)));
    }
    if post.mean == T::zero() {
        return Err(Error::InvalidInput("relative error of a zero mean is undefined".into()));
    }
    let mean = post.mean / fab.mean;
    let rp = post.std / post.mean;
    let rf = fab.std / fab.mean;
    Ok(MeanStd::new(mean, mean.abs() * (rp * rp + rf * rf).sqrt()))
}

/// Mean ± sample std of the per-particle ratios `value / fab.mean`.
pub fn per_particle_ratio<T: Real>(values: &[T], fab: MeanStd<T>) -> Result<MeanStd<T>> {
    if !(fab.mean > T::zero()) {
        return Err(Error::InvalidInput(format!("reference mean must be positive, got {}", fab.mean)));
    }
    let ratios: Vec<T> = values.iter().map(|&v| v / fab.mean).collect();
    Ok(summarize(&ratios)?.mean_std())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram<T> {
    /// `counts.len() + 1` ascending edges.
    pub edges: Vec<T>,
    pub counts: Vec<usize>,
}

impl<T: Real> Histogram<T> {
    pub fn total(&self) -> usize {
        self.counts.iter().sum()
    }

    /// `edge_left,edge_right,count` rows with a header.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["edge_left", "edge_right", "count"])?;
        for (k, c) in self.counts.iter().enumerate() {
            w.write_record([
                self.edges[k].to_string(),
                self.edges[k + 1].to_string(),
                c.to_string(),
            ])?;
        }
        w.flush().map_err(|e| Error::io("<csv>", e))?;
        Ok(())
    }
}

fn check_values<T: Real>(values: &[T]) -> Result<()> {
    if values.is_empty() {
        return Err(Error::InvalidInput("histogram of an empty list".into()));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("non-finite value".into()));
    }
    Ok(())
}

/// Equal-width bins starting at `origin` (default: the largest multiple of
/// `width` not above the minimum) and covering the maximum. Bins are
/// left-closed; a value on the last right edge falls in the last bin.
pub fn histogram<T: Real>(values: &[T], width: T, origin: Option<T>) -> Result<Histogram<T>> {
    check_values(values)?;
    if !(width > T::zero()) || !width.is_finite() {
        return Err(Error::InvalidInput(format!("bin width must be positive, got {width}")));
    }
    let min = values.iter().copied().fold(T::infinity(), T::min);
    let max = values.iter().copied().fold(T::neg_infinity(), T::max);
    let origin = origin.unwrap_or_else(|| (min / width).floor() * width);
    if origin > min {
        return Err(Error::InvalidInput(format!("origin {origin} lies above the minimum {min}")));
    }
    let bins = ((max - origin) / width).ceil().to_usize().unwrap_or(0).max(1);
    let edges: Vec<T> = (0..=bins)
        .map(|k| origin + width * T::from_usize(k).expect("bin index fits the scalar"))
        .collect();
    histogram_with_edges(values, &edges)
}

/// Counts over explicit ascending edges; values outside `[first, last]`
/// are an error.
pub fn histogram_with_edges<T: Real>(values: &[T], edges: &[T]) -> Result<Histogram<T>> {
    check_values(values)?;
    if edges.len() < 2 || edges.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(Error::InvalidInput("edges must be at least two ascending values".into()));
    }
    let bins = edges.len() - 1;
    let mut counts = vec![0; bins];
    for &v in values {
        if v < edges[0] || v > edges[bins] {
            return Err(Error::InvalidInput(format!("value {v} outside the histogram range")));
        }
        // last edge e with e <= v, capped at the final bin
        let k = edges.partition_point(|&e| e <= v).saturating_sub(1).min(bins - 1);
        counts[k] += 1;
    }
    Ok(Histogram {
        edges: edges.to_vec(),
        counts,
    })
}

/// Descriptive data carried with a compact's summary, not computed.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CompactMetadata {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kernel_material: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub burnup_fima_pct: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fluence: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tava_c: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompactSummary<T> {
    pub compact_id: String,
    pub boundaries: BTreeMap<LayerBoundary, Summary<T>>,
    #[serde(default)]
    pub metadata: CompactMetadata,
}

/// Summarizes per-boundary radii of one compact; empty boundaries are
/// left out.
pub fn compact_summary<T: Real>(
    compact_id: impl Into<String>,
    radii: &BTreeMap<LayerBoundary, Vec<T>>,
    metadata: CompactMetadata,
) -> Result<CompactSummary<T>> {
    let mut boundaries = BTreeMap::new();
    for (&b, v) in radii {
        if !v.is_empty() {
            boundaries.insert(b, summarize(v)?);
        }
    }
    Ok(CompactSummary {
        compact_id: compact_id.into(),
        boundaries,
        metadata,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RatioMode {
    /// Ratio of cohort means with first-order error propagation.
    #[default]
    RatioOfMeans,
    /// Mean and sample std of per-particle ratios to the reference mean.
    PerParticle,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow<T> {
    pub boundary: LayerBoundary,
    pub post: Summary<T>,
    pub fab: MeanStd<T>,
    /// post mean − fab mean.
    pub delta: T,
    /// Delta relative to the fab mean, in percent.
    pub delta_pct: T,
    pub ratio: MeanStd<T>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport<T> {
    pub ratio_mode: RatioMode,
    pub rows: Vec<ComparisonRow<T>>,
}

/// Post-irradiation versus as-fabricated radius for every boundary that
/// both sides provide. `values` supplies the raw radii needed by
/// [`RatioMode::PerParticle`].
pub fn compare_report<T: Real>(
    post: &BTreeMap<LayerBoundary, Summary<T>>,
    fab: &AsFabricatedSpec<T>,
    mode: RatioMode,
    values: Option<&BTreeMap<LayerBoundary, Vec<T>>>,
) -> Result<ComparisonReport<T>> {
    fab.validate()?;
    let mut rows = Vec::new();
    for (&boundary, &p) in post {
        let Ok(f) = as_fabricated_radius(fab, boundary) else {
            continue;
        };
        let ratio = match mode {
            RatioMode::RatioOfMeans => ratio_with_uncertainty(p.mean_std(), f)?,
            RatioMode::PerParticle => {
                let v = values.and_then(|m| m.get(&boundary)).ok_or_else(|| {
                    Error::InvalidInput(format!("per-particle ratios need the {boundary} radii"))
                })?;
                per_particle_ratio(v, f)?
            }
        };
        let delta = p.mean - f.mean;
        rows.push(ComparisonRow {
            boundary,
            post: p,
            fab: f,
            delta,
            delta_pct: delta / f.mean * T::lit(100.0),
            ratio,
        });
    }
    if rows.is_empty() {
        return Err(Error::InvalidInput(
            "no boundary is shared by the measurements and the as-fabricated values".into(),
        ));
    }
    Ok(ComparisonReport { ratio_mode: mode, rows })
}

impl<T: Real> ComparisonReport<T> {
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record([
            "boundary",
            "post_mean",
            "post_std",
            "post_count",
            "fab_mean",
            "fab_std",
            "delta",
            "delta_pct",
            "ratio_mean",
            "ratio_std",
        ])?;
        for r in &self.rows {
            w.write_record([
                r.boundary.name().to_string(),
                r.post.mean.to_string(),
                r.post.std.to_string(),
                r.post.count.to_string(),
                r.fab.mean.to_string(),
                r.fab.std.to_string(),
                r.delta.to_string(),
                r.delta_pct.to_string(),
                r.ratio.mean.to_string(),
                r.ratio.std.to_string(),
            ])?;
        }
        w.flush().map_err(|e| Error::io("<csv>", e))?;
        Ok(())
    }
}
