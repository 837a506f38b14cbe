//! Synthetic cross sections with exact ground truth.
//!
//! A particle is drawn from per-boundary ranges, cut at four heights, and
//! each cut is rendered as concentric circles (one shared in-plane center;
//! the kernel/buffer offset acts only through the height shift of the
//! forward model). Every particle uses its own RNG stream derived from the
//! configured seed and its index, so datasets are schedule independent.

use std::collections::BTreeMap;
use std::path::Path;

use image::{GrayImage, Luma};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{predict_all, predict_radius, LayerBoundary, ParticleGeometry, SectionPlane};
use crate::io::{self, MaskSidecar};
use crate::maskops::{ClassLabel, LabeledMask};
use crate::spherefit::{derive_seed, ObservationSet, SectionObservation, SECTIONS};

/// Smallest spacing enforced between consecutive sampled radii (μm).
pub const MIN_LAYER_GAP_UM: f64 = 0.5;
const MAX_ATTEMPTS: usize = 10_000;

/// Per-boundary `[min, max]` ranges (μm).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GeometryRanges {
    pub kernel_outer: [f64; 2],
    pub buffer_outer: [f64; 2],
    pub ipyc_inner: [f64; 2],
    pub ipyc_outer: [f64; 2],
    pub sic_outer: [f64; 2],
    pub opyc_outer: [f64; 2],
}

impl Default for GeometryRanges {
    fn default() -> Self {
        Self {
            kernel_outer: [205.0, 221.0],
            buffer_outer: [280.0, 300.0],
            ipyc_inner: [318.0, 326.0],
            ipyc_outer: [352.0, 362.0],
            sic_outer: [385.0, 395.0],
            opyc_outer: [420.0, 440.0],
        }
    }
}

impl GeometryRanges {
    fn as_array(&self) -> [[f64; 2]; 6] {
        [
            self.kernel_outer,
            self.buffer_outer,
            self.ipyc_inner,
            self.ipyc_outer,
            self.sic_outer,
            self.opyc_outer,
        ]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    /// Mean intensity per class, indexed by class code.
    pub class_means: [f64; 7],
    /// Intensity standard deviation per class, indexed by class code.
    pub class_stds: [f64; 7],
    /// Additional white noise on every pixel.
    pub noise_sigma: f64,
    pub scale_um_per_px: f64,
    pub image_size: u32,
    pub include_opyc: bool,
    pub seed: u64,
    pub ranges: GeometryRanges,
    /// Range of |z_M| (μm).
    pub z_offset_range: [f64; 2],
    /// Give z_M a random sign; when false it is non-negative.
    pub z_offset_random_sign: bool,
    /// Range of the lowest section height (μm).
    pub first_height_range: [f64; 2],
    /// Range of the spacing between consecutive heights (μm).
    pub height_spacing_range: [f64; 2],
    /// Minimum difference between the |z| of any two sections (μm).
    pub min_abs_height_separation: f64,
    /// Standard deviation of the silhouette measurement (μm).
    pub silhouette_noise_sigma: f64,
    /// Angular width of an epoxy wedge cut into the buffer (degrees).
    pub buffer_wedge_deg: Option<f64>,
    /// Angular width of an arc removed from the OPyC (degrees).
    pub opyc_arc_deg: Option<f64>,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            class_means: [30.0, 70.0, 50.0, 20.0, 110.0, 190.0, 100.0],
            class_stds: [8.0; 7],
            noise_sigma: 0.0,
            scale_um_per_px: 1.0,
            image_size: 1024,
            include_opyc: false,
            seed: 0,
            ranges: GeometryRanges::default(),
            z_offset_range: [4.0, 15.0],
            z_offset_random_sign: true,
            first_height_range: [-150.0, -110.0],
            height_spacing_range: [55.0, 85.0],
            min_abs_height_separation: 5.0,
            silhouette_noise_sigma: 0.0,
            buffer_wedge_deg: None,
            opyc_arc_deg: None,
        }
    }
}

fn check_range(name: &str, r: [f64; 2]) -> Result<()> {
    if !(r[0].is_finite() && r[1].is_finite() && r[0] <= r[1]) {
        return Err(Error::InvalidConfig(format!("{name}: invalid range {r:?}")));
    }
    Ok(())
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        for (c, (&m, &s)) in self.class_means.iter().zip(&self.class_stds).enumerate() {
            if !(0.0..=255.0).contains(&m) || !(s >= 0.0 && s.is_finite()) {
                return Err(Error::InvalidConfig(format!(
                    "class {c}: mean {m} must lie in 0..=255 and std {s} must be non-negative"
                )));
            }
        }
        if self.class_means[ClassLabel::Sic.code() as usize]
            <= self.class_means[ClassLabel::Ipyc.code() as usize]
        {
            return Err(Error::InvalidConfig(
                "SiC mean intensity must exceed IPyC mean intensity".into(),
            ));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return Err(Error::InvalidConfig("noise_sigma must be non-negative".into()));
        }
        if !(self.silhouette_noise_sigma >= 0.0 && self.silhouette_noise_sigma.is_finite()) {
            return Err(Error::InvalidConfig(
                "silhouette_noise_sigma must be non-negative".into(),
            ));
        }
        if !(self.scale_um_per_px > 0.0 && self.scale_um_per_px.is_finite()) {
            return Err(Error::InvalidConfig("scale_um_per_px must be positive".into()));
        }
        if self.image_size == 0 {
            return Err(Error::InvalidConfig("image_size must be positive".into()));
        }
        let ranges = self.ranges.as_array();
        let used = if self.include_opyc { 6 } else { 5 };
        for (b, r) in LayerBoundary::ALL.iter().zip(&ranges).take(used) {
            check_range(b.name(), *r)?;
            if r[0] <= 0.0 {
                return Err(Error::InvalidConfig(format!("{b}: radii must be positive")));
            }
        }
        for k in 1..used {
            if ranges[k][1] <= ranges[k - 1][0] {
                return Err(Error::InvalidConfig(format!(
                    "{} range lies below the {} range",
                    LayerBoundary::ALL[k],
                    LayerBoundary::ALL[k - 1]
                )));
            }
        }
        check_range("z_offset_range", self.z_offset_range)?;
        if self.z_offset_range[0] < 0.0 {
            return Err(Error::InvalidConfig("z_offset_range is a magnitude range".into()));
        }
        check_range("first_height_range", self.first_height_range)?;
        check_range("height_spacing_range", self.height_spacing_range)?;
        if self.height_spacing_range[0] <= 0.0 {
            return Err(Error::InvalidConfig("height spacing must be positive".into()));
        }
        if !(self.min_abs_height_separation >= 0.0) {
            return Err(Error::InvalidConfig(
                "min_abs_height_separation must be non-negative".into(),
            ));
        }
        for (name, deg) in [("buffer_wedge_deg", self.buffer_wedge_deg), ("opyc_arc_deg", self.opyc_arc_deg)] {
            if let Some(d) = deg {
                if !(0.0..=360.0).contains(&d) {
                    return Err(Error::InvalidConfig(format!("{name} must lie in 0..=360")));
                }
            }
        }
        Ok(())
    }
}

/// One synthetic particle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthParticle {
    pub id: String,
    /// Position in the dataset; selects the particle's RNG streams.
    pub index: u64,
    pub geometry: ParticleGeometry<f64>,
    /// Section heights z_j (μm), strictly increasing.
    pub section_heights: [f64; SECTIONS],
    pub silhouette_radius: f64,
}

pub fn particle_id(index: u64) -> String {
    format!("p{index:04}")
}

fn uniform<R: Rng>(rng: &mut R, r: [f64; 2]) -> f64 {
    if r[0] == r[1] {
        r[0]
    } else {
        rng.random_range(r[0]..r[1])
    }
}

fn heights_separated(z: &[f64; SECTIONS], min_sep: f64) -> bool {
    (0..SECTIONS).all(|a| {
        ((a + 1)..SECTIONS).all(|b| {
            let d = (z[a].abs() - z[b].abs()).abs();
            d >= min_sep && d > 0.0
        })
    })
}

/// Draws a particle. Radii are drawn independently, sorted, and pushed
/// apart by at least [`MIN_LAYER_GAP_UM`]; draws violating containment of
/// the offset kernel/buffer, or whose section heights share an |z|, are
/// redrawn.
pub fn sample_particle<R: Rng>(cfg: &SynthConfig, index: u64, rng: &mut R) -> Result<SynthParticle> {
    cfg.validate()?;
    let used = if cfg.include_opyc { 6 } else { 5 };
    let ranges = cfg.ranges.as_array();

    let mut geometry = None;
    for _ in 0..MAX_ATTEMPTS {
        let mut r: Vec<f64> = ranges[..used].iter().map(|&rg| uniform(rng, rg)).collect();
        r.sort_by(f64::total_cmp);
        for k in 1..used {
            if r[k] < r[k - 1] + MIN_LAYER_GAP_UM {
                r[k] = r[k - 1] + MIN_LAYER_GAP_UM;
            }
        }
        let mut zm = uniform(rng, cfg.z_offset_range);
        if cfg.z_offset_random_sign && rng.random_bool(0.5) {
            zm = -zm;
        }
        let core = [r[0], r[1], r[2], r[3], r[4]];
        if let Ok(g) = ParticleGeometry::new(core, r.get(5).copied(), zm) {
            geometry = Some(g);
            break;
        }
    }
    let geometry = geometry.ok_or_else(|| {
        Error::InvalidConfig("geometry ranges cannot satisfy layer containment".into())
    })?;

    let mut heights = None;
    for _ in 0..MAX_ATTEMPTS {
        let mut z = [uniform(rng, cfg.first_height_range); SECTIONS];
        for j in 1..SECTIONS {
            z[j] = z[j - 1] + uniform(rng, cfg.height_spacing_range);
        }
        if heights_separated(&z, cfg.min_abs_height_separation) {
            heights = Some(z);
            break;
        }
    }
    let section_heights = heights.ok_or_else(|| {
        Error::InvalidConfig("height ranges cannot give four distinct |z| values".into())
    })?;

    let mut silhouette_radius = geometry.outer_radius();
    if cfg.silhouette_noise_sigma > 0.0 {
        let n = Normal::new(0.0, cfg.silhouette_noise_sigma).expect("validated sigma");
        silhouette_radius += n.sample(rng);
    }
    Ok(SynthParticle {
        id: particle_id(index),
        index,
        geometry,
        section_heights,
        silhouette_radius,
    })
}

/// Samples particle `index` from its own stream of `cfg.seed`.
pub fn sample_indexed(cfg: &SynthConfig, index: u64) -> Result<SynthParticle> {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, index));
    sample_particle(cfg, index, &mut rng)
}

/// Exact cross-sectional radii of the particle's four sections. Tangent
/// and missed boundaries are recorded as unobserved.
pub fn observations(p: &SynthParticle) -> Result<ObservationSet<f64>> {
    let planes = p.section_heights.map(SectionPlane::new);
    let table = predict_all(&p.geometry, &planes)?;
    let mut sections = [SectionObservation::default(); SECTIONS];
    for (j, s) in sections.iter_mut().enumerate() {
        for b in p.geometry.boundaries() {
            let x = table.get(b, j).filter(|&x| x > 0.0);
            s.set(b, x);
        }
    }
    ObservationSet::new(
        p.id.clone(),
        p.geometry.has_opyc(),
        Some(p.silhouette_radius),
        sections,
    )
}

/// Class of a pixel at squared distance `d2` (px²) from the center, given
/// squared section radii (px²) per boundary, innermost first.
fn classify(d2: f64, r2: &[Option<f64>; 6]) -> ClassLabel {
    const INSIDE: [ClassLabel; 6] = [
        ClassLabel::Kernel,
        ClassLabel::Buffer,
        ClassLabel::Epoxy,
        ClassLabel::Ipyc,
        ClassLabel::Sic,
        ClassLabel::Opyc,
    ];
    for (k, r) in r2.iter().enumerate() {
        if let Some(r) = *r {
            if d2 < r {
                return INSIDE[k];
            }
        }
    }
    ClassLabel::Background
}

fn in_wedge(dx: f64, dy: f64, deg: Option<f64>) -> bool {
    match deg {
        Some(w) if w > 0.0 => dy.atan2(dx).rem_euclid(std::f64::consts::TAU).to_degrees() < w,
        _ => false,
    }
}

/// Renders section `j`: the exact label mask and its grayscale image.
pub fn render_section(p: &SynthParticle, j: usize, cfg: &SynthConfig) -> Result<(GrayImage, LabeledMask)> {
    if j >= SECTIONS {
        return Err(Error::InvalidInput(format!("section index {j} out of range")));
    }
    cfg.validate()?;
    let z = p.section_heights[j];
    let scale = cfg.scale_um_per_px;
    let size = cfg.image_size;
    let half = f64::from(size) / 2.0;

    let mut r2 = [None; 6];
    for b in p.geometry.boundaries() {
        if let Some(x) = predict_radius(&p.geometry, b, SectionPlane::new(z))? {
            let px = x / scale;
            if px > half {
                return Err(Error::SectionOutOfBounds {
                    radius_px: px,
                    half_extent_px: half,
                });
            }
            r2[b.index()] = Some(px * px);
        }
    }

    let mut mask = LabeledMask::new(size, size, scale)?;
    for y in 0..size {
        let dy = f64::from(y) + 0.5 - half;
        for x in 0..size {
            let dx = f64::from(x) + 0.5 - half;
            let mut c = classify(dx * dx + dy * dy, &r2);
            if c == ClassLabel::Buffer && in_wedge(dx, dy, cfg.buffer_wedge_deg) {
                c = ClassLabel::Epoxy;
            } else if c == ClassLabel::Opyc && in_wedge(dx, dy, cfg.opyc_arc_deg) {
                c = ClassLabel::Background;
            }
            if c != ClassLabel::Background {
                mask.set(x, y, c);
            }
        }
    }

    let seed = derive_seed(derive_seed(cfg.seed, p.index), j as u64 + 1);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let white = (cfg.noise_sigma > 0.0).then(|| Normal::new(0.0, cfg.noise_sigma).expect("validated"));
    let class_noise: Vec<Option<Normal<f64>>> = cfg
        .class_stds
        .iter()
        .map(|&s| (s > 0.0).then(|| Normal::new(0.0, s).expect("validated")))
        .collect();
    let img = GrayImage::from_fn(size, size, |x, y| {
        let c = mask.get(x, y).code() as usize;
        let mut v = cfg.class_means[c];
        if let Some(n) = &class_noise[c] {
            v += n.sample(&mut rng);
        }
        if let Some(n) = &white {
            v += n.sample(&mut rng);
        }
        Luma([v.round().clamp(0.0, 255.0) as u8])
    });
    Ok((img, mask))
}

/// Contents of `truth.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParticleTruth {
    pub id: String,
    pub geometry: ParticleGeometry<f64>,
    pub section_heights: [f64; SECTIONS],
    pub silhouette_um: f64,
    pub observations: ObservationSet<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    /// SHA-256 per file, keyed by path relative to the dataset root.
    pub files: BTreeMap<String, String>,
}

/// Contents of `manifest.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub n_particles: usize,
    pub n_sections: usize,
    pub seed: u64,
    pub config: SynthConfig,
    pub particles: Vec<ManifestEntry>,
    /// SHA-256 over every file path and digest, in manifest order.
    pub digest: String,
}

pub const MANIFEST_FILE: &str = "manifest.json";
pub const PARTICLES_DIR: &str = "particles";

pub fn section_stem(j: usize) -> String {
    format!("section_{j}")
}

fn write_particle(root: &Path, p: &SynthParticle, cfg: &SynthConfig) -> Result<ManifestEntry> {
    let rel_dir = format!("{PARTICLES_DIR}/{}", p.id);
    let dir = root.join(&rel_dir);
    let mut files = BTreeMap::new();
    for j in 0..SECTIONS {
        let (img, mask) = render_section(p, j, cfg)?;
        let stem = section_stem(j);
        let img_rel = format!("{rel_dir}/{stem}.pgm");
        files.insert(img_rel.clone(), io::write_gray(&root.join(&img_rel), &img)?);
        let sidecar = MaskSidecar {
            scale_um_per_px: cfg.scale_um_per_px,
            source_id: format!("{}/{stem}", p.id),
            section: Some(j),
            z_um: Some(p.section_heights[j]),
            silhouette_um: Some(p.silhouette_radius),
        };
        let mask_rel = format!("{rel_dir}/{stem}.mask.pgm");
        let (m, s) = io::write_mask(&root.join(&mask_rel), &mask, &sidecar)?;
        files.insert(mask_rel, m);
        files.insert(format!("{rel_dir}/{stem}.meta.json"), s);
    }
    let truth = ParticleTruth {
        id: p.id.clone(),
        geometry: p.geometry.clone(),
        section_heights: p.section_heights,
        silhouette_um: p.silhouette_radius,
        observations: observations(p)?,
    };
    let truth_rel = format!("{rel_dir}/truth.json");
    files.insert(truth_rel.clone(), io::write_json(&dir.join("truth.json"), &truth)?);
    Ok(ManifestEntry {
        id: p.id.clone(),
        files,
    })
}

/// Writes `n` particles under `root` and returns the manifest, which is
/// also written to `root/manifest.json`. Output is byte-identical for a
/// fixed configuration regardless of the rayon pool size.
pub fn generate_dataset(n: usize, cfg: &SynthConfig, root: &Path) -> Result<DatasetManifest> {
    if n == 0 {
        return Err(Error::InvalidConfig("particle count must be at least 1".into()));
    }
    cfg.validate()?;
    std::fs::create_dir_all(root).map_err(|e| Error::io(root, e))?;
    let particles = (0..n as u64)
        .into_par_iter()
        .map(|i| {
            let p = sample_indexed(cfg, i)?;
            write_particle(root, &p, cfg)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut all = String::new();
    for e in &particles {
        for (path, d) in &e.files {
            all.push_str(path);
            all.push(' ');
            all.push_str(d);
            all.push('\n');
        }
    }
    let manifest = DatasetManifest {
        n_particles: n,
        n_sections: SECTIONS,
        seed: cfg.seed,
        config: cfg.clone(),
        particles,
        digest: io::sha256_hex(all.as_bytes()),
    };
    io::write_json(&root.join(MANIFEST_FILE), &manifest)?;
    Ok(manifest)
}
