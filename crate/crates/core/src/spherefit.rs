//! Maximum-likelihood recovery of a particle's spherical radii, section
//! heights and kernel offset from the circle radii seen in four sections.
//!
//! Every observed cross-sectional radius is modeled as the nested-sphere
//! prediction plus independent Gaussian noise of one common variance, so the
//! likelihood maximizer is the nonlinear least-squares solution. The solver
//! is a Levenberg–Marquardt descent over a reparameterization that keeps the
//! radii strictly ordered (log-increments), restarted from several starting
//! points to escape the sign ambiguities of the section heights.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{section_radius, LayerBoundary, ParticleGeometry};
use crate::linalg::{cholesky_solve, least_squares};
use crate::scalar::Real;

pub const SECTIONS: usize = 4;

/// Radii (μm) observed for each boundary in one section; `None` = not seen.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct SectionObservation<T> {
    pub kernel: Option<T>,
    pub buffer: Option<T>,
    pub ipyc_inner: Option<T>,
    pub ipyc_outer: Option<T>,
    pub sic_outer: Option<T>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub opyc_outer: Option<T>,
}

impl<T: Copy> SectionObservation<T> {
    pub fn get(&self, boundary: LayerBoundary) -> Option<T> {
        match boundary {
            LayerBoundary::KernelOuter => self.kernel,
            LayerBoundary::BufferOuter => self.buffer,
            LayerBoundary::IpycInner => self.ipyc_inner,
            LayerBoundary::IpycOuter => self.ipyc_outer,
            LayerBoundary::SicOuter => self.sic_outer,
            LayerBoundary::OpycOuter => self.opyc_outer,
        }
    }

    pub fn set(&mut self, boundary: LayerBoundary, value: Option<T>) {
        let slot = match boundary {
            LayerBoundary::KernelOuter => &mut self.kernel,
            LayerBoundary::BufferOuter => &mut self.buffer,
            LayerBoundary::IpycInner => &mut self.ipyc_inner,
            LayerBoundary::IpycOuter => &mut self.ipyc_outer,
            LayerBoundary::SicOuter => &mut self.sic_outer,
            LayerBoundary::OpycOuter => &mut self.opyc_outer,
        };
        *slot = value;
    }
}

/// Cross-sectional radii of one particle in its four sections.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(
    try_from = "ObservationRecord<T>",
    into = "ObservationRecord<T>",
    bound(
        serialize = "T: Real + Serialize",
        deserialize = "T: Real + Deserialize<'de>"
    )
)]
pub struct ObservationSet<T> {
    pub id: String,
    has_opyc: bool,
    silhouette: Option<T>,
    sections: [SectionObservation<T>; SECTIONS],
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ObservationRecord<T> {
    id: String,
    has_opyc: bool,
    silhouette_um: Option<T>,
    sections: Vec<SectionObservation<T>>,
}

impl<T: Real> TryFrom<ObservationRecord<T>> for ObservationSet<T> {
    type Error = Error;

    fn try_from(r: ObservationRecord<T>) -> Result<Self> {
        let sections: [SectionObservation<T>; SECTIONS] =
            r.sections.try_into().map_err(|v: Vec<_>| {
                Error::InvalidObservations(format!("expected 4 sections, got {}", v.len()))
            })?;
        ObservationSet::new(r.id, r.has_opyc, r.silhouette_um, sections)
    }
}

impl<T: Real> From<ObservationSet<T>> for ObservationRecord<T> {
    fn from(o: ObservationSet<T>) -> Self {
        ObservationRecord {
            id: o.id,
            has_opyc: o.has_opyc,
            silhouette_um: o.silhouette,
            sections: o.sections.to_vec(),
        }
    }
}

impl<T: Real> ObservationSet<T> {
    pub fn new(
        id: impl Into<String>,
        has_opyc: bool,
        silhouette: Option<T>,
        sections: [SectionObservation<T>; SECTIONS],
    ) -> Result<Self> {
        let id = id.into();
        for (j, s) in sections.iter().enumerate() {
            for b in LayerBoundary::ALL {
                if let Some(x) = s.get(b) {
                    if !x.is_finite() || x <= T::zero() {
                        return Err(Error::InvalidObservations(format!(
                            "{id}: section {j} {b} radius must be positive, got {x}"
                        )));
                    }
                }
            }
            if !has_opyc && s.opyc_outer.is_some() {
                return Err(Error::InvalidObservations(format!(
                    "{id}: OPyC observation in section {j} of a particle without OPyC"
                )));
            }
        }
        if let Some(s) = silhouette {
            if !s.is_finite() || s <= T::zero() {
                return Err(Error::InvalidObservations(format!(
                    "{id}: silhouette radius must be positive, got {s}"
                )));
            }
        }
        Ok(Self {
            id,
            has_opyc,
            silhouette,
            sections,
        })
    }

    pub fn has_opyc(&self) -> bool {
        self.has_opyc
    }

    pub fn silhouette(&self) -> Option<T> {
        self.silhouette
    }

    pub fn sections(&self) -> &[SectionObservation<T>; SECTIONS] {
        &self.sections
    }

    /// Boundaries carried by the model for this particle, innermost first.
    pub fn boundaries(&self) -> &'static [LayerBoundary] {
        if self.has_opyc {
            &LayerBoundary::ALL
        } else {
            &LayerBoundary::CORE
        }
    }

    pub fn get(&self, section: usize, boundary: LayerBoundary) -> Option<T> {
        self.sections[section].get(boundary)
    }

    /// (section, boundary) pairs with no observed radius.
    pub fn missing(&self) -> Vec<(usize, LayerBoundary)> {
        (0..SECTIONS)
            .flat_map(|j| self.boundaries().iter().map(move |&b| (j, b)))
            .filter(|&(j, b)| self.get(j, b).is_none())
            .collect()
    }

    pub fn is_complete(&self) -> bool {
        self.missing().is_empty()
    }

    /// Same particle with its sections listed in a different order.
    pub fn permuted(&self, order: [usize; SECTIONS]) -> Self {
        Self {
            sections: order.map(|j| self.sections[j]),
            ..self.clone()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitConfig {
    pub max_iterations: usize,
    /// Relative decrease of the objective below which a step counts as converged.
    pub tolerance: f64,
    pub multistart_count: usize,
    pub require_complete: bool,
    pub silhouette_weight: f64,
    pub seed: u64,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            max_iterations: 500,
            tolerance: 1e-10,
            multistart_count: 24,
            require_complete: true,
            silhouette_weight: 1.0,
            seed: 0,
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tolerance > 0.0) {
            return Err(Error::InvalidConfig("tolerance must be positive".into()));
        }
        if self.multistart_count == 0 {
            return Err(Error::InvalidConfig("multistart_count must be at least 1".into()));
        }
        if self.max_iterations == 0 {
            return Err(Error::InvalidConfig("max_iterations must be at least 1".into()));
        }
        if !(self.silhouette_weight >= 0.0) {
            return Err(Error::InvalidConfig("silhouette_weight must be non-negative".into()));
        }
        Ok(())
    }
}

/// Outcome of fitting one particle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound(
    serialize = "T: Real + Serialize",
    deserialize = "T: Real + Deserialize<'de>"
))]
pub struct FitResult<T> {
    pub geometry: ParticleGeometry<T>,
    /// Section heights in non-decreasing order, canonical sign (z_offset ≥ 0).
    pub section_heights: [T; SECTIONS],
    /// Input section index of each entry of `section_heights`.
    pub section_order: [usize; SECTIONS],
    pub residual_rms: T,
    pub converged: bool,
    pub iterations: usize,
    pub n_observations: usize,
    pub n_parameters: usize,
}

impl<T: Real> FitResult<T> {
    /// Height fitted for the section at input position `section`.
    pub fn height_of_section(&self, section: usize) -> T {
        let k = self
            .section_order
            .iter()
            .position(|&j| j == section)
            .expect("section index in range");
        self.section_heights[k]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum FitStatus {
    Ok,
    Incomplete,
    Nonconverged,
    Degenerate,
}

impl FitStatus {
    pub fn code(self) -> &'static str {
        match self {
            FitStatus::Ok => "OK",
            FitStatus::Incomplete => "INCOMPLETE",
            FitStatus::Nonconverged => "NONCONVERGED",
            FitStatus::Degenerate => "DEGENERATE",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound(
    serialize = "T: Real + Serialize",
    deserialize = "T: Real + Deserialize<'de>"
))]
pub struct BatchRecord<T> {
    pub id: String,
    pub status: FitStatus,
    /// Present for OK and NONCONVERGED records.
    pub result: Option<FitResult<T>>,
    pub reason: Option<String>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct BatchSummary {
    pub attempted: usize,
    pub converged: usize,
    pub failed_incomplete: usize,
    pub failed_nonconverged: usize,
    pub failed_degenerate: usize,
}

impl BatchSummary {
    /// (attempted, converged, failed-incomplete, failed-nonconverged).
    pub fn counts(&self) -> (usize, usize, usize, usize) {
        (
            self.attempted,
            self.converged,
            self.failed_incomplete,
            self.failed_nonconverged,
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound(
    serialize = "T: Real + Serialize",
    deserialize = "T: Real + Deserialize<'de>"
))]
pub struct BatchOutcome<T> {
    pub summary: BatchSummary,
    pub records: Vec<BatchRecord<T>>,
}

// ---------------------------------------------------------------------------
// Residual model

#[derive(Debug, Clone, Copy)]
enum Entry<T> {
    Present { section: usize, slot: usize, value: T },
    Absent { section: usize, slot: usize },
    Silhouette { value: T },
}

/// Residual layout for one observation set. Natural parameters are
/// `[r_0 .. r_{k-1}, z_0 .. z_3, z_offset]` with one radius per modeled boundary.
struct Model<'a, T> {
    boundaries: &'a [LayerBoundary],
    entries: Vec<Entry<T>>,
    weight: T,
}

impl<'a, T: Real> Model<'a, T> {
    fn new(obs: &'a ObservationSet<T>, cfg: &FitConfig) -> Self {
        let boundaries = obs.boundaries();
        let mut entries = Vec::new();
        for section in 0..SECTIONS {
            for (slot, &b) in boundaries.iter().enumerate() {
                entries.push(match obs.get(section, b) {
                    Some(value) => Entry::Present {
                        section,
                        slot,
                        value,
                    },
                    None => Entry::Absent { section, slot },
                });
            }
        }
        if !obs.has_opyc() {
            if let Some(value) = obs.silhouette() {
                entries.push(Entry::Silhouette { value });
            }
        }
        Self {
            boundaries,
            entries,
            weight: T::lit(cfg.silhouette_weight),
        }
    }

    fn n_radii(&self) -> usize {
        self.boundaries.len()
    }

    fn n_params(&self) -> usize {
        self.n_radii() + SECTIONS + 1
    }

    fn sic_slot(&self) -> usize {
        LayerBoundary::SicOuter.index()
    }

    /// Residuals at natural parameters `theta`, and optionally the Jacobian
    /// with respect to `theta` (row-major, one row per residual).
    fn evaluate(&self, theta: &[T], mut jac: Option<&mut Vec<T>>) -> Vec<T> {
        let nr = self.n_radii();
        let n = self.n_params();
        let zm_idx = nr + SECTIONS;
        let zm = theta[zm_idx];
        let mut res = Vec::with_capacity(self.entries.len());
        if let Some(j) = jac.as_deref_mut() {
            j.clear();
            j.resize(self.entries.len() * n, T::zero());
        }
        for (row, entry) in self.entries.iter().enumerate() {
            let mut grad = |col: usize, v: T| {
                if let Some(j) = jac.as_deref_mut() {
                    j[row * n + col] = j[row * n + col] + v;
                }
            };
            match *entry {
                Entry::Silhouette { value } => {
                    let s = self.sic_slot();
                    res.push(self.weight * (theta[s] - value));
                    grad(s, self.weight);
                }
                Entry::Present {
                    section,
                    slot,
                    value,
                } => {
                    let b = self.boundaries[slot];
                    let r = theta[slot];
                    let center = if b.is_concentric() { T::zero() } else { zm };
                    let d = theta[nr + section] - center;
                    let x = section_radius(r, center, theta[nr + section]);
                    match x {
                        Some(x) if x > T::zero() => {
                            res.push(x - value);
                            grad(slot, r / x);
                            grad(nr + section, -d / x);
                            if !b.is_concentric() {
                                grad(zm_idx, d / x);
                            }
                        }
                        _ => {
                            // plane misses (or grazes) the sphere: extend the
                            // prediction linearly below zero by the overshoot
                            let s = if d >= T::zero() { T::one() } else { -T::one() };
                            res.push(r - d.abs() - value);
                            grad(slot, T::one());
                            grad(nr + section, -s);
                            if !b.is_concentric() {
                                grad(zm_idx, s);
                            }
                        }
                    }
                }
                Entry::Absent { section, slot } => {
                    let b = self.boundaries[slot];
                    let center = if b.is_concentric() { T::zero() } else { zm };
                    let d = theta[nr + section] - center;
                    let overshoot = theta[slot] - d.abs();
                    if overshoot > T::zero() {
                        let s = if d >= T::zero() { T::one() } else { -T::one() };
                        res.push(overshoot);
                        grad(slot, T::one());
                        grad(nr + section, -s);
                        if !b.is_concentric() {
                            grad(zm_idx, s);
                        }
                    } else {
                        res.push(T::zero());
                    }
                }
            }
        }
        res
    }
}

/// Residual vector (μm) of `geom` and `heights` against `obs`: one entry per
/// modeled (section, boundary) pair, plus the weighted silhouette term for
/// particles without OPyC. Present observations give predicted − observed;
/// a plane that misses its sphere yields −(observed + overshoot). Missing
/// observations give how far the sphere reaches past the plane (zero when
/// the plane misses it, as the observation says).
pub fn residuals<T: Real>(
    geom: &ParticleGeometry<T>,
    heights: &[T; SECTIONS],
    obs: &ObservationSet<T>,
    cfg: &FitConfig,
) -> Result<Vec<T>> {
    if geom.has_opyc() != obs.has_opyc() {
        return Err(Error::InvalidInput(format!(
            "geometry has_opyc={} but observations has_opyc={}",
            geom.has_opyc(),
            obs.has_opyc()
        )));
    }
    let model = Model::new(obs, cfg);
    let theta = natural_params(geom, heights);
    Ok(model.evaluate(&theta, None))
}

fn natural_params<T: Real>(geom: &ParticleGeometry<T>, heights: &[T; SECTIONS]) -> Vec<T> {
    let mut theta: Vec<T> = geom.boundaries().map(|b| geom.radius(b).unwrap()).collect();
    theta.extend_from_slice(heights);
    theta.push(geom.z_offset());
    theta
}

fn objective<T: Real>(res: &[T]) -> T {
    res.iter().fold(T::zero(), |acc, &r| acc + r * r) * T::lit(0.5)
}

// ---------------------------------------------------------------------------
// Ordered-radius reparameterization: r_k = Σ_{m ≤ k} exp(u_m).

fn to_unconstrained<T: Real>(theta: &[T], nr: usize, min_increment: T) -> Vec<T> {
    let mut p = theta.to_vec();
    let mut prev = T::zero();
    for k in 0..nr {
        let inc = (theta[k] - prev).max(min_increment);
        p[k] = inc.ln();
        prev = prev + inc;
    }
    p
}

fn to_natural<T: Real>(p: &[T], nr: usize) -> Vec<T> {
    let mut theta = p.to_vec();
    let mut acc = T::zero();
    for k in 0..nr {
        acc = acc + p[k].exp();
        theta[k] = acc;
    }
    theta
}

/// Converts a Jacobian with respect to natural parameters into one with
/// respect to the unconstrained parameters.
fn chain_jacobian<T: Real>(jac: &mut [T], p: &[T], nr: usize, n: usize) {
    let rows = jac.len() / n;
    for row in jac.chunks_mut(n).take(rows) {
        // dr_k/du_m = exp(u_m) for k ≥ m: suffix sums over radius columns
        let mut suffix = T::zero();
        for m in (0..nr).rev() {
            suffix = suffix + row[m];
            row[m] = suffix * p[m].exp();
        }
    }
}

// ---------------------------------------------------------------------------
// Levenberg–Marquardt

struct LmOutcome<T> {
    theta: Vec<T>,
    cost: T,
    converged: bool,
    iterations: usize,
}

/// Largest cosine between the residual vector and any Jacobian column.
fn orthogonality<T: Real>(g: &[T], diag: &[T], rnorm: T) -> T {
    g.iter().zip(diag).fold(T::zero(), |acc, (&gi, &di)| {
        let denom = di.sqrt() * rnorm;
        if denom > T::zero() {
            acc.max(gi.abs() / denom)
        } else {
            acc
        }
    })
}

fn levenberg_marquardt<T: Real>(
    model: &Model<'_, T>,
    theta0: &[T],
    cfg: &FitConfig,
    scale: T,
) -> LmOutcome<T> {
    let nr = model.n_radii();
    let n = model.n_params();
    let min_inc = scale * T::lit(1e-4);
    let mut p = to_unconstrained(theta0, nr, min_inc);
    let mut jac = Vec::new();
    let mut res = model.evaluate(&to_natural(&p, nr), Some(&mut jac));
    chain_jacobian(&mut jac, &p, nr, n);
    let mut cost = objective(&res);
    let m = res.len();

    let tol = T::lit(cfg.tolerance);
    let cost_floor = T::lit(0.5 * m as f64) * (scale * T::lit(1e-10)).powi(2);
    let gtol = T::lit(1e-10);
    let mut lambda = T::lit(1e-3);
    let mut converged = false;
    let mut iterations = 0;

    let mut a = vec![T::zero(); n * n];
    let mut g = vec![T::zero(); n];
    while iterations < cfg.max_iterations {
        if cost <= cost_floor {
            converged = true;
            break;
        }
        a.iter_mut().for_each(|v| *v = T::zero());
        g.iter_mut().for_each(|v| *v = T::zero());
        for row in 0..m {
            let jr = &jac[row * n..(row + 1) * n];
            for i in 0..n {
                g[i] = g[i] + jr[i] * res[row];
                for k in 0..n {
                    a[i * n + k] = a[i * n + k] + jr[i] * jr[k];
                }
            }
        }
        let diag: Vec<T> = (0..n).map(|i| a[i * n + i]).collect();
        let cosine = orthogonality(&g, &diag, (cost + cost).sqrt());
        if cosine <= gtol {
            converged = true;
            break;
        }
        let diag_floor = diag.iter().fold(T::zero(), |acc, &d| acc.max(d)) * T::lit(1e-12);

        iterations += 1;
        let mut accepted = false;
        while lambda < T::lit(1e16) {
            let mut mat = a.clone();
            let mut step: Vec<T> = g.iter().map(|&v| -v).collect();
            for i in 0..n {
                mat[i * n + i] = mat[i * n + i] + lambda * diag[i].max(diag_floor);
            }
            if !cholesky_solve(&mut mat, &mut step, n) {
                lambda = lambda * T::lit(10.0);
                continue;
            }
            let p_new: Vec<T> = p.iter().zip(&step).map(|(&a, &b)| a + b).collect();
            let theta_new = to_natural(&p_new, nr);
            let mut jac_new = Vec::new();
            let res_new = model.evaluate(&theta_new, Some(&mut jac_new));
            let cost_new = objective(&res_new);
            if cost_new.is_finite() && cost_new <= cost && theta_new.iter().all(|v| v.is_finite()) {
                let decrease = cost - cost_new;
                chain_jacobian(&mut jac_new, &p_new, nr, n);
                p = p_new;
                res = res_new;
                jac = jac_new;
                cost = cost_new;
                lambda = (lambda / T::lit(3.0)).max(T::lit(1e-12));
                accepted = true;
                if decrease <= tol * (cost + decrease) && cosine <= T::lit(1e-4) {
                    converged = true;
                }
                break;
            }
            lambda = lambda * T::lit(4.0);
        }
        if converged {
            break;
        }
        if !accepted {
            // stalled: no descent direction left at representable step sizes
            converged = cosine <= T::lit(1e-6) || cost <= cost_floor * T::lit(1e6);
            break;
        }
    }
    LmOutcome {
        theta: to_natural(&p, nr),
        cost,
        converged,
        iterations,
    }
}

// ---------------------------------------------------------------------------
// Starting points

/// Starting point prescribed for the first solver run: each radius at the
/// largest radius observed for its boundary, the OPyC radius at the
/// silhouette radius, evenly spaced symmetric heights spanning ±half the
/// smallest observed SiC radius, and no kernel offset.
pub fn initial_guess<T: Real>(
    obs: &ObservationSet<T>,
    cfg: &FitConfig,
) -> Result<(ParticleGeometry<T>, [T; SECTIONS])> {
    let boundaries = obs.boundaries();
    let maxima: Vec<Option<T>> = boundaries
        .iter()
        .map(|&b| {
            (0..SECTIONS)
                .filter_map(|j| obs.get(j, b))
                .fold(None, |acc: Option<T>, x| Some(acc.map_or(x, |a| a.max(x))))
        })
        .collect();
    if cfg.require_complete {
        if let Some(k) = maxima.iter().position(Option::is_none) {
            return Err(Error::IncompleteObservations(format!(
                "{}: no observation of {} in any section",
                obs.id, boundaries[k]
            )));
        }
    }
    let mut radii: Vec<Option<T>> = maxima;
    if obs.has_opyc() {
        if let Some(s) = obs.silhouette() {
            radii[LayerBoundary::OpycOuter.index()] = Some(s);
        }
    }
    let scale = particle_scale(obs);
    let radii = fill_ordered(&radii, scale * T::lit(1e-3), scale);
    let geom = ParticleGeometry::new_non_physical(
        radii[..5].try_into().unwrap(),
        obs.has_opyc().then(|| radii[5]),
        T::zero(),
    )?;
    let geom = if geom.is_contained() {
        ParticleGeometry::new(geom.core_radii(), geom.radius(LayerBoundary::OpycOuter), T::zero())?
    } else {
        geom
    };

    let min_sic = (0..SECTIONS)
        .filter_map(|j| obs.get(j, LayerBoundary::SicOuter))
        .fold(None, |acc: Option<T>, x| Some(acc.map_or(x, |a| a.min(x))))
        .unwrap_or(scale);
    let h = min_sic * T::lit(0.5);
    let third = T::lit(1.0 / 3.0);
    Ok((geom, [-h, -h * third, h * third, h]))
}

/// Largest observed radius, the silhouette included.
fn particle_scale<T: Real>(obs: &ObservationSet<T>) -> T {
    let mut s = obs.silhouette().unwrap_or(T::zero());
    for j in 0..SECTIONS {
        for &b in obs.boundaries() {
            if let Some(x) = obs.get(j, b) {
                s = s.max(x);
            }
        }
    }
    if s > T::zero() {
        s
    } else {
        T::one()
    }
}

/// Fills unknown radii between their neighbors and forces strict ordering.
fn fill_ordered<T: Real>(radii: &[Option<T>], min_inc: T, scale: T) -> Vec<T> {
    let n = radii.len();
    let mut out = vec![T::zero(); n];
    for k in 0..n {
        out[k] = match radii[k] {
            Some(r) => r,
            None => {
                let prev = if k > 0 { Some(out[k - 1]) } else { None };
                let next = radii[k + 1..].iter().flatten().next().copied();
                match (prev, next) {
                    (Some(p), Some(nx)) => (p + nx) * T::lit(0.5),
                    (None, Some(nx)) => nx * T::lit(0.5),
                    (Some(p), None) => p + min_inc,
                    (None, None) => scale * T::lit(0.5),
                }
            }
        };
        if k > 0 && out[k] < out[k - 1] + min_inc {
            out[k] = out[k - 1] + min_inc;
        }
    }
    out
}

/// Starting points from the closed-form structure of the model: squared
/// heights from the concentric shells, then for every sign pattern of the
/// heights the kernel offset and offset radii from a linear least-squares
/// solve.
fn structured_starts<T: Real>(obs: &ObservationSet<T>, scale: T) -> Vec<Vec<T>> {
    let boundaries = obs.boundaries();
    let nr = boundaries.len();

    // z_j² = r_i² − x_ij² for every concentric shell i: estimate z_j² up to a
    // common constant from the section-to-section variation of x².
    let concentric: Vec<LayerBoundary> = boundaries
        .iter()
        .copied()
        .filter(|b| b.is_concentric())
        .filter(|&b| (0..SECTIONS).all(|j| obs.get(j, b).is_some()))
        .collect();
    let mut zsq = [T::zero(); SECTIONS];
    if !concentric.is_empty() {
        for &b in &concentric {
            let q: Vec<T> = (0..SECTIONS)
                .map(|j| obs.get(j, b).unwrap().powi(2))
                .collect();
            let mean = q.iter().fold(T::zero(), |a, &v| a + v) / T::lit(SECTIONS as f64);
            for j in 0..SECTIONS {
                zsq[j] = zsq[j] - (q[j] - mean) / T::lit(concentric.len() as f64);
            }
        }
        let outer = if obs.has_opyc() {
            LayerBoundary::OpycOuter
        } else {
            LayerBoundary::SicOuter
        };
        let anchored = obs
            .silhouette()
            .filter(|_| concentric.contains(&outer))
            .map(|s| {
                (0..SECTIONS)
                    .map(|j| s * s - obs.get(j, outer).unwrap().powi(2) - zsq[j])
                    .fold(T::zero(), |a, v| a + v)
                    / T::lit(SECTIONS as f64)
            });
        let c = match anchored {
            Some(c) => c,
            None => -zsq.iter().fold(T::infinity(), |a, &v| a.min(v)),
        };
        for v in &mut zsq {
            *v = (*v + c).max(T::zero());
        }
    }
    let magnitude = zsq.map(|v| v.sqrt());

    let mut starts = Vec::with_capacity(16);
    for pattern in 0..16u32 {
        let z: [T; SECTIONS] = std::array::from_fn(|j| {
            if pattern & (1 << j) != 0 {
                -magnitude[j]
            } else {
                magnitude[j]
            }
        });
        // (z_j − z_M)² = r_b² − x_bj²  ⇔  −2 z_j z_M + c_b = −x_bj² − z_j²,
        // with c_b = z_M² − r_b², linear in (z_M, c_kernel, c_buffer).
        let offset: Vec<LayerBoundary> = boundaries
            .iter()
            .copied()
            .filter(|b| !b.is_concentric())
            .collect();
        let mut rows = Vec::new();
        let mut y = Vec::new();
        for (k, &b) in offset.iter().enumerate() {
            for j in 0..SECTIONS {
                if let Some(x) = obs.get(j, b) {
                    let mut row = vec![T::zero(); 1 + offset.len()];
                    row[0] = T::lit(-2.0) * z[j];
                    row[1 + k] = T::one();
                    rows.push(row);
                    y.push(-x * x - z[j] * z[j]);
                }
            }
        }
        let solved = least_squares(&rows, &y, 1 + offset.len());
        let zm = solved
            .as_ref()
            .map(|s| s[0])
            .filter(|v| v.is_finite() && v.abs() < scale)
            .unwrap_or(T::zero());

        let mut radii: Vec<Option<T>> = Vec::with_capacity(nr);
        for &b in boundaries {
            let center = if b.is_concentric() { T::zero() } else { zm };
            let samples: Vec<T> = (0..SECTIONS)
                .filter_map(|j| obs.get(j, b).map(|x| x * x + (z[j] - center).powi(2)))
                .collect();
            radii.push(if samples.is_empty() {
                None
            } else {
                let mean = samples.iter().fold(T::zero(), |a, &v| a + v)
                    / T::lit(samples.len() as f64);
                Some(mean.sqrt())
            });
        }
        let radii = fill_ordered(&radii, scale * T::lit(1e-3), scale);
        let mut theta = radii;
        theta.extend_from_slice(&z);
        theta.push(zm);
        starts.push(theta);
    }
    starts
}

/// Deterministic per-item seed derived from a batch seed and an index.
pub fn derive_seed(seed: u64, index: u64) -> u64 {
    // splitmix64 finalizer
    let mut z = seed ^ index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn candidate_starts<T: Real>(
    obs: &ObservationSet<T>,
    cfg: &FitConfig,
    first: Vec<T>,
    scale: T,
) -> Vec<Vec<T>> {
    let structured = structured_starts(obs, scale);
    let mut starts = vec![first];
    starts.extend(structured.iter().cloned());
    starts.truncate(cfg.multistart_count);
    if starts.len() < cfg.multistart_count {
        let nr = obs.boundaries().len();
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let jitter = Normal::new(0.0, 0.1 * scale.to_f64_lossy()).expect("finite jitter scale");
        let mut k = 0;
        while starts.len() < cfg.multistart_count {
            let mut theta = structured[k % structured.len()].clone();
            for v in &mut theta[nr..] {
                *v = *v + T::lit(jitter.sample(&mut rng));
            }
            starts.push(theta);
            k += 1;
        }
    }
    starts
}

// ---------------------------------------------------------------------------
// Public fitting entry points

/// Fits the nested-sphere model to one particle.
///
/// Returns `Ok` with `converged == false` when the iteration budget runs out;
/// incomplete observation sets (under `require_complete`) and sets whose
/// sections cannot be told apart are errors.
pub fn fit<T: Real>(obs: &ObservationSet<T>, cfg: &FitConfig) -> Result<FitResult<T>> {
    cfg.validate()?;
    if cfg.require_complete && !obs.is_complete() {
        let missing = obs.missing();
        return Err(Error::IncompleteObservations(format!(
            "{}: {} missing radii (first: section {} {})",
            obs.id,
            missing.len(),
            missing[0].0,
            missing[0].1
        )));
    }
    let scale = particle_scale(obs);
    if sections_indistinguishable(obs, scale) {
        return Err(Error::Degenerate(format!(
            "{}: all four sections show identical radii; heights are unidentifiable",
            obs.id
        )));
    }

    let model = Model::new(obs, cfg);
    let (geom0, heights0) = initial_guess(obs, cfg)?;
    let first = natural_params(&geom0, &heights0);
    let starts = candidate_starts(obs, cfg, first, scale);

    let mut best: Option<LmOutcome<T>> = None;
    for theta0 in &starts {
        let run = levenberg_marquardt(&model, theta0, cfg, scale);
        let better = match &best {
            None => true,
            Some(b) => run.cost < b.cost || (run.cost == b.cost && run.converged && !b.converged),
        };
        if better {
            best = Some(run);
        }
    }
    let best = best.expect("at least one start");
    finish(obs, &model, best, scale)
}

fn sections_indistinguishable<T: Real>(obs: &ObservationSet<T>, scale: T) -> bool {
    let eps = scale * T::lit(1e-9);
    (1..SECTIONS).all(|j| {
        obs.boundaries().iter().all(|&b| match (obs.get(0, b), obs.get(j, b)) {
            (Some(a), Some(c)) => (a - c).abs() <= eps,
            (None, None) => true,
            _ => false,
        })
    })
}

fn finish<T: Real>(
    obs: &ObservationSet<T>,
    model: &Model<'_, T>,
    run: LmOutcome<T>,
    scale: T,
) -> Result<FitResult<T>> {
    let nr = model.n_radii();
    let mut theta = run.theta;
    let mut zm = theta[nr + SECTIONS];
    if zm < T::zero() {
        for v in &mut theta[nr..] {
            *v = -*v;
        }
        zm = -zm;
    }
    let heights: [T; SECTIONS] = std::array::from_fn(|j| theta[nr + j]);

    let spread = |vals: [T; SECTIONS]| {
        let lo = vals.iter().fold(T::infinity(), |a, &v| a.min(v));
        let hi = vals.iter().fold(T::neg_infinity(), |a, &v| a.max(v));
        hi - lo
    };
    let eps = scale * T::lit(1e-6);
    if spread(heights.map(|z| z.abs())) <= eps && spread(heights.map(|z| (z - zm).abs())) <= eps {
        return Err(Error::Degenerate(format!(
            "{}: fitted sections coincide in height",
            obs.id
        )));
    }

    let mut order: [usize; SECTIONS] = std::array::from_fn(|j| j);
    order.sort_by(|&a, &b| heights[a].partial_cmp(&heights[b]).unwrap());
    let sorted = order.map(|j| heights[j]);

    let core: [T; 5] = theta[..5].try_into().unwrap();
    let opyc = obs.has_opyc().then(|| theta[5]);
    let geometry = match ParticleGeometry::new(core, opyc, zm) {
        Ok(g) => g,
        Err(_) => ParticleGeometry::new_non_physical(core, opyc, zm)?,
    };

    let m = model.entries.len();
    let rms = (run.cost * T::lit(2.0) / T::lit(m.max(1) as f64)).sqrt();
    Ok(FitResult {
        geometry,
        section_heights: sorted,
        section_order: order,
        residual_rms: rms,
        converged: run.converged,
        iterations: run.iterations,
        n_observations: m,
        n_parameters: model.n_params(),
    })
}

/// Fits every particle of a manifest, recording per-item failures instead
/// of aborting. Items run on the current rayon pool; each item's random
/// restarts are seeded from `cfg.seed` and the item index, so the output
/// does not depend on the pool size.
pub fn fit_batch<T: Real>(manifest: &[ObservationSet<T>], cfg: &FitConfig) -> BatchOutcome<T> {
    let records: Vec<BatchRecord<T>> = manifest
        .par_iter()
        .enumerate()
        .map(|(i, obs)| {
            let item_cfg = FitConfig {
                seed: derive_seed(cfg.seed, i as u64),
                ..cfg.clone()
            };
            match fit(obs, &item_cfg) {
                Ok(r) if r.converged => BatchRecord {
                    id: obs.id.clone(),
                    status: FitStatus::Ok,
                    result: Some(r),
                    reason: None,
                },
                Ok(r) => BatchRecord {
                    id: obs.id.clone(),
                    status: FitStatus::Nonconverged,
                    reason: Some(format!(
                        "iteration budget exhausted after {} iterations",
                        r.iterations
                    )),
                    result: Some(r),
                },
                Err(e) => BatchRecord {
                    id: obs.id.clone(),
                    status: match e {
                        Error::IncompleteObservations(_) => FitStatus::Incomplete,
                        Error::Degenerate(_) => FitStatus::Degenerate,
                        _ => FitStatus::Nonconverged,
                    },
                    result: None,
                    reason: Some(e.to_string()),
                },
            }
        })
        .collect();

    let mut summary = BatchSummary {
        attempted: records.len(),
        ..Default::default()
    };
    for r in &records {
        match r.status {
            FitStatus::Ok => summary.converged += 1,
            FitStatus::Incomplete => summary.failed_incomplete += 1,
            FitStatus::Nonconverged => summary.failed_nonconverged += 1,
            FitStatus::Degenerate => summary.failed_degenerate += 1,
        }
    }
    BatchOutcome { summary, records }
}
