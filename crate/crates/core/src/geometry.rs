//! Nested-sphere particle model.
//!
//! A particle is a set of spheres: the IPyC, SiC and OPyC shells share one
//! center (the outer-shell midplane sits at `z = 0`), while the kernel and
//! buffer share a second center displaced by `z_offset` along the sectioning
//! axis. A grinding plane at height `z` cuts every sphere it meets in a circle
//! whose radius follows from Pythagoras.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Real;

/// One of the six spherical boundaries of a coated particle.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LayerBoundary {
    KernelOuter,
    BufferOuter,
    IpycInner,
    /// Outer IPyC surface, which is also the inner SiC surface.
    IpycOuter,
    SicOuter,
    OpycOuter,
}

impl LayerBoundary {
    pub const ALL: [LayerBoundary; 6] = [
        LayerBoundary::KernelOuter,
        LayerBoundary::BufferOuter,
        LayerBoundary::IpycInner,
        LayerBoundary::IpycOuter,
        LayerBoundary::SicOuter,
        LayerBoundary::OpycOuter,
    ];

    /// Boundaries present on every particle, innermost first.
    pub const CORE: [LayerBoundary; 5] = [
        LayerBoundary::KernelOuter,
        LayerBoundary::BufferOuter,
        LayerBoundary::IpycInner,
        LayerBoundary::IpycOuter,
        LayerBoundary::SicOuter,
    ];

    /// Position in the innermost-to-outermost ordering.
    pub fn index(self) -> usize {
        self as usize
    }

    /// Shells sharing the outer-shell center. Kernel and buffer are offset.
    pub fn is_concentric(self) -> bool {
        !matches!(self, LayerBoundary::KernelOuter | LayerBoundary::BufferOuter)
    }

    pub fn name(self) -> &'static str {
        match self {
            LayerBoundary::KernelOuter => "kernel_outer",
            LayerBoundary::BufferOuter => "buffer_outer",
            LayerBoundary::IpycInner => "ipyc_inner",
            LayerBoundary::IpycOuter => "ipyc_outer",
            LayerBoundary::SicOuter => "sic_outer",
            LayerBoundary::OpycOuter => "opyc_outer",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|b| b.name() == name)
    }
}

impl std::fmt::Display for LayerBoundary {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Height of a grinding plane above the outer-shell midplane (μm).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SectionPlane<T> {
    pub z: T,
}

impl<T: Real> SectionPlane<T> {
    pub fn new(z: T) -> Self {
        Self { z }
    }
}

/// Spherical radii (μm) of one particle plus the kernel/buffer offset.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(
    try_from = "GeometryRecord<T>",
    into = "GeometryRecord<T>",
    bound(
        serialize = "T: Real + Serialize",
        deserialize = "T: Real + Deserialize<'de>"
    )
)]
pub struct ParticleGeometry<T> {
    radii: [T; 5],
    opyc_outer: Option<T>,
    z_offset: T,
    non_physical: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct GeometryRecord<T> {
    kernel_outer: T,
    buffer_outer: T,
    ipyc_inner: T,
    ipyc_outer: T,
    sic_outer: T,
    opyc_outer: Option<T>,
    z_offset: T,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    non_physical: bool,
}

impl<T: Real> TryFrom<GeometryRecord<T>> for ParticleGeometry<T> {
    type Error = Error;

    fn try_from(r: GeometryRecord<T>) -> Result<Self> {
        let radii = [
            r.kernel_outer,
            r.buffer_outer,
            r.ipyc_inner,
            r.ipyc_outer,
            r.sic_outer,
        ];
        if r.non_physical {
            Self::new_non_physical(radii, r.opyc_outer, r.z_offset)
        } else {
            Self::new(radii, r.opyc_outer, r.z_offset)
        }
    }
}

impl<T: Real> From<ParticleGeometry<T>> for GeometryRecord<T> {
    fn from(g: ParticleGeometry<T>) -> Self {
        GeometryRecord {
            kernel_outer: g.radii[0],
            buffer_outer: g.radii[1],
            ipyc_inner: g.radii[2],
            ipyc_outer: g.radii[3],
            sic_outer: g.radii[4],
            opyc_outer: g.opyc_outer,
            z_offset: g.z_offset,
            non_physical: g.non_physical,
        }
    }
}

impl<T: Real> ParticleGeometry<T> {
    /// Builds a physical geometry. `core` holds the kernel, buffer, inner
    /// IPyC, outer IPyC and outer SiC radii in that order.
    pub fn new(core: [T; 5], opyc_outer: Option<T>, z_offset: T) -> Result<Self> {
        let g = Self {
            radii: core,
            opyc_outer,
            z_offset,
            non_physical: false,
        };
        g.validate()?;
        Ok(g)
    }

    /// Like [`ParticleGeometry::new`] but accepts a kernel/buffer sphere
    /// poking through the inner IPyC surface.
    pub fn new_non_physical(core: [T; 5], opyc_outer: Option<T>, z_offset: T) -> Result<Self> {
        let g = Self {
            radii: core,
            opyc_outer,
            z_offset,
            non_physical: true,
        };
        g.validate()?;
        Ok(g)
    }

    fn validate(&self) -> Result<()> {
        let present: Vec<(LayerBoundary, T)> = self.radii_iter().collect();
        for &(b, r) in &present {
            if !r.is_finite() || r <= T::zero() {
                return Err(Error::InvalidGeometry(format!(
                    "radius of {b} must be finite and positive, got {r}"
                )));
            }
        }
        for pair in present.windows(2) {
            let ((b0, r0), (b1, r1)) = (pair[0], pair[1]);
            if r0 >= r1 {
                return Err(Error::InvalidGeometry(format!(
                    "{b0} ({r0}) must be smaller than {b1} ({r1})"
                )));
            }
        }
        if !self.z_offset.is_finite() {
            return Err(Error::InvalidGeometry("z_offset must be finite".into()));
        }
        if !self.non_physical && !self.is_contained() {
            return Err(Error::InvalidGeometry(format!(
                "buffer sphere ({} + |{}|) crosses the inner IPyC surface ({})",
                self.radii[1], self.z_offset, self.radii[2]
            )));
        }
        Ok(())
    }

    /// Whether the kernel/buffer sphere lies inside the inner IPyC sphere.
    pub fn is_contained(&self) -> bool {
        self.radii[1] + self.z_offset.abs() <= self.radii[2]
    }

    pub fn is_non_physical(&self) -> bool {
        self.non_physical
    }

    pub fn radius(&self, boundary: LayerBoundary) -> Option<T> {
        match boundary {
            LayerBoundary::OpycOuter => self.opyc_outer,
            b => Some(self.radii[b.index()]),
        }
    }

    pub fn core_radii(&self) -> [T; 5] {
        self.radii
    }

    pub fn z_offset(&self) -> T {
        self.z_offset
    }

    pub fn has_opyc(&self) -> bool {
        self.opyc_outer.is_some()
    }

    /// Boundaries present in this geometry, innermost first.
    pub fn boundaries(&self) -> impl Iterator<Item = LayerBoundary> + '_ {
        LayerBoundary::ALL
            .into_iter()
            .filter(|&b| self.radius(b).is_some())
    }

    fn radii_iter(&self) -> impl Iterator<Item = (LayerBoundary, T)> + '_ {
        self.boundaries().map(|b| (b, self.radius(b).unwrap()))
    }

    /// Height of the center of the sphere carrying `boundary`.
    pub fn center_height(&self, boundary: LayerBoundary) -> T {
        if boundary.is_concentric() {
            T::zero()
        } else {
            self.z_offset
        }
    }

    /// Outermost radius: OPyC when present, SiC otherwise.
    pub fn outer_radius(&self) -> T {
        self.opyc_outer.unwrap_or(self.radii[4])
    }

    /// Mirror image through the outer-shell midplane.
    pub fn mirrored(&self) -> Self {
        Self {
            z_offset: -self.z_offset,
            ..*self
        }
    }
}

/// Radius of the circle cut from a sphere of radius `radius` centered at
/// height `center` by the plane at height `z`. `None` when the plane misses
/// the sphere; a tangent plane yields zero.
pub fn section_radius<T: Real>(radius: T, center: T, z: T) -> Option<T> {
    let d = (z - center).abs();
    let r = radius.abs();
    if r > d {
        Some(((r - d) * (r + d)).sqrt())
    } else if r == d {
        Some(T::zero())
    } else {
        None
    }
}

/// Cross-sectional radius of `boundary` seen in `plane`.
pub fn predict_radius<T: Real>(
    geom: &ParticleGeometry<T>,
    boundary: LayerBoundary,
    plane: SectionPlane<T>,
) -> Result<Option<T>> {
    let r = geom
        .radius(boundary)
        .ok_or(Error::MissingBoundary(boundary))?;
    Ok(section_radius(r, geom.center_height(boundary), plane.z))
}

/// Predicted radii for every boundary of `geom` in every plane.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionTable<T> {
    pub boundaries: Vec<LayerBoundary>,
    pub planes: Vec<SectionPlane<T>>,
    /// Row per boundary, column per plane.
    pub values: Vec<Vec<Option<T>>>,
}

impl<T: Real> PredictionTable<T> {
    pub fn get(&self, boundary: LayerBoundary, plane: usize) -> Option<T> {
        let row = self.boundaries.iter().position(|&b| b == boundary)?;
        self.values[row].get(plane).copied().flatten()
    }

    /// Number of (boundary, plane) entries.
    pub fn len(&self) -> usize {
        self.boundaries.len() * self.planes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

pub fn predict_all<T: Real>(
    geom: &ParticleGeometry<T>,
    planes: &[SectionPlane<T>],
) -> Result<PredictionTable<T>> {
    if planes.is_empty() || planes.len() > 4 {
        return Err(Error::InvalidInput(format!(
            "expected 1 to 4 section planes, got {}",
            planes.len()
        )));
    }
    let boundaries: Vec<LayerBoundary> = geom.boundaries().collect();
    let values = boundaries
        .iter()
        .map(|&b| {
            planes
                .iter()
                .map(|&p| predict_radius(geom, b, p))
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(PredictionTable {
        boundaries,
        planes: planes.to_vec(),
        values,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn geom(kernel: f64, z_offset: f64, opyc: Option<f64>) -> ParticleGeometry<f64> {
        ParticleGeometry::new([kernel, 310.0, 340.0, 355.0, 390.0], opyc, z_offset).unwrap()
    }

    #[test]
    fn midplane_and_pythagorean_cases() {
        let g = ParticleGeometry::new([40.0, 50.0, 60.0, 80.0, 100.0], None, 0.0).unwrap();
        let at = |z| predict_radius(&g, LayerBoundary::SicOuter, SectionPlane::new(z)).unwrap();
        assert_eq!(at(0.0), Some(100.0));
        assert_eq!(at(60.0), Some(80.0));
    }

    #[test]
    fn offset_boundary_uses_kernel_center() {
        let g = geom(200.0, 20.0, None);
        let x = predict_radius(&g, LayerBoundary::KernelOuter, SectionPlane::new(50.0))
            .unwrap()
            .unwrap();
        // sqrt(200^2 - 30^2) = sqrt(39100)
        assert_relative_eq!(x, 197.737_199_332_851_87, epsilon = 1e-9);
    }

    #[test]
    fn plane_missing_the_kernel() {
        let g = ParticleGeometry::new([40.0, 60.0, 300.0, 320.0, 340.0], None, 10.0).unwrap();
        let x = predict_radius(&g, LayerBoundary::KernelOuter, SectionPlane::new(100.0)).unwrap();
        assert_eq!(x, None);
    }

    #[test]
    fn tangent_plane_gives_zero() {
        assert_eq!(section_radius(40.0, 10.0, 50.0), Some(0.0));
        assert_eq!(section_radius(40.0, 10.0, -30.0), Some(0.0));
    }

    #[test]
    fn missing_opyc_is_an_error() {
        let g = geom(213.0, 0.0, None);
        let err = predict_radius(&g, LayerBoundary::OpycOuter, SectionPlane::new(0.0));
        assert!(matches!(err, Err(Error::MissingBoundary(LayerBoundary::OpycOuter))));
    }

    #[test]
    fn prediction_table_sizes() {
        let planes: Vec<_> = [-150.0, -50.0, 50.0, 150.0]
            .into_iter()
            .map(SectionPlane::new)
            .collect();
        assert_eq!(predict_all(&geom(213.0, 10.0, None), &planes).unwrap().len(), 20);
        assert_eq!(
            predict_all(&geom(213.0, 10.0, Some(431.25)), &planes).unwrap().len(),
            24
        );
        assert!(predict_all(&geom(213.0, 10.0, None), &[]).is_err());
    }

    #[test]
    fn midplane_table_equals_spherical_radii() {
        let g = geom(213.0, 0.0, Some(431.25));
        let t = predict_all(&g, &[SectionPlane::new(0.0)]).unwrap();
        for b in g.boundaries() {
            assert_eq!(t.get(b, 0), g.radius(b));
        }
    }

    #[test]
    fn ordering_and_containment_are_enforced() {
        assert!(ParticleGeometry::new([310.0, 213.0, 340.0, 355.0, 390.0], None, 0.0).is_err());
        assert!(ParticleGeometry::new([213.0, 310.0, 340.0, 355.0, 390.0], Some(380.0), 0.0).is_err());
        assert!(ParticleGeometry::new([0.0, 310.0, 340.0, 355.0, 390.0], None, 0.0).is_err());
        // buffer 310 + 40 > ipyc_inner 340
        assert!(ParticleGeometry::new([213.0, 310.0, 340.0, 355.0, 390.0], None, 40.0).is_err());
        let g = ParticleGeometry::new_non_physical([213.0, 310.0, 340.0, 355.0, 390.0], None, 40.0)
            .unwrap();
        assert!(g.is_non_physical());
    }

    #[test]
    fn json_layout() {
        let g = geom(213.0, 10.0, None);
        let v = serde_json::to_value(g).unwrap();
        assert_eq!(
            v,
            serde_json::json!({
                "kernel_outer": 213.0, "buffer_outer": 310.0, "ipyc_inner": 340.0,
                "ipyc_outer": 355.0, "sic_outer": 390.0, "opyc_outer": null, "z_offset": 10.0
            })
        );
        let back: ParticleGeometry<f64> = serde_json::from_value(v).unwrap();
        assert_eq!(back, g);
        let bad = serde_json::json!({
            "kernel_outer": 400.0, "buffer_outer": 310.0, "ipyc_inner": 340.0,
            "ipyc_outer": 355.0, "sic_outer": 390.0, "opyc_outer": null, "z_offset": 0.0
        });
        assert!(serde_json::from_value::<ParticleGeometry<f64>>(bad).is_err());
    }

    #[test]
    fn works_in_single_precision() {
        let g = ParticleGeometry::<f32>::new([40.0, 50.0, 60.0, 80.0, 100.0], None, 0.0).unwrap();
        let x = predict_radius(&g, LayerBoundary::SicOuter, SectionPlane::new(60.0f32)).unwrap();
        assert_eq!(x, Some(80.0f32));
    }

    fn arb_geometry() -> impl Strategy<Value = ParticleGeometry<f64>> {
        (
            proptest::collection::vec(1.0f64..60.0, 6),
            -20.0f64..20.0,
            any::<bool>(),
        )
            .prop_map(|(inc, zm, opyc)| {
                let mut r = [0.0; 6];
                let mut acc = 100.0;
                for i in 0..6 {
                    acc += inc[i];
                    r[i] = acc;
                }
                // keep the buffer sphere inside the IPyC sphere
                r[2] = r[2].max(r[1] + zm.abs() + 1.0);
                r[3] = r[3].max(r[2] + 1.0);
                r[4] = r[4].max(r[3] + 1.0);
                r[5] = r[5].max(r[4] + 1.0);
                ParticleGeometry::new(
                    [r[0], r[1], r[2], r[3], r[4]],
                    opyc.then_some(r[5]),
                    zm,
                )
                .unwrap()
            })
    }

    proptest! {
        #[test]
        fn radius_non_increasing_away_from_center(
            g in arb_geometry(), a in 0.0f64..400.0, b in 0.0f64..400.0, up in any::<bool>()
        ) {
            let (near, far) = if a <= b { (a, b) } else { (b, a) };
            let sign = if up { 1.0 } else { -1.0 };
            for boundary in g.boundaries() {
                let c = g.center_height(boundary);
                let x_near = predict_radius(&g, boundary, SectionPlane::new(c + sign * near)).unwrap();
                let x_far = predict_radius(&g, boundary, SectionPlane::new(c + sign * far)).unwrap();
                match (x_near, x_far) {
                    (Some(n), Some(f)) => prop_assert!(f <= n),
                    (None, Some(_)) => prop_assert!(false, "farther plane intersects, nearer does not"),
                    _ => {}
                }
            }
        }

        #[test]
        fn concentric_round_trip(g in arb_geometry(), z in -500.0f64..500.0) {
            for boundary in g.boundaries().filter(|b| b.is_concentric()) {
                if let Some(x) = predict_radius(&g, boundary, SectionPlane::new(z)).unwrap() {
                    let r = g.radius(boundary).unwrap();
                    prop_assert!(((x * x + z * z).sqrt() - r).abs() <= 1e-9 * r);
                }
            }
        }

        #[test]
        fn mirror_symmetry(g in arb_geometry(), z in -500.0f64..500.0) {
            let m = g.mirrored();
            for boundary in g.boundaries() {
                let here = predict_radius(&g, boundary, SectionPlane::new(z)).unwrap();
                let there = predict_radius(&m, boundary, SectionPlane::new(-z)).unwrap();
                prop_assert_eq!(here, there);
                if boundary.is_concentric() {
                    let flipped = predict_radius(&g, boundary, SectionPlane::new(-z)).unwrap();
                    prop_assert_eq!(here, flipped);
                }
            }
        }
    }
}
