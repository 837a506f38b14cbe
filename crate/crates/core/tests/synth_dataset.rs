use std::f64::consts::PI;

use triso_morph::io::{read_json, read_mask};
use triso_morph::maskops::boundary_radii;
use triso_morph::synthgen::{
    generate_dataset, observations, render_section, sample_indexed, DatasetManifest, ParticleTruth, SynthConfig,
};
use triso_morph::{ClassLabel, LayerBoundary};

fn small(seed: u64, include_opyc: bool) -> SynthConfig {
    SynthConfig {
        seed,
        include_opyc,
        ..SynthConfig::default()
    }
}

#[test]
fn dataset_is_reproducible_and_complete() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let cfg = small(7, false);
    let ma = generate_dataset(50, &cfg, a.path()).unwrap();
    let mb = generate_dataset(50, &cfg, b.path()).unwrap();
    assert_eq!(ma.digest, mb.digest);
    assert_eq!(
        std::fs::read(a.path().join("manifest.json")).unwrap(),
        std::fs::read(b.path().join("manifest.json")).unwrap()
    );

    let masks = ma
        .particles
        .iter()
        .flat_map(|p| p.files.keys())
        .filter(|k| k.ends_with(".mask.pgm"))
        .count();
    let images = ma
        .particles
        .iter()
        .flat_map(|p| p.files.keys())
        .filter(|k| k.ends_with(".pgm") && !k.ends_with(".mask.pgm"))
        .count();
    assert_eq!((masks, images), (200, 200));

    for entry in &ma.particles {
        for (rel, _) in entry.files.iter().filter(|(k, _)| k.ends_with(".mask.pgm")) {
            let (mask, side) = read_mask(&a.path().join(rel)).unwrap();
            assert_eq!(mask.area(ClassLabel::Opyc), 0, "{rel}");
            assert_eq!(side.unwrap().scale_um_per_px, 1.0);
        }
    }
    let back: DatasetManifest = read_json(&a.path().join("manifest.json")).unwrap();
    assert_eq!(back, ma);
    let truth: ParticleTruth = read_json(&a.path().join("particles/p0003/truth.json")).unwrap();
    assert_eq!(truth.geometry, sample_indexed(&cfg, 3).unwrap().geometry);
}

#[test]
fn pool_size_does_not_change_output() {
    let cfg = small(3, true);
    let dirs: Vec<_> = [1, 4]
        .iter()
        .map(|&n| {
            let d = tempfile::tempdir().unwrap();
            let pool = rayon::ThreadPoolBuilder::new().num_threads(n).build().unwrap();
            let m = pool.install(|| generate_dataset(5, &cfg, d.path())).unwrap();
            (d, m)
        })
        .collect();
    assert_eq!(dirs[0].1, dirs[1].1);
}

#[test]
fn rasterized_radii_match_analytic_sections() {
    // 55 particles × 4 sections = 220 sections, with and without OPyC
    let mut checked = 0;
    for (seed, opyc, n) in [(101, false, 30), (202, true, 25)] {
        let cfg = small(seed, opyc);
        for i in 0..n {
            let p = sample_indexed(&cfg, i).unwrap();
            let exact = observations(&p).unwrap();
            for j in 0..4 {
                let (_, mask) = render_section(&p, j, &cfg).unwrap();
                let m = boundary_radii(&mask);
                for b in p.geometry.boundaries() {
                    match exact.get(j, b) {
                        Some(x) => {
                            let got = m.radius(b).unwrap();
                            assert!((got - x).abs() <= 0.5 + 0.005 * x, "{} s{j} {b}: {got} vs {x}", p.id);
                        }
                        None => assert!(m.radius(b).is_none()),
                    }
                }
                if let Some(xk) = exact.get(j, LayerBoundary::KernelOuter) {
                    let bound = PI * xk * xk * 1.01 / (cfg.scale_um_per_px * cfg.scale_um_per_px);
                    assert!(mask.area(ClassLabel::Kernel) as f64 <= bound);
                }
                checked += 1;
            }
        }
    }
    assert!(checked >= 200);
}

#[test]
fn opyc_config_yields_opyc_pixels() {
    let cfg = small(1, true);
    let p = sample_indexed(&cfg, 0).unwrap();
    let (_, mask) = render_section(&p, 0, &cfg).unwrap();
    assert!(mask.area(ClassLabel::Opyc) > 0);
}

#[test]
fn config_round_trips_through_json() {
    let cfg = SynthConfig {
        buffer_wedge_deg: Some(20.0),
        ..small(9, true)
    };
    let json = serde_json::to_string(&cfg).unwrap();
    assert_eq!(serde_json::from_str::<SynthConfig>(&json).unwrap(), cfg);
    let partial: SynthConfig = serde_json::from_str(r#"{"seed": 4, "noise_sigma": 2.0}"#).unwrap();
    assert_eq!(partial.seed, 4);
    assert_eq!(partial.class_means, SynthConfig::default().class_means);
}
