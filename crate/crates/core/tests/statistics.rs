use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use triso_morph::statsreport::{
    compact_summary, compare_report, histogram, ratio_with_uncertainty, summarize, AsFabricatedSpec, CompactMetadata,
    MeanStd, RatioMode,
};
use triso_morph::LayerBoundary;

fn spec() -> AsFabricatedSpec<f64> {
    AsFabricatedSpec {
        kernel_radius: MeanStd::new(213.0, 3.0),
        buffer_thickness: Some(MeanStd::new(100.0, 4.0)),
        ipyc_thickness: Some(MeanStd::new(40.0, 2.0)),
        sic_thickness: Some(MeanStd::new(35.0, 1.0)),
        opyc_thickness: Some(MeanStd::new(40.0, 2.0)),
    }
}

#[test]
fn propagated_ratio_std_matches_monte_carlo() {
    let (post, fab) = (MeanStd::new(430.57, 11.67), MeanStd::new(431.25, 10.30));
    let analytic = ratio_with_uncertainty(post, fab).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (a, b) = (Normal::new(post.mean, post.std).unwrap(), Normal::new(fab.mean, fab.std).unwrap());
    let draws: Vec<f64> = (0..10_000).map(|_| a.sample(&mut rng) / b.sample(&mut rng)).collect();
    let mc = summarize(&draws).unwrap();
    assert!((mc.std - analytic.std).abs() / analytic.std < 0.05, "{} vs {}", mc.std, analytic.std);
    assert!((mc.mean - analytic.mean).abs() < 0.002);
}

#[test]
fn histogram_counts_every_value_once() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let n = Normal::new(388.0, 6.0).unwrap();
    let values: Vec<f64> = (0..391).map(|_| n.sample(&mut rng)).collect();
    for width in [0.5, 2.0, 5.0, 17.0] {
        let h = histogram(&values, width, None).unwrap();
        assert_eq!(h.total(), 391);
        assert_eq!(h.edges.len(), h.counts.len() + 1);
        let (lo, hi) = values.iter().fold((f64::MAX, f64::MIN), |(l, h), &v| (l.min(v), h.max(v)));
        assert!(h.edges[0] <= lo && *h.edges.last().unwrap() >= hi);
        for (i, &v) in values.iter().enumerate().take(20) {
            let k = h.edges.windows(2).position(|e| e[0] <= v && v < e[1]).unwrap_or(h.counts.len() - 1);
            assert!(h.counts[k] > 0, "value {i} not binned");
        }
    }
}

#[test]
fn swelled_kernel_cohort_is_flagged() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let fab = spec();
    let mut radii: BTreeMap<LayerBoundary, Vec<f64>> = BTreeMap::new();
    for _ in 0..200 {
        let k = Normal::new(213.0, 3.0).unwrap().sample(&mut rng) * 1.1;
        radii.entry(LayerBoundary::KernelOuter).or_default().push(k);
        let s = Normal::new(388.0, 30f64.sqrt()).unwrap().sample(&mut rng);
        radii.entry(LayerBoundary::SicOuter).or_default().push(s);
    }
    let summary = compact_summary("c1", &radii, CompactMetadata::default()).unwrap();
    for mode in [RatioMode::RatioOfMeans, RatioMode::PerParticle] {
        let r = compare_report(&summary.boundaries, &fab, mode, Some(&radii)).unwrap();
        let row = |b| r.rows.iter().find(|x| x.boundary == b).unwrap();
        let k = row(LayerBoundary::KernelOuter);
        assert!((k.ratio.mean - 1.1).abs() < 0.01, "{mode:?} {}", k.ratio.mean);
        assert!((k.delta_pct - 10.0).abs() < 1.0);
        let s = row(LayerBoundary::SicOuter);
        assert!((s.ratio.mean - 1.0).abs() < 0.01);
        assert_eq!(r.rows.len(), 2);
    }
}

#[test]
fn unrelated_boundaries_are_rejected() {
    let radii = BTreeMap::from([(LayerBoundary::OpycOuter, vec![430.0, 431.0])]);
    let summary = compact_summary("c", &radii, CompactMetadata::default()).unwrap();
    let fab = AsFabricatedSpec {
        opyc_thickness: None,
        ..spec()
    };
    assert!(compare_report(&summary.boundaries, &fab, RatioMode::RatioOfMeans, None).is_err());
    assert!(compare_report(&summary.boundaries, &spec(), RatioMode::PerParticle, None).is_err());
}

#[test]
fn f32_and_f64_agree() {
    let v64 = [428.1f64, 431.9, 430.2, 433.0];
    let v32 = v64.map(|v| v as f32);
    let (a, b) = (summarize(&v64).unwrap(), summarize(&v32).unwrap());
    assert!((a.mean - f64::from(b.mean)).abs() < 1e-3);
    assert!((a.std - f64::from(b.std)).abs() < 1e-3);
}
