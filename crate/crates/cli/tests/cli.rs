use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;
use triso_morph::io::{read_json, write_mask, MaskSidecar};
use triso_morph::maskops::boundary_radii;
use triso_morph::synthgen::ParticleTruth;
use triso_morph::{ClassLabel, LabeledMask, LayerBoundary};

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_triso-morph"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = run(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn json(p: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(p).unwrap()).unwrap()
}

#[test]
fn synth_measure_fit_report_chain() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    ok(&["synth", "--n", "50", "--seed", "7", "--out", s(&data)]);
    let particles: Vec<_> = std::fs::read_dir(data.join("particles")).unwrap().collect();
    assert_eq!(particles.len(), 50);
    let pairs = walkdir_count(&data, ".mask.pgm");
    assert_eq!(pairs, 200);
    assert_eq!(walkdir_count(&data, ".pgm") - pairs, 200);

    let obs = tmp.path().join("obs.json");
    ok(&["measure", "--in", s(&data), "--out", s(&obs)]);
    let doc = json(&obs);
    assert_eq!(doc["observations"].as_array().unwrap().len(), 50);
    assert!(doc["flagged"].as_array().unwrap().is_empty());

    // measured radii against the analytic section radii
    for k in [0usize, 17, 49] {
        let id = format!("p{k:04}");
        let truth: ParticleTruth = read_json(&data.join("particles").join(&id).join("truth.json")).unwrap();
        for j in 0..4 {
            let (mask, _) = triso_morph::io::read_mask(&data.join(format!("particles/{id}/section_{j}.mask.pgm"))).unwrap();
            let m = boundary_radii(&mask);
            for b in truth.geometry.boundaries() {
                if let Some(x) = truth.observations.get(j, b) {
                    let got = m.radius(b).unwrap();
                    assert!((got - x).abs() <= 0.5 + 0.005 * x, "{id} s{j} {b}: {got} vs {x}");
                }
            }
        }
    }

    let fit = tmp.path().join("fit.json");
    let stdout = ok(&["fit", "--in", s(&obs), "--out", s(&fit), "--seed", "1"]);
    assert!(stdout.contains("attempted 50 converged 50 incomplete 0 nonconverged 0"), "{stdout}");

    let report = tmp.path().join("report");
    let fab = tmp.path().join("fab.toml");
    std::fs::write(
        &fab,
        "kernel_radius = { mean = 213.0, std = 4.6 }\n\
         buffer_thickness = { mean = 77.0, std = 3.0 }\n\
         ipyc_thickness = { mean = 35.0, std = 2.0 }\n\
         sic_thickness = { mean = 33.0, std = 1.5 }\n\
         [metadata]\nkernel_material = \"UCO\"\n",
    )
    .unwrap();
    ok(&["report", "--in", s(&fit), "--out", s(&report), "--fab", s(&fab), "--compact-id", "synthetic"]);
    let summary = json(&report.join("summary.json"));
    assert_eq!(summary["compact_id"], "synthetic");
    assert_eq!(summary["metadata"]["kernel_material"], "UCO");
    assert_eq!(summary["boundaries"]["kernel_outer"]["count"], 50);
    assert!(report.join("hist_kernel_outer.csv").is_file());
    let rows = json(&report.join("report.json"));
    let kernel = rows["rows"]
        .as_array()
        .unwrap()
        .iter()
        .find(|r| r["boundary"] == "kernel_outer")
        .unwrap();
    assert!((kernel["ratio"]["mean"].as_f64().unwrap() - 1.0).abs() < 0.05);
    let csv = std::fs::read_to_string(report.join("report.csv")).unwrap();
    assert!(csv.lines().count() >= 5);
}

fn walkdir_count(root: &Path, suffix: &str) -> usize {
    let mut n = 0;
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else if p.to_string_lossy().ends_with(suffix) {
                n += 1;
            }
        }
    }
    n
}

#[test]
fn synth_needs_a_seed() {
    let tmp = tempfile::tempdir().unwrap();
    let out = run(&["synth", "--n", "2", "--out", s(&tmp.path().join("d"))]);
    assert_eq!(out.status.code(), Some(2));
    assert!(!tmp.path().join("d").exists());
}

#[test]
fn seed_from_config_file_is_accepted() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("run.toml");
    std::fs::write(&cfg, "seed = 5\n[synth]\ninclude_opyc = true\n").unwrap();
    ok(&["--config", s(&cfg), "synth", "--n", "1", "--out", s(&tmp.path().join("d"))]);
    let m = json(&tmp.path().join("d/manifest.json"));
    assert_eq!(m["seed"], 5);
    assert_eq!(m["config"]["include_opyc"], true);

    std::fs::write(&cfg, "sed = 5\n").unwrap();
    let out = run(&["--config", s(&cfg), "synth", "--n", "1", "--out", s(&tmp.path().join("e"))]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn unwritable_output_is_an_io_error() {
    let out = run(&["synth", "--n", "1", "--seed", "1", "--out", "/proc/triso-morph-test"]);
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn missing_section_is_flagged_and_counted() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    ok(&["synth", "--n", "3", "--seed", "11", "--out", s(&data)]);
    std::fs::remove_file(data.join("particles/p0001/section_2.mask.pgm")).unwrap();
    let obs = tmp.path().join("obs.json");
    ok(&["measure", "--in", s(&data), "--out", s(&obs)]);
    let doc = json(&obs);
    let flagged = doc["flagged"].as_array().unwrap();
    assert_eq!(flagged.len(), 1);
    assert_eq!(flagged[0]["id"], "p0001");
    assert_eq!(flagged[0]["status"], "INCOMPLETE");

    let fit = tmp.path().join("fit.json");
    let stdout = ok(&["fit", "--in", s(&obs), "--out", s(&fit)]);
    assert!(stdout.contains("attempted 3 converged 2 incomplete 1"), "{stdout}");
    let outcome = json(&fit);
    assert_eq!(outcome["summary"]["failed_incomplete"], 1);
}

#[test]
fn empty_fit_input_is_not_an_error() {
    let tmp = tempfile::tempdir().unwrap();
    let obs = tmp.path().join("obs.json");
    std::fs::write(&obs, "[]").unwrap();
    let fit = tmp.path().join("fit.json");
    let stdout = ok(&["fit", "--in", s(&obs), "--out", s(&fit)]);
    assert!(stdout.contains("attempted 0 converged 0"));
    std::fs::write(&obs, "{ not json").unwrap();
    assert_eq!(run(&["fit", "--in", s(&obs), "--out", s(&fit)]).status.code(), Some(2));
}

fn square_mask(x0: u32, y0: u32, side: u32, class: ClassLabel) -> LabeledMask {
    let mut m = LabeledMask::new(64, 64, 1.0).unwrap();
    for y in y0..y0 + side {
        for x in x0..x0 + side {
            m.set(x, y, class);
        }
    }
    m
}

fn brute_iou(a: &LabeledMask, b: &LabeledMask, c: ClassLabel) -> f64 {
    let (mut inter, mut union) = (0usize, 0usize);
    for (&p, &t) in a.labels().iter().zip(b.labels()) {
        inter += usize::from(p == c && t == c);
        union += usize::from(p == c || t == c);
    }
    if union == 0 {
        1.0
    } else {
        inter as f64 / union as f64
    }
}

#[test]
fn evaluate_matches_brute_force_iou() {
    let tmp = tempfile::tempdir().unwrap();
    let (pred, truth, out) = (tmp.path().join("p"), tmp.path().join("t"), tmp.path().join("o"));
    let cases = [(0u32, 10u32), (3, 10), (10, 10), (25, 12)];
    let mut expected = Vec::new();
    for (i, &(shift, side)) in cases.iter().enumerate() {
        let t = square_mask(20, 20, side, ClassLabel::Sic);
        let p = square_mask(20 + shift, 20, side, ClassLabel::Sic);
        let name = format!("img{i}.mask.pgm");
        write_mask(&truth.join(&name), &t, &MaskSidecar::new(1.0, format!("img{i}"))).unwrap();
        write_mask(&pred.join(&name), &p, &MaskSidecar::new(1.0, format!("img{i}"))).unwrap();
        expected.push((brute_iou(&p, &t, ClassLabel::Sic), brute_iou(&p, &t, ClassLabel::Background)));
    }
    ok(&["evaluate", "--in", s(&pred), "--truth", s(&truth), "--out", s(&out)]);

    let mut rdr = csv::Reader::from_path(out.join("iou.csv")).unwrap();
    let headers = rdr.headers().unwrap().clone();
    let col = |n: &str| headers.iter().position(|h| h == n).unwrap();
    let (sic, bg, kernel) = (col("sic"), col("background"), col("kernel"));
    let records: Vec<_> = rdr.records().map(|r| r.unwrap()).collect();
    assert_eq!(records.len(), cases.len());
    for (r, (e_sic, e_bg)) in records.iter().zip(&expected) {
        assert!((r[sic].parse::<f64>().unwrap() - e_sic).abs() < 1e-12);
        assert!((r[bg].parse::<f64>().unwrap() - e_bg).abs() < 1e-12);
        assert_eq!(&r[kernel], "");
    }
    assert!((expected[1].0 - 7.0 / 13.0).abs() < 1e-12);
    assert_eq!(expected[2].0, 0.0);

    let summary = json(&out.join("summary.json"));
    let mean_sic = expected.iter().map(|e| e.0).sum::<f64>() / 4.0;
    let mean_bg = expected.iter().map(|e| e.1).sum::<f64>() / 4.0;
    assert!((summary["per_class"]["sic"].as_f64().unwrap() - mean_sic).abs() < 1e-12);
    assert!((summary["miou"].as_f64().unwrap() - (mean_sic + mean_bg) / 2.0).abs() < 1e-12);
    assert!(summary["per_class"]["kernel"].is_null());
}

#[test]
fn evaluate_identity_scores_one() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    ok(&["synth", "--n", "2", "--seed", "4", "--out", s(&data)]);
    let out = tmp.path().join("o");
    ok(&["evaluate", "--in", s(&data), "--truth", s(&data), "--out", s(&out)]);
    let summary = json(&out.join("summary.json"));
    assert_eq!(summary["n_images"], 8);
    assert_eq!(summary["miou"].as_f64().unwrap(), 1.0);
    for c in ["background", "kernel", "buffer", "ipyc", "sic"] {
        assert_eq!(summary["per_class"][c].as_f64().unwrap(), 1.0, "{c}");
    }
}

#[test]
fn ground_truth_from_polygon_csv() {
    use image::{GrayImage, Luma};
    let tmp = tempfile::tempdir().unwrap();
    let (input, out) = (tmp.path().join("in"), tmp.path().join("out"));
    std::fs::create_dir_all(&input).unwrap();
    let (cx, cy) = (170.0f64, 150.0f64);
    let img = GrayImage::from_fn(360, 320, |x, y| {
        let d = ((f64::from(x) + 0.5 - cx).powi(2) + (f64::from(y) + 0.5 - cy).powi(2)).sqrt();
        Luma([if d < 60.0 {
            30
        } else if d < 90.0 {
            70
        } else if d < 110.0 {
            50
        } else if d < 125.0 {
            200
        } else {
            100
        }])
    });
    img.save(input.join("a.png")).unwrap();
    let mut csv = String::from("boundary,index,x_px,y_px\n");
    for (name, r) in [("kernel", 60.0), ("buffer", 90.0), ("ipyc_inner", 98.0), ("sic_outer", 125.0)] {
        for k in 0..100 {
            let t = 2.0 * std::f64::consts::PI * f64::from(k) / 100.0;
            csv.push_str(&format!("{name},{k},{},{}\n", cx + r * t.cos(), cy + r * t.sin()));
        }
    }
    std::fs::write(input.join("a.csv"), csv).unwrap();
    std::fs::write(input.join("b.csv"), "boundary,index,x_px,y_px\nkernel,0,1,1\n").unwrap();
    std::fs::copy(input.join("a.png"), input.join("b.png")).unwrap();

    ok(&["ground-truth", "--in", s(&input), "--out", s(&out), "--scale", "2.0", "--margin", "5"]);
    let (mask, side) = triso_morph::io::read_mask(&out.join("a.mask.pgm")).unwrap();
    assert_eq!(mask.width(), mask.height());
    assert_eq!(side.unwrap().scale_um_per_px, 2.0);
    let m = boundary_radii(&mask);
    let k = m.radius(LayerBoundary::KernelOuter).unwrap();
    assert!((k - 120.0).abs() < 2.0, "{k}");
    assert!(mask.area(ClassLabel::Sic) > 0 && mask.area(ClassLabel::Ipyc) > 0);
    let prov = json(&out.join("a.provenance.json"));
    // any t in 51..=200 separates the two ring intensities; the smallest wins
    assert_eq!(prov["threshold"].as_u64().unwrap(), 51);
    let failures = json(&out.join("failures.json"));
    assert_eq!(failures.as_array().unwrap().len(), 1);
    assert_eq!(failures[0]["id"], "b");

    let resized = tmp.path().join("resized");
    ok(&["ground-truth", "--in", s(&input), "--out", s(&resized), "--resize", "128"]);
    let (mask, side) = triso_morph::io::read_mask(&resized.join("a.mask.pgm")).unwrap();
    assert_eq!((mask.width(), mask.height()), (128, 128));
    assert!(side.unwrap().scale_um_per_px > 1.0);
}
