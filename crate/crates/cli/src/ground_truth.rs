use std::fs::File;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::Serialize;
use triso_morph::gtgen::{compose_ground_truth, crop_square, resize_pair, AnnotationSet, Provenance};
use triso_morph::io::{read_gray, write_gray, write_json, write_mask, MaskSidecar};
use triso_morph::{BinaryGrid, Error};

use crate::error::{CliError, CliResult};
use crate::GroundTruthArgs;

#[derive(Serialize)]
struct Failure {
    id: String,
    reason: String,
}

fn find_with(dir: &Path, stem: &str, suffixes: &[&str]) -> Option<PathBuf> {
    suffixes
        .iter()
        .map(|s| dir.join(format!("{stem}{s}")))
        .find(|p| p.is_file())
}

fn compose_one(args: &GroundTruthArgs, csv_path: &Path, stem: &str) -> triso_morph::Result<()> {
    let dir = csv_path.parent().unwrap_or(Path::new("."));
    let img_path = find_with(dir, stem, &[".pgm", ".png"])
        .ok_or_else(|| Error::InvalidInput(format!("no image {stem}.pgm or {stem}.png")))?;
    let img = read_gray(&img_path)?;
    let file = File::open(csv_path).map_err(|e| Error::Io {
        path: csv_path.into(),
        source: e,
    })?;
    let mut ann = AnnotationSet::from_csv(file, stem, args.scale)?;
    if let Some(p) = find_with(dir, stem, &[".opyc.pgm", ".opyc.png"]) {
        let o = read_gray(&p)?;
        ann.opyc_mask = Some(BinaryGrid::from_fn(o.width(), o.height(), |x, y| o.get_pixel(x, y).0[0] > 0));
    }
    let (mut mask, threshold) = compose_ground_truth(&img, &ann)?;
    let mut img = img;
    let mut crop = None;
    if !args.no_crop {
        let (i, m, b) = crop_square(&img, &mask, args.margin)?;
        if !b.square {
            log::warn!("{stem}: crop clamped to {}x{}", b.width, b.height);
        }
        (img, mask, crop) = (i, m, Some(b));
    }
    let mut resize_factor = 1.0;
    if let Some(t) = args.resize {
        let side = img.width();
        let (i, m) = resize_pair(&img, &mask, t)?;
        resize_factor = f64::from(t) / f64::from(side);
        (img, mask) = (i, m);
    }
    write_gray(&args.out.join(format!("{stem}.pgm")), &img)?;
    write_mask(
        &args.out.join(format!("{stem}.mask.pgm")),
        &mask,
        &MaskSidecar::new(mask.scale(), stem),
    )?;
    let prov = Provenance {
        source_id: stem.to_string(),
        threshold,
        crop,
        resize_factor,
    };
    write_json(&args.out.join(format!("{stem}.provenance.json")), &prov)?;
    Ok(())
}

pub fn run(args: &GroundTruthArgs) -> CliResult<()> {
    if !(args.scale > 0.0 && args.scale.is_finite()) {
        return Err(CliError::usage("--scale must be positive"));
    }
    let entries = std::fs::read_dir(&args.input)
        .map_err(|e| CliError::Io(format!("{}: {e}", args.input.display())))?;
    let mut jobs: Vec<(PathBuf, String)> = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| CliError::Io(e.to_string()))?.path();
        if path.extension().is_some_and(|e| e == "csv") {
            if let Some(stem) = path.file_stem().and_then(|s| s.to_str()) {
                jobs.push((path.clone(), stem.to_string()));
            }
        }
    }
    jobs.sort();
    std::fs::create_dir_all(&args.out).map_err(|e| CliError::Io(format!("{}: {e}", args.out.display())))?;
    let results: Vec<_> = jobs
        .par_iter()
        .map(|(path, stem)| (stem, compose_one(args, path, stem)))
        .collect();
    let mut failures = Vec::new();
    for (stem, r) in results {
        if let Err(e) = r {
            if e.is_io() {
                return Err(e.into());
            }
            log::warn!("{stem}: {e}");
            failures.push(Failure {
                id: stem.clone(),
                reason: e.to_string(),
            });
        }
    }
    write_json(&args.out.join("failures.json"), &failures)?;
    println!(
        "composed {} of {} annotated images into {}",
        jobs.len() - failures.len(),
        jobs.len(),
        args.out.display()
    );
    Ok(())
}
