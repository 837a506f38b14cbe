use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::Serialize;
use triso_morph::io::{read_mask, write_bytes, write_json};
use triso_morph::maskops::{class_observed, iou, mean_iou};
use triso_morph::ClassLabel;

use crate::error::{CliError, CliResult};
use crate::measure::mask_files;
use crate::EvaluateArgs;

/// Per-class IoU of one image; `None` where the class occurs in neither mask.
type Row = [Option<f64>; 7];

#[derive(Debug, Serialize)]
struct Summary {
    n_images: usize,
    /// Mean over images in which the class occurs.
    per_class: BTreeMap<ClassLabel, Option<f64>>,
    /// Unweighted mean of the per-class means that exist.
    miou: Option<f64>,
    unmatched_predictions: Vec<String>,
    unmatched_truths: Vec<String>,
    errors: Vec<String>,
}

fn score(pred: &std::path::Path, truth: &std::path::Path) -> triso_morph::Result<Row> {
    let (p, _) = read_mask(pred)?;
    let (t, _) = read_mask(truth)?;
    let mut row = [None; 7];
    for c in ClassLabel::ALL {
        if class_observed(&p, &t, c) {
            row[c.code() as usize] = Some(iou(&p, &t, c)?);
        }
    }
    Ok(row)
}

fn csv_writer() -> csv::Writer<Vec<u8>> {
    csv::Writer::from_writer(Vec::new())
}

fn cell(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn finish(w: csv::Writer<Vec<u8>>) -> CliResult<Vec<u8>> {
    w.into_inner().map_err(|e| CliError::Internal(e.to_string()))
}

fn csv_err(e: csv::Error) -> CliError {
    CliError::Internal(e.to_string())
}

pub fn run(args: &EvaluateArgs) -> CliResult<()> {
    let preds = mask_files(&args.input)?;
    let truths = mask_files(&args.truth)?;
    let pairs: Vec<(&String, _, _)> = preds
        .iter()
        .filter_map(|(k, p)| truths.get(k).map(|t| (k, p, t)))
        .collect();
    let unmatched_predictions: Vec<String> = preds.keys().filter(|k| !truths.contains_key(*k)).cloned().collect();
    let unmatched_truths: Vec<String> = truths.keys().filter(|k| !preds.contains_key(*k)).cloned().collect();
    for k in unmatched_predictions.iter().chain(&unmatched_truths) {
        log::warn!("no counterpart for {k}");
    }

    let scored: Vec<_> = pairs.par_iter().map(|(k, p, t)| (*k, score(p, t))).collect();
    let mut rows = Vec::new();
    let mut errors = Vec::new();
    for (k, r) in scored {
        match r {
            Ok(row) => rows.push((k, row)),
            Err(e) => {
                log::warn!("{k}: {e}");
                errors.push(format!("{k}: {e}"));
            }
        }
    }

    let header: Vec<&str> = ClassLabel::ALL.iter().map(|c| c.name()).collect();
    let mut w = csv_writer();
    w.write_record(std::iter::once("id").chain(header.iter().copied()))
        .map_err(csv_err)?;
    for (k, row) in &rows {
        w.write_record(std::iter::once(k.to_string()).chain(row.iter().map(|v| cell(*v))))
            .map_err(csv_err)?;
    }
    write_bytes(&args.out.join("iou.csv"), &finish(w)?)?;

    let mut per_class = BTreeMap::new();
    let mut present = BTreeMap::new();
    for c in ClassLabel::ALL {
        let vals: Vec<f64> = rows.iter().filter_map(|(_, r)| r[c.code() as usize]).collect();
        let mean = (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64);
        if let Some(m) = mean {
            present.insert(c, m);
        }
        per_class.insert(c, mean);
    }
    let classes: Vec<ClassLabel> = present.keys().copied().collect();
    let miou = if classes.is_empty() {
        None
    } else {
        Some(mean_iou(&present, &classes)?)
    };

    let mut w = csv_writer();
    w.write_record(["scope", "n_images", "miou"].into_iter().chain(header.iter().copied()))
        .map_err(csv_err)?;
    w.write_record(
        ["mean".to_string(), rows.len().to_string(), cell(miou)]
            .into_iter()
            .chain(ClassLabel::ALL.iter().map(|c| cell(per_class[c]))),
    )
    .map_err(csv_err)?;
    write_bytes(&args.out.join("summary.csv"), &finish(w)?)?;

    let summary = Summary {
        n_images: rows.len(),
        per_class,
        miou,
        unmatched_predictions,
        unmatched_truths,
        errors,
    };
    write_json(&args.out.join("summary.json"), &summary)?;
    println!(
        "scored {} image pairs; mIoU {}",
        summary.n_images,
        summary.miou.map_or_else(|| "n/a".into(), |m| format!("{m:.4}"))
    );
    Ok(())
}
