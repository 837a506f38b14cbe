use std::collections::BTreeMap;

use triso_morph::io::{read_json, write_bytes, write_json};
use triso_morph::statsreport::{
    compact_summary, compare_report, histogram, AsFabricatedSpec, CompactMetadata, RatioMode,
};
use triso_morph::{BatchOutcomeF64, FitStatus, LayerBoundary};

use crate::config::load_document;
use crate::error::{CliError, CliResult};
use crate::ReportArgs;

#[derive(serde::Deserialize)]
struct FabDocument {
    #[serde(flatten)]
    spec: AsFabricatedSpec<f64>,
    #[serde(default)]
    metadata: CompactMetadata,
}

pub fn run(args: &ReportArgs) -> CliResult<()> {
    if !(args.bin_width > 0.0 && args.bin_width.is_finite()) {
        return Err(CliError::usage("--bin-width must be positive"));
    }
    let outcome: BatchOutcomeF64 = read_json(&args.input)?;
    let mut radii: BTreeMap<LayerBoundary, Vec<f64>> = BTreeMap::new();
    for r in &outcome.records {
        if r.status != FitStatus::Ok {
            continue;
        }
        if let Some(fit) = &r.result {
            for b in fit.geometry.boundaries() {
                radii.entry(b).or_default().extend(fit.geometry.radius(b));
            }
        }
    }
    let fab: Option<FabDocument> = args.fab.as_deref().map(load_document).transpose()?;
    let metadata = fab.as_ref().map(|f| f.metadata.clone()).unwrap_or_default();
    let summary = compact_summary(args.compact_id.clone(), &radii, metadata)?;
    write_json(&args.out.join("summary.json"), &summary)?;

    for (b, values) in &radii {
        let h = histogram(values, args.bin_width, None)?;
        let mut buf = Vec::new();
        h.write_csv(&mut buf)?;
        write_bytes(&args.out.join(format!("hist_{}.csv", b.name())), &buf)?;
    }

    if let Some(fab) = &fab {
        let mode = if args.per_particle {
            RatioMode::PerParticle
        } else {
            RatioMode::RatioOfMeans
        };
        let report = compare_report(&summary.boundaries, &fab.spec, mode, Some(&radii))?;
        write_json(&args.out.join("report.json"), &report)?;
        let mut buf = Vec::new();
        report.write_csv(&mut buf)?;
        write_bytes(&args.out.join("report.csv"), &buf)?;
    }
    println!(
        "summarized {} fitted particles over {} boundaries into {}",
        outcome.summary.converged,
        radii.len(),
        args.out.display()
    );
    Ok(())
}
