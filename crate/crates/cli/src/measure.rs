use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use triso_morph::io::{mask_stem, read_mask, write_json};
use triso_morph::maskops::{boundary_radii, observation_set, MaskMeasurement};
use triso_morph::spherefit::SECTIONS;
use triso_morph::synthgen::PARTICLES_DIR;
use triso_morph::ObservationSetF64;
use walkdir::WalkDir;

use crate::error::{CliError, CliResult};
use crate::MeasureArgs;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Flag {
    pub id: String,
    pub status: String,
    pub reason: String,
}

/// Output of `measure`, input of `fit`.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct ObservationsFile {
    pub observations: Vec<ObservationSetF64>,
    #[serde(default)]
    pub flagged: Vec<Flag>,
}

pub fn is_mask_file(path: &Path) -> bool {
    path.file_name()
        .and_then(|n| n.to_str())
        .is_some_and(|n| n.ends_with(".mask.pgm") || n.ends_with(".mask.png"))
}

/// Mask files under `root`, keyed by their path relative to it, sorted.
pub fn mask_files(root: &Path) -> CliResult<BTreeMap<String, PathBuf>> {
    if !root.is_dir() {
        return Err(CliError::Io(format!("{} is not a directory", root.display())));
    }
    let mut out = BTreeMap::new();
    for entry in WalkDir::new(root).sort_by_file_name() {
        let entry = entry.map_err(|e| CliError::Io(e.to_string()))?;
        if entry.file_type().is_file() && is_mask_file(entry.path()) {
            let rel = entry
                .path()
                .strip_prefix(root)
                .map_err(|e| CliError::Internal(e.to_string()))?;
            let key = rel
                .components()
                .map(|c| c.as_os_str().to_string_lossy())
                .collect::<Vec<_>>()
                .join("/");
            out.insert(key, entry.path().to_path_buf());
        }
    }
    Ok(out)
}

fn section_from_stem(path: &Path) -> Option<usize> {
    mask_stem(path)?.strip_prefix("section_")?.parse().ok()
}

struct Particle {
    id: String,
    masks: Vec<PathBuf>,
}

fn measure_particle(p: &Particle) -> (Option<ObservationSetF64>, Option<Flag>) {
    let mut sections: [Option<MaskMeasurement>; SECTIONS] = Default::default();
    let mut silhouette = None;
    let mut problems = Vec::new();
    for path in &p.masks {
        let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
        let (mask, sidecar) = match read_mask(path) {
            Ok(m) => m,
            Err(e) => {
                problems.push(format!("{name}: {e}"));
                continue;
            }
        };
        let j = sidecar.as_ref().and_then(|s| s.section).or_else(|| section_from_stem(path));
        let Some(j) = j.filter(|&j| j < SECTIONS) else {
            problems.push(format!("{name}: no section index in 0..{SECTIONS}"));
            continue;
        };
        if sections[j].is_some() {
            problems.push(format!("{name}: duplicate section {j}"));
            continue;
        }
        if silhouette.is_none() {
            silhouette = sidecar.and_then(|s| s.silhouette_um);
        }
        sections[j] = Some(boundary_radii(&mask));
    }
    let missing: Vec<usize> = (0..SECTIONS).filter(|&j| sections[j].is_none()).collect();
    if !missing.is_empty() {
        problems.push(format!("missing sections {missing:?}"));
    }
    match observation_set(p.id.clone(), &sections, silhouette) {
        Ok(obs) => {
            let flag = (!problems.is_empty()).then(|| Flag {
                id: p.id.clone(),
                status: "INCOMPLETE".into(),
                reason: problems.join("; "),
            });
            (Some(obs), flag)
        }
        Err(e) => (
            None,
            Some(Flag {
                id: p.id.clone(),
                status: "INVALID".into(),
                reason: e.to_string(),
            }),
        ),
    }
}

pub fn run(args: &MeasureArgs) -> CliResult<()> {
    let mut root = args.input.clone();
    if root.join(PARTICLES_DIR).is_dir() {
        root = root.join(PARTICLES_DIR);
    }
    let files = mask_files(&root)?;
    let fallback_id = root
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| "particle".into());
    let mut groups: BTreeMap<String, Vec<PathBuf>> = BTreeMap::new();
    for (rel, path) in files {
        let id = match rel.rsplit_once('/') {
            Some((dir, _)) => dir.to_string(),
            None => fallback_id.clone(),
        };
        groups.entry(id).or_default().push(path);
    }
    let particles: Vec<Particle> = groups.into_iter().map(|(id, masks)| Particle { id, masks }).collect();
    let results: Vec<_> = particles.par_iter().map(measure_particle).collect();
    let mut doc = ObservationsFile::default();
    for (obs, flag) in results {
        if let Some(f) = flag {
            log::warn!("{} flagged {}: {}", f.id, f.status, f.reason);
            doc.flagged.push(f);
        }
        doc.observations.extend(obs);
    }
    write_json(&args.out, &doc)?;
    println!(
        "measured {} particles ({} flagged) into {}",
        doc.observations.len(),
        doc.flagged.len(),
        args.out.display()
    );
    Ok(())
}
