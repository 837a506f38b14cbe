use serde::Deserialize;
use triso_morph::io::write_json;
use triso_morph::spherefit::fit_batch;
use triso_morph::ObservationSetF64;

use crate::config::RunConfig;
use crate::error::{CliError, CliResult};
use crate::measure::ObservationsFile;
use crate::FitArgs;

#[derive(Deserialize)]
#[serde(untagged)]
enum Input {
    File(ObservationsFile),
    Bare(Vec<ObservationSetF64>),
}

pub fn run(args: &FitArgs, cfg: &RunConfig) -> CliResult<()> {
    let mut fit_cfg = cfg.fit.clone().unwrap_or_default();
    if let Some(seed) = args.seed.or(cfg.seed) {
        fit_cfg.seed = seed;
    }
    if let Some(n) = args.max_iterations {
        fit_cfg.max_iterations = n;
    }
    if let Some(n) = args.multistart {
        fit_cfg.multistart_count = n;
    }
    if args.lenient {
        fit_cfg.require_complete = false;
    }
    fit_cfg.validate()?;

    let text = std::fs::read_to_string(&args.input)
        .map_err(|e| CliError::Io(format!("{}: {e}", args.input.display())))?;
    let observations = match serde_json::from_str::<Input>(&text) {
        Ok(Input::File(f)) => f.observations,
        Ok(Input::Bare(v)) => v,
        Err(_) => {
            // re-parse strictly for a useful message
            let e = serde_json::from_str::<ObservationsFile>(&text)
                .err()
                .map_or_else(|| "unrecognized observations document".to_string(), |e| e.to_string());
            return Err(CliError::usage(format!("{}: {e}", args.input.display())));
        }
    };
    let outcome = fit_batch(&observations, &fit_cfg);
    write_json(&args.out, &outcome)?;
    let s = &outcome.summary;
    println!(
        "attempted {} converged {} incomplete {} nonconverged {} degenerate {}",
        s.attempted, s.converged, s.failed_incomplete, s.failed_nonconverged, s.failed_degenerate
    );
    Ok(())
}
