use triso_morph::synthgen::generate_dataset;

use crate::config::RunConfig;
use crate::error::{CliError, CliResult};
use crate::SynthArgs;

pub fn run(args: &SynthArgs, cfg: &RunConfig) -> CliResult<()> {
    let seed = args
        .seed
        .or(cfg.seed)
        .ok_or_else(|| CliError::usage("synth needs --seed (or `seed` in the config file)"))?;
    if args.n == 0 {
        return Err(CliError::usage("--n must be at least 1"));
    }
    let mut synth = cfg.synth.clone().unwrap_or_default();
    synth.seed = seed;
    synth.validate()?;
    let manifest = generate_dataset(args.n, &synth, &args.out)?;
    println!(
        "wrote {} particles ({} sections each) to {}; digest {}",
        manifest.n_particles,
        manifest.n_sections,
        args.out.display(),
        manifest.digest
    );
    Ok(())
}
