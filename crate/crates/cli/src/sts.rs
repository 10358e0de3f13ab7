use std::path::PathBuf;

use clap::Args;
use inspect_core::sts::{
    generate_dataset, read_manifest, regenerate_from_manifest, write_labels, write_manifest,
    StsCounts, StsParams, MANIFEST_FILE,
};

use crate::error::CliError;

#[derive(Args)]
pub struct StsArgs {
    /// Output directory for images, manifest.csv and labels.csv.
    #[arg(long, short)]
    out: PathBuf,
    #[arg(long, default_value_t = 1000)]
    nominal: usize,
    #[arg(long, default_value_t = 500)]
    local: usize,
    #[arg(long, default_value_t = 500)]
    global: usize,
    #[arg(long, default_value_t = 0.6)]
    phi1: f64,
    #[arg(long, default_value_t = 0.35)]
    phi2: f64,
    /// Image side length in pixels.
    #[arg(long, default_value_t = 250)]
    size: usize,
    #[arg(long, default_value_t = 1.0)]
    noise_sd: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Re-render the images listed in an existing manifest instead.
    #[arg(long, conflicts_with_all = ["nominal", "local", "global", "phi1", "phi2", "seed"])]
    from_manifest: Option<PathBuf>,
}

pub fn run(args: StsArgs) -> Result<(), CliError> {
    let rows = match &args.from_manifest {
        Some(manifest) => {
            if !manifest.is_file() {
                return Err(CliError::usage(format!(
                    "manifest {} not found",
                    manifest.display()
                )));
            }
            regenerate_from_manifest(manifest, args.size, args.noise_sd, &args.out)?;
            let rows = read_manifest(manifest)?;
            let copy = args.out.join(MANIFEST_FILE);
            if copy.canonicalize().ok() != manifest.canonicalize().ok() {
                write_manifest(&rows, &copy)?;
            }
            rows
        }
        None => {
            let params = StsParams {
                phi1: args.phi1,
                phi2: args.phi2,
                size: args.size,
                noise_sd: args.noise_sd,
            };
            params.validate().map_err(CliError::usage)?;
            let counts = StsCounts {
                nominal: args.nominal,
                local: args.local,
                global: args.global,
            };
            generate_dataset(counts, &params, args.seed, &args.out)?
        }
    };
    write_labels(&rows, &args.out.join("labels.csv"))?;
    log::info!("wrote {} images to {}", rows.len(), args.out.display());
    Ok(())
}
