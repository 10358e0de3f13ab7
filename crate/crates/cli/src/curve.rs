use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::PathBuf;

use anyhow::Context;
use clap::Args;
use inspect_core::experiments::{learning_curve, model_comparison, write_curve_csv, ModelPool};
use inspect_core::store;

use crate::error::CliError;

#[derive(Args)]
pub struct CurveArgs {
    /// Learning pool store; repeat together with --test to compare models.
    #[arg(long, required = true)]
    pool: Vec<PathBuf>,
    /// Fixed test store, one per --pool.
    #[arg(long, required = true)]
    test: Vec<PathBuf>,
    /// Learning set sizes per class, ascending.
    #[arg(long, value_delimiter = ',', default_value = "10,50,100,150,200,250,300,350")]
    sizes: Vec<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Curve CSV [default: stdout].
    #[arg(long, short)]
    output: Option<PathBuf>,
}

pub fn run(args: CurveArgs) -> Result<(), CliError> {
    if args.pool.len() != args.test.len() {
        return Err(CliError::usage(format!(
            "{} --pool stores but {} --test stores",
            args.pool.len(),
            args.test.len()
        )));
    }
    if args.sizes.is_empty()
        || args.sizes.contains(&0)
        || args.sizes.windows(2).any(|w| w[0] >= w[1])
    {
        return Err(CliError::usage(format!(
            "--sizes must be positive and strictly ascending, got {:?}",
            args.sizes
        )));
    }
    let mut models = Vec::with_capacity(args.pool.len());
    for (pool, test) in args.pool.iter().zip(&args.test) {
        for p in [pool, test] {
            if !p.is_file() {
                return Err(CliError::usage(format!("store {} not found", p.display())));
            }
        }
        let pool = store::load(pool)?;
        let test = store::load(test)?;
        let model_id = pool
            .first()
            .map(|r| r.embedding.model_id().to_string())
            .unwrap_or_default();
        models.push(ModelPool {
            model_id,
            pool,
            test,
        });
    }
    let points = if models.len() == 1 {
        let m = &models[0];
        learning_curve(&m.pool, &m.test, &args.sizes, args.seed)?
    } else {
        model_comparison(&models, &args.sizes, args.seed)?
    };
    match &args.output {
        Some(path) => {
            let file = File::create(path)
                .with_context(|| format!("cannot create {}", path.display()))?;
            let mut out = BufWriter::new(file);
            write_curve_csv(&points, &mut out)?;
            out.flush()?;
        }
        None => {
            let mut out = io::stdout().lock();
            write_curve_csv(&points, &mut out)?;
            out.flush()?;
        }
    }
    Ok(())
}
