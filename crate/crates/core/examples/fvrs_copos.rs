//! Short COPOS run on the fully observable 5x5 rock-sampling task.
//!
//! `cargo run --release --example fvrs_copos [iterations]`

use copos::harness::{read_progress_column, run_experiment, ExperimentConfig};

fn main() -> anyhow::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let iterations = std::env::args().nth(1).map(|s| s.parse()).transpose()?.unwrap_or(20);
    let tmp = tempfile::tempdir()?;
    let out = tmp.path().to_path_buf();
    let mut cfg = ExperimentConfig::parse(
        "env = fvrs-5x5-full\nalgo = copos\nsamples_per_iteration = 1000\nepsilon = 0.01\nbeta_mode = 0.01\n",
        std::path::Path::new("."),
    )?;
    cfg.iterations = iterations;
    cfg.out = Some(out.clone());
    let summary = run_experiment(&cfg)?;

    let disc = read_progress_column(&out.join("progress.csv"), "disc_return")?;
    let entropy = read_progress_column(&out.join("progress.csv"), "entropy")?;
    for (i, (d, h)) in disc.iter().zip(&entropy).enumerate().step_by(5.max(iterations / 10)) {
        println!("iter {i:>4}: disc_return {:>8.4}, entropy {:.4}", d.unwrap_or(f64::NAN), h.unwrap_or(f64::NAN));
    }
    println!("final disc_return {:.4}, entropy {:.4}", summary.final_disc_return, summary.final_entropy);
    if let Some(r) = summary.random_baseline {
        println!("random policy disc_return {:.4}", r.disc_return);
    }
    Ok(())
}
