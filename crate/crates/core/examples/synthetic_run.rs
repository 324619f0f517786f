//! Full pipeline on the synthetic two-vocabulary corpus.
//!
//! `cargo run --release -p deepstat --example synthetic_run [dir]`

use std::path::PathBuf;
use std::time::Instant;

use deepstat::pipeline::{self, PipelineConfig, Stage};
use deepstat::synthetic::{write_demo, SyntheticSpec};

fn main() -> deepstat::Result<()> {
    let dir = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "synthetic_run".into()));
    let config = PipelineConfig::load(&write_demo(&dir, &SyntheticSpec::default())?)?;
    let start = Instant::now();
    for stage in [Stage::TrainGan, Stage::ExtractStats, Stage::TrainAe, Stage::Calibrate] {
        pipeline::run_stage(stage, &config)?;
        println!("{:<14} done at {:.1}s", stage.name(), start.elapsed().as_secs_f64());
    }
    let (summary, _) = pipeline::evaluate_stage(&config, &pipeline::Layout::new(&config.out_dir))?;
    println!("{}", serde_json::to_string_pretty(&summary)?);
    Ok(())
}
