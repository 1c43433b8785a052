//! The whole flow on a synthetic SQuAD file: repair, prepare, split,
//! train, generate and evaluate, as the `pipeline` subcommand runs it.
//!
//! ```sh
//! cargo run --release --example end_to_end_pipeline -- [out-dir]
//! ```

use std::path::PathBuf;

use qgen::cli::{run_pipeline, RunConfig, PIPELINE_ARTIFACTS};
use qgen::corpus::save_squad;
use qgen::models::{Arch, FeatureDims};
use qgen::synthetic::synthetic_squad;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let tmp = tempfile::tempdir()?;
    let out_dir = std::env::args().nth(1).map_or_else(|| tmp.path().join("run"), PathBuf::from);
    let input = tmp.path().join("squad.json");
    save_squad(&synthetic_squad(120, 7), &input)?;

    let cfg = RunConfig {
        seed: 7,
        uncased: true,
        copy: true,
        arch: Arch::BiGru,
        word_dim: 32,
        hidden: 64,
        feature_dims: FeatureDims { ans: 4, case: 4, pos: 8, ne: 8 },
        min_freq: 2,
        epochs: 10,
        batch_size: 16,
        lr: 3e-3,
        ..RunConfig::default()
    };
    let report = run_pipeline(&input, &out_dir, &cfg, &mut std::io::stderr())?;
    println!("{}", report.table());
    for name in PIPELINE_ARTIFACTS {
        println!("{:>10} bytes  {}", std::fs::metadata(out_dir.join(name))?.len(), out_dir.join(name).display());
    }

    // the same run through the command-line front end
    let cfg_file = tmp.path().join("config.json");
    std::fs::write(&cfg_file, serde_json::to_string(&cfg)?)?;
    let again = tmp.path().join("again");
    let argv = ["qgen", "pipeline", "--input", input.to_str().unwrap(), "--out-dir", again.to_str().unwrap(), "--config", cfg_file.to_str().unwrap()];
    let code = qgen::cli::run(argv, &mut std::io::sink(), &mut std::io::sink());
    let same = PIPELINE_ARTIFACTS
        .iter()
        .all(|n| std::fs::read(out_dir.join(n)).ok() == std::fs::read(again.join(n)).ok());
    println!("command-line rerun exit {code}, artifacts identical: {same}");
    Ok(())
}
