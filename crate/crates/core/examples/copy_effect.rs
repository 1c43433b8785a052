//! BiGRU with and without the copy mechanism on a corpus whose questions
//! repeat rare names from the passage.
//!
//! ```sh
//! cargo run --release --example copy_effect
//! ```

use std::time::Instant;

use qgen::decode::{evaluate_generation, GenerateOptions};
use qgen::models::{init_params, Arch, FeatureDims, ModelConfig};
use qgen::synthetic::synthetic_corpus;
use qgen::textprep::Vocabularies;
use qgen::train::{train_with_validation, TrainConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let data = synthetic_corpus(2000, 7, true);
    let (train, test) = data.split_at(1800);
    let (train, val) = train.split_at(1700);
    let vocabs = Vocabularies::build(train, 10_000, 2);
    let oov = test.iter().filter(|e| e.tgt.iter().any(|w| !vocabs.words.contains(w))).count();
    println!("vocabulary {}; {oov} of {} test questions contain an out-of-vocabulary word", vocabs.words.len(), test.len());

    for copy in [false, true] {
        let cfg = ModelConfig {
            use_copy: copy,
            uncased: true,
            word_dim: 32,
            hidden: 64,
            feature_dims: FeatureDims { ans: 4, case: 4, pos: 8, ne: 8 },
            ..ModelConfig::new(Arch::BiGru)
        };
        let tc = TrainConfig { epochs: 12, batch_size: 32, lr: 3e-3, patience: None, ..TrainConfig::default() };
        let t = Instant::now();
        let out = train_with_validation(init_params(&cfg, &vocabs, None, 1)?, train, val, &tc, |r| {
            eprintln!("  epoch {:>2}  train {:.4}  val {:.4}", r.epoch, r.train_loss, r.val_loss.unwrap_or(f64::NAN));
        })?;
        println!("\n{} ({:.0}s)", cfg.variant_name(), t.elapsed().as_secs_f64());
        for replace_unk in [false, true] {
            let opts = GenerateOptions { replace_unk, ..GenerateOptions::default() };
            let (report, generated) = evaluate_generation(&out.model, test, &opts)?;
            println!("replace_unk {replace_unk}:\n{}", report.table());
            println!("  e.g. {}", generated[0].words.join(" "));
        }
    }
    Ok(())
}
