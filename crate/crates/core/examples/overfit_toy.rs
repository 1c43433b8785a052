//! Memorising a 32-example corpus: the loss should approach zero and the
//! model should reproduce its own training questions.
//!
//! ```sh
//! cargo run --release --example overfit_toy
//! ```

use std::time::Instant;

use qgen::decode::{evaluate_generation, GenerateOptions};
use qgen::models::{init_params, Arch, FeatureDims, ModelConfig};
use qgen::synthetic::synthetic_corpus;
use qgen::textprep::Vocabularies;
use qgen::train::{train_with_validation, TrainConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let data = synthetic_corpus(32, 1, true);
    let vocabs = Vocabularies::build(&data, 10_000, 1);
    let cfg = ModelConfig {
        use_copy: true,
        uncased: true,
        word_dim: 32,
        hidden: 64,
        feature_dims: FeatureDims { ans: 4, case: 4, pos: 8, ne: 8 },
        ..ModelConfig::new(Arch::BiGru)
    };
    let model = init_params(&cfg, &vocabs, None, 1)?;
    let tc = TrainConfig { epochs: 200, batch_size: 8, lr: 3e-3, patience: None, ..TrainConfig::default() };
    let t = Instant::now();
    let out = train_with_validation(model, &data, &[], &tc, |r| {
        if r.epoch % 20 == 0 {
            println!("epoch {:>3}  loss {:.4}  {:.1}s", r.epoch, r.train_loss, t.elapsed().as_secs_f64());
        }
    })?;
    let (report, generated) = evaluate_generation(&out.model, &data, &GenerateOptions::default())?;
    println!("{} on its training set:\n{}", cfg.variant_name(), report.table());
    for (g, ex) in generated.iter().zip(&data).take(3) {
        println!("  {}\n  {}\n", g.words.join(" "), ex.tgt.join(" "));
    }
    Ok(())
}
