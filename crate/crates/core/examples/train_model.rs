//! Training with a held-out split, early stopping and a checkpoint round
//! trip.
//!
//! ```sh
//! cargo run --release --example train_model -- [bigru|bilstm|transformer] [copy] [coverage]
//! ```

use qgen::models::{init_params, Arch, FeatureDims, ModelConfig};
use qgen::synthetic::synthetic_corpus;
use qgen::textprep::Vocabularies;
use qgen::train::{evaluate_loss, load_checkpoint, save_checkpoint, split_train_val, train_with_validation, TrainConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let arch: Arch = args.first().map_or(Ok(Arch::BiGru), |s| s.parse())?;
    let copy = args.iter().any(|a| a == "copy");
    let coverage = args.iter().any(|a| a == "coverage");

    let data = synthetic_corpus(600, 5, true);
    let (train, val) = split_train_val(&data, 0.9, 42)?;
    let vocabs = Vocabularies::build(&train, 10_000, 2);
    let cfg = ModelConfig {
        use_copy: copy,
        use_coverage: coverage,
        uncased: true,
        word_dim: 32,
        hidden: 64,
        layers: if arch.is_recurrent() { 1 } else { 2 },
        feature_dims: FeatureDims { ans: 4, case: 4, pos: 8, ne: 8 },
        ..ModelConfig::new(arch)
    };
    println!(
        "{arch} {}: {} train / {} validation examples, vocabulary {}",
        cfg.variant_name(),
        train.len(),
        val.len(),
        vocabs.words.len()
    );

    let model = init_params(&cfg, &vocabs, None, 42)?;
    let tc = TrainConfig { epochs: 15, batch_size: 16, lr: 3e-3, patience: Some(3), ..TrainConfig::default() };
    let outcome = train_with_validation(model, &train, &val, &tc, |r| {
        println!("epoch {:>2}  train {:.4}  val {:.4}", r.epoch, r.train_loss, r.val_loss.unwrap_or(f64::NAN));
    })?;
    println!(
        "best epoch {}{}",
        outcome.best_epoch,
        if outcome.stopped_early { " (stopped early)" } else { "" }
    );

    let dir = tempfile::tempdir()?;
    let path = dir.path().join("model.ckpt");
    save_checkpoint(&outcome.checkpoint, &path)?;
    let restored = load_checkpoint(&path)?.to_model()?;
    let encoded: Vec<_> = val.iter().map(|e| restored.encode_example(e)).collect();
    let before = evaluate_loss(&outcome.model, &encoded)?;
    let after = evaluate_loss(&restored, &encoded)?;
    println!(
        "checkpoint {} bytes, fingerprint {}; validation loss {before:.6} before, {after:.6} after reload",
        std::fs::metadata(&path)?.len(),
        &outcome.checkpoint.fingerprint[..16]
    );
    assert_eq!(before.to_bits(), after.to_bits());
    Ok(())
}
