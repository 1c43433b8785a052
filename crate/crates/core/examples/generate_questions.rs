//! Greedy and beam decoding, ranked hypotheses, and unknown-word
//! replacement with and without the copy mechanism.
//!
//! ```sh
//! cargo run --release --example generate_questions
//! ```

use qgen::decode::{beam_search, generate, BoundModel, GenerateOptions};
use qgen::models::{init_params, Arch, FeatureDims, Model, ModelConfig};
use qgen::synthetic::synthetic_corpus;
use qgen::textprep::vocab::UNK;
use qgen::textprep::Vocabularies;
use qgen::train::{train_with_validation, TrainConfig};

fn trained(copy: bool, vocabs: &Vocabularies, data: &[qgen::corpus::PreparedExample]) -> Result<Model, Box<dyn std::error::Error>> {
    let cfg = ModelConfig {
        use_copy: copy,
        uncased: true,
        word_dim: 32,
        hidden: 64,
        feature_dims: FeatureDims { ans: 4, case: 4, pos: 8, ne: 8 },
        ..ModelConfig::new(Arch::BiGru)
    };
    let tc = TrainConfig { epochs: 8, batch_size: 16, lr: 3e-3, patience: None, ..TrainConfig::default() };
    let outcome = train_with_validation(init_params(&cfg, vocabs, None, 3)?, data, &[], &tc, |_| {})?;
    Ok(outcome.model)
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let data = synthetic_corpus(500, 11, true);
    let (train, test) = data.split_at(480);
    let vocabs = Vocabularies::build(train, 10_000, 2);
    eprintln!("training two small models on {} examples ...", train.len());
    let plain = trained(false, &vocabs, train)?;
    let copy = trained(true, &vocabs, train)?;

    let ex = &test[0];
    println!("source:    {}", ex.src.join(" "));
    println!("answer:    {}", ex.answer_text.join(" "));
    println!("reference: {}\n", ex.tgt.join(" "));

    let enc = copy.encode_example(ex);
    let bound = BoundModel::new(&copy, &enc)?;
    println!("copy model, beam 4:");
    for h in beam_search(&bound, 4, 30, 0.0)?.into_iter().take(4) {
        let words: Vec<&str> = h.tokens.iter().map(|&t| enc.token_str(&copy.vocabs, t)).collect();
        println!("  {:>8.4}  {}", h.score, words.join(" "));
    }

    for (name, model) in [("no copy", &plain), ("copy", &copy)] {
        for replace_unk in [false, true] {
            for beam in [1, 5] {
                let opts = GenerateOptions { beam, replace_unk, ..GenerateOptions::default() };
                let g = generate(model, ex, &opts)?;
                let unks = g.hypothesis.tokens.iter().filter(|&&t| t == UNK).count();
                println!(
                    "{name:<8} beam {beam} replace_unk {:<5} ({unks} unk): {}",
                    replace_unk,
                    g.words.join(" ")
                );
            }
        }
    }
    Ok(())
}
