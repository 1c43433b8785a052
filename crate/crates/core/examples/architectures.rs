//! The model variants side by side: parameter counts and one decoding
//! step on the same input, showing the copy gate and coverage.
//!
//! ```sh
//! cargo run --release --example architectures
//! ```

use qgen::models::certify::{toy_example, toy_vocabs};
use qgen::models::{init_params, Arch, AttentionKind, FeatureDims, ModelConfig};
use qgen::textprep::vocab::SOS;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let vocabs = toy_vocabs();
    let example = toy_example();
    println!("source: {}", example.src.join(" "));
    println!(
        "{:<12} {:<9} {:<24} {:>7} {:>6} {:>7}  top attention",
        "arch", "attention", "variant", "params", "p_gen", "P(oov)"
    );
    for arch in Arch::ALL {
        for attention in [AttentionKind::Bahdanau, AttentionKind::Luong] {
            if arch == Arch::Transformer && attention == AttentionKind::Luong {
                continue;
            }
            for (copy, coverage) in [(false, false), (true, false), (true, true)] {
                if arch == Arch::Transformer && coverage {
                    continue;
                }
                let cfg = ModelConfig {
                    attention,
                    use_copy: copy,
                    use_coverage: coverage,
                    uncased: true,
                    word_dim: 16,
                    hidden: 32,
                    layers: 1,
                    heads: 4,
                    feature_dims: FeatureDims { ans: 2, case: 2, pos: 4, ne: 4 },
                    ..ModelConfig::new(arch)
                };
                let model = init_params(&cfg, &vocabs, None, 1)?;
                let ex = model.encode_example(&example);
                let enc = model.encode(&ex)?;
                let out = model.decode_step(SOS, &enc.init, &enc)?;
                let peak = qgen::tensor::argmax(&out.attention);
                let p_oov = if copy {
                    format!("{:.4}", out.probs[model.vocab_size()..].iter().sum::<f64>())
                } else {
                    "-".into()
                };
                println!(
                    "{:<12} {:<9} {:<24} {:>7} {:>6} {:>7}  {} ({:.3})",
                    arch.to_string(),
                    if arch.is_recurrent() { attention.to_string() } else { "-".into() },
                    cfg.variant_name(),
                    model.params.num_scalars(),
                    out.p_gen.map_or("-".into(), |p| format!("{p:.3}")),
                    p_oov,
                    ex.src_tokens[peak],
                    out.attention[peak]
                );
            }
        }
    }
    Ok(())
}
