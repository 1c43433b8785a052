//! Gradient certification on a tiny fixed problem.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{init_params, model_loss_and_grads, Arch, AttentionKind, FeatureDims, ModelConfig, ModelError, Result};
use crate::corpus::PreparedExample;
use crate::tensor::{grad_check, GradCheckConfig, GradCheckReport, Tensor, TensorError};
use crate::textprep::{build_vocab, EmbeddingMatrix, Vocabularies};

/// Coordinates sampled per parameter tensor.
pub const COORDS_PER_PARAM: usize = 24;

pub fn toy_vocabs() -> Vocabularies {
    Vocabularies {
        words: build_vocab("di mana ia lahir ? kota apa yang siapa pergi ke".split(' '), 30, 1),
        pos: build_vocab("NN VB IN".split(' '), 30, 1),
        ne: build_vocab("O LOC".split(' '), 30, 1),
    }
}

/// One example with an out-of-vocabulary answer word that the target copies.
pub fn toy_example() -> PreparedExample {
    let words = |s: &str| s.split(' ').map(String::from).collect::<Vec<_>>();
    PreparedExample {
        src: words("ia lahir di Houston kota ?"),
        tgt: words("di mana Houston lahir ?"),
        ans: vec![0, 0, 0, 1, 0, 0],
        case: vec![0, 0, 0, 1, 0, 0],
        pos: words("NN VB IN NN NN XX"),
        ne: words("O O O LOC O O"),
        answer_text: vec!["Houston".into()],
    }
}

pub fn cell_config(arch: Arch, attention: AttentionKind, copy: bool, coverage: bool, hidden: usize) -> ModelConfig {
    ModelConfig {
        arch,
        attention,
        use_copy: copy,
        use_coverage: coverage,
        word_dim: 5,
        feature_dims: FeatureDims {
            ans: 2,
            case: 2,
            pos: 3,
            ne: 2,
        },
        hidden,
        layers: 1,
        heads: 2,
        coverage_weight: 0.7,
        ..ModelConfig::new(arch)
    }
}

/// Every legal architecture cell: arch x attention x copy x coverage.
pub fn cells(hidden: usize) -> Vec<ModelConfig> {
    let mut out = Vec::new();
    for arch in Arch::ALL {
        for attention in [AttentionKind::Bahdanau, AttentionKind::Luong] {
            for copy in [false, true] {
                for coverage in [false, true] {
                    if arch == Arch::Transformer && coverage {
                        continue;
                    }
                    out.push(cell_config(arch, attention, copy, coverage, hidden));
                }
            }
        }
    }
    out
}

pub fn cell_name(cfg: &ModelConfig) -> String {
    format!(
        "{}/{}/copy={}/cov={}",
        cfg.arch,
        cfg.attention,
        if cfg.use_copy { "on" } else { "off" },
        if cfg.use_coverage { "on" } else { "off" }
    )
}

/// Runs the finite-difference check on the token-mean loss of the toy
/// example at a random point: unit-scale word vectors and every parameter
/// shifted by U(-0.5, 0.5) away from its initial value.
pub fn certify(cfg: &ModelConfig, seed: u64) -> Result<GradCheckReport> {
    let vocabs = toy_vocabs();
    let mut rng = ChaCha8Rng::seed_from_u64(seed + 100);
    let emb = EmbeddingMatrix {
        table: Tensor::uniform(&[vocabs.words.len(), cfg.word_dim], 1.0, &mut rng),
        pretrained_rows: 0,
    };
    let mut model = init_params(cfg, &vocabs, Some(&emb), seed)?;
    for p in model.params.iter_mut() {
        for x in p.value.data_mut() {
            *x += rng.gen_range(-0.5..0.5);
        }
    }
    let batch = vec![model.encode_example(&toy_example())];
    let frozen = model.clone();
    let report = grad_check(
        &mut model.params,
        |p| {
            model_loss_and_grads(&frozen, p, &batch).map_err(|e| match e {
                ModelError::Tensor(t) => t,
                other => TensorError::Harness(other.to_string()),
            })
        },
        &GradCheckConfig {
            seed,
            max_coords_per_param: COORDS_PER_PARAM,
            ..Default::default()
        },
    )?;
    Ok(report)
}
