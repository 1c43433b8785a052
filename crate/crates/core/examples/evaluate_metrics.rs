//! BLEU-1..4 and ROUGE-L on hand-checkable pairs, then on files.
//!
//! ```sh
//! cargo run --release --example evaluate_metrics
//! ```

use std::fs;

use qgen::metrics::{bleu, corpus_stats, evaluate_corpus, lcs_length, rouge_l, DEFAULT_BETA};

fn toks(s: &str) -> Vec<&str> {
    s.split(' ').collect()
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let pairs = [
        ("the cat", "the cat sat"),
        ("a b c", "a b d"),
        ("a b c d", "a c d"),
        ("di mana ia lahir ?", "di mana ia lahir ?"),
    ];
    println!("{:<20} {:<20} {:>7} {:>7} {:>7} {:>4}", "hypothesis", "reference", "BLEU-1", "BLEU-2", "ROUGE-L", "LCS");
    for (h, r) in pairs {
        let (h1, r1) = (vec![toks(h)], vec![toks(r)]);
        println!(
            "{:<20} {:<20} {:>7.2} {:>7.2} {:>7.2} {:>4}",
            h,
            r,
            bleu(&h1, &r1, 1)?,
            bleu(&h1, &r1, 2)?,
            rouge_l(&h1, &r1, DEFAULT_BETA)?,
            lcs_length(&h1[0], &r1[0])
        );
    }

    let hyps: Vec<Vec<&str>> = pairs.iter().map(|p| toks(p.0)).collect();
    let refs: Vec<Vec<&str>> = pairs.iter().map(|p| toks(p.1)).collect();
    let stats = corpus_stats(&hyps, &refs, 4)?;
    println!(
        "\ncorpus: hyp length {}, ref length {}, brevity penalty {:.4}",
        stats.hyp_len,
        stats.ref_len,
        stats.brevity_penalty()
    );

    let dir = tempfile::tempdir()?;
    let (hyp, reference) = (dir.path().join("hyp.txt"), dir.path().join("ref.txt"));
    fs::write(&hyp, "Di mana Beyonce lahir?\nkapan ia mulai bernyanyi ?\nsiapa ayahnya?\n")?;
    fs::write(&reference, "di mana beyonce lahir ?\nkapan beyonce mulai bernyanyi ?\nsiapa nama ayah beyonce ?\n")?;
    let report = evaluate_corpus(&hyp, &reference, DEFAULT_BETA)?;
    println!("\n{}", report.table());
    println!("{}", serde_json::to_string(&report)?);
    Ok(())
}
