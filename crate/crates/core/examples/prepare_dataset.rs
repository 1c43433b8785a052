//! From a SQuAD-format file to feature-annotated training examples, with
//! externally produced POS and NE tags.
//!
//! ```sh
//! cargo run --release --example prepare_dataset
//! ```

use std::fs;

use qgen::corpus::{corpus_stats, load_examples, load_squad, persist_examples};
use qgen::repair::{repair_corpus, RepairConfig};
use qgen::textprep::{prepare_with_report, read_tag_file, FilterMode, PrepareOptions};

const SQUAD: &str = r#"{
  "version": "v2.0",
  "data": [{
    "title": "Beyonce",
    "paragraphs": [{
      "context": "Beyonce lahir di Houston, Texas. Ia mulai bernyanyi pada tahun 1990.",
      "qas": [
        {"id": "q1", "question": "Di mana Beyonce lahir?", "is_impossible": false,
         "answers": [{"text": "Houston, Texas", "answer_start": 17}]},
        {"id": "q2", "question": "Kapan ia mulai bernyanyi?", "is_impossible": false,
         "answers": [{"text": "tahun 1990", "answer_start": 58}]}
      ]
    }]
  }]
}"#;

const POS: &str = "Beyonce\tNNP\nlahir\tVB\ndi\tIN\nHouston\tNNP\n,\tZ\nTexas\tNNP\n.\tZ\n\
Ia\tPRP\nmulai\tVB\nbernyanyi\tVB\npada\tIN\ntahun\tNN\n1990\tCD\n.\tZ\n";

const NE: &str = "Beyonce\tPER\nlahir\tO\ndi\tO\nHouston\tLOC\n,\tO\nTexas\tLOC\n.\tO\n\
Ia\tO\nmulai\tO\nbernyanyi\tO\npada\tO\ntahun\tDATE\n1990\tDATE\n.\tO\n";

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let tmp = tempfile::tempdir()?;
    let dir = tmp.path();
    let (squad, pos, ne) = (dir.join("squad.json"), dir.join("pos.tsv"), dir.join("ne.tsv"));
    fs::write(&squad, SQUAD)?;
    fs::write(&pos, POS)?;
    fs::write(&ne, NE)?;

    let articles = load_squad(&squad)?;
    let (articles, report) = repair_corpus(&articles, &RepairConfig::default());
    println!("repair: {report:?}");

    for uncased in [false, true] {
        let opts = PrepareOptions {
            uncased,
            pos_tags: Some(read_tag_file(&pos)?),
            ne_tags: Some(read_tag_file(&ne)?),
            filter: FilterMode::FixedCaps,
            ..PrepareOptions::default()
        };
        let (examples, report) = prepare_with_report(&articles, &opts)?;
        println!("\nuncased = {uncased}: {report:?}");
        let ex = &examples[0];
        println!("{:<10} {:>3} {:>4} {:<5} {:<5}", "src", "ans", "case", "pos", "ne");
        for i in 0..ex.src.len() {
            println!("{:<10} {:>3} {:>4} {:<5} {:<5}", ex.src[i], ex.ans[i], ex.case[i], ex.pos[i], ex.ne[i]);
        }
        println!("tgt: {}", ex.tgt.join(" "));

        let out = dir.join(format!("examples-{uncased}.jsonl"));
        persist_examples(&examples, &out)?;
        let back = load_examples(&out)?;
        assert_eq!(back, examples);
        println!("stats: {:?}", corpus_stats(&back));
    }
    Ok(())
}

