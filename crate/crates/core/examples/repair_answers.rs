//! Relocating translated answers inside translated contexts.
//!
//! ```sh
//! cargo run --release --example repair_answers
//! ```

use qgen::repair::{repair_answer, repair_corpus, similarity_ratio, RepairConfig, SearchScope};
use qgen::synthetic::synthetic_squad;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let cfg = RepairConfig::new(0.8, SearchScope::NearOriginalFirst)?;

    let context = "Beyoncé Giselle Knowles-Carter lahir 4 September 1981 di Houston, Texas. \
                   Ia tampil dalam berbagai kompetisi menyanyi dan menari saat masih kecil.";
    let cases = [
        ("Houston, Texas", 66),
        ("Houston , Texas", 66),
        ("September 1981", 40),
        ("Berbahaya dalam Cinta", 120),
    ];
    println!("{:<24} {:>6} {:>6}  match", "answer", "start", "ratio");
    for (answer, original_start) in cases {
        let o = repair_answer(context, answer, original_start, None, &cfg);
        println!("{:<24} {:>6} {:>6.3}  {:?}", answer, o.new_start, o.ratio, o.matched_text);
    }
    println!(
        "\nratio(\"Dangerously in Love\", \"Berbahaya dalam Cinta\") = {:.3}",
        similarity_ratio("Dangerously in Love", "Berbahaya dalam Cinta")
    );

    // a corpus where a fifth of the answers carry a one-character error
    let squad = synthetic_squad(40, 3);
    for threshold in [0.6, 0.8, 0.95] {
        let cfg = RepairConfig::new(threshold, SearchScope::WholeContext)?;
        let (_, report) = repair_corpus(&squad.data, &cfg);
        println!(
            "threshold {threshold:.2}: {} exact, {} repaired, {} not found",
            report.exact, report.repaired, report.not_found
        );
    }
    Ok(())
}
