//! Seeded synthetic question-generation corpora. Each example is a short
//! templated sentence about a randomly named entity; the question repeats
//! that entity, so most question words outside the template vocabulary can
//! only be produced by copying from the source.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use serde_json::{Map, Value};

use crate::corpus::{Answer, Article, Paragraph, PreparedExample, QAPair, SquadFile};
use crate::textprep::make_binary_features;

const ONSETS: [&str; 16] = ["b", "d", "g", "k", "l", "m", "n", "p", "r", "s", "t", "w", "j", "h", "ng", "c"];
const VOWELS: [&str; 5] = ["a", "i", "u", "e", "o"];
const JOBS: [&str; 8] = ["guru", "dokter", "petani", "nelayan", "pedagang", "penulis", "pelukis", "hakim"];

/// A capitalized pseudo-name of two or three syllables.
pub fn random_name(rng: &mut ChaCha8Rng) -> String {
    let syllables = rng.gen_range(2..=3);
    let mut s = String::new();
    for _ in 0..syllables {
        s.push_str(ONSETS.choose(rng).expect("non-empty"));
        s.push_str(VOWELS.choose(rng).expect("non-empty"));
    }
    if rng.gen_bool(0.3) {
        s.push('n');
    }
    let mut c = s.chars();
    let first = c.next().expect("non-empty").to_ascii_uppercase();
    std::iter::once(first).chain(c).collect()
}

#[derive(Clone, Copy)]
enum Slot {
    Word(&'static str),
    Subject,
    Place,
    Person,
    Year,
    Job,
}

struct Template {
    src: &'static [Slot],
    /// Index into `src` of the answer slot.
    answer: usize,
    question: &'static [Slot],
}

use Slot::*;

const TEMPLATES: [Template; 6] = [
    Template {
        src: &[Subject, Word("lahir"), Word("di"), Place, Word("pada"), Word("tahun"), Year, Word(".")],
        answer: 3,
        question: &[Word("di"), Word("mana"), Subject, Word("lahir"), Word("?")],
    },
    Template {
        src: &[Subject, Word("lahir"), Word("di"), Place, Word("pada"), Word("tahun"), Year, Word(".")],
        answer: 6,
        question: &[Word("kapan"), Subject, Word("lahir"), Word("?")],
    },
    Template {
        src: &[Subject, Word("adalah"), Word("ibu"), Word("kota"), Word("dari"), Place, Word(".")],
        answer: 5,
        question: &[Subject, Word("adalah"), Word("ibu"), Word("kota"), Word("dari"), Word("negara"), Word("apa"), Word("?")],
    },
    Template {
        src: &[Word("buku"), Subject, Word("ditulis"), Word("oleh"), Person, Word("pada"), Word("tahun"), Year, Word(".")],
        answer: 4,
        question: &[Word("siapa"), Word("yang"), Word("menulis"), Word("buku"), Subject, Word("?")],
    },
    Template {
        src: &[Subject, Word("bekerja"), Word("sebagai"), Job, Word("di"), Word("kota"), Place, Word(".")],
        answer: 3,
        question: &[Word("apa"), Word("pekerjaan"), Subject, Word("?")],
    },
    Template {
        src: &[Word("sungai"), Subject, Word("mengalir"), Word("melalui"), Word("kota"), Place, Word(".")],
        answer: 5,
        question: &[Word("sungai"), Subject, Word("mengalir"), Word("melalui"), Word("kota"), Word("apa"), Word("?")],
    },
];

fn tags(slot: Slot, word: &str) -> (&'static str, &'static str) {
    match slot {
        Subject | Place | Person => ("NNP", if matches!(slot, Person) { "PER" } else { "LOC" }),
        Year => ("CD", "DATE"),
        Job => ("NN", "O"),
        Word(_) if word == "." || word == "?" => ("Z", "O"),
        Word("di" | "pada" | "dari" | "oleh" | "sebagai" | "melalui") => ("IN", "O"),
        Word("lahir" | "ditulis" | "bekerja" | "mengalir" | "adalah") => ("VB", "O"),
        Word(_) => ("NN", "O"),
    }
}

/// `n` examples drawn from `seed`. With `uncased`, source and target are
/// lowercased while the case feature keeps the original capitalization.
pub fn synthetic_corpus(n: usize, seed: u64, uncased: bool) -> Vec<PreparedExample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| synthetic_example(&mut rng, uncased)).collect()
}

pub fn synthetic_example(rng: &mut ChaCha8Rng, uncased: bool) -> PreparedExample {
    let t = &TEMPLATES[rng.gen_range(0..TEMPLATES.len())];
    let subject = random_name(rng);
    let place = random_name(rng);
    let person = random_name(rng);
    let year = rng.gen_range(1800..2021).to_string();
    let job = JOBS.choose(rng).expect("non-empty").to_string();
    let fill = |s: Slot| -> String {
        match s {
            Word(w) => w.to_string(),
            Subject => subject.clone(),
            Place => place.clone(),
            Person => person.clone(),
            Year => year.clone(),
            Job => job.clone(),
        }
    };
    let src: Vec<String> = t.src.iter().map(|&s| fill(s)).collect();
    let tgt: Vec<String> = t.question.iter().map(|&s| fill(s)).collect();
    let (ans, case) = make_binary_features(&src, (t.answer, t.answer));
    let (pos, ne): (Vec<String>, Vec<String>) = t
        .src
        .iter()
        .zip(&src)
        .map(|(&s, w)| {
            let (p, e) = tags(s, w);
            (p.to_string(), e.to_string())
        })
        .unzip();
    let lower = |v: Vec<String>| -> Vec<String> {
        if uncased {
            v.into_iter().map(|w| w.to_lowercase()).collect()
        } else {
            v
        }
    };
    let answer_text = vec![src[t.answer].clone()];
    PreparedExample {
        src: lower(src),
        tgt: lower(tgt),
        ans,
        case,
        pos,
        ne,
        answer_text: lower(answer_text),
    }
}

fn detokenize(tokens: &[String]) -> String {
    let mut out = String::new();
    for t in tokens {
        if !out.is_empty() && !matches!(t.as_str(), "." | "?" | ",") {
            out.push(' ');
        }
        out.push_str(t);
    }
    out
}

/// Replaces one interior character, imitating a translation that drifted
/// slightly from the text of the context.
fn perturb(word: &str, rng: &mut ChaCha8Rng) -> String {
    let mut chars: Vec<char> = word.chars().collect();
    if chars.len() > 2 {
        let i = rng.gen_range(1..chars.len());
        chars[i] = if chars[i] == 'x' { 'y' } else { 'x' };
    }
    chars.into_iter().collect()
}

/// A small SQuAD-format corpus of `paragraphs` contexts with two to four
/// templated sentences each and one question per sentence. About a fifth
/// of the stored answers carry a one-character drift and one in twenty an
/// unrelated string, so the repair step has work to do.
pub fn synthetic_squad(paragraphs: usize, seed: u64) -> SquadFile {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    for p in 0..paragraphs {
        let n = rng.gen_range(2..=4);
        let mut context = String::new();
        let mut qas = Vec::new();
        for q in 0..n {
            let ex = synthetic_example(&mut rng, false);
            let answer_pos = ex.ans.iter().position(|&a| a == 1).expect("one answer token");
            if !context.is_empty() {
                context.push(' ');
            }
            let prefix = detokenize(&ex.src[..answer_pos]);
            let start = context.chars().count() + prefix.chars().count() + usize::from(answer_pos > 0);
            context.push_str(&detokenize(&ex.src));
            let gold = ex.src[answer_pos].clone();
            let roll: f64 = rng.gen();
            let text = if roll < 0.05 {
                random_name(&mut rng) + " " + &random_name(&mut rng)
            } else if roll < 0.25 {
                perturb(&gold, &mut rng)
            } else {
                gold
            };
            qas.push(QAPair {
                id: format!("syn-{seed}-{p}-{q}"),
                question: detokenize(&ex.tgt),
                answers: vec![Answer {
                    text,
                    answer_start: start,
                    extra: Map::new(),
                }],
                is_impossible: false,
                indonesian_answer: None,
                indonesian_answer_start: None,
                extra: Map::new(),
            });
        }
        out.push(Article {
            title: format!("Artikel {p}"),
            paragraphs: vec![Paragraph {
                context,
                qas,
                extra: Map::new(),
            }],
            extra: Map::new(),
        });
    }
    let mut extra = Map::new();
    extra.insert("version".into(), Value::String("v2.0".into()));
    SquadFile { data: out, extra }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn squad_offsets_point_at_answers() {
        let f = synthetic_squad(20, 5);
        assert_eq!(f, synthetic_squad(20, 5));
        let mut exact = 0;
        for p in f.data.iter().flat_map(|a| &a.paragraphs) {
            for qa in &p.qas {
                let a = &qa.answers[0];
                let at: String = p.context.chars().skip(a.answer_start).take(a.text.chars().count()).collect();
                exact += usize::from(at == a.text);
            }
        }
        let total = f.num_pairs();
        assert!(total >= 40);
        assert!(exact * 10 >= total * 6 && exact < total, "{exact}/{total}");
    }

    #[test]
    fn examples_are_valid_and_seeded() {
        let a = synthetic_corpus(50, 3, false);
        assert_eq!(a, synthetic_corpus(50, 3, false));
        assert_ne!(a, synthetic_corpus(50, 4, false));
        for ex in &a {
            ex.validate().unwrap();
            assert_eq!(ex.ans.iter().filter(|&&b| b == 1).count(), 1);
            let subject_copied = ex.tgt.iter().any(|w| w.chars().next().unwrap().is_uppercase() && ex.src.contains(w));
            assert!(subject_copied, "{:?}", ex.tgt);
        }
    }

    #[test]
    fn uncased_keeps_case_feature() {
        let c = synthetic_corpus(10, 1, false);
        let u = synthetic_corpus(10, 1, true);
        for (c, u) in c.iter().zip(&u) {
            assert_eq!(c.case, u.case);
            assert!(u.src.iter().all(|w| w.to_lowercase() == *w));
            assert!(c.case.contains(&1));
        }
    }
}
