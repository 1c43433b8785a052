//! SQuAD-format records and the line-delimited prepared-example format.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use thiserror::Error;

/// Longest question (in tokens) a prepared example may carry.
pub const MAX_QUESTION_TOKENS: usize = 60;
/// Longest answer (in tokens) a prepared example may carry.
pub const MAX_ANSWER_TOKENS: usize = 20;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: file starts with a UTF-8 byte order mark; strip it before loading")]
    Bom { path: String },
    #[error("{path}: invalid UTF-8 at byte {offset}")]
    Utf8 { path: String, offset: usize },
    #[error("{path}: JSON parse error at byte {offset} (line {line}, column {column}): {message}")]
    Parse {
        path: String,
        offset: usize,
        line: usize,
        column: usize,
        message: String,
    },
    #[error("schema error: missing or invalid key `{key}` in {record}")]
    Schema { key: String, record: String },
    #[error("{path}:{line}: {message}")]
    ExampleLine {
        path: String,
        line: usize,
        message: String,
    },
    #[error("example {index}: {message}")]
    Invariant { index: usize, message: String },
}

pub type Result<T> = std::result::Result<T, CorpusError>;

#[derive(Debug, Clone, PartialEq)]
pub struct Answer {
    pub text: String,
    pub answer_start: usize,
    pub extra: Map<String, Value>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QAPair {
    pub id: String,
    pub question: String,
    pub answers: Vec<Answer>,
    pub is_impossible: bool,
    pub indonesian_answer: Option<String>,
    /// New character offset in the context, `-1` when repair failed.
    pub indonesian_answer_start: Option<i64>,
    pub extra: Map<String, Value>,
}

impl QAPair {
    /// The answer used to build training data (the first one listed).
    pub fn primary_answer(&self) -> Option<&Answer> {
        self.answers.first()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Paragraph {
    pub context: String,
    pub qas: Vec<QAPair>,
    pub extra: Map<String, Value>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Article {
    pub title: String,
    pub paragraphs: Vec<Paragraph>,
    pub extra: Map<String, Value>,
}

/// A whole SQuAD file: articles plus any top-level keys such as `version`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SquadFile {
    pub data: Vec<Article>,
    pub extra: Map<String, Value>,
}

impl SquadFile {
    pub fn num_pairs(&self) -> usize {
        self.data
            .iter()
            .flat_map(|a| &a.paragraphs)
            .map(|p| p.qas.len())
            .sum()
    }
}

fn schema(key: &str, record: impl Into<String>) -> CorpusError {
    CorpusError::Schema {
        key: key.to_owned(),
        record: record.into(),
    }
}

fn take_obj(v: Value, key: &str, record: &str) -> Result<Map<String, Value>> {
    match v {
        Value::Object(m) => Ok(m),
        _ => Err(schema(key, record)),
    }
}

fn take_str(m: &mut Map<String, Value>, key: &str, record: &str) -> Result<String> {
    match m.remove(key) {
        Some(Value::String(s)) => Ok(s),
        _ => Err(schema(key, record)),
    }
}

fn take_array(m: &mut Map<String, Value>, key: &str, record: &str) -> Result<Vec<Value>> {
    match m.remove(key) {
        Some(Value::Array(a)) => Ok(a),
        _ => Err(schema(key, record)),
    }
}

fn parse_answer(v: Value, record: &str) -> Result<Answer> {
    let mut m = take_obj(v, "answers", record)?;
    let text = take_str(&mut m, "text", record)?;
    let answer_start = match m.remove("answer_start") {
        Some(Value::Number(n)) if n.as_u64().is_some() => n.as_u64().unwrap() as usize,
        _ => return Err(schema("answer_start", record)),
    };
    Ok(Answer {
        text,
        answer_start,
        extra: m,
    })
}

fn parse_qa(v: Value, where_: &str) -> Result<QAPair> {
    let mut m = take_obj(v, "qas", where_)?;
    let id = take_str(&mut m, "id", where_)?;
    let record = format!("qa `{id}`");
    let question = take_str(&mut m, "question", &record)?;
    let answers = take_array(&mut m, "answers", &record)?
        .into_iter()
        .map(|a| parse_answer(a, &record))
        .collect::<Result<Vec<_>>>()?;
    let is_impossible = match m.remove("is_impossible") {
        None => false,
        Some(Value::Bool(b)) => b,
        Some(_) => return Err(schema("is_impossible", record)),
    };
    let indonesian_answer = match m.remove("indonesian_answer") {
        None | Some(Value::Null) => None,
        Some(Value::String(s)) => Some(s),
        Some(_) => return Err(schema("indonesian_answer", record)),
    };
    let indonesian_answer_start = match m.remove("indonesian_answer_start") {
        None | Some(Value::Null) => None,
        Some(Value::Number(n)) if n.as_i64().is_some() => n.as_i64(),
        Some(_) => return Err(schema("indonesian_answer_start", record)),
    };
    Ok(QAPair {
        id,
        question,
        answers,
        is_impossible,
        indonesian_answer,
        indonesian_answer_start,
        extra: m,
    })
}

fn parse_article(v: Value, index: usize) -> Result<Article> {
    let where_ = format!("data[{index}]");
    let mut m = take_obj(v, "data", &where_)?;
    let title = match m.remove("title") {
        None => String::new(),
        Some(Value::String(s)) => s,
        Some(_) => return Err(schema("title", where_)),
    };
    let paragraphs = take_array(&mut m, "paragraphs", &where_)?
        .into_iter()
        .enumerate()
        .map(|(pi, p)| {
            let pw = format!("{where_}.paragraphs[{pi}]");
            let mut pm = take_obj(p, "paragraphs", &pw)?;
            let context = take_str(&mut pm, "context", &pw)?;
            if context.is_empty() {
                return Err(schema("context", format!("{pw} (empty context)")));
            }
            let qas = take_array(&mut pm, "qas", &pw)?
                .into_iter()
                .map(|q| parse_qa(q, &pw))
                .collect::<Result<Vec<_>>>()?;
            Ok(Paragraph {
                context,
                qas,
                extra: pm,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Article {
        title,
        paragraphs,
        extra: m,
    })
}

fn read_utf8(path: &Path) -> Result<String> {
    let p = path.display().to_string();
    let bytes = fs::read(path).map_err(|source| CorpusError::Io {
        path: p.clone(),
        source,
    })?;
    if bytes.starts_with(&[0xEF, 0xBB, 0xBF]) {
        return Err(CorpusError::Bom { path: p });
    }
    String::from_utf8(bytes).map_err(|e| CorpusError::Utf8 {
        path: p,
        offset: e.utf8_error().valid_up_to(),
    })
}

fn byte_offset(text: &str, line: usize, column: usize) -> usize {
    let line_start: usize = text
        .split_inclusive('\n')
        .take(line.saturating_sub(1))
        .map(str::len)
        .sum();
    line_start + column.saturating_sub(1)
}

/// Parses SQuAD v2.0 JSON text (top-level `data` array).
pub fn parse_squad(text: &str, path: &str) -> Result<SquadFile> {
    let value: Value = serde_json::from_str(text).map_err(|e| CorpusError::Parse {
        path: path.to_owned(),
        offset: byte_offset(text, e.line(), e.column()),
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })?;
    let mut top = take_obj(value, "data", "top level")?;
    let data = take_array(&mut top, "data", "top level")?
        .into_iter()
        .enumerate()
        .map(|(i, a)| parse_article(a, i))
        .collect::<Result<Vec<_>>>()?;
    Ok(SquadFile { data, extra: top })
}

pub fn load_squad_file(path: &Path) -> Result<SquadFile> {
    let text = read_utf8(path)?;
    parse_squad(&text, &path.display().to_string())
}

/// Loads every article of a SQuAD-format file.
pub fn load_squad(path: &Path) -> Result<Vec<Article>> {
    Ok(load_squad_file(path)?.data)
}

fn answer_value(a: &Answer) -> Value {
    let mut m = Map::new();
    m.insert("text".into(), Value::String(a.text.clone()));
    m.insert("answer_start".into(), Value::from(a.answer_start));
    m.extend(a.extra.clone());
    Value::Object(m)
}

fn qa_value(q: &QAPair) -> Value {
    let mut m = Map::new();
    m.insert("question".into(), Value::String(q.question.clone()));
    m.insert("id".into(), Value::String(q.id.clone()));
    m.insert(
        "answers".into(),
        Value::Array(q.answers.iter().map(answer_value).collect()),
    );
    m.insert("is_impossible".into(), Value::Bool(q.is_impossible));
    if let Some(a) = &q.indonesian_answer {
        m.insert("indonesian_answer".into(), Value::String(a.clone()));
    }
    if let Some(s) = q.indonesian_answer_start {
        m.insert("indonesian_answer_start".into(), Value::from(s));
    }
    m.extend(q.extra.clone());
    Value::Object(m)
}

pub fn squad_to_value(file: &SquadFile) -> Value {
    let data = file
        .data
        .iter()
        .map(|a| {
            let mut m = Map::new();
            m.insert("title".into(), Value::String(a.title.clone()));
            let paragraphs = a
                .paragraphs
                .iter()
                .map(|p| {
                    let mut pm = Map::new();
                    pm.insert("context".into(), Value::String(p.context.clone()));
                    pm.insert("qas".into(), Value::Array(p.qas.iter().map(qa_value).collect()));
                    pm.extend(p.extra.clone());
                    Value::Object(pm)
                })
                .collect();
            m.insert("paragraphs".into(), Value::Array(paragraphs));
            m.extend(a.extra.clone());
            Value::Object(m)
        })
        .collect();
    let mut top = Map::new();
    top.extend(file.extra.clone());
    top.insert("data".into(), Value::Array(data));
    Value::Object(top)
}

pub fn save_squad(file: &SquadFile, path: &Path) -> Result<()> {
    let text = serde_json::to_string_pretty(&squad_to_value(file)).expect("serialisable");
    fs::write(path, text + "\n").map_err(|source| CorpusError::Io {
        path: path.display().to_string(),
        source,
    })
}

/// Tokenised source sentence, its four aligned feature sequences and the
/// target question.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PreparedExample {
    pub src: Vec<String>,
    pub tgt: Vec<String>,
    pub ans: Vec<u8>,
    pub case: Vec<u8>,
    pub pos: Vec<String>,
    pub ne: Vec<String>,
    pub answer_text: Vec<String>,
}

impl PreparedExample {
    /// Checks the length, binary-value and cap invariants.
    pub fn validate(&self) -> std::result::Result<(), String> {
        let n = self.src.len();
        if n == 0 {
            return Err("empty source".into());
        }
        for (name, len) in [
            ("ans", self.ans.len()),
            ("case", self.case.len()),
            ("pos", self.pos.len()),
            ("ne", self.ne.len()),
        ] {
            if len != n {
                return Err(format!("{name} has length {len}, src has {n}"));
            }
        }
        if self.ans.iter().chain(&self.case).any(|&b| b > 1) {
            return Err("ans/case must be 0 or 1".into());
        }
        if !self.ans.contains(&1) {
            return Err("ans marks no answer token".into());
        }
        if self.tgt.len() > MAX_QUESTION_TOKENS {
            return Err(format!("question has {} tokens (max {MAX_QUESTION_TOKENS})", self.tgt.len()));
        }
        if self.answer_text.len() > MAX_ANSWER_TOKENS {
            return Err(format!(
                "answer has {} tokens (max {MAX_ANSWER_TOKENS})",
                self.answer_text.len()
            ));
        }
        Ok(())
    }
}

/// Writes one JSON object per line. All examples are validated before the
/// file is created, so an invalid set leaves nothing on disk.
pub fn persist_examples(examples: &[PreparedExample], path: &Path) -> Result<usize> {
    for (index, ex) in examples.iter().enumerate() {
        ex.validate()
            .map_err(|message| CorpusError::Invariant { index, message })?;
    }
    let io = |source| CorpusError::Io {
        path: path.display().to_string(),
        source,
    };
    let file = fs::File::create(path).map_err(io)?;
    let mut w = BufWriter::new(file);
    for ex in examples {
        serde_json::to_writer(&mut w, ex).expect("serialisable");
        w.write_all(b"\n").map_err(io)?;
    }
    w.flush().map_err(io)?;
    Ok(examples.len())
}

pub fn load_examples(path: &Path) -> Result<Vec<PreparedExample>> {
    let text = read_utf8(path)?;
    let p = path.display().to_string();
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            let ex: PreparedExample =
                serde_json::from_str(l).map_err(|e| CorpusError::ExampleLine {
                    path: p.clone(),
                    line: i + 1,
                    message: e.to_string(),
                })?;
            ex.validate().map_err(|message| CorpusError::ExampleLine {
                path: p.clone(),
                line: i + 1,
                message,
            })?;
            Ok(ex)
        })
        .collect()
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusReport {
    pub count: usize,
    pub max_question_len: usize,
    pub max_answer_len: usize,
    pub max_source_len: usize,
    pub source_tokens: usize,
    pub question_tokens: usize,
}

pub fn corpus_stats(examples: &[PreparedExample]) -> CorpusReport {
    examples.iter().fold(CorpusReport::default(), |r, ex| CorpusReport {
        count: r.count + 1,
        max_question_len: r.max_question_len.max(ex.tgt.len()),
        max_answer_len: r.max_answer_len.max(ex.answer_text.len()),
        max_source_len: r.max_source_len.max(ex.src.len()),
        source_tokens: r.source_tokens + ex.src.len(),
        question_tokens: r.question_tokens + ex.tgt.len(),
    })
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;

    pub(crate) const TABLE_I: &str = r#"{"version": "v2.0", "data": [{"title": "Beyoncé", "paragraphs": [{"context": "Beyoncé Giselle Knowles-Carter (/ bi: ˈjɒnsei / bee-YON-say) (lahir 4 September 1981) adalah penyanyi, penulis lagu, produser dan aktris rekaman Amerika. Dilahirkan dan dibesarkan di Houston, Texas, ia tampil di berbagai kompetisi menyanyi dan menari sebagai ... Hiatus mereka melihat rilis album debut Beyoncé, Dangerously in Love (2003), yang ...", "qas": [{"question": "Di kota dan negara bagian mana Beyoncé tumbuh?", "id": "56bf6b0f3aeaa14008c9601", "answers": [{"text": "Houston, Texas", "answer_start": 166}], "is_impossible": false}, {"question": "Apa nama album solo pertama Beyoncé?", "id": "56d43ce42ccc5a1400d830b5", "answers": [{"text": "Berbahaya dalam Cinta", "answer_start": 505}], "is_impossible": false}]}]}]}"#;

    fn example(n: usize) -> PreparedExample {
        PreparedExample {
            src: (0..n).map(|i| format!("w{i}")).collect(),
            tgt: vec!["apa".into(), "?".into()],
            ans: (0..n).map(|i| (i == 0) as u8).collect(),
            case: vec![0; n],
            pos: vec!["X".into(); n],
            ne: vec!["O".into(); n],
            answer_text: vec!["w0".into()],
        }
    }

    #[test]
    fn parses_table_i_record() {
        let f = parse_squad(TABLE_I, "mem").unwrap();
        assert_eq!(f.data.len(), 1);
        assert_eq!(f.data[0].paragraphs.len(), 1);
        let qas = &f.data[0].paragraphs[0].qas;
        assert_eq!(qas.len(), 2);
        assert_eq!(qas[0].answers[0].text, "Houston, Texas");
        assert_eq!(qas[0].answers[0].answer_start, 166);
        assert_eq!(f.extra.get("version"), Some(&Value::String("v2.0".into())));
    }

    #[test]
    fn empty_data() {
        assert!(parse_squad(r#"{"data": []}"#, "mem").unwrap().data.is_empty());
    }

    #[test]
    fn missing_question_names_id() {
        let text = r#"{"data":[{"title":"t","paragraphs":[{"context":"c","qas":[{"id":"q-17","answers":[]}]}]}]}"#;
        let err = parse_squad(text, "mem").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("question") && msg.contains("q-17"), "{msg}");
    }

    #[test]
    fn parse_error_has_offset() {
        let err = parse_squad("{\"data\": [1,,]}", "mem").unwrap_err();
        match err {
            CorpusError::Parse { offset, .. } => assert_eq!(offset, 12),
            other => panic!("{other}"),
        }
    }

    #[test]
    fn unknown_keys_survive_round_trip() {
        let text = r#"{"data":[{"title":"t","x-note":1,"paragraphs":[{"context":"abc","qas":[{"id":"a","question":"q","answers":[{"text":"b","answer_start":1,"k":true}],"is_impossible":false,"indonesian_answer":"b","indonesian_answer_start":1,"extra":[1,2]}]}]}]}"#;
        let f = parse_squad(text, "mem").unwrap();
        let again = parse_squad(&squad_to_value(&f).to_string(), "mem").unwrap();
        assert_eq!(f, again);
        let qa = &again.data[0].paragraphs[0].qas[0];
        assert_eq!(qa.extra.get("extra"), Some(&serde_json::json!([1, 2])));
        assert_eq!(qa.indonesian_answer_start, Some(1));
    }

    #[test]
    fn bom_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("bom.json");
        fs::write(&p, b"\xEF\xBB\xBF{\"data\": []}").unwrap();
        assert!(matches!(load_squad(&p), Err(CorpusError::Bom { .. })));
    }

    #[test]
    fn persist_round_trip_and_invariants() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("ex.jsonl");
        let xs = vec![example(3), example(1), example(5)];
        assert_eq!(persist_examples(&xs, &p).unwrap(), 3);
        assert_eq!(fs::read_to_string(&p).unwrap().lines().count(), 3);
        assert_eq!(load_examples(&p).unwrap(), xs);

        let mut bad = example(3);
        bad.ans.pop();
        let q = dir.path().join("bad.jsonl");
        assert!(matches!(
            persist_examples(&[example(2), bad], &q),
            Err(CorpusError::Invariant { index: 1, .. })
        ));
        assert!(!q.exists());

        let e = dir.path().join("empty.jsonl");
        assert_eq!(persist_examples(&[], &e).unwrap(), 0);
        assert_eq!(fs::read_to_string(&e).unwrap(), "");
    }

    #[test]
    fn jsonl_key_names() {
        let line = serde_json::to_string(&example(1)).unwrap();
        for k in ["src", "tgt", "ans", "case", "pos", "ne", "answer_text"] {
            assert!(line.contains(&format!("\"{k}\"")));
        }
    }

    #[test]
    fn stats() {
        assert_eq!(corpus_stats(&[]), CorpusReport::default());
        let mut a = example(4);
        a.tgt = vec!["x".into(); 7];
        let r = corpus_stats(&[example(2), a]);
        assert_eq!((r.count, r.max_question_len, r.max_answer_len, r.max_source_len), (2, 7, 1, 4));
    }
}
