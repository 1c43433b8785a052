use unicode_normalization::char::{decompose_compatible, is_combining_mark};

/// Folds text to ASCII: compatibility decomposition, combining marks
/// stripped, any remaining non-ASCII character dropped.
pub fn normalize_ascii(text: &str) -> String {
    normalize_with_offsets(text).0
}

/// Like [`normalize_ascii`], also returning for every input character index
/// `i` (plus one past the end) the output character index where the
/// contribution of character `i` begins.
pub fn normalize_with_offsets(text: &str) -> (String, Vec<usize>) {
    let mut out = String::with_capacity(text.len());
    let mut offsets = Vec::with_capacity(text.len() + 1);
    let mut written = 0usize;
    for c in text.chars() {
        offsets.push(written);
        if c.is_ascii() {
            out.push(c);
            written += 1;
            continue;
        }
        decompose_compatible(c, |d| {
            if d.is_ascii() && !is_combining_mark(d) {
                out.push(d);
                written += 1;
            }
        });
    }
    offsets.push(written);
    (out, offsets)
}
