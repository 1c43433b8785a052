/// Binary answer-membership and capitalisation indicators for a sentence.
///
/// `answer` is an inclusive token range. `case[i]` is 1 when token `i`
/// contains an uppercase letter and must be computed on the cased text.
pub fn make_binary_features<S: AsRef<str>>(tokens: &[S], answer: (usize, usize)) -> (Vec<u8>, Vec<u8>) {
    let (first, last) = answer;
    let ans = (0..tokens.len())
        .map(|i| u8::from(i >= first && i <= last))
        .collect();
    let case = tokens
        .iter()
        .map(|t| u8::from(t.as_ref().chars().any(char::is_uppercase)))
        .collect();
    (ans, case)
}
