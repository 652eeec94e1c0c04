//! Extraction of JSON envelopes from free-form judge replies.
//!
//! Models often wrap the requested object in prose ("Answer: {...} because").
//! Every parser here scans for the first embedded JSON value of the right shape.

use serde_json::Value;

use super::Verdict;

/// Yields every JSON value that starts at one of the `open` bytes in `text`.
fn embedded_values(text: &str, open: u8) -> impl Iterator<Item = Value> + '_ {
    text.bytes()
        .enumerate()
        .filter(move |(_, b)| *b == open)
        .filter_map(move |(i, _)| {
            serde_json::Deserializer::from_str(&text[i..])
                .into_iter::<Value>()
                .next()
                .and_then(Result::ok)
        })
}

/// Finds `{"answer": "yes" | "no"}` (case-insensitive value) in `text`.
pub fn parse_yes_no(text: &str) -> Option<Verdict> {
    embedded_values(text, b'{').find_map(|v| {
        let answer = v.get("answer")?.as_str()?.trim().to_ascii_lowercase();
        match answer.as_str() {
            "yes" => Some(Verdict::Yes),
            "no" => Some(Verdict::No),
            _ => None,
        }
    })
}

/// Finds `{"count": n}` with `n` a non-negative integer.
pub fn parse_count(text: &str) -> Option<u64> {
    embedded_values(text, b'{').find_map(|v| v.get("count")?.as_u64())
}

/// Finds a JSON array of strings, bare or as `{"questions": [...]}`.
pub fn parse_string_list(text: &str) -> Option<Vec<String>> {
    let as_list = |v: &Value| -> Option<Vec<String>> {
        v.as_array()?
            .iter()
            .map(|x| x.as_str().map(str::to_string))
            .collect()
    };
    // Objects first: a bare-array scan would also match the inner list.
    if let Some(list) = embedded_values(text, b'{').find_map(|v| as_list(v.get("questions")?)) {
        return Some(list);
    }
    embedded_values(text, b'[').find_map(|v| as_list(&v))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn yes_no_fixtures() {
        assert_eq!(parse_yes_no(r#"{"answer":"yes"}"#), Some(Verdict::Yes));
        assert_eq!(
            parse_yes_no(r#"Answer: {"answer": "no"} because the tail is missing."#),
            Some(Verdict::No)
        );
        assert_eq!(parse_yes_no(r#"```json
{ "answer" : "YES " }
```"#), Some(Verdict::Yes));
        assert_eq!(parse_yes_no("maybe"), None);
        assert_eq!(parse_yes_no("Yes."), None);
        assert_eq!(parse_yes_no(r#"{"answer":"maybe"}"#), None);
        assert_eq!(parse_yes_no(r#"{"verdict":"yes"}"#), None);
        assert_eq!(
            parse_yes_no(r#"{"note": {"x": 1}} then {"answer":"no"}"#),
            Some(Verdict::No)
        );
    }

    #[test]
    fn count_fixtures() {
        assert_eq!(parse_count(r#"{"count": 3}"#), Some(3));
        assert_eq!(parse_count(r#"I saw {"count":0} new actions"#), Some(0));
        assert_eq!(parse_count(r#"{"count": -1}"#), None);
        assert_eq!(parse_count(r#"{"count": 1.5}"#), None);
        assert_eq!(parse_count("three"), None);
    }

    #[test]
    fn list_fixtures() {
        assert_eq!(
            parse_string_list(r#"["Does the character crouch before jumping?"]"#),
            Some(vec!["Does the character crouch before jumping?".to_string()])
        );
        assert_eq!(parse_string_list("[]"), Some(vec![]));
        assert_eq!(
            parse_string_list(r#"Here: {"questions": ["a", "b"]}"#),
            Some(vec!["a".to_string(), "b".to_string()])
        );
        assert_eq!(parse_string_list("no list here"), None);
        assert_eq!(parse_string_list("[1, 2]"), None);
    }
}
