//! Parsers for the two completion formats.

const TOPICS_MARKER: &str = "Topics:";
const LABEL_MARKER: &str = "Summarization:";

/// Items of the bracketed list after `Topics:`. Items may be quoted with
/// either quote character (backslash escapes honored) or bare. Returns an
/// empty list when the marker or the opening bracket is missing.
pub fn parse_topics(completion: &str) -> Vec<String> {
    let Some(start) = completion.find(TOPICS_MARKER) else {
        return Vec::new();
    };
    let rest = completion[start + TOPICS_MARKER.len()..].trim_start();
    let Some(body) = rest.strip_prefix('[') else {
        return Vec::new();
    };
    let mut items = Vec::new();
    let mut chars = body.chars().peekable();
    let mut bare = String::new();
    while let Some(c) = chars.next() {
        match c {
            '\'' | '"' => {
                let mut item = String::new();
                while let Some(d) = chars.next() {
                    match d {
                        '\\' => {
                            if let Some(e) = chars.next() {
                                item.push(e);
                            }
                        }
                        d if d == c => break,
                        d => item.push(d),
                    }
                }
                items.push(item);
                bare.clear();
            }
            ',' | ']' => {
                let t = bare.trim();
                if !t.is_empty() {
                    items.push(t.to_string());
                }
                bare.clear();
                if c == ']' {
                    break;
                }
            }
            c => bare.push(c),
        }
    }
    items
}

fn quote(topic: &str) -> String {
    if topic.contains('\'') && !topic.contains('"') {
        return format!("\"{topic}\"");
    }
    let mut out = String::from("'");
    for c in topic.chars() {
        if c == '\'' || c == '\\' {
            out.push('\\');
        }
        out.push(c);
    }
    out.push('\'');
    out
}

/// Inverse of [`parse_topics`] in the examples' `Topics: ['a', 'b']` form.
pub fn serialize_topics(topics: &[String]) -> String {
    let items: Vec<String> = topics.iter().map(|t| quote(t)).collect();
    format!("{TOPICS_MARKER} [{}]", items.join(", "))
}

/// The quoted label after `Summarization:`, up to the last matching quote on
/// that line. `None` when the marker or quotes are missing.
pub fn parse_label(completion: &str) -> Option<String> {
    let start = completion.find(LABEL_MARKER)?;
    let rest = completion[start + LABEL_MARKER.len()..].trim_start();
    let line = rest.lines().next().unwrap_or("");
    let q = line.chars().next().filter(|c| *c == '\'' || *c == '"')?;
    let inner = &line[1..];
    let end = inner.rfind(q)?;
    let label = inner[..end].trim();
    (!label.is_empty()).then(|| label.to_string())
}
