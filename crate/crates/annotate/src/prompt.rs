//! In-context-learning templates for topic extraction and cluster naming.
//!
//! Both templates are fixed conversations: one instruction turn carrying a
//! first worked example, the model's answer, further worked examples, and
//! finally the query. Only the last user turn varies between requests.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Message {
    pub role: String,
    pub content: String,
}

impl Message {
    pub fn user(content: impl Into<String>) -> Self {
        Self {
            role: "user".into(),
            content: content.into(),
        }
    }

    pub fn assistant(content: impl Into<String>) -> Self {
        Self {
            role: "assistant".into(),
            content: content.into(),
        }
    }
}

pub const MICRO_INSTRUCTION: &str = "You are presented with several parts of speech.
        Identify only the main topics in this text. Respond with topic in list format like the examples in a very concise way using as few words as possible. Example: 'As cities expand and populations grow, there is a growing tension between development and the need to preserve historical landmarks. Citizens and authorities often clash over the balance between progress and cultural heritage.'";

pub const MICRO_EXAMPLES: [(&str, &str); 2] = [
    (MICRO_INSTRUCTION, "Topics: ['urban development', 'cultural heritage', 'conflict']"),
    (
        "'Recent breakthroughs in neuroscience are shedding light on the complexities of human cognition. Researchers are particularly excited about the potential to better understand decision-making processes and emotional regulation in the brain.'",
        "Topics: ['neuroscience', 'human cognition', 'decision-making', 'emotional regulation']",
    ),
];

pub const MACRO_INSTRUCTION: &str = "You are presented with several parts of speech.
        Summarise what these parts of speech have in common in a very concise way using as few words as possible. Example: [\"piano\", \"guitar\", \"saxophone\", \"violin\", \"cheyenne\", \"drum\"]";

pub const MACRO_EXAMPLES: [(&str, &str); 3] = [
    (MACRO_INSTRUCTION, "Summarization: 'musical instrument'"),
    (
        "[\"football\", \"basketball\", \"baseball\", \"tennis\", \"badmington\", \"soccer\"]",
        "Summarization: 'sport'",
    ),
    (
        "[\"lion\", \"tiger\", \"cat\", \"pumas\", \"panther\", \"leopard\"]",
        "Summarization: 'feline-type animal'",
    ),
];

fn conversation(examples: &[(&str, &str)], query: String) -> Vec<Message> {
    let mut messages: Vec<Message> = examples
        .iter()
        .flat_map(|(u, a)| [Message::user(*u), Message::assistant(*a)])
        .collect();
    messages.push(Message::user(query));
    messages
}

/// Messages asking for the topics of `text`, quoted like the examples.
pub fn micro_prompt(text: &str) -> Vec<Message> {
    conversation(&MICRO_EXAMPLES, format!("'{text}'"))
}

/// Double-quoted, comma-separated list in the examples' style.
pub fn format_samples(samples: &[String]) -> String {
    let quoted: Vec<String> = samples
        .iter()
        .map(|s| serde_json::to_string(s).expect("string serialization"))
        .collect();
    format!("[{}]", quoted.join(", "))
}

/// Messages asking for a short name shared by `samples`.
pub fn macro_prompt(samples: &[String]) -> Vec<Message> {
    conversation(&MACRO_EXAMPLES, format_samples(samples))
}
