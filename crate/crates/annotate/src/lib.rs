//! Concept annotation through an OpenAI-compatible chat endpoint.
//!
//! Texts are sent with a fixed few-shot prompt and the reply's topic list
//! becomes the text's micro concepts. Clusters of micro concepts are named
//! with a second prompt. Every request is plain data ([`ChatRequest`]) so a
//! [`cassette`] can record responses once and replay them offline.

pub mod annotate;
pub mod cassette;
pub mod client;
pub mod error;
pub mod parse;
pub mod prompt;

pub use annotate::{
    annotate_micro_concepts, dataset_texts, label_macro_concept, load_annotations, save_annotations, AnnotationRecord,
    EndpointLabeler,
};
pub use cassette::{Recorder, Replay};
pub use client::{ChatBackend, ChatRequest, EndpointConfig, HttpBackend};
pub use error::{AnnotateError, Result};
pub use prompt::Message;
