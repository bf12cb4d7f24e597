//! De-identification of math tutoring transcripts: corpus model, baseline
//! recognizers, math segmentation, LLM detection, surrogation, and
//! evaluation.

pub mod corpus;
pub mod detection;
pub mod evaluation;
pub mod llm;
pub mod optimizer;
pub mod recognizers;
pub mod segmentation;
pub mod surrogation;
