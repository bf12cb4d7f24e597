//! Prompt-driven PII detection through a chat-completion gateway.

pub mod detect;
pub mod gateway;
pub mod parse;
pub mod prompts;

use thiserror::Error;

pub use detect::{detect_llm_corpus, ground, LlmRunConfig};
pub use gateway::{
    complete_with_retry, ChatClient, GatewayError, GatewayResponse, HttpChatClient, LogEntry, RateLimiter,
    RecordingClient, ReplayClient, RetryPolicy, ScriptedClient,
};
pub use parse::{parse_audit_table, parse_detections, AuditRow, ParsedAudit, ParsedDetections};
pub use prompts::{build_prompt, GatewayRequest, PromptVariant};

#[derive(Debug, Error)]
pub enum LlmError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("run aborted after {completed} of {total} requests: {source}")]
    Aborted {
        completed: usize,
        total: usize,
        #[source]
        source: GatewayError,
    },
}
