//! Detection prompt templates and request construction.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::LlmError;
use crate::corpus::Transcript;
use crate::segmentation::SegmentLabel;

pub const BASIC_TEMPLATE: &str = include_str!("../../data/prompts/basic.txt");
pub const MATH_AWARE_TEMPLATE: &str = include_str!("../../data/prompts/math_aware.txt");
pub const SEGMENT_AWARE_TEMPLATE: &str = include_str!("../../data/prompts/segment_aware.txt");
pub const AUDIT_TEMPLATE: &str = include_str!("../../data/prompts/audit.txt");

pub const DEFAULT_CONTEXT_RADIUS: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum PromptVariant {
    Basic,
    MathAware,
    SegmentAware,
}

impl PromptVariant {
    pub const ALL: [PromptVariant; 3] = [
        PromptVariant::Basic,
        PromptVariant::MathAware,
        PromptVariant::SegmentAware,
    ];

    pub fn template(self) -> &'static str {
        match self {
            PromptVariant::Basic => BASIC_TEMPLATE,
            PromptVariant::MathAware => MATH_AWARE_TEMPLATE,
            PromptVariant::SegmentAware => SEGMENT_AWARE_TEMPLATE,
        }
    }

    pub fn code(self) -> &'static str {
        match self {
            PromptVariant::Basic => "BASIC",
            PromptVariant::MathAware => "MATH_AWARE",
            PromptVariant::SegmentAware => "SEGMENT_AWARE",
        }
    }

    pub fn needs_labeling(self) -> bool {
        self == PromptVariant::SegmentAware
    }
}

impl fmt::Display for PromptVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

impl FromStr for PromptVariant {
    type Err = String;

    /// Accepts the codes and the short CLI names `basic`, `math`, `segment`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().replace('-', "_").as_str() {
            "basic" => Ok(PromptVariant::Basic),
            "math" | "math_aware" => Ok(PromptVariant::MathAware),
            "segment" | "segment_aware" => Ok(PromptVariant::SegmentAware),
            other => Err(format!(
                "unknown prompt variant `{other}` (expected basic, math, or segment)"
            )),
        }
    }
}

/// A fully specified chat request; serializable so runs can be replayed.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GatewayRequest {
    pub model_id: String,
    pub system_text: String,
    pub user_text: String,
    pub max_attempts: u32,
}

impl GatewayRequest {
    /// SHA-256 over model, system text, and user text. Attempt limits do
    /// not change the hash.
    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        for part in [&self.model_id, &self.system_text, &self.user_text] {
            h.update((part.len() as u64).to_le_bytes());
            h.update(part.as_bytes());
        }
        hex::encode(h.finalize())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContextMessage {
    pub index: usize,
    pub role: String,
    pub text: String,
}

/// User payload sent with each detection request.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DetectionPayload {
    pub context_before: Vec<ContextMessage>,
    pub message: ContextMessage,
    pub context_after: Vec<ContextMessage>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub math_label: Option<SegmentLabel>,
}

/// Messages `index - radius .. index` and `index + 1 ..= index + radius`,
/// clipped to the transcript.
pub fn context_window(
    transcript: &Transcript,
    index: usize,
    radius: usize,
) -> (Vec<ContextMessage>, ContextMessage, Vec<ContextMessage>) {
    let ctx = |i: usize| {
        let m = &transcript.messages[i];
        ContextMessage {
            index: m.index,
            role: m.role.clone(),
            text: m.text.clone(),
        }
    };
    let n = transcript.messages.len();
    let before = (index.saturating_sub(radius)..index).map(ctx).collect();
    let after = (index + 1..n.min(index + radius + 1)).map(ctx).collect();
    (before, ctx(index), after)
}

pub fn build_prompt(
    variant: PromptVariant,
    transcript: &Transcript,
    message_index: usize,
    context_radius: usize,
    math_label: Option<SegmentLabel>,
    model_id: &str,
    max_attempts: u32,
) -> Result<GatewayRequest, LlmError> {
    if message_index >= transcript.messages.len() {
        return Err(LlmError::Config(format!(
            "session `{}` has no message {message_index}",
            transcript.session_id
        )));
    }
    let math_label = match (variant, math_label) {
        (PromptVariant::SegmentAware, None) => {
            return Err(LlmError::Config(format!(
                "SEGMENT_AWARE prompt needs a math label for session `{}` message {message_index}",
                transcript.session_id
            )))
        }
        (PromptVariant::SegmentAware, label) => label,
        _ => None,
    };
    let (context_before, message, context_after) = context_window(transcript, message_index, context_radius);
    let payload = DetectionPayload {
        context_before,
        message,
        context_after,
        math_label,
    };
    Ok(GatewayRequest {
        model_id: model_id.to_string(),
        system_text: variant.template().to_string(),
        user_text: serde_json::to_string_pretty(&payload).expect("payload serializes"),
        max_attempts,
    })
}
