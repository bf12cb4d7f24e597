//! Corpus-level LLM detection: one request per non-empty message, bounded
//! concurrency, order-preserving assembly.

use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::gateway::{complete_with_retry, ChatClient, GatewayError, RateLimiter, RetryPolicy};
use super::parse::parse_detections;
use super::prompts::{build_prompt, PromptVariant, DEFAULT_CONTEXT_RADIUS};
use super::LlmError;
use crate::corpus::{char_slice, Corpus, Transcript};
use crate::detection::{Detection, DetectionResult, MessageDetections, ParseStatus};
use crate::segmentation::{SegmentLabel, SegmentLabeling};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LlmRunConfig {
    pub variant: PromptVariant,
    pub model_id: String,
    pub context_radius: usize,
    pub concurrency_limit: usize,
    pub retry: RetryPolicy,
    /// Requests per second across all workers; unlimited when `None`.
    pub rate_limit: Option<f64>,
}

impl LlmRunConfig {
    pub fn new(variant: PromptVariant, model_id: impl Into<String>) -> Self {
        Self {
            variant,
            model_id: model_id.into(),
            context_radius: DEFAULT_CONTEXT_RADIUS,
            concurrency_limit: 8,
            retry: RetryPolicy::default(),
            rate_limit: None,
        }
    }

    pub fn engine_id(&self) -> String {
        format!("llm:{}:{}", self.variant.code().to_ascii_lowercase(), self.model_id)
    }
}

/// Char range of the first exact occurrence of `needle` in `text`.
pub fn ground(text: &str, needle: &str) -> Option<(usize, usize)> {
    if needle.is_empty() {
        return None;
    }
    let byte = text.find(needle)?;
    let start = text[..byte].chars().count();
    let end = start + needle.chars().count();
    debug_assert_eq!(char_slice(text, start, end), Some(needle));
    Some((start, end))
}

/// Runs a batch of independent jobs on a pool of at most `limit` threads,
/// stopping new jobs after the first fatal gateway error.
pub(crate) fn run_bounded<J, T>(
    jobs: &[J],
    limit: usize,
    work: impl Fn(&J) -> Result<T, GatewayError> + Sync,
) -> Result<Vec<T>, LlmError>
where
    J: Sync,
    T: Send,
{
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(limit.max(1))
        .build()
        .map_err(|e| LlmError::Config(format!("worker pool: {e}")))?;
    let abort = AtomicBool::new(false);
    let completed = AtomicUsize::new(0);
    let outcomes: Vec<Option<Result<T, GatewayError>>> = pool.install(|| {
        jobs.par_iter()
            .map(|job| {
                if abort.load(Ordering::SeqCst) {
                    return None;
                }
                let out = work(job);
                match &out {
                    Err(e) if e.is_fatal() => abort.store(true, Ordering::SeqCst),
                    Ok(_) => {
                        completed.fetch_add(1, Ordering::SeqCst);
                    }
                    Err(_) => {}
                }
                Some(out)
            })
            .collect()
    });
    let mut results = Vec::with_capacity(outcomes.len());
    let mut fatal = None;
    for outcome in outcomes {
        match outcome {
            Some(Ok(v)) => results.push(v),
            Some(Err(e)) => {
                fatal.get_or_insert(e);
            }
            None => {}
        }
    }
    match fatal {
        Some(source) => Err(LlmError::Aborted {
            completed: completed.load(Ordering::SeqCst),
            total: jobs.len(),
            source,
        }),
        None => Ok(results),
    }
}

struct Job<'a> {
    transcript: &'a Transcript,
    message_index: usize,
    math_label: Option<SegmentLabel>,
}

fn detect_message(
    job: &Job<'_>,
    config: &LlmRunConfig,
    client: &dyn ChatClient,
    limiter: Option<&RateLimiter>,
) -> Result<MessageDetections, GatewayError> {
    let message = &job.transcript.messages[job.message_index];
    let mut out = MessageDetections::new(message.index, Vec::new());
    if message.text.trim().is_empty() {
        out.status = Some(ParseStatus::Empty);
        return Ok(out);
    }
    let request = build_prompt(
        config.variant,
        job.transcript,
        job.message_index,
        config.context_radius,
        job.math_label,
        &config.model_id,
        config.retry.max_attempts,
    )
    .map_err(|e| GatewayError::Config(e.to_string()))?;
    let attempted = complete_with_retry(client, &request, &config.retry, limiter);
    out.attempts = attempted.attempts;
    match attempted.result {
        Ok(response) => {
            let parsed = parse_detections(&response.raw_text);
            out.status = Some(parsed.status);
            if parsed.dropped > 0 {
                out.warnings
                    .push(format!("{} unusable detection(s) dropped", parsed.dropped));
            }
            for (text, pii_type) in parsed.detections {
                out.detections.push(match ground(&message.text, &text) {
                    Some((start, end)) => Detection::grounded(text, pii_type, start, end),
                    None => Detection::ungrounded(text, pii_type),
                });
            }
        }
        Err(e) if e.is_fatal() => return Err(e),
        Err(e) => {
            out.status = Some(ParseStatus::Malformed);
            out.warnings
                .push(format!("no response after {} attempt(s): {e}", attempted.attempts));
        }
    }
    Ok(out)
}

/// Detects PII in every message of the corpus. SEGMENT_AWARE needs a
/// labeling covering every message. Authentication or configuration
/// failures abort the run and report how many messages completed.
pub fn detect_llm_corpus(
    corpus: &Corpus,
    config: &LlmRunConfig,
    labeling: Option<&SegmentLabeling>,
    client: &dyn ChatClient,
) -> Result<Vec<DetectionResult>, LlmError> {
    if config.variant.needs_labeling() {
        let labeling = labeling
            .ok_or_else(|| LlmError::Config("SEGMENT_AWARE detection requires a segment labeling".to_string()))?;
        if let Some(t) = corpus.iter().find(|t| {
            labeling
                .labels_for(&t.session_id)
                .is_none_or(|l| l.len() != t.messages.len())
        }) {
            return Err(LlmError::Config(format!(
                "segment labeling does not cover session `{}`",
                t.session_id
            )));
        }
    }
    let jobs: Vec<Job<'_>> = corpus
        .iter()
        .flat_map(|t| {
            (0..t.messages.len()).map(move |i| Job {
                transcript: t,
                message_index: i,
                math_label: if config.variant.needs_labeling() {
                    labeling.and_then(|l| l.label(&t.session_id, i))
                } else {
                    None
                },
            })
        })
        .collect();
    let limiter = config.rate_limit.map(RateLimiter::per_second);
    let mut per_message = run_bounded(&jobs, config.concurrency_limit, |job| {
        detect_message(job, config, client, limiter.as_ref())
    })?
    .into_iter();
    let engine = config.engine_id();
    Ok(corpus
        .iter()
        .map(|t| DetectionResult {
            engine: engine.clone(),
            session_id: t.session_id.clone(),
            messages: per_message.by_ref().take(t.messages.len()).collect(),
        })
        .collect())
}
