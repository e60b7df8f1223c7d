use std::future::Future;
use std::sync::Arc;
use std::time::Duration;

use serde_json::Value;
use thiserror::Error;
use tokio::sync::Semaphore;

use super::latency::{CallOutcome, CallTag, LatencyLog};
use super::prompts::{render_prompt, slot_map, PromptError, TemplateId};
use super::provider::{Capability, Frame, PromptRequest, ProviderError, SegmentRequest, VisionProvider};
use super::reply::{number_array, parse_reply_value, single_object};
use super::{crop_rect, BoundingBoxResult, RotationResult, SegmentationMask, TranslationResult};
use crate::geometry::{BoundingBox2D, BoxUnits, GeometryError, Point2};
use crate::plan::{plan_from_value, PlanError, SchemaViolation, TaskPlan};

/// Appended to the plan prompt so the reply also names the device brand.
pub const BRAND_HINT: &str = "If the brand of the device is visible in the image, also include a top-level field \"device_brand\" holding the brand name.";

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RetryPolicy {
    /// Extra attempts after a plan reply fails to parse or validate.
    pub plan_retries: u32,
    /// Extra attempts for every other call.
    pub other_retries: u32,
    /// Delay before retry `n` is `backoff_base * 2^(n-1)`.
    pub backoff_base: Duration,
    /// Append the rejection reason to the prompt of the next attempt.
    pub corrective_feedback: bool,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            plan_retries: 2,
            other_retries: 1,
            backoff_base: Duration::from_millis(500),
            corrective_feedback: true,
        }
    }
}

impl RetryPolicy {
    /// No retries and no feedback, so every call is measured as sent.
    pub fn one_shot() -> Self {
        RetryPolicy { plan_retries: 0, other_retries: 0, backoff_base: Duration::ZERO, corrective_feedback: false }
    }

    /// Default retries without waiting between them.
    pub fn without_backoff() -> Self {
        RetryPolicy { backoff_base: Duration::ZERO, ..Self::default() }
    }

    pub fn backoff(&self, retry: u32) -> Duration {
        self.backoff_base * 2u32.saturating_pow(retry.saturating_sub(1))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GatewayConfig {
    pub timeout: Duration,
    pub max_in_flight: usize,
    pub retry: RetryPolicy,
}

impl Default for GatewayConfig {
    fn default() -> Self {
        GatewayConfig { timeout: Duration::from_secs(30), max_in_flight: 4, retry: RetryPolicy::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GatewayError {
    #[error("provider lacks the {0} capability")]
    Unsupported(Capability),
    #[error("{kind} request timed out after {after:?}")]
    Timeout { kind: Capability, after: Duration },
    #[error("provider refused: {0}")]
    Refusal(String),
    #[error("provider transport: {0}")]
    Transport(String),
    #[error("could not parse {kind} reply: {reason}")]
    Parse { kind: Capability, reason: String },
    #[error("plan document is malformed: {0}")]
    MalformedPlan(String),
    #[error("plan violates the schema: {}", describe_violations(.0))]
    Schema(Vec<SchemaViolation>),
    #[error("provider returned a zero-area box")]
    ZeroAreaBox,
    #[error("segmentation mask is empty")]
    EmptyMask,
    #[error("segmentation mask is {got:?}, expected the crop size {expected:?}")]
    MaskSize { expected: (u32, u32), got: (u32, u32) },
    #[error(transparent)]
    Prompt(#[from] PromptError),
}

fn describe_violations(v: &[SchemaViolation]) -> String {
    v.iter().map(|v| v.to_string()).collect::<Vec<_>>().join("; ")
}

impl GatewayError {
    fn is_retryable(&self) -> bool {
        matches!(
            self,
            GatewayError::Parse { .. } | GatewayError::MalformedPlan(_) | GatewayError::Schema(_) | GatewayError::Transport(_)
        )
    }
}

impl From<ProviderError> for GatewayError {
    fn from(e: ProviderError) -> Self {
        match e {
            ProviderError::Unsupported(c) => GatewayError::Unsupported(c),
            ProviderError::Refusal(r) => GatewayError::Refusal(r),
            other => GatewayError::Transport(other.to_string()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlanResponse {
    pub plan: TaskPlan,
    /// Number of retries it took to get a valid plan.
    pub retries: u32,
}

/// Prompting, parsing, retry and accounting layer over a provider.
///
/// Cloning is cheap and clones share the in-flight limit and latency log.
#[derive(Clone)]
pub struct VisionGateway {
    provider: Arc<dyn VisionProvider>,
    config: GatewayConfig,
    permits: Arc<Semaphore>,
    latency: LatencyLog,
}

impl std::fmt::Debug for VisionGateway {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("VisionGateway").field("provider", &self.provider.name()).field("config", &self.config).finish()
    }
}

type Attempt<T> = Result<(T, Option<Duration>), GatewayError>;

impl VisionGateway {
    pub fn new(provider: Arc<dyn VisionProvider>, config: GatewayConfig) -> Self {
        let permits = Arc::new(Semaphore::new(config.max_in_flight.max(1)));
        VisionGateway { provider, config, permits, latency: LatencyLog::new() }
    }

    /// Shares an existing latency log instead of a fresh one.
    pub fn with_latency_log(mut self, log: LatencyLog) -> Self {
        self.latency = log;
        self
    }

    pub fn latency(&self) -> &LatencyLog {
        &self.latency
    }

    pub fn config(&self) -> &GatewayConfig {
        &self.config
    }

    pub fn provider_name(&self) -> &str {
        self.provider.name()
    }

    fn require(&self, c: Capability) -> Result<(), GatewayError> {
        if self.provider.capabilities().contains(c) {
            Ok(())
        } else {
            Err(GatewayError::Unsupported(c))
        }
    }

    /// Runs one attempt under the in-flight limit and the timeout,
    /// recording its latency. Dropping the future records a cancellation.
    async fn timed<T>(&self, kind: Capability, tag: CallTag, fut: impl Future<Output = Attempt<T>>) -> Result<T, GatewayError> {
        let _permit = self.permits.acquire().await.expect("gateway semaphore is never closed");
        let pending = self.latency.start(kind, tag);
        match tokio::time::timeout(self.config.timeout, fut).await {
            Err(_) => {
                pending.finish(CallOutcome::Timeout, None);
                Err(GatewayError::Timeout { kind, after: self.config.timeout })
            }
            Ok(Err(e)) => {
                pending.finish(CallOutcome::Error, None);
                Err(e)
            }
            Ok(Ok((v, reported))) => {
                pending.finish(CallOutcome::Ok, reported);
                Ok(v)
            }
        }
    }

    /// Repeats `attempt` on retryable errors, passing the attempt number
    /// and, when enabled, the previous rejection reason.
    async fn with_retries<T, F, Fut>(&self, kind: Capability, tag: CallTag, retries: u32, mut attempt: F) -> Result<(T, u32), GatewayError>
    where
        F: FnMut(u32, Option<String>) -> Fut,
        Fut: Future<Output = Attempt<T>>,
    {
        let policy = self.config.retry;
        let mut feedback = None;
        let mut n = 0;
        loop {
            match self.timed(kind, tag, attempt(n, feedback.clone())).await {
                Ok(v) => return Ok((v, n)),
                Err(e) if n < retries && e.is_retryable() => {
                    n += 1;
                    tracing::debug!(%kind, retry = n, error = %e, "retrying provider call");
                    if policy.corrective_feedback {
                        feedback = Some(e.to_string());
                    }
                    let wait = policy.backoff(n);
                    if !wait.is_zero() {
                        tokio::time::sleep(wait).await;
                    }
                }
                Err(e) => return Err(e),
            }
        }
    }

    async fn prompt_once(
        &self,
        capability: Capability,
        prompt: String,
        slots: &std::collections::BTreeMap<String, String>,
        frames: &[Frame],
        attempt: u32,
    ) -> Result<String, GatewayError> {
        let request = PromptRequest { capability, prompt, slots: slots.clone(), frames: frames.to_vec(), attempt };
        Ok(self.provider.complete(&request).await?)
    }

    /// Asks for a structured plan for `query` given the initial frame.
    pub async fn request_task_plan(&self, query: &str, initial: &Frame) -> Result<PlanResponse, GatewayError> {
        self.require(Capability::Plan)?;
        let base = plan_prompt(query)?;
        let slots = slot_map([("query", query)]);
        let frames = std::slice::from_ref(initial);
        let (mut plan, retries) = self
            .with_retries(Capability::Plan, CallTag::default(), self.config.retry.plan_retries, |attempt, feedback| {
                let prompt = with_feedback(&base, feedback.as_deref());
                let slots = &slots;
                async move {
                    let reply = self.prompt_once(Capability::Plan, prompt, slots, frames, attempt).await?;
                    Ok((parse_plan_reply(&reply)?, None))
                }
            })
            .await?;
        plan.source_query = query.to_string();
        Ok(PlanResponse { plan, retries })
    }

    pub async fn request_bounding_box(&self, frame: &Frame, key_component: &str, tag: CallTag) -> Result<BoundingBoxResult, GatewayError> {
        self.require(Capability::Bbox)?;
        let slots = slot_map([("key_component", key_component)]);
        let base = render_prompt(TemplateId::Bbox, &slots)?;
        let frames = std::slice::from_ref(frame);
        let (w, h) = (frame.image.width(), frame.image.height());
        let (result, _) = self
            .with_retries(Capability::Bbox, tag, self.config.retry.other_retries, |attempt, feedback| {
                let prompt = with_feedback(&base, feedback.as_deref());
                let slots = &slots;
                async move {
                    let reply = self.prompt_once(Capability::Bbox, prompt, slots, frames, attempt).await?;
                    let obj = reply_object(Capability::Bbox, &reply)?;
                    let (name, bbox, units) = parse_box(Capability::Bbox, &obj, w, h)?;
                    Ok((BoundingBoxResult { name, bbox, units }, None))
                }
            })
            .await?;
        Ok(result)
    }

    pub async fn request_translation_target(
        &self,
        frame: &Frame,
        key_component: &str,
        instruction: &str,
        tag: CallTag,
    ) -> Result<TranslationResult, GatewayError> {
        self.require(Capability::Translation)?;
        let slots = slot_map([("key_component", key_component), ("instruction", instruction)]);
        let base = render_prompt(TemplateId::Translation, &slots)?;
        let frames = std::slice::from_ref(frame);
        let (w, h) = (frame.image.width(), frame.image.height());
        let (result, _) = self
            .with_retries(Capability::Translation, tag, self.config.retry.other_retries, |attempt, feedback| {
                let prompt = with_feedback(&base, feedback.as_deref());
                let slots = &slots;
                async move {
                    let reply = self.prompt_once(Capability::Translation, prompt, slots, frames, attempt).await?;
                    let obj = reply_object(Capability::Translation, &reply)?;
                    let (name, bbox, units) = parse_box(Capability::Translation, &obj, w, h)?;
                    let (target, target_clamped) = parse_target(&obj, units, w, h)?;
                    Ok((TranslationResult { name, bbox, units, target, target_clamped }, None))
                }
            })
            .await?;
        Ok(result)
    }

    /// The first frame fixes the axes; the second shows the component now.
    pub async fn request_rotation_info(
        &self,
        initial: &Frame,
        current: &Frame,
        key_component: &str,
        instruction: &str,
        tag: CallTag,
    ) -> Result<RotationResult, GatewayError> {
        self.require(Capability::Rotation)?;
        let slots = slot_map([("key_component", key_component), ("instruction", instruction)]);
        let base = render_prompt(TemplateId::Rotation, &slots)?;
        let frames = [initial.clone(), current.clone()];
        let frames = &frames[..];
        let (result, _) = self
            .with_retries(Capability::Rotation, tag, self.config.retry.other_retries, |attempt, feedback| {
                let prompt = with_feedback(&base, feedback.as_deref());
                let slots = &slots;
                async move {
                    let reply = self.prompt_once(Capability::Rotation, prompt, slots, frames, attempt).await?;
                    let obj = reply_object(Capability::Rotation, &reply)?;
                    Ok((parse_rotation(&obj)?, None))
                }
            })
            .await?;
        Ok(result)
    }

    /// Mask over the crop of `bbox`, as given by [`crop_rect`].
    pub async fn request_segmentation(&self, frame: &Frame, bbox: &BoundingBox2D, tag: CallTag) -> Result<SegmentationMask, GatewayError> {
        self.require(Capability::Segmentation)?;
        let (_, _, cw, ch) = crop_rect(bbox);
        let request = SegmentRequest { frame: frame.clone(), bbox: *bbox };
        let request = &request;
        let (mask, _) = self
            .with_retries(Capability::Segmentation, tag, self.config.retry.other_retries, |_, _| async move {
                let reply = self.provider.segment(request).await?;
                let got = (reply.mask.width, reply.mask.height);
                if got != (cw, ch) {
                    return Err(GatewayError::MaskSize { expected: (cw, ch), got });
                }
                if reply.mask.is_empty() {
                    return Err(GatewayError::EmptyMask);
                }
                Ok((reply.mask, reply.reported_latency))
            })
            .await?;
        Ok(mask)
    }
}

/// Full plan prompt: the stored template, the request and the brand hint.
pub fn plan_prompt(query: &str) -> Result<String, PromptError> {
    let template = render_prompt(TemplateId::Plan, &Default::default())?;
    Ok(format!("{}\n\nUser request: {}\n\n{}", template.trim_end(), query.trim(), BRAND_HINT))
}

fn with_feedback(base: &str, feedback: Option<&str>) -> String {
    match feedback {
        None => base.to_string(),
        Some(reason) => format!(
            "{base}\n\nYour previous reply was rejected: {reason}\nReply again with the complete, corrected JSON document."
        ),
    }
}

fn parse_plan_reply(reply: &str) -> Result<TaskPlan, GatewayError> {
    let value = parse_reply_value(reply).map_err(GatewayError::MalformedPlan)?;
    plan_from_value(&value).map_err(|e| match e {
        PlanError::MalformedDocument(m) => GatewayError::MalformedPlan(m),
        PlanError::SchemaViolation(v) => GatewayError::Schema(v),
    })
}

fn reply_object(kind: Capability, reply: &str) -> Result<serde_json::Map<String, Value>, GatewayError> {
    let value = parse_reply_value(reply).map_err(|reason| GatewayError::Parse { kind, reason })?;
    single_object(value).ok_or_else(|| GatewayError::Parse { kind, reason: "reply is not an object".into() })
}

fn parse_box(
    kind: Capability,
    obj: &serde_json::Map<String, Value>,
    w: u32,
    h: u32,
) -> Result<(String, BoundingBox2D, BoxUnits), GatewayError> {
    let name = match obj.get("name") {
        Some(Value::String(s)) => s.trim().to_string(),
        Some(other) if !other.is_null() => other.to_string(),
        _ => String::new(),
    };
    let raw = obj
        .get("pos")
        .and_then(number_array::<4>)
        .ok_or_else(|| GatewayError::Parse { kind, reason: "\"pos\" must be [y_min, x_min, y_max, x_max]".into() })?;
    let (bbox, units) = BoundingBox2D::from_provider(raw, w, h).map_err(|e| match e {
        GeometryError::ZeroAreaBox => GatewayError::ZeroAreaBox,
        other => GatewayError::Parse { kind, reason: other.to_string() },
    })?;
    if units == BoxUnits::Normalized1000 {
        tracing::info!(%kind, ?raw, "box read as 0-1000 normalized coordinates");
    }
    Ok((name, bbox, units))
}

fn parse_target(obj: &serde_json::Map<String, Value>, units: BoxUnits, w: u32, h: u32) -> Result<(Point2, bool), GatewayError> {
    let [x, y] = obj.get("target_pos").and_then(number_array::<2>).ok_or_else(|| GatewayError::Parse {
        kind: Capability::Translation,
        reason: "\"target_pos\" must be [x, y]".into(),
    })?;
    let (x, y) = match units {
        BoxUnits::Pixels => (x, y),
        BoxUnits::Normalized1000 => (x * w as f64 / 1000.0, y * h as f64 / 1000.0),
    };
    let (cx, cy) = (x.clamp(0.0, w as f64 - 1.0), y.clamp(0.0, h as f64 - 1.0));
    let clamped = (cx, cy) != (x, y);
    if clamped {
        tracing::warn!(x, y, "translation target outside the image, clamped");
    }
    Ok((Point2::new(cx, cy), clamped))
}

fn parse_rotation(obj: &serde_json::Map<String, Value>) -> Result<RotationResult, GatewayError> {
    let err = |reason: String| GatewayError::Parse { kind: Capability::Rotation, reason };
    let items = obj
        .get("rotation")
        .and_then(Value::as_array)
        .filter(|a| a.len() == 2)
        .ok_or_else(|| err("\"rotation\" must be [axis, direction]".into()))?;
    let text = |v: &Value| v.as_str().map(str::to_string).unwrap_or_else(|| v.to_string());
    let (axis, direction) = (text(&items[0]), text(&items[1]));
    Ok(RotationResult {
        axis: axis.parse().map_err(|_| err(format!("unknown axis {axis:?}")))?,
        direction: direction.parse().map_err(|_| err(format!("unknown direction {direction:?}")))?,
    })
}
