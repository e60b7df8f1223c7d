//! Live provider over HTTPS.
//!
//! Prompted capabilities go to OpenAI-compatible `chat/completions`
//! endpoints. Plan and rotation requests use the `[chat]` endpoint;
//! bounding-box and translation requests use `[grounding]`, falling back to
//! `[chat]` when absent. Segmentation posts
//! `{"image_png_base64", "box": [y_min, x_min, y_max, x_max]}` to a remote
//! host that answers `{"mask_png_base64", "latency_ms"}`, the mask covering
//! the box crop.
//!
//! API keys come from the environment variables named in the config file.

use std::fmt;
use std::path::Path;
use std::time::Duration;

use async_trait::async_trait;
use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use serde::Deserialize;
use serde_json::{json, Value};
use thiserror::Error;

use super::gateway::GatewayConfig;
use super::provider::{Capabilities, Capability, PromptRequest, ProviderError, SegmentReply, SegmentRequest, VisionProvider};
use super::SegmentationMask;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}: {reason}")]
    Read { path: String, reason: String },
    #[error("provider config: {0}")]
    Invalid(String),
    #[error("environment variable {0} is not set")]
    MissingKey(String),
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EndpointConfig {
    pub base_url: String,
    pub model: String,
    #[serde(default)]
    pub api_key_env: Option<String>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SegmentationEndpoint {
    pub url: String,
    #[serde(default)]
    pub api_key_env: Option<String>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Limits {
    #[serde(default = "Limits::default_timeout")]
    pub timeout_secs: f64,
    #[serde(default = "Limits::default_in_flight")]
    pub max_in_flight: usize,
}

impl Limits {
    fn default_timeout() -> f64 {
        30.0
    }

    fn default_in_flight() -> usize {
        4
    }
}

impl Default for Limits {
    fn default() -> Self {
        Limits { timeout_secs: Self::default_timeout(), max_in_flight: Self::default_in_flight() }
    }
}

/// Provider config file (TOML).
///
/// ```toml
/// [chat]
/// base_url = "https://api.openai.com/v1"
/// model = "gpt-4o"
/// api_key_env = "OPENAI_API_KEY"
///
/// [grounding]
/// base_url = "https://generativelanguage.googleapis.com/v1beta/openai"
/// model = "gemini-2.5-flash"
/// api_key_env = "GEMINI_API_KEY"
///
/// [segmentation]
/// url = "http://gpu-host:8080/segment"
///
/// [limits]
/// timeout_secs = 30
/// max_in_flight = 4
/// ```
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProviderConfig {
    pub chat: Option<EndpointConfig>,
    pub grounding: Option<EndpointConfig>,
    pub segmentation: Option<SegmentationEndpoint>,
    #[serde(default)]
    pub limits: Limits,
}

impl ProviderConfig {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let cfg: ProviderConfig = toml::from_str(text).map_err(|e| ConfigError::Invalid(e.to_string()))?;
        if !(cfg.limits.timeout_secs > 0.0) {
            return Err(ConfigError::Invalid("limits.timeout_secs must be positive".into()));
        }
        if cfg.limits.max_in_flight == 0 {
            return Err(ConfigError::Invalid("limits.max_in_flight must be at least 1".into()));
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError::Read { path: path.display().to_string(), reason: e.to_string() })?;
        Self::parse(&text)
    }

    /// Gateway settings implied by the `[limits]` section.
    pub fn gateway_config(&self) -> GatewayConfig {
        GatewayConfig {
            timeout: Duration::from_secs_f64(self.limits.timeout_secs),
            max_in_flight: self.limits.max_in_flight,
            ..GatewayConfig::default()
        }
    }

    /// Names of every environment variable the config refers to.
    pub fn key_variables(&self) -> Vec<&str> {
        let chat = [&self.chat, &self.grounding].into_iter().flatten().filter_map(|e| e.api_key_env.as_deref());
        chat.chain(self.segmentation.iter().filter_map(|s| s.api_key_env.as_deref())).collect()
    }
}

/// A secret that never appears in debug output.
#[derive(Clone)]
struct ApiKey(String);

impl fmt::Debug for ApiKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("ApiKey(..)")
    }
}

fn read_key(var: Option<&str>, env: &dyn Fn(&str) -> Option<String>) -> Result<Option<ApiKey>, ConfigError> {
    match var {
        None => Ok(None),
        Some(v) => env(v).filter(|k| !k.is_empty()).map(|k| Some(ApiKey(k))).ok_or_else(|| ConfigError::MissingKey(v.to_string())),
    }
}

#[derive(Debug, Clone)]
struct ChatEndpoint {
    url: String,
    model: String,
    key: Option<ApiKey>,
}

#[derive(Debug, Clone)]
struct SegEndpoint {
    url: String,
    key: Option<ApiKey>,
}

#[derive(Debug, Clone)]
pub struct HttpProvider {
    client: reqwest::Client,
    chat: Option<ChatEndpoint>,
    grounding: Option<ChatEndpoint>,
    segmentation: Option<SegEndpoint>,
}

impl HttpProvider {
    /// Builds a provider, reading keys from the process environment.
    pub fn from_config(cfg: &ProviderConfig) -> Result<Self, ConfigError> {
        Self::from_config_with_env(cfg, &|v| std::env::var(v).ok())
    }

    pub fn from_config_with_env(cfg: &ProviderConfig, env: &dyn Fn(&str) -> Option<String>) -> Result<Self, ConfigError> {
        let chat_endpoint = |e: &EndpointConfig| -> Result<ChatEndpoint, ConfigError> {
            Ok(ChatEndpoint {
                url: format!("{}/chat/completions", e.base_url.trim_end_matches('/')),
                model: e.model.clone(),
                key: read_key(e.api_key_env.as_deref(), env)?,
            })
        };
        let chat = cfg.chat.as_ref().map(chat_endpoint).transpose()?;
        let grounding = cfg.grounding.as_ref().map(chat_endpoint).transpose()?;
        let segmentation = cfg
            .segmentation
            .as_ref()
            .map(|s| Ok::<_, ConfigError>(SegEndpoint { url: s.url.clone(), key: read_key(s.api_key_env.as_deref(), env)? }))
            .transpose()?;
        if chat.is_none() && grounding.is_none() && segmentation.is_none() {
            return Err(ConfigError::Invalid("no endpoints configured".into()));
        }
        let client = reqwest::Client::builder()
            .build()
            .map_err(|e| ConfigError::Invalid(format!("HTTP client: {e}")))?;
        Ok(HttpProvider { client, chat, grounding, segmentation })
    }

    fn endpoint_for(&self, c: Capability) -> Option<&ChatEndpoint> {
        match c {
            Capability::Plan | Capability::Rotation => self.chat.as_ref(),
            Capability::Bbox | Capability::Translation => self.grounding.as_ref().or(self.chat.as_ref()),
            Capability::Segmentation => None,
        }
    }

    async fn post(&self, url: &str, key: Option<&ApiKey>, body: &Value) -> Result<Value, ProviderError> {
        let mut req = self.client.post(url).json(body);
        if let Some(k) = key {
            req = req.bearer_auth(&k.0);
        }
        let resp = req.send().await.map_err(|e| ProviderError::Transport(e.without_url().to_string()))?;
        let status = resp.status();
        let text = resp.text().await.map_err(|e| ProviderError::Transport(e.without_url().to_string()))?;
        if !status.is_success() {
            let body: String = text.chars().take(500).collect();
            return Err(ProviderError::Status { status: status.as_u16(), body });
        }
        serde_json::from_str(&text).map_err(|e| ProviderError::Transport(format!("response is not JSON: {e}")))
    }
}

/// Chat-completions request body with the prompt followed by every frame.
fn chat_body(model: &str, request: &PromptRequest) -> Value {
    let mut content = vec![json!({"type": "text", "text": request.prompt})];
    for f in &request.frames {
        let url = format!("data:image/png;base64,{}", B64.encode(f.image.png()));
        content.push(json!({"type": "image_url", "image_url": {"url": url}}));
    }
    json!({
        "model": model,
        "temperature": 0,
        "messages": [{"role": "user", "content": content}],
    })
}

fn chat_reply(v: &Value) -> Result<String, ProviderError> {
    let message = &v["choices"][0]["message"];
    if let Some(refusal) = message["refusal"].as_str() {
        return Err(ProviderError::Refusal(refusal.to_string()));
    }
    message["content"]
        .as_str()
        .map(str::to_string)
        .ok_or_else(|| ProviderError::Transport("response has no choices[0].message.content".into()))
}

#[derive(Deserialize)]
struct SegmentationWire {
    mask_png_base64: String,
    #[serde(default)]
    latency_ms: Option<f64>,
}

#[async_trait]
impl VisionProvider for HttpProvider {
    fn name(&self) -> &str {
        "http"
    }

    fn capabilities(&self) -> Capabilities {
        Capability::ALL
            .into_iter()
            .filter(|c| match c {
                Capability::Segmentation => self.segmentation.is_some(),
                other => self.endpoint_for(*other).is_some(),
            })
            .collect()
    }

    async fn complete(&self, request: &PromptRequest) -> Result<String, ProviderError> {
        let ep = self.endpoint_for(request.capability).ok_or(ProviderError::Unsupported(request.capability))?;
        let v = self.post(&ep.url, ep.key.as_ref(), &chat_body(&ep.model, request)).await?;
        chat_reply(&v)
    }

    async fn segment(&self, request: &SegmentRequest) -> Result<SegmentReply, ProviderError> {
        let ep = self.segmentation.as_ref().ok_or(ProviderError::Unsupported(Capability::Segmentation))?;
        let b = &request.bbox;
        let body = json!({
            "image_png_base64": B64.encode(request.frame.image.png()),
            "box": [b.y_min, b.x_min, b.y_max, b.x_max],
        });
        let v = self.post(&ep.url, ep.key.as_ref(), &body).await?;
        let wire: SegmentationWire =
            serde_json::from_value(v).map_err(|e| ProviderError::Transport(format!("segmentation reply: {e}")))?;
        let png = B64
            .decode(wire.mask_png_base64.as_bytes())
            .map_err(|e| ProviderError::Transport(format!("segmentation mask: {e}")))?;
        let mask = SegmentationMask::from_png(&png).map_err(ProviderError::Transport)?;
        let reported_latency = wire.latency_ms.filter(|ms| *ms >= 0.0).map(|ms| Duration::from_secs_f64(ms / 1000.0));
        Ok(SegmentReply { mask, reported_latency })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const CONFIG: &str = r#"
        [chat]
        base_url = "https://chat.example/v1/"
        model = "m1"
        api_key_env = "TEST_CHAT_KEY"

        [segmentation]
        url = "http://gpu.example/segment"

        [limits]
        timeout_secs = 12.5
    "#;

    #[test]
    fn missing_key_is_a_config_error() {
        let cfg = ProviderConfig::parse(CONFIG).unwrap();
        let err = HttpProvider::from_config_with_env(&cfg, &|_| None).unwrap_err();
        assert!(matches!(err, ConfigError::MissingKey(ref v) if v == "TEST_CHAT_KEY"));
    }

    #[test]
    fn capabilities_follow_sections() {
        let cfg = ProviderConfig::parse(CONFIG).unwrap();
        assert_eq!(cfg.gateway_config().timeout, Duration::from_millis(12_500));
        assert_eq!(cfg.key_variables(), ["TEST_CHAT_KEY"]);
        let p = HttpProvider::from_config_with_env(&cfg, &|_| Some("secret".into())).unwrap();
        assert_eq!(p.chat.as_ref().unwrap().url, "https://chat.example/v1/chat/completions");
        assert!(!format!("{p:?}").contains("secret"));
        let caps = p.capabilities();
        assert!(Capability::ALL.iter().all(|c| caps.contains(*c)));
    }

    #[test]
    fn bad_limits_rejected() {
        assert!(ProviderConfig::parse("[limits]\ntimeout_secs = 0\n").is_err());
        assert!(ProviderConfig::parse("[chat]\nbase_url = 1\n").is_err());
    }

    #[test]
    fn reply_extraction() {
        let ok = json!({"choices": [{"message": {"content": "{rotation: [x, CCW]}"}}]});
        assert_eq!(chat_reply(&ok).unwrap(), "{rotation: [x, CCW]}");
        let refused = json!({"choices": [{"message": {"content": null, "refusal": "no"}}]});
        assert_eq!(chat_reply(&refused), Err(ProviderError::Refusal("no".into())));
    }
}
