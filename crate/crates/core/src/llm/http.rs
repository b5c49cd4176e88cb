use std::net::{TcpStream, ToSocketAddrs};
use std::time::Duration;

use reqwest::blocking::{Client, RequestBuilder, Response};
use serde::Deserialize;
use serde_json::json;

use super::{BackendDescriptor, BackendKind, ChatBackend, GenerationRequest, LlmError};

pub const API_KEY_ENV: &str = "CODEXITY_API_KEY";

const BODY_EXCERPT: usize = 512;

fn client(timeout_seconds: f64) -> Result<Client, LlmError> {
    Client::builder()
        .timeout(Duration::from_secs_f64(timeout_seconds.max(0.001)))
        .build()
        .map_err(|e| LlmError::InvalidBackend(e.to_string()))
}

fn url(descriptor: &BackendDescriptor, path: &str) -> Result<String, LlmError> {
    let base = descriptor
        .endpoint
        .as_deref()
        .ok_or_else(|| LlmError::InvalidBackend("missing endpoint".into()))?;
    Ok(format!("{}{path}", base.trim_end_matches('/')))
}

// One retry on transport failure; HTTP status errors are returned as-is.
fn send(build: impl Fn() -> RequestBuilder) -> Result<Response, LlmError> {
    let mut last = None;
    for attempt in 0..2 {
        match build().send() {
            Ok(resp) => return check_status(resp),
            Err(e) => {
                tracing::warn!(attempt, error = %e, "backend request failed");
                last = Some(e);
            }
        }
    }
    Err(LlmError::BackendUnreachable(last.map(|e| e.to_string()).unwrap_or_default()))
}

fn check_status(resp: Response) -> Result<Response, LlmError> {
    let status = resp.status();
    if status.is_success() {
        return Ok(resp);
    }
    let body = resp.text().unwrap_or_default();
    Err(LlmError::BackendHttpError {
        status: status.as_u16(),
        body: body.chars().take(BODY_EXCERPT).collect(),
    })
}

/// OpenAI-compatible `/v1/chat/completions` client.
pub struct RemoteChatBackend {
    descriptor: BackendDescriptor,
    client: Client,
    api_key: Option<String>,
}

impl RemoteChatBackend {
    pub fn new(descriptor: BackendDescriptor, timeout_seconds: f64) -> Result<Self, LlmError> {
        descriptor.validate()?;
        Ok(Self {
            descriptor,
            client: client(timeout_seconds)?,
            api_key: std::env::var(API_KEY_ENV).ok().filter(|k| !k.is_empty()),
        })
    }

    pub fn with_api_key(mut self, key: Option<String>) -> Self {
        self.api_key = key;
        self
    }
}

#[derive(Deserialize)]
struct ChatCompletion {
    choices: Vec<Choice>,
}

#[derive(Deserialize)]
struct Choice {
    message: ChoiceMessage,
}

#[derive(Deserialize)]
struct ChoiceMessage {
    #[serde(default)]
    content: Option<String>,
}

impl ChatBackend for RemoteChatBackend {
    fn descriptor(&self) -> &BackendDescriptor {
        &self.descriptor
    }

    fn complete(&mut self, req: &GenerationRequest) -> Result<String, LlmError> {
        let url = url(&self.descriptor, "/v1/chat/completions")?;
        let model = if req.model.is_empty() { &self.descriptor.model } else { &req.model };
        let body = json!({
            "model": model,
            "messages": req.messages,
            "temperature": req.temperature,
            "max_tokens": req.max_tokens,
        });
        let resp = send(|| {
            let b = self.client.post(&url).json(&body);
            match &self.api_key {
                Some(key) => b.bearer_auth(key),
                None => b,
            }
        })?;
        let text = resp.text().map_err(|e| LlmError::MalformedResponse(e.to_string()))?;
        let parsed: ChatCompletion =
            serde_json::from_str(&text).map_err(|e| LlmError::MalformedResponse(e.to_string()))?;
        parsed
            .choices
            .into_iter()
            .next()
            .map(|c| c.message.content.unwrap_or_default())
            .ok_or_else(|| LlmError::MalformedResponse("response has no choices".into()))
    }
}

/// Prompt-in/text-out model server: `POST /generate`.
pub struct LocalCompletionBackend {
    descriptor: BackendDescriptor,
    client: Client,
}

impl LocalCompletionBackend {
    pub fn new(descriptor: BackendDescriptor, timeout_seconds: f64) -> Result<Self, LlmError> {
        descriptor.validate()?;
        Ok(Self {
            descriptor,
            client: client(timeout_seconds)?,
        })
    }
}

#[derive(Deserialize)]
struct LocalCompletion {
    text: String,
}

impl ChatBackend for LocalCompletionBackend {
    fn descriptor(&self) -> &BackendDescriptor {
        &self.descriptor
    }

    fn complete(&mut self, req: &GenerationRequest) -> Result<String, LlmError> {
        let url = url(&self.descriptor, "/generate")?;
        let body = json!({
            "prompt": req.flattened_prompt(),
            "temperature": req.temperature,
            "max_tokens": req.max_tokens,
        });
        let resp = send(|| self.client.post(&url).json(&body))?;
        let parsed: LocalCompletion = resp.json().map_err(|e| LlmError::MalformedResponse(e.to_string()))?;
        Ok(parsed.text)
    }
}

/// Whether the backend's host accepts TCP connections. Mocks are always
/// reachable. Nothing is sent over the connection.
pub fn probe_reachable(descriptor: &BackendDescriptor, timeout: Duration) -> bool {
    if descriptor.kind == BackendKind::ScriptedMock {
        return true;
    }
    let Some(endpoint) = descriptor.endpoint.as_deref() else {
        return false;
    };
    let Ok(parsed) = reqwest::Url::parse(endpoint) else {
        return false;
    };
    let (Some(host), Some(port)) = (parsed.host_str(), parsed.port_or_known_default()) else {
        return false;
    };
    let host = host.trim_start_matches('[').trim_end_matches(']');
    match (host, port).to_socket_addrs() {
        Ok(addrs) => addrs
            .into_iter()
            .any(|addr| TcpStream::connect_timeout(&addr, timeout).is_ok()),
        Err(_) => false,
    }
}
