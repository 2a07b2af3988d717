use std::time::Duration;

use serde_json::{json, Value};

use super::{BackendConfig, ChatBackend, CompletionRequest, GatewayError};

/// JSON-over-HTTP POST with retry and exponential backoff.
///
/// Transient failures (timeouts, transport errors, 429 and 5xx) are retried up to
/// `retry_limit` times; the wait before retry `i` (0-based) is `backoff * 2^i`.
#[derive(Debug, Clone)]
pub struct HttpJsonClient {
    agent: ureq::Agent,
    url: String,
    api_key: Option<String>,
    retry_limit: u32,
    backoff: Duration,
}

enum Attempt {
    Done(Value),
    Transient(String),
    Fatal(GatewayError),
}

impl HttpJsonClient {
    pub fn new(
        url: impl Into<String>,
        timeout: Duration,
        retry_limit: u32,
        backoff: Duration,
        api_key: Option<String>,
    ) -> Self {
        let config = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .http_status_as_error(false)
            .build();
        Self {
            agent: config.into(),
            url: url.into(),
            api_key,
            retry_limit,
            backoff,
        }
    }

    pub fn from_config(cfg: &BackendConfig) -> Result<Self, GatewayError> {
        let endpoint = cfg
            .endpoint
            .clone()
            .ok_or_else(|| GatewayError::Config("remote backend requires an endpoint".into()))?;
        let api_key = match &cfg.api_key_env {
            Some(var) => Some(std::env::var(var).map_err(|_| {
                GatewayError::Config(format!("environment variable {var} is not set"))
            })?),
            None => None,
        };
        Ok(Self::new(
            endpoint,
            cfg.timeout(),
            cfg.retry_limit,
            Duration::from_millis(cfg.backoff_ms),
            api_key,
        ))
    }

    fn attempt(&self, body: &Value) -> Attempt {
        let mut request = self.agent.post(&self.url);
        if let Some(key) = &self.api_key {
            request = request.header("Authorization", &format!("Bearer {key}"));
        }
        match request.send_json(body) {
            Ok(mut response) => {
                let status = response.status().as_u16();
                if (200..300).contains(&status) {
                    match response.body_mut().read_json::<Value>() {
                        Ok(v) => Attempt::Done(v),
                        Err(ureq::Error::Timeout(t)) => Attempt::Transient(format!("timeout: {t}")),
                        Err(e) => Attempt::Fatal(GatewayError::Protocol(e.to_string())),
                    }
                } else {
                    let text = response.body_mut().read_to_string().unwrap_or_default();
                    if status == 429 || status >= 500 {
                        Attempt::Transient(format!("http status {status}: {text}"))
                    } else {
                        Attempt::Fatal(GatewayError::Http { status, body: text })
                    }
                }
            }
            Err(ureq::Error::Timeout(t)) => Attempt::Transient(format!("timeout: {t}")),
            Err(e) => Attempt::Transient(format!("transport: {e}")),
        }
    }

    pub fn post_json(&self, body: &Value) -> Result<Value, GatewayError> {
        let attempts = self.retry_limit + 1;
        let mut last = String::new();
        for i in 0..attempts {
            match self.attempt(body) {
                Attempt::Done(v) => return Ok(v),
                Attempt::Fatal(e) => return Err(e),
                Attempt::Transient(reason) => {
                    log::warn!("POST {} attempt {} failed: {reason}", self.url, i + 1);
                    last = reason;
                    if i + 1 < attempts {
                        std::thread::sleep(self.backoff * 2u32.saturating_pow(i));
                    }
                }
            }
        }
        if attempts == 1 && last.starts_with("timeout") {
            return Err(GatewayError::Timeout(last));
        }
        Err(GatewayError::RetriesExhausted { attempts, last })
    }
}

/// OpenAI-style `chat/completions` backend.
#[derive(Debug, Clone)]
pub struct RemoteBackend {
    http: HttpJsonClient,
}

impl RemoteBackend {
    pub fn new(http: HttpJsonClient) -> Self {
        Self { http }
    }

    pub fn from_config(cfg: &BackendConfig) -> Result<Self, GatewayError> {
        Ok(Self::new(HttpJsonClient::from_config(cfg)?))
    }

    pub fn request_body(model_id: &str, req: &CompletionRequest) -> Value {
        let mut body = json!({
            "model": model_id,
            "messages": req.messages,
            "temperature": req.temperature,
            "max_tokens": req.max_tokens,
        });
        if let Some(seed) = req.seed {
            body["seed"] = json!(seed);
        }
        body
    }
}

impl ChatBackend for RemoteBackend {
    fn complete(&self, model_id: &str, req: &CompletionRequest) -> Result<String, GatewayError> {
        let response = self.http.post_json(&Self::request_body(model_id, req))?;
        response
            .pointer("/choices/0/message/content")
            .and_then(Value::as_str)
            .map(str::to_owned)
            .ok_or_else(|| {
                GatewayError::Protocol("response lacks choices[0].message.content".into())
            })
    }
}
