use std::sync::{Arc, Condvar, Mutex};
use std::time::Duration;

use serde::Deserialize;
use serde_json::json;

use super::{
    count_prompt_tokens, count_text_tokens, Backend, BackendConfig, GatewayError,
    GenerationRequest, GenerationResponse,
};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HttpReply {
    pub status: u16,
    pub body: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TransportError {
    Timeout,
    Connection(String),
}

/// One HTTP POST of a JSON body. Swappable so retry and concurrency
/// behaviour can be exercised without a network.
pub trait Transport: Send + Sync {
    fn post_json(
        &self,
        url: &str,
        bearer: Option<&str>,
        body: &str,
        timeout: Duration,
    ) -> Result<HttpReply, TransportError>;
}

pub struct HttpTransport {
    client: reqwest::blocking::Client,
}

impl HttpTransport {
    pub fn new() -> Result<Self, GatewayError> {
        let client = reqwest::blocking::Client::builder()
            .build()
            .map_err(|e| GatewayError::Transport(e.to_string()))?;
        Ok(Self { client })
    }
}

impl Transport for HttpTransport {
    fn post_json(
        &self,
        url: &str,
        bearer: Option<&str>,
        body: &str,
        timeout: Duration,
    ) -> Result<HttpReply, TransportError> {
        let mut req = self
            .client
            .post(url)
            .timeout(timeout)
            .header(reqwest::header::CONTENT_TYPE, "application/json")
            .body(body.to_string());
        if let Some(key) = bearer {
            req = req.bearer_auth(key);
        }
        let classify = |e: reqwest::Error| {
            if e.is_timeout() {
                TransportError::Timeout
            } else {
                TransportError::Connection(e.to_string())
            }
        };
        let resp = req.send().map_err(classify)?;
        let status = resp.status().as_u16();
        let body = resp.text().map_err(classify)?;
        Ok(HttpReply { status, body })
    }
}

/// Counting semaphore capping outstanding requests.
struct InFlight {
    count: Mutex<usize>,
    cv: Condvar,
    limit: usize,
}

struct Permit<'a>(&'a InFlight);

impl InFlight {
    fn new(limit: usize) -> Self {
        Self {
            count: Mutex::new(0),
            cv: Condvar::new(),
            limit,
        }
    }

    fn acquire(&self) -> Permit<'_> {
        let mut n = self.count.lock().unwrap_or_else(|p| p.into_inner());
        while *n >= self.limit {
            n = self.cv.wait(n).unwrap_or_else(|p| p.into_inner());
        }
        *n += 1;
        Permit(self)
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        let mut n = self.0.count.lock().unwrap_or_else(|p| p.into_inner());
        *n -= 1;
        self.0.cv.notify_one();
    }
}

type Sleeper = Arc<dyn Fn(Duration) + Send + Sync>;

/// Chat-completions client with retry, backoff and an in-flight cap.
pub struct RemoteBackend {
    id: String,
    endpoint: String,
    model: String,
    api_key: Option<String>,
    timeout: Duration,
    max_retries: u32,
    backoff_base_ms: u64,
    in_flight: InFlight,
    transport: Arc<dyn Transport>,
    sleep: Sleeper,
}

#[derive(Deserialize)]
struct CompletionBody {
    choices: Vec<Choice>,
    #[serde(default)]
    usage: Option<Usage>,
}

#[derive(Deserialize)]
struct Choice {
    message: ChoiceMessage,
    #[serde(default)]
    finish_reason: Option<String>,
}

#[derive(Deserialize)]
struct ChoiceMessage {
    #[serde(default)]
    content: Option<String>,
}

#[derive(Deserialize)]
struct Usage {
    #[serde(default)]
    prompt_tokens: u64,
    #[serde(default)]
    completion_tokens: u64,
}

fn is_retryable(status: u16) -> bool {
    status == 429 || (500..600).contains(&status)
}

impl RemoteBackend {
    pub fn from_config(
        config: &BackendConfig,
        transport: Arc<dyn Transport>,
    ) -> Result<Self, GatewayError> {
        config.validate()?;
        let endpoint = config
            .endpoint_url
            .clone()
            .ok_or_else(|| GatewayError::InvalidConfig("remote backend requires endpoint_url".into()))?;
        let api_key = match &config.api_key_env_var {
            Some(var) => Some(
                std::env::var(var)
                    .ok()
                    .filter(|v| !v.is_empty())
                    .ok_or_else(|| GatewayError::MissingApiKey(var.clone()))?,
            ),
            None => None,
        };
        let model = config.model.clone().unwrap_or_else(|| "default".to_string());
        Ok(Self {
            id: format!("remote:{model}"),
            endpoint,
            model,
            api_key,
            timeout: Duration::from_millis(config.timeout_ms),
            max_retries: config.max_retries,
            backoff_base_ms: config.backoff_base_ms,
            in_flight: InFlight::new(config.max_in_flight),
            transport,
            sleep: Arc::new(std::thread::sleep),
        })
    }

    /// Replaces the function used to wait between attempts.
    pub fn with_sleeper(mut self, sleep: impl Fn(Duration) + Send + Sync + 'static) -> Self {
        self.sleep = Arc::new(sleep);
        self
    }

    fn request_body(&self, request: &GenerationRequest) -> String {
        let mut body = json!({
            "model": self.model,
            "messages": request.messages,
            "temperature": request.temperature,
            "max_tokens": request.max_tokens,
        });
        if let Some(seed) = request.seed {
            body["seed"] = json!(seed);
        }
        body.to_string()
    }

    fn parse_reply(&self, request: &GenerationRequest, body: &str) -> Result<GenerationResponse, GatewayError> {
        let parsed: CompletionBody = serde_json::from_str(body)
            .map_err(|e| GatewayError::MalformedResponse(e.to_string()))?;
        let choice = parsed
            .choices
            .into_iter()
            .next()
            .ok_or_else(|| GatewayError::MalformedResponse("no choices".into()))?;
        let text = choice.message.content.unwrap_or_default();
        let truncated = choice.finish_reason.as_deref() == Some("length");
        if text.is_empty() && !truncated {
            return Err(GatewayError::MalformedResponse("empty completion".into()));
        }
        let (prompt_tokens, completion_tokens) = match parsed.usage {
            Some(u) => (u.prompt_tokens, u.completion_tokens),
            None => (count_prompt_tokens(request), count_text_tokens(&text)),
        };
        Ok(GenerationResponse {
            text,
            prompt_tokens,
            completion_tokens,
            backend_id: self.id.clone(),
            truncated,
        })
    }
}

impl Backend for RemoteBackend {
    fn id(&self) -> &str {
        &self.id
    }

    fn generate(&self, request: &GenerationRequest) -> Result<GenerationResponse, GatewayError> {
        let body = self.request_body(request);
        let mut last_error = GatewayError::Timeout;
        for attempt in 0..=self.max_retries {
            let outcome = {
                let _permit = self.in_flight.acquire();
                self.transport
                    .post_json(&self.endpoint, self.api_key.as_deref(), &body, self.timeout)
            };
            last_error = match outcome {
                Ok(reply) if (200..300).contains(&reply.status) => {
                    return self.parse_reply(request, &reply.body)
                }
                Ok(reply) if is_retryable(reply.status) => GatewayError::HttpStatus(reply.status),
                Ok(reply) => return Err(GatewayError::HttpStatus(reply.status)),
                Err(TransportError::Timeout) => GatewayError::Timeout,
                Err(TransportError::Connection(msg)) => GatewayError::Transport(msg),
            };
            if attempt < self.max_retries {
                let delay = self.backoff_base_ms.saturating_mul(1u64 << attempt.min(32));
                tracing::warn!(attempt = attempt + 1, error = %last_error, delay_ms = delay, "retrying generation");
                (self.sleep)(Duration::from_millis(delay));
            }
        }
        Err(last_error)
    }
}
