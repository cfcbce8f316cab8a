//! OpenAI-compatible chat-completions client.
//!
//! Sends the rendered prompt as a single-turn user message to
//! `POST {base_url}/chat/completions`. Transport failures are retried up to
//! `max_retries` times; non-2xx statuses are surfaced immediately.

use super::{BackendError, Completer, CompletionRequest, RawCompletion, TokenUsage};
use serde::{Deserialize, Serialize};
use std::time::Duration;

pub const DEFAULT_TIMEOUT_SECS: u64 = 60;

#[derive(Debug, Clone)]
pub struct HttpSettings {
    pub base_url: String,
    pub api_key: Option<String>,
    pub max_retries: u32,
    pub timeout_secs: u64,
}

impl HttpSettings {
    pub fn new(base_url: impl Into<String>) -> Self {
        Self {
            base_url: base_url.into(),
            api_key: None,
            max_retries: super::DEFAULT_MAX_RETRIES,
            timeout_secs: DEFAULT_TIMEOUT_SECS,
        }
    }
}

#[derive(Serialize)]
struct WireRequest<'a> {
    model: &'a str,
    messages: [WireMessage<'a>; 1],
    max_tokens: u32,
    temperature: f64,
    top_p: f64,
}

#[derive(Serialize)]
struct WireMessage<'a> {
    role: &'static str,
    content: &'a str,
}

#[derive(Deserialize)]
struct WireResponse {
    choices: Vec<WireChoice>,
    #[serde(default)]
    usage: Option<WireUsage>,
}

#[derive(Deserialize)]
struct WireChoice {
    message: WireChoiceMessage,
}

#[derive(Deserialize)]
struct WireChoiceMessage {
    #[serde(default)]
    content: Option<String>,
}

#[derive(Deserialize)]
struct WireUsage {
    #[serde(default)]
    prompt_tokens: u64,
    #[serde(default)]
    completion_tokens: u64,
}

pub struct HttpBackend {
    settings: HttpSettings,
    client: reqwest::blocking::Client,
}

impl HttpBackend {
    pub fn new(settings: HttpSettings) -> Result<Self, BackendError> {
        if settings.base_url.is_empty() {
            return Err(BackendError::Config("base_url must be non-empty".into()));
        }
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(settings.timeout_secs))
            .build()
            .map_err(|e| BackendError::Config(format!("http client: {e}")))?;
        Ok(Self { settings, client })
    }

    fn endpoint(&self) -> String {
        format!("{}/chat/completions", self.settings.base_url.trim_end_matches('/'))
    }

    fn send_once(&self, request: &CompletionRequest) -> Result<RawCompletion, SendError> {
        let body = WireRequest {
            model: &request.model_id,
            messages: [WireMessage {
                role: "user",
                content: &request.prompt,
            }],
            max_tokens: request.params.max_tokens,
            temperature: request.params.temperature,
            top_p: request.params.top_p,
        };
        let mut builder = self.client.post(self.endpoint()).json(&body);
        if let Some(key) = &self.settings.api_key {
            builder = builder.bearer_auth(key);
        }
        let response = builder.send().map_err(|e| SendError::Transport(e.to_string()))?;
        let status = response.status();
        let text = response
            .text()
            .map_err(|e| SendError::Transport(e.to_string()))?;
        if !status.is_success() {
            return Err(SendError::Fatal(BackendError::Remote {
                status: status.as_u16(),
                body: text.chars().take(400).collect(),
            }));
        }
        let parsed: WireResponse = serde_json::from_str(&text)
            .map_err(|e| SendError::Fatal(BackendError::Protocol(e.to_string())))?;
        let content = parsed
            .choices
            .first()
            .and_then(|c| c.message.content.clone())
            .ok_or_else(|| {
                SendError::Fatal(BackendError::Protocol("response has no message content".into()))
            })?;
        Ok(RawCompletion {
            text: content,
            usage: parsed.usage.map(|u| TokenUsage {
                prompt_tokens: u.prompt_tokens,
                completion_tokens: u.completion_tokens,
            }),
        })
    }
}

enum SendError {
    Transport(String),
    Fatal(BackendError),
}

impl Completer for HttpBackend {
    fn complete_raw(&self, request: &CompletionRequest) -> Result<RawCompletion, BackendError> {
        let attempts = self.settings.max_retries + 1;
        let mut last_transport = String::new();
        for attempt in 0..attempts {
            match self.send_once(request) {
                Ok(raw) => return Ok(raw),
                Err(SendError::Fatal(e)) => return Err(e),
                Err(SendError::Transport(message)) => {
                    last_transport = message;
                    if attempt + 1 < attempts {
                        std::thread::sleep(Duration::from_millis(50 * (attempt as u64 + 1)));
                    }
                }
            }
        }
        Err(BackendError::Transport {
            attempts,
            message: last_transport,
        })
    }

    fn is_network(&self) -> bool {
        true
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::{PurposeTag, SamplingParams};
    use std::io::{Read, Write};
    use std::net::TcpListener;
    use std::sync::atomic::{AtomicUsize, Ordering};
    use std::sync::Arc;

    fn request(prompt: &str) -> CompletionRequest {
        CompletionRequest::new("test-model", prompt, SamplingParams::default(), PurposeTag::Init)
    }

    // Minimal one-shot HTTP server: answers `hits` requests with `status`
    // and `body`, then stops. Returns the base url and the hit counter.
    fn serve(
        hits: usize,
        status: u16,
        body: String,
        drop_connection: bool,
    ) -> (String, Arc<AtomicUsize>, std::thread::JoinHandle<()>) {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap();
        let counter = Arc::new(AtomicUsize::new(0));
        let counter_clone = counter.clone();
        let handle = std::thread::spawn(move || {
            for _ in 0..hits {
                let (mut stream, _) = listener.accept().unwrap();
                counter_clone.fetch_add(1, Ordering::SeqCst);
                let mut buf = [0u8; 8192];
                let _ = stream.read(&mut buf);
                if drop_connection {
                    drop(stream);
                    continue;
                }
                let response = format!(
                    "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
                    body.len()
                );
                stream.write_all(response.as_bytes()).unwrap();
            }
        });
        (format!("http://{addr}"), counter, handle)
    }

    #[test]
    fn happy_path_parses_content_and_usage() {
        let body = serde_json::json!({
            "choices": [{"message": {"role": "assistant", "content": "LeBron James"}}],
            "usage": {"prompt_tokens": 12, "completion_tokens": 3}
        })
        .to_string();
        let (url, hits, handle) = serve(1, 200, body, false);
        let backend = HttpBackend::new(HttpSettings::new(url)).unwrap();
        let out = backend.complete_raw(&request("question")).unwrap();
        handle.join().unwrap();
        assert_eq!(out.text, "LeBron James");
        assert_eq!(out.usage.unwrap().completion_tokens, 3);
        assert_eq!(hits.load(Ordering::SeqCst), 1);
    }

    #[test]
    fn non_2xx_is_remote_error_without_retry() {
        let (url, hits, handle) = serve(1, 503, "overloaded".into(), false);
        let mut settings = HttpSettings::new(url);
        settings.max_retries = 3;
        let backend = HttpBackend::new(settings).unwrap();
        let err = backend.complete_raw(&request("q")).unwrap_err();
        handle.join().unwrap();
        match err {
            BackendError::Remote { status, body } => {
                assert_eq!(status, 503);
                assert!(body.contains("overloaded"));
            }
            other => panic!("expected remote error, got {other:?}"),
        }
        assert_eq!(hits.load(Ordering::SeqCst), 1);
    }

    #[test]
    fn transport_failures_retried_then_bounded() {
        let (url, hits, handle) = serve(3, 200, String::new(), true);
        let mut settings = HttpSettings::new(url);
        settings.max_retries = 2;
        let backend = HttpBackend::new(settings).unwrap();
        let err = backend.complete_raw(&request("q")).unwrap_err();
        handle.join().unwrap();
        match err {
            BackendError::Transport { attempts, .. } => assert_eq!(attempts, 3),
            other => panic!("expected transport error, got {other:?}"),
        }
        // At most R+1 attempts reached the wire.
        assert_eq!(hits.load(Ordering::SeqCst), 3);
    }

    #[test]
    fn malformed_body_is_protocol_error() {
        let (url, _, handle) = serve(1, 200, "{\"choices\": []}".into(), false);
        let backend = HttpBackend::new(HttpSettings::new(url)).unwrap();
        let err = backend.complete_raw(&request("q")).unwrap_err();
        handle.join().unwrap();
        assert!(matches!(err, BackendError::Protocol(_)));
    }
}
