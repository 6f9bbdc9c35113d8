use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecodingParams {
    pub temperature: f64,
    pub max_tokens: u32,
}

impl Default for DecodingParams {
    fn default() -> Self {
        Self {
            temperature: 0.0,
            max_tokens: 1024,
        }
    }
}

/// A text-completion model: the teacher, a served student, or the mock.
pub trait ModelBackend: Send + Sync {
    fn name(&self) -> &str;

    fn complete(&self, prompt: &str, params: &DecodingParams) -> Result<String>;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RemoteConfig {
    /// Base URL of an OpenAI-compatible API, e.g. `https://host/v1`.
    pub endpoint: String,
    pub model: String,
    /// Name of the environment variable holding the API key.
    pub api_key_env: Option<String>,
    pub timeout_secs: u64,
    pub max_retries: u32,
    pub backoff_ms: u64,
}

impl Default for RemoteConfig {
    fn default() -> Self {
        Self {
            endpoint: "https://api.openai.com/v1".into(),
            model: "gpt-4o".into(),
            api_key_env: Some("OPENAI_API_KEY".into()),
            timeout_secs: 60,
            max_retries: 3,
            backoff_ms: 500,
        }
    }
}

/// Chat-completion client over HTTP with retry and exponential backoff.
pub struct RemoteBackend {
    config: RemoteConfig,
    name: String,
    url: String,
    api_key: Option<String>,
    agent: ureq::Agent,
}

impl RemoteBackend {
    pub fn new(config: RemoteConfig) -> Result<Self> {
        let api_key = match &config.api_key_env {
            Some(var) => Some(std::env::var(var).map_err(|_| {
                Error::Backend(format!("environment variable {var} with the API key is not set"))
            })?),
            None => None,
        };
        let base = config.endpoint.trim_end_matches('/');
        let url = if base.ends_with("/chat/completions") {
            base.to_string()
        } else {
            format!("{base}/chat/completions")
        };
        let agent = ureq::AgentBuilder::new()
            .timeout(Duration::from_secs(config.timeout_secs))
            .build();
        Ok(Self {
            name: format!("remote:{}", config.model),
            url,
            api_key,
            agent,
            config,
        })
    }

    fn request_body(&self, prompt: &str, params: &DecodingParams) -> serde_json::Value {
        serde_json::json!({
            "model": self.config.model,
            "messages": [{"role": "user", "content": prompt}],
            "temperature": params.temperature,
            "max_tokens": params.max_tokens,
        })
    }

    fn attempt(&self, body: &serde_json::Value) -> std::result::Result<String, (bool, String)> {
        let mut req = self.agent.post(&self.url).set("Content-Type", "application/json");
        if let Some(key) = &self.api_key {
            req = req.set("Authorization", &format!("Bearer {key}"));
        }
        match req.send_json(body) {
            Ok(resp) => {
                let value: serde_json::Value = resp
                    .into_json()
                    .map_err(|e| (false, format!("unreadable response body: {e}")))?;
                value
                    .pointer("/choices/0/message/content")
                    .and_then(|c| c.as_str())
                    .map(str::to_string)
                    .ok_or_else(|| (false, "response has no choices[0].message.content".to_string()))
            }
            Err(ureq::Error::Status(code, resp)) => {
                let retryable = code == 429 || code >= 500;
                let detail = resp.into_string().unwrap_or_default();
                Err((retryable, format!("HTTP {code}: {}", detail.chars().take(200).collect::<String>())))
            }
            Err(ureq::Error::Transport(t)) => Err((true, format!("transport error: {t}"))),
        }
    }
}

impl ModelBackend for RemoteBackend {
    fn name(&self) -> &str {
        &self.name
    }

    fn complete(&self, prompt: &str, params: &DecodingParams) -> Result<String> {
        let body = self.request_body(prompt, params);
        let mut attempt = 0;
        loop {
            match self.attempt(&body) {
                Ok(text) => return Ok(text),
                Err((retryable, message)) => {
                    if !retryable || attempt >= self.config.max_retries {
                        return Err(Error::Backend(message));
                    }
                    let wait = self.config.backoff_ms.saturating_mul(1 << attempt.min(16));
                    log::warn!("{}: {message}; retrying in {wait} ms", self.name);
                    std::thread::sleep(Duration::from_millis(wait));
                    attempt += 1;
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::{BufRead, BufReader, Read, Write};
    use std::net::TcpListener;
    use std::sync::mpsc;

    /// Serves one canned reply per connection and forwards each request.
    fn serve(replies: Vec<(u16, String)>) -> (String, mpsc::Receiver<String>) {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap();
        let (tx, rx) = mpsc::channel();
        std::thread::spawn(move || {
            for (status, body) in replies {
                let (mut stream, _) = listener.accept().unwrap();
                let mut reader = BufReader::new(stream.try_clone().unwrap());
                let mut head = String::new();
                let mut length = 0;
                loop {
                    let mut line = String::new();
                    reader.read_line(&mut line).unwrap();
                    if let Some(v) = line.to_ascii_lowercase().strip_prefix("content-length:") {
                        length = v.trim().parse().unwrap();
                    }
                    head.push_str(&line);
                    if line == "\r\n" {
                        break;
                    }
                }
                let mut body_in = vec![0; length];
                reader.read_exact(&mut body_in).unwrap();
                tx.send(format!("{head}{}", String::from_utf8_lossy(&body_in))).unwrap();
                write!(
                    stream,
                    "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
                    body.len()
                )
                .unwrap();
            }
        });
        (format!("http://{addr}/v1"), rx)
    }

    fn config(endpoint: String) -> RemoteConfig {
        RemoteConfig {
            endpoint,
            model: "teacher-x".into(),
            api_key_env: Some("RCGUIDE_TEST_BACKEND_KEY".into()),
            timeout_secs: 5,
            max_retries: 2,
            backoff_ms: 1,
        }
    }

    #[test]
    fn retries_server_errors_then_reads_content() {
        std::env::set_var("RCGUIDE_TEST_BACKEND_KEY", "sk-test");
        let ok = r#"{"choices":[{"message":{"role":"assistant","content":"{\"error_types\":[]}"}}]}"#;
        let (url, requests) = serve(vec![(503, "busy".into()), (200, ok.into())]);
        let backend = RemoteBackend::new(config(url)).unwrap();
        let out = backend.complete("hello", &DecodingParams::default()).unwrap();
        assert_eq!(out, r#"{"error_types":[]}"#);
        let first = requests.recv().unwrap();
        assert!(first.starts_with("POST /v1/chat/completions"), "{first}");
        assert!(first.to_ascii_lowercase().contains("authorization: bearer sk-test"));
        assert!(first.contains(r#""model":"teacher-x""#));
        assert!(first.contains(r#""content":"hello""#));
        requests.recv().unwrap();
    }

    #[test]
    fn client_errors_are_not_retried() {
        std::env::set_var("RCGUIDE_TEST_BACKEND_KEY", "sk-test");
        let (url, requests) = serve(vec![(400, "bad request".into())]);
        let backend = RemoteBackend::new(config(url)).unwrap();
        let err = backend.complete("hello", &DecodingParams::default()).unwrap_err();
        assert!(err.to_string().contains("HTTP 400"), "{err}");
        assert_eq!(requests.iter().count(), 1);
    }

    #[test]
    fn missing_key_variable_is_reported() {
        let mut c = config("http://127.0.0.1:9".into());
        c.api_key_env = Some("RCGUIDE_TEST_UNSET_KEY_VARIABLE".into());
        let err = RemoteBackend::new(c).err().unwrap().to_string();
        assert!(err.contains("RCGUIDE_TEST_UNSET_KEY_VARIABLE"));
    }
}
