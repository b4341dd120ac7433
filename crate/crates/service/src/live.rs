//! Chat-completions client for a real OpenAI-compatible endpoint.

use std::fmt;
use std::time::Duration;

use convroutine::backend::{BackendError, ChatBackend};
use convroutine::wire::{decode_response, encode_request, ChatRequest, ChatResponse};

pub struct LiveBackend {
    client: reqwest::blocking::Client,
    url: String,
    api_key: String,
    retries: u32,
    backoff: Duration,
}

// Hand-written so the key can never end up in a log line.
impl fmt::Debug for LiveBackend {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("LiveBackend")
            .field("url", &self.url)
            .field("api_key", &"<redacted>")
            .field("retries", &self.retries)
            .finish()
    }
}

impl LiveBackend {
    pub fn new(base_url: &str, api_key: String, timeout: Duration) -> Result<Self, BackendError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| BackendError::Transport(e.to_string()))?;
        Ok(Self {
            client,
            url: format!("{}/chat/completions", base_url.trim_end_matches('/')),
            api_key,
            retries: 2,
            backoff: Duration::from_secs(1),
        })
    }

    /// Reads the key from `env_name`.
    pub fn from_env(base_url: &str, env_name: &str, timeout: Duration) -> Result<Self, BackendError> {
        let key = std::env::var(env_name)
            .map_err(|_| BackendError::InvalidRequest(format!("environment variable {env_name} is not set")))?;
        Self::new(base_url, key, timeout)
    }

    pub fn with_retries(mut self, retries: u32, backoff: Duration) -> Self {
        self.retries = retries;
        self.backoff = backoff;
        self
    }

    fn attempt(&self, body: &[u8]) -> Result<ChatResponse, (BackendError, bool)> {
        let resp = self
            .client
            .post(&self.url)
            .bearer_auth(&self.api_key)
            .header(reqwest::header::CONTENT_TYPE, "application/json")
            .body(body.to_vec())
            .send()
            .map_err(|e| (BackendError::Transport(e.without_url().to_string()), true))?;
        let status = resp.status();
        let bytes = resp
            .bytes()
            .map_err(|e| (BackendError::Transport(e.to_string()), true))?;
        if !status.is_success() {
            let retry = status.is_server_error() || status.as_u16() == 429;
            let body = String::from_utf8_lossy(&bytes).chars().take(500).collect();
            return Err((
                BackendError::Http {
                    status: status.as_u16(),
                    body,
                },
                retry,
            ));
        }
        decode_response(&bytes).map_err(|e| (BackendError::Decode(e), false))
    }
}

impl ChatBackend for LiveBackend {
    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, BackendError> {
        request.validate().map_err(BackendError::InvalidRequest)?;
        let body = encode_request(request);
        let mut tries = 0;
        loop {
            match self.attempt(&body) {
                Ok(r) => return Ok(r),
                Err((e, true)) if tries < self.retries => {
                    tries += 1;
                    eprintln!("backend attempt {tries} failed ({e}); retrying");
                    std::thread::sleep(self.backoff);
                }
                Err((e, _)) => return Err(e),
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn debug_hides_key() {
        let b = LiveBackend::new("http://x/v1/", "sk-secret".into(), Duration::from_secs(1)).unwrap();
        let shown = format!("{b:?}");
        assert!(!shown.contains("sk-secret"));
        assert!(shown.contains("http://x/v1/chat/completions"));
    }

    #[test]
    fn missing_env_var() {
        let e = LiveBackend::from_env("http://x", "CONVROUTINE_TEST_UNSET_KEY", Duration::from_secs(1)).unwrap_err();
        assert!(e.to_string().contains("CONVROUTINE_TEST_UNSET_KEY"));
    }
}
