//! Minimal blocking JSON-over-HTTP client for the external completion and
//! embedding services.

use std::time::Duration;

use serde::de::DeserializeOwned;
use serde::Serialize;

#[derive(Debug, Clone)]
pub struct JsonEndpoint {
    pub url: String,
    pub api_key: Option<String>,
    pub timeout: Duration,
    /// Extra attempts after the first failure.
    pub retries: u32,
}

impl JsonEndpoint {
    pub fn new(url: impl Into<String>) -> Self {
        JsonEndpoint { url: url.into(), api_key: None, timeout: Duration::from_secs(30), retries: 2 }
    }

    /// Endpoint configured from `<url_var>` and the optional `<key_var>`.
    pub fn from_env(url_var: &str, key_var: &str) -> Option<Self> {
        let url = std::env::var(url_var).ok().filter(|u| !u.trim().is_empty())?;
        let mut ep = JsonEndpoint::new(url);
        ep.api_key = std::env::var(key_var).ok().filter(|k| !k.is_empty());
        Some(ep)
    }

    /// POSTs `body` and decodes the JSON response. Requests are idempotent,
    /// so failures are retried.
    pub fn post<B: Serialize, R: DeserializeOwned>(&self, body: &B) -> Result<R, String> {
        let config = ureq::Agent::config_builder().timeout_global(Some(self.timeout)).build();
        let agent = ureq::Agent::new_with_config(config);
        let mut last_error = String::new();
        for _ in 0..=self.retries {
            let mut req = agent.post(&self.url);
            if let Some(key) = &self.api_key {
                req = req.header("Authorization", &format!("Bearer {key}"));
            }
            match req.send_json(body) {
                Ok(mut resp) => match resp.body_mut().read_json::<R>() {
                    Ok(v) => return Ok(v),
                    Err(e) => last_error = format!("invalid response from {}: {e}", self.url),
                },
                Err(e) => last_error = format!("{}: {e}", self.url),
            }
        }
        Err(last_error)
    }
}
