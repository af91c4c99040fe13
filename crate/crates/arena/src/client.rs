//! Minimal `/v1` client for the operator CLI.

use anyhow::{anyhow, Context};
use serde::de::DeserializeOwned;

use crate::http::ErrorBody;

pub struct Client {
    base: String,
    http: reqwest::Client,
}

impl Client {
    pub fn new(base: impl Into<String>) -> Self {
        let mut base = base.into();
        if !base.contains("://") {
            base = format!("http://{base}");
        }
        Self {
            base: base.trim_end_matches('/').to_string(),
            http: reqwest::Client::new(),
        }
    }

    pub fn base(&self) -> &str {
        &self.base
    }

    pub async fn get<T: DeserializeOwned>(&self, path: &str, query: &[(&str, String)]) -> anyhow::Result<T> {
        let url = format!("{}{path}", self.base);
        let response = self
            .http
            .get(&url)
            .query(query)
            .send()
            .await
            .with_context(|| format!("requesting {url}"))?;
        let status = response.status();
        let text = response.text().await?;
        if !status.is_success() {
            return Err(match serde_json::from_str::<ErrorBody>(&text) {
                Ok(body) => anyhow!("{status}: {} ({})", body.message, body.error),
                Err(_) => anyhow!("{status}: {text}"),
            });
        }
        serde_json::from_str(&text).with_context(|| format!("decoding response from {url}"))
    }
}
