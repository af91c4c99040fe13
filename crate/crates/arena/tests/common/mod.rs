#![allow(dead_code)]

use std::sync::Arc;

use arena::{router, AppState};
use arena_core::config::ServerConfig;
use arena_core::{Clock, Runtime, Timestamp, VirtualClock};
use axum::body::Body;
use axum::http::{HeaderMap, Method, Request, StatusCode};
use axum::Router;
use chrono::{TimeDelta, TimeZone, Utc};
use http_body_util::BodyExt;
use serde_json::Value;
use tempfile::TempDir;
use tower::ServiceExt;

pub const OPERATOR_KEY: &str = "op-secret";

pub fn start() -> Timestamp {
    Utc.with_ymd_and_hms(2025, 3, 1, 0, 0, 0).unwrap()
}

pub fn config(rate_limit: u32) -> ServerConfig {
    let text = format!(
        r#"
        backfill = "P3D"
        seed = 3

        [platform]
        secret = "http-test"
        operator_key = "{OPERATOR_KEY}"
        api_rate_limit = {{ max_requests = {rate_limit}, per = "PT1M" }}

        [[provider]]
        name = "grid"
        [[provider.series_group]]
        prefix = "load"
        count = 3
        domain = "energy"
        subdomain = "load"
        frequency = "PT1H"
        base = 100.0
        amplitude = 10.0
        period = 24
        noise_std = 1.0

        [[bucket]]
        domain = "energy"
        frequency = "PT1H"
        horizon = "PT6H"
        cadence_per_day = 1
        phase_offset = "PT12H"
        context_length = 48
        announce_lead = "PT6H"
        selection = {{ mode = "random", k = 2, seed = 5 }}
        "#
    );
    toml::from_str(&text).unwrap()
}

pub struct App {
    pub clock: Arc<VirtualClock>,
    pub state: AppState,
    pub router: Router,
    _dir: TempDir,
}

pub struct Reply {
    pub status: StatusCode,
    pub headers: HeaderMap,
    pub body: Value,
}

impl App {
    pub fn new(rate_limit: u32) -> Self {
        let dir = TempDir::new().unwrap();
        let clock = Arc::new(VirtualClock::stepped(start()));
        let mut runtime = Runtime::from_server_config(&config(rate_limit), clock.clone(), dir.path()).unwrap();
        runtime.step().unwrap();
        let state = AppState::new(runtime);
        Self {
            clock,
            router: router(state.clone()),
            state,
            _dir: dir,
        }
    }

    pub fn now(&self) -> Timestamp {
        self.clock.now()
    }

    pub fn advance_to(&self, t: Timestamp) {
        while self.clock.now() < t {
            let next = (self.clock.now() + TimeDelta::minutes(15)).min(t);
            self.clock.advance_to(next);
            self.state.runtime().step().unwrap();
        }
    }

    pub async fn call(&self, method: Method, uri: &str, key: Option<&str>, body: Option<Value>) -> Reply {
        let mut req = Request::builder().method(method).uri(uri);
        if let Some(k) = key {
            req = req.header("X-Api-Key", k);
        }
        let req = match body {
            Some(b) => req
                .header("content-type", "application/json")
                .body(Body::from(b.to_string()))
                .unwrap(),
            None => req.body(Body::empty()).unwrap(),
        };
        let response = self.router.clone().oneshot(req).await.unwrap();
        let status = response.status();
        let headers = response.headers().clone();
        let bytes = response.into_body().collect().await.unwrap().to_bytes();
        let body = if bytes.is_empty() {
            Value::Null
        } else {
            serde_json::from_slice(&bytes).unwrap_or_else(|_| Value::String(String::from_utf8_lossy(&bytes).into()))
        };
        Reply { status, headers, body }
    }

    pub async fn get(&self, uri: &str, key: Option<&str>) -> Reply {
        self.call(Method::GET, uri, key, None).await
    }

    pub async fn post(&self, uri: &str, key: Option<&str>, body: Value) -> Reply {
        self.call(Method::POST, uri, key, Some(body)).await
    }

    /// Registers a model and returns `(model_id, api_key)`.
    pub async fn register(&self, name: &str) -> (String, String) {
        let reply = self.post("/v1/models", None, card(name)).await;
        assert_eq!(reply.status, StatusCode::CREATED, "{}", reply.body);
        (
            reply.body["model_id"].as_str().unwrap().to_string(),
            reply.body["api_key"].as_str().unwrap().to_string(),
        )
    }
}

pub fn card(name: &str) -> Value {
    serde_json::json!({
        "declared_name_version": name,
        "architecture_class": "gradient boosting",
        "approx_size": "2M",
        "external_data_used": false,
    })
}

pub fn ts(v: &Value) -> Timestamp {
    v.as_str().unwrap().parse().unwrap()
}
