use std::sync::Arc;
use std::time::Duration;

use serde_json::Value;
use thiserror::Error;

use crate::service::{HeuristicsReport, RulesService};

#[derive(Debug, Clone, PartialEq)]
pub struct HttpResponse {
    pub status: u16,
    pub body: Value,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("{stage}: {detail}")]
pub struct TransportError {
    /// Where the exchange broke down (connect, read, decode, ...).
    pub stage: String,
    pub detail: String,
}

impl TransportError {
    fn new(stage: &str, detail: impl ToString) -> Self {
        TransportError {
            stage: stage.to_string(),
            detail: detail.to_string(),
        }
    }
}

/// A way of talking to a rules service.
pub trait Transport {
    fn send(&self, method: &str, path: &str, body: Option<&Value>) -> Result<HttpResponse, TransportError>;

    /// Feedback of the most recent API request.
    fn heuristics(&self) -> Result<HeuristicsReport, TransportError> {
        let r = self.send("GET", "/internal/heuristics", None)?;
        serde_json::from_value(r.body).map_err(|e| TransportError::new("decode heuristics", e))
    }
}

/// Calls the handler directly; no sockets, no serialization of requests.
#[derive(Debug, Clone)]
pub struct InProcess(pub Arc<RulesService>);

impl Transport for InProcess {
    fn send(&self, method: &str, path: &str, body: Option<&Value>) -> Result<HttpResponse, TransportError> {
        let r = self.0.handle_json(method, path, body);
        Ok(HttpResponse {
            status: r.status,
            body: r.body,
        })
    }

    fn heuristics(&self) -> Result<HeuristicsReport, TransportError> {
        Ok(self.0.last_heuristics())
    }
}

/// Plain HTTP/1.1 client against a running server.
pub struct HttpTransport {
    base: String,
    agent: ureq::Agent,
}

impl HttpTransport {
    pub fn new(base_url: impl Into<String>) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .http_status_as_error(false)
            .timeout_global(Some(Duration::from_secs(30)))
            .build()
            .into();
        HttpTransport {
            base: base_url.into().trim_end_matches('/').to_string(),
            agent,
        }
    }
}

impl Transport for HttpTransport {
    fn send(&self, method: &str, path: &str, body: Option<&Value>) -> Result<HttpResponse, TransportError> {
        let url = format!("{}{}", self.base, path);
        let bytes = body.map(|b| serde_json::to_vec(b).expect("json values serialize"));
        let res = match (method, bytes) {
            ("GET", _) => self.agent.get(&url).call(),
            ("DELETE", _) => self.agent.delete(&url).call(),
            ("POST", b) => self
                .agent
                .post(&url)
                .header("content-type", "application/json")
                .send(b.as_deref().unwrap_or(&[])),
            ("PUT", b) => self
                .agent
                .put(&url)
                .header("content-type", "application/json")
                .send(b.as_deref().unwrap_or(&[])),
            (m, _) => return Err(TransportError::new("request", format!("unsupported method {m}"))),
        };
        let mut resp = res.map_err(|e| TransportError::new("exchange", e))?;
        let status = resp.status().as_u16();
        let text = resp
            .body_mut()
            .read_to_string()
            .map_err(|e| TransportError::new("read body", e))?;
        let body = if text.is_empty() {
            Value::Null
        } else {
            serde_json::from_str(&text).map_err(|e| TransportError::new("decode body", e))?
        };
        Ok(HttpResponse { status, body })
    }
}
