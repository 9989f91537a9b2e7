//! Minimal blocking HTTP abstraction shared by every remote client.
//!
//! Production code goes through [`ReqwestTransport`]. Tests and offline runs
//! use [`Cassette`], which replays recorded interactions keyed by method and
//! URL path.

use std::collections::HashMap;
use std::path::Path;
use std::sync::Mutex;
use std::time::Duration;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Method {
    Get,
    Post,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HttpRequest {
    pub method: Method,
    pub url: String,
    pub headers: Vec<(String, String)>,
    pub body: Option<String>,
}

impl HttpRequest {
    pub fn get(url: impl Into<String>) -> Self {
        HttpRequest {
            method: Method::Get,
            url: url.into(),
            headers: Vec::new(),
            body: None,
        }
    }

    pub fn post_json(url: impl Into<String>, body: &serde_json::Value) -> Self {
        HttpRequest {
            method: Method::Post,
            url: url.into(),
            headers: vec![("content-type".into(), "application/json".into())],
            body: Some(body.to_string()),
        }
    }

    pub fn header(mut self, name: &str, value: impl Into<String>) -> Self {
        self.headers.push((name.to_ascii_lowercase(), value.into()));
        self
    }

    pub fn bearer(self, token: Option<&str>) -> Self {
        match token {
            Some(t) if !t.is_empty() => self.header("authorization", format!("Bearer {t}")),
            _ => self,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HttpResponse {
    pub status: u16,
    pub headers: Vec<(String, String)>,
    pub body: String,
}

impl HttpResponse {
    pub fn new(status: u16, body: impl Into<String>) -> Self {
        HttpResponse {
            status,
            headers: Vec::new(),
            body: body.into(),
        }
    }

    pub fn header(&self, name: &str) -> Option<&str> {
        self.headers
            .iter()
            .find(|(k, _)| k.eq_ignore_ascii_case(name))
            .map(|(_, v)| v.as_str())
    }

    pub fn is_success(&self) -> bool {
        (200..300).contains(&self.status)
    }
}

/// Failure to obtain any response at all.
#[derive(Debug, Clone, thiserror::Error)]
#[error("{0}")]
pub struct TransportError(pub String);

pub trait HttpTransport: Send + Sync {
    fn send(&self, req: &HttpRequest) -> Result<HttpResponse, TransportError>;
}

pub struct ReqwestTransport {
    client: reqwest::blocking::Client,
}

impl ReqwestTransport {
    pub fn new(timeout: Duration) -> Result<Self, TransportError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(timeout)
            .user_agent(concat!("vfd/", env!("CARGO_PKG_VERSION")))
            .build()
            .map_err(|e| TransportError(e.to_string()))?;
        Ok(ReqwestTransport { client })
    }
}

impl HttpTransport for ReqwestTransport {
    fn send(&self, req: &HttpRequest) -> Result<HttpResponse, TransportError> {
        let mut builder = match req.method {
            Method::Get => self.client.get(&req.url),
            Method::Post => self.client.post(&req.url),
        };
        for (k, v) in &req.headers {
            builder = builder.header(k.as_str(), v.as_str());
        }
        if let Some(body) = &req.body {
            builder = builder.body(body.clone());
        }
        let resp = builder.send().map_err(|e| TransportError(e.to_string()))?;
        let status = resp.status().as_u16();
        let headers = resp
            .headers()
            .iter()
            .filter_map(|(k, v)| Some((k.as_str().to_owned(), v.to_str().ok()?.to_owned())))
            .collect();
        let body = resp.text().map_err(|e| TransportError(e.to_string()))?;
        Ok(HttpResponse {
            status,
            headers,
            body,
        })
    }
}

/// One recorded request/response pair.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Interaction {
    pub method: Method,
    /// Path and query, e.g. `/repos/gpac/gpac/issues/2475`.
    pub path: String,
    pub status: u16,
    #[serde(default)]
    pub headers: HashMap<String, String>,
    /// JSON bodies are stored as JSON; anything else as a string.
    #[serde(default)]
    pub body: serde_json::Value,
    /// Replaces the response with a transport failure.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub transport_error: Option<String>,
}

/// Replays recorded interactions. Several recordings for the same method and
/// path are served in order; the last one repeats once the queue is drained.
/// Unrecorded requests get a 404.
/// Next index to serve and the recorded responses for one request key.
type Queue = (usize, Vec<Interaction>);

#[derive(Default)]
pub struct Cassette {
    queues: Mutex<HashMap<(Method, String), Queue>>,
    log: Mutex<Vec<HttpRequest>>,
}

impl Cassette {
    pub fn new(interactions: impl IntoIterator<Item = Interaction>) -> Self {
        let mut queues: HashMap<(Method, String), Queue> = HashMap::new();
        for i in interactions {
            queues
                .entry((i.method, i.path.clone()))
                .or_default()
                .1
                .push(i);
        }
        Cassette {
            queues: Mutex::new(queues),
            log: Mutex::default(),
        }
    }

    pub fn load(path: &Path) -> Result<Self, crate::jsonl::JsonlError> {
        Ok(Self::new(crate::jsonl::read::<Interaction>(path)?))
    }

    /// Requests seen so far, in arrival order.
    pub fn requests(&self) -> Vec<HttpRequest> {
        self.log.lock().unwrap().clone()
    }
}

pub(crate) fn path_of(url: &str) -> &str {
    let rest = url.split_once("://").map_or(url, |(_, r)| r);
    rest.find('/').map_or("/", |i| &rest[i..])
}

impl HttpTransport for Cassette {
    fn send(&self, req: &HttpRequest) -> Result<HttpResponse, TransportError> {
        self.log.lock().unwrap().push(req.clone());
        let key = (req.method, path_of(&req.url).to_owned());
        let mut queues = self.queues.lock().unwrap();
        let Some((cursor, recorded)) = queues.get_mut(&key) else {
            return Ok(HttpResponse::new(404, r#"{"message":"Not Found"}"#));
        };
        let i = (*cursor).min(recorded.len() - 1);
        *cursor += 1;
        let rec = &recorded[i];
        if let Some(e) = &rec.transport_error {
            return Err(TransportError(e.clone()));
        }
        let body = match &rec.body {
            serde_json::Value::String(s) => s.clone(),
            serde_json::Value::Null => String::new(),
            other => other.to_string(),
        };
        Ok(HttpResponse {
            status: rec.status,
            headers: rec
                .headers
                .iter()
                .map(|(k, v)| (k.clone(), v.clone()))
                .collect(),
            body,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(path: &str, status: u16) -> Interaction {
        Interaction {
            method: Method::Get,
            path: path.into(),
            status,
            headers: HashMap::new(),
            body: serde_json::json!({"status": status}),
            transport_error: None,
        }
    }

    #[test]
    fn replays_in_order_then_repeats_last() {
        let c = Cassette::new([rec("/a", 429), rec("/a", 200)]);
        let get = || c.send(&HttpRequest::get("http://h/a")).unwrap().status;
        assert_eq!([get(), get(), get()], [429, 200, 200]);
        assert_eq!(c.requests().len(), 3);
    }

    #[test]
    fn unknown_path_is_404() {
        let c = Cassette::default();
        assert_eq!(
            c.send(&HttpRequest::get("https://x/y?z=1")).unwrap().status,
            404
        );
    }

    #[test]
    fn url_paths_keep_query() {
        assert_eq!(
            path_of("https://api.github.com/repos/a/b?x=1"),
            "/repos/a/b?x=1"
        );
        assert_eq!(path_of("http://localhost:8080"), "/");
    }
}
