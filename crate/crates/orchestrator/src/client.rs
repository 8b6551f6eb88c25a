//! Blocking client for a running `chainbox serve`.

use std::path::{Path, PathBuf};

use chainbox_core::ExperimentConfig;
use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::api::{CreateRun, ExportRequest, ExportResponse};
use crate::registry::RunSummary;
use crate::snapshot::StatusSnapshot;

#[derive(Debug, thiserror::Error)]
pub enum ClientError {
    #[error(transparent)]
    Http(#[from] reqwest::Error),
    #[error("server returned {status}: {message}")]
    Api { status: u16, message: String },
}

pub struct Client {
    base: String,
    http: reqwest::blocking::Client,
}

impl Client {
    /// `base` is e.g. `http://127.0.0.1:7070`.
    pub fn new(base: impl Into<String>) -> Self {
        Client { base: base.into().trim_end_matches('/').to_string(), http: reqwest::blocking::Client::new() }
    }

    fn decode<T: DeserializeOwned>(resp: reqwest::blocking::Response) -> Result<T, ClientError> {
        let status = resp.status();
        if status.is_success() {
            return Ok(resp.json()?);
        }
        let body: serde_json::Value = resp.json().unwrap_or_default();
        let message = body.get("error").and_then(|e| e.as_str()).unwrap_or("").to_string();
        Err(ClientError::Api { status: status.as_u16(), message })
    }

    fn post<B: Serialize, T: DeserializeOwned>(&self, path: &str, body: &B) -> Result<T, ClientError> {
        Self::decode(self.http.post(format!("{}{path}", self.base)).json(body).send()?)
    }

    fn get<T: DeserializeOwned>(&self, path: &str) -> Result<T, ClientError> {
        Self::decode(self.http.get(format!("{}{path}", self.base)).send()?)
    }

    pub fn create_run(&self, config: ExperimentConfig, start: bool) -> Result<RunSummary, ClientError> {
        self.post("/runs", &CreateRun { config, pace: None, start })
    }

    pub fn summary(&self, id: &str) -> Result<RunSummary, ClientError> {
        self.get(&format!("/runs/{id}"))
    }

    pub fn status(&self, id: &str) -> Result<StatusSnapshot, ClientError> {
        self.get(&format!("/runs/{id}/status"))
    }

    pub fn stop(&self, id: &str) -> Result<RunSummary, ClientError> {
        self.post(&format!("/runs/{id}/stop"), &serde_json::json!({}))
    }

    /// Asks the server to write run `id`'s archive into `directory` (a path
    /// on the server's filesystem).
    pub fn export(&self, id: &str, directory: &Path) -> Result<Vec<PathBuf>, ClientError> {
        let resp: ExportResponse =
            self.post(&format!("/runs/{id}/export"), &ExportRequest { directory: directory.to_path_buf() })?;
        Ok(resp.files)
    }
}
