//! Alert forwarding: a JSON Lines file or a webhook.

use std::fs::OpenOptions;
use std::io::Write;
use std::path::PathBuf;
use std::sync::Mutex;

use serde::Serialize;

use crate::config::SinkConfig;
use crate::error::{Error, Result};
use crate::service::{AlertRecord, AlertStatus};

/// What the sink receives: new alerts from an inference run, and verdicts
/// as analysts close alerts.
#[derive(Clone, Debug, Serialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum SinkEvent<'a> {
    Alerts { batch_id: &'a str, alerts: &'a [AlertRecord] },
    Verdict { alert_id: &'a str, status: AlertStatus, analyst: &'a str },
}

pub trait AlertSink: Send + Sync {
    fn send(&self, event: &SinkEvent<'_>) -> Result<()>;
}

/// One JSON object per event, appended.
pub struct FileSink {
    path: PathBuf,
    lock: Mutex<()>,
}

impl FileSink {
    pub fn new(path: impl Into<PathBuf>) -> Self {
        Self {
            path: path.into(),
            lock: Mutex::new(()),
        }
    }
}

impl AlertSink for FileSink {
    fn send(&self, event: &SinkEvent<'_>) -> Result<()> {
        let mut line = serde_json::to_vec(event).map_err(Error::json("sink event"))?;
        line.push(b'\n');
        let _guard = self.lock.lock().expect("sink lock");
        if let Some(dir) = self.path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).map_err(Error::io(dir))?;
        }
        let mut f = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&self.path)
            .map_err(Error::io(&self.path))?;
        f.write_all(&line).map_err(Error::io(&self.path))
    }
}

/// POSTs each event as JSON. Non-2xx answers are errors.
pub struct WebhookSink {
    url: String,
    agent: ureq::Agent,
}

impl WebhookSink {
    pub fn new(url: impl Into<String>) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(std::time::Duration::from_secs(10)))
            .build()
            .into();
        Self { url: url.into(), agent }
    }
}

impl AlertSink for WebhookSink {
    fn send(&self, event: &SinkEvent<'_>) -> Result<()> {
        self.agent
            .post(&self.url)
            .send_json(event)
            .map(drop)
            .map_err(|e| Error::Sink(format!("POST {}: {e}", self.url)))
    }
}

pub fn from_config(config: &SinkConfig) -> Option<Box<dyn AlertSink>> {
    match config {
        SinkConfig::None => None,
        SinkConfig::File { path } => Some(Box::new(FileSink::new(path.clone()))),
        SinkConfig::Webhook { url } => Some(Box::new(WebhookSink::new(url.clone()))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn file_sink_appends_lines() {
        let dir = tempfile::tempdir().unwrap();
        let sink = FileSink::new(dir.path().join("out/alerts.jsonl"));
        for _ in 0..2 {
            sink.send(&SinkEvent::Verdict {
                alert_id: "a-1",
                status: AlertStatus::Confirmed,
                analyst: "kim",
            })
            .unwrap();
        }
        let text = std::fs::read_to_string(dir.path().join("out/alerts.jsonl")).unwrap();
        let lines: Vec<serde_json::Value> = text.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
        assert_eq!(lines.len(), 2);
        assert_eq!(lines[0]["event"], "verdict");
        assert_eq!(lines[0]["status"], "confirmed");
    }

    #[test]
    fn unreachable_webhook_is_an_error() {
        let sink = WebhookSink::new("http://127.0.0.1:9/hook");
        let err = sink
            .send(&SinkEvent::Alerts {
                batch_id: "b",
                alerts: &[],
            })
            .unwrap_err();
        assert!(matches!(err, Error::Sink(_)));
    }
}
