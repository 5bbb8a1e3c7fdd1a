//! Named header profiles: how to split a raw line into header fields and the
//! message body, plus the masking rules applied to the body.

use logfuse_core::preprocess::Preprocessor;
use logfuse_core::Label;
use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Masking rules shared by the shipped profiles. Rules run per token, in
/// order.
pub const DEFAULT_RULES: &[&str] = &[
    r"blk_-?\d+",
    r"/?(\d{1,3}\.){3}\d{1,3}(:\d+)?",
    r"^0x[0-9a-fA-F]+$",
    r"^-?\d+(\.\d+)?$",
];

/// Serializable description of a profile.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProfileSpec {
    pub name: String,
    /// Regex with named groups. `message` is required; `datetime`, `context`,
    /// `level`, `record_id` and `label` are picked up when present. An empty
    /// header means the whole line is the message.
    #[serde(default)]
    pub header: String,
    /// Searched in the message when the header has no `record_id` group.
    #[serde(default)]
    pub record_pattern: Option<String>,
    #[serde(default = "default_rules")]
    pub rules: Vec<String>,
    /// Value of the `label` group that means normal; anything else is an
    /// anomaly.
    #[serde(default)]
    pub normal_label: Option<String>,
}

fn default_rules() -> Vec<String> {
    DEFAULT_RULES.iter().map(|s| s.to_string()).collect()
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Header {
    pub datetime: Option<String>,
    pub context: Option<String>,
    pub level: Option<String>,
    pub record_id: Option<String>,
    pub label: Option<Label>,
}

#[derive(Clone, Debug)]
pub struct HeaderProfile {
    spec: ProfileSpec,
    header: Option<Regex>,
    record: Option<Regex>,
    preprocessor: Preprocessor,
}

impl HeaderProfile {
    pub fn new(spec: ProfileSpec) -> Result<Self> {
        let invalid = |reason: String| Error::Profile {
            name: spec.name.clone(),
            reason,
        };
        let header = if spec.header.is_empty() {
            None
        } else {
            let re = Regex::new(&spec.header).map_err(|e| invalid(e.to_string()))?;
            if !re.capture_names().any(|n| n == Some("message")) {
                return Err(invalid("header pattern needs a `message` group".into()));
            }
            Some(re)
        };
        let record = spec
            .record_pattern
            .as_deref()
            .map(Regex::new)
            .transpose()
            .map_err(|e| invalid(e.to_string()))?;
        let preprocessor = Preprocessor::from_sources(&spec.rules)?;
        Ok(Self {
            spec,
            header,
            record,
            preprocessor,
        })
    }

    /// `hdfs`, `bgl` or `raw`.
    pub fn builtin(name: &str) -> Result<Self> {
        let spec = match name {
            "hdfs" => ProfileSpec {
                name: "hdfs".into(),
                header: r"^(?P<datetime>\d{6} \d{6}) (?P<pid>\d+) (?P<level>[A-Z]+) (?P<context>[^:\s]+): (?P<message>.*)$".into(),
                record_pattern: Some(r"blk_-?\d+".into()),
                rules: default_rules(),
                normal_label: None,
            },
            "bgl" => ProfileSpec {
                name: "bgl".into(),
                header: r"^(?P<label>\S+) (?P<epoch>\d+) (?P<date>\S+) (?P<node>\S+) (?P<datetime>\S+) (?P<record_id>\S+) (?P<kind>\S+) (?P<context>\S+) (?P<level>\S+) (?P<message>.*)$".into(),
                record_pattern: None,
                rules: default_rules(),
                normal_label: Some("-".into()),
            },
            "raw" => ProfileSpec {
                name: "raw".into(),
                header: String::new(),
                record_pattern: None,
                rules: default_rules(),
                normal_label: None,
            },
            other => return Err(Error::UnknownProfile(other.into())),
        };
        Self::new(spec)
    }

    pub fn name(&self) -> &str {
        &self.spec.name
    }

    pub fn spec(&self) -> &ProfileSpec {
        &self.spec
    }

    pub fn preprocessor(&self) -> &Preprocessor {
        &self.preprocessor
    }

    /// Splits a line into header fields and message. `None` when the line
    /// does not fit the header pattern.
    pub fn split<'a>(&self, text: &'a str) -> Option<(Header, &'a str)> {
        let Some(re) = &self.header else {
            return Some((Header::default(), text));
        };
        let caps = re.captures(text)?;
        let field = |name: &str| caps.name(name).map(|m| m.as_str().to_string());
        let message = caps.name("message").map_or("", |m| m.as_str());
        let record_id = field("record_id").or_else(|| self.record_in(message));
        let label = caps.name("label").and_then(|m| {
            self.spec.normal_label.as_deref().map(|normal| {
                if m.as_str() == normal {
                    Label::Normal
                } else {
                    Label::Anomaly
                }
            })
        });
        let header = Header {
            datetime: field("datetime"),
            context: field("context"),
            level: field("level"),
            record_id,
            label,
        };
        Some((header, message))
    }

    /// Record id found in a message body.
    pub fn record_in(&self, message: &str) -> Option<String> {
        self.record
            .as_ref()
            .and_then(|re| re.find(message))
            .map(|m| m.as_str().to_string())
    }
}
