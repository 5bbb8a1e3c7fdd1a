use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::drain::{TemplateId, WILDCARD};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Label {
    Normal,
    Anomaly,
}

impl Label {
    /// 0 for normal, 1 for anomaly.
    pub fn class(self) -> u8 {
        match self {
            Label::Normal => 0,
            Label::Anomaly => 1,
        }
    }

    pub fn from_class(class: u8) -> Option<Self> {
        match class {
            0 => Some(Label::Normal),
            1 => Some(Label::Anomaly),
            _ => None,
        }
    }
}

/// One structured log record.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParsedEvent {
    pub line_id: u64,
    pub datetime: Option<String>,
    pub context: Option<String>,
    pub level: Option<String>,
    pub record_id: Option<String>,
    pub event_id: TemplateId,
    pub event_template: String,
    pub parameter_list: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<Label>,
    /// Set when the header profile did not match and header fields are empty.
    #[serde(default, skip_serializing_if = "core::ops::Not::not")]
    pub header_warning: bool,
}

impl ParsedEvent {
    pub fn wildcard_count(&self) -> usize {
        self.event_template.split(' ').filter(|t| *t == WILDCARD).count()
    }
}
