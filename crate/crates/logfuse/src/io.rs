//! File formats: JSON Lines, the structured CSV export and model bundles.

use std::collections::HashMap;
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use logfuse_core::bundle::SCHEMA_VERSION;
use logfuse_core::fusion::compute_metrics;
use logfuse_core::{MetricReport, ModelBundle, ParsedEvent};
use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::parse::{Quarantined, RawLogLine};

/// Reads one JSON value per non-blank line.
pub fn read_jsonl<T: DeserializeOwned>(path: impl AsRef<Path>) -> Result<Vec<T>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(Error::io(path))?;
    let mut out = Vec::new();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(Error::io(path))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(Error::json(format!("{} line {}", path.display(), n + 1)))?);
    }
    Ok(out)
}

pub fn write_jsonl<T: Serialize>(path: impl AsRef<Path>, items: &[T]) -> Result<()> {
    let path = path.as_ref();
    atomic_write(path, |w| {
        for item in items {
            serde_json::to_writer(&mut *w, item).map_err(Error::json("serialize"))?;
            w.write_all(b"\n").map_err(Error::io(path))?;
        }
        Ok(())
    })
}

/// Writes through a temporary file in the same directory and renames it into
/// place, so readers never see a partial file.
pub fn atomic_write(path: &Path, body: impl FnOnce(&mut BufWriter<&mut File>) -> Result<()>) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    fs::create_dir_all(dir).map_err(Error::io(dir))?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(Error::io(dir))?;
    {
        let mut w = BufWriter::new(tmp.as_file_mut());
        body(&mut w)?;
        w.flush().map_err(Error::io(path))?;
    }
    tmp.as_file().sync_all().map_err(Error::io(path))?;
    tmp.persist(path).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e.error,
    })?;
    Ok(())
}

/// Splits JSON Lines input into records and quarantined lines. Lines without
/// a `line_id` get the next free id; blank lines are skipped.
pub fn parse_raw_lines(text: &str) -> (Vec<RawLogLine>, Vec<Quarantined>) {
    #[derive(serde::Deserialize)]
    struct Incoming {
        line_id: Option<u64>,
        #[serde(default)]
        source: String,
        text: String,
        #[serde(default)]
        received_at: Option<i64>,
        #[serde(default)]
        label: Option<logfuse_core::Label>,
    }

    let mut lines = Vec::new();
    let mut quarantine = Vec::new();
    let mut seen = std::collections::HashSet::new();
    let mut pending = Vec::new();
    for raw in text.lines().filter(|l| !l.trim().is_empty()) {
        match serde_json::from_str::<Incoming>(raw) {
            Ok(i) if i.text.trim().is_empty() => quarantine.push(Quarantined {
                line_id: i.line_id,
                text: raw.to_string(),
                reason: "text is empty".into(),
            }),
            Ok(i) if i.line_id == Some(0) => quarantine.push(Quarantined {
                line_id: None,
                text: raw.to_string(),
                reason: "line_id must be positive".into(),
            }),
            Ok(i) => {
                if let Some(id) = i.line_id {
                    if !seen.insert(id) {
                        quarantine.push(Quarantined {
                            line_id: Some(id),
                            text: raw.to_string(),
                            reason: format!("duplicate line_id {id}"),
                        });
                        continue;
                    }
                }
                pending.push(lines.len());
                lines.push(RawLogLine {
                    line_id: i.line_id.unwrap_or(0),
                    source: i.source,
                    text: i.text,
                    received_at: i.received_at,
                    label: i.label,
                });
            }
            Err(e) => quarantine.push(Quarantined {
                line_id: None,
                text: raw.to_string(),
                reason: format!("malformed JSON: {e}"),
            }),
        }
    }
    let mut next = seen.iter().max().copied().unwrap_or(0);
    for i in pending {
        if lines[i].line_id == 0 {
            next += 1;
            lines[i].line_id = next;
        }
    }
    (lines, quarantine)
}

pub const CSV_HEADER: [&str; 8] = [
    "LineId",
    "Datetime",
    "Context",
    "Level",
    "RecordId",
    "EventId",
    "EventTemplate",
    "ParameterList",
];

/// Structured export, one row per event. `ParameterList` is a JSON array.
pub fn write_events_csv<W: Write>(out: W, events: &[ParsedEvent]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(CSV_HEADER)?;
    for e in events {
        let params = serde_json::to_string(&e.parameter_list).map_err(Error::json("parameter list"))?;
        w.write_record([
            e.line_id.to_string().as_str(),
            e.datetime.as_deref().unwrap_or(""),
            e.context.as_deref().unwrap_or(""),
            e.level.as_deref().unwrap_or(""),
            e.record_id.as_deref().unwrap_or(""),
            e.event_id.to_string().as_str(),
            e.event_template.as_str(),
            params.as_str(),
        ])?;
    }
    w.flush().map_err(Error::io("csv output"))?;
    Ok(())
}

/// Refuses bundles that fail validation, which includes a missing anchor.
pub fn save_bundle(bundle: &ModelBundle, path: impl AsRef<Path>) -> Result<()> {
    bundle.validate()?;
    let path = path.as_ref();
    atomic_write(path, |w| serde_json::to_writer(w, bundle).map_err(Error::json("model bundle")))
}

pub fn load_bundle(path: impl AsRef<Path>) -> Result<ModelBundle> {
    let path = path.as_ref();
    let mut text = String::new();
    File::open(path)
        .and_then(|mut f| f.read_to_string(&mut text))
        .map_err(Error::io(path))?;
    // look at the schema version before committing to the full layout
    #[derive(serde::Deserialize)]
    struct Header {
        schema_version: u32,
    }
    let header: Header = serde_json::from_str(&text).map_err(Error::json(format!("bundle {}", path.display())))?;
    if header.schema_version != SCHEMA_VERSION {
        return Err(Error::SchemaVersion {
            found: header.schema_version,
            expected: SCHEMA_VERSION,
        });
    }
    let bundle: ModelBundle = serde_json::from_str(&text).map_err(Error::json(format!("bundle {}", path.display())))?;
    bundle.validate()?;
    Ok(bundle)
}

#[derive(serde::Deserialize)]
#[serde(untagged)]
enum LabelValue {
    Class(u8),
    Named(logfuse_core::Label),
}

impl LabelValue {
    fn class(&self) -> Result<u8> {
        match self {
            LabelValue::Class(c @ (0 | 1)) => Ok(*c),
            LabelValue::Class(c) => Err(Error::BadRequest(format!("label {c} is not 0 or 1"))),
            LabelValue::Named(l) => Ok(l.class()),
        }
    }
}

#[derive(serde::Deserialize)]
struct PredictionRow {
    line_id: Option<u64>,
    y_hat: u8,
}

#[derive(serde::Deserialize)]
struct LabelRow {
    line_id: Option<u64>,
    label: Option<LabelValue>,
}

/// Metrics of a prediction file against a label file, both JSON Lines.
/// Rows join on `line_id` when every prediction has one, by position
/// otherwise. Label rows may be parsed events; unlabeled rows are skipped
/// when joining by id.
pub fn evaluate_files(pred: impl AsRef<Path>, labels: impl AsRef<Path>) -> Result<MetricReport> {
    let pred: Vec<PredictionRow> = read_jsonl(pred)?;
    let labels: Vec<LabelRow> = read_jsonl(labels)?;
    let y_hat = pred.iter().map(|p| p.y_hat).collect::<Vec<_>>();
    let truth = if pred.iter().all(|p| p.line_id.is_some()) {
        let by_id: HashMap<u64, &LabelValue> = labels.iter().filter_map(|l| Some((l.line_id?, l.label.as_ref()?))).collect();
        pred.iter()
            .map(|p| {
                let id = p.line_id.unwrap_or_default();
                by_id.get(&id).ok_or_else(|| Error::BadRequest(format!("no label for line {id}")))?.class()
            })
            .collect::<Result<Vec<u8>>>()?
    } else {
        if labels.len() != pred.len() {
            return Err(Error::BadRequest(format!("{} predictions but {} labels", pred.len(), labels.len())));
        }
        labels
            .iter()
            .enumerate()
            .map(|(i, l)| l.label.as_ref().ok_or_else(|| Error::BadRequest(format!("label row {} has no label", i + 1)))?.class())
            .collect::<Result<Vec<u8>>>()?
    };
    Ok(compute_metrics(&y_hat, &truth)?)
}
