//! Raw lines to structured events, sequentially or partition-parallel.

use logfuse_core::drain::extract_parameters;
use logfuse_core::preprocess::Tokenized;
use logfuse_core::{DrainConfig, Label, ParsedEvent, TemplateId, TemplateTree};
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::orchestrator::map_partitions;
use crate::profile::HeaderProfile;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RawLogLine {
    pub line_id: u64,
    #[serde(default)]
    pub source: String,
    pub text: String,
    /// Milliseconds since the epoch.
    #[serde(default)]
    pub received_at: Option<i64>,
    /// Ground truth, when known. Overrides a label found in the header.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<Label>,
}

impl RawLogLine {
    pub fn new(line_id: u64, text: impl Into<String>) -> Self {
        Self {
            line_id,
            source: String::new(),
            text: text.into(),
            received_at: None,
            label: None,
        }
    }
}

/// A line that could not be parsed, kept with the reason.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Quarantined {
    pub line_id: Option<u64>,
    pub text: String,
    pub reason: String,
}

#[derive(Clone, Debug)]
pub struct ParseOutput {
    pub events: Vec<ParsedEvent>,
    pub tree: TemplateTree,
    pub quarantine: Vec<Quarantined>,
}

/// Header-split and masked line, ready for the template tree.
struct Prepared {
    line_id: u64,
    header: crate::profile::Header,
    header_warning: bool,
    tokens: Tokenized,
    label: Option<Label>,
}

fn prepare(line: &RawLogLine, profile: &HeaderProfile) -> std::result::Result<Prepared, Quarantined> {
    let (header, message, header_warning) = match profile.split(&line.text) {
        Some((h, m)) => (h, m, false),
        None => {
            let header = crate::profile::Header {
                record_id: profile.record_in(&line.text),
                ..Default::default()
            };
            (header, line.text.as_str(), true)
        }
    };
    let tokens = profile.preprocessor().tokenize(message).map_err(|e| Quarantined {
        line_id: Some(line.line_id),
        text: line.text.clone(),
        reason: e.to_string(),
    })?;
    let label = line.label.or(header.label);
    Ok(Prepared {
        line_id: line.line_id,
        header,
        header_warning,
        tokens,
        label,
    })
}

fn event(p: Prepared, event_id: TemplateId, tree: &TemplateTree) -> ParsedEvent {
    let template = &tree.template(event_id).expect("id issued by this tree").tokens;
    ParsedEvent {
        line_id: p.line_id,
        datetime: p.header.datetime,
        context: p.header.context,
        level: p.header.level,
        record_id: p.header.record_id,
        event_id,
        event_template: template.join(" "),
        parameter_list: extract_parameters(template, &p.tokens.raw),
        label: p.label,
        header_warning: p.header_warning,
    }
}

/// Mines one line into `tree`. The event carries the template as it stands
/// after this line was absorbed.
pub fn parse_line(tree: &mut TemplateTree, line: &RawLogLine, profile: &HeaderProfile) -> std::result::Result<ParsedEvent, Quarantined> {
    let prepared = prepare(line, profile)?;
    let (id, _) = tree.insert_or_match(&prepared.tokens.masked).map_err(|e| Quarantined {
        line_id: Some(line.line_id),
        text: line.text.clone(),
        reason: e.to_string(),
    })?;
    Ok(event(prepared, id, tree))
}

/// Matches one line against a frozen tree without learning from it. Lines
/// no template accepts get `None`.
pub fn match_line(tree: &TemplateTree, line: &RawLogLine, profile: &HeaderProfile) -> std::result::Result<Option<ParsedEvent>, Quarantined> {
    let prepared = prepare(line, profile)?;
    Ok(tree
        .lookup(&prepared.tokens.masked)
        .template_id
        .map(|id| event(prepared, id, tree)))
}

struct Mined {
    prepared: Vec<Prepared>,
    local_ids: Vec<TemplateId>,
    tree: TemplateTree,
    quarantine: Vec<Quarantined>,
}

fn mine(lines: &[RawLogLine], profile: &HeaderProfile, base: &TemplateTree) -> Result<Mined> {
    let mut tree = base.clone();
    let mut prepared = Vec::with_capacity(lines.len());
    let mut local_ids = Vec::with_capacity(lines.len());
    let mut quarantine = Vec::new();
    for line in lines {
        match prepare(line, profile) {
            Ok(p) => {
                let (id, _) = tree.insert_or_match(&p.tokens.masked)?;
                local_ids.push(id);
                prepared.push(p);
            }
            Err(q) => quarantine.push(q),
        }
    }
    Ok(Mined {
        prepared,
        local_ids,
        tree,
        quarantine,
    })
}

/// Parses a batch in `partitions` contiguous slices mined in parallel. The
/// partition trees are folded into the first one by re-inserting their
/// templates, then every event is labeled against the merged tree. Templates
/// and parameters are read from the final tree, so each event reflects the
/// whole batch. Output order equals input order.
pub fn parse_batch(lines: &[RawLogLine], partitions: usize, profile: &HeaderProfile, config: &DrainConfig) -> Result<ParseOutput> {
    parse_batch_from(&TemplateTree::new(config.clone())?, lines, partitions, profile)
}

/// [`parse_batch`] continuing from an existing tree, which is not modified.
/// Inference uses this with the trained tree so known templates keep their
/// ids and unseen messages get fresh ones.
pub fn parse_batch_from(base: &TemplateTree, lines: &[RawLogLine], partitions: usize, profile: &HeaderProfile) -> Result<ParseOutput> {
    let mined = map_partitions(lines, partitions, |_, part| mine(part, profile, base).map(|m| vec![m]))?;

    let mut parts = mined.into_iter();
    let Some(first) = parts.next() else {
        return Ok(ParseOutput {
            events: Vec::new(),
            tree: base.clone(),
            quarantine: Vec::new(),
        });
    };
    let mut tree = first.tree;
    let mut assigned: Vec<(Prepared, TemplateId)> = first.prepared.into_iter().zip(first.local_ids).collect();
    let mut quarantine = first.quarantine;
    for part in parts {
        let landing = tree.merge_from(&part.tree);
        assigned.extend(
            part.prepared
                .into_iter()
                .zip(part.local_ids)
                .map(|(p, local)| (p, landing[local.0 as usize - 1])),
        );
        quarantine.extend(part.quarantine);
    }
    let events = assigned.into_iter().map(|(p, id)| event(p, id, &tree)).collect();
    Ok(ParseOutput { events, tree, quarantine })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lines(texts: &[&str]) -> Vec<RawLogLine> {
        texts
            .iter()
            .enumerate()
            .map(|(i, t)| RawLogLine::new(i as u64 + 1, *t))
            .collect()
    }

    #[test]
    fn receiving_block_example() {
        let p = HeaderProfile::builtin("hdfs").unwrap();
        let mut tree = TemplateTree::new(DrainConfig::default()).unwrap();
        let line = RawLogLine::new(1, "081109 203518 143 INFO dfs.DataNode$DataXceiver: Receiving block blk_-5627 src: /10.0.0.1:5000");
        let e = parse_line(&mut tree, &line, &p).unwrap();
        assert_eq!(e.event_template, "Receiving block <*> src: <*>");
        assert_eq!(e.parameter_list, ["blk_-5627", "/10.0.0.1:5000"]);
        assert_eq!(e.record_id.as_deref(), Some("blk_-5627"));
        assert!(!e.header_warning);
    }

    #[test]
    fn header_only_line_is_rejected() {
        let p = HeaderProfile::builtin("hdfs").unwrap();
        let mut tree = TemplateTree::new(DrainConfig::default()).unwrap();
        let q = parse_line(&mut tree, &RawLogLine::new(4, "081109 203518 143 INFO dfs.DataNode: "), &p).unwrap_err();
        assert_eq!(q.line_id, Some(4));
        assert!(tree.is_empty());
    }

    #[test]
    fn header_mismatch_still_mined() {
        let p = HeaderProfile::builtin("hdfs").unwrap();
        let mut tree = TemplateTree::new(DrainConfig::default()).unwrap();
        let e = parse_line(&mut tree, &RawLogLine::new(1, "no header here"), &p).unwrap();
        assert!(e.header_warning);
        assert_eq!(e.level, None);
        assert_eq!(e.event_template, "no header here");
    }

    #[test]
    fn identical_lines_share_event_id() {
        let p = HeaderProfile::builtin("raw").unwrap();
        let out = parse_batch(&lines(&["disk full on a", "disk full on a"]), 1, &p, &DrainConfig::default()).unwrap();
        assert_eq!(out.events[0].event_id, out.events[1].event_id);
    }

    #[test]
    fn empty_batch() {
        let p = HeaderProfile::builtin("raw").unwrap();
        for n in [1, 3] {
            let out = parse_batch(&[], n, &p, &DrainConfig::default()).unwrap();
            assert!(out.events.is_empty() && out.tree.is_empty() && out.quarantine.is_empty());
        }
    }

    #[test]
    fn quarantine_collects_bad_lines_in_every_partition() {
        let p = HeaderProfile::builtin("raw").unwrap();
        let out = parse_batch(&lines(&["a b c", "   ", "a b d", " "]), 2, &p, &DrainConfig::default()).unwrap();
        assert_eq!(out.events.len(), 2);
        let ids: Vec<_> = out.quarantine.iter().map(|q| q.line_id).collect();
        assert_eq!(ids, [Some(2), Some(4)]);
    }

    #[test]
    fn final_templates_reflect_whole_batch() {
        let p = HeaderProfile::builtin("raw").unwrap();
        let out = parse_batch(&lines(&["open file A", "open file B"]), 1, &p, &DrainConfig::default()).unwrap();
        assert_eq!(out.events[0].event_template, "open file <*>");
        assert_eq!(out.events[0].parameter_list, ["A"]);
    }

    #[test]
    fn frozen_match() {
        let p = HeaderProfile::builtin("raw").unwrap();
        let out = parse_batch(&lines(&["open file A", "open file B"]), 1, &p, &DrainConfig::default()).unwrap();
        let hit = match_line(&out.tree, &RawLogLine::new(9, "open file C"), &p).unwrap().unwrap();
        assert_eq!(hit.parameter_list, ["C"]);
        assert!(match_line(&out.tree, &RawLogLine::new(9, "totally new"), &p).unwrap().is_none());
    }
}
