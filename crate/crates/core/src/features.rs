//! Column importance, column selection, ordinal encoding and the per-event
//! feature bundle (dense vector for the MLP, star graph for the GCN).

use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;

use serde::{Deserialize, Serialize};

use crate::embed::TokenEmbedder;
use crate::error::{Error, Result};
use crate::event::ParsedEvent;
use crate::forest::{ForestConfig, RandomForest};
use crate::graph::EventGraph;
use crate::preprocess::Pattern;

/// Attributes of a parsed event that take part in learning. The timestamp
/// and the record id are identifiers, not signals, and are left out.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum Column {
    EventId,
    Context,
    Level,
    ParameterList,
}

impl Column {
    pub const ALL: [Column; 4] = [Column::EventId, Column::Context, Column::Level, Column::ParameterList];

    pub fn name(self) -> &'static str {
        match self {
            Column::EventId => "EventId",
            Column::Context => "Context",
            Column::Level => "Level",
            Column::ParameterList => "ParameterList",
        }
    }

    pub fn from_name(name: &str) -> Result<Self> {
        Column::ALL
            .into_iter()
            .find(|c| c.name() == name)
            .ok_or_else(|| Error::Schema(alloc::format!("unknown column `{name}`")))
    }

    /// Categorical value of this column; the parameter list is joined with
    /// single spaces.
    pub fn value(self, event: &ParsedEvent) -> String {
        match self {
            Column::EventId => event.event_id.to_string(),
            Column::Context => event.context.clone().unwrap_or_default(),
            Column::Level => event.level.clone().unwrap_or_default(),
            Column::ParameterList => event.parameter_list.join(" "),
        }
    }
}

impl fmt::Display for Column {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl TryFrom<String> for Column {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        Column::from_name(&s)
    }
}

impl From<Column> for String {
    fn from(c: Column) -> String {
        c.name().to_string()
    }
}

/// Code reserved for categories not seen while fitting.
pub const UNKNOWN_CODE: u32 = 0;

/// Category → code map. Codes follow the sorted order of the training
/// categories starting at 1, so they do not depend on row order.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct OrdinalEncoder {
    codes: BTreeMap<String, u32>,
}

impl OrdinalEncoder {
    pub fn fit<I, S>(values: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let sorted: alloc::collections::BTreeSet<String> = values.into_iter().map(Into::into).collect();
        let codes = sorted.into_iter().zip(1u32..).collect();
        Self { codes }
    }

    pub fn encode(&self, value: &str) -> u32 {
        self.codes.get(value).copied().unwrap_or(UNKNOWN_CODE)
    }

    pub fn len(&self) -> usize {
        self.codes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.codes.is_empty()
    }
}

/// Normalized importance per column; sums to one.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImportanceMap {
    pub scores: BTreeMap<Column, f64>,
}

impl ImportanceMap {
    pub fn get(&self, column: Column) -> f64 {
        self.scores.get(&column).copied().unwrap_or(0.0)
    }
}

/// Trains a random forest on the labeled events (every column ordinal
/// encoded) and reports its mean-decrease-in-entropy importances.
///
/// Rows are put in a canonical order before training, so the result does not
/// depend on the order of `events`.
pub fn train_importance(events: &[ParsedEvent], config: &ForestConfig) -> Result<ImportanceMap> {
    let labeled: Vec<&ParsedEvent> = events.iter().filter(|e| e.label.is_some()).collect();
    let classes: alloc::collections::BTreeSet<_> = labeled.iter().filter_map(|e| e.label).collect();
    if classes.len() < 2 {
        return Err(Error::ImportanceUndefined("training data needs both classes".into()));
    }
    let encoders: Vec<OrdinalEncoder> = Column::ALL
        .iter()
        .map(|c| OrdinalEncoder::fit(labeled.iter().map(|e| c.value(e))))
        .collect();
    let mut table: Vec<(Vec<f64>, u8)> = labeled
        .iter()
        .map(|e| {
            let row = Column::ALL
                .iter()
                .zip(&encoders)
                .map(|(c, enc)| enc.encode(&c.value(e)) as f64)
                .collect();
            (row, e.label.map_or(0, |l| l.class()))
        })
        .collect();
    table.sort_by(|a, b| {
        a.0.iter()
            .zip(&b.0)
            .map(|(x, y)| x.total_cmp(y))
            .find(|o| o.is_ne())
            .unwrap_or(core::cmp::Ordering::Equal)
            .then(a.1.cmp(&b.1))
    });
    let (rows, labels): (Vec<Vec<f64>>, Vec<u8>) = table.into_iter().unzip();
    let fitted = RandomForest::fit(&rows, &labels, config)?;
    Ok(ImportanceMap {
        scores: Column::ALL.into_iter().zip(fitted.importances).collect(),
    })
}

/// Columns whose importance is strictly above `threshold`, in column order.
pub fn select_columns(importance: &ImportanceMap, threshold: f64) -> Result<Vec<Column>> {
    if !(0.0..1.0).contains(&threshold) {
        return Err(Error::Config(alloc::format!("threshold {threshold} outside [0, 1)")));
    }
    let selected: Vec<Column> = importance
        .scores
        .iter()
        .filter(|(_, &v)| v > threshold)
        .map(|(&c, _)| c)
        .collect();
    if selected.is_empty() {
        return Err(Error::ThresholdTooHigh(threshold));
    }
    Ok(selected)
}

/// Importances of the selected columns, used to weight the two models when
/// fusing their outputs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeightDictionary {
    pub threshold: f64,
    pub weights: BTreeMap<Column, f64>,
}

impl WeightDictionary {
    pub fn build(importance: &ImportanceMap, threshold: f64) -> Result<Self> {
        let columns = select_columns(importance, threshold)?;
        Ok(Self {
            threshold,
            weights: columns.into_iter().map(|c| (c, importance.get(c))).collect(),
        })
    }

    pub fn columns(&self) -> impl Iterator<Item = Column> + '_ {
        self.weights.keys().copied()
    }
}

/// Frozen ordinal encoders for the dense (non-parameter) columns.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureEncoder {
    columns: Vec<Column>,
    encoders: BTreeMap<Column, OrdinalEncoder>,
}

impl FeatureEncoder {
    /// Fits encoders for `columns` minus the parameter list.
    pub fn fit(events: &[ParsedEvent], columns: &[Column]) -> Self {
        let columns: Vec<Column> = columns
            .iter()
            .copied()
            .filter(|c| *c != Column::ParameterList)
            .collect();
        let encoders = columns
            .iter()
            .map(|&c| (c, OrdinalEncoder::fit(events.iter().map(|e| c.value(e)))))
            .collect();
        Self { columns, encoders }
    }

    pub fn columns(&self) -> &[Column] {
        &self.columns
    }

    pub fn x_dim(&self) -> usize {
        self.columns.len()
    }

    pub fn encoder(&self, column: Column) -> Option<&OrdinalEncoder> {
        self.encoders.get(&column)
    }

    pub fn encode(&self, event: &ParsedEvent) -> Result<Vec<f64>> {
        self.columns
            .iter()
            .map(|c| {
                self.encoders
                    .get(c)
                    .map(|enc| enc.encode(&c.value(event)) as f64)
                    .ok_or_else(|| Error::Schema(alloc::format!("no fitted encoder for column {c}")))
            })
            .collect()
    }
}

/// One row per event, in input order.
pub fn build_feature_matrix(events: &[ParsedEvent], encoder: &FeatureEncoder) -> Result<Vec<Vec<f64>>> {
    events.iter().map(|e| encoder.encode(e)).collect()
}

/// Reduces parameters before they become graph leaves: values matching a
/// drop pattern (block ids and the like) are removed, paths keep only their
/// last `path_levels` segments.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamNormalizer {
    drop_patterns: Vec<Pattern>,
    path_levels: usize,
}

impl Default for ParamNormalizer {
    fn default() -> Self {
        Self {
            drop_patterns: alloc::vec![Pattern::anchored(r"blk_-?\d+").expect("static pattern")],
            path_levels: 2,
        }
    }
}

impl ParamNormalizer {
    pub fn new<S: AsRef<str>>(drop_patterns: &[S], path_levels: usize) -> Result<Self> {
        let drop_patterns = drop_patterns
            .iter()
            .map(|p| Pattern::anchored(p.as_ref()))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            drop_patterns,
            path_levels: path_levels.max(1),
        })
    }

    pub fn normalize(&self, param: &str) -> Option<String> {
        if self.drop_patterns.iter().any(|p| p.is_match(param)) {
            return None;
        }
        if param.contains('/') {
            let segments: Vec<&str> = param.split('/').filter(|s| !s.is_empty()).collect();
            if segments.is_empty() {
                return None;
            }
            let keep = segments.len().saturating_sub(self.path_levels);
            return Some(segments[keep..].join("/"));
        }
        Some(param.to_string())
    }
}

/// Per-record model inputs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureBundle {
    pub x: Vec<f64>,
    pub graph: EventGraph,
    /// 0 normal, 1 anomaly.
    pub label: Option<u8>,
}

/// Everything needed to turn a parsed event into a [`FeatureBundle`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Featurizer {
    pub encoder: FeatureEncoder,
    pub normalizer: ParamNormalizer,
    pub embedder: TokenEmbedder,
}

impl Featurizer {
    pub fn graph(&self, event: &ParsedEvent) -> EventGraph {
        let leaves: Vec<String> = event
            .parameter_list
            .iter()
            .filter_map(|p| self.normalizer.normalize(p))
            .collect();
        EventGraph::star(&event.event_id.to_string(), &leaves, &self.embedder)
    }

    pub fn bundle(&self, event: &ParsedEvent) -> Result<FeatureBundle> {
        Ok(FeatureBundle {
            x: self.encoder.encode(event)?,
            graph: self.graph(event),
            label: event.label.map(|l| l.class()),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::drain::TemplateId;
    use crate::event::Label;
    use alloc::vec;

    fn event(id: u32, context: &str, level: &str, params: &[&str], label: Option<Label>) -> ParsedEvent {
        ParsedEvent {
            line_id: 0,
            datetime: None,
            context: Some(context.into()),
            level: Some(level.into()),
            record_id: None,
            event_id: TemplateId(id),
            event_template: String::new(),
            parameter_list: params.iter().map(|s| s.to_string()).collect(),
            label,
            header_warning: false,
        }
    }

    fn importance(pairs: &[(Column, f64)]) -> ImportanceMap {
        ImportanceMap {
            scores: pairs.iter().copied().collect(),
        }
    }

    #[test]
    fn select_examples() {
        let imp = importance(&[(Column::EventId, 0.6), (Column::Context, 0.3), (Column::Level, 0.1)]);
        assert_eq!(select_columns(&imp, 0.2).unwrap(), [Column::EventId, Column::Context]);
        assert_eq!(select_columns(&imp, 0.0).unwrap().len(), 3);
        assert_eq!(select_columns(&imp, 0.6), Err(Error::ThresholdTooHigh(0.6)));
        assert!(select_columns(&imp, 1.0).is_err());
    }

    #[test]
    fn zero_importance_excluded_at_zero_threshold() {
        let imp = importance(&[(Column::EventId, 1.0), (Column::Level, 0.0)]);
        assert_eq!(select_columns(&imp, 0.0).unwrap(), [Column::EventId]);
    }

    #[test]
    fn encoder_codes_follow_sorted_order() {
        let events = vec![
            event(1, "a", "WARN", &[], None),
            event(1, "a", "INFO", &[], None),
            event(1, "a", "ERROR", &[], None),
        ];
        let enc = FeatureEncoder::fit(&events, &[Column::Level]);
        assert_eq!(enc.encoder(Column::Level).unwrap().encode("INFO"), 2);
        let info = enc.encode(&event(1, "a", "INFO", &[], None)).unwrap();
        assert_eq!(info, [2.0]);
        let trace = enc.encode(&event(1, "a", "TRACE", &[], None)).unwrap();
        assert_eq!(trace, [UNKNOWN_CODE as f64]);
    }

    #[test]
    fn parameter_list_never_in_dense_vector() {
        let events = vec![event(1, "a", "INFO", &["x"], None)];
        let enc = FeatureEncoder::fit(&events, &[Column::EventId, Column::ParameterList]);
        assert_eq!(enc.columns(), [Column::EventId]);
        assert_eq!(enc.x_dim(), 1);
    }

    #[test]
    fn unknown_column_name_is_schema_error() {
        assert!(matches!(Column::from_name("Datetime"), Err(Error::Schema(_))));
        let json = r#"{"columns":["Level","Datetime"],"encoders":{}}"#;
        assert!(serde_json::from_str::<FeatureEncoder>(json).is_err());
    }

    #[test]
    fn missing_encoder_is_schema_error() {
        let json = r#"{"columns":["Level"],"encoders":{}}"#;
        let enc: FeatureEncoder = serde_json::from_str(json).unwrap();
        assert!(matches!(enc.encode(&event(1, "a", "INFO", &[], None)), Err(Error::Schema(_))));
    }

    #[test]
    fn normalize_examples() {
        let n = ParamNormalizer::default();
        assert_eq!(n.normalize("/home/alice/data/logs/x.txt").as_deref(), Some("logs/x.txt"));
        assert_eq!(n.normalize("blk_-5627"), None);
        assert_eq!(n.normalize("ciod").as_deref(), Some("ciod"));
        assert_eq!(n.normalize("/10.0.0.1:5000").as_deref(), Some("10.0.0.1:5000"));
        assert_eq!(n.normalize("/"), None);
    }

    #[test]
    fn graph_counts() {
        let f = Featurizer {
            encoder: FeatureEncoder::fit(&[], &[]),
            normalizer: ParamNormalizer::default(),
            embedder: TokenEmbedder::new(4),
        };
        let g = f.graph(&event(3, "c", "INFO", &["blk_1", "/a/b/c", "42"], None));
        assert_eq!(g.labels, ["E3", "b/c", "42"]);
        assert_eq!(g.edge_count(), g.node_count() - 1);
    }

    #[test]
    fn importance_of_informative_column() {
        let mut events = Vec::new();
        for i in 0..120u32 {
            let anomalous = i % 4 == 0;
            let level = if anomalous { "FATAL" } else { "INFO" };
            let label = if anomalous { Label::Anomaly } else { Label::Normal };
            events.push(event(1 + i % 3, "kernel", level, &[], Some(label)));
        }
        let imp = train_importance(&events, &ForestConfig::default()).unwrap();
        let total: f64 = imp.scores.values().sum();
        assert!((total - 1.0).abs() < 1e-6);
        assert!(imp.get(Column::Level) > imp.get(Column::EventId));
        assert_eq!(imp.get(Column::Context), 0.0);
    }

    #[test]
    fn single_class_importance_undefined() {
        let events = vec![event(1, "a", "INFO", &[], Some(Label::Normal)); 4];
        assert!(matches!(
            train_importance(&events, &ForestConfig::default()),
            Err(Error::ImportanceUndefined(_))
        ));
    }
}
