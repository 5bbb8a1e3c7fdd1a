//! Synthetic HDFS-style corpora with known structure.
//!
//! Every generator is a pure function of its seed. Lines carry the `hdfs`
//! header so they go through the same profile as real logs.

use std::collections::HashMap;

use logfuse_core::{Label, TemplateId};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::parse::RawLogLine;

const WORDS: &[&str] = &[
    "alloc", "block", "commit", "digest", "evict", "flush", "grant", "handle", "index", "join", "keep", "lease", "merge",
    "notify", "open", "probe", "query", "replica", "scan", "token", "update", "verify", "write", "yield", "zone", "packet",
    "stream", "socket", "buffer", "quota", "mirror", "volume",
];

fn hdfs_line(rng: &mut ChaCha8Rng, level: &str, context: &str, message: &str) -> String {
    format!(
        "0811{:02} {:02}{:02}{:02} {} {level} {context}: {message}",
        rng.gen_range(9..12),
        rng.gen_range(0..24),
        rng.gen_range(0..60),
        rng.gen_range(0..60),
        rng.gen_range(1..4000)
    )
}

fn block_id(rng: &mut ChaCha8Rng) -> String {
    format!("blk_{}", rng.gen_range(-9_000_000_000_000i64..9_000_000_000_000))
}

fn ip(rng: &mut ChaCha8Rng) -> String {
    format!(
        "/10.{}.{}.{}:{}",
        rng.gen_range(0..256),
        rng.gen_range(0..256),
        rng.gen_range(1..255),
        rng.gen_range(1024..65535)
    )
}

/// Alphabetic tag unique to `i` (a, b, ..., z, ba, bb, ...).
fn tag(mut i: usize) -> String {
    let mut s = Vec::new();
    loop {
        s.push(b'a' + (i % 26) as u8);
        i /= 26;
        if i == 0 {
            break;
        }
    }
    s.reverse();
    String::from_utf8(s).expect("ascii")
}

#[derive(Clone, Debug, PartialEq)]
pub struct TemplateCorpus {
    pub lines: Vec<RawLogLine>,
    /// Generating template of each line.
    pub truth: Vec<usize>,
    /// Template strings with `<*>` at parameter positions.
    pub templates: Vec<String>,
}

#[derive(Clone, Debug)]
enum Slot {
    Fixed(String),
    Param,
}

/// `n_templates` message shapes, each instantiated `per_template` times with
/// fresh parameters, shuffled. Shapes are 5 to 10 tokens long and never share
/// a fixed token, and at most 40% of a shape's tokens are parameters, so no
/// line is more than 40% similar to a foreign template. Parameters are block
/// ids, addresses, numbers or free-form words; the first two tokens are always
/// fixed.
pub fn template_corpus(n_templates: usize, per_template: usize, seed: u64) -> TemplateCorpus {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let shapes: Vec<Vec<Slot>> = (0..n_templates)
        .map(|t| {
            let len = 5 + t % 6;
            let n_params = (1 + t % 3).min(2 * len / 5);
            let mut positions: Vec<usize> = (2..len).collect();
            positions.shuffle(&mut rng);
            positions.truncate(n_params);
            (0..len)
                .map(|k| {
                    if positions.contains(&k) {
                        Slot::Param
                    } else {
                        Slot::Fixed(format!("{}{}", WORDS[(t * 7 + k * 3) % WORDS.len()], tag(t)))
                    }
                })
                .collect()
        })
        .collect();

    let mut items: Vec<(usize, String)> = Vec::with_capacity(n_templates * per_template);
    for (t, shape) in shapes.iter().enumerate() {
        for _ in 0..per_template {
            let msg: Vec<String> = shape
                .iter()
                .enumerate()
                .map(|(k, slot)| match slot {
                    Slot::Fixed(w) => w.clone(),
                    Slot::Param => match (t + k) % 4 {
                        0 => block_id(&mut rng),
                        1 => ip(&mut rng),
                        2 => rng.gen_range(0..1_000_000).to_string(),
                        _ => format!("user{}", tag(rng.gen_range(0..5000))),
                    },
                })
                .collect();
            items.push((t, msg.join(" ")));
        }
    }
    items.shuffle(&mut rng);

    let templates = shapes
        .iter()
        .map(|s| {
            s.iter()
                .map(|slot| match slot {
                    Slot::Fixed(w) => w.as_str(),
                    Slot::Param => "<*>",
                })
                .collect::<Vec<_>>()
                .join(" ")
        })
        .collect();
    let (truth, lines) = items
        .into_iter()
        .enumerate()
        .map(|(i, (t, msg))| (t, RawLogLine::new(i as u64 + 1, hdfs_line(&mut rng, "INFO", "dfs.DataNode", &msg))))
        .unzip();
    TemplateCorpus { lines, truth, templates }
}

/// Share of lines whose predicted group is exactly their true group: the
/// set of lines sharing the predicted id must equal the set sharing the true
/// template.
pub fn grouping_accuracy(truth: &[usize], predicted: &[TemplateId]) -> f64 {
    assert_eq!(truth.len(), predicted.len());
    if truth.is_empty() {
        return 1.0;
    }
    let mut pred_size: HashMap<TemplateId, usize> = HashMap::new();
    let mut truth_size: HashMap<usize, usize> = HashMap::new();
    let mut pair: HashMap<(TemplateId, usize), usize> = HashMap::new();
    for (&t, &p) in truth.iter().zip(predicted) {
        *pred_size.entry(p).or_default() += 1;
        *truth_size.entry(t).or_default() += 1;
        *pair.entry((p, t)).or_default() += 1;
    }
    let correct = truth
        .iter()
        .zip(predicted)
        .filter(|(t, p)| {
            let both = pair[&(**p, **t)];
            both == pred_size[*p] && both == truth_size[*t]
        })
        .count();
    correct as f64 / truth.len() as f64
}

/// How the anomalies of a [`mixed_corpus`] are planted.
#[derive(Clone, Debug)]
pub struct MixedConfig {
    pub records: usize,
    /// Fraction of records in the parameter-driven templates whose path
    /// parameter comes from the faulty vocabulary.
    pub param_anomaly_rate: f64,
    /// Fraction of records in the context-driven templates logged by the
    /// faulty component.
    pub context_anomaly_rate: f64,
    /// Offset into the parameter vocabularies. Two corpora with different
    /// shifts share templates and components but not parameter values.
    pub shift: usize,
    pub seed: u64,
}

impl Default for MixedConfig {
    fn default() -> Self {
        Self {
            records: 10_000,
            param_anomaly_rate: 0.15,
            context_anomaly_rate: 0.15,
            shift: 0,
            seed: 7,
        }
    }
}

const DIRS: &[&str] = &["data", "user", "tmp", "warehouse", "logs", "staging", "archive", "spool", "cache", "share", "export", "backup"];
const FAULTY: &[&str] = &["corrupt", "badsector", "lost", "orphan", "quarantine", "damaged", "stale", "broken", "fenced", "zeroed", "torn", "rotten"];
const FILES: &[&str] = &["part", "chunk", "segment", "shard", "blob", "page", "extent", "slice"];

fn path(rng: &mut ChaCha8Rng, dirs: &[&str], shift: usize) -> String {
    let d = dirs[(shift * 3 + rng.gen_range(0..3)) % dirs.len()];
    let f = FILES[(shift * 2 + rng.gen_range(0..2)) % FILES.len()];
    format!("/hadoop/{d}/{f}-{}", rng.gen_range(0..100))
}

fn host(rng: &mut ChaCha8Rng, shift: usize) -> String {
    format!("node{}", tag(shift * 8 + rng.gen_range(0..8)))
}

/// Labeled corpus with two kinds of planted anomaly:
///
/// - parameter-driven: two templates carry a path parameter; anomalous
///   records use paths from a faulty vocabulary. Template, component and
///   level are identical to the normal records, so only the parameters tell
///   them apart.
/// - context-driven: two templates are normally logged by `dfs.DataNode`;
///   anomalous records come from `dfs.FSDataset` with the same parameter
///   distribution, so only the component tells them apart.
///
/// The remaining templates are always normal.
pub fn mixed_corpus(cfg: &MixedConfig) -> Vec<RawLogLine> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let s = cfg.shift;
    let mut out = Vec::with_capacity(cfg.records);
    for i in 0..cfg.records {
        let kind = rng.gen_range(0..10);
        let (context, msg, label) = match kind {
            0 | 1 => {
                let faulty = rng.gen_bool(cfg.param_anomaly_rate);
                let p = path(&mut rng, if faulty { FAULTY } else { DIRS }, s);
                let msg = if kind == 0 {
                    format!("Deleting block {} file {p}", block_id(&mut rng))
                } else {
                    format!("Reading replica file {p} for client {}", host(&mut rng, s))
                };
                ("dfs.FSDataset", msg, faulty)
            }
            2 | 3 => {
                let faulty = rng.gen_bool(cfg.context_anomaly_rate);
                let msg = if kind == 2 {
                    format!("Served block {} to {}", block_id(&mut rng), host(&mut rng, s))
                } else {
                    format!("Replica sync started on {} at {}", host(&mut rng, s), ip(&mut rng))
                };
                (if faulty { "dfs.FSDataset" } else { "dfs.DataNode" }, msg, faulty)
            }
            4 => (
                "dfs.DataNode",
                format!("Receiving block {} src: {} dest: {}", block_id(&mut rng), ip(&mut rng), ip(&mut rng)),
                false,
            ),
            5 => (
                "dfs.DataNode",
                format!("PacketResponder {} for block {} terminating", rng.gen_range(0..3), block_id(&mut rng)),
                false,
            ),
            6 => (
                "dfs.FSNamesystem",
                format!("BLOCK* NameSystem.addStoredBlock: blockMap updated: {} is added to {} size {}", ip(&mut rng), block_id(&mut rng), rng.gen_range(1000..70_000_000)),
                false,
            ),
            7 => (
                "dfs.DataNode",
                format!("Received block {} of size {} from {}", block_id(&mut rng), rng.gen_range(1000..70_000_000), ip(&mut rng)),
                false,
            ),
            8 => (
                "dfs.DataBlockScanner",
                format!("Verification succeeded for {}", block_id(&mut rng)),
                false,
            ),
            _ => (
                "dfs.FSNamesystem",
                format!("BLOCK* NameSystem.allocateBlock: {} {}", path(&mut rng, DIRS, s), block_id(&mut rng)),
                false,
            ),
        };
        let text = hdfs_line(&mut rng, "INFO", context, &msg);
        out.push(RawLogLine {
            label: Some(if label { Label::Anomaly } else { Label::Normal }),
            ..RawLogLine::new(i as u64 + 1, text)
        });
    }
    out
}

/// HDFS-like service log with rare failure templates, labeled.
pub fn hdfs_corpus(records: usize, anomaly_rate: f64, seed: u64) -> Vec<RawLogLine> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..records)
        .map(|i| {
            let anomaly = rng.gen_bool(anomaly_rate);
            let (level, context, msg) = if anomaly {
                match rng.gen_range(0..3) {
                    0 => (
                        "WARN",
                        "dfs.DataNode",
                        format!("Exception in receiveBlock for block {} java.io.IOException: Connection reset by peer", block_id(&mut rng)),
                    ),
                    1 => (
                        "INFO",
                        "dfs.DataNode",
                        format!("writeBlock {} received exception java.io.IOException: Could not read from stream", block_id(&mut rng)),
                    ),
                    _ => (
                        "WARN",
                        "dfs.DataNode",
                        format!("{} Got exception while serving {} to {}", ip(&mut rng), block_id(&mut rng), ip(&mut rng)),
                    ),
                }
            } else {
                match rng.gen_range(0..5) {
                    0 => (
                        "INFO",
                        "dfs.DataNode",
                        format!("Receiving block {} src: {} dest: {}", block_id(&mut rng), ip(&mut rng), ip(&mut rng)),
                    ),
                    1 => (
                        "INFO",
                        "dfs.DataNode",
                        format!("PacketResponder {} for block {} terminating", rng.gen_range(0..3), block_id(&mut rng)),
                    ),
                    2 => (
                        "INFO",
                        "dfs.FSNamesystem",
                        format!("BLOCK* NameSystem.addStoredBlock: blockMap updated: {} is added to {} size {}", ip(&mut rng), block_id(&mut rng), rng.gen_range(1000..70_000_000)),
                    ),
                    3 => (
                        "INFO",
                        "dfs.DataNode",
                        format!("Received block {} of size {} from {}", block_id(&mut rng), rng.gen_range(1000..70_000_000), ip(&mut rng)),
                    ),
                    _ => ("INFO", "dfs.DataBlockScanner", format!("Verification succeeded for {}", block_id(&mut rng))),
                }
            };
            let text = hdfs_line(&mut rng, level, context, &msg);
            RawLogLine {
                label: Some(if anomaly { Label::Anomaly } else { Label::Normal }),
                ..RawLogLine::new(i as u64 + 1, text)
            }
        })
        .collect()
}
