//! Analyst verdicts on alerts and the fine-tune set built from them.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::features::FeatureBundle;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    FalsePositive,
    Confirmed,
}

impl Verdict {
    /// The label the analyst asserts for the record.
    pub fn corrected_label(self) -> u8 {
        match self {
            Verdict::FalsePositive => 0,
            Verdict::Confirmed => 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeedbackEntry {
    pub alert_id: String,
    pub verdict: Verdict,
    pub analyst: String,
    pub timestamp_ms: i64,
    /// Model inputs of the alerted record, labeled per the verdict.
    pub bundle: FeatureBundle,
}

impl FeedbackEntry {
    pub fn new(alert_id: impl Into<String>, verdict: Verdict, analyst: impl Into<String>, timestamp_ms: i64, mut bundle: FeatureBundle) -> Self {
        bundle.label = Some(verdict.corrected_label());
        Self {
            alert_id: alert_id.into(),
            verdict,
            analyst: analyst.into(),
            timestamp_ms,
            bundle,
        }
    }
}

/// Latest verdict per alert, keyed by alert id. Later entries in `entries`
/// win ties on timestamp.
pub fn latest_per_alert<'a, I>(entries: I) -> BTreeMap<&'a str, &'a FeedbackEntry>
where
    I: IntoIterator<Item = &'a FeedbackEntry>,
{
    let mut latest: BTreeMap<&str, &FeedbackEntry> = BTreeMap::new();
    for e in entries {
        match latest.get(e.alert_id.as_str()) {
            Some(prev) if prev.timestamp_ms > e.timestamp_ms => {}
            _ => {
                latest.insert(&e.alert_id, e);
            }
        }
    }
    latest
}

/// Uniform sample of `k` items by reservoir sampling, in stream order.
pub fn reservoir_sample<T: Clone>(items: &[T], k: usize, seed: u64) -> Vec<T> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut chosen: Vec<usize> = Vec::with_capacity(k.min(items.len()));
    for i in 0..items.len() {
        if chosen.len() < k {
            chosen.push(i);
        } else {
            let j = rng.gen_range(0..=i);
            if j < k {
                chosen[j] = i;
            }
        }
    }
    chosen.sort_unstable();
    chosen.into_iter().map(|i| items[i].clone()).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FinetuneConfig {
    /// Replay items drawn per corrected item.
    pub replay_ratio: f64,
    pub seed: u64,
}

impl Default for FinetuneConfig {
    fn default() -> Self {
        Self {
            replay_ratio: 2.0,
            seed: 23,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct FinetuneSet {
    /// Deduplicated false-positive corrections, labeled normal.
    pub corrected: Vec<FeatureBundle>,
    pub replay: Vec<FeatureBundle>,
}

impl FinetuneSet {
    pub fn is_empty(&self) -> bool {
        self.corrected.is_empty()
    }

    pub fn len(&self) -> usize {
        self.corrected.len() + self.replay.len()
    }

    pub fn all(&self) -> Vec<FeatureBundle> {
        self.corrected.iter().chain(&self.replay).cloned().collect()
    }
}

/// Corrections newer than `since_ms` whose latest verdict is a false
/// positive, plus a replay sample of the original training data. Confirmed
/// alerts were predicted correctly and contribute nothing. With no
/// corrections the set is empty and no replay is drawn.
pub fn build_finetune_set(entries: &[FeedbackEntry], since_ms: Option<i64>, training: &[FeatureBundle], config: &FinetuneConfig) -> FinetuneSet {
    let corrected: Vec<FeatureBundle> = latest_per_alert(entries)
        .into_values()
        .filter(|e| e.verdict == Verdict::FalsePositive)
        .filter(|e| since_ms.is_none_or(|s| e.timestamp_ms > s))
        .map(|e| e.bundle.clone())
        .collect();
    if corrected.is_empty() {
        return FinetuneSet::default();
    }
    let k = libm::round(corrected.len() as f64 * config.replay_ratio.max(0.0)) as usize;
    let replay = reservoir_sample(training, k, config.seed);
    FinetuneSet { corrected, replay }
}
