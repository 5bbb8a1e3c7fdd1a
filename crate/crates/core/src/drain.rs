//! Online template mining over a fixed-depth prefix tree.
//!
//! `depth` counts the root and the token-count level, so the first level
//! below the root is keyed by token count and the following `depth - 2`
//! levels by the leading tokens of the message. Templates live in the leaf
//! groups. A lookup therefore touches at most `depth` internal nodes no
//! matter how many templates the tree holds.
//!
//! ```text
//!                 root
//!                  |
//!                  5              token count
//!                /   \
//!         "Receiving" "PacketResponder"
//!              |          |
//!           "block"      <*>          numeric tokens route to <*>
//!              |          |
//!   [Receiving block <*> src: <*>]   [PacketResponder <*> for block <*>]
//! ```

use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

/// The wildcard token standing for a dynamic value.
pub const WILDCARD: &str = "<*>";

/// Identifier of a template within a tree lineage, rendered as `E<n>`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct TemplateId(pub u32);

impl fmt::Display for TemplateId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "E{}", self.0)
    }
}

impl FromStr for TemplateId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        s.strip_prefix('E')
            .and_then(|n| n.parse().ok())
            .map(TemplateId)
            .ok_or_else(|| Error::Schema(alloc::format!("bad template id `{s}`")))
    }
}

impl Serialize for TemplateId {
    fn serialize<S: Serializer>(&self, serializer: S) -> core::result::Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for TemplateId {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> core::result::Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogTemplate {
    pub template_id: TemplateId,
    pub tokens: Vec<String>,
    pub match_count: u64,
}

impl LogTemplate {
    /// Tokens joined by single spaces.
    pub fn template_string(&self) -> String {
        self.tokens.join(" ")
    }

    pub fn wildcard_count(&self) -> usize {
        self.tokens.iter().filter(|t| *t == WILDCARD).count()
    }
}

/// Fraction of positions where the template token is the wildcard or equals
/// the message token. `None` when the lengths differ (or both are empty):
/// such a pair never matches.
pub fn similarity<A: AsRef<str>, B: AsRef<str>>(tokens: &[A], template: &[B]) -> Option<f64> {
    if tokens.len() != template.len() || tokens.is_empty() {
        return None;
    }
    let hits = tokens
        .iter()
        .zip(template)
        .filter(|(w, t)| t.as_ref() == WILDCARD || t.as_ref() == w.as_ref())
        .count();
    Some(hits as f64 / tokens.len() as f64)
}

/// Values at the template's wildcard positions, in order.
pub fn extract_parameters<A: AsRef<str>, B: AsRef<str>>(template: &[A], tokens: &[B]) -> Vec<String> {
    template
        .iter()
        .zip(tokens)
        .filter(|(t, _)| t.as_ref() == WILDCARD)
        .map(|(_, w)| w.as_ref().to_string())
        .collect()
}

/// Inverse of [`extract_parameters`]: fills the wildcards left to right.
/// Surplus wildcards (fewer parameters than wildcards) stay as `<*>`.
pub fn substitute_parameters<A: AsRef<str>, B: AsRef<str>>(template: &[A], params: &[B]) -> Vec<String> {
    let mut params = params.iter();
    template
        .iter()
        .map(|t| {
            let t = t.as_ref();
            if t == WILDCARD {
                params.next().map_or(t, |p| p.as_ref()).to_string()
            } else {
                t.to_string()
            }
        })
        .collect()
}

/// Whether a token is a plain number (optional sign, digits, at most one dot).
pub fn is_numeric(token: &str) -> bool {
    let body = token.strip_prefix(['-', '+']).unwrap_or(token);
    let mut digits = 0;
    let mut dots = 0;
    for c in body.chars() {
        match c {
            '0'..='9' => digits += 1,
            '.' => dots += 1,
            _ => return false,
        }
    }
    digits > 0 && dots <= 1
}

fn route_key(token: &str) -> &str {
    if token == WILDCARD || is_numeric(token) {
        WILDCARD
    } else {
        token
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DrainConfig {
    /// Tree depth counting the root and the token-count level; the
    /// remaining `depth - 2` levels key on leading tokens.
    pub depth: usize,
    /// A message joins a template when similarity is strictly above this.
    pub similarity_threshold: f64,
    pub max_children: usize,
}

impl Default for DrainConfig {
    fn default() -> Self {
        Self {
            depth: 4,
            similarity_threshold: 0.4,
            max_children: 100,
        }
    }
}

impl DrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.depth < 1 {
            return Err(Error::Config("tree depth must be at least 1".into()));
        }
        if !(self.similarity_threshold > 0.0 && self.similarity_threshold <= 1.0) {
            return Err(Error::Config(alloc::format!(
                "similarity threshold {} outside (0, 1]",
                self.similarity_threshold
            )));
        }
        if self.max_children < 1 {
            return Err(Error::Config("max_children must be positive".into()));
        }
        Ok(())
    }

    fn prefix_len(&self, token_count: usize) -> usize {
        self.depth.saturating_sub(2).min(token_count)
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
struct Node {
    children: BTreeMap<String, usize>,
    templates: Vec<usize>,
}

/// Result of a read-only lookup.
#[derive(Clone, Debug, PartialEq)]
pub struct Lookup {
    pub template_id: Option<TemplateId>,
    pub similarity: f64,
    /// Internal nodes touched on the way down (token-count node included).
    pub nodes_visited: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TemplateTree {
    config: DrainConfig,
    by_length: BTreeMap<usize, usize>,
    nodes: Vec<Node>,
    templates: Vec<LogTemplate>,
}

impl TemplateTree {
    pub fn new(config: DrainConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            config,
            by_length: BTreeMap::new(),
            nodes: Vec::new(),
            templates: Vec::new(),
        })
    }

    pub fn config(&self) -> &DrainConfig {
        &self.config
    }

    pub fn len(&self) -> usize {
        self.templates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.templates.is_empty()
    }

    /// Templates in creation order.
    pub fn templates(&self) -> &[LogTemplate] {
        &self.templates
    }

    pub fn template(&self, id: TemplateId) -> Option<&LogTemplate> {
        (id.0 as usize).checked_sub(1).and_then(|i| self.templates.get(i))
    }

    /// Deepest internal-node chain of the tree, for checking the depth bound.
    pub fn max_path_len(&self) -> usize {
        fn walk(nodes: &[Node], at: usize) -> usize {
            1 + nodes[at]
                .children
                .values()
                .map(|&c| walk(nodes, c))
                .max()
                .unwrap_or(0)
        }
        self.by_length.values().map(|&n| walk(&self.nodes, n)).max().unwrap_or(0)
    }

    fn descend<S: AsRef<str>>(&self, tokens: &[S]) -> (Option<usize>, usize) {
        let Some(&start) = self.by_length.get(&tokens.len()) else {
            return (None, 0);
        };
        let mut node = start;
        let mut visited = 1;
        for token in &tokens[..self.config.prefix_len(tokens.len())] {
            let children = &self.nodes[node].children;
            let next = children
                .get(route_key(token.as_ref()))
                .or_else(|| children.get(WILDCARD));
            match next {
                Some(&n) => {
                    node = n;
                    visited += 1;
                }
                None => return (None, visited),
            }
        }
        (Some(node), visited)
    }

    fn best_in_leaf<S: AsRef<str>>(&self, leaf: usize, tokens: &[S]) -> Option<(usize, f64)> {
        let mut best: Option<(usize, f64, usize)> = None;
        for &idx in &self.nodes[leaf].templates {
            let template = &self.templates[idx].tokens;
            let Some(sim) = similarity(tokens, template) else {
                continue;
            };
            let literal_hits = tokens
                .iter()
                .zip(template)
                .filter(|(w, t)| t.as_str() == w.as_ref() && t.as_str() != WILDCARD)
                .count();
            let better = match best {
                None => true,
                Some((_, s, l)) => sim > s || (sim == s && literal_hits > l),
            };
            if better {
                best = Some((idx, sim, literal_hits));
            }
        }
        best.filter(|&(_, sim, _)| sim > self.config.similarity_threshold)
            .map(|(idx, sim, _)| (idx, sim))
    }

    /// Finds the matching template without modifying the tree.
    pub fn lookup<S: AsRef<str>>(&self, tokens: &[S]) -> Lookup {
        let (leaf, nodes_visited) = self.descend(tokens);
        let hit = leaf.and_then(|leaf| self.best_in_leaf(leaf, tokens));
        Lookup {
            template_id: hit.map(|(idx, _)| self.templates[idx].template_id),
            similarity: hit.map_or(0.0, |(_, s)| s),
            nodes_visited,
        }
    }

    /// Assigns the message to its best template, generalizing differing
    /// positions to the wildcard, or starts a new template.
    pub fn insert_or_match<S: AsRef<str>>(&mut self, tokens: &[S]) -> Result<(TemplateId, bool)> {
        if tokens.is_empty() {
            return Err(Error::EmptyMessage);
        }
        Ok(self.absorb(tokens, 1))
    }

    fn absorb<S: AsRef<str>>(&mut self, tokens: &[S], count: u64) -> (TemplateId, bool) {
        if let (Some(leaf), _) = self.descend(tokens) {
            if let Some((idx, _)) = self.best_in_leaf(leaf, tokens) {
                let template = &mut self.templates[idx];
                for (t, w) in template.tokens.iter_mut().zip(tokens) {
                    if t != w.as_ref() && t != WILDCARD {
                        *t = WILDCARD.to_string();
                    }
                }
                template.match_count += count;
                return (template.template_id, false);
            }
        }

        let leaf = self.create_path(tokens);
        let idx = self.templates.len();
        let id = TemplateId(idx as u32 + 1);
        self.templates.push(LogTemplate {
            template_id: id,
            tokens: tokens.iter().map(|t| t.as_ref().to_string()).collect(),
            match_count: count,
        });
        self.nodes[leaf].templates.push(idx);
        (id, true)
    }

    fn new_node(&mut self) -> usize {
        self.nodes.push(Node::default());
        self.nodes.len() - 1
    }

    fn create_path<S: AsRef<str>>(&mut self, tokens: &[S]) -> usize {
        let mut node = match self.by_length.get(&tokens.len()) {
            Some(&n) => n,
            None => {
                let n = self.new_node();
                self.by_length.insert(tokens.len(), n);
                n
            }
        };
        let max_children = self.config.max_children;
        for token in &tokens[..self.config.prefix_len(tokens.len())] {
            let key = route_key(token.as_ref());
            let children = &self.nodes[node].children;
            let key = if children.contains_key(key) || key == WILDCARD || children.len() + 1 < max_children {
                key
            } else {
                // full: everything else goes through the overflow child
                WILDCARD
            };
            node = match self.nodes[node].children.get(key) {
                Some(&n) => n,
                None => {
                    let n = self.new_node();
                    self.nodes[node].children.insert(key.to_string(), n);
                    n
                }
            };
        }
        node
    }

    /// Re-inserts every template of `other` (with its match count) and
    /// returns, indexed by `other`'s template order, the id each one landed on.
    pub fn merge_from(&mut self, other: &TemplateTree) -> Vec<TemplateId> {
        other
            .templates
            .iter()
            .map(|t| self.absorb(&t.tokens, t.match_count).0)
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn toks(s: &str) -> Vec<&str> {
        s.split_whitespace().collect()
    }

    fn tree() -> TemplateTree {
        TemplateTree::new(DrainConfig::default()).unwrap()
    }

    #[test]
    fn similarity_examples() {
        assert_eq!(similarity(&toks("send 42 bytes"), &toks("send <*> bytes")), Some(1.0));
        assert_eq!(similarity(&toks("send 42 bytes"), &toks("recv <*> bytes")), Some(2.0 / 3.0));
        assert_eq!(similarity(&toks("a b c"), &toks("a b c")), Some(1.0));
        assert_eq!(similarity(&toks("a b"), &toks("a b c")), None);
        assert_eq!(similarity(&toks("x y z"), &toks("<*> <*> <*>")), Some(1.0));
    }

    #[test]
    fn empty_tree_creates_template() {
        let mut t = tree();
        let (id, new) = t.insert_or_match(&toks("open file A")).unwrap();
        assert!(new);
        assert_eq!(t.template(id).unwrap().match_count, 1);
    }

    #[test]
    fn repeat_line_matches() {
        let mut t = tree();
        let (a, _) = t.insert_or_match(&toks("disk check ok")).unwrap();
        let (b, new) = t.insert_or_match(&toks("disk check ok")).unwrap();
        assert_eq!(a, b);
        assert!(!new);
        assert_eq!(t.template(a).unwrap().match_count, 2);
    }

    #[test]
    fn match_generalizes_differing_positions() {
        let mut t = tree();
        let (a, _) = t.insert_or_match(&toks("open file A")).unwrap();
        let (b, new) = t.insert_or_match(&toks("open file B")).unwrap();
        assert_eq!(a, b);
        assert!(!new);
        assert_eq!(t.template(a).unwrap().template_string(), "open file <*>");
    }

    #[test]
    fn below_threshold_starts_new_template() {
        let mut t = tree();
        // same leaf (length 5, shared 2-token prefix), similarity 3/5 vs 2/5
        let (a, _) = t.insert_or_match(&toks("a b c d e")).unwrap();
        let (b, new) = t.insert_or_match(&toks("a b c x y")).unwrap();
        assert_eq!(a, b, "3/5 > 0.4");
        assert!(!new);

        let mut t = TemplateTree::new(DrainConfig { similarity_threshold: 0.7, ..Default::default() }).unwrap();
        let (a, _) = t.insert_or_match(&toks("a b c d e")).unwrap();
        let (b, new) = t.insert_or_match(&toks("a b c x y")).unwrap();
        assert_ne!(a, b);
        assert!(new);
    }

    #[test]
    fn empty_tokens_rejected() {
        let empty: [&str; 0] = [];
        assert_eq!(tree().insert_or_match(&empty), Err(Error::EmptyMessage));
    }

    #[test]
    fn numeric_tokens_route_to_wildcard_child() {
        let mut t = tree();
        let (a, _) = t.insert_or_match(&toks("42 requests served")).unwrap();
        let (b, _) = t.insert_or_match(&toks("7 requests served")).unwrap();
        assert_eq!(a, b);
        assert_eq!(t.template(a).unwrap().template_string(), "<*> requests served");
    }

    #[test]
    fn overflow_child_absorbs_extra_keys() {
        let mut t = TemplateTree::new(DrainConfig { max_children: 3, ..Default::default() }).unwrap();
        for w in ["alpha", "beta", "gamma", "delta", "epsilon"] {
            let line = alloc::format!("{w} unit started now");
            t.insert_or_match(&toks(&line)).unwrap();
        }
        // every template is still reachable
        for w in ["alpha", "beta", "gamma", "delta", "epsilon"] {
            let line = alloc::format!("{w} unit started now");
            assert!(t.lookup(&toks(&line)).template_id.is_some(), "{w}");
        }
        let len_node = t.by_length[&4];
        assert!(t.nodes[len_node].children.len() <= 3);
        assert!(t.nodes[len_node].children.contains_key(WILDCARD));
    }

    #[test]
    fn lookup_visits_bounded_nodes() {
        let mut t = tree();
        for i in 0..200 {
            let line = alloc::format!("svc{} op{} step {} done extra words here", i % 7, i % 13, i);
            t.insert_or_match(&toks(&line)).unwrap();
        }
        for i in 0..200 {
            let line = alloc::format!("svc{} op{} step {} done extra words here", i % 7, i % 13, i);
            assert!(t.lookup(&toks(&line)).nodes_visited <= t.config().depth);
        }
        assert!(t.max_path_len() <= t.config().depth);
    }

    #[test]
    fn depth_one_keys_on_length_only() {
        let mut t = TemplateTree::new(DrainConfig { depth: 1, ..Default::default() }).unwrap();
        t.insert_or_match(&toks("a b c")).unwrap();
        let hit = t.lookup(&toks("a b x"));
        assert!(hit.template_id.is_some());
        assert_eq!(hit.nodes_visited, 1);
    }

    #[test]
    fn merge_reports_landing_ids() {
        let mut left = tree();
        left.insert_or_match(&toks("open file A")).unwrap();
        left.insert_or_match(&toks("close socket now")).unwrap();
        let mut right = tree();
        right.insert_or_match(&toks("open file B")).unwrap();
        right.insert_or_match(&toks("open file C")).unwrap();
        right.insert_or_match(&toks("halt cpu 3")).unwrap();

        let mut merged = tree();
        let m1 = merged.merge_from(&left);
        let m2 = merged.merge_from(&right);
        assert_eq!(m1, vec![TemplateId(1), TemplateId(2)]);
        assert_eq!(m2, vec![TemplateId(1), TemplateId(3)]);
        let open = merged.template(TemplateId(1)).unwrap();
        assert_eq!(open.template_string(), "open file <*>");
        assert_eq!(open.match_count, 3);
    }

    #[test]
    fn parameters_round_trip() {
        let template = toks("Receiving block <*> src: <*>");
        let line = toks("Receiving block blk_1 src: /10.0.0.1:5000");
        let params = extract_parameters(&template, &line);
        assert_eq!(params, ["blk_1", "/10.0.0.1:5000"]);
        assert_eq!(substitute_parameters(&template, &params), line);
    }

    #[test]
    fn template_id_text_form() {
        assert_eq!(TemplateId(12).to_string(), "E12");
        assert_eq!("E12".parse::<TemplateId>().unwrap(), TemplateId(12));
        assert!("12".parse::<TemplateId>().is_err());
    }

    #[test]
    fn numeric_detection() {
        for t in ["42", "-5", "+3.14", "0.5"] {
            assert!(is_numeric(t), "{t}");
        }
        for t in ["", "-", "1.2.3", "blk_1", "v2", "."] {
            assert!(!is_numeric(t), "{t}");
        }
    }
}
