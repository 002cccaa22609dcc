//! Question/answer entity graph and node linkage counts.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ClassificationSnapshot, KnowledgeClass, QaPair};
use crate::prompt::MatcherPolicy;

/// One ordered extraction rule: a regex and the capture group holding the entity.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExtractionRule {
    pub pattern: String,
    #[serde(default = "default_group")]
    pub group: usize,
}

fn default_group() -> usize {
    1
}

#[derive(Debug, Clone)]
pub struct RuleSet {
    rules: Vec<(Regex, usize)>,
    scaffold: Regex,
}

impl RuleSet {
    pub fn new(rules: &[ExtractionRule]) -> Result<Self> {
        if rules.is_empty() {
            return Err(Error::Config("extraction rule list is empty".into()));
        }
        let compiled = rules
            .iter()
            .map(|r| {
                let re = Regex::new(&r.pattern).map_err(|e| Error::InvalidRule {
                    pattern: r.pattern.clone(),
                    message: e.to_string(),
                })?;
                if r.group > re.captures_len() - 1 {
                    return Err(Error::InvalidRule {
                        pattern: r.pattern.clone(),
                        message: format!("no capture group {}", r.group),
                    });
                }
                Ok((re, r.group))
            })
            .collect::<Result<_>>()?;
        let scaffold = Regex::new(
            r"(?i)^\s*(?:who|whom|whose|what|which|when|where|why|how(?:\s+many|\s+much)?)\b\s*\S*\s*",
        )
        .expect("static regex");
        Ok(RuleSet {
            rules: compiled,
            scaffold,
        })
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let rules: Vec<ExtractionRule> = serde_json::from_str(text)?;
        Self::new(&rules)
    }

    /// Patterns for the common single-relation question forms.
    pub fn default_rules() -> Vec<ExtractionRule> {
        [
            r"(?i)^who (?:performed|wrote|directed|composed|produced|sang|created|founded|invented|discovered|painted|designed|developed|published) (.+?)\s*\?*$",
            r"(?i)^what is the (?:capital|currency|language|genre|country|occupation|religion) of (.+?)\s*\?*$",
            r"(?i)^where (?:is|was) (.+?) (?:located|born|founded|headquartered|buried)\s*\?*$",
            r"(?i)^(?:when|in what year) (?:was|did) (.+?) (?:born|founded|released|die|established)\s*\?*$",
        ]
        .iter()
        .map(|p| ExtractionRule {
            pattern: p.to_string(),
            group: 1,
        })
        .collect()
    }

    fn question_entity(&self, question: &str) -> String {
        for (re, group) in &self.rules {
            if let Some(m) = re.captures(question).and_then(|c| c.get(*group)) {
                return m.as_str().trim().to_string();
            }
        }
        // fallback: drop the interrogative word and the word after it
        let stripped = self.scaffold.replace(question, "");
        stripped.trim().trim_end_matches('?').trim().to_string()
    }
}

impl Default for RuleSet {
    fn default() -> Self {
        RuleSet::new(&RuleSet::default_rules()).expect("default rules compile")
    }
}

/// `(question entity, answer entity)`; the answer entity is the canonical answer verbatim.
pub fn extract_entities(pair: &QaPair, rules: &RuleSet) -> Result<(String, String)> {
    let question = rules.question_entity(&pair.question);
    let answer = pair.canonical_answer().trim().to_string();
    if question.is_empty() || answer.is_empty() {
        return Err(Error::NoEntity(pair.id.clone()));
    }
    Ok((question, answer))
}

pub type Edge = (String, String);

/// Undirected graph over normalized entities; each edge remembers the pairs that produced it.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EntityGraph {
    pub nodes: BTreeSet<String>,
    pub edges: BTreeMap<Edge, Vec<String>>,
    /// Edge contributed by each pair.
    pub pair_edges: BTreeMap<String, Edge>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct GraphBuild {
    pub graph: EntityGraph,
    /// Pairs without an extractable entity.
    pub no_entity: Vec<String>,
    /// Pairs whose two entities normalize to the same node.
    pub self_loops: Vec<String>,
}

impl GraphBuild {
    pub fn skipped(&self) -> usize {
        self.no_entity.len() + self.self_loops.len()
    }

    fn merge(mut self, other: GraphBuild) -> GraphBuild {
        self.graph.nodes.extend(other.graph.nodes);
        for (edge, ids) in other.graph.edges {
            self.graph.edges.entry(edge).or_default().extend(ids);
        }
        self.graph.pair_edges.extend(other.graph.pair_edges);
        self.no_entity.extend(other.no_entity);
        self.self_loops.extend(other.self_loops);
        self
    }
}

fn normalize_entity(text: &str) -> String {
    MatcherPolicy::default().normalize(text)
}

fn build_chunk(pairs: &[QaPair], rules: &RuleSet) -> GraphBuild {
    let mut out = GraphBuild::default();
    for pair in pairs {
        let (q, a) = match extract_entities(pair, rules) {
            Ok(e) => e,
            Err(_) => {
                out.no_entity.push(pair.id.clone());
                continue;
            }
        };
        let (q, a) = (normalize_entity(&q), normalize_entity(&a));
        if q == a {
            out.self_loops.push(pair.id.clone());
            continue;
        }
        let edge = if q < a { (q, a) } else { (a, q) };
        out.graph.nodes.insert(edge.0.clone());
        out.graph.nodes.insert(edge.1.clone());
        out.graph.edges.entry(edge.clone()).or_default().push(pair.id.clone());
        out.graph.pair_edges.insert(pair.id.clone(), edge);
    }
    out
}

/// One edge per pair between its question and answer entities, built in parallel chunks.
pub fn build_graph(pairs: &[QaPair], rules: &RuleSet) -> GraphBuild {
    const CHUNK: usize = 4096;
    let mut build = if pairs.len() <= CHUNK {
        build_chunk(pairs, rules)
    } else {
        std::thread::scope(|s| {
            let handles: Vec<_> = pairs
                .chunks(CHUNK)
                .map(|chunk| s.spawn(move || build_chunk(chunk, rules)))
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().expect("graph worker panicked"))
                .fold(GraphBuild::default(), GraphBuild::merge)
        })
    };
    for ids in build.graph.edges.values_mut() {
        ids.sort();
    }
    build
}

impl EntityGraph {
    pub fn neighbors(&self) -> BTreeMap<&str, BTreeSet<&str>> {
        let mut adj: BTreeMap<&str, BTreeSet<&str>> = BTreeMap::new();
        for (a, b) in self.edges.keys() {
            adj.entry(a).or_default().insert(b);
            adj.entry(b).or_default().insert(a);
        }
        adj
    }

    pub fn degree(&self, node: &str) -> usize {
        self.neighbors().get(node).map_or(0, BTreeSet::len)
    }

    /// Tab-separated `node_a, node_b, comma-joined qa ids`, one edge per line.
    pub fn edge_list(&self) -> String {
        let mut out = String::new();
        for ((a, b), ids) in &self.edges {
            let _ = writeln!(out, "{a}\t{b}\t{}", ids.join(","));
        }
        out
    }
}

/// Pairs initially MaybeKnown, and pairs that went from WeaklyKnown to MaybeKnown.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct PairRoles {
    pub initially_maybe: BTreeSet<String>,
    pub reclassified: BTreeSet<String>,
}

impl PairRoles {
    pub fn from_snapshots(snap0: &ClassificationSnapshot, snap1: &ClassificationSnapshot) -> Self {
        let mut roles = PairRoles::default();
        for (id, before) in &snap0.labels {
            match before {
                KnowledgeClass::MaybeKnown => {
                    roles.initially_maybe.insert(id.clone());
                }
                KnowledgeClass::WeaklyKnown
                    if snap1.get(id) == Some(KnowledgeClass::MaybeKnown) =>
                {
                    roles.reclassified.insert(id.clone());
                }
                _ => {}
            }
        }
        roles
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct NodeLabeling {
    pub initial: BTreeSet<String>,
    pub reclassified: BTreeSet<String>,
    pub linked_reclassified: BTreeSet<String>,
}

impl NodeLabeling {
    /// `(initial, reclassified, linked reclassified)`.
    pub fn counts(&self) -> (usize, usize, usize) {
        (
            self.initial.len(),
            self.reclassified.len(),
            self.linked_reclassified.len(),
        )
    }

    /// Tab-separated `node, comma-joined labels` for every labelled node.
    pub fn sidecar(&self) -> String {
        let all: BTreeSet<&String> = self.initial.iter().chain(&self.reclassified).collect();
        let mut out = String::new();
        for node in all {
            let mut labels = Vec::new();
            if self.initial.contains(node) {
                labels.push("initial");
            }
            if self.reclassified.contains(node) {
                labels.push("reclassified");
            }
            if self.linked_reclassified.contains(node) {
                labels.push("linked_reclassified");
            }
            let _ = writeln!(out, "{node}\t{}", labels.join(","));
        }
        out
    }

    pub fn render_counts(&self) -> String {
        let (i, r, l) = self.counts();
        format!("Initial Reclassified LinkedReclassified\n{i} {r} {l}\n")
    }
}

/// A node may carry both the initial and the reclassified label; counts are per label.
pub fn label_nodes(graph: &EntityGraph, roles: &PairRoles) -> NodeLabeling {
    let nodes_of = |ids: &BTreeSet<String>| -> BTreeSet<String> {
        ids.iter()
            .filter_map(|id| graph.pair_edges.get(id))
            .flat_map(|(a, b)| [a.clone(), b.clone()])
            .collect()
    };
    let initial = nodes_of(&roles.initially_maybe);
    let reclassified = nodes_of(&roles.reclassified);
    let adj = graph.neighbors();
    let near_initial: BTreeSet<&str> = initial
        .iter()
        .filter_map(|n| adj.get(n.as_str()))
        .flatten()
        .copied()
        .collect();
    let linked_reclassified = reclassified
        .iter()
        .filter(|n| near_initial.contains(n.as_str()))
        .cloned()
        .collect();
    NodeLabeling {
        initial,
        reclassified,
        linked_reclassified,
    }
}
