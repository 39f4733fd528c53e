//! AND-OR grammar data model shared by the spatial, temporal and causal
//! layers: validation, derivation sampling, node counting, canonical JSON
//! and DOT export.
//!
//! A grammar is the 5-tuple (terminals, non-terminals, start, rules,
//! probabilities). Rules are encoded by each node's ordered child list;
//! probabilities live on Or edges. And children are ordered left to right
//! and the order is meaningful. Grammars are immutable after construction;
//! every transformation produces a new value.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::symbol::{Layer, SymbolId};

/// Absolute tolerance for Or-edge weight sums.
pub const OR_WEIGHT_EPS: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum NodeKind {
    Terminal,
    And,
    Or,
}

impl fmt::Display for NodeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            NodeKind::Terminal => write!(f, "Terminal"),
            NodeKind::And => write!(f, "And"),
            NodeKind::Or => write!(f, "Or"),
        }
    }
}

/// A non-terminal node: And composes its children in order, Or selects
/// one child by edge weight. Terminal-kind nodes carry no children and
/// normally live in the grammar's terminal set instead of the node map.
#[derive(Debug, Clone, PartialEq)]
pub struct GrammarNode {
    pub id: SymbolId,
    pub kind: NodeKind,
    pub children: Vec<(SymbolId, f64)>,
}

impl GrammarNode {
    pub fn and(id: SymbolId, children: Vec<SymbolId>) -> Self {
        GrammarNode {
            id,
            kind: NodeKind::And,
            children: children.into_iter().map(|c| (c, 1.0)).collect(),
        }
    }

    pub fn or(id: SymbolId, children: Vec<(SymbolId, f64)>) -> Self {
        GrammarNode { id, kind: NodeKind::Or, children }
    }

    pub fn terminal(id: SymbolId) -> Self {
        GrammarNode { id, kind: NodeKind::Terminal, children: vec![] }
    }

    pub fn child_ids(&self) -> impl Iterator<Item = &SymbolId> {
        self.children.iter().map(|(c, _)| c)
    }
}

/// One invariant violation found by [`Grammar::validate`]. Violations are
/// data, not failures; an empty report means the grammar is valid.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct Violation {
    pub code: &'static str,
    pub node: Option<String>,
    pub detail: String,
}

impl Violation {
    fn new(code: &'static str, node: Option<&SymbolId>, detail: String) -> Self {
        Violation { code, node: node.map(|n| n.name.clone()), detail }
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.node {
            Some(n) => write!(f, "{} at {}: {}", self.code, n, self.detail),
            None => write!(f, "{}: {}", self.code, self.detail),
        }
    }
}

/// An AND-OR grammar over one layer.
#[derive(Debug, Clone, PartialEq)]
pub struct Grammar {
    pub layer: Layer,
    pub start: SymbolId,
    pub terminals: BTreeSet<SymbolId>,
    pub nodes: BTreeMap<SymbolId, GrammarNode>,
}

impl Grammar {
    pub fn new(layer: Layer, start: &str) -> Self {
        Grammar {
            layer,
            start: SymbolId::new(start, layer),
            terminals: BTreeSet::new(),
            nodes: BTreeMap::new(),
        }
    }

    pub fn sym(&self, name: &str) -> SymbolId {
        SymbolId::new(name, self.layer)
    }

    pub fn add_terminal(&mut self, name: &str) -> &mut Self {
        self.terminals.insert(self.sym(name));
        self
    }

    pub fn add_and(&mut self, name: &str, children: &[&str]) -> &mut Self {
        let id = self.sym(name);
        let kids = children.iter().map(|c| self.sym(c)).collect();
        self.nodes.insert(id.clone(), GrammarNode::and(id, kids));
        self
    }

    pub fn add_or(&mut self, name: &str, children: &[(&str, f64)]) -> &mut Self {
        let id = self.sym(name);
        let kids = children.iter().map(|(c, w)| (self.sym(c), *w)).collect();
        self.nodes.insert(id.clone(), GrammarNode::or(id, kids));
        self
    }

    pub fn is_terminal(&self, id: &SymbolId) -> bool {
        self.terminals.contains(id)
    }

    pub fn node(&self, id: &SymbolId) -> Option<&GrammarNode> {
        self.nodes.get(id)
    }

    /// Uniform kind lookup across the node map and the terminal set.
    pub fn kind_of(&self, id: &SymbolId) -> Option<NodeKind> {
        if let Some(n) = self.nodes.get(id) {
            Some(n.kind)
        } else if self.terminals.contains(id) {
            Some(NodeKind::Terminal)
        } else {
            None
        }
    }

    /// Every symbol reachable from the start by the child relation,
    /// including the start itself.
    pub fn reachable(&self) -> BTreeSet<SymbolId> {
        let mut seen = BTreeSet::new();
        let mut queue = VecDeque::new();
        if self.nodes.contains_key(&self.start) || self.terminals.contains(&self.start) {
            seen.insert(self.start.clone());
            queue.push_back(self.start.clone());
        }
        while let Some(id) = queue.pop_front() {
            if let Some(node) = self.nodes.get(&id) {
                for (child, _) in &node.children {
                    if seen.insert(child.clone()) {
                        queue.push_back(child.clone());
                    }
                }
            }
        }
        seen
    }

    /// Checks every structural invariant and returns one entry per
    /// violation. The report is sorted and deterministic.
    pub fn validate(&self) -> Vec<Violation> {
        let mut out = Vec::new();

        let mut names: BTreeMap<&str, usize> = BTreeMap::new();
        for t in &self.terminals {
            *names.entry(t.name.as_str()).or_insert(0) += 1;
            if let Some(v) = SymbolId::name_violation(&t.name) {
                out.push(Violation::new("symbol-name", Some(t), v));
            }
            if t.layer != self.layer {
                out.push(Violation::new(
                    "layer-mismatch",
                    Some(t),
                    format!("terminal layer {} differs from grammar layer {}", t.layer, self.layer),
                ));
            }
        }
        for (id, node) in &self.nodes {
            *names.entry(id.name.as_str()).or_insert(0) += 1;
            if let Some(v) = SymbolId::name_violation(&id.name) {
                out.push(Violation::new("symbol-name", Some(id), v));
            }
            if id.layer != self.layer {
                out.push(Violation::new(
                    "layer-mismatch",
                    Some(id),
                    format!("node layer {} differs from grammar layer {}", id.layer, self.layer),
                ));
            }
            if node.id != *id {
                out.push(Violation::new(
                    "node-id-mismatch",
                    Some(id),
                    format!("node stored under {} carries id {}", id, node.id),
                ));
            }
            match node.kind {
                NodeKind::Terminal => {
                    out.push(Violation::new(
                        "terminal-in-nodes",
                        Some(id),
                        "terminal-kind node stored in the non-terminal map".to_string(),
                    ));
                    if !node.children.is_empty() {
                        out.push(Violation::new(
                            "terminal-has-children",
                            Some(id),
                            format!("terminal has {} children", node.children.len()),
                        ));
                    }
                }
                NodeKind::And => {
                    if node.children.len() < 2 {
                        out.push(Violation::new(
                            "and-children",
                            Some(id),
                            format!("And node has {} children, needs at least 2", node.children.len()),
                        ));
                    }
                }
                NodeKind::Or => {
                    if node.children.is_empty() {
                        out.push(Violation::new(
                            "or-children",
                            Some(id),
                            "Or node has no children".to_string(),
                        ));
                    } else {
                        let mut sum = 0.0;
                        for (child, w) in &node.children {
                            if !w.is_finite() || *w <= 0.0 || *w > 1.0 + OR_WEIGHT_EPS {
                                out.push(Violation::new(
                                    "or-weight-range",
                                    Some(id),
                                    format!("edge to {child} has weight {w} outside (0,1]"),
                                ));
                            }
                            sum += w;
                        }
                        if (sum - 1.0).abs() > OR_WEIGHT_EPS {
                            out.push(Violation::new(
                                "or-weights-sum",
                                Some(id),
                                format!("edge weights sum to {sum}, expected 1"),
                            ));
                        }
                    }
                }
            }
            for (child, _) in &node.children {
                if !self.nodes.contains_key(child) && !self.terminals.contains(child) {
                    out.push(Violation::new(
                        "dangling-child",
                        Some(id),
                        format!("child {child} is not declared as a node or terminal"),
                    ));
                }
            }
        }
        for (name, count) in names {
            if count > 1 {
                out.push(Violation {
                    code: "duplicate-symbol",
                    node: Some(name.to_string()),
                    detail: format!("symbol {name} declared {count} times"),
                });
            }
        }

        if !self.nodes.contains_key(&self.start) {
            out.push(Violation::new(
                "start-missing",
                Some(&self.start),
                "start symbol is not a non-terminal of the grammar".to_string(),
            ));
        }

        // Cycle check over the child relation, non-terminals only.
        let mut state: BTreeMap<&SymbolId, u8> = BTreeMap::new();
        let mut cycles: BTreeSet<String> = BTreeSet::new();
        for id in self.nodes.keys() {
            if state.get(id).copied().unwrap_or(0) == 0 {
                self.dfs_cycles(id, &mut state, &mut cycles);
            }
        }
        for name in cycles {
            out.push(Violation {
                code: "cycle",
                node: Some(name.clone()),
                detail: format!("node {name} participates in a child-relation cycle"),
            });
        }

        let reachable = self.reachable();
        for id in self.nodes.keys() {
            if !reachable.contains(id) {
                out.push(Violation::new(
                    "unreachable-node",
                    Some(id),
                    "non-terminal is not reachable from the start symbol".to_string(),
                ));
            }
        }

        out.sort();
        out.dedup();
        out
    }

    fn dfs_cycles<'a>(
        &'a self,
        id: &'a SymbolId,
        state: &mut BTreeMap<&'a SymbolId, u8>,
        cycles: &mut BTreeSet<String>,
    ) {
        state.insert(id, 1);
        if let Some(node) = self.nodes.get(id) {
            for (child, _) in &node.children {
                match state.get(child).copied().unwrap_or(0) {
                    0 => {
                        if self.nodes.contains_key(child) {
                            self.dfs_cycles(child, state, cycles);
                        }
                    }
                    1 => {
                        cycles.insert(child.name.clone());
                    }
                    _ => {}
                }
            }
        }
        state.insert(id, 2);
    }

    pub fn ensure_valid(&self) -> Result<()> {
        let report = self.validate();
        if report.is_empty() {
            Ok(())
        } else {
            let joined = report.iter().map(|v| v.to_string()).collect::<Vec<_>>().join("; ");
            Err(Error::InvalidGrammar(joined))
        }
    }

    /// Number of non-terminals plus the number of distinct terminals
    /// reachable from the start. Terminals merely declared in the
    /// vocabulary do not count, so the measure is insensitive to padding.
    pub fn node_count(&self) -> usize {
        let reachable = self.reachable();
        let reachable_terminals = reachable.iter().filter(|s| self.terminals.contains(*s)).count();
        self.nodes.len() + reachable_terminals
    }

    /// Expands the start symbol top down. And nodes emit all children in
    /// order, Or nodes sample one child by edge weight from a ChaCha
    /// stream seeded with `seed`. Returns the left-to-right terminal
    /// frontier.
    pub fn sample_derivation(&self, seed: u64) -> Result<Vec<SymbolId>> {
        self.ensure_valid()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut out = Vec::new();
        self.expand(&self.start, &mut rng, &mut out);
        Ok(out)
    }

    fn expand(&self, id: &SymbolId, rng: &mut ChaCha8Rng, out: &mut Vec<SymbolId>) {
        if self.terminals.contains(id) {
            out.push(id.clone());
            return;
        }
        let node = &self.nodes[id];
        match node.kind {
            NodeKind::Terminal => out.push(id.clone()),
            NodeKind::And => {
                for (child, _) in &node.children {
                    self.expand(child, rng, out);
                }
            }
            NodeKind::Or => {
                let u: f64 = rng.random();
                let total: f64 = node.children.iter().map(|(_, w)| w).sum();
                let mut acc = 0.0;
                let mut chosen = &node.children[node.children.len() - 1].0;
                for (child, w) in &node.children {
                    acc += w / total;
                    if u < acc {
                        chosen = child;
                        break;
                    }
                }
                self.expand(chosen, rng, out);
            }
        }
    }

    /// All distinct terminal frontiers derivable from `id`, in Or-choice
    /// DFS order, capped at `cap` variants.
    pub fn frontier_variants(&self, id: &SymbolId, cap: usize) -> Vec<Vec<SymbolId>> {
        let mut out = Vec::new();
        self.variants_rec(id, &mut out, cap);
        out
    }

    fn variants_rec(&self, id: &SymbolId, out: &mut Vec<Vec<SymbolId>>, cap: usize) {
        if self.terminals.contains(id) || !self.nodes.contains_key(id) {
            out.push(vec![id.clone()]);
            return;
        }
        let node = &self.nodes[id];
        match node.kind {
            NodeKind::Terminal => out.push(vec![id.clone()]),
            NodeKind::Or => {
                for (child, _) in &node.children {
                    if out.len() >= cap {
                        return;
                    }
                    self.variants_rec(child, out, cap);
                }
            }
            NodeKind::And => {
                let mut acc: Vec<Vec<SymbolId>> = vec![vec![]];
                for (child, _) in &node.children {
                    let mut child_variants = Vec::new();
                    self.variants_rec(child, &mut child_variants, cap);
                    let mut next = Vec::new();
                    for prefix in &acc {
                        for cv in &child_variants {
                            if next.len() + out.len() >= cap {
                                break;
                            }
                            let mut row = prefix.clone();
                            row.extend(cv.iter().cloned());
                            next.push(row);
                        }
                    }
                    acc = next;
                }
                out.extend(acc);
            }
        }
    }

    /// Deterministic DOT text: And nodes as boxes, Or nodes as diamonds,
    /// terminals as ellipses, Or edges labeled with the probability to
    /// three decimals. Node order is lexicographic by id.
    pub fn export_dot(&self) -> Result<String> {
        self.ensure_valid()?;
        Ok(self.dot_body("aog", ""))
    }

    pub(crate) fn dot_body(&self, graph_name: &str, id_prefix: &str) -> String {
        let mut s = String::new();
        s.push_str(&format!("digraph {graph_name} {{\n"));
        for t in &self.terminals {
            s.push_str(&format!(
                "  \"{p}{n}\" [shape=ellipse, label=\"{n}\"];\n",
                p = id_prefix,
                n = t.name
            ));
        }
        for (id, node) in &self.nodes {
            let shape = match node.kind {
                NodeKind::And => "box",
                NodeKind::Or => "diamond",
                NodeKind::Terminal => "ellipse",
            };
            s.push_str(&format!(
                "  \"{p}{n}\" [shape={shape}, label=\"{n}\"];\n",
                p = id_prefix,
                n = id.name
            ));
        }
        for (id, node) in &self.nodes {
            for (child, w) in &node.children {
                match node.kind {
                    NodeKind::Or => s.push_str(&format!(
                        "  \"{p}{a}\" -> \"{p}{b}\" [label=\"{w:.3}\"];\n",
                        p = id_prefix,
                        a = id.name,
                        b = child.name
                    )),
                    _ => s.push_str(&format!(
                        "  \"{p}{a}\" -> \"{p}{b}\";\n",
                        p = id_prefix,
                        a = id.name,
                        b = child.name
                    )),
                }
            }
        }
        s.push_str("}\n");
        s
    }

    /// Canonical JSON document. Terminal and node arrays are sorted by
    /// id; Or children are ordered lexicographically so equal grammars
    /// serialize to identical bytes. And children keep their meaningful
    /// order.
    pub fn to_doc(&self) -> GrammarDoc {
        let mut nodes: Vec<NodeDoc> = self
            .nodes
            .values()
            .map(|n| {
                let mut children: Vec<ChildDoc> = n
                    .children
                    .iter()
                    .map(|(c, p)| ChildDoc { id: c.name.clone(), p: *p })
                    .collect();
                if n.kind == NodeKind::Or {
                    children.sort_by(|a, b| a.id.cmp(&b.id));
                }
                NodeDoc {
                    id: n.id.name.clone(),
                    kind: n.kind.to_string(),
                    children,
                }
            })
            .collect();
        nodes.sort_by(|a, b| a.id.cmp(&b.id));
        GrammarDoc {
            layer: self.layer.to_string(),
            start: self.start.name.clone(),
            terminals: self.terminals.iter().map(|t| t.name.clone()).collect(),
            nodes,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.to_doc()).expect("grammar doc serializes")
    }

    pub fn from_doc(doc: &GrammarDoc) -> Result<Grammar> {
        let layer = Layer::from_tag(&doc.layer)
            .ok_or_else(|| Error::Format(format!("unknown layer {:?}", doc.layer)))?;
        let mut g = Grammar::new(layer, &doc.start);
        for t in &doc.terminals {
            g.add_terminal(t);
        }
        for n in &doc.nodes {
            let id = g.sym(&n.id);
            let node = match n.kind.as_str() {
                "And" => GrammarNode::and(id.clone(), n.children.iter().map(|c| g.sym(&c.id)).collect()),
                "Or" => GrammarNode::or(
                    id.clone(),
                    n.children.iter().map(|c| (g.sym(&c.id), c.p)).collect(),
                ),
                "Terminal" => GrammarNode::terminal(id.clone()),
                other => return Err(Error::Format(format!("unknown node kind {other:?}"))),
            };
            g.nodes.insert(id, node);
        }
        Ok(g)
    }

    pub fn from_json(json: &str) -> Result<Grammar> {
        let doc: GrammarDoc = serde_json::from_str(json)?;
        Grammar::from_doc(&doc)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GrammarDoc {
    pub layer: String,
    pub start: String,
    pub terminals: Vec<String>,
    pub nodes: Vec<NodeDoc>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NodeDoc {
    pub id: String,
    pub kind: String,
    pub children: Vec<ChildDoc>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ChildDoc {
    pub id: String,
    pub p: f64,
}

#[cfg(test)]
mod tests {
    use super::*;

    /// The tunnel task: encapsulate, route, decapsulate over the four
    /// packet micro-actions.
    pub(crate) fn tunnel_grammar() -> Grammar {
        let mut g = Grammar::new(Layer::Temporal, "Task");
        for t in ["A1", "A2", "A3", "A4"] {
            g.add_terminal(t);
        }
        g.add_and("Task", &["Enc", "Route", "Dec"]);
        g.add_and("Enc", &["A3", "A2"]);
        g.add_and("Route", &["A3", "A4"]);
        g.add_and("Dec", &["A3", "A1"]);
        g
    }

    fn names(syms: &[SymbolId]) -> Vec<&str> {
        syms.iter().map(|s| s.name.as_str()).collect()
    }

    #[test]
    fn validate_accepts_weighted_or() {
        let mut g = Grammar::new(Layer::Spatial, "S");
        g.add_terminal("a").add_terminal("b");
        g.add_or("S", &[("a", 0.7), ("b", 0.3)]);
        assert!(g.validate().is_empty());
    }

    #[test]
    fn validate_flags_bad_or_sum() {
        let mut g = Grammar::new(Layer::Spatial, "S");
        g.add_terminal("a").add_terminal("b");
        g.add_or("S", &[("a", 0.7), ("b", 0.2)]);
        let report = g.validate();
        assert_eq!(report.len(), 1);
        assert_eq!(report[0].code, "or-weights-sum");
        assert_eq!(report[0].node.as_deref(), Some("S"));
    }

    #[test]
    fn validate_flags_dangling_child() {
        let mut g = Grammar::new(Layer::Spatial, "X");
        g.add_terminal("a");
        g.add_and("X", &["a", "Y"]);
        let report = g.validate();
        assert!(report.iter().any(|v| v.code == "dangling-child" && v.node.as_deref() == Some("X")));
    }

    #[test]
    fn validate_flags_cycles_and_unreachable() {
        let mut g = Grammar::new(Layer::Spatial, "S");
        g.add_terminal("a");
        g.add_and("S", &["A", "a"]);
        g.add_and("A", &["S", "a"]);
        g.add_and("Lost", &["a", "a"]);
        let report = g.validate();
        assert!(report.iter().any(|v| v.code == "cycle"));
        assert!(report.iter().any(|v| v.code == "unreachable-node" && v.node.as_deref() == Some("Lost")));
    }

    #[test]
    fn sample_and_only_is_seed_independent() {
        let mut g = Grammar::new(Layer::Temporal, "S");
        g.add_terminal("A3").add_terminal("A2");
        g.add_and("S", &["A3", "A2"]);
        let base = g.sample_derivation(0).unwrap();
        assert_eq!(names(&base), ["A3", "A2"]);
        for seed in 1..100u64 {
            assert_eq!(g.sample_derivation(seed).unwrap(), base);
        }
    }

    #[test]
    fn sample_tunnel_task_sequence() {
        let g = tunnel_grammar();
        let frontier = g.sample_derivation(7).unwrap();
        assert_eq!(names(&frontier), ["A3", "A2", "A3", "A4", "A3", "A1"]);
    }

    #[test]
    fn sample_single_child_or() {
        let mut g = Grammar::new(Layer::Spatial, "S");
        g.add_terminal("a");
        g.add_or("S", &[("a", 1.0)]);
        for seed in 0..20u64 {
            assert_eq!(names(&g.sample_derivation(seed).unwrap()), ["a"]);
        }
    }

    #[test]
    fn node_count_rules() {
        let empty = Grammar::new(Layer::Spatial, "S");
        assert_eq!(empty.node_count(), 0);

        let g = tunnel_grammar();
        assert_eq!(g.node_count(), 8);

        let mut padded = g.clone();
        padded.add_terminal("A9");
        assert_eq!(padded.node_count(), 8);
    }

    #[test]
    fn export_dot_single_terminal_reachable_through_or() {
        let mut g = Grammar::new(Layer::Spatial, "S");
        g.add_terminal("A1");
        g.add_or("S", &[("A1", 1.0)]);
        let dot = g.export_dot().unwrap();
        let ellipses: Vec<&str> = dot.lines().filter(|l| l.contains("shape=ellipse")).collect();
        assert_eq!(ellipses.len(), 1);
        assert!(ellipses[0].contains("label=\"A1\""));
    }

    #[test]
    fn export_dot_labels_and_determinism() {
        let mut g = Grammar::new(Layer::Spatial, "S");
        g.add_terminal("a").add_terminal("b");
        g.add_or("S", &[("a", 0.5), ("b", 0.5)]);
        let dot = g.export_dot().unwrap();
        assert_eq!(dot.matches("label=\"0.500\"").count(), 2);
        assert_eq!(dot, g.export_dot().unwrap());
    }

    #[test]
    fn json_round_trip_preserves_structure() {
        let g = tunnel_grammar();
        let json = g.to_json();
        let back = Grammar::from_json(&json).unwrap();
        assert_eq!(g, back);
        assert_eq!(json, back.to_json());
    }

    #[test]
    fn invalid_grammar_refuses_sampling() {
        let mut g = Grammar::new(Layer::Spatial, "S");
        g.add_terminal("a").add_terminal("b");
        g.add_or("S", &[("a", 0.7), ("b", 0.2)]);
        let err = g.sample_derivation(1).unwrap_err();
        assert!(err.to_string().starts_with("invalid-grammar"));
    }
}
