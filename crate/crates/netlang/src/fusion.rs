//! Fusing the three layer grammars into one STC-AOG.
//!
//! Spatial structure hangs under temporal terminals (micro-actions act
//! on entities), temporal operations hang under causal value terminals
//! (operations cause state changes). Cross links carry the conditional
//! probabilities estimated from corpus counts.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::caog::value_matcher;
use crate::error::{Error, Result};
use crate::grammar::{Grammar, GrammarDoc, Violation};
use crate::induction::MicroActionUse;
use crate::symbol::SymbolId;
use crate::trace::FeatureRecord;

const TIE_EPS: f64 = 1e-9;

/// A conditional-probability edge between adjacent layers.
#[derive(Debug, Clone, PartialEq)]
pub struct CrossLink {
    pub from: SymbolId,
    pub to: SymbolId,
    pub p: f64,
}

/// The fused grammar: three layers plus the cross links. Causal value
/// terminals with no temporal link are listed as exogenous.
#[derive(Debug, Clone, PartialEq)]
pub struct StcAog {
    pub s: Grammar,
    pub t: Grammar,
    pub c: Grammar,
    pub links_ts: Vec<CrossLink>,
    pub links_ct: Vec<CrossLink>,
    pub exogenous: Vec<SymbolId>,
}

/// How micro-actions bind to spatial nodes: a hard argmax link per
/// action (the default), or one link per observed target with its
/// conditional probability.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum LinkMode {
    #[default]
    Argmax,
    Soft,
}

/// Estimates which spatial node each micro-action consumes and links
/// the action to the most likely one. Ties break lexicographically.
/// Temporal terminals with no recorded use are reported back as
/// coverage warnings.
pub fn link_s_to_t(
    s: &Grammar,
    t: &Grammar,
    uses: &[MicroActionUse],
) -> Result<(Vec<CrossLink>, Vec<String>)> {
    link_s_to_t_mode(s, t, uses, LinkMode::Argmax)
}

pub fn link_s_to_t_mode(
    s: &Grammar,
    t: &Grammar,
    uses: &[MicroActionUse],
    mode: LinkMode,
) -> Result<(Vec<CrossLink>, Vec<String>)> {
    if uses.is_empty() {
        return Err(Error::UnannotatedCorpus("no micro-action uses supplied".to_string()));
    }
    let mut warnings = Vec::new();
    let mut by_action: BTreeMap<String, BTreeMap<String, u64>> = BTreeMap::new();
    for u in uses {
        let Some(target) = resolve_s_node(s, u) else {
            warnings.push(format!(
                "use of {} does not resolve to a spatial node (entities {:?})",
                u.action, u.entities
            ));
            continue;
        };
        *by_action.entry(u.action.clone()).or_default().entry(target).or_insert(0) += u.count;
    }

    let mut links = Vec::new();
    for term in &t.terminals {
        match by_action.get(&term.name) {
            None => warnings.push(format!("micro-action {} never observed; no link", term.name)),
            Some(counts) => {
                let total: u64 = counts.values().sum();
                match mode {
                    LinkMode::Argmax => {
                        let best = counts
                            .iter()
                            .max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(a.0)))
                            .expect("non-empty counts");
                        links.push(CrossLink {
                            from: term.clone(),
                            to: SymbolId::spatial(best.0.clone()),
                            p: *best.1 as f64 / total as f64,
                        });
                    }
                    LinkMode::Soft => {
                        for (target, count) in counts {
                            links.push(CrossLink {
                                from: term.clone(),
                                to: SymbolId::spatial(target.clone()),
                                p: *count as f64 / total as f64,
                            });
                        }
                    }
                }
            }
        }
    }
    Ok((links, warnings))
}

fn resolve_s_node(s: &Grammar, u: &MicroActionUse) -> Option<String> {
    if let Some(node) = &u.s_node {
        let id = s.sym(node);
        if s.nodes.contains_key(&id) || s.terminals.contains(&id) {
            return Some(node.clone());
        }
        return None;
    }
    // Match an And fragment whose direct children are the entity group.
    for (id, node) in &s.nodes {
        if node.kind == crate::grammar::NodeKind::And {
            let children: Vec<&str> = node.children.iter().map(|(c, _)| c.name.as_str()).collect();
            if children == u.entities.iter().map(String::as_str).collect::<Vec<_>>() {
                return Some(id.name.clone());
            }
        }
    }
    if u.entities.len() == 1 && s.terminals.contains(&s.sym(&u.entities[0])) {
        return Some(u.entities[0].clone());
    }
    None
}

/// Links each causal value terminal to the operation(s) with the
/// highest conditional probability of producing that value. Operations
/// tying within 1e-9 are all linked; values never observed stay
/// unlinked and are reported as exogenous.
pub fn link_t_to_c(
    t: &Grammar,
    c: &Grammar,
    dataset: &[(String, FeatureRecord)],
) -> Result<(Vec<CrossLink>, Vec<SymbolId>)> {
    if dataset.is_empty() {
        return Err(Error::UntaggedDataset("empty operation-tagged dataset".to_string()));
    }
    let root = t
        .nodes
        .get(&t.start)
        .ok_or_else(|| Error::InvalidGrammar("temporal grammar has no start node".to_string()))?;
    let operations: Vec<String> = root.children.iter().map(|(cid, _)| cid.name.clone()).collect();
    let mut op_totals: BTreeMap<&str, u64> = BTreeMap::new();
    for (op, _) in dataset {
        if operations.iter().any(|o| o == op) {
            *op_totals.entry(op.as_str()).or_insert(0) += 1;
        }
    }
    if op_totals.is_empty() {
        return Err(Error::UntaggedDataset(
            "no record carries a known operation tag".to_string(),
        ));
    }

    let reachable = c.reachable();
    let mut links = Vec::new();
    let mut exogenous = Vec::new();
    for value in &c.terminals {
        if !reachable.contains(value) {
            continue;
        }
        let Some(matcher) = value_matcher(c, value) else {
            exogenous.push(value.clone());
            continue;
        };
        let mut conditional: BTreeMap<&str, (u64, u64)> = BTreeMap::new();
        for (op, record) in dataset {
            let Some(total) = op_totals.get(op.as_str()) else {
                continue;
            };
            let entry = conditional.entry(op.as_str()).or_insert((0, *total));
            if matcher.matches(record) {
                entry.0 += 1;
            }
        }
        let probs: Vec<(&str, f64)> = conditional
            .iter()
            .map(|(op, (hits, total))| (*op, *hits as f64 / *total as f64))
            .collect();
        let best = probs.iter().map(|(_, p)| *p).fold(0.0f64, f64::max);
        if best <= 0.0 {
            exogenous.push(value.clone());
            continue;
        }
        for (op, p) in probs {
            if (best - p).abs() <= TIE_EPS {
                links.push(CrossLink {
                    from: value.clone(),
                    to: SymbolId::temporal(op.to_string()),
                    p,
                });
            }
        }
    }
    Ok((links, exogenous))
}

/// Assembles and checks the composite. Links referencing symbols absent
/// from their grammar are an error.
pub fn fuse(
    s: Grammar,
    t: Grammar,
    c: Grammar,
    links_ts: Vec<CrossLink>,
    links_ct: Vec<CrossLink>,
) -> Result<StcAog> {
    s.ensure_valid()?;
    t.ensure_valid()?;
    c.ensure_valid()?;
    for link in &links_ts {
        if !t.terminals.contains(&link.from) {
            return Err(Error::DanglingLink(format!(
                "link source {} is not a temporal terminal",
                link.from
            )));
        }
        if !s.nodes.contains_key(&link.to) && !s.terminals.contains(&link.to) {
            return Err(Error::DanglingLink(format!(
                "link target {} is not a spatial symbol",
                link.to
            )));
        }
    }
    for link in &links_ct {
        if !c.terminals.contains(&link.from) {
            return Err(Error::DanglingLink(format!(
                "link source {} is not a causal terminal",
                link.from
            )));
        }
        if !t.nodes.contains_key(&link.to) && !t.terminals.contains(&link.to) {
            return Err(Error::DanglingLink(format!(
                "link target {} is not a temporal symbol",
                link.to
            )));
        }
    }
    let linked: BTreeSet<&SymbolId> = links_ct.iter().map(|l| &l.from).collect();
    let reachable = c.reachable();
    let exogenous: Vec<SymbolId> = c
        .terminals
        .iter()
        .filter(|v| reachable.contains(*v) && !linked.contains(*v))
        .cloned()
        .collect();
    let mut fused = StcAog { s, t, c, links_ts, links_ct, exogenous };
    fused.links_ts.sort_by(|a, b| a.from.cmp(&b.from).then(a.to.cmp(&b.to)));
    fused.links_ct.sort_by(|a, b| a.from.cmp(&b.from).then(a.to.cmp(&b.to)));
    Ok(fused)
}

impl StcAog {
    /// Aggregated invariant report across layers and links.
    pub fn validate(&self) -> Vec<Violation> {
        let mut out = Vec::new();
        for (layer, g) in [("s", &self.s), ("t", &self.t), ("c", &self.c)] {
            for mut v in g.validate() {
                v.detail = format!("[{layer}] {}", v.detail);
                out.push(v);
            }
        }
        let mut per_from: BTreeMap<&SymbolId, f64> = BTreeMap::new();
        for l in self.links_ts.iter().chain(self.links_ct.iter()) {
            if !(l.p > 0.0 && l.p <= 1.0 + TIE_EPS) {
                out.push(Violation {
                    code: "link-probability",
                    node: Some(l.from.name.clone()),
                    detail: format!("link {}->{} has probability {}", l.from, l.to, l.p),
                });
            }
            *per_from.entry(&l.from).or_insert(0.0) += l.p;
        }
        let linked_ts: BTreeSet<&SymbolId> = self.links_ts.iter().map(|l| &l.from).collect();
        for term in &self.t.terminals {
            if !linked_ts.contains(term) {
                out.push(Violation {
                    code: "unlinked-micro-action",
                    node: Some(term.name.clone()),
                    detail: format!("temporal terminal {term} has no spatial link"),
                });
            }
        }
        let linked_ct: BTreeSet<&SymbolId> = self.links_ct.iter().map(|l| &l.from).collect();
        let reachable = self.c.reachable();
        for value in &self.c.terminals {
            if reachable.contains(value)
                && !linked_ct.contains(value)
                && !self.exogenous.contains(value)
            {
                out.push(Violation {
                    code: "unlinked-value",
                    node: Some(value.name.clone()),
                    detail: format!("causal value {value} has no temporal link and is not marked exogenous"),
                });
            }
        }
        out.sort();
        out
    }

    pub fn links_from_value<'a>(&'a self, value: &SymbolId) -> Vec<&'a CrossLink> {
        self.links_ct.iter().filter(|l| l.from == *value).collect()
    }

    pub fn link_for_action<'a>(&'a self, action: &SymbolId) -> Option<&'a CrossLink> {
        self.links_ts.iter().find(|l| l.from == *action)
    }

    pub fn to_doc(&self) -> StcAogDoc {
        StcAogDoc {
            s: self.s.to_doc(),
            t: self.t.to_doc(),
            c: self.c.to_doc(),
            links_ts: self.links_ts.iter().map(LinkDoc::from).collect(),
            links_ct: self.links_ct.iter().map(LinkDoc::from).collect(),
            exogenous: self.exogenous.iter().map(|s| s.name.clone()).collect(),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.to_doc()).expect("stc doc serializes")
    }

    pub fn from_json(json: &str) -> Result<StcAog> {
        let doc: StcAogDoc = serde_json::from_str(json)?;
        let s = Grammar::from_doc(&doc.s)?;
        let t = Grammar::from_doc(&doc.t)?;
        let c = Grammar::from_doc(&doc.c)?;
        let links_ts = doc
            .links_ts
            .iter()
            .map(|l| CrossLink {
                from: SymbolId::temporal(l.from.clone()),
                to: SymbolId::spatial(l.to.clone()),
                p: l.p,
            })
            .collect();
        let links_ct = doc
            .links_ct
            .iter()
            .map(|l| CrossLink {
                from: SymbolId::causal(l.from.clone()),
                to: SymbolId::temporal(l.to.clone()),
                p: l.p,
            })
            .collect();
        let exogenous = doc.exogenous.iter().map(|n| SymbolId::causal(n.clone())).collect();
        Ok(StcAog { s, t, c, links_ts, links_ct, exogenous })
    }

    /// DOT rendering of all three layers with dashed cross links.
    pub fn export_dot(&self) -> Result<String> {
        self.s.ensure_valid()?;
        self.t.ensure_valid()?;
        self.c.ensure_valid()?;
        let mut out = String::from("digraph stc_aog {\n");
        for (prefix, name, g) in [("C::", "causal", &self.c), ("T::", "temporal", &self.t), ("S::", "spatial", &self.s)] {
            out.push_str(&format!("  subgraph cluster_{name} {{\n    label=\"{name}\";\n"));
            let body = g.dot_body("inner", prefix);
            for line in body.lines() {
                if line.starts_with("  \"") {
                    out.push_str("  ");
                    out.push_str(line);
                    out.push('\n');
                }
            }
            out.push_str("  }\n");
        }
        for l in &self.links_ct {
            out.push_str(&format!(
                "  \"C::{}\" -> \"T::{}\" [style=dashed, label=\"{:.3}\"];\n",
                l.from.name, l.to.name, l.p
            ));
        }
        for l in &self.links_ts {
            out.push_str(&format!(
                "  \"T::{}\" -> \"S::{}\" [style=dashed, label=\"{:.3}\"];\n",
                l.from.name, l.to.name, l.p
            ));
        }
        out.push_str("}\n");
        Ok(out)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StcAogDoc {
    pub s: GrammarDoc,
    pub t: GrammarDoc,
    pub c: GrammarDoc,
    pub links_ts: Vec<LinkDoc>,
    pub links_ct: Vec<LinkDoc>,
    #[serde(default)]
    pub exogenous: Vec<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LinkDoc {
    pub from: String,
    pub to: String,
    pub p: f64,
}

impl From<&CrossLink> for LinkDoc {
    fn from(l: &CrossLink) -> Self {
        LinkDoc { from: l.from.name.clone(), to: l.to.name.clone(), p: l.p }
    }
}
