//! Interpreting observed traces against an STC-AOG.
//!
//! A parse fixes one child per encountered Or choice across all three
//! layers so that the spatial/temporal frontier reproduces the observed
//! probe path and the causal selections agree with the observed feature
//! values (evidence pins them; unobserved features stay unselected).
//! The log-likelihood sums the chosen Or-edge weights and the traversed
//! cross-link probabilities. `viterbi_parse` maximizes by max-product
//! dynamic programming over path positions; `brute_force_parse`
//! enumerates every selection combination and exists to cross-check it.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::caog::value_matcher;
use crate::error::{Error, Result};
use crate::fusion::StcAog;
use crate::grammar::{Grammar, NodeKind};
use crate::symbol::SymbolId;
use crate::trace::Trace;

/// A deterministic interpretation of one trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParseGraph {
    pub trace_id: String,
    pub log_likelihood: f64,
    /// Or-node id (suffixed `@k` for repeated occurrences within one
    /// derivation) or causal value id, mapped to the chosen child.
    pub selections: BTreeMap<String, String>,
}

impl ParseGraph {
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("parse graph serializes")
    }

    pub fn from_json(json: &str) -> Result<ParseGraph> {
        Ok(serde_json::from_str(json)?)
    }
}

/// Ordered selection picks of one derivation, turned into the
/// occurrence-keyed map at the end.
fn key_picks(picks: &[(String, String)]) -> BTreeMap<String, String> {
    let mut totals: BTreeMap<&str, usize> = BTreeMap::new();
    for (name, _) in picks {
        *totals.entry(name).or_insert(0) += 1;
    }
    let mut seen: BTreeMap<&str, usize> = BTreeMap::new();
    let mut out = BTreeMap::new();
    for (name, child) in picks {
        let k = seen.entry(name).or_insert(0);
        let key = if totals[name.as_str()] == 1 {
            name.clone()
        } else {
            format!("{name}@{k}")
        };
        *k += 1;
        out.insert(key, child.clone());
    }
    out
}

#[derive(Debug, Clone)]
struct Branch {
    end: usize,
    ll: f64,
    picks: Vec<(String, String)>,
}

/// Keeps the best branch per end position: higher likelihood first,
/// lexicographically smaller pick list on exact ties.
fn prune(mut branches: Vec<Branch>) -> Vec<Branch> {
    branches.sort_by(|a, b| {
        a.end
            .cmp(&b.end)
            .then(b.ll.partial_cmp(&a.ll).unwrap_or(std::cmp::Ordering::Equal))
            .then(a.picks.cmp(&b.picks))
    });
    branches.dedup_by_key(|b| b.end);
    branches
}

struct Matcher<'a> {
    aog: &'a StcAog,
    path: &'a [String],
    exhaustive: bool,
    leaves: u64,
    cap: u64,
}

impl<'a> Matcher<'a> {
    fn match_t(&mut self, sym: &SymbolId, pos: usize) -> Result<Vec<Branch>> {
        if self.aog.t.terminals.contains(sym) {
            let Some(link) = self.aog.link_for_action(sym) else {
                return Ok(vec![]);
            };
            let mut out = Vec::new();
            for b in self.match_s(&link.to, pos)? {
                out.push(Branch { end: b.end, ll: b.ll + link.p.ln(), picks: b.picks });
            }
            return Ok(out);
        }
        let Some(node) = self.aog.t.node(sym) else {
            return Ok(vec![]);
        };
        match node.kind {
            NodeKind::Terminal => Ok(vec![]),
            NodeKind::And => {
                let mut acc = vec![Branch { end: pos, ll: 0.0, picks: vec![] }];
                for (child, _) in &node.children {
                    let mut next = Vec::new();
                    for b in &acc {
                        for c in self.match_t(child, b.end)? {
                            let mut picks = b.picks.clone();
                            picks.extend(c.picks);
                            next.push(Branch { end: c.end, ll: b.ll + c.ll, picks });
                        }
                    }
                    acc = if self.exhaustive { next } else { prune(next) };
                    if acc.is_empty() {
                        break;
                    }
                }
                Ok(acc)
            }
            NodeKind::Or => {
                let mut out = Vec::new();
                let multi = node.children.len() > 1;
                for (child, w) in &node.children {
                    for mut b in self.match_t(child, pos)? {
                        if multi {
                            b.picks.insert(0, (sym.name.clone(), child.name.clone()));
                        }
                        b.ll += w.ln();
                        out.push(b);
                    }
                }
                Ok(if self.exhaustive { out } else { prune(out) })
            }
        }
    }

    fn match_s(&mut self, sym: &SymbolId, pos: usize) -> Result<Vec<Branch>> {
        if self.aog.s.terminals.contains(sym) {
            if pos < self.path.len() && self.path[pos] == sym.name {
                self.count_leaf()?;
                return Ok(vec![Branch { end: pos + 1, ll: 0.0, picks: vec![] }]);
            }
            return Ok(vec![]);
        }
        let Some(node) = self.aog.s.node(sym) else {
            return Ok(vec![]);
        };
        match node.kind {
            NodeKind::Terminal => Ok(vec![]),
            NodeKind::And => {
                let mut acc = vec![Branch { end: pos, ll: 0.0, picks: vec![] }];
                for (child, _) in &node.children {
                    let mut next = Vec::new();
                    for b in &acc {
                        for c in self.match_s(child, b.end)? {
                            let mut picks = b.picks.clone();
                            picks.extend(c.picks);
                            next.push(Branch { end: c.end, ll: b.ll + c.ll, picks });
                        }
                    }
                    acc = if self.exhaustive { next } else { prune(next) };
                    if acc.is_empty() {
                        break;
                    }
                }
                Ok(acc)
            }
            NodeKind::Or => {
                let mut out = Vec::new();
                let multi = node.children.len() > 1;
                for (child, w) in &node.children {
                    for mut b in self.match_s(child, pos)? {
                        if multi {
                            b.picks.insert(0, (sym.name.clone(), child.name.clone()));
                        }
                        b.ll += w.ln();
                        out.push(b);
                    }
                }
                Ok(if self.exhaustive { out } else { prune(out) })
            }
        }
    }

    fn count_leaf(&mut self) -> Result<()> {
        if self.exhaustive {
            self.leaves += 1;
            if self.leaves > self.cap {
                return Err(Error::CombinatorialCapExceeded(self.leaves, self.cap));
            }
        }
        Ok(())
    }
}

/// Pinned causal selections: evidence walks the causal grammar from the
/// intent root, fixing every value Or whose feature is observed.
struct CausalPins {
    picks: Vec<(String, String)>,
    ll: f64,
    /// Value terminals active under the pinned walk.
    values: Vec<SymbolId>,
}

fn causal_pins(aog: &StcAog, trace: &Trace) -> Result<CausalPins> {
    let mut pins = CausalPins { picks: vec![], ll: 0.0, values: vec![] };
    walk_causal(aog, trace, &aog.c.start, &mut pins)?;
    Ok(pins)
}

fn walk_causal(aog: &StcAog, trace: &Trace, sym: &SymbolId, pins: &mut CausalPins) -> Result<()> {
    if aog.c.terminals.contains(sym) {
        pins.values.push(sym.clone());
        return Ok(());
    }
    let Some(node) = aog.c.node(sym) else {
        return Ok(());
    };
    match node.kind {
        NodeKind::Terminal => pins.values.push(sym.clone()),
        NodeKind::And => {
            for (child, _) in &node.children {
                walk_causal(aog, trace, child, pins)?;
            }
        }
        NodeKind::Or => {
            if node.children.len() == 1 {
                return walk_causal(aog, trace, &node.children[0].0, pins);
            }
            // Pin only pure value Ors over one observed feature.
            let matchers: Vec<_> = node
                .children
                .iter()
                .map(|(c, w)| (c, *w, value_matcher(&aog.c, c)))
                .collect();
            let Some(feature) = matchers
                .iter()
                .map(|(_, _, m)| m.as_ref().map(|m| m.feature.clone()))
                .collect::<Option<Vec<_>>>()
                .and_then(|fs| {
                    fs.windows(2).all(|w| w[0] == w[1]).then(|| fs.first().cloned()).flatten()
                })
            else {
                return Ok(());
            };
            let Some(observed) = trace.features.as_ref().and_then(|f| f.get(&feature)) else {
                return Ok(());
            };
            for (child, w, matcher) in &matchers {
                if matcher.as_ref().expect("checked").bin.contains(observed) {
                    pins.picks.push((sym.name.clone(), child.name.clone()));
                    pins.ll += w.ln();
                    pins.values.push((*child).clone());
                    return Ok(());
                }
            }
            return Err(Error::UnparseableTrace(format!(
                "observed {feature} value matches no alternative of {sym}"
            )));
        }
    }
    Ok(())
}

/// Operations used at the temporal root in one branch.
fn branch_operations(t: &Grammar, picks: &[(String, String)]) -> Vec<String> {
    match t.node(&t.start) {
        Some(node) if node.kind == NodeKind::Or => {
            if node.children.len() == 1 {
                vec![node.children[0].0.name.clone()]
            } else {
                picks
                    .iter()
                    .find(|(name, _)| *name == t.start.name)
                    .map(|(_, child)| vec![child.clone()])
                    .unwrap_or_default()
            }
        }
        Some(node) if node.kind == NodeKind::And => {
            node.children.iter().map(|(c, _)| c.name.clone()).collect()
        }
        _ => vec![t.start.name.clone()],
    }
}

fn finish_branch(
    aog: &StcAog,
    pins: &CausalPins,
    branch: Branch,
    ops: &[String],
    exhaustive: bool,
) -> Vec<(f64, Vec<(String, String)>)> {
    let mut alternatives: Vec<(f64, Vec<(String, String)>)> = vec![(0.0, vec![])];
    for value in &pins.values {
        let links = aog.links_from_value(value);
        if links.is_empty() {
            continue;
        }
        let usable: Vec<_> = links.iter().filter(|l| ops.contains(&l.to.name)).collect();
        if usable.is_empty() {
            return vec![];
        }
        let multi = links.len() > 1;
        if exhaustive {
            let mut next = Vec::new();
            for (ll, picks) in &alternatives {
                for link in &usable {
                    let mut p = picks.clone();
                    if multi {
                        p.push((value.name.clone(), link.to.name.clone()));
                    }
                    next.push((ll + link.p.ln(), p));
                }
            }
            alternatives = next;
        } else {
            let best = usable
                .iter()
                .max_by(|a, b| {
                    a.p.partial_cmp(&b.p)
                        .unwrap_or(std::cmp::Ordering::Equal)
                        .then(b.to.name.cmp(&a.to.name))
                })
                .expect("non-empty");
            for (ll, picks) in &mut alternatives {
                *ll += best.p.ln();
                if multi {
                    picks.push((value.name.clone(), best.to.name.clone()));
                }
            }
        }
    }
    alternatives
        .into_iter()
        .map(|(link_ll, link_picks)| {
            let mut picks = pins.picks.clone();
            picks.extend(link_picks);
            picks.extend(branch.picks.iter().cloned());
            (pins.ll + link_ll + branch.ll, picks)
        })
        .collect()
}

fn parse_common(aog: &StcAog, trace: &Trace, exhaustive: bool, cap: u64) -> Result<ParseGraph> {
    aog.s.ensure_valid()?;
    aog.t.ensure_valid()?;
    aog.c.ensure_valid()?;
    for sym in &trace.path {
        if !aog.s.terminals.contains(&SymbolId::spatial(sym.clone())) {
            return Err(Error::UnparseableTrace(format!(
                "path symbol {sym} is not a spatial terminal"
            )));
        }
    }
    let pins = causal_pins(aog, trace)?;
    let mut matcher = Matcher { aog, path: &trace.path, exhaustive, leaves: 0, cap };
    let mut candidates: Vec<(f64, Vec<(String, String)>)> = Vec::new();
    // The causal links contribute per operation, so branches through
    // different root operations must not be pruned against each other.
    match aog.t.node(&aog.t.start) {
        Some(node) if node.kind == NodeKind::Or => {
            let multi = node.children.len() > 1;
            for (child, w) in &node.children {
                for mut branch in matcher.match_t(child, 0)? {
                    if branch.end != trace.path.len() {
                        continue;
                    }
                    if multi {
                        branch.picks.insert(0, (aog.t.start.name.clone(), child.name.clone()));
                    }
                    branch.ll += w.ln();
                    let ops = vec![child.name.clone()];
                    candidates.extend(finish_branch(aog, &pins, branch, &ops, exhaustive));
                }
            }
        }
        _ => {
            for branch in matcher.match_t(&aog.t.start.clone(), 0)? {
                if branch.end != trace.path.len() {
                    continue;
                }
                let ops = branch_operations(&aog.t, &branch.picks);
                candidates.extend(finish_branch(aog, &pins, branch, &ops, exhaustive));
            }
        }
    }
    let best = candidates
        .into_iter()
        .map(|(ll, picks)| {
            let keyed = key_picks(&picks);
            (ll, keyed)
        })
        .max_by(|a, b| {
            a.0.partial_cmp(&b.0)
                .unwrap_or(std::cmp::Ordering::Equal)
                .then_with(|| format!("{:?}", b.1).cmp(&format!("{:?}", a.1)))
        });
    match best {
        Some((ll, selections)) => Ok(ParseGraph {
            trace_id: trace.id.clone(),
            log_likelihood: ll,
            selections,
        }),
        None => Err(Error::UnparseableTrace(format!(
            "no selection of the grammar derives path {}",
            trace.path.join(" ")
        ))),
    }
}

/// Maximum-likelihood interpretation of a trace. Ties resolve to the
/// lexicographically smallest selection map.
pub fn viterbi_parse(aog: &StcAog, trace: &Trace) -> Result<ParseGraph> {
    parse_common(aog, trace, false, u64::MAX)
}

/// Exhaustive-enumeration twin of [`viterbi_parse`], capped at `cap`
/// explored combinations. Testing oracle.
pub fn brute_force_parse(aog: &StcAog, trace: &Trace, cap: u64) -> Result<ParseGraph> {
    parse_common(aog, trace, true, cap)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fusion::{fuse, CrossLink};
    use crate::symbol::Layer;

    /// One-operation aog with no Or choices anywhere.
    fn flat_aog() -> StcAog {
        let mut s = Grammar::new(Layer::Spatial, "ROOT");
        s.add_terminal("CC").add_terminal("CLOUD");
        s.add_and("G1", &["CC", "CLOUD"]);
        s.add_or("ROOT", &[("G1", 1.0)]);

        let mut t = Grammar::new(Layer::Temporal, "TASK");
        t.add_terminal("A1").add_terminal("A5");
        t.add_and("O_c", &["A1", "A5"]);
        t.add_or("TASK", &[("O_c", 1.0)]);

        let mut c = Grammar::new(Layer::Causal, "F0");
        c.add_terminal("F1=V_c");
        c.add_or("F1", &[("F1=V_c", 1.0)]);
        c.add_or("F0", &[("F1", 1.0)]);

        let links_ts = vec![
            CrossLink { from: SymbolId::temporal("A1"), to: SymbolId::spatial("G1"), p: 1.0 },
            CrossLink { from: SymbolId::temporal("A5"), to: SymbolId::spatial("CC"), p: 1.0 },
        ];
        let links_ct = vec![CrossLink {
            from: SymbolId::causal("F1=V_c"),
            to: SymbolId::temporal("O_c"),
            p: 1.0,
        }];
        fuse(s, t, c, links_ts, links_ct).unwrap()
    }

    fn trace(path: &[&str]) -> Trace {
        Trace {
            id: "t".into(),
            path: path.iter().map(|s| s.to_string()).collect(),
            op: None,
            features: None,
        }
    }

    #[test]
    fn or_free_parse_has_empty_selections_and_zero_ll() {
        let aog = flat_aog();
        let pg = viterbi_parse(&aog, &trace(&["CC", "CLOUD", "CC"])).unwrap();
        assert!(pg.selections.is_empty());
        assert_eq!(pg.log_likelihood, 0.0);
    }

    #[test]
    fn unknown_symbol_is_unparseable() {
        let aog = flat_aog();
        let err = viterbi_parse(&aog, &trace(&["CC", "XX"])).unwrap_err();
        assert!(err.to_string().starts_with("unparseable-trace"));
    }

    #[test]
    fn mismatched_frontier_is_unparseable() {
        let aog = flat_aog();
        let err = viterbi_parse(&aog, &trace(&["CC", "CLOUD"])).unwrap_err();
        assert!(err.to_string().starts_with("unparseable-trace"));
    }

    #[test]
    fn cap_of_one_with_two_combinations_errors() {
        let mut aog = flat_aog();
        // Give the spatial fragment an Or over two entities.
        let mut s = Grammar::new(Layer::Spatial, "ROOT");
        s.add_terminal("CC").add_terminal("CLOUD");
        s.add_or("G1", &[("CC", 0.5), ("CLOUD", 0.5)]);
        s.add_or("ROOT", &[("G1", 1.0)]);
        aog.s = s;
        aog.links_ts = vec![
            CrossLink { from: SymbolId::temporal("A1"), to: SymbolId::spatial("G1"), p: 1.0 },
            CrossLink { from: SymbolId::temporal("A5"), to: SymbolId::spatial("G1"), p: 1.0 },
        ];
        let err = brute_force_parse(&aog, &trace(&["CC", "CLOUD"]), 1).unwrap_err();
        assert!(err.to_string().starts_with("combinatorial-cap-exceeded"));
    }

    #[test]
    fn repeated_or_occurrences_get_indexed_keys() {
        let mut s = Grammar::new(Layer::Spatial, "ROOT");
        s.add_terminal("x").add_terminal("y");
        s.add_or("M", &[("x", 0.5), ("y", 0.5)]);
        s.add_or("ROOT", &[("M", 1.0)]);
        let mut t = Grammar::new(Layer::Temporal, "TASK");
        t.add_terminal("a");
        t.add_and("O", &["a", "a"]);
        t.add_or("TASK", &[("O", 1.0)]);
        let mut c = Grammar::new(Layer::Causal, "F0");
        c.add_terminal("F1=v");
        c.add_or("F0", &[("F1=v", 1.0)]);
        let links_ts = vec![CrossLink {
            from: SymbolId::temporal("a"),
            to: SymbolId::spatial("M"),
            p: 1.0,
        }];
        let aog = fuse(s, t, c, links_ts, vec![]).unwrap();
        let pg = viterbi_parse(&aog, &trace(&["x", "y"])).unwrap();
        assert_eq!(pg.selections.get("M@0").map(String::as_str), Some("x"));
        assert_eq!(pg.selections.get("M@1").map(String::as_str), Some("y"));
        assert!((pg.log_likelihood - (0.25f64).ln()).abs() < 1e-12);
        let bf = brute_force_parse(&aog, &trace(&["x", "y"]), 1000).unwrap();
        assert_eq!(pg, bf);
    }
}
