//! Inside and Viterbi dynamic programs over path spans.
//!
//! Total path probability sums over all derivations; the DP runs over
//! spans with And splits enumerated sequentially (equivalent to a
//! left-leaning binarization of wider And nodes) and Or nodes resolved
//! as unary rules in reverse topological order.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::grammar::{Grammar, NodeKind};
use crate::symbol::SymbolId;
use crate::trace::Corpus;

/// Non-terminals ordered children-before-parents. The grammar is
/// acyclic, so the order exists.
fn reverse_topological(g: &Grammar) -> Vec<SymbolId> {
    let mut order = Vec::new();
    let mut state: BTreeMap<&SymbolId, u8> = BTreeMap::new();
    fn visit<'a>(
        g: &'a Grammar,
        id: &'a SymbolId,
        state: &mut BTreeMap<&'a SymbolId, u8>,
        order: &mut Vec<SymbolId>,
    ) {
        if state.get(id).copied().unwrap_or(0) != 0 {
            return;
        }
        state.insert(id, 1);
        if let Some(node) = g.nodes.get(id) {
            for (child, _) in &node.children {
                if g.nodes.contains_key(child) {
                    visit(g, child, state, order);
                }
            }
            order.push(id.clone());
        }
        state.insert(id, 2);
    }
    for id in g.nodes.keys() {
        visit(g, id, &mut state, &mut order);
    }
    order
}

/// Per-path probability tables: `inside[sym][(i,j)]` is the total
/// probability that `sym` derives `path[i..j]`, `best` the maximum
/// single-derivation probability.
pub(crate) struct SpanTables {
    pub inside: BTreeMap<SymbolId, BTreeMap<(usize, usize), f64>>,
    pub best: BTreeMap<SymbolId, BTreeMap<(usize, usize), f64>>,
}

impl SpanTables {
    fn inside_at(&self, id: &SymbolId, i: usize, j: usize) -> f64 {
        self.inside.get(id).and_then(|m| m.get(&(i, j))).copied().unwrap_or(0.0)
    }

    pub(crate) fn best_at(&self, id: &SymbolId, i: usize, j: usize) -> f64 {
        self.best.get(id).and_then(|m| m.get(&(i, j))).copied().unwrap_or(0.0)
    }
}

/// Sum and max over the ways the ordered `children` derive `path[i..j]`,
/// taking per-child span probabilities from `lookup`.
fn and_split<F: Fn(&SymbolId, usize, usize) -> f64>(
    children: &[SymbolId],
    i: usize,
    j: usize,
    lookup: &F,
    maximize: bool,
) -> f64 {
    // dp[k][pos]: probability that children[..k] cover path[i..pos].
    let n = children.len();
    let mut dp = vec![BTreeMap::new(); n + 1];
    dp[0].insert(i, 1.0f64);
    for (k, child) in children.iter().enumerate() {
        let reachable: Vec<(usize, f64)> = dp[k].iter().map(|(p, v)| (*p, *v)).collect();
        for (pos, value) in reachable {
            for end in (pos + 1)..=j {
                let p_child = lookup(child, pos, end);
                if p_child <= 0.0 {
                    continue;
                }
                let cand = value * p_child;
                let slot = dp[k + 1].entry(end).or_insert(0.0);
                if maximize {
                    if cand > *slot {
                        *slot = cand;
                    }
                } else {
                    *slot += cand;
                }
            }
        }
    }
    dp[n].get(&j).copied().unwrap_or(0.0)
}

/// Fills inside and Viterbi tables for one path. Grammar must be valid.
pub(crate) fn span_tables(g: &Grammar, path: &[String]) -> SpanTables {
    let n = path.len();
    let order = reverse_topological(g);
    let mut tables = SpanTables { inside: BTreeMap::new(), best: BTreeMap::new() };

    for t in &g.terminals {
        let mut spans_in = BTreeMap::new();
        for (i, sym) in path.iter().enumerate() {
            if *sym == t.name {
                spans_in.insert((i, i + 1), 1.0);
            }
        }
        tables.best.insert(t.clone(), spans_in.clone());
        tables.inside.insert(t.clone(), spans_in);
    }

    for len in 1..=n {
        for i in 0..=(n - len) {
            let j = i + len;
            for id in &order {
                let node = &g.nodes[id];
                let (p_in, p_best) = match node.kind {
                    NodeKind::Terminal => {
                        let hit = len == 1 && path[i] == id.name;
                        (if hit { 1.0 } else { 0.0 }, if hit { 1.0 } else { 0.0 })
                    }
                    NodeKind::And => {
                        let children: Vec<SymbolId> = node.child_ids().cloned().collect();
                        let p_in = and_split(&children, i, j, &|c, a, b| tables.inside_at(c, a, b), false);
                        let p_best = and_split(&children, i, j, &|c, a, b| tables.best_at(c, a, b), true);
                        (p_in, p_best)
                    }
                    NodeKind::Or => {
                        let mut sum = 0.0;
                        let mut best = 0.0;
                        for (child, w) in &node.children {
                            sum += w * tables.inside_at(child, i, j);
                            let cand = w * tables.best_at(child, i, j);
                            if cand > best {
                                best = cand;
                            }
                        }
                        (sum, best)
                    }
                };
                if p_in > 0.0 {
                    tables.inside.entry(id.clone()).or_default().insert((i, j), p_in);
                }
                if p_best > 0.0 {
                    tables.best.entry(id.clone()).or_default().insert((i, j), p_best);
                }
            }
        }
    }
    tables
}

/// Total probability that the grammar derives exactly `path`.
pub fn path_probability(g: &Grammar, path: &[String]) -> f64 {
    if path.is_empty() {
        return 0.0;
    }
    span_tables(g, path).inside_at(&g.start, 0, path.len())
}

/// Sum of log path probabilities over the corpus under the grammar.
/// Any underivable path makes the result negative infinity.
pub fn log_likelihood(g: &Grammar, corpus: &Corpus) -> Result<f64> {
    g.ensure_valid()?;
    let mut total = 0.0;
    for (path, count) in corpus.distinct_paths() {
        let p = path_probability(g, &path);
        if p <= 0.0 {
            return Ok(f64::NEG_INFINITY);
        }
        total += count as f64 * p.ln();
    }
    Ok(total)
}

/// Traces the maximum-probability derivation of `path` and adds every
/// traversed Or edge to `counts`, weighted by `weight`. Children are
/// examined in canonical order so equal-probability ties resolve to the
/// lexicographically smallest choice.
fn viterbi_trace(
    g: &Grammar,
    tables: &SpanTables,
    id: &SymbolId,
    i: usize,
    j: usize,
    weight: u64,
    counts: &mut BTreeMap<SymbolId, BTreeMap<SymbolId, u64>>,
) {
    let Some(node) = g.nodes.get(id) else {
        return;
    };
    match node.kind {
        NodeKind::Terminal => {}
        NodeKind::Or => {
            let target = tables.best_at(id, i, j);
            let mut ordered: Vec<(&SymbolId, f64)> =
                node.children.iter().map(|(c, w)| (c, *w)).collect();
            ordered.sort_by(|a, b| a.0.cmp(b.0));
            for (child, w) in ordered {
                if w * tables.best_at(child, i, j) == target {
                    *counts
                        .entry(id.clone())
                        .or_default()
                        .entry(child.clone())
                        .or_insert(0) += weight;
                    viterbi_trace(g, tables, child, i, j, weight, counts);
                    return;
                }
            }
        }
        NodeKind::And => {
            let children: Vec<SymbolId> = node.child_ids().cloned().collect();
            let target = tables.best_at(id, i, j);
            let mut splits = Vec::new();
            if find_split(&children, tables, i, j, target, &mut splits) {
                for (k, (a, b)) in splits.iter().enumerate() {
                    viterbi_trace(g, tables, &children[k], *a, *b, weight, counts);
                }
            }
        }
    }
}

/// First split assignment (in increasing boundary order) whose product
/// of per-child Viterbi probabilities equals `target`.
fn find_split(
    children: &[SymbolId],
    tables: &SpanTables,
    i: usize,
    j: usize,
    target: f64,
    out: &mut Vec<(usize, usize)>,
) -> bool {
    fn rec(
        children: &[SymbolId],
        tables: &SpanTables,
        k: usize,
        pos: usize,
        j: usize,
        acc: f64,
        target: f64,
        out: &mut Vec<(usize, usize)>,
    ) -> bool {
        if k == children.len() {
            return pos == j && acc == target;
        }
        for end in (pos + 1)..=j {
            let p = tables.best_at(&children[k], pos, end);
            if p <= 0.0 {
                continue;
            }
            out.push((pos, end));
            if rec(children, tables, k + 1, end, j, acc * p, target, out) {
                return true;
            }
            out.pop();
        }
        false
    }
    rec(children, tables, 0, i, j, 1.0, target, out)
}

/// Or-edge usage counts across the Viterbi derivations of every corpus
/// record. Fails if any record is underivable.
pub(crate) fn viterbi_or_counts(
    g: &Grammar,
    corpus: &Corpus,
) -> Result<BTreeMap<SymbolId, BTreeMap<SymbolId, u64>>> {
    let mut counts = BTreeMap::new();
    for (path, count) in corpus.distinct_paths() {
        let tables = span_tables(g, &path);
        if tables.best_at(&g.start, 0, path.len()) <= 0.0 {
            return Err(Error::UnderivableCorpus(format!(
                "path {} has no derivation",
                path.join(" ")
            )));
        }
        viterbi_trace(g, &tables, &g.start, 0, path.len(), count as u64, &mut counts);
    }
    Ok(counts)
}
