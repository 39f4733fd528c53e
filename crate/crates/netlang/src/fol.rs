//! First-order-logic description of STC-AOGs and parse graphs.
//!
//! Predicates and individuals mirror parent and child nodes, ∧/∨ mirror
//! And/Or, and quantifiers describe the causal-temporal links: ∃ spans
//! the alternative operations behind a value, ∀ states that a state
//! change is always due to one specific operation. Rendering is a fixed
//! single-line format, one sentence per numbered line.

use std::collections::BTreeMap;
use std::fmt;

use crate::error::{Error, Result};
use crate::fusion::StcAog;
use crate::grammar::{Grammar, NodeKind};
use crate::parsing::ParseGraph;
use crate::symbol::SymbolId;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Quantifier {
    ForAll,
    Exists,
}

impl fmt::Display for Quantifier {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Quantifier::ForAll => write!(f, "∀"),
            Quantifier::Exists => write!(f, "∃"),
        }
    }
}

/// Body expression: atoms joined by ∧/∨ connectives of arity two or
/// more.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum FolExpr {
    Atom { pred: String, args: Vec<String> },
    And(Vec<FolExpr>),
    Or(Vec<FolExpr>),
}

impl FolExpr {
    pub fn atom(pred: &str, args: &[&str]) -> FolExpr {
        FolExpr::Atom {
            pred: pred.to_string(),
            args: args.iter().map(|a| a.to_string()).collect(),
        }
    }

    /// Collapses single-element connective groups.
    fn normalized(self) -> FolExpr {
        match self {
            FolExpr::And(mut xs) if xs.len() == 1 => xs.remove(0).normalized(),
            FolExpr::Or(mut xs) if xs.len() == 1 => xs.remove(0).normalized(),
            other => other,
        }
    }
}

/// One sentence: optional quantifier prefix, a body, and an optional
/// implication to a consequent atom.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FolSentence {
    pub quantifiers: Vec<(Quantifier, String)>,
    pub body: FolExpr,
    pub implies: Option<String>,
}

fn render_atom(pred: &str, args: &[String]) -> String {
    if args.is_empty() {
        pred.to_string()
    } else {
        format!("{pred}({})", args.join(", "))
    }
}

fn render_grouped(expr: &FolExpr) -> String {
    match expr {
        FolExpr::Atom { pred, args } => render_atom(pred, args),
        other => format!("({})", render_bare(other)),
    }
}

fn render_bare(expr: &FolExpr) -> String {
    match expr {
        FolExpr::Atom { pred, args } => render_atom(pred, args),
        FolExpr::And(xs) => xs.iter().map(render_grouped).collect::<Vec<_>>().join(" ∧ "),
        FolExpr::Or(xs) => xs.iter().map(render_grouped).collect::<Vec<_>>().join(" ∨ "),
    }
}

/// Single-line UTF-8 rendering. The implication antecedent is bare, a
/// quantified connective body gets one pair of parentheses, nested
/// connective groups are always parenthesized.
pub fn render(sentence: &FolSentence) -> String {
    let mut out = String::new();
    for (q, var) in &sentence.quantifiers {
        out.push_str(&format!("{q}{var} "));
    }
    match &sentence.implies {
        Some(consequent) => {
            out.push_str(&render_bare(&sentence.body));
            out.push_str(" → ");
            out.push_str(consequent);
        }
        None => out.push_str(&render_grouped(&sentence.body)),
    }
    out
}

/// Numbered one-sentence-per-line text.
pub fn render_numbered(sentences: &[FolSentence]) -> String {
    let mut out = String::new();
    for (i, s) in sentences.iter().enumerate() {
        out.push_str(&format!("{}. {}\n", i + 1, render(s)));
    }
    out
}

/// Value terminals display without their `feature=` prefix.
fn value_display(name: &str) -> &str {
    name.split_once('=').map(|(_, v)| v).unwrap_or(name)
}

const INTENT: &str = "Intent";

/// Looks up Or selections with per-occurrence `@k` keys, falling back
/// to the plain key for single occurrences.
struct SelectionView<'a> {
    selections: &'a BTreeMap<String, String>,
    counters: BTreeMap<String, usize>,
}

impl<'a> SelectionView<'a> {
    fn new(selections: &'a BTreeMap<String, String>) -> Self {
        SelectionView { selections, counters: BTreeMap::new() }
    }

    fn select(&mut self, name: &str) -> Option<&'a str> {
        let k = self.counters.entry(name.to_string()).or_insert(0);
        let keyed = format!("{name}@{k}");
        *k += 1;
        self.selections
            .get(&keyed)
            .or_else(|| if keyed.ends_with("@0") { self.selections.get(name) } else { None })
            .map(String::as_str)
    }

    fn peek(&self, name: &str) -> Option<&'a str> {
        self.selections.get(name).or_else(|| self.selections.get(&format!("{name}@0"))).map(String::as_str)
    }
}

/// The causal-layer implication for the whole grammar: every feature
/// child with its value alternatives disjoined.
fn causal_expr_aog(c: &Grammar, sym: &SymbolId) -> Result<FolExpr> {
    let node = c
        .node(sym)
        .ok_or_else(|| Error::InvalidGrammar(format!("causal node {sym} missing")))?;
    match node.kind {
        NodeKind::Terminal => Err(Error::InvalidGrammar(format!(
            "terminal {sym} cannot introduce a causal sentence"
        ))),
        NodeKind::And => {
            let mut parts = Vec::new();
            for (child, _) in &node.children {
                parts.push(causal_child_expr_aog(c, child)?);
            }
            Ok(FolExpr::And(parts).normalized())
        }
        NodeKind::Or => causal_child_expr_aog(c, &node.children[0].0),
    }
}

fn causal_child_expr_aog(c: &Grammar, feature: &SymbolId) -> Result<FolExpr> {
    if c.terminals.contains(feature) {
        return Ok(FolExpr::atom(&feature.name, &[]));
    }
    let node = &c.nodes[feature];
    match node.kind {
        NodeKind::Or => {
            let atoms: Vec<FolExpr> = node
                .children
                .iter()
                .map(|(v, _)| FolExpr::atom(&feature.name, &[value_display(&v.name)]))
                .collect();
            Ok(FolExpr::Or(atoms).normalized())
        }
        NodeKind::And => {
            let mut parts = Vec::new();
            for (child, _) in &node.children {
                parts.push(causal_child_expr_aog(c, child)?);
            }
            Ok(FolExpr::And(parts).normalized())
        }
        NodeKind::Terminal => Ok(FolExpr::atom(&feature.name, &[])),
    }
}

/// Atom alternatives of one micro-action: the linked spatial node's
/// frontier variants, each an argument tuple for the action predicate.
/// Bare entity pass-throughs contribute nothing.
fn action_expr(aog: &StcAog, action: &SymbolId) -> Option<FolExpr> {
    let link = aog.link_for_action(action)?;
    if aog.s.terminals.contains(&link.to) {
        return None;
    }
    let variants = aog.s.frontier_variants(&link.to, 64);
    let atoms: Vec<FolExpr> = variants
        .iter()
        .map(|frontier| {
            let args: Vec<&str> = frontier.iter().map(|s| s.name.as_str()).collect();
            FolExpr::atom(&action.name, &args)
        })
        .collect();
    if atoms.is_empty() {
        None
    } else {
        Some(FolExpr::Or(atoms).normalized())
    }
}

/// Operation decomposition sentence for the full grammar; None when no
/// child renders a predicate.
fn operation_sentence_aog(aog: &StcAog, op: &SymbolId) -> Option<FolSentence> {
    let parts = operation_parts_aog(aog, op)?;
    if parts.is_empty() {
        return None;
    }
    Some(FolSentence {
        quantifiers: vec![],
        body: FolExpr::And(parts).normalized(),
        implies: Some(op.name.clone()),
    })
}

fn operation_parts_aog(aog: &StcAog, op: &SymbolId) -> Option<Vec<FolExpr>> {
    if aog.t.terminals.contains(op) {
        return Some(action_expr(aog, op).into_iter().collect());
    }
    let node = aog.t.node(op)?;
    let mut parts = Vec::new();
    match node.kind {
        NodeKind::Terminal => {}
        NodeKind::And => {
            for (child, _) in &node.children {
                parts.extend(operation_parts_aog(aog, child)?);
            }
        }
        NodeKind::Or => {
            let mut alts = Vec::new();
            for (child, _) in &node.children {
                let sub = operation_parts_aog(aog, child)?;
                if !sub.is_empty() {
                    alts.push(FolExpr::And(sub).normalized());
                }
            }
            if !alts.is_empty() {
                parts.push(FolExpr::Or(alts).normalized());
            }
        }
    }
    Some(parts)
}

/// Renders the whole fused grammar: the causal implication first, then
/// one quantified sentence per linked value (∃ over alternative
/// operations, ∀ for a single one), then one decomposition sentence per
/// operation that has predicate content.
pub fn describe_aog(aog: &StcAog) -> Result<Vec<FolSentence>> {
    aog.s.ensure_valid()?;
    aog.t.ensure_valid()?;
    aog.c.ensure_valid()?;
    let mut out = Vec::new();

    out.push(FolSentence {
        quantifiers: vec![],
        body: causal_expr_aog(&aog.c, &aog.c.start)?,
        implies: Some(INTENT.to_string()),
    });

    let reachable = aog.c.reachable();
    for value in &aog.c.terminals {
        if !reachable.contains(value) {
            continue;
        }
        let links = aog.links_from_value(value);
        if links.is_empty() {
            continue;
        }
        let display = value_display(&value.name);
        let quant = if links.len() > 1 { Quantifier::Exists } else { Quantifier::ForAll };
        let quantifiers: Vec<(Quantifier, String)> =
            links.iter().map(|l| (quant, l.to.name.clone())).collect();
        let atoms: Vec<FolExpr> = links
            .iter()
            .map(|l| FolExpr::atom(display, &[l.to.name.as_str()]))
            .collect();
        out.push(FolSentence {
            quantifiers,
            body: FolExpr::Or(atoms).normalized(),
            implies: None,
        });
    }

    let ops = root_operations(&aog.t);
    for op in &ops {
        if let Some(sentence) = operation_sentence_aog(aog, op) {
            out.push(sentence);
        }
    }
    Ok(out)
}

fn root_operations(t: &Grammar) -> Vec<SymbolId> {
    match t.node(&t.start) {
        Some(node) => {
            let mut ops: Vec<SymbolId> = node.child_ids().cloned().collect();
            ops.sort();
            ops
        }
        None => vec![],
    }
}

/// Renders one parse: the causal implication with every Or replaced by
/// its selected child (`*` where evidence left a feature open), a ∀
/// sentence binding each active value to its operation, and the
/// selected decomposition of each referenced operation.
pub fn describe_pg(pg: &ParseGraph, aog: &StcAog) -> Result<Vec<FolSentence>> {
    check_consistency(pg, aog)?;
    let mut out = Vec::new();

    let mut active_values: Vec<SymbolId> = Vec::new();
    let body = causal_expr_pg(&aog.c, &aog.c.start, &pg.selections, &mut active_values)?;
    out.push(FolSentence { quantifiers: vec![], body, implies: Some(INTENT.to_string()) });

    // Value-to-operation assignments under this parse.
    let mut assignments: Vec<(SymbolId, String)> = Vec::new();
    for value in &active_values {
        let links = aog.links_from_value(value);
        if links.is_empty() {
            continue;
        }
        let op = match pg.selections.get(&value.name) {
            Some(op) => op.clone(),
            None if links.len() == 1 => links[0].to.name.clone(),
            None => continue,
        };
        if !links.iter().any(|l| l.to.name == op) {
            return Err(Error::InconsistentParseGraph(format!(
                "value {value} is not linked to operation {op}"
            )));
        }
        assignments.push((value.clone(), op));
    }
    if !assignments.is_empty() {
        let mut quantifiers = Vec::new();
        let mut atoms = Vec::new();
        for (value, op) in &assignments {
            if !quantifiers.iter().any(|(_, v)| v == op) {
                quantifiers.push((Quantifier::ForAll, op.clone()));
            }
            atoms.push(FolExpr::atom(value_display(&value.name), &[op.as_str()]));
        }
        out.push(FolSentence {
            quantifiers,
            body: FolExpr::And(atoms).normalized(),
            implies: None,
        });
    }

    let mut ops: Vec<String> = assignments.iter().map(|(_, op)| op.clone()).collect();
    if let Some(node) = aog.t.node(&aog.t.start) {
        if node.kind == NodeKind::Or {
            let view = SelectionView::new(&pg.selections);
            if let Some(op) = view.peek(&aog.t.start.name) {
                ops.push(op.to_string());
            }
        }
    }
    ops.sort();
    ops.dedup();
    for op in &ops {
        let sym = SymbolId::temporal(op.clone());
        if let Some(sentence) = operation_sentence_pg(aog, &sym, &pg.selections)? {
            out.push(sentence);
        }
    }
    Ok(out)
}

fn check_consistency(pg: &ParseGraph, aog: &StcAog) -> Result<()> {
    for (key, child) in &pg.selections {
        let name = key.split('@').next().unwrap_or(key);
        let or_node = [&aog.c, &aog.t, &aog.s]
            .iter()
            .find_map(|g| {
                let id = g.sym(name);
                g.node(&id).filter(|n| n.kind == NodeKind::Or)
            });
        if let Some(node) = or_node {
            if !node.children.iter().any(|(c, _)| c.name == *child) {
                return Err(Error::InconsistentParseGraph(format!(
                    "{child} is not a child of Or node {name}"
                )));
            }
            continue;
        }
        let value = SymbolId::causal(name.to_string());
        if aog.c.terminals.contains(&value) {
            if !aog.links_from_value(&value).iter().any(|l| l.to.name == *child) {
                return Err(Error::InconsistentParseGraph(format!(
                    "value {name} has no link to {child}"
                )));
            }
            continue;
        }
        return Err(Error::InconsistentParseGraph(format!(
            "selection key {key} names no Or node or linked value"
        )));
    }
    Ok(())
}

fn causal_expr_pg(
    c: &Grammar,
    sym: &SymbolId,
    selections: &BTreeMap<String, String>,
    active: &mut Vec<SymbolId>,
) -> Result<FolExpr> {
    let node = c
        .node(sym)
        .ok_or_else(|| Error::InvalidGrammar(format!("causal node {sym} missing")))?;
    match node.kind {
        NodeKind::Terminal => Err(Error::InvalidGrammar(format!(
            "terminal {sym} cannot introduce a causal sentence"
        ))),
        NodeKind::And => {
            let mut parts = Vec::new();
            for (child, _) in &node.children {
                parts.push(causal_child_expr_pg(c, child, selections, active)?);
            }
            Ok(FolExpr::And(parts).normalized())
        }
        NodeKind::Or => causal_child_expr_pg(c, &node.children[0].0, selections, active),
    }
}

fn causal_child_expr_pg(
    c: &Grammar,
    feature: &SymbolId,
    selections: &BTreeMap<String, String>,
    active: &mut Vec<SymbolId>,
) -> Result<FolExpr> {
    if c.terminals.contains(feature) {
        active.push(feature.clone());
        return Ok(FolExpr::atom(&feature.name, &[]));
    }
    let node = &c.nodes[feature];
    match node.kind {
        NodeKind::Or => {
            let chosen = selections
                .get(&feature.name)
                .cloned()
                .or_else(|| (node.children.len() == 1).then(|| node.children[0].0.name.clone()));
            match chosen {
                Some(value) => {
                    let child = node
                        .children
                        .iter()
                        .map(|(cid, _)| cid)
                        .find(|cid| cid.name == value)
                        .ok_or_else(|| {
                            Error::InconsistentParseGraph(format!(
                                "{value} is not a child of {feature}"
                            ))
                        })?;
                    if c.terminals.contains(child) {
                        active.push(child.clone());
                        Ok(FolExpr::atom(&feature.name, &[value_display(&child.name)]))
                    } else {
                        causal_child_expr_pg(c, child, selections, active)
                    }
                }
                None => Ok(FolExpr::atom(&feature.name, &["*"])),
            }
        }
        NodeKind::And => {
            let mut parts = Vec::new();
            for (child, _) in &node.children {
                parts.push(causal_child_expr_pg(c, child, selections, active)?);
            }
            Ok(FolExpr::And(parts).normalized())
        }
        NodeKind::Terminal => {
            active.push(feature.clone());
            Ok(FolExpr::atom(&feature.name, &[]))
        }
    }
}

fn operation_sentence_pg(
    aog: &StcAog,
    op: &SymbolId,
    selections: &BTreeMap<String, String>,
) -> Result<Option<FolSentence>> {
    let mut view = SelectionView::new(selections);
    let parts = operation_parts_pg(aog, op, &mut view)?;
    if parts.is_empty() {
        return Ok(None);
    }
    Ok(Some(FolSentence {
        quantifiers: vec![],
        body: FolExpr::And(parts).normalized(),
        implies: Some(op.name.clone()),
    }))
}

fn operation_parts_pg(
    aog: &StcAog,
    sym: &SymbolId,
    view: &mut SelectionView,
) -> Result<Vec<FolExpr>> {
    if aog.t.terminals.contains(sym) {
        let Some(link) = aog.link_for_action(sym) else {
            return Ok(vec![]);
        };
        if aog.s.terminals.contains(&link.to) {
            return Ok(vec![]);
        }
        let frontier = selected_frontier(&aog.s, &link.to, view)?;
        let args: Vec<&str> = frontier.iter().map(String::as_str).collect();
        return Ok(vec![FolExpr::atom(&sym.name, &args)]);
    }
    let Some(node) = aog.t.node(sym) else {
        return Ok(vec![]);
    };
    match node.kind {
        NodeKind::Terminal => Ok(vec![]),
        NodeKind::And => {
            let mut parts = Vec::new();
            for (child, _) in &node.children {
                parts.extend(operation_parts_pg(aog, child, view)?);
            }
            Ok(parts)
        }
        NodeKind::Or => {
            let chosen = if node.children.len() == 1 {
                node.children[0].0.clone()
            } else {
                let value = view.select(&sym.name).ok_or_else(|| {
                    Error::InconsistentParseGraph(format!("no selection for temporal Or {sym}"))
                })?;
                node.children
                    .iter()
                    .map(|(c, _)| c.clone())
                    .find(|c| c.name == value)
                    .ok_or_else(|| {
                        Error::InconsistentParseGraph(format!("{value} is not a child of {sym}"))
                    })?
            };
            operation_parts_pg(aog, &chosen, view)
        }
    }
}

/// Terminal frontier of a spatial subtree with the parse's Or
/// selections applied.
fn selected_frontier(s: &Grammar, sym: &SymbolId, view: &mut SelectionView) -> Result<Vec<String>> {
    if s.terminals.contains(sym) {
        return Ok(vec![sym.name.clone()]);
    }
    let node = s
        .node(sym)
        .ok_or_else(|| Error::InvalidGrammar(format!("spatial node {sym} missing")))?;
    match node.kind {
        NodeKind::Terminal => Ok(vec![sym.name.clone()]),
        NodeKind::And => {
            let mut out = Vec::new();
            for (child, _) in &node.children {
                out.extend(selected_frontier(s, child, view)?);
            }
            Ok(out)
        }
        NodeKind::Or => {
            let chosen = if node.children.len() == 1 {
                node.children[0].0.clone()
            } else {
                let value = view.select(&sym.name).ok_or_else(|| {
                    Error::InconsistentParseGraph(format!("no selection for spatial Or {sym}"))
                })?;
                node.children
                    .iter()
                    .map(|(c, _)| c.clone())
                    .find(|c| c.name == value)
                    .ok_or_else(|| {
                        Error::InconsistentParseGraph(format!("{value} is not a child of {sym}"))
                    })?
            };
            selected_frontier(s, &chosen, view)
        }
    }
}


#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn render_implication() {
        let s = FolSentence {
            quantifiers: vec![],
            body: FolExpr::And(vec![
                FolExpr::atom("C1", &["V2"]),
                FolExpr::atom("C2", &["V3"]),
            ]),
            implies: Some("Intent".to_string()),
        };
        assert_eq!(render(&s), "C1(V2) ∧ C2(V3) → Intent");
    }

    #[test]
    fn render_quantified_disjunction() {
        let s = FolSentence {
            quantifiers: vec![
                (Quantifier::Exists, "T1".to_string()),
                (Quantifier::Exists, "T2".to_string()),
            ],
            body: FolExpr::Or(vec![
                FolExpr::atom("V2", &["T1"]),
                FolExpr::atom("V2", &["T2"]),
            ]),
            implies: None,
        };
        assert_eq!(render(&s), "∃T1 ∃T2 (V2(T1) ∨ V2(T2))");
    }

    #[test]
    fn render_single_atom_bare() {
        let s = FolSentence {
            quantifiers: vec![],
            body: FolExpr::atom("P", &["x"]),
            implies: None,
        };
        assert_eq!(render(&s), "P(x)");
    }

    #[test]
    fn render_nested_groups() {
        let s = FolSentence {
            quantifiers: vec![],
            body: FolExpr::And(vec![
                FolExpr::Or(vec![FolExpr::atom("C1", &["V1"]), FolExpr::atom("C1", &["V2"])]),
                FolExpr::atom("C3", &["V5"]),
            ]),
            implies: Some("Intent".to_string()),
        };
        assert_eq!(render(&s), "(C1(V1) ∨ C1(V2)) ∧ C3(V5) → Intent");
    }

    fn arb_atom() -> impl Strategy<Value = FolExpr> {
        let name = prop::sample::select(vec!["P", "Q", "R", "V_c", "A1"]);
        let arg = prop::sample::select(vec!["x", "y", "CC", "CLOUD", "*"]);
        (name, prop::collection::vec(arg, 0..3)).prop_map(|(pred, args)| FolExpr::Atom {
            pred: pred.to_string(),
            args: args.into_iter().map(|a| a.to_string()).collect(),
        })
    }

    fn arb_expr() -> impl Strategy<Value = FolExpr> {
        arb_atom().prop_recursive(3, 12, 3, |inner| {
            prop_oneof![
                prop::collection::vec(inner.clone(), 2..4).prop_map(FolExpr::And),
                prop::collection::vec(inner, 2..4).prop_map(FolExpr::Or),
            ]
        })
    }

    fn arb_sentence() -> impl Strategy<Value = FolSentence> {
        let quant = prop_oneof![Just(Quantifier::ForAll), Just(Quantifier::Exists)];
        let var = prop::sample::select(vec!["T1", "T2", "O_c"]);
        (
            prop::collection::vec((quant, var.prop_map(|v| v.to_string())), 0..3),
            arb_expr(),
            prop::option::of(prop::sample::select(vec!["Intent", "O_c", "T1"]).prop_map(|s| s.to_string())),
        )
            .prop_map(|(quantifiers, body, implies)| FolSentence { quantifiers, body, implies })
    }

    proptest! {
        /// Rendering round-trips through the test parser, so distinct
        /// trees render distinctly.
        #[test]
        fn render_round_trips(sentence in arb_sentence()) {
            let text = render(&sentence);
            let parsed = render_parser::parse(&text).expect("rendered text parses");
            prop_assert_eq!(parsed, sentence);
        }
    }
}
