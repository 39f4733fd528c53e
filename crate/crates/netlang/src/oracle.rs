//! Brute-force enumeration oracles used by the test suites.
//!
//! These deliberately avoid the span dynamic programs: derivations are
//! enumerated one Or choice at a time and probabilities accumulated by
//! direct multiplication, so they can cross-check the production path.

use crate::error::{Error, Result};
use crate::grammar::{Grammar, NodeKind};
use crate::symbol::SymbolId;

/// One complete derivation: the terminal frontier and its probability.
#[derive(Debug, Clone, PartialEq)]
pub struct Derivation {
    pub frontier: Vec<String>,
    pub probability: f64,
}

/// Enumerates every derivation of the grammar, expanding Or nodes in
/// child order. Errors once more than `cap` derivations exist.
pub fn enumerate_derivations(g: &Grammar, cap: usize) -> Result<Vec<Derivation>> {
    g.ensure_valid()?;
    let mut out = Vec::new();
    expand(g, &g.start, 1.0, vec![], &mut out, cap)?;
    Ok(out)
}

fn expand(
    g: &Grammar,
    id: &SymbolId,
    prob: f64,
    prefix: Vec<String>,
    out: &mut Vec<Derivation>,
    cap: usize,
) -> Result<()> {
    // Work over pending symbol queues so And sequencing stays explicit.
    let mut queue = vec![id.clone()];
    let mut frontier = prefix;
    loop {
        let Some(next) = queue.first().cloned() else {
            if out.len() >= cap {
                return Err(Error::CombinatorialCapExceeded(out.len() as u64 + 1, cap as u64));
            }
            out.push(Derivation { frontier, probability: prob });
            return Ok(());
        };
        queue.remove(0);
        if g.is_terminal(&next) {
            frontier.push(next.name.clone());
            continue;
        }
        let node = g.node(&next).expect("validated symbol");
        match node.kind {
            NodeKind::Terminal => frontier.push(next.name.clone()),
            NodeKind::And => {
                let mut rest: Vec<SymbolId> = node.child_ids().cloned().collect();
                rest.extend(queue.iter().cloned());
                queue = rest;
            }
            NodeKind::Or => {
                for (child, w) in &node.children {
                    let mut branch_queue = vec![child.clone()];
                    branch_queue.extend(queue.iter().cloned());
                    expand_queue(g, branch_queue, prob * w, frontier.clone(), out, cap)?;
                }
                return Ok(());
            }
        }
    }
}

fn expand_queue(
    g: &Grammar,
    mut queue: Vec<SymbolId>,
    prob: f64,
    mut frontier: Vec<String>,
    out: &mut Vec<Derivation>,
    cap: usize,
) -> Result<()> {
    while let Some(next) = queue.first().cloned() {
        queue.remove(0);
        if g.is_terminal(&next) {
            frontier.push(next.name.clone());
            continue;
        }
        let node = g.node(&next).expect("validated symbol");
        match node.kind {
            NodeKind::Terminal => frontier.push(next.name.clone()),
            NodeKind::And => {
                let mut rest: Vec<SymbolId> = node.child_ids().cloned().collect();
                rest.extend(queue.iter().cloned());
                queue = rest;
            }
            NodeKind::Or => {
                for (child, w) in &node.children {
                    let mut branch_queue = vec![child.clone()];
                    branch_queue.extend(queue.iter().cloned());
                    expand_queue(g, branch_queue, prob * w, frontier.clone(), out, cap)?;
                }
                return Ok(());
            }
        }
    }
    if out.len() >= cap {
        return Err(Error::CombinatorialCapExceeded(out.len() as u64 + 1, cap as u64));
    }
    out.push(Derivation { frontier, probability: prob });
    Ok(())
}

/// Total probability of `path` by summing matching enumerated
/// derivations.
pub fn brute_force_path_probability(g: &Grammar, path: &[String], cap: usize) -> Result<f64> {
    let derivations = enumerate_derivations(g, cap)?;
    Ok(derivations
        .iter()
        .filter(|d| d.frontier == path)
        .map(|d| d.probability)
        .sum())
}
