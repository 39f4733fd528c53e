//! Bottom-up grammar induction from a trace corpus.
//!
//! Starting from an initial grammar that generates the training data
//! exactly, the loop repeatedly proposes fragments (binary And chunks
//! over adjacent terminal pairs, Or merges over symbols that vary in a
//! shared slot), scores each by the posterior gain after reducing the
//! corpus with it, and greedily accepts the best strictly-improving
//! candidate until none clears the threshold.
//!
//! The compactness prior combines the grammar node count with a small
//! per-symbol cost on the reduced corpus (a two-part code: structure
//! plus per-record segmentation). The node count alone cannot reward
//! chunking: replacing an adjacent pair by a fresh fragment is an
//! injective rewrite, so it never merges path types and never lowers
//! the node count while leaving the likelihood untouched. The
//! segmentation term is what makes frequent pairs worth naming.

pub mod likelihood;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

pub use likelihood::{log_likelihood, path_probability};

use crate::error::{Error, Result};
use crate::grammar::{Grammar, GrammarNode, NodeKind};
use crate::naming::NamingMap;
use crate::symbol::Layer;
use crate::trace::Corpus;

/// Induction parameters. `alpha` weighs the node-count prior,
/// `segment_cost` the per-record segmentation term.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct InductionConfig {
    pub alpha: f64,
    pub segment_cost: f64,
    pub max_iterations: usize,
    pub min_posterior_gain: f64,
    pub seed: u64,
}

impl Default for InductionConfig {
    fn default() -> Self {
        InductionConfig {
            alpha: 1.0,
            segment_cost: 0.01,
            max_iterations: 200,
            min_posterior_gain: 1e-9,
            seed: 0,
        }
    }
}

impl InductionConfig {
    pub fn ensure_valid(&self) -> Result<()> {
        if !(self.alpha > 0.0) {
            return Err(Error::InvalidConfig(format!("alpha must be positive, got {}", self.alpha)));
        }
        if self.segment_cost < 0.0 {
            return Err(Error::InvalidConfig(format!(
                "segment_cost must be non-negative, got {}",
                self.segment_cost
            )));
        }
        if self.min_posterior_gain < 0.0 {
            return Err(Error::InvalidConfig(format!(
                "min_posterior_gain must be non-negative, got {}",
                self.min_posterior_gain
            )));
        }
        if self.max_iterations == 0 {
            return Err(Error::InvalidConfig("max_iterations must be positive".to_string()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum FragmentKind {
    And,
    Or,
}

/// A candidate grammar fragment rooted at a fresh non-terminal.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct Fragment {
    pub root: String,
    pub kind: FragmentKind,
    pub children: Vec<String>,
}

impl Fragment {
    /// Shallow signature used for logging and tie-breaking.
    pub fn signature(&self) -> String {
        let kind = match self.kind {
            FragmentKind::And => "And",
            FragmentKind::Or => "Or",
        };
        format!("{}({})", kind, self.children.join(","))
    }
}

impl fmt::Display for Fragment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} = {}", self.root, self.signature())
    }
}

/// One row of the iteration log.
#[derive(Debug, Clone, PartialEq)]
pub struct IterationRecord {
    pub iter: usize,
    pub fragment: String,
    pub log_prior: f64,
    pub log_likelihood: f64,
    pub log_posterior: f64,
}

pub fn log_to_csv(log: &[IterationRecord]) -> String {
    let mut s = String::from("iter,fragment,log_prior,log_likelihood,log_posterior\n");
    for row in log {
        s.push_str(&format!(
            "{},\"{}\",{},{},{}\n",
            row.iter, row.fragment, row.log_prior, row.log_likelihood, row.log_posterior
        ));
    }
    s
}

/// Initial grammar that exactly generates the corpus: the start is an
/// Or over one And child per distinct path, weighted by empirical path
/// frequency. Single-symbol paths hang off the root directly.
pub fn build_initial_grammar(corpus: &Corpus, layer: Layer) -> Result<Grammar> {
    corpus.ensure_well_formed()?;
    let state = State::from_corpus(corpus, layer)?;
    Ok(state.working_grammar())
}

/// Every distinct ordered adjacent symbol pair occurring in any path,
/// as binary And fragments sorted lexicographically by child pair.
pub fn enumerate_bigram_fragments(corpus: &Corpus) -> Vec<Fragment> {
    let mut pairs: BTreeSet<(String, String)> = BTreeSet::new();
    for r in &corpus.records {
        for w in r.path.windows(2) {
            pairs.insert((w[0].clone(), w[1].clone()));
        }
    }
    pairs
        .into_iter()
        .enumerate()
        .map(|(i, (a, b))| Fragment {
            root: format!("B{}", i + 1),
            kind: FragmentKind::And,
            children: vec![a, b],
        })
        .collect()
}

/// Compactness prior of a standalone grammar: minus alpha times the
/// node count. Only differences matter in the posterior argmax; the
/// normalization constant of the underlying exponential is omitted.
pub fn log_prior(grammar: &Grammar, config: &InductionConfig) -> f64 {
    -config.alpha * grammar.node_count() as f64
}

/// Frequency re-estimation of Or-edge weights from the Viterbi
/// derivations of the corpus. Nodes never visited by any derivation
/// get uniform weights; nodes whose support is only partially visited
/// keep their previous weights.
pub fn estimate_or_probabilities(grammar: &Grammar, corpus: &Corpus) -> Result<Grammar> {
    grammar.ensure_valid()?;
    let counts = likelihood::viterbi_or_counts(grammar, corpus)?;
    let mut out = grammar.clone();
    for (id, node) in out.nodes.iter_mut() {
        if node.kind != NodeKind::Or {
            continue;
        }
        match counts.get(id) {
            None => {
                let k = node.children.len() as f64;
                for (_, w) in node.children.iter_mut() {
                    *w = 1.0 / k;
                }
            }
            Some(used) => {
                let total: u64 = used.values().sum();
                let full_support = node.children.iter().all(|(c, _)| used.contains_key(c));
                if full_support && total > 0 {
                    for (c, w) in node.children.iter_mut() {
                        *w = used[c] as f64 / total as f64;
                    }
                }
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone)]
struct TypeRow {
    symbols: Vec<String>,
    count: usize,
    /// Operation-tag counts carried along for the temporal cut.
    ops: BTreeMap<String, usize>,
}

#[derive(Debug, Clone)]
struct State {
    layer: Layer,
    alphabet: BTreeSet<String>,
    /// Fragment definitions in acceptance order plus a lookup map.
    accepted: Vec<Fragment>,
    defs: BTreeMap<String, (FragmentKind, Vec<(String, f64)>)>,
    types: Vec<TypeRow>,
    originals: Vec<(Vec<String>, usize)>,
    next_id: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Scores {
    log_prior: f64,
    log_likelihood: f64,
}

impl Scores {
    fn posterior(&self) -> f64 {
        self.log_prior + self.log_likelihood
    }
}

impl State {
    fn from_corpus(corpus: &Corpus, layer: Layer) -> Result<State> {
        corpus.ensure_well_formed()?;
        let mut by_path: BTreeMap<Vec<String>, TypeRow> = BTreeMap::new();
        for r in &corpus.records {
            let row = by_path.entry(r.path.clone()).or_insert_with(|| TypeRow {
                symbols: r.path.clone(),
                count: 0,
                ops: BTreeMap::new(),
            });
            row.count += 1;
            if let Some(op) = &r.op {
                *row.ops.entry(op.clone()).or_insert(0) += 1;
            }
        }
        let types: Vec<TypeRow> = by_path.into_values().collect();
        let alphabet: BTreeSet<String> = corpus.alphabet().into_iter().collect();
        let originals = corpus.distinct_paths();
        Ok(State { layer, alphabet, accepted: vec![], defs: BTreeMap::new(), types, originals, next_id: 1 })
    }

    fn taken(&self, name: &str) -> bool {
        self.alphabet.contains(name) || self.defs.contains_key(name)
    }

    fn fresh_id(&mut self) -> String {
        loop {
            let name = format!("N{:02}", self.next_id);
            self.next_id += 1;
            if !self.taken(&name) {
                return name;
            }
        }
    }

    fn is_terminal(&self, sym: &str) -> bool {
        self.alphabet.contains(sym)
    }

    /// Assembles the full working grammar: fragment definitions plus an
    /// Or root over one And per distinct reduced path.
    fn working_grammar(&self) -> Grammar {
        let mut root_name = "ROOT".to_string();
        while self.taken(&root_name) {
            root_name.push('_');
        }
        let mut g = Grammar::new(self.layer, &root_name);
        for t in &self.alphabet {
            g.add_terminal(t);
        }
        for (name, (kind, children)) in &self.defs {
            let id = g.sym(name);
            let node = match kind {
                FragmentKind::And => GrammarNode::and(id.clone(), children.iter().map(|(c, _)| g.sym(c)).collect()),
                FragmentKind::Or => GrammarNode::or(id.clone(), children.iter().map(|(c, w)| (g.sym(c), *w)).collect()),
            };
            g.nodes.insert(id, node);
        }
        let total: usize = self.types.iter().map(|t| t.count).sum();
        let width = self.types.len().to_string().len().max(3);
        let mut root_children = Vec::new();
        for (i, row) in self.types.iter().enumerate() {
            let weight = row.count as f64 / total as f64;
            if row.symbols.len() == 1 {
                root_children.push((g.sym(&row.symbols[0]), weight));
            } else {
                let mut pid = format!("P{:0width$}", i + 1, width = width);
                while self.taken(&pid) || pid == root_name {
                    pid.push('_');
                }
                let id = g.sym(&pid);
                g.nodes.insert(
                    id.clone(),
                    GrammarNode::and(id.clone(), row.symbols.iter().map(|s| g.sym(s)).collect()),
                );
                root_children.push((g.sym(&pid), weight));
            }
        }
        let root_id = g.sym(&root_name);
        g.nodes.insert(root_id.clone(), GrammarNode::or(root_id, root_children));
        g
    }

    /// Collapsed form for emission: a single-child root Or is replaced
    /// by its child when that child is a non-terminal.
    fn emitted_grammar(&self) -> Grammar {
        let mut g = self.working_grammar();
        let root = g.start.clone();
        let node = &g.nodes[&root];
        if node.kind == NodeKind::Or && node.children.len() == 1 {
            let child = node.children[0].0.clone();
            if g.nodes.contains_key(&child) {
                g.nodes.remove(&root);
                g.start = child;
            }
        }
        g
    }

    fn segment_size(&self) -> f64 {
        self.types.iter().map(|t| (t.count * t.symbols.len()) as f64).sum()
    }

    fn score(&self, config: &InductionConfig) -> Scores {
        let ll = likelihood_distinct(&self.working_grammar(), &self.originals);
        self.score_with_likelihood(config, ll)
    }

    /// Prior-only rescoring for moves that provably keep the corpus
    /// likelihood: an And chunk rewrites types injectively and expands
    /// deterministically, so every derivation keeps its probability.
    fn score_with_likelihood(&self, config: &InductionConfig, ll: f64) -> Scores {
        let g = self.working_grammar();
        let mut nodes = g.node_count() as f64;
        let root = &g.nodes[&g.start];
        if root.children.len() == 1 && g.nodes.contains_key(&root.children[0].0) {
            nodes -= 1.0;
        }
        Scores {
            log_prior: -config.alpha * nodes - config.segment_cost * self.segment_size(),
            log_likelihood: ll,
        }
    }

    /// Candidate pool: adjacent terminal pairs in the reduced corpus as
    /// And chunks, plus Or groups over symbols that vary in a single
    /// slot of otherwise identical reduced paths.
    fn candidates(&self) -> Vec<(FragmentKind, Vec<String>)> {
        let mut sigs: BTreeSet<(FragmentKind, Vec<String>)> = BTreeSet::new();
        for row in &self.types {
            for w in row.symbols.windows(2) {
                if self.is_terminal(&w[0]) && self.is_terminal(&w[1]) {
                    sigs.insert((FragmentKind::And, vec![w[0].clone(), w[1].clone()]));
                }
            }
        }

        // Union symbols that co-vary at one slot across path types.
        let mut parent: BTreeMap<String, String> = BTreeMap::new();
        fn find(parent: &mut BTreeMap<String, String>, x: &str) -> String {
            let p = parent.get(x).cloned().unwrap_or_else(|| x.to_string());
            if p == x {
                return p;
            }
            let root = find(parent, &p);
            parent.insert(x.to_string(), root.clone());
            root
        }
        let mut linked = false;
        for (i, a) in self.types.iter().enumerate() {
            for b in self.types.iter().skip(i + 1) {
                if a.symbols.len() != b.symbols.len() {
                    continue;
                }
                let diffs: Vec<usize> = (0..a.symbols.len())
                    .filter(|&k| a.symbols[k] != b.symbols[k])
                    .collect();
                if diffs.len() == 1 {
                    let k = diffs[0];
                    let ra = find(&mut parent, &a.symbols[k]);
                    let rb = find(&mut parent, &b.symbols[k]);
                    if ra != rb {
                        parent.insert(ra, rb);
                        linked = true;
                    }
                }
            }
        }
        if linked {
            let mut groups: BTreeMap<String, BTreeSet<String>> = BTreeMap::new();
            let members: Vec<String> = parent.keys().cloned().collect();
            for m in members {
                let root = find(&mut parent, &m);
                groups.entry(root.clone()).or_default().insert(m);
                groups.entry(root.clone()).or_default().insert(root);
            }
            for group in groups.values() {
                if group.len() >= 2 {
                    sigs.insert((FragmentKind::Or, group.iter().cloned().collect()));
                }
            }
        }
        sigs.into_iter().collect()
    }

    /// Applies a fragment: rewrites the reduced corpus, installs the
    /// definition, re-merges identical path types. Returns the number
    /// of replaced occurrences.
    fn apply(&mut self, fragment: &Fragment) -> usize {
        let mut replaced = 0usize;
        match fragment.kind {
            FragmentKind::And => {
                let (a, b) = (&fragment.children[0], &fragment.children[1]);
                for row in &mut self.types {
                    let mut out = Vec::with_capacity(row.symbols.len());
                    let mut i = 0;
                    while i < row.symbols.len() {
                        if i + 1 < row.symbols.len() && row.symbols[i] == *a && row.symbols[i + 1] == *b {
                            out.push(fragment.root.clone());
                            replaced += row.count;
                            i += 2;
                        } else {
                            out.push(row.symbols[i].clone());
                            i += 1;
                        }
                    }
                    row.symbols = out;
                }
                self.defs.insert(
                    fragment.root.clone(),
                    (FragmentKind::And, fragment.children.iter().map(|c| (c.clone(), 1.0)).collect()),
                );
            }
            FragmentKind::Or => {
                let members: BTreeSet<&String> = fragment.children.iter().collect();
                let mut usage: BTreeMap<String, usize> = BTreeMap::new();
                for row in &mut self.types {
                    for sym in &mut row.symbols {
                        if members.contains(sym) {
                            *usage.entry(sym.clone()).or_insert(0) += row.count;
                            replaced += row.count;
                            *sym = fragment.root.clone();
                        }
                    }
                }
                let total: usize = usage.values().sum();
                let weights: Vec<(String, f64)> = fragment
                    .children
                    .iter()
                    .map(|c| {
                        let n = usage.get(c).copied().unwrap_or(0);
                        (c.clone(), if total > 0 { n as f64 / total as f64 } else { 0.0 })
                    })
                    .collect();
                self.defs.insert(fragment.root.clone(), (FragmentKind::Or, weights));
            }
        }
        self.merge_types();
        replaced
    }

    fn merge_types(&mut self) {
        let mut merged: BTreeMap<Vec<String>, TypeRow> = BTreeMap::new();
        for row in self.types.drain(..) {
            match merged.get_mut(&row.symbols) {
                Some(existing) => {
                    existing.count += row.count;
                    for (op, n) in row.ops {
                        *existing.ops.entry(op).or_insert(0) += n;
                    }
                }
                None => {
                    merged.insert(row.symbols.clone(), row);
                }
            }
        }
        self.types = merged.into_values().collect();
    }

    /// Re-estimates every Or weight (fragments and root) from Viterbi
    /// usage counts. Returns false if nothing changed.
    fn reestimate(&mut self) -> bool {
        let g = self.working_grammar();
        let corpus = corpus_from_distinct(&self.originals);
        let Ok(counts) = likelihood::viterbi_or_counts(&g, &corpus) else {
            return false;
        };
        let mut changed = false;
        for (name, (kind, children)) in self.defs.iter_mut() {
            if *kind != FragmentKind::Or {
                continue;
            }
            let id = g.sym(name);
            if let Some(used) = counts.get(&id) {
                let total: u64 = used.values().sum();
                if total > 0 && children.iter().all(|(c, _)| used.contains_key(&g.sym(c))) {
                    for (c, w) in children.iter_mut() {
                        let next = used[&g.sym(c)] as f64 / total as f64;
                        if next != *w {
                            *w = next;
                            changed = true;
                        }
                    }
                }
            }
        }
        changed
    }
}

fn corpus_from_distinct(distinct: &[(Vec<String>, usize)]) -> Corpus {
    let mut records = Vec::new();
    for (i, (path, count)) in distinct.iter().enumerate() {
        for k in 0..*count {
            records.push(crate::trace::Trace {
                id: format!("d{i}_{k}"),
                path: path.clone(),
                op: None,
                features: None,
            });
        }
    }
    Corpus::new(records)
}

fn likelihood_distinct(g: &Grammar, distinct: &[(Vec<String>, usize)]) -> f64 {
    let mut total = 0.0;
    for (path, count) in distinct {
        let p = likelihood::path_probability(g, path);
        if p <= 0.0 {
            return f64::NEG_INFINITY;
        }
        total += *count as f64 * p.ln();
    }
    total
}

/// Greedy posterior-ascent induction. Returns the final grammar (the
/// single-child root Or collapsed away) and the per-iteration log; the
/// log ends with three re-estimation sweeps that exhibit the plateau.
pub fn induce(corpus: &Corpus, config: &InductionConfig, layer: Layer) -> Result<(Grammar, Vec<IterationRecord>)> {
    let (state, log) = induce_state(corpus, config, layer)?;
    Ok((state.emitted_grammar(), log))
}

fn induce_state(corpus: &Corpus, config: &InductionConfig, layer: Layer) -> Result<(State, Vec<IterationRecord>)> {
    config.ensure_valid()?;
    let mut state = State::from_corpus(corpus, layer)?;
    let mut log = Vec::new();
    let mut current = state.score(config);
    log.push(IterationRecord {
        iter: 0,
        fragment: "init".to_string(),
        log_prior: current.log_prior,
        log_likelihood: current.log_likelihood,
        log_posterior: current.posterior(),
    });

    let mut iter = 0;
    while iter < config.max_iterations {
        iter += 1;
        let mut best: Option<(f64, String, Fragment, State, Scores)> = None;
        for (kind, children) in state.candidates() {
            let mut trial = state.clone();
            let root = trial.fresh_id();
            let fragment = Fragment { root, kind, children };
            if trial.apply(&fragment) == 0 {
                continue;
            }
            let scores = match kind {
                FragmentKind::And => {
                    trial.score_with_likelihood(config, current.log_likelihood)
                }
                FragmentKind::Or => trial.score(config),
            };
            let gain = scores.posterior() - current.posterior();
            let sig = fragment.signature();
            let better = match &best {
                None => true,
                Some((g, s, ..)) => gain > *g || (gain == *g && sig < *s),
            };
            if better {
                best = Some((gain, sig, fragment, trial, scores));
            }
        }
        match best {
            Some((gain, sig, _fragment, next_state, scores)) if gain > config.min_posterior_gain => {
                state = next_state;
                current = scores;
                log.push(IterationRecord {
                    iter: log.len(),
                    fragment: sig,
                    log_prior: scores.log_prior,
                    log_likelihood: scores.log_likelihood,
                    log_posterior: scores.posterior(),
                });
            }
            _ => break,
        }
    }

    // Post-convergence weight sweeps; with weights already at their
    // count ratios these are fixed-point no-ops and the log plateaus.
    for _ in 0..3 {
        let before = current.posterior();
        let mut trial = state.clone();
        if trial.reestimate() {
            let scores = trial.score(config);
            if scores.posterior() >= before {
                state = trial;
                current = scores;
            }
        }
        log.push(IterationRecord {
            iter: log.len(),
            fragment: "reestimate".to_string(),
            log_prior: current.log_prior,
            log_likelihood: current.log_likelihood,
            log_posterior: current.posterior(),
        });
    }

    Ok((state, log))
}

/// One aggregated micro-action usage: `action` (a temporal terminal)
/// consumed `entities` via the spatial node `s_node`, `count` times.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MicroActionUse {
    pub action: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub s_node: Option<String>,
    #[serde(default)]
    pub entities: Vec<String>,
    pub count: u64,
}

/// One reduced record type with its operation name.
#[derive(Debug, Clone, PartialEq)]
pub struct ReducedOp {
    pub op: String,
    pub symbols: Vec<String>,
    pub count: usize,
}

/// The spatial and temporal grammars cut from one unified induction
/// run, plus everything fusion needs downstream.
#[derive(Debug, Clone)]
pub struct LayeredInduction {
    pub s: Grammar,
    pub t: Grammar,
    pub log: Vec<IterationRecord>,
    pub reduced: Vec<ReducedOp>,
    pub uses: Vec<MicroActionUse>,
    /// Distinct fragment symbols appearing in the reduced corpus; this
    /// is the micro-action alphabet and the reported fragment count.
    pub fragment_alphabet: Vec<String>,
}

/// Runs the unified induction and cuts the result at the fragment
/// boundary: fragments plus entities form the spatial grammar, the
/// reduced records grouped by operation tag form the temporal grammar.
pub fn induce_layers(corpus: &Corpus, config: &InductionConfig, names: &NamingMap) -> Result<LayeredInduction> {
    let (mut state, log) = induce_state(corpus, config, Layer::Spatial)?;

    // Ground signatures before renaming drive the naming map.
    let mut rename: BTreeMap<String, String> = BTreeMap::new();
    let mut top_level: BTreeSet<String> = BTreeSet::new();
    for row in &state.types {
        for sym in &row.symbols {
            if state.defs.contains_key(sym) {
                top_level.insert(sym.clone());
            }
        }
    }
    let mut used_names: BTreeSet<String> = state.alphabet.clone();
    let mut sig_of: BTreeMap<String, String> = BTreeMap::new();
    for name in state.defs.keys() {
        sig_of.insert(name.clone(), ground_signature(&state.defs, &state.alphabet, name));
    }
    let mut auto: Vec<(String, String)> = Vec::new();
    for frag in &top_level {
        let sig = &sig_of[frag];
        match names.lookup(sig) {
            Some(display) => {
                rename.insert(frag.clone(), display.to_string());
                used_names.insert(display.to_string());
            }
            None => auto.push((sig.clone(), frag.clone())),
        }
    }
    auto.sort();
    let mut next_auto = 1;
    for (_, frag) in auto {
        let name = loop {
            let cand = format!("A{next_auto}");
            next_auto += 1;
            if !used_names.contains(&cand) && !rename.values().any(|v| *v == cand) {
                break cand;
            }
        };
        rename.insert(frag, name);
    }
    apply_rename(&mut state, &rename);

    // Spatial grammar: a frequency-weighted Or root over the top-level
    // fragment alphabet, with entities as terminals.
    let mut usage: BTreeMap<String, usize> = BTreeMap::new();
    for row in &state.types {
        for sym in &row.symbols {
            if state.defs.contains_key(sym) {
                *usage.entry(sym.clone()).or_insert(0) += row.count;
            }
        }
    }
    let fragment_alphabet: Vec<String> = usage.keys().cloned().collect();
    let s = if fragment_alphabet.is_empty() {
        state.emitted_grammar()
    } else {
        let mut g = Grammar::new(Layer::Spatial, "ROOT");
        for t in &state.alphabet {
            g.add_terminal(t);
        }
        for (name, (kind, children)) in &state.defs {
            let id = g.sym(name);
            let node = match kind {
                FragmentKind::And => GrammarNode::and(id.clone(), children.iter().map(|(c, _)| g.sym(c)).collect()),
                FragmentKind::Or => GrammarNode::or(id.clone(), children.iter().map(|(c, w)| (g.sym(c), *w)).collect()),
            };
            g.nodes.insert(id, node);
        }
        let total: usize = usage.values().sum();
        let root_children: Vec<(crate::symbol::SymbolId, f64)> = usage
            .iter()
            .map(|(name, n)| (g.sym(name), *n as f64 / total as f64))
            .collect();
        let root = g.sym("ROOT");
        g.nodes.insert(root.clone(), GrammarNode::or(root, root_children));
        g
    };
    s.ensure_valid()?;

    // Temporal grammar: one operation per reduced type, named by its
    // majority tag. Fragment symbols become temporal terminals; bare
    // entities pass through under their own names.
    let mut op_rows: Vec<(String, &TypeRow)> = Vec::new();
    let mut taken_ops: BTreeSet<String> = BTreeSet::new();
    for (i, row) in state.types.iter().enumerate() {
        let base = row
            .ops
            .iter()
            .max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(a.0)))
            .map(|(op, _)| op.clone())
            .unwrap_or_else(|| format!("T{:02}", i + 1));
        let mut name = base;
        while !taken_ops.insert(name.clone()) {
            name.push('_');
        }
        op_rows.push((name, row));
    }
    op_rows.sort_by(|a, b| a.0.cmp(&b.0));

    let mut t = Grammar::new(Layer::Temporal, "TASK");
    let mut t_terms: BTreeSet<String> = BTreeSet::new();
    for (_, row) in &op_rows {
        for sym in &row.symbols {
            t_terms.insert(sym.clone());
        }
    }
    for term in &t_terms {
        t.add_terminal(term);
    }
    let total: usize = op_rows.iter().map(|(_, r)| r.count).sum();
    let mut root_children = Vec::new();
    for (name, row) in &op_rows {
        let weight = row.count as f64 / total as f64;
        if row.symbols.len() == 1 {
            root_children.push((t.sym(&row.symbols[0]), weight));
        } else {
            let id = t.sym(name);
            t.nodes.insert(
                id.clone(),
                GrammarNode::and(id.clone(), row.symbols.iter().map(|s| t.sym(s)).collect()),
            );
            root_children.push((t.sym(name), weight));
        }
    }
    let task = t.sym("TASK");
    t.nodes.insert(task.clone(), GrammarNode::or(task, root_children));
    t.ensure_valid()?;

    // Micro-action usage: fragments consume their own spatial node,
    // bare entities consume themselves.
    let mut use_counts: BTreeMap<(String, String, Vec<String>), u64> = BTreeMap::new();
    for row in &state.types {
        for sym in &row.symbols {
            let (s_node, entities) = match state.defs.get(sym) {
                Some((FragmentKind::And, children)) => {
                    (sym.clone(), children.iter().map(|(c, _)| c.clone()).collect::<Vec<_>>())
                }
                Some((FragmentKind::Or, _)) => (sym.clone(), vec![]),
                None => (sym.clone(), vec![sym.clone()]),
            };
            *use_counts.entry((sym.clone(), s_node, entities)).or_insert(0) += row.count as u64;
        }
    }
    let uses: Vec<MicroActionUse> = use_counts
        .into_iter()
        .map(|((action, s_node, entities), count)| MicroActionUse {
            action,
            s_node: Some(s_node),
            entities,
            count,
        })
        .collect();

    let reduced: Vec<ReducedOp> = op_rows
        .iter()
        .map(|(name, row)| ReducedOp { op: name.clone(), symbols: row.symbols.clone(), count: row.count })
        .collect();

    Ok(LayeredInduction { s, t, log, reduced, uses, fragment_alphabet })
}

/// Recursive content signature of a fragment: terminals by name, And
/// children in order, Or children sorted.
fn ground_signature(
    defs: &BTreeMap<String, (FragmentKind, Vec<(String, f64)>)>,
    alphabet: &BTreeSet<String>,
    name: &str,
) -> String {
    if alphabet.contains(name) || !defs.contains_key(name) {
        return name.to_string();
    }
    let (kind, children) = &defs[name];
    let mut parts: Vec<String> = children
        .iter()
        .map(|(c, _)| ground_signature(defs, alphabet, c))
        .collect();
    match kind {
        FragmentKind::And => format!("And({})", parts.join(",")),
        FragmentKind::Or => {
            parts.sort();
            format!("Or({})", parts.join(","))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grammar::NodeKind;

    fn config(alpha: f64, segment_cost: f64) -> InductionConfig {
        InductionConfig { alpha, segment_cost, ..InductionConfig::default() }
    }

    #[test]
    fn initial_grammar_single_distinct_path() {
        let corpus = Corpus::from_paths(&[&["a", "b"], &["a", "b"]]);
        let g = build_initial_grammar(&corpus, Layer::Spatial).unwrap();
        assert!(g.validate().is_empty());
        let root = &g.nodes[&g.start];
        assert_eq!(root.kind, NodeKind::Or);
        assert_eq!(root.children.len(), 1);
        assert_eq!(root.children[0].1, 1.0);
        let child = &g.nodes[&root.children[0].0];
        assert_eq!(child.kind, NodeKind::And);
        let names: Vec<&str> = child.children.iter().map(|(c, _)| c.name.as_str()).collect();
        assert_eq!(names, ["a", "b"]);
    }

    #[test]
    fn initial_grammar_unary_route() {
        let corpus = Corpus::from_paths(&[&["a", "b"], &["c"]]);
        let g = build_initial_grammar(&corpus, Layer::Spatial).unwrap();
        assert!(g.validate().is_empty());
        let root = &g.nodes[&g.start];
        assert_eq!(root.children.len(), 2);
        for (_, w) in &root.children {
            assert_eq!(*w, 0.5);
        }
        // The single-symbol path hangs off the root directly.
        assert!(root.children.iter().any(|(c, _)| c.name == "c"));
    }

    #[test]
    fn initial_grammar_weights_are_path_frequencies() {
        let corpus = Corpus::from_paths(&[&["a", "b"], &["a", "b"], &["a", "b"], &["c"]]);
        let g = build_initial_grammar(&corpus, Layer::Spatial).unwrap();
        let root = &g.nodes[&g.start];
        let mut weights: Vec<f64> = root.children.iter().map(|(_, w)| *w).collect();
        weights.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert_eq!(weights, vec![0.25, 0.75]);
    }

    #[test]
    fn bigram_fragments_from_worked_record() {
        let corpus = Corpus::from_paths(&[&["USER", "CC", "CLOUD", "CC", "USER"]]);
        let fragments = enumerate_bigram_fragments(&corpus);
        let pairs: Vec<(String, String)> = fragments
            .iter()
            .map(|f| (f.children[0].clone(), f.children[1].clone()))
            .collect();
        assert_eq!(
            pairs,
            vec![
                ("CC".to_string(), "CLOUD".to_string()),
                ("CC".to_string(), "USER".to_string()),
                ("CLOUD".to_string(), "CC".to_string()),
                ("USER".to_string(), "CC".to_string()),
            ]
        );
    }

    #[test]
    fn bigram_fragments_need_adjacent_pairs() {
        let corpus = Corpus::from_paths(&[&["a"]]);
        assert!(enumerate_bigram_fragments(&corpus).is_empty());
    }

    #[test]
    fn log_prior_is_linear_in_node_count() {
        let mut g = Grammar::new(Layer::Temporal, "Task");
        for t in ["A1", "A2", "A3", "A4"] {
            g.add_terminal(t);
        }
        g.add_and("Task", &["Enc", "Route", "Dec"]);
        g.add_and("Enc", &["A3", "A2"]);
        g.add_and("Route", &["A3", "A4"]);
        g.add_and("Dec", &["A3", "A1"]);
        assert_eq!(log_prior(&g, &config(1.0, 0.01)), -8.0);
        assert_eq!(log_prior(&g, &config(0.5, 0.01)), -4.0);

        let empty = Grammar::new(Layer::Spatial, "S");
        assert_eq!(log_prior(&empty, &config(1.0, 0.01)), 0.0);

        // Two extra reachable non-terminals shift the prior by 2 alpha.
        let mut bigger = g.clone();
        bigger.add_and("Enc2", &["A3", "A2"]);
        bigger.add_and("Dec2", &["A3", "A1"]);
        bigger.add_and("Task", &["Enc", "Route", "Dec", "Enc2", "Dec2"]);
        let cfg = config(0.7, 0.01);
        let diff = log_prior(&g, &cfg) - log_prior(&bigger, &cfg);
        assert!((diff - 2.0 * 0.7).abs() < 1e-12);
    }

    #[test]
    fn log_likelihood_of_initial_grammar() {
        let corpus = Corpus::from_paths(&[&["a", "b"], &["a", "b"], &["c"], &["c"]]);
        let g = build_initial_grammar(&corpus, Layer::Spatial).unwrap();
        let ll = log_likelihood(&g, &corpus).unwrap();
        assert!((ll - 4.0 * 0.5f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn log_likelihood_of_exact_grammar_is_zero() {
        let corpus = Corpus::from_paths(&[&["a", "b"]]);
        let mut g = Grammar::new(Layer::Spatial, "S");
        g.add_terminal("a").add_terminal("b");
        g.add_and("S", &["a", "b"]);
        assert_eq!(log_likelihood(&g, &corpus).unwrap(), 0.0);
    }

    #[test]
    fn log_likelihood_matches_enumeration_oracle() {
        let mut g = Grammar::new(Layer::Spatial, "S");
        for t in ["a", "b", "c", "d"] {
            g.add_terminal(t);
        }
        g.add_or("X", &[("a", 0.25), ("b", 0.75)]);
        g.add_or("Y", &[("c", 0.6), ("Z", 0.4)]);
        g.add_and("Z", &["a", "d"]);
        g.add_and("S", &["X", "Y"]);
        for path in [vec!["a", "c"], vec!["b", "a", "d"], vec!["a", "a", "d"]] {
            let path: Vec<String> = path.iter().map(|s| s.to_string()).collect();
            let expected = crate::oracle::brute_force_path_probability(&g, &path, 1000).unwrap();
            let got = likelihood::path_probability(&g, &path);
            assert!((got - expected).abs() < 1e-12, "path {path:?}: {got} vs {expected}");
        }
        let corpus = Corpus::from_paths(&[&["a", "b"]]);
        assert_eq!(log_likelihood(&g, &corpus).unwrap(), f64::NEG_INFINITY);
    }

    #[test]
    fn induce_degenerate_corpus_terminates_immediately() {
        let corpus = Corpus::from_paths(&[&["a", "b"], &["a", "b"]]);
        let (g, log) = induce(&corpus, &InductionConfig::default(), Layer::Spatial).unwrap();
        assert!(g.validate().is_empty());
        let p = likelihood::path_probability(&g, &["a".to_string(), "b".to_string()]);
        assert!((p - 1.0).abs() < 1e-12);
        for w in log.windows(2) {
            assert!(w[1].log_posterior >= w[0].log_posterior);
        }
    }

    /// Shared-prefix corpus: the greedy loop names the prefix chunk and
    /// merges the two continuations into an Or.
    #[test]
    fn induce_chunks_shared_prefix_and_merges_continuations() {
        let corpus = Corpus::from_paths(&[&["a", "b", "c"], &["a", "b", "d"]]);
        let initial = build_initial_grammar(&corpus, Layer::Spatial).unwrap();
        let cfg = config(0.01, 0.01);
        let (g, log) = induce(&corpus, &cfg, Layer::Spatial).unwrap();
        assert!(g.validate().is_empty());

        let accepted: Vec<&str> = log
            .iter()
            .filter(|r| r.fragment.starts_with("And") || r.fragment.starts_with("Or"))
            .map(|r| r.fragment.as_str())
            .collect();
        assert_eq!(accepted, ["And(a,b)", "Or(c,d)"]);

        // Accepted iterations strictly increase the posterior.
        let mut last = log[0].log_posterior;
        for row in &log[1..] {
            if row.fragment != "reestimate" {
                assert!(row.log_posterior > last);
            }
            assert!(row.log_posterior >= last);
            last = row.log_posterior;
        }

        assert!(g.node_count() <= initial.node_count());
        let ors: Vec<&GrammarNode> =
            g.nodes.values().filter(|n| n.kind == NodeKind::Or).collect();
        assert!(ors.iter().any(|n| {
            let mut names: Vec<&str> = n.children.iter().map(|(c, _)| c.name.as_str()).collect();
            names.sort();
            names == ["c", "d"]
        }));
        // Both corpus paths still derive.
        assert!(log_likelihood(&g, &corpus).unwrap() > f64::NEG_INFINITY);
    }

    #[test]
    fn induce_respects_max_iterations() {
        let corpus = Corpus::from_paths(&[&["a", "b", "c"], &["a", "b", "d"]]);
        let cfg = InductionConfig { max_iterations: 1, ..config(0.01, 0.01) };
        let (_, log) = induce(&corpus, &cfg, Layer::Spatial).unwrap();
        let accepted = log.iter().filter(|r| r.fragment.starts_with("And")).count();
        assert_eq!(accepted, 1);
    }

    #[test]
    fn estimate_or_probabilities_ratios_and_fallback() {
        let mut g = Grammar::new(Layer::Spatial, "S");
        for t in ["x", "y", "p", "q"] {
            g.add_terminal(t);
        }
        g.add_or("M", &[("x", 0.5), ("y", 0.5)]);
        g.add_or("Hidden", &[("p", 0.7), ("q", 0.3)]);
        g.add_or("Top", &[("M", 0.9), ("Hidden", 0.1)]);
        g.add_and("S", &["Top", "x"]);
        let corpus = Corpus::from_paths(&[&["x", "x"], &["x", "x"], &["x", "x"], &["y", "x"]]);
        let out = estimate_or_probabilities(&g, &corpus).unwrap();
        let m = &out.nodes[&out.sym("M")];
        let x = m.children.iter().find(|(c, _)| c.name == "x").unwrap();
        let y = m.children.iter().find(|(c, _)| c.name == "y").unwrap();
        assert_eq!(x.1, 0.75);
        assert_eq!(y.1, 0.25);
        // Never visited by any Viterbi derivation: uniform weights.
        let hidden = &out.nodes[&out.sym("Hidden")];
        assert!(hidden.children.iter().all(|(_, w)| *w == 0.5));
        assert!(out.validate().is_empty());
    }

    #[test]
    fn estimate_or_requires_derivable_corpus() {
        let mut g = Grammar::new(Layer::Spatial, "S");
        g.add_terminal("a").add_terminal("b");
        g.add_and("S", &["a", "b"]);
        let corpus = Corpus::from_paths(&[&["b", "a"]]);
        let err = estimate_or_probabilities(&g, &corpus).unwrap_err();
        assert!(err.to_string().starts_with("underivable-corpus"));
    }

    #[test]
    fn empty_corpus_is_an_error() {
        let corpus = Corpus::default();
        assert!(build_initial_grammar(&corpus, Layer::Spatial).is_err());
        assert!(induce(&corpus, &InductionConfig::default(), Layer::Spatial).is_err());
    }

    #[test]
    fn weight_recovery_from_sampled_derivations() {
        let mut g = Grammar::new(Layer::Spatial, "S");
        for t in ["a", "b", "c", "d", "e"] {
            g.add_terminal(t);
        }
        g.add_or("X", &[("a", 0.7), ("b", 0.3)]);
        g.add_or("Y", &[("c", 0.2), ("d", 0.5), ("e", 0.3)]);
        g.add_and("S", &["X", "Y"]);

        let records: Vec<crate::trace::Trace> = (0..1000)
            .map(|i| {
                let frontier = g.sample_derivation(i).unwrap();
                crate::trace::Trace {
                    id: format!("s{i}"),
                    path: frontier.into_iter().map(|s| s.name).collect(),
                    op: None,
                    features: None,
                }
            })
            .collect();
        let corpus = Corpus::new(records);

        // Start re-estimation from uniform weights.
        let mut blurred = g.clone();
        for node in blurred.nodes.values_mut() {
            if node.kind == NodeKind::Or {
                let k = node.children.len() as f64;
                for (_, w) in node.children.iter_mut() {
                    *w = 1.0 / k;
                }
            }
        }
        let estimated = estimate_or_probabilities(&blurred, &corpus).unwrap();
        for (id, node) in &g.nodes {
            if node.kind != NodeKind::Or {
                continue;
            }
            for (child, truth) in &node.children {
                let got = estimated.nodes[id]
                    .children
                    .iter()
                    .find(|(c, _)| c == child)
                    .unwrap()
                    .1;
                assert!(
                    (got - truth).abs() <= 0.05,
                    "weight of {child} under {id}: {got} vs {truth}"
                );
            }
        }
    }
}

fn apply_rename(state: &mut State, rename: &BTreeMap<String, String>) {
    if rename.is_empty() {
        return;
    }
    let mut defs = BTreeMap::new();
    for (name, (kind, children)) in &state.defs {
        let new_name = rename.get(name).cloned().unwrap_or_else(|| name.clone());
        let new_children = children
            .iter()
            .map(|(c, w)| (rename.get(c).cloned().unwrap_or_else(|| c.clone()), *w))
            .collect();
        defs.insert(new_name, (*kind, new_children));
    }
    state.defs = defs;
    for row in &mut state.types {
        for sym in &mut row.symbols {
            if let Some(n) = rename.get(sym) {
                *sym = n.clone();
            }
        }
    }
    for frag in &mut state.accepted {
        if let Some(n) = rename.get(&frag.root) {
            frag.root = n.clone();
        }
        for c in &mut frag.children {
            if let Some(n) = rename.get(c) {
                *c = n.clone();
            }
        }
    }
}
