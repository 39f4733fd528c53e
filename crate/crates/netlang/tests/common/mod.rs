//! Shared fixtures and random generators for the integration suites.

#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use netlang::caog::{build_caog, CaogConfig};
use netlang::fusion::{fuse, link_s_to_t, link_t_to_c, CrossLink, StcAog};
use netlang::grammar::Grammar;
use netlang::induction::{induce_layers, InductionConfig, LayeredInduction};
use netlang::naming::NamingMap;
use netlang::parsing::ParseGraph;
use netlang::sim::{simulate, SimConfig, SimOutput};
use netlang::symbol::{Layer, SymbolId};
use netlang::trace::{FeatureRecord, Trace};

/// The hand-built three-layer fragment used by the logic goldens: three
/// causal features over five values, four operations, two of which
/// decompose into micro-actions over entities.
pub fn fig2_aog() -> StcAog {
    let mut c = Grammar::new(Layer::Causal, "Intent");
    for v in ["V1", "V2", "V3", "V4", "V5"] {
        c.add_terminal(v);
    }
    c.add_or("C1", &[("V1", 0.5), ("V2", 0.5)]);
    c.add_or("C2", &[("V3", 0.5), ("V4", 0.5)]);
    c.add_or("C3", &[("V5", 1.0)]);
    c.add_and("Intent", &["C1", "C2", "C3"]);

    let mut t = Grammar::new(Layer::Temporal, "TASK");
    for a in ["a1", "ai", "a2", "aj", "e3", "e4"] {
        t.add_terminal(a);
    }
    t.add_and("T1", &["a1", "ai"]);
    t.add_and("T2", &["a2", "aj"]);
    t.add_or("T3", &[("e3", 1.0)]);
    t.add_or("T4", &[("e4", 1.0)]);
    t.add_or("TASK", &[("T1", 0.25), ("T2", 0.25), ("T3", 0.25), ("T4", 0.25)]);

    let mut s = Grammar::new(Layer::Spatial, "SROOT");
    for e in ["S1", "S2", "S3", "S4", "S5", "S6", "S7", "S8", "S9", "S10", "E3", "E4"] {
        s.add_terminal(e);
    }
    s.add_and("a1", &["S1", "S2"]);
    s.add_or("ai", &[("S3", 1.0 / 3.0), ("S4", 1.0 / 3.0), ("S5", 1.0 / 3.0)]);
    s.add_and("a2", &["S6", "S7", "S8"]);
    s.add_and("aj", &["S9", "S10"]);
    s.add_or("SROOT", &[("a1", 0.25), ("ai", 0.25), ("a2", 0.25), ("aj", 0.25)]);

    let links_ts = vec![
        CrossLink { from: SymbolId::temporal("a1"), to: SymbolId::spatial("a1"), p: 1.0 },
        CrossLink { from: SymbolId::temporal("ai"), to: SymbolId::spatial("ai"), p: 1.0 },
        CrossLink { from: SymbolId::temporal("a2"), to: SymbolId::spatial("a2"), p: 1.0 },
        CrossLink { from: SymbolId::temporal("aj"), to: SymbolId::spatial("aj"), p: 1.0 },
        CrossLink { from: SymbolId::temporal("e3"), to: SymbolId::spatial("E3"), p: 1.0 },
        CrossLink { from: SymbolId::temporal("e4"), to: SymbolId::spatial("E4"), p: 1.0 },
    ];
    let links_ct = vec![
        CrossLink { from: SymbolId::causal("V2"), to: SymbolId::temporal("T1"), p: 0.5 },
        CrossLink { from: SymbolId::causal("V2"), to: SymbolId::temporal("T2"), p: 0.5 },
        CrossLink { from: SymbolId::causal("V5"), to: SymbolId::temporal("T3"), p: 0.5 },
        CrossLink { from: SymbolId::causal("V5"), to: SymbolId::temporal("T4"), p: 0.5 },
    ];
    fuse(s, t, c, links_ts, links_ct).expect("fig2 fixture fuses")
}

/// The worked selection over [`fig2_aog`]: V2, V3, T1, T3 and S4.
pub fn fig2_pg() -> ParseGraph {
    let selections = [
        ("C1", "V2"),
        ("C2", "V3"),
        ("V2", "T1"),
        ("V5", "T3"),
        ("ai", "S4"),
    ]
    .into_iter()
    .map(|(k, v)| (k.to_string(), v.to_string()))
    .collect();
    ParseGraph { trace_id: "fig2".to_string(), log_likelihood: 0.0, selections }
}

pub struct PipelineArtifacts {
    pub output: SimOutput,
    pub layered: LayeredInduction,
    pub caog: Grammar,
    pub aog: StcAog,
}

/// Simulate -> induce -> causal grammar -> links -> fuse, with the
/// shipped defaults.
pub fn run_default_pipeline(n_tasks: usize, seed: u64) -> PipelineArtifacts {
    let config = SimConfig { n_tasks, seed, ..SimConfig::default() };
    let output = simulate(&config).expect("simulation runs");
    let layered = induce_layers(&output.corpus, &InductionConfig::default(), &NamingMap::shipped())
        .expect("induction runs");
    let features = output.features();
    let caog = build_caog(&features, "F0", &CaogConfig::default()).expect("caog builds");
    let (links_ts, warnings) = link_s_to_t(&layered.s, &layered.t, &layered.uses).expect("links");
    assert!(warnings.is_empty(), "unexpected coverage warnings: {warnings:?}");
    let tagged = output.tagged_features();
    let (links_ct, _exogenous) = link_t_to_c(&layered.t, &caog, &tagged).expect("value links");
    let aog = fuse(layered.s.clone(), layered.t.clone(), caog.clone(), links_ts, links_ct)
        .expect("fusion succeeds");
    PipelineArtifacts { output, layered, caog, aog }
}

/// The worked cloud-offload record: the five-symbol cellular round trip
/// with the destination feature observed.
pub fn worked_record() -> Trace {
    let mut features = FeatureRecord::default();
    features.set_cat("F1", "V_c");
    Trace {
        id: "worked".to_string(),
        path: ["USER", "CC", "CLOUD", "CC", "USER"].iter().map(|s| s.to_string()).collect(),
        op: None,
        features: Some(features),
    }
}

fn normalized_weights(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    let raw: Vec<f64> = (0..n).map(|_| rng.random::<f64>() + 0.1).collect();
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|w| w / total).collect()
}

/// Random valid plain grammar with at most `max_or` Or nodes and
/// frontier length at most six.
pub fn random_plain_grammar(rng: &mut ChaCha8Rng, max_or: usize) -> Grammar {
    let terminals = ["a", "b", "c", "d", "e"];
    let mut g = Grammar::new(Layer::Spatial, "S");
    for t in terminals {
        g.add_terminal(t);
    }
    let mut or_budget = max_or;
    let mut next_id = 0usize;

    fn build(
        g: &mut Grammar,
        rng: &mut ChaCha8Rng,
        terminals: &[&str],
        depth: usize,
        or_budget: &mut usize,
        next_id: &mut usize,
    ) -> String {
        if depth >= 2 {
            return terminals[rng.random_range(0..terminals.len())].to_string();
        }
        if depth > 0 && rng.random::<f64>() < 0.45 {
            return terminals[rng.random_range(0..terminals.len())].to_string();
        }
        let make_or = *or_budget > 0 && rng.random::<f64>() < 0.5;
        let width = if depth == 0 { rng.random_range(2..=3) } else { 2 };
        let id = format!("N{}", {
            *next_id += 1;
            *next_id
        });
        if make_or {
            *or_budget -= 1;
            let children: Vec<String> = (0..width)
                .map(|_| build(g, rng, terminals, depth + 1, or_budget, next_id))
                .collect();
            let weights = normalized_weights(rng, children.len());
            let pairs: Vec<(&str, f64)> = children
                .iter()
                .map(String::as_str)
                .zip(weights.iter().copied())
                .collect();
            g.add_or(&id, &pairs);
        } else {
            let children: Vec<String> = (0..width)
                .map(|_| build(g, rng, terminals, depth + 1, or_budget, next_id))
                .collect();
            let refs: Vec<&str> = children.iter().map(String::as_str).collect();
            g.add_and(&id, &refs);
        }
        id
    }

    let width = rng.random_range(2..=3);
    let children: Vec<String> = (0..width)
        .map(|_| build(&mut g, rng, &terminals, 1, &mut or_budget, &mut next_id))
        .collect();
    if or_budget > 0 && rng.random::<f64>() < 0.5 {
        let weights = normalized_weights(rng, children.len());
        let pairs: Vec<(&str, f64)> =
            children.iter().map(String::as_str).zip(weights.iter().copied()).collect();
        g.add_or("S", &pairs);
    } else {
        let refs: Vec<&str> = children.iter().map(String::as_str).collect();
        g.add_and("S", &refs);
    }
    assert!(g.validate().is_empty(), "generator produced an invalid grammar");
    g
}

/// Random fused STC-AOG with at most eight Or nodes plus a trace that
/// usually parses against it.
pub fn random_stc_aog(rng: &mut ChaCha8Rng) -> (StcAog, Trace) {
    let entities = ["e1", "e2", "e3", "e4", "e5", "e6"];
    let mut s = Grammar::new(Layer::Spatial, "SROOT");
    for e in entities {
        s.add_terminal(e);
    }
    // Up to two Or nodes inside spatial fragments plus the two roots
    // and up to two causal features: at most eight in total.
    let mut or_budget = 2usize;
    let mut fragment_names = Vec::new();
    for i in 0..3 {
        let name = format!("G{i}");
        if or_budget > 0 && rng.random::<f64>() < 0.4 {
            or_budget -= 1;
            let k = rng.random_range(2..=3);
            let children: Vec<&str> = (0..k)
                .map(|_| entities[rng.random_range(0..entities.len())])
                .collect::<std::collections::BTreeSet<_>>()
                .into_iter()
                .collect();
            if children.len() >= 2 {
                let weights = normalized_weights(rng, children.len());
                let pairs: Vec<(&str, f64)> =
                    children.into_iter().zip(weights.iter().copied()).collect();
                s.add_or(&name, &pairs);
            } else {
                s.add_and(&name, &[entities[0], entities[1]]);
            }
        } else {
            let k = rng.random_range(2..=3);
            let children: Vec<&str> =
                (0..k).map(|_| entities[rng.random_range(0..entities.len())]).collect();
            s.add_and(&name, &children);
        }
        fragment_names.push(name);
    }
    let weights = normalized_weights(rng, fragment_names.len());
    let root_pairs: Vec<(&str, f64)> = fragment_names
        .iter()
        .map(String::as_str)
        .zip(weights.iter().copied())
        .collect();
    s.add_or("SROOT", &root_pairs);

    let mut t = Grammar::new(Layer::Temporal, "TASK");
    let actions = ["m1", "m2", "m3"];
    for a in actions {
        t.add_terminal(a);
    }
    t.add_terminal("pe");
    let mut links_ts = Vec::new();
    for (i, a) in actions.iter().enumerate() {
        links_ts.push(CrossLink {
            from: SymbolId::temporal(*a),
            to: SymbolId::spatial(fragment_names[i % fragment_names.len()].clone()),
            p: 0.6 + 0.4 * rng.random::<f64>(),
        });
    }
    links_ts.push(CrossLink {
        from: SymbolId::temporal("pe"),
        to: SymbolId::spatial("e1"),
        p: 1.0,
    });
    let mut op_names = Vec::new();
    for i in 0..2 {
        let name = format!("Op{i}");
        let k = rng.random_range(2..=3);
        let children: Vec<&str> = (0..k)
            .map(|_| {
                if rng.random::<f64>() < 0.25 {
                    "pe"
                } else {
                    actions[rng.random_range(0..actions.len())]
                }
            })
            .collect();
        t.add_and(&name, &children);
        op_names.push(name);
    }
    let weights = normalized_weights(rng, op_names.len());
    let op_pairs: Vec<(&str, f64)> =
        op_names.iter().map(String::as_str).zip(weights.iter().copied()).collect();
    t.add_or("TASK", &op_pairs);

    let mut c = Grammar::new(Layer::Causal, "F0");
    let values = ["F1=u", "F1=v", "F1=w"];
    for v in values {
        c.add_terminal(v);
    }
    let weights = normalized_weights(rng, values.len());
    let value_pairs: Vec<(&str, f64)> =
        values.iter().copied().zip(weights.iter().copied()).collect();
    c.add_or("F1", &value_pairs);
    c.add_or("F0", &[("F1", 1.0)]);
    let mut links_ct = Vec::new();
    for v in values {
        if rng.random::<f64>() < 0.7 {
            let mut targets: Vec<&String> = op_names.iter().collect();
            if rng.random::<f64>() < 0.5 {
                targets.truncate(1);
            }
            for op in targets {
                links_ct.push(CrossLink {
                    from: SymbolId::causal(v),
                    to: SymbolId::temporal(op.clone()),
                    p: 0.3 + 0.5 * rng.random::<f64>(),
                });
            }
        }
    }

    let aog = fuse(s, t, c, links_ts, links_ct).expect("random aog fuses");

    // Sample a trace from the grammar itself so that most cases parse.
    let op = &aog.t.nodes[&aog.t.sym(&op_names[rng.random_range(0..op_names.len())])];
    let mut path = Vec::new();
    for (action, _) in op.children.clone() {
        let link = aog.link_for_action(&action).expect("action linked");
        sample_frontier(&aog.s, &link.to, rng, &mut path);
    }
    let mut features = FeatureRecord::default();
    if rng.random::<f64>() < 0.6 {
        let value = values[rng.random_range(0..values.len())];
        features.set_cat("F1", value.split_once('=').unwrap().1);
    }
    let trace = Trace {
        id: "random".to_string(),
        path,
        op: None,
        features: Some(features),
    };
    (aog, trace)
}

fn sample_frontier(g: &Grammar, sym: &SymbolId, rng: &mut ChaCha8Rng, out: &mut Vec<String>) {
    if g.terminals.contains(sym) {
        out.push(sym.name.clone());
        return;
    }
    let node = &g.nodes[sym];
    match node.kind {
        netlang::grammar::NodeKind::Terminal => out.push(sym.name.clone()),
        netlang::grammar::NodeKind::And => {
            for (child, _) in &node.children {
                sample_frontier(g, child, rng, out);
            }
        }
        netlang::grammar::NodeKind::Or => {
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
            sample_frontier(g, chosen, rng, out);
        }
    }
}
