//! Top-down construction of the causal grammar.
//!
//! The intent feature is the root; the features most relevant to it
//! become its children, each expanded into an Or over its observed
//! values or value ranges. Relevance comes from a pluggable statistical
//! estimator (absolute Pearson correlation over one-hot encodings, or
//! binned mutual information) together with a consistency figure: the
//! held-out accuracy of a nearest-centroid classifier over the
//! score-weighted features.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grammar::{Grammar, GrammarNode};
use crate::symbol::{Layer, SymbolId};
use crate::trace::{FeatureRecord, FeatureValue};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Estimator {
    AbsCorrelation,
    MutualInformation,
}

impl Estimator {
    pub fn id(self) -> &'static str {
        match self {
            Estimator::AbsCorrelation => "abs-correlation",
            Estimator::MutualInformation => "mutual-information",
        }
    }

    pub fn from_id(id: &str) -> Option<Self> {
        match id {
            "abs-correlation" | "corr" => Some(Estimator::AbsCorrelation),
            "mutual-information" | "mi" => Some(Estimator::MutualInformation),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct CaogConfig {
    pub estimator: Estimator,
    pub top_k: usize,
    pub bins: usize,
    pub max_depth: usize,
}

impl Default for CaogConfig {
    fn default() -> Self {
        CaogConfig { estimator: Estimator::MutualInformation, top_k: 2, bins: 4, max_depth: 1 }
    }
}

impl CaogConfig {
    pub fn ensure_valid(&self) -> Result<()> {
        if self.bins < 2 {
            return Err(Error::InvalidConfig(format!("bins must be at least 2, got {}", self.bins)));
        }
        if self.top_k < 1 {
            return Err(Error::InvalidConfig("top_k must be at least 1".to_string()));
        }
        if self.max_depth < 1 {
            return Err(Error::InvalidConfig("max_depth must be at least 1".to_string()));
        }
        Ok(())
    }
}

/// Per-feature relevance against one intent feature.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RelevanceScores {
    pub intent: String,
    pub estimator: String,
    pub scores: BTreeMap<String, f64>,
    /// Held-out accuracy of the score-weighted centroid classifier.
    pub consistency: f64,
}

impl RelevanceScores {
    /// Feature ids ranked by score descending, id ascending on ties.
    pub fn ranked(&self) -> Vec<(&str, f64)> {
        let mut v: Vec<(&str, f64)> = self.scores.iter().map(|(k, s)| (k.as_str(), *s)).collect();
        v.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap_or(std::cmp::Ordering::Equal).then(a.0.cmp(b.0)));
        v
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("feature,score,rank\n");
        for (rank, (feature, score)) in self.ranked().iter().enumerate() {
            s.push_str(&format!("{},{},{}\n", feature, score, rank + 1));
        }
        s
    }
}

const MIN_RECORDS: usize = 30;

fn feature_ids(dataset: &[FeatureRecord]) -> Vec<String> {
    let mut all: BTreeSet<String> = BTreeSet::new();
    for r in dataset {
        for k in r.values.keys() {
            all.insert(k.clone());
        }
    }
    // Only features present in every record are comparable.
    all.into_iter()
        .filter(|f| dataset.iter().all(|r| r.values.contains_key(f)))
        .collect()
}

fn distinct_cats(dataset: &[FeatureRecord], feature: &str) -> Vec<String> {
    let mut set = BTreeSet::new();
    for r in dataset {
        match r.get(feature) {
            Some(FeatureValue::Cat(s)) => {
                set.insert(s.clone());
            }
            Some(FeatureValue::Num(x)) => {
                set.insert(format!("{x}"));
            }
            None => {}
        }
    }
    set.into_iter().collect()
}

fn is_numeric(dataset: &[FeatureRecord], feature: &str) -> bool {
    dataset.iter().all(|r| matches!(r.get(feature), Some(FeatureValue::Num(_))))
}

fn numeric_column(dataset: &[FeatureRecord], feature: &str) -> Vec<f64> {
    dataset
        .iter()
        .map(|r| r.get(feature).and_then(FeatureValue::as_num).unwrap_or(0.0))
        .collect()
}

fn one_hot_columns(dataset: &[FeatureRecord], feature: &str) -> Vec<(String, Vec<f64>)> {
    distinct_cats(dataset, feature)
        .into_iter()
        .map(|value| {
            let col = dataset
                .iter()
                .map(|r| match r.get(feature) {
                    Some(FeatureValue::Cat(s)) if *s == value => 1.0,
                    Some(FeatureValue::Num(x)) if format!("{x}") == value => 1.0,
                    _ => 0.0,
                })
                .collect();
            (value, col)
        })
        .collect()
}

fn encoded_columns(dataset: &[FeatureRecord], feature: &str) -> Vec<Vec<f64>> {
    if is_numeric(dataset, feature) {
        vec![numeric_column(dataset, feature)]
    } else {
        one_hot_columns(dataset, feature).into_iter().map(|(_, c)| c).collect()
    }
}

fn pearson(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx <= 0.0 || syy <= 0.0 {
        0.0
    } else {
        sxy / (sxx.sqrt() * syy.sqrt())
    }
}

/// Per-record category index of a feature, numeric features first cut
/// into `bins` equal-frequency bins.
fn category_indices(dataset: &[FeatureRecord], feature: &str, bins: usize) -> Vec<usize> {
    if is_numeric(dataset, feature) {
        let col = numeric_column(dataset, feature);
        let cuts = equal_frequency_boundaries(&col, bins);
        col.iter()
            .map(|x| cuts.iter().take_while(|c| x >= c).count())
            .collect()
    } else {
        let cats = distinct_cats(dataset, feature);
        let index: BTreeMap<&str, usize> =
            cats.iter().enumerate().map(|(i, c)| (c.as_str(), i)).collect();
        dataset
            .iter()
            .map(|r| match r.get(feature) {
                Some(FeatureValue::Cat(s)) => index[s.as_str()],
                Some(FeatureValue::Num(x)) => index[format!("{x}").as_str()],
                None => 0,
            })
            .collect()
    }
}

fn mutual_information(xs: &[usize], ys: &[usize]) -> f64 {
    let n = xs.len() as f64;
    let mut joint: BTreeMap<(usize, usize), f64> = BTreeMap::new();
    let mut px: BTreeMap<usize, f64> = BTreeMap::new();
    let mut py: BTreeMap<usize, f64> = BTreeMap::new();
    for (&x, &y) in xs.iter().zip(ys) {
        *joint.entry((x, y)).or_insert(0.0) += 1.0;
        *px.entry(x).or_insert(0.0) += 1.0;
        *py.entry(y).or_insert(0.0) += 1.0;
    }
    let mut mi = 0.0;
    for ((x, y), nxy) in &joint {
        let pxy = nxy / n;
        let p = (px[x] / n) * (py[y] / n);
        mi += pxy * (pxy / p).ln();
    }
    mi.max(0.0)
}

/// Scores every non-intent feature against the intent and reports the
/// estimator's consistency.
pub fn relevance_scores(
    dataset: &[FeatureRecord],
    intent: &str,
    config: &CaogConfig,
) -> Result<RelevanceScores> {
    config.ensure_valid()?;
    if dataset.len() < MIN_RECORDS {
        return Err(Error::InsufficientData(format!(
            "need at least {MIN_RECORDS} records, got {}",
            dataset.len()
        )));
    }
    if dataset.iter().any(|r| !r.values.contains_key(intent)) {
        return Err(Error::InsufficientData(format!(
            "intent feature {intent} missing from some records"
        )));
    }
    if distinct_cats(dataset, intent).len() < 2 {
        return Err(Error::ConstantIntent(intent.to_string()));
    }

    let features: Vec<String> = feature_ids(dataset).into_iter().filter(|f| f != intent).collect();
    let mut scores = BTreeMap::new();
    match config.estimator {
        Estimator::AbsCorrelation => {
            let intent_cols = encoded_columns(dataset, intent);
            for f in &features {
                let mut best: f64 = 0.0;
                for fc in encoded_columns(dataset, f) {
                    for ic in &intent_cols {
                        best = best.max(pearson(&fc, ic).abs());
                    }
                }
                scores.insert(f.clone(), best);
            }
        }
        Estimator::MutualInformation => {
            let intent_idx = category_indices(dataset, intent, config.bins);
            for f in &features {
                let f_idx = category_indices(dataset, f, config.bins);
                scores.insert(f.clone(), mutual_information(&f_idx, &intent_idx));
            }
        }
    }

    let consistency = consistency_accuracy(dataset, intent, &scores);
    Ok(RelevanceScores {
        intent: intent.to_string(),
        estimator: config.estimator.id().to_string(),
        scores,
        consistency,
    })
}

/// Held-out accuracy of a nearest-centroid classifier predicting the
/// intent from score-weighted standardized features. Deterministic
/// 70/30 front/back split.
fn consistency_accuracy(
    dataset: &[FeatureRecord],
    intent: &str,
    scores: &BTreeMap<String, f64>,
) -> f64 {
    let split = (dataset.len() * 7).div_ceil(10);
    let (train, held) = dataset.split_at(split);
    if held.is_empty() {
        return 0.0;
    }

    let labels: Vec<String> = dataset
        .iter()
        .map(|r| match r.get(intent) {
            Some(FeatureValue::Cat(s)) => s.clone(),
            Some(FeatureValue::Num(x)) => format!("{x}"),
            None => String::new(),
        })
        .collect();

    // Standardize on the training rows, then weight by score.
    let mut columns: Vec<(f64, Vec<f64>, f64, f64)> = Vec::new();
    for (f, score) in scores {
        for col in encoded_columns(dataset, f) {
            let m = col[..split].iter().sum::<f64>() / split as f64;
            let var = col[..split].iter().map(|x| (x - m) * (x - m)).sum::<f64>() / split as f64;
            columns.push((*score, col, m, var.sqrt()));
        }
    }
    let encoded: Vec<Vec<f64>> = (0..dataset.len())
        .map(|i| {
            columns
                .iter()
                .map(|(score, col, m, sd)| if *sd > 0.0 { score * (col[i] - m) / sd } else { 0.0 })
                .collect()
        })
        .collect();

    let mut centroids: BTreeMap<&str, (Vec<f64>, usize)> = BTreeMap::new();
    for i in 0..train.len() {
        let entry = centroids
            .entry(labels[i].as_str())
            .or_insert_with(|| (vec![0.0; columns.len()], 0));
        for (k, v) in encoded[i].iter().enumerate() {
            entry.0[k] += v;
        }
        entry.1 += 1;
    }
    let centroids: Vec<(&str, Vec<f64>)> = centroids
        .into_iter()
        .map(|(label, (sum, n))| (label, sum.iter().map(|x| x / n as f64).collect()))
        .collect();
    if centroids.len() < 2 {
        return 0.0;
    }

    let mut correct = 0usize;
    for i in split..dataset.len() {
        let mut best: Option<(&str, f64)> = None;
        for (label, centroid) in &centroids {
            let d2: f64 = encoded[i]
                .iter()
                .zip(centroid)
                .map(|(a, b)| (a - b) * (a - b))
                .sum();
            let better = match best {
                None => true,
                Some((_, cur)) => d2 < cur,
            };
            if better {
                best = Some((label, d2));
            }
        }
        if let Some((label, _)) = best {
            if label == labels[i] {
                correct += 1;
            }
        }
    }
    correct as f64 / held.len() as f64
}

/// One discretized value of a feature: a categorical token or a
/// half-open range (the top range is closed).
#[derive(Debug, Clone, PartialEq)]
pub enum ValueBin {
    Cat(String),
    Range { lo: f64, hi: f64, last: bool },
}

impl ValueBin {
    pub fn label(&self) -> String {
        match self {
            ValueBin::Cat(s) => s.clone(),
            ValueBin::Range { lo, hi, .. } => format!("{lo}..{hi}"),
        }
    }

    pub fn symbol_name(&self, feature: &str) -> String {
        format!("{feature}={}", self.label())
    }

    pub fn contains(&self, value: &FeatureValue) -> bool {
        match (self, value) {
            (ValueBin::Cat(s), FeatureValue::Cat(v)) => s == v,
            (ValueBin::Cat(s), FeatureValue::Num(x)) => *s == format!("{x}"),
            (ValueBin::Range { lo, hi, last }, FeatureValue::Num(x)) => {
                if *last {
                    *x >= *lo && *x <= *hi
                } else {
                    *x >= *lo && *x < *hi
                }
            }
            (ValueBin::Range { .. }, FeatureValue::Cat(_)) => false,
        }
    }
}

fn equal_frequency_boundaries(values: &[f64], bins: usize) -> Vec<f64> {
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
    let n = sorted.len();
    let mut cuts = Vec::new();
    for i in 1..bins {
        let k = i * n / bins;
        if k == 0 || k >= n {
            continue;
        }
        let boundary = (sorted[k - 1] + sorted[k]) / 2.0;
        if sorted[k - 1] < sorted[k] && cuts.last().map_or(true, |c| *c < boundary) {
            cuts.push(boundary);
        }
    }
    cuts
}

/// Discretizes one feature into value symbols: categorical features map
/// each distinct value to a symbol, continuous features split into
/// equal-frequency half-open ranges covering the observed span. The
/// flag reports a degenerate single-value feature.
pub fn discretize_feature(
    dataset: &[FeatureRecord],
    feature: &str,
    bins: usize,
) -> Result<(Vec<ValueBin>, bool)> {
    if bins < 2 {
        return Err(Error::InvalidConfig(format!("bins must be at least 2, got {bins}")));
    }
    if dataset.iter().all(|r| r.get(feature).is_none()) {
        return Err(Error::InsufficientData(format!("feature {feature} absent from dataset")));
    }
    if !is_numeric(dataset, feature) {
        let cats = distinct_cats(dataset, feature);
        let flagged = cats.len() == 1;
        return Ok((cats.into_iter().map(ValueBin::Cat).collect(), flagged));
    }
    let col = numeric_column(dataset, feature);
    let lo = col.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = col.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if lo == hi {
        return Ok((vec![ValueBin::Cat(format!("{lo}"))], true));
    }
    let cuts = equal_frequency_boundaries(&col, bins);
    let mut edges = vec![lo];
    edges.extend(cuts);
    edges.push(hi);
    let mut out = Vec::new();
    for w in edges.windows(2) {
        out.push(ValueBin::Range { lo: w[0], hi: w[1], last: false });
    }
    if let Some(ValueBin::Range { last, .. }) = out.last_mut() {
        *last = true;
    }
    Ok((out, false))
}

/// Builds the causal grammar: the intent is the root, its children are
/// the top-k relevant features, each an Or over its discretized values
/// weighted by empirical frequency. Deeper levels re-apply the scoring
/// with each child feature as a sub-intent.
pub fn build_caog(dataset: &[FeatureRecord], intent: &str, config: &CaogConfig) -> Result<Grammar> {
    config.ensure_valid()?;
    let mut g = Grammar::new(Layer::Causal, intent);
    let mut used: BTreeSet<String> = BTreeSet::new();
    used.insert(intent.to_string());
    build_level(&mut g, dataset, intent, config, 1, &mut used)?;
    g.ensure_valid()?;
    Ok(g)
}

fn build_level(
    g: &mut Grammar,
    dataset: &[FeatureRecord],
    intent: &str,
    config: &CaogConfig,
    depth: usize,
    used: &mut BTreeSet<String>,
) -> Result<()> {
    let scores = relevance_scores(dataset, intent, config)?;
    let mut selected: Vec<String> = scores
        .ranked()
        .into_iter()
        .map(|(f, _)| f.to_string())
        .filter(|f| !used.contains(f))
        .take(config.top_k)
        .collect();
    if selected.is_empty() {
        return Err(Error::InsufficientData(format!(
            "no candidate child features for intent {intent}"
        )));
    }
    // Selection is by score; presentation order is by feature id.
    selected.sort();
    for f in &selected {
        used.insert(f.clone());
    }

    let mut child_ids = Vec::new();
    for feature in &selected {
        let or_id = install_value_or(g, dataset, feature, config)?;
        if depth < config.max_depth {
            // The child feature becomes a sub-intent when it still has
            // candidate children of its own.
            let sub = build_sub_level(g, dataset, feature, config, depth + 1, used, &or_id);
            child_ids.push(sub.unwrap_or(or_id));
        } else {
            child_ids.push(or_id);
        }
    }

    let intent_id = g.sym(intent);
    let node = if child_ids.len() >= 2 {
        GrammarNode::and(intent_id.clone(), child_ids.iter().map(|n| g.sym(n)).collect())
    } else {
        GrammarNode::or(intent_id.clone(), vec![(g.sym(&child_ids[0]), 1.0)])
    };
    g.nodes.insert(intent_id, node);
    Ok(())
}

fn build_sub_level(
    g: &mut Grammar,
    dataset: &[FeatureRecord],
    feature: &str,
    config: &CaogConfig,
    depth: usize,
    used: &mut BTreeSet<String>,
    value_or: &str,
) -> Option<String> {
    let scores = relevance_scores(dataset, feature, config).ok()?;
    let mut selected: Vec<String> = scores
        .ranked()
        .into_iter()
        .map(|(f, _)| f.to_string())
        .filter(|f| !used.contains(f))
        .take(config.top_k)
        .collect();
    if selected.is_empty() {
        return None;
    }
    selected.sort();
    for f in &selected {
        used.insert(f.clone());
    }
    let mut children = vec![value_or.to_string()];
    for sub in &selected {
        let or_id = install_value_or(g, dataset, sub, config).ok()?;
        if depth < config.max_depth {
            let deeper = build_sub_level(g, dataset, sub, config, depth + 1, used, &or_id);
            children.push(deeper.unwrap_or(or_id));
        } else {
            children.push(or_id);
        }
    }
    let wrapper = format!("{feature}.node");
    let id = g.sym(&wrapper);
    g.nodes.insert(
        id.clone(),
        GrammarNode::and(id.clone(), children.iter().map(|n| g.sym(n)).collect()),
    );
    Some(wrapper)
}

/// Installs `feature` as an Or node over its discretized values and
/// returns the node id. Weights are the empirical bin frequencies.
fn install_value_or(
    g: &mut Grammar,
    dataset: &[FeatureRecord],
    feature: &str,
    config: &CaogConfig,
) -> Result<String> {
    let (bins, _) = discretize_feature(dataset, feature, config.bins)?;
    let present: Vec<&FeatureRecord> = dataset.iter().filter(|r| r.get(feature).is_some()).collect();
    let mut weighted = Vec::new();
    for bin in &bins {
        let count = present
            .iter()
            .filter(|r| bin.contains(r.get(feature).expect("present")))
            .count();
        let name = bin.symbol_name(feature);
        g.add_terminal(&name);
        weighted.push((g.sym(&name), count as f64 / present.len() as f64));
    }
    // Empty bins cannot happen with equal-frequency edges, but guard
    // the weights anyway.
    let id = g.sym(feature);
    g.nodes.insert(
        id.clone(),
        GrammarNode::or(id.clone(), weighted.into_iter().filter(|(_, w)| *w > 0.0).collect()),
    );
    Ok(feature.to_string())
}

/// How a causal value terminal matches observed feature records. Parsed
/// from the `feature=value` terminal naming convention; range values
/// detect the closed top bin from their Or siblings.
pub struct ValueMatcher {
    pub feature: String,
    pub bin: ValueBin,
}

impl ValueMatcher {
    pub fn matches(&self, record: &FeatureRecord) -> bool {
        record.get(&self.feature).is_some_and(|v| self.bin.contains(v))
    }
}

pub fn value_matcher(c: &Grammar, value: &SymbolId) -> Option<ValueMatcher> {
    let (feature, rest) = value.name.split_once('=')?;
    let bin = match parse_range(rest) {
        Some((lo, hi)) => {
            let last = max_range_hi(c, feature).is_some_and(|top| hi >= top);
            ValueBin::Range { lo, hi, last }
        }
        None => ValueBin::Cat(rest.to_string()),
    };
    Some(ValueMatcher { feature: feature.to_string(), bin })
}

fn parse_range(s: &str) -> Option<(f64, f64)> {
    let (lo, hi) = s.split_once("..")?;
    Some((lo.parse().ok()?, hi.parse().ok()?))
}

fn max_range_hi(c: &Grammar, feature: &str) -> Option<f64> {
    let prefix = format!("{feature}=");
    c.terminals
        .iter()
        .filter_map(|t| t.name.strip_prefix(&prefix))
        .filter_map(parse_range)
        .map(|(_, hi)| hi)
        .fold(None, |acc, hi| Some(acc.map_or(hi, |a: f64| a.max(hi))))
}
