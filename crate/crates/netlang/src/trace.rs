//! Observed records: probe-symbol paths plus the per-task feature table.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One feature value: a real measurement or a categorical token.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum FeatureValue {
    Num(f64),
    Cat(String),
}

impl FeatureValue {
    pub fn as_num(&self) -> Option<f64> {
        match self {
            FeatureValue::Num(x) => Some(*x),
            FeatureValue::Cat(_) => None,
        }
    }

    pub fn as_cat(&self) -> Option<&str> {
        match self {
            FeatureValue::Cat(s) => Some(s),
            FeatureValue::Num(_) => None,
        }
    }
}

/// The measurable-feature table of one record, keyed by feature id
/// (F0..F17 in the offloading scenario).
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FeatureRecord {
    #[serde(flatten)]
    pub values: BTreeMap<String, FeatureValue>,
}

impl FeatureRecord {
    pub fn get(&self, feature: &str) -> Option<&FeatureValue> {
        self.values.get(feature)
    }

    pub fn set_num(&mut self, feature: &str, value: f64) {
        self.values.insert(feature.to_string(), FeatureValue::Num(value));
    }

    pub fn set_cat(&mut self, feature: &str, value: &str) {
        self.values.insert(feature.to_string(), FeatureValue::Cat(value.to_string()));
    }

    /// Range checks for the offloading feature table: utilizations lie in
    /// [0,1], delays and counts are non-negative, the intent feature F0
    /// is present. Returns one message per violated rule.
    pub fn validate_offload_table(&self) -> Vec<String> {
        let mut out = Vec::new();
        if !self.values.contains_key("F0") {
            out.push("F0 missing".to_string());
        }
        for f in ["F13", "F14"] {
            if let Some(x) = self.get(f).and_then(FeatureValue::as_num) {
                if !(0.0..=1.0).contains(&x) {
                    out.push(format!("{f}={x} outside [0,1]"));
                }
            }
        }
        for f in ["F2", "F7", "F8", "F9", "F10", "F11", "F12"] {
            if let Some(x) = self.get(f).and_then(FeatureValue::as_num) {
                if x < 0.0 {
                    out.push(format!("{f}={x} negative delay"));
                }
            }
        }
        for f in ["F15", "F16", "F17"] {
            if let Some(x) = self.get(f).and_then(FeatureValue::as_num) {
                if x < 0.0 || x.fract() != 0.0 {
                    out.push(format!("{f}={x} is not a non-negative count"));
                }
            }
        }
        out
    }
}

/// One observed record: an ordered probe-symbol path, an optional
/// operation tag and an optional feature record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trace {
    pub id: String,
    pub path: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub op: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub features: Option<FeatureRecord>,
}

/// A trace corpus. Paths must be non-empty.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Corpus {
    pub records: Vec<Trace>,
}

impl Corpus {
    pub fn new(records: Vec<Trace>) -> Self {
        Corpus { records }
    }

    pub fn from_paths(paths: &[&[&str]]) -> Self {
        let records = paths
            .iter()
            .enumerate()
            .map(|(i, p)| Trace {
                id: format!("t{i}"),
                path: p.iter().map(|s| s.to_string()).collect(),
                op: None,
                features: None,
            })
            .collect();
        Corpus { records }
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn ensure_well_formed(&self) -> Result<()> {
        if self.records.is_empty() {
            return Err(Error::EmptyCorpus);
        }
        for r in &self.records {
            if r.path.is_empty() {
                return Err(Error::Format(format!("trace {} has an empty path", r.id)));
            }
        }
        Ok(())
    }

    /// Distinct paths with multiplicities, sorted lexicographically.
    pub fn distinct_paths(&self) -> Vec<(Vec<String>, usize)> {
        let mut counts: BTreeMap<Vec<String>, usize> = BTreeMap::new();
        for r in &self.records {
            *counts.entry(r.path.clone()).or_insert(0) += 1;
        }
        counts.into_iter().collect()
    }

    /// The set of symbols occurring in any path, sorted.
    pub fn alphabet(&self) -> Vec<String> {
        let mut set: std::collections::BTreeSet<String> = std::collections::BTreeSet::new();
        for r in &self.records {
            for s in &r.path {
                set.insert(s.clone());
            }
        }
        set.into_iter().collect()
    }

    pub fn write_jsonl<W: Write>(&self, mut w: W) -> Result<()> {
        for r in &self.records {
            serde_json::to_writer(&mut w, r)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn read_jsonl<R: BufRead>(r: R) -> Result<Corpus> {
        let mut records = Vec::new();
        for (i, line) in r.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let t: Trace = serde_json::from_str(&line)
                .map_err(|e| Error::Format(format!("traces line {}: {e}", i + 1)))?;
            records.push(t);
        }
        Ok(Corpus { records })
    }

    pub fn load(path: &std::path::Path) -> Result<Corpus> {
        let file = std::fs::File::open(path)?;
        Corpus::read_jsonl(std::io::BufReader::new(file))
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        let file = std::fs::File::create(path)?;
        self.write_jsonl(std::io::BufWriter::new(file))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn jsonl_round_trip() {
        let mut features = FeatureRecord::default();
        features.set_cat("F0", "success");
        features.set_cat("F1", "V_c");
        features.set_num("F2", 243.5);
        let corpus = Corpus::new(vec![Trace {
            id: "t0".into(),
            path: vec!["USER".into(), "CC".into(), "CLOUD".into(), "CC".into(), "USER".into()],
            op: Some("O_c".into()),
            features: Some(features),
        }]);
        let mut buf = Vec::new();
        corpus.write_jsonl(&mut buf).unwrap();
        let back = Corpus::read_jsonl(std::io::Cursor::new(buf)).unwrap();
        assert_eq!(corpus, back);
    }

    #[test]
    fn distinct_paths_counts() {
        let corpus = Corpus::from_paths(&[&["a", "b"], &["a", "b"], &["c"]]);
        let distinct = corpus.distinct_paths();
        assert_eq!(distinct.len(), 2);
        assert_eq!(distinct[0], (vec!["a".to_string(), "b".to_string()], 2));
        assert_eq!(distinct[1], (vec!["c".to_string()], 1));
    }

    #[test]
    fn offload_table_checks() {
        let mut f = FeatureRecord::default();
        f.set_cat("F0", "success");
        f.set_num("F13", 1.4);
        f.set_num("F7", -2.0);
        f.set_num("F15", 2.5);
        let problems = f.validate_offload_table();
        assert_eq!(problems.len(), 3);
    }
}
