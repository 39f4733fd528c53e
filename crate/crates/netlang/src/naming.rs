//! Display names for induced fragments.
//!
//! Induction assigns machine ids to fragments. The naming map renames
//! them for presentation, keyed by the fragment's content signature
//! (e.g. `And(CC,CLOUD)`), so the mapping survives changes in
//! acceptance order. Fragments without an entry get automatic `A<n>`
//! names. The shipped default map covers the default offloading
//! topology.

use std::collections::BTreeMap;

use crate::error::Result;

const DEFAULT_NAMES: &str = include_str!("../data/default_names.json");

#[derive(Debug, Clone, Default)]
pub struct NamingMap {
    by_signature: BTreeMap<String, String>,
}

impl NamingMap {
    pub fn empty() -> Self {
        NamingMap::default()
    }

    /// The map shipped with the default simulator topology.
    pub fn shipped() -> Self {
        Self::from_json(DEFAULT_NAMES).expect("shipped naming map parses")
    }

    pub fn from_json(json: &str) -> Result<Self> {
        let by_signature: BTreeMap<String, String> = serde_json::from_str(json)?;
        Ok(NamingMap { by_signature })
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json(&text)
    }

    pub fn lookup(&self, signature: &str) -> Option<&str> {
        self.by_signature.get(signature).map(String::as_str)
    }

    pub fn insert(&mut self, signature: &str, display: &str) {
        self.by_signature.insert(signature.to_string(), display.to_string());
    }
}
