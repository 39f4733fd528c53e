use std::fmt;

use serde::{Deserialize, Serialize};

/// The three grammar layers of the language system.
///
/// Spatial holds network entities, Temporal holds micro-actions and
/// operations, Causal holds measurable features and their values.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Layer {
    Spatial,
    Temporal,
    Causal,
}

impl Layer {
    pub fn tag(self) -> &'static str {
        match self {
            Layer::Spatial => "S",
            Layer::Temporal => "T",
            Layer::Causal => "C",
        }
    }

    pub fn from_tag(tag: &str) -> Option<Layer> {
        match tag {
            "S" | "Spatial" | "s" => Some(Layer::Spatial),
            "T" | "Temporal" | "t" => Some(Layer::Temporal),
            "C" | "Causal" | "c" => Some(Layer::Causal),
            _ => None,
        }
    }
}

impl fmt::Display for Layer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Layer::Spatial => write!(f, "Spatial"),
            Layer::Temporal => write!(f, "Temporal"),
            Layer::Causal => write!(f, "Causal"),
        }
    }
}

/// A grammar symbol: a short token name plus the layer it lives in.
///
/// Names may not contain whitespace or any of `( ) , → ∧ ∨ ∀ ∃`; those
/// characters are reserved by the logic rendering and the DOT export.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct SymbolId {
    pub name: String,
    pub layer: Layer,
}

const RESERVED: [char; 8] = ['(', ')', ',', '→', '∧', '∨', '∀', '∃'];

impl SymbolId {
    pub fn new(name: impl Into<String>, layer: Layer) -> Self {
        SymbolId { name: name.into(), layer }
    }

    pub fn spatial(name: impl Into<String>) -> Self {
        Self::new(name, Layer::Spatial)
    }

    pub fn temporal(name: impl Into<String>) -> Self {
        Self::new(name, Layer::Temporal)
    }

    pub fn causal(name: impl Into<String>) -> Self {
        Self::new(name, Layer::Causal)
    }

    /// Checks the token rules for `name`; `None` means well formed.
    pub fn name_violation(name: &str) -> Option<String> {
        if name.is_empty() {
            return Some("symbol name is empty".to_string());
        }
        if name.chars().any(|c| c.is_whitespace()) {
            return Some(format!("symbol name {name:?} contains whitespace"));
        }
        if let Some(c) = name.chars().find(|c| RESERVED.contains(c)) {
            return Some(format!("symbol name {name:?} contains reserved character {c:?}"));
        }
        None
    }
}

impl fmt::Display for SymbolId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.name)
    }
}
