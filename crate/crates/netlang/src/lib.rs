//! netlang — a hierarchical network-language toolkit.
//!
//! Network behavior is treated as a language: probe traces are
//! sentences, AND-OR grammars are induced per layer (spatial entities,
//! temporal operations, causal features), fused into one STC-AOG,
//! interpreted against observations by Viterbi parsing, and rendered as
//! first-order-logic sentences for operators. A built-in edge-offloading
//! simulator generates reproducible corpora and evaluates offload
//! decision policies against the induced semantics.

pub mod caog;
pub mod error;
pub mod fol;
pub mod fusion;
pub mod grammar;
pub mod induction;
pub mod manifest;
pub mod naming;
pub mod oracle;
pub mod parsing;
pub mod sim;
pub mod symbol;
pub mod trace;

pub use error::{Error, Result};
pub use grammar::{Grammar, GrammarNode, NodeKind, Violation};
pub use symbol::{Layer, SymbolId};
pub use trace::{Corpus, FeatureRecord, FeatureValue, Trace};
