//! Two-party secure detection of similar documents.
//!
//! Alice holds query documents, Bob holds a target collection. Each learns
//! which pairs have cosine similarity at or above a tolerance ε without
//! revealing its term vectors. A cheap filter over a few selected dimensions
//! prunes pairs that cannot be similar before the full secure product runs.

pub mod bench;
pub mod corpus;
pub mod error;
pub mod oracle;
pub mod par;
pub mod protocol;
pub mod secure_product;
pub mod select;
pub mod synthetic;
pub mod vector;

pub use corpus::{Corpus, RawDocument, Vocabulary};
pub use error::{Error, Result};
pub use oracle::{compare_results, oracle_detect, OracleResult, ResultDiff};
pub use par::ExecMode;
pub use protocol::{DetectionReport, SessionConfig};
pub use secure_product::SharedRandomMatrix;
pub use select::SelectionMethod;
pub use vector::{DocumentVector, FeatureIndexSet, FeatureVector};
