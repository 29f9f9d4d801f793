//! Plaintext ground truth: every pairwise cosine, no filtering, no masking.

use std::collections::{BTreeMap, BTreeSet};

use crate::error::Result;
use crate::par::{map_slice, ExecMode};
use crate::protocol::DetectionReport;
use crate::vector::{dot, DocumentVector};

#[derive(Debug, Clone, PartialEq)]
pub struct OracleResult {
    pub epsilon: f64,
    /// Pairs with cosine ≥ ε.
    pub pairs: BTreeSet<(u32, u32)>,
    /// Cosine of every non-degenerate pair.
    pub cosines: BTreeMap<(u32, u32), f64>,
}

pub fn oracle_detect(
    alice: &[DocumentVector],
    bob: &[DocumentVector],
    epsilon: f64,
    exec: ExecMode,
) -> Result<OracleResult> {
    let rows = map_slice(exec, alice, |u| -> Result<Vec<Option<f64>>> {
        bob.iter()
            .map(|v| {
                if u.is_degenerate() || v.is_degenerate() {
                    Ok(None)
                } else {
                    dot(u, v).map(Some)
                }
            })
            .collect()
    });
    let mut pairs = BTreeSet::new();
    let mut cosines = BTreeMap::new();
    for (qi, row) in rows.into_iter().enumerate() {
        for (ti, c) in row?.into_iter().enumerate() {
            if let Some(c) = c {
                let key = (qi as u32, ti as u32);
                if c >= epsilon {
                    pairs.insert(key);
                }
                cosines.insert(key, c);
            }
        }
    }
    Ok(OracleResult {
        epsilon,
        pairs,
        cosines,
    })
}

/// Pairs the protocol got wrong relative to the oracle.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ResultDiff {
    /// Similar per the oracle, not reported: false dismissals.
    pub missing: Vec<(u32, u32)>,
    /// Reported similar, not similar per the oracle.
    pub extra: Vec<(u32, u32)>,
}

impl ResultDiff {
    pub fn is_empty(&self) -> bool {
        self.missing.is_empty() && self.extra.is_empty()
    }
}

pub fn compare_results(report: &DetectionReport, oracle: &OracleResult) -> ResultDiff {
    let found = report.similar_pairs();
    ResultDiff {
        missing: oracle.pairs.difference(&found).copied().collect(),
        extra: found.difference(&oracle.pairs).copied().collect(),
    }
}
