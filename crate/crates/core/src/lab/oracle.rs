//! Expected partition counts under the planted design.
//!
//! A scene with a class-pool background is recoverable by correlation, so
//! both models succeed or fail on it together. A scene with a unique
//! background is recovered by the target with its own memorization recall,
//! while the reference can only hit the label by chance (1/C), independently.

use serde::{Deserialize, Serialize};

use super::scenes::{BackgroundKind, MemorizationOracle};
use crate::metrics::PartitionSummary;
use crate::split::SetName;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct KnnOutcomeAssumptions {
    /// Probability the target model recovers a unique-background scene it trained on.
    pub target_recall_unique: f64,
    /// Probability both models recover a class-pool scene.
    pub shared_recall_pooled: f64,
}

pub fn oracle_expected_partition(
    oracle: &MemorizationOracle,
    set: SetName,
    assumptions: KnnOutcomeAssumptions,
) -> PartitionSummary {
    let chance = 1.0 / oracle.num_classes.max(1) as f64;
    let mut out = PartitionSummary::default();
    for e in oracle.entries_in(set) {
        out.total += 1.0;
        match e.background {
            BackgroundKind::ClassPool => {
                let s = assumptions.shared_recall_pooled;
                out.correlated += s;
                out.unassociated += 1.0 - s;
            }
            BackgroundKind::Unique => {
                let t = assumptions.target_recall_unique;
                out.correlated += t * chance;
                out.memorized += t * (1.0 - chance);
                out.misrepresented += (1.0 - t) * chance;
                out.unassociated += (1.0 - t) * (1.0 - chance);
            }
        }
    }
    out
}
