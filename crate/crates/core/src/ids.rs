//! Stable point identifiers.

use serde::{Deserialize, Serialize};
use std::fmt;

/// Opaque identifier of a data point, stable for the lifetime of an
/// experiment. Ids are unique within an experiment and every id referenced by
/// a set must exist in the embedding store that backs the experiment.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Debug, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PointId(pub u32);

impl PointId {
    pub fn value(self) -> u32 {
        self.0
    }
}

impl fmt::Display for PointId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl From<u32> for PointId {
    fn from(v: u32) -> Self {
        PointId(v)
    }
}
