use std::fmt;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::clock::Timestamp;

/// Position of a DataBlock in its channel's lineage. Ordinals start at 0 and
/// advance by one on every snapshot.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct GenerationId(pub u64);

impl GenerationId {
    pub fn next(self) -> Self {
        GenerationId(self.0 + 1)
    }
}

impl fmt::Display for GenerationId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Where a product imported through a source proxy came from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub channel: String,
    pub product: String,
    pub generation: GenerationId,
}

/// A named unit of knowledge. Products are shared behind `Arc` once stored
/// and never mutated afterwards.
#[derive(Debug, Clone, PartialEq)]
pub struct DataProduct {
    pub name: String,
    pub value: Value,
    pub produced_by: String,
    pub produced_at: Timestamp,
    /// Generation of the block the product was first written to. Stamped by
    /// the dataspace on write.
    pub generation: GenerationId,
    pub origin: Option<Provenance>,
}

impl DataProduct {
    pub fn new(name: impl Into<String>, value: Value, produced_by: impl Into<String>, produced_at: Timestamp) -> Self {
        DataProduct {
            name: name.into(),
            value,
            produced_by: produced_by.into(),
            produced_at,
            generation: GenerationId::default(),
            origin: None,
        }
    }

    pub fn with_origin(mut self, origin: Provenance) -> Self {
        self.origin = Some(origin);
        self
    }
}
