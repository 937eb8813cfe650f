use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::{is_permutation, SerializationOrder, Strategy};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SequenceSegment {
    pub strategy: Strategy,
    pub reversed: bool,
    /// Token index at each slot of this segment.
    pub tokens: Vec<usize>,
}

/// Concatenated token traversals fed to the state-space model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SasSequence {
    pub segments: Vec<SequenceSegment>,
    /// L x d, one row per slot.
    pub features: DMatrix<f64>,
}

impl SasSequence {
    pub fn len(&self) -> usize {
        self.features.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.features.nrows() == 0
    }

    pub fn token_count(&self) -> usize {
        self.segments.first().map_or(0, |s| s.tokens.len())
    }

    /// Token index behind every slot, segment after segment.
    pub fn slot_tokens(&self) -> Vec<usize> {
        self.segments.iter().flat_map(|s| s.tokens.iter().copied()).collect()
    }

    /// Same slot layout, rows gathered from a different G x d feature matrix.
    pub fn regather(&self, features: &DMatrix<f64>) -> Result<SasSequence> {
        if features.nrows() != self.token_count() {
            return Err(Error::DimensionMismatch(format!(
                "sequence covers {} tokens, features have {} rows",
                self.token_count(),
                features.nrows()
            )));
        }
        Ok(SasSequence {
            segments: self.segments.clone(),
            features: gather_rows(features, &self.slot_tokens()),
        })
    }
}

pub(crate) fn gather_rows(features: &DMatrix<f64>, rows: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), features.ncols(), |r, c| features[(rows[r], c)])
}

/// Concatenates arbitrary (order, reversed) segments over the same token set.
pub fn build_sequence(features: &DMatrix<f64>, parts: &[(&SerializationOrder, bool)]) -> Result<SasSequence> {
    if parts.is_empty() {
        return Err(Error::Empty("sequence segments"));
    }
    let g = features.nrows();
    let mut segments = Vec::with_capacity(parts.len());
    for (order, reversed) in parts {
        if order.len() != g {
            return Err(Error::DimensionMismatch(format!(
                "{} order has {} tokens, features have {} rows",
                order.strategy,
                order.len(),
                g
            )));
        }
        if !is_permutation(&order.permutation) {
            return Err(Error::InvalidArgument(format!("{} order is not a permutation", order.strategy)));
        }
        segments.push(SequenceSegment {
            strategy: order.strategy,
            reversed: *reversed,
            tokens: if *reversed { order.reversed() } else { order.permutation.clone() },
        });
    }
    let slots: Vec<usize> = segments.iter().flat_map(|s| s.tokens.iter().copied()).collect();
    Ok(SasSequence {
        features: gather_rows(features, &slots),
        segments,
    })
}

/// `[X_cds; rev X_cds; X_gcs; rev X_gcs]`, length 4G.
pub fn build_sas_sequence(
    features: &DMatrix<f64>,
    order_cds: &SerializationOrder,
    order_gcs: &SerializationOrder,
) -> Result<SasSequence> {
    build_sequence(
        features,
        &[(order_cds, false), (order_cds, true), (order_gcs, false), (order_gcs, true)],
    )
}
