//! Checkpoints carry everything needed to rebuild a model exactly: the
//! block plan, the layer configuration, the normalization moments, and every
//! named parameter tensor. Loading reconstructs the architecture from the
//! plan and then overwrites each freshly initialized parameter by name, so
//! a checkpoint round trip is bit-exact regardless of the seed used for the
//! throwaway initialization.
//!
//! The format is a single versioned JSON document. Version bumps are loud:
//! an unknown `schema` is an error, never a guess.

use super::model::{CinnConfig, CinnModel, Normalization};
use super::CinnError;
use crate::causal::BlockPlan;
use serde::{Deserialize, Serialize};
use std::path::Path;

pub const CHECKPOINT_SCHEMA: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct ParamEntry {
    name: String,
    shape: Vec<usize>,
    data: Vec<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
struct CheckpointDoc {
    schema: u32,
    config: CinnConfig,
    plan: BlockPlan,
    norm: Normalization,
    params: Vec<ParamEntry>,
}

pub fn save_cinn(model: &CinnModel, path: impl AsRef<Path>) -> Result<(), CinnError> {
    let params = model
        .store
        .ids()
        .map(|id| ParamEntry {
            name: model.store.name(id).to_string(),
            shape: model.store.value(id).shape().to_vec(),
            data: model.store.value(id).data().to_vec(),
        })
        .collect();
    let doc = CheckpointDoc {
        schema: CHECKPOINT_SCHEMA,
        config: model.config.clone(),
        plan: model.plan().clone(),
        norm: model.norm.clone(),
        params,
    };
    let json = serde_json::to_string(&doc).map_err(|e| CinnError::CheckpointParse(e.to_string()))?;
    std::fs::write(path, json)?;
    Ok(())
}

pub fn load_cinn(path: impl AsRef<Path>) -> Result<CinnModel, CinnError> {
    let json = std::fs::read_to_string(path)?;
    let doc: CheckpointDoc =
        serde_json::from_str(&json).map_err(|e| CinnError::CheckpointParse(e.to_string()))?;
    if doc.schema != CHECKPOINT_SCHEMA {
        return Err(CinnError::CheckpointSchema { found: doc.schema, expected: CHECKPOINT_SCHEMA });
    }
    let mut model = CinnModel::new(doc.plan, doc.config, 0);
    model.norm = doc.norm;
    for entry in &doc.params {
        let id = model.store.id_by_name(&entry.name).ok_or_else(|| CinnError::CheckpointParam {
            name: entry.name.clone(),
            problem: "not part of the planned architecture".to_string(),
        })?;
        let slot = model.store.value_mut(id);
        if slot.shape() != entry.shape.as_slice() || entry.data.len() != slot.len() {
            return Err(CinnError::CheckpointParam {
                name: entry.name.clone(),
                problem: format!(
                    "shape {:?} with {} values does not fit slot {:?}",
                    entry.shape,
                    entry.data.len(),
                    slot.shape()
                ),
            });
        }
        slot.data_mut().copy_from_slice(&entry.data);
    }
    // every architecture parameter must have been restored, not just the
    // subset the file happened to contain
    if doc.params.len() != model.store.len() {
        let seen: std::collections::BTreeSet<&str> =
            doc.params.iter().map(|p| p.name.as_str()).collect();
        let missing = model
            .store
            .ids()
            .map(|id| model.store.name(id))
            .find(|n| !seen.contains(n))
            .unwrap_or("duplicate entries");
        return Err(CinnError::CheckpointParam {
            name: missing.to_string(),
            problem: "absent from checkpoint".to_string(),
        });
    }
    Ok(model)
}
