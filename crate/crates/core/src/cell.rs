use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::prompt::TaskKind;

/// One cell of the model × task × variant × sample evaluation matrix.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct CellKey {
    pub model: String,
    pub task: TaskKind,
    pub variant_id: u32,
    pub sample_id: String,
}

impl CellKey {
    pub fn new(model: impl Into<String>, task: TaskKind, variant_id: u32, sample_id: impl Into<String>) -> Self {
        CellKey {
            model: model.into(),
            task,
            variant_id,
            sample_id: sample_id.into(),
        }
    }
}

impl fmt::Display for CellKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}/{}/{}", self.model, self.task, self.variant_id, self.sample_id)
    }
}

/// The full set of cells a run is expected to fill.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MatrixSpec {
    pub models: Vec<String>,
    pub variants: BTreeMap<TaskKind, Vec<u32>>,
    pub sample_ids: Vec<String>,
}

impl MatrixSpec {
    /// Cells in model, task, variant, sample order.
    pub fn cells(&self) -> impl Iterator<Item = CellKey> + '_ {
        self.models.iter().flat_map(move |m| {
            self.variants.iter().flat_map(move |(task, vs)| {
                vs.iter().flat_map(move |v| {
                    self.sample_ids
                        .iter()
                        .map(move |s| CellKey::new(m.clone(), *task, *v, s.clone()))
                })
            })
        })
    }

    pub fn len(&self) -> usize {
        let per_model: usize = self.variants.values().map(Vec::len).sum();
        self.models.len() * per_model * self.sample_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}
