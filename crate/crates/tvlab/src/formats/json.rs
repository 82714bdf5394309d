// SPDX-License-Identifier: MIT OR Apache-2.0

//! JSON artifacts: selections and θ checkpoints, planted configs, search
//! state. Floats round-trip exactly.

use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use tvlab_core::lab::SiteGrouping;
use tvlab_core::model::Stage;

use super::{read_file, write_file, FormatError, FormatResult};
use crate::meta::Meta;

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> FormatResult<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_file(path, text.as_bytes())
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> FormatResult<T> {
    Ok(serde_json::from_slice(&read_file(path)?)?)
}

/// One group of a selection or θ checkpoint. Model groups carry their
/// address; planted groups only an id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupEntry {
    pub id: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stage: Option<Stage>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub layer: Option<u16>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub head: Option<u16>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub token_group: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub theta: Option<f64>,
    pub selected: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionFile {
    pub meta: Meta,
    pub algorithm: String,
    /// Granularity name, or `planted`.
    pub granularity: String,
    pub tasks: Vec<String>,
    pub groups: Vec<GroupEntry>,
    /// Step of the chosen checkpoint, for iterative searches.
    pub step: Option<usize>,
    /// Held-out task score (mIoU or MSE; planted: loss).
    pub heldout_score: f64,
    pub seed: u64,
}

impl SelectionFile {
    #[allow(clippy::too_many_arguments)]
    pub fn for_grouping(
        meta: &Meta,
        algorithm: &str,
        grouping: &SiteGrouping,
        tasks: Vec<String>,
        mask: &[bool],
        theta: Option<&[f64]>,
        step: Option<usize>,
        heldout_score: f64,
        seed: u64,
    ) -> FormatResult<Self> {
        if mask.len() != grouping.len() || theta.is_some_and(|t| t.len() != mask.len()) {
            return Err(FormatError::Invalid(format!("mask of {} for {} groups", mask.len(), grouping.len())));
        }
        let groups = grouping
            .groups
            .iter()
            .zip(mask)
            .map(|(g, &m)| GroupEntry {
                id: g.id,
                stage: Some(g.stage),
                layer: Some(g.layer),
                head: g.head,
                token_group: Some(g.token_group()),
                theta: theta.map(|t| t[g.id]),
                selected: m,
            })
            .collect();
        Ok(SelectionFile {
            meta: meta.clone(),
            algorithm: algorithm.into(),
            granularity: grouping.granularity.name().into(),
            tasks,
            groups,
            step,
            heldout_score,
            seed,
        })
    }

    #[allow(clippy::too_many_arguments)]
    pub fn planted(
        meta: &Meta,
        algorithm: &str,
        tasks: Vec<String>,
        mask: &[bool],
        theta: Option<&[f64]>,
        step: Option<usize>,
        heldout_score: f64,
        seed: u64,
    ) -> Self {
        let groups = mask
            .iter()
            .enumerate()
            .map(|(id, &m)| GroupEntry {
                id,
                stage: None,
                layer: None,
                head: None,
                token_group: None,
                theta: theta.map(|t| t[id]),
                selected: m,
            })
            .collect();
        SelectionFile {
            meta: meta.clone(),
            algorithm: algorithm.into(),
            granularity: "planted".into(),
            tasks,
            groups,
            step,
            heldout_score,
            seed,
        }
    }

    pub fn mask(&self) -> Vec<bool> {
        self.groups.iter().map(|g| g.selected).collect()
    }

    /// Mask over `grouping`, matching groups by address.
    pub fn mask_for(&self, grouping: &SiteGrouping) -> FormatResult<Vec<bool>> {
        if self.granularity != grouping.granularity.name() {
            return Err(FormatError::Invalid(format!(
                "selection is at {} granularity, grouping at {}",
                self.granularity,
                grouping.granularity.name()
            )));
        }
        let mut mask = vec![false; grouping.len()];
        for g in self.groups.iter().filter(|g| g.selected) {
            let (Some(stage), Some(layer), Some(tg)) = (g.stage, g.layer, g.token_group.as_deref()) else {
                return Err(FormatError::Invalid(format!("group {} has no address", g.id)));
            };
            let id = grouping
                .find(stage, layer, g.head, tg)
                .ok_or_else(|| FormatError::Invalid(format!("group {} is not in this grouping", g.id)))?;
            mask[id] = true;
        }
        Ok(mask)
    }
}
