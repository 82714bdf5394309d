// SPDX-License-Identifier: MIT OR Apache-2.0

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use super::ScoreTable;
use crate::error::{invalid, Error, Result};
use crate::model::{ModelConfig, SiteAddress, Stage};
use crate::tasks::{grid_position, Quadrant, TokenRole};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "lowercase"))]
pub enum Granularity {
    Token,
    Quadrant,
    Head,
    Layer,
}

impl Granularity {
    pub const ALL: [Granularity; 4] = [Granularity::Token, Granularity::Quadrant, Granularity::Head, Granularity::Layer];

    pub fn name(self) -> &'static str {
        match self {
            Granularity::Token => "token",
            Granularity::Quadrant => "quadrant",
            Granularity::Head => "head",
            Granularity::Layer => "layer",
        }
    }
}

impl fmt::Display for Granularity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Granularity {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Granularity::ALL.into_iter().find(|g| g.name() == s).ok_or_else(|| invalid!("unknown granularity {s:?}"))
    }
}

/// Which stages a grouping may draw sites from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "lowercase"))]
pub enum StageFilter {
    Encoder,
    Decoder,
    #[default]
    Both,
}

impl StageFilter {
    pub const ALL: [StageFilter; 3] = [StageFilter::Encoder, StageFilter::Decoder, StageFilter::Both];

    pub fn accepts(self, stage: Stage) -> bool {
        match self {
            StageFilter::Encoder => stage == Stage::Encoder,
            StageFilter::Decoder => stage == Stage::Decoder,
            StageFilter::Both => true,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            StageFilter::Encoder => "encoder",
            StageFilter::Decoder => "decoder",
            StageFilter::Both => "both",
        }
    }
}

impl FromStr for StageFilter {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        StageFilter::ALL.into_iter().find(|g| g.name() == s).ok_or_else(|| invalid!("unknown stage filter {s:?}"))
    }
}

/// One selectable unit of sites.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SiteGroup {
    pub id: usize,
    pub stage: Stage,
    pub layer: u16,
    /// Global layer index (encoder first).
    pub global_layer: usize,
    pub head: Option<u16>,
    /// Token role for quadrant groups.
    pub role: Option<TokenRole>,
    /// Grid position for token groups.
    pub token: Option<u16>,
    pub members: Vec<SiteAddress>,
}

impl SiteGroup {
    /// Short label of the token subset: `all`, a role name, or `T<pos>`.
    pub fn token_group(&self) -> String {
        match (self.role, self.token) {
            (Some(r), _) => String::from(r.name()),
            (None, Some(t)) => format!("T{t}"),
            (None, None) => String::from("all"),
        }
    }
}

/// Partition of the patchable sites into selectable groups.
///
/// Patchable sites are those at CLS and query (BL) positions in either
/// stage, plus output (BR) positions in the decoder: the only positions
/// that exist with the same meaning in a query-only forward pass.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SiteGrouping {
    pub granularity: Granularity,
    pub stages: StageFilter,
    pub groups: Vec<SiteGroup>,
}

/// Token roles that can be patched in `stage`.
pub fn patchable_roles(stage: Stage) -> &'static [TokenRole] {
    match stage {
        Stage::Encoder => &[TokenRole::Cls, TokenRole::Quad(Quadrant::BL)],
        Stage::Decoder => &[TokenRole::Cls, TokenRole::Quad(Quadrant::BL), TokenRole::Quad(Quadrant::BR)],
    }
}

fn role_positions(role: TokenRole, q: usize) -> Vec<usize> {
    match role {
        TokenRole::Cls => alloc::vec![0],
        TokenRole::Quad(_) => (0..q).map(|i| grid_position(role, i, q)).collect(),
    }
}

impl SiteGrouping {
    pub fn new(config: &ModelConfig, granularity: Granularity, stages: StageFilter) -> Self {
        let q = config.q();
        let mut groups: Vec<SiteGroup> = Vec::new();
        let mut push = |stage: Stage, layer: usize, head: Option<usize>, role: Option<TokenRole>, members: Vec<SiteAddress>| {
            groups.push(SiteGroup {
                id: groups.len(),
                stage,
                layer: layer as u16,
                global_layer: config.global_layer(stage, layer),
                head: head.map(|h| h as u16),
                role,
                token: (granularity == Granularity::Token).then(|| members[0].token),
                members,
            });
        };
        for stage in [Stage::Encoder, Stage::Decoder] {
            if !stages.accepts(stage) {
                continue;
            }
            let roles = patchable_roles(stage);
            for layer in 0..config.layers(stage) {
                let mut layer_members = Vec::new();
                for head in 0..config.heads {
                    let mut head_members = Vec::new();
                    for &role in roles {
                        let sites: Vec<SiteAddress> =
                            role_positions(role, q).into_iter().map(|p| SiteAddress::new(stage, layer, head, p)).collect();
                        match granularity {
                            Granularity::Token => {
                                for s in &sites {
                                    push(stage, layer, Some(head), None, alloc::vec![*s]);
                                }
                            }
                            Granularity::Quadrant => push(stage, layer, Some(head), Some(role), sites.clone()),
                            _ => {}
                        }
                        head_members.extend(sites);
                    }
                    if granularity == Granularity::Head {
                        push(stage, layer, Some(head), None, head_members.clone());
                    }
                    layer_members.extend(head_members);
                }
                if granularity == Granularity::Layer {
                    push(stage, layer, None, None, layer_members);
                }
            }
        }
        SiteGrouping { granularity, stages, groups }
    }

    pub fn len(&self) -> usize {
        self.groups.len()
    }

    pub fn is_empty(&self) -> bool {
        self.groups.is_empty()
    }

    /// Sites of every selected group, in group order.
    pub fn expand(&self, mask: &[bool]) -> Result<Vec<SiteAddress>> {
        if mask.len() != self.groups.len() {
            return Err(invalid!("mask of {} for {} groups", mask.len(), self.groups.len()));
        }
        Ok(self.groups.iter().zip(mask).filter(|(_, m)| **m).flat_map(|(g, _)| g.members.iter().copied()).collect())
    }

    /// Sum of member `rho` per group (missing sites count 0).
    pub fn group_scores(&self, scores: &ScoreTable) -> Vec<f64> {
        self.groups.iter().map(|g| g.members.iter().filter_map(|s| scores.rho(s)).sum()).collect()
    }

    /// Group index by `(stage, layer, head, token-group label)`.
    pub fn find(&self, stage: Stage, layer: u16, head: Option<u16>, token_group: &str) -> Option<usize> {
        self.groups
            .iter()
            .position(|g| g.stage == stage && g.layer == layer && g.head == head && g.token_group() == token_group)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tasks::PromptMode;
    use alloc::collections::BTreeSet;

    #[test]
    fn quadrant_counts_and_partition() {
        let c = ModelConfig::default();
        let q = SiteGrouping::new(&c, Granularity::Quadrant, StageFilter::Both);
        assert_eq!(q.len(), 4 * 4 * 2 + 2 * 4 * 3);
        let universe: BTreeSet<SiteAddress> = SiteGrouping::new(&c, Granularity::Token, StageFilter::Both)
            .groups
            .iter()
            .flat_map(|g| g.members.clone())
            .collect();
        for gran in Granularity::ALL {
            let g = SiteGrouping::new(&c, gran, StageFilter::Both);
            let all = g.expand(&alloc::vec![true; g.len()]).unwrap();
            let set: BTreeSet<_> = all.iter().copied().collect();
            assert_eq!(set.len(), all.len(), "{gran}: overlapping groups");
            assert_eq!(set, universe, "{gran}: not a partition");
        }
        for s in &universe {
            assert!(c.site_valid(s, PromptMode::QueryOnly) && c.site_valid(s, PromptMode::OneShot));
        }
        assert_eq!(universe.len(), 4 * 4 * 17 + 2 * 4 * 33);
    }

    #[test]
    fn stage_filters_and_labels() {
        let c = ModelConfig::default();
        let dec = SiteGrouping::new(&c, Granularity::Quadrant, StageFilter::Decoder);
        assert!(dec.groups.iter().all(|g| g.stage == Stage::Decoder && g.global_layer >= 4));
        assert_eq!(dec.groups[2].token_group(), "BR");
        let enc = SiteGrouping::new(&c, Granularity::Quadrant, StageFilter::Encoder);
        assert!(enc.groups.iter().all(|g| g.role != Some(TokenRole::Quad(Quadrant::BR))));
        let tok = SiteGrouping::new(&c, Granularity::Token, StageFilter::Encoder);
        assert_eq!(tok.groups[1].token_group(), "T33");
        let head = SiteGrouping::new(&c, Granularity::Head, StageFilter::Both);
        assert_eq!(head.groups[0].token_group(), "all");
        assert_eq!(head.find(Stage::Decoder, 1, Some(3), "all"), Some(head.len() - 1));
        assert_eq!("layer".parse::<Granularity>().unwrap(), Granularity::Layer);
        assert!("pixel".parse::<Granularity>().is_err());
    }
}
