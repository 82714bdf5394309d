// SPDX-License-Identifier: MIT OR Apache-2.0

//! Activation collection, mean activations, taskness scores, site grouping
//! and clustering metrics.

mod cluster;
mod group;
mod score;
mod store;

pub use cluster::{cluster_report, davies_bouldin, head_matrix, silhouette, HeadCluster};
pub use group::{patchable_roles, Granularity, SiteGroup, SiteGrouping, StageFilter};
pub use score::{score_tokens, HeadScores, ScoreTable, TokenScore, RHO_EPS};
pub use store::{collect, mean_activations, ActivationStore, MeanActivationTable, StreamingMean, TaskMeans};
