// SPDX-License-Identifier: MIT OR Apache-2.0

//! Selection of task-vector sites: REINFORCE over Bernoulli masks, greedy
//! random search, causal mediation and the baselines, over any
//! [`Objective`] (the toy model or the planted oracle).

mod grs;
mod objective;
mod reinforce;
mod select;

pub use grs::{grs_search, Flip, GrsConfig, GrsResult};
pub use objective::{evaluate, predict, EvalMode, ModelObjective, ModelTask, Objective, PlantedObjective};
pub use reinforce::{
    reinforce_grad, reinforce_multitask, reinforce_search, Baseline, Checkpoint, LogRow, MultiTask, Plan,
    ReinforceConfig, ReinforceResult, ReinforceState, ThetaParams,
};
pub use select::{
    baseline_select, cma_select, compose_vectors, random_groups, random_k_layers_grs, top_groups, BaselineKind,
    CmaResult,
};
