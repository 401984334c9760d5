//! Bayesian nonparametric estimation and forecasting of discrete hazard
//! rates on an age x time grid, using an order-(p, q) dependent beta process
//! prior fitted by Gibbs sampling.

pub mod cli;
pub mod config;
pub mod data;
pub mod diagnostics;
pub mod dist;
pub mod error;
pub mod evaluate;
pub mod gibbs;
pub mod grid;
pub mod io;
pub mod prior;
pub mod simulate;

pub use data::{aggregate, from_life_table, np_hazard, LifeTable, SufficientStats, SurvivalRecord};
pub use error::{Error, Result};
pub use evaluate::{l_measure, sweep, LMeasureReport, SweepDesign, SweepRow, SweepSettings, TimeWindow, WindowKind};
pub use gibbs::{
    posterior_mean_identity_check, run_chain, ChainConfig, ChainState, GibbsSampler, IdentityCheck,
    PosteriorSummary,
};
pub use grid::{neighborhood, reverse_neighborhood, Cell, Grid, Neighborhood};
pub use prior::{prior_correlation, sample_prior, stationary_correlation, BepPrior, PriorDraw};
pub use simulate::{generate, true_hazard, SimDesign};
