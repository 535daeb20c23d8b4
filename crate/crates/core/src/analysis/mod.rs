//! Exact probability machinery for the attack: occupancy distributions,
//! stopping-time distributions of both phases, the termination table and
//! the collision-rate estimate.

mod bounds;
pub mod exact;
mod occupancy;
mod phase1;
mod phase2;
mod termination;

use serde::Serialize;
use thiserror::Error;

pub use bounds::{alg5_bound, low_t_check, low_t_special_case, Alg5Bound, LowTCheck};
pub use occupancy::{mu_r_pmf, occupancy_pmf, state_count, OccupancyDp, DEFAULT_STATE_CAP};
pub use phase1::{expected_new_unique, optimal_batch_size, phase1_stop_distribution, phase1_transition, Phase1Distribution};
pub use phase2::{phase2_stop_distribution, Phase2Distribution};
pub use termination::{l_star, ln_pld, n_upper_bound, nstar_table, pld, pstar_for_population, NstarTable};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AnalysisError {
    #[error("DP needs {states} states, above the cap of {cap}")]
    StateTooLarge { states: u128, cap: u64 },
    #[error("no termination table for T = {table_size} at p* = {p_star:e}; the table is too small")]
    NoSolution { table_size: usize, p_star: f64 },
    #[error("{0}")]
    InvalidArgument(String),
}

/// One row of the population summary.
#[derive(Debug, Clone, Serialize)]
pub struct PopulationRow {
    #[serde(rename = "N")]
    pub population: u64,
    pub p_star: f64,
    pub l_min: usize,
    pub l_max: usize,
    #[serde(rename = "E_l")]
    pub expected_l: f64,
    pub c_over_cstar: f64,
}

pub fn population_row(t: usize, population: u64, c_star: f64) -> Result<PopulationRow, AnalysisError> {
    let p_star = pstar_for_population(population, c_star);
    let tables = nstar_table(t, p_star)?;
    let dist = phase2_stop_distribution(&tables)?;
    Ok(PopulationRow {
        population,
        p_star,
        l_min: tables.l_min,
        l_max: tables.l_max,
        expected_l: dist.expected_l,
        c_over_cstar: dist.c_over_cstar,
    })
}
