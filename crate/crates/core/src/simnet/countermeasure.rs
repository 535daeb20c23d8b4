//! Attack outcome under kernel-side mitigations, against an unmodified
//! baseline on the same seeds.

use serde::{Deserialize, Serialize};

use super::scenario::{run_scenario, Scenario, ScenarioError, ScenarioReport};
use crate::kernel::NoiseMode;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Countermeasure {
    Baseline,
    /// Larger perturbation table with the baseline's tick budget and burst
    /// size.
    LargeTable { table_size: usize },
    /// Re-key every this many ticks.
    Rekey { every_ticks: u64 },
    /// Uniform 1..=8 increment after each first-candidate success.
    PatchedNoise,
}

impl Countermeasure {
    pub fn name(&self) -> String {
        match self {
            Self::Baseline => "baseline".into(),
            Self::LargeTable { table_size } => format!("table_size_{table_size}"),
            Self::Rekey { every_ticks } => format!("rekey_every_{every_ticks}_ticks"),
            Self::PatchedNoise => "patched_noise_1_8".into(),
        }
    }

    /// `base` with the mitigation applied; `budget` caps the attack's ticks.
    pub fn apply(&self, base: &Scenario, budget: Option<u64>) -> Scenario {
        let mut s = base.clone();
        match *self {
            Self::Baseline => {}
            Self::LargeTable { table_size } => {
                s.kernel.table_size = table_size;
                s.attack.round_budget = budget;
                // Same per-tick throughput as the baseline's largest burst.
                s.attack.burst_capacity = s.attack.burst_capacity.min(base.kernel.table_size);
            }
            Self::Rekey { every_ticks } => s.rekey_every_ticks = Some(every_ticks),
            Self::PatchedNoise => s.kernel.noise_mode = NoiseMode::PatchedUniform1To8,
        }
        s.id = format!("{}:{}", base.id, self.name());
        s
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CountermeasureSummary {
    pub countermeasure: String,
    pub scenarios: usize,
    pub consistent: usize,
    pub runs: usize,
    pub runs_with_id: usize,
    pub no_convergence: usize,
    pub other_failures: usize,
    pub reruns: usize,
    pub mean_phase1_iterations: f64,
    pub mean_rounds: f64,
    /// Ticks the first candidate iteration needs at this table size.
    pub first_iteration_rounds: u64,
}

impl CountermeasureSummary {
    pub fn consistency_rate(&self) -> f64 {
        self.consistent as f64 / self.scenarios.max(1) as f64
    }

    fn add(&mut self, r: &ScenarioReport) {
        self.scenarios += 1;
        self.consistent += usize::from(r.consistent);
        for run in &r.runs {
            self.runs += 1;
            self.runs_with_id += usize::from(run.device_id.is_some());
            self.no_convergence += usize::from(run.no_convergence);
            self.other_failures += usize::from(run.failure.is_some() && !run.no_convergence);
            self.reruns += run.reruns;
            self.mean_phase1_iterations += run.phase1_iterations as f64;
            self.mean_rounds += run.rounds as f64;
        }
    }

    fn finish(mut self) -> Self {
        let n = self.runs.max(1) as f64;
        self.mean_phase1_iterations /= n;
        self.mean_rounds /= n;
        self
    }
}

/// Two bursts of `T - 1` candidates; the known set is still empty.
fn first_iteration_rounds(s: &Scenario) -> u64 {
    2 * (s.kernel.table_size.saturating_sub(1)).div_ceil(s.attack.burst_capacity.max(1)) as u64
}

/// Runs `base` with each seed in `seeds` (kernel and network) under the
/// baseline and every countermeasure in `set`.
pub fn compare_countermeasures(
    base: &Scenario,
    set: &[Countermeasure],
    seeds: &[u64],
) -> Result<Vec<CountermeasureSummary>, ScenarioError> {
    let order: Vec<Countermeasure> =
        std::iter::once(Countermeasure::Baseline).chain(set.iter().copied().filter(|c| *c != Countermeasure::Baseline)).collect();
    let mut summaries: Vec<CountermeasureSummary> =
        order.iter().map(|c| CountermeasureSummary { countermeasure: c.name(), ..Default::default() }).collect();
    for &seed in seeds {
        let mut s = base.clone();
        s.seed = seed;
        s.kernel.seed = seed;
        s.id = format!("{}#{seed}", base.id);
        let baseline = run_scenario(&s)?.report;
        let budget = baseline.runs.iter().map(|r| r.rounds).max();
        summaries[0].add(&baseline);
        summaries[0].first_iteration_rounds = first_iteration_rounds(&s);
        for (i, cm) in order.iter().enumerate().skip(1) {
            let applied = cm.apply(&s, budget);
            summaries[i].first_iteration_rounds = first_iteration_rounds(&applied);
            let r = run_scenario(&applied)?.report;
            summaries[i].add(&r);
        }
    }
    Ok(summaries.into_iter().map(CountermeasureSummary::finish).collect())
}
