//! Per-client tracking state: observation intake, unique-cell evaluation and
//! loopback decoding.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::net::IpAddr;

use serde::{Deserialize, Serialize};

use super::burst::{compute_delta, separate_bursts, DeltaMode, PortRange};
use super::decode::decode_segments;
use super::id::{DeviceId, DeviceIdBuilder};
use super::pool::PortPool;
use super::ServerError;
use crate::analysis::NstarTable;
use crate::attacker::destination_ports;

/// One captured connection attempt.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SynObservation {
    pub client_ip: IpAddr,
    pub src_port: u16,
    pub dst_port: u16,
    pub arrival_index: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ServerConfig {
    #[serde(default)]
    pub range: PortRange,
    /// Counter advance per connection on the device (Linux uses 2).
    #[serde(default = "one")]
    pub counter_step: u32,
    #[serde(default = "default_alpha")]
    pub alpha: usize,
    #[serde(default = "default_beta")]
    pub beta: u32,
    /// First destination port of the candidate ranges.
    #[serde(default = "default_base_port")]
    pub base_port: u16,
    #[serde(default)]
    pub delta_mode: DeltaMode,
    #[serde(default = "default_reruns")]
    pub max_reruns: u32,
    #[serde(default = "default_iteration_cap")]
    pub iteration_cap: usize,
}

fn one() -> u32 {
    1
}
fn default_alpha() -> usize {
    4
}
fn default_beta() -> u32 {
    50
}
fn default_base_port() -> u16 {
    1024
}
fn default_reruns() -> u32 {
    3
}
fn default_iteration_cap() -> usize {
    100
}

impl Default for ServerConfig {
    fn default() -> Self {
        Self {
            range: PortRange::default(),
            counter_step: 1,
            alpha: default_alpha(),
            beta: default_beta(),
            base_port: default_base_port(),
            delta_mode: DeltaMode::default(),
            max_reruns: default_reruns(),
            iteration_cap: default_iteration_cap(),
        }
    }
}

/// Result of evaluating one unique-cell iteration.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Phase1Round {
    pub iteration: usize,
    pub accepted: Vec<u16>,
    /// Candidates with more than two measurements.
    pub polluted: usize,
    /// Candidates with fewer than two measurements.
    pub incomplete: usize,
    pub covered: usize,
    pub complete: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub enum Phase2Step {
    /// Termination reached.
    Terminated(DeviceId),
    /// The client must repeat `group` (burst, its loopbacks, burst).
    NeedRerun { group: usize, attempt: u32 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GroupAction {
    Decoded,
    Reconstructed,
    Rerun,
}

/// Per-group decode record for transcripts.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroupRecord {
    pub group: usize,
    pub attempt: u32,
    pub action: GroupAction,
    /// `(loopback port, attacker destination port)` for the consumed loopbacks.
    pub mapping: Vec<(u16, u16)>,
    pub n: usize,
    pub l: usize,
    pub terminated: bool,
    pub error: Option<String>,
}

impl GroupRecord {
    /// `port->cell` entries joined with `|`.
    pub fn pattern(&self) -> String {
        self.mapping.iter().map(|(l, w)| format!("{l}->{w}")).collect::<Vec<_>>().join("|")
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct Transcript {
    pub observations: Vec<SynObservation>,
    pub duplicates_dropped: usize,
    pub phase1: Vec<Phase1Record>,
    pub groups: Vec<GroupRecord>,
    /// Per group, per attacker destination, the normalized difference used.
    pub deltas: Vec<BTreeMap<u16, Option<u32>>>,
    pub device_id: Option<DeviceId>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Phase1Record {
    pub iteration: usize,
    pub candidates: usize,
    pub accepted: usize,
    pub polluted: usize,
    pub incomplete: usize,
    pub covered: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Stage {
    Phase1,
    Phase2,
    Done,
}

/// Tracking state for one client address.
#[derive(Debug, Clone)]
pub struct ServerSession {
    client_ip: IpAddr,
    config: ServerConfig,
    nstar: NstarTable,
    stage: Stage,
    seen: HashSet<(IpAddr, u16, u16)>,
    destinations: HashSet<u16>,
    window: Vec<SynObservation>,
    candidates: Vec<u16>,
    s_prime: Vec<u16>,
    iteration: usize,
    loopbacks: Vec<Vec<u16>>,
    matrix: HashMap<u16, Vec<Option<u16>>>,
    next_group: usize,
    attempts: u32,
    /// Differences known so far for the group awaiting a repeat.
    pending: BTreeMap<u16, Option<u32>>,
    builder: DeviceIdBuilder<u16>,
    transcript: Transcript,
    keep_observations: bool,
}

impl ServerSession {
    pub fn new(client_ip: IpAddr, config: ServerConfig, nstar: NstarTable) -> Result<Self, ServerError> {
        if config.counter_step == 0 || config.beta == 0 || !(1..=16).contains(&config.alpha) {
            return Err(ServerError::InvalidConfig("counter_step and beta must be positive, alpha in 1..=16".into()));
        }
        Ok(Self {
            client_ip,
            config,
            nstar,
            stage: Stage::Phase1,
            seen: HashSet::new(),
            destinations: HashSet::new(),
            window: Vec::new(),
            candidates: Vec::new(),
            s_prime: Vec::new(),
            iteration: 0,
            loopbacks: Vec::new(),
            matrix: HashMap::new(),
            next_group: 0,
            attempts: 0,
            pending: BTreeMap::new(),
            builder: DeviceIdBuilder::new(),
            transcript: Transcript::default(),
            keep_observations: true,
        })
    }

    /// Stops copying raw observations into the transcript.
    pub fn set_keep_observations(&mut self, keep: bool) {
        self.keep_observations = keep;
    }

    pub fn client_ip(&self) -> IpAddr {
        self.client_ip
    }

    pub fn config(&self) -> &ServerConfig {
        &self.config
    }

    pub fn table_size(&self) -> usize {
        self.nstar.table_size
    }

    pub fn nstar(&self) -> &NstarTable {
        &self.nstar
    }

    /// Unique attacker destinations found so far, in acceptance order.
    pub fn s_prime(&self) -> &[u16] {
        &self.s_prime
    }

    pub fn iteration(&self) -> usize {
        self.iteration
    }

    pub fn transcript(&self) -> &Transcript {
        &self.transcript
    }

    pub fn into_transcript(self) -> Transcript {
        self.transcript
    }

    /// Stores an observation unless it repeats `(client, src, dst)`.
    pub fn record_syn(&mut self, obs: SynObservation) -> Result<bool, ServerError> {
        if obs.client_ip != self.client_ip || !self.destinations.contains(&obs.dst_port) {
            return Err(ServerError::UnknownDestination { client: obs.client_ip, port: obs.dst_port });
        }
        if !self.seen.insert((obs.client_ip, obs.src_port, obs.dst_port)) {
            self.transcript.duplicates_dropped += 1;
            return Ok(false);
        }
        if self.keep_observations {
            self.transcript.observations.push(obs);
        }
        self.window.push(obs);
        Ok(true)
    }

    /// Records every observation addressed to this session, ignoring others.
    pub fn record_all(&mut self, observations: &[SynObservation]) -> usize {
        observations.iter().filter(|o| matches!(self.record_syn(**o), Ok(true))).count()
    }

    /// Allocates the next batch of `T - 1` candidate destinations.
    pub fn next_candidates(&mut self, pool: &mut PortPool) -> Result<Vec<u16>, ServerError> {
        if self.stage != Stage::Phase1 {
            return Err(ServerError::WrongStage("candidate allocation after unique-cell discovery"));
        }
        if self.iteration >= self.config.iteration_cap {
            return Err(ServerError::IterationLimit { cap: self.config.iteration_cap });
        }
        self.iteration += 1;
        let ports = destination_ports(self.iteration, self.table_size(), self.config.base_port)
            .ok_or(ServerError::PoolExhausted { client: self.client_ip, requested: self.table_size() - 1, available: 0 })?;
        pool.claim(self.client_ip, &ports)?;
        self.destinations.extend(ports.iter().copied());
        self.window.clear();
        self.candidates = ports.clone();
        Ok(ports)
    }

    /// Accepts candidates whose two measurements differ by exactly one step.
    pub fn evaluate_phase1(&mut self, pool: &mut PortPool) -> Result<Phase1Round, ServerError> {
        if self.stage != Stage::Phase1 || self.candidates.is_empty() {
            return Err(ServerError::WrongStage("evaluation without an open iteration"));
        }
        let mut by_dst: HashMap<u16, Vec<u16>> = HashMap::new();
        for obs in self.window.drain(..) {
            by_dst.entry(obs.dst_port).or_default().push(obs.src_port);
        }
        let t = self.table_size();
        let mut accepted = Vec::new();
        let mut rejected = Vec::new();
        let (mut polluted, mut incomplete) = (0, 0);
        for &port in &self.candidates {
            let seen = by_dst.get(&port).map_or(&[][..], Vec::as_slice);
            let unique = match seen.len() {
                2 => separate_bursts(seen, self.config.range)
                    .and_then(|o| compute_delta(&o, DeltaMode::ConsecutivePair, self.config.range))
                    .is_ok_and(|d| d == self.config.counter_step),
                n if n > 2 => {
                    polluted += 1;
                    false
                }
                _ => {
                    incomplete += 1;
                    false
                }
            };
            if unique && self.s_prime.len() + accepted.len() < t {
                accepted.push(port);
            } else {
                rejected.push(port);
            }
        }
        pool.release(self.client_ip, &rejected);
        for p in &rejected {
            self.destinations.remove(p);
        }
        self.candidates.clear();
        self.s_prime.extend(accepted.iter().copied());
        let covered = self.s_prime.len();
        self.transcript.phase1.push(Phase1Record {
            iteration: self.iteration,
            candidates: accepted.len() + rejected.len(),
            accepted: accepted.len(),
            polluted,
            incomplete,
            covered,
        });
        Ok(Phase1Round { iteration: self.iteration, accepted, polluted, incomplete, covered, complete: covered == t })
    }

    /// Switches to loopback mapping with the given per-group loopback ports.
    pub fn begin_phase2(&mut self, loopbacks: Vec<Vec<u16>>) -> Result<(), ServerError> {
        if self.stage != Stage::Phase1 || self.s_prime.len() != self.table_size() {
            return Err(ServerError::WrongStage("loopback mapping before all cells are covered"));
        }
        if loopbacks.iter().any(|g| g.len() != self.config.alpha) {
            return Err(ServerError::InvalidConfig("every group needs exactly alpha loopbacks".into()));
        }
        self.stage = Stage::Phase2;
        self.loopbacks = loopbacks;
        self.window.clear();
        Ok(())
    }

    /// Releases every destination this session holds.
    pub fn release_all(&mut self, pool: &mut PortPool) {
        let ports: Vec<u16> = self.destinations.drain().collect();
        pool.release(self.client_ip, &ports);
    }

    /// Builds the burst matrix from the main loopback-mapping traffic
    /// (`groups + 1` bursts).
    pub fn load_phase2_window(&mut self) {
        let bursts = self.loopbacks.len() + 1;
        let observations: Vec<SynObservation> = self.window.drain(..).collect();
        self.matrix = burst_matrix(&observations, &self.s_prime, bursts, self.config.range);
    }

    fn group_deltas(&self, group: usize) -> BTreeMap<u16, Option<u32>> {
        let step = self.config.counter_step;
        let range = self.config.range;
        self.s_prime
            .iter()
            .map(|&w| {
                let row = &self.matrix[&w];
                let direct = match (row[group], row[group + 1]) {
                    (Some(a), Some(b)) => Some(range.forward_gap(a, b) / step),
                    _ => None,
                };
                (w, direct)
            })
            .collect()
    }

    /// Unknown differences are resolved as loopback-free when the known span
    /// around the gap leaves less than `beta` unexplained increments.
    fn reconstruct(&self, group: usize, deltas: &mut BTreeMap<u16, Option<u32>>) -> bool {
        let step = self.config.counter_step;
        let range = self.config.range;
        let mut ok = true;
        for (&w, slot) in deltas.iter_mut() {
            if slot.is_some() {
                continue;
            }
            let row = &self.matrix[&w];
            let before = (0..=group).rev().find(|&b| row[b].is_some());
            let after = (group + 1..row.len()).find(|&b| row[b].is_some());
            match (before, after) {
                (Some(a), Some(c)) => {
                    let span = range.forward_gap(row[a].unwrap(), row[c].unwrap()) / step;
                    let bursts = (c - a) as u32;
                    if span >= bursts && span - bursts < self.config.beta {
                        *slot = Some(1);
                    } else {
                        ok = false;
                    }
                }
                _ => ok = false,
            }
        }
        ok
    }

    /// Processes groups in order until termination or until a group needs
    /// to be repeated.
    pub fn advance_phase2(&mut self) -> Result<Phase2Step, ServerError> {
        if self.stage != Stage::Phase2 {
            return Err(ServerError::WrongStage("loopback decoding outside loopback mapping"));
        }
        while self.next_group < self.loopbacks.len() {
            let g = self.next_group;
            let mut deltas = self.group_deltas(g);
            let complete = deltas.values().all(Option::is_some);
            let action = if complete {
                GroupAction::Decoded
            } else if self.reconstruct(g, &mut deltas) {
                GroupAction::Reconstructed
            } else {
                self.transcript.deltas.push(deltas.clone());
                self.pending = deltas;
                return self.request_rerun(g, "missing measurements".into());
            };
            match self.apply_group(g, &deltas, action)? {
                Some(step) => return Ok(step),
                None => continue,
            }
        }
        self.stage = Stage::Done;
        Err(ServerError::NoConvergence { reason: format!("termination not reached after {} groups", self.loopbacks.len()) })
    }

    /// Fills the pending group's unknown differences from its repeat (two
    /// bursts), then decodes it once complete.
    pub fn submit_rerun(&mut self) -> Result<Phase2Step, ServerError> {
        if self.stage != Stage::Phase2 || self.attempts == 0 {
            return Err(ServerError::WrongStage("rerun submitted without a pending request"));
        }
        let g = self.next_group;
        let mut by_dst: HashMap<u16, Vec<u16>> = HashMap::new();
        for obs in self.window.drain(..) {
            by_dst.entry(obs.dst_port).or_default().push(obs.src_port);
        }
        let step = self.config.counter_step;
        let measured: BTreeMap<u16, Option<u32>> = self
            .s_prime
            .iter()
            .map(|&w| {
                let seen = by_dst.get(&w).map_or(&[][..], Vec::as_slice);
                let usable = seen.len() == 2 || (seen.len() > 2 && self.config.delta_mode == DeltaMode::MaxConsecutive);
                let d = if usable {
                    separate_bursts(seen, self.config.range)
                        .and_then(|o| compute_delta(&o, self.config.delta_mode, self.config.range))
                        .ok()
                        .map(|d| d / step)
                } else {
                    None
                };
                (w, d)
            })
            .collect();
        let mut deltas = std::mem::take(&mut self.pending);
        for (w, d) in measured {
            let slot = deltas.entry(w).or_insert(None);
            if slot.is_none() {
                *slot = d;
            }
        }
        if deltas.values().any(Option::is_none) {
            self.transcript.deltas.push(deltas.clone());
            self.pending = deltas;
            return self.request_rerun(g, "missing measurements in repeat".into());
        }
        match self.apply_group(g, &deltas, GroupAction::Rerun)? {
            Some(step) => Ok(step),
            None => self.advance_phase2(),
        }
    }

    fn request_rerun(&mut self, group: usize, error: String) -> Result<Phase2Step, ServerError> {
        self.transcript.groups.push(GroupRecord {
            group,
            attempt: self.attempts,
            action: GroupAction::Rerun,
            mapping: Vec::new(),
            n: self.builder.n(),
            l: self.builder.l(),
            terminated: false,
            error: Some(error),
        });
        if self.attempts >= self.config.max_reruns {
            self.stage = Stage::Done;
            return Err(ServerError::NoConvergence {
                reason: format!("group {group} still undecodable after {} repeats", self.attempts),
            });
        }
        self.attempts += 1;
        self.window.clear();
        Ok(Phase2Step::NeedRerun { group, attempt: self.attempts })
    }

    /// Decodes one group; `Ok(None)` means continue with the next group.
    fn apply_group(
        &mut self,
        g: usize,
        deltas: &BTreeMap<u16, Option<u32>>,
        action: GroupAction,
    ) -> Result<Option<Phase2Step>, ServerError> {
        let known: Vec<(u16, u32)> = deltas.iter().map(|(&w, d)| (w, d.expect("resolved"))).collect();
        self.transcript.deltas.push(deltas.clone());
        let mapping = match decode_segments(&known, self.config.alpha, self.config.beta) {
            Ok(m) => m,
            Err(e) => {
                // Inconsistent differences: measure the whole group again.
                self.pending = self.s_prime.iter().map(|&w| (w, None)).collect();
                return self.request_rerun(g, e.to_string()).map(Some);
            }
        };
        let mut consumed = Vec::new();
        let mut terminated = false;
        for (i, &loopback) in self.loopbacks[g].iter().enumerate() {
            let cell = mapping[&i];
            self.builder.add(cell, loopback);
            consumed.push((loopback, cell));
            if self.nstar.should_terminate(self.builder.n(), self.builder.l()) {
                terminated = true;
                break;
            }
        }
        self.transcript.groups.push(GroupRecord {
            group: g,
            attempt: self.attempts,
            action,
            mapping: consumed,
            n: self.builder.n(),
            l: self.builder.l(),
            terminated,
            error: None,
        });
        self.next_group += 1;
        self.attempts = 0;
        if terminated {
            self.stage = Stage::Done;
            let id = self.builder.build();
            self.transcript.device_id = Some(id.clone());
            return Ok(Some(Phase2Step::Terminated(id)));
        }
        Ok(None)
    }

    /// Groups decoded so far.
    pub fn groups_decoded(&self) -> usize {
        self.next_group
    }
}

/// Per destination, source ports assigned to burst slots `0..bursts`.
///
/// Complete rows are ordered by port. For rows with gaps, each measurement
/// belongs to the burst whose arrival window contains it, or to the one
/// before (a late retransmission) once any late arrival is seen. A burst's
/// window is centred on the earliest arrival seen for it among complete rows
/// and ends halfway to the next one. Slots not pinned down uniquely are left unknown.
pub fn burst_matrix(
    observations: &[SynObservation],
    destinations: &[u16],
    bursts: usize,
    range: PortRange,
) -> HashMap<u16, Vec<Option<u16>>> {
    let mut by_dst: HashMap<u16, Vec<(u16, u64)>> = HashMap::new();
    for o in observations {
        by_dst.entry(o.dst_port).or_default().push((o.src_port, o.arrival_index));
    }
    let mut ordered: HashMap<u16, Vec<(u16, u64)>> = HashMap::new();
    for &w in destinations {
        let seen = by_dst.remove(&w).unwrap_or_default();
        let ports: Vec<u16> = seen.iter().map(|x| x.0).collect();
        let arrival: HashMap<u16, u64> = seen.iter().copied().collect();
        let row = match separate_bursts(&ports, range) {
            Ok(order) => order.into_iter().map(|p| (p, arrival[&p])).collect(),
            Err(_) => Vec::new(),
        };
        ordered.insert(w, row);
    }
    let mut starts: Vec<Option<u64>> = vec![None; bursts];
    for row in ordered.values().filter(|r| r.len() == bursts) {
        for (slot, &(_, t)) in row.iter().enumerate() {
            starts[slot] = Some(starts[slot].map_or(t, |s: u64| s.min(t)));
        }
    }
    let starts: Option<Vec<u64>> = starts.into_iter().collect();
    // Late arrivals show up as two measurements of one destination sharing
    // a window; without any, every measurement is taken as on time.
    let late_seen = starts.as_ref().is_some_and(|st| {
        ordered.values().any(|row| {
            let w: Vec<Option<usize>> = row.iter().map(|&(_, t)| window_of(t, st)).collect();
            w.windows(2).any(|p| p[0].is_some() && p[0] == p[1])
        })
    });
    destinations
        .iter()
        .map(|&w| {
            let row = &ordered[&w];
            let slots = if row.len() == bursts {
                row.iter().map(|&(p, _)| Some(p)).collect()
            } else {
                match &starts {
                    Some(st) if !row.is_empty() && row.len() < bursts => align(row, st, late_seen),
                    _ => vec![None; bursts],
                }
            };
            (w, slots)
        })
        .collect()
}

/// Window holding arrival `t`: windows are centred on `starts` and split
/// halfway between neighbours. `None` before the first window.
fn window_of(t: u64, starts: &[u64]) -> Option<usize> {
    let first = starts[0].saturating_sub(starts.get(1).map_or(0, |&n| n.saturating_sub(starts[0]) / 2));
    if t < first {
        return None;
    }
    Some((1..starts.len()).rev().find(|&s| t >= starts[s - 1] + starts[s].saturating_sub(starts[s - 1]) / 2).unwrap_or(0))
}

/// Places the port-ordered `row` into slots given per-slot window starts.
fn align(row: &[(u16, u64)], starts: &[u64], allow_late: bool) -> Vec<Option<u16>> {
    let b = starts.len();
    let mut out = vec![None; b];
    // Feasible slots per measurement: its window, plus the one before when
    // late arrivals are possible.
    let mut bounds = Vec::with_capacity(row.len());
    for &(_, t) in row {
        let Some(k) = window_of(t, starts) else { return out };
        bounds.push((if allow_late { k.saturating_sub(1) } else { k }, k));
    }
    let m = row.len();
    let mut earliest = vec![0usize; m];
    let mut latest = vec![0usize; m];
    for j in 0..m {
        earliest[j] = if j == 0 { bounds[0].0 } else { bounds[j].0.max(earliest[j - 1] + 1) };
    }
    for j in (0..m).rev() {
        latest[j] = if j == m - 1 { bounds[j].1.min(b - 1) } else { bounds[j].1.min(latest[j + 1].saturating_sub(1)) };
    }
    if (0..m).any(|j| earliest[j] > latest[j]) {
        return out;
    }
    for j in 0..m {
        if earliest[j] == latest[j] {
            out[earliest[j]] = Some(row[j].0);
        }
    }
    out
}
