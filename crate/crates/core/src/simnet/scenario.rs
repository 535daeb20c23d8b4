//! Seeded end-to-end scenarios.

use std::net::{IpAddr, Ipv4Addr};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::device::{Device, SimBed};
use super::net::{NetConfig, Network};
use crate::analysis::{nstar_table, pstar_for_population, AnalysisError, NstarTable};
use crate::attacker::{run_attack, AttackConfig, AttackReport};
use crate::kernel::{Kernel, KernelConfig, KernelError};
use crate::server::{DeviceId, PortPool, PortRange, ServerConfig, ServerError, ServerSession, Transcript};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    #[serde(default = "default_id")]
    pub id: String,
    /// Seeds the network and background traffic.
    pub seed: u64,
    pub kernel: KernelConfig,
    #[serde(default)]
    pub net: NetConfig,
    #[serde(default)]
    pub attack: AttackConfig,
    /// Overrides the server defaults derived from the kernel range and step.
    #[serde(default)]
    pub server: Option<ServerConfig>,
    #[serde(default = "default_population")]
    pub population: u64,
    #[serde(default = "default_c_star")]
    pub c_star: f64,
    /// Background connections per tick.
    #[serde(default)]
    pub organic_rate: f64,
    #[serde(default = "default_repeats")]
    pub repeats: usize,
    #[serde(default)]
    pub rekey_every_ticks: Option<u64>,
    /// Keep raw observations in the returned transcripts.
    #[serde(default)]
    pub record_observations: bool,
}

fn default_id() -> String {
    "scenario".into()
}
fn default_population() -> u64 {
    1_000_000
}
fn default_c_star() -> f64 {
    1.0
}
fn default_repeats() -> usize {
    2
}

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error(transparent)]
    Kernel(#[from] KernelError),
    #[error(transparent)]
    Analysis(#[from] AnalysisError),
    #[error(transparent)]
    Server(#[from] ServerError),
    #[error("invalid scenario: {0}")]
    Invalid(String),
}

impl Scenario {
    pub fn new(id: impl Into<String>, seed: u64, kernel: KernelConfig) -> Self {
        Self {
            id: id.into(),
            seed,
            kernel,
            net: NetConfig::default(),
            attack: AttackConfig::default(),
            server: None,
            population: default_population(),
            c_star: default_c_star(),
            organic_rate: 0.0,
            repeats: default_repeats(),
            rekey_every_ticks: None,
            record_observations: false,
        }
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        self.kernel.validate()?;
        self.net.validate().map_err(ScenarioError::Invalid)?;
        self.attack.plan.validate().map_err(ScenarioError::Invalid)?;
        if !(self.organic_rate >= 0.0 && self.organic_rate.is_finite()) {
            return Err(ScenarioError::Invalid(format!("organic_rate {} must be finite and >= 0", self.organic_rate)));
        }
        if self.repeats == 0 || self.repeats > 250 {
            return Err(ScenarioError::Invalid("repeats must lie in 1..=250".into()));
        }
        if self.population < 2 || !(self.c_star > 0.0) {
            return Err(ScenarioError::Invalid("population must be >= 2 and c_star > 0".into()));
        }
        Ok(())
    }

    /// Server settings matching the kernel's range, step and the attack plan.
    pub fn server_config(&self) -> Result<ServerConfig, ScenarioError> {
        let mut cfg = match &self.server {
            Some(c) => c.clone(),
            None => ServerConfig {
                range: PortRange::new(self.kernel.min_ephemeral, self.kernel.max_ephemeral)?,
                counter_step: self.kernel.increment_step,
                ..ServerConfig::default()
            },
        };
        cfg.alpha = self.attack.plan.alpha;
        cfg.beta = self.attack.plan.beta;
        Ok(cfg)
    }

    pub fn nstar(&self) -> Result<NstarTable, ScenarioError> {
        let p = pstar_for_population(self.population, self.c_star);
        Ok(nstar_table(self.kernel.table_size, p)?)
    }
}

/// Client and server addresses of run `r`.
pub fn run_addresses(r: usize) -> (IpAddr, IpAddr) {
    let r = r as u8;
    (IpAddr::V4(Ipv4Addr::new(10, 0, r, 2)), IpAddr::V4(Ipv4Addr::new(203, 0, 113, r.wrapping_add(1))))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunReport {
    pub run: usize,
    pub client_ip: IpAddr,
    pub server_ip: IpAddr,
    pub device_id: Option<DeviceId>,
    pub id_digest: Option<String>,
    pub phase1_iterations: usize,
    pub groups_sent: usize,
    pub groups_decoded: usize,
    pub reruns: usize,
    /// Ticks actually spent, reruns included.
    pub rounds: u64,
    /// Burst rounds of the nominal schedule: three per iteration plus one per
    /// group plus the leading burst.
    pub dwell: u64,
    pub failure: Option<String>,
    pub no_convergence: bool,
}

impl RunReport {
    fn from_attack(run: usize, client_ip: IpAddr, server_ip: IpAddr, a: &AttackReport) -> Self {
        let dwell = if a.groups_sent > 0 { (a.phase1_iterations * 3 + a.groups_sent + 1) as u64 } else { 0 };
        Self {
            run,
            client_ip,
            server_ip,
            device_id: a.device_id.clone(),
            id_digest: a.device_id.as_ref().map(DeviceId::digest),
            phase1_iterations: a.phase1_iterations,
            groups_sent: a.groups_sent,
            groups_decoded: a.groups_decoded,
            reruns: a.reruns,
            rounds: a.rounds,
            dwell,
            failure: a.error.clone(),
            no_convergence: a.no_convergence,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioReport {
    pub scenario_id: String,
    pub table_size: usize,
    pub runs: Vec<RunReport>,
    /// Every run produced an ID and all IDs are equal.
    pub consistent: bool,
    pub rekeys: u64,
    pub organic_connects: u64,
}

impl ScenarioReport {
    /// CSV header matching [`ScenarioReport::csv_rows`].
    pub const CSV_HEADER: [&'static str; 9] = [
        "scenario_id",
        "run",
        "id_digest",
        "consistent",
        "phase1_iterations",
        "groups_used",
        "reruns",
        "rounds",
        "failure",
    ];

    pub fn csv_rows(&self) -> Vec<[String; 9]> {
        self.runs
            .iter()
            .map(|r| {
                [
                    self.scenario_id.clone(),
                    r.run.to_string(),
                    r.id_digest.clone().unwrap_or_default(),
                    self.consistent.to_string(),
                    r.phase1_iterations.to_string(),
                    r.groups_decoded.to_string(),
                    r.reruns.to_string(),
                    r.rounds.to_string(),
                    r.failure.clone().unwrap_or_default(),
                ]
            })
            .collect()
    }
}

#[derive(Debug, Clone)]
pub struct ScenarioOutcome {
    pub report: ScenarioReport,
    pub transcripts: Vec<Transcript>,
}

/// Runs the attack `repeats` times against one device, each run from a
/// different client and server address.
pub fn run_scenario(s: &Scenario) -> Result<ScenarioOutcome, ScenarioError> {
    s.validate()?;
    let server_cfg = s.server_config()?;
    let nstar = s.nstar()?;
    let kernel = Kernel::new(s.kernel.clone())?;
    let (c0, s0) = run_addresses(0);
    let mut device = Device::new(kernel, c0, s0, s.organic_rate, s.seed);
    device.rekey_every_ticks = s.rekey_every_ticks;
    let mut runs = Vec::with_capacity(s.repeats);
    let mut transcripts = Vec::with_capacity(s.repeats);
    for r in 0..s.repeats {
        let (client, server) = run_addresses(r);
        device.client_ip = client;
        device.server_ip = server;
        let net_seed = s.seed ^ (0x9e37_79b9_7f4a_7c15u64.wrapping_mul(r as u64 + 1));
        let mut bed = SimBed { device, network: Network::new(s.net.clone(), net_seed) };
        let mut session = ServerSession::new(client, server_cfg.clone(), nstar.clone())?;
        session.set_keep_observations(s.record_observations);
        let mut pool = PortPool::new();
        let attack = run_attack(&mut bed, session, &mut pool, &s.attack);
        runs.push(RunReport::from_attack(r, client, server, &attack));
        transcripts.push(attack.transcript);
        device = bed.device;
    }
    let first = runs[0].device_id.as_ref();
    let consistent = first.is_some() && runs.iter().all(|r| r.device_id.as_ref() == first);
    let report = ScenarioReport {
        scenario_id: s.id.clone(),
        table_size: s.kernel.table_size,
        runs,
        consistent,
        rekeys: device.kernel.rekey_count(),
        organic_connects: device.organic_total(),
    };
    Ok(ScenarioOutcome { report, transcripts })
}
