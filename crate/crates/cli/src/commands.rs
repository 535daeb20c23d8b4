use std::net::IpAddr;
use std::path::Path;

use anyhow::{anyhow, Context, Result};
use dhps::analysis::{
    alg5_bound, low_t_special_case, nstar_table, phase1_stop_distribution, phase2_stop_distribution, population_row,
    pstar_for_population, AnalysisError,
};
use dhps::attacker::{burst_rounds, run_phase1, Action, AttackConfig, Testbed};
use dhps::kernel::{Kernel, KernelConfig, NoiseMode};
use dhps::server::{traffic_count, PortPool, PortRange, ServerConfig, ServerSession};
use dhps::simnet::montecarlo::{phase1_trials, phase2_populations, Histogram};
use dhps::simnet::{
    compare_countermeasures, run_addresses, run_scenario, Countermeasure, CountermeasureSummary, Device, NetConfig,
    Network, Scenario, ScenarioError, SimBed,
};
use serde::{Deserialize, Serialize};

use crate::output::Output;

/// Failure classes, each with its own exit code.
#[derive(Debug)]
pub enum Failure {
    Attack(String),
    Config(anyhow::Error),
    NoSolution(String),
    Other(anyhow::Error),
}

impl Failure {
    pub fn exit_code(&self) -> u8 {
        match self {
            Self::Other(_) => 1,
            Self::Attack(_) => 2,
            Self::Config(_) => 3,
            Self::NoSolution(_) => 4,
        }
    }
}

impl std::fmt::Display for Failure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Self::Attack(m) => write!(f, "attack failed: {m}"),
            Self::Config(e) => write!(f, "configuration error: {e:#}"),
            Self::NoSolution(m) => write!(f, "{m}"),
            Self::Other(e) => write!(f, "{e:#}"),
        }
    }
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Self::Other(e)
    }
}

pub type CmdResult = std::result::Result<(), Failure>;

pub fn read_config<T: for<'de> Deserialize<'de>>(path: &Path) -> std::result::Result<T, Failure> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display())).map_err(Failure::Config)?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display())).map_err(Failure::Config)
}

fn scenario_failure(e: ScenarioError) -> Failure {
    match e {
        ScenarioError::Analysis(a @ AnalysisError::NoSolution { .. }) => no_solution(&a),
        ScenarioError::Analysis(a) => Failure::Config(a.into()),
        ScenarioError::Invalid(_) | ScenarioError::Kernel(_) => Failure::Config(e.into()),
        ScenarioError::Server(s) => Failure::Config(s.into()),
    }
}

fn no_solution(e: &AnalysisError) -> Failure {
    match e {
        AnalysisError::NoSolution { table_size, p_star } => Failure::NoSolution(format!(
            "{e}; for T = {table_size} use the two-cell special case instead: L = {} loopbacks at p* = {p_star:e}",
            low_t_special_case(*p_star)
        )),
        other => Failure::Config(anyhow!(other.clone())),
    }
}

#[derive(Serialize)]
struct IdRow<'a> {
    run: usize,
    client_ip: IpAddr,
    server_ip: IpAddr,
    id_digest: Option<&'a str>,
    device_id: Option<String>,
}

#[derive(Serialize)]
struct AttackRow {
    scenario_id: String,
    run: String,
    id_digest: String,
    consistent: String,
    phase1_iterations: String,
    groups_used: String,
    reruns: String,
    rounds: String,
    failure: String,
}

pub fn attack(scenario: Scenario, out: &mut Output) -> CmdResult {
    let outcome = run_scenario(&scenario).map_err(scenario_failure)?;
    let report = outcome.report;
    out.json("report.json", &report)?;
    let ids: Vec<IdRow> = report
        .runs
        .iter()
        .map(|r| IdRow {
            run: r.run,
            client_ip: r.client_ip,
            server_ip: r.server_ip,
            id_digest: r.id_digest.as_deref(),
            device_id: r.device_id.as_ref().map(|d| d.canonical()),
        })
        .collect();
    out.json("device_id.json", &ids)?;
    let rows: Vec<AttackRow> = report
        .csv_rows()
        .into_iter()
        .map(|[scenario_id, run, id_digest, consistent, phase1_iterations, groups_used, reruns, rounds, failure]| AttackRow {
            scenario_id,
            run,
            id_digest,
            consistent,
            phase1_iterations,
            groups_used,
            reruns,
            rounds,
            failure,
        })
        .collect();
    out.table("summary", &rows)?;
    for r in &report.runs {
        println!(
            "run {}: id {} after {} phase-1 iterations, {} groups, {} reruns{}",
            r.run,
            r.id_digest.as_deref().unwrap_or("-"),
            r.phase1_iterations,
            r.groups_decoded,
            r.reruns,
            r.failure.as_deref().map(|f| format!(" ({f})")).unwrap_or_default()
        );
    }
    println!("consistent: {}", report.consistent);
    if report.consistent {
        Ok(())
    } else {
        let reason = report.runs.iter().find_map(|r| r.failure.clone()).unwrap_or_else(|| "runs produced different IDs".into());
        Err(Failure::Attack(reason))
    }
}

#[derive(Serialize)]
struct BandRow {
    l_from: usize,
    l_to: usize,
    n_star: usize,
}

#[derive(Serialize)]
struct SummaryRow {
    #[serde(rename = "N")]
    population: u64,
    p_star: f64,
    l_min: usize,
    l_max: usize,
    #[serde(rename = "E_l")]
    expected_l: f64,
    c_over_cstar: f64,
}

pub const SUMMARY_EXPONENTS: std::ops::RangeInclusive<u32> = 2..=12;

pub fn tables(table_size: usize, population: u64, c_star: f64, out: &mut Output) -> CmdResult {
    if table_size < 2 || population < 2 || !(c_star > 0.0) {
        return Err(Failure::Config(anyhow!("need table size >= 2, population >= 2 and c* > 0")));
    }
    let p_star = pstar_for_population(population, c_star);
    let tab = nstar_table(table_size, p_star).map_err(|e| no_solution(&e))?;
    let bands: Vec<BandRow> = tab.bands().into_iter().map(|(l_from, l_to, n_star)| BandRow { l_from, l_to, n_star }).collect();
    let name = out.table("nstar", &bands)?;
    println!("{name}: l_min {} l_max {} at p* = {p_star:e}", tab.l_min, tab.l_max);
    let mut rows = Vec::new();
    for exp in SUMMARY_EXPONENTS {
        let row = population_row(table_size, 10u64.pow(exp), c_star).map_err(|e| no_solution(&e))?;
        rows.push(SummaryRow {
            population: row.population,
            p_star: row.p_star,
            l_min: row.l_min,
            l_max: row.l_max,
            expected_l: row.expected_l,
            c_over_cstar: row.c_over_cstar,
        });
    }
    let name = out.table("summary", &rows)?;
    println!("{name}: {} populations", rows.len());
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Phase {
    Phase1,
    Phase2,
}

#[derive(Serialize)]
struct DistRow {
    value: usize,
    count: u64,
    frequency: f64,
    exact: f64,
}

#[derive(Serialize)]
struct McStats {
    phase: &'static str,
    table_size: usize,
    trials: u64,
    seed: u64,
    mean: f64,
    exact_mean: f64,
    std_error: f64,
    z: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    population: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    c_over_cstar: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    exact_c_over_cstar: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    z_c: Option<f64>,
}

fn distribution(h: &Histogram, exact: impl Fn(usize) -> f64, len: usize) -> Vec<DistRow> {
    let n = h.trials().max(1) as f64;
    (0..len.max(h.counts.len()))
        .map(|v| {
            let count = h.counts.get(v).copied().unwrap_or(0);
            DistRow { value: v, count, frequency: count as f64 / n, exact: exact(v) }
        })
        .filter(|r| r.count > 0 || r.exact > 0.0)
        .collect()
}

pub fn montecarlo(
    phase: Phase,
    table_size: usize,
    trials: u64,
    seed: u64,
    population: u64,
    c_star: f64,
    out: &mut Output,
) -> CmdResult {
    if trials == 0 {
        return Err(Failure::Config(anyhow!("trials must be at least 1")));
    }
    if table_size < 2 {
        return Err(Failure::Config(anyhow!("table size must be at least 2")));
    }
    let stats = match phase {
        Phase::Phase1 => {
            let exact = phase1_stop_distribution(table_size).map_err(|e| Failure::Config(e.into()))?;
            let h = phase1_trials(table_size, trials, seed);
            let se = (exact.variance / trials as f64).sqrt();
            out.table("distribution", &distribution(&h, |l| exact.prob(l), exact.stop.len() + 1))?;
            McStats {
                phase: "phase1",
                table_size,
                trials,
                seed,
                mean: h.mean(),
                exact_mean: exact.expected,
                std_error: se,
                z: (h.mean() - exact.expected) / se,
                population: None,
                c_over_cstar: None,
                exact_c_over_cstar: None,
                z_c: None,
            }
        }
        Phase::Phase2 => {
            let p_star = pstar_for_population(population, c_star);
            let tab = nstar_table(table_size, p_star).map_err(|e| no_solution(&e))?;
            let exact = phase2_stop_distribution(&tab).map_err(|e| Failure::Config(e.into()))?;
            let sim = phase2_populations(table_size, population, c_star, trials, seed).map_err(|e| no_solution(&e))?;
            out.table("distribution", &distribution(&sim.l_histogram, |l| exact.stop.get(l).copied().unwrap_or(0.0), exact.stop.len()))?;
            let se = (exact.variance_l / sim.l_histogram.trials() as f64).sqrt();
            let se_c = sim.se_collisions / c_star;
            McStats {
                phase: "phase2",
                table_size,
                trials,
                seed,
                mean: sim.mean_l,
                exact_mean: exact.expected_l,
                std_error: se,
                z: (sim.mean_l - exact.expected_l) / se,
                population: Some(population),
                c_over_cstar: Some(sim.c_over_cstar),
                exact_c_over_cstar: Some(exact.c_over_cstar),
                z_c: (se_c > 0.0).then(|| (sim.c_over_cstar - exact.c_over_cstar) / se_c),
            }
        }
    };
    println!("mean {} vs exact {} (z = {})", stats.mean, stats.exact_mean, stats.z);
    out.json("stats.json", &stats)?;
    Ok(())
}

/// Countermeasure comparison input.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CountermeasureConfig {
    pub base: Scenario,
    pub countermeasures: Vec<Countermeasure>,
    pub seeds: Vec<u64>,
}

impl CountermeasureConfig {
    /// Linux-noise baseline, a 64K table, re-keying every 100 ticks and
    /// uniform 1..=8 noise over `count` consecutive seeds.
    pub fn standard(seed: u64, count: u64) -> Self {
        let kernel = KernelConfig::new(seed).with_noise(NoiseMode::Linux1In16);
        Self {
            base: Scenario::new("countermeasures", seed, kernel),
            countermeasures: vec![
                Countermeasure::LargeTable { table_size: 65536 },
                Countermeasure::Rekey { every_ticks: 100 },
                Countermeasure::PatchedNoise,
            ],
            seeds: (seed..seed.saturating_add(count)).collect(),
        }
    }
}

pub fn countermeasures(cfg: &CountermeasureConfig, out: &mut Output) -> CmdResult {
    if cfg.seeds.is_empty() {
        return Err(Failure::Config(anyhow!("no seeds given")));
    }
    let summaries: Vec<CountermeasureSummary> =
        compare_countermeasures(&cfg.base, &cfg.countermeasures, &cfg.seeds).map_err(scenario_failure)?;
    for s in &summaries {
        println!(
            "{}: {}/{} consistent, {} no-convergence runs, mean rounds {}",
            s.countermeasure, s.consistent, s.scenarios, s.no_convergence, s.mean_rounds
        );
    }
    out.table("countermeasures", &summaries)?;
    Ok(())
}

/// Traffic measurement input. With `counts` set, interval `i` makes exactly
/// `counts[i]` background connections; otherwise `intervals` intervals of
/// `ticks_per_interval` ticks at `organic_rate`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrafficConfig {
    pub seed: u64,
    pub kernel: KernelConfig,
    #[serde(default)]
    pub counts: Vec<u64>,
    #[serde(default)]
    pub organic_rate: f64,
    #[serde(default = "one")]
    pub intervals: usize,
    #[serde(default = "one_u64")]
    pub ticks_per_interval: u64,
}

fn one() -> usize {
    1
}
fn one_u64() -> u64 {
    1
}

#[derive(Debug, Serialize)]
struct TrafficRow {
    interval: usize,
    measured: u64,
    ground_truth: u64,
    exact: bool,
    saturated: bool,
}

fn poll(bed: &mut SimBed, s_prime: &[u16]) -> Result<Vec<u16>> {
    let mut seen = std::collections::HashMap::new();
    for round in burst_rounds(s_prime, s_prime.len()) {
        for o in bed.run_round(&round) {
            seen.insert(o.dst_port, o.src_port);
        }
    }
    s_prime.iter().map(|w| seen.get(w).copied().ok_or_else(|| anyhow!("no measurement for port {w}"))).collect()
}

pub fn traffic(cfg: &TrafficConfig, out: &mut Output) -> CmdResult {
    if !(cfg.organic_rate >= 0.0 && cfg.organic_rate.is_finite()) {
        return Err(Failure::Config(anyhow!("organic_rate must be finite and >= 0")));
    }
    let kernel = Kernel::new(cfg.kernel.clone()).map_err(|e| Failure::Config(e.into()))?;
    let step = cfg.kernel.increment_step;
    let range = PortRange::new(cfg.kernel.min_ephemeral, cfg.kernel.max_ephemeral).map_err(|e| Failure::Config(e.into()))?;
    let rho = range.size();
    let (client, server) = run_addresses(0);
    let device = Device::new(kernel, client, server, 0.0, cfg.seed);
    let mut bed = SimBed { device, network: Network::new(NetConfig::default(), cfg.seed) };
    let scfg = ServerConfig { range, counter_step: step, ..ServerConfig::default() };
    let nstar = nstar_table(cfg.kernel.table_size, pstar_for_population(1_000_000, 1.0)).map_err(|e| no_solution(&e))?;
    let mut session = ServerSession::new(client, scfg, nstar).map_err(|e| Failure::Config(e.into()))?;
    let mut pool = PortPool::new();
    let phase1 = run_phase1(&mut bed, &mut session, &mut pool, &AttackConfig::default())
        .map_err(|e| Failure::Attack(e.to_string()))?;
    let cells: Vec<usize> = phase1
        .s_prime
        .iter()
        .map(|&w| bed.device.kernel.cell_of(&dhps::kernel::ThreeTuple::new(client, server, w).expect("nonzero port")))
        .collect();
    let intervals = if cfg.counts.is_empty() { cfg.intervals } else { cfg.counts.len() };
    let mut rows = Vec::with_capacity(intervals);
    let mut before = poll(&mut bed, &phase1.s_prime)?;
    for i in 0..intervals {
        let table_before: Vec<u64> = cells.iter().map(|&c| bed.device.kernel.counter(c)).collect();
        let organic_before = bed.device.organic_total();
        if let Some(&count) = cfg.counts.get(i) {
            bed.device.organic_rate = count as f64;
            bed.run_round(&Vec::<Action>::new());
        } else {
            bed.device.organic_rate = cfg.organic_rate;
            for _ in 0..cfg.ticks_per_interval {
                bed.run_round(&Vec::<Action>::new());
            }
        }
        bed.device.organic_rate = 0.0;
        let truth = bed.device.organic_total() - organic_before;
        let saturated = cells
            .iter()
            .zip(&table_before)
            .any(|(&c, &b)| bed.device.kernel.counter(c) - b + u64::from(step) >= u64::from(rho));
        let after = poll(&mut bed, &phase1.s_prime)?;
        let measured = traffic_count(&before, &after, range, step).total;
        rows.push(TrafficRow { interval: i, measured, ground_truth: truth, exact: measured == truth, saturated });
        before = after;
    }
    for r in &rows {
        println!(
            "interval {}: measured {} ground truth {}{}",
            r.interval,
            r.measured,
            r.ground_truth,
            if r.saturated { " (saturated)" } else { "" }
        );
    }
    out.table("traffic", &rows)?;
    Ok(())
}

pub fn alg5(msl: f64, rate: f64, range: f64, out: &mut Output) -> CmdResult {
    if !(msl > 0.0 && rate > 0.0 && range > 0.0) {
        return Err(Failure::Config(anyhow!("msl, rate and range must be positive")));
    }
    let b = alg5_bound(msl, rate, range);
    println!("N = {}: {} bits -> {} bits", b.n_max, b.range_bits, b.n_bits);
    out.table("alg5", &[b])?;
    Ok(())
}
