//! Discrete generator for the edge-offloading scenario.
//!
//! Each task picks one of three offload operations: directly to an edge
//! server over WLAN (O_e), to the cloud through a road-side unit and
//! the WAN (O_r), or to the cloud over the cellular network (O_c). The
//! task traverses the corresponding entity path emitting probe symbols,
//! and an 18-feature record is collected per task. Everything is driven
//! by a seeded ChaCha stream: identical configs give byte-identical
//! output.
//!
//! The probe deployment is fixed so that the default corpus carries
//! exactly 28 distinct adjacent probe-symbol pairs: four RSUs, four
//! edge servers, upstream probes at the access entities and return
//! probes at the transit networks.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, LogNormal};
use serde::{Deserialize, Serialize};

use crate::caog::{relevance_scores, CaogConfig, Estimator};
use crate::error::{Error, Result};
use crate::symbol::SymbolId;
use crate::trace::{Corpus, FeatureRecord, Trace};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum OpClass {
    Cloud,
    Rsu,
    Edge,
}

impl OpClass {
    pub const ALL: [OpClass; 3] = [OpClass::Cloud, OpClass::Rsu, OpClass::Edge];

    pub fn tag(self) -> &'static str {
        match self {
            OpClass::Cloud => "O_c",
            OpClass::Rsu => "O_r",
            OpClass::Edge => "O_e",
        }
    }

    pub fn from_tag(tag: &str) -> Option<OpClass> {
        match tag {
            "O_c" => Some(OpClass::Cloud),
            "O_r" => Some(OpClass::Rsu),
            "O_e" => Some(OpClass::Edge),
            _ => None,
        }
    }
}

/// Lognormal delay parameters in milliseconds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DelayDist {
    pub median_ms: f64,
    pub sigma: f64,
}

impl DelayDist {
    fn sample(&self, rng: &mut ChaCha8Rng) -> f64 {
        LogNormal::new(self.median_ms.ln(), self.sigma)
            .expect("valid lognormal")
            .sample(rng)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IntRange {
    pub min: u64,
    pub max: u64,
}

impl IntRange {
    fn sample(&self, rng: &mut ChaCha8Rng) -> u64 {
        rng.random_range(self.min..=self.max)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimConfig {
    pub n_tasks: usize,
    pub seed: u64,
    /// Decision policy: `stochastic`, or a forced `O_c`/`O_r`/`O_e`.
    pub policy: String,
    pub deadline_ms: f64,
    pub zones: usize,
    pub edge_servers: usize,
    pub wlan: DelayDist,
    pub wan: DelayDist,
    pub cell: DelayDist,
    /// Instruction throughput, millions per millisecond.
    pub edge_ips: f64,
    pub cloud_ips: f64,
    pub file_kb: IntRange,
    pub result_kb: IntRange,
    /// Millions of instructions per task.
    pub instructions: IntRange,
    pub drop_edge: f64,
    pub drop_rsu: f64,
    pub drop_cell: f64,
    /// Recent-task window behind F13..F17.
    pub window: usize,
    /// Window share a server class absorbs before saturating; the
    /// utilizations F13/F14 are recent counts over `window * share`.
    pub edge_capacity_share: f64,
    pub cloud_capacity_share: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            n_tasks: 10_000,
            seed: 42,
            policy: "stochastic".to_string(),
            deadline_ms: 300.0,
            zones: 4,
            edge_servers: 4,
            wlan: DelayDist { median_ms: 9.0, sigma: 0.95 },
            wan: DelayDist { median_ms: 24.0, sigma: 0.55 },
            cell: DelayDist { median_ms: 40.0, sigma: 0.45 },
            edge_ips: 6.0,
            cloud_ips: 25.0,
            file_kb: IntRange { min: 100, max: 1500 },
            result_kb: IntRange { min: 20, max: 200 },
            instructions: IntRange { min: 50, max: 500 },
            drop_edge: 0.008,
            drop_rsu: 0.05,
            drop_cell: 0.12,
            window: 200,
            edge_capacity_share: 1.4,
            cloud_capacity_share: 1.1,
        }
    }
}

impl SimConfig {
    pub fn ensure_valid(&self) -> Result<()> {
        let positive = [
            ("deadline_ms", self.deadline_ms),
            ("edge_ips", self.edge_ips),
            ("cloud_ips", self.cloud_ips),
            ("wlan.median_ms", self.wlan.median_ms),
            ("wan.median_ms", self.wan.median_ms),
            ("cell.median_ms", self.cell.median_ms),
        ];
        for (name, v) in positive {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::InvalidConfig(format!("{name} must be positive, got {v}")));
            }
        }
        for (name, v) in [
            ("wlan.sigma", self.wlan.sigma),
            ("wan.sigma", self.wan.sigma),
            ("cell.sigma", self.cell.sigma),
        ] {
            if v < 0.0 || !v.is_finite() {
                return Err(Error::InvalidConfig(format!("{name} must be non-negative, got {v}")));
            }
        }
        for (name, p) in [
            ("drop_edge", self.drop_edge),
            ("drop_rsu", self.drop_rsu),
            ("drop_cell", self.drop_cell),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::InvalidConfig(format!("{name} must lie in [0,1], got {p}")));
            }
        }
        if self.zones == 0 || self.edge_servers == 0 {
            return Err(Error::InvalidConfig("zones and edge_servers must be positive".to_string()));
        }
        if self.window == 0 {
            return Err(Error::InvalidConfig("window must be positive".to_string()));
        }
        if !(self.edge_capacity_share > 0.0) || !(self.cloud_capacity_share > 0.0) {
            return Err(Error::InvalidConfig("capacity shares must be positive".to_string()));
        }
        for (name, r) in [
            ("file_kb", self.file_kb),
            ("result_kb", self.result_kb),
            ("instructions", self.instructions),
        ] {
            if r.min == 0 || r.min > r.max {
                return Err(Error::InvalidConfig(format!(
                    "{name} range [{}, {}] is invalid",
                    r.min, r.max
                )));
            }
        }
        if !matches!(self.policy.as_str(), "stochastic" | "O_c" | "O_r" | "O_e") {
            return Err(Error::InvalidConfig(format!(
                "policy must be stochastic or a forced operation tag, got {:?}",
                self.policy
            )));
        }
        Ok(())
    }

    pub fn from_json(json: &str) -> Result<SimConfig> {
        Ok(serde_json::from_str(json)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }
}

/// The entity graph behind the probe paths.
#[derive(Debug, Clone)]
pub struct Topology {
    pub entities: BTreeSet<SymbolId>,
    pub adjacency: BTreeSet<(String, String)>,
}

impl Topology {
    pub fn offload(zones: usize, edge_servers: usize) -> Topology {
        let mut entities: BTreeSet<SymbolId> = ["USER", "CC", "CLOUD", "WAN", "MAN"]
            .iter()
            .map(|e| SymbolId::spatial(*e))
            .collect();
        let mut adjacency = BTreeSet::new();
        let mut link = |a: &str, b: &str| {
            adjacency.insert((a.to_string(), b.to_string()));
            adjacency.insert((b.to_string(), a.to_string()));
        };
        link("USER", "CC");
        link("CC", "CLOUD");
        link("WAN", "CLOUD");
        link("WAN", "USER");
        link("MAN", "USER");
        for z in 1..=zones {
            let rsu = format!("RSU{z}");
            entities.insert(SymbolId::spatial(rsu.clone()));
            link("USER", &rsu);
            link(&rsu, "WAN");
            link(&rsu, "MAN");
        }
        for e in 1..=edge_servers {
            let es = format!("ES{e}");
            entities.insert(SymbolId::spatial(es.clone()));
            link("MAN", &es);
        }
        Topology { entities, adjacency }
    }

    /// Confirms the three offload routes exist as connected paths.
    pub fn route_violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        let has = |a: &str, b: &str| self.adjacency.contains(&(a.to_string(), b.to_string()));
        if !self.entities.iter().any(|e| e.name.starts_with("ES")) {
            out.push("no edge server entity".to_string());
        }
        if !(has("USER", "RSU1") && has("RSU1", "WAN") && has("WAN", "CLOUD")) {
            out.push("cloud-via-RSU route is not connected".to_string());
        }
        if !(has("USER", "CC") && has("CC", "CLOUD")) {
            out.push("cloud-via-cellular route is not connected".to_string());
        }
        if !(has("USER", "RSU1") && has("RSU1", "MAN") && has("MAN", "ES1")) {
            out.push("edge route is not connected".to_string());
        }
        out
    }
}

/// Probe symbols a task emits on each route. Upstream access entities
/// are probed on the way out; the return leg is observed at the transit
/// network egress and the user port.
pub fn probe_path(op: OpClass, zone: usize, es: usize) -> Vec<String> {
    match op {
        OpClass::Cloud => ["USER", "CC", "CLOUD", "CC", "USER"]
            .iter()
            .map(|s| s.to_string())
            .collect(),
        OpClass::Rsu => vec![
            "USER".to_string(),
            format!("RSU{}", zone + 1),
            "WAN".to_string(),
            "CLOUD".to_string(),
            "WAN".to_string(),
            "USER".to_string(),
        ],
        OpClass::Edge => vec![
            "USER".to_string(),
            format!("RSU{}", zone + 1),
            "MAN".to_string(),
            format!("ES{}", es + 1),
            "MAN".to_string(),
            "USER".to_string(),
        ],
    }
}

/// Environment draw for one task, independent of the policy choice.
#[derive(Debug, Clone)]
pub struct TaskEnv {
    pub zone: usize,
    pub es: usize,
    pub file_kb: u64,
    pub result_kb: u64,
    pub instructions: u64,
    pub wan_up: f64,
    pub wan_down: f64,
    pub cell_up: f64,
    pub cell_down: f64,
    pub wlan_up: f64,
    pub wlan_down: f64,
    drop_u: f64,
}

fn draw_env(config: &SimConfig, rng: &mut ChaCha8Rng) -> TaskEnv {
    TaskEnv {
        zone: rng.random_range(0..config.zones),
        es: rng.random_range(0..config.edge_servers),
        file_kb: config.file_kb.sample(rng),
        result_kb: config.result_kb.sample(rng),
        instructions: config.instructions.sample(rng),
        wan_up: config.wan.sample(rng),
        wan_down: config.wan.sample(rng),
        cell_up: config.cell.sample(rng),
        cell_down: config.cell.sample(rng),
        wlan_up: config.wlan.sample(rng),
        wlan_down: config.wlan.sample(rng),
        drop_u: rng.random(),
    }
}

/// Decision context: the observable pre-decision features.
#[derive(Debug, Clone)]
pub struct Conditions {
    pub env: TaskEnv,
    pub util_edge: f64,
    pub util_cloud: f64,
    pub recent_edge: u64,
    pub recent_rsu: u64,
    pub recent_cell: u64,
}

impl Conditions {
    /// Pre-decision feature values by id (F3..F17).
    pub fn feature(&self, id: &str) -> Option<f64> {
        match id {
            "F3" => Some(self.env.zone as f64),
            "F4" => Some(self.env.file_kb as f64),
            "F5" => Some(self.env.result_kb as f64),
            "F6" => Some(self.env.instructions as f64),
            "F7" => Some(self.env.wan_up),
            "F8" => Some(self.env.wan_down),
            "F9" => Some(self.env.cell_up),
            "F10" => Some(self.env.cell_down),
            "F11" => Some(self.env.wlan_up),
            "F12" => Some(self.env.wlan_down),
            "F13" => Some(self.util_edge),
            "F14" => Some(self.util_cloud),
            "F15" => Some(self.recent_edge as f64),
            "F16" => Some(self.recent_rsu as f64),
            "F17" => Some(self.recent_cell as f64),
            _ => None,
        }
    }
}

pub trait Policy {
    fn name(&self) -> &str;
    fn choose(&mut self, ctx: &Conditions) -> OpClass;
}

pub struct StochasticPolicy {
    rng: ChaCha8Rng,
}

impl StochasticPolicy {
    pub fn new(seed: u64) -> Self {
        StochasticPolicy { rng: ChaCha8Rng::seed_from_u64(seed ^ 0x5713_A9C2_44D1_08EF) }
    }
}

impl Policy for StochasticPolicy {
    fn name(&self) -> &str {
        "stochastic"
    }

    fn choose(&mut self, _ctx: &Conditions) -> OpClass {
        OpClass::ALL[self.rng.random_range(0..3)]
    }
}

pub struct ForcedPolicy {
    op: OpClass,
}

impl Policy for ForcedPolicy {
    fn name(&self) -> &str {
        self.op.tag()
    }

    fn choose(&mut self, _ctx: &Conditions) -> OpClass {
        self.op
    }
}

/// Success-probability model over discretized decision features: a
/// per-operation naive-Bayes estimate of P(success | features), argmax
/// over operations. Feature bins follow the training quantiles with an
/// extra top bin isolating extreme draws.
#[derive(Debug, Clone)]
pub struct TablePolicy {
    name: String,
    features: Vec<String>,
    cuts: BTreeMap<String, Vec<f64>>,
    /// Per operation: (successes, failures).
    priors: BTreeMap<OpClass, (u64, u64)>,
    /// Per (feature, op, bin): (successes, failures) in that bin.
    bins: BTreeMap<(String, OpClass, usize), (u64, u64)>,
}

const POLICY_BIN_QUANTILES: [f64; 3] = [1.0 / 3.0, 2.0 / 3.0, 0.95];

impl TablePolicy {
    /// Trains from logged (conditions, operation, success) triples.
    pub fn train(name: &str, features: &[String], log: &[(Conditions, OpClass, bool)]) -> TablePolicy {
        let mut cuts = BTreeMap::new();
        for f in features {
            let mut column: Vec<f64> = log.iter().filter_map(|(c, _, _)| c.feature(f)).collect();
            column.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
            let n = column.len();
            let mut edges = Vec::new();
            for q in POLICY_BIN_QUANTILES {
                let k = ((n as f64) * q) as usize;
                if k > 0 && k < n && column[k - 1] < column[k] {
                    let edge = (column[k - 1] + column[k]) / 2.0;
                    if edges.last().map_or(true, |e| *e < edge) {
                        edges.push(edge);
                    }
                }
            }
            cuts.insert(f.clone(), edges);
        }
        let mut policy = TablePolicy {
            name: name.to_string(),
            features: features.to_vec(),
            cuts,
            priors: BTreeMap::new(),
            bins: BTreeMap::new(),
        };
        for (ctx, op, success) in log {
            let prior = policy.priors.entry(*op).or_insert((0, 0));
            if *success {
                prior.0 += 1;
            } else {
                prior.1 += 1;
            }
            for f in features {
                let bin = policy.bin_of(f, ctx);
                let cell = policy.bins.entry((f.clone(), *op, bin)).or_insert((0, 0));
                if *success {
                    cell.0 += 1;
                } else {
                    cell.1 += 1;
                }
            }
        }
        policy
    }

    fn bin_of(&self, feature: &str, ctx: &Conditions) -> usize {
        let value = ctx.feature(feature).unwrap_or(0.0);
        self.cuts[feature].iter().take_while(|c| value >= **c).count()
    }

    /// Log success-over-failure odds of `op` given the context.
    fn log_odds(&self, ctx: &Conditions, op: OpClass) -> f64 {
        let (s, f) = self.priors.get(&op).copied().unwrap_or((0, 0));
        let mut odds = ((s as f64 + 1.0) / (f as f64 + 1.0)).ln();
        for feature in &self.features {
            let bin = self.bin_of(feature, ctx);
            let (bs, bf) = self.bins.get(&(feature.clone(), op, bin)).copied().unwrap_or((0, 0));
            let n_bins = self.cuts[feature].len() as f64 + 1.0;
            let p_bin_s = (bs as f64 + 1.0) / (s as f64 + n_bins);
            let p_bin_f = (bf as f64 + 1.0) / (f as f64 + n_bins);
            odds += (p_bin_s / p_bin_f).ln();
        }
        odds
    }
}

impl Policy for TablePolicy {
    fn name(&self) -> &str {
        &self.name
    }

    fn choose(&mut self, ctx: &Conditions) -> OpClass {
        let mut best = OpClass::Cloud;
        let mut best_odds = f64::NEG_INFINITY;
        for op in OpClass::ALL {
            let odds = self.log_odds(ctx, op);
            if odds > best_odds {
                best = op;
                best_odds = odds;
            }
        }
        best
    }
}

/// One simulated task with its decision context and outcome.
#[derive(Debug, Clone)]
pub struct TaskRecord {
    pub ctx: Conditions,
    pub op: OpClass,
    pub service_ms: f64,
    pub success: bool,
}

struct WindowState {
    recent: VecDeque<OpClass>,
    window: usize,
}

impl WindowState {
    fn new(window: usize) -> Self {
        WindowState { recent: VecDeque::new(), window }
    }

    fn counts(&self) -> (u64, u64, u64) {
        let mut e = 0;
        let mut r = 0;
        let mut c = 0;
        for op in &self.recent {
            match op {
                OpClass::Edge => e += 1,
                OpClass::Rsu => r += 1,
                OpClass::Cloud => c += 1,
            }
        }
        (e, r, c)
    }

    fn push(&mut self, op: OpClass) {
        self.recent.push_back(op);
        if self.recent.len() > self.window {
            self.recent.pop_front();
        }
    }
}

fn service_time(config: &SimConfig, env: &TaskEnv, op: OpClass, util_edge: f64, util_cloud: f64) -> f64 {
    let kf = 1.0 + env.file_kb as f64 / 512.0;
    let kr = 1.0 + env.result_kb as f64 / 512.0;
    let exec_edge = env.instructions as f64 / (config.edge_ips * (1.0 - 0.7 * util_edge).max(0.2));
    let exec_cloud = env.instructions as f64 / (config.cloud_ips * (1.0 - 0.5 * util_cloud).max(0.3));
    match op {
        OpClass::Edge => env.wlan_up * kf + exec_edge + env.wlan_down * kr,
        OpClass::Rsu => (env.wlan_up + env.wan_up) * kf + exec_cloud + (env.wan_down + env.wlan_down) * kr,
        OpClass::Cloud => env.cell_up * kf + exec_cloud + env.cell_down * kr,
    }
}

fn drop_probability(config: &SimConfig, op: OpClass) -> f64 {
    match op {
        OpClass::Edge => config.drop_edge,
        OpClass::Rsu => config.drop_rsu,
        OpClass::Cloud => config.drop_cell,
    }
}

fn run_tasks(config: &SimConfig, env_seed: u64, policy: &mut dyn Policy, n: usize) -> Vec<TaskRecord> {
    let mut env_rng = ChaCha8Rng::seed_from_u64(env_seed);
    let mut window = WindowState::new(config.window);
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let env = draw_env(config, &mut env_rng);
        let (recent_edge, recent_rsu, recent_cell) = window.counts();
        let util_edge =
            (recent_edge as f64 / (config.window as f64 * config.edge_capacity_share)).min(1.0);
        let util_cloud = ((recent_rsu + recent_cell) as f64
            / (config.window as f64 * config.cloud_capacity_share))
            .min(1.0);
        let ctx = Conditions { env, util_edge, util_cloud, recent_edge, recent_rsu, recent_cell };
        let op = policy.choose(&ctx);
        let service_ms = service_time(config, &ctx.env, op, util_edge, util_cloud);
        let dropped = ctx.env.drop_u < drop_probability(config, op);
        let success = !dropped && service_ms <= config.deadline_ms;
        window.push(op);
        out.push(TaskRecord { ctx, op, service_ms, success });
    }
    out
}

fn record_features(task: &TaskRecord) -> FeatureRecord {
    let mut f = FeatureRecord::default();
    f.set_cat("F0", if task.success { "success" } else { "failure" });
    f.set_cat("F1", if task.op == OpClass::Edge { "V_e" } else { "V_c" });
    f.set_num("F2", task.service_ms);
    f.set_num("F3", task.ctx.env.zone as f64);
    f.set_num("F4", task.ctx.env.file_kb as f64);
    f.set_num("F5", task.ctx.env.result_kb as f64);
    f.set_num("F6", task.ctx.env.instructions as f64);
    f.set_num("F7", task.ctx.env.wan_up);
    f.set_num("F8", task.ctx.env.wan_down);
    f.set_num("F9", task.ctx.env.cell_up);
    f.set_num("F10", task.ctx.env.cell_down);
    f.set_num("F11", task.ctx.env.wlan_up);
    f.set_num("F12", task.ctx.env.wlan_down);
    f.set_num("F13", task.ctx.util_edge);
    f.set_num("F14", task.ctx.util_cloud);
    f.set_num("F15", task.ctx.recent_edge as f64);
    f.set_num("F16", task.ctx.recent_rsu as f64);
    f.set_num("F17", task.ctx.recent_cell as f64);
    f
}

/// Simulator output: one trace per task carrying the probe path, the
/// operation tag and the feature record.
#[derive(Debug, Clone, PartialEq)]
pub struct SimOutput {
    pub corpus: Corpus,
}

impl SimOutput {
    pub fn features(&self) -> Vec<FeatureRecord> {
        self.corpus.records.iter().filter_map(|t| t.features.clone()).collect()
    }

    pub fn tagged_features(&self) -> Vec<(String, FeatureRecord)> {
        self.corpus
            .records
            .iter()
            .filter_map(|t| Some((t.op.clone()?, t.features.clone()?)))
            .collect()
    }
}

fn make_policy(config: &SimConfig) -> Result<Box<dyn Policy>> {
    match config.policy.as_str() {
        "stochastic" => Ok(Box::new(StochasticPolicy::new(config.seed))),
        tag => match OpClass::from_tag(tag) {
            Some(op) => Ok(Box::new(ForcedPolicy { op })),
            None => Err(Error::InvalidConfig(format!("unknown policy {tag:?}"))),
        },
    }
}

pub fn simulate(config: &SimConfig) -> Result<SimOutput> {
    config.ensure_valid()?;
    let mut policy = make_policy(config)?;
    Ok(simulate_with(config, config.seed, policy.as_mut()))
}

pub fn simulate_with(config: &SimConfig, env_seed: u64, policy: &mut dyn Policy) -> SimOutput {
    let tasks = run_tasks(config, env_seed, policy, config.n_tasks);
    let records = tasks
        .iter()
        .enumerate()
        .map(|(i, task)| Trace {
            id: format!("t{i:06}"),
            path: probe_path(task.op, task.ctx.env.zone, task.ctx.env.es),
            op: Some(task.op.tag().to_string()),
            features: Some(record_features(task)),
        })
        .collect();
    SimOutput { corpus: Corpus::new(records) }
}

/// Decision features fixed from operator experience: task size, task
/// instructions and the two server utilizations.
pub const HUMAN_PRIOR_FEATURES: [&str; 4] = ["F4", "F6", "F13", "F14"];

/// Features a decision policy may observe before choosing: the entity
/// attributes F3..F17. The outcome features F0..F2 are excluded.
pub const DECISION_FEATURES: [&str; 15] = [
    "F3", "F4", "F5", "F6", "F7", "F8", "F9", "F10", "F11", "F12", "F13", "F14", "F15", "F16",
    "F17",
];

#[derive(Debug, Clone, PartialEq)]
pub struct EvalRow {
    pub episode: usize,
    pub policy: String,
    pub failure_rate: f64,
}

#[derive(Debug, Clone)]
pub struct EvalOutput {
    pub rows: Vec<EvalRow>,
    /// Mean failure rate per policy.
    pub mean_failure: BTreeMap<String, f64>,
    /// Decision features selected for the intent policy.
    pub intent_features: Vec<String>,
}

pub fn eval_to_csv(rows: &[EvalRow]) -> String {
    let mut s = String::from("episode,policy,failure_rate\n");
    for r in rows {
        s.push_str(&format!("{},{},{}\n", r.episode, r.policy, r.failure_rate));
    }
    s
}

/// Three-phase policy comparison. Phase 1 runs the stochastic policy to
/// produce training data; phase 2 trains the human-prior policy (fixed
/// feature list) and the intent-feature policy (top relevance scores
/// against F0 among the decision features); phase 3 replays a shared
/// environment stream under every policy and reports windowed failure
/// rates.
pub fn run_policy_eval(
    config: &SimConfig,
    policies: &[String],
    episodes: usize,
    window: usize,
) -> Result<EvalOutput> {
    config.ensure_valid()?;
    if window == 0 || episodes == 0 {
        return Err(Error::InvalidConfig("episodes and window must be positive".to_string()));
    }
    if !policies.iter().any(|p| p == "stochastic") {
        return Err(Error::MissingStochasticPolicy);
    }
    for p in policies {
        if !matches!(p.as_str(), "stochastic" | "human-prior" | "intent-feature") {
            return Err(Error::InvalidConfig(format!("unknown policy {p:?}")));
        }
    }

    // Phase 1: stochastic training run.
    let mut trainer = StochasticPolicy::new(config.seed);
    let training = run_tasks(config, config.seed, &mut trainer, config.n_tasks);
    let log: Vec<(Conditions, OpClass, bool)> =
        training.iter().map(|t| (t.ctx.clone(), t.op, t.success)).collect();

    // Phase 2: feature selection and table training.
    let feature_records: Vec<FeatureRecord> = training.iter().map(record_features).collect();
    let caog_config = CaogConfig {
        estimator: Estimator::MutualInformation,
        top_k: 4,
        bins: 4,
        max_depth: 1,
    };
    let scores = relevance_scores(&feature_records, "F0", &caog_config)?;
    let intent_features: Vec<String> = scores
        .ranked()
        .into_iter()
        .map(|(f, _)| f.to_string())
        .filter(|f| DECISION_FEATURES.contains(&f.as_str()))
        .take(4)
        .collect();
    let human_features: Vec<String> = HUMAN_PRIOR_FEATURES.iter().map(|s| s.to_string()).collect();

    // Phase 3: shared environment stream, one run per policy.
    let eval_seed = config.seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(1);
    let mut rows = Vec::new();
    let mut mean_failure = BTreeMap::new();
    for name in policies {
        let mut policy: Box<dyn Policy> = match name.as_str() {
            "stochastic" => Box::new(StochasticPolicy::new(eval_seed)),
            "human-prior" => Box::new(TablePolicy::train("human-prior", &human_features, &log)),
            "intent-feature" => {
                Box::new(TablePolicy::train("intent-feature", &intent_features, &log))
            }
            _ => unreachable!("validated above"),
        };
        let tasks = run_tasks(config, eval_seed, policy.as_mut(), episodes);
        let mut failures: VecDeque<bool> = VecDeque::new();
        let mut failed_total = 0usize;
        for (i, task) in tasks.iter().enumerate() {
            failures.push_back(!task.success);
            if failures.len() > window {
                failures.pop_front();
            }
            failed_total += !task.success as usize;
            let rate = failures.iter().filter(|f| **f).count() as f64 / failures.len() as f64;
            rows.push(EvalRow { episode: i, policy: name.clone(), failure_rate: rate });
        }
        mean_failure.insert(name.clone(), failed_total as f64 / episodes as f64);
    }
    Ok(EvalOutput { rows, mean_failure, intent_features })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_config(n: usize) -> SimConfig {
        SimConfig { n_tasks: n, ..SimConfig::default() }
    }

    #[test]
    fn forced_cloud_policy_uses_cellular_route() {
        let config = SimConfig { policy: "O_c".to_string(), ..small_config(200) };
        let out = simulate(&config).unwrap();
        for t in &out.corpus.records {
            assert_eq!(t.op.as_deref(), Some("O_c"));
            assert!(t.path.contains(&"CC".to_string()));
            assert!(t.path.contains(&"CLOUD".to_string()));
            let f = t.features.as_ref().unwrap();
            assert_eq!(f.get("F1").and_then(crate::trace::FeatureValue::as_cat), Some("V_c"));
        }
    }

    #[test]
    fn empty_run_is_empty() {
        let out = simulate(&small_config(0)).unwrap();
        assert!(out.corpus.is_empty());
    }

    #[test]
    fn identical_configs_give_identical_output() {
        let config = small_config(500);
        let a = simulate(&config).unwrap();
        let b = simulate(&config).unwrap();
        let mut buf_a = Vec::new();
        let mut buf_b = Vec::new();
        a.corpus.write_jsonl(&mut buf_a).unwrap();
        b.corpus.write_jsonl(&mut buf_b).unwrap();
        assert_eq!(buf_a, buf_b);
    }

    #[test]
    fn trace_route_consistency() {
        let out = simulate(&small_config(2000)).unwrap();
        for t in &out.corpus.records {
            let has_es = t.path.iter().any(|s| s.starts_with("ES"));
            let has_cc = t.path.iter().any(|s| s == "CC");
            let has_wan = t.path.iter().any(|s| s == "WAN");
            match t.op.as_deref().unwrap() {
                "O_e" => assert!(has_es && !has_cc && !has_wan),
                "O_r" => assert!(has_wan && !has_es && !has_cc),
                "O_c" => assert!(has_cc && !has_es && !has_wan),
                other => panic!("unexpected op {other}"),
            }
        }
    }

    #[test]
    fn feature_table_ranges_hold() {
        let out = simulate(&small_config(500)).unwrap();
        for t in &out.corpus.records {
            let problems = t.features.as_ref().unwrap().validate_offload_table();
            assert!(problems.is_empty(), "{problems:?}");
        }
    }

    #[test]
    fn topology_routes_exist() {
        let topo = Topology::offload(4, 4);
        assert!(topo.route_violations().is_empty());
        assert_eq!(topo.entities.len(), 5 + 4 + 4);
    }

    #[test]
    fn eval_requires_stochastic_policy() {
        let err = run_policy_eval(&small_config(100), &["human-prior".to_string()], 50, 10)
            .unwrap_err();
        assert!(err.to_string().starts_with("missing-stochastic-policy"));
    }

    #[test]
    fn doubled_deadline_never_increases_failures() {
        for seed in [1u64, 7, 13] {
            let base = SimConfig { seed, n_tasks: 1500, ..SimConfig::default() };
            let relaxed = SimConfig { deadline_ms: base.deadline_ms * 2.0, ..base.clone() };
            let policies = vec!["stochastic".to_string()];
            let tight = run_policy_eval(&base, &policies, 1500, 100).unwrap();
            let loose = run_policy_eval(&relaxed, &policies, 1500, 100).unwrap();
            assert!(
                loose.mean_failure["stochastic"] <= tight.mean_failure["stochastic"],
                "seed {seed}: {} > {}",
                loose.mean_failure["stochastic"],
                tight.mean_failure["stochastic"]
            );
        }
    }
}
