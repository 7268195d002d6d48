//! Grid network simulation of a flow-table flooding attack and its
//! distributed detection.
//!
//! Every node's per-period transmit time is a stationary AR(1) baseline.
//! From the attack start each attacker injects a Poisson number of packets
//! with unknown flow ids per period. The attacker and each of its neighbours
//! carry the full per-packet cost; every neighbour then forwards one rule
//! request per packet toward the controller, and a node `h` hops along that
//! route carries `ρ^h` of the cost. Neighbours log the sender of every
//! injected packet.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};
use rayon::prelude::*;
use serde::Serialize;

use crate::critvals::{CritVal, CritValKind};
use crate::error::{Error, Result};
use crate::online::{self, StandardKernel};
use crate::timeseries::{Samples, TimeSeries};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Topology {
    pub rows: usize,
    pub cols: usize,
    pub controller: usize,
    /// Cluster id of every node.
    pub clusters: Vec<usize>,
    /// Head (lowest member id) of every cluster.
    pub heads: Vec<usize>,
}

impl Topology {
    /// `rows × cols` grid with 4-neighbour links, controller at node 0 and
    /// one cluster per node.
    pub fn grid(rows: usize, cols: usize) -> Result<Self> {
        if rows == 0 || cols == 0 || rows * cols < 2 {
            return Err(Error::invalid(format!("grid {rows}x{cols} needs at least two nodes")));
        }
        let n = rows * cols;
        Ok(Self {
            rows,
            cols,
            controller: 0,
            clusters: (0..n).collect(),
            heads: (0..n).collect(),
        })
    }

    pub fn with_controller(mut self, id: usize) -> Result<Self> {
        if id >= self.len() {
            return Err(Error::invalid(format!("controller {id} is not a node")));
        }
        self.controller = id;
        Ok(self)
    }

    /// Partitions the grid into `br × bc` blocks (smaller at the far edges).
    pub fn with_block_clusters(mut self, br: usize, bc: usize) -> Result<Self> {
        if br == 0 || bc == 0 {
            return Err(Error::invalid("cluster blocks must be non-empty"));
        }
        let per_row = self.cols.div_ceil(bc);
        let mut heads: BTreeMap<usize, usize> = BTreeMap::new();
        for id in 0..self.len() {
            let (r, c) = self.coords(id);
            let cl = (r / br) * per_row + c / bc;
            self.clusters[id] = cl;
            heads.entry(cl).or_insert(id);
        }
        // Renumber densely in head order.
        let order: BTreeMap<usize, usize> = heads.keys().enumerate().map(|(i, k)| (*k, i)).collect();
        self.clusters.iter_mut().for_each(|c| *c = order[c]);
        self.heads = heads.values().copied().collect();
        Ok(self)
    }

    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn n_clusters(&self) -> usize {
        self.heads.len()
    }

    pub fn coords(&self, id: usize) -> (usize, usize) {
        (id / self.cols, id % self.cols)
    }

    pub fn id(&self, r: usize, c: usize) -> usize {
        r * self.cols + c
    }

    pub fn neighbors(&self, id: usize) -> Vec<usize> {
        let (r, c) = self.coords(id);
        let mut out = Vec::with_capacity(4);
        if r > 0 {
            out.push(self.id(r - 1, c));
        }
        if c > 0 {
            out.push(self.id(r, c - 1));
        }
        if c + 1 < self.cols {
            out.push(self.id(r, c + 1));
        }
        if r + 1 < self.rows {
            out.push(self.id(r + 1, c));
        }
        out
    }

    pub fn hops(&self, a: usize, b: usize) -> usize {
        let (ra, ca) = self.coords(a);
        let (rb, cb) = self.coords(b);
        ra.abs_diff(rb) + ca.abs_diff(cb)
    }

    /// Nodes after `from` on the column-first shortest route to the
    /// controller, ending with the controller.
    pub fn route_to_controller(&self, from: usize) -> Vec<usize> {
        let (mut r, mut c) = self.coords(from);
        let (tr, tc) = self.coords(self.controller);
        let mut out = Vec::with_capacity(self.hops(from, self.controller));
        while c != tc {
            c = if c < tc { c + 1 } else { c - 1 };
            out.push(self.id(r, c));
        }
        while r != tr {
            r = if r < tr { r + 1 } else { r - 1 };
            out.push(self.id(r, c));
        }
        out
    }

    pub fn members(&self, cluster: usize) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.clusters[i] == cluster).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TrafficModel {
    pub baseline_mean: f64,
    pub ar_coef: f64,
    pub noise_sigma: f64,
    /// Mean packets injected by one attacker per period.
    pub injection_rate: f64,
    /// Transmit-time cost of one packet.
    pub packet_ticks: f64,
    /// Share of the cost carried one hop further along the forwarding route.
    pub hop_decay: f64,
}

impl Default for TrafficModel {
    fn default() -> Self {
        Self {
            baseline_mean: 10.0,
            ar_coef: 0.3,
            noise_sigma: 1.0,
            // About three baseline standard deviations at each neighbour.
            injection_rate: 3.15,
            packet_ticks: 1.0,
            hop_decay: 0.4,
        }
    }
}

impl TrafficModel {
    fn validate(&self) -> Result<()> {
        if !(self.ar_coef.abs() < 1.0) {
            return Err(Error::invalid("AR coefficient must lie in (-1, 1)"));
        }
        if !(self.noise_sigma >= 0.0 && self.injection_rate >= 0.0 && self.packet_ticks >= 0.0) {
            return Err(Error::invalid("noise, rate and packet cost must be non-negative"));
        }
        if !(0.0..=1.0).contains(&self.hop_decay) {
            return Err(Error::invalid("hop decay must lie in [0, 1]"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AttackScenario {
    pub attackers: Vec<usize>,
    pub start: usize,
    pub horizon: usize,
    pub traffic: TrafficModel,
}

impl AttackScenario {
    pub fn validate(&self, topo: &Topology) -> Result<()> {
        if self.start >= self.horizon {
            return Err(Error::invalid("attack must start before the horizon"));
        }
        if let Some(a) = self.attackers.iter().find(|&&a| a >= topo.len()) {
            return Err(Error::invalid(format!("attacker {a} is not a node")));
        }
        self.traffic.validate()
    }
}

/// How attackers are drawn for each replication.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ScenarioSpec {
    pub n_attackers: usize,
    /// Minimum hop distance between two attackers; 3 keeps their
    /// neighbourhoods disjoint.
    pub min_spacing: usize,
    /// 1-based period of the first injected packet.
    pub start: usize,
    pub horizon: usize,
    pub traffic: TrafficModel,
}

impl Default for ScenarioSpec {
    fn default() -> Self {
        Self {
            n_attackers: 10,
            min_spacing: 3,
            start: 300,
            horizon: 600,
            traffic: TrafficModel::default(),
        }
    }
}

/// Draws attacker positions uniformly among non-controller nodes subject to
/// the spacing rule, restarting the sequential draw when it gets stuck.
pub fn place_attackers(topo: &Topology, k: usize, min_spacing: usize, rng: &mut impl Rng) -> Result<Vec<usize>> {
    const ATTEMPTS: usize = 10_000;
    let candidates: Vec<usize> = (0..topo.len()).filter(|&i| i != topo.controller).collect();
    if k > candidates.len() {
        return Err(Error::invalid(format!("{k} attackers do not fit in {} nodes", topo.len())));
    }
    let mut order = candidates.clone();
    for _ in 0..ATTEMPTS {
        order.shuffle(rng);
        let mut chosen: Vec<usize> = Vec::with_capacity(k);
        for &c in &order {
            if chosen.len() == k {
                break;
            }
            if chosen.iter().all(|&a| topo.hops(a, c) >= min_spacing) {
                chosen.push(c);
            }
        }
        if chosen.len() == k {
            chosen.sort_unstable();
            return Ok(chosen);
        }
    }
    Err(Error::invalid(format!(
        "could not place {k} attackers {min_spacing} hops apart on a {}x{} grid",
        topo.rows, topo.cols
    )))
}

/// Cost multiplier of one injected packet at every node (per attacker).
fn load_profile(topo: &Topology, attacker: usize, decay: f64) -> Vec<(usize, f64)> {
    let mut load: BTreeMap<usize, f64> = BTreeMap::new();
    *load.entry(attacker).or_default() += 1.0;
    for nb in topo.neighbors(attacker) {
        *load.entry(nb).or_default() += 1.0;
        let mut share = 1.0;
        for hop in topo.route_to_controller(nb) {
            share *= decay;
            *load.entry(hop).or_default() += share;
        }
    }
    load.into_iter().collect()
}

/// Expected post-start increase of every node's transmit time.
pub fn expected_shift(topo: &Topology, scenario: &AttackScenario) -> Vec<f64> {
    let t = &scenario.traffic;
    let mut out = vec![0.0; topo.len()];
    for &a in &scenario.attackers {
        for (node, w) in load_profile(topo, a, t.hop_decay) {
            out[node] += w * t.injection_rate * t.packet_ticks;
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct NodeTrace {
    pub series: TimeSeries,
    /// `(period, sender)` for every injected packet this node received.
    pub sender_log: Vec<(usize, usize)>,
}

pub fn generate_traces(topo: &Topology, scenario: &AttackScenario, rng: &mut impl Rng) -> Result<Vec<NodeTrace>> {
    scenario.validate(topo)?;
    let t = &scenario.traffic;
    let n = topo.len();
    let horizon = scenario.horizon;
    let mut values = vec![vec![0.0; horizon]; n];
    let stationary_sd = t.noise_sigma / (1.0 - t.ar_coef * t.ar_coef).sqrt();
    for v in values.iter_mut() {
        let mut dev = stationary_sd * rng.sample::<f64, _>(StandardNormal);
        for x in v.iter_mut() {
            *x = t.baseline_mean + dev;
            dev = t.ar_coef * dev + t.noise_sigma * rng.sample::<f64, _>(StandardNormal);
        }
    }
    let mut logs = vec![Vec::new(); n];
    let profiles: Vec<(usize, Vec<(usize, f64)>, Vec<usize>)> = scenario
        .attackers
        .iter()
        .map(|&a| (a, load_profile(topo, a, t.hop_decay), topo.neighbors(a)))
        .collect();
    let poisson = if t.injection_rate > 0.0 {
        Some(Poisson::new(t.injection_rate).map_err(|e| Error::invalid(e.to_string()))?)
    } else {
        None
    };
    for period in scenario.start..=horizon {
        for (a, profile, nbs) in &profiles {
            let packets = poisson.as_ref().map_or(0.0, |p| p.sample(rng));
            if packets == 0.0 {
                continue;
            }
            for &(node, w) in profile {
                values[node][period - 1] += w * packets * t.packet_ticks;
            }
            for &nb in nbs {
                logs[nb].extend(std::iter::repeat_n((period, *a), packets as usize));
            }
        }
    }
    values
        .into_iter()
        .zip(logs)
        .map(|(v, sender_log)| {
            Ok(NodeTrace {
                series: TimeSeries::univariate(&v)?,
                sender_log,
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DetectorConfig {
    pub m: usize,
    pub retrain_block: usize,
    pub gamma: f64,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        Self {
            m: 200,
            retrain_block: 50,
            gamma: 0.0,
        }
    }
}

/// Runs the standard detector block by block, retraining on the whole
/// prefix after every quiet block. Returns the 1-based alarm period.
pub fn detect_series(series: &TimeSeries, cfg: &DetectorConfig, critval: &CritVal) -> Result<Option<usize>> {
    let n = series.len();
    if n <= cfg.m {
        return Err(Error::TooShort {
            needed: cfg.m + 1,
            got: n,
        });
    }
    if cfg.retrain_block == 0 {
        return Err(Error::invalid("retrain block must be >= 1"));
    }
    if critval.request.kind != CritValKind::OnlineStandard {
        return Err(Error::invalid("node detectors use standard critical values"));
    }
    let mut m = cfg.m;
    while m < n {
        let prefix = series.segment(1, m)?;
        let mut state = online::train(&prefix, std::sync::Arc::new(StandardKernel), cfg.gamma, *critval)?;
        let end = (m + cfg.retrain_block).min(n);
        let stream = (m..end).map(|i| series.row(i));
        let (verdict, used) = state.run_window(stream, None)?;
        if verdict.alarm {
            return Ok(Some(m + used));
        }
        m = end;
    }
    Ok(None)
}

pub fn detect_per_node(traces: &[NodeTrace], cfg: &DetectorConfig, critval: &CritVal) -> Result<Vec<Option<usize>>> {
    traces.iter().map(|t| detect_series(&t.series, cfg, critval)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClusterDetection {
    pub alarms: Vec<Option<usize>>,
    /// Sample messages sent by members to their heads.
    pub overhead_messages: u64,
}

/// One detector per cluster on the per-period sum of its members.
pub fn detect_clustered(
    traces: &[NodeTrace],
    topo: &Topology,
    cfg: &DetectorConfig,
    critval: &CritVal,
) -> Result<ClusterDetection> {
    if traces.len() != topo.len() || topo.clusters.len() != topo.len() {
        return Err(Error::invalid("cluster assignment must cover every node"));
    }
    let horizon = traces[0].series.len();
    let mut alarms = Vec::with_capacity(topo.n_clusters());
    let mut overhead = 0u64;
    for (cl, &head) in topo.heads.iter().enumerate() {
        let members = topo.members(cl);
        let sum: Vec<f64> = (0..horizon)
            .map(|i| members.iter().map(|&m| traces[m].series.row(i)[0]).sum())
            .collect();
        alarms.push(detect_series(&TimeSeries::univariate(&sum)?, cfg, critval)?);
        overhead += members.iter().filter(|&&m| m != head).count() as u64 * horizon as u64;
    }
    Ok(ClusterDetection {
        alarms,
        overhead_messages: overhead,
    })
}

/// Mode of the last `window` senders logged up to `until`; ties go to the
/// lowest id.
pub fn suspect(log: &[(usize, usize)], until: usize, window: usize) -> Option<usize> {
    let upto = log.partition_point(|&(t, _)| t <= until);
    let recent = &log[upto.saturating_sub(window)..upto];
    let mut counts: BTreeMap<usize, usize> = BTreeMap::new();
    for &(_, s) in recent {
        *counts.entry(s).or_default() += 1;
    }
    // BTreeMap iterates ids in ascending order, so `max_by_key` keeping the
    // first maximum needs reversed iteration.
    counts
        .into_iter()
        .rev()
        .max_by_key(|&(_, c)| c)
        .map(|(s, _)| s)
}

pub const SUSPECT_WINDOW: usize = 10;

/// Central tally: a suspect accused by all of its neighbours is an attacker.
pub fn identify_attackers(traces: &[NodeTrace], alarms: &[Option<usize>], topo: &Topology) -> BTreeSet<usize> {
    let mut accusations: BTreeMap<usize, usize> = BTreeMap::new();
    for (node, alarm) in alarms.iter().enumerate() {
        if let Some(t) = alarm {
            if let Some(s) = suspect(&traces[node].sender_log, *t, SUSPECT_WINDOW) {
                *accusations.entry(s).or_default() += 1;
            }
        }
    }
    accusations
        .into_iter()
        .filter(|&(s, c)| c == topo.neighbors(s).len())
        .map(|(s, _)| s)
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum DetectionMode {
    PerNode,
    Cluster,
}

impl std::str::FromStr for DetectionMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "per-node" => Ok(DetectionMode::PerNode),
            "cluster" => Ok(DetectionMode::Cluster),
            _ => Err(Error::UnknownStrategy {
                what: "detection mode",
                name: s.into(),
                available: "per-node, cluster".into(),
            }),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DetectionReport {
    pub attackers: Vec<usize>,
    pub node_alarms: Vec<Option<usize>>,
    pub cluster_alarms: Option<Vec<Option<usize>>>,
    pub identified: BTreeSet<usize>,
    pub false_positives: BTreeSet<usize>,
    pub overhead_messages: u64,
}

/// One replication: place attackers, generate traces, detect, identify.
pub fn run_replication(
    topo: &Topology,
    spec: &ScenarioSpec,
    cfg: &DetectorConfig,
    critval: &CritVal,
    mode: DetectionMode,
    seed: u64,
    rep: u64,
) -> Result<DetectionReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(rep);
    let attackers = place_attackers(topo, spec.n_attackers, spec.min_spacing, &mut rng)?;
    let scenario = AttackScenario {
        attackers,
        start: spec.start,
        horizon: spec.horizon,
        traffic: spec.traffic,
    };
    let traces = generate_traces(topo, &scenario, &mut rng)?;
    match mode {
        DetectionMode::PerNode => {
            let node_alarms = detect_per_node(&traces, cfg, critval)?;
            let named = identify_attackers(&traces, &node_alarms, topo);
            let truth: BTreeSet<usize> = scenario.attackers.iter().copied().collect();
            Ok(DetectionReport {
                identified: named.intersection(&truth).copied().collect(),
                false_positives: named.difference(&truth).copied().collect(),
                attackers: scenario.attackers,
                node_alarms,
                cluster_alarms: None,
                overhead_messages: 0,
            })
        }
        DetectionMode::Cluster => {
            let cd = detect_clustered(&traces, topo, cfg, critval)?;
            let node_alarms = topo.clusters.iter().map(|&c| cd.alarms[c]).collect();
            Ok(DetectionReport {
                attackers: scenario.attackers,
                node_alarms,
                cluster_alarms: Some(cd.alarms),
                identified: BTreeSet::new(),
                false_positives: BTreeSet::new(),
                overhead_messages: cd.overhead_messages,
            })
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HopClass {
    pub hops: usize,
    pub nodes: usize,
    pub detection_prob: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimulationSummary {
    pub mode: DetectionMode,
    pub replications: usize,
    /// Alarm fraction per node (the node's cluster alarm in cluster mode).
    pub node_detection_prob: Vec<f64>,
    pub cluster_detection_prob: Option<Vec<f64>>,
    /// Mean alarm fraction over nodes adjacent to an attacker.
    pub adjacent_detection_prob: f64,
    /// Alarm fraction of clusters holding at least one attacker.
    pub attacker_cluster_detection_prob: Option<f64>,
    /// Replications naming every attacker and nobody else.
    pub exact_identification_rate: f64,
    pub zero_false_positive_rate: f64,
    pub mean_identified: f64,
    pub mean_overhead_messages: f64,
    /// Alarm fraction by hop distance to the nearest attacker.
    pub by_hops: Vec<HopClass>,
}

/// Runs `reps` replications in parallel; replication `r` draws from stream
/// `r` of `seed`, so results do not depend on the thread count.
pub fn simulate(
    topo: &Topology,
    spec: &ScenarioSpec,
    cfg: &DetectorConfig,
    critval: &CritVal,
    mode: DetectionMode,
    seed: u64,
    reps: usize,
) -> Result<(SimulationSummary, Vec<DetectionReport>)> {
    if reps == 0 {
        return Err(Error::invalid("need at least one replication"));
    }
    let reports: Vec<DetectionReport> = (0..reps as u64)
        .into_par_iter()
        .map(|r| run_replication(topo, spec, cfg, critval, mode, seed, r))
        .collect::<Result<_>>()?;
    Ok((summarize(topo, mode, &reports), reports))
}

pub fn summarize(topo: &Topology, mode: DetectionMode, reports: &[DetectionReport]) -> SimulationSummary {
    let n = topo.len();
    let reps = reports.len() as f64;
    let mut node_hits = vec![0usize; n];
    let (mut adj_hits, mut adj_total) = (0usize, 0usize);
    let mut hop_counts: BTreeMap<usize, (usize, usize)> = BTreeMap::new();
    let mut cluster_hits = vec![0usize; topo.n_clusters()];
    let (mut att_cl_hits, mut att_cl_total) = (0usize, 0usize);
    let (mut exact, mut zero_fp, mut named, mut overhead) = (0usize, 0usize, 0usize, 0u64);
    for rep in reports {
        let attackers: BTreeSet<usize> = rep.attackers.iter().copied().collect();
        let adjacent: BTreeSet<usize> = rep
            .attackers
            .iter()
            .flat_map(|&a| topo.neighbors(a))
            .filter(|nb| !attackers.contains(nb))
            .collect();
        for (node, alarm) in rep.node_alarms.iter().enumerate() {
            let hit = alarm.is_some() as usize;
            node_hits[node] += hit;
            if adjacent.contains(&node) {
                adj_hits += hit;
                adj_total += 1;
            }
            if let Some(h) = rep.attackers.iter().map(|&a| topo.hops(a, node)).min() {
                let e = hop_counts.entry(h).or_default();
                e.0 += hit;
                e.1 += 1;
            }
        }
        if let Some(cl) = &rep.cluster_alarms {
            let holding: BTreeSet<usize> = rep.attackers.iter().map(|&a| topo.clusters[a]).collect();
            for (c, alarm) in cl.iter().enumerate() {
                cluster_hits[c] += alarm.is_some() as usize;
                if holding.contains(&c) {
                    att_cl_hits += alarm.is_some() as usize;
                    att_cl_total += 1;
                }
            }
        }
        if rep.false_positives.is_empty() {
            zero_fp += 1;
            if rep.identified == attackers {
                exact += 1;
            }
        }
        named += rep.identified.len();
        overhead += rep.overhead_messages;
    }
    let frac = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    let clustered = mode == DetectionMode::Cluster;
    SimulationSummary {
        mode,
        replications: reports.len(),
        node_detection_prob: node_hits.iter().map(|&h| h as f64 / reps).collect(),
        cluster_detection_prob: clustered.then(|| cluster_hits.iter().map(|&h| h as f64 / reps).collect()),
        adjacent_detection_prob: frac(adj_hits, adj_total),
        attacker_cluster_detection_prob: clustered.then(|| frac(att_cl_hits, att_cl_total)),
        exact_identification_rate: exact as f64 / reps,
        zero_false_positive_rate: zero_fp as f64 / reps,
        mean_identified: named as f64 / reps,
        mean_overhead_messages: overhead as f64 / reps,
        by_hops: hop_counts
            .into_iter()
            .map(|(hops, (hit, total))| HopClass {
                hops,
                nodes: total,
                detection_prob: frac(hit, total),
            })
            .collect(),
    }
}

/// Detection probabilities laid out as the `rows × cols` grid, one CSV line
/// per grid row.
pub fn write_heatmap<W: Write>(topo: &Topology, probs: &[f64], out: W) -> Result<()> {
    if probs.len() != topo.len() {
        return Err(Error::DimensionMismatch {
            expected: topo.len(),
            got: probs.len(),
        });
    }
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
    for r in 0..topo.rows {
        let row: Vec<String> = (0..topo.cols).map(|c| probs[topo.id(r, c)].to_string()).collect();
        w.write_record(&row)?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::critvals::CritValRequest;

    fn critval() -> CritVal {
        CritVal {
            value: 2.2414,
            request: CritValRequest::online_standard(1, 0.0, 0.05),
            mc_stderr: 0.0,
        }
    }

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    #[test]
    fn grid_neighbours_and_routes() {
        let t = Topology::grid(4, 5).unwrap();
        assert_eq!(t.neighbors(0), vec![1, 5]);
        assert_eq!(t.neighbors(7), vec![2, 6, 8, 12]);
        for a in 0..t.len() {
            for b in t.neighbors(a) {
                assert!(t.neighbors(b).contains(&a));
            }
            let route = t.route_to_controller(a);
            assert_eq!(route.len(), t.hops(a, 0));
            if a != 0 {
                assert_eq!(*route.last().unwrap(), 0);
            }
        }
    }

    #[test]
    fn block_clusters() {
        let t = Topology::grid(10, 10).unwrap().with_block_clusters(2, 2).unwrap();
        assert_eq!(t.n_clusters(), 25);
        assert_eq!(t.heads[0], 0);
        assert_eq!(t.members(0), vec![0, 1, 10, 11]);
        assert_eq!(t.heads[1], 2);
        let odd = Topology::grid(3, 3).unwrap().with_block_clusters(2, 2).unwrap();
        assert_eq!(odd.n_clusters(), 4);
        assert_eq!(odd.members(3), vec![8]);
    }

    #[test]
    fn attackers_keep_their_distance() {
        let t = Topology::grid(10, 10).unwrap();
        for s in 0..20 {
            let a = place_attackers(&t, 10, 3, &mut rng(s)).unwrap();
            assert_eq!(a.len(), 10);
            assert!(!a.contains(&0));
            for (i, x) in a.iter().enumerate() {
                for y in &a[i + 1..] {
                    assert!(t.hops(*x, *y) >= 3);
                }
            }
        }
        assert!(place_attackers(&Topology::grid(3, 3).unwrap(), 5, 3, &mut rng(0)).is_err());
    }

    #[test]
    fn no_attackers_means_no_shift_and_empty_logs() {
        let t = Topology::grid(5, 5).unwrap();
        let sc = AttackScenario {
            attackers: vec![],
            start: 100,
            horizon: 300,
            traffic: TrafficModel::default(),
        };
        assert!(expected_shift(&t, &sc).iter().all(|v| *v == 0.0));
        let traces = generate_traces(&t, &sc, &mut rng(1)).unwrap();
        assert!(traces.iter().all(|tr| tr.sender_log.is_empty()));
    }

    #[test]
    fn same_seed_same_traces() {
        let t = Topology::grid(4, 4).unwrap();
        let sc = AttackScenario {
            attackers: vec![10],
            start: 50,
            horizon: 120,
            traffic: TrafficModel::default(),
        };
        let a = generate_traces(&t, &sc, &mut rng(9)).unwrap();
        let b = generate_traces(&t, &sc, &mut rng(9)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn neighbour_mean_rises_by_injection_cost() {
        let t = Topology::grid(10, 10).unwrap();
        let attacker = t.id(5, 5);
        let sc = AttackScenario {
            attackers: vec![attacker],
            start: 10_001,
            horizon: 20_000,
            traffic: TrafficModel::default(),
        };
        let shift = expected_shift(&t, &sc);
        let far_side = t.id(6, 5);
        let rate = sc.traffic.injection_rate * sc.traffic.packet_ticks;
        assert!((shift[far_side] - rate).abs() < 1e-12);
        let traces = generate_traces(&t, &sc, &mut rng(5)).unwrap();
        for nb in t.neighbors(attacker) {
            let xs = traces[nb].series.column(0);
            let pre = xs[..10_000].iter().sum::<f64>() / 10_000.0;
            let post = xs[10_000..].iter().sum::<f64>() / 10_000.0;
            assert!(((post - pre) - shift[nb]).abs() <= 0.05 * shift[nb], "{nb}: {}", post - pre);
            assert!(traces[nb].sender_log.iter().all(|&(_, s)| s == attacker));
        }
        let d = traces[far_side].series.column(0);
        let diff = d[10_000..].iter().sum::<f64>() / 1e4 - d[..10_000].iter().sum::<f64>() / 1e4;
        assert!((diff - rate).abs() <= 0.05 * rate);
    }

    #[test]
    fn suspect_is_recent_mode_with_low_id_ties() {
        let log = vec![(1, 7), (2, 7), (3, 7), (4, 3), (5, 3), (6, 9), (7, 9)];
        assert_eq!(suspect(&log, 7, 10), Some(7));
        assert_eq!(suspect(&log, 7, 4), Some(3));
        assert_eq!(suspect(&log, 3, 10), Some(7));
        assert_eq!(suspect(&log, 0, 10), None);
    }

    #[test]
    fn micro_scenario_identification() {
        let t = Topology::grid(5, 5).unwrap();
        let attacker = t.id(2, 2);
        let mut traces: Vec<NodeTrace> = (0..t.len())
            .map(|_| NodeTrace {
                series: TimeSeries::univariate(&[0.0; 4]).unwrap(),
                sender_log: vec![],
            })
            .collect();
        let mut alarms = vec![None; t.len()];
        for nb in t.neighbors(attacker) {
            traces[nb].sender_log = vec![(1, attacker), (2, attacker)];
            alarms[nb] = Some(3);
        }
        assert_eq!(identify_attackers(&traces, &alarms, &t), BTreeSet::from([attacker]));
        alarms[t.neighbors(attacker)[0]] = None;
        assert!(identify_attackers(&traces, &alarms, &t).is_empty());
        assert!(identify_attackers(&traces, &vec![None; t.len()], &t).is_empty());
    }

    #[test]
    fn singleton_clusters_match_per_node() {
        let t = Topology::grid(4, 4).unwrap();
        let sc = AttackScenario {
            attackers: vec![5],
            start: 250,
            horizon: 400,
            traffic: TrafficModel::default(),
        };
        let traces = generate_traces(&t, &sc, &mut rng(2)).unwrap();
        let cfg = DetectorConfig::default();
        let per_node = detect_per_node(&traces, &cfg, &critval()).unwrap();
        let cl = detect_clustered(&traces, &t, &cfg, &critval()).unwrap();
        assert_eq!(cl.alarms, per_node);
        assert_eq!(cl.overhead_messages, 0);
        let blocks = t.clone().with_block_clusters(2, 2).unwrap();
        let cl = detect_clustered(&traces, &blocks, &cfg, &critval()).unwrap();
        assert_eq!(cl.overhead_messages, 4 * 3 * 400);
    }

    #[test]
    fn detector_needs_more_than_m_samples() {
        let s = TimeSeries::univariate(&[1.0; 200]).unwrap();
        assert!(detect_series(&s, &DetectorConfig::default(), &critval()).is_err());
    }

    #[test]
    fn obvious_attack_is_caught_after_start() {
        let mut xs = vec![0.0; 400];
        for (i, x) in xs.iter_mut().enumerate() {
            *x = if i % 2 == 0 { 1.0 } else { -1.0 };
        }
        xs[300..].iter_mut().for_each(|x| *x += 10.0);
        let s = TimeSeries::univariate(&xs).unwrap();
        let at = detect_series(&s, &DetectorConfig::default(), &critval()).unwrap().unwrap();
        assert!(at > 300 && at <= 305, "{at}");
    }

    #[test]
    fn heatmap_layout() {
        let t = Topology::grid(2, 3).unwrap();
        let mut buf = Vec::new();
        write_heatmap(&t, &[0.0, 0.5, 1.0, 0.25, 0.0, 1.0], &mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "0,0.5,1\n0.25,0,1\n");
    }

    #[test]
    fn replications_independent_of_threads() {
        let t = Topology::grid(6, 6).unwrap();
        let spec = ScenarioSpec {
            n_attackers: 2,
            ..Default::default()
        };
        let run = |threads| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap()
                .install(|| simulate(&t, &spec, &DetectorConfig::default(), &critval(), DetectionMode::PerNode, 4, 6).unwrap())
        };
        assert_eq!(run(1), run(3));
    }
}
