//! Monte-Carlo critical values for the offline and sequential CUSUM tests.
//!
//! Each asymptotic null distribution is a functional of Brownian paths. The
//! functionals implement [`LimitFunctional`] and live in a
//! [`FunctionalRegistry`] keyed by [`CritValKind`]. Replication `r` always
//! draws from ChaCha stream `r` of the request seed, so a request produces
//! the same quantile at any rayon parallelism.
//!
//! For univariate paths the offline and standard functionals refine the grid
//! maximum with the exact conditional law of a Brownian bridge's extreme
//! between adjacent nodes. Without it a 10⁴-step grid biases the offline
//! 95% quantile low by about 0.016.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::io::{Read, Write};
use std::path::Path;
use std::sync::{Arc, Mutex};

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;

pub const DEFAULT_GRID_STEPS: usize = 10_000;
pub const DEFAULT_REPLICATIONS: usize = 100_000;
pub const DEFAULT_HORIZON: f64 = 10.0;
pub const MIN_GRID_STEPS: usize = 100;
pub const MIN_REPLICATIONS: usize = 1_000;

pub const TABLE_ALPHAS: [f64; 3] = [0.01, 0.05, 0.10];
pub const TABLE_GAMMAS: [f64; 4] = [0.0, 0.15, 0.25, 0.45];
pub const TABLE_DIMS: [usize; 3] = [1, 2, 3];

/// Skip an inter-node extreme draw when it exceeds the running maximum with
/// probability below this.
const EXCURSION_SKIP_PROB: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum CritValKind {
    OfflineMax,
    OnlineStandard,
    OnlineRatio,
}

impl CritValKind {
    pub const ALL: [CritValKind; 3] = [
        CritValKind::OfflineMax,
        CritValKind::OnlineStandard,
        CritValKind::OnlineRatio,
    ];

    pub fn short_name(self) -> &'static str {
        match self {
            CritValKind::OfflineMax => "offline",
            CritValKind::OnlineStandard => "standard",
            CritValKind::OnlineRatio => "ratio",
        }
    }

    pub fn is_online(self) -> bool {
        !matches!(self, CritValKind::OfflineMax)
    }
}

impl fmt::Display for CritValKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.short_name())
    }
}

impl std::str::FromStr for CritValKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "offline" | "OfflineMax" => Ok(CritValKind::OfflineMax),
            "standard" | "OnlineStandard" => Ok(CritValKind::OnlineStandard),
            "ratio" | "OnlineRatio" => Ok(CritValKind::OnlineRatio),
            other => Err(Error::UnknownStrategy {
                what: "critical value kind",
                name: other.to_string(),
                available: "offline, standard, ratio".into(),
            }),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CritValRequest {
    pub kind: CritValKind,
    pub alpha: f64,
    pub d: usize,
    pub gamma: f64,
    /// Grid steps per unit of time.
    pub grid_steps: usize,
    pub replications: usize,
    /// Monitoring horizon `T` of the ratio functional; `None` for other kinds.
    pub horizon: Option<f64>,
    pub seed: u64,
}

impl CritValRequest {
    pub fn new(kind: CritValKind, d: usize, gamma: f64, alpha: f64) -> Self {
        Self {
            kind,
            alpha,
            d,
            gamma: if kind.is_online() { gamma } else { 0.0 },
            grid_steps: DEFAULT_GRID_STEPS,
            replications: DEFAULT_REPLICATIONS,
            horizon: (kind == CritValKind::OnlineRatio).then_some(DEFAULT_HORIZON),
            seed: 0,
        }
    }

    pub fn offline(d: usize, alpha: f64) -> Self {
        Self::new(CritValKind::OfflineMax, d, 0.0, alpha)
    }

    pub fn online_standard(d: usize, gamma: f64, alpha: f64) -> Self {
        Self::new(CritValKind::OnlineStandard, d, gamma, alpha)
    }

    pub fn online_ratio(d: usize, gamma: f64, alpha: f64) -> Self {
        Self::new(CritValKind::OnlineRatio, d, gamma, alpha)
    }

    pub fn with_budget(mut self, grid_steps: usize, replications: usize) -> Self {
        self.grid_steps = grid_steps;
        self.replications = replications;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_horizon(mut self, horizon: f64) -> Self {
        self.horizon = Some(horizon);
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::invalid(format!("alpha must lie in (0, 1), got {}", self.alpha)));
        }
        if self.d == 0 {
            return Err(Error::invalid("dimension must be >= 1"));
        }
        if !(0.0..0.5).contains(&self.gamma) {
            return Err(Error::invalid(format!("gamma must lie in [0, 0.5), got {}", self.gamma)));
        }
        if self.grid_steps < MIN_GRID_STEPS {
            return Err(Error::invalid(format!("grid_steps must be >= {MIN_GRID_STEPS}")));
        }
        if self.replications < MIN_REPLICATIONS {
            return Err(Error::invalid(format!("replications must be >= {MIN_REPLICATIONS}")));
        }
        if self.kind == CritValKind::OnlineRatio {
            match self.horizon {
                Some(t) if t.is_finite() && t > 0.0 => {}
                _ => return Err(Error::invalid("ratio critical values need a positive horizon")),
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CritVal {
    pub value: f64,
    pub request: CritValRequest,
    pub mc_stderr: f64,
}

/// Reusable per-thread buffers.
#[derive(Default)]
pub struct Scratch {
    path: Vec<f64>,
    acc: Vec<f64>,
    paths: Vec<Vec<f64>>,
}

/// A path functional whose quantiles are the critical values of one test.
pub trait LimitFunctional: Send + Sync {
    fn kind(&self) -> CritValKind;

    /// Draws one replication of the functional.
    fn sample(&self, req: &CritValRequest, rng: &mut ChaCha8Rng, scratch: &mut Scratch) -> f64;
}

/// Name-keyed collection of limit functionals.
#[derive(Clone)]
pub struct FunctionalRegistry {
    entries: BTreeMap<CritValKind, Arc<dyn LimitFunctional>>,
}

impl FunctionalRegistry {
    pub fn empty() -> Self {
        Self {
            entries: BTreeMap::new(),
        }
    }

    pub fn register(&mut self, f: Arc<dyn LimitFunctional>) {
        self.entries.insert(f.kind(), f);
    }

    pub fn get(&self, kind: CritValKind) -> Result<&Arc<dyn LimitFunctional>> {
        self.entries.get(&kind).ok_or_else(|| Error::UnknownStrategy {
            what: "limit functional",
            name: kind.to_string(),
            available: self.names().join(", "),
        })
    }

    pub fn names(&self) -> Vec<&'static str> {
        self.entries.keys().map(|k| k.short_name()).collect()
    }
}

impl Default for FunctionalRegistry {
    fn default() -> Self {
        let mut r = Self::empty();
        r.register(Arc::new(BridgeSupSquared));
        r.register(Arc::new(WeightedMotionSup));
        r.register(Arc::new(RatioBridgeSup));
        r
    }
}

/// RNG for replication `rep` under `seed`.
pub fn replication_rng(seed: u64, rep: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(rep);
    rng
}

fn fill_brownian(rng: &mut ChaCha8Rng, steps: usize, dt: f64, out: &mut Vec<f64>) {
    out.clear();
    out.reserve(steps + 1);
    out.push(0.0);
    let sd = dt.sqrt();
    let mut w = 0.0;
    for _ in 0..steps {
        let z: f64 = rng.sample(StandardNormal);
        w += sd * z;
        out.push(w);
    }
}

/// Standard Brownian motion on `[0, 1]` sampled at `grid_steps + 1` nodes.
pub fn simulate_brownian_motion(grid_steps: usize, seed: u64) -> Vec<f64> {
    assert!(grid_steps >= 1, "grid_steps must be >= 1");
    let mut rng = replication_rng(seed, 0);
    let mut path = Vec::new();
    fill_brownian(&mut rng, grid_steps, 1.0 / grid_steps as f64, &mut path);
    path
}

/// Exact draw of the maximum of a Brownian bridge from `a` to `b` over an
/// interval of variance `dt`, returned only if it can exceed `record`.
fn bridge_max_above(rng: &mut ChaCha8Rng, a: f64, b: f64, dt: f64, record: f64) -> Option<f64> {
    let p = (-2.0 * (record - a) * (record - b) / dt).exp();
    if p < EXCURSION_SKIP_PROB {
        return None;
    }
    let u: f64 = 1.0 - rng.random::<f64>();
    let diff = b - a;
    Some(0.5 * (a + b + (diff * diff - 2.0 * dt * u.ln()).sqrt()))
}

/// Continuous-time `sup |x(t)| / scale(t)` of a path interpolated by Brownian
/// bridges between nodes, starting from interval `first`.
fn refined_abs_sup(
    rng: &mut ChaCha8Rng,
    path: &[f64],
    dt: f64,
    first: usize,
    scale: impl Fn(usize) -> f64,
) -> f64 {
    let mut record = 0.0f64;
    for (i, v) in path.iter().enumerate().skip(first.max(1).min(path.len())) {
        record = record.max(v.abs() / scale(i));
    }
    if first == 0 {
        record = record.max(path[0].abs());
    }
    for i in first..path.len() - 1 {
        let s = scale(i.max(1));
        let h = record * s;
        let (a, b) = (path[i], path[i + 1]);
        if let Some(m) = bridge_max_above(rng, a, b, dt, h) {
            record = record.max(m / s);
        }
        let h = record * s;
        if let Some(m) = bridge_max_above(rng, -a, -b, dt, h) {
            record = record.max(m / s);
        }
    }
    record
}

/// `sup_{0≤t≤1} Σ_j B_j(t)²` for independent Brownian bridges.
pub struct BridgeSupSquared;

impl LimitFunctional for BridgeSupSquared {
    fn kind(&self) -> CritValKind {
        CritValKind::OfflineMax
    }

    fn sample(&self, req: &CritValRequest, rng: &mut ChaCha8Rng, s: &mut Scratch) -> f64 {
        let n = req.grid_steps;
        let dt = 1.0 / n as f64;
        s.acc.clear();
        s.acc.resize(n + 1, 0.0);
        for _ in 0..req.d {
            fill_brownian(rng, n, dt, &mut s.path);
            let w1 = s.path[n];
            for (i, w) in s.path.iter_mut().enumerate() {
                *w -= i as f64 * dt * w1;
            }
            if req.d == 1 {
                let sup = refined_abs_sup(rng, &s.path, dt, 0, |_| 1.0);
                return sup * sup;
            }
            for (a, b) in s.acc.iter_mut().zip(&s.path) {
                *a += b * b;
            }
        }
        s.acc.iter().copied().fold(0.0, f64::max)
    }
}

/// `sup_{0<t≤1} ‖W(t)‖₁ / t^γ`; the grid sup starts at `t = 1/grid_steps`.
pub struct WeightedMotionSup;

impl LimitFunctional for WeightedMotionSup {
    fn kind(&self) -> CritValKind {
        CritValKind::OnlineStandard
    }

    fn sample(&self, req: &CritValRequest, rng: &mut ChaCha8Rng, s: &mut Scratch) -> f64 {
        let n = req.grid_steps;
        let dt = 1.0 / n as f64;
        let gamma = req.gamma;
        let weight = |i: usize| if gamma == 0.0 { 1.0 } else { (i as f64 * dt).powf(gamma) };
        if req.d == 1 {
            fill_brownian(rng, n, dt, &mut s.path);
            let first = if gamma == 0.0 { 0 } else { 1 };
            return refined_abs_sup(rng, &s.path, dt, first, weight);
        }
        s.acc.clear();
        s.acc.resize(n + 1, 0.0);
        for _ in 0..req.d {
            fill_brownian(rng, n, dt, &mut s.path);
            for (a, w) in s.acc.iter_mut().zip(&s.path) {
                *a += w.abs();
            }
        }
        (1..=n).map(|i| s.acc[i] / weight(i)).fold(0.0, f64::max)
    }
}

/// `sup_{0<t≤T} B(1+t)ᵀ (∫₀¹ B Bᵀ)⁻¹ B(1+t) / η²(t)` with
/// `η(t) = (1+t) (t/(1+t))^γ` and `B(s) = W(s) − s W(1)` extended past 1.
pub struct RatioBridgeSup;

impl LimitFunctional for RatioBridgeSup {
    fn kind(&self) -> CritValKind {
        CritValKind::OnlineRatio
    }

    fn sample(&self, req: &CritValRequest, rng: &mut ChaCha8Rng, s: &mut Scratch) -> f64 {
        let n = req.grid_steps;
        let dt = 1.0 / n as f64;
        let horizon = req.horizon.unwrap_or(DEFAULT_HORIZON);
        let total = n + (horizon * n as f64).round() as usize;
        let d = req.d;
        s.paths.resize_with(d, Vec::new);
        for p in s.paths.iter_mut() {
            fill_brownian(rng, total, dt, p);
            let w1 = p[n];
            for (i, w) in p.iter_mut().enumerate() {
                *w -= i as f64 * dt * w1;
            }
        }
        // Trapezoid rule on [0, 1]; both end nodes are exactly zero.
        let mut integral = DMatrix::<f64>::zeros(d, d);
        for i in 1..n {
            for a in 0..d {
                for b in a..d {
                    integral[(a, b)] += s.paths[a][i] * s.paths[b][i] * dt;
                }
            }
        }
        for a in 0..d {
            for b in 0..a {
                integral[(a, b)] = integral[(b, a)];
            }
        }
        let (inv, _) = linalg::regularized_inverse(&integral);
        let mut v = vec![0.0; d];
        let mut sup = 0.0f64;
        for i in n + 1..=total {
            let t = (i - n) as f64 * dt;
            for (vj, p) in v.iter_mut().zip(&s.paths) {
                *vj = p[i];
            }
            let eta = (1.0 + t) * (t / (1.0 + t)).powf(req.gamma);
            sup = sup.max(linalg::quad_form(&inv, &v) / (eta * eta));
        }
        sup
    }
}

/// All replications of the functional, in replication order.
pub fn simulate_functional(registry: &FunctionalRegistry, req: &CritValRequest) -> Result<Vec<f64>> {
    req.validate()?;
    let f = registry.get(req.kind)?.clone();
    let samples = (0..req.replications as u64)
        .into_par_iter()
        .map_init(Scratch::default, |scratch, rep| {
            let mut rng = replication_rng(req.seed, rep);
            f.sample(req, &mut rng, scratch)
        })
        .collect();
    Ok(samples)
}

/// Empirical `p`-quantile `x_(⌈pR⌉)` of sorted data.
pub fn empirical_quantile(sorted: &[f64], p: f64) -> f64 {
    let r = sorted.len();
    let idx = ((p * r as f64).ceil() as usize).clamp(1, r);
    sorted[idx - 1]
}

/// Distribution-free standard error of the `p`-quantile from the order
/// statistics one binomial standard deviation either side.
pub fn quantile_stderr(sorted: &[f64], p: f64) -> f64 {
    let r = sorted.len() as f64;
    let spread = (r * p * (1.0 - p)).sqrt();
    let lo = ((r * p - spread).floor() as usize).clamp(1, sorted.len());
    let hi = ((r * p + spread).ceil() as usize).clamp(1, sorted.len());
    0.5 * (sorted[hi - 1] - sorted[lo - 1])
}

/// Critical values for several significance levels from one simulation.
pub fn critvals_for_alphas(
    registry: &FunctionalRegistry,
    base: &CritValRequest,
    alphas: &[f64],
) -> Result<Vec<CritVal>> {
    let mut draws = simulate_functional(registry, base)?;
    draws.sort_by(f64::total_cmp);
    alphas
        .iter()
        .map(|&alpha| {
            let request = CritValRequest { alpha, ..*base };
            request.validate()?;
            Ok(CritVal {
                value: empirical_quantile(&draws, 1.0 - alpha),
                request,
                mc_stderr: quantile_stderr(&draws, 1.0 - alpha),
            })
        })
        .collect()
}

pub fn compute_critval(req: &CritValRequest) -> Result<CritVal> {
    let mut v = critvals_for_alphas(&FunctionalRegistry::default(), req, &[req.alpha])?;
    Ok(v.remove(0))
}

fn expect_kind(req: &CritValRequest, kind: CritValKind) -> Result<()> {
    if req.kind != kind {
        return Err(Error::invalid(format!("expected a {kind} request, got {}", req.kind)));
    }
    Ok(())
}

pub fn offline_critval(req: &CritValRequest) -> Result<CritVal> {
    expect_kind(req, CritValKind::OfflineMax)?;
    compute_critval(req)
}

pub fn online_critval_standard(req: &CritValRequest) -> Result<CritVal> {
    expect_kind(req, CritValKind::OnlineStandard)?;
    compute_critval(req)
}

pub fn online_critval_ratio(req: &CritValRequest) -> Result<CritVal> {
    expect_kind(req, CritValKind::OnlineRatio)?;
    compute_critval(req)
}

/// Where tests obtain their critical values.
pub trait CritValSource: Send + Sync {
    fn critval(&self, kind: CritValKind, d: usize, gamma: f64, alpha: f64) -> Result<CritVal>;
}

/// Simulates on demand and memoizes per `(kind, d, gamma, alpha)`.
pub struct SimulatedCritVals {
    pub grid_steps: usize,
    pub replications: usize,
    pub horizon: f64,
    pub seed: u64,
    cache: Mutex<HashMap<(CritValKind, usize, u64, u64), CritVal>>,
}

impl SimulatedCritVals {
    pub fn new(grid_steps: usize, replications: usize, seed: u64) -> Self {
        Self {
            grid_steps,
            replications,
            horizon: DEFAULT_HORIZON,
            seed,
            cache: Mutex::new(HashMap::new()),
        }
    }
}

impl Default for SimulatedCritVals {
    fn default() -> Self {
        Self::new(DEFAULT_GRID_STEPS, DEFAULT_REPLICATIONS, 0)
    }
}

impl CritValSource for SimulatedCritVals {
    fn critval(&self, kind: CritValKind, d: usize, gamma: f64, alpha: f64) -> Result<CritVal> {
        let gamma = if kind.is_online() { gamma } else { 0.0 };
        let key = (kind, d, gamma.to_bits(), alpha.to_bits());
        if let Some(cv) = self.cache.lock().unwrap().get(&key) {
            return Ok(*cv);
        }
        let mut req = CritValRequest::new(kind, d, gamma, alpha)
            .with_budget(self.grid_steps, self.replications)
            .with_seed(self.seed);
        if kind == CritValKind::OnlineRatio {
            req = req.with_horizon(self.horizon);
        }
        let cv = compute_critval(&req)?;
        self.cache.lock().unwrap().insert(key, cv);
        Ok(cv)
    }
}

/// A single pinned critical value, answered only for its own key.
#[derive(Debug, Clone, Copy)]
pub struct FixedCritVal(pub CritVal);

impl CritValSource for FixedCritVal {
    fn critval(&self, kind: CritValKind, d: usize, gamma: f64, alpha: f64) -> Result<CritVal> {
        let r = &self.0.request;
        let gamma = if kind.is_online() { gamma } else { 0.0 };
        if r.kind == kind && r.d == d && r.gamma == gamma && r.alpha == alpha {
            Ok(self.0)
        } else {
            Err(Error::NotTabulated(format!("{kind} d={d} gamma={gamma} alpha={alpha}")))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct TableRow {
    kind: CritValKind,
    d: usize,
    gamma: f64,
    alpha: f64,
    grid_steps: usize,
    replications: usize,
    #[serde(rename = "horizon_T")]
    horizon: Option<f64>,
    seed: u64,
    value: f64,
    mc_stderr: f64,
}

impl From<&CritVal> for TableRow {
    fn from(cv: &CritVal) -> Self {
        let r = &cv.request;
        TableRow {
            kind: r.kind,
            d: r.d,
            gamma: r.gamma,
            alpha: r.alpha,
            grid_steps: r.grid_steps,
            replications: r.replications,
            horizon: r.horizon,
            seed: r.seed,
            value: cv.value,
            mc_stderr: cv.mc_stderr,
        }
    }
}

impl From<&TableRow> for CritVal {
    fn from(row: &TableRow) -> Self {
        CritVal {
            value: row.value,
            mc_stderr: row.mc_stderr,
            request: CritValRequest {
                kind: row.kind,
                alpha: row.alpha,
                d: row.d,
                gamma: row.gamma,
                grid_steps: row.grid_steps,
                replications: row.replications,
                horizon: row.horizon,
                seed: row.seed,
            },
        }
    }
}

/// Precomputed critical values with exact-key lookup.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CritValTable {
    entries: Vec<CritVal>,
}

#[derive(Debug, Clone)]
pub struct TableSpec {
    pub kinds: Vec<CritValKind>,
    pub alphas: Vec<f64>,
    pub gammas: Vec<f64>,
    pub dims: Vec<usize>,
    pub grid_steps: usize,
    pub replications: usize,
    pub horizon: f64,
    pub seed: u64,
}

impl Default for TableSpec {
    fn default() -> Self {
        Self {
            kinds: CritValKind::ALL.to_vec(),
            alphas: TABLE_ALPHAS.to_vec(),
            gammas: TABLE_GAMMAS.to_vec(),
            dims: TABLE_DIMS.to_vec(),
            grid_steps: DEFAULT_GRID_STEPS,
            replications: DEFAULT_REPLICATIONS,
            horizon: DEFAULT_HORIZON,
            seed: 0,
        }
    }
}

impl CritValTable {
    /// Simulates every cell. The offline functional does not depend on γ and
    /// is stored once per dimension with γ = 0.
    pub fn build(spec: &TableSpec) -> Result<Self> {
        let registry = FunctionalRegistry::default();
        let mut entries = Vec::new();
        for &kind in &spec.kinds {
            let gammas: &[f64] = if kind.is_online() { &spec.gammas } else { &[0.0] };
            for &d in &spec.dims {
                for &gamma in gammas {
                    let mut base = CritValRequest::new(kind, d, gamma, spec.alphas[0])
                        .with_budget(spec.grid_steps, spec.replications)
                        .with_seed(spec.seed);
                    if kind == CritValKind::OnlineRatio {
                        base = base.with_horizon(spec.horizon);
                    }
                    log::info!("simulating {kind} d={d} gamma={gamma}");
                    entries.extend(critvals_for_alphas(&registry, &base, &spec.alphas)?);
                }
            }
        }
        Ok(Self { entries })
    }

    pub fn from_entries(entries: Vec<CritVal>) -> Self {
        Self { entries }
    }

    pub fn entries(&self) -> &[CritVal] {
        &self.entries
    }

    pub fn lookup(&self, kind: CritValKind, d: usize, gamma: f64, alpha: f64) -> Result<CritVal> {
        let gamma = if kind.is_online() { gamma } else { 0.0 };
        self.entries
            .iter()
            .find(|cv| {
                let r = &cv.request;
                r.kind == kind && r.d == d && r.gamma == gamma && r.alpha == alpha
            })
            .copied()
            .ok_or_else(|| Error::NotTabulated(format!("{kind} d={d} gamma={gamma} alpha={alpha}")))
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        for cv in &self.entries {
            w.serialize(TableRow::from(cv))?;
        }
        w.flush().map_err(|source| Error::Io {
            path: "<table writer>".into(),
            source,
        })?;
        Ok(())
    }

    pub fn read_csv<R: Read>(input: R) -> Result<Self> {
        let mut r = csv::Reader::from_reader(input);
        let entries = r
            .deserialize::<TableRow>()
            .map(|row| row.map(|row| CritVal::from(&row)).map_err(Error::from))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { entries })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let f = std::fs::File::open(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::read_csv(f)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let f = std::fs::File::create(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        self.write_csv(f)
    }
}

impl CritValSource for CritValTable {
    fn critval(&self, kind: CritValKind, d: usize, gamma: f64, alpha: f64) -> Result<CritVal> {
        self.lookup(kind, d, gamma, alpha)
    }
}
