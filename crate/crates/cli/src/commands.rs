use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;

use anyhow::{Context, Result};
use serde::Serialize;
use serde_json::{json, Value};

use cpwatch_core::critvals::{
    self, CritVal, CritValKind, CritValRequest, CritValSource, CritValTable, SimulatedCritVals,
};
use cpwatch_core::monitor::{Action, ChangeEvent, Monitor, MonitorConfig, TrendAnchor};
use cpwatch_core::netsim::{self, DetectionMode, DetectorConfig, ScenarioSpec, Topology};
use cpwatch_core::offline::{self, SegmentParams};
use cpwatch_core::online::DetectorRegistry;
use cpwatch_core::timeseries::Samples;
use cpwatch_core::trend::{self, MacdParams};

use crate::input;
use crate::settings::{check, usage, Settings};
use crate::{
    Common, CritvalArgs, InputArgs, MacdArgs, McArgs, MonitorArgs, OfflineArgs, SegmentArgs, SimulateArgs, TrendArgs,
};

fn writer(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(
            File::create(p).with_context(|| format!("creating {}", p.display()))?,
        )),
        None => Box::new(io::stdout().lock()),
    })
}

fn emit(path: Option<&Path>, report: &Value) -> Result<()> {
    let mut w = writer(path)?;
    serde_json::to_writer_pretty(&mut w, report)?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}

fn envelope(command: &str, config: &impl Serialize, body: Value) -> Result<Value> {
    let mut report = json!({
        "command": command,
        "version": env!("CARGO_PKG_VERSION"),
        "config": serde_json::to_value(config)?,
    });
    if let (Value::Object(dst), Value::Object(src)) = (&mut report, body) {
        dst.extend(src);
    }
    Ok(report)
}

#[derive(Debug, Clone, Serialize)]
struct OutputConfig {
    output: Option<PathBuf>,
    seed: u64,
}

impl OutputConfig {
    fn resolve(s: &Settings, c: &Common) -> Result<Self> {
        Ok(Self {
            output: s.opt("output", c.output.clone())?,
            seed: s.get("seed", c.seed, 0)?,
        })
    }
}

#[derive(Debug, Clone, Serialize)]
struct McConfig {
    critval_table: Option<PathBuf>,
    mc_steps: usize,
    mc_reps: usize,
    mc_horizon: f64,
}

impl McConfig {
    fn resolve(s: &Settings, a: &McArgs) -> Result<Self> {
        let cfg = Self {
            critval_table: s.opt("critval-table", a.critval_table.clone())?,
            mc_steps: s.get("mc-steps", a.mc_steps, critvals::DEFAULT_GRID_STEPS)?,
            mc_reps: s.get("mc-reps", a.mc_reps, critvals::DEFAULT_REPLICATIONS)?,
            mc_horizon: s.get("mc-horizon", a.mc_horizon, critvals::DEFAULT_HORIZON)?,
        };
        if cfg.mc_steps < critvals::MIN_GRID_STEPS {
            return Err(usage(format!("mc-steps must be >= {}", critvals::MIN_GRID_STEPS)));
        }
        if cfg.mc_reps < critvals::MIN_REPLICATIONS {
            return Err(usage(format!("mc-reps must be >= {}", critvals::MIN_REPLICATIONS)));
        }
        if !(cfg.mc_horizon.is_finite() && cfg.mc_horizon > 0.0) {
            return Err(usage("mc-horizon must be positive"));
        }
        Ok(cfg)
    }

    fn source(&self, seed: u64) -> Result<Arc<dyn CritValSource>> {
        Ok(match &self.critval_table {
            Some(p) => Arc::new(CritValTable::load(p).with_context(|| format!("loading {}", p.display()))?),
            None => {
                let mut sim = SimulatedCritVals::new(self.mc_steps, self.mc_reps, seed);
                sim.horizon = self.mc_horizon;
                Arc::new(sim)
            }
        })
    }
}

#[derive(Debug, Clone, Serialize)]
struct InputConfig {
    input: String,
    columns: Option<Vec<usize>>,
}

impl InputConfig {
    fn resolve(s: &Settings, a: &InputArgs, fallback: Option<&str>) -> Result<Self> {
        let input = s
            .opt("input", a.input.clone())?
            .or_else(|| fallback.map(str::to_string))
            .ok_or_else(|| usage("--input is required"))?;
        Ok(Self {
            input,
            columns: s.list("columns", a.columns.clone())?,
        })
    }
}

fn resolve_macd(s: &Settings, a: &MacdArgs) -> Result<MacdParams> {
    let d = MacdParams::default();
    let p = MacdParams {
        p1: s.get("p1", a.p1, d.p1)?,
        p2: s.get("p2", a.p2, d.p2)?,
        p3: s.get("p3", a.p3, d.p3)?,
        h: s.get("h", a.h, d.h)?,
    };
    check(p.validate())?;
    Ok(p)
}

fn check_alpha(alpha: f64) -> Result<()> {
    if alpha > 0.0 && alpha < 1.0 {
        Ok(())
    } else {
        Err(usage(format!("alpha must lie in (0, 1), got {alpha}")))
    }
}

fn parse_with<T: FromStr>(key: &str, v: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    v.parse().map_err(|e| usage(format!("{key}: {e}")))
}

#[derive(Debug, Clone, Serialize)]
struct CritvalConfig {
    kind: CritValKind,
    d: usize,
    alpha: f64,
    gamma: f64,
    table_out: Option<PathBuf>,
    #[serde(flatten)]
    mc: McConfig,
    #[serde(flatten)]
    out: OutputConfig,
}

pub fn critval(a: CritvalArgs) -> Result<()> {
    let s = Settings::load(a.common.config.as_deref())?;
    let kind: String = s.get("kind", a.kind, "offline".into())?;
    let cfg = CritvalConfig {
        kind: parse_with("kind", &kind)?,
        d: s.get("d", a.d, 1)?,
        alpha: s.get("alpha", a.alpha, 0.05)?,
        gamma: s.get("gamma", a.gamma, 0.0)?,
        table_out: s.opt("table-out", a.table_out)?,
        mc: McConfig::resolve(&s, &a.mc)?,
        out: OutputConfig::resolve(&s, &a.common)?,
    };
    s.finish()?;
    let gamma = if cfg.kind.is_online() { cfg.gamma } else { 0.0 };
    let mut req = CritValRequest::new(cfg.kind, cfg.d, gamma, cfg.alpha)
        .with_budget(cfg.mc.mc_steps, cfg.mc.mc_reps)
        .with_seed(cfg.out.seed);
    if cfg.kind == CritValKind::OnlineRatio {
        req = req.with_horizon(cfg.mc.mc_horizon);
    }
    check(req.validate())?;

    let cv = match &cfg.mc.critval_table {
        Some(p) => CritValTable::load(p)?.lookup(cfg.kind, cfg.d, gamma, cfg.alpha)?,
        None => critvals::compute_critval(&req)?,
    };
    if let Some(path) = &cfg.table_out {
        add_to_table(path, cv)?;
    }
    let report = envelope("critval", &cfg, json!({ "critval": cv }))?;
    emit(cfg.out.output.as_deref(), &report)
}

fn add_to_table(path: &Path, cv: CritVal) -> Result<()> {
    let same = |e: &CritVal| {
        let (a, b) = (&e.request, &cv.request);
        a.kind == b.kind && a.d == b.d && a.gamma == b.gamma && a.alpha == b.alpha
    };
    let mut entries = if path.exists() {
        CritValTable::load(path)?.entries().to_vec()
    } else {
        Vec::new()
    };
    entries.retain(|e| !same(e));
    entries.push(cv);
    CritValTable::from_entries(entries).save(path)?;
    Ok(())
}

#[derive(Debug, Clone, Serialize)]
struct OfflineConfig {
    #[serde(flatten)]
    input: InputConfig,
    alpha: f64,
    lo: Option<usize>,
    hi: Option<usize>,
    #[serde(flatten)]
    mc: McConfig,
    #[serde(flatten)]
    out: OutputConfig,
}

pub fn offline(a: OfflineArgs) -> Result<()> {
    let s = Settings::load(a.common.config.as_deref())?;
    let cfg = OfflineConfig {
        input: InputConfig::resolve(&s, &a.input, None)?,
        alpha: s.get("alpha", a.alpha, 0.05)?,
        lo: s.opt("lo", a.lo)?,
        hi: s.opt("hi", a.hi)?,
        mc: McConfig::resolve(&s, &a.mc)?,
        out: OutputConfig::resolve(&s, &a.common)?,
    };
    s.finish()?;
    check_alpha(cfg.alpha)?;

    let (_, series) = input::load(&cfg.input.input, cfg.input.columns.as_deref())?;
    let n = series.len();
    let seg = series.segment(cfg.lo.unwrap_or(1), cfg.hi.unwrap_or(n))?;
    let source = cfg.mc.source(cfg.out.seed)?;
    let cv = source.critval(CritValKind::OfflineMax, series.dim(), 0.0, cfg.alpha)?;
    let result = offline::offline_test(&seg, cfg.alpha, &cv)?;
    let report = envelope(
        "offline",
        &cfg,
        json!({ "n": n, "d": series.dim(), "result": result, "critval": cv }),
    )?;
    emit(cfg.out.output.as_deref(), &report)
}

#[derive(Debug, Clone, Serialize)]
struct SegmentConfig {
    #[serde(flatten)]
    input: InputConfig,
    alpha: f64,
    min_seg: usize,
    max_rounds: usize,
    #[serde(flatten)]
    mc: McConfig,
    #[serde(flatten)]
    out: OutputConfig,
}

pub fn segment(a: SegmentArgs) -> Result<()> {
    let s = Settings::load(a.common.config.as_deref())?;
    let cfg = SegmentConfig {
        input: InputConfig::resolve(&s, &a.input, None)?,
        alpha: s.get("alpha", a.alpha, 0.05)?,
        min_seg: s.get("min-seg", a.min_seg, offline::DEFAULT_MIN_SEG)?,
        max_rounds: s.get("max-rounds", a.max_rounds, offline::DEFAULT_MAX_VALIDATION_ROUNDS)?,
        mc: McConfig::resolve(&s, &a.mc)?,
        out: OutputConfig::resolve(&s, &a.common)?,
    };
    s.finish()?;
    check_alpha(cfg.alpha)?;
    if cfg.min_seg == 0 {
        return Err(usage("min-seg must be >= 1"));
    }

    let (_, series) = input::load(&cfg.input.input, cfg.input.columns.as_deref())?;
    let params = SegmentParams {
        alpha: cfg.alpha,
        min_seg: cfg.min_seg,
        max_validation_rounds: cfg.max_rounds,
    };
    let source = cfg.mc.source(cfg.out.seed)?;
    let set = offline::segment(&series.full(), &params, source.as_ref())?;
    if set.unconverged {
        log::warn!("validation did not settle within {} rounds", cfg.max_rounds);
    }
    let report = envelope(
        "segment",
        &cfg,
        json!({ "n": series.len(), "d": series.dim(), "result": set }),
    )?;
    emit(cfg.out.output.as_deref(), &report)
}

#[derive(Debug, Clone, Serialize)]
struct MonitorRunConfig {
    #[serde(flatten)]
    input: InputConfig,
    #[serde(flatten)]
    monitor: MonitorConfig,
    report: Option<PathBuf>,
    on_scale_up: Option<String>,
    on_scale_down: Option<String>,
    #[serde(flatten)]
    mc: McConfig,
    #[serde(flatten)]
    out: OutputConfig,
}

#[derive(Serialize)]
struct EventLine {
    index: usize,
    direction: trend::Direction,
    action: Action,
    ti: f64,
    anchor: usize,
    trend_window_end: usize,
    training: (usize, usize),
}

impl From<&ChangeEvent> for EventLine {
    fn from(e: &ChangeEvent) -> Self {
        Self {
            index: e.detected_at,
            direction: e.direction,
            action: e.action,
            ti: e.trend.ti_value,
            anchor: e.trend.at_index,
            trend_window_end: e.trend.window_end,
            training: e.training_used,
        }
    }
}

pub fn monitor(a: MonitorArgs) -> Result<()> {
    let s = Settings::load(a.common.config.as_deref())?;
    let d = MonitorConfig::default();
    let anchor: String = s.get("trend-anchor", a.trend_anchor, "estimate".into())?;
    let cfg = MonitorRunConfig {
        input: InputConfig::resolve(&s, &a.input, Some("-"))?,
        monitor: MonitorConfig {
            alpha: s.get("alpha", a.alpha, d.alpha)?,
            gamma: s.get("gamma", a.gamma, d.gamma)?,
            detector: s.get("detector", a.detector, d.detector)?,
            window_k: s.get("window", a.window, d.window_k)?,
            quiet_gap_d: s.get("quiet-gap", a.quiet_gap, d.quiet_gap_d)?,
            macd: resolve_macd(&s, &a.macd)?,
            min_seg: s.get("min-seg", a.min_seg, d.min_seg)?,
            m_min: s.get("m", a.m, d.m_min)?,
            trend_dim: s.get("trend-dim", a.trend_dim, d.trend_dim)?,
            trend_anchor: parse_with::<TrendAnchor>("trend-anchor", &anchor)?,
        },
        report: s.opt("report", a.report)?,
        on_scale_up: s.opt("on-scale-up", a.on_scale_up)?,
        on_scale_down: s.opt("on-scale-down", a.on_scale_down)?,
        mc: McConfig::resolve(&s, &a.mc)?,
        out: OutputConfig::resolve(&s, &a.common)?,
    };
    s.finish()?;
    check(cfg.monitor.validate())?;
    check(DetectorRegistry::default().get(&cfg.monitor.detector).map(|_| ()))?;
    log::info!("effective config: {}", serde_json::to_string(&cfg)?);

    let source = cfg.mc.source(cfg.out.seed)?;
    let (_, rows) = input::rows(&cfg.input.input, cfg.input.columns.as_deref())?;
    let mut mon = Monitor::new(cfg.monitor.clone(), source)?;
    let mut out = writer(cfg.out.output.as_deref())?;
    let hooks = (cfg.on_scale_up.clone(), cfg.on_scale_down.clone());
    let mut write_events = |events: &[ChangeEvent]| -> Result<()> {
        for e in events {
            serde_json::to_writer(&mut out, &EventLine::from(e))?;
            writeln!(out)?;
            out.flush()?;
            let hook = match e.action {
                Action::ScaleUp => &hooks.0,
                Action::ScaleDown => &hooks.1,
            };
            if let Some(template) = hook {
                run_hook(template, e);
            }
        }
        Ok(())
    };
    for row in rows {
        let events = mon.push(&row?)?;
        write_events(&events)?;
    }
    let (tail, report) = mon.finish()?;
    write_events(&tail)?;
    log::info!(
        "{} samples, {} windows, {} events, {} skipped",
        report.samples,
        report.windows,
        report.events.len(),
        report.skipped.len()
    );
    if let Some(path) = &cfg.report {
        let events: Vec<EventLine> = report.events.iter().map(EventLine::from).collect();
        let body = json!({
            "samples": report.samples,
            "windows": report.windows,
            "events": events,
            "skipped": report.skipped,
        });
        emit(Some(path), &envelope("monitor", &cfg, body)?)?;
    }
    Ok(())
}

fn expand_hook(template: &str, e: &ChangeEvent) -> String {
    let action = match e.action {
        Action::ScaleUp => "ScaleUp",
        Action::ScaleDown => "ScaleDown",
    };
    let direction = match e.direction {
        trend::Direction::Up => "up",
        trend::Direction::Down => "down",
    };
    template
        .replace("{index}", &e.detected_at.to_string())
        .replace("{direction}", direction)
        .replace("{action}", action)
        .replace("{ti}", &e.trend.ti_value.to_string())
        .replace("{lo}", &e.training_used.0.to_string())
        .replace("{hi}", &e.training_used.1.to_string())
}

/// A failing hook is logged; monitoring carries on.
fn run_hook(template: &str, e: &ChangeEvent) {
    let cmd = expand_hook(template, e);
    match std::process::Command::new("sh").arg("-c").arg(&cmd).status() {
        Ok(st) if st.success() => log::debug!("hook `{cmd}` done"),
        Ok(st) => log::warn!("hook `{cmd}` exited with {st}"),
        Err(err) => log::warn!("hook `{cmd}` could not start: {err}"),
    }
}

#[derive(Debug, Clone, Serialize)]
struct TrendConfig {
    #[serde(flatten)]
    input: InputConfig,
    index: usize,
    mode: String,
    clamp: bool,
    macd: MacdParams,
    #[serde(flatten)]
    out: OutputConfig,
}

pub fn trend(a: TrendArgs) -> Result<()> {
    let s = Settings::load(a.common.config.as_deref())?;
    let clamp_flag = if a.clamp { Some(true) } else { None };
    let cfg = TrendConfig {
        input: InputConfig::resolve(&s, &a.input, None)?,
        index: s.opt("index", a.index)?.ok_or_else(|| usage("--index is required"))?,
        mode: s.get("mode", a.mode, "interval".into())?,
        clamp: s.get("clamp", clamp_flag, false)?,
        macd: resolve_macd(&s, &a.macd)?,
        out: OutputConfig::resolve(&s, &a.common)?,
    };
    s.finish()?;
    if !matches!(cfg.mode.as_str(), "point" | "interval") {
        return Err(usage(format!("mode must be point or interval, got `{}`", cfg.mode)));
    }

    let (cols, series) = input::load(&cfg.input.input, cfg.input.columns.as_deref())?;
    if cols.len() != 1 {
        log::warn!("trend reads the first of {} selected columns", cols.len());
    }
    let xs = series.column(0);
    let verdict = match (cfg.mode.as_str(), cfg.clamp) {
        ("point", _) => trend::ti_point(&xs, cfg.index, &cfg.macd)?,
        (_, false) => trend::ti_interval(&xs, cfg.index, &cfg.macd)?,
        (_, true) => trend::ti_interval_clamped(&xs, cfg.index, &cfg.macd)?,
    };
    let report = envelope("trend", &cfg, json!({ "n": xs.len(), "verdict": verdict }))?;
    emit(cfg.out.output.as_deref(), &report)
}

/// `ROWSxCOLS`.
fn parse_dims(key: &str, v: &str) -> Result<(usize, usize)> {
    let (r, c) = v
        .split_once(['x', 'X'])
        .ok_or_else(|| usage(format!("{key}: expected ROWSxCOLS, got `{v}`")))?;
    Ok((parse_with(key, r.trim())?, parse_with(key, c.trim())?))
}

#[derive(Debug, Clone, Serialize)]
struct SimulateConfig {
    grid: String,
    attackers: usize,
    spacing: usize,
    start: usize,
    duration: usize,
    mode: DetectionMode,
    cluster_block: String,
    reps: usize,
    m: usize,
    retrain: usize,
    gamma: f64,
    alpha: f64,
    heatmap: Option<PathBuf>,
    details: bool,
    #[serde(flatten)]
    mc: McConfig,
    #[serde(flatten)]
    out: OutputConfig,
}

pub fn simulate(a: SimulateArgs) -> Result<()> {
    let s = Settings::load(a.common.config.as_deref())?;
    let spec_d = ScenarioSpec::default();
    let det_d = DetectorConfig::default();
    let mode: String = s.get("mode", a.mode, "per-node".into())?;
    let details_flag = if a.details { Some(true) } else { None };
    let cfg = SimulateConfig {
        grid: s.get("grid", a.grid, "10x10".into())?,
        attackers: s.get("attackers", a.attackers, spec_d.n_attackers)?,
        spacing: s.get("spacing", a.spacing, spec_d.min_spacing)?,
        start: s.get("start", a.start, spec_d.start)?,
        duration: s.get("duration", a.duration, spec_d.horizon)?,
        mode: parse_with("mode", &mode)?,
        cluster_block: s.get("cluster-block", a.cluster_block, "2x2".into())?,
        reps: s.get("reps", a.reps, 100)?,
        m: s.get("m", a.m, det_d.m)?,
        retrain: s.get("retrain", a.retrain, det_d.retrain_block)?,
        gamma: s.get("gamma", a.gamma, det_d.gamma)?,
        alpha: s.get("alpha", a.alpha, 0.05)?,
        heatmap: s.opt("heatmap", a.heatmap)?,
        details: s.get("details", details_flag, false)?,
        mc: McConfig::resolve(&s, &a.mc)?,
        out: OutputConfig::resolve(&s, &a.common)?,
    };
    s.finish()?;
    check_alpha(cfg.alpha)?;
    if !(0.0..0.5).contains(&cfg.gamma) {
        return Err(usage(format!("gamma must lie in [0, 0.5), got {}", cfg.gamma)));
    }
    if cfg.reps == 0 {
        return Err(usage("reps must be >= 1"));
    }
    if cfg.m < cpwatch_core::online::MIN_TRAINING || cfg.retrain == 0 {
        return Err(usage("m must be >= 4 and retrain >= 1"));
    }
    if cfg.m >= cfg.duration {
        return Err(usage("m must be below duration"));
    }

    let (rows, cols) = parse_dims("grid", &cfg.grid)?;
    let mut topo = check_topo(Topology::grid(rows, cols))?;
    if cfg.mode == DetectionMode::Cluster {
        let (br, bc) = parse_dims("cluster-block", &cfg.cluster_block)?;
        topo = check_topo(topo.with_block_clusters(br, bc))?;
    }
    let spec = ScenarioSpec {
        n_attackers: cfg.attackers,
        min_spacing: cfg.spacing,
        start: cfg.start,
        horizon: cfg.duration,
        ..spec_d
    };
    let det = DetectorConfig {
        m: cfg.m,
        retrain_block: cfg.retrain,
        gamma: cfg.gamma,
    };
    let source = cfg.mc.source(cfg.out.seed)?;
    let cv = source.critval(CritValKind::OnlineStandard, 1, cfg.gamma, cfg.alpha)?;
    let (summary, reports) = netsim::simulate(&topo, &spec, &det, &cv, cfg.mode, cfg.out.seed, cfg.reps)?;

    if let Some(path) = &cfg.heatmap {
        let f = File::create(path).with_context(|| format!("creating {}", path.display()))?;
        netsim::write_heatmap(&topo, &summary.node_detection_prob, BufWriter::new(f))?;
    }
    let mut body = json!({ "critval": cv, "summary": summary });
    if cfg.details {
        body["reports"] = serde_json::to_value(&reports)?;
    }
    emit(cfg.out.output.as_deref(), &envelope("simulate", &cfg, body)?)
}

fn check_topo(t: cpwatch_core::Result<Topology>) -> Result<Topology> {
    t.map_err(|e| usage(e.to_string()))
}
