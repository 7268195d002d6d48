//! Train-then-monitor loop over a growing stream.
//!
//! Each round picks a change-free training block from the history (the part
//! after the last offline change point), runs an online detector over a
//! finite window, labels any alarm with the trend indicator and restarts
//! after a quiet gap. Samples are pushed one at a time so the loop can sit on
//! a live feed; events come out as soon as the trend window is filled.

use std::collections::VecDeque;
use std::sync::Arc;

use serde::Serialize;

use crate::critvals::CritValSource;
use crate::error::{Error, Result};
use crate::offline::{self, SegmentParams};
use crate::online::{self, DetectorKernel, DetectorRegistry, OnlineDetectorState};
use crate::timeseries::{Samples, SeriesSegment, TimeSeries};
use crate::trend::{self, Direction, MacdParams, TrendVerdict};

/// Where the trend indicator is evaluated after an alarm.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum TrendAnchor {
    /// The alarm index itself.
    Alarm,
    /// First sample after the CUSUM-estimated change location within the
    /// training block plus the monitored samples.
    Estimate,
}

impl std::str::FromStr for TrendAnchor {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "alarm" => Ok(TrendAnchor::Alarm),
            "estimate" => Ok(TrendAnchor::Estimate),
            _ => Err(Error::UnknownStrategy {
                what: "trend anchor",
                name: s.to_string(),
                available: "alarm, estimate".into(),
            }),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MonitorConfig {
    pub alpha: f64,
    pub gamma: f64,
    pub detector: String,
    pub window_k: usize,
    pub quiet_gap_d: usize,
    pub macd: MacdParams,
    pub min_seg: usize,
    pub m_min: usize,
    /// Column fed to the trend indicator.
    pub trend_dim: usize,
    pub trend_anchor: TrendAnchor,
}

impl Default for MonitorConfig {
    fn default() -> Self {
        Self {
            alpha: 0.05,
            gamma: 0.0,
            detector: "standard".into(),
            window_k: 100,
            quiet_gap_d: 25,
            macd: MacdParams::default(),
            min_seg: offline::DEFAULT_MIN_SEG,
            m_min: 100,
            trend_dim: 0,
            trend_anchor: TrendAnchor::Estimate,
        }
    }
}

impl MonitorConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::invalid(format!("alpha must lie in (0, 1), got {}", self.alpha)));
        }
        if !(0.0..0.5).contains(&self.gamma) {
            return Err(Error::invalid(format!("gamma must lie in [0, 0.5), got {}", self.gamma)));
        }
        if self.window_k == 0 {
            return Err(Error::invalid("window_k must be >= 1"));
        }
        if self.m_min < online::MIN_TRAINING {
            return Err(Error::invalid(format!("m_min must be >= {}", online::MIN_TRAINING)));
        }
        if self.min_seg == 0 {
            return Err(Error::invalid("min_seg must be >= 1"));
        }
        self.macd.validate()
    }

    fn segment_params(&self) -> SegmentParams {
        SegmentParams {
            alpha: self.alpha,
            min_seg: self.min_seg,
            ..Default::default()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Action {
    ScaleUp,
    ScaleDown,
}

impl From<Direction> for Action {
    fn from(d: Direction) -> Self {
        match d {
            Direction::Up => Action::ScaleUp,
            Direction::Down => Action::ScaleDown,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ChangeEvent {
    pub detected_at: usize,
    pub direction: Direction,
    pub action: Action,
    pub trend: TrendVerdict,
    pub training_used: (usize, usize),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SkippedWindow {
    /// Monitoring origin that could not be trained.
    pub at: usize,
    pub last_cp: usize,
    /// Where monitoring resumes.
    pub resume_at: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct MonitorReport {
    pub events: Vec<ChangeEvent>,
    pub skipped: Vec<SkippedWindow>,
    pub windows: usize,
    pub samples: usize,
}

/// Training block for a monitoring origin at the end of `history`: the whole
/// history when it has no change point, else everything after the last one.
pub fn select_training<'a>(
    history: &'a TimeSeries,
    config: &MonitorConfig,
    source: &dyn CritValSource,
) -> Result<SeriesSegment<'a>> {
    let n = history.len();
    if n < config.m_min {
        return Err(Error::TooShort {
            needed: config.m_min,
            got: n,
        });
    }
    let params = config.segment_params();
    // Too short to hold two minimal segments: nothing to split.
    if n < 2 * params.min_seg {
        return Ok(history.full());
    }
    let set = offline::segment(&history.full(), &params, source)?;
    match set.last() {
        None => Ok(history.full()),
        Some(cp) => {
            let available = n - cp;
            // Growing the block leftwards would cross `cp`, so a short tail
            // cannot be rescued.
            if available < config.m_min {
                Err(Error::InsufficientTraining {
                    last_cp: cp,
                    available,
                    needed: config.m_min,
                })
            } else {
                history.segment(cp + 1, n)
            }
        }
    }
}

struct ActiveWindow {
    state: OnlineDetectorState,
    training: (usize, usize),
    end: usize,
}

struct PendingEvent {
    detected_at: usize,
    anchor: usize,
    training: (usize, usize),
}

/// Push-driven monitor state.
pub struct Monitor {
    config: MonitorConfig,
    kernel: Arc<dyn DetectorKernel>,
    source: Arc<dyn CritValSource>,
    history: Option<TimeSeries>,
    next_start: usize,
    active: Option<ActiveWindow>,
    pending: VecDeque<PendingEvent>,
    report: MonitorReport,
}

impl Monitor {
    pub fn new(config: MonitorConfig, source: Arc<dyn CritValSource>) -> Result<Self> {
        Self::with_registry(config, source, &DetectorRegistry::default())
    }

    pub fn with_registry(
        config: MonitorConfig,
        source: Arc<dyn CritValSource>,
        registry: &DetectorRegistry,
    ) -> Result<Self> {
        config.validate()?;
        let kernel = registry.get(&config.detector)?;
        Ok(Self {
            next_start: config.m_min,
            config,
            kernel,
            source,
            history: None,
            active: None,
            pending: VecDeque::new(),
            report: MonitorReport::default(),
        })
    }

    pub fn config(&self) -> &MonitorConfig {
        &self.config
    }

    pub fn report(&self) -> &MonitorReport {
        &self.report
    }

    /// Feeds one sample; returns events whose trend window just completed.
    pub fn push(&mut self, x: &[f64]) -> Result<Vec<ChangeEvent>> {
        let history = match &mut self.history {
            Some(h) => h,
            None => {
                if self.config.trend_dim >= x.len() {
                    return Err(Error::invalid(format!(
                        "trend column {} outside a {}-column stream",
                        self.config.trend_dim,
                        x.len()
                    )));
                }
                self.history.insert(TimeSeries::with_dim(x.len())?)
            }
        };
        history.push(x)?;
        let n = history.len();
        self.report.samples = n;

        if let Some(active) = &mut self.active {
            let verdict = active.state.step(x)?;
            if verdict.alarm {
                let anchor = match self.config.trend_anchor {
                    TrendAnchor::Alarm => n,
                    TrendAnchor::Estimate => {
                        let span = history.segment(active.training.0, n)?;
                        let (_, local) = offline::max_statistic(&span)?;
                        // `local` is the last pre-change sample of the span.
                        (active.training.0 + local).min(n)
                    }
                };
                self.pending.push_back(PendingEvent {
                    detected_at: n,
                    anchor,
                    training: active.training,
                });
                self.active = None;
                self.next_start = n + self.config.quiet_gap_d;
            } else if n >= active.end {
                self.active = None;
                self.next_start = n;
            }
        }

        if self.active.is_none() && n == self.next_start {
            self.open_window()?;
        }
        self.flush(false)
    }

    /// Emits events still waiting for trend samples, clamping their windows
    /// to the data seen so far.
    pub fn finish(mut self) -> Result<(Vec<ChangeEvent>, MonitorReport)> {
        let tail = self.flush(true)?;
        Ok((tail, self.report))
    }

    fn open_window(&mut self) -> Result<()> {
        let history = self.history.as_ref().expect("window opens after data");
        let n = history.len();
        match select_training(history, &self.config, self.source.as_ref()) {
            Ok(training) => {
                let critval = self.source.critval(
                    self.kernel.critval_kind(),
                    history.dim(),
                    self.config.gamma,
                    self.config.alpha,
                )?;
                let state = online::train(&training, self.kernel.clone(), self.config.gamma, critval)?;
                self.report.windows += 1;
                self.active = Some(ActiveWindow {
                    state,
                    training: (training.lo(), training.hi()),
                    end: n + self.config.window_k,
                });
            }
            Err(Error::InsufficientTraining { last_cp, .. }) => {
                let resume_at = last_cp + self.config.m_min;
                log::info!("window at {n} skipped: change at {last_cp}, resuming at {resume_at}");
                self.report.skipped.push(SkippedWindow {
                    at: n,
                    last_cp,
                    resume_at,
                });
                self.next_start = resume_at;
            }
            Err(e) => return Err(e),
        }
        Ok(())
    }

    fn flush(&mut self, at_end: bool) -> Result<Vec<ChangeEvent>> {
        let mut out = Vec::new();
        let Some(history) = &self.history else {
            return Ok(out);
        };
        let n = history.len();
        while let Some(p) = self.pending.front() {
            if !at_end && p.anchor + self.config.macd.h > n {
                break;
            }
            let series = history.column(self.config.trend_dim);
            let verdict = trend::ti_interval_clamped(&series, p.anchor, &self.config.macd)?;
            let event = ChangeEvent {
                detected_at: p.detected_at,
                direction: verdict.direction,
                action: verdict.direction.into(),
                trend: verdict,
                training_used: p.training,
            };
            self.pending.pop_front();
            self.report.events.push(event.clone());
            out.push(event);
        }
        Ok(out)
    }
}

/// Runs the monitor over a finite stream.
pub fn run_monitor<I, R>(stream: I, config: MonitorConfig, source: Arc<dyn CritValSource>) -> Result<MonitorReport>
where
    I: IntoIterator<Item = R>,
    R: AsRef<[f64]>,
{
    let mut mon = Monitor::new(config, source)?;
    for x in stream {
        mon.push(x.as_ref())?;
    }
    Ok(mon.finish()?.1)
}
