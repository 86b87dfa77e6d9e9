//! Latency breakdowns, percentiles, throughput, utilization series, waiting
//! fractions, the instability verdict and the CSV frame schema.

use std::collections::BTreeMap;
use std::io::{self, Write};

use hdrhistogram::Histogram;
use serde::Serialize;
use thiserror::Error;

use crate::kernel::{nanos_to_secs, RateResource};
use crate::scenario::ProducerMode;
use crate::stages::FrameRecord;

pub const EPOCHS: usize = 10;
/// Latency rule: increasing epoch-to-epoch steps required (of `EPOCHS - 1`).
pub const MIN_INCREASING_STEPS: usize = 8;
pub const MIN_GROWTH_RATIO: f64 = 1.5;
/// A backlog trend must grow by more than this many seconds to count.
pub const MIN_BACKLOG_GROWTH: f64 = 1e-3;

pub const DELAY: &str = "delay";
pub const WAIT: &str = "wait";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TelemetryError {
    #[error("frame log has no completed frames with fan-out")]
    EmptyLog,
    #[error("frame {0} has out-of-order timestamps")]
    Unordered(u64),
    #[error("horizon {horizon} s does not extend past warmup {warmup} s")]
    HorizonTooShort { warmup: f64, horizon: f64 },
    #[error("run at acceleration {0} is unstable")]
    UnstableRun(f64),
    #[error("sampling interval must be positive")]
    BadInterval,
}

/// Names and order of the latency components.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StageLayout {
    pub mode: ProducerMode,
}

impl StageLayout {
    pub fn new(mode: ProducerMode) -> Self {
        Self { mode }
    }

    pub fn names(&self) -> &'static [&'static str] {
        match self.mode {
            ProducerMode::SelfPaced => &["ingest", "detect", WAIT, "identify"],
            ProducerMode::Scheduled => &[DELAY, "ingest", WAIT, "detect"],
        }
    }

    /// Per-frame components in `names()` order; they sum to the end-to-end
    /// latency exactly.
    pub fn components(&self, r: &FrameRecord) -> Option<[u64; 4]> {
        let start = r.identify_start?;
        let end = r.identify_end?;
        Some(match self.mode {
            ProducerMode::SelfPaced => [
                r.ingest_end - r.ingest_start,
                r.detect_end - r.ingest_end,
                start - r.detect_end,
                end - start,
            ],
            ProducerMode::Scheduled => [
                r.ingest_start - r.scheduled_start,
                r.ingest_end - r.ingest_start,
                start - r.detect_end,
                end - start,
            ],
        })
    }

    pub fn end_to_end(&self, r: &FrameRecord) -> Option<u64> {
        Some(r.identify_end? - r.scheduled_start)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StageStat {
    pub mean: f64,
    pub p99: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BreakdownReport {
    /// Component name to stats, in seconds, over completed frames with fan-out.
    pub stages: Vec<(String, StageStat)>,
    /// Producer stages over every frame in the window, fan-out 0 included.
    pub producer_stages: Vec<(String, StageStat)>,
    pub end_to_end: StageStat,
    pub wait_fraction: f64,
    /// Frames per second started in the window.
    pub throughput: f64,
    /// Completed frames with fan-out.
    pub samples: u64,
    /// Frames started in the window.
    pub frames: u64,
}

impl BreakdownReport {
    pub fn stage(&self, name: &str) -> Option<StageStat> {
        self.stages.iter().find(|(n, _)| n == name).map(|(_, s)| *s)
    }

    pub fn producer_stage(&self, name: &str) -> Option<StageStat> {
        self.producer_stages
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, s)| *s)
    }

    /// Name of the component with the largest mean.
    pub fn largest_component(&self) -> Option<&str> {
        self.stages
            .iter()
            .max_by(|a, b| a.1.mean.total_cmp(&b.1.mean))
            .map(|(n, _)| n.as_str())
    }
}

/// Mean plus p99 over nanosecond values. Exact mode keeps every value and
/// uses nearest rank; streaming mode uses a 3-significant-digit histogram.
#[derive(Debug, Clone)]
pub struct StatAccumulator {
    sum: u128,
    count: u64,
    exact: Option<Vec<u64>>,
    hist: Option<Histogram<u64>>,
}

impl StatAccumulator {
    pub fn exact() -> Self {
        Self {
            sum: 0,
            count: 0,
            exact: Some(Vec::new()),
            hist: None,
        }
    }

    pub fn streaming() -> Self {
        Self {
            sum: 0,
            count: 0,
            exact: None,
            hist: Some(Histogram::new(3).expect("valid precision")),
        }
    }

    pub fn record(&mut self, v: u64) {
        self.sum += v as u128;
        self.count += 1;
        if let Some(x) = self.exact.as_mut() {
            x.push(v);
        }
        if let Some(h) = self.hist.as_mut() {
            if h.record(v).is_err() {
                h.saturating_record(v);
            }
        }
    }

    pub fn count(&self) -> u64 {
        self.count
    }

    pub fn mean_secs(&self) -> f64 {
        if self.count == 0 {
            0.0
        } else {
            (self.sum as f64 / self.count as f64) / 1e9
        }
    }

    pub fn p99_secs(&mut self) -> f64 {
        if self.count == 0 {
            return 0.0;
        }
        if let Some(x) = self.exact.as_mut() {
            return nanos_to_secs(nearest_rank(x, 0.99));
        }
        let h = self.hist.as_ref().expect("one backend");
        nanos_to_secs(h.value_at_quantile(0.99))
    }

    pub fn stat(&mut self) -> StageStat {
        StageStat {
            mean: self.mean_secs(),
            p99: self.p99_secs(),
        }
    }
}

/// Nearest-rank quantile: the smallest value with at least `q` of the
/// samples at or below it. Sorts `values` in place.
pub fn nearest_rank(values: &mut [u64], q: f64) -> u64 {
    assert!(!values.is_empty());
    values.sort_unstable();
    let rank = (q * values.len() as f64).ceil() as usize;
    values[rank.clamp(1, values.len()) - 1]
}

/// Accumulates a breakdown frame by frame.
#[derive(Debug, Clone)]
pub struct BreakdownAccumulator {
    layout: StageLayout,
    window: (u64, u64),
    components: [StatAccumulator; 4],
    producer: [StatAccumulator; 2],
    e2e: StatAccumulator,
    frames: u64,
}

impl BreakdownAccumulator {
    /// Counts frames whose scheduled start lies in `[window.0, window.1)`.
    pub fn new(layout: StageLayout, window: (u64, u64), exact: bool) -> Self {
        let mk = || {
            if exact {
                StatAccumulator::exact()
            } else {
                StatAccumulator::streaming()
            }
        };
        Self {
            layout,
            window,
            components: [mk(), mk(), mk(), mk()],
            producer: [mk(), mk()],
            e2e: mk(),
            frames: 0,
        }
    }

    /// Ends the measurement window early, e.g. when a run is cut short.
    pub fn close_at(&mut self, end: u64) {
        self.window.1 = self.window.1.min(end).max(self.window.0);
    }

    pub fn in_window(&self, r: &FrameRecord) -> bool {
        r.scheduled_start >= self.window.0 && r.scheduled_start < self.window.1
    }

    /// Call once per frame when its ingest starts.
    pub fn count_started(&mut self, ingest_start: u64) {
        if ingest_start >= self.window.0 && ingest_start < self.window.1 {
            self.frames += 1;
        }
    }

    /// Call once per frame when it completes.
    pub fn record_complete(&mut self, r: &FrameRecord) {
        if !self.in_window(r) {
            return;
        }
        self.producer[0].record(r.ingest_end - r.ingest_start);
        self.producer[1].record(r.detect_end - r.ingest_end);
        if let (Some(c), Some(e)) = (self.layout.components(r), self.layout.end_to_end(r)) {
            for (acc, v) in self.components.iter_mut().zip(c) {
                acc.record(v);
            }
            self.e2e.record(e);
        }
    }

    pub fn report(&mut self) -> Result<BreakdownReport, TelemetryError> {
        if self.e2e.count() == 0 {
            return Err(TelemetryError::EmptyLog);
        }
        let names = self.layout.names();
        let stages: Vec<(String, StageStat)> = names
            .iter()
            .zip(self.components.iter_mut())
            .map(|(n, a)| (n.to_string(), a.stat()))
            .collect();
        let mut producer_stages = vec![("ingest".to_string(), self.producer[0].stat())];
        if self.layout.mode == ProducerMode::SelfPaced {
            producer_stages.push(("detect".to_string(), self.producer[1].stat()));
        }
        let e2e = self.e2e.stat();
        let wait = stages
            .iter()
            .find(|(n, _)| n == WAIT)
            .map(|(_, s)| s.mean)
            .unwrap_or(0.0);
        let span = nanos_to_secs(self.window.1.saturating_sub(self.window.0));
        Ok(BreakdownReport {
            stages,
            producer_stages,
            end_to_end: e2e,
            wait_fraction: if e2e.mean > 0.0 { wait / e2e.mean } else { 0.0 },
            throughput: if span > 0.0 { self.frames as f64 / span } else { 0.0 },
            samples: self.e2e.count(),
            frames: self.frames,
        })
    }
}

/// Exact breakdown of a complete frame log. The window runs from the first
/// scheduled start to the last frame end.
pub fn breakdown(log: &[FrameRecord], mode: ProducerMode) -> Result<BreakdownReport, TelemetryError> {
    if log.is_empty() {
        return Err(TelemetryError::EmptyLog);
    }
    for r in log {
        if !r.is_ordered() {
            return Err(TelemetryError::Unordered(r.frame_id));
        }
    }
    let start = log.iter().map(|r| r.scheduled_start).min().unwrap_or(0);
    let end = log
        .iter()
        .map(|r| r.end().unwrap_or(r.detect_end))
        .max()
        .unwrap_or(start)
        .max(start)
        + 1;
    breakdown_in_window(log, mode, (start, end))
}

pub fn breakdown_in_window(
    log: &[FrameRecord],
    mode: ProducerMode,
    window: (u64, u64),
) -> Result<BreakdownReport, TelemetryError> {
    let mut acc = BreakdownAccumulator::new(StageLayout::new(mode), window, true);
    for r in log {
        if !r.is_ordered() {
            return Err(TelemetryError::Unordered(r.frame_id));
        }
        acc.count_started(r.ingest_start);
        if r.is_complete() {
            acc.record_complete(r);
        }
    }
    acc.report()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WaitPoint {
    pub acceleration: f64,
    pub wait_fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WaitSeries {
    pub points: Vec<WaitPoint>,
    pub nondecreasing: bool,
}

/// Waiting fraction per acceleration, sorted by acceleration. Every input
/// run must be stable.
pub fn waiting_fraction_series(
    runs: &[(f64, &BreakdownReport, &InstabilityVerdict)],
) -> Result<WaitSeries, TelemetryError> {
    let mut points = Vec::new();
    for (a, b, v) in runs {
        if !v.stable {
            return Err(TelemetryError::UnstableRun(*a));
        }
        points.push(WaitPoint {
            acceleration: *a,
            wait_fraction: b.wait_fraction,
        });
    }
    points.sort_by(|x, y| x.acceleration.total_cmp(&y.acceleration));
    let nondecreasing = points
        .windows(2)
        .all(|w| w[1].wait_fraction >= w[0].wait_fraction);
    Ok(WaitSeries {
        points,
        nondecreasing,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InstabilityVerdict {
    pub stable: bool,
    /// Mean end-to-end latency per epoch, seconds.
    pub epoch_means: Vec<f64>,
    pub growth_ratio: f64,
    pub increasing_steps: usize,
    /// Some resource backlog grew strictly across every epoch.
    pub max_queue_trend: bool,
    /// Epoch-mean backlog per resource, seconds of pending work.
    pub backlog_epoch_means: BTreeMap<String, Vec<f64>>,
    pub binding_resource: Option<String>,
    /// Set when the run stopped early because a backlog diverged.
    pub truncated_at: Option<f64>,
}

/// Per-epoch latency sums; in-flight frames count at their censored age.
#[derive(Debug, Clone)]
pub struct EpochAccumulator {
    start: u64,
    width: u64,
    sums: Vec<f64>,
    counts: Vec<u64>,
}

impl EpochAccumulator {
    pub fn new(warmup: u64, horizon: u64) -> Self {
        let width = (horizon.saturating_sub(warmup) / EPOCHS as u64).max(1);
        Self {
            start: warmup,
            width,
            sums: vec![0.0; EPOCHS],
            counts: vec![0; EPOCHS],
        }
    }

    pub fn epoch_of(&self, t: u64) -> Option<usize> {
        if t < self.start {
            return None;
        }
        let e = ((t - self.start) / self.width) as usize;
        (e < EPOCHS).then_some(e)
    }

    pub fn record(&mut self, scheduled_start: u64, latency: u64) {
        if let Some(e) = self.epoch_of(scheduled_start) {
            self.sums[e] += nanos_to_secs(latency);
            self.counts[e] += 1;
        }
    }

    pub fn means(&self) -> Vec<f64> {
        self.sums
            .iter()
            .zip(&self.counts)
            .map(|(s, c)| if *c == 0 { 0.0 } else { s / *c as f64 })
            .collect()
    }
}

/// Mean of backlog samples falling in each epoch.
pub fn epoch_means_of_samples(samples: &[(u64, f64)], warmup: u64, horizon: u64) -> Vec<f64> {
    let acc_width = (horizon.saturating_sub(warmup) / EPOCHS as u64).max(1);
    let mut sums = vec![0.0; EPOCHS];
    let mut counts = vec![0u64; EPOCHS];
    for &(t, v) in samples {
        if t < warmup {
            continue;
        }
        let e = ((t - warmup) / acc_width) as usize;
        if e < EPOCHS {
            sums[e] += v;
            counts[e] += 1;
        }
    }
    sums.iter()
        .zip(&counts)
        .map(|(s, c)| if *c == 0 { 0.0 } else { s / *c as f64 })
        .collect()
}

/// Applies the verdict rule to epoch statistics.
pub fn verdict_from_epochs(
    epoch_means: Vec<f64>,
    backlog_epoch_means: BTreeMap<String, Vec<f64>>,
) -> InstabilityVerdict {
    let increasing_steps = epoch_means.windows(2).filter(|w| w[1] > w[0]).count();
    let first = epoch_means.first().copied().unwrap_or(0.0);
    let last = epoch_means.last().copied().unwrap_or(0.0);
    let growth_ratio = if first > 0.0 { last / first } else { 1.0 };
    let latency_rule = increasing_steps >= MIN_INCREASING_STEPS && growth_ratio > MIN_GROWTH_RATIO;

    let growth = |v: &Vec<f64>| v.last().copied().unwrap_or(0.0) - v.first().copied().unwrap_or(0.0);
    let trending: Vec<&String> = backlog_epoch_means
        .iter()
        .filter(|(_, v)| v.windows(2).all(|w| w[1] > w[0]) && growth(v) > MIN_BACKLOG_GROWTH)
        .map(|(k, _)| k)
        .collect();
    let max_queue_trend = !trending.is_empty();
    let stable = !(latency_rule || max_queue_trend);
    let binding_resource = if stable {
        None
    } else {
        backlog_epoch_means
            .iter()
            .filter(|(_, v)| growth(v) > 0.0)
            .max_by(|a, b| growth(a.1).total_cmp(&growth(b.1)))
            .map(|(k, _)| k.clone())
    };
    InstabilityVerdict {
        stable,
        epoch_means,
        growth_ratio,
        increasing_steps,
        max_queue_trend,
        backlog_epoch_means,
        binding_resource,
        truncated_at: None,
    }
}

/// Verdict from a frame log over `[warmup, horizon)` seconds, plus optional
/// backlog samples `(time ns, backlog s)` per resource.
pub fn detect_instability(
    log: &[FrameRecord],
    warmup: f64,
    horizon: f64,
    backlogs: &BTreeMap<String, Vec<(u64, f64)>>,
) -> Result<InstabilityVerdict, TelemetryError> {
    if !(horizon > warmup) {
        return Err(TelemetryError::HorizonTooShort { warmup, horizon });
    }
    let w = crate::kernel::secs_to_nanos(warmup);
    let h = crate::kernel::secs_to_nanos(horizon);
    let mut acc = EpochAccumulator::new(w, h);
    for r in log.iter().filter(|r| r.fanout > 0) {
        let end = r.identify_end.unwrap_or(h).min(h);
        acc.record(r.scheduled_start, end.saturating_sub(r.scheduled_start));
    }
    let backlog_means = backlogs
        .iter()
        .map(|(k, v)| (k.clone(), epoch_means_of_samples(v, w, h)))
        .collect();
    Ok(verdict_from_epochs(acc.means(), backlog_means))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct UtilizationWindow {
    pub start: f64,
    pub busy_fraction: f64,
    pub served: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ResourceUtilization {
    pub resource: String,
    pub capacity: f64,
    pub windows: Vec<UtilizationWindow>,
}

impl ResourceUtilization {
    /// Busy fraction over windows starting in `[from, to)` seconds.
    pub fn mean_busy(&self, from: f64, to: f64) -> f64 {
        let sel: Vec<f64> = self
            .windows
            .iter()
            .filter(|w| w.start >= from && w.start < to)
            .map(|w| w.busy_fraction)
            .collect();
        if sel.is_empty() {
            0.0
        } else {
            sel.iter().sum::<f64>() / sel.len() as f64
        }
    }

    /// Served units per second over windows starting in `[from, to)`.
    pub fn mean_rate(&self, from: f64, to: f64, window: f64) -> f64 {
        let sel: Vec<f64> = self
            .windows
            .iter()
            .filter(|w| w.start >= from && w.start < to)
            .map(|w| w.served)
            .collect();
        if sel.is_empty() {
            0.0
        } else {
            sel.iter().sum::<f64>() / (sel.len() as f64 * window)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct UtilizationSeries {
    pub window: f64,
    pub resources: Vec<ResourceUtilization>,
}

impl UtilizationSeries {
    pub fn get(&self, name: &str) -> Option<&ResourceUtilization> {
        self.resources.iter().find(|r| r.resource == name)
    }
}

/// Per-window busy fraction and served volume of each resource, up to
/// `until` seconds.
pub fn utilization(resources: &[&RateResource], until: f64) -> Result<UtilizationSeries, TelemetryError> {
    let mut window = 0.0;
    let mut out = Vec::new();
    for r in resources {
        let w = r.windows().ok_or(TelemetryError::BadInterval)?;
        if w.width() == 0 {
            return Err(TelemetryError::BadInterval);
        }
        window = nanos_to_secs(w.width());
        let n = ((until / window).ceil() as usize).min(w.busy().len());
        let windows = (0..n)
            .map(|i| UtilizationWindow {
                start: i as f64 * window,
                busy_fraction: (w.busy()[i] as f64 / w.width() as f64).min(1.0),
                served: w.units()[i],
            })
            .collect();
        out.push(ResourceUtilization {
            resource: r.name().to_string(),
            capacity: r.capacity(),
            windows,
        });
    }
    Ok(UtilizationSeries {
        window,
        resources: out,
    })
}

/// Column order of `frames.csv`.
pub const FRAME_CSV_COLUMNS: [&str; 13] = [
    "frame_id",
    "producer_id",
    "scheduled_start",
    "ingest_start",
    "ingest_end",
    "detect_end",
    "produce_enqueue",
    "fetch_deliver",
    "identify_start",
    "identify_end",
    "fanout",
    "item_bytes",
    "total_bytes",
];

/// Seconds with nanosecond resolution, formatted from the integer clock.
pub fn fmt_secs(ns: u64) -> String {
    format!("{}.{:09}", ns / 1_000_000_000, ns % 1_000_000_000)
}

fn opt_secs(ns: Option<u64>) -> String {
    ns.map(fmt_secs).unwrap_or_default()
}

pub fn write_frame_csv_header<W: Write + ?Sized>(w: &mut W) -> io::Result<()> {
    writeln!(w, "{}", FRAME_CSV_COLUMNS.join(","))
}

pub fn write_frame_csv_row<W: Write + ?Sized>(w: &mut W, r: &FrameRecord) -> io::Result<()> {
    writeln!(
        w,
        "{},{},{},{},{},{},{},{},{},{},{},{},{}",
        r.frame_id,
        r.producer_id,
        fmt_secs(r.scheduled_start),
        fmt_secs(r.ingest_start),
        fmt_secs(r.ingest_end),
        fmt_secs(r.detect_end),
        opt_secs(r.produce_enqueue),
        opt_secs(r.fetch_deliver),
        opt_secs(r.identify_start),
        opt_secs(r.identify_end),
        r.fanout,
        r.item_bytes,
        r.total_bytes(),
    )
}

/// Column order of `utilization.csv`.
pub const UTILIZATION_CSV_COLUMNS: [&str; 5] =
    ["window_start", "resource", "capacity", "busy_fraction", "served"];

pub fn write_utilization_csv<W: Write + ?Sized>(w: &mut W, u: &UtilizationSeries) -> io::Result<()> {
    writeln!(w, "{}", UTILIZATION_CSV_COLUMNS.join(","))?;
    for r in &u.resources {
        for x in &r.windows {
            writeln!(
                w,
                "{:.3},{},{},{:.6},{}",
                x.start, r.resource, r.capacity, x.busy_fraction, x.served
            )?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    const MS: u64 = 1_000_000;

    fn frame(id: u64, start: u64, stages: [u64; 4]) -> FrameRecord {
        let ingest_end = start + stages[0];
        let detect_end = ingest_end + stages[1];
        let identify_start = detect_end + stages[2];
        FrameRecord {
            frame_id: id,
            producer_id: 0,
            scheduled_start: start,
            ingest_start: start,
            ingest_end,
            detect_end,
            produce_enqueue: Some(detect_end),
            fetch_deliver: Some(identify_start),
            identify_start: Some(identify_start),
            identify_end: Some(identify_start + stages[3]),
            fanout: 1,
            item_bytes: 100,
        }
    }

    #[test]
    fn synthetic_breakdown() {
        let log: Vec<_> = (0..200)
            .map(|i| frame(i, i * 100 * MS, [10 * MS, 20 * MS, 30 * MS, 40 * MS]))
            .collect();
        let b = breakdown(&log, ProducerMode::SelfPaced).unwrap();
        let means: Vec<f64> = b.stages.iter().map(|(_, s)| s.mean).collect();
        for (m, want) in means.iter().zip([0.010, 0.020, 0.030, 0.040]) {
            assert!((m - want).abs() < 1e-12);
        }
        assert!((b.end_to_end.mean - 0.100).abs() < 1e-12);
        assert!((b.wait_fraction - 0.30).abs() < 1e-12);
        assert_eq!(b.samples, 200);
    }

    #[test]
    fn empty_and_unordered_logs_are_errors() {
        assert_eq!(breakdown(&[], ProducerMode::SelfPaced), Err(TelemetryError::EmptyLog));
        let mut f = frame(7, 0, [MS, MS, MS, MS]);
        f.detect_end = 0;
        assert_eq!(
            breakdown(&[f], ProducerMode::SelfPaced),
            Err(TelemetryError::Unordered(7))
        );
    }

    #[test]
    fn nearest_rank_matches_definition() {
        let mut v: Vec<u64> = (1..=100).rev().collect();
        assert_eq!(nearest_rank(&mut v, 0.99), 99);
        let mut v: Vec<u64> = (1..=1000).collect();
        assert_eq!(nearest_rank(&mut v, 0.99), 990);
    }

    fn latency_log(f: impl Fn(u64) -> u64) -> Vec<FrameRecord> {
        // 100 s horizon, 10 s warmup, one frame every 100 ms.
        (0..1000)
            .map(|i| {
                let t = i * 100 * MS;
                let epoch = t.saturating_sub(10_000 * MS) / (9_000 * MS);
                frame(i, t, [0, 0, 0, f(epoch)])
            })
            .collect()
    }

    #[test]
    fn constant_latency_is_stable() {
        let log = latency_log(|_| 100 * MS);
        let v = detect_instability(&log, 10.0, 100.0, &BTreeMap::new()).unwrap();
        assert!(v.stable);
    }

    #[test]
    fn growing_latency_is_unstable() {
        let log = latency_log(|k| 100 * MS + k * 10 * MS);
        let v = detect_instability(&log, 10.0, 100.0, &BTreeMap::new()).unwrap();
        assert_eq!(v.increasing_steps, 9);
        assert!(!v.stable);
    }

    #[test]
    fn monotone_backlog_is_unstable_and_binds() {
        let log = latency_log(|_| 100 * MS);
        let mut b = BTreeMap::new();
        b.insert(
            "broker-storage".to_string(),
            (0..100u64).map(|s| (s * 1000 * MS, s as f64 * 0.01)).collect(),
        );
        b.insert("broker-network".to_string(), (0..100u64).map(|s| (s * 1000 * MS, 0.0)).collect());
        let v = detect_instability(&log, 10.0, 100.0, &b).unwrap();
        assert!(!v.stable);
        assert!(v.max_queue_trend);
        assert_eq!(v.binding_resource.as_deref(), Some("broker-storage"));
    }

    #[test]
    fn short_horizon_is_an_error() {
        assert!(detect_instability(&[], 60.0, 60.0, &BTreeMap::new()).is_err());
    }

    #[test]
    fn idle_resource_has_zero_utilization() {
        let r = RateResource::new("disk", 1.0).with_windows(1_000_000_000, 5);
        let u = utilization(&[&r], 5.0).unwrap();
        assert!(u.resources[0].windows.iter().all(|w| w.busy_fraction == 0.0 && w.served == 0.0));
        assert_eq!(u.resources[0].windows.len(), 5);
    }

    #[test]
    fn wait_series_rejects_unstable_runs() {
        let log: Vec<_> = (0..10).map(|i| frame(i, i * MS, [MS, MS, MS, MS])).collect();
        let b = breakdown(&log, ProducerMode::SelfPaced).unwrap();
        let mut v = verdict_from_epochs(vec![1.0; 10], BTreeMap::new());
        assert!(waiting_fraction_series(&[(1.0, &b, &v)]).unwrap().nondecreasing);
        v.stable = false;
        assert_eq!(
            waiting_fraction_series(&[(8.0, &b, &v)]),
            Err(TelemetryError::UnstableRun(8.0))
        );
    }

    #[test]
    fn csv_seconds_are_exact() {
        assert_eq!(fmt_secs(1_500_000_001), "1.500000001");
        assert_eq!(fmt_secs(0), "0.000000000");
    }
}
