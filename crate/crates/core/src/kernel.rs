//! Discrete-event kernel: virtual clock, ordered event queue, rate-limited
//! resources and seeded random streams.
//!
//! Virtual time is an integer count of nanoseconds. Events dispatch in
//! `(time, sequence)` order where the sequence number is assigned at
//! scheduling time, so same-time events run in the order they were scheduled.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use rand_chacha::ChaCha8Rng;
use rand_core::{Rng, SeedableRng};
use thiserror::Error;

/// Nanoseconds per virtual second.
pub const NANOS_PER_SEC: u64 = 1_000_000_000;

/// Converts seconds to virtual nanoseconds (round to nearest).
pub fn secs_to_nanos(secs: f64) -> u64 {
    if secs <= 0.0 {
        0
    } else {
        (secs * NANOS_PER_SEC as f64).round() as u64
    }
}

pub fn nanos_to_secs(nanos: u64) -> f64 {
    nanos as f64 / NANOS_PER_SEC as f64
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum KernelError {
    #[error("cannot schedule at {at} ns: clock is already at {now} ns")]
    InThePast { at: u64, now: u64 },
    #[error("cannot run until {until} ns: clock is already at {now} ns")]
    BackwardsRun { until: u64, now: u64 },
    #[error("resource `{resource}`: demand must be positive, got {units}")]
    NonPositiveDemand { resource: String, units: f64 },
}

/// Identifies a scheduled event.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct EventHandle {
    pub time: u64,
    pub sequence: u64,
}

struct Entry<E> {
    time: u64,
    sequence: u64,
    event: E,
}

impl<E> PartialEq for Entry<E> {
    fn eq(&self, other: &Self) -> bool {
        self.time == other.time && self.sequence == other.sequence
    }
}

impl<E> Eq for Entry<E> {}

impl<E> PartialOrd for Entry<E> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl<E> Ord for Entry<E> {
    // BinaryHeap is a max-heap; invert so the earliest (time, sequence) pops first.
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .time
            .cmp(&self.time)
            .then_with(|| other.sequence.cmp(&self.sequence))
    }
}

/// Event queue plus virtual clock.
pub struct EventQueue<E> {
    heap: BinaryHeap<Entry<E>>,
    now: u64,
    next_sequence: u64,
    dispatched: u64,
}

impl<E> Default for EventQueue<E> {
    fn default() -> Self {
        Self::new()
    }
}

impl<E> EventQueue<E> {
    pub fn new() -> Self {
        Self {
            heap: BinaryHeap::new(),
            now: 0,
            next_sequence: 0,
            dispatched: 0,
        }
    }

    pub fn now(&self) -> u64 {
        self.now
    }

    pub fn len(&self) -> usize {
        self.heap.len()
    }

    pub fn is_empty(&self) -> bool {
        self.heap.is_empty()
    }

    /// Number of events dispatched so far.
    pub fn dispatched(&self) -> u64 {
        self.dispatched
    }

    /// Schedules `event` at absolute virtual time `at`.
    pub fn schedule(&mut self, at: u64, event: impl Into<E>) -> Result<EventHandle, KernelError> {
        if at < self.now {
            return Err(KernelError::InThePast { at, now: self.now });
        }
        Ok(self.push(at, event.into()))
    }

    /// Schedules `event` `delay` nanoseconds from now.
    pub fn schedule_in(&mut self, delay: u64, event: impl Into<E>) -> EventHandle {
        let at = self.now + delay;
        self.push(at, event.into())
    }

    /// Schedules at `max(at, now)`. Used by model code whose arithmetic
    /// already guarantees `at >= now`.
    pub(crate) fn schedule_at_or_now(&mut self, at: u64, event: impl Into<E>) -> EventHandle {
        let at = at.max(self.now);
        self.push(at, event.into())
    }

    fn push(&mut self, time: u64, event: E) -> EventHandle {
        let sequence = self.next_sequence;
        self.next_sequence += 1;
        self.heap.push(Entry {
            time,
            sequence,
            event,
        });
        EventHandle { time, sequence }
    }

    /// Pops the next event if it is due at or before `t_end`, advancing the clock.
    pub fn pop_until(&mut self, t_end: u64) -> Option<(u64, E)> {
        match self.heap.peek() {
            Some(top) if top.time <= t_end => {
                let entry = self.heap.pop().expect("peeked");
                debug_assert!(entry.time >= self.now);
                self.now = entry.time;
                self.dispatched += 1;
                Some((entry.time, entry.event))
            }
            _ => None,
        }
    }

    /// Dispatches every event due at or before `t_end` to `handler`, then
    /// sets the clock to `t_end`.
    pub fn run_until<F>(&mut self, t_end: u64, mut handler: F) -> Result<u64, KernelError>
    where
        F: FnMut(&mut Self, u64, E),
    {
        if t_end < self.now {
            return Err(KernelError::BackwardsRun {
                until: t_end,
                now: self.now,
            });
        }
        while let Some((t, ev)) = self.pop_until(t_end) {
            handler(self, t, ev);
        }
        self.now = t_end;
        Ok(self.now)
    }
}

/// Per-window busy time and served volume for one resource.
#[derive(Debug, Clone)]
pub struct WindowAccumulator {
    width: u64,
    busy: Vec<u64>,
    units: Vec<f64>,
}

impl WindowAccumulator {
    /// `bins` windows of `width` nanoseconds starting at time zero. Work
    /// falling beyond the last window is dropped.
    pub fn new(width: u64, bins: usize) -> Self {
        assert!(width > 0, "window width must be positive");
        Self {
            width,
            busy: vec![0; bins],
            units: vec![0.0; bins],
        }
    }

    pub fn width(&self) -> u64 {
        self.width
    }

    pub fn busy(&self) -> &[u64] {
        &self.busy
    }

    pub fn units(&self) -> &[f64] {
        &self.units
    }

    /// Spreads a busy interval `[start, end)` serving `units` over the windows.
    pub fn add(&mut self, start: u64, end: u64, units: f64) {
        if end <= start {
            if let Some(u) = self.units.get_mut((start / self.width) as usize) {
                *u += units;
            }
            return;
        }
        let span = (end - start) as f64;
        let mut t = start;
        let mut bin = (start / self.width) as usize;
        while t < end && bin < self.busy.len() {
            let bin_end = (bin as u64 + 1) * self.width;
            let seg_end = bin_end.min(end);
            let seg = seg_end - t;
            self.busy[bin] += seg;
            self.units[bin] += units * seg as f64 / span;
            t = seg_end;
            bin += 1;
        }
    }
}

/// A capacity-limited FIFO server. Demands are expressed in units (bytes,
/// bits, requests) and served at `capacity` units per second.
#[derive(Debug, Clone)]
pub struct RateResource {
    name: String,
    capacity: f64,
    busy_until: u64,
    served_units: f64,
    busy_nanos: u64,
    demands: u64,
    windows: Option<WindowAccumulator>,
}

impl RateResource {
    pub fn new(name: impl Into<String>, capacity: f64) -> Self {
        assert!(capacity > 0.0, "resource capacity must be positive");
        Self {
            name: name.into(),
            capacity,
            busy_until: 0,
            served_units: 0.0,
            busy_nanos: 0,
            demands: 0,
            windows: None,
        }
    }

    pub fn with_windows(mut self, width: u64, bins: usize) -> Self {
        self.windows = Some(WindowAccumulator::new(width, bins));
        self
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn capacity(&self) -> f64 {
        self.capacity
    }

    pub fn busy_until(&self) -> u64 {
        self.busy_until
    }

    pub fn served_units(&self) -> f64 {
        self.served_units
    }

    pub fn busy_nanos(&self) -> u64 {
        self.busy_nanos
    }

    pub fn demands(&self) -> u64 {
        self.demands
    }

    pub fn windows(&self) -> Option<&WindowAccumulator> {
        self.windows.as_ref()
    }

    /// Service time of a demand, in nanoseconds.
    pub fn service_nanos(&self, units: f64) -> u64 {
        secs_to_nanos(units / self.capacity)
    }

    /// Enqueues a demand of `units` arriving at `now`; returns the virtual
    /// time at which it completes: `max(now, busy_until) + units / capacity`.
    pub fn acquire(&mut self, now: u64, units: f64) -> Result<u64, KernelError> {
        if !(units > 0.0) {
            return Err(KernelError::NonPositiveDemand {
                resource: self.name.clone(),
                units,
            });
        }
        Ok(self.serve(now, units))
    }

    pub(crate) fn serve(&mut self, now: u64, units: f64) -> u64 {
        self.serve_for(now, units, self.service_nanos(units))
    }

    /// Like `serve`, with the service time supplied by the caller.
    pub(crate) fn serve_for(&mut self, now: u64, units: f64, service: u64) -> u64 {
        let start = now.max(self.busy_until);
        let end = start + service;
        self.busy_until = end;
        self.served_units += units;
        self.busy_nanos += service;
        self.demands += 1;
        if let Some(w) = self.windows.as_mut() {
            w.add(start, end, units);
        }
        end
    }

    /// Pending work at `now`, in nanoseconds of service.
    pub fn backlog_nanos(&self, now: u64) -> u64 {
        self.busy_until.saturating_sub(now)
    }

    /// Pending work at `now`, in units. Never negative.
    pub fn queue_units(&self, now: u64) -> f64 {
        nanos_to_secs(self.backlog_nanos(now)) * self.capacity
    }
}

/// Draw sites. Each `(site, entity)` pair gets its own stream so adding or
/// removing draws at one site never shifts another.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum DrawSite {
    StartPhase = 1,
    Ingest = 2,
    Detect = 3,
    Fanout = 4,
    Partition = 5,
    Identify = 6,
    Synthetic = 7,
}

/// Seeded, portable random stream (ChaCha8, one stream per draw site).
///
/// Floating-point transforms use `libm` so draws are bit-identical across
/// platforms.
#[derive(Debug, Clone)]
pub struct SimRng {
    inner: ChaCha8Rng,
    spare_normal: Option<f64>,
}

impl SimRng {
    pub fn new(seed: u64) -> Self {
        Self {
            inner: ChaCha8Rng::seed_from_u64(seed),
            spare_normal: None,
        }
    }

    /// Independent stream for `(site, entity)` under the run seed.
    pub fn stream(seed: u64, site: DrawSite, entity: u64) -> Self {
        let mut inner = ChaCha8Rng::seed_from_u64(seed);
        inner.set_stream(((site as u64) << 56) ^ entity);
        Self {
            inner,
            spare_normal: None,
        }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    /// Uniform on (0, 1].
    pub fn uniform(&mut self) -> f64 {
        ((self.next_u64() >> 11) + 1) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform integer in `0..n` (Lemire's nearly-divisionless method).
    pub fn below(&mut self, n: u64) -> u64 {
        assert!(n > 0);
        let mut m = (self.next_u64() as u128) * (n as u128);
        let mut low = m as u64;
        if low < n {
            let threshold = n.wrapping_neg() % n;
            while low < threshold {
                m = (self.next_u64() as u128) * (n as u128);
                low = m as u64;
            }
        }
        (m >> 64) as u64
    }

    /// Standard normal draw via Box-Muller.
    pub fn standard_normal(&mut self) -> f64 {
        if let Some(z) = self.spare_normal.take() {
            return z;
        }
        let u1 = self.uniform();
        let u2 = self.uniform();
        let r = libm::sqrt(-2.0 * libm::log(u1));
        let theta = 2.0 * std::f64::consts::PI * u2;
        self.spare_normal = Some(r * libm::sin(theta));
        r * libm::cos(theta)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_now_runs_before_later_events() {
        let mut q: EventQueue<&str> = EventQueue::new();
        q.schedule(5, "later").unwrap();
        q.schedule(0, "now").unwrap();
        let mut seen = vec![];
        q.run_until(10, |_, _, e| seen.push(e)).unwrap();
        assert_eq!(seen, vec!["now", "later"]);
    }

    #[test]
    fn equal_times_run_in_scheduling_order() {
        let mut q: EventQueue<u32> = EventQueue::new();
        for i in 0..50u32 {
            q.schedule(7, i).unwrap();
        }
        let mut seen = vec![];
        q.run_until(7, |_, _, e| seen.push(e)).unwrap();
        assert_eq!(seen, (0..50).collect::<Vec<_>>());
    }

    #[test]
    fn scheduling_in_the_past_is_rejected() {
        let mut q: EventQueue<()> = EventQueue::new();
        q.run_until(100, |_, _, _| {}).unwrap();
        assert_eq!(
            q.schedule(99, ()),
            Err(KernelError::InThePast { at: 99, now: 100 })
        );
    }

    #[test]
    fn run_until_empty_queue_returns_t_end() {
        let mut q: EventQueue<()> = EventQueue::new();
        assert_eq!(q.run_until(10 * NANOS_PER_SEC, |_, _, _| {}).unwrap(), 10 * NANOS_PER_SEC);
    }

    #[test]
    fn run_until_dispatches_due_event_and_advances_to_end() {
        let mut q: EventQueue<()> = EventQueue::new();
        q.schedule(5 * NANOS_PER_SEC, ()).unwrap();
        let mut ran = 0;
        let clock = q.run_until(10 * NANOS_PER_SEC, |_, _, _| ran += 1).unwrap();
        assert_eq!(ran, 1);
        assert_eq!(clock, 10 * NANOS_PER_SEC);
    }

    #[test]
    fn self_scheduling_chain_dispatches_ten_times() {
        let mut q: EventQueue<()> = EventQueue::new();
        q.schedule(NANOS_PER_SEC, ()).unwrap();
        let mut count = 0;
        q.run_until(10 * NANOS_PER_SEC, |q, _, _| {
            count += 1;
            q.schedule_in(NANOS_PER_SEC, ());
        })
        .unwrap();
        assert_eq!(count, 10);
    }

    #[test]
    fn idle_resource_serves_one_second_of_work() {
        let mut r = RateResource::new("disk", 1.1e9);
        assert_eq!(r.acquire(0, 1.1e9).unwrap(), NANOS_PER_SEC);
    }

    #[test]
    fn back_to_back_demands_are_fifo() {
        let mut r = RateResource::new("disk", 1.0);
        assert_eq!(r.acquire(0, 1.0).unwrap(), NANOS_PER_SEC);
        assert_eq!(r.acquire(0, 1.0).unwrap(), 2 * NANOS_PER_SEC);
        assert_eq!(r.queue_units(0), 2.0);
    }

    #[test]
    fn nonpositive_demand_is_rejected() {
        let mut r = RateResource::new("disk", 1.0);
        assert!(r.acquire(0, 0.0).is_err());
        assert!(r.acquire(0, -3.0).is_err());
        assert!(r.acquire(0, f64::NAN).is_err());
    }

    #[test]
    fn windows_split_busy_intervals() {
        let mut w = WindowAccumulator::new(10, 3);
        w.add(5, 25, 20.0);
        assert_eq!(w.busy(), &[5, 10, 5]);
        assert_eq!(w.units(), &[5.0, 10.0, 5.0]);
    }

    #[test]
    fn streams_are_reproducible_and_independent() {
        let a: Vec<u64> = {
            let mut r = SimRng::stream(7, DrawSite::Ingest, 3);
            (0..8).map(|_| r.next_u64()).collect()
        };
        let b: Vec<u64> = {
            let mut r = SimRng::stream(7, DrawSite::Ingest, 3);
            (0..8).map(|_| r.next_u64()).collect()
        };
        let c: Vec<u64> = {
            let mut r = SimRng::stream(7, DrawSite::Detect, 3);
            (0..8).map(|_| r.next_u64()).collect()
        };
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn below_stays_in_range() {
        let mut r = SimRng::new(1);
        let mut counts = [0u32; 3];
        for _ in 0..30_000 {
            counts[r.below(3) as usize] += 1;
        }
        for c in counts {
            assert!((9_000..11_000).contains(&c), "{counts:?}");
        }
    }

    #[test]
    fn normal_moments() {
        let mut r = SimRng::new(11);
        let n = 200_000;
        let xs: Vec<f64> = (0..n).map(|_| r.standard_normal()).collect();
        let mean = xs.iter().sum::<f64>() / n as f64;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n as f64;
        assert!(mean.abs() < 0.01, "{mean}");
        assert!((var - 1.0).abs() < 0.02, "{var}");
    }
}
