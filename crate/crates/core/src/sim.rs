//! Discrete-event simulation of the producer -> broker -> consumer pipeline.
//!
//! One [`World`] owns every entity; the event queue is kept outside it so
//! handlers can schedule while mutating state. Frames, items and batches
//! live in slabs indexed by `u32`.

use std::collections::{BTreeMap, VecDeque};
use std::io::Write;

use serde::Serialize;
use thiserror::Error;

use crate::analytic;
use crate::broker::{self, bits, BrokerError, BrokerNode, ProducerBatch, Topic};
use crate::kernel::{nanos_to_secs, secs_to_nanos, DrawSite, EventQueue, RateResource, SimRng};
use crate::scenario::{PartitionChoice, ProducerMode, ScenarioError, ScenarioSpec};
use crate::stages::{frames_per_tick, AccelerationTransform, FanoutSampler, FrameRecord, Sampler, StageError};
use crate::telemetry::{
    self, epoch_means_of_samples, verdict_from_epochs, BreakdownAccumulator, BreakdownReport,
    EpochAccumulator, InstabilityVerdict, StageLayout, TelemetryError,
    UtilizationSeries,
};

#[derive(Debug, Error)]
pub enum SimError {
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error(transparent)]
    Stage(#[from] StageError),
    #[error(transparent)]
    Broker(#[from] BrokerError),
    #[error(transparent)]
    Telemetry(#[from] TelemetryError),
    #[error("invalid run configuration: {0}")]
    Config(String),
    #[error("frame sink failed: {0}")]
    Sink(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunConfig {
    pub seed: u64,
    /// Seconds of virtual time.
    pub horizon: f64,
    /// Seconds excluded from statistics.
    pub warmup: f64,
    /// Seconds between backlog samples.
    pub sample_interval: f64,
    /// Stop once any backlog exceeds this many seconds.
    pub divergence_limit: Option<f64>,
    /// Exact percentiles instead of a 3-digit histogram.
    pub exact_percentiles: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            horizon: 600.0,
            warmup: 60.0,
            sample_interval: 1.0,
            divergence_limit: Some(60.0),
            exact_percentiles: false,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        if !(self.warmup >= 0.0 && self.horizon > self.warmup && self.horizon.is_finite()) {
            return Err(SimError::Config(format!(
                "need 0 <= warmup < horizon, got warmup {} horizon {}",
                self.warmup, self.horizon
            )));
        }
        if !(self.sample_interval > 0.0) {
            return Err(SimError::Config("sample interval must be positive".into()));
        }
        if matches!(self.divergence_limit, Some(l) if !(l > 0.0)) {
            return Err(SimError::Config("divergence limit must be positive".into()));
        }
        Ok(())
    }
}

/// Receives every frame record once: completed frames as they finish, then
/// in-flight frames at the horizon.
pub trait FrameSink {
    fn frame(&mut self, record: &FrameRecord) -> std::io::Result<()>;
}

impl FrameSink for () {
    fn frame(&mut self, _: &FrameRecord) -> std::io::Result<()> {
        Ok(())
    }
}

impl FrameSink for Vec<FrameRecord> {
    fn frame(&mut self, record: &FrameRecord) -> std::io::Result<()> {
        self.push(record.clone());
        Ok(())
    }
}

/// Streams `frames.csv` rows.
pub struct CsvSink<W: Write> {
    out: W,
}

impl<W: Write> CsvSink<W> {
    pub fn new(mut out: W) -> std::io::Result<Self> {
        telemetry::write_frame_csv_header(&mut out)?;
        Ok(Self { out })
    }

    pub fn into_inner(self) -> W {
        self.out
    }
}

impl<W: Write> FrameSink for CsvSink<W> {
    fn frame(&mut self, record: &FrameRecord) -> std::io::Result<()> {
        telemetry::write_frame_csv_row(&mut self.out, record)
    }
}

/// FNV-1a over the CSV rendering; cheap determinism fingerprint.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HashSink(pub u64);

impl Default for HashSink {
    fn default() -> Self {
        HashSink(0xcbf2_9ce4_8422_2325)
    }
}

impl Write for HashSink {
    fn write(&mut self, buf: &[u8]) -> std::io::Result<usize> {
        for b in buf {
            self.0 ^= *b as u64;
            self.0 = self.0.wrapping_mul(0x0100_0000_01b3);
        }
        Ok(buf.len())
    }

    fn flush(&mut self) -> std::io::Result<()> {
        Ok(())
    }
}

impl FrameSink for HashSink {
    fn frame(&mut self, record: &FrameRecord) -> std::io::Result<()> {
        telemetry::write_frame_csv_row(self, record)
    }
}

/// Mean load on one class of resource over the measurement window.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClassLoad {
    pub resource: String,
    /// Mean busy fraction across instances.
    pub busy_fraction: f64,
    /// Served units per second per instance.
    pub rate: f64,
    pub capacity: f64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Conservation {
    pub frames_emitted: u64,
    pub frames_completed: u64,
    pub frames_without_items: u64,
    pub frames_in_flight: u64,
    pub items_produced: u64,
    pub items_fetched: u64,
    pub items_resident: u64,
    pub bytes_produced: u64,
    pub storage_bytes_written: u64,
    pub storage_bytes_pending: u64,
    pub storage_bytes_read: u64,
    pub cache_bytes_read: u64,
    /// Fetches that skipped or repeated a partition offset.
    pub fifo_violations: u64,
    pub replication_factor: u32,
}

impl Conservation {
    pub fn frames_balance(&self) -> bool {
        self.frames_emitted == self.frames_completed + self.frames_without_items + self.frames_in_flight
    }

    pub fn items_balance(&self) -> bool {
        self.items_produced == self.items_fetched + self.items_resident
    }

    /// Written plus still-owed replica bytes equal R times produced bytes.
    pub fn replication_balance(&self) -> bool {
        self.storage_bytes_written + self.storage_bytes_pending
            == self.replication_factor as u64 * self.bytes_produced
    }

    pub fn holds(&self) -> bool {
        self.frames_balance()
            && self.items_balance()
            && self.replication_balance()
            && self.fifo_violations == 0
            && self.storage_bytes_read == 0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunResult {
    pub scenario: String,
    pub acceleration: f64,
    pub config: RunConfig,
    /// Missing when no frame completed inside the window.
    pub breakdown: Option<BreakdownReport>,
    pub verdict: InstabilityVerdict,
    pub prediction: analytic::StabilityVerdict,
    pub loads: Vec<ClassLoad>,
    /// Storage bytes written per broker, leader and follower writes alike.
    pub broker_storage_bytes: Vec<u64>,
    pub conservation: Conservation,
    pub events: u64,
    /// Seconds of virtual time actually simulated.
    pub simulated: f64,
    pub utilization: UtilizationSeries,
}

impl RunResult {
    pub fn stable(&self) -> bool {
        self.verdict.stable
    }

    pub fn load(&self, resource: &str) -> Option<&ClassLoad> {
        self.loads.iter().find(|l| l.resource == resource)
    }
}

#[derive(Debug, Clone, Copy)]
enum Ev {
    Start(u32),
    DetectDone(u32),
    Tick(u32),
    IngestDone(u32),
    SendDone(u32),
    Linger(u32, u32),
    LeaderWrite(u32),
    Appended(u32),
    FollowerWrite(u32, u32),
    FetchTimeout(u32, u32),
    Delivered(u32),
    ItemDone(u32),
    Sample,
}

struct Slab<T> {
    slots: Vec<Option<T>>,
    free: Vec<u32>,
    live: usize,
}

impl<T> Slab<T> {
    fn new() -> Self {
        Self {
            slots: Vec::new(),
            free: Vec::new(),
            live: 0,
        }
    }

    fn insert(&mut self, v: T) -> u32 {
        self.live += 1;
        if let Some(i) = self.free.pop() {
            self.slots[i as usize] = Some(v);
            i
        } else {
            self.slots.push(Some(v));
            (self.slots.len() - 1) as u32
        }
    }

    fn remove(&mut self, i: u32) -> T {
        self.live -= 1;
        self.free.push(i);
        self.slots[i as usize].take().expect("live slab slot")
    }

    fn get(&self, i: u32) -> &T {
        self.slots[i as usize].as_ref().expect("live slab slot")
    }

    fn get_mut(&mut self, i: u32) -> &mut T {
        self.slots[i as usize].as_mut().expect("live slab slot")
    }

    fn iter(&self) -> impl Iterator<Item = &T> {
        self.slots.iter().flatten()
    }
}

struct Frame {
    rec: FrameRecord,
    items_left: u32,
}

#[derive(Clone, Copy)]
struct Item {
    frame: u32,
}

struct BatchSlot {
    batch: ProducerBatch,
    generation: u32,
}

struct Producer {
    frame: u32,
    phase: u64,
    tick: u64,
    set_left: u32,
    open: Vec<(u32, u32)>,
    next_partition: u32,
    send: RateResource,
    net_out: RateResource,
    ingest_rng: SimRng,
    detect_rng: SimRng,
    fanout_rng: SimRng,
    partition_rng: SimRng,
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum FetchState {
    Polling,
    InTransit,
    Busy,
}

struct Consumer {
    partitions: Vec<u32>,
    pending_bytes: u64,
    state: FetchState,
    token: u32,
    inbox: VecDeque<u32>,
    current: Option<u32>,
    last_frame: Option<u32>,
    net_in: RateResource,
    rng: SimRng,
}

struct World<'s, S: FrameSink> {
    spec: ScenarioSpec,
    accel: AccelerationTransform,
    interval: u64,
    item_bytes: u64,
    per_item: bool,
    set_size: u32,
    linger: u64,
    max_batch: f64,
    fetch_min: u64,
    fetch_wait: u64,
    sample_every: u64,
    divergence: Option<u64>,
    ingest: Sampler,
    detect: Sampler,
    consume: Sampler,
    fanout: FanoutSampler,
    topic: Topic,
    brokers: Vec<BrokerNode>,
    producers: Vec<Producer>,
    consumers: Vec<Consumer>,
    frames: Slab<Frame>,
    items: Slab<Item>,
    batches: Slab<BatchSlot>,
    generation: u32,
    next_frame_id: u64,
    breakdown: BreakdownAccumulator,
    epochs: EpochAccumulator,
    backlogs: BTreeMap<String, Vec<(u64, f64)>>,
    truncated_at: Option<u64>,
    counts: Conservation,
    sink: &'s mut S,
    sink_error: Option<std::io::Error>,
}

type Queue = EventQueue<Ev>;

impl<S: FrameSink> World<'_, S> {
    fn new_frame(&mut self, producer: u32, scheduled: u64, now: u64) -> u32 {
        let rec = FrameRecord {
            frame_id: self.next_frame_id,
            producer_id: producer,
            scheduled_start: scheduled,
            ingest_start: now,
            ingest_end: now,
            detect_end: now,
            produce_enqueue: None,
            fetch_deliver: None,
            identify_start: None,
            identify_end: None,
            fanout: 0,
            item_bytes: self.item_bytes,
        };
        self.next_frame_id += 1;
        self.counts.frames_emitted += 1;
        self.breakdown.count_started(now);
        self.frames.insert(Frame { rec, items_left: 0 })
    }

    fn emit(&mut self, rec: &FrameRecord) {
        if self.sink_error.is_none() {
            if let Err(e) = self.sink.frame(rec) {
                self.sink_error = Some(e);
            }
        }
    }

    fn complete(&mut self, f: u32) {
        let frame = self.frames.remove(f);
        let rec = frame.rec;
        self.breakdown.record_complete(&rec);
        if rec.fanout > 0 {
            self.counts.frames_completed += 1;
            let end = rec.identify_end.expect("completed frame has an end");
            self.epochs.record(rec.scheduled_start, end - rec.scheduled_start);
        } else {
            self.counts.frames_without_items += 1;
        }
        self.emit(&rec);
    }

    // Self-paced producers.

    fn start_self_paced(&mut self, q: &mut Queue, p: u32, now: u64) {
        let f = self.new_frame(p, now, now);
        let prod = &mut self.producers[p as usize];
        let ingest = self.ingest.sample_nanos(&mut prod.ingest_rng, self.accel);
        let detect = self.detect.sample_nanos(&mut prod.detect_rng, self.accel);
        prod.frame = f;
        let rec = &mut self.frames.get_mut(f).rec;
        rec.ingest_end = now + ingest;
        rec.detect_end = rec.ingest_end + detect;
        q.schedule_at_or_now(rec.detect_end, Ev::DetectDone(p));
    }

    fn detect_done(&mut self, q: &mut Queue, p: u32, now: u64) {
        let f = self.producers[p as usize].frame;
        self.produce_frame(q, p, f, now);
        self.start_self_paced(q, p, now);
    }

    /// Draws fan-out and pushes every item through the producer send path.
    /// Returns when the last send completes.
    fn produce_frame(&mut self, q: &mut Queue, p: u32, f: u32, now: u64) -> u64 {
        let k = self.fanout.sample(&mut self.producers[p as usize].fanout_rng);
        {
            let frame = self.frames.get_mut(f);
            frame.rec.fanout = k;
            frame.items_left = k;
            if k > 0 {
                frame.rec.produce_enqueue = Some(now);
            }
        }
        if k == 0 {
            self.complete(f);
            return now;
        }
        let mut done = now;
        for _ in 0..k {
            let prod = &mut self.producers[p as usize];
            let sent = prod.send.serve(now, self.item_bytes as f64);
            let partition = match self.spec.partition_choice {
                PartitionChoice::Random => prod.partition_rng.below(self.spec.partitions as u64) as u32,
                PartitionChoice::RoundRobin => {
                    let x = prod.next_partition;
                    prod.next_partition = (x + 1) % self.spec.partitions;
                    x
                }
            };
            let item = self.items.insert(Item { frame: f });
            self.add_to_batch(q, p, partition, item, sent);
            done = done.max(sent);
        }
        done
    }

    // Scheduled producers.

    fn tick_time(&self, p: u32, tick: u64) -> u64 {
        let prod = &self.producers[p as usize];
        prod.phase + secs_to_nanos(tick as f64 * nanos_to_secs(self.interval))
    }

    fn start_set(&mut self, q: &mut Queue, p: u32, now: u64) {
        self.producers[p as usize].set_left = self.set_size;
        self.start_scheduled(q, p, now);
    }

    fn start_scheduled(&mut self, q: &mut Queue, p: u32, now: u64) {
        let scheduled = self.tick_time(p, self.producers[p as usize].tick);
        let f = self.new_frame(p, scheduled, now);
        let prod = &mut self.producers[p as usize];
        let ingest = self.ingest.sample_nanos(&mut prod.ingest_rng, self.accel);
        prod.frame = f;
        let rec = &mut self.frames.get_mut(f).rec;
        rec.ingest_end = now + ingest;
        rec.detect_end = rec.ingest_end;
        q.schedule_at_or_now(rec.ingest_end, Ev::IngestDone(p));
    }

    fn ingest_done(&mut self, q: &mut Queue, p: u32, now: u64) {
        let f = self.producers[p as usize].frame;
        let done = self.produce_frame(q, p, f, now);
        q.schedule_at_or_now(done, Ev::SendDone(p));
    }

    fn send_done(&mut self, q: &mut Queue, p: u32, now: u64) {
        let prod = &mut self.producers[p as usize];
        prod.set_left -= 1;
        if prod.set_left > 0 {
            self.start_scheduled(q, p, now);
            return;
        }
        prod.tick += 1;
        let next = self.tick_time(p, self.producers[p as usize].tick);
        if next <= now {
            self.start_set(q, p, now);
        } else {
            q.schedule_at_or_now(next, Ev::Tick(p));
        }
    }

    /// How far a scheduled producer runs behind its own schedule.
    fn schedule_lag(&self, p: u32, now: u64) -> u64 {
        now.saturating_sub(self.tick_time(p, self.producers[p as usize].tick))
    }

    // Batching and broker legs.

    fn add_to_batch(&mut self, q: &mut Queue, p: u32, partition: u32, item: u32, at: u64) {
        self.counts.items_produced += 1;
        self.counts.bytes_produced += self.item_bytes;
        let prod = &mut self.producers[p as usize];
        let b = match prod.open.iter().find(|(part, _)| *part == partition) {
            Some(&(_, b)) => b,
            None => {
                self.generation = self.generation.wrapping_add(1);
                let generation = self.generation;
                let b = self.batches.insert(BatchSlot {
                    batch: ProducerBatch {
                        producer: p,
                        partition,
                        items: Vec::new(),
                        bytes: 0,
                        opened_at: at,
                        flushed: false,
                        writes_issued: 0,
                    },
                    generation,
                });
                self.producers[p as usize].open.push((partition, b));
                q.schedule_at_or_now(at + self.linger, Ev::Linger(b, generation));
                b
            }
        };
        let batch = &mut self.batches.get_mut(b).batch;
        batch.items.push(item);
        batch.bytes += self.item_bytes;
        if batch.should_flush_on_size(self.max_batch) {
            self.flush(q, b, at);
        }
    }

    fn flush(&mut self, q: &mut Queue, b: u32, at: u64) {
        let batch = &mut self.batches.get_mut(b).batch;
        batch.flushed = true;
        let (p, partition, bytes) = (batch.producer, batch.partition, batch.bytes);
        let prod = &mut self.producers[p as usize];
        prod.open.retain(|&(part, _)| part != partition);
        let sent = prod.net_out.serve(at, bits(bytes));
        let leader = self.topic.partitions[partition as usize].leader;
        let ready = self.brokers[leader as usize].receive(sent, bytes);
        q.schedule_at_or_now(ready, Ev::LeaderWrite(b));
    }

    fn linger(&mut self, q: &mut Queue, b: u32, generation: u32, now: u64) {
        let due = matches!(
            self.batches.slots.get(b as usize),
            Some(Some(s)) if s.generation == generation && !s.batch.flushed
        );
        if due {
            self.flush(q, b, now);
        }
    }

    fn leader_write(&mut self, q: &mut Queue, b: u32, now: u64) {
        let batch = &mut self.batches.get_mut(b).batch;
        batch.writes_issued += 1;
        let leader = self.topic.partitions[batch.partition as usize].leader;
        let done = self.brokers[leader as usize].write(now, batch.bytes);
        q.schedule_at_or_now(done, Ev::Appended(b));
    }

    fn appended(&mut self, q: &mut Queue, b: u32, now: u64) {
        let (partition, bytes, items) = {
            let batch = &mut self.batches.get_mut(b).batch;
            (batch.partition, batch.bytes, std::mem::take(&mut batch.items))
        };
        let part = &mut self.topic.partitions[partition as usize];
        for &item in &items {
            part.append(item, self.item_bytes, now);
        }
        let leader = part.leader;
        let followers = part.followers.clone();
        let c = part.assigned_consumer.expect("every partition is assigned");
        let consumer = &mut self.consumers[c as usize];
        consumer.pending_bytes += bytes;
        if consumer.state == FetchState::Polling && consumer.pending_bytes >= self.fetch_min {
            self.respond(q, c, now);
        }
        for f in followers {
            let sent = self.brokers[leader as usize].net_out.serve(now, bits(bytes));
            let ready = self.brokers[f as usize].receive(sent, bytes);
            q.schedule_at_or_now(ready, Ev::FollowerWrite(b, f));
        }
        self.release_if_replicated(b);
    }

    fn follower_write(&mut self, b: u32, f: u32, now: u64) {
        let batch = &mut self.batches.get_mut(b).batch;
        batch.writes_issued += 1;
        let bytes = batch.bytes;
        self.brokers[f as usize].write(now, bytes);
        self.release_if_replicated(b);
    }

    fn release_if_replicated(&mut self, b: u32) {
        let s = self.batches.get(b);
        if s.batch.items.is_empty() && s.batch.writes_issued >= self.spec.replication_factor {
            self.batches.remove(b);
        }
    }

    // Consumers.

    fn poll(&mut self, q: &mut Queue, c: u32, now: u64) {
        let consumer = &mut self.consumers[c as usize];
        if consumer.pending_bytes >= self.fetch_min {
            self.respond(q, c, now);
            return;
        }
        consumer.state = FetchState::Polling;
        consumer.token = consumer.token.wrapping_add(1);
        q.schedule_at_or_now(now + self.fetch_wait, Ev::FetchTimeout(c, consumer.token));
    }

    fn fetch_timeout(&mut self, q: &mut Queue, c: u32, token: u32, now: u64) {
        let consumer = &self.consumers[c as usize];
        if consumer.state == FetchState::Polling && consumer.token == token {
            self.respond(q, c, now);
        }
    }

    fn respond(&mut self, q: &mut Queue, c: u32, now: u64) {
        let mut per_leader: Vec<(u32, u64)> = Vec::new();
        let mut fetched = Vec::new();
        let consumer = &self.consumers[c as usize];
        for &pid in &consumer.partitions {
            let part = &mut self.topic.partitions[pid as usize];
            if part.log.is_empty() {
                continue;
            }
            let mut bytes = 0;
            for e in part.log.drain(..) {
                if e.offset != part.consumer_position {
                    self.counts.fifo_violations += 1;
                }
                part.consumer_position = e.offset + 1;
                bytes += e.bytes;
                fetched.push(e.item);
            }
            match per_leader.iter_mut().find(|(l, _)| *l == part.leader) {
                Some(x) => x.1 += bytes,
                None => per_leader.push((part.leader, bytes)),
            }
        }
        if fetched.is_empty() {
            let consumer = &mut self.consumers[c as usize];
            consumer.pending_bytes = 0;
            consumer.state = FetchState::Polling;
            consumer.token = consumer.token.wrapping_add(1);
            q.schedule_at_or_now(now + self.fetch_wait, Ev::FetchTimeout(c, consumer.token));
            return;
        }
        let consumer = &mut self.consumers[c as usize];
        let mut delivered = now;
        let mut total = 0;
        for (leader, bytes) in per_leader {
            total += bytes;
            let b = &mut self.brokers[leader as usize];
            b.cache_read_bytes += bytes;
            let out = b.net_out.serve(now, bits(bytes));
            delivered = delivered.max(consumer.net_in.serve(out, bits(bytes)));
        }
        self.counts.items_fetched += fetched.len() as u64;
        consumer.pending_bytes -= total;
        consumer.state = FetchState::InTransit;
        consumer.inbox.extend(fetched);
        q.schedule_at_or_now(delivered, Ev::Delivered(c));
    }

    fn delivered(&mut self, q: &mut Queue, c: u32, now: u64) {
        let consumer = &mut self.consumers[c as usize];
        consumer.state = FetchState::Busy;
        for &item in &consumer.inbox {
            let f = self.items.get(item).frame;
            let rec = &mut self.frames.get_mut(f).rec;
            rec.fetch_deliver.get_or_insert(now);
        }
        self.next_item(q, c, now);
    }

    fn next_item(&mut self, q: &mut Queue, c: u32, now: u64) {
        let consumer = &mut self.consumers[c as usize];
        let Some(item) = consumer.inbox.pop_front() else {
            consumer.current = None;
            self.poll(q, c, now);
            return;
        };
        let f = self.items.get(item).frame;
        let draw = self.per_item || consumer.last_frame != Some(f);
        let service = if draw {
            self.consume.sample_nanos(&mut consumer.rng, self.accel)
        } else {
            0
        };
        consumer.last_frame = Some(f);
        consumer.current = Some(item);
        self.frames.get_mut(f).rec.identify_start.get_or_insert(now);
        q.schedule_at_or_now(now + service, Ev::ItemDone(c));
    }

    fn item_done(&mut self, q: &mut Queue, c: u32, now: u64) {
        let item = self.consumers[c as usize].current.take().expect("item in service");
        let f = self.items.remove(item).frame;
        let frame = self.frames.get_mut(f);
        frame.rec.identify_end = Some(now);
        frame.items_left -= 1;
        if frame.items_left == 0 {
            self.complete(f);
        }
        self.next_item(q, c, now);
    }

    // Sampling.

    fn sample(&mut self, q: &mut Queue, now: u64) {
        let n = self.brokers.len() as f64;
        let mean = |f: &dyn Fn(&BrokerNode) -> u64| {
            self.brokers.iter().map(|b| nanos_to_secs(f(b))).sum::<f64>() / n
        };
        let storage = mean(&|b| b.storage.backlog_nanos(now));
        let network = mean(&|b| b.net_in.backlog_nanos(now).max(b.net_out.backlog_nanos(now)));
        let proc = mean(&|b| b.proc.backlog_nanos(now));
        let send = match self.spec.producer_mode {
            ProducerMode::SelfPaced => self
                .producers
                .iter()
                .map(|p| nanos_to_secs(p.send.backlog_nanos(now)))
                .sum::<f64>(),
            ProducerMode::Scheduled => (0..self.producers.len() as u32)
                .map(|p| nanos_to_secs(self.schedule_lag(p, now)))
                .sum::<f64>(),
        } / self.producers.len() as f64;
        let values = [
            (analytic::BROKER_STORAGE, storage),
            (analytic::BROKER_NETWORK, network),
            (analytic::BROKER_PROC, proc),
            (analytic::PRODUCER_SEND, send),
        ];
        for (k, v) in values {
            self.backlogs.entry(k.to_string()).or_default().push((now, v));
        }
        if let Some(limit) = self.divergence {
            if values.iter().any(|(_, v)| secs_to_nanos(*v) > limit) {
                self.truncated_at = Some(now);
                return;
            }
        }
        q.schedule_at_or_now(now + self.sample_every, Ev::Sample);
    }

    fn handle(&mut self, q: &mut Queue, now: u64, ev: Ev) {
        match ev {
            Ev::Start(p) => self.start_self_paced(q, p, now),
            Ev::DetectDone(p) => self.detect_done(q, p, now),
            Ev::Tick(p) => self.start_set(q, p, now),
            Ev::IngestDone(p) => self.ingest_done(q, p, now),
            Ev::SendDone(p) => self.send_done(q, p, now),
            Ev::Linger(b, g) => self.linger(q, b, g, now),
            Ev::LeaderWrite(b) => self.leader_write(q, b, now),
            Ev::Appended(b) => self.appended(q, b, now),
            Ev::FollowerWrite(b, f) => self.follower_write(b, f, now),
            Ev::FetchTimeout(c, t) => self.fetch_timeout(q, c, t, now),
            Ev::Delivered(c) => self.delivered(q, c, now),
            Ev::ItemDone(c) => self.item_done(q, c, now),
            Ev::Sample => self.sample(q, now),
        }
    }
}

fn class_load(resources: &[&RateResource], name: &str, from: f64, to: f64) -> ClassLoad {
    let span = to - from;
    let mut busy = 0.0;
    let mut rate = 0.0;
    for r in resources {
        let w = r.windows().expect("broker resources are windowed");
        let width = nanos_to_secs(w.width());
        let lo = (from / width).floor() as usize;
        let hi = ((to / width).ceil() as usize).min(w.busy().len());
        busy += w.busy()[lo..hi].iter().map(|&b| nanos_to_secs(b)).sum::<f64>() / span;
        rate += w.units()[lo..hi].iter().sum::<f64>() / span;
    }
    let n = resources.len().max(1) as f64;
    ClassLoad {
        resource: name.into(),
        busy_fraction: busy / n,
        rate: rate / n,
        capacity: resources.first().map(|r| r.capacity()).unwrap_or(0.0),
    }
}

/// Runs one scenario at its own acceleration factor.
pub fn run_simulation<S: FrameSink>(
    spec: &ScenarioSpec,
    config: &RunConfig,
    sink: &mut S,
) -> Result<RunResult, SimError> {
    spec.validate()?;
    config.validate()?;
    let horizon = secs_to_nanos(config.horizon);
    let warmup = secs_to_nanos(config.warmup);
    let sample_every = secs_to_nanos(config.sample_interval);
    let bins = (config.horizon / config.sample_interval).ceil() as usize + 1;

    let mut topic = broker::create_topic(&spec.name, spec.partitions, spec.replication_factor, spec.brokers)?;
    let assignment = broker::assign_partitions(&mut topic, spec.consumers)?;
    let brokers = (0..spec.brokers)
        .map(|id| BrokerNode::new(id, spec, sample_every, bins))
        .collect();

    let stages = spec.producer_stages();
    let sampler = |stage: &str| -> Result<Sampler, StageError> {
        let p = spec
            .profile(stage)
            .ok_or_else(|| StageError::BadProfile(stage.into()))?;
        Sampler::from_profile(stage, p)
    };
    let ingest = sampler(stages[0])?;
    let detect = match stages.get(1) {
        Some(s) => sampler(s)?,
        None => Sampler::Fixed(0.0),
    };
    let consume = sampler(spec.consumer_stage())?;
    let consumer_per_item = spec
        .profile(spec.consumer_stage())
        .map(|p| p.per_item_scaling)
        .unwrap_or(false);

    let seed = config.seed;
    let interval = secs_to_nanos(spec.frame_interval);
    let producers = (0..spec.producers)
        .map(|p| {
            let e = p as u64;
            let mut phase_rng = SimRng::stream(seed, DrawSite::StartPhase, e);
            Producer {
                frame: 0,
                phase: phase_rng.below(interval.max(1)),
                tick: 0,
                set_left: 0,
                open: Vec::new(),
                next_partition: p % spec.partitions,
                send: RateResource::new(format!("producer{p}-send"), spec.producer_send_capacity),
                net_out: RateResource::new(format!("producer{p}-net-out"), spec.network_capacity),
                ingest_rng: SimRng::stream(seed, DrawSite::Ingest, e),
                detect_rng: SimRng::stream(seed, DrawSite::Detect, e),
                fanout_rng: SimRng::stream(seed, DrawSite::Fanout, e),
                partition_rng: SimRng::stream(seed, DrawSite::Partition, e),
            }
        })
        .collect::<Vec<_>>();
    let consumers = assignment
        .into_iter()
        .enumerate()
        .map(|(c, partitions)| Consumer {
            partitions,
            pending_bytes: 0,
            state: FetchState::Polling,
            token: 0,
            inbox: VecDeque::new(),
            current: None,
            last_frame: None,
            net_in: RateResource::new(format!("consumer{c}-net-in"), spec.network_capacity),
            rng: SimRng::stream(seed, DrawSite::Identify, c as u64),
        })
        .collect();

    let mut world = World {
        spec: spec.clone(),
        accel: AccelerationTransform::new(spec.acceleration),
        interval,
        item_bytes: spec.message_size.message_bytes(),
        per_item: consumer_per_item,
        set_size: frames_per_tick(spec),
        linger: secs_to_nanos(spec.batching.producer_linger),
        max_batch: spec.batching.producer_max_batch,
        fetch_min: spec.batching.fetch_min_bytes.ceil() as u64,
        fetch_wait: secs_to_nanos(spec.batching.fetch_max_wait),
        sample_every,
        divergence: config.divergence_limit.map(secs_to_nanos),
        ingest,
        detect,
        consume,
        fanout: FanoutSampler::new(&spec.fanout),
        topic,
        brokers,
        producers,
        consumers,
        frames: Slab::new(),
        items: Slab::new(),
        batches: Slab::new(),
        generation: 0,
        next_frame_id: 0,
        breakdown: BreakdownAccumulator::new(
            StageLayout::new(spec.producer_mode),
            (warmup, horizon),
            config.exact_percentiles,
        ),
        epochs: EpochAccumulator::new(warmup, horizon),
        backlogs: BTreeMap::new(),
        truncated_at: None,
        counts: Conservation {
            frames_emitted: 0,
            frames_completed: 0,
            frames_without_items: 0,
            frames_in_flight: 0,
            items_produced: 0,
            items_fetched: 0,
            items_resident: 0,
            bytes_produced: 0,
            storage_bytes_written: 0,
            storage_bytes_pending: 0,
            storage_bytes_read: 0,
            cache_bytes_read: 0,
            fifo_violations: 0,
            replication_factor: spec.replication_factor,
        },
        sink,
        sink_error: None,
    };

    let mut q: Queue = EventQueue::new();
    for p in 0..spec.producers {
        let phase = world.producers[p as usize].phase;
        match spec.producer_mode {
            ProducerMode::SelfPaced => q.schedule_at_or_now(phase, Ev::Start(p)),
            ProducerMode::Scheduled => q.schedule_at_or_now(phase, Ev::Tick(p)),
        };
    }
    for c in 0..spec.consumers {
        world.poll(&mut q, c, 0);
    }
    q.schedule_at_or_now(sample_every, Ev::Sample);

    while let Some((now, ev)) = q.pop_until(horizon) {
        world.handle(&mut q, now, ev);
        if world.truncated_at.is_some() || world.sink_error.is_some() {
            break;
        }
    }
    if let Some(e) = world.sink_error.take() {
        return Err(e.into());
    }
    let end = world.truncated_at.unwrap_or(horizon);

    // Censor in-flight frames at the end of the run.
    let mut in_flight: Vec<FrameRecord> = world.frames.iter().map(|f| f.rec.clone()).collect();
    in_flight.sort_by_key(|r| r.frame_id);
    for rec in &in_flight {
        if rec.fanout > 0 {
            world.epochs.record(rec.scheduled_start, end.saturating_sub(rec.scheduled_start));
        }
        world.emit(rec);
    }
    if let Some(e) = world.sink_error.take() {
        return Err(e.into());
    }

    let mut counts = world.counts.clone();
    counts.frames_in_flight = in_flight.len() as u64;
    counts.items_resident = world.batches.iter().map(|s| s.batch.items.len() as u64).sum::<u64>()
        + world.topic.partitions.iter().map(|p| p.log.len() as u64).sum::<u64>();
    counts.storage_bytes_written = world.brokers.iter().map(|b| b.storage_bytes_written).sum();
    counts.storage_bytes_read = world.brokers.iter().map(|b| b.storage_read_bytes).sum();
    counts.cache_bytes_read = world.brokers.iter().map(|b| b.cache_read_bytes).sum();
    counts.storage_bytes_pending = world
        .batches
        .iter()
        .map(|s| (spec.replication_factor - s.batch.writes_issued) as u64 * s.batch.bytes)
        .sum();

    let backlog_means = world
        .backlogs
        .iter()
        .map(|(k, v)| (k.clone(), epoch_means_of_samples(v, warmup, horizon)))
        .collect();
    let mut verdict = verdict_from_epochs(world.epochs.means(), backlog_means);
    if let Some(t) = world.truncated_at {
        verdict.stable = false;
        verdict.truncated_at = Some(nanos_to_secs(t));
        if verdict.binding_resource.is_none() {
            verdict.binding_resource = world
                .backlogs
                .iter()
                .max_by(|a, b| {
                    let last = |v: &Vec<(u64, f64)>| v.last().map(|x| x.1).unwrap_or(0.0);
                    last(a.1).total_cmp(&last(b.1))
                })
                .map(|(k, _)| k.clone());
        }
    }

    let until = nanos_to_secs(end);
    let from = config.warmup.min(until);
    let pick = |f: fn(&BrokerNode) -> &RateResource| world.brokers.iter().map(f).collect::<Vec<_>>();
    let loads = if until > from {
        let mut net = pick(|b| &b.net_in);
        net.extend(pick(|b| &b.net_out));
        vec![
            class_load(&pick(|b| &b.storage), analytic::BROKER_STORAGE, from, until),
            class_load(&net, analytic::BROKER_NETWORK, from, until),
            class_load(&pick(|b| &b.proc), analytic::BROKER_PROC, from, until),
        ]
    } else {
        Vec::new()
    };
    let all: Vec<&RateResource> = world.brokers.iter().flat_map(|b| b.resources()).collect();
    let utilization = telemetry::utilization(&all, until)?;

    world.breakdown.close_at(end);
    let breakdown = world.breakdown.report().ok();
    Ok(RunResult {
        scenario: spec.name.clone(),
        acceleration: spec.acceleration,
        config: config.clone(),
        breakdown,
        verdict,
        prediction: analytic::predict_stability_with(spec, spec.acceleration, analytic::ResourceSet::Calibrated),
        loads,
        broker_storage_bytes: world.brokers.iter().map(|b| b.storage_bytes_written).collect(),
        conservation: counts,
        events: q.dispatched(),
        simulated: until,
        utilization,
    })
}

/// Per-component latency summary of a run, for quick inspection.
pub fn stage_means(report: &BreakdownReport) -> Vec<(String, f64)> {
    report.stages.iter().map(|(k, s)| (k.clone(), s.mean)).collect()
}
