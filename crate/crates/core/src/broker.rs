//! Broker cluster model: topics, partition placement, consumer assignment,
//! per-broker rate-limited resources and the batch transfer legs.
//!
//! Event handling lives in [`crate::sim`]; this module holds the state and the
//! pure operations on it.

use std::collections::VecDeque;

use thiserror::Error;

use crate::kernel::RateResource;
use crate::scenario::ScenarioSpec;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum BrokerError {
    #[error("replication factor {replication} exceeds the broker count {brokers}")]
    ReplicationExceedsBrokers { replication: u32, brokers: u32 },
    #[error("topic needs at least one partition")]
    NoPartitions,
    #[error("{partitions} partitions cannot serve {consumers} consumers")]
    TooFewPartitions { partitions: u32, consumers: u32 },
    #[error("consumer {0} has no assigned partition")]
    Unassigned(u32),
    #[error("unknown topic `{0}`")]
    UnknownTopic(String),
}

pub type BrokerId = u32;
pub type ConsumerId = u32;

/// A message resident in a partition log.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LogEntry {
    /// Position in the partition, assigned at append.
    pub offset: u64,
    pub item: u32,
    pub bytes: u64,
    pub appended_at: u64,
}

#[derive(Debug, Clone)]
pub struct Partition {
    pub id: u32,
    pub leader: BrokerId,
    pub followers: Vec<BrokerId>,
    pub assigned_consumer: Option<ConsumerId>,
    pub log: VecDeque<LogEntry>,
    pub next_offset: u64,
    /// Offset the owning consumer will fetch next.
    pub consumer_position: u64,
}

impl Partition {
    pub fn append(&mut self, item: u32, bytes: u64, at: u64) {
        self.log.push_back(LogEntry {
            offset: self.next_offset,
            item,
            bytes,
            appended_at: at,
        });
        self.next_offset += 1;
    }

    pub fn replicas(&self) -> impl Iterator<Item = BrokerId> + '_ {
        std::iter::once(self.leader).chain(self.followers.iter().copied())
    }
}

#[derive(Debug, Clone)]
pub struct Topic {
    pub name: String,
    pub partitions: Vec<Partition>,
}

impl Topic {
    pub fn leader_counts(&self, brokers: u32) -> Vec<u32> {
        let mut counts = vec![0; brokers as usize];
        for p in &self.partitions {
            counts[p.leader as usize] += 1;
        }
        counts
    }

    pub fn follower_counts(&self, brokers: u32) -> Vec<u32> {
        let mut counts = vec![0; brokers as usize];
        for p in &self.partitions {
            for f in &p.followers {
                counts[*f as usize] += 1;
            }
        }
        counts
    }
}

/// Leaders round-robin across brokers; followers are the next brokers in
/// ring order after the leader.
pub fn create_topic(
    name: &str,
    partitions: u32,
    replication: u32,
    brokers: u32,
) -> Result<Topic, BrokerError> {
    if replication > brokers || replication == 0 {
        return Err(BrokerError::ReplicationExceedsBrokers {
            replication,
            brokers,
        });
    }
    if partitions == 0 {
        return Err(BrokerError::NoPartitions);
    }
    let partitions = (0..partitions)
        .map(|id| {
            let leader = id % brokers;
            let followers = (1..replication).map(|k| (leader + k) % brokers).collect();
            Partition {
                id,
                leader,
                followers,
                assigned_consumer: None,
                log: VecDeque::new(),
                next_offset: 0,
                consumer_position: 0,
            }
        })
        .collect();
    Ok(Topic {
        name: name.into(),
        partitions,
    })
}

/// Partition `p` goes to consumer `p mod consumers`. Returns each consumer's
/// partitions and records the owner on every partition.
pub fn assign_partitions(topic: &mut Topic, consumers: u32) -> Result<Vec<Vec<u32>>, BrokerError> {
    let n = topic.partitions.len() as u32;
    if consumers == 0 || n < consumers {
        return Err(BrokerError::TooFewPartitions {
            partitions: n,
            consumers,
        });
    }
    let mut map = vec![Vec::new(); consumers as usize];
    for p in &mut topic.partitions {
        let c = p.id % consumers;
        p.assigned_consumer = Some(c);
        map[c as usize].push(p.id);
    }
    Ok(map)
}

pub const STORAGE: &str = "storage";
pub const NET_IN: &str = "net-in";
pub const NET_OUT: &str = "net-out";
pub const PROC: &str = "proc";

#[derive(Debug, Clone)]
pub struct BrokerNode {
    pub id: BrokerId,
    /// Write path, bytes/s (drives x per-drive bandwidth x ceiling).
    pub storage: RateResource,
    /// Bits/s.
    pub net_in: RateResource,
    /// Bits/s.
    pub net_out: RateResource,
    /// Request handling, bytes/s.
    pub proc: RateResource,
    writeback: Writeback,
    /// Bytes whose storage write has been issued.
    pub storage_bytes_written: u64,
    /// Always zero: reads are served from the page cache.
    pub storage_read_bytes: u64,
    pub cache_read_bytes: u64,
}

impl BrokerNode {
    pub fn new(id: BrokerId, spec: &ScenarioSpec, window: u64, bins: usize) -> Self {
        let r = |kind: &str, cap: f64| {
            RateResource::new(format!("broker{id}-{kind}"), cap).with_windows(window, bins)
        };
        Self {
            id,
            storage: r(STORAGE, spec.broker_storage_capacity()),
            net_in: r(NET_IN, spec.network_capacity),
            net_out: r(NET_OUT, spec.network_capacity),
            proc: r(PROC, spec.broker_proc_capacity),
            writeback: Writeback::new(spec),
            storage_bytes_written: 0,
            storage_read_bytes: 0,
            cache_read_bytes: 0,
        }
    }

    pub fn resources(&self) -> [&RateResource; 4] {
        [&self.storage, &self.net_in, &self.net_out, &self.proc]
    }

    /// Issues a storage write; returns its completion time.
    pub fn write(&mut self, at: u64, bytes: u64) -> u64 {
        self.storage_bytes_written += bytes;
        match self.writeback.service(bytes) {
            Some(ns) => self.storage.serve_for(at, bytes as f64, ns),
            None => self.storage.serve(at, bytes as f64),
        }
    }

    /// Ingress leg of a batch: network in, then request handling. Returns
    /// when the batch reaches the storage write queue.
    pub fn receive(&mut self, at: u64, bytes: u64) -> u64 {
        let t = self.net_in.serve(at, bits(bytes));
        self.proc.serve(t, bytes as f64)
    }
}

/// Drives absorb writes at their raw bandwidth; every `every` dirty bytes the
/// broker stalls long enough that the long-run rate equals the effective
/// capacity.
#[derive(Debug, Clone)]
struct Writeback {
    raw: f64,
    every: u64,
    stall_secs: f64,
    dirty: u64,
}

impl Writeback {
    fn new(spec: &ScenarioSpec) -> Self {
        let raw = spec.drives_per_broker as f64 * spec.storage_write_capacity;
        let effective = spec.broker_storage_capacity();
        let every = spec.storage_writeback_bytes.round() as u64;
        Self {
            raw,
            every,
            stall_secs: every as f64 * (1.0 / effective - 1.0 / raw),
            dirty: 0,
        }
    }

    fn service(&mut self, bytes: u64) -> Option<u64> {
        if self.every == 0 {
            return None;
        }
        let mut secs = bytes as f64 / self.raw;
        self.dirty += bytes;
        while self.dirty >= self.every {
            self.dirty -= self.every;
            secs += self.stall_secs;
        }
        Some(crate::kernel::secs_to_nanos(secs))
    }
}

pub fn bits(bytes: u64) -> f64 {
    bytes as f64 * 8.0
}

/// Open producer batch for one partition.
#[derive(Debug, Clone)]
pub struct ProducerBatch {
    pub producer: u32,
    pub partition: u32,
    pub items: Vec<u32>,
    pub bytes: u64,
    pub opened_at: u64,
    pub flushed: bool,
    /// Storage writes issued so far (leader plus followers).
    pub writes_issued: u32,
}

impl ProducerBatch {
    pub fn should_flush_on_size(&self, max_batch: f64) -> bool {
        self.bytes as f64 >= max_batch
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn symmetric_placement() {
        let t = create_topic("faces", 3, 3, 3).unwrap();
        assert_eq!(t.leader_counts(3), vec![1, 1, 1]);
        assert_eq!(t.follower_counts(3), vec![2, 2, 2]);
        for p in &t.partitions {
            assert!(!p.followers.contains(&p.leader));
            assert_eq!(p.replicas().count(), 3);
        }
    }

    #[test]
    fn single_broker_topic() {
        let t = create_topic("faces", 1, 1, 1).unwrap();
        assert_eq!(t.partitions[0].leader, 0);
        assert!(t.partitions[0].followers.is_empty());
    }

    #[test]
    fn eight_brokers_share_leadership() {
        let t = create_topic("faces", 1680, 3, 8).unwrap();
        assert!(t.leader_counts(8).iter().all(|&c| c == 210));
    }

    #[test]
    fn replication_above_brokers_fails() {
        assert!(create_topic("faces", 3, 4, 3).is_err());
    }

    #[test]
    fn assignment_balances() {
        let mut t = create_topic("faces", 1680, 3, 3).unwrap();
        let m = assign_partitions(&mut t, 1680).unwrap();
        assert!(m.iter().all(|v| v.len() == 1));
        let mut t = create_topic("faces", 4, 1, 1).unwrap();
        let m = assign_partitions(&mut t, 2).unwrap();
        assert_eq!(m.iter().map(Vec::len).collect::<Vec<_>>(), vec![2, 2]);
        let mut t = create_topic("faces", 5, 1, 1).unwrap();
        let m = assign_partitions(&mut t, 2).unwrap();
        assert_eq!(m.iter().map(Vec::len).collect::<Vec<_>>(), vec![3, 2]);
    }

    #[test]
    fn fewer_partitions_than_consumers_fails() {
        let mut t = create_topic("faces", 2, 1, 1).unwrap();
        assert!(assign_partitions(&mut t, 3).is_err());
    }
}
