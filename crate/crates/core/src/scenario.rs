//! Declarative pipeline deployments: types, defaults, validation, loading
//! and the builtin scenarios.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Standard normal 0.99 quantile.
pub const Z_99: f64 = 2.326_347_874_040_840_8;

pub const INGEST: &str = "ingest";
pub const DETECT: &str = "detect";
pub const IDENTIFY: &str = "identify";

pub const BUILTIN_NAMES: [&str; 3] = [
    "face-recognition-native",
    "face-recognition-accel",
    "object-detection-accel",
];

const FR_NATIVE_DOC: &str = include_str!("../data/scenarios/face-recognition-native.toml");
const FR_ACCEL_DOC: &str = include_str!("../data/scenarios/face-recognition-accel.toml");
const OD_ACCEL_DOC: &str = include_str!("../data/scenarios/object-detection-accel.toml");

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FieldViolation {
    pub path: String,
    pub message: String,
}

impl fmt::Display for FieldViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.path, self.message)
    }
}

fn join_violations(v: &[FieldViolation]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join("; ")
}

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("scenario parse error: {0}")]
    Parse(String),
    #[error("invalid scenario: {}", join_violations(.0))]
    Invalid(Vec<FieldViolation>),
    #[error("unknown builtin scenario `{0}` (expected one of {names})", names = BUILTIN_NAMES.join(", "))]
    UnknownBuiltin(String),
    #[error("cannot read scenario file {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl ScenarioError {
    pub fn violations(&self) -> &[FieldViolation] {
        match self {
            ScenarioError::Invalid(v) => v,
            _ => &[],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DistributionFamily {
    Deterministic,
    Lognormal,
    Empirical,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ComputeProfile {
    /// Mean service time, seconds.
    pub mean: f64,
    /// 99th percentile service time, seconds.
    pub p99: f64,
    #[serde(default = "default_family")]
    pub distribution: DistributionFamily,
    /// Whether service time is drawn once per fan-out item.
    #[serde(default)]
    pub per_item_scaling: bool,
    /// Bootstrap pool for the empirical family, seconds.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub samples: Vec<f64>,
}

fn default_family() -> DistributionFamily {
    DistributionFamily::Lognormal
}

/// Parameters of a lognormal fitted to a (mean, p99) pair.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LognormalFit {
    pub mu: f64,
    pub sigma: f64,
    /// The requested p99/mean ratio exceeded what a mean-preserving
    /// lognormal can reach; sigma was capped at the 0.99 z-score.
    pub tail_clamped: bool,
}

impl ComputeProfile {
    pub fn lognormal(mean: f64, p99: f64) -> Self {
        Self {
            mean,
            p99,
            distribution: DistributionFamily::Lognormal,
            per_item_scaling: false,
            samples: Vec::new(),
        }
    }

    pub fn deterministic(mean: f64) -> Self {
        Self {
            mean,
            p99: mean,
            distribution: DistributionFamily::Deterministic,
            per_item_scaling: false,
            samples: Vec::new(),
        }
    }

    pub fn per_item(mut self) -> Self {
        self.per_item_scaling = true;
        self
    }

    /// Mean-preserving lognormal fit. Sigma is the smaller root of
    /// `sigma^2/2 - z*sigma + ln(p99/mean) = 0`.
    pub fn lognormal_fit(&self) -> Option<LognormalFit> {
        if !(self.mean > 0.0) || !(self.p99 > self.mean) {
            return None;
        }
        let ratio = (self.p99 / self.mean).ln();
        let disc = Z_99 * Z_99 - 2.0 * ratio;
        let (sigma, tail_clamped) = if disc >= 0.0 {
            (Z_99 - disc.sqrt(), false)
        } else {
            (Z_99, true)
        };
        Some(LognormalFit {
            mu: self.mean.ln() - sigma * sigma / 2.0,
            sigma,
            tail_clamped,
        })
    }

    fn validate(&self, path: &str, out: &mut Vec<FieldViolation>) {
        let mut bad = |field: &str, message: String| {
            out.push(FieldViolation {
                path: format!("{path}.{field}"),
                message,
            })
        };
        if !(self.mean > 0.0 && self.mean.is_finite()) {
            bad("mean", format!("must be a positive number, got {}", self.mean));
        }
        if !(self.p99 >= self.mean) {
            bad("p99", format!("must be >= mean ({}), got {}", self.mean, self.p99));
        }
        match self.distribution {
            DistributionFamily::Lognormal => {
                if self.mean > 0.0 && !(self.p99 > self.mean) {
                    bad("p99", "lognormal needs p99 > mean".into());
                }
            }
            DistributionFamily::Empirical => {
                if self.samples.is_empty() {
                    bad("samples", "empirical profile needs at least one sample".into());
                } else if self.samples.iter().any(|s| !(*s > 0.0 && s.is_finite())) {
                    bad("samples", "every sample must be a positive number".into());
                }
            }
            DistributionFamily::Deterministic => {}
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FanoutKind {
    Constant,
    Categorical,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FanoutOutcome {
    pub count: u32,
    pub probability: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FanoutModel {
    pub kind: FanoutKind,
    #[serde(default = "one")]
    pub constant_value: u32,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub categorical: Vec<FanoutOutcome>,
}

fn one() -> u32 {
    1
}

impl FanoutModel {
    pub fn constant(value: u32) -> Self {
        Self {
            kind: FanoutKind::Constant,
            constant_value: value,
            categorical: Vec::new(),
        }
    }

    pub fn categorical(outcomes: &[(u32, f64)]) -> Self {
        Self {
            kind: FanoutKind::Categorical,
            constant_value: 1,
            categorical: outcomes
                .iter()
                .map(|&(count, probability)| FanoutOutcome { count, probability })
                .collect(),
        }
    }

    pub fn mean(&self) -> f64 {
        match self.kind {
            FanoutKind::Constant => self.constant_value as f64,
            FanoutKind::Categorical => self
                .categorical
                .iter()
                .map(|o| o.count as f64 * o.probability)
                .sum(),
        }
    }

    fn validate(&self, out: &mut Vec<FieldViolation>) {
        if self.kind == FanoutKind::Categorical {
            if self.categorical.is_empty() {
                out.push(FieldViolation {
                    path: "fanout.categorical".into(),
                    message: "categorical fan-out needs at least one outcome".into(),
                });
                return;
            }
            for (i, o) in self.categorical.iter().enumerate() {
                if !(o.probability >= 0.0 && o.probability <= 1.0) {
                    out.push(FieldViolation {
                        path: format!("fanout.categorical[{i}].probability"),
                        message: format!("must lie in [0, 1], got {}", o.probability),
                    });
                }
            }
            let total: f64 = self.categorical.iter().map(|o| o.probability).sum();
            if (total - 1.0).abs() > 1e-9 {
                out.push(FieldViolation {
                    path: "fanout.categorical".into(),
                    message: format!("probabilities must sum to 1, got {total}"),
                });
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SizeModel {
    pub mean_bytes: f64,
    #[serde(default = "unit")]
    pub scale_factor: f64,
}

fn unit() -> f64 {
    1.0
}

impl SizeModel {
    /// Bytes of one message after the mitigation scale is applied.
    pub fn message_bytes(&self) -> u64 {
        ((self.mean_bytes * self.scale_factor).round() as u64).max(1)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BatchingParams {
    /// Seconds a producer batch stays open.
    pub producer_linger: f64,
    pub producer_max_batch: f64,
    pub fetch_min_bytes: f64,
    /// Seconds a fetch may be held by the broker.
    pub fetch_max_wait: f64,
}

impl Default for BatchingParams {
    fn default() -> Self {
        Self {
            producer_linger: 0.010,
            producer_max_batch: 1_048_576.0,
            fetch_min_bytes: 65_536.0,
            fetch_max_wait: 0.100,
        }
    }
}

/// How producers pace their frames.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ProducerMode {
    /// Closed loop: the next frame starts when the previous one is produced.
    /// Producer stages are ingest and detect; consumers identify.
    SelfPaced,
    /// Open loop on a fixed wall schedule, `acceleration` frames per tick.
    /// Producers ingest; consumers detect.
    Scheduled,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PartitionChoice {
    Random,
    RoundRobin,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub name: String,
    pub producers: u32,
    pub consumers: u32,
    pub brokers: u32,
    pub drives_per_broker: u32,
    pub replication_factor: u32,
    pub partitions: u32,
    pub producer_mode: ProducerMode,
    pub partition_choice: PartitionChoice,
    /// Seconds between scheduled frames of one producer.
    pub frame_interval: f64,
    /// Bits per second per node.
    pub network_capacity: f64,
    /// Bytes per second per drive.
    pub storage_write_capacity: f64,
    pub storage_effective_ceiling: f64,
    /// Dirty bytes a broker accumulates before a writeback stall. The stalls
    /// carry the overhead implied by the effective ceiling; 0 spreads it
    /// evenly over every write.
    pub storage_writeback_bytes: f64,
    /// Bytes per second through one producer's send path.
    pub producer_send_capacity: f64,
    /// Bytes per second of request handling per broker.
    pub broker_proc_capacity: f64,
    pub acceleration: f64,
    pub stage_profiles: BTreeMap<String, ComputeProfile>,
    pub fanout: FanoutModel,
    pub message_size: SizeModel,
    pub batching: BatchingParams,
}

/// On-disk form: every optional field may be omitted and gets a default.
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ScenarioDocument {
    name: Option<String>,
    producers: Option<u32>,
    consumers: Option<u32>,
    brokers: Option<u32>,
    drives_per_broker: Option<u32>,
    replication_factor: Option<u32>,
    partitions: Option<u32>,
    producer_mode: Option<ProducerMode>,
    partition_choice: Option<PartitionChoice>,
    frame_interval: Option<f64>,
    network_capacity: Option<f64>,
    storage_write_capacity: Option<f64>,
    storage_effective_ceiling: Option<f64>,
    storage_writeback_bytes: Option<f64>,
    producer_send_capacity: Option<f64>,
    broker_proc_capacity: Option<f64>,
    acceleration: Option<f64>,
    stage_profiles: Option<BTreeMap<String, ComputeProfile>>,
    fanout: Option<FanoutModel>,
    message_size: Option<SizeModel>,
    batching: Option<BatchingParams>,
}

pub mod defaults {
    pub const NAME: &str = "custom";
    pub const DRIVES_PER_BROKER: u32 = 1;
    pub const FRAME_INTERVAL: f64 = 0.1;
    pub const NETWORK_CAPACITY: f64 = 100e9;
    pub const STORAGE_WRITE_CAPACITY: f64 = 1.1e9;
    pub const STORAGE_EFFECTIVE_CEILING: f64 = 0.8;
    pub const STORAGE_WRITEBACK_BYTES: f64 = 700e6;
    pub const PRODUCER_SEND_CAPACITY: f64 = 1.25e9;
    pub const BROKER_PROC_CAPACITY: f64 = 4.4e9;
    pub const MESSAGE_BYTES: f64 = 37_300.0;
    pub const INGEST_MEAN: f64 = 0.0188;
    pub const INGEST_P99: f64 = 0.027;
    pub const DETECT_MEAN: f64 = 0.0748;
    pub const DETECT_P99: f64 = 1.84;
    pub const IDENTIFY_MEAN: f64 = 0.1315;
    pub const IDENTIFY_P99: f64 = 0.380;
}

fn default_profiles(mode: ProducerMode) -> BTreeMap<String, ComputeProfile> {
    use defaults::*;
    let mut m = BTreeMap::new();
    m.insert(INGEST.into(), ComputeProfile::lognormal(INGEST_MEAN, INGEST_P99));
    m.insert(DETECT.into(), ComputeProfile::lognormal(DETECT_MEAN, DETECT_P99));
    if mode == ProducerMode::SelfPaced {
        m.insert(
            IDENTIFY.into(),
            ComputeProfile::lognormal(IDENTIFY_MEAN, IDENTIFY_P99).per_item(),
        );
    }
    m
}

impl ScenarioDocument {
    fn into_spec(self) -> Result<ScenarioSpec, ScenarioError> {
        let mut missing = Vec::new();
        for (field, present) in [
            ("producers", self.producers.is_some()),
            ("consumers", self.consumers.is_some()),
            ("brokers", self.brokers.is_some()),
            ("replication_factor", self.replication_factor.is_some()),
        ] {
            if !present {
                missing.push(FieldViolation {
                    path: field.into(),
                    message: "required field is missing".into(),
                });
            }
        }
        if !missing.is_empty() {
            return Err(ScenarioError::Invalid(missing));
        }
        let consumers = self.consumers.unwrap_or(1);
        let mode = self.producer_mode.unwrap_or(ProducerMode::SelfPaced);
        Ok(ScenarioSpec {
            name: self.name.unwrap_or_else(|| defaults::NAME.into()),
            producers: self.producers.unwrap_or(1),
            consumers,
            brokers: self.brokers.unwrap_or(1),
            drives_per_broker: self.drives_per_broker.unwrap_or(defaults::DRIVES_PER_BROKER),
            replication_factor: self.replication_factor.unwrap_or(1),
            partitions: self.partitions.unwrap_or(consumers),
            producer_mode: mode,
            partition_choice: self.partition_choice.unwrap_or(PartitionChoice::Random),
            frame_interval: self.frame_interval.unwrap_or(defaults::FRAME_INTERVAL),
            network_capacity: self.network_capacity.unwrap_or(defaults::NETWORK_CAPACITY),
            storage_write_capacity: self
                .storage_write_capacity
                .unwrap_or(defaults::STORAGE_WRITE_CAPACITY),
            storage_effective_ceiling: self
                .storage_effective_ceiling
                .unwrap_or(defaults::STORAGE_EFFECTIVE_CEILING),
            storage_writeback_bytes: self
                .storage_writeback_bytes
                .unwrap_or(defaults::STORAGE_WRITEBACK_BYTES),
            producer_send_capacity: self
                .producer_send_capacity
                .unwrap_or(defaults::PRODUCER_SEND_CAPACITY),
            broker_proc_capacity: self
                .broker_proc_capacity
                .unwrap_or(defaults::BROKER_PROC_CAPACITY),
            acceleration: self.acceleration.unwrap_or(1.0),
            stage_profiles: self.stage_profiles.unwrap_or_else(|| default_profiles(mode)),
            fanout: self.fanout.unwrap_or_else(|| FanoutModel::constant(1)),
            message_size: self.message_size.unwrap_or(SizeModel {
                mean_bytes: defaults::MESSAGE_BYTES,
                scale_factor: 1.0,
            }),
            batching: self.batching.unwrap_or_default(),
        })
    }
}

impl ScenarioSpec {
    /// Name of the stage run by consumers.
    pub fn consumer_stage(&self) -> &'static str {
        match self.producer_mode {
            ProducerMode::SelfPaced => IDENTIFY,
            ProducerMode::Scheduled => DETECT,
        }
    }

    /// Names of the stages run by producers, in order.
    pub fn producer_stages(&self) -> &'static [&'static str] {
        match self.producer_mode {
            ProducerMode::SelfPaced => &[INGEST, DETECT],
            ProducerMode::Scheduled => &[INGEST],
        }
    }

    pub fn profile(&self, stage: &str) -> Option<&ComputeProfile> {
        self.stage_profiles.get(stage)
    }

    pub fn with_acceleration(&self, a: f64) -> Self {
        let mut s = self.clone();
        s.acceleration = a;
        s
    }

    /// Effective write bandwidth of one broker, bytes/s.
    pub fn broker_storage_capacity(&self) -> f64 {
        self.drives_per_broker as f64 * self.storage_write_capacity * self.storage_effective_ceiling
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        let v = self.violations();
        if v.is_empty() {
            Ok(())
        } else {
            Err(ScenarioError::Invalid(v))
        }
    }

    /// Every violated invariant, with its field path.
    pub fn violations(&self) -> Vec<FieldViolation> {
        let mut out = Vec::new();
        let mut bad = |path: &str, message: String| {
            out.push(FieldViolation {
                path: path.into(),
                message,
            })
        };
        if self.name.trim().is_empty() {
            bad("name", "must not be empty".into());
        }
        for (field, value) in [
            ("producers", self.producers),
            ("consumers", self.consumers),
            ("brokers", self.brokers),
            ("drives_per_broker", self.drives_per_broker),
            ("replication_factor", self.replication_factor),
            ("partitions", self.partitions),
        ] {
            if value < 1 {
                bad(field, "must be at least 1".into());
            }
        }
        if self.replication_factor > self.brokers {
            bad(
                "replication_factor",
                format!(
                    "{} exceeds the broker count {}",
                    self.replication_factor, self.brokers
                ),
            );
        }
        if self.partitions < self.consumers {
            bad(
                "partitions",
                format!(
                    "{} partitions cannot serve {} consumers (one consumer per partition)",
                    self.partitions, self.consumers
                ),
            );
        }
        for (field, value) in [
            ("frame_interval", self.frame_interval),
            ("network_capacity", self.network_capacity),
            ("storage_write_capacity", self.storage_write_capacity),
            ("producer_send_capacity", self.producer_send_capacity),
            ("broker_proc_capacity", self.broker_proc_capacity),
            ("message_size.mean_bytes", self.message_size.mean_bytes),
            ("batching.producer_linger", self.batching.producer_linger),
            ("batching.producer_max_batch", self.batching.producer_max_batch),
            ("batching.fetch_min_bytes", self.batching.fetch_min_bytes),
            ("batching.fetch_max_wait", self.batching.fetch_max_wait),
        ] {
            if !(value > 0.0 && value.is_finite()) {
                bad(field, format!("must be a positive number, got {value}"));
            }
        }
        let w = self.storage_writeback_bytes;
        if !(w >= 0.0 && w.is_finite()) {
            bad("storage_writeback_bytes", format!("must be zero or positive, got {w}"));
        }
        let c = self.storage_effective_ceiling;
        if !(c > 0.0 && c <= 1.0) {
            bad("storage_effective_ceiling", format!("must lie in (0, 1], got {c}"));
        }
        let s = self.message_size.scale_factor;
        if !(s > 0.0 && s <= 1.0) {
            bad("message_size.scale_factor", format!("must lie in (0, 1], got {s}"));
        }
        if !(self.acceleration >= 1.0 && self.acceleration.is_finite()) {
            bad(
                "acceleration",
                format!("must be a finite factor >= 1, got {}", self.acceleration),
            );
        }
        let mut required: Vec<&str> = self.producer_stages().to_vec();
        required.push(self.consumer_stage());
        for stage in required {
            if !self.stage_profiles.contains_key(stage) {
                bad(
                    &format!("stage_profiles.{stage}"),
                    "profile is required for this producer mode".into(),
                );
            }
        }
        for (name, p) in &self.stage_profiles {
            p.validate(&format!("stage_profiles.{name}"), &mut out);
        }
        self.fanout.validate(&mut out);
        out
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scenario serializes")
    }
}

/// Parses and validates one scenario document.
pub fn load_scenario(document: &str) -> Result<ScenarioSpec, ScenarioError> {
    let doc: ScenarioDocument =
        toml::from_str(document).map_err(|e| ScenarioError::Parse(e.to_string()))?;
    let spec = doc.into_spec()?;
    spec.validate()?;
    Ok(spec)
}

pub fn load_scenario_file(path: &std::path::Path) -> Result<ScenarioSpec, ScenarioError> {
    let text = std::fs::read_to_string(path).map_err(|source| ScenarioError::Io {
        path: path.display().to_string(),
        source,
    })?;
    load_scenario(&text)
}

pub fn builtin_document(name: &str) -> Option<&'static str> {
    match name {
        "face-recognition-native" => Some(FR_NATIVE_DOC),
        "face-recognition-accel" => Some(FR_ACCEL_DOC),
        "object-detection-accel" => Some(OD_ACCEL_DOC),
        _ => None,
    }
}

pub fn builtin_scenario(name: &str) -> Result<ScenarioSpec, ScenarioError> {
    let doc = builtin_document(name).ok_or_else(|| ScenarioError::UnknownBuiltin(name.into()))?;
    load_scenario(doc)
}

/// Accepts a builtin name or a path to a scenario file.
pub fn resolve_scenario(reference: &str) -> Result<ScenarioSpec, ScenarioError> {
    if builtin_document(reference).is_some() {
        builtin_scenario(reference)
    } else {
        load_scenario_file(std::path::Path::new(reference))
    }
}
