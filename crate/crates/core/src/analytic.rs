//! Closed-form models: Amdahl speedup, broker bandwidth demand, utilization
//! based stability, and the minimal-mitigation search.

use std::collections::BTreeMap;

use serde::Serialize;
use thiserror::Error;

use crate::scenario::{ProducerMode, ScenarioSpec, INGEST};

/// AI share of detection implied by its 1.74x asymptote.
pub const DETECT_AI_FRACTION: f64 = 0.425;
/// AI share of identification implied by its 8x asymptote.
pub const IDENTIFY_AI_FRACTION: f64 = 0.875;
/// Rounded AI shares as stated in the CPU-time profile (42% and 88%).
pub const DETECT_AI_FRACTION_STATED: f64 = 0.42;
pub const IDENTIFY_AI_FRACTION_STATED: f64 = 0.88;

pub const BROKER_STORAGE: &str = "broker-storage";
pub const BROKER_NETWORK: &str = "broker-network";
pub const BROKER_PROC: &str = "broker-proc";
pub const PRODUCER_SEND: &str = "producer-send";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AnalyticError {
    #[error("AI fraction must lie in [0, 1], got {0}")]
    Fraction(f64),
    #[error("acceleration must be >= 1, got {0}")]
    Acceleration(f64),
}

/// Overall speedup when a fraction `f` of the work is accelerated by `a`.
/// `a = f64::INFINITY` gives the asymptote `1 / (1 - f)`.
pub fn amdahl_speedup(f: f64, a: f64) -> Result<f64, AnalyticError> {
    if !(0.0..=1.0).contains(&f) {
        return Err(AnalyticError::Fraction(f));
    }
    if !(a >= 1.0) {
        return Err(AnalyticError::Acceleration(a));
    }
    let accelerated = if a.is_infinite() { 0.0 } else { f / a };
    Ok(1.0 / ((1.0 - f) + accelerated))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DemandEstimate {
    /// Bytes/s written to storage by one broker, replicas included.
    pub per_broker_write: f64,
    pub aggregate_write: f64,
    /// Bits/s into one broker (producer ingress plus replica ingress).
    pub per_broker_network_in: f64,
    /// Bits/s out of one broker (replica egress plus consumer fetches).
    pub per_broker_network_out: f64,
    /// Bytes/s through one producer's send path.
    pub per_producer_send: f64,
}

/// Expected steady-state bandwidth demand at acceleration `a`.
pub fn estimate_demand(spec: &ScenarioSpec, a: f64) -> DemandEstimate {
    let items_per_sec = spec.producers as f64 / spec.frame_interval * spec.fanout.mean() * a;
    let bytes = spec.message_size.mean_bytes * spec.message_size.scale_factor;
    let ingress = items_per_sec * bytes;
    let r = spec.replication_factor as f64;
    let b = spec.brokers as f64;
    let per_broker_write = ingress * r / b;
    // Each broker receives its leader share from producers and its follower
    // share from other brokers; egress mirrors it with consumer fetches.
    let per_broker_bits = ingress * r / b * 8.0;
    let per_producer_send = if spec.producers == 0 {
        0.0
    } else {
        a / spec.frame_interval * spec.fanout.mean() * bytes
    };
    DemandEstimate {
        per_broker_write,
        aggregate_write: per_broker_write * b,
        per_broker_network_in: per_broker_bits,
        per_broker_network_out: per_broker_bits,
        per_producer_send,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StabilityVerdict {
    pub utilizations: BTreeMap<String, f64>,
    pub stable: bool,
    pub binding_resource: Option<String>,
}

impl StabilityVerdict {
    fn from_utilizations(utilizations: BTreeMap<String, f64>) -> Self {
        let (name, max) = utilizations
            .iter()
            .fold((None, f64::NEG_INFINITY), |(n, m), (k, v)| {
                if *v > m {
                    (Some(k.clone()), *v)
                } else {
                    (n, m)
                }
            });
        let stable = max < 1.0;
        Self {
            utilizations,
            stable,
            binding_resource: if stable { None } else { name },
        }
    }

    pub fn max_utilization(&self) -> f64 {
        self.utilizations.values().cloned().fold(0.0, f64::max)
    }

    pub fn utilization(&self, resource: &str) -> f64 {
        self.utilizations.get(resource).copied().unwrap_or(0.0)
    }
}

/// Which resources the closed-form verdict considers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum ResourceSet {
    /// Broker storage, broker network and producer send path.
    Standard,
    /// Standard plus the per-broker request-processing resource the
    /// simulator models.
    Calibrated,
    /// Broker storage alone.
    StorageOnly,
}

pub fn utilizations(spec: &ScenarioSpec, a: f64, set: ResourceSet) -> BTreeMap<String, f64> {
    let d = estimate_demand(spec, a);
    let mut m = BTreeMap::new();
    m.insert(
        BROKER_STORAGE.to_string(),
        d.per_broker_write / spec.broker_storage_capacity(),
    );
    if set == ResourceSet::StorageOnly {
        return m;
    }
    m.insert(
        BROKER_NETWORK.to_string(),
        d.per_broker_network_in.max(d.per_broker_network_out) / spec.network_capacity,
    );
    let mut send = d.per_producer_send / spec.producer_send_capacity;
    if spec.producer_mode == ProducerMode::Scheduled {
        // One producer loop both ingests and sends each tick's frames.
        if let Some(p) = spec.profile(INGEST) {
            send += p.mean / spec.frame_interval;
        }
    }
    m.insert(PRODUCER_SEND.to_string(), send);
    if set == ResourceSet::Calibrated {
        m.insert(
            BROKER_PROC.to_string(),
            d.per_broker_write / spec.broker_proc_capacity,
        );
    }
    m
}

pub fn predict_stability(spec: &ScenarioSpec, a: f64) -> StabilityVerdict {
    StabilityVerdict::from_utilizations(utilizations(spec, a, ResourceSet::Standard))
}

pub fn predict_stability_with(spec: &ScenarioSpec, a: f64, set: ResourceSet) -> StabilityVerdict {
    StabilityVerdict::from_utilizations(utilizations(spec, a, set))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "outcome", rename_all = "kebab-case")]
pub enum AxisAnswer {
    Found { value: f64 },
    Infeasible { binding_resource: String },
}

impl AxisAnswer {
    pub fn value(&self) -> Option<f64> {
        match self {
            AxisAnswer::Found { value } => Some(*value),
            AxisAnswer::Infeasible { .. } => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AxisOptions {
    pub drives_per_broker: AxisAnswer,
    pub brokers: AxisAnswer,
    pub scale_factor: AxisAnswer,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MitigationOptions {
    pub target_acceleration: f64,
    /// Storage bandwidth alone.
    pub storage_only: AxisOptions,
    /// Every modeled resource, including broker request processing.
    pub calibrated: AxisOptions,
}

/// Largest drive or broker count the searches consider.
pub const SEARCH_LIMIT: u32 = 4096;
/// Scale factors considered on the size axis: 1, 1/2, 1/4, ...
pub const SCALE_STEPS: u32 = 16;

fn stable_under(spec: &ScenarioSpec, a: f64, set: ResourceSet) -> Result<(), String> {
    let v = predict_stability_with(spec, a, set);
    match v.binding_resource {
        None => Ok(()),
        Some(r) => Err(r),
    }
}

fn search_count<F>(spec: &ScenarioSpec, a: f64, set: ResourceSet, start: u32, apply: F) -> AxisAnswer
where
    F: Fn(&mut ScenarioSpec, u32),
{
    let probe = |n: u32| {
        let mut s = spec.clone();
        apply(&mut s, n);
        stable_under(&s, a, set)
    };
    // Stability is monotone in the count, so bisect for the first stable value.
    let mut hi = start.max(1);
    let mut last_binding = match probe(hi) {
        Ok(()) => return AxisAnswer::Found { value: hi as f64 },
        Err(r) => r,
    };
    let lo = loop {
        if hi >= SEARCH_LIMIT {
            return AxisAnswer::Infeasible {
                binding_resource: last_binding,
            };
        }
        let prev = hi;
        hi = (hi * 2).min(SEARCH_LIMIT);
        match probe(hi) {
            Ok(()) => break prev,
            Err(r) => last_binding = r,
        }
    };
    let mut lo = lo;
    while hi - lo > 1 {
        let mid = lo + (hi - lo) / 2;
        if probe(mid).is_ok() {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    AxisAnswer::Found { value: hi as f64 }
}

fn search_scale(spec: &ScenarioSpec, a: f64, set: ResourceSet) -> AxisAnswer {
    let mut last = String::new();
    for k in 0..=SCALE_STEPS {
        let mut s = spec.clone();
        s.message_size.scale_factor = 1.0 / (1u64 << k) as f64;
        match stable_under(&s, a, set) {
            Ok(()) => {
                return AxisAnswer::Found {
                    value: s.message_size.scale_factor,
                }
            }
            Err(r) => last = r,
        }
    }
    AxisAnswer::Infeasible {
        binding_resource: last,
    }
}

fn axis_options(spec: &ScenarioSpec, a: f64, set: ResourceSet) -> AxisOptions {
    AxisOptions {
        drives_per_broker: search_count(spec, a, set, 1, |s, n| s.drives_per_broker = n),
        brokers: search_count(spec, a, set, spec.replication_factor, |s, n| s.brokers = n),
        scale_factor: search_scale(spec, a, set),
    }
}

/// Minimal drives per broker, minimal broker count and maximal message
/// scale (halving steps) that make `target_a` stable, each varied alone.
pub fn min_mitigation(spec: &ScenarioSpec, target_a: f64) -> Result<MitigationOptions, AnalyticError> {
    if !(target_a >= 1.0) {
        return Err(AnalyticError::Acceleration(target_a));
    }
    Ok(MitigationOptions {
        target_acceleration: target_a,
        storage_only: axis_options(spec, target_a, ResourceSet::StorageOnly),
        calibrated: axis_options(spec, target_a, ResourceSet::Calibrated),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::builtin_scenario;

    #[test]
    fn amdahl_reference_points() {
        assert!((amdahl_speedup(0.425, 8.0).unwrap() - 1.592).abs() < 1e-3);
        assert_eq!(amdahl_speedup(0.3, 1.0).unwrap(), 1.0);
        assert!((amdahl_speedup(0.875, 32.0).unwrap() - 6.564).abs() < 1e-3);
        assert!((amdahl_speedup(0.875, f64::INFINITY).unwrap() - 8.0).abs() < 1e-12);
    }

    #[test]
    fn amdahl_domain_errors() {
        assert!(amdahl_speedup(-0.1, 2.0).is_err());
        assert!(amdahl_speedup(1.1, 2.0).is_err());
        assert!(amdahl_speedup(0.5, 0.5).is_err());
        assert!(amdahl_speedup(0.5, f64::NAN).is_err());
    }

    #[test]
    fn native_demand() {
        let s = builtin_scenario("face-recognition-native").unwrap();
        let d = estimate_demand(&s, 1.0);
        let hand = 840.0 * 10.0 * 0.64 * 37_300.0;
        assert!((d.per_broker_write - hand).abs() < 1e-3);
        assert!((d.aggregate_write - 3.0 * hand).abs() < 1e-3);
    }

    #[test]
    fn zero_producers_zero_demand() {
        let mut s = builtin_scenario("face-recognition-native").unwrap();
        s.producers = 0;
        let d = estimate_demand(&s, 4.0);
        assert_eq!(d.per_broker_write, 0.0);
        assert_eq!(d.per_broker_network_in, 0.0);
        assert_eq!(d.per_producer_send, 0.0);
    }

    #[test]
    fn accel_boundary() {
        let s = builtin_scenario("face-recognition-accel").unwrap();
        let v6 = predict_stability(&s, 6.0);
        assert!(v6.stable);
        assert!((v6.utilization(BROKER_STORAGE) - 0.75).abs() < 0.01);
        let v8 = predict_stability(&s, 8.0);
        assert!(!v8.stable);
        assert!((v8.utilization(BROKER_STORAGE) - 1.0).abs() < 0.01);
        assert_eq!(v8.binding_resource.as_deref(), Some(BROKER_STORAGE));
    }

    #[test]
    fn builtins_are_stable_at_native_speed() {
        for name in crate::scenario::BUILTIN_NAMES {
            assert!(predict_stability(&builtin_scenario(name).unwrap(), 1.0).stable, "{name}");
        }
    }

    #[test]
    fn mitigation_at_native_speed_changes_nothing() {
        let s = builtin_scenario("face-recognition-accel").unwrap();
        let m = min_mitigation(&s, 1.0).unwrap();
        assert_eq!(m.calibrated.drives_per_broker.value(), Some(1.0));
        assert_eq!(m.calibrated.brokers.value(), Some(3.0));
        assert_eq!(m.calibrated.scale_factor.value(), Some(1.0));
    }

    #[test]
    fn send_bound_scenario_is_infeasible_on_broker_axes() {
        let mut s = builtin_scenario("object-detection-accel").unwrap();
        s.producer_send_capacity = 1e6;
        let m = min_mitigation(&s, 1.0).unwrap();
        assert_eq!(
            m.calibrated.drives_per_broker,
            AxisAnswer::Infeasible {
                binding_resource: PRODUCER_SEND.into()
            }
        );
    }
}
