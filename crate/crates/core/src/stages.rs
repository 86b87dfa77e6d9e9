//! Producer and consumer stage models: frame records, compute-time samplers,
//! the acceleration transform, fan-out draws and frame-set delay.

use serde::Serialize;
use thiserror::Error;

use crate::kernel::{secs_to_nanos, SimRng};
use crate::scenario::{ComputeProfile, DistributionFamily, FanoutKind, FanoutModel, ScenarioSpec};

/// Lifecycle of one frame, in virtual nanoseconds.
///
/// For scheduled producers the producer stage is ingest alone, so
/// `detect_end == ingest_end`, and the `identify_*` fields hold the
/// consumer stage (detection).
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct FrameRecord {
    pub frame_id: u64,
    pub producer_id: u32,
    pub scheduled_start: u64,
    pub ingest_start: u64,
    pub ingest_end: u64,
    pub detect_end: u64,
    pub produce_enqueue: Option<u64>,
    pub fetch_deliver: Option<u64>,
    pub identify_start: Option<u64>,
    pub identify_end: Option<u64>,
    pub fanout: u32,
    pub item_bytes: u64,
}

impl FrameRecord {
    pub fn total_bytes(&self) -> u64 {
        self.item_bytes * self.fanout as u64
    }

    pub fn is_complete(&self) -> bool {
        self.fanout == 0 || self.identify_end.is_some()
    }

    /// Frame end: identification end, or detection end when nothing was found.
    pub fn end(&self) -> Option<u64> {
        if self.fanout == 0 {
            Some(self.detect_end)
        } else {
            self.identify_end
        }
    }

    /// Timestamps in lifecycle order, skipping absent ones.
    pub fn timeline(&self) -> Vec<u64> {
        let mut v = vec![
            self.scheduled_start,
            self.ingest_start,
            self.ingest_end,
            self.detect_end,
        ];
        v.extend(
            [
                self.produce_enqueue,
                self.fetch_deliver,
                self.identify_start,
                self.identify_end,
            ]
            .into_iter()
            .flatten(),
        );
        v
    }

    pub fn is_ordered(&self) -> bool {
        self.timeline().windows(2).all(|w| w[0] <= w[1])
    }
}

/// Divides compute times by the acceleration factor.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AccelerationTransform {
    pub factor: f64,
}

impl AccelerationTransform {
    pub fn new(factor: f64) -> Self {
        assert!(factor >= 1.0, "acceleration factor must be >= 1");
        Self { factor }
    }

    pub fn apply(&self, seconds: f64) -> f64 {
        if self.factor == 1.0 {
            seconds
        } else {
            seconds / self.factor
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StageError {
    #[error("stage `{0}` has no usable profile")]
    BadProfile(String),
    #[error("frame-set delay applies only to scheduled producers")]
    NotScheduled,
}

/// Draws service times (seconds) for one compute profile.
#[derive(Debug, Clone)]
pub enum Sampler {
    Fixed(f64),
    Lognormal { mu: f64, sigma: f64 },
    Empirical(Vec<f64>),
}

impl Sampler {
    pub fn from_profile(stage: &str, p: &ComputeProfile) -> Result<Self, StageError> {
        match p.distribution {
            DistributionFamily::Deterministic => Ok(Sampler::Fixed(p.mean)),
            DistributionFamily::Lognormal => {
                let fit = p
                    .lognormal_fit()
                    .ok_or_else(|| StageError::BadProfile(stage.into()))?;
                Ok(Sampler::Lognormal {
                    mu: fit.mu,
                    sigma: fit.sigma,
                })
            }
            DistributionFamily::Empirical => {
                if p.samples.is_empty() {
                    Err(StageError::BadProfile(stage.into()))
                } else {
                    Ok(Sampler::Empirical(p.samples.clone()))
                }
            }
        }
    }

    pub fn sample_secs(&self, rng: &mut SimRng) -> f64 {
        match self {
            Sampler::Fixed(v) => *v,
            Sampler::Lognormal { mu, sigma } => libm::exp(mu + sigma * rng.standard_normal()),
            Sampler::Empirical(pool) => pool[rng.below(pool.len() as u64) as usize],
        }
    }

    /// Accelerated draw in nanoseconds.
    pub fn sample_nanos(&self, rng: &mut SimRng, accel: AccelerationTransform) -> u64 {
        secs_to_nanos(accel.apply(self.sample_secs(rng)))
    }
}

/// Draws fan-out counts by inverse CDF over the categorical weights.
#[derive(Debug, Clone)]
pub struct FanoutSampler {
    constant: Option<u32>,
    cumulative: Vec<(f64, u32)>,
}

impl FanoutSampler {
    pub fn new(model: &FanoutModel) -> Self {
        match model.kind {
            FanoutKind::Constant => Self {
                constant: Some(model.constant_value),
                cumulative: Vec::new(),
            },
            FanoutKind::Categorical => {
                let mut acc = 0.0;
                let cumulative = model
                    .categorical
                    .iter()
                    .map(|o| {
                        acc += o.probability;
                        (acc, o.count)
                    })
                    .collect();
                Self {
                    constant: None,
                    cumulative,
                }
            }
        }
    }

    pub fn sample(&self, rng: &mut SimRng) -> u32 {
        if let Some(c) = self.constant {
            return c;
        }
        let u = rng.uniform();
        for &(c, count) in &self.cumulative {
            if u <= c {
                return count;
            }
        }
        self.cumulative.last().map(|x| x.1).unwrap_or(0)
    }
}

/// Frames in one scheduled tick: the acceleration factor, rounded, at least 1.
pub fn frames_per_tick(spec: &ScenarioSpec) -> u32 {
    (spec.acceleration.round() as u32).max(1)
}

/// One frame set of a scheduled producer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct FrameSetDelay {
    pub producer_id: u32,
    pub scheduled_start: u64,
    pub actual_start: u64,
    pub delay: u64,
}

/// Per-set start delay: first ingest start minus the scheduled tick time.
/// Records are grouped by (producer, scheduled start) and returned sorted.
pub fn od_frameset_delay(
    spec: &ScenarioSpec,
    log: &[FrameRecord],
) -> Result<Vec<FrameSetDelay>, StageError> {
    if spec.producer_mode != crate::scenario::ProducerMode::Scheduled {
        return Err(StageError::NotScheduled);
    }
    let mut sets: std::collections::BTreeMap<(u32, u64), u64> = Default::default();
    for r in log {
        let e = sets
            .entry((r.producer_id, r.scheduled_start))
            .or_insert(r.ingest_start);
        *e = (*e).min(r.ingest_start);
    }
    Ok(sets
        .into_iter()
        .map(|((producer_id, scheduled_start), actual_start)| FrameSetDelay {
            producer_id,
            scheduled_start,
            actual_start,
            delay: actual_start.saturating_sub(scheduled_start),
        })
        .collect())
}
