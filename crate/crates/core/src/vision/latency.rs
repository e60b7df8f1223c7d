use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use super::Capability;
use crate::plan::VisualType;

/// What a latency sample measured. Provider calls are keyed by capability.
pub type CallKind = Capability;

/// Where in a session a call was made.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct CallTag {
    pub step_index: Option<usize>,
    pub visual_type: Option<VisualType>,
}

impl CallTag {
    pub fn step(step_index: usize, visual_type: VisualType) -> Self {
        CallTag { step_index: Some(step_index), visual_type: Some(visual_type) }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CallOutcome {
    Ok,
    Error,
    Timeout,
    Cancelled,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatencySample {
    pub kind: CallKind,
    pub tag: CallTag,
    pub outcome: CallOutcome,
    pub duration: Duration,
    /// Processing time reported by the remote side, when it reports one.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reported: Option<Duration>,
}

/// Shared, append-only record of provider call latencies.
#[derive(Debug, Clone, Default)]
pub struct LatencyLog {
    samples: Arc<Mutex<Vec<LatencySample>>>,
}

impl LatencyLog {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn record(&self, sample: LatencySample) {
        self.samples.lock().expect("latency log poisoned").push(sample);
    }

    pub fn samples(&self) -> Vec<LatencySample> {
        self.samples.lock().expect("latency log poisoned").clone()
    }

    pub fn len(&self) -> usize {
        self.samples.lock().expect("latency log poisoned").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn take(&self) -> Vec<LatencySample> {
        std::mem::take(&mut *self.samples.lock().expect("latency log poisoned"))
    }

    pub fn for_visual_type(&self, t: VisualType) -> Vec<LatencySample> {
        self.samples().into_iter().filter(|s| s.tag.visual_type == Some(t)).collect()
    }

    /// Starts timing a call. Dropping the guard without finishing it
    /// records a cancelled sample.
    pub(crate) fn start(&self, kind: CallKind, tag: CallTag) -> PendingSample {
        PendingSample { log: self.clone(), kind, tag, started: Instant::now(), finished: false }
    }
}

pub(crate) struct PendingSample {
    log: LatencyLog,
    kind: CallKind,
    tag: CallTag,
    started: Instant,
    finished: bool,
}

impl PendingSample {
    pub(crate) fn finish(mut self, outcome: CallOutcome, reported: Option<Duration>) -> Duration {
        self.finished = true;
        self.emit(outcome, reported)
    }

    fn emit(&self, outcome: CallOutcome, reported: Option<Duration>) -> Duration {
        let duration = self.started.elapsed();
        self.log.record(LatencySample { kind: self.kind, tag: self.tag, outcome, duration, reported });
        duration
    }
}

impl Drop for PendingSample {
    fn drop(&mut self) {
        if !self.finished {
            self.emit(CallOutcome::Cancelled, None);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dropped_guard_records_cancellation() {
        let log = LatencyLog::new();
        drop(log.start(Capability::Bbox, CallTag::default()));
        let done = log.start(Capability::Plan, CallTag::step(2, VisualType::Widget));
        done.finish(CallOutcome::Ok, None);
        let samples = log.samples();
        assert_eq!(samples.len(), 2);
        assert_eq!(samples[0].outcome, CallOutcome::Cancelled);
        assert_eq!(samples[1].outcome, CallOutcome::Ok);
        assert_eq!(log.for_visual_type(VisualType::Widget).len(), 1);
    }
}
