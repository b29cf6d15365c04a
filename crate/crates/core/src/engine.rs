//! Deterministic discrete-event kernel.
//!
//! Pending events live in an ordered map keyed by `(time, seq)`. `seq` is
//! handed out at schedule time, so events at the same instant are dispatched
//! in the order they were scheduled. Every dispatched event is appended to the
//! [`Trace`].

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::fmt::Write as _;

use thiserror::Error;

use crate::model::{EventKind, EventPayload, JobId, ResourceId, Seconds, SimEvent};

#[derive(Clone, Copy, Debug, PartialEq)]
struct Key {
    time: Seconds,
    seq: u64,
}

impl Eq for Key {}

impl Ord for Key {
    fn cmp(&self, other: &Self) -> Ordering {
        self.time.total_cmp(&other.time).then(self.seq.cmp(&other.seq))
    }
}

impl PartialOrd for Key {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Handle to a scheduled event, usable for cancellation.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EventHandle {
    key: Key,
}

impl EventHandle {
    pub fn time(&self) -> Seconds {
        self.key.time
    }

    pub fn seq(&self) -> u64 {
        self.key.seq
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EngineError {
    #[error("cannot schedule at t={at} before the current clock t={now}")]
    TimeInPast { at: Seconds, now: Seconds },
    #[error("cannot schedule at non-finite time {0}")]
    NonFiniteTime(Seconds),
}

/// Counters used to check that no event is lost.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct EngineStats {
    pub scheduled: u64,
    pub dispatched: u64,
    pub cancelled: u64,
}

#[derive(Debug, Default)]
pub struct EventQueue {
    pending: BTreeMap<Key, SimEvent>,
    next_seq: u64,
    now: Seconds,
    stats: EngineStats,
}

impl EventQueue {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn now(&self) -> Seconds {
        self.now
    }

    pub fn len(&self) -> usize {
        self.pending.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pending.is_empty()
    }

    pub fn stats(&self) -> EngineStats {
        self.stats
    }

    pub fn schedule(
        &mut self,
        at: Seconds,
        kind: EventKind,
        payload: EventPayload,
    ) -> Result<EventHandle, EngineError> {
        if !at.is_finite() {
            return Err(EngineError::NonFiniteTime(at));
        }
        if at < self.now {
            return Err(EngineError::TimeInPast { at, now: self.now });
        }
        let key = Key { time: at, seq: self.next_seq };
        self.next_seq += 1;
        self.stats.scheduled += 1;
        let event = SimEvent {
            time: at,
            seq: key.seq,
            kind,
            job_id: payload.job_id,
            phase_index: payload.phase_index,
            resources: payload.resources,
        };
        self.pending.insert(key, event);
        Ok(EventHandle { key })
    }

    /// Schedules at the current clock.
    pub fn schedule_now(&mut self, kind: EventKind, payload: EventPayload) -> EventHandle {
        let now = self.now;
        self.schedule(now, kind, payload).expect("current clock is always schedulable")
    }

    /// Removes a pending event. Returns false if it was already dispatched or
    /// cancelled.
    pub fn cancel(&mut self, handle: EventHandle) -> bool {
        let removed = self.pending.remove(&handle.key).is_some();
        if removed {
            self.stats.cancelled += 1;
        }
        removed
    }

    pub fn is_pending(&self, handle: EventHandle) -> bool {
        self.pending.contains_key(&handle.key)
    }

    fn next_time(&self) -> Option<Seconds> {
        self.pending.first_key_value().map(|(k, _)| k.time)
    }

    fn pop(&mut self) -> Option<SimEvent> {
        let (key, event) = self.pending.pop_first()?;
        debug_assert!(key.time >= self.now);
        self.now = key.time;
        self.stats.dispatched += 1;
        Some(event)
    }
}

/// Reaction to dispatched events.
pub trait Handler {
    fn handle(&mut self, queue: &mut EventQueue, event: &SimEvent) -> Result<(), String>;

    /// Called once all events at the current instant have been dispatched.
    /// Events scheduled here at the current time are dispatched before the
    /// clock advances, after which `settle` runs again.
    fn settle(&mut self, _queue: &mut EventQueue) -> Result<(), String> {
        Ok(())
    }
}

impl<F> Handler for F
where
    F: FnMut(&mut EventQueue, &SimEvent) -> Result<(), String>,
{
    fn handle(&mut self, queue: &mut EventQueue, event: &SimEvent) -> Result<(), String> {
        self(queue, event)
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Trace {
    pub events: Vec<SimEvent>,
    /// Clock value when the run finished.
    pub horizon: Seconds,
    pub stats: EngineStats,
}

#[derive(Debug, Error, Clone, PartialEq)]
#[error("handler fault at t={} on {} (seq {}): {reason}", .event.time, .event.kind, .event.seq)]
pub struct HandlerFault {
    pub event: SimEvent,
    pub reason: String,
    /// Everything dispatched up to and including the faulting event.
    pub partial: Trace,
}

/// Dispatches until the queue is empty.
pub fn run<H: Handler + ?Sized>(mut queue: EventQueue, handler: &mut H) -> Result<Trace, Box<HandlerFault>> {
    let mut events = Vec::new();
    let fault = |events: &[SimEvent], queue: &EventQueue, event: SimEvent, reason: String| {
        Box::new(HandlerFault {
            event,
            reason,
            partial: Trace { events: events.to_vec(), horizon: queue.now(), stats: queue.stats() },
        })
    };
    while let Some(event) = queue.pop() {
        events.push(event.clone());
        if let Err(reason) = handler.handle(&mut queue, &event) {
            return Err(fault(&events, &queue, event, reason));
        }
        if queue.next_time() != Some(queue.now()) {
            if let Err(reason) = handler.settle(&mut queue) {
                return Err(fault(&events, &queue, event, reason));
            }
        }
    }
    Ok(Trace { events, horizon: queue.now(), stats: queue.stats() })
}

impl Trace {
    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    /// Tab-separated dump: time, seq, kind, job_id, phase_index, resource_ids.
    /// Absent fields are written as `-`; resources are comma-separated.
    pub fn dump(&self) -> String {
        let mut out = String::new();
        for e in &self.events {
            let job = e.job_id.map_or("-".to_string(), |j| j.to_string());
            let phase = e.phase_index.map_or("-".to_string(), |p| p.to_string());
            let res = if e.resources.is_empty() {
                "-".to_string()
            } else {
                e.resources.iter().map(ToString::to_string).collect::<Vec<_>>().join(",")
            };
            writeln!(out, "{}\t{}\t{}\t{}\t{}\t{}", e.time, e.seq, e.kind, job, phase, res).unwrap();
        }
        out
    }

    /// Parses the output of [`Trace::dump`]. The horizon is the last event time.
    pub fn parse_dump(text: &str) -> Result<Trace, String> {
        fn opt(s: &str) -> Option<&str> {
            (s != "-").then_some(s)
        }
        let mut events = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.is_empty() {
                continue;
            }
            let err = |what: &str| format!("line {}: {what}", i + 1);
            let fields: Vec<&str> = line.split('\t').collect();
            let [time, seq, kind, job, phase, res] = fields[..] else {
                return Err(err("expected 6 tab-separated fields"));
            };
            events.push(SimEvent {
                time: time.parse().map_err(|_| err("bad time"))?,
                seq: seq.parse().map_err(|_| err("bad seq"))?,
                kind: kind.parse().map_err(|e: String| err(&e))?,
                job_id: opt(job).map(|j| j.parse().map(JobId)).transpose().map_err(|_| err("bad job id"))?,
                phase_index: opt(phase).map(str::parse).transpose().map_err(|_| err("bad phase index"))?,
                resources: match opt(res) {
                    None => Vec::new(),
                    Some(r) => {
                        r.split(',').map(str::parse::<ResourceId>).collect::<Result<_, _>>().map_err(|e| err(&e))?
                    }
                },
            });
        }
        let horizon = events.last().map_or(0.0, |e| e.time);
        let n = events.len() as u64;
        Ok(Trace { events, horizon, stats: EngineStats { scheduled: n, dispatched: n, cancelled: 0 } })
    }
}
