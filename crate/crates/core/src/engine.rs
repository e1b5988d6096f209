//! Seeded discrete-event kernel.
//!
//! The [`Engine`] owns the clock and a time-ordered queue. Events are
//! dispatched in `(time, sequence)` order where the sequence number is
//! assigned at scheduling time, so simultaneous events fire in the order
//! they were scheduled. Randomness comes from [`RngStream`]s derived from
//! the engine seed and a stream id, which keeps draws for one purpose
//! (say, sector corruption) independent of how many draws another purpose
//! consumed.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::fmt;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::state::{DocId, ServerId};
use crate::units::Hours;

/// Clock of one simulation run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimClock {
    now: Hours,
    horizon: Hours,
}

impl SimClock {
    pub fn now(&self) -> Hours {
        self.now
    }

    pub fn horizon(&self) -> Hours {
        self.horizon
    }
}

/// Everything that can happen during a run, one family per threat layer
/// plus the policy events. Variants that target something that may have
/// changed since scheduling carry an epoch so stale events can be ignored.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum EventKind {
    CopyCorruption { server: ServerId, doc: DocId, epoch: u32 },
    GlitchStart { server: ServerId, glitch: u16 },
    GlitchEnd { server: ServerId, glitch: u16 },
    ServerFailure { server: ServerId, epoch: u32 },
    ShockRateStart { shock: u16 },
    ShockRateEnd { shock: u16, episode: u32 },
    ShockSpan { shock: u16 },
    DocumentAudit { cycle: u32, segment: u32 },
    ServerProbe,
    /// A replacement server finished provisioning.
    ServerActivated { server: ServerId },
    Horizon,
}

impl EventKind {
    pub fn name(&self) -> &'static str {
        match self {
            EventKind::CopyCorruption { .. } => "CopyCorruption",
            EventKind::GlitchStart { .. } => "GlitchStart",
            EventKind::GlitchEnd { .. } => "GlitchEnd",
            EventKind::ServerFailure { .. } => "ServerFailure",
            EventKind::ShockRateStart { .. } => "ShockRateStart",
            EventKind::ShockRateEnd { .. } => "ShockRateEnd",
            EventKind::ShockSpan { .. } => "ShockSpan",
            EventKind::DocumentAudit { .. } => "DocumentAudit",
            EventKind::ServerProbe => "ServerProbe",
            EventKind::ServerActivated { .. } => "ServerActivated",
            EventKind::Horizon => "Horizon",
        }
    }
}

impl fmt::Display for EventKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self:?}")
    }
}

#[derive(Debug, Clone, Copy)]
struct Scheduled {
    time: Hours,
    seq: u64,
    event: EventKind,
}

impl PartialEq for Scheduled {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Scheduled {}

impl PartialOrd for Scheduled {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Scheduled {
    // reversed: BinaryHeap is a max-heap
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .time
            .total_cmp(&self.time)
            .then_with(|| other.seq.cmp(&self.seq))
    }
}

/// One dispatched event.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub time: Hours,
    pub seq: u64,
    pub event: EventKind,
}

/// Ordered record of dispatched events. `Horizon` is always the last entry.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EventTrace {
    pub entries: Vec<TraceEntry>,
    /// Total events dispatched, including any dropped from `entries`.
    pub dispatched: u64,
    pub truncated: bool,
}

/// How much of the trace to keep in memory.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TraceMode {
    Full,
    /// Keep at most this many entries (the closing `Horizon` is always kept).
    Limit(usize),
}

/// The scheduling half of the engine, handed to event handlers.
#[derive(Debug)]
pub struct Scheduler {
    clock: SimClock,
    queue: BinaryHeap<Scheduled>,
    next_seq: u64,
    seed: u64,
    halted: bool,
}

impl Scheduler {
    pub fn now(&self) -> Hours {
        self.clock.now
    }

    pub fn horizon(&self) -> Hours {
        self.clock.horizon
    }

    pub fn clock(&self) -> SimClock {
        self.clock
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn pending(&self) -> usize {
        self.queue.len()
    }

    /// Enqueues `event` at time `at`.
    ///
    /// Events past the horizon are accepted and silently dropped since they
    /// can never be dispatched. Scheduling in the past is a model bug.
    pub fn schedule(&mut self, at: Hours, event: EventKind) -> Result<()> {
        if at.is_nan() || at < self.clock.now {
            return Err(Error::logic(format!(
                "{event} scheduled at t={at} before now={}",
                self.clock.now
            )));
        }
        let seq = self.next_seq;
        self.next_seq += 1;
        if at <= self.clock.horizon {
            self.queue.push(Scheduled { time: at, seq, event });
        }
        Ok(())
    }

    /// Stops the run after the current event; the clock then jumps to the
    /// horizon.
    pub fn halt(&mut self) {
        self.halted = true;
    }

    /// Substream `stream` of this engine's seed.
    pub fn rng(&self, stream: u64) -> RngStream {
        RngStream::new(self.seed, stream)
    }
}

/// Receives dispatched events.
pub trait EventHandler {
    fn handle(&mut self, sched: &mut Scheduler, event: EventKind) -> Result<()>;
}

/// Single-run discrete-event engine.
#[derive(Debug)]
pub struct Engine {
    sched: Scheduler,
    trace_mode: TraceMode,
}

impl Engine {
    pub fn new(seed: u64, horizon: Hours) -> Result<Self> {
        if !(horizon > 0.0) || !horizon.is_finite() {
            return Err(Error::config(format!(
                "horizon must be positive and finite, got {horizon}"
            )));
        }
        Ok(Engine {
            sched: Scheduler {
                clock: SimClock { now: 0.0, horizon },
                queue: BinaryHeap::new(),
                next_seq: 0,
                seed,
                halted: false,
            },
            trace_mode: TraceMode::Full,
        })
    }

    pub fn with_trace_mode(mut self, mode: TraceMode) -> Self {
        self.trace_mode = mode;
        self
    }

    pub fn now(&self) -> Hours {
        self.sched.now()
    }

    pub fn horizon(&self) -> Hours {
        self.sched.horizon()
    }

    pub fn pending(&self) -> usize {
        self.sched.pending()
    }

    pub fn schedule(&mut self, at: Hours, event: EventKind) -> Result<()> {
        self.sched.schedule(at, event)
    }

    pub fn scheduler(&mut self) -> &mut Scheduler {
        &mut self.sched
    }

    /// Dispatches events until the queue drains, the handler halts the
    /// run, or the next event lies past the horizon. Finishes by
    /// dispatching `Horizon` at the horizon time.
    pub fn run<H: EventHandler>(&mut self, handler: &mut H) -> Result<EventTrace> {
        let mut trace = EventTrace::default();
        let limit = match self.trace_mode {
            TraceMode::Full => usize::MAX,
            TraceMode::Limit(n) => n,
        };
        while !self.sched.halted {
            let Some(next) = self.sched.queue.pop() else {
                break;
            };
            debug_assert!(next.time >= self.sched.clock.now);
            self.sched.clock.now = next.time;
            handler
                .handle(&mut self.sched, next.event)
                .map_err(|e| Error::Event {
                    time: next.time,
                    event: next.event.to_string(),
                    source: Box::new(e),
                })?;
            trace.dispatched += 1;
            if trace.entries.len() < limit {
                trace.entries.push(TraceEntry {
                    time: next.time,
                    seq: next.seq,
                    event: next.event,
                });
            } else {
                trace.truncated = true;
            }
        }
        let horizon = self.sched.clock.horizon;
        self.sched.clock.now = horizon;
        let seq = self.sched.next_seq;
        self.sched.next_seq += 1;
        handler
            .handle(&mut self.sched, EventKind::Horizon)
            .map_err(|e| Error::Event {
                time: horizon,
                event: EventKind::Horizon.to_string(),
                source: Box::new(e),
            })?;
        trace.dispatched += 1;
        trace.entries.push(TraceEntry {
            time: horizon,
            seq,
            event: EventKind::Horizon,
        });
        Ok(trace)
    }
}

/// A reproducible random stream identified by `(seed, stream id)`.
///
/// Backed by ChaCha8, whose native 64-bit stream parameter gives each id an
/// independent keystream under the same key.
#[derive(Debug, Clone)]
pub struct RngStream {
    seed: u64,
    stream: u64,
    inner: ChaCha8Rng,
}

impl RngStream {
    pub fn new(seed: u64, stream: u64) -> Self {
        let mut inner = ChaCha8Rng::seed_from_u64(seed);
        inner.set_stream(stream);
        RngStream { seed, stream, inner }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream_id(&self) -> u64 {
        self.stream
    }

    /// Uniform draw in the open interval (0, 1).
    pub fn open01(&mut self) -> f64 {
        ((self.inner.next_u64() >> 11) as f64 + 0.5) * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform index in `0..n`.
    pub fn below(&mut self, n: usize) -> usize {
        debug_assert!(n > 0);
        // Lemire's multiply-shift; bias is below 2^-32 for any n we use
        ((self.inner.next_u64() >> 32) * n as u64 >> 32) as usize
    }
}

impl RngCore for RngStream {
    fn next_u32(&mut self) -> u32 {
        self.inner.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    fn fill_bytes(&mut self, dest: &mut [u8]) {
        self.inner.fill_bytes(dest)
    }
}

/// Exponential inter-arrival time for a Poisson process of rate `hazard`
/// per hour. A zero hazard never fires and yields `+inf`.
pub fn draw_exponential(rng: &mut RngStream, hazard: f64) -> Result<Hours> {
    if hazard.is_nan() || hazard < 0.0 {
        return Err(Error::config(format!("hazard must be non-negative, got {hazard}")));
    }
    if hazard == 0.0 {
        return Ok(f64::INFINITY);
    }
    // libm keeps the draw bit-identical across platforms
    Ok(-libm::log(rng.open01()) / hazard)
}

/// Stable per-run seed: a SplitMix64 finalizer over `(master, index)`.
///
/// Seed of run `i` is `mix(mix(master) ^ i)` with
/// `mix(z) = splitmix64_finalize(z + 0x9E3779B97F4A7C15)`.
pub fn derive_seed(master: u64, index: u64) -> u64 {
    fn mix(z: u64) -> u64 {
        let mut z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }
    mix(mix(master) ^ index)
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Recorder {
        seen: Vec<(Hours, EventKind)>,
    }

    impl EventHandler for Recorder {
        fn handle(&mut self, sched: &mut Scheduler, event: EventKind) -> Result<()> {
            self.seen.push((sched.now(), event));
            Ok(())
        }
    }

    fn probe(i: u32) -> EventKind {
        EventKind::DocumentAudit { cycle: 0, segment: i }
    }

    #[test]
    fn fresh_engine_is_empty() {
        let e = Engine::new(42, 100_000.0).unwrap();
        assert_eq!(e.now(), 0.0);
        assert_eq!(e.pending(), 0);
    }

    #[test]
    fn rejects_bad_horizon() {
        assert!(matches!(Engine::new(42, 0.0), Err(Error::Config(_))));
        assert!(Engine::new(42, -1.0).is_err());
        assert!(Engine::new(42, f64::NAN).is_err());
    }

    #[test]
    fn empty_queue_yields_only_horizon() {
        let mut e = Engine::new(1, 10.0).unwrap();
        let trace = e.run(&mut Recorder { seen: vec![] }).unwrap();
        assert_eq!(trace.entries.len(), 1);
        assert_eq!(trace.entries[0].event, EventKind::Horizon);
        assert_eq!(trace.entries[0].time, 10.0);
    }

    #[test]
    fn single_event_then_horizon() {
        let mut e = Engine::new(1, 10.0).unwrap();
        let ev = EventKind::CopyCorruption {
            server: ServerId(0),
            doc: DocId(0),
            epoch: 0,
        };
        e.schedule(5.0, ev).unwrap();
        e.schedule(11.0, probe(0)).unwrap();
        let trace = e.run(&mut Recorder { seen: vec![] }).unwrap();
        let got: Vec<_> = trace.entries.iter().map(|t| (t.time, t.event)).collect();
        assert_eq!(got, vec![(5.0, ev), (10.0, EventKind::Horizon)]);
    }

    #[test]
    fn ties_dispatch_in_scheduling_order() {
        let mut e = Engine::new(1, 10.0).unwrap();
        e.schedule(3.0, probe(1)).unwrap();
        e.schedule(2.0, probe(2)).unwrap();
        e.schedule(3.0, probe(3)).unwrap();
        e.schedule(0.0, probe(4)).unwrap();
        let mut rec = Recorder { seen: vec![] };
        e.run(&mut rec).unwrap();
        let order: Vec<_> = rec.seen.iter().map(|(_, ev)| *ev).collect();
        assert_eq!(
            order,
            vec![probe(4), probe(2), probe(1), probe(3), EventKind::Horizon]
        );
    }

    struct Chain;

    impl EventHandler for Chain {
        fn handle(&mut self, sched: &mut Scheduler, event: EventKind) -> Result<()> {
            if let EventKind::DocumentAudit { segment, .. } = event {
                // same-instant event goes before anything strictly later
                if segment == 0 {
                    sched.schedule(sched.now(), probe(1))?;
                }
            }
            Ok(())
        }
    }

    #[test]
    fn same_instant_before_later() {
        let mut e = Engine::new(1, 10.0).unwrap();
        e.schedule(1.0, probe(0)).unwrap();
        e.schedule(1.5, probe(2)).unwrap();
        let trace = e.run(&mut Chain).unwrap();
        let order: Vec<_> = trace.entries.iter().map(|t| t.event).collect();
        assert_eq!(order, vec![probe(0), probe(1), probe(2), EventKind::Horizon]);
    }

    struct Backwards;

    impl EventHandler for Backwards {
        fn handle(&mut self, sched: &mut Scheduler, _: EventKind) -> Result<()> {
            sched.schedule(sched.now() - 1.0, EventKind::ServerProbe)
        }
    }

    #[test]
    fn scheduling_in_the_past_aborts_the_run() {
        let mut e = Engine::new(1, 10.0).unwrap();
        e.schedule(5.0, probe(0)).unwrap();
        let err = e.run(&mut Backwards).unwrap_err();
        match err {
            Error::Event { time, source, .. } => {
                assert_eq!(time, 5.0);
                assert!(matches!(*source, Error::Logic(_)));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn trace_limit_keeps_horizon() {
        let mut e = Engine::new(1, 10.0).unwrap().with_trace_mode(TraceMode::Limit(1));
        for i in 0..5 {
            e.schedule(i as f64, probe(i)).unwrap();
        }
        let trace = e.run(&mut Recorder { seen: vec![] }).unwrap();
        assert!(trace.truncated);
        assert_eq!(trace.dispatched, 6);
        assert_eq!(trace.entries.len(), 2);
        assert_eq!(trace.entries.last().unwrap().event, EventKind::Horizon);
    }

    #[test]
    fn exponential_edge_cases() {
        let mut rng = RngStream::new(42, 0);
        assert!(draw_exponential(&mut rng, 0.0).unwrap().is_infinite());
        assert!(matches!(draw_exponential(&mut rng, -1.0), Err(Error::Config(_))));
        assert!(draw_exponential(&mut rng, f64::NAN).is_err());
    }

    #[test]
    fn exponential_mean_converges() {
        let hazard = std::f64::consts::LN_2 / 1000.0;
        let mut rng = RngStream::new(7, 3);
        let n = 1_000_000;
        let mean = (0..n)
            .map(|_| draw_exponential(&mut rng, hazard).unwrap())
            .sum::<f64>()
            / n as f64;
        let expected = 1000.0 / std::f64::consts::LN_2; // 1442.695 h
        assert!((mean / expected - 1.0).abs() < 0.01, "mean {mean}");
    }

    #[test]
    fn streams_are_reproducible_and_distinct() {
        let a: Vec<u64> = (0..8).map({
            let mut r = RngStream::new(9, 1);
            move |_| r.next_u64()
        }).collect();
        let b: Vec<u64> = (0..8).map({
            let mut r = RngStream::new(9, 1);
            move |_| r.next_u64()
        }).collect();
        let c: Vec<u64> = (0..8).map({
            let mut r = RngStream::new(9, 2);
            move |_| r.next_u64()
        }).collect();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn open01_never_hits_endpoints() {
        let mut r = RngStream::new(0, 0);
        for _ in 0..100_000 {
            let u = r.open01();
            assert!(u > 0.0 && u < 1.0);
        }
    }

    #[test]
    fn derived_seeds_differ() {
        let seeds: std::collections::HashSet<u64> = (0..10_000).map(|i| derive_seed(42, i)).collect();
        assert_eq!(seeds.len(), 10_000);
        assert_ne!(derive_seed(1, 0), derive_seed(2, 0));
        assert_eq!(derive_seed(42, 17), derive_seed(42, 17));
    }
}
