//! One replication: the world that reacts to engine events.
//!
//! Every hazard is drawn as the time of its next occurrence. When a rate
//! changes (glitch onset, rate shock) the affected pending draws are
//! redrawn and the stale events are recognised by their epoch and ignored.

use rand_distr::{Distribution, LogNormal};
use serde::{Deserialize, Serialize};

use crate::engine::{draw_exponential, Engine, EventHandler, EventKind, EventTrace, RngStream, Scheduler, TraceMode};
use crate::error::{Error, Result};
use crate::policy::{
    activate_server, audit_documents, build_segments, detect_failed_servers, probe_server, replace_server,
    ProbeOutcome, Replacement,
};
use crate::risk::{copy_corruption_hazard, effective_server_hazard, hazard_from_half_life, ShockModel, ShockScope};
use crate::scenario::Scenario;
use crate::state::{loss_metrics, CollectionState, CopyState, CorruptionOutcome, DocId, ServerId, ServerStatus, SizeDistribution};
use crate::units::Hours;

const STREAM_SIZES: u64 = 0;
const STREAM_CORRUPTION: u64 = 1;
const STREAM_GLITCH: u64 = 2;
const STREAM_SERVER: u64 = 3;
const STREAM_SHOCK: u64 = 4;
const STREAM_AUDIT: u64 = 5;
const STREAM_PROBE: u64 = 6;

/// How many events of each kind were dispatched and acted upon.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EventCounts {
    pub copy_corruptions: u64,
    pub glitches: u64,
    pub server_failures: u64,
    pub rate_shocks: u64,
    pub span_shocks: u64,
    pub document_audits: u64,
    pub probes: u64,
    pub activations: u64,
    pub repairs: u64,
}

/// Metrics of one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub seed: u64,
    /// Lost documents, or lost fragments when fragility exceeds 1.
    pub lost_count: u64,
    pub unit_count: u64,
    pub lost_fraction: f64,
    pub first_loss_time: Option<Hours>,
    pub total_collection_loss: bool,
    pub cost_storage: f64,
    pub cost_ingress: f64,
    pub cost_egress: f64,
    pub events: EventCounts,
}

impl RunResult {
    pub fn total_cost(&self) -> f64 {
        self.cost_storage + self.cost_ingress + self.cost_egress
    }
}

/// Sizes of the simulated units. A collection with fragility `F` is
/// simulated as `N*F` independent fragments of `1/F` the size.
pub fn unit_sizes(scenario: &Scenario, rng: &mut RngStream) -> Result<Vec<u64>> {
    let d = &scenario.documents;
    let units = d.doc_count as f64 * d.fragility;
    if units.fract() != 0.0 {
        return Err(Error::validation(
            "documents.fragility",
            format!("count x fragility must be a whole number, got {units}"),
        ));
    }
    if units > u32::MAX as f64 {
        return Err(Error::validation("documents.count", "too many fragments"));
    }
    let units = units as usize;
    let f = d.fragility;
    let scale = |bytes: f64| ((bytes / f).round() as u64).max(1);
    match d.size {
        SizeDistribution::Constant(b) => Ok(vec![scale(b as f64); units]),
        SizeDistribution::LogNormal { median, sigma } => {
            let dist = LogNormal::new((median as f64).ln(), sigma)
                .map_err(|e| Error::validation("documents.size", e.to_string()))?;
            Ok((0..units).map(|_| scale(dist.sample(rng))).collect())
        }
    }
}

struct World<'a> {
    sc: &'a Scenario,
    state: CollectionState,
    counts: EventCounts,
    block_hazard: f64,
    // glitch and shock activity
    glitch_active: Vec<Vec<u32>>,
    shock_all_active: Vec<u32>,
    shock_server_active: Vec<Vec<u32>>,
    shock_episodes: Vec<u32>,
    shock_hits: Vec<Vec<(u32, Vec<ServerId>)>>,
    // audit
    segments: Vec<Vec<DocId>>,
    rng_corruption: RngStream,
    rng_glitch: RngStream,
    rng_server: RngStream,
    rng_shock: RngStream,
    rng_audit: RngStream,
    rng_probe: RngStream,
}

impl<'a> World<'a> {
    fn new(sc: &'a Scenario, sched: &Scheduler) -> Result<Self> {
        let sizes = unit_sizes(sc, &mut sched.rng(STREAM_SIZES))?;
        Ok(World {
            sc,
            state: CollectionState::new(sizes, sc.target_copies, sc.tariff.clone()),
            counts: EventCounts::default(),
            block_hazard: hazard_from_half_life(sc.sector.block_half_life)?,
            glitch_active: Vec::new(),
            shock_all_active: vec![0; sc.shocks.len()],
            shock_server_active: Vec::new(),
            shock_episodes: vec![0; sc.shocks.len()],
            shock_hits: vec![Vec::new(); sc.shocks.len()],
            segments: Vec::new(),
            rng_corruption: sched.rng(STREAM_CORRUPTION),
            rng_glitch: sched.rng(STREAM_GLITCH),
            rng_server: sched.rng(STREAM_SERVER),
            rng_shock: sched.rng(STREAM_SHOCK),
            rng_audit: sched.rng(STREAM_AUDIT),
            rng_probe: sched.rng(STREAM_PROBE),
        })
    }

    fn init(&mut self, sched: &mut Scheduler) -> Result<()> {
        for _ in 0..self.sc.target_copies {
            let id = self.state.add_initial_server(0.0);
            self.server_came_up(sched, id)?;
        }
        for (i, shock) in self.sc.shocks.iter().enumerate() {
            let t = shock.arrival().first(0.0, &mut self.rng_shock)?;
            let ev = match shock {
                ShockModel::Rate { .. } => EventKind::ShockRateStart { shock: i as u16 },
                ShockModel::Span { .. } => EventKind::ShockSpan { shock: i as u16 },
            };
            sched.schedule(t, ev)?;
        }
        let docs = &self.sc.audit.documents;
        if docs.enabled() {
            sched.schedule(docs.segment_interval(), EventKind::DocumentAudit { cycle: 0, segment: 0 })?;
        }
        if let Some(p) = self.sc.audit.probe {
            sched.schedule(p.interval, EventKind::ServerProbe)?;
        }
        Ok(())
    }

    /// Starts the hazard processes of a server that just came online.
    fn server_came_up(&mut self, sched: &mut Scheduler, id: ServerId) -> Result<()> {
        let i = id.index();
        let layers = self.sc.glitches.len();
        if self.glitch_active.len() <= i {
            self.glitch_active.resize(i + 1, Vec::new());
            self.shock_server_active.resize(i + 1, Vec::new());
        }
        self.glitch_active[i] = vec![0; layers];
        self.shock_server_active[i] = vec![0; self.sc.shocks.len()];
        self.state.servers[i].glitch_multiplier = 1.0;
        for (g, model) in self.sc.glitches.iter().enumerate() {
            let t = model.arrival.first(sched.now(), &mut self.rng_glitch)?;
            sched.schedule(t, EventKind::GlitchStart { server: id, glitch: g as u16 })?;
        }
        for d in 0..self.state.doc_count() {
            if self.state.servers[i].copies[d] == CopyState::Valid {
                self.schedule_corruption(sched, id, DocId(d as u32))?;
            }
        }
        self.schedule_failure(sched, id)
    }

    fn schedule_corruption(&mut self, sched: &mut Scheduler, server: ServerId, doc: DocId) -> Result<()> {
        let s = &mut self.state.servers[server.index()];
        let epoch = &mut s.copy_epochs[doc.index()];
        *epoch = epoch.wrapping_add(1);
        let epoch = *epoch;
        if self.block_hazard == 0.0 {
            return Ok(());
        }
        let hazard = copy_corruption_hazard(self.state.sizes[doc.index()], &self.sc.sector, s.glitch_multiplier)?;
        let t = sched.now() + draw_exponential(&mut self.rng_corruption, hazard)?;
        sched.schedule(t, EventKind::CopyCorruption { server, doc, epoch })
    }

    fn shock_multiplier(&self, server: ServerId) -> f64 {
        let own = &self.shock_server_active[server.index()];
        self.sc
            .shocks
            .iter()
            .enumerate()
            .map(|(k, shock)| match *shock {
                ShockModel::Rate { multiplier, .. } => {
                    multiplier.powi((self.shock_all_active[k] + own[k]) as i32)
                }
                ShockModel::Span { .. } => 1.0,
            })
            .product()
    }

    fn schedule_failure(&mut self, sched: &mut Scheduler, server: ServerId) -> Result<()> {
        let mult = self.shock_multiplier(server);
        let s = &mut self.state.servers[server.index()];
        s.failure_epoch = s.failure_epoch.wrapping_add(1);
        let epoch = s.failure_epoch;
        let hazard = effective_server_hazard(&self.sc.server, mult)?;
        let t = sched.now() + draw_exponential(&mut self.rng_server, hazard)?;
        if t.is_finite() {
            sched.schedule(t, EventKind::ServerFailure { server, epoch })?;
        }
        Ok(())
    }

    fn recompute_glitch_multiplier(&mut self, sched: &mut Scheduler, server: ServerId) -> Result<()> {
        let i = server.index();
        let m: f64 = self
            .sc
            .glitches
            .iter()
            .zip(&self.glitch_active[i])
            .map(|(g, &n)| g.multiplier.powi(n as i32))
            .product();
        if m == self.state.servers[i].glitch_multiplier {
            return Ok(());
        }
        self.state.servers[i].glitch_multiplier = m;
        for d in 0..self.state.doc_count() {
            if self.state.servers[i].copies[d] == CopyState::Valid {
                self.schedule_corruption(sched, server, DocId(d as u32))?;
            }
        }
        Ok(())
    }

    fn kill(&mut self, sched: &mut Scheduler, server: ServerId) -> Result<()> {
        if !self.state.server(server)?.alive() {
            return Ok(());
        }
        self.counts.server_failures += 1;
        self.state.kill_server(server, sched.now())?;
        if self.state.live_count() == 0 {
            // nothing is left to lose or to copy from
            sched.halt();
        }
        Ok(())
    }

    fn handle_replacement(&mut self, sched: &mut Scheduler, dead: ServerId) -> Result<()> {
        match replace_server(&mut self.state, dead, sched.now(), &self.sc.repair)? {
            Replacement::Scheduled { server, ready_at } => {
                if ready_at <= sched.now() {
                    self.activate(sched, server)
                } else {
                    sched.schedule(ready_at, EventKind::ServerActivated { server })
                }
            }
            Replacement::Impossible | Replacement::NotNeeded => Ok(()),
        }
    }

    fn activate(&mut self, sched: &mut Scheduler, server: ServerId) -> Result<()> {
        if self.state.server(server)?.status != ServerStatus::Provisioning {
            return Ok(());
        }
        activate_server(&mut self.state, server, sched.now())?;
        self.counts.activations += 1;
        self.server_came_up(sched, server)
    }

    fn detect_and_replace(&mut self, sched: &mut Scheduler) -> Result<()> {
        for dead in detect_failed_servers(&mut self.state)? {
            self.handle_replacement(sched, dead)?;
        }
        Ok(())
    }

    fn document_audit(&mut self, sched: &mut Scheduler, cycle: u32, segment: u32) -> Result<()> {
        let policy = self.sc.audit.documents;
        if segment == 0 {
            self.segments = build_segments(
                self.state.doc_count(),
                policy.segments,
                policy.strategy,
                &mut self.rng_audit,
            )?;
        }
        let docs = std::mem::take(&mut self.segments[segment as usize]);
        self.counts.document_audits += 1;
        let report = audit_documents(&mut self.state, &docs, sched.now(), policy.fixity)?;
        self.counts.repairs += report.repairs.len() as u64;
        for &(server, doc) in &report.repairs {
            self.schedule_corruption(sched, server, doc)?;
        }
        if !docs.is_empty() {
            self.detect_and_replace(sched)?;
        }
        let (next_cycle, next_segment) = if segment + 1 == policy.segments {
            (cycle + 1, 0)
        } else {
            (cycle, segment + 1)
        };
        let index = next_cycle as f64 * policy.segments as f64 + next_segment as f64 + 1.0;
        sched.schedule(
            index * policy.segment_interval(),
            EventKind::DocumentAudit {
                cycle: next_cycle,
                segment: next_segment,
            },
        )
    }

    fn probe(&mut self, sched: &mut Scheduler) -> Result<()> {
        let Some(policy) = self.sc.audit.probe else {
            return Err(Error::logic("probe without a probe policy"));
        };
        let targets: Vec<ServerId> = self
            .state
            .servers
            .iter()
            .filter(|s| matches!(s.status, ServerStatus::Alive | ServerStatus::Failed))
            .map(|s| s.id)
            .collect();
        let mut dead = Vec::new();
        for id in targets {
            self.counts.probes += 1;
            let outcome = probe_server(&mut self.state, id, policy.probe_count, sched.now(), &mut self.rng_probe)?;
            if outcome == ProbeOutcome::Dead {
                dead.push(id);
            }
        }
        for id in dead {
            self.handle_replacement(sched, id)?;
        }
        sched.schedule(sched.now() + policy.interval, EventKind::ServerProbe)
    }

    fn rate_shock_start(&mut self, sched: &mut Scheduler, k: usize) -> Result<()> {
        let ShockModel::Rate {
            arrival,
            duration,
            scope,
            ..
        } = self.sc.shocks[k]
        else {
            return Err(Error::logic("rate shock event for a span shock"));
        };
        self.counts.rate_shocks += 1;
        let episode = self.shock_episodes[k];
        self.shock_episodes[k] += 1;
        let live = self.state.live_servers();
        let hit = match scope {
            ShockScope::All => {
                self.shock_all_active[k] += 1;
                live
            }
            ShockScope::Subset(n) => {
                let hit = crate::risk::apply_span_shock(&live, n, &mut self.rng_shock)?;
                for s in &hit {
                    self.shock_server_active[s.index()][k] += 1;
                }
                self.shock_hits[k].push((episode, hit.clone()));
                hit
            }
        };
        for s in hit {
            self.schedule_failure(sched, s)?;
        }
        if duration.is_finite() {
            sched.schedule(
                sched.now() + duration,
                EventKind::ShockRateEnd {
                    shock: k as u16,
                    episode,
                },
            )?;
        }
        if let Some(t) = arrival.next(sched.now(), &mut self.rng_shock)? {
            sched.schedule(t, EventKind::ShockRateStart { shock: k as u16 })?;
        }
        Ok(())
    }

    fn rate_shock_end(&mut self, sched: &mut Scheduler, k: usize, episode: u32) -> Result<()> {
        let ShockModel::Rate { scope, .. } = self.sc.shocks[k] else {
            return Err(Error::logic("rate shock event for a span shock"));
        };
        let affected = match scope {
            ShockScope::All => {
                self.shock_all_active[k] -= 1;
                self.state.live_servers()
            }
            ShockScope::Subset(_) => {
                let pos = self.shock_hits[k]
                    .iter()
                    .position(|(e, _)| *e == episode)
                    .ok_or_else(|| Error::logic(format!("unknown episode {episode} of shock {k}")))?;
                let (_, hit) = self.shock_hits[k].swap_remove(pos);
                for s in &hit {
                    self.shock_server_active[s.index()][k] -= 1;
                }
                hit.into_iter().filter(|s| self.state.servers[s.index()].alive()).collect()
            }
        };
        for s in affected {
            self.schedule_failure(sched, s)?;
        }
        Ok(())
    }

    fn span_shock(&mut self, sched: &mut Scheduler, k: usize) -> Result<()> {
        let ShockModel::Span { arrival, span } = self.sc.shocks[k] else {
            return Err(Error::logic("span shock event for a rate shock"));
        };
        self.counts.span_shocks += 1;
        let live = self.state.live_servers();
        for s in crate::risk::apply_span_shock(&live, span, &mut self.rng_shock)? {
            self.kill(sched, s)?;
        }
        if let Some(t) = arrival.next(sched.now(), &mut self.rng_shock)? {
            sched.schedule(t, EventKind::ShockSpan { shock: k as u16 })?;
        }
        Ok(())
    }
}

impl EventHandler for World<'_> {
    fn handle(&mut self, sched: &mut Scheduler, event: EventKind) -> Result<()> {
        let now = sched.now();
        match event {
            EventKind::CopyCorruption { server, doc, epoch } => {
                let s = self.state.server(server)?;
                if !s.alive() || s.copy_epochs[doc.index()] != epoch {
                    return Ok(());
                }
                if self.state.corrupt_copy(server, doc, now)? != CorruptionOutcome::Ignored {
                    self.counts.copy_corruptions += 1;
                }
            }
            EventKind::GlitchStart { server, glitch } => {
                if !self.state.server(server)?.alive() {
                    return Ok(());
                }
                let model = self.sc.glitches[glitch as usize];
                self.counts.glitches += 1;
                self.glitch_active[server.index()][glitch as usize] += 1;
                self.recompute_glitch_multiplier(sched, server)?;
                if model.duration.is_finite() {
                    sched.schedule(now + model.duration, EventKind::GlitchEnd { server, glitch })?;
                }
                if let Some(t) = model.arrival.next(now, &mut self.rng_glitch)? {
                    sched.schedule(t, EventKind::GlitchStart { server, glitch })?;
                }
            }
            EventKind::GlitchEnd { server, glitch } => {
                if !self.state.server(server)?.alive() {
                    return Ok(());
                }
                let active = &mut self.glitch_active[server.index()][glitch as usize];
                *active = active
                    .checked_sub(1)
                    .ok_or_else(|| Error::logic("glitch ended that never started"))?;
                self.recompute_glitch_multiplier(sched, server)?;
            }
            EventKind::ServerFailure { server, epoch } => {
                if self.state.server(server)?.failure_epoch != epoch {
                    return Ok(());
                }
                self.kill(sched, server)?;
            }
            EventKind::ShockRateStart { shock } => self.rate_shock_start(sched, shock as usize)?,
            EventKind::ShockRateEnd { shock, episode } => self.rate_shock_end(sched, shock as usize, episode)?,
            EventKind::ShockSpan { shock } => self.span_shock(sched, shock as usize)?,
            EventKind::DocumentAudit { cycle, segment } => self.document_audit(sched, cycle, segment)?,
            EventKind::ServerProbe => self.probe(sched)?,
            EventKind::ServerActivated { server } => self.activate(sched, server)?,
            EventKind::Horizon => self.state.settle_all(now),
        }
        Ok(())
    }
}

/// Simulates one replication of `scenario` with `seed`.
pub fn run_once(scenario: &Scenario, seed: u64) -> Result<RunResult> {
    run_traced(scenario, seed, TraceMode::Limit(0)).map(|(r, _)| r)
}

/// Like [`run_once`] but also returns the dispatched events.
pub fn run_traced(scenario: &Scenario, seed: u64, mode: TraceMode) -> Result<(RunResult, EventTrace)> {
    scenario.validate()?;
    let mut engine = Engine::new(seed, scenario.horizon)?.with_trace_mode(mode);
    let mut world = World::new(scenario, engine.scheduler())?;
    world.init(engine.scheduler())?;
    let trace = engine.run(&mut world)?;
    let loss = loss_metrics(&world.state, scenario.horizon)?;
    let ledger = &world.state.ledger;
    let result = RunResult {
        seed,
        lost_count: loss.lost_count,
        unit_count: world.state.doc_count() as u64,
        lost_fraction: loss.lost_fraction,
        first_loss_time: loss.first_loss_time,
        total_collection_loss: loss.total_collection_loss,
        cost_storage: ledger.storage_cost,
        cost_ingress: ledger.ingress_cost,
        cost_egress: ledger.egress_cost,
        events: world.counts,
    };
    Ok((result, trace))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::policy::{DocAuditPolicy, Fixity, ProbePolicy, SamplingStrategy};
    use crate::risk::{Arrival, GlitchModel, ServerModel};
    use crate::units::{HOURS_PER_METRIC_YEAR, HOURS_PER_MONTH};

    fn world(copies: usize, half_life: Hours) -> Scenario {
        let mut s = Scenario::basic(1000, copies, half_life, 10.0 * HOURS_PER_METRIC_YEAR);
        s.documents.size = SizeDistribution::Constant(1 << 20);
        s
    }

    #[test]
    fn no_threat_world_loses_nothing_and_pays_storage() {
        let s = world(3, f64::INFINITY);
        let r = run_once(&s, 1).unwrap();
        assert_eq!(r.lost_fraction, 0.0);
        assert!(r.cost_storage > 0.0);
        assert_eq!(r.events, EventCounts::default());
    }

    #[test]
    fn same_seed_same_result() {
        let mut s = world(2, 1e6);
        s.server = ServerModel {
            lifetime_half_life: 5.0 * HOURS_PER_METRIC_YEAR,
        };
        s.audit.probe = Some(ProbePolicy {
            interval: HOURS_PER_MONTH,
            probe_count: 3,
        });
        assert_eq!(run_once(&s, 7).unwrap(), run_once(&s, 7).unwrap());
        assert_ne!(run_once(&s, 7).unwrap(), run_once(&s, 8).unwrap());
    }

    #[test]
    fn trace_is_time_ordered_and_ends_at_horizon() {
        let mut s = world(2, 1e6);
        s.audit.documents = DocAuditPolicy {
            cycle: HOURS_PER_METRIC_YEAR,
            segments: 4,
            strategy: SamplingStrategy::Systematic,
            fixity: Fixity::Full,
        };
        let (_, trace) = run_traced(&s, 3, TraceMode::Full).unwrap();
        assert!(trace.entries.windows(2).all(|w| w[0].time <= w[1].time));
        let last = trace.entries.last().unwrap();
        assert_eq!(last.event, EventKind::Horizon);
        assert_eq!(last.time, s.horizon);
        let audits = trace
            .entries
            .iter()
            .filter(|e| matches!(e.event, EventKind::DocumentAudit { .. }))
            .count();
        assert_eq!(audits, 40);
    }

    #[test]
    fn single_copy_unaudited_loses_something() {
        let s = world(1, 1e6);
        let r = run_once(&s, 5).unwrap();
        assert!(r.lost_count > 0);
        assert_eq!(r.lost_fraction, r.lost_count as f64 / 1000.0);
        assert_eq!(r.events.copy_corruptions, r.lost_count);
    }

    #[test]
    fn auditing_repairs_and_costs_egress() {
        let mut s = world(3, 1e6);
        s.audit.documents = DocAuditPolicy {
            cycle: HOURS_PER_METRIC_YEAR,
            segments: 1,
            strategy: SamplingStrategy::Systematic,
            fixity: Fixity::Full,
        };
        let r = run_once(&s, 5).unwrap();
        assert!(r.events.repairs > 0);
        assert!(r.cost_egress > 0.0);
    }

    #[test]
    fn every_server_dying_is_total_loss() {
        let mut s = world(2, f64::INFINITY);
        s.server = ServerModel { lifetime_half_life: 1000.0 };
        let r = run_once(&s, 9).unwrap();
        assert!(r.total_collection_loss);
        assert_eq!(r.lost_fraction, 1.0);
        assert!(r.first_loss_time.unwrap() <= s.horizon);
    }

    #[test]
    fn probes_replace_dead_servers() {
        let mut s = world(3, f64::INFINITY);
        s.server = ServerModel {
            lifetime_half_life: 2.0 * HOURS_PER_METRIC_YEAR,
        };
        s.audit.probe = Some(ProbePolicy {
            interval: HOURS_PER_MONTH,
            probe_count: 3,
        });
        let r = run_once(&s, 11).unwrap();
        assert!(r.events.activations > 0);
        assert!(r.events.server_failures >= r.events.activations);
    }

    #[test]
    fn permanent_glitch_speeds_up_corruption() {
        let mut s = world(1, 1e7);
        let base = run_once(&s, 2).unwrap();
        s.glitches.push(GlitchModel {
            arrival: Arrival::Once { at: 0.0 },
            duration: f64::INFINITY,
            multiplier: 10.0,
        });
        let glitched = run_once(&s, 2).unwrap();
        assert!(glitched.lost_count > 3 * base.lost_count.max(1));
    }

    #[test]
    fn fragility_splits_documents() {
        let mut s = world(1, 1e6);
        s.documents.fragility = 2.0;
        let r = run_once(&s, 1).unwrap();
        assert_eq!(r.unit_count, 2000);
        s.documents.doc_count = 4;
        s.documents.fragility = 1.5;
        assert_eq!(run_once(&s, 1).unwrap().unit_count, 6);
        s.documents.doc_count = 3;
        assert!(run_once(&s, 1).is_err());
    }
}
