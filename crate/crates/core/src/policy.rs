//! Preservation policies: document auditing, server probing, repair and
//! server replacement.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::cost::Direction;
use crate::engine::RngStream;
use crate::error::{Error, Result};
use crate::state::{CollectionState, CopyState, DocId, ServerId, ServerStatus};
use crate::units::Hours;

/// Bytes moved per copy when auditing with digests instead of full copies.
pub const DIGEST_BYTES: u64 = 64;

/// Documents retrieved by a liveness probe unless configured otherwise.
pub const DEFAULT_PROBE_COUNT: u32 = 3;

/// How documents are assigned to the segments of an audit cycle.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SamplingStrategy {
    /// A fresh permutation of all documents split into segments; every
    /// document is audited exactly once per cycle.
    Systematic,
    /// Independent uniform draws with replacement; some documents are missed.
    Random,
    None,
}

/// What an audit retrieves from each copy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Fixity {
    /// The whole copy is transferred and checked.
    Full,
    /// The server returns a digest of [`DIGEST_BYTES`].
    Digest,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DocAuditPolicy {
    pub cycle: Hours,
    pub segments: u32,
    pub strategy: SamplingStrategy,
    pub fixity: Fixity,
}

impl DocAuditPolicy {
    pub const NONE: DocAuditPolicy = DocAuditPolicy {
        cycle: f64::INFINITY,
        segments: 1,
        strategy: SamplingStrategy::None,
        fixity: Fixity::Full,
    };

    pub fn enabled(&self) -> bool {
        self.strategy != SamplingStrategy::None
    }

    /// Time between consecutive segment audits.
    pub fn segment_interval(&self) -> Hours {
        self.cycle / self.segments as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProbePolicy {
    pub interval: Hours,
    pub probe_count: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AuditPolicy {
    pub documents: DocAuditPolicy,
    pub probe: Option<ProbePolicy>,
}

impl Default for AuditPolicy {
    fn default() -> Self {
        AuditPolicy {
            documents: DocAuditPolicy::NONE,
            probe: None,
        }
    }
}

impl AuditPolicy {
    /// Shortest interval at which any server's liveness is checked.
    pub fn detection_interval(&self) -> Hours {
        let docs = if self.documents.enabled() {
            self.documents.segment_interval()
        } else {
            f64::INFINITY
        };
        let probe = self.probe.map_or(f64::INFINITY, |p| p.interval);
        docs.min(probe)
    }

    pub fn validate(&self, path: &str) -> Result<()> {
        let d = &self.documents;
        if d.enabled() {
            if !(d.cycle > 0.0) || !d.cycle.is_finite() {
                return Err(Error::validation(format!("{path}.documents.cycle"), "must be positive and finite"));
            }
            if d.segments == 0 {
                return Err(Error::validation(format!("{path}.documents.segments"), "must be >= 1"));
            }
        }
        if let Some(p) = &self.probe {
            if !(p.interval > 0.0) || !p.interval.is_finite() {
                return Err(Error::validation(format!("{path}.probe.interval"), "must be positive and finite"));
            }
            if p.probe_count == 0 {
                return Err(Error::validation(format!("{path}.probe.count"), "must be >= 1"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RepairPolicy {
    /// Time to provision and fill a replacement server.
    pub repopulation_delay: Hours,
}

impl Default for RepairPolicy {
    fn default() -> Self {
        RepairPolicy {
            repopulation_delay: 0.0,
        }
    }
}

impl RepairPolicy {
    pub fn validate(&self, path: &str) -> Result<()> {
        if !(self.repopulation_delay >= 0.0) || !self.repopulation_delay.is_finite() {
            return Err(Error::validation(format!("{path}.repopulation_delay"), "must be finite and >= 0"));
        }
        Ok(())
    }
}

/// Splits one audit cycle into `segments` document lists.
pub fn build_segments(
    doc_count: usize,
    segments: u32,
    strategy: SamplingStrategy,
    rng: &mut RngStream,
) -> Result<Vec<Vec<DocId>>> {
    if segments == 0 {
        return Err(Error::config("segments must be >= 1"));
    }
    if doc_count == 0 {
        return Err(Error::config("document count must be >= 1"));
    }
    let k = segments as usize;
    let bounds = |i: usize| i * doc_count / k;
    match strategy {
        SamplingStrategy::None => Ok(vec![Vec::new(); k]),
        SamplingStrategy::Systematic => {
            let mut perm: Vec<DocId> = (0..doc_count as u32).map(DocId).collect();
            perm.shuffle(rng);
            Ok((0..k).map(|i| perm[bounds(i)..bounds(i + 1)].to_vec()).collect())
        }
        SamplingStrategy::Random => Ok((0..k)
            .map(|i| {
                (bounds(i)..bounds(i + 1))
                    .map(|_| DocId(rng.below(doc_count) as u32))
                    .collect()
            })
            .collect()),
    }
}

/// Outcome of auditing one segment.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct AuditReport {
    pub docs_audited: u64,
    pub copies_checked: u64,
    /// Copies restored, as `(target server, document)`.
    pub repairs: Vec<(ServerId, DocId)>,
    /// Audited documents found without any valid copy.
    pub losses: Vec<DocId>,
    pub egress_bytes: u64,
    pub ingress_bytes: u64,
}

/// Checks every copy of every document in `segment` on the alive servers,
/// repairing corrupt copies from the lowest-id valid copy.
///
/// Failed servers are skipped; detecting them is the caller's job. Losses
/// keep the time recorded when the last copy was destroyed.
pub fn audit_documents(
    state: &mut CollectionState,
    segment: &[DocId],
    now: Hours,
    fixity: Fixity,
) -> Result<AuditReport> {
    let live = state.live_servers();
    let mut egress = vec![0u64; state.servers.len()];
    let mut ingress = vec![0u64; state.servers.len()];
    let mut report = AuditReport::default();
    let n = state.doc_count();
    for &doc in segment {
        let d = doc.index();
        if d >= n {
            return Err(Error::logic(format!("audit of unknown document {}", doc.0)));
        }
        let size = state.sizes[d];
        let check_bytes = match fixity {
            Fixity::Full => size,
            Fixity::Digest => DIGEST_BYTES.min(size),
        };
        report.docs_audited += 1;
        let mut source = None;
        let mut corrupt = Vec::new();
        for &s in &live {
            match state.servers[s.index()].copies[d] {
                CopyState::Absent => continue,
                CopyState::Valid => {
                    source.get_or_insert(s);
                }
                CopyState::Corrupt => corrupt.push(s),
            }
            egress[s.index()] += check_bytes;
            report.copies_checked += 1;
        }
        let Some(source) = source else {
            report.losses.push(doc);
            continue;
        };
        for target in corrupt {
            egress[source.index()] += size;
            ingress[target.index()] += size;
            state.restore_copy(target, doc, now)?;
            report.repairs.push((target, doc));
        }
    }
    for (i, (&e, &g)) in egress.iter().zip(&ingress).enumerate() {
        state.charge_transfer(ServerId(i as u32), now, e, Direction::Egress);
        state.charge_transfer(ServerId(i as u32), now, g, Direction::Ingress);
        report.egress_bytes += e;
        report.ingress_bytes += g;
    }
    Ok(report)
}

/// Marks every silently failed server as detected and returns them.
pub fn detect_failed_servers(state: &mut CollectionState) -> Result<Vec<ServerId>> {
    let failed: Vec<ServerId> = state
        .servers
        .iter()
        .filter(|s| s.status == ServerStatus::Failed)
        .map(|s| s.id)
        .collect();
    for &s in &failed {
        state.mark_detected(s)?;
    }
    Ok(failed)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProbeOutcome {
    Alive,
    Dead,
}

/// Retrieves `probe_count` randomly chosen documents from `server`.
/// Detection is certain: a failed server is reported (and marked) dead.
pub fn probe_server(
    state: &mut CollectionState,
    server: ServerId,
    probe_count: u32,
    now: Hours,
    rng: &mut RngStream,
) -> Result<ProbeOutcome> {
    if probe_count == 0 {
        return Err(Error::config("probe count must be >= 1"));
    }
    match state.server(server)?.status {
        ServerStatus::Alive => {
            let n = state.doc_count();
            let bytes: u64 = (0..probe_count).map(|_| state.sizes[rng.below(n)]).sum();
            state.charge_transfer(server, now, bytes, Direction::Egress);
            Ok(ProbeOutcome::Alive)
        }
        ServerStatus::Failed | ServerStatus::Detected => {
            state.mark_detected(server)?;
            Ok(ProbeOutcome::Dead)
        }
        ServerStatus::Provisioning => Err(Error::logic(format!(
            "probe of server {} which is still provisioning",
            server.0
        ))),
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Replacement {
    /// A fresh server will be ready at `ready_at`.
    Scheduled { server: ServerId, ready_at: Hours },
    /// Nothing is left to copy from: the collection is gone.
    Impossible,
    /// The target replica count is already met.
    NotNeeded,
}

/// Orders a replacement for a detected dead server.
pub fn replace_server(
    state: &mut CollectionState,
    dead: ServerId,
    now: Hours,
    repair: &RepairPolicy,
) -> Result<Replacement> {
    if state.server(dead)?.status != ServerStatus::Detected {
        return Err(Error::logic(format!("server {} replaced before its failure was detected", dead.0)));
    }
    if state.live_count() == 0 {
        return Ok(Replacement::Impossible);
    }
    if state.committed_count() >= state.target_copies {
        return Ok(Replacement::NotNeeded);
    }
    let server = state.add_provisioning_server(now);
    Ok(Replacement::Scheduled {
        server,
        ready_at: now + repair.repopulation_delay,
    })
}

/// Result of bringing a replacement online.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Activation {
    /// Documents copied onto the new server.
    pub copied: Vec<DocId>,
    /// Documents with no valid copy anywhere; the new server lacks them.
    pub missing: Vec<DocId>,
    pub bytes: u64,
}

/// Brings a provisioned server online and copies in every document that
/// still has a valid copy, each from the lowest-id valid source. Copies
/// are verified against their source on arrival.
pub fn activate_server(state: &mut CollectionState, server: ServerId, now: Hours) -> Result<Activation> {
    let mut act = Activation::default();
    if !state.bring_online(server, now)? {
        return Ok(act);
    }
    let mut egress = vec![0u64; state.servers.len()];
    for d in 0..state.doc_count() {
        let doc = DocId(d as u32);
        if state.lost_at[d].is_some() {
            act.missing.push(doc);
            continue;
        }
        let source = state
            .repair_source(doc)
            .ok_or_else(|| Error::logic(format!("document {d} has no valid copy but is not lost")))?;
        let size = state.sizes[d];
        egress[source.index()] += size;
        act.bytes += size;
        state.restore_copy(server, doc, now)?;
        act.copied.push(doc);
    }
    for (i, &e) in egress.iter().enumerate() {
        state.charge_transfer(ServerId(i as u32), now, e, Direction::Egress);
    }
    state.charge_transfer(server, now, act.bytes, Direction::Ingress);
    if state.live_count() > state.target_copies {
        return Err(Error::logic(format!(
            "{} servers alive, target is {}",
            state.live_count(),
            state.target_copies
        )));
    }
    Ok(act)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cost::{Tariff, TierSchedule};
    use crate::state::loss_metrics;

    fn unit_tariff() -> Tariff {
        // one currency unit per byte-GiB so charges mirror byte counts
        Tariff {
            storage: TierSchedule::flat(0.0).unwrap(),
            ingress: TierSchedule::flat(1.0).unwrap(),
            egress: TierSchedule::flat(1.0).unwrap(),
        }
    }

    fn state(docs: usize, servers: usize, size: u64) -> CollectionState {
        let mut st = CollectionState::new(vec![size; docs], servers, unit_tariff());
        for _ in 0..servers {
            st.add_initial_server(0.0);
        }
        st
    }

    #[test]
    fn systematic_partitions_cover_everything() {
        let mut rng = RngStream::new(1, 0);
        let segs = build_segments(10, 2, SamplingStrategy::Systematic, &mut rng).unwrap();
        assert_eq!(segs.len(), 2);
        assert_eq!(segs[0].len(), 5);
        assert_eq!(segs[1].len(), 5);
        let mut all: Vec<_> = segs.concat();
        all.sort();
        assert_eq!(all, (0..10).map(DocId).collect::<Vec<_>>());

        let one = build_segments(10_000, 1, SamplingStrategy::Systematic, &mut rng).unwrap();
        assert_eq!(one.len(), 1);
        assert_eq!(one[0].len(), 10_000);
    }

    #[test]
    fn uneven_partitions_differ_by_at_most_one() {
        let mut rng = RngStream::new(1, 0);
        let segs = build_segments(10, 3, SamplingStrategy::Systematic, &mut rng).unwrap();
        let lens: Vec<_> = segs.iter().map(Vec::len).collect();
        assert_eq!(lens.iter().sum::<usize>(), 10);
        assert!(lens.iter().max().unwrap() - lens.iter().min().unwrap() <= 1);
        // more segments than documents leaves some empty
        let segs = build_segments(2, 5, SamplingStrategy::Systematic, &mut rng).unwrap();
        assert_eq!(segs.iter().map(Vec::len).sum::<usize>(), 2);
    }

    #[test]
    fn random_sampling_misses_about_one_over_e() {
        // (1 - 1/1000)^1000 = 0.3677
        let mut rng = RngStream::new(5, 0);
        let mut missed = 0.0;
        let cycles = 200;
        for _ in 0..cycles {
            let segs = build_segments(1000, 1, SamplingStrategy::Random, &mut rng).unwrap();
            let mut seen = vec![false; 1000];
            for d in &segs[0] {
                seen[d.index()] = true;
            }
            missed += seen.iter().filter(|s| !**s).count() as f64 / 1000.0;
        }
        let mean = missed / cycles as f64;
        assert!((mean - 0.3677).abs() < 0.005, "{mean}");
    }

    #[test]
    fn segments_are_reshuffled() {
        let mut rng = RngStream::new(2, 0);
        let a = build_segments(100, 4, SamplingStrategy::Systematic, &mut rng).unwrap();
        let b = build_segments(100, 4, SamplingStrategy::Systematic, &mut rng).unwrap();
        assert_ne!(a, b);
    }

    #[test]
    fn audit_repairs_single_corrupt_copy() {
        let size = 1 << 30;
        let mut st = state(1, 5, size);
        let before = st.ledger.clone();
        st.corrupt_copy(ServerId(2), DocId(0), 1.0).unwrap();
        let r = audit_documents(&mut st, &[DocId(0)], 2.0, Fixity::Full).unwrap();
        assert_eq!(r.repairs, vec![(ServerId(2), DocId(0))]);
        assert!(r.losses.is_empty());
        assert_eq!(r.egress_bytes, 5 * size + size);
        assert_eq!(r.ingress_bytes, size);
        assert_eq!(st.ledger.egress_bytes - before.egress_bytes, 6 * size);
        assert_eq!(st.ledger.ingress_bytes - before.ingress_bytes, size);
        assert_eq!(st.valid_count[0], 5);
    }

    #[test]
    fn audit_of_healthy_document_only_checks() {
        let mut st = state(2, 3, 100);
        let r = audit_documents(&mut st, &[DocId(1)], 2.0, Fixity::Full).unwrap();
        assert!(r.repairs.is_empty());
        assert_eq!(r.egress_bytes, 300);
        assert_eq!(r.ingress_bytes, 0);
        let r = audit_documents(&mut st, &[DocId(1)], 2.0, Fixity::Digest).unwrap();
        assert_eq!(r.egress_bytes, 3 * 64);
    }

    #[test]
    fn audit_records_loss_at_destruction_time() {
        let mut st = state(1, 2, 100);
        st.corrupt_copy(ServerId(0), DocId(0), 1.0).unwrap();
        st.corrupt_copy(ServerId(1), DocId(0), 4.0).unwrap();
        let r = audit_documents(&mut st, &[DocId(0)], 9.0, Fixity::Full).unwrap();
        assert_eq!(r.losses, vec![DocId(0)]);
        assert!(r.repairs.is_empty());
        assert_eq!(st.lost_at[0], Some(4.0));
    }

    #[test]
    fn repair_source_is_lowest_valid_id() {
        let mut st = state(1, 4, 10);
        st.corrupt_copy(ServerId(0), DocId(0), 1.0).unwrap();
        st.corrupt_copy(ServerId(3), DocId(0), 1.0).unwrap();
        assert_eq!(st.repair_source(DocId(0)), Some(ServerId(1)));
        let r = audit_documents(&mut st, &[DocId(0)], 2.0, Fixity::Full).unwrap();
        assert_eq!(r.repairs, vec![(ServerId(0), DocId(0)), (ServerId(3), DocId(0))]);
    }

    #[test]
    fn failed_server_copies_are_skipped() {
        let mut st = state(1, 3, 10);
        st.kill_server(ServerId(1), 1.0).unwrap();
        let r = audit_documents(&mut st, &[DocId(0)], 2.0, Fixity::Full).unwrap();
        assert_eq!(r.copies_checked, 2);
    }

    #[test]
    fn probes() {
        let mut st = state(10, 2, 7);
        let mut rng = RngStream::new(0, 0);
        let e0 = st.ledger.egress_bytes;
        assert_eq!(probe_server(&mut st, ServerId(0), 3, 1.0, &mut rng).unwrap(), ProbeOutcome::Alive);
        assert_eq!(st.ledger.egress_bytes - e0, 21);
        st.kill_server(ServerId(1), 2.0).unwrap();
        let e1 = st.ledger.egress_bytes;
        assert_eq!(probe_server(&mut st, ServerId(1), 3, 3.0, &mut rng).unwrap(), ProbeOutcome::Dead);
        assert_eq!(st.ledger.egress_bytes, e1);
        assert_eq!(st.server(ServerId(1)).unwrap().status, ServerStatus::Detected);
        assert!(matches!(
            probe_server(&mut st, ServerId(7), 3, 3.0, &mut rng),
            Err(Error::Logic(_))
        ));
    }

    #[test]
    fn replacement_restores_replica_count() {
        let mut st = state(4, 5, 1 << 20);
        st.kill_server(ServerId(3), 1.0).unwrap();
        assert_eq!(detect_failed_servers(&mut st).unwrap(), vec![ServerId(3)]);
        let ingress0 = st.ledger.ingress_bytes;
        let Replacement::Scheduled { server, ready_at } =
            replace_server(&mut st, ServerId(3), 2.0, &RepairPolicy::default()).unwrap()
        else {
            panic!("expected a replacement");
        };
        assert_eq!(ready_at, 2.0);
        let act = activate_server(&mut st, server, ready_at).unwrap();
        assert_eq!(st.live_count(), 5);
        assert_eq!(act.copied.len(), 4);
        assert_eq!(st.ledger.ingress_bytes - ingress0, 4 << 20);
    }

    #[test]
    fn replacement_after_partial_loss() {
        // three documents, two servers; doc 1 dies everywhere before detection
        let mut st = state(3, 2, 10);
        st.corrupt_copy(ServerId(0), DocId(1), 1.0).unwrap();
        st.kill_server(ServerId(1), 2.0).unwrap();
        detect_failed_servers(&mut st).unwrap();
        let Replacement::Scheduled { server, .. } =
            replace_server(&mut st, ServerId(1), 3.0, &RepairPolicy::default()).unwrap()
        else {
            panic!("expected a replacement");
        };
        let act = activate_server(&mut st, server, 3.0).unwrap();
        assert_eq!(act.copied, vec![DocId(0), DocId(2)]);
        assert_eq!(act.missing, vec![DocId(1)]);
        assert_eq!(loss_metrics(&st, 10.0).unwrap().lost_count, 1);
        assert_eq!(st.lost_at[1], Some(2.0));
    }

    #[test]
    fn nothing_left_to_replace_from() {
        let mut st = state(3, 2, 10);
        st.kill_server(ServerId(0), 1.0).unwrap();
        st.kill_server(ServerId(1), 2.0).unwrap();
        detect_failed_servers(&mut st).unwrap();
        assert_eq!(
            replace_server(&mut st, ServerId(0), 3.0, &RepairPolicy::default()).unwrap(),
            Replacement::Impossible
        );
        assert!(loss_metrics(&st, 10.0).unwrap().total_collection_loss);
    }

    #[test]
    fn undetected_server_cannot_be_replaced() {
        let mut st = state(1, 2, 10);
        st.kill_server(ServerId(0), 1.0).unwrap();
        assert!(replace_server(&mut st, ServerId(0), 2.0, &RepairPolicy::default()).is_err());
    }
}
