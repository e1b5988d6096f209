//! Collection and server state of one run.
//!
//! The state tracks every copy of every document on every server, keeps a
//! per-document count of valid copies, and records a permanent loss at the
//! instant the last valid copy disappears. Storage and transfer charges are
//! booked to the run's [`CostLedger`] as the state changes.

use serde::{Deserialize, Serialize};

use crate::cost::{CostLedger, Direction, Tariff};
use crate::error::{Error, Result};
use crate::units::Hours;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ServerId(pub u32);

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct DocId(pub u32);

impl ServerId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl DocId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

/// Distribution of document sizes in bytes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum SizeDistribution {
    Constant(u64),
    LogNormal { median: u64, sigma: f64 },
}

/// The collection being preserved.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DocumentSpec {
    pub doc_count: u64,
    pub size: SizeDistribution,
    /// Damage divisor: one block error destroys `1/F` of a document.
    pub fragility: f64,
}

impl DocumentSpec {
    pub fn validate(&self, path: &str) -> Result<()> {
        if self.doc_count == 0 {
            return Err(Error::validation(format!("{path}.count"), "must be >= 1"));
        }
        if self.doc_count > u32::MAX as u64 {
            return Err(Error::validation(format!("{path}.count"), "too many documents"));
        }
        match self.size {
            SizeDistribution::Constant(0) => {
                return Err(Error::validation(format!("{path}.size"), "must be positive"))
            }
            SizeDistribution::LogNormal { median, sigma } => {
                if median == 0 {
                    return Err(Error::validation(format!("{path}.size.median"), "must be positive"));
                }
                if !(sigma >= 0.0) || !sigma.is_finite() {
                    return Err(Error::validation(format!("{path}.size.sigma"), "must be >= 0"));
                }
            }
            SizeDistribution::Constant(_) => {}
        }
        if !(self.fragility >= 1.0) || !self.fragility.is_finite() {
            return Err(Error::validation(format!("{path}.fragility"), "must be >= 1"));
        }
        Ok(())
    }
}

/// State of one copy of a document on a server.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CopyState {
    Absent,
    Valid,
    Corrupt,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ServerStatus {
    /// Replacement being provisioned; holds nothing yet.
    Provisioning,
    Alive,
    /// Failed silently; nobody has noticed.
    Failed,
    /// Failure discovered by a probe or audit.
    Detected,
}

#[derive(Debug, Clone)]
pub struct ServerState {
    pub id: ServerId,
    pub status: ServerStatus,
    pub copies: Vec<CopyState>,
    /// Generation of each copy's pending corruption event.
    pub copy_epochs: Vec<u32>,
    /// Generation of the pending failure event.
    pub failure_epoch: u32,
    pub glitch_multiplier: f64,
    pub birth_time: Hours,
    pub death_time: Option<Hours>,
    valid_bytes: u64,
    billed_since: Hours,
}

impl ServerState {
    pub fn alive(&self) -> bool {
        self.status == ServerStatus::Alive
    }

    pub fn valid_bytes(&self) -> u64 {
        self.valid_bytes
    }
}

/// Result of marking a copy corrupt.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CorruptionOutcome {
    /// The copy was not valid; nothing changed.
    Ignored,
    Corrupted,
    /// The copy was the last valid one: the document is permanently lost.
    DocumentLost,
}

#[derive(Debug, Clone)]
pub struct CollectionState {
    pub sizes: Vec<u64>,
    pub servers: Vec<ServerState>,
    pub valid_count: Vec<u32>,
    pub lost_at: Vec<Option<Hours>>,
    pub target_copies: usize,
    pub ledger: CostLedger,
    tariff: Tariff,
    lost_count: u64,
    first_loss: Option<Hours>,
    loss_log: Vec<(DocId, Hours)>,
}

impl CollectionState {
    pub fn new(sizes: Vec<u64>, target_copies: usize, tariff: Tariff) -> Self {
        let n = sizes.len();
        CollectionState {
            sizes,
            servers: Vec::new(),
            valid_count: vec![0; n],
            lost_at: vec![None; n],
            target_copies,
            ledger: CostLedger::new(),
            tariff,
            lost_count: 0,
            first_loss: None,
            loss_log: Vec::new(),
        }
    }

    pub fn doc_count(&self) -> usize {
        self.sizes.len()
    }

    pub fn tariff(&self) -> &Tariff {
        &self.tariff
    }

    pub fn lost_count(&self) -> u64 {
        self.lost_count
    }

    pub fn server(&self, id: ServerId) -> Result<&ServerState> {
        self.servers
            .get(id.index())
            .ok_or_else(|| Error::logic(format!("unknown server {}", id.0)))
    }

    fn server_mut(&mut self, id: ServerId) -> Result<&mut ServerState> {
        self.servers
            .get_mut(id.index())
            .ok_or_else(|| Error::logic(format!("unknown server {}", id.0)))
    }

    /// Ids of alive servers, ascending.
    pub fn live_servers(&self) -> Vec<ServerId> {
        self.servers.iter().filter(|s| s.alive()).map(|s| s.id).collect()
    }

    pub fn live_count(&self) -> usize {
        self.servers.iter().filter(|s| s.alive()).count()
    }

    /// Servers alive or being provisioned.
    pub fn committed_count(&self) -> usize {
        self.servers
            .iter()
            .filter(|s| matches!(s.status, ServerStatus::Alive | ServerStatus::Provisioning))
            .count()
    }

    /// Adds a server already holding a valid copy of every document, as at
    /// initial provisioning. The upload is billed as ingress.
    pub fn add_initial_server(&mut self, now: Hours) -> ServerId {
        let id = ServerId(self.servers.len() as u32);
        let n = self.doc_count();
        let bytes: u64 = self.sizes.iter().sum();
        self.servers.push(ServerState {
            id,
            status: ServerStatus::Alive,
            copies: vec![CopyState::Valid; n],
            copy_epochs: vec![0; n],
            failure_epoch: 0,
            glitch_multiplier: 1.0,
            birth_time: now,
            death_time: None,
            valid_bytes: bytes,
            billed_since: now,
        });
        for c in &mut self.valid_count {
            *c += 1;
        }
        let tariff = &self.tariff;
        self.ledger
            .accrue_transfer(tariff, id.index(), now, bytes, Direction::Ingress);
        id
    }

    /// Registers a replacement server that becomes usable after provisioning.
    pub fn add_provisioning_server(&mut self, now: Hours) -> ServerId {
        let id = ServerId(self.servers.len() as u32);
        self.servers.push(ServerState {
            id,
            status: ServerStatus::Provisioning,
            copies: Vec::new(),
            copy_epochs: Vec::new(),
            failure_epoch: 0,
            glitch_multiplier: 1.0,
            birth_time: now,
            death_time: None,
            valid_bytes: 0,
            billed_since: now,
        });
        id
    }

    fn settle_storage(&mut self, idx: usize, now: Hours) {
        let s = &mut self.servers[idx];
        let interval = now - s.billed_since;
        s.billed_since = now;
        let bytes = s.valid_bytes;
        self.ledger.accrue_storage(&self.tariff, bytes, interval);
    }

    pub fn charge_transfer(&mut self, server: ServerId, now: Hours, bytes: u64, direction: Direction) {
        self.ledger
            .accrue_transfer(&self.tariff, server.index(), now, bytes, direction);
    }

    fn record_loss(&mut self, doc: DocId, now: Hours) {
        debug_assert!(self.lost_at[doc.index()].is_none());
        self.lost_at[doc.index()] = Some(now);
        self.lost_count += 1;
        self.first_loss.get_or_insert(now);
        self.loss_log.push((doc, now));
    }

    /// A sector error hit the copy of `doc` on `server`.
    pub fn corrupt_copy(&mut self, server: ServerId, doc: DocId, now: Hours) -> Result<CorruptionOutcome> {
        let idx = server.index();
        let s = self.server(server)?;
        if !s.alive() || s.copies[doc.index()] != CopyState::Valid {
            return Ok(CorruptionOutcome::Ignored);
        }
        self.settle_storage(idx, now);
        let size = self.sizes[doc.index()];
        let s = &mut self.servers[idx];
        s.copies[doc.index()] = CopyState::Corrupt;
        s.valid_bytes -= size;
        let count = &mut self.valid_count[doc.index()];
        *count -= 1;
        if *count == 0 {
            self.record_loss(doc, now);
            return Ok(CorruptionOutcome::DocumentLost);
        }
        Ok(CorruptionOutcome::Corrupted)
    }

    /// The server failed. Every copy it held is gone; documents whose last
    /// valid copy was there are lost now. Returns those documents.
    pub fn kill_server(&mut self, server: ServerId, now: Hours) -> Result<Vec<DocId>> {
        let idx = server.index();
        let status = self.server(server)?.status;
        match status {
            ServerStatus::Alive => {}
            ServerStatus::Provisioning => {
                let s = &mut self.servers[idx];
                s.status = ServerStatus::Failed;
                s.death_time = Some(now);
                return Ok(Vec::new());
            }
            ServerStatus::Failed | ServerStatus::Detected => return Ok(Vec::new()),
        }
        self.settle_storage(idx, now);
        let s = &mut self.servers[idx];
        s.status = ServerStatus::Failed;
        s.death_time = Some(now);
        s.valid_bytes = 0;
        let copies = std::mem::take(&mut s.copies);
        s.copy_epochs = Vec::new();
        let mut lost = Vec::new();
        for (d, c) in copies.into_iter().enumerate() {
            if c == CopyState::Valid {
                self.valid_count[d] -= 1;
                if self.valid_count[d] == 0 {
                    let doc = DocId(d as u32);
                    self.record_loss(doc, now);
                    lost.push(doc);
                }
            }
        }
        Ok(lost)
    }

    /// Lowest-id alive server holding a valid copy of `doc`.
    pub fn repair_source(&self, doc: DocId) -> Option<ServerId> {
        self.servers
            .iter()
            .find(|s| s.alive() && s.copies[doc.index()] == CopyState::Valid)
            .map(|s| s.id)
    }

    /// Marks the copy of `doc` on `target` valid again. Transfers are
    /// billed by the caller.
    pub(crate) fn restore_copy(&mut self, target: ServerId, doc: DocId, now: Hours) -> Result<()> {
        let idx = target.index();
        if self.lost_at[doc.index()].is_some() {
            return Err(Error::logic(format!("document {} is lost and cannot be restored", doc.0)));
        }
        if !self.server(target)?.alive() {
            return Err(Error::logic(format!("restore onto server {} which is not alive", target.0)));
        }
        self.settle_storage(idx, now);
        let size = self.sizes[doc.index()];
        let s = &mut self.servers[idx];
        if s.copies[doc.index()] == CopyState::Valid {
            return Err(Error::logic("restoring a valid copy"));
        }
        s.copies[doc.index()] = CopyState::Valid;
        s.valid_bytes += size;
        self.valid_count[doc.index()] += 1;
        Ok(())
    }

    pub(crate) fn mark_detected(&mut self, server: ServerId) -> Result<bool> {
        let s = self.server_mut(server)?;
        if s.status == ServerStatus::Failed {
            s.status = ServerStatus::Detected;
            return Ok(true);
        }
        Ok(false)
    }

    /// Brings a provisioned server online, empty. Population is done by
    /// the repair policy.
    pub(crate) fn bring_online(&mut self, server: ServerId, now: Hours) -> Result<bool> {
        let n = self.doc_count();
        let s = self.server_mut(server)?;
        if s.status != ServerStatus::Provisioning {
            return Ok(false);
        }
        s.status = ServerStatus::Alive;
        s.copies = vec![CopyState::Absent; n];
        s.copy_epochs = vec![0; n];
        s.birth_time = now;
        s.billed_since = now;
        Ok(true)
    }

    /// Bills storage up to `now` on every server.
    pub fn settle_all(&mut self, now: Hours) {
        for i in 0..self.servers.len() {
            if self.servers[i].alive() {
                self.settle_storage(i, now);
            }
        }
    }

    pub fn loss_log(&self) -> &[(DocId, Hours)] {
        &self.loss_log
    }

    pub fn first_loss(&self) -> Option<Hours> {
        self.first_loss
    }
}

/// Loss summary of a finished run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub lost_count: u64,
    pub lost_fraction: f64,
    pub first_loss_time: Option<Hours>,
    /// Every document lost all of its copies.
    pub total_collection_loss: bool,
    /// Permanent losses in the order they happened.
    pub loss_times: Vec<(DocId, Hours)>,
}

pub fn loss_metrics(state: &CollectionState, horizon: Hours) -> Result<LossReport> {
    let n = state.doc_count() as u64;
    if let Some(&(doc, t)) = state.loss_log.iter().find(|&&(_, t)| t > horizon) {
        return Err(Error::logic(format!("document {} lost at {t} after the horizon", doc.0)));
    }
    Ok(LossReport {
        lost_count: state.lost_count,
        lost_fraction: state.lost_count as f64 / n as f64,
        first_loss_time: state.first_loss,
        total_collection_loss: state.lost_count == n,
        loss_times: state.loss_log.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn state(docs: usize, servers: usize) -> CollectionState {
        let mut st = CollectionState::new(vec![100; docs], servers, Tariff::default());
        for _ in 0..servers {
            st.add_initial_server(0.0);
        }
        st
    }

    #[test]
    fn no_corruption_no_loss() {
        let st = state(10, 2);
        let r = loss_metrics(&st, 10.0).unwrap();
        assert_eq!(r.lost_fraction, 0.0);
        assert_eq!(r.first_loss_time, None);
        assert!(!r.total_collection_loss);
    }

    #[test]
    fn last_copy_destruction_is_the_loss_time() {
        let mut st = state(3, 2);
        assert_eq!(st.corrupt_copy(ServerId(0), DocId(1), 1.0).unwrap(), CorruptionOutcome::Corrupted);
        assert_eq!(st.corrupt_copy(ServerId(0), DocId(1), 1.5).unwrap(), CorruptionOutcome::Ignored);
        assert_eq!(st.corrupt_copy(ServerId(1), DocId(1), 2.0).unwrap(), CorruptionOutcome::DocumentLost);
        let r = loss_metrics(&st, 10.0).unwrap();
        assert_eq!(r.lost_count, 1);
        assert_eq!(r.first_loss_time, Some(2.0));
        assert_eq!(r.loss_times, vec![(DocId(1), 2.0)]);
    }

    #[test]
    fn killing_every_server_loses_everything() {
        let mut st = state(4, 2);
        assert!(st.kill_server(ServerId(0), 1.0).unwrap().is_empty());
        assert_eq!(st.kill_server(ServerId(1), 3.0).unwrap().len(), 4);
        // dying twice is a no-op
        assert!(st.kill_server(ServerId(1), 4.0).unwrap().is_empty());
        let r = loss_metrics(&st, 10.0).unwrap();
        assert!(r.total_collection_loss);
        assert_eq!(r.lost_fraction, 1.0);
        assert_eq!(r.first_loss_time, Some(3.0));
        assert!(st.server(ServerId(0)).unwrap().copies.is_empty());
    }

    #[test]
    fn two_in_ten_thousand() {
        let mut st = state(10_000, 1);
        st.corrupt_copy(ServerId(0), DocId(5), 1.0).unwrap();
        st.corrupt_copy(ServerId(0), DocId(7), 1.0).unwrap();
        assert_eq!(loss_metrics(&st, 2.0).unwrap().lost_fraction, 2e-4);
    }

    #[test]
    fn storage_bills_valid_bytes_only() {
        let mut st = CollectionState::new(vec![1 << 30; 2], 1, Tariff::default());
        st.add_initial_server(0.0);
        st.corrupt_copy(ServerId(0), DocId(0), crate::units::HOURS_PER_MONTH).unwrap();
        st.settle_all(2.0 * crate::units::HOURS_PER_MONTH);
        // 2 GiB for a month, then 1 GiB for a month, at 0.02
        assert!((st.ledger.storage_cost - 0.06).abs() < 1e-12);
    }

    #[test]
    fn unknown_server_is_a_logic_error() {
        let mut st = state(1, 1);
        assert!(matches!(st.corrupt_copy(ServerId(9), DocId(0), 0.0), Err(Error::Logic(_))));
    }

    #[test]
    fn lost_documents_cannot_be_restored() {
        let mut st = state(1, 2);
        st.corrupt_copy(ServerId(0), DocId(0), 1.0).unwrap();
        st.corrupt_copy(ServerId(1), DocId(0), 2.0).unwrap();
        assert!(st.restore_copy(ServerId(0), DocId(0), 3.0).is_err());
    }
}
