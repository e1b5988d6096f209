//! Tariffs and the per-run cost ledger.
//!
//! Prices are graduated: each tier's span is charged at that tier's rate.
//! Storage is priced per GiB-month on each server's stored volume and
//! integrated continuously over time. Transfers are priced per GiB on each
//! server's cumulative volume within the current billing month, so a
//! month's first transfer starts at the first tier again.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::units::{bytes_to_gb, Hours, HOURS_PER_MONTH};

/// One price band. `upper_gb` is the cumulative upper bound of the band.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Tier {
    pub upper_gb: f64,
    pub price: f64,
}

/// A graduated price schedule; the last tier is unbounded.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TierSchedule {
    tiers: Vec<Tier>,
}

impl TierSchedule {
    pub fn new(tiers: Vec<Tier>) -> Result<Self> {
        validate_tiers(&tiers)?;
        Ok(TierSchedule { tiers })
    }

    pub fn flat(price: f64) -> Result<Self> {
        Self::new(vec![Tier {
            upper_gb: f64::INFINITY,
            price,
        }])
    }

    pub fn tiers(&self) -> &[Tier] {
        &self.tiers
    }

    pub fn price(&self, amount_gb: f64) -> f64 {
        graduated(amount_gb, &self.tiers)
    }

    /// Price of moving from `from` to `from + extra`.
    pub fn marginal(&self, from_gb: f64, extra_gb: f64) -> f64 {
        if extra_gb <= 0.0 {
            return 0.0;
        }
        self.price(from_gb + extra_gb) - self.price(from_gb)
    }
}

fn validate_tiers(tiers: &[Tier]) -> Result<()> {
    let Some(last) = tiers.last() else {
        return Err(Error::config("tier schedule is empty"));
    };
    if !last.upper_gb.is_infinite() {
        return Err(Error::config("last tier must be unbounded"));
    }
    let mut prev = 0.0;
    for (i, t) in tiers.iter().enumerate() {
        if !(t.upper_gb > prev) {
            return Err(Error::config(format!(
                "tier {i}: bounds must be strictly increasing and positive"
            )));
        }
        if !(t.price >= 0.0) || !t.price.is_finite() {
            return Err(Error::config(format!("tier {i}: price must be finite and >= 0")));
        }
        prev = t.upper_gb;
    }
    Ok(())
}

fn graduated(amount: f64, tiers: &[Tier]) -> f64 {
    let mut total = 0.0;
    let mut lower = 0.0;
    for t in tiers {
        if amount <= lower {
            break;
        }
        total += (amount.min(t.upper_gb) - lower) * t.price;
        lower = t.upper_gb;
    }
    total
}

/// Graduated price of `amount_gb` under `tiers`.
pub fn tiered_price(amount_gb: f64, tiers: &[Tier]) -> Result<f64> {
    validate_tiers(tiers)?;
    if amount_gb.is_nan() || amount_gb < 0.0 {
        return Err(Error::config(format!("amount must be >= 0, got {amount_gb}")));
    }
    Ok(graduated(amount_gb, tiers))
}

/// Storage and transfer price schedules of one storage service class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tariff {
    /// Currency per GiB-month.
    pub storage: TierSchedule,
    /// Currency per GiB.
    pub ingress: TierSchedule,
    pub egress: TierSchedule,
}

impl Default for Tariff {
    /// Placeholder prices; real analyses must supply their own.
    fn default() -> Self {
        Tariff {
            storage: TierSchedule::flat(0.02).unwrap(),
            ingress: TierSchedule::flat(0.0).unwrap(),
            egress: TierSchedule::flat(0.05).unwrap(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Direction {
    Ingress,
    Egress,
}

#[derive(Debug, Clone, Copy, Default)]
struct MonthVolume {
    month: u64,
    gb: f64,
}

/// Accumulated charges of one run.
#[derive(Debug, Clone, Default)]
pub struct CostLedger {
    pub storage_cost: f64,
    pub ingress_cost: f64,
    pub egress_cost: f64,
    pub gb_months_stored: f64,
    pub ingress_bytes: u64,
    pub egress_bytes: u64,
    // per account: [ingress, egress]
    volumes: Vec<[MonthVolume; 2]>,
}

impl CostLedger {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn total(&self) -> f64 {
        self.storage_cost + self.ingress_cost + self.egress_cost
    }

    /// Charges `bytes` held for `interval` hours on one account.
    pub fn accrue_storage(&mut self, tariff: &Tariff, bytes: u64, interval: Hours) -> f64 {
        if bytes == 0 || interval <= 0.0 {
            return 0.0;
        }
        let months = interval / HOURS_PER_MONTH;
        let charge = tariff.storage.price(bytes_to_gb(bytes)) * months;
        self.storage_cost += charge;
        self.gb_months_stored += bytes_to_gb(bytes) * months;
        charge
    }

    /// Charges a piecewise-constant stored volume given as `(bytes, hours)`.
    pub fn accrue_storage_intervals(&mut self, tariff: &Tariff, intervals: &[(u64, Hours)]) -> f64 {
        intervals
            .iter()
            .map(|&(bytes, len)| self.accrue_storage(tariff, bytes, len))
            .sum()
    }

    /// Charges a transfer of `bytes` to or from `account` at time `at`.
    pub fn accrue_transfer(
        &mut self,
        tariff: &Tariff,
        account: usize,
        at: Hours,
        bytes: u64,
        direction: Direction,
    ) -> f64 {
        if bytes == 0 {
            return 0.0;
        }
        if self.volumes.len() <= account {
            self.volumes.resize(account + 1, Default::default());
        }
        let month = (at / HOURS_PER_MONTH).floor() as u64;
        let (slot, schedule) = match direction {
            Direction::Ingress => (0, &tariff.ingress),
            Direction::Egress => (1, &tariff.egress),
        };
        let vol = &mut self.volumes[account][slot];
        if vol.month != month {
            *vol = MonthVolume { month, gb: 0.0 };
        }
        let gb = bytes_to_gb(bytes);
        let charge = schedule.marginal(vol.gb, gb);
        vol.gb += gb;
        match direction {
            Direction::Ingress => {
                self.ingress_cost += charge;
                self.ingress_bytes += bytes;
            }
            Direction::Egress => {
                self.egress_cost += charge;
                self.egress_bytes += bytes;
            }
        }
        charge
    }
}
