//! The four threat layers as hazard processes.
//!
//! Every layer is memoryless. Sector errors hit individual document copies
//! at a rate proportional to the number of blocks a copy occupies; glitches
//! multiply that rate on one server for a while; servers have exponential
//! lifetimes; shocks either multiply server failure rates for a while or
//! kill several servers at once.

use rand::seq::index;
use serde::{Deserialize, Serialize};

use crate::engine::{draw_exponential, RngStream};
use crate::error::{Error, Result};
use crate::state::ServerId;
use crate::units::{Hours, BYTES_PER_MIB};

pub const DEFAULT_BLOCK_SIZE: u64 = BYTES_PER_MIB;

/// Sector half-lives (hours) spanning the plausible range of disk quality,
/// extended downward for glitch-prone environments.
pub const PLAUSIBLE_SECTOR_HALF_LIVES_MH: [f64; 7] = [20.0, 30.0, 50.0, 100.0, 200.0, 500.0, 1000.0];

/// Rate per hour of an exponential process with the given half-life.
///
/// An infinite half-life is a process that never fires (rate 0).
pub fn hazard_from_half_life(half_life: Hours) -> Result<f64> {
    if half_life.is_nan() || half_life <= 0.0 {
        return Err(Error::config(format!("half-life must be positive, got {half_life}")));
    }
    Ok(std::f64::consts::LN_2 / half_life)
}

pub fn half_life_from_hazard(hazard: f64) -> Result<Hours> {
    if hazard.is_nan() || hazard <= 0.0 {
        return Err(Error::config(format!("hazard must be positive, got {hazard}")));
    }
    Ok(std::f64::consts::LN_2 / hazard)
}

/// How often a recurring layer event arrives.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Arrival {
    /// Poisson arrivals with exponential inter-arrival half-life.
    Poisson { half_life: Hours },
    /// A single occurrence at a fixed instant.
    Once { at: Hours },
}

impl Arrival {
    /// Time of the first arrival after `now`.
    pub fn first(&self, now: Hours, rng: &mut RngStream) -> Result<Hours> {
        match *self {
            Arrival::Poisson { half_life } => {
                Ok(now + draw_exponential(rng, hazard_from_half_life(half_life)?)?)
            }
            Arrival::Once { at } => Ok(at.max(now)),
        }
    }

    /// Time of the arrival following one at `now`.
    pub fn next(&self, now: Hours, rng: &mut RngStream) -> Result<Option<Hours>> {
        match *self {
            Arrival::Poisson { half_life } => Ok(Some(
                now + draw_exponential(rng, hazard_from_half_life(half_life)?)?,
            )),
            Arrival::Once { .. } => Ok(None),
        }
    }

    fn validate(&self, path: &str) -> Result<()> {
        match *self {
            Arrival::Poisson { half_life } if half_life.is_nan() || half_life <= 0.0 => Err(
                Error::validation(format!("{path}.half_life"), "must be positive"),
            ),
            Arrival::Once { at } if !(at >= 0.0) || !at.is_finite() => {
                Err(Error::validation(format!("{path}.at"), "must be a finite time >= 0"))
            }
            _ => Ok(()),
        }
    }
}

/// Sector (block) error layer.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SectorModel {
    /// Half-life of one block; infinite for error-free storage.
    pub block_half_life: Hours,
    pub block_size: u64,
}

impl SectorModel {
    pub fn new(block_half_life: Hours) -> Self {
        SectorModel {
            block_half_life,
            block_size: DEFAULT_BLOCK_SIZE,
        }
    }

    pub fn block_hazard(&self) -> f64 {
        std::f64::consts::LN_2 / self.block_half_life
    }

    /// Blocks occupied by a document of `size` bytes.
    pub fn blocks(&self, size: u64) -> u64 {
        size.div_ceil(self.block_size)
    }

    pub fn validate(&self, path: &str) -> Result<()> {
        if self.block_half_life.is_nan() || self.block_half_life <= 0.0 {
            return Err(Error::validation(format!("{path}.half_life"), "must be positive"));
        }
        if self.block_size == 0 {
            return Err(Error::validation(format!("{path}.block_size"), "must be positive"));
        }
        Ok(())
    }
}

/// Transient per-server excursion of the sector error rate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GlitchModel {
    pub arrival: Arrival,
    pub duration: Hours,
    pub multiplier: f64,
}

impl GlitchModel {
    pub fn validate(&self, path: &str) -> Result<()> {
        self.arrival.validate(path)?;
        if self.duration.is_nan() || self.duration < 0.0 {
            return Err(Error::validation(format!("{path}.duration"), "must be >= 0"));
        }
        if !(self.multiplier >= 1.0) || !self.multiplier.is_finite() {
            return Err(Error::validation(format!("{path}.multiplier"), "must be >= 1"));
        }
        Ok(())
    }
}

/// Exponential server (institution) lifetimes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ServerModel {
    /// Infinite for immortal servers.
    pub lifetime_half_life: Hours,
}

impl ServerModel {
    pub const IMMORTAL: ServerModel = ServerModel {
        lifetime_half_life: f64::INFINITY,
    };

    pub fn is_immortal(&self) -> bool {
        self.lifetime_half_life.is_infinite()
    }

    pub fn validate(&self, path: &str) -> Result<()> {
        if self.lifetime_half_life.is_nan() || self.lifetime_half_life <= 0.0 {
            return Err(Error::validation(format!("{path}.half_life"), "must be positive"));
        }
        Ok(())
    }
}

/// Which servers a rate shock affects.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ShockScope {
    /// Every server, including replacements provisioned during the shock.
    All,
    /// A uniformly chosen subset of the servers alive at onset.
    Subset(usize),
}

/// Correlated server-level threats.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum ShockModel {
    Rate {
        arrival: Arrival,
        duration: Hours,
        multiplier: f64,
        scope: ShockScope,
    },
    Span { arrival: Arrival, span: usize },
}

impl ShockModel {
    pub fn arrival(&self) -> &Arrival {
        match self {
            ShockModel::Rate { arrival, .. } | ShockModel::Span { arrival, .. } => arrival,
        }
    }

    pub fn validate(&self, path: &str) -> Result<()> {
        self.arrival().validate(path)?;
        match *self {
            ShockModel::Rate {
                duration,
                multiplier,
                scope,
                ..
            } => {
                if duration.is_nan() || duration < 0.0 {
                    return Err(Error::validation(format!("{path}.duration"), "must be >= 0"));
                }
                if !(multiplier >= 1.0) || !multiplier.is_finite() {
                    return Err(Error::validation(format!("{path}.multiplier"), "must be >= 1"));
                }
                if scope == ShockScope::Subset(0) {
                    return Err(Error::validation(format!("{path}.scope"), "subset size must be >= 1"));
                }
            }
            ShockModel::Span { span, .. } => {
                if span == 0 {
                    return Err(Error::validation(format!("{path}.span"), "must be >= 1"));
                }
            }
        }
        Ok(())
    }
}

/// Corruption rate of one copy: blocks x block hazard x glitch multiplier.
pub fn copy_corruption_hazard(doc_size: u64, sector: &SectorModel, glitch_multiplier: f64) -> Result<f64> {
    if doc_size == 0 {
        return Err(Error::config("document size must be positive"));
    }
    check_multiplier(glitch_multiplier)?;
    Ok(sector.blocks(doc_size) as f64 * hazard_from_half_life(sector.block_half_life)? * glitch_multiplier)
}

/// Failure rate of a server under the product of active rate-shock
/// multipliers. Multiplying the rate by `m` is the same as dividing the
/// half-life by `m`.
pub fn effective_server_hazard(server: &ServerModel, rate_shock_multiplier: f64) -> Result<f64> {
    check_multiplier(rate_shock_multiplier)?;
    Ok(hazard_from_half_life(server.lifetime_half_life)? * rate_shock_multiplier)
}

/// Redraws a pending failure time after the hazard changed at `now`.
///
/// Memorylessness makes the stale draw irrelevant; the caller must cancel
/// the event it superseded.
pub fn resample_on_rate_change(
    pending_failure_time: Hours,
    now: Hours,
    new_hazard: f64,
    rng: &mut RngStream,
) -> Result<Hours> {
    if pending_failure_time < now {
        return Err(Error::logic(format!(
            "pending failure at {pending_failure_time} already fired (now {now})"
        )));
    }
    Ok(now + draw_exponential(rng, new_hazard)?)
}

/// Picks `min(span, live)` distinct servers uniformly at random to fail.
/// The result is sorted by id.
pub fn apply_span_shock(live_servers: &[ServerId], span: usize, rng: &mut RngStream) -> Result<Vec<ServerId>> {
    if span == 0 {
        return Err(Error::config("shock span must be >= 1"));
    }
    let k = span.min(live_servers.len());
    let mut hit: Vec<ServerId> = index::sample(rng, live_servers.len(), k)
        .into_iter()
        .map(|i| live_servers[i])
        .collect();
    hit.sort_unstable();
    Ok(hit)
}

fn check_multiplier(m: f64) -> Result<()> {
    if !(m >= 1.0) {
        return Err(Error::config(format!("multiplier must be >= 1, got {m}")));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64, rel: f64) -> bool {
        ((a - b) / b).abs() <= rel
    }

    #[test]
    fn hazard_examples() {
        assert!(close(hazard_from_half_life(1e9).unwrap(), 6.93147e-10, 1e-6));
        assert!(close(hazard_from_half_life(std::f64::consts::LN_2).unwrap(), 1.0, 1e-15));
        assert!(hazard_from_half_life(0.0).is_err());
        assert!(hazard_from_half_life(-3.0).is_err());
        assert_eq!(hazard_from_half_life(f64::INFINITY).unwrap(), 0.0);
    }

    #[test]
    fn half_life_round_trip() {
        for h in [1e-3, 1.0, 20e6, 1e9, 3.7e12] {
            let back = half_life_from_hazard(hazard_from_half_life(h).unwrap()).unwrap();
            assert!(close(back, h, 1e-12));
        }
    }

    #[test]
    fn copy_hazard_scales_with_blocks_and_glitch() {
        let s = SectorModel::new(1e8);
        let one = copy_corruption_hazard(DEFAULT_BLOCK_SIZE, &s, 1.0).unwrap();
        assert!(close(one, 6.93147e-9, 1e-6));
        let ten = copy_corruption_hazard(10 * DEFAULT_BLOCK_SIZE, &s, 1.0).unwrap();
        assert!(close(ten / one, 10.0, 1e-15));
        let glitched = copy_corruption_hazard(DEFAULT_BLOCK_SIZE, &s, 10.0).unwrap();
        assert!(close(glitched / one, 10.0, 1e-15));
        // a partial block still occupies a whole block
        assert_eq!(copy_corruption_hazard(1, &s, 1.0).unwrap(), one);
        assert!(copy_corruption_hazard(0, &s, 1.0).is_err());
        assert!(copy_corruption_hazard(1, &s, 0.5).is_err());
    }

    #[test]
    fn server_hazard_examples() {
        let s = ServerModel { lifetime_half_life: 20_000.0 };
        assert!(close(effective_server_hazard(&s, 1.0).unwrap(), 3.46574e-5, 1e-5));
        let halved = ServerModel { lifetime_half_life: 10_000.0 };
        assert!(close(
            effective_server_hazard(&s, 2.0).unwrap(),
            effective_server_hazard(&halved, 1.0).unwrap(),
            1e-15
        ));
        assert!(effective_server_hazard(&s, 0.9).is_err());
        assert_eq!(effective_server_hazard(&ServerModel::IMMORTAL, 5.0).unwrap(), 0.0);
    }

    #[test]
    fn resample_zero_hazard_never_fires() {
        let mut rng = RngStream::new(1, 1);
        assert!(resample_on_rate_change(10.0, 5.0, 0.0, &mut rng).unwrap().is_infinite());
        assert!(resample_on_rate_change(1.0, 5.0, 1.0, &mut rng).is_err());
        let t = resample_on_rate_change(10.0, 5.0, 1.0, &mut rng).unwrap();
        assert!(t > 5.0);
    }

    #[test]
    fn span_shock_counts() {
        let live: Vec<ServerId> = (0..5).map(ServerId).collect();
        let mut rng = RngStream::new(3, 0);
        let hit = apply_span_shock(&live, 2, &mut rng).unwrap();
        assert_eq!(hit.len(), 2);
        assert_ne!(hit[0], hit[1]);
        let hit = apply_span_shock(&live[..2], 3, &mut rng).unwrap();
        assert_eq!(hit, vec![ServerId(0), ServerId(1)]);
        assert!(apply_span_shock(&[], 3, &mut rng).unwrap().is_empty());
        assert!(apply_span_shock(&live, 0, &mut rng).is_err());
    }

    #[test]
    fn span_shock_is_uniform() {
        // each of 5 servers is hit by a span-2 shock with probability 2/5
        let live: Vec<ServerId> = (0..5).map(ServerId).collect();
        let mut rng = RngStream::new(11, 4);
        let trials = 100_000;
        let mut hits = [0u32; 5];
        for _ in 0..trials {
            for s in apply_span_shock(&live, 2, &mut rng).unwrap() {
                hits[s.0 as usize] += 1;
            }
        }
        for h in hits {
            let freq = h as f64 / trials as f64;
            assert!((freq - 0.4).abs() < 0.01, "freq {freq}");
        }
    }

    #[test]
    fn model_validation() {
        assert!(SectorModel::new(-5e6).validate("sector").is_err());
        assert!(SectorModel::new(5e6).validate("sector").is_ok());
        let g = GlitchModel {
            arrival: Arrival::Poisson { half_life: 1e4 },
            duration: 100.0,
            multiplier: 0.5,
        };
        let err = g.validate("glitches[0]").unwrap_err().to_string();
        assert!(err.contains("glitches[0].multiplier"), "{err}");
        let s = ShockModel::Span {
            arrival: Arrival::Poisson { half_life: 1e4 },
            span: 0,
        };
        assert!(s.validate("shocks[0]").is_err());
    }
}
