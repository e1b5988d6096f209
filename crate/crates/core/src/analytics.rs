//! Closed-form loss arithmetic.
//!
//! These functions do not touch the simulator and serve as independent
//! oracles for it, as well as the back end of `presim calc`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::units::Hours;

fn positive(name: &str, v: f64) -> Result<()> {
    if v.is_nan() || v <= 0.0 {
        return Err(Error::config(format!("{name} must be positive, got {v}")));
    }
    Ok(())
}

/// Probability that a single unaudited copy of a `blocks`-block document
/// suffers at least one block error within `t` hours.
pub fn p_doc_loss_single_copy(blocks: f64, block_half_life: Hours, t: Hours) -> Result<f64> {
    positive("blocks", blocks)?;
    positive("half-life", block_half_life)?;
    if t.is_nan() || t < 0.0 {
        return Err(Error::config(format!("t must be >= 0, got {t}")));
    }
    let exposure = blocks * std::f64::consts::LN_2 / block_half_life * t;
    Ok(-(-exposure).exp_m1())
}

/// Probability that every one of `copies` independent, never-repaired
/// copies is corrupt by time `t`.
pub fn p_doc_loss_unaudited(copies: u32, blocks: f64, block_half_life: Hours, t: Hours) -> Result<f64> {
    if copies == 0 {
        return Err(Error::config("copies must be >= 1"));
    }
    Ok(p_doc_loss_single_copy(blocks, block_half_life, t)?.powi(copies as i32))
}

/// Expected fraction of `n` documents missed by `draws` uniform draws with
/// replacement: `(1 - 1/n)^draws`.
pub fn expected_unaudited_fraction(n: u64, draws: u64) -> Result<f64> {
    if n == 0 {
        return Err(Error::config("document count must be >= 1"));
    }
    if draws == 0 {
        return Ok(1.0);
    }
    if n == 1 {
        return Ok(0.0);
    }
    Ok((draws as f64 * (-1.0 / n as f64).ln_1p()).exp())
}

/// Document count, size, fragility and compression of a collection.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FragilityProfile {
    pub doc_count: f64,
    /// Size in blocks.
    pub size_blocks: f64,
    pub fragility: f64,
    /// Original size over compressed size.
    pub compression_ratio: f64,
    pub fragility_after: f64,
}

impl FragilityProfile {
    pub fn validate(&self) -> Result<()> {
        positive("N", self.doc_count)?;
        positive("S", self.size_blocks)?;
        if !(self.compression_ratio >= 1.0) {
            return Err(Error::config("compression ratio C must be >= 1"));
        }
        if !(self.fragility >= self.fragility_after && self.fragility_after >= 1.0) {
            return Err(Error::config("fragilities must satisfy F >= F' >= 1"));
        }
        Ok(())
    }
}

/// A fully fragile collection with the same expected loss proportion.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FragilityEquivalent {
    pub doc_count: f64,
    pub size_blocks: f64,
    pub fragility: f64,
    /// `N * F` is not a whole number; the identity holds for expectations only.
    pub fractional_count: bool,
    /// `S / F` is smaller than one block.
    pub sub_block: bool,
}

impl FragilityEquivalent {
    pub fn warnings(&self) -> Vec<&'static str> {
        let mut w = Vec::new();
        if self.fractional_count {
            w.push("N*F is not an integer: equivalence holds for expected proportions only");
        }
        if self.sub_block {
            w.push("S/F is below one block");
        }
        w
    }
}

/// Maps `N` documents of `S` blocks with fragility `F` to `N*F` documents
/// of `S/F` blocks with fragility 1.
pub fn fragility_equivalent(doc_count: f64, size_blocks: f64, fragility: f64) -> Result<FragilityEquivalent> {
    positive("N", doc_count)?;
    positive("S", size_blocks)?;
    if !(fragility >= 1.0) || !fragility.is_finite() {
        return Err(Error::config(format!("fragility must be >= 1, got {fragility}")));
    }
    let n = doc_count * fragility;
    let s = size_blocks / fragility;
    Ok(FragilityEquivalent {
        doc_count: n,
        size_blocks: s,
        fragility: 1.0,
        fractional_count: n.fract() != 0.0,
        sub_block: s < 1.0,
    })
}

/// Whether lossless compression lowers expected loss: `C * F' >= F`.
pub fn compression_reduces_loss(compression_ratio: f64, fragility: f64, fragility_after: f64) -> Result<bool> {
    FragilityProfile {
        doc_count: 1.0,
        size_blocks: 1.0,
        fragility,
        compression_ratio,
        fragility_after,
    }
    .validate()?;
    Ok(compression_ratio * fragility_after >= fragility)
}

/// Replicas needed to tolerate `subverted` Byzantine auditors plus a shock
/// destroying `span` servers: `3s + 1 + span`.
pub fn byzantine_min_replicas(subverted: u64, span: u64) -> u64 {
    3 * subverted + 1 + span
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64, rel: f64) -> bool {
        ((a - b) / b).abs() <= rel
    }

    #[test]
    fn single_copy() {
        assert_eq!(p_doc_loss_single_copy(1.0, 1e8, 0.0).unwrap(), 0.0);
        // 1 - exp(-6.93147e-4)
        assert!(close(p_doc_loss_single_copy(1.0, 1e8, 1e5).unwrap(), 6.9291e-4, 1e-4));
        // 10x the plausible maximum over 50 metric years: about 35 ppm
        let p = p_doc_loss_single_copy(1.0, 1e10, 5e5).unwrap();
        assert!(close(p, 3.466e-5, 1e-3));
        assert!((20e-6..=200e-6).contains(&p));
        assert!(p_doc_loss_single_copy(0.0, 1e8, 1.0).is_err());
        assert!(p_doc_loss_single_copy(1.0, 0.0, 1.0).is_err());
        assert!(p_doc_loss_single_copy(1.0, 1e8, -1.0).is_err());
    }

    #[test]
    fn unaudited_copies() {
        let single = p_doc_loss_single_copy(1.0, 1e8, 1e5).unwrap();
        assert_eq!(p_doc_loss_unaudited(1, 1.0, 1e8, 1e5).unwrap(), single);
        assert!(close(p_doc_loss_unaudited(3, 1.0, 1e8, 1e5).unwrap(), 3.327e-10, 1e-3));
        // certain single-copy failure
        assert_eq!(p_doc_loss_unaudited(7, 1e12, 1.0, 1e12).unwrap(), 1.0);
        assert!(p_doc_loss_unaudited(0, 1.0, 1e8, 1e5).is_err());
    }

    #[test]
    fn balls_in_urns() {
        assert!(close(expected_unaudited_fraction(1000, 1000).unwrap(), 0.36770, 1e-4));
        assert_eq!(expected_unaudited_fraction(1000, 0).unwrap(), 1.0);
        assert_eq!(expected_unaudited_fraction(1, 1).unwrap(), 0.0);
        assert!(expected_unaudited_fraction(0, 1).is_err());
    }

    #[test]
    fn fragility_examples() {
        let e = fragility_equivalent(10_000.0, 10.0, 2.0).unwrap();
        assert_eq!((e.doc_count, e.size_blocks, e.fragility), (20_000.0, 5.0, 1.0));
        assert!(e.warnings().is_empty());
        let id = fragility_equivalent(123.0, 7.0, 1.0).unwrap();
        assert_eq!((id.doc_count, id.size_blocks), (123.0, 7.0));
        let frac = fragility_equivalent(3.0, 1.0, 1.5).unwrap();
        assert!(frac.fractional_count && frac.sub_block);
        assert_eq!(frac.warnings().len(), 2);
        assert!(fragility_equivalent(3.0, 1.0, 0.5).is_err());
    }

    #[test]
    fn compression_predicate() {
        assert!(compression_reduces_loss(1.2, 1.0, 1.0).unwrap());
        assert!(!compression_reduces_loss(1.5, 2.0, 1.0).unwrap());
        for c in [1.0, 1.1, 3.0, 10.0] {
            assert!(compression_reduces_loss(c, 4.0, 4.0).unwrap());
        }
        assert!(compression_reduces_loss(0.5, 1.0, 1.0).is_err());
        assert!(compression_reduces_loss(2.0, 1.0, 2.0).is_err());
    }

    #[test]
    fn byzantine_examples() {
        assert_eq!(byzantine_min_replicas(2, 0), 7);
        assert_eq!(byzantine_min_replicas(2, 3), 10);
        assert_eq!(byzantine_min_replicas(0, 0), 1);
    }
}
