//! Scenario files.
//!
//! A scenario is one JSON document describing the collection, the threat
//! layers, the policies, the tariff and the horizon. Durations are numbers
//! of hours or strings with a unit suffix (`h`, `kh`, `Mh`, `my`); sizes
//! are numbers of bytes or strings with a binary suffix (`KiB`, `MiB`,
//! `GiB`, `TiB`). [`normalize`] echoes a scenario in canonical form with
//! every default filled in and every quantity in hours or bytes.

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::cost::{Tariff, Tier, TierSchedule};
use crate::error::{Error, Result};
use crate::policy::{
    AuditPolicy, DocAuditPolicy, Fixity, ProbePolicy, RepairPolicy, SamplingStrategy, DEFAULT_PROBE_COUNT,
};
use crate::risk::{
    Arrival, GlitchModel, SectorModel, ServerModel, ShockModel, ShockScope, DEFAULT_BLOCK_SIZE,
};
use crate::state::{DocumentSpec, SizeDistribution};
use crate::units::{parse_bytes, parse_duration, Hours, HOURS_PER_METRIC_YEAR, HOURS_PER_MONTH};

pub const SCHEMA_VERSION: u32 = 1;

/// Default document size: five blocks.
pub const DEFAULT_DOC_SIZE: u64 = 5 * DEFAULT_BLOCK_SIZE;

/// A full parameterization of one simulated world: the preservation
/// policy together with the risk profile it faces.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Scenario {
    pub label: String,
    pub documents: DocumentSpec,
    pub target_copies: usize,
    pub sector: SectorModel,
    pub glitches: Vec<GlitchModel>,
    pub server: ServerModel,
    pub shocks: Vec<ShockModel>,
    pub audit: AuditPolicy,
    pub repair: RepairPolicy,
    pub tariff: Tariff,
    pub horizon: Hours,
}

impl Scenario {
    /// Unaudited sector-only world with immortal servers and default
    /// document size.
    pub fn basic(doc_count: u64, copies: usize, sector_half_life: Hours, horizon: Hours) -> Self {
        Scenario {
            label: String::new(),
            documents: DocumentSpec {
                doc_count,
                size: SizeDistribution::Constant(DEFAULT_DOC_SIZE),
                fragility: 1.0,
            },
            target_copies: copies,
            sector: SectorModel::new(sector_half_life),
            glitches: Vec::new(),
            server: ServerModel::IMMORTAL,
            shocks: Vec::new(),
            audit: AuditPolicy::default(),
            repair: RepairPolicy::default(),
            tariff: Tariff::default(),
            horizon,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.documents.validate("documents")?;
        if self.target_copies == 0 {
            return Err(Error::validation("copies", "must be >= 1"));
        }
        if self.target_copies > u16::MAX as usize {
            return Err(Error::validation("copies", "too many copies"));
        }
        self.sector.validate("sector")?;
        for (i, g) in self.glitches.iter().enumerate() {
            g.validate(&format!("glitches.{i}"))?;
        }
        self.server.validate("server")?;
        for (i, s) in self.shocks.iter().enumerate() {
            s.validate(&format!("shocks.{i}"))?;
        }
        self.audit.validate("audit")?;
        self.repair.validate("repair")?;
        if !(self.horizon > 0.0) || !self.horizon.is_finite() {
            return Err(Error::validation("horizon", "must be positive and finite"));
        }
        if self.glitches.len() > u16::MAX as usize || self.shocks.len() > u16::MAX as usize {
            return Err(Error::validation("glitches", "too many layer models"));
        }
        Ok(())
    }
}

// ---- file representation ----

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
enum Quantity {
    Number(f64),
    Text(String),
}

impl Quantity {
    fn hours(&self, path: &str) -> Result<Hours> {
        match self {
            Quantity::Number(h) => Ok(*h),
            Quantity::Text(t) => parse_duration(t).map_err(|e| Error::validation(path, e.to_string())),
        }
    }

    fn bytes(&self, path: &str) -> Result<u64> {
        match self {
            Quantity::Number(b) if *b >= 0.0 && b.fract() == 0.0 && *b <= u64::MAX as f64 => Ok(*b as u64),
            Quantity::Number(b) => Err(Error::validation(path, format!("{b} is not a whole number of bytes"))),
            Quantity::Text(t) => parse_bytes(t).map_err(|e| Error::validation(path, e.to_string())),
        }
    }

    fn from_hours(h: Hours) -> Self {
        if h.is_infinite() {
            Quantity::Text("never".into())
        } else {
            Quantity::Number(h)
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawScenario {
    #[serde(default = "default_schema")]
    schema_version: u32,
    #[serde(default)]
    label: String,
    documents: RawDocuments,
    copies: usize,
    sector: RawSector,
    #[serde(default)]
    glitches: Vec<RawGlitch>,
    #[serde(default)]
    server: Option<RawServer>,
    #[serde(default)]
    shocks: Vec<RawShock>,
    #[serde(default)]
    audit: RawAudit,
    #[serde(default)]
    repair: RawRepair,
    #[serde(default)]
    tariff: Option<RawTariff>,
    horizon: Quantity,
}

fn default_schema() -> u32 {
    SCHEMA_VERSION
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawDocuments {
    count: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    size: Option<RawSize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    fragility: Option<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(untagged)]
enum RawSize {
    Constant(Quantity),
    Dist(RawSizeDist),
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "lowercase")]
enum RawSizeDist {
    Lognormal { median: Quantity, sigma: f64 },
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSector {
    half_life: Quantity,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    block_size: Option<Quantity>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawGlitch {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    half_life: Option<Quantity>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    at: Option<Quantity>,
    duration: Quantity,
    multiplier: f64,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(untagged)]
enum RawServer {
    Named(String),
    Model(RawServerModel),
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawServerModel {
    half_life: Quantity,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
enum RawShock {
    Rate {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        half_life: Option<Quantity>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        at: Option<Quantity>,
        duration: Quantity,
        multiplier: f64,
        #[serde(default = "default_scope")]
        scope: RawScope,
    },
    Span {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        half_life: Option<Quantity>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        at: Option<Quantity>,
        span: usize,
    },
}

fn default_scope() -> RawScope {
    RawScope::Named("all".into())
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(untagged)]
enum RawScope {
    Named(String),
    Subset { subset: usize },
}

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawAudit {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    documents: Option<RawDocAudit>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    probe: Option<RawProbe>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawDocAudit {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    cycle: Option<Quantity>,
    #[serde(default = "one")]
    segments: u32,
    #[serde(default = "systematic")]
    strategy: SamplingStrategy,
    #[serde(default = "full")]
    fixity: Fixity,
}

fn one() -> u32 {
    1
}

fn systematic() -> SamplingStrategy {
    SamplingStrategy::Systematic
}

fn full() -> Fixity {
    Fixity::Full
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawProbe {
    interval: Quantity,
    #[serde(default = "default_probe_count")]
    count: u32,
}

fn default_probe_count() -> u32 {
    DEFAULT_PROBE_COUNT
}

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawRepair {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    repopulation_delay: Option<Quantity>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawTariff {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    storage: Option<RawSchedule>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    ingress: Option<RawSchedule>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    egress: Option<RawSchedule>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(untagged)]
enum RawSchedule {
    Flat(f64),
    Tiers(Vec<RawTier>),
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawTier {
    /// GiB; omitted or null on the unbounded last tier.
    #[serde(default)]
    up_to_gb: Option<f64>,
    price: f64,
}

// ---- conversion ----

fn arrival(half_life: &Option<Quantity>, at: &Option<Quantity>, path: &str) -> Result<Arrival> {
    match (half_life, at) {
        (Some(h), None) => Ok(Arrival::Poisson {
            half_life: h.hours(&format!("{path}.half_life"))?,
        }),
        (None, Some(t)) => Ok(Arrival::Once {
            at: t.hours(&format!("{path}.at"))?,
        }),
        _ => Err(Error::validation(path, "exactly one of `half_life` or `at` is required")),
    }
}

fn raw_arrival(a: &Arrival) -> (Option<Quantity>, Option<Quantity>) {
    match *a {
        Arrival::Poisson { half_life } => (Some(Quantity::from_hours(half_life)), None),
        Arrival::Once { at } => (None, Some(Quantity::from_hours(at))),
    }
}

fn schedule(raw: &Option<RawSchedule>, default: &TierSchedule, path: &str) -> Result<TierSchedule> {
    let err = |e: Error| Error::validation(path, e.to_string());
    match raw {
        None => Ok(default.clone()),
        Some(RawSchedule::Flat(p)) => TierSchedule::flat(*p).map_err(err),
        Some(RawSchedule::Tiers(tiers)) => TierSchedule::new(
            tiers
                .iter()
                .map(|t| Tier {
                    upper_gb: t.up_to_gb.unwrap_or(f64::INFINITY),
                    price: t.price,
                })
                .collect(),
        )
        .map_err(err),
    }
}

fn raw_schedule(s: &TierSchedule) -> RawSchedule {
    RawSchedule::Tiers(
        s.tiers()
            .iter()
            .map(|t| RawTier {
                up_to_gb: t.upper_gb.is_finite().then_some(t.upper_gb),
                price: t.price,
            })
            .collect(),
    )
}

impl RawScenario {
    fn into_scenario(self) -> Result<Scenario> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(Error::validation(
                "schema_version",
                format!("unsupported version {} (expected {SCHEMA_VERSION})", self.schema_version),
            ));
        }
        let size = match &self.documents.size {
            None => SizeDistribution::Constant(DEFAULT_DOC_SIZE),
            Some(RawSize::Constant(q)) => SizeDistribution::Constant(q.bytes("documents.size")?),
            Some(RawSize::Dist(RawSizeDist::Lognormal { median, sigma })) => SizeDistribution::LogNormal {
                median: median.bytes("documents.size.lognormal.median")?,
                sigma: *sigma,
            },
        };
        let documents = DocumentSpec {
            doc_count: self.documents.count,
            size,
            fragility: self.documents.fragility.unwrap_or(1.0),
        };
        let sector = SectorModel {
            block_half_life: self.sector.half_life.hours("sector.half_life")?,
            block_size: match &self.sector.block_size {
                None => DEFAULT_BLOCK_SIZE,
                Some(q) => q.bytes("sector.block_size")?,
            },
        };
        let glitches = self
            .glitches
            .iter()
            .enumerate()
            .map(|(i, g)| {
                let path = format!("glitches.{i}");
                Ok(GlitchModel {
                    arrival: arrival(&g.half_life, &g.at, &path)?,
                    duration: g.duration.hours(&format!("{path}.duration"))?,
                    multiplier: g.multiplier,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let server = match &self.server {
            None => ServerModel::IMMORTAL,
            Some(RawServer::Named(n)) if n == "immortal" => ServerModel::IMMORTAL,
            Some(RawServer::Named(n)) => {
                return Err(Error::validation("server", format!("unknown server model `{n}`")))
            }
            Some(RawServer::Model(m)) => ServerModel {
                lifetime_half_life: m.half_life.hours("server.half_life")?,
            },
        };
        let shocks = self
            .shocks
            .iter()
            .enumerate()
            .map(|(i, s)| {
                let path = format!("shocks.{i}");
                Ok(match s {
                    RawShock::Rate {
                        half_life,
                        at,
                        duration,
                        multiplier,
                        scope,
                    } => ShockModel::Rate {
                        arrival: arrival(half_life, at, &path)?,
                        duration: duration.hours(&format!("{path}.duration"))?,
                        multiplier: *multiplier,
                        scope: match scope {
                            RawScope::Named(n) if n == "all" => ShockScope::All,
                            RawScope::Named(n) => {
                                return Err(Error::validation(
                                    format!("{path}.scope"),
                                    format!("unknown scope `{n}`"),
                                ))
                            }
                            RawScope::Subset { subset } => ShockScope::Subset(*subset),
                        },
                    },
                    RawShock::Span { half_life, at, span } => ShockModel::Span {
                        arrival: arrival(half_life, at, &path)?,
                        span: *span,
                    },
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let documents_audit = match &self.audit.documents {
            None => DocAuditPolicy::NONE,
            Some(d) => DocAuditPolicy {
                cycle: match &d.cycle {
                    Some(q) => q.hours("audit.documents.cycle")?,
                    None if d.strategy == SamplingStrategy::None => f64::INFINITY,
                    None => return Err(Error::validation("audit.documents.cycle", "missing field")),
                },
                segments: d.segments,
                strategy: d.strategy,
                fixity: d.fixity,
            },
        };
        let probe = match &self.audit.probe {
            None => None,
            Some(p) => Some(ProbePolicy {
                interval: p.interval.hours("audit.probe.interval")?,
                probe_count: p.count,
            }),
        };
        let repair = RepairPolicy {
            repopulation_delay: match &self.repair.repopulation_delay {
                None => 0.0,
                Some(q) => q.hours("repair.repopulation_delay")?,
            },
        };
        let default_tariff = Tariff::default();
        let tariff = match &self.tariff {
            None => default_tariff,
            Some(t) => Tariff {
                storage: schedule(&t.storage, &default_tariff.storage, "tariff.storage")?,
                ingress: schedule(&t.ingress, &default_tariff.ingress, "tariff.ingress")?,
                egress: schedule(&t.egress, &default_tariff.egress, "tariff.egress")?,
            },
        };
        let scenario = Scenario {
            label: self.label,
            documents,
            target_copies: self.copies,
            sector,
            glitches,
            server,
            shocks,
            audit: AuditPolicy {
                documents: documents_audit,
                probe,
            },
            repair,
            tariff,
            horizon: self.horizon.hours("horizon")?,
        };
        scenario.validate()?;
        Ok(scenario)
    }

    fn from_scenario(s: &Scenario) -> Self {
        let size = match s.documents.size {
            SizeDistribution::Constant(b) => RawSize::Constant(Quantity::Number(b as f64)),
            SizeDistribution::LogNormal { median, sigma } => RawSize::Dist(RawSizeDist::Lognormal {
                median: Quantity::Number(median as f64),
                sigma,
            }),
        };
        let d = &s.audit.documents;
        RawScenario {
            schema_version: SCHEMA_VERSION,
            label: s.label.clone(),
            documents: RawDocuments {
                count: s.documents.doc_count,
                size: Some(size),
                fragility: Some(s.documents.fragility),
            },
            copies: s.target_copies,
            sector: RawSector {
                half_life: Quantity::from_hours(s.sector.block_half_life),
                block_size: Some(Quantity::Number(s.sector.block_size as f64)),
            },
            glitches: s
                .glitches
                .iter()
                .map(|g| {
                    let (half_life, at) = raw_arrival(&g.arrival);
                    RawGlitch {
                        half_life,
                        at,
                        duration: Quantity::from_hours(g.duration),
                        multiplier: g.multiplier,
                    }
                })
                .collect(),
            server: Some(RawServer::Model(RawServerModel {
                half_life: Quantity::from_hours(s.server.lifetime_half_life),
            })),
            shocks: s
                .shocks
                .iter()
                .map(|sh| match *sh {
                    ShockModel::Rate {
                        arrival,
                        duration,
                        multiplier,
                        scope,
                    } => {
                        let (half_life, at) = raw_arrival(&arrival);
                        RawShock::Rate {
                            half_life,
                            at,
                            duration: Quantity::from_hours(duration),
                            multiplier,
                            scope: match scope {
                                ShockScope::All => RawScope::Named("all".into()),
                                ShockScope::Subset(n) => RawScope::Subset { subset: n },
                            },
                        }
                    }
                    ShockModel::Span { arrival, span } => {
                        let (half_life, at) = raw_arrival(&arrival);
                        RawShock::Span { half_life, at, span }
                    }
                })
                .collect(),
            audit: RawAudit {
                documents: Some(RawDocAudit {
                    cycle: Some(Quantity::from_hours(d.cycle)),
                    segments: d.segments,
                    strategy: d.strategy,
                    fixity: d.fixity,
                }),
                probe: s.audit.probe.map(|p| RawProbe {
                    interval: Quantity::from_hours(p.interval),
                    count: p.probe_count,
                }),
            },
            repair: RawRepair {
                repopulation_delay: Some(Quantity::Number(s.repair.repopulation_delay)),
            },
            tariff: Some(RawTariff {
                storage: Some(raw_schedule(&s.tariff.storage)),
                ingress: Some(raw_schedule(&s.tariff.ingress)),
                egress: Some(raw_schedule(&s.tariff.egress)),
            }),
            horizon: Quantity::Number(s.horizon),
        }
    }
}

/// Parses and validates a scenario from its JSON text.
pub fn parse_scenario(text: &str) -> Result<Scenario> {
    let value: Value = serde_json::from_str(text).map_err(|e| Error::validation("$", e.to_string()))?;
    parse_scenario_value(value)
}

pub fn parse_scenario_value(value: Value) -> Result<Scenario> {
    let raw: RawScenario = serde_path_to_error::deserialize(value).map_err(|e| {
        let path = e.path().to_string();
        Error::validation(path, e.into_inner().to_string())
    })?;
    raw.into_scenario()
}

/// Canonical JSON form of a scenario.
pub fn normalized_value(scenario: &Scenario) -> Value {
    serde_json::to_value(RawScenario::from_scenario(scenario)).expect("scenario serializes")
}

/// Canonical, human-readable JSON text of a scenario.
pub fn normalize(scenario: &Scenario) -> String {
    let mut text = serde_json::to_string_pretty(&normalized_value(scenario)).expect("scenario serializes");
    text.push('\n');
    text
}

/// Replaces the value at a dotted path (`"sector.half_life"`,
/// `"shocks.0.span"`) in a scenario's JSON form. Missing object keys along
/// the way are created.
pub fn set_path(root: &mut Value, path: &str, new: Value) -> Result<()> {
    let mut cur = root;
    let parts: Vec<&str> = path.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        let last = i + 1 == parts.len();
        cur = match cur {
            Value::Object(map) => {
                if last {
                    map.insert(part.to_string(), new);
                    return Ok(());
                }
                map.entry(part.to_string()).or_insert_with(|| Value::Object(Default::default()))
            }
            Value::Array(items) => {
                let idx: usize = part
                    .parse()
                    .map_err(|_| Error::validation(path, format!("`{part}` is not an array index")))?;
                let len = items.len();
                let slot = items
                    .get_mut(idx)
                    .ok_or_else(|| Error::validation(path, format!("index {idx} out of range (len {len})")))?;
                if last {
                    *slot = new;
                    return Ok(());
                }
                slot
            }
            _ => return Err(Error::validation(path, format!("`{part}` does not name a field"))),
        };
    }
    Err(Error::validation(path, "empty path"))
}

/// Applies `path = value` to a scenario and re-validates the result.
pub fn with_override(base: &Scenario, path: &str, value: &Value) -> Result<Scenario> {
    let mut v = normalized_value(base);
    set_path(&mut v, path, value.clone())?;
    parse_scenario_value(v)
}

// ---- presets ----

/// Encryption keys kept as a small separate collection on their own set of
/// servers in a separate administrative domain: four copies, monthly
/// audit, negligible media risk, shock-dominated institutional risk.
pub fn preset_encryption_keys() -> Scenario {
    Scenario {
        label: "encryption-keys (separate administrative domain)".into(),
        documents: DocumentSpec {
            doc_count: 100,
            size: SizeDistribution::Constant(4096),
            fragility: 1.0,
        },
        target_copies: 4,
        sector: SectorModel::new(f64::INFINITY),
        glitches: Vec::new(),
        server: ServerModel {
            lifetime_half_life: 10.0 * HOURS_PER_METRIC_YEAR,
        },
        shocks: vec![
            ShockModel::Rate {
                arrival: Arrival::Poisson {
                    half_life: 7.0 * HOURS_PER_METRIC_YEAR,
                },
                duration: 2.0 * HOURS_PER_METRIC_YEAR,
                multiplier: 3.0,
                scope: ShockScope::All,
            },
            ShockModel::Span {
                arrival: Arrival::Poisson {
                    half_life: 10.0 * HOURS_PER_METRIC_YEAR,
                },
                span: 2,
            },
        ],
        audit: AuditPolicy {
            documents: DocAuditPolicy {
                cycle: HOURS_PER_MONTH,
                segments: 1,
                strategy: SamplingStrategy::Systematic,
                fixity: Fixity::Full,
            },
            probe: None,
        },
        repair: RepairPolicy::default(),
        tariff: Tariff::default(),
        horizon: 100.0 * HOURS_PER_METRIC_YEAR,
    }
}

/// Default half-life of a format reader, anchored to the support lifetime
/// of operating system releases.
pub const DEFAULT_READER_HALF_LIFE: Hours = 12.0 * HOURS_PER_METRIC_YEAR;

/// Format obsolescence as server failure: each server is an independent
/// reader of the format, its failure is the reader no longer running, and
/// an audit runs every reader against a test corpus (a liveness probe).
/// Media errors are ignored.
pub fn preset_format_obsolescence(
    reader_count: usize,
    reader_half_life: Hours,
    shock: Option<ShockModel>,
) -> Result<Scenario> {
    if reader_count == 0 {
        return Err(Error::validation("copies", "at least one reader is required"));
    }
    let scenario = Scenario {
        label: format!("format-obsolescence ({reader_count} readers)"),
        documents: DocumentSpec {
            doc_count: 100,
            size: SizeDistribution::Constant(DEFAULT_DOC_SIZE),
            fragility: 1.0,
        },
        target_copies: reader_count,
        sector: SectorModel::new(f64::INFINITY),
        glitches: Vec::new(),
        server: ServerModel {
            lifetime_half_life: reader_half_life,
        },
        shocks: shock.into_iter().collect(),
        audit: AuditPolicy {
            documents: DocAuditPolicy::NONE,
            probe: Some(ProbePolicy {
                interval: HOURS_PER_METRIC_YEAR,
                probe_count: DEFAULT_PROBE_COUNT,
            }),
        },
        repair: RepairPolicy::default(),
        tariff: Tariff::default(),
        horizon: 100.0 * HOURS_PER_METRIC_YEAR,
    };
    scenario.validate()?;
    Ok(scenario)
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"{
        "documents": {"count": 10000},
        "copies": 3,
        "sector": {"half_life": "100 Mh"},
        "horizon": "10 my"
    }"#;

    #[test]
    fn minimal_file_gets_defaults() {
        let s = parse_scenario(MINIMAL).unwrap();
        assert_eq!(s.documents.doc_count, 10_000);
        assert_eq!(s.documents.size, SizeDistribution::Constant(5 * 1_048_576));
        assert_eq!(s.documents.fragility, 1.0);
        assert_eq!(s.target_copies, 3);
        assert_eq!(s.sector.block_half_life, 1e8);
        assert_eq!(s.sector.block_size, 1_048_576);
        assert_eq!(s.horizon, 100_000.0);
        assert!(s.server.is_immortal());
        assert!(!s.audit.documents.enabled());
        assert_eq!(s.audit.probe, None);
        assert_eq!(s.repair.repopulation_delay, 0.0);
        assert_eq!(s.tariff, Tariff::default());
    }

    #[test]
    fn negative_half_life_is_rejected() {
        let text = MINIMAL.replace("100 Mh", "-5 Mh");
        let err = parse_scenario(&text).unwrap_err();
        assert!(matches!(&err, Error::Validation { path, .. } if path == "sector.half_life"), "{err}");
    }

    #[test]
    fn errors_name_the_path() {
        let text = MINIMAL.replace(r#""copies": 3,"#, r#""copies": 3, "colour": "red","#);
        let err = parse_scenario(&text).unwrap_err().to_string();
        assert!(err.contains("colour"), "{err}");

        let text = MINIMAL.replace(r#"{"count": 10000}"#, r#"{"count": 10000, "size": "5 MB"}"#);
        let err = parse_scenario(&text).unwrap_err().to_string();
        assert!(err.contains("documents.size"), "{err}");

        let text = MINIMAL.replace(r#""copies": 3,"#, "");
        let err = parse_scenario(&text).unwrap_err().to_string();
        assert!(err.contains("copies"), "{err}");

        let text = MINIMAL.replace(r#""copies": 3"#, r#""copies": 0"#);
        assert!(matches!(parse_scenario(&text), Err(Error::Validation { path, .. }) if path == "copies"));
    }

    #[test]
    fn full_file_round_trips() {
        let text = r#"{
            "schema_version": 1,
            "label": "everything",
            "documents": {"count": 50, "size": {"lognormal": {"median": "2 MiB", "sigma": 0.5}}, "fragility": 2},
            "copies": 5,
            "sector": {"half_life": "200 Mh", "block_size": "512 KiB"},
            "glitches": [
                {"half_life": "2 my", "duration": "100 h", "multiplier": 3},
                {"at": 0, "duration": "forever", "multiplier": 2}
            ],
            "server": {"half_life": "8 my"},
            "shocks": [
                {"kind": "rate", "half_life": "7 my", "duration": "1 my", "multiplier": 2, "scope": {"subset": 2}},
                {"kind": "span", "half_life": "5 my", "span": 2}
            ],
            "audit": {
                "documents": {"cycle": "1 my", "segments": 52, "strategy": "systematic", "fixity": "digest"},
                "probe": {"interval": "720 h", "count": 3}
            },
            "repair": {"repopulation_delay": "24 h"},
            "tariff": {
                "storage": [{"up_to_gb": 1024, "price": 0.02}, {"price": 0.01}],
                "ingress": 0,
                "egress": 0.09
            },
            "horizon": "30 my"
        }"#;
        let s = parse_scenario(text).unwrap();
        assert_eq!(s.glitches[1].arrival, Arrival::Once { at: 0.0 });
        assert!(s.glitches[1].duration.is_infinite());
        assert_eq!(s.audit.probe.unwrap().interval, 720.0);
        let again = parse_scenario(&normalize(&s)).unwrap();
        assert_eq!(again, s);
        assert_eq!(normalize(&again), normalize(&s));
    }

    #[test]
    fn overrides_edit_nested_fields() {
        let s = parse_scenario(MINIMAL).unwrap();
        let t = with_override(&s, "sector.half_life", &Value::from("1000 Mh")).unwrap();
        assert_eq!(t.sector.block_half_life, 1e9);
        let t = with_override(&s, "copies", &Value::from(5)).unwrap();
        assert_eq!(t.target_copies, 5);
        let t = with_override(&s, "audit.probe.interval", &Value::from("1 my")).unwrap();
        assert_eq!(t.audit.probe.unwrap().probe_count, DEFAULT_PROBE_COUNT);
        assert!(with_override(&s, "sector.colour", &Value::from(1)).is_err());
        assert!(with_override(&s, "shocks.0.span", &Value::from(1)).is_err());
        assert!(with_override(&s, "copies.x", &Value::from(1)).is_err());
    }

    #[test]
    fn encryption_key_preset() {
        let p = preset_encryption_keys();
        p.validate().unwrap();
        assert_eq!(p.target_copies, 4);
        assert_eq!(p.audit.documents.cycle, HOURS_PER_METRIC_YEAR / 12.0);
        assert_eq!(p.audit.documents.segments, 1);
        assert_eq!(p.sector.block_hazard(), 0.0);
        assert!(p.label.contains("administrative domain"));
        assert_eq!(parse_scenario(&normalize(&p)).unwrap(), p);
    }

    #[test]
    fn format_obsolescence_preset() {
        let p = preset_format_obsolescence(5, DEFAULT_READER_HALF_LIFE, None).unwrap();
        assert_eq!(p.target_copies, 5);
        assert_eq!(p.server.lifetime_half_life, 120_000.0);
        assert_eq!(p.sector.block_hazard(), 0.0);
        assert!(p.glitches.is_empty());
        assert!(p.audit.probe.is_some());
        assert_eq!(parse_scenario(&normalize(&p)).unwrap(), p);
        assert!(preset_format_obsolescence(0, DEFAULT_READER_HALF_LIFE, None).is_err());
        let shock = ShockModel::Span {
            arrival: Arrival::Poisson { half_life: 1e5 },
            span: 2,
        };
        let p = preset_format_obsolescence(3, DEFAULT_READER_HALF_LIFE, Some(shock)).unwrap();
        assert_eq!(p.shocks, vec![shock]);
    }
}
