//! Case, feeder and loadshape files, and CSV result artifacts.
//!
//! Case and feeder files are TOML documents (`.td`); loadshapes are two-column
//! CSV. Every parse error carries a 1-based line:column location. The schemas
//! are described in `docs/formats.md`.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;
use toml::Spanned;

use crate::cosim::{ComparisonRow, CosimResult, UnbalanceTable};
use crate::dsolve::{Feeder, FeederError, FeederLine, NodeId, PhaseLoad, Phases};
use crate::netmodel::{
    Branch, Bus, BusId, BusKind, CostCurve, Generator, LoadAttachment, LoadKind, TransmissionCase,
    Units, ZeroSeqPath,
};

pub const SCHEMA_VERSION: &str = "1";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Syntax,
    Schema,
    Reference,
    Radiality,
    Contiguity,
}

impl fmt::Display for ErrorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ErrorKind::Syntax => "syntax error",
            ErrorKind::Schema => "schema violation",
            ErrorKind::Reference => "dangling reference",
            ErrorKind::Radiality => "radiality violation",
            ErrorKind::Contiguity => "contiguity error",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("{line}:{column}: {kind}: {message}")]
pub struct ParseError {
    pub kind: ErrorKind,
    pub line: usize,
    pub column: usize,
    pub message: String,
}

impl ParseError {
    fn at(text: &str, offset: usize, kind: ErrorKind, message: impl Into<String>) -> Self {
        let (line, column) = line_col(text, offset);
        ParseError {
            kind,
            line,
            column,
            message: message.into(),
        }
    }
}

fn line_col(text: &str, offset: usize) -> (usize, usize) {
    let mut offset = offset.min(text.len());
    while !text.is_char_boundary(offset) {
        offset -= 1;
    }
    let before = &text[..offset];
    let line = before.matches('\n').count() + 1;
    let start = before.rfind('\n').map_or(0, |i| i + 1);
    (line, before[start..].chars().count() + 1)
}

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{}: {message}", .path.display())]
    Read { path: PathBuf, message: String },
    #[error("{}:{error}", .path.display())]
    Parse { path: PathBuf, error: ParseError },
    #[error("cannot write {}: {message}", .path.display())]
    Write { path: PathBuf, message: String },
}

/// Deserialize TOML, separating syntax errors from schema errors.
fn from_toml<'de, T: Deserialize<'de>>(text: &'de str) -> Result<T, ParseError> {
    if text.trim().is_empty() {
        return Err(ParseError {
            kind: ErrorKind::Syntax,
            line: 1,
            column: 1,
            message: "empty document".into(),
        });
    }
    if let Err(e) = text.parse::<toml::Table>() {
        let offset = e.span().map_or(0, |s| s.start);
        return Err(ParseError::at(
            text,
            offset,
            ErrorKind::Syntax,
            e.message().trim(),
        ));
    }
    toml::from_str(text).map_err(|e| {
        let offset = e.span().map_or(0, |s| s.start);
        ParseError::at(text, offset, ErrorKind::Schema, e.message().trim())
    })
}

type C2 = [f64; 2];

fn cx(v: C2) -> Complex64 {
    Complex64::new(v[0], v[1])
}

fn c2(z: Complex64) -> C2 {
    [z.re, z.im]
}

fn sp<T>(value: T) -> Spanned<T> {
    Spanned::new(0..0, value)
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawCase {
    schema_version: Spanned<String>,
    base_mva: Spanned<f64>,
    #[serde(default)]
    bus: Vec<RawBus>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    branch: Vec<RawBranch>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    generator: Vec<RawGenerator>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    load: Vec<RawLoad>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pcc: Vec<RawPcc>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
enum RawKind {
    Slack,
    Pv,
    Pq,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawBus {
    id: Spanned<BusId>,
    kind: RawKind,
    base_kv: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    v_setpoint: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    angle_rad: Option<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
enum RawZeroSeq {
    Open,
    Grounded,
    Through,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawBranch {
    from: Spanned<BusId>,
    to: Spanned<BusId>,
    z1: C2,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    z2: Option<C2>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    z0: Option<C2>,
    #[serde(default)]
    b1: f64,
    #[serde(default)]
    b0: f64,
    #[serde(default = "one")]
    tap: f64,
    #[serde(default = "through")]
    zero_seq_path: RawZeroSeq,
    #[serde(default)]
    untransposed: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    coupling: Option<Spanned<Vec<Vec<C2>>>>,
}

fn one() -> f64 {
    1.0
}

fn through() -> RawZeroSeq {
    RawZeroSeq::Through
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawCost {
    a: f64,
    b: f64,
    #[serde(default)]
    c: f64,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawGenerator {
    bus: Spanned<BusId>,
    p_min_mw: f64,
    p_max_mw: f64,
    q_min_mvar: f64,
    q_max_mvar: f64,
    cost: RawCost,
    #[serde(default)]
    p_set_mw: f64,
    #[serde(default)]
    q_set_mvar: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    z2: Option<C2>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    z0: Option<C2>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawLoad {
    bus: Spanned<BusId>,
    p_mw: f64,
    q_mvar: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    loadshape: Option<String>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawPcc {
    bus: Spanned<BusId>,
    feeder: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    loadshape: Option<String>,
}

/// A feeder bound to a transmission bus. `path` is relative to the case file.
#[derive(Debug, Clone, PartialEq)]
pub struct FeederBinding {
    pub bus: BusId,
    pub path: String,
    pub loadshape: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CaseDocument {
    pub schema_version: String,
    /// Powers in MW/MVAr. Feeder attachments appear as `LoadKind::Feeder(path)`.
    pub case: TransmissionCase,
    pub feeder_attachments: Vec<FeederBinding>,
}

fn check_version(text: &str, v: &Spanned<String>) -> Result<(), ParseError> {
    if v.get_ref() != SCHEMA_VERSION {
        return Err(ParseError::at(
            text,
            v.span().start,
            ErrorKind::Schema,
            format!(
                "unsupported schema_version '{}' (expected '{SCHEMA_VERSION}')",
                v.get_ref()
            ),
        ));
    }
    Ok(())
}

pub fn parse_case(text: &str) -> Result<CaseDocument, ParseError> {
    let raw: RawCase = from_toml(text)?;
    check_version(text, &raw.schema_version)?;

    let mut ids = BTreeSet::new();
    let mut buses = Vec::with_capacity(raw.bus.len());
    for b in raw.bus {
        let id = *b.id.get_ref();
        if !ids.insert(id) {
            return Err(ParseError::at(
                text,
                b.id.span().start,
                ErrorKind::Schema,
                format!("duplicate bus id {id}"),
            ));
        }
        buses.push(Bus {
            id,
            kind: match b.kind {
                RawKind::Slack => BusKind::Slack,
                RawKind::Pv => BusKind::Pv,
                RawKind::Pq => BusKind::Pq,
            },
            base_kv: b.base_kv,
            v_setpoint: b.v_setpoint,
            angle_setpoint: b.angle_rad,
        });
    }
    let known = |id: &Spanned<BusId>, what: &str| -> Result<BusId, ParseError> {
        if ids.contains(id.get_ref()) {
            Ok(*id.get_ref())
        } else {
            Err(ParseError::at(
                text,
                id.span().start,
                ErrorKind::Reference,
                format!("{what} references unknown bus {}", id.get_ref()),
            ))
        }
    };

    let mut branches = Vec::with_capacity(raw.branch.len());
    for br in raw.branch {
        let from = known(&br.from, "branch")?;
        let to = known(&br.to, "branch")?;
        let coupling = match br.coupling {
            None => None,
            Some(block) => {
                let rows = block.get_ref();
                if rows.len() != 3 || rows.iter().any(|r| r.len() != 3) {
                    return Err(ParseError::at(
                        text,
                        block.span().start,
                        ErrorKind::Schema,
                        "coupling must be a 3x3 array of [re, im]",
                    ));
                }
                Some(std::array::from_fn(|i| {
                    std::array::from_fn(|j| cx(rows[i][j]))
                }))
            }
        };
        let z1 = cx(br.z1);
        branches.push(Branch {
            from,
            to,
            z1,
            z2: br.z2.map_or(z1, cx),
            z0: br.z0.map_or(z1, cx),
            b1_shunt: br.b1,
            b0_shunt: br.b0,
            tap: br.tap,
            zero_seq_path: match br.zero_seq_path {
                RawZeroSeq::Open => ZeroSeqPath::Open,
                RawZeroSeq::Grounded => ZeroSeqPath::Grounded,
                RawZeroSeq::Through => ZeroSeqPath::Through,
            },
            untransposed: br.untransposed,
            coupling,
        });
    }

    let mut generators = Vec::with_capacity(raw.generator.len());
    for g in raw.generator {
        generators.push(Generator {
            bus: known(&g.bus, "generator")?,
            p_min: g.p_min_mw,
            p_max: g.p_max_mw,
            q_min: g.q_min_mvar,
            q_max: g.q_max_mvar,
            cost: CostCurve {
                a: g.cost.a,
                b: g.cost.b,
                c: g.cost.c,
            },
            p_set: g.p_set_mw,
            q_set: g.q_set_mvar,
            z2: g.z2.map(cx),
            z0: g.z0.map(cx),
        });
    }

    let mut loads = Vec::new();
    for l in raw.load {
        loads.push(LoadAttachment {
            bus: known(&l.bus, "load")?,
            kind: LoadKind::Lumped {
                p: l.p_mw,
                q: l.q_mvar,
            },
            loadshape: l.loadshape,
        });
    }
    let mut feeder_attachments = Vec::new();
    let mut pcc_seen = BTreeSet::new();
    for p in raw.pcc {
        let bus = known(&p.bus, "pcc")?;
        if !pcc_seen.insert(bus) {
            return Err(ParseError::at(
                text,
                p.bus.span().start,
                ErrorKind::Schema,
                format!("bus {bus} has more than one feeder attached"),
            ));
        }
        loads.push(LoadAttachment {
            bus,
            kind: LoadKind::Feeder(p.feeder.clone()),
            loadshape: p.loadshape.clone(),
        });
        feeder_attachments.push(FeederBinding {
            bus,
            path: p.feeder,
            loadshape: p.loadshape,
        });
    }

    Ok(CaseDocument {
        schema_version: raw.schema_version.into_inner(),
        case: TransmissionCase {
            base_mva: *raw.base_mva.get_ref(),
            units: Units::Physical,
            buses,
            branches,
            generators,
            loads,
        },
        feeder_attachments,
    })
}

/// Serialize a document. Powers are written in MW/MVAr whatever the case's units.
pub fn serialize_case(doc: &CaseDocument) -> String {
    let case = crate::netmodel::to_physical(&doc.case).unwrap_or_else(|_| doc.case.clone());
    let raw = RawCase {
        schema_version: sp(doc.schema_version.clone()),
        base_mva: sp(case.base_mva),
        bus: case
            .buses
            .iter()
            .map(|b| RawBus {
                id: sp(b.id),
                kind: match b.kind {
                    BusKind::Slack => RawKind::Slack,
                    BusKind::Pv => RawKind::Pv,
                    BusKind::Pq => RawKind::Pq,
                },
                base_kv: b.base_kv,
                v_setpoint: b.v_setpoint,
                angle_rad: b.angle_setpoint,
            })
            .collect(),
        branch: case
            .branches
            .iter()
            .map(|br| RawBranch {
                from: sp(br.from),
                to: sp(br.to),
                z1: c2(br.z1),
                z2: Some(c2(br.z2)),
                z0: Some(c2(br.z0)),
                b1: br.b1_shunt,
                b0: br.b0_shunt,
                tap: br.tap,
                zero_seq_path: match br.zero_seq_path {
                    ZeroSeqPath::Open => RawZeroSeq::Open,
                    ZeroSeqPath::Grounded => RawZeroSeq::Grounded,
                    ZeroSeqPath::Through => RawZeroSeq::Through,
                },
                untransposed: br.untransposed,
                coupling: br.coupling.map(|b| {
                    sp(b.iter()
                        .map(|row| row.iter().map(|z| c2(*z)).collect())
                        .collect())
                }),
            })
            .collect(),
        generator: case
            .generators
            .iter()
            .map(|g| RawGenerator {
                bus: sp(g.bus),
                p_min_mw: g.p_min,
                p_max_mw: g.p_max,
                q_min_mvar: g.q_min,
                q_max_mvar: g.q_max,
                cost: RawCost {
                    a: g.cost.a,
                    b: g.cost.b,
                    c: g.cost.c,
                },
                p_set_mw: g.p_set,
                q_set_mvar: g.q_set,
                z2: g.z2.map(c2),
                z0: g.z0.map(c2),
            })
            .collect(),
        load: case
            .loads
            .iter()
            .filter_map(|l| match l.kind {
                LoadKind::Lumped { p, q } => Some(RawLoad {
                    bus: sp(l.bus),
                    p_mw: p,
                    q_mvar: q,
                    loadshape: l.loadshape.clone(),
                }),
                LoadKind::Feeder(_) => None,
            })
            .collect(),
        pcc: doc
            .feeder_attachments
            .iter()
            .map(|f| RawPcc {
                bus: sp(f.bus),
                feeder: f.path.clone(),
                loadshape: f.loadshape.clone(),
            })
            .collect(),
    };
    toml::to_string(&raw).expect("case documents always serialize")
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawFeeder {
    schema_version: Spanned<String>,
    id: String,
    base_kv: Spanned<f64>,
    base_mva: f64,
    head: NodeId,
    #[serde(default)]
    line: Vec<RawLine>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    load: Vec<RawPhaseLoad>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawLine {
    from: Spanned<NodeId>,
    to: NodeId,
    phases: Spanned<String>,
    length: f64,
    /// k×k impedance per unit length over the listed phases.
    z: Spanned<Vec<Vec<C2>>>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawPhaseLoad {
    node: Spanned<NodeId>,
    phases: Spanned<String>,
    p_mw: Vec<f64>,
    q_mvar: Vec<f64>,
}

fn parse_phases(text: &str, s: &Spanned<String>) -> Result<Phases, ParseError> {
    Phases::parse(s.get_ref()).ok_or_else(|| {
        ParseError::at(
            text,
            s.span().start,
            ErrorKind::Schema,
            format!("bad phase list '{}' (use letters a, b, c)", s.get_ref()),
        )
    })
}

pub fn parse_feeder(text: &str) -> Result<Feeder, ParseError> {
    let raw: RawFeeder = from_toml(text)?;
    check_version(text, &raw.schema_version)?;
    if !(*raw.base_kv.get_ref() > 0.0 && raw.base_mva > 0.0) {
        return Err(ParseError::at(
            text,
            raw.base_kv.span().start,
            ErrorKind::Schema,
            "base_kv and base_mva must be positive",
        ));
    }

    let mut lines = Vec::with_capacity(raw.line.len());
    let mut line_at = Vec::with_capacity(raw.line.len());
    for l in &raw.line {
        let phases = parse_phases(text, &l.phases)?;
        let k = phases.count();
        let z = l.z.get_ref();
        if z.len() != k || z.iter().any(|r| r.len() != k) {
            return Err(ParseError::at(
                text,
                l.z.span().start,
                ErrorKind::Schema,
                format!("impedance must be {k}x{k} for phases '{phases}'"),
            ));
        }
        let mut m = [[Complex64::new(0.0, 0.0); 3]; 3];
        for (r, pr) in phases.indices().enumerate() {
            for (c, pc) in phases.indices().enumerate() {
                m[pr][pc] = cx(z[r][c]);
            }
        }
        lines.push(FeederLine {
            from: *l.from.get_ref(),
            to: l.to,
            phases,
            length: l.length,
            z_per_length: m,
        });
        line_at.push(l.from.span().start);
    }

    let mut loads = Vec::with_capacity(raw.load.len());
    let mut load_at = Vec::with_capacity(raw.load.len());
    for l in &raw.load {
        let phases = parse_phases(text, &l.phases)?;
        let k = phases.count();
        if l.p_mw.len() != k || l.q_mvar.len() != k {
            return Err(ParseError::at(
                text,
                l.phases.span().start,
                ErrorKind::Schema,
                format!("load needs {k} p_mw and q_mvar entries for phases '{phases}'"),
            ));
        }
        let mut s = [Complex64::new(0.0, 0.0); 3];
        for (j, p) in phases.indices().enumerate() {
            s[p] = Complex64::new(l.p_mw[j], l.q_mvar[j]);
        }
        loads.push(PhaseLoad {
            node: *l.node.get_ref(),
            phases,
            s,
        });
        load_at.push(l.node.span().start);
    }

    let feeder = Feeder {
        id: raw.id,
        base_kv: *raw.base_kv.get_ref(),
        base_mva: raw.base_mva,
        head: raw.head,
        lines,
        loads,
    };
    if let Err(e) = feeder.topology() {
        let (offset, kind) = match &e {
            FeederError::Loop { line, .. } => (line_at[*line], ErrorKind::Radiality),
            FeederError::PhaseNotUpstream { line, .. } | FeederError::BadImpedance { line } => {
                (line_at[*line], ErrorKind::Schema)
            }
            FeederError::UnknownLoadNode(node) => (
                load_at[feeder
                    .loads
                    .iter()
                    .position(|l| l.node == *node)
                    .unwrap_or(0)],
                ErrorKind::Reference,
            ),
            FeederError::LoadPhase { node, .. } => (
                load_at[feeder
                    .loads
                    .iter()
                    .position(|l| l.node == *node)
                    .unwrap_or(0)],
                ErrorKind::Schema,
            ),
            FeederError::Disconnected(_) => (0, ErrorKind::Radiality),
            _ => (0, ErrorKind::Schema),
        };
        return Err(ParseError::at(text, offset, kind, e.to_string()));
    }
    Ok(feeder)
}

pub fn serialize_feeder(feeder: &Feeder) -> String {
    let raw = RawFeeder {
        schema_version: sp(SCHEMA_VERSION.to_string()),
        id: feeder.id.clone(),
        base_kv: sp(feeder.base_kv),
        base_mva: feeder.base_mva,
        head: feeder.head,
        line: feeder
            .lines
            .iter()
            .map(|l| RawLine {
                from: sp(l.from),
                to: l.to,
                phases: sp(l.phases.to_string()),
                length: l.length,
                z: sp(l
                    .phases
                    .indices()
                    .map(|r| {
                        l.phases
                            .indices()
                            .map(|c| c2(l.z_per_length[r][c]))
                            .collect()
                    })
                    .collect()),
            })
            .collect(),
        load: feeder
            .loads
            .iter()
            .map(|l| RawPhaseLoad {
                node: sp(l.node),
                phases: sp(l.phases.to_string()),
                p_mw: l.phases.indices().map(|p| l.s[p].re).collect(),
                q_mvar: l.phases.indices().map(|p| l.s[p].im).collect(),
            })
            .collect(),
    };
    toml::to_string(&raw).expect("feeder documents always serialize")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DocumentKind {
    Case,
    Feeder,
}

/// Guess whether a `.td` document is a case or a feeder. `None` if it is not TOML.
pub fn document_kind(text: &str) -> Option<DocumentKind> {
    let table = text.parse::<toml::Table>().ok()?;
    Some(if table.contains_key("head") {
        DocumentKind::Feeder
    } else {
        DocumentKind::Case
    })
}

/// Per-minute load multipliers starting at `start_minute`.
#[derive(Debug, Clone, PartialEq)]
pub struct LoadshapeSeries {
    pub id: String,
    pub start_minute: u32,
    pub samples: Vec<f64>,
}

impl LoadshapeSeries {
    pub fn flat(id: &str, minutes: usize) -> Self {
        LoadshapeSeries {
            id: id.to_string(),
            start_minute: 0,
            samples: vec![1.0; minutes],
        }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn at(&self, minute: u32) -> Option<f64> {
        let k = minute.checked_sub(self.start_minute)? as usize;
        self.samples.get(k).copied()
    }
}

/// Two columns, `minute,multiplier`, with an optional header row.
pub fn parse_loadshape(id: &str, text: &str) -> Result<LoadshapeSeries, ParseError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .flexible(true)
        .from_reader(text.as_bytes());
    let mut start = None;
    let mut samples = Vec::new();
    let err = |row: usize, kind: ErrorKind, message: String| ParseError {
        kind,
        line: row,
        column: 1,
        message,
    };
    for (k, record) in reader.records().enumerate() {
        let record = record.map_err(|e| {
            let row = e.position().map_or(1, |p| p.line() as usize);
            err(row, ErrorKind::Syntax, e.to_string())
        })?;
        let row = record.position().map_or(k + 1, |p| p.line() as usize);
        if record.len() == 1 && record[0].is_empty() {
            continue;
        }
        if record.len() != 2 {
            return Err(err(
                row,
                ErrorKind::Schema,
                format!("expected 2 columns, found {}", record.len()),
            ));
        }
        let minute = record[0].parse::<u32>();
        let value = record[1].parse::<f64>();
        let (minute, value) = match (minute, value) {
            (Ok(m), Ok(v)) => (m, v),
            _ if k == 0 && start.is_none() => continue,
            _ => {
                return Err(err(
                    row,
                    ErrorKind::Schema,
                    format!(
                        "expected a minute and a multiplier, found '{}', '{}'",
                        &record[0], &record[1]
                    ),
                ))
            }
        };
        if !(value.is_finite() && value >= 0.0) {
            return Err(err(
                row,
                ErrorKind::Schema,
                format!("multiplier {value} must be finite and non-negative"),
            ));
        }
        match start {
            None => start = Some(minute),
            Some(s) => {
                let expected = s + samples.len() as u32;
                if minute != expected {
                    return Err(err(
                        row,
                        ErrorKind::Contiguity,
                        format!("expected minute {expected}, found {minute}"),
                    ));
                }
            }
        }
        samples.push(value);
    }
    let Some(start_minute) = start else {
        return Err(err(1, ErrorKind::Syntax, "loadshape has no samples".into()));
    };
    Ok(LoadshapeSeries {
        id: id.to_string(),
        start_minute,
        samples,
    })
}

fn read(path: &Path) -> Result<String, IoError> {
    fs::read_to_string(path).map_err(|e| IoError::Read {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

fn with_path<T>(path: &Path, r: Result<T, ParseError>) -> Result<T, IoError> {
    r.map_err(|error| IoError::Parse {
        path: path.to_path_buf(),
        error,
    })
}

pub fn load_case(path: &Path) -> Result<CaseDocument, IoError> {
    let text = read(path)?;
    with_path(path, parse_case(&text))
}

pub fn load_feeder(path: &Path) -> Result<Feeder, IoError> {
    let text = read(path)?;
    with_path(path, parse_feeder(&text))
}

/// Loadshape whose id is the file stem.
pub fn load_loadshape(path: &Path) -> Result<LoadshapeSeries, IoError> {
    let text = read(path)?;
    let id = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    with_path(path, parse_loadshape(&id, &text))
}

/// Case plus every feeder it references, keyed by PCC bus. Feeder paths are
/// resolved against the case file's directory.
pub fn load_case_with_feeders(
    path: &Path,
) -> Result<(CaseDocument, BTreeMap<BusId, Feeder>), IoError> {
    let doc = load_case(path)?;
    let dir = path.parent().unwrap_or(Path::new("."));
    let mut feeders = BTreeMap::new();
    for b in &doc.feeder_attachments {
        feeders.insert(b.bus, load_feeder(&dir.join(&b.path))?);
    }
    Ok((doc, feeders))
}

fn write_file(dir: &Path, name: &str, contents: &str) -> Result<PathBuf, IoError> {
    let path = dir.join(name);
    fs::create_dir_all(dir)
        .and_then(|_| fs::write(&path, contents))
        .map_err(|e| IoError::Write {
            path: path.clone(),
            message: e.to_string(),
        })?;
    Ok(path)
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// `pcc_voltages.csv`, `coupling_trace.csv` and `dispatch.csv`.
pub fn write_results(result: &CosimResult, dir: &Path) -> Result<Vec<PathBuf>, IoError> {
    let mut volts = String::from("minute,pcc,phase,v_transmission,v_distribution\n");
    let mut trace = String::from(
        "minute,pcc,iteration,v_transmission_a,v_transmission_b,v_transmission_c,\
         v_distribution_a,v_distribution_b,v_distribution_c,mismatch\n",
    );
    let mut dispatch = String::from("minute,generator,bus,p_mw,lambda\n");
    for step in &result.steps {
        for pcc in &step.pcc {
            let vt = pcc.v_transmission.magnitudes();
            let vd = pcc.v_distribution.map(|v| v.magnitudes());
            for (k, phase) in ["a", "b", "c"].iter().enumerate() {
                volts.push_str(&format!(
                    "{},{},{},{},{}\n",
                    step.minute,
                    pcc.bus,
                    phase,
                    vt[k],
                    opt(vd.map(|v| v[k]))
                ));
            }
        }
        for e in &step.trace.entries {
            let n = step
                .trace
                .per_pcc_iterations
                .get(&e.pcc)
                .copied()
                .unwrap_or(usize::MAX);
            if e.iteration > n {
                continue;
            }
            let vt = e.v_transmission;
            let vd = e.v_distribution;
            trace.push_str(&format!(
                "{},{},{},{},{},{},{},{},{},{}\n",
                step.minute,
                e.pcc,
                e.iteration,
                vt[0],
                vt[1],
                vt[2],
                opt(vd.map(|v| v[0])),
                opt(vd.map(|v| v[1])),
                opt(vd.map(|v| v[2])),
                opt(e.mismatch)
            ));
        }
        if step.dispatched {
            for (g, (p, bus)) in step
                .dispatch
                .p_set
                .iter()
                .zip(&step.dispatch.buses)
                .enumerate()
            {
                dispatch.push_str(&format!(
                    "{},{},{},{},{}\n",
                    step.minute, g, bus, p, step.dispatch.lambda
                ));
            }
        }
    }
    Ok(vec![
        write_file(dir, "pcc_voltages.csv", &volts)?,
        write_file(dir, "coupling_trace.csv", &trace)?,
        write_file(dir, "dispatch.csv", &dispatch)?,
    ])
}

/// `convergence_table.csv`: α, one column per PCC, overall N.
pub fn write_convergence_table(table: &UnbalanceTable, dir: &Path) -> Result<PathBuf, IoError> {
    let mut out = String::from("alpha");
    for p in &table.pccs {
        out.push_str(&format!(",n_bus{p}"));
    }
    out.push_str(",overall\n");
    for row in &table.rows {
        out.push_str(&row.alpha.to_string());
        for n in &row.per_pcc {
            out.push(',');
            out.push_str(&n.map(|n| n.to_string()).unwrap_or_default());
        }
        out.push(',');
        out.push_str(&row.overall.map(|n| n.to_string()).unwrap_or_default());
        out.push('\n');
    }
    write_file(dir, "convergence_table.csv", &out)
}

/// `comparison.csv`: coupled and decoupled PCC voltage per minute and phase.
pub fn write_comparison(rows: &[ComparisonRow], dir: &Path) -> Result<PathBuf, IoError> {
    let mut out = String::from("minute,pcc,phase,v_coupled,v_decoupled\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            r.minute,
            r.pcc,
            r.phase.letter().to_ascii_lowercase(),
            r.coupled,
            r.decoupled
        ));
    }
    write_file(dir, "comparison.csv", &out)
}
