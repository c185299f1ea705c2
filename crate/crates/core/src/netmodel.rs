//! Transmission network data model, per-unit normalization and case checks.
//!
//! Branch impedances and shunts are always per-unit on `base_mva`. Powers
//! (loads, generator limits and setpoints) are in MW/MVAr while a case is
//! [`Units::Physical`] and per-unit after [`to_per_unit`].

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;

use num_complex::Complex64;
use thiserror::Error;

pub type BusId = u32;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BusKind {
    Slack,
    Pv,
    Pq,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Bus {
    pub id: BusId,
    pub kind: BusKind,
    pub base_kv: f64,
    pub v_setpoint: Option<f64>,
    pub angle_setpoint: Option<f64>,
}

impl Bus {
    pub fn pq(id: BusId, base_kv: f64) -> Self {
        Bus {
            id,
            kind: BusKind::Pq,
            base_kv,
            v_setpoint: None,
            angle_setpoint: None,
        }
    }

    pub fn pv(id: BusId, base_kv: f64, v: f64) -> Self {
        Bus {
            id,
            kind: BusKind::Pv,
            base_kv,
            v_setpoint: Some(v),
            angle_setpoint: None,
        }
    }

    pub fn slack(id: BusId, base_kv: f64, v: f64, angle: f64) -> Self {
        Bus {
            id,
            kind: BusKind::Slack,
            base_kv,
            v_setpoint: Some(v),
            angle_setpoint: Some(angle),
        }
    }
}

/// Zero-sequence behaviour of a branch.
///
/// `Grounded` models a delta / grounded-wye transformer with the grounded
/// winding on the `to` side: zero-sequence current flows from the `to` bus
/// to ground through `z0` and the `from` side is isolated.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ZeroSeqPath {
    Open,
    Grounded,
    Through,
}

/// Off-diagonal sequence coupling of an untransposed line, as a 3×3 block of
/// the branch's series sequence admittance matrix (rows/cols ordered 0,1,2).
/// The diagonal is carried by `z0`, `z1`, `z2` and must be zero here.
pub type CouplingBlock = [[Complex64; 3]; 3];

#[derive(Debug, Clone, PartialEq)]
pub struct Branch {
    pub from: BusId,
    pub to: BusId,
    pub z1: Complex64,
    pub z2: Complex64,
    pub z0: Complex64,
    pub b1_shunt: f64,
    pub b0_shunt: f64,
    pub tap: f64,
    pub zero_seq_path: ZeroSeqPath,
    pub untransposed: bool,
    pub coupling: Option<CouplingBlock>,
}

impl Branch {
    /// Transposed line with `z2 = z0 = z1`, no charging, unity tap.
    pub fn new(from: BusId, to: BusId, z1: Complex64) -> Self {
        Branch {
            from,
            to,
            z1,
            z2: z1,
            z0: z1,
            b1_shunt: 0.0,
            b0_shunt: 0.0,
            tap: 1.0,
            zero_seq_path: ZeroSeqPath::Through,
            untransposed: false,
            coupling: None,
        }
    }
}

/// Quadratic cost `a·P² + b·P + c` with P in MW.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CostCurve {
    pub a: f64,
    pub b: f64,
    pub c: f64,
}

impl CostCurve {
    pub fn marginal(&self, p_mw: f64) -> f64 {
        2.0 * self.a * p_mw + self.b
    }

    pub fn evaluate(&self, p_mw: f64) -> f64 {
        self.a * p_mw * p_mw + self.b * p_mw + self.c
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Generator {
    pub bus: BusId,
    pub p_min: f64,
    pub p_max: f64,
    pub q_min: f64,
    pub q_max: f64,
    pub cost: CostCurve,
    pub p_set: f64,
    pub q_set: f64,
    /// Machine negative-sequence impedance to ground (pu), if modelled.
    pub z2: Option<Complex64>,
    /// Machine zero-sequence impedance to ground (pu), if solidly grounded.
    pub z0: Option<Complex64>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum LoadKind {
    Lumped { p: f64, q: f64 },
    Feeder(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct LoadAttachment {
    pub bus: BusId,
    pub kind: LoadKind,
    pub loadshape: Option<String>,
}

impl LoadAttachment {
    pub fn is_feeder(&self) -> bool {
        matches!(self.kind, LoadKind::Feeder(_))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Units {
    Physical,
    PerUnit,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TransmissionCase {
    pub base_mva: f64,
    pub units: Units,
    pub buses: Vec<Bus>,
    pub branches: Vec<Branch>,
    pub generators: Vec<Generator>,
    pub loads: Vec<LoadAttachment>,
}

impl TransmissionCase {
    /// Map from bus id to its position in `buses`.
    pub fn bus_index(&self) -> HashMap<BusId, usize> {
        self.buses
            .iter()
            .enumerate()
            .map(|(i, b)| (b.id, i))
            .collect()
    }

    pub fn slack_bus(&self) -> Option<&Bus> {
        self.buses.iter().find(|b| b.kind == BusKind::Slack)
    }

    /// Buses carrying a feeder attachment, in ascending order.
    pub fn pcc_buses(&self) -> Vec<BusId> {
        let set: BTreeSet<BusId> = self
            .loads
            .iter()
            .filter(|l| l.is_feeder())
            .map(|l| l.bus)
            .collect();
        set.into_iter().collect()
    }

    /// Replace whatever is attached at `bus` with a feeder.
    pub fn attach_feeder(&mut self, bus: BusId, feeder_id: &str, loadshape: Option<String>) {
        let keep_shape = self
            .loads
            .iter()
            .find(|l| l.bus == bus)
            .and_then(|l| l.loadshape.clone());
        self.loads.retain(|l| l.bus != bus);
        self.loads.push(LoadAttachment {
            bus,
            kind: LoadKind::Feeder(feeder_id.to_string()),
            loadshape: loadshape.or(keep_shape),
        });
        self.loads.sort_by_key(|l| l.bus);
    }

    /// Sum of lumped loads in the case's units.
    pub fn lumped_demand(&self) -> Complex64 {
        self.loads
            .iter()
            .filter_map(|l| match l.kind {
                LoadKind::Lumped { p, q } => Some(Complex64::new(p, q)),
                LoadKind::Feeder(_) => None,
            })
            .sum()
    }

    fn power_scale(&self, factor: f64) -> TransmissionCase {
        let mut out = self.clone();
        for g in &mut out.generators {
            g.p_min *= factor;
            g.p_max *= factor;
            g.q_min *= factor;
            g.q_max *= factor;
            g.p_set *= factor;
            g.q_set *= factor;
        }
        for l in &mut out.loads {
            if let LoadKind::Lumped { p, q } = &mut l.kind {
                *p *= factor;
                *q *= factor;
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    NonPositiveBaseMva(f64),
    NoSlack,
    MultipleSlack(Vec<BusId>),
    DuplicateBus(BusId),
    NonPositiveBaseKv { bus: BusId, base_kv: f64 },
    BadSetpoint { bus: BusId },
    SelfLoop { branch: usize, bus: BusId },
    DanglingBranch { branch: usize, bus: BusId },
    ZeroImpedance { branch: usize },
    CouplingOnTransposedLine { branch: usize },
    NonzeroCouplingDiagonal { branch: usize },
    DanglingGenerator { generator: usize, bus: BusId },
    DispatchOutOfLimits { generator: usize, p_set: f64 },
    NegativeQuadraticCost { generator: usize },
    DanglingLoad { bus: BusId },
    MultipleFeeders { bus: BusId },
    Disconnected { component: Vec<BusId> },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::NonPositiveBaseMva(b) => write!(f, "base_mva must be positive, got {b}"),
            Violation::NoSlack => write!(f, "case has no slack bus"),
            Violation::MultipleSlack(ids) => {
                let ids: Vec<String> = ids.iter().map(|i| i.to_string()).collect();
                write!(f, "case has more than one slack bus: {}", ids.join(", "))
            }
            Violation::DuplicateBus(id) => write!(f, "bus {id} is defined more than once"),
            Violation::NonPositiveBaseKv { bus, base_kv } => {
                write!(f, "bus {bus}: base_kv must be positive, got {base_kv}")
            }
            Violation::BadSetpoint { bus } => {
                write!(
                    f,
                    "bus {bus}: slack/PV bus needs a positive voltage setpoint"
                )
            }
            Violation::SelfLoop { branch, bus } => {
                write!(f, "branch #{branch} connects bus {bus} to itself")
            }
            Violation::DanglingBranch { branch, bus } => {
                write!(f, "branch #{branch} references nonexistent bus {bus}")
            }
            Violation::ZeroImpedance { branch } => {
                write!(f, "branch #{branch} has a zero sequence impedance")
            }
            Violation::CouplingOnTransposedLine { branch } => {
                write!(
                    f,
                    "branch #{branch} carries a coupling block but is not flagged untransposed"
                )
            }
            Violation::NonzeroCouplingDiagonal { branch } => {
                write!(
                    f,
                    "branch #{branch} coupling block must have a zero diagonal"
                )
            }
            Violation::DanglingGenerator { generator, bus } => {
                write!(f, "generator #{generator} references nonexistent bus {bus}")
            }
            Violation::DispatchOutOfLimits { generator, p_set } => {
                write!(
                    f,
                    "generator #{generator} setpoint {p_set} lies outside [p_min, p_max]"
                )
            }
            Violation::NegativeQuadraticCost { generator } => {
                write!(
                    f,
                    "generator #{generator} has a negative quadratic cost coefficient"
                )
            }
            Violation::DanglingLoad { bus } => write!(f, "load references nonexistent bus {bus}"),
            Violation::MultipleFeeders { bus } => {
                write!(f, "bus {bus} has more than one feeder attached")
            }
            Violation::Disconnected { component } => {
                let ids: Vec<String> = component.iter().map(|i| i.to_string()).collect();
                write!(
                    f,
                    "buses {{{}}} are not connected to the slack bus",
                    ids.join(", ")
                )
            }
        }
    }
}

/// Check every structural invariant of a case. An empty list means the case is usable.
pub fn validate_case(case: &TransmissionCase) -> Vec<Violation> {
    let mut out = Vec::new();
    if !(case.base_mva > 0.0) {
        out.push(Violation::NonPositiveBaseMva(case.base_mva));
    }

    let mut seen = BTreeSet::new();
    for b in &case.buses {
        if !seen.insert(b.id) {
            out.push(Violation::DuplicateBus(b.id));
        }
        if !(b.base_kv > 0.0) {
            out.push(Violation::NonPositiveBaseKv {
                bus: b.id,
                base_kv: b.base_kv,
            });
        }
        if b.kind != BusKind::Pq && !b.v_setpoint.is_some_and(|v| v > 0.0) {
            out.push(Violation::BadSetpoint { bus: b.id });
        }
    }

    let slacks: Vec<BusId> = case
        .buses
        .iter()
        .filter(|b| b.kind == BusKind::Slack)
        .map(|b| b.id)
        .collect();
    match slacks.len() {
        0 => out.push(Violation::NoSlack),
        1 => {}
        _ => out.push(Violation::MultipleSlack(slacks)),
    }

    for (k, br) in case.branches.iter().enumerate() {
        if br.from == br.to {
            out.push(Violation::SelfLoop {
                branch: k,
                bus: br.from,
            });
        }
        for end in [br.from, br.to] {
            if !seen.contains(&end) {
                out.push(Violation::DanglingBranch {
                    branch: k,
                    bus: end,
                });
            }
        }
        let zero_ok = br.z1.norm() > 0.0
            && br.z2.norm() > 0.0
            && (br.zero_seq_path == ZeroSeqPath::Open || br.z0.norm() > 0.0);
        if !zero_ok {
            out.push(Violation::ZeroImpedance { branch: k });
        }
        if let Some(block) = &br.coupling {
            if !br.untransposed {
                out.push(Violation::CouplingOnTransposedLine { branch: k });
            }
            if (0..3).any(|i| block[i][i].norm() != 0.0) {
                out.push(Violation::NonzeroCouplingDiagonal { branch: k });
            }
        }
    }

    for (k, g) in case.generators.iter().enumerate() {
        if !seen.contains(&g.bus) {
            out.push(Violation::DanglingGenerator {
                generator: k,
                bus: g.bus,
            });
        }
        if !(g.p_min <= g.p_set && g.p_set <= g.p_max) {
            out.push(Violation::DispatchOutOfLimits {
                generator: k,
                p_set: g.p_set,
            });
        }
        if g.cost.a < 0.0 {
            out.push(Violation::NegativeQuadraticCost { generator: k });
        }
    }

    let mut feeders_at: BTreeMap<BusId, usize> = BTreeMap::new();
    for l in &case.loads {
        if !seen.contains(&l.bus) {
            out.push(Violation::DanglingLoad { bus: l.bus });
        }
        if l.is_feeder() {
            *feeders_at.entry(l.bus).or_default() += 1;
        }
    }
    for (bus, n) in feeders_at {
        if n > 1 {
            out.push(Violation::MultipleFeeders { bus });
        }
    }

    if let Some(component) = unreachable_from_slack(case) {
        out.push(Violation::Disconnected { component });
    }
    out
}

fn unreachable_from_slack(case: &TransmissionCase) -> Option<Vec<BusId>> {
    let root = case.slack_bus().or(case.buses.first())?.id;
    let mut adj: HashMap<BusId, Vec<BusId>> = HashMap::new();
    for br in &case.branches {
        adj.entry(br.from).or_default().push(br.to);
        adj.entry(br.to).or_default().push(br.from);
    }
    let mut reached = BTreeSet::from([root]);
    let mut stack = vec![root];
    while let Some(b) = stack.pop() {
        for &n in adj.get(&b).map(Vec::as_slice).unwrap_or(&[]) {
            if reached.insert(n) {
                stack.push(n);
            }
        }
    }
    let missing: Vec<BusId> = case
        .buses
        .iter()
        .map(|b| b.id)
        .filter(|id| !reached.contains(id))
        .collect();
    (!missing.is_empty()).then_some(missing)
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NetError {
    #[error("base_mva must be positive, got {0}")]
    BadBaseMva(f64),
    #[error("bus {bus}: base_kv must be positive, got {base_kv}")]
    BadBaseKv { bus: BusId, base_kv: f64 },
}

fn check_bases(case: &TransmissionCase) -> Result<(), NetError> {
    if !(case.base_mva > 0.0) {
        return Err(NetError::BadBaseMva(case.base_mva));
    }
    if let Some(b) = case.buses.iter().find(|b| !(b.base_kv > 0.0)) {
        return Err(NetError::BadBaseKv {
            bus: b.id,
            base_kv: b.base_kv,
        });
    }
    Ok(())
}

/// Express all powers on the system base. Idempotent.
pub fn to_per_unit(case: &TransmissionCase) -> Result<TransmissionCase, NetError> {
    check_bases(case)?;
    if case.units == Units::PerUnit {
        return Ok(case.clone());
    }
    let mut out = case.power_scale(1.0 / case.base_mva);
    out.units = Units::PerUnit;
    Ok(out)
}

/// Inverse of [`to_per_unit`]: powers back to MW/MVAr. Idempotent.
pub fn to_physical(case: &TransmissionCase) -> Result<TransmissionCase, NetError> {
    check_bases(case)?;
    if case.units == Units::Physical {
        return Ok(case.clone());
    }
    let mut out = case.power_scale(case.base_mva);
    out.units = Units::Physical;
    Ok(out)
}
