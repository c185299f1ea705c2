//! Three-phase unbalanced power flow for radial feeders.
//!
//! Backward/forward sweep with wye-connected constant-power loads. Line
//! impedance matrices are restricted to the phases present on the line; no
//! neutral is modelled. Everything runs in per-unit on the feeder's own
//! `base_kv`/`base_mva` with a per-phase power base of `base_mva / 3`.

use std::collections::{BTreeMap, BTreeSet, HashMap, VecDeque};
use std::fmt;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::seqxform::{Phase, PhasePowers, PhaseVoltages};

pub type NodeId = u32;
pub type PhaseMatrix = [[Complex64; 3]; 3];

const ZERO: Complex64 = Complex64::new(0.0, 0.0);

/// Subset of {a, b, c}.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Phases(u8);

impl Phases {
    pub const ABC: Phases = Phases(0b111);
    pub const NONE: Phases = Phases(0);

    pub fn single(p: Phase) -> Phases {
        Phases(1 << p.index())
    }

    pub fn from_phases(list: &[Phase]) -> Phases {
        Phases(list.iter().fold(0, |m, p| m | (1 << p.index())))
    }

    pub fn has(self, p: Phase) -> bool {
        self.0 & (1 << p.index()) != 0
    }

    pub fn contains(self, other: Phases) -> bool {
        self.0 & other.0 == other.0
    }

    pub fn count(self) -> usize {
        self.0.count_ones() as usize
    }

    pub fn iter(self) -> impl Iterator<Item = Phase> {
        Phase::ALL.into_iter().filter(move |p| self.has(*p))
    }

    pub fn indices(self) -> impl Iterator<Item = usize> {
        self.iter().map(Phase::index)
    }

    pub fn parse(s: &str) -> Option<Phases> {
        if s.is_empty() {
            return None;
        }
        let mut bits = 0u8;
        for ch in s.chars() {
            let bit = match ch.to_ascii_lowercase() {
                'a' => 1,
                'b' => 2,
                'c' => 4,
                _ => return None,
            };
            if bits & bit != 0 {
                return None;
            }
            bits |= bit;
        }
        Some(Phases(bits))
    }

    /// Rotate a→b→c→a `k` times.
    pub fn rotate(self, k: usize) -> Phases {
        let mut bits = 0;
        for i in self.indices() {
            bits |= 1 << ((i + k) % 3);
        }
        Phases(bits)
    }
}

impl fmt::Display for Phases {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for p in self.iter() {
            write!(f, "{}", p.letter())?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeederLine {
    pub from: NodeId,
    pub to: NodeId,
    pub phases: Phases,
    /// Length in the unit the impedance is given per (km in shipped data).
    pub length: f64,
    /// Series impedance per unit length (ohm), zero outside `phases`.
    pub z_per_length: PhaseMatrix,
}

impl FeederLine {
    pub fn z_ohm(&self) -> PhaseMatrix {
        self.z_per_length.map(|row| row.map(|z| z * self.length))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PhaseLoad {
    pub node: NodeId,
    pub phases: Phases,
    /// Constant-power demand per phase (MVA), zero outside `phases`.
    pub s: [Complex64; 3],
}

impl PhaseLoad {
    pub fn total(&self) -> Complex64 {
        self.s.iter().sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Feeder {
    pub id: String,
    pub base_kv: f64,
    pub base_mva: f64,
    pub head: NodeId,
    pub lines: Vec<FeederLine>,
    pub loads: Vec<PhaseLoad>,
}

impl Feeder {
    pub fn total_load(&self) -> Complex64 {
        self.loads.iter().map(PhaseLoad::total).sum()
    }

    pub fn phase_totals(&self) -> PhasePowers {
        let mut s = [ZERO; 3];
        for l in &self.loads {
            for k in 0..3 {
                s[k] += l.s[k];
            }
        }
        PhasePowers::from_array(s)
    }

    /// Copy with every load multiplied by `k`.
    pub fn scaled(&self, k: f64) -> Feeder {
        let mut out = self.clone();
        for l in &mut out.loads {
            l.s = l.s.map(|s| s * k);
        }
        out
    }

    pub fn z_base(&self) -> f64 {
        self.base_kv * self.base_kv / self.base_mva
    }

    pub fn node_count(&self) -> usize {
        let mut ids: BTreeSet<NodeId> = BTreeSet::from([self.head]);
        for l in &self.lines {
            ids.insert(l.from);
            ids.insert(l.to);
        }
        ids.len()
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FeederError {
    #[error("feeder base_kv and base_mva must be positive")]
    BadBase,
    #[error(
        "line {line} ({from}-{to}) closes a loop through nodes {nodes:?}; feeders must be radial"
    )]
    Loop {
        line: usize,
        from: NodeId,
        to: NodeId,
        nodes: Vec<NodeId>,
    },
    #[error("nodes {0:?} are not connected to the head node")]
    Disconnected(Vec<NodeId>),
    #[error("line {line} ({from}-{to}) carries phases {phases} not present upstream ({upstream})")]
    PhaseNotUpstream {
        line: usize,
        from: NodeId,
        to: NodeId,
        phases: Phases,
        upstream: Phases,
    },
    #[error("line {line} impedance matrix is not symmetric or has a zero self impedance")]
    BadImpedance { line: usize },
    #[error("load at node {node} uses phases {phases} but the node only has {available}")]
    LoadPhase {
        node: NodeId,
        phases: Phases,
        available: Phases,
    },
    #[error("load references unknown node {0}")]
    UnknownLoadNode(NodeId),
    #[error("head voltage magnitude {magnitude} pu on phase {phase} is outside (0.5, 1.5)")]
    HeadVoltage { phase: Phase, magnitude: f64 },
    #[error("sweep did not converge in {iterations} iterations (last |dV| = {last_dv:e} pu)")]
    NotConverged { iterations: usize, last_dv: f64 },
    #[error("voltage collapse at node {node} phase {phase}: |V| = {magnitude} pu")]
    VoltageCollapse {
        node: NodeId,
        phase: Phase,
        magnitude: f64,
    },
    #[error("solution is not converged")]
    Unconverged,
    #[error("unbalance {0} is outside [0, 0.5]")]
    AlphaOutOfRange(f64),
    #[error("infeasible synthetic feeder request: {0}")]
    InfeasibleSpec(String),
}

/// Radial structure in breadth-first order from the head.
#[derive(Debug, Clone)]
pub struct Topology {
    pub order: Vec<NodeId>,
    pub position: HashMap<NodeId, usize>,
    /// For each position, the parent position and the feeding line index.
    pub parent: Vec<Option<(usize, usize)>>,
    pub phases: Vec<Phases>,
    pub node_loads: Vec<[Complex64; 3]>,
}

fn loop_path(adj: &HashMap<NodeId, Vec<NodeId>>, from: NodeId, to: NodeId) -> Vec<NodeId> {
    let mut prev: HashMap<NodeId, NodeId> = HashMap::new();
    let mut queue = VecDeque::from([from]);
    let mut seen = BTreeSet::from([from]);
    while let Some(n) = queue.pop_front() {
        if n == to {
            break;
        }
        for &m in adj.get(&n).map(Vec::as_slice).unwrap_or(&[]) {
            if seen.insert(m) {
                prev.insert(m, n);
                queue.push_back(m);
            }
        }
    }
    let mut path = vec![to];
    let mut cur = to;
    while let Some(&p) = prev.get(&cur) {
        path.push(p);
        cur = p;
    }
    path.reverse();
    path
}

fn symmetric_ok(z: &PhaseMatrix, phases: Phases) -> bool {
    for i in phases.indices() {
        if z[i][i].norm() == 0.0 {
            return false;
        }
        for j in phases.indices() {
            let (a, b) = (z[i][j], z[j][i]);
            if (a - b).norm() > 1e-12 * a.norm().max(b.norm()).max(1e-300) {
                return false;
            }
        }
    }
    true
}

impl Feeder {
    /// Check radiality and phasing, and order the nodes from the head.
    pub fn topology(&self) -> Result<Topology, FeederError> {
        if !(self.base_kv > 0.0 && self.base_mva > 0.0) {
            return Err(FeederError::BadBase);
        }
        let mut adj: HashMap<NodeId, Vec<NodeId>> = HashMap::new();
        let mut incident: HashMap<NodeId, Vec<usize>> = HashMap::new();
        let mut uf: HashMap<NodeId, NodeId> = HashMap::new();
        fn root(uf: &mut HashMap<NodeId, NodeId>, x: NodeId) -> NodeId {
            let mut r = x;
            while let Some(&p) = uf.get(&r) {
                if p == r {
                    break;
                }
                r = p;
            }
            uf.insert(x, r);
            r
        }
        for (k, line) in self.lines.iter().enumerate() {
            uf.entry(line.from).or_insert(line.from);
            uf.entry(line.to).or_insert(line.to);
            let (ra, rb) = (root(&mut uf, line.from), root(&mut uf, line.to));
            if ra == rb {
                return Err(FeederError::Loop {
                    line: k,
                    from: line.from,
                    to: line.to,
                    nodes: loop_path(&adj, line.from, line.to),
                });
            }
            uf.insert(ra, rb);
            adj.entry(line.from).or_default().push(line.to);
            adj.entry(line.to).or_default().push(line.from);
            incident.entry(line.from).or_default().push(k);
            incident.entry(line.to).or_default().push(k);
            if !symmetric_ok(&line.z_per_length, line.phases) || !(line.length > 0.0) {
                return Err(FeederError::BadImpedance { line: k });
            }
        }

        let mut order = vec![self.head];
        let mut position = HashMap::from([(self.head, 0usize)]);
        let mut parent = vec![None];
        let mut phases = vec![Phases::ABC];
        let mut i = 0;
        while i < order.len() {
            let node = order[i];
            for &k in incident.get(&node).map(Vec::as_slice).unwrap_or(&[]) {
                let line = &self.lines[k];
                let other = if line.from == node {
                    line.to
                } else {
                    line.from
                };
                if position.contains_key(&other) {
                    continue;
                }
                if !phases[i].contains(line.phases) {
                    return Err(FeederError::PhaseNotUpstream {
                        line: k,
                        from: line.from,
                        to: line.to,
                        phases: line.phases,
                        upstream: phases[i],
                    });
                }
                position.insert(other, order.len());
                order.push(other);
                parent.push(Some((i, k)));
                phases.push(line.phases);
            }
            i += 1;
        }
        let mut missing: Vec<NodeId> = adj
            .keys()
            .filter(|n| !position.contains_key(n))
            .copied()
            .collect();
        if !missing.is_empty() {
            missing.sort_unstable();
            return Err(FeederError::Disconnected(missing));
        }

        let mut node_loads = vec![[ZERO; 3]; order.len()];
        for load in &self.loads {
            let p = *position
                .get(&load.node)
                .ok_or(FeederError::UnknownLoadNode(load.node))?;
            let stray = (0..3).any(|k| !load.phases.has(Phase::from_index(k)) && load.s[k] != ZERO);
            if !phases[p].contains(load.phases) || stray {
                return Err(FeederError::LoadPhase {
                    node: load.node,
                    phases: load.phases,
                    available: phases[p],
                });
            }
            for k in load.phases.indices() {
                node_loads[p][k] += load.s[k];
            }
        }

        Ok(Topology {
            order,
            position,
            parent,
            phases,
            node_loads,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepOptions {
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for SweepOptions {
    fn default() -> Self {
        SweepOptions {
            tol: 1e-10,
            max_iter: 100,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeederSolution {
    /// Nodes in breadth-first order from the head.
    pub nodes: Vec<NodeId>,
    pub phases: Vec<Phases>,
    /// Node voltages (pu), zero on absent phases.
    pub voltages: Vec<[Complex64; 3]>,
    /// Series current of every feeder line (pu), indexed like `Feeder::lines`,
    /// positive in the direction away from the head.
    pub line_currents: Vec<[Complex64; 3]>,
    /// Current leaving the source into the feeder (pu).
    pub head_current: [Complex64; 3],
    /// Power delivered at the head (MVA per phase).
    pub head_power: PhasePowers,
    pub iterations: usize,
    pub last_dv: f64,
    pub converged: bool,
    pub base_mva: f64,
}

impl FeederSolution {
    pub fn voltage(&self, node: NodeId) -> Option<[Complex64; 3]> {
        self.nodes
            .iter()
            .position(|&n| n == node)
            .map(|i| self.voltages[i])
    }

    pub fn head_voltage(&self) -> PhaseVoltages {
        PhaseVoltages::from_array(self.voltages[0])
    }
}

fn mat_vec(z: &PhaseMatrix, phases: Phases, i: &[Complex64; 3]) -> [Complex64; 3] {
    let mut out = [ZERO; 3];
    for r in phases.indices() {
        for c in phases.indices() {
            out[r] += z[r][c] * i[c];
        }
    }
    out
}

struct Prepared {
    topo: Topology,
    z_pu: Vec<PhaseMatrix>,
    s_pu: Vec<[Complex64; 3]>,
}

fn prepare(feeder: &Feeder) -> Result<Prepared, FeederError> {
    let topo = feeder.topology()?;
    let zb = feeder.z_base();
    let z_pu = feeder
        .lines
        .iter()
        .map(|l| l.z_ohm().map(|row| row.map(|z| z / zb)))
        .collect();
    let per_phase_base = feeder.base_mva / 3.0;
    let s_pu = topo
        .node_loads
        .iter()
        .map(|s| s.map(|x| x / per_phase_base))
        .collect();
    Ok(Prepared { topo, z_pu, s_pu })
}

/// Currents drawn by the loads and accumulated branch currents at given voltages.
fn backward(
    prep: &Prepared,
    v: &[[Complex64; 3]],
    nlines: usize,
) -> (Vec<[Complex64; 3]>, Vec<[Complex64; 3]>) {
    let topo = &prep.topo;
    let n = topo.order.len();
    let mut through = vec![[ZERO; 3]; n];
    for p in 0..n {
        for k in topo.phases[p].indices() {
            let s = prep.s_pu[p][k];
            if s != ZERO {
                through[p][k] = (s / v[p][k]).conj();
            }
        }
    }
    let mut line_i = vec![[ZERO; 3]; nlines];
    for p in (1..n).rev() {
        let (parent, line) = topo.parent[p].expect("non-head node has a parent");
        line_i[line] = through[p];
        let child = through[p];
        for k in 0..3 {
            through[parent][k] += child[k];
        }
    }
    (through, line_i)
}

/// Backward/forward sweep power flow.
pub fn sweep_solve(
    feeder: &Feeder,
    head_v: PhaseVoltages,
    opts: &SweepOptions,
) -> Result<FeederSolution, FeederError> {
    for phase in Phase::ALL {
        let m = head_v.get(phase).norm();
        if !(m > 0.5 && m < 1.5) {
            return Err(FeederError::HeadVoltage {
                phase,
                magnitude: m,
            });
        }
    }
    let prep = prepare(feeder)?;
    let topo = &prep.topo;
    let n = topo.order.len();
    let head = head_v.to_array();
    let restrict = |ph: Phases| {
        let mut v = [ZERO; 3];
        for k in ph.indices() {
            v[k] = head[k];
        }
        v
    };
    let mut v: Vec<[Complex64; 3]> = topo.phases.iter().map(|&ph| restrict(ph)).collect();

    let mut iterations = 0;
    let mut last_dv = f64::INFINITY;
    let mut converged = false;
    while iterations < opts.max_iter {
        iterations += 1;
        let (_, line_i) = backward(&prep, &v, feeder.lines.len());
        let mut dv = 0.0f64;
        for p in 1..n {
            let (parent, line) = topo.parent[p].expect("non-head node has a parent");
            let ph = topo.phases[p];
            let drop = mat_vec(&prep.z_pu[line], ph, &line_i[line]);
            let mut next = [ZERO; 3];
            for k in ph.indices() {
                next[k] = v[parent][k] - drop[k];
                dv = dv.max((next[k] - v[p][k]).norm());
            }
            v[p] = next;
        }
        last_dv = dv;
        for p in 0..n {
            for k in topo.phases[p].indices() {
                let m = v[p][k].norm();
                if !(m >= 0.5) {
                    return Err(FeederError::VoltageCollapse {
                        node: topo.order[p],
                        phase: Phase::from_index(k),
                        magnitude: m,
                    });
                }
            }
        }
        if dv < opts.tol {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(FeederError::NotConverged {
            iterations,
            last_dv,
        });
    }

    // currents consistent with the final voltages
    let (through, line_i) = backward(&prep, &v, feeder.lines.len());
    let head_current = through[0];
    let per_phase_base = feeder.base_mva / 3.0;
    let head_power = PhasePowers::from_array(std::array::from_fn(|k| {
        v[0][k] * head_current[k].conj() * per_phase_base
    }));
    Ok(FeederSolution {
        nodes: topo.order.clone(),
        phases: topo.phases.clone(),
        voltages: v,
        line_currents: line_i,
        head_current,
        head_power,
        iterations,
        last_dv,
        converged,
        base_mva: feeder.base_mva,
    })
}

/// Three-phase power delivered into the feeder at the substation (MVA per phase).
pub fn head_power(solution: &FeederSolution) -> Result<PhasePowers, FeederError> {
    if !solution.converged {
        return Err(FeederError::Unconverged);
    }
    Ok(solution.head_power)
}

/// Largest nodal current-balance residual (pu) of a solution.
pub fn kcl_residual(feeder: &Feeder, solution: &FeederSolution) -> Result<f64, FeederError> {
    let prep = prepare(feeder)?;
    let topo = &prep.topo;
    let mut worst = 0.0f64;
    let mut balance = vec![[ZERO; 3]; topo.order.len()];
    balance[0] = solution.head_current;
    for p in 1..topo.order.len() {
        let (parent, line) = topo.parent[p].expect("non-head node has a parent");
        for k in 0..3 {
            balance[p][k] += solution.line_currents[line][k];
            balance[parent][k] -= solution.line_currents[line][k];
        }
    }
    for p in 0..topo.order.len() {
        for k in topo.phases[p].indices() {
            let s = prep.s_pu[p][k];
            let load = if s == ZERO {
                ZERO
            } else {
                (s / solution.voltages[p][k]).conj()
            };
            worst = worst.max((balance[p][k] - load).norm());
        }
    }
    Ok(worst)
}

/// Total series loss `Σ Iᴴ Z I` over all lines (MVA).
pub fn line_losses(feeder: &Feeder, solution: &FeederSolution) -> Complex64 {
    let zb = feeder.z_base();
    let per_phase_base = feeder.base_mva / 3.0;
    let mut total = ZERO;
    for (line, i) in feeder.lines.iter().zip(&solution.line_currents) {
        let z = line.z_ohm().map(|row| row.map(|x| x / zb));
        let zi = mat_vec(&z, line.phases, i);
        for k in line.phases.indices() {
            total += i[k].conj() * zi[k];
        }
    }
    total * per_phase_base
}

/// Reshape three-phase loads: phase a gets `(1+α)·p̄`, phases b and c get
/// `(1−α/2)·p̄`, where `p̄` is the load's mean per-phase demand. Single- and
/// two-phase loads are left alone and the per-node total is preserved.
pub fn apply_unbalance(feeder: &Feeder, alpha: f64) -> Result<Feeder, FeederError> {
    if !(0.0..=0.5).contains(&alpha) {
        return Err(FeederError::AlphaOutOfRange(alpha));
    }
    let mut out = feeder.clone();
    if alpha == 0.0 {
        return Ok(out);
    }
    for load in &mut out.loads {
        if load.phases != Phases::ABC {
            continue;
        }
        let mean = load.total() / 3.0;
        load.s = [
            mean * (1.0 + alpha),
            mean * (1.0 - alpha / 2.0),
            mean * (1.0 - alpha / 2.0),
        ];
    }
    Ok(out)
}

/// Load share by customer connection type.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhaseMix {
    pub three: f64,
    pub two: f64,
    pub single: f64,
}

impl Default for PhaseMix {
    fn default() -> Self {
        PhaseMix {
            three: 0.4,
            two: 0.2,
            single: 0.4,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthSpec {
    pub nodes: usize,
    pub p_mw: f64,
    pub q_mvar: f64,
    pub base_kv: f64,
    pub base_mva: f64,
    pub mix: PhaseMix,
    pub seed: u64,
    /// Worst-case head-to-node voltage drop at full load (fraction).
    pub target_drop: f64,
}

impl SynthSpec {
    pub fn new(nodes: usize, p_mw: f64, q_mvar: f64, base_kv: f64, seed: u64) -> Self {
        SynthSpec {
            nodes,
            p_mw,
            q_mvar,
            base_kv,
            base_mva: 10.0,
            mix: PhaseMix::default(),
            seed,
            target_drop: 0.04,
        }
    }

    /// Stand-in with the aggregate size of a large 34.5 kV utility circuit.
    pub fn ckt24_standin(nodes: usize, seed: u64) -> Self {
        SynthSpec::new(nodes, 52.1, 11.7, 34.5, seed)
    }
}

#[derive(Clone, Copy, PartialEq)]
enum Class {
    Three,
    Two,
    Single,
}

struct Leaf {
    node: NodeId,
    phases: Phases,
    class: Class,
    weight: f64,
}

// Overhead-line style impedance (ohm/km); self and mutual terms are equal
// across phases so the feeder is symmetric under phase rotation.
const Z_SELF: Complex64 = Complex64::new(0.306, 0.627);
const Z_MUTUAL: Complex64 = Complex64::new(0.095, 0.284);

fn line_matrix(phases: Phases, scale: f64) -> PhaseMatrix {
    let mut z = [[ZERO; 3]; 3];
    for i in phases.indices() {
        for j in phases.indices() {
            z[i][j] = if i == j { Z_SELF } else { Z_MUTUAL } * scale;
        }
    }
    z
}

/// Seeded synthetic radial feeder.
///
/// A three-phase backbone is grown as a random tree; single- and two-phase
/// laterals are added in rotated triples (a/b/c or ab/bc/ca) with identical
/// lengths and loads, so with all three-phase loads balanced the feeder is
/// phase-symmetric. Demand sits on the leaves and sums to the requested total.
/// Impedances are then scaled so the worst voltage drop at full load equals
/// `target_drop`.
pub fn synth_feeder(spec: &SynthSpec) -> Result<Feeder, FeederError> {
    if spec.nodes < 2 {
        return Err(FeederError::InfeasibleSpec(format!(
            "need at least 2 nodes, got {}",
            spec.nodes
        )));
    }
    if !(spec.p_mw > 0.0) || !spec.q_mvar.is_finite() {
        return Err(FeederError::InfeasibleSpec(
            "total active load must be positive".into(),
        ));
    }
    if !(spec.base_kv > 0.0 && spec.base_mva > 0.0) {
        return Err(FeederError::InfeasibleSpec("bases must be positive".into()));
    }
    let PhaseMix { three, two, single } = spec.mix;
    if three < 0.0 || two < 0.0 || single < 0.0 || !((three + two + single - 1.0).abs() < 1e-9) {
        return Err(FeederError::InfeasibleSpec(
            "phase mix fractions must be non-negative and sum to 1".into(),
        ));
    }
    if !(spec.target_drop > 0.0 && spec.target_drop < 0.3) {
        return Err(FeederError::InfeasibleSpec(
            "target drop must lie in (0, 0.3)".into(),
        ));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let budget = spec.nodes - 1;
    let (n3, triples) = if budget < 4 || two + single == 0.0 {
        (budget, 0)
    } else {
        let n3 = ((budget as f64 * three).round() as usize).clamp(1, budget);
        let triples = (budget - n3) / 3;
        (budget - 3 * triples, triples)
    };
    let t2 = if two + single > 0.0 {
        (triples as f64 * two / (two + single)).round() as usize
    } else {
        0
    };

    let mut lines = Vec::new();
    let mut children = vec![0usize; spec.nodes];
    // backbone: node i hangs off one of the few nodes before it
    for i in 1..=n3 {
        let lo = i.saturating_sub(4);
        let parent = if i == 1 { 0 } else { rng.random_range(lo..i) };
        children[parent] += 1;
        let len = rng.random_range(0.3..1.5);
        lines.push(FeederLine {
            from: parent as NodeId,
            to: i as NodeId,
            phases: Phases::ABC,
            length: len,
            z_per_length: line_matrix(Phases::ABC, 1.0),
        });
    }
    let mut leaves: Vec<Leaf> = (1..=n3)
        .filter(|&i| children[i] == 0)
        .map(|i| Leaf {
            node: i as NodeId,
            phases: Phases::ABC,
            class: Class::Three,
            weight: 0.0,
        })
        .collect();
    let hubs: Vec<usize> = (0..=n3).filter(|&i| i == 0 || children[i] > 0).collect();

    let mut next = n3 + 1;
    for t in 0..triples {
        let (class, base) = if t < t2 {
            (Class::Two, Phases::from_phases(&[Phase::A, Phase::B]))
        } else {
            (Class::Single, Phases::single(Phase::A))
        };
        let hub = hubs[rng.random_range(0..hubs.len())];
        let len = rng.random_range(0.1..0.8);
        for k in 0..3 {
            let phases = base.rotate(k);
            lines.push(FeederLine {
                from: hub as NodeId,
                to: next as NodeId,
                phases,
                length: len,
                z_per_length: line_matrix(phases, 1.0),
            });
            leaves.push(Leaf {
                node: next as NodeId,
                phases,
                class,
                weight: 0.0,
            });
            next += 1;
        }
    }

    // weights: equal within a triple so the rotation symmetry holds
    let mut i = 0;
    while i < leaves.len() {
        let w = rng.random_range(0.5..1.5);
        let group = if leaves[i].class == Class::Three {
            1
        } else {
            3
        };
        for leaf in &mut leaves[i..i + group] {
            leaf.weight = w;
        }
        i += group;
    }

    let share = |c: Class| match c {
        Class::Three => three,
        Class::Two => two,
        Class::Single => single,
    };
    let mut class_weight: BTreeMap<u8, f64> = BTreeMap::new();
    for leaf in &leaves {
        *class_weight.entry(leaf.class as u8).or_default() += leaf.weight;
    }
    let live_share: f64 = [Class::Three, Class::Two, Class::Single]
        .into_iter()
        .filter(|c| class_weight.contains_key(&(*c as u8)))
        .map(share)
        .sum();
    if !(live_share > 0.0) {
        return Err(FeederError::InfeasibleSpec(
            "no leaves can carry the requested phase mix".into(),
        ));
    }
    let total = Complex64::new(spec.p_mw, spec.q_mvar);
    let loads = leaves
        .iter()
        .filter(|leaf| share(leaf.class) > 0.0)
        .map(|leaf| {
            let s = total
                * (share(leaf.class) / live_share)
                * (leaf.weight / class_weight[&(leaf.class as u8)]);
            let per = s / leaf.phases.count() as f64;
            let mut arr = [ZERO; 3];
            for k in leaf.phases.indices() {
                arr[k] = per;
            }
            PhaseLoad {
                node: leaf.node,
                phases: leaf.phases,
                s: arr,
            }
        })
        .collect();

    let mut feeder = Feeder {
        id: format!("synth-{}", spec.seed),
        base_kv: spec.base_kv,
        base_mva: spec.base_mva,
        head: 0,
        lines,
        loads,
    };
    scale_to_drop(&mut feeder, spec.target_drop)?;
    Ok(feeder)
}

fn worst_drop(feeder: &Feeder) -> Result<f64, FeederError> {
    let sol = sweep_solve(
        feeder,
        PhaseVoltages::balanced(Complex64::new(1.0, 0.0)),
        &SweepOptions::default(),
    )?;
    let mut lowest = f64::INFINITY;
    for (v, ph) in sol.voltages.iter().zip(&sol.phases) {
        for k in ph.indices() {
            lowest = lowest.min(v[k].norm());
        }
    }
    Ok(1.0 - lowest)
}

fn rescale(feeder: &mut Feeder, k: f64) {
    for line in &mut feeder.lines {
        line.z_per_length = line.z_per_length.map(|row| row.map(|z| z * k));
    }
}

fn scale_to_drop(feeder: &mut Feeder, target: f64) -> Result<(), FeederError> {
    // start from a lightly loaded (near-linear) regime and extrapolate
    let raw = feeder.clone();
    let mut k = 1e-4;
    let mut trial = raw.clone();
    rescale(&mut trial, k);
    let mut drop = worst_drop(&trial)?;
    for _ in 0..30 {
        if (drop - target).abs() < 1e-4 * target {
            break;
        }
        let ratio = (target / drop).clamp(0.2, 5.0);
        k *= ratio;
        trial = raw.clone();
        rescale(&mut trial, k);
        drop = match worst_drop(&trial) {
            Ok(d) => d,
            Err(_) => {
                k /= ratio.max(1.0) * 2.0;
                trial = raw.clone();
                rescale(&mut trial, k);
                worst_drop(&trial)?
            }
        };
    }
    *feeder = trial;
    Ok(())
}
