//! Three-sequence transmission power flow.
//!
//! The positive-sequence network is solved with a polar Newton–Raphson
//! iteration; negative- and zero-sequence networks are linear and are solved
//! directly. Off-diagonal sequence coupling of untransposed lines is moved to
//! the right-hand side as compensation current injections, and unbalanced
//! PCC loads enter as a positive-sequence PQ load plus negative/zero-sequence
//! current injections. An outer pass loop refreshes those terms until the
//! sequence voltages stop moving.

use std::collections::BTreeSet;
use std::fmt;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use thiserror::Error;

use crate::netmodel::{
    BusId, BusKind, CouplingBlock, LoadKind, TransmissionCase, Units, ZeroSeqPath,
};
use crate::seqxform::{
    phase_currents_from_power, phase_to_sequence_currents, sequence_to_phase, PhasePowers,
    PhaseVoltages, SeqError, SequenceVoltages,
};

const ZERO: Complex64 = Complex64::new(0.0, 0.0);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sequence {
    Zero,
    Positive,
    Negative,
}

impl fmt::Display for Sequence {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Sequence::Zero => "zero",
            Sequence::Positive => "positive",
            Sequence::Negative => "negative",
        })
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TsolveError {
    #[error("case powers must be per-unit before solving")]
    NotPerUnit,
    #[error("case has no slack bus")]
    NoSlack,
    #[error("unknown bus {0}")]
    UnknownBus(BusId),
    #[error("{sequence}-sequence network has no path to ground for buses {buses:?}")]
    IsolatedSequenceNetwork {
        sequence: Sequence,
        buses: Vec<BusId>,
    },
    #[error("{sequence}-sequence admittance matrix is singular")]
    SingularSequenceMatrix { sequence: Sequence },
    #[error("Newton-Raphson Jacobian is singular at iteration {iteration}")]
    SingularJacobian { iteration: usize },
    #[error("Newton-Raphson did not converge in {} iterations (last mismatch {:e})", history.len(), history.last().copied().unwrap_or(f64::NAN))]
    NrDiverged { history: Vec<f64> },
    #[error("sequence pass loop did not settle in {passes} passes (last change {last_change:e})")]
    SequenceLoopDiverged { passes: usize, last_change: f64 },
    #[error("bus {bus}: {source}")]
    DegenerateVoltage { bus: BusId, source: SeqError },
}

/// Coupling block of one untransposed branch, with bus positions resolved.
#[derive(Debug, Clone, PartialEq)]
pub struct BranchCoupling {
    pub from: usize,
    pub to: usize,
    pub block: CouplingBlock,
}

#[derive(Debug, Clone)]
pub struct SequenceYBus {
    pub bus_ids: Vec<BusId>,
    pub y0: DMatrix<Complex64>,
    pub y1: DMatrix<Complex64>,
    pub y2: DMatrix<Complex64>,
    pub couplings: Vec<BranchCoupling>,
    /// Buses whose zero-sequence voltage is pinned to zero because their
    /// zero-sequence component has no path to ground.
    pub zero_pinned: Vec<bool>,
    zero_component: Vec<usize>,
}

impl SequenceYBus {
    pub fn len(&self) -> usize {
        self.bus_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bus_ids.is_empty()
    }

    pub fn position(&self, bus: BusId) -> Option<usize> {
        self.bus_ids.iter().position(|&b| b == bus)
    }

    pub fn matrix(&self, seq: Sequence) -> &DMatrix<Complex64> {
        match seq {
            Sequence::Zero => &self.y0,
            Sequence::Positive => &self.y1,
            Sequence::Negative => &self.y2,
        }
    }

    /// Add a shunt admittance to ground at a bus position.
    pub fn add_shunt(&mut self, seq: Sequence, pos: usize, y: Complex64) {
        match seq {
            Sequence::Zero => {
                self.y0[(pos, pos)] += y;
                let root = self.zero_component[pos];
                for (pin, &r) in self.zero_pinned.iter_mut().zip(&self.zero_component) {
                    if r == root {
                        *pin = false;
                    }
                }
            }
            Sequence::Positive => self.y1[(pos, pos)] += y,
            Sequence::Negative => self.y2[(pos, pos)] += y,
        }
    }
}

fn stamp_series(
    y: &mut DMatrix<Complex64>,
    f: usize,
    t: usize,
    ys: Complex64,
    half_b: Complex64,
    tap: f64,
) {
    y[(f, f)] += (ys + half_b) / (tap * tap);
    y[(t, t)] += ys + half_b;
    y[(f, t)] -= ys / tap;
    y[(t, f)] -= ys / tap;
}

struct Components {
    parent: Vec<usize>,
}

impl Components {
    fn new(n: usize) -> Self {
        Components {
            parent: (0..n).collect(),
        }
    }

    fn find(&mut self, x: usize) -> usize {
        let mut r = x;
        while self.parent[r] != r {
            r = self.parent[r];
        }
        let mut x = x;
        while self.parent[x] != r {
            let next = self.parent[x];
            self.parent[x] = r;
            x = next;
        }
        r
    }

    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            self.parent[ra.max(rb)] = ra.min(rb);
        }
    }

    /// Members of each component that contains no grounded bus.
    fn ungrounded(&mut self, grounded: &[bool]) -> Vec<Vec<usize>> {
        let n = self.parent.len();
        let mut has_ground = vec![false; n];
        for i in 0..n {
            if grounded[i] {
                let r = self.find(i);
                has_ground[r] = true;
            }
        }
        let mut groups: std::collections::BTreeMap<usize, Vec<usize>> = Default::default();
        for i in 0..n {
            let r = self.find(i);
            if !has_ground[r] {
                groups.entry(r).or_default().push(i);
            }
        }
        groups.into_values().collect()
    }
}

/// Assemble the zero-, positive- and negative-sequence bus admittance matrices.
pub fn build_sequence_ybus(case: &TransmissionCase) -> Result<SequenceYBus, TsolveError> {
    let n = case.buses.len();
    let index = case.bus_index();
    let pos = |id: BusId| index.get(&id).copied().ok_or(TsolveError::UnknownBus(id));
    let j = Complex64::new(0.0, 1.0);

    let mut y0 = DMatrix::from_element(n, n, ZERO);
    let mut y1 = DMatrix::from_element(n, n, ZERO);
    let mut y2 = DMatrix::from_element(n, n, ZERO);
    let mut ground0 = vec![false; n];
    let mut ground2 = vec![false; n];
    let mut comp0 = Components::new(n);
    let mut comp2 = Components::new(n);
    let mut couplings = Vec::new();

    for br in &case.branches {
        let (f, t) = (pos(br.from)?, pos(br.to)?);
        let half_b1 = j * (br.b1_shunt / 2.0);
        stamp_series(&mut y1, f, t, br.z1.inv(), half_b1, br.tap);
        stamp_series(&mut y2, f, t, br.z2.inv(), half_b1, br.tap);
        comp2.union(f, t);
        if br.b1_shunt != 0.0 || br.tap != 1.0 {
            ground2[f] = true;
            ground2[t] = true;
        }
        match br.zero_seq_path {
            ZeroSeqPath::Open => {}
            ZeroSeqPath::Grounded => {
                y0[(t, t)] += br.z0.inv();
                ground0[t] = true;
            }
            ZeroSeqPath::Through => {
                stamp_series(&mut y0, f, t, br.z0.inv(), j * (br.b0_shunt / 2.0), br.tap);
                comp0.union(f, t);
                if br.b0_shunt != 0.0 || br.tap != 1.0 {
                    ground0[f] = true;
                    ground0[t] = true;
                }
            }
        }
        if let Some(block) = br.coupling {
            couplings.push(BranchCoupling {
                from: f,
                to: t,
                block,
            });
        }
    }

    for g in &case.generators {
        let p = pos(g.bus)?;
        if let Some(z2) = g.z2 {
            y2[(p, p)] += z2.inv();
            ground2[p] = true;
        }
        if let Some(z0) = g.z0 {
            y0[(p, p)] += z0.inv();
            ground0[p] = true;
        }
    }

    let bus_ids: Vec<BusId> = case.buses.iter().map(|b| b.id).collect();
    if let Some(group) = comp2.ungrounded(&ground2).into_iter().next() {
        return Err(TsolveError::IsolatedSequenceNetwork {
            sequence: Sequence::Negative,
            buses: group.iter().map(|&i| bus_ids[i]).collect(),
        });
    }
    let mut zero_pinned = vec![false; n];
    for group in comp0.ungrounded(&ground0) {
        for i in group {
            zero_pinned[i] = true;
        }
    }

    let zero_component = (0..n).map(|i| comp0.find(i)).collect();

    Ok(SequenceYBus {
        bus_ids,
        y0,
        y1,
        y2,
        couplings,
        zero_pinned,
        zero_component,
    })
}

/// Solve `y · v = i` for the unpinned buses; pinned buses get `v = 0`.
fn solve_reduced(
    y: &DMatrix<Complex64>,
    pinned: &[bool],
    rhs: &[Complex64],
    sequence: Sequence,
) -> Result<Vec<Complex64>, TsolveError> {
    let free: Vec<usize> = (0..rhs.len()).filter(|&i| !pinned[i]).collect();
    let mut out = vec![ZERO; rhs.len()];
    if free.is_empty() {
        return Ok(out);
    }
    if free.iter().all(|&i| rhs[i] == ZERO) {
        return Ok(out);
    }
    let m = free.len();
    let a = DMatrix::from_fn(m, m, |r, c| y[(free[r], free[c])]);
    let b = DVector::from_iterator(m, free.iter().map(|&i| rhs[i]));
    let x = a
        .lu()
        .solve(&b)
        .ok_or(TsolveError::SingularSequenceMatrix { sequence })?;
    if x.iter().any(|c| !c.re.is_finite() || !c.im.is_finite()) {
        return Err(TsolveError::SingularSequenceMatrix { sequence });
    }
    for (k, &i) in free.iter().enumerate() {
        out[i] = x[k];
    }
    Ok(out)
}

/// Negative-sequence voltages from current injections.
pub fn solve_negative(
    ybus: &SequenceYBus,
    injections: &[Complex64],
) -> Result<Vec<Complex64>, TsolveError> {
    let none = vec![false; ybus.len()];
    solve_reduced(&ybus.y2, &none, injections, Sequence::Negative)
}

/// Zero-sequence voltages from current injections. Buses whose zero-sequence
/// component is isolated from ground stay at zero.
pub fn solve_zero(
    ybus: &SequenceYBus,
    injections: &[Complex64],
) -> Result<Vec<Complex64>, TsolveError> {
    solve_reduced(&ybus.y0, &ybus.zero_pinned, injections, Sequence::Zero)
}

/// Positive-sequence network treated as linear (no sources other than the
/// given injections). Used by the linear compensation loop.
pub fn solve_positive_linear(
    ybus: &SequenceYBus,
    injections: &[Complex64],
) -> Result<Vec<Complex64>, TsolveError> {
    let none = vec![false; ybus.len()];
    solve_reduced(&ybus.y1, &none, injections, Sequence::Positive)
}

/// Per-sequence current vectors, indexed by bus position.
#[derive(Debug, Clone, PartialEq)]
pub struct SequenceInjections {
    pub i0: Vec<Complex64>,
    pub i1: Vec<Complex64>,
    pub i2: Vec<Complex64>,
}

impl SequenceInjections {
    pub fn zeros(n: usize) -> Self {
        SequenceInjections {
            i0: vec![ZERO; n],
            i1: vec![ZERO; n],
            i2: vec![ZERO; n],
        }
    }

    fn get_mut(&mut self, k: usize) -> &mut Vec<Complex64> {
        match k {
            0 => &mut self.i0,
            1 => &mut self.i1,
            _ => &mut self.i2,
        }
    }
}

/// Current injections that stand in for the off-diagonal sequence coupling of
/// untransposed branches, evaluated at the given sequence voltages.
pub fn compensation_currents(
    couplings: &[BranchCoupling],
    v0: &[Complex64],
    v1: &[Complex64],
    v2: &[Complex64],
) -> SequenceInjections {
    let mut out = SequenceInjections::zeros(v1.len());
    for c in couplings {
        let dv = [
            v0[c.from] - v0[c.to],
            v1[c.from] - v1[c.to],
            v2[c.from] - v2[c.to],
        ];
        for k in 0..3 {
            let mut flow = ZERO;
            for m in 0..3 {
                if m != k {
                    flow += c.block[k][m] * dv[m];
                }
            }
            let inj = out.get_mut(k);
            inj[c.from] -= flow;
            inj[c.to] += flow;
        }
    }
    out
}

/// Solve a purely linear three-sequence network with coupling by iterating
/// decoupled solves with compensation currents.
pub fn solve_decoupled_linear(
    ybus: &SequenceYBus,
    injections: &SequenceInjections,
    tol: f64,
    max_iter: usize,
) -> Result<[Vec<Complex64>; 3], TsolveError> {
    let n = ybus.len();
    let mut v = [vec![ZERO; n], vec![ZERO; n], vec![ZERO; n]];
    let mut last_change = f64::INFINITY;
    for _ in 0..max_iter {
        let comp = compensation_currents(&ybus.couplings, &v[0], &v[1], &v[2]);
        let add = |a: &[Complex64], b: &[Complex64]| -> Vec<Complex64> {
            a.iter().zip(b).map(|(x, y)| x + y).collect()
        };
        let next = [
            solve_zero(ybus, &add(&injections.i0, &comp.i0))?,
            solve_positive_linear(ybus, &add(&injections.i1, &comp.i1))?,
            solve_negative(ybus, &add(&injections.i2, &comp.i2))?,
        ];
        last_change = max_change(&v, &next);
        v = next;
        if last_change < tol {
            return Ok(v);
        }
    }
    Err(TsolveError::SequenceLoopDiverged {
        passes: max_iter,
        last_change,
    })
}

fn max_change(a: &[Vec<Complex64>; 3], b: &[Vec<Complex64>; 3]) -> f64 {
    a.iter()
        .zip(b)
        .flat_map(|(x, y)| x.iter().zip(y).map(|(p, q)| (p - q).norm()))
        .fold(0.0, f64::max)
}

/// Complex power injected at every bus, `V · conj(Y · V)`.
pub fn bus_power_injections(y: &DMatrix<Complex64>, v: &[Complex64]) -> Vec<Complex64> {
    let vv = DVector::from_column_slice(v);
    let i = y * &vv;
    v.iter()
        .zip(i.iter())
        .map(|(vk, ik)| vk * ik.conj())
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NrOptions {
    pub tol: f64,
    pub max_iter: usize,
    pub enforce_q_limits: bool,
    pub max_q_switches: usize,
}

impl Default for NrOptions {
    fn default() -> Self {
        NrOptions {
            tol: 1e-8,
            max_iter: 30,
            enforce_q_limits: true,
            max_q_switches: 5,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NrOutcome {
    pub v: Vec<Complex64>,
    pub iterations: usize,
    pub mismatch: f64,
    /// Max-norm mismatch at every iteration of the final solve.
    pub history: Vec<f64>,
    /// PV buses converted to PQ by reactive-power limits.
    pub q_limited: Vec<BusId>,
}

struct PositiveProblem {
    kinds: Vec<BusKind>,
    s_spec: Vec<Complex64>,
    q_load: Vec<f64>,
    q_limits: Vec<(f64, f64)>,
    v_start: Vec<Complex64>,
}

fn positive_problem(
    case: &TransmissionCase,
    ybus: &SequenceYBus,
    extra_loads: &[Complex64],
    warm: Option<&[Complex64]>,
) -> Result<PositiveProblem, TsolveError> {
    if case.units != Units::PerUnit {
        return Err(TsolveError::NotPerUnit);
    }
    let n = ybus.len();
    let index = case.bus_index();
    let pos = |id: BusId| index.get(&id).copied().ok_or(TsolveError::UnknownBus(id));
    if case.slack_bus().is_none() {
        return Err(TsolveError::NoSlack);
    }

    let mut kinds: Vec<BusKind> = case.buses.iter().map(|b| b.kind).collect();
    let mut s_spec: Vec<Complex64> = extra_loads.iter().map(|s| -s).collect();
    let mut q_load: Vec<f64> = extra_loads.iter().map(|s| s.im).collect();
    let mut q_limits = vec![(0.0, 0.0); n];
    let mut has_gen = vec![false; n];
    for g in &case.generators {
        let p = pos(g.bus)?;
        s_spec[p] += Complex64::new(g.p_set, g.q_set);
        q_limits[p].0 += g.q_min;
        q_limits[p].1 += g.q_max;
        has_gen[p] = true;
    }
    for l in &case.loads {
        if let LoadKind::Lumped { p: pl, q: ql } = l.kind {
            let p = pos(l.bus)?;
            s_spec[p] -= Complex64::new(pl, ql);
            q_load[p] += ql;
        }
    }
    // A PV bus without a machine cannot hold its voltage.
    for (i, k) in kinds.iter_mut().enumerate() {
        if *k == BusKind::Pv && !has_gen[i] {
            *k = BusKind::Pq;
        }
    }

    let v_start = match warm {
        Some(w) => {
            let mut v = w.to_vec();
            for (i, b) in case.buses.iter().enumerate() {
                if kinds[i] != BusKind::Pq {
                    let vm = b.v_setpoint.unwrap_or(1.0);
                    v[i] = Complex64::from_polar(vm, v[i].arg());
                }
                if b.kind == BusKind::Slack {
                    v[i] = Complex64::from_polar(
                        b.v_setpoint.unwrap_or(1.0),
                        b.angle_setpoint.unwrap_or(0.0),
                    );
                }
            }
            v
        }
        None => case
            .buses
            .iter()
            .enumerate()
            .map(|(i, b)| match kinds[i] {
                BusKind::Pq => Complex64::new(1.0, 0.0),
                BusKind::Pv => Complex64::new(b.v_setpoint.unwrap_or(1.0), 0.0),
                BusKind::Slack => Complex64::from_polar(
                    b.v_setpoint.unwrap_or(1.0),
                    b.angle_setpoint.unwrap_or(0.0),
                ),
            })
            .collect(),
    };

    Ok(PositiveProblem {
        kinds,
        s_spec,
        q_load,
        q_limits,
        v_start,
    })
}

/// One Newton–Raphson solve with fixed bus classification.
fn newton(
    y: &DMatrix<Complex64>,
    kinds: &[BusKind],
    s_spec: &[Complex64],
    v_start: &[Complex64],
    opts: &NrOptions,
) -> Result<(Vec<Complex64>, Vec<f64>), TsolveError> {
    let n = v_start.len();
    let pvpq: Vec<usize> = (0..n).filter(|&i| kinds[i] != BusKind::Slack).collect();
    let pq: Vec<usize> = (0..n).filter(|&i| kinds[i] == BusKind::Pq).collect();
    let (npvpq, npq) = (pvpq.len(), pq.len());

    let mut va: Vec<f64> = v_start.iter().map(|v| v.arg()).collect();
    let mut vm: Vec<f64> = v_start.iter().map(|v| v.norm()).collect();
    let mut v: Vec<Complex64> = v_start.to_vec();
    let mut history = Vec::new();

    for iteration in 1..=opts.max_iter {
        let vv = DVector::from_column_slice(&v);
        let ibus = y * &vv;
        let mis: Vec<Complex64> = (0..n).map(|i| v[i] * ibus[i].conj() - s_spec[i]).collect();
        let f: Vec<f64> = pvpq
            .iter()
            .map(|&i| mis[i].re)
            .chain(pq.iter().map(|&i| mis[i].im))
            .collect();
        let norm = f.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        history.push(norm);
        if !norm.is_finite() {
            return Err(TsolveError::NrDiverged { history });
        }
        if norm < opts.tol {
            return Ok((v, history));
        }
        if iteration == opts.max_iter {
            break;
        }

        // dS/dVa = j·diag(V)·conj(diag(I) − Y·diag(V))
        // dS/dVm = diag(V)·conj(Y·diag(V/|V|)) + conj(diag(I))·diag(V/|V|)
        let vnorm: Vec<Complex64> = v.iter().map(|x| x / x.norm()).collect();
        let j = Complex64::new(0.0, 1.0);
        let ds_dva = |r: usize, c: usize| -> Complex64 {
            let diag = if r == c { ibus[r] } else { ZERO };
            j * v[r] * (diag - y[(r, c)] * v[c]).conj()
        };
        let ds_dvm = |r: usize, c: usize| -> Complex64 {
            let diag = if r == c {
                ibus[r].conj() * vnorm[r]
            } else {
                ZERO
            };
            v[r] * (y[(r, c)] * vnorm[c]).conj() + diag
        };
        let dim = npvpq + npq;
        let mut jac = DMatrix::<f64>::zeros(dim, dim);
        for (ri, &r) in pvpq.iter().enumerate() {
            for (ci, &c) in pvpq.iter().enumerate() {
                jac[(ri, ci)] = ds_dva(r, c).re;
            }
            for (ci, &c) in pq.iter().enumerate() {
                jac[(ri, npvpq + ci)] = ds_dvm(r, c).re;
            }
        }
        for (ri, &r) in pq.iter().enumerate() {
            for (ci, &c) in pvpq.iter().enumerate() {
                jac[(npvpq + ri, ci)] = ds_dva(r, c).im;
            }
            for (ci, &c) in pq.iter().enumerate() {
                jac[(npvpq + ri, npvpq + ci)] = ds_dvm(r, c).im;
            }
        }
        let rhs = DVector::from_vec(f);
        let dx = jac
            .lu()
            .solve(&rhs)
            .ok_or(TsolveError::SingularJacobian { iteration })?;
        for (k, &i) in pvpq.iter().enumerate() {
            va[i] -= dx[k];
        }
        for (k, &i) in pq.iter().enumerate() {
            vm[i] -= dx[npvpq + k];
        }
        for i in 0..n {
            v[i] = Complex64::from_polar(vm[i], va[i]);
        }
    }
    Err(TsolveError::NrDiverged { history })
}

/// Positive-sequence Newton–Raphson power flow.
///
/// `extra_loads` are per-bus complex loads (pu, indexed like `ybus`) on top of
/// the case's lumped loads. Reactive limits are enforced by switching violating
/// PV buses to PQ at the limit and re-solving, at most `max_q_switches` times.
pub fn nr_positive_sequence(
    ybus: &SequenceYBus,
    case: &TransmissionCase,
    extra_loads: &[Complex64],
    warm: Option<&[Complex64]>,
    opts: &NrOptions,
) -> Result<NrOutcome, TsolveError> {
    let mut prob = positive_problem(case, ybus, extra_loads, warm)?;
    let mut q_limited = Vec::new();
    let mut v_start = prob.v_start.clone();
    let mut switches = 0;
    loop {
        let (v, history) = newton(&ybus.y1, &prob.kinds, &prob.s_spec, &v_start, opts)?;
        let mut switched = false;
        if opts.enforce_q_limits && switches < opts.max_q_switches {
            let s = bus_power_injections(&ybus.y1, &v);
            for i in 0..v.len() {
                if prob.kinds[i] != BusKind::Pv {
                    continue;
                }
                let q_gen = s[i].im + prob.q_load[i];
                let (qmin, qmax) = prob.q_limits[i];
                let limit = if q_gen > qmax {
                    Some(qmax)
                } else if q_gen < qmin {
                    Some(qmin)
                } else {
                    None
                };
                if let Some(q) = limit {
                    prob.kinds[i] = BusKind::Pq;
                    prob.s_spec[i].im = q - prob.q_load[i];
                    q_limited.push(ybus.bus_ids[i]);
                    switched = true;
                }
            }
        }
        if !switched {
            let mismatch = history.last().copied().unwrap_or(0.0);
            return Ok(NrOutcome {
                iterations: history.len(),
                mismatch,
                history,
                v,
                q_limited,
            });
        }
        switches += 1;
        v_start = v;
    }
}

/// Sequence-frame representation of one constant-power PCC load.
///
/// `i2` and `i0` are currents injected into the network (the negative of the
/// current the load draws). `s1` is the positive-sequence load on the system
/// base, i.e. the three-phase total for a balanced load.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PccInjection {
    pub bus: BusId,
    pub s1: Complex64,
    pub i2: Complex64,
    pub i0: Complex64,
}

/// Turn per-phase PCC powers (MVA) at the given PCC phase voltages into
/// sequence-network terms on a `base_mva` system base.
pub fn pcc_load_to_injections(
    bus: BusId,
    s: PhasePowers,
    v_pcc: PhaseVoltages,
    base_mva: f64,
) -> Result<PccInjection, TsolveError> {
    // per-phase quantities use a per-phase base of base_mva / 3
    let s_phase_pu = s.scale(3.0 / base_mva);
    let i_abc = phase_currents_from_power(s_phase_pu, v_pcc)
        .map_err(|source| TsolveError::DegenerateVoltage { bus, source })?;
    let i012 = phase_to_sequence_currents(i_abc);
    let v1 = crate::seqxform::phase_to_sequence(v_pcc).v1;
    Ok(PccInjection {
        bus,
        s1: v1 * i012.i1.conj(),
        i2: -i012.i2,
        i0: -i012.i0,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SequenceOptions {
    pub nr: NrOptions,
    /// Settling tolerance (pu) on sequence voltages between passes.
    pub tol: f64,
    pub max_passes: usize,
}

impl Default for SequenceOptions {
    fn default() -> Self {
        SequenceOptions {
            nr: NrOptions::default(),
            tol: 1e-9,
            max_passes: 20,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SequenceSolution {
    pub bus_ids: Vec<BusId>,
    pub v0: Vec<Complex64>,
    pub v1: Vec<Complex64>,
    pub v2: Vec<Complex64>,
    /// Final positive-sequence max mismatch (pu).
    pub mismatch: f64,
    /// Newton–Raphson iterations in the final pass.
    pub iterations: usize,
    pub passes: usize,
    pub nr_history: Vec<f64>,
    pub q_limited: Vec<BusId>,
}

impl SequenceSolution {
    pub fn position(&self, bus: BusId) -> Option<usize> {
        self.bus_ids.iter().position(|&b| b == bus)
    }

    pub fn sequence_voltages(&self, bus: BusId) -> Option<SequenceVoltages> {
        let i = self.position(bus)?;
        Some(SequenceVoltages::new(self.v0[i], self.v1[i], self.v2[i]))
    }

    pub fn phase_voltages(&self, bus: BusId) -> Option<PhaseVoltages> {
        self.sequence_voltages(bus).map(sequence_to_phase)
    }
}

/// Full three-sequence power flow with unbalanced constant-power PCC loads
/// (per-phase MVA). `warm` seeds the positive-sequence voltages.
pub fn solve_three_sequence(
    case: &TransmissionCase,
    pcc_loads: &[(BusId, PhasePowers)],
    opts: &SequenceOptions,
    warm: Option<&SequenceSolution>,
) -> Result<SequenceSolution, TsolveError> {
    let ybus = build_sequence_ybus(case)?;
    solve_three_sequence_with(&ybus, case, pcc_loads, opts, warm)
}

/// As [`solve_three_sequence`] with a prebuilt admittance model.
pub fn solve_three_sequence_with(
    ybus: &SequenceYBus,
    case: &TransmissionCase,
    pcc_loads: &[(BusId, PhasePowers)],
    opts: &SequenceOptions,
    warm: Option<&SequenceSolution>,
) -> Result<SequenceSolution, TsolveError> {
    if case.units != Units::PerUnit {
        return Err(TsolveError::NotPerUnit);
    }
    let n = ybus.len();
    let mut pcc_pos = Vec::with_capacity(pcc_loads.len());
    for &(bus, s) in pcc_loads {
        let p = ybus.position(bus).ok_or(TsolveError::UnknownBus(bus))?;
        pcc_pos.push((bus, p, s));
    }
    let distinct: BTreeSet<usize> = pcc_pos.iter().map(|x| x.1).collect();
    debug_assert_eq!(distinct.len(), pcc_pos.len());

    let mut v1: Vec<Complex64> = match warm {
        Some(w) if w.v1.len() == n => w.v1.clone(),
        _ => positive_problem(case, ybus, &vec![ZERO; n], None)?.v_start,
    };
    let mut v2 = vec![ZERO; n];
    let mut v0 = vec![ZERO; n];
    let has_coupling = !ybus.couplings.is_empty();
    let mut warm_v1 = warm.filter(|w| w.v1.len() == n).map(|w| w.v1.clone());
    let mut last_change = f64::INFINITY;

    for pass in 1..=opts.max_passes {
        let mut extra = vec![ZERO; n];
        let mut i2 = vec![ZERO; n];
        let mut i0 = vec![ZERO; n];
        for &(bus, p, s) in &pcc_pos {
            let v_abc = sequence_to_phase(SequenceVoltages::new(v0[p], v1[p], v2[p]));
            let inj = pcc_load_to_injections(bus, s, v_abc, case.base_mva)?;
            extra[p] += inj.s1;
            i2[p] += inj.i2;
            i0[p] += inj.i0;
        }
        if has_coupling {
            let comp = compensation_currents(&ybus.couplings, &v0, &v1, &v2);
            for p in 0..n {
                // an injected current is a negative load
                extra[p] -= v1[p] * comp.i1[p].conj();
                i2[p] += comp.i2[p];
                i0[p] += comp.i0[p];
            }
        }

        let nr = nr_positive_sequence(ybus, case, &extra, warm_v1.as_deref(), &opts.nr)?;
        let (v2_new, v0_new) = rayon::join(|| solve_negative(ybus, &i2), || solve_zero(ybus, &i0));
        let next = [v0_new?, nr.v.clone(), v2_new?];
        let prev = [
            std::mem::take(&mut v0),
            std::mem::take(&mut v1),
            std::mem::take(&mut v2),
        ];
        last_change = max_change(&prev, &next);
        let [a, b, c] = next;
        v0 = a;
        v1 = b;
        v2 = c;
        warm_v1 = Some(v1.clone());

        if last_change < opts.tol {
            return Ok(SequenceSolution {
                bus_ids: ybus.bus_ids.clone(),
                v0,
                v1,
                v2,
                mismatch: nr.mismatch,
                iterations: nr.iterations,
                passes: pass,
                nr_history: nr.history,
                q_limited: nr.q_limited,
            });
        }
    }
    Err(TsolveError::SequenceLoopDiverged {
        passes: opts.max_passes,
        last_change,
    })
}
