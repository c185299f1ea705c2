//! Master algorithm: PCC boundary iteration within a time step, and the
//! dispatch / load-flow time coordination across steps.
//!
//! One coupling round is: transmission three-sequence solve with the current
//! PCC powers, convergence check on the PCC phase-voltage magnitudes, then
//! every feeder is swept (concurrently) at its PCC voltage and the resulting
//! head powers become the next round's PCC loads. The first round uses each
//! feeder's nominal aggregate demand as a balanced lumped load.

use std::collections::BTreeMap;
use std::time::{Duration, Instant};

use num_complex::Complex64;
use rayon::prelude::*;
use thiserror::Error;

use crate::dsolve::{
    apply_unbalance, sweep_solve, Feeder, FeederError, FeederSolution, SweepOptions,
};
use crate::ed::{dispatch, units_from_case, DispatchError, DispatchResult};
use crate::io::LoadshapeSeries;
use crate::netmodel::{
    to_per_unit, validate_case, BusId, LoadKind, NetError, TransmissionCase, Units, Violation,
};
use crate::seqxform::{Phase, PhasePowers, PhaseVoltages};
use crate::tsolve::{
    build_sequence_ybus, solve_three_sequence_with, SequenceOptions, SequenceSolution, TsolveError,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CosimError {
    #[error("invalid case: {}", .0.iter().map(|v| v.to_string()).collect::<Vec<_>>().join("; "))]
    InvalidCase(Vec<Violation>),
    #[error(transparent)]
    Units(#[from] NetError),
    #[error("bus {0} has a feeder attachment but no feeder was supplied")]
    MissingFeeder(BusId),
    #[error("feeder supplied for bus {0}, which has no feeder attachment")]
    UnattachedFeeder(BusId),
    #[error("round {round}: transmission solve failed: {source}")]
    Transmission { round: usize, source: TsolveError },
    #[error("round {round}: feeder at PCC bus {pcc} failed: {source}")]
    Feeder {
        round: usize,
        pcc: BusId,
        source: FeederError,
    },
    #[error("PCC voltages did not settle within {} rounds", .0.rounds())]
    NotConverged(Box<CouplingTrace>),
    #[error("dispatch failed: {0}")]
    Dispatch(#[from] DispatchError),
    #[error("unknown loadshape '{0}'")]
    UnknownLoadshape(String),
    #[error("loadshape '{id}' has no sample for minute {minute}")]
    LoadshapeGap { id: String, minute: u32 },
    #[error("bad time window: {0}")]
    BadWindow(String),
    #[error("coupling tolerance must be positive")]
    BadTolerance,
    #[error("feeder at bus {pcc}: {source}")]
    Unbalance { pcc: BusId, source: FeederError },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CouplingOptions {
    /// Convergence bound on successive PCC phase-voltage magnitudes (pu).
    pub eps: f64,
    pub max_rounds: usize,
    pub sequence: SequenceOptions,
    pub sweep: SweepOptions,
}

impl Default for CouplingOptions {
    fn default() -> Self {
        CouplingOptions {
            eps: 1e-4,
            max_rounds: 50,
            sequence: SequenceOptions::default(),
            sweep: SweepOptions::default(),
        }
    }
}

/// What crossed one PCC in one round.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundaryState {
    pub pcc: BusId,
    pub iteration: usize,
    /// Phase voltages from the transmission solve of this round.
    pub v_abc_sent: PhaseVoltages,
    /// Feeder head power computed at `v_abc_sent`; absent on the final round.
    pub s_abc_returned: Option<PhasePowers>,
}

/// One PCC row of one round, in the layout of a voltage-convergence table.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceEntry {
    pub iteration: usize,
    pub pcc: BusId,
    /// |V| per phase from this round's transmission solve.
    pub v_transmission: [f64; 3],
    /// |V| per phase at which the feeder was solved to produce the power the
    /// transmission solve of this round used. Absent on round 1 (bootstrap).
    pub v_distribution: Option<[f64; 3]>,
    /// Max over phases of the change in |V| since the previous round.
    pub mismatch: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct CouplingTrace {
    pub pccs: Vec<BusId>,
    pub entries: Vec<TraceEntry>,
    pub boundary: Vec<BoundaryState>,
    /// Round after which each PCC stayed within `eps`.
    pub per_pcc_iterations: BTreeMap<BusId, usize>,
    pub overall_iterations: usize,
    pub converged: bool,
}

impl CouplingTrace {
    pub fn rounds(&self) -> usize {
        self.entries.iter().map(|e| e.iteration).max().unwrap_or(0)
    }

    pub fn entries_for(&self, pcc: BusId) -> impl Iterator<Item = &TraceEntry> {
        self.entries.iter().filter(move |e| e.pcc == pcc)
    }

    fn finish(&mut self, eps: f64) {
        let rounds = self.rounds();
        for &pcc in &self.pccs {
            let mut n = rounds;
            for e in self.entries_for(pcc).collect::<Vec<_>>().into_iter().rev() {
                match e.mismatch {
                    Some(m) if m < eps => n = e.iteration,
                    _ => break,
                }
            }
            self.per_pcc_iterations.insert(pcc, n);
        }
        self.overall_iterations = self
            .per_pcc_iterations
            .values()
            .copied()
            .max()
            .unwrap_or(rounds);
    }
}

/// Converged state of one coupled time step.
#[derive(Debug, Clone, PartialEq)]
pub struct CoupledState {
    pub transmission: SequenceSolution,
    pub feeders: BTreeMap<BusId, FeederSolution>,
    /// PCC loads (MVA per phase) used by the final transmission solve.
    pub pcc_loads: BTreeMap<BusId, PhasePowers>,
    pub trace: CouplingTrace,
}

impl CoupledState {
    pub fn pcc_voltage(&self, bus: BusId) -> Option<PhaseVoltages> {
        self.transmission.phase_voltages(bus)
    }
}

fn check_feeders(
    case: &TransmissionCase,
    feeders: &BTreeMap<BusId, Feeder>,
) -> Result<(), CosimError> {
    let pccs = case.pcc_buses();
    for &bus in &pccs {
        if !feeders.contains_key(&bus) {
            return Err(CosimError::MissingFeeder(bus));
        }
    }
    for &bus in feeders.keys() {
        if !pccs.contains(&bus) {
            return Err(CosimError::UnattachedFeeder(bus));
        }
    }
    Ok(())
}

fn prepared_case(case: &TransmissionCase) -> Result<TransmissionCase, CosimError> {
    let violations = validate_case(case);
    if !violations.is_empty() {
        return Err(CosimError::InvalidCase(violations));
    }
    Ok(to_per_unit(case)?)
}

/// Generator setpoints from a dispatch, written into a per-unit case.
pub fn apply_dispatch(case: &mut TransmissionCase, result: &DispatchResult) {
    let k = match case.units {
        Units::PerUnit => 1.0 / case.base_mva,
        Units::Physical => 1.0,
    };
    for (g, p) in case.generators.iter_mut().zip(&result.p_set) {
        g.p_set = p * k;
    }
}

fn balanced_split(s: Complex64) -> PhasePowers {
    let third = s / 3.0;
    PhasePowers::new(third, third, third)
}

/// Iterate transmission and distribution solves at the PCCs until the PCC
/// phase-voltage magnitudes stop changing by more than `eps`.
pub fn couple_step(
    case: &TransmissionCase,
    feeders: &BTreeMap<BusId, Feeder>,
    dispatch_result: Option<&DispatchResult>,
    opts: &CouplingOptions,
) -> Result<CoupledState, CosimError> {
    if !(opts.eps > 0.0) {
        return Err(CosimError::BadTolerance);
    }
    let mut case = prepared_case(case)?;
    check_feeders(&case, feeders)?;
    if let Some(d) = dispatch_result {
        apply_dispatch(&mut case, d);
    }
    let ybus = build_sequence_ybus(&case)
        .map_err(|source| CosimError::Transmission { round: 0, source })?;

    let pccs: Vec<BusId> = feeders.keys().copied().collect();
    let mut loads: BTreeMap<BusId, PhasePowers> = feeders
        .iter()
        .map(|(&bus, f)| (bus, balanced_split(f.total_load())))
        .collect();
    let mut trace = CouplingTrace {
        pccs: pccs.clone(),
        ..Default::default()
    };
    let mut previous: Option<BTreeMap<BusId, PhaseVoltages>> = None;
    let mut warm: Option<SequenceSolution> = None;
    let mut feeder_solutions: BTreeMap<BusId, FeederSolution> = BTreeMap::new();

    for round in 1..=opts.max_rounds {
        let pcc_loads: Vec<(BusId, PhasePowers)> = loads.iter().map(|(&b, &s)| (b, s)).collect();
        let solution =
            solve_three_sequence_with(&ybus, &case, &pcc_loads, &opts.sequence, warm.as_ref())
                .map_err(|source| CosimError::Transmission { round, source })?;

        let sent: BTreeMap<BusId, PhaseVoltages> = pccs
            .iter()
            .map(|&b| {
                (
                    b,
                    solution.phase_voltages(b).expect("PCC bus is in the case"),
                )
            })
            .collect();

        let mut all_within = previous.is_some();
        for &bus in &pccs {
            let now = sent[&bus].magnitudes();
            let before = previous.as_ref().map(|p| p[&bus].magnitudes());
            let mismatch =
                before.map(|b| (0..3).map(|k| (now[k] - b[k]).abs()).fold(0.0, f64::max));
            if !mismatch.is_some_and(|m| m < opts.eps) {
                all_within = false;
            }
            trace.entries.push(TraceEntry {
                iteration: round,
                pcc: bus,
                v_transmission: now,
                v_distribution: before,
                mismatch,
            });
        }

        if all_within {
            for &bus in &pccs {
                trace.boundary.push(BoundaryState {
                    pcc: bus,
                    iteration: round,
                    v_abc_sent: sent[&bus],
                    s_abc_returned: None,
                });
            }
            trace.converged = true;
            trace.finish(opts.eps);
            return Ok(CoupledState {
                transmission: solution,
                feeders: feeder_solutions,
                pcc_loads: loads,
                trace,
            });
        }

        let jobs: Vec<(BusId, &Feeder, PhaseVoltages)> =
            pccs.iter().map(|&b| (b, &feeders[&b], sent[&b])).collect();
        let solved: Vec<(BusId, Result<FeederSolution, FeederError>)> = jobs
            .into_par_iter()
            .map(|(bus, feeder, v)| (bus, sweep_solve(feeder, v, &opts.sweep)))
            .collect();
        feeder_solutions.clear();
        for (bus, result) in solved {
            let sol = result.map_err(|source| CosimError::Feeder {
                round,
                pcc: bus,
                source,
            })?;
            trace.boundary.push(BoundaryState {
                pcc: bus,
                iteration: round,
                v_abc_sent: sent[&bus],
                s_abc_returned: Some(sol.head_power),
            });
            loads.insert(bus, sol.head_power);
            feeder_solutions.insert(bus, sol);
        }
        previous = Some(sent);
        warm = Some(solution);
    }

    trace.finish(opts.eps);
    Err(CosimError::NotConverged(Box::new(trace)))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum FailPolicy {
    #[default]
    Abort,
    Continue,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeSeriesOptions {
    pub start_min: u32,
    pub horizon_min: u32,
    pub ed_interval_min: u32,
    pub pf_interval_min: u32,
    pub coupling: CouplingOptions,
    pub on_fail: FailPolicy,
}

impl TimeSeriesOptions {
    pub fn new(start_min: u32, horizon_min: u32) -> Self {
        TimeSeriesOptions {
            start_min,
            horizon_min,
            ed_interval_min: 5,
            pf_interval_min: 1,
            coupling: CouplingOptions::default(),
            on_fail: FailPolicy::Abort,
        }
    }

    fn check(&self) -> Result<(), CosimError> {
        if self.horizon_min == 0 {
            return Err(CosimError::BadWindow("horizon must be positive".into()));
        }
        if self.pf_interval_min == 0 || self.ed_interval_min == 0 {
            return Err(CosimError::BadWindow("intervals must be positive".into()));
        }
        if !self.ed_interval_min.is_multiple_of(self.pf_interval_min) {
            return Err(CosimError::BadWindow(
                "load-flow interval must divide the dispatch interval".into(),
            ));
        }
        if !self.horizon_min.is_multiple_of(self.pf_interval_min) {
            return Err(CosimError::BadWindow(
                "load-flow interval must divide the horizon".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RunMode {
    Coupled,
    Decoupled,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PccReport {
    pub bus: BusId,
    pub v_transmission: PhaseVoltages,
    /// Head voltage of the feeder solve whose power the final transmission
    /// solve used; absent in decoupled runs.
    pub v_distribution: Option<PhaseVoltages>,
    /// Load seen by the transmission model (MVA per phase).
    pub s: PhasePowers,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepResult {
    pub minute: u32,
    /// Whether the dispatch was recomputed at this step.
    pub dispatched: bool,
    pub dispatch: DispatchResult,
    pub transmission: Option<SequenceSolution>,
    pub feeders: BTreeMap<BusId, FeederSolution>,
    pub pcc: Vec<PccReport>,
    pub trace: CouplingTrace,
    pub failure: Option<String>,
    pub wall_time: Duration,
}

impl StepResult {
    pub fn converged(&self) -> bool {
        self.failure.is_none()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CosimResult {
    pub mode: RunMode,
    pub steps: Vec<StepResult>,
    pub dispatch_count: usize,
    /// False when the run stopped early on a failed step.
    pub completed: bool,
}

impl CosimResult {
    pub fn coupled_solves(&self) -> usize {
        match self.mode {
            RunMode::Coupled => self.steps.iter().filter(|s| s.converged()).count(),
            RunMode::Decoupled => 0,
        }
    }

    pub fn mean_wall_time(&self) -> Duration {
        if self.steps.is_empty() {
            return Duration::ZERO;
        }
        self.steps.iter().map(|s| s.wall_time).sum::<Duration>() / self.steps.len() as u32
    }
}

pub type Loadshapes = BTreeMap<String, LoadshapeSeries>;

fn multiplier(shapes: &Loadshapes, id: Option<&String>, minute: u32) -> Result<f64, CosimError> {
    match id {
        None => Ok(1.0),
        Some(id) => {
            let series = shapes
                .get(id)
                .ok_or_else(|| CosimError::UnknownLoadshape(id.clone()))?;
            series.at(minute).ok_or_else(|| CosimError::LoadshapeGap {
                id: id.clone(),
                minute,
            })
        }
    }
}

/// Case and feeders with every load scaled by its loadshape at `minute`.
fn scaled_inputs(
    case: &TransmissionCase,
    feeders: &BTreeMap<BusId, Feeder>,
    shapes: &Loadshapes,
    minute: u32,
) -> Result<(TransmissionCase, BTreeMap<BusId, Feeder>), CosimError> {
    let mut case = case.clone();
    let mut scaled = BTreeMap::new();
    for load in &mut case.loads {
        let k = multiplier(shapes, load.loadshape.as_ref(), minute)?;
        match &mut load.kind {
            LoadKind::Lumped { p, q } => {
                *p *= k;
                *q *= k;
            }
            LoadKind::Feeder(_) => {
                if let Some(f) = feeders.get(&load.bus) {
                    scaled.insert(load.bus, f.scaled(k));
                }
            }
        }
    }
    Ok((case, scaled))
}

/// Forecast system demand (MW) for dispatch: lumped loads plus feeder totals.
fn forecast_demand(case: &TransmissionCase, feeders: &BTreeMap<BusId, Feeder>) -> f64 {
    let k = match case.units {
        Units::PerUnit => case.base_mva,
        Units::Physical => 1.0,
    };
    case.lumped_demand().re * k + feeders.values().map(|f| f.total_load().re).sum::<f64>()
}

/// Dispatch for the given (already scaled) case and feeders.
pub fn dispatch_for(
    case: &TransmissionCase,
    feeders: &BTreeMap<BusId, Feeder>,
) -> Result<DispatchResult, CosimError> {
    Ok(dispatch(
        &units_from_case(case),
        forecast_demand(case, feeders),
    )?)
}

fn pcc_reports(state: &CoupledState) -> Vec<PccReport> {
    state
        .pcc_loads
        .iter()
        .map(|(&bus, &s)| PccReport {
            bus,
            v_transmission: state.pcc_voltage(bus).expect("PCC bus is in the case"),
            v_distribution: state.feeders.get(&bus).map(|f| f.head_voltage()),
            s,
        })
        .collect()
}

fn step_minutes(opts: &TimeSeriesOptions) -> impl Iterator<Item = (u32, bool)> + '_ {
    (0..opts.horizon_min / opts.pf_interval_min).map(move |k| {
        let offset = k * opts.pf_interval_min;
        (
            opts.start_min + offset,
            offset.is_multiple_of(opts.ed_interval_min),
        )
    })
}

fn coupled_step_result(
    minute: u32,
    dispatched: bool,
    d: DispatchResult,
    case: &TransmissionCase,
    feeders: &BTreeMap<BusId, Feeder>,
    opts: &CouplingOptions,
) -> StepResult {
    let outcome = couple_step(case, feeders, Some(&d), opts);
    let mut step = StepResult {
        minute,
        dispatched,
        dispatch: d,
        transmission: None,
        feeders: BTreeMap::new(),
        pcc: Vec::new(),
        trace: CouplingTrace::default(),
        failure: None,
        wall_time: Duration::ZERO,
    };
    match outcome {
        Ok(state) => {
            step.pcc = pcc_reports(&state);
            step.transmission = Some(state.transmission);
            step.feeders = state.feeders;
            step.trace = state.trace;
        }
        Err(err) => {
            if let CosimError::NotConverged(trace) = &err {
                step.trace = (**trace).clone();
            }
            step.failure = Some(err.to_string());
        }
    }
    step
}

/// Dispatch at nominal demand followed by one coupled step, reported as
/// minute 0. Loadshapes are ignored.
pub fn run_snapshot(
    case: &TransmissionCase,
    feeders: &BTreeMap<BusId, Feeder>,
    opts: &CouplingOptions,
) -> Result<CosimResult, CosimError> {
    let base = prepared_case(case)?;
    check_feeders(&base, feeders)?;
    let started = Instant::now();
    let d = dispatch_for(&base, feeders)?;
    let mut step = coupled_step_result(0, true, d, &base, feeders, opts);
    step.wall_time = started.elapsed();
    let completed = step.converged();
    Ok(CosimResult {
        mode: RunMode::Coupled,
        steps: vec![step],
        dispatch_count: 1,
        completed,
    })
}

/// Time-series co-simulation: dispatch every `ed_interval_min`, coupled load
/// flow every `pf_interval_min`. A step only completes once its boundary
/// iteration has converged.
pub fn run_timeseries(
    case: &TransmissionCase,
    feeders: &BTreeMap<BusId, Feeder>,
    shapes: &Loadshapes,
    opts: &TimeSeriesOptions,
) -> Result<CosimResult, CosimError> {
    opts.check()?;
    let base = prepared_case(case)?;
    check_feeders(&base, feeders)?;

    let mut steps = Vec::new();
    let mut dispatch_count = 0;
    let mut current: Option<DispatchResult> = None;
    let mut completed = true;
    for (minute, ed_now) in step_minutes(opts) {
        let started = Instant::now();
        let (case_t, feeders_t) = scaled_inputs(&base, feeders, shapes, minute)?;
        if ed_now || current.is_none() {
            current = Some(dispatch_for(&case_t, &feeders_t)?);
            dispatch_count += 1;
        }
        let d = current.clone().expect("dispatch computed above");
        let mut step = coupled_step_result(minute, ed_now, d, &case_t, &feeders_t, &opts.coupling);
        step.wall_time = started.elapsed();
        let failed = step.failure.is_some();
        steps.push(step);
        if failed && opts.on_fail == FailPolicy::Abort {
            completed = false;
            break;
        }
    }
    Ok(CosimResult {
        mode: RunMode::Coupled,
        steps,
        dispatch_count,
        completed,
    })
}

/// Transmission-only baseline solved at the dispatch cadence, with every
/// feeder replaced by its aggregate demand as a balanced lumped load.
pub fn run_decoupled_baseline(
    case: &TransmissionCase,
    feeders: &BTreeMap<BusId, Feeder>,
    shapes: &Loadshapes,
    opts: &TimeSeriesOptions,
) -> Result<CosimResult, CosimError> {
    opts.check()?;
    let base = prepared_case(case)?;
    check_feeders(&base, feeders)?;
    let ybus = build_sequence_ybus(&base)
        .map_err(|source| CosimError::Transmission { round: 0, source })?;

    let mut steps = Vec::new();
    let mut completed = true;
    for (minute, ed_now) in step_minutes(opts) {
        if !ed_now {
            continue;
        }
        let started = Instant::now();
        let (mut case_t, feeders_t) = scaled_inputs(&base, feeders, shapes, minute)?;
        let d = dispatch_for(&case_t, &feeders_t)?;
        apply_dispatch(&mut case_t, &d);
        let lumped: BTreeMap<BusId, PhasePowers> = feeders_t
            .iter()
            .map(|(&b, f)| (b, balanced_split(f.total_load())))
            .collect();
        let pcc_loads: Vec<(BusId, PhasePowers)> = lumped.iter().map(|(&b, &s)| (b, s)).collect();
        let mut step = StepResult {
            minute,
            dispatched: true,
            dispatch: d,
            transmission: None,
            feeders: BTreeMap::new(),
            pcc: Vec::new(),
            trace: CouplingTrace::default(),
            failure: None,
            wall_time: Duration::ZERO,
        };
        match solve_three_sequence_with(&ybus, &case_t, &pcc_loads, &opts.coupling.sequence, None) {
            Ok(sol) => {
                step.pcc = lumped
                    .iter()
                    .map(|(&bus, &s)| PccReport {
                        bus,
                        v_transmission: sol.phase_voltages(bus).expect("PCC bus is in the case"),
                        v_distribution: None,
                        s,
                    })
                    .collect();
                step.transmission = Some(sol);
            }
            Err(e) => step.failure = Some(e.to_string()),
        }
        step.wall_time = started.elapsed();
        let failed = step.failure.is_some();
        steps.push(step);
        if failed && opts.on_fail == FailPolicy::Abort {
            completed = false;
            break;
        }
    }
    let dispatch_count = steps.len();
    Ok(CosimResult {
        mode: RunMode::Decoupled,
        steps,
        dispatch_count,
        completed,
    })
}

/// One per-minute, per-phase comparison of coupled and decoupled PCC voltage.
#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonRow {
    pub minute: u32,
    pub pcc: BusId,
    pub phase: Phase,
    pub coupled: f64,
    /// Most recent baseline value at or before `minute`.
    pub decoupled: f64,
}

pub fn compare_runs(coupled: &CosimResult, decoupled: &CosimResult) -> Vec<ComparisonRow> {
    let mut rows = Vec::new();
    for step in coupled.steps.iter().filter(|s| s.converged()) {
        let Some(base) = decoupled
            .steps
            .iter()
            .rfind(|b| b.minute <= step.minute && b.converged())
        else {
            continue;
        };
        for pcc in &step.pcc {
            let Some(other) = base.pcc.iter().find(|p| p.bus == pcc.bus) else {
                continue;
            };
            let (a, b) = (
                pcc.v_transmission.magnitudes(),
                other.v_transmission.magnitudes(),
            );
            for phase in Phase::ALL {
                rows.push(ComparisonRow {
                    minute: step.minute,
                    pcc: pcc.bus,
                    phase,
                    coupled: a[phase.index()],
                    decoupled: b[phase.index()],
                });
            }
        }
    }
    rows
}

/// Largest |coupled − decoupled| voltage magnitude over a comparison.
pub fn max_deviation(rows: &[ComparisonRow]) -> f64 {
    rows.iter()
        .map(|r| (r.coupled - r.decoupled).abs())
        .fold(0.0, f64::max)
}

#[derive(Debug, Clone, PartialEq)]
pub struct UnbalanceRow {
    pub alpha: f64,
    /// Iterations per PCC, in `UnbalanceTable::pccs` order; `None` on failure.
    pub per_pcc: Vec<Option<usize>>,
    pub overall: Option<usize>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct UnbalanceTable {
    pub pccs: Vec<BusId>,
    pub rows: Vec<UnbalanceRow>,
}

/// Coupling iteration counts under increasing load unbalance.
pub fn sweep_unbalance(
    case: &TransmissionCase,
    feeders: &BTreeMap<BusId, Feeder>,
    alphas: &[f64],
    dispatch_result: Option<&DispatchResult>,
    opts: &CouplingOptions,
) -> Result<UnbalanceTable, CosimError> {
    let pccs: Vec<BusId> = feeders.keys().copied().collect();
    let mut rows = Vec::new();
    for &alpha in alphas {
        let mut shaped = BTreeMap::new();
        for (&bus, f) in feeders {
            let g = apply_unbalance(f, alpha)
                .map_err(|source| CosimError::Unbalance { pcc: bus, source })?;
            shaped.insert(bus, g);
        }
        let row = match couple_step(case, &shaped, dispatch_result, opts) {
            Ok(state) => UnbalanceRow {
                alpha,
                per_pcc: pccs
                    .iter()
                    .map(|b| state.trace.per_pcc_iterations.get(b).copied())
                    .collect(),
                overall: Some(state.trace.overall_iterations),
                error: None,
            },
            Err(e) => UnbalanceRow {
                alpha,
                per_pcc: vec![None; pccs.len()],
                overall: None,
                error: Some(e.to_string()),
            },
        };
        rows.push(row);
    }
    Ok(UnbalanceTable { pccs, rows })
}
