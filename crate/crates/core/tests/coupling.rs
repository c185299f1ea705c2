mod common;

use std::collections::BTreeMap;

use common::*;
use tdcosim::cosim::*;
use tdcosim::dsolve::{synth_feeder, Feeder, SynthSpec};
use tdcosim::io::{load_case_with_feeders, LoadshapeSeries};
use tdcosim::netmodel::{to_per_unit, BusId, TransmissionCase};
use tdcosim::seqxform::PhasePowers;
use tdcosim::tsolve::{solve_three_sequence, SequenceOptions};

fn system(name: &str) -> (TransmissionCase, BTreeMap<BusId, Feeder>) {
    let (doc, feeders) = load_case_with_feeders(&data(name)).unwrap();
    (doc.case, feeders)
}

fn small_system() -> (TransmissionCase, BTreeMap<BusId, Feeder>) {
    let (case, _) = system("case9_ts1.td");
    let f = synth_feeder(&SynthSpec::new(40, 45.0, 12.0, 34.5, 5)).unwrap();
    (case, BTreeMap::from([(6, f)]))
}

fn flat_shapes(minutes: usize) -> Loadshapes {
    Loadshapes::from([(
        "loadshape_daily".to_string(),
        LoadshapeSeries::flat("loadshape_daily", minutes),
    )])
}

#[test]
fn zero_load_feeder_converges_in_two_rounds_at_no_load_voltage() {
    let (case, feeders) = small_system();
    let idle: BTreeMap<_, _> = feeders.iter().map(|(&b, f)| (b, f.scaled(0.0))).collect();
    let state = couple_step(&case, &idle, None, &CouplingOptions::default()).unwrap();
    assert_eq!(state.trace.overall_iterations, 2);
    let mut bare = to_per_unit(&case).unwrap();
    bare.loads.retain(|l| l.bus != 6);
    let reference = solve_three_sequence(&bare, &[], &SequenceOptions::default(), None).unwrap();
    let got = state.pcc_voltage(6).unwrap().to_array();
    let want = reference.phase_voltages(6).unwrap().to_array();
    for k in 0..3 {
        assert!((got[k] - want[k]).norm() < 1e-9);
    }
}

#[test]
fn converged_state_is_a_fixed_point() {
    let (case, feeders) = system("case9_ts2.td");
    let opts = CouplingOptions::default();
    let state = couple_step(&case, &feeders, None, &opts).unwrap();
    let t = &state.trace;
    assert!(t.converged);
    let last = t.rounds();
    for &pcc in &t.pccs {
        let e = t.entries_for(pcc).find(|e| e.iteration == last).unwrap();
        assert!(e.mismatch.unwrap() < opts.eps);
        // the transmission load is the latest feeder head power, verbatim
        assert_eq!(state.pcc_loads[&pcc], state.feeders[&pcc].head_power);
        let sent = t
            .boundary
            .iter()
            .rfind(|b| b.pcc == pcc && b.s_abc_returned.is_some())
            .unwrap();
        assert_eq!(sent.s_abc_returned.unwrap(), state.pcc_loads[&pcc]);
    }
    let max = t.per_pcc_iterations.values().max().copied().unwrap();
    assert_eq!(t.overall_iterations, max);
}

#[test]
fn traces_do_not_depend_on_thread_count() {
    let (case, feeders) = system("case9_ts2.td");
    let run = |threads: usize| {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap();
        pool.install(|| couple_step(&case, &feeders, None, &CouplingOptions::default()).unwrap())
    };
    let (a, b) = (run(1), run(4));
    assert_eq!(a.trace, b.trace);
    assert_eq!(a.transmission, b.transmission);
}

#[test]
fn non_convergence_reports_the_trace() {
    let (case, feeders) = small_system();
    let opts = CouplingOptions {
        max_rounds: 1,
        ..CouplingOptions::default()
    };
    match couple_step(&case, &feeders, None, &opts) {
        Err(CosimError::NotConverged(trace)) => {
            assert_eq!(trace.rounds(), 1);
            assert!(!trace.converged);
        }
        other => panic!("expected non-convergence, got {other:?}"),
    }
}

#[test]
fn missing_and_unattached_feeders_are_rejected() {
    let (case, feeders) = small_system();
    assert_eq!(
        couple_step(&case, &BTreeMap::new(), None, &CouplingOptions::default()).unwrap_err(),
        CosimError::MissingFeeder(6)
    );
    let mut extra = feeders.clone();
    extra.insert(5, feeders[&6].clone());
    assert_eq!(
        couple_step(&case, &extra, None, &CouplingOptions::default()).unwrap_err(),
        CosimError::UnattachedFeeder(5)
    );
}

#[test]
fn flat_loadshape_steps_repeat_the_snapshot() {
    let (case, feeders) = small_system();
    let snap = run_snapshot(&case, &feeders, &CouplingOptions::default()).unwrap();
    let opts = TimeSeriesOptions::new(0, 10);
    let ts = run_timeseries(&case, &feeders, &flat_shapes(1440), &opts).unwrap();
    assert_eq!(ts.steps.len(), 10);
    for step in &ts.steps {
        assert_eq!(step.pcc, snap.steps[0].pcc);
        assert_eq!(step.trace, snap.steps[0].trace);
    }
}

#[test]
fn dispatch_cadence_counts() {
    let (case, feeders) = small_system();
    for (start, horizon) in [(0, 60), (1245, 60), (7, 13), (100, 1)] {
        let opts = TimeSeriesOptions::new(start, horizon);
        let ts = run_timeseries(&case, &feeders, &flat_shapes(1440), &opts).unwrap();
        assert_eq!(ts.coupled_solves(), horizon as usize);
        assert_eq!(ts.dispatch_count, (horizon as usize).div_ceil(5));
        assert_eq!(
            ts.steps.iter().filter(|s| s.dispatched).count(),
            ts.dispatch_count
        );
        let base = run_decoupled_baseline(&case, &feeders, &flat_shapes(1440), &opts).unwrap();
        assert_eq!(base.steps.len(), ts.dispatch_count);
    }
}

#[test]
fn bad_windows_are_rejected() {
    let (case, feeders) = small_system();
    let shapes = flat_shapes(1440);
    let zero = TimeSeriesOptions::new(0, 0);
    assert!(matches!(
        run_timeseries(&case, &feeders, &shapes, &zero),
        Err(CosimError::BadWindow(_))
    ));
    let mut uneven = TimeSeriesOptions::new(0, 60);
    uneven.pf_interval_min = 2;
    uneven.ed_interval_min = 5;
    assert!(matches!(
        run_timeseries(&case, &feeders, &shapes, &uneven),
        Err(CosimError::BadWindow(_))
    ));
    let past_end = TimeSeriesOptions::new(1430, 20);
    assert!(matches!(
        run_timeseries(&case, &feeders, &shapes, &past_end),
        Err(CosimError::LoadshapeGap { minute: 1440, .. })
    ));
}

#[test]
fn failure_policy_controls_progress() {
    let (case, feeders) = small_system();
    let mut opts = TimeSeriesOptions::new(0, 4);
    opts.coupling.max_rounds = 1;
    let aborted = run_timeseries(&case, &feeders, &flat_shapes(1440), &opts).unwrap();
    assert_eq!(aborted.steps.len(), 1);
    assert!(!aborted.completed);
    assert_eq!(aborted.coupled_solves(), 0);

    opts.on_fail = FailPolicy::Continue;
    let continued = run_timeseries(&case, &feeders, &flat_shapes(1440), &opts).unwrap();
    assert_eq!(continued.steps.len(), 4);
    assert!(continued.steps.iter().all(|s| !s.converged()));
}

#[test]
fn decoupled_baseline_matches_coupled_for_idle_feeders() {
    let (case, feeders) = small_system();
    let idle: BTreeMap<_, _> = feeders.iter().map(|(&b, f)| (b, f.scaled(0.0))).collect();
    let opts = TimeSeriesOptions::new(0, 10);
    let shapes = flat_shapes(1440);
    let coupled = run_timeseries(&case, &idle, &shapes, &opts).unwrap();
    let base = run_decoupled_baseline(&case, &idle, &shapes, &opts).unwrap();
    let rows = compare_runs(&coupled, &base);
    assert_eq!(rows.len(), 10 * 3);
    assert!(max_deviation(&rows) < opts.coupling.eps);

    let loaded_coupled = run_timeseries(&case, &feeders, &shapes, &opts).unwrap();
    let loaded_base = run_decoupled_baseline(&case, &feeders, &shapes, &opts).unwrap();
    assert!(max_deviation(&compare_runs(&loaded_coupled, &loaded_base)) > 0.0);
}

#[test]
fn single_alpha_sweep_equals_snapshot() {
    let (case, feeders) = small_system();
    let opts = CouplingOptions::default();
    let table = sweep_unbalance(&case, &feeders, &[0.0], None, &opts).unwrap();
    let state = couple_step(&case, &feeders, None, &opts).unwrap();
    assert_eq!(table.rows.len(), 1);
    assert_eq!(table.rows[0].overall, Some(state.trace.overall_iterations));
    assert_eq!(
        table.rows[0].per_pcc,
        vec![state.trace.per_pcc_iterations.get(&6).copied()]
    );
}

#[test]
fn loadshape_scales_feeder_and_lumped_demand() {
    let (case, feeders) = small_system();
    let mut shape = LoadshapeSeries::flat("loadshape_daily", 1440);
    shape.samples[3] = 0.5;
    let shapes = Loadshapes::from([(shape.id.clone(), shape)]);
    let ts = run_timeseries(&case, &feeders, &shapes, &TimeSeriesOptions::new(0, 5)).unwrap();
    let full: PhasePowers = ts.steps[2].pcc[0].s;
    let half: PhasePowers = ts.steps[3].pcc[0].s;
    assert!(half.total().re < 0.6 * full.total().re);
    // demand for dispatch follows the multiplier only at dispatch instants
    assert!(ts.steps[0].dispatched && !ts.steps[3].dispatched);
}
