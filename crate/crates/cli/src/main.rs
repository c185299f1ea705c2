//! `tdcosim` command-line front end.
//!
//! Exit status: 0 success, 1 numerical non-convergence, 2 input error.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};

use tdcosim::cosim::{
    compare_runs, max_deviation, run_decoupled_baseline, run_snapshot, run_timeseries,
    sweep_unbalance, CosimError, CosimResult, CouplingOptions, FailPolicy, Loadshapes,
    TimeSeriesOptions,
};
use tdcosim::dsolve::{apply_unbalance, synth_feeder, Feeder, SynthSpec};
use tdcosim::io::{self, DocumentKind, IoError};
use tdcosim::netmodel::{validate_case, BusId, LoadKind, TransmissionCase};

#[derive(Parser)]
#[command(
    name = "tdcosim",
    version,
    about = "Coupled transmission-distribution power-flow co-simulation"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// One coupled solve at nominal load; prints the PCC voltage iteration table.
    Snapshot {
        #[command(flatten)]
        common: Common,
        /// Load unbalance applied to every feeder (0 to 0.5).
        #[arg(long, default_value_t = 0.0)]
        alpha: f64,
    },
    /// Time-series run with dispatch and coupled load flow.
    Timeseries {
        #[command(flatten)]
        common: Common,
        /// Loadshape CSV files; ids are the file stems. Defaults to `<id>.csv`
        /// next to the case file for every id the case references.
        #[arg(long = "loadshape", value_name = "PATH")]
        loadshapes: Vec<PathBuf>,
        /// First minute of the window.
        #[arg(long, default_value_t = 0)]
        start: u32,
        /// Window length in minutes.
        #[arg(long, default_value_t = 60)]
        horizon: u32,
        #[arg(long, default_value_t = 5)]
        ed_interval: u32,
        #[arg(long, default_value_t = 1)]
        pf_interval: u32,
        /// Also run the transmission-only baseline and write comparison.csv.
        #[arg(long)]
        decoupled: bool,
        #[arg(long, value_enum, default_value_t = OnFail::Abort)]
        on_fail: OnFail,
    },
    /// Coupling iteration counts for a list of unbalance levels.
    SweepUnbalance {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_delimiter = ',', default_value = "0,0.05,0.10,0.15")]
        alphas: Vec<f64>,
    },
    /// Parse and check case, feeder and loadshape files.
    Validate {
        #[arg(required = true)]
        paths: Vec<PathBuf>,
    },
    /// Write a seeded synthetic radial feeder.
    SynthFeeder {
        #[arg(long, default_value_t = 500)]
        nodes: usize,
        #[arg(long, default_value_t = 52.1)]
        p_mw: f64,
        #[arg(long, default_value_t = 11.7)]
        q_mvar: f64,
        #[arg(long, default_value_t = 34.5)]
        kv: f64,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, default_value = "synthetic")]
        id: String,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    case: PathBuf,
    /// Extra feeder binding, `PATH@BUS`; replaces whatever load the bus has.
    #[arg(long = "feeder", value_name = "PATH@BUS")]
    feeders: Vec<String>,
    /// Coupling tolerance on PCC voltage magnitude (pu).
    #[arg(long, default_value_t = 1e-4)]
    eps: f64,
    #[arg(long, default_value_t = 50)]
    max_rounds: usize,
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Worker threads for feeder solves (0 = all cores). TDCOSIM_JOBS overrides.
    #[arg(long, default_value_t = 0)]
    jobs: usize,
}

#[derive(Clone, Copy, ValueEnum)]
enum OnFail {
    Abort,
    Continue,
}

enum Failure {
    Input(anyhow::Error),
    Numerical(anyhow::Error),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Input(e)
    }
}

impl From<IoError> for Failure {
    fn from(e: IoError) -> Self {
        Failure::Input(e.into())
    }
}

impl From<CosimError> for Failure {
    fn from(e: CosimError) -> Self {
        match e {
            CosimError::NotConverged(_)
            | CosimError::Transmission { .. }
            | CosimError::Feeder { .. } => Failure::Numerical(e.into()),
            _ => Failure::Input(e.into()),
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Numerical(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
        Err(Failure::Input(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn init_threads(jobs: usize) -> Result<(), Failure> {
    let jobs = match std::env::var("TDCOSIM_JOBS") {
        Ok(v) => v
            .trim()
            .parse::<usize>()
            .map_err(|_| anyhow!("TDCOSIM_JOBS must be a non-negative integer, got '{v}'"))?,
        Err(_) => jobs,
    };
    rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build_global()
        .map_err(|e| anyhow!("cannot start worker threads: {e}"))?;
    Ok(())
}

struct Inputs {
    case: TransmissionCase,
    feeders: BTreeMap<BusId, Feeder>,
    case_dir: PathBuf,
}

fn load_inputs(common: &Common) -> Result<Inputs, Failure> {
    if common.eps.is_nan() || common.eps <= 0.0 {
        return Err(anyhow!("--eps must be positive").into());
    }
    if common.max_rounds == 0 {
        return Err(anyhow!("--max-rounds must be positive").into());
    }
    let (doc, mut feeders) = io::load_case_with_feeders(&common.case)?;
    let mut case = doc.case;
    for spec in &common.feeders {
        let (path, bus) = spec
            .rsplit_once('@')
            .ok_or_else(|| anyhow!("--feeder expects PATH@BUS, got '{spec}'"))?;
        let bus: BusId = bus
            .parse()
            .map_err(|_| anyhow!("--feeder: '{bus}' is not a bus id"))?;
        let feeder = io::load_feeder(Path::new(path))?;
        case.attach_feeder(bus, path, None);
        feeders.insert(bus, feeder);
    }
    let violations = validate_case(&case);
    if !violations.is_empty() {
        let lines: Vec<String> = violations.iter().map(|v| format!("  {v}")).collect();
        return Err(anyhow!(
            "{}: invalid case\n{}",
            common.case.display(),
            lines.join("\n")
        )
        .into());
    }
    let case_dir = common.case.parent().unwrap_or(Path::new(".")).to_path_buf();
    Ok(Inputs {
        case,
        feeders,
        case_dir,
    })
}

fn coupling(common: &Common) -> CouplingOptions {
    CouplingOptions {
        eps: common.eps,
        max_rounds: common.max_rounds,
        ..CouplingOptions::default()
    }
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Snapshot { common, alpha } => cmd_snapshot(&common, alpha),
        Command::Timeseries {
            common,
            loadshapes,
            start,
            horizon,
            ed_interval,
            pf_interval,
            decoupled,
            on_fail,
        } => {
            let opts = TimeSeriesOptions {
                start_min: start,
                horizon_min: horizon,
                ed_interval_min: ed_interval,
                pf_interval_min: pf_interval,
                coupling: coupling(&common),
                on_fail: match on_fail {
                    OnFail::Abort => FailPolicy::Abort,
                    OnFail::Continue => FailPolicy::Continue,
                },
            };
            cmd_timeseries(&common, &loadshapes, &opts, decoupled)
        }
        Command::SweepUnbalance { common, alphas } => cmd_sweep(&common, &alphas),
        Command::Validate { paths } => cmd_validate(&paths),
        Command::SynthFeeder {
            nodes,
            p_mw,
            q_mvar,
            kv,
            seed,
            id,
            out,
        } => {
            let mut feeder = synth_feeder(&SynthSpec::new(nodes, p_mw, q_mvar, kv, seed))
                .map_err(|e| anyhow!("cannot build feeder: {e}"))?;
            feeder.id = id;
            std::fs::write(&out, io::serialize_feeder(&feeder))
                .with_context(|| format!("cannot write {}", out.display()))?;
            println!(
                "wrote {} ({} nodes, {:.3} MW, {:.3} MVAr)",
                out.display(),
                feeder.node_count(),
                feeder.total_load().re,
                feeder.total_load().im
            );
            Ok(())
        }
    }
}

fn f4(x: f64) -> String {
    format!("{x:.4}")
}

fn print_trace(result: &CosimResult) {
    for step in &result.steps {
        let trace = &step.trace;
        for &pcc in &trace.pccs {
            let n = trace.per_pcc_iterations.get(&pcc).copied().unwrap_or(0);
            println!("PCC bus {pcc} (N = {n})");
            println!(
                "{:>4}  {:>8} {:>8} {:>8}  {:>8} {:>8} {:>8}  {:>10}",
                "iter", "T |Va|", "T |Vb|", "T |Vc|", "D |Va|", "D |Vb|", "D |Vc|", "mismatch"
            );
            for e in trace.entries_for(pcc).filter(|e| e.iteration <= n.max(1)) {
                let d = e
                    .v_distribution
                    .map(|v| v.map(f4))
                    .unwrap_or_else(|| ["-".into(), "-".into(), "-".into()]);
                let m = e
                    .mismatch
                    .map(|m| format!("{m:.2e}"))
                    .unwrap_or_else(|| "-".into());
                println!(
                    "{:>4}  {:>8} {:>8} {:>8}  {:>8} {:>8} {:>8}  {:>10}",
                    e.iteration,
                    f4(e.v_transmission[0]),
                    f4(e.v_transmission[1]),
                    f4(e.v_transmission[2]),
                    d[0],
                    d[1],
                    d[2],
                    m
                );
            }
        }
        if let Some(f) = &step.failure {
            println!("minute {}: {f}", step.minute);
        }
    }
}

fn finish(result: &CosimResult, what: &str) -> Result<(), Failure> {
    if let Some(step) = result.steps.iter().find(|s| !s.converged()) {
        return Err(Failure::Numerical(anyhow!(
            "{what}: minute {} failed: {}",
            step.minute,
            step.failure.as_deref().unwrap_or("")
        )));
    }
    Ok(())
}

fn cmd_snapshot(common: &Common, alpha: f64) -> Result<(), Failure> {
    init_threads(common.jobs)?;
    let mut inputs = load_inputs(common)?;
    if alpha != 0.0 {
        for (bus, f) in inputs.feeders.iter_mut() {
            *f = apply_unbalance(f, alpha).map_err(|e| anyhow!("feeder at bus {bus}: {e}"))?;
        }
    }
    let result = run_snapshot(&inputs.case, &inputs.feeders, &coupling(common))?;
    print_trace(&result);
    let step = &result.steps[0];
    if step.converged() {
        println!(
            "converged in {} coupling iterations ({:.3} s)",
            step.trace.overall_iterations,
            step.wall_time.as_secs_f64()
        );
    }
    io::write_results(&result, &common.out)?;
    finish(&result, "snapshot")
}

fn load_shapes(
    explicit: &[PathBuf],
    case: &TransmissionCase,
    case_dir: &Path,
) -> Result<Loadshapes, Failure> {
    let mut shapes = Loadshapes::new();
    for p in explicit {
        let s = io::load_loadshape(p)?;
        shapes.insert(s.id.clone(), s);
    }
    for l in &case.loads {
        if let Some(id) = &l.loadshape {
            if !shapes.contains_key(id) {
                let s = io::load_loadshape(&case_dir.join(format!("{id}.csv")))?;
                shapes.insert(id.clone(), s);
            }
        }
    }
    Ok(shapes)
}

fn cmd_timeseries(
    common: &Common,
    loadshapes: &[PathBuf],
    opts: &TimeSeriesOptions,
    decoupled: bool,
) -> Result<(), Failure> {
    if opts.horizon_min == 0 {
        return Err(anyhow!("--horizon must be at least one minute").into());
    }
    init_threads(common.jobs)?;
    let inputs = load_inputs(common)?;
    let shapes = load_shapes(loadshapes, &inputs.case, &inputs.case_dir)?;
    let result = run_timeseries(&inputs.case, &inputs.feeders, &shapes, opts)?;
    io::write_results(&result, &common.out)?;
    let solved = result.coupled_solves();
    println!(
        "{} coupled solves, {} dispatches, mean step {:.3} s",
        solved,
        result.dispatch_count,
        result.mean_wall_time().as_secs_f64()
    );
    if decoupled {
        let baseline = run_decoupled_baseline(&inputs.case, &inputs.feeders, &shapes, opts)?;
        let rows = compare_runs(&result, &baseline);
        io::write_comparison(&rows, &common.out)?;
        println!(
            "max |V coupled - V decoupled| = {:.6} pu",
            max_deviation(&rows)
        );
    }
    finish(&result, "timeseries")
}

fn cmd_sweep(common: &Common, alphas: &[f64]) -> Result<(), Failure> {
    if alphas.is_empty() {
        return Err(anyhow!("--alphas needs at least one value").into());
    }
    init_threads(common.jobs)?;
    let inputs = load_inputs(common)?;
    let d = tdcosim::cosim::dispatch_for(&inputs.case, &inputs.feeders)?;
    let table = sweep_unbalance(
        &inputs.case,
        &inputs.feeders,
        alphas,
        Some(&d),
        &coupling(common),
    )?;
    let mut header = format!("{:>6}", "alpha");
    for p in &table.pccs {
        header.push_str(&format!(" {:>7}", format!("bus {p}")));
    }
    header.push_str(&format!(" {:>8}", "overall"));
    println!("{header}");
    let show = |n: Option<usize>| n.map(|n| n.to_string()).unwrap_or_else(|| "fail".into());
    for row in &table.rows {
        let mut line = format!("{:>6}", format!("{:.2}", row.alpha));
        for n in &row.per_pcc {
            line.push_str(&format!(" {:>7}", show(*n)));
        }
        line.push_str(&format!(" {:>8}", show(row.overall)));
        println!("{line}");
    }
    io::write_convergence_table(&table, &common.out)?;
    if let Some(row) = table.rows.iter().find(|r| r.overall.is_none()) {
        return Err(Failure::Numerical(anyhow!(
            "alpha {}: {}",
            row.alpha,
            row.error.as_deref().unwrap_or("")
        )));
    }
    Ok(())
}

fn validate_one(path: &Path) -> anyhow::Result<String> {
    let ext = path.extension().and_then(|e| e.to_str()).unwrap_or("");
    if ext == "csv" {
        let s = io::load_loadshape(path)?;
        return Ok(format!("loadshape '{}', {} samples", s.id, s.len()));
    }
    let text =
        std::fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
    if io::document_kind(&text) == Some(DocumentKind::Feeder) {
        let f = io::load_feeder(path)?;
        let s = f.total_load();
        return Ok(format!(
            "feeder '{}', {} nodes, {:.3} MW, {:.3} MVAr",
            f.id,
            f.node_count(),
            s.re,
            s.im
        ));
    }
    let (doc, feeders) = io::load_case_with_feeders(path)?;
    let violations = validate_case(&doc.case);
    if !violations.is_empty() {
        let lines: Vec<String> = violations.iter().map(|v| format!("  {v}")).collect();
        bail!("{}: invalid case\n{}", path.display(), lines.join("\n"));
    }
    let lumped = doc
        .case
        .loads
        .iter()
        .filter(|l| matches!(l.kind, LoadKind::Lumped { .. }))
        .count();
    Ok(format!(
        "case, {} buses, {} branches, {} generators, {} lumped loads, {} feeders",
        doc.case.buses.len(),
        doc.case.branches.len(),
        doc.case.generators.len(),
        lumped,
        feeders.len()
    ))
}

fn cmd_validate(paths: &[PathBuf]) -> Result<(), Failure> {
    let mut bad = 0;
    for p in paths {
        match validate_one(p) {
            Ok(summary) => println!("ok    {}: {summary}", p.display()),
            Err(e) => {
                bad += 1;
                println!("error {e:#}");
            }
        }
    }
    if bad > 0 {
        return Err(anyhow!("{bad} of {} files failed validation", paths.len()).into());
    }
    Ok(())
}
