//! The `toot` command line.

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use toot_core::benefit::{plot_data, read_plot_data, BenefitReport, InteractionVector, PerformanceTrace};
use toot_core::engine::compare::compare_traces;
use toot_core::engine::runlog::write_line;
use toot_core::engine::{
    compare_strategies, prepare_test, run_replay_with, EngineConfig, RunLog, StrategyKind, StrategyTrace,
};
use toot_core::sequence::{load_sequence, save_sequence, ToOTSequence};
use toot_core::synth::{generate_synthetic_sequence, SyntheticSceneSpec};

use crate::server::{self, LoopConfig, SessionHandle};
use crate::session::{FrameSource, ImageDirSource, SequenceSource, SessionConfig, SessionCore};

#[derive(Debug, Parser)]
#[command(name = "toot", version, about = "Time-ordered online training from click annotations")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Render a synthetic scene spec to a sequence directory.
    Gen {
        spec: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Replay one strategy over a train phase and score it on a test phase.
    Run(RunArgs),
    /// Run several strategies over several seeds and compare them at P_f.
    Compare(CompareArgs),
    /// Turn run logs or trace files into plot data and benefit summaries.
    Report(ReportArgs),
    /// Serve a live click-to-train session over a websocket.
    Serve(ServeArgs),
}

#[derive(Debug, Args)]
pub struct PhaseArgs {
    /// Sequence directory or scene spec (.toml).
    #[arg(long)]
    pub train: PathBuf,
    #[arg(long)]
    pub test: PathBuf,
    /// Engine config (TOML); defaults apply to missing keys.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[command(flatten)]
    pub phases: PhaseArgs,
    /// bbox, click or track.
    #[arg(long, value_parser = parse_strategy)]
    pub strategy: StrategyKind,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Stop at the first round whose performance reaches this value.
    #[arg(long)]
    pub pf: Option<f64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    #[command(flatten)]
    pub phases: PhaseArgs,
    #[arg(long = "strategy", value_parser = parse_strategy, required = true)]
    pub strategies: Vec<StrategyKind>,
    #[arg(long = "seed", default_values_t = [1u64, 2, 3])]
    pub seeds: Vec<u64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Run logs (.jsonl) or plot-data traces (.csv).
    #[arg(required = true)]
    pub inputs: Vec<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    /// Common final performance; defaults to the smallest P_max when
    /// comparing two or more inputs.
    #[arg(long)]
    pub pf: Option<f64>,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    /// Annotated sequence directory or scene spec to play.
    #[arg(long, conflicts_with = "images", required_unless_present = "images")]
    pub source: Option<PathBuf>,
    /// Directory of unannotated images to play instead.
    #[arg(long)]
    pub images: Option<PathBuf>,
    /// Optional test phase scored for P after training rounds.
    #[arg(long)]
    pub test: Option<PathBuf>,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, value_parser = parse_strategy, default_value = "track")]
    pub strategy: StrategyKind,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 6.0)]
    pub fps: f64,
    #[arg(long, default_value_t = 224)]
    pub stream_size: u32,
    #[arg(long, default_value_t = 5)]
    pub stale_window: u64,
    /// Let the simulated user act on frames nobody clicked.
    #[arg(long)]
    pub autopilot: bool,
    #[arg(long, default_value = "live")]
    pub session: String,
    /// Live run log path.
    #[arg(long)]
    pub log: Option<PathBuf>,
    #[arg(long, env = server::LISTEN_ENV, default_value = server::DEFAULT_LISTEN)]
    pub listen: String,
}

fn parse_strategy(s: &str) -> Result<StrategyKind, String> {
    StrategyKind::from_short_name(s).ok_or_else(|| format!("unknown strategy {s:?} (bbox, click, track)"))
}

/// A sequence directory, or a scene spec rendered on the fly.
pub fn load_input(path: &Path) -> Result<ToOTSequence> {
    if path.is_dir() {
        return load_sequence(path).with_context(|| format!("loading {}", path.display()));
    }
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let spec = SyntheticSceneSpec::from_toml(&text).with_context(|| format!("parsing {}", path.display()))?;
    Ok(generate_synthetic_sequence(&spec)?)
}

pub fn load_config(path: Option<&Path>) -> Result<EngineConfig> {
    match path {
        None => Ok(EngineConfig::default()),
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            EngineConfig::from_toml(&text).with_context(|| format!("config {}", p.display()))
        }
    }
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "undefined".to_string(), |x| format!("{x:.6}"))
}

fn gen(spec: &Path, out: &Path) -> Result<()> {
    let seq = load_input(spec)?;
    save_sequence(&seq, out).with_context(|| format!("writing {}", out.display()))?;
    println!("{}: {} frames ({} with target) -> {}", seq.name, seq.len(), seq.positive_count(), out.display());
    Ok(())
}

fn write_benefit(report: &BenefitReport, path: &Path) -> Result<()> {
    let mut f = BufWriter::new(File::create(path)?);
    report.write_records(&mut f)?;
    f.flush()?;
    Ok(())
}

fn run(args: &RunArgs) -> Result<()> {
    let cfg = load_config(args.phases.config.as_deref())?;
    let train = load_input(&args.phases.train)?;
    let test = load_input(&args.phases.test)?;
    fs::create_dir_all(&args.out)?;
    let prepared = prepare_test(&test, &cfg)?;
    let mut log_file = BufWriter::new(File::create(args.out.join("run.jsonl"))?);
    let out = run_replay_with(&train, prepared, &test.name, args.strategy, &cfg, args.seed, args.pf, |line| {
        write_line(&mut log_file, line)
    })?;
    log_file.flush()?;
    write_benefit(&out.report, &args.out.join("benefit.jsonl"))?;
    fs::write(
        args.out.join("timing.json"),
        serde_json::to_string_pretty(&serde_json::json!({ "wall_time_s": out.wall_time.as_secs_f64() }))?,
    )?;
    let t = &out.log.totals;
    println!(
        "{} seed {}: {} rounds, {} interactions, P_0 {:.4}, final P {:.4}, P_max {:.4} at round {}, mean ITB {}",
        args.strategy.short_name(),
        args.seed,
        t.rounds,
        t.interactions,
        out.log.header.p0,
        t.final_p,
        t.p_max,
        t.p_max_round,
        fmt_opt(out.report.mean_itb)
    );
    Ok(())
}

fn compare(args: &CompareArgs) -> Result<()> {
    if args.strategies.len() < 2 {
        bail!("compare needs at least two --strategy values");
    }
    let cfg = load_config(args.phases.config.as_deref())?;
    let train = load_input(&args.phases.train)?;
    let test = load_input(&args.phases.test)?;
    let runs = args.out.join("runs");
    fs::create_dir_all(&runs)?;
    let report = compare_strategies(&train, &test, &args.strategies, &args.seeds, &cfg, |log| {
        let name = format!("{}-seed{}.jsonl", log.header.strategy.short_name(), log.header.seed);
        let mut f = BufWriter::new(File::create(runs.join(name))?);
        log.write(&mut f)?;
        f.flush()?;
        Ok(())
    })?;
    fs::write(args.out.join("report.json"), report.to_json())?;
    for s in &report.seeds {
        println!("seed {}: P_f {:.4}", s.seed, s.comparison.p_f);
    }
    for a in &report.averaged {
        println!(
            "{:>8}: mean P_max {:.4}, reached P_f in {}/{} seeds, interactions to P_f {}, mean ITB {}",
            a.name,
            a.mean_p_max,
            a.reached_seeds,
            report.seeds.len(),
            a.mean_interactions_to_pf.map_or_else(|| "undefined".into(), |v| format!("{v:.1}")),
            fmt_opt(a.mean_itb_to_pf)
        );
    }
    for r in &report.ratios {
        println!("mean ITB {}/{}: {}", r.numerator, r.denominator, fmt_opt(r.value));
    }
    Ok(())
}

fn load_trace(path: &Path) -> Result<(String, PerformanceTrace, InteractionVector)> {
    let stem = path
        .file_stem()
        .map_or_else(|| "trace".to_string(), |s| s.to_string_lossy().into_owned());
    let reader = BufReader::new(File::open(path).with_context(|| format!("opening {}", path.display()))?);
    if path.extension().is_some_and(|e| e == "csv") {
        let (t, u) = read_plot_data(reader).with_context(|| format!("parsing {}", path.display()))?;
        Ok((stem, t, u))
    } else {
        let log = RunLog::read(reader).with_context(|| format!("parsing {}", path.display()))?;
        let (t, u) = log.trace();
        Ok((stem, t, u))
    }
}

fn report(args: &ReportArgs) -> Result<()> {
    fs::create_dir_all(&args.out)?;
    let mut traces = Vec::new();
    for path in &args.inputs {
        let (name, trace, u) = load_trace(path)?;
        let report = BenefitReport::compute(&trace, &u, args.pf)?;
        fs::write(args.out.join(format!("{name}.ctb.csv")), plot_data(&trace, &u)?)?;
        let mut itb = String::from("round,itb,ctb\n");
        for b in &report.interactions {
            itb.push_str(&format!("{},{},{}\n", b.round, b.itb, b.ctb));
        }
        fs::write(args.out.join(format!("{name}.itb.csv")), itb)?;
        write_benefit(&report, &args.out.join(format!("{name}.benefit.jsonl")))?;
        let summary = format!(
            "rounds={}\ninteractions={}\np0={}\np_max={}\np_max_round={}\nmean_itb={}\n",
            report.ctb.len(),
            report.interaction_count,
            report.p0,
            report.p_max,
            report.p_max_round,
            report.mean_itb.map_or_else(|| "undefined".to_string(), |v| v.to_string())
        );
        fs::write(args.out.join(format!("{name}.summary.txt")), &summary)?;
        println!(
            "{name}: {} rounds, {} interactions, P_max {:.4}, mean ITB {}",
            report.ctb.len(),
            report.interaction_count,
            report.p_max,
            fmt_opt(report.mean_itb)
        );
        traces.push(StrategyTrace { name, trace, u });
    }
    if traces.len() >= 2 {
        let cmp = compare_traces(&traces, args.pf)?;
        fs::write(args.out.join("comparison.json"), serde_json::to_string_pretty(&cmp)?)?;
        println!("P_f {:.6}", cmp.p_f);
        for s in &cmp.strategies {
            println!(
                "{}: interactions to P_f {}, mean ITB {}",
                s.name,
                s.interactions_to_pf.map_or_else(|| "not reached".into(), |v| v.to_string()),
                fmt_opt(s.mean_itb_to_pf)
            );
        }
        for r in &cmp.ratios {
            println!("mean ITB {}/{}: {}", r.numerator, r.denominator, fmt_opt(r.value));
        }
    }
    Ok(())
}

fn serve(args: &ServeArgs) -> Result<()> {
    if !(args.fps > 0.0 && args.fps.is_finite()) {
        bail!("--fps must be positive");
    }
    let cfg = load_config(args.config.as_deref())?;
    let mut warm = None;
    let source: Box<dyn FrameSource> = match (&args.source, &args.images) {
        (Some(p), _) => {
            let seq = load_input(p)?;
            warm = Some(seq.clone());
            Box::new(SequenceSource::new(seq))
        }
        (None, Some(dir)) => Box::new(ImageDirSource::open(dir)?),
        (None, None) => bail!("either --source or --images is required"),
    };
    let test = match &args.test {
        Some(p) => {
            let t = load_input(p)?;
            Some((prepare_test(&t, &cfg)?, t.name.clone()))
        }
        None => None,
    };
    let session_cfg = SessionConfig {
        id: args.session.clone(),
        strategy: args.strategy,
        seed: args.seed,
        engine: cfg,
        stream_size: args.stream_size,
        stale_window: args.stale_window,
        autopilot: args.autopilot,
    };
    let mut core = SessionCore::new(session_cfg, source, test, warm.as_ref())?;
    if let Some(p) = &args.log {
        core.log_to(p)?;
    }
    let rt = tokio::runtime::Runtime::new()?;
    let handle = SessionHandle::spawn(
        core,
        LoopConfig {
            fps: args.fps,
            ..LoopConfig::default()
        },
    );
    rt.block_on(async {
        let listener = tokio::net::TcpListener::bind(&args.listen)
            .await
            .with_context(|| format!("binding {}", args.listen))?;
        log::info!("serving on ws://{}/ws", listener.local_addr()?);
        println!("listening on ws://{}/ws", listener.local_addr()?);
        server::serve(listener, &handle, async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
        anyhow::Ok(())
    })?;
    let log = handle.shutdown()?;
    println!("{} rounds, {} interactions", log.totals.rounds, log.totals.interactions);
    Ok(())
}

pub fn execute(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Gen { spec, out } => gen(&spec, &out),
        Command::Run(a) => run(&a),
        Command::Compare(a) => compare(&a),
        Command::Report(a) => report(&a),
        Command::Serve(a) => serve(&a),
    }
}
