use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use tcm_core::analytics::{MeasureOptions, SweepSpec};
use tcm_core::experiment::{self, ExperimentSpec, ToolConfig};
use tcm_core::iphc::RefreshPolicy;
use tcm_core::mux::MuxConfig;
use tcm_core::qoe::QoeConfig;
use tcm_core::{Direction, Error};

const EXIT_USAGE: u8 = 2;
const EXIT_OUTPUT: u8 = 3;
const EXIT_TRACE: u8 = 4;

#[derive(Parser)]
#[command(
    name = "tcmsim",
    version,
    about = "Tunneling, compression and multiplexing simulator for TCP game traffic"
)]
struct Cli {
    /// Config file with run defaults, QoE model and extra game profiles.
    #[arg(long, global = true, env = "TCMSIM_CONFIG")]
    config: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate one scenario and write its traces.
    Run(RunArgs),
    /// Simulate a players x period grid and write sweep.csv.
    Sweep(SweepArgs),
    /// Print saving limits per game and, given a run directory, its figures.
    Report(ReportArgs),
    /// Game profiles.
    Profiles {
        #[command(subcommand)]
        command: ProfilesCommand,
    },
}

#[derive(Subcommand)]
enum ProfilesCommand {
    /// List the available game profiles.
    List,
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    game: Option<String>,
    /// c2s or s2c.
    #[arg(long = "dir")]
    direction: Option<Direction>,
    #[arg(long)]
    packets_per_player: Option<usize>,
    /// Bundle size that triggers an early flush, in bytes.
    #[arg(long)]
    threshold: Option<u32>,
    /// Resend a full header every N packets (0: first packet only).
    #[arg(long)]
    refresh_every: Option<u32>,
    #[arg(long)]
    seed: u64,
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    players: Option<usize>,
    #[arg(long)]
    period_ms: Option<f64>,
    #[arg(long)]
    network_delay_ms: Option<f64>,
    #[arg(long)]
    network_jitter_ms: Option<f64>,
    /// QoE estimator name.
    #[arg(long)]
    qoe_model: Option<String>,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long, value_delimiter = ',', default_value = "5,10,20,50,100")]
    players: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_value = "10,20,30,40,50,60,70,80,90,100")]
    periods_ms: Vec<f64>,
}

#[derive(Args)]
struct ReportArgs {
    /// Directory written by `run`.
    #[arg(long)]
    traces: Option<PathBuf>,
}

struct Failure {
    code: u8,
    error: Error,
}

fn usage(error: Error) -> Failure {
    Failure {
        code: EXIT_USAGE,
        error,
    }
}

/// Output errors map to 3, everything else raised while running is a usage
/// problem.
fn while_running(error: Error) -> Failure {
    let code = match error {
        Error::Io { .. } => EXIT_OUTPUT,
        _ => EXIT_USAGE,
    };
    Failure { code, error }
}

fn period_us(ms: f64) -> Result<u64, Failure> {
    if !(ms.is_finite() && ms > 0.0) {
        return Err(usage(Error::Config(format!("period must be positive, got {ms} ms"))));
    }
    Ok((ms * 1000.0).round() as u64)
}

fn load_config(path: Option<&Path>) -> Result<ToolConfig, Failure> {
    path.map(ToolConfig::load)
        .transpose()
        .map(Option::unwrap_or_default)
        .map_err(usage)
}

struct Resolved {
    profile: tcm_core::GameProfile,
    direction: Direction,
    packets_per_player: usize,
    mux: MuxConfig,
    refresh: RefreshPolicy,
}

fn resolve_common(c: &Common, cfg: &ToolConfig) -> Result<Resolved, Failure> {
    let d = &cfg.run;
    let game = c
        .game
        .clone()
        .or_else(|| d.game.clone())
        .unwrap_or_else(|| "wow".into());
    let profile = cfg.game(&game).map_err(usage)?;
    let mut mux = MuxConfig::with_period_ms(1);
    if let Some(t) = c.threshold.or(d.threshold) {
        mux.size_threshold = t;
    }
    let refresh = match c.refresh_every.or(d.refresh_every).unwrap_or(0) {
        0 => RefreshPolicy::FirstOnly,
        n => RefreshPolicy::Every(n),
    };
    Ok(Resolved {
        profile,
        direction: c.direction.or(d.direction).unwrap_or(Direction::ClientToServer),
        packets_per_player: c
            .packets_per_player
            .or(d.packets_per_player)
            .unwrap_or(ExperimentSpec::DEFAULT_PACKETS_PER_PLAYER),
        mux,
        refresh,
    })
}

fn cmd_run(args: RunArgs, cfg: ToolConfig) -> Result<(), Failure> {
    let r = resolve_common(&args.common, &cfg)?;
    let d = &cfg.run;
    let mut qoe = cfg.qoe.clone();
    if let Some(model) = args.qoe_model {
        qoe = QoeConfig { model, ..qoe };
    }
    let spec = ExperimentSpec {
        profile: r.profile,
        direction: r.direction,
        n_players: args.players.or(d.players).unwrap_or(100),
        packets_per_player: r.packets_per_player,
        mux: MuxConfig {
            period_us: period_us(args.period_ms.or(d.period_ms).unwrap_or(60.0))?,
            ..r.mux
        },
        seed: args.common.seed,
        network_delay_ms: args
            .network_delay_ms
            .or(d.network_delay_ms)
            .unwrap_or(ExperimentSpec::DEFAULT_NETWORK_DELAY_MS),
        network_jitter_ms: args
            .network_jitter_ms
            .or(d.network_jitter_ms)
            .unwrap_or(ExperimentSpec::DEFAULT_NETWORK_JITTER_MS),
        refresh: r.refresh,
        qoe,
        out_dir: args.common.out,
    };
    spec.validate().map_err(usage)?;
    let outcome = experiment::run(&spec).map_err(while_running)?;
    let rep = &outcome.report;
    println!(
        "{} {} players={} period={} ms",
        spec.profile.name,
        spec.direction,
        rep.n_players,
        rep.period_ms()
    );
    println!("native      {:>10.2} pps {:>12} B", rep.native_pps, rep.native_bytes);
    println!("multiplexed {:>10.2} pps {:>12} B", rep.muxed_pps, rep.muxed_bytes);
    println!("E[k] {:.3}  E[P] {:.3} B  E[RH] {:.3} B", rep.e_k, rep.e_p, rep.e_rh);
    println!(
        "BWS measured {:.4}  analytic {:.4}  (|diff| {:.2e})",
        rep.bws_measured,
        rep.bws_analytic,
        rep.reconciliation_error()
    );
    println!(
        "added delay mean {:.2} ms  max {:.2} ms",
        rep.delay.mean_us / 1000.0,
        rep.delay.max_us as f64 / 1000.0
    );
    println!(
        "MOS {:.2} ({})",
        outcome.mos.mos,
        if outcome.mos.acceptable {
            "acceptable"
        } else {
            "NOT acceptable"
        }
    );
    if outcome.oversized_bundles > 0 {
        eprintln!("warning: {} bundles exceeded the MTU", outcome.oversized_bundles);
    }
    for f in &outcome.files {
        println!("wrote {}", f.display());
    }
    Ok(())
}

fn cmd_sweep(args: SweepArgs, cfg: ToolConfig) -> Result<(), Failure> {
    if args.players.is_empty() || args.periods_ms.is_empty() {
        return Err(usage(Error::Config("empty sweep grid".into())));
    }
    let r = resolve_common(&args.common, &cfg)?;
    let periods_us = args
        .periods_ms
        .iter()
        .map(|&ms| period_us(ms))
        .collect::<Result<Vec<_>, _>>()?;
    let spec = SweepSpec {
        players: args.players,
        periods_us,
        packets_per_player: r.packets_per_player,
        seed: args.common.seed,
        mux: r.mux,
        refresh: r.refresh,
        measure: MeasureOptions::default(),
    };
    let (reports, path) =
        experiment::run_sweep(&r.profile, r.direction, &spec, &args.common.out).map_err(while_running)?;
    println!("players period_ms  bws_measured  mux_pps   e_k");
    for rep in &reports {
        println!(
            "{:>7} {:>9} {:>13.4} {:>8.2} {:>6.2}",
            rep.n_players,
            rep.period_ms(),
            rep.bws_measured,
            rep.muxed_pps,
            rep.e_k
        );
    }
    println!("wrote {}", path.display());
    Ok(())
}

fn cmd_report(args: ReportArgs, cfg: ToolConfig) -> Result<(), Failure> {
    let games = cfg.games().map_err(usage)?;
    let rows = experiment::asymptote_table(&games).map_err(usage)?;
    print!("{}", experiment::render_asymptotes(&rows));
    if let Some(dir) = args.traces {
        let summary = experiment::summarize_traces(&dir, &cfg.qoe).map_err(|error| Failure {
            code: match error {
                Error::Config(_) => EXIT_USAGE,
                _ => EXIT_TRACE,
            },
            error,
        })?;
        println!();
        println!("run {}", dir.display());
        print!("{}", experiment::render_summary(&summary));
    }
    Ok(())
}

fn cmd_profiles(cfg: ToolConfig) -> Result<(), Failure> {
    for g in cfg.games().map_err(usage)? {
        print!("{:<10} {:<22}", g.name, g.label());
        for dir in Direction::ALL {
            let d = g.direction(dir);
            print!("  {dir}: E[P] {:>7.2} B {:>5.2} pps", d.expected_payload, d.packet_rate);
        }
        println!();
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = load_config(cli.config.as_deref()).and_then(|cfg| match cli.command {
        Command::Run(args) => cmd_run(args, cfg),
        Command::Sweep(args) => cmd_sweep(args, cfg),
        Command::Report(args) => cmd_report(args, cfg),
        Command::Profiles {
            command: ProfilesCommand::List,
        } => cmd_profiles(cfg),
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.error);
            ExitCode::from(f.code)
        }
    }
}
