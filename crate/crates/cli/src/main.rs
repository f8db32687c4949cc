use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use emfi_core::calibration::CalibrationStore;
use emfi_core::campaign::{
    attack_stats, run_campaign, sweep_groups, CampaignConfig, CampaignMode, CancelToken,
};
use emfi_core::persist::{export_heatmap, CampaignDir, LoadedCampaign};
use emfi_core::stats::confidence_interval;
use emfi_core::{Rig, RigConfig};
use emfi_server::ServerConfig;

#[derive(Debug, Parser)]
#[command(name = "emfi", version, about = "EMFI campaign runner")]
struct Cli {
    /// Workspace holding calibration.json and campaign directories.
    #[arg(long, global = true, env = "EMFI_WORKSPACE")]
    workspace: Option<PathBuf>,

    /// Rig description (JSON). Defaults to the built-in simulator.
    #[arg(long, global = true)]
    rig: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Runs the HTTP control server.
    Serve {
        /// Server config file (JSON).
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, env = "EMFI_BIND")]
        bind: Option<std::net::SocketAddr>,
    },
    /// Runs a grid scan campaign.
    Scan(RunArgs),
    /// Runs a fixed-point attack campaign.
    Attack(RunArgs),
    /// Runs a trigger-delay sweep campaign.
    Sweep(RunArgs),
    /// Rewrites heatmap.csv and summary.txt for a campaign directory.
    Export { campaign_dir: PathBuf },
}

#[derive(Debug, clap::Args)]
struct RunArgs {
    /// Campaign config (JSON).
    config: PathBuf,
    /// Output directory. Defaults to `<workspace>/campaigns/<config name>`.
    /// An existing directory with the same config is resumed.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> Result<()> {
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env()
                .unwrap_or_else(|_| tracing_subscriber::EnvFilter::new("info")),
        )
        .with_writer(std::io::stderr)
        .init();
    let cli = Cli::parse();
    match &cli.command {
        Command::Serve { config, bind } => serve(&cli, config.as_deref(), *bind),
        Command::Scan(args) => run(&cli, args, "scan"),
        Command::Attack(args) => run(&cli, args, "attack"),
        Command::Sweep(args) => run(&cli, args, "sweep"),
        Command::Export { campaign_dir } => export(campaign_dir),
    }
}

fn workspace(cli: &Cli) -> PathBuf {
    cli.workspace
        .clone()
        .unwrap_or_else(|| ServerConfig::default().workspace)
}

fn rig_config(cli: &Cli) -> Result<RigConfig> {
    match &cli.rig {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .with_context(|| format!("reading rig config {}", path.display()))?;
            Ok(serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?)
        }
        None => Ok(RigConfig::default()),
    }
}

fn serve(cli: &Cli, config: Option<&Path>, bind: Option<std::net::SocketAddr>) -> Result<()> {
    let mut cfg = match config {
        Some(path) => ServerConfig::load(path).with_context(|| format!("loading {}", path.display()))?,
        None => ServerConfig::default(),
    };
    if let Some(ws) = &cli.workspace {
        cfg.workspace = ws.clone();
    }
    if cli.rig.is_some() {
        cfg.rig = rig_config(cli)?;
    }
    if let Some(bind) = bind {
        cfg.bind = bind;
    }
    let runtime = tokio::runtime::Runtime::new()?;
    runtime.block_on(emfi_server::serve(cfg))?;
    Ok(())
}

fn load_config(path: &Path) -> Result<CampaignConfig> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let cfg: CampaignConfig =
        serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: &Cli, args: &RunArgs, expected: &str) -> Result<()> {
    let cfg = load_config(&args.config)?;
    if cfg.mode.name() != expected {
        bail!(
            "{} describes a {} campaign, not a {expected}",
            args.config.display(),
            cfg.mode.name()
        );
    }
    let ws = workspace(cli);
    let out = match &args.out {
        Some(dir) => dir.clone(),
        None => {
            let stem = if cfg.name.is_empty() {
                args.config
                    .file_stem()
                    .map(|s| s.to_string_lossy().into_owned())
                    .unwrap_or_else(|| expected.to_string())
            } else {
                cfg.name.clone()
            };
            ws.join("campaigns").join(stem)
        }
    };
    let dir = CampaignDir::create(&out, &cfg)?;
    let (mut log, loaded) = dir.open_log()?;
    if let Some(torn) = &loaded.torn {
        eprintln!("dropped a torn final log line ({} bytes)", torn.bytes);
    }

    let mut rig = Rig::open(&rig_config(cli)?)?;
    let store = CalibrationStore::load(&ws.join("calibration.json"))?;
    if let Some(cal) = store.active() {
        rig.calibration = Some(cal.clone());
    }
    if store.anchor.is_some() {
        rig.anchor = store.anchor;
    }

    if !loaded.records.is_empty() {
        eprintln!("resuming after {} logged attempts", loaded.records.len());
    }
    let report = run_campaign(&mut rig, &cfg, &loaded.records, &mut log, &CancelToken::new())?;
    let exported = dir.write_exports()?;
    println!("campaign: {}", dir.root().display());
    println!("attempts: {}/{}", report.completed, report.total);
    print_result(&cfg, &exported);
    Ok(())
}

fn print_result(cfg: &CampaignConfig, loaded: &LoadedCampaign) {
    match &cfg.mode {
        CampaignMode::Scan { .. } => {
            println!("faults: {}", loaded.scan.total_faults());
            match loaded.scan.argmax() {
                Some(best) => println!(
                    "best position: ({:.3}, {:.3}) mm, {}",
                    best.die_point.x, best.die_point.y, best.stats
                ),
                None => println!("best position: none (no successes)"),
            }
        }
        CampaignMode::Fixed { .. } => {
            let stats = attack_stats(&loaded.records, cfg.exclude_errors);
            match confidence_interval(stats, 0.95) {
                Ok((lo, hi)) => println!(
                    "success: {stats} ({:.2}%, 95% interval {:.2}%..{:.2}%)",
                    stats.successes as f64 / stats.attempts as f64 * 100.0,
                    lo * 100.0,
                    hi * 100.0
                ),
                Err(_) => println!("success: {stats}"),
            }
        }
        CampaignMode::Sweep {
            grouping_threshold, ..
        } => {
            let groups = sweep_groups(&loaded.records, *grouping_threshold);
            println!("delay groups: {}", groups.len());
            for g in groups {
                println!(
                    "  median {} (delays {}..={}, {} bypasses)",
                    g.median, g.first, g.last, g.successes
                );
            }
        }
    }
}

fn export(dir: &Path) -> Result<()> {
    if !dir.is_dir() {
        bail!("{} is not a campaign directory", dir.display());
    }
    let campaign = CampaignDir::new(dir);
    let loaded = campaign.write_exports()?;
    if let Some(torn) = &loaded.torn {
        eprintln!("ignored a torn final log line ({} bytes)", torn.bytes);
    }
    print!("{}", emfi_core::persist::export_summary(&loaded.by_plan));
    eprintln!(
        "wrote {} positions to {}",
        export_heatmap(&loaded.scan).lines().count() - 1,
        dir.join(emfi_core::persist::HEATMAP_FILE).display()
    );
    Ok(())
}
