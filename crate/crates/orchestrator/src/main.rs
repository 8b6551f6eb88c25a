use std::fs;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Duration;

use anyhow::{bail, Context};
use chainbox::archive::{Archive, METRICS_FILE};
use chainbox::client::Client;
use chainbox::noderun::{run_node, NodeArgs};
use chainbox::{api, RunOptions, RunRegistry, RunStatus, DEFAULT_PORT, PORT_ENV};
use chainbox_core::chain::GenesisConfig;
use chainbox_core::experiment::{calibrate_difficulty, measure_local_hashrate};
use chainbox_core::topology::TopologyKind;
use chainbox_core::wire::LatencyModel;
use chainbox_core::{EventLog, ExperimentConfig, RunMode, StopCondition, TopologySpec};
use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser)]
#[command(name = "chainbox", version, about = "Run and measure small proof-of-work networks")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run an experiment and print its metrics. Settings come from a TOML
    /// config, from flags, or from both (flags win).
    Run {
        config: Option<PathBuf>,
        #[command(flatten)]
        flags: ConfigFlags,
        /// Write the run archive here.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Replace the configured difficulty with the calibrated one.
        #[arg(long)]
        calibrate: bool,
        /// Simulated runs: simulated seconds per wall-clock second.
        #[arg(long)]
        pace: Option<f64>,
        /// Multi-process runs: where node logs go while running.
        #[arg(long)]
        work_dir: Option<PathBuf>,
    },
    /// Compute the difficulty for a target block interval.
    Calibrate {
        #[arg(long)]
        n: usize,
        /// Attempts per second per node; measured locally when omitted.
        #[arg(long)]
        hashrate: Option<f64>,
        #[arg(long = "target-ms")]
        target_ms: u64,
        #[arg(long, default_value_t = 1000)]
        measure_ms: u64,
    },
    /// Recompute metrics from an exported run directory.
    Metrics {
        dir: PathBuf,
        #[arg(long)]
        json: bool,
        /// Fail unless the stored metrics file matches the recomputation
        /// byte for byte.
        #[arg(long)]
        check: bool,
    },
    /// Ask a running server to export a run.
    Export {
        #[arg(long, default_value_t = format!("http://127.0.0.1:{DEFAULT_PORT}"))]
        server: String,
        id: String,
        directory: PathBuf,
    },
    /// Rebuild a node's chain from its event log.
    Replay { log: PathBuf },
    /// Serve the HTTP control API.
    Serve {
        #[arg(long, env = PORT_ENV, default_value_t = DEFAULT_PORT)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        bind: String,
    },
    /// Run a single node process (started by multi-process runs).
    #[command(hide = true)]
    Node {
        #[arg(long)]
        id: String,
        #[arg(long)]
        chain_id: u64,
        #[arg(long)]
        difficulty: u64,
        #[arg(long, default_value = "")]
        genesis_extra: String,
        #[arg(long)]
        hashrate: Option<f64>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = "127.0.0.1:0")]
        listen: String,
        #[arg(long)]
        log: PathBuf,
        #[arg(long, default_value_t = 0)]
        epoch_ms: u64,
    },
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Shape {
    Ring,
    Star,
    Grid,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Mode {
    Simulated,
    Multiprocess,
}

/// Overrides for `ExperimentConfig` fields.
#[derive(Args, Debug, Default)]
struct ConfigFlags {
    #[arg(long)]
    name: Option<String>,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long, value_enum)]
    topology: Option<Shape>,
    #[arg(long)]
    hub: Option<usize>,
    #[arg(long)]
    rows: Option<usize>,
    #[arg(long)]
    cols: Option<usize>,
    #[arg(long)]
    chain_id: Option<u64>,
    #[arg(long)]
    difficulty: Option<u64>,
    #[arg(long = "target-ms")]
    target_ms: Option<u64>,
    #[arg(long)]
    hashrate: Option<f64>,
    #[arg(long, conflicts_with = "stop_ms")]
    stop_height: Option<u64>,
    #[arg(long)]
    stop_ms: Option<u64>,
    #[arg(long, value_enum)]
    mode: Option<Mode>,
    /// Simulated runs: RNG seed for mining and latency.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    latency_ms: Option<f64>,
    #[arg(long)]
    jitter_ms: Option<f64>,
    #[arg(long)]
    tick_us: Option<u64>,
}

impl ConfigFlags {
    fn kind(&self, n: usize) -> anyhow::Result<TopologyKind> {
        Ok(match self.topology.unwrap_or(Shape::Ring) {
            Shape::Ring => TopologyKind::Ring,
            Shape::Star => TopologyKind::Star { hub: self.hub.unwrap_or(0) },
            Shape::Grid => {
                let side = (n as f64).sqrt().round() as usize;
                let rows = self.rows.unwrap_or(if side * side == n { side } else { 1 });
                let cols = self.cols.unwrap_or(n / rows.max(1));
                TopologyKind::Grid { rows, cols }
            }
        })
    }

    /// Applies the flags on top of `base`, or builds a config from flags
    /// alone (defaulting to a simulated 750 ms run to height 100).
    fn apply(self, base: Option<ExperimentConfig>) -> anyhow::Result<ExperimentConfig> {
        let mut config = match base {
            Some(c) => c,
            None => {
                let Some(n) = self.n else { bail!("give a config file or at least --n") };
                let Some(hashrate) = self.hashrate else { bail!("give a config file or --hashrate") };
                let mut c = ExperimentConfig {
                    name: "run".into(),
                    n,
                    topology: TopologySpec { kind: self.kind(n)?, n, edges: Vec::new() },
                    genesis: GenesisConfig::new(1, 1),
                    target_interval_ms: 750,
                    stop: StopCondition::Height(100),
                    mode: RunMode::Simulated { seed: 0, latency: LatencyModel::default(), tick_us: 2_000 },
                    hashrate,
                };
                if self.difficulty.is_none() {
                    c.genesis.difficulty = calibrate_difficulty(n, hashrate, self.target_ms.unwrap_or(750))?.difficulty;
                }
                c
            }
        };
        if let Some(n) = self.n {
            config.n = n;
        }
        if self.n.is_some() || self.topology.is_some() || self.rows.is_some() || self.hub.is_some() {
            let kind = if self.topology.is_some() || config.topology.kind == TopologyKind::Custom {
                self.kind(config.n)?
            } else {
                match config.topology.kind {
                    TopologyKind::Grid { .. } => {
                        ConfigFlags { topology: Some(Shape::Grid), ..self.copy_shape() }.kind(config.n)?
                    }
                    TopologyKind::Star { hub } => TopologyKind::Star { hub: self.hub.unwrap_or(hub) },
                    other => other,
                }
            };
            config.topology = TopologySpec { kind, n: config.n, edges: Vec::new() };
        }
        if let Some(v) = self.name {
            config.name = v;
        }
        if let Some(v) = self.chain_id {
            config.genesis.chain_id = v;
        }
        if let Some(v) = self.difficulty {
            config.genesis.difficulty = v;
        }
        if let Some(v) = self.target_ms {
            config.target_interval_ms = v;
        }
        if let Some(v) = self.hashrate {
            config.hashrate = v;
        }
        if let Some(h) = self.stop_height {
            config.stop = StopCondition::Height(h);
        }
        if let Some(ms) = self.stop_ms {
            config.stop = StopCondition::DurationMs(ms);
        }
        match self.mode {
            Some(Mode::Multiprocess) => config.mode = RunMode::Multiprocess,
            Some(Mode::Simulated) if config.mode == RunMode::Multiprocess => {
                config.mode = RunMode::Simulated { seed: 0, latency: LatencyModel::default(), tick_us: 2_000 };
            }
            _ => {}
        }
        if let RunMode::Simulated { seed, latency, tick_us } = &mut config.mode {
            if let Some(v) = self.seed {
                *seed = v;
                latency.seed = v;
            }
            if let Some(v) = self.latency_ms {
                latency.base_ms = v;
            }
            if let Some(v) = self.jitter_ms {
                latency.jitter_ms = v;
            }
            if let Some(v) = self.tick_us {
                *tick_us = v;
            }
        }
        Ok(config)
    }

    fn copy_shape(&self) -> ConfigFlags {
        ConfigFlags { hub: self.hub, rows: self.rows, cols: self.cols, ..ConfigFlags::default() }
    }
}

fn load_config(path: &PathBuf) -> anyhow::Result<ExperimentConfig> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

fn run(
    config: Option<PathBuf>,
    flags: ConfigFlags,
    out: Option<PathBuf>,
    calibrate: bool,
    pace: Option<f64>,
    work_dir: Option<PathBuf>,
) -> anyhow::Result<ExitCode> {
    let base = config.as_ref().map(load_config).transpose()?;
    let mut config = flags.apply(base)?;
    if calibrate {
        let c = config.calibrate()?;
        eprintln!("calibrated difficulty {}", c.difficulty);
    }
    let registry = RunRegistry::new();
    let id = registry.start_run(config, RunOptions { pace, work_dir, ..RunOptions::default() })?;
    let summary = registry.wait(&id)?;
    if let Some(dir) = &out {
        registry.export(&id, dir)?;
        eprintln!("archive written to {}", dir.display());
    }
    if let Some(e) = &summary.error {
        eprintln!("error: {e}");
    }
    match registry.metrics(&id)? {
        Some(m) => print!("{}", m.render_table()),
        None => eprintln!("run {}: no metrics", summary.status),
    }
    Ok(if summary.status == RunStatus::Completed { ExitCode::SUCCESS } else { ExitCode::FAILURE })
}

fn metrics(dir: PathBuf, json: bool, check: bool) -> anyhow::Result<ExitCode> {
    let archive = Archive::load(&dir)?;
    let recomputed = archive.recompute_metrics_json()?;
    if check {
        match &archive.metrics_json {
            Some(stored) if *stored == recomputed => eprintln!("{METRICS_FILE} matches"),
            Some(_) => {
                eprintln!("{METRICS_FILE} differs from the recomputed metrics");
                return Ok(ExitCode::FAILURE);
            }
            None => {
                eprintln!("no {METRICS_FILE} in {}", dir.display());
                return Ok(ExitCode::FAILURE);
            }
        }
    }
    if json {
        print!("{recomputed}");
    } else {
        print!("{}", archive.compute_metrics()?.render_table());
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> anyhow::Result<ExitCode> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match Cli::parse().command {
        Cmd::Run { config, flags, out, calibrate, pace, work_dir } => {
            run(config, flags, out, calibrate, pace, work_dir)
        }
        Cmd::Calibrate { n, hashrate, target_ms, measure_ms } => {
            let hashrate = match hashrate {
                Some(h) => h,
                None => {
                    let h = measure_local_hashrate(Duration::from_millis(measure_ms))?;
                    eprintln!("measured {h:.0} attempts/s");
                    h
                }
            };
            let c = calibrate_difficulty(n, hashrate, target_ms)?;
            println!("difficulty {}", c.difficulty);
            if c.clamped {
                eprintln!("raw difficulty below 1; clamped");
            }
            Ok(ExitCode::SUCCESS)
        }
        Cmd::Metrics { dir, json, check } => metrics(dir, json, check),
        Cmd::Export { server, id, directory } => {
            for file in Client::new(server).export(&id, &directory)? {
                println!("{}", file.display());
            }
            Ok(ExitCode::SUCCESS)
        }
        Cmd::Replay { log } => {
            let log = EventLog::read_file(&log)?;
            let store = log.replay()?;
            let head = store.head().context("log has no genesis")?;
            println!("node {}: {} events, head {} at height {}", log.node_id, log.events.len(), head.hash, head.number);
            Ok(ExitCode::SUCCESS)
        }
        Cmd::Serve { port, bind } => {
            let addr: SocketAddr = format!("{bind}:{port}").parse().context("listen address")?;
            let rt = tokio::runtime::Runtime::new()?;
            rt.block_on(async {
                let listener = tokio::net::TcpListener::bind(addr).await?;
                eprintln!("listening on http://{}", listener.local_addr()?);
                api::serve(listener, RunRegistry::new()).await
            })?;
            Ok(ExitCode::SUCCESS)
        }
        Cmd::Node { id, chain_id, difficulty, genesis_extra, hashrate, seed, listen, log, epoch_ms } => {
            let extra = hex::decode(&genesis_extra).context("--genesis-extra must be hex")?;
            if let Some(h) = hashrate {
                if !(h.is_finite() && h > 0.0) {
                    bail!("--hashrate must be positive");
                }
            }
            let genesis = GenesisConfig { chain_id, difficulty, extra };
            let args = NodeArgs { node_id: id, genesis, seed, hashrate, listen, log_path: log, epoch_ms };
            run_node(args, std::io::stdin(), std::io::stdout())?;
            Ok(ExitCode::SUCCESS)
        }
    }
}
