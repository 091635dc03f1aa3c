//! `rislab`: dataset generation, IEN training, agent training, baselines and
//! parameter sweeps driven by a single JSON scenario file.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{bail, Context};
use clap::{Parser, Subcommand, ValueEnum};
use rislab_core::baselines::{write_baseline_csv, BaselineRow};
use rislab_core::config::parse_override;
use rislab_core::csvio::{write_meta, CsvMeta};
use rislab_core::ddpg::{tail_mean, write_reward_log};
use rislab_core::experiments::{self as ex, OracleKind};
use rislab_core::ien::{read_dataset_csv, write_dataset_csv, IenModel};
use rislab_core::{Error, ScenarioConfig};

const CONFIG_ENV: &str = "RISLAB_CONFIG";

#[derive(Parser, Debug)]
#[command(
    name = "rislab",
    version,
    about = "Location-aware DRL for RIS-aided mmWave MIMO"
)]
struct Cli {
    /// Scenario JSON. Falls back to $RISLAB_CONFIG, then built-in defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override a config field, e.g. `--set ddpg.episodes_j=200`.
    #[arg(long = "set", value_name = "PATH=VALUE", global = true)]
    overrides: Vec<String>,
    /// Directory for output files.
    #[arg(long, global = true, default_value = ".")]
    out: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Oracle {
    Ien,
    True,
    Csi,
}

impl From<Oracle> for OracleKind {
    fn from(o: Oracle) -> Self {
        match o {
            Oracle::Ien => OracleKind::Ien,
            Oracle::True => OracleKind::True,
            Oracle::Csi => OracleKind::Csi,
        }
    }
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Axis {
    RisElements,
    Paths,
    Eta,
    Coherence,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Print the resolved configuration as JSON.
    PrintConfig,
    /// Generate the IEN training set (dataset.csv).
    GenDataset,
    /// Train the IEN (ien_model.txt, mse_trace.csv).
    TrainIen {
        /// Train on this dataset instead of generating one.
        #[arg(long)]
        dataset: Option<PathBuf>,
    },
    /// Train a DDPG agent (reward_log_<oracle>.csv, agent_<oracle>.txt).
    TrainDrl {
        #[arg(long, value_enum)]
        oracle: Oracle,
        /// IEN checkpoint for `--oracle ien`; defaults to <out>/ien_model.txt.
        #[arg(long)]
        ien_model: Option<PathBuf>,
    },
    /// Alternating optimization with full channel knowledge (baseline_ao.csv).
    BaselineAo,
    /// Best of random phase draws with water-filled Q (baseline_random.csv).
    BaselineRandom {
        #[arg(long)]
        trials: Option<usize>,
    },
    /// Parameter sweeps (sweep_<axis>.csv).
    Sweep {
        #[arg(long, value_enum)]
        axis: Axis,
        /// Parallel jobs.
        #[arg(long, default_value_t = 1)]
        jobs: usize,
    },
}

enum Failure {
    Usage(anyhow::Error),
    Runtime(anyhow::Error),
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn load_config(cli: &Cli) -> anyhow::Result<ScenarioConfig> {
    let overrides = cli
        .overrides
        .iter()
        .map(|s| parse_override(s))
        .collect::<Result<Vec<_>, Error>>()?;
    let path = cli
        .config
        .clone()
        .or_else(|| std::env::var_os(CONFIG_ENV).map(PathBuf::from));
    let text = match &path {
        Some(p) => {
            fs::read_to_string(p).with_context(|| format!("reading config {}", p.display()))?
        }
        None => ScenarioConfig::default().to_json(),
    };
    Ok(ScenarioConfig::from_json_with_overrides(&text, &overrides)?)
}

fn run(cli: Cli) -> Result<(), Failure> {
    let cfg = load_config(&cli).map_err(Failure::Usage)?;
    execute(&cli, &cfg).map_err(Failure::Runtime)
}

struct Output<'a> {
    dir: &'a Path,
    meta: CsvMeta,
}

impl Output<'_> {
    fn csv(
        &self,
        name: &str,
        body: impl FnOnce(&mut dyn Write) -> rislab_core::Result<()>,
    ) -> anyhow::Result<PathBuf> {
        let path = self.dir.join(name);
        let mut w = BufWriter::new(
            File::create(&path).with_context(|| format!("creating {}", path.display()))?,
        );
        write_meta(&mut w, &self.meta)?;
        body(&mut w)?;
        w.flush()?;
        Ok(path)
    }

    fn text(&self, name: &str, text: &str) -> anyhow::Result<PathBuf> {
        let path = self.dir.join(name);
        fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?;
        Ok(path)
    }
}

fn execute(cli: &Cli, cfg: &ScenarioConfig) -> anyhow::Result<()> {
    if let Command::PrintConfig = cli.command {
        println!("{}", cfg.to_json());
        return Ok(());
    }
    fs::create_dir_all(&cli.out).with_context(|| format!("creating {}", cli.out.display()))?;
    let out = Output {
        dir: &cli.out,
        meta: CsvMeta {
            seed: cfg.seed,
            config_hash: cfg.hash(),
        },
    };
    let geom = cfg.geometry();
    match &cli.command {
        Command::PrintConfig => unreachable!(),
        Command::GenDataset => {
            let data = ex::gen_dataset(cfg, &geom)?;
            let p = out.csv("dataset.csv", |w| write_dataset_csv(&data, w))?;
            println!("{} samples -> {}", data.len(), p.display());
        }
        Command::TrainIen { dataset } => {
            let data = match dataset {
                Some(p) => read_dataset_csv(
                    File::open(p).with_context(|| format!("opening {}", p.display()))?,
                    &cfg.arrays,
                )?,
                None => ex::gen_dataset(cfg, &geom)?,
            };
            let (model, trace) = ex::fit_ien(cfg, &geom, &data)?;
            out.text("ien_model.txt", &model.to_checkpoint())?;
            let rows = ex::mse_trace_rows(&trace);
            let p = out.csv("mse_trace.csv", |w| {
                ex::write_rows(&rows, &ex::MSE_TRACE_HEADER, w)
            })?;
            match trace.last() {
                Some(m) => println!(
                    "final mse {m:.6e} after {} epochs -> {}",
                    trace.len(),
                    p.display()
                ),
                None => println!("no epochs run -> {}", p.display()),
            }
        }
        Command::TrainDrl { oracle, ien_model } => {
            let kind = OracleKind::from(*oracle);
            let ien = if let OracleKind::Ien = kind {
                let path = ien_model
                    .clone()
                    .unwrap_or_else(|| cli.out.join("ien_model.txt"));
                if !path.exists() {
                    bail!(
                        "IEN checkpoint {} not found; run `train-ien` first or pass --ien-model",
                        path.display()
                    );
                }
                let model = IenModel::from_checkpoint(&fs::read_to_string(&path)?)
                    .with_context(|| format!("loading {}", path.display()))?;
                if model.arrays != cfg.arrays {
                    bail!(
                        "IEN checkpoint was trained for {:?}, config has {:?}",
                        model.arrays,
                        cfg.arrays
                    );
                }
                Some(Arc::new(model))
            } else {
                None
            };
            let res = ex::run_drl(cfg, &geom, kind, ien)?;
            let name = kind.name();
            out.text(
                &format!("agent_{name}.txt"),
                &res.nets.to_checkpoint(&cfg.ddpg)?,
            )?;
            let p = out.csv(&format!("reward_log_{name}.csv"), |w| {
                write_reward_log(&res.log, w)
            })?;
            let tail = tail_mean(&res.log, 0.1, |r| r.reward);
            println!(
                "best true rate {:.4} bit/s/Hz, final-10% reward {:.4} -> {}",
                res.best.rate,
                tail,
                p.display()
            );
        }
        Command::BaselineAo => {
            let r = ex::run_ao(cfg, &geom)?;
            let rows = [BaselineRow {
                scheme: "ao".into(),
                n: cfg.arrays.n(),
                seed: cfg.seed,
                rate: r.rate,
                sweeps_or_steps: r.sweeps(),
            }];
            let p = out.csv("baseline_ao.csv", |w| write_baseline_csv(&rows, w))?;
            println!(
                "ao rate {:.4} after {} sweeps -> {}",
                r.rate,
                r.sweeps(),
                p.display()
            );
        }
        Command::BaselineRandom { trials } => {
            let trials = trials.unwrap_or(cfg.sweep.random_trials);
            if trials == 0 {
                bail!("--trials must be >= 1");
            }
            let rate = ex::run_random_phases(cfg, &geom, trials)?;
            let rows = [BaselineRow {
                scheme: "random".into(),
                n: cfg.arrays.n(),
                seed: cfg.seed,
                rate,
                sweeps_or_steps: trials,
            }];
            let p = out.csv("baseline_random.csv", |w| write_baseline_csv(&rows, w))?;
            println!(
                "best random rate {rate:.4} over {trials} trials -> {}",
                p.display()
            );
        }
        Command::Sweep { axis, jobs } => {
            let p = match axis {
                Axis::RisElements => {
                    let rows = ex::sweep_ris_elements(cfg, *jobs)?;
                    out.csv("sweep_ris_elements.csv", |w| {
                        ex::write_rows(&rows, &ex::RATE_HEADER, w)
                    })?
                }
                Axis::Eta => {
                    let rows = ex::sweep_eta(cfg, *jobs)?;
                    out.csv("sweep_eta.csv", |w| {
                        ex::write_rows(&rows, &ex::RATE_HEADER, w)
                    })?
                }
                Axis::Paths => {
                    let rows = ex::sweep_paths(cfg, *jobs)?;
                    out.csv("sweep_paths.csv", |w| {
                        ex::write_rows(&rows, &ex::PATHS_HEADER, w)
                    })?
                }
                Axis::Coherence => {
                    let rows = ex::sweep_coherence(cfg, *jobs)?;
                    out.csv("sweep_coherence.csv", |w| {
                        ex::write_rows(&rows, &ex::COHERENCE_HEADER, w)
                    })?
                }
            };
            println!("-> {}", p.display());
        }
    }
    Ok(())
}
