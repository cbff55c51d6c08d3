use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use gcaloc::geometry::test_grid;
use gcaloc::harness::{self, ExperimentConfig, OutputFormat};
use gcaloc::{Error, PnnModel, Result};

const OUT_DIR_ENV: &str = "GCALOC_OUT_DIR";
const DEFAULT_MODEL: &str = "model.gcapnn";

#[derive(Parser, Debug)]
#[command(name = "gcaloc", version, about = "Indoor sound source localization experiments")]
struct Cli {
    /// Flat TOML experiment config.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed (overrides the config).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory. Falls back to $GCALOC_OUT_DIR, then `out`.
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
    #[arg(long, global = true, value_enum, default_value_t = Format::Csv)]
    format: Format,
    /// Worker threads, 0 for all cores.
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// 0.25 m clusters (K = 4096 in the default room) and a 15-cluster
    /// selection cap.
    #[arg(long, global = true)]
    paper_scale: bool,
    /// Config override in `key=value` form; repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Format {
    Csv,
    Json,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Simulate training captures and write a model file.
    Train {
        /// Model path, default `<out-dir>/model.gcapnn`.
        #[arg(long)]
        model: Option<PathBuf>,
    },
    /// Localize the test grid with a trained model and write a report.
    Localize {
        #[arg(long)]
        model: Option<PathBuf>,
    },
    /// Evaluate every (T60, SNR) cell of the configured sweep.
    Sweep,
    /// Print the test grid as CSV.
    Grid,
    /// Print a model header as JSON.
    Inspect {
        #[arg(long)]
        model: Option<PathBuf>,
    },
    /// Write gnuplot data files from JSON reports.
    Plots {
        /// Report JSON (single report or list, e.g. matrix.json).
        #[arg(long)]
        report: PathBuf,
    },
    /// Print the effective config as TOML.
    Config,
}

impl Cli {
    fn experiment(&self) -> Result<ExperimentConfig> {
        let mut overrides = Vec::new();
        if self.paper_scale {
            overrides.extend(ExperimentConfig::paper_scale_overrides());
        }
        overrides.extend(self.overrides.iter().cloned());
        if let Some(s) = self.seed {
            overrides.push(format!("seed={s}"));
        }
        if let Some(w) = self.workers {
            overrides.push(format!("workers={w}"));
        }
        ExperimentConfig::load(self.config.as_deref(), &overrides)
    }

    fn out_dir(&self) -> PathBuf {
        self.out_dir
            .clone()
            .or_else(|| std::env::var_os(OUT_DIR_ENV).map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from("out"))
    }

    fn model_path(&self, model: &Option<PathBuf>) -> PathBuf {
        model.clone().unwrap_or_else(|| self.out_dir().join(DEFAULT_MODEL))
    }

    fn format(&self) -> OutputFormat {
        match self.format {
            Format::Csv => OutputFormat::Csv,
            Format::Json => OutputFormat::Json,
        }
    }
}

fn load_model(path: &Path) -> Result<PnnModel> {
    if !path.is_file() {
        return Err(Error::Io(std::io::Error::new(
            std::io::ErrorKind::NotFound,
            format!("model file {} not found", path.display()),
        )));
    }
    PnnModel::load(path).map_err(|e| e.context(format!("model {}", path.display())))
}

fn list(paths: &[PathBuf]) {
    for p in paths {
        println!("wrote {}", p.display());
    }
}

fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Train { model } => {
            let cfg = cli.experiment()?;
            let path = cli.model_path(model);
            let (m, timings) = harness::train_pipeline(&cfg)?;
            harness::save_model(&m, &path)?;
            let t = harness::write_timings(&timings, &cli.out_dir(), "train_timings.json")?;
            println!(
                "trained K={} N={} D={} in {:.2} s",
                m.num_clusters(),
                m.num_samples(),
                m.dimension(),
                timings.wall_s
            );
            list(&[path, t]);
        }
        Command::Localize { model } => {
            let cfg = cli.experiment()?;
            let m = load_model(&cli.model_path(model))?;
            let (report, timings) = harness::localize_pipeline(&m, &cfg)?;
            let dir = cli.out_dir();
            let mut paths = harness::write_report(&report, &dir, "report", cli.format())?;
            paths.push(harness::write_timings(&timings, &dir, "localize_timings.json")?);
            println!(
                "positions={} srde10={:.3} srde20={:.3} srde30={:.3} eps_mean={:.3}",
                report.positions,
                report.srde_at(10.0).unwrap_or(f64::NAN),
                report.srde_at(20.0).unwrap_or(f64::NAN),
                report.srde_at(30.0).unwrap_or(f64::NAN),
                report.eps_mean
            );
            list(&paths);
        }
        Command::Sweep => {
            let cfg = cli.experiment()?;
            let cells = harness::sweep(&cfg)?;
            for c in &cells {
                println!(
                    "t60={} snr={} srde10={:.3} srde30={:.3}",
                    c.t60,
                    c.snr_db,
                    c.report.srde_at(10.0).unwrap_or(f64::NAN),
                    c.report.srde_at(30.0).unwrap_or(f64::NAN)
                );
            }
            list(&harness::write_sweep(&cells, &cli.out_dir(), cli.format())?);
        }
        Command::Grid => {
            let cfg = cli.experiment()?;
            let room = cfg.room()?;
            let center = cfg.array(&room)?.center();
            let mut w = csv::Writer::from_writer(std::io::stdout().lock());
            w.write_record(["index", "x", "y", "z", "theta", "phi", "r"])?;
            for (i, (p, d)) in test_grid(&cfg.test_grid_spec(), center, &room)?.iter().enumerate() {
                w.write_record([
                    i.to_string(),
                    p[0].to_string(),
                    p[1].to_string(),
                    p[2].to_string(),
                    d.elevation.to_string(),
                    d.azimuth.to_string(),
                    d.range.to_string(),
                ])?;
            }
            w.flush()?;
        }
        Command::Inspect { model } => {
            let m = load_model(&cli.model_path(model))?;
            println!("{}", serde_json::to_string_pretty(m.header())?);
        }
        Command::Plots { report } => {
            let reports = harness::read_reports(report)?;
            list(&harness::write_plot_data(&reports, &cli.out_dir())?);
        }
        Command::Config => {
            print!("{}", cli.experiment()?.to_toml());
        }
    }
    Ok(())
}

/// A closed stdout (e.g. piping `grid` into `head`) is not an error.
fn is_broken_pipe(e: &Error) -> bool {
    match e {
        Error::Io(io) => io.kind() == std::io::ErrorKind::BrokenPipe,
        Error::Csv(c) => matches!(c.kind(), csv::ErrorKind::Io(io) if io.kind() == std::io::ErrorKind::BrokenPipe),
        Error::Context { source, .. } => is_broken_pipe(source),
        _ => false,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) if is_broken_pipe(&e) => ExitCode::SUCCESS,
        Err(e) => {
            let msg = e.to_string().replace('\n', " ");
            eprintln!("error: {}: {msg}", e.kind());
            ExitCode::FAILURE
        }
    }
}
