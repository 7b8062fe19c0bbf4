use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use statekl_core::metrics::final_window_mean;
use statekl_harness::config::{ConfigFile, ExperimentConfig, Mode};
use statekl_harness::plot::{write_svg, PlotStyle};
use statekl_harness::run::{export_source, run_experiment_with, RunCache, SeedRun};
use statekl_harness::stats::{aggregate, compare, final_window_means, read_run_dir, CurveTable};
use statekl_harness::{recipes, HarnessError};

#[derive(Parser)]
#[command(
    name = "statekl",
    version,
    about = "State-distribution-shift RL experiments"
)]
struct Cli {
    /// Replace the config's seeds, e.g. `3` or `0..5`.
    #[arg(long, global = true)]
    seed_override: Option<String>,
    /// Output directory (train, batch-gen, batch-train, recipes run) or
    /// file (aggregate).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Reuse results stored under this directory.
    #[arg(long, global = true, env = "STATEKL_CACHE")]
    cache: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Online training, one CSV per seed. Files with a [sweep] run every point.
    Train { config: PathBuf },
    /// Write the fixed batch a batch-mode config trains on.
    BatchGen { config: PathBuf },
    /// Offline training on the configured fixed batch, one CSV per seed.
    BatchTrain { config: PathBuf },
    /// Mean and sample std of eval return across the CSVs in a directory.
    Aggregate { dir: PathBuf },
    /// Welch t-test on final-window mean returns of two run directories.
    Compare {
        dir_a: PathBuf,
        dir_b: PathBuf,
        /// Trailing evaluation points averaged per run.
        #[arg(long, default_value_t = 10)]
        window: usize,
    },
    /// Render curve tables (as written by `aggregate`) to an SVG file.
    Plot {
        /// One or more tables followed by the output path.
        #[arg(required = true, num_args = 2..)]
        paths: Vec<PathBuf>,
        #[arg(long, default_value = "")]
        title: String,
    },
    /// Shipped experiment recipes.
    Recipes {
        #[command(subcommand)]
        action: RecipeAction,
    },
}

#[derive(Subcommand)]
enum RecipeAction {
    List,
    Show { name: String },
    Run { name: String },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn apply_flags(cli: &Cli, file: &mut ConfigFile) {
    if let Some(s) = &cli.seed_override {
        file.override_param("experiment.seeds", s);
    }
    if let Some(o) = &cli.out {
        file.override_param("experiment.out", &o.to_string_lossy());
    }
}

fn experiments(cli: &Cli, mut file: ConfigFile) -> Result<Vec<ExperimentConfig>, HarnessError> {
    apply_flags(cli, &mut file);
    Ok(file.variants()?)
}

fn require_mode(cfgs: &[ExperimentConfig], mode: Mode, cmd: &str) -> Result<(), HarnessError> {
    match cfgs.iter().find(|c| c.mode != mode) {
        Some(c) => Err(HarnessError::Mode(format!(
            "`{cmd}` cannot run `{}`: wrong experiment.mode",
            c.name
        ))),
        None => Ok(()),
    }
}

fn report(run: &SeedRun) {
    let last = final_window_mean(&run.rows, 1).map_or("n/a".to_string(), |r| format!("{r:.2}"));
    eprintln!(
        "{}  final eval {last}  {:.1}s{}",
        run.path.display(),
        run.seconds,
        if run.cached { " (cached)" } else { "" }
    );
}

fn run_all(cli: &Cli, cfgs: &[ExperimentConfig]) -> Result<(), HarnessError> {
    let cache = cli.cache.as_ref().map(RunCache::new);
    for cfg in cfgs {
        run_experiment_with(cfg, cache.as_ref(), &mut report)?;
    }
    Ok(())
}

fn label(path: &Path) -> String {
    path.file_stem()
        .or(path.file_name())
        .map_or("curve".into(), |s| s.to_string_lossy().into_owned())
}

fn dispatch(cli: &Cli) -> Result<(), HarnessError> {
    let cache = cli.cache.as_ref().map(RunCache::new);
    match &cli.command {
        Command::Train { config } => {
            let cfgs = experiments(cli, ConfigFile::load(config)?)?;
            require_mode(&cfgs, Mode::Train, "train")?;
            run_all(cli, &cfgs)
        }
        Command::BatchTrain { config } => {
            let cfgs = experiments(cli, ConfigFile::load(config)?)?;
            require_mode(&cfgs, Mode::Batch, "batch-train")?;
            run_all(cli, &cfgs)
        }
        Command::BatchGen { config } => {
            let cfgs = experiments(cli, ConfigFile::load(config)?)?;
            require_mode(&cfgs, Mode::Batch, "batch-gen")?;
            for cfg in &cfgs {
                let (path, src) = export_source(cfg, &cfg.out, cache.as_ref())?;
                eprintln!(
                    "{}  {} transitions  source return {:.2}  random return {:.2}",
                    path.display(),
                    src.batch.len(),
                    src.source_return,
                    src.random_return
                );
            }
            Ok(())
        }
        Command::Aggregate { dir } => {
            let runs = read_run_dir(dir)?;
            let table = aggregate(&label(dir), &runs)?;
            let bytes = table.to_csv();
            match &cli.out {
                Some(p) => std::fs::write(p, bytes).map_err(|e| HarnessError::io(p, e)),
                None => {
                    print!("{}", String::from_utf8_lossy(&bytes));
                    Ok(())
                }
            }
        }
        Command::Compare {
            dir_a,
            dir_b,
            window,
        } => {
            let a = final_window_means(&read_run_dir(dir_a)?, *window)?;
            let b = final_window_means(&read_run_dir(dir_b)?, *window)?;
            println!("{}", compare(&a, &b)?);
            Ok(())
        }
        Command::Plot { paths, title } => {
            let (out, inputs) = paths.split_last().expect("clap requires two paths");
            let mut tables = Vec::with_capacity(inputs.len());
            for p in inputs {
                let bytes = std::fs::read(p).map_err(|e| HarnessError::io(p, e))?;
                tables.push(CurveTable::from_csv(&label(p), &bytes)?);
            }
            let style = PlotStyle {
                title: title.clone(),
                ..PlotStyle::default()
            };
            write_svg(out, &tables, &style)
        }
        Command::Recipes { action } => match action {
            RecipeAction::List => {
                for name in recipes::names() {
                    let f = recipes::load(name)?;
                    let first = f.header.lines().next().unwrap_or("");
                    println!("{name:<16} {:>4} runs  {first}", count_runs(&f)?);
                }
                Ok(())
            }
            RecipeAction::Show { name } => {
                recipes::load(name)?;
                print!("{}", recipes::text(name).unwrap_or_default());
                Ok(())
            }
            RecipeAction::Run { name } => {
                let cfgs = experiments(cli, recipes::load(name)?)?;
                run_all(cli, &cfgs)
            }
        },
    }
}

fn count_runs(f: &ConfigFile) -> Result<usize, HarnessError> {
    Ok(f.variants()?.iter().map(|v| v.seeds.len()).sum())
}
