//! Command-line front end: `simulate`, `corrupt`, `analyze`, `metrics` and
//! `export`. [`run`] returns the process exit code: 0 on success, 1 for a
//! usage error, 2 when the input data or configuration is bad.

use std::error::Error;
use std::ffi::OsString;
use std::path::{Path, PathBuf};

use cellforest::io::{
    events_tsv, forest_dot, forest_tsv, load_movie, read_forest_tsv, read_to_string, save_movie, write_atomic,
    Provenance,
};
use cellforest::{
    analyze, build_forest, compare_to_truth, inject_errors, link_movie, simulate, AnalysisParams, ErrorConfig,
    LineageForest, Movie, SimConfig,
};
use clap::error::ErrorKind;
use clap::{Parser, Subcommand, ValueEnum};

pub const FOREST_FILE: &str = "forest.tsv";
pub const DOT_FILE: &str = "forest.dot";
pub const EVENTS_FILE: &str = "events.tsv";
pub const REPORT_FILE: &str = "report.txt";
pub const VALIDITY_FILE: &str = "validity.tsv";
pub const ERROR_LOG_FILE: &str = "error_log.json";

type Result<T> = std::result::Result<T, Box<dyn Error>>;

#[derive(Debug, Parser)]
#[command(
    name = "cellforest",
    version,
    about = "Lineage forests from labeled time-lapse movies"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Grow a synthetic colony and write its movie and true forest.
    Simulate {
        /// JSON simulator config; missing fields take defaults.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Overrides the seed from the config.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Inject segmentation errors into a movie.
    Corrupt {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long, default_value_t = 0.0)]
        p_over: f64,
        #[arg(long, default_value_t = 0.0)]
        p_over_persistent: f64,
        #[arg(long, default_value_t = 4)]
        persist_len: usize,
        #[arg(long, default_value_t = 0.0)]
        p_under: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Track, optionally correct, and report on a movie.
    Analyze {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Neighborhood coverage needed to split a merged cell.
        #[arg(long = "T", default_value_t = 0.75)]
        t: f64,
        /// Overlap needed at every level of a backward merge.
        #[arg(long = "M", default_value_t = 0.90)]
        m: f64,
        #[arg(long, default_value_t = 3)]
        min_life: usize,
        #[arg(long, default_value_t = 5)]
        radius: u32,
        #[arg(long, default_value_t = 5)]
        max_sweeps: usize,
        /// Track only.
        #[arg(long)]
        no_correct: bool,
    },
    /// Compare a predicted forest against the true one.
    Metrics {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        truth: PathBuf,
        /// Write the JSON here instead of standard output.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Re-render a stored forest.
    Export {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long, value_enum)]
        format: Format,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Format {
    Dot,
    Tsv,
}

/// Parses `argv` (program name first) and runs the chosen subcommand.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
        }
    };
    match dispatch(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            2
        }
    }
}

fn dispatch(command: Command) -> Result<()> {
    match command {
        Command::Simulate { config, seed, out } => cmd_simulate(config.as_deref(), seed, &out),
        Command::Corrupt {
            input,
            p_over,
            p_over_persistent,
            persist_len,
            p_under,
            seed,
            out,
        } => {
            let cfg = ErrorConfig {
                p_over_transient: p_over,
                p_over_persistent,
                persist_len,
                p_under,
                seed,
            };
            cmd_corrupt(&input, &cfg, &out)
        }
        Command::Analyze {
            input,
            out,
            t,
            m,
            min_life,
            radius,
            max_sweeps,
            no_correct,
        } => {
            let params = AnalysisParams {
                underseg_threshold: t,
                merge_threshold: m,
                min_life_frames: min_life,
                neighborhood_radius_px: radius,
                max_sweeps,
            };
            cmd_analyze(&input, &out, &params, !no_correct)
        }
        Command::Metrics { pred, truth, out } => cmd_metrics(&pred, &truth, out.as_deref()),
        Command::Export { input, format, out } => {
            let (movie, _) = load_movie(&input)?;
            let forest = stored_forest(&input, &movie)?;
            let text = match format {
                Format::Dot => forest_dot(&forest),
                Format::Tsv => forest_tsv(&forest),
            };
            write_atomic(&out, text.as_bytes())?;
            Ok(())
        }
    }
}

fn cmd_simulate(config: Option<&Path>, seed: Option<u64>, out: &Path) -> Result<()> {
    let mut cfg: SimConfig = match config {
        Some(path) => serde_json::from_str(&read_to_string(path)?).map_err(|e| format!("{}: {e}", path.display()))?,
        None => SimConfig::default(),
    };
    if let Some(seed) = seed {
        cfg.seed = seed;
    }
    let sim = simulate(&cfg)?;
    let provenance = Provenance {
        sim_seed: Some(cfg.seed),
        error_seed: None,
        note: Some("simulated".into()),
    };
    save_movie(&sim.movie, out, Some(provenance))?;
    write_atomic(&out.join(FOREST_FILE), forest_tsv(&sim.truth).as_bytes())?;
    write_atomic(&out.join("config.json"), serde_json::to_string_pretty(&cfg)?.as_bytes())?;
    Ok(())
}

fn cmd_corrupt(input: &Path, cfg: &ErrorConfig, out: &Path) -> Result<()> {
    let (movie, manifest) = load_movie(input)?;
    let truth = stored_forest(input, &movie)?;
    let (corrupted, log) = inject_errors(&movie, &truth, cfg)?;
    let provenance = Provenance {
        sim_seed: manifest.provenance.and_then(|p| p.sim_seed),
        error_seed: Some(cfg.seed),
        note: Some("corrupted".into()),
    };
    save_movie(&corrupted, out, Some(provenance))?;
    write_atomic(
        &out.join(ERROR_LOG_FILE),
        serde_json::to_string_pretty(&log)?.as_bytes(),
    )?;
    Ok(())
}

fn cmd_analyze(input: &Path, out: &Path, params: &AnalysisParams, correct: bool) -> Result<()> {
    let (movie, manifest) = load_movie(input)?;
    let analysis = analyze(&movie, params, correct)?;
    save_movie(&analysis.movie, out, manifest.provenance)?;
    write_atomic(&out.join(FOREST_FILE), forest_tsv(&analysis.forest).as_bytes())?;
    write_atomic(&out.join(DOT_FILE), forest_dot(&analysis.forest).as_bytes())?;
    write_atomic(&out.join(EVENTS_FILE), events_tsv(&analysis.events).as_bytes())?;
    let summary = analysis.summary();
    let report = format!(
        "T={:.2} M={:.2} min-life={} radius={} max-sweeps={} correct={}\n{}",
        params.underseg_threshold,
        params.merge_threshold,
        params.min_life_frames,
        params.neighborhood_radius_px,
        params.max_sweeps,
        correct,
        summary.render()
    );
    write_atomic(&out.join(REPORT_FILE), report.as_bytes())?;
    write_atomic(&out.join(VALIDITY_FILE), summary.to_tsv().as_bytes())?;
    print!("{report}");
    Ok(())
}

fn cmd_metrics(pred: &Path, truth: &Path, out: Option<&Path>) -> Result<()> {
    let (pred_movie, _) = load_movie(pred)?;
    let (truth_movie, _) = load_movie(truth)?;
    let pred_forest = stored_forest(pred, &pred_movie)?;
    let truth_forest = stored_forest(truth, &truth_movie)?;
    let cmp = compare_to_truth(&pred_forest, &pred_movie, &truth_forest, &truth_movie)?;
    let json = serde_json::to_string_pretty(&cmp)? + "\n";
    match out {
        Some(path) => write_atomic(path, json.as_bytes())?,
        None => print!("{json}"),
    }
    Ok(())
}

/// The forest stored next to a movie, or a fresh tracking of it.
fn stored_forest(dir: &Path, movie: &Movie) -> Result<LineageForest> {
    let dir = if dir.is_dir() {
        dir
    } else {
        dir.parent().unwrap_or(Path::new("."))
    };
    let path = dir.join(FOREST_FILE);
    if path.exists() {
        return Ok(read_forest_tsv(&read_to_string(&path)?, Some(movie.len()), &path)?);
    }
    Ok(build_forest(movie, &link_movie(movie)?)?)
}
