use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use hemibranch_core::coincidence::Category;
use hemibranch_core::runner::{self, ConfigError, RunError};
use hemibranch_core::ExperimentConfig;

#[derive(Parser)]
#[command(name = "hemibranch", version, about = "Single-electron diffraction onto hemispheric sensor arrays")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Parse a configuration and check every invariant.
    ValidateConfig {
        /// Config file, or a bundled preset name (paper-single, paper-dual).
        config: String,
    },
    /// Compute the reference map of a configuration.
    Calibrate {
        config: String,
        /// Output CSV; standard output when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the Monte Carlo experiment and write a run directory.
    Simulate {
        config: String,
        /// Run directory; defaults to the configured output_dir.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Worker threads, 0 for all cores.
        #[arg(long)]
        workers: Option<usize>,
        #[arg(long)]
        electrons: Option<u64>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Re-run the classifier and statistics on an existing event log.
    Analyze {
        eventlog: PathBuf,
        refmap: PathBuf,
        /// Coincidence window in ns.
        #[arg(long, default_value_t = 6.0)]
        window: f64,
        /// Also write the classified records here.
        #[arg(long)]
        records: Option<PathBuf>,
    },
    /// Recompute the reports of a run directory from its files.
    Report { rundir: PathBuf },
}

fn load(arg: &str) -> Result<(ExperimentConfig, String), ConfigError> {
    let path = Path::new(arg);
    if !path.exists() {
        if let Some(text) = runner::preset(arg) {
            return Ok((runner::parse_config(text)?, text.to_string()));
        }
    }
    runner::load_config(path)
}

fn exit(code: i32) -> ExitCode {
    ExitCode::from(code as u8)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli.command) {
        Ok(code) => exit(code),
        Err(e) => {
            eprintln!("error: {e}");
            exit(e.exit_code())
        }
    }
}

fn execute(command: Command) -> Result<i32, RunError> {
    match command {
        Command::ValidateConfig { config } => {
            let (cfg, _) = load(&config)?;
            cfg.validate()?;
            println!("{config}: valid ({} layer, {} electrons, {})", cfg.mode, cfg.electrons, cfg.interpretation.as_str());
            if let Ok(t) = cfg.timing() {
                println!(
                    "timing: dt = {:.4} ns, tau_in = {} ns, tau_out = {} ns, T_w = {} ns, 1/f = {} ns",
                    t.dt_transit_ns, t.tau_in_ns, t.tau_out_ns, t.window_ns, t.period_ns
                );
            }
            Ok(0)
        }
        Command::Calibrate { config, out } => {
            let (cfg, _) = load(&config)?;
            let map = runner::calibrate(&cfg)?;
            match out {
                Some(path) => {
                    runner::write_refmap(&map, &path)?;
                    eprintln!("wrote {} sensors + gap (gap weight {:.6}) to {}", map.sensor_count(), map.gap_weight(), path.display());
                }
                None => {
                    let stdout = std::io::stdout();
                    let mut lock = stdout.lock();
                    map.write_csv(&mut lock).map_err(RunError::from)?;
                    lock.flush().map_err(|source| RunError::Io { path: PathBuf::from("<stdout>"), source })?;
                }
            }
            Ok(0)
        }
        Command::Simulate { config, out, workers, electrons, seed } => {
            let (mut cfg, mut text) = load(&config)?;
            let mut overrides = Vec::new();
            if let Some(w) = workers {
                cfg.workers = w;
            }
            if let Some(m) = electrons {
                cfg.electrons = m;
                overrides.push(format!("electrons = {m}"));
            }
            if let Some(s) = seed {
                cfg.seed = s;
                overrides.push(format!("seed = {s}"));
            }
            if !overrides.is_empty() {
                text.push_str("\n[run]\n");
                for o in overrides {
                    text.push_str(&o);
                    text.push('\n');
                }
            }
            let dir = out.unwrap_or_else(|| cfg.output_dir.clone());
            let artifacts = runner::run_to_dir(&cfg, &text, &dir)?;
            print!("{}", artifacts.report.render_text());
            println!("artifacts in {}", artifacts.dir.display());
            Ok(if artifacts.passed() { 0 } else { 2 })
        }
        Command::Analyze { eventlog, refmap, window, records } => {
            let a = runner::analyze_files(&eventlog, &refmap, window)?;
            println!("{} groups in a {window} ns window ({} layer histogram)", a.categories.nonempty_groups, a.layer);
            for (cat, r) in &a.categories.rows {
                println!("  {:<12} {:>9}  {:.6} ± {:.6}", cat.as_str(), r.successes, r.rate, r.std_error);
            }
            if let Some(d) = &a.categories.delayed_choice {
                println!("  delayed choice {:.6} ± {:.6}", d.rate, d.std_error);
            }
            match &a.born {
                Some(b) => println!(
                    "click histogram vs map: chi-square {:.4} on {} dof, p = {:.4}, TV = {:.5}",
                    b.chi_square, b.dof, b.p_value, b.tv_distance
                ),
                None => println!("click histogram vs map: no clicks"),
            }
            if let Some(path) = records {
                runner::write_records_file(&a.records, &path)?;
            }
            let anomalies = a.categories.rate(Category::DoubleInner).map_or(0, |r| r.successes)
                + a.categories.rate(Category::DoubleOuter).map_or(0, |r| r.successes);
            Ok(if anomalies > 0 { 2 } else { 0 })
        }
        Command::Report { rundir } => {
            let report = runner::report_from_dir(&rundir)?;
            print!("{}", report.render_text());
            Ok(if report.passed() { 0 } else { 2 })
        }
    }
}
