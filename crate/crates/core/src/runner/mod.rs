//! Orchestration: build an experiment from its configuration, simulate it in
//! parallel, persist the artifacts and derive the reports.

pub mod config;
pub mod io;
pub mod stats;
pub mod summary;

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rayon::prelude::*;
use thiserror::Error;

use crate::branching::{AuditStats, BranchError, BranchTable, DispositionLedger, Label, WaveState};
use crate::coincidence::{classify, classify_stream, group_clicks, write_records, Category, CoincidenceError, CoincidenceRecord};
use crate::detector::{dark_counts, Apparatus, ClickEvent, ElectronPipeline};
use crate::diffraction::{electron_speed, BeamSpec, DiffractionError, DiffractionProfile, PinholeSpec};
use crate::geometry::{sensor_weights, DualLayerLayout, GeometryError, Layer, ReferenceMap, SensorLayout};
use crate::rng::{StreamDomain, Substream};

pub use config::{load_config, parse_config, preset, ApparatusMode, ConfigError, Emission, ExperimentConfig, ProfileKind};
pub use stats::{born_rule_test, category_rates, conservation_audit, BornReport, CategoryTable, ConservationReport};
pub use summary::RunReport;

/// Electrons per work item. Fixed so that results never depend on the
/// number of worker threads.
pub const CHUNK: usize = 8192;

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("geometry: {0}")]
    Geometry(#[from] GeometryError),
    #[error("profile: {0}")]
    Diffraction(#[from] DiffractionError),
    #[error("bookkeeping: {0}")]
    Branch(#[from] BranchError),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("{0}")]
    Format(String),
    #[error("classifier: {0}")]
    Coincidence(#[from] CoincidenceError),
    #[error("worker pool: {0}")]
    Pool(String),
}

impl RunError {
    /// 1 for configuration problems, 2 for bookkeeping failures, 3 for I/O.
    pub fn exit_code(&self) -> i32 {
        match self {
            RunError::Config(ConfigError::Io { .. }) => 3,
            RunError::Config(_) | RunError::Geometry(_) | RunError::Diffraction(_) => 1,
            RunError::Branch(_) => 2,
            _ => 3,
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> RunError + '_ {
    move |source| RunError::Io { path: path.to_path_buf(), source }
}

fn create(path: &Path) -> Result<BufWriter<File>, RunError> {
    File::create(path).map(BufWriter::new).map_err(io_err(path))
}

fn open(path: &Path) -> Result<BufReader<File>, RunError> {
    File::open(path).map(BufReader::new).map_err(io_err(path))
}

/// The static parts of an experiment: profile, sensors, reference map.
#[derive(Clone, Debug)]
pub struct Experiment {
    pub config: ExperimentConfig,
    pub profile: Arc<DiffractionProfile>,
    pub apparatus: Apparatus,
    pub map: ReferenceMap,
    pub table: Arc<BranchTable>,
}

impl Experiment {
    pub fn build(config: &ExperimentConfig) -> Result<Self, RunError> {
        config.validate()?;
        let profile = Arc::new(build_profile(config)?);
        let apparatus = build_apparatus(config)?;
        let map = persisted(sensor_weights(apparatus.primary(), &profile)?)?;
        let table = BranchTable::branch(&WaveState::prepare(&map))?;
        Ok(Self { config: config.clone(), profile, apparatus, map, table })
    }

    pub fn pipeline(&self) -> Result<ElectronPipeline, RunError> {
        let c = &self.config;
        let mut p = ElectronPipeline::new(
            Arc::clone(&self.profile),
            self.apparatus.clone(),
            Arc::clone(&self.table),
            c.interpretation,
            c.inner,
            c.outer,
            c.transit,
            c.faults,
            electron_speed(c.energy_kev)?,
            c.seed,
        );
        p.trace = c.trace;
        Ok(p)
    }

    /// `t_i = i / f` for the comb, cumulative exponential gaps otherwise.
    pub fn emission_times(&self) -> Vec<f64> {
        let c = &self.config;
        let period = c.period_ns();
        match c.emission {
            Emission::Comb => (0..c.electrons).map(|i| i as f64 * period).collect(),
            Emission::Poisson => {
                let mut s = Substream::new(c.seed, StreamDomain::Emission, 0);
                let mut t = 0.0;
                (0..c.electrons)
                    .map(|i| {
                        if i > 0 {
                            t += period * s.exponential();
                        }
                        t
                    })
                    .collect()
            }
        }
    }

    /// Simulates every electron, merges the shards and derives the reports.
    pub fn simulate(&self) -> Result<Simulation, RunError> {
        let pipeline = self.pipeline()?;
        let emit_ns = self.emission_times();
        let work = || -> Vec<_> {
            emit_ns
                .par_chunks(CHUNK)
                .enumerate()
                .map(|(c, ts)| pipeline.simulate_range((c * CHUNK) as u64, ts))
                .collect()
        };
        let shards = match self.config.workers {
            0 => work(),
            n => rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| RunError::Pool(e.to_string()))?
                .install(work),
        };

        let mut events = Vec::new();
        let mut selected = Vec::with_capacity(emit_ns.len());
        let mut audit = AuditStats::default();
        let mut trace = String::new();
        let mut ledgers = Vec::with_capacity(shards.len());
        for shard in shards {
            if let Some(e) = shard.errors.into_iter().next() {
                return Err(e.into());
            }
            events.extend(shard.events);
            selected.extend(shard.selected);
            audit = audit.combine(shard.audit);
            trace.push_str(&shard.trace);
            ledgers.push(shard.ledger);
        }
        let ledger = DispositionLedger::merge(ledgers)?;

        let t_end = emit_ns.last().copied().unwrap_or(0.0) + self.config.period_ns();
        for (code, (layer, layout)) in self.apparatus.layers().into_iter().enumerate() {
            let model = if layer == Layer::Inner { &self.config.inner } else { &self.config.outer };
            let mut s = Substream::new(self.config.seed, StreamDomain::DarkCounts, code as u64);
            events.extend(dark_counts(model, layer, layout.sensor_count(), 0.0, t_end, &mut s));
        }
        events.par_iter_mut().for_each(|e| {
            e.t_emit_ns = io::persisted_time(e.t_emit_ns);
            e.t_click_ns = io::persisted_time(e.t_click_ns);
        });
        events.par_sort_by(ClickEvent::log_order);

        Ok(Simulation { events, ledger, selected, emit_ns, audit, trace })
    }

    /// Simulation plus every report.
    pub fn run(&self) -> Result<(Simulation, Option<Vec<CoincidenceRecord>>, RunReport), RunError> {
        let sim = self.simulate()?;
        let (records, report) = self.report(&sim)?;
        Ok((sim, records, report))
    }

    pub fn report(&self, sim: &Simulation) -> Result<(Option<Vec<CoincidenceRecord>>, RunReport), RunError> {
        analyse_run(&self.config, &self.map, &sim.ledger, &sim.selected, &sim.events, sim.audit)
    }
}

fn build_profile(c: &ExperimentConfig) -> Result<DiffractionProfile, RunError> {
    if let Some(path) = &c.profile_override {
        return Ok(DiffractionProfile::from_csv(open(path)?)?);
    }
    Ok(match c.profile_kind {
        ProfileKind::Uniform => DiffractionProfile::uniform(c.grid_points)?,
        ProfileKind::Airy => {
            DiffractionProfile::build(&BeamSpec::new(c.energy_kev, c.rate_mhz)?, &PinholeSpec::new(c.pinhole_nm)?, c.grid_points)?
        }
    })
}

fn build_apparatus(c: &ExperimentConfig) -> Result<Apparatus, RunError> {
    Ok(match c.mode {
        ApparatusMode::Single => Apparatus::Single(SensorLayout::build(c.sensors, c.radius_cm, c.coverage, c.max_polar_rad)?),
        ApparatusMode::Dual => Apparatus::Dual(DualLayerLayout::build(
            c.sensors,
            c.inner_radius_cm,
            c.outer_radius_cm,
            c.coverage,
            c.max_polar_rad,
        )?),
    })
}

/// Reference map for a configuration; no randomness involved.
pub fn calibrate(config: &ExperimentConfig) -> Result<ReferenceMap, RunError> {
    config.validate()?;
    let profile = build_profile(config)?;
    let apparatus = build_apparatus(config)?;
    persisted(sensor_weights(apparatus.primary(), &profile)?)
}

/// The map as it reads back from its CSV file, so that a run and a later
/// report from the run directory see the same weights bit for bit.
fn persisted(map: ReferenceMap) -> Result<ReferenceMap, RunError> {
    let mut buf = Vec::new();
    map.write_csv(&mut buf)?;
    Ok(ReferenceMap::read_csv(buf.as_slice())?)
}

/// Merged, time-sorted output of a run, with times at event-log precision.
#[derive(Clone, Debug)]
pub struct Simulation {
    pub events: Vec<ClickEvent>,
    pub ledger: DispositionLedger,
    pub selected: Vec<Label>,
    pub emit_ns: Vec<f64>,
    pub audit: AuditStats,
    pub trace: String,
}

fn analyse_run(
    config: &ExperimentConfig,
    map: &ReferenceMap,
    ledger: &DispositionLedger,
    selected: &[Label],
    events: &[ClickEvent],
    audit: AuditStats,
) -> Result<(Option<Vec<CoincidenceRecord>>, RunReport), RunError> {
    let (counts, gap) = stats::selection_counts(selected, map.sensor_count());
    let born = born_rule_test(&counts, gap, map);
    let (records, categories, conservation) = match config.mode {
        ApparatusMode::Dual => {
            let records = classify_stream(events, config.window_ns)?;
            let table = category_rates(&records);
            let cons = conservation_audit(ledger, selected, events, records.iter().map(|r| r.category));
            (Some(records), Some(table), cons)
        }
        ApparatusMode::Single => {
            let groups = group_clicks(events, config.window_ns)?;
            let cats = groups.into_iter().enumerate().map(|(g, r)| classify(g, &events[r]).category);
            (None, None, conservation_audit(ledger, selected, events, cats.collect::<Vec<Category>>()))
        }
    };
    let report = RunReport {
        mode: config.mode,
        interpretation: config.interpretation,
        electrons: ledger.len() as u64,
        seed: config.seed,
        born,
        conservation,
        categories,
        weight_audit: audit,
        dark_clicks: events.iter().filter(|e| e.electron_id < 0).count() as u64,
    };
    Ok((records, report))
}

/// Paths of everything a run writes.
#[derive(Clone, Debug)]
pub struct RunArtifacts {
    pub dir: PathBuf,
    pub config: PathBuf,
    pub refmap: PathBuf,
    pub events: PathBuf,
    pub ledger: PathBuf,
    pub records: Option<PathBuf>,
    pub injected: Option<PathBuf>,
    pub trace: Option<PathBuf>,
    pub summary_text: PathBuf,
    pub summary_kv: PathBuf,
    pub report: RunReport,
}

impl RunArtifacts {
    pub fn passed(&self) -> bool {
        self.report.passed()
    }
}

pub const CONFIG_FILE: &str = "config.conf";
pub const REFMAP_FILE: &str = "refmap.csv";
pub const EVENTS_FILE: &str = "events.csv";
pub const LEDGER_FILE: &str = "ledger.csv";
pub const RECORDS_FILE: &str = "records.csv";
pub const INJECTED_FILE: &str = "injected_faults.csv";
pub const TRACE_FILE: &str = "trace.txt";
pub const SUMMARY_TEXT_FILE: &str = "summary.txt";
pub const SUMMARY_KV_FILE: &str = "summary.kv";

/// Simulates the configuration and writes the run directory.
pub fn run_to_dir(config: &ExperimentConfig, config_text: &str, dir: &Path) -> Result<RunArtifacts, RunError> {
    let exp = Experiment::build(config)?;
    let (sim, records, report) = exp.run()?;
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let path = |name: &str| dir.join(name);

    let config_path = path(CONFIG_FILE);
    fs::write(&config_path, config_text).map_err(io_err(&config_path))?;
    let refmap = path(REFMAP_FILE);
    exp.map.write_csv(create(&refmap)?)?;
    let events = path(EVENTS_FILE);
    io::write_events(&sim.events, create(&events)?)?;
    let ledger = path(LEDGER_FILE);
    io::write_ledger(&sim.ledger, &sim.emit_ns, &sim.selected, create(&ledger)?)?;

    let records_path = match &records {
        Some(recs) => {
            let p = path(RECORDS_FILE);
            write_records(recs, create(&p)?)?;
            Some(p)
        }
        None => None,
    };
    let injected = if config.faults.is_active() {
        let p = path(INJECTED_FILE);
        io::write_injected(&sim.events, create(&p)?)?;
        Some(p)
    } else {
        None
    };
    let trace = if config.trace {
        let p = path(TRACE_FILE);
        fs::write(&p, &sim.trace).map_err(io_err(&p))?;
        Some(p)
    } else {
        None
    };
    let summary_text = path(SUMMARY_TEXT_FILE);
    fs::write(&summary_text, report.render_text()).map_err(io_err(&summary_text))?;
    let summary_kv = path(SUMMARY_KV_FILE);
    fs::write(&summary_kv, report.render_kv()).map_err(io_err(&summary_kv))?;

    Ok(RunArtifacts {
        dir: dir.to_path_buf(),
        config: config_path,
        refmap,
        events,
        ledger,
        records: records_path,
        injected,
        trace,
        summary_text,
        summary_kv,
        report,
    })
}

/// Recomputes the reports of an existing run directory from its files.
pub fn report_from_dir(dir: &Path) -> Result<RunReport, RunError> {
    let cfg_path = dir.join(CONFIG_FILE);
    let text = fs::read_to_string(&cfg_path).map_err(io_err(&cfg_path))?;
    let config = parse_config(&text)?;
    let map = ReferenceMap::read_csv(open(&dir.join(REFMAP_FILE))?)?;
    let mut events = io::read_events(open(&dir.join(EVENTS_FILE))?)?;
    let injected_path = dir.join(INJECTED_FILE);
    if injected_path.exists() {
        let injected = io::read_events(open(&injected_path)?)?;
        io::tag_injected(&mut events, &injected);
    }
    let lf = io::read_ledger(open(&dir.join(LEDGER_FILE))?)?;
    let kv_path = dir.join(SUMMARY_KV_FILE);
    let audit = match fs::read_to_string(&kv_path) {
        Ok(kv) => summary::audit_from_kv(&kv),
        Err(_) => AuditStats::default(),
    };
    let (_, report) = analyse_run(&config, &map, &lf.ledger, &lf.selected, &events, audit)?;
    Ok(report)
}

/// Classifier and Born statistics for a bare event log.
#[derive(Clone, Debug)]
pub struct Analysis {
    pub records: Vec<CoincidenceRecord>,
    pub categories: CategoryTable,
    /// Click histogram of the selecting layer against the map conditioned on
    /// detection.
    pub born: Option<BornReport>,
    pub layer: Layer,
}

pub fn analyze(events: &[ClickEvent], map: &ReferenceMap, window_ns: f64) -> Result<Analysis, RunError> {
    let records = classify_stream(events, window_ns)?;
    let categories = category_rates(&records);
    let layer = if events.iter().any(|e| e.layer == Layer::Inner) { Layer::Inner } else { Layer::Single };
    let counts = stats::click_counts(events, layer, map.sensor_count());
    let born = born_rule_test(&counts, 0, &map.conditional_on_detection());
    Ok(Analysis { records, categories, born, layer })
}

pub fn analyze_files(events: &Path, refmap: &Path, window_ns: f64) -> Result<Analysis, RunError> {
    let ev = io::read_events(open(events)?)?;
    let map = ReferenceMap::read_csv(open(refmap)?)?;
    analyze(&ev, &map, window_ns)
}

/// Writes a reference map to `path`.
pub fn write_refmap(map: &ReferenceMap, path: &Path) -> Result<(), RunError> {
    let mut w = create(path)?;
    map.write_csv(&mut w)?;
    w.flush().map_err(io_err(path))
}

pub fn write_records_file(records: &[CoincidenceRecord], path: &Path) -> Result<(), RunError> {
    write_records(records, create(path)?)?;
    Ok(())
}
