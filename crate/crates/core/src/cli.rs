//! Command-line front end: `simulate`, `analyze`, `spacetime`, `optimize`
//! and `report`.
//!
//! Exit codes: 0 success, 2 configuration error, 3 data error, 4 no
//! violation or infeasible design.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs::{self, File};
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use serde_json::json;

use crate::config::{self, AnalysisConfig, SpacetimeDocument};
use crate::design::{critical_efficiency, optimize_design, DesignError, DesignProblem, DesignSolution};
use crate::hypothesis::{ch_pvalue, MultiAccumulator, PValueReport, StopAccumulator, StoppingRule};
use crate::manifest::RunManifest;
use crate::records::{RecordFormat, RecordReader, RecordWriter};
use crate::simulator::{simulate_run, ExperimentConfig, SlotWindow, CENTER_SLOT, DEFAULT_SLOTS};
use crate::spacetime::{
    boundary_regions, locality_margins, slot_margins, ExperimentGeometry, TrialChronology,
    WEAK_BOUNDARY_M,
};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_DATA: i32 = 3;
pub const EXIT_NO_VIOLATION: i32 = 4;

/// Environment variable capping the worker thread count.
pub const THREADS_ENV: &str = "BELLTEST_THREADS";

#[derive(Debug, Parser)]
#[command(name = "belltest", version, about = "Loophole-free Bell test toolkit")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Common {
    /// Configuration document (TOML).
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
    /// Trial record format.
    #[arg(long, value_enum)]
    pub format: Option<RecordFormat>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate trials and write a record file.
    Simulate {
        #[command(flatten)]
        common: Common,
        /// Overrides the configured trial count.
        #[arg(long)]
        n_trials: Option<u64>,
    },
    /// Run the stopping-rule hypothesis test on a record file.
    Analyze {
        #[command(flatten)]
        common: Common,
        /// Trial record file.
        records: PathBuf,
        #[arg(long)]
        n_stop: Option<u64>,
        #[arg(long)]
        epsilon: Option<f64>,
        /// Aggregated slots as CENTER:WIDTH.
        #[arg(long)]
        slots: Option<String>,
        /// Stopping rule for the single-slot tests.
        #[arg(long)]
        slot_n_stop: Option<u64>,
        #[arg(long)]
        n_slots: Option<usize>,
    },
    /// Timing margins, slot separation and boundary regions.
    Spacetime {
        #[command(flatten)]
        common: Common,
        /// Comma-separated aggregate widths.
        #[arg(long, value_delimiter = ',')]
        widths: Option<Vec<u32>>,
        /// Degrees between sampled boundary directions.
        #[arg(long)]
        resolution: Option<f64>,
    },
    /// Optimize the state and analyzer angles.
    Optimize {
        #[command(flatten)]
        common: Common,
        /// Also bisect for the critical symmetric efficiency.
        #[arg(long)]
        critical: bool,
    },
    /// Summarize earlier runs.
    Report {
        #[command(flatten)]
        common: Common,
        /// Output directories of earlier commands.
        runs: Vec<PathBuf>,
    },
}

#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl CliError {
    fn config(message: impl ToString) -> Self {
        Self {
            code: EXIT_CONFIG,
            message: message.to_string(),
        }
    }

    fn data(message: impl ToString) -> Self {
        Self {
            code: EXIT_DATA,
            message: message.to_string(),
        }
    }
}

type CliResult = Result<i32, CliError>;

fn write_file(path: &Path, contents: &str) -> Result<(), CliError> {
    fs::write(path, contents).map_err(|e| CliError::data(format!("cannot write {}: {e}", path.display())))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value).map_err(CliError::data)?;
    write_file(path, &(text + "\n"))
}

fn read_text(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|e| CliError::config(format!("cannot read {}: {e}", path.display())))
}

fn prepare_out(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| CliError::data(format!("cannot create {}: {e}", dir.display())))
}

fn write_manifest(manifest: &RunManifest, dir: &Path) -> Result<(), CliError> {
    manifest
        .write(dir)
        .map(|_| ())
        .map_err(|e| CliError::data(format!("cannot write manifest: {e}")))
}

fn configure_threads() {
    if let Some(n) = std::env::var(THREADS_ENV)
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&n| n > 0)
    {
        // A pool already built by an earlier call in this process is kept.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
}

/// Parses `args` (program name first) and runs the command. Returns the
/// process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    configure_threads();
    let result = match cli.command {
        Command::Simulate { common, n_trials } => cmd_simulate(&common, n_trials),
        Command::Analyze {
            common,
            records,
            n_stop,
            epsilon,
            slots,
            slot_n_stop,
            n_slots,
        } => cmd_analyze(
            &common,
            &records,
            AnalysisConfig {
                n_stop,
                epsilon,
                slots,
                slot_n_stop,
                n_slots,
                spacetime: None,
            },
        ),
        Command::Spacetime {
            common,
            widths,
            resolution,
        } => cmd_spacetime(&common, widths, resolution),
        Command::Optimize { common, critical } => cmd_optimize(&common, critical),
        Command::Report { common, runs } => cmd_report(&common, &runs),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {}", e.message);
            e.code
        }
    }
}

pub fn main() -> i32 {
    run(std::env::args_os())
}

fn cmd_simulate(common: &Common, n_trials: Option<u64>) -> CliResult {
    let mut config = match &common.config {
        Some(path) => config::load_experiment(path).map_err(CliError::config)?,
        None => ExperimentConfig::published(100_000, 0),
    };
    if let Some(seed) = common.seed {
        config = config.with_seed(seed);
    }
    if let Some(n) = n_trials {
        config.n_trials = n;
    }
    let format = common.format.unwrap_or_default();
    let resolved = config::to_toml(&config);
    let stream = simulate_run(&config).map_err(CliError::config)?;

    prepare_out(&common.out)?;
    let mut manifest = RunManifest::start(
        "simulate",
        &resolved,
        Some(config.seed),
        json!({ "n_trials": config.n_trials, "n_slots": config.n_slots, "format": format }),
    );
    let config_path = common.out.join("config.toml");
    write_file(&config_path, &resolved)?;
    manifest.add_output("config.toml");

    let records_name = format!("records.{}", format.extension());
    let records_path = common.out.join(&records_name);
    let file = File::create(&records_path)
        .map_err(|e| CliError::data(format!("cannot create {}: {e}", records_path.display())))?;
    let mut writer = RecordWriter::new(BufWriter::new(file), format);
    for record in stream {
        let record = record.map_err(CliError::data)?;
        writer.write(&record).map_err(CliError::data)?;
    }
    let written = writer.written();
    writer.finish().map_err(CliError::data)?;
    manifest.add_output(records_name);
    manifest.finish();
    write_manifest(&manifest, &common.out)?;
    println!("wrote {written} records to {}", records_path.display());
    Ok(EXIT_OK)
}

fn infer_format(path: &Path, flag: Option<RecordFormat>) -> RecordFormat {
    flag.unwrap_or_else(|| match path.extension().and_then(|e| e.to_str()) {
        Some("jsonl" | "json" | "txt") => RecordFormat::Text,
        _ => RecordFormat::Binary,
    })
}

/// Per-slot separation flags from a spacetime document, or from the
/// calibrated layout.
fn separation_flags(doc: Option<&SpacetimeDocument>, n_slots: usize) -> Result<Vec<bool>, CliError> {
    let calibrated = SpacetimeDocument::calibrated();
    let doc = doc.unwrap_or(&calibrated);
    let center = doc.center_slot.min(n_slots);
    let margins = slot_margins(&doc.geometry, &doc.chronology, n_slots, center).map_err(CliError::config)?;
    Ok(margins.iter().map(|m| m.all_positive()).collect())
}

#[derive(Debug, Serialize)]
struct AnalysisOutput {
    window_center: usize,
    window_width: usize,
    #[serde(flatten)]
    report: PValueReport,
}

fn cmd_analyze(common: &Common, records: &Path, flags: AnalysisConfig) -> CliResult {
    let file_config = match &common.config {
        Some(path) => config::load_analysis(path).map_err(CliError::config)?,
        None => AnalysisConfig::default(),
    };
    let n_stop = flags
        .n_stop
        .or(file_config.n_stop)
        .ok_or_else(|| CliError::config("n_stop is required (--n-stop or n_stop in the config)"))?;
    let epsilon = flags.epsilon.or(file_config.epsilon).unwrap_or(0.0);
    let slots = flags
        .slots
        .or(file_config.slots)
        .unwrap_or_else(|| format!("{CENTER_SLOT}:1"));
    let n_slots = flags.n_slots.or(file_config.n_slots).unwrap_or(DEFAULT_SLOTS);
    let slot_n_stop = flags.slot_n_stop.or(file_config.slot_n_stop).unwrap_or(n_stop);
    // Relative paths resolve against the analysis config's directory.
    let base = common.config.as_deref().and_then(Path::parent).unwrap_or(Path::new(""));
    let spacetime = match &file_config.spacetime {
        Some(path) => Some(config::load_spacetime(&base.join(path)).map_err(CliError::config)?),
        None => None,
    };

    let (center, width) = config::parse_slot_window(&slots).map_err(CliError::config)?;
    let window = SlotWindow::new(center, width, n_slots).map_err(CliError::config)?;
    let rule = StoppingRule::new(n_stop).map_err(CliError::config)?;
    let slot_rule = StoppingRule::new(slot_n_stop).map_err(CliError::config)?;
    crate::hypothesis::success_bound(epsilon).map_err(CliError::config)?;
    let separated = separation_flags(spacetime.as_ref(), n_slots)?;
    let format = infer_format(records, common.format);

    // The stopping rules are committed to disk before any record is read.
    prepare_out(&common.out)?;
    let parameters = json!({
        "records": records,
        "format": format,
        "n_stop": n_stop,
        "slot_n_stop": slot_n_stop,
        "epsilon": epsilon,
        "slots": slots,
        "n_slots": n_slots,
    });
    let mut manifest = RunManifest::start("analyze", &parameters.to_string(), None, parameters);
    write_manifest(&manifest, &common.out)?;

    let mut accumulators = vec![StopAccumulator::new(rule, window)];
    for slot in 1..=n_slots {
        let single = SlotWindow::single(slot, n_slots).map_err(CliError::config)?;
        accumulators.push(StopAccumulator::new(slot_rule, single));
    }
    let mut multi = MultiAccumulator::new(accumulators);
    let file = File::open(records).map_err(|e| CliError::data(format!("cannot open {}: {e}", records.display())))?;
    for record in RecordReader::new(BufReader::new(file), format) {
        let record = record.map_err(|e| CliError::data(format!("{}: {e}", records.display())))?;
        if multi.push(&record) {
            break;
        }
    }

    let accs = multi.accumulators();
    let main = ch_pvalue(accs[0].counts(), &rule, epsilon).map_err(CliError::data)?;
    let output = AnalysisOutput {
        window_center: center,
        window_width: width,
        report: main,
    };
    let mut text = format!("window={center}:{width}\n");
    text.push_str(&main.to_key_value());
    write_file(&common.out.join("report.txt"), &text)?;
    write_json(&common.out.join("report.json"), &output)?;

    let mut csv = String::from("slot,n_success,n_stop,n_stop_reached,p_value,sigma_equivalent,separated\n");
    for (i, acc) in accs[1..].iter().enumerate() {
        let r = ch_pvalue(acc.counts(), &slot_rule, epsilon).map_err(CliError::data)?;
        let _ = writeln!(
            csv,
            "{},{},{},{},{:e},{:.6},{}",
            i + 1,
            r.n_success,
            r.n_stop,
            r.complete,
            r.p_value,
            r.sigma_equivalent,
            separated[i]
        );
    }
    write_file(&common.out.join("per_slot.csv"), &csv)?;

    for name in ["report.txt", "report.json", "per_slot.csv"] {
        manifest.add_output(name);
    }
    manifest.finish();
    write_manifest(&manifest, &common.out)?;
    print!("{text}");
    if !main.complete {
        eprintln!(
            "warning: records ended after {} of {} category events; report flagged partial",
            main.n_events, main.n_stop
        );
        return Ok(EXIT_DATA);
    }
    Ok(EXIT_OK)
}

fn cmd_spacetime(common: &Common, widths: Option<Vec<u32>>, resolution: Option<f64>) -> CliResult {
    let (mut doc, text) = match &common.config {
        Some(path) => {
            let text = read_text(path)?;
            let doc = config::parse_spacetime(&text, &path.display().to_string()).map_err(CliError::config)?;
            (doc, text)
        }
        None => {
            let doc = SpacetimeDocument::calibrated();
            let text = config::to_toml(&doc);
            (doc, text)
        }
    };
    if let Some(w) = widths {
        doc.widths = w;
    }
    if let Some(r) = resolution {
        doc.angular_resolution = r;
    }
    let audit = spacetime_audit(&doc.geometry, &doc.chronology, &doc.widths, doc.angular_resolution, doc.n_slots, doc.center_slot)?;

    prepare_out(&common.out)?;
    let mut manifest = RunManifest::start(
        "spacetime",
        &text,
        None,
        json!({ "widths": doc.widths, "angular_resolution": doc.angular_resolution }),
    );
    write_file(&common.out.join("margins.csv"), &audit.margins_csv)?;
    write_file(&common.out.join("boundaries.csv"), &audit.boundaries_csv)?;
    write_file(&common.out.join("slots.csv"), &audit.slots_csv)?;
    for name in ["margins.csv", "boundaries.csv", "slots.csv"] {
        manifest.add_output(name);
    }
    manifest.finish();
    write_manifest(&manifest, &common.out)?;
    print!("{}", audit.margins_csv);
    Ok(EXIT_OK)
}

/// CSV tables produced by a spacetime audit.
pub struct SpacetimeAudit {
    pub margins_csv: String,
    pub boundaries_csv: String,
    pub slots_csv: String,
}

pub fn spacetime_audit(
    geometry: &ExperimentGeometry,
    chronology: &TrialChronology,
    widths: &[u32],
    resolution: f64,
    n_slots: usize,
    center_slot: usize,
) -> Result<SpacetimeAudit, CliError> {
    let mut margins_csv = String::from(
        "width,choice_A_ns,choice_B_ns,meas_A_ns,meas_B_ns,min_margin_ns,uncertainty_ns,limiting,min_distance_A_m,min_distance_B_m,min_distance_S_m,min_distance_m,weak\n",
    );
    let mut boundaries_csv = String::from("width,site,direction_deg,radius_m,x_m,y_m\n");
    for &w in widths {
        let m = locality_margins(geometry, chronology, w).map_err(CliError::config)?;
        let regions = boundary_regions(geometry, chronology, w, resolution).map_err(CliError::data)?;
        let d: Vec<f64> = regions.regions.iter().map(|r| r.min_distance).collect();
        let min_d = regions.min_distance();
        let _ = writeln!(
            margins_csv,
            "{w},{:.3},{:.3},{:.3},{:.3},{:.3},{:.3},{},{:.3},{:.3},{:.3},{:.3},{}",
            m.choice_a,
            m.choice_b,
            m.meas_a,
            m.meas_b,
            m.minimum,
            m.uncertainty,
            m.limiting,
            d[0],
            d[1],
            d[2],
            min_d,
            min_d < WEAK_BOUNDARY_M
        );
        for region in &regions.regions {
            for ((angle, r), p) in region
                .directions_deg
                .iter()
                .zip(&region.radii)
                .zip(region.polygon())
            {
                let _ = writeln!(
                    boundaries_csv,
                    "{w},{},{angle:.3},{r:.4},{:.4},{:.4}",
                    region.site, p[0], p[1]
                );
            }
        }
    }
    let mut slots_csv = String::from("slot,choice_A_ns,choice_B_ns,meas_A_ns,meas_B_ns,min_margin_ns,separated\n");
    let per_slot = slot_margins(geometry, chronology, n_slots, center_slot).map_err(CliError::config)?;
    for (i, m) in per_slot.iter().enumerate() {
        let _ = writeln!(
            slots_csv,
            "{},{:.3},{:.3},{:.3},{:.3},{:.3},{}",
            i + 1,
            m.choice_a,
            m.choice_b,
            m.meas_a,
            m.meas_b,
            m.minimum,
            m.all_positive()
        );
    }
    Ok(SpacetimeAudit {
        margins_csv,
        boundaries_csv,
        slots_csv,
    })
}

fn write_solution(dir: &Path, solution: &DesignSolution, manifest: &mut RunManifest) -> Result<(), CliError> {
    write_file(&dir.join("solution.txt"), &solution.to_key_value())?;
    write_json(&dir.join("solution.json"), solution)?;
    let mut csv = String::from("rank,theta_deg,a,a_prime,b,b_prime,value,ch_value,success_fraction\n");
    for (i, p) in solution.restarts.iter().enumerate() {
        let _ = writeln!(
            csv,
            "{},{:.6},{:.6},{:.6},{:.6},{:.6},{:e},{:e},{:.6}",
            i + 1,
            p.theta_deg,
            p.settings.a,
            p.settings.a_prime,
            p.settings.b,
            p.settings.b_prime,
            p.value,
            p.ch_value,
            p.success_fraction
        );
    }
    write_file(&dir.join("restarts.csv"), &csv)?;
    for name in ["solution.txt", "solution.json", "restarts.csv"] {
        manifest.add_output(name);
    }
    Ok(())
}

fn cmd_optimize(common: &Common, critical: bool) -> CliResult {
    let (mut problem, _) = match &common.config {
        Some(path) => {
            let text = read_text(path)?;
            let p = config::parse_design_problem(&text, &path.display().to_string()).map_err(CliError::config)?;
            (p, text)
        }
        None => (DesignProblem::published(), String::new()),
    };
    if let Some(seed) = common.seed {
        problem.seed = seed;
    }
    let resolved = config::to_toml(&problem);
    prepare_out(&common.out)?;
    let mut manifest = RunManifest::start("optimize", &resolved, Some(problem.seed), json!({ "critical": critical }));
    write_file(&common.out.join("problem.toml"), &resolved)?;
    manifest.add_output("problem.toml");

    let (solution, code) = match optimize_design(&problem) {
        Ok(s) => (s, EXIT_OK),
        Err(DesignError::NoViolation { best_b, solution }) => {
            eprintln!("no violation: best B = {best_b:e} (units of p_pair)");
            (*solution, EXIT_NO_VIOLATION)
        }
        Err(e) => return Err(CliError::config(e)),
    };
    write_solution(&common.out, &solution, &mut manifest)?;
    print!("{}", solution.to_key_value());

    if critical {
        match critical_efficiency(&problem) {
            Ok(eta) => {
                let text = format!("critical_efficiency={eta:.4}\n");
                write_file(&common.out.join("critical.txt"), &text)?;
                manifest.add_output("critical.txt");
                print!("{text}");
            }
            Err(e) => {
                manifest.finish();
                write_manifest(&manifest, &common.out)?;
                eprintln!("error: {e}");
                return Ok(EXIT_NO_VIOLATION);
            }
        }
    }
    manifest.finish();
    write_manifest(&manifest, &common.out)?;
    Ok(code)
}

fn cmd_report(common: &Common, runs: &[PathBuf]) -> CliResult {
    if runs.is_empty() {
        return Err(CliError::config("report needs at least one run directory"));
    }
    let mut entries = Vec::new();
    let mut text = String::new();
    for dir in runs {
        let manifest = RunManifest::read(dir)
            .map_err(|e| CliError::data(format!("{}: cannot read manifest: {e}", dir.display())))?;
        let _ = writeln!(
            text,
            "## {} ({})\nconfig_digest={}\nseed={}",
            dir.display(),
            manifest.command,
            manifest.config_digest,
            manifest.seed.map_or("none".to_string(), |s| s.to_string())
        );
        let result = match manifest.command.as_str() {
            "analyze" => Some("report.txt"),
            "optimize" => Some("solution.txt"),
            "spacetime" => Some("margins.csv"),
            _ => None,
        };
        let body = match result {
            Some(name) => fs::read_to_string(dir.join(name))
                .map_err(|e| CliError::data(format!("{}: {e}", dir.join(name).display())))?,
            None => format!("outputs={}\n", manifest.outputs.len()),
        };
        text.push_str(&body);
        text.push('\n');
        entries.push(json!({ "run": dir, "manifest": manifest, "summary": body }));
    }
    prepare_out(&common.out)?;
    write_file(&common.out.join("summary.txt"), &text)?;
    write_json(&common.out.join("summary.json"), &entries)?;
    print!("{text}");
    Ok(EXIT_OK)
}
