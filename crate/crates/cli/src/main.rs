use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use risloc::harness::{
    bounds_table, emit_csv, run_sweep, simulate, write_bounds_csv, write_csv, Experiment, ScenarioConfig,
    SweepResult,
};
use risloc::Error;

/// RIS-aided localization and CFO estimation: single trials, Monte-Carlo
/// sweeps and Cramér-Rao bounds.
#[derive(Parser, Debug)]
#[command(name = "risloc", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    opts: Overrides,
}

#[derive(Args, Debug)]
struct Overrides {
    /// TOML configuration file; built-in reference setup when omitted.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Run seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Monte-Carlo trials per sweep point.
    #[arg(long, global = true)]
    trials: Option<usize>,
    /// Output file; stdout when omitted.
    #[arg(long, global = true, value_name = "PATH")]
    out: Option<PathBuf>,
    /// Transmit powers in dBm, comma separated.
    #[arg(long, global = true, value_delimiter = ',', allow_hyphen_values = true, value_name = "LIST")]
    power_dbm: Option<Vec<f64>>,
    /// Draw the RIS phase profiles once per run.
    #[arg(long, global = true)]
    fixed_profiles: bool,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run one trial and print the estimates.
    Simulate,
    /// Monte-Carlo sweep written as CSV.
    Sweep {
        /// los_power, nlos_power_ml, nlos_power_lc, detect_power, kappa or cfo_sensitivity.
        #[arg(value_parser = parse_experiment)]
        experiment: Experiment,
    },
    /// Cramér-Rao bounds under both hypotheses, as CSV.
    Crb,
    /// Threshold calibration followed by the detection sweep, as CSV.
    Detect,
}

fn parse_experiment(s: &str) -> Result<Experiment, String> {
    s.parse::<Experiment>().map_err(|_| {
        let names: Vec<&str> = Experiment::ALL.iter().map(|e| e.name()).collect();
        format!("expected one of: {}", names.join(", "))
    })
}

/// Failure with its exit code.
struct Failure {
    code: u8,
    message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = if matches!(e, Error::Config(_)) { 2 } else { 1 };
        Failure { code, message: e.to_string() }
    }
}

fn load_config(opts: &Overrides) -> Result<ScenarioConfig, Failure> {
    let mut cfg = match &opts.config {
        Some(path) => ScenarioConfig::load(path).map_err(|e| match e {
            Error::Io { path, source } => Failure { code: 2, message: format!("cannot read config file {path}: {source}") },
            other => Failure { code: 2, message: other.to_string() },
        })?,
        None => ScenarioConfig::default(),
    };
    if let Some(seed) = opts.seed {
        cfg.run.seed = seed;
    }
    if let Some(trials) = opts.trials {
        cfg.run.trials = trials;
        cfg.detector.trials = None;
    }
    if let Some(p) = &opts.power_dbm {
        cfg.run.power_dbm = p.clone();
    }
    if opts.fixed_profiles {
        cfg.run.fixed_profiles = true;
    }
    cfg.validate().map_err(|e| Failure { code: 2, message: e.to_string() })?;
    Ok(cfg)
}

fn output(path: Option<&Path>) -> Result<Box<dyn Write>, Failure> {
    match path {
        Some(p) => File::create(p)
            .map(|f| Box::new(BufWriter::new(f)) as Box<dyn Write>)
            .map_err(|e| Failure { code: 1, message: format!("cannot create {}: {e}", p.display()) }),
        None => Ok(Box::new(io::stdout().lock())),
    }
}

fn write_sweep(res: &SweepResult, out: Option<&Path>) -> Result<(), Failure> {
    match out {
        Some(p) => emit_csv(res, p)?,
        None => write_csv(res, io::stdout().lock())?,
    }
    eprintln!("{}: {} rows in {:.1} s", res.experiment, res.points.len(), res.elapsed.as_secs_f64());
    Ok(())
}

fn deg(v: f64) -> String {
    format!("{:.6}", v.to_degrees())
}

fn run_simulate(cfg: &ScenarioConfig, out: Option<&Path>) -> Result<(), Failure> {
    let power = cfg.run.power_dbm.first().copied().unwrap_or(cfg.waveform.power_dbm);
    let rep = simulate(cfg, power)?;
    let mut w = output(out)?;
    let io_err = |e: io::Error| Failure { code: 1, message: format!("write failed: {e}") };
    let p = rep.position.p;
    let ue = rep.scenario.ue;
    let mut lines = vec![
        format!("estimator = {:?}", cfg.run.estimator).to_lowercase(),
        format!("power_dbm = {power}"),
        format!("seed = {}", cfg.run.seed),
        format!("true_position_m = [{}, {}, {}]", ue.x, ue.y, ue.z),
        format!("estimated_position_m = [{:.6}, {:.6}, {:.6}]", p.x, p.y, p.z),
        format!("position_error_m = {:.6e}", rep.errors.pos2.sqrt()),
        format!("true_cfo_hz = {}", rep.nu),
        format!("channel_cfo_hz = {:.6}", rep.estimate.nu),
        format!("refined_cfo_hz = {:.6}", rep.position.nu),
        format!("residual = {:.6e}", rep.estimate.residual),
    ];
    let truth = rep.scenario.aods()?;
    for (r, (t, e)) in truth.iter().zip(&rep.estimate.aods).enumerate() {
        lines.push(format!("aod{}_true_deg = [{}, {}]", r + 1, deg(t.az), deg(t.el)));
        lines.push(format!("aod{}_estimated_deg = [{}, {}]", r + 1, deg(e.az), deg(e.el)));
    }
    if let Some(a0) = rep.estimate.alpha0 {
        lines.push(format!("los_gain = [{:.6e}, {:.6e}]", a0.re, a0.im));
    }
    for (r, a) in rep.estimate.alphas.iter().enumerate() {
        lines.push(format!("ris{}_gain = [{:.6e}, {:.6e}]", r + 1, a.re, a.im));
    }
    match &rep.bounds {
        Some(b) => {
            lines.push(format!("peb_m = {:.6e}", b.peb));
            lines.push(format!("crb_cfo_hz = {:.6e}", b.cfo));
        }
        None => lines.push("bounds = singular".into()),
    }
    for l in lines {
        writeln!(w, "{l}").map_err(io_err)?;
    }
    w.flush().map_err(io_err)
}

fn run(cli: Cli) -> Result<(), Failure> {
    let cfg = load_config(&cli.opts)?;
    let out = cli.opts.out.as_deref();
    match cli.command {
        Command::Simulate => run_simulate(&cfg, out),
        Command::Sweep { experiment } => write_sweep(&run_sweep(&cfg, experiment)?, out),
        Command::Detect => {
            let res = run_sweep(&cfg, Experiment::DetectPower)?;
            if let Some(t) = res.threshold {
                eprintln!("threshold: {t:.6e} W");
            }
            write_sweep(&res, out)
        }
        Command::Crb => {
            let rows = bounds_table(&cfg)?;
            let w = output(out)?;
            write_bounds_csv(&rows, cfg.geometry.ris.len(), w)?;
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
