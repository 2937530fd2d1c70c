use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use memlab_cli::config::Settings;
use memlab_cli::experiments::run_experiment;
use memlab_cli::report::Report;
use memlab_cli::sweep::{sweep, Axis};
use memlab_cli::HarnessError;

/// Simulator and attack lab for device-independent QKD with devices that remember.
#[derive(Debug, Parser)]
#[command(name = "memlab", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run the honest protocol (or its CHSH / multi-device variants).
    RunProtocol {
        /// protocol, chsh or cm3.
        #[arg(long, default_value = "protocol")]
        mode: String,
        #[command(flatten)]
        common: Common,
    },
    /// Run an attack: pe, abort, impostor, bhk, hr, qre-length, qre-procrustean, qre-abort.
    Attack {
        kind: String,
        #[command(flatten)]
        common: Common,
    },
    /// Exhaustively check the leftover-hash bound and two-universality.
    VerifyPa {
        #[arg(long)]
        n: usize,
        #[arg(long)]
        t: Option<usize>,
        #[command(flatten)]
        common: Common,
    },
    /// Run an experiment over a parameter grid.
    Sweep {
        experiment: String,
        /// Axis `key=v1,v2,...` or `key=a..b`; repeat for a cross product.
        #[arg(long = "grid")]
        grid: Vec<String>,
        #[command(flatten)]
        common: Common,
    },
    /// Summarise a report and check its aggregates against its records.
    Report {
        path: PathBuf,
        /// Also write the flat CSV here.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
}

#[derive(Debug, Args)]
struct Common {
    /// TOML file with [experiment], [protocol] and [attack] sections.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    trials: Option<usize>,
    /// Rounds per device pair (BHK: repetitions; HR: day-1 key scale).
    #[arg(long = "M")]
    m: Option<String>,
    /// Leak target (BHK: inputs; HR: runs; abort: code bits).
    #[arg(long = "N")]
    n_param: Option<String>,
    #[arg(long)]
    days: Option<u32>,
    #[arg(long)]
    mu: Option<f64>,
    #[arg(long)]
    visibility: Option<f64>,
    #[arg(long)]
    cm1: bool,
    #[arg(long)]
    cm2: bool,
    #[arg(long)]
    cm3: bool,
    #[arg(long)]
    cm4: bool,
    /// Any other parameter, as `key=value`.
    #[arg(long = "set")]
    set: Vec<String>,
    /// Output directory (default: $MEMLAB_OUTPUT_DIR, the config, or ./results).
    #[arg(long)]
    out: Option<PathBuf>,
}

impl Common {
    fn settings(&self, experiment: &str) -> Result<Settings, HarnessError> {
        let mut s = match &self.config {
            Some(path) => Settings::load(path)?,
            None => Settings::default(),
        };
        let seed_in_file = match &self.config {
            Some(path) => file_has_seed(path),
            None => false,
        };
        // Exhaustive checks draw no randomness.
        if self.seed.is_none() && !seed_in_file && experiment != "verify-pa" {
            return Err(HarnessError::Config(
                "a seed is required: pass --seed or set experiment.seed".into(),
            ));
        }
        let mut pairs: Vec<(String, String)> = Vec::new();
        let mut put = |k: &str, v: Option<String>| {
            if let Some(v) = v {
                pairs.push((k.to_string(), v));
            }
        };
        put("seed", self.seed.map(|x| x.to_string()));
        put("trials", self.trials.map(|x| x.to_string()));
        put("M", self.m.clone());
        put("N", self.n_param.clone());
        put("days", self.days.map(|x| x.to_string()));
        put("mu", self.mu.map(|x| x.to_string()));
        put("visibility", self.visibility.map(|x| x.to_string()));
        for (flag, key) in [(self.cm1, "cm1"), (self.cm2, "cm2"), (self.cm3, "cm3"), (self.cm4, "cm4")] {
            put(key, flag.then(|| "true".to_string()));
        }
        for kv in &self.set {
            let (k, v) = kv
                .split_once('=')
                .ok_or_else(|| HarnessError::Config(format!("--set {kv:?} is not key=value")))?;
            pairs.push((k.trim().to_string(), v.trim().to_string()));
        }
        for (k, v) in pairs {
            s.set(experiment, &k, &v)?;
        }
        let cm = s.protocol.countermeasures;
        if cm.cm3_multi_device && s.protocol.m_devices < 2 {
            s.protocol.m_devices = 2;
        }
        // Encrypted estimation needs a pre-shared key; default to 4000 bits per pair.
        if (cm.cm2_encrypt_pe || cm.cm3_multi_device) && s.protocol.preshared_key_bits == 0 {
            s.protocol.preshared_key_bits = 4000 * s.protocol.m_devices;
        }
        Ok(s)
    }

    fn output_dir(&self, settings: &Settings) -> PathBuf {
        self.out.clone().unwrap_or_else(|| settings.output_dir())
    }
}

fn file_has_seed(path: &Path) -> bool {
    std::fs::read_to_string(path)
        .ok()
        .and_then(|text| text.parse::<toml::Table>().ok())
        .and_then(|t| t.get("experiment")?.get("seed").cloned())
        .is_some()
}

fn finish(report: &Report, dir: &Path) -> Result<(), HarnessError> {
    let (json, csv) = report.write(dir, &report.experiment)?;
    print!("{}", report.summary());
    println!("wrote {} and {}", json.display(), csv.display());
    let failed = report.failed_invariants();
    if failed.is_empty() {
        Ok(())
    } else {
        let names: Vec<&str> = failed.iter().map(|c| c.name.as_str()).collect();
        Err(HarnessError::Experiment(format!("invariant checks failed: {}", names.join(", "))))
    }
}

fn run(cli: Cli) -> Result<(), HarnessError> {
    match cli.command {
        Command::RunProtocol { mode, common } => {
            if !["protocol", "chsh", "cm3"].contains(&mode.as_str()) {
                return Err(HarnessError::Config(format!("unknown mode {mode:?}")));
            }
            let s = common.settings(&mode)?;
            finish(&run_experiment(&mode, &s)?, &common.output_dir(&s))
        }
        Command::Attack { kind, common } => {
            const KINDS: &[&str] = &[
                "pe",
                "abort",
                "impostor",
                "bhk",
                "hr",
                "qre-length",
                "qre-procrustean",
                "qre-abort",
            ];
            if !KINDS.contains(&kind.as_str()) {
                return Err(HarnessError::Config(format!(
                    "unknown attack {kind:?}; expected one of {}",
                    KINDS.join(", ")
                )));
            }
            let s = common.settings(&kind)?;
            finish(&run_experiment(&kind, &s)?, &common.output_dir(&s))
        }
        Command::VerifyPa { n, t, common } => {
            let mut s = common.settings("verify-pa")?;
            s.attack.pa_n = n;
            s.attack.pa_t = t;
            finish(&run_experiment("verify-pa", &s)?, &common.output_dir(&s))
        }
        Command::Sweep {
            experiment,
            grid,
            common,
        } => {
            let s = common.settings(&experiment)?;
            let axes = grid.iter().map(|g| Axis::parse(g)).collect::<Result<Vec<_>, _>>()?;
            let table = sweep(&experiment, &s, &axes)?;
            let (json, csv) = table.write(&common.output_dir(&s), &format!("sweep-{experiment}"))?;
            print!("{}", table.to_csv()?);
            println!("wrote {} and {}", json.display(), csv.display());
            Ok(())
        }
        Command::Report { path, csv } => {
            let text = std::fs::read_to_string(&path)
                .map_err(|e| HarnessError::Config(format!("{}: {e}", path.display())))?;
            let report: Report = serde_json::from_str(&text)
                .map_err(|e| HarnessError::Config(format!("{}: {e}", path.display())))?;
            print!("{}", report.summary());
            if let Some(out) = csv {
                std::fs::write(&out, report.to_csv()?).map_err(|e| HarnessError::Experiment(e.to_string()))?;
            }
            let bad = report.inconsistent_metrics();
            if bad.is_empty() {
                println!("aggregates match {} records", report.records.len());
                Ok(())
            } else {
                Err(HarnessError::Experiment(format!(
                    "aggregates disagree with records: {}",
                    bad.join(", ")
                )))
            }
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("memlab: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
