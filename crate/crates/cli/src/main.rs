use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use fluid_ces::harness::{read_rows, report, run_experiment, ExperimentSpec, ReportFormat};
use fluid_ces::model::validate_scenario;
use fluid_ces::workload::{
    build_scenario_from_datasets, generate_scenario, ingest_checkins, ingest_energy,
    perturb_disconnections, Bounds, GeneratorConfig,
};
use fluid_ces::{evaluate_plan, Algorithm, Composer, HeuristicConfig, ProvisionMode, Scenario};

#[derive(Parser)]
#[command(name = "ces", version, about = "Compose intermittent crowdsourced energy services")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic scenario from a generator config.
    Gen {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Build a scenario from check-in and energy CSV files.
    Ingest {
        #[arg(long)]
        checkins: PathBuf,
        #[arg(long)]
        energy: PathBuf,
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Inject random disconnections into a scenario.
    Perturb {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        freq: f64,
        #[arg(long)]
        len_min: u32,
        #[arg(long)]
        len_max: u32,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Plan every request of a scenario with one algorithm.
    Compose {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long)]
        algo: Algorithm,
        #[arg(long, default_value_t = HeuristicConfig::default().mu)]
        mu: f64,
        #[arg(long, default_value_t = HeuristicConfig::default().d_max)]
        dmax: f64,
        #[arg(long, default_value_t = HeuristicConfig::default().g_min)]
        gmin: u32,
        /// Stability threshold of the lossy filter; defaults to --mu.
        #[arg(long)]
        lossy_mu: Option<f64>,
        #[arg(long)]
        out: PathBuf,
        /// Also replay the plans and write delivery reports here.
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Run an experiment sweep and write its metrics rows.
    Bench {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Convert metrics rows to CSV or JSON.
    Report {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        format: ReportFormat,
        #[arg(long)]
        out: PathBuf,
    },
}

fn load_scenario(path: &Path) -> Result<Scenario> {
    let s = Scenario::load(path).with_context(|| format!("reading scenario {}", path.display()))?;
    let problems = validate_scenario(&s);
    if !problems.is_empty() {
        bail!("invalid scenario {}:\n  {}", path.display(), problems.join("\n  "));
    }
    Ok(s)
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    std::fs::write(path, serde_json::to_string_pretty(value)? + "\n")
        .with_context(|| format!("writing {}", path.display()))
}

fn format_for(path: &Path) -> ReportFormat {
    match path.extension().and_then(|e| e.to_str()) {
        Some("csv") => ReportFormat::Csv,
        _ => ReportFormat::Json,
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Gen { config, out } => {
            let cfg = GeneratorConfig::load(&config)
                .with_context(|| format!("reading config {}", config.display()))?;
            generate_scenario(&cfg)?.save(&out)?;
        }
        Command::Ingest {
            checkins,
            energy,
            config,
            out,
        } => {
            let cfg = GeneratorConfig::load(&config)
                .with_context(|| format!("reading config {}", config.display()))?;
            let c = ingest_checkins(&checkins)?;
            let e = ingest_energy(&energy)?;
            eprintln!("ingested {} check-in rows and {} energy rows", c.len(), e.len());
            build_scenario_from_datasets(&c, &e, &cfg)?.save(&out)?;
        }
        Command::Perturb {
            input,
            freq,
            len_min,
            len_max,
            seed,
            out,
        } => {
            if !(freq >= 0.0 && freq.is_finite()) {
                bail!("--freq must be finite and non-negative");
            }
            if len_min < 1 || len_min > len_max {
                bail!("need 1 <= --len-min <= --len-max");
            }
            let s = load_scenario(&input)?;
            perturb_disconnections(&s, freq, Bounds::new(len_min, len_max), seed).save(&out)?;
        }
        Command::Compose {
            scenario,
            algo,
            mu,
            dmax,
            gmin,
            lossy_mu,
            out,
            report,
        } => {
            let s = load_scenario(&scenario)?;
            let heuristic = HeuristicConfig {
                mu,
                d_max: dmax,
                g_min: gmin,
            };
            heuristic.validate()?;
            let mut composer = Composer {
                heuristic,
                lossy_mu: lossy_mu.unwrap_or(mu),
                ..Composer::default()
            };
            composer.context.switch_cost_mah = s.switch_cost_mah;
            let mut plans = BTreeMap::new();
            let mut reports = BTreeMap::new();
            for req in &s.requests {
                let plan = composer.compose(algo, &s.services, req)?;
                if report.is_some() {
                    let r = evaluate_plan(&plan, &s, req, ProvisionMode::Expected)?;
                    reports.insert(req.id.clone(), r);
                }
                plans.insert(req.id.clone(), plan);
            }
            write_json(&out, &plans)?;
            if let Some(path) = report {
                write_json(&path, &reports)?;
            }
        }
        Command::Bench { spec, out } => {
            let spec = ExperimentSpec::load(&spec)
                .with_context(|| format!("reading spec {}", spec.display()))?;
            let rows = run_experiment(&spec)?;
            report(&rows, format_for(&out), &out)?;
        }
        Command::Report { input, format, out } => {
            let rows = read_rows(&input).with_context(|| format!("reading rows {}", input.display()))?;
            report(&rows, format, &out)?;
        }
    }
    Ok(())
}

fn main() {
    if let Err(e) = run(Cli::parse()) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}
