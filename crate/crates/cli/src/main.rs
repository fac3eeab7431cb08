//! `v2g`: train price models, simulate a station and compare scenarios.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use v2g_core::config::{load_or_train_markov, prepare_inputs, Inputs, RunConfig};
use v2g_core::fleet::{session_value_function, simulate};
use v2g_core::io::{write_prices, write_sessions};
use v2g_core::metrics::{
    write_comparison_csv, write_cumulative_csv, write_session_outcomes_csv, write_steps_csv, Summary,
};
use v2g_core::synth::{synth_prices, synth_sessions, PriceSynthConfig, SessionSynthConfig};
use v2g_core::{Error, PriceMarkov, Result, Scenario, SimResult};

#[derive(Parser)]
#[command(name = "v2g", version, about = "Vehicle-to-grid charging station controller and simulator")]
struct Cli {
    /// Print errors as one JSON object on stderr.
    #[arg(long, global = true)]
    error_json: bool,
    /// More log output (repeat for debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Train (or load from cache) the Markov price model.
    TrainPrices {
        #[command(flatten)]
        run: RunArgs,
        /// Where to write the model JSON.
        #[arg(long)]
        model_out: PathBuf,
    },
    /// Simulate one scenario.
    Simulate {
        #[command(flatten)]
        run: RunArgs,
        /// Overrides the config's scenario.
        #[arg(long)]
        scenario: Option<Scenario>,
        /// Use this model instead of training one.
        #[arg(long)]
        model: Option<PathBuf>,
        /// Also write the value function of this session id.
        #[arg(long, value_name = "SESSION_ID")]
        dump_valuefn: Option<String>,
    },
    /// Run UC and a scenario set on identical inputs and compare costs.
    Compare {
        #[command(flatten)]
        run: RunArgs,
        /// Comma-separated scenarios; the config's list when absent.
        #[arg(long, value_delimiter = ',')]
        scenarios: Vec<Scenario>,
        #[arg(long)]
        model: Option<PathBuf>,
    },
    /// Print a summary written by `compare`.
    Report {
        /// A summary.json or the directory holding it.
        path: PathBuf,
    },
    /// Write synthetic price and session files.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 30)]
        days: usize,
        #[arg(long, default_value_t = 75)]
        sessions: usize,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        #[arg(long, default_value = "SYN")]
        zone: String,
    },
}

#[derive(Args)]
struct RunArgs {
    /// TOML run configuration; built-in defaults (synthetic data) when absent.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Overrides the config's seed.
    #[arg(long)]
    seed: Option<u64>,
}

impl RunArgs {
    fn config(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        Ok(cfg)
    }
}

/// Exit status per error kind.
fn exit_code(e: &Error) -> u8 {
    match e.kind() {
        "data" | "io" | "format" => 3,
        "input" => 4,
        "config" => 5,
        "infeasible" => 6,
        _ => 1,
    }
}

#[derive(Serialize)]
struct ErrorReport<'a> {
    kind: &'a str,
    exit_code: u8,
    message: String,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match dispatch(cli.cmd) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let code = exit_code(&e);
            if cli.error_json {
                let report = ErrorReport {
                    kind: e.kind(),
                    exit_code: code,
                    message: e.to_string(),
                };
                eprintln!("{}", serde_json::to_string(&report).unwrap_or_default());
            } else {
                eprintln!("error: {e}");
            }
            ExitCode::from(code)
        }
    }
}

fn dispatch(cmd: Cmd) -> Result<()> {
    match cmd {
        Cmd::TrainPrices { run, model_out } => train_prices(&run, &model_out),
        Cmd::Simulate {
            run,
            scenario,
            model,
            dump_valuefn,
        } => simulate_cmd(&run, scenario, model.as_deref(), dump_valuefn.as_deref()),
        Cmd::Compare { run, scenarios, model } => compare(&run, scenarios, model.as_deref()),
        Cmd::Report { path } => report(&path),
        Cmd::Synth {
            out,
            days,
            sessions,
            seed,
            zone,
        } => synth(&out, days, sessions, seed, &zone),
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Echo of the resolved configuration next to every output.
fn write_config_echo(cfg: &RunConfig, out: &Path) -> Result<()> {
    let text = format!("# config hash {}\n{}", cfg.hash(), cfg.to_toml_string()?);
    write_text(&out.join("config.toml"), &text)
}

fn model_for(cfg: &RunConfig, inputs: &Inputs, given: Option<&Path>) -> Result<PriceMarkov> {
    if let Some(p) = given {
        return PriceMarkov::load(p);
    }
    let (m, hit) = load_or_train_markov(
        &inputs.history,
        cfg.n_nodes,
        cfg.horizon,
        cfg.markov_mode,
        cfg.cache_dir.as_deref(),
    )?;
    log::info!("price model {}", if hit { "loaded from cache" } else { "trained" });
    Ok(m)
}

fn train_prices(run: &RunArgs, model_out: &Path) -> Result<()> {
    let cfg = run.config()?;
    let inputs = prepare_inputs(&cfg)?;
    let m = model_for(&cfg, &inputs, None)?;
    if let Some(dir) = model_out.parent().filter(|d| !d.as_os_str().is_empty()) {
        create_dir(dir)?;
    }
    m.save(model_out)?;
    println!(
        "wrote {} ({} nodes, horizon {}, {:?})",
        model_out.display(),
        m.n_nodes(),
        m.horizon(),
        m.mode()
    );
    Ok(())
}

fn run_one(cfg: &RunConfig, inputs: &Inputs, markov: Option<&PriceMarkov>, scenario: Scenario) -> Result<SimResult> {
    let r = simulate(
        &cfg.facility(),
        &inputs.prices,
        markov,
        &inputs.curves,
        &inputs.sessions,
        scenario,
        &cfg.sim_options(),
    )?;
    log::info!("{scenario}: cost {:.2} in {:.2} s", r.grid_cost, r.runtime_s);
    Ok(r)
}

fn log_load_stats(inputs: &Inputs) {
    if let Some(st) = &inputs.session_stats {
        println!(
            "sessions: {} rows, {} used, {} filtered, {} rejected",
            st.rows_in, st.rows_used, st.rows_filtered, st.rows_rejected
        );
    }
}

fn simulate_cmd(run: &RunArgs, scenario: Option<Scenario>, model: Option<&Path>, dump: Option<&str>) -> Result<()> {
    let mut cfg = run.config()?;
    if let Some(s) = scenario {
        cfg.scenario = s;
    }
    let inputs = prepare_inputs(&cfg)?;
    log_load_stats(&inputs);
    let markov = if cfg.scenario.needs_markov() {
        Some(model_for(&cfg, &inputs, model)?)
    } else {
        None
    };
    let result = run_one(&cfg, &inputs, markov.as_ref(), cfg.scenario)?;
    create_dir(&run.out)?;
    write_config_echo(&cfg, &run.out)?;
    write_session_outcomes_csv(&result, &run.out.join("sessions.csv"))?;
    write_steps_csv(&result, &run.out.join("steps.csv"))?;
    result.write_audit_csv(&run.out.join("audit.csv"))?;
    let mut results = vec![result];
    if cfg.scenario != Scenario::Uc {
        // Savings need the baseline on the same inputs.
        results.insert(0, run_one(&cfg, &inputs, None, Scenario::Uc)?);
    }
    let summary = Summary::build(&results, Scenario::Uc, &cfg.mileage, cfg.hash(), cfg.seed)?;
    summary.write_json(&run.out.join("summary.json"))?;
    if let Some(id) = dump {
        let s = inputs
            .sessions
            .iter()
            .find(|s| s.id == id)
            .ok_or_else(|| Error::Input(format!("no session with id {id:?}")))?;
        let vf = session_value_function(
            &cfg.facility(),
            &inputs.prices,
            markov.as_ref(),
            &inputs.curves,
            s,
            cfg.scenario,
            &cfg.sim_options(),
        )?
        .ok_or_else(|| Error::Input("UC has no value function".into()))?;
        vf.write_csv(&run.out.join(format!("valuefn-{id}.csv")))?;
    }
    print_summary(&summary);
    Ok(())
}

fn compare(run: &RunArgs, scenarios: Vec<Scenario>, model: Option<&Path>) -> Result<()> {
    let mut cfg = run.config()?;
    if !scenarios.is_empty() {
        cfg.compare = scenarios;
    }
    let mut set = vec![Scenario::Uc];
    for s in &cfg.compare {
        if !set.contains(s) {
            set.push(*s);
        }
    }
    let inputs = prepare_inputs(&cfg)?;
    log_load_stats(&inputs);
    let markov = if set.iter().any(|s| s.needs_markov()) {
        Some(model_for(&cfg, &inputs, model)?)
    } else {
        None
    };
    let results = set
        .iter()
        .map(|&s| run_one(&cfg, &inputs, markov.as_ref(), s))
        .collect::<Result<Vec<_>>>()?;
    let summary = Summary::build(&results, Scenario::Uc, &cfg.mileage, cfg.hash(), cfg.seed)?;
    create_dir(&run.out)?;
    write_config_echo(&cfg, &run.out)?;
    summary.write_json(&run.out.join("summary.json"))?;
    write_comparison_csv(&summary.rows, &run.out.join("comparison.csv"))?;
    write_cumulative_csv(&results, &run.out.join("cumulative_cost.csv"))?;
    print_summary(&summary);
    Ok(())
}

fn report(path: &Path) -> Result<()> {
    let file = if path.is_dir() { path.join("summary.json") } else { path.to_path_buf() };
    print_summary(&Summary::read_json(&file)?);
    Ok(())
}

fn pct(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.1}%")).unwrap_or_else(|| "-".into())
}

fn print_summary(s: &Summary) {
    println!(
        "config {}  seed {}  {} sessions over {} steps",
        &s.config_hash[..12.min(s.config_hash.len())],
        s.seed,
        s.n_sessions,
        s.n_steps
    );
    println!(
        "{:<8} {:>12} {:>9} {:>14} {:>10} {:>9} {:>9}",
        "scenario", "grid cost", "savings", "w/ penalty", "compliant", "MWh in", "MWh out"
    );
    for r in &s.rows {
        println!(
            "{:<8} {:>12.2} {:>9} {:>14} {:>10} {:>9.3} {:>9.3}",
            r.scenario,
            r.cost,
            pct(r.savings_pct),
            pct(r.savings_pct_with_penalty),
            r.compliance.map(|c| format!("{c:.3}")).unwrap_or_else(|| "-".into()),
            r.charged_mwh,
            r.discharged_mwh
        );
    }
    for b in &s.v2g_benefit {
        let rate = |v: Option<f64>, unit: &str| v.map(|x| format!("${x:.3}/{unit}")).unwrap_or_else(|| "-".into());
        println!(
            "{} vs {}: ${:.2} saved, {:.1} kWh discharged, {:.0} mi equivalent, {}, {}",
            b.scenario,
            b.against,
            b.savings,
            b.discharged_kwh,
            b.miles,
            rate(b.per_kwh, "kWh"),
            rate(b.per_mile, "mi")
        );
    }
}

fn synth(out: &Path, days: usize, n_sessions: usize, seed: u64, zone: &str) -> Result<()> {
    let mut seeds = v2g_core::config::SeedStream::new(seed);
    let (p_seed, s_seed) = (seeds.next_seed(), seeds.next_seed());
    let prices = synth_prices(&PriceSynthConfig { days, ..Default::default() }, p_seed)?;
    let sessions = synth_sessions(
        &SessionSynthConfig {
            n_sessions,
            ..Default::default()
        },
        &prices,
        s_seed,
    )?;
    create_dir(out)?;
    write_prices(&prices, zone, &out.join("prices.csv"))?;
    write_sessions(&sessions, &out.join("sessions.csv"))?;
    println!("wrote {} price steps and {} sessions to {}", prices.len(), sessions.len(), out.display());
    Ok(())
}
