//! `lmflow`: evaluate a labour-market intervention from person-quarter
//! survey data, run placebo and boundary-shift checks, analyse a
//! three-state equilibrium, or simulate a synthetic world.

mod config;
mod error;
mod output;

use std::fmt::Write as _;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde::Serialize;

use lmflow::carima::{self, render_outputs, EffectReport};
use lmflow::equilibrium::{self, CompositionEffect, EquilibriumResult, ThreeStateChain};
use lmflow::estimator::EstimationPanel;
use lmflow::panel::{parse_panel, write_records, WeightSource};
use lmflow::synth::{self, GenerationStats, TrueEffects, WorldConfig, WorldTruth};
use lmflow::{QuarterId, TransitionMatrix};

use config::{parse_quarter, Resolved, RunArgs};
use error::CliError;
use output::{write_all, Files};

#[derive(Parser, Debug)]
#[command(name = "lmflow", version, about)]
struct Cli {
    /// Worker threads; outputs are identical for any value.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Estimate effects of an intervention right after --tstar.
    Evaluate(RunArgs),
    /// Evaluate at a fake boundary where no effect should show up.
    Placebo {
        #[command(flatten)]
        run: RunArgs,
        /// Real intervention boundary; the placebo horizon must end by it.
        #[arg(long)]
        true_tstar: Option<String>,
    },
    /// Re-run with the boundary moved by one quarter.
    Shift {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        new_tstar: String,
    },
    /// Stationary analysis of a 3x3 matrix given as CSV (`from,T,P,U`).
    Equilibrium {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, default_value_t = 1.0)]
        population: f64,
        /// Also report the effect of moving this much probability from
        /// m(T,T) to m(T,P).
        #[arg(long)]
        delta: Option<f64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Simulate a rotating-panel world from a TOML config.
    Synth {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        persons: Option<usize>,
        /// Horizon of the true effects written to truth.json.
        #[arg(long, default_value_t = config::DEFAULT_HORIZON)]
        horizon: usize,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.to_json());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn init_threads(n: Option<usize>) -> Result<(), CliError> {
    if let Some(n) = n {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build_global()
            .map_err(CliError::config)?;
    }
    Ok(())
}

/// Flags over file, with the global thread flag folded in.
fn prepare(run: &RunArgs, threads: Option<usize>) -> Result<Resolved, CliError> {
    let mut merged = run.merged()?;
    if threads.is_some() {
        merged.threads = threads;
    }
    init_threads(merged.threads)?;
    merged.resolve()
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Evaluate(run) => {
            let r = prepare(&run, cli.threads)?;
            let panel = load(&r)?;
            let report = carima::effects(&panel, &r.spec, &r.evaluation)?;
            let files = report_files(&report, "", r.dump_replicates)?;
            finish(&r.out, files)
        }
        Command::Placebo { run, true_tstar } => {
            let r = prepare(&run, cli.threads)?;
            let true_tstar = true_tstar.as_deref().map(parse_quarter).transpose()?;
            let panel = load(&r)?;
            let placebo = carima::placebo(&panel, &r.spec, true_tstar, &r.evaluation)?;
            let mut files = report_files(&placebo.report, "", r.dump_replicates)?;
            files.insert("placebo.json".into(), json(&placebo)?);
            finish(&r.out, files)
        }
        Command::Shift { run, new_tstar } => {
            let r = prepare(&run, cli.threads)?;
            let new_tstar = parse_quarter(&new_tstar)?;
            let panel = load(&r)?;
            let shift = carima::shift_tstar(&panel, &r.spec, new_tstar, &r.evaluation)?;
            let mut files = report_files(&shift.original, "original/", r.dump_replicates)?;
            files.extend(report_files(&shift.shifted, "shifted/", r.dump_replicates)?);
            files.insert("shift.json".into(), json(&shift)?);
            finish(&r.out, files)
        }
        Command::Equilibrium {
            input,
            population,
            delta,
            out,
        } => {
            init_threads(cli.threads)?;
            equilibrium_cmd(input, population, delta, out)
        }
        Command::Synth {
            config,
            out,
            seed,
            persons,
            horizon,
        } => {
            init_threads(cli.threads)?;
            synth_cmd(config, out, seed, persons, horizon)
        }
    }
}

fn load(r: &Resolved) -> Result<EstimationPanel, CliError> {
    let panel = parse_panel(&r.input, &r.parse)?;
    Ok(EstimationPanel::from_panel(&panel, &r.filter, WeightSource::Destination)?)
}

fn json<T: Serialize>(value: &T) -> Result<Vec<u8>, CliError> {
    let mut s = serde_json::to_string_pretty(value).map_err(|e| CliError::Model(e.to_string()))?;
    s.push('\n');
    Ok(s.into_bytes())
}

fn report_files(report: &EffectReport, prefix: &str, dump_replicates: bool) -> Result<Files, CliError> {
    let mut files: Files = render_outputs(report)
        .map_err(|e| CliError::Model(e.to_string()))?
        .into_iter()
        .map(|(name, text)| (format!("{prefix}{name}"), text.into_bytes()))
        .collect();
    if let (true, Some(reps)) = (dump_replicates, &report.replicates) {
        files.insert(
            format!("{prefix}replicates_effects.csv"),
            reps.to_csv(&report.statistic_names()).into_bytes(),
        );
    }
    Ok(files)
}

fn finish(out: &std::path::Path, files: Files) -> Result<(), CliError> {
    write_all(out, &files)?;
    let names: Vec<&String> = files.keys().collect();
    println!(
        "{}",
        serde_json::json!({ "status": "ok", "out": out.display().to_string(), "files": names })
    );
    Ok(())
}

#[derive(Serialize)]
struct EquilibriumReport {
    states: Vec<String>,
    matrix: Vec<Vec<f64>>,
    population: f64,
    result: EquilibriumResult,
    #[serde(skip_serializing_if = "Option::is_none")]
    composition: Option<CompositionEffect>,
}

fn equilibrium_table(rep: &EquilibriumReport) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "{:<8} {:>12} {:>16}", "state", "stationary", "stock");
    for (i, l) in rep.states.iter().enumerate() {
        let _ = writeln!(
            s,
            "{:<8} {:>12.6} {:>16.2}",
            l,
            rep.result.stationary.get(i),
            rep.result.stocks[i]
        );
    }
    let r = &rep.result;
    let _ = writeln!(s, "{:<34} {:>12.6}", "closed-form unemployment share", r.closed_form_pi_u);
    let _ = writeln!(s, "{:<34} {:>12.6}", "d share / d m(T,P)", r.derivative_pi_u_wrt_mtp);
    let _ = writeln!(s, "{:<34} {:>12.6}", "m(P,U) - m(T,U)", r.sign_term);
    let _ = writeln!(s, "{:<34} {:>12.6}", "bracket factor", r.bracket_factor);
    if let Some(c) = &rep.composition {
        let _ = writeln!(s, "{:<34} {:>12.6}", "moved from m(T,T) to m(T,P)", c.delta);
        let _ = writeln!(s, "{:<34} {:>12.6}", "unemployment share change", c.change);
        let _ = writeln!(
            s,
            "{:<34} {:>12.2}",
            "unemployed change",
            c.unemployed_after - c.unemployed_before
        );
    }
    s
}

fn equilibrium_cmd(input: PathBuf, population: f64, delta: Option<f64>, out: Option<PathBuf>) -> Result<(), CliError> {
    if !(population > 0.0 && population.is_finite()) {
        return Err(CliError::config(format!("population {population} must be positive")));
    }
    let text = std::fs::read_to_string(&input).map_err(|e| CliError::io(&input, e))?;
    let period = QuarterId::new(2000, 1).expect("valid quarter");
    let matrix = TransitionMatrix::from_csv(&text, period)?;
    let chain = ThreeStateChain::new(matrix, population)?;
    let report = EquilibriumReport {
        states: chain.matrix.space().labels().to_vec(),
        matrix: chain.matrix.rows(),
        population,
        result: equilibrium::analyze(&chain)?,
        composition: delta.map(|d| equilibrium::composition_effect(&chain, d)).transpose()?,
    };
    let body = json(&report)?;
    if let Some(out) = out {
        write_all(&out, &Files::from([("equilibrium.json".to_string(), body.clone())]))?;
    }
    print!("{}", String::from_utf8(body).expect("json is utf-8"));
    print!("{}", equilibrium_table(&report));
    Ok(())
}

#[derive(Serialize)]
struct TruthReport<'a> {
    config: &'a WorldConfig,
    stats: &'a GenerationStats,
    truth: &'a WorldTruth,
    #[serde(skip_serializing_if = "Option::is_none")]
    effects: Option<TrueEffects>,
}

fn synth_cmd(
    config: PathBuf,
    out: PathBuf,
    seed: Option<u64>,
    persons: Option<usize>,
    horizon: usize,
) -> Result<(), CliError> {
    let text = std::fs::read_to_string(&config).map_err(|e| CliError::io(&config, e))?;
    let mut cfg = WorldConfig::from_toml(&text)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    if let Some(n) = persons {
        cfg.persons = n;
    }
    let world = synth::generate(&cfg)?;
    let effects = match &cfg.intervention {
        Some(iv) => Some(synth::true_effects(&world.truth, iv.t_star, horizon)?),
        None => None,
    };
    let mut panel_csv = Vec::new();
    write_records(&mut panel_csv, &world.panel).map_err(|e| CliError::io(&out, e))?;
    let truth = json(&TruthReport {
        config: &cfg,
        stats: &world.stats,
        truth: &world.truth,
        effects,
    })?;
    let files = Files::from([("panel.csv".to_string(), panel_csv), ("truth.json".to_string(), truth)]);
    finish(&out, files)
}
