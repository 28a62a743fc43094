use std::collections::BTreeMap;
use std::fs;
use std::io::{self, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, ValueEnum};
use jumpis::{
    load_config, run_comparison, EstimatorReport, ExperimentConfig, Integrand, OutputFormat,
    PricingProblem, Scope, Strategy, Tilt,
};
use serde::Serialize;

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Format {
    Table,
    Records,
}

/// Runs an importance sampling experiment and reports prices and variances
/// per strategy.
#[derive(Debug, Parser)]
#[command(name = "jumpis", version)]
struct Args {
    /// Experiment file (TOML).
    #[arg(long)]
    config: PathBuf,

    /// Master seed; overrides `run.master_seed`.
    #[arg(long)]
    seed: Option<u64>,

    /// Second-stage sample count.
    #[arg(long)]
    n: Option<usize>,

    /// First-stage sample count (defaults to n).
    #[arg(long)]
    m: Option<usize>,

    /// Comma-separated tilts: crude, gaussian, poisson, gaussian_poisson.
    #[arg(long, value_delimiter = ',')]
    strategies: Option<Vec<String>>,

    /// Comma-separated scopes: full, reduced.
    #[arg(long, value_delimiter = ',')]
    scope: Option<Vec<String>>,

    /// Worker threads (defaults to all cores).
    #[arg(long)]
    threads: Option<usize>,

    #[arg(long, value_enum)]
    format: Option<Format>,

    /// Write the report here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,

    /// Leave wall-clock timings out of records so reruns are byte-identical.
    #[arg(long)]
    omit_timings: bool,
}

#[derive(Debug, Serialize)]
#[serde(rename_all = "camelCase")]
struct Timings {
    stage1: f64,
    stage2: f64,
}

#[derive(Debug, Serialize)]
#[serde(rename_all = "camelCase")]
struct Record {
    strategy: &'static str,
    scope: Option<&'static str>,
    strike: f64,
    price: Option<f64>,
    var: Option<f64>,
    std_error: Option<f64>,
    ci95: Option<(f64, f64)>,
    m: usize,
    n: usize,
    seeds: Option<jumpis::Seeds>,
    iterations: Option<usize>,
    grad_norm: Option<f64>,
    converged: Option<bool>,
    optimal_params: Option<jumpis::ReducedISParams>,
    timings: Option<Timings>,
    #[serde(skip_serializing_if = "Option::is_none")]
    error: Option<String>,
}

struct Cell {
    strike: f64,
    strategy: Strategy,
    outcome: Result<EstimatorReport, String>,
}

fn record(cell: &Cell, omit_timings: bool, n: usize, m: usize) -> Record {
    let s = cell.strategy;
    let scope = (!s.is_crude()).then(|| s.scope.name());
    match &cell.outcome {
        Ok(r) => Record {
            strategy: s.tilt.name(),
            scope,
            strike: cell.strike,
            price: Some(r.price),
            var: Some(r.variance),
            std_error: Some(r.std_error),
            ci95: Some(r.ci95),
            m: r.m,
            n: r.n,
            seeds: Some(r.seeds),
            iterations: Some(r.iterations),
            grad_norm: Some(r.grad_norm),
            converged: Some(r.converged),
            optimal_params: r.optimal_params.clone(),
            timings: (!omit_timings).then_some(Timings {
                stage1: r.cpu_seconds_stage1,
                stage2: r.cpu_seconds_stage2,
            }),
            error: None,
        },
        Err(e) => Record {
            strategy: s.tilt.name(),
            scope,
            strike: cell.strike,
            price: None,
            var: None,
            std_error: None,
            ci95: None,
            m: if s.is_crude() { 0 } else { m },
            n,
            seeds: None,
            iterations: None,
            grad_norm: None,
            converged: None,
            optimal_params: None,
            timings: None,
            error: Some(e.clone()),
        },
    }
}

fn fmt_num(x: f64) -> String {
    let a = x.abs();
    if a >= 100.0 {
        format!("{x:.0}")
    } else if a >= 10.0 {
        format!("{x:.2}")
    } else {
        format!("{x:.3}")
    }
}

fn render_table(cfg: &ExperimentConfig, cells: &[Cell], scopes: &[Scope]) -> String {
    let mut by_strike: BTreeMap<usize, Vec<&Cell>> = BTreeMap::new();
    let mut order: Vec<f64> = Vec::new();
    for c in cells {
        let idx = match order.iter().position(|&k| k == c.strike) {
            Some(i) => i,
            None => {
                order.push(c.strike);
                order.len() - 1
            }
        };
        by_strike.entry(idx).or_default().push(c);
    }
    let lookup = |group: &[&Cell], s: Strategy| -> String {
        match group.iter().find(|c| c.strategy == s).map(|c| &c.outcome) {
            Some(Ok(r)) => fmt_num(r.variance),
            Some(Err(_)) => "failed".into(),
            None => "-".into(),
        }
    };
    let mut out = String::new();
    if let Some(t) = &cfg.title {
        out.push_str(t);
        out.push('\n');
    }
    out.push_str(&format!(
        "{:<8} {:>8} {:>10} {:>10} {:>10} {:>10} {:>10}\n",
        "", "Strike", "Price", "Var", "VarG", "VarP", "VarGP"
    ));
    for (idx, group) in &by_strike {
        let crude = group.iter().find(|c| c.strategy.is_crude());
        let (price, var) = match crude.map(|c| &c.outcome) {
            Some(Ok(r)) => (fmt_num(r.price), fmt_num(r.variance)),
            Some(Err(_)) => ("failed".into(), "failed".into()),
            None => ("-".into(), "-".into()),
        };
        for (row, &scope) in scopes.iter().enumerate() {
            let strike = if row == 0 { fmt_num(order[*idx]) } else { String::new() };
            out.push_str(&format!(
                "{:<8} {:>8} {:>10} {:>10} {:>10} {:>10} {:>10}\n",
                capitalize(scope.name()),
                strike,
                price,
                var,
                lookup(group, Strategy::new(Tilt::Gaussian, scope)),
                lookup(group, Strategy::new(Tilt::Poisson, scope)),
                lookup(group, Strategy::new(Tilt::GaussianPoisson, scope)),
            ));
        }
        if scopes.is_empty() {
            out.push_str(&format!(
                "{:<8} {:>8} {:>10} {:>10}\n",
                "",
                fmt_num(order[*idx]),
                price,
                var
            ));
        }
    }
    out
}

fn capitalize(s: &str) -> String {
    let mut c = s.chars();
    match c.next() {
        Some(f) => f.to_uppercase().chain(c).collect(),
        None => String::new(),
    }
}

fn apply_overrides(cfg: &mut ExperimentConfig, args: &Args) -> Result<(), String> {
    if let Some(seed) = args.seed {
        cfg.run.master_seed = seed;
    }
    if let Some(n) = args.n {
        cfg.run.n = n;
    }
    if let Some(m) = args.m {
        cfg.run.m = Some(m);
    }
    if let Some(list) = &args.strategies {
        cfg.run.strategies = list
            .iter()
            .map(|s| s.parse::<Tilt>().map_err(|e| e.to_string()))
            .collect::<Result<_, _>>()?;
    }
    if let Some(list) = &args.scope {
        cfg.run.scopes = list
            .iter()
            .map(|s| s.parse::<Scope>().map_err(|e| e.to_string()))
            .collect::<Result<_, _>>()?;
    }
    if let Some(f) = args.format {
        cfg.output.format = match f {
            Format::Table => OutputFormat::Table,
            Format::Records => OutputFormat::Records,
        };
    }
    if let Some(p) = &args.out {
        cfg.output.path = Some(p.display().to_string());
    }
    cfg.validate().map_err(|e| e.to_string())
}

fn run(args: Args) -> Result<bool, String> {
    let mut cfg = load_config(&args.config).map_err(|e| e.to_string())?;
    apply_overrides(&mut cfg, &args)?;
    if let Some(t) = args.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build_global()
            .map_err(|e| e.to_string())?;
    }
    let strategies: Vec<Strategy> = cfg.strategies();
    let problems: Vec<PricingProblem> = cfg.problems().map_err(|e| e.to_string())?;
    let settings = cfg.engine_settings();
    let (n, m) = (cfg.run.n, cfg.m());

    let mut cells = Vec::new();
    for problem in &problems {
        let strike = problem.payoff().strike();
        for (strategy, outcome) in
            run_comparison(problem, &strategies, n, m, cfg.run.master_seed, &settings)
        {
            if let Ok(r) = &outcome {
                if !r.converged {
                    eprintln!(
                        "warning: {} at strike {strike} ({}) stopped after {} Newton iterations with gradient norm {:.3e}",
                        strategy,
                        problem.label(),
                        r.iterations,
                        r.grad_norm
                    );
                }
            }
            cells.push(Cell {
                strike,
                strategy,
                outcome: outcome.map_err(|e| e.to_string()),
            });
        }
    }

    let text = match cfg.output.format {
        OutputFormat::Table => {
            let scopes: Vec<Scope> = if cfg.run.strategies.iter().any(|&t| t != Tilt::Crude) {
                cfg.run.scopes.clone()
            } else {
                Vec::new()
            };
            render_table(&cfg, &cells, &scopes)
        }
        OutputFormat::Records => {
            let mut s = String::new();
            for c in &cells {
                let line = serde_json::to_string(&record(c, args.omit_timings, n, m))
                    .map_err(|e| e.to_string())?;
                s.push_str(&line);
                s.push('\n');
            }
            s
        }
    };
    match &cfg.output.path {
        Some(p) => fs::write(p, text).map_err(|e| format!("{p}: {e}"))?,
        None => io::stdout()
            .write_all(text.as_bytes())
            .map_err(|e| e.to_string())?,
    }

    let failed: Vec<&Cell> = cells.iter().filter(|c| c.outcome.is_err()).collect();
    for c in &failed {
        if let Err(e) = &c.outcome {
            eprintln!("error: {} at strike {}: {e}", c.strategy, c.strike);
        }
    }
    if !failed.is_empty() && failed.len() == cells.len() {
        return Err("every strategy failed".into());
    }
    Ok(failed.is_empty())
}

fn main() -> ExitCode {
    let args = Args::parse();
    match run(args) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
