//! `m3ab`: run Monte-Carlo experiments, sweeps and complexity diagnostics on
//! preset or file-based instances.

use std::fs::File;
use std::io::{self, Write};
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use m3ab_core::complexity::{self, BoundVariant};
use m3ab_core::harness::{
    self, Execution, ExperimentConfig, InstanceSource, MonteCarloReport, RateEstimate, SweepParam,
};
use m3ab_core::instances::{self, Preset, PresetOptions};
use m3ab_core::{AlgorithmSpec, Error, Instance};

#[derive(Parser)]
#[command(name = "m3ab", version, about = "Multi-metric best-treatment identification with A/B validation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Monte-Carlo accuracy, validation success and type-I error per (algo, budget).
    Run(RunArgs),
    /// `run` repeated over values of one parameter.
    Sweep {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long, value_parser = parse_param)]
        param: SweepParam,
        /// Comma-separated values.
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<f64>,
    },
    /// H₃ diagnostics and error bounds.
    Complexity {
        #[command(flatten)]
        instance: InstanceArgs,
        /// Budgets at which to evaluate H̃₃ and the bounds.
        #[arg(long)]
        budget: Vec<u64>,
        /// Largest A for exhaustive subset enumeration.
        #[arg(long, default_value_t = complexity::DEFAULT_MAX_ENUMERATION)]
        max_enum: usize,
    },
    /// Write a preset instance as JSON.
    Gen {
        #[arg(long)]
        preset: String,
        #[arg(long)]
        l: Option<f64>,
        #[arg(long)]
        treatments: Option<usize>,
        /// Seed for randomized presets.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Analytic pass probabilities of the two-treatment Bayesian example.
    Table1 {
        /// Override the posterior threshold (both metrics).
        #[arg(long)]
        q: Option<f64>,
    },
}

#[derive(Args)]
struct InstanceArgs {
    /// Instance JSON file.
    #[arg(long, conflicts_with = "preset", required_unless_present = "preset")]
    instance: Option<PathBuf>,
    /// One of exp1, exp2, exp3, exp3_null, neyman_gap, table1.
    #[arg(long)]
    preset: Option<String>,
    /// exp2 heterogeneity level.
    #[arg(long)]
    l: Option<f64>,
    /// Treatment count for exp3 and exp3_null; small-variance arm count for
    /// neyman_gap.
    #[arg(long)]
    treatments: Option<usize>,
    /// Seed for randomized presets.
    #[arg(long)]
    preset_seed: Option<u64>,
    /// neyman_gap's large standard deviation.
    #[arg(long)]
    sigma_big: Option<f64>,
    /// neyman_gap's small standard deviation.
    #[arg(long)]
    sigma_small: Option<f64>,
}

impl InstanceArgs {
    fn source(&self) -> Result<InstanceSource, Error> {
        match (&self.instance, &self.preset) {
            (Some(path), _) => Ok(InstanceSource::Fixed(instances::load(path)?)),
            (None, Some(name)) => {
                let opts = PresetOptions {
                    l: self.l,
                    treatments: self.treatments,
                    seed: self.preset_seed,
                    sigma_big: self.sigma_big,
                    sigma_small: self.sigma_small,
                };
                Ok(InstanceSource::Preset(Preset::from_name(name, opts)?))
            }
            (None, None) => Err(Error::InvalidArgument("one of --instance or --preset is required".into())),
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Csv,
    Json,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    instance: InstanceArgs,
    /// Algorithm name; repeat to compare several.
    #[arg(long = "algo", required = true, value_parser = parse_algo)]
    algos: Vec<AlgorithmSpec>,
    /// Exploration budget T; repeatable.
    #[arg(long = "budget")]
    budgets: Vec<u64>,
    #[arg(long, default_value_t = 10_000)]
    reps: u64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output file; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Format::Csv)]
    format: Format,
    /// Worker threads; all cores when absent.
    #[arg(long, env = "M3AB_THREADS")]
    threads: Option<usize>,
    /// Fill the `seconds` column with wall time (otherwise 0, so that output
    /// is reproducible byte for byte).
    #[arg(long)]
    timing: bool,
}

fn parse_algo(s: &str) -> Result<AlgorithmSpec, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_param(s: &str) -> Result<SweepParam, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn preset(name: &str, l: Option<f64>, treatments: Option<usize>, seed: Option<u64>) -> Result<Preset, Error> {
    Preset::from_name(name, PresetOptions { l, treatments, seed, ..PresetOptions::default() })
}

#[derive(Serialize)]
struct Row {
    #[serde(skip_serializing_if = "Option::is_none")]
    param: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    value: Option<f64>,
    algo: String,
    budget: u64,
    reps: u64,
    exploration_accuracy: f64,
    acc_ci_lo: f64,
    acc_ci_hi: f64,
    validation_success: f64,
    vs_ci_lo: f64,
    vs_ci_hi: f64,
    type1_error: f64,
    t1_ci_lo: f64,
    t1_ci_hi: f64,
    seconds: f64,
}

fn rows(report: &MonteCarloReport, timing: bool) -> Vec<Row> {
    let split = |r: Option<RateEstimate>| r.map_or((f64::NAN, f64::NAN, f64::NAN), |r| (r.rate, r.ci.0, r.ci.1));
    report
        .cells
        .iter()
        .map(|c| {
            let (acc, acc_lo, acc_hi) = split(c.exploration_accuracy);
            let (vs, vs_lo, vs_hi) = split(c.validation_success);
            let (t1, t1_lo, t1_hi) = split(c.type1_error);
            Row {
                param: report.sweep_value.map(|(p, _)| p.to_string()),
                value: report.sweep_value.map(|(_, v)| v),
                algo: c.algorithm.name(),
                budget: c.budget,
                reps: c.repetitions,
                exploration_accuracy: acc,
                acc_ci_lo: acc_lo,
                acc_ci_hi: acc_hi,
                validation_success: vs,
                vs_ci_lo: vs_lo,
                vs_ci_hi: vs_hi,
                type1_error: t1,
                t1_ci_lo: t1_lo,
                t1_ci_hi: t1_hi,
                seconds: if timing { c.seconds } else { 0.0 },
            }
        })
        .collect()
}

fn write_rows(rows: &[Row], format: Format, out: Option<&PathBuf>) -> Result<(), Error> {
    let mut sink: Box<dyn Write> = match out {
        Some(path) => Box::new(io::BufWriter::new(File::create(path)?)),
        None => Box::new(io::stdout().lock()),
    };
    match format {
        Format::Csv => {
            let mut w = csv::Writer::from_writer(&mut sink);
            for r in rows {
                w.serialize(r).map_err(io::Error::other)?;
            }
            w.flush()?;
        }
        Format::Json => {
            serde_json::to_writer_pretty(&mut sink, rows).map_err(io::Error::other)?;
            writeln!(sink)?;
        }
    }
    sink.flush()?;
    Ok(())
}

fn config(args: &RunArgs) -> Result<ExperimentConfig, Error> {
    let mut cfg =
        ExperimentConfig::new(args.instance.source()?, args.algos.clone(), args.budgets.clone(), args.reps, args.seed);
    cfg.execution = Execution::Parallel { threads: args.threads };
    Ok(cfg)
}

fn announce(report: &MonteCarloReport, start: Instant) {
    let value = report.sweep_value.map(|(p, v)| format!(" {p}={v}")).unwrap_or_default();
    eprintln!(
        "{}{value}: best treatment {}, {} cells in {:.1}s",
        report.instance,
        report.best,
        report.cells.len(),
        start.elapsed().as_secs_f64()
    );
}

fn cmd_run(args: &RunArgs) -> Result<(), Error> {
    if args.budgets.is_empty() {
        return Err(Error::InvalidArgument("at least one --budget is required".into()));
    }
    let start = Instant::now();
    let report = harness::run_experiment(&config(args)?)?;
    announce(&report, start);
    write_rows(&rows(&report, args.timing), args.format, args.out.as_ref())
}

fn cmd_sweep(args: &RunArgs, param: SweepParam, values: &[f64]) -> Result<(), Error> {
    let mut cfg = config(args)?;
    if param == SweepParam::Budget {
        cfg.budgets = vec![0];
    } else if args.budgets.is_empty() {
        return Err(Error::InvalidArgument("at least one --budget is required".into()));
    }
    let start = Instant::now();
    let reports = harness::sweep(&cfg, param, values)?;
    let mut all = Vec::new();
    for r in &reports {
        announce(r, start);
        all.extend(rows(r, args.timing));
    }
    write_rows(&all, args.format, args.out.as_ref())
}

fn cmd_complexity(instance: &InstanceArgs, budgets: &[u64], max_enum: usize) -> Result<(), Error> {
    let source = instance.source()?;
    let inst: Instance = source.build()?;
    let (a, m) = (inst.num_treatments(), inst.num_metrics());
    println!("instance: {} (A={a}, M={m})", source.label());
    println!("best treatment: {}", m3ab_core::model::best_treatment(&inst));
    println!("delta_min: {}", complexity::delta_min(&inst));
    let h3_prime = complexity::h3_prime(&inst);
    println!("h3_prime: {h3_prime}");
    let h3 = match complexity::h3(&inst, max_enum) {
        Ok(r) => {
            println!("h3: {}", r.h3);
            let subset: Vec<String> = r.argmin_subset.iter().map(|x| x.to_string()).collect();
            println!("argmin subset: {{{}}}", subset.join(", "));
            Some(r.h3)
        }
        Err(Error::TooLarge { num_treatments, max }) => {
            println!("h3: too large to enumerate (A={num_treatments} > {max}); raise --max-enum or use h3_prime");
            None
        }
        Err(e) => return Err(e),
    };
    for &t in budgets {
        let mut line = format!("budget {t}:");
        let mut bound = |label: &str, h: f64, v: BoundVariant| {
            let b = complexity::error_bound(t, a, m, h, v);
            line += &format!(" {label}={}{}", b.value, if b.vacuous { " (vacuous)" } else { "" });
        };
        match h3 {
            Some(h) => {
                let tilde = complexity::h3_tilde(&inst, t, max_enum)?;
                bound("theorem1", h, BoundVariant::Theorem1);
                bound("theorem2", tilde, BoundVariant::Theorem2);
                bound("theorem2_stated", tilde, BoundVariant::Theorem2Stated);
                line += &format!(" h3_tilde={tilde}");
            }
            None => bound("theorem1_h3_prime", h3_prime, BoundVariant::Theorem1),
        }
        println!("{line}");
    }
    Ok(())
}

fn cmd_gen(
    name: &str,
    l: Option<f64>,
    treatments: Option<usize>,
    seed: Option<u64>,
    out: &PathBuf,
) -> Result<(), Error> {
    let p = preset(name, l, treatments, seed)?;
    instances::save(&p.build()?, out)?;
    eprintln!("wrote {p} to {}", out.display());
    Ok(())
}

fn cmd_table1(q: Option<f64>) -> Result<bool, Error> {
    let rows = instances::table1_rows(q)?;
    println!("treatment  P(E1)   P(E2)   joint   min");
    for r in &rows {
        println!("T{}         {:.4}  {:.4}  {:.4}  {:.4}", r.treatment, r.pass[0], r.pass[1], r.joint, r.min);
    }
    let dev = instances::table1_max_deviation(&rows);
    let ok = dev <= instances::TABLE1_TOLERANCE;
    println!(
        "{}: max deviation from the reference grid {dev:.4} (tolerance {})",
        if ok { "match" } else { "MISMATCH" },
        instances::TABLE1_TOLERANCE
    );
    Ok(ok)
}

fn exit_code(e: &Error) -> u8 {
    match e.root() {
        Error::InsufficientBudget { .. } => 3,
        Error::UnknownPreset(_) | Error::InvalidArgument(_) => 2,
        _ => 1,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Run(args) => cmd_run(args).map(|()| true),
        Command::Sweep { run, param, values } => cmd_sweep(run, *param, values).map(|()| true),
        Command::Complexity { instance, budget, max_enum } => {
            cmd_complexity(instance, budget, *max_enum).map(|()| true)
        }
        Command::Gen { preset, l, treatments, seed, out } => {
            cmd_gen(preset, *l, *treatments, *seed, out).map(|()| true)
        }
        Command::Table1 { q } => cmd_table1(*q),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
