//! Argument parsing and the subcommands.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use latclass_core::data::Standardizer;
use latclass_core::inference::{evaluate_holdout, export_latent_space, Block};
use latclass_core::synth::{generate, random_generator};
use latclass_core::{split_train_test, Dataset, ModelSpec};

use crate::config::{apply_override, RunConfig};
use crate::dataset_io::{load_dataset, save_dataset};
use crate::error::{Error, Result};
use crate::manifest::Manifest;
use crate::output::{exact, latent_table, posterior_table, trace_table, truth_table, Table};
use crate::params_io::{load_params, save_params};
use crate::report::{comparison_text, FitReport, ReportInputs, COMPARISON_FILE};
use crate::{parallel, selftest};

#[derive(Debug, Parser)]
#[command(name = "latclass", version, about = "Latent class choice models with network-built latent variables")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Draw a synthetic dataset from a random generating model.
    Simulate(Common),
    /// Estimate the model with multi-start EM and write the fit report.
    Fit(Common),
    /// Estimate the classic latent class model (no latent variables, no
    /// individual effects).
    FitBaseline(Common),
    /// Score a saved parameter file on the held-out individuals.
    Evaluate(EvaluateArgs),
    /// Put the comparison rows of several fit directories side by side.
    Report(ReportArgs),
    /// Run the gradient and oracle self-tests.
    Check(CheckArgs),
}

#[derive(Debug, Args)]
pub struct Common {
    /// TOML run configuration.
    #[arg(short, long)]
    pub config: Option<PathBuf>,
    /// Override a configuration key, e.g. `--set model.k=3`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    /// Shortcut for `--set output.dir=...`.
    #[arg(short, long)]
    pub out: Option<PathBuf>,
    /// Shortcut for `--set data.individuals=...`.
    #[arg(long)]
    pub individuals: Option<PathBuf>,
    /// Shortcut for `--set data.tasks=...`.
    #[arg(long)]
    pub tasks: Option<PathBuf>,
    /// Shortcut for `--set model.seed=...`.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Worker threads (0: one per core). Results do not depend on it.
    #[arg(long, default_value_t = 0)]
    pub workers: usize,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[command(flatten)]
    pub common: Common,
    /// Parameter file written by `fit`.
    #[arg(long)]
    pub params: PathBuf,
    /// Score every individual instead of the held-out split.
    #[arg(long)]
    pub all: bool,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Fit output directories, in table order.
    #[arg(required = true)]
    pub fits: Vec<PathBuf>,
    #[arg(short, long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct CheckArgs {
    /// Random points per gradient check.
    #[arg(long, default_value_t = 20)]
    pub points: usize,
}

/// Parses `argv`, runs, and maps the outcome to an exit status.
pub fn run(argv: Vec<String>) -> i32 {
    let cli = match Cli::try_parse_from(&argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    let args: Vec<String> = argv.into_iter().skip(1).collect();
    match dispatch(cli.command, args) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn dispatch(cmd: Command, args: Vec<String>) -> Result<()> {
    match cmd {
        Command::Simulate(c) => simulate(&c, args),
        Command::Fit(c) => fit(&c, args, false),
        Command::FitBaseline(c) => fit(&c, args, true),
        Command::Evaluate(e) => evaluate(&e, args),
        Command::Report(r) => report(&r, args),
        Command::Check(c) => check(&c),
    }
}

fn load_config(c: &Common) -> Result<RunConfig> {
    let mut overrides = Vec::new();
    let path_set = |key: &str, p: &Path| format!("{key}={}", toml::Value::String(p.to_string_lossy().into_owned()));
    if let Some(p) = &c.out {
        overrides.push(path_set("output.dir", p));
    }
    if let Some(p) = &c.individuals {
        overrides.push(path_set("data.individuals", p));
    }
    if let Some(p) = &c.tasks {
        overrides.push(path_set("data.tasks", p));
    }
    if let Some(s) = c.seed {
        overrides.push(format!("model.seed={s}"));
    }
    // Explicit --set entries win over shortcuts.
    overrides.extend(c.overrides.iter().cloned());
    // Fail on malformed assignments before touching the file system.
    let mut scratch = toml::Table::new();
    for o in &overrides {
        apply_override(&mut scratch, o)?;
    }
    RunConfig::load(c.config.as_deref(), &overrides)
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn start_manifest(command: &str, args: Vec<String>, c: &Common, cfg: &RunConfig) -> Result<Manifest> {
    let mut m = Manifest::new(command, args, c.workers);
    m.config = cfg.to_json();
    if let Some(p) = &c.config {
        m.input(p)?;
    }
    Ok(m)
}

pub const INDIVIDUALS_FILE: &str = "individuals.csv";
pub const TASKS_FILE: &str = "tasks.csv";
pub const TRUTH_FILE: &str = "truth.csv";
pub const GENERATOR_FILE: &str = "generator.params";
pub const PARAMS_FILE: &str = "params.txt";

fn simulate(c: &Common, args: Vec<String>) -> Result<()> {
    let cfg = load_config(c)?;
    let sim = &cfg.simulate;
    let dir = &cfg.output.dir;
    create_dir(dir)?;
    let mut man = start_manifest("simulate", args, c, &cfg)?;
    man.seed = Some(sim.seed);
    let gen = random_generator(&sim.population, &cfg.model, sim.separation, sim.generator_seed)?;
    let (data, truth) = man.timed("generate", || generate(&sim.population, &gen, sim.seed))?;
    save_dataset(&data, &dir.join(INDIVIDUALS_FILE), &dir.join(TASKS_FILE))?;
    truth_table(&data, &truth).write_csv(&dir.join(TRUTH_FILE))?;
    save_params(&gen, &dir.join(GENERATOR_FILE))?;
    for f in [INDIVIDUALS_FILE, TASKS_FILE, TRUTH_FILE, GENERATOR_FILE] {
        man.output(dir, f)?;
    }
    let shares = truth.class_shares(cfg.model.k);
    man.notes.insert("true_class_shares".into(), shares.iter().map(|s| format!("{s:.4}")).collect::<Vec<_>>().join(" "));
    man.write(dir)?;
    println!("simulated {} individuals into {}", data.len(), dir.display());
    Ok(())
}

/// Loads the configured dataset and applies the train/test split and the
/// optional standardization (moments from the training part).
fn prepare_data(cfg: &RunConfig, man: &mut Manifest) -> Result<(Dataset, Dataset)> {
    let (Some(ind), Some(tasks)) = (&cfg.data.individuals, &cfg.data.tasks) else {
        return Err(Error::Config("data.individuals and data.tasks must be set".into()));
    };
    man.input(ind)?;
    man.input(tasks)?;
    let data = load_dataset(ind, tasks, cfg.data.indicator_levels.as_deref())?;
    let (mut train, mut test) = if cfg.data.test_fraction > 0.0 {
        split_train_test(&data, cfg.data.test_fraction, cfg.data.split_seed)?
    } else {
        (data.clone(), data.subset(|_| false))
    };
    if cfg.data.standardize {
        let s = Standardizer::fit(&train);
        s.apply(&mut train);
        s.apply(&mut test);
    }
    Ok((train, test))
}

fn fit(c: &Common, args: Vec<String>, baseline: bool) -> Result<()> {
    let mut cfg = load_config(c)?;
    if baseline {
        if cfg.model.k < 2 {
            return Err(Error::Config("the baseline needs at least two latent classes".into()));
        }
        cfg.model = ModelSpec { z: 0, use_omega: false, ..cfg.model.clone() };
    }
    let spec = cfg.model.clone();
    let dir = cfg.output.dir.clone();
    create_dir(&dir)?;
    let mut man = start_manifest(if baseline { "fit-baseline" } else { "fit" }, args, c, &cfg)?;
    man.seed = Some(spec.seed);
    let (train, test) = prepare_data(&cfg, &mut man)?;
    let pool = parallel::pool(c.workers)?;

    let multi = match man.timed("estimate", || parallel::multi_start(&pool, &train, &spec)) {
        Ok(m) => m,
        Err(Error::Core(e)) => {
            let path = dir.join("failure.txt");
            let msg = format!("all {} restarts failed: {e}\n", spec.restarts);
            std::fs::write(&path, &msg).map_err(|err| Error::io(&path, err))?;
            return Err(Error::Estimation { message: msg.trim_end().to_owned(), trace: path });
        }
        Err(e) => return Err(e),
    };
    let traces: Vec<_> = multi.runs.iter().filter_map(|r| r.outcome.as_ref().ok()).map(|f| &f.trace).collect();
    let mut files = vec!["trace.csv".to_owned()];
    trace_table(&traces).write_csv(&dir.join("trace.csv"))?;

    let best = multi.best_fit();
    save_params(&best.params, &dir.join(PARAMS_FILE))?;
    posterior_table(&train, &best.posteriors).write_csv(&dir.join("posteriors.csv"))?;
    files.extend([PARAMS_FILE.to_owned(), "posteriors.csv".to_owned()]);
    if best.params.latent.is_active() || best.params.membership.uses_omega() {
        let rows = export_latent_space(&train, &best.params)?;
        latent_table(&train, &rows).write_csv(&dir.join("latent_space.csv"))?;
        files.push("latent_space.csv".into());
    }

    let errors = if cfg.report.skip_standard_errors {
        None
    } else {
        let mut blocks = vec![Block::Choice, Block::Membership];
        if best.params.measurement.is_some() {
            blocks.push(Block::Measurement);
        }
        Some(man.timed("standard_errors", || parallel::block_errors(&pool, &train, &best.params, &blocks)))
    };
    let label = format!("{} K={} Z={}", if baseline { "baseline" } else { "model" }, spec.k, spec.z);
    let report = man.timed("report", || {
        FitReport::build(&ReportInputs {
            label: &label,
            train: &train,
            test: Some(&test),
            multi: &multi,
            errors: errors.as_deref(),
            null_model: cfg.report.null_model,
            profile_columns: cfg.report.profile_columns.as_deref(),
        })
    })?;
    files.extend(report.write(&dir)?);
    for f in &files {
        man.output(&dir, f)?;
    }
    man.write(&dir)?;
    print!("{}", report.render());
    Ok(())
}

fn evaluate(e: &EvaluateArgs, args: Vec<String>) -> Result<()> {
    let cfg = load_config(&e.common)?;
    let dir = cfg.output.dir.clone();
    create_dir(&dir)?;
    let mut man = start_manifest("evaluate", args, &e.common, &cfg)?;
    man.input(&e.params)?;
    let params = load_params(&e.params)?;
    let (train, test) = prepare_data(&cfg, &mut man)?;
    let scored = if e.all {
        let mut all = train;
        all.individuals.extend(test.individuals);
        all
    } else {
        test
    };
    if scored.is_empty() {
        return Err(Error::Config("nothing to evaluate: the held-out split is empty (set data.test_fraction or pass --all)".into()));
    }
    let m = evaluate_holdout(&scored, &params, cfg.report.null_model)?;
    let mut t = Table::new(["individuals", "tasks", "ll", "null_ll", "hit_rate", "omega_fallbacks"]);
    t.push(vec![scored.len().to_string(), m.n_tasks.to_string(), exact(m.ll), exact(m.null_ll), exact(m.hit_rate), m.omega_fallbacks.to_string()]);
    t.write_csv(&dir.join("evaluation.csv"))?;
    man.output(&dir, "evaluation.csv")?;
    man.write(&dir)?;
    print!("{}", t.render());
    Ok(())
}

fn report(r: &ReportArgs, args: Vec<String>) -> Result<()> {
    create_dir(&r.out)?;
    let mut man = Manifest::new("report", args, 1);
    let mut combined: Option<Table> = None;
    for d in &r.fits {
        let p = d.join(COMPARISON_FILE);
        man.input(&p)?;
        let t = Table::read_csv(&p)?;
        let mut header = vec!["fit".to_owned()];
        header.extend(t.header.iter().cloned());
        let c = combined.get_or_insert_with(|| Table::new(header.clone()));
        if c.header != header {
            return Err(Error::Format { path: p, message: "comparison columns differ from the first fit".into() });
        }
        for row in t.rows {
            let mut full = vec![d.file_name().map_or_else(|| d.display().to_string(), |n| n.to_string_lossy().into_owned())];
            full.extend(row);
            c.push(full);
        }
    }
    let table = combined.expect("at least one fit");
    table.write_csv(&r.out.join("comparison.csv"))?;
    let text = comparison_text(&table).render();
    let txt = r.out.join("comparison.txt");
    std::fs::write(&txt, &text).map_err(|e| Error::io(&txt, e))?;
    man.output(&r.out, "comparison.csv")?;
    man.output(&r.out, "comparison.txt")?;
    man.write(&r.out)?;
    print!("{text}");
    Ok(())
}

fn check(c: &CheckArgs) -> Result<()> {
    let results = selftest::run_all(c.points);
    let mut failed = 0;
    for r in &results {
        println!("{} {}: {}", if r.passed { "PASS" } else { "FAIL" }, r.name, r.detail);
        failed += usize::from(!r.passed);
    }
    if failed > 0 {
        return Err(Error::SelfTest(failed));
    }
    Ok(())
}
