use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use log::info;
use mvpt::data::{read_cohorts_path, write_cohorts};
use mvpt::elicit::ElicitDiagnostics;
use mvpt::sampler::{run_chain, ChainDiagnostics, Checkpoint, FitConfig, Model, PosteriorDraws, RunOptions};
use mvpt::simulation::{
    future_cohorts, generate_dataset, replicate_seeds, run_study, write_bias_csv, write_truth_csv, BiasRow, ScenarioSpec,
    METHOD_DL_INTERCEPT, METHOD_MEDIAN, OVERALL,
};
use mvpt::special::Law;
use mvpt::summaries::{density_grid, summarize, QuerySpec, SummaryOptions};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::io::{
    create, read_csv, read_future_path, read_json, summarize_bias, write_csv, write_future, write_json, ReportCsvRow,
};
use crate::validate::{check, DiagnosticsCsvRow, MergedReportRow};
use crate::{Cli, Command, FitArgs, ReportArgs, SimulateArgs, SummarizeArgs, ValidateArgs};

pub const CONFIG_FILE: &str = "config.toml";
pub const MODEL_FILE: &str = "model.json";
pub const DRAWS_FILE: &str = "draws.json";
pub const DIAGNOSTICS_FILE: &str = "diagnostics.json";

struct Global {
    threads: Option<usize>,
    chains: Option<usize>,
}

pub fn dispatch(cli: Cli) -> Result<()> {
    let g = Global { threads: cli.threads, chains: cli.chains };
    match cli.command {
        Command::Validate(a) => validate(a),
        Command::Fit(a) => fit(a, &g),
        Command::Summarize(a) => summarize_cmd(a, &g),
        Command::Simulate(a) => simulate(a, &g),
        Command::Report(a) => report(a),
    }
}

fn init_log(dir: &Path) -> Result<()> {
    let file = std::fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(dir.join("run.log"))
        .with_context(|| format!("opening log in {}", dir.display()))?;
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .target(env_logger::Target::Pipe(Box::new(file)))
        .try_init();
    Ok(())
}

fn init_threads(g: &Global, cfg: &RunConfig) -> Result<()> {
    let n = g.threads.or(cfg.threads).unwrap_or(1);
    if n == 0 {
        bail!("--threads must be at least 1");
    }
    let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    Ok(())
}

fn out_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    init_log(dir)
}

fn validate(a: ValidateArgs) -> Result<()> {
    let mut failed = 0;
    for f in &a.files {
        match check(f) {
            Ok(line) => println!("{line}"),
            Err(e) => {
                eprintln!("{e:#}");
                failed += 1;
            }
        }
    }
    if failed > 0 {
        bail!("{failed} of {} files failed validation", a.files.len());
    }
    Ok(())
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct FitDiagnostics {
    pub seed: u64,
    pub iterations: usize,
    pub retained_draws: usize,
    pub kernel_repair: f64,
    pub elicitation: ElicitDiagnostics,
    pub chains: Vec<ChainDiagnostics>,
}

fn chain_path(out: &Path, chain: usize, what: &str) -> PathBuf {
    out.join("chains").join(format!("chain-{chain}.{what}.json"))
}

fn add_diagnostics(a: &mut ChainDiagnostics, b: ChainDiagnostics) {
    a.invariant_checks += b.invariant_checks;
    a.invariant_failures += b.invariant_failures;
    a.latent_proposals += b.latent_proposals;
    for (x, y) in a.latent_moves.iter_mut().zip(b.latent_moves) {
        *x += y;
    }
    a.fallback_cohorts.extend(b.fallback_cohorts);
}

/// Runs every chain (from scratch or from its checkpoint) and writes draws and diagnostics.
fn run_fit(model: &Model, out: &Path, resume: bool) -> Result<()> {
    std::fs::create_dir_all(out.join("chains"))?;
    let previous: Option<FitDiagnostics> = if resume { Some(read_json(&out.join(DIAGNOSTICS_FILE))?) } else { None };
    let results = (0..model.config.chains)
        .into_par_iter()
        .map(|c| -> Result<(PosteriorDraws, ChainDiagnostics)> {
            let ck_path = chain_path(out, c, "checkpoint");
            let (prior_draws, prior_diag, state) = if resume {
                let ck = Checkpoint::read(&ck_path).with_context(|| format!("reading {}", ck_path.display()))?;
                let same = FitConfig { iterations: model.config.iterations, ..ck.config.clone() };
                if same != model.config {
                    bail!("chain {c}: checkpoint settings differ from the stored model");
                }
                let d: PosteriorDraws = read_json(&chain_path(out, c, "draws"))?;
                let diag = previous.as_ref().and_then(|p| p.chains.get(c).cloned()).unwrap_or_default();
                (Some(d), diag, Some(ck.state))
            } else {
                (None, ChainDiagnostics::default(), None)
            };
            if state.as_ref().is_some_and(|s| s.iteration as usize >= model.config.iterations) {
                info!("chain {c}: already at iteration {}", model.config.iterations);
                return Ok((prior_draws.expect("resumed"), prior_diag));
            }
            let start = state.as_ref().map_or(0, |s| s.iteration);
            let o = run_chain(model, c as u32, RunOptions { resume: state, stop_after: None, checkpoint: Some(&ck_path) })?;
            info!(
                "chain {c}: iterations {start}..{}, {} new draws, {} invariant failures",
                o.state.iteration,
                o.draws.len(),
                o.diagnostics.invariant_failures
            );
            let draws = match prior_draws {
                Some(p) => PosteriorDraws::merge(vec![p, o.draws])?,
                None => o.draws,
            };
            write_json(&chain_path(out, c, "draws"), &draws)?;
            let mut diag = prior_diag;
            if diag.latent_moves.is_empty() {
                diag.latent_moves = vec![0; model.n_observed()];
            }
            add_diagnostics(&mut diag, o.diagnostics);
            Ok((draws, diag))
        })
        .collect::<Result<Vec<_>>>()?;
    let (parts, chains): (Vec<_>, Vec<_>) = results.into_iter().unzip();
    let draws = PosteriorDraws::merge(parts)?;
    write_json(&out.join(DRAWS_FILE), &draws)?;
    let failures: u64 = chains.iter().map(|d| d.invariant_failures).sum();
    let diag = FitDiagnostics {
        seed: model.config.seed,
        iterations: model.config.iterations,
        retained_draws: draws.len(),
        kernel_repair: model.kernel_repair,
        elicitation: model.elicitation.clone(),
        chains,
    };
    write_json(&out.join(DIAGNOSTICS_FILE), &diag)?;
    println!(
        "fit: {} observed and {} future cohorts, {} chains, {} draws, {failures} invariant failures -> {}",
        model.n_observed(),
        model.future.len(),
        model.config.chains,
        draws.len(),
        out.display()
    );
    if failures > 0 {
        bail!("{failures} latent invariant failures; see run.log");
    }
    Ok(())
}

fn fit(a: FitArgs, g: &Global) -> Result<()> {
    out_dir(&a.out)?;
    if a.resume {
        return resume_fit(a, g);
    }
    let mut cfg = RunConfig::load(a.config.as_deref())?;
    if let Some(s) = a.seed {
        cfg.seed = Some(s);
        cfg.fit.seed = s;
        cfg.simulation.seed = s;
    }
    if let Some(n) = a.iterations {
        cfg.fit.iterations = n;
    }
    if let Some(n) = a.burn_in {
        cfg.fit.burn_in = n;
    }
    if let Some(n) = a.thin {
        cfg.fit.thin = n;
    }
    if let Some(n) = g.chains {
        cfg.fit.chains = n;
    }
    cfg.fit.validate()?;
    init_threads(g, &cfg)?;
    let data = a.data.as_deref().expect("required by the parser");
    let observed = read_cohorts_path(data).with_context(|| format!("reading {}", data.display()))?;
    let future = match &a.future {
        Some(p) => read_future_path(p)?,
        None => Vec::new(),
    };
    info!("fit: {} observed, {} future cohorts, seed {}", observed.len(), future.len(), cfg.fit.seed);
    let model = Model::build(observed, future, cfg.fit.clone())?;
    std::fs::write(a.out.join(CONFIG_FILE), cfg.to_toml()?)?;
    write_json(&a.out.join(MODEL_FILE), &model)?;
    run_fit(&model, &a.out, false)
}

fn load_model(dir: &Path) -> Result<Model> {
    let mut model: Model = read_json(&dir.join(MODEL_FILE))?;
    model.prepare()?;
    Ok(model)
}

fn resume_fit(a: FitArgs, g: &Global) -> Result<()> {
    if a.data.is_some() || a.future.is_some() || a.config.is_some() || a.seed.is_some() {
        bail!("--resume reuses the stored data and settings; only --iterations may change");
    }
    if a.burn_in.is_some() || a.thin.is_some() || g.chains.is_some() {
        bail!("burn-in, thinning and chain count cannot change on resume");
    }
    let mut model = load_model(&a.out)?;
    let mut cfg = RunConfig::load(Some(&a.out.join(CONFIG_FILE)))?;
    if let Some(n) = a.iterations {
        if n < model.config.iterations {
            bail!("--iterations {n} is below the stored {}", model.config.iterations);
        }
        model.config.iterations = n;
        cfg.fit.iterations = n;
    }
    init_threads(g, &cfg)?;
    info!("resume: continuing to iteration {}", model.config.iterations);
    std::fs::write(a.out.join(CONFIG_FILE), cfg.to_toml()?)?;
    write_json(&a.out.join(MODEL_FILE), &model)?;
    run_fit(&model, &a.out, true)
}

fn default_grid_max(model: &Model) -> f64 {
    let from_data = model
        .observed
        .iter()
        .map(|c| &c.triple)
        .chain(model.future.iter().filter_map(|f| f.triple.as_ref()))
        .map(|t| t.upper.unwrap_or(2.0 * t.median).max(2.0 * t.median))
        .fold(0.0, f64::max);
    if from_data > 0.0 {
        1.5 * from_data
    } else {
        model.config.g0.inv_cdf(0.9)
    }
}

fn summarize_cmd(a: SummarizeArgs, g: &Global) -> Result<()> {
    let out = a.out.clone().unwrap_or_else(|| a.fit.clone());
    out_dir(&out)?;
    let cfg_path = a.config.clone().unwrap_or_else(|| a.fit.join(CONFIG_FILE));
    let cfg = RunConfig::load(cfg_path.exists().then_some(cfg_path.as_path()))?;
    init_threads(g, &cfg)?;
    let mut s = cfg.summary.clone();
    if let Some(n) = a.mean_draws {
        s.mean_draws = n;
    }
    if a.seed.is_some() {
        s.seed = a.seed;
    }
    if let Some(n) = a.grid_points {
        s.grid_points = n;
    }
    if a.grid_max.is_some() {
        s.grid_max = a.grid_max;
    }
    if !a.density_cohorts.is_empty() {
        s.density_cohorts = a.density_cohorts.clone();
    }
    s.keep_draws |= a.keep_draws;
    if s.grid_points < 2 {
        bail!("grid_points must be at least 2");
    }

    let model = load_model(&a.fit)?;
    let draws: PosteriorDraws = read_json(&a.fit.join(DRAWS_FILE))?;
    if draws.cohort_ids != model.cohort_ids {
        bail!("draws and model in {} disagree on cohorts", a.fit.display());
    }
    let queries: Vec<QuerySpec> = read_json(&a.query)?;
    let seed = s.seed.unwrap_or(model.config.seed);
    info!("summarize: {} queries over {} draws, seed {seed}", queries.len(), draws.len());
    let opts = SummaryOptions { mean_draws: s.mean_draws, seed, keep_draws: s.keep_draws };
    let rows = summarize(&model, &draws, &queries, &opts)?;
    let flat: Vec<ReportCsvRow> = rows.iter().map(ReportCsvRow::from).collect();
    write_csv(create(&out.join("report.csv"))?, &flat)?;
    write_json(&out.join("report.json"), &rows)?;

    let cohorts = if s.density_cohorts.is_empty() {
        (0..model.n_cohorts()).collect()
    } else {
        s.density_cohorts
            .iter()
            .map(|id| model.index_of(id).with_context(|| format!("unknown cohort {id:?} for the density grid")))
            .collect::<Result<Vec<_>>>()?
    };
    let t_max = s.grid_max.unwrap_or_else(|| default_grid_max(&model));
    if !(t_max > 0.0 && t_max.is_finite()) {
        bail!("grid_max must be positive");
    }
    let grid: Vec<f64> = (0..s.grid_points).map(|k| t_max * k as f64 / (s.grid_points - 1) as f64).collect();
    let density = density_grid(&model, &draws, &cohorts, &grid, seed)?;
    write_csv(create(&out.join("density.csv"))?, &density)?;
    for r in &flat {
        println!("{}: {} {:.4} [{:.4}, {:.4}]", r.query, r.kind, r.estimate, r.lower, r.upper);
    }
    Ok(())
}

fn simulate(a: SimulateArgs, g: &Global) -> Result<()> {
    out_dir(&a.out)?;
    let mut cfg = RunConfig::load(a.config.as_deref())?;
    let study = &mut cfg.simulation;
    match a.scenario.as_str() {
        "table1" => study.scenario = ScenarioSpec::table1(),
        path => {
            let text = std::fs::read_to_string(path).with_context(|| format!("reading scenario {path}"))?;
            study.scenario = toml::from_str(&text).with_context(|| format!("parsing scenario {path}"))?;
        }
    }
    if let Some(n) = a.reps {
        study.replicates = n;
    }
    if let Some(s) = a.seed {
        study.seed = s;
        cfg.seed = Some(s);
        cfg.fit.seed = s;
    }
    let study = &mut cfg.simulation;
    if let Some(n) = a.iterations {
        study.fit.iterations = n;
    }
    if let Some(n) = a.burn_in {
        study.fit.burn_in = n;
    }
    if let Some(n) = a.mean_draws {
        study.mean_draws = n;
    }
    if let Some(n) = g.chains {
        study.fit.chains = n;
    }
    if study.replicates == 0 {
        bail!("--reps must be at least 1");
    }
    study.scenario.validate()?;
    if a.study {
        study.fit.validate()?;
    }
    init_threads(g, &cfg)?;
    let study = cfg.simulation.clone();
    std::fs::write(a.out.join(CONFIG_FILE), cfg.to_toml()?)?;
    write_future(create(&a.out.join("future.csv"))?, &future_cohorts(&study.scenario))?;
    let data_dir = a.out.join("datasets");
    std::fs::create_dir_all(&data_dir)?;
    info!("simulate: {} replicates, seed {}, study {}", study.replicates, study.seed, a.study);

    let datasets = if a.study {
        let outs = run_study(&study)?;
        let rows: Vec<BiasRow> = outs.iter().flat_map(|o| o.rows.iter().cloned()).collect();
        write_bias_csv(create(&a.out.join("bias_long.csv"))?, &rows)?;
        let diag: Vec<DiagnosticsCsvRow> = outs
            .iter()
            .flat_map(|o| {
                o.diagnostics.iter().enumerate().map(|(c, d)| DiagnosticsCsvRow {
                    replicate: o.replicate,
                    chain: c,
                    invariant_checks: d.invariant_checks,
                    invariant_failures: d.invariant_failures,
                    latent_proposals: d.latent_proposals,
                    latent_moves: d.latent_moves.iter().sum(),
                    fallback_cohorts: d.fallback_cohorts.len(),
                })
            })
            .collect();
        write_csv(create(&a.out.join("diagnostics.csv"))?, &diag)?;
        let summary = summarize_bias(&rows);
        write_csv(create(&a.out.join("bias_summary.csv"))?, &summary)?;
        for s in summary.iter().filter(|s| s.cell == OVERALL) {
            println!("{} {}: mean bias {:.4}, IQR {:.4}", s.cell, s.method, s.mean, s.iqr);
        }
        let positive = rows.iter().filter(|r| r.cell == OVERALL && r.method == METHOD_MEDIAN && r.estimate > 0.0).count();
        let dl = rows.iter().filter(|r| r.cell == OVERALL && r.method == METHOD_DL_INTERCEPT).count();
        info!("overall estimate positive in {positive} of {dl} replicates");
        outs.into_iter().map(|o| (o.replicate, o.dataset)).collect::<Vec<_>>()
    } else {
        (0..study.replicates)
            .map(|r| Ok((r, generate_dataset(&study.scenario, replicate_seeds(study.seed, r).0)?)))
            .collect::<Result<Vec<_>>>()?
    };
    let mut truth = create(&a.out.join("truth.csv"))?;
    for (r, ds) in &datasets {
        write_cohorts(create(&data_dir.join(format!("replicate-{r:03}.csv")))?, &ds.cohorts)?;
        write_truth_csv(&mut truth, *r, &ds.truth, *r == 0)?;
    }
    std::io::Write::flush(&mut truth)?;
    println!("simulate: {} datasets -> {}", datasets.len(), a.out.display());
    Ok(())
}

fn source_name(path: &Path) -> String {
    path.parent()
        .and_then(|p| p.file_name())
        .or_else(|| path.file_stem())
        .map_or_else(|| path.display().to_string(), |s| s.to_string_lossy().into_owned())
}

fn report(a: ReportArgs) -> Result<()> {
    if a.reports.is_empty() && a.bias.is_empty() {
        bail!("give at least one --report or --bias file");
    }
    out_dir(&a.out)?;
    if !a.reports.is_empty() {
        let mut merged = Vec::new();
        for p in &a.reports {
            let source = source_name(p);
            for r in read_csv::<ReportCsvRow>(p)? {
                merged.push(MergedReportRow {
                    source: source.clone(),
                    query: r.query,
                    target: r.target,
                    kind: r.kind,
                    estimate: r.estimate,
                    lower: r.lower,
                    upper: r.upper,
                    prob_positive: r.prob_positive,
                    n_draws: r.n_draws,
                });
            }
        }
        write_csv(create(&a.out.join("report_merged.csv"))?, &merged)?;
        info!("report: merged {} rows from {} files", merged.len(), a.reports.len());
    }
    if !a.bias.is_empty() {
        let mut rows = Vec::new();
        for p in &a.bias {
            rows.extend(read_csv::<BiasRow>(p)?);
        }
        write_bias_csv(create(&a.out.join("bias_long.csv"))?, &rows)?;
        let summary = summarize_bias(&rows);
        write_csv(create(&a.out.join("bias_summary.csv"))?, &summary)?;
        for s in &summary {
            println!("{} {}: n {}, median {:.4}, IQR {:.4}", s.cell, s.method, s.n, s.median, s.iqr);
        }
    }
    Ok(())
}
