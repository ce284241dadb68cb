//! `harvest`: ingest, train, solve, analyze and simulate from one config
//! document.

mod grid;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use serde_json::{json, Value};
use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use harvest_core::belief_runtime::BeliefMode;
use harvest_core::config::{preset_model, solve_system, ExperimentConfig, SolvedSystem};
use harvest_core::data_ingest::{
    load_irradiance, resample, synthesize_series, LoadOptions, ObservationSequence, SourceFormat, WindowConfig,
};
use harvest_core::mdp_core::{PolicyClass, SolutionDocument};
use harvest_core::policy_analysis::{
    attach_deficiency_regions, check_threshold, expected_net_bit_rate, rate_upper_bound, solar_state_region,
    stationary_under_policy,
};
use harvest_core::simulator::{results_rows, rows_to_csv, sweep, IrradianceSource, PolicySource, SimConfig, METRICS};
use harvest_core::solar_hmm::{em_train, EmInit, EmStop, HmmParams, ModelDocument};

use grid::{expand, GridAxis};

const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Parser)]
#[command(name = "harvest", version, about = "Solar harvesting transmission policies: train, solve, analyze, simulate")]
struct Cli {
    /// Master RNG seed.
    #[arg(long, global = true, default_value_t = 1)]
    seed: u64,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// TOML experiment document; the built-in evaluation setup when absent.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true, value_enum, default_value_t = Format::Json)]
    format: Format,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Json,
    Csv,
}

#[derive(Subcommand)]
enum Command {
    /// Irradiance record handling.
    #[command(subcommand)]
    Data(DataCommand),
    /// Fit the solar HMM to a raw irradiance record.
    Train(TrainArgs),
    /// Build the MDP and solve it by value iteration.
    Solve(SolveArgs),
    /// Threshold, region, stationary and rate analysis of a solved policy.
    Analyze(AnalyzeArgs),
    /// Monte Carlo evaluation over a parameter grid.
    Simulate(SimulateArgs),
}

#[derive(Subcommand)]
enum DataCommand {
    /// Window and average a raw record into per-period sequences.
    Resample(ResampleArgs),
    /// Sample a raw record from a solar model.
    Synth(SynthArgs),
}

#[derive(Args, Clone)]
struct WindowArgs {
    /// Management period in seconds.
    #[arg(long, default_value_t = 300)]
    period: u32,
    /// Active window in local time.
    #[arg(long, default_value = "07:00-17:00")]
    window: String,
    #[arg(long, default_value_t = 0, allow_hyphen_values = true)]
    utc_offset_minutes: i32,
}

impl WindowArgs {
    fn window(&self) -> Result<WindowConfig> {
        Ok(WindowConfig::parse(&self.window, self.period, self.utc_offset_minutes)?)
    }
}

#[derive(Args, Clone)]
struct SourceArgs {
    /// Raw record format: csv (with header) or legacy (headerless).
    #[arg(long, default_value = "csv", value_parser = parse_source_format)]
    source_format: SourceFormat,
    /// Replace negative readings by 0 instead of rejecting them.
    #[arg(long)]
    clamp_negative: bool,
}

fn parse_source_format(s: &str) -> std::result::Result<SourceFormat, String> {
    match s {
        "csv" => Ok(SourceFormat::Csv),
        "legacy" => Ok(SourceFormat::Legacy),
        _ => Err(format!("expected csv or legacy, got {s:?}")),
    }
}

#[derive(Args)]
struct ResampleArgs {
    #[arg(long)]
    input: PathBuf,
    #[command(flatten)]
    window: WindowArgs,
    #[command(flatten)]
    source: SourceArgs,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long, default_value_t = 30)]
    days: usize,
    /// Native sampling period in seconds.
    #[arg(long, default_value_t = 300)]
    native_period: u32,
    /// Model file or preset name (solar-5min, solar-15min).
    #[arg(long, default_value = "solar-5min")]
    model: String,
    #[arg(long, default_value = "2011-06-01")]
    first_day: chrono::NaiveDate,
    #[arg(long, default_value = "07:00-17:00")]
    window: String,
    #[arg(long, default_value_t = 0, allow_hyphen_values = true)]
    utc_offset_minutes: i32,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value_t = 4)]
    states: usize,
    #[command(flatten)]
    window: WindowArgs,
    #[command(flatten)]
    source: SourceArgs,
    #[arg(long, default_value_t = 500)]
    max_iters: usize,
    /// Relative log-likelihood tolerance.
    #[arg(long, default_value_t = 1e-6)]
    tol: f64,
}

#[derive(Args, Clone, Default)]
struct Overrides {
    /// Trained model file; replaces the document's model section.
    #[arg(long)]
    model: Option<PathBuf>,
    /// composite or onoff.
    #[arg(long)]
    policy_class: Option<String>,
    /// On-off modulation.
    #[arg(long)]
    modulation: Option<String>,
    #[arg(long)]
    discount: Option<f64>,
    #[arg(long)]
    n_b: Option<usize>,
    #[arg(long, allow_hyphen_values = true)]
    gamma_c_db: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    gamma_u_db: Option<f64>,
    #[arg(long)]
    panel_area: Option<f64>,
    #[arg(long)]
    fd: Option<f64>,
}

#[derive(Args)]
struct SolveArgs {
    #[command(flatten)]
    overrides: Overrides,
}

#[derive(Args)]
struct AnalyzeArgs {
    /// Solution document from `harvest solve`; solved afresh when absent.
    #[arg(long)]
    solution: Option<PathBuf>,
    /// Override of the one-quantum reward R₁ used for deficiency regions.
    #[arg(long)]
    r1: Option<f64>,
    #[command(flatten)]
    overrides: Overrides,
}

#[derive(Args)]
struct SimulateArgs {
    /// Grid axis `name=start:end:step` or `name=v1,v2,...`; names are
    /// snr, nb, area, fd. Repeat for a product grid.
    #[arg(long, allow_hyphen_values = true)]
    sweep: Vec<String>,
    /// Comma list of composite, onoff, myopic1, myopic2, ttfr, each with an
    /// optional `:modulation` suffix.
    #[arg(long, default_value = "composite,myopic1,myopic2")]
    policies: String,
    #[arg(long)]
    periods: Option<usize>,
    /// Metrics to report, or `all`.
    #[arg(long, default_value = "avg_net_bit_rate")]
    metrics: String,
    /// Belief mode for solved policies: mixed, max_belief, true_state.
    #[arg(long)]
    belief: Option<String>,
    /// Recorded raw irradiance instead of model-sampled data.
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long, default_value = "07:00-17:00")]
    window: String,
    #[arg(long, default_value_t = 0, allow_hyphen_values = true)]
    utc_offset_minutes: i32,
    #[command(flatten)]
    source: SourceArgs,
    /// Write one per-period trace file per run.
    #[arg(long)]
    trace: bool,
    #[command(flatten)]
    overrides: Overrides,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let chain: Vec<String> = e.chain().map(|c| c.to_string()).collect();
            eprintln!("{}", json!({ "error": chain.join(": "), "tool_version": TOOL_VERSION }));
            ExitCode::FAILURE
        }
    }
}

fn run(cli: &Cli) -> Result<()> {
    fs::create_dir_all(&cli.out).with_context(|| format!("cannot create output directory {}", cli.out.display()))?;
    match &cli.command {
        Command::Data(DataCommand::Resample(a)) => cmd_resample(cli, a),
        Command::Data(DataCommand::Synth(a)) => cmd_synth(cli, a),
        Command::Train(a) => cmd_train(cli, a),
        Command::Solve(a) => cmd_solve(cli, a),
        Command::Analyze(a) => cmd_analyze(cli, a),
        Command::Simulate(a) => cmd_simulate(cli, a),
    }
}

struct Loaded {
    cfg: ExperimentConfig,
    base: PathBuf,
}

fn load_config(cli: &Cli, o: &Overrides) -> Result<Loaded> {
    let (mut cfg, base) = match &cli.config {
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("cannot read config {}", p.display()))?;
            let cfg: ExperimentConfig =
                toml::from_str(&text).with_context(|| format!("invalid config {}", p.display()))?;
            (cfg, p.parent().map(Path::to_path_buf).unwrap_or_default())
        }
        None => (ExperimentConfig::evaluation(), PathBuf::new()),
    };
    if let Some(m) = &o.model {
        cfg.model.preset = None;
        cfg.model.path = Some(std::path::absolute(m)?);
    }
    if let Some(c) = &o.policy_class {
        cfg.policy.class = c.clone();
    }
    if let Some(m) = &o.modulation {
        cfg.policy.modulation = Some(m.clone());
    }
    if let Some(d) = o.discount {
        cfg.solver.discount = d;
    }
    if let Some(n) = o.n_b {
        cfg.n_b = n;
    }
    if let Some(g) = o.gamma_c_db {
        cfg.gamma_c_db = Some(g);
        cfg.gamma_u_db = None;
    }
    if let Some(g) = o.gamma_u_db {
        cfg.gamma_u_db = Some(g);
        cfg.gamma_c_db = None;
    }
    if let Some(a) = o.panel_area {
        cfg.energy.panel_area = a;
    }
    if let Some(f) = o.fd {
        cfg.channel.fd_norm = f;
    }
    cfg.validate()?;
    Ok(Loaded { cfg, base })
}

fn write(cli: &Cli, name: &str, content: &str) -> Result<PathBuf> {
    let path = cli.out.join(name);
    fs::write(&path, content).with_context(|| format!("cannot write {}", path.display()))?;
    Ok(path)
}

fn ext(cli: &Cli) -> &'static str {
    match cli.format {
        Format::Json => "json",
        Format::Csv => "csv",
    }
}

fn pretty<T: Serialize>(v: &T) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("serializable");
    s.push('\n');
    s
}

fn envelope(kind: &str, config: Value, body: Value) -> Value {
    json!({ "format": kind, "tool_version": TOOL_VERSION, "config": config, "result": body })
}

fn load_series(path: &Path, source: &SourceArgs) -> Result<(harvest_core::data_ingest::IrradianceSeries, Value)> {
    let (series, report) =
        load_irradiance(path, source.source_format, LoadOptions { clamp_negative: source.clamp_negative })?;
    Ok((series, serde_json::to_value(report)?))
}

fn sequences_csv(seqs: &[ObservationSequence]) -> String {
    let mut out = String::from("date,first_period,offset,value,count\n");
    for s in seqs {
        for (k, (v, c)) in s.values.iter().zip(&s.counts).enumerate() {
            out.push_str(&format!("{},{},{k},{v},{c}\n", s.date, s.first_period));
        }
    }
    out
}

fn cmd_resample(cli: &Cli, a: &ResampleArgs) -> Result<()> {
    let window = a.window.window()?;
    let (series, report) = load_series(&a.input, &a.source)?;
    let seqs = resample(&series, &window)?;
    let echo = json!({ "input": a.input, "window": window, "source_format": a.source.source_format,
        "clamp_negative": a.source.clamp_negative });
    let body = match cli.format {
        Format::Json => pretty(&envelope("harvest-sequences", echo.clone(), json!({ "sequences": seqs }))),
        Format::Csv => sequences_csv(&seqs),
    };
    write(cli, &format!("sequences.{}", ext(cli)), &body)?;
    let summary = envelope(
        "harvest-load-report",
        echo,
        json!({ "load_report": report, "sequences": seqs.len(),
            "periods": seqs.iter().map(|s| s.values.len()).sum::<usize>() }),
    );
    write(cli, "load_report.json", &pretty(&summary))?;
    print!("{}", pretty(&summary));
    Ok(())
}

fn model_from_arg(spec: &str) -> Result<HmmParams> {
    if let Some(m) = preset_model(spec) {
        return Ok(m);
    }
    Ok(ModelDocument::load(Path::new(spec)).with_context(|| format!("cannot load model {spec}"))?.params)
}

fn cmd_synth(cli: &Cli, a: &SynthArgs) -> Result<()> {
    let hmm = model_from_arg(&a.model)?;
    let window = WindowConfig::parse(&a.window, a.native_period, a.utc_offset_minutes)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cli.seed);
    let series = synthesize_series(&hmm, a.days, a.native_period, &window, a.first_day, &mut rng)?;
    let path = write(cli, "irradiance.csv", &series.to_csv())?;
    let echo = json!({ "model": a.model, "days": a.days, "native_period": a.native_period,
        "first_day": a.first_day, "window": window, "seed": cli.seed });
    let summary = envelope("harvest-synth", echo, json!({ "samples": series.len(), "file": path }));
    write(cli, "synth.json", &pretty(&summary))?;
    print!("{}", pretty(&summary));
    Ok(())
}

fn cmd_train(cli: &Cli, a: &TrainArgs) -> Result<()> {
    let window = a.window.window()?;
    let (series, load_report) = load_series(&a.data, &a.source)?;
    let seqs = resample(&series, &window)?;
    let obs: Vec<Vec<f64>> = seqs.into_iter().map(|s| s.values).filter(|v| v.len() >= 2).collect();
    if obs.is_empty() {
        bail!("no observation sequence of length 2 or more inside the window");
    }
    let stop = EmStop { max_iters: a.max_iters, ll_tol: a.tol };
    let (params, report) = em_train(&obs, a.states, &EmInit::Quantile, stop)?;
    let echo = json!({ "data": a.data, "states": a.states, "window": window, "stop": stop,
        "source_format": a.source.source_format, "clamp_negative": a.source.clamp_negative });
    let doc = ModelDocument::new(
        params,
        json!({ "tool_version": TOOL_VERSION, "config": echo, "load_report": load_report, "training": report }),
    );
    doc.save(&cli.out.join("model.json"))?;
    let body = match cli.format {
        Format::Json => pretty(&envelope("harvest-training", echo, serde_json::to_value(&report)?)),
        Format::Csv => {
            let mut s = String::from("iteration,log_likelihood\n");
            for (i, ll) in report.log_likelihood_trace.iter().enumerate() {
                s.push_str(&format!("{i},{ll}\n"));
            }
            s
        }
    };
    write(cli, &format!("training_report.{}", ext(cli)), &body)?;
    print!("{body}");
    Ok(())
}

fn config_echo(cfg: &ExperimentConfig) -> Value {
    let mut v = serde_json::to_value(cfg).expect("config serializes");
    v["derived"] = json!({
        "gamma_c_db": cfg.gamma_c_db(),
        "snr_unit": cfg.snr_unit(),
        "snr_reference_uw": 1e3,
        "note": "gamma_u = (p_unit / 1e3 uW) * gamma_c",
    });
    v
}

fn thresholds_csv(t: &[Vec<usize>]) -> String {
    let mut s = String::from("z,x,kappa\n");
    for (z, row) in t.iter().enumerate() {
        for (x, k) in row.iter().enumerate() {
            s.push_str(&format!("{z},{x},{k}\n"));
        }
    }
    s
}

fn cmd_solve(cli: &Cli, a: &SolveArgs) -> Result<()> {
    let Loaded { cfg, base } = load_config(cli, &a.overrides)?;
    let hmm = cfg.load_model(&base)?;
    let class = cfg.policy_class()?;
    let sys = solve_system(&cfg, &hmm, class.clone())?;
    let echo = config_echo(&cfg);
    let mut doc_cfg = echo.clone();
    doc_cfg["tool_version"] = json!(TOOL_VERSION);
    let doc = SolutionDocument::new(sys.policy.clone(), sys.value.clone(), sys.solver, &sys.radio, doc_cfg);
    write(cli, "solution.json", &pretty(&doc))?;
    let names: Vec<String> = sys.radio.modulations.iter().map(|m| m.name.clone()).collect();
    if cli.format == Format::Csv {
        write(cli, "policy.csv", &sys.policy.to_csv(&names))?;
        write(cli, "value.csv", &sys.value.to_csv())?;
    }
    let mut body = json!({
        "converged": sys.value.converged,
        "sweeps": sys.value.sweeps,
        "residual": sys.value.residual,
    });
    if matches!(class, PolicyClass::OnOff { .. }) {
        let analysis = check_threshold(&sys.policy, &sys.value, &sys.model)?;
        body["kappa"] = json!(analysis.thresholds);
        body["is_threshold"] = json!(analysis.all_threshold());
        body["value_monotone"] = json!(analysis.all_monotone());
        if cli.format == Format::Csv {
            write(cli, "thresholds.csv", &thresholds_csv(&analysis.thresholds))?;
        }
    }
    let out = envelope("harvest-solve", echo, body);
    if cli.format == Format::Json {
        write(cli, "thresholds.json", &pretty(&out))?;
    }
    print!("{}", pretty(&out));
    Ok(())
}

fn cmd_analyze(cli: &Cli, a: &AnalyzeArgs) -> Result<()> {
    let Loaded { cfg, base } = load_config(cli, &a.overrides)?;
    let hmm = cfg.load_model(&base)?;
    let mut sys = solve_system(&cfg, &hmm, cfg.policy_class()?)?;
    if let Some(p) = &a.solution {
        let text = fs::read_to_string(p).with_context(|| format!("cannot read {}", p.display()))?;
        let doc = SolutionDocument::from_json(&text).map_err(anyhow::Error::msg)?;
        if doc.policy.dims != sys.model.dims || doc.policy.class != sys.model.class {
            bail!("solution {} does not match the configured model", p.display());
        }
        sys.policy = doc.policy;
        sys.value = doc.value;
    }
    let report = analysis_report(&sys, &hmm, a.r1)?;
    let echo = config_echo(&cfg);
    let (name, body) = match cli.format {
        Format::Json => ("analysis.json", pretty(&envelope("harvest-analysis", echo, report))),
        Format::Csv => ("analysis.csv", analysis_csv(&report)),
    };
    write(cli, name, &body)?;
    print!("{body}");
    Ok(())
}

fn analysis_report(sys: &SolvedSystem, hmm: &HmmParams, r1: Option<f64>) -> Result<Value> {
    let nu = stationary_under_policy(&sys.policy, &sys.model)?;
    let rate = expected_net_bit_rate(&nu, &sys.policy, &sys.model);
    let q_bar = sys.pmf.mean_rate(&hmm.stationary);
    let mut report = json!({
        "expected_net_bit_rate": rate,
        "mean_harvest_quanta": q_bar,
        "battery_marginal": nu.battery_marginal(),
        "stationary_residual": nu.residual,
    });
    if let PolicyClass::OnOff { modulation } = sys.model.class {
        let mut t = check_threshold(&sys.policy, &sys.value, &sys.model)?;
        attach_deficiency_regions(&mut t, &sys.value, &sys.model, &sys.pmf)?;
        if let Some(r1) = r1 {
            let mut regions = t.deficiency_regions.take().unwrap_or_default();
            for (z, row) in regions.iter_mut().enumerate() {
                for (x, reg) in row.iter_mut().enumerate() {
                    *reg = harvest_core::policy_analysis::deficiency_region(
                        z,
                        x,
                        t.thresholds[z][x],
                        &sys.value,
                        &sys.model,
                        &sys.pmf,
                        Some(r1),
                    )?;
                }
            }
            t.deficiency_regions = Some(regions);
        }
        let solar: Vec<(f64, f64)> = t
            .deficiency_regions
            .as_ref()
            .map(|r| r.iter().map(|row| solar_state_region(row)).collect())
            .unwrap_or_default();
        let deficiency: Vec<f64> = (0..hmm.n_states).map(|j| sys.pmf.prob(j, 0)).collect();
        report["thresholds"] = serde_json::to_value(&t)?;
        report["solar_state_regions"] = json!(solar);
        report["deficiency_probability"] = json!(deficiency);
        report["rate_upper_bound"] = json!(rate_upper_bound(q_bar, &sys.radio, &sys.channel, modulation));
    }
    Ok(report)
}

fn analysis_csv(report: &Value) -> String {
    let mut s = String::from("metric,z,x,value\n");
    for key in ["expected_net_bit_rate", "mean_harvest_quanta", "rate_upper_bound", "stationary_residual"] {
        if let Some(v) = report.get(key) {
            s.push_str(&format!("{key},,,{v}\n"));
        }
    }
    if let Some(t) = report.get("thresholds") {
        let kappa = t["thresholds"].as_array().cloned().unwrap_or_default();
        for (z, row) in kappa.iter().enumerate() {
            for (x, k) in row.as_array().cloned().unwrap_or_default().iter().enumerate() {
                s.push_str(&format!("kappa,{z},{x},{k}\n"));
                let reg = &t["deficiency_regions"][z][x];
                s.push_str(&format!("region_lower,{z},{x},{}\n", reg["lower"]));
                s.push_str(&format!("region_upper,{z},{x},{}\n", reg["upper"]));
            }
        }
    }
    s
}

#[derive(Debug, Clone)]
struct PolicySpec {
    kind: String,
    modulation: Option<String>,
}

fn parse_policies(s: &str) -> Result<Vec<PolicySpec>> {
    let mut out = Vec::new();
    for item in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        let (kind, m) = match item.split_once(':') {
            Some((k, m)) => (k, Some(m.to_string())),
            None => (item, None),
        };
        if !matches!(kind, "composite" | "onoff" | "myopic1" | "myopic2" | "ttfr") {
            bail!("policies: unknown policy {kind:?}");
        }
        if kind == "composite" && m.is_some() {
            bail!("policies: composite takes no modulation");
        }
        out.push(PolicySpec { kind: kind.into(), modulation: m });
    }
    if out.is_empty() {
        bail!("policies: at least one policy is required");
    }
    Ok(out)
}

fn parse_belief(s: &str) -> Result<BeliefMode> {
    Ok(match s {
        "mixed" => BeliefMode::Mixed,
        "max_belief" => BeliefMode::MaxBelief,
        "true_state" => BeliefMode::TrueState,
        _ => bail!("belief: expected mixed, max_belief or true_state"),
    })
}

fn cmd_simulate(cli: &Cli, a: &SimulateArgs) -> Result<()> {
    let Loaded { cfg: base_cfg, base } = load_config(cli, &a.overrides)?;
    let axes: Vec<GridAxis> = a.sweep.iter().map(|s| s.parse()).collect::<Result<_>>()?;
    let policies = parse_policies(&a.policies)?;
    let metrics: Vec<&str> = if a.metrics == "all" {
        METRICS.to_vec()
    } else {
        let m: Vec<&str> = a.metrics.split(',').map(str::trim).collect();
        for x in &m {
            if !METRICS.contains(x) {
                bail!("metrics: unknown metric {x:?}");
            }
        }
        m
    };
    let belief = a.belief.as_deref().map(parse_belief).transpose()?.unwrap_or(base_cfg.sim.belief);
    let hmm = base_cfg.load_model(&base)?;
    let recorded = match &a.data {
        Some(p) => {
            let window = WindowConfig::parse(&a.window, base_cfg.energy.period_s.round() as u32, a.utc_offset_minutes)?;
            let (series, _) = load_series(p, &a.source)?;
            Some(resample(&series, &window)?.into_iter().map(|s| s.values).collect::<Vec<_>>())
        }
        None => None,
    };

    let mut configs: Vec<SimConfig> = Vec::new();
    let points = expand(&axes);
    for point in &points {
        let mut cfg = base_cfg.clone();
        for (axis, value) in point {
            axis.apply(&mut cfg, *value);
        }
        if let Some(p) = a.periods {
            cfg.sim.n_periods = p;
        }
        cfg.validate().with_context(|| format!("grid point {}", describe(point)))?;
        let mut solved: BTreeMap<String, SolvedSystem> = BTreeMap::new();
        for spec in &policies {
            let source = match spec.kind.as_str() {
                "composite" | "onoff" => {
                    let class = if spec.kind == "composite" {
                        PolicyClass::Composite
                    } else {
                        let mut c = cfg.clone();
                        c.policy.class = "onoff".into();
                        if let Some(m) = &spec.modulation {
                            c.policy.modulation = Some(m.clone());
                        }
                        if c.policy.modulation.is_none() {
                            c.policy.modulation = c.radio.modulations.first().cloned();
                        }
                        c.policy_class()?
                    };
                    let key = format!("{class:?}");
                    if !solved.contains_key(&key) {
                        solved.insert(key.clone(), solve_system(&cfg, &hmm, class)?);
                    }
                    PolicySource::Solved { policy: solved[&key].policy.clone(), belief }
                }
                kind => {
                    let mut c = cfg.clone();
                    let default = match kind {
                        "myopic2" => c.sim.myopic2_modulation.clone(),
                        _ => c.sim.myopic1_modulation.clone(),
                    };
                    c.sim.myopic1_modulation = spec.modulation.clone().unwrap_or(default);
                    let modulation = c.myopic1_modulation()?;
                    match kind {
                        "myopic1" => PolicySource::MyopicI { modulation },
                        "myopic2" => PolicySource::MyopicII { modulation },
                        _ => PolicySource::TTfr { horizon: cfg.sim.ttfr_horizon, modulation },
                    }
                }
            };
            let mut sim = cfg.sim_config(&hmm, &hmm, source, cli.seed)?;
            if let Some(seqs) = &recorded {
                sim.irradiance = IrradianceSource::Recorded { sequences: seqs.clone() };
            }
            sim.record_trace = a.trace;
            configs.push(sim);
        }
    }
    let traces = sweep(&configs)?;
    let rows = results_rows(&configs, &traces, &metrics);
    if a.trace {
        for t in &traces {
            if let Some(csv) = t.records_csv() {
                write(cli, &format!("trace_{}.csv", t.config_hash), &csv)?;
            }
        }
    }
    let echo = json!({
        "base": config_echo(&base_cfg),
        "sweep": a.sweep,
        "policies": a.policies,
        "belief": belief,
        "seed": cli.seed,
        "recorded_data": a.data,
        "metrics": metrics,
    });
    let body = match cli.format {
        Format::Json => pretty(&envelope("harvest-results", echo.clone(), json!({ "rows": rows }))),
        Format::Csv => rows_to_csv(&rows),
    };
    write(cli, &format!("results.{}", ext(cli)), &body)?;
    write(cli, "simulate_meta.json", &pretty(&envelope("harvest-simulate-meta", echo, json!({ "rows": rows.len() }))))?;
    print!("{body}");
    Ok(())
}

fn describe(point: &[(GridAxis, f64)]) -> String {
    point.iter().map(|(a, v)| format!("{}={v}", a.name())).collect::<Vec<_>>().join(",")
}
