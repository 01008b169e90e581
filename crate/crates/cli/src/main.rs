use std::fmt::Write as _;
use std::fs::{self, File};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, CommandFactory, Parser, Subcommand, ValueEnum};

use crtmle::dgp::{self, CompetingTime, Scenario, ScenarioConfig};
use crtmle::harness::{self, Estimator, McProfile};
use crtmle::learners::{fit_learner_subgroup, BootstrapOptions, LearnerKind};
use crtmle::nuisance::{CensoringKind, Penalty};
use crtmle::survival::{read_cohort_csv, write_cohort_csv, CohortDataset, SubgroupKey};
use crtmle::tmle::{estimates_csv, per_subgroup, run_tmle, InitialLearner, ModelBundle, PipelineConfig};
use crtmle::vim::{predictive_report, prognostic_report, VimReport};
use crtmle::Error;

#[derive(Parser)]
#[command(name = "crtmle", version, about = "TMLE of conditional treatment effects for competing-risks data")]
struct Cli {
    /// Master random seed.
    #[arg(long, global = true, default_value_t = 1)]
    seed: u64,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Directory for output files.
    #[arg(long, global = true, default_value = ".")]
    out_dir: PathBuf,
    /// JSON file whose keys mirror the long flags.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a cohort from a scenario.
    Simulate(SimulateArgs),
    /// Oracle CATE per subgroup.
    Truth(TruthArgs),
    /// Estimate the CATE of every subgroup.
    Fit(FitArgs),
    /// Initial-model CIF predictions from saved models.
    Predict(PredictArgs),
    /// Variable importance.
    Vim(VimArgs),
    /// Monte Carlo study.
    Mc(McArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum CompetingArg {
    Mean,
    Rate,
}

#[derive(Args)]
struct ScenarioArgs {
    #[arg(long, default_value = "S1", value_parser = parse_scenario)]
    scenario: Scenario,
    #[arg(long, default_value_t = 3000)]
    n: usize,
    /// 28 prognostic covariates instead of 4.
    #[arg(long)]
    high_dim: bool,
    /// Censoring rate scale (calibrated to 25% censoring if omitted).
    #[arg(long)]
    lambda0: Option<f64>,
    #[arg(long, value_enum, default_value = "mean")]
    competing_time: CompetingArg,
    /// Remove treatment from the outcome model of the simulator.
    #[arg(long)]
    null_effect: bool,
}

impl ScenarioArgs {
    fn config(&self, seed: u64) -> ScenarioConfig {
        ScenarioConfig {
            high_dim: self.high_dim,
            lambda0: self.lambda0,
            competing_time: match self.competing_time {
                CompetingArg::Mean => CompetingTime::Mean,
                CompetingArg::Rate => CompetingTime::Rate,
            },
            null_effect: self.null_effect,
            ..ScenarioConfig::new(self.scenario, self.n, seed)
        }
    }
}

#[derive(Args)]
struct SimulateArgs {
    #[command(flatten)]
    scenario: ScenarioArgs,
    /// Output CSV (default: <out-dir>/cohort.csv).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct TruthArgs {
    #[command(flatten)]
    scenario: ScenarioArgs,
    /// Horizon; otherwise a quantile of uncensored event times.
    #[arg(long)]
    t0: Option<f64>,
    #[arg(long, default_value_t = 0.5)]
    t0_quantile: f64,
    /// Take the horizon quantile from this cohort instead of a simulated one.
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct DataArgs {
    /// Cohort CSV with columns id,time,event,a and covariates.
    #[arg(long)]
    data: PathBuf,
    /// Predictive covariates defining subgroups.
    #[arg(long, value_delimiter = ',', default_value = "V1,V2")]
    v: Vec<String>,
    /// Prognostic covariates (default: all others).
    #[arg(long, value_delimiter = ',')]
    l: Vec<String>,
}

impl DataArgs {
    fn load(&self) -> crtmle::Result<CohortDataset> {
        let v: Vec<&str> = self.v.iter().map(String::as_str).collect();
        let l: Vec<&str> = self.l.iter().map(String::as_str).collect();
        read_cohort_csv(File::open(&self.data)?, &v, &l)
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum CensoringArg {
    Km,
    Cox,
}

#[derive(Clone, Copy, ValueEnum)]
enum InitialArg {
    S,
    T,
}

#[derive(Args)]
struct ModelArgs {
    #[arg(long)]
    t0: Option<f64>,
    #[arg(long, default_value_t = 0.5)]
    t0_quantile: f64,
    /// Outcome model covariates (default: prognostic set).
    #[arg(long, value_delimiter = ',')]
    outcome_covs: Vec<String>,
    #[arg(long, value_delimiter = ',')]
    treatment_covs: Vec<String>,
    #[arg(long, value_delimiter = ',')]
    censoring_covs: Vec<String>,
    #[arg(long, value_enum, default_value = "cox")]
    censoring: CensoringArg,
    /// Leave treatment out of the Cox censoring model.
    #[arg(long)]
    no_censoring_treatment: bool,
    /// Initial outcome model: pooled (s) or per arm (t).
    #[arg(long, value_enum, default_value = "s")]
    initial: InitialArg,
    /// Fixed L1 penalty for the outcome model.
    #[arg(long, conflicts_with = "cv_folds")]
    lambda: Option<f64>,
    /// Choose the L1 penalty by K-fold cross-validation.
    #[arg(long)]
    cv_folds: Option<usize>,
    #[arg(long, default_value_t = 1e-3)]
    s_n: f64,
    #[arg(long, default_value_t = 20)]
    max_iter: usize,
}

impl ModelArgs {
    fn horizon(&self, data: &CohortDataset) -> crtmle::Result<f64> {
        match self.t0 {
            Some(t) => Ok(t),
            None => data.event_time_quantile(self.t0_quantile).ok_or(Error::NoMainEvents),
        }
    }

    fn pipeline(&self, data: &CohortDataset, seed: u64) -> crtmle::Result<PipelineConfig> {
        let lookup = |names: &[String]| -> crtmle::Result<Vec<usize>> {
            if names.is_empty() {
                return Ok(data.prognostic_idx().to_vec());
            }
            names
                .iter()
                .map(|n| data.covariate_index(n).ok_or_else(|| Error::MissingColumn(n.clone())))
                .collect()
        };
        let mut config = PipelineConfig::new(self.horizon(data)?, Vec::new());
        config.outcome_covariates = lookup(&self.outcome_covs)?;
        config.treatment_covariates = lookup(&self.treatment_covs)?;
        config.censoring_covariates = lookup(&self.censoring_covs)?;
        config.censoring_kind = match self.censoring {
            CensoringArg::Km => CensoringKind::KaplanMeier,
            CensoringArg::Cox => CensoringKind::CoxPH,
        };
        config.censoring_treatment = !self.no_censoring_treatment;
        config.initial = match self.initial {
            InitialArg::S => InitialLearner::S,
            InitialArg::T => InitialLearner::T,
        };
        config.penalty = match (self.lambda, self.cv_folds) {
            (Some(l), _) => Penalty::Fixed(l),
            (None, Some(folds)) => Penalty::CrossValidated { folds, seed },
            (None, None) => Penalty::None,
        };
        config.targeting.s_n = self.s_n;
        config.targeting.max_iter = self.max_iter;
        Ok(config)
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum LearnerArg {
    Tmle,
    S,
    T,
}

#[derive(Args)]
struct FitArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long, value_enum, default_value = "tmle")]
    learner: LearnerArg,
    /// Bootstrap replicates for learner intervals (0 disables).
    #[arg(long, default_value_t = 500)]
    bootstrap: usize,
    /// Write fitted models to this JSON file (TMLE only).
    #[arg(long)]
    save_models: Option<PathBuf>,
    /// Output CSV (default: <out-dir>/estimates.csv).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct PredictArgs {
    #[arg(long)]
    models: PathBuf,
    #[arg(long)]
    data: PathBuf,
    /// Horizon (default: the fitted one).
    #[arg(long)]
    t0: Option<f64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum VimKindArg {
    Predictive,
    Prognostic,
}

#[derive(Args)]
struct VimArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long, value_enum, default_value = "predictive")]
    kind: VimKindArg,
    /// Prognostic covariates to assess (default: all prognostic).
    #[arg(long, value_delimiter = ',')]
    variables: Vec<String>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct McArgs {
    /// B=500 and n in {800,1500,3000}.
    #[arg(long)]
    full: bool,
    #[arg(long, value_delimiter = ',', value_parser = parse_scenario)]
    scenarios: Vec<Scenario>,
    /// Sample sizes (overrides the profile).
    #[arg(long, value_delimiter = ',')]
    n: Vec<usize>,
    /// Replicates (overrides the profile).
    #[arg(long)]
    b: Option<usize>,
    /// Estimators among tmle, tmle+t, s, t.
    #[arg(long, value_delimiter = ',', value_parser = parse_estimator)]
    estimators: Vec<Estimator>,
    #[arg(long, default_value_t = 0.5)]
    t0_quantile: f64,
    #[arg(long)]
    high_dim: bool,
    #[arg(long, value_enum, default_value = "mean")]
    competing_time: CompetingArg,
    /// Also write replicates.csv.
    #[arg(long)]
    dump_replicates: bool,
}

fn parse_scenario(s: &str) -> Result<Scenario, String> {
    Scenario::parse(s).ok_or_else(|| format!("unknown scenario `{s}` (expected S1..S5)"))
}

fn parse_estimator(s: &str) -> Result<Estimator, String> {
    Estimator::parse(s).ok_or_else(|| format!("unknown estimator `{s}` (expected tmle, tmle+t, s or t)"))
}

fn output_path(out: &Option<PathBuf>, dir: &Path, default: &str) -> PathBuf {
    out.clone().unwrap_or_else(|| dir.join(default))
}

fn write_output(path: &Path, contents: &str) -> crtmle::Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)?;
    }
    fs::write(path, contents)?;
    eprintln!("wrote {}", path.display());
    Ok(())
}

fn vim_csv(report: &VimReport) -> String {
    let mut out = String::from("variable,subgroup,value\n");
    for e in &report.entries {
        let _ = writeln!(out, "{},{},{}", e.variable, e.subgroup, e.value);
    }
    out
}

fn run(cli: Cli) -> crtmle::Result<()> {
    let seed = cli.seed;
    let dir = cli.out_dir.as_path();
    match cli.command {
        Command::Simulate(args) => {
            let data = dgp::simulate(&args.scenario.config(seed))?;
            let path = output_path(&args.out, dir, "cohort.csv");
            if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
                fs::create_dir_all(parent)?;
            }
            write_cohort_csv(&data, File::create(&path)?)?;
            eprintln!("wrote {}", path.display());
        }
        Command::Truth(args) => {
            let config = args.scenario.config(seed);
            let t0 = match (args.t0, &args.data) {
                (Some(t), _) => t,
                (None, Some(path)) => read_cohort_csv(File::open(path)?, &["V1", "V2"], &[])?
                    .event_time_quantile(args.t0_quantile)
                    .ok_or(Error::NoMainEvents)?,
                (None, None) => dgp::simulate(&config)?
                    .event_time_quantile(args.t0_quantile)
                    .ok_or(Error::NoMainEvents)?,
            };
            let truth = dgp::true_cate(&config, t0)?;
            let mut out = String::from("subgroup,t0,psi_true,oracle_se\n");
            for (key, psi, se) in &truth.values {
                let label = format!("V1={};V2={}", key.values[0], key.values[1]);
                let _ = writeln!(out, "{label},{t0},{psi},{se}");
            }
            write_output(&output_path(&args.out, dir, "truth.csv"), &out)?;
        }
        Command::Fit(args) => {
            let data = args.data.load()?;
            let config = args.model.pipeline(&data, seed)?;
            let estimates = match args.learner {
                LearnerArg::Tmle => {
                    let fits = run_tmle(&data, &config)?;
                    if let Some(path) = &args.save_models {
                        let predictive = data
                            .predictive_idx()
                            .iter()
                            .map(|&j| data.covariate_names()[j].clone())
                            .collect();
                        let bundle = ModelBundle::new(data.covariate_names().to_vec(), predictive, &config, &fits);
                        write_output(path, &bundle.to_json()?)?;
                    }
                    fits.into_iter().map(|f| f.estimate).collect::<Vec<_>>()
                }
                LearnerArg::S | LearnerArg::T => {
                    let kind = match args.learner {
                        LearnerArg::S => LearnerKind::SLearner,
                        _ => LearnerKind::TLearner,
                    };
                    let boot = BootstrapOptions {
                        replicates: args.bootstrap,
                        seed,
                        ..BootstrapOptions::default()
                    };
                    let boot = (args.bootstrap > 0).then_some(&boot);
                    per_subgroup(&data, |s, key, label| fit_learner_subgroup(kind, s, key, label, &config, boot))
                        .into_iter()
                        .map(|(_, r)| r)
                        .collect::<crtmle::Result<Vec<_>>>()?
                }
            };
            write_output(&output_path(&args.out, dir, "estimates.csv"), &estimates_csv(&estimates))?;
        }
        Command::Predict(args) => {
            let bundle = ModelBundle::from_json(&fs::read_to_string(&args.models)?)?;
            let v: Vec<&str> = bundle.predictive.iter().map(String::as_str).collect();
            let data = read_cohort_csv(File::open(&args.data)?, &v, &[])?;
            if data.covariate_names() != bundle.covariate_names.as_slice() {
                return Err(Error::InvalidData("covariate columns differ from the fitted models".into()));
            }
            let t0 = args.t0.unwrap_or(bundle.horizon);
            let mut out = String::from("id,subgroup,t0,cif_treated,cif_control,effect\n");
            for s in data.subjects() {
                let key = SubgroupKey {
                    values: data.predictive_idx().iter().map(|&j| s.covariates[j]).collect(),
                };
                let saved = bundle
                    .subgroup(&key)
                    .ok_or_else(|| Error::EmptySubgroup(format!("{} (no fitted model)", data.subgroup_label(&key))))?;
                let f1 = saved.nuisances.outcome.cif(1, &s.covariates, t0);
                let f0 = saved.nuisances.outcome.cif(0, &s.covariates, t0);
                let _ = writeln!(out, "{},{},{t0},{f1},{f0},{}", s.id, saved.label, f1 - f0);
            }
            write_output(&output_path(&args.out, dir, "predictions.csv"), &out)?;
        }
        Command::Vim(args) => {
            let data = args.data.load()?;
            let config = args.model.pipeline(&data, seed)?;
            let report = match args.kind {
                VimKindArg::Predictive => predictive_report(&data, &config)?,
                VimKindArg::Prognostic => {
                    let ks = if args.variables.is_empty() {
                        data.prognostic_idx().to_vec()
                    } else {
                        args.variables
                            .iter()
                            .map(|n| data.covariate_index(n).ok_or_else(|| Error::MissingColumn(n.clone())))
                            .collect::<crtmle::Result<Vec<_>>>()?
                    };
                    prognostic_report(&data, &config, &ks)?
                }
            };
            write_output(&output_path(&args.out, dir, "vim.csv"), &vim_csv(&report))?;
        }
        Command::Mc(args) => {
            let mut profile = if args.full { McProfile::full() } else { McProfile::desk() };
            if !args.scenarios.is_empty() {
                profile.scenarios = args.scenarios.clone();
            }
            if !args.n.is_empty() {
                profile.sample_sizes = args.n.clone();
            }
            if let Some(b) = args.b {
                profile.replicates = b;
            }
            if !args.estimators.is_empty() {
                profile.estimators = args.estimators.clone();
            }
            let base = ScenarioConfig {
                high_dim: args.high_dim,
                t0_quantile: args.t0_quantile,
                competing_time: match args.competing_time {
                    CompetingArg::Mean => CompetingTime::Mean,
                    CompetingArg::Rate => CompetingTime::Rate,
                },
                ..ScenarioConfig::new(Scenario::S1, 100, seed)
            };
            let (summaries, records) = harness::run_profile(&profile, &base)?;
            harness::emit_report(&summaries, args.dump_replicates.then_some(records.as_slice()), dir)?;
            print!("{}", harness::summary_text(&summaries));
        }
    }
    Ok(())
}

/// Append `--key value` pairs from the JSON config for flags the command
/// line does not already set and the chosen subcommand accepts.
fn merge_config(args: Vec<String>) -> Result<Vec<String>, String> {
    let mut path = None;
    for (i, a) in args.iter().enumerate() {
        if a == "--config" {
            path = args.get(i + 1).cloned();
        } else if let Some(p) = a.strip_prefix("--config=") {
            path = Some(p.to_string());
        }
    }
    let Some(path) = path else {
        return Ok(args);
    };
    let text = fs::read_to_string(&path).map_err(|e| format!("cannot read config {path}: {e}"))?;
    let value: serde_json::Value = serde_json::from_str(&text).map_err(|e| format!("invalid config {path}: {e}"))?;
    let obj = value
        .as_object()
        .ok_or_else(|| format!("config {path} must be a JSON object"))?;

    let root = Cli::command();
    let sub = args
        .iter()
        .skip(1)
        .find_map(|a| root.get_subcommands().find(|c| c.get_name() == a));
    let accepts = |flag: &str| {
        root.get_arguments().any(|a| a.get_long() == Some(flag))
            || sub.is_some_and(|c| c.get_arguments().any(|a| a.get_long() == Some(flag)))
    };
    let mut merged = args.clone();
    for (key, v) in obj {
        let flag = key.replace('_', "-");
        if flag == "config" || !accepts(&flag) {
            continue;
        }
        let long = format!("--{flag}");
        if args.iter().any(|a| a == &long || a.starts_with(&format!("{long}="))) {
            continue;
        }
        match v {
            serde_json::Value::Bool(true) => merged.push(long),
            serde_json::Value::Bool(false) | serde_json::Value::Null => {}
            serde_json::Value::Array(items) => {
                let parts: Vec<String> = items
                    .iter()
                    .map(|x| x.as_str().map(str::to_string).unwrap_or_else(|| x.to_string()))
                    .collect();
                merged.push(long);
                merged.push(parts.join(","));
            }
            serde_json::Value::String(s) => {
                merged.push(long);
                merged.push(s.clone());
            }
            other => {
                merged.push(long);
                merged.push(other.to_string());
            }
        }
    }
    Ok(merged)
}

fn main() -> ExitCode {
    let args = match merge_config(std::env::args().collect()) {
        Ok(a) => a,
        Err(msg) => {
            eprintln!("error: {msg}");
            return ExitCode::from(1);
        }
    };
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    if let Some(jobs) = cli.jobs {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(jobs).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    }
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_numerical() { 3 } else { 2 })
        }
    }
}
