use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use polgmm_core::config::RunConfig;
use polgmm_core::data::{load_dataset, load_scored, save_dataset, save_scored, Schema, ScoredDataset, SplitPlan};
use polgmm_core::esprm::{esprm_fit, write_training_log, EsprmOptions};
use polgmm_core::experiment::{run_experiment, write_records, Method};
use polgmm_core::gmm::finite_gmm_fit_basis;
use polgmm_core::nuisance::{compute_scores, fit_nuisances};
use polgmm_core::scenario::{oracle_policy_value, sample_scenario, ScenarioSpec, DIM};
use polgmm_core::surrogate::{erm_fit, PolicyModel};

const POLICY_SCHEMA_VERSION: u32 = 1;

#[derive(Parser)]
#[command(
    name = "polgmm",
    version,
    about = "Policy learning with surrogate-loss ERM, FiniteGMM and ESPRM"
)]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// JSON run configuration; every field is optional.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Seed for data generation, fitting and (for `bench`) the master seed.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Output directory, created if missing.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Worker threads for `bench`.
    #[arg(long, global = true, default_value_t = 1)]
    workers: usize,
}

#[derive(Subcommand)]
enum Command {
    /// Draw a scenario and write a dataset CSV and the scenario JSON.
    Simulate,
    /// Fit one method on a CSV dataset and write the policy JSON.
    Fit {
        /// `x0..,t,y` rows (scores are built from fitted nuisances) or
        /// `x0..,psi` rows (scores used as given).
        #[arg(long)]
        data: PathBuf,
    },
    /// Value of a fitted policy: oracle value under a scenario, or the
    /// held-out score-weighted value on a scored CSV.
    Eval {
        #[arg(long)]
        policy: PathBuf,
        #[arg(long, conflicts_with = "data", required_unless_present = "data")]
        scenario: Option<PathBuf>,
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Run the replicated benchmark and write report.json, reps.csv and
    /// timing.json.
    Bench,
}

#[derive(Debug, Serialize, Deserialize)]
struct PolicyFile {
    schema_version: u32,
    method: Method,
    seed: u64,
    model: PolicyModel,
}

#[derive(Debug, Serialize)]
struct EvalReport {
    schema_version: u32,
    kind: &'static str,
    value: f64,
    value_se: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    optimum: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    regret: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    regret_se: Option<f64>,
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

fn header_has_psi(path: &Path) -> Result<bool> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let header = text.lines().next().unwrap_or_default();
    Ok(header.split(',').any(|c| c.trim() == "psi"))
}

fn scenario_for(config: &RunConfig, seed: u64) -> ScenarioSpec {
    config
        .scenario_spec
        .clone()
        .unwrap_or_else(|| sample_scenario(config.scenario, seed))
}

fn simulate(config: &RunConfig, common: &Common) -> Result<()> {
    let spec = scenario_for(config, common.seed);
    let data_path = common.out.join("data.csv");
    match &spec {
        ScenarioSpec::WellSpecFixture(f) => save_scored(&data_path, &f.generate(config.n, common.seed)?)?,
        ScenarioSpec::Linear(s) | ScenarioSpec::Quadratic(s) => {
            save_dataset(&data_path, &s.generate(config.n, common.seed)?)?
        }
    }
    write_json(&common.out.join("scenario.json"), &spec)?;
    println!("wrote {} rows to {}", config.n, data_path.display());
    Ok(())
}

/// Loads `path` as scores, fitting nuisances on a tuning split when the file
/// holds raw outcomes.
fn load_scores(config: &RunConfig, path: &Path, seed: u64) -> Result<ScoredDataset> {
    let schema = Schema::default();
    if header_has_psi(path)? {
        return Ok(load_scored(path, &schema)?);
    }
    let data = load_dataset(path, &schema)?;
    let frac = config.tuning_fraction;
    if !(frac > 0.0 && frac < 1.0) {
        bail!("tuning_fraction must lie in (0, 1), got {frac}");
    }
    let plan = SplitPlan::new(data.n(), &[1.0 - frac, frac], seed)?;
    let nuis = fit_nuisances(&data, plan.tuning(), config.nuisance_family, &config.nuisance, seed)?;
    Ok(compute_scores(&data.subset(plan.train()), &nuis, &config.scores)?)
}

fn fit(config: &RunConfig, common: &Common, data: &Path) -> Result<()> {
    let scored = load_scores(config, data, common.seed)?;
    let spec = config.policy.spec(scored.dim());
    let model = match &config.method {
        Method::Erm => erm_fit(&scored, &spec, &config.erm, common.seed, None)?.model,
        Method::FiniteGmm { basis } => {
            finite_gmm_fit_basis(&scored, &spec, &basis.build(scored.dim()), &config.gmm, common.seed)?.model
        }
        Method::Esprm => {
            let opts = EsprmOptions {
                record_log: true,
                ..Default::default()
            };
            let fit = esprm_fit(&scored, &spec, &config.esprm, common.seed, opts)?;
            let log = fs::File::create(common.out.join("training_log.csv"))?;
            write_training_log(log, &fit.log)?;
            fit.model
        }
    };
    if model.is_degraded() {
        eprintln!("warning: optimizer did not reach its stationarity tolerance");
    }
    let file = PolicyFile {
        schema_version: POLICY_SCHEMA_VERSION,
        method: config.method.clone(),
        seed: common.seed,
        model,
    };
    let path = common.out.join("policy.json");
    write_json(&path, &file)?;
    println!("wrote {}", path.display());
    Ok(())
}

fn eval(
    config: &RunConfig,
    common: &Common,
    policy: &Path,
    scenario: Option<&Path>,
    data: Option<&Path>,
) -> Result<()> {
    let file: PolicyFile = read_json(policy)?;
    let model = file.model;
    let report = if let Some(path) = scenario {
        let spec: ScenarioSpec = read_json(path)?;
        if model.spec.input_dim != DIM {
            bail!(
                "policy expects {} covariates, scenarios have {DIM}",
                model.spec.input_dim
            );
        }
        let net = model.net();
        let mut ws = polgmm_core::nn::Workspace::new(&model.spec);
        let v = oracle_policy_value(&spec, |x| net.forward(x, &mut ws), config.mc_size, common.seed)?;
        EvalReport {
            schema_version: POLICY_SCHEMA_VERSION,
            kind: "oracle",
            value: v.value,
            value_se: v.value_se,
            optimum: Some(v.optimum),
            regret: Some(v.regret),
            regret_se: Some(v.regret_se),
        }
    } else {
        let path = data.expect("clap enforces one source");
        let scored = load_scores(config, path, common.seed)?;
        let net = model.net();
        let mut ws = polgmm_core::nn::Workspace::new(&model.spec);
        let (value, value_se) = scored.policy_value(|x| net.forward(x, &mut ws));
        EvalReport {
            schema_version: POLICY_SCHEMA_VERSION,
            kind: "held_out",
            value,
            value_se,
            optimum: None,
            regret: None,
            regret_se: None,
        }
    };
    let path = common.out.join("eval.json");
    write_json(&path, &report)?;
    println!("value {:.6} (se {:.6})", report.value, report.value_se);
    Ok(())
}

fn bench(config: &RunConfig, common: &Common) -> Result<()> {
    let mut plan = config.experiment.clone();
    plan.master_seed = common.seed;
    let out = run_experiment(&plan, common.workers)?;
    write_json(&common.out.join("report.json"), &out.report)?;
    write_records(fs::File::create(common.out.join("reps.csv"))?, &out.records)?;
    write_json(&common.out.join("timing.json"), &out.timing)?;
    for cell in &out.report.cells {
        println!(
            "{:>20} n={:<6} regret {:.5}  rmrr {}",
            cell.method,
            cell.n,
            cell.mean_regret,
            cell.rmrr.map(|r| format!("{r:+.1}%")).unwrap_or_else(|| "n/a".into())
        );
    }
    if out.report.excluded_reps > 0 {
        eprintln!("{} replications failed and were excluded", out.report.excluded_reps);
    }
    Ok(())
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    let config = match &cli.common.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    fs::create_dir_all(&cli.common.out).with_context(|| format!("creating {}", cli.common.out.display()))?;
    match &cli.command {
        Command::Simulate => simulate(&config, &cli.common),
        Command::Fit { data } => fit(&config, &cli.common, data),
        Command::Eval { policy, scenario, data } => {
            eval(&config, &cli.common, policy, scenario.as_deref(), data.as_deref())
        }
        Command::Bench => bench(&config, &cli.common),
    }
}
