//! Replicated simulation benchmark: regret, relative mean regret reduction
//! (RMRR) against a baseline, and normalized-parameter squared error.
//!
//! Every (n, rep) task is independent and owns RNG streams derived from the
//! master seed, so the report does not depend on the number of workers.

use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::ScoredDataset;
use crate::error::{Error, Result};
use crate::esprm::{esprm_fit, EsprmConfig, EsprmOptions};
use crate::gmm::{finite_gmm_fit_basis, BasisSpec, GmmSettings};
use crate::nn::MlpSpec;
use crate::nuisance::{compute_scores, fit_nuisances, NuisanceFamily, NuisanceSettings, ScoreConfig};
use crate::rng::RngStream;
use crate::scenario::{normalized_sq_error, sample_scenario, OracleDraws, ScenarioKind, ScenarioSpec, DIM};
use crate::stats::{bootstrap_ci, mean, Interval};
use crate::surrogate::{erm_fit, ErmSettings, PolicyClass, PolicyModel};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Method {
    Erm,
    FiniteGmm { basis: BasisSpec },
    Esprm,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodEntry {
    pub name: String,
    pub method: Method,
}

impl MethodEntry {
    pub fn new(name: &str, method: Method) -> Self {
        Self {
            name: name.to_string(),
            method,
        }
    }

    pub fn default_set() -> Vec<Self> {
        vec![
            Self::new("erm", Method::Erm),
            Self::new(
                "finite_gmm_poly3",
                Method::FiniteGmm {
                    basis: BasisSpec::Polynomial { degree: 3 },
                },
            ),
            Self::new(
                "finite_gmm_rbf64",
                Method::FiniteGmm {
                    basis: BasisSpec::RandomFourier {
                        count: 64,
                        sigma: 0.5,
                        seed: 0,
                        paired: false,
                    },
                },
            ),
            Self::new("esprm", Method::Esprm),
        ]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NuisanceChoice {
    /// The correctly specified parametric family for the scenario.
    Matched,
    Mlp,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentPlan {
    pub scenario: ScenarioKind,
    pub policy: PolicyClass,
    pub methods: Vec<MethodEntry>,
    pub n_grid: Vec<usize>,
    pub reps: usize,
    pub master_seed: u64,
    pub nuisance: NuisanceChoice,
    pub nuisance_settings: NuisanceSettings,
    pub scores: ScoreConfig,
    /// Covariate draws for the oracle policy value.
    pub mc_size: usize,
    pub bootstrap_resamples: usize,
    pub erm: ErmSettings,
    pub gmm: GmmSettings,
    pub esprm: EsprmConfig,
}

impl Default for ExperimentPlan {
    fn default() -> Self {
        Self {
            scenario: ScenarioKind::Linear,
            policy: PolicyClass::Linear,
            methods: MethodEntry::default_set(),
            n_grid: vec![100, 200, 500, 1000, 2000, 5000, 10000],
            reps: 64,
            master_seed: 0,
            nuisance: NuisanceChoice::Matched,
            nuisance_settings: NuisanceSettings::default(),
            scores: ScoreConfig::default(),
            mc_size: 1_000_000,
            bootstrap_resamples: 1000,
            erm: ErmSettings {
                refine: None,
                ..Default::default()
            },
            gmm: GmmSettings::default(),
            esprm: EsprmConfig::default(),
        }
    }
}

impl ExperimentPlan {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.to_string()));
        if self.methods.is_empty() {
            return bad("no methods");
        }
        if !self.methods.iter().any(|m| m.method == Method::Erm) {
            return bad("the method list needs an ERM baseline");
        }
        let mut names: Vec<&str> = self.methods.iter().map(|m| m.name.as_str()).collect();
        names.sort_unstable();
        if names.windows(2).any(|w| w[0] == w[1]) {
            return bad("method names must be unique");
        }
        if self.n_grid.is_empty() || self.n_grid.contains(&0) {
            return bad("sample sizes must be positive");
        }
        if self.reps == 0 {
            return bad("reps must be positive");
        }
        if self.mc_size < 2 {
            return bad("mc_size must be at least 2");
        }
        self.scores.validate()?;
        self.esprm.validate()
    }

    pub fn policy_spec(&self) -> MlpSpec {
        self.policy.spec(DIM)
    }

    pub fn baseline(&self) -> usize {
        self.methods
            .iter()
            .position(|m| m.method == Method::Erm)
            .expect("validated")
    }

    fn nuisance_family(&self) -> NuisanceFamily {
        match self.nuisance {
            NuisanceChoice::Matched => self.scenario.matched_family(),
            NuisanceChoice::Mlp => NuisanceFamily::Mlp,
        }
    }
}

/// Outcome of one method on one replication.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepRecord {
    pub n: usize,
    pub rep: usize,
    pub method: String,
    pub regret: f64,
    pub regret_se: f64,
    pub value: f64,
    pub optimum: f64,
    pub sq_error: Option<f64>,
    pub degraded: bool,
    /// Training rows whose propensity was clipped.
    pub clipped_rows: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepFailure {
    pub n: usize,
    pub rep: usize,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellSummary {
    pub method: String,
    pub n: usize,
    pub reps: usize,
    pub mean_regret: f64,
    pub mean_regret_ci: Interval,
    /// Percent; `None` when the baseline regret is zero.
    pub rmrr: Option<f64>,
    pub rmrr_ci: Option<Interval>,
    pub mean_sq_error: Option<f64>,
    pub mean_sq_error_ci: Option<Interval>,
    /// `(mse - mse_baseline) / mse_baseline` with a paired bootstrap CI.
    pub sq_error_rel_diff: Option<f64>,
    pub sq_error_rel_diff_ci: Option<Interval>,
    pub degraded_fits: usize,
    /// Clipped training rows summed over replications.
    pub clipped_rows: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub schema_version: u32,
    pub plan: ExperimentPlan,
    pub baseline: String,
    pub cells: Vec<CellSummary>,
    pub failures: Vec<RepFailure>,
    pub excluded_reps: usize,
}

impl ExperimentReport {
    pub fn cell(&self, method: &str, n: usize) -> Option<&CellSummary> {
        self.cells.iter().find(|c| c.method == method && c.n == n)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellTiming {
    pub n: usize,
    pub seconds: f64,
}

/// Wall-clock data, kept apart from the report so that reports are
/// reproducible byte for byte.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub total_seconds: f64,
    pub workers: usize,
    /// Summed task time per sample size.
    pub per_n: Vec<CellTiming>,
}

#[derive(Debug, Clone)]
pub struct ExperimentOutput {
    pub report: ExperimentReport,
    pub records: Vec<RepRecord>,
    pub timing: Timing,
}

fn scenario_seed(master: u64, rep: usize) -> u64 {
    RngStream::new(master, format!("scenario/{rep}")).next_u64()
}

fn task_stream(master: u64, n: usize, rep: usize) -> RngStream {
    RngStream::new(master, format!("rep/{n}/{rep}"))
}

/// Scores for one replication: the scenario, and scores on `n` training
/// rows with nuisances fitted on `n` separate tuning rows.
pub fn replicate_data(plan: &ExperimentPlan, n: usize, rep: usize) -> Result<(ScenarioSpec, ScoredDataset)> {
    let spec = sample_scenario(plan.scenario, scenario_seed(plan.master_seed, rep));
    let stream = task_stream(plan.master_seed, n, rep);
    let data_seed = stream.derive("data").next_u64();
    let scored = match &spec {
        ScenarioSpec::WellSpecFixture(f) => f.generate(n, data_seed)?,
        ScenarioSpec::Linear(s) | ScenarioSpec::Quadratic(s) => {
            let all = s.generate(2 * n, data_seed)?;
            let train: Vec<usize> = (0..n).collect();
            let tuning: Vec<usize> = (n..2 * n).collect();
            let nuis = fit_nuisances(
                &all,
                &tuning,
                plan.nuisance_family(),
                &plan.nuisance_settings,
                stream.derive("nuisance").next_u64(),
            )?;
            compute_scores(&all.subset(&train), &nuis, &plan.scores)?
        }
    };
    Ok((spec, scored))
}

pub fn fit_method(plan: &ExperimentPlan, method: &Method, data: &ScoredDataset, seed: u64) -> Result<PolicyModel> {
    let spec = plan.policy_spec();
    Ok(match method {
        Method::Erm => erm_fit(data, &spec, &plan.erm, seed, None)?.model,
        Method::FiniteGmm { basis } => {
            finite_gmm_fit_basis(data, &spec, &basis.build(data.dim()), &plan.gmm, seed)?.model
        }
        Method::Esprm => esprm_fit(data, &spec, &plan.esprm, seed, EsprmOptions::default())?.model,
    })
}

fn run_task(plan: &ExperimentPlan, n: usize, rep: usize) -> Result<Vec<RepRecord>> {
    let (spec, data) = replicate_data(plan, n, rep)?;
    let stream = task_stream(plan.master_seed, n, rep);
    let fit_seed = stream.derive("fit").next_u64();
    let draws = OracleDraws::new(&spec, plan.mc_size, stream.derive("oracle").next_u64())?;
    let theta_star = match plan.policy {
        PolicyClass::Linear => spec.theta_star(),
        PolicyClass::Flexible => None,
    };
    let mut out = Vec::with_capacity(plan.methods.len());
    for entry in &plan.methods {
        let model = fit_method(plan, &entry.method, &data, fit_seed)?;
        let g = model.values(draws.x().iter_rows());
        let v = draws.evaluate_values(&g);
        out.push(RepRecord {
            n,
            rep,
            method: entry.name.clone(),
            regret: v.regret,
            regret_se: v.regret_se,
            value: v.value,
            optimum: v.optimum,
            sq_error: theta_star
                .as_ref()
                .map(|t| normalized_sq_error(model.params.as_slice(), t)),
            degraded: model.is_degraded(),
            clipped_rows: data.clipped_rows(),
        });
    }
    Ok(out)
}

fn summarize(plan: &ExperimentPlan, n: usize, by_method: &[Vec<&RepRecord>]) -> Vec<CellSummary> {
    let base = plan.baseline();
    let base_regret: Vec<f64> = by_method[base].iter().map(|r| r.regret).collect();
    let base_sq: Option<Vec<f64>> = by_method[base].iter().map(|r| r.sq_error).collect();
    let level = 0.95;
    let resamples = plan.bootstrap_resamples;
    plan.methods
        .iter()
        .zip(by_method)
        .map(|(entry, recs)| {
            let reps = recs.len();
            let regret: Vec<f64> = recs.iter().map(|r| r.regret).collect();
            let sq: Option<Vec<f64>> = recs.iter().map(|r| r.sq_error).collect();
            let mut rng = RngStream::new(plan.master_seed, format!("bootstrap/{}/{n}", entry.name));
            let sub_mean = |v: &[f64], idx: &[usize]| idx.iter().map(|&i| v[i]).sum::<f64>() / idx.len() as f64;

            let mean_regret = mean(&regret);
            let mean_regret_ci = bootstrap_ci(reps, resamples, level, &mut rng, |idx| sub_mean(&regret, idx));
            let base_mean = mean(&base_regret);
            let (rmrr, rmrr_ci) = if base_mean > 0.0 && reps > 0 {
                let ci = bootstrap_ci(reps, resamples, level, &mut rng, |idx| {
                    (1.0 - sub_mean(&regret, idx) / sub_mean(&base_regret, idx)) * 100.0
                });
                (Some((1.0 - mean_regret / base_mean) * 100.0), Some(ci))
            } else {
                (None, None)
            };
            let (mut mse, mut mse_ci, mut rel, mut rel_ci) = (None, None, None, None);
            if let (Some(sq), Some(bsq)) = (&sq, &base_sq) {
                if reps > 0 {
                    mse = Some(mean(sq));
                    mse_ci = Some(bootstrap_ci(reps, resamples, level, &mut rng, |idx| sub_mean(sq, idx)));
                    let bm = mean(bsq);
                    if bm > 0.0 {
                        rel = Some((mean(sq) - bm) / bm);
                        rel_ci = Some(bootstrap_ci(reps, resamples, level, &mut rng, |idx| {
                            let b = sub_mean(bsq, idx);
                            (sub_mean(sq, idx) - b) / b
                        }));
                    }
                }
            }
            CellSummary {
                method: entry.name.clone(),
                n,
                reps,
                mean_regret,
                mean_regret_ci,
                rmrr,
                rmrr_ci,
                mean_sq_error: mse,
                mean_sq_error_ci: mse_ci,
                sq_error_rel_diff: rel,
                sq_error_rel_diff_ci: rel_ci,
                degraded_fits: recs.iter().filter(|r| r.degraded).count(),
                clipped_rows: recs.iter().map(|r| r.clipped_rows).sum(),
            }
        })
        .collect()
}

/// Runs every (n, rep) task on a pool of `workers` threads and aggregates in
/// (n, rep) order.
pub fn run_experiment(plan: &ExperimentPlan, workers: usize) -> Result<ExperimentOutput> {
    plan.validate()?;
    let started = Instant::now();
    let tasks: Vec<(usize, usize)> = plan
        .n_grid
        .iter()
        .flat_map(|&n| (0..plan.reps).map(move |rep| (n, rep)))
        .collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::InvalidConfig(format!("worker pool: {e}")))?;
    let results: Vec<(Result<Vec<RepRecord>>, f64)> = pool.install(|| {
        tasks
            .par_iter()
            .map(|&(n, rep)| {
                let t0 = Instant::now();
                let r = run_task(plan, n, rep);
                (r, t0.elapsed().as_secs_f64())
            })
            .collect()
    });

    let mut records = Vec::new();
    let mut failures = Vec::new();
    let mut per_n: Vec<CellTiming> = plan.n_grid.iter().map(|&n| CellTiming { n, seconds: 0.0 }).collect();
    for (&(n, rep), (res, secs)) in tasks.iter().zip(results) {
        if let Some(t) = per_n.iter_mut().find(|t| t.n == n) {
            t.seconds += secs;
        }
        match res {
            Ok(r) => records.extend(r),
            Err(e) => failures.push(RepFailure {
                n,
                rep,
                error: e.to_string(),
            }),
        }
    }

    let mut cells = Vec::new();
    for &n in &plan.n_grid {
        let by_method: Vec<Vec<&RepRecord>> = plan
            .methods
            .iter()
            .map(|m| records.iter().filter(|r| r.n == n && r.method == m.name).collect())
            .collect();
        cells.extend(summarize(plan, n, &by_method));
    }
    let report = ExperimentReport {
        schema_version: SCHEMA_VERSION,
        plan: plan.clone(),
        baseline: plan.methods[plan.baseline()].name.clone(),
        cells,
        excluded_reps: failures.len(),
        failures,
    };
    Ok(ExperimentOutput {
        report,
        records,
        timing: Timing {
            total_seconds: started.elapsed().as_secs_f64(),
            workers: workers.max(1),
            per_n,
        },
    })
}

pub fn write_records<W: std::io::Write>(writer: W, records: &[RepRecord]) -> Result<()> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(writer);
    let err = |e: csv::Error| Error::Data(e.into());
    w.write_record([
        "n",
        "rep",
        "method",
        "regret",
        "regret_se",
        "value",
        "optimum",
        "sq_error",
        "degraded",
        "clipped_rows",
    ])
    .map_err(err)?;
    for r in records {
        w.write_record([
            r.n.to_string(),
            r.rep.to_string(),
            r.method.clone(),
            r.regret.to_string(),
            r.regret_se.to_string(),
            r.value.to_string(),
            r.optimum.to_string(),
            r.sq_error.map(|v| v.to_string()).unwrap_or_default(),
            r.degraded.to_string(),
            r.clipped_rows.to_string(),
        ])
        .map_err(err)?;
    }
    w.flush().map_err(|e| Error::Data(e.into()))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_plan() -> ExperimentPlan {
        ExperimentPlan {
            n_grid: vec![100],
            reps: 2,
            mc_size: 10_000,
            bootstrap_resamples: 50,
            esprm: EsprmConfig {
                max_epochs: 20,
                ..Default::default()
            },
            ..Default::default()
        }
    }

    #[test]
    fn smoke_run_produces_all_cells() {
        let out = run_experiment(&small_plan(), 1).unwrap();
        assert_eq!(out.report.cells.len(), 4);
        assert_eq!(out.records.len() + 4 * out.report.excluded_reps, 8);
        let base = out.report.cell("erm", 100).unwrap();
        assert_eq!(base.rmrr, Some(0.0));
        let json = serde_json::to_string(&out.report).unwrap();
        assert!(json.contains("\"schema_version\":1"));
    }

    #[test]
    fn duplicate_baseline_has_zero_rmrr() {
        let plan = ExperimentPlan {
            methods: vec![
                MethodEntry::new("erm", Method::Erm),
                MethodEntry::new("erm2", Method::Erm),
            ],
            ..small_plan()
        };
        let out = run_experiment(&plan, 1).unwrap();
        assert_eq!(out.report.cell("erm2", 100).unwrap().rmrr, Some(0.0));
    }

    #[test]
    fn plan_validation() {
        let mut p = small_plan();
        p.methods = vec![MethodEntry::new("esprm", Method::Esprm)];
        assert!(p.validate().is_err());
        let mut p = small_plan();
        p.n_grid = vec![0];
        assert!(p.validate().is_err());
    }
}
