//! Monte Carlo harness: RMSE, empirical level and empirical power of the
//! PMφE-based Wald-type test over a grid of λ, clusters per stratum and
//! clean/contaminated data.
//!
//! Every replicate draws its datasets from substreams keyed by
//! (seed, n_h, replicate, null/alternative), and all λ are fitted to the same
//! draws. The contaminated cells relabel those same draws. Aggregation is an
//! ordered reduction, so the table does not depend on the thread count.

use std::fs::File;
use std::io::Write;
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::divergence::CressieReadLambda;
use crate::error::{Error, Result};
use crate::estimator::{fit, FitConfig, Init};
use crate::inference::{wald_from_parts, LinearHypothesis};
use crate::model::BetaMatrix;
use crate::par::{map_indexed, Execution};
use crate::samplers::{
    generate_dataset, substream, ClusterSizes, ContaminationSpec, Design, Family,
    OverdispersionSpec,
};

/// Single-coefficient null hypothesis β_{rj} = value, with r the 1-based
/// category and j the covariate index (0 is the intercept).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoefficientTest {
    pub category: usize,
    pub covariate: usize,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentPlan {
    pub lambdas: Vec<f64>,
    pub nh_grid: Vec<usize>,
    pub replicates: usize,
    pub family: Family,
    pub rho2: f64,
    pub contamination: f64,
    /// Rows β_r of the data-generating coefficients under H₀.
    pub beta_null: Vec<Vec<f64>>,
    /// Data-generating coefficients for the power cells.
    pub beta_alt: Vec<Vec<f64>>,
    pub test: CoefficientTest,
    pub strata: usize,
    pub cluster_size: u64,
    pub alpha: f64,
    pub seed: u64,
}

impl Default for ExperimentPlan {
    fn default() -> Self {
        Self {
            lambdas: vec![-0.5, -0.3, 0.0, 2.0 / 3.0],
            nh_grid: vec![10, 20, 30, 40, 50, 60],
            replicates: 1000,
            family: Family::MInflated,
            rho2: 0.5,
            contamination: 0.1,
            beta_null: vec![vec![0.0, -0.9, 0.1], vec![0.6, -1.2, 0.8]],
            beta_alt: vec![vec![0.0, -1.5, 0.1], vec![0.6, -1.2, 0.8]],
            test: CoefficientTest {
                category: 1,
                covariate: 1,
                value: -0.9,
            },
            strata: 4,
            cluster_size: 20,
            alpha: 0.05,
            seed: 20240601,
        }
    }
}

impl ExperimentPlan {
    pub fn validate(&self) -> Result<()> {
        if self.lambdas.is_empty() || self.nh_grid.is_empty() {
            return Err(Error::Domain(
                "lambda and n_h grids must be nonempty".into(),
            ));
        }
        for &l in &self.lambdas {
            CressieReadLambda::new(l)?;
        }
        if self.nh_grid.contains(&0) {
            return Err(Error::Domain("n_h values must be positive".into()));
        }
        if self.replicates == 0 {
            return Err(Error::Domain("replicates must be at least 1".into()));
        }
        if !(0.0..1.0).contains(&self.rho2) {
            return Err(Error::Domain(format!(
                "rho2 must lie in [0, 1), got {}",
                self.rho2
            )));
        }
        if !(0.0..=1.0).contains(&self.contamination) {
            return Err(Error::Domain("contamination must lie in [0, 1]".into()));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::Domain("alpha must lie in (0, 1)".into()));
        }
        if self.strata == 0 || self.cluster_size == 0 {
            return Err(Error::Domain(
                "strata and cluster_size must be positive".into(),
            ));
        }
        let null = self.null_beta()?;
        let alt = self.alt_beta()?;
        if null.categories() != alt.categories() || null.covariates() != alt.covariates() {
            return Err(Error::Dimension(
                "beta_null and beta_alt shapes differ".into(),
            ));
        }
        self.hypothesis()?;
        Ok(())
    }

    pub fn null_beta(&self) -> Result<BetaMatrix> {
        BetaMatrix::from_rows(&self.beta_null)
    }

    pub fn alt_beta(&self) -> Result<BetaMatrix> {
        BetaMatrix::from_rows(&self.beta_alt)
    }

    pub fn hypothesis(&self) -> Result<LinearHypothesis> {
        let beta = self.null_beta()?;
        let t = &self.test;
        if t.category == 0 || t.category > beta.categories() || t.covariate >= beta.covariates() {
            return Err(Error::Dimension(format!(
                "test coefficient ({}, {}) outside the {}x{} coefficient matrix",
                t.category,
                t.covariate,
                beta.categories(),
                beta.covariates()
            )));
        }
        LinearHypothesis::coordinate(
            beta.len(),
            (t.category - 1) * beta.covariates() + t.covariate,
            t.value,
        )
    }

    fn design(&self, nh: usize, beta0: BetaMatrix) -> Design {
        Design {
            strata: self.strata,
            clusters_per_stratum: nh,
            sizes: ClusterSizes::Fixed(self.cluster_size),
            beta0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellResult {
    pub lambda: f64,
    pub nh: usize,
    pub contaminated: bool,
    pub replicates: usize,
    /// √(mean ‖β̂ − β⁰‖²) over converged null fits.
    pub rmse: f64,
    /// Rejection rate under the null-generating coefficients.
    pub level: f64,
    pub level_se: f64,
    /// Rejection rate under the alternative-generating coefficients.
    pub power: f64,
    pub power_se: f64,
    pub nonconverged_null: usize,
    pub nonconverged_alt: usize,
    /// Wald statistics of the converged null fits, in replicate order.
    #[serde(skip)]
    pub null_statistics: Vec<f64>,
    #[serde(skip)]
    pub wall_time: f64,
}

impl CellResult {
    pub fn nonconverged(&self) -> usize {
        self.nonconverged_null + self.nonconverged_alt
    }
}

/// Outcome of one fit-and-test: squared error and Wald statistic.
#[derive(Debug, Clone, Copy)]
struct Outcome {
    sq_error: f64,
    statistic: f64,
    reject: bool,
}

fn fit_and_test(
    data: &crate::survey::SurveyDataset,
    lambda: CressieReadLambda,
    init: Init,
    truth: &BetaMatrix,
    hyp: &LinearHypothesis,
    alpha: f64,
) -> Option<(Outcome, Vec<f64>)> {
    let result = fit(data, &FitConfig::new(lambda).with_init(init)).ok()?;
    if !result.converged {
        return None;
    }
    let report = wald_from_parts(
        result.beta_hat.flat(),
        &result.v_hat,
        result.n_clusters,
        hyp,
        &[alpha],
    )
    .ok()?;
    let sq_error = result
        .beta_hat
        .flat()
        .iter()
        .zip(truth.flat())
        .map(|(a, b)| (a - b).powi(2))
        .sum();
    Some((
        Outcome {
            sq_error,
            statistic: report.statistic,
            reject: report.reject_at[0].reject,
        },
        result.beta_hat.into_flat(),
    ))
}

/// Fits every λ to one dataset; the λ=0 solution warm-starts the others.
fn fit_all(
    data: &crate::survey::SurveyDataset,
    lambdas: &[CressieReadLambda],
    truth: &BetaMatrix,
    hyp: &LinearHypothesis,
    alpha: f64,
) -> Vec<Option<Outcome>> {
    let pmle = fit_and_test(
        data,
        CressieReadLambda::KULLBACK_LEIBLER,
        Init::Zeros,
        truth,
        hyp,
        alpha,
    );
    lambdas
        .iter()
        .map(|&l| {
            if l.is_kl() {
                return pmle.as_ref().map(|(o, _)| *o);
            }
            let init = match &pmle {
                Some((_, b)) => Init::User(b.clone()),
                None => Init::Zeros,
            };
            fit_and_test(data, l, init, truth, hyp, alpha).map(|(o, _)| o)
        })
        .collect()
}

const NULL_KEY: u64 = 0;
const ALT_KEY: u64 = 1;

fn replicate_seed(seed: u64, nh: usize, replicate: usize, kind: u64) -> u64 {
    use rand::RngCore;
    substream(seed, &[nh as u64, replicate as u64, kind]).next_u64()
}

struct ReplicateOutcomes {
    null: Vec<Option<Outcome>>,
    alt: Vec<Option<Outcome>>,
}

fn binomial_se(p: f64, n: usize) -> f64 {
    if n == 0 {
        f64::NAN
    } else {
        (p * (1.0 - p) / n as f64).sqrt()
    }
}

fn aggregate(
    lambda: f64,
    nh: usize,
    contaminated: bool,
    li: usize,
    reps: &[ReplicateOutcomes],
    wall_time: f64,
) -> CellResult {
    let null: Vec<Outcome> = reps.iter().filter_map(|r| r.null[li]).collect();
    let alt: Vec<Outcome> = reps.iter().filter_map(|r| r.alt[li]).collect();
    let mean = |v: &[Outcome], f: fn(&Outcome) -> f64| {
        if v.is_empty() {
            f64::NAN
        } else {
            v.iter().map(f).sum::<f64>() / v.len() as f64
        }
    };
    let level = mean(&null, |o| f64::from(u8::from(o.reject)));
    let power = mean(&alt, |o| f64::from(u8::from(o.reject)));
    CellResult {
        lambda,
        nh,
        contaminated,
        replicates: reps.len(),
        rmse: mean(&null, |o| o.sq_error).sqrt(),
        level,
        level_se: binomial_se(level, null.len()),
        power,
        power_se: binomial_se(power, alt.len()),
        nonconverged_null: reps.len() - null.len(),
        nonconverged_alt: reps.len() - alt.len(),
        null_statistics: null.iter().map(|o| o.statistic).collect(),
        wall_time,
    }
}

/// Runs every (λ, n_h, clean/contaminated) cell. `on_cell` sees each cell as
/// soon as it is complete; the returned table is sorted by
/// (contaminated, λ, n_h).
pub fn run_experiment(
    plan: &ExperimentPlan,
    exec: Execution,
    mut on_cell: impl FnMut(&CellResult),
) -> Result<Vec<CellResult>> {
    plan.validate()?;
    let lambdas: Vec<CressieReadLambda> = plan
        .lambdas
        .iter()
        .map(|&l| CressieReadLambda::new(l))
        .collect::<Result<_>>()?;
    let null_beta = plan.null_beta()?;
    let alt_beta = plan.alt_beta()?;
    let hyp = plan.hypothesis()?;
    let ncat = null_beta.categories() + 1;
    let mut table = Vec::with_capacity(lambdas.len() * plan.nh_grid.len() * 2);
    for &nh in &plan.nh_grid {
        for contaminated in [false, true] {
            let cont = if contaminated {
                ContaminationSpec::cyclic(plan.contamination, ncat)?
            } else {
                ContaminationSpec::none(ncat)
            };
            let start = Instant::now();
            let reps = map_indexed(exec, plan.replicates, |r| -> Result<ReplicateOutcomes> {
                let draw = |beta: &BetaMatrix, kind: u64| {
                    let spec = OverdispersionSpec::from_rho2(
                        plan.family,
                        plan.rho2,
                        replicate_seed(plan.seed, nh, r, kind),
                    )?;
                    generate_dataset(
                        &plan.design(nh, beta.clone()),
                        &spec,
                        &cont,
                        Execution::Sequential,
                    )
                };
                let null_data = draw(&null_beta, NULL_KEY)?;
                let alt_data = draw(&alt_beta, ALT_KEY)?;
                Ok(ReplicateOutcomes {
                    null: fit_all(&null_data, &lambdas, &null_beta, &hyp, plan.alpha),
                    alt: fit_all(&alt_data, &lambdas, &alt_beta, &hyp, plan.alpha),
                })
            })
            .into_iter()
            .collect::<Result<Vec<_>>>()?;
            let elapsed = start.elapsed().as_secs_f64();
            for (li, l) in lambdas.iter().enumerate() {
                let cell = aggregate(l.value(), nh, contaminated, li, &reps, elapsed);
                on_cell(&cell);
                table.push(cell);
            }
        }
    }
    table.sort_by(|a, b| {
        (a.contaminated, a.lambda, a.nh)
            .partial_cmp(&(b.contaminated, b.lambda, b.nh))
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    Ok(table)
}

pub const CELLS_FILE: &str = "cells.csv";
pub const PLOT_FILE: &str = "plot_data.csv";
pub const PLOT_COLUMNS: [&str; 6] = [
    "lambda",
    "nh",
    "contaminated",
    "metric",
    "value",
    "nonconverged",
];
pub const CELL_COLUMNS: [&str; 11] = [
    "lambda",
    "nh",
    "contaminated",
    "replicates",
    "rmse",
    "level",
    "level_se",
    "power",
    "power_se",
    "nonconverged_null",
    "nonconverged_alt",
];

/// One-row-per-cell table.
pub fn write_cells<W: Write>(results: &[CellResult], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(CELL_COLUMNS).map_err(csv_err)?;
    for c in results {
        w.write_record([
            c.lambda.to_string(),
            c.nh.to_string(),
            c.contaminated.to_string(),
            c.replicates.to_string(),
            c.rmse.to_string(),
            c.level.to_string(),
            c.level_se.to_string(),
            c.power.to_string(),
            c.power_se.to_string(),
            c.nonconverged_null.to_string(),
            c.nonconverged_alt.to_string(),
        ])
        .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

/// Long-format plot data: one row per (cell, metric).
pub fn write_plot_data<W: Write>(results: &[CellResult], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(PLOT_COLUMNS).map_err(csv_err)?;
    for c in results {
        for (metric, value, nonconv) in [
            ("rmse", c.rmse, c.nonconverged_null),
            ("level", c.level, c.nonconverged_null),
            ("power", c.power, c.nonconverged_alt),
        ] {
            w.write_record([
                c.lambda.to_string(),
                c.nh.to_string(),
                c.contaminated.to_string(),
                metric.to_string(),
                value.to_string(),
                nonconv.to_string(),
            ])
            .map_err(csv_err)?;
        }
    }
    w.flush()?;
    Ok(())
}

fn csv_err(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e))
}

/// Writes `cells.csv` and `plot_data.csv` into `dir`, creating it if needed.
pub fn emit_report(results: &[CellResult], dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir)?;
    write_cells(results, File::create(dir.join(CELLS_FILE))?)?;
    write_plot_data(results, File::create(dir.join(PLOT_FILE))?)?;
    Ok(())
}
