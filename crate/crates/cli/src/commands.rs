use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::PathBuf;

use acvtune::acv::EstimatorReport;
use acvtune::allocation::AllocationOptions;
use acvtune::bench::{
    best_case_setup, build_variance_grid, run_baseline, sample_stream, scaled_variance, summarize, trial_seed,
    BatchSpec, BestCaseSetup, Quantiles, SolutionType, TrialBatch, VarianceGrid,
};
use acvtune::models::benchmark::make_benchmark_ensemble;
use acvtune::models::{CostLedger, ModelEnsemble};
use acvtune::pilot::write_trace;
use acvtune::seed::{self, stream};
use acvtune::stats::format_float;
use acvtune::tuning::{ego_tune, run_pipeline, write_tuning_trace, PipelineConfig, TuningConfig};
use serde::Serialize;

use crate::config::{Manifest, RunConfig};
use crate::error::CliError;

pub struct Context {
    pub command: &'static str,
    pub config: RunConfig,
    pub output: PathBuf,
}

impl Context {
    fn path(&self, name: &str) -> PathBuf {
        self.output.join(name)
    }

    fn create(&self, name: &str) -> Result<BufWriter<File>, CliError> {
        let path = self.path(name);
        File::create(&path).map(BufWriter::new).map_err(|source| CliError::Output {
            path: path.display().to_string(),
            source,
        })
    }

    fn write_json<T: Serialize>(&self, name: &str, value: &T) -> Result<(), CliError> {
        let mut out = self.create(name)?;
        serde_json::to_writer_pretty(&mut out, value).map_err(acvtune::Error::from)?;
        writeln!(out).and_then(|_| out.flush()).map_err(|source| CliError::Output {
            path: self.path(name).display().to_string(),
            source,
        })
    }

    fn finish<W: Write>(&self, name: &str, mut out: W) -> Result<(), CliError> {
        out.flush().map_err(|source| CliError::Output {
            path: self.path(name).display().to_string(),
            source,
        })
    }

    fn ensemble(&self) -> Result<ModelEnsemble, CliError> {
        Ok(make_benchmark_ensemble(&self.config.benchmark)?)
    }

    fn allocation_options(&self) -> AllocationOptions {
        AllocationOptions {
            seed: seed::derive(self.config.seed, &[stream::ALLOCATION]),
            ..self.config.pipeline.tuning.allocation
        }
    }

    /// Pipeline settings with the hand-selected hyperparameters filled in.
    fn pipeline(&self) -> PipelineConfig {
        let mut p = self.config.pipeline.clone();
        if p.beta.is_none() {
            p.beta = Some(self.config.benchmark.hand_beta());
        }
        p
    }

    fn prepare(&self) -> Result<(), CliError> {
        self.config.validate()?;
        std::fs::create_dir_all(&self.output).map_err(|source| CliError::Output {
            path: self.output.display().to_string(),
            source,
        })?;
        self.write_json(
            "manifest.json",
            &Manifest {
                command: self.command.to_string(),
                version: env!("CARGO_PKG_VERSION").to_string(),
                seed: self.config.seed,
                config: self.config.clone(),
            },
        )
    }
}

#[derive(Serialize)]
struct OnlineSummary {
    rounds: usize,
    terminated: bool,
    exhausted: bool,
    n_pilot: usize,
}

#[derive(Serialize)]
struct TuningSummary {
    beta_star: Vec<Vec<f64>>,
    j_star: f64,
    overhead: f64,
    evaluations: usize,
}

#[derive(Serialize)]
struct EstimateOutput<'a> {
    qoi: &'static str,
    budget: f64,
    seed: u64,
    report: &'a EstimatorReport,
    ledger: &'a CostLedger,
    online: OnlineSummary,
    tuning: Option<TuningSummary>,
}

fn print_report(report: &EstimatorReport, budget: f64) {
    println!("Q~ = {}", report.qtilde);
    println!("predicted variance = {:e}", report.predicted_variance);
    println!(
        "cost: pilot {:.3}, tuning overhead {:.3}, allocation {:.3}, total {:.3} of {budget}",
        report.cost.pilot,
        report.cost.tuning_overhead,
        report.cost.allocation,
        report.cost.total()
    );
    if report.mc_fallback {
        println!("fell back to plain Monte Carlo");
    }
}

pub fn estimate(ctx: &Context) -> Result<(), CliError> {
    ctx.prepare()?;
    let ensemble = ctx.ensemble()?;
    let pipeline = ctx.pipeline();
    let result = run_pipeline(&ensemble, &pipeline, trial_seed(ctx.config.seed, 0))?;
    let tuning = result.tuning.as_ref().map(|t| TuningSummary {
        beta_star: t.beta_star.clone(),
        j_star: t.j_star,
        overhead: t.overhead,
        evaluations: t.dataset.len(),
    });
    ctx.write_json(
        "report.json",
        &EstimateOutput {
            qoi: ctx.config.benchmark.qoi.name(),
            budget: pipeline.tuning.budget,
            seed: ctx.config.seed,
            report: &result.report,
            ledger: &result.ledger,
            online: OnlineSummary {
                rounds: result.online.trace.len(),
                terminated: result.online.terminated,
                exhausted: result.online.exhausted,
                n_pilot: result.online.pilot.len(),
            },
            tuning,
        },
    )?;
    if let Some(t) = &result.tuning {
        let mut out = ctx.create("tuning_trace.csv")?;
        write_tuning_trace(&t.dataset, &mut out)?;
        ctx.finish("tuning_trace.csv", out)?;
    }
    let mut out = ctx.create("pilot_trace.csv")?;
    write_trace(&result.online.trace, &mut out)?;
    ctx.finish("pilot_trace.csv", out)?;
    print_report(&result.report, pipeline.tuning.budget);
    Ok(())
}

#[derive(Serialize)]
struct TuneOutput {
    beta_star: Vec<Vec<f64>>,
    j_star: f64,
    best: usize,
    overhead: f64,
    pilot_cost: f64,
}

pub fn tune(ctx: &Context) -> Result<(), CliError> {
    ctx.prepare()?;
    let ensemble = ctx.ensemble()?;
    let ts = trial_seed(ctx.config.seed, 0);
    let config = TuningConfig {
        allocation: ctx.allocation_options(),
        ..ctx.config.pipeline.tuning.clone()
    };
    let result = ego_tune(&ensemble, &config, sample_stream(ts), ts)?;
    ctx.write_json(
        "tuning.json",
        &TuneOutput {
            beta_star: result.beta_star.clone(),
            j_star: result.j_star,
            best: result.best,
            overhead: result.overhead,
            pilot_cost: result.pilot.cost(),
        },
    )?;
    let mut out = ctx.create("tuning_trace.csv")?;
    write_tuning_trace(&result.dataset, &mut out)?;
    ctx.finish("tuning_trace.csv", out)?;
    println!("beta* = {:?}", result.beta_star);
    println!("J(beta*) = {:e}", result.j_star);
    println!("tuning overhead = {:.3}", result.overhead);
    Ok(())
}

fn grid_at(ctx: &Context, ensemble: &ModelEnsemble, budget: f64) -> Result<VarianceGrid, CliError> {
    let e = &ctx.config.experiment;
    Ok(build_variance_grid(
        ensemble,
        budget,
        &ctx.config.pipeline.tuning.strategy,
        e.grid_points,
        e.n_ref,
        ctx.config.seed,
        &ctx.allocation_options(),
    )?)
}

fn grid_name(budget: f64) -> String {
    format!("grid_{}.csv", format_float(budget))
}

pub fn grid(ctx: &Context) -> Result<(), CliError> {
    ctx.prepare()?;
    let ensemble = ctx.ensemble()?;
    let budget = ctx.config.pipeline.tuning.budget;
    let grid = grid_at(ctx, &ensemble, budget)?;
    let mut out = ctx.create("grid.csv")?;
    grid.write_csv(&mut out)?;
    ctx.finish("grid.csv", out)?;
    ctx.write_json("grid.json", &grid)?;
    let mc = grid.var_q / budget.floor();
    let best = grid.interpolate(&grid.argmin)?;
    let hand = grid.interpolate(&ctx.config.benchmark.hand_beta().concat())?;
    println!("argmin beta = {:?}", grid.argmin);
    println!("variance reduction at argmin = {:.3}", mc / best);
    println!("variance reduction at hand-selected = {:.3}", mc / hand);
    Ok(())
}

/// One row of `summary.csv`.
#[derive(Debug, Clone, Serialize)]
struct SummaryRow {
    solution: &'static str,
    budget: f64,
    n_pilot: Option<usize>,
    n_iter: Option<usize>,
    n_trials: usize,
    mse: f64,
    squared_error: Quantiles,
    overhead_fraction_median: f64,
    total_cost_median: f64,
    /// Median oracle variance of the estimator, with the tuning overhead
    /// folded in for tuned runs.
    oracle_variance_median: Option<f64>,
    variance_reduction: Option<f64>,
    /// Fraction of tuned runs whose hyperparameters beat the hand-selected
    /// ones on the oracle grid.
    improved_fraction: Option<f64>,
}

fn median(values: &[f64]) -> Result<f64, CliError> {
    Ok(Quantiles::of(values)?.median)
}

fn summary_row(
    batch: &TrialBatch,
    q_ref: f64,
    cell: (Option<usize>, Option<usize>),
    grid: Option<&VarianceGrid>,
    hand: &[f64],
) -> Result<SummaryRow, CliError> {
    let s = summarize(batch, q_ref)?;
    let mut oracle = None;
    let mut improved = None;
    if let Some(g) = grid {
        let mc = g.var_q / batch.budget.floor();
        let values: Vec<f64> = match batch.kind {
            SolutionType::MonteCarlo => vec![mc],
            SolutionType::HandSelected => vec![g.interpolate(hand)?],
            SolutionType::BestCase => batch
                .trials
                .iter()
                .map(|t| g.interpolate(&t.beta))
                .collect::<Result<_, _>>()?,
            SolutionType::Tuned => {
                let hand_v = g.interpolate(hand)?;
                let mut better = 0;
                let mut scaled = Vec::with_capacity(batch.trials.len());
                for t in &batch.trials {
                    let v = g.interpolate(&t.beta)?;
                    better += usize::from(v < hand_v);
                    scaled.push(scaled_variance(v, t.tuning_overhead, batch.budget)?);
                }
                improved = Some(better as f64 / batch.trials.len() as f64);
                scaled
            }
        };
        oracle = Some((median(&values)?, mc));
    }
    Ok(SummaryRow {
        solution: batch.kind.name(),
        budget: batch.budget,
        n_pilot: cell.0,
        n_iter: cell.1,
        n_trials: s.n_trials,
        mse: s.mse,
        squared_error: s.squared_error,
        overhead_fraction_median: s.overhead_fraction.median,
        total_cost_median: s.total_cost.median,
        oracle_variance_median: oracle.map(|o| o.0),
        variance_reduction: oracle.map(|(v, mc)| mc / v),
        improved_fraction: improved,
    })
}

fn write_summary(ctx: &Context, rows: &[SummaryRow]) -> Result<(), CliError> {
    let opt = |v: Option<f64>| v.map(format_float).unwrap_or_default();
    let opt_n = |v: Option<usize>| v.map(|n| n.to_string()).unwrap_or_default();
    let out = ctx.create("summary.csv")?;
    let mut writer = csv::Writer::from_writer(out);
    let result: Result<(), csv::Error> = (|| {
        writer.write_record([
            "solution",
            "budget",
            "n_pilot",
            "n_iter",
            "n_trials",
            "mse",
            "se_min",
            "se_q1",
            "se_median",
            "se_q3",
            "se_max",
            "overhead_fraction_median",
            "total_cost_median",
            "oracle_variance_median",
            "variance_reduction",
            "improved_fraction",
        ])?;
        for r in rows {
            let q = &r.squared_error;
            writer.write_record([
                r.solution.to_string(),
                format_float(r.budget),
                opt_n(r.n_pilot),
                opt_n(r.n_iter),
                r.n_trials.to_string(),
                format_float(r.mse),
                format_float(q.min),
                format_float(q.q1),
                format_float(q.median),
                format_float(q.q3),
                format_float(q.max),
                format_float(r.overhead_fraction_median),
                format_float(r.total_cost_median),
                opt(r.oracle_variance_median),
                opt(r.variance_reduction),
                opt(r.improved_fraction),
            ])?;
        }
        writer.flush()?;
        Ok(())
    })();
    result.map_err(|e| acvtune::Error::from(e).into())
}

fn append_trials(
    out: &mut Vec<u8>,
    batch: &TrialBatch,
    cell: (Option<usize>, Option<usize>),
    header: bool,
) -> Result<(), CliError> {
    let mut buf = Vec::new();
    batch.write_csv(&mut buf)?;
    let text = String::from_utf8(buf).expect("csv output is utf-8");
    let show = |v: Option<usize>| v.map_or(String::new(), |n| n.to_string());
    for (k, line) in text.lines().enumerate() {
        if k == 0 && !header {
            continue;
        }
        let prefix = if k == 0 {
            "n_pilot,n_iter".to_string()
        } else {
            format!("{},{}", show(cell.0), show(cell.1))
        };
        out.extend_from_slice(format!("{prefix},{line}\n").as_bytes());
    }
    Ok(())
}

/// Runs every requested solution type over the cartesian product of
/// budgets, pilot sizes and iteration counts.
fn run_cells(ctx: &Context, budgets: &[f64], n_pilots: &[usize], n_iters: &[usize]) -> Result<(), CliError> {
    let e = &ctx.config.experiment;
    let ensemble = ctx.ensemble()?;
    let q_ref = ctx.config.q_ref()?;
    let hand_beta = ctx.config.benchmark.hand_beta();
    let hand_flat = hand_beta.concat();
    let wants = |kind| e.solutions.contains(&kind);
    let needs_grid =
        wants(SolutionType::Tuned) || (wants(SolutionType::BestCase) && e.oracle_beta.is_none());
    let options = ctx.allocation_options();
    let mut rows = Vec::new();
    let mut trials = Vec::new();
    let mut batches = 0usize;
    let mut run = |kind: SolutionType,
                   pipeline: &PipelineConfig,
                   best_case: Option<&BestCaseSetup>,
                   cell: (Option<usize>, Option<usize>),
                   grid: Option<&VarianceGrid>|
     -> Result<(), CliError> {
        let spec = BatchSpec {
            kind,
            pipeline,
            hand_beta: &hand_beta,
            best_case,
            n_trials: e.n_trials,
            base_seed: ctx.config.seed,
        };
        let batch = run_baseline(&ensemble, &spec)?;
        append_trials(&mut trials, &batch, cell, batches == 0)?;
        batches += 1;
        let row = summary_row(&batch, q_ref, cell, grid, &hand_flat)?;
        println!(
            "{:<14} budget {:>8} n_pilot {:>4} n_iter {:>3}: mse {:.4e}",
            row.solution,
            format_float(row.budget),
            cell.0.map_or("-".into(), |n| n.to_string()),
            cell.1.map_or("-".into(), |n| n.to_string()),
            row.mse
        );
        rows.push(row);
        Ok(())
    };
    for &budget in budgets {
        let grid = if needs_grid {
            let g = grid_at(ctx, &ensemble, budget)?;
            let name = grid_name(budget);
            let mut out = ctx.create(&name)?;
            g.write_csv(&mut out)?;
            ctx.finish(&name, out)?;
            Some(g)
        } else {
            None
        };
        let base = PipelineConfig {
            tuning: TuningConfig {
                budget,
                ..ctx.config.pipeline.tuning.clone()
            },
            ..ctx.pipeline()
        };
        if wants(SolutionType::MonteCarlo) {
            run(SolutionType::MonteCarlo, &base, None, (None, None), grid.as_ref())?;
        }
        if wants(SolutionType::BestCase) {
            let flat = match (&e.oracle_beta, &grid) {
                (Some(b), _) => b.clone(),
                (None, Some(g)) => g.argmin.clone(),
                (None, None) => unreachable!("grid is built when no oracle is configured"),
            };
            let beta = ensemble.unflatten_beta(&flat)?;
            let setup = best_case_setup(
                &ensemble,
                &beta,
                budget,
                &base.tuning.strategy,
                e.n_ref,
                ctx.config.seed,
                &options,
            )?;
            run(SolutionType::BestCase, &base, Some(&setup), (None, None), grid.as_ref())?;
        }
        for &n_pilot in n_pilots {
            let with_pilot = PipelineConfig {
                tuning: TuningConfig {
                    n_pilot,
                    ..base.tuning.clone()
                },
                ..base.clone()
            };
            if wants(SolutionType::HandSelected) {
                run(
                    SolutionType::HandSelected,
                    &with_pilot,
                    None,
                    (Some(n_pilot), None),
                    grid.as_ref(),
                )?;
            }
            if wants(SolutionType::Tuned) {
                for &n_iter in n_iters {
                    let tuned = PipelineConfig {
                        tuning: TuningConfig {
                            n_iter,
                            ..with_pilot.tuning.clone()
                        },
                        ..with_pilot.clone()
                    };
                    run(
                        SolutionType::Tuned,
                        &tuned,
                        None,
                        (Some(n_pilot), Some(n_iter)),
                        grid.as_ref(),
                    )?;
                }
            }
        }
    }
    let mut out = ctx.create("trials.csv")?;
    out.write_all(&trials).map_err(|source| CliError::Output {
        path: ctx.path("trials.csv").display().to_string(),
        source,
    })?;
    ctx.finish("trials.csv", out)?;
    write_summary(ctx, &rows)
}

pub fn baseline(ctx: &Context) -> Result<(), CliError> {
    ctx.prepare()?;
    let t = &ctx.config.pipeline.tuning;
    run_cells(ctx, &[t.budget], &[t.n_pilot], &[t.n_iter])
}

pub fn sweep(ctx: &Context) -> Result<(), CliError> {
    ctx.prepare()?;
    let e = &ctx.config.experiment;
    run_cells(ctx, &e.budgets, &e.n_pilots, &e.n_iters)
}

