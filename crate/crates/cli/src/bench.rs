//! `bench`: exercise the optimizer on synthetic objectives.
//!
//! Two read-outs, no circuits or simulators involved:
//! - the volume ratio of a seed-local search box to the full space, which is
//!   what makes warm starts pay off in high dimension;
//! - a paired warm-vs-cold comparison on a narrow-basin objective whose
//!   feasible set is a tiny box: median evaluations until the first feasible
//!   (J <= 1) point, warm-started from a point just outside the basin wall
//!   versus cold-started from a Latin-hypercube design.

use clap::Args;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use ampsizer::exturbo::synthetic::{point_from_coords, unit_ranges, NarrowBasin};
use ampsizer::exturbo::{optimize, volume_ratio, OptimizeConfig};
use ampsizer::workflow::WorkflowError;
use ampsizer::{DesignPoint, EvalRecord, MatchingGroups};

#[derive(Args)]
pub struct BenchArgs {
    /// Dimensionality of the narrow-basin objective.
    #[arg(long, default_value_t = 20)]
    dims: usize,

    /// Number of paired warm/cold runs.
    #[arg(long, default_value_t = 10)]
    pairs: usize,

    /// Evaluation budget per run; censored runs count as the full budget.
    #[arg(long, default_value_t = 400)]
    budget: usize,

    /// Base random seed; pair i runs with seed + i.
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

pub fn run(args: BenchArgs) -> Result<u8, WorkflowError> {
    if args.dims == 0 || args.pairs == 0 || args.budget == 0 {
        return Err(WorkflowError::Config(
            "--dims, --pairs and --budget must all be positive".into(),
        ));
    }

    println!("seed-local box volume ratio at span 0.4:");
    for d in [10, 20, 48] {
        println!("  D = {d:2}: {:.3e}", volume_ratio(0.4, d));
    }
    println!();

    println!(
        "narrow basin, {} dims, budget {} per run:",
        args.dims, args.budget
    );
    let mut warm = Vec::with_capacity(args.pairs);
    let mut cold = Vec::with_capacity(args.pairs);
    for i in 0..args.pairs {
        let (w, c) = paired_run(args.dims, args.budget, args.seed + i as u64)?;
        println!("  pair {i:2}: warm feasible after {w:3} evals, cold after {c:3}");
        warm.push(w);
        cold.push(c);
    }
    let wm = median(&mut warm);
    let cm = median(&mut cold);
    println!(
        "median evaluations to feasibility: warm {wm}, cold {cm} (ratio {:.3})",
        wm as f64 / cm as f64
    );
    Ok(0)
}

/// One warm run and one cold run against the same randomly-placed basin,
/// returning evaluations until the first J <= 1 for each (budget if never).
pub fn paired_run(dims: usize, budget: usize, seed: u64) -> Result<(usize, usize), WorkflowError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xBA51);
    let center: Vec<f64> = (0..dims).map(|_| rng.random_range(0.3..0.7)).collect();
    let basin = NarrowBasin::new(center);
    let objective = |p: &DesignPoint| basin.cost(p);
    let ranges = unit_ranges(dims);
    let groups = MatchingGroups::default();
    let config = OptimizeConfig {
        stage1_budget: budget,
        // Stop as soon as a feasible point appears; this benchmark measures
        // time-to-feasibility, not final quality.
        stage1_target: 1.0,
        stage2_budget: 0,
        seed,
        ..OptimizeConfig::default()
    };

    // The warm seed sits just outside the basin wall (infeasible, J = 1.9)
    // but its local box still covers the basin.
    let coords = basin.adjacent_seed(4, 0.04);
    let point = point_from_coords(&coords);
    let seed_record = EvalRecord {
        iteration: 0,
        phase: "seed".into(),
        worker: None,
        cost: basin.cost(&point),
        point,
        measurements: None,
    };

    let warm = optimize(&objective, std::slice::from_ref(&seed_record), &ranges, &groups, &config)?;
    let cold = optimize(&objective, &[], &ranges, &groups, &config)?;
    Ok((
        evals_to_feasibility(&warm.history, budget),
        evals_to_feasibility(&cold.history, budget),
    ))
}

fn evals_to_feasibility(history: &[EvalRecord], budget: usize) -> usize {
    history
        .iter()
        .position(|r| r.j() <= 1.0)
        .map(|i| i + 1)
        .unwrap_or(budget)
}

fn median(xs: &mut [usize]) -> usize {
    xs.sort_unstable();
    xs[xs.len() / 2]
}
