//! Warm-started trust-region Bayesian optimization.
//!
//! The optimizer runs a small number of independent workers. Each worker owns
//! a trust region centered on one of the supplied seed designs, fits a
//! Gaussian process to its own evaluations plus the shared seed set, proposes
//! batches by Thompson sampling over a pool drawn inside the
//! lengthscale-weighted trust-region box, and grows or shrinks the region
//! based on whether batches improve on its incumbent. A collapsed region
//! restarts at the best seed the worker has not used yet, keeping every
//! evaluation inside some seed's local bounds.
//!
//! All inputs are normalized to the unit cube by their global ranges and
//! matched parameter groups are collapsed to a single coordinate, so the
//! fitted lengthscales are directly comparable across parameters.

pub mod gp;
pub mod sampling;
pub mod sensitivity;
pub mod synthetic;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::cost::CostBreakdown;
use crate::design::DesignPoint;
use crate::netlist::{MatchingGroups, ParamRange, ParamRanges};
use crate::record::EvalRecord;

pub use gp::{fit_gp, log_marginal_likelihood, FitConfig, GpError, GpModel, Hyperparams};
pub use sampling::{latin_hypercube, FeatureMap, ThompsonSampler, DEFAULT_FEATURES};
pub use sensitivity::{
    classify, sensitivity, ParamClass, SensitivityConfig, SensitivityEntry, SensitivityReport,
};

#[derive(Debug, Error)]
pub enum ExturboError {
    #[error(transparent)]
    Gp(#[from] GpError),
    #[error("no free parameters to optimize")]
    NoFreeParameters,
    #[error("matching group '{group}' references unknown parameter '{member}'")]
    UnknownGroupMember { group: String, member: String },
    #[error("matching group '{group}' includes fixed parameter '{member}'")]
    FixedGroupMember { group: String, member: String },
    #[error("parameter '{member}' appears in more than one matching group")]
    OverlappingGroups { member: String },
    #[error(
        "matched parameters '{a}' and '{b}' have different ranges; \
         matched groups must share one range"
    )]
    MismatchedGroupRanges { a: String, b: String },
    #[error("point is missing parameter '{0}'")]
    MissingParameter(String),
    #[error("no seeds and no evaluation budget; nothing to return")]
    NothingToDo,
    #[error("history is empty")]
    EmptyHistory,
}

/// Fraction of the global volume covered by a local box with per-dimension
/// span ratio `r` in `d` dimensions.
pub fn volume_ratio(r: f64, d: u32) -> f64 {
    r.powi(d as i32)
}

/// The seed with the lowest cost; ties go to the earliest entry.
pub fn select_center(seeds: &[EvalRecord]) -> Option<&EvalRecord> {
    let mut best: Option<&EvalRecord> = None;
    for s in seeds {
        if best.is_none_or(|b| s.j() < b.j()) {
            best = Some(s);
        }
    }
    best
}

/// Per-parameter interval `seed ± span_ratio·span/2`, intersected with the
/// global range. Fixed parameters pass through unchanged.
pub fn local_bounds(
    seed: &DesignPoint,
    span_ratio: f64,
    ranges: &ParamRanges,
) -> Result<ParamRanges, ExturboError> {
    let mut out = ParamRanges::default();
    for (name, range) in &ranges.0 {
        if range.is_fixed() {
            out.0.insert(name.clone(), range.clone());
            continue;
        }
        let center = seed
            .get(name)
            .ok_or_else(|| ExturboError::MissingParameter(name.clone()))?
            .clamp(range.min, range.max);
        let half = span_ratio * range.width() / 2.0;
        let mut local = ParamRange::new(
            (center - half).max(range.min),
            (center + half).min(range.max),
            "",
        );
        local.unit = range.unit.clone();
        out.0.insert(name.clone(), local);
    }
    Ok(out)
}

/// One optimized coordinate: a free parameter, or a matched group of
/// parameters that move together.
#[derive(Debug, Clone)]
pub struct Dim {
    /// Leader name (lexicographically first member for groups).
    pub name: String,
    /// Every parameter this coordinate drives, leader included.
    pub members: Vec<String>,
    pub lo: f64,
    pub hi: f64,
}

/// Normalized view of the search space: free parameters mapped to [0, 1],
/// matched groups collapsed to one coordinate each, fixed parameters held.
#[derive(Debug, Clone)]
pub struct Space {
    dims: Vec<Dim>,
    fixed: Vec<(String, f64)>,
}

impl Space {
    pub fn new(ranges: &ParamRanges, groups: &MatchingGroups) -> Result<Self, ExturboError> {
        let mut member_group: std::collections::BTreeMap<&str, usize> =
            std::collections::BTreeMap::new();
        for (gi, g) in groups.0.iter().enumerate() {
            for m in &g.members {
                let range = ranges.get(m).ok_or_else(|| ExturboError::UnknownGroupMember {
                    group: g.name.clone(),
                    member: m.clone(),
                })?;
                if range.is_fixed() {
                    return Err(ExturboError::FixedGroupMember {
                        group: g.name.clone(),
                        member: m.clone(),
                    });
                }
                if member_group.insert(m, gi).is_some() {
                    return Err(ExturboError::OverlappingGroups { member: m.clone() });
                }
            }
            // Matched members must share a range, otherwise clamping could
            // silently split a tied group.
            let mut sorted = g.members.clone();
            sorted.sort();
            let lead = ranges.get(&sorted[0]).unwrap();
            for m in &sorted[1..] {
                let r = ranges.get(m).unwrap();
                if (r.min - lead.min).abs() > 1e-12 || (r.max - lead.max).abs() > 1e-12 {
                    return Err(ExturboError::MismatchedGroupRanges {
                        a: sorted[0].clone(),
                        b: m.clone(),
                    });
                }
            }
        }

        let mut dims = Vec::new();
        let mut fixed = Vec::new();
        let mut seen_groups = std::collections::BTreeSet::new();
        for (name, range) in &ranges.0 {
            if range.is_fixed() {
                fixed.push((name.clone(), range.min));
                continue;
            }
            match member_group.get(name.as_str()) {
                Some(gi) => {
                    if seen_groups.insert(*gi) {
                        let mut members = groups.0[*gi].members.clone();
                        members.sort();
                        dims.push(Dim {
                            name: members[0].clone(),
                            members,
                            lo: range.min,
                            hi: range.max,
                        });
                    }
                }
                None => dims.push(Dim {
                    name: name.clone(),
                    members: vec![name.clone()],
                    lo: range.min,
                    hi: range.max,
                }),
            }
        }
        dims.sort_by(|a, b| a.name.cmp(&b.name));
        if dims.is_empty() {
            return Err(ExturboError::NoFreeParameters);
        }
        Ok(Space { dims, fixed })
    }

    pub fn len(&self) -> usize {
        self.dims.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dims.is_empty()
    }

    pub fn dims(&self) -> &[Dim] {
        &self.dims
    }

    /// Leader values mapped to [0, 1] (clamped into range first).
    pub fn normalize(&self, p: &DesignPoint) -> Result<Vec<f64>, ExturboError> {
        self.dims
            .iter()
            .map(|d| {
                let v = p
                    .get(&d.name)
                    .ok_or_else(|| ExturboError::MissingParameter(d.name.clone()))?;
                Ok((v.clamp(d.lo, d.hi) - d.lo) / (d.hi - d.lo))
            })
            .collect()
    }

    /// Full design point: every group member gets its leader's value and
    /// fixed parameters are filled in.
    pub fn denormalize(&self, v: &[f64]) -> DesignPoint {
        assert_eq!(v.len(), self.dims.len(), "coordinate count mismatch");
        let mut p = DesignPoint::new();
        for (dim, x) in self.dims.iter().zip(v) {
            let value = dim.lo + x.clamp(0.0, 1.0) * (dim.hi - dim.lo);
            for m in &dim.members {
                p.set(m, value);
            }
        }
        for (name, value) in &self.fixed {
            p.set(name, *value);
        }
        p
    }

    /// Normalized per-dimension bounds corresponding to a local box.
    pub fn normalized_bounds(&self, local: &ParamRanges) -> Result<Vec<(f64, f64)>, ExturboError> {
        self.dims
            .iter()
            .map(|d| {
                let r = local
                    .get(&d.name)
                    .ok_or_else(|| ExturboError::MissingParameter(d.name.clone()))?;
                let lo = ((r.min - d.lo) / (d.hi - d.lo)).clamp(0.0, 1.0);
                let hi = ((r.max - d.lo) / (d.hi - d.lo)).clamp(0.0, 1.0);
                Ok((lo, hi.max(lo)))
            })
            .collect()
    }
}

/// Black-box objective over design points. Failures are expected to be folded
/// into the returned cost (sanity penalty), not raised; the optimizer treats
/// every returned breakdown as a valid observation.
pub trait Objective: Sync {
    fn evaluate(&self, point: &DesignPoint) -> CostBreakdown;
}

impl<F> Objective for F
where
    F: Fn(&DesignPoint) -> CostBreakdown + Sync,
{
    fn evaluate(&self, point: &DesignPoint) -> CostBreakdown {
        self(point)
    }
}

#[derive(Debug, Clone)]
pub struct TrParams {
    pub l_init: f64,
    pub l_min: f64,
    pub l_max: f64,
    pub tau_succ: usize,
    /// None = max(3, ceil(D / batch)), resolved at run time.
    pub tau_fail: Option<usize>,
}

impl Default for TrParams {
    fn default() -> Self {
        TrParams {
            l_init: 0.8,
            l_min: 0.5f64.powi(7),
            l_max: 1.6,
            tau_succ: 3,
            tau_fail: None,
        }
    }
}

impl TrParams {
    pub fn resolved_tau_fail(&self, dims: usize, batch: usize) -> usize {
        self.tau_fail
            .unwrap_or_else(|| 3.max(dims.div_ceil(batch.max(1))))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrustRegion {
    /// Normalized center (the worker's incumbent).
    pub center: Vec<f64>,
    /// Base side length in normalized units.
    pub length: f64,
    pub successes: usize,
    pub failures: usize,
}

impl TrustRegion {
    pub fn new(center: Vec<f64>, l_init: f64) -> Self {
        TrustRegion {
            center,
            length: l_init,
            successes: 0,
            failures: 0,
        }
    }

    /// Book one batch outcome. Returns true when the region has collapsed
    /// below its minimum length and must restart.
    pub fn update(&mut self, improved: bool, params: &TrParams, tau_fail: usize) -> bool {
        if improved {
            self.successes += 1;
            self.failures = 0;
            if self.successes >= params.tau_succ {
                self.length = (2.0 * self.length).min(params.l_max);
                self.successes = 0;
            }
        } else {
            self.failures += 1;
            self.successes = 0;
            if self.failures >= tau_fail {
                self.length /= 2.0;
                self.failures = 0;
            }
        }
        self.length < params.l_min
    }
}

/// Candidate box for one trust region: sides weighted by the model's
/// lengthscales (normalized to geometric mean 1), clipped to the worker's
/// bounds.
fn tr_box(tr: &TrustRegion, ell: &[f64], bounds: &[(f64, f64)]) -> Vec<(f64, f64)> {
    let d = bounds.len();
    let log_mean = ell.iter().map(|l| l.ln()).sum::<f64>() / d as f64;
    let geo_mean = log_mean.exp();
    (0..d)
        .map(|i| {
            let side = tr.length * (ell[i] / geo_mean);
            let c = tr.center[i].clamp(bounds[i].0, bounds[i].1);
            let lo = (c - side / 2.0).max(bounds[i].0);
            let hi = (c + side / 2.0).min(bounds[i].1);
            (lo, hi.max(lo))
        })
        .collect()
}

/// Pool of perturbed copies of the center: each coordinate is resampled
/// uniformly inside the box with probability min(20/D, 1), and at least one
/// coordinate always moves.
fn candidate_pool<R: Rng>(
    tr: &TrustRegion,
    box_: &[(f64, f64)],
    bounds: &[(f64, f64)],
    pool_size: usize,
    rng: &mut R,
) -> Vec<Vec<f64>> {
    let d = box_.len();
    let perturb_prob = (20.0 / d as f64).min(1.0);
    let mut pool = Vec::with_capacity(pool_size);
    for _ in 0..pool_size {
        let mut x: Vec<f64> = (0..d)
            .map(|i| tr.center[i].clamp(bounds[i].0, bounds[i].1))
            .collect();
        let mut any = false;
        for i in 0..d {
            if rng.random_range(0.0..1.0) < perturb_prob {
                x[i] = sample_interval(box_[i], rng);
                any = true;
            }
        }
        if !any {
            let i = rng.random_range(0..d);
            x[i] = sample_interval(box_[i], rng);
        }
        pool.push(x);
    }
    pool
}

fn sample_interval<R: Rng>((lo, hi): (f64, f64), rng: &mut R) -> f64 {
    if hi > lo {
        rng.random_range(lo..hi)
    } else {
        lo
    }
}

/// Thompson-sampling batch proposal: draw one posterior function per slot and
/// take its pool argmin, skipping pool points already chosen this batch.
pub fn propose<R: Rng>(
    tr: &TrustRegion,
    model: &GpModel,
    bounds: &[(f64, f64)],
    batch: usize,
    pool_size: usize,
    n_features: usize,
    rng: &mut R,
) -> Result<Vec<Vec<f64>>, ExturboError> {
    let box_ = tr_box(tr, model.lengthscales(), bounds);
    let pool = candidate_pool(tr, &box_, bounds, pool_size, rng);
    let sampler = ThompsonSampler::from_model(model, n_features, rng)?;
    let phi = sampler.feature_map().features(&pool);

    let mut chosen: Vec<usize> = Vec::with_capacity(batch);
    for _ in 0..batch {
        let theta = sampler.draw_weights(rng);
        let scores = sampler.scores(&phi, &theta);
        let mut order: Vec<usize> = (0..pool.len()).collect();
        order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]).then(a.cmp(&b)));
        let pick = order
            .into_iter()
            .find(|i| !chosen.contains(i))
            .expect("pool larger than batch");
        chosen.push(pick);
    }
    Ok(chosen.into_iter().map(|i| pool[i].clone()).collect())
}

#[derive(Debug, Clone)]
pub struct OptimizeConfig {
    pub workers: usize,
    pub batch: usize,
    /// Stage 1: drive cost down to the target.
    pub stage1_budget: usize,
    pub stage1_target: f64,
    /// Stage 2: keep minimizing without accepting infeasible incumbents.
    pub stage2_budget: usize,
    /// Per-dimension span ratio for seed-local bounds.
    pub span_ratio: f64,
    pub pool_per_dim: usize,
    pub pool_cap: usize,
    pub n_features: usize,
    /// Refit the GP every this many batches; proposals between refits reuse
    /// the previous hyperparameters on the grown dataset.
    pub refit_every: usize,
    /// Cap on GP training-set size (best half by cost + an even stride over
    /// the rest).
    pub max_train: usize,
    pub tr: TrParams,
    pub seed: u64,
    /// Phase tag stamped on history records.
    pub phase_label: String,
}

impl Default for OptimizeConfig {
    fn default() -> Self {
        OptimizeConfig {
            workers: 3,
            batch: 4,
            stage1_budget: 400,
            stage1_target: 0.5,
            stage2_budget: 40,
            span_ratio: 0.4,
            pool_per_dim: 100,
            pool_cap: 5000,
            n_features: DEFAULT_FEATURES,
            refit_every: 4,
            max_train: 160,
            tr: TrParams::default(),
            seed: 0,
            phase_label: "E".to_string(),
        }
    }
}

impl OptimizeConfig {
    fn pool_size(&self, dims: usize) -> usize {
        (self.pool_per_dim * dims).min(self.pool_cap).max(16)
    }
}

pub type SeedSet = Vec<EvalRecord>;

#[derive(Debug, Clone)]
pub struct OptimizeOutcome {
    pub history: Vec<EvalRecord>,
    pub best: EvalRecord,
    pub evaluations: usize,
}

struct Worker {
    id: usize,
    rng: ChaCha8Rng,
    bounds: Vec<(f64, f64)>,
    tr: TrustRegion,
    xs: Vec<Vec<f64>>,
    ys: Vec<f64>,
    incumbent_j: f64,
    incumbent_x: Vec<f64>,
    gp: Option<GpModel>,
    rounds_since_fit: usize,
    fit_seq: u64,
    /// Seed indices this worker may restart into, best first.
    seed_queue: Vec<usize>,
    tau_fail: usize,
}

struct RoundEval {
    x: Vec<f64>,
    point: DesignPoint,
    cost: CostBreakdown,
}

impl Worker {
    fn maybe_fit(&mut self, cfg: &OptimizeConfig) {
        if self.xs.len() < 2 {
            return;
        }
        if self.gp.is_some() && self.rounds_since_fit < cfg.refit_every {
            return;
        }
        let (xs, ys) = self.training_subset(cfg.max_train);
        let d = xs[0].len();
        let mut flat = Vec::with_capacity(xs.len() * d);
        for row in &xs {
            flat.extend_from_slice(row);
        }
        let xm = nalgebra::DMatrix::from_row_slice(xs.len(), d, &flat);
        let yv = nalgebra::DVector::from_vec(ys);
        let fit_seed = cfg
            .seed
            .wrapping_add(0x9E37_79B9_7F4A_7C15u64.wrapping_mul(self.id as u64 + 1))
            .wrapping_add(self.fit_seq);
        self.fit_seq += 1;
        match gp::fit_gp(&xm, &yv, &FitConfig::light(fit_seed)) {
            Ok(model) => {
                self.gp = Some(model);
                self.rounds_since_fit = 0;
            }
            Err(_) => {
                // Keep any previous model; a bootstrap round is the fallback.
            }
        }
    }

    /// Best half by cost plus an even stride over the remainder, preserving
    /// determinism while bounding the n^3 factorization cost.
    fn training_subset(&self, cap: usize) -> (Vec<Vec<f64>>, Vec<f64>) {
        let n = self.xs.len();
        if n <= cap {
            return (self.xs.clone(), self.ys.clone());
        }
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| self.ys[a].total_cmp(&self.ys[b]).then(a.cmp(&b)));
        let keep_best = cap / 2;
        let mut keep: Vec<usize> = order[..keep_best].to_vec();
        let rest = &order[keep_best..];
        let want = cap - keep_best;
        for k in 0..want {
            keep.push(rest[k * rest.len() / want]);
        }
        keep.sort_unstable();
        keep.dedup();
        (
            keep.iter().map(|&i| self.xs[i].clone()).collect(),
            keep.iter().map(|&i| self.ys[i]).collect(),
        )
    }

    fn propose_batch(&mut self, slots: usize, cfg: &OptimizeConfig, pool_size: usize) -> Vec<Vec<f64>> {
        if let Some(model) = &self.gp {
            if let Ok(batch) = propose(
                &self.tr,
                model,
                &self.bounds,
                slots,
                pool_size,
                cfg.n_features,
                &mut self.rng,
            ) {
                return batch;
            }
        }
        // Bootstrap: no usable model yet; sample the unweighted region box.
        let ell = vec![1.0; self.bounds.len()];
        let box_ = tr_box(&self.tr, &ell, &self.bounds);
        (0..slots)
            .map(|_| {
                box_.iter()
                    .map(|iv| sample_interval(*iv, &mut self.rng))
                    .collect()
            })
            .collect()
    }

    fn run_round<O: Objective>(
        &mut self,
        objective: &O,
        space: &Space,
        slots: usize,
        guard_feasibility: bool,
        cfg: &OptimizeConfig,
        pool_size: usize,
        seed_coords: &[Vec<f64>],
        seed_local: &[Vec<(f64, f64)>],
    ) -> Vec<RoundEval> {
        self.maybe_fit(cfg);
        let candidates = self.propose_batch(slots, cfg, pool_size);
        let mut evals = Vec::with_capacity(candidates.len());
        for x in candidates {
            let point = space.denormalize(&x);
            let cost = objective.evaluate(&point);
            let j = cost.total;
            self.xs.push(x.clone());
            self.ys.push(if j.is_finite() { j.min(1e9) } else { 1e9 });
            evals.push(RoundEval { x, point, cost });
        }

        // A candidate may become the incumbent only if it is acceptable:
        // under the stage-2 guard that means feasible (J <= 1), unless the
        // incumbent itself is still infeasible.
        let acceptable = |j: f64| -> bool {
            if !j.is_finite() {
                return false;
            }
            if guard_feasibility {
                j <= 1.0 || (self.incumbent_j > 1.0 && j < self.incumbent_j)
            } else {
                true
            }
        };
        let batch_best = evals
            .iter()
            .map(|e| e.cost.total)
            .filter(|j| acceptable(*j))
            .fold(f64::INFINITY, f64::min);
        let improved = batch_best < self.incumbent_j;
        if improved {
            let best = evals
                .iter()
                .filter(|e| acceptable(e.cost.total))
                .min_by(|a, b| a.cost.total.total_cmp(&b.cost.total))
                .expect("improvement implies an acceptable candidate");
            self.incumbent_j = best.cost.total;
            self.incumbent_x = best.x.clone();
        }
        self.tr.center = self.incumbent_x.clone();

        let collapsed = self.tr.update(improved, &cfg.tr, self.tau_fail);
        if collapsed {
            self.restart(cfg, seed_coords, seed_local);
        }
        self.rounds_since_fit += 1;
        evals
    }

    /// Restart a collapsed region at the best seed not yet used by this
    /// worker (keeping that seed's local box), or at the worker's own best
    /// point inside the current box when the queue is exhausted.
    fn restart(&mut self, cfg: &OptimizeConfig, seed_coords: &[Vec<f64>], seed_local: &[Vec<(f64, f64)>]) {
        if let Some(idx) = self.seed_queue.first().copied() {
            self.seed_queue.remove(0);
            self.bounds = seed_local[idx].clone();
            self.tr = TrustRegion::new(seed_coords[idx].clone(), cfg.tr.l_init);
            self.incumbent_x = seed_coords[idx].clone();
            self.incumbent_j = f64::INFINITY; // re-established on the next batch
        } else {
            self.tr = TrustRegion::new(self.incumbent_x.clone(), cfg.tr.l_init);
        }
        self.gp = None;
        self.rounds_since_fit = 0;
    }
}

/// Run the optimizer. With seeds present ("warm start") every evaluation
/// stays inside the local bounds of one of the seeds; without seeds the
/// workers cold-start from a shared Latin-hypercube design over the full
/// space. Budget 0 returns the best seed untouched.
pub fn optimize<O: Objective>(
    objective: &O,
    seeds: &[EvalRecord],
    ranges: &ParamRanges,
    groups: &MatchingGroups,
    config: &OptimizeConfig,
) -> Result<OptimizeOutcome, ExturboError> {
    let space = Space::new(ranges, groups)?;
    let d = space.len();
    let warm = !seeds.is_empty();
    let total_budget = config.stage1_budget + config.stage2_budget;

    let mut best: Option<EvalRecord> = select_center(seeds).cloned();
    if total_budget == 0 {
        return match best {
            Some(b) => Ok(OptimizeOutcome {
                history: Vec::new(),
                best: b,
                evaluations: 0,
            }),
            None => Err(ExturboError::NothingToDo),
        };
    }

    // Normalize seeds once; order them best-first for center assignment.
    let seed_coords: Vec<Vec<f64>> = seeds
        .iter()
        .map(|s| space.normalize(&s.point))
        .collect::<Result<_, _>>()?;
    let seed_local: Vec<Vec<(f64, f64)>> = seeds
        .iter()
        .map(|s| {
            local_bounds(&s.point, config.span_ratio, ranges)
                .and_then(|lb| space.normalized_bounds(&lb))
        })
        .collect::<Result<_, _>>()?;
    let mut seed_order: Vec<usize> = (0..seeds.len()).collect();
    seed_order.sort_by(|&a, &b| seeds[a].j().total_cmp(&seeds[b].j()).then(a.cmp(&b)));

    let n_workers = config.workers.max(1);
    let tau_fail = config.tr.resolved_tau_fail(d, config.batch);
    let pool_size = config.pool_size(d);
    let mut history: Vec<EvalRecord> = Vec::new();
    let mut evaluations = 0usize;

    let mut workers: Vec<Worker> = Vec::with_capacity(n_workers);
    if warm {
        for w in 0..n_workers {
            let center_idx = seed_order[w % seed_order.len()];
            // Seeds beyond the initial centers are handed out round-robin as
            // restart material.
            let queue: Vec<usize> = seed_order
                .iter()
                .enumerate()
                .skip(n_workers)
                .filter(|(rank, _)| rank % n_workers == w)
                .map(|(_, idx)| *idx)
                .collect();
            workers.push(Worker {
                id: w,
                rng: worker_rng(config.seed, w),
                bounds: seed_local[center_idx].clone(),
                tr: TrustRegion::new(seed_coords[center_idx].clone(), config.tr.l_init),
                xs: seed_coords.clone(),
                ys: seeds.iter().map(|s| s.j().min(1e9)).collect(),
                incumbent_j: seeds[center_idx].j(),
                incumbent_x: seed_coords[center_idx].clone(),
                gp: None,
                rounds_since_fit: 0,
                fit_seq: 0,
                seed_queue: queue,
                tau_fail,
            });
        }
    } else {
        // Cold start: one shared space-filling design, centers at its best
        // distinct points, full-space bounds.
        let n_init = (2 * d).clamp(2, total_budget);
        let mut init_rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0xC01D_57A7);
        let init_pts = latin_hypercube(n_init, d, &mut init_rng);
        let mut init_evals: Vec<(Vec<f64>, DesignPoint, CostBreakdown)> = Vec::new();
        for x in init_pts {
            let point = space.denormalize(&x);
            let cost = objective.evaluate(&point);
            init_evals.push((x, point, cost));
        }
        for (x, point, cost) in &init_evals {
            evaluations += 1;
            let rec = EvalRecord {
                iteration: evaluations,
                phase: config.phase_label.clone(),
                worker: None,
                point: point.clone(),
                cost: cost.clone(),
                measurements: None,
            };
            if best.as_ref().is_none_or(|b| rec.j() < b.j()) {
                best = Some(rec.clone());
            }
            history.push(rec);
            let _ = x;
        }
        let mut order: Vec<usize> = (0..init_evals.len()).collect();
        order.sort_by(|&a, &b| {
            init_evals[a]
                .2
                .total
                .total_cmp(&init_evals[b].2.total)
                .then(a.cmp(&b))
        });
        let full: Vec<(f64, f64)> = vec![(0.0, 1.0); d];
        for w in 0..n_workers {
            let c = order[w % order.len()];
            workers.push(Worker {
                id: w,
                rng: worker_rng(config.seed, w),
                bounds: full.clone(),
                tr: TrustRegion::new(init_evals[c].0.clone(), config.tr.l_init),
                xs: init_evals.iter().map(|(x, _, _)| x.clone()).collect(),
                ys: init_evals
                    .iter()
                    .map(|(_, _, c)| c.total.min(1e9))
                    .collect(),
                incumbent_j: init_evals[c].2.total,
                incumbent_x: init_evals[c].0.clone(),
                gp: None,
                rounds_since_fit: 0,
                fit_seq: 0,
                seed_queue: Vec::new(),
                tau_fail,
            });
        }
    }

    let stage1_used_by_init = evaluations.min(config.stage1_budget);
    let mut stage1_left = config.stage1_budget - stage1_used_by_init;
    // Cold-start designs larger than stage 1 spill into stage 2's budget.
    let mut stage2_left = config
        .stage2_budget
        .saturating_sub(evaluations.saturating_sub(config.stage1_budget));

    let run_stage = |workers: &mut Vec<Worker>,
                         left: &mut usize,
                         guard: bool,
                         stop_at_target: bool,
                         history: &mut Vec<EvalRecord>,
                         best: &mut Option<EvalRecord>,
                         evaluations: &mut usize| {
        while *left > 0 {
            if stop_at_target
                && best
                    .as_ref()
                    .is_some_and(|b| b.j() <= config.stage1_target)
            {
                break;
            }
            // Worker-major slot allocation, trimmed to the remaining budget.
            let slots: Vec<usize> = (0..n_workers)
                .map(|w| {
                    let offset = w * config.batch;
                    left.saturating_sub(offset).min(config.batch)
                })
                .collect();
            let round: Vec<Vec<RoundEval>> = workers
                .par_iter_mut()
                .enumerate()
                .map(|(w, worker)| {
                    if slots[w] == 0 {
                        Vec::new()
                    } else {
                        worker.run_round(
                            objective,
                            &space,
                            slots[w],
                            guard,
                            config,
                            pool_size,
                            &seed_coords,
                            &seed_local,
                        )
                    }
                })
                .collect();
            for (w, evals) in round.into_iter().enumerate() {
                for e in evals {
                    *evaluations += 1;
                    *left -= 1;
                    let rec = EvalRecord {
                        iteration: *evaluations,
                        phase: config.phase_label.clone(),
                        worker: Some(w),
                        point: e.point,
                        cost: e.cost,
                        measurements: None,
                    };
                    let candidate_ok = !guard || rec.j() <= 1.0;
                    if candidate_ok && best.as_ref().is_none_or(|b| rec.j() < b.j()) {
                        *best = Some(rec.clone());
                    }
                    history.push(rec);
                }
            }
        }
    };

    run_stage(
        &mut workers,
        &mut stage1_left,
        false,
        true,
        &mut history,
        &mut best,
        &mut evaluations,
    );
    run_stage(
        &mut workers,
        &mut stage2_left,
        true,
        false,
        &mut history,
        &mut best,
        &mut evaluations,
    );

    let best = best.ok_or(ExturboError::NothingToDo)?;
    Ok(OptimizeOutcome {
        history,
        best,
        evaluations,
    })
}

fn worker_rng(seed: u64, worker: usize) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(
        seed ^ 0x5DEE_CE66_D1CE_CAFEu64.wrapping_mul(worker as u64 + 1),
    )
}
