//! Parameter-sensitivity reports derived from ARD lengthscales.
//!
//! Two models are fitted after a run: a global one on every evaluation and an
//! elite one on the best slice of designs. A short fitted lengthscale means
//! the cost moves quickly along that parameter, so importance is the
//! normalized inverse lengthscale. The global ranking flags parameters that
//! matter everywhere (typically the ones that break designs); the elite
//! ranking flags the knobs that still matter once designs are already good.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::gp::{fit_gp, FitConfig};
use super::{ExturboError, Space};
use crate::netlist::{MatchingGroups, ParamRanges};
use crate::record::EvalRecord;

#[derive(Debug, Clone)]
pub struct SensitivityConfig {
    /// Fraction of lowest-cost designs in the elite set.
    pub elite_fraction: f64,
    /// Elite never shrinks below this many points (uses all when the history
    /// itself is smaller).
    pub min_elite: usize,
    /// Cap on GP training-set size; larger histories are thinned to the best
    /// half plus an even stride over the rest.
    pub max_points: usize,
    pub fit: FitConfig,
}

impl Default for SensitivityConfig {
    fn default() -> Self {
        SensitivityConfig {
            elite_fraction: 0.15,
            min_elite: 10,
            max_points: 240,
            fit: FitConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensitivityEntry {
    /// Leader parameter name (first member for matched groups).
    pub name: String,
    /// All parameters this coordinate drives.
    pub members: Vec<String>,
    pub lengthscale: f64,
    /// Normalized importance: (1/lengthscale) / sum of inverses.
    pub s: f64,
    /// 1-based, descending importance.
    pub rank: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensitivityReport {
    pub global: Vec<SensitivityEntry>,
    pub elite: Vec<SensitivityEntry>,
    pub elite_count: usize,
    pub total_count: usize,
}

impl SensitivityReport {
    pub fn global_entry(&self, name: &str) -> Option<&SensitivityEntry> {
        self.global.iter().find(|e| e.name == name)
    }

    pub fn elite_entry(&self, name: &str) -> Option<&SensitivityEntry> {
        self.elite.iter().find(|e| e.name == name)
    }
}

fn entries_from_lengthscales(space: &Space, ell: &[f64]) -> Vec<SensitivityEntry> {
    let inv: Vec<f64> = ell.iter().map(|l| 1.0 / l).collect();
    let total: f64 = inv.iter().sum();
    let mut entries: Vec<SensitivityEntry> = space
        .dims()
        .iter()
        .zip(ell.iter().zip(&inv))
        .map(|(dim, (l, i))| SensitivityEntry {
            name: dim.name.clone(),
            members: dim.members.clone(),
            lengthscale: *l,
            s: i / total,
            rank: 0,
        })
        .collect();
    entries.sort_by(|a, b| b.s.total_cmp(&a.s).then(a.name.cmp(&b.name)));
    for (i, e) in entries.iter_mut().enumerate() {
        e.rank = i + 1;
    }
    entries
}

/// Thin an index set to `cap` entries: the best half by cost plus an even
/// stride over the remainder.
fn thin(order: &[usize], cap: usize) -> Vec<usize> {
    if order.len() <= cap {
        return order.to_vec();
    }
    let keep_best = cap / 2;
    let mut keep: Vec<usize> = order[..keep_best].to_vec();
    let rest = &order[keep_best..];
    let want = cap - keep_best;
    for k in 0..want {
        keep.push(rest[k * rest.len() / want]);
    }
    keep.sort_unstable();
    keep.dedup();
    keep
}

fn fit_lengthscales(
    history: &[EvalRecord],
    idx: &[usize],
    space: &Space,
    fit: &FitConfig,
) -> Result<Vec<f64>, ExturboError> {
    let d = space.len();
    let n = idx.len();
    let mut flat = Vec::with_capacity(n * d);
    let mut ys = Vec::with_capacity(n);
    for &i in idx {
        flat.extend_from_slice(&space.normalize(&history[i].point)?);
        let j = history[i].j();
        ys.push(if j.is_finite() { j.min(1e9) } else { 1e9 });
    }
    let x = DMatrix::from_row_slice(n, d, &flat);
    let y = DVector::from_vec(ys);
    let model = fit_gp(&x, &y, fit)?;
    Ok(model.lengthscales().to_vec())
}

/// Fit the global and elite sensitivity tables from a run history.
pub fn sensitivity(
    history: &[EvalRecord],
    ranges: &ParamRanges,
    groups: &MatchingGroups,
    config: &SensitivityConfig,
) -> Result<SensitivityReport, ExturboError> {
    if history.len() < 2 {
        return Err(ExturboError::EmptyHistory);
    }
    let space = Space::new(ranges, groups)?;

    let mut order: Vec<usize> = (0..history.len()).collect();
    order.sort_by(|&a, &b| history[a].j().total_cmp(&history[b].j()).then(a.cmp(&b)));

    let elite_n = ((history.len() as f64 * config.elite_fraction).ceil() as usize)
        .max(config.min_elite)
        .min(history.len());
    let elite_idx: Vec<usize> = order[..elite_n].to_vec();
    let global_idx = thin(&order, config.max_points);
    let elite_fit_idx = thin(&elite_idx, config.max_points);

    let global_ell = fit_lengthscales(history, &global_idx, &space, &config.fit)?;
    let elite_ell = if elite_fit_idx == global_idx {
        global_ell.clone()
    } else {
        fit_lengthscales(history, &elite_fit_idx, &space, &config.fit)?
    };

    Ok(SensitivityReport {
        global: entries_from_lengthscales(&space, &global_ell),
        elite: entries_from_lengthscales(&space, &elite_ell),
        elite_count: elite_n,
        total_count: history.len(),
    })
}

/// How a parameter is classified in the final report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamClass {
    pub name: String,
    pub members: Vec<String>,
    /// Top quartile of the global ranking: moving it can break the design.
    pub stability_critical: bool,
    /// Top quartile of the elite ranking: still worth tuning among good designs.
    pub performance_tuning: bool,
}

/// Classify parameters by quartile membership in the two rankings. Output
/// follows the global ranking order.
pub fn classify(report: &SensitivityReport) -> Vec<ParamClass> {
    let quartile = report.global.len().div_ceil(4);
    let elite_top: std::collections::BTreeSet<&str> = report
        .elite
        .iter()
        .filter(|e| e.rank <= quartile)
        .map(|e| e.name.as_str())
        .collect();
    report
        .global
        .iter()
        .map(|e| ParamClass {
            name: e.name.clone(),
            members: e.members.clone(),
            stability_critical: e.rank <= quartile,
            performance_tuning: elite_top.contains(e.name.as_str()),
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::exturbo::sampling::latin_hypercube;
    use crate::exturbo::synthetic::{breakdown_of, point_from_coords, unit_ranges};
    use crate::netlist::MatchGroup;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn history_from_fn(
        d: usize,
        n: usize,
        seed: u64,
        f: impl Fn(&[f64], &mut ChaCha8Rng) -> f64,
    ) -> Vec<EvalRecord> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pts = latin_hypercube(n, d, &mut rng);
        pts.into_iter()
            .enumerate()
            .map(|(i, x)| {
                let j = f(&x, &mut rng);
                EvalRecord {
                    iteration: i + 1,
                    phase: "E".into(),
                    worker: None,
                    point: point_from_coords(&x),
                    cost: breakdown_of(j),
                    measurements: None,
                }
            })
            .collect()
    }

    #[test]
    fn single_active_dimension_dominates_the_ranking() {
        let history = history_from_fn(5, 80, 21, |x, rng| {
            let noise: f64 = rng.sample(StandardNormal);
            (x[0] - 0.3) * (x[0] - 0.3) + 0.01 * noise
        });
        let report = sensitivity(
            &history,
            &unit_ranges(5),
            &MatchingGroups::default(),
            &SensitivityConfig::default(),
        )
        .unwrap();
        assert_eq!(report.global[0].name, "x00");
        assert!(
            report.global[0].s >= 0.5,
            "S for the active dim: {}",
            report.global[0].s
        );
        let ell0 = report.global_entry("x00").unwrap().lengthscale;
        for e in &report.global {
            if e.name != "x00" {
                assert!(
                    e.lengthscale >= 5.0 * ell0,
                    "{} has lengthscale {} vs active {}",
                    e.name,
                    e.lengthscale,
                    ell0
                );
            }
        }
    }

    #[test]
    fn importances_sum_to_one() {
        let history = history_from_fn(4, 40, 2, |x, _| x.iter().sum::<f64>());
        let report = sensitivity(
            &history,
            &unit_ranges(4),
            &MatchingGroups::default(),
            &SensitivityConfig::default(),
        )
        .unwrap();
        for table in [&report.global, &report.elite] {
            let total: f64 = table.iter().map(|e| e.s).sum();
            assert!((total - 1.0).abs() < 1e-9, "sum = {total}");
        }
    }

    #[test]
    fn full_elite_fraction_reproduces_the_global_table() {
        let history = history_from_fn(3, 30, 7, |x, _| x[0] + 0.5 * x[1]);
        let cfg = SensitivityConfig {
            elite_fraction: 1.0,
            ..SensitivityConfig::default()
        };
        let report =
            sensitivity(&history, &unit_ranges(3), &MatchingGroups::default(), &cfg).unwrap();
        assert_eq!(report.global, report.elite);
        assert_eq!(report.elite_count, 30);
    }

    #[test]
    fn constant_objective_gives_uniform_importance() {
        let history = history_from_fn(4, 25, 9, |_, _| 0.7);
        let report = sensitivity(
            &history,
            &unit_ranges(4),
            &MatchingGroups::default(),
            &SensitivityConfig::default(),
        )
        .unwrap();
        for e in &report.global {
            assert!((e.s - 0.25).abs() < 1e-9);
            assert_eq!(e.lengthscale, FitConfig::default().ell_bounds.1);
        }
    }

    #[test]
    fn matched_groups_report_one_row_with_all_members() {
        let history = history_from_fn(3, 30, 4, |x, _| (x[0] - 0.5).powi(2) + x[2]);
        // Tie x00 and x01 together; the history happens to ignore x01, which
        // is fine — the report must still list it as a member.
        let groups = MatchingGroups(vec![MatchGroup {
            name: "pair".into(),
            members: vec!["x00".into(), "x01".into()],
        }]);
        let report = sensitivity(
            &history,
            &unit_ranges(3),
            &groups,
            &SensitivityConfig::default(),
        )
        .unwrap();
        assert_eq!(report.global.len(), 2);
        let row = report.global_entry("x00").unwrap();
        assert_eq!(row.members, vec!["x00", "x01"]);
        let all_members: Vec<&str> = report
            .global
            .iter()
            .flat_map(|e| e.members.iter().map(String::as_str))
            .collect();
        assert_eq!(all_members.len(), 3);
    }

    #[test]
    fn elite_set_respects_minimum_size() {
        let history = history_from_fn(2, 40, 13, |x, _| x[0]);
        let cfg = SensitivityConfig::default();
        let report =
            sensitivity(&history, &unit_ranges(2), &MatchingGroups::default(), &cfg).unwrap();
        // 15% of 40 = 6, below the minimum of 10.
        assert_eq!(report.elite_count, 10);
    }

    #[test]
    fn classification_marks_quartiles_of_both_rankings() {
        let entry = |name: &str, s: f64, rank: usize| SensitivityEntry {
            name: name.into(),
            members: vec![name.into()],
            lengthscale: 1.0 / s,
            s,
            rank,
        };
        let report = SensitivityReport {
            global: vec![
                entry("a", 0.4, 1),
                entry("b", 0.3, 2),
                entry("c", 0.2, 3),
                entry("d", 0.1, 4),
            ],
            elite: vec![
                entry("c", 0.4, 1),
                entry("a", 0.3, 2),
                entry("b", 0.2, 3),
                entry("d", 0.1, 4),
            ],
            elite_count: 10,
            total_count: 40,
        };
        let classes = classify(&report);
        assert_eq!(classes[0].name, "a");
        assert!(classes[0].stability_critical && !classes[0].performance_tuning);
        let c = classes.iter().find(|p| p.name == "c").unwrap();
        assert!(!c.stability_critical && c.performance_tuning);
        let d = classes.iter().find(|p| p.name == "d").unwrap();
        assert!(!d.stability_critical && !d.performance_tuning);
    }

    #[test]
    fn too_short_history_is_rejected() {
        let history = history_from_fn(2, 1, 1, |x, _| x[0]);
        assert!(matches!(
            sensitivity(
                &history,
                &unit_ranges(2),
                &MatchingGroups::default(),
                &SensitivityConfig::default()
            ),
            Err(ExturboError::EmptyHistory)
        ));
    }
}
