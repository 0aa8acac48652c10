//! Synthetic objectives for optimizer benchmarks and property tests.
//!
//! These run in a named-parameter space (`x00`, `x01`, ...) over the unit
//! cube so they exercise the same DesignPoint plumbing as circuit objectives.

use crate::cost::{mode_of, CostBreakdown};
use crate::design::DesignPoint;
use crate::netlist::{ParamRange, ParamRanges};

/// Zero-padded coordinate names keep lexicographic and index order aligned.
pub fn coord_name(i: usize) -> String {
    format!("x{i:02}")
}

pub fn unit_ranges(d: usize) -> ParamRanges {
    assert!(d <= 100, "coordinate naming supports up to 100 dims");
    let mut ranges = ParamRanges::default();
    for i in 0..d {
        ranges.0.insert(coord_name(i), ParamRange::new(0.0, 1.0, ""));
    }
    ranges
}

pub fn point_from_coords(v: &[f64]) -> DesignPoint {
    v.iter()
        .enumerate()
        .map(|(i, x)| (coord_name(i), *x))
        .collect()
}

pub fn coords_from_point(p: &DesignPoint, d: usize) -> Vec<f64> {
    (0..d)
        .map(|i| {
            p.get(&coord_name(i))
                .unwrap_or_else(|| panic!("point is missing coordinate {}", coord_name(i)))
        })
        .collect()
}

/// Wrap a bare objective value in the cost structure the optimizer consumes.
pub fn breakdown_of(j: f64) -> CostBreakdown {
    CostBreakdown {
        power_term: j,
        violations: Vec::new(),
        sanity_term: 0.0,
        total: j,
        mode: mode_of(j),
    }
}

/// J(x) = sum_d (x_d - c_d)^2.
pub fn sphere(center: Vec<f64>) -> impl Fn(&DesignPoint) -> CostBreakdown + Sync {
    move |p: &DesignPoint| {
        let x = coords_from_point(p, center.len());
        let j = x
            .iter()
            .zip(&center)
            .map(|(a, c)| (a - c) * (a - c))
            .sum::<f64>();
        breakdown_of(j)
    }
}

/// A constrained-looking landscape whose feasible set (J <= 1) is a tiny box
/// around `center` plus a thin sloped shell:
///
///   J(x) = base + slope * sum_d max(0, |x_d - c_d| - half_width)
///
/// Inside the box every term vanishes and J = base. With the defaults
/// (half_width 0.15, 20 dims) the core box occupies 0.3^20 ~ 3.5e-11 of the
/// unit cube, far below the 1e-6 advertised for the warm-start benchmark,
/// while the L1 slope still gives a surrogate model something to descend.
#[derive(Debug, Clone)]
pub struct NarrowBasin {
    pub center: Vec<f64>,
    pub half_width: f64,
    pub slope: f64,
    pub base: f64,
}

impl NarrowBasin {
    pub fn new(center: Vec<f64>) -> Self {
        NarrowBasin {
            center,
            half_width: 0.15,
            slope: 10.0,
            base: 0.3,
        }
    }

    pub fn dims(&self) -> usize {
        self.center.len()
    }

    pub fn value(&self, x: &[f64]) -> f64 {
        let excess: f64 = x
            .iter()
            .zip(&self.center)
            .map(|(a, c)| ((a - c).abs() - self.half_width).max(0.0))
            .sum();
        self.base + self.slope * excess
    }

    pub fn cost(&self, p: &DesignPoint) -> CostBreakdown {
        breakdown_of(self.value(&coords_from_point(p, self.dims())))
    }

    /// Upper bound on the feasible fraction of the unit cube: the feasible
    /// set is contained in the box |x_d - c_d| <= half_width + slack where
    /// slack = (1 - base)/slope is the total allowed excess.
    pub fn feasible_volume_bound(&self) -> f64 {
        let slack = (1.0 - self.base).max(0.0) / self.slope;
        (2.0 * (self.half_width + slack))
            .min(1.0)
            .powi(self.dims() as i32)
    }

    /// A point just outside the basin wall: `offset` beyond the half-width on
    /// the first `n_out` coordinates, dead center elsewhere.
    pub fn adjacent_seed(&self, n_out: usize, offset: f64) -> Vec<f64> {
        self.center
            .iter()
            .enumerate()
            .map(|(i, c)| {
                if i < n_out {
                    (c + self.half_width + offset).min(1.0)
                } else {
                    *c
                }
            })
            .collect()
    }
}

/// f(x) = (x_1 - center)^2, ignoring every other coordinate. Used to check
/// that the sensitivity ranking isolates the single active dimension.
pub fn single_active_dim(d: usize, center: f64) -> impl Fn(&DesignPoint) -> CostBreakdown + Sync {
    move |p: &DesignPoint| {
        let x = coords_from_point(p, d);
        let r = x[0] - center;
        breakdown_of(r * r)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn sphere_vanishes_at_center() {
        let f = sphere(vec![0.4, 0.7]);
        let j = f(&point_from_coords(&[0.4, 0.7])).total;
        assert_eq!(j, 0.0);
        let j2 = f(&point_from_coords(&[0.5, 0.7])).total;
        assert_relative_eq!(j2, 0.01, epsilon = 1e-15);
    }

    #[test]
    fn basin_floor_and_walls() {
        let basin = NarrowBasin::new(vec![0.5; 20]);
        assert_eq!(basin.value(&[0.5; 20]), 0.3);
        // On the wall: still at the floor.
        let mut on_wall = vec![0.5; 20];
        on_wall[3] = 0.65;
        assert_relative_eq!(basin.value(&on_wall), 0.3, epsilon = 1e-12);
        // 0.02 past the wall on one coordinate: base + 10*0.02.
        let mut outside = vec![0.5; 20];
        outside[3] = 0.67;
        assert_relative_eq!(basin.value(&outside), 0.5, epsilon = 1e-12);
    }

    #[test]
    fn basin_is_vanishingly_small() {
        let basin = NarrowBasin::new(vec![0.5; 20]);
        assert!(basin.feasible_volume_bound() < 1e-6);
        // And the bound is honest: a point at the slack boundary is infeasible.
        let mut x = vec![0.5; 20];
        x[0] = 0.5 + basin.half_width + 0.071;
        assert!(basin.value(&x) > 1.0);
    }

    #[test]
    fn adjacent_seed_is_infeasible_but_close() {
        let basin = NarrowBasin::new(vec![0.5; 20]);
        let seed = basin.adjacent_seed(6, 0.02);
        let j = basin.value(&seed);
        assert!(j > 1.0, "seed should start infeasible, J = {j}");
        assert!(j < 2.0, "seed should be near the wall, J = {j}");
    }

    #[test]
    fn unit_ranges_and_naming_round_trip() {
        let ranges = unit_ranges(12);
        assert_eq!(ranges.free_names(), (0..12).map(coord_name).collect::<Vec<_>>());
        let p = point_from_coords(&[0.25; 12]);
        assert_eq!(coords_from_point(&p, 12), vec![0.25; 12]);
    }
}
