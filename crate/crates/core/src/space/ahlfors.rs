use super::MetricMeasureSpace;
use crate::error::{invalid, Result};
use rayon::prelude::*;

/// Two-sided volume-growth fit `c1 rⁿ ≤ m(B(x,r)) ≤ c2 rⁿ` over a sample.
#[derive(Clone, Debug, PartialEq)]
pub struct AhlforsReport {
    pub n: f64,
    pub c1: f64,
    pub c2: f64,
    pub worst_ratio_low: f64,
    pub worst_ratio_high: f64,
    pub c_doubling: f64,
    /// Set when `c2 / c1 > 100`, which usually means the exponent is wrong.
    pub flagged: bool,
}

/// Sorted distances from `x` together with cumulative ball masses.
pub(crate) struct RadialProfile {
    dist: Vec<f64>,
    cum_mass: Vec<f64>,
}

impl RadialProfile {
    pub(crate) fn new(space: &MetricMeasureSpace, x: usize) -> Self {
        let mut order: Vec<usize> = (0..space.npoints()).collect();
        order.sort_by(|&a, &b| space.dist(x, a).total_cmp(&space.dist(x, b)));
        let dist: Vec<f64> = order.iter().map(|&y| space.dist(x, y)).collect();
        let mut acc = 0.0;
        let cum_mass = order
            .iter()
            .map(|&y| {
                acc += space.weight(y);
                acc
            })
            .collect();
        RadialProfile { dist, cum_mass }
    }

    /// Mass of the open ball of radius `r`.
    pub(crate) fn open_mass(&self, r: f64) -> f64 {
        let k = self.dist.partition_point(|&d| d < r);
        if k == 0 {
            0.0
        } else {
            self.cum_mass[k - 1]
        }
    }
}

/// Log-spaced radii in the fit band `[2h, D/2]`.
pub fn default_ahlfors_radii(space: &MetricMeasureSpace, count: usize) -> Vec<f64> {
    let lo = 2.0 * space.grid_spacing();
    let hi = 0.5 * space.diameter();
    if count <= 1 || hi <= lo {
        return vec![lo.min(hi).max(f64::MIN_POSITIVE)];
    }
    (0..count)
        .map(|k| lo * (hi / lo).powf(k as f64 / (count - 1) as f64))
        .collect()
}

pub fn check_ahlfors(
    space: &MetricMeasureSpace,
    n: f64,
    r_grid: &[f64],
    x_sample: &[usize],
) -> Result<AhlforsReport> {
    if !(n > 0.0) {
        return Err(invalid("n", "exponent must be positive"));
    }
    if r_grid.is_empty() || x_sample.is_empty() {
        return Err(invalid("r_grid/x_sample", "sample grids must be nonempty"));
    }
    if r_grid.iter().any(|r| !(*r > 0.0)) {
        return Err(invalid("r_grid", "radii must be positive"));
    }
    for &x in x_sample {
        space.check_point(x)?;
    }
    let per_point: Vec<(f64, f64, f64)> = x_sample
        .par_iter()
        .map(|&x| {
            let prof = RadialProfile::new(space, x);
            let mut lo = f64::INFINITY;
            let mut hi: f64 = 0.0;
            let mut dbl: f64 = 1.0;
            for &r in r_grid {
                let m = prof.open_mass(r);
                let ratio = m / r.powf(n);
                lo = lo.min(ratio);
                hi = hi.max(ratio);
                if m > 0.0 {
                    dbl = dbl.max(prof.open_mass(2.0 * r) / m);
                }
            }
            (lo, hi, dbl)
        })
        .collect();
    let (lo, hi, dbl) = per_point.iter().fold(
        (f64::INFINITY, 0.0f64, 1.0f64),
        |(a, b, c), &(l, h, d)| (a.min(l), b.max(h), c.max(d)),
    );
    Ok(AhlforsReport {
        n,
        c1: lo,
        c2: hi,
        worst_ratio_low: lo,
        worst_ratio_high: hi,
        c_doubling: dbl,
        flagged: hi > 100.0 * lo,
    })
}
