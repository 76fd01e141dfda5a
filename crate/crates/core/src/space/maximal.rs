use super::MetricMeasureSpace;
use crate::error::Result;
use rayon::prelude::*;

/// Relative tolerance under which two distances count as the same sphere.
const TIE: f64 = 1e-12;

/// Discrete Hardy–Littlewood maximal function.
///
/// The supremum runs over every distinct closed ball around `x`; on a finite
/// space these are exhausted by the radii `d(x, y)`. Negative inputs are
/// replaced by their absolute value.
pub fn maximal_function(space: &MetricMeasureSpace, f: &[f64]) -> Vec<f64> {
    assert_eq!(f.len(), space.npoints(), "function length mismatch");
    (0..space.npoints())
        .into_par_iter()
        .map(|x| {
            let mut order: Vec<(f64, usize)> =
                (0..space.npoints()).map(|y| (space.dist(x, y), y)).collect();
            order.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            let mut sum_fw = 0.0;
            let mut sum_w = 0.0;
            let mut best: f64 = 0.0;
            for (k, &(d, y)) in order.iter().enumerate() {
                sum_fw += f[y].abs() * space.weight(y);
                sum_w += space.weight(y);
                let closes = match order.get(k + 1) {
                    Some(&(next, _)) => next - d > TIE * (1.0 + d),
                    None => true,
                };
                if closes && sum_w > 0.0 {
                    best = best.max(sum_fw / sum_w);
                }
            }
            best
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PowerIntegral {
    pub value: f64,
    /// `alpha ≥ n`: finite here, but the continuum integral diverges.
    pub divergent_in_limit: bool,
}

/// `Σ_{y≠x} d(x,y)^{-alpha} w(y)`.
pub fn distance_power_integral(
    space: &MetricMeasureSpace,
    x: usize,
    alpha: f64,
) -> Result<PowerIntegral> {
    space.check_point(x)?;
    let value = (0..space.npoints())
        .filter(|&y| y != x)
        .map(|y| space.dist(x, y).powf(-alpha) * space.weight(y))
        .sum();
    let divergent_in_limit = match space.dimension() {
        Some(n) => alpha >= n as f64,
        None => false,
    };
    Ok(PowerIntegral {
        value,
        divergent_in_limit,
    })
}
