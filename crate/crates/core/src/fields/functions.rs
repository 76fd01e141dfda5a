//! Closed-form test functions with exact gradients.

use crate::space::chart::{self, Coords, ZERO};
use crate::spectral::{FourierMode, Phase};

pub trait SmoothFunction: Sync {
    fn value(&self, p: &Coords) -> f64;
    /// Gradient as an ambient tangent vector.
    fn gradient(&self, p: &Coords) -> Coords;
}

/// Finite sum `Σ c m(x)` of real Fourier modes on a periodic chart.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrigPolynomial {
    pub terms: Vec<(FourierMode, f64)>,
}

impl TrigPolynomial {
    pub fn new(terms: Vec<(FourierMode, f64)>) -> Self {
        TrigPolynomial { terms }
    }

    /// Single unit-amplitude mode.
    pub fn mode(k: [i64; 4], phase: Phase, coeff: f64) -> Self {
        TrigPolynomial::new(vec![(
            FourierMode {
                k,
                phase,
                amplitude: 1.0,
            },
            coeff,
        )])
    }

    /// Pointwise product, expanded back into modes.
    pub fn product(&self, other: &TrigPolynomial) -> TrigPolynomial {
        let mut terms = Vec::new();
        for (m1, c1) in &self.terms {
            for (m2, c2) in &other.terms {
                let c = 0.5 * c1 * c2 * m1.amplitude * m2.amplitude;
                let mut plus = [0i64; 4];
                let mut minus = [0i64; 4];
                for a in 0..4 {
                    plus[a] = m1.k[a] + m2.k[a];
                    minus[a] = m1.k[a] - m2.k[a];
                }
                let unit = |k: [i64; 4], phase| FourierMode {
                    k,
                    phase,
                    amplitude: 1.0,
                };
                use Phase::{Cos, Sin};
                // cos a cos b = ½[cos(a−b) + cos(a+b)], sin a sin b = ½[cos(a−b) − cos(a+b)],
                // sin a cos b = ½[sin(a+b) + sin(a−b)], cos a sin b = ½[sin(a+b) − sin(a−b)]
                let (pm, sp, sm) = match (m1.phase, m2.phase) {
                    (Cos, Cos) => (Cos, 1.0, 1.0),
                    (Sin, Sin) => (Cos, -1.0, 1.0),
                    (Sin, Cos) => (Sin, 1.0, 1.0),
                    (Cos, Sin) => (Sin, 1.0, -1.0),
                };
                terms.push((unit(plus, pm), sp * c));
                terms.push((unit(minus, pm), sm * c));
            }
        }
        TrigPolynomial { terms }
    }
}

impl SmoothFunction for TrigPolynomial {
    fn value(&self, p: &Coords) -> f64 {
        self.terms.iter().map(|(m, c)| c * m.value(p)).sum()
    }

    fn gradient(&self, p: &Coords) -> Coords {
        self.terms
            .iter()
            .fold(ZERO, |g, (m, c)| chart::axpy(&g, *c, &m.gradient(p)))
    }
}

/// Restriction of a linear function `p ↦ a·p` to the unit sphere.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AmbientLinear {
    pub a: Coords,
}

impl SmoothFunction for AmbientLinear {
    fn value(&self, p: &Coords) -> f64 {
        chart::dot(&self.a, p)
    }

    fn gradient(&self, p: &Coords) -> Coords {
        let c = self.a[0] * p[0] + self.a[1] * p[1] + self.a[2] * p[2];
        [
            self.a[0] - c * p[0],
            self.a[1] - c * p[1],
            self.a[2] - c * p[2],
            0.0,
        ]
    }
}

/// Restriction of a quadratic form `p ↦ pᵀ M p` (M symmetric) to the unit sphere.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AmbientQuadratic {
    pub m: [[f64; 3]; 3],
}

impl AmbientQuadratic {
    fn mp(&self, p: &Coords) -> [f64; 3] {
        let mut out = [0.0; 3];
        for (i, row) in self.m.iter().enumerate() {
            out[i] = row[0] * p[0] + row[1] * p[1] + row[2] * p[2];
        }
        out
    }
}

impl SmoothFunction for AmbientQuadratic {
    fn value(&self, p: &Coords) -> f64 {
        let mp = self.mp(p);
        mp[0] * p[0] + mp[1] * p[1] + mp[2] * p[2]
    }

    fn gradient(&self, p: &Coords) -> Coords {
        let mp = self.mp(p);
        let q = mp[0] * p[0] + mp[1] * p[1] + mp[2] * p[2];
        [
            2.0 * (mp[0] - q * p[0]),
            2.0 * (mp[1] - q * p[1]),
            2.0 * (mp[2] - q * p[2]),
            0.0,
        ]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn product_expansion_matches_pointwise_product() {
        let f = TrigPolynomial::new(vec![
            (
                FourierMode {
                    k: [1, 0, 0, 0],
                    phase: Phase::Cos,
                    amplitude: 2f64.sqrt(),
                },
                0.7,
            ),
            (
                FourierMode {
                    k: [0, 2, 0, 0],
                    phase: Phase::Sin,
                    amplitude: 1.0,
                },
                -0.4,
            ),
        ]);
        let g = TrigPolynomial::mode([1, 1, 0, 0], Phase::Sin, 1.3)
            .product(&TrigPolynomial::mode([0, 1, 0, 0], Phase::Cos, 1.0));
        let fg = f.product(&g);
        for p in [[0.1, 0.7, 0.0, 0.0], [0.33, 0.05, 0.0, 0.0]] {
            assert!((fg.value(&p) - f.value(&p) * g.value(&p)).abs() < 1e-13);
            let lhs = fg.gradient(&p);
            let rhs = chart::axpy(&chart::scale(&f.gradient(&p), g.value(&p)), f.value(&p), &g.gradient(&p));
            assert!(chart::norm(&chart::sub(&lhs, &rhs)) < 1e-12);
        }
    }

    #[test]
    fn sphere_quadratic_gradient_matches_difference_quotient() {
        let f = AmbientQuadratic {
            m: [[1.0, 0.5, 0.0], [0.5, -1.0, 0.2], [0.0, 0.2, 0.0]],
        };
        let p = chart::normalize3(&[0.3, -0.2, 0.9, 0.0]);
        let g = f.gradient(&p);
        assert!(chart::dot(&g, &p).abs() < 1e-14);
        let sphere = crate::space::Chart::Sphere;
        let u = chart::normalize3(&sphere.project(&p, &[1.0, 0.4, 0.0, 0.0]));
        let eta = 1e-5;
        let fd = (f.value(&sphere.exp(&p, &chart::scale(&u, eta)))
            - f.value(&sphere.exp(&p, &chart::scale(&u, -eta))))
            / (2.0 * eta);
        assert!((fd - chart::dot(&g, &u)).abs() < 1e-8);
    }

    #[test]
    fn sphere_linear_gradient_is_tangent() {
        let f = AmbientLinear { a: [0.0, 0.0, 1.0, 0.0] };
        let p = chart::normalize3(&[0.3, -0.2, 0.9, 0.0]);
        assert!(chart::dot(&f.gradient(&p), &p).abs() < 1e-15);
    }
}
