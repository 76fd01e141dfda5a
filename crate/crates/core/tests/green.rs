use mmslab::green::*;
use mmslab::space::*;
use mmslab::spectral::*;
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::f64::consts::PI;
use std::sync::Arc;

fn full_basis(s: &MetricMeasureSpace) -> (LaplacianOperator, SpectralBasis) {
    let op = assemble_laplacian(s, Scheme::TorusFourierExact, None).unwrap();
    let b = eigendecompose(&op, s.npoints()).unwrap();
    (op, b)
}

#[test]
fn three_point_graph_against_closed_form_inverse() {
    let edges = [
        Edge { a: 0, b: 1, length: 1.0 },
        Edge { a: 1, b: 2, length: 0.5 },
    ];
    let sp = build_graph(&[1.0, 2.0, 3.0], &edges).unwrap();
    let op = assemble_laplacian(&sp, Scheme::GraphGaussian, None).unwrap();
    let b = eigendecompose(&op, 3).unwrap();
    let g = GreenFunction::assemble(&b, 0.0).unwrap();

    // S = Σ c_e (δ_a − δ_b)(δ_a − δ_b)ᵀ with c_e = 1/ℓ², and G = (S + w wᵀ)⁻¹ − 𝟙𝟙ᵀ
    // solves G S = I − 𝟙wᵀ, G w = 0.
    let w = [1.0 / 6.0, 2.0 / 6.0, 3.0 / 6.0];
    let mut m = DMatrix::from_fn(3, 3, |i, j| w[i] * w[j]);
    for e in &edges {
        let c = 1.0 / (e.length * e.length);
        m[(e.a, e.a)] += c;
        m[(e.b, e.b)] += c;
        m[(e.a, e.b)] -= c;
        m[(e.b, e.a)] -= c;
    }
    let inv = m.try_inverse().unwrap();
    let lib = pseudo_inverse_green(&op).unwrap();
    for x in 0..3 {
        for y in 0..3 {
            let oracle = inv[(x, y)] - 1.0;
            assert!((g.value(x, y) - oracle).abs() < 1e-10, "({x},{y})");
            assert!((lib[x * 3 + y] - oracle).abs() < 1e-10);
        }
    }
}

#[test]
fn green_action_on_random_functions() {
    let s = build_torus_grid(3, 10).unwrap();
    let (op, b) = full_basis(&s);
    let g = GreenFunction::assemble(&b, 0.0).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..50 {
        let f: Vec<f64> = (0..s.npoints()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let x = rng.gen_range(0..s.npoints());
        let r = verify_green_action(&op, &g, &f, x).unwrap();
        assert!(r < 1e-8, "{r:e}");
    }
}

#[test]
fn regularized_green_identities() {
    let s = build_torus_grid(3, 10).unwrap();
    let (op, b) = full_basis(&s);
    for eps in [0.001, 0.01, 0.1] {
        for x in [0usize, 123, 999] {
            let r = verify_green_laplacian(&op, &b, eps, x).unwrap();
            assert!(r < 1e-8, "eps={eps}: {r:e}");
            let r = verify_semigroup_identity(&b, eps, x).unwrap();
            assert!(r < 1e-10, "eps={eps}: {r:e}");
        }
    }
    assert!(verify_green_laplacian(&op, &b, 0.0, 0).is_err());
}

#[test]
fn time_integral_matches_spectral_sum() {
    let s = build_torus_grid(3, 10).unwrap();
    let (_, b) = full_basis(&s);
    for (x, y) in [(0usize, 1usize), (0, 555), (17, 404)] {
        let quad = green_time_integral(&b, x, y);
        let direct = green(&b, 0.0, x, y).unwrap();
        assert!((quad - direct).abs() < 1e-4, "({x},{y}): {quad} vs {direct}");
    }
}

#[test]
fn comparability_constants_near_flat_oracle() {
    let mut fitted = Vec::new();
    for res in [8usize, 10, 12] {
        let s = build_torus_grid(3, res).unwrap();
        let (_, b) = full_basis(&s);
        let g = Arc::new(GreenFunction::assemble(&b, 0.0).unwrap());
        // Nearest neighbours: G·d against 1/(4π) for the flat Newtonian kernel.
        let h = 1.0 / res as f64;
        let gd = g.value(0, 1) * h;
        assert!((0.04..=0.16).contains(&gd), "res {res}: G·d = {gd}");
        assert!((gd - 1.0 / (4.0 * PI)).abs() < 0.08);
        let sg = fit_comparability_constants(g.clone(), &s, 3.0).unwrap();
        assert!(sg.a.is_finite() && sg.a >= 1.0);
        assert!(sg.alpha > 0.0);
        for (x, y) in s.sample_pairs(200, res as u64) {
            let d = s.dist(x, y);
            let v = sg.value(x, y);
            assert!(v * d <= sg.a * (1.0 + 1e-12) && 1.0 / (v * d) <= sg.a * (1.0 + 1e-12));
        }
        let c = fit_slope_constant(&g, &s, 3.0, &[0, s.npoints() / 2]);
        assert!(c.is_finite() && c > 0.0);
        fitted.push(sg.a);
    }
    let (lo, hi) = fitted.iter().fold((f64::INFINITY, 0.0f64), |(l, h), a| (l.min(*a), h.max(*a)));
    assert!(hi <= 1.3 * lo, "{fitted:?}");
}

#[test]
fn comparability_rejects_two_dimensions() {
    let s = build_torus_grid(2, 8).unwrap();
    let b = default_basis(&s, 64, None).unwrap();
    let g = Arc::new(GreenFunction::assemble(&b, 0.0).unwrap());
    assert!(fit_comparability_constants(g, &s, 2.0).is_err());
}

#[test]
fn w1p_difference_decreases_with_epsilon() {
    let s = build_torus_grid(3, 8).unwrap();
    let b = default_basis(&s, s.npoints(), None).unwrap();
    let eps = [0.1, 0.03, 0.01, 0.003, 0.001, 0.0001];
    let rep = verify_w1p_convergence(&b, &s, 0, 2.0, &eps).unwrap();
    assert!(rep.strictly_decreasing, "{rep:?}");
    assert!(rep.rows.iter().all(|r| r.slope_ratio <= 1.0 + 1e-12));
    // ε = 0 reproduces G exactly.
    let zero = verify_w1p_convergence(&b, &s, 0, 2.0, &[0.0]).unwrap();
    assert_eq!(zero.rows[0].total(), 0.0);
    assert!(verify_w1p_convergence(&b, &s, 0, 0.5, &eps).is_err());
}
