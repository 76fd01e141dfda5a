use mmslab::fields::*;
use mmslab::flows::io::{read_flow, read_flow_for, write_flow};
use mmslab::flows::*;
use mmslab::green::{fit_comparability_constants, GreenFunction};
use mmslab::space::chart::{self, Coords};
use mmslab::space::*;
use mmslab::spectral::{default_basis, default_k_max};
use mmslab::Error;
use std::sync::Arc;

fn grid(t: f64, n: usize) -> Vec<f64> {
    (0..=n).map(|k| t * k as f64 / n as f64).collect()
}

fn field(spec: FieldSpec, s: &MetricMeasureSpace, horizon: f64) -> VectorField {
    builtin_field(&spec, s, None, horizon).unwrap()
}

fn gradient_heat(s: &MetricMeasureSpace, amplitude: f64, horizon: f64) -> VectorField {
    let basis = default_basis(s, s.npoints(), None).unwrap();
    let spec = FieldSpec::GradientHeat {
        mode: 3,
        tau: 0.01,
        amplitude,
    };
    builtin_field(&spec, s, Some(&basis), horizon).unwrap()
}

fn cdl(s: &MetricMeasureSpace, alpha: f64, horizon: f64) -> VectorField {
    let dims = s.chart().coord_len();
    field(
        FieldSpec::CdlSingular {
            alpha,
            rho: 0.2,
            center: vec![0.5; dims],
        },
        s,
        horizon,
    )
}

fn rotation(s: &MetricMeasureSpace, horizon: f64) -> VectorField {
    field(
        FieldSpec::Rotation {
            axis: [0.0, 0.6, 0.8],
            speed: 1.5,
        },
        s,
        horizon,
    )
}

fn shifted_green(s: &MetricMeasureSpace, flow: &FlowMap) -> mmslab::green::ShiftedGreen {
    let basis = default_basis(s, default_k_max(s.npoints()), None).unwrap();
    let g = Arc::new(GreenFunction::assemble(&basis, 0.0).unwrap());
    fit_comparability_constants(g, s, 3.0)
        .unwrap()
        .with_mapping_margin(s, flow.snap_distance(s))
}

#[test]
fn constant_field_is_integrated_exactly() {
    let s = build_torus_grid(2, 16).unwrap();
    let b = field(FieldSpec::Constant { v: vec![0.3, -0.7] }, &s, 1.0);
    let flow = integrate_flow(&s, &b, &grid(1.0, 10), 0.01).unwrap();
    for x in 0..s.npoints() {
        for (k, t) in grid(1.0, 10).into_iter().enumerate() {
            let exact = b.exact_flow(s.coord(x), t).unwrap();
            assert!(s.chart().distance(&exact, flow.position(x, k)) < 1e-12);
        }
    }
}

#[test]
fn sphere_rotation_preserves_pair_distances() {
    let s = build_sphere_mesh(300).unwrap();
    let b = rotation(&s, 1.0);
    let flow = integrate_flow(&s, &b, &grid(1.0, 10), 0.005).unwrap();
    for (x, y) in s.sample_pairs(1000, 4) {
        for k in 0..11 {
            let d = s.chart().distance(flow.position(x, k), flow.position(y, k));
            assert!((d - s.dist(x, y)).abs() < 1e-6);
        }
    }
    for x in 0..s.npoints() {
        let exact = b.exact_flow(s.coord(x), 1.0).unwrap();
        assert!(s.chart().distance(&exact, flow.position(x, 10)) < 1e-9);
    }
    assert!(flow.compressibility().unwrap() <= 1.0 + BIN_TOLERANCE);
}

fn max_error(a: &[Coords], b: &[Coords], c: &chart::Chart) -> f64 {
    a.iter().zip(b).map(|(p, q)| c.distance(p, q)).fold(0.0, f64::max)
}

#[test]
fn integrator_is_fourth_order() {
    let s = build_torus_grid(2, 16).unwrap();
    let b = gradient_heat(&s, 0.05, 1.0);
    let t = grid(1.0, 4);
    for p in [[0.13, 0.71, 0.0, 0.0], [0.42, 0.05, 0.0, 0.0], [0.88, 0.37, 0.0, 0.0]] {
        let coarse = integrate_point(&b, &p, &t, 0.125).unwrap();
        let fine = integrate_point(&b, &p, &t, 0.0625).unwrap();
        let reference = integrate_point(&b, &p, &t, 0.0078125).unwrap();
        let e1 = max_error(&coarse, &reference, s.chart());
        let e2 = max_error(&fine, &reference, s.chart());
        assert!(e1 / e2 >= 8.0, "start {p:?}: {e1:e} / {e2:e}");
    }
}

#[test]
fn rlf_gate_passes_for_builtin_fields() {
    let t2 = build_torus_grid(2, 16).unwrap();
    let t3 = build_torus_grid(3, 8).unwrap();
    let sphere = build_sphere_mesh(200).unwrap();
    let t = grid(0.5, 10);
    let cases: Vec<(&MetricMeasureSpace, VectorField)> = vec![
        (&t2, field(FieldSpec::Zero, &t2, 0.5)),
        (&t2, field(FieldSpec::Constant { v: vec![0.2, 0.1] }, &t2, 0.5)),
        (&t2, field(FieldSpec::Shear { s: 0.5, smoothing: 0.05 }, &t2, 0.5)),
        (&t2, gradient_heat(&t2, 0.05, 0.5)),
        (&t2, cdl(&t2, 0.5, 0.5)),
        (&t3, cdl(&t3, 0.5, 0.5)),
        (&sphere, rotation(&sphere, 0.5)),
    ];
    for (s, b) in cases {
        let flow = integrate_flow(s, &b, &t, 1e-3).unwrap();
        let r = flow.rlf_residual().unwrap();
        assert!(r.passed, "{}: {r:?}", b.name());
    }
}

#[test]
fn compressibility_examples() {
    let s = build_torus_grid(2, 16).unwrap();
    let t = grid(0.5, 10);
    let l = integrate_flow(&s, &cdl(&s, 0.5, 0.5), &t, 1e-3).unwrap().compressibility().unwrap();
    assert!(l <= 1.3, "cdl L = {l}");
    let b = field(FieldSpec::Constant { v: vec![0.13, 0.07] }, &s, 0.5);
    let l = integrate_flow(&s, &b, &t, 1e-3).unwrap().compressibility().unwrap();
    assert!(l <= 1.0 + BIN_TOLERANCE, "translation L = {l}");

    let g = gradient_heat(&s, 0.05, 0.5);
    let l1 = integrate_flow(&s, &g, &t, 2e-3).unwrap().compressibility().unwrap();
    let l2 = integrate_flow(&s, &g, &t, 1e-3).unwrap().compressibility().unwrap();
    assert!(l1.is_finite() && l1 > 1.0);
    assert!((l1 - l2).abs() <= 0.2 * l2);
}

#[test]
fn identity_and_isometry_functionals() {
    let s = build_torus_grid(3, 8).unwrap();
    let t = grid(1.0, 2);
    let zero = integrate_flow(&s, &field(FieldSpec::Zero, &s, 1.0), &t, 0.01).unwrap();
    let green = shifted_green(&s, &zero);
    let a = green.a;
    let bound = (1.0 + 1.0 / a).ln();
    let rg = default_r_grid(&s, 12);
    for &r in &rg {
        let q = q_functional(&zero, &s, 0.0, r, a, 3.0).unwrap();
        assert!(q.values.iter().all(|v| *v <= bound + 1e-15));
        let phi = phi_functional(&zero, &s, &green, 0.0, r).unwrap();
        assert!(phi.values.iter().all(|v| *v <= (1.0 + a).ln() + 1e-12));
    }
    let q = q_star(&zero, &s, &rg, a, 3.0).unwrap();
    assert!(q.values.iter().all(|v| *v <= bound + 1e-15));

    // Two lattice cells per half unit of time: snapped nodes translate exactly.
    let b = field(FieldSpec::Constant { v: vec![0.25, 0.0, 0.0] }, &s, 1.0);
    let moved = integrate_flow(&s, &b, &t, 0.01).unwrap();
    let green = shifted_green(&s, &moved);
    let a = green.a;
    for &r in &rg[..4] {
        let q0 = q_functional(&moved, &s, 0.0, r, a, 3.0).unwrap();
        let p0 = phi_functional(&moved, &s, &green, 0.0, r).unwrap();
        for &tt in &[0.5, 1.0] {
            let q = q_functional(&moved, &s, tt, r, a, 3.0).unwrap();
            let p = phi_functional(&moved, &s, &green, tt, r).unwrap();
            for x in 0..s.npoints() {
                assert!((q.values[x] - q0.values[x]).abs() < 1e-12);
                assert!((p.values[x] - p0.values[x]).abs() < 1e-9);
            }
        }
    }
    let q = q_star(&moved, &s, &rg, a, 3.0).unwrap();
    for x in 0..s.npoints() {
        assert!((q.values[x] - q.at_start[x]).abs() < 1e-6);
    }
}

#[test]
fn q_never_exceeds_phi() {
    let s = build_torus_grid(3, 8).unwrap();
    let t = grid(0.5, 10);
    for b in [cdl(&s, 0.5, 0.5), gradient_heat(&s, 0.1, 0.5)] {
        let flow = integrate_flow(&s, &b, &t, 1e-3).unwrap();
        let green = shifted_green(&s, &flow);
        let rep = verify_q_le_phi(&flow, &s, &green, 1000, 3).unwrap();
        assert_eq!(rep.samples, 1000);
        assert_eq!(rep.violations, 0, "{}: {rep:?}", b.name());
        assert!(rep.worst_gap <= 1e-12);
    }
}

#[test]
fn cdl_q_peaks_at_the_singularity() {
    let s = build_torus_grid(3, 12).unwrap();
    let b = cdl(&s, 0.5, 0.5);
    let flow = integrate_flow(&s, &b, &grid(0.5, 10), 1e-3).unwrap();
    let green = shifted_green(&s, &flow);
    let q = q_functional(&flow, &s, 0.5, 0.1, green.a, 3.0).unwrap();
    let q0 = q_functional(&flow, &s, 0.0, 0.1, green.a, 3.0).unwrap();
    let c = [0.5, 0.5, 0.5, 0.0];
    let peak = (0..s.npoints())
        .max_by(|&i, &j| q.values[i].total_cmp(&q.values[j]))
        .unwrap();
    assert!(s.dist_to_point(&c, peak) < 0.4, "peak at {:?}", s.coord(peak));
    for x in 0..s.npoints() {
        if s.dist_to_point(&c, x) >= 0.4 {
            assert!(q.values[x] <= 2.0 * q0.values[x]);
        }
    }
}

#[test]
fn qstar_bound_examples() {
    let s = build_torus_grid(3, 8).unwrap();
    let st = GradientStencil::new(&s).unwrap();
    let t = grid(0.5, 10);
    let rg = default_r_grid(&s, 12);
    let run = |b: &VectorField| {
        let flow = integrate_flow(&s, b, &t, 1e-3).unwrap();
        let green = shifted_green(&s, &flow);
        let q = q_star(&flow, &s, &rg, green.a, 3.0).unwrap();
        let m = regularity_moduli(&s, &st, b, &t, &SymMode::Chart).unwrap();
        (verify_qstar_bound(&q, &m, flow.compressibility().unwrap()).unwrap(), green.a)
    };
    let (zero, a) = run(&field(FieldSpec::Zero, &s, 0.5));
    assert_eq!(zero.budget, 0.0);
    assert!(zero.ratio <= (1.0 + 1.0 / a).ln());

    let ratios: Vec<f64> = [0.25, 0.5, 1.0]
        .iter()
        .map(|&sh| run(&field(FieldSpec::Shear { s: sh, smoothing: 0.05 }, &s, 0.5)).0.ratio)
        .collect();
    let (lo, hi) = ratios.iter().fold((f64::INFINITY, 0.0f64), |(l, h), r| (l.min(*r), h.max(*r)));
    assert!(hi / lo < 2.0, "{ratios:?}");
    for alpha in [0.3, 0.5] {
        assert!(run(&cdl(&s, alpha, 0.5)).0.ratio.is_finite());
    }
}

#[test]
fn green_derivative_along_flow() {
    let s = build_torus_grid(3, 8).unwrap();
    let basis = default_basis(&s, s.npoints(), None).unwrap();
    let t = grid(0.2, 20);
    let pairs = s.sample_pairs(100, 8);

    let zero = field(FieldSpec::Zero, &s, 0.2);
    let flow = integrate_flow(&s, &zero, &t, 1e-3).unwrap();
    let rep = verify_green_derivative_along_flow(&flow, &s, &basis, 0.01, &zero, &pairs).unwrap();
    assert!(rep.lhs.iter().chain(&rep.rhs).all(|v| *v == 0.0));

    let c = field(FieldSpec::Constant { v: vec![0.3, 0.1, -0.2] }, &s, 0.2);
    let flow = integrate_flow(&s, &c, &t, 1e-3).unwrap();
    let rep = verify_green_derivative_along_flow(&flow, &s, &basis, 0.01, &c, &pairs).unwrap();
    assert!(rep.lhs.iter().all(|v| v.abs() < 1e-9));
    assert!(rep.rhs.iter().all(|v| v.abs() < 1e-9));

    let g = gradient_heat(&s, 0.1, 0.2);
    let flow = integrate_flow(&s, &g, &t, 1e-3).unwrap();
    let rep = verify_green_derivative_along_flow(&flow, &s, &basis, 0.01, &g, &pairs).unwrap();
    assert!(rep.pass_rate >= 0.95, "{} of {}", rep.passed, rep.checked);
}

#[test]
fn lusin_sets_and_lipschitz_bound() {
    let s = build_torus_grid(3, 8).unwrap();
    let t = grid(0.5, 10);
    let rg = default_r_grid(&s, 12);

    let zero = integrate_flow(&s, &field(FieldSpec::Zero, &s, 0.5), &t, 1e-3).unwrap();
    let green = shifted_green(&s, &zero);
    let q = q_star(&zero, &s, &rg, green.a, 3.0).unwrap();
    let rep = lusin_set(&q, &s, 0.1).unwrap();
    assert!(rep.retained.iter().all(|r| *r));
    let rep = verify_lipschitz_on_set(&zero, &s, rep, &q, 20000, 1).unwrap();
    assert_eq!(rep.violations, 0);
    assert!((rep.worst_pair.unwrap().ratio - 1.0).abs() < 1e-12);

    let flow = integrate_flow(&s, &cdl(&s, 0.5, 0.5), &t, 1e-3).unwrap();
    let green = shifted_green(&s, &flow);
    let q = q_star(&flow, &s, &rg, green.a, 3.0).unwrap();
    let mut last: Option<Vec<bool>> = None;
    for eps in [0.9, 0.5, 0.1, 0.01] {
        let rep = lusin_set(&q, &s, eps).unwrap();
        let excluded: f64 = (0..s.npoints()).filter(|&i| !rep.retained[i]).map(|i| s.weight(i)).sum();
        assert!(excluded < eps);
        if let Some(prev) = &last {
            // Smaller ε retains a superset.
            assert!(prev.iter().zip(&rep.retained).all(|(p, r)| !*p || *r));
        }
        last = Some(rep.retained.clone());
    }
    let rep = lusin_set(&q, &s, 0.1).unwrap();
    let rep = verify_lipschitz_on_set(&flow, &s, rep, &q, 20000, 1).unwrap();
    assert_eq!(rep.violations, 0);
    let lip = rep.lip_constant.unwrap();
    assert!(lip.is_finite());
    assert!(rep.worst_pair.unwrap().ratio < lip);
    assert!(rep.fitted_c.unwrap() >= 1.0);
}

#[test]
fn lift_of_zero_field_is_trivial() {
    let s = build_torus_grid(2, 8).unwrap();
    let b = field(FieldSpec::Zero, &s, 0.5);
    let cfg = LiftConfig {
        phi_samples: 200,
        ..LiftConfig::default()
    };
    let rep = lift_and_verify_n2(&s, &b, &grid(0.5, 4), 8, &cfg).unwrap();
    assert!(rep.eigen_gap.unwrap() < 1e-8);
    assert!(rep.product.retained.iter().all(|r| *r));
    assert!(rep.base_retained.iter().all(|r| *r));
    assert_eq!(rep.base_excluded_mass, 0.0);
    assert_eq!(rep.projection_gap, 0.0);
    assert_eq!(rep.circle_drift, 0.0);
    assert_eq!(rep.q_le_phi.violations, 0);
}

#[test]
fn lifted_spectrum_tensorizes() {
    let base = build_torus_grid(2, 8).unwrap();
    let s = build_product_with_circle(&base, 8).unwrap();
    let lam = default_basis(&s, s.npoints(), None).unwrap();
    let lb = default_basis(&base, base.npoints(), None).unwrap();
    let lc = default_basis(&build_torus_grid(1, 8).unwrap(), 8, None).unwrap();
    let mut sums: Vec<f64> = Vec::new();
    for i in 0..lb.len() {
        for k in 0..lc.len() {
            sums.push(lb.eigenvalue(i) + lc.eigenvalue(k));
        }
    }
    sums.sort_by(f64::total_cmp);
    for (i, v) in sums.iter().enumerate() {
        assert!((lam.eigenvalue(i) - v).abs() < 1e-8 * v.max(1.0));
    }
    // First base mode plus first circle mode.
    let four_pi2 = 4.0 * std::f64::consts::PI * std::f64::consts::PI;
    assert!((lb.eigenvalue(1) - four_pi2).abs() < 1e-9, "{}", lb.eigenvalue(1));
    assert!(sums.iter().any(|v| (v - 2.0 * four_pi2).abs() < 1e-9));
}

#[test]
fn flow_cache_roundtrip() {
    let s = build_torus_grid(2, 8).unwrap();
    let b = gradient_heat(&s, 0.05, 0.5);
    let flow = integrate_flow(&s, &b, &grid(0.5, 5), 5e-3).unwrap();
    let text = write_flow(&flow);
    let back = read_flow_for(&s, &text).unwrap();
    assert_eq!(back.times(), flow.times());
    assert_eq!(back.starts(), flow.starts());
    for i in 0..flow.len() {
        assert_eq!(back.trajectory(i), flow.trajectory(i));
    }
    assert_eq!(back.integrator(), flow.integrator());
    assert_eq!(write_flow(&back), text);

    let tampered = text.replacen("e-1", "e-2", 1);
    assert!(matches!(read_flow(&tampered), Err(Error::Checksum { .. })));
    let versioned = text.replacen("mms-flow v1", "mms-flow v2", 1);
    assert!(read_flow(&versioned).is_err());
    let other = build_torus_grid(2, 10).unwrap();
    assert!(matches!(read_flow_for(&other, &text), Err(Error::DimensionMismatch { .. })));
}
