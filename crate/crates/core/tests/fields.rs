use mmslab::fields::*;
use mmslab::green::GreenFunction;
use mmslab::space::chart::{self, Coords};
use mmslab::space::*;
use mmslab::spectral::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::f64::consts::PI;

fn torus(dims: usize, res: usize) -> (MetricMeasureSpace, GradientStencil) {
    let s = build_torus_grid(dims, res).unwrap();
    let st = GradientStencil::new(&s).unwrap();
    (s, st)
}

fn exact_basis(s: &MetricMeasureSpace) -> SpectralBasis {
    default_basis(s, s.npoints(), None).unwrap()
}

fn sup(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

fn random_trig(dims: usize, rng: &mut ChaCha8Rng) -> TrigPolynomial {
    let mut terms = Vec::new();
    for _ in 0..4 {
        let mut k = [0i64; 4];
        for a in 0..dims {
            k[a] = rng.gen_range(-2..=2);
        }
        let phase = if rng.gen_bool(0.5) { Phase::Cos } else { Phase::Sin };
        terms.push((
            FourierMode {
                k,
                phase,
                amplitude: 1.0,
            },
            rng.gen_range(-1.0..1.0),
        ));
    }
    TrigPolynomial::new(terms)
}

fn on_grid(s: &MetricMeasureSpace, f: &dyn SmoothFunction) -> Vec<f64> {
    s.coords().iter().map(|p| f.value(p)).collect()
}

fn corpus(s: &MetricMeasureSpace, basis: &SpectralBasis) -> Vec<VectorField> {
    let dims = s.chart().coord_len();
    let mut specs = vec![
        FieldSpec::Zero,
        FieldSpec::Constant {
            v: (0..dims).map(|a| 0.1 * (a as f64 + 1.0)).collect(),
        },
        FieldSpec::Shear {
            s: 0.5,
            smoothing: SHEAR_SMOOTHING,
        },
        FieldSpec::GradientHeat {
            mode: 3,
            tau: 0.05,
            amplitude: 1.0,
        },
    ];
    specs.push(FieldSpec::CdlSingular {
        alpha: 0.5,
        rho: 0.2,
        center: vec![0.5; dims],
    });
    specs
        .iter()
        .map(|sp| builtin_field(sp, s, Some(basis), 1.0).unwrap())
        .collect()
}

#[test]
fn constant_field_derivation_of_sine() {
    let (s, st) = torus(2, 24);
    let b = builtin_field(&FieldSpec::Constant { v: vec![0.8, -0.3] }, &s, None, 1.0).unwrap();
    let f: Vec<f64> = s.coords().iter().map(|p| (2.0 * PI * p[0]).sin()).collect();
    let bf = apply_derivation(&s, &st, &b, &f, 0.5).unwrap();
    let h = s.grid_spacing();
    let bound = (2.0 * PI).powi(3) * h * h / 6.0;
    for (x, v) in bf.iter().enumerate() {
        let exact = 2.0 * PI * 0.8 * (2.0 * PI * s.coord(x)[0]).cos();
        assert!((v - exact).abs() < bound);
    }
}

#[test]
fn derivation_of_constants_vanishes() {
    let (s, st) = torus(3, 8);
    let basis = exact_basis(&s);
    for b in corpus(&s, &basis) {
        let bf = apply_derivation(&s, &st, &b, &vec![2.5; s.npoints()], 0.0).unwrap();
        assert!(bf.iter().all(|v| *v == 0.0));
    }
}

#[test]
fn sphere_rotation_preserves_latitude() {
    let s = build_sphere_mesh(300).unwrap();
    let b = builtin_field(
        &FieldSpec::Rotation {
            axis: [0.0, 0.0, 1.0],
            speed: 2.0,
        },
        &s,
        None,
        1.0,
    )
    .unwrap();
    let lat = AmbientLinear {
        a: [0.0, 0.0, 1.0, 0.0],
    };
    let bf = apply_derivation_exact(&s, &b, &lat, 0.3).unwrap();
    assert!(sup(&bf) < 1e-14);
}

#[test]
fn leibniz_rule_on_closed_forms() {
    let (s, _) = torus(2, 16);
    let basis = exact_basis(&s);
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for b in corpus(&s, &basis) {
        for _ in 0..5 {
            let f = random_trig(2, &mut rng);
            let g = random_trig(2, &mut rng);
            let fg = f.product(&g);
            let lhs = apply_derivation_exact(&s, &b, &fg, 0.0).unwrap();
            let bf = apply_derivation_exact(&s, &b, &f, 0.0).unwrap();
            let bg = apply_derivation_exact(&s, &b, &g, 0.0).unwrap();
            for (x, p) in s.coords().iter().enumerate() {
                let rhs = f.value(p) * bg[x] + g.value(p) * bf[x];
                assert!((lhs[x] - rhs).abs() < 1e-8);
            }
        }
    }
}

#[test]
fn derivation_is_bounded_by_speed_times_gradient() {
    let (s, st) = torus(2, 16);
    let basis = exact_basis(&s);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let f = on_grid(&s, &random_trig(2, &mut rng));
    let grad = st.modulus(&f);
    for b in corpus(&s, &basis) {
        let bv = sample_field(&s, &b, 0.0).unwrap();
        let bf = apply_derivation(&s, &st, &b, &f, 0.0).unwrap();
        for x in 0..s.npoints() {
            assert!(bf[x].abs() <= chart::norm(&bv[x]) * grad[x] * (1.0 + 1e-12) + 1e-15);
        }
    }
}

#[test]
fn divergence_examples() {
    let (s, st) = torus(2, 16);
    let basis = exact_basis(&s);
    let c = builtin_field(&FieldSpec::Constant { v: vec![0.3, 0.0] }, &s, None, 1.0).unwrap();
    assert!(sup(&divergence(&s, &st, &c, 0.0).unwrap()) < 1e-12);
    let sh = builtin_field(
        &FieldSpec::Shear {
            s: 1.0,
            smoothing: 0.1,
        },
        &s,
        None,
        1.0,
    )
    .unwrap();
    assert!(sup(&divergence(&s, &st, &sh, 0.0).unwrap()) < 1e-12);

    // b = ∇u_1, div b = −λ_1 u_1
    let b = builtin_field(
        &FieldSpec::GradientHeat {
            mode: 1,
            tau: 0.0,
            amplitude: 1.0,
        },
        &s,
        Some(&basis),
        1.0,
    )
    .unwrap();
    let div = divergence(&s, &st, &b, 0.0).unwrap();
    let exact: Vec<f64> = basis
        .eigenfunction(1)
        .iter()
        .map(|u| -basis.eigenvalue(1) * u)
        .collect();
    let err: Vec<f64> = div.iter().zip(&exact).map(|(a, e)| a - e).collect();
    assert!(s.lp_norm(&err, 2.0) < 0.1 * s.lp_norm(&exact, 2.0));
}

#[test]
fn gradient_heat_divergence_matches_spectral_closed_form() {
    let (s, st) = torus(3, 12);
    let basis = exact_basis(&s);
    let tau = 0.02;
    let b = builtin_field(
        &FieldSpec::GradientHeat {
            mode: 5,
            tau,
            amplitude: 1.0,
        },
        &s,
        Some(&basis),
        1.0,
    )
    .unwrap();
    let lam = basis.eigenvalue(5);
    let exact: Vec<f64> = basis
        .eigenfunction(5)
        .iter()
        .map(|u| -lam * (-lam * tau).exp() * u)
        .collect();
    let div = divergence(&s, &st, &b, 0.0).unwrap();
    let err: Vec<f64> = div.iter().zip(&exact).map(|(a, e)| a - e).collect();
    assert!(s.lp_norm(&err, 2.0) < 0.1 * s.lp_norm(&exact, 2.0));
}

#[test]
fn chart_divergence_agrees_with_discrete_adjoint() {
    let (s, st) = torus(3, 8);
    let basis = exact_basis(&s);
    for b in corpus(&s, &basis) {
        let chart_div = divergence(&s, &st, &b, 0.0).unwrap();
        let adj = adjoint_divergence(&s, &st, &b, 0.0).unwrap();
        let err: Vec<f64> = chart_div.iter().zip(&adj).map(|(a, c)| a - c).collect();
        assert!(s.lp_norm(&err, 2.0) <= 0.05 * s.lp_norm(&chart_div, 2.0) + 1e-12);
    }
}

#[test]
fn adjoint_consistency_on_random_functions() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let (s, st) = torus(2, 16);
    let basis = exact_basis(&s);
    let mut fields: Vec<(MetricMeasureSpace, GradientStencil, VectorField)> = corpus(&s, &basis)
        .into_iter()
        .map(|b| (s.clone(), st.clone(), b))
        .collect();
    let sph = build_sphere_mesh(400).unwrap();
    let sst = GradientStencil::new(&sph).unwrap();
    let rot = builtin_field(
        &FieldSpec::Rotation {
            axis: [0.3, -0.2, 1.0],
            speed: 1.0,
        },
        &sph,
        None,
        1.0,
    )
    .unwrap();
    fields.push((sph, sst, rot));
    for (space, stencil, b) in &fields {
        let div = divergence(space, stencil, b, 0.0).unwrap();
        for _ in 0..100 {
            let f: Vec<f64> = if *space.chart() == Chart::Sphere {
                let c: Vec<f64> = (0..6).map(|_| rng.gen_range(-1.0..1.0)).collect();
                space
                    .coords()
                    .iter()
                    .map(|p| c[0] * p[0] + c[1] * p[1] + c[2] * p[2] + c[3] * p[0] * p[1] + c[4] * p[2] * p[2] + c[5])
                    .collect()
            } else {
                on_grid(space, &random_trig(2, &mut rng))
            };
            let r = adjoint_residual(space, stencil, b, &div, &f, 0.0).unwrap();
            assert!(r <= ADJOINT_GATE, "{}: {r}", b.name());
        }
    }
}

#[test]
fn symmetric_modulus_examples() {
    let sph = build_sphere_mesh(500).unwrap();
    let c = 1.7;
    let rot = builtin_field(
        &FieldSpec::Rotation {
            axis: [1.0, 2.0, 0.5],
            speed: c,
        },
        &sph,
        None,
        1.0,
    )
    .unwrap();
    let m = sym_derivative_modulus(&sph, &rot, 0.0, &SymMode::Chart).unwrap();
    assert!(sup(&m) <= 1e-3 * c);

    let (s, _) = torus(3, 8);
    let k = builtin_field(&FieldSpec::Constant { v: vec![0.1, 0.2, 0.3] }, &s, None, 1.0).unwrap();
    assert!(sup(&sym_derivative_modulus(&s, &k, 0.0, &SymMode::Chart).unwrap()) < 1e-8);

    // s·φ(x₂) with |φ'| = 1 away from the kinks: modulus s/2
    let (s2, _) = torus(2, 32);
    let sh = builtin_field(
        &FieldSpec::Shear {
            s: 0.6,
            smoothing: SHEAR_SMOOTHING,
        },
        &s2,
        None,
        1.0,
    )
    .unwrap();
    let m = sym_derivative_modulus(&s2, &sh, 0.0, &SymMode::Chart).unwrap();
    for (x, p) in s2.coords().iter().enumerate() {
        let v = p[1] - p[1].round();
        let kink = v.abs().min((0.5 - v.abs()).abs());
        if kink > SHEAR_SMOOTHING + s2.grid_spacing() {
            assert!((m[x] - 0.3).abs() < 0.05 * 0.3);
        }
    }
    assert!(sup(&m) <= 0.3 * (1.0 + 1e-12));
}

#[test]
fn singular_field_modulus_grows_at_the_core() {
    let ring = |res: usize| {
        let (s, _) = torus(3, res);
        let b = builtin_field(
            &FieldSpec::CdlSingular {
                alpha: 0.5,
                rho: 0.25,
                center: vec![0.5; 3],
            },
            &s,
            None,
            1.0,
        )
        .unwrap();
        let m = sym_derivative_modulus(&s, &b, 0.0, &SymMode::Chart).unwrap();
        let c = s.nearest_point(&[0.5, 0.5, 0.5, 0.0]);
        let h = s.grid_spacing();
        let r = (0..s.npoints())
            .filter(|&y| y != c && s.dist(c, y) < 1.01 * h)
            .map(|y| m[y])
            .fold(0.0, f64::max);
        (r, s.lp_norm(&m, 2.0))
    };
    let (r8, l8) = ring(8);
    let (r16, l16) = ring(16);
    // homogeneous of degree −α inside the core
    assert!((r16 / r8 - 2f64.sqrt()).abs() < 0.01 * 2f64.sqrt());
    assert!(l8.is_finite() && l16.is_finite());
    assert!((l16 / l8) < 1.5);
}

#[test]
fn scaling_is_exact_in_chart_mode() {
    let (s, st) = torus(2, 16);
    let basis = exact_basis(&s);
    for b in corpus(&s, &basis) {
        let lb = b.scaled(-2.5);
        let d1 = divergence(&s, &st, &b, 0.0).unwrap();
        let d2 = divergence(&s, &st, &lb, 0.0).unwrap();
        let m1 = sym_derivative_modulus(&s, &b, 0.0, &SymMode::Chart).unwrap();
        let m2 = sym_derivative_modulus(&s, &lb, 0.0, &SymMode::Chart).unwrap();
        for x in 0..s.npoints() {
            assert!((d2[x] + 2.5 * d1[x]).abs() <= 1e-12 * (1.0 + d1[x].abs()));
            assert!((m2[x] - 2.5 * m1[x]).abs() <= 1e-12 * (1.0 + m1[x]));
        }
    }
}

#[test]
fn isometric_fields_have_vanishing_moduli() {
    let (s, st) = torus(2, 16);
    let c = builtin_field(&FieldSpec::Constant { v: vec![0.3, 0.0] }, &s, None, 1.0).unwrap();
    let m = regularity_moduli(&s, &st, &c, &[0.0, 0.5, 1.0], &SymMode::Chart).unwrap();
    assert!((m.bounded_norm - 0.3).abs() < 1e-15);
    assert!(m.g_combined.iter().all(|g| sup(g) < 1e-12));
    assert_eq!(m.l2_time_integral, 0.0);

    let sph = build_sphere_mesh(500).unwrap();
    let sst = GradientStencil::new(&sph).unwrap();
    let rot = builtin_field(
        &FieldSpec::Rotation {
            axis: [0.0, 1.0, 1.0],
            speed: 1.0,
        },
        &sph,
        None,
        1.0,
    )
    .unwrap();
    let m = regularity_moduli(&sph, &sst, &rot, &[0.0, 1.0], &SymMode::Chart).unwrap();
    assert!(m.g_combined.iter().all(|g| sup(g) < 1e-3));
}

#[test]
fn pulsed_field_time_integral() {
    let (s, st) = torus(2, 16);
    let b = builtin_field(
        &FieldSpec::Shear {
            s: 1.0,
            smoothing: SHEAR_SMOOTHING,
        },
        &s,
        None,
        1.0,
    )
    .unwrap();
    let steady = regularity_moduli(&s, &st, &b, &[0.0, 0.5, 1.0], &SymMode::Chart).unwrap();
    let pulsed = b.clone().with_pulse(0.5, 2.0).unwrap();
    let times: Vec<f64> = (0..=200).map(|i| i as f64 / 200.0).collect();
    let m = regularity_moduli(&s, &st, &pulsed, &times, &SymMode::Chart).unwrap();
    // ∫₀¹ (1 + ½ sin πt) dt = 1 + 1/π
    let expected = steady.l2_time_integral * (1.0 + 1.0 / PI);
    assert!((m.l2_time_integral - expected).abs() < 1e-4 * expected);
    assert!(matches!(
        regularity_moduli(&s, &st, &b, &[0.0, 1.5], &SymMode::Chart),
        Err(mmslab::Error::TimeOutOfSpan { .. })
    ));
}

#[test]
fn probe_envelope_stays_close_to_chart_mode() {
    let (s, st) = torus(2, 24);
    let op = assemble_laplacian(&s, Scheme::TorusFourierExact, None).unwrap();
    let basis = eigendecompose(&op, s.npoints()).unwrap();
    let setup = ProbeSetup::new(&basis, &op, &st);
    for spec in [
        FieldSpec::Shear {
            s: 0.5,
            smoothing: SHEAR_SMOOTHING,
        },
        FieldSpec::GradientHeat {
            mode: 1,
            tau: 0.02,
            amplitude: 0.1,
        },
        FieldSpec::CdlSingular {
            alpha: 0.5,
            rho: 0.2,
            center: vec![0.5, 0.5],
        },
    ] {
        let b = builtin_field(&spec, &s, Some(&basis), 1.0).unwrap();
        let ch = sym_derivative_modulus(&s, &b, 0.0, &SymMode::Chart).unwrap();
        let pr = sym_derivative_modulus(&s, &b, 0.0, &SymMode::BilinearProbe(&setup)).unwrap();
        assert!(pr.iter().all(|v| *v >= 0.0));
        assert!(s.lp_norm(&pr, 2.0) <= 1.5 * s.lp_norm(&ch, 2.0), "{}", spec.name());
    }
    let c = builtin_field(&FieldSpec::Constant { v: vec![0.2, 0.1] }, &s, None, 1.0).unwrap();
    let pr = sym_derivative_modulus(&s, &c, 0.0, &SymMode::BilinearProbe(&setup)).unwrap();
    assert!(sup(&pr) < 1e-8);
}

#[test]
fn pair_kernel_estimate_examples() {
    let mut fitted = Vec::new();
    for res in [8usize, 12, 16] {
        let (s, _) = torus(3, res);
        let pairs = s.sample_pairs(300, 3);
        let r = verify_pair_kernel_estimate(&s, &vec![1.0; s.npoints()], 3.0, &pairs).unwrap();
        fitted.push(r.fitted_c);
        if res == 12 {
            assert!(r.fitted_c < 50.0);
            let zero = verify_pair_kernel_estimate(&s, &vec![0.0; s.npoints()], 3.0, &pairs).unwrap();
            assert_eq!(zero.fitted_c, 0.0);
            // tiny bump far from both points
            let x = s.nearest_point(&[0.1, 0.1, 0.1, 0.0]);
            let y = s.nearest_point(&[0.2, 0.1, 0.1, 0.0]);
            let z = s.nearest_point(&[0.6, 0.6, 0.6, 0.0]);
            let mut f = vec![0.0; s.npoints()];
            f[z] = 1.0;
            let tiny = verify_pair_kernel_estimate(&s, &f, 3.0, &[(x, y)]).unwrap();
            assert!(tiny.fitted_c < 0.1 * r.fitted_c);
        }
    }
    let (lo, hi) = fitted
        .iter()
        .fold((f64::INFINITY, 0.0f64), |(a, b), c| (a.min(*c), b.max(*c)));
    assert!(hi <= 2.0 * lo, "{fitted:?}");
}

#[test]
fn key_maximal_estimate_examples() {
    let (s, st) = torus(3, 12);
    let basis = exact_basis(&s);
    let green = GreenFunction::assemble(&basis, 0.0).unwrap();
    let pairs = s.sample_pairs(1000, 17);

    let c = builtin_field(&FieldSpec::Constant { v: vec![0.3, -0.2, 0.1] }, &s, None, 1.0).unwrap();
    let r = verify_key_maximal_estimate(&s, &st, &green, &c, 0.0, &pairs).unwrap();
    assert_eq!(r.degenerate_pairs, pairs.len());
    assert!(r.degenerate_lhs < 1e-10);

    let gh = builtin_field(
        &FieldSpec::GradientHeat {
            mode: 3,
            tau: 0.05,
            amplitude: 1.0,
        },
        &s,
        Some(&basis),
        1.0,
    )
    .unwrap();
    let r = verify_key_maximal_estimate(&s, &st, &green, &gh, 0.0, &pairs).unwrap();
    assert!(r.fitted_c > 0.0 && r.fitted_c < 100.0);

    let cdl = builtin_field(
        &FieldSpec::CdlSingular {
            alpha: 0.5,
            rho: 0.25,
            center: vec![0.5; 3],
        },
        &s,
        None,
        1.0,
    )
    .unwrap();
    let r = verify_key_maximal_estimate(&s, &st, &green, &cdl, 0.0, &pairs).unwrap();
    assert!(r.fitted_c.is_finite());
    assert!(r
        .lhs
        .iter()
        .zip(&r.rhs_without_c)
        .all(|(l, rr)| *l <= 1e3 * rr));
}

#[test]
fn field_specs_parse_from_toml() {
    #[derive(serde::Deserialize)]
    struct Wrap {
        field: FieldSpec,
    }
    let w: Wrap = toml::from_str(
        "field = { name = \"cdl_singular\", alpha = 0.5, rho = 0.25, center = [0.5, 0.5, 0.5] }",
    )
    .unwrap();
    assert_eq!(
        w.field,
        FieldSpec::CdlSingular {
            alpha: 0.5,
            rho: 0.25,
            center: vec![0.5; 3]
        }
    );
    let w: Wrap = toml::from_str("field = { name = \"shear\", s = 0.5 }").unwrap();
    assert_eq!(
        w.field,
        FieldSpec::Shear {
            s: 0.5,
            smoothing: SHEAR_SMOOTHING
        }
    );
    assert!(toml::from_str::<Wrap>("field = { name = \"shear\", s = 0.5, bogus = 1 }").is_err());
}

#[test]
fn lifted_moduli_match_base() {
    let base = build_torus_grid(2, 12).unwrap();
    let prod = build_product_with_circle(&base, 6).unwrap();
    let pst = GradientStencil::new(&prod).unwrap();
    let bst = GradientStencil::new(&base).unwrap();
    let b = builtin_field(
        &FieldSpec::CdlSingular {
            alpha: 0.5,
            rho: 0.2,
            center: vec![0.4, 0.5],
        },
        &base,
        None,
        1.0,
    )
    .unwrap();
    let bl = b.lift(&prod).unwrap();
    let db = divergence(&base, &bst, &b, 0.0).unwrap();
    let dl = divergence(&prod, &pst, &bl, 0.0).unwrap();
    let mb = sym_derivative_modulus(&base, &b, 0.0, &SymMode::Chart).unwrap();
    let ml = sym_derivative_modulus(&prod, &bl, 0.0, &SymMode::Chart).unwrap();
    for id in 0..prod.npoints() {
        let x = prod.project_to_base(id);
        assert!((dl[id] - db[x]).abs() < 1e-10);
        assert!((ml[id] - mb[x]).abs() < 1e-8);
    }
    let p: Coords = *prod.coord(7);
    assert_eq!(bl.value(&p, 0.0).unwrap()[2], 0.0);
}
