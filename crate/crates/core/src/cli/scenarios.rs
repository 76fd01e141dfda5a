use super::config::{ExperimentConfig, Numerics, Scenario, SpaceSpec};
use super::Run;
use crate::error::{Error, Result};
use crate::fields::{
    builtin_field, regularity_moduli, verify_key_maximal_estimate, verify_pair_kernel_estimate, FieldSpec,
    SymMode, VectorField,
};
use crate::flows::{
    default_r_grid, lift_and_verify_n2, lusin_set, q_star, verify_green_derivative_along_flow,
    verify_lipschitz_on_set, verify_q_le_phi, verify_qstar_bound, FlowMap, LiftConfig,
};
use crate::green::{
    fit_comparability_constants, fit_slope_constant, green, green_time_integral, pseudo_inverse_green,
    verify_green_action, verify_green_laplacian, verify_semigroup_identity, verify_w1p_convergence,
    GreenFunction,
};
use crate::space::chart::Chart;
use crate::space::{
    build_graph, build_product_with_circle, check_ahlfors, default_ahlfors_radii, distance_power_integral,
    maximal_function, Edge, GradientStencil, MetricMeasureSpace,
};
use crate::spectral::{
    assemble_laplacian, default_k_max, eigenfunction_bounds, heat_kernel, heat_kernel_row, heat_trace,
    theta_circle, verify_bakry_emery, verify_gaussian_bounds, LaplacianOperator, Scheme, SpectralBasis,
};
use crate::transport::{
    continuity_equation_solve, verify_contraction, verify_geodesic_differentiation, verify_joint_derivative,
    verify_w2_derivative, verify_weak_continuity, Atoms, CeMethod, DiscreteMeasure,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::fmt::Write as _;
use std::sync::Arc;

/// Largest space that gets a complete basis by default.
const COMPLETE_BASIS_LIMIT: usize = 2000;
/// Joint support budget for the Gaussian pair of the contraction checks.
const GAUSSIAN_SUPPORT: usize = 250;

pub(super) fn dispatch(run: &mut Run, cfg: &ExperimentConfig, numerics: &Numerics) -> Result<()> {
    if cfg.scenario == Scenario::FullSuite {
        full_suite(run, numerics);
        return Ok(());
    }
    let spec = cfg.space.as_ref().expect("validated");
    let space = spec.build()?;
    let field = cfg.field.as_ref();
    match cfg.scenario {
        Scenario::HeatKernelCheck => heat(run, &space, numerics),
        Scenario::GreenCheck => green_check(run, &space, numerics),
        Scenario::MaximalEstimates => maximal(run, &space, field.expect("validated"), numerics),
        Scenario::Contraction => contraction(run, &space, field.expect("validated"), numerics),
        Scenario::LusinRegularity => {
            if space.dimension() == Some(2) && !matches!(spec, SpaceSpec::Product { .. }) {
                run.note("two-dimensional space: lusin-regularity runs through the S¹ lift");
                n2_lift(run, &space, field.expect("validated"), numerics)
            } else {
                lusin(run, &space, field.expect("validated"), numerics)
            }
        }
        Scenario::N2Lift => n2_lift(run, &space, field.expect("validated"), numerics),
        Scenario::FullSuite => unreachable!(),
    }
    Ok(())
}

fn dimension(space: &MetricMeasureSpace) -> Result<usize> {
    space.dimension().ok_or(Error::UnsupportedChart {
        op: "dimension-dependent check",
        chart: space.chart().tag(),
    })
}

fn operator(space: &MetricMeasureSpace) -> Result<LaplacianOperator> {
    if space.chart().lattice().is_some() {
        assemble_laplacian(space, Scheme::TorusFourierExact, None)
    } else if space.chart().has_coordinates() {
        assemble_laplacian(space, Scheme::GraphGaussian, Some(2.0 * space.grid_spacing()))
    } else {
        assemble_laplacian(space, Scheme::GraphGaussian, None)
    }
}

fn k_default(space: &MetricMeasureSpace, numerics: &Numerics) -> usize {
    numerics.k_max.unwrap_or_else(|| default_k_max(space.npoints()))
}

/// Complete basis for small spaces, `k_max` otherwise.
fn k_complete(space: &MetricMeasureSpace, numerics: &Numerics) -> usize {
    numerics.k_max.unwrap_or(if space.npoints() <= COMPLETE_BASIS_LIMIT {
        space.npoints()
    } else {
        default_k_max(space.npoints())
    })
}

fn field_for(
    run: &mut Run,
    spec: &FieldSpec,
    space: &MetricMeasureSpace,
    numerics: &Numerics,
    horizon: f64,
) -> Result<VectorField> {
    let basis = match spec {
        FieldSpec::GradientHeat { .. } => Some(run.basis(space, k_default(space, numerics))?),
        _ => None,
    };
    builtin_field(spec, space, basis.as_ref(), horizon)
}

fn field_key(spec: &FieldSpec) -> String {
    format!("{spec:?}")
}

fn uniform_grid(horizon: f64, intervals: usize) -> Vec<f64> {
    (0..=intervals).map(|k| horizon * k as f64 / intervals as f64).collect()
}

fn fine_step(step: f64, grid: &[f64]) -> f64 {
    step.min(grid[1] - grid[0])
}

fn max_abs(values: impl IntoIterator<Item = f64>) -> f64 {
    values.into_iter().fold(0.0, |m, v| m.max(v.abs()))
}

fn random_points(space: &MetricMeasureSpace, count: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    (0..count).map(|_| rng.gen_range(0..space.npoints())).collect()
}

// ---------------------------------------------------------------- heat

fn heat(run: &mut Run, space: &MetricMeasureSpace, numerics: &Numerics) {
    let basis = match run.basis(space, k_default(space, numerics)) {
        Ok(b) => b,
        Err(e) => {
            run.step("basis", |_| Err(e));
            return;
        }
    };
    let n = space.npoints();
    let h = space.grid_spacing();
    let times: Vec<f64> = [0.001, 0.005, 0.01, 0.05, 0.1, 0.5].into_iter().filter(|t| *t >= 0.5 * h * h).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(run.seed);
    let probes = random_points(space, 4, &mut rng);

    run.step("trace-identity", |run| {
        let mut worst: f64 = 0.0;
        let mut csv = String::from("t,trace\n");
        for &t in &times {
            let diag: f64 = (0..n).map(|x| Ok(heat_kernel(&basis, t, x, x)? * space.weight(x))).sum::<Result<f64>>()?;
            let tr = heat_trace(&basis, t);
            worst = worst.max((diag - tr).abs() / tr.max(1.0));
            let _ = writeln!(csv, "{t:.6e},{tr:.16e}");
        }
        run.series("heat_trace", csv);
        run.row("trace-identity", "sum of p_t(x,x) m(x) equals sum of e^{-lambda_i t}", worst, worst < 1e-9, "residual<1e-9");
        Ok(())
    });

    run.step("chapman-kolmogorov", |run| {
        let mut worst: f64 = 0.0;
        for w in times.windows(2) {
            let (t, u) = (w[0], w[1]);
            for (&x, &y) in probes.iter().zip(probes.iter().rev()) {
                let px = heat_kernel_row(&basis, t, x)?;
                let py = heat_kernel_row(&basis, u, y)?;
                let conv: f64 = (0..n).map(|z| px[z] * py[z] * space.weight(z)).sum();
                let direct = heat_kernel(&basis, t + u, x, y)?;
                worst = worst.max((conv - direct).abs() / direct.abs().max(1.0));
            }
        }
        run.row("chapman-kolmogorov", "p_{t+s} = p_t * p_s", worst, worst < 1e-9, "residual<1e-9");
        Ok(())
    });

    run.step("mass-conservation", |run| {
        let mut worst: f64 = 0.0;
        for &t in &times {
            for &x in &probes {
                let mass = space.integrate(&heat_kernel_row(&basis, t, x)?);
                worst = worst.max((mass - 1.0).abs());
            }
        }
        run.row("mass-conservation", "integral of p_t(x,.) equals 1", worst, worst < 1e-9, "residual<1e-9");
        Ok(())
    });

    if let Chart::Torus { dims: 1, resolution } = *space.chart() {
        if basis.is_complete() {
            run.step("theta-oracle", |run| {
                let t = 0.01;
                let gap = max_abs((0..resolution).step_by((resolution / 8).max(1)).map(|y| {
                    let d = y as f64 / resolution as f64;
                    heat_kernel(&basis, t, 0, y).unwrap_or(f64::NAN) - theta_circle(t, d)
                }));
                run.row("theta-oracle", "circle kernel equals the theta sum", gap, gap < 1e-6, "abs<1e-6");
                Ok(())
            });
        }
    }

    let pairs = space.sample_pairs(numerics.pairs.min(500), run.seed);
    let kernel_t: Vec<f64> = times.iter().copied().filter(|t| *t <= 0.1 && *t >= 4.0 * h * h).collect();
    let kernel = {
        let mut out = None;
        run.step("gaussian-bounds", |run| {
            let rep = verify_gaussian_bounds(&basis, space, &kernel_t, &pairs)?;
            let anchor = "two-sided Gaussian heat kernel bounds";
            run.row("gaussian-c1", anchor, rep.c1, rep.c1.is_finite() && !rep.positivity_violation, "finite, p_t>=0 for t>=h^2");
            run.info("gaussian-c3", anchor, rep.c3);
            run.row("gradient-c2", "Gaussian gradient bound", rep.c2, rep.c2.is_finite(), "finite");
            run.info("mass-residual", "heat kernel mass on sampled rows", rep.mass_residual);
            if let Some(dev) = rep.closed_form_deviation {
                run.info("theta-product-deviation", "relative gap to the theta product", dev);
            }
            out = Some(rep);
            Ok(())
        });
        out
    };

    let Ok(dim) = dimension(space) else {
        run.note("graph chart: Ahlfors, Bakry-Emery and eigenfunction checks skipped");
        return;
    };
    let ahlfors = {
        let mut out = None;
        run.step("ahlfors", |run| {
            let radii = default_ahlfors_radii(space, 10);
            let ids = random_points(space, 32.min(n), &mut ChaCha8Rng::seed_from_u64(run.seed ^ 1));
            let rep = check_ahlfors(space, dim as f64, &radii, &ids)?;
            let anchor = "Ahlfors regularity c1 r^n <= m(B) <= c2 r^n";
            run.info("ahlfors-c1", anchor, rep.c1);
            run.info("ahlfors-c2", anchor, rep.c2);
            run.row("doubling", "volume doubling m(B(x,2r)) <= c_D m(B(x,r))", rep.c_doubling, !rep.flagged, "c2/c1<=100");
            out = Some(rep);
            Ok(())
        });
        out
    };

    let exact = basis.scheme() == Scheme::TorusFourierExact;
    let curvature = if matches!(space.chart(), Chart::Sphere) { 1.0 } else { 0.0 };
    run.step("bakry-emery", |run| {
        let mut rng = ChaCha8Rng::seed_from_u64(run.seed ^ 2);
        // Band-limited samples keep |grad f|^2 inside the span of the basis.
        let cut = basis.eigenvalues().get(basis.len() / 4).copied().unwrap_or(0.0);
        let fs: Vec<Vec<f64>> = (0..4)
            .map(|_| {
                let c: Vec<f64> =
                    (0..basis.len()).map(|i| if basis.eigenvalue(i) <= cut { rng.gen_range(-1.0..1.0) } else { 0.0 }).collect();
                basis.synthesize(&c)
            })
            .collect();
        let rep = verify_bakry_emery(&basis, space, curvature, &fs, &[0.001, 0.01, 0.05])?;
        let anchor = "|grad P_t f|^2 <= e^{-2Kt} P_t |grad f|^2";
        let ok = rep.worst_relative < 1e-8;
        if exact && rep.gradient_source == "exact-fourier" {
            run.row("bakry-emery", anchor, rep.worst_relative, ok, "relative excess<1e-8");
        } else {
            run.diagnostic("bakry-emery", anchor, rep.worst_relative, ok, "relative excess<1e-8");
        }
        Ok(())
    });

    if let (Some(ahlfors), Some(kernel)) = (ahlfors, kernel) {
        run.step("eigenfunction-bounds", |run| {
            let rep = eigenfunction_bounds(&basis, space, dim as f64, curvature, &ahlfors, &kernel)?;
            let mut csv = String::from("index,eigenvalue,sup_norm,gradient_sup\n");
            for (i, r) in rep.rows.iter().enumerate() {
                let _ = writeln!(csv, "{i},{:.16e},{:.16e},{:.16e}", r.eigenvalue, r.sup_norm, r.gradient_sup);
            }
            run.series("eigenfunctions", csv);
            let sup = "eigenfunction sup bound from heat kernel constants";
            let grad = "eigenfunction gradient bound from heat kernel constants";
            if exact {
                run.row("eigenfunction-sup", sup, rep.max_sup_ratio, rep.max_sup_ratio <= 1.0, "ratio<=1");
                run.row("eigenfunction-gradient", grad, rep.max_gradient_ratio, rep.max_gradient_ratio <= 1.0, "ratio<=1 (with factor e)");
            } else {
                run.diagnostic("eigenfunction-sup", sup, rep.max_sup_ratio, rep.max_sup_ratio <= 1.0, "ratio<=1");
                run.diagnostic("eigenfunction-gradient", grad, rep.max_gradient_ratio, rep.max_gradient_ratio <= 1.0, "ratio<=1 (with factor e)");
            }
            run.info("eigenfunction-gradient-without-e", grad, rep.max_gradient_ratio_without_e);
            Ok(())
        });
    }
}

// ---------------------------------------------------------------- green

fn three_point_oracle(run: &mut Run) -> Result<()> {
    let edges = [Edge { a: 0, b: 1, length: 1.0 }, Edge { a: 1, b: 2, length: 0.5 }];
    let sp = build_graph(&[1.0, 2.0, 3.0], &edges)?;
    let op = assemble_laplacian(&sp, Scheme::GraphGaussian, None)?;
    let basis = crate::spectral::eigendecompose(&op, 3)?;
    let g = GreenFunction::assemble(&basis, 0.0)?;
    let inv = pseudo_inverse_green(&op)?;
    let gap = max_abs((0..9).map(|i| g.value(i / 3, i % 3) - inv[i]));
    run.row("pseudo-inverse-oracle", "G equals the pseudo-inverse of -Delta on mean-zero functions", gap, gap < 1e-10, "abs<1e-10");
    Ok(())
}

fn green_check(run: &mut Run, space: &MetricMeasureSpace, numerics: &Numerics) {
    let prepared = (|| -> Result<(LaplacianOperator, SpectralBasis)> {
        let op = operator(space)?;
        let basis = run.basis(space, k_complete(space, numerics))?;
        Ok((op, basis))
    })();
    let (op, basis) = match prepared {
        Ok(p) => p,
        Err(e) => {
            run.step("basis", |_| Err(e));
            return;
        }
    };
    let g = match GreenFunction::assemble(&basis, 0.0) {
        Ok(g) => Arc::new(g),
        Err(e) => {
            run.step("green-assemble", |_| Err(e));
            return;
        }
    };
    let n = space.npoints();
    let eps = if numerics.green_epsilon > 0.0 { numerics.green_epsilon } else { 0.01 };

    run.step("green-action", |run| {
        let mut rng = ChaCha8Rng::seed_from_u64(run.seed);
        let mut worst: f64 = 0.0;
        for _ in 0..50 {
            let f: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let x = rng.gen_range(0..n);
            worst = worst.max(verify_green_action(&op, &g, &f, x)?);
        }
        let anchor = "integral of G(x,.) Delta f equals f(x) minus the mean of f";
        if basis.is_complete() {
            run.row("green-action", anchor, worst, worst < 1e-8, "residual<1e-8");
        } else {
            run.diagnostic("green-action", anchor, worst, worst < 1e-8, "residual<1e-8 (truncated basis)");
        }
        Ok(())
    });

    let probes = random_points(space, 3, &mut ChaCha8Rng::seed_from_u64(run.seed ^ 3));
    run.step("green-laplacian", |run| {
        let worst = probes.iter().try_fold(0.0f64, |m, &x| Ok::<_, Error>(m.max(verify_green_laplacian(&op, &basis, eps, x)?)))?;
        run.row("green-laplacian", "Delta G^eps_x = 1 - p_eps(x,.)", worst, worst < 1e-8, "residual<1e-8");
        Ok(())
    });
    run.step("semigroup-identity", |run| {
        let worst = probes.iter().try_fold(0.0f64, |m, &x| Ok::<_, Error>(m.max(verify_semigroup_identity(&basis, eps, x)?)))?;
        run.row("semigroup-identity", "G^eps = integral over t>eps of (p_t - 1)", worst, worst < 1e-10, "residual<1e-10");
        Ok(())
    });
    run.step("pseudo-inverse-oracle", three_point_oracle);
    run.step("time-integral", |run| {
        let mut worst: f64 = 0.0;
        for (x, y) in space.sample_pairs(3, run.seed ^ 4) {
            worst = worst.max((green_time_integral(&basis, x, y) - green(&basis, 0.0, x, y)?).abs());
        }
        run.row("time-integral", "G = integral of (p_t - 1) dt", worst, worst < 1e-4, "abs<1e-4");
        Ok(())
    });

    match space.dimension() {
        Some(d) if d >= 3 => comparability(run, space, g.clone(), d),
        Some(2) if space.chart().lattice().is_some() => {
            run.note("two-dimensional space: comparability constants are fitted on the S¹ lift");
            let lifted = (|| -> Result<(MetricMeasureSpace, Arc<GreenFunction>)> {
                let prod = build_product_with_circle(space, numerics.circle_resolution)?;
                let b = run.basis(&prod, k_default(&prod, numerics))?;
                Ok((prod, Arc::new(GreenFunction::assemble(&b, 0.0)?)))
            })();
            match lifted {
                Ok((prod, pg)) => comparability(run, &prod, pg, 3),
                Err(e) => run.step("green-comparability", |_| Err(e)),
            }
        }
        _ => run.note("comparability constants need n > 2; skipped"),
    }

    run.step("w1p-convergence", |run| {
        let seq = [0.1, 0.03, 0.01, 0.003, 0.001, 1e-4];
        let rep = verify_w1p_convergence(&basis, space, 0, 2.0, &seq)?;
        let mut csv = String::from("epsilon,lp_difference,slope_lp_difference,slope_ratio\n");
        for r in &rep.rows {
            let _ = writeln!(csv, "{:.6e},{:.16e},{:.16e},{:.16e}", r.epsilon, r.lp_difference, r.slope_lp_difference, r.slope_ratio);
        }
        run.series("w1p", csv);
        let last = rep.rows.last().map_or(f64::NAN, |r| r.total());
        let anchor = "G^eps converges to G in W^{1,p}";
        run.row("w1p-decreasing", anchor, last, rep.strictly_decreasing, "strictly decreasing in eps");
        run.diagnostic("w1p-final", anchor, last, rep.final_below_target, "total<1e-6 at eps=1e-4");
        Ok(())
    });
}

fn comparability(run: &mut Run, space: &MetricMeasureSpace, g: Arc<GreenFunction>, dim: usize) {
    let n = dim as f64;
    if let Chart::Torus { dims: 3, resolution } = *space.chart() {
        run.step("near-diagonal", |run| {
            let gd = g.value(0, 1) / resolution as f64;
            run.row("near-diagonal", "G(x,y) d(x,y) near 1/(4 pi) on the flat 3-torus", gd, (0.04..=0.16).contains(&gd), "in [0.04,0.16]");
            Ok(())
        });
    }
    run.step("green-comparability", |run| {
        let sg = fit_comparability_constants(g.clone(), space, n)?;
        let anchor = "G(x,y) comparable to d(x,y)^{2-n}";
        run.row("green-comparability", anchor, sg.a, sg.a.is_finite() && sg.a >= 1.0, "A finite");
        run.info("green-shift", anchor, sg.a_bar);
        Ok(())
    });
    run.step("green-slope", |run| {
        let ids: Vec<usize> = vec![0, space.npoints() / 2];
        let c = fit_slope_constant(&g, space, n, &ids);
        run.row("green-slope", "|grad G(x,y)| <= C d(x,y)^{1-n}", c, c.is_finite() && c > 0.0, "C finite");
        Ok(())
    });
}

// ---------------------------------------------------------------- maximal

fn maximal(run: &mut Run, space: &MetricMeasureSpace, spec: &FieldSpec, numerics: &Numerics) {
    let dim = match dimension(space) {
        Ok(d) => d as f64,
        Err(e) => {
            run.step("dimension", |_| Err(e));
            return;
        }
    };
    let horizon = *numerics.time_grid().last().expect("validated");
    let b = match field_for(run, spec, space, numerics, horizon) {
        Ok(b) => b,
        Err(e) => {
            run.step("field", |_| Err(e));
            return;
        }
    };
    let n = space.npoints();
    let pairs = space.sample_pairs(numerics.pairs, run.seed);

    run.step("maximal-function", |run| {
        let mut rng = ChaCha8Rng::seed_from_u64(run.seed ^ 5);
        let f: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let mf = maximal_function(space, &f);
        let slack = (0..n).map(|x| mf[x] - f[x].abs()).fold(f64::INFINITY, f64::min);
        let one = maximal_function(space, &vec![1.0; n]);
        let unit = max_abs(one.iter().map(|v| v - 1.0));
        run.row("maximal-dominates", "M f >= |f| pointwise and M 1 = 1", slack.min(-unit), slack >= -1e-12 && unit < 1e-12, "min(Mf-|f|)>=0");
        Ok(())
    });

    run.step("pair-kernel", |run| {
        let rep = verify_pair_kernel_estimate(space, &vec![1.0; n], dim, &pairs)?;
        let anchor = "pair integral of f d^{1-n} bounded by C d(x,y) (Mf(x) + Mf(y))";
        run.row("pair-kernel", anchor, rep.fitted_c, rep.fitted_c < 50.0, "C<50");
        let st = GradientStencil::new(space)?;
        let modulus = st.modulus(&crate::fields::sample_field(space, &b, 0.0)?.iter().map(crate::space::chart::norm).collect::<Vec<_>>());
        let rep = verify_pair_kernel_estimate(space, &modulus, dim, &pairs)?;
        run.info("pair-kernel-field", anchor, rep.fitted_c);
        Ok(())
    });

    run.step("key-estimate", |run| {
        let basis = run.basis(space, k_complete(space, numerics))?;
        let g = GreenFunction::assemble(&basis, 0.0)?;
        let st = GradientStencil::new(space)?;
        let rep = verify_key_maximal_estimate(space, &st, &g, &b, 0.0, &pairs)?;
        let mut csv = String::from("lhs,rhs_without_c\n");
        for (l, r) in rep.lhs.iter().zip(&rep.rhs_without_c) {
            let _ = writeln!(csv, "{l:.16e},{r:.16e}");
        }
        run.series("key_estimate", csv);
        let anchor = "difference of Green gradients along b bounded by maximal functions of |grad b|";
        if b.singularity().is_some() {
            run.row("key-estimate", anchor, rep.fitted_c, rep.fitted_c.is_finite(), "C finite");
        } else {
            run.row("key-estimate", anchor, rep.fitted_c, rep.fitted_c < 100.0, "C<100");
        }
        run.info("key-estimate-degenerate-pairs", anchor, rep.degenerate_pairs as f64);
        Ok(())
    });

    run.step("distance-power", |run| {
        let p = distance_power_integral(space, 0, dim - 1.0)?;
        run.info("distance-power", "integral of d(x,.)^{1-n} finite", p.value);
        Ok(())
    });
}

// ---------------------------------------------------------------- contraction

/// Two grid points at moderate distance, chosen by the seed.
fn centre_pair(space: &MetricMeasureSpace, seed: u64) -> (usize, usize) {
    let dmax = space.diameter();
    space
        .sample_pairs(200, seed)
        .into_iter()
        .find(|&(x, y)| {
            let d = space.dist(x, y);
            d >= dmax / 6.0 && d <= dmax / 3.0
        })
        .unwrap_or((0, space.npoints() / 2))
}

fn gaussian_pair(space: &MetricMeasureSpace, seed: u64) -> Result<(DiscreteMeasure, DiscreteMeasure, usize, usize)> {
    let (x, y) = centre_pair(space, seed);
    let mut sigma = 0.12 * space.diameter();
    loop {
        let mu = DiscreteMeasure::gaussian(space, space.coord(x), sigma)?;
        let nu = DiscreteMeasure::gaussian(space, space.coord(y), sigma)?;
        if mu.support().len() + nu.support().len() <= GAUSSIAN_SUPPORT || sigma < space.grid_spacing() {
            return Ok((mu, nu, x, y));
        }
        sigma *= 0.8;
    }
}

fn flow_rows(run: &mut Run, flow: &FlowMap) {
    if let Some(r) = flow.rlf_residual() {
        run.info("rlf-residual", "trajectories solve the ODE against test functions", r.stride1);
    }
    if let Some(l) = flow.compressibility() {
        run.info("compressibility", "push-forward of m bounded by L m", l);
    }
}

fn contraction(run: &mut Run, space: &MetricMeasureSpace, spec: &FieldSpec, numerics: &Numerics) {
    let t_grid = numerics.time_grid();
    let horizon = *t_grid.last().expect("validated");
    let b = match field_for(run, spec, space, numerics, horizon) {
        Ok(b) => b,
        Err(e) => {
            run.step("field", |_| Err(e));
            return;
        }
    };
    let mut flow = None;
    run.step("flow", |run| {
        let f = run.flow(space, &b, &field_key(spec), &t_grid, numerics.step)?;
        flow_rows(run, &f);
        flow = Some(f);
        Ok(())
    });
    let Some(flow) = flow else { return };
    let mut l_sym = None;
    run.step("regularity-moduli", |run| {
        let st = GradientStencil::new(space)?;
        let m = regularity_moduli(space, &st, &b, &t_grid, &SymMode::Chart)?;
        run.info("l-sym", "sup of |grad_sym b|", m.l_sym);
        run.info("adjoint-gap", "divergence is the adjoint of the derivation", m.adjoint_gap);
        l_sym = Some(m.l_sym);
        Ok(())
    });
    let Some(l_sym) = l_sym else { return };
    let measures = gaussian_pair(space, run.seed);
    let (mu, nu, x0, y0) = match measures {
        Ok(m) => m,
        Err(e) => {
            run.step("measures", |_| Err(e));
            return;
        }
    };

    run.step("w2-contraction", |run| {
        let rep = verify_contraction(space, &flow, &mu, &nu, l_sym, numerics.pairs, run.seed)?;
        run.series("contraction", rep.csv());
        let worst = rep.rows.iter().map(|r| r.ratio).fold(0.0, f64::max);
        run.row("w2-contraction", "W2(mu_t, nu_t) <= e^{L t} W2(mu_0, nu_0)", worst, rep.passed, format!("ratio<=1+{:.3e}", rep.tol_disc));
        run.row(
            "trajectory-lipschitz",
            "d(X_t x, X_t y) <= e^{L t} d(x, y)",
            rep.worst_pair_ratio,
            rep.pairs_passed,
            "ratio<=1+1e-3",
        );
        Ok(())
    });

    let fine = uniform_grid(horizon, 100);
    let mut fine_flow = None;
    run.step("fine-flow", |run| {
        fine_flow = Some(run.flow(space, &b, &field_key(spec), &fine, fine_step(numerics.step, &fine))?);
        Ok(())
    });
    if let Some(ff) = fine_flow {
        let mut trajs = None;
        run.step("continuity-equation", |_| {
            let tm = continuity_equation_solve(space, &b, &mu, &fine, CeMethod::Pushforward(&ff))?;
            let tn = continuity_equation_solve(space, &b, &nu, &fine, CeMethod::Pushforward(&ff))?;
            trajs = Some((tm, tn));
            Ok(())
        });
        if let Some((tm, tn)) = trajs {
            run.step("w2-derivative", |run| {
                let rep = verify_w2_derivative(space, &tm, &b, &nu)?;
                let mut csv = String::from("t,lhs,rhs\n");
                for r in &rep.rows {
                    let _ = writeln!(csv, "{:.6e},{:.16e},{:.16e}", r.t, r.lhs, r.rhs);
                }
                run.series("w2_derivative", csv);
                run.row("w2-derivative", "d/dt W2^2(mu_t, nu)/2 = integral of b . grad phi_t", rep.max_discrepancy, rep.passed, format!("gap<={:.3e}", rep.threshold));
                Ok(())
            });
            run.step("joint-derivative", |run| {
                let rep = verify_joint_derivative(space, &tm, &tn, &b)?;
                run.row("joint-derivative", "d/dt W2^2(mu_t, nu_t)/2 <= potentials against b", rep.worst_violation, rep.passed, format!("violation<={:.3e}", rep.threshold));
                Ok(())
            });
            run.step("weak-continuity", |run| {
                let rep = verify_weak_continuity(space, &tm, &b)?;
                run.row("weak-continuity", "mu_t solves the continuity equation weakly", rep.worst, rep.passed, format!("residual<={:.3e}", rep.threshold));
                Ok(())
            });
            if space.chart().lattice().is_some() {
                run.step("weak-continuity-upwind", |run| {
                    let tu = continuity_equation_solve(space, &b, &mu, &fine, CeMethod::Upwind { cfl: 0.5 })?;
                    let rep = verify_weak_continuity(space, &tu, &b)?;
                    run.diagnostic("weak-continuity-upwind", "finite-volume solution solves the continuity equation weakly", rep.worst, rep.passed, format!("residual<={:.3e}", rep.threshold));
                    Ok(())
                });
            }
        }
    }

    run.step("geodesic-differentiation", |run| {
        let e0 = Atoms::new(vec![*space.coord(x0)], vec![1.0])?;
        let e1 = Atoms::new(vec![*space.coord(y0)], vec![1.0])?;
        let s_grid = uniform_grid(1.0, 10);
        let rep = verify_geodesic_differentiation(space, &b, &e0, &e1, &s_grid, 0.0)?;
        run.row("geodesic-differentiation", "second derivative along a W2 geodesic equals grad_sym b", rep.max_rel_gap, rep.passed, "relative gap<=0.15");
        Ok(())
    });
}

// ---------------------------------------------------------------- lusin

fn lusin(run: &mut Run, space: &MetricMeasureSpace, spec: &FieldSpec, numerics: &Numerics) {
    let dim = match dimension(space) {
        Ok(d) if d >= 3 => d as f64,
        Ok(d) => {
            run.step("dimension", |_| Err(Error::Config(format!("lusin-regularity needs n >= 3, got {d}"))));
            return;
        }
        Err(e) => {
            run.step("dimension", |_| Err(e));
            return;
        }
    };
    let t_grid = numerics.time_grid();
    let horizon = *t_grid.last().expect("validated");
    let b = match field_for(run, spec, space, numerics, horizon) {
        Ok(b) => b,
        Err(e) => {
            run.step("field", |_| Err(e));
            return;
        }
    };
    let mut flow = None;
    run.step("flow", |run| {
        let f = run.flow(space, &b, &field_key(spec), &t_grid, numerics.step)?;
        flow_rows(run, &f);
        flow = Some(f);
        Ok(())
    });
    let Some(flow) = flow else { return };

    let mut fitted = None;
    run.step("green-comparability", |run| {
        let basis = run.basis(space, k_default(space, numerics))?;
        let g = Arc::new(GreenFunction::assemble(&basis, 0.0)?);
        let sg = fit_comparability_constants(g, space, dim)?.with_mapping_margin(space, flow.snap_distance(space));
        run.row("green-comparability", "G(x,y) comparable to d(x,y)^{2-n}", sg.a, sg.a.is_finite(), "A finite");
        fitted = Some((basis, sg));
        Ok(())
    });
    let Some((basis, sg)) = fitted else { return };

    run.step("q-le-phi", |run| {
        let rep = verify_q_le_phi(&flow, space, &sg, numerics.pairs, run.seed)?;
        run.row("q-le-phi", "Q_{t,r} <= Phi_{t,r}", rep.violations as f64, rep.violations == 0, "0 violations");
        run.info("q-le-phi-worst-gap", "Q_{t,r} <= Phi_{t,r}", rep.worst_gap);
        Ok(())
    });

    let radii = numerics.r_grid.clone().unwrap_or_else(|| default_r_grid(space, numerics.r_count));
    let q = match q_star(&flow, space, &radii, sg.a, dim) {
        Ok(q) => q,
        Err(e) => {
            run.step("q-star", |_| Err(e));
            return;
        }
    };
    let mut csv = String::from("id,q_star,q_star_start\n");
    for (i, (v, v0)) in q.values.iter().zip(&q.at_start).enumerate() {
        let _ = writeln!(csv, "{i},{v:.16e},{v0:.16e}");
    }
    run.series("q_star", csv);

    run.step("q-star-bound", |run| {
        let st = GradientStencil::new(space)?;
        let m = regularity_moduli(space, &st, &b, &t_grid, &SymMode::Chart)?;
        let l = flow.compressibility().unwrap_or(f64::NAN);
        let rep = verify_qstar_bound(&q, &m, l)?;
        let anchor = "||Q*||_2 bounded by the Sobolev and divergence budget";
        run.row("q-star-bound", anchor, rep.ratio, rep.ratio.is_finite(), "ratio finite");
        run.info("q-star-l2", anchor, rep.q_star_l2);
        Ok(())
    });

    run.step("green-along-flow", |run| {
        let short = uniform_grid(horizon.min(0.2), 20);
        let ff = run.flow(space, &b, &field_key(spec), &short, fine_step(numerics.step, &short))?;
        let eps = if numerics.green_epsilon > 0.0 { numerics.green_epsilon } else { 0.01 };
        let pairs = space.sample_pairs(100, run.seed ^ 6);
        let rep = verify_green_derivative_along_flow(&ff, space, &basis, eps, &b, &pairs)?;
        run.row("green-along-flow", "d/dt G^eps(X_t x, X_t y) = grad G^eps . b", rep.pass_rate, rep.pass_rate >= 0.9, "pass rate>=0.9");
        Ok(())
    });

    let mut lusin_rep = None;
    run.step("chebyshev-set", |run| {
        let rep = lusin_set(&q, space, numerics.epsilon)?;
        let ok = rep.excluded_mass < numerics.epsilon;
        run.row("chebyshev-set", "m(X \\ E) < eps for E = {Q* <= ||Q*||_2 / sqrt(eps)}", rep.excluded_mass, ok, format!("mass<{}", numerics.epsilon));
        lusin_rep = Some(rep);
        Ok(())
    });
    let Some(rep) = lusin_rep else { return };
    let excluded: Vec<usize> = rep.excluded_ids();
    run.step("lipschitz-on-set", |run| {
        let rep = verify_lipschitz_on_set(&flow, space, rep, &q, 100_000, run.seed)?;
        let anchor = "d(X_t x, X_t y) <= exp(C ||Q*||_2 / sqrt(eps)) d(x, y) on E";
        run.row("lipschitz-on-set", anchor, rep.violations as f64, rep.violations == 0 && rep.pairs_checked > 0, "0 violations");
        run.info("lipschitz-fitted-c", anchor, rep.fitted_c.unwrap_or(f64::NAN));
        run.info("lipschitz-constant", anchor, rep.lip_constant.unwrap_or(f64::NAN));
        if let Some((c, _, rho)) = b.singularity() {
            let total: f64 = excluded.iter().map(|&i| space.weight(i)).sum();
            let near: f64 = excluded.iter().filter(|&&i| space.dist_to_point(&c, i) < 2.0 * rho).map(|&i| space.weight(i)).sum();
            let frac = if total > 0.0 { near / total } else { f64::NAN };
            run.diagnostic("excluded-near-singularity", "excluded mass concentrates in the 2 rho ball", frac, frac >= 0.8, ">=0.8 of excluded mass");
            let s = rep.straddling_ratio.unwrap_or(f64::NAN);
            run.diagnostic("straddling-ratio", "pairs across the singular ring stretch more", s, s >= 2.0, ">=2");
        }
        Ok(())
    });
}

fn n2_lift(run: &mut Run, space: &MetricMeasureSpace, spec: &FieldSpec, numerics: &Numerics) {
    let t_grid = numerics.time_grid();
    let horizon = *t_grid.last().expect("validated");
    let b = match field_for(run, spec, space, numerics, horizon) {
        Ok(b) => b,
        Err(e) => {
            run.step("field", |_| Err(e));
            return;
        }
    };
    let cfg = LiftConfig {
        epsilon: numerics.epsilon,
        step: numerics.step,
        r_count: numerics.r_count,
        phi_samples: numerics.pairs,
        seed: run.seed,
        ..LiftConfig::default()
    };
    run.step("n2-lift", |run| {
        let rep = lift_and_verify_n2(space, &b, &t_grid, numerics.circle_resolution, &cfg)?;
        if let Some(gap) = rep.eigen_gap {
            run.row("lift-eigenvalues", "product eigenvalues are sums of factor eigenvalues", gap, gap < 1e-8, "abs<1e-8");
        }
        run.row("lift-divergence", "div of the lift equals div b after projection", rep.div_gap, rep.div_gap < 1e-10, "abs<1e-10");
        run.row("lift-sym", "|grad_sym| of the lift equals |grad_sym b| after projection", rep.sym_gap, rep.sym_gap < 1e-8, "abs<1e-8");
        run.info("lift-projection-gap", "lifted flow projects onto the base flow", rep.projection_gap);
        run.info("lift-circle-drift", "lifted flow keeps the circle coordinate", rep.circle_drift);
        run.info("lift-compressibility", "push-forward of m bounded by L m", rep.compressibility);
        run.info("lift-green-a", "G(x,y) comparable to d(x,y)^{2-n}", rep.a);
        run.row("lift-q-le-phi", "Q_{t,r} <= Phi_{t,r}", rep.q_le_phi.violations as f64, rep.q_le_phi.violations == 0, "0 violations");
        run.row("lift-chebyshev-set", "m(X \\ E) < eps on the product", rep.product.excluded_mass, rep.product.excluded_mass < cfg.epsilon, format!("mass<{}", cfg.epsilon));
        run.row("lift-lipschitz-on-set", "Lipschitz bound on E in the product", rep.product.violations as f64, rep.product.violations == 0, "0 violations");
        run.row("base-chebyshev-set", "m(X \\ E) < eps on the base slice", rep.base_excluded_mass, rep.base_excluded_mass < cfg.epsilon, format!("mass<{}", cfg.epsilon));
        run.row("base-lipschitz-on-set", "Lipschitz bound on E in the base", rep.base_violations as f64, rep.base_violations == 0, "0 violations");
        run.info("base-lipschitz-constant", "Lipschitz bound on E in the base", rep.base_lip_constant);
        let mut csv = String::from("base_id,q_star,retained\n");
        for (i, (v, r)) in rep.base_q_star.iter().zip(&rep.base_retained).enumerate() {
            let _ = writeln!(csv, "{i},{v:.16e},{}", u8::from(*r));
        }
        run.series("base_q_star", csv);
        Ok(())
    });
}

// ---------------------------------------------------------------- full suite

/// Fixed small corpus covering every check; only the seed is configurable.
fn full_suite(run: &mut Run, numerics: &Numerics) {
    let base = Numerics {
        seed: numerics.seed,
        ..Numerics::default()
    };
    let t3 = |res| SpaceSpec::Torus { dims: 3, resolution: res };
    let cases: Vec<(&str, Scenario, SpaceSpec, Option<FieldSpec>, Numerics)> = vec![
        ("heat", Scenario::HeatKernelCheck, SpaceSpec::Torus { dims: 1, resolution: 32 }, None, base.clone()),
        ("green", Scenario::GreenCheck, t3(8), None, base.clone()),
        (
            "maximal",
            Scenario::MaximalEstimates,
            t3(8),
            Some(FieldSpec::GradientHeat { mode: 3, tau: 0.05, amplitude: 1.0 }),
            Numerics { pairs: 300, ..base.clone() },
        ),
        (
            "contraction-sphere",
            Scenario::Contraction,
            SpaceSpec::Sphere { points: 200 },
            Some(FieldSpec::Rotation { axis: [0.0, 0.6, 0.8], speed: 1.5 }),
            Numerics { horizon: 0.5, step: 0.005, ..base.clone() },
        ),
        (
            "contraction-shear",
            Scenario::Contraction,
            SpaceSpec::Torus { dims: 2, resolution: 16 },
            Some(FieldSpec::Shear { s: 0.5, smoothing: crate::fields::SHEAR_SMOOTHING }),
            Numerics { horizon: 0.5, step: 0.005, ..base.clone() },
        ),
        (
            "lusin",
            Scenario::LusinRegularity,
            t3(8),
            Some(FieldSpec::CdlSingular { alpha: 0.5, rho: 0.2, center: vec![0.5; 3] }),
            base.clone(),
        ),
        (
            "n2-lift",
            Scenario::N2Lift,
            SpaceSpec::Torus { dims: 2, resolution: 8 },
            Some(FieldSpec::CdlSingular { alpha: 0.5, rho: 0.2, center: vec![0.5; 2] }),
            Numerics { pairs: 200, ..base.clone() },
        ),
    ];
    for (tag, scenario, space_spec, field, nums) in cases {
        let cfg = ExperimentConfig {
            scenario,
            space: Some(space_spec),
            field,
            numerics: nums.clone(),
            output: None,
        };
        run.with_prefix(tag, |run| {
            if let Err(e) = dispatch(run, &cfg, &nums) {
                run.step("setup", |_| Err(e));
            }
        });
    }
}
