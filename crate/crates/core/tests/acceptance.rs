//! Acceptance suite. Prints one verdict line per criterion and exits
//! non-zero if any criterion fails.

use std::f64::consts::PI;
use std::process::ExitCode;
use std::time::Instant;

use cartan_core::chain::{
    boundary, check_relative_invariant, check_tube_of_solutions, integrate, solution_tube_with, Chain, InvariantOptions,
};
use cartan_core::flow::{FlowMap, StepRule};
use cartan_core::form::{
    exterior_derivative, lie_derivative, pullback, spatial_exterior_derivative, split_extended, time_derivative,
};
use cartan_core::kernel::{
    check_lines_move_with_fluid, check_surface_advection, check_tube_strength, dimension_report, frobenius_residual,
    kernel_angle, trace_integral_surface, LineAdvectionOptions, SurfaceAdvectionOptions, SurfaceOptions, TubeOptions,
    TubeSpec,
};
use cartan_core::runner::{applicable_checks, run, RunConfig};
use cartan_core::scenario::{self, bernoulli_checks, stationary_euler_residual, strain_shear, BernoulliOptions};
use cartan_core::{DifferentialForm, Exec, Space, VectorField};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

// tolerances, one block per criterion
const IDENTITY_TOL: f64 = 1e-5;
const IDENTITY_POINTS: usize = 50;
const IDENTITY_FORMS: usize = 10;
const KELVIN_TOL: f64 = 1e-6;
const KELVIN_TIMES: usize = 11;
const VORTICITY_TOL: f64 = 1e-5;
const VORTICITY_POINTS: usize = 20;
const LINE_RESIDUAL_TOL: f64 = 1e-4;
const LINE_DISTANCE_TOL: f64 = 1e-4;
const TUBE_AGREE_TOL: f64 = 1e-7;
const TUBE_ORACLE_TOL: f64 = 1e-6;
const EULER_TOL: f64 = 1e-5;
const EULER_POINTS: usize = 50;
const EQUIVALENCE_POINTS: usize = 20;
const EQUIVALENCE_ZERO: f64 = 1e-5;
const SOLUTION_TUBE_TOL: f64 = 1e-6;
const FROBENIUS_TOL: f64 = 1e-6;
const SURFACE_TOL: f64 = 1e-5;
const GENERALIZED_FLUX_TOL: f64 = 1e-6;
const KERNEL_ANGLE_TOL: f64 = 1e-5;
const KERNEL_ANGLE_POINTS: usize = 20;

type Outcome = Result<(bool, String), String>;

fn err<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

/// Random smooth scalar built from a few trig, exponential and polynomial
/// terms in the given variables.
fn random_expr(rng: &mut ChaCha8Rng, vars: &[&str]) -> String {
    let mut terms = Vec::new();
    for _ in 0..3 {
        let c = rng.gen_range(-1.0..1.0f64);
        let a = rng.gen_range(-1.5..1.5f64);
        let x = vars[rng.gen_range(0..vars.len())];
        let y = vars[rng.gen_range(0..vars.len())];
        let z = vars[rng.gen_range(0..vars.len())];
        let t = match rng.gen_range(0..5) {
            0 => format!("({c:.4})*sin(({a:.4})*{x} + {y})"),
            1 => format!("({c:.4})*{x}*{y}*{z}"),
            2 => format!("({c:.4})*cos(({a:.4})*{x})*{y}"),
            3 => format!("({c:.4})*exp(({a:.4})*{x})"),
            _ => format!("({c:.4})*{x}^2*{z}"),
        };
        terms.push(t);
    }
    terms.join(" + ")
}

fn random_form(rng: &mut ChaCha8Rng, space: &Space, degree: usize) -> DifferentialForm {
    let n = space.dim();
    let count = cartan_core::tensor::binomial(n, degree);
    let vars = space.vars();
    let exprs: Vec<String> = (0..count).map(|_| random_expr(rng, &vars)).collect();
    let refs: Vec<&str> = exprs.iter().map(String::as_str).collect();
    DifferentialForm::analytic(space, degree, &refs).expect("valid random form")
}

fn random_field(rng: &mut ChaCha8Rng, space: &Space) -> VectorField {
    let vars = space.vars();
    let exprs: Vec<String> = (0..space.dim()).map(|_| random_expr(rng, &vars)).collect();
    let refs: Vec<&str> = exprs.iter().map(String::as_str).collect();
    VectorField::analytic(space, &refs).expect("valid random field")
}

fn random_points(rng: &mut ChaCha8Rng, dim: usize, n: usize) -> Vec<Vec<f64>> {
    (0..n).map(|_| (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect()
}

fn max_gap(a: &DifferentialForm, b: &DifferentialForm, points: &[Vec<f64>]) -> Result<f64, String> {
    let mut worst = 0.0f64;
    for x in points {
        let d = a.eval(x).map_err(err)?.sub(&b.eval(x).map_err(err)?).map_err(err)?;
        worst = worst.max(d.max_abs());
    }
    Ok(worst)
}

/// `d/dt Phi_t^* a` at `t = 0`, from pullbacks at `+-h` and `+-h/2`
/// combined by Richardson extrapolation.
fn lie_by_flow(v: &VectorField, a: &DifferentialForm, x: &[f64]) -> Result<Vec<f64>, String> {
    let h = 1e-2;
    let rule = StepRule { max_step: 1e-3, min_steps: 10 };
    let central = |h: f64| -> Result<Vec<f64>, String> {
        let plus = pullback(&FlowMap::new(v, h).with_rule(rule), a).map_err(err)?.eval(x).map_err(err)?;
        let minus = pullback(&FlowMap::new(v, -h).with_rule(rule), a).map_err(err)?.eval(x).map_err(err)?;
        Ok(plus.comps().iter().zip(minus.comps()).map(|(p, m)| (p - m) / (2.0 * h)).collect())
    };
    let coarse = central(h)?;
    let fine = central(h / 2.0)?;
    Ok(fine.iter().zip(&coarse).map(|(f, c)| (4.0 * f - c) / 3.0).collect())
}

fn criterion_identities() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let s3 = Space::euclidean(3);
    let ext = Space::extended(3);
    let (mut dd, mut cartan, mut leibniz, mut decomposition) = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
    for i in 0..IDENTITY_FORMS {
        let pts = random_points(&mut rng, 3, IDENTITY_POINTS);

        // d d a = 0 for a 0- or 1-form
        let a = random_form(&mut rng, &s3, i % 2);
        let dda = exterior_derivative(&exterior_derivative(&a).map_err(err)?).map_err(err)?;
        for x in &pts {
            dd = dd.max(dda.eval(x).map_err(err)?.max_abs());
        }

        // Cartan formula against the flow definition of the Lie derivative;
        // the flow check is costlier, so it uses every fifth point
        let b = random_form(&mut rng, &s3, i % 3);
        let v = random_field(&mut rng, &s3);
        let lie = lie_derivative(&v, &b).map_err(err)?;
        for x in pts.iter().step_by(5) {
            let oracle = lie_by_flow(&v, &b, x)?;
            let got = lie.eval(x).map_err(err)?;
            for (g, o) in got.comps().iter().zip(&oracle) {
                cartan = cartan.max((g - o).abs());
            }
        }

        // Leibniz: d(a ^ c) = da ^ c + (-1)^k a ^ dc
        let k = i % 2;
        let c = random_form(&mut rng, &s3, 1);
        let a = random_form(&mut rng, &s3, k);
        let lhs = exterior_derivative(&a.wedge(&c).map_err(err)?).map_err(err)?;
        let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
        let rhs = DifferentialForm::sum(&[
            (1.0, exterior_derivative(&a).map_err(err)?.wedge(&c).map_err(err)?),
            (sign, a.wedge(&exterior_derivative(&c).map_err(err)?).map_err(err)?),
        ])
        .map_err(err)?;
        leibniz = leibniz.max(max_gap(&lhs, &rhs, &pts)?);

        // d a = dt ^ (-d_hat s + L_t r) + d_hat r on M x R
        let e = random_form(&mut rng, &ext, 1 + i % 2);
        let split = split_extended(&e).map_err(err)?;
        let s_hat = split.s_hat.expect("positive degree");
        let dt = DifferentialForm::dt(&ext).map_err(err)?;
        let inner = DifferentialForm::sum(&[
            (-1.0, spatial_exterior_derivative(&s_hat).map_err(err)?),
            (1.0, time_derivative(&split.r_hat).map_err(err)?.spatial_part().map_err(err)?),
        ])
        .map_err(err)?;
        let rhs = dt
            .wedge(&inner)
            .map_err(err)?
            .add(&spatial_exterior_derivative(&split.r_hat).map_err(err)?)
            .map_err(err)?;
        let ext_pts = random_points(&mut rng, 4, IDENTITY_POINTS);
        decomposition = decomposition.max(max_gap(&exterior_derivative(&e).map_err(err)?, &rhs, &ext_pts)?);
    }
    let worst = dd.max(cartan).max(leibniz).max(decomposition);
    Ok((
        worst < IDENTITY_TOL,
        format!("dd {dd:.1e}, cartan {cartan:.1e}, leibniz {leibniz:.1e}, decomposition {decomposition:.1e} (tol {IDENTITY_TOL:.0e})"),
    ))
}

fn criterion_kelvin() -> Outcome {
    let abc = scenario::lookup("abc").map_err(err)?;
    let sys = &abc.system;
    let circle = Chain::circle(sys.alpha.space(), vec![0.3, 0.2, 0.1], 0.5, (0, 1), 8).map_err(err)?;
    let ts: Vec<f64> = (0..KELVIN_TIMES).map(|i| i as f64 / (KELVIN_TIMES - 1) as f64).collect();
    let opts = InvariantOptions { tolerance: KELVIN_TOL, ..Default::default() };
    let r = check_relative_invariant(&sys.v, &sys.alpha, &circle, &ts, &opts).map_err(err)?;
    Ok((r.pass, format!("circulation {:.6}, max drift {:.1e} (tol {KELVIN_TOL:.0e})", r.samples[0].value, r.max_drift)))
}

fn criterion_vorticity() -> Outcome {
    let abc = scenario::lookup("abc").map_err(err)?;
    let sys = &abc.system;
    let pulled = pullback(&FlowMap::new(&sys.v, 0.5), &sys.dalpha).map_err(err)?;
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let pts: Vec<Vec<f64>> =
        (0..VORTICITY_POINTS).map(|_| abc.sample_base(&mut rng, 0.05)).collect::<Result<_, _>>().map_err(err)?;
    let worst = max_gap(&pulled, &sys.dalpha, &pts)?;
    Ok((worst < VORTICITY_TOL, format!("max |Phi*w - w| {worst:.1e} (tol {VORTICITY_TOL:.0e})")))
}

fn criterion_helmholtz_lines() -> Outcome {
    let abc = scenario::lookup("abc").map_err(err)?;
    let sys = &abc.system;
    let opts = LineAdvectionOptions { tolerance: LINE_DISTANCE_TOL, ..Default::default() };
    let r = check_lines_move_with_fluid(&sys.v, &sys.dalpha, &[0.3, 0.2, 0.1], 0.5, 1.0, &opts).map_err(err)?;
    let pass = r.residual < LINE_RESIDUAL_TOL && r.distance < LINE_DISTANCE_TOL;
    Ok((pass, format!("line residual {:.1e}, Hausdorff {:.1e} (tol {LINE_RESIDUAL_TOL:.0e})", r.residual, r.distance)))
}

fn criterion_tube_strength() -> Outcome {
    let rot = scenario::lookup("rigid_rotation").map_err(err)?;
    let sys = &rot.system;
    let space = sys.alpha.space();
    let r = 0.5;
    let disc = Chain::disc(space, vec![0.0, 0.0, 0.0], r, (0, 1)).map_err(err)?;
    let circle = boundary(&disc).map_err(err)?;
    let axis = VectorField::coordinate(space, 2).map_err(err)?;
    let tube = TubeSpec::new(circle, disc, axis).map_err(err)?;
    let report = check_tube_strength(&sys.dalpha, &tube, 1.0, &TubeOptions::default()).map_err(err)?;
    // vorticity 2 omega through a disc of radius r
    let exact = 2.0 * PI * r * r;
    let oracle = (report.flux_start - exact).abs().max((report.flux_end - exact).abs());
    let pass = report.difference < TUBE_AGREE_TOL && oracle < TUBE_ORACLE_TOL;
    Ok((
        pass,
        format!(
            "flux {:.9} vs 2 pi r^2 = {exact:.9}, sections differ by {:.1e} (tol {TUBE_AGREE_TOL:.0e}), oracle error {oracle:.1e} (tol {TUBE_ORACLE_TOL:.0e})",
            report.flux_start, report.difference
        ),
    ))
}

fn criterion_stationary_euler() -> Outcome {
    let mut worst = 0.0f64;
    let mut bernoulli_ok = true;
    let mut notes = Vec::new();
    for name in ["abc", "rigid_rotation", "taylor_green"] {
        let sc = scenario::lookup(name).map_err(err)?;
        let fluid = sc.fluid.as_ref().expect("fluid scenario");
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for _ in 0..EULER_POINTS {
            let x = sc.sample_base(&mut rng, 0.05).map_err(err)?;
            worst = worst.max(stationary_euler_residual(fluid, &x).map_err(err)?.norm());
        }
        let b = bernoulli_checks(&sc, &BernoulliOptions::default()).map_err(err)?;
        bernoulli_ok &= b.pass;
        notes.push(format!("{name} bernoulli {}", if b.pass { "ok" } else { "FAIL" }));
    }
    Ok((
        worst < EULER_TOL && bernoulli_ok,
        format!("max |i_v dv + dE| {worst:.1e} (tol {EULER_TOL:.0e}); {}", notes.join(", ")),
    ))
}

fn criterion_cartan_equivalence() -> Outcome {
    let mut failures = Vec::new();
    let mut worst_solution = 0.0f64;
    let mut systems = Vec::new();
    for (name, _) in scenario::catalog() {
        let sc = scenario::lookup(name).map_err(err)?;
        systems.push((name.to_string(), sc.system.clone(), Some(sc)));
    }
    let strain = strain_shear().map_err(err)?.system().map_err(err)?;
    systems.push(("strain_shear".into(), strain, None));
    for (name, sys, sc) in &systems {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..EQUIVALENCE_POINTS {
            let x = match sc {
                Some(sc) => sc.sample_extended(&mut rng, 0.05).map_err(err)?,
                None => {
                    let mut x: Vec<f64> = (0..3).map(|_| rng.gen_range(-0.4..0.4)).collect();
                    x.push(rng.gen_range(0.0..1.0));
                    x
                }
            };
            let e = sys.equivalence_sample(&x).map_err(err)?;
            if sc.is_some() {
                worst_solution = worst_solution.max(e.cartan_norm).max(e.decomposed_norm);
            }
            if !e.vanish_together(EQUIVALENCE_ZERO) {
                failures.push(format!("{name} at {x:?}"));
            }
        }
    }
    Ok((
        failures.is_empty(),
        format!(
            "{} systems x {EQUIVALENCE_POINTS} points, largest residual on solutions {worst_solution:.1e}, {} disagreements",
            systems.len(),
            failures.len()
        ),
    ))
}

fn criterion_tube_of_solutions() -> Outcome {
    let osc = scenario::lookup("oscillator").map_err(err)?;
    let sys = &osc.system;
    let c1 = Chain::circle(sys.extended_space(), vec![0.3, 0.1, 0.0], 0.5, (0, 1), 8).map_err(err)?;
    let offsets = |x: &[f64]| 1.0 + 0.3 * (2.0 * x[0]).sin() + 0.2 * x[1];
    let rule = StepRule { max_step: 2e-3, min_steps: 10 };
    let tube = solution_tube_with(&sys.xi, &c1, offsets, rule).map_err(err)?;
    let opts = InvariantOptions { tolerance: SOLUTION_TUBE_TOL, ..Default::default() };
    let r = check_tube_of_solutions(&sys.xi, &sys.sigma, &c1, &tube.c2, Some(&tube.sweep), &opts).map_err(err)?;
    let sweep = r.sweep_integral.unwrap_or(f64::NAN);
    Ok((
        r.pass && sweep.abs() < SOLUTION_TUBE_TOL,
        format!(
            "oint c1 {:.9}, oint c2 {:.9}, difference {:.1e}, sweep {sweep:.1e} (tol {SOLUTION_TUBE_TOL:.0e})",
            r.samples[0].value, r.samples[1].value, r.max_drift
        ),
    ))
}

fn criterion_generalized() -> Outcome {
    let sc = scenario::lookup("r5_decomposable").map_err(err)?;
    let sys = &sc.system;
    let form = &sys.dalpha;
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let pts: Vec<Vec<f64>> = (0..20).map(|_| sc.sample_base(&mut rng, 0.05)).collect::<Result<_, _>>().map_err(err)?;
    let dims = dimension_report(form, &pts, &[], Exec::default()).map_err(err)?;
    let dim_ok = dims.kernel_dim == Some(2) && dims.bound_attained;
    let mut frob = 0.0f64;
    for x in &pts {
        frob = frob.max(frobenius_residual(form, x, &[]).map_err(err)?);
    }
    let seed = [0.1, 0.2, 0.3, 0.0, 0.0];
    let surface = trace_integral_surface(form, &seed, 0.5, &SurfaceOptions::default()).map_err(err)?;
    let moved =
        check_surface_advection(&sys.v, form, &surface, 0.7, &SurfaceAdvectionOptions::default()).map_err(err)?;

    // a 3-box transversal to D = span(d/dx4, d/dx5), slid along both frame fields
    let space = sys.alpha.space();
    let size = 0.4;
    let edges: Vec<Vec<f64>> = (0..3).map(|i| (0..5).map(|j| if i == j { size } else { 0.0 }).collect()).collect();
    let block = Chain::parallelepiped(space, vec![0.0, -0.1, 0.1, 0.0, 0.0], edges).map_err(err)?.with_quad_order(6);
    let exact = size.powi(3);
    let mut flux_gap = (integrate(form, &block).map_err(err)? - exact).abs();
    for index in 0..2 {
        let seeds = vec![vec![0.0, 0.0, 0.0, 1.0, 0.0], vec![0.0, 0.0, 0.0, 0.0, 1.0]];
        let field = VectorField::kernel_frame(form, &[], seeds, index).map_err(err)?;
        let tube = TubeSpec::new(boundary(&block).map_err(err)?, block.clone(), field).map_err(err)?;
        let r = check_tube_strength(form, &tube, 0.6, &TubeOptions::default()).map_err(err)?;
        flux_gap = flux_gap.max(r.difference).max((r.flux_end - exact).abs());
    }
    let pass = dim_ok && frob < FROBENIUS_TOL && moved.max_residual < SURFACE_TOL && flux_gap < GENERALIZED_FLUX_TOL;
    Ok((
        pass,
        format!(
            "dim D {:?} (bound {} attained: {}), frobenius {frob:.1e}, advected surface {:.1e}, flux gap {flux_gap:.1e}",
            dims.kernel_dim, dims.bound, dims.bound_attained, moved.max_residual
        ),
    ))
}

fn criterion_kernel_equivalence() -> Outcome {
    let mut worst = 0.0f64;
    let mut count = 0;
    for (name, _) in scenario::catalog() {
        let sc = scenario::lookup(name).map_err(err)?;
        let sys = &sc.system;
        let dt = vec![DifferentialForm::dt(sys.extended_space()).map_err(err)?];
        let dhat = spatial_exterior_derivative(&sys.alpha_hat).map_err(err)?;
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        for _ in 0..KERNEL_ANGLE_POINTS {
            let x = sc.sample_extended(&mut rng, 0.05).map_err(err)?;
            worst = worst.max(kernel_angle(&sys.dsigma, &dt, &dhat, &dt, &x).map_err(err)?);
            count += 1;
        }
    }
    Ok((
        worst < KERNEL_ANGLE_TOL,
        format!("max principal angle {worst:.1e} over {count} points (tol {KERNEL_ANGLE_TOL:.0e})"),
    ))
}

fn criterion_determinism() -> Outcome {
    let dirs = [tempfile::tempdir().map_err(err)?, tempfile::tempdir().map_err(err)?];
    let mut files = 0;
    for (name, _) in scenario::catalog() {
        let sc = scenario::lookup(name).map_err(err)?;
        let mut cfg = RunConfig::new(name, &applicable_checks(&sc));
        cfg.seed = 11;
        for (i, dir) in dirs.iter().enumerate() {
            // one run on the parallel path, one sequential
            cfg.sequential = i == 1;
            run(&cfg).map_err(err)?.write(&dir.path().join(name)).map_err(err)?;
        }
        for entry in std::fs::read_dir(dirs[0].path().join(name)).map_err(err)? {
            let path = entry.map_err(err)?.path();
            if path.extension().is_some_and(|e| e == "csv") {
                let twin = dirs[1].path().join(name).join(path.file_name().expect("file name"));
                let (a, b) = (std::fs::read(&path).map_err(err)?, std::fs::read(&twin).map_err(err)?);
                if a != b {
                    return Ok((false, format!("{} differs between runs", path.display())));
                }
                files += 1;
            }
        }
    }
    Ok((files > 0, format!("{files} CSV files byte-identical across two seeded runs (parallel and sequential)")))
}

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> Outcome); 11] = [
        ("exterior calculus identities", criterion_identities),
        ("Kelvin circulation on ABC", criterion_kelvin),
        ("vorticity invariance on ABC", criterion_vorticity),
        ("Helmholtz line theorem on ABC", criterion_helmholtz_lines),
        ("Helmholtz tube theorem, rigid rotation", criterion_tube_strength),
        ("stationary Euler form and Bernoulli", criterion_stationary_euler),
        ("Cartan equivalence", criterion_cartan_equivalence),
        ("tube of solutions, oscillator", criterion_tube_of_solutions),
        ("generalized surfaces on R^5", criterion_generalized),
        ("spatial kernel equivalence", criterion_kernel_equivalence),
        ("determinism", criterion_determinism),
    ];
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let (pass, detail) = match f() {
            Ok(r) => r,
            Err(e) => (false, format!("error: {e}")),
        };
        failed += usize::from(!pass);
        println!(
            "criterion {:>2} {} {name}: {detail} [{:.1}s]",
            i + 1,
            if pass { "PASS" } else { "FAIL" },
            start.elapsed().as_secs_f64()
        );
    }
    println!("acceptance: {} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
