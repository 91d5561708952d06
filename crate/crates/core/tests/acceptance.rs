//! One PASS/FAIL line per acceptance criterion; exits nonzero on any FAIL.

mod common;

use std::path::Path;
use std::time::Instant;

use common::{add_noise, dense_g_oracle, planted, random_axis, random_matrix, random_points, rng};
use fcpd::cli::{run, FcpdReport, Outcome, RunConfig};
use fcpd::cpd::cpd_residual;
use fcpd::filtered::{update_g, Banks, FrozenObjective};
use fcpd::findiff::{
    axis_penalty, build_filter, integrate_columns, project, Scheme, DEFAULT_WINDOW,
};
use fcpd::fixtures::{toy_coupled, toy_decoupled};
use fcpd::{
    build_jacobian_tensor, cpd_als, fcpd_solve, khatri_rao, reconstruct, sample_points, AlsOptions,
    DMatrix, FactorSet, FcpdOptions, ThirdFactor,
};
use rand::seq::SliceRandom;
use rand::Rng;

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: String) -> Verdict {
    Verdict { pass, detail }
}

fn report(results: &mut Vec<bool>, id: usize, name: &str, v: Verdict) {
    println!(
        "criterion {id} {}: {name}: {}",
        if v.pass { "PASS" } else { "FAIL" },
        v.detail
    );
    results.push(v.pass);
}

fn equivalence_fixture() -> Verdict {
    let f = toy_coupled();
    let model = toy_decoupled();
    let points = sample_points(2, 1000, (-1.5, 1.5), 2024).unwrap();
    let mut worst = 0.0f64;
    for k in 0..points.len() {
        let p = points.point(k);
        let a = f.eval(&p).unwrap();
        let b = model.eval(&p).unwrap();
        for i in 0..a.len() {
            worst = worst.max((a[i] - b[i]).abs() / a[i].abs().max(1.0));
        }
    }
    verdict(
        worst <= 1e-9,
        format!("max relative difference {worst:.3e} (limit 1e-9)"),
    )
}

fn toy_pipeline(out: &Path) -> (FcpdReport, f64) {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures/toy.json");
    let mut config = RunConfig::load(path).expect("toy config");
    config.out_dir = out.to_path_buf();
    let start = Instant::now();
    let Ok(Outcome::Fcpd(report)) = run(&config, false) else {
        panic!("toy pipeline failed")
    };
    (report, start.elapsed().as_secs_f64())
}

fn function_reproduction(r: &FcpdReport, seconds: f64) -> Verdict {
    let e: Vec<f64> = r
        .output_errors
        .iter()
        .map(|e| e.unwrap_or(f64::NAN))
        .collect();
    let pass = e.iter().all(|&x| x <= 1.5) && seconds < 300.0;
    verdict(
        pass,
        format!(
            "e = [{}] % (limit 1.5), selected lambda {:e}, {seconds:.0} s",
            e.iter()
                .map(|x| format!("{x:.3}"))
                .collect::<Vec<_>>()
                .join(", "),
            r.selected_lambda
        ),
    )
}

fn tensor_quality(r: &FcpdReport) -> Verdict {
    verdict(
        r.tensor_relative_error <= 2.0,
        format!(
            "tensor relative error {:.4} % (limit 2 %)",
            r.tensor_relative_error
        ),
    )
}

fn cpd_exactness() -> Verdict {
    let points = sample_points(2, 100, (-1.5, 1.5), 1).unwrap();
    let jt = build_jacobian_tensor(&toy_coupled(), &points).unwrap();
    let opts = AlsOptions {
        restarts: 5,
        seed: 1,
        ..AlsOptions::default()
    };
    let res = cpd_als(jt.tensor(), 3, &opts).unwrap();
    let rel = cpd_residual(jt.tensor(), &res).unwrap().relative().unwrap() / 100.0;
    verdict(
        rel < 1e-8 && res.sweeps() <= 500,
        format!("relative residual {rel:.3e} after {} sweeps", res.sweeps()),
    )
}

fn non_uniqueness_contrast(fcpd_penalty: f64) -> Verdict {
    let points = sample_points(2, 100, (-1.5, 1.5), 1).unwrap();
    let jt = build_jacobian_tensor(&toy_coupled(), &points).unwrap();
    let mut penalties: Vec<f64> = (0..10)
        .map(|seed| {
            let opts = AlsOptions {
                seed,
                ..AlsOptions::default()
            };
            let res = cpd_als(jt.tensor(), 3, &opts).unwrap();
            let z = project(&res.factors.v, &points).unwrap();
            let g = integrate_columns(&z, &res.factors.third).unwrap();
            axis_penalty(&z, &g).unwrap()
        })
        .collect();
    penalties.sort_by(f64::total_cmp);
    let median = 0.5 * (penalties[4] + penalties[5]);
    let ratio = median / fcpd_penalty;
    verdict(
        ratio >= 10.0,
        format!("median CPD penalty {median:.4e} / F-CPD penalty {fcpd_penalty:.4e} = {ratio:.1} (limit 10)"),
    )
}

fn g_update_oracle() -> Verdict {
    let mut g = rng(5);
    let mut worst = 0.0f64;
    let mut cases = 0;
    while cases < 20 {
        let (n, m, r) = (
            g.random_range(1..=3),
            g.random_range(1..=3),
            g.random_range(1..=3),
        );
        if n * m < r {
            // fewer tensor slices than branches: minimizer not unique
            continue;
        }
        let big_n = g.random_range(8..=30);
        let lambda = 10f64.powf(g.random_range(-2.0..2.0));
        let points = random_points(&mut g, m, big_n);
        let w = random_matrix(&mut g, n, r);
        let v = random_matrix(&mut g, m, r);
        let g_ref = random_matrix(&mut g, big_n, r);
        let j3 = random_matrix(&mut g, big_n, n * m);
        let banks = Banks::build(&v, &points).unwrap();
        let got = update_g(&j3, &w, &v, lambda, &banks, &g_ref).unwrap();
        let z = points.points().transpose() * &v;
        let (oracle, _) = dense_g_oracle(&j3, &w, &v, &z, lambda, &g_ref);
        worst = worst.max((&got - &oracle).norm() / oracle.norm());
        cases += 1;
    }
    verdict(
        worst <= 1e-8,
        format!("20 instances, max relative difference {worst:.3e} (limit 1e-8)"),
    )
}

fn filter_suite() -> Verdict {
    let mut g = rng(6);
    // filters on 100 shuffled non-equidistant axes
    let mut filter_err = 0.0f64;
    for _ in 0..100 {
        let len = g.random_range(3..60);
        let mut z = random_axis(&mut g, len);
        z.shuffle(&mut g);
        let c: [f64; 3] = [
            g.random_range(-3.0..3.0),
            g.random_range(-3.0..3.0),
            g.random_range(-3.0..3.0),
        ];
        let samples: Vec<f64> = z.iter().map(|x| c[0] + c[1] * x + c[2] * x * x).collect();
        let scale = samples.iter().fold(1.0f64, |s, x| s.max(x.abs()));
        for scheme in [Scheme::Left, Scheme::Central, Scheme::Right] {
            let h = build_filter(&z, scheme, DEFAULT_WINDOW)
                .unwrap()
                .apply(&samples)
                .unwrap();
            for (x, hx) in z.iter().zip(&h) {
                filter_err = filter_err.max((hx - (c[1] + 2.0 * c[2] * x)).abs() / scale);
            }
        }
    }
    // Khatri-Rao and matricization identities
    let mut identity_err = 0.0f64;
    for _ in 0..50 {
        let (n, m, big_n, r) = (
            g.random_range(1..5),
            g.random_range(1..5),
            g.random_range(1..8),
            g.random_range(1..4),
        );
        let f = FactorSet::new(
            random_matrix(&mut g, n, r),
            random_matrix(&mut g, m, r),
            random_matrix(&mut g, big_n, r),
            ThirdFactor::Derivative,
        )
        .unwrap();
        let (w, v, h) = (&f.w, &f.v, &f.third);
        let kr = khatri_rao(w, v).unwrap();
        let gram = (w.transpose() * w).component_mul(&(v.transpose() * v));
        identity_err = identity_err.max((kr.transpose() * &kr - gram).amax());
        let t = reconstruct(&f);
        let unfoldings = [
            w * khatri_rao(h, v).unwrap().transpose(),
            v * khatri_rao(h, w).unwrap().transpose(),
            h * khatri_rao(v, w).unwrap().transpose(),
        ];
        for (mode, expected) in (1..=3).zip(unfoldings) {
            identity_err = identity_err.max((t.matricize(mode).unwrap() - expected).amax());
        }
    }
    // V gradient against fourth-order central differences, orders frozen
    let mut grad_err = 0.0f64;
    for _ in 0..10 {
        let p = planted(g.random(), 2, 3, 2, 30);
        let w = random_matrix(&mut g, 2, 2);
        let v = random_matrix(&mut g, 3, 2);
        let gm = random_matrix(&mut g, 30, 2);
        let obj = FrozenObjective::new(&p.tensor, &p.points, 1.0, &w, &v, &gm).unwrap();
        let grad = obj.gradient(&v);
        let step = 1e-6;
        let fd = DMatrix::from_fn(3, 2, |a, b| {
            let at = |t: f64| {
                let mut x = v.clone();
                x[(a, b)] += t;
                obj.value(&x)
            };
            (at(-2.0 * step) - 8.0 * at(-step) + 8.0 * at(step) - at(2.0 * step)) / (12.0 * step)
        });
        grad_err = grad_err.max((&grad - &fd).norm() / grad.norm());
    }
    verdict(
        filter_err < 1e-8 && identity_err <= 1e-12 && grad_err <= 1e-5,
        format!(
            "filter error {filter_err:.2e} (1e-8), identities {identity_err:.2e} (1e-12), gradient {grad_err:.2e} (1e-5)"
        ),
    )
}

fn monotonicity() -> Verdict {
    let mut g = rng(7);
    let mut worst = f64::NEG_INFINITY;
    let mut steps = 0;
    for case in 0..10 {
        let (n, m, r) = (
            g.random_range(1..=3),
            g.random_range(2..=3),
            g.random_range(1..=3),
        );
        let big_n = g.random_range(20..=40);
        let mut p = planted(g.random(), n, m, r, big_n);
        add_noise(&mut p.tensor, &mut g, 0.01);
        let opts = FcpdOptions {
            als: AlsOptions {
                max_iterations: 30,
                tolerance: 1e-12,
                seed: case,
                restarts: 1,
            },
            ..FcpdOptions::default()
        };
        let lambda = [0.1, 1.0, 10.0][case as usize % 3];
        let sol = fcpd_solve(&p.tensor, &p.points, r, lambda, &opts).unwrap();
        for pair in sol.trace.windows(2) {
            worst = worst.max((pair[1].objective - pair[0].objective) / pair[0].objective);
            steps += 1;
        }
    }
    verdict(
        worst <= 1e-10,
        format!("{steps} sweeps, largest relative increase {worst:.3e} (limit 1e-10)"),
    )
}

fn main() {
    let mut results = Vec::new();
    report(
        &mut results,
        8,
        "equivalence fixture",
        equivalence_fixture(),
    );

    let out = tempfile::tempdir().unwrap();
    let (toy, seconds) = toy_pipeline(out.path());
    report(
        &mut results,
        1,
        "toy function reproduction",
        function_reproduction(&toy, seconds),
    );
    report(
        &mut results,
        2,
        "tensor approximation quality",
        tensor_quality(&toy),
    );
    report(&mut results, 3, "baseline CPD exactness", cpd_exactness());
    report(
        &mut results,
        4,
        "non-uniqueness contrast",
        non_uniqueness_contrast(toy.penalty),
    );
    report(&mut results, 5, "G update oracle", g_update_oracle());
    report(&mut results, 6, "filter correctness", filter_suite());
    report(&mut results, 7, "monotonicity", monotonicity());

    let failed = results.iter().filter(|&&p| !p).count();
    println!(
        "{} of {} criteria passed",
        results.len() - failed,
        results.len()
    );
    if failed > 0 {
        std::process::exit(1);
    }
}
