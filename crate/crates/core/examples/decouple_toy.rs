//! Decouple the toy polynomial with a single penalty weight and print the
//! fitted branches.
//!
//! cargo run --release --example decouple_toy [lambda]

use fcpd::fixtures::toy_coupled;
use fcpd::{build_jacobian_tensor, lambda_search, sample_points, AlsOptions, FcpdOptions};

fn main() -> fcpd::Result<()> {
    let lambda: f64 = std::env::args()
        .nth(1)
        .map(|s| s.parse().expect("lambda must be a number"))
        .unwrap_or(10.0);
    let f = toy_coupled();
    let training = sample_points(2, 100, (-1.5, 1.5), 1)?;
    let validation = sample_points(2, 500, (-1.5, 1.5), 2)?;
    let jt = build_jacobian_tensor(&f, &training)?;
    let opts = FcpdOptions {
        als: AlsOptions {
            max_iterations: 200,
            tolerance: 1e-8,
            seed: 1,
            restarts: 5,
        },
        lambdas: vec![lambda],
        ..FcpdOptions::default()
    };
    let search = lambda_search(&f, &jt, 3, &opts, &validation)?;
    let fit = search.best_fit();
    println!("lambda            {lambda:e}");
    println!(
        "tensor error      {:.4} %",
        fit.solution.tensor_relative_error
    );
    println!("penalty           {:.4e}", fit.solution.penalty);
    for (i, e) in fit.report.output_errors.iter().enumerate() {
        println!("e_{}               {:.4} %", i + 1, e.unwrap_or(f64::NAN));
    }
    for (i, b) in fit.model.branches().iter().enumerate() {
        let v = fit.model.v().column(i);
        println!(
            "branch {i}: v = [{:+.4}, {:+.4}], coeffs {:?}",
            v[0], v[1], b.coeffs
        );
    }
    Ok(())
}
