//! Closed-form iterates on the quadratic bandit: natural gradient vs. entropy regularization.

use copos::analysis::{closed_form, fitted_slope, natural_gradient_iterates, ToyParams};

fn main() -> anyhow::Result<()> {
    let p = ToyParams { n: 10_000, ..ToyParams::default() };
    let ng = natural_gradient_iterates(p.b0_prec, p.b0_lin, p.r_quad, p.r_lin, p.eta, p.n)?;
    let er = closed_form(&p)?;

    println!("{:>6} {:>14} {:>14}", "n", "|d_n| natural", "|d_n| entropy");
    for n in [0, 1, 10, 100, 1000, 10_000] {
        println!("{n:>6} {:>14.6e} {:>14.6e}", ng.distance[n].abs(), er.distance[n].abs());
    }

    let (x, y): (Vec<f64>, Vec<f64>) = (100..=p.n).map(|n| ((n as f64).ln(), ng.distance[n].abs().ln())).unzip();
    println!("log-log slope of the natural gradient distance: {:.4}", fitted_slope(&x, &y));
    println!("entropy-regularized precision tends to R / omega = {}", p.r_quad / p.omega);
    println!("B_n at n = {}: {:.6}", p.n, er.precision[p.n]);
    Ok(())
}
