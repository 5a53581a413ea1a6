//! Solve the discrete dual for a random softmax batch and check the induced policy.

use copos::dual::{solve_dual, ConstraintKind, DualProblem};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn log_softmax(z: &[f64]) -> Vec<f64> {
    let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + z.iter().map(|x| (x - m).exp()).sum::<f64>().ln();
    z.iter().map(|x| x - lse).collect()
}

fn main() -> anyhow::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let (states, actions) = (8, 4);
    let logp: Vec<Vec<f64>> = (0..states)
        .map(|_| log_softmax(&(0..actions).map(|_| rng.random_range(-1.0..1.0)).collect::<Vec<_>>()))
        .collect();
    let g: Vec<Vec<f64>> = (0..states).map(|_| (0..actions).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();

    for kind in [ConstraintKind::KlOnly, ConstraintKind::Inequality, ConstraintKind::EqualityEntropy] {
        let p = DualProblem::discrete(logp.clone(), g.clone(), 0.01, 0.005, kind)?;
        let sol = solve_dual(&p)?;
        println!(
            "{kind:?}: eta = {:.5}, omega = {:.5}, KL = {:.6}, entropy loss = {:.6}, evals = {}",
            sol.eta,
            sol.omega,
            sol.kl,
            p.entropy_old - sol.entropy,
            sol.evaluations
        );
    }
    Ok(())
}
