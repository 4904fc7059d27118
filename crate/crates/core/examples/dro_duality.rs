// The KL-ball supremum equals the minimized dual, and the variance-based
// temperature estimate tracks the exact dual minimizer for small radii.

use bslrec::dro::{kl_ball_sup, minimize_dual, tau_star, uniform_base, weighted_moments, worst_case_weights};

pub fn run_example() -> bslrec::Result<()> {
    let scores = [0.9, 0.4, 0.1, -0.3, -0.7];
    let base = uniform_base(scores.len());

    for eta in [0.01, 0.1, 0.5] {
        let primal = kl_ball_sup(&scores, &base, eta)?;
        let (tau, dual) = minimize_dual(&scores, &base, eta, 1e-4, 1e4)?;
        println!("eta={eta:<5} sup={:.8} min dual={dual:.8} at tau={tau:.4}", primal.value);
        assert!((primal.value - dual).abs() < 1e-6);
    }

    let (_, var) = weighted_moments(&scores, &base);
    let eta = 1e-3;
    let approx = tau_star(var, eta)?;
    let (exact, _) = minimize_dual(&scores, &base, eta, 1e-4, 1e4)?;
    println!("eta={eta}: tau* = {approx:.4}, exact minimizer = {exact:.4}");

    for tau in [0.5, 0.1, 0.05] {
        let w = worst_case_weights(&scores, &base, tau)?;
        println!("tau={tau:<4} weights={:.3?} entropy={:.3}", w.weights, w.entropy());
    }
    Ok(())
}

#[allow(dead_code)]
fn main() -> bslrec::Result<()> {
    run_example()
}
