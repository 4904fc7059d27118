//! KL-ball distributionally robust optimization over a batch of negative scores.
//!
//! For a base distribution `p0` over the negatives and scores `f`, the worst
//! case of `E_P[f]` over `{P : KL(P || p0) <= eta}` is attained by an
//! exponential tilt `P(j) ∝ p0(j) exp(f_j / tau)`, and its value equals
//! `min_tau tau * log E_p0[exp(f / tau)] + tau * eta`. The softmax loss's
//! negative part is that dual objective at a fixed temperature.

use crate::error::{Error, Result};
use crate::losses::log_sum_exp;

const BISECTION_STEPS: usize = 200;
const BISECTION_TOL: f64 = 1e-12;

/// Tilted distribution over a negative batch.
#[derive(Debug, Clone, PartialEq)]
pub struct WorstCaseDistribution {
    pub weights: Vec<f64>,
    /// `KL(weights || base)`, the radius this tilt consumes.
    pub kl_radius: f64,
    pub tau: f64,
}

impl WorstCaseDistribution {
    pub fn entropy(&self) -> f64 {
        entropy(&self.weights)
    }
}

pub fn entropy(p: &[f64]) -> f64 {
    -p.iter().filter(|w| **w > 0.0).map(|w| w * w.ln()).sum::<f64>()
}

/// `KL(p || q)` with the `0 log 0 = 0` convention.
pub fn kl_divergence(p: &[f64], q: &[f64]) -> f64 {
    p.iter()
        .zip(q)
        .filter(|(pi, _)| **pi > 0.0)
        .map(|(pi, qi)| pi * (pi / qi).ln())
        .sum()
}

fn check_base(scores: &[f64], base: &[f64]) -> Result<()> {
    if scores.len() != base.len() {
        return Err(Error::InvalidArgument(format!(
            "{} scores but base distribution has {} atoms",
            scores.len(),
            base.len()
        )));
    }
    if scores.is_empty() {
        return Err(Error::InvalidArgument("empty score vector".into()));
    }
    if base.iter().any(|p| !(*p > 0.0)) {
        return Err(Error::InvalidArgument("base probabilities must be > 0".into()));
    }
    let total: f64 = base.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidArgument(format!("base sums to {total}, not 1")));
    }
    Ok(())
}

fn check_tau(tau: f64) -> Result<()> {
    if tau > 0.0 && tau.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("tau must be positive, got {tau}")))
    }
}

pub fn uniform_base(n: usize) -> Vec<f64> {
    vec![1.0 / n as f64; n]
}

fn tilt(scores: &[f64], base: &[f64], tau: f64) -> Vec<f64> {
    let logits: Vec<f64> = scores
        .iter()
        .zip(base)
        .map(|(s, p)| p.ln() + s / tau)
        .collect();
    let lse = log_sum_exp(&logits);
    logits.iter().map(|l| (l - lse).exp()).collect()
}

/// Worst-case weights `w_j ∝ base_j * exp(scores_j / tau)`.
pub fn worst_case_weights(scores: &[f64], base: &[f64], tau: f64) -> Result<WorstCaseDistribution> {
    check_base(scores, base)?;
    check_tau(tau)?;
    let weights = tilt(scores, base, tau);
    let kl_radius = kl_divergence(&weights, base).max(0.0);
    Ok(WorstCaseDistribution {
        weights,
        kl_radius,
        tau,
    })
}

/// Dual objective `tau * log sum_j base_j exp(scores_j / tau) + tau * eta`.
pub fn dual_value(scores: &[f64], base: &[f64], tau: f64, eta: f64) -> Result<f64> {
    check_base(scores, base)?;
    check_tau(tau)?;
    if !(eta >= 0.0) {
        return Err(Error::InvalidArgument(format!("eta must be >= 0, got {eta}")));
    }
    let logits: Vec<f64> = scores
        .iter()
        .zip(base)
        .map(|(s, p)| p.ln() + s / tau)
        .collect();
    Ok(tau * log_sum_exp(&logits) + tau * eta)
}

/// Solution of the primal problem `sup { E_P[f] : KL(P || base) <= eta }`.
#[derive(Debug, Clone, PartialEq)]
pub struct KlBallSup {
    pub value: f64,
    pub argmax: Vec<f64>,
    /// Tilt temperature of the maximizer; `None` when the constraint does not
    /// bind (`eta == 0` gives the base itself, a radius beyond the one-hot
    /// limit gives the base restricted to the maximal scores).
    pub tau: Option<f64>,
}

/// Solves the KL-ball maximization by bisection on the tilt temperature.
///
/// The KL of the tilted distribution decreases monotonically from
/// `-log base(argmax set)` at `tau -> 0` to `0` at `tau -> inf`; the maximizer
/// is the tilt whose KL equals `eta`.
pub fn kl_ball_sup(scores: &[f64], base: &[f64], eta: f64) -> Result<KlBallSup> {
    check_base(scores, base)?;
    if !(eta >= 0.0 && eta.is_finite()) {
        return Err(Error::InvalidArgument(format!("eta must be >= 0, got {eta}")));
    }
    let expect = |p: &[f64]| p.iter().zip(scores).map(|(p, s)| p * s).sum::<f64>();
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let min = scores.iter().copied().fold(f64::INFINITY, f64::min);
    if eta == 0.0 || max == min {
        return Ok(KlBallSup {
            value: expect(base),
            argmax: base.to_vec(),
            tau: None,
        });
    }
    let top_mass: f64 = scores
        .iter()
        .zip(base)
        .filter(|(s, _)| **s == max)
        .map(|(_, p)| p)
        .sum();
    let kl_limit = -top_mass.ln();
    if eta >= kl_limit {
        let argmax: Vec<f64> = scores
            .iter()
            .zip(base)
            .map(|(s, p)| if *s == max { p / top_mass } else { 0.0 })
            .collect();
        return Ok(KlBallSup {
            value: max,
            argmax,
            tau: None,
        });
    }
    let kl_at = |tau: f64| kl_divergence(&tilt(scores, base, tau), base);
    let spread = max - min;
    // bracket on log tau: kl(lo) > eta >= kl(hi)
    let mut lo = (spread * 1e-3).ln();
    let mut hi = (spread * 10.0).ln();
    let mut guard = 0;
    while kl_at(lo.exp()) <= eta {
        lo -= 2.0;
        guard += 1;
        if guard > 400 {
            return Err(Error::NoConvergence { steps: guard });
        }
    }
    while kl_at(hi.exp()) > eta {
        hi += 2.0;
        guard += 1;
        if guard > 400 {
            return Err(Error::NoConvergence { steps: guard });
        }
    }
    let mut converged = false;
    for _ in 0..BISECTION_STEPS {
        let mid = 0.5 * (lo + hi);
        let kl = kl_at(mid.exp());
        if (kl - eta).abs() <= BISECTION_TOL * eta.max(1.0) || hi - lo < 1e-15 {
            lo = mid;
            hi = mid;
            converged = true;
            break;
        }
        if kl > eta {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    if !converged {
        return Err(Error::NoConvergence {
            steps: BISECTION_STEPS,
        });
    }
    let tau = (0.5 * (lo + hi)).exp();
    let argmax = tilt(scores, base, tau);
    Ok(KlBallSup {
        value: expect(&argmax),
        argmax,
        tau: Some(tau),
    })
}

/// Minimizes [`dual_value`] over `tau` in `[tau_lo, tau_hi]` by golden-section
/// search on `log tau`. Returns `(tau, value)`.
///
/// The dual is convex in `tau`, so the search is exact up to the bracket.
pub fn minimize_dual(
    scores: &[f64],
    base: &[f64],
    eta: f64,
    tau_lo: f64,
    tau_hi: f64,
) -> Result<(f64, f64)> {
    check_tau(tau_lo)?;
    check_tau(tau_hi)?;
    let f = |log_tau: f64| dual_value(scores, base, log_tau.exp(), eta);
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let (mut a, mut b) = (tau_lo.ln(), tau_hi.ln());
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let mut fc = f(c)?;
    let mut fd = f(d)?;
    for _ in 0..300 {
        if fc <= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = f(c)?;
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = f(d)?;
        }
    }
    let best = 0.5 * (a + b);
    Ok((best.exp(), f(best)?))
}

/// Base-weighted mean and population variance of the scores.
pub fn weighted_moments(scores: &[f64], base: &[f64]) -> (f64, f64) {
    let mean: f64 = scores.iter().zip(base).map(|(s, p)| p * s).sum();
    let var = scores
        .iter()
        .zip(base)
        .map(|(s, p)| p * (s - mean).powi(2))
        .sum();
    (mean, var)
}

/// Second-order expansion of the negative part: `E[f] + Var[f] / (2 tau)`.
pub fn taylor_negative_part(scores: &[f64], base: &[f64], tau: f64) -> Result<f64> {
    check_base(scores, base)?;
    check_tau(tau)?;
    let (mean, var) = weighted_moments(scores, base);
    Ok(mean + var / (2.0 * tau))
}

/// Approximate optimal temperature `sqrt(variance / (2 eta))`.
pub fn tau_star(variance: f64, eta: f64) -> Result<f64> {
    if !(eta > 0.0) {
        return Err(Error::InvalidArgument(format!("eta must be > 0, got {eta}")));
    }
    if !(variance >= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "variance must be >= 0, got {variance}"
        )));
    }
    Ok((variance / (2.0 * eta)).sqrt())
}

/// Robustness radius implied by a temperature: `Var_base[f] / (2 tau^2)`.
pub fn estimate_eta(scores: &[f64], base: &[f64], tau: f64) -> Result<f64> {
    check_base(scores, base)?;
    check_tau(tau)?;
    let (_, var) = weighted_moments(scores, base);
    Ok(var / (2.0 * tau * tau))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_instance(rng: &mut ChaCha8Rng, n: usize) -> (Vec<f64>, Vec<f64>) {
        let scores = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let raw: Vec<f64> = (0..n).map(|_| rng.random_range(0.2..1.0)).collect();
        let total: f64 = raw.iter().sum();
        (scores, raw.iter().map(|r| r / total).collect())
    }

    /// Independent primal search: random pairwise mass transfers, pulled back
    /// onto the ball along the segment to the base when they leave it.
    fn simplex_search(scores: &[f64], base: &[f64], eta: f64, iters: usize, seed: u64) -> f64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = scores.len();
        let value = |p: &[f64]| p.iter().zip(scores).map(|(a, b)| a * b).sum::<f64>();
        let pull_back = |q: &[f64]| -> Vec<f64> {
            if kl_divergence(q, base) <= eta {
                return q.to_vec();
            }
            let (mut lo, mut hi) = (0.0f64, 1.0f64);
            for _ in 0..100 {
                let t = 0.5 * (lo + hi);
                let mix: Vec<f64> = q.iter().zip(base).map(|(a, b)| b + t * (a - b)).collect();
                if kl_divergence(&mix, base) <= eta {
                    lo = t;
                } else {
                    hi = t;
                }
            }
            q.iter().zip(base).map(|(a, b)| b + lo * (a - b)).collect()
        };
        let mut p = base.to_vec();
        let mut best = value(&p);
        let mut step = 0.5;
        for it in 0..iters {
            let from = rng.random_range(0..n);
            let to = rng.random_range(0..n);
            if from == to {
                continue;
            }
            let amount = step * p[from];
            let mut q = p.clone();
            q[from] -= amount;
            q[to] += amount;
            let q = pull_back(&q);
            let v = value(&q);
            if v > best {
                best = v;
                p = q;
            }
            if it % 500 == 499 {
                step *= 0.7;
            }
        }
        best
    }

    #[test]
    fn equal_scores_keep_the_base() {
        let base = [0.2, 0.5, 0.3];
        let w = worst_case_weights(&[0.4; 3], &base, 0.1).unwrap();
        for (a, b) in w.weights.iter().zip(base) {
            assert!((a - b).abs() < 1e-15);
        }
        assert!(w.kl_radius.abs() < 1e-15);
    }

    #[test]
    fn two_atom_tilt() {
        let tau = 0.3;
        let w = worst_case_weights(&[tau * 3f64.ln(), 0.0], &[0.5, 0.5], tau).unwrap();
        assert!((w.weights[0] - 0.75).abs() < 1e-15);
        assert!((w.weights[1] - 0.25).abs() < 1e-15);
    }

    #[test]
    fn weight_invariants_and_errors() {
        let w = worst_case_weights(&[0.1, -0.4, 0.8], &[0.3, 0.3, 0.4], 0.2).unwrap();
        assert!((w.weights.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        let kl: f64 = w.weights.iter().zip([0.3, 0.3, 0.4]).map(|(a, b)| a * (a / b).ln()).sum();
        assert!((w.kl_radius - kl).abs() < 1e-10);
        assert!(worst_case_weights(&[0.1], &[0.5, 0.5], 0.2).is_err());
        assert!(worst_case_weights(&[0.1, 0.2], &[0.5, 0.5], 0.0).is_err());
    }

    #[test]
    fn entropy_falls_as_tau_falls() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (scores, base) = random_instance(&mut rng, 5);
        let ents: Vec<f64> = [0.5, 0.2, 0.1]
            .iter()
            .map(|&t| worst_case_weights(&scores, &base, t).unwrap().entropy())
            .collect();
        assert!(ents[0] > ents[1] && ents[1] > ents[2], "{ents:?}");
    }

    #[test]
    fn dual_value_examples() {
        assert!((dual_value(&[0.3; 4], &uniform_base(4), 0.2, 0.0).unwrap() - 0.3).abs() < 1e-15);
        let v = dual_value(&[1.0, 0.0], &[0.5, 0.5], 1.0, 0.0).unwrap();
        assert!((v - ((1f64.exp() + 1.0) / 2.0).ln()).abs() < 1e-15);
        assert!(dual_value(&[1.0, 0.0], &[0.5, 0.5], 1.0, -0.1).is_err());
    }

    #[test]
    fn kl_ball_degenerate_cases() {
        let base = [0.25, 0.25, 0.5];
        let scores = [0.3, -0.2, 0.9];
        let r = kl_ball_sup(&scores, &base, 0.0).unwrap();
        assert!((r.value - (0.075 - 0.05 + 0.45)).abs() < 1e-15);
        assert_eq!(r.argmax, base.to_vec());
        let r = kl_ball_sup(&[0.4; 3], &base, 0.7).unwrap();
        assert!((r.value - 0.4).abs() < 1e-15);
        // radius beyond the one-hot limit (-ln 0.5)
        let r = kl_ball_sup(&scores, &base, 1.0).unwrap();
        assert_eq!(r.value, 0.9);
        assert_eq!(r.argmax, vec![0.0, 0.0, 1.0]);
        assert!(kl_ball_sup(&scores, &base, -1e-3).is_err());
    }

    #[test]
    fn kl_ball_matches_independent_search() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for case in 0..5 {
            let (scores, base) = random_instance(&mut rng, 4);
            let eta = [0.05, 0.2, 0.4][case % 3];
            let r = kl_ball_sup(&scores, &base, eta).unwrap();
            assert!((kl_divergence(&r.argmax, &base) - eta).abs() < 1e-9 || r.tau.is_none());
            let oracle = simplex_search(&scores, &base, eta, 10_000, case as u64);
            assert!(oracle <= r.value + 1e-9, "oracle {oracle} beats {}", r.value);
            assert!((oracle - r.value).abs() < 1e-5, "case {case}: {oracle} vs {}", r.value);
        }
    }

    #[test]
    fn taylor_examples() {
        assert!((taylor_negative_part(&[0.2; 3], &uniform_base(3), 0.5).unwrap() - 0.2).abs() < 1e-15);
        assert!((taylor_negative_part(&[1.0, -1.0], &[0.5, 0.5], 1.0).unwrap() - 0.5).abs() < 1e-15);
    }

    /// Right-skewed bounded scores, shaped like cosine scores of sampled negatives.
    pub(crate) fn skewed_batch(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
        use rand_distr::{Distribution, Exp, Normal};
        let normal = Normal::new(0.0f64, 0.5).unwrap();
        let tail = Exp::new(1.0 / 0.3).unwrap();
        (0..n)
            .map(|_| (normal.sample(rng) + tail.sample(rng) as f64).tanh())
            .collect()
    }

    #[test]
    fn taylor_error_is_second_order() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..20 {
            let scores = skewed_batch(&mut rng, 256);
            let base = uniform_base(scores.len());
            let err = |tau: f64| {
                (dual_value(&scores, &base, tau, 0.0).unwrap()
                    - taylor_negative_part(&scores, &base, tau).unwrap())
                .abs()
            };
            assert!(err(20.0) <= 0.25 * err(10.0), "{} vs {}", err(20.0), err(10.0));
        }
    }

    #[test]
    fn tau_star_and_eta_examples() {
        assert_eq!(tau_star(2.0, 1.0).unwrap(), 1.0);
        assert_eq!(tau_star(0.0, 0.3).unwrap(), 0.0);
        assert!(tau_star(1.0, 0.0).is_err());
        assert_eq!(estimate_eta(&[0.5; 3], &uniform_base(3), 0.1).unwrap(), 0.0);
        // variance 2 at tau 1 -> eta 1
        let s = [2f64.sqrt(), -(2f64.sqrt())];
        assert!((estimate_eta(&s, &[0.5, 0.5], 1.0).unwrap() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn tau_star_tracks_the_dual_minimizer_for_small_eta() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let (scores, base) = random_instance(&mut rng, 5);
        let eta = 1e-3;
        let (_, var) = weighted_moments(&scores, &base);
        let predicted = tau_star(var, eta).unwrap();
        // fine log grid
        let grid = (0..4000).map(|k| 10f64.powf(-2.0 + 5.0 * k as f64 / 3999.0));
        let best = grid
            .map(|t| (t, dual_value(&scores, &base, t, eta).unwrap()))
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .unwrap()
            .0;
        assert!((best - predicted).abs() / predicted < 0.1, "{best} vs {predicted}");
    }

    proptest! {
        #[test]
        fn eta_round_trips_through_tau_star(
            scores in prop::collection::vec(-1.0f64..1.0, 2..8),
            tau in 0.01f64..2.0,
        ) {
            let base = uniform_base(scores.len());
            let eta = estimate_eta(&scores, &base, tau).unwrap();
            prop_assume!(eta > 1e-12);
            let (_, var) = weighted_moments(&scores, &base);
            let back = tau_star(var, eta).unwrap();
            prop_assert!((back - tau).abs() <= 1e-12 * tau.max(1.0));
        }

        #[test]
        fn tilt_preserves_score_ranking(
            scores in prop::collection::vec(-1.0f64..1.0, 2..8),
            tau in 0.05f64..2.0,
        ) {
            let base = uniform_base(scores.len());
            let w = worst_case_weights(&scores, &base, tau).unwrap();
            for j in 0..scores.len() {
                for k in 0..scores.len() {
                    if scores[j] > scores[k] + 1e-9 {
                        prop_assert!(w.weights[j] / base[j] > w.weights[k] / base[k]);
                    }
                }
            }
        }

        #[test]
        fn log_mean_exp_is_nonincreasing_in_tau(
            scores in prop::collection::vec(-1.0f64..1.0, 2..8),
            t1 in 0.01f64..5.0,
            factor in 1.0f64..10.0,
        ) {
            let base = uniform_base(scores.len());
            let small = dual_value(&scores, &base, t1, 0.0).unwrap();
            let large = dual_value(&scores, &base, t1 * factor, 0.0).unwrap();
            prop_assert!(large <= small + 1e-12);
        }

        #[test]
        fn sup_is_nondecreasing_in_eta(
            scores in prop::collection::vec(-1.0f64..1.0, 3..6),
            e1 in 0.0f64..0.8,
            de in 0.0f64..0.5,
        ) {
            let base = uniform_base(scores.len());
            let a = kl_ball_sup(&scores, &base, e1).unwrap().value;
            let b = kl_ball_sup(&scores, &base, e1 + de).unwrap().value;
            prop_assert!(b >= a - 1e-10);
        }

        #[test]
        fn tilt_is_the_ball_maximizer_at_its_own_radius(
            scores in prop::collection::vec(-1.0f64..1.0, 3..7),
            tau in 0.1f64..2.0,
        ) {
            let base = uniform_base(scores.len());
            let w = worst_case_weights(&scores, &base, tau).unwrap();
            prop_assume!(w.kl_radius > 1e-6);
            let sup = kl_ball_sup(&scores, &base, w.kl_radius).unwrap();
            for (a, b) in sup.argmax.iter().zip(&w.weights) {
                prop_assert!((a - b).abs() < 1e-8);
            }
        }
    }
}
