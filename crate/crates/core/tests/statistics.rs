use statrs::function::gamma::ln_gamma;
use trustloop::metrics::{reward_stats, t_quantile_975};
use trustloop::rng::SplitMix64;

/// E[s] / sigma for normal-theory samples of size n.
fn c4(n: usize) -> f64 {
    let n = n as f64;
    (2.0 / (n - 1.0)).sqrt() * (ln_gamma(n / 2.0) - ln_gamma((n - 1.0) / 2.0)).exp()
}

fn mean_half_width(n: usize, reps: usize, rng: &mut SplitMix64) -> f64 {
    let mut total = 0.0;
    for _ in 0..reps {
        // Normal rewards via Box-Muller, mean 50, sd 20.
        let xs: Vec<f64> = (0..n)
            .map(|_| {
                let u1 = rng.unit_f64().max(f64::MIN_POSITIVE);
                let u2 = rng.unit_f64();
                50.0 + 20.0 * (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
            })
            .collect();
        total += reward_stats(&xs).unwrap().half_width;
    }
    total / reps as f64
}

#[test]
fn half_width_shrinks_as_inverse_root_n() {
    let mut rng = SplitMix64::new(99);
    let sigma = 20.0;
    let mut scaled = Vec::new();
    for n in [5usize, 20, 80] {
        let hw = mean_half_width(n, 4000, &mut rng);
        let expected = t_quantile_975(n - 1) * c4(n) * sigma / (n as f64).sqrt();
        assert!((hw / expected - 1.0).abs() < 0.03, "n={n}: {hw} vs {expected}");
        scaled.push(hw * (n as f64).sqrt() / t_quantile_975(n - 1) / c4(n));
    }
    for s in &scaled {
        assert!((s / sigma - 1.0).abs() < 0.03, "{scaled:?}");
    }
}

#[test]
fn textbook_interval() {
    // mean 50, s = 57.735, t(3) = 3.182446
    let s = reward_stats(&[0.0, 0.0, 100.0, 100.0]).unwrap();
    assert_eq!(s.mean, 50.0);
    assert!((s.half_width - 91.88).abs() < 0.02, "{}", s.half_width);
    assert!((s.ci_low + 41.88).abs() < 0.02 && (s.ci_high - 141.88).abs() < 0.02);
}
