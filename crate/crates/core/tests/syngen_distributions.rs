use garpcast_core::panel::validate_panel;
use garpcast_core::revpref::{check_garp, compute_ccei};
use garpcast_core::syngen::{
    draw_prices, generate_panel, stream_rng, GenConfig, ShareDraw, StreamDomain,
};
use statrs::distribution::{ContinuousCDF, LogNormal};

fn quantile(sorted: &[f64], p: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[lo + 1] - sorted[lo])
}

#[test]
fn lognormal_price_moments() {
    let cfg = GenConfig {
        periods: 250_000,
        goods: 4,
        ..GenConfig::default()
    };
    let mut rng = stream_rng(2024, StreamDomain::Generation, 0);
    let mut draws: Vec<f64> = draw_prices(&cfg, &mut rng).into_iter().flatten().collect();
    assert_eq!(draws.len(), 1_000_000);
    let mean = draws.iter().sum::<f64>() / draws.len() as f64;
    assert!((mean - 3.40).abs() <= 0.01, "mean {mean}");
    draws.sort_by(f64::total_cmp);
    let law = LogNormal::new(3.0f64.ln(), 0.5).unwrap();
    for p in [0.01, 0.99] {
        let want = law.inverse_cdf(p);
        let got = quantile(&draws, p);
        assert!((got / want - 1.0).abs() <= 0.02, "q{p}: {got} vs {want}");
    }
}

/// Kolmogorov-Smirnov distance between a sample and a continuous CDF.
fn ks_distance(mut xs: Vec<f64>, cdf: impl Fn(f64) -> f64) -> f64 {
    xs.sort_by(f64::total_cmp);
    let n = xs.len() as f64;
    xs.iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = cdf(x);
            (f - i as f64 / n).abs().max(((i + 1) as f64 / n - f).abs())
        })
        .fold(0.0, f64::max)
}

#[test]
fn simplex_shares_have_beta_marginals() {
    let n = 40_000;
    for goods in [2usize, 3, 5] {
        let mut rng = stream_rng(goods as u64, StreamDomain::Generation, 9);
        let draws: Vec<Vec<f64>> = (0..n)
            .map(|_| ShareDraw::sample(goods, &mut rng).shares)
            .collect();
        for k in 0..goods {
            let marginal: Vec<f64> = draws.iter().map(|s| s[k]).collect();
            // Beta(1, K-1) CDF
            let d = ks_distance(marginal, |x| 1.0 - (1.0 - x).powi(goods as i32 - 1));
            // 0.1% critical value
            assert!(d < 1.95 / (n as f64).sqrt(), "K={goods} good {k}: D={d}");
        }
    }
}

#[test]
fn generated_panel_is_valid_and_rational() {
    for (goods, periods, seed) in [(2, 30, 1u64), (3, 50, 2), (5, 20, 3)] {
        let cfg = GenConfig {
            n_agents: 40,
            periods,
            goods,
            master_seed: seed,
            ..GenConfig::default()
        };
        let (panel, report) = generate_panel(&cfg).unwrap();
        assert_eq!(report.agents_generated, 40);
        assert!(validate_panel(&panel, 1e-9).is_empty());
        for a in &panel.agents {
            for o in &a.observations {
                assert!((o.expenditure() - cfg.budget).abs() / cfg.budget <= 1e-9);
            }
            assert!(check_garp(a, 1.0).unwrap().passes());
            assert_eq!(compute_ccei(a, 1e-6).unwrap().ccei, 1.0);
        }
    }
}

#[test]
fn output_is_independent_of_thread_count() {
    let cfg = GenConfig {
        n_agents: 64,
        periods: 20,
        master_seed: 77,
        ..GenConfig::default()
    };
    let run = |threads| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| generate_panel(&cfg).unwrap())
    };
    let (a, ra) = run(1);
    let (b, rb) = run(4);
    assert_eq!(a, b);
    assert_eq!(ra, rb);
}

#[test]
fn simplex_share_means() {
    let mut rng = stream_rng(31, StreamDomain::Generation, 0);
    let mut sums = [0.0; 3];
    let n = 1_000_000;
    for _ in 0..n {
        for (s, x) in sums.iter_mut().zip(ShareDraw::sample(3, &mut rng).shares) {
            *s += x;
        }
    }
    for s in sums {
        assert!(
            (s / n as f64 - 1.0 / 3.0).abs() <= 0.001,
            "{}",
            s / n as f64
        );
    }
}

#[test]
fn exhaustion_is_rare_at_default_limit() {
    let cfg = GenConfig {
        n_agents: 1000,
        master_seed: 12,
        ..GenConfig::default()
    };
    let (_, report) = generate_panel(&cfg).unwrap();
    println!(
        "exhausted {}/{}, mean rejections per agent {:.1}, max in one period {}",
        report.exhausted.len(),
        report.agents_requested,
        report.mean_rejections_per_agent(),
        report.max_rejections_in_period
    );
    assert!(report.exhausted.len() <= 1);
    assert!(report.mean_rejections_per_agent().is_finite());
    assert_eq!(
        report.rejection_histogram.iter().sum::<u64>(),
        50 * report.agents_generated as u64
    );
}
