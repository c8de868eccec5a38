use garpcast_core::evalkit::{
    comparison_report, default_thresholds, evaluate, naive_forecasts, MetricReport,
    QuantileForecast,
};
use garpcast_core::panel::{Panel, SplitSpec};
use garpcast_core::syngen::{generate_panel, GenConfig};

fn panel(n: usize, seed: u64) -> Panel {
    let cfg = GenConfig {
        n_agents: n,
        periods: 20,
        master_seed: seed,
        ..GenConfig::default()
    };
    generate_panel(&cfg).unwrap().0
}

fn holdout_forecasts(p: &Panel, split: &SplitSpec) -> Vec<QuantileForecast> {
    p.agents
        .iter()
        .map(|a| {
            let (_, hold) = a.split(split).unwrap();
            let rows: Vec<Vec<f64>> = hold.iter().map(|o| o.quantities.clone()).collect();
            QuantileForecast::from_point(a.agent_id.clone(), &rows).unwrap()
        })
        .collect()
}

#[test]
fn perfect_forecast_fixed_point() {
    let p = panel(100, 1);
    let split = SplitSpec::new(15, 5).unwrap();
    let r = evaluate(&p, &holdout_forecasts(&p, &split), &split, "perfect").unwrap();
    for a in &r.per_agent {
        assert!(a.mase.iter().all(|m| *m == Some(0.0)));
        assert_eq!(a.bundle_l2, 0.0);
        assert_eq!(a.fitness, Some(1.0));
        assert_eq!(a.wql, Some(0.0));
    }
}

fn mean_of(values: impl Iterator<Item = Option<f64>>) -> f64 {
    let v: Vec<f64> = values.flatten().collect();
    v.iter().sum::<f64>() / v.len() as f64
}

fn check_aggregate(r: &MetricReport) {
    let agg = &r.aggregate;
    for k in 0..r.goods {
        let want = mean_of(r.per_agent.iter().map(|a| a.mase[k]));
        assert!((agg.mase[k].mean.unwrap() - want).abs() <= 1e-12 * want.abs().max(1.0));
    }
    let want = mean_of(r.per_agent.iter().map(|a| a.fitness));
    assert!((agg.fitness.mean.unwrap() - want).abs() <= 1e-12);
    let want = mean_of(r.per_agent.iter().map(|a| Some(a.bundle_l2)));
    assert!((agg.bundle_l2.mean.unwrap() - want).abs() <= 1e-12 * want.max(1.0));
    for a in &r.per_agent {
        if let (Some(f), Some(n)) = (a.fitness, a.normalized_l2) {
            assert_eq!(f + n, 1.0);
        }
    }
}

#[test]
fn aggregates_and_survival_curves() {
    let p = panel(60, 2);
    let split = SplitSpec::new(15, 5).unwrap();
    let naive = evaluate(&p, &naive_forecasts(&p, &split).unwrap(), &split, "naive").unwrap();
    check_aggregate(&naive);
    let mut thresholds = vec![f64::NEG_INFINITY];
    thresholds.extend(default_thresholds());
    let t = comparison_report(&naive, &naive, &thresholds).unwrap();
    assert_eq!(t.survival_a[0], 1.0);
    assert_eq!(t.survival_a, t.survival_b);
    assert_eq!(t.wins, 0);
    for w in t.survival_a.windows(2) {
        assert!(w[1] <= w[0]);
    }
}

#[test]
fn naive_one_step_matches_hand_loop() {
    use garpcast_core::evalkit::{ccei_fitness_scatter, mase};

    let p = panel(25, 3);
    let split = SplitSpec::new(15, 1).unwrap();
    let r = evaluate(&p, &naive_forecasts(&p, &split).unwrap(), &split, "naive").unwrap();
    for (agent, row) in p.agents.iter().zip(&r.per_agent) {
        assert_eq!(agent.agent_id, row.agent_id);
        let q = |t: usize| &agent.observations[t].quantities;
        let mut l2 = 0.0;
        let mut norm = 0.0;
        for k in 0..3 {
            let scale: f64 = (1..15).map(|t| (q(t)[k] - q(t - 1)[k]).abs()).sum::<f64>() / 14.0;
            let want = (q(15)[k] - q(14)[k]).abs() / scale;
            let got = row.mase[k].unwrap();
            assert!(
                (got - want).abs() <= 1e-12 * want.max(1.0),
                "{got} vs {want}"
            );
            let context: Vec<f64> = (0..15).map(|t| q(t)[k]).collect();
            assert_eq!(mase(&[q(15)[k]], &[q(14)[k]], &context).unwrap(), got);
            l2 += (q(15)[k] - q(14)[k]).powi(2);
            norm += q(15)[k].powi(2);
        }
        assert!((row.bundle_l2 - l2.sqrt()).abs() <= 1e-12 * l2.sqrt().max(1.0));
        assert!((row.fitness.unwrap() - (1.0 - l2.sqrt() / norm.sqrt())).abs() <= 1e-12);
    }
    // every generated agent has CCEI 1, so the correlation is undefined
    let s = ccei_fitness_scatter(&p, &r, 1e-6).unwrap();
    assert!(s.points.iter().all(|pt| pt.ccei == 1.0 && pt.exact_passer));
    assert_eq!(s.correlation, None);
    assert_eq!(s.non_passer_mean_fitness, None);
}
