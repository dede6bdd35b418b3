use super::*;
use proptest::prelude::*;

fn prices(v: &[f64]) -> PriceSignal {
    PriceSignal::new(v.to_vec()).unwrap()
}

fn budget_oracle(lambda: &[f64], alpha: f64, m: f64) -> Vec<f64> {
    // Projected gradient on |sum y| <= m.
    let n = lambda.len() as f64;
    let mut y = vec![0.0; lambda.len()];
    for _ in 0..2000 {
        for (yt, l) in y.iter_mut().zip(lambda) {
            *yt -= (l + alpha * *yt) / (2.0 * alpha);
        }
        let s: f64 = y.iter().sum();
        let excess = if s > m { s - m } else if s < -m { s + m } else { 0.0 };
        y.iter_mut().for_each(|v| *v -= excess / n);
    }
    y
}

#[test]
fn zero_price_gives_zero_response() {
    let p = AgentParams::GeneralBox { alpha: 1.0, p_low: -1.0, p_high: 2.0, e_low: -3.0, e_high: 1.0 };
    let sol = solve_agent_qp(&p, &prices(&[0.0, 0.0]), None).unwrap();
    assert_eq!(sol.y, vec![0.0, 0.0]);
    for f in Family::ALL {
        assert!(sol.dual(f).iter().all(|&d| d == 0.0));
    }
}

#[test]
fn total_budget_binding() {
    let p = AgentParams::TotalBudget { alpha: 1.0, m_budget: 1.0 };
    let sol = solve_agent_qp(&p, &prices(&[1.0, 2.0]), None).unwrap();
    let oracle = budget_oracle(&[1.0, 2.0], 1.0, 1.0);
    for t in 0..2 {
        assert!((sol.y[t] - oracle[t]).abs() < 1e-9);
    }
    assert!((sol.y[0] - 0.0).abs() < 1e-12 && (sol.y[1] + 1.0).abs() < 1e-12);
    assert!((sol.nu_lo[1] - 1.0).abs() < 1e-12);
    assert_eq!(sol.nu_lo[0], 0.0);
    assert_eq!(sol.nu_hi, vec![0.0, 0.0]);
    assert_eq!(sol.mu_hi, vec![0.0, 0.0]);
    assert!((sol.objective_value + 1.5).abs() < 1e-12);
}

#[test]
fn general_box_interior() {
    let p = AgentParams::GeneralBox { alpha: 2.0, p_low: -1.0, p_high: 1.0, e_low: -1.0, e_high: 1.0 };
    let sol = solve_agent_qp(&p, &prices(&[1.0, -1.0]), None).unwrap();
    // Grid search over the feasible square.
    let mut best = (f64::INFINITY, 0.0, 0.0);
    for i in 0..=400 {
        for j in 0..=400 {
            let (a, b) = (-1.0 + i as f64 / 200.0, -1.0 + j as f64 / 200.0);
            if (a + b).abs() > 1.0 {
                continue;
            }
            let f = a - b + a * a + b * b;
            if f < best.0 {
                best = (f, a, b);
            }
        }
    }
    assert!((sol.y[0] - best.1).abs() < 1e-2 && (sol.y[1] - best.2).abs() < 1e-2);
    assert_eq!(sol.y, vec![-0.5, 0.5]);
    for f in Family::ALL {
        assert!(sol.dual(f).iter().all(|&d| d == 0.0));
    }
}

#[test]
fn asymmetric_examples() {
    let p = AgentParams::AsymmetricDisutility { alpha1: 1.0, alpha2: 1.0, d_min: 1.0 };
    let sol = solve_asymmetric(&p, &prices(&[1.0]), &[2.0]).unwrap();
    assert!((sol.y[0] + 1.0).abs() < 1e-12);
    assert_eq!(sol.alpha_eff, vec![1.0]);

    let p = AgentParams::AsymmetricDisutility { alpha1: 2.0, alpha2: 1.0, d_min: 1.0 };
    let sol = solve_asymmetric(&p, &prices(&[-1.0]), &[3.0]).unwrap();
    assert!((sol.y[0] - 1.0).abs() < 1e-12);
    assert_eq!(sol.alpha_eff, vec![1.0]);
    // scalar grid search confirmation
    let obj = |y: f64| asymmetric_objective(&[y], &prices(&[-1.0]), &p, &[3.0]).unwrap();
    let grid_best = (0..=4000).map(|i| -2.0 + i as f64 * 1e-3).min_by(|a, b| obj(*a).total_cmp(&obj(*b))).unwrap();
    assert!((grid_best - 1.0).abs() < 1e-3);

    let sol = solve_asymmetric(&p, &prices(&[0.0, 0.0, 0.0]), &[3.0, 4.0, 5.0]).unwrap();
    assert_eq!(sol.y, vec![0.0; 3]);
}

#[test]
fn ghost_demand_is_rejected() {
    let p = AgentParams::AsymmetricDisutility { alpha1: 1.0, alpha2: 1.0, d_min: 1.0 };
    let err = solve_asymmetric(&p, &prices(&[1.0, 1.0]), &[2.0, 1.0005]).unwrap_err();
    assert!(matches!(err, Error::GhostDemandViolation { t: 1, .. }));
}

#[test]
fn infeasible_origin_is_rejected() {
    let p = AgentParams::GeneralBox { alpha: 1.0, p_low: 0.5, p_high: 1.0, e_low: -1.0, e_high: 1.0 };
    assert!(matches!(solve_agent_qp(&p, &prices(&[1.0]), None), Err(Error::InfeasibleModel(_))));
    let p = AgentParams::TotalBudget { alpha: 1.0, m_budget: -0.1 };
    assert!(matches!(solve_agent_qp(&p, &prices(&[1.0]), None), Err(Error::InfeasibleModel(_))));
    let p = AgentParams::TotalBudget { alpha: 1e-4, m_budget: 1.0 };
    assert!(matches!(solve_agent_qp(&p, &prices(&[1.0]), None), Err(Error::InvalidParams(_))));
}

#[test]
fn time_varying_alpha_below_floor_is_rejected() {
    let p = AgentParams::TotalBudget { alpha: 1.0, m_budget: 1.0 };
    let r = solve_agent_qp(&p, &prices(&[1.0, 1.0]), Some(&[1.0, 1e-5]));
    assert!(matches!(r, Err(Error::InvalidParams(_))));
}

#[test]
fn residual_examples() {
    let p = AgentParams::GeneralBox { alpha: 2.0, p_low: -1.0, p_high: 1.0, e_low: -5.0, e_high: 5.0 };
    let pr = prices(&[1.0, -1.0]);
    let sol = solve_agent_qp(&p, &pr, None).unwrap();
    let r = kkt_residuals(&sol, &p, &pr, &[2.0, 2.0]).unwrap();
    assert!(r.max() <= 1e-6);

    let mut bad = sol.clone();
    bad.y = vec![-0.5, 2.0];
    let r = kkt_residuals(&bad, &p, &pr, &[2.0, 2.0]).unwrap();
    assert!((r.primal - 1.0).abs() < 1e-15);

    let mut nudged = sol.clone();
    nudged.y[0] += 1e-3;
    let r = kkt_residuals(&nudged, &p, &pr, &[2.0, 2.0]).unwrap();
    assert!((r.stationarity - 2e-3).abs() < 1e-15);

    assert!(matches!(kkt_residuals(&sol, &p, &pr, &[2.0]), Err(Error::DimensionMismatch { .. })));
}

#[test]
fn objective_examples() {
    assert_eq!(agent_objective(&[0.0, 0.0], &prices(&[3.0, 4.0]), &[1.0, 1.0]).unwrap(), 0.0);
    assert_eq!(agent_objective(&[1.0], &prices(&[2.0]), &[4.0]).unwrap(), 4.0);
    assert_eq!(agent_objective(&[0.0, -1.0], &prices(&[1.0, 2.0]), &[1.0, 1.0]).unwrap(), -1.5);
    assert!(agent_objective(&[0.0], &prices(&[1.0, 2.0]), &[1.0, 1.0]).is_err());
}

#[test]
fn repeated_solves_are_bitwise_identical() {
    let p = AgentParams::GeneralBox { alpha: 1.3, p_low: -0.7, p_high: 0.4, e_low: -1.1, e_high: 0.9 };
    let pr = prices(&[2.0, -1.5, 0.3, 1.7]);
    let a = solve_agent_qp(&p, &pr, None).unwrap();
    let b = solve_agent_qp(&p, &pr, None).unwrap();
    assert_eq!(a, b);
}

#[test]
fn interior_response_scales_with_price() {
    let p = AgentParams::GeneralBox { alpha: 4.0, p_low: -10.0, p_high: 10.0, e_low: -10.0, e_high: 10.0 };
    let pr = [0.4, -0.8, 1.2];
    let a = solve_agent_qp(&p, &prices(&pr), None).unwrap();
    let scaled: Vec<f64> = pr.iter().map(|v| 2.5 * v).collect();
    let b = solve_agent_qp(&p, &prices(&scaled), None).unwrap();
    for t in 0..3 {
        assert_eq!(a.y[t], -pr[t] / 4.0);
        assert_eq!(b.y[t], -scaled[t] / 4.0);
    }
}

fn general_box() -> impl Strategy<Value = (AgentParams, Vec<f64>)> {
    (1usize..=6).prop_flat_map(|n| {
        (
            0.2f64..5.0,
            -3.0f64..0.0,
            0.0f64..3.0,
            -4.0f64..0.0,
            0.0f64..4.0,
            proptest::collection::vec(-6.0f64..6.0, n),
        )
            .prop_map(|(alpha, p_low, p_high, e_low, e_high, lambda)| {
                (AgentParams::GeneralBox { alpha, p_low, p_high, e_low, e_high }, lambda)
            })
    })
}

proptest! {
    #[test]
    fn complementarity_holds((params, lambda) in general_box()) {
        let pr = prices(&lambda);
        let sol = solve_agent_qp(&params, &pr, None).unwrap();
        let bounds = params.expand(lambda.len()).unwrap();
        let cum = cumsum(&sol.y);
        prop_assert!(sol.kkt_residual <= TOL_KKT);
        for f in Family::ALL {
            for t in 0..lambda.len() {
                let dual = sol.dual(f)[t];
                let slack = -bounds.signed_gap(f, t, &sol.y, &cum);
                prop_assert!(dual >= -EPS_DUAL);
                prop_assert!(dual.min(slack) <= 1e-6);
            }
        }
    }

    #[test]
    fn budget_direct_matches_expansion(alpha in 0.5f64..5.0, m in 0.05f64..4.0, lambda in proptest::collection::vec(-5.0f64..5.0, 1..8)) {
        let params = AgentParams::TotalBudget { alpha, m_budget: m };
        let pr = prices(&lambda);
        let direct = solve_agent_qp(&params, &pr, None).unwrap();
        let expanded = solve_with_bounds(&params.expand(lambda.len()).unwrap(), &pr, &vec![alpha; lambda.len()]).unwrap();
        for t in 0..lambda.len() {
            prop_assert!((direct.y[t] - expanded.y[t]).abs() <= 1e-6);
            prop_assert!((direct.nu_lo[t] - expanded.nu_lo[t]).abs() <= 1e-6);
            prop_assert!((direct.nu_hi[t] - expanded.nu_hi[t]).abs() <= 1e-6);
        }
    }
}
