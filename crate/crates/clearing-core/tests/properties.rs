use clearing_core::cfmm::{demand_response, TradingFunction};
use clearing_core::density::density_from_function;
use clearing_core::fixtures::*;
use clearing_core::io::{instance_to_json, parse_instance, parse_solution, solution_to_json};
use clearing_core::market_core::net_flows;
use clearing_core::sequencer::{run_sequence, SequenceBatch, SequenceEntry};
use clearing_core::solver_convex::{extract_rational_from_state, solve_convex_traced, SolveOptions, CONVEX_VERIFY_TOL};
use clearing_core::solver_tatonnement::TATONNEMENT_VERIFY_TOL;
use clearing_core::verifier::verify_solution;
use clearing_core::*;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn functions() -> impl Strategy<Value = TradingFunction> {
    prop_oneof![
        Just(TradingFunction::ConstantProduct),
        Just(TradingFunction::Lmsr),
        (0.2f64..0.8).prop_map(|w| TradingFunction::WeightedProduct { wa: w, wb: 1.0 - w }),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 48, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn convex_solutions_verify_and_conserve(seed in any::<u64>(), n in 2usize..=4, extra in 0usize..=5) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let inst = random_wgs_instance(&mut rng, n, n - 1 + extra);
        let sol = solve(&inst, SolverKind::Convex, None).unwrap();
        let report = verify_solution(&inst, &sol, CONVEX_VERIFY_TOL).unwrap();
        prop_assert!(report.passed(), "failed checks {:?}", report.failed());
        let scale = inst.scale();
        for (f, s) in net_flows(&inst, &sol).unwrap().iter().zip(&scale) {
            prop_assert!(f.abs() <= 1e-7 * s);
        }
        let min = sol.prices.values().iter().cloned().fold(f64::INFINITY, f64::min);
        prop_assert!((min - 1.0).abs() < 1e-12);
    }

    #[test]
    fn two_asset_solvers_agree(seed in any::<u64>(), extra in 0usize..=5) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let inst = random_wgs_instance(&mut rng, 2, 1 + extra);
        let convex = solve(&inst, SolverKind::Convex, None).unwrap();
        let reference = solve(&inst, SolverKind::Reference, None).unwrap();
        let (a, b) = (AssetId(0), AssetId(1));
        let (rc, rr) = (convex.rate(a, b), reference.rate(a, b));
        prop_assert!((rc / rr - 1.0).abs() < 1e-5, "convex {} reference {}", rc, rr);
    }

    #[test]
    fn tatonnement_matches_convex(seed in any::<u64>(), n in 2usize..=4, extra in 0usize..=4) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let inst = random_wgs_instance(&mut rng, n, n - 1 + extra);
        let convex = solve(&inst, SolverKind::Convex, None).unwrap();
        let tat = solve(&inst, SolverKind::Tatonnement, None).unwrap();
        let report = verify_solution(&inst, &tat, TATONNEMENT_VERIFY_TOL).unwrap();
        prop_assert!(report.passed(), "failed checks {:?}", report.failed());
        for (a, b) in tat.prices.values().iter().zip(convex.prices.values()) {
            prop_assert!((a / b - 1.0).abs() < 1e-3, "tatonnement {:?} convex {:?}", tat.prices, convex.prices);
        }
    }

    #[test]
    fn rational_extraction_clears(seed in any::<u64>(), n in 2usize..=3, extra in 0usize..=4) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let inst = random_rational_instance(&mut rng, n, n + extra);
        let run = solve_convex_traced(&inst, &SolveOptions::default()).unwrap();
        let exact = extract_rational_from_state(&inst, &run.state).unwrap();
        prop_assert!(exact.clears_exactly());
        for (q, p) in exact.prices_f64().iter().zip(run.solution.prices.values()) {
            prop_assert!((q / p - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn demand_response_stays_on_budget_and_raises_value(f in functions(), ra in 1.0f64..100.0, rb in 1.0f64..100.0, pb in 0.1f64..10.0) {
        let reserves = [ra, rb];
        let prices = [1.0, pb];
        let resp = demand_response(&f, &reserves, &prices).unwrap();
        let spent = resp.delta[0] * prices[0] + resp.delta[1] * prices[1];
        prop_assert!(spent.abs() <= 1e-9 * (ra + rb * pb));
        prop_assert!(resp.new_reserves.iter().all(|r| *r > 0.0));
        let before = f.value(&reserves).unwrap();
        let after = f.value(&resp.new_reserves).unwrap();
        prop_assert!(after >= before - 1e-9 * before.abs().max(1.0));
    }

    #[test]
    fn product_density_is_monotone_and_inverts(ra in 1.0f64..100.0, rb in 1.0f64..100.0, r1 in 0.01f64..100.0, r2 in 0.01f64..100.0) {
        let pair = density_from_function(&TradingFunction::ConstantProduct, &[ra, rb]).unwrap();
        let h = &pair.forward;
        let (lo, hi) = if r1 <= r2 { (r1, r2) } else { (r2, r1) };
        prop_assert!(h.cumulative(lo) <= h.cumulative(hi) + 1e-12);
        let x = h.cumulative(hi);
        if x > 1e-9 && x < h.total() * (1.0 - 1e-9) {
            let back = h.inverse(x).unwrap();
            prop_assert!((back / hi - 1.0).abs() < 1e-8);
        }
    }

    #[test]
    fn instance_json_round_trips(seed in any::<u64>(), n in 2usize..=4) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let inst = random_wgs_instance(&mut rng, n, n + 2);
        let text = instance_to_json(&inst).unwrap().to_string();
        let back = parse_instance(&text).unwrap();
        prop_assert_eq!(instance_to_json(&back).unwrap(), instance_to_json(&inst).unwrap());
    }
}

#[test]
fn solution_json_round_trip_keeps_verdict() {
    for inst in [lmsr_instance(), two_products_instance(), crossing_offers_instance(), buy_sell_instance()] {
        let sol = solve(&inst, SolverKind::Auto, None).unwrap();
        let text = solution_to_json(&inst, &sol, None).to_string();
        let back = parse_solution(&inst, &text).unwrap();
        assert_eq!(back.prices, sol.prices);
        assert_eq!(back.trades, sol.trades);
        let a = verify_solution(&inst, &sol, 1e-7).unwrap();
        let b = verify_solution(&inst, &back, 1e-7).unwrap();
        assert_eq!(a.passed(), b.passed());
        assert_eq!(a.failed(), b.failed());
    }
}

fn fee_batches() -> Vec<SequenceBatch> {
    let first = SequenceBatch::new(
        symbols(2),
        vec![
            SequenceEntry::Participant(cfmm("m1", &[0, 1], &[50.0, 100.0], TradingFunction::ConstantProduct, 0.01)),
            SequenceEntry::Participant(sell(0, 1, 10.0, 1.0)),
        ],
    );
    let second = SequenceBatch::new(symbols(2), vec![SequenceEntry::CfmmRef("m1".into()), SequenceEntry::Participant(sell(1, 0, 30.0, 0.3))]);
    vec![first, second]
}

#[test]
fn fee_carry_moves_exactly_the_fee() {
    let batches = fee_batches();
    let carried = run_sequence(&batches[..1], true).unwrap();
    let withheld = run_sequence(&batches[..1], false).unwrap();
    let trade = &withheld.batches[0].solution.trades[0];
    let fee = 0.01 * trade.iter().cloned().fold(0.0, f64::max);
    assert!(fee > 0.0);
    let diff: f64 = carried.cfmms[0].reserves.iter().zip(&withheld.cfmms[0].reserves).map(|(a, b)| a - b).sum();
    assert!((diff - fee).abs() < 1e-12, "difference {diff} fee {fee}");
    let sink: f64 = withheld.fee_sink.iter().sum();
    assert!((sink - fee).abs() < 1e-12);
    assert!(carried.fee_sink.iter().all(|v| *v == 0.0));
}

#[test]
fn sequences_conserve_holdings() {
    for carry in [true, false] {
        let out = run_sequence(&fee_batches(), carry).unwrap();
        assert!(out.all_verified());
        for r in out.conservation_residual() {
            assert!(r.abs() < 1e-9, "residual {r}");
        }
    }
}
