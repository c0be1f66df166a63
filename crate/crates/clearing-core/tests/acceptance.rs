//! Acceptance checks, one PASS/FAIL line each. Exits nonzero when any check fails.

use std::time::{Duration, Instant};

use clearing_core::analysis::{ANGLE_TOL, DEFAULT_SAMPLES};
use clearing_core::fixtures::*;
use clearing_core::solver_convex::{extract_rational_from_state, solve_convex_traced, Program, ProgramState, CONVEX_VERIFY_TOL};
use clearing_core::solver_reference::REFERENCE_VERIFY_TOL;
use clearing_core::solver_tatonnement::TATONNEMENT_VERIFY_TOL;
use clearing_core::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Outcome {
    passed: bool,
    detail: String,
}

fn outcome(passed: bool, detail: impl Into<String>) -> Outcome {
    Outcome { passed, detail: detail.into() }
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(f64::MIN_POSITIVE)
}

fn rate_of(sol: &BatchSolution, a: usize, b: usize) -> f64 {
    sol.rate(AssetId(a), AssetId(b))
}

/// Maximizer of a concave function on `[lo, hi]` by bisection on the sign of its derivative `dphi`.
fn concave_argmax(dphi: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64) -> f64 {
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if dphi(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Amount of its first asset a product `a * b` CFMM sells at rate `p` (second per first).
fn product_sold_oracle(a0: f64, b0: f64, p: f64) -> f64 {
    let budget = p * a0 + b0;
    // Along the budget line b = budget - p a, d(ab)/da = b - p a.
    let a = concave_argmax(|a| (budget - p * a) - p * a, 0.0, budget / p);
    (a0 - a).max(0.0)
}

fn criterion_1() -> Outcome {
    let start = Instant::now();
    let inst = lmsr_instance();
    let fill = 2.0 / 3.0 * std::f64::consts::LN_2;
    let mut notes = Vec::new();
    let mut ok = true;
    let runs: [(&str, SolverKind, f64); 3] =
        [("reference", SolverKind::Reference, 1e-10), ("convex", SolverKind::Convex, 1e-5), ("tatonnement", SolverKind::Tatonnement, 1e-4)];
    for (name, kind, tol) in runs {
        match solve(&inst, kind, None) {
            Ok(sol) => {
                let rate = rate_of(&sol, 0, 1);
                let sold = -sol.trades[0][0];
                let good = (rate - 0.5).abs() <= tol && (sold - fill).abs() <= tol;
                ok &= good;
                notes.push(format!("{name} rate {rate:.12} fill {sold:.12}"));
            }
            Err(e) => {
                ok = false;
                notes.push(format!("{name} error {e}"));
            }
        }
    }
    let approx = solve(&inst, SolverKind::Convex, None).map(|s| s.prices.values().to_vec()).unwrap_or(vec![1.0, 2.0]);
    let not_rational = matches!(extract_rational(&inst, &approx), Err(ConvexError::NotRational(_)));
    ok &= not_rational;
    notes.push(format!("extract_rational NotRational {not_rational}"));
    let elapsed = start.elapsed();
    ok &= elapsed < Duration::from_secs(1);
    notes.push(format!("{elapsed:.2?}"));
    outcome(ok, notes.join("; "))
}

fn criterion_2() -> Outcome {
    let start = Instant::now();
    let inst = degenerate_instance();
    let mut notes = Vec::new();
    let legacy_ok = match legacy_exact_constant_check(&inst) {
        Ok(r) => {
            notes.push(format!(
                "legacy: zero trade feasible {}, nonzero strict-equality points {:?}",
                r.zero_trade_feasible(),
                r.nonzero_points
            ));
            r.only_zero_trade()
        }
        Err(e) => {
            notes.push(format!("legacy error {e}"));
            false
        }
    };
    // At rate 16/3 the product CFMM moves from (1, 10) to (23/16, 23/3) and the offers fill completely.
    let relaxed_ok = match solve_two_asset(&inst, &ReferenceOptions::default()) {
        Ok(sol) => {
            let rate = rate_of(&sol, 0, 1);
            let bought = sol.trades[0][0];
            let report = verify_solution(&inst, &sol, REFERENCE_VERIFY_TOL);
            let verified = report.as_ref().map(|r| r.passed()).unwrap_or(false);
            notes.push(format!("axiom rule: rate {rate:.12}, cfmm buys {bought:.12} A, verifier {verified}"));
            (rate - 16.0 / 3.0).abs() < 1e-9 && (bought - 7.0 / 16.0).abs() < 1e-9 && verified
        }
        Err(e) => {
            notes.push(format!("axiom rule error {e}"));
            false
        }
    };
    let elapsed = start.elapsed();
    notes.push(format!("{elapsed:.2?}"));
    outcome(legacy_ok && relaxed_ok && elapsed < Duration::from_secs(1), notes.join("; "))
}

fn criterion_3() -> Outcome {
    let pair = match density_from_function(&TradingFunction::ConstantProduct, &[1.0, 10.0]) {
        Ok(p) => p,
        Err(e) => return outcome(false, format!("density error {e}")),
    };
    let mut worst: f64 = 0.0;
    for k in 0..200 {
        let p = 10f64.powf(-1.5 + 4.5 * k as f64 / 199.0);
        worst = worst.max((pair.forward.cumulative(p) - product_sold_oracle(1.0, 10.0, p)).abs());
        worst = worst.max((pair.reverse.cumulative(p) - product_sold_oracle(10.0, 1.0, p)).abs());
    }
    let at_40 = pair.forward.cumulative(40.0);
    outcome(worst <= 1e-9 && at_40 == 0.375, format!("200 rates, both halves, worst gap {worst:.3e}; D(40) = {at_40}"))
}

/// The random suite shared by the convex-program and cross-solver checks.
fn wgs_suite() -> Vec<BatchInstance> {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_0004);
    (0..50)
        .map(|_| {
            let n = rng.gen_range(2..=6);
            let m = rng.gen_range(n - 1..=10);
            random_wgs_instance(&mut rng, n, m)
        })
        .collect()
}

/// Central differences against the analytic gradient on coordinates where both one-sided
/// differences agree, so kinks of the objective are skipped. Returns (worst excess, checked, total).
fn gradient_check(prog: &Program, s: &ProgramState) -> (f64, usize, usize) {
    let (gp, gy) = prog.gradient_unchecked(s);
    let mut worst: f64 = 0.0;
    let mut checked = 0;
    let mut total = 0;
    let n = s.p.len();
    for k in 0..n + s.y.len() {
        let (x, g) = if k < n { (s.p[k], gp[k]) } else { (s.y[k - n], gy[k - n]) };
        let h = 1e-6 * x.abs().max(1.0);
        if k >= n && (x - h < 0.0 || x + h > prog.cap(k - n, &s.p)) {
            continue;
        }
        total += 1;
        let at = |v: f64| {
            let mut t = s.clone();
            if k < n {
                t.p[k] = v;
            } else {
                t.y[k - n] = v;
            }
            prog.objective_value(&t)
        };
        let (up, mid, down) = (at(x + h), at(x), at(x - h));
        let fwd = (up - mid) / h;
        let bwd = (mid - down) / h;
        if (fwd - bwd).abs() > 1e-3 * fwd.abs().max(bwd.abs()).max(1.0) {
            continue;
        }
        checked += 1;
        let central = (up - down) / (2.0 * h);
        let allowed = (1e-4 * g.abs()).max(1e-6);
        worst = worst.max((central - g).abs() / allowed);
    }
    (worst, checked, total)
}

/// Largest distance of a volume from its half's response interval, with rates read to within
/// 1e-9 relative so a rate rounded across a jump still sees the whole jump.
fn volume_gap(prog: &Program, s: &ProgramState) -> f64 {
    let mut worst: f64 = 0.0;
    for (i, h) in prog.halves.iter().enumerate() {
        let rho = prog.rate(i, &s.p);
        let pa = s.p[h.sell];
        let lo = pa * h.density.cumulative(rho * (1.0 - 1e-9));
        let hi = pa * h.density.cumulative_right(rho * (1.0 + 1e-9));
        worst = worst.max(lo - s.y[i]).max(s.y[i] - hi);
    }
    worst
}

fn criterion_4() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_1004);
    let mut min_objective = f64::INFINITY;
    let mut worst_terminal: f64 = 0.0;
    let mut worst_gap: f64 = 0.0;
    let mut worst_grad: f64 = 0.0;
    let (mut checked, mut total) = (0, 0);
    let mut errors = Vec::new();
    for (idx, inst) in wgs_suite().iter().enumerate() {
        let prog = match Program::from_instance(inst) {
            Ok(p) => p,
            Err(e) => {
                errors.push(format!("instance {idx}: {e}"));
                continue;
            }
        };
        for draw in 0..1000 {
            let s = prog.random_feasible_state(&mut rng);
            match prog.objective(&s) {
                Ok(v) => min_objective = min_objective.min(v),
                Err(e) => errors.push(format!("instance {idx}: {e}")),
            }
            if draw % 100 == 0 {
                let (w, c, t) = gradient_check(&prog, &s);
                worst_grad = worst_grad.max(w);
                checked += c;
                total += t;
            }
        }
        match solve_convex_traced(inst, &SolveOptions::default()) {
            Ok(run) => {
                worst_terminal = worst_terminal.max(prog.objective_value(&run.state));
                let scale = inst.scale().iter().zip(&run.state.p).map(|(s, p)| s * p).fold(0.0, f64::max);
                worst_gap = worst_gap.max(volume_gap(&prog, &run.state) / scale);
            }
            Err(e) => errors.push(format!("instance {idx}: {e}")),
        }
    }
    let elapsed = start.elapsed();
    let ok = errors.is_empty()
        && min_objective >= -1e-9
        && worst_terminal <= 1e-7
        && worst_gap <= 1e-5
        && worst_grad <= 1.0
        && checked * 2 >= total
        && elapsed < Duration::from_secs(60);
    outcome(
        ok,
        format!(
            "min objective {min_objective:.3e}, terminal objective {worst_terminal:.3e}, volume gap / scale {worst_gap:.3e}, \
             gradient error / allowance {worst_grad:.3e} on {checked}/{total} smooth coordinates, {elapsed:.2?}{}",
            if errors.is_empty() { String::new() } else { format!(", errors: {}", errors.join(" | ")) }
        ),
    )
}

fn criterion_5() -> Outcome {
    let mut worst_convex: f64 = 0.0;
    let mut worst_tat: f64 = 0.0;
    let mut count = 0;
    let mut errors = Vec::new();
    for (idx, inst) in wgs_suite().iter().enumerate().filter(|(_, i)| i.n_assets() == 2) {
        count += 1;
        let reference = match solve(inst, SolverKind::Reference, None) {
            Ok(s) => rate_of(&s, 0, 1),
            Err(e) => {
                errors.push(format!("instance {idx} reference: {e}"));
                continue;
            }
        };
        match solve(inst, SolverKind::Convex, None) {
            Ok(s) => worst_convex = worst_convex.max(rel(rate_of(&s, 0, 1), reference)),
            Err(e) => errors.push(format!("instance {idx} convex: {e}")),
        }
        match solve(inst, SolverKind::Tatonnement, None) {
            Ok(s) => worst_tat = worst_tat.max(rel(rate_of(&s, 0, 1), reference)),
            Err(e) => errors.push(format!("instance {idx} tatonnement: {e}")),
        }
    }
    let ok = errors.is_empty() && count > 0 && worst_convex <= 1e-5 && worst_tat <= 1e-4;
    outcome(
        ok,
        format!(
            "{count} two-asset instances, convex {worst_convex:.3e}, tatonnement {worst_tat:.3e}{}",
            if errors.is_empty() { String::new() } else { format!(", errors: {}", errors.join(" | ")) }
        ),
    )
}

fn criterion_6() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_0006);
    let mut exact = 0;
    let mut worst: f64 = 0.0;
    let mut errors = Vec::new();
    for idx in 0..20 {
        let n = rng.gen_range(2..=4);
        let m = rng.gen_range(n..=8);
        let inst = random_rational_instance(&mut rng, n, m);
        let run = match solve_convex_traced(&inst, &SolveOptions::default()) {
            Ok(r) => r,
            Err(e) => {
                errors.push(format!("instance {idx} solve: {e}"));
                continue;
            }
        };
        let sol = &run.solution;
        match extract_rational_from_state(&inst, &run.state) {
            Ok(r) => {
                if r.clears_exactly() {
                    exact += 1;
                }
                for (q, p) in r.prices_f64().iter().zip(sol.prices.values()) {
                    worst = worst.max(rel(*q, *p));
                }
                let scale = inst.scale();
                for (tq, tp) in r.trades_f64().iter().zip(&sol.trades) {
                    for j in 0..n {
                        worst = worst.max((tq[j] - tp[j]).abs() / scale[j]);
                    }
                }
            }
            Err(e) => errors.push(format!("instance {idx} extract: {e}")),
        }
    }
    let ok = errors.is_empty() && exact == 20 && worst <= 1e-6;
    outcome(
        ok,
        format!(
            "{exact}/20 clear exactly, largest gap to binary64 {worst:.3e}{}",
            if errors.is_empty() { String::new() } else { format!(", errors: {}", errors.join(" | ")) }
        ),
    )
}

fn fee_instance(function: TradingFunction, fee: f64) -> BatchInstance {
    BatchInstance::new(symbols(2), vec![sell(0, 1, 6.0, 1.0), cfmm("m1", &[0, 1], &[10.0, 40.0], function, fee), sell(1, 0, 5.0, 0.2)])
}

fn criterion_7() -> Outcome {
    let mut notes = Vec::new();
    let mut ok = true;
    for eps in [0.0, 0.003, 0.05] {
        let inst = fee_instance(TradingFunction::ConstantProduct, eps);
        for kind in [SolverKind::Reference, SolverKind::Convex] {
            match solve(&inst, kind, None) {
                Ok(sol) => {
                    let Participant::Cfmm(c) = &inst.participants[1] else { unreachable!() };
                    let after: Vec<f64> = c.reserves.iter().zip(&sol.trades[1]).map(|(r, d)| r + d).collect();
                    let f = c.effective_function().expect("fee wraps a product");
                    let v = spot_valuations(&f, &after).expect("interior reserves");
                    let dev = rel((v[0] / v[1]) / rate_of(&sol, 0, 1), 1.0);
                    ok &= dev <= 1e-6;
                    notes.push(format!("eps {eps} {kind}: cfmm buys {:.9} A, spot deviation {dev:.2e}", sol.trades[1][0]));
                }
                Err(e) => {
                    ok = false;
                    notes.push(format!("eps {eps} {kind}: {e}"));
                }
            }
        }
    }
    let plain = fee_instance(TradingFunction::ConstantProduct, 0.0);
    let wrapped = fee_instance(apply_fee_wrapper(&TradingFunction::ConstantProduct, &[10.0, 40.0], 0.0).expect("valid fee"), 0.0);
    let mut identical = true;
    for kind in [SolverKind::Reference, SolverKind::Convex] {
        match (solve(&plain, kind, None), solve(&wrapped, kind, None)) {
            (Ok(a), Ok(b)) => {
                let same = a.prices.values().iter().zip(b.prices.values()).all(|(x, y)| x.to_bits() == y.to_bits())
                    && a.trades.iter().flatten().zip(b.trades.iter().flatten()).all(|(x, y)| x.to_bits() == y.to_bits());
                identical &= same;
            }
            _ => identical = false,
        }
    }
    for k in 0..200 {
        let prices = [10f64.powf(-1.0 + 3.0 * k as f64 / 199.0), 1.0];
        let a = demand_response(&TradingFunction::ConstantProduct, &[10.0, 40.0], &prices);
        let b = demand_response(&apply_fee_wrapper(&TradingFunction::ConstantProduct, &[10.0, 40.0], 0.0).unwrap(), &[10.0, 40.0], &prices);
        identical &= match (a, b) {
            (Ok(a), Ok(b)) => a.delta.iter().zip(&b.delta).all(|(x, y)| x.to_bits() == y.to_bits()),
            _ => false,
        };
    }
    ok &= identical;
    notes.push(format!("zero fee bit-identical {identical}"));
    outcome(ok, notes.join("; "))
}

fn criterion_8() -> Outcome {
    let custom = |e: &str, n| TradingFunction::Custom(CustomFunction::from_expr(e, n).expect("valid expression"));
    let hspec_samples: Vec<Vec<f64>> = vec![vec![2.0], vec![3.5], vec![1.0, 1.0], vec![1.5, 0.7, 0.2], vec![2.0, 0.0, 0.5], vec![1.2, 0.3, 0.0, 0.1]];
    let mut wgs_cases: Vec<(String, TradingFunction, Vec<f64>)> = vec![
        ("constant product".into(), TradingFunction::ConstantProduct, vec![1.0, 10.0]),
        ("weighted product".into(), TradingFunction::WeightedProduct { wa: 1.0, wb: 3.0 }, vec![2.0, 5.0]),
        ("constant sum".into(), TradingFunction::ConstantSum { rate: 2.0 }, vec![3.0, 4.0]),
        ("lmsr".into(), TradingFunction::Lmsr, vec![1.0, 1.0]),
        ("monomial 2".into(), TradingFunction::Monomial { exponents: vec![1.0, 2.0] }, vec![1.0, 1.0]),
        ("monomial 3".into(), TradingFunction::Monomial { exponents: vec![1.0, 0.5, 2.0] }, vec![1.0, 2.0, 3.0]),
    ];
    for c in &hspec_samples {
        wgs_cases.push((format!("hspec {c:?}"), TradingFunction::Hspec { coeffs: c.clone() }, vec![1.0, 2.0]));
    }
    let mut ok = true;
    let mut notes = Vec::new();
    let mut verdict = |name: &str, probe: Result<ProbeOutcome, AnalysisError>, expect_pass: bool| match probe {
        Ok(o) => {
            let good = o.passed() == expect_pass && (expect_pass || o.witness.is_some());
            ok &= good;
            let tag = if o.passed() { "passes" } else { "fails" };
            let point = o.witness.as_ref().map(|w| format!(" at {:?}", w.point)).unwrap_or_default();
            notes.push(format!("{name} {tag} (worst {:.2e}{point}){}", o.worst, if good { "" } else { " UNEXPECTED" }));
        }
        Err(e) => {
            ok = false;
            notes.push(format!("{name} error {e}"));
        }
    };
    for (name, f, r) in &wgs_cases {
        verdict(&format!("wgs {name}"), wgs_probe(f, r, DEFAULT_SAMPLES), true);
    }
    verdict("wgs x^2+yz", wgs_probe(&custom("x*x + y*z", 3), &[1.0, 1.0, 1.0], DEFAULT_SAMPLES), false);
    let budget_cases: Vec<(String, TradingFunction)> = vec![
        ("monomial 2".into(), TradingFunction::Monomial { exponents: vec![1.0, 2.0] }),
        ("monomial 3".into(), TradingFunction::Monomial { exponents: vec![1.0, 0.5, 2.0] }),
        ("hspec [1.5, 0.7, 0.2]".into(), TradingFunction::Hspec { coeffs: vec![1.5, 0.7, 0.2] }),
        ("hspec [2.0]".into(), TradingFunction::Hspec { coeffs: vec![2.0] }),
        ("x^2+yz".into(), custom("x*x + y*z", 3)),
    ];
    for (name, f) in &budget_cases {
        verdict(&format!("budget {name}"), budget_invariance_probe(f, DEFAULT_SAMPLES), true);
    }
    verdict("budget x+y+xy", budget_invariance_probe(&custom("x + y + x*y", 2), DEFAULT_SAMPLES), false);
    outcome(ok, format!("angle tolerance {ANGLE_TOL:e}; {}", notes.join("; ")))
}

fn criterion_9() -> Outcome {
    let family = match family_identity_check(10_000) {
        Ok(r) => r,
        Err(e) => return outcome(false, format!("family error {e}")),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_0009);
    let functions = [
        (TradingFunction::ConstantProduct, vec![1.0, 10.0]),
        (TradingFunction::WeightedProduct { wa: 2.0, wb: 1.0 }, vec![4.0, 3.0]),
        (TradingFunction::Lmsr, vec![1.0, 1.0]),
        (TradingFunction::Hspec { coeffs: vec![3.0] }, vec![2.0, 5.0]),
    ];
    let mut same = 0;
    let mut total = 0;
    for (f, r) in &functions {
        for _ in 0..50 {
            let prices = [rng.gen_range(-2.0f64..2.0).exp(), 1.0];
            total += 1;
            if let (Ok(a), Ok(b)) = (rule_demand(f, r, &prices, 1.0), demand_response(f, r, &prices)) {
                if a.iter().zip(&b.delta).all(|(x, y)| x.to_bits() == y.to_bits()) {
                    same += 1;
                }
            }
        }
    }
    outcome(
        family.passed() && same == total,
        format!(
            "equivariance {:.2e}, composition {:.2e} over {} triples; alpha = 1 identical on {same}/{total}",
            family.equivariance, family.composition, family.samples
        ),
    )
}

fn criterion_10() -> Outcome {
    let mut notes = Vec::new();
    let mut ok = true;
    let instances = [
        ("lmsr", lmsr_instance()),
        ("degenerate", degenerate_instance()),
        ("lone product", lone_product_instance()),
        ("two products", two_products_instance()),
        ("crossing offers", crossing_offers_instance()),
        ("buy and sell", buy_sell_instance()),
    ];
    let mut emitted = 0;
    for (name, inst) in &instances {
        for (kind, tol) in [
            (SolverKind::Reference, REFERENCE_VERIFY_TOL),
            (SolverKind::Convex, CONVEX_VERIFY_TOL),
            (SolverKind::Tatonnement, TATONNEMENT_VERIFY_TOL),
        ] {
            let Ok(sol) = solve(inst, kind, None) else { continue };
            emitted += 1;
            let passed = verify_solution(inst, &sol, tol).map(|r| r.passed()).unwrap_or(false);
            if !passed {
                ok = false;
                notes.push(format!("{name} {kind} fails verification"));
            }
        }
    }
    notes.push(format!("{emitted} emitted solutions checked"));

    let mut violation = |label: &str, inst: &BatchInstance, good: &BatchSolution, bad: &BatchSolution, expected: &str| {
        let before = verify_solution(inst, good, REFERENCE_VERIFY_TOL).expect("well-formed");
        let after = verify_solution(inst, bad, REFERENCE_VERIFY_TOL).expect("well-formed");
        let failed = after.failed();
        let regressed: Vec<&str> = before
            .checks
            .iter()
            .filter(|c| c.passed && c.name != expected && !after.check(&c.name).map(|a| a.passed).unwrap_or(false))
            .map(|c| c.name.as_str())
            .collect();
        let good_case = failed == vec![expected] && regressed.is_empty();
        ok &= good_case;
        notes.push(format!("{label}: failed {failed:?}"));
    };

    let lmsr = lmsr_instance();
    let base = solve(&lmsr, SolverKind::Reference, None).expect("lmsr solves");
    let mut scaled = base.clone();
    for v in &mut scaled.trades[0] {
        *v *= 1.5;
    }
    violation("scaled offer trade", &lmsr, &base, &scaled, verifier::CONSERVATION);

    let crossing = crossing_offers_instance();
    let fair = BatchSolution {
        prices: PriceVector::new(vec![2.0, 1.0]).unwrap(),
        trades: vec![vec![-10.0, 20.0], vec![10.0, -20.0]],
        objective_value: None,
        iterations: 0,
        solver: "constructed".into(),
        verifier_report: Vec::new(),
    };
    let mut short = fair.clone();
    short.trades[0][1] -= 1.0;
    short.trades[1][1] += 1.0;
    violation("both B legs short by one", &crossing, &fair, &short, verifier::UNIFORM_RATES);

    let mut strict = lmsr.clone();
    if let Participant::LimitSell(o) = &mut strict.participants[0] {
        o.min_price = 0.6;
    }
    let before = verify_solution(&lmsr, &base, REFERENCE_VERIFY_TOL).expect("well-formed");
    let after = verify_solution(&strict, &base, REFERENCE_VERIFY_TOL).expect("well-formed");
    let failed = after.failed();
    let regressed = before.checks.iter().any(|c| c.passed && c.name != verifier::OFFER_LIMITS && !after.check(&c.name).unwrap().passed);
    ok &= failed == vec![verifier::OFFER_LIMITS] && !regressed;
    notes.push(format!("limit raised to 0.6: failed {failed:?}"));
    outcome(ok, notes.join("; "))
}

type Criterion = (&'static str, fn() -> Outcome);

fn main() {
    let criteria: [Criterion; 10] = [
        ("irrational LMSR equilibrium", criterion_1),
        ("strict-equality CFMM regression", criterion_2),
        ("product density against demand oracle", criterion_3),
        ("convex program properties", criterion_4),
        ("cross-solver agreement", criterion_5),
        ("exact rational extraction", criterion_6),
        ("fee wrapper alignment", criterion_7),
        ("substitutes and budget probes", criterion_8),
        ("trading-rule family", criterion_9),
        ("verifier soundness", criterion_10),
    ];
    let only: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut failures = 0;
    let mut ran = 0;
    for (k, (name, run)) in criteria.iter().enumerate() {
        if !only.is_empty() && !only.contains(&(k + 1)) {
            continue;
        }
        ran += 1;
        let out = run();
        if !out.passed {
            failures += 1;
        }
        println!("criterion {:>2} {} {name}: {}", k + 1, if out.passed { "PASS" } else { "FAIL" }, out.detail);
    }
    println!("{} of {ran} criteria pass", ran - failures);
    if failures > 0 {
        std::process::exit(1);
    }
}
