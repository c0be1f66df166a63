//! Named instances and random instance generators.

use rand::Rng;

use crate::cfmm::TradingFunction;
use crate::market_core::{AssetId, BatchInstance, CfmmDecl, LimitBuyOffer, LimitSellOffer, Participant};

pub fn sell(sell: usize, buy: usize, amount: f64, min_price: f64) -> Participant {
    Participant::LimitSell(LimitSellOffer { sell: AssetId(sell), buy: AssetId(buy), amount, min_price })
}

pub fn buy(sell: usize, buy: usize, endowment: f64, target: f64, max_price: f64) -> Participant {
    Participant::LimitBuy(LimitBuyOffer { sell: AssetId(sell), buy: AssetId(buy), endowment, target, max_price })
}

pub fn cfmm(id: &str, assets: &[usize], reserves: &[f64], function: TradingFunction, fee: f64) -> Participant {
    Participant::Cfmm(CfmmDecl {
        id: id.to_string(),
        assets: assets.iter().map(|&a| AssetId(a)).collect(),
        reserves: reserves.to_vec(),
        function,
        fee,
    })
}

pub fn symbols(n: usize) -> Vec<String> {
    (0..n).map(|i| ((b'A' + i as u8) as char).to_string()).collect()
}

/// An LMSR at `(1, 1)` and an offer selling 100 A for at least 1/2 B each.
pub fn lmsr_instance() -> BatchInstance {
    BatchInstance::new(symbols(2), vec![sell(0, 1, 100.0, 0.5), cfmm("m1", &[0, 1], &[1.0, 1.0], TradingFunction::Lmsr, 0.0)])
}

/// A constant product at `(1, 10)` between an offer selling 1 A at 1 B each and
/// an offer selling 3 B at 1/6 A each.
pub fn degenerate_instance() -> BatchInstance {
    BatchInstance::new(
        symbols(2),
        vec![
            cfmm("m1", &[0, 1], &[1.0, 10.0], TradingFunction::ConstantProduct, 0.0),
            sell(0, 1, 1.0, 1.0),
            sell(1, 0, 3.0, 1.0 / 6.0),
        ],
    )
}

pub fn lone_product_instance() -> BatchInstance {
    BatchInstance::new(symbols(2), vec![cfmm("m1", &[0, 1], &[1.0, 10.0], TradingFunction::ConstantProduct, 0.0)])
}

/// Two constant products with spot rates 4 and 9.
pub fn two_products_instance() -> BatchInstance {
    BatchInstance::new(
        symbols(2),
        vec![
            cfmm("m1", &[0, 1], &[10.0, 40.0], TradingFunction::ConstantProduct, 0.0),
            cfmm("m2", &[0, 1], &[5.0, 45.0], TradingFunction::ConstantProduct, 0.0),
        ],
    )
}

/// Offers selling 10 A at 1/2 B each and 30 B at 1/2 A each; clears at rate 2
/// with the second offer filled partway.
pub fn crossing_offers_instance() -> BatchInstance {
    BatchInstance::new(symbols(2), vec![sell(0, 1, 10.0, 0.5), sell(1, 0, 30.0, 0.5)])
}

/// A sell offer and a buy offer crossing strictly.
pub fn buy_sell_instance() -> BatchInstance {
    BatchInstance::new(symbols(2), vec![sell(0, 1, 100.0, 0.5), buy(1, 0, 100.0, 40.0, 1.5)])
}

fn log_uniform(rng: &mut impl Rng, lo: f64, hi: f64) -> f64 {
    (rng.gen_range(lo.ln()..hi.ln())).exp()
}

/// A two-asset function whose densities have closed forms.
fn random_smooth_function(rng: &mut impl Rng) -> TradingFunction {
    match rng.gen_range(0..3) {
        0 => TradingFunction::ConstantProduct,
        1 => TradingFunction::WeightedProduct { wa: rng.gen_range(0.5..3.0), wb: rng.gen_range(0.5..3.0) },
        _ => TradingFunction::Hspec { coeffs: vec![rng.gen_range(1.2..4.0)] },
    }
}

/// Random batch of two-asset CFMMs and sell offers over `n_assets` assets.
///
/// A spanning tree of strictly monotone CFMMs makes the equilibrium rates unique.
pub fn random_wgs_instance(rng: &mut impl Rng, n_assets: usize, n_participants: usize) -> BatchInstance {
    let n = n_assets.max(2);
    let total = n_participants.max(n - 1);
    let values: Vec<f64> = (0..n).map(|_| log_uniform(rng, 0.25, 4.0)).collect();
    let mut parts = Vec::new();
    for j in 1..n {
        let i = rng.gen_range(0..j);
        let ra = log_uniform(rng, 5.0, 100.0);
        let drift = log_uniform(rng, 0.5, 2.0);
        let rb = ra * values[i] / values[j] * drift;
        parts.push(cfmm(&format!("c{j}"), &[i, j], &[ra, rb], random_smooth_function(rng), 0.0));
    }
    while parts.len() < total {
        let a = rng.gen_range(0..n);
        let mut b = rng.gen_range(0..n - 1);
        if b >= a {
            b += 1;
        }
        let fair = values[a] / values[b];
        match rng.gen_range(0..4) {
            0 => {
                let ra = log_uniform(rng, 5.0, 50.0);
                let rate = fair * log_uniform(rng, 0.5, 2.0);
                parts.push(cfmm(&format!("s{}", parts.len()), &[a, b], &[ra, ra * fair], TradingFunction::ConstantSum { rate }, 0.0));
            }
            1 => {
                let ra = log_uniform(rng, 5.0, 100.0);
                let rb = ra * fair * log_uniform(rng, 0.5, 2.0);
                parts.push(cfmm(&format!("x{}", parts.len()), &[a, b], &[ra, rb], random_smooth_function(rng), 0.0));
            }
            _ => parts.push(sell(a, b, log_uniform(rng, 1.0, 30.0), fair * log_uniform(rng, 0.5, 2.0))),
        }
    }
    BatchInstance::new(symbols(n), parts)
}

/// Random batch of constant-product and constant-sum CFMMs and sell offers.
pub fn random_rational_instance(rng: &mut impl Rng, n_assets: usize, n_participants: usize) -> BatchInstance {
    let n = n_assets.max(2);
    let total = n_participants.max(n - 1);
    let values: Vec<f64> = (0..n).map(|_| rng.gen_range(1..=8) as f64).collect();
    let mut parts = Vec::new();
    for j in 1..n {
        let i = rng.gen_range(0..j);
        let ra = rng.gen_range(2..=40) as f64;
        let rb = (ra * values[i] / values[j] * rng.gen_range(1..=8) as f64 / 4.0).round().max(1.0);
        parts.push(cfmm(&format!("c{j}"), &[i, j], &[ra, rb], TradingFunction::ConstantProduct, 0.0));
    }
    while parts.len() < total {
        let a = rng.gen_range(0..n);
        let mut b = rng.gen_range(0..n - 1);
        if b >= a {
            b += 1;
        }
        let rate = (values[a] / values[b]) * rng.gen_range(1..=8) as f64 / 4.0;
        let size = rng.gen_range(1..=20) as f64;
        if rng.gen_bool(0.3) {
            parts.push(cfmm(&format!("s{}", parts.len()), &[a, b], &[size, size * rate], TradingFunction::ConstantSum { rate }, 0.0));
        } else {
            parts.push(sell(a, b, size, rate));
        }
    }
    BatchInstance::new(symbols(n), parts)
}
