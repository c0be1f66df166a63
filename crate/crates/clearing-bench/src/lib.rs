//! Instance suites shared by the solver benchmarks.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use clearing_core::fixtures::{lmsr_instance, random_rational_instance, random_wgs_instance, two_products_instance};
use clearing_core::BatchInstance;

/// Named instances of increasing size.
pub fn suite() -> Vec<(String, BatchInstance)> {
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let mut out = vec![("lmsr".to_string(), lmsr_instance()), ("two_products".to_string(), two_products_instance())];
    for (n, m) in [(3, 6), (6, 10)] {
        out.push((format!("wgs_{n}x{m}"), random_wgs_instance(&mut rng, n, m)));
    }
    out
}

/// Two-asset instances every solver accepts.
pub fn two_asset_suite() -> Vec<(String, BatchInstance)> {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut out = vec![("lmsr".to_string(), lmsr_instance())];
    out.push(("wgs_2x8".to_string(), random_wgs_instance(&mut rng, 2, 8)));
    out
}

pub fn rational_suite() -> Vec<(String, BatchInstance)> {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    [(2, 4), (4, 8)].iter().map(|&(n, m)| (format!("rational_{n}x{m}"), random_rational_instance(&mut rng, n, m))).collect()
}
