use memlab_core::attacks::bhk::{expected_leak, expected_undetected, run_bhk, BhkParams};
use memlab_core::attacks::hr::{run_hr, HrMode, HrParams};
use memlab_core::attacks::pe::{run_pe_trial, schedule_size};
use memlab_core::attacks::{eve_reconstruct, AbortAttacker, PeAttacker};
use memlab_core::protocol::{run_campaign, run_day, Adversary, Countermeasures, Lab, Party};
use memlab_core::seed::{derive_seed, rng_from_seed, stream};
use memlab_core::{CorrelationModel, EveLedger, ProtocolConfig};
use proptest::prelude::*;

/// Credits must follow from the ledger's observations alone: strip them,
/// round-trip through JSON and recompute.
fn replay_matches(ledger: &EveLedger) -> bool {
    let mut bare: EveLedger = serde_json::from_str(&serde_json::to_string(ledger).unwrap()).unwrap();
    bare.inferred_day1_key_bits.clear();
    bare.inferred_raw_bits.clear();
    bare.abort_day = None;
    let r = eve_reconstruct(&bare);
    r.key_bits == ledger.inferred_day1_key_bits && r.raw_bits == ledger.inferred_raw_bits && r.abort_day == ledger.abort_day
}

fn pe_ledger(config: &ProtocolConfig, seed: u64) -> EveLedger {
    let mut rng = rng_from_seed(derive_seed(seed, stream::PROTOCOL));
    let mut lab = Lab::new(config, CorrelationModel::ideal(), &mut rng);
    let mut eve = PeAttacker::new(config, 10, rng_from_seed(derive_seed(seed, stream::ADVERSARY)));
    for day in 1..=3 {
        eve.prepare_day(day, &mut lab);
        let report = run_day(config, day, &mut lab, &mut eve, &mut rng);
        eve.observe_day(&report);
    }
    eve.ledger().clone()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn pe_credits_replay_from_ledger(seed in any::<u64>(), cm4 in any::<bool>()) {
        let cfg = ProtocolConfig {
            countermeasures: Countermeasures { cm4_secret_pa: cm4, ..Default::default() },
            ..ProtocolConfig::default()
        };
        let ledger = pe_ledger(&cfg, seed);
        prop_assert!(replay_matches(&ledger));
        if cm4 {
            prop_assert!(ledger.inferred_day1_key_bits.is_empty());
        }
    }

    #[test]
    fn abort_credits_replay_from_ledger(seed in any::<u64>()) {
        let cfg = ProtocolConfig { days: 5, ..ProtocolConfig::default() };
        let mut rng = rng_from_seed(seed);
        let mut lab = Lab::new(&cfg, CorrelationModel::ideal(), &mut rng);
        let mut eve = AbortAttacker::new(Party::Bob, 2, cfg.days);
        let result = run_campaign(&cfg, &mut lab, &mut eve, &mut rng);
        prop_assert!(replay_matches(&result.ledger));
        prop_assert!(result.ledger.credited_bits() <= (cfg.days as f64).log2().ceil() as usize);
    }

    /// Devices are consumed, never created, so total key cannot exceed the stock.
    #[test]
    fn hr_never_exceeds_stock(seed in any::<u64>(), runs in 1usize..60, devices in 1u64..100_000) {
        let run = run_hr(&HrParams { devices, runs, mode: HrMode::Counting }, &mut rng_from_seed(seed));
        prop_assert!(run.surviving.windows(2).all(|w| w[1] <= w[0]));
        prop_assert!(run.cumulative() <= devices);
    }

    /// At desk scale (day-1 key of 1e5 bits or more) the total over any
    /// number of runs stays within 6.5 times the first run.
    #[test]
    fn hr_total_is_capped(seed in any::<u64>(), runs in 1usize..80, devices in 600_000u64..6_000_000) {
        let run = run_hr(&HrParams { devices, runs, mode: HrMode::Counting }, &mut rng_from_seed(seed));
        prop_assert!(run.cumulative() as f64 <= 6.5 * run.key_bits[0] as f64);
    }
}

/// Leaked bits follow Binomial(ceil(N / mu), mu): mean and variance over seeds.
#[test]
fn pe_leak_is_binomial() {
    let cfg = ProtocolConfig::default();
    let n_target = 25;
    let trials: Vec<f64> = (0..120u64)
        .map(|s| run_pe_trial(&cfg, CorrelationModel::ideal(), n_target, 5, 1000 + s))
        .filter(|t| t.mounted && !t.attack_day_aborted)
        .map(|t| t.leaked_key_bits as f64)
        .collect();
    let n = trials.len() as f64;
    let size = schedule_size(n_target, cfg.mu) as f64;
    let (mean, var) = (size * cfg.mu, size * cfg.mu * (1.0 - cfg.mu));
    let m = trials.iter().sum::<f64>() / n;
    let v = trials.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
    assert!((m - mean).abs() < 4.0 * (var / n).sqrt(), "mean {m} vs {mean}");
    // Sample variance of n draws has relative sd about sqrt(2 / n).
    assert!((v / var - 1.0).abs() < 4.0 * (2.0 / n).sqrt(), "variance {v} vs {var}");
}

/// BHK rates within 4 sigma of their closed forms at 10^4 trials.
#[test]
fn bhk_rates_converge() {
    for (m, n) in [(2, 10), (1, 6)] {
        let p = BhkParams { m, n, cheat: true, publish_close_only: false, visibility: 1.0 };
        let (stats, _) = run_bhk(&p, 10_000, 7);
        for (got, want) in [(stats.leak_rate, expected_leak(m, n)), (stats.undetected_rate, expected_undetected(n))] {
            let sigma = (want * (1.0 - want) / 10_000.0).sqrt().max(1e-4);
            assert!((got - want).abs() <= 4.0 * sigma, "M={m} N={n}: {got} vs {want}");
        }
    }
}
