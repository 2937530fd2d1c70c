use memlab_core::attacks::PassiveEve;
use memlab_core::protocol::{run_campaign, run_day, run_day_cm3, Countermeasures, Lab, PaRecord};
use memlab_core::seed::rng_from_seed;
use memlab_core::{CorrelationModel, ProtocolConfig, SessionOutcome};
use proptest::prelude::*;

fn config(rounds: usize, mu: f64) -> ProtocolConfig {
    ProtocolConfig {
        rounds,
        mu,
        ..ProtocolConfig::default()
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    /// Whenever both parties finish, they hold the same key, of the length
    /// announced for amplification.
    #[test]
    fn keys_agree_and_match_announced_length(seed in any::<u64>(), v in 0.9f64..=1.0) {
        let cfg = config(6000, 0.1);
        let mut rng = rng_from_seed(seed);
        let mut lab = Lab::new(&cfg, CorrelationModel::new(v).unwrap(), &mut rng);
        let report = run_day(&cfg, 1, &mut lab, &mut PassiveEve::default(), &mut rng);
        match &report.outcome {
            SessionOutcome::Key { alice, bob, transcript } => {
                prop_assert_eq!(&alice.final_key, &bob.final_key);
                prop_assert_eq!(&alice.corrected, &bob.corrected);
                let announced = transcript.pa.as_ref().map(PaRecord::output_len);
                prop_assert_eq!(announced, Some(alice.final_key.len()));
                let b = &alice.budget;
                let used = alice.final_key.len() as u64 + b.security_margin + b.leakage_bits;
                prop_assert!(used as f64 <= b.hmin_eps + 1e-9);
                prop_assert!(transcript.abort.is_none());
            }
            SessionOutcome::Aborted { transcript } => {
                prop_assert!(transcript.abort.is_some());
                prop_assert!(transcript.pa.is_none());
            }
        }
    }

    /// An abort releases no key material, and the campaign carries on.
    #[test]
    fn aborted_days_release_nothing(seed in any::<u64>()) {
        let cfg = ProtocolConfig { days: 3, ..config(3000, 0.1) };
        let mut rng = rng_from_seed(seed);
        let mut lab = Lab::new(&cfg, CorrelationModel::new(0.7).unwrap(), &mut rng);
        let result = run_campaign(&cfg, &mut lab, &mut PassiveEve::default(), &mut rng);
        prop_assert_eq!(result.reports.len(), 3);
        for r in &result.reports {
            prop_assert!(r.outcome.is_abort());
            prop_assert!(r.outcome.alice_key().is_none() && r.outcome.bob_key().is_none());
        }
    }

    /// With several device pairs, exposing any single corrected string still
    /// leaves at least `t + margin` bits of min-entropy.
    #[test]
    fn multi_device_budget_survives_exposure(seed in any::<u64>(), m in 2usize..4) {
        let cfg = ProtocolConfig {
            m_devices: m,
            countermeasures: Countermeasures { cm3_multi_device: true, ..Default::default() },
            preshared_key_bits: 4000 * m,
            ..config(5000, 0.1)
        };
        let mut rng = rng_from_seed(seed);
        let mut lab = Lab::new(&cfg, CorrelationModel::ideal(), &mut rng);
        let report = run_day_cm3(&cfg, 1, &mut lab, &mut PassiveEve::default(), &mut rng);
        if let (Some(a), Some(b)) = (report.outcome.alice_key(), report.outcome.bob_key()) {
            prop_assert_eq!(&a.final_key, &b.final_key);
            let need = (a.final_key.len() as u64 + cfg.security_margin) as f64;
            for i in 0..m {
                prop_assert!(a.budget_after_exposure(i) >= need);
            }
        }
    }
}

#[test]
fn same_seed_same_campaign() {
    let cfg = ProtocolConfig { days: 2, ..config(4000, 0.1) };
    let go = || {
        let mut rng = rng_from_seed(99);
        let mut lab = Lab::new(&cfg, CorrelationModel::ideal(), &mut rng);
        run_campaign(&cfg, &mut lab, &mut PassiveEve::default(), &mut rng).reports
    };
    assert_eq!(go(), go());
}
