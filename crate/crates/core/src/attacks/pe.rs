//! The parameter-estimation attack: on a later day, a device answers some
//! test rounds with stored bits instead of measuring, and Eve reads them off
//! the public test announcements.

use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::devices::{CovertPayload, DevicePolicy, Input, LeakEntry, LeakSchedule, LeakTarget, Slot};
use crate::protocol::{
    run_day, Adversary, DayReport, Lab, Party, ProtocolConfig, SessionOutcome,
};
use crate::qsim::CorrelationModel;
use crate::seed::{derive_seed, rng_from_seed, stream, SimRng};

use super::{audit_credits, AttackError, EveLedger, EveProgram};

/// Slots needed to expect `n_target` revealed leaks: `ceil(N / mu)`.
pub fn schedule_size(n_target: usize, mu: f64) -> usize {
    (n_target as f64 / mu - 1e-9).ceil() as usize
}

/// Pair `ceil(N / mu)` random slots with distinct random targets.
///
/// Slots are drawn over `inputs` input values and occurrences that every
/// day reaches with overwhelming probability.
#[allow(clippy::too_many_arguments)]
pub fn plan_pe_attack<R: Rng + ?Sized>(
    n_target: usize,
    mu: f64,
    rounds: usize,
    noise_tolerance: f64,
    inputs: Input,
    candidates: &[LeakTarget],
    attack_day: u32,
    rng: &mut R,
) -> Result<LeakSchedule, AttackError> {
    let size = schedule_size(n_target, mu);
    if size >= rounds {
        return Err(AttackError::BudgetExceeded {
            needed: size,
            rounds,
        });
    }
    let fraction = size as f64 / rounds as f64;
    if fraction > noise_tolerance + 1e-12 {
        return Err(AttackError::NoiseBudgetExceeded {
            needed: size,
            fraction,
            tolerance: noise_tolerance,
        });
    }
    if size > candidates.len() {
        return Err(AttackError::InsufficientTargets {
            needed: size,
            available: candidates.len(),
        });
    }
    // Stay four standard deviations inside the expected per-input count.
    let per_input = rounds as f64 / inputs as f64;
    let reach = (per_input - 4.0 * per_input.sqrt()).floor().max(1.0) as usize;
    let slot_space = reach * inputs as usize;
    if size > slot_space {
        return Err(AttackError::BudgetExceeded {
            needed: size,
            rounds,
        });
    }
    let slots = sample(rng, slot_space, size);
    let targets = sample(rng, candidates.len(), size);
    let entries = slots
        .iter()
        .zip(targets.iter())
        .map(|(s, t)| LeakEntry {
            slot: Slot {
                input: (s / reach) as Input,
                occurrence: (s % reach) as u32 + 1,
            },
            target: candidates[t],
        })
        .collect();
    Ok(LeakSchedule::new(attack_day, entries))
}

/// What the leaking device sends.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PeMode {
    /// Alice's device leaks final-key bits (needs the public hash).
    FinalKey,
    /// Alice's device leaks sifted raw bits (hash withheld).
    SiftedRaw,
    /// Bob announces, and his isolated device runs pre-installed firmware
    /// leaking its raw outputs from key-basis rounds.
    BobRaw,
}

impl PeMode {
    pub fn for_config(config: &ProtocolConfig) -> Self {
        if config.countermeasures.cm1_bob_announces {
            PeMode::BobRaw
        } else if config.countermeasures.cm4_secret_pa {
            PeMode::SiftedRaw
        } else {
            PeMode::FinalKey
        }
    }
}

#[derive(Debug, Clone)]
pub struct PeAttacker {
    n_target: usize,
    mu: f64,
    rounds: usize,
    noise_tolerance: f64,
    mode: PeMode,
    rng: SimRng,
    pending: Option<CovertPayload>,
    attack_day: Option<u32>,
    plan_error: Option<AttackError>,
    ledger: EveLedger,
}

impl PeAttacker {
    pub fn new(config: &ProtocolConfig, n_target: usize, rng: SimRng) -> Self {
        PeAttacker {
            n_target,
            mu: config.mu,
            rounds: config.rounds,
            noise_tolerance: config.noise_tolerance,
            mode: PeMode::for_config(config),
            rng,
            pending: None,
            attack_day: None,
            plan_error: None,
            ledger: EveLedger::default(),
        }
    }

    pub fn attack_day(&self) -> Option<u32> {
        self.attack_day
    }

    pub fn plan_error(&self) -> Option<&AttackError> {
        self.plan_error.as_ref()
    }

    pub fn mode(&self) -> PeMode {
        self.mode
    }

    fn plan(&mut self, report: &DayReport) {
        let SessionOutcome::Key { transcript, .. } = &report.outcome else {
            return;
        };
        let day = report.day;
        self.ledger.target_day = Some(day);
        self.attack_day = Some(day + 1);
        let (party, candidates, inputs): (Party, Vec<LeakTarget>, Input) = match self.mode {
            PeMode::FinalKey => {
                let t = transcript.pa.as_ref().map_or(0, |p| p.output_len());
                (
                    Party::Alice,
                    (0..t).map(|index| LeakTarget::FinalKeyBit { day, index }).collect(),
                    2,
                )
            }
            PeMode::SiftedRaw => {
                let n = transcript.segment().map_or(0, |s| s.sifted_rounds.len());
                (
                    Party::Alice,
                    (0..n).map(|index| LeakTarget::SiftedRawBit { day, index }).collect(),
                    2,
                )
            }
            PeMode::BobRaw => {
                // Rounds in which Bob's device used the key basis; its firmware
                // finds the same list in memory.
                let key_basis: Vec<u32> = transcript
                    .segment()
                    .and_then(|s| s.announced.bob.as_ref())
                    .map(|ys| {
                        ys.iter()
                            .enumerate()
                            .filter(|(_, &y)| y == 2)
                            .map(|(r, _)| r as u32)
                            .collect()
                    })
                    .unwrap_or_default();
                (
                    Party::Bob,
                    key_basis.into_iter().map(|round| LeakTarget::RawRound { day, round }).collect(),
                    3,
                )
            }
        };
        match plan_pe_attack(
            self.n_target,
            self.mu,
            self.rounds,
            self.noise_tolerance,
            inputs,
            &candidates,
            day + 1,
            &mut self.rng,
        ) {
            Ok(schedule) => {
                let recipe = transcript.key_recipe(party);
                self.pending = Some(CovertPayload {
                    recipe,
                    leak_schedule: Some(schedule),
                    hidden: None,
                });
            }
            Err(e) => self.plan_error = Some(e),
        }
    }
}

impl Adversary for PeAttacker {
    fn prepare_day(&mut self, day: u32, lab: &mut Lab) {
        if self.mode != PeMode::BobRaw || self.attack_day != Some(day) {
            return;
        }
        let Some(payload) = self.pending.take() else { return };
        let Some(schedule) = payload.leak_schedule else { return };
        lab.pairs[0].bob.set_policy(DevicePolicy::LeakSchedule(schedule.clone()));
        self.ledger.programs.push(EveProgram::LeakInstalled {
            day,
            party: Party::Bob,
            schedule,
        });
    }

    fn inject(&mut self, day: u32, pair: usize) -> Option<CovertPayload> {
        if pair != 0 || self.mode == PeMode::BobRaw || self.attack_day != Some(day) {
            return None;
        }
        let payload = self.pending.take()?;
        if let Some(schedule) = &payload.leak_schedule {
            self.ledger.programs.push(EveProgram::LeakInstalled {
                day,
                party: Party::Alice,
                schedule: schedule.clone(),
            });
        }
        Some(payload)
    }

    fn observe_day(&mut self, report: &DayReport) {
        self.ledger.record_day(report);
        if self.ledger.target_day.is_none() {
            self.plan(report);
        }
        self.ledger.refresh();
    }

    fn ledger(&self) -> &EveLedger {
        &self.ledger
    }
}

impl super::LedgerAccess for PeAttacker {
    fn ledger_mut(&mut self) -> &mut EveLedger {
        &mut self.ledger
    }
}

/// Outcome of one PE-attack campaign.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PeTrial {
    pub target_day: Option<u32>,
    pub attack_day: Option<u32>,
    pub mounted: bool,
    pub attack_day_aborted: bool,
    pub attack_day_test_value: Option<f64>,
    /// Key bits credited to Eve.
    pub leaked_key_bits: usize,
    /// Raw output bits credited to Eve.
    pub leaked_raw_bits: usize,
    /// Credited bits that disagree with the truth.
    pub wrong_bits: usize,
    pub key_len: usize,
    pub plan_error: Option<String>,
}

/// Run honest days until one yields a key, then attack the next day.
pub fn run_pe_trial(
    config: &ProtocolConfig,
    model: CorrelationModel,
    n_target: usize,
    max_days: u32,
    seed: u64,
) -> PeTrial {
    let mut rng = rng_from_seed(derive_seed(seed, stream::PROTOCOL));
    let mut lab = Lab::new(config, model, &mut rng);
    let mut eve = PeAttacker::new(config, n_target, rng_from_seed(derive_seed(seed, stream::ADVERSARY)));
    let mut reports = Vec::new();
    for day in 1..=max_days {
        eve.prepare_day(day, &mut lab);
        let report = run_day(config, day, &mut lab, &mut eve, &mut rng);
        eve.observe_day(&report);
        reports.push(report);
        if eve.attack_day().is_some_and(|d| d <= day) || eve.plan_error().is_some() {
            break;
        }
    }
    score_pe(&eve, &reports, &lab)
}

fn score_pe(eve: &PeAttacker, reports: &[DayReport], lab: &Lab) -> PeTrial {
    let ledger = eve.ledger();
    let audit = audit_credits(ledger, reports, &lab.pairs[0].alice, &lab.pairs[0].bob);
    let attack = eve
        .attack_day()
        .and_then(|d| reports.iter().find(|r| r.day == d));
    PeTrial {
        target_day: ledger.target_day,
        attack_day: attack.map(|r| r.day),
        mounted: attack.is_some() && eve.plan_error().is_none(),
        attack_day_aborted: attack.is_some_and(|r| r.outcome.is_abort()),
        attack_day_test_value: attack.and_then(|r| r.outcome.test_value()),
        leaked_key_bits: audit.key_bits,
        leaked_raw_bits: audit.raw_bits,
        wrong_bits: audit.wrong_bits,
        key_len: audit.key_len,
        plan_error: eve.plan_error().map(|e| e.to_string()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::protocol::Countermeasures;
    use std::collections::BTreeSet;

    #[test]
    fn schedule_sizes() {
        assert_eq!(schedule_size(25, 0.05), 500);
        assert_eq!(schedule_size(1, 0.3), 4);
    }

    #[test]
    fn plan_rejects_oversized_schedule() {
        let targets: Vec<LeakTarget> = (0..10_000)
            .map(|index| LeakTarget::FinalKeyBit { day: 1, index })
            .collect();
        let mut rng = rng_from_seed(0);
        assert!(matches!(
            plan_pe_attack(600, 0.05, 10_000, 0.5, 2, &targets, 2, &mut rng),
            Err(AttackError::BudgetExceeded { .. })
        ));
        assert!(matches!(
            plan_pe_attack(25, 0.05, 10_000, 0.01, 2, &targets, 2, &mut rng),
            Err(AttackError::NoiseBudgetExceeded { .. })
        ));
        assert!(matches!(
            plan_pe_attack(25, 0.05, 10_000, 0.05, 2, &targets[..100], 2, &mut rng),
            Err(AttackError::InsufficientTargets { .. })
        ));
    }

    #[test]
    fn plan_has_distinct_slots_and_targets() {
        let targets: Vec<LeakTarget> = (0..2000)
            .map(|index| LeakTarget::FinalKeyBit { day: 1, index })
            .collect();
        let mut rng = rng_from_seed(4);
        let s = plan_pe_attack(25, 0.05, 10_000, 0.05, 2, &targets, 2, &mut rng).unwrap();
        assert_eq!(s.len(), 500);
        let slots: BTreeSet<_> = s.entries().iter().map(|e| e.slot).collect();
        let idx: BTreeSet<_> = s
            .entries()
            .iter()
            .map(|e| match e.target {
                LeakTarget::FinalKeyBit { index, .. } => index,
                _ => unreachable!(),
            })
            .collect();
        assert_eq!((slots.len(), idx.len()), (500, 500));
        assert!(s.entries().iter().all(|e| e.slot.input < 2 && e.slot.occurrence >= 1));
    }

    #[test]
    fn attack_leaks_correct_key_bits() {
        let config = ProtocolConfig::default();
        let t = run_pe_trial(&config, CorrelationModel::ideal(), 25, 5, 1);
        assert!(t.mounted, "{t:?}");
        assert!(t.leaked_key_bits > 5, "{t:?}");
        assert_eq!(t.wrong_bits, 0);
    }

    #[test]
    fn encryption_blocks_the_attack() {
        let config = ProtocolConfig {
            countermeasures: Countermeasures {
                cm2_encrypt_pe: true,
                ..Default::default()
            },
            preshared_key_bits: 5000,
            ..ProtocolConfig::default()
        };
        let t = run_pe_trial(&config, CorrelationModel::ideal(), 25, 5, 2);
        assert!(t.mounted);
        assert_eq!(t.leaked_key_bits + t.leaked_raw_bits, 0);
    }

    #[test]
    fn secret_pa_limits_eve_to_raw_bits() {
        let config = ProtocolConfig {
            countermeasures: Countermeasures {
                cm4_secret_pa: true,
                ..Default::default()
            },
            ..ProtocolConfig::default()
        };
        let t = run_pe_trial(&config, CorrelationModel::ideal(), 25, 5, 3);
        assert!(t.mounted);
        assert_eq!(t.leaked_key_bits, 0);
        assert!(t.leaked_raw_bits > 5);
        assert_eq!(t.wrong_bits, 0);
    }

    #[test]
    fn bob_announcing_limits_eve_to_raw_bits() {
        let config = ProtocolConfig {
            countermeasures: Countermeasures {
                cm1_bob_announces: true,
                ..Default::default()
            },
            ..ProtocolConfig::default()
        };
        let t = run_pe_trial(&config, CorrelationModel::ideal(), 25, 5, 4);
        assert!(t.mounted, "{t:?}");
        assert_eq!(t.leaked_key_bits, 0);
        assert!(t.leaked_raw_bits > 5);
        assert_eq!(t.wrong_bits, 0);
    }
}
