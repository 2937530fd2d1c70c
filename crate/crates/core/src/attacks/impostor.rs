//! Running later days with a different partner so that encrypted test data
//! reaches Eve through the new partner.

use serde::{Deserialize, Serialize};

use crate::devices::{CovertPayload, DeviceId, DeviceState};
use crate::protocol::{run_day, Adversary, DayReport, Lab, Party, PresharedKey, ProtocolConfig};
use crate::qsim::CorrelationModel;
use crate::seed::{derive_seed, rng_from_seed, stream};

use super::{audit_credits, AbortAttacker, DecryptedReveals, EveLedger, LedgerAccess, PeAttacker};

/// Forwards to an inner adversary and, from `from_day` on, hands it the
/// receiving party's plaintext view of the test announcements.
#[derive(Debug, Clone)]
pub struct CorruptReceiver<A> {
    pub inner: A,
    pub from_day: u32,
}

impl<A: Adversary> CorruptReceiver<A> {
    fn hand_over(&mut self, report: &DayReport) -> Vec<DecryptedReveals> {
        if report.day < self.from_day {
            return Vec::new();
        }
        report
            .receiver_views
            .iter()
            .map(|v| DecryptedReveals {
                day: report.day,
                announcer: match v.receiver {
                    Party::Alice => Party::Bob,
                    Party::Bob => Party::Alice,
                },
                rounds: v.revealed_rounds.clone(),
                bits: v.revealed_bits.clone(),
            })
            .collect()
    }
}

impl<A: Adversary + LedgerAccess> Adversary for CorruptReceiver<A> {
    fn prepare_day(&mut self, day: u32, lab: &mut Lab) {
        self.inner.prepare_day(day, lab);
    }

    fn hidden_data(
        &mut self,
        day: u32,
        pair: usize,
        bob: &crate::devices::DeviceState,
    ) -> Option<crate::devices::HiddenData> {
        self.inner.hidden_data(day, pair, bob)
    }

    fn inject(&mut self, day: u32, pair: usize) -> Option<CovertPayload> {
        self.inner.inject(day, pair)
    }

    fn observe_day(&mut self, report: &DayReport) {
        let handed = self.hand_over(report);
        self.inner.ledger_mut().decrypted_reveals.extend(handed);
        self.inner.observe_day(report);
    }

    fn ledger(&self) -> &EveLedger {
        self.inner.ledger()
    }
}

/// Which memory attack Alice's device runs against the new partner.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ImpostorAttack {
    Pe { n_target: usize },
    Abort { bit_len: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImpostorPlan {
    pub attack: ImpostorAttack,
    /// First day Alice works with Charlie instead of Bob.
    pub switch_day: u32,
    /// Whether Charlie passes his plaintext view to Eve.
    pub corrupt: bool,
    pub days: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImpostorTrial {
    pub key_bits: usize,
    pub raw_bits: usize,
    pub wrong_bits: usize,
    pub key_len: usize,
    pub abort_day: Option<u32>,
    pub days_run: u32,
}

/// Day 1 with Bob, then Charlie from `switch_day`, both with encrypted
/// estimation. Charlie has his own pre-shared key with Alice.
pub fn run_impostor(
    config: &ProtocolConfig,
    model: CorrelationModel,
    plan: &ImpostorPlan,
    seed: u64,
) -> ImpostorTrial {
    let mut rng = rng_from_seed(derive_seed(seed, stream::PROTOCOL));
    let mut lab = Lab::new(config, model, &mut rng);
    let mut charlie = DeviceState::new(DeviceId(100));
    let mut charlie_key = PresharedKey::random(config.preshared_key_bits, &mut rng);
    let from_day = if plan.corrupt { plan.switch_day } else { u32::MAX };
    let eve_rng = rng_from_seed(derive_seed(seed, stream::ADVERSARY));

    let mut reports = Vec::new();
    let mut bob_device = None;
    let mut drive = |adversary: &mut dyn Adversary, stop: &dyn Fn(&dyn Adversary, u32) -> bool| {
        for day in 1..=plan.days {
            if day == plan.switch_day {
                std::mem::swap(&mut lab.pairs[0].bob, &mut charlie);
                std::mem::swap(&mut lab.preshared, &mut charlie_key);
                bob_device = Some(charlie.clone());
            }
            adversary.prepare_day(day, &mut lab);
            let report = run_day(config, day, &mut lab, adversary, &mut rng);
            adversary.observe_day(&report);
            reports.push(report);
            if stop(adversary, day) {
                break;
            }
        }
    };
    let ledger: EveLedger = match plan.attack {
        ImpostorAttack::Pe { n_target } => {
            let mut eve = CorruptReceiver {
                inner: PeAttacker::new(config, n_target, eve_rng),
                from_day,
            };
            let attack_day = std::cell::Cell::new(None);
            drive(&mut eve, &|a, day| {
                attack_day.set(a.ledger().target_day.map(|d| d + 1));
                attack_day.get().is_some_and(|d| d <= day)
            });
            eve.ledger().clone()
        }
        ImpostorAttack::Abort { bit_len } => {
            let mut eve = CorruptReceiver {
                inner: AbortAttacker::new(Party::Alice, bit_len, plan.days),
                from_day,
            };
            drive(&mut eve, &|a, _| a.ledger().abort_day.is_some());
            eve.ledger().clone()
        }
    };
    let bob = bob_device.unwrap_or_else(|| lab.pairs[0].bob.clone());
    let audit = audit_credits(&ledger, &reports, &lab.pairs[0].alice, &bob);
    ImpostorTrial {
        key_bits: audit.key_bits,
        raw_bits: audit.raw_bits,
        wrong_bits: audit.wrong_bits,
        key_len: audit.key_len,
        abort_day: ledger.abort_day,
        days_run: reports.len() as u32,
    }
}
