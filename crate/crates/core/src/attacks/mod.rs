//! Adversaries that exploit device memory, and Eve's bookkeeping.
//!
//! Every bit Eve claims is entered in an [`EveLedger`] with the public or
//! covert event it came from. [`eve_reconstruct`] recomputes all credits from
//! the ledger's recorded observations alone, so a replay can audit them.

pub mod abort;
pub mod bhk;
pub mod hr;
pub mod impostor;
pub mod pe;
pub mod qre;
mod reconstruct;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::devices::{CovertPayload, DeviceState, LeakSchedule};
use crate::protocol::{Adversary, DayReport, Party, SessionTranscript};

pub use abort::{abort_capacity, abort_decode, abort_encode, AbortAttacker};
pub use impostor::CorruptReceiver;
pub use pe::{plan_pe_attack, PeAttacker, PeMode};
pub use reconstruct::{eve_reconstruct, Reconstruction};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AttackError {
    #[error("schedule of {needed} slots does not fit in {rounds} rounds")]
    BudgetExceeded { needed: usize, rounds: usize },
    #[error("schedule of {needed} slots would add noise {fraction:.4} above tolerance {tolerance}")]
    NoiseBudgetExceeded {
        needed: usize,
        fraction: f64,
        tolerance: f64,
    },
    #[error("only {available} target bits for {needed} slots")]
    InsufficientTargets { needed: usize, available: usize },
    #[error("encoded abort day {needed_day} lies beyond a {days}-day campaign")]
    CampaignTooShort { needed_day: u64, days: u32 },
    #[error("day {day} carries no {bit_len}-bit abort code")]
    NotAnAbortCode { day: u32, bit_len: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Provenance {
    PeReveal,
    AbortDecode,
    Covert,
    LengthObservation,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Credit {
    pub bit: bool,
    pub provenance: Provenance,
}

/// One device output: `party`'s raw output in `round` of `day`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct RawBitRef {
    pub party: Party,
    pub day: u32,
    pub round: u32,
}

/// Something Eve did herself, recorded so the ledger can be replayed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum EveProgram {
    LeakInstalled {
        day: u32,
        party: Party,
        schedule: LeakSchedule,
    },
    AbortArmed {
        party: Party,
        source_day: u32,
        rounds: Vec<u32>,
        bit_len: usize,
    },
    /// Bit `i` is the raw output in `rounds[i]` of `source_day`, signalled by
    /// lowering the test value on day `start_day + i`.
    NoiseCode {
        party: Party,
        source_day: u32,
        rounds: Vec<u32>,
        start_day: u32,
        /// Output lengths below this decode as 1.
        midpoint: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tap {
    pub day: u32,
    pub payload: CovertPayload,
}

/// Plaintext test announcements handed over by a corrupt receiver.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DecryptedReveals {
    pub day: u32,
    pub announcer: Party,
    pub rounds: Vec<u32>,
    pub bits: Vec<bool>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LengthObservation {
    pub day: u32,
    pub length: usize,
    pub aborted: bool,
}

mod pairs {
    use std::collections::BTreeMap;

    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S, K, V>(map: &BTreeMap<K, V>, s: S) -> Result<S::Ok, S::Error>
    where
        S: Serializer,
        K: Serialize,
        V: Serialize,
    {
        s.collect_seq(map.iter())
    }

    pub fn deserialize<'de, D, K, V>(d: D) -> Result<BTreeMap<K, V>, D::Error>
    where
        D: Deserializer<'de>,
        K: Deserialize<'de> + Ord,
        V: Deserialize<'de>,
    {
        Ok(Vec::<(K, V)>::deserialize(d)?.into_iter().collect())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EveLedger {
    pub transcripts: Vec<SessionTranscript>,
    pub covert_taps: Vec<Tap>,
    pub programs: Vec<EveProgram>,
    pub decrypted_reveals: Vec<DecryptedReveals>,
    pub length_observations: Vec<LengthObservation>,
    /// Day whose final key Eve is after; bits are indexed into that key.
    pub target_day: Option<u32>,
    pub inferred_day1_key_bits: BTreeMap<usize, Credit>,
    #[serde(with = "pairs")]
    pub inferred_raw_bits: BTreeMap<RawBitRef, Credit>,
    pub abort_day: Option<u32>,
}

impl EveLedger {
    /// Record the public part of a day.
    pub fn record_day(&mut self, report: &DayReport) {
        self.transcripts.push(report.outcome.transcript().clone());
        for payload in &report.taps {
            self.covert_taps.push(Tap {
                day: report.day,
                payload: payload.clone(),
            });
        }
    }

    /// Recompute credits from the recorded observations and adopt them.
    /// Existing credits are never removed.
    pub fn refresh(&mut self) {
        let r = eve_reconstruct(self);
        for (k, c) in r.key_bits {
            self.inferred_day1_key_bits.entry(k).or_insert(c);
        }
        for (k, c) in r.raw_bits {
            self.inferred_raw_bits.entry(k).or_insert(c);
        }
        if self.abort_day.is_none() {
            self.abort_day = r.abort_day;
        }
    }

    pub fn transcript(&self, day: u32) -> Option<&SessionTranscript> {
        self.transcripts.iter().find(|t| t.day == day)
    }

    /// Total bits credited, key and raw.
    pub fn credited_bits(&self) -> usize {
        self.inferred_day1_key_bits.len() + self.inferred_raw_bits.len()
    }
}

/// Attack selection, as named in experiment configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum AttackPlan {
    None,
    PeAttack { n_target: usize },
    AbortAttack { bit_len: Option<usize> },
    ImpostorAttack { corrupt_day: u32 },
    Bhk { m: usize, n: usize },
    HrDepletion { runs: usize },
    QreLengthLeak,
    QreProcrustean { fixed_length: Option<usize> },
    QreAbort,
}

/// Mutable ledger access, so wrappers can add observations.
pub trait LedgerAccess {
    fn ledger_mut(&mut self) -> &mut EveLedger;
}

/// Records the public transcript and does nothing else.
#[derive(Debug, Clone, Default)]
pub struct PassiveEve {
    ledger: EveLedger,
}

impl Adversary for PassiveEve {
    fn observe_day(&mut self, report: &DayReport) {
        self.ledger.record_day(report);
        self.ledger.refresh();
    }

    fn ledger(&self) -> &EveLedger {
        &self.ledger
    }
}

impl LedgerAccess for PassiveEve {
    fn ledger_mut(&mut self) -> &mut EveLedger {
        &mut self.ledger
    }
}

/// Eve's credits checked against the ground truth.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CreditAudit {
    pub key_bits: usize,
    pub raw_bits: usize,
    /// Credited bits that disagree with the truth.
    pub wrong_bits: usize,
    /// Length of the targeted key, 0 if there is none.
    pub key_len: usize,
}

/// Compare a ledger's credits with the real target key and device memories.
pub fn audit_credits(
    ledger: &EveLedger,
    reports: &[DayReport],
    alice: &DeviceState,
    bob: &DeviceState,
) -> CreditAudit {
    let truth = ledger
        .target_day
        .and_then(|d| reports.iter().find(|r| r.day == d))
        .and_then(|r| r.outcome.alice_key());
    let mut wrong = ledger
        .inferred_day1_key_bits
        .iter()
        .filter(|(&i, c)| truth.and_then(|k| k.final_key.get(i)) != Some(&c.bit))
        .count();
    for (r, c) in &ledger.inferred_raw_bits {
        let device = match r.party {
            Party::Alice => alice,
            Party::Bob => bob,
        };
        if device.memory_outputs(r.day, &[r.round]) != Some(vec![c.bit]) {
            wrong += 1;
        }
    }
    CreditAudit {
        key_bits: ledger.inferred_day1_key_bits.len(),
        raw_bits: ledger.inferred_raw_bits.len(),
        wrong_bits: wrong,
        key_len: truth.map_or(0, |k| k.final_key.len()),
    }
}
