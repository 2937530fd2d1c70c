//! Leaking bits through the day on which a device refuses to work.
//!
//! `k` bits `b1..bk` are sent by aborting on day `int(b1..bk) + 2`; day 1
//! produces the data, so the earliest code day is 2.

use crate::bits::{from_u64, to_u64};
use crate::devices::DevicePolicy;
use crate::protocol::{Adversary, DayReport, Lab, Party};

use super::{AttackError, EveLedger, EveProgram};

/// Day on which to abort to signal `bits` within a `days`-day campaign.
pub fn abort_encode(bits: &[bool], days: u32) -> Result<u32, AttackError> {
    let day = to_u64(bits) + 2;
    if day > days as u64 {
        return Err(AttackError::CampaignTooShort {
            needed_day: day,
            days,
        });
    }
    Ok(day as u32)
}

/// The `bit_len`-bit string signalled by an abort on `day`.
pub fn abort_decode(day: u32, bit_len: usize) -> Result<Vec<bool>, AttackError> {
    let not_code = AttackError::NotAnAbortCode { day, bit_len };
    if day < 2 || bit_len > 63 {
        return Err(not_code);
    }
    let value = (day - 2) as u64;
    if value >> bit_len != 0 {
        return Err(not_code);
    }
    Ok(from_u64(value, bit_len))
}

/// Largest `k` such that every `k`-bit code fits in `days` days.
pub fn abort_capacity(days: u32) -> usize {
    if days < 2 {
        0
    } else {
        (days - 1).ilog2() as usize
    }
}

/// Firmware in one device that, after `source_day`, aborts on the day
/// encoding its own raw outputs in the chosen rounds.
#[derive(Debug, Clone)]
pub struct AbortAttacker {
    party: Party,
    source_day: u32,
    rounds: Vec<u32>,
    days: u32,
    armed: bool,
    ledger: EveLedger,
}

impl AbortAttacker {
    /// Encode the outputs of rounds `0..bit_len` of day 1 of `party`'s device.
    pub fn new(party: Party, bit_len: usize, days: u32) -> Self {
        AbortAttacker {
            party,
            source_day: 1,
            rounds: (0..bit_len as u32).collect(),
            days,
            armed: false,
            ledger: EveLedger::default(),
        }
    }

    /// Largest code a `days`-day campaign can carry.
    pub fn with_capacity(party: Party, days: u32) -> Self {
        Self::new(party, abort_capacity(days), days)
    }

    pub fn bit_len(&self) -> usize {
        self.rounds.len()
    }

    pub fn rounds(&self) -> &[u32] {
        &self.rounds
    }
}

impl Adversary for AbortAttacker {
    fn prepare_day(&mut self, day: u32, lab: &mut Lab) {
        if self.armed || day <= self.source_day {
            return;
        }
        self.armed = true;
        let pair = &mut lab.pairs[0];
        let device = match self.party {
            Party::Alice => &mut pair.alice,
            Party::Bob => &mut pair.bob,
        };
        let Some(bits) = device.memory_outputs(self.source_day, &self.rounds) else {
            return;
        };
        if let Ok(abort_day) = abort_encode(&bits, self.days) {
            device.set_policy(DevicePolicy::AbortOnDay(abort_day));
            self.ledger.programs.push(EveProgram::AbortArmed {
                party: self.party,
                source_day: self.source_day,
                rounds: self.rounds.clone(),
                bit_len: self.rounds.len(),
            });
        }
    }

    fn observe_day(&mut self, report: &DayReport) {
        self.ledger.record_day(report);
        self.ledger.refresh();
    }

    fn ledger(&self) -> &EveLedger {
        &self.ledger
    }
}

impl super::LedgerAccess for AbortAttacker {
    fn ledger_mut(&mut self) -> &mut EveLedger {
        &mut self.ledger
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bits::parse;
    use proptest::prelude::*;

    #[test]
    fn worked_examples() {
        assert_eq!(abort_encode(&parse("101").unwrap(), 10), Ok(7));
        assert_eq!(abort_encode(&parse("00").unwrap(), 2), Ok(2));
        assert_eq!(
            abort_encode(&parse("111").unwrap(), 8),
            Err(AttackError::CampaignTooShort {
                needed_day: 9,
                days: 8
            })
        );
        assert_eq!(abort_decode(7, 3).unwrap(), parse("101").unwrap());
        assert!(abort_decode(1, 3).is_err());
        assert!(abort_decode(10, 3).is_err());
    }

    #[test]
    fn capacity() {
        assert_eq!(abort_capacity(1), 0);
        assert_eq!(abort_capacity(2), 0);
        assert_eq!(abort_capacity(3), 1);
        assert_eq!(abort_capacity(9), 3);
        assert_eq!(abort_capacity(10), 3);
        assert_eq!(abort_capacity(17), 4);
    }

    proptest! {
        #[test]
        fn round_trip(bits in proptest::collection::vec(any::<bool>(), 0..12)) {
            let days = (1u32 << bits.len()) + 1;
            let day = abort_encode(&bits, days).unwrap();
            prop_assert!(day >= 2 && day <= days);
            prop_assert_eq!(abort_decode(day, bits.len()).unwrap(), bits);
        }

        #[test]
        fn capacity_fits_campaign(days in 2u32..5000) {
            let k = abort_capacity(days);
            prop_assert!((1u64 << k) < days as u64);
            prop_assert!((1u64 << (k + 1)) + 1 > days as u64);
            prop_assert!(k as f64 <= (days as f64).log2().ceil());
        }
    }
}
