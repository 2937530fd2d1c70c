use std::collections::BTreeMap;

use crate::devices::LeakTarget;
use crate::pamp::toeplitz_hash;
use crate::protocol::{AbortCause, Party, PaRecord, PeReveals, SessionTranscript};

use super::{abort_decode, Credit, EveLedger, EveProgram, Provenance, RawBitRef};

/// Credits derivable from a ledger.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Reconstruction {
    pub key_bits: BTreeMap<usize, Credit>,
    pub raw_bits: BTreeMap<RawBitRef, Credit>,
    pub abort_day: Option<u32>,
}

fn plaintext_reveals(ledger: &EveLedger, t: &SessionTranscript, party: Party) -> Option<(Vec<u32>, Vec<bool>)> {
    match t.segment()?.reveals.as_ref()? {
        PeReveals::Plain {
            announcer,
            rounds,
            bits,
        } if *announcer == party => Some((rounds.clone(), bits.clone())),
        _ => ledger
            .decrypted_reveals
            .iter()
            .find(|d| d.day == t.day && d.announcer == party)
            .map(|d| (d.rounds.clone(), d.bits.clone())),
    }
}

/// Recompute every credit from the ledger's transcripts, taps, programs and
/// observations.
pub fn eve_reconstruct(ledger: &EveLedger) -> Reconstruction {
    let mut out = Reconstruction::default();
    let target_day = ledger
        .target_day
        .or_else(|| ledger.transcripts.iter().find(|t| t.pa.is_some()).map(|t| t.day));
    let pa_public = |day: u32| {
        matches!(
            ledger.transcript(day).and_then(|t| t.pa.as_ref()),
            Some(PaRecord::Public { .. })
        )
    };

    out.abort_day = ledger
        .transcripts
        .iter()
        .find(|t| matches!(t.abort, Some(a) if a.step == 2))
        .map(|t| t.day);

    for program in &ledger.programs {
        match program {
            EveProgram::LeakInstalled {
                day,
                party,
                schedule,
            } => {
                let Some(t) = ledger.transcript(*day) else { continue };
                let Some(inputs) = t.segment().and_then(|s| s.announced.of(*party)) else {
                    continue;
                };
                let Some((rounds, bits)) = plaintext_reveals(ledger, t, *party) else {
                    continue;
                };
                let mut occ = [0u32; 4];
                let slots: Vec<_> = inputs
                    .iter()
                    .map(|&x| {
                        occ[x as usize & 3] += 1;
                        crate::devices::Slot {
                            input: x,
                            occurrence: occ[x as usize & 3],
                        }
                    })
                    .collect();
                for (&r, &bit) in rounds.iter().zip(&bits) {
                    let Some(&slot) = slots.get(r as usize) else { continue };
                    let credit = Credit {
                        bit,
                        provenance: Provenance::PeReveal,
                    };
                    match schedule.lookup(slot) {
                        Some(LeakTarget::FinalKeyBit { day: kd, index }) => {
                            if Some(kd) == target_day && pa_public(kd) {
                                out.key_bits.entry(index).or_insert(credit);
                            }
                        }
                        Some(LeakTarget::SiftedRawBit { day: kd, index }) => {
                            let round = ledger
                                .transcript(kd)
                                .and_then(|t| t.segment())
                                .and_then(|s| s.sifted_rounds.get(index).copied());
                            if let Some(round) = round {
                                let raw = bit ^ (*party == Party::Bob);
                                out.raw_bits
                                    .entry(RawBitRef { party: *party, day: kd, round })
                                    .or_insert(Credit { bit: raw, ..credit });
                            }
                        }
                        Some(LeakTarget::RawRound { day: kd, round }) => {
                            out.raw_bits
                                .entry(RawBitRef { party: *party, day: kd, round })
                                .or_insert(credit);
                        }
                        None => {}
                    }
                }
            }
            EveProgram::AbortArmed {
                party,
                source_day,
                rounds,
                bit_len,
            } => {
                let first = ledger.transcripts.iter().find(|t| {
                    matches!(t.abort, Some(a) if a.cause == AbortCause::DeviceAborted(*party))
                });
                let Some(t) = first else { continue };
                let Ok(bits) = abort_decode(t.day, *bit_len) else { continue };
                for (&round, bit) in rounds.iter().zip(bits) {
                    out.raw_bits
                        .entry(RawBitRef {
                            party: *party,
                            day: *source_day,
                            round,
                        })
                        .or_insert(Credit {
                            bit,
                            provenance: Provenance::AbortDecode,
                        });
                }
            }
            EveProgram::NoiseCode {
                party,
                source_day,
                rounds,
                start_day,
                midpoint,
            } => {
                for obs in &ledger.length_observations {
                    if obs.day < *start_day {
                        continue;
                    }
                    let i = (obs.day - start_day) as usize;
                    let Some(&round) = rounds.get(i) else { continue };
                    let bit = obs.aborted || (obs.length as f64) < *midpoint;
                    out.raw_bits
                        .entry(RawBitRef {
                            party: *party,
                            day: *source_day,
                            round,
                        })
                        .or_insert(Credit {
                            bit,
                            provenance: Provenance::LengthObservation,
                        });
                }
            }
        }
    }

    for tap in &ledger.covert_taps {
        if let Some(h) = &tap.payload.hidden {
            for (&round, &bit) in h.rounds.iter().zip(&h.bits) {
                out.raw_bits
                    .entry(RawBitRef {
                        party: Party::Bob,
                        day: h.day,
                        round,
                    })
                    .or_insert(Credit {
                        bit,
                        provenance: Provenance::Covert,
                    });
            }
        }
    }

    if let Some(kd) = target_day {
        derive_key_from_raw(ledger, kd, &mut out);
    }
    out
}

/// With every sifted raw bit of one party and a public hash, the whole key
/// follows.
fn derive_key_from_raw(ledger: &EveLedger, kd: u32, out: &mut Reconstruction) {
    let Some(t) = ledger.transcript(kd) else { return };
    let Some(PaRecord::Public { seed, output_len }) = &t.pa else { return };
    if t.segments.len() != 1 {
        return;
    }
    let seg = &t.segments[0];
    let Some(ec) = &seg.ec else { return };
    for party in [Party::Alice, Party::Bob] {
        let credits: Option<Vec<Credit>> = seg
            .sifted_rounds
            .iter()
            .map(|&round| out.raw_bits.get(&RawBitRef { party, day: kd, round }).copied())
            .collect();
        let Some(credits) = credits else { continue };
        let negate = party == Party::Bob;
        let mut s: Vec<bool> = credits.iter().map(|c| c.bit ^ negate).collect();
        if party == Party::Bob {
            for &c in &ec.corrections {
                if let Some(b) = s.get_mut(c) {
                    *b ^= true;
                }
            }
        }
        let provenance = credits
            .iter()
            .map(|c| c.provenance)
            .min()
            .unwrap_or(Provenance::PeReveal);
        if let Ok(key) = toeplitz_hash(&s, seed, *output_len) {
            for (i, bit) in key.into_iter().enumerate() {
                out.key_bits.entry(i).or_insert(Credit { bit, provenance });
            }
        }
        return;
    }
}
