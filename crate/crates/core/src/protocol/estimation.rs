//! Parameter estimation: revealing a random subset of rounds and computing
//! the test statistic on them.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::qsim::{CorrelationCounts, OutcomePair, Sign, TestFunction};

use super::{Party, RoundRecord};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PeError {
    #[error("pre-shared key exhausted: need {needed} bits, {available} left")]
    InsufficientPresharedKey { needed: usize, available: usize },
}

/// Secret bits shared in advance, consumed front to back.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PresharedKey {
    bits: Vec<bool>,
    used: usize,
}

impl PresharedKey {
    pub fn new(bits: Vec<bool>) -> Self {
        PresharedKey { bits, used: 0 }
    }

    pub fn random<R: Rng + ?Sized>(len: usize, rng: &mut R) -> Self {
        PresharedKey::new((0..len).map(|_| rng.random()).collect())
    }

    pub fn empty() -> Self {
        PresharedKey::new(Vec::new())
    }

    pub fn remaining(&self) -> usize {
        self.bits.len() - self.used
    }

    pub fn consumed(&self) -> usize {
        self.used
    }

    /// Take the next `n` bits.
    pub fn take(&mut self, n: usize) -> Result<Vec<bool>, PeError> {
        if n > self.remaining() {
            return Err(PeError::InsufficientPresharedKey {
                needed: n,
                available: self.remaining(),
            });
        }
        let out = self.bits[self.used..self.used + n].to_vec();
        self.used += n;
        Ok(out)
    }

    /// Append fresh key material, e.g. part of the previous day's output.
    pub fn extend(&mut self, bits: &[bool]) {
        self.bits.extend_from_slice(bits);
    }
}

/// What the announcing party publishes about the revealed rounds.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum PeReveals {
    Plain {
        announcer: Party,
        rounds: Vec<u32>,
        bits: Vec<bool>,
    },
    /// One-time-padded outputs; the revealed round indices are not public.
    Encrypted {
        announcer: Party,
        ciphertext: Vec<bool>,
    },
}

impl PeReveals {
    pub fn len(&self) -> usize {
        match self {
            PeReveals::Plain { bits, .. } => bits.len(),
            PeReveals::Encrypted { ciphertext, .. } => ciphertext.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn announcer(&self) -> Party {
        match self {
            PeReveals::Plain { announcer, .. } | PeReveals::Encrypted { announcer, .. } => {
                *announcer
            }
        }
    }
}

/// Everything the receiving party learns in parameter estimation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PeOutcome {
    /// `None` when some test setting pair has no revealed rounds.
    pub test_value: Option<f64>,
    pub reveals: PeReveals,
    pub key_consumed: usize,
    /// Revealed rounds and the announcer's plaintext bits (private to the parties).
    pub revealed_rounds: Vec<u32>,
    pub revealed_bits: Vec<bool>,
    pub counts: CorrelationCounts,
    /// Revealed key-setting rounds.
    pub key_rounds_revealed: usize,
    /// Fraction of revealed key-setting rounds whose outputs are not opposite.
    pub key_error_rate: Option<f64>,
}

pub fn one_time_pad(bits: &[bool], pad: &[bool]) -> Vec<bool> {
    bits.iter().zip(pad).map(|(b, k)| b ^ k).collect()
}

/// Exact `I(P; C)` in bits for `k`-bit plaintexts drawn from `prior` (indexed
/// by the plaintext's integer value) and padded with a uniform key,
/// enumerating every plaintext and key.
pub fn pad_mutual_information(k: usize, prior: &[f64]) -> f64 {
    assert_eq!(prior.len(), 1 << k, "prior must cover every plaintext");
    let size = 1usize << k;
    let key_prob = 1.0 / size as f64;
    let mut joint = vec![0.0; size * size];
    for p in 0..size {
        let pbits = crate::bits::from_u64(p as u64, k);
        for key in 0..size {
            let c = one_time_pad(&pbits, &crate::bits::from_u64(key as u64, k));
            joint[p * size + crate::bits::to_u64(&c) as usize] += prior[p] * key_prob;
        }
    }
    let pc: Vec<f64> = (0..size).map(|c| (0..size).map(|p| joint[p * size + c]).sum()).collect();
    let mut mi = 0.0;
    for p in 0..size {
        for c in 0..size {
            let j = joint[p * size + c];
            if j > 0.0 {
                mi += j * (j / (prior[p] * pc[c])).log2();
            }
        }
    }
    mi
}

/// Reveal each round independently with probability `mu` and evaluate the
/// test on the revealed test-setting rounds.
pub fn parameter_estimation<R: Rng + ?Sized>(
    rounds: &[RoundRecord],
    mu: f64,
    announcer: Party,
    encrypt: bool,
    preshared: &mut PresharedKey,
    test: &dyn TestFunction,
    rng: &mut R,
) -> Result<PeOutcome, PeError> {
    let revealed_rounds: Vec<u32> = (0..rounds.len() as u32)
        .filter(|_| rng.random::<f64>() < mu)
        .collect();
    let revealed_bits: Vec<bool> = revealed_rounds
        .iter()
        .map(|&r| {
            let rec = &rounds[r as usize];
            match announcer {
                Party::Alice => rec.alice_bit,
                Party::Bob => rec.bob_bit,
            }
        })
        .collect();

    let (reveals, key_consumed) = if encrypt {
        let pad = preshared.take(revealed_bits.len())?;
        let ciphertext = one_time_pad(&revealed_bits, &pad);
        (
            PeReveals::Encrypted {
                announcer,
                ciphertext,
            },
            pad.len(),
        )
    } else {
        (
            PeReveals::Plain {
                announcer,
                rounds: revealed_rounds.clone(),
                bits: revealed_bits.clone(),
            },
            0,
        )
    };

    let mut counts = CorrelationCounts::new();
    let (mut key_rounds, mut key_errors) = (0usize, 0usize);
    for &r in &revealed_rounds {
        let rec = &rounds[r as usize];
        let (x, y) = (rec.alice_input as usize, rec.bob_input as usize);
        if x < 2 && y < 2 {
            counts.record(
                x,
                y,
                OutcomePair {
                    a: Sign::from_bit(rec.alice_bit),
                    b: Sign::from_bit(rec.bob_bit),
                },
            );
        } else if rec.is_key_round() {
            key_rounds += 1;
            key_errors += (rec.alice_bit == rec.bob_bit) as usize;
        }
    }
    Ok(PeOutcome {
        test_value: test.evaluate(&counts).ok(),
        reveals,
        key_consumed,
        revealed_rounds,
        revealed_bits,
        counts,
        key_rounds_revealed: key_rounds,
        key_error_rate: (key_rounds > 0).then(|| key_errors as f64 / key_rounds as f64),
    })
}
