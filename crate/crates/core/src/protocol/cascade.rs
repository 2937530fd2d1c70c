//! Cascade reconciliation followed by a hash check.
//!
//! Bob's string is corrected towards Alice's. Every parity Alice discloses is
//! counted; positions Bob flips are recorded in the public transcript (they
//! follow from the disclosed parities anyway).

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::pamp::{toeplitz_hash, HashSeed};
use crate::seed::rng_from_seed;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EcError {
    #[error("strings differ in length ({alice} vs {bob})")]
    LengthMismatch { alice: usize, bob: usize },
    #[error("verification hash mismatch after reconciliation")]
    VerificationFailed,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CascadeParams {
    /// Error rate used to size the first-pass blocks.
    pub expected_error_rate: f64,
    pub passes: usize,
    /// Length of the final verification hash (capped at the string length).
    pub verification_bits: usize,
}

impl Default for CascadeParams {
    fn default() -> Self {
        CascadeParams {
            expected_error_rate: 0.05,
            passes: 6,
            verification_bits: 64,
        }
    }
}

impl CascadeParams {
    /// First-pass block size `max(4, ceil(0.73 / q))`, capped at `n`.
    pub fn first_block(&self, n: usize) -> usize {
        let k = if self.expected_error_rate > 0.0 {
            (0.73 / self.expected_error_rate).ceil() as usize
        } else {
            n
        };
        k.max(4).min(n.max(1))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EcTranscript {
    pub block_sizes: Vec<usize>,
    /// Seed of the public shuffles used by passes after the first.
    pub permutation_seed: u64,
    /// Positions flipped in Bob's string, in the order found.
    pub corrections: Vec<usize>,
    pub parities_disclosed: usize,
    pub verification_seed: HashSeed,
    pub verification_bits: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Reconciliation {
    pub corrected: Vec<bool>,
    pub transcript: EcTranscript,
}

impl Reconciliation {
    /// Bits disclosed about Alice's string.
    pub fn leakage(&self) -> usize {
        self.transcript.parities_disclosed + self.transcript.verification_bits
    }
}

struct Pass {
    block: usize,
    /// `order[k]` is the original index at permuted position `k`.
    order: Vec<usize>,
    /// `pos[i]` is the permuted position of original index `i`.
    pos: Vec<usize>,
}

impl Pass {
    fn block_of(&self, i: usize) -> usize {
        self.pos[i] / self.block
    }

    fn range(&self, b: usize, n: usize) -> (usize, usize) {
        (b * self.block, ((b + 1) * self.block).min(n))
    }

    fn parity(&self, s: &[bool], lo: usize, hi: usize) -> bool {
        self.order[lo..hi].iter().fold(false, |acc, &i| acc ^ s[i])
    }
}

/// Reconcile `bob` to `alice`.
pub fn error_correct<R: Rng + ?Sized>(
    alice: &[bool],
    bob: &[bool],
    params: &CascadeParams,
    rng: &mut R,
) -> Result<Reconciliation, EcError> {
    if alice.len() != bob.len() {
        return Err(EcError::LengthMismatch {
            alice: alice.len(),
            bob: bob.len(),
        });
    }
    let n = alice.len();
    let permutation_seed: u64 = rng.random();
    let mut perm_rng = rng_from_seed(permutation_seed);
    let mut bob = bob.to_vec();
    let mut passes: Vec<Pass> = Vec::new();
    let mut corrections = Vec::new();
    let mut disclosed = 0usize;

    if n > 0 {
        let mut block = params.first_block(n);
        for p in 0..params.passes {
            let mut order: Vec<usize> = (0..n).collect();
            if p > 0 {
                order.shuffle(&mut perm_rng);
            }
            let mut pos = vec![0; n];
            for (k, &i) in order.iter().enumerate() {
                pos[i] = k;
            }
            passes.push(Pass { block, order, pos });
            let pass = &passes[p];
            let blocks = n.div_ceil(block);
            disclosed += blocks;
            let mut queue: Vec<(usize, usize)> = (0..blocks)
                .rev()
                .filter(|&b| {
                    let (lo, hi) = pass.range(b, n);
                    pass.parity(alice, lo, hi) != pass.parity(&bob, lo, hi)
                })
                .map(|b| (p, b))
                .collect();
            while let Some((q, b)) = queue.pop() {
                let pass = &passes[q];
                let (mut lo, mut hi) = pass.range(b, n);
                if pass.parity(alice, lo, hi) == pass.parity(&bob, lo, hi) {
                    continue;
                }
                while hi - lo > 1 {
                    let mid = lo + (hi - lo) / 2;
                    disclosed += 1;
                    if pass.parity(alice, lo, mid) != pass.parity(&bob, lo, mid) {
                        hi = mid;
                    } else {
                        lo = mid;
                    }
                }
                let idx = pass.order[lo];
                bob[idx] ^= true;
                corrections.push(idx);
                for (r, other) in passes.iter().enumerate() {
                    if r != q {
                        queue.push((r, other.block_of(idx)));
                    }
                }
            }
            block = (block * 2).min(n);
        }
    }

    let verification_bits = params.verification_bits.min(n);
    let verification_seed = HashSeed::random((n + verification_bits).saturating_sub(1), rng);
    let transcript = EcTranscript {
        block_sizes: passes.iter().map(|p| p.block).collect(),
        permutation_seed,
        corrections,
        parities_disclosed: disclosed,
        verification_seed,
        verification_bits,
    };
    if n > 0 {
        let ha = toeplitz_hash(alice, &transcript.verification_seed, verification_bits)
            .expect("seed sized for input");
        let hb = toeplitz_hash(&bob, &transcript.verification_seed, verification_bits)
            .expect("seed sized for input");
        if ha != hb {
            return Err(EcError::VerificationFailed);
        }
    }
    Ok(Reconciliation {
        corrected: bob,
        transcript,
    })
}
