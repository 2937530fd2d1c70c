//! Memory attacks on device-independent randomness expansion.
//!
//! A single user runs two devices for `n` rounds per session, every round
//! counting towards the test, and extracts an output whose length depends on
//! the observed test value. Devices holding the raw output of session 1 can
//! leak it on later sessions, either by modulating their noise (and hence the
//! output length) or by choosing when to abort. Fixing the output length in
//! advance (the Procrustean rule) closes the length channel.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::devices::{DeviceId, DevicePolicy, DeviceState, NoiseModulation, StepOutcome};
use crate::pamp::{choose_output_length, MFactor, MinEntropyBudget};
use crate::protocol::{Party, RateModel, ALICE_BASES, BOB_BASES};
use crate::qsim::{chsh_value, sample_pair, CorrelationCounts, CorrelationModel, OutcomePair, Sign};
use crate::seed::{derive_seed, rng_from_seed};

use super::{abort_encode, EveLedger, EveProgram, LengthObservation};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum QreScenario {
    LengthLeak,
    Procrustean,
    Abort { bit_len: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QreParams {
    pub scenario: QreScenario,
    pub rounds_per_session: usize,
    pub raw_bits: usize,
    pub visibility: f64,
    /// Probability the leaking device replaces its output by noise when
    /// signalling a 1.
    pub degrade_probability: f64,
    pub threshold: f64,
    pub security_margin: u64,
}

impl Default for QreParams {
    fn default() -> Self {
        QreParams {
            scenario: QreScenario::LengthLeak,
            rounds_per_session: 10_000,
            raw_bits: 64,
            visibility: 1.0,
            degrade_probability: 0.06,
            threshold: 2.5,
            security_margin: 40,
        }
    }
}

impl QreParams {
    /// Output length for an observed test value under the variable-length rule.
    pub fn variable_length(&self, test_value: f64) -> usize {
        let h = RateModel::ChshLinear.rate(test_value) * self.rounds_per_session as f64;
        let budget = MinEntropyBudget::new(h, 0.0, 0, self.security_margin, MFactor::ONE)
            .expect("nonnegative budget");
        choose_output_length(&budget).t
    }

    /// Fixed length under the Procrustean rule: what the threshold certifies.
    pub fn fixed_length(&self) -> usize {
        self.variable_length(self.threshold)
    }

    /// Expected test value with and without degradation.
    pub fn expected_test_values(&self) -> (f64, f64) {
        let s = 2.0 * std::f64::consts::SQRT_2 * self.visibility;
        (s, s * (1.0 - self.degrade_probability))
    }

    /// Length Eve uses to tell a 1 (shorter) from a 0.
    pub fn midpoint(&self) -> f64 {
        let (hi, lo) = self.expected_test_values();
        (self.variable_length(hi) + self.variable_length(lo)) as f64 / 2.0
    }

    pub fn sessions(&self) -> u32 {
        match self.scenario {
            QreScenario::LengthLeak | QreScenario::Procrustean => 1 + self.raw_bits as u32,
            QreScenario::Abort { bit_len } => (1u32 << bit_len) + 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Session {
    pub test_value: Option<f64>,
    pub length: usize,
    pub aborted: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QreTrial {
    pub sessions: Vec<Session>,
    /// Leaked bits Eve got right.
    pub correct_bits: usize,
    /// Bits the code was meant to carry.
    pub code_bits: usize,
    pub credited_bits: usize,
    pub abort_session: Option<u32>,
    /// Distinct output lengths among completed sessions after the first.
    pub distinct_lengths: usize,
    /// Bits the firmware set out to leak.
    pub encoded: Vec<bool>,
}

fn run_session<R: Rng + ?Sized>(
    p: &QreParams,
    day: u32,
    a: &mut DeviceState,
    b: &mut DeviceState,
    model: CorrelationModel,
    rng: &mut R,
) -> Session {
    let aborted = Session {
        test_value: None,
        length: 0,
        aborted: true,
    };
    if a.begin_day(day).is_err() || b.begin_day(day).is_err() {
        return aborted;
    }
    let mut counts = CorrelationCounts::new();
    for _ in 0..p.rounds_per_session {
        let x = rng.random_range(0..2u8);
        let y = rng.random_range(0..2u8);
        let halves = sample_pair(model, ALICE_BASES[x as usize], BOB_BASES[y as usize], rng);
        let (StepOutcome::Output(oa), StepOutcome::Output(ob)) =
            (a.step(x, halves.a, rng), b.step(y, halves.b, rng))
        else {
            return aborted;
        };
        counts.record(
            x as usize,
            y as usize,
            OutcomePair {
                a: Sign::from_bit(oa),
                b: Sign::from_bit(ob),
            },
        );
    }
    let Ok(s) = chsh_value(&counts) else {
        return aborted;
    };
    if s < p.threshold {
        return Session {
            test_value: Some(s),
            ..aborted
        };
    }
    let length = match p.scenario {
        QreScenario::Procrustean => p.fixed_length(),
        _ => p.variable_length(s),
    };
    Session {
        test_value: Some(s),
        length,
        aborted: false,
    }
}

pub fn run_qre_trial(p: &QreParams, seed: u64) -> QreTrial {
    let mut rng = rng_from_seed(seed);
    let model = CorrelationModel::new(p.visibility).expect("visibility validated");
    let mut a = DeviceState::new(DeviceId(0));
    let mut b = DeviceState::new(DeviceId(1));
    let mut ledger = EveLedger::default();
    let mut sessions = Vec::new();
    let (code_bits, code_rounds): (usize, Vec<u32>) = match p.scenario {
        QreScenario::Abort { bit_len } => (bit_len, (0..bit_len as u32).collect()),
        _ => (p.raw_bits, (0..p.raw_bits as u32).collect()),
    };
    let total = p.sessions();
    let mut encoded = Vec::new();
    for day in 1..=total {
        if day == 2 {
            // Firmware arms itself from what device A remembers of session 1.
            let bits = a.memory_outputs(1, &code_rounds).unwrap_or_default();
            encoded = bits.clone();
            match p.scenario {
                QreScenario::LengthLeak | QreScenario::Procrustean => {
                    a.set_policy(DevicePolicy::NoiseModulating(NoiseModulation {
                        start_day: 2,
                        bits,
                        degrade_probability: p.degrade_probability,
                    }));
                    ledger.programs.push(EveProgram::NoiseCode {
                        party: Party::Alice,
                        source_day: 1,
                        rounds: code_rounds.clone(),
                        start_day: 2,
                        midpoint: p.midpoint(),
                    });
                }
                QreScenario::Abort { bit_len } => {
                    if let Ok(d) = abort_encode(&bits, total) {
                        a.set_policy(DevicePolicy::AbortOnDay(d));
                        ledger.programs.push(EveProgram::AbortArmed {
                            party: Party::Alice,
                            source_day: 1,
                            rounds: code_rounds.clone(),
                            bit_len,
                        });
                    }
                }
            }
        }
        let s = run_session(p, day, &mut a, &mut b, model, &mut rng);
        sessions.push(s);
        if day >= 2 {
            ledger.length_observations.push(LengthObservation {
                day,
                length: s.length,
                aborted: s.aborted,
            });
        }
        // Device refusals are public; other sessions leave only a length.
        let refused = s.aborted && s.test_value.is_none();
        ledger.transcripts.push(crate::protocol::SessionTranscript {
            day,
            segments: Vec::new(),
            pa: None,
            abort: refused.then_some(crate::protocol::AbortRecord {
                step: 2,
                cause: crate::protocol::AbortCause::DeviceAborted(Party::Alice),
                pair: 0,
            }),
        });
        if refused && matches!(p.scenario, QreScenario::Abort { .. }) {
            break;
        }
    }
    ledger.refresh();
    let correct = ledger
        .inferred_raw_bits
        .iter()
        .filter(|(r, c)| a.memory_outputs(r.day, &[r.round]) == Some(vec![c.bit]))
        .count();
    let mut lengths: Vec<usize> = sessions
        .iter()
        .skip(1)
        .filter(|s| !s.aborted)
        .map(|s| s.length)
        .collect();
    lengths.sort_unstable();
    lengths.dedup();
    QreTrial {
        sessions,
        correct_bits: correct,
        code_bits,
        credited_bits: ledger.inferred_raw_bits.len(),
        abort_session: ledger.abort_day,
        distinct_lengths: lengths.len(),
        encoded,
    }
}

pub fn run_qre(p: &QreParams, trials: usize, seed: u64) -> Vec<QreTrial> {
    (0..trials as u64)
        .into_par_iter()
        .map(|i| run_qre_trial(p, derive_seed(seed, i)))
        .collect()
}

/// Plug-in mutual information, in bits, between two equally long symbol
/// sequences.
pub fn empirical_mutual_information(xs: &[usize], ys: &[usize]) -> f64 {
    use std::collections::BTreeMap;
    let n = xs.len() as f64;
    if xs.is_empty() {
        return 0.0;
    }
    let mut joint: BTreeMap<(usize, usize), f64> = BTreeMap::new();
    let mut px: BTreeMap<usize, f64> = BTreeMap::new();
    let mut py: BTreeMap<usize, f64> = BTreeMap::new();
    for (&x, &y) in xs.iter().zip(ys) {
        *joint.entry((x, y)).or_default() += 1.0;
        *px.entry(x).or_default() += 1.0;
        *py.entry(y).or_default() += 1.0;
    }
    joint
        .iter()
        .map(|(&(x, y), &c)| c / n * ((c * n) / (px[&x] * py[&y])).log2())
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(scenario: QreScenario) -> QreParams {
        QreParams {
            scenario,
            rounds_per_session: 4000,
            raw_bits: 8,
            degrade_probability: 0.08,
            ..QreParams::default()
        }
    }

    #[test]
    fn lengths_follow_rule() {
        let p = QreParams::default();
        assert_eq!(p.variable_length(2.0 * std::f64::consts::SQRT_2), 10_000 - 40);
        assert!(p.fixed_length() < p.variable_length(2.7));
        assert!(p.midpoint() > p.fixed_length() as f64);
    }

    #[test]
    fn length_leak_reconstructs() {
        let t = run_qre_trial(&small(QreScenario::LengthLeak), 3);
        assert_eq!(t.credited_bits, 8);
        assert!(t.correct_bits >= 7, "{t:?}");
    }

    #[test]
    fn procrustean_lengths_constant() {
        let t = run_qre_trial(&small(QreScenario::Procrustean), 3);
        assert!(t.distinct_lengths <= 1, "{t:?}");
    }

    #[test]
    fn abort_code_decodes_exactly() {
        let t = run_qre_trial(&small(QreScenario::Abort { bit_len: 2 }), 4);
        assert_eq!(t.credited_bits, 2);
        assert_eq!(t.correct_bits, 2);
    }

    #[test]
    fn mutual_information_extremes() {
        assert_eq!(empirical_mutual_information(&[1, 1, 1, 1], &[0, 1, 0, 1]), 0.0);
        assert!((empirical_mutual_information(&[0, 1, 0, 1], &[0, 1, 0, 1]) - 1.0).abs() < 1e-12);
    }
}
