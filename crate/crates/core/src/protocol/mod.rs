//! The daily key-distribution session and its countermeasure variants.
//!
//! One day runs the seven steps: ship states, measure, announce inputs, sift,
//! estimate parameters, reconcile, amplify. Any failing check turns the day
//! into an [`SessionOutcome::Aborted`] carrying a partial transcript; nothing
//! here returns an error for an adversarial event.

pub mod cascade;
pub mod estimation;

use std::f64::consts::SQRT_2;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::attacks::EveLedger;
use crate::devices::{
    source_emit, CovertPayload, DeviceId, DeviceState, HiddenData, KeyRecipe, PaDescriptor,
    SourceDevice, StepOutcome,
};
use crate::pamp::{choose_output_length, toeplitz_hash, HashSeed, MFactor, MinEntropyBudget, OutputLength};
use crate::qsim::{sample_pair, Basis, Chsh, CorrelationModel, TestFunction, U0, U1, V0, V1, V2};

pub use cascade::{error_correct, CascadeParams, EcError, EcTranscript, Reconciliation};
pub use estimation::{one_time_pad, pad_mutual_information, parameter_estimation, PeError, PeOutcome, PeReveals, PresharedKey};

/// Alice's bases by input.
pub const ALICE_BASES: [Basis; 2] = [U1, U0];
/// Bob's bases by input; input 2 is the key basis.
pub const BOB_BASES: [Basis; 3] = [V0, V1, V2];
/// `(alice input, bob input)` of key-generating rounds.
pub const KEY_SETTING: (u8, u8) = (1, 2);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Party {
    Alice,
    Bob,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub alice_input: u8,
    pub bob_input: u8,
    pub alice_bit: bool,
    pub bob_bit: bool,
}

impl RoundRecord {
    pub fn is_key_round(&self) -> bool {
        (self.alice_input, self.bob_input) == KEY_SETTING
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Countermeasures {
    /// Bob announces inputs and test outputs; his measurement device is
    /// isolated from incoming shipments; Alice publishes only the sift mask.
    pub cm1_bob_announces: bool,
    /// Test outputs are one-time-padded with pre-shared key.
    pub cm2_encrypt_pe: bool,
    /// Independent device pairs, one privacy amplification over all of them.
    pub cm3_multi_device: bool,
    /// The privacy amplification function is never made public.
    pub cm4_secret_pa: bool,
}

/// Min-entropy per sifted bit certified by an observed test value.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum RateModel {
    /// `(S - 2) / (2 sqrt 2 - 2)`, clamped to `[0, 1]`.
    #[default]
    ChshLinear,
}

impl RateModel {
    pub fn rate(self, test_value: f64) -> f64 {
        match self {
            RateModel::ChshLinear => ((test_value - 2.0) / (2.0 * SQRT_2 - 2.0)).clamp(0.0, 1.0),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum TestStatistic {
    #[default]
    Chsh,
}

impl TestStatistic {
    pub fn function(self) -> &'static dyn TestFunction {
        match self {
            TestStatistic::Chsh => &Chsh,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ConfigError {
    #[error("invalid parameter {name}: {reason}")]
    Invalid { name: &'static str, reason: String },
}

fn invalid(name: &'static str, reason: impl Into<String>) -> ConfigError {
    ConfigError::Invalid {
        name,
        reason: reason.into(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProtocolConfig {
    /// Rounds per day, `M`.
    pub rounds: usize,
    /// Probability that a round is revealed for testing.
    pub mu: f64,
    pub chsh_threshold: f64,
    /// Error rate the reconciliation is sized for; also the noise an
    /// adversary may introduce before it becomes conspicuous.
    pub noise_tolerance: f64,
    pub m_devices: usize,
    pub countermeasures: Countermeasures,
    pub days: u32,
    /// Bits subtracted after leakage, `l`.
    pub security_margin: u64,
    pub epsilon: f64,
    /// Minimum rounds per input combination before the day may continue.
    pub min_combination_count: usize,
    pub cascade_passes: usize,
    pub verification_bits: usize,
    /// Length of the secret shared before the first day.
    pub preshared_key_bits: usize,
    pub rate_model: RateModel,
    pub test: TestStatistic,
}

impl Default for ProtocolConfig {
    fn default() -> Self {
        ProtocolConfig {
            rounds: 10_000,
            mu: 0.05,
            chsh_threshold: 2.5,
            noise_tolerance: 0.05,
            m_devices: 1,
            countermeasures: Countermeasures::default(),
            days: 1,
            security_margin: 40,
            epsilon: 1e-10,
            min_combination_count: 10,
            cascade_passes: 6,
            verification_bits: 64,
            preshared_key_bits: 0,
            rate_model: RateModel::ChshLinear,
            test: TestStatistic::Chsh,
        }
    }
}

impl ProtocolConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.rounds == 0 {
            return Err(invalid("rounds", "must be positive"));
        }
        if !(self.mu > 0.0 && self.mu < 1.0) {
            return Err(invalid("mu", format!("{} not in (0, 1)", self.mu)));
        }
        if (self.rounds as f64) * self.mu < 30.0 {
            return Err(invalid(
                "mu",
                format!("M * mu = {} leaves too few test rounds", self.rounds as f64 * self.mu),
            ));
        }
        if !(0.0..=4.0).contains(&self.chsh_threshold) {
            return Err(invalid("chsh_threshold", format!("{}", self.chsh_threshold)));
        }
        if !(0.0..0.5).contains(&self.noise_tolerance) {
            return Err(invalid("noise_tolerance", format!("{} not in [0, 0.5)", self.noise_tolerance)));
        }
        if self.m_devices == 0 {
            return Err(invalid("m_devices", "must be positive"));
        }
        if self.countermeasures.cm3_multi_device && self.m_devices < 2 {
            return Err(invalid("m_devices", "multi-device operation needs at least 2 pairs"));
        }
        if self.days == 0 {
            return Err(invalid("days", "must be positive"));
        }
        if !(0.0..1.0).contains(&self.epsilon) {
            return Err(invalid("epsilon", format!("{}", self.epsilon)));
        }
        if self.cascade_passes == 0 {
            return Err(invalid("cascade_passes", "must be positive"));
        }
        let encrypts = self.countermeasures.cm2_encrypt_pe || self.countermeasures.cm3_multi_device;
        if encrypts && self.preshared_key_bits == 0 {
            return Err(invalid("preshared_key_bits", "encrypted estimation needs a pre-shared key"));
        }
        Ok(())
    }

    fn device_pairs(&self) -> usize {
        if self.countermeasures.cm3_multi_device {
            self.m_devices
        } else {
            1
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AbortCause {
    ShipmentRejected,
    DeviceAborted(Party),
    InsufficientCombinations,
    TestUndefined,
    TestFailed,
    InsufficientPresharedKey,
    ErrorCorrectionFailed,
    NoKey,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AbortRecord {
    pub step: u8,
    pub cause: AbortCause,
    /// Index of the device pair in which the abort happened.
    pub pair: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnouncedInputs {
    pub alice: Option<Vec<u8>>,
    pub bob: Option<Vec<u8>>,
}

impl AnnouncedInputs {
    pub fn of(&self, party: Party) -> Option<&[u8]> {
        match party {
            Party::Alice => self.alice.as_deref(),
            Party::Bob => self.bob.as_deref(),
        }
    }
}

/// Public record of steps 1 to 6 for one device pair.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SegmentTranscript {
    pub announced: AnnouncedInputs,
    /// Rounds kept for the key, in order.
    pub sifted_rounds: Vec<u32>,
    pub reveals: Option<PeReveals>,
    pub test_value: Option<f64>,
    pub ec: Option<EcTranscript>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum PaRecord {
    Public { seed: HashSeed, output_len: usize },
    Withheld { output_len: usize },
}

impl PaRecord {
    pub fn output_len(&self) -> usize {
        match self {
            PaRecord::Public { output_len, .. } | PaRecord::Withheld { output_len } => *output_len,
        }
    }

    pub fn descriptor(&self) -> Option<PaDescriptor> {
        match self {
            PaRecord::Public { seed, output_len } => Some(PaDescriptor {
                seed: seed.clone(),
                output_len: *output_len,
            }),
            PaRecord::Withheld { .. } => None,
        }
    }
}

/// Everything published on one day.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionTranscript {
    pub day: u32,
    pub segments: Vec<SegmentTranscript>,
    pub pa: Option<PaRecord>,
    pub abort: Option<AbortRecord>,
}

impl SessionTranscript {
    /// The first (for single-pair days, the only) segment.
    pub fn segment(&self) -> Option<&SegmentTranscript> {
        self.segments.first()
    }

    /// Key recipe for `party`'s device of pair 0, from public data only.
    pub fn key_recipe(&self, party: Party) -> Option<KeyRecipe> {
        let seg = self.segment()?;
        let ec = seg.ec.as_ref()?;
        Some(KeyRecipe {
            day: self.day,
            sifted_rounds: seg.sifted_rounds.clone(),
            negate: party == Party::Bob,
            corrections: if party == Party::Bob {
                ec.corrections.clone()
            } else {
                Vec::new()
            },
            pa: self.pa.as_ref().and_then(PaRecord::descriptor),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SegmentBudget {
    pub sifted_len: usize,
    pub hmin: f64,
    pub leakage_bits: u64,
}

/// One party's private key material for a day.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KeyMaterial {
    pub raw: Vec<bool>,
    pub sifted: Vec<bool>,
    pub corrected: Vec<bool>,
    pub final_key: Vec<bool>,
    pub leakage_bits: u64,
    pub budget: MinEntropyBudget,
    pub output: OutputLength,
    pub segments: Vec<SegmentBudget>,
}

impl KeyMaterial {
    /// Min-entropy left in the corrected string if segment `i` were handed
    /// to Eve in full, after charging the other segments' leakage.
    pub fn budget_after_exposure(&self, i: usize) -> f64 {
        self.segments
            .iter()
            .enumerate()
            .filter(|&(j, _)| j != i)
            .map(|(_, s)| s.hmin - s.leakage_bits as f64)
            .sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum SessionOutcome {
    Key {
        alice: Box<KeyMaterial>,
        bob: Box<KeyMaterial>,
        transcript: SessionTranscript,
    },
    Aborted {
        transcript: SessionTranscript,
    },
}

impl SessionOutcome {
    pub fn transcript(&self) -> &SessionTranscript {
        match self {
            SessionOutcome::Key { transcript, .. } | SessionOutcome::Aborted { transcript } => {
                transcript
            }
        }
    }

    pub fn is_abort(&self) -> bool {
        matches!(self, SessionOutcome::Aborted { .. })
    }

    pub fn abort(&self) -> Option<AbortRecord> {
        self.transcript().abort
    }

    pub fn alice_key(&self) -> Option<&KeyMaterial> {
        match self {
            SessionOutcome::Key { alice, .. } => Some(alice),
            SessionOutcome::Aborted { .. } => None,
        }
    }

    pub fn bob_key(&self) -> Option<&KeyMaterial> {
        match self {
            SessionOutcome::Key { bob, .. } => Some(bob),
            SessionOutcome::Aborted { .. } => None,
        }
    }

    pub fn test_value(&self) -> Option<f64> {
        self.transcript().segment().and_then(|s| s.test_value)
    }
}

/// Alice's and Bob's measurement devices for one pair.
#[derive(Debug, Clone)]
pub struct DevicePair {
    pub alice: DeviceState,
    pub bob: DeviceState,
}

#[derive(Debug, Clone)]
pub struct Lab {
    pub pairs: Vec<DevicePair>,
    pub source: SourceDevice,
    pub preshared: PresharedKey,
}

impl Lab {
    /// Honest devices and source; the pre-shared key is drawn from `rng`.
    pub fn new<R: Rng + ?Sized>(config: &ProtocolConfig, model: CorrelationModel, rng: &mut R) -> Self {
        let isolate_bob = config.countermeasures.cm1_bob_announces || config.countermeasures.cm3_multi_device;
        let pairs = (0..config.device_pairs() as u32)
            .map(|i| DevicePair {
                alice: DeviceState::new(DeviceId(2 * i)),
                bob: DeviceState::new(DeviceId(2 * i + 1)).isolated(isolate_bob),
            })
            .collect();
        Lab {
            pairs,
            source: SourceDevice::honest(model),
            preshared: PresharedKey::random(config.preshared_key_bits, rng),
        }
    }
}

/// What the party receiving the test announcements learned privately.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReceiverView {
    pub pair: usize,
    pub receiver: Party,
    pub revealed_rounds: Vec<u32>,
    pub revealed_bits: Vec<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DayReport {
    pub day: u32,
    pub outcome: SessionOutcome,
    /// Covert payloads readable off the quantum channel.
    pub taps: Vec<CovertPayload>,
    pub receiver_views: Vec<ReceiverView>,
}

/// Eve's hooks into a campaign.
pub trait Adversary {
    /// Between days: firmware the manufacturer installed may act here.
    fn prepare_day(&mut self, _day: u32, _lab: &mut Lab) {}

    /// Data a combined source/measurement device hides in today's shipment.
    fn hidden_data(&mut self, _day: u32, _pair: usize, _bob: &DeviceState) -> Option<HiddenData> {
        None
    }

    /// Payload modulated onto the states shipped to Alice's device.
    fn inject(&mut self, _day: u32, _pair: usize) -> Option<CovertPayload> {
        None
    }

    fn observe_day(&mut self, report: &DayReport);

    fn ledger(&self) -> &EveLedger;
}

struct Segment {
    transcript: SegmentTranscript,
    alice_raw: Vec<bool>,
    bob_raw: Vec<bool>,
    alice_sifted: Vec<bool>,
    bob_sifted: Vec<bool>,
    corrected: Vec<bool>,
    budget: SegmentBudget,
}

struct SegmentAbort {
    record: AbortRecord,
    transcript: SegmentTranscript,
}

struct DayContext<'a> {
    config: &'a ProtocolConfig,
    day: u32,
    announcer: Party,
    encrypt: bool,
    taps: Vec<CovertPayload>,
    views: Vec<ReceiverView>,
}

fn merge_payload(a: Option<CovertPayload>, b: Option<CovertPayload>) -> Option<CovertPayload> {
    match (a, b) {
        (None, x) | (x, None) => x,
        (Some(a), Some(b)) => Some(CovertPayload {
            recipe: b.recipe.or(a.recipe),
            leak_schedule: b.leak_schedule.or(a.leak_schedule),
            hidden: a.hidden.or(b.hidden),
        }),
    }
}

#[allow(clippy::result_large_err)]
fn run_segment<R: Rng + ?Sized>(
    ctx: &mut DayContext<'_>,
    index: usize,
    pair: &mut DevicePair,
    source: &SourceDevice,
    preshared: &mut PresharedKey,
    adversary: &mut dyn Adversary,
    rng: &mut R,
) -> Result<Segment, SegmentAbort> {
    let config = ctx.config;
    let m = config.rounds;
    let mut transcript = SegmentTranscript::default();
    let abort = |step: u8, cause: AbortCause, transcript: SegmentTranscript| SegmentAbort {
        record: AbortRecord {
            step,
            cause,
            pair: index,
        },
        transcript,
    };

    // Step 1: Bob's source ships halves to Alice, then the channel closes.
    if pair.alice.begin_day(ctx.day).is_err() || pair.bob.begin_day(ctx.day).is_err() {
        return Err(abort(1, AbortCause::ShipmentRejected, transcript));
    }
    let hidden = adversary.hidden_data(ctx.day, index, &pair.bob);
    let mut shipment = source_emit(source, m, hidden)
        .or_else(|_| source_emit(source, m, None))
        .expect("emission without hidden data cannot fail");
    if let Some(c) = &shipment.covert {
        ctx.taps.push(c.clone());
    }
    shipment.covert = merge_payload(shipment.covert.take(), adversary.inject(ctx.day, index));
    if pair.alice.ingest_shipment(shipment).is_err() {
        return Err(abort(1, AbortCause::ShipmentRejected, transcript));
    }
    pair.bob.expect_rounds(m);
    pair.alice.close_channel();
    pair.bob.close_channel();

    // Step 2: measure.
    let mut rounds = Vec::with_capacity(m);
    for _ in 0..m {
        let x: u8 = rng.random_range(0..2);
        let y: u8 = rng.random_range(0..3);
        let halves = sample_pair(source.model, ALICE_BASES[x as usize], BOB_BASES[y as usize], rng);
        let a = pair.alice.step(x, halves.a, rng);
        let b = pair.bob.step(y, halves.b, rng);
        match (a, b) {
            (StepOutcome::Output(alice_bit), StepOutcome::Output(bob_bit)) => rounds.push(RoundRecord {
                alice_input: x,
                bob_input: y,
                alice_bit,
                bob_bit,
            }),
            (StepOutcome::Aborted, _) => {
                return Err(abort(2, AbortCause::DeviceAborted(Party::Alice), transcript))
            }
            (_, StepOutcome::Aborted) => {
                return Err(abort(2, AbortCause::DeviceAborted(Party::Bob), transcript))
            }
        }
    }

    // Steps 3 and 4: announce inputs and sift.
    let alice_inputs: Vec<u8> = rounds.iter().map(|r| r.alice_input).collect();
    let bob_inputs: Vec<u8> = rounds.iter().map(|r| r.bob_input).collect();
    transcript.announced = match ctx.announcer {
        Party::Alice => AnnouncedInputs {
            alice: Some(alice_inputs),
            bob: Some(bob_inputs),
        },
        Party::Bob => AnnouncedInputs {
            alice: None,
            bob: Some(bob_inputs),
        },
    };
    transcript.sifted_rounds = (0..m as u32)
        .filter(|&r| rounds[r as usize].is_key_round())
        .collect();
    let mut combos = [[0usize; 3]; 2];
    for r in &rounds {
        combos[r.alice_input as usize][r.bob_input as usize] += 1;
    }
    if combos.iter().flatten().any(|&c| c < config.min_combination_count) {
        return Err(abort(3, AbortCause::InsufficientCombinations, transcript));
    }

    // Step 5: parameter estimation.
    let pe = match parameter_estimation(
        &rounds,
        config.mu,
        ctx.announcer,
        ctx.encrypt,
        preshared,
        config.test.function(),
        rng,
    ) {
        Ok(pe) => pe,
        Err(PeError::InsufficientPresharedKey { .. }) => {
            return Err(abort(5, AbortCause::InsufficientPresharedKey, transcript))
        }
    };
    transcript.reveals = Some(pe.reveals.clone());
    transcript.test_value = pe.test_value;
    ctx.views.push(ReceiverView {
        pair: index,
        receiver: match ctx.announcer {
            Party::Alice => Party::Bob,
            Party::Bob => Party::Alice,
        },
        revealed_rounds: pe.revealed_rounds.clone(),
        revealed_bits: pe.revealed_bits.clone(),
    });
    let Some(test_value) = pe.test_value else {
        return Err(abort(5, AbortCause::TestUndefined, transcript));
    };
    if test_value < config.chsh_threshold {
        return Err(abort(5, AbortCause::TestFailed, transcript));
    }

    // Step 6: reconcile Bob's (negated) key bits to Alice's.
    let alice_sifted: Vec<bool> = transcript
        .sifted_rounds
        .iter()
        .map(|&r| rounds[r as usize].alice_bit)
        .collect();
    let bob_sifted: Vec<bool> = transcript
        .sifted_rounds
        .iter()
        .map(|&r| !rounds[r as usize].bob_bit)
        .collect();
    let params = CascadeParams {
        expected_error_rate: config.noise_tolerance.max(pe.key_error_rate.unwrap_or(0.0)),
        passes: config.cascade_passes,
        verification_bits: config.verification_bits,
    };
    let rec = match error_correct(&alice_sifted, &bob_sifted, &params, rng) {
        Ok(rec) => rec,
        Err(_) => return Err(abort(6, AbortCause::ErrorCorrectionFailed, transcript)),
    };
    let plaintext_key_reveals = if ctx.encrypt { 0 } else { pe.key_rounds_revealed };
    let budget = SegmentBudget {
        sifted_len: alice_sifted.len(),
        hmin: config.rate_model.rate(test_value) * alice_sifted.len() as f64,
        leakage_bits: (rec.leakage() + plaintext_key_reveals) as u64,
    };
    transcript.ec = Some(rec.transcript);
    Ok(Segment {
        transcript,
        alice_raw: rounds.iter().map(|r| r.alice_bit).collect(),
        bob_raw: rounds.iter().map(|r| r.bob_bit).collect(),
        alice_sifted,
        bob_sifted,
        corrected: rec.corrected,
        budget,
    })
}

fn aborted(day: u32, segments: Vec<SegmentTranscript>, record: AbortRecord) -> SessionOutcome {
    SessionOutcome::Aborted {
        transcript: SessionTranscript {
            day,
            segments,
            pa: None,
            abort: Some(record),
        },
    }
}

/// Step 7 over the concatenation of all segments.
fn amplify<R: Rng + ?Sized>(
    config: &ProtocolConfig,
    day: u32,
    segments: Vec<Segment>,
    m_factor: MFactor,
    rng: &mut R,
) -> SessionOutcome {
    let hmin: f64 = segments.iter().map(|s| s.budget.hmin).sum();
    let leakage: u64 = segments.iter().map(|s| s.budget.leakage_bits).sum();
    let budgets: Vec<SegmentBudget> = segments.iter().map(|s| s.budget).collect();
    let transcripts: Vec<SegmentTranscript> = segments.iter().map(|s| s.transcript.clone()).collect();
    let budget = match MinEntropyBudget::new(hmin, config.epsilon, leakage, config.security_margin, m_factor) {
        Ok(b) => b,
        Err(_) => {
            let record = AbortRecord { step: 7, cause: AbortCause::NoKey, pair: 0 };
            return aborted(day, transcripts, record);
        }
    };
    let mut output = choose_output_length(&budget);
    if segments.len() > 1 {
        // No single exposed segment may leave less than t + l behind.
        let worst = (0..budgets.len())
            .map(|i| {
                budgets
                    .iter()
                    .enumerate()
                    .filter(|&(j, _)| j != i)
                    .map(|(_, s)| s.hmin - s.leakage_bits as f64)
                    .sum::<f64>()
            })
            .fold(f64::INFINITY, f64::min);
        let cap = (worst - config.security_margin as f64).floor().max(0.0) as usize;
        output.t = output.t.min(cap);
    }
    if output.t == 0 {
        let record = AbortRecord { step: 7, cause: AbortCause::NoKey, pair: 0 };
        return aborted(day, transcripts, record);
    }
    let concat = |f: fn(&Segment) -> &Vec<bool>| -> Vec<bool> {
        segments.iter().flat_map(|s| f(s).iter().copied()).collect()
    };
    let alice_corrected = concat(|s| &s.alice_sifted);
    let bob_corrected = concat(|s| &s.corrected);
    let seed = HashSeed::random(alice_corrected.len() + output.t - 1, rng);
    let alice_final = toeplitz_hash(&alice_corrected, &seed, output.t).expect("seed sized for key");
    let bob_final = toeplitz_hash(&bob_corrected, &seed, output.t).expect("seed sized for key");
    let pa = if config.countermeasures.cm4_secret_pa {
        PaRecord::Withheld { output_len: output.t }
    } else {
        PaRecord::Public { seed, output_len: output.t }
    };
    let material = |raw: Vec<bool>, sifted: Vec<bool>, corrected: Vec<bool>, final_key: Vec<bool>| {
        Box::new(KeyMaterial {
            raw,
            sifted,
            corrected,
            final_key,
            leakage_bits: leakage,
            budget: budget.clone(),
            output,
            segments: budgets.clone(),
        })
    };
    let alice = material(
        concat(|s| &s.alice_raw),
        concat(|s| &s.alice_sifted),
        alice_corrected,
        alice_final,
    );
    let bob = material(concat(|s| &s.bob_raw), concat(|s| &s.bob_sifted), bob_corrected, bob_final);
    SessionOutcome::Key {
        alice,
        bob,
        transcript: SessionTranscript {
            day,
            segments: transcripts,
            pa: Some(pa),
            abort: None,
        },
    }
}

/// One day with a single device pair.
pub fn run_day<R: Rng + ?Sized>(
    config: &ProtocolConfig,
    day: u32,
    lab: &mut Lab,
    adversary: &mut dyn Adversary,
    rng: &mut R,
) -> DayReport {
    let cm = config.countermeasures;
    let mut ctx = DayContext {
        config,
        day,
        announcer: if cm.cm1_bob_announces { Party::Bob } else { Party::Alice },
        encrypt: cm.cm2_encrypt_pe,
        taps: Vec::new(),
        views: Vec::new(),
    };
    let Lab {
        pairs,
        source,
        preshared,
    } = lab;
    let outcome = match run_segment(&mut ctx, 0, &mut pairs[0], source, preshared, adversary, rng) {
        Ok(seg) => amplify(config, day, vec![seg], MFactor::ONE, rng),
        Err(a) => aborted(day, vec![a.transcript], a.record),
    };
    DayReport {
        day,
        outcome,
        taps: ctx.taps,
        receiver_views: ctx.views,
    }
}

/// One day over every device pair in `lab`, with Bob announcing, encrypted
/// estimation and a single amplification scaled by `(m - 1) / m`.
pub fn run_day_cm3<R: Rng + ?Sized>(
    config: &ProtocolConfig,
    day: u32,
    lab: &mut Lab,
    adversary: &mut dyn Adversary,
    rng: &mut R,
) -> DayReport {
    let mut ctx = DayContext {
        config,
        day,
        announcer: Party::Bob,
        encrypt: true,
        taps: Vec::new(),
        views: Vec::new(),
    };
    let Lab {
        pairs,
        source,
        preshared,
    } = lab;
    let m = pairs.len() as u32;
    let mut segments = Vec::with_capacity(pairs.len());
    let mut outcome = None;
    for (i, pair) in pairs.iter_mut().enumerate() {
        match run_segment(&mut ctx, i, pair, source, preshared, adversary, rng) {
            Ok(seg) => segments.push(seg),
            Err(a) => {
                let mut done: Vec<SegmentTranscript> = segments.iter().map(|s| s.transcript.clone()).collect();
                done.push(a.transcript);
                outcome = Some(aborted(day, done, a.record));
                break;
            }
        }
    }
    let outcome = outcome.unwrap_or_else(|| {
        let factor = if m >= 2 { MFactor::multi_device(m) } else { MFactor::ONE };
        amplify(config, day, segments, factor, rng)
    });
    DayReport {
        day,
        outcome,
        taps: ctx.taps,
        receiver_views: ctx.views,
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CampaignResult {
    pub reports: Vec<DayReport>,
    pub ledger: EveLedger,
}

/// Run `config.days` days. Aborted days do not stop the campaign.
pub fn run_campaign<R: Rng + ?Sized>(
    config: &ProtocolConfig,
    lab: &mut Lab,
    adversary: &mut dyn Adversary,
    rng: &mut R,
) -> CampaignResult {
    let mut reports = Vec::with_capacity(config.days as usize);
    for day in 1..=config.days {
        adversary.prepare_day(day, lab);
        let report = if config.countermeasures.cm3_multi_device {
            run_day_cm3(config, day, lab, adversary, rng)
        } else {
            run_day(config, day, lab, adversary, rng)
        };
        adversary.observe_day(&report);
        reports.push(report);
    }
    CampaignResult {
        reports,
        ledger: adversary.ledger().clone(),
    }
}
