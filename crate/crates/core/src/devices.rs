//! Measurement and source devices with persistent memory.
//!
//! A [`DeviceState`] remembers every input and output it has ever produced.
//! Honest devices ignore that memory; adversarial policies may use it, but
//! only through the bits they output (or by refusing to output). The protocol
//! drives devices through [`DeviceState::step`] and the shipment interface and
//! never reads their memory.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::pamp::{toeplitz_hash, HashSeed};
use crate::qsim::{CorrelationModel, Sign};

pub type Input = u8;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DeviceError {
    #[error("device {0} is isolated from incoming shipments")]
    ShipmentRejected(DeviceId),
    #[error("quantum channel to device {0} is closed for today")]
    ChannelClosed(DeviceId),
    #[error("isolated source cannot carry hidden data")]
    IsolationViolation,
    #[error("device {id} asked to go back from day {current} to day {requested}")]
    DayRegression {
        id: DeviceId,
        current: u32,
        requested: u32,
    },
}

#[derive(
    Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize,
)]
pub struct DeviceId(pub u32);

impl std::fmt::Display for DeviceId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "#{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct HistoryEntry {
    pub day: u32,
    pub round: u32,
    pub input: Input,
    pub output: bool,
}

/// The `occurrence`-th use (1-based) of `input` on a given day.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize,
)]
pub struct Slot {
    pub input: Input,
    pub occurrence: u32,
}

/// Which stored bit a scheduled slot leaks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LeakTarget {
    /// Bit `index` of the final key generated on `day`.
    FinalKeyBit { day: u32, index: usize },
    /// Bit `index` of the device's sifted (pre-correction) string on `day`.
    SiftedRawBit { day: u32, index: usize },
    /// The device's own output in `round` of `day`.
    RawRound { day: u32, round: u32 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LeakEntry {
    pub slot: Slot,
    pub target: LeakTarget,
}

/// Slot-to-target map active on a single day.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LeakSchedule {
    pub day: u32,
    entries: Vec<LeakEntry>,
}

impl LeakSchedule {
    /// Entries with duplicate slots keep the first target.
    pub fn new(day: u32, mut entries: Vec<LeakEntry>) -> Self {
        entries.sort_by_key(|e| e.slot);
        entries.dedup_by_key(|e| e.slot);
        LeakSchedule { day, entries }
    }

    pub fn lookup(&self, slot: Slot) -> Option<LeakTarget> {
        self.entries
            .binary_search_by_key(&slot, |e| e.slot)
            .ok()
            .map(|i| self.entries[i].target)
    }

    pub fn entries(&self) -> &[LeakEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Public description of how a day's final key was made, from one device's
/// point of view: which rounds were sifted, whether the device's outputs are
/// negated to match the reference side, which positions error correction
/// flipped, and the hash.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KeyRecipe {
    pub day: u32,
    pub sifted_rounds: Vec<u32>,
    pub negate: bool,
    pub corrections: Vec<usize>,
    pub pa: Option<PaDescriptor>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PaDescriptor {
    pub seed: HashSeed,
    pub output_len: usize,
}

/// Raw outputs a combined source/measurement device smuggles out.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HiddenData {
    pub day: u32,
    pub rounds: Vec<u32>,
    pub bits: Vec<bool>,
}

/// Information modulated onto shipped states, invisible to the protocol.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CovertPayload {
    pub recipe: Option<KeyRecipe>,
    pub leak_schedule: Option<LeakSchedule>,
    pub hidden: Option<HiddenData>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateShipment {
    pub count: usize,
    pub covert: Option<CovertPayload>,
    pub source_honest: bool,
}

/// Entangled-pair source.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SourceDevice {
    pub model: CorrelationModel,
    /// Separated from every measurement device, so it cannot read their memory.
    pub isolated: bool,
}

impl SourceDevice {
    pub fn honest(model: CorrelationModel) -> Self {
        SourceDevice {
            model,
            isolated: true,
        }
    }
}

/// Emit `count` pair halves. A combined (non-isolated) source may hide data
/// in the shipment; an isolated one cannot.
pub fn source_emit(
    source: &SourceDevice,
    count: usize,
    hidden: Option<HiddenData>,
) -> Result<StateShipment, DeviceError> {
    match hidden {
        Some(_) if source.isolated => Err(DeviceError::IsolationViolation),
        Some(h) => Ok(StateShipment {
            count,
            covert: Some(CovertPayload {
                hidden: Some(h),
                ..CovertPayload::default()
            }),
            source_honest: false,
        }),
        None => Ok(StateShipment {
            count,
            covert: None,
            source_honest: true,
        }),
    }
}

/// Output rule when the leak bit for a day is 1: replace the honest output by
/// a fresh random bit with probability `degrade_probability`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseModulation {
    pub start_day: u32,
    pub bits: Vec<bool>,
    pub degrade_probability: f64,
}

impl NoiseModulation {
    fn active_bit(&self, day: u32) -> bool {
        day >= self.start_day
            && self
                .bits
                .get((day - self.start_day) as usize)
                .copied()
                .unwrap_or(false)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum DevicePolicy {
    Honest,
    LeakSchedule(LeakSchedule),
    /// Refuse to produce any output on this day.
    AbortOnDay(u32),
    NoiseModulating(NoiseModulation),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum StepOutcome {
    Output(bool),
    Aborted,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DeviceState {
    id: DeviceId,
    day: u32,
    round: u32,
    expected_rounds: usize,
    occurrences: [u32; 4],
    history: Vec<HistoryEntry>,
    /// `(day, index of first history entry)` for each day served.
    day_starts: Vec<(u32, usize)>,
    covert: Option<CovertPayload>,
    derived_key: Option<(u32, Vec<bool>)>,
    policy: DevicePolicy,
    isolated_from_incoming: bool,
    channel_closed: bool,
    disposed: bool,
}

impl DeviceState {
    pub fn new(id: DeviceId) -> Self {
        DeviceState {
            id,
            day: 0,
            round: 0,
            expected_rounds: 0,
            occurrences: [0; 4],
            history: Vec::new(),
            day_starts: Vec::new(),
            covert: None,
            derived_key: None,
            policy: DevicePolicy::Honest,
            isolated_from_incoming: false,
            channel_closed: false,
            disposed: false,
        }
    }

    pub fn with_policy(mut self, policy: DevicePolicy) -> Self {
        self.policy = policy;
        self
    }

    pub fn isolated(mut self, isolated: bool) -> Self {
        self.isolated_from_incoming = isolated;
        self
    }

    pub fn id(&self) -> DeviceId {
        self.id
    }

    pub fn day(&self) -> u32 {
        self.day
    }

    pub fn policy(&self) -> &DevicePolicy {
        &self.policy
    }

    pub fn is_isolated(&self) -> bool {
        self.isolated_from_incoming
    }

    pub fn is_disposed(&self) -> bool {
        self.disposed
    }

    pub fn expected_rounds(&self) -> usize {
        self.expected_rounds
    }

    /// Reprogram the device. Models firmware installed by the manufacturer.
    pub fn set_policy(&mut self, policy: DevicePolicy) {
        self.policy = policy;
    }

    /// Destroy the device; it produces no further outputs.
    pub fn dispose(&mut self) {
        self.disposed = true;
    }

    /// Start serving `day`. Days never go backwards.
    pub fn begin_day(&mut self, day: u32) -> Result<(), DeviceError> {
        if day < self.day {
            return Err(DeviceError::DayRegression {
                id: self.id,
                current: self.day,
                requested: day,
            });
        }
        self.day = day;
        self.round = 0;
        self.occurrences = [0; 4];
        self.channel_closed = false;
        Ok(())
    }

    pub fn close_channel(&mut self) {
        self.channel_closed = true;
    }

    /// States generated inside the device's own laboratory.
    pub fn expect_rounds(&mut self, count: usize) {
        self.expected_rounds += count;
    }

    /// Receive states over the quantum channel.
    pub fn ingest_shipment(&mut self, shipment: StateShipment) -> Result<(), DeviceError> {
        if self.isolated_from_incoming {
            return Err(DeviceError::ShipmentRejected(self.id));
        }
        if self.channel_closed {
            return Err(DeviceError::ChannelClosed(self.id));
        }
        self.expected_rounds += shipment.count;
        if let Some(payload) = shipment.covert {
            self.install(payload);
        }
        Ok(())
    }

    fn install(&mut self, payload: CovertPayload) {
        if let Some(recipe) = &payload.recipe {
            if let Some(key) = self.recompute_key(recipe) {
                self.derived_key = Some((recipe.day, key));
            }
        }
        if let Some(schedule) = &payload.leak_schedule {
            self.policy = DevicePolicy::LeakSchedule(schedule.clone());
        }
        self.covert = Some(payload);
    }

    /// Rebuild a day's key (or sifted string, if `recipe.pa` is `None`) from
    /// memory. `None` if the device did not serve every listed round.
    pub fn recompute_key(&self, recipe: &KeyRecipe) -> Option<Vec<bool>> {
        let mut s = self.sifted_from_memory(recipe)?;
        for &c in &recipe.corrections {
            *s.get_mut(c)? ^= true;
        }
        match &recipe.pa {
            Some(pa) => toeplitz_hash(&s, &pa.seed, pa.output_len).ok(),
            None => Some(s),
        }
    }

    fn sifted_from_memory(&self, recipe: &KeyRecipe) -> Option<Vec<bool>> {
        recipe
            .sifted_rounds
            .iter()
            .map(|&r| self.stored_output(recipe.day, r).map(|b| b ^ recipe.negate))
            .collect()
    }

    fn stored_output(&self, day: u32, round: u32) -> Option<bool> {
        let i = self.day_starts.iter().position(|&(d, _)| d == day)?;
        let start = self.day_starts[i].1;
        let entry = self.history.get(start + round as usize)?;
        (entry.day == day && entry.round == round).then_some(entry.output)
    }

    /// Memory read used by adversarial firmware; the protocol never calls it.
    pub fn memory_outputs(&self, day: u32, rounds: &[u32]) -> Option<Vec<bool>> {
        rounds.iter().map(|&r| self.stored_output(day, r)).collect()
    }

    /// Rounds of `day` in which the device received `input`, in order.
    pub fn memory_rounds_with_input(&self, day: u32, input: Input) -> Vec<u32> {
        self.history
            .iter()
            .filter(|e| e.day == day && e.input == input)
            .map(|e| e.round)
            .collect()
    }

    /// Full input/output record, for audits and tests.
    pub fn audit_history(&self) -> &[HistoryEntry] {
        &self.history
    }

    fn resolve(&self, target: LeakTarget) -> Option<bool> {
        match target {
            LeakTarget::FinalKeyBit { day, index } => {
                let (d, key) = self.derived_key.as_ref()?;
                let recipe = self.covert.as_ref()?.recipe.as_ref()?;
                recipe.pa.as_ref()?;
                (*d == day).then(|| key.get(index).copied()).flatten()
            }
            LeakTarget::SiftedRawBit { day, index } => {
                let recipe = self.covert.as_ref()?.recipe.as_ref()?;
                if recipe.day != day {
                    return None;
                }
                let &round = recipe.sifted_rounds.get(index)?;
                self.stored_output(day, round).map(|b| b ^ recipe.negate)
            }
            LeakTarget::RawRound { day, round } => self.stored_output(day, round),
        }
    }

    /// Produce the output for one round. `honest` is the outcome the device's
    /// half of the entangled pair yields for this input; `rng` supplies any
    /// randomness the policy needs.
    pub fn step<R: Rng + ?Sized>(&mut self, input: Input, honest: Sign, rng: &mut R) -> StepOutcome {
        if self.disposed {
            return StepOutcome::Aborted;
        }
        if let DevicePolicy::AbortOnDay(d) = self.policy {
            if d == self.day {
                return StepOutcome::Aborted;
            }
        }
        let occ = &mut self.occurrences[input as usize & 3];
        *occ += 1;
        let slot = Slot {
            input,
            occurrence: *occ,
        };
        let output = match &self.policy {
            DevicePolicy::LeakSchedule(schedule) if schedule.day == self.day => schedule
                .lookup(slot)
                .and_then(|t| self.resolve(t))
                .unwrap_or(honest.bit()),
            DevicePolicy::NoiseModulating(nm) if nm.active_bit(self.day) => {
                if rng.random::<f64>() < nm.degrade_probability {
                    rng.random()
                } else {
                    honest.bit()
                }
            }
            _ => honest.bit(),
        };
        if self.day_starts.last().map(|&(d, _)| d) != Some(self.day) {
            self.day_starts.push((self.day, self.history.len()));
        }
        self.history.push(HistoryEntry {
            day: self.day,
            round: self.round,
            input,
            output,
        });
        self.round += 1;
        StepOutcome::Output(output)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::qsim::{sample_pair, Basis};
    use crate::seed::rng_from_seed;
    use proptest::prelude::*;

    fn drive(dev: &mut DeviceState, day: u32, inputs: &[Input], seed: u64) -> Vec<StepOutcome> {
        dev.begin_day(day).unwrap();
        let mut rng = rng_from_seed(seed);
        let m = CorrelationModel::ideal();
        inputs
            .iter()
            .map(|&x| {
                let p = sample_pair(m, Basis::new(x as f64), Basis::new(0.0), &mut rng);
                dev.step(x, p.a, &mut rng)
            })
            .collect()
    }

    #[test]
    fn honest_device_matches_raw_sampling() {
        let inputs: Vec<Input> = (0..200).map(|i| (i % 2) as Input).collect();
        let mut dev = DeviceState::new(DeviceId(1));
        let got = drive(&mut dev, 1, &inputs, 9);
        let mut rng = rng_from_seed(9);
        let m = CorrelationModel::ideal();
        for (x, out) in inputs.iter().zip(got) {
            let p = sample_pair(m, Basis::new(*x as f64), Basis::new(0.0), &mut rng);
            assert_eq!(out, StepOutcome::Output(p.a.bit()));
        }
    }

    #[test]
    fn abort_on_day() {
        let mut dev = DeviceState::new(DeviceId(2)).with_policy(DevicePolicy::AbortOnDay(7));
        assert!(drive(&mut dev, 6, &[0, 1], 1)
            .iter()
            .all(|o| matches!(o, StepOutcome::Output(_))));
        assert_eq!(drive(&mut dev, 7, &[1], 1), vec![StepOutcome::Aborted]);
        // No history is recorded for refused rounds.
        assert_eq!(dev.audit_history().len(), 2);
    }

    #[test]
    fn isolated_device_rejects_shipments() {
        let mut dev = DeviceState::new(DeviceId(3)).isolated(true);
        let s = source_emit(&SourceDevice::honest(CorrelationModel::ideal()), 10, None).unwrap();
        assert_eq!(dev.ingest_shipment(s), Err(DeviceError::ShipmentRejected(DeviceId(3))));
    }

    #[test]
    fn closed_channel_rejects_shipments() {
        let mut dev = DeviceState::new(DeviceId(4));
        dev.begin_day(1).unwrap();
        let src = SourceDevice::honest(CorrelationModel::ideal());
        dev.ingest_shipment(source_emit(&src, 5, None).unwrap()).unwrap();
        assert_eq!(dev.expected_rounds(), 5);
        dev.close_channel();
        assert_eq!(
            dev.ingest_shipment(source_emit(&src, 5, None).unwrap()),
            Err(DeviceError::ChannelClosed(DeviceId(4)))
        );
        dev.begin_day(2).unwrap();
        assert!(dev.ingest_shipment(source_emit(&src, 5, None).unwrap()).is_ok());
    }

    #[test]
    fn isolated_source_cannot_hide() {
        let hidden = HiddenData {
            day: 1,
            rounds: vec![0],
            bits: vec![true],
        };
        let src = SourceDevice::honest(CorrelationModel::ideal());
        assert_eq!(
            source_emit(&src, 3, Some(hidden.clone())),
            Err(DeviceError::IsolationViolation)
        );
        let combined = SourceDevice {
            isolated: false,
            ..src
        };
        let s = source_emit(&combined, 3, Some(hidden.clone())).unwrap();
        assert_eq!(s.covert.unwrap().hidden, Some(hidden));
    }

    #[test]
    fn day_regression_rejected() {
        let mut dev = DeviceState::new(DeviceId(5));
        dev.begin_day(3).unwrap();
        assert!(dev.begin_day(2).is_err());
    }

    #[test]
    fn leak_schedule_replays_stored_output() {
        let mut dev = DeviceState::new(DeviceId(6));
        let day1: Vec<StepOutcome> = drive(&mut dev, 1, &[0, 1, 0, 1], 5);
        let schedule = LeakSchedule::new(
            2,
            vec![LeakEntry {
                slot: Slot {
                    input: 1,
                    occurrence: 2,
                },
                target: LeakTarget::RawRound { day: 1, round: 2 },
            }],
        );
        dev.set_policy(DevicePolicy::LeakSchedule(schedule));
        let day2 = drive(&mut dev, 2, &[1, 1, 1], 77);
        let StepOutcome::Output(stored) = day1[2] else { panic!() };
        assert_eq!(day2[1], StepOutcome::Output(stored));
    }

    #[test]
    fn recipe_recomputes_key_from_memory() {
        let mut dev = DeviceState::new(DeviceId(7));
        let outs = drive(&mut dev, 1, &[1; 6], 2);
        let bits: Vec<bool> = outs
            .iter()
            .map(|o| matches!(o, StepOutcome::Output(true)))
            .collect();
        let recipe = KeyRecipe {
            day: 1,
            sifted_rounds: vec![0, 2, 3, 5],
            negate: true,
            corrections: vec![1],
            pa: None,
        };
        let want = vec![!bits[0], bits[2], !bits[3], !bits[5]];
        assert_eq!(dev.recompute_key(&recipe), Some(want));
        let missing = KeyRecipe {
            sifted_rounds: vec![9],
            ..recipe
        };
        assert_eq!(dev.recompute_key(&missing), None);
    }

    proptest! {
        /// Outputs up to round i depend only on inputs up to round i.
        #[test]
        fn outputs_are_causal(
            inputs in proptest::collection::vec(0u8..3, 2..60),
            cut in 0usize..60,
            tail in proptest::collection::vec(0u8..3, 0..20),
            seed in any::<u64>(),
        ) {
            let cut = cut.min(inputs.len());
            let nm = NoiseModulation { start_day: 1, bits: vec![true], degrade_probability: 0.5 };
            let mut a = DeviceState::new(DeviceId(1)).with_policy(DevicePolicy::NoiseModulating(nm.clone()));
            let mut b = DeviceState::new(DeviceId(1)).with_policy(DevicePolicy::NoiseModulating(nm));
            let full = drive(&mut a, 1, &inputs, seed);
            let mut alt = inputs[..cut].to_vec();
            alt.extend(tail);
            let other = drive(&mut b, 1, &alt, seed);
            prop_assert_eq!(&full[..cut], &other[..cut]);
        }

        #[test]
        fn history_grows_by_one_per_output(inputs in proptest::collection::vec(0u8..3, 0..40)) {
            let mut dev = DeviceState::new(DeviceId(1));
            let outs = drive(&mut dev, 1, &inputs, 0);
            prop_assert_eq!(dev.audit_history().len(), outs.len());
            for (i, e) in dev.audit_history().iter().enumerate() {
                prop_assert_eq!(e.round as usize, i);
                prop_assert_eq!(e.input, inputs[i]);
            }
        }
    }
}
