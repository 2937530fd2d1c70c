//! Simulator and attack laboratory for device-independent quantum key
//! distribution with devices that remember.
//!
//! * [`qsim`]: singlet measurement statistics and the CHSH test.
//! * [`devices`]: stateful measurement devices and sources, honest or not.
//! * [`protocol`]: the daily session, its countermeasure variants and campaigns.
//! * [`pamp`]: Toeplitz hashing and entropy accounting.
//! * [`attacks`]: memory attacks and Eve's ledger.

pub mod attacks;
pub mod bits;
pub mod devices;
pub mod pamp;
pub mod protocol;
pub mod qsim;
pub mod seed;

pub use attacks::{AttackPlan, EveLedger, Provenance};
pub use devices::{DevicePolicy, DeviceState, StateShipment};
pub use pamp::{HashSeed, MinEntropyBudget};
pub use protocol::{ProtocolConfig, SessionOutcome, SessionTranscript};
pub use qsim::{Basis, CorrelationModel, OutcomePair};
pub use seed::SimRng;
