//! Experiment settings: a TOML file with `[experiment]`, `[protocol]` and
//! `[attack]` sections, overridden key by key from the command line.

use std::path::{Path, PathBuf};

use memlab_core::protocol::ProtocolConfig;
use serde::{Deserialize, Serialize};

use crate::HarnessError;

/// Environment variable that overrides the output directory (and nothing else).
pub const OUTPUT_DIR_ENV: &str = "MEMLAB_OUTPUT_DIR";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentSection {
    pub seed: u64,
    pub trials: usize,
    /// Visibility of the entangled source.
    pub visibility: f64,
    pub output_dir: Option<PathBuf>,
}

impl Default for ExperimentSection {
    fn default() -> Self {
        ExperimentSection {
            seed: 0,
            trials: 200,
            visibility: 1.0,
            output_dir: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AttackSection {
    /// Bits a parameter-estimation attack aims to leak.
    pub n_target: usize,
    /// Abort-code length; `None` uses the campaign's capacity.
    pub bit_len: Option<usize>,
    /// Days an attacker may wait for a key before giving up.
    pub max_days: u32,
    pub impostor_switch_day: u32,
    pub impostor_corrupt: bool,
    pub impostor_abort: bool,
    pub bhk_m: usize,
    pub bhk_n: usize,
    pub bhk_cheat: bool,
    pub bhk_publish_close_only: bool,
    pub hr_devices: u64,
    pub hr_runs: usize,
    pub hr_sampled: bool,
    pub qre_rounds: usize,
    pub qre_raw_bits: usize,
    pub qre_degrade: f64,
    pub qre_bit_len: usize,
    /// Input length checked by `verify-pa`.
    pub pa_n: usize,
    /// Output length checked by `verify-pa`; `None` checks every `t <= n`.
    pub pa_t: Option<usize>,
}

impl Default for AttackSection {
    fn default() -> Self {
        AttackSection {
            n_target: 25,
            bit_len: None,
            max_days: 5,
            impostor_switch_day: 2,
            impostor_corrupt: true,
            impostor_abort: false,
            bhk_m: 2,
            bhk_n: 10,
            bhk_cheat: true,
            bhk_publish_close_only: false,
            hr_devices: 6_000_000,
            hr_runs: 50,
            hr_sampled: false,
            qre_rounds: 10_000,
            qre_raw_bits: 64,
            qre_degrade: 0.06,
            qre_bit_len: 3,
            pa_n: 6,
            pa_t: None,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Settings {
    pub experiment: ExperimentSection,
    pub protocol: ProtocolConfig,
    pub attack: AttackSection,
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, HarnessError>
where
    T::Err: std::fmt::Display,
{
    value
        .trim()
        .parse()
        .map_err(|e| HarnessError::Config(format!("{key} = {value:?}: {e}")))
}

impl Settings {
    pub fn from_toml(text: &str) -> Result<Self, HarnessError> {
        toml::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| HarnessError::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text).map_err(|e| match e {
            HarnessError::Config(m) => HarnessError::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    /// Set one parameter by name. `M` and `N` are interpreted per experiment.
    pub fn set(&mut self, experiment: &str, key: &str, value: &str) -> Result<(), HarnessError> {
        let p = &mut self.protocol;
        let a = &mut self.attack;
        let cm = &mut p.countermeasures;
        match key {
            "seed" => self.experiment.seed = parse(key, value)?,
            "trials" => self.experiment.trials = parse(key, value)?,
            "visibility" | "v" => self.experiment.visibility = parse(key, value)?,
            "M" if experiment == "bhk" => a.bhk_m = parse(key, value)?,
            "N" if experiment == "bhk" => a.bhk_n = parse(key, value)?,
            "M" if experiment == "hr" => a.hr_devices = 6 * parse::<u64>(key, value)?,
            "N" if experiment == "hr" => a.hr_runs = parse(key, value)?,
            "M" if experiment.starts_with("qre") => a.qre_rounds = parse(key, value)?,
            "N" if experiment == "qre-abort" => a.qre_bit_len = parse(key, value)?,
            "N" if experiment.starts_with("qre") => a.qre_raw_bits = parse(key, value)?,
            "N" if experiment == "abort" => a.bit_len = Some(parse(key, value)?),
            "M" | "rounds" => p.rounds = parse(key, value)?,
            "N" | "n_target" => a.n_target = parse(key, value)?,
            "mu" => p.mu = parse(key, value)?,
            "days" => p.days = parse(key, value)?,
            "threshold" | "chsh_threshold" => p.chsh_threshold = parse(key, value)?,
            "noise_tolerance" => p.noise_tolerance = parse(key, value)?,
            "m_devices" => p.m_devices = parse(key, value)?,
            "security_margin" => p.security_margin = parse(key, value)?,
            "epsilon" => p.epsilon = parse(key, value)?,
            "preshared_key_bits" => p.preshared_key_bits = parse(key, value)?,
            "min_combination_count" => p.min_combination_count = parse(key, value)?,
            "cascade_passes" => p.cascade_passes = parse(key, value)?,
            "verification_bits" => p.verification_bits = parse(key, value)?,
            "cm1" => cm.cm1_bob_announces = parse(key, value)?,
            "cm2" => cm.cm2_encrypt_pe = parse(key, value)?,
            "cm3" => cm.cm3_multi_device = parse(key, value)?,
            "cm4" => cm.cm4_secret_pa = parse(key, value)?,
            "n" => a.pa_n = parse(key, value)?,
            "t" => a.pa_t = Some(parse(key, value)?),
            "bit_len" => a.bit_len = Some(parse(key, value)?),
            "max_days" => a.max_days = parse(key, value)?,
            "corrupt" => a.impostor_corrupt = parse(key, value)?,
            "cheat" => a.bhk_cheat = parse(key, value)?,
            "close_only" => a.bhk_publish_close_only = parse(key, value)?,
            "qre_degrade" => a.qre_degrade = parse(key, value)?,
            _ => return Err(HarnessError::Config(format!("unknown parameter {key:?}"))),
        }
        Ok(())
    }

    /// Output directory: the environment variable, else the config, else `results`.
    pub fn output_dir(&self) -> PathBuf {
        std::env::var_os(OUTPUT_DIR_ENV)
            .map(PathBuf::from)
            .or_else(|| self.experiment.output_dir.clone())
            .unwrap_or_else(|| PathBuf::from("results"))
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        self.protocol
            .validate()
            .map_err(|e| HarnessError::Config(e.to_string()))?;
        if !(0.0..=1.0).contains(&self.experiment.visibility) {
            return Err(HarnessError::Config(format!(
                "visibility {} outside [0, 1]",
                self.experiment.visibility
            )));
        }
        if self.experiment.trials == 0 {
            return Err(HarnessError::Config("trials must be positive".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sections_and_overrides() {
        let mut s = Settings::from_toml(
            "[experiment]\nseed = 7\n[protocol]\nrounds = 500\nmu = 0.2\n[protocol.countermeasures]\ncm2_encrypt_pe = true\n",
        )
        .unwrap();
        assert_eq!(s.experiment.seed, 7);
        assert_eq!(s.protocol.rounds, 500);
        assert!(s.protocol.countermeasures.cm2_encrypt_pe);
        s.set("protocol", "M", "100").unwrap();
        assert_eq!(s.protocol.rounds, 100);
        s.set("bhk", "M", "2").unwrap();
        assert_eq!((s.attack.bhk_m, s.protocol.rounds), (2, 100));
    }

    #[test]
    fn errors_mention_line() {
        let e = Settings::from_toml("[protocol]\nrounds = 10\nmu = \"x\"\n").unwrap_err();
        assert!(e.to_string().contains("line 3"), "{e}");
        assert!(Settings::from_toml("[protocol]\nbogus = 1\n").is_err());
    }

    #[test]
    fn unknown_override_rejected() {
        let mut s = Settings::default();
        assert!(s.set("pe", "nope", "1").is_err());
        assert!(s.set("pe", "mu", "abc").is_err());
    }
}
