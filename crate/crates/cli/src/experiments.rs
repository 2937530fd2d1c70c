//! One function per experiment. Each runs `trials` independent trials on
//! sub-seeds `derive_seed(seed, i)`, in parallel, and aggregates in trial
//! order so the report does not depend on scheduling.

use std::collections::BTreeMap;

use memlab_core::attacks::bhk::{expected_leak, expected_undetected, run_bhk, BhkParams};
use memlab_core::attacks::hr::{expected_fraction, run_hr_many, HrMode, HrParams};
use memlab_core::attacks::pe::{run_pe_trial, schedule_size};
use memlab_core::attacks::qre::{empirical_mutual_information, run_qre, QreParams, QreScenario};
use memlab_core::attacks::impostor::{run_impostor, ImpostorAttack, ImpostorPlan};
use memlab_core::attacks::{
    abort_capacity, abort_decode, abort_encode, audit_credits, eve_reconstruct, AbortAttacker,
    PassiveEve,
};
use memlab_core::pamp::{
    collision_check, distance_oracle, leftover_bound, min_entropy, CollisionMode, SideInfo,
    COLLISION_MAX_N, ORACLE_MAX_N,
};
use memlab_core::protocol::{
    run_campaign, run_day_cm3, Adversary, Lab, Party, ProtocolConfig, ALICE_BASES, BOB_BASES,
};
use memlab_core::qsim::{chsh_value, sample_pair, CorrelationCounts, CorrelationModel};
use memlab_core::seed::{derive_seed, rng_from_seed, stream};
use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;
use serde_json::Value;

use crate::config::Settings;
use crate::report::{Check, Metric, Report};
use crate::HarnessError;

/// Experiment names accepted by [`run_experiment`].
pub const EXPERIMENTS: &[&str] = &[
    "protocol",
    "chsh",
    "pe",
    "abort",
    "impostor",
    "bhk",
    "hr",
    "qre-length",
    "qre-procrustean",
    "qre-abort",
    "cm3",
    "verify-pa",
];

/// Run the named experiment.
pub fn run_experiment(name: &str, settings: &Settings) -> Result<Report, HarnessError> {
    settings.validate()?;
    let report = match name {
        "protocol" => protocol(settings),
        "chsh" => chsh(settings),
        "pe" => pe(settings),
        "abort" => abort(settings),
        "impostor" => impostor(settings),
        "bhk" => bhk(settings),
        "hr" => hr(settings),
        "qre-length" => qre(settings, name),
        "qre-procrustean" => qre(settings, name),
        "qre-abort" => qre(settings, name),
        "cm3" => cm3(settings),
        "verify-pa" => verify_pa(settings),
        other => Err(HarnessError::Config(format!(
            "unknown experiment {other:?}; expected one of {}",
            EXPERIMENTS.join(", ")
        ))),
    }?;
    Ok(report)
}

fn model(settings: &Settings) -> Result<CorrelationModel, HarnessError> {
    CorrelationModel::new(settings.experiment.visibility).map_err(|e| HarnessError::Config(e.to_string()))
}

fn to_value<T: Serialize>(x: &T) -> Value {
    serde_json::to_value(x).expect("records serialise")
}

/// Run `trials` trials in parallel, in index order.
fn trials<T: Send>(settings: &Settings, f: impl Fn(u64) -> T + Sync + Send) -> Vec<T> {
    let seed = settings.experiment.seed;
    (0..settings.experiment.trials as u64)
        .into_par_iter()
        .map(|i| f(derive_seed(seed, i)))
        .collect()
}

fn report(name: &str, settings: &Settings, records: Vec<Value>) -> Report {
    let mut parameters = BTreeMap::new();
    parameters.insert("visibility".into(), to_value(&settings.experiment.visibility));
    parameters.insert("protocol".into(), to_value(&settings.protocol));
    parameters.insert("attack".into(), to_value(&settings.attack));
    Report {
        experiment: name.to_string(),
        seed: settings.experiment.seed,
        trials: settings.experiment.trials,
        parameters,
        metrics: Vec::new(),
        checks: Vec::new(),
        records,
    }
}

fn mean_of(report: &Report, name: &str) -> f64 {
    report.metric(name).map_or(f64::NAN, |m| m.mean)
}

#[derive(Serialize)]
struct ProtocolRecord {
    seed: u64,
    day1_aborted: bool,
    abort_rate: f64,
    day1_test_value: Option<f64>,
    mean_key_len: f64,
    keys_agree: bool,
    abort_causes: Vec<String>,
}

fn protocol(settings: &Settings) -> Result<Report, HarnessError> {
    let config = settings.protocol.clone();
    let model = model(settings)?;
    let records = trials(settings, |seed| {
        let mut rng = rng_from_seed(derive_seed(seed, stream::PROTOCOL));
        let mut lab = Lab::new(&config, model, &mut rng);
        let result = run_campaign(&config, &mut lab, &mut PassiveEve::default(), &mut rng);
        let days = result.reports.len().max(1) as f64;
        let aborted = result.reports.iter().filter(|r| r.outcome.is_abort()).count();
        let lengths: Vec<usize> = result
            .reports
            .iter()
            .map(|r| r.outcome.alice_key().map_or(0, |k| k.final_key.len()))
            .collect();
        to_value(&ProtocolRecord {
            seed,
            day1_aborted: result.reports[0].outcome.is_abort(),
            abort_rate: aborted as f64 / days,
            day1_test_value: result.reports[0].outcome.test_value(),
            mean_key_len: lengths.iter().sum::<usize>() as f64 / days,
            keys_agree: result.reports.iter().all(|r| match (r.outcome.alice_key(), r.outcome.bob_key()) {
                (Some(a), Some(b)) => a.final_key == b.final_key,
                _ => true,
            }),
            abort_causes: result
                .reports
                .iter()
                .filter_map(|r| r.outcome.abort().map(|a| format!("day {}: {:?}", r.day, a.cause)))
                .collect(),
        })
    });
    let mut r = report("protocol", settings, records);
    let ideal = 2.0 * std::f64::consts::SQRT_2 * settings.experiment.visibility;
    r.metrics = vec![
        Metric::from_field("abort_rate", "abort_rate", &r.records).note("diagnostic; no reference value"),
        Metric::from_field("day1_abort_rate", "day1_aborted", &r.records).note("diagnostic; no reference value"),
        Metric::from_field("day1_test_value", "day1_test_value", &r.records)
            .expect(ideal, "CHSH value of the source: 2*sqrt(2)*v"),
        Metric::from_field("mean_key_len", "mean_key_len", &r.records).note("diagnostic; no reference value"),
        Metric::from_field("key_agreement_rate", "keys_agree", &r.records)
            .expect(1.0, "identical final keys whenever neither party aborts"),
    ];
    let agree = mean_of(&r, "key_agreement_rate");
    r.checks.push(Check::invariant(
        "key_agreement",
        agree == 1.0,
        format!("fraction of trials with agreeing keys {agree}"),
    ));
    Ok(r)
}

#[derive(Serialize)]
struct ChshRecord {
    seed: u64,
    rounds: usize,
    chsh_value: f64,
}

/// Sample `rounds` test rounds with uniformly random settings.
pub fn sample_chsh(model: CorrelationModel, rounds: usize, seed: u64) -> f64 {
    let mut rng = rng_from_seed(seed);
    let mut counts = CorrelationCounts::new();
    for _ in 0..rounds {
        let x = rng.random_range(0..2usize);
        let y = rng.random_range(0..2usize);
        counts.record(x, y, sample_pair(model, ALICE_BASES[x], BOB_BASES[y], &mut rng));
    }
    chsh_value(&counts).unwrap_or(0.0)
}

fn chsh(settings: &Settings) -> Result<Report, HarnessError> {
    let model = model(settings)?;
    let rounds = settings.protocol.rounds;
    let records = trials(settings, |seed| {
        to_value(&ChshRecord {
            seed,
            rounds,
            chsh_value: sample_chsh(model, rounds, seed),
        })
    });
    let mut r = report("chsh", settings, records);
    let ideal = 2.0 * std::f64::consts::SQRT_2 * settings.experiment.visibility;
    r.metrics = vec![Metric::from_field("chsh_value", "chsh_value", &r.records)
        .expect(ideal, "2*sqrt(2)*v from the singlet correlators")];
    let s = mean_of(&r, "chsh_value");
    r.checks.push(Check::target(
        "chsh_near_ideal",
        (s - ideal).abs() <= 0.02,
        format!("mean {s:.5} vs {ideal:.5} (tolerance 0.02)"),
    ));
    Ok(r)
}

fn pe(settings: &Settings) -> Result<Report, HarnessError> {
    let config = settings.protocol.clone();
    let model = model(settings)?;
    let a = &settings.attack;
    let records = trials(settings, |seed| {
        let mut v = to_value(&run_pe_trial(&config, model, a.n_target, a.max_days, seed));
        v["seed"] = seed.into();
        v
    });
    let mut r = report("pe", settings, records);
    let expected = schedule_size(a.n_target, config.mu) as f64 * config.mu;
    r.metrics = vec![
        Metric::from_field("leaked_key_bits", "leaked_key_bits", &r.records)
            .expect(expected, "Binomial(ceil(N/mu), mu) mean, roughly N"),
        Metric::from_field("leaked_raw_bits", "leaked_raw_bits", &r.records).note("diagnostic; no reference value"),
        Metric::from_field("wrong_bits", "wrong_bits", &r.records).expect(0.0, "credits are exact"),
        Metric::from_field("mounted_rate", "mounted", &r.records).note("diagnostic; no reference value"),
        Metric::from_field("attack_day_abort_rate", "attack_day_aborted", &r.records)
            .expect(0.0, "cheating masked as noise"),
        Metric::from_field("attack_day_test_value", "attack_day_test_value", &r.records).note("diagnostic; no reference value"),
        Metric::from_field("key_len", "key_len", &r.records).note("diagnostic; no reference value"),
    ];
    let n = a.n_target as f64;
    let leaked = mean_of(&r, "leaked_key_bits");
    let wrong = mean_of(&r, "wrong_bits");
    let aborts = mean_of(&r, "attack_day_abort_rate");
    r.checks = vec![
        Check::invariant("credits_exact", wrong == 0.0, format!("mean wrong bits {wrong}")),
        Check::target(
            "leak_near_target",
            (0.8 * n..=1.2 * n).contains(&leaked),
            format!("mean leaked {leaked:.3} vs N = {n}"),
        ),
        Check::target(
            "abort_rate_at_most_10pct",
            aborts <= 0.10,
            format!("attack-day abort rate {aborts:.4}"),
        ),
    ];
    Ok(r)
}

#[derive(Serialize)]
struct AbortRecord {
    seed: u64,
    days: u32,
    bit_len: usize,
    abort_day: Option<u32>,
    credited_bits: usize,
    wrong_bits: usize,
    decoded: bool,
    bound: usize,
}

fn abort(settings: &Settings) -> Result<Report, HarnessError> {
    let config = settings.protocol.clone();
    let model = model(settings)?;
    let days = config.days;
    let bit_len = settings.attack.bit_len.unwrap_or(abort_capacity(days));
    if bit_len == 0 {
        return Err(HarnessError::Config(format!(
            "a {days}-day campaign carries no abort code; use days >= 3"
        )));
    }
    if (1u64 << bit_len) + 1 > days as u64 {
        return Err(HarnessError::Config(format!(
            "{bit_len} bits need {} days, campaign has {days}",
            (1u64 << bit_len) + 1
        )));
    }
    let bound = (days as f64).log2().ceil() as usize;
    let records = trials(settings, |seed| {
        let mut rng = rng_from_seed(derive_seed(seed, stream::PROTOCOL));
        let mut lab = Lab::new(&config, model, &mut rng);
        let mut eve = AbortAttacker::new(Party::Alice, bit_len, days);
        let result = run_campaign(&config, &mut lab, &mut eve, &mut rng);
        let rebuilt = eve_reconstruct(eve.ledger());
        let audit = audit_credits(eve.ledger(), &result.reports, &lab.pairs[0].alice, &lab.pairs[0].bob);
        let credited = audit.key_bits + audit.raw_bits;
        to_value(&AbortRecord {
            seed,
            days,
            bit_len,
            abort_day: rebuilt.abort_day,
            credited_bits: credited,
            wrong_bits: audit.wrong_bits,
            decoded: credited == bit_len && audit.wrong_bits == 0,
            bound,
        })
    });
    let mut r = report("abort", settings, records);
    r.metrics = vec![
        Metric::from_field("decode_rate", "decoded", &r.records).expect(1.0, "abort day decodes exactly"),
        Metric::from_field("credited_bits", "credited_bits", &r.records)
            .expect(bit_len as f64, "floor(log2(days - 1)) bits at most"),
        Metric::from_field("wrong_bits", "wrong_bits", &r.records).expect(0.0, "credits are exact"),
    ];
    let max_credit = r.metric("credited_bits").map_or(0.0, |m| m.max);
    let round_trip = (0..=8usize).all(|k| {
        (0..1u32 << k).all(|v| {
            let bits: Vec<bool> = (0..k).map(|i| v >> (k - 1 - i) & 1 == 1).collect();
            abort_encode(&bits, (1 << k) + 1).and_then(|d| abort_decode(d, k)) == Ok(bits)
        })
    });
    r.checks = vec![
        Check::invariant("round_trip_up_to_8_bits", round_trip, "abort_decode(abort_encode(b)) = b".into()),
        Check::invariant(
            "credit_within_log_days",
            max_credit <= bound as f64,
            format!("max credited {max_credit} vs ceil(log2 {days}) = {bound}"),
        ),
        Check::invariant(
            "credits_exact",
            mean_of(&r, "wrong_bits") == 0.0,
            format!("mean wrong bits {}", mean_of(&r, "wrong_bits")),
        ),
    ];
    Ok(r)
}

fn impostor(settings: &Settings) -> Result<Report, HarnessError> {
    let mut config = settings.protocol.clone();
    config.countermeasures.cm2_encrypt_pe = true;
    config.preshared_key_bits = config.preshared_key_bits.max(4000);
    let model = model(settings)?;
    let a = &settings.attack;
    let attack = if a.impostor_abort {
        ImpostorAttack::Abort { bit_len: a.qre_bit_len }
    } else {
        ImpostorAttack::Pe { n_target: a.n_target }
    };
    let days = match attack {
        ImpostorAttack::Abort { bit_len } => a.impostor_switch_day.max(2) + (1 << bit_len) + 1,
        ImpostorAttack::Pe { .. } => a.max_days.max(a.impostor_switch_day + 1),
    };
    let plan = ImpostorPlan {
        attack,
        switch_day: a.impostor_switch_day,
        corrupt: a.impostor_corrupt,
        days,
    };
    let records = trials(settings, |seed| {
        let mut v = to_value(&run_impostor(&config, model, &plan, seed));
        v["seed"] = seed.into();
        v
    });
    let mut r = report("impostor", settings, records);
    let target = match attack {
        ImpostorAttack::Pe { n_target } => schedule_size(n_target, config.mu) as f64 * config.mu,
        ImpostorAttack::Abort { bit_len } => bit_len as f64,
    };
    let expected = if a.impostor_corrupt { target } else { 0.0 };
    let field = match attack {
        ImpostorAttack::Pe { .. } => "key_bits",
        ImpostorAttack::Abort { .. } => "raw_bits",
    };
    r.metrics = vec![
        Metric::from_field("leaked_bits", field, &r.records)
            .expect(expected, "encrypted estimation leaks nothing unless the receiver is corrupt"),
        Metric::from_field("wrong_bits", "wrong_bits", &r.records).expect(0.0, "credits are exact"),
        Metric::from_field("days_run", "days_run", &r.records).note("diagnostic; no reference value"),
    ];
    let leaked = mean_of(&r, "leaked_bits");
    r.checks = vec![
        Check::invariant(
            "credits_exact",
            mean_of(&r, "wrong_bits") == 0.0,
            format!("mean wrong bits {}", mean_of(&r, "wrong_bits")),
        ),
        Check::target(
            "leak_restored",
            if a.impostor_corrupt {
                (0.8 * target..=1.2 * target).contains(&leaked)
            } else {
                leaked == 0.0
            },
            format!("mean leaked {leaked:.3}, expected {expected:.3}"),
        ),
    ];
    Ok(r)
}

fn bhk(settings: &Settings) -> Result<Report, HarnessError> {
    let a = &settings.attack;
    if a.bhk_n < 2 || a.bhk_m == 0 {
        return Err(HarnessError::Config("bhk needs M >= 1 and N >= 2".into()));
    }
    let params = BhkParams {
        m: a.bhk_m,
        n: a.bhk_n,
        cheat: a.bhk_cheat,
        publish_close_only: a.bhk_publish_close_only,
        visibility: settings.experiment.visibility,
    };
    let (_, results) = run_bhk(&params, settings.experiment.trials, settings.experiment.seed);
    let records = results.iter().map(to_value).collect();
    let mut r = report("bhk", settings, records);
    let leak = expected_leak(a.bhk_m, a.bhk_n);
    let undetected = expected_undetected(a.bhk_n);
    r.metrics = vec![
        Metric::from_field("leak_success_rate", "leaked", &r.records).expect(leak, "(M N^2 - 1) / (M N^2)"),
        Metric::from_field("undetected_rate", "undetected", &r.records).expect(undetected, "1 - 3 / (2N)"),
        Metric::from_field("all_tests_pass_rate", "all_tests_passed", &r.records).note("diagnostic; no reference value"),
        Metric::from_field("violations", "violations", &r.records).note("diagnostic; no reference value"),
    ];
    if a.bhk_cheat && !a.bhk_publish_close_only {
        let l = mean_of(&r, "leak_success_rate");
        let u = mean_of(&r, "undetected_rate");
        r.checks = vec![
            Check::target("leak_rate", (l - leak).abs() <= 0.01, format!("{l:.4} vs {leak:.4}")),
            Check::target(
                "undetected_rate",
                (u - undetected).abs() <= 0.03,
                format!("{u:.4} vs {undetected:.4}"),
            ),
        ];
    }
    Ok(r)
}

#[derive(Serialize)]
struct HrRecord {
    seed: u64,
    key_bits: Vec<u64>,
    cumulative: u64,
    cumulative_over_first: f64,
}

fn hr(settings: &Settings) -> Result<Report, HarnessError> {
    let a = &settings.attack;
    if a.hr_runs == 0 || a.hr_devices == 0 {
        return Err(HarnessError::Config("hr needs at least one run and one device".into()));
    }
    let params = HrParams {
        devices: a.hr_devices,
        runs: a.hr_runs,
        mode: if a.hr_sampled {
            HrMode::Sampled {
                visibility: settings.experiment.visibility,
            }
        } else {
            HrMode::Counting
        },
    };
    let seed = settings.experiment.seed;
    let runs = run_hr_many(&params, settings.experiment.trials, seed);
    let records: Vec<Value> = runs
        .iter()
        .enumerate()
        .map(|(i, run)| {
            let first = run.key_bits[0].max(1) as f64;
            to_value(&HrRecord {
                seed: derive_seed(seed, i as u64),
                key_bits: run.key_bits.clone(),
                cumulative: run.cumulative(),
                cumulative_over_first: run.cumulative() as f64 / first,
            })
        })
        .collect();
    let mut r = report("hr", settings, records);
    let mut metrics = Vec::with_capacity(a.hr_runs + 1);
    for k in 0..a.hr_runs {
        metrics.push(Metric::from_field(&format!("key_bits_run_{}", k + 1), &format!("key_bits/{k}"), &r.records));
    }
    let first = metrics[0].mean;
    for (k, m) in metrics.iter_mut().enumerate() {
        m.expected = Some(first * expected_fraction(k + 1));
        m.reference = Some("run-1 mean times (5/6)^(k-1)".into());
    }
    metrics.push(
        Metric::from_field("cumulative_over_first", "cumulative_over_first", &r.records)
            .expect(6.0, "total bounded by about 6 times the first run"),
    );
    r.metrics = metrics;
    let worst_decay = r.metrics[..a.hr_runs]
        .iter()
        .map(|m| (m.mean / m.expected.unwrap_or(1.0) - 1.0).abs())
        .fold(0.0, f64::max);
    let worst_ratio = r.metric("cumulative_over_first").map_or(0.0, |m| m.max);
    r.checks = vec![
        Check::target(
            "decay_within_5pct",
            worst_decay <= 0.05,
            format!("largest relative deviation from (5/6)^(k-1): {worst_decay:.4}"),
        ),
        Check::target(
            "cumulative_at_most_6.5x",
            worst_ratio <= 6.5,
            format!("largest cumulative / first-run key: {worst_ratio:.4}"),
        ),
    ];
    Ok(r)
}

#[derive(Serialize)]
struct QreRecord {
    seed: u64,
    code_bits: usize,
    correct_bits: usize,
    credited_bits: usize,
    correct_fraction: f64,
    distinct_lengths: usize,
    abort_session: Option<u32>,
    decoded: bool,
    lengths: Vec<usize>,
}

fn qre(settings: &Settings, name: &str) -> Result<Report, HarnessError> {
    let a = &settings.attack;
    let scenario = match name {
        "qre-length" => QreScenario::LengthLeak,
        "qre-procrustean" => QreScenario::Procrustean,
        _ => QreScenario::Abort { bit_len: a.qre_bit_len },
    };
    let params = QreParams {
        scenario,
        rounds_per_session: a.qre_rounds,
        raw_bits: a.qre_raw_bits,
        visibility: settings.experiment.visibility,
        degrade_probability: a.qre_degrade,
        threshold: settings.protocol.chsh_threshold,
        security_margin: settings.protocol.security_margin,
    };
    if params.raw_bits as u64 >= params.rounds_per_session as u64 {
        return Err(HarnessError::Config("qre raw bits must be fewer than rounds".into()));
    }
    let seed = settings.experiment.seed;
    let results = run_qre(&params, settings.experiment.trials, seed);
    let mut code = Vec::new();
    let mut observed = Vec::new();
    let records: Vec<Value> = results
        .iter()
        .enumerate()
        .map(|(i, t)| {
            let lengths: Vec<usize> = t.sessions.iter().map(|s| s.length).collect();
            to_value(&QreRecord {
                seed: derive_seed(seed, i as u64),
                code_bits: t.code_bits,
                correct_bits: t.correct_bits,
                credited_bits: t.credited_bits,
                correct_fraction: t.correct_bits as f64 / t.code_bits.max(1) as f64,
                distinct_lengths: t.distinct_lengths,
                abort_session: t.abort_session,
                decoded: t.correct_bits == t.code_bits && t.credited_bits == t.code_bits,
                lengths,
            })
        })
        .collect();
    // Length channel: which length Eve saw for each bit the device encoded.
    if !matches!(scenario, QreScenario::Abort { .. }) {
        for t in &results {
            for (b, s) in t.encoded.iter().zip(t.sessions.iter().skip(1)) {
                code.push(*b as usize);
                observed.push(s.length);
            }
        }
    }
    let mi = empirical_mutual_information(&code, &observed);
    let mut r = report(name, settings, records);
    r.parameters.insert("midpoint_length".into(), to_value(&params.midpoint()));
    r.parameters.insert("fixed_length".into(), to_value(&params.fixed_length()));
    match scenario {
        QreScenario::LengthLeak => {
            r.metrics = vec![
                Metric::from_field("correct_fraction", "correct_fraction", &r.records)
                    .expect(1.0, "one raw bit per session through the output length"),
                Metric::from_field("distinct_lengths", "distinct_lengths", &r.records).note("diagnostic; no reference value"),
                Metric::summarize("length_channel_information", &[mi])
                    .expect(1.0, "one bit per session when lengths separate"),
            ];
            let f = mean_of(&r, "correct_fraction");
            r.checks.push(Check::target(
                "reconstructs_95pct",
                f >= 0.95,
                format!("mean fraction of raw bits recovered {f:.4}"),
            ));
        }
        QreScenario::Procrustean => {
            r.metrics = vec![
                Metric::from_field("distinct_lengths", "distinct_lengths", &r.records)
                    .expect(1.0, "fixed output length"),
                Metric::summarize("length_channel_information", &[mi]).expect(0.0, "constant lengths carry nothing"),
                Metric::from_field("correct_fraction", "correct_fraction", &r.records).note("diagnostic; no reference value"),
            ];
            let max_distinct = r.metric("distinct_lengths").map_or(0.0, |m| m.max);
            r.checks.push(Check::invariant(
                "constant_lengths",
                max_distinct <= 1.0 && mi == 0.0,
                format!("max distinct lengths {max_distinct}, length-channel information {mi}"),
            ));
        }
        QreScenario::Abort { bit_len } => {
            r.metrics = vec![Metric::from_field("decode_rate", "decoded", &r.records)
                .expect(1.0, "abort session decodes exactly")];
            let d = mean_of(&r, "decode_rate");
            r.checks.push(Check::target(
                "abort_decodes",
                d == 1.0,
                format!("{bit_len}-bit abort code decoded in fraction {d}"),
            ));
        }
    }
    Ok(r)
}

#[derive(Serialize)]
struct Cm3Record {
    seed: u64,
    aborted: bool,
    key_len: usize,
    margin: u64,
    min_budget_after_exposure: Option<f64>,
    budget_ok: bool,
    keys_agree: bool,
}

fn cm3(settings: &Settings) -> Result<Report, HarnessError> {
    let mut config: ProtocolConfig = settings.protocol.clone();
    config.countermeasures.cm3_multi_device = true;
    config.m_devices = config.m_devices.max(2);
    config.preshared_key_bits = config.preshared_key_bits.max(4000 * config.m_devices);
    config.validate().map_err(|e| HarnessError::Config(e.to_string()))?;
    let model = model(settings)?;
    let records = trials(settings, |seed| {
        let mut rng = rng_from_seed(derive_seed(seed, stream::PROTOCOL));
        let mut lab = Lab::new(&config, model, &mut rng);
        let report = run_day_cm3(&config, 1, &mut lab, &mut PassiveEve::default(), &mut rng);
        let alice = report.outcome.alice_key();
        let bob = report.outcome.bob_key();
        let key_len = alice.map_or(0, |k| k.final_key.len());
        let min_budget = alice.map(|k| {
            (0..k.segments.len())
                .map(|i| k.budget_after_exposure(i))
                .fold(f64::INFINITY, f64::min)
        });
        to_value(&Cm3Record {
            seed,
            aborted: report.outcome.is_abort(),
            key_len,
            margin: config.security_margin,
            min_budget_after_exposure: min_budget,
            budget_ok: min_budget.is_none_or(|b| b >= (key_len as u64 + config.security_margin) as f64),
            keys_agree: match (alice, bob) {
                (Some(a), Some(b)) => a.final_key == b.final_key,
                _ => true,
            },
        })
    });
    let mut r = report("cm3", settings, records);
    r.metrics = vec![
        Metric::from_field("abort_rate", "aborted", &r.records).note("diagnostic; no reference value"),
        Metric::from_field("key_len", "key_len", &r.records).note("diagnostic; no reference value"),
        Metric::from_field("min_budget_after_exposure", "min_budget_after_exposure", &r.records).note("diagnostic; no reference value"),
        Metric::from_field("budget_ok_rate", "budget_ok", &r.records)
            .expect(1.0, "exposing one device's string leaves at least t + margin"),
        Metric::from_field("key_agreement_rate", "keys_agree", &r.records).expect(1.0, "exact agreement"),
    ];
    let ok = mean_of(&r, "budget_ok_rate");
    let agree = mean_of(&r, "key_agreement_rate");
    r.checks = vec![
        Check::invariant("budget_after_exposure", ok == 1.0, format!("fraction within budget {ok}")),
        Check::invariant("key_agreement", agree == 1.0, format!("fraction agreeing {agree}")),
    ];
    Ok(r)
}

#[derive(Serialize)]
struct PaRecord {
    n: usize,
    t: usize,
    side_info: String,
    hmin: f64,
    distance: f64,
    bound: f64,
    within_bound: bool,
}

#[derive(Serialize)]
struct CollisionRecord {
    n: usize,
    t: usize,
    max_collision_probability: f64,
    bound: f64,
    within_bound: bool,
}

/// Exhaustive leftover-hash and collision checks for input length `n`.
pub fn verify_pa_cases(n: usize, t: Option<usize>) -> Result<(Vec<Value>, Vec<Value>), HarnessError> {
    if n == 0 || n > ORACLE_MAX_N {
        return Err(HarnessError::Config(format!("n must be in 1..={ORACLE_MAX_N}")));
    }
    let ts: Vec<usize> = match t {
        Some(t) if t == 0 || t > n => return Err(HarnessError::Config(format!("t must be in 1..={n}"))),
        Some(t) => vec![t],
        None => (1..=n).collect(),
    };
    let mut sides = vec![SideInfo::Constant, SideInfo::Parity];
    sides.extend((1..n).map(SideInfo::Prefix));
    let err = |e: memlab_core::pamp::PampError| HarnessError::Experiment(e.to_string());
    let mut distance = Vec::new();
    let mut collisions = Vec::new();
    for &t in &ts {
        for side in &sides {
            let joint = side.distribution(n).map_err(err)?;
            let hmin = min_entropy(&joint);
            let d = distance_oracle(&joint, t).map_err(err)?;
            let bound = leftover_bound(hmin, t, 0.0);
            distance.push(to_value(&PaRecord {
                n,
                t,
                side_info: format!("{side:?}"),
                hmin,
                distance: d,
                bound,
                within_bound: d <= bound + 1e-12,
            }));
        }
        if n <= COLLISION_MAX_N {
            let c = collision_check(n, t, CollisionMode::Exhaustive).map_err(err)?;
            collisions.push(to_value(&CollisionRecord {
                n,
                t,
                max_collision_probability: c.max_collision_probability,
                bound: c.bound,
                within_bound: c.within_bound(),
            }));
        }
    }
    Ok((distance, collisions))
}

fn verify_pa(settings: &Settings) -> Result<Report, HarnessError> {
    let a = &settings.attack;
    let (distance, collisions) = verify_pa_cases(a.pa_n, a.pa_t)?;
    let violations = distance.iter().filter(|v| v["within_bound"] == false).count();
    let collision_violations = collisions.iter().filter(|v| v["within_bound"] == false).count();
    let mut records = distance;
    records.extend(collisions);
    let mut r = report("verify-pa", settings, records);
    r.trials = r.records.len();
    r.metrics = vec![
        Metric::from_field("distance", "distance", &r.records)
            .note("at most eps + 2^{-(Hmin - t)/2} / 2, checked with eps = 0"),
        Metric::from_field("max_collision_probability", "max_collision_probability", &r.records)
            .note("at most 2^-t"),
    ];
    r.checks = vec![
        Check::invariant(
            "leftover_bound",
            violations == 0,
            format!("{violations} cases above the leftover-hash bound"),
        ),
        Check::invariant(
            "two_universal",
            collision_violations == 0,
            format!("{collision_violations} (n, t) with collision probability above 2^-t"),
        ),
    ];
    Ok(r)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(trials: usize) -> Settings {
        let mut s = Settings::default();
        s.experiment.trials = trials;
        s.experiment.seed = 5;
        s.protocol.rounds = 2000;
        s.protocol.mu = 0.1;
        s
    }

    #[test]
    fn every_experiment_runs_and_is_recomputable() {
        let mut s = small(2);
        s.protocol.days = 3;
        s.attack.hr_devices = 6000;
        s.attack.hr_runs = 5;
        s.attack.qre_rounds = 2000;
        s.attack.qre_raw_bits = 4;
        s.attack.qre_bit_len = 1;
        s.attack.pa_n = 3;
        for name in EXPERIMENTS {
            let r = run_experiment(name, &s).unwrap_or_else(|e| panic!("{name}: {e}"));
            assert!(r.inconsistent_metrics().is_empty(), "{name}");
            assert!(!r.metrics.is_empty(), "{name}");
        }
    }

    #[test]
    fn unknown_experiment_is_config_error() {
        let e = run_experiment("nope", &Settings::default()).unwrap_err();
        assert_eq!(e.exit_code(), 2);
    }

    #[test]
    fn deterministic_reports() {
        let s = small(3);
        let a = run_experiment("protocol", &s).unwrap().to_json();
        let b = run_experiment("protocol", &s).unwrap().to_json();
        assert_eq!(a, b);
    }

    proptest::proptest! {
        #![proptest_config(proptest::prelude::ProptestConfig::with_cases(16))]

        /// Aggregates are recomputable from records, and reruns are identical.
        #[test]
        fn reports_recompute_and_repeat(seed in proptest::prelude::any::<u64>(), pick in 0usize..3) {
            let name = ["bhk", "chsh", "hr"][pick];
            let mut s = small(3);
            s.experiment.seed = seed;
            s.attack.hr_devices = 600;
            s.attack.hr_runs = 4;
            let a = run_experiment(name, &s).unwrap();
            proptest::prop_assert!(a.inconsistent_metrics().is_empty());
            proptest::prop_assert_eq!(a.to_json(), run_experiment(name, &s).unwrap().to_json());
        }
    }

    #[test]
    fn verify_pa_small_cases_hold() {
        let (d, c) = verify_pa_cases(4, None).unwrap();
        assert!(d.iter().all(|v| v["within_bound"] == true));
        assert!(c.iter().all(|v| v["within_bound"] == true));
        assert!(verify_pa_cases(4, Some(5)).is_err());
    }
}
