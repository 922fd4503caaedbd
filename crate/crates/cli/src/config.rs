//! Flat `key = value` run configuration.
//!
//! Values come from, in increasing precedence: the profile defaults, a
//! `--config` file, `--set` overrides, and the dedicated flags. Lines starting
//! with `#` are comments, so a run manifest is itself a valid config file.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::str::FromStr;

use bgnn::baselines::Baseline;
use bgnn::beamcore::Utility;
use bgnn::bgnn::BgnnConfig;
use bgnn::channel::db_to_linear;
use bgnn::exec::Execution;
use bgnn::experiments::{Cell, EvalSpec};
use bgnn::training::TrainConfig;
use bgnn::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Profile {
    Desk,
    Full,
}

impl FromStr for Profile {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "desk" => Ok(Profile::Desk),
            "full" => Ok(Profile::Full),
            other => Err(Error::Config(format!("unknown profile `{other}` (expected desk or full)"))),
        }
    }
}

impl Display for Profile {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Profile::Desk => "desk",
            Profile::Full => "full",
        })
    }
}

/// One `key = value` assignment and where it came from.
#[derive(Clone, Debug, PartialEq)]
pub struct Entry {
    pub key: String,
    pub value: String,
    pub origin: String,
}

/// Parses config text; `origin` names the file in diagnostics.
pub fn parse_entries(text: &str, origin: &str) -> Result<Vec<Entry>> {
    let mut out = Vec::new();
    for (no, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let entry = parse_assignment(line, &format!("{origin}:{}", no + 1))?;
        out.push(entry);
    }
    Ok(out)
}

pub fn parse_assignment(text: &str, origin: &str) -> Result<Entry> {
    let (key, value) = text.split_once('=').ok_or_else(|| Error::Config(format!("{origin}: expected key=value, got `{text}`")))?;
    let key = key.trim();
    if key.is_empty() {
        return Err(Error::Config(format!("{origin}: empty key")));
    }
    Ok(Entry { key: key.to_string(), value: value.trim().to_string(), origin: origin.to_string() })
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalSettings {
    pub ns: Vec<usize>,
    pub ks: Vec<usize>,
    pub snrs_db: Vec<f64>,
    pub samples: usize,
    /// `None` picks the defaults for the model's utility.
    pub baselines: Option<Vec<Baseline>>,
    /// Single-instance runs per method for the timing file; 0 skips timing.
    pub timing_runs: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GeneralizeSettings {
    pub sizes: Vec<(usize, usize)>,
    pub snrs_db: Vec<f64>,
    pub samples: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrajectorySettings {
    pub n: usize,
    pub k: usize,
    pub snr_db: f64,
    pub samples: usize,
}

/// Every setting of a run, fully resolved.
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub profile: Profile,
    pub seed: u64,
    pub parallel: bool,
    /// Training SNR; the noise variance stays at `scenario.noise`.
    pub snr_db: f64,
    pub train: TrainConfig,
    pub eval: EvalSettings,
    pub generalize: GeneralizeSettings,
    pub trajectory: TrajectorySettings,
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: Display,
{
    value.parse().map_err(|e| Error::Config(format!("{key}: cannot parse `{value}`: {e}")))
}

fn parse_list<T: FromStr>(key: &str, value: &str) -> Result<Vec<T>>
where
    T::Err: Display,
{
    value.split(',').map(str::trim).filter(|s| !s.is_empty()).map(|s| parse(key, s)).collect()
}

fn parse_sizes(key: &str, value: &str) -> Result<Vec<(usize, usize)>> {
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| {
            let (n, k) = s.split_once('x').ok_or_else(|| Error::Config(format!("{key}: expected NxK, got `{s}`")))?;
            Ok((parse(key, n)?, parse(key, k)?))
        })
        .collect()
}

fn join<T: Display>(xs: &[T]) -> String {
    xs.iter().map(ToString::to_string).collect::<Vec<_>>().join(",")
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(Error::Config(format!("{key}: expected true or false, got `{value}`"))),
    }
}

/// All recognized keys, in manifest order.
pub const KEYS: &[&str] = &[
    "run.profile",
    "run.seed",
    "run.parallel",
    "model.mode",
    "model.msg_dim",
    "model.iterations",
    "model.hidden",
    "scenario.layout",
    "scenario.max_antennas",
    "scenario.max_users",
    "scenario.min_size",
    "scenario.snr_db",
    "scenario.noise",
    "scenario.cell_radius",
    "scenario.antenna_radius",
    "scenario.d_ref",
    "scenario.alpha",
    "train.epochs",
    "train.batches_per_epoch",
    "train.batch_size",
    "train.learning_rate",
    "train.validation_size",
    "train.step_weights",
    "train.snr_db_range",
    "eval.n",
    "eval.k",
    "eval.snr_db",
    "eval.samples",
    "eval.baselines",
    "eval.timing_runs",
    "generalize.sizes",
    "generalize.snr_db",
    "generalize.samples",
    "trajectory.n",
    "trajectory.k",
    "trajectory.snr_db",
    "trajectory.samples",
];

impl RunConfig {
    pub fn defaults(profile: Profile, mode: Utility) -> Self {
        let train = match profile {
            Profile::Desk => TrainConfig::desk(mode),
            Profile::Full => TrainConfig::full(mode),
        };
        Self {
            profile,
            seed: train.seed,
            parallel: true,
            snr_db: 10.0,
            eval: EvalSettings {
                ns: vec![4, 6, 8],
                ks: (1..=8).collect(),
                snrs_db: vec![10.0, 25.0],
                samples: 500,
                baselines: None,
                timing_runs: 100,
            },
            generalize: GeneralizeSettings {
                sizes: vec![(1, 1), (2, 2), (4, 4), (6, 6), (8, 8), (10, 10), (12, 12), (15, 15)],
                snrs_db: vec![10.0],
                samples: 200,
            },
            trajectory: TrajectorySettings { n: 4, k: 4, snr_db: 10.0, samples: 500 },
            train,
        }
    }

    /// Applies one assignment. Unknown keys are reported by [`resolve`].
    fn set(&mut self, key: &str, v: &str) -> Result<bool> {
        let t = &mut self.train;
        let s = &mut t.scenario;
        match key {
            "run.profile" => self.profile = parse(key, v)?,
            "run.seed" => self.seed = parse(key, v)?,
            "run.parallel" => self.parallel = parse_bool(key, v)?,
            "model.mode" => t.model.mode = parse(key, v)?,
            "model.msg_dim" => t.model.msg_dim = parse(key, v)?,
            "model.iterations" => t.model.iterations = parse(key, v)?,
            "model.hidden" => t.model.hidden = parse(key, v)?,
            "scenario.layout" => s.layout = parse(key, v)?,
            "scenario.max_antennas" => s.max_antennas = parse(key, v)?,
            "scenario.max_users" => s.max_users = parse(key, v)?,
            "scenario.min_size" => s.min_size = parse(key, v)?,
            "scenario.snr_db" => self.snr_db = parse(key, v)?,
            "scenario.noise" => s.noise = parse(key, v)?,
            "scenario.cell_radius" => s.cell_radius = parse(key, v)?,
            "scenario.antenna_radius" => s.antenna_radius = parse(key, v)?,
            "scenario.d_ref" => s.d_ref = parse(key, v)?,
            "scenario.alpha" => s.alpha = parse(key, v)?,
            "train.epochs" => t.epochs = parse(key, v)?,
            "train.batches_per_epoch" => t.batches_per_epoch = parse(key, v)?,
            "train.batch_size" => t.batch_size = parse(key, v)?,
            "train.learning_rate" => t.learning_rate = parse(key, v)?,
            "train.validation_size" => t.validation_size = parse(key, v)?,
            "train.step_weights" => t.step_weights = parse_list(key, v)?,
            "train.snr_db_range" => {
                t.snr_db_range = match v {
                    "" | "none" => None,
                    _ => {
                        let (lo, hi) = v.split_once(':').ok_or_else(|| Error::Config(format!("{key}: expected LO:HI, got `{v}`")))?;
                        Some((parse(key, lo.trim())?, parse(key, hi.trim())?))
                    }
                }
            }
            "eval.n" => self.eval.ns = parse_list(key, v)?,
            "eval.k" => self.eval.ks = parse_list(key, v)?,
            "eval.snr_db" => self.eval.snrs_db = parse_list(key, v)?,
            "eval.samples" => self.eval.samples = parse(key, v)?,
            "eval.baselines" => {
                self.eval.baselines = match v {
                    "default" => None,
                    _ => Some(parse_list(key, v)?),
                }
            }
            "eval.timing_runs" => self.eval.timing_runs = parse(key, v)?,
            "generalize.sizes" => self.generalize.sizes = parse_sizes(key, v)?,
            "generalize.snr_db" => self.generalize.snrs_db = parse_list(key, v)?,
            "generalize.samples" => self.generalize.samples = parse(key, v)?,
            "trajectory.n" => self.trajectory.n = parse(key, v)?,
            "trajectory.k" => self.trajectory.k = parse(key, v)?,
            "trajectory.snr_db" => self.trajectory.snr_db = parse(key, v)?,
            "trajectory.samples" => self.trajectory.samples = parse(key, v)?,
            _ => return Ok(false),
        }
        Ok(true)
    }

    fn get(&self, key: &str) -> String {
        let t = &self.train;
        let s = &t.scenario;
        match key {
            "run.profile" => self.profile.to_string(),
            "run.seed" => self.seed.to_string(),
            "run.parallel" => self.parallel.to_string(),
            "model.mode" => t.model.mode.to_string(),
            "model.msg_dim" => t.model.msg_dim.to_string(),
            "model.iterations" => t.model.iterations.to_string(),
            "model.hidden" => t.model.hidden.to_string(),
            "scenario.layout" => s.layout.to_string(),
            "scenario.max_antennas" => s.max_antennas.to_string(),
            "scenario.max_users" => s.max_users.to_string(),
            "scenario.min_size" => s.min_size.to_string(),
            "scenario.snr_db" => self.snr_db.to_string(),
            "scenario.noise" => s.noise.to_string(),
            "scenario.cell_radius" => s.cell_radius.to_string(),
            "scenario.antenna_radius" => s.antenna_radius.to_string(),
            "scenario.d_ref" => s.d_ref.to_string(),
            "scenario.alpha" => s.alpha.to_string(),
            "train.epochs" => t.epochs.to_string(),
            "train.batches_per_epoch" => t.batches_per_epoch.to_string(),
            "train.batch_size" => t.batch_size.to_string(),
            "train.learning_rate" => t.learning_rate.to_string(),
            "train.validation_size" => t.validation_size.to_string(),
            "train.step_weights" => join(&t.step_weights),
            "train.snr_db_range" => t.snr_db_range.map_or("none".into(), |(lo, hi)| format!("{lo}:{hi}")),
            "eval.n" => join(&self.eval.ns),
            "eval.k" => join(&self.eval.ks),
            "eval.snr_db" => join(&self.eval.snrs_db),
            "eval.samples" => self.eval.samples.to_string(),
            "eval.baselines" => join(&self.eval_baselines().iter().map(|b| b.name()).collect::<Vec<_>>()),
            "eval.timing_runs" => self.eval.timing_runs.to_string(),
            "generalize.sizes" => self.generalize.sizes.iter().map(|(n, k)| format!("{n}x{k}")).collect::<Vec<_>>().join(","),
            "generalize.snr_db" => join(&self.generalize.snrs_db),
            "generalize.samples" => self.generalize.samples.to_string(),
            "trajectory.n" => self.trajectory.n.to_string(),
            "trajectory.k" => self.trajectory.k.to_string(),
            "trajectory.snr_db" => self.trajectory.snr_db.to_string(),
            "trajectory.samples" => self.trajectory.samples.to_string(),
            _ => unreachable!("{key} is listed in KEYS"),
        }
    }

    /// Resolved configuration as `key = value` lines in [`KEYS`] order.
    pub fn to_text(&self) -> String {
        KEYS.iter().map(|k| format!("{k} = {}\n", self.get(k))).collect()
    }

    pub fn mode(&self) -> Utility {
        self.train.model.mode
    }

    pub fn execution(&self) -> Execution {
        if self.parallel {
            Execution::Parallel
        } else {
            Execution::Sequential
        }
    }

    pub fn eval_baselines(&self) -> Vec<Baseline> {
        self.eval.baselines.clone().unwrap_or_else(|| match self.mode() {
            Utility::SumRate => vec![Baseline::Wmmse, Baseline::Zf, Baseline::Mrt],
            Utility::MinRate => vec![Baseline::Optimal, Baseline::Zf, Baseline::Mrt],
        })
    }

    /// The training configuration with run-level settings folded in.
    pub fn train_config(&self) -> Result<TrainConfig> {
        let mut t = self.train.clone();
        t.seed = self.seed;
        t.execution = self.execution();
        t.scenario.power = db_to_linear(self.snr_db);
        t.validate()?;
        Ok(t)
    }

    /// An evaluation spec over `cells`; baselines are chosen by the caller.
    pub fn eval_spec(&self, cells: Vec<Cell>, samples: usize) -> Result<EvalSpec> {
        let scenario = self.train_config()?.scenario;
        Ok(EvalSpec { cells, samples, seed: self.seed, scenario, baselines: Vec::new(), execution: self.execution() })
    }

    /// Adopts a checkpoint's model shape, rejecting an explicitly different utility.
    pub fn adopt_model(&mut self, model: BgnnConfig, mode_explicit: bool) -> Result<()> {
        if mode_explicit && self.mode() != model.mode {
            return Err(Error::Config(format!("requested {} mode but the checkpoint was trained for {}", self.mode(), model.mode)));
        }
        self.train.model = model;
        Ok(())
    }
}

/// Result of [`resolve`]: the configuration and whether the utility was chosen explicitly.
#[derive(Clone, Debug)]
pub struct Resolved {
    pub config: RunConfig,
    pub mode_explicit: bool,
}

/// Builds a configuration from ordered assignments.
///
/// `file` entries apply first, then `sets`, then `flags`. A flag that disagrees
/// with a `--set` value for the same key is rejected rather than silently
/// winning.
pub fn resolve(file: &[Entry], sets: &[Entry], flags: &[Entry]) -> Result<Resolved> {
    let unknown: Vec<String> = file
        .iter()
        .chain(sets)
        .chain(flags)
        .filter(|e| !KEYS.contains(&e.key.as_str()))
        .map(|e| format!("{} ({})", e.key, e.origin))
        .collect();
    if !unknown.is_empty() {
        return Err(Error::Config(format!("unknown keys: {}", unknown.join(", "))));
    }
    let mut seen: BTreeMap<&str, &Entry> = BTreeMap::new();
    for e in sets {
        seen.insert(&e.key, e);
    }
    for f in flags {
        if let Some(s) = seen.get(f.key.as_str()) {
            if s.value != f.value {
                return Err(Error::Config(format!(
                    "conflicting values for {}: `{}` from {} and `{}` from {}",
                    f.key, s.value, s.origin, f.value, f.origin
                )));
            }
        }
    }
    let all: Vec<&Entry> = file.iter().chain(sets).chain(flags).collect();
    let last = |key: &str| all.iter().rev().find(|e| e.key == key).map(|e| e.value.as_str());
    let profile = last("run.profile").map(|v| parse::<Profile>("run.profile", v)).transpose()?.unwrap_or(Profile::Desk);
    let mode_value = last("model.mode");
    let mode = mode_value.map(|v| parse::<Utility>("model.mode", v)).transpose()?.unwrap_or(Utility::SumRate);
    let mut config = RunConfig::defaults(profile, mode);
    for e in &all {
        config.set(&e.key, &e.value)?;
    }
    Ok(Resolved { config, mode_explicit: mode_value.is_some() })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn entries(pairs: &[(&str, &str)], origin: &str) -> Vec<Entry> {
        pairs.iter().map(|(k, v)| Entry { key: k.to_string(), value: v.to_string(), origin: origin.into() }).collect()
    }

    #[test]
    fn defaults_round_trip_through_text() {
        for profile in [Profile::Desk, Profile::Full] {
            for mode in [Utility::SumRate, Utility::MinRate] {
                let cfg = RunConfig::defaults(profile, mode);
                let parsed = parse_entries(&cfg.to_text(), "manifest").unwrap();
                assert_eq!(parsed.len(), KEYS.len());
                let back = resolve(&parsed, &[], &[]).unwrap().config;
                assert_eq!(back.to_text(), cfg.to_text());
            }
        }
    }

    #[test]
    fn full_profile_hyperparameters() {
        let cfg = resolve(&[], &entries(&[("run.profile", "full")], "--set"), &[]).unwrap().config;
        let t = cfg.train_config().unwrap();
        assert_eq!((t.learning_rate, t.batch_size, t.model.msg_dim, t.model.iterations), (5e-4, 1000, 5, 10));
        assert_eq!((t.scenario.max_antennas, t.scenario.max_users), (8, 8));
    }

    #[test]
    fn min_mode_changes_profile_defaults() {
        let cfg = resolve(&entries(&[("model.mode", "min")], "f"), &[], &[]).unwrap();
        assert!(cfg.mode_explicit);
        assert_eq!(cfg.config.train.model.hidden, 40);
        assert_eq!(cfg.config.eval_baselines()[0], Baseline::Optimal);
    }

    #[test]
    fn all_unknown_keys_are_listed() {
        let err =
            resolve(&entries(&[("train.epoch", "3"), ("model.mode", "sum")], "f"), &entries(&[("bogus", "1")], "--set"), &[]).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("train.epoch (f)") && msg.contains("bogus (--set)"), "{msg}");
    }

    #[test]
    fn conflicting_mode_flags_are_rejected() {
        let err = resolve(&[], &entries(&[("model.mode", "min")], "--set"), &entries(&[("model.mode", "sum")], "--mode")).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
        assert!(resolve(&[], &entries(&[("model.mode", "min")], "--set"), &entries(&[("model.mode", "min")], "--mode")).is_ok());
    }

    #[test]
    fn later_sources_win() {
        let cfg = resolve(&entries(&[("train.epochs", "3")], "f"), &entries(&[("train.epochs", "4")], "--set"), &[]).unwrap().config;
        assert_eq!(cfg.train.epochs, 4);
    }

    #[test]
    fn list_and_range_values() {
        let sets = entries(&[("generalize.sizes", "1x1, 12x12"), ("train.snr_db_range", "0:20"), ("eval.baselines", "zf,mrt")], "--set");
        let cfg = resolve(&[], &sets, &[]).unwrap().config;
        assert_eq!(cfg.generalize.sizes, vec![(1, 1), (12, 12)]);
        assert_eq!(cfg.train.snr_db_range, Some((0.0, 20.0)));
        assert_eq!(cfg.eval_baselines(), vec![Baseline::Zf, Baseline::Mrt]);
    }

    #[test]
    fn malformed_lines_are_rejected() {
        assert!(parse_entries("run.seed 3", "f").is_err());
        assert!(parse_entries("= 3", "f").is_err());
        assert!(resolve(&entries(&[("run.seed", "x")], "f"), &[], &[]).is_err());
        assert!(resolve(&entries(&[("scenario.layout", "ring")], "f"), &[], &[]).is_err());
    }

    #[test]
    fn comments_and_blank_lines_are_skipped() {
        let e = parse_entries("# header\n\n  run.seed = 9  \n", "f").unwrap();
        assert_eq!(e, vec![Entry { key: "run.seed".into(), value: "9".into(), origin: "f:3".into() }]);
    }

    #[test]
    fn invalid_training_values_fail_validation() {
        let cfg = resolve(&[], &entries(&[("train.learning_rate", "0")], "--set"), &[]).unwrap().config;
        assert!(cfg.train_config().is_err());
    }
}
