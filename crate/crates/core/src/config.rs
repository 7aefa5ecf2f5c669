//! Flat `key=value` configuration with layered precedence:
//! command-line flag > config file > built-in default.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use crate::dqn::DqnHyperparams;
use crate::env::EnvConfig;
use crate::error::{Error, Result};
use crate::nn::OptimizerKind;
use crate::tabular::TabularHyperparams;

const ENV_KEYS: &[&str] = &[
    "lanes",
    "rows",
    "spawn_interval",
    "occupancy_prob",
    "max_episode_steps",
    "seed",
];
const SHARED_KEYS: &[&str] = &["gamma", "train_steps"];
const TABULAR_KEYS: &[&str] = &["alpha", "epsilon"];
const DQN_KEYS: &[&str] = &[
    "epsilon_start",
    "epsilon_end",
    "epsilon_decay_steps",
    "batch_size",
    "replay_capacity",
    "target_sync_period",
    "learn_start",
    "double_q",
    "hidden",
    "arch",
    "learning_rate",
    "optimizer",
    "fast_validation_period",
    "fast_validation_episodes",
    "deep_validation_period",
    "deep_validation_episodes",
];

pub fn is_known_key(key: &str) -> bool {
    [ENV_KEYS, SHARED_KEYS, TABULAR_KEYS, DQN_KEYS]
        .iter()
        .any(|keys| keys.contains(&key))
}

/// Hidden-layer presets for the architecture sweep. The `ddqn*` presets also
/// switch on the double-Q target.
pub fn arch_preset(name: &str) -> Option<(Vec<usize>, bool)> {
    let p = match name {
        "shallow" => (vec![32], false),
        "medium" => (vec![32, 64, 32], false),
        "deep" => (vec![64, 128, 128, 64], false),
        "ddqn16" => (vec![16], true),
        "ddqn16x16" => (vec![16, 16], true),
        _ => return None,
    };
    Some(p)
}

/// Parses `16,16` style layer lists; every entry must be a positive integer.
pub fn parse_hidden(s: &str) -> Result<Vec<usize>> {
    if s.trim().is_empty() {
        return Err(Error::Usage("empty hidden-layer list".into()));
    }
    s.split(',')
        .map(|tok| match tok.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(n),
            _ => Err(Error::Usage(format!(
                "invalid hidden-layer size {tok:?} in {s:?}"
            ))),
        })
        .collect()
}

/// Where a resolved value came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Source {
    File,
    Flag,
}

#[derive(Debug, Clone, Default)]
pub struct Layers {
    values: BTreeMap<String, (String, Source)>,
}

impl Layers {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut layers = Self::new();
        let entries = parse_key_values(&text, &path.display().to_string())?;
        layers.apply(entries, Source::File)?;
        Ok(layers)
    }

    /// Overlays `entries`, expanding `arch` into `hidden`/`double_q` first.
    pub fn apply(&mut self, entries: Vec<(String, String)>, source: Source) -> Result<()> {
        let mut layer: BTreeMap<String, String> = BTreeMap::new();
        for (k, v) in entries {
            if !is_known_key(&k) {
                return Err(Error::Usage(format!("unknown configuration key {k:?}")));
            }
            layer.insert(k, v);
        }
        if let Some(arch) = layer.remove("arch") {
            let (hidden, double_q) = arch_preset(&arch).ok_or_else(|| {
                Error::Usage(format!(
                    "unknown arch {arch:?} (expected shallow, medium, deep, ddqn16, ddqn16x16)"
                ))
            })?;
            if layer.contains_key("hidden") {
                return Err(Error::Usage(
                    "arch and hidden are mutually exclusive".into(),
                ));
            }
            let hidden: Vec<String> = hidden.iter().map(ToString::to_string).collect();
            layer.insert("hidden".into(), hidden.join(","));
            if double_q {
                layer
                    .entry("double_q".into())
                    .or_insert_with(|| "true".into());
            }
        }
        for (k, v) in layer {
            self.values.insert(k, (v, source));
        }
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(|(v, _)| v.as_str())
    }

    pub fn source(&self, key: &str) -> Option<Source> {
        self.values.get(key).map(|(_, s)| *s)
    }

    fn set<T: FromStr>(&self, key: &str, slot: &mut T) -> Result<()> {
        if let Some(v) = self.get(key) {
            *slot = v
                .trim()
                .parse()
                .map_err(|_| Error::Usage(format!("invalid value {v:?} for {key}")))?;
        }
        Ok(())
    }

    pub fn env_config(&self) -> Result<EnvConfig> {
        let mut c = EnvConfig::default();
        self.set("lanes", &mut c.lanes)?;
        self.set("rows", &mut c.rows)?;
        self.set("spawn_interval", &mut c.spawn_interval)?;
        self.set("occupancy_prob", &mut c.occupancy_prob)?;
        self.set("max_episode_steps", &mut c.max_episode_steps)?;
        self.set("seed", &mut c.seed)?;
        c.validate()?;
        Ok(c)
    }

    pub fn tabular(&self) -> Result<TabularHyperparams> {
        let mut hp = TabularHyperparams::default();
        self.set("gamma", &mut hp.gamma)?;
        self.set("alpha", &mut hp.alpha)?;
        self.set("epsilon", &mut hp.epsilon)?;
        self.set("train_steps", &mut hp.train_steps)?;
        hp.validate()?;
        Ok(hp)
    }

    pub fn dqn(&self) -> Result<DqnHyperparams> {
        let mut hp = DqnHyperparams::default();
        self.set("gamma", &mut hp.gamma)?;
        self.set("train_steps", &mut hp.train_steps)?;
        self.set("epsilon_start", &mut hp.epsilon_start)?;
        self.set("epsilon_end", &mut hp.epsilon_end)?;
        self.set("epsilon_decay_steps", &mut hp.epsilon_decay_steps)?;
        self.set("batch_size", &mut hp.batch_size)?;
        self.set("replay_capacity", &mut hp.replay_capacity)?;
        self.set("target_sync_period", &mut hp.target_sync_period)?;
        self.set("learn_start", &mut hp.learn_start)?;
        self.set("double_q", &mut hp.double_q)?;
        self.set("learning_rate", &mut hp.learning_rate)?;
        self.set("fast_validation_period", &mut hp.fast_validation_period)?;
        self.set("fast_validation_episodes", &mut hp.fast_validation_episodes)?;
        self.set("deep_validation_period", &mut hp.deep_validation_period)?;
        self.set("deep_validation_episodes", &mut hp.deep_validation_episodes)?;
        if let Some(v) = self.get("optimizer") {
            hp.optimizer = OptimizerKind::from_str(v.trim())?;
        }
        if let Some(v) = self.get("hidden") {
            hp.hidden = parse_hidden(v)?;
        }
        hp.validate()?;
        Ok(hp)
    }
}

/// `key=value` lines; `#` starts a comment, blank lines are skipped.
pub fn parse_key_values(text: &str, origin: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap().trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| {
            Error::parse(origin, i + 1, format!("expected key=value, got {line:?}"))
        })?;
        let k = k.trim();
        if !is_known_key(k) {
            return Err(Error::parse(origin, i + 1, format!("unknown key {k:?}")));
        }
        out.push((k.to_string(), v.trim().to_string()));
    }
    Ok(out)
}

pub fn env_dump(c: &EnvConfig) -> String {
    let mut s = String::new();
    writeln!(s, "lanes={}", c.lanes).unwrap();
    writeln!(s, "rows={}", c.rows).unwrap();
    writeln!(s, "spawn_interval={}", c.spawn_interval).unwrap();
    writeln!(s, "occupancy_prob={}", c.occupancy_prob).unwrap();
    writeln!(s, "max_episode_steps={}", c.max_episode_steps).unwrap();
    writeln!(s, "seed={}", c.seed).unwrap();
    s
}

pub fn tabular_dump(hp: &TabularHyperparams) -> String {
    format!(
        "gamma={}\nalpha={}\nepsilon={}\ntrain_steps={}\n",
        hp.gamma, hp.alpha, hp.epsilon, hp.train_steps
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn kv(pairs: &[(&str, &str)]) -> Vec<(String, String)> {
        pairs
            .iter()
            .map(|(k, v)| (k.to_string(), v.to_string()))
            .collect()
    }

    #[test]
    fn precedence_flag_over_file_over_default() {
        let mut l = Layers::new();
        l.apply(kv(&[("lanes", "3"), ("rows", "6")]), Source::File)
            .unwrap();
        l.apply(kv(&[("lanes", "4")]), Source::Flag).unwrap();
        let c = l.env_config().unwrap();
        assert_eq!(c.lanes, 4);
        assert_eq!(c.rows, 6);
        assert_eq!(c.spawn_interval, 3);
        assert_eq!(l.source("lanes"), Some(Source::Flag));
        assert_eq!(l.source("rows"), Some(Source::File));
        assert_eq!(l.source("spawn_interval"), None);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let err = parse_key_values("lanes=3\nspeed=4\n", "c.cfg").unwrap_err();
        assert!(err.to_string().contains("c.cfg:2"), "{err}");
        assert!(Layers::new()
            .apply(kv(&[("speed", "1")]), Source::Flag)
            .is_err());
    }

    #[test]
    fn comments_and_blank_lines() {
        let e = parse_key_values("# env\n\nlanes = 3  # narrow road\n", "x").unwrap();
        assert_eq!(e, kv(&[("lanes", "3")]));
        assert!(parse_key_values("lanes 3\n", "x").is_err());
    }

    #[test]
    fn hidden_lists() {
        assert_eq!(
            parse_hidden("64,128,128,64").unwrap(),
            vec![64, 128, 128, 64]
        );
        let err = parse_hidden("16,,16").unwrap_err();
        assert!(err.to_string().contains("\"\""), "{err}");
        assert!(parse_hidden("16,0").is_err());
        assert!(parse_hidden("").is_err());
    }

    #[test]
    fn arch_presets_expand() {
        let mut l = Layers::new();
        l.apply(kv(&[("arch", "ddqn16x16")]), Source::Flag).unwrap();
        let hp = l.dqn().unwrap();
        assert_eq!(hp.hidden, vec![16, 16]);
        assert!(hp.double_q);

        let mut l = Layers::new();
        l.apply(kv(&[("arch", "deep")]), Source::File).unwrap();
        assert_eq!(l.dqn().unwrap().hidden, vec![64, 128, 128, 64]);
        assert!(!l.dqn().unwrap().double_q);

        let mut l = Layers::new();
        assert!(l.apply(kv(&[("arch", "huge")]), Source::Flag).is_err());
        assert!(l
            .apply(kv(&[("arch", "deep"), ("hidden", "4")]), Source::Flag)
            .is_err());
    }

    #[test]
    fn shared_keys_default_per_agent() {
        let l = Layers::new();
        assert_eq!(l.tabular().unwrap().train_steps, 50_000);
        assert_eq!(l.dqn().unwrap().train_steps, 500_000);
    }

    #[test]
    fn invalid_values() {
        let mut l = Layers::new();
        l.apply(kv(&[("lanes", "three")]), Source::Flag).unwrap();
        assert!(l.env_config().unwrap_err().to_string().contains("three"));
        let mut l = Layers::new();
        l.apply(kv(&[("lanes", "1")]), Source::Flag).unwrap();
        assert!(matches!(l.env_config(), Err(Error::Config(_))));
    }
}
