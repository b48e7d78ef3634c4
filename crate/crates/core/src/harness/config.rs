//! Scenario files.
//!
//! A scenario file is a topology file plus three extra declarations:
//!
//! ```text
//! topology <path>                      # or inline `ta` / `as` lines
//! set <key> <value>
//! traffic <src> <dst> <count> <kind>
//! ```
//!
//! `src` and `dst` are AS names, `*` for a member drawn per packet, or `all`
//! for every ordered member pair. Kinds: `legit`, `spoof-src`, `forged-tag`,
//! `replay-tag`, `no-tag`.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use thiserror::Error;

use crate::data_plane::{DestPolicy, TabrMode};
use crate::sm_engine::{SimTime, SmParams, DEFAULT_WINDOW};
use crate::topology::{strip_comment, Bounds, TaTree, TopologyError, TopologySpec};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("line {line}: {message}")]
    Line { line: usize, message: String },
    #[error(transparent)]
    Topology(#[from] TopologyError),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum TrafficKind {
    Legit,
    /// Sender claims another member's address.
    SpoofSrc,
    /// Packet injected past the source ABR with a random shim.
    ForgedTag,
    /// Copy of a legitimately tagged packet, re-injected later.
    ReplayTag,
    /// Member source address, no shim, injected past the source ABR.
    NoTag,
}

impl TrafficKind {
    pub const ALL: [TrafficKind; 5] =
        [TrafficKind::Legit, TrafficKind::SpoofSrc, TrafficKind::ForgedTag, TrafficKind::ReplayTag, TrafficKind::NoTag];

    pub fn as_str(&self) -> &'static str {
        match self {
            TrafficKind::Legit => "legit",
            TrafficKind::SpoofSrc => "spoof-src",
            TrafficKind::ForgedTag => "forged-tag",
            TrafficKind::ReplayTag => "replay-tag",
            TrafficKind::NoTag => "no-tag",
        }
    }
}

impl fmt::Display for TrafficKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TrafficKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        TrafficKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| format!("unknown traffic kind `{s}`"))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Selector {
    Named(String),
    /// A member drawn per packet.
    Random,
    /// Every member.
    All,
}

impl Selector {
    fn parse(s: &str) -> Selector {
        match s {
            "*" => Selector::Random,
            "all" => Selector::All,
            name => Selector::Named(name.to_string()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TrafficSpec {
    pub src: Selector,
    pub dst: Selector,
    /// Packets per (src, dst) pair.
    pub count: u64,
    pub kind: TrafficKind,
    /// Source line, 0 when built in code.
    pub line: usize,
}

impl TrafficSpec {
    pub fn new(src: Selector, dst: Selector, count: u64, kind: TrafficKind) -> Self {
        TrafficSpec { src, dst, count, kind, line: 0 }
    }
}

#[derive(Debug, Clone)]
pub enum TopologySource {
    Path(PathBuf),
    Inline(TopologySpec),
}

#[derive(Debug, Clone)]
pub struct ScenarioConfig {
    pub topology: TopologySource,
    pub traffic: Vec<TrafficSpec>,
    /// First injection time.
    pub start: SimTime,
    /// Injections are spread evenly over `[start, start + duration)`.
    pub duration: SimTime,
    /// Clock offsets are drawn from `[-max_drift, max_drift]`.
    pub max_drift: u64,
    pub epoch_length: u64,
    pub grace: u64,
    pub window: u32,
    pub seed: u64,
    pub tabr_mode: TabrMode,
    pub dest_policy: DestPolicy,
    /// RES clock corrections, followed by fresh drift. `None` draws drift once.
    pub sync_interval: Option<SimTime>,
    /// Plain transit routers between consecutive validating routers.
    pub transit_hops: u32,
    pub trace: bool,
}

impl ScenarioConfig {
    pub fn new(topology: TopologySource) -> Self {
        ScenarioConfig {
            topology,
            traffic: Vec::new(),
            start: 100,
            duration: 10_000,
            max_drift: 0,
            epoch_length: 1000,
            grace: 20,
            window: DEFAULT_WINDOW,
            seed: 1,
            tabr_mode: TabrMode::default(),
            dest_policy: DestPolicy::default(),
            sync_interval: None,
            transit_hops: 1,
            trace: false,
        }
    }

    pub fn sm_params(&self) -> SmParams {
        SmParams { epoch_length: self.epoch_length, grace: self.grace, window: self.window }
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text =
            std::fs::read_to_string(path).map_err(|source| ConfigError::Io { path: path.to_path_buf(), source })?;
        Self::parse(&text, path.parent())
    }

    /// Parses a scenario. Relative `topology` paths resolve against `base`.
    pub fn parse(text: &str, base: Option<&Path>) -> Result<Self, ConfigError> {
        let mut spec = TopologySpec::new();
        let mut path: Option<PathBuf> = None;
        let mut cfg = ScenarioConfig::new(TopologySource::Inline(TopologySpec::new()));
        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            if spec.parse_line(raw, line)? {
                continue;
            }
            let err = |message: String| ConfigError::Line { line, message };
            let words: Vec<&str> = strip_comment(raw).split_whitespace().collect();
            match words.as_slice() {
                ["topology", p] => {
                    let p = PathBuf::from(p);
                    path = Some(match base {
                        Some(b) if p.is_relative() => b.join(p),
                        _ => p,
                    });
                }
                ["set", key, value] => cfg.set(key, value).map_err(err)?,
                ["traffic", src, dst, count, kind] => {
                    let count = count.parse().map_err(|_| err(format!("bad count `{count}`")))?;
                    let kind = kind.parse().map_err(err)?;
                    cfg.traffic.push(TrafficSpec {
                        src: Selector::parse(src),
                        dst: Selector::parse(dst),
                        count,
                        kind,
                        line,
                    });
                }
                [word, ..] => return Err(err(format!("unknown declaration `{word}`"))),
                [] => {}
            }
        }
        cfg.topology = match path {
            Some(_) if !spec.is_empty() => {
                return Err(ConfigError::Invalid("both a topology path and inline topology lines".into()))
            }
            Some(p) => TopologySource::Path(p),
            None if spec.is_empty() => return Err(ConfigError::Invalid("no topology".into())),
            None => TopologySource::Inline(spec),
        };
        Ok(cfg)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<(), String> {
        fn num<T: FromStr>(key: &str, v: &str) -> Result<T, String> {
            v.parse().map_err(|_| format!("bad value `{v}` for `{key}`"))
        }
        match key {
            "start" => self.start = num(key, value)?,
            "duration" => self.duration = num(key, value)?,
            "drift" => self.max_drift = num(key, value)?,
            "epoch_length" => self.epoch_length = num(key, value)?,
            "grace" => self.grace = num(key, value)?,
            "window" => self.window = num(key, value)?,
            "seed" => self.seed = num(key, value)?,
            "transit_hops" => self.transit_hops = num(key, value)?,
            "sync_interval" => {
                self.sync_interval = match value {
                    "none" => None,
                    v => Some(num(key, v)?),
                }
            }
            "tabr_mode" => {
                self.tabr_mode = match value {
                    "direct-replace" => TabrMode::DirectReplace,
                    "replace-and-validate" => TabrMode::ReplaceAndValidate,
                    v => return Err(format!("unknown tabr_mode `{v}`")),
                }
            }
            "dest_policy" => {
                self.dest_policy = match value {
                    "strict" => DestPolicy::STRICT,
                    "permissive" => DestPolicy::PERMISSIVE,
                    v => return Err(format!("unknown dest_policy `{v}`")),
                }
            }
            "trace" => {
                self.trace = match value {
                    "yes" | "true" => true,
                    "no" | "false" => false,
                    v => return Err(format!("bad value `{v}` for `trace`")),
                }
            }
            k => return Err(format!("unknown setting `{k}`")),
        }
        Ok(())
    }

    /// Checks settings that the parser cannot see on a single line.
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.epoch_length == 0 {
            return Err(ConfigError::Invalid("epoch_length must be positive".into()));
        }
        if self.window == 0 {
            return Err(ConfigError::Invalid("window must be positive".into()));
        }
        if self.duration == 0 && self.traffic.iter().any(|t| t.count > 0) {
            return Err(ConfigError::Invalid("duration must be positive".into()));
        }
        if self.sync_interval == Some(0) {
            return Err(ConfigError::Invalid("sync_interval must be positive".into()));
        }
        if self.max_drift > self.start {
            return Err(ConfigError::Invalid("drift may not exceed the start time".into()));
        }
        Ok(())
    }

    pub fn build_tree(&self) -> Result<TaTree, ConfigError> {
        match &self.topology {
            TopologySource::Inline(spec) => Ok(TaTree::build(spec, Bounds::Strict)?),
            TopologySource::Path(p) => {
                let text =
                    std::fs::read_to_string(p).map_err(|source| ConfigError::Io { path: p.clone(), source })?;
                Ok(TaTree::from_spec_text(&text)?)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::topology::THREE_LEVEL_30;

    #[test]
    fn parses_inline_scenario() {
        let text = format!(
            "{THREE_LEVEL_30}\nset seed 9\nset drift 5\nset tabr_mode direct-replace\ntraffic a1 f3 10 legit\ntraffic * all 2 no-tag\n"
        );
        let cfg = ScenarioConfig::parse(&text, None).unwrap();
        assert_eq!(cfg.seed, 9);
        assert_eq!(cfg.max_drift, 5);
        assert_eq!(cfg.tabr_mode, TabrMode::DirectReplace);
        assert_eq!(cfg.traffic.len(), 2);
        assert_eq!(cfg.traffic[1].src, Selector::Random);
        assert_eq!(cfg.traffic[1].dst, Selector::All);
        assert_eq!(cfg.build_tree().unwrap().n(), 30);
    }

    #[test]
    fn errors_carry_line_numbers() {
        let text = format!("{THREE_LEVEL_30}\nset colour blue\n");
        let n = text.lines().count();
        match ScenarioConfig::parse(&text, None) {
            Err(ConfigError::Line { line, .. }) => assert_eq!(line, n),
            other => panic!("{other:?}"),
        }
        let bad = ScenarioConfig::parse("ta R level 1 parent root\ntraffic a b x legit\n", None);
        assert!(matches!(bad, Err(ConfigError::Line { line: 2, .. })));
        assert!(matches!(ScenarioConfig::parse("set seed 1\n", None), Err(ConfigError::Invalid(_))));
    }

    #[test]
    fn path_topology_resolves_relative() {
        let cfg = ScenarioConfig::parse("topology net.topo\n", Some(Path::new("/tmp/x"))).unwrap();
        match cfg.topology {
            TopologySource::Path(p) => assert_eq!(p, PathBuf::from("/tmp/x/net.topo")),
            other => panic!("{other:?}"),
        }
    }
}
