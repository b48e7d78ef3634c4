//! Nested trust-alliance hierarchy.
//!
//! A [`TaTree`] holds every trust alliance (TA) of a deployment, the ASes that
//! sit at its leaves and the designated border member (TAB) of each non-root
//! TA. Level 1 is the root; larger levels are nested deeper. An AS belongs to
//! exactly one lowest-level TA, i.e. a TA whose members are ASes rather than
//! sub-TAs.
//!
//! Topology documents are line oriented:
//!
//! ```text
//! # comment
//! ta <name> level <i> parent <name|root> tab <as-name>
//! as <name> id <int> prefix <lo>-<hi>[,<lo>-<hi>...] member <yes|no> ta <name|none>
//! ```
//!
//! The root TA may omit `tab` (or write `tab none`). Declarations may appear in
//! any order.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;

use thiserror::Error;

/// Simulated address. Prefixes are inclusive integer intervals.
pub type Address = u64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct AsId(pub u32);

impl fmt::Display for AsId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "AS{}", self.0)
    }
}

/// Index of a TA inside its [`TaTree`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct TaId(pub usize);

/// Either side of a state machine: a member AS or a whole TA (represented on
/// the wire by its TAB router).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Endpoint {
    As(AsId),
    Ta(TaId),
}

/// A validating router role. Each member AS runs one ABR; each non-root TA
/// has one TABR, hosted on its TAB AS.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum RouterId {
    Abr(AsId),
    Tabr(TaId),
}

impl RouterId {
    pub fn endpoint(&self) -> Endpoint {
        match *self {
            RouterId::Abr(a) => Endpoint::As(a),
            RouterId::Tabr(t) => Endpoint::Ta(t),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Prefix {
    pub lo: Address,
    pub hi: Address,
}

impl Prefix {
    pub fn new(lo: Address, hi: Address) -> Self {
        Prefix { lo, hi }
    }

    pub fn contains(&self, addr: Address) -> bool {
        self.lo <= addr && addr <= self.hi
    }

    pub fn overlaps(&self, other: &Prefix) -> bool {
        self.lo <= other.hi && other.lo <= self.hi
    }
}

impl fmt::Display for Prefix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}-{}", self.lo, self.hi)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AsNode {
    pub id: AsId,
    pub name: String,
    pub prefixes: Vec<Prefix>,
    pub is_member: bool,
    /// Lowest-level TA; `None` for non-members.
    pub ta: Option<TaId>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TaNode {
    pub id: TaId,
    pub name: String,
    pub level: u32,
    pub parent: Option<TaId>,
    /// AS hosting this TA's border router. Always set for non-root TAs.
    pub tab: Option<AsId>,
    pub children: Vec<TaId>,
    pub member_ases: Vec<AsId>,
}

impl TaNode {
    pub fn is_lowest(&self) -> bool {
        self.children.is_empty()
    }

    /// Direct member count `p` of this TA.
    pub fn member_count(&self) -> usize {
        if self.is_lowest() {
            self.member_ases.len()
        } else {
            self.children.len()
        }
    }

    /// Direct members as SM endpoints.
    pub fn members(&self) -> Vec<Endpoint> {
        if self.is_lowest() {
            self.member_ases.iter().map(|&a| Endpoint::As(a)).collect()
        } else {
            self.children.iter().map(|&t| Endpoint::Ta(t)).collect()
        }
    }
}

/// Communication scenario between two ASes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Scenario {
    SingleTa,
    CrossTa,
    NonMember,
}

impl Scenario {
    pub fn as_str(&self) -> &'static str {
        match self {
            Scenario::SingleTa => "single-ta",
            Scenario::CrossTa => "cross-ta",
            Scenario::NonMember => "non-member",
        }
    }
}

/// Which structural bounds validation enforces.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Bounds {
    /// Height bound `1 < L < floor(log2 N) + 1` and member counts
    /// `2 <= p <= ceil(N/3)`.
    Strict,
    /// Height bound and `p >= 2` only. Used for synthetic uniform trees whose
    /// leaf alliances exceed `ceil(N/3)`.
    Structural,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TopologyError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("duplicate name `{0}`")]
    DuplicateName(String),
    #[error("duplicate AS id {0}")]
    DuplicateAsId(u32),
    #[error("prefixes of `{first}` and `{second}` overlap")]
    OverlappingPrefixes { first: String, second: String },
    #[error("TA `{0}` has no designated TAB")]
    MissingTab(String),
    #[error("TAB `{tab}` of TA `{ta}` is not a member AS inside that TA")]
    TabNotMember { ta: String, tab: String },
    #[error("height L={height} outside (1, floor(log2 {n}) + 1)")]
    LevelBoundViolation { height: u32, n: usize },
    #[error("TA `{ta}` has {count} members, allowed range is [2, {max}]")]
    MemberCountViolation { ta: String, count: usize, max: usize },
    #[error("TA `{0}` has no members")]
    EmptyTa(String),
    #[error("TA `{0}` mixes AS members and sub-TAs")]
    MixedMembership(String),
    #[error("TA `{ta}` declares level {level} but its parent is at level {parent_level}")]
    LevelMismatch { ta: String, level: u32, parent_level: u32 },
    #[error("unknown TA `{0}`")]
    UnknownTa(String),
    #[error("topology has no root TA")]
    NoRoot,
    #[error("topology has more than one root TA (`{0}` and `{1}`)")]
    MultipleRoots(String, String),
    #[error("member AS `{0}` is not assigned to a TA")]
    MemberWithoutTa(String),
    #[error("non-member AS `{0}` cannot belong to a TA")]
    NonMemberInTa(String),
    #[error("TA hierarchy contains a cycle through `{0}`")]
    Cycle(String),
    #[error("unknown AS {0}")]
    UnknownAs(AsId),
    #[error("{0} is not a SafeZone member")]
    NotAMember(AsId),
}

#[derive(Debug, Clone)]
struct RawTa {
    name: String,
    level: u32,
    parent: Option<String>,
    tab: Option<String>,
    line: usize,
}

#[derive(Debug, Clone)]
struct RawAs {
    name: String,
    id: u32,
    prefixes: Vec<Prefix>,
    is_member: bool,
    ta: Option<String>,
}

/// Unvalidated declarations, either parsed from text or generated.
#[derive(Debug, Clone, Default)]
pub struct TopologySpec {
    tas: Vec<RawTa>,
    ases: Vec<RawAs>,
}

impl TopologySpec {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn ta(&mut self, name: &str, level: u32, parent: Option<&str>, tab: Option<&str>) -> &mut Self {
        self.tas.push(RawTa {
            name: name.to_string(),
            level,
            parent: parent.map(str::to_string),
            tab: tab.map(str::to_string),
            line: 0,
        });
        self
    }

    pub fn as_node(
        &mut self,
        name: &str,
        id: u32,
        prefixes: Vec<Prefix>,
        is_member: bool,
        ta: Option<&str>,
    ) -> &mut Self {
        self.ases.push(RawAs {
            name: name.to_string(),
            id,
            prefixes,
            is_member,
            ta: ta.map(str::to_string),
        });
        self
    }

    /// Parses one line; returns `Ok(false)` when the line is not a topology
    /// declaration so that callers can layer their own line kinds on top.
    pub fn parse_line(&mut self, raw: &str, line: usize) -> Result<bool, TopologyError> {
        let text = strip_comment(raw);
        let words: Vec<&str> = text.split_whitespace().collect();
        let Some(&kind) = words.first() else {
            return Ok(true);
        };
        let err = |message: String| TopologyError::Parse { line, message };
        match kind {
            "ta" => {
                let name = words.get(1).ok_or_else(|| err("missing TA name".into()))?;
                let kv = keywords(&words[2..], &["level", "parent", "tab"]).map_err(err)?;
                let level = kv
                    .get("level")
                    .ok_or_else(|| err("missing `level`".into()))?
                    .parse::<u32>()
                    .map_err(|e| err(format!("bad level: {e}")))?;
                let parent = kv.get("parent").ok_or_else(|| err("missing `parent`".into()))?;
                let parent = (*parent != "root").then(|| parent.to_string());
                let tab = kv.get("tab").filter(|t| **t != "none").map(|t| t.to_string());
                self.tas.push(RawTa { name: name.to_string(), level, parent, tab, line });
                Ok(true)
            }
            "as" => {
                let name = words.get(1).ok_or_else(|| err("missing AS name".into()))?;
                let kv = keywords(&words[2..], &["id", "prefix", "member", "ta"]).map_err(err)?;
                let id = kv
                    .get("id")
                    .ok_or_else(|| err("missing `id`".into()))?
                    .parse::<u32>()
                    .map_err(|e| err(format!("bad id: {e}")))?;
                let prefixes = kv
                    .get("prefix")
                    .ok_or_else(|| err("missing `prefix`".into()))?
                    .split(',')
                    .map(parse_prefix)
                    .collect::<Result<Vec<_>, _>>()
                    .map_err(err)?;
                let is_member = match kv.get("member").copied() {
                    Some("yes") => true,
                    Some("no") => false,
                    Some(other) => return Err(err(format!("member must be yes|no, got `{other}`"))),
                    None => return Err(err("missing `member`".into())),
                };
                let ta = kv.get("ta").filter(|t| **t != "none").map(|t| t.to_string());
                self.ases.push(RawAs { name: name.to_string(), id, prefixes, is_member, ta });
                Ok(true)
            }
            _ => Ok(false),
        }
    }

    pub fn parse(text: &str) -> Result<Self, TopologyError> {
        let mut spec = TopologySpec::new();
        for (idx, raw) in text.lines().enumerate() {
            if !spec.parse_line(raw, idx + 1)? {
                let word = strip_comment(raw).split_whitespace().next().unwrap_or_default().to_string();
                return Err(TopologyError::Parse {
                    line: idx + 1,
                    message: format!("unknown declaration `{word}`"),
                });
            }
        }
        Ok(spec)
    }

    pub fn is_empty(&self) -> bool {
        self.tas.is_empty() && self.ases.is_empty()
    }
}

pub(crate) fn strip_comment(raw: &str) -> &str {
    raw.split('#').next().unwrap_or_default().trim()
}

fn keywords<'a>(words: &[&'a str], allowed: &[&str]) -> Result<HashMap<&'a str, &'a str>, String> {
    if !words.len().is_multiple_of(2) {
        return Err(format!("dangling keyword `{}`", words[words.len() - 1]));
    }
    let mut out = HashMap::new();
    for pair in words.chunks(2) {
        let key = pair[0];
        if !allowed.contains(&key) {
            return Err(format!("unexpected keyword `{key}`"));
        }
        if out.insert(key, pair[1]).is_some() {
            return Err(format!("keyword `{key}` repeated"));
        }
    }
    Ok(out)
}

fn parse_prefix(s: &str) -> Result<Prefix, String> {
    let (lo, hi) = s.split_once('-').ok_or_else(|| format!("bad prefix `{s}`"))?;
    let lo = lo.parse::<u64>().map_err(|e| format!("bad prefix `{s}`: {e}"))?;
    let hi = hi.parse::<u64>().map_err(|e| format!("bad prefix `{s}`: {e}"))?;
    if lo > hi {
        return Err(format!("empty prefix `{s}`"));
    }
    Ok(Prefix::new(lo, hi))
}

/// Member count `p_ij` of every TA, grouped by level (index 0 is level 1).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MembershipVector {
    pub levels: Vec<Vec<usize>>,
}

impl MembershipVector {
    /// Checks `2 <= p_ij <= ceil(n/3)` for every entry.
    pub fn within_bounds(&self, n: usize) -> bool {
        let max = n.div_ceil(3);
        self.levels.iter().flatten().all(|&p| p >= 2 && p <= max)
    }
}

/// Validated, immutable TA hierarchy.
#[derive(Debug, Clone)]
pub struct TaTree {
    tas: Vec<TaNode>,
    ases: BTreeMap<AsId, AsNode>,
    root: TaId,
    /// Sorted, disjoint `(lo, hi, owner)` intervals.
    prefix_index: Vec<(Address, Address, AsId)>,
    ta_names: HashMap<String, TaId>,
    as_names: HashMap<String, AsId>,
    n: usize,
    height: u32,
}

impl TaTree {
    /// Parses and validates a topology document with [`Bounds::Strict`].
    pub fn from_spec_text(text: &str) -> Result<Self, TopologyError> {
        Self::build(&TopologySpec::parse(text)?, Bounds::Strict)
    }

    pub fn build(spec: &TopologySpec, bounds: Bounds) -> Result<Self, TopologyError> {
        let mut ta_names = HashMap::new();
        let mut tas = Vec::with_capacity(spec.tas.len());
        for (idx, raw) in spec.tas.iter().enumerate() {
            if ta_names.insert(raw.name.clone(), TaId(idx)).is_some() {
                return Err(TopologyError::DuplicateName(raw.name.clone()));
            }
            tas.push(TaNode {
                id: TaId(idx),
                name: raw.name.clone(),
                level: raw.level,
                parent: None,
                tab: None,
                children: Vec::new(),
                member_ases: Vec::new(),
            });
        }

        let mut root = None;
        for (idx, raw) in spec.tas.iter().enumerate() {
            match &raw.parent {
                None => {
                    if let Some(TaId(prev)) = root {
                        return Err(TopologyError::MultipleRoots(
                            spec.tas[prev].name.clone(),
                            raw.name.clone(),
                        ));
                    }
                    root = Some(TaId(idx));
                }
                Some(parent) => {
                    let pid = *ta_names.get(parent).ok_or_else(|| TopologyError::Parse {
                        line: raw.line,
                        message: format!("unresolvable parent `{parent}`"),
                    })?;
                    tas[idx].parent = Some(pid);
                    tas[pid.0].children.push(TaId(idx));
                }
            }
        }
        let root = root.ok_or(TopologyError::NoRoot)?;

        let mut ases = BTreeMap::new();
        let mut as_names = HashMap::new();
        for raw in &spec.ases {
            if ta_names.contains_key(&raw.name) || as_names.contains_key(&raw.name) {
                return Err(TopologyError::DuplicateName(raw.name.clone()));
            }
            let id = AsId(raw.id);
            if ases.contains_key(&id) {
                return Err(TopologyError::DuplicateAsId(raw.id));
            }
            let ta = match (&raw.ta, raw.is_member) {
                (Some(ta), true) => {
                    Some(*ta_names.get(ta).ok_or_else(|| TopologyError::UnknownTa(ta.clone()))?)
                }
                (None, true) => return Err(TopologyError::MemberWithoutTa(raw.name.clone())),
                (Some(_), false) => return Err(TopologyError::NonMemberInTa(raw.name.clone())),
                (None, false) => None,
            };
            if let Some(t) = ta {
                tas[t.0].member_ases.push(id);
            }
            as_names.insert(raw.name.clone(), id);
            ases.insert(
                id,
                AsNode {
                    id,
                    name: raw.name.clone(),
                    prefixes: raw.prefixes.clone(),
                    is_member: raw.is_member,
                    ta,
                },
            );
        }

        // Prefix disjointness.
        let mut prefix_index: Vec<(Address, Address, AsId)> = ases
            .values()
            .flat_map(|a| a.prefixes.iter().map(move |p| (p.lo, p.hi, a.id)))
            .collect();
        prefix_index.sort();
        for w in prefix_index.windows(2) {
            if w[1].0 <= w[0].1 {
                return Err(TopologyError::OverlappingPrefixes {
                    first: ases[&w[0].2].name.clone(),
                    second: ases[&w[1].2].name.clone(),
                });
            }
        }

        // Levels and acyclicity: walk from root, every TA must be reached once.
        let mut seen = vec![false; tas.len()];
        let mut stack = vec![root];
        if tas[root.0].level != 1 {
            return Err(TopologyError::LevelMismatch {
                ta: tas[root.0].name.clone(),
                level: tas[root.0].level,
                parent_level: 0,
            });
        }
        while let Some(t) = stack.pop() {
            if seen[t.0] {
                return Err(TopologyError::Cycle(tas[t.0].name.clone()));
            }
            seen[t.0] = true;
            for &c in &tas[t.0].children {
                if tas[c.0].level != tas[t.0].level + 1 {
                    return Err(TopologyError::LevelMismatch {
                        ta: tas[c.0].name.clone(),
                        level: tas[c.0].level,
                        parent_level: tas[t.0].level,
                    });
                }
                stack.push(c);
            }
        }
        if let Some(idx) = seen.iter().position(|s| !s) {
            return Err(TopologyError::Cycle(tas[idx].name.clone()));
        }

        for ta in &tas {
            if ta.children.is_empty() && ta.member_ases.is_empty() {
                return Err(TopologyError::EmptyTa(ta.name.clone()));
            }
            if !ta.children.is_empty() && !ta.member_ases.is_empty() {
                return Err(TopologyError::MixedMembership(ta.name.clone()));
            }
        }

        let mut tree = TaTree {
            tas,
            ases,
            root,
            prefix_index,
            ta_names,
            as_names,
            n: 0,
            height: 0,
        };

        // TABs: required for non-root TAs, must be a member AS beneath the TA.
        for (idx, raw) in spec.tas.iter().enumerate() {
            let id = TaId(idx);
            match &raw.tab {
                None if id != root => return Err(TopologyError::MissingTab(raw.name.clone())),
                None => {}
                Some(tab) => {
                    let not_member = || TopologyError::TabNotMember { ta: raw.name.clone(), tab: tab.clone() };
                    let as_id = *tree.as_names.get(tab).ok_or_else(not_member)?;
                    let inside = tree.ases[&as_id]
                        .ta
                        .is_some_and(|lowest| tree.ancestors(lowest).contains(&id));
                    if !inside {
                        return Err(not_member());
                    }
                    tree.tas[idx].tab = Some(as_id);
                }
            }
        }

        tree.n = tree.ases.values().filter(|a| a.is_member).count();
        tree.height = tree.tas.iter().map(|t| t.level).max().unwrap_or(0);
        tree.validate(bounds)?;
        Ok(tree)
    }

    fn validate(&self, bounds: Bounds) -> Result<(), TopologyError> {
        let n = self.n;
        let height = self.height;
        let upper = if n >= 1 { n.ilog2() + 1 } else { 0 };
        if !(1 < height && height < upper) {
            return Err(TopologyError::LevelBoundViolation { height, n });
        }
        let max = match bounds {
            Bounds::Strict => n.div_ceil(3),
            Bounds::Structural => usize::MAX,
        };
        for ta in &self.tas {
            let count = ta.member_count();
            if count < 2 || count > max {
                return Err(TopologyError::MemberCountViolation {
                    ta: ta.name.clone(),
                    count,
                    max: max.min(n),
                });
            }
        }
        Ok(())
    }

    /// Uniform tree of height `l`: every non-lowest TA has `m` sub-TAs and the
    /// `m^(l-1)` lowest TAs split the `n` ASes as evenly as possible. Each TA's
    /// TAB is its first AS.
    pub fn uniform(n: usize, m: usize, l: u32) -> Result<Self, TopologyError> {
        let mut spec = TopologySpec::new();
        let leaves = m.checked_pow(l.saturating_sub(1)).unwrap_or(usize::MAX);
        if m < 2 || leaves.saturating_mul(2) > n {
            return Err(TopologyError::MemberCountViolation {
                ta: "uniform".into(),
                count: if leaves == 0 { 0 } else { n / leaves.max(1) },
                max: n,
            });
        }
        // Lowest TAs are numbered left to right; AS k of leaf j is placed
        // contiguously so the leftmost AS under each TA is its TAB.
        let base = n / leaves;
        let extra = n % leaves;
        let mut first_as_of_leaf = Vec::with_capacity(leaves);
        let mut next = 0usize;
        for j in 0..leaves {
            first_as_of_leaf.push(next);
            let size = base + usize::from(j < extra);
            for _ in 0..size {
                spec.as_node(
                    &format!("as{next}"),
                    next as u32,
                    vec![Prefix::new(next as u64 * 1000, next as u64 * 1000 + 999)],
                    true,
                    Some(&format!("L{j}")),
                );
                next += 1;
            }
        }
        // Build TA levels top down; a TA at level i covering leaves
        // [start, start + m^(l-i)) is named by its path.
        fn add(
            spec: &mut TopologySpec,
            level: u32,
            l: u32,
            m: usize,
            start: usize,
            parent: Option<&str>,
            first_as_of_leaf: &[usize],
        ) {
            let span = m.pow(l - level);
            let name = if level == l { format!("L{start}") } else { format!("T{level}_{start}") };
            let tab = format!("as{}", first_as_of_leaf[start]);
            let tab = parent.map(|_| tab.as_str());
            spec.ta(&name, level, parent, tab);
            if level < l {
                let child_span = span / m;
                for k in 0..m {
                    add(spec, level + 1, l, m, start + k * child_span, Some(&name), first_as_of_leaf);
                }
            }
        }
        add(&mut spec, 1, l, m, 0, None, &first_as_of_leaf);
        Self::build(&spec, Bounds::Structural)
    }

    /// Member AS count `N`.
    pub fn n(&self) -> usize {
        self.n
    }

    /// Tree height `L`.
    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn root(&self) -> TaId {
        self.root
    }

    pub fn ta(&self, id: TaId) -> &TaNode {
        &self.tas[id.0]
    }

    pub fn tas(&self) -> &[TaNode] {
        &self.tas
    }

    pub fn ases(&self) -> impl Iterator<Item = &AsNode> {
        self.ases.values()
    }

    pub fn members(&self) -> impl Iterator<Item = &AsNode> {
        self.ases.values().filter(|a| a.is_member)
    }

    pub fn as_node(&self, id: AsId) -> Result<&AsNode, TopologyError> {
        self.ases.get(&id).ok_or(TopologyError::UnknownAs(id))
    }

    pub fn as_by_name(&self, name: &str) -> Option<AsId> {
        self.as_names.get(name).copied()
    }

    pub fn ta_by_name(&self, name: &str) -> Option<TaId> {
        self.ta_names.get(name).copied()
    }

    /// Owner of an address, if any AS announces it.
    pub fn resolve(&self, addr: Address) -> Option<AsId> {
        let idx = self.prefix_index.partition_point(|&(lo, _, _)| lo <= addr);
        let (lo, hi, owner) = *self.prefix_index.get(idx.checked_sub(1)?)?;
        (lo <= addr && addr <= hi).then_some(owner)
    }

    /// `ta` and all of its ancestors, lowest first.
    pub fn ancestors(&self, ta: TaId) -> Vec<TaId> {
        let mut out = vec![ta];
        let mut cur = ta;
        while let Some(p) = self.tas[cur.0].parent {
            out.push(p);
            cur = p;
        }
        out
    }

    pub fn is_under(&self, asn: AsId, ta: TaId) -> bool {
        self.ases
            .get(&asn)
            .and_then(|a| a.ta)
            .is_some_and(|lowest| self.ancestors(lowest).contains(&ta))
    }

    fn member_lowest_ta(&self, asn: AsId) -> Result<TaId, TopologyError> {
        let node = self.as_node(asn)?;
        node.ta.ok_or(TopologyError::NotAMember(asn))
    }

    pub fn lowest_ta(&self, asn: AsId) -> Option<TaId> {
        self.ases.get(&asn).and_then(|a| a.ta)
    }

    /// Sub-TA of `ta` whose subtree contains `asn`, if `asn` is strictly below
    /// one of `ta`'s children.
    pub fn child_toward(&self, ta: TaId, asn: AsId) -> Option<TaId> {
        let lowest = self.lowest_ta(asn)?;
        let chain = self.ancestors(lowest);
        let pos = chain.iter().position(|&t| t == ta)?;
        pos.checked_sub(1).map(|i| chain[i])
    }

    /// TAs whose border router is hosted on `asn`, lowest level first.
    pub fn hosted_tabs(&self, asn: AsId) -> Vec<TaId> {
        let mut out: Vec<TaId> = self.tas.iter().filter(|t| t.tab == Some(asn)).map(|t| t.id).collect();
        out.sort_by_key(|t| std::cmp::Reverse(self.tas[t.0].level));
        out
    }

    /// Siblings of `ta` (same parent), excluding `ta` itself.
    pub fn siblings(&self, ta: TaId) -> Vec<TaId> {
        match self.tas[ta.0].parent {
            Some(p) => self.tas[p.0].children.iter().copied().filter(|&c| c != ta).collect(),
            None => Vec::new(),
        }
    }

    pub fn lowest_common_ancestor(&self, a: TaId, b: TaId) -> TaId {
        let up: BTreeSet<TaId> = self.ancestors(a).into_iter().collect();
        self.ancestors(b)
            .into_iter()
            .find(|t| up.contains(t))
            .unwrap_or(self.root)
    }

    /// TAs whose border routers a packet crosses from `src` to `dst`: upward
    /// from `src`'s lowest TA to just below the common ancestor, then downward
    /// to `dst`'s lowest TA. Empty when both share a lowest TA.
    pub fn tab_chain(&self, src: AsId, dst: AsId) -> Result<Vec<TaId>, TopologyError> {
        let a = self.member_lowest_ta(src)?;
        let b = self.member_lowest_ta(dst)?;
        if a == b {
            return Ok(Vec::new());
        }
        let apex = self.lowest_common_ancestor(a, b);
        let up: Vec<TaId> = self.ancestors(a).into_iter().take_while(|&t| t != apex).collect();
        let mut down: Vec<TaId> = self.ancestors(b).into_iter().take_while(|&t| t != apex).collect();
        down.reverse();
        Ok(up.into_iter().chain(down).collect())
    }

    pub fn classify(&self, src: AsId, dst: AsId) -> Result<Scenario, TopologyError> {
        let s = self.as_node(src)?;
        let d = self.as_node(dst)?;
        Ok(match (s.ta, d.ta) {
            (Some(a), Some(b)) if a == b => Scenario::SingleTa,
            (Some(_), Some(_)) => Scenario::CrossTa,
            _ => Scenario::NonMember,
        })
    }

    pub fn membership_vector(&self) -> MembershipVector {
        let mut levels = vec![Vec::new(); self.height as usize];
        for ta in &self.tas {
            levels[ta.level as usize - 1].push(ta.member_count());
        }
        MembershipVector { levels }
    }

    /// Member counts along the root-to-leaf chain ending at `asn`'s lowest TA,
    /// root first.
    pub fn chain_member_counts(&self, asn: AsId) -> Result<Vec<usize>, TopologyError> {
        let lowest = self.member_lowest_ta(asn)?;
        let mut chain: Vec<usize> = self.ancestors(lowest).iter().map(|t| self.tas[t.0].member_count()).collect();
        chain.reverse();
        Ok(chain)
    }

    /// Physical host of a router role.
    pub fn host(&self, router: RouterId) -> Option<AsId> {
        match router {
            RouterId::Abr(a) => Some(a),
            RouterId::Tabr(t) => self.tas.get(t.0).and_then(|ta| ta.tab),
        }
    }

    /// Display name of a router role, e.g. `abr:a1` or `tabr:CNGI`.
    pub fn router_name(&self, router: RouterId) -> String {
        match router {
            RouterId::Abr(a) => format!("abr:{}", self.ases.get(&a).map_or("?", |n| n.name.as_str())),
            RouterId::Tabr(t) => format!("tabr:{}", self.tas.get(t.0).map_or("?", |n| n.name.as_str())),
        }
    }

    /// Every router role the deployment needs: one ABR per member AS and one
    /// TABR per non-root TA.
    pub fn routers(&self) -> Vec<RouterId> {
        let mut out: Vec<RouterId> = self.members().map(|a| RouterId::Abr(a.id)).collect();
        out.extend(self.tas.iter().filter(|t| t.parent.is_some()).map(|t| RouterId::Tabr(t.id)));
        out
    }

    /// Human-readable summary used by `validate`.
    pub fn summary(&self) -> String {
        let mut s = format!("N={} L={}\n", self.n, self.height);
        let mut order: Vec<&TaNode> = self.tas.iter().collect();
        order.sort_by(|a, b| a.level.cmp(&b.level).then(a.name.cmp(&b.name)));
        for ta in order {
            let tab = ta.tab.map(|t| self.ases[&t].name.as_str()).unwrap_or("-");
            s.push_str(&format!("ta {} level {} members {} tab {}\n", ta.name, ta.level, ta.member_count(), tab));
        }
        s
    }
}

/// NGI deployment bundled with the crate: a root alliance over the
/// CNGI alliance (three national networks) and four overseas networks.
pub const NGI_TOPOLOGY: &str = include_str!("../data/ngi.topo");

/// Three-level, 30-AS deployment with two non-member ASes.
pub const THREE_LEVEL_30: &str = include_str!("../data/three_level_30.topo");
